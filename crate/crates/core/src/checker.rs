//! Numerical verification of the sufficient conditions (F1)–(F9) for a scenario.

use std::collections::HashSet;
use std::fmt;

use num_traits::{One, Signed, Zero};
use serde::Serialize;

use crate::driving::{Anchor, Base, DrivingSystem, FiberState};
use crate::error::{invalid, Result};
use crate::intervals::IntervalSet;
use crate::maps::PiecewiseLinearMap;
use crate::scalar::{Rational, Scalar};
use crate::targets::{CenterRule, Scaling, TargetFamily};

/// Largest `N'` tried for (F8).
pub const MAX_N_PRIME: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Pass,
    Fail,
    NotApplicable,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Pass => "pass",
            Status::Fail => "fail",
            Status::NotApplicable => "n/a",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionResult {
    pub id: &'static str,
    pub status: Status,
    pub witness: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub conditions: Vec<ConditionResult>,
    pub sup_slope: f64,
    pub inf_slope: f64,
    /// `essinf inf L_ω 1`.
    pub inf_transfer_one: f64,
    pub max_preimages: usize,
    /// Uniform bound 𝔥 on target components.
    pub components: usize,
    pub n_prime: Option<usize>,
    pub f4_covering_time: Option<usize>,
    pub f9_covering_time: Option<usize>,
    /// `(n, esssup Leb(H_{ω,n}))`.
    pub measure_decay: Vec<(u128, f64)>,
}

impl AssumptionReport {
    pub fn get(&self, id: &str) -> Option<&ConditionResult> {
        self.conditions.iter().find(|c| c.id == id)
    }

    /// True when no condition failed.
    pub fn all_pass(&self) -> bool {
        self.conditions.iter().all(|c| c.status != Status::Fail)
    }

    pub fn failures(&self) -> Vec<&ConditionResult> {
        self.conditions.iter().filter(|c| c.status == Status::Fail).collect()
    }
}

impl fmt::Display for AssumptionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.conditions {
            writeln!(f, "{:<8} {:<5} {}", c.id, c.status, c.witness)?;
        }
        Ok(())
    }
}

/// Options for [`check_all`].
#[derive(Debug, Clone, PartialEq)]
pub struct CheckConfig {
    /// `n` values used for the target conditions.
    pub n_grid: Vec<u128>,
    /// Fibers sampled for drivings with infinitely many maps.
    pub fiber_samples: usize,
    /// Longest covering time searched.
    pub cover_cap: usize,
    /// Largest frontier of distinct image sets kept while covering.
    pub frontier_cap: usize,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            n_grid: vec![10, 100, 1_000, 10_000, 100_000, 1_000_000],
            fiber_samples: 16,
            cover_cap: 64,
            frontier_cap: 100_000,
        }
    }
}

type Map = PiecewiseLinearMap<Rational>;

/// How fibers follow each other.
#[derive(Debug, Clone)]
pub enum Branching {
    /// Any map of the list may follow any other (i.i.d. or a single map).
    Any(Vec<Map>),
    /// Concrete map sequences along sampled orbits.
    Orbits(Vec<Vec<Map>>),
}

impl Branching {
    pub fn from_driving(d: &DrivingSystem, samples: usize, len: usize) -> Result<Self> {
        Ok(match d.base() {
            Base::Rotation { .. } => Branching::Orbits(
                d.sample_fibers(samples, 0)
                    .into_iter()
                    .map(|(a, _)| (0..len as i64).map(|j| d.fiber_at::<Rational>(&a, j).map(|f| f.1)).collect())
                    .collect::<Result<_>>()?,
            ),
            _ => Branching::Any(d.map_set(1)?),
        })
    }

    fn maps(&self) -> Vec<&Map> {
        match self {
            Branching::Any(m) => m.iter().collect(),
            Branching::Orbits(o) => o.iter().flatten().collect(),
        }
    }
}

fn key(set: &IntervalSet<Rational>) -> Vec<(Rational, Rational)> {
    set.intervals().to_vec()
}

/// Steps until every image of `j` under the allowed compositions is `[0,1]`.
pub fn covering_time(b: &Branching, j: &IntervalSet<Rational>, cap: usize, frontier_cap: usize) -> Option<usize> {
    match b {
        Branching::Any(maps) => covering_any(maps, vec![j.clone()], cap, frontier_cap),
        Branching::Orbits(orbits) => {
            let mut worst = 0;
            for orbit in orbits {
                worst = worst.max(covering_along(&orbit[..], j, cap)?);
            }
            Some(worst)
        }
    }
}

fn covering_any(maps: &[Map], start: Vec<IntervalSet<Rational>>, cap: usize, frontier_cap: usize) -> Option<usize> {
    let mut frontier: Vec<IntervalSet<Rational>> = start.into_iter().filter(|s| !s.is_unit()).collect();
    let mut k = 0;
    while !frontier.is_empty() {
        if k >= cap {
            return None;
        }
        let mut seen = HashSet::new();
        let mut next = Vec::new();
        for set in &frontier {
            for m in maps {
                let img = m.image(set);
                if !img.is_unit() && seen.insert(key(&img)) {
                    next.push(img);
                }
            }
        }
        if next.len() > frontier_cap {
            return None;
        }
        frontier = next;
        k += 1;
    }
    Some(k)
}

fn covering_along(orbit: &[Map], j: &IntervalSet<Rational>, cap: usize) -> Option<usize> {
    let mut set = j.clone();
    for k in 0..=cap.min(orbit.len()) {
        if set.is_unit() {
            return Some(k);
        }
        if k == orbit.len() {
            break;
        }
        set = orbit[k].image(&set);
    }
    None
}

/// Images `T^k(Z)` of the monotonicity cells `Z` of `T^k`, deduplicated.
fn cell_images(maps_at: &[Vec<&Map>], k: usize, frontier_cap: usize) -> Option<Vec<IntervalSet<Rational>>> {
    let mut frontier = vec![IntervalSet::unit()];
    for step in maps_at.iter().take(k) {
        let mut seen = HashSet::new();
        let mut next = Vec::new();
        for set in &frontier {
            for m in step {
                for b in m.branches() {
                    let piece = set.intersect_interval(&b.lo, &b.hi);
                    if piece.is_empty() {
                        continue;
                    }
                    let img = m.image(&piece);
                    if seen.insert(key(&img)) {
                        next.push(img);
                    }
                }
            }
        }
        if next.len() > frontier_cap {
            return None;
        }
        frontier = next;
    }
    Some(frontier)
}

/// `check_simple_point`: iterates `x₀` exactly under `maps[j mod len]` and
/// reports the first step at which the orbit lands on a breakpoint.
pub fn check_simple_point(maps: &[Map], x0: &Rational, horizon: usize) -> Result<(bool, Option<usize>)> {
    if maps.is_empty() || horizon == 0 {
        return Err(invalid("horizon", "need at least one map and a positive horizon"));
    }
    let mut x = x0.clone();
    for j in 0..horizon {
        let m = &maps[j % maps.len()];
        if m.breakpoints().contains(&x) {
            return Ok((false, Some(j)));
        }
        x = m.eval(&x);
    }
    Ok((true, None))
}

/// Left side of (F8) at `N'`: `(9 + 12𝔥N') γ_min^{-N'}`.
pub fn f8_lhs(h: usize, n_prime: usize, inf_slope: &Rational) -> Rational {
    let coeff = Rational::from_i64(9 + 12 * (h * n_prime) as i64);
    coeff / num_traits::pow(inf_slope.clone(), n_prime)
}

/// Right side of (F8) at `N'`: a lower bound `(inf L1)^{N'}` for `inf L^{N'} 1`.
pub fn f8_rhs(inf_l1: &Rational, n_prime: usize) -> Rational {
    num_traits::pow(inf_l1.clone(), n_prime)
}

/// Smallest `N' ≤ MAX_N_PRIME` satisfying (F8).
pub fn minimal_n_prime(h: usize, inf_slope: &Rational, inf_l1: &Rational) -> Option<usize> {
    (1..=MAX_N_PRIME).find(|&n| f8_lhs(h, n, inf_slope) < f8_rhs(inf_l1, n))
}

/// `1 ≤ esssup t_ω/t_{σ^{-1}ω} < essinf |T'_ω(x₀)|` for targets centered at a
/// common fixed point `x₀`; not applicable otherwise.
pub fn scaling_variation_guard(d: &DrivingSystem, f: &TargetFamily) -> Result<ConditionResult> {
    let na = |why: &str| ConditionResult {
        id: "scaling",
        status: Status::NotApplicable,
        witness: why.to_string(),
    };
    let [component] = f.components() else {
        return Ok(na("more than one target component"));
    };
    let CenterRule::Fixed(x0) = &component.center else {
        return Ok(na("fiber-dependent center"));
    };
    let maps = d.map_set(16)?;
    if maps.iter().any(|m| &m.eval(x0) != x0) {
        return Ok(na("center is not a common fixed point"));
    }
    let ratio = match f.scaling() {
        Scaling::Constant(_) => Rational::one(),
        Scaling::PerSymbol(ts) => {
            let max = ts.iter().cloned().fold(Rational::zero(), Scalar::max_of);
            let min = ts.iter().cloned().fold(max.clone(), Scalar::min_of);
            max / min
        }
    };
    let slope = maps
        .iter()
        .map(|m| m.branches()[m.branch_index(x0)].slope.abs())
        .reduce(Scalar::min_of)
        .unwrap_or_else(Rational::one);
    let ok = ratio >= Rational::one() && ratio < slope;
    Ok(ConditionResult {
        id: "scaling",
        status: if ok { Status::Pass } else { Status::Fail },
        witness: format!(
            "esssup t_ω/t_σ⁻¹ω = {:.6}, essinf |T'(x₀)| = {:.6}",
            Scalar::to_f64(&ratio),
            Scalar::to_f64(&slope)
        ),
    })
}

fn states(d: &DrivingSystem, samples: usize) -> Vec<FiberState> {
    match d.base() {
        Base::Fixed => vec![FiberState::Fixed],
        Base::Iid { .. } => (0..d.alphabet_size()).map(FiberState::Symbol).collect(),
        Base::Rotation { .. } => d
            .sample_fibers(samples, 0)
            .into_iter()
            .map(|(a, _): (Anchor, f64)| d.state_at(&a, 0))
            .collect(),
    }
}

fn result(id: &'static str, ok: bool, witness: String) -> ConditionResult {
    ConditionResult {
        id,
        status: if ok { Status::Pass } else { Status::Fail },
        witness,
    }
}

/// `check_all`: evaluates (F1)–(F9) and the scaling-variation guard.
pub fn check_all(d: &DrivingSystem, f: &TargetFamily, cfg: &CheckConfig) -> Result<AssumptionReport> {
    let branching = Branching::from_driving(d, cfg.fiber_samples, cfg.cover_cap + MAX_N_PRIME + 1)?;
    let maps = branching.maps();
    let sup_slope = maps.iter().map(|m| m.max_abs_slope()).reduce(Scalar::max_of).unwrap();
    let inf_slope = maps.iter().map(|m| m.min_abs_slope()).reduce(Scalar::min_of).unwrap();
    let max_preimages = maps.iter().map(|m| m.max_preimage_count()).max().unwrap_or(0);
    let inf_l1 = maps.iter().map(|m| m.transfer_of_one_inf()).reduce(Scalar::min_of).unwrap();
    let mut conditions = Vec::new();

    conditions.push(result(
        "F1",
        sup_slope.is_positive() && max_preimages > 0,
        format!(
            "esssup |T'| = {:.6}, esssup d(T) = {max_preimages}",
            Scalar::to_f64(&sup_slope)
        ),
    ));
    let g_sup = Rational::one() / inf_slope.clone();
    let g_inf = Rational::one() / sup_slope.clone();
    conditions.push(result(
        "F2",
        g_sup < Rational::from_i64(1),
        format!("esssup ‖g‖∞ = {:.6}", Scalar::to_f64(&g_sup)),
    ));
    conditions.push(result(
        "F3",
        g_inf.is_positive(),
        format!("essinf inf g = {:.6}", Scalar::to_f64(&g_inf)),
    ));

    let mut f4_worst: Option<usize> = Some(0);
    let mut f4_cells = 0usize;
    for m in &maps {
        for b in m.branches() {
            f4_cells += 1;
            let k = covering_time(
                &branching,
                &IntervalSet::interval(b.lo.clone(), b.hi.clone()),
                cfg.cover_cap,
                cfg.frontier_cap,
            );
            f4_worst = match (f4_worst, k) {
                (Some(a), Some(b)) => Some(a.max(b)),
                _ => None,
            };
        }
        if matches!(branching, Branching::Orbits(_)) {
            break;
        }
    }
    conditions.push(result(
        "F4",
        f4_worst.is_some(),
        match f4_worst {
            Some(k) => format!("max k(J) = {k} over {f4_cells} monotonicity cells"),
            None => format!("no covering within {} steps", cfg.cover_cap),
        },
    ));

    let fibers = states(d, cfg.fiber_samples);
    let mut h = 1usize;
    let mut decay = Vec::new();
    let mut f7_from: Option<u128> = None;
    let mut f7_broken_after = false;
    for &n in &cfg.n_grid {
        let mut sup_leb = 0.0f64;
        let mut f7_ok = true;
        let mut any_target = true;
        for state in &fibers {
            let target = match f.target_for::<Rational>(state, n) {
                Ok(t) => t.set,
                Err(_) => {
                    any_target = false;
                    continue;
                }
            };
            h = h.max(target.component_count());
            sup_leb = sup_leb.max(Scalar::to_f64(&target.length()));
            let map = d.map_for::<Rational>(state)?;
            if !map.image(&target.complement()).is_unit() {
                f7_ok = false;
            }
        }
        if any_target {
            decay.push((n, sup_leb));
            if f7_ok {
                f7_from.get_or_insert(n);
            } else if f7_from.is_some() {
                f7_broken_after = true;
            }
        }
    }
    conditions.push(result("F5", true, format!("𝔥 = {h}")));
    let t_max = Scalar::to_f64(&f.t_max());
    let decreasing = decay.windows(2).all(|w| w[1].1 <= w[0].1);
    let last_ok = decay
        .last()
        .is_some_and(|(n, leb)| *leb <= t_max / *n as f64 + 2.0 * h as f64 * n_slack(f) + 1e-15);
    conditions.push(result(
        "F6",
        decreasing && last_ok,
        format!(
            "esssup Leb(H) = {}",
            decay
                .iter()
                .map(|(n, l)| format!("{l:.3e}@n={n}"))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    ));
    conditions.push(result(
        "F7",
        f7_from.is_some() && !f7_broken_after,
        match f7_from {
            Some(n) => format!("T(Hᶜ) = [0,1] for all grid n ≥ {n}"),
            None => "T(Hᶜ) ≠ [0,1] on the whole grid".into(),
        },
    ));

    let n_prime = minimal_n_prime(h, &inf_slope, &inf_l1);
    conditions.push(result(
        "F8",
        n_prime.is_some(),
        match n_prime {
            Some(n) => format!(
                "N' = {n}: (9+12·{h}·{n})·{:.6}^-{n} = {:.6} < {:.6}",
                Scalar::to_f64(&inf_slope),
                Scalar::to_f64(&f8_lhs(h, n, &inf_slope)),
                Scalar::to_f64(&f8_rhs(&inf_l1, n))
            ),
            None => format!("no N' ≤ {MAX_N_PRIME}"),
        },
    ));

    let f9 = match n_prime {
        None => None,
        Some(np) => match &branching {
            Branching::Any(ms) => {
                let steps: Vec<Vec<&Map>> = (0..np).map(|_| ms.iter().collect()).collect();
                cell_images(&steps, np, cfg.frontier_cap)
                    .and_then(|imgs| covering_any(ms, imgs, cfg.cover_cap, cfg.frontier_cap))
                    .map(|extra| np + extra)
            }
            Branching::Orbits(orbits) => {
                let mut worst = Some(0);
                for orbit in orbits {
                    let steps: Vec<Vec<&Map>> = orbit.iter().take(np).map(|m| vec![m]).collect();
                    let k = cell_images(&steps, np, cfg.frontier_cap).and_then(|imgs| {
                        imgs.iter()
                            .map(|i| covering_along(&orbit[np..], i, cfg.cover_cap))
                            .try_fold(0, |acc, k| k.map(|k| acc.max(k)))
                    });
                    worst = match (worst, k) {
                        (Some(a), Some(b)) => Some(a.max(np + b)),
                        _ => None,
                    };
                }
                worst
            }
        },
    };
    conditions.push(match (n_prime, f9) {
        (None, _) => ConditionResult {
            id: "F9",
            status: Status::NotApplicable,
            witness: "no N' from (F8)".into(),
        },
        (Some(np), Some(k)) => result("F9", true, format!("k_o({np}) = {k}")),
        (Some(np), None) => result("F9", false, format!("cells of T^{np} not covered within the cap")),
    });
    conditions.push(scaling_variation_guard(d, f)?);

    Ok(AssumptionReport {
        conditions,
        sup_slope: Scalar::to_f64(&sup_slope),
        inf_slope: Scalar::to_f64(&inf_slope),
        inf_transfer_one: Scalar::to_f64(&inf_l1),
        max_preimages,
        components: h,
        n_prime,
        f4_covering_time: f4_worst,
        f9_covering_time: f9,
        measure_decay: decay,
    })
}

fn n_slack(f: &TargetFamily) -> f64 {
    f.snap_bins().map_or(0.0, |b| 1.0 / b as f64)
}
