//! The extremal-index function `θ_ω(s)`.
//!
//! Cluster quantities `β^{(k)}(ℓ)` are the conditional probabilities, given a
//! start in the target, of being back in the target after `k+1` steps with
//! exactly `ℓ` intermediate visits. They are computed here exactly by pushing
//! interval fragments through the fiber maps, and they determine
//! `θ(s) = 1 − (1 − e^{is}) Σ_k Σ_ℓ e^{iℓs} β^{(k)}(ℓ)`.

use std::cmp::Ordering;
use std::f64::consts::PI;

use log::warn;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use num_traits::Signed;
use rayon::prelude::*;
use serde::Serialize;

use crate::driving::{Anchor, DrivingSystem};
use crate::error::{invalid, Error, Result};
use crate::intervals::IntervalSet;
use crate::maps::PiecewiseLinearMap;
use crate::scalar::{Rational, Scalar};
use crate::targets::TargetFamily;

/// Abort threshold for fragment propagation.
pub const FRAGMENT_LIMIT: usize = 10_000_000;

/// Largest lag used for series truncation.
pub const MAX_LAG: usize = 60;

/// How a [`BetaTable`] was obtained.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum BetaLevel {
    /// Exact values at a finite `n`.
    Finite(u128),
    /// Values that stopped changing between successive `n` on the grid.
    Limit { n: u128 },
    /// Richardson extrapolation in `1/n` from the last two grid points.
    Extrapolated { n: u128 },
    /// Supplied directly (closed forms, tests).
    Given,
}

impl BetaLevel {
    pub fn label(&self) -> String {
        match self {
            BetaLevel::Finite(n) => n.to_string(),
            BetaLevel::Limit { .. } => "limit".into(),
            BetaLevel::Extrapolated { .. } => "extrapolated".into(),
            BetaLevel::Given => "given".into(),
        }
    }
}

/// `β^{(k)}(ℓ)` for `0 ≤ ℓ ≤ k ≤ K`.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaTable {
    pub values: Vec<Vec<f64>>,
    pub exact: Option<Vec<Vec<Rational>>>,
    pub level: BetaLevel,
    /// Bound on `Σ_{k>K} Σ_ℓ β^{(k)}(ℓ)`.
    pub tail_bound: f64,
}

impl BetaTable {
    pub fn from_values(values: Vec<Vec<f64>>) -> Self {
        Self {
            values,
            exact: None,
            level: BetaLevel::Given,
            tail_bound: 0.0,
        }
    }

    pub fn k_max(&self) -> usize {
        self.values.len().saturating_sub(1)
    }

    /// `Σ = Σ_k Σ_ℓ β^{(k)}(ℓ)`.
    pub fn sigma(&self) -> f64 {
        self.values.iter().flatten().sum()
    }

    /// `Σ_ℓ β^{(k)}(ℓ)` for each `k`.
    pub fn row_sums(&self) -> Vec<f64> {
        self.values.iter().map(|r| r.iter().sum()).collect()
    }

    /// Cluster weights `w_ℓ = Σ_k β^{(k)}(ℓ)`.
    pub fn weights(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.values.len()];
        for row in &self.values {
            for (l, b) in row.iter().enumerate() {
                w[l] += b;
            }
        }
        w
    }
}

#[derive(Debug, Clone)]
struct Fragment<S> {
    lo: S,
    hi: S,
    density: S,
    hits: usize,
}

fn push_through<S: Scalar>(map: &PiecewiseLinearMap<S>, frags: Vec<Fragment<S>>) -> Vec<Fragment<S>> {
    let branches = map.branches();
    let mut out = Vec::with_capacity(frags.len() + 4);
    for f in frags {
        let mut i = map.branch_index(&f.lo);
        while i < branches.len() && branches[i].lo < f.hi {
            let b = &branches[i];
            let lo = S::max_of(f.lo.clone(), b.lo.clone());
            let hi = S::min_of(f.hi.clone(), b.hi.clone());
            if lo < hi {
                let (a, c) = (b.apply(&lo), b.apply(&hi));
                let (a, c) = if a <= c { (a, c) } else { (c, a) };
                out.push(Fragment {
                    lo: a,
                    hi: c,
                    density: f.density.clone() / b.slope.abs(),
                    hits: f.hits,
                });
            }
            i += 1;
        }
    }
    out
}

fn split_at_target<S: Scalar>(frags: Vec<Fragment<S>>, target: &IntervalSet<S>) -> Vec<Fragment<S>> {
    let two = S::from_i64(2);
    let mut out = Vec::with_capacity(frags.len() + 4);
    for f in frags {
        let mut cuts = vec![f.lo.clone()];
        for p in target.endpoints() {
            if f.lo < p && p < f.hi {
                cuts.push(p);
            }
        }
        cuts.push(f.hi.clone());
        for w in cuts.windows(2) {
            let mid = (w[0].clone() + w[1].clone()) / two.clone();
            let inside = target.contains(&mid);
            out.push(Fragment {
                lo: w[0].clone(),
                hi: w[1].clone(),
                density: f.density.clone(),
                hits: f.hits + usize::from(inside),
            });
        }
    }
    out
}

fn merge<S: Scalar>(mut frags: Vec<Fragment<S>>) -> Vec<Fragment<S>> {
    frags.sort_by(|a, b| {
        a.lo.partial_cmp(&b.lo)
            .unwrap_or(Ordering::Equal)
            .then(a.hi.partial_cmp(&b.hi).unwrap_or(Ordering::Equal))
            .then(a.hits.cmp(&b.hits))
    });
    let mut out: Vec<Fragment<S>> = Vec::with_capacity(frags.len());
    for f in frags {
        if let Some(last) = out.last_mut() {
            if last.lo == f.lo && last.hi == f.hi && last.hits == f.hits {
                last.density = last.density.clone() + f.density;
                continue;
            }
        }
        out.push(f);
    }
    out
}

fn measure_by_hits<S: Scalar>(frags: &[Fragment<S>], target: &IntervalSet<S>, len: usize) -> Vec<S> {
    let mut acc = vec![S::zero(); len];
    for f in frags {
        let part = target.intersect_interval(&f.lo, &f.hi).length();
        if part > S::zero() {
            acc[f.hits] = acc[f.hits].clone() + part * f.density.clone();
        }
    }
    acc
}

/// Pushes Lebesgue measure on `start` through `steps`; entry `j` of the result
/// holds, by intermediate hit count, the mass inside `steps[j].1` after `j+1` maps.
fn propagate<S: Scalar>(
    start: &IntervalSet<S>,
    steps: &[(PiecewiseLinearMap<S>, IntervalSet<S>)],
    record_all: bool,
) -> Result<Vec<Vec<S>>> {
    let mut frags: Vec<Fragment<S>> = start
        .intervals()
        .iter()
        .map(|(a, b)| Fragment {
            lo: a.clone(),
            hi: b.clone(),
            density: S::one(),
            hits: 0,
        })
        .collect();
    let mut records = Vec::new();
    for (j, (map, target)) in steps.iter().enumerate() {
        frags = push_through(map, frags);
        let last = j + 1 == steps.len();
        if record_all || last {
            records.push(measure_by_hits(&frags, target, j + 1));
        }
        if !last {
            frags = merge(split_at_target(frags, target));
        }
        if frags.len() > FRAGMENT_LIMIT {
            return Err(Error::FragmentExplosion {
                count: frags.len(),
                limit: FRAGMENT_LIMIT,
            });
        }
    }
    Ok(records)
}

/// Smallest lag `K` with `γ^{-(K+1)}/(1-1/γ) < 1e-10`, capped at [`MAX_LAG`].
pub fn series_lag(gamma_min: f64) -> usize {
    let mut k = 0;
    while k < MAX_LAG && gamma_min.powi(-(k as i32 + 1)) / (1.0 - 1.0 / gamma_min) >= 1e-10 {
        k += 1;
    }
    k
}

/// `Σ_{k>K} γ^{-(k+1)}`: the geometric tail bound with unit constant.
pub fn geometric_tail(gamma_min: f64, k_max: usize) -> f64 {
    gamma_min.powi(-(k_max as i32 + 2)) / (1.0 - 1.0 / gamma_min)
}

/// Smallest and largest expansion over the maps of the system.
pub fn slope_range(d: &DrivingSystem) -> Result<(f64, f64)> {
    let maps = d.map_set(64)?;
    let lo = maps.iter().map(|m| Scalar::to_f64(&m.min_abs_slope())).fold(f64::INFINITY, f64::min);
    let hi = maps.iter().map(|m| Scalar::to_f64(&m.max_abs_slope())).fold(0.0, f64::max);
    Ok((lo, hi))
}

/// Exact `β^{(k)}_{ω,n}(ℓ)` for `k ≤ k_max` in arithmetic `S`.
pub fn beta_exact_in<S: Scalar>(
    d: &DrivingSystem,
    f: &TargetFamily,
    anchor: &Anchor,
    n: u128,
    k_max: usize,
) -> Result<(Vec<Vec<S>>, S)> {
    let h_end = f.target_at::<S>(d, anchor, 0, n)?.set;
    let denom = h_end.length();
    if d.is_fixed() {
        let map = d.map_for::<S>(&d.state_at(anchor, 0))?;
        let steps: Vec<_> = (0..=k_max).map(|_| (map.clone(), h_end.clone())).collect();
        if denom == S::zero() {
            return Ok(((0..=k_max).map(|k| vec![S::zero(); k + 1]).collect(), denom));
        }
        let rec = propagate(&h_end, &steps, true)?;
        let rows = rec
            .into_iter()
            .map(|row| row.into_iter().map(|m| m / denom.clone()).collect())
            .collect();
        return Ok((rows, denom));
    }
    let rows = (0..=k_max)
        .into_par_iter()
        .map(|k| -> Result<Vec<S>> {
            if denom == S::zero() {
                return Ok(vec![S::zero(); k + 1]);
            }
            let start_j = -(k as i64 + 1);
            let start = f.target_at::<S>(d, anchor, start_j, n)?.set;
            let steps = (0..=k as i64)
                .map(|i| {
                    let map = d.map_for::<S>(&d.state_at(anchor, start_j + i))?;
                    let target = f.target_at::<S>(d, anchor, start_j + i + 1, n)?.set;
                    Ok((map, target))
                })
                .collect::<Result<Vec<_>>>()?;
            let rec = propagate(&start, &steps, false)?;
            Ok(rec
                .into_iter()
                .last()
                .unwrap_or_default()
                .into_iter()
                .map(|m| m / denom.clone())
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((rows, denom))
}

/// `beta_exact`: exact rational cluster table at a finite `n`.
pub fn beta_exact(d: &DrivingSystem, f: &TargetFamily, anchor: &Anchor, n: u128, k_max: usize) -> Result<BetaTable> {
    let (rows, _) = beta_exact_in::<Rational>(d, f, anchor, n, k_max)?;
    let (gmin, _) = slope_range(d)?;
    Ok(BetaTable {
        values: rows.iter().map(|r| r.iter().map(Scalar::to_f64).collect()).collect(),
        exact: Some(rows),
        level: BetaLevel::Finite(n),
        tail_bound: geometric_tail(gmin, k_max),
    })
}

/// Limits `β^{(k)}_{ω,0}(ℓ)` as `n → ∞`.
///
/// Exact tables are computed on the grid `n = 10^e, 10^{e+3}, …` starting where
/// `t·γ_max^{K+1}/n` is small; the first table that repeats exactly is the limit.
/// If none repeats before `10^36`, the last two are extrapolated linearly in `1/n`.
pub fn beta_limit(d: &DrivingSystem, f: &TargetFamily, anchor: &Anchor, k_max: usize) -> Result<BetaTable> {
    let (gmin, gmax) = slope_range(d)?;
    let t_max = Scalar::to_f64(&f.t_max()).max(1e-300);
    let spread = (t_max.log10() + (k_max as f64 + 1.0) * gmax.log10()).max(0.0);
    let mut e = (spread.ceil() as u32 + 3).max(2);
    let mut prev: Option<(u128, Vec<Vec<Rational>>)> = None;
    while e <= 36 {
        let n = 10u128.pow(e);
        let (rows, _) = beta_exact_in::<Rational>(d, f, anchor, n, k_max)?;
        if let Some((n_prev, prev_rows)) = &prev {
            if *prev_rows == rows {
                return Ok(BetaTable {
                    values: rows.iter().map(|r| r.iter().map(Scalar::to_f64).collect()).collect(),
                    exact: Some(rows),
                    level: BetaLevel::Limit { n: *n_prev },
                    tail_bound: geometric_tail(gmin, k_max),
                });
            }
        }
        prev = Some((n, rows));
        e += 3;
    }
    let (n2, rows2) = prev.expect("at least one grid point");
    let n1 = n2 / 1000;
    let (rows1, _) = beta_exact_in::<Rational>(d, f, anchor, n1, k_max)?;
    let (a, b) = (n1 as f64, n2 as f64);
    let values = rows1
        .iter()
        .zip(&rows2)
        .map(|(r1, r2)| {
            r1.iter()
                .zip(r2)
                .map(|(x1, x2)| (b * Scalar::to_f64(x2) - a * Scalar::to_f64(x1)) / (b - a))
                .collect()
        })
        .collect();
    warn!("cluster table did not stabilize up to n = 1e36; extrapolating");
    Ok(BetaTable {
        values,
        exact: None,
        level: BetaLevel::Extrapolated { n: n2 },
        tail_bound: geometric_tail(gmin, k_max),
    })
}

/// `q̂^{(k)}(s) = (1 − e^{is}) Σ_ℓ e^{iℓs} β^{(k)}(ℓ)` for every `k` in the table.
pub fn qhat_from_beta(table: &BetaTable, s: f64) -> Vec<Complex64> {
    table.values.iter().map(|row| qhat_row(row, s)).collect()
}

fn qhat_row(row: &[f64], s: f64) -> Complex64 {
    let z = Complex64::from_polar(1.0, s);
    let mut acc = Complex64::new(0.0, 0.0);
    let mut zl = Complex64::new(1.0, 0.0);
    for b in row {
        acc += zl * b;
        zl *= z;
    }
    (Complex64::new(1.0, 0.0) - z) * acc
}

/// Result of inverting `q̂ = D_k M_k β`.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaRecovery {
    pub beta: Vec<f64>,
    pub condition_number: f64,
    pub max_imaginary: f64,
}

/// Condition number above which the inversion is refused.
pub const CONDITION_LIMIT: f64 = 1e12;

fn recovery_matrix(k: usize, s_grid: &[f64]) -> DMatrix<Complex64> {
    DMatrix::from_fn(s_grid.len(), k + 1, |row, l| {
        let s = s_grid[row];
        (Complex64::new(1.0, 0.0) - Complex64::from_polar(1.0, s)) * Complex64::from_polar(1.0, s * l as f64)
    })
}

fn condition(m: &DMatrix<Complex64>) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

fn finish_recovery(x: DVector<Complex64>, cond: f64) -> BetaRecovery {
    let max_imaginary = x.iter().map(|c| c.im.abs()).fold(0.0, f64::max);
    if max_imaginary > 1e-8 {
        warn!("discarding imaginary parts up to {max_imaginary:.3e} in recovered cluster values");
    }
    BetaRecovery {
        beta: x.iter().map(|c| c.re).collect(),
        condition_number: cond,
        max_imaginary,
    }
}

/// Recovers `β^{(k)}(·)` from `q̂^{(k)}(s)` at `s = 1, …, k+1`.
pub fn beta_from_qhat(qhat: &[Complex64]) -> Result<BetaRecovery> {
    if qhat.is_empty() {
        return Err(invalid("qhat", "at least one value is required"));
    }
    let k = qhat.len() - 1;
    if k > 10 {
        return Err(invalid("qhat", "lags above 10 need the least-squares variant"));
    }
    let s_grid: Vec<f64> = (1..=k + 1).map(|j| j as f64).collect();
    let a = recovery_matrix(k, &s_grid);
    let cond = condition(&a);
    if !(cond < CONDITION_LIMIT) {
        return Err(Error::IllConditioned {
            cond,
            limit: CONDITION_LIMIT,
        });
    }
    let rhs = DVector::from_column_slice(qhat);
    let x = a.lu().solve(&rhs).ok_or(Error::IllConditioned {
        cond: f64::INFINITY,
        limit: CONDITION_LIMIT,
    })?;
    Ok(finish_recovery(x, cond))
}

/// Evenly spaced `s` values in `(0, π]` for the least-squares recovery.
pub fn least_squares_grid(k: usize, oversample: usize) -> Vec<f64> {
    let m = (k + 1) * oversample.max(1);
    (1..=m).map(|j| PI * j as f64 / m as f64).collect()
}

/// Least-squares recovery from `q̂^{(k)}` sampled at arbitrary nonzero `s`.
pub fn beta_from_qhat_least_squares(k: usize, s_grid: &[f64], qhat: &[Complex64]) -> Result<BetaRecovery> {
    if s_grid.len() != qhat.len() || s_grid.len() < k + 1 {
        return Err(invalid("qhat", "need at least k+1 samples matching the s-grid"));
    }
    let a = recovery_matrix(k, s_grid);
    let cond = condition(&a);
    if !(cond < CONDITION_LIMIT) {
        return Err(Error::IllConditioned {
            cond,
            limit: CONDITION_LIMIT,
        });
    }
    let svd = a.svd(true, true);
    let x = svd
        .solve(&DVector::from_column_slice(qhat), 1e-14)
        .map_err(|e| invalid("qhat", e.to_string()))?;
    Ok(finish_recovery(x, cond))
}

/// Which of the three admissible nesting cases a periodic overlap falls into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum OverlapCase {
    One,
    Two { a12: usize },
    Three { a21: usize },
}

/// Closed-form or series-backed description of `θ(s)`.
#[derive(Debug, Clone, PartialEq)]
pub enum ThetaKind {
    Aperiodic,
    Periodic {
        alpha: f64,
    },
    MultiIndependent {
        periodic: Vec<(f64, f64)>,
        aperiodic: f64,
    },
    OverlapAperiodic {
        p1: f64,
        p2: f64,
        alpha: f64,
    },
    OverlapPeriodic {
        p1: f64,
        p2: f64,
        alpha: f64,
        gamma1: f64,
        gamma2: f64,
        case: OverlapCase,
    },
    /// Geometric weights `ζ^{ℓ+1}`.
    Geometric {
        zeta: f64,
    },
    /// Explicit weights `w_ℓ = Σ_k β^{(k)}(ℓ)` with a bound on the omitted tail.
    Weights {
        weights: Vec<f64>,
        tail: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    ClosedForm,
    ExactSeries,
    FiniteN,
}

impl Provenance {
    pub fn label(&self) -> &'static str {
        match self {
            Provenance::ClosedForm => "closed-form",
            Provenance::ExactSeries => "exact-series",
            Provenance::FiniteN => "finite-n",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThetaFunction {
    pub kind: ThetaKind,
    pub provenance: Provenance,
}

fn one() -> Complex64 {
    Complex64::new(1.0, 0.0)
}

impl ThetaFunction {
    pub fn closed(kind: ThetaKind) -> Self {
        Self {
            kind,
            provenance: Provenance::ClosedForm,
        }
    }

    pub fn aperiodic() -> Self {
        Self::closed(ThetaKind::Aperiodic)
    }

    pub fn periodic(alpha: f64) -> Self {
        Self::closed(ThetaKind::Periodic { alpha })
    }

    pub fn geometric(zeta: f64) -> Self {
        Self::closed(ThetaKind::Geometric { zeta })
    }

    /// Overlapping targets on a periodic orbit; selects the nesting case.
    pub fn overlap_periodic(p1: f64, p2: f64, alpha: f64, gamma1: f64, gamma2: f64) -> Result<Self> {
        for (name, v) in [("alpha", alpha), ("gamma1", gamma1), ("gamma2", gamma2)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(invalid(name_static(name), format!("{v} must lie in (0,1)")));
            }
        }
        let a12 = (1..10_000)
            .find(|&a| p2 * alpha.powi(a as i32) * gamma2 <= p1)
            .ok_or_else(|| Error::ImpossibleCase("a12 not found".into()))?;
        let a21 = (1..10_000)
            .find(|&a| p1 * alpha.powi(a as i32 - 1) * gamma1 <= p2)
            .ok_or_else(|| Error::ImpossibleCase("a21 not found".into()))?;
        let case = match (a12 > 1, a21 > 1) {
            (false, false) => OverlapCase::One,
            (true, false) => OverlapCase::Two { a12 },
            (false, true) => OverlapCase::Three { a21 },
            (true, true) => {
                return Err(Error::ImpossibleCase(format!(
                    "p1 <= p2·α·γ2 and p2 <= p1·γ1 cannot hold together (a12 = {a12}, a21 = {a21})"
                )))
            }
        };
        Ok(Self::closed(ThetaKind::OverlapPeriodic {
            p1,
            p2,
            alpha,
            gamma1,
            gamma2,
            case,
        }))
    }

    /// `θ(s)`.
    pub fn eval(&self, s: f64) -> Complex64 {
        let z = Complex64::from_polar(1.0, s);
        match &self.kind {
            ThetaKind::Aperiodic => one(),
            ThetaKind::Periodic { alpha } => (1.0 - alpha) / (one() - z * alpha),
            ThetaKind::MultiIndependent { periodic, aperiodic } => {
                periodic
                    .iter()
                    .map(|(p, a)| p * (1.0 - a) / (one() - z * a))
                    .sum::<Complex64>()
                    + aperiodic
            }
            ThetaKind::OverlapAperiodic { p1, p2, alpha } => one() - (one() - z) * p1.min(p2 * alpha),
            ThetaKind::OverlapPeriodic {
                p1,
                p2,
                alpha,
                gamma1,
                gamma2,
                case,
            } => {
                let (p1, p2, a, g1, g2) = (*p1, *p2, *alpha, *gamma1, *gamma2);
                let geo = (one() - z) / (one() - z * a);
                let q = match case {
                    OverlapCase::One => geo * (p1 * g1 + a * (p2 * g2 + 1.0)),
                    OverlapCase::Two { a12 } => {
                        let m = *a12 as i32 - 1;
                        (one() - z.powi(m)) * p1 + geo * p2 * g2 * a * (z * a).powi(m) + geo * (a + p1 * g1)
                    }
                    OverlapCase::Three { a21 } => {
                        let m = *a21 as i32 - 1;
                        (one() - z.powi(m)) * p2 + geo * p1 * g1 * (z * a).powi(m) + geo * a * (1.0 + p2 * g2)
                    }
                };
                one() - q
            }
            ThetaKind::Geometric { zeta } => (1.0 - zeta) / (one() - z * zeta),
            ThetaKind::Weights { weights, .. } => {
                let mut acc = Complex64::new(0.0, 0.0);
                for w in weights.iter().rev() {
                    acc = acc * z + w;
                }
                one() - (one() - z) * acc
            }
        }
    }

    /// First `len` cluster weights `w_ℓ`.
    pub fn weights(&self, len: usize) -> Vec<f64> {
        (0..len).map(|l| self.weight(l)).collect()
    }

    fn weight(&self, l: usize) -> f64 {
        let p = l as i32 + 1;
        match &self.kind {
            ThetaKind::Aperiodic => 0.0,
            ThetaKind::Periodic { alpha } => alpha.powi(p),
            ThetaKind::MultiIndependent { periodic, .. } => periodic.iter().map(|(pj, a)| pj * a.powi(p)).sum(),
            ThetaKind::OverlapAperiodic { p1, p2, alpha } => {
                if l == 0 {
                    p1.min(p2 * alpha)
                } else {
                    0.0
                }
            }
            ThetaKind::OverlapPeriodic {
                p1,
                p2,
                alpha,
                gamma1,
                gamma2,
                ..
            } => {
                let a = l as i32 + 1;
                alpha.powi(a) + p1.min(p2 * alpha.powi(a) * gamma2) + p2.min(p1 * alpha.powi(a - 1) * gamma1)
            }
            ThetaKind::Geometric { zeta } => zeta.powi(p),
            ThetaKind::Weights { weights, .. } => weights.get(l).copied().unwrap_or(0.0),
        }
    }

    /// `θ₀ = 1 − Σ_k β^{(k)}(0) = 1 − w_0`.
    pub fn theta0(&self) -> f64 {
        1.0 - self.weight(0)
    }

    /// `Σ = Σ_ℓ w_ℓ`.
    pub fn sigma(&self) -> f64 {
        match &self.kind {
            ThetaKind::Aperiodic => 0.0,
            ThetaKind::Periodic { alpha } => alpha / (1.0 - alpha),
            ThetaKind::MultiIndependent { periodic, .. } => periodic.iter().map(|(p, a)| p * a / (1.0 - a)).sum(),
            ThetaKind::OverlapAperiodic { .. } => self.weight(0),
            ThetaKind::Geometric { zeta } => zeta / (1.0 - zeta),
            ThetaKind::Weights { weights, .. } => weights.iter().sum(),
            ThetaKind::OverlapPeriodic { .. } => {
                let mut total = 0.0;
                for l in 0..4096 {
                    let w = self.weight(l);
                    total += w;
                    if w < 1e-18 * total.max(1e-300) {
                        break;
                    }
                }
                total
            }
        }
    }

    /// Bound on `|θ(s) − θ_K(s)|/|1 − e^{is}|` from truncating the weights.
    pub fn tail_bound(&self) -> f64 {
        match &self.kind {
            ThetaKind::Weights { tail, .. } => *tail,
            _ => 0.0,
        }
    }

    pub fn tag(&self) -> &'static str {
        match &self.kind {
            ThetaKind::Aperiodic => "aperiodic",
            ThetaKind::Periodic { .. } => "periodic",
            ThetaKind::MultiIndependent { .. } => "multi-independent",
            ThetaKind::OverlapAperiodic { .. } => "overlap-aperiodic",
            ThetaKind::OverlapPeriodic { case, .. } => match case {
                OverlapCase::One => "overlap-periodic-case1",
                OverlapCase::Two { .. } => "overlap-periodic-case2",
                OverlapCase::Three { .. } => "overlap-periodic-case3",
            },
            ThetaKind::Geometric { .. } => "geometric",
            ThetaKind::Weights { .. } => "series",
        }
    }
}

fn name_static(name: &str) -> &'static str {
    match name {
        "alpha" => "alpha",
        "gamma1" => "gamma1",
        _ => "gamma2",
    }
}

/// `theta_series`: the truncated series built from a cluster table.
pub fn theta_series(table: &BetaTable) -> ThetaFunction {
    let provenance = match table.level {
        BetaLevel::Finite(_) => Provenance::FiniteN,
        _ => Provenance::ExactSeries,
    };
    ThetaFunction {
        kind: ThetaKind::Weights {
            weights: table.weights(),
            tail: table.tail_bound,
        },
        provenance,
    }
}

/// Parameters for [`theta_closed_form`].
#[derive(Debug, Clone, PartialEq)]
pub enum ClosedFormParams {
    Aperiodic,
    Periodic { alpha: f64 },
    MultiIndependent { periodic: Vec<(f64, f64)>, aperiodic_weight: f64 },
    OverlapAperiodic { p1: f64, p2: f64, alpha: f64 },
    OverlapPeriodic { p1: f64, p2: f64, alpha: f64, gamma1: f64, gamma2: f64 },
    /// Inverse slopes `1/γ_{σ^{-1}ω}, 1/γ_{σ^{-2}ω}, …` along the backward orbit.
    RandomProduct { inverse_slopes: Vec<f64> },
    IidZeta { probs: Vec<f64>, slopes: Vec<f64> },
}

/// `theta_closed_form`: the example closed forms.
pub fn theta_closed_form(params: &ClosedFormParams) -> Result<ThetaFunction> {
    Ok(match params {
        ClosedFormParams::Aperiodic => ThetaFunction::aperiodic(),
        ClosedFormParams::Periodic { alpha } => {
            check_unit("alpha", *alpha)?;
            ThetaFunction::periodic(*alpha)
        }
        ClosedFormParams::MultiIndependent {
            periodic,
            aperiodic_weight,
        } => {
            let total: f64 = periodic.iter().map(|(p, _)| p).sum::<f64>() + aperiodic_weight;
            if (total - 1.0).abs() > 1e-12 {
                return Err(invalid("p", format!("component weights sum to {total}")));
            }
            for (_, a) in periodic {
                check_unit("alpha", *a)?;
            }
            ThetaFunction::closed(ThetaKind::MultiIndependent {
                periodic: periodic.clone(),
                aperiodic: *aperiodic_weight,
            })
        }
        ClosedFormParams::OverlapAperiodic { p1, p2, alpha } => {
            check_unit("alpha", *alpha)?;
            ThetaFunction::closed(ThetaKind::OverlapAperiodic {
                p1: *p1,
                p2: *p2,
                alpha: *alpha,
            })
        }
        ClosedFormParams::OverlapPeriodic {
            p1,
            p2,
            alpha,
            gamma1,
            gamma2,
        } => ThetaFunction::overlap_periodic(*p1, *p2, *alpha, *gamma1, *gamma2)?,
        ClosedFormParams::RandomProduct { inverse_slopes } => {
            let mut weights = Vec::with_capacity(inverse_slopes.len());
            let mut prod = 1.0;
            for g in inverse_slopes {
                check_unit("inverse_slopes", *g)?;
                prod *= g;
                weights.push(prod);
            }
            let gmax = inverse_slopes.iter().cloned().fold(0.0, f64::max);
            let tail = if gmax > 0.0 { prod * gmax / (1.0 - gmax) } else { 0.0 };
            ThetaFunction::closed(ThetaKind::Weights { weights, tail })
        }
        ClosedFormParams::IidZeta { probs, slopes } => {
            if probs.len() != slopes.len() || probs.is_empty() {
                return Err(invalid("slopes", "one slope per symbol is required"));
            }
            let zeta: f64 = probs.iter().zip(slopes).map(|(p, g)| p / g).sum();
            check_unit("zeta", zeta)?;
            ThetaFunction::geometric(zeta)
        }
    })
}

fn check_unit(name: &'static str, v: f64) -> Result<()> {
    if (0.0..1.0).contains(&v) {
        Ok(())
    } else {
        Err(invalid(name, format!("{v} must lie in [0,1)")))
    }
}

/// `theta_integral`: `Θ(s) = ∫ t_ω θ_ω(s) dm` on an `s` grid.
pub fn theta_integral<F>(
    d: &DrivingSystem,
    f: &TargetFamily,
    theta_rule: F,
    s_grid: &[f64],
    m: usize,
    seed: u64,
) -> Result<Vec<Complex64>>
where
    F: Fn(&Anchor) -> Result<ThetaFunction>,
{
    let fibers = d.sample_fibers(m, seed);
    let thetas = fibers
        .iter()
        .map(|(a, w)| {
            let t = Scalar::to_f64(&f.t_at(&d.state_at(a, 0)));
            Ok((t * w, theta_rule(a)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(s_grid
        .iter()
        .map(|&s| thetas.iter().map(|(c, th)| th.eval(s) * c).sum())
        .collect())
}

/// Inverse slopes at `x0` along the backward orbit `σ^{-1}ω, σ^{-2}ω, …`.
pub fn backward_inverse_slopes(d: &DrivingSystem, anchor: &Anchor, x0: &Rational, len: usize) -> Result<Vec<f64>> {
    (1..=len as i64)
        .map(|j| {
            let map = d.map_for::<Rational>(&d.state_at(anchor, -j))?;
            let b = &map.branches()[map.branch_index(x0)];
            Ok(1.0 / Scalar::to_f64(&b.slope.abs()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::MapSpec;

    fn q(n: i64, d: i64) -> Rational {
        Rational::from_ratio(n, d)
    }

    fn central_system() -> DrivingSystem {
        DrivingSystem::fixed(MapSpec::Central {
            gamma: "2".into(),
            left: 1,
            right: 1,
        })
        .unwrap()
    }

    #[test]
    fn fixed_point_first_return() {
        let d = central_system();
        let f = TargetFamily::single(q(1, 2), q(1, 1)).unwrap();
        let table = beta_exact(&d, &f, &Anchor::Fixed, 100, 3).unwrap();
        let exact = table.exact.as_ref().unwrap();
        assert_eq!(exact[0][0], q(1, 2));
        for (k, row) in exact.iter().enumerate() {
            let want = num_traits::pow(q(1, 2), k + 1);
            assert_eq!(row[k], want, "k = {k}");
        }
    }

    #[test]
    fn empty_target_gives_zero_table() {
        let d = central_system();
        let f = TargetFamily::single(q(1, 2), q(0, 1)).unwrap();
        let table = beta_exact(&d, &f, &Anchor::Fixed, 100, 4).unwrap();
        assert_eq!(table.sigma(), 0.0);
    }

    #[test]
    fn aperiodic_center_has_vanishing_limit() {
        let d = central_system();
        let x = crate::scalar::parse_rational("0.1180339887499").unwrap();
        let f = TargetFamily::single(x, q(1, 1)).unwrap();
        let table = beta_limit(&d, &f, &Anchor::Fixed, 12).unwrap();
        assert!(matches!(table.level, BetaLevel::Limit { .. }));
        assert_eq!(table.sigma(), 0.0);
    }

    #[test]
    fn row_sums_match_return_ratio() {
        let d = central_system();
        let f = TargetFamily::single(q(3, 10), q(1, 1)).unwrap();
        let n = 40u128;
        let (rows, denom) = beta_exact_in::<Rational>(&d, &f, &Anchor::Fixed, n, 5).unwrap();
        let map = d.map_for::<Rational>(&crate::driving::FiberState::Fixed).unwrap();
        let h = f.target_for::<Rational>(&crate::driving::FiberState::Fixed, n).unwrap().set;
        let mut pre = h.clone();
        for (k, row) in rows.iter().enumerate() {
            pre = map.preimage(&pre);
            let want = h.intersect(&pre).length() / denom.clone();
            let got = row.iter().fold(q(0, 1), |a, b| a + b.clone());
            assert_eq!(got, want, "k = {k}");
        }
    }

    #[test]
    fn qhat_examples() {
        let t = BetaTable::from_values(vec![vec![0.5]]);
        let qh = qhat_from_beta(&t, PI);
        assert!((qh[0] - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        assert!(qhat_from_beta(&t, 0.0)[0].norm() == 0.0);
        let alpha: f64 = 0.5;
        let (r, b) = (1usize, 3usize);
        let mut rows: Vec<Vec<f64>> = (0..b * r).map(|k| vec![0.0; k + 1]).collect();
        rows[b * r - 1][b - 1] = alpha.powi(b as i32);
        let s = 0.7;
        let got = qhat_from_beta(&BetaTable::from_values(rows), s)[b * r - 1];
        let z = Complex64::from_polar(1.0, s);
        let want = (one() - z) * Complex64::from_polar(1.0, (b as f64 - 1.0) * s) * alpha.powi(b as i32);
        assert!((got - want).norm() < 1e-15);
    }

    #[test]
    fn recovery_round_trips() {
        let k0 = beta_from_qhat(&[Complex64::new(0.3, -0.1)]).unwrap();
        let want = Complex64::new(0.3, -0.1) / (one() - Complex64::from_polar(1.0, 1.0));
        assert!((k0.beta[0] - want.re).abs() < 1e-14);
        let beta = [0.3, 0.1];
        let row = BetaTable::from_values(vec![vec![0.0], beta.to_vec()]);
        let qh: Vec<_> = (1..=2).map(|s| qhat_from_beta(&row, s as f64)[1]).collect();
        let rec = beta_from_qhat(&qh).unwrap();
        for (a, b) in rec.beta.iter().zip(beta) {
            assert!((a - b).abs() < 1e-12);
        }
        let zero = beta_from_qhat(&[Complex64::new(0.0, 0.0); 4]).unwrap();
        assert!(zero.beta.iter().all(|b| *b == 0.0));
    }

    #[test]
    fn least_squares_recovery_beyond_cap() {
        let k = 14;
        let beta: Vec<f64> = (0..=k).map(|l| 0.5f64.powi(l as i32 + 2)).collect();
        let grid = least_squares_grid(k, 3);
        let qh: Vec<_> = grid.iter().map(|&s| qhat_row(&beta, s)).collect();
        let rec = beta_from_qhat_least_squares(k, &grid, &qh).unwrap();
        for (a, b) in rec.beta.iter().zip(&beta) {
            assert!((a - b).abs() < 1e-8);
        }
        assert!(beta_from_qhat(&vec![Complex64::new(0.0, 0.0); 12]).is_err());
    }

    #[test]
    fn closed_forms() {
        let p = ThetaFunction::periodic(1.0 / 3.0);
        assert!((p.eval(PI) - Complex64::new(0.5, 0.0)).norm() < 1e-15);
        let m = theta_closed_form(&ClosedFormParams::MultiIndependent {
            periodic: vec![],
            aperiodic_weight: 1.0,
        })
        .unwrap();
        assert!((m.eval(1.3) - one()).norm() < 1e-15);
        let z = theta_closed_form(&ClosedFormParams::IidZeta {
            probs: vec![0.5, 0.5],
            slopes: vec![2.0, 4.0],
        })
        .unwrap();
        assert_eq!(z.kind, ThetaKind::Geometric { zeta: 0.375 });
        for th in [p, m, z] {
            assert_eq!(th.eval(0.0), one());
        }
    }

    #[test]
    fn closed_forms_agree_with_their_weights() {
        let cases = [
            ThetaFunction::periodic(0.4),
            ThetaFunction::geometric(0.375),
            ThetaFunction::closed(ThetaKind::MultiIndependent {
                periodic: vec![(0.3, 0.5), (0.2, 0.25)],
                aperiodic: 0.5,
            }),
            ThetaFunction::closed(ThetaKind::OverlapAperiodic {
                p1: 0.5,
                p2: 0.5,
                alpha: 0.25,
            }),
            ThetaFunction::overlap_periodic(0.5, 0.5, 1.0 / 16.0, 0.25, 0.25).unwrap(),
            ThetaFunction::overlap_periodic(0.02, 0.98, 0.25, 0.5, 0.5).unwrap(),
            ThetaFunction::overlap_periodic(0.98, 0.02, 0.25, 0.5, 0.5).unwrap(),
        ];
        for th in cases {
            let series = ThetaFunction::closed(ThetaKind::Weights {
                weights: th.weights(400),
                tail: 0.0,
            });
            for s in [0.3, 1.0, 2.0, PI] {
                assert!((th.eval(s) - series.eval(s)).norm() < 1e-12, "{} at {s}", th.tag());
            }
            assert!((th.sigma() - th.weights(400).iter().sum::<f64>()).abs() < 1e-12);
        }
    }

    #[test]
    fn overlap_case_selection() {
        let one_case = ThetaFunction::overlap_periodic(0.5, 0.5, 1.0 / 16.0, 0.25, 0.25).unwrap();
        assert_eq!(one_case.tag(), "overlap-periodic-case1");
        let two = ThetaFunction::overlap_periodic(0.02, 0.98, 0.25, 0.5, 0.5).unwrap();
        assert!(matches!(two.kind, ThetaKind::OverlapPeriodic { case: OverlapCase::Two { .. }, .. }));
        let three = ThetaFunction::overlap_periodic(0.98, 0.02, 0.25, 0.5, 0.5).unwrap();
        assert!(matches!(three.kind, ThetaKind::OverlapPeriodic { case: OverlapCase::Three { .. }, .. }));
        assert!(matches!(
            ThetaFunction::overlap_periodic(0.1, 0.9, 1.5, 0.5, 0.5),
            Err(Error::InvalidParameter { .. })
        ));
    }

    #[test]
    fn series_truncation_lag() {
        assert_eq!(series_lag(2.0), 34);
        assert!(geometric_tail(2.0, 34) < 1e-10);
        assert_eq!(series_lag(1.01), MAX_LAG);
    }
}
