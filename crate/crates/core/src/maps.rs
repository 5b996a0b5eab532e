//! Piecewise-linear expanding interval maps with exact branch arithmetic.
//!
//! Every map here preserves Lebesgue measure: for almost every `y` the inverse
//! slopes of the branches whose image contains `y` add up to one. Maps whose
//! pieces are all full onto `[0,1)` satisfy this through `Σ 1/|slope| = 1`;
//! mod-one maps with an irrational shift split one circle branch into two
//! partial pieces and satisfy it pointwise.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intervals::IntervalSet;
use crate::scalar::{parse_scalar, Rational, Scalar};

/// One linear piece `x ↦ slope·x + intercept` on `[lo, hi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch<S> {
    pub lo: S,
    pub hi: S,
    pub slope: S,
    pub intercept: S,
}

impl<S: Scalar> Branch<S> {
    pub fn apply(&self, x: &S) -> S {
        self.slope.clone() * x.clone() + self.intercept.clone()
    }

    pub fn invert(&self, y: &S) -> S {
        (y.clone() - self.intercept.clone()) / self.slope.clone()
    }

    /// Image `[lo', hi')` of the branch domain, ordered.
    pub fn image(&self) -> (S, S) {
        let a = self.apply(&self.lo);
        let b = self.apply(&self.hi);
        if a <= b {
            (a, b)
        } else {
            (b, a)
        }
    }

    fn map_interval(&self, lo: &S, hi: &S) -> (S, S) {
        let a = self.apply(lo);
        let b = self.apply(hi);
        if a <= b {
            (a, b)
        } else {
            (b, a)
        }
    }
}

/// Expanding piecewise-linear map of `[0,1)` into `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinearMap<S> {
    branches: Vec<Branch<S>>,
}

fn tolerance<S: Scalar>() -> S {
    if S::EXACT {
        S::zero()
    } else {
        S::from_ratio(1, 1_000_000_000_000)
    }
}

impl<S: Scalar> PiecewiseLinearMap<S> {
    /// Validates the partition, uniform expansion and Lebesgue invariance.
    pub fn new(branches: Vec<Branch<S>>) -> Result<Self> {
        if branches.is_empty() {
            return Err(Error::InvalidMap("no branches".into()));
        }
        if branches[0].lo != S::zero() {
            return Err(Error::InvalidMap("first breakpoint must be 0".into()));
        }
        if branches[branches.len() - 1].hi != S::one() {
            return Err(Error::InvalidMap("last breakpoint must be 1".into()));
        }
        for (i, b) in branches.iter().enumerate() {
            if b.lo >= b.hi {
                return Err(Error::InvalidMap(format!("branch {i} has empty domain")));
            }
            if i > 0 && branches[i - 1].hi != b.lo {
                return Err(Error::InvalidMap(format!(
                    "branch {i} does not start where branch {} ends",
                    i - 1
                )));
            }
            if b.slope.abs() <= S::one() {
                return Err(Error::InvalidMap(format!(
                    "branch {i} has |slope| = {} <= 1",
                    b.slope.abs()
                )));
            }
            let (lo, hi) = b.image();
            let tol = tolerance::<S>();
            if lo < -tol.clone() || hi > S::one() + tol {
                return Err(Error::InvalidMap(format!(
                    "branch {i} image [{lo}, {hi}) leaves [0,1]"
                )));
            }
        }
        let map = Self { branches };
        let dev = map.transfer_of_one_deviation();
        if dev.to_f64() > 1e-12 || (S::EXACT && !dev.is_zero()) {
            return Err(Error::InvalidMap(format!(
                "map does not preserve Lebesgue measure (deviation {dev})"
            )));
        }
        Ok(map)
    }

    pub fn branches(&self) -> &[Branch<S>] {
        &self.branches
    }

    pub fn branch_count(&self) -> usize {
        self.branches.len()
    }

    /// Interior breakpoints `a_1 < … < a_{d-1}`.
    pub fn breakpoints(&self) -> Vec<S> {
        self.branches[1..].iter().map(|b| b.lo.clone()).collect()
    }

    /// Index of the branch containing `x`; breakpoints resolve to the right.
    pub fn branch_index(&self, x: &S) -> usize {
        let idx = self.branches.partition_point(|b| b.lo <= *x);
        idx.saturating_sub(1).min(self.branches.len() - 1)
    }

    pub fn eval(&self, x: &S) -> S {
        self.branches[self.branch_index(x)].apply(x)
    }

    pub fn min_abs_slope(&self) -> S {
        self.branches
            .iter()
            .map(|b| b.slope.abs())
            .reduce(S::min_of)
            .expect("nonempty")
    }

    pub fn max_abs_slope(&self) -> S {
        self.branches
            .iter()
            .map(|b| b.slope.abs())
            .reduce(S::max_of)
            .expect("nonempty")
    }

    /// `Σ_i 1/|slope_i|` over all pieces.
    pub fn inverse_slope_sum(&self) -> S {
        self.branches
            .iter()
            .fold(S::zero(), |acc, b| acc + S::one() / b.slope.abs())
    }

    /// `Σ 1/|slope|` over the pieces whose image contains `y`, i.e. `(L1)(y)`.
    pub fn inverse_slope_sum_at(&self, y: &S) -> S {
        self.branches.iter().fold(S::zero(), |acc, b| {
            let (lo, hi) = b.image();
            if lo <= *y && *y < hi {
                acc + S::one() / b.slope.abs()
            } else {
                acc
            }
        })
    }

    fn image_cells(&self) -> Vec<S> {
        let mut cuts: Vec<S> = vec![S::zero(), S::one()];
        for b in &self.branches {
            let (lo, hi) = b.image();
            cuts.push(S::max_of(lo, S::zero()));
            cuts.push(S::min_of(hi, S::one()));
        }
        cuts.sort_by(|a, b| a.partial_cmp(b).expect("comparable"));
        cuts.dedup();
        if !S::EXACT {
            let tol = S::from_ratio(1, 1_000_000_000_000);
            cuts.dedup_by(|b, a| b.clone() - a.clone() < tol);
        }
        cuts
    }

    /// `sup_y |(L1)(y) − 1|` evaluated on every cell of the image partition.
    pub fn transfer_of_one_deviation(&self) -> S {
        let cuts = self.image_cells();
        let two = S::from_i64(2);
        cuts.windows(2)
            .filter(|w| w[0] < w[1])
            .map(|w| {
                let mid = (w[0].clone() + w[1].clone()) / two.clone();
                (self.inverse_slope_sum_at(&mid) - S::one()).abs()
            })
            .reduce(S::max_of)
            .unwrap_or_else(S::zero)
    }

    /// `inf_y (L1)(y)`, the right-hand side of the Lasota–Yorke constant check.
    pub fn transfer_of_one_inf(&self) -> S {
        let cuts = self.image_cells();
        let two = S::from_i64(2);
        cuts.windows(2)
            .filter(|w| w[0] < w[1])
            .map(|w| self.inverse_slope_sum_at(&((w[0].clone() + w[1].clone()) / two.clone())))
            .reduce(S::min_of)
            .unwrap_or_else(S::zero)
    }

    /// `d(T) = sup_y #T^{-1}(y)`.
    pub fn max_preimage_count(&self) -> usize {
        let cuts = self.image_cells();
        let two = S::from_i64(2);
        cuts.windows(2)
            .filter(|w| w[0] < w[1])
            .map(|w| {
                let mid = (w[0].clone() + w[1].clone()) / two.clone();
                self.branches
                    .iter()
                    .filter(|b| {
                        let (lo, hi) = b.image();
                        lo <= mid && mid < hi
                    })
                    .count()
            })
            .max()
            .unwrap_or(0)
    }

    /// Exact `T^{-1}(set)`.
    pub fn preimage(&self, set: &IntervalSet<S>) -> IntervalSet<S> {
        let mut out = Vec::new();
        for b in &self.branches {
            let (ilo, ihi) = b.image();
            for (y0, y1) in set.intervals() {
                let lo = S::max_of(y0.clone(), ilo.clone());
                let hi = S::min_of(y1.clone(), ihi.clone());
                if lo < hi {
                    let x0 = b.invert(&lo);
                    let x1 = b.invert(&hi);
                    out.push(if x0 <= x1 { (x0, x1) } else { (x1, x0) });
                }
            }
        }
        IntervalSet::from_intervals(out)
    }

    /// Exact forward image `T(set)`.
    pub fn image(&self, set: &IntervalSet<S>) -> IntervalSet<S> {
        let mut out = Vec::new();
        for b in &self.branches {
            for (x0, x1) in set.intervals() {
                let lo = S::max_of(x0.clone(), b.lo.clone());
                let hi = S::min_of(x1.clone(), b.hi.clone());
                if lo < hi {
                    out.push(b.map_interval(&lo, &hi));
                }
            }
        }
        IntervalSet::from_intervals(out)
    }

    /// The composition `next ∘ self` (apply `self` first).
    pub fn then(&self, next: &Self) -> Result<Self> {
        let mut pieces = Vec::new();
        let inner_cuts = next.breakpoints();
        for b in &self.branches {
            let mut xs = vec![b.lo.clone(), b.hi.clone()];
            let (ilo, ihi) = b.image();
            for p in &inner_cuts {
                if ilo < *p && *p < ihi {
                    xs.push(b.invert(p));
                }
            }
            xs.sort_by(|a, c| a.partial_cmp(c).expect("comparable"));
            xs.dedup();
            let two = S::from_i64(2);
            for w in xs.windows(2) {
                let mid = (w[0].clone() + w[1].clone()) / two.clone();
                let outer = &next.branches[next.branch_index(&b.apply(&mid))];
                pieces.push(Branch {
                    lo: w[0].clone(),
                    hi: w[1].clone(),
                    slope: outer.slope.clone() * b.slope.clone(),
                    intercept: outer.slope.clone() * b.intercept.clone() + outer.intercept.clone(),
                });
            }
        }
        Self::new(pieces)
    }

    pub fn convert<T: Scalar>(&self, f: impl Fn(&S) -> T) -> PiecewiseLinearMap<T> {
        PiecewiseLinearMap {
            branches: self
                .branches
                .iter()
                .map(|b| Branch {
                    lo: f(&b.lo),
                    hi: f(&b.hi),
                    slope: f(&b.slope),
                    intercept: f(&b.intercept),
                })
                .collect(),
        }
    }

    pub fn to_f64(&self) -> PiecewiseLinearMap<f64> {
        self.convert(|x| x.to_f64())
    }
}

/// Map with a central branch of slope `γ` through the fixed point `1/2`,
/// flanked by `left` and `right` equal-width full branches.
pub fn central_branch<S: Scalar>(gamma: S, left: usize, right: usize) -> Result<PiecewiseLinearMap<S>> {
    if gamma <= S::one() {
        return Err(Error::InvalidMap(format!("central slope {gamma} must exceed 1")));
    }
    if left == 0 || right == 0 {
        return Err(Error::InvalidMap(
            "side regions are nonempty and need at least one branch each".into(),
        ));
    }
    let one = S::one();
    let two = S::from_i64(2);
    let c_lo = (one.clone() - one.clone() / gamma.clone()) / two.clone();
    let c_hi = (one.clone() + one.clone() / gamma.clone()) / two.clone();
    let mut branches = Vec::with_capacity(left + right + 1);
    let push_region = |branches: &mut Vec<Branch<S>>, a: S, b: S, count: usize| {
        let width = (b.clone() - a.clone()) / S::from_i64(count as i64);
        for j in 0..count {
            let lo = a.clone() + width.clone() * S::from_i64(j as i64);
            let hi = if j + 1 == count {
                b.clone()
            } else {
                a.clone() + width.clone() * S::from_i64(j as i64 + 1)
            };
            let slope = S::one() / width.clone();
            let intercept = -(lo.clone() * slope.clone());
            branches.push(Branch { lo, hi, slope, intercept });
        }
    };
    push_region(&mut branches, S::zero(), c_lo.clone(), left);
    branches.push(Branch {
        lo: c_lo,
        hi: c_hi.clone(),
        slope: gamma.clone(),
        intercept: -((gamma - one.clone()) / two),
    });
    push_region(&mut branches, c_hi, one, right);
    PiecewiseLinearMap::new(branches)
}

/// The mod-one map `x ↦ βx + r (mod 1)` unrolled into linear pieces.
pub fn beta_map<S: Scalar>(beta: u32, r: S) -> Result<PiecewiseLinearMap<S>> {
    if beta < 2 {
        return Err(Error::InvalidMap(format!("beta = {beta} must be at least 2")));
    }
    if r < S::zero() || r >= S::one() {
        return Err(Error::InvalidMap(format!("shift r = {r} must lie in [0,1)")));
    }
    let b = S::from_i64(beta as i64);
    let mut cuts = vec![S::zero()];
    for j in 1..=beta as i64 {
        let p = (S::from_i64(j) - r.clone()) / b.clone();
        if p > S::zero() && p < S::one() {
            cuts.push(p);
        }
    }
    cuts.push(S::one());
    let two = S::from_i64(2);
    let branches = cuts
        .windows(2)
        .map(|w| {
            let mid = (w[0].clone() + w[1].clone()) / two.clone();
            let wrap = (b.clone() * mid + r.clone()).floor();
            Branch {
                lo: w[0].clone(),
                hi: w[1].clone(),
                slope: b.clone(),
                intercept: r.clone() - wrap,
            }
        })
        .collect();
    PiecewiseLinearMap::new(branches)
}

/// Branch given as text literals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchSpec {
    pub lo: String,
    pub hi: String,
    pub slope: String,
    pub intercept: String,
}

/// Serializable description of a map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MapSpec {
    Central {
        gamma: String,
        #[serde(default = "one")]
        left: usize,
        #[serde(default = "one")]
        right: usize,
    },
    Beta {
        beta: u32,
        r: String,
    },
    Explicit {
        branches: Vec<BranchSpec>,
    },
}

fn one() -> usize {
    1
}

impl MapSpec {
    pub fn build<S: Scalar>(&self) -> Result<PiecewiseLinearMap<S>> {
        match self {
            MapSpec::Central { gamma, left, right } => {
                central_branch(parse_scalar::<S>(gamma)?, *left, *right)
            }
            MapSpec::Beta { beta, r } => beta_map(*beta, parse_scalar::<S>(r)?),
            MapSpec::Explicit { branches } => {
                let parsed = branches
                    .iter()
                    .map(|b| {
                        Ok(Branch {
                            lo: parse_scalar(&b.lo)?,
                            hi: parse_scalar(&b.hi)?,
                            slope: parse_scalar(&b.slope)?,
                            intercept: parse_scalar(&b.intercept)?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                PiecewiseLinearMap::new(parsed)
            }
        }
    }

    /// Text form of an explicit map, exact when `S` is rational.
    pub fn explicit_from(map: &PiecewiseLinearMap<Rational>) -> Self {
        let fmt = crate::scalar::format_rational;
        MapSpec::Explicit {
            branches: map
                .branches()
                .iter()
                .map(|b| BranchSpec {
                    lo: fmt(&b.lo),
                    hi: fmt(&b.hi),
                    slope: fmt(&b.slope),
                    intercept: fmt(&b.intercept),
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::parse_rational;
    use num_traits::Zero;

    fn q(n: i64, d: i64) -> Rational {
        Rational::from_ratio(n, d)
    }

    #[test]
    fn central_map_fixes_one_half() {
        let t = central_branch(q(2, 1), 1, 1).unwrap();
        assert_eq!(t.branch_count(), 3);
        assert_eq!(t.eval(&q(1, 2)), q(1, 2));
        assert_eq!(t.branches()[t.branch_index(&q(1, 2))].slope, q(2, 1));
        assert_eq!(t.eval(&q(3, 10)), q(1, 10));
        let tf = central_branch(2.0, 1, 1).unwrap();
        assert!((tf.eval(&0.3) - 0.1).abs() < 1e-15);
        assert_eq!(tf.eval(&0.5), 0.5);
    }

    #[test]
    fn central_map_breakpoints() {
        let t = central_branch(q(2, 1), 2, 2).unwrap();
        let mut pts = vec![q(0, 1)];
        pts.extend(t.breakpoints());
        pts.push(q(1, 1));
        assert_eq!(pts, vec![q(0, 1), q(1, 8), q(1, 4), q(3, 4), q(7, 8), q(1, 1)]);
        assert_eq!(central_branch(q(3, 1), 1, 1).unwrap().inverse_slope_sum(), q(1, 1));
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(central_branch(q(1, 1), 1, 1).is_err());
        assert!(central_branch(q(2, 1), 0, 1).is_err());
        assert!(beta_map(1, q(0, 1)).is_err());
        let identity = Branch {
            lo: q(0, 1),
            hi: q(1, 1),
            slope: q(1, 1),
            intercept: q(0, 1),
        };
        assert!(PiecewiseLinearMap::new(vec![identity]).is_err());
    }

    #[test]
    fn beta_maps() {
        let t = beta_map(3, q(0, 1)).unwrap();
        assert_eq!(t.breakpoints(), vec![q(1, 3), q(2, 3)]);
        let r = parse_rational("0.4142135623731").unwrap();
        let t = beta_map(3, r.clone()).unwrap();
        assert_eq!(t.branch_count(), 4);
        assert_eq!(t.breakpoints()[0], (q(1, 1) - r) / q(3, 1));
        let r = parse_rational("0.1414213562373").unwrap();
        let t = beta_map(4, r).unwrap();
        assert!(t.transfer_of_one_deviation().is_zero());
        assert_eq!(t.inverse_slope_sum_at(&q(1, 2)), q(1, 1));
        assert_eq!(t.max_preimage_count(), 4);
    }

    #[test]
    fn preimage_of_central_target() {
        let t = central_branch(q(2, 1), 1, 1).unwrap();
        let eps = q(1, 100);
        let s = IntervalSet::interval(q(1, 2) - eps.clone(), q(1, 2) + eps.clone());
        let pre = t.preimage(&s);
        let core = IntervalSet::interval(q(1, 2) - eps.clone() / q(2, 1), q(1, 2) + eps / q(2, 1));
        assert!(core.is_subset_of(&pre));
        assert_eq!(pre.length(), s.length());
        assert!(t.preimage(&IntervalSet::unit()).is_unit());
        assert!(t.preimage(&IntervalSet::empty()).is_empty());
    }

    #[test]
    fn composition_matches_iterated_preimage() {
        let t = central_branch(q(2, 1), 1, 2).unwrap();
        let u = beta_map(3, q(1, 7)).unwrap();
        let tu = t.then(&u).unwrap();
        let s = IntervalSet::from_intervals(vec![(q(1, 10), q(1, 5)), (q(2, 3), q(3, 4))]);
        assert_eq!(tu.preimage(&s), t.preimage(&u.preimage(&s)));
        for x in [q(1, 9), q(2, 5), q(7, 8)] {
            assert_eq!(tu.eval(&x), u.eval(&t.eval(&x)));
        }
    }

    #[test]
    fn map_spec_round_trip() {
        let spec = MapSpec::Central {
            gamma: "2".into(),
            left: 1,
            right: 1,
        };
        let m = spec.build::<Rational>().unwrap();
        let explicit = MapSpec::explicit_from(&m);
        assert_eq!(explicit.build::<Rational>().unwrap(), m);
    }
}
