//! Shrinking target families `H_{ω,n}` with Kac scaling `Leb(H_{ω,n}) = (t_ω + ξ_{ω,n})/n`.

use serde::{Deserialize, Serialize};

use crate::driving::{Anchor, DrivingSystem, FiberState};
use crate::error::{invalid, Error, Result};
use crate::intervals::IntervalSet;
use crate::scalar::{parse_rational, Rational, Scalar};

/// Center of one target component, possibly depending on the fiber symbol.
#[derive(Debug, Clone, PartialEq)]
pub enum CenterRule {
    Fixed(Rational),
    PerSymbol(Vec<Rational>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub center: CenterRule,
    pub weight: Rational,
}

/// The scaling `t_ω`.
#[derive(Debug, Clone, PartialEq)]
pub enum Scaling {
    Constant(Rational),
    PerSymbol(Vec<Rational>),
}

/// A realized target with its Kac defect.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetInstance<S> {
    pub set: IntervalSet<S>,
    pub t: S,
    /// `ξ_{ω,n} = n·Leb(H_{ω,n}) − t_ω`.
    pub xi: S,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetFamily {
    components: Vec<Component>,
    scaling: Scaling,
    snap_bins: Option<u64>,
}

impl TargetFamily {
    pub fn new(components: Vec<Component>, scaling: Scaling) -> Result<Self> {
        if components.is_empty() {
            return Err(invalid("components", "at least one component is required"));
        }
        let zero = Rational::from_i64(0);
        let mut total = zero.clone();
        for c in &components {
            if c.weight <= zero || c.weight > Rational::from_i64(1) {
                return Err(invalid("weight", format!("component weight {} not in (0,1]", c.weight)));
            }
            total += c.weight.clone();
            let centers = match &c.center {
                CenterRule::Fixed(x) => vec![x.clone()],
                CenterRule::PerSymbol(v) => v.clone(),
            };
            if centers.iter().any(|x| *x < zero || *x >= Rational::from_i64(1)) {
                return Err(invalid("center", "centers must lie in [0,1)"));
            }
        }
        if total != Rational::from_i64(1) {
            return Err(invalid("weight", format!("component weights sum to {total}, not 1")));
        }
        let ts = match &scaling {
            Scaling::Constant(t) => vec![t.clone()],
            Scaling::PerSymbol(v) => v.clone(),
        };
        if ts.is_empty() || ts.iter().any(|t| *t < zero) {
            return Err(invalid("t", "scaling must be nonnegative"));
        }
        Ok(Self {
            components,
            scaling,
            snap_bins: None,
        })
    }

    /// Single component at `center` with constant scaling `t`.
    pub fn single(center: Rational, t: Rational) -> Result<Self> {
        Self::new(
            vec![Component {
                center: CenterRule::Fixed(center),
                weight: Rational::from_i64(1),
            }],
            Scaling::Constant(t),
        )
    }

    /// Copy with endpoints rounded to multiples of `1/bins`.
    pub fn snapped(&self, bins: u64) -> Self {
        Self {
            snap_bins: Some(bins),
            ..self.clone()
        }
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn scaling(&self) -> &Scaling {
        &self.scaling
    }

    pub fn snap_bins(&self) -> Option<u64> {
        self.snap_bins
    }

    /// Checks that per-symbol rules fit the driving alphabet.
    pub fn validate_against(&self, driving: &DrivingSystem) -> Result<()> {
        let l = driving.alphabet_size();
        let check = |len: usize, what: &'static str| {
            if l == 0 {
                Err(invalid(what, "per-symbol values need i.i.d. driving"))
            } else if len != l {
                Err(invalid(what, format!("{len} values for an alphabet of {l}")))
            } else {
                Ok(())
            }
        };
        if let Scaling::PerSymbol(v) = &self.scaling {
            check(v.len(), "t")?;
        }
        for c in &self.components {
            if let CenterRule::PerSymbol(v) = &c.center {
                check(v.len(), "center")?;
            }
        }
        Ok(())
    }

    pub fn t_at(&self, state: &FiberState) -> Rational {
        match (&self.scaling, state) {
            (Scaling::Constant(t), _) => t.clone(),
            (Scaling::PerSymbol(v), FiberState::Symbol(s)) => v[*s].clone(),
            (Scaling::PerSymbol(v), _) => v[0].clone(),
        }
    }

    pub fn center_at(&self, component: usize, state: &FiberState) -> Rational {
        match (&self.components[component].center, state) {
            (CenterRule::Fixed(x), _) => x.clone(),
            (CenterRule::PerSymbol(v), FiberState::Symbol(s)) => v[*s].clone(),
            (CenterRule::PerSymbol(v), _) => v[0].clone(),
        }
    }

    /// Largest scaling value over all fiber states.
    pub fn t_max(&self) -> Rational {
        match &self.scaling {
            Scaling::Constant(t) => t.clone(),
            Scaling::PerSymbol(v) => v.iter().cloned().reduce(Scalar::max_of).expect("nonempty"),
        }
    }

    /// Mean scaling `t̄ = ∫ t dm` for the given symbol probabilities.
    pub fn t_mean(&self, probs: &[f64]) -> f64 {
        match &self.scaling {
            Scaling::Constant(t) => Scalar::to_f64(t),
            Scaling::PerSymbol(v) => v.iter().zip(probs).map(|(t, p)| p * Scalar::to_f64(t)).sum(),
        }
    }

    /// `H_{ω,n}` for a fiber state.
    pub fn target_for<S: Scalar>(&self, state: &FiberState, n: u128) -> Result<TargetInstance<S>> {
        if n == 0 {
            return Err(invalid("n", "n must be positive"));
        }
        let t = self.t_at(state);
        let n_q = Rational::from_integer(n.into());
        let ratio = t.clone() / n_q.clone();
        if ratio >= Rational::from_i64(1) {
            return Err(Error::TargetTooLarge {
                ratio: Scalar::to_f64(&ratio),
            });
        }
        let two = Rational::from_i64(2);
        let one = Rational::from_i64(1);
        let mut raw: Vec<(Rational, Rational)> = Vec::new();
        for (j, c) in self.components.iter().enumerate() {
            let half = c.weight.clone() * ratio.clone() / two.clone();
            if half == Rational::from_i64(0) {
                continue;
            }
            let x = self.center_at(j, state);
            let (mut lo, mut hi) = (x.clone() - half.clone(), x + half);
            if let Some(bins) = self.snap_bins {
                let b = Rational::from_i64(bins as i64);
                let round = |v: &Rational| (v.clone() * b.clone() + one.clone() / two.clone()).floor() / b.clone();
                lo = round(&lo);
                hi = round(&hi);
                if lo == hi {
                    hi = lo.clone() + one.clone() / b.clone();
                }
            }
            let zero = Rational::from_i64(0);
            if lo < zero {
                raw.push((lo.clone() + one.clone(), one.clone()));
                raw.push((zero, hi));
            } else if hi > one {
                raw.push((lo, one.clone()));
                raw.push((zero, hi - one.clone()));
            } else {
                raw.push((lo, hi));
            }
        }
        let set = IntervalSet::from_intervals(raw);
        let xi = set.length() * n_q - t.clone();
        Ok(TargetInstance {
            set: set.map_scalar(|v| S::from_rational(v)),
            t: S::from_rational(&t),
            xi: S::from_rational(&xi),
        })
    }

    /// `target_at`: `H_{σ^j ω, n}`.
    pub fn target_at<S: Scalar>(
        &self,
        driving: &DrivingSystem,
        anchor: &Anchor,
        j: i64,
        n: u128,
    ) -> Result<TargetInstance<S>> {
        self.target_for(&driving.state_at(anchor, j), n)
    }

    /// Bit `j` records `orbit[j] ∈ H_{σ^j ω, n}`; returns the pattern and `S_{ω,n,k}`.
    pub fn indicator_hits<S: Scalar>(
        &self,
        driving: &DrivingSystem,
        anchor: &Anchor,
        n: u128,
        orbit: &[S],
        k: usize,
    ) -> Result<(Vec<bool>, usize)> {
        if orbit.len() < k {
            return Err(invalid("orbit", format!("orbit has {} points, horizon {k}", orbit.len())));
        }
        let mut bits = Vec::with_capacity(k);
        for (j, x) in orbit.iter().take(k).enumerate() {
            let h = self.target_at::<S>(driving, anchor, j as i64, n)?;
            bits.push(h.set.contains(x));
        }
        let count = bits.iter().filter(|b| **b).count();
        Ok((bits, count))
    }
}

/// Serializable target configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    #[serde(default)]
    pub t: Option<String>,
    #[serde(default)]
    pub t_per_symbol: Option<Vec<String>>,
    pub components: Vec<ComponentSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSpec {
    #[serde(default)]
    pub center: Option<String>,
    #[serde(default)]
    pub centers: Option<Vec<String>>,
    #[serde(default = "one_literal")]
    pub weight: String,
}

fn one_literal() -> String {
    "1".into()
}

impl TargetSpec {
    pub fn build(&self) -> Result<TargetFamily> {
        let scaling = match (&self.t, &self.t_per_symbol) {
            (Some(t), None) => Scaling::Constant(parse_rational(t)?),
            (None, Some(v)) => Scaling::PerSymbol(v.iter().map(|s| parse_rational(s)).collect::<Result<_>>()?),
            (None, None) => Scaling::Constant(Rational::from_i64(1)),
            (Some(_), Some(_)) => return Err(invalid("t", "give either t or t_per_symbol, not both")),
        };
        let components = self
            .components
            .iter()
            .map(|c| {
                let center = match (&c.center, &c.centers) {
                    (Some(x), None) => CenterRule::Fixed(parse_rational(x)?),
                    (None, Some(v)) => {
                        CenterRule::PerSymbol(v.iter().map(|s| parse_rational(s)).collect::<Result<_>>()?)
                    }
                    _ => return Err(invalid("center", "give exactly one of center or centers")),
                };
                Ok(Component {
                    center,
                    weight: parse_rational(&c.weight)?,
                })
            })
            .collect::<Result<_>>()?;
        TargetFamily::new(components, scaling)
    }
}
