//! Invertible ergodic driving systems and the fiber maps they select.

use num_complex::Complex64;
use num_traits::Signed;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::maps::{central_branch, MapSpec, PiecewiseLinearMap};
use crate::scalar::{parse_rational, Rational, Scalar};

/// Counter-based 64-bit mixer; the i.i.d. symbol at time `j` is a pure function of `(seed, j)`.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn unit_from_bits(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// The base transformation σ on Ω.
#[derive(Debug, Clone, PartialEq)]
pub enum Base {
    Fixed,
    Rotation { alpha: Rational, omega0: Rational },
    Iid { probs: Vec<f64>, seed: u64 },
}

/// A point ω of Ω.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Anchor {
    Fixed,
    Angle(Rational),
    /// An i.i.d. sequence identified by its seed, observed from time `offset`.
    Sequence { seed: u64, offset: i64 },
}

/// The observable state of a fiber: what the map and target rules depend on.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum FiberState {
    Fixed,
    Angle(Rational),
    Symbol(usize),
}

impl FiberState {
    pub fn describe(&self) -> String {
        match self {
            FiberState::Fixed => "fixed".into(),
            FiberState::Angle(w) => format!("{}", Scalar::to_f64(w)),
            FiberState::Symbol(s) => format!("symbol:{s}"),
        }
    }
}

/// How a fiber state selects its map.
#[derive(Debug, Clone, PartialEq)]
pub enum MapRule {
    Single(MapSpec),
    PerSymbol(Vec<MapSpec>),
    /// Central-branch map with slope `γ_ω = γ⁰ + γ¹·ω` at rotation angle ω.
    CentralSlope {
        gamma0: Rational,
        gamma1: Rational,
        left: usize,
        right: usize,
    },
}

/// Serializable driving configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BaseSpec {
    Fixed,
    Rotation {
        alpha: String,
        #[serde(default = "zero_literal")]
        omega0: String,
    },
    Iid {
        probs: Vec<String>,
        #[serde(default)]
        seed: u64,
    },
}

fn zero_literal() -> String {
    "0".into()
}

impl BaseSpec {
    pub fn build(&self) -> Result<Base> {
        Ok(match self {
            BaseSpec::Fixed => Base::Fixed,
            BaseSpec::Rotation { alpha, omega0 } => Base::Rotation {
                alpha: parse_rational(alpha)?,
                omega0: parse_rational(omega0)?.frac(),
            },
            BaseSpec::Iid { probs, seed } => Base::Iid {
                probs: probs
                    .iter()
                    .map(|p| parse_rational(p).map(|r| Scalar::to_f64(&r)))
                    .collect::<Result<_>>()?,
                seed: *seed,
            },
        })
    }
}

/// Base system plus the per-fiber map assignment.
#[derive(Debug, Clone)]
pub struct DrivingSystem {
    base: Base,
    rule: MapRule,
    cumulative: Vec<f64>,
    cached: Vec<PiecewiseLinearMap<Rational>>,
}

impl DrivingSystem {
    pub fn new(base: Base, rule: MapRule) -> Result<Self> {
        let mut cumulative = Vec::new();
        match &base {
            Base::Iid { probs, .. } => {
                if probs.is_empty() || probs.iter().any(|p| !(*p > 0.0)) {
                    return Err(invalid("probs", "probabilities must be positive"));
                }
                let total: f64 = probs.iter().sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(invalid("probs", format!("probabilities sum to {total}, not 1")));
                }
                let mut acc = 0.0;
                for p in probs {
                    acc += p;
                    cumulative.push(acc);
                }
                *cumulative.last_mut().expect("nonempty") = 1.0;
                if let MapRule::PerSymbol(maps) = &rule {
                    if maps.len() != probs.len() {
                        return Err(invalid(
                            "maps",
                            format!("{} maps for an alphabet of {}", maps.len(), probs.len()),
                        ));
                    }
                }
            }
            Base::Rotation { alpha, .. } => {
                let a = alpha.frac();
                if a == Rational::from_i64(0) {
                    return Err(invalid("alpha", "rotation number must not be an integer"));
                }
            }
            Base::Fixed => {}
        }
        let cached = match &rule {
            MapRule::Single(spec) => vec![spec.build::<Rational>()?],
            MapRule::PerSymbol(specs) => {
                if !matches!(base, Base::Iid { .. }) {
                    return Err(invalid("maps", "per-symbol maps need i.i.d. driving"));
                }
                specs.iter().map(|s| s.build::<Rational>()).collect::<Result<_>>()?
            }
            MapRule::CentralSlope {
                gamma0,
                gamma1,
                left,
                right,
            } => {
                if !matches!(base, Base::Rotation { .. }) {
                    return Err(invalid("maps", "angle-dependent slopes need rotation driving"));
                }
                let lowest = Scalar::min_of(gamma0.clone(), gamma0.clone() + gamma1.clone());
                central_branch(lowest, *left, *right)?;
                Vec::new()
            }
        };
        Ok(Self {
            base,
            rule,
            cumulative,
            cached,
        })
    }

    pub fn fixed(map: MapSpec) -> Result<Self> {
        Self::new(Base::Fixed, MapRule::Single(map))
    }

    pub fn base(&self) -> &Base {
        &self.base
    }

    pub fn rule(&self) -> &MapRule {
        &self.rule
    }

    pub fn is_fixed(&self) -> bool {
        matches!(self.base, Base::Fixed)
    }

    pub fn alphabet_size(&self) -> usize {
        self.cumulative.len()
    }

    pub fn symbol_probs(&self) -> Vec<f64> {
        match &self.base {
            Base::Iid { probs, .. } => probs.clone(),
            _ => Vec::new(),
        }
    }

    /// Default anchor: ω₀ for rotations, the configured seed for i.i.d. sequences.
    pub fn default_anchor(&self) -> Anchor {
        match &self.base {
            Base::Fixed => Anchor::Fixed,
            Base::Rotation { omega0, .. } => Anchor::Angle(omega0.clone()),
            Base::Iid { seed, .. } => Anchor::Sequence {
                seed: *seed,
                offset: 0,
            },
        }
    }

    /// σ^j applied to an anchor (j may be negative).
    pub fn shift(&self, anchor: &Anchor, j: i64) -> Anchor {
        match (anchor, &self.base) {
            (Anchor::Angle(w), Base::Rotation { alpha, .. }) => {
                Anchor::Angle((w.clone() + alpha.clone() * Rational::from_i64(j)).frac())
            }
            (Anchor::Sequence { seed, offset }, _) => Anchor::Sequence {
                seed: *seed,
                offset: offset + j,
            },
            (other, _) => other.clone(),
        }
    }

    /// The fiber state at σ^j ω.
    pub fn state_at(&self, anchor: &Anchor, j: i64) -> FiberState {
        match self.shift(anchor, j) {
            Anchor::Fixed => FiberState::Fixed,
            Anchor::Angle(w) => FiberState::Angle(w),
            Anchor::Sequence { seed, offset } => {
                let bits = splitmix64(splitmix64(seed) ^ (offset as u64).wrapping_mul(0xD1B5_4A32_D192_ED03));
                let u = unit_from_bits(bits);
                let idx = self.cumulative.partition_point(|c| *c <= u);
                FiberState::Symbol(idx.min(self.cumulative.len() - 1))
            }
        }
    }

    /// Map assigned to a fiber state, in the requested arithmetic.
    pub fn map_for<S: Scalar>(&self, state: &FiberState) -> Result<PiecewiseLinearMap<S>> {
        match (&self.rule, state) {
            (MapRule::Single(_), _) => Ok(self.cached[0].convert(S::from_rational)),
            (MapRule::PerSymbol(_), FiberState::Symbol(s)) => {
                Ok(self.cached[*s].convert(S::from_rational))
            }
            (
                MapRule::CentralSlope {
                    gamma0,
                    gamma1,
                    left,
                    right,
                },
                FiberState::Angle(w),
            ) => {
                let gamma = gamma0.clone() + gamma1.clone() * w.clone();
                central_branch(S::from_rational(&gamma), *left, *right)
            }
            _ => Err(invalid("maps", "map rule does not match the fiber state")),
        }
    }

    /// `fiber_at`: state and map at time `j` along the orbit of `anchor`.
    pub fn fiber_at<S: Scalar>(&self, anchor: &Anchor, j: i64) -> Result<(FiberState, PiecewiseLinearMap<S>)> {
        let state = self.state_at(anchor, j);
        let map = self.map_for::<S>(&state)?;
        Ok((state, map))
    }

    /// All distinct maps the system can select (a sample of angles for rotations).
    pub fn map_set(&self, samples: usize) -> Result<Vec<PiecewiseLinearMap<Rational>>> {
        match &self.rule {
            MapRule::Single(_) | MapRule::PerSymbol(_) => Ok(self.cached.clone()),
            MapRule::CentralSlope { .. } => self
                .sample_fibers(samples.max(1), 0)
                .into_iter()
                .map(|(a, _)| self.map_for::<Rational>(&self.state_at(&a, 0)))
                .collect(),
        }
    }

    /// Anchors with quadrature weights for integrals over (Ω, m).
    pub fn sample_fibers(&self, m: usize, seed: u64) -> Vec<(Anchor, f64)> {
        let m = m.max(1);
        match &self.base {
            Base::Fixed => vec![(Anchor::Fixed, 1.0)],
            Base::Rotation { omega0, .. } => (0..m as i64)
                .map(|k| {
                    (
                        self.shift(&Anchor::Angle(omega0.clone()), k),
                        1.0 / m as f64,
                    )
                })
                .collect(),
            Base::Iid { .. } => (0..m as u64)
                .map(|k| {
                    (
                        Anchor::Sequence {
                            seed: splitmix64(seed ^ splitmix64(k + 1)),
                            offset: 0,
                        },
                        1.0 / m as f64,
                    )
                })
                .collect(),
        }
    }

    /// Weighted average of `f` over sampled fibers.
    pub fn integrate_over_omega<F>(&self, m: usize, seed: u64, f: F) -> Result<Complex64>
    where
        F: Fn(&Anchor) -> Result<Complex64>,
    {
        let mut acc = Complex64::new(0.0, 0.0);
        for (anchor, w) in self.sample_fibers(m, seed) {
            acc += f(&anchor)? * w;
        }
        Ok(acc)
    }

    /// `E[∏ 1/|slope at x₀|]` over one i.i.d. step, exact for finite alphabets.
    pub fn iid_mean_inverse_slope(&self, x0: &Rational) -> Option<f64> {
        match (&self.base, &self.rule) {
            (Base::Iid { probs, .. }, MapRule::PerSymbol(_)) => Some(
                probs
                    .iter()
                    .zip(&self.cached)
                    .map(|(p, m)| {
                        let b = &m.branches()[m.branch_index(x0)];
                        p / Scalar::to_f64(&b.slope.abs())
                    })
                    .sum(),
            ),
            (Base::Iid { .. }, MapRule::Single(_)) => {
                let m = &self.cached[0];
                Some(1.0 / Scalar::to_f64(&m.branches()[m.branch_index(x0)].slope.abs()))
            }
            _ => None,
        }
    }
}
