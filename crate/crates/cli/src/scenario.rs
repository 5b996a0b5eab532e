//! Scenario configuration: driving, maps, targets, limiting model and run options.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use qcp_core::checker::{scaling_variation_guard, Status};
use qcp_core::cpmodel::{CompoundPoissonModel, ModelComponent};
use qcp_core::driving::{Anchor, Base, BaseSpec, DrivingSystem, MapRule};
use qcp_core::ei::{
    backward_inverse_slopes, beta_limit, series_lag, slope_range, theta_closed_form, theta_series, ClosedFormParams,
    ThetaFunction, ThetaKind,
};
use qcp_core::error::{Error, Result};
use qcp_core::maps::MapSpec;
use qcp_core::scalar::{parse_rational, Rational, Scalar};
use qcp_core::targets::{TargetFamily, TargetSpec};

use crate::error::CliError;

/// How fiber states select their maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MapsSpec {
    Single {
        map: MapSpec,
    },
    PerSymbol {
        maps: Vec<MapSpec>,
    },
    /// Central-branch maps with slope `gamma0 + gamma1·ω` over a rotation.
    CentralSlope {
        gamma0: String,
        gamma1: String,
        #[serde(default = "one")]
        left: usize,
        #[serde(default = "one")]
        right: usize,
    },
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeriodicPart {
    pub weight: String,
    pub alpha: String,
}

/// The limiting extremal-index model used for `pmf` and `compare`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSpec {
    Poisson,
    Periodic {
        alpha: String,
    },
    MultiIndependent {
        periodic: Vec<PeriodicPart>,
        aperiodic_weight: String,
    },
    OverlapAperiodic {
        p1: String,
        p2: String,
        alpha: String,
    },
    OverlapPeriodic {
        p1: String,
        p2: String,
        alpha: String,
        gamma1: String,
        gamma2: String,
    },
    /// θ built from the exact cluster table at the default anchor.
    ExactSeries {
        #[serde(default)]
        k_max: Option<usize>,
    },
    /// `Θ = ∫ t_ω θ_ω dm` with `θ_ω` from backward slope products at `center`.
    RandomProduct {
        center: String,
        #[serde(default = "default_fibers")]
        fibers: usize,
    },
    /// Pólya-Aeppli with `ρ = ζ = Σ p_i/γ_i`, slopes read at `center`.
    IidZeta {
        center: String,
    },
}

fn default_fibers() -> usize {
    256
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectralSpec {
    pub bins: usize,
    pub burn_in: usize,
    pub steps: usize,
    /// Target measures `Leb(H)`; `n = round(t̄/Leb(H))`.
    pub leb: Vec<f64>,
    pub s: Vec<f64>,
}

impl Default for SpectralSpec {
    fn default() -> Self {
        Self {
            bins: qcp_core::spectral::DEFAULT_BINS,
            burn_in: qcp_core::spectral::DEFAULT_BURN_IN,
            steps: 400,
            leb: vec![1e-2, 1e-3],
            s: vec![PI / 2.0, PI],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSpec {
    pub n: u64,
    pub samples: u64,
    pub seed: u64,
    pub s_grid: Vec<f64>,
    /// Finite `n` values tabulated in `beta.csv`.
    pub beta_n_grid: Vec<u64>,
    /// Largest lag tabulated in `beta.csv`.
    pub k_max: usize,
    /// Largest count tabulated in `pmf.csv`.
    pub pmf_k_max: usize,
    pub tv_threshold: f64,
    pub spectral: SpectralSpec,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            n: 2000,
            samples: 1_000_000,
            seed: 1,
            s_grid: (1..=8).map(|i| i as f64 * PI / 8.0).collect(),
            beta_n_grid: vec![100, 1_000, 10_000],
            k_max: 8,
            pmf_k_max: 40,
            tv_threshold: 0.02,
            spectral: SpectralSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    /// Expected limiting law family.
    #[serde(default)]
    pub law: String,
    pub driving: BaseSpec,
    pub maps: MapsSpec,
    pub target: TargetSpec,
    pub model: ModelSpec,
    #[serde(default)]
    pub run: RunSpec,
}

/// A validated scenario with its built objects.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub scenario: Scenario,
    pub driving: DrivingSystem,
    pub target: TargetFamily,
    pub anchor: Anchor,
}

fn num(s: &str) -> Result<f64> {
    parse_rational(s).map(|r| Scalar::to_f64(&r))
}

impl Scenario {
    pub fn from_toml(text: &str) -> std::result::Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.message().trim().to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// Builds and validates the driving system and targets.
    pub fn prepare(&self) -> Result<Prepared> {
        let base = self.driving.build()?;
        let rule = match &self.maps {
            MapsSpec::Single { map } => MapRule::Single(map.clone()),
            MapsSpec::PerSymbol { maps } => MapRule::PerSymbol(maps.clone()),
            MapsSpec::CentralSlope {
                gamma0,
                gamma1,
                left,
                right,
            } => MapRule::CentralSlope {
                gamma0: parse_rational(gamma0)?,
                gamma1: parse_rational(gamma1)?,
                left: *left,
                right: *right,
            },
        };
        let driving = DrivingSystem::new(base, rule)?;
        let target = self.target.build()?;
        target.validate_against(&driving)?;
        let guard = scaling_variation_guard(&driving, &target)?;
        if guard.status == Status::Fail {
            return Err(Error::Scenario(format!("scaling-variation guard violated: {}", guard.witness)));
        }
        let run = &self.run;
        if run.n == 0 || run.samples == 0 {
            return Err(Error::InvalidParameter {
                name: "run",
                reason: "n and samples must be positive".into(),
            });
        }
        if !(run.tv_threshold > 0.0) {
            return Err(Error::InvalidParameter {
                name: "tv_threshold",
                reason: "must be positive".into(),
            });
        }
        let anchor = driving.default_anchor();
        Ok(Prepared {
            scenario: self.clone(),
            driving,
            target,
            anchor,
        })
    }
}

impl Prepared {
    /// `t̄ = ∫ t_ω dm`.
    pub fn t_bar(&self) -> f64 {
        match self.driving.base() {
            Base::Iid { probs, .. } => self.target.t_mean(probs),
            _ => Scalar::to_f64(&self.target.t_at(&self.driving.state_at(&self.anchor, 0))),
        }
    }

    /// θ from the exact limit cluster table at the default anchor.
    pub fn exact_theta(&self, k_max: usize) -> Result<ThetaFunction> {
        let table = beta_limit(&self.driving, &self.target, &self.anchor, k_max)?;
        Ok(theta_series(&table))
    }

    /// The limiting compound Poisson model.
    pub fn model(&self) -> Result<CompoundPoissonModel> {
        let t_bar = self.t_bar();
        let closed = |p: ClosedFormParams| -> Result<CompoundPoissonModel> {
            CompoundPoissonModel::from_theta(t_bar, theta_closed_form(&p)?)
        };
        match &self.scenario.model {
            ModelSpec::Poisson => closed(ClosedFormParams::Aperiodic),
            ModelSpec::Periodic { alpha } => closed(ClosedFormParams::Periodic { alpha: num(alpha)? }),
            ModelSpec::MultiIndependent {
                periodic,
                aperiodic_weight,
            } => closed(ClosedFormParams::MultiIndependent {
                periodic: periodic
                    .iter()
                    .map(|p| Ok((num(&p.weight)?, num(&p.alpha)?)))
                    .collect::<Result<_>>()?,
                aperiodic_weight: num(aperiodic_weight)?,
            }),
            ModelSpec::OverlapAperiodic { p1, p2, alpha } => closed(ClosedFormParams::OverlapAperiodic {
                p1: num(p1)?,
                p2: num(p2)?,
                alpha: num(alpha)?,
            }),
            ModelSpec::OverlapPeriodic {
                p1,
                p2,
                alpha,
                gamma1,
                gamma2,
            } => closed(ClosedFormParams::OverlapPeriodic {
                p1: num(p1)?,
                p2: num(p2)?,
                alpha: num(alpha)?,
                gamma1: num(gamma1)?,
                gamma2: num(gamma2)?,
            }),
            ModelSpec::ExactSeries { k_max } => {
                let k = match k_max {
                    Some(k) => *k,
                    None => series_lag(slope_range(&self.driving)?.0),
                };
                CompoundPoissonModel::from_theta(t_bar, self.exact_theta(k)?)
            }
            ModelSpec::RandomProduct { center, fibers } => {
                let x0 = parse_rational(center)?;
                let len = series_lag(slope_range(&self.driving)?.0) + 1;
                let components = self
                    .driving
                    .sample_fibers(*fibers, self.scenario.run.seed)
                    .into_iter()
                    .map(|(a, w)| {
                        let t = Scalar::to_f64(&self.target.t_at(&self.driving.state_at(&a, 0)));
                        let inverse_slopes = backward_inverse_slopes(&self.driving, &a, &x0, len)?;
                        Ok(ModelComponent {
                            weight: t * w,
                            theta: theta_closed_form(&ClosedFormParams::RandomProduct { inverse_slopes })?,
                        })
                    })
                    .collect::<Result<_>>()?;
                CompoundPoissonModel::new(components)
            }
            ModelSpec::IidZeta { center } => {
                let x0: Rational = parse_rational(center)?;
                let maps = self.driving.map_set(1)?;
                let slopes = maps
                    .iter()
                    .map(|m| Scalar::to_f64(&m.branches()[m.branch_index(&x0)].slope).abs())
                    .collect();
                let probs = match self.driving.base() {
                    Base::Iid { probs, .. } if probs.len() == maps.len() => probs.clone(),
                    _ => {
                        return Err(Error::Scenario(
                            "iid-zeta needs one map per symbol of an i.i.d. driving".into(),
                        ))
                    }
                };
                closed(ClosedFormParams::IidZeta { probs, slopes })
            }
        }
    }
}

/// Closed-form pmf for Poisson and Pólya-Aeppli models.
pub fn closed_form_pmf(model: &CompoundPoissonModel, k_max: usize) -> Result<Option<Vec<f64>>> {
    let [c] = model.components() else {
        return Ok(None);
    };
    let rho = match &c.theta.kind {
        ThetaKind::Aperiodic => return Ok(Some(qcp_core::cpmodel::pmf_poisson(c.weight, k_max))),
        ThetaKind::Periodic { alpha } => *alpha,
        ThetaKind::Geometric { zeta } => *zeta,
        _ => return Ok(None),
    };
    qcp_core::cpmodel::pmf_polya_aeppli(c.weight * (1.0 - rho), rho, k_max).map(Some)
}
