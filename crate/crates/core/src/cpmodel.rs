//! The limiting compound-Poisson law `Z = Σ_{k≤N} X_k`.
//!
//! The model is `φ(s) = exp(−(1 − e^{is}) Θ(s))` with `Θ(s) = ∫ t_ω θ_ω(s) dm`,
//! stored as a finite mixture `Θ = Σ_i c_i θ_i` of extremal-index functions.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

use crate::ei::ThetaFunction;
use crate::error::{invalid, Error, Result};

/// Default quadrature grid for lattice inversion.
pub const DEFAULT_GRID: usize = 4096;

/// Tolerance below which negative masses are clipped to zero.
pub const CLIP_TOLERANCE: f64 = 1e-9;

/// One mixture component `c · θ`, where `c` carries the `t`-weight.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelComponent {
    pub weight: f64,
    pub theta: ThetaFunction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompoundPoissonModel {
    components: Vec<ModelComponent>,
}

/// Mean and variance of `Z` and of the jump `X₁`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
    pub jump_mean: f64,
    pub jump_variance: f64,
}

/// Jump law recovered by inverting `φ_{X₁}`.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpLaw {
    /// `pmf[k] = P(X₁ = k)`; `pmf[0]` is zero.
    pub pmf: Vec<f64>,
    /// Mass found at zero before it was removed.
    pub zero_mass: f64,
    /// Total mass before renormalization.
    pub raw_total: f64,
}

impl CompoundPoissonModel {
    pub fn new(components: Vec<ModelComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(invalid("components", "at least one component is required"));
        }
        for c in &components {
            if !(c.weight >= 0.0 && c.weight.is_finite()) {
                return Err(invalid("t", format!("weight {} must be finite and nonnegative", c.weight)));
            }
        }
        let model = Self { components };
        if model.t_bar() > 0.0 && !(model.vartheta() > 0.0) {
            return Err(Error::ZeroMeasure("ϑ"));
        }
        Ok(model)
    }

    /// Single fiber law `exp(−t(1−e^{is})θ(s))`.
    pub fn from_theta(t: f64, theta: ThetaFunction) -> Result<Self> {
        Self::new(vec![ModelComponent { weight: t, theta }])
    }

    pub fn poisson(t: f64) -> Result<Self> {
        Self::from_theta(t, ThetaFunction::aperiodic())
    }

    /// Pólya-Aeppli law from a periodic extremal index with contraction `α`:
    /// `ϑ = t(1−α)` and `ρ = α`.
    pub fn polya_aeppli(t: f64, alpha: f64) -> Result<Self> {
        Self::from_theta(t, ThetaFunction::periodic(alpha))
    }

    pub fn components(&self) -> &[ModelComponent] {
        &self.components
    }

    /// Same model with every `t`-weight multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.components
                .iter()
                .map(|c| ModelComponent {
                    weight: c.weight * factor,
                    theta: c.theta.clone(),
                })
                .collect(),
        )
    }

    /// `t̄ = ∫ t_ω dm`.
    pub fn t_bar(&self) -> f64 {
        self.components.iter().map(|c| c.weight).sum()
    }

    /// `ϑ = ∫ t_ω θ_{ω,0} dm`.
    pub fn vartheta(&self) -> f64 {
        self.components.iter().map(|c| c.weight * c.theta.theta0()).sum()
    }

    /// `Σ̄ = ∫ t_ω (1 + 2Σ_ω) dm`.
    pub fn sigma_bar(&self) -> f64 {
        self.components
            .iter()
            .map(|c| c.weight * (1.0 + 2.0 * c.theta.sigma()))
            .sum()
    }

    /// `Θ(s)`.
    pub fn big_theta(&self, s: f64) -> Complex64 {
        self.components.iter().map(|c| c.theta.eval(s) * c.weight).sum()
    }

    /// `φ(s) = exp(−(1 − e^{is}) Θ(s))`.
    pub fn cf(&self, s: f64) -> Complex64 {
        let z = Complex64::from_polar(1.0, s);
        (-(Complex64::new(1.0, 0.0) - z) * self.big_theta(s)).exp()
    }

    /// `φ_{X₁}(s) = 1 + (e^{is} − 1) Θ(s)/ϑ`.
    pub fn jump_cf(&self, s: f64) -> Complex64 {
        let z = Complex64::from_polar(1.0, s);
        Complex64::new(1.0, 0.0) + (z - 1.0) * self.big_theta(s) / self.vartheta()
    }

    /// `W_ℓ = ∫ t_ω w_{ω,ℓ} dm` for `ℓ < len`.
    pub fn mixed_weights(&self, len: usize) -> Vec<f64> {
        let mut w = vec![0.0; len];
        for c in &self.components {
            for (acc, v) in w.iter_mut().zip(c.theta.weights(len)) {
                *acc += c.weight * v;
            }
        }
        w
    }

    /// Jump pmf `P(X₁ = k)` for `k ≤ k_max`, from second differences of the weights.
    pub fn jump_pmf(&self, k_max: usize) -> Result<Vec<f64>> {
        let vt = self.vartheta();
        if !(vt > 0.0) {
            return Err(Error::ZeroMeasure("ϑ"));
        }
        let w = self.mixed_weights(k_max + 1);
        let at = |l: isize| if l < 0 { 0.0 } else { w[l as usize] };
        let mut g = vec![0.0; k_max + 1];
        for (k, gk) in g.iter_mut().enumerate().skip(1) {
            let k = k as isize;
            *gk = if k == 1 {
                (self.t_bar() - 2.0 * at(0) + at(1)) / vt
            } else {
                (at(k) - 2.0 * at(k - 1) + at(k - 2)) / vt
            };
        }
        Ok(g)
    }

    /// `moments`: `(E Z, Var Z, E X₁, Var X₁)`.
    pub fn moments(&self) -> Result<Moments> {
        let vt = self.vartheta();
        if !(vt > 0.0) {
            return Err(Error::ZeroMeasure("ϑ"));
        }
        let (t, s) = (self.t_bar(), self.sigma_bar());
        Ok(Moments {
            mean: t,
            variance: s,
            jump_mean: t / vt,
            jump_variance: s / vt - (t / vt).powi(2),
        })
    }

    /// `pmf_levy`: `P(Z = k) = (1/2π) ∫ e^{−isk} φ(s) ds` on a uniform grid of `grid` nodes.
    pub fn pmf_levy(&self, k_max: usize, grid: usize) -> Result<Vec<f64>> {
        if grid < 4 * k_max.max(1) {
            return Err(invalid("grid", format!("grid {grid} must be at least 4·k_max = {}", 4 * k_max)));
        }
        let phi: Vec<Complex64> = (0..grid).map(|j| self.cf(2.0 * PI * j as f64 / grid as f64)).collect();
        let raw = lattice_inversion(&phi, k_max);
        let pmf = clip(raw)?;
        check_mass(&pmf)?;
        Ok(pmf)
    }

    /// `pmf_pgf`: compound-Poisson recursion `P(k) = (ϑ/k) Σ_j j g_j P(k−j)`.
    pub fn pmf_pgf(&self, k_max: usize) -> Result<Vec<f64>> {
        if self.t_bar() == 0.0 {
            let mut p = vec![0.0; k_max + 1];
            p[0] = 1.0;
            return Ok(p);
        }
        let g = self.jump_pmf(k_max)?;
        let pmf = compound_recursion(self.vartheta(), &g, k_max);
        check_mass(&pmf)?;
        Ok(pmf)
    }

    /// `x1_law`: inverts `φ_{X₁}`, removes the mass at zero, and renormalizes.
    pub fn x1_law(&self, k_max: usize, grid: usize) -> Result<JumpLaw> {
        if !(self.vartheta() > 0.0) {
            return Err(Error::ZeroMeasure("ϑ"));
        }
        let grid = grid.max(4 * k_max.max(1));
        let phi: Vec<Complex64> = (0..grid).map(|j| self.jump_cf(2.0 * PI * j as f64 / grid as f64)).collect();
        let mut raw = lattice_inversion(&phi, k_max);
        for (k, v) in raw.iter().enumerate() {
            if *v < -1e-6 {
                return Err(Error::NegativeMass { k, value: *v });
            }
        }
        let zero_mass = raw[0];
        if zero_mass.abs() > 1e-6 {
            return Err(Error::NegativeMass { k: 0, value: zero_mass });
        }
        raw[0] = 0.0;
        for v in raw.iter_mut() {
            *v = v.max(0.0);
        }
        let raw_total: f64 = raw.iter().sum();
        if raw_total < 1.0 - 1e-6 {
            return Err(Error::InsufficientMass {
                mass: raw_total,
                tol: 1e-6,
            });
        }
        Ok(JumpLaw {
            pmf: raw.iter().map(|v| v / raw_total).collect(),
            zero_mass,
            raw_total,
        })
    }

    /// Smallest `k_max` whose pgf-pmf carries at least `1 − eps` of the mass.
    pub fn covering_k_max(&self, eps: f64, cap: usize) -> usize {
        let mut k = 16;
        while k < cap {
            if let Ok(p) = self.pmf_pgf_unchecked(k) {
                if p.iter().sum::<f64>() >= 1.0 - eps {
                    return k;
                }
            }
            k *= 2;
        }
        cap
    }

    fn pmf_pgf_unchecked(&self, k_max: usize) -> Result<Vec<f64>> {
        if self.t_bar() == 0.0 {
            return Ok(vec![1.0]);
        }
        Ok(compound_recursion(self.vartheta(), &self.jump_pmf(k_max)?, k_max))
    }

    /// `sample`: `count` draws of `Z`, returned as counts per value.
    ///
    /// Draws are split into fixed shards with independent ChaCha8 streams, so
    /// the result depends only on `(count, seed)`.
    pub fn sample(&self, count: u64, seed: u64) -> Result<Vec<u64>> {
        let vt = self.vartheta();
        if self.t_bar() == 0.0 || vt < 1e-300 {
            return Ok(vec![count]);
        }
        let mut len = 64;
        let jumps = loop {
            let g = self.jump_pmf(len)?;
            if g.iter().sum::<f64>() >= 1.0 - 1e-13 || len >= 1 << 16 {
                break g;
            }
            len *= 2;
        };
        let mut cdf = Vec::with_capacity(jumps.len());
        let mut acc = 0.0;
        for g in &jumps {
            acc += g.max(0.0);
            cdf.push(acc);
        }
        let total = acc;
        let poisson = Poisson::new(vt).map_err(|e| invalid("vartheta", e.to_string()))?;
        let shards = shard_sizes(count);
        let partial: Vec<Vec<u64>> = shards
            .par_iter()
            .enumerate()
            .map(|(i, &size)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                let mut counts = Vec::new();
                for _ in 0..size {
                    let n = poisson.sample(&mut rng) as u64;
                    let mut z = 0usize;
                    for _ in 0..n {
                        let u: f64 = rng.random::<f64>() * total;
                        z += cdf.partition_point(|c| *c <= u).min(cdf.len() - 1);
                    }
                    if counts.len() <= z {
                        counts.resize(z + 1, 0);
                    }
                    counts[z] += 1;
                }
                counts
            })
            .collect();
        Ok(merge_counts(partial))
    }
}

/// Splits `count` into shards of at most 2^16 draws.
pub fn shard_sizes(count: u64) -> Vec<u64> {
    const SHARD: u64 = 1 << 16;
    let full = count / SHARD;
    let mut v = vec![SHARD; full as usize];
    if count % SHARD != 0 {
        v.push(count % SHARD);
    }
    v
}

/// Elementwise sum of count vectors of differing lengths.
pub fn merge_counts(parts: Vec<Vec<u64>>) -> Vec<u64> {
    let len = parts.iter().map(Vec::len).max().unwrap_or(0);
    let mut out = vec![0u64; len];
    for p in parts {
        for (o, c) in out.iter_mut().zip(p) {
            *o += c;
        }
    }
    out
}

fn lattice_inversion(phi: &[Complex64], k_max: usize) -> Vec<f64> {
    let g = phi.len();
    (0..=k_max)
        .map(|k| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (j, p) in phi.iter().enumerate() {
                let idx = (j * k) % g;
                acc += p * Complex64::from_polar(1.0, -2.0 * PI * idx as f64 / g as f64);
            }
            acc.re / g as f64
        })
        .collect()
}

fn clip(raw: Vec<f64>) -> Result<Vec<f64>> {
    raw.into_iter()
        .enumerate()
        .map(|(k, v)| {
            if v < -CLIP_TOLERANCE {
                Err(Error::NegativeMass { k, value: v })
            } else {
                Ok(v.max(0.0))
            }
        })
        .collect()
}

fn check_mass(pmf: &[f64]) -> Result<()> {
    let mass: f64 = pmf.iter().sum();
    if mass < 1.0 - 1e-6 {
        Err(Error::InsufficientMass { mass, tol: 1e-6 })
    } else {
        Ok(())
    }
}

fn compound_recursion(vartheta: f64, g: &[f64], k_max: usize) -> Vec<f64> {
    let mut p = vec![0.0; k_max + 1];
    p[0] = (-vartheta).exp();
    for k in 1..=k_max {
        let mut acc = 0.0;
        for j in 1..=k.min(g.len() - 1) {
            acc += j as f64 * g[j] * p[k - j];
        }
        p[k] = vartheta * acc / k as f64;
    }
    p
}

/// `pmf_polya_aeppli`: `e^{−ϑ} Σ_{j=1}^k ϑ^j/j! ρ^{k−j}(1−ρ)^j C(k−1, j−1)`.
pub fn pmf_polya_aeppli(vartheta: f64, rho: f64, k_max: usize) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&rho) {
        return Err(invalid("rho", format!("{rho} must lie in [0,1)")));
    }
    if !(vartheta > 0.0) {
        return Err(invalid("vartheta", format!("{vartheta} must be positive")));
    }
    if rho == 0.0 {
        return Ok(pmf_poisson(vartheta, k_max));
    }
    let e = (-vartheta).exp();
    let mut p = vec![e; k_max + 1];
    for (k, pk) in p.iter_mut().enumerate().skip(1) {
        let mut term = vartheta * rho.powi(k as i32 - 1) * (1.0 - rho);
        let mut sum = term;
        for j in 1..k {
            term *= vartheta / (j + 1) as f64 * (1.0 - rho) / rho * (k - j) as f64 / j as f64;
            sum += term;
        }
        *pk = e * sum;
    }
    Ok(p)
}

/// Poisson pmf for `k ≤ k_max`.
pub fn pmf_poisson(lambda: f64, k_max: usize) -> Vec<f64> {
    let mut p = vec![(-lambda).exp(); k_max + 1];
    for k in 1..=k_max {
        p[k] = p[k - 1] * lambda / k as f64;
    }
    p
}

/// Discrete convolution truncated to the length of `a`.
pub fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    (0..a.len())
        .map(|k| (0..=k.min(b.len().saturating_sub(1))).map(|j| b[j] * a[k - j]).sum())
        .collect()
}

/// Total variation distance `½ Σ |p − q|`; mass missing from either table counts as one extra cell.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    let len = p.len().max(q.len());
    let at = |v: &[f64], k: usize| v.get(k).copied().unwrap_or(0.0);
    let head: f64 = (0..len).map(|k| (at(p, k) - at(q, k)).abs()).sum();
    let tail = (p.iter().sum::<f64>() - q.iter().sum::<f64>()).abs();
    0.5 * (head + tail)
}
