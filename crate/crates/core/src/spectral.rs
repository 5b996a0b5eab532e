//! Ulam discretization of the transfer-operator cocycle and its twisted perturbation.
//!
//! The twisted operator is `L_{n,s} f = L(f · e^{is 1_H})`. On bins it acts on
//! mass vectors from the left: `m'_j = Σ_i m_i τ_i P(i,j)`, where
//! `τ_i = frac_i e^{is} + (1 − frac_i)` and `frac_i` is the share of bin `i` in `H`.

use std::collections::HashMap;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::driving::{Anchor, DrivingSystem};
use crate::error::{invalid, Error, Result};
use crate::intervals::IntervalSet;
use crate::maps::PiecewiseLinearMap;
use crate::targets::TargetFamily;

/// Default bin count.
pub const DEFAULT_BINS: usize = 1 << 14;

/// Default number of untwisted steps before twisting.
pub const DEFAULT_BURN_IN: usize = 50;

/// Sparse row-stochastic Ulam matrix with an optional source-side twist.
#[derive(Debug, Clone, PartialEq)]
pub struct UlamOperator {
    bins: usize,
    rows: Vec<Vec<(u32, f64)>>,
    twist: Option<Vec<Complex64>>,
}

/// `build_ulam`: entries `Leb(B_i ∩ T^{-1} B_j)/Leb(B_i)` from branch images.
pub fn build_ulam(
    map: &PiecewiseLinearMap<f64>,
    bins: usize,
    twist: Option<(&IntervalSet<f64>, f64)>,
) -> Result<UlamOperator> {
    if bins < 2 {
        return Err(invalid("bins", "at least two bins are required"));
    }
    let nb = bins as f64;
    let rows = (0..bins)
        .into_par_iter()
        .map(|i| {
            let (lo, hi) = (i as f64 / nb, (i + 1) as f64 / nb);
            let mut acc: Vec<(u32, f64)> = Vec::new();
            let mut b = map.branch_index(&lo);
            let branches = map.branches();
            while b < branches.len() && branches[b].lo < hi {
                let br = &branches[b];
                let (x0, x1) = (lo.max(br.lo), hi.min(br.hi));
                if x0 < x1 {
                    let (y0, y1) = (br.apply(&x0), br.apply(&x1));
                    let (y0, y1) = if y0 <= y1 { (y0, y1) } else { (y1, y0) };
                    let scale = nb / br.slope.abs();
                    let j0 = ((y0 * nb).floor().max(0.0) as usize).min(bins - 1);
                    let j1 = ((y1 * nb).ceil() as usize).clamp(j0 + 1, bins);
                    for j in j0..j1 {
                        let overlap = (y1.min((j + 1) as f64 / nb) - y0.max(j as f64 / nb)).max(0.0);
                        if overlap > 0.0 {
                            acc.push((j as u32, overlap * scale));
                        }
                    }
                }
                b += 1;
            }
            acc.sort_by_key(|e| e.0);
            let mut row: Vec<(u32, f64)> = Vec::with_capacity(acc.len());
            for (j, p) in acc {
                match row.last_mut() {
                    Some(last) if last.0 == j => last.1 += p,
                    _ => row.push((j, p)),
                }
            }
            row
        })
        .collect();
    let op = UlamOperator {
        bins,
        rows,
        twist: None,
    };
    Ok(match twist {
        Some((h, s)) => op.with_twist(h, s),
        None => op,
    })
}

impl UlamOperator {
    pub fn bins(&self) -> usize {
        self.bins
    }

    /// Untwisted entry `P(i,j)`.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.rows[i]
            .iter()
            .find(|e| e.0 as usize == j)
            .map_or(0.0, |e| e.1)
    }

    /// Twist factor of bin `i` (1 when untwisted).
    pub fn factor(&self, i: usize) -> Complex64 {
        self.twist.as_ref().map_or(Complex64::new(1.0, 0.0), |t| t[i])
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.iter().map(|e| e.1).sum()).collect()
    }

    pub fn nonzeros(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// Same matrix twisted by `e^{is 1_H}`.
    pub fn with_twist(&self, h: &IntervalSet<f64>, s: f64) -> Self {
        let nb = self.bins as f64;
        let e = Complex64::from_polar(1.0, s);
        let factors = (0..self.bins)
            .map(|i| {
                let frac = h.intersect_interval(&(i as f64 / nb), &((i + 1) as f64 / nb)).length() * nb;
                e * frac + (1.0 - frac)
            })
            .collect();
        Self {
            bins: self.bins,
            rows: self.rows.clone(),
            twist: Some(factors),
        }
    }

    /// One push of a mass vector.
    pub fn push(&self, mass: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.bins];
        for (i, row) in self.rows.iter().enumerate() {
            let m = mass[i] * self.factor(i);
            if m == Complex64::new(0.0, 0.0) {
                continue;
            }
            for &(j, p) in row {
                out[j as usize] += m * p;
            }
        }
        out
    }

    /// Dense matrix `τ_i P(i,j)`.
    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let mut m = DMatrix::from_element(self.bins, self.bins, Complex64::new(0.0, 0.0));
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, p) in row {
                m[(i, j as usize)] = self.factor(i) * p;
            }
        }
        m
    }

    /// Coordinate-format dump, one `i j re im` line per nonzero.
    pub fn to_coordinate_text(&self) -> String {
        let mut s = String::new();
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, p) in row {
                let v = self.factor(i) * p;
                s.push_str(&format!("{i} {j} {:e} {:e}\n", v.re, v.im));
            }
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpectralConfig {
    pub bins: usize,
    pub burn_in: usize,
    pub steps: usize,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self {
            bins: DEFAULT_BINS,
            burn_in: DEFAULT_BURN_IN,
            steps: 400,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CocycleSpectralResult {
    /// Per-step mass ratios `λ̂_j`.
    pub multipliers: Vec<Complex64>,
    /// `Σ_j log λ̂_j`.
    pub log_product: Complex64,
    /// L¹ distance between consecutive normalized densities.
    pub residuals: Vec<f64>,
    /// Normalized density after the last step.
    pub density: Vec<Complex64>,
    /// Mean of `Leb(H_{σ^j ω,n})` over the twisted steps.
    pub mean_target_measure: f64,
}

impl CocycleSpectralResult {
    /// Geometric mean of the per-step multipliers.
    pub fn geometric_mean(&self) -> Complex64 {
        (self.log_product / self.multipliers.len().max(1) as f64).exp()
    }
}

fn normalize(mass: &mut [Complex64], step: usize) -> Result<Complex64> {
    let total: Complex64 = mass.iter().sum();
    if !(total.norm() > 1e-300) {
        return Err(Error::Underflow { step });
    }
    for m in mass.iter_mut() {
        *m /= total;
    }
    Ok(total)
}

/// `cocycle_multiplier`: burn-in with the untwisted cocycle, then `steps` twisted pushes.
pub fn cocycle_multiplier(
    d: &DrivingSystem,
    f: &TargetFamily,
    anchor: &Anchor,
    n: u128,
    s: f64,
    cfg: &SpectralConfig,
) -> Result<CocycleSpectralResult> {
    if cfg.steps == 0 {
        return Err(invalid("steps", "at least one step is required"));
    }
    let mut cache: HashMap<String, UlamOperator> = HashMap::new();
    let mut operator = |j: i64| -> Result<UlamOperator> {
        let state = d.state_at(anchor, j);
        let key = state.describe();
        if let Some(op) = cache.get(&key) {
            return Ok(op.clone());
        }
        let op = build_ulam(&d.map_for::<f64>(&state)?, cfg.bins, None)?;
        if !matches!(state, crate::driving::FiberState::Angle(_)) {
            cache.insert(key, op.clone());
        }
        Ok(op)
    };
    let start = -(cfg.burn_in as i64);
    let mut mass = vec![Complex64::new(1.0 / cfg.bins as f64, 0.0); cfg.bins];
    for j in start..0 {
        mass = operator(j)?.push(&mass);
        normalize(&mut mass, (j - start) as usize)?;
    }
    let mut multipliers = Vec::with_capacity(cfg.steps);
    let mut residuals = Vec::with_capacity(cfg.steps);
    let mut log_product = Complex64::new(0.0, 0.0);
    let mut measure = 0.0;
    for j in 0..cfg.steps as i64 {
        let h = f.target_at::<f64>(d, anchor, j, n)?.set;
        measure += h.length();
        let op = operator(j)?.with_twist(&h, s);
        let mut next = op.push(&mass);
        let lambda = normalize(&mut next, cfg.burn_in + j as usize)?;
        residuals.push(next.iter().zip(&mass).map(|(a, b)| (a - b).norm()).sum());
        log_product += lambda.ln();
        multipliers.push(lambda);
        mass = next;
    }
    Ok(CocycleSpectralResult {
        multipliers,
        log_product,
        residuals,
        density: mass,
        mean_target_measure: measure / cfg.steps as f64,
    })
}

/// `perturbation_ratio`: `(1 − λ̂_geo)/Leb(H)`.
pub fn perturbation_ratio(result: &CocycleSpectralResult, leb_h: f64) -> Result<Complex64> {
    if !(leb_h > 0.0) {
        return Err(Error::ZeroMeasure("H"));
    }
    Ok((Complex64::new(1.0, 0.0) - result.geometric_mean()) / leb_h)
}

/// `eta_bound`: `K_ω λ₀ |1 − e^{is}| ν(H)`.
pub fn eta_bound(lambda0: f64, s: f64, leb_h: f64, k_omega: f64) -> f64 {
    k_omega * lambda0 * (Complex64::new(1.0, 0.0) - Complex64::from_polar(1.0, s)).norm() * leb_h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::{beta_map, central_branch};
    use std::f64::consts::PI;

    #[test]
    fn tripling_map_is_uniform() {
        let map = beta_map::<f64>(3, 0.0).unwrap();
        let op = build_ulam(&map, 3, None).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((op.entry(i, j) - 1.0 / 3.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn rows_are_stochastic() {
        let map = central_branch::<f64>(2.0, 1, 1).unwrap();
        let op = build_ulam(&map, 1000, None).unwrap();
        assert!(op.row_sums().iter().all(|r| (r - 1.0).abs() < 1e-12));
        let beta = beta_map::<f64>(5, 2f64.sqrt() - 1.0).unwrap();
        let op = build_ulam(&beta, 777, None).unwrap();
        assert!(op.row_sums().iter().all(|r| (r - 1.0).abs() < 1e-12));
        assert!(op.to_coordinate_text().lines().count() == op.nonzeros());
    }

    #[test]
    fn twist_examples() {
        let map = central_branch::<f64>(2.0, 1, 1).unwrap();
        let h = IntervalSet::interval(0.25, 0.5);
        let op = build_ulam(&map, 4, Some((&h, PI))).unwrap();
        assert!((op.factor(1) - Complex64::new(-1.0, 0.0)).norm() < 1e-15);
        assert_eq!(op.factor(0), Complex64::new(1.0, 0.0));
        let zero = build_ulam(&map, 4, Some((&h, 0.0))).unwrap();
        let plain = build_ulam(&map, 4, None).unwrap();
        assert_eq!(zero.to_dense(), plain.to_dense());
        for i in 0..4 {
            for j in 0..4 {
                assert!(op.to_dense()[(i, j)].norm() <= plain.entry(i, j) + 1e-15);
            }
        }
    }

    #[test]
    fn eta_examples() {
        assert_eq!(eta_bound(1.0, 0.0, 0.3, 2.0), 0.0);
        assert!((eta_bound(1.0, PI, 0.01, 2.0) - 0.04).abs() < 1e-15);
        assert_eq!(eta_bound(1.0, 1.0, 0.0, 2.0), 0.0);
    }
}
