//! Monte Carlo hit counts `S_{ω,n,n}(x) = Σ_{j<n} 1_{H_{σ^j ω,n}}(T^j_ω x)` for
//! Lebesgue-distributed `x`.
//!
//! Each sample is tracked as a window `[a, a+w)` on which the current point is
//! uniformly distributed. A window crossing a cut of the partition into branch
//! and target cells is restricted to one cell with probability proportional to
//! length, and an expanded window is replaced by a uniformly chosen sub-window,
//! so the law of the orbit is exact up to floating-point rounding.

use std::collections::HashMap;

use num_complex::Complex64;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::cpmodel::{merge_counts, total_variation, CompoundPoissonModel};
use crate::driving::{Anchor, DrivingSystem};
use crate::error::{invalid, Result};
use crate::targets::TargetFamily;

/// Samples per RNG shard.
pub const SHARD_SIZE: u64 = 1 << 14;

const REFINE_BITS: u32 = 20;
const INITIAL_WIDTH: f64 = 1.0 / (1u64 << 40) as f64;
const REFINE_WIDTH: f64 = 1.0 / (1u64 << REFINE_BITS) as f64;

/// Cell `[lo, hi)` of a fiber with the affine branch acting on it; a window
/// `[a, a+w)` maps to `[slope·a + intercept + shift·w, …)` of width `stretch·w`.
#[derive(Debug, Clone)]
struct Cell {
    lo: f64,
    hi: f64,
    slope: f64,
    intercept: f64,
    shift: f64,
    stretch: f64,
    hit: bool,
}

const BUCKET_BITS: u32 = 12;
const BUCKETS: usize = 1 << BUCKET_BITS;

/// Branch and target cells of one fiber, in increasing order.
#[derive(Debug, Clone)]
struct CompiledFiber {
    cells: Vec<Cell>,
    /// `buckets[b]` is a cell at or before the first cell meeting bucket `b`.
    buckets: Box<[u32; BUCKETS]>,
}

impl CompiledFiber {
    fn new(cells: Vec<Cell>) -> Self {
        let mut buckets = Box::new([0u32; BUCKETS]);
        for (b, slot) in buckets.iter_mut().enumerate() {
            let x = (b as f64 / BUCKETS as f64 - 1e-12).max(0.0);
            *slot = cells.iter().position(|c| x < c.hi).unwrap_or(cells.len() - 1) as u32;
        }
        Self { cells, buckets }
    }

    #[inline]
    fn cell_of(&self, x: f64) -> usize {
        let b = ((x + 1.0).to_bits() >> (52 - BUCKET_BITS)) as usize & (BUCKETS - 1);
        let mut i = self.buckets[b] as usize;
        let last = self.cells.len() - 1;
        while i < last && self.cells[i].hi <= x {
            i += 1;
        }
        i
    }
}

fn compile(d: &DrivingSystem, f: &TargetFamily, state: &crate::driving::FiberState, n: u128) -> Result<CompiledFiber> {
    let map = d.map_for::<f64>(state)?;
    let target = f.target_for::<f64>(state, n)?.set;
    let mut cuts = vec![0.0, 1.0];
    cuts.extend(map.breakpoints());
    cuts.extend(target.endpoints());
    cuts.retain(|c| (0.0..=1.0).contains(c));
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let cells = cuts
        .windows(2)
        .map(|w| {
            let mid = 0.5 * (w[0] + w[1]);
            let b = &map.branches()[map.branch_index(&mid)];
            Cell {
                lo: w[0],
                hi: w[1],
                slope: b.slope,
                intercept: b.intercept,
                shift: b.slope.min(0.0),
                stretch: b.slope.abs(),
                hit: target.contains(&mid),
            }
        })
        .collect();
    Ok(CompiledFiber::new(cells))
}

/// The fibers visited along `j = 0, …, n−1`, compiled once per distinct state.
struct CompiledPath {
    pool: Vec<CompiledFiber>,
    steps: Vec<u32>,
}

fn compile_path(d: &DrivingSystem, f: &TargetFamily, anchor: &Anchor, n: u128, horizon: usize) -> Result<CompiledPath> {
    let mut pool = Vec::new();
    let mut index: HashMap<String, u32> = HashMap::new();
    let mut steps = Vec::with_capacity(horizon);
    for j in 0..horizon as i64 {
        let state = d.state_at(anchor, j);
        let key = state.describe();
        let id = match index.get(&key) {
            Some(id) => *id,
            None => {
                pool.push(compile(d, f, &state, n)?);
                let id = (pool.len() - 1) as u32;
                index.insert(key, id);
                id
            }
        };
        steps.push(id);
    }
    Ok(CompiledPath { pool, steps })
}

fn unit(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Orbits advanced in lockstep so that their dependency chains overlap.
const LANES: usize = 8;

/// Runs up to [`LANES`] orbits; hit times are appended for lanes with a recorder.
fn run_orbits(path: &CompiledPath, rng: &mut ChaCha8Rng, lanes: usize, records: &mut [Option<Vec<u32>>]) -> [u32; LANES] {
    let mut a = [0.0f64; LANES];
    let mut w = [INITIAL_WIDTH; LANES];
    let mut hits = [0u32; LANES];
    for x in a.iter_mut().take(lanes) {
        *x = unit(rng) * (1.0 - INITIAL_WIDTH);
    }
    let recording = records.iter().any(Option::is_some);
    for (j, &id) in path.steps.iter().enumerate() {
        let fiber = &path.pool[id as usize];
        for l in 0..lanes {
            let (mut al, mut wl) = (a[l], w[l]);
            let mut i = fiber.cell_of(al);
            if al + wl > fiber.cells[i].hi {
                let x = al + unit(rng) * wl;
                i = fiber.cell_of(x);
                let c = &fiber.cells[i];
                let lo = al.max(c.lo);
                let hi = (al + wl).min(c.hi);
                al = lo;
                wl = (hi - lo).max(f64::MIN_POSITIVE);
            }
            let cell = &fiber.cells[i];
            if cell.hit {
                hits[l] += 1;
                if recording {
                    if let Some(t) = records[l].as_mut() {
                        t.push(j as u32);
                    }
                }
            }
            al = cell.slope * al + cell.intercept + cell.shift * wl;
            wl *= cell.stretch;
            al = al.max(0.0).min(1.0 - wl);
            if wl > REFINE_WIDTH {
                wl *= REFINE_WIDTH;
                let k = (rng.next_u64() >> (64 - REFINE_BITS)) as f64;
                al += k * wl;
            }
            a[l] = al;
            w[l] = wl;
        }
    }
    hits
}

/// Empirical law of `S_{ω,n,n}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HitCountDistribution {
    pub n: u128,
    pub samples: u64,
    /// `counts[k]` samples with exactly `k` hits.
    pub counts: Vec<u64>,
    pub seed: u64,
    pub anchor: String,
    pub s_grid: Vec<f64>,
    pub cf: Vec<(f64, f64)>,
    /// Hit times of the first retained samples.
    #[serde(skip)]
    pub patterns: Vec<Vec<u32>>,
}

impl HitCountDistribution {
    pub fn pmf(&self) -> Vec<f64> {
        self.counts.iter().map(|c| *c as f64 / self.samples as f64).collect()
    }

    pub fn mean(&self) -> f64 {
        self.counts.iter().enumerate().map(|(k, c)| k as f64 * *c as f64).sum::<f64>() / self.samples as f64
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        let m = self.mean();
        let ss: f64 = self
            .counts
            .iter()
            .enumerate()
            .map(|(k, c)| (k as f64 - m).powi(2) * *c as f64)
            .sum();
        ss / (self.samples as f64 - 1.0).max(1.0)
    }

    /// Empirical fourth central moment, used for the standard error of the variance.
    pub fn fourth_central_moment(&self) -> f64 {
        let m = self.mean();
        self.counts
            .iter()
            .enumerate()
            .map(|(k, c)| (k as f64 - m).powi(4) * *c as f64)
            .sum::<f64>()
            / self.samples as f64
    }

    pub fn empirical_cf(&self, s: f64) -> Complex64 {
        empirical_cf(&self.counts, self.samples, s)
    }
}

fn empirical_cf(counts: &[u64], samples: u64, s: f64) -> Complex64 {
    counts
        .iter()
        .enumerate()
        .map(|(k, c)| Complex64::from_polar(*c as f64, s * k as f64))
        .sum::<Complex64>()
        / samples as f64
}

/// Options for [`simulate`].
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub samples: u64,
    pub seed: u64,
    pub s_grid: Vec<f64>,
    /// Number of leading samples whose hit times are kept.
    pub keep_patterns: usize,
}

/// `simulate`: draws `x` uniformly and counts visits to `H_{σ^j ω,n}` for `j < n`.
pub fn simulate(
    d: &DrivingSystem,
    f: &TargetFamily,
    anchor: &Anchor,
    n: u128,
    cfg: &SimulationConfig,
) -> Result<HitCountDistribution> {
    if n == 0 || cfg.samples == 0 {
        return Err(invalid("samples", "n and the sample count must be positive"));
    }
    let horizon = usize::try_from(n).map_err(|_| invalid("n", "horizon does not fit in memory"))?;
    let path = compile_path(d, f, anchor, n, horizon)?;
    let shards = cfg.samples.div_ceil(SHARD_SIZE);
    let results: Vec<(Vec<u64>, Vec<Vec<u32>>)> = (0..shards)
        .into_par_iter()
        .map(|shard| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(shard);
            let first = shard * SHARD_SIZE;
            let size = SHARD_SIZE.min(cfg.samples - first);
            let mut counts = vec![0u64; 8];
            let mut patterns = Vec::new();
            let mut i = 0;
            while i < size {
                let lanes = (LANES as u64).min(size - i) as usize;
                let mut records: Vec<Option<Vec<u32>>> = (0..LANES)
                    .map(|l| (l < lanes && ((first + i) as usize + l) < cfg.keep_patterns).then(Vec::new))
                    .collect();
                let hits = run_orbits(&path, &mut rng, lanes, &mut records);
                for &k in hits.iter().take(lanes) {
                    let k = k as usize;
                    if counts.len() <= k {
                        counts.resize(k + 1, 0);
                    }
                    counts[k] += 1;
                }
                patterns.extend(records.into_iter().flatten());
                i += lanes as u64;
            }
            (counts, patterns)
        })
        .collect();
    let mut parts = Vec::with_capacity(results.len());
    let mut patterns = Vec::new();
    for (c, p) in results {
        parts.push(c);
        patterns.extend(p);
    }
    let mut counts = merge_counts(parts);
    while counts.len() > 1 && counts.last() == Some(&0) {
        counts.pop();
    }
    let cf = cfg
        .s_grid
        .iter()
        .map(|&s| {
            let c = empirical_cf(&counts, cfg.samples, s);
            (c.re, c.im)
        })
        .collect();
    Ok(HitCountDistribution {
        n,
        samples: cfg.samples,
        counts,
        seed: cfg.seed,
        anchor: d.state_at(anchor, 0).describe(),
        s_grid: cfg.s_grid.clone(),
        cf,
        patterns,
    })
}

/// Per-value comparison row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub k: usize,
    pub count: u64,
    pub empirical: f64,
    pub model: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareReport {
    pub total_variation: f64,
    pub sup_cf_distance: f64,
    pub rows: Vec<CompareRow>,
}

/// `compare`: total variation, sup CF distance on the grid, and per-value z-scores.
pub fn compare(dist: &HitCountDistribution, model: &CompoundPoissonModel, model_pmf: &[f64]) -> CompareReport {
    let emp = dist.pmf();
    let len = emp.len().max(model_pmf.len());
    let rows = (0..len)
        .map(|k| {
            let e = emp.get(k).copied().unwrap_or(0.0);
            let p = model_pmf.get(k).copied().unwrap_or(0.0);
            let se = (p * (1.0 - p) / dist.samples as f64).sqrt();
            let z = if se > 0.0 {
                (e - p) / se
            } else if e == p {
                0.0
            } else {
                f64::INFINITY
            };
            CompareRow {
                k,
                count: dist.counts.get(k).copied().unwrap_or(0),
                empirical: e,
                model: p,
                z,
            }
        })
        .collect();
    let sup_cf_distance = dist
        .s_grid
        .iter()
        .map(|&s| (dist.empirical_cf(s) - model.cf(s)).norm())
        .fold(0.0, f64::max);
    CompareReport {
        total_variation: total_variation(&emp, model_pmf),
        sup_cf_distance,
        rows,
    }
}

/// `cluster_diagnostics`: histogram of maximal runs of hits at consecutive times.
pub fn cluster_diagnostics(patterns: &[Vec<u32>], cap: usize) -> Vec<u64> {
    let mut hist = Vec::new();
    for times in patterns.iter().take(cap) {
        let mut run = 0usize;
        let mut prev: Option<u32> = None;
        for &t in times {
            if prev.is_some_and(|p| p + 1 == t) {
                run += 1;
            } else {
                if run > 0 {
                    bump(&mut hist, run);
                }
                run = 1;
            }
            prev = Some(t);
        }
        if run > 0 {
            bump(&mut hist, run);
        }
    }
    hist
}

fn bump(hist: &mut Vec<u64>, size: usize) {
    if hist.len() <= size {
        hist.resize(size + 1, 0);
    }
    hist[size] += 1;
}
