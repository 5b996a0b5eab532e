//! Acceptance suite: one pass/fail line per criterion.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::time::Instant;

use num_complex::Complex64;
use num_traits::Signed;

use qcp_cli::pipeline::{run, RunOptions, Stage};
use qcp_cli::presets::{load_preset, preset_names};
use qcp_cli::scenario::{closed_form_pmf, Prepared};
use qcp_core::checker::{check_all, CheckConfig, Status};
use qcp_core::cpmodel::{convolve, pmf_poisson, pmf_polya_aeppli, total_variation, CompoundPoissonModel, DEFAULT_GRID};
use qcp_core::driving::{Anchor, DrivingSystem};
use qcp_core::ei::{beta_exact, beta_from_qhat, beta_limit, qhat_from_beta, BetaTable, ThetaKind};
use qcp_core::maps::MapSpec;
use qcp_core::scalar::{Rational, Scalar};
use qcp_core::sim::{simulate, HitCountDistribution, SimulationConfig};
use qcp_core::spectral::{cocycle_multiplier, perturbation_ratio, SpectralConfig};
use qcp_core::targets::TargetFamily;

const N: u128 = 2000;
/// Horizon for the moment comparison; the variance at finite `n` is biased by about `−2 log_γ(n)/n`.
const MOMENT_N: u128 = 10_000;
const SAMPLES: u64 = 1_000_000;

struct Report {
    lines: Vec<(String, bool, String)>,
}

impl Report {
    fn record(&mut self, id: &str, ok: bool, detail: String) {
        println!("criterion {id:<3} {} {detail}", if ok { "PASS" } else { "FAIL" });
        self.lines.push((id.to_string(), ok, detail));
    }
}

fn prepared(name: &str) -> Prepared {
    load_preset(name).unwrap().prepare().unwrap()
}

fn sim(p: &Prepared, n: u128) -> (HitCountDistribution, f64) {
    let cfg = SimulationConfig {
        samples: SAMPLES,
        seed: p.scenario.run.seed,
        s_grid: vec![PI / 2.0, PI],
        keep_patterns: 0,
    };
    let start = Instant::now();
    let dist = simulate(&p.driving, &p.target, &p.anchor, n, &cfg).unwrap();
    (dist, start.elapsed().as_secs_f64())
}

fn padded(p: &[f64], len: usize) -> Vec<f64> {
    let mut v = p.to_vec();
    v.resize(len.max(v.len()), 0.0);
    v
}

fn q(n: i64, d: i64) -> Rational {
    Rational::from_ratio(n, d)
}

fn central2() -> DrivingSystem {
    DrivingSystem::fixed(MapSpec::Central {
        gamma: "2".into(),
        left: 1,
        right: 1,
    })
    .unwrap()
}

fn model_pmf(model: &CompoundPoissonModel, len: usize) -> Vec<f64> {
    model.pmf_levy(len, DEFAULT_GRID.max(4 * len.next_power_of_two())).unwrap()
}

#[test]
fn acceptance() {
    let mut report = Report { lines: Vec::new() };
    let names = preset_names();
    let preps: BTreeMap<&str, Prepared> = names.iter().map(|n| (*n, prepared(n))).collect();
    let models: BTreeMap<&str, CompoundPoissonModel> =
        preps.iter().map(|(n, p)| (*n, p.model().unwrap())).collect();
    let mut sims: BTreeMap<&str, (HitCountDistribution, f64)> = BTreeMap::new();
    for n in ["det-periodic", "det-aperiodic", "rand-beta", "rand-iid"] {
        sims.insert(n, sim(&preps[n], N));
    }

    // 1. Pólya-Aeppli reproduction.
    {
        let (dist, secs) = &sims["det-periodic"];
        let pa = pmf_polya_aeppli(0.5, 0.5, 60).unwrap();
        let emp = dist.pmf();
        let len = emp.len().max(pa.len());
        let tv = total_variation(&padded(&emp, len), &padded(&pa, len));
        report.record(
            "1",
            tv <= 0.02 && *secs <= 120.0,
            format!("TV = {tv:.5} (≤ 0.02), simulation {secs:.1} s (≤ 120 s)"),
        );
    }

    // 2. Standard Poisson.
    {
        let mut ok = true;
        let mut detail = Vec::new();
        for name in ["det-aperiodic", "rand-beta"] {
            let emp = sims[name].0.pmf();
            let po = pmf_poisson(1.0, 60);
            let len = emp.len().max(po.len());
            let tv = total_variation(&padded(&emp, len), &padded(&po, len));
            ok &= tv <= 0.02;
            detail.push(format!("{name} TV = {tv:.5}"));
        }
        report.record("2", ok, format!("{} (≤ 0.02 each)", detail.join(", ")));
    }

    // 3. i.i.d. ζ formula.
    {
        let model = &models["rand-iid"];
        let zeta = match &model.components()[0].theta.kind {
            ThetaKind::Geometric { zeta } => *zeta,
            _ => f64::NAN,
        };
        let exact = zeta == 0.375 && (model.vartheta() - 0.625).abs() < 1e-15;
        let pa = pmf_polya_aeppli(0.625, 0.375, 60).unwrap();
        let emp = sims["rand-iid"].0.pmf();
        let len = emp.len().max(pa.len());
        let tv = total_variation(&padded(&emp, len), &padded(&pa, len));
        report.record(
            "3",
            exact && tv <= 0.03,
            format!("model ρ = {zeta}, ϑ = {}, TV = {tv:.5} (≤ 0.03)", model.vartheta()),
        );
    }

    // 4. β-limit oracle.
    {
        let mut ok = true;
        let mut worst: f64 = 0.0;
        let d = central2();
        for (center, r, alpha) in [(q(1, 2), 1usize, q(1, 2)), (q(1, 5), 2usize, q(1, 16))] {
            let f = TargetFamily::single(center, q(1, 1)).unwrap();
            for n in [100u128, 1_000, 10_000] {
                let table = beta_exact(&d, &f, &Anchor::Fixed, n, 4 * r - 1).unwrap();
                let exact = table.exact.unwrap();
                let band = q(2, n as i64);
                if r == 1 {
                    let err = (exact[0][0].clone() - q(1, 2)).abs();
                    ok &= err <= band;
                    worst = worst.max(Scalar::to_f64(&err) * n as f64);
                }
                for b in 1..=4usize {
                    let want = num_traits::pow(alpha.clone(), b);
                    let err = (exact[r * b - 1][b - 1].clone() - want).abs();
                    ok &= err <= band;
                    worst = worst.max(Scalar::to_f64(&err) * n as f64);
                }
            }
        }
        report.record(
            "4",
            ok,
            format!("max n·|β − limit| = {worst:.3} over periods 1 and 2, n ∈ {{10², 10³, 10⁴}} (≤ 2)"),
        );
    }

    // 5. q̂ → β → q̂ round trip.
    {
        let mut tables: Vec<BetaTable> = Vec::new();
        for name in &names {
            let p = &preps[name];
            tables.push(beta_limit(&p.driving, &p.target, &p.anchor, 8).unwrap());
            tables.push(beta_exact(&p.driving, &p.target, &p.anchor, 100, 8).unwrap());
        }
        let mut worst: f64 = 0.0;
        let mut worst_cond: f64 = 0.0;
        let mut ok = true;
        for table in &tables {
            for k in 0..=table.k_max().min(8) {
                let s_grid: Vec<f64> = (1..=k + 1).map(|j| j as f64).collect();
                let qhat: Vec<Complex64> = s_grid.iter().map(|&s| qhat_from_beta(table, s)[k]).collect();
                match beta_from_qhat(&qhat) {
                    Ok(rec) => {
                        worst_cond = worst_cond.max(rec.condition_number);
                        let rebuilt = BetaTable::from_values(vec![rec.beta.clone()]);
                        for (j, &s) in s_grid.iter().enumerate() {
                            worst = worst.max((qhat_from_beta(&rebuilt, s)[0] - qhat[j]).norm());
                        }
                        for (a, b) in rec.beta.iter().zip(&table.values[k]) {
                            worst = worst.max((a - b).abs());
                        }
                    }
                    Err(_) => ok = false,
                }
            }
        }
        ok &= worst <= 1e-10;
        report.record(
            "5",
            ok,
            format!(
                "{} tables, max round-trip error {worst:.2e} (≤ 1e-10), max condition number {worst_cond:.3e}",
                tables.len()
            ),
        );
    }

    // 6. Three-way pmf agreement.
    {
        let mut ok = true;
        let mut worst: f64 = 0.0;
        let mut worst_mass: f64 = 0.0;
        let mut checked = Vec::new();
        for name in &names {
            let model = &models[name];
            let Some(closed) = closed_form_pmf(model, 30).unwrap() else {
                continue;
            };
            checked.push(*name);
            let len = model.covering_k_max(1e-12, 1000).max(30);
            let levy = model.pmf_levy(len, DEFAULT_GRID).unwrap();
            let pgf = model.pmf_pgf(len).unwrap();
            let full = closed_form_pmf(model, len).unwrap().unwrap();
            for k in 0..=30 {
                worst = worst.max((levy[k] - pgf[k]).abs()).max((levy[k] - closed[k]).abs());
            }
            for p in [&levy, &pgf, &full] {
                worst_mass = worst_mass.max((p.iter().sum::<f64>() - 1.0).abs());
            }
        }
        ok &= worst <= 1e-8 && worst_mass <= 1e-6 && checked.len() >= 4;
        report.record(
            "6",
            ok,
            format!(
                "{} ({}): max difference {worst:.2e} (≤ 1e-8), max |Σp − 1| = {worst_mass:.2e} (≤ 1e-6)",
                checked.len(),
                checked.join(", ")
            ),
        );
    }

    // 7. Spectral first-order law.
    {
        let p = &preps["det-periodic"];
        let model = &models["det-periodic"];
        let cfg = SpectralConfig::default();
        let start = Instant::now();
        let mut ok = true;
        let mut detail = Vec::new();
        for s in [PI / 2.0, PI] {
            let target = (Complex64::new(1.0, 0.0) - Complex64::from_polar(1.0, s)) * model.big_theta(s);
            let mut errs = Vec::new();
            for leb in [1e-2, 1e-3] {
                let n = (1.0 / leb as f64).round() as u128;
                let res = cocycle_multiplier(&p.driving, &p.target, &p.anchor, n, s, &cfg).unwrap();
                let ratio = perturbation_ratio(&res, res.mean_target_measure).unwrap();
                errs.push((ratio - target).norm() / target.norm());
            }
            ok &= errs[1] < errs[0] && errs[1] <= 0.10;
            detail.push(format!("s = {s:.4}: {:.4} → {:.4}", errs[0], errs[1]));
        }
        let secs = start.elapsed().as_secs_f64();
        ok &= secs <= 60.0;
        report.record(
            "7",
            ok,
            format!("relative errors {} (≤ 0.10 at 10⁻³), {secs:.1} s (≤ 60 s)", detail.join("; ")),
        );
    }

    // 8. Moments.
    {
        let mut ok = true;
        let mut worst_z: f64 = 0.0;
        for name in &names {
            let m = models[name].moments().unwrap();
            let dist = &sim(&preps[name], MOMENT_N).0;
            let count = dist.samples as f64;
            let var = dist.variance();
            let se_mean = (var / count).sqrt();
            let se_var = ((dist.fourth_central_moment() - var * var) / count).sqrt();
            let z_mean = (dist.mean() - m.mean).abs() / se_mean;
            let z_var = (var - m.variance).abs() / se_var;
            println!(
                "    {name:<24} mean {:.5} vs {:.5} (z {z_mean:.2}), variance {:.5} vs {:.5} (z {z_var:.2})",
                dist.mean(),
                m.mean,
                var,
                m.variance
            );
            ok &= z_mean <= 4.0 && z_var <= 4.0;
            worst_z = worst_z.max(z_mean).max(z_var);
        }
        let pa = models["det-periodic"].moments().unwrap();
        let exact = (pa.mean - 1.0).abs() < 1e-12 && (pa.variance - 3.0).abs() < 1e-12;
        report.record(
            "8",
            ok && exact,
            format!(
                "max |z| = {worst_z:.2} over {} presets at n = {MOMENT_N} (≤ 4); PA γ=2 model E = {}, Var = {} (Var = ϑ(1+ρ)/(1−ρ)² = 3)",
                names.len(),
                pa.mean,
                pa.variance
            ),
        );
    }

    // 9. Infinite divisibility.
    {
        let mut worst: f64 = 0.0;
        for name in &names {
            let model = &models[name];
            let len = model.covering_k_max(1e-12, 1000).max(30);
            let full = model_pmf(model, len);
            let half = model_pmf(&model.scaled(0.5).unwrap(), len);
            let conv = convolve(&half, &half);
            for k in 0..=len {
                worst = worst.max((conv[k] - full[k]).abs());
            }
        }
        report.record(
            "9",
            worst <= 1e-8,
            format!("max |p_{{Θ/2}} * p_{{Θ/2}} − p_Θ| = {worst:.2e} over all presets (≤ 1e-8)"),
        );
    }

    // 10. Checker.
    {
        let mut ok = true;
        let mut detail = Vec::new();
        for name in &names {
            let p = &preps[name];
            let r = check_all(&p.driving, &p.target, &CheckConfig::default()).unwrap();
            for id in ["F1", "F2", "F3", "F4", "F5", "F6", "F7", "F8", "F9"] {
                let c = r.get(id).unwrap();
                ok &= c.status == Status::Pass && !c.witness.is_empty();
            }
            let lhs = |m: usize| (9.0 + 12.0 * (r.components * m) as f64) * r.inf_slope.powi(-(m as i32));
            let rhs = |m: usize| r.inf_transfer_one.powi(m as i32);
            match r.n_prime {
                Some(np) => {
                    ok &= lhs(np) < rhs(np) && (1..np).all(|m| lhs(m) >= rhs(m));
                    detail.push(format!("{name}: N'={np}"));
                }
                None => ok = false,
            }
        }
        report.record("10", ok, format!("F1–F9 pass, minimal N' ({})", detail.join(", ")));
    }

    // 11. Determinism across worker counts.
    {
        let root = tempfile::tempdir().unwrap();
        let mut ok = true;
        let mut files = 0;
        for name in ["det-periodic", "rand-rotation", "rand-iid", "det-overlap-periodic"] {
            let mut scenario = load_preset(name).unwrap();
            scenario.run.samples = 100_000;
            scenario.run.spectral.bins = 1 << 10;
            let outputs: Vec<_> = [1usize, 8]
                .iter()
                .map(|&w| {
                    let dir = root.path().join(format!("{name}-{w}"));
                    run(
                        Stage::All,
                        &scenario,
                        &RunOptions {
                            out_dir: dir.clone(),
                            workers: w,
                        },
                    )
                    .unwrap();
                    dir
                })
                .collect();
            for entry in fs::read_dir(&outputs[0]).unwrap() {
                let path = entry.unwrap().path();
                if path.extension().and_then(|e| e.to_str()) != Some("csv") {
                    continue;
                }
                let other = outputs[1].join(path.file_name().unwrap());
                ok &= fs::read(&path).unwrap() == fs::read(Path::new(&other)).unwrap();
                files += 1;
            }
        }
        report.record("11", ok && files > 0, format!("{files} CSV files byte-identical for 1 vs 8 workers"));
    }

    let failed: Vec<_> = report.lines.iter().filter(|l| !l.1).map(|l| l.0.clone()).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

/// The variance value literally stated for the γ=2 Pólya-Aeppli law.
#[test]
#[ignore = "the stated value 2 contradicts Var = ϑ(1+ρ)/(1−ρ)² = 3 for ϑ = ρ = 1/2"]
fn literal_polya_aeppli_variance_two() {
    let m = CompoundPoissonModel::polya_aeppli(1.0, 0.5).unwrap().moments().unwrap();
    assert!((m.mean - 1.0).abs() < 1e-12);
    assert!((m.variance - 2.0).abs() < 1e-12, "model variance is {}", m.variance);
}
