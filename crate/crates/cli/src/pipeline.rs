//! Stage execution and artifact export.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use num_complex::Complex64;
use serde::Serialize;
use sha2::{Digest, Sha256};

use qcp_core::checker::{check_all, AssumptionReport, CheckConfig};
use qcp_core::cpmodel::{CompoundPoissonModel, DEFAULT_GRID};
use qcp_core::ei::{beta_exact, beta_limit, theta_series, BetaTable};
use qcp_core::sim::{compare, simulate, CompareReport, HitCountDistribution, SimulationConfig};
use qcp_core::spectral::{cocycle_multiplier, perturbation_ratio, SpectralConfig};

use crate::error::{CliError, CliResult};
use crate::scenario::{closed_form_pmf, Prepared, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Check,
    Beta,
    Theta,
    Spectral,
    Pmf,
    Simulate,
    Compare,
    All,
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::Check => "check",
            Stage::Beta => "beta",
            Stage::Theta => "theta",
            Stage::Spectral => "spectral",
            Stage::Pmf => "pmf",
            Stage::Simulate => "simulate",
            Stage::Compare => "compare",
            Stage::All => "all",
        }
    }
}

impl FromStr for Stage {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        Ok(match s {
            "check" => Stage::Check,
            "beta" => Stage::Beta,
            "theta" => Stage::Theta,
            "spectral" => Stage::Spectral,
            "pmf" => Stage::Pmf,
            "simulate" => Stage::Simulate,
            "compare" => Stage::Compare,
            "all" => Stage::All,
            other => return Err(CliError::Config(format!("unknown subcommand `{other}`"))),
        })
    }
}

/// Command-line values that replace scenario settings.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub n: Option<u64>,
    pub samples: Option<u64>,
    pub s_grid: Option<Vec<f64>>,
    pub tv_threshold: Option<f64>,
}

impl Overrides {
    pub fn apply(&self, s: &mut Scenario) {
        let run = &mut s.run;
        if let Some(v) = self.seed {
            run.seed = v;
        }
        if let Some(v) = self.n {
            run.n = v;
        }
        if let Some(v) = self.samples {
            run.samples = v;
        }
        if let Some(v) = &self.s_grid {
            run.s_grid = v.clone();
        }
        if let Some(v) = self.tv_threshold {
            run.tv_threshold = v;
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareSummary {
    pub total_variation: f64,
    pub sup_cf_distance: f64,
    pub threshold: f64,
    pub empirical_mean: f64,
    pub empirical_variance: f64,
    pub model_mean: f64,
    pub model_variance: f64,
}

/// Run record written to `manifest.json`.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub scenario: String,
    pub stage: String,
    pub config_sha256: String,
    pub seed: u64,
    pub n: u64,
    pub samples: u64,
    pub workers: usize,
    pub version: String,
    pub files: Vec<FileDigest>,
    pub check: Option<AssumptionReport>,
    pub compare: Option<CompareSummary>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub report: Option<CompareReport>,
}

/// SHA-256 of the resolved scenario.
pub fn config_hash(s: &Scenario) -> String {
    hex::encode(Sha256::digest(serde_json::to_vec(s).expect("scenario serializes")))
}

struct Ctx<'a> {
    prepared: &'a Prepared,
    dir: &'a Path,
    files: Vec<FileDigest>,
    limit: Option<BetaTable>,
    model: Option<CompoundPoissonModel>,
    dist: Option<HitCountDistribution>,
}

impl Ctx<'_> {
    fn write<R: Serialize>(&mut self, name: &str, rows: impl IntoIterator<Item = R>) -> CliResult<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Io(e.into_error()))?;
        fs::write(self.dir.join(name), &bytes)?;
        self.files.push(FileDigest {
            name: name.to_string(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
        Ok(())
    }

    fn run(&self) -> &crate::scenario::RunSpec {
        &self.prepared.scenario.run
    }

    fn limit(&mut self) -> CliResult<&BetaTable> {
        if self.limit.is_none() {
            let p = self.prepared;
            self.limit = Some(beta_limit(&p.driving, &p.target, &p.anchor, self.run().k_max)?);
        }
        Ok(self.limit.as_ref().expect("set above"))
    }

    fn model(&mut self) -> CliResult<&CompoundPoissonModel> {
        if self.model.is_none() {
            self.model = Some(self.prepared.model()?);
        }
        Ok(self.model.as_ref().expect("set above"))
    }

    fn pmf_len(&mut self) -> CliResult<usize> {
        let k = self.run().pmf_k_max;
        let cover = self.model()?.covering_k_max(1e-12, DEFAULT_GRID / 4);
        Ok(k.max(cover))
    }
}

#[derive(Serialize)]
struct CheckRow<'a> {
    id: &'a str,
    status: String,
    witness: &'a str,
}

#[derive(Serialize)]
struct BetaRow {
    level: String,
    k: usize,
    l: usize,
    beta: f64,
    exact: String,
}

#[derive(Serialize)]
struct ThetaRow {
    source: &'static str,
    s: f64,
    re: f64,
    im: f64,
}

#[derive(Serialize)]
struct PmfRow {
    k: usize,
    levy: f64,
    pgf: f64,
    closed_form: Option<f64>,
}

#[derive(Serialize)]
struct SpectralRow {
    s: f64,
    leb: f64,
    n: u64,
    measured_leb: f64,
    ratio_re: f64,
    ratio_im: f64,
    target_re: f64,
    target_im: f64,
    relative_error: f64,
}

#[derive(Serialize)]
struct SimRow {
    k: usize,
    count: u64,
    probability: f64,
}

#[derive(Serialize)]
struct CfRow {
    s: f64,
    empirical_re: f64,
    empirical_im: f64,
    model_re: f64,
    model_im: f64,
}

fn beta_rows(table: &BetaTable) -> Vec<BetaRow> {
    let mut rows = Vec::new();
    for (k, row) in table.values.iter().enumerate() {
        for (l, b) in row.iter().enumerate() {
            rows.push(BetaRow {
                level: table.level.label(),
                k,
                l,
                beta: *b,
                exact: table
                    .exact
                    .as_ref()
                    .map(|e| qcp_core::scalar::format_rational(&e[k][l]))
                    .unwrap_or_default(),
            });
        }
    }
    rows
}

fn stage_check(ctx: &mut Ctx, warnings: &mut Vec<String>) -> CliResult<AssumptionReport> {
    let p = ctx.prepared;
    let report = check_all(&p.driving, &p.target, &CheckConfig::default())?;
    let rows: Vec<CheckRow> = report
        .conditions
        .iter()
        .map(|c| CheckRow {
            id: c.id,
            status: c.status.to_string(),
            witness: &c.witness,
        })
        .collect();
    ctx.write("check.csv", rows)?;
    for c in report.failures() {
        warnings.push(format!("{} failed: {}", c.id, c.witness));
    }
    Ok(report)
}

fn stage_beta(ctx: &mut Ctx) -> CliResult<()> {
    let p = ctx.prepared;
    let mut rows = Vec::new();
    for &n in &ctx.run().beta_n_grid {
        let table = beta_exact(&p.driving, &p.target, &p.anchor, n as u128, ctx.run().k_max)?;
        rows.extend(beta_rows(&table));
    }
    rows.extend(beta_rows(ctx.limit()?));
    ctx.write("beta.csv", rows)
}

fn stage_theta(ctx: &mut Ctx) -> CliResult<()> {
    let series = theta_series(ctx.limit()?);
    let s_grid = ctx.run().s_grid.clone();
    let model = ctx.model()?;
    let t_bar = model.t_bar();
    let mut rows = Vec::new();
    for &s in &s_grid {
        let v = series.eval(s);
        rows.push(ThetaRow {
            source: "series",
            s,
            re: v.re,
            im: v.im,
        });
    }
    for &s in &s_grid {
        let v = model.big_theta(s) / t_bar;
        rows.push(ThetaRow {
            source: "model",
            s,
            re: v.re,
            im: v.im,
        });
    }
    ctx.write("theta.csv", rows)
}

fn stage_pmf(ctx: &mut Ctx) -> CliResult<()> {
    let len = ctx.pmf_len()?;
    let model = ctx.model()?;
    let levy = model.pmf_levy(len, DEFAULT_GRID)?;
    let pgf = model.pmf_pgf(len)?;
    let closed = closed_form_pmf(model, len)?;
    let rows: Vec<PmfRow> = (0..=len)
        .map(|k| PmfRow {
            k,
            levy: levy[k],
            pgf: pgf[k],
            closed_form: closed.as_ref().map(|c| c[k]),
        })
        .collect();
    ctx.write("pmf.csv", rows)
}

fn stage_spectral(ctx: &mut Ctx) -> CliResult<()> {
    let p = ctx.prepared;
    let spec = ctx.run().spectral.clone();
    let cfg = SpectralConfig {
        bins: spec.bins,
        burn_in: spec.burn_in,
        steps: spec.steps,
    };
    let model = ctx.model()?.clone();
    let t_bar = model.t_bar();
    let mut rows = Vec::new();
    for &s in &spec.s {
        let target = (Complex64::new(1.0, 0.0) - Complex64::from_polar(1.0, s)) * model.big_theta(s) / t_bar;
        for &leb in &spec.leb {
            let n = (t_bar / leb).round().max(1.0) as u64;
            let res = cocycle_multiplier(&p.driving, &p.target, &p.anchor, n as u128, s, &cfg)?;
            let ratio = perturbation_ratio(&res, res.mean_target_measure)?;
            rows.push(SpectralRow {
                s,
                leb,
                n,
                measured_leb: res.mean_target_measure,
                ratio_re: ratio.re,
                ratio_im: ratio.im,
                target_re: target.re,
                target_im: target.im,
                relative_error: (ratio - target).norm() / target.norm(),
            });
        }
    }
    ctx.write("spectral.csv", rows)
}

fn stage_simulate(ctx: &mut Ctx) -> CliResult<()> {
    let p = ctx.prepared;
    let run = ctx.run();
    let cfg = SimulationConfig {
        samples: run.samples,
        seed: run.seed,
        s_grid: run.s_grid.clone(),
        keep_patterns: 0,
    };
    let dist = simulate(&p.driving, &p.target, &p.anchor, run.n as u128, &cfg)?;
    let pmf = dist.pmf();
    let rows: Vec<SimRow> = dist
        .counts
        .iter()
        .zip(&pmf)
        .enumerate()
        .map(|(k, (c, q))| SimRow {
            k,
            count: *c,
            probability: *q,
        })
        .collect();
    ctx.write("sim.csv", rows)?;
    ctx.dist = Some(dist);
    Ok(())
}

fn stage_compare(ctx: &mut Ctx) -> CliResult<(CompareReport, CompareSummary)> {
    if ctx.dist.is_none() {
        stage_simulate(ctx)?;
    }
    let len = ctx.pmf_len()?.max(ctx.dist.as_ref().expect("simulated").counts.len());
    let model = ctx.model()?.clone();
    let pmf = model.pmf_levy(len, DEFAULT_GRID.max(4 * len.next_power_of_two()))?;
    let dist = ctx.dist.take().expect("simulated");
    let report = compare(&dist, &model, &pmf);
    ctx.write("compare.csv", report.rows.clone())?;
    let cf_rows: Vec<CfRow> = dist
        .s_grid
        .iter()
        .zip(&dist.cf)
        .map(|(&s, &(re, im))| {
            let m = model.cf(s);
            CfRow {
                s,
                empirical_re: re,
                empirical_im: im,
                model_re: m.re,
                model_im: m.im,
            }
        })
        .collect();
    ctx.write("cf.csv", cf_rows)?;
    let moments = model.moments()?;
    let summary = CompareSummary {
        total_variation: report.total_variation,
        sup_cf_distance: report.sup_cf_distance,
        threshold: ctx.run().tv_threshold,
        empirical_mean: dist.mean(),
        empirical_variance: dist.variance(),
        model_mean: moments.mean,
        model_variance: moments.variance,
    };
    ctx.dist = Some(dist);
    Ok((report, summary))
}

/// Options that do not affect results.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub workers: usize,
}

/// `run`: executes a stage with its dependencies and writes CSVs plus `manifest.json`.
pub fn run(stage: Stage, scenario: &Scenario, opts: &RunOptions) -> CliResult<Outcome> {
    let prepared = scenario.prepare()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.max(1))
        .build()
        .map_err(|e| CliError::Config(format!("worker pool: {e}")))?;
    fs::create_dir_all(&opts.out_dir)?;
    fs::write(opts.out_dir.join("scenario.toml"), scenario.to_toml())?;
    pool.install(|| execute(stage, &prepared, opts))
}

fn execute(stage: Stage, prepared: &Prepared, opts: &RunOptions) -> CliResult<Outcome> {
    let mut ctx = Ctx {
        prepared,
        dir: &opts.out_dir,
        files: Vec::new(),
        limit: None,
        model: None,
        dist: None,
    };
    let mut warnings = Vec::new();
    let mut check = None;
    let mut compared = None;
    let mut failure = None;
    match stage {
        Stage::Check => {
            let report = stage_check(&mut ctx, &mut warnings)?;
            if !report.all_pass() {
                failure = Some(CliError::Core(qcp_core::error::Error::Scenario(format!(
                    "sufficient conditions not verified: {}",
                    warnings.join("; ")
                ))));
            }
            check = Some(report);
        }
        Stage::Beta => stage_beta(&mut ctx)?,
        Stage::Theta => stage_theta(&mut ctx)?,
        Stage::Pmf => stage_pmf(&mut ctx)?,
        Stage::Spectral => stage_spectral(&mut ctx)?,
        Stage::Simulate => stage_simulate(&mut ctx)?,
        Stage::Compare => compared = Some(stage_compare(&mut ctx)?),
        Stage::All => {
            check = Some(stage_check(&mut ctx, &mut warnings)?);
            stage_beta(&mut ctx)?;
            stage_theta(&mut ctx)?;
            stage_pmf(&mut ctx)?;
            stage_spectral(&mut ctx)?;
            stage_simulate(&mut ctx)?;
            compared = Some(stage_compare(&mut ctx)?);
        }
    }
    let (report, summary) = match compared {
        Some((r, s)) => (Some(r), Some(s)),
        None => (None, None),
    };
    if let Some(s) = &summary {
        if s.total_variation > s.threshold {
            failure = Some(CliError::Threshold(format!(
                "total variation {:.6} exceeds threshold {}",
                s.total_variation, s.threshold
            )));
        }
    }
    let run = &prepared.scenario.run;
    let manifest = Manifest {
        scenario: prepared.scenario.name.clone(),
        stage: stage.name().to_string(),
        config_sha256: config_hash(&prepared.scenario),
        seed: run.seed,
        n: run.n,
        samples: run.samples,
        workers: opts.workers,
        version: env!("CARGO_PKG_VERSION").to_string(),
        files: ctx.files,
        check,
        compare: summary,
        warnings,
    };
    fs::write(
        opts.out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;
    match failure {
        Some(e) => Err(e),
        None => Ok(Outcome {
            dir: opts.out_dir.clone(),
            manifest,
            report,
        }),
    }
}
