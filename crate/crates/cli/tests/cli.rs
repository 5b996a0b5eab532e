use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use qcp_cli::error::CliError;
use qcp_cli::pipeline::{config_hash, run, Overrides, RunOptions, Stage};
use qcp_cli::presets::{list_presets, load_preset, preset_names};
use qcp_cli::scenario::Scenario;
use qcp_cli::{load_scenario, output_dir};
use qcp_core::error::Error;

fn qcp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qcp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn small(name: &str) -> Scenario {
    let mut s = load_preset(name).unwrap();
    s.run.samples = 20_000;
    s.run.n = 500;
    s.run.spectral.bins = 1 << 10;
    s.run.spectral.steps = 100;
    s
}

#[test]
fn nine_presets_with_expected_laws() {
    let list = list_presets();
    assert_eq!(list.len(), 9);
    let law = |n: &str| list.iter().find(|p| p.name == n).unwrap().law.clone();
    assert_eq!(law("det-aperiodic"), "standard Poisson");
    assert_eq!(law("rand-iid"), "Pólya-Aeppli, ρ=ζ");
    assert_eq!(law("det-overlap-periodic"), "compound Poisson, case-selected");
    for name in preset_names() {
        let s = load_preset(name).unwrap();
        assert_eq!(s.name, name);
        s.prepare().unwrap();
    }
}

#[test]
fn presets_subcommand_lists_names() {
    let out = qcp(&["presets"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in preset_names() {
        assert!(text.contains(name));
    }
}

#[test]
fn all_writes_the_artifact_set() {
    let dir = tempfile::tempdir().unwrap();
    let outcome = run(
        Stage::All,
        &small("det-periodic"),
        &RunOptions {
            out_dir: dir.path().to_path_buf(),
            workers: 2,
        },
    )
    .unwrap();
    for f in ["beta.csv", "theta.csv", "pmf.csv", "sim.csv", "compare.csv", "manifest.json"] {
        assert!(dir.path().join(f).is_file(), "{f} missing");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config_sha256"].as_str().unwrap(), outcome.manifest.config_sha256);
    assert_eq!(manifest["seed"], 1);
    let pmf = fs::read_to_string(dir.path().join("pmf.csv")).unwrap();
    assert!(pmf.starts_with("k,levy,pgf,closed_form\n"));
    let beta = fs::read_to_string(dir.path().join("beta.csv")).unwrap();
    assert!(beta.starts_with("level,k,l,beta,exact\n"));
    assert!(beta.contains("\n100,0,0,"));
    assert!(beta.contains("limit,0,0,0.5,1/2"));
}

#[test]
fn rerun_from_recorded_config_is_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let scenario = small("rand-iid");
    let opts = |p: &Path| RunOptions {
        out_dir: p.to_path_buf(),
        workers: 1,
    };
    run(Stage::Compare, &scenario, &opts(a.path())).unwrap();
    let recorded = load_scenario(a.path().join("scenario.toml").to_str().unwrap()).unwrap();
    assert_eq!(config_hash(&recorded), config_hash(&scenario));
    run(Stage::Compare, &recorded, &opts(b.path())).unwrap();
    for f in ["sim.csv", "compare.csv", "cf.csv"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap());
    }
}

#[test]
fn compare_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let ok = qcp(&[
        "compare",
        "--scenario",
        "det-aperiodic",
        "--samples",
        "20000",
        "--n",
        "500",
        "--workers",
        "1",
        "--out",
        out,
    ]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    let strict = qcp(&[
        "compare",
        "--scenario",
        "det-aperiodic",
        "--samples",
        "20000",
        "--n",
        "500",
        "--tv-threshold",
        "1e-9",
        "--out",
        out,
    ]);
    assert_eq!(strict.status.code(), Some(4));
    let err = String::from_utf8(strict.stderr).unwrap();
    assert!(err.contains("error kind=threshold code=4"));
}

#[test]
fn unknown_key_is_a_config_error_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    let text = load_preset("det-periodic").unwrap().to_toml() + "\nbogus_key = 3\n";
    fs::write(&path, text).unwrap();
    let out = qcp(&["check", "--scenario", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("bogus_key"), "{err}");
    assert!(err.contains("kind=config"));

    let missing = qcp(&["check", "--scenario", "no-such-scenario"]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn scaling_guard_violation_is_rejected() {
    let mut s = load_preset("rand-const-slope").unwrap();
    s.target.t_per_symbol = Some(vec!["1/4".into(), "5/4".into()]);
    let err = s.prepare().unwrap_err();
    assert!(matches!(err, Error::Scenario(_)));
    assert_eq!(CliError::Core(err).exit_code(), 2);
}

#[test]
fn exit_code_mapping() {
    assert_eq!(CliError::Config("x".into()).exit_code(), 2);
    assert_eq!(CliError::Core(Error::Underflow { step: 3 }).exit_code(), 3);
    assert_eq!(
        CliError::Core(Error::IllConditioned {
            cond: 1e13,
            limit: 1e12
        })
        .exit_code(),
        3
    );
    assert_eq!(CliError::Threshold("tv".into()).exit_code(), 4);
    let line = CliError::Core(Error::Underflow { step: 3 }).reason_line();
    assert!(line.starts_with("error kind=numerical code=3 reason="));
}

#[test]
fn overrides_and_output_root() {
    let mut s = load_preset("det-periodic").unwrap();
    Overrides {
        seed: Some(9),
        n: Some(300),
        samples: Some(10),
        s_grid: Some(vec![1.0, 2.0]),
        tv_threshold: Some(0.5),
    }
    .apply(&mut s);
    assert_eq!((s.run.seed, s.run.n, s.run.samples), (9, 300, 10));
    assert_eq!(s.run.s_grid, vec![1.0, 2.0]);
    assert_eq!(s.run.tv_threshold, 0.5);
    assert_eq!(output_dir(None, Some("/tmp/root"), "x"), Path::new("/tmp/root/x"));
    assert_eq!(output_dir(Some(Path::new("o")), Some("/tmp/root"), "x"), Path::new("o"));
    assert_eq!(output_dir(None, None, "x"), Path::new("qcp-runs/x"));
}

#[test]
fn theta_series_matches_model_for_closed_form_presets() {
    for name in ["det-periodic", "det-aperiodic", "det-multi"] {
        let dir = tempfile::tempdir().unwrap();
        let mut s = small(name);
        s.run.k_max = 34;
        run(
            Stage::Theta,
            &s,
            &RunOptions {
                out_dir: dir.path().to_path_buf(),
                workers: 1,
            },
        )
        .unwrap();
        let mut rdr = csv::Reader::from_path(dir.path().join("theta.csv")).unwrap();
        let rows: Vec<(String, f64, f64, f64)> = rdr.deserialize().map(|r| r.unwrap()).collect();
        let half = rows.len() / 2;
        for (series, model) in rows[..half].iter().zip(&rows[half..]) {
            assert_eq!(series.0, "series");
            assert_eq!(model.0, "model");
            assert!((series.2 - model.2).abs() < 1e-9 && (series.3 - model.3).abs() < 1e-9, "{name}");
        }
    }
}
