//! Command-line workflows run through the built binary.

use std::path::Path;
use std::process::{Command, Output};

use lnnchain::config::DEFAULT_TEMPLATE;
use lnnchain::engine::TuneOutcome;

const SMALL: &str = "train_days = 60\nseeds = [42, 43]\n[demand]\nhorizon = 150\n\
                     [forecaster.lnn]\nn_neurons = 8\n[forecaster.lnn.train]\nepochs = 3\n\
                     [forecaster.gbt]\nn_trees = 10\n";

fn lnnchain(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lnnchain"))
        .args(args)
        .current_dir(cwd)
        .env_remove("LNNCHAIN_OUT")
        .output()
        .unwrap()
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("small.toml");
    std::fs::write(&path, SMALL).unwrap();
    path.display().to_string()
}

#[test]
fn config_prints_template() {
    let tmp = tempfile::tempdir().unwrap();
    let out = lnnchain(&["config"], tmp.path());
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap(), DEFAULT_TEMPLATE);
}

#[test]
fn bad_config_exits_with_usage_code() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.toml");
    std::fs::write(&path, "[chain]\nbogus = 1\n").unwrap();
    let out = lnnchain(&["simulate", "-c", path.to_str().unwrap()], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
    assert!(!tmp.path().join("results").exists());
}

#[test]
fn unknown_flag_exits_with_usage_code() {
    let tmp = tempfile::tempdir().unwrap();
    let out = lnnchain(&["simulate", "--frobnicate"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulate_evaluate_report_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = lnnchain(&["-q", "simulate", "-c", &cfg, "-o", "res"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let res = tmp.path().join("res");
    for model in ["hybrid", "gbt", "sma"] {
        for seed in [42, 43] {
            assert!(res.join(model).join(format!("{seed}.json")).is_file());
        }
    }
    let out = lnnchain(&["-q", "evaluate", "-o", "res", "--weights", "custom"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["report.csv", "scores.csv", "stats.json", "profit_curves.csv"] {
        assert!(res.join(f).is_file(), "{f} missing");
    }
    let out = lnnchain(&["-q", "report", "-o", "res"], tmp.path());
    assert!(out.status.success());
    assert!(res.join("profit_layer3.svg").is_file());
}

#[test]
fn seeds_override_and_noise_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let run = |dir: &str, noise: &str| {
        let out = lnnchain(
            &["-q", "simulate", "-c", &cfg, "-o", dir, "--model", "sma", "--seeds", "7", "--noise", noise],
            tmp.path(),
        );
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::read(tmp.path().join(dir).join("sma").join("7.json")).unwrap()
    };
    let clean = run("clean", "0");
    let noisy = run("noisy", "0.5");
    assert_ne!(clean, noisy);
    assert!(!tmp.path().join("clean").join("sma").join("42.json").exists());
}

#[test]
fn single_trial_tune_writes_best_params() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = lnnchain(
        &["-q", "tune", "-c", &cfg, "-o", "res", "--model", "gbt", "--trials", "1"],
        tmp.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let path = tmp.path().join("res/tune/gbt/best_params.json");
    let outcome: TuneOutcome = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(outcome.trials.len(), 1);
    assert_eq!(outcome.best_index, 0);

    // The tuned parameters feed back into simulate.
    let out = lnnchain(
        &[
            "-q", "simulate", "-c", &cfg, "-o", "tuned", "--model", "gbt", "--params",
            path.to_str().unwrap(),
        ],
        tmp.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
