//! Subcommands run end to end on a tiny configuration.

use std::fs;
use std::path::Path;

use clap::Parser;

use super::{dispatch, Cli};

const TINY: &str = r#"
desk_scale = true
trials = 2
budget = 2
training_steps = 15
trajectory_steps = 10
test_tasks = 4
inference_steps = 5
inducing = 8
batch_tasks = 2
batch_points = 5
decoder_hidden = 6
predictive_samples = 2
grid_points = 15
oracle_steps = 20
"#;

fn paml(args: &[&str]) -> Result<(), String> {
    let cli = Cli::try_parse_from(std::iter::once("paml").chain(args.iter().copied())).map_err(|e| e.to_string())?;
    dispatch(&cli).map_err(|e| e.to_string())
}

fn lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().map(str::to_string).collect()
}

#[test]
fn run_writes_every_output_and_plot_redraws_them() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    fs::write(&cfg, TINY).unwrap();
    let out = dir.path().join("run");
    paml(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "4",
        "--with-oracle",
    ])
    .unwrap();
    for f in [
        "config.toml",
        "records.csv",
        "curves.csv",
        "selections.csv",
        "elbo_trace.csv",
        "latents.csv",
        "curves_nll.svg",
        "curves_rmse.svg",
        "latents_round_0.svg",
        "latents_round_2.svg",
    ] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    // three strategies x two trials x three rounds, plus two oracle rows
    assert_eq!(lines(&out.join("records.csv")).len(), 1 + 3 * 2 * 3 + 2);
    // acquired tasks only
    assert_eq!(lines(&out.join("selections.csv")).len(), 1 + 3 * 2 * 2);
    let curves = lines(&out.join("curves.csv"));
    assert!(curves[0].starts_with("strategy,round,n,nll_mean"));
    assert_eq!(curves.len(), 1 + 3 * 3 + 1);
    let elbo = lines(&out.join("elbo_trace.csv"));
    assert!(elbo[0].starts_with("strategy,trial,round,step,elbo"));
    assert_eq!(elbo.len(), 1 + 3 * 2 * 3 * 15);

    // the saved config reproduces the run
    let saved = fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(saved.contains("seed = 4"));

    let redrawn = dir.path().join("plots");
    paml(&["plot", "--input", out.to_str().unwrap(), "--out", redrawn.to_str().unwrap()]).unwrap();
    assert_eq!(
        fs::read_to_string(redrawn.join("curves.csv")).unwrap(),
        fs::read_to_string(out.join("curves.csv")).unwrap()
    );
    assert!(redrawn.join("latents_round_1.svg").exists());
}

#[test]
fn simulate_writes_trajectory_and_image() {
    let dir = tempfile::tempdir().unwrap();
    let traj = dir.path().join("traj.csv");
    let img = dir.path().join("pole.pgm");
    paml(&[
        "simulate",
        "--env",
        "cart-pole",
        "--params",
        "1.0",
        "2.0",
        "--steps",
        "30",
        "--out",
        traj.to_str().unwrap(),
        "--image",
        img.to_str().unwrap(),
        "--size",
        "16",
    ])
    .unwrap();
    let rows = lines(&traj);
    assert_eq!(rows[0], "t,x0,x1,x2,x3,u");
    assert_eq!(rows.len(), 1 + 31);
    let pgm = fs::read(&img).unwrap();
    assert!(pgm.starts_with(b"P5\n16 16\n255\n"));
    assert_eq!(pgm.len(), b"P5\n16 16\n255\n".len() + 256);
}

#[test]
fn bad_arguments_fail_cleanly() {
    let err = paml(&["simulate", "--env", "pendubot", "--image", "x.pgm", "--out", "/dev/null"]).unwrap_err();
    assert!(err.contains("cart-pole only"), "{err}");
    let err = paml(&["run", "--env", "unicycle"]).unwrap_err();
    assert!(err.contains("unknown environment"), "{err}");
}
