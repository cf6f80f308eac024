use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use paml::envs::{self, render_cartpole, CartPoleParams, EnvKind};
use paml::harness::{
    aggregate, oracle_record, plot_curves, plot_latents, read_latents, read_records, render_config, run_experiment,
    run_oracle, setup_trial, system, write_curves, write_elbo_trace, write_latents, write_records, write_selections,
    CurvePanel, ExperimentConfig, HarnessError, Metric, Mode, RoundRecord, Strategy,
};
use paml::taskspace::TaskEmbedding;

#[derive(Parser)]
#[command(name = "paml", about = "Probabilistic active meta-learning experiments", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the active learning loop for one or more strategies.
    Run {
        #[command(flatten)]
        exp: ExpArgs,
        /// Strategies to run (default: all that apply to the mode).
        #[arg(long, value_delimiter = ',')]
        strategy: Vec<Strategy>,
        /// Also train the oracle on the test grid.
        #[arg(long)]
        with_oracle: bool,
    },
    /// Train the meta-model on the test grid only.
    Oracle {
        #[command(flatten)]
        exp: ExpArgs,
    },
    /// Redraw curves from the records of earlier runs, one panel per
    /// input directory.
    Plot {
        #[arg(long = "input", required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
    /// Roll out one task and export the trajectory (and a cart-pole image).
    Simulate {
        #[arg(long, default_value = "cart-pole")]
        env: EnvKind,
        /// The two physical parameters.
        #[arg(long, num_args = 2, default_values_t = [1.0, 1.0])]
        params: Vec<f64>,
        #[arg(long, default_value_t = 100)]
        steps: usize,
        #[arg(long, default_value = "trajectory.csv")]
        out: PathBuf,
        /// Write the upright cart-pole as a PGM image.
        #[arg(long)]
        image: Option<PathBuf>,
        #[arg(long, default_value_t = 32)]
        size: usize,
    },
}

#[derive(Args)]
struct ExpArgs {
    #[arg(long)]
    env: Option<EnvKind>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// TOML file with configuration keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Start from the laptop-sized defaults.
    #[arg(long)]
    desk_scale: bool,
}

impl ExpArgs {
    fn config(&self) -> Result<ExperimentConfig, HarnessError> {
        let mut table = match &self.config {
            Some(p) => fs::read_to_string(p)?
                .parse::<toml::Table>()
                .map_err(|e| HarnessError::Config(format!("{}: {e}", p.display())))?,
            None => toml::Table::new(),
        };
        if let Some(env) = self.env {
            table.insert("env".into(), env.name().into());
        }
        if let Some(mode) = self.mode {
            table.insert("mode".into(), mode.name().into());
        }
        if self.desk_scale {
            table.insert("desk_scale".into(), true.into());
        }
        let mut cfg = ExperimentConfig::from_toml_str(&table.to_string())?;
        if let Some(b) = self.budget {
            cfg.budget = b;
        }
        if let Some(t) = self.trials {
            cfg.trials = t;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, HarnessError> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_curve_plots(out: &Path, panels: &[CurvePanel]) -> Result<(), HarnessError> {
    plot_curves(&out.join("curves_nll.svg"), panels, Metric::Nll)?;
    plot_curves(&out.join("curves_rmse.svg"), panels, Metric::Rmse)
}

/// One latent scatter per round from the first PAML trial in the file.
fn write_latent_plots(out: &Path, n_init: usize) -> Result<(), HarnessError> {
    let rows = read_latents(File::open(out.join("latents.csv"))?)?;
    let Some(first) = rows.iter().find(|r| r.strategy == "paml") else {
        return Ok(());
    };
    let trial = first.trial;
    let last = rows.iter().map(|r| r.round).max().unwrap_or(0);
    for round in 0..=last {
        let embs = rows
            .iter()
            .filter(|r| r.strategy == "paml" && r.trial == trial && r.round == round)
            .map(|r| r.embedding())
            .collect::<Result<Vec<TaskEmbedding>, _>>()?;
        if !embs.is_empty() {
            let title = format!("latent embeddings after round {round}");
            plot_latents(&out.join(format!("latents_round_{round}.svg")), &embs, n_init, &title)?;
        }
    }
    Ok(())
}

fn panel_title(cfg: &ExperimentConfig) -> String {
    format!("{} ({})", cfg.env.name(), cfg.mode.name())
}

fn run(exp: &ExpArgs, strategies: &[Strategy], with_oracle: bool) -> Result<(), HarnessError> {
    let cfg = exp.config()?;
    let strategies: Vec<Strategy> = if strategies.is_empty() {
        Strategy::ALL
            .into_iter()
            .filter(|s| cfg.mode != Mode::Pixel || *s != Strategy::Lhs)
            .collect()
    } else {
        strategies.to_vec()
    };
    fs::create_dir_all(&exp.out)?;
    fs::write(exp.out.join("config.toml"), cfg.to_toml_string())?;
    let res = run_experiment(&cfg, &strategies, with_oracle)?;
    for t in res.trials.iter().filter(|t| t.aborted.is_some()) {
        eprintln!("{} trial {}: {}", t.strategy.name(), t.trial, t.aborted.as_deref().unwrap_or(""));
    }
    let records = res.records();
    write_records(create(&exp.out.join("records.csv"))?, &records)?;
    write_selections(create(&exp.out.join("selections.csv"))?, &records)?;
    write_elbo_trace(create(&exp.out.join("elbo_trace.csv"))?, &res.trials)?;
    write_latents(create(&exp.out.join("latents.csv"))?, &res.trials)?;
    let curves = aggregate(&records);
    write_curves(create(&exp.out.join("curves.csv"))?, &curves)?;
    write_curve_plots(
        &exp.out,
        &[CurvePanel {
            title: panel_title(&cfg),
            curves: curves.clone(),
        }],
    )?;
    write_latent_plots(&exp.out, cfg.n_init)?;
    for c in curves.iter().filter(|c| c.round == cfg.budget || c.strategy == "oracle") {
        println!(
            "{:<7} round {:>2}: nll {:>8.4} ± {:.4}  rmse {:.4} ± {:.4}",
            c.strategy, c.round, c.nll_mean, c.nll_se, c.rmse_mean, c.rmse_se
        );
    }
    println!("results in {}", exp.out.display());
    Ok(())
}

fn oracle(exp: &ExpArgs) -> Result<(), HarnessError> {
    let cfg = exp.config()?;
    fs::create_dir_all(&exp.out)?;
    let mut records: Vec<RoundRecord> = Vec::new();
    for trial in 0..cfg.trials {
        let setup = setup_trial(&cfg, trial)?;
        let m = run_oracle(&cfg, &setup)?;
        println!("trial {trial}: nll {:.4} rmse {:.4}", m.nll, m.rmse);
        records.push(oracle_record(&setup, trial, m));
    }
    write_records(create(&exp.out.join("oracle.csv"))?, &records)?;
    write_curves(create(&exp.out.join("oracle_curves.csv"))?, &aggregate(&records))?;
    Ok(())
}

fn plot(inputs: &[PathBuf], out: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(out)?;
    let mut panels = Vec::new();
    let mut all = Vec::new();
    for dir in inputs {
        let mut records = read_records(File::open(dir.join("records.csv"))?)?;
        let oracle_file = dir.join("oracle.csv");
        if oracle_file.exists() && !records.iter().any(|r| r.strategy == "oracle") {
            records.extend(read_records(File::open(oracle_file)?)?);
        }
        let title = match ExperimentConfig::from_file(&dir.join("config.toml")) {
            Ok(cfg) => panel_title(&cfg),
            Err(_) => dir.display().to_string(),
        };
        let curves = aggregate(&records);
        all.extend(curves.iter().cloned());
        panels.push(CurvePanel { title, curves });
    }
    if inputs.len() == 1 {
        write_curves(create(&out.join("curves.csv"))?, &all)?;
    }
    write_curve_plots(out, &panels)?;
    if let [dir] = inputs {
        if dir.join("latents.csv").exists() {
            let n_init = ExperimentConfig::from_file(&dir.join("config.toml")).map_or(0, |c| c.n_init);
            if dir != out {
                fs::copy(dir.join("latents.csv"), out.join("latents.csv"))?;
            }
            write_latent_plots(out, n_init)?;
        }
    }
    println!("plots in {}", out.display());
    Ok(())
}

fn simulate(
    env: EnvKind,
    params: &[f64],
    steps: usize,
    out: &Path,
    image: Option<&Path>,
    size: usize,
) -> Result<(), HarnessError> {
    let traj = envs::simulate_task(&system(env, [params[0], params[1]]), steps)?;
    traj.write_csv(create(out)?)?;
    println!("{} steps written to {}", traj.len(), out.display());
    if let Some(path) = image {
        if env != EnvKind::CartPole {
            return Err(HarnessError::Config("images are rendered for the cart-pole only".into()));
        }
        let p = CartPoleParams::new(params[0], params[1]);
        let img = render_cartpole(&p, &[0.0, std::f64::consts::PI], &render_config(size))?;
        img.write_pgm(create(path)?)?;
        println!("image written to {}", path.display());
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<(), HarnessError> {
    match &cli.command {
        Command::Run {
            exp,
            strategy,
            with_oracle,
        } => run(exp, strategy, *with_oracle),
        Command::Oracle { exp } => oracle(exp),
        Command::Plot { inputs, out } => plot(inputs, out),
        Command::Simulate {
            env,
            params,
            steps,
            out,
            image,
            size,
        } => simulate(*env, params, *steps, out, image.as_deref(), *size),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(&Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests;
