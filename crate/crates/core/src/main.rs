use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use actir::config::ExperimentConfig;
use actir::datagen::{DomainRng, TaskKind};
use actir::error::Result;
use actir::eval::{adaptation_protocol, disentanglement_stats, invariant_accuracy};
use actir::experiment::{generate_domains, load_mnist, run_experiment, train_run};
use actir::model::ModelParams;
use actir::objectives::Method;
use actir::report::{emit_report, histogram_csv, write_atomic};

#[derive(Parser)]
#[command(name = "actir", version, about = "Anti-causal transportable and invariant representation learning")]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of runs, overriding the config.
    #[arg(long, global = true)]
    runs: Option<usize>,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Directory holding the four MNIST IDX files.
    #[arg(long, global = true)]
    mnist_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the domains of one run as JSON.
    GenData,
    /// Train the configured method once and save the model.
    Train,
    /// Few-shot adaptation of a saved model on the test domain.
    Adapt {
        #[arg(long)]
        model: PathBuf,
    },
    /// Per-unit z-dependence of a trained model, with histogram CSV.
    Diagnose {
        /// Saved model; trains the configured method when absent.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Print the results table for a directory of run records.
    Report,
    /// All runs of the configured experiment.
    Run,
    /// Synthetic (and, with --mnist-dir, Color MNIST) rows for every method.
    ReproduceTable1,
    /// The counterexample rows for every method.
    ReproduceTable3,
}

impl Cli {
    fn config(&self, task: TaskKind, method: Method) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::standard(task, method),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(r) = self.runs {
            cfg.runs = r;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        if let Some(d) = &self.mnist_dir {
            cfg.mnist_dir = Some(d.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("results"))
    }
}

fn reproduce(cli: &Cli, task: TaskKind, out: &Path) -> Result<()> {
    for method in Method::ALL {
        let mut cfg = cli.config(task, method)?;
        cfg.task = task;
        cfg.method = method;
        cfg.out_dir = out.to_path_buf();
        if task == TaskKind::ColorMnist {
            cfg.runs = cli.runs.unwrap_or(5);
        }
        eprintln!("{} / {}: {} runs", task.name(), method.name(), cfg.runs);
        run_experiment(&cfg)?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let default = (TaskKind::Synthetic, Method::Actir);
    match &cli.command {
        Command::GenData => {
            let cfg = cli.config(default.0, default.1)?;
            let mnist = load_mnist(&cfg)?;
            let domains = generate_domains(&cfg, cfg.seed, mnist.as_ref())?;
            for d in domains.all() {
                let path = cfg.out_dir.join("domains").join(format!("{}.json", d.domain_id));
                write_atomic(&path, serde_json::to_string(d)?.as_bytes())?;
                println!("{} ({} examples)", path.display(), d.len());
            }
        }
        Command::Train => {
            let cfg = cli.config(default.0, default.1)?;
            let mnist = load_mnist(&cfg)?;
            let domains = generate_domains(&cfg, cfg.seed, mnist.as_ref())?;
            let (params, log) = train_run(&cfg, &cfg.hyper, &domains, cfg.seed)?;
            let path = cfg.out_dir.join("model.json");
            params.save(&path)?;
            println!("model: {}", path.display());
            println!("final loss: {}", log.last().unwrap_or(f64::NAN));
            if let Some((step, _)) = log.selected {
                println!("kept checkpoint: step {step}");
            }
            println!("val accuracy: {:.4}", invariant_accuracy(&params, &domains.val)?);
            println!("test accuracy: {:.4}", invariant_accuracy(&params, &domains.test)?);
        }
        Command::Adapt { model } => {
            let cfg = cli.config(default.0, default.1)?;
            let params = ModelParams::load(model)?;
            let mnist = load_mnist(&cfg)?;
            let domains = generate_domains(&cfg, cfg.seed, mnist.as_ref())?;
            let a = &cfg.adaptation;
            for &n in &a.n_support {
                let mut rng = DomainRng::for_stream(cfg.seed, &format!("adapt-{n}"));
                let rep = adaptation_protocol(&params, &domains.test, n, a.repeats, a.steps, a.lr, &mut rng)?;
                println!("adaptation({}): {:.4} ± {:.4}", n, rep.mean, rep.stderr);
            }
        }
        Command::Diagnose { model } => {
            let cfg = cli.config(default.0, default.1)?;
            let mnist = load_mnist(&cfg)?;
            let domains = generate_domains(&cfg, cfg.seed, mnist.as_ref())?;
            let params = match model {
                Some(p) => ModelParams::load(p)?,
                None => train_run(&cfg, &cfg.hyper, &domains, cfg.seed)?.0,
            };
            let stats = disentanglement_stats(&params, &domains.test)?;
            write_atomic(&cfg.out_dir.join("histogram.csv"), histogram_csv(&stats).as_bytes())?;
            write_atomic(
                &cfg.out_dir.join("units.json"),
                serde_json::to_string_pretty(&stats.units)?.as_bytes(),
            )?;
            for u in &stats.units {
                println!(
                    "unit {}: mean(z={}) {:.4}  mean(z={}) {:.4}  score {:.3}",
                    u.unit, stats.z_lo, u.mean_lo, stats.z_hi, u.mean_hi, u.score
                );
            }
            println!("separation ratio: {:.3}", stats.separation_ratio(params.split.k));
        }
        Command::Report => {
            print!("{}", emit_report(&cli.out_dir())?);
        }
        Command::Run => {
            let cfg = cli.config(default.0, default.1)?;
            run_experiment(&cfg)?;
            print!("{}", emit_report(&cfg.out_dir)?);
        }
        Command::ReproduceTable1 => {
            let out = cli.out_dir();
            reproduce(cli, TaskKind::Synthetic, &out.join("synthetic"))?;
            print!("{}", emit_report(&out.join("synthetic"))?);
            if cli.mnist_dir.is_some() {
                reproduce(cli, TaskKind::ColorMnist, &out.join("color_mnist"))?;
                print!("{}", emit_report(&out.join("color_mnist"))?);
            }
        }
        Command::ReproduceTable3 => {
            let out = cli.out_dir().join("counterexample");
            reproduce(cli, TaskKind::Counterexample, &out)?;
            print!("{}", emit_report(&out)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
