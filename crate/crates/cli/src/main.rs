//! `icrlsm`: data generation, training, evaluation and the synthetic
//! experiment suites.

mod commands;
mod config;
mod manifest;
mod plot;
mod suites;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use icrlsm_core::dataset::SplitCounts;
use icrlsm_core::dci::RegressorConfig;
use icrlsm_core::Result;

use config::{ExperimentConfig, GraphChoice, PAPER_EPOCHS};
use manifest::{Failure, RunManifest};

#[derive(Parser, Debug)]
#[command(name = "icrlsm", version, about = "Causal representation learning with mechanism switch variables")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate one synthetic dataset per seed.
    Generate,
    /// Train one model per seed.
    Train {
        /// Existing dataset directory; otherwise each seed generates its own.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Score a checkpoint on a dataset's test split.
    Eval {
        /// Checkpoint directory, or a training run directory containing best/.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Every registry graph x every seed: generate, train, evaluate, tabulate.
    Table2 {
        /// Comma-separated registry names (default G1..G10).
        #[arg(long, value_delimiter = ',')]
        graphs: Option<Vec<String>>,
    },
    /// Edge-set and intervention-intensity ablation around a base graph.
    Ablation {
        #[arg(long)]
        base_graph: Option<String>,
        /// post_loc_mean of the significantly-different row.
        #[arg(long)]
        intense_mean: Option<f64>,
        /// post_loc_mean of the almost-similar row.
        #[arg(long)]
        similar_mean: Option<f64>,
    },
    /// D_total against the number of variables on random graphs.
    Scaling {
        #[arg(long)]
        n_min: Option<usize>,
        #[arg(long)]
        n_max: Option<usize>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Regressor {
    Forest,
    Lasso,
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment config JSON (or a run_manifest.json); flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Comma-separated seed list.
    #[arg(long, global = true, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Registry graph name, G1..G10.
    #[arg(long, global = true, conflicts_with = "random_n")]
    graph: Option<String>,
    /// Use a random DAG with this many nodes instead of a registry graph.
    #[arg(long, global = true)]
    random_n: Option<usize>,
    /// Edge probability for --random-n and for the scaling sweep.
    #[arg(long, global = true)]
    edge_prob: Option<f64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// 100k/10k/10k samples and 100 epochs.
    #[arg(long, global = true)]
    paper_scale: bool,
    /// Zero wall-clock fields so reruns write identical files.
    #[arg(long, global = true)]
    deterministic: bool,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    #[arg(long, global = true)]
    lr_start: Option<f64>,
    #[arg(long, global = true)]
    lr_end: Option<f64>,
    #[arg(long, global = true)]
    beta_kl: Option<f64>,
    #[arg(long, global = true)]
    consistency_weight: Option<f64>,
    #[arg(long, global = true)]
    delta_weight: Option<f64>,
    #[arg(long, global = true)]
    train: Option<usize>,
    #[arg(long, global = true)]
    val: Option<usize>,
    #[arg(long, global = true)]
    test: Option<usize>,
    #[arg(long, global = true)]
    pre_loc_mean: Option<f64>,
    #[arg(long, global = true)]
    post_loc_mean: Option<f64>,
    #[arg(long, global = true, value_enum)]
    regressor: Option<Regressor>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn resolve(cli: Cli) -> Result<(Command, ExperimentConfig)> {
    let c = cli.common;
    let mut cfg = match &c.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if c.paper_scale {
        cfg.counts = SplitCounts::PAPER;
        cfg.train.epochs = PAPER_EPOCHS;
    }
    if let Some(s) = c.seed {
        cfg.seeds = vec![s];
    }
    set(&mut cfg.seeds, c.seeds);
    if let Some(name) = c.graph {
        cfg.graph = GraphChoice::Name(name);
    }
    set(&mut cfg.suite.edge_prob, c.edge_prob);
    if let Some(n) = c.random_n {
        cfg.graph = GraphChoice::Random {
            n,
            edge_prob: cfg.suite.edge_prob,
        };
    }
    set(&mut cfg.output_dir, c.out);
    if c.deterministic {
        cfg.train.deterministic = true;
    }
    let t = &mut cfg.train;
    set(&mut t.epochs, c.epochs);
    set(&mut t.batch_size, c.batch_size);
    set(&mut t.lr_start, c.lr_start);
    set(&mut t.lr_end, c.lr_end);
    set(&mut t.weights.beta_kl, c.beta_kl);
    set(&mut t.weights.consistency_weight, c.consistency_weight);
    set(&mut t.weights.delta_recon_weight, c.delta_weight);
    set(&mut cfg.counts.train, c.train);
    set(&mut cfg.counts.val, c.val);
    set(&mut cfg.counts.test, c.test);
    set(&mut cfg.scm.pre_loc_mean, c.pre_loc_mean);
    set(&mut cfg.scm.post_loc_mean, c.post_loc_mean);
    match c.regressor {
        Some(Regressor::Forest) => cfg.regressor = RegressorConfig::default(),
        Some(Regressor::Lasso) => cfg.regressor = RegressorConfig::lasso(),
        None => {}
    }
    match &cli.command {
        Command::Generate => {}
        Command::Train { data } => {
            if data.is_some() {
                cfg.data_dir = data.clone();
            }
        }
        Command::Eval { checkpoint, data } => {
            if checkpoint.is_some() {
                cfg.checkpoint = checkpoint.clone();
            }
            if data.is_some() {
                cfg.data_dir = data.clone();
            }
        }
        Command::Table2 { graphs } => set(&mut cfg.suite.graphs, graphs.clone()),
        Command::Ablation {
            base_graph,
            intense_mean,
            similar_mean,
        } => {
            set(&mut cfg.suite.base_graph, base_graph.clone());
            set(&mut cfg.suite.intense_post_loc_mean, *intense_mean);
            set(&mut cfg.suite.similar_post_loc_mean, *similar_mean);
        }
        Command::Scaling { n_min, n_max } => {
            set(&mut cfg.suite.n_min, *n_min);
            set(&mut cfg.suite.n_max, *n_max);
        }
    }
    cfg.validate()?;
    Ok((cli.command, cfg))
}

fn run(command: &Command, cfg: &ExperimentConfig) -> Result<(&'static str, Vec<Failure>)> {
    Ok(match command {
        Command::Generate => ("generate", commands::generate(cfg)?),
        Command::Train { .. } => ("train", commands::train(cfg)?),
        Command::Eval { .. } => ("eval", commands::eval(cfg)?),
        Command::Table2 { .. } => ("table2", suites::table2(cfg)?),
        Command::Ablation { .. } => ("ablation", suites::ablation(cfg)?),
        Command::Scaling { .. } => ("scaling", suites::scaling(cfg)?),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let clock = Instant::now();
    let outcome = resolve(cli).and_then(|(command, cfg)| {
        let (name, failures) = run(&command, &cfg)?;
        RunManifest::write(name, &cfg, clock.elapsed().as_secs_f64(), failures.clone())?;
        Ok(failures)
    });
    match outcome {
        Ok(failures) => {
            let code = failures.iter().map(|f| f.exit_code).max().unwrap_or(0);
            if code != 0 {
                eprintln!("{} run(s) failed; see run_manifest.json", failures.len());
            }
            ExitCode::from(code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(commands::exit_code(&e) as u8)
        }
    }
}
