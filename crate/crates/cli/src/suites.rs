use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use icrlsm_core::dataset::{generate_synthetic, GraphSource, SyntheticSpec};
use icrlsm_core::dci::{self, REPORT_FILE};
use icrlsm_core::graph::{graph_from_registry, CausalGraph};
use icrlsm_core::scm::ScmInit;
use icrlsm_core::trainer::{train_on_datasets, TrainConfig};
use icrlsm_core::{Error, Result};
use rayon::prelude::*;
use serde::Serialize;

use crate::commands::{failure, seed_dir};
use crate::config::ExperimentConfig;
use crate::manifest::Failure;
use crate::plot;

pub const WORKERS_ENV: &str = "ICRLSM_NUM_WORKERS";

/// One (configuration, seed) unit of work with its own output directory.
#[derive(Debug, Clone)]
pub struct Cell {
    pub group: String,
    pub graph: GraphSource,
    pub scm: ScmInit,
    pub seed: u64,
    pub dir: PathBuf,
}

#[derive(Debug, Clone, Serialize)]
pub struct CellRow {
    pub group: String,
    pub seed: u64,
    pub status: String,
    pub d_total: Option<f64>,
    pub c_total: Option<f64>,
    pub best_epoch: Option<usize>,
    pub best_val_loss: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SummaryRow {
    pub group: String,
    pub runs: usize,
    pub failed: usize,
    pub d_mean: f64,
    pub d_std: f64,
    pub c_mean: f64,
    pub c_std: f64,
}

fn io(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Parallel cells allowed by `ICRLSM_NUM_WORKERS` (default 1).
pub fn workers() -> Result<usize> {
    match std::env::var(WORKERS_ENV) {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(k) if k > 0 => Ok(k),
            _ => Err(Error::InvalidArgument(format!("{WORKERS_ENV} must be a positive integer, got {v:?}"))),
        },
    }
}

fn run_cell(cell: &Cell, config: &ExperimentConfig) -> Result<CellRow> {
    let (train, val, test) = generate_synthetic(&SyntheticSpec {
        graph: cell.graph.clone(),
        scm: cell.scm,
        counts: config.counts,
        seed: cell.seed,
    })?;
    let train_config = TrainConfig {
        seed: cell.seed,
        ..config.train.clone()
    };
    let outcome = train_on_datasets(&train, &val, None, &train_config, Some(&cell.dir))?;
    let report = dci::evaluate(&outcome.best, &test, &config.regressor)?;
    report.save(cell.dir.join(REPORT_FILE))?;
    let meta = cell.dir.join("graph.json");
    let graph = serde_json::json!({"adjacency": train.meta.adjacency, "scm_init": cell.scm});
    fs::write(&meta, serde_json::to_string_pretty(&graph).expect("graph serializes")).map_err(|e| io(&meta, e))?;
    println!("{} seed {}: D {:.3} C {:.3}", cell.group, cell.seed, report.d_total, report.c_total);
    Ok(CellRow {
        group: cell.group.clone(),
        seed: cell.seed,
        status: "ok".into(),
        d_total: Some(report.d_total),
        c_total: Some(report.c_total),
        best_epoch: Some(outcome.report.best_epoch),
        best_val_loss: Some(outcome.report.best_val_loss),
    })
}

/// Runs every cell (in parallel up to the worker cap) and returns rows in
/// cell order. A failing cell becomes a row with an error status.
pub fn run_cells(cells: &[Cell], config: &ExperimentConfig) -> Result<(Vec<CellRow>, Vec<Failure>)> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers()?)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let outcomes: Vec<Result<CellRow>> = pool.install(|| cells.par_iter().map(|c| run_cell(c, config)).collect());
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (cell, outcome) in cells.iter().zip(outcomes) {
        match outcome {
            Ok(row) => rows.push(row),
            Err(e) => {
                eprintln!("{} seed {}: {e}", cell.group, cell.seed);
                failures.push(failure(format!("{}/seed-{}", cell.group, cell.seed), &e));
                rows.push(CellRow {
                    group: cell.group.clone(),
                    seed: cell.seed,
                    status: format!("failed: {e}"),
                    d_total: None,
                    c_total: None,
                    best_epoch: None,
                    best_val_loss: None,
                });
            }
        }
    }
    Ok((rows, failures))
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    (m, var.sqrt())
}

/// Mean and sample standard deviation per group, in first-seen group order.
pub fn summarize(rows: &[CellRow]) -> Vec<SummaryRow> {
    let mut groups: Vec<&str> = Vec::new();
    for r in rows {
        if !groups.contains(&r.group.as_str()) {
            groups.push(&r.group);
        }
    }
    groups
        .into_iter()
        .map(|g| {
            let ok: Vec<&CellRow> = rows.iter().filter(|r| r.group == g && r.d_total.is_some()).collect();
            let total = rows.iter().filter(|r| r.group == g).count();
            let d: Vec<f64> = ok.iter().filter_map(|r| r.d_total).collect();
            let c: Vec<f64> = ok.iter().filter_map(|r| r.c_total).collect();
            let (d_mean, d_std) = mean_std(&d);
            let (c_mean, c_std) = mean_std(&c);
            SummaryRow {
                group: g.to_string(),
                runs: ok.len(),
                failed: total - ok.len(),
                d_mean,
                d_std,
                c_mean,
                c_std,
            }
        })
        .collect()
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| io(path, e))?;
    }
    w.flush().map_err(|e| io(path, e))
}

pub fn format_table(title: &str, group_header: &str, summary: &[SummaryRow]) -> String {
    let width = summary.iter().map(|r| r.group.len()).max().unwrap_or(0).max(group_header.len());
    let mut s = format!("{title}\n");
    writeln!(s, "{group_header:<width$}  {:>15}  {:>15}  {:>4}  {:>6}", "D", "C", "runs", "failed").unwrap();
    for r in summary {
        writeln!(
            s,
            "{:<width$}  {:>6.3} +- {:<5.3}  {:>6.3} +- {:<5.3}  {:>4}  {:>6}",
            r.group, r.d_mean, r.d_std, r.c_mean, r.c_std, r.runs, r.failed
        )
        .unwrap();
    }
    s
}

fn write_tables(out: &Path, rows: &[CellRow], summary: &[SummaryRow], text: &str) -> Result<()> {
    write_csv(&out.join("results.csv"), rows)?;
    write_csv(&out.join("table.csv"), summary)?;
    let tp = out.join("table.txt");
    fs::write(&tp, text).map_err(|e| io(&tp, e))?;
    print!("{text}");
    Ok(())
}

fn slug(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '-' })
        .collect()
}

fn cells_for(groups: &[(String, GraphSource, ScmInit)], config: &ExperimentConfig) -> Vec<Cell> {
    let mut cells = Vec::new();
    for (group, graph, scm) in groups {
        for &seed in &config.seeds {
            cells.push(Cell {
                group: group.clone(),
                graph: graph.clone(),
                scm: *scm,
                seed,
                dir: seed_dir(&config.output_dir.join(slug(group)), seed),
            });
        }
    }
    cells
}

fn prepare(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| io(out, e))
}

/// Registry graphs x seeds: mean D_total / C_total per graph.
pub fn table2(config: &ExperimentConfig) -> Result<Vec<Failure>> {
    prepare(&config.output_dir)?;
    let mut groups = Vec::new();
    for name in &config.suite.graphs {
        graph_from_registry(name)?;
        groups.push((name.clone(), GraphSource::Registry(name.clone()), config.scm));
    }
    let (rows, failures) = run_cells(&cells_for(&groups, config), config)?;
    let summary = summarize(&rows);
    let text = format_table("Identifiability per graph (mean +- std over seeds)", "graph", &summary);
    write_tables(&config.output_dir, &rows, &summary, &text)?;
    Ok(failures)
}

/// Base graph against chain/full edge sets and two intervention intensities.
pub fn ablation(config: &ExperimentConfig) -> Result<Vec<Failure>> {
    prepare(&config.output_dir)?;
    let s = &config.suite;
    let base = graph_from_registry(&s.base_graph)?;
    let n = base.n();
    let with_post = |m: f64| ScmInit {
        post_loc_mean: m,
        ..config.scm
    };
    let groups = vec![
        (format!("default ({})", s.base_graph), GraphSource::Explicit(base.clone()), config.scm),
        ("chain".to_string(), GraphSource::Explicit(CausalGraph::chain(n)?), config.scm),
        ("full".to_string(), GraphSource::Explicit(CausalGraph::complete(n)?), config.scm),
        (
            format!("significantly different (post_loc_mean={})", s.intense_post_loc_mean),
            GraphSource::Explicit(base.clone()),
            with_post(s.intense_post_loc_mean),
        ),
        (
            format!("almost similar (post_loc_mean={})", s.similar_post_loc_mean),
            GraphSource::Explicit(base),
            with_post(s.similar_post_loc_mean),
        ),
    ];
    let (rows, failures) = run_cells(&cells_for(&groups, config), config)?;
    let summary = summarize(&rows);
    let text = format_table(&format!("Ablation on {}", s.base_graph), "configuration", &summary);
    write_tables(&config.output_dir, &rows, &summary, &text)?;
    Ok(failures)
}

/// Random graphs with n in [n_min, n_max]; one row per (n, seed) plus a plot.
pub fn scaling(config: &ExperimentConfig) -> Result<Vec<Failure>> {
    prepare(&config.output_dir)?;
    let s = &config.suite;
    let groups: Vec<_> = (s.n_min..=s.n_max)
        .map(|n| {
            (
                format!("n={n}"),
                GraphSource::Random {
                    n,
                    edge_prob: s.edge_prob,
                },
                config.scm,
            )
        })
        .collect();
    let (rows, failures) = run_cells(&cells_for(&groups, config), config)?;
    let summary = summarize(&rows);
    let mut text = format_table(
        &format!("D_total against number of variables (edge_prob {})", s.edge_prob),
        "variables",
        &summary,
    );
    let means: Vec<f64> = summary.iter().map(|r| r.d_mean).collect();
    let monotone = means.windows(2).all(|w| w[1] <= w[0]);
    writeln!(text, "mean D non-increasing in n: {}", if monotone { "yes" } else { "no" }).unwrap();
    write_tables(&config.output_dir, &rows, &summary, &text)?;
    let points: Vec<(usize, f64, f64)> = (s.n_min..=s.n_max)
        .zip(&summary)
        .filter(|(_, r)| r.runs > 0)
        .map(|(n, r)| (n, r.d_mean, r.d_std))
        .collect();
    plot::scaling_svg(&config.output_dir.join("scaling.svg"), &points)?;
    Ok(failures)
}
