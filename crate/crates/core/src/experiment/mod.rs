//! Sweep orchestration: grid configuration, per-cell runs, the results CSV
//! and summary reports.

mod report;
mod svg;

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::annotate::{annotate_dataset, build_pairs, build_pairs_in, AnnotatorSpec, PairingKind};
use crate::error::{Error, Result};
use crate::metrics::{bon_improvement, order_consistency, Reference};
use crate::rm::{train_reward_model, ModelHyper, ModelVariant};
use crate::rng::RngState;
use crate::synth::{gen_world, Split, SyntheticWorld, WorldConfig};

pub use report::{
    emit_report, read_results, summarize, ReportKind, ReportOutput, SummaryRow, METRICS,
};
pub use svg::{bar_chart_svg, BarChart, BarSeries};

/// Column order of the results CSV.
pub const RESULT_COLUMNS: [&str; 15] = [
    "beta",
    "quantity",
    "pairing",
    "model",
    "seed",
    "status",
    "annotation_accuracy",
    "oc_golden",
    "oc_annotated",
    "bon_mean",
    "bon_se",
    "bon_oracle",
    "epochs",
    "wall_time_s",
    "error",
];

pub const RESULTS_FILE: &str = "results.csv";
pub const CONFIG_ECHO_FILE: &str = "config.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub world: WorldConfig,
    pub betas: Vec<f64>,
    pub quantities: Vec<usize>,
    pub pairings: Vec<PairingKind>,
    pub models: Vec<ModelVariant>,
    pub hyper: ModelHyper,
    pub seeds: Vec<u64>,
    pub bon_n: usize,
    /// Held-out same-prompt pairs for order consistency.
    pub n_eval_pairs: usize,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            master_seed: 0,
            world: WorldConfig::default(),
            betas: vec![0.5, 0.7, 1.0, 3.0, 5.0, 10.0],
            quantities: vec![5000, 10000, 20000, 40000],
            pairings: vec![PairingKind::SamePromptRandom],
            models: ModelVariant::ALL.to_vec(),
            hyper: ModelHyper::default(),
            seeds: vec![0, 1, 2, 3, 4],
            bon_n: 128,
            n_eval_pairs: 2000,
            out_dir: PathBuf::from("results"),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        let empty = |what: &str| Err(Error::Config(format!("{what} list is empty")));
        if self.betas.is_empty() {
            return empty("beta");
        }
        if self.quantities.is_empty() {
            return empty("quantity");
        }
        if self.pairings.is_empty() {
            return empty("pairing");
        }
        if self.models.is_empty() {
            return empty("model");
        }
        if self.seeds.is_empty() {
            return empty("seed");
        }
        if let Some(b) = self.betas.iter().find(|b| !(**b >= 0.0 && b.is_finite())) {
            return Err(Error::Config(format!(
                "beta must be finite and non-negative, got {b}"
            )));
        }
        if self.quantities.contains(&0) {
            return Err(Error::Config(
                "annotation quantities must be positive".into(),
            ));
        }
        let distinct: HashSet<u64> = self.seeds.iter().copied().collect();
        if distinct.len() != self.seeds.len() {
            return Err(Error::Config(format!(
                "seeds must be distinct: {:?}",
                self.seeds
            )));
        }
        if self.bon_n == 0 || self.bon_n > self.world.n_test_candidates {
            return Err(Error::Config(format!(
                "Best-of-N size {} must lie in 1..={}",
                self.bon_n, self.world.n_test_candidates
            )));
        }
        if self.n_eval_pairs == 0 {
            return Err(Error::Config("n_eval_pairs must be positive".into()));
        }
        self.hyper.mlp.validate()?;
        self.hyper.gbt.validate()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Grid cells in row order: beta, quantity, pairing, model, seed.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &beta in &self.betas {
            for &quantity in &self.quantities {
                for &pairing in &self.pairings {
                    for &model in &self.models {
                        for &seed in &self.seeds {
                            out.push(Cell {
                                beta,
                                quantity,
                                pairing,
                                model,
                                seed,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub beta: f64,
    pub quantity: usize,
    pub pairing: PairingKind,
    pub model: ModelVariant,
    pub seed: u64,
}

impl Cell {
    pub fn key(&self) -> String {
        format!(
            "beta={}|n={}|pairing={}|model={}|seed={}",
            self.beta,
            self.quantity,
            self.pairing.name(),
            self.model.name(),
            self.seed
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub beta: f64,
    pub quantity: usize,
    pub pairing: PairingKind,
    pub model: ModelVariant,
    pub seed: u64,
    pub status: String,
    pub annotation_accuracy: Option<f64>,
    pub oc_golden: Option<f64>,
    pub oc_annotated: Option<f64>,
    pub bon_mean: Option<f64>,
    pub bon_se: Option<f64>,
    pub bon_oracle: Option<f64>,
    pub epochs: Option<usize>,
    pub wall_time_s: f64,
    pub error: String,
}

impl ResultRow {
    pub fn cell(&self) -> Cell {
        Cell {
            beta: self.beta,
            quantity: self.quantity,
            pairing: self.pairing,
            model: self.model,
            seed: self.seed,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    fn failed(cell: &Cell, err: &Error, wall: f64) -> Self {
        ResultRow {
            beta: cell.beta,
            quantity: cell.quantity,
            pairing: cell.pairing,
            model: cell.model,
            seed: cell.seed,
            status: "error".into(),
            annotation_accuracy: None,
            oc_golden: None,
            oc_annotated: None,
            bon_mean: None,
            bon_se: None,
            bon_oracle: None,
            epochs: None,
            wall_time_s: wall,
            error: err.to_string(),
        }
    }
}

fn world_for_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SyntheticWorld> {
    let st = RngState::new(cfg.master_seed).derive(&format!("world|seed={seed}"));
    gen_world(&cfg.world, &mut st.rng())
}

/// Run one grid cell against its seed's world.
///
/// Pairs, labels, evaluation pairs and Best-of-N draws use streams that do
/// not depend on `beta` or the model, so cells differing only in those share
/// data (common random numbers); the training stream is keyed by the full
/// cell identifier.
pub fn run_cell(cfg: &ExperimentConfig, world: &SyntheticWorld, cell: &Cell) -> Result<ResultRow> {
    let start = Instant::now();
    let root = RngState::new(cfg.master_seed);
    let data_key = format!(
        "n={}|pairing={}|seed={}",
        cell.quantity,
        cell.pairing.name(),
        cell.seed
    );
    let annotator = if cell.beta == 0.0 {
        AnnotatorSpec::random()
    } else {
        AnnotatorSpec::sigmoid_beta(cell.beta)?
    };

    let pairs = build_pairs(
        world,
        cell.pairing,
        cell.quantity,
        &mut root.derive(&format!("pairs|{data_key}")).rng(),
    )?;
    let data = annotate_dataset(
        world,
        &pairs,
        &annotator,
        &mut root.derive(&format!("labels|{data_key}")).rng(),
    )?;
    let model = train_reward_model(
        world,
        &data.records,
        cell.model,
        &cfg.hyper,
        &mut root.derive(&format!("train|{}", cell.key())).rng(),
    )?;

    let seed_key = format!("seed={}", cell.seed);
    let eval_pairs = build_pairs_in(
        world.groups(Split::Test),
        PairingKind::SamePromptRandom,
        cfg.n_eval_pairs,
        &mut root.derive(&format!("eval-pairs|{seed_key}")).rng(),
    )?;
    let eval = annotate_dataset(
        world,
        &eval_pairs,
        &annotator,
        &mut root.derive(&format!("eval-labels|{seed_key}")).rng(),
    )?;
    let oc_g = order_consistency(&model, world, &eval.records, Reference::Golden)?;
    let oc_a = order_consistency(&model, world, &eval.records, Reference::Annotated)?;
    let bon = bon_improvement(
        &model,
        world,
        cfg.bon_n,
        &mut root.derive(&format!("bon|{seed_key}")).rng(),
    )?;

    Ok(ResultRow {
        beta: cell.beta,
        quantity: cell.quantity,
        pairing: cell.pairing,
        model: cell.model,
        seed: cell.seed,
        status: "ok".into(),
        annotation_accuracy: Some(data.accuracy),
        oc_golden: Some(oc_g.value),
        oc_annotated: Some(oc_a.value),
        bon_mean: Some(bon.mean_improvement),
        bon_se: Some(bon.se).filter(|s| s.is_finite()),
        bon_oracle: Some(bon.oracle_improvement),
        epochs: Some(model.meta.epochs),
        wall_time_s: start.elapsed().as_secs_f64(),
        error: String::new(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSummary {
    pub results_path: PathBuf,
    pub total_cells: usize,
    pub skipped: usize,
    pub ran: usize,
    pub failed: usize,
}

/// Drop a partially written trailing line left by an interrupted run.
fn repair_tail(path: &Path) -> Result<()> {
    let mut f = match OpenOptions::new().read(true).write(true).open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    if bytes.is_empty() || bytes.ends_with(b"\n") {
        return Ok(());
    }
    let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    warn!(
        "dropping {} bytes of an incomplete row at the end of {}",
        bytes.len() - keep,
        path.display()
    );
    f.set_len(keep as u64).map_err(|e| Error::io(path, e))?;
    f.seek(SeekFrom::End(0)).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn row_line(row: &ResultRow) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    w.serialize(row)?;
    w.into_inner()
        .map_err(|e| Error::io("<row buffer>", e.into_error()))
}

/// Execute every grid cell not already recorded as ok in
/// `out_dir/results.csv`, appending one row per cell in grid order.
pub fn run_sweep(cfg: &ExperimentConfig, out_dir: &Path, workers: usize) -> Result<SweepSummary> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let echo = serde_json::to_string_pretty(cfg)?;
    fs::write(out_dir.join(CONFIG_ECHO_FILE), echo)
        .map_err(|e| Error::io(out_dir.join(CONFIG_ECHO_FILE), e))?;

    let path = out_dir.join(RESULTS_FILE);
    repair_tail(&path)?;
    let done: HashSet<String> = if path.exists() {
        read_results(&path)?
            .iter()
            .filter(|r| r.is_ok())
            .map(|r| r.cell().key())
            .collect()
    } else {
        HashSet::new()
    };
    let cells = cfg.cells();
    let pending: Vec<Cell> = cells
        .iter()
        .filter(|c| !done.contains(&c.key()))
        .copied()
        .collect();
    let skipped = cells.len() - pending.len();
    info!(
        "{} cells, {} already done, {} to run",
        cells.len(),
        skipped,
        pending.len()
    );

    let fresh = fs::metadata(&path).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| Error::io(&path, e))?;
    let mut out = BufWriter::new(file);
    if fresh {
        out.write_all(RESULT_COLUMNS.join(",").as_bytes())
            .map_err(|e| Error::io(&path, e))?;
        out.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
        out.flush().map_err(|e| Error::io(&path, e))?;
    }

    let mut seeds_needed: Vec<u64> = pending.iter().map(|c| c.seed).collect();
    seeds_needed.sort_unstable();
    seeds_needed.dedup();
    let mut worlds: BTreeMap<u64, std::result::Result<Arc<SyntheticWorld>, String>> =
        BTreeMap::new();
    for s in seeds_needed {
        worlds.insert(
            s,
            world_for_seed(cfg, s)
                .map(Arc::new)
                .map_err(|e| e.to_string()),
        );
    }

    let workers = workers.max(1).min(pending.len().max(1));
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, ResultRow)>();
    let mut failed = 0;
    std::thread::scope(|scope| -> Result<()> {
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, pending, worlds) = (&next, &pending, &worlds);
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(cell) = pending.get(i) else { break };
                let start = Instant::now();
                let row = match &worlds[&cell.seed] {
                    Ok(w) => run_cell(cfg, w, cell),
                    Err(msg) => Err(Error::Config(format!("world generation failed: {msg}"))),
                }
                .unwrap_or_else(|e| ResultRow::failed(cell, &e, start.elapsed().as_secs_f64()));
                if tx.send((i, row)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        // Reorder so rows land in grid order whatever the completion order.
        let mut buffer: BTreeMap<usize, ResultRow> = BTreeMap::new();
        let mut next_out = 0;
        for (i, row) in rx {
            buffer.insert(i, row);
            while let Some(row) = buffer.remove(&next_out) {
                if !row.is_ok() {
                    failed += 1;
                    warn!("cell {} failed: {}", row.cell().key(), row.error);
                }
                out.write_all(&row_line(&row)?)
                    .map_err(|e| Error::io(&path, e))?;
                out.flush().map_err(|e| Error::io(&path, e))?;
                info!("finished {} ({:.1}s)", row.cell().key(), row.wall_time_s);
                next_out += 1;
            }
        }
        Ok(())
    })?;

    Ok(SweepSummary {
        results_path: path,
        total_cells: cells.len(),
        skipped,
        ran: pending.len(),
        failed,
    })
}

/// The metric columns of a results file (everything but wall time), for
/// run-to-run comparisons.
pub fn metric_columns(path: &Path) -> Result<Vec<Vec<String>>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let keep: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| *h != "wall_time_s")
        .map(|(i, _)| i)
        .collect();
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        out.push(keep.iter().map(|&i| rec[i].to_string()).collect());
    }
    Ok(out)
}

/// Write a fresh results file (header plus rows), replacing any existing one.
pub fn write_results(rows: &[ResultRow], path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(f);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
