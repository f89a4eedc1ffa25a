//! Implementations behind the `sat` subcommands.

use std::fs;
use std::path::Path;
use std::time::Instant;

use log::info;
use sat_core::data::{self, Dataset};
use sat_core::model::AttentionRecord;
use sat_core::rng::derive_seed;
use sat_core::train::{self, EpochRecord, Metrics, TrainHistory, TrainObserver};
use sat_core::verify;
use sat_core::{Readout, Task};
use serde::Serialize;
use serde_json::{json, Value};

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::config::RunConfig;
use crate::jsonl::load_jsonl;
use crate::{Error, Result};

pub const CHECKPOINT_FILE: &str = "model.satckpt";
pub const HISTORY_FILE: &str = "history.json";

/// Wall clock plus progress logging.
pub struct LogObserver {
    start: Instant,
}

impl Default for LogObserver {
    fn default() -> Self {
        LogObserver { start: Instant::now() }
    }
}

impl TrainObserver for LogObserver {
    fn now(&mut self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }

    fn on_epoch(&mut self, r: &EpochRecord) {
        info!(
            "epoch {:>4}  loss {:.6}  val {}  lr {:.3e}  {:.1}s",
            r.epoch,
            r.train_loss,
            r.val_metric.map_or("-".into(), |v| format!("{v:.6}")),
            r.lr,
            r.wall_time
        );
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum GenKind {
    CycleVsTriangles,
    TriangleCount,
    Sbm,
}

#[derive(Clone, Debug)]
pub struct GenArgs {
    pub kind: GenKind,
    pub n: usize,
    pub nodes: usize,
    pub p: f64,
    pub blocks: Vec<usize>,
    pub p_in: f64,
    pub p_out: f64,
    pub seed: u64,
}

pub fn generate(a: &GenArgs) -> Result<Dataset> {
    Ok(match a.kind {
        GenKind::CycleVsTriangles => data::gen_cycle_vs_triangles(a.n, a.seed)?,
        GenKind::TriangleCount => data::gen_triangle_count_regression(a.n, a.nodes, a.p, a.seed)?,
        GenKind::Sbm => data::gen_sbm_node_classification(a.n, &a.blocks, a.p_in, a.p_out, a.seed)?,
    })
}

#[derive(Debug, Serialize)]
pub struct TrainSummary {
    pub config: RunConfig,
    pub history: TrainHistory,
    pub val: Option<Metrics>,
    pub test: Option<Metrics>,
}

/// Loads `data`, resolves the config against it, trains, and writes the
/// checkpoint and history (with the resolved config) into `out`.
pub fn train(data: &Path, mut config: RunConfig, out: &Path) -> Result<TrainSummary> {
    let dataset = load_jsonl(data)?;
    config.resolve_for(&dataset);
    let model = config.build_model()?;
    let dataset = config.split(dataset)?;
    info!(
        "{} graphs ({} train / {} val / {} test), task {:?}",
        dataset.len(),
        dataset.splits.train.len(),
        dataset.splits.val.len(),
        dataset.splits.test.len(),
        dataset.task()
    );
    let (_, init) = sat_core::SatModel::new(config.model.clone(), config.train.seed)?;
    let (params, history) = train::train_from(&model, init, &dataset, &config.train, &mut LogObserver::default())?;
    let prepared = train::prepare_all(&model, &dataset)?;
    let score = |idx: &[usize]| -> Result<Option<Metrics>> {
        if idx.is_empty() {
            return Ok(None);
        }
        Ok(Some(train::evaluate(&model, &params, &dataset, &prepared, idx)?))
    };
    let summary = TrainSummary {
        val: score(&dataset.splits.val)?,
        test: score(&dataset.splits.test)?,
        config: config.clone(),
        history,
    };
    fs::create_dir_all(out).map_err(Error::io(out))?;
    save_checkpoint(&Checkpoint { config, params }, out.join(CHECKPOINT_FILE))?;
    let hist_path = out.join(HISTORY_FILE);
    fs::write(&hist_path, serde_json::to_string_pretty(&summary)?).map_err(Error::io(&hist_path))?;
    Ok(summary)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitName {
    Train,
    Val,
    Test,
    All,
}

/// Metrics of a checkpoint on one split of `data`, re-split with the
/// checkpoint's settings.
pub fn evaluate(data: &Path, checkpoint: &Path, which: SplitName) -> Result<Metrics> {
    let ckpt = load_checkpoint(checkpoint)?;
    let model = ckpt.config.build_model()?;
    let dataset = ckpt.config.split(load_jsonl(data)?)?;
    let idx: Vec<usize> = match which {
        SplitName::Train => dataset.splits.train.clone(),
        SplitName::Val => dataset.splits.val.clone(),
        SplitName::Test => dataset.splits.test.clone(),
        SplitName::All => (0..dataset.len()).collect(),
    };
    let prepared = train::prepare_all(&model, &dataset)?;
    Ok(train::evaluate(&model, &ckpt.params, &dataset, &prepared, &idx)?)
}

#[derive(Debug, Serialize)]
pub struct AttentionDump {
    pub graph_index: usize,
    pub num_nodes: usize,
    pub readout: Readout,
    /// Index of the virtual readout node in every matrix, if present.
    pub cls_index: Option<usize>,
    pub prediction: Vec<Vec<f64>>,
    pub layers: Vec<AttentionRecord>,
}

pub fn dump_attention(data: &Path, checkpoint: &Path, graph_index: usize) -> Result<AttentionDump> {
    let ckpt = load_checkpoint(checkpoint)?;
    let model = ckpt.config.build_model()?;
    let dataset = load_jsonl(data)?;
    let sample = dataset.samples().get(graph_index).ok_or_else(|| {
        Error::Core(sat_core::Error::Dataset(format!(
            "graph index {graph_index} out of range for {} graphs",
            dataset.len()
        )))
    })?;
    let pg = model.prepare(&sample.graph)?;
    let (pred, trace) = model.predict(&ckpt.params, &pg)?;
    Ok(AttentionDump {
        graph_index,
        num_nodes: sample.graph.num_nodes(),
        readout: model.cfg.readout,
        cls_index: trace.cls_index,
        prediction: (0..pred.rows()).map(|r| pred.row(r).to_vec()).collect(),
        layers: trace.records(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Suite {
    Theorem1,
    Theorem2,
    Smoother,
    Equivariance,
    Gradcheck,
    All,
}

#[derive(Debug, Serialize)]
pub struct SuiteReport {
    pub suite: &'static str,
    pub passed: bool,
    pub details: Value,
}

#[derive(Debug, Serialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub suites: Vec<SuiteReport>,
}

pub const THEOREM2_RUNS: usize = 20;
pub const THEOREM2_DRAWS: usize = 50;
pub const GRADCHECK_GRAPHS: usize = 5;

pub fn verify_theorem1(trials: usize, seed: u64) -> Result<SuiteReport> {
    let reports = verify::theorem1_harness(trials, seed, false)?;
    let violations = reports.iter().filter(|r| !r.holds).count();
    let joint_violations = reports.iter().filter(|r| !r.holds_joint).count();
    let same = verify::theorem1_harness(trials.min(50), derive_seed(seed, 1, 0), true)?;
    let same_ok = same.iter().all(|r| r.d_hh == 0.0 && r.d_xx == 0.0 && r.rhs == r.c1 * r.h_dist && r.holds);
    let tightest = reports.iter().map(|r| r.lhs / r.rhs.max(f64::MIN_POSITIVE)).fold(0.0, f64::max);
    Ok(SuiteReport {
        suite: "theorem1",
        passed: violations == 0 && joint_violations == 0 && same_ok,
        details: json!({
            "pairs": reports.len(),
            "violations": violations,
            "joint_violations": joint_violations,
            "same_graph_cases": same.len(),
            "same_graph_matching_terms_vanish": same_ok,
            "max_lhs_over_rhs": tightest,
        }),
    })
}

pub fn verify_theorem2(seed: u64) -> Result<SuiteReport> {
    let mut draws = Vec::with_capacity(THEOREM2_RUNS);
    for run in 0..THEOREM2_RUNS {
        let out = verify::theorem2_hexagon_vs_triangles(THEOREM2_DRAWS, derive_seed(seed, run as u64, 2))?;
        draws.push(out.found.then_some(out.draws));
    }
    Ok(SuiteReport {
        suite: "theorem2",
        passed: draws.iter().all(Option::is_some),
        details: json!({ "runs": THEOREM2_RUNS, "max_draws": THEOREM2_DRAWS, "draws_needed": draws }),
    })
}

pub fn verify_smoother(trials: usize, seed: u64) -> Result<SuiteReport> {
    let dev = verify::kernel_smoother_harness(trials, seed)?;
    Ok(SuiteReport {
        suite: "smoother",
        passed: dev < 1e-12,
        details: json!({ "instances": trials, "max_deviation": dev }),
    })
}

pub fn verify_equivariance(trials: usize, seed: u64) -> Result<SuiteReport> {
    let cases = verify::equivariance_harness(trials, seed)?;
    let worst = cases.iter().map(|c| c.report.max()).fold(0.0, f64::max);
    Ok(SuiteReport {
        suite: "equivariance",
        passed: worst < 1e-9,
        details: json!({ "cases": cases.len(), "max_deviation": worst }),
    })
}

pub fn verify_gradcheck(seed: u64) -> Result<SuiteReport> {
    let cases = verify::gradcheck_harness(GRADCHECK_GRAPHS, seed)?;
    let worst = cases.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    Ok(SuiteReport {
        suite: "gradcheck",
        passed: worst < 1e-4,
        details: json!({ "graphs_per_config": GRADCHECK_GRAPHS, "max_rel_error": worst, "configs": cases }),
    })
}

pub fn verify(suite: Suite, seed: u64, trials: usize) -> Result<VerifyReport> {
    let mut suites = Vec::new();
    let all = suite == Suite::All;
    if all || suite == Suite::Theorem1 {
        suites.push(verify_theorem1(trials, seed)?);
    }
    if all || suite == Suite::Theorem2 {
        suites.push(verify_theorem2(seed)?);
    }
    if all || suite == Suite::Smoother {
        suites.push(verify_smoother(trials, seed)?);
    }
    if all || suite == Suite::Equivariance {
        suites.push(verify_equivariance(trials, seed)?);
    }
    if all || suite == Suite::Gradcheck {
        suites.push(verify_gradcheck(seed)?);
    }
    Ok(VerifyReport { passed: suites.iter().all(|s| s.passed), suites })
}

/// Task of a dataset file, for messages.
pub fn describe(dataset: &Dataset) -> String {
    let kind = match dataset.task() {
        Task::Regression => "regression".to_owned(),
        Task::GraphClass => format!("{}-class graph classification", dataset.num_classes()),
        Task::NodeClass => format!("{}-class node classification", dataset.num_classes()),
    };
    format!("{} graphs, {kind}, {} node features", dataset.len(), dataset.feat_dim())
}
