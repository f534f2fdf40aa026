//! Baseline, auxiliary sweep and DPR probe, run against a backend into a
//! resumable [`RunStore`].
//!
//! Every run is keyed by the digest of its full coordinate (phase, aux
//! task, fraction, seed, learning rates, eval set). A run whose record is
//! already in the store with status `ok` is never executed again; failed
//! runs are retried. Learning-rate trials are cached the same way under
//! `trials/`, so a restarted orchestrator re-derives identical rates
//! without training.
//!
//! Output directory layout:
//!
//! ```text
//! <output_dir>/store/      run store (byte-identical across mock reruns)
//! <output_dir>/data/       rendered train/val files handed to the backend
//! <output_dir>/timings.tsv wall time per executed run
//! ```

mod store;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use store::{
    run_id, trial_id, Cell, CellRef, EvalDataset, IndexEntry, Phase, RunRecord, RunStatus, RunStore, StoreError,
    TrialPhase, TrialRecord,
};

use crate::backend::{BackendSpec, Gateway, GatewayError, Hyperparams, ModelHandle, TrainJob};
use crate::corpus::{load_aux_corpus, read_jsonl, AuxRecord, AuxTask, IngestError, Polarity, Split};
use crate::dataset::{subset_fraction, BuildError, DatasetBundle, FRACTION_GRID};
use crate::labeler::LabeledInstance;
use crate::metrics::{dpr_score, macro_f1_with, DprMatch, F1Averaging, MetricError};
use crate::prompt::{
    parse_alsc_output, render_alsc, render_aux, render_dpr, write_prompted_jsonl, PromptConfig, PromptError,
    PromptedExample,
};

/// Seeds required per cell unless `small_scale` is set.
pub const MIN_SEEDS: usize = 10;
pub const DEFAULT_LR_GRID_AUX: [f64; 3] = [5e-4, 1e-4, 5e-5];
pub const DEFAULT_LR_GRID_TARGET: [f64; 3] = [1e-3, 5e-4, 1e-4];
/// Seeds per learning-rate candidate.
pub const LR_SELECTION_SEEDS: usize = 3;

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("no validation metric for seed {seed} of cell {cell}")]
    MissingValMetric { cell: String, seed: u64 },
    #[error("stopped after {executed} new runs")]
    Interrupted { executed: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> OrchestratorError + '_ {
    move |source| OrchestratorError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn default_fractions() -> Vec<f64> {
    FRACTION_GRID.to_vec()
}

fn default_lr_aux() -> Vec<f64> {
    DEFAULT_LR_GRID_AUX.to_vec()
}

fn default_lr_target() -> Vec<f64> {
    DEFAULT_LR_GRID_TARGET.to_vec()
}

fn default_selection_seeds() -> usize {
    LR_SELECTION_SEEDS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepManifest {
    #[serde(default)]
    pub aux_tasks: Vec<AuxTask>,
    #[serde(default = "default_fractions")]
    pub fractions: Vec<f64>,
    /// Per-task fraction lists overriding `fractions` (e.g. DPR at 1.0 only).
    #[serde(default)]
    pub task_fractions: BTreeMap<AuxTask, Vec<f64>>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_lr_aux")]
    pub lr_grid_aux: Vec<f64>,
    #[serde(default = "default_lr_target")]
    pub lr_grid_target: Vec<f64>,
    #[serde(default = "default_selection_seeds")]
    pub lr_selection_seeds: usize,
    /// Permit fewer than ten seeds.
    #[serde(default)]
    pub small_scale: bool,
}

impl SweepManifest {
    pub fn validate(&self) -> Result<(), OrchestratorError> {
        let bad = |m: String| Err(OrchestratorError::Config(m));
        let distinct: HashSet<u64> = self.seeds.iter().copied().collect();
        if distinct.len() != self.seeds.len() {
            return bad("seeds must be distinct".into());
        }
        if self.seeds.is_empty() || (self.seeds.len() < MIN_SEEDS && !self.small_scale) {
            return bad(format!(
                "{} seeds given; at least {MIN_SEEDS} are required unless small_scale is set",
                self.seeds.len()
            ));
        }
        if self.lr_grid_aux.is_empty() || self.lr_grid_target.is_empty() {
            return bad("learning-rate grids must be non-empty".into());
        }
        if self.lr_selection_seeds == 0 {
            return bad("lr_selection_seeds must be positive".into());
        }
        for &f in self.fractions.iter().chain(self.task_fractions.values().flatten()) {
            if !(f > 0.0 && f <= 1.0) {
                return bad(format!("fraction {f} outside (0, 1]"));
            }
            if !FRACTION_GRID.contains(&f) {
                log::warn!("fraction {f} is not one of {FRACTION_GRID:?}");
            }
        }
        Ok(())
    }

    pub fn fractions_for(&self, task: AuxTask) -> &[f64] {
        self.task_fractions.get(&task).unwrap_or(&self.fractions)
    }

    /// Sweep cells in manifest order.
    pub fn sweep_cells(&self) -> Vec<Cell> {
        self.aux_tasks
            .iter()
            .flat_map(|&task| {
                self.fractions_for(task)
                    .iter()
                    .map(move |&fraction| Cell::Aux { task, fraction })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxPaths {
    pub train: PathBuf,
    pub val: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingDefaults {
    pub batch_size: u32,
    pub max_epochs: u32,
    pub early_stop_patience: u32,
}

impl Default for TrainingDefaults {
    fn default() -> Self {
        let h = Hyperparams::default();
        Self {
            batch_size: h.batch_size,
            max_epochs: h.max_epochs,
            early_stop_patience: h.early_stop_patience,
        }
    }
}

/// One experiment, as read from its JSON config file. Relative paths are
/// resolved against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Labeled instances (JSONL, as written by `apply-decisions`).
    pub labeled_corpus: PathBuf,
    pub alsc_cr_bundle: PathBuf,
    pub alsc_regular_bundle: PathBuf,
    /// Raw auxiliary corpora (JSONL) per task.
    #[serde(default)]
    pub aux_corpora: BTreeMap<AuxTask, AuxPaths>,
    /// Raw DPR evaluation records for the probe.
    #[serde(default)]
    pub dpr_eval: Option<PathBuf>,
    pub manifest: SweepManifest,
    pub backend: BackendSpec,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub training: TrainingDefaults,
    #[serde(default)]
    pub f1_averaging: F1Averaging,
    #[serde(default)]
    pub dpr_match: DprMatch,
    #[serde(default)]
    pub prompt: PromptConfig,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, OrchestratorError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut config: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| OrchestratorError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.labeled_corpus);
        fix(&mut self.alsc_cr_bundle);
        fix(&mut self.alsc_regular_bundle);
        fix(&mut self.output_dir);
        if let Some(p) = self.dpr_eval.as_mut() {
            fix(p);
        }
        for paths in self.aux_corpora.values_mut() {
            fix(&mut paths.train);
            fix(&mut paths.val);
        }
    }

    pub fn store_dir(&self) -> PathBuf {
        self.output_dir.join("store")
    }
}

/// Pick the rate with the highest mean metric; ties go to the smaller rate.
/// A one-element grid is returned without evaluation.
pub fn select_learning_rate<E>(grid: &[f64], mut mean_metric: impl FnMut(f64) -> Result<f64, E>) -> Result<f64, E> {
    assert!(!grid.is_empty(), "learning-rate grid must be non-empty");
    if grid.len() == 1 {
        return Ok(grid[0]);
    }
    let mut best: Option<(f64, f64)> = None;
    for &lr in grid {
        let m = mean_metric(lr)?;
        let m = if m.is_nan() { f64::NEG_INFINITY } else { m };
        best = match best {
            Some((blr, bm)) if bm > m || (bm == m && blr <= lr) => Some((blr, bm)),
            _ => Some((lr, m)),
        };
    }
    Ok(best.expect("grid is non-empty").0)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Stop (with `Interrupted`) before starting more work once this many
    /// new run records were written.
    pub max_new_runs: Option<usize>,
}

struct AlscEval {
    path: PathBuf,
    inputs: Vec<String>,
    golds: Vec<Polarity>,
}

struct AuxData {
    train: Vec<AuxRecord>,
    val_path: PathBuf,
}

pub struct Orchestrator {
    config: ExperimentConfig,
    gateway: Gateway,
    store: RunStore,
    options: RunOptions,
    executed: usize,
    cr_train: PathBuf,
    cr_val: AlscEval,
    cr_test: AlscEval,
    regular_test: AlscEval,
    aux: BTreeMap<AuxTask, AuxData>,
    aux_files: HashSet<PathBuf>,
    dpr: Option<(Vec<String>, Vec<String>)>,
    models: HashMap<String, ModelHandle>,
    learning_rates: HashMap<String, f64>,
}

fn write_examples(path: &Path, examples: &[PromptedExample]) -> Result<(), OrchestratorError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut out = std::io::BufWriter::new(file);
    write_prompted_jsonl(examples, &mut out).map_err(io_err(path))?;
    out.flush().map_err(io_err(path))
}

fn fmt_lr(x: f64) -> String {
    store::num_repr(x)
}

/// Errors that fail one run instead of the whole experiment.
fn run_failure(e: OrchestratorError) -> Result<String, OrchestratorError> {
    match e {
        OrchestratorError::Gateway(_) | OrchestratorError::Metric(_) => Ok(e.to_string()),
        other => Err(other),
    }
}

struct Outcome {
    lineage: Vec<String>,
    predictions: Vec<String>,
    metric: f64,
    val_metric: Option<f64>,
}

impl Orchestrator {
    /// Load inputs, render the ALSC files and connect to the backend.
    pub fn new(config: ExperimentConfig, options: RunOptions) -> Result<Self, OrchestratorError> {
        config.manifest.validate()?;
        let gateway = config.backend.connect()?;
        Self::with_gateway(config, gateway, options)
    }

    pub fn with_gateway(
        config: ExperimentConfig,
        gateway: Gateway,
        options: RunOptions,
    ) -> Result<Self, OrchestratorError> {
        config.manifest.validate()?;
        let corpus_file = fs::File::open(&config.labeled_corpus).map_err(io_err(&config.labeled_corpus))?;
        let labeled: Vec<LabeledInstance> = read_jsonl(BufReader::new(corpus_file))?;
        let by_id: HashMap<&str, &LabeledInstance> = labeled.iter().map(|li| (li.id(), li)).collect();
        let cr = DatasetBundle::read_manifest(&config.alsc_cr_bundle)?;
        let regular = DatasetBundle::read_manifest(&config.alsc_regular_bundle)?;

        let data_dir = config.output_dir.join("data");
        fs::create_dir_all(data_dir.join("aux")).map_err(io_err(&data_dir))?;
        let render = |ids: &[String], name: &str| -> Result<AlscEval, OrchestratorError> {
            let mut examples = Vec::with_capacity(ids.len());
            let mut golds = Vec::with_capacity(ids.len());
            for id in ids {
                let li = by_id
                    .get(id.as_str())
                    .ok_or_else(|| BuildError::UnknownInstance(id.clone()))?;
                examples.push(render_alsc(&li.instance));
                golds.push(li.instance.polarity);
            }
            let path = data_dir.join(name);
            write_examples(&path, &examples)?;
            Ok(AlscEval {
                path,
                inputs: examples.into_iter().map(|e| e.input_text).collect(),
                golds,
            })
        };
        let cr_train = render(&cr.train, "alsc-cr-train.jsonl")?.path;
        let cr_val = render(&cr.val, "alsc-cr-val.jsonl")?;
        let cr_test = render(&cr.test, "alsc-cr-test.jsonl")?;
        let regular_test = render(&regular.test, "alsc-regular-test.jsonl")?;

        let dpr = match &config.dpr_eval {
            Some(path) => {
                let records = load_aux_corpus(AuxTask::Dpr, Split::Test, path)?;
                let rendered = records.iter().map(render_dpr).collect::<Result<Vec<_>, _>>()?;
                Some(rendered.into_iter().map(|e| (e.input_text, e.target_text)).unzip())
            }
            None => None,
        };

        let store = RunStore::open(config.store_dir())?;
        Ok(Self {
            config,
            gateway,
            store,
            options,
            executed: 0,
            cr_train,
            cr_val,
            cr_test,
            regular_test,
            aux: BTreeMap::new(),
            aux_files: HashSet::new(),
            dpr,
            models: HashMap::new(),
            learning_rates: HashMap::new(),
        })
    }

    pub fn store(&self) -> &RunStore {
        &self.store
    }

    /// New run records written in this session.
    pub fn executed(&self) -> usize {
        self.executed
    }

    pub fn into_gateway(self) -> Gateway {
        self.gateway
    }

    fn hyperparams(&self, learning_rate: f64) -> Hyperparams {
        let t = &self.config.training;
        Hyperparams {
            learning_rate,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            early_stop_patience: t.early_stop_patience,
        }
    }

    fn aux_data(&mut self, task: AuxTask) -> Result<&AuxData, OrchestratorError> {
        if !self.aux.contains_key(&task) {
            let paths = self
                .config
                .aux_corpora
                .get(&task)
                .ok_or_else(|| OrchestratorError::Config(format!("no corpus configured for aux task {task}")))?
                .clone();
            let train = load_aux_corpus(task, Split::Train, &paths.train)?;
            let val = load_aux_corpus(task, Split::Val, &paths.val)?;
            let rendered = val
                .iter()
                .map(|r| render_aux(r, &self.config.prompt))
                .collect::<Result<Vec<_>, _>>()?;
            let val_path = self
                .config
                .output_dir
                .join("data/aux")
                .join(format!("{task}-val.jsonl"));
            write_examples(&val_path, &rendered)?;
            self.aux.insert(task, AuxData { train, val_path });
        }
        Ok(&self.aux[&task])
    }

    fn aux_train_file(&mut self, task: AuxTask, fraction: f64, seed: u64) -> Result<PathBuf, OrchestratorError> {
        let name = if fraction >= 1.0 {
            format!("{task}-train-full.jsonl")
        } else {
            format!("{task}-train-{}-s{seed}.jsonl", fmt_lr(fraction))
        };
        let path = self.config.output_dir.join("data/aux").join(name);
        if !self.aux_files.contains(&path) {
            let prompt = self.config.prompt.clone();
            let subset = subset_fraction(&self.aux_data(task)?.train, fraction, seed);
            let rendered = subset
                .iter()
                .map(|r| render_aux(r, &prompt))
                .collect::<Result<Vec<_>, _>>()?;
            write_examples(&path, &rendered)?;
            self.aux_files.insert(path.clone());
        }
        Ok(path)
    }

    fn train_cached(&mut self, job: TrainJob) -> Result<ModelHandle, OrchestratorError> {
        if let Some(h) = self.models.get(&job.job_id) {
            return Ok(h.clone());
        }
        log::info!("training {}", job.job_id);
        let handle = self.gateway.train(&job)?;
        self.models.insert(job.job_id, handle.clone());
        Ok(handle)
    }

    /// Aux checkpoints are keyed by (task, fraction, aux seed, rate); the
    /// aux seed equals the target seed.
    fn aux_model(
        &mut self,
        task: AuxTask,
        fraction: f64,
        seed: u64,
        lr: f64,
    ) -> Result<ModelHandle, OrchestratorError> {
        let train_path = self.aux_train_file(task, fraction, seed)?;
        let val_path = self.aux_data(task)?.val_path.clone();
        let job = TrainJob {
            job_id: format!("aux/{task}@{}/s{seed}/lr{}", fmt_lr(fraction), fmt_lr(lr)),
            train_path,
            val_path,
            hyperparams: self.hyperparams(lr),
            seed,
            init_from: None,
        };
        self.train_cached(job)
    }

    fn target_model(
        &mut self,
        cell: Cell,
        seed: u64,
        lr_aux: Option<f64>,
        lr_target: f64,
    ) -> Result<ModelHandle, OrchestratorError> {
        let (parent, prefix) = match cell {
            Cell::Aux { task, fraction } => {
                let lr_aux =
                    lr_aux.ok_or_else(|| OrchestratorError::Config(format!("cell {cell} needs an aux rate")))?;
                let aux = self.aux_model(task, fraction, seed, lr_aux)?;
                (Some(aux.model_id), format!("target/{cell}/aux-lr{}", fmt_lr(lr_aux)))
            }
            Cell::Baseline | Cell::Regular => (None, "target/baseline".to_string()),
        };
        let job = TrainJob {
            job_id: format!("{prefix}/s{seed}/lr{}", fmt_lr(lr_target)),
            train_path: self.cr_train.clone(),
            val_path: self.cr_val.path.clone(),
            hyperparams: self.hyperparams(lr_target),
            seed,
            init_from: parent,
        };
        self.train_cached(job)
    }

    fn alsc_score(
        &mut self,
        model: &ModelHandle,
        eval: EvalDataset,
        split_val: bool,
    ) -> Result<(Vec<String>, f64), OrchestratorError> {
        let set = match (eval, split_val) {
            (_, true) => &self.cr_val,
            (EvalDataset::AlscRegular, false) => &self.regular_test,
            _ => &self.cr_test,
        };
        let inputs = set.inputs.clone();
        let golds = set.golds.clone();
        let outputs = self.gateway.predict(model, &inputs)?;
        let parsed: Vec<_> = outputs.iter().map(|o| parse_alsc_output(o)).collect();
        let score = macro_f1_with(&parsed, &golds, self.config.f1_averaging)?;
        Ok((outputs, score))
    }

    fn selection_seeds(&self) -> Vec<u64> {
        let m = &self.config.manifest;
        m.seeds.iter().copied().take(m.lr_selection_seeds).collect()
    }

    fn trial(
        &mut self,
        phase: TrialPhase,
        cell: Cell,
        seed: u64,
        lr_aux: Option<f64>,
        lr_target: Option<f64>,
    ) -> Result<f64, OrchestratorError> {
        let id = trial_id(phase, &cell, seed, lr_aux, lr_target);
        if let Some(t) = self.store.get_trial(&id)? {
            return Ok(t.metric);
        }
        let metric = match (phase, cell) {
            (TrialPhase::Aux, Cell::Aux { task, fraction }) => {
                let lr = lr_aux.expect("aux trials carry an aux rate");
                self.aux_model(task, fraction, seed, lr)?.best_val_metric
            }
            (TrialPhase::Target, _) => {
                let lr = lr_target.expect("target trials carry a target rate");
                let model = self.target_model(cell, seed, lr_aux, lr)?;
                self.alsc_score(&model, EvalDataset::AlscCr, true)?.1
            }
            (TrialPhase::Aux, _) => return Err(OrchestratorError::Config(format!("no aux phase for cell {cell}"))),
        };
        self.store.put_trial(&TrialRecord {
            trial_id: id,
            phase,
            cell: cell.to_string(),
            seed,
            lr_aux,
            lr_target,
            metric,
        })?;
        Ok(metric)
    }

    fn mean_trial(
        &mut self,
        phase: TrialPhase,
        cell: Cell,
        lr_aux: Option<f64>,
        lr_target: Option<f64>,
    ) -> Result<f64, OrchestratorError> {
        let seeds = self.selection_seeds();
        let mut sum = 0.0;
        for &seed in &seeds {
            sum += self.trial(phase, cell, seed, lr_aux, lr_target)?;
        }
        Ok(sum / seeds.len() as f64)
    }

    /// Aux rate for a sweep cell, chosen on the aux task's validation metric.
    pub fn select_aux_lr(&mut self, cell: Cell) -> Result<f64, OrchestratorError> {
        let key = format!("aux/{cell}");
        if let Some(&lr) = self.learning_rates.get(&key) {
            return Ok(lr);
        }
        let grid = self.config.manifest.lr_grid_aux.clone();
        let lr = select_learning_rate(&grid, |lr| self.mean_trial(TrialPhase::Aux, cell, Some(lr), None))?;
        log::info!("{key}: learning rate {lr}");
        self.learning_rates.insert(key, lr);
        Ok(lr)
    }

    /// Target rate for a cell, chosen on ALSC-CR validation macro-F1.
    pub fn select_target_lr(&mut self, cell: Cell, lr_aux: Option<f64>) -> Result<f64, OrchestratorError> {
        let key = format!("target/{cell}/{lr_aux:?}");
        if let Some(&lr) = self.learning_rates.get(&key) {
            return Ok(lr);
        }
        let grid = self.config.manifest.lr_grid_target.clone();
        let lr = select_learning_rate(&grid, |lr| self.mean_trial(TrialPhase::Target, cell, lr_aux, Some(lr)))?;
        log::info!("{key}: learning rate {lr}");
        self.learning_rates.insert(key, lr);
        Ok(lr)
    }

    fn check_budget(&self) -> Result<(), OrchestratorError> {
        match self.options.max_new_runs {
            Some(max) if self.executed >= max => Err(OrchestratorError::Interrupted {
                executed: self.executed,
            }),
            _ => Ok(()),
        }
    }

    fn record_timing(&self, run_id: &str, started: Instant) -> Result<(), OrchestratorError> {
        let path = self.config.output_dir.join("timings.tsv");
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        writeln!(f, "{run_id}\t{:.3}", started.elapsed().as_secs_f64()).map_err(io_err(&path))
    }

    #[allow(clippy::too_many_arguments)]
    fn make_record(
        &self,
        phase: Phase,
        cell: Cell,
        seed: u64,
        lr_aux: Option<f64>,
        lr_target: Option<f64>,
        eval: EvalDataset,
        outcome: Result<Outcome, String>,
    ) -> RunRecord {
        let (aux_task, fraction) = match cell {
            Cell::Aux { task, fraction } => (Some(task), Some(fraction)),
            _ => (None, None),
        };
        let metric_variant = match eval {
            EvalDataset::Dpr => match self.config.dpr_match {
                DprMatch::Normalized => "DPR accuracy (normalized match)",
                DprMatch::Exact => "DPR accuracy (exact match)",
            },
            _ => self.config.f1_averaging.variant_name(),
        }
        .to_string();
        let base = RunRecord {
            run_id: run_id(phase, aux_task, fraction, seed, lr_aux, lr_target, eval),
            phase,
            aux_task,
            fraction,
            seed,
            lr_aux,
            lr_target,
            lineage: Vec::new(),
            eval_dataset: eval,
            status: RunStatus::Ok,
            error: None,
            metric: None,
            metric_variant,
            val_metric: None,
            predictions: Vec::new(),
            imported: false,
        };
        match outcome {
            Ok(o) => RunRecord {
                lineage: o.lineage,
                metric: Some(o.metric),
                val_metric: o.val_metric,
                predictions: o.predictions,
                ..base
            },
            Err(message) => {
                log::warn!("run {} failed: {message}", base.run_id);
                RunRecord {
                    status: RunStatus::Failed,
                    error: Some(message),
                    ..base
                }
            }
        }
    }

    fn commit(&mut self, record: RunRecord, started: Instant) -> Result<RunRecord, OrchestratorError> {
        self.store.put(&record)?;
        self.record_timing(&record.run_id, started)?;
        self.executed += 1;
        Ok(record)
    }

    fn existing(&self, run_id: &str) -> Result<Option<RunRecord>, OrchestratorError> {
        if self.store.is_complete(run_id) {
            Ok(self.store.get(run_id)?)
        } else {
            Ok(None)
        }
    }

    /// Target training only; each seed's model is scored on ALSC-CR test
    /// and ALSC-Regular test (two records per seed).
    pub fn run_baseline(&mut self) -> Result<Vec<RunRecord>, OrchestratorError> {
        let lr = self.select_target_lr(Cell::Baseline, None)?;
        let mut out = Vec::new();
        for seed in self.config.manifest.seeds.clone() {
            let ids = [EvalDataset::AlscCr, EvalDataset::AlscRegular]
                .map(|eval| (eval, run_id(Phase::Baseline, None, None, seed, None, Some(lr), eval)));
            let done: Vec<Option<RunRecord>> = ids.iter().map(|(_, id)| self.existing(id)).collect::<Result<_, _>>()?;
            if done.iter().all(Option::is_some) {
                out.extend(done.into_iter().flatten());
                continue;
            }
            self.check_budget()?;
            let started = Instant::now();
            let attempt = (|| -> Result<(ModelHandle, f64), OrchestratorError> {
                let model = self.target_model(Cell::Baseline, seed, None, lr)?;
                let val = self.alsc_score(&model, EvalDataset::AlscCr, true)?.1;
                Ok((model, val))
            })();
            let trained = match attempt {
                Ok(t) => Ok(t),
                Err(e) => Err(run_failure(e)?),
            };
            for ((eval, _), existing) in ids.into_iter().zip(done) {
                if let Some(r) = existing {
                    out.push(r);
                    continue;
                }
                let outcome = match &trained {
                    Ok((model, val)) => match self.alsc_score(model, eval, false) {
                        Ok((predictions, metric)) => Ok(Outcome {
                            lineage: model.lineage.clone(),
                            predictions,
                            metric,
                            val_metric: Some(*val),
                        }),
                        Err(e) => Err(run_failure(e)?),
                    },
                    Err(message) => Err(message.clone()),
                };
                let record = self.make_record(Phase::Baseline, Cell::Baseline, seed, None, Some(lr), eval, outcome);
                out.push(self.commit(record, started)?);
            }
        }
        Ok(out)
    }

    /// Aux training on a seed-keyed fraction, then target training from the
    /// aux checkpoint, scored on ALSC-CR test.
    pub fn run_aux_sweep(&mut self) -> Result<Vec<RunRecord>, OrchestratorError> {
        let mut out = Vec::new();
        for cell in self.config.manifest.sweep_cells() {
            let lr_aux = self.select_aux_lr(cell)?;
            let lr_target = self.select_target_lr(cell, Some(lr_aux))?;
            let Cell::Aux { task, fraction } = cell else {
                unreachable!("sweep cells are aux cells")
            };
            for seed in self.config.manifest.seeds.clone() {
                let id = run_id(
                    Phase::Sweep,
                    Some(task),
                    Some(fraction),
                    seed,
                    Some(lr_aux),
                    Some(lr_target),
                    EvalDataset::AlscCr,
                );
                if let Some(r) = self.existing(&id)? {
                    out.push(r);
                    continue;
                }
                self.check_budget()?;
                let started = Instant::now();
                let attempt = (|| -> Result<Outcome, OrchestratorError> {
                    let model = self.target_model(cell, seed, Some(lr_aux), lr_target)?;
                    let val = self.alsc_score(&model, EvalDataset::AlscCr, true)?.1;
                    let (predictions, metric) = self.alsc_score(&model, EvalDataset::AlscCr, false)?;
                    Ok(Outcome {
                        lineage: model.lineage,
                        predictions,
                        metric,
                        val_metric: Some(val),
                    })
                })();
                let outcome = match attempt {
                    Ok(o) => Ok(o),
                    Err(e) => Err(run_failure(e)?),
                };
                let record = self.make_record(
                    Phase::Sweep,
                    cell,
                    seed,
                    Some(lr_aux),
                    Some(lr_target),
                    EvalDataset::AlscCr,
                    outcome,
                );
                out.push(self.commit(record, started)?);
            }
        }
        Ok(out)
    }

    /// For the baseline and every sweep cell, score the seed model with the
    /// best ALSC-CR validation metric (ties: smallest seed) on DPR.
    pub fn run_dpr_probe(&mut self, runs: &[RunRecord]) -> Result<Vec<RunRecord>, OrchestratorError> {
        let Some((inputs, golds)) = self.dpr.clone() else {
            return Err(OrchestratorError::Config("dpr_eval is not configured".into()));
        };
        let mut cells = vec![Cell::Baseline];
        cells.extend(self.config.manifest.sweep_cells());
        let mut out = Vec::new();
        for cell in cells {
            let candidates: Vec<&RunRecord> = runs
                .iter()
                .filter(|r| {
                    r.phase != Phase::Probe && r.eval_dataset == EvalDataset::AlscCr && r.is_ok() && r.cell() == cell
                })
                .collect();
            if candidates.is_empty() {
                log::warn!("cell {cell} has no successful runs; not probed");
                continue;
            }
            let chosen = select_probe_seed(&candidates)?;
            let (seed, lr_aux, lr_target) = (chosen.seed, chosen.lr_aux, chosen.lr_target);
            let lr_target = lr_target.ok_or_else(|| {
                OrchestratorError::Config(format!(
                    "run {} has no target rate and cannot be retrained",
                    chosen.run_id
                ))
            })?;
            let (aux_task, fraction) = (chosen.aux_task, chosen.fraction);
            let id = run_id(
                Phase::Probe,
                aux_task,
                fraction,
                seed,
                lr_aux,
                Some(lr_target),
                EvalDataset::Dpr,
            );
            if let Some(r) = self.existing(&id)? {
                out.push(r);
                continue;
            }
            self.check_budget()?;
            let started = Instant::now();
            let dpr_match = self.config.dpr_match;
            let attempt = (|| -> Result<Outcome, OrchestratorError> {
                // Models from an earlier session are gone; retraining is deterministic in the job.
                let model = self.target_model(cell, seed, lr_aux, lr_target)?;
                let predictions = self.gateway.predict(&model, &inputs)?;
                let metric = dpr_score(&predictions, &golds, dpr_match)?;
                Ok(Outcome {
                    lineage: model.lineage,
                    predictions,
                    metric,
                    val_metric: chosen.val_metric,
                })
            })();
            let outcome = match attempt {
                Ok(o) => Ok(o),
                Err(e) => Err(run_failure(e)?),
            };
            let record = self.make_record(
                Phase::Probe,
                cell,
                seed,
                lr_aux,
                Some(lr_target),
                EvalDataset::Dpr,
                outcome,
            );
            out.push(self.commit(record, started)?);
        }
        Ok(out)
    }

    /// Baseline, sweep, then the probe when a DPR eval set is configured.
    pub fn run_all(&mut self) -> Result<Vec<RunRecord>, OrchestratorError> {
        let mut runs = self.run_baseline()?;
        runs.extend(self.run_aux_sweep()?);
        if self.dpr.is_some() {
            let probes = self.run_dpr_probe(&runs)?;
            runs.extend(probes);
        }
        Ok(runs)
    }
}

/// Highest validation metric wins; ties go to the smallest seed.
pub fn select_probe_seed<'a>(candidates: &[&'a RunRecord]) -> Result<&'a RunRecord, OrchestratorError> {
    let mut best: Option<(&RunRecord, f64)> = None;
    for &r in candidates {
        let v = r.val_metric.ok_or_else(|| OrchestratorError::MissingValMetric {
            cell: r.cell().to_string(),
            seed: r.seed,
        })?;
        best = match best {
            Some((b, bv)) if bv > v || (bv == v && b.seed <= r.seed) => Some((b, bv)),
            _ => Some((r, v)),
        };
    }
    best.map(|(r, _)| r)
        .ok_or_else(|| OrchestratorError::Config("no candidates".into()))
}
