//! Directory-backed run store.
//!
//! ```text
//! <root>/records/<run_id>.json   one finished (or failed) run
//! <root>/trials/<trial_id>.json  one learning-rate selection trial
//! <root>/index.jsonl             one summary line per record, sorted by run_id
//! ```
//!
//! A record file is the completion marker: it is written to a temporary
//! name and renamed into place. The index is derived data, rewritten in
//! full after every write, so its bytes never depend on write order.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::AuxTask;
use crate::digest::digest_parts;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Corrupt { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Baseline,
    Sweep,
    Probe,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Baseline => "baseline",
            Phase::Sweep => "sweep",
            Phase::Probe => "probe",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EvalDataset {
    #[serde(rename = "ALSC-CR")]
    AlscCr,
    #[serde(rename = "ALSC-Regular")]
    AlscRegular,
    #[serde(rename = "DPR")]
    Dpr,
}

impl EvalDataset {
    pub fn as_str(self) -> &'static str {
        match self {
            EvalDataset::AlscCr => "ALSC-CR",
            EvalDataset::AlscRegular => "ALSC-Regular",
            EvalDataset::Dpr => "DPR",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Failed,
}

/// Canonical text for a real-valued coordinate.
pub fn num_repr(x: f64) -> String {
    format!("{x:?}")
}

/// A table cell: which training recipe produced the scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Cell {
    /// Target training only, evaluated on ALSC-CR.
    Baseline,
    /// Target training only, evaluated on ALSC-Regular.
    Regular,
    Aux {
        task: AuxTask,
        fraction: f64,
    },
}

/// A cell, optionally viewed through its DPR probe run.
///
/// Text form: `baseline`, `regular`, `qqp@0.5`, `probe/baseline`,
/// `probe/qqp@0.5`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellRef {
    pub cell: Cell,
    pub probe: bool,
}

impl CellRef {
    pub fn new(cell: Cell) -> Self {
        Self { cell, probe: false }
    }

    pub fn probe(cell: Cell) -> Self {
        Self { cell, probe: true }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Baseline => f.write_str("baseline"),
            Cell::Regular => f.write_str("regular"),
            Cell::Aux { task, fraction } => write!(f, "{task}@{}", num_repr(*fraction)),
        }
    }
}

impl fmt::Display for CellRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.probe {
            f.write_str("probe/")?;
        }
        self.cell.fmt(f)
    }
}

impl FromStr for Cell {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "baseline" => Ok(Cell::Baseline),
            "regular" => Ok(Cell::Regular),
            other => {
                let (task, fraction) = other
                    .split_once('@')
                    .ok_or_else(|| format!("bad cell {s:?}: expected baseline, regular or task@fraction"))?;
                let fraction: f64 = fraction.parse().map_err(|_| format!("bad fraction in cell {s:?}"))?;
                Ok(Cell::Aux {
                    task: task.parse()?,
                    fraction,
                })
            }
        }
    }
}

impl FromStr for CellRef {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().strip_prefix("probe/") {
            Some(rest) => Ok(CellRef::probe(rest.parse()?)),
            None => Ok(CellRef::new(s.parse()?)),
        }
    }
}

fn is_false(b: &bool) -> bool {
    !*b
}

/// One training/evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub phase: Phase,
    pub aux_task: Option<AuxTask>,
    pub fraction: Option<f64>,
    pub seed: u64,
    pub lr_aux: Option<f64>,
    pub lr_target: Option<f64>,
    /// Job ids from the first training job to the target job.
    pub lineage: Vec<String>,
    pub eval_dataset: EvalDataset,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Score on the eval set, in [0, 100].
    pub metric: Option<f64>,
    pub metric_variant: String,
    /// ALSC-CR validation score of the target model, used for probe selection.
    pub val_metric: Option<f64>,
    #[serde(default)]
    pub predictions: Vec<String>,
    /// Produced outside this harness; predictions and lineage may be absent.
    #[serde(default, skip_serializing_if = "is_false")]
    pub imported: bool,
}

/// Digest of the full run coordinate.
pub fn run_id(
    phase: Phase,
    aux_task: Option<AuxTask>,
    fraction: Option<f64>,
    seed: u64,
    lr_aux: Option<f64>,
    lr_target: Option<f64>,
    eval: EvalDataset,
) -> String {
    let opt = |x: Option<f64>| x.map_or("-".to_string(), num_repr);
    let d = digest_parts([
        "run".to_string(),
        phase.as_str().to_string(),
        aux_task.map_or("-".to_string(), |t| t.as_str().to_string()),
        opt(fraction),
        seed.to_string(),
        opt(lr_aux),
        opt(lr_target),
        eval.as_str().to_string(),
    ]);
    d[..16].to_string()
}

impl RunRecord {
    pub fn is_ok(&self) -> bool {
        self.status == RunStatus::Ok
    }

    pub fn cell(&self) -> Cell {
        match (self.aux_task, self.fraction) {
            (Some(task), Some(fraction)) => Cell::Aux { task, fraction },
            _ if self.eval_dataset == EvalDataset::AlscRegular => Cell::Regular,
            _ => Cell::Baseline,
        }
    }

    pub fn cell_ref(&self) -> CellRef {
        CellRef {
            cell: self.cell(),
            probe: self.phase == Phase::Probe,
        }
    }

    /// Recompute the id from the coordinate fields.
    pub fn coordinate_id(&self) -> String {
        run_id(
            self.phase,
            self.aux_task,
            self.fraction,
            self.seed,
            self.lr_aux,
            self.lr_target,
            self.eval_dataset,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub run_id: String,
    pub cell: String,
    pub seed: u64,
    pub eval_dataset: EvalDataset,
    pub status: RunStatus,
    pub metric: Option<f64>,
    pub val_metric: Option<f64>,
}

impl From<&RunRecord> for IndexEntry {
    fn from(r: &RunRecord) -> Self {
        Self {
            run_id: r.run_id.clone(),
            cell: r.cell_ref().to_string(),
            seed: r.seed,
            eval_dataset: r.eval_dataset,
            status: r.status,
            metric: r.metric,
            val_metric: r.val_metric,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialPhase {
    Aux,
    Target,
}

/// Mean-of-seeds input for learning-rate selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: String,
    pub phase: TrialPhase,
    pub cell: String,
    pub seed: u64,
    pub lr_aux: Option<f64>,
    pub lr_target: Option<f64>,
    pub metric: f64,
}

pub fn trial_id(phase: TrialPhase, cell: &Cell, seed: u64, lr_aux: Option<f64>, lr_target: Option<f64>) -> String {
    let opt = |x: Option<f64>| x.map_or("-".to_string(), num_repr);
    let phase = match phase {
        TrialPhase::Aux => "aux",
        TrialPhase::Target => "target",
    };
    let d = digest_parts([
        "trial".to_string(),
        phase.to_string(),
        cell.to_string(),
        seed.to_string(),
        opt(lr_aux),
        opt(lr_target),
    ]);
    d[..16].to_string()
}

/// Single-writer handle on a run store directory.
pub struct RunStore {
    root: PathBuf,
    index: BTreeMap<String, IndexEntry>,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(bytes).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, StoreError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| StoreError::Corrupt {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn to_pretty<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("store records serialize");
    bytes.push(b'\n');
    bytes
}

impl RunStore {
    /// Open (creating if needed) a store and rebuild its index from the
    /// record files.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        for dir in [root.join("records"), root.join("trials")] {
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        }
        let mut store = Self {
            root,
            index: BTreeMap::new(),
        };
        for record in store.records()? {
            store.index.insert(record.run_id.clone(), IndexEntry::from(&record));
        }
        store.write_index()?;
        Ok(store)
    }

    /// Open an existing store without writing to it.
    pub fn open_read_only(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        let records = root.join("records");
        if !records.is_dir() {
            return Err(StoreError::Io {
                path: records,
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "not a run store"),
            });
        }
        let mut store = Self {
            root,
            index: BTreeMap::new(),
        };
        for record in store.records()? {
            store.index.insert(record.run_id.clone(), IndexEntry::from(&record));
        }
        Ok(store)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn record_path(&self, run_id: &str) -> PathBuf {
        self.root.join("records").join(format!("{run_id}.json"))
    }

    fn trial_path(&self, trial_id: &str) -> PathBuf {
        self.root.join("trials").join(format!("{trial_id}.json"))
    }

    pub fn get(&self, run_id: &str) -> Result<Option<RunRecord>, StoreError> {
        let path = self.record_path(run_id);
        if !path.is_file() {
            return Ok(None);
        }
        read_json(&path).map(Some)
    }

    /// True when a successful record exists for `run_id`.
    pub fn is_complete(&self, run_id: &str) -> bool {
        self.index.get(run_id).is_some_and(|e| e.status == RunStatus::Ok)
    }

    pub fn put(&mut self, record: &RunRecord) -> Result<(), StoreError> {
        write_atomic(&self.record_path(&record.run_id), &to_pretty(record))?;
        self.index.insert(record.run_id.clone(), IndexEntry::from(record));
        self.write_index()
    }

    fn write_index(&self) -> Result<(), StoreError> {
        let mut bytes = Vec::new();
        for entry in self.index.values() {
            serde_json::to_writer(&mut bytes, entry).expect("index entries serialize");
            bytes.push(b'\n');
        }
        write_atomic(&self.root.join("index.jsonl"), &bytes)
    }

    /// All records, sorted by run_id.
    pub fn records(&self) -> Result<Vec<RunRecord>, StoreError> {
        let dir = self.root.join("records");
        let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(io_err(&dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        paths
            .iter()
            .map(|p| {
                let r: RunRecord = read_json(p)?;
                if p.file_stem().and_then(|s| s.to_str()) != Some(r.run_id.as_str()) {
                    return Err(StoreError::Corrupt {
                        path: p.clone(),
                        message: format!("file name does not match run_id {}", r.run_id),
                    });
                }
                Ok(r)
            })
            .collect()
    }

    pub fn index(&self) -> impl Iterator<Item = &IndexEntry> {
        self.index.values()
    }

    pub fn get_trial(&self, trial_id: &str) -> Result<Option<TrialRecord>, StoreError> {
        let path = self.trial_path(trial_id);
        if !path.is_file() {
            return Ok(None);
        }
        read_json(&path).map(Some)
    }

    pub fn put_trial(&mut self, trial: &TrialRecord) -> Result<(), StoreError> {
        write_atomic(&self.trial_path(&trial.trial_id), &to_pretty(trial))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(seed: u64, status: RunStatus) -> RunRecord {
        let id = run_id(Phase::Baseline, None, None, seed, None, Some(5e-4), EvalDataset::AlscCr);
        RunRecord {
            run_id: id,
            phase: Phase::Baseline,
            aux_task: None,
            fraction: None,
            seed,
            lr_aux: None,
            lr_target: Some(5e-4),
            lineage: vec!["j".into()],
            eval_dataset: EvalDataset::AlscCr,
            status,
            error: None,
            metric: Some(50.0),
            metric_variant: "macro-F1 (present classes)".into(),
            val_metric: Some(40.0),
            predictions: vec!["positive".into()],
            imported: false,
        }
    }

    #[test]
    fn cell_refs_round_trip() {
        for s in [
            "baseline",
            "regular",
            "qqp@0.5",
            "probe/baseline",
            "probe/commongen@0.1",
            "dpr@1.0",
        ] {
            let c: CellRef = s.parse().unwrap();
            assert_eq!(c.to_string(), s);
        }
        assert_eq!("QQP@0.50".parse::<CellRef>().unwrap().to_string(), "qqp@0.5");
        assert!("qqp".parse::<CellRef>().is_err());
        assert!("nope@0.5".parse::<CellRef>().is_err());
    }

    #[test]
    fn run_ids_separate_coordinates() {
        let a = run_id(
            Phase::Sweep,
            Some(AuxTask::Qqp),
            Some(0.5),
            1,
            Some(1e-4),
            Some(5e-4),
            EvalDataset::AlscCr,
        );
        let b = run_id(
            Phase::Sweep,
            Some(AuxTask::Qqp),
            Some(0.5),
            2,
            Some(1e-4),
            Some(5e-4),
            EvalDataset::AlscCr,
        );
        let c = run_id(
            Phase::Probe,
            Some(AuxTask::Qqp),
            Some(0.5),
            1,
            Some(1e-4),
            Some(5e-4),
            EvalDataset::Dpr,
        );
        assert_eq!(a.len(), 16);
        assert!(a != b && a != c && b != c);
    }

    #[test]
    fn index_is_order_independent_and_rebuilt() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let records: Vec<RunRecord> = (0..5).map(|s| rec(s, RunStatus::Ok)).collect();
        let mut s1 = RunStore::open(d1.path()).unwrap();
        for r in &records {
            s1.put(r).unwrap();
        }
        let mut s2 = RunStore::open(d2.path()).unwrap();
        for r in records.iter().rev() {
            s2.put(r).unwrap();
        }
        let i1 = fs::read(d1.path().join("index.jsonl")).unwrap();
        assert_eq!(i1, fs::read(d2.path().join("index.jsonl")).unwrap());
        assert_eq!(i1.iter().filter(|&&b| b == b'\n').count(), 5);

        fs::remove_file(d1.path().join("index.jsonl")).unwrap();
        let reopened = RunStore::open(d1.path()).unwrap();
        assert_eq!(fs::read(d1.path().join("index.jsonl")).unwrap(), i1);
        assert!(reopened.is_complete(&records[0].run_id));
        assert_eq!(reopened.records().unwrap(), {
            let mut r = records.clone();
            r.sort_by(|a, b| a.run_id.cmp(&b.run_id));
            r
        });
    }

    #[test]
    fn failed_records_are_not_complete() {
        let d = tempfile::tempdir().unwrap();
        let mut s = RunStore::open(d.path()).unwrap();
        let r = rec(1, RunStatus::Failed);
        s.put(&r).unwrap();
        assert!(!s.is_complete(&r.run_id));
        s.put(&rec(1, RunStatus::Ok)).unwrap();
        assert!(s.is_complete(&r.run_id));
    }
}
