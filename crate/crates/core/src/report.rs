//! Results tables, plot data and significance comparisons over run records.
//!
//! Everything here is a pure function of the records and a [`ReportSpec`].
//! Scores of a cell are the metrics of its successful runs. Significance
//! against the baseline uses Yuen-Welch: `*` marks a significant
//! improvement, `†` a significant deterioration. The best displayed mean
//! of a table is bold and the second best underlined.

use std::fmt::Write as _;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::AuxTask;
use crate::labeler::{LabeledInstance, PronounLexicon};
use crate::metrics::{accuracy_by_pronoun, aggregate, yuen_welch, MetricError, PronounAccuracy, StatResult};
use crate::metrics::{DEFAULT_ALPHA, DEFAULT_TRIM_GAMMA};
use crate::orchestrator::{run_id, Cell, CellRef, EvalDataset, Phase, RunRecord, RunStatus, MIN_SEEDS};
use crate::prompt::parse_alsc_output;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no successful runs for cell {0}")]
    MissingCell(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("line {line}: {message}")]
    Import { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportSpec {
    pub alpha: f64,
    pub trim_gamma: f64,
    /// Cells with fewer successful seeds are flagged.
    pub min_seeds: usize,
}

impl Default for ReportSpec {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            trim_gamma: DEFAULT_TRIM_GAMMA,
            min_seeds: MIN_SEEDS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mark {
    None,
    Improvement,
    Deterioration,
    /// Too few scores for the test.
    Untested,
}

impl Mark {
    pub fn symbol(self) -> &'static str {
        match self {
            Mark::Improvement => "*",
            Mark::Deterioration => "†",
            Mark::None | Mark::Untested => "",
        }
    }
}

/// Successful runs of a cell, sorted by seed.
pub fn cell_runs<'a>(records: &'a [RunRecord], cell: &CellRef) -> Vec<&'a RunRecord> {
    let mut runs: Vec<&RunRecord> = records
        .iter()
        .filter(|r| r.status == RunStatus::Ok && r.metric.is_some() && r.cell_ref() == *cell)
        .collect();
    runs.sort_by(|a, b| a.seed.cmp(&b.seed).then_with(|| a.run_id.cmp(&b.run_id)));
    runs
}

fn scores(runs: &[&RunRecord]) -> Vec<f64> {
    runs.iter().filter_map(|r| r.metric).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub cell: String,
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation; absent for a single score.
    pub std: Option<f64>,
    pub seeds: Vec<u64>,
    pub run_ids: Vec<String>,
}

pub fn summarize(records: &[RunRecord], cell: &CellRef) -> Option<CellSummary> {
    let runs = cell_runs(records, cell);
    let xs = scores(&runs);
    if xs.is_empty() {
        return None;
    }
    let (mean, std) = match aggregate(&xs) {
        Ok(a) => (a.mean, Some(a.std)),
        Err(_) => (xs[0], None),
    };
    Some(CellSummary {
        cell: cell.to_string(),
        n: xs.len(),
        mean,
        std,
        seeds: runs.iter().map(|r| r.seed).collect(),
        run_ids: runs.iter().map(|r| r.run_id.clone()).collect(),
    })
}

/// Yuen-Welch of cell `a` against cell `b` (t > 0 when `a` scores higher).
pub fn compare(records: &[RunRecord], a: &CellRef, b: &CellRef, spec: &ReportSpec) -> Result<StatResult, ReportError> {
    let xa = scores(&cell_runs(records, a));
    let xb = scores(&cell_runs(records, b));
    for (xs, c) in [(&xa, a), (&xb, b)] {
        if xs.is_empty() {
            return Err(ReportError::MissingCell(c.to_string()));
        }
    }
    Ok(yuen_welch(&xa, &xb, spec.trim_gamma, spec.alpha)?.with_labels(a.to_string(), b.to_string()))
}

fn mark_against(
    records: &[RunRecord],
    treatment: &CellRef,
    baseline: &CellRef,
    spec: &ReportSpec,
) -> (Mark, Option<StatResult>) {
    match compare(records, treatment, baseline, spec) {
        Ok(r) if r.significant && r.t_stat > 0.0 => (Mark::Improvement, Some(r)),
        Ok(r) if r.significant => (Mark::Deterioration, Some(r)),
        Ok(r) => (Mark::None, Some(r)),
        Err(_) => (Mark::Untested, None),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableEntry {
    pub summary: CellSummary,
    pub mark: Mark,
    /// 1 for the best displayed mean, 2 for the second best.
    pub rank: Option<u8>,
    pub stat: Option<StatResult>,
    pub under_seeded: bool,
}

impl TableEntry {
    /// Plain cell text, e.g. `75.72 (± 1.14) *`.
    pub fn plain(&self) -> String {
        self.render(false)
    }

    fn markdown(&self) -> String {
        self.render(true)
    }

    fn render(&self, emphasis: bool) -> String {
        let mean = format!("{:.2}", self.summary.mean);
        let mean = match (emphasis, self.rank) {
            (true, Some(1)) => format!("**{mean}**"),
            (true, Some(2)) => format!("<u>{mean}</u>"),
            _ => mean,
        };
        let mut s = match self.summary.std {
            Some(sd) => format!("{mean} (± {sd:.2})"),
            None => mean,
        };
        if !self.mark.symbol().is_empty() {
            s.push(' ');
            s.push_str(self.mark.symbol());
        }
        if self.under_seeded {
            let _ = write!(s, " [n={}]", self.summary.n);
        }
        s
    }
}

fn entry(records: &[RunRecord], cell: &CellRef, baseline: Option<&CellRef>, spec: &ReportSpec) -> Option<TableEntry> {
    let summary = summarize(records, cell)?;
    let (mark, stat) = match baseline {
        Some(b) => mark_against(records, cell, b, spec),
        None => (Mark::None, None),
    };
    Some(TableEntry {
        under_seeded: summary.n < spec.min_seeds,
        summary,
        mark,
        rank: None,
        stat,
    })
}

/// Bold / underline the two highest distinct displayed means.
fn assign_ranks<'a>(entries: impl Iterator<Item = &'a mut TableEntry>) {
    let mut entries: Vec<&mut TableEntry> = entries.collect();
    let key = |e: &TableEntry| (e.summary.mean * 100.0).round() as i64;
    let mut distinct: Vec<i64> = entries.iter().map(|e| key(e)).collect();
    distinct.sort_unstable_by(|a, b| b.cmp(a));
    distinct.dedup();
    for e in entries.iter_mut() {
        let k = key(e);
        e.rank = if distinct.first() == Some(&k) {
            Some(1)
        } else if distinct.get(1) == Some(&k) {
            Some(2)
        } else {
            None
        };
    }
}

fn metric_variant<'a>(runs: impl Iterator<Item = &'a RunRecord>) -> String {
    let mut variants: Vec<&str> = runs.map(|r| r.metric_variant.as_str()).collect();
    variants.sort_unstable();
    variants.dedup();
    match variants.as_slice() {
        [] => "unknown".into(),
        [one] => (*one).into(),
        many => format!("mixed ({})", many.join("; ")),
    }
}

fn task_order(records: &[RunRecord], probe: bool) -> Vec<(AuxTask, Vec<f64>)> {
    let mut out: Vec<(AuxTask, Vec<f64>)> = Vec::new();
    for task in AuxTask::ALL {
        let mut fractions: Vec<f64> = records
            .iter()
            .filter(|r| r.aux_task == Some(task) && (r.phase == Phase::Probe) == probe && r.status == RunStatus::Ok)
            .filter_map(|r| r.fraction)
            .collect();
        fractions.sort_by(f64::total_cmp);
        fractions.dedup();
        if !fractions.is_empty() {
            out.push((task, fractions));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow {
    pub label: String,
    pub task: Option<AuxTask>,
    pub cells: Vec<Option<TableEntry>>,
}

/// Aux tasks by aux-data fraction on ALSC-CR, plus the baseline.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultsTable {
    pub fractions: Vec<f64>,
    pub rows: Vec<TableRow>,
    pub baseline: TableEntry,
    pub metric_variant: String,
    pub spec: ReportSpec,
    pub warnings: Vec<String>,
}

pub const BASELINE_LABEL: &str = "N/A (Baseline)";

pub fn results_table(records: &[RunRecord], spec: &ReportSpec) -> Result<ResultsTable, ReportError> {
    let base_ref = CellRef::new(Cell::Baseline);
    let baseline =
        entry(records, &base_ref, None, spec).ok_or_else(|| ReportError::MissingCell(base_ref.to_string()))?;
    let tasks = task_order(records, false);
    let mut fractions: Vec<f64> = tasks.iter().flat_map(|(_, f)| f.iter().copied()).collect();
    fractions.sort_by(f64::total_cmp);
    fractions.dedup();

    let mut warnings = Vec::new();
    let mut rows = Vec::new();
    for (task, _) in &tasks {
        let cells = fractions
            .iter()
            .map(|&fraction| {
                let cell = CellRef::new(Cell::Aux { task: *task, fraction });
                let e = entry(records, &cell, Some(&base_ref), spec);
                if e.is_none() {
                    warnings.push(format!("missing cell {cell}"));
                }
                e
            })
            .collect();
        rows.push(TableRow {
            label: task.display_name().into(),
            task: Some(*task),
            cells,
        });
    }
    let mut table =
        ResultsTable {
            fractions,
            rows,
            baseline,
            metric_variant: metric_variant(records.iter().filter(|r| {
                r.phase != Phase::Probe && r.eval_dataset == EvalDataset::AlscCr && r.status == RunStatus::Ok
            })),
            spec: *spec,
            warnings,
        };
    let ResultsTable { rows, baseline, .. } = &mut table;
    assign_ranks(
        rows.iter_mut()
            .flat_map(|r| r.cells.iter_mut().flatten())
            .chain(std::iter::once(baseline)),
    );
    Ok(table)
}

fn align(rows: &[Vec<String>]) -> String {
    let width = |s: &str| s.chars().count();
    let ncols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..ncols)
        .map(|c| {
            rows.iter()
                .filter_map(|r| r.get(c))
                .map(|s| width(s))
                .max()
                .unwrap_or(0)
                .max(3)
        })
        .collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        out.push('|');
        for (c, w) in widths.iter().enumerate() {
            let cell = row.get(c).map(String::as_str).unwrap_or("");
            let _ = write!(out, " {cell}{} |", " ".repeat(w - width(cell)));
        }
        out.push('\n');
        if i == 0 {
            out.push('|');
            for w in &widths {
                let _ = write!(out, "{}|", "-".repeat(w + 2));
            }
            out.push('\n');
        }
    }
    out
}

fn footer(
    out: &mut String,
    metric: &str,
    spec: &ReportSpec,
    entries: &[&TableEntry],
    warnings: &[String],
    with_marks: bool,
) {
    let _ = writeln!(out, "\nMetric: {metric}. Mean (± sample std) over successful seeds.");
    if with_marks {
        let _ = writeln!(
            out,
            "Yuen-Welch vs baseline (trim {}, alpha {}): * significant improvement, † significant deterioration.",
            spec.trim_gamma, spec.alpha
        );
        if entries.iter().any(|e| e.mark == Mark::Untested) {
            let _ = writeln!(out, "Cells without a test have fewer than 5 scores on one side.");
        }
    }
    let _ = writeln!(out, "Best mean in bold, second best underlined.");
    if entries.iter().any(|e| e.under_seeded) {
        let _ = writeln!(out, "[n=k]: only k successful seeds (fewer than {}).", spec.min_seeds);
    }
    for w in warnings {
        let _ = writeln!(out, "Warning: {w}.");
    }
}

fn provenance(out: &mut String, entries: &[&TableEntry]) {
    let _ = writeln!(out, "\nProvenance:");
    for e in entries {
        let _ = writeln!(out, "- {}: {}", e.summary.cell, e.summary.run_ids.join(", "));
    }
}

fn fraction_label(f: f64) -> String {
    format!("{f:.1}")
}

impl ResultsTable {
    fn entries(&self) -> Vec<&TableEntry> {
        self.rows
            .iter()
            .flat_map(|r| r.cells.iter().flatten())
            .chain(std::iter::once(&self.baseline))
            .collect()
    }

    pub fn to_markdown(&self, with_provenance: bool) -> String {
        let mut grid = Vec::new();
        if self.fractions.is_empty() {
            grid.push(vec!["Aux. Task".to_string(), "Mean F1 (± Std. Dev)".to_string()]);
            grid.push(vec![BASELINE_LABEL.to_string(), self.baseline.markdown()]);
        } else {
            let mut header = vec!["Aux. Task".to_string()];
            header.extend(self.fractions.iter().map(|&f| fraction_label(f)));
            grid.push(header);
            for row in &self.rows {
                let mut line = vec![row.label.clone()];
                line.extend(
                    row.cells
                        .iter()
                        .map(|c| c.as_ref().map(TableEntry::markdown).unwrap_or_default()),
                );
                grid.push(line);
            }
            let mut line = vec![BASELINE_LABEL.to_string(), self.baseline.markdown()];
            line.extend(std::iter::repeat_n(String::new(), self.fractions.len() - 1));
            grid.push(line);
        }
        let mut out = align(&grid);
        footer(
            &mut out,
            &self.metric_variant,
            &self.spec,
            &self.entries(),
            &self.warnings,
            true,
        );
        if with_provenance {
            provenance(&mut out, &self.entries());
        }
        out
    }

    pub fn to_csv(&self) -> Result<String, ReportError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "row", "fraction", "n", "mean", "std", "p_value", "mark", "rank", "display",
        ])
        .map_err(csv_io)?;
        let mut write = |label: &str, fraction: String, e: &TableEntry| {
            w.write_record([
                label.to_string(),
                fraction,
                e.summary.n.to_string(),
                format!("{:.4}", e.summary.mean),
                e.summary.std.map(|s| format!("{s:.4}")).unwrap_or_default(),
                e.stat
                    .as_ref()
                    .map(|s| format!("{:.6e}", s.p_value))
                    .unwrap_or_default(),
                format!("{:?}", e.mark).to_lowercase(),
                e.rank.map(|r| r.to_string()).unwrap_or_default(),
                e.plain(),
            ])
        };
        for row in &self.rows {
            for (f, c) in self.fractions.iter().zip(&row.cells) {
                if let Some(e) = c {
                    write(&row.label, fraction_label(*f), e).map_err(csv_io)?;
                }
            }
        }
        write(BASELINE_LABEL, String::new(), &self.baseline).map_err(csv_io)?;
        let bytes = w.into_inner().map_err(|e| ReportError::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }
}

fn csv_io(e: csv::Error) -> ReportError {
    ReportError::Io(std::io::Error::other(e))
}

/// DPR probe scores per cell, marked against the probed baseline.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeTable {
    /// (task, fraction, entry); the baseline comes first with no task.
    pub rows: Vec<(Option<AuxTask>, f64, TableEntry)>,
    pub metric_variant: String,
    pub spec: ReportSpec,
}

pub fn probe_table(records: &[RunRecord], spec: &ReportSpec) -> Result<ProbeTable, ReportError> {
    let base_ref = CellRef::probe(Cell::Baseline);
    let baseline =
        entry(records, &base_ref, None, spec).ok_or_else(|| ReportError::MissingCell(base_ref.to_string()))?;
    let mut rows = vec![(None, 0.0, baseline)];
    for (task, fractions) in task_order(records, true) {
        for fraction in fractions {
            let cell = CellRef::probe(Cell::Aux { task, fraction });
            if let Some(e) = entry(records, &cell, Some(&base_ref), spec) {
                rows.push((Some(task), fraction, e));
            }
        }
    }
    assign_ranks(rows.iter_mut().map(|(_, _, e)| e));
    Ok(ProbeTable {
        rows,
        metric_variant: metric_variant(
            records
                .iter()
                .filter(|r| r.phase == Phase::Probe && r.status == RunStatus::Ok),
        ),
        spec: *spec,
    })
}

impl ProbeTable {
    pub fn to_markdown(&self, with_provenance: bool) -> String {
        let mut grid = vec![vec![
            "Aux Task".to_string(),
            "Aux Frac.".to_string(),
            "Mean (± Std. Dev)".to_string(),
        ]];
        for (task, fraction, e) in &self.rows {
            let (label, frac) = match task {
                Some(t) => (t.display_name().to_string(), fraction_label(*fraction)),
                None => (BASELINE_LABEL.to_string(), "0".to_string()),
            };
            grid.push(vec![label, frac, e.markdown()]);
        }
        let entries: Vec<&TableEntry> = self.rows.iter().map(|(_, _, e)| e).collect();
        let mut out = align(&grid);
        footer(&mut out, &self.metric_variant, &self.spec, &entries, &[], true);
        if with_provenance {
            provenance(&mut out, &entries);
        }
        out
    }
}

/// The baseline model scored on ALSC-Regular and ALSC-CR.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetTable {
    pub regular: TableEntry,
    pub cr: TableEntry,
    pub stat: Option<StatResult>,
    pub spec: ReportSpec,
    pub metric_variant: String,
}

pub fn dataset_table(records: &[RunRecord], spec: &ReportSpec) -> Result<DatasetTable, ReportError> {
    let reg_ref = CellRef::new(Cell::Regular);
    let cr_ref = CellRef::new(Cell::Baseline);
    let missing = |c: &CellRef| ReportError::MissingCell(c.to_string());
    let mut regular = entry(records, &reg_ref, None, spec).ok_or_else(|| missing(&reg_ref))?;
    let mut cr = entry(records, &cr_ref, None, spec).ok_or_else(|| missing(&cr_ref))?;
    // Only the best score is emphasised here.
    assign_ranks([&mut regular, &mut cr].into_iter());
    for e in [&mut regular, &mut cr] {
        if e.rank == Some(2) {
            e.rank = None;
        }
    }
    let stat = compare(records, &reg_ref, &cr_ref, spec).ok();
    Ok(DatasetTable {
        regular,
        cr,
        stat,
        spec: *spec,
        metric_variant: metric_variant(
            records
                .iter()
                .filter(|r| r.phase == Phase::Baseline && r.status == RunStatus::Ok),
        ),
    })
}

impl DatasetTable {
    pub fn to_markdown(&self, with_provenance: bool) -> String {
        let grid = vec![
            vec!["Dataset".to_string(), "Mean (± Std. Dev)".to_string()],
            vec!["ALSC-Regular".to_string(), self.regular.markdown()],
            vec!["ALSC-CR".to_string(), self.cr.markdown()],
        ];
        let mut out = align(&grid);
        let entries = [&self.regular, &self.cr];
        footer(&mut out, &self.metric_variant, &self.spec, &entries, &[], false);
        match &self.stat {
            Some(s) => {
                let _ = writeln!(
                    out,
                    "Yuen-Welch (trim {}): t = {:.4}, df = {:.4}, p-value = {:.2e}{}.",
                    s.trim_gamma,
                    s.t_stat,
                    s.deg_freedom,
                    s.p_value,
                    if s.significant {
                        ", significant"
                    } else {
                        ", not significant"
                    }
                );
            }
            None => {
                let _ = writeln!(out, "Yuen-Welch not computed: fewer than 5 scores on one side.");
            }
        }
        if with_provenance {
            provenance(&mut out, &entries);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotPoint {
    pub fraction: f64,
    pub mean: f64,
    /// Symmetric error bar; 0 for a single score.
    pub std: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotSeries {
    pub task: String,
    pub label: String,
    pub points: Vec<PlotPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotBaseline {
    pub label: String,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

/// Mean score against aux fraction, one series per aux task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotData {
    pub x_label: String,
    pub y_label: String,
    pub metric_variant: String,
    pub baseline: PlotBaseline,
    pub series: Vec<PlotSeries>,
}

pub fn sweep_plot_data(records: &[RunRecord], spec: &ReportSpec) -> Result<PlotData, ReportError> {
    let table = results_table(records, spec)?;
    if table.rows.is_empty() {
        return Err(ReportError::MissingCell("any aux sweep cell".into()));
    }
    let series = table
        .rows
        .iter()
        .map(|row| PlotSeries {
            task: row.task.map(|t| t.as_str().to_string()).unwrap_or_default(),
            label: row.label.clone(),
            points: table
                .fractions
                .iter()
                .zip(&row.cells)
                .filter_map(|(&fraction, c)| {
                    c.as_ref().map(|e| PlotPoint {
                        fraction,
                        mean: e.summary.mean,
                        std: e.summary.std.unwrap_or(0.0),
                        n: e.summary.n,
                    })
                })
                .collect(),
        })
        .collect();
    let b = &table.baseline.summary;
    Ok(PlotData {
        x_label: "Aux. Dataset Fraction".into(),
        y_label: format!("Mean {}", table.metric_variant),
        metric_variant: table.metric_variant.clone(),
        baseline: PlotBaseline {
            label: BASELINE_LABEL.into(),
            mean: b.mean,
            std: b.std.unwrap_or(0.0),
            n: b.n,
        },
        series,
    })
}

/// Per-pronoun accuracy of one ALSC-CR test run.
pub fn pronoun_report(
    run: &RunRecord,
    test: &[LabeledInstance],
    lexicon: &PronounLexicon,
) -> Result<Vec<PronounAccuracy>, ReportError> {
    let preds: Vec<_> = run.predictions.iter().map(|p| parse_alsc_output(p)).collect();
    Ok(accuracy_by_pronoun(&preds, test, lexicon)?)
}

pub fn pronoun_markdown(rows: &[PronounAccuracy]) -> String {
    let mut grid = vec![vec!["Pronoun".to_string(), "Count".to_string(), "Accuracy".to_string()]];
    for r in rows {
        let acc = match r.accuracy {
            Some(a) if r.analysed => format!("{a:.2}"),
            Some(a) => format!("{a:.2} (not analysed)"),
            None => "N/A".into(),
        };
        grid.push(vec![r.pronoun.clone(), r.count.to_string(), acc]);
    }
    align(&grid)
}

/// One externally produced score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportedScore {
    /// Cell reference, e.g. `baseline`, `regular`, `qqp@0.5`, `probe/qqp@0.5`.
    pub cell: String,
    pub seed: u64,
    pub metric: f64,
    #[serde(default)]
    pub val_metric: Option<f64>,
    #[serde(default)]
    pub lr_aux: Option<f64>,
    #[serde(default)]
    pub lr_target: Option<f64>,
    #[serde(default)]
    pub metric_variant: Option<String>,
    #[serde(default)]
    pub predictions: Vec<String>,
}

/// Variant label for imports that do not name one.
pub const IMPORTED_VARIANT: &str = "external";

impl ImportedScore {
    pub fn into_record(self) -> Result<RunRecord, String> {
        let cell: CellRef = self.cell.parse()?;
        if !(0.0..=100.0).contains(&self.metric) {
            return Err(format!("metric {} outside [0, 100]", self.metric));
        }
        let (phase, eval) = match (cell.probe, cell.cell) {
            (true, Cell::Regular) => return Err("the regular cell has no probe".into()),
            (true, _) => (Phase::Probe, EvalDataset::Dpr),
            (false, Cell::Regular) => (Phase::Baseline, EvalDataset::AlscRegular),
            (false, Cell::Baseline) => (Phase::Baseline, EvalDataset::AlscCr),
            (false, Cell::Aux { .. }) => (Phase::Sweep, EvalDataset::AlscCr),
        };
        let (aux_task, fraction) = match cell.cell {
            Cell::Aux { task, fraction } => (Some(task), Some(fraction)),
            _ => (None, None),
        };
        Ok(RunRecord {
            run_id: run_id(phase, aux_task, fraction, self.seed, self.lr_aux, self.lr_target, eval),
            phase,
            aux_task,
            fraction,
            seed: self.seed,
            lr_aux: self.lr_aux,
            lr_target: self.lr_target,
            lineage: Vec::new(),
            eval_dataset: eval,
            status: RunStatus::Ok,
            error: None,
            metric: Some(self.metric),
            metric_variant: self.metric_variant.unwrap_or_else(|| IMPORTED_VARIANT.into()),
            val_metric: self.val_metric,
            predictions: self.predictions,
            imported: true,
        })
    }
}

/// Read scores from CSV (header `cell,seed,metric[,...]`) or JSON lines.
pub fn read_imported_scores(path: &Path) -> Result<Vec<ImportedScore>, ReportError> {
    let file = std::fs::File::open(path)?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        let mut reader = csv::Reader::from_reader(file);
        reader
            .deserialize()
            .enumerate()
            .map(|(i, row)| {
                row.map_err(|e| ReportError::Import {
                    line: i + 2,
                    message: e.to_string(),
                })
            })
            .collect()
    } else {
        let mut out = Vec::new();
        for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(serde_json::from_str(&line).map_err(|e| ReportError::Import {
                line: i + 1,
                message: e.to_string(),
            })?);
        }
        Ok(out)
    }
}

/// Output formats for [`emit_report`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Markdown,
    Csv,
    JsonPlot,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "markdown" | "md" => Ok(Format::Markdown),
            "csv" => Ok(Format::Csv),
            "json-plot" => Ok(Format::JsonPlot),
            _ => Err(format!("unknown format {s:?} (expected markdown, csv or json-plot)")),
        }
    }
}

/// Render the requested artifacts as (file name, contents). Tables whose
/// cells are absent from the records are skipped, except the main results
/// table, whose absence is an error.
pub fn emit_report(
    records: &[RunRecord],
    spec: &ReportSpec,
    formats: &[Format],
    with_provenance: bool,
) -> Result<Vec<(String, String)>, ReportError> {
    let table = results_table(records, spec)?;
    let mut out = Vec::new();
    for format in formats {
        match format {
            Format::Markdown => {
                out.push(("results.md".into(), table.to_markdown(with_provenance)));
                if let Ok(t) = dataset_table(records, spec) {
                    out.push(("datasets.md".into(), t.to_markdown(with_provenance)));
                }
                if let Ok(t) = probe_table(records, spec) {
                    out.push(("probe.md".into(), t.to_markdown(with_provenance)));
                }
            }
            Format::Csv => out.push(("results.csv".into(), table.to_csv()?)),
            Format::JsonPlot => {
                let plot = sweep_plot_data(records, spec)?;
                let mut s = serde_json::to_string_pretty(&plot).expect("plot data serializes");
                s.push('\n');
                out.push(("plot.json".into(), s));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn import(cell: &str, scores: &[f64]) -> Vec<RunRecord> {
        scores
            .iter()
            .enumerate()
            .map(|(i, &metric)| {
                ImportedScore {
                    cell: cell.into(),
                    seed: i as u64,
                    metric,
                    val_metric: None,
                    lr_aux: None,
                    lr_target: None,
                    metric_variant: Some("macro-F1 (present classes)".into()),
                    predictions: vec![],
                }
                .into_record()
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn baseline_only_store() {
        let records = import("baseline", &[70.0, 72.0, 74.0]);
        let t = results_table(&records, &ReportSpec::default()).unwrap();
        assert!(t.rows.is_empty());
        let md = t.to_markdown(false);
        assert!(
            md.starts_with("| Aux. Task      | Mean F1 (± Std. Dev)     |\n"),
            "{md}"
        );
        assert!(md.contains("| N/A (Baseline) | **72.00** (± 2.00) [n=3] |"), "{md}");
        let table: String = md.lines().take(3).collect();
        assert!(!table.contains(") *"));
        assert!(!table.contains('†'));
    }

    #[test]
    fn empty_store_is_missing_cell() {
        assert!(matches!(
            results_table(&[], &ReportSpec::default()),
            Err(ReportError::MissingCell(_))
        ));
        assert!(matches!(
            sweep_plot_data(&[], &ReportSpec::default()),
            Err(ReportError::MissingCell(_))
        ));
    }

    #[test]
    fn marks_and_ranks() {
        let base = [70.0, 71.0, 72.0, 73.0, 74.0, 70.5, 71.5, 72.5, 73.5, 71.7];
        let up: Vec<f64> = base.iter().map(|x| x + 5.0).collect();
        let down: Vec<f64> = base.iter().map(|x| x - 5.0).collect();
        let same: Vec<f64> = base.iter().map(|x| x + 0.1).collect();
        let mut records = import("baseline", &base);
        records.extend(import("qqp@0.5", &up));
        records.extend(import("qqp@0.1", &same));
        records.extend(import("commongen@0.1", &down));
        let t = results_table(&records, &ReportSpec::default()).unwrap();
        assert_eq!(t.fractions, vec![0.1, 0.5]);
        let labels: Vec<&str> = t.rows.iter().map(|r| r.label.as_str()).collect();
        assert_eq!(labels, ["Commongen", "QQP"]);
        let qqp = &t.rows[1];
        assert_eq!(qqp.cells[1].as_ref().unwrap().mark, Mark::Improvement);
        assert_eq!(qqp.cells[1].as_ref().unwrap().rank, Some(1));
        assert_eq!(qqp.cells[0].as_ref().unwrap().mark, Mark::None);
        assert_eq!(qqp.cells[0].as_ref().unwrap().rank, Some(2));
        assert_eq!(t.rows[0].cells[0].as_ref().unwrap().mark, Mark::Deterioration);
        assert!(t.rows[0].cells[1].is_none());
        assert_eq!(t.warnings, vec!["missing cell commongen@0.5".to_string()]);
        let md = t.to_markdown(true);
        assert!(md.contains("**76.97** (± 1.29) *"), "{md}");
        assert!(md.contains("66.97 (± 1.29) †"), "{md}");
        assert!(md.contains("Provenance:"));
        let csv = t.to_csv().unwrap();
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.lines().next().unwrap().starts_with("row,fraction,n,mean"));

        let plot = sweep_plot_data(&records, &ReportSpec::default()).unwrap();
        assert_eq!(plot.series.len(), 2);
        assert_eq!(plot.series[1].points.len(), 2);
        assert_eq!(plot.series[0].points.len(), 1);
    }

    #[test]
    fn compare_reports_missing_cells() {
        let records = import("baseline", &[1.0, 2.0, 3.0, 4.0, 5.0]);
        let err = compare(
            &records,
            &"baseline".parse().unwrap(),
            &"qqp@0.5".parse().unwrap(),
            &ReportSpec::default(),
        );
        assert!(matches!(err, Err(ReportError::MissingCell(c)) if c == "qqp@0.5"));
    }

    #[test]
    fn single_probe_score_has_no_std() {
        let mut records = import("probe/baseline", &[59.28]);
        records.extend(import("probe/qqp@0.5", &[76.36]));
        let t = probe_table(&records, &ReportSpec::default()).unwrap();
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.rows[1].2.plain(), "76.36 [n=1]");
        assert_eq!(t.rows[1].2.mark, Mark::Untested);
    }

    #[test]
    fn import_validation() {
        let bad = ImportedScore {
            cell: "qqp@0.5".into(),
            seed: 1,
            metric: 101.0,
            val_metric: None,
            lr_aux: None,
            lr_target: None,
            metric_variant: None,
            predictions: vec![],
        };
        assert!(bad.clone().into_record().is_err());
        let ok = ImportedScore { metric: 50.0, ..bad }.into_record().unwrap();
        assert_eq!(
            (ok.phase, ok.eval_dataset, ok.imported),
            (Phase::Sweep, EvalDataset::AlscCr, true)
        );
        assert_eq!(ok.run_id, ok.coordinate_id());
    }
}
