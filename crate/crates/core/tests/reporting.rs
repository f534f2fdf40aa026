//! Reports read back from an on-disk run store.

use std::fs;

use alsc_cr::orchestrator::{CellRef, RunStore};
use alsc_cr::report::{
    compare, emit_report, read_imported_scores, results_table, sweep_plot_data, Format, Mark, ReportError, ReportSpec,
};

fn import_jsonl(store: &mut RunStore, lines: &[String]) {
    let path = store.root().join("scores.jsonl");
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    for s in read_imported_scores(&path).unwrap() {
        store.put(&s.into_record().unwrap()).unwrap();
    }
}

fn cell_lines(cell: &str, scores: &[f64]) -> Vec<String> {
    scores
        .iter()
        .enumerate()
        .map(|(seed, m)| format!(r#"{{"cell":"{cell}","seed":{seed},"metric":{m}}}"#))
        .collect()
}

#[test]
fn empty_store_has_no_cells() {
    let dir = tempfile::tempdir().unwrap();
    let store = RunStore::open(dir.path()).unwrap();
    let records = store.records().unwrap();
    assert!(matches!(
        results_table(&records, &ReportSpec::default()),
        Err(ReportError::MissingCell(_))
    ));
    assert!(matches!(
        sweep_plot_data(&records, &ReportSpec::default()),
        Err(ReportError::MissingCell(_))
    ));
}

#[test]
fn reopened_store_reports_identically() {
    let dir = tempfile::tempdir().unwrap();
    let mut store = RunStore::open(dir.path()).unwrap();
    let mut lines = cell_lines("baseline", &[70.0, 71.5, 69.0, 72.0, 70.5, 71.0]);
    lines.extend(cell_lines("qqp@0.5", &[76.0, 77.5, 75.0, 76.5, 78.0, 76.0]));
    lines.extend(cell_lines("squad@0.5", &[70.5, 71.0, 69.5, 72.5, 70.0, 71.0]));
    import_jsonl(&mut store, &lines);
    let spec = ReportSpec::default();
    let first = emit_report(
        &store.records().unwrap(),
        &spec,
        &[Format::Markdown, Format::Csv, Format::JsonPlot],
        true,
    )
    .unwrap();

    let reopened = RunStore::open_read_only(dir.path()).unwrap();
    assert_eq!(reopened.index().count(), 18);
    let records = reopened.records().unwrap();
    let second = emit_report(
        &records,
        &spec,
        &[Format::Markdown, Format::Csv, Format::JsonPlot],
        true,
    )
    .unwrap();
    assert_eq!(first, second);

    let table = results_table(&records, &spec).unwrap();
    let marks: Vec<Mark> = table
        .rows
        .iter()
        .flat_map(|r| r.cells.iter().flatten().map(|e| e.mark))
        .collect();
    assert_eq!(marks, vec![Mark::None, Mark::Improvement]);

    let stat = compare(
        &records,
        &"baseline".parse::<CellRef>().unwrap(),
        &"qqp@0.5".parse().unwrap(),
        &spec,
    )
    .unwrap();
    assert!(stat.significant && stat.t_stat < 0.0);
    assert!(matches!(
        compare(
            &records,
            &"baseline".parse::<CellRef>().unwrap(),
            &"qqp@0.1".parse().unwrap(),
            &spec
        ),
        Err(ReportError::MissingCell(_))
    ));

    let (_, md) = first.iter().find(|(n, _)| n == "results.md").unwrap();
    assert!(md.contains("Provenance"));
    assert!(md.contains("[n=6]"));
}
