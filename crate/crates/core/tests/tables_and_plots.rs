use eit_cs::experiments::{fit_loglog, RateResult, RateRow, RATE_HEADERS};
use eit_cs::pgm::Termination;
use eit_cs::plot::{emit_plot, embedded_table, read_plot_table, render_svg, PlotKind, PlotSpec};
use eit_cs::table::{metadata_path, read_metadata, write_table, Metadata, Table};

fn rate_result() -> RateResult {
    let deltas = [1e-4, 3e-4, 1e-3, 3e-3, 1e-2];
    let rows: Vec<RateRow> = deltas
        .iter()
        .enumerate()
        .map(|(k, &d)| RateRow {
            delta: d,
            lambda: 1e-4 * d,
            error: 2.0 * d.sqrt() * (1.0 + 0.05 * k as f64),
            rel_err: d,
            iterations: 10,
            termination: Termination::Converged,
            mu: 0.5,
            wall_time_s: 0.0,
        })
        .collect();
    let (slope, intercept) = fit_loglog(&deltas, &rows.iter().map(|r| r.error).collect::<Vec<_>>()).unwrap();
    RateResult {
        rows,
        slope,
        intercept,
        metadata: Metadata::new(),
    }
}

#[test]
fn csv_to_svg_to_csv_is_lossless() {
    let result = rate_result();
    let table = result.table();
    assert_eq!(table.headers, RATE_HEADERS.map(String::from).to_vec());
    let dir = tempfile::tempdir().unwrap();
    let svg = dir.path().join("rate.svg");
    emit_plot(&table, &PlotSpec::new(PlotKind::LogLog, "rate", "delta", "error"), &svg).unwrap();
    let back = read_plot_table(&svg).unwrap();
    assert_eq!(back, table);
    let csv = dir.path().join("rate.csv");
    back.write_csv(&csv).unwrap();
    assert_eq!(Table::read_csv(&csv).unwrap(), table);
}

#[test]
fn slope_annotation_matches_the_fit_of_the_plotted_data() {
    let result = rate_result();
    let spec = PlotSpec::new(PlotKind::LogLog, "rate", "delta", "error").annotated(format!("slope = {:.3}", result.slope));
    let svg = render_svg(&result.table(), &spec).unwrap();
    let table = embedded_table(&svg).unwrap();
    let (slope, _) = fit_loglog(&table.column_f64("delta").unwrap(), &table.column_f64("error").unwrap()).unwrap();
    assert!((slope - result.slope).abs() < 1e-12);
    assert!(svg.contains(&format!("slope = {slope:.3}")));
    assert!((slope - 0.5).abs() < 0.05);
}

#[test]
fn empty_series_draws_axes_only() {
    let table = Table::new(&["m", "rel_err", "sample"]);
    let svg = render_svg(&table, &PlotSpec::new(PlotKind::Line, "empty", "m", "rel_err").grouped_by("sample")).unwrap();
    assert!(svg.starts_with("<svg") || svg.starts_with("<?xml"));
    assert!(!svg.contains("<polyline"));
    assert!(svg.contains("<line"));
    assert_eq!(embedded_table(&svg).unwrap(), table);
}

#[test]
fn grouped_plot_has_one_series_per_group() {
    let mut table = Table::new(&["sample", "m", "rel_err"]);
    for s in 0..3 {
        for m in [16, 64, 256] {
            table.push(vec![s.to_string(), m.to_string(), format!("{}", 1.0 / (m as f64 + s as f64))]).unwrap();
        }
    }
    let svg = render_svg(&table, &PlotSpec::new(PlotKind::LogLog, "sweep", "m", "rel_err").grouped_by("sample")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 3);
}

#[test]
fn metadata_sidecar_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("compare.csv");
    let mut table = Table::new(&["a", "b"]);
    table.push(vec!["1".into(), "x".into()]).unwrap();
    let mut meta = Metadata::new();
    meta.insert("seed".into(), serde_json::json!(7));
    write_table(&table, &meta, &csv).unwrap();
    assert_eq!(metadata_path(&csv), dir.path().join("compare.meta.json"));
    assert_eq!(read_metadata(metadata_path(&csv)).unwrap(), meta);
    assert_eq!(Table::read_csv(&csv).unwrap(), table);
    assert!(table.push(vec!["only one".into()]).is_err());
}
