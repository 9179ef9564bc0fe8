use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use mtmd::data::{
    generate_synthetic, load_panel, read_panel_records, SyntheticSpec, FEATURE_WIDTH,
};
use mtmd::MtmdError;

fn header() -> String {
    let mut h = String::from("date,stock_id,market_cap,price");
    for k in 0..FEATURE_WIDTH {
        let _ = write!(h, ",f{k:03}");
    }
    h
}

fn row(date: &str, id: &str, cap: f64, price: f64, fill: f64) -> String {
    let mut r = format!("{date},{id},{cap},{price}");
    for _ in 0..FEATURE_WIDTH {
        let _ = write!(r, ",{fill}");
    }
    r
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn fixture(dir: &Path) -> PathBuf {
    let rows = [
        header(),
        row("2020-01-02", "AAA", 10.0, 100.0, 0.1),
        row("2020-01-02", "BBB", 30.0, 50.0, 0.2),
        row("2020-01-03", "AAA", 10.0, 110.0, 0.3),
        row("2020-01-03", "BBB", 30.0, 45.0, 0.4),
    ];
    write(dir, "panel.csv", &(rows.join("\n") + "\n"))
}

#[test]
fn two_date_fixture() {
    let tmp = tempfile::tempdir().unwrap();
    let panel_path = fixture(tmp.path());
    let concepts = write(tmp.path(), "concepts.csv", "concept_id,stock_id\nc1,AAA\nc1,BBB\nc2,BBB\n");
    let (panel, graph) = load_panel(&panel_path, &concepts).unwrap();

    // the last date only supplies labels
    assert_eq!(panel.len(), 1);
    let s = &panel.dates[0];
    assert_eq!(s.stock_ids, vec!["AAA", "BBB"]);
    assert_eq!(s.market_caps, vec![10.0, 30.0]);
    assert!((s.raw_returns[0] - 0.1).abs() < 1e-15);
    assert!((s.raw_returns[1] + 0.1).abs() < 1e-15);
    // two stocks, population z-score: ±1
    assert!((s.labels[0] - 1.0).abs() < 1e-12);
    assert!((s.labels[1] + 1.0).abs() < 1e-12);
    assert_eq!(s.features.shape(), &[2, FEATURE_WIDTH]);
    assert_eq!(s.features.get2(1, 5), 0.2);

    let g = &graph.dates[0];
    assert_eq!(g.concept_ids, vec!["c1", "c2"]);
    assert_eq!(g.links, vec![(0, 0), (1, 0), (1, 1)]);
}

#[test]
fn empty_concept_file_is_no_links() {
    let tmp = tempfile::tempdir().unwrap();
    let panel_path = fixture(tmp.path());
    let concepts = write(tmp.path(), "concepts.csv", "");
    let (_, graph) = load_panel(&panel_path, &concepts).unwrap();
    assert!(graph.dates[0].links.is_empty());
    assert_eq!(graph.dates[0].n_concepts(), 0);
}

#[test]
fn duplicate_row_names_the_line() {
    let tmp = tempfile::tempdir().unwrap();
    let rows = [
        header(),
        row("2020-01-02", "AAA", 10.0, 100.0, 0.0),
        row("2020-01-02", "AAA", 10.0, 100.0, 0.0),
    ];
    let p = write(tmp.path(), "panel.csv", &(rows.join("\n") + "\n"));
    match read_panel_records(&p) {
        Err(MtmdError::Parse { line, msg, .. }) => {
            assert_eq!(line, 3);
            assert!(msg.contains("duplicate"), "{msg}");
        }
        other => panic!("expected parse error, got {other:?}"),
    }
}

#[test]
fn unknown_stock_in_concepts() {
    let tmp = tempfile::tempdir().unwrap();
    let panel_path = fixture(tmp.path());
    let concepts = write(tmp.path(), "concepts.csv", "concept_id,stock_id\nc1,ZZZ\n");
    match load_panel(&panel_path, &concepts) {
        Err(MtmdError::Parse { line, msg, .. }) => {
            assert_eq!(line, 2);
            assert!(msg.contains("ZZZ"));
        }
        other => panic!("expected parse error, got {other:?}"),
    }
}

#[test]
fn missing_column_and_bad_values() {
    let tmp = tempfile::tempdir().unwrap();
    let p = write(tmp.path(), "a.csv", "date,stock_id,price\n2020-01-02,AAA,1\n");
    let err = read_panel_records(&p).unwrap_err();
    assert!(err.to_string().contains("market_cap"), "{err}");

    let rows = [header(), row("2020-01-02", "AAA", 10.0, -1.0, 0.0)];
    let p = write(tmp.path(), "b.csv", &rows.join("\n"));
    assert!(matches!(read_panel_records(&p), Err(MtmdError::Parse { line: 2, .. })));

    let rows = [header(), row("2020-01-02", "AAA", 10.0, 5.0, 0.0).replace(",0,", ",x,")];
    let p = write(tmp.path(), "c.csv", &rows.join("\n"));
    let err = read_panel_records(&p).unwrap_err();
    assert!(err.to_string().contains("non-numeric"), "{err}");
}

#[test]
fn dated_concepts_apply_per_date() {
    let tmp = tempfile::tempdir().unwrap();
    let rows = [
        header(),
        row("2020-01-02", "AAA", 1.0, 10.0, 0.0),
        row("2020-01-02", "BBB", 1.0, 10.0, 0.0),
        row("2020-01-03", "AAA", 1.0, 11.0, 0.0),
        row("2020-01-03", "BBB", 1.0, 12.0, 0.0),
        row("2020-01-06", "AAA", 1.0, 12.0, 0.0),
        row("2020-01-06", "BBB", 1.0, 12.0, 0.0),
    ];
    let panel_path = write(tmp.path(), "panel.csv", &rows.join("\n"));
    let concepts = write(
        tmp.path(),
        "concepts.csv",
        "concept_id,stock_id,date\nc1,AAA,2020-01-02\nc1,BBB,2020-01-03\n",
    );
    let (panel, graph) = load_panel(&panel_path, &concepts).unwrap();
    assert_eq!(panel.len(), 2);
    assert_eq!(graph.dates[0].links, vec![(0, 0)]);
    assert_eq!(graph.dates[1].links, vec![(1, 0)]);
}

#[test]
fn synthetic_round_trip() {
    let spec = SyntheticSpec {
        n_stocks: 7,
        n_concepts: 3,
        n_dates: 90,
        seed: 11,
        ..SyntheticSpec::default()
    };
    let market = generate_synthetic(&spec).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    market.write(tmp.path()).unwrap();
    let (panel, graph) = load_panel(&tmp.path().join("panel.csv"), &tmp.path().join("concepts.csv")).unwrap();
    assert_eq!(panel, market.panel);
    assert_eq!(graph, market.graph);
    assert_eq!(panel.len(), 90 - 61);
}
