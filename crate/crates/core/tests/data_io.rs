use std::fs;

use flowcp::data::{gen_synth, load_csv, read_meta, write_csv, write_meta, SynthKind, SynthSpec};
use flowcp::Error;

#[test]
fn csv_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cos.csv");
    let ds = gen_synth(&SynthSpec::new(SynthKind::Cos, 500, 21)).unwrap();
    write_csv(&ds, &path).unwrap();
    let back = load_csv(&path).unwrap();
    assert_eq!(back.features(), ds.features());
    assert_eq!(back.labels(), ds.labels());

    write_meta(ds.meta().unwrap(), &path).unwrap();
    assert_eq!(read_meta(&path).unwrap().as_ref(), ds.meta());
}

#[test]
fn polynomial_columns_are_one_x_x_squared_then_label() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("linear.csv");
    write_csv(&gen_synth(&SynthSpec::new(SynthKind::Linear, 20, 3)).unwrap(), &path).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "x1,x2,x3,y");
    for line in lines {
        let v: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        assert_eq!(v.len(), 4);
        assert_eq!(v[0], 1.0);
        assert_eq!(v[2], v[1] * v[1]);
    }
}

#[test]
fn toy_file_has_requested_rows_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    for p in [&a, &b] {
        write_csv(&gen_synth(&SynthSpec::new(SynthKind::Toy, 200, 5)).unwrap(), p).unwrap();
    }
    let bytes = fs::read(&a).unwrap();
    assert_eq!(bytes, fs::read(&b).unwrap());
    assert_eq!(String::from_utf8(bytes).unwrap().lines().count(), 201);
}

#[test]
fn missing_cell_reports_row_and_column() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    fs::write(&path, "a,b,y\n1,2,3\n4,NA,6\n").unwrap();
    match load_csv(&path) {
        Err(Error::Parse { row, column, name, .. }) => {
            assert_eq!((row, column, name.as_str()), (3, 2, "b"));
        }
        other => panic!("{other:?}"),
    }
    fs::write(&path, "a,b,y\n1,,3\n").unwrap();
    assert!(matches!(load_csv(&path), Err(Error::Parse { row: 2, column: 2, .. })));
    fs::write(&path, "a,b,y\n").unwrap();
    assert!(matches!(load_csv(&path), Err(Error::EmptyDataset)));
}
