//! File formats: CSV datasets and a plain-text weights format.
//!
//! # Dataset CSV
//!
//! ```text
//! id,x,y,rainfall,yield
//! site-0,0,0,101.25,3.5
//! site-1,0,1,98.75,3.25
//! ```
//!
//! The first three columns are always `id,x,y`; every further column is an
//! observation variable. Floating-point values are written with Rust's
//! shortest round-trip formatting, so save → load → save reproduces a file
//! byte for byte.
//!
//! # Weights file
//!
//! Line 1 is a header — order, standardization flag, metric, transform,
//! and the transform's parameters (threshold and/or exponent, in that
//! kind's constructor order):
//!
//! ```text
//! 25 1 euclidean connectivity 1.5
//! 0 1 0.25
//! 0 5 0.25
//! ...
//! ```
//!
//! Every following line is one strictly positive off-diagonal entry as
//! zero-based `row col weight`. Rows with no entries are isolates and are
//! reconstructed as all-zero rows. The same shortest round-trip formatting
//! applies, so weights files are also bitwise stable.
//!
//! All malformed input is reported as [`SpatialError::Parse`] with the
//! 1-based line number.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Result, SpatialError};
use crate::geometry::{Metric, Point, PointSet};
use crate::weights::{SpatialWeights, WeightsKind, WeightsSpec};

fn parse_error(line: usize, message: impl Into<String>) -> SpatialError {
    SpatialError::Parse {
        line,
        message: message.into(),
    }
}

fn csv_error(e: csv::Error) -> SpatialError {
    let line = e
        .position()
        .map(|p| p.line() as usize)
        .unwrap_or_default();
    match e.into_kind() {
        csv::ErrorKind::Io(io) => SpatialError::Io(io),
        other => parse_error(line, format!("malformed CSV: {other:?}")),
    }
}

fn parse_float(line: usize, field: &str, what: &str) -> Result<f64> {
    let value: f64 = field
        .parse()
        .map_err(|_| parse_error(line, format!("{what} {field:?} is not a number")))?;
    if !value.is_finite() {
        return Err(parse_error(line, format!("{what} {field:?} is not finite")));
    }
    Ok(value)
}

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

/// Write a dataset as CSV (see the module docs for the layout).
pub fn write_dataset<W: Write>(points: &PointSet, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let variables: Vec<(&str, _)> = points.variables().collect();
    let mut header = vec!["id".to_string(), "x".into(), "y".into()];
    header.extend(variables.iter().map(|(name, _)| name.to_string()));
    w.write_record(&header).map_err(csv_error)?;
    for (i, (id, p)) in points.ids().iter().zip(points.coords()).enumerate() {
        let mut record = vec![id.clone(), format!("{}", p.x), format!("{}", p.y)];
        record.extend(variables.iter().map(|(_, v)| format!("{}", v[i])));
        w.write_record(&record).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a dataset written by [`write_dataset`].
pub fn read_dataset<R: Read>(input: R) -> Result<PointSet> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let mut records = reader.records();

    let header = match records.next() {
        Some(r) => r.map_err(csv_error)?,
        None => return Err(parse_error(1, "the file is empty")),
    };
    if header.len() < 3 || &header[0] != "id" || &header[1] != "x" || &header[2] != "y" {
        return Err(parse_error(
            1,
            "the header must start with the columns id,x,y",
        ));
    }
    let var_names: Vec<String> = header.iter().skip(3).map(str::to_string).collect();
    for (k, name) in var_names.iter().enumerate() {
        if name.is_empty() {
            return Err(parse_error(1, "a variable column has an empty name"));
        }
        if var_names[..k].contains(name) {
            return Err(parse_error(
                1,
                format!("variable column {name:?} appears twice"),
            ));
        }
    }

    let mut ids: Vec<String> = Vec::new();
    let mut coords: Vec<Point> = Vec::new();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); var_names.len()];
    for record in records {
        let record = record.map_err(csv_error)?;
        let line = record
            .position()
            .map(|p| p.line() as usize)
            .unwrap_or(ids.len() + 2);
        if record.len() != 3 + var_names.len() {
            return Err(parse_error(
                line,
                format!(
                    "expected {} fields, found {}",
                    3 + var_names.len(),
                    record.len()
                ),
            ));
        }
        let id = record[0].to_string();
        if ids.contains(&id) {
            return Err(parse_error(line, format!("duplicate id {id:?}")));
        }
        let x = parse_float(line, &record[1], "coordinate")?;
        let y = parse_float(line, &record[2], "coordinate")?;
        for (k, column) in columns.iter_mut().enumerate() {
            column.push(parse_float(line, &record[3 + k], "value")?);
        }
        ids.push(id);
        coords.push(Point::new(x, y));
    }

    let mut points = PointSet::new(ids, coords)?;
    for (name, column) in var_names.iter().zip(columns) {
        points.add_variable(name, column)?;
    }
    Ok(points)
}

/// Save a dataset to a CSV file.
pub fn save_dataset(points: &PointSet, path: impl AsRef<Path>) -> Result<()> {
    write_dataset(points, BufWriter::new(File::create(path)?))
}

/// Load a dataset from a CSV file.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<PointSet> {
    read_dataset(BufReader::new(File::open(path)?))
}

// ---------------------------------------------------------------------------
// Weights
// ---------------------------------------------------------------------------

fn spec_params(spec: &WeightsSpec) -> Vec<f64> {
    // Parameter order in the header mirrors each kind's constructor.
    match spec.kind {
        WeightsKind::Connectivity => vec![spec.threshold.expect("validated spec")],
        WeightsKind::InverseDistance => vec![spec.gamma.expect("validated spec")],
        WeightsKind::InverseExponential => vec![],
        WeightsKind::Gaussian => vec![spec.threshold.expect("validated spec")],
        WeightsKind::InverseDistanceThresholded => vec![
            spec.gamma.expect("validated spec"),
            spec.threshold.expect("validated spec"),
        ],
    }
}

fn spec_from_params(line: usize, kind: WeightsKind, params: &[f64]) -> Result<WeightsSpec> {
    let expected = match kind {
        WeightsKind::InverseExponential => 0,
        WeightsKind::InverseDistanceThresholded => 2,
        _ => 1,
    };
    if params.len() != expected {
        return Err(parse_error(
            line,
            format!(
                "transform {} takes {expected} parameter(s), found {}",
                kind.token(),
                params.len()
            ),
        ));
    }
    let spec = match kind {
        WeightsKind::Connectivity => WeightsSpec::connectivity(params[0]),
        WeightsKind::InverseDistance => WeightsSpec::inverse_distance(params[0]),
        WeightsKind::InverseExponential => Ok(WeightsSpec::inverse_exponential()),
        WeightsKind::Gaussian => WeightsSpec::gaussian(params[0]),
        WeightsKind::InverseDistanceThresholded => {
            WeightsSpec::inverse_distance_thresholded(params[0], params[1])
        }
    };
    spec.map_err(|e| parse_error(line, e.to_string()))
}

/// Write a weights matrix (see the module docs for the format).
pub fn write_weights<W: Write>(weights: &SpatialWeights, out: W) -> Result<()> {
    let mut out = BufWriter::new(out);
    let n = weights.n();
    write!(
        out,
        "{n} {} {} {}",
        u8::from(weights.standardized()),
        weights.metric().name(),
        weights.spec().kind.token()
    )?;
    for p in spec_params(weights.spec()) {
        write!(out, " {p}")?;
    }
    writeln!(out)?;
    for ((i, j), &v) in weights.values().indexed_iter() {
        if v != 0.0 {
            writeln!(out, "{i} {j} {v}")?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Read a weights matrix written by [`write_weights`].
pub fn read_weights<R: Read>(input: R) -> Result<SpatialWeights> {
    let reader = BufReader::new(input);
    let mut lines = reader.lines();

    let header = match lines.next() {
        Some(line) => line?,
        None => return Err(parse_error(1, "the file is empty")),
    };
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() < 4 {
        return Err(parse_error(
            1,
            "the header must read: order standardized metric transform [params...]",
        ));
    }
    let n: usize = fields[0]
        .parse()
        .map_err(|_| parse_error(1, format!("order {:?} is not a whole number", fields[0])))?;
    if n < 2 {
        return Err(parse_error(1, format!("order must be at least 2, got {n}")));
    }
    let standardized = match fields[1] {
        "0" => false,
        "1" => true,
        other => {
            return Err(parse_error(
                1,
                format!("standardization flag must be 0 or 1, got {other:?}"),
            ))
        }
    };
    let metric = Metric::parse(fields[2])
        .ok_or_else(|| parse_error(1, format!("unknown metric {:?}", fields[2])))?;
    let kind = WeightsKind::parse(fields[3])
        .ok_or_else(|| parse_error(1, format!("unknown transform {:?}", fields[3])))?;
    let params = fields[4..]
        .iter()
        .map(|f| parse_float(1, f, "transform parameter"))
        .collect::<Result<Vec<f64>>>()?;
    let spec = spec_from_params(1, kind, &params)?;

    let mut values = Array2::<f64>::zeros((n, n));
    let mut seen = vec![false; n * n];
    for (offset, line) in lines.enumerate() {
        let line_no = offset + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(parse_error(
                line_no,
                format!("expected: row col weight, found {} field(s)", fields.len()),
            ));
        }
        let parse_index = |f: &str| -> Result<usize> {
            let idx: usize = f
                .parse()
                .map_err(|_| parse_error(line_no, format!("index {f:?} is not a whole number")))?;
            if idx >= n {
                return Err(parse_error(
                    line_no,
                    format!("index {idx} is out of range for order {n}"),
                ));
            }
            Ok(idx)
        };
        let i = parse_index(fields[0])?;
        let j = parse_index(fields[1])?;
        if i == j {
            return Err(parse_error(
                line_no,
                format!("diagonal entry ({i}, {j}) is not allowed"),
            ));
        }
        let v = parse_float(line_no, fields[2], "weight")?;
        if v <= 0.0 {
            return Err(parse_error(
                line_no,
                format!("weight {v} must be strictly positive"),
            ));
        }
        if seen[i * n + j] {
            return Err(parse_error(
                line_no,
                format!("entry ({i}, {j}) appears twice"),
            ));
        }
        seen[i * n + j] = true;
        values[[i, j]] = v;
    }

    Ok(SpatialWeights::from_parts(values, spec, metric, standardized))
}

/// Save a weights matrix to a file.
pub fn save_weights(weights: &SpatialWeights, path: impl AsRef<Path>) -> Result<()> {
    write_weights(weights, File::create(path)?)
}

/// Load a weights matrix from a file.
pub fn load_weights(path: impl AsRef<Path>) -> Result<SpatialWeights> {
    read_weights(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_distance_matrix;
    use crate::weights;

    fn sample_points() -> PointSet {
        let ids = vec!["a".into(), "b".into(), "c".into(), "d".into()];
        let coords = vec![
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(0.0, 1.5),
            Point::new(2.25, 2.0),
        ];
        let mut pts = PointSet::new(ids, coords).unwrap();
        pts.add_variable("rain", vec![1.5, 2.25, -0.125, 101.0]).unwrap();
        pts.add_variable("yield", vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        pts
    }

    #[test]
    fn dataset_round_trips_bitwise() {
        let pts = sample_points();
        let mut first = Vec::new();
        write_dataset(&pts, &mut first).unwrap();
        let loaded = read_dataset(first.as_slice()).unwrap();
        let mut second = Vec::new();
        write_dataset(&loaded, &mut second).unwrap();
        assert_eq!(first, second);
        assert_eq!(loaded.ids(), pts.ids());
        assert_eq!(
            loaded.variable("rain").unwrap(),
            pts.variable("rain").unwrap()
        );
    }

    #[test]
    fn dataset_round_trips_awkward_floats() {
        let ids = vec!["p".into(), "q".into(), "r".into()];
        let coords = vec![
            Point::new(0.1 + 0.2, -0.0),
            Point::new(1e-300, 1e300),
            Point::new(f64::MIN_POSITIVE, -7.0),
        ];
        let mut pts = PointSet::new(ids, coords).unwrap();
        pts.add_variable("v", vec![std::f64::consts::PI, 1.0 / 3.0, -2.5e-17])
            .unwrap();
        let mut buf = Vec::new();
        write_dataset(&pts, &mut buf).unwrap();
        let loaded = read_dataset(buf.as_slice()).unwrap();
        for (a, b) in loaded.coords().iter().zip(pts.coords()) {
            assert_eq!(a.x.to_bits(), b.x.to_bits());
            assert_eq!(a.y.to_bits(), b.y.to_bits());
        }
        for (a, b) in loaded
            .variable("v")
            .unwrap()
            .iter()
            .zip(pts.variable("v").unwrap())
        {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn dataset_errors_carry_line_numbers() {
        let bad_header = "idx,x,y\na,0,0\n";
        match read_dataset(bad_header.as_bytes()) {
            Err(SpatialError::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }

        let bad_number = "id,x,y,v\na,0,0,1\nb,1,oops,2\n";
        match read_dataset(bad_number.as_bytes()) {
            Err(SpatialError::Parse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("oops"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }

        let duplicate = "id,x,y\na,0,0\na,1,1\n";
        match read_dataset(duplicate.as_bytes()) {
            Err(SpatialError::Parse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("duplicate"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }

        let ragged = "id,x,y,v\na,0,0,1\nb,1,1\n";
        match read_dataset(ragged.as_bytes()) {
            Err(SpatialError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    fn sample_weights(standardize: bool) -> SpatialWeights {
        let pts = sample_points();
        let d = build_distance_matrix(&pts, Metric::Euclidean);
        let w = weights::transform(&d, &WeightsSpec::inverse_distance_thresholded(1.5, 2.0).unwrap())
            .unwrap();
        if standardize {
            weights::row_standardize(&w)
        } else {
            w
        }
    }

    #[test]
    fn weights_round_trip_bitwise() {
        for standardize in [false, true] {
            let w = sample_weights(standardize);
            let mut first = Vec::new();
            write_weights(&w, &mut first).unwrap();
            let loaded = read_weights(first.as_slice()).unwrap();
            let mut second = Vec::new();
            write_weights(&loaded, &mut second).unwrap();
            assert_eq!(first, second);
            assert_eq!(loaded.n(), w.n());
            assert_eq!(loaded.standardized(), w.standardized());
            assert_eq!(loaded.metric(), w.metric());
            assert_eq!(loaded.spec(), w.spec());
            assert_eq!(loaded.isolates(), w.isolates());
            for (a, b) in loaded.values().iter().zip(w.values()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn weights_files_and_datasets_survive_disk() {
        let dir = tempfile::tempdir().unwrap();
        let pts = sample_points();
        let dataset_path = dir.path().join("sites.csv");
        save_dataset(&pts, &dataset_path).unwrap();
        let loaded = load_dataset(&dataset_path).unwrap();
        assert_eq!(loaded.ids(), pts.ids());

        let w = sample_weights(true);
        let weights_path = dir.path().join("sites.weights");
        save_weights(&w, &weights_path).unwrap();
        let loaded = load_weights(&weights_path).unwrap();
        assert_eq!(loaded.values(), w.values());
    }

    #[test]
    fn weights_errors_carry_line_numbers() {
        let cases: &[(&str, usize, &str)] = &[
            ("", 1, "empty"),
            ("3 1 euclidean\n", 1, "header"),
            ("3 2 euclidean connectivity 1\n", 1, "flag"),
            ("3 1 cosine connectivity 1\n", 1, "metric"),
            ("3 1 euclidean voronoi 1\n", 1, "transform"),
            ("3 1 euclidean connectivity\n", 1, "parameter"),
            ("3 1 euclidean exp 4\n", 1, "parameter"),
            ("3 1 euclidean connectivity 1\n0 1\n", 2, "fields"),
            ("3 1 euclidean connectivity 1\n0 3 0.5\n", 2, "range"),
            ("3 1 euclidean connectivity 1\n1 1 0.5\n", 2, "diagonal"),
            ("3 1 euclidean connectivity 1\n0 1 -0.5\n", 2, "positive"),
            (
                "3 1 euclidean connectivity 1\n0 1 0.5\n0 1 0.5\n",
                3,
                "twice",
            ),
        ];
        for (text, want_line, what) in cases {
            match read_weights(text.as_bytes()) {
                Err(SpatialError::Parse { line, message }) => {
                    assert_eq!(line, *want_line, "case {what}: {message}");
                }
                other => panic!("case {what}: expected parse error, got {other:?}"),
            }
        }
    }

    #[test]
    fn isolates_survive_the_round_trip() {
        // A threshold that disconnects site d entirely.
        let pts = sample_points();
        let d = build_distance_matrix(&pts, Metric::Euclidean);
        let w = weights::transform(&d, &WeightsSpec::connectivity(1.5).unwrap()).unwrap();
        assert!(!w.isolates().is_empty());
        let mut buf = Vec::new();
        write_weights(&w, &mut buf).unwrap();
        let loaded = read_weights(buf.as_slice()).unwrap();
        assert_eq!(loaded.isolates(), w.isolates());
    }
}
