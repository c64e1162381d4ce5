//! CSV and JSON file formats.
//!
//! * panel: long CSV `unit_id,time,y,x1,...,xk`, balanced, one block of rows
//!   per unit with periods in the same order for every unit
//! * weights and effects: dense CSV whose first row and first column hold
//!   unit ids
//! * unit tables (`theta`, `sigma2`): `unit_id` followed by value columns

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;

use sarvb::{PanelDataset, WeightsMatrix};

use crate::error::{CliError, CliResult};

/// Writes via a temporary file in the same directory and a rename, so a
/// crash never leaves a partial file under the final name.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| CliError::validation(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = fs::File::create(&tmp)
        .and_then(|mut f| {
            f.write_all(bytes)?;
            f.sync_all()
        })
        .and_then(|_| fs::rename(&tmp, path));
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(CliError::io(path, e));
    }
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("report types serialize");
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn csv_bytes(rows: impl IntoIterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.write_record(&row).expect("writing to memory");
    }
    w.into_inner().expect("writing to memory")
}

fn open_csv(path: &Path) -> CliResult<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).flexible(true).trim(csv::Trim::All).from_reader(file))
}

fn read_error(path: &Path, e: csv::Error) -> CliError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        kind => CliError::validation(format!("{}: malformed CSV: {kind:?}", path.display())),
    }
}

fn line_of(record: &csv::StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

fn parse_cell(path: &Path, record: &csv::StringRecord, col: usize, name: &str) -> CliResult<f64> {
    let line = line_of(record);
    let raw = record.get(col).unwrap_or("");
    let value: f64 = raw
        .parse()
        .map_err(|_| CliError::validation(format!("{}: row {line}: column {name}: {raw:?} is not a number", path.display())))?;
    if !value.is_finite() {
        return Err(CliError::validation(format!("{}: row {line}: column {name}: non-finite value", path.display())));
    }
    Ok(value)
}

fn check_width(path: &Path, record: &csv::StringRecord, width: usize) -> CliResult<()> {
    if record.len() != width {
        return Err(CliError::validation(format!(
            "{}: row {}: expected {width} fields, found {}",
            path.display(),
            line_of(record),
            record.len()
        )));
    }
    Ok(())
}

pub fn write_panel(path: &Path, panel: &PanelDataset) -> CliResult<()> {
    let k = panel.n_exog();
    let mut header = vec!["unit_id".to_string(), "time".into(), "y".into()];
    header.extend((1..=k).map(|r| format!("x{r}")));
    let mut rows = vec![header];
    for (i, id) in panel.unit_ids().iter().enumerate() {
        for t in 0..panel.n_periods() {
            let mut row = vec![id.clone(), (t + 1).to_string(), panel.y()[(i, t)].to_string()];
            row.extend(panel.regressors().iter().map(|x| x[(i, t)].to_string()));
            rows.push(row);
        }
    }
    write_atomic(path, &csv_bytes(rows))
}

struct UnitBlock {
    id: String,
    first_line: u64,
    times: Vec<String>,
    values: Vec<Vec<f64>>,
}

pub fn read_panel(path: &Path) -> CliResult<PanelDataset> {
    let mut reader = open_csv(path)?;
    let header = reader.headers().map_err(|e| read_error(path, e))?.clone();
    let names: Vec<&str> = header.iter().collect();
    if names.len() < 4 || names[..3] != ["unit_id", "time", "y"] {
        return Err(CliError::validation(format!(
            "{}: header must be unit_id,time,y,x1,...,xk; found {}",
            path.display(),
            names.join(",")
        )));
    }
    let k = names.len() - 3;
    for (r, name) in names[3..].iter().enumerate() {
        if *name != format!("x{}", r + 1) {
            return Err(CliError::validation(format!(
                "{}: regressor column {} must be named x{}, found {name:?}",
                path.display(),
                r + 1,
                r + 1
            )));
        }
    }

    let mut blocks: Vec<UnitBlock> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| read_error(path, e))?;
        check_width(path, &record, k + 3)?;
        let id = record[0].to_string();
        if id.is_empty() {
            return Err(CliError::validation(format!("{}: row {}: empty unit_id", path.display(), line_of(&record))));
        }
        let values = (0..=k)
            .map(|c| parse_cell(path, &record, c + 2, names[c + 2]))
            .collect::<CliResult<Vec<f64>>>()?;
        if blocks.last().is_none_or(|b| b.id != id) {
            if blocks.iter().any(|b| b.id == id) {
                return Err(CliError::validation(format!(
                    "{}: row {}: rows for unit {id} are not contiguous; sort by unit and time",
                    path.display(),
                    line_of(&record)
                )));
            }
            blocks.push(UnitBlock { id, first_line: line_of(&record), times: Vec::new(), values: Vec::new() });
        }
        let block = blocks.last_mut().expect("just pushed");
        block.times.push(record[1].to_string());
        block.values.push(values);
    }
    let first = blocks.first().ok_or_else(|| CliError::validation(format!("{}: no data rows", path.display())))?;
    let times = first.times.clone();
    for b in &blocks {
        if b.times != times {
            return Err(CliError::validation(format!(
                "{}: unbalanced panel: unit {} (from row {}) has periods [{}], expected [{}]",
                path.display(),
                b.id,
                b.first_line,
                b.times.join(","),
                times.join(",")
            )));
        }
    }

    let (n, t) = (blocks.len(), times.len());
    let y = DMatrix::from_fn(n, t, |i, s| blocks[i].values[s][0]);
    let x = (1..=k).map(|r| DMatrix::from_fn(n, t, |i, s| blocks[i].values[s][r])).collect();
    Ok(PanelDataset::new(blocks.into_iter().map(|b| b.id).collect(), y, x)?)
}

/// Dense matrix with unit ids along both margins.
pub fn write_labelled_matrix(path: &Path, ids: &[String], m: &DMatrix<f64>) -> CliResult<()> {
    let mut rows = Vec::with_capacity(ids.len() + 1);
    rows.push(std::iter::once(String::from("unit_id")).chain(ids.iter().cloned()).collect());
    for (i, id) in ids.iter().enumerate() {
        rows.push(std::iter::once(id.clone()).chain(m.row(i).iter().map(f64::to_string)).collect());
    }
    write_atomic(path, &csv_bytes(rows))
}

pub fn read_labelled_matrix(path: &Path) -> CliResult<(Vec<String>, DMatrix<f64>)> {
    let mut reader = open_csv(path)?;
    let header = reader.headers().map_err(|e| read_error(path, e))?.clone();
    let ids: Vec<String> = header.iter().skip(1).map(String::from).collect();
    if ids.is_empty() {
        return Err(CliError::validation(format!("{}: header must list unit ids after the first cell", path.display())));
    }
    let n = ids.len();
    let mut m = DMatrix::zeros(n, n);
    let mut count = 0;
    for record in reader.records() {
        let record = record.map_err(|e| read_error(path, e))?;
        check_width(path, &record, n + 1)?;
        if count >= n {
            return Err(CliError::validation(format!("{}: row {}: more rows than units", path.display(), line_of(&record))));
        }
        if record[0] != ids[count] {
            return Err(CliError::validation(format!(
                "{}: row {}: row label {:?} does not match column label {:?}",
                path.display(),
                line_of(&record),
                &record[0],
                ids[count]
            )));
        }
        for j in 0..n {
            m[(count, j)] = parse_cell(path, &record, j + 1, &ids[j])?;
        }
        count += 1;
    }
    if count != n {
        return Err(CliError::validation(format!("{}: {count} rows for {n} units", path.display())));
    }
    Ok((ids, m))
}

pub fn read_weights(path: &Path) -> CliResult<WeightsMatrix> {
    let (ids, m) = read_labelled_matrix(path)?;
    Ok(WeightsMatrix::new(m, ids)?)
}

/// `unit_id` followed by one column per name.
pub fn write_unit_table(path: &Path, ids: &[String], names: &[String], columns: &[Vec<f64>]) -> CliResult<()> {
    let mut rows = Vec::with_capacity(ids.len() + 1);
    rows.push(std::iter::once(String::from("unit_id")).chain(names.iter().cloned()).collect());
    for (i, id) in ids.iter().enumerate() {
        rows.push(std::iter::once(id.clone()).chain(columns.iter().map(|c| c[i].to_string())).collect());
    }
    write_atomic(path, &csv_bytes(rows))
}

/// A unit table as `(ids, column names, N × columns matrix)`.
pub fn read_unit_table(path: &Path) -> CliResult<(Vec<String>, Vec<String>, DMatrix<f64>)> {
    let mut reader = open_csv(path)?;
    let header = reader.headers().map_err(|e| read_error(path, e))?.clone();
    if header.get(0) != Some("unit_id") || header.len() < 2 {
        return Err(CliError::validation(format!("{}: header must be unit_id followed by value columns", path.display())));
    }
    let names: Vec<String> = header.iter().skip(1).map(String::from).collect();
    let mut ids = Vec::new();
    let mut values = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| read_error(path, e))?;
        check_width(path, &record, names.len() + 1)?;
        ids.push(record[0].to_string());
        for (c, name) in names.iter().enumerate() {
            values.push(parse_cell(path, &record, c + 1, name)?);
        }
    }
    if ids.is_empty() {
        return Err(CliError::validation(format!("{}: no data rows", path.display())));
    }
    let m = DMatrix::from_row_slice(ids.len(), names.len(), &values);
    Ok((ids, names, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use sarvb::spatial::default_unit_ids;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    fn panel() -> PanelDataset {
        let y = DMatrix::from_row_slice(2, 3, &[1.5, -2.0, 0.1, 3.0, 1e-17, 7.25]);
        let x1 = y.map(|v| v * 2.0);
        let x2 = y.map(|v| v - 1.0 / 3.0);
        PanelDataset::new(default_unit_ids(2), y, vec![x1, x2]).unwrap()
    }

    #[test]
    fn panel_round_trip_is_exact() {
        let dir = tmp();
        let path = dir.path().join("panel.csv");
        let p = panel();
        write_panel(&path, &p).unwrap();
        assert_eq!(read_panel(&path).unwrap(), p);
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("unit_id,time,y,x1,x2\nu1,1,1.5,"));
        assert_eq!(text.lines().count(), 7);
    }

    #[test]
    fn panel_schema_errors_name_rows_and_units() {
        let dir = tmp();
        let path = dir.path().join("p.csv");
        let check = |body: &str, needle: &str| {
            fs::write(&path, body).unwrap();
            let e = read_panel(&path).unwrap_err();
            assert_eq!(e.exit_code(), 1);
            assert!(e.to_string().contains(needle), "{e} lacks {needle}");
        };
        check("unit,time,y,x1\na,1,1,1\n", "header");
        check("unit_id,time,y,x2\na,1,1,1\n", "x1");
        check("unit_id,time,y,x1\na,1,1,1\na,2,NaN,1\n", "row 3");
        check("unit_id,time,y,x1\na,1,1,1\na,2,oops,1\n", "row 3");
        check("unit_id,time,y,x1\na,1,1,1\na,2,1,1\nb,1,1,1\n", "unit b");
        check("unit_id,time,y,x1\na,1,1,1\nb,1,1,1\na,2,1,1\n", "not contiguous");
        check("unit_id,time,y,x1\na,1,1\n", "row 2");
        check("unit_id,time,y,x1\n", "no data");
    }

    #[test]
    fn weights_round_trip_and_label_check() {
        let dir = tmp();
        let path = dir.path().join("w.csv");
        let w = WeightsMatrix::new(DMatrix::from_row_slice(2, 2, &[0.0, 0.5, -0.25, 0.0]), vec!["a".into(), "b".into()])
            .unwrap();
        write_labelled_matrix(&path, w.unit_ids(), w.matrix()).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "unit_id,a,b\na,0,0.5\nb,-0.25,0\n");
        assert_eq!(read_weights(&path).unwrap(), w);
        fs::write(&path, "unit_id,a,b\nb,0,0.5\na,-0.25,0\n").unwrap();
        assert!(read_weights(&path).is_err());
        fs::write(&path, "unit_id,a,b\na,0.1,0.5\nb,-0.25,0\n").unwrap();
        assert!(read_weights(&path).is_err(), "nonzero diagonal");
    }

    #[test]
    fn unit_table_round_trip() {
        let dir = tmp();
        let path = dir.path().join("theta.csv");
        let ids = vec!["a".to_string(), "b".into()];
        write_unit_table(&path, &ids, &["x1".into(), "x2".into()], &[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let (read_ids, names, m) = read_unit_table(&path).unwrap();
        assert_eq!(read_ids, ids);
        assert_eq!(names, vec!["x1", "x2"]);
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 2.0, 4.0]));
    }

    #[test]
    fn atomic_write_leaves_no_temporary_and_reports_io_errors() {
        let dir = tmp();
        let path = dir.path().join("out.json");
        write_json(&path, &serde_json::json!({"a": 1})).unwrap();
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
        let missing = dir.path().join("nope").join("out.json");
        assert_eq!(write_atomic(&missing, b"x").unwrap_err().exit_code(), 3);
    }
}
