use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::autodiff::Array;
use crate::error::{Result, TmmError};

/// Header cells that mark a leading row-identifier column.
const ID_COLUMNS: [&str; 2] = ["sample_id", "gene_id"];

/// A numeric table with column ids and optional row ids.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub row_ids: Option<Vec<String>>,
    pub values: Array,
}

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> TmmError {
    TmmError::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| TmmError::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

/// Reads a comma-separated matrix whose first row holds the column ids.
/// A first header cell of `sample_id` or `gene_id` marks a row-id column.
pub fn load_table(path: &Path) -> Result<Table> {
    let mut rdr = reader(path)?;
    let mut records = rdr.records();
    let header = match records.next() {
        Some(r) => r.map_err(|e| parse_err(path, 1, e.to_string()))?,
        None => return Err(parse_err(path, 1, "empty file")),
    };
    let has_ids = header.get(0).is_some_and(|h| ID_COLUMNS.contains(&h));
    let columns: Vec<String> = header.iter().skip(usize::from(has_ids)).map(str::to_string).collect();
    if columns.is_empty() {
        return Err(parse_err(path, 1, "header has no columns"));
    }
    let mut seen = HashSet::new();
    for c in &columns {
        if c.is_empty() {
            return Err(parse_err(path, 1, "empty column id"));
        }
        if !seen.insert(c.as_str()) {
            return Err(parse_err(path, 1, format!("duplicate column id {c:?}")));
        }
    }
    let width = columns.len() + usize::from(has_ids);
    let mut data = Vec::new();
    let mut ids = Vec::new();
    let mut rows = 0;
    for rec in records {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() == 1 && rec.get(0) == Some("") {
            continue;
        }
        if rec.len() != width {
            return Err(parse_err(path, line, format!("expected {width} fields, found {}", rec.len())));
        }
        let mut cells = rec.iter();
        if has_ids {
            ids.push(cells.next().unwrap_or_default().to_string());
        }
        for (c, cell) in cells.enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(path, line, format!("column {:?}: {cell:?} is not a number", columns[c])))?;
            if !v.is_finite() {
                return Err(parse_err(path, line, format!("column {:?}: non-finite value", columns[c])));
            }
            data.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(parse_err(path, 2, "no data rows"));
    }
    Ok(Table {
        values: Array::new(&[rows, columns.len()], data)?,
        columns,
        row_ids: has_ids.then_some(ids),
    })
}

/// Writes a table in the format read by [`load_table`]. Values use the
/// shortest representation that parses back to the same `f64`.
pub fn save_table(path: &Path, table: &Table, id_header: &str) -> Result<()> {
    let io = |e: std::io::Error| TmmError::io(path, e);
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    let mut header = Vec::new();
    if table.row_ids.is_some() {
        header.push(id_header.to_string());
    }
    header.extend(table.columns.iter().cloned());
    writeln!(out, "{}", header.join(",")).map_err(io)?;
    for i in 0..table.values.rows() {
        let mut line = String::new();
        if let Some(ids) = &table.row_ids {
            line.push_str(&ids[i]);
            line.push(',');
        }
        let cells: Vec<String> = table.values.row(i).iter().map(|v| v.to_string()).collect();
        line.push_str(&cells.join(","));
        writeln!(out, "{line}").map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Reads a `sample_id,label` file.
pub fn load_labels(path: &Path) -> Result<(Vec<String>, Vec<usize>)> {
    let mut rdr = reader(path)?;
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| parse_err(path, e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        if k == 0 && rec.get(1).is_some_and(|c| c.parse::<usize>().is_err()) {
            continue;
        }
        if rec.len() == 1 && rec.get(0) == Some("") {
            continue;
        }
        if rec.len() != 2 {
            return Err(parse_err(path, line, format!("expected 2 fields, found {}", rec.len())));
        }
        let label = rec[1]
            .parse()
            .map_err(|_| parse_err(path, line, format!("{:?} is not a class index", &rec[1])))?;
        ids.push(rec[0].to_string());
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(parse_err(path, 1, "no labels"));
    }
    Ok((ids, labels))
}

pub fn save_labels(path: &Path, ids: &[String], labels: &[usize]) -> Result<()> {
    let io = |e: std::io::Error| TmmError::io(path, e);
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    writeln!(out, "sample_id,label").map_err(io)?;
    for (id, y) in ids.iter().zip(labels) {
        writeln!(out, "{id},{y}").map_err(io)?;
    }
    out.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn reads_header_ids() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "m.csv", "roi_a,roi_b\n1,2\n3,4\n");
        let t = load_table(&p).unwrap();
        assert_eq!(t.columns, ["roi_a", "roi_b"]);
        assert_eq!(t.values.data(), &[1.0, 2.0, 3.0, 4.0]);
        assert!(t.row_ids.is_none());
    }

    #[test]
    fn ragged_row_cites_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "m.csv", "a,b\n1,2\n3\n");
        match load_table(&p) {
            Err(TmmError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn non_numeric_and_duplicate_ids_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "m.csv", "a,b\n1,2\n3,x\n");
        assert!(matches!(load_table(&p), Err(TmmError::Parse { line: 3, .. })));
        let p = write(dir.path(), "d.csv", "a,a\n1,2\n");
        assert!(matches!(load_table(&p), Err(TmmError::Parse { line: 1, .. })));
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let t = Table {
            columns: vec!["x".into(), "y".into()],
            row_ids: Some(vec!["s1".into(), "s2".into()]),
            values: Array::new(&[2, 2], vec![0.1, -1.0 / 3.0, 1e-300, 12345.678901234567]).unwrap(),
        };
        let p = dir.path().join("t.csv");
        save_table(&p, &t, "sample_id").unwrap();
        assert_eq!(load_table(&p).unwrap(), t);
    }

    #[test]
    fn labels_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("labels.csv");
        let ids = vec!["a".to_string(), "b".to_string()];
        save_labels(&p, &ids, &[1, 0]).unwrap();
        assert_eq!(load_labels(&p).unwrap(), (ids, vec![1, 0]));
        let bad = write(dir.path(), "bad.csv", "sample_id,label\na,1\nb,z\n");
        assert!(matches!(load_labels(&bad), Err(TmmError::Parse { line: 3, .. })));
    }

    #[test]
    fn missing_file_names_path() {
        let err = load_table(Path::new("/nonexistent/x.csv")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/x.csv"));
    }
}
