use std::path::Path;

use nalgebra::DMatrix;

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Rows of a delimited text file, with an optional header.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub source: String,
    pub header: Option<Vec<String>>,
    /// `(line number, fields)`; line numbers are 1-based.
    pub rows: Vec<(usize, Vec<String>)>,
}

fn is_number(s: &str) -> bool {
    s.trim().parse::<f64>().is_ok()
}

/// Splits CSV text into rows. The first record is a header when any of its
/// feature fields (all but the last) is non-numeric. Ragged rows are
/// rejected.
pub fn parse_table(text: &str, source: &str) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut records = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::parse(source, line, 1, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let fields: Vec<String> = rec.iter().map(str::to_string).collect();
        if fields.iter().all(|f| f.is_empty()) {
            continue;
        }
        records.push((line, fields));
    }
    let mut header = None;
    if let Some((_, first)) = records.first() {
        let feature_fields = &first[..first.len().saturating_sub(1).max(1).min(first.len())];
        if feature_fields.iter().any(|f| !is_number(f)) {
            header = Some(records.remove(0).1);
        }
    }
    let width = header
        .as_ref()
        .map(Vec::len)
        .or_else(|| records.first().map(|(_, r)| r.len()));
    if let Some(w) = width {
        for (line, r) in &records {
            if r.len() != w {
                return Err(Error::parse(
                    source,
                    *line,
                    r.len().min(w) + 1,
                    format!("expected {w} fields, found {}", r.len()),
                ));
            }
        }
    }
    Ok(Table {
        source: source.to_string(),
        header,
        rows: records,
    })
}

fn parse_value(source: &str, line: usize, column: usize, field: &str) -> Result<f64> {
    let v: f64 = field
        .parse()
        .map_err(|_| Error::parse(source, line, column, format!("not a number: {field:?}")))?;
    if !v.is_finite() {
        return Err(Error::parse(source, line, column, format!("non-finite value {field:?}")));
    }
    Ok(v)
}

impl Table {
    pub fn width(&self) -> usize {
        self.header
            .as_ref()
            .map(Vec::len)
            .or_else(|| self.rows.first().map(|(_, r)| r.len()))
            .unwrap_or(0)
    }

    /// Parses the first `dim` columns of every row as features.
    pub fn features(&self, dim: usize) -> Result<DMatrix<f64>> {
        let mut flat = Vec::with_capacity(self.rows.len() * dim);
        for (line, r) in &self.rows {
            for (c, f) in r[..dim].iter().enumerate() {
                flat.push(parse_value(&self.source, *line, c + 1, f)?);
            }
        }
        Ok(DMatrix::from_row_slice(self.rows.len(), dim, &flat))
    }

    /// Label text from the last column.
    pub fn label_column(&self) -> Vec<String> {
        self.rows.iter().map(|(_, r)| r.last().cloned().unwrap_or_default()).collect()
    }

    /// Features from all but the last column, labels from the last; label
    /// ids follow first-seen order.
    pub fn into_dataset(self) -> Result<Dataset> {
        let w = self.width();
        if w < 2 {
            return Err(Error::parse(&self.source, 1, 1, "need at least one feature and a label column"));
        }
        if self.rows.len() < 2 {
            return Err(Error::parse(&self.source, 1, 1, "need at least two rows"));
        }
        let features = self.features(w - 1)?;
        let (labels, names) = map_labels(&self.label_column());
        Dataset::new(features, labels, names)
    }
}

/// Dense ids in first-seen order.
pub fn map_labels(raw: &[String]) -> (Vec<usize>, Vec<String>) {
    let mut names: Vec<String> = Vec::new();
    let labels = raw
        .iter()
        .map(|l| match names.iter().position(|n| n == l) {
            Some(i) => i,
            None => {
                names.push(l.clone());
                names.len() - 1
            }
        })
        .collect();
    (labels, names)
}

pub fn parse_csv_dataset(text: &str, source: &str) -> Result<Dataset> {
    parse_table(text, source)?.into_dataset()
}

/// `label index:value ...` lines with 1-based feature indices; absent
/// features are zero.
pub fn parse_libsvm_dataset(text: &str, source: &str) -> Result<Dataset> {
    let mut entries: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut raw_labels = Vec::new();
    let mut dim = 0;
    for (ln, line) in text.lines().enumerate() {
        let line_no = ln + 1;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut tokens = content.split_whitespace();
        let label = tokens.next().expect("non-empty line");
        raw_labels.push(label.to_string());
        let mut row = Vec::new();
        let mut last = 0;
        let mut column = label.len() + 2;
        for tok in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| Error::parse(source, line_no, column, format!("expected index:value, found {tok:?}")))?;
            let idx: usize = idx
                .parse()
                .ok()
                .filter(|&i| i > last)
                .ok_or_else(|| Error::parse(source, line_no, column, format!("bad or unordered index {idx:?}")))?;
            row.push((idx, parse_value(source, line_no, column, val)?));
            last = idx;
            dim = dim.max(idx);
            column += tok.len() + 1;
        }
        entries.push(row);
    }
    if entries.len() < 2 {
        return Err(Error::parse(source, 1, 1, "need at least two rows"));
    }
    if dim == 0 {
        return Err(Error::parse(source, 1, 1, "no feature values"));
    }
    let mut features = DMatrix::zeros(entries.len(), dim);
    for (i, row) in entries.iter().enumerate() {
        for &(j, v) in row {
            features[(i, j - 1)] = v;
        }
    }
    let (labels, names) = map_labels(&raw_labels);
    Dataset::new(features, labels, names)
}

fn source_name(path: &Path) -> String {
    path.display().to_string()
}

/// Reads a dataset, choosing the LIBSVM reader for `.libsvm`/`.svm` files.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    if matches!(ext, "libsvm" | "svm") {
        parse_libsvm_dataset(&text, &source_name(path))
    } else {
        parse_csv_dataset(&text, &source_name(path))
    }
}

pub fn read_table(path: &Path) -> Result<Table> {
    let text = std::fs::read_to_string(path)?;
    parse_table(&text, &source_name(path))
}

/// Features then the label name, no header.
pub fn dataset_to_csv(data: &Dataset) -> String {
    let mut out = String::new();
    for (i, row) in data.features.row_iter().enumerate() {
        for v in row.iter() {
            out.push_str(&format!("{v},"));
        }
        out.push_str(&data.class_names[data.labels[i]]);
        out.push('\n');
    }
    out
}

pub fn write_dataset(data: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, dataset_to_csv(data))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_detection_and_label_order() {
        let d = parse_csv_dataset("a,b,class\n1,2,x\n3,4,y\n5,6,x\n", "t").unwrap();
        assert_eq!(d.class_names, vec!["x", "y"]);
        assert_eq!(d.labels, vec![0, 1, 0]);
        let d = parse_csv_dataset("1,2,7\n3,4,5\n", "t").unwrap();
        assert_eq!(d.class_names, vec!["7", "5"]);
        assert_eq!(d.features[(1, 0)], 3.0);
    }

    #[test]
    fn ragged_and_non_numeric_rows_report_position() {
        match parse_csv_dataset("1,2,a\n3,a\n", "f.csv") {
            Err(Error::Parse(p)) => assert_eq!((p.line, p.column), (2, 3)),
            other => panic!("{other:?}"),
        }
        match parse_csv_dataset("1,2,a\n3,zz,b\n", "f.csv") {
            Err(Error::Parse(p)) => assert_eq!((p.line, p.column), (2, 2)),
            other => panic!("{other:?}"),
        }
        assert!(parse_csv_dataset("1,inf,a\n3,4,b\n", "f").is_err());
    }

    #[test]
    fn libsvm_reader() {
        let d = parse_libsvm_dataset("+1 1:0.5 3:2\n-1 2:1\n", "s").unwrap();
        assert_eq!(d.features.shape(), (2, 3));
        assert_eq!(d.features[(0, 2)], 2.0);
        assert_eq!(d.features[(1, 0)], 0.0);
        assert_eq!(d.class_names, vec!["+1", "-1"]);
        assert!(parse_libsvm_dataset("+1 3:1 2:1\n-1 1:1\n", "s").is_err());
    }

    #[test]
    fn csv_round_trip() {
        let d = parse_csv_dataset("0.1,2,x\n3,1e-7,y\n", "t").unwrap();
        assert_eq!(parse_csv_dataset(&dataset_to_csv(&d), "t").unwrap(), d);
    }
}
