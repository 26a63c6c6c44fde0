//! CSV and text emitters: matrices, histograms and result tables.
//!
//! Dialect: comma separated, `.` decimal point, one header row, LF endings.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::sparse::{EpochRecord, SparsityTrace};

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::field(path.display().to_string(), format!("{other:?}")),
    }
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(file))
}

/// Writes header + rows of string cells.
pub fn write_csv(path: impl AsRef<Path>, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let path = path.as_ref();
    let mut w = writer(path)?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a CSV file into its header and rows.
pub fn read_csv(path: impl AsRef<Path>) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header = r.headers().map_err(|e| csv_err(path, e))?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec.map_err(|e| csv_err(path, e))?.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}

/// Square 0/1 matrix with a label column and a label header row.
pub fn write_matrix_csv(path: impl AsRef<Path>, labels: &[String], m: &[Vec<bool>]) -> Result<()> {
    let mut header = vec!["node".to_string()];
    header.extend(labels.iter().cloned());
    let rows: Vec<Vec<String>> = labels
        .iter()
        .zip(m)
        .map(|(l, row)| {
            let mut r = vec![l.clone()];
            r.extend(row.iter().map(|&b| if b { "1" } else { "0" }.to_string()));
            r
        })
        .collect();
    write_csv(path, &header, &rows)
}

pub fn read_matrix_csv(path: impl AsRef<Path>) -> Result<(Vec<String>, Vec<Vec<bool>>)> {
    let path = path.as_ref();
    let (header, rows) = read_csv(path)?;
    let labels: Vec<String> = header.into_iter().skip(1).collect();
    let mut m = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let cells = row
            .iter()
            .skip(1)
            .map(|c| match c.as_str() {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(Error::field(format!("{}: row {i}", path.display()), format!("expected 0/1, got `{other}`"))),
            })
            .collect::<Result<Vec<_>>>()?;
        m.push(cells);
    }
    Ok((labels, m))
}

/// Bin edges on the relative group-norm scale `I_k / max_k I_k`.
pub const HISTOGRAM_EDGES: [f64; 8] = [0.0, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0];

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Histogram of per-index importances normalised within each group.
    /// An all-zero group contributes to the lowest bin.
    pub fn of_groups<'a>(groups: impl IntoIterator<Item = &'a [f64]>) -> Self {
        let edges = HISTOGRAM_EDGES.to_vec();
        let mut counts = vec![0; edges.len() - 1];
        for scores in groups {
            let max = scores.iter().copied().fold(0.0, f64::max);
            for &s in scores {
                let r = if max > 0.0 { s / max } else { 0.0 };
                let bin = edges[1..].iter().position(|&e| r < e).unwrap_or(counts.len() - 1);
                counts[bin] += 1;
            }
        }
        Self { edges, counts }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Histogram of group-norm sparsity for the final epoch of `trace`, or for
/// every epoch when `per_epoch` is set. Columns: `epoch,lower,upper,count`.
pub fn emit_sparsity_histogram(trace: &SparsityTrace, path: impl AsRef<Path>, per_epoch: bool) -> Result<()> {
    let last = trace.last().ok_or_else(|| Error::Empty("sparsity trace has no epochs".into()))?;
    let epochs: Vec<&EpochRecord> = if per_epoch { trace.epochs.iter().collect() } else { vec![last] };
    let header = ["epoch", "lower", "upper", "count"].map(String::from).to_vec();
    let mut rows = Vec::new();
    for e in epochs {
        let h = Histogram::of_groups(e.groups.iter().map(|g| g.scores.as_slice()));
        for (b, c) in h.counts.iter().enumerate() {
            rows.push(vec![e.epoch.to_string(), fmt_f64(h.edges[b]), fmt_f64(h.edges[b + 1]), c.to_string()]);
        }
    }
    write_csv(path, &header, &rows)
}

pub fn fmt_f64(v: f64) -> String {
    // shortest representation that parses back to the same value
    format!("{v:?}")
}

/// A table of optional string cells; missing cells render as `n/a`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Option<String>>>,
}

impl Table {
    pub fn new(columns: Vec<String>) -> Self {
        Self { columns, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Option<String>>) {
        self.rows.push(row);
    }

    pub fn to_text(&self) -> String {
        let cell = |c: &Option<String>| c.clone().unwrap_or_else(|| "n/a".to_string());
        let widths: Vec<usize> = (0..self.columns.len())
            .map(|i| {
                self.rows
                    .iter()
                    .map(|r| r.get(i).map(|c| cell(c).len()).unwrap_or(3))
                    .chain(std::iter::once(self.columns[i].len()))
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let mut out = String::new();
        let line = |cells: Vec<String>| {
            cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect::<Vec<_>>().join("  ").trim_end().to_string()
        };
        out.push_str(&line(self.columns.clone()));
        out.push('\n');
        for r in &self.rows {
            let cells = (0..self.columns.len()).map(|i| r.get(i).map(cell).unwrap_or_else(|| "n/a".into())).collect();
            out.push_str(&line(cells));
            out.push('\n');
        }
        out
    }
}

pub fn emit_table(table: &Table, path: impl AsRef<Path>) -> Result<()> {
    let rows: Vec<Vec<String>> = table
        .rows
        .iter()
        .map(|r| {
            (0..table.columns.len())
                .map(|i| r.get(i).cloned().flatten().unwrap_or_else(|| "n/a".to_string()))
                .collect()
        })
        .collect();
    write_csv(path, &table.columns, &rows)
}

pub fn read_table(path: impl AsRef<Path>) -> Result<Table> {
    let (columns, rows) = read_csv(path)?;
    let rows = rows
        .into_iter()
        .map(|r| r.into_iter().map(|c| if c == "n/a" { None } else { Some(c) }).collect())
        .collect();
    Ok(Table { columns, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let labels = vec!["a.in".to_string(), "a.out".to_string()];
        let m = vec![vec![false, true], vec![true, false]];
        write_matrix_csv(&p, &labels, &m).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text, "node,a.in,a.out\na.in,0,1\na.out,1,0\n");
        assert_eq!(read_matrix_csv(&p).unwrap(), (labels, m));
    }

    #[test]
    fn histogram_bins() {
        let single = [4.0, 1.0, 2.0];
        let h = Histogram::of_groups([&single[..]]);
        assert_eq!(h.total(), 3);
        assert_eq!(h.counts[6], 3);
        let zeroed = [0.0, 0.0];
        let h = Histogram::of_groups([&zeroed[..]]);
        assert_eq!(h.counts[0], 2);
        let mixed = [1.0, 0.0, 5e-3];
        let h = Histogram::of_groups([&mixed[..]]);
        assert_eq!((h.counts[0], h.counts[4], h.counts[6]), (1, 1, 1));
    }

    #[test]
    fn sparsity_histogram_csv() {
        use crate::importance::GroupImportance;
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.csv");
        assert!(matches!(emit_sparsity_histogram(&SparsityTrace::default(), &p, false), Err(Error::Empty(_))));
        let rec = |epoch, scores: Vec<f64>| EpochRecord { epoch, loss: 0.0, accuracy: 0.0, groups: vec![GroupImportance { group: 0, scores }] };
        let trace = SparsityTrace { epochs: vec![rec(0, vec![1.0, 1.0]), rec(1, vec![1.0, 0.0])] };
        emit_sparsity_histogram(&trace, &p, false).unwrap();
        let (_, rows) = read_csv(&p).unwrap();
        assert_eq!(rows.len(), HISTOGRAM_EDGES.len() - 1);
        assert_eq!(rows[0], ["1", "0.0", "1e-6", "1"]);
        assert_eq!(rows.last().unwrap()[3], "1");
        emit_sparsity_histogram(&trace, &p, true).unwrap();
        assert_eq!(read_csv(&p).unwrap().1.len(), 2 * (HISTOGRAM_EDGES.len() - 1));
    }

    #[test]
    fn tables_render_missing_cells() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let mut t = Table::new(vec!["strategy".into(), "acc".into()]);
        t.push(vec![Some("full".into()), None]);
        emit_table(&t, &p).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "strategy,acc\nfull,n/a\n");
        assert_eq!(read_table(&p).unwrap(), t);
        assert!(t.to_text().contains("n/a"));
    }
}
