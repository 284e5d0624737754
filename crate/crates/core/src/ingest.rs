//! CSV ingestion of single series and aligned panels.

use std::path::{Path, PathBuf};

use crate::crossdeps::PanelFrame;
use crate::error::{HcrError, Result};
use crate::marginal::SeriesFrame;

/// Column choice: header name or 0-based position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Selector {
    Name(String),
    Index(usize),
}

impl Selector {
    pub fn parse(s: &str) -> Self {
        match s.parse() {
            Ok(i) => Selector::Index(i),
            Err(_) => Selector::Name(s.to_string()),
        }
    }
}

/// Raw cells of a CSV file with an optional header row.
#[derive(Debug, Clone)]
pub struct Table {
    pub headers: Vec<String>,
    /// `(line number, cells)`; lines are 1-based in the file.
    pub rows: Vec<(u64, Vec<String>)>,
    path: PathBuf,
}

fn is_number(s: &str) -> bool {
    s.trim().parse::<f64>().is_ok()
}

impl Table {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read(path).map_err(|e| HcrError::io(path, e))?;
        let display = path.to_path_buf();
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_slice());
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            if rec.iter().all(|c| c.is_empty()) {
                continue;
            }
            rows.push((line, rec.iter().map(str::to_string).collect::<Vec<_>>()));
        }
        if rows.is_empty() {
            return Err(HcrError::Parse {
                path: display,
                line: 0,
                message: "no data rows".into(),
            });
        }
        // A first row is a header when some cell is text where the next
        // row holds a number there, or when it has no numbers at all.
        let first = &rows[0].1;
        let header = match rows.get(1) {
            Some((_, next)) => first
                .iter()
                .zip(next)
                .any(|(a, b)| !is_number(a) && is_number(b)),
            None => !first.iter().any(|c| is_number(c)),
        };
        let width = rows.iter().map(|r| r.1.len()).max().unwrap_or(0);
        let headers = if header {
            let (_, h) = rows.remove(0);
            (0..width)
                .map(|i| h.get(i).cloned().unwrap_or_else(|| format!("column{i}")))
                .collect()
        } else {
            (0..width).map(|i| format!("column{i}")).collect()
        };
        if rows.is_empty() {
            return Err(HcrError::Parse {
                path: display,
                line: 1,
                message: "header without data rows".into(),
            });
        }
        Ok(Table {
            headers,
            rows,
            path: display,
        })
    }

    pub fn resolve(&self, sel: &Selector) -> Result<usize> {
        match sel {
            Selector::Index(i) if *i < self.headers.len() => Ok(*i),
            Selector::Name(name) => self.headers.iter().position(|h| h == name).ok_or_else(|| {
                HcrError::Config(format!(
                    "no column named {name:?} in {}",
                    self.path.display()
                ))
            }),
            Selector::Index(i) => Err(HcrError::Config(format!(
                "column {i} out of range; {} has {} columns",
                self.path.display(),
                self.headers.len()
            ))),
        }
    }

    fn column_is_numeric(&self, c: usize) -> bool {
        self.rows
            .iter()
            .filter_map(|(_, r)| r.get(c))
            .filter(|s| !s.is_empty())
            .all(|s| is_number(s))
    }

    /// Numeric columns in order.
    pub fn numeric_columns(&self) -> Vec<usize> {
        (0..self.headers.len())
            .filter(|&c| self.column_is_numeric(c))
            .collect()
    }

    /// Values of column `c`; trailing missing cells are cut off and
    /// reported as the column's length, anything else must parse.
    fn column(&self, c: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.rows.len());
        let mut ended_at: Option<u64> = None;
        for (line, r) in &self.rows {
            let cell = r.get(c).map(String::as_str).unwrap_or("");
            if cell.is_empty() {
                ended_at.get_or_insert(*line);
                continue;
            }
            if let Some(gap) = ended_at {
                return Err(HcrError::Parse {
                    path: self.path.clone(),
                    line: gap,
                    message: format!("missing value in column {:?}", self.headers[c]),
                });
            }
            let v = cell.parse::<f64>().map_err(|_| HcrError::Parse {
                path: self.path.clone(),
                line: *line,
                message: format!(
                    "cannot parse {cell:?} in column {:?} as a number",
                    self.headers[c]
                ),
            })?;
            out.push(v);
        }
        Ok(out)
    }

    fn timestamps(&self) -> Option<Vec<String>> {
        let c = (0..self.headers.len()).find(|&c| !self.column_is_numeric(c))?;
        Some(
            self.rows
                .iter()
                .map(|(_, r)| r.get(c).cloned().unwrap_or_default())
                .collect(),
        )
    }
}

/// One series. Without a selector the last numeric column is used, which
/// covers both bare value lists and `(timestamp, value)` pairs.
pub fn ingest_series(path: &Path, selector: Option<&Selector>) -> Result<SeriesFrame> {
    let table = Table::read(path)?;
    let c = match selector {
        Some(s) => table.resolve(s)?,
        // the last column that starts with a number; bad cells further
        // down are then reported with their line
        None => (0..table.headers.len())
            .rev()
            .find(|&c| table.rows[0].1.get(c).is_some_and(|s| is_number(s)))
            .ok_or_else(|| HcrError::Parse {
                path: table.path.clone(),
                line: table.rows[0].0,
                message: "no numeric column".into(),
            })?,
    };
    let values = table.column(c)?;
    let mut frame = SeriesFrame::new(table.headers[c].clone(), values);
    if let Some(ts) = table.timestamps() {
        frame.timestamps = Some(ts.into_iter().take(frame.len()).collect());
    }
    Ok(frame)
}

/// Several aligned columns; all numeric columns when `selectors` is empty.
pub fn ingest_panel(path: &Path, selectors: &[Selector]) -> Result<PanelFrame> {
    let table = Table::read(path)?;
    let cols: Vec<usize> = if selectors.is_empty() {
        table.numeric_columns()
    } else {
        selectors
            .iter()
            .map(|s| table.resolve(s))
            .collect::<Result<_>>()?
    };
    if cols.is_empty() {
        return Err(HcrError::Parse {
            path: table.path.clone(),
            line: table.rows[0].0,
            message: "no numeric column".into(),
        });
    }
    let series: Vec<Vec<f64>> = cols
        .iter()
        .map(|&c| table.column(c))
        .collect::<Result<_>>()?;
    let names: Vec<String> = cols.iter().map(|&c| table.headers[c].clone()).collect();
    let expected = series.iter().map(Vec::len).max().unwrap_or(0);
    for (name, s) in names.iter().zip(&series) {
        if s.len() != expected {
            return Err(HcrError::Alignment {
                column: name.clone(),
                expected,
                got: s.len(),
            });
        }
    }
    PanelFrame::new(names, series)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn single_column_of_prices() {
        let f = file("100\n101\n102.5\n99\n98\n97\n100\n101\n103\n104\n");
        let s = ingest_series(f.path(), None).unwrap();
        assert_eq!(s.len(), 10);
        assert_eq!(s.values[2], 102.5);
        assert!(s.timestamps.is_none());
    }

    #[test]
    fn timestamp_value_pairs_with_header() {
        let f = file("date,close\n2020-01-01,10\n2020-01-02,11\n2020-01-03,12\n");
        let s = ingest_series(f.path(), None).unwrap();
        assert_eq!(s.name, "close");
        assert_eq!(s.values, vec![10.0, 11.0, 12.0]);
        assert_eq!(s.timestamps.unwrap()[1], "2020-01-02");
        let by_name = ingest_series(f.path(), Some(&Selector::parse("close"))).unwrap();
        assert_eq!(by_name.values.len(), 3);
        assert!(matches!(
            ingest_series(f.path(), Some(&Selector::parse("open"))),
            Err(HcrError::Config(_))
        ));
    }

    #[test]
    fn empty_file_is_rejected() {
        let f = file("");
        let err = ingest_series(f.path(), None).unwrap_err();
        assert!(matches!(err, HcrError::Parse { .. }));
        assert_eq!(err.exit_code(), 3);
        assert!(matches!(
            ingest_series(Path::new("/nonexistent/x.csv"), None),
            Err(HcrError::Io { .. })
        ));
    }

    #[test]
    fn bad_cell_reports_line() {
        let f = file("v\n1\n2\nabc\n4\n");
        match ingest_series(f.path(), None) {
            Err(HcrError::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn short_panel_column_names_the_column() {
        let f = file("a,b,c\n1,2,3\n1,2,3\n1,,3\n1,,3\n");
        match ingest_panel(f.path(), &[]) {
            Err(HcrError::Alignment {
                column,
                expected,
                got,
            }) => {
                assert_eq!(column, "b");
                assert_eq!((expected, got), (4, 2));
            }
            other => panic!("{other:?}"),
        }
        let ok = ingest_panel(f.path(), &[Selector::parse("a"), Selector::Index(2)]).unwrap();
        assert_eq!(ok.names, vec!["a", "c"]);
        assert_eq!(ok.len(), 4);
    }
}
