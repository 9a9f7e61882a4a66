//! Column-oriented raw tables and their CSV representation.
//!
//! Cells are kept as text; an empty CSV cell is a missing value (`None`).

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub type Cell = Option<String>;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RawTable {
    names: Vec<String>,
    columns: Vec<Vec<Cell>>,
}

impl RawTable {
    pub fn new(names: Vec<String>, columns: Vec<Vec<Cell>>) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} column names for {} columns",
                names.len(),
                columns.len()
            )));
        }
        if let Some(first) = columns.first() {
            if let Some((i, _)) = columns
                .iter()
                .enumerate()
                .find(|(_, c)| c.len() != first.len())
            {
                return Err(Error::ShapeMismatch(format!(
                    "column `{}` has {} rows, expected {}",
                    names[i],
                    columns[i].len(),
                    first.len()
                )));
            }
        }
        Ok(Self { names, columns })
    }

    /// Builds a table from string cells, treating `""` as missing.
    pub fn from_str_rows(names: &[&str], rows: &[Vec<&str>]) -> Result<Self> {
        let mut columns = vec![Vec::with_capacity(rows.len()); names.len()];
        for row in rows {
            if row.len() != names.len() {
                return Err(Error::ShapeMismatch(format!(
                    "row with {} cells, expected {}",
                    row.len(),
                    names.len()
                )));
            }
            for (col, cell) in columns.iter_mut().zip(row) {
                col.push(if cell.is_empty() {
                    None
                } else {
                    Some(cell.to_string())
                });
            }
        }
        Self::new(names.iter().map(|s| s.to_string()).collect(), columns)
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn n_cols(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn columns(&self) -> &[Vec<Cell>] {
        &self.columns
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn column(&self, name: &str) -> Option<&[Cell]> {
        self.column_index(name).map(|i| self.columns[i].as_slice())
    }

    pub fn cell(&self, row: usize, col: usize) -> Option<&str> {
        self.columns[col][row].as_deref()
    }

    pub fn push_column(&mut self, name: String, cells: Vec<Cell>) -> Result<()> {
        if !self.names.is_empty() && cells.len() != self.n_rows() {
            return Err(Error::ShapeMismatch(format!(
                "column `{name}` has {} rows, expected {}",
                cells.len(),
                self.n_rows()
            )));
        }
        self.names.push(name);
        self.columns.push(cells);
        Ok(())
    }

    /// Drops the named column, returning its cells.
    pub fn remove_column(&mut self, name: &str) -> Option<Vec<Cell>> {
        let i = self.column_index(name)?;
        self.names.remove(i);
        Some(self.columns.remove(i))
    }

    pub fn select_rows(&self, rows: &[usize]) -> RawTable {
        RawTable {
            names: self.names.clone(),
            columns: self
                .columns
                .iter()
                .map(|c| rows.iter().map(|&r| c[r].clone()).collect())
                .collect(),
        }
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_reader(file)
    }

    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(false)
            .from_reader(reader);
        let names: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let mut columns: Vec<Vec<Cell>> = vec![Vec::new(); names.len()];
        for record in rdr.records() {
            let record = record?;
            for (col, cell) in columns.iter_mut().zip(record.iter()) {
                col.push(if cell.is_empty() {
                    None
                } else {
                    Some(cell.to_string())
                });
            }
        }
        Self::new(names, columns)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.to_csv_writer(file)
    }

    pub fn to_csv_writer<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        wtr.write_record(&self.names)?;
        for r in 0..self.n_rows() {
            wtr.write_record(
                self.columns
                    .iter()
                    .map(|c| c[r].as_deref().unwrap_or("")),
            )?;
        }
        wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.to_csv_writer(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }
}
