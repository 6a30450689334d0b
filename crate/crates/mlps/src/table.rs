//! Table schemas, cell addressing and the per-writer update buffer shared by
//! clients and server shards.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use crate::error::PsError;

/// A dense table of `rows x width` floats.
#[derive(Debug, Clone, PartialEq)]
pub struct TableSpec {
    pub name: String,
    pub rows: u64,
    pub width: usize,
    /// Row-major initial contents; zeros when absent.
    pub init: Option<Arc<[f64]>>,
}

impl TableSpec {
    pub fn zeros(name: impl Into<String>, rows: u64, width: usize) -> Self {
        Self {
            name: name.into(),
            rows,
            width,
            init: None,
        }
    }

    pub fn with_init(mut self, init: Vec<f64>) -> Self {
        assert_eq!(init.len() as u64, self.rows * self.width as u64);
        self.init = Some(init.into());
        self
    }

    pub fn initial_row(&self, row: u64) -> Vec<f64> {
        match &self.init {
            Some(init) => {
                let start = row as usize * self.width;
                init[start..start + self.width].to_vec()
            }
            None => vec![0.0; self.width],
        }
    }
}

/// `(table index, row, column)`.
pub type Cell = (usize, u64, u32);

/// Table layout plus the row-to-shard placement.
#[derive(Debug, Clone)]
pub struct Schema {
    tables: Vec<TableSpec>,
    index: HashMap<String, usize>,
    shards: usize,
}

impl Schema {
    pub fn new(tables: Vec<TableSpec>, shards: usize) -> Self {
        assert!(shards >= 1, "at least one shard");
        let index = tables
            .iter()
            .enumerate()
            .map(|(i, t)| (t.name.clone(), i))
            .collect();
        Self {
            tables,
            index,
            shards,
        }
    }

    pub fn tables(&self) -> &[TableSpec] {
        &self.tables
    }

    pub fn shards(&self) -> usize {
        self.shards
    }

    pub fn shard_of(&self, row: u64) -> usize {
        (row % self.shards as u64) as usize
    }

    pub fn table(&self, name: &str) -> Result<usize, PsError> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| PsError::UnknownTable(name.to_string()))
    }

    pub fn spec(&self, table: usize) -> &TableSpec {
        &self.tables[table]
    }

    pub fn check_row(&self, table: usize, row: u64) -> Result<(), PsError> {
        let spec = &self.tables[table];
        if row >= spec.rows {
            return Err(PsError::UnknownRow {
                table: spec.name.clone(),
                row,
            });
        }
        Ok(())
    }

    pub fn cell(&self, name: &str, row: u64, col: u32) -> Result<Cell, PsError> {
        let t = self.table(name)?;
        self.check_row(t, row)?;
        if col as usize >= self.tables[t].width {
            return Err(PsError::UnknownColumn {
                table: name.to_string(),
                col,
            });
        }
        Ok((t, row, col))
    }
}

/// Net effect of one writer's operations on a cell within one clock.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CellOp {
    Delta(f64),
    /// An overwrite followed by any later increments from the same writer.
    Overwrite(f64),
}

impl CellOp {
    pub fn apply(self, current: f64) -> f64 {
        match self {
            CellOp::Delta(d) => current + d,
            CellOp::Overwrite(v) => v,
        }
    }
}

/// Buffered writes reduced per cell in program order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WriteBuffer {
    ops: BTreeMap<Cell, CellOp>,
}

impl WriteBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn inc(&mut self, cell: Cell, delta: f64) {
        let op = self.ops.entry(cell).or_insert(CellOp::Delta(0.0));
        *op = match *op {
            CellOp::Delta(d) => CellOp::Delta(d + delta),
            CellOp::Overwrite(v) => CellOp::Overwrite(v + delta),
        };
    }

    pub fn put(&mut self, cell: Cell, value: f64) {
        self.ops.insert(cell, CellOp::Overwrite(value));
    }

    pub fn insert(&mut self, cell: Cell, op: CellOp) {
        match op {
            CellOp::Delta(d) => self.inc(cell, d),
            CellOp::Overwrite(v) => self.put(cell, v),
        }
    }

    pub fn get(&self, cell: &Cell) -> Option<CellOp> {
        self.ops.get(cell).copied()
    }

    pub fn remove(&mut self, cell: &Cell) -> Option<CellOp> {
        self.ops.remove(cell)
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Cell, &CellOp)> {
        self.ops.iter()
    }

    /// Applies the buffered ops for `(table, row)` onto `values`.
    pub fn apply_row(&self, table: usize, row: u64, values: &mut [f64]) {
        for (&(_, _, col), op) in self.ops.range((table, row, 0)..=(table, row, u32::MAX)) {
            let v = &mut values[col as usize];
            *v = op.apply(*v);
        }
    }

    pub fn take(&mut self) -> Self {
        std::mem::take(self)
    }

    /// Splits by shard, preserving cell order.
    pub fn split_by_shard(self, schema: &Schema) -> Vec<WriteBuffer> {
        let mut out = vec![WriteBuffer::new(); schema.shards()];
        for (cell, op) in self.ops {
            out[schema.shard_of(cell.1)].ops.insert(cell, op);
        }
        out
    }
}

/// Full table contents, rows in order.
#[derive(Debug, Clone, PartialEq)]
pub struct TableData {
    pub width: usize,
    pub rows: Vec<Vec<f64>>,
}

impl TableData {
    /// Row-major concatenation.
    pub fn flatten(&self) -> Vec<f64> {
        self.rows.iter().flatten().copied().collect()
    }
}

/// The model state assembled from every shard at one frontier.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelSnapshot {
    pub tables: BTreeMap<String, TableData>,
}

impl ModelSnapshot {
    pub fn table(&self, name: &str) -> Option<&TableData> {
        self.tables.get(name)
    }

    pub fn flat(&self, name: &str) -> Vec<f64> {
        self.tables.get(name).map(TableData::flatten).unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn buffer_reduces_in_program_order() {
        let mut b = WriteBuffer::new();
        b.inc((0, 0, 0), 2.0);
        b.inc((0, 0, 0), 2.0);
        assert_eq!(b.get(&(0, 0, 0)), Some(CellOp::Delta(4.0)));
        b.put((0, 0, 1), 0.5);
        b.inc((0, 0, 1), 0.1);
        assert_eq!(b.get(&(0, 0, 1)), Some(CellOp::Overwrite(0.6)));
        b.inc((0, 0, 2), 3.0);
        b.inc((0, 0, 2), -3.0);
        let mut row = vec![1.0, 1.0, 1.0];
        b.apply_row(0, 0, &mut row);
        assert_eq!(row, vec![5.0, 0.6, 1.0]);
    }

    #[test]
    fn apply_row_ignores_other_rows() {
        let mut b = WriteBuffer::new();
        b.inc((0, 1, 0), 1.0);
        b.inc((1, 0, 0), 1.0);
        let mut row = vec![0.0];
        b.apply_row(0, 0, &mut row);
        assert_eq!(row, vec![0.0]);
    }

    #[test]
    fn schema_validation() {
        let s = Schema::new(vec![TableSpec::zeros("beta", 2, 3)], 2);
        assert_eq!(s.cell("beta", 1, 2).unwrap(), (0, 1, 2));
        assert!(matches!(s.cell("x", 0, 0), Err(PsError::UnknownTable(_))));
        assert!(matches!(s.cell("beta", 2, 0), Err(PsError::UnknownRow { .. })));
        assert!(matches!(s.cell("beta", 0, 3), Err(PsError::UnknownColumn { .. })));
        assert_eq!(s.shard_of(3), 1);
    }
}
