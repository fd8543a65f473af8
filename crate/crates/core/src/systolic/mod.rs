//! The systolic array and the checksum shield that watches it: a functional
//! GEMM model with per-PE fault hooks, the ABFT-style row/column check
//! computation, the shield sizing rules, and the pipeline timing model.

pub mod array;
pub mod shield;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Which operand stays resident in the PEs during a tile-group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dataflow {
    WS,
    OS,
}

/// An N x N array organised as I x I tiles of J x J PEs, N = I * J.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub tiles_per_row: u32,
    pub pes_per_tile_row: u32,
    pub dataflow: Dataflow,
}

impl ArrayGeometry {
    pub fn new(tiles_per_row: u32, pes_per_tile_row: u32, dataflow: Dataflow) -> Result<Self> {
        if tiles_per_row == 0 || pes_per_tile_row == 0 {
            return Err(SimError::Config(
                "array geometry dimensions must be positive".into(),
            ));
        }
        Ok(ArrayGeometry {
            tiles_per_row,
            pes_per_tile_row,
            dataflow,
        })
    }

    /// Matrix dimension handled per tile-group.
    pub fn n(&self) -> usize {
        (self.tiles_per_row * self.pes_per_tile_row) as usize
    }

    /// Tile index containing a PE row or column.
    pub fn tile_of(&self, pe_index: usize) -> usize {
        pe_index / self.pes_per_tile_row as usize
    }

    /// Cycles a tile-group occupies the array: N columns drain after N + N-1
    /// skewed steps.
    pub fn array_window(&self) -> u64 {
        let i = self.tiles_per_row as u64;
        let j = self.pes_per_tile_row as u64;
        i * j + 2 * i - 1
    }
}
