//! Local-memory protection: every resident block carries a row-sum and a
//! column-sum vector in a separate guardpad store. The sums are plain binary
//! additions of the masked bit patterns (adding 1100 and 0011 always yields
//! 1111), wrapping at the element width, so generation and verification need
//! only adders regardless of dtype. Verification cross-localises mismatches:
//! a row delta equal to a column delta pins the faulty cell, a lone-axis
//! mismatch is attributed to the checksum itself, and ambiguous pairings are
//! left uncorrected.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::block::Block;
use crate::error::{Result, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Axis {
    Row,
    Col,
}

/// Dual checksum vectors for one block: sums of masked patterns mod 2^width.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checksums {
    pub width: u32,
    pub mask: u32,
    pub row_sums: Vec<u32>,
    pub col_sums: Vec<u32>,
}

fn width_mask(width: u32) -> u32 {
    if width == 32 {
        u32::MAX
    } else {
        (1 << width) - 1
    }
}

/// Computes both checksum vectors over the masked bit patterns.
pub fn checksum_generate(block: &Block, mask: u32) -> Checksums {
    let width = block.kind().width();
    let wm = width_mask(width);
    let mut row_sums = vec![0u32; block.rows()];
    let mut col_sums = vec![0u32; block.cols()];
    for r in 0..block.rows() {
        for c in 0..block.cols() {
            let m = block.get(r, c) & mask;
            row_sums[r] = row_sums[r].wrapping_add(m) & wm;
            col_sums[c] = col_sums[c].wrapping_add(m) & wm;
        }
    }
    Checksums {
        width,
        mask,
        row_sums,
        col_sums,
    }
}

/// What verification concluded about one block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum VerifyStatus {
    Clean,
    /// Data cells corrected in place; the block re-verifies clean.
    Corrected(Vec<(usize, usize)>),
    /// Lone-axis mismatches attributed to the guardpad entries themselves;
    /// the listed stored sums were recomputed and no data word was touched.
    ChecksumRepaired(Vec<(Axis, usize)>),
    /// Mismatches remain that no unambiguous pairing explains. Any cells
    /// listed by a partial pairing stay corrected, the rest are left as-is.
    Uncorrectable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyOutcome {
    pub status: VerifyStatus,
    pub latency_cycles: u64,
}

/// Where a logged error was pinned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FaultSiteRef {
    Cell { row: usize, col: usize },
    Checksum { axis: Axis, index: usize },
    Tile { row: usize, col: usize },
    Block,
}

/// One row of the error block maintained by the guardlinker.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub address: usize,
    pub site: FaultSiteRef,
    pub count: u64,
    pub last_delta: u32,
    /// Set once the same site has faulted three times; repeated hits at one
    /// location separate wear-out candidates from transient noise.
    pub permanent_candidate: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Resident {
    block: Block,
    mask: u32,
    tile: Option<(usize, usize)>,
}

/// A guarded local memory: data blocks, their guardpad checksums, and the
/// linker that maps addresses to guard state and accumulates the error block.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GuardedMemory {
    capacity_words: usize,
    blocks: BTreeMap<usize, Resident>,
    guardpad: BTreeMap<usize, Checksums>,
    error_block: Vec<ErrorRecord>,
}

impl GuardedMemory {
    pub fn new(capacity_words: usize) -> Self {
        GuardedMemory {
            capacity_words,
            blocks: BTreeMap::new(),
            guardpad: BTreeMap::new(),
            error_block: Vec::new(),
        }
    }

    pub fn capacity_words(&self) -> usize {
        self.capacity_words
    }

    pub fn addresses(&self) -> impl Iterator<Item = usize> + '_ {
        self.blocks.keys().copied()
    }

    /// Moves a block in, snapshotting checksums from the written stream.
    pub fn mvin(
        &mut self,
        address: usize,
        block: Block,
        mask: u32,
        tile: Option<(usize, usize)>,
    ) -> Result<()> {
        let width = block.kind().width();
        if mask & !width_mask(width) != 0 {
            return Err(SimError::Range {
                what: "checksum mask beyond element width",
                value: format!("{mask:#x}"),
            });
        }
        if address + block.len() > self.capacity_words {
            return Err(SimError::Capacity(format!(
                "block of {} words at address {address} exceeds {} words",
                block.len(),
                self.capacity_words
            )));
        }
        let sums = checksum_generate(&block, mask);
        self.guardpad.insert(address, sums);
        self.blocks.insert(address, Resident { block, mask, tile });
        Ok(())
    }

    /// Moves a block in with caller-provided guardpad entries instead of
    /// sums recomputed from the stream. Used by the write-back path, where
    /// the expected checksums were predicted upstream, so corruption on the
    /// store path stays visible to the next verify.
    pub fn mvin_with_checksums(
        &mut self,
        address: usize,
        block: Block,
        mask: u32,
        sums: Checksums,
        tile: Option<(usize, usize)>,
    ) -> Result<()> {
        if sums.row_sums.len() != block.rows() || sums.col_sums.len() != block.cols() {
            return Err(SimError::Shape(
                "checksum vectors do not match block".into(),
            ));
        }
        self.mvin(address, block, mask, tile)?;
        self.guardpad.insert(address, sums);
        Ok(())
    }

    pub fn block(&self, address: usize) -> Result<&Block> {
        self.blocks
            .get(&address)
            .map(|r| &r.block)
            .ok_or(SimError::Lookup {
                what: "block address",
                key: address.to_string(),
            })
    }

    pub fn checksums(&self, address: usize) -> Result<&Checksums> {
        self.guardpad.get(&address).ok_or(SimError::Lookup {
            what: "guardpad address",
            key: address.to_string(),
        })
    }

    /// Fault hook: mutate one stored data word. Returns true if the stored
    /// pattern changed.
    pub fn corrupt_data(
        &mut self,
        address: usize,
        row: usize,
        col: usize,
        f: impl FnOnce(u32) -> u32,
    ) -> Result<bool> {
        let resident = self.blocks.get_mut(&address).ok_or(SimError::Lookup {
            what: "block address",
            key: address.to_string(),
        })?;
        let width = resident.block.kind().width();
        let old = resident.block.get(row, col);
        let new = f(old) & width_mask(width);
        resident.block.set(row, col, new)?;
        Ok(new != old)
    }

    /// Fault hook: mutate one guardpad entry. Returns true on change.
    pub fn corrupt_checksum(
        &mut self,
        address: usize,
        axis: Axis,
        index: usize,
        f: impl FnOnce(u32) -> u32,
    ) -> Result<bool> {
        let sums = self.guardpad.get_mut(&address).ok_or(SimError::Lookup {
            what: "guardpad address",
            key: address.to_string(),
        })?;
        let wm = width_mask(sums.width);
        let vec = match axis {
            Axis::Row => &mut sums.row_sums,
            Axis::Col => &mut sums.col_sums,
        };
        let slot = vec.get_mut(index).ok_or(SimError::Index {
            what: "checksum index",
            index,
            limit: 0,
        })?;
        let old = *slot;
        *slot = f(old) & wm;
        Ok(*slot != old)
    }

    fn log_error(&mut self, address: usize, site: FaultSiteRef, delta: u32) {
        if let Some(rec) = self
            .error_block
            .iter_mut()
            .find(|r| r.address == address && r.site == site)
        {
            rec.count += 1;
            rec.last_delta = delta;
            rec.permanent_candidate = rec.count >= 3;
        } else {
            self.error_block.push(ErrorRecord {
                address,
                site,
                count: 1,
                last_delta: delta,
                permanent_candidate: false,
            });
        }
    }

    /// Campaign hook for recording faults detected elsewhere (for example a
    /// tile fault localised by the array verifier) in the same error block.
    pub fn log_external_fault(&mut self, address: usize, site: FaultSiteRef, delta: u32) {
        self.log_error(address, site, delta);
    }

    /// Streams the whole block through the verifier, corrects what can be
    /// pinned down, and updates the error block.
    pub fn verify_and_correct(&mut self, address: usize) -> Result<VerifyOutcome> {
        let resident = self.blocks.get(&address).ok_or(SimError::Lookup {
            what: "block address",
            key: address.to_string(),
        })?;
        let mask = resident.mask;
        let (rows, cols) = (resident.block.rows(), resident.block.cols());
        let latency = verify_latency(rows, cols);
        let stored = self.guardpad.get(&address).ok_or(SimError::Lookup {
            what: "guardpad address",
            key: address.to_string(),
        })?;
        let fresh = checksum_generate(&resident.block, mask);
        let wm = width_mask(fresh.width);
        let dr: Vec<u32> = stored
            .row_sums
            .iter()
            .zip(&fresh.row_sums)
            .map(|(s, f)| s.wrapping_sub(*f) & wm)
            .collect();
        let dc: Vec<u32> = stored
            .col_sums
            .iter()
            .zip(&fresh.col_sums)
            .map(|(s, f)| s.wrapping_sub(*f) & wm)
            .collect();
        let bad_rows: Vec<usize> = (0..rows).filter(|&r| dr[r] != 0).collect();
        let bad_cols: Vec<usize> = (0..cols).filter(|&c| dc[c] != 0).collect();

        if bad_rows.is_empty() && bad_cols.is_empty() {
            return Ok(VerifyOutcome {
                status: VerifyStatus::Clean,
                latency_cycles: latency,
            });
        }

        // Lone-axis mismatch: the data cannot be at fault (a cell error
        // always disturbs both axes), so the stored sums themselves are
        // repaired and the data is left alone.
        if bad_cols.is_empty() || bad_rows.is_empty() {
            let repairs: Vec<(Axis, usize)> = if bad_cols.is_empty() {
                bad_rows.iter().map(|&r| (Axis::Row, r)).collect()
            } else {
                bad_cols.iter().map(|&c| (Axis::Col, c)).collect()
            };
            {
                let sums = self.guardpad.get_mut(&address).unwrap();
                for &(axis, i) in &repairs {
                    match axis {
                        Axis::Row => sums.row_sums[i] = fresh.row_sums[i],
                        Axis::Col => sums.col_sums[i] = fresh.col_sums[i],
                    }
                }
            }
            for &(axis, i) in &repairs {
                let delta = match axis {
                    Axis::Row => dr[i],
                    Axis::Col => dc[i],
                };
                self.log_error(address, FaultSiteRef::Checksum { axis, index: i }, delta);
            }
            return Ok(VerifyOutcome {
                status: VerifyStatus::ChecksumRepaired(repairs),
                latency_cycles: latency,
            });
        }

        // Cross-localisation. A single mismatching row must own every
        // mismatching column (and vice versa); otherwise only pairings that
        // are unique in both directions are trusted.
        let mut corrections: Vec<(usize, usize, u32)> = Vec::new();
        let mut complete = false;
        if bad_rows.len() == 1 {
            let r = bad_rows[0];
            let sum = bad_cols
                .iter()
                .fold(0u32, |acc, &c| acc.wrapping_add(dc[c]) & wm);
            if sum == dr[r] {
                corrections = bad_cols.iter().map(|&c| (r, c, dc[c])).collect();
                complete = true;
            }
        } else if bad_cols.len() == 1 {
            let c = bad_cols[0];
            let sum = bad_rows
                .iter()
                .fold(0u32, |acc, &r| acc.wrapping_add(dr[r]) & wm);
            if sum == dc[c] {
                corrections = bad_rows.iter().map(|&r| (r, c, dr[r])).collect();
                complete = true;
            }
        } else {
            let mut used_rows = vec![false; rows];
            let mut used_cols = vec![false; cols];
            for &r in &bad_rows {
                let matches: Vec<usize> = bad_cols
                    .iter()
                    .copied()
                    .filter(|&c| dc[c] == dr[r])
                    .collect();
                if matches.len() == 1 {
                    let c = matches[0];
                    let reverse: Vec<usize> = bad_rows
                        .iter()
                        .copied()
                        .filter(|&r2| dr[r2] == dc[c])
                        .collect();
                    if reverse.len() == 1 {
                        corrections.push((r, c, dr[r]));
                        used_rows[r] = true;
                        used_cols[c] = true;
                    }
                }
            }
            complete =
                bad_rows.iter().all(|&r| used_rows[r]) && bad_cols.iter().all(|&c| used_cols[c]);
        }

        let resident = self.blocks.get_mut(&address).unwrap();
        for &(r, c, delta) in &corrections {
            let bits = resident.block.get(r, c);
            let fixed_field = (bits & mask).wrapping_add(delta) & wm & mask;
            resident.block.set(r, c, (bits & !mask) | fixed_field)?;
        }
        for &(r, c, delta) in &corrections {
            self.log_error(address, FaultSiteRef::Cell { row: r, col: c }, delta);
        }

        if complete && !corrections.is_empty() {
            debug_assert!({
                let resident = self.blocks.get(&address).unwrap();
                let fresh = checksum_generate(&resident.block, mask);
                let stored = self.guardpad.get(&address).unwrap();
                fresh.row_sums == stored.row_sums && fresh.col_sums == stored.col_sums
            });
            let mut cells: Vec<(usize, usize)> =
                corrections.iter().map(|&(r, c, _)| (r, c)).collect();
            cells.sort_unstable();
            Ok(VerifyOutcome {
                status: VerifyStatus::Corrected(cells),
                latency_cycles: latency,
            })
        } else {
            self.log_error(address, FaultSiteRef::Block, 0);
            Ok(VerifyOutcome {
                status: VerifyStatus::Uncorrectable,
                latency_cycles: latency,
            })
        }
    }

    /// Verifies the block, then streams a sub-block onward with fresh
    /// checksums covering exactly the streamed window.
    pub fn stream_out(
        &mut self,
        address: usize,
        r0: usize,
        c0: usize,
        rows: usize,
        cols: usize,
    ) -> Result<(Block, Checksums, VerifyOutcome)> {
        let outcome = self.verify_and_correct(address)?;
        let resident = &self.blocks[&address];
        let sub = resident.block.slice(r0, c0, rows, cols)?;
        let sums = checksum_generate(&sub, resident.mask);
        Ok((sub, sums, outcome))
    }

    pub fn tile_of(&self, address: usize) -> Option<(usize, usize)> {
        self.blocks.get(&address).and_then(|r| r.tile)
    }

    /// Returns the accumulated error block; `clear` resets it.
    pub fn mvout_error_block(&mut self, clear: bool) -> Vec<ErrorRecord> {
        let out = self.error_block.clone();
        if clear {
            self.error_block.clear();
        }
        out
    }
}

/// Detection latency of one full-block verify: rows streamed through the
/// adder trees, plus the tree depth over the columns, plus the compare.
pub fn verify_latency(rows: usize, cols: usize) -> u64 {
    let tree = usize::BITS - cols.next_power_of_two().leading_zeros() - 1;
    rows as u64 + tree as u64 + 1
}
