//! Decoupled checksum shield for the systolic array.
//!
//! While a tile-group streams into the array, a small group of shield units
//! computes predicted row and column sums of the result from the operands:
//!
//!   row_check[i] = sum_k A[i][k] * colsum(B)[k] + sum_j D[i][j]
//!   col_check[j] = sum_k rowsum(A)[k] * B[k][j] + sum_i D[i][j]
//!
//! Comparing those predictions against the actual sums of C detects any
//! corruption of the compute path, localises single-cell upsets well enough
//! to repair them in place, and attributes persistent patterns to a tile.
//!
//! Integer checks are exact: the accumulator wraps mod 2^32 and so do the
//! checks. Float checks carry a relative tolerance scaled to the element
//! precision, since f32 reassociation moves the low bits.

use serde::{Deserialize, Serialize};

use crate::block::{Block, ElemKind};
use crate::error::{Result, SimError};
use crate::numerics::DType;

use super::{ArrayGeometry, Dataflow};

/// Accumulator-domain vector: integers wrap in 32 bits, floats are f32.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AccVec {
    Int(Vec<i32>),
    Float(Vec<f32>),
}

impl AccVec {
    pub fn len(&self) -> usize {
        match self {
            AccVec::Int(v) => v.len(),
            AccVec::Float(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Predicted row and column sums for one tile-group result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShieldChecksums {
    pub row_check: AccVec,
    pub col_check: AccVec,
}

/// Relative tolerance for float check comparison, per element dtype.
pub fn float_tolerance(dtype: DType) -> f32 {
    match dtype {
        DType::Bf16 => (2.0f32).powi(-10),
        DType::Fp32 => (2.0f32).powi(-18),
        DType::Int8 => 0.0,
    }
}

/// Compute the shield's predicted sums from the operand streams. `d` is the
/// bias block whose sums the shield reads at preload time; pass a zeroed
/// block for bias-free GEMMs.
pub fn shield_checksums(a: &Block, b: &Block, d: &Block) -> Result<ShieldChecksums> {
    let dt = match a.kind() {
        ElemKind::Data(dt) => dt,
        ElemKind::Acc(_) => return Err(SimError::Shape("operand A must be a data block".into())),
    };
    if b.kind() != a.kind() {
        return Err(SimError::Shape("operand dtypes must match".into()));
    }
    if d.kind() != ElemKind::Acc(dt) {
        return Err(SimError::Shape(
            "bias must be an accumulator block of the operand dtype".into(),
        ));
    }
    let n = a.rows();
    if a.cols() != n || b.rows() != n || b.cols() != n || d.rows() != n || d.cols() != n {
        return Err(SimError::Shape(format!(
            "shield expects square same-size operands, got A {}x{}, B {}x{}, D {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols(),
            d.rows(),
            d.cols()
        )));
    }
    match dt {
        DType::Int8 => {
            let mut s_b = vec![0i32; n];
            let mut s_a = vec![0i32; n];
            for k in 0..n {
                for j in 0..n {
                    s_b[k] = s_b[k].wrapping_add(b.value_i32(k, j));
                }
                for i in 0..n {
                    s_a[k] = s_a[k].wrapping_add(a.value_i32(i, k));
                }
            }
            let mut row_check = vec![0i32; n];
            let mut col_check = vec![0i32; n];
            for i in 0..n {
                for k in 0..n {
                    row_check[i] =
                        row_check[i].wrapping_add(a.value_i32(i, k).wrapping_mul(s_b[k]));
                }
                for j in 0..n {
                    row_check[i] = row_check[i].wrapping_add(d.value_i32(i, j));
                }
            }
            for j in 0..n {
                for k in 0..n {
                    col_check[j] =
                        col_check[j].wrapping_add(s_a[k].wrapping_mul(b.value_i32(k, j)));
                }
                for i in 0..n {
                    col_check[j] = col_check[j].wrapping_add(d.value_i32(i, j));
                }
            }
            Ok(ShieldChecksums {
                row_check: AccVec::Int(row_check),
                col_check: AccVec::Int(col_check),
            })
        }
        DType::Fp32 | DType::Bf16 => {
            let mut s_b = vec![0f32; n];
            let mut s_a = vec![0f32; n];
            for k in 0..n {
                for j in 0..n {
                    s_b[k] += b.value_f32(k, j);
                }
                for i in 0..n {
                    s_a[k] += a.value_f32(i, k);
                }
            }
            let mut row_check = vec![0f32; n];
            let mut col_check = vec![0f32; n];
            for i in 0..n {
                for k in 0..n {
                    row_check[i] += a.value_f32(i, k) * s_b[k];
                }
                for j in 0..n {
                    row_check[i] += d.value_f32(i, j);
                }
            }
            for j in 0..n {
                for k in 0..n {
                    col_check[j] += s_a[k] * b.value_f32(k, j);
                }
                for i in 0..n {
                    col_check[j] += d.value_f32(i, j);
                }
            }
            Ok(ShieldChecksums {
                row_check: AccVec::Float(row_check),
                col_check: AccVec::Float(col_check),
            })
        }
    }
}

/// Verdict of a shield comparison over one tile-group result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ArrayVerifyStatus {
    Clean,
    /// Single cell localised and repaired in place.
    Corrected {
        row: usize,
        col: usize,
    },
    /// Persistent pattern attributed to a tile; `tile_row` is unknown under
    /// WS because partial sums mix all rows before leaving the array.
    TileFault {
        tile_row: Option<usize>,
        tile_col: usize,
    },
    /// Detected but neither repairable nor attributable.
    Uncorrectable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayVerifyOutcome {
    pub status: ArrayVerifyStatus,
    pub mismatched_rows: Vec<usize>,
    pub mismatched_cols: Vec<usize>,
}

enum Deltas {
    Int { rows: Vec<i32>, cols: Vec<i32> },
    Float { rows: Vec<f32>, cols: Vec<f32> },
}

fn recompute_deltas(c: &Block, checks: &ShieldChecksums) -> Result<Deltas> {
    let n = c.rows();
    match (&checks.row_check, &checks.col_check) {
        (AccVec::Int(rc), AccVec::Int(cc)) => {
            let mut rows = vec![0i32; n];
            let mut cols = vec![0i32; n];
            for i in 0..n {
                let mut s = 0i32;
                for j in 0..n {
                    s = s.wrapping_add(c.value_i32(i, j));
                }
                rows[i] = rc[i].wrapping_sub(s);
            }
            for j in 0..n {
                let mut s = 0i32;
                for i in 0..n {
                    s = s.wrapping_add(c.value_i32(i, j));
                }
                cols[j] = cc[j].wrapping_sub(s);
            }
            Ok(Deltas::Int { rows, cols })
        }
        (AccVec::Float(rc), AccVec::Float(cc)) => {
            let mut rows = vec![0f32; n];
            let mut cols = vec![0f32; n];
            for i in 0..n {
                let mut s = 0f32;
                for j in 0..n {
                    s += c.value_f32(i, j);
                }
                rows[i] = rc[i] - s;
            }
            for j in 0..n {
                let mut s = 0f32;
                for i in 0..n {
                    s += c.value_f32(i, j);
                }
                cols[j] = cc[j] - s;
            }
            Ok(Deltas::Float { rows, cols })
        }
        _ => Err(SimError::Shape(
            "row and column checks must share a domain".into(),
        )),
    }
}

fn is_suffix(indices: &[usize], n: usize) -> bool {
    !indices.is_empty()
        && indices[0] + indices.len() == n
        && indices.windows(2).all(|w| w[1] == w[0] + 1)
}

/// Compare the result block against the shield predictions, repairing a
/// single-cell upset in place when the row and column evidence agrees.
pub fn shield_verify(
    c: &mut Block,
    checks: &ShieldChecksums,
    geometry: &ArrayGeometry,
) -> Result<ArrayVerifyOutcome> {
    let n = geometry.n();
    if c.rows() != n || c.cols() != n {
        return Err(SimError::Shape(format!(
            "result block is {}x{} but the array is {n}x{n}",
            c.rows(),
            c.cols()
        )));
    }
    if checks.row_check.len() != n || checks.col_check.len() != n {
        return Err(SimError::Shape("check vector length mismatch".into()));
    }
    let dt = match c.kind() {
        ElemKind::Acc(dt) => dt,
        ElemKind::Data(_) => {
            return Err(SimError::Shape(
                "shield verifies accumulator-domain results".into(),
            ))
        }
    };

    let deltas = recompute_deltas(c, checks)?;
    let tol = float_tolerance(dt);
    let (mism_rows, mism_cols): (Vec<usize>, Vec<usize>) = match &deltas {
        Deltas::Int { rows, cols } => (
            (0..n).filter(|&i| rows[i] != 0).collect(),
            (0..n).filter(|&j| cols[j] != 0).collect(),
        ),
        Deltas::Float { rows, cols } => {
            let (row_ref, col_ref) = match (&checks.row_check, &checks.col_check) {
                (AccVec::Float(r), AccVec::Float(c)) => (r, c),
                _ => unreachable!("delta domain matches check domain"),
            };
            // NaN deltas must register as mismatches, hence the negated form.
            let bad = |d: f32, r: f32| !(d.abs() <= tol * r.abs().max(1.0));
            (
                (0..n).filter(|&i| bad(rows[i], row_ref[i])).collect(),
                (0..n).filter(|&j| bad(cols[j], col_ref[j])).collect(),
            )
        }
    };

    if mism_rows.is_empty() && mism_cols.is_empty() {
        return Ok(ArrayVerifyOutcome {
            status: ArrayVerifyStatus::Clean,
            mismatched_rows: mism_rows,
            mismatched_cols: mism_cols,
        });
    }

    // One row and one column in disagreement: a lone cell at their crossing
    // explains everything iff both axes report the same missing amount.
    if mism_rows.len() == 1 && mism_cols.len() == 1 {
        let (r, col) = (mism_rows[0], mism_cols[0]);
        let agree = match &deltas {
            Deltas::Int { rows, cols } => rows[r] == cols[col],
            Deltas::Float { rows, cols } => {
                let (dr, dc) = (rows[r], cols[col]);
                (dr - dc).abs() <= tol * dr.abs().max(dc.abs()).max(1.0)
            }
        };
        if agree {
            // Rebuild the cell from the row check minus its healthy
            // neighbours. For ints this equals adding the delta back; for
            // floats it sidesteps the cancellation that adding a huge delta
            // to a huge corrupt value would cause.
            match &deltas {
                Deltas::Int { .. } => {
                    let rc = match &checks.row_check {
                        AccVec::Int(v) => v[r],
                        _ => unreachable!("delta domain matches check domain"),
                    };
                    let mut others = 0i32;
                    for j in 0..n {
                        if j != col {
                            others = others.wrapping_add(c.value_i32(r, j));
                        }
                    }
                    c.set_i32(r, col, rc.wrapping_sub(others))?;
                }
                Deltas::Float { .. } => {
                    let rc = match &checks.row_check {
                        AccVec::Float(v) => v[r],
                        _ => unreachable!("delta domain matches check domain"),
                    };
                    let mut others = 0f32;
                    for j in 0..n {
                        if j != col {
                            others += c.value_f32(r, j);
                        }
                    }
                    c.set_f32(r, col, rc - others)?;
                }
            }
            return Ok(ArrayVerifyOutcome {
                status: ArrayVerifyStatus::Corrected { row: r, col },
                mismatched_rows: mism_rows,
                mismatched_cols: mism_cols,
            });
        }
        return Ok(ArrayVerifyOutcome {
            status: ArrayVerifyStatus::Uncorrectable,
            mismatched_rows: mism_rows,
            mismatched_cols: mism_cols,
        });
    }

    // Wider patterns: attribute to a tile when the shape matches how faults
    // propagate under the active dataflow.
    let status = match geometry.dataflow {
        Dataflow::WS => {
            // A faulty PE corrupts its own column's sums and the operands it
            // forwards rightward, so mismatching columns run from the fault
            // to the array edge.
            if is_suffix(&mism_cols, n) {
                ArrayVerifyStatus::TileFault {
                    tile_row: None,
                    tile_col: geometry.tile_of(mism_cols[0]),
                }
            } else {
                ArrayVerifyStatus::Uncorrectable
            }
        }
        Dataflow::OS => {
            // Corruption spreads right from the fault along its row and down
            // along its column, so the earliest mismatch on each axis pins
            // the tile.
            if !mism_rows.is_empty() && !mism_cols.is_empty() {
                ArrayVerifyStatus::TileFault {
                    tile_row: Some(geometry.tile_of(mism_rows[0])),
                    tile_col: geometry.tile_of(mism_cols[0]),
                }
            } else {
                ArrayVerifyStatus::Uncorrectable
            }
        }
    };
    Ok(ArrayVerifyOutcome {
        status,
        mismatched_rows: mism_rows,
        mismatched_cols: mism_cols,
    })
}

/// Sized shield group for a geometry: how many shield units run in parallel
/// and how long each takes per tile-group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShieldConfig {
    pub geometry: ArrayGeometry,
    /// Parallel shield units serving the array.
    pub shield_count: u32,
    /// Cycles one shield group spends checking a tile-group.
    pub shield_window: u64,
    /// Cycles a tile-group occupies the array.
    pub array_window: u64,
    /// Extra reduction-tree passes when the column count exceeds what one
    /// pass of width-J adders can fold.
    pub depth_term: u32,
    /// Adder-tree levels walked per pass; never exceeds J.
    pub tree_depth_per_stage: u32,
}

fn ceil_div(a: u64, b: u64) -> u64 {
    a.div_ceil(b)
}

fn ceil_log2(x: u64) -> u32 {
    if x <= 1 {
        0
    } else {
        64 - (x - 1).leading_zeros()
    }
}

/// Extra reduction passes: floor(log2(ceil(IJ / 2^J)) / J), clamped at zero.
/// Integer-only because floor(log2(x)/J) == floor(floor(log2 x)/J).
fn depth_term(i: u64, j: u64) -> u32 {
    if j >= 63 {
        return 0;
    }
    let folded = ceil_div(i * j, 1 << j);
    if folded <= 1 {
        0
    } else {
        folded.ilog2() / j as u32
    }
}

/// Size the shield group so checking keeps pace with the array.
///
/// The per-unit work for a tile-group is 2*N*N MACs (row and column checks);
/// splitting it across K units and adding the compare-and-reduce tail gives
/// the shield window; K is the smallest count whose window fits inside the
/// array occupancy window.
pub fn configure_shields(geometry: &ArrayGeometry) -> Result<ShieldConfig> {
    let i = geometry.tiles_per_row as u64;
    let j = geometry.pes_per_tile_row as u64;
    let ij = i * j;
    let l_sa = geometry.array_window();
    let depth = depth_term(i, j) as u64;

    let denom = (ij + 2 * i) as i64 - 3 - depth as i64;
    if denom <= 0 {
        return Err(SimError::Config(format!(
            "array {i}x{j} tiles is too small for a keep-up shield group: \
             the array window leaves no slack"
        )));
    }
    let k = ceil_div(2 * ij, denom as u64);
    let shield_window = ceil_div(2 * ij, k) + 1 + (depth + 1);
    debug_assert!(
        shield_window <= l_sa,
        "sizing must keep the shield inside the array window"
    );

    // Reduction-tree depth actually walked per pass.
    let total_levels = ceil_log2(ij);
    let stages = if total_levels == 0 {
        1
    } else {
        ceil_div(total_levels as u64, j) as u32
    };
    let per_stage = if total_levels == 0 {
        0
    } else {
        total_levels.div_ceil(stages)
    };
    assert!(
        per_stage as u64 <= j,
        "per-pass tree depth {per_stage} exceeds adder rank {j}"
    );

    Ok(ShieldConfig {
        geometry: *geometry,
        shield_count: k as u32,
        shield_window,
        array_window: l_sa,
        depth_term: depth as u32,
        tree_depth_per_stage: per_stage,
    })
}

/// Cycle counts for the four pipeline stages of one tile-group under shield
/// protection, plus totals over a run of `n_groups` back-to-back groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub n_groups: u64,
    /// Preload, stream, check, reduce-and-compare.
    pub stage_cycles: [u64; 4],
    pub protected_cycles: u64,
    pub baseline_cycles: u64,
    pub slowdown: f64,
    /// Cycles from a fault entering the array to its verdict.
    pub worst_detection_latency: u64,
}

/// Timing of a protected run: the check stage overlaps the next group's
/// stream, so only the longer of the two paces the steady state; the reduce
/// stage drains once at the end.
pub fn pipeline_schedule(n_groups: u64, config: &ShieldConfig) -> Result<TimingReport> {
    if n_groups == 0 {
        return Err(SimError::Config("schedule needs at least one group".into()));
    }
    let i = config.geometry.tiles_per_row as u64;
    let j = config.geometry.pes_per_tile_row as u64;
    let ij = i * j;
    let s1 = ij;
    let s2 = ij;
    let s3 = config.array_window.max(config.shield_window);
    let s4 = ceil_div(ij, config.shield_count as u64) + (config.depth_term as u64 + 1) + 1;
    let protected = s1 + n_groups * (s2 + s3) + s4;
    let baseline = n_groups * (s2 + config.array_window);
    Ok(TimingReport {
        n_groups,
        stage_cycles: [s1, s2, s3, s4],
        protected_cycles: protected,
        baseline_cycles: baseline,
        slowdown: protected as f64 / baseline as f64,
        worst_detection_latency: s3 + s4,
    })
}
