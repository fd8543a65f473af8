//! Functional model of the systolic array datapath.
//!
//! The model is cycle-faithful where faults care about order: operands are
//! consumed in traversal order, partial sums pass through (WS) or sit in (OS)
//! each PE, and a faulty PE corrupts both its resident state and the operands
//! it forwards downstream. Everything else is folded into plain loops.

use serde::{Deserialize, Serialize};

use crate::block::{Block, ElemKind};
use crate::error::{Result, SimError};
use crate::numerics::DType;

use super::{ArrayGeometry, Dataflow};

/// Operand stream entering the array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Operand {
    A,
    B,
    D,
}

/// One-shot bit flip on an operand element as it crosses the array boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputFlip {
    pub operand: Operand,
    pub row: usize,
    pub col: usize,
    pub bit: u32,
}

/// Stuck bit on an operand's input register; reapplied every pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputStuck {
    pub operand: Operand,
    pub row: usize,
    pub col: usize,
    pub bit: u32,
    pub stuck_one: bool,
}

/// One-shot flip of the partial-sum register in PE (pe_row, pe_col) during a
/// single traversal. Which output element it lands in depends on dataflow:
/// under WS traversal selects the A row flowing past, under OS it selects the
/// MAC step of the resident output cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PsumFlip {
    pub pe_row: usize,
    pub pe_col: usize,
    pub traversal: usize,
    pub bit: u32,
}

/// Permanently stuck bit in a PE's partial-sum register.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeStuck {
    pub pe_row: usize,
    pub pe_col: usize,
    pub bit: u32,
    pub stuck_one: bool,
}

/// All faults active during one tile-group pass.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayFaults {
    pub input_flips: Vec<InputFlip>,
    pub input_stuck: Vec<InputStuck>,
    pub psum_flips: Vec<PsumFlip>,
    pub pe_stuck: Vec<PeStuck>,
}

impl ArrayFaults {
    pub fn is_empty(&self) -> bool {
        self.input_flips.is_empty()
            && self.input_stuck.is_empty()
            && self.psum_flips.is_empty()
            && self.pe_stuck.is_empty()
    }
}

fn stuck_apply(bits: u32, bit: u32, stuck_one: bool) -> u32 {
    if stuck_one {
        bits | (1 << bit)
    } else {
        bits & !(1 << bit)
    }
}

/// Snapshot of an operand block with boundary faults folded in.
fn corrupted_operand(block: &Block, operand: Operand, faults: &ArrayFaults) -> Result<Block> {
    let mut out = block.clone();
    let width = out.kind().width();
    for f in &faults.input_flips {
        if f.operand != operand {
            continue;
        }
        out.flip(f.row, f.col, f.bit)?;
    }
    for f in &faults.input_stuck {
        if f.operand != operand {
            continue;
        }
        if f.bit >= width {
            return Err(SimError::Index {
                what: "input stuck bit",
                index: f.bit as usize,
                limit: width as usize,
            });
        }
        if f.row >= out.rows() || f.col >= out.cols() {
            return Err(SimError::Index {
                what: "input stuck element",
                index: f.row * out.cols() + f.col,
                limit: out.len(),
            });
        }
        let bits = out.get(f.row, f.col);
        out.set(f.row, f.col, stuck_apply(bits, f.bit, f.stuck_one))?;
    }
    Ok(out)
}

fn check_shapes(a: &Block, b: &Block, d: &Block, geometry: &ArrayGeometry) -> Result<DType> {
    let n = geometry.n();
    let dt = match a.kind() {
        ElemKind::Data(dt) => dt,
        ElemKind::Acc(_) => return Err(SimError::Shape("operand A must be a data block".into())),
    };
    if b.kind() != ElemKind::Data(dt) {
        return Err(SimError::Shape(
            "operand B dtype must match operand A".into(),
        ));
    }
    if d.kind() != ElemKind::Acc(dt) {
        return Err(SimError::Shape(
            "bias D must be an accumulator block of the operand dtype".into(),
        ));
    }
    for (name, blk) in [("A", a), ("B", b), ("D", d)] {
        if blk.rows() != n || blk.cols() != n {
            return Err(SimError::Shape(format!(
                "operand {name} is {}x{} but the array computes {n}x{n} tile-groups",
                blk.rows(),
                blk.cols()
            )));
        }
    }
    Ok(dt)
}

/// Run one tile-group GEMM, C = A * B + D, through the fault-annotated array.
///
/// Integer accumulation wraps in 32 bits like the hardware accumulator, so
/// the shield identity stays exact even on overflow. Floats accumulate in
/// f32; Bf16 operands are widened on entry.
pub fn gemm(
    a: &Block,
    b: &Block,
    d: &Block,
    geometry: &ArrayGeometry,
    faults: &ArrayFaults,
) -> Result<Block> {
    let dt = check_shapes(a, b, d, geometry)?;
    let n = geometry.n();
    for f in &faults.psum_flips {
        if f.pe_row >= n || f.pe_col >= n || f.traversal >= n || f.bit >= 32 {
            return Err(SimError::Config(format!(
                "psum flip out of range for a {n}x{n} array: {f:?}"
            )));
        }
    }
    for f in &faults.pe_stuck {
        if f.pe_row >= n || f.pe_col >= n || f.bit >= 32 {
            return Err(SimError::Config(format!(
                "stuck PE out of range for a {n}x{n} array: {f:?}"
            )));
        }
    }

    let a_eff = corrupted_operand(a, Operand::A, faults)?;
    let b_eff = corrupted_operand(b, Operand::B, faults)?;
    let d_eff = corrupted_operand(d, Operand::D, faults)?;

    match dt {
        DType::Int8 => gemm_int(&a_eff, &b_eff, &d_eff, geometry, faults),
        DType::Fp32 | DType::Bf16 => gemm_float(&a_eff, &b_eff, &d_eff, geometry, faults),
    }
}

/// Applies the stuck bits of PE (pe_row, pe_col) to an operand word passing
/// through it. The forwarding register only holds `width` bits, so higher
/// stuck bits cannot touch the operand.
fn forwarded_stuck(
    faults: &ArrayFaults,
    pe_row: usize,
    pe_col: usize,
    width: u32,
    mut bits: u32,
) -> u32 {
    for f in &faults.pe_stuck {
        if f.pe_row == pe_row && f.pe_col == pe_col && f.bit < width {
            bits = stuck_apply(bits, f.bit, f.stuck_one);
        }
    }
    bits
}

fn gemm_int(
    a: &Block,
    b: &Block,
    d: &Block,
    geometry: &ArrayGeometry,
    faults: &ArrayFaults,
) -> Result<Block> {
    let n = geometry.n();
    let width = a.kind().width();
    let mut c = Block::zeroed(n, n, d.kind());
    match geometry.dataflow {
        Dataflow::WS => {
            // B[k][j] is resident in PE (k, j); A row i flows left to right,
            // partial sums flow top to bottom through column j.
            for j in 0..n {
                for i in 0..n {
                    let mut acc: i32 = 0;
                    for k in 0..n {
                        // A[i][k] has crossed PEs (k, 0..j) on its way here.
                        let mut a_bits = a.get(i, k);
                        for q in 0..j {
                            a_bits = forwarded_stuck(faults, k, q, width, a_bits);
                        }
                        let av = sign_extend8(a_bits);
                        let bv = sign_extend8(b.get(k, j));
                        acc = acc.wrapping_add(av.wrapping_mul(bv));
                        acc = psum_faults_int(acc, faults, k, j, i);
                    }
                    let sum = acc.wrapping_add(d.value_i32(i, j));
                    c.set_i32(i, j, sum)?;
                }
            }
        }
        Dataflow::OS => {
            // C[i][j] accumulates in PE (i, j); A row i flows rightward, B
            // column j flows downward, each crossing the PEs before (i, j).
            for i in 0..n {
                for j in 0..n {
                    let mut acc: i32 = d.value_i32(i, j);
                    for k in 0..n {
                        let mut a_bits = a.get(i, k);
                        for q in 0..j {
                            a_bits = forwarded_stuck(faults, i, q, width, a_bits);
                        }
                        let mut b_bits = b.get(k, j);
                        for p in 0..i {
                            b_bits = forwarded_stuck(faults, p, j, width, b_bits);
                        }
                        let av = sign_extend8(a_bits);
                        let bv = sign_extend8(b_bits);
                        acc = acc.wrapping_add(av.wrapping_mul(bv));
                        acc = psum_faults_int(acc, faults, i, j, k);
                    }
                    c.set_i32(i, j, acc)?;
                }
            }
        }
    }
    Ok(c)
}

fn sign_extend8(bits: u32) -> i32 {
    (bits as u8) as i8 as i32
}

fn psum_faults_int(
    acc: i32,
    faults: &ArrayFaults,
    pe_row: usize,
    pe_col: usize,
    step: usize,
) -> i32 {
    let mut bits = acc as u32;
    for f in &faults.pe_stuck {
        if f.pe_row == pe_row && f.pe_col == pe_col {
            bits = stuck_apply(bits, f.bit, f.stuck_one);
        }
    }
    for f in &faults.psum_flips {
        if f.pe_row == pe_row && f.pe_col == pe_col && f.traversal == step {
            bits ^= 1 << f.bit;
        }
    }
    bits as i32
}

fn psum_faults_float(
    acc: f32,
    faults: &ArrayFaults,
    pe_row: usize,
    pe_col: usize,
    step: usize,
) -> f32 {
    let mut bits = acc.to_bits();
    for f in &faults.pe_stuck {
        if f.pe_row == pe_row && f.pe_col == pe_col {
            bits = stuck_apply(bits, f.bit, f.stuck_one);
        }
    }
    for f in &faults.psum_flips {
        if f.pe_row == pe_row && f.pe_col == pe_col && f.traversal == step {
            bits ^= 1 << f.bit;
        }
    }
    f32::from_bits(bits)
}

fn gemm_float(
    a: &Block,
    b: &Block,
    d: &Block,
    geometry: &ArrayGeometry,
    faults: &ArrayFaults,
) -> Result<Block> {
    let n = geometry.n();
    let width = a.kind().width();
    let mut c = Block::zeroed(n, n, d.kind());
    match geometry.dataflow {
        Dataflow::WS => {
            for j in 0..n {
                for i in 0..n {
                    let mut acc: f32 = 0.0;
                    for k in 0..n {
                        let mut a_bits = a.get(i, k);
                        for q in 0..j {
                            a_bits = forwarded_stuck(faults, k, q, width, a_bits);
                        }
                        let av = data_f32(a, a_bits);
                        let bv = b.value_f32(k, j);
                        acc += av * bv;
                        acc = psum_faults_float(acc, faults, k, j, i);
                    }
                    c.set_f32(i, j, acc + d.value_f32(i, j))?;
                }
            }
        }
        Dataflow::OS => {
            for i in 0..n {
                for j in 0..n {
                    let mut acc: f32 = d.value_f32(i, j);
                    for k in 0..n {
                        let mut a_bits = a.get(i, k);
                        for q in 0..j {
                            a_bits = forwarded_stuck(faults, i, q, width, a_bits);
                        }
                        let mut b_bits = b.get(k, j);
                        for p in 0..i {
                            b_bits = forwarded_stuck(faults, p, j, width, b_bits);
                        }
                        acc += data_f32(a, a_bits) * data_f32(b, b_bits);
                        acc = psum_faults_float(acc, faults, i, j, k);
                    }
                    c.set_f32(i, j, acc)?;
                }
            }
        }
    }
    Ok(c)
}

fn data_f32(block: &Block, bits: u32) -> f32 {
    match block.kind() {
        ElemKind::Data(DType::Bf16) => crate::numerics::bf16_to_f32(bits as u16),
        _ => f32::from_bits(bits),
    }
}

/// Stream a block through the on-chip transposer (used when the A operand
/// must enter the array column-major).
pub fn transpose_stream(block: &Block) -> Result<Block> {
    let mut out = Block::zeroed(block.cols(), block.rows(), block.kind());
    for r in 0..block.rows() {
        for c in 0..block.cols() {
            out.set(c, r, block.get(r, c))?;
        }
    }
    Ok(out)
}
