//! Dense R x C matrices of raw bit patterns. Scratchpad-resident operands
//! carry dtype-width elements; accumulator-resident blocks carry 32-bit
//! partial sums interpreted as i32 (INT8 pipelines) or f32 (float pipelines).

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::numerics::{DType, Word};

/// Element layout of a block: operand words at dtype width, or
/// accumulator-width values for the given pipeline dtype.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ElemKind {
    Data(DType),
    Acc(DType),
}

impl ElemKind {
    pub fn width(self) -> u32 {
        match self {
            ElemKind::Data(d) => d.width(),
            ElemKind::Acc(d) => d.accumulator_width(),
        }
    }

    pub fn dtype(self) -> DType {
        match self {
            ElemKind::Data(d) | ElemKind::Acc(d) => d,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    rows: usize,
    cols: usize,
    kind: ElemKind,
    bits: Vec<u32>,
}

impl Block {
    pub fn zeroed(rows: usize, cols: usize, kind: ElemKind) -> Block {
        Block {
            rows,
            cols,
            kind,
            bits: vec![0; rows * cols],
        }
    }

    pub fn from_words(rows: usize, cols: usize, words: &[Word]) -> Result<Block> {
        if words.len() != rows * cols || words.is_empty() {
            return Err(SimError::Shape(format!(
                "expected {rows}x{cols} words, got {}",
                words.len()
            )));
        }
        let dtype = words[0].dtype();
        if words.iter().any(|w| w.dtype() != dtype) {
            return Err(SimError::Shape("mixed dtypes in block".into()));
        }
        Ok(Block {
            rows,
            cols,
            kind: ElemKind::Data(dtype),
            bits: words.iter().map(|w| w.bits()).collect(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn kind(&self) -> ElemKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    fn index(&self, r: usize, c: usize) -> Result<usize> {
        if r >= self.rows {
            return Err(SimError::Index {
                what: "block row",
                index: r,
                limit: self.rows,
            });
        }
        if c >= self.cols {
            return Err(SimError::Index {
                what: "block col",
                index: c,
                limit: self.cols,
            });
        }
        Ok(r * self.cols + c)
    }

    pub fn get(&self, r: usize, c: usize) -> u32 {
        self.bits[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, bits: u32) -> Result<()> {
        let width = self.kind.width();
        if width < 32 && bits >> width != 0 {
            return Err(SimError::Range {
                what: "element bits beyond width",
                value: format!("{bits:#x}"),
            });
        }
        let i = self.index(r, c)?;
        self.bits[i] = bits;
        Ok(())
    }

    /// Flips one stored bit; returns the new pattern.
    pub fn flip(&mut self, r: usize, c: usize, bit: u32) -> Result<u32> {
        if bit >= self.kind.width() {
            return Err(SimError::Index {
                what: "element bit",
                index: bit as usize,
                limit: self.kind.width() as usize,
            });
        }
        let i = self.index(r, c)?;
        self.bits[i] ^= 1 << bit;
        Ok(self.bits[i])
    }

    /// Dtype-width word view of a data element.
    pub fn word(&self, r: usize, c: usize) -> Word {
        debug_assert!(matches!(self.kind, ElemKind::Data(_)));
        Word::from_bits(self.get(r, c), self.kind.dtype()).expect("block invariant")
    }

    /// Numeric view as an f32 (float operands or float accumulators).
    pub fn value_f32(&self, r: usize, c: usize) -> f32 {
        match self.kind {
            ElemKind::Data(_) => self.word(r, c).as_f32(),
            ElemKind::Acc(_) => f32::from_bits(self.get(r, c)),
        }
    }

    /// Numeric view as an i32 (INT8 operands sign-extend; INT8 accumulators
    /// reinterpret the 32 stored bits).
    pub fn value_i32(&self, r: usize, c: usize) -> i32 {
        match self.kind {
            ElemKind::Data(DType::Int8) => self.word(r, c).as_i8() as i32,
            ElemKind::Acc(_) => self.get(r, c) as i32,
            _ => panic!("integer view of float operand"),
        }
    }

    pub fn set_i32(&mut self, r: usize, c: usize, v: i32) -> Result<()> {
        match self.kind {
            ElemKind::Acc(_) => self.set(r, c, v as u32),
            ElemKind::Data(DType::Int8) => self.set(r, c, (v as i8 as u8) as u32),
            _ => Err(SimError::Unsupported("integer store to float block".into())),
        }
    }

    pub fn set_f32(&mut self, r: usize, c: usize, v: f32) -> Result<()> {
        match self.kind {
            ElemKind::Acc(_) => self.set(r, c, v.to_bits()),
            ElemKind::Data(DType::Fp32) => self.set(r, c, v.to_bits()),
            ElemKind::Data(DType::Bf16) => self.set(r, c, crate::numerics::f32_to_bf16(v) as u32),
            _ => Err(SimError::Unsupported("float store to int block".into())),
        }
    }

    /// Copies a rectangular sub-block.
    pub fn slice(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Result<Block> {
        if r0 + rows > self.rows || c0 + cols > self.cols || rows == 0 || cols == 0 {
            return Err(SimError::Shape(format!(
                "sub-block {rows}x{cols} at ({r0},{c0}) exceeds {}x{}",
                self.rows, self.cols
            )));
        }
        let mut out = Block::zeroed(rows, cols, self.kind);
        for r in 0..rows {
            for c in 0..cols {
                out.bits[r * cols + c] = self.get(r0 + r, c0 + c);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{encode_word, WordValue};

    #[test]
    fn words_round_trip_through_blocks() {
        let words: Vec<Word> = [-3i64, 7, 0, -128]
            .iter()
            .map(|&v| encode_word(WordValue::Int(v), DType::Int8).unwrap())
            .collect();
        let b = Block::from_words(2, 2, &words).unwrap();
        assert_eq!(b.value_i32(0, 0), -3);
        assert_eq!(b.value_i32(1, 1), -128);
        assert_eq!(b.word(0, 1).bits(), 0x07);
    }

    #[test]
    fn acc_blocks_hold_signed_32_bit_values() {
        let mut b = Block::zeroed(1, 2, ElemKind::Acc(DType::Int8));
        b.set_i32(0, 0, -5).unwrap();
        b.set_i32(0, 1, i32::MAX).unwrap();
        assert_eq!(b.value_i32(0, 0), -5);
        assert_eq!(b.value_i32(0, 1), i32::MAX);
        assert_eq!(b.kind().width(), 32);
    }

    #[test]
    fn flip_and_bounds() {
        let mut b = Block::zeroed(2, 2, ElemKind::Data(DType::Int8));
        assert_eq!(b.flip(0, 0, 2).unwrap(), 0b100);
        assert!(b.flip(0, 0, 8).is_err());
        assert!(b.flip(2, 0, 0).is_err());
        assert!(b.set(0, 0, 0x100).is_err());
    }

    #[test]
    fn slice_copies_the_window() {
        let mut b = Block::zeroed(3, 3, ElemKind::Data(DType::Int8));
        for r in 0..3 {
            for c in 0..3 {
                b.set(r, c, (r * 3 + c) as u32).unwrap();
            }
        }
        let s = b.slice(1, 1, 2, 2).unwrap();
        assert_eq!(s.get(0, 0), 4);
        assert_eq!(s.get(1, 1), 8);
        assert!(b.slice(2, 2, 2, 2).is_err());
    }
}
