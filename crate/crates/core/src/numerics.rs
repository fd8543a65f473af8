//! Word-level numeric formats used across the simulator: INT8, FP32 and
//! BF16 payloads, bit-exact encode/decode, single-bit flips, and the
//! protection masks that decide which bit positions the memory checksums
//! cover.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Element type of a data word. Accumulation always happens at 32 bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DType {
    Int8,
    Fp32,
    Bf16,
}

impl DType {
    /// Storage width of one element in bits.
    pub fn width(self) -> u32 {
        match self {
            DType::Int8 => 8,
            DType::Fp32 => 32,
            DType::Bf16 => 16,
        }
    }

    /// Width of the accumulator lane carrying partial sums for this type.
    pub fn accumulator_width(self) -> u32 {
        32
    }

    /// True for the floating-point payloads.
    pub fn is_float(self) -> bool {
        !matches!(self, DType::Int8)
    }
}

/// A fixed-width bit pattern plus its interpretation. Bits at and above
/// `dtype.width()` are always zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Word {
    bits: u32,
    dtype: DType,
}

/// Value carried by a word: integers for INT8, reals for the float types.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WordValue {
    Int(i64),
    Real(f64),
}

impl Word {
    /// Wraps a raw pattern. High bits outside the dtype width must be zero.
    pub fn from_bits(bits: u32, dtype: DType) -> Result<Word> {
        let width = dtype.width();
        if width < 32 && (bits >> width) != 0 {
            return Err(SimError::Range {
                what: "word bits beyond dtype width",
                value: format!("{bits:#x}"),
            });
        }
        Ok(Word { bits, dtype })
    }

    pub fn bits(self) -> u32 {
        self.bits
    }

    pub fn dtype(self) -> DType {
        self.dtype
    }

    /// INT8 payload, sign extended.
    pub fn as_i8(self) -> i8 {
        debug_assert_eq!(self.dtype, DType::Int8);
        self.bits as u8 as i8
    }

    /// Float payload widened to f32 (BF16 widens exactly).
    pub fn as_f32(self) -> f32 {
        match self.dtype {
            DType::Fp32 => f32::from_bits(self.bits),
            DType::Bf16 => bf16_to_f32(self.bits as u16),
            DType::Int8 => self.as_i8() as f32,
        }
    }
}

/// Encodes a value into a word. INT8 takes integers in −128..=127; the float
/// types take finite reals (BF16 rounds to nearest even).
pub fn encode_word(value: WordValue, dtype: DType) -> Result<Word> {
    match (dtype, value) {
        (DType::Int8, WordValue::Int(v)) => {
            if !(-128..=127).contains(&v) {
                return Err(SimError::Range {
                    what: "Int8 value",
                    value: v.to_string(),
                });
            }
            Ok(Word {
                bits: (v as i8 as u8) as u32,
                dtype,
            })
        }
        (DType::Int8, WordValue::Real(v)) => {
            if v.fract() != 0.0 || !(-128.0..=127.0).contains(&v) {
                return Err(SimError::Range {
                    what: "Int8 value",
                    value: v.to_string(),
                });
            }
            encode_word(WordValue::Int(v as i64), dtype)
        }
        (DType::Fp32 | DType::Bf16, value) => {
            let v = match value {
                WordValue::Int(i) => i as f64,
                WordValue::Real(r) => r,
            };
            if !v.is_finite() {
                return Err(SimError::Range {
                    what: "float value",
                    value: v.to_string(),
                });
            }
            let f = v as f32;
            if f.is_infinite() {
                return Err(SimError::Range {
                    what: "float value",
                    value: v.to_string(),
                });
            }
            let bits = match dtype {
                DType::Fp32 => f.to_bits(),
                DType::Bf16 => f32_to_bf16(f) as u32,
                DType::Int8 => unreachable!(),
            };
            Ok(Word { bits, dtype })
        }
    }
}

/// Decodes a word back into a value. NaN and infinity patterns produced by
/// bit flips are surfaced verbatim.
pub fn decode_word(word: Word) -> WordValue {
    match word.dtype {
        DType::Int8 => WordValue::Int(word.as_i8() as i64),
        DType::Fp32 | DType::Bf16 => WordValue::Real(word.as_f32() as f64),
    }
}

/// Flips one bit of the word. `position` must lie below the dtype width.
pub fn flip_bit(word: Word, position: u32) -> Result<Word> {
    if position >= word.dtype.width() {
        return Err(SimError::Index {
            what: "bit position",
            index: position as usize,
            limit: word.dtype.width() as usize,
        });
    }
    Ok(Word {
        bits: word.bits ^ (1 << position),
        dtype: word.dtype,
    })
}

/// Which bit positions of a word the checksums guard.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Protection {
    /// Every bit of the word.
    Full,
    /// The positions whose flips dominate accuracy loss: all eight INT8
    /// bits, the top nine FP32 bits (sign and exponent), the top four BF16
    /// bits.
    TopSensitive,
    /// Caller-supplied bitset, validated against the dtype width.
    Custom(u32),
}

/// A set of guarded bit positions within a word of a given dtype.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitMask {
    pub mask: u32,
    pub dtype: DType,
}

impl BitMask {
    pub fn covers(self, position: u32) -> bool {
        position < 32 && (self.mask >> position) & 1 == 1
    }
}

/// Builds the mask of guarded bit positions for a dtype and policy.
pub fn protection_mask(dtype: DType, protection: Protection) -> Result<BitMask> {
    let width = dtype.width();
    let all = if width == 32 {
        u32::MAX
    } else {
        (1 << width) - 1
    };
    let mask = match protection {
        Protection::Full => all,
        Protection::TopSensitive => match dtype {
            DType::Int8 => 0xFF,
            DType::Fp32 => 0xFF80_0000,
            DType::Bf16 => 0xF000,
        },
        Protection::Custom(m) => {
            if m & !all != 0 {
                return Err(SimError::Range {
                    what: "custom mask bits beyond dtype width",
                    value: format!("{m:#x}"),
                });
            }
            m
        }
    };
    Ok(BitMask { mask, dtype })
}

/// Widens a BF16 pattern to f32; exact for every input.
pub fn bf16_to_f32(bits: u16) -> f32 {
    f32::from_bits((bits as u32) << 16)
}

/// Narrows an f32 to BF16 with round-to-nearest-even. NaN payloads are kept
/// quiet rather than rounded.
pub fn f32_to_bf16(value: f32) -> u16 {
    let bits = value.to_bits();
    if value.is_nan() {
        return ((bits >> 16) as u16) | 0x0040;
    }
    let upper = bits >> 16;
    let lower = bits & 0xFFFF;
    let round = match lower.cmp(&0x8000) {
        std::cmp::Ordering::Greater => 1,
        std::cmp::Ordering::Equal => upper & 1,
        std::cmp::Ordering::Less => 0,
    };
    (upper + round) as u16
}
