//! SEC-DED protection for configuration and status registers: an extended
//! Hamming code with odd parity. Partial parities sit at the power-of-two
//! codeword positions, a global parity bit sits at position 0, and the
//! syndrome of a single flip equals the flipped position.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Check bits added to an `alpha`-bit register.
pub fn check_width(alpha: u32) -> u32 {
    ceil_log2(alpha + 1) + 1
}

fn ceil_log2(x: u32) -> u32 {
    if x <= 1 {
        0
    } else {
        32 - (x - 1).leading_zeros()
    }
}

/// The cost formula holds whenever the partial parities can address every
/// codeword position, i.e. 2^r >= alpha + r + 1 with r = ceil(log2(alpha+1)).
/// That is true for all power-of-two register widths; the gaps (for example
/// alpha in 12..=15) cannot carry a SEC-DED code at this cost and are
/// rejected.
pub fn alpha_supported(alpha: u32) -> bool {
    if alpha == 0 || alpha > 64 {
        return false;
    }
    let r = check_width(alpha) - 1;
    (1u64 << r) >= (alpha + r + 1) as u64
}

/// An encoded register: `alpha` data bits plus `check_width(alpha)` parity
/// bits, at codeword positions 0..=alpha+r.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Codeword {
    bits: u128,
    alpha: u32,
}

/// Outcome of decoding a codeword.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecodeStatus {
    Clean,
    /// Single error corrected at this codeword position (0 is the global
    /// parity bit; other positions may be data or partial parity bits).
    Corrected(u32),
    /// Two flips detected; data is returned unmodified.
    DoubleError,
}

impl Codeword {
    pub fn alpha(self) -> u32 {
        self.alpha
    }

    /// Total codeword width including all parity bits.
    pub fn total_width(self) -> u32 {
        self.alpha + check_width(self.alpha)
    }

    pub fn bits(self) -> u128 {
        self.bits
    }

    /// Raw mutation hook for fault injection; bits beyond the codeword
    /// width are discarded.
    pub fn set_bits(&mut self, bits: u128) {
        let mask = (1u128 << self.total_width()) - 1;
        self.bits = bits & mask;
    }

    pub fn flip(&mut self, position: u32) -> Result<()> {
        if position >= self.total_width() {
            return Err(SimError::Index {
                what: "codeword position",
                index: position as usize,
                limit: self.total_width() as usize,
            });
        }
        self.bits ^= 1u128 << position;
        Ok(())
    }
}

fn data_positions(alpha: u32) -> impl Iterator<Item = u32> {
    let r = check_width(alpha) - 1;
    let n = alpha + r;
    (1..=n).filter(|p| !p.is_power_of_two())
}

/// Encodes `data` (low `alpha` bits) into a SEC-DED codeword.
pub fn secded_encode(data: u64, alpha: u32) -> Result<Codeword> {
    if !alpha_supported(alpha) {
        return Err(SimError::Config(format!(
            "unsupported register width {alpha}; SEC-DED layout needs 2^r >= alpha+r+1"
        )));
    }
    if alpha < 64 && data >> alpha != 0 {
        return Err(SimError::Range {
            what: "register value beyond width",
            value: format!("{data:#x}"),
        });
    }
    let r = check_width(alpha) - 1;
    let n = alpha + r;
    let mut bits = 0u128;
    for (i, pos) in data_positions(alpha).enumerate() {
        if (data >> i) & 1 == 1 {
            bits |= 1u128 << pos;
        }
    }
    // Odd parity per group: parity bit at 2^i makes its group XOR to 1.
    for i in 0..r {
        let mut xor = 0u32;
        for p in 1..=n {
            if (p >> i) & 1 == 1 {
                xor ^= ((bits >> p) & 1) as u32;
            }
        }
        if xor == 0 {
            bits |= 1u128 << (1u32 << i);
        }
    }
    // Odd global parity over the whole codeword including itself.
    let mut xor = 0u32;
    for p in 1..=n {
        xor ^= ((bits >> p) & 1) as u32;
    }
    if xor == 0 {
        bits |= 1u128;
    }
    Ok(Codeword { bits, alpha })
}

fn extract_data(bits: u128, alpha: u32) -> u64 {
    let mut data = 0u64;
    for (i, pos) in data_positions(alpha).enumerate() {
        if (bits >> pos) & 1 == 1 {
            data |= 1u64 << i;
        }
    }
    data
}

/// Decodes a codeword: corrects single flips (returning the flipped
/// position), flags double flips without touching the data.
pub fn secded_decode(cw: &Codeword) -> (u64, DecodeStatus) {
    let alpha = cw.alpha;
    let r = check_width(alpha) - 1;
    let n = alpha + r;
    let mut syndrome = 0u32;
    for i in 0..r {
        let mut xor = 0u32;
        for p in 1..=n {
            if (p >> i) & 1 == 1 {
                xor ^= ((cw.bits >> p) & 1) as u32;
            }
        }
        if xor == 0 {
            syndrome |= 1 << i;
        }
    }
    let mut global = 0u32;
    for p in 0..=n {
        global ^= ((cw.bits >> p) & 1) as u32;
    }
    let global_ok = global == 1;
    match (syndrome, global_ok) {
        (0, true) => (extract_data(cw.bits, alpha), DecodeStatus::Clean),
        (0, false) => (extract_data(cw.bits, alpha), DecodeStatus::Corrected(0)),
        (s, false) if s <= n => {
            let fixed = cw.bits ^ (1u128 << s);
            (extract_data(fixed, alpha), DecodeStatus::Corrected(s))
        }
        // Syndrome set with intact global parity (or pointing outside the
        // codeword): an even number of flips. No correction is attempted.
        _ => (extract_data(cw.bits, alpha), DecodeStatus::DoubleError),
    }
}

/// A bank of ECC-protected registers keyed by id.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RegisterFile {
    regs: BTreeMap<u32, Codeword>,
}

impl RegisterFile {
    pub fn new() -> Self {
        Self::default()
    }

    /// Declares a register and initialises it to zero.
    pub fn define(&mut self, id: u32, alpha: u32) -> Result<()> {
        let cw = secded_encode(0, alpha)?;
        self.regs.insert(id, cw);
        Ok(())
    }

    pub fn ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.regs.keys().copied()
    }

    fn slot_mut(&mut self, id: u32) -> Result<&mut Codeword> {
        self.regs.get_mut(&id).ok_or(SimError::Lookup {
            what: "register",
            key: id.to_string(),
        })
    }

    pub fn codeword(&self, id: u32) -> Result<&Codeword> {
        self.regs.get(&id).ok_or(SimError::Lookup {
            what: "register",
            key: id.to_string(),
        })
    }

    /// Encodes and stores a value.
    pub fn write(&mut self, id: u32, value: u64) -> Result<()> {
        let alpha = self.codeword(id)?.alpha();
        let cw = secded_encode(value, alpha)?;
        *self.slot_mut(id)? = cw;
        Ok(())
    }

    /// Decodes a register. A corrected read scrubs the stored codeword so a
    /// transient flip cannot accumulate into a later double error.
    pub fn read(&mut self, id: u32) -> Result<(u64, DecodeStatus)> {
        let cw = *self.codeword(id)?;
        let (data, status) = secded_decode(&cw);
        if let DecodeStatus::Corrected(_) = status {
            *self.slot_mut(id)? = secded_encode(data, cw.alpha())?;
        }
        Ok((data, status))
    }

    /// Fault-injection hook: mutate the stored codeword bits in place.
    pub fn corrupt(&mut self, id: u32, f: impl FnOnce(u128) -> u128) -> Result<()> {
        let slot = self.slot_mut(id)?;
        slot.set_bits(f(slot.bits()));
        Ok(())
    }
}
