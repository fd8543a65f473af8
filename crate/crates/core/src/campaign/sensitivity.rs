//! Bit-position sensitivity sweep over the float classifier's parameters.
//!
//! Every inference draws an upset count from the full parameter-word
//! exposure (words x 32 bits at the per-bit rate); the position class under
//! study decides where inside each struck word the flip lands. Matching
//! arrival counts across classes isolates positional vulnerability from
//! sheer bit-count differences, which is the comparison the per-class
//! accuracy curves are meant to make.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

use crate::error::{Result, SimError};

use super::workload::{Dataset, MlpParams};

/// Where in an fp32 word a flip may land.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitClass {
    Sign,
    /// Top four exponent bits; flips here rescale a value by 2^16 or more.
    ExponentHigh,
    Mantissa,
    /// Sign or high exponent: the jointly sensitive top of the word, the
    /// region the protection masks single out.
    SignExponent,
}

impl BitClass {
    pub const ALL: [BitClass; 4] = [
        BitClass::Sign,
        BitClass::ExponentHigh,
        BitClass::Mantissa,
        BitClass::SignExponent,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BitClass::Sign => "sign",
            BitClass::ExponentHigh => "exponent_high",
            BitClass::Mantissa => "mantissa",
            BitClass::SignExponent => "sign_exponent",
        }
    }

    /// Draws a bit position inside this class.
    pub fn pick_bit(self, rng: &mut ChaCha8Rng) -> u32 {
        match self {
            BitClass::Sign => 31,
            BitClass::ExponentHigh => 27 + rng.random_range(0..4u32),
            BitClass::Mantissa => rng.random_range(0..23u32),
            BitClass::SignExponent => rng.random_range(27..=31u32),
        }
    }
}

/// Accuracy at one (class, rate) grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityRow {
    pub class: &'static str,
    pub rate: f64,
    pub accuracy: f64,
    /// Percentage points below the fault-free baseline.
    pub drop_points: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityTable {
    pub baseline_accuracy: f64,
    pub parameter_words: usize,
    pub rows: Vec<SensitivityRow>,
}

impl SensitivityTable {
    pub fn accuracy_at(&self, class: BitClass, rate: f64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.class == class.name() && r.rate == rate)
            .map(|r| r.accuracy)
    }
}

/// Sweeps flip rates over every position class. Each grid point re-runs the
/// whole test split; a rate of zero takes the no-flip path and therefore
/// reproduces the baseline bit-for-bit.
pub fn sensitivity_sweep(
    params: &MlpParams,
    test: &Dataset,
    rates: &[f64],
    seed: u64,
) -> Result<SensitivityTable> {
    if test.is_empty() {
        return Err(SimError::Config(
            "sensitivity needs a non-empty test split".into(),
        ));
    }
    for &r in rates {
        if !(0.0..=1.0).contains(&r) || !r.is_finite() {
            return Err(SimError::Config(format!("flip rate {r} outside [0,1]")));
        }
    }
    let flat = params.flat_params();
    let exposure_bits = flat.len() as u64 * 32;
    let baseline = params.accuracy(test);
    let mut rows = Vec::with_capacity(BitClass::ALL.len() * rates.len());
    for (ci, &class) in BitClass::ALL.iter().enumerate() {
        for (ri, &rate) in rates.iter().enumerate() {
            let accuracy = if rate == 0.0 {
                baseline
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(((ci as u64) << 32) | ri as u64);
                let arrivals = Binomial::new(exposure_bits, rate)
                    .map_err(|e| SimError::Config(format!("bad flip rate {rate}: {e}")))?;
                let mut correct = 0usize;
                let mut scratch = flat.clone();
                for (input, &label) in test.inputs.iter().zip(&test.labels) {
                    let n = arrivals.sample(&mut rng);
                    let got = if n == 0 {
                        params.predict(input)
                    } else {
                        scratch.copy_from_slice(&flat);
                        for _ in 0..n {
                            let idx = rng.random_range(0..scratch.len());
                            let bit = class.pick_bit(&mut rng);
                            scratch[idx] = f32::from_bits(scratch[idx].to_bits() ^ (1 << bit));
                        }
                        params.with_flat(&scratch)?.predict(input)
                    };
                    if got == label {
                        correct += 1;
                    }
                }
                correct as f64 / test.len() as f64
            };
            rows.push(SensitivityRow {
                class: class.name(),
                rate,
                accuracy,
                drop_points: (baseline - accuracy) * 100.0,
            });
        }
    }
    Ok(SensitivityTable {
        baseline_accuracy: baseline,
        parameter_words: flat.len(),
        rows,
    })
}

pub fn sensitivity_csv(table: &SensitivityTable) -> String {
    let mut s = String::from("class,rate,accuracy,drop_points\n");
    for r in &table.rows {
        let _ = writeln!(s, "{},{},{},{}", r.class, r.rate, r.accuracy, r.drop_points);
    }
    s
}
