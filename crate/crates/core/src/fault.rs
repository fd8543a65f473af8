//! Fault planning and replay.
//!
//! A campaign trial is driven by a `FaultPlan`: a concrete list of transient
//! flips (site, bit, pass, traversal) and permanent stuck bits. Plans are
//! drawn from a site inventory, a bit-level upset rate and a seeded RNG
//! substream, and serialise to JSON so any trial can be replayed bit for bit.
//!
//! Transient arrivals per exposure pass are Binomial(total bits, rate), i.e.
//! every physical bit is an independent Bernoulli target each pass. Placement
//! across sites follows the inventory weights, which default to each site's
//! bit count so that a uniform physical rate falls out naturally; campaigns
//! override weights to steer coverage toward interesting structures.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Binomial;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::guarded_memory::Axis;
use crate::systolic::array::Operand;

/// A physical location a fault can land on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Site {
    /// Element of a block while it crosses the load bus, before checksums
    /// are sealed over it.
    MvinStream { row: usize, col: usize },
    /// Element of a block sitting in checksummed local memory.
    MemoryResidency { addr: usize, row: usize, col: usize },
    /// One checksum word in the guard pad.
    GuardpadCell {
        addr: usize,
        axis: Axis,
        index: usize,
    },
    /// One configuration register (the bit indexes its ECC codeword).
    RegisterBit { reg: u32 },
    /// Operand element at the array boundary, past the memory's protection.
    ArrayInput {
        operand: Operand,
        row: usize,
        col: usize,
    },
    /// Partial-sum register of one PE.
    PePartialSum { pe_row: usize, pe_col: usize },
    /// Result element on its way from the array to the accumulator.
    Writeback { row: usize, col: usize },
    /// One replica's output element in a redundant nonlinear unit.
    NonlinearOutput { replica: u32, index: usize },
}

impl Site {
    /// Compact label for event logs.
    pub fn label(&self) -> String {
        match self {
            Site::MvinStream { row, col } => format!("mvin[{row},{col}]"),
            Site::MemoryResidency { addr, row, col } => format!("mem[{addr}:{row},{col}]"),
            Site::GuardpadCell { addr, axis, index } => {
                let a = match axis {
                    Axis::Row => "r",
                    Axis::Col => "c",
                };
                format!("pad[{addr}:{a}{index}]")
            }
            Site::RegisterBit { reg } => format!("reg[{reg}]"),
            Site::ArrayInput { operand, row, col } => {
                let o = match operand {
                    Operand::A => "A",
                    Operand::B => "B",
                    Operand::D => "D",
                };
                format!("in{o}[{row},{col}]")
            }
            Site::PePartialSum { pe_row, pe_col } => format!("pe[{pe_row},{pe_col}]"),
            Site::Writeback { row, col } => format!("wb[{row},{col}]"),
            Site::NonlinearOutput { replica, index } => format!("nl[{replica}:{index}]"),
        }
    }
}

/// One injectable site instance in the inventory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteEntry {
    pub site: Site,
    /// Bits this instance exposes to upsets.
    pub bits: u32,
    /// Sub-pass timestamps a transient can strike at (MAC steps for PE
    /// partial sums); 1 for sites without internal timing.
    pub traversals: u32,
    /// Placement mass. `None` defaults to the bit count.
    pub weight: Option<f64>,
}

impl SiteEntry {
    pub fn new(site: Site, bits: u32) -> Self {
        SiteEntry {
            site,
            bits,
            traversals: 1,
            weight: None,
        }
    }

    pub fn with_traversals(mut self, traversals: u32) -> Self {
        self.traversals = traversals;
        self
    }

    pub fn with_weight(mut self, weight: f64) -> Self {
        self.weight = Some(weight);
        self
    }

    fn effective_weight(&self) -> f64 {
        self.weight.unwrap_or(self.bits as f64)
    }
}

/// A one-shot bit flip at a concrete point in the trial timeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TransientFault {
    pub site: Site,
    pub bit: u32,
    /// Exposure pass (layer evaluation) the flip strikes in.
    pub pass: u64,
    /// Sub-pass timestamp for sites that have one.
    pub traversal: u32,
}

/// A stuck bit present for the whole trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PermanentFault {
    pub site: Site,
    pub bit: u32,
    pub stuck_one: bool,
}

/// Everything needed to reproduce one trial's faults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct FaultPlan {
    pub master_seed: u64,
    pub trial: u64,
    pub rate: f64,
    pub transients: Vec<TransientFault>,
    pub permanents: Vec<PermanentFault>,
}

impl FaultPlan {
    /// Transients striking `site` during `pass`, as (bit, traversal) pairs.
    pub fn hits_at(&self, site: &Site, pass: u64) -> Vec<(u32, u32)> {
        self.transients
            .iter()
            .filter(|t| t.site == *site && t.pass == pass)
            .map(|t| (t.bit, t.traversal))
            .collect()
    }

    /// Stuck bits pinned to `site`, as (bit, stuck_one) pairs.
    pub fn stuck_at(&self, site: &Site) -> Vec<(u32, bool)> {
        self.permanents
            .iter()
            .filter(|p| p.site == *site)
            .map(|p| (p.bit, p.stuck_one))
            .collect()
    }
}

/// Independent per-trial RNG substream under one master seed.
pub fn trial_rng(master_seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(trial);
    rng
}

fn validate_inventory(inventory: &[SiteEntry]) -> Result<()> {
    for e in inventory {
        if e.bits == 0 {
            return Err(SimError::Config(format!(
                "site {} exposes zero bits",
                e.site.label()
            )));
        }
        if e.traversals == 0 {
            return Err(SimError::Config(format!(
                "site {} has zero traversals",
                e.site.label()
            )));
        }
        let w = e.effective_weight();
        if !(w.is_finite() && w >= 0.0) {
            return Err(SimError::Config(format!(
                "site {} has invalid weight {w}",
                e.site.label()
            )));
        }
    }
    Ok(())
}

/// Draw the transient flips for `passes` exposure passes. The rate is a
/// probability per original input bit: each pass draws its arrival count
/// from Binomial(`input_bits`, `rate`), where `input_bits` counts the
/// operand bits streamed through the array in one pass, and the arrivals
/// then land over the weighted site inventory. Scaling the count by the
/// input keeps a given rate comparable across geometries regardless of
/// how much protected state happens to sit behind the datapath.
pub fn plan_transients(
    inventory: &[SiteEntry],
    rate: f64,
    input_bits: u64,
    passes: u64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<TransientFault>> {
    if !(0.0..=1.0).contains(&rate) || !rate.is_finite() {
        return Err(SimError::Range {
            what: "transient upset rate",
            value: rate.to_string(),
        });
    }
    validate_inventory(inventory)?;
    if rate == 0.0 {
        return Ok(Vec::new());
    }
    if input_bits == 0 {
        return Err(SimError::Config(
            "positive upset rate with zero input bits per pass".into(),
        ));
    }
    let weights: Vec<f64> = inventory.iter().map(|e| e.effective_weight()).collect();
    if weights.iter().sum::<f64>() <= 0.0 {
        return Err(SimError::Config(
            "site inventory has zero total weight".into(),
        ));
    }
    let chooser = WeightedIndex::new(&weights)
        .map_err(|e| SimError::Config(format!("bad site weights: {e}")))?;
    let arrivals = Binomial::new(input_bits, rate)
        .map_err(|e| SimError::Config(format!("bad arrival distribution: {e}")))?;
    let mut out = Vec::new();
    for pass in 0..passes {
        let n = arrivals.sample(rng);
        for _ in 0..n {
            let entry = &inventory[chooser.sample(rng)];
            out.push(TransientFault {
                site: entry.site,
                bit: rng.random_range(0..entry.bits),
                pass,
                traversal: rng.random_range(0..entry.traversals),
            });
        }
    }
    Ok(out)
}

/// Plant `count` permanent stuck bits across the inventory.
pub fn plan_permanents(
    inventory: &[SiteEntry],
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<PermanentFault>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    validate_inventory(inventory)?;
    if inventory.is_empty() {
        return Err(SimError::Config(
            "cannot plant permanent faults in an empty inventory".into(),
        ));
    }
    let weights: Vec<f64> = inventory.iter().map(|e| e.effective_weight()).collect();
    if weights.iter().sum::<f64>() <= 0.0 {
        return Err(SimError::Config(
            "site inventory has zero total weight".into(),
        ));
    }
    let chooser = WeightedIndex::new(&weights)
        .map_err(|e| SimError::Config(format!("bad site weights: {e}")))?;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let entry = &inventory[chooser.sample(rng)];
        out.push(PermanentFault {
            site: entry.site,
            bit: rng.random_range(0..entry.bits),
            stuck_one: rng.random(),
        });
    }
    Ok(out)
}

/// Fold faults into a word: transients flip first, then stuck bits clamp.
/// A stuck bit therefore dominates any flip on the same position.
pub fn apply_to_word(bits: u32, flips: &[(u32, u32)], stucks: &[(u32, bool)]) -> u32 {
    let mut out = bits;
    for &(bit, _traversal) in flips {
        out ^= 1 << bit;
    }
    for &(bit, stuck_one) in stucks {
        if stuck_one {
            out |= 1 << bit;
        } else {
            out &= !(1 << bit);
        }
    }
    out
}
