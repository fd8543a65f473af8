//! One trial of a workload on the protected datapath: builds the memory
//! image, walks the blocked GEMM schedule pass by pass, applies the trial's
//! fault plan at each exposure site, and classifies every planned fault by
//! what the protection stack did about it.

use std::collections::HashMap;

use crate::block::{Block, ElemKind};
use crate::ecc::{check_width, DecodeStatus, RegisterFile};
use crate::error::{Result, SimError};
use crate::fault::{apply_to_word, FaultPlan, Site, SiteEntry};
use crate::guarded_memory::{
    checksum_generate, verify_latency, Axis, Checksums, ErrorRecord, FaultSiteRef, GuardedMemory,
    VerifyOutcome, VerifyStatus,
};
use crate::nonlinear::{redundant_apply, NlOp, ReplicaFlip};
use crate::numerics::DType;
use crate::systolic::array::{
    gemm, ArrayFaults, InputFlip, InputStuck, Operand, PeStuck, PsumFlip,
};
use crate::systolic::shield::{
    configure_shields, pipeline_schedule, shield_checksums, shield_verify, ArrayVerifyStatus,
};
use crate::systolic::ArrayGeometry;

use super::workload::{gaussian_blobs, train_mlp, BlobSpec, MlpParams, QuantMlp};
use super::{CampaignConfig, ProtectionConfig, SiteClassWeights, WorkloadSpec};

/// Configuration register ids used by the pass driver.
pub const REG_A: u32 = 0;
pub const REG_B: u32 = 1;
pub const REG_D: u32 = 2;
pub const REG_OUT: u32 = 3;
pub const REG_SHIFT: u32 = 4;

const ADDR_ALPHA: u32 = 32;
const SHIFT_ALPHA: u32 = 8;

/// What finally became of one planned fault.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum FaultOutcome {
    /// Never changed a consumed value: reverted, benign stuck, masked by a
    /// rewrite, or landed on state the workload never read again.
    Absorbed,
    /// Detected and the damage repaired before use.
    Corrected,
    /// Detected but not repaired; the fault cannot propagate silently.
    Uncorrectable,
    /// Corrupted a consumed value without any detection firing.
    Missed,
}

impl FaultOutcome {
    pub fn name(self) -> &'static str {
        match self {
            FaultOutcome::Absorbed => "absorbed",
            FaultOutcome::Corrected => "corrected",
            FaultOutcome::Uncorrectable => "uncorrectable",
            FaultOutcome::Missed => "missed",
        }
    }
}

/// Classification of one planned fault after the trial.
#[derive(Debug, Clone)]
pub struct FaultRecord {
    pub site: Site,
    /// Strike pass for transients; permanents are live all trial.
    pub pass: Option<u64>,
    pub bit: u32,
    pub permanent: bool,
    pub outcome: FaultOutcome,
}

/// Site taxonomy used for the per-site report breakdown.
pub fn site_class(site: &Site) -> &'static str {
    match site {
        Site::MvinStream { .. } => "mvin_stream",
        Site::MemoryResidency { .. } => "memory_data",
        Site::GuardpadCell { .. } => "guardpad",
        Site::RegisterBit { .. } => "register",
        Site::ArrayInput { .. } => "array_input",
        Site::PePartialSum { .. } => "pe_psum",
        Site::Writeback { .. } => "writeback",
        Site::NonlinearOutput { .. } => "nonlinear",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    Register,
    Memory,
    Array,
    Nonlinear,
}

impl Component {
    pub fn name(self) -> &'static str {
        match self {
            Component::Register => "register",
            Component::Memory => "memory",
            Component::Array => "array",
            Component::Nonlinear => "nonlinear",
        }
    }
}

/// One detection firing somewhere in the protected pipeline.
#[derive(Debug, Clone)]
pub struct DetectionEvent {
    pub pass: u64,
    pub component: Component,
    pub site: String,
    pub latency_cycles: u64,
    pub status: String,
    pub corrected: bool,
}

/// Modeled worst-case cycles from issue to verdict for each component.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatencyAnchors {
    pub register: u64,
    pub memory: u64,
    pub array: u64,
    pub nonlinear: u64,
}

impl LatencyAnchors {
    pub fn worst(&self) -> u64 {
        self.register
            .max(self.memory)
            .max(self.array)
            .max(self.nonlinear)
    }
}

/// Anchors for a geometry whose local-memory blocks are rows x cols.
/// Register reads resolve in the decode stage (2 cycles); memory verifies
/// stream the block through the checksum trees; array faults wait out the
/// shield window plus the reduce-and-compare drain; the nonlinear voter
/// streams one row per cycle plus compare and writeback.
pub fn latency_anchors(
    geometry: &ArrayGeometry,
    rows: usize,
    cols: usize,
) -> Result<LatencyAnchors> {
    let cfg = configure_shields(geometry)?;
    let timing = pipeline_schedule(1, &cfg)?;
    Ok(LatencyAnchors {
        register: 2,
        memory: verify_latency(rows, cols),
        array: timing.worst_detection_latency,
        nonlinear: rows as u64 + 2,
    })
}

#[derive(Debug, Clone)]
pub(crate) struct StaticBlock {
    addr: usize,
    block: Block,
    tile: Option<(usize, usize)>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ReluSpec {
    acc_addr: usize,
    out_addr: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ReadoutSpec {
    acc_addr: usize,
    cols: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct PassSpec {
    a_addr: usize,
    b_addr: usize,
    d_addr: usize,
    out_addr: usize,
    /// (layer, group) recorded as the tile tag of the result block.
    tile: (usize, usize),
    relu: Option<ReluSpec>,
    readout: Option<ReadoutSpec>,
}

/// A workload lowered to the blocked schedule: the memory image, the pass
/// list, and the reference models it was built from. Built once per
/// campaign and shared read-only across trials.
#[derive(Debug, Clone)]
pub struct PreparedWorkload {
    pub geometry: ArrayGeometry,
    pub dtype: DType,
    pub capacity_words: usize,
    pub requant_shift: u32,
    pub classes: usize,
    shared: Vec<StaticBlock>,
    per_batch: Vec<Vec<StaticBlock>>,
    passes: Vec<PassSpec>,
    /// Every address the schedule ever makes resident, with its shape.
    mem_shapes: Vec<(usize, usize, usize, ElemKind)>,
    labels: Vec<Vec<usize>>,
    has_relu: bool,
    pub anchors: LatencyAnchors,
    /// Kept for reference checks and the sensitivity sweep.
    pub float_model: Option<MlpParams>,
    pub quant_model: Option<QuantMlp>,
    pub float_test_accuracy: Option<f64>,
}

impl PreparedWorkload {
    pub fn n_passes(&self) -> u64 {
        self.passes.len() as u64
    }

    pub fn batches(&self) -> usize {
        self.per_batch.len().max(1)
    }

    /// Operand bits streamed into the array in one pass: the A and B tiles
    /// of one traversal. The transient upset rate is a probability per
    /// input bit, so this is the Binomial budget each pass draws against.
    pub fn input_bits_per_pass(&self) -> u64 {
        let n = self.geometry.n() as u64;
        2 * n * n * u64::from(self.dtype.width())
    }

    pub fn labels_for(&self, batch: usize) -> &[usize] {
        static EMPTY: [usize; 0] = [];
        self.labels.get(batch).map(Vec::as_slice).unwrap_or(&EMPTY)
    }

    pub fn all_labels(&self) -> &[Vec<usize>] {
        &self.labels
    }

    pub fn samples_per_trial(&self) -> usize {
        self.labels.first().map(Vec::len).unwrap_or(0)
    }
}

fn int8_cell(v: i8) -> u32 {
    v as u8 as u32
}

fn full_mask(kind: ElemKind) -> u32 {
    let w = kind.width();
    if w == 32 {
        u32::MAX
    } else {
        (1u32 << w) - 1
    }
}

fn zeros_acc(n: usize, dtype: DType) -> Block {
    Block::zeroed(n, n, ElemKind::Acc(dtype))
}

/// Lowers the configured workload onto the array geometry: trains and
/// quantises the classifier if one is requested, tiles every operand into
/// N x N blocks, and lays them out in local memory.
pub fn prepare_workload(config: &CampaignConfig) -> Result<PreparedWorkload> {
    let geometry = config.geometry()?;
    let n = geometry.n();
    let mut next = 0usize;
    let mut alloc = |words: usize| {
        let a = next;
        next += words;
        a
    };
    let block_words = n * n;

    match &config.workload {
        WorkloadSpec::TinyMlp(spec) => {
            if config.dtype != DType::Int8 {
                return Err(SimError::Config(
                    "the blocked classifier runs in its int8 deployment form; \
                     float bit-sensitivity is covered by the sensitivity sweep"
                        .into(),
                ));
            }
            if spec.input_dim % n != 0 || spec.hidden % n != 0 {
                return Err(SimError::Config(format!(
                    "classifier dims {}x{} do not tile an {n}x{n} array",
                    spec.input_dim, spec.hidden
                )));
            }
            if spec.classes > n {
                return Err(SimError::Config(format!(
                    "{} classes exceed the {n}-wide readout block",
                    spec.classes
                )));
            }
            if spec.test_samples % n != 0 {
                return Err(SimError::Config(format!(
                    "test split {} is not a whole number of {n}-row batches",
                    spec.test_samples
                )));
            }
            let blobs = BlobSpec {
                classes: spec.classes,
                input_dim: spec.input_dim,
                train_samples: spec.train_samples,
                test_samples: spec.test_samples,
                mean_scale: spec.mean_scale,
                noise: spec.noise,
                seed: spec.dataset_seed,
            };
            let (train, test) = gaussian_blobs(&blobs)?;
            let params = train_mlp(&train, spec.hidden, spec.train_seed, spec.epochs, spec.lr)?;
            let quant = QuantMlp::quantise(&params, &train)?;
            let float_acc = params.accuracy(&test);

            let kb1 = spec.input_dim / n;
            let nb1 = spec.hidden / n;
            let kb2 = spec.hidden / n;
            let data_kind = ElemKind::Data(DType::Int8);
            let acc_kind = ElemKind::Acc(DType::Int8);

            let mut shared = Vec::new();
            let mut mem_shapes = Vec::new();
            let track = |addr: usize, kind: ElemKind, shapes: &mut Vec<_>| {
                shapes.push((addr, n, n, kind));
                addr
            };

            // Input feature blocks share addresses across batches.
            let x_addrs: Vec<usize> = (0..kb1)
                .map(|_| track(alloc(block_words), data_kind, &mut mem_shapes))
                .collect();
            let w1_addrs: Vec<Vec<usize>> = (0..kb1)
                .map(|_| {
                    (0..nb1)
                        .map(|_| track(alloc(block_words), data_kind, &mut mem_shapes))
                        .collect()
                })
                .collect();
            let bias1_addrs: Vec<usize> = (0..nb1)
                .map(|_| track(alloc(block_words), acc_kind, &mut mem_shapes))
                .collect();
            let acc1_addrs: Vec<usize> = (0..nb1)
                .map(|_| track(alloc(block_words), acc_kind, &mut mem_shapes))
                .collect();
            let a1_addrs: Vec<usize> = (0..nb1)
                .map(|_| track(alloc(block_words), data_kind, &mut mem_shapes))
                .collect();
            let w2_addrs: Vec<usize> = (0..kb2)
                .map(|_| track(alloc(block_words), data_kind, &mut mem_shapes))
                .collect();
            let bias2_addr = track(alloc(block_words), acc_kind, &mut mem_shapes);
            let acc2_addr = track(alloc(block_words), acc_kind, &mut mem_shapes);

            for (k, col) in w1_addrs.iter().enumerate() {
                for (j, &addr) in col.iter().enumerate() {
                    let mut b = Block::zeroed(n, n, data_kind);
                    for r in 0..n {
                        for c in 0..n {
                            let w = quant.w1q[(k * n + r) * spec.hidden + (j * n + c)];
                            b.set(r, c, int8_cell(w))?;
                        }
                    }
                    shared.push(StaticBlock {
                        addr,
                        block: b,
                        tile: None,
                    });
                }
            }
            for (j, &addr) in bias1_addrs.iter().enumerate() {
                let mut b = Block::zeroed(n, n, acc_kind);
                for r in 0..n {
                    for c in 0..n {
                        b.set_i32(r, c, quant.b1q[j * n + c])?;
                    }
                }
                shared.push(StaticBlock {
                    addr,
                    block: b,
                    tile: None,
                });
            }
            for (k, &addr) in w2_addrs.iter().enumerate() {
                let mut b = Block::zeroed(n, n, data_kind);
                for r in 0..n {
                    for c in 0..n {
                        let w = if c < spec.classes {
                            quant.w2q[(k * n + r) * spec.classes + c]
                        } else {
                            0
                        };
                        b.set(r, c, int8_cell(w))?;
                    }
                }
                shared.push(StaticBlock {
                    addr,
                    block: b,
                    tile: None,
                });
            }
            {
                let mut b = Block::zeroed(n, n, acc_kind);
                for r in 0..n {
                    for c in 0..n {
                        let v = if c < spec.classes { quant.b2q[c] } else { 0 };
                        b.set_i32(r, c, v)?;
                    }
                }
                shared.push(StaticBlock {
                    addr: bias2_addr,
                    block: b,
                    tile: None,
                });
            }

            let batches = spec.test_samples / n;
            let mut per_batch = Vec::with_capacity(batches);
            let mut labels = Vec::with_capacity(batches);
            for bi in 0..batches {
                let mut blocks = Vec::with_capacity(kb1);
                for (k, &addr) in x_addrs.iter().enumerate() {
                    let mut b = Block::zeroed(n, n, data_kind);
                    for r in 0..n {
                        let xq = quant.quantise_input(&test.inputs[bi * n + r]);
                        for c in 0..n {
                            b.set(r, c, int8_cell(xq[k * n + c]))?;
                        }
                    }
                    blocks.push(StaticBlock {
                        addr,
                        block: b,
                        tile: None,
                    });
                }
                per_batch.push(blocks);
                labels.push(test.labels[bi * n..(bi + 1) * n].to_vec());
            }

            let mut passes = Vec::new();
            for j in 0..nb1 {
                for k in 0..kb1 {
                    passes.push(PassSpec {
                        a_addr: x_addrs[k],
                        b_addr: w1_addrs[k][j],
                        d_addr: if k == 0 {
                            bias1_addrs[j]
                        } else {
                            acc1_addrs[j]
                        },
                        out_addr: acc1_addrs[j],
                        tile: (0, j),
                        relu: (k == kb1 - 1).then_some(ReluSpec {
                            acc_addr: acc1_addrs[j],
                            out_addr: a1_addrs[j],
                        }),
                        readout: None,
                    });
                }
            }
            for k in 0..kb2 {
                passes.push(PassSpec {
                    a_addr: a1_addrs[k],
                    b_addr: w2_addrs[k],
                    d_addr: if k == 0 { bias2_addr } else { acc2_addr },
                    out_addr: acc2_addr,
                    tile: (1, 0),
                    relu: None,
                    readout: (k == kb2 - 1).then_some(ReadoutSpec {
                        acc_addr: acc2_addr,
                        cols: spec.classes,
                    }),
                });
            }

            let anchors = latency_anchors(&geometry, n, n)?;
            Ok(PreparedWorkload {
                geometry,
                dtype: DType::Int8,
                capacity_words: next,
                requant_shift: quant.requant_shift,
                classes: spec.classes,
                shared,
                per_batch,
                passes,
                mem_shapes,
                labels,
                has_relu: true,
                anchors,
                float_model: Some(params),
                quant_model: Some(quant),
                float_test_accuracy: Some(float_acc),
            })
        }
        WorkloadSpec::SingleGemm(spec) => {
            if spec.groups == 0 {
                return Err(SimError::Config("a GEMM needs at least one group".into()));
            }
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(spec.seed);
            let data_kind = ElemKind::Data(config.dtype);
            let acc_kind = ElemKind::Acc(config.dtype);
            let mut shared = Vec::new();
            let mut mem_shapes = Vec::new();
            let random_block = |rng: &mut rand_chacha::ChaCha8Rng| -> Result<Block> {
                let mut b = Block::zeroed(n, n, data_kind);
                for r in 0..n {
                    for c in 0..n {
                        match config.dtype {
                            DType::Int8 => {
                                let v: i8 = rng.random();
                                b.set(r, c, int8_cell(v))?;
                            }
                            DType::Fp32 | DType::Bf16 => {
                                let v: f32 = rng.random_range(-1.0..1.0);
                                b.set_f32(r, c, v)?;
                            }
                        }
                    }
                }
                Ok(b)
            };
            let mut ab_addrs = Vec::with_capacity(spec.groups as usize);
            for _ in 0..spec.groups {
                let a_addr = alloc(block_words);
                let b_addr = alloc(block_words);
                mem_shapes.push((a_addr, n, n, data_kind));
                mem_shapes.push((b_addr, n, n, data_kind));
                shared.push(StaticBlock {
                    addr: a_addr,
                    block: random_block(&mut rng)?,
                    tile: None,
                });
                shared.push(StaticBlock {
                    addr: b_addr,
                    block: random_block(&mut rng)?,
                    tile: None,
                });
                ab_addrs.push((a_addr, b_addr));
            }
            let zero_addr = alloc(block_words);
            mem_shapes.push((zero_addr, n, n, acc_kind));
            shared.push(StaticBlock {
                addr: zero_addr,
                block: zeros_acc(n, config.dtype),
                tile: None,
            });
            let acc_addr = alloc(block_words);
            mem_shapes.push((acc_addr, n, n, acc_kind));

            let groups = spec.groups as usize;
            let passes: Vec<PassSpec> = (0..groups)
                .map(|g| PassSpec {
                    a_addr: ab_addrs[g].0,
                    b_addr: ab_addrs[g].1,
                    d_addr: if g == 0 { zero_addr } else { acc_addr },
                    out_addr: acc_addr,
                    tile: (0, g),
                    relu: None,
                    readout: (g == groups - 1).then_some(ReadoutSpec { acc_addr, cols: n }),
                })
                .collect();

            let anchors = latency_anchors(&geometry, n, n)?;
            Ok(PreparedWorkload {
                geometry,
                dtype: config.dtype,
                capacity_words: next,
                requant_shift: 0,
                classes: 0,
                shared,
                per_batch: vec![Vec::new()],
                passes,
                mem_shapes,
                labels: vec![Vec::new()],
                has_relu: false,
                anchors,
                float_model: None,
                quant_model: None,
                float_test_accuracy: None,
            })
        }
    }
}

/// The full site inventory one trial exposes, weighted by the configured
/// per-class multipliers times each site's bit count. Zero-weight classes
/// are left out entirely so they draw no share of the arrival mass.
pub fn build_inventory(
    prep: &PreparedWorkload,
    weights: &SiteClassWeights,
    copies: u32,
) -> Vec<SiteEntry> {
    let n = prep.geometry.n();
    let mut out = Vec::new();
    let push = |site: Site, bits: u32, traversals: u32, mult: f64, out: &mut Vec<SiteEntry>| {
        if mult > 0.0 {
            out.push(
                SiteEntry::new(site, bits)
                    .with_traversals(traversals)
                    .with_weight(bits as f64 * mult),
            );
        }
    };
    for &(id, alpha) in &[
        (REG_A, ADDR_ALPHA),
        (REG_B, ADDR_ALPHA),
        (REG_D, ADDR_ALPHA),
        (REG_OUT, ADDR_ALPHA),
        (REG_SHIFT, SHIFT_ALPHA),
    ] {
        let bits = alpha + check_width(alpha);
        push(
            Site::RegisterBit { reg: id },
            bits,
            1,
            weights.register,
            &mut out,
        );
    }
    for &(addr, rows, cols, kind) in &prep.mem_shapes {
        let w = kind.width();
        for row in 0..rows {
            for col in 0..cols {
                push(
                    Site::MemoryResidency { addr, row, col },
                    w,
                    1,
                    weights.memory,
                    &mut out,
                );
            }
        }
        for index in 0..rows {
            push(
                Site::GuardpadCell {
                    addr,
                    axis: Axis::Row,
                    index,
                },
                w,
                1,
                weights.guardpad,
                &mut out,
            );
        }
        for index in 0..cols {
            push(
                Site::GuardpadCell {
                    addr,
                    axis: Axis::Col,
                    index,
                },
                w,
                1,
                weights.guardpad,
                &mut out,
            );
        }
    }
    for row in 0..n {
        for col in 0..n {
            push(
                Site::MvinStream { row, col },
                32,
                1,
                weights.mvin_stream,
                &mut out,
            );
            for (operand, bits) in [
                (Operand::A, prep.dtype.width()),
                (Operand::B, prep.dtype.width()),
                (Operand::D, 32),
            ] {
                push(
                    Site::ArrayInput { operand, row, col },
                    bits,
                    1,
                    weights.array_input,
                    &mut out,
                );
            }
            push(
                Site::PePartialSum {
                    pe_row: row,
                    pe_col: col,
                },
                32,
                n as u32,
                weights.pe_psum,
                &mut out,
            );
            push(
                Site::Writeback { row, col },
                32,
                1,
                weights.writeback,
                &mut out,
            );
            if prep.has_relu {
                for replica in 0..copies {
                    push(
                        Site::NonlinearOutput {
                            replica,
                            index: row * n + col,
                        },
                        32,
                        1,
                        weights.nonlinear,
                        &mut out,
                    );
                }
            }
        }
    }
    out
}

/// Everything a finished trial reports back to the campaign.
#[derive(Debug, Clone)]
pub struct TrialResult {
    pub trial: u64,
    pub batch: usize,
    pub records: Vec<FaultRecord>,
    pub events: Vec<DetectionEvent>,
    /// Predicted class per sample row; empty for plain GEMM workloads.
    pub predictions: Vec<usize>,
    /// Raw words of the final result block, for bit-exact comparisons.
    pub result_words: Vec<u32>,
    pub error_log: Vec<ErrorRecord>,
}

type MemHit = (usize, usize, usize, usize, u32);
type PadHit = (usize, usize, Axis, usize, u32);
type WbHit = (usize, usize, usize, u32);

#[derive(Default)]
struct Routes {
    mem: HashMap<u64, Vec<MemHit>>,
    pad: HashMap<u64, Vec<PadHit>>,
    reg: HashMap<(u64, u32), Vec<(usize, u32)>>,
    input: HashMap<u64, Vec<(usize, InputFlip)>>,
    psum: HashMap<u64, Vec<(usize, PsumFlip)>>,
    wb: HashMap<u64, Vec<WbHit>>,
    nl: HashMap<u64, Vec<(usize, ReplicaFlip)>>,
    mvin: HashMap<u64, Vec<(usize, usize, usize, u32, bool)>>,
    stuck_mem: Vec<(usize, usize, usize, usize, u32, bool)>,
    stuck_pad: Vec<(usize, usize, Axis, usize, u32, bool)>,
    stuck_reg: HashMap<u32, Vec<(usize, u32, bool)>>,
    stuck_input: Vec<(usize, InputStuck)>,
    stuck_pe: Vec<(usize, PeStuck)>,
    stuck_wb: Vec<(usize, usize, usize, u32, bool)>,
    stuck_nl: Vec<(usize, u32, usize, u32, bool)>,
    stuck_mvin: Vec<(usize, usize, usize, u32, bool)>,
}

fn route_plan(plan: &FaultPlan) -> (Vec<FaultRecord>, Routes) {
    let mut records = Vec::with_capacity(plan.transients.len() + plan.permanents.len());
    let mut r = Routes::default();
    for (id, t) in plan.transients.iter().enumerate() {
        records.push(FaultRecord {
            site: t.site,
            pass: Some(t.pass),
            bit: t.bit,
            permanent: false,
            outcome: FaultOutcome::Absorbed,
        });
        match t.site {
            Site::MemoryResidency { addr, row, col } => {
                r.mem
                    .entry(t.pass)
                    .or_default()
                    .push((id, addr, row, col, t.bit));
            }
            Site::GuardpadCell { addr, axis, index } => {
                r.pad
                    .entry(t.pass)
                    .or_default()
                    .push((id, addr, axis, index, t.bit));
            }
            Site::RegisterBit { reg } => {
                r.reg.entry((t.pass, reg)).or_default().push((id, t.bit));
            }
            Site::ArrayInput { operand, row, col } => {
                r.input.entry(t.pass).or_default().push((
                    id,
                    InputFlip {
                        operand,
                        row,
                        col,
                        bit: t.bit,
                    },
                ));
            }
            Site::PePartialSum { pe_row, pe_col } => {
                r.psum.entry(t.pass).or_default().push((
                    id,
                    PsumFlip {
                        pe_row,
                        pe_col,
                        traversal: t.traversal as usize,
                        bit: t.bit,
                    },
                ));
            }
            Site::Writeback { row, col } => {
                r.wb.entry(t.pass).or_default().push((id, row, col, t.bit));
            }
            Site::NonlinearOutput { replica, index } => {
                r.nl.entry(t.pass).or_default().push((
                    id,
                    ReplicaFlip {
                        replica,
                        index,
                        bit: t.bit,
                    },
                ));
            }
            Site::MvinStream { row, col } => {
                r.mvin
                    .entry(t.pass)
                    .or_default()
                    .push((id, row, col, t.bit, false));
            }
        }
    }
    let base = plan.transients.len();
    for (k, p) in plan.permanents.iter().enumerate() {
        let id = base + k;
        records.push(FaultRecord {
            site: p.site,
            pass: None,
            bit: p.bit,
            permanent: true,
            outcome: FaultOutcome::Absorbed,
        });
        match p.site {
            Site::MemoryResidency { addr, row, col } => {
                r.stuck_mem.push((id, addr, row, col, p.bit, p.stuck_one));
            }
            Site::GuardpadCell { addr, axis, index } => {
                r.stuck_pad
                    .push((id, addr, axis, index, p.bit, p.stuck_one));
            }
            Site::RegisterBit { reg } => {
                r.stuck_reg
                    .entry(reg)
                    .or_default()
                    .push((id, p.bit, p.stuck_one));
            }
            Site::ArrayInput { operand, row, col } => {
                r.stuck_input.push((
                    id,
                    InputStuck {
                        operand,
                        row,
                        col,
                        bit: p.bit,
                        stuck_one: p.stuck_one,
                    },
                ));
            }
            Site::PePartialSum { pe_row, pe_col } => {
                r.stuck_pe.push((
                    id,
                    PeStuck {
                        pe_row,
                        pe_col,
                        bit: p.bit,
                        stuck_one: p.stuck_one,
                    },
                ));
            }
            Site::Writeback { row, col } => {
                r.stuck_wb.push((id, row, col, p.bit, p.stuck_one));
            }
            Site::NonlinearOutput { replica, index } => {
                r.stuck_nl.push((id, replica, index, p.bit, p.stuck_one));
            }
            Site::MvinStream { row, col } => {
                r.stuck_mvin.push((id, row, col, p.bit, p.stuck_one));
            }
        }
    }
    (records, r)
}

/// Raw words recast to the shape and element kind a stream consumer is
/// configured for. Words are truncated to the destination element width and
/// missing positions read as zeros; the datapath decodes whatever bits
/// arrive, not the type of the block that happened to live at the address.
fn reinterpret(block: Block, n: usize, want: ElemKind) -> Block {
    if block.kind() == want && block.rows() == n && block.cols() == n {
        return block;
    }
    let width = want.width();
    let keep = if width == 32 {
        u32::MAX
    } else {
        (1 << width) - 1
    };
    let mut out = Block::zeroed(n, n, want);
    for r in 0..n.min(block.rows()) {
        for c in 0..n.min(block.cols()) {
            out.set(r, c, block.get(r, c) & keep)
                .expect("masked to width");
        }
    }
    out
}

struct Executor<'a> {
    prep: &'a PreparedWorkload,
    protection: &'a ProtectionConfig,
    n: usize,
    mem: GuardedMemory,
    /// Sealed content per address: the block and guardpad the last
    /// legitimate write left behind. Faults never touch the mirror, so a
    /// verified word that matches it is known restored.
    mirror: HashMap<usize, (Block, Checksums)>,
    rf: RegisterFile,
    raw_regs: HashMap<u32, u64>,
    records: Vec<FaultRecord>,
    routes: Routes,
    pending: HashMap<usize, Vec<usize>>,
    events: Vec<DetectionEvent>,
}

impl<'a> Executor<'a> {
    fn resolve(&mut self, id: usize, outcome: FaultOutcome) {
        let slot = &mut self.records[id].outcome;
        *slot = (*slot).max(outcome);
    }

    fn mark_pending(&mut self, addr: usize, id: usize) {
        let list = self.pending.entry(addr).or_default();
        if !list.contains(&id) {
            list.push(id);
        }
    }

    /// Moves a block in through the load bus, exposed to mvin-stream faults
    /// which are sealed under the fresh checksums and therefore silent.
    fn mvin_block(
        &mut self,
        pass: u64,
        addr: usize,
        block: Block,
        tile: Option<(usize, usize)>,
    ) -> Result<()> {
        let mut b = block;
        let wm = full_mask(b.kind());
        // (id, row, col, flip bit or stuck level)
        let mut hits: Vec<(usize, usize, usize, u32, Option<bool>)> = Vec::new();
        if let Some(list) = self.routes.mvin.get_mut(&pass) {
            for (id, row, col, bit, consumed) in list.iter_mut() {
                if !*consumed && *row < b.rows() && *col < b.cols() {
                    *consumed = true;
                    hits.push((*id, *row, *col, *bit, None));
                }
            }
        }
        for &(id, row, col, bit, one) in &self.routes.stuck_mvin {
            if row < b.rows() && col < b.cols() {
                hits.push((id, row, col, bit, Some(one)));
            }
        }
        for (id, row, col, bit, stuck) in hits {
            let old = b.get(row, col);
            let new = match stuck {
                None => apply_to_word(old, &[(bit, 0)], &[]),
                Some(one) => apply_to_word(old, &[], &[(bit, one)]),
            } & wm;
            if new != old {
                b.set(row, col, new)?;
                // Pre-seal corruption is invisible to every guard downstream.
                self.resolve(id, FaultOutcome::Missed);
            }
        }
        self.mem.mvin(addr, b, wm, tile)?;
        let sealed = self.mem.block(addr)?.clone();
        let pads = self.mem.checksums(addr)?.clone();
        self.mirror.insert(addr, (sealed, pads));
        Ok(())
    }

    /// Strikes resident memory and guardpads with this pass's transients
    /// and re-asserts permanent stuck cells.
    fn apply_memory_faults(&mut self, pass: u64) -> Result<()> {
        let mem_hits = self.routes.mem.remove(&pass).unwrap_or_default();
        for (id, addr, row, col, bit) in mem_hits {
            match self.mem.corrupt_data(addr, row, col, |w| w ^ (1 << bit)) {
                Ok(_) => self.mark_pending(addr, id),
                Err(_) => {} // not resident yet or already dead: no exposure
            }
        }
        let pad_hits = self.routes.pad.remove(&pass).unwrap_or_default();
        for (id, addr, axis, index, bit) in pad_hits {
            if self
                .mem
                .corrupt_checksum(addr, axis, index, |w| w ^ (1 << bit))
                .is_ok()
            {
                self.mark_pending(addr, id);
            }
        }
        let stuck_mem = self.routes.stuck_mem.clone();
        for (id, addr, row, col, bit, one) in stuck_mem {
            if self
                .mem
                .corrupt_data(addr, row, col, |w| apply_to_word(w, &[], &[(bit, one)]))
                .is_ok()
            {
                self.mark_pending(addr, id);
            }
        }
        let stuck_pad = self.routes.stuck_pad.clone();
        for (id, addr, axis, index, bit, one) in stuck_pad {
            if self
                .mem
                .corrupt_checksum(addr, axis, index, |w| apply_to_word(w, &[], &[(bit, one)]))
                .is_ok()
            {
                self.mark_pending(addr, id);
            }
        }
        Ok(())
    }

    /// Classifies every fault pending on `addr` once a verify (or, with
    /// memory protection off, a consuming read) has run.
    fn resolve_block(
        &mut self,
        addr: usize,
        status: Option<&VerifyStatus>,
        pre: &(Block, Checksums),
    ) {
        let Some(ids) = self.pending.remove(&addr) else {
            return;
        };
        let Some((mirror_block, mirror_pads)) = self.mirror.get(&addr) else {
            return;
        };
        let uncorrectable = matches!(status, Some(VerifyStatus::Uncorrectable));
        let mut resolved = Vec::with_capacity(ids.len());
        for id in ids {
            let (now, clean, was) = match self.records[id].site {
                Site::MemoryResidency { row, col, .. } | Site::Writeback { row, col } => {
                    let now = self.mem.block(addr).map(|b| b.get(row, col)).unwrap_or(0);
                    (now, mirror_block.get(row, col), pre.0.get(row, col))
                }
                Site::GuardpadCell { axis, index, .. } => {
                    let pick = |c: &Checksums| match axis {
                        Axis::Row => c.row_sums[index],
                        Axis::Col => c.col_sums[index],
                    };
                    let now = self.mem.checksums(addr).map(pick).unwrap_or(0);
                    (now, pick(mirror_pads), pick(&pre.1))
                }
                _ => continue,
            };
            let outcome = if now == clean {
                if uncorrectable {
                    // The block verdict failed even if this word survived or
                    // was restored by a partial pairing; stay conservative.
                    if was == now {
                        FaultOutcome::Absorbed
                    } else {
                        FaultOutcome::Uncorrectable
                    }
                } else if was == now {
                    FaultOutcome::Absorbed
                } else {
                    FaultOutcome::Corrected
                }
            } else if uncorrectable {
                FaultOutcome::Uncorrectable
            } else {
                FaultOutcome::Missed
            };
            resolved.push((id, outcome));
        }
        for (id, outcome) in resolved {
            self.resolve(id, outcome);
        }
    }

    /// Per-pass background verify of every resident block, the pipeline's
    /// verify/correct stage that rides along with each group's mvin. An
    /// upset meets a checker within the pass it lands in, instead of
    /// accumulating with later upsets across the block's whole residency.
    fn scrub_resident(&mut self, pass: u64) -> Result<()> {
        if !self.protection.memory {
            return Ok(());
        }
        let mut addrs: Vec<usize> = self.mem.addresses().collect();
        addrs.sort_unstable();
        for addr in addrs {
            let pre = (
                self.mem.block(addr)?.clone(),
                self.mem.checksums(addr)?.clone(),
            );
            let outcome = self.mem.verify_and_correct(addr)?;
            self.note_memory_event(pass, addr, &outcome);
            self.resolve_block(addr, Some(&outcome.status), &pre);
            if matches!(outcome.status, VerifyStatus::Uncorrectable) {
                self.refetch(addr)?;
            }
        }
        Ok(())
    }

    /// Recovery after an uncorrectable verdict: the next pass re-moves the
    /// block in from upstream, so residency of the damaged pattern ends at
    /// the verify that flagged it. Without this, one ambiguous pattern
    /// poisons the block and every later upset there inherits the verdict.
    fn refetch(&mut self, addr: usize) -> Result<()> {
        let Some((block, pads)) = self.mirror.get(&addr) else {
            return Ok(());
        };
        let (block, pads) = (block.clone(), pads.clone());
        let mask = pads.mask;
        let tile = self.mem.tile_of(addr);
        self.mem.mvin_with_checksums(addr, block, mask, pads, tile)
    }

    /// Reads a block out of protected memory, verifying first when memory
    /// protection is on. A missing address reads as zeros (open bus), and a
    /// resident block of the wrong shape or kind (reachable only through a
    /// corrupted address register) streams as raw words reinterpreted under
    /// the consumer's element type, exactly as a misdirected DMA would.
    fn stream(&mut self, pass: u64, addr: usize, want: ElemKind) -> Result<Block> {
        if self.mem.block(addr).is_err() {
            return Ok(Block::zeroed(self.n, self.n, want));
        }
        let pre = (
            self.mem.block(addr)?.clone(),
            self.mem.checksums(addr)?.clone(),
        );
        let rows = pre.0.rows();
        let cols = pre.0.cols();
        if self.protection.memory {
            let (sub, _sums, outcome) = self.mem.stream_out(addr, 0, 0, rows, cols)?;
            self.note_memory_event(pass, addr, &outcome);
            self.resolve_block(addr, Some(&outcome.status), &pre);
            if matches!(outcome.status, VerifyStatus::Uncorrectable) {
                self.refetch(addr)?;
            }
            Ok(reinterpret(sub, self.n, want))
        } else {
            self.resolve_block(addr, None, &pre);
            Ok(reinterpret(pre.0, self.n, want))
        }
    }

    fn note_memory_event(&mut self, pass: u64, addr: usize, outcome: &VerifyOutcome) {
        let (status, corrected) = match &outcome.status {
            VerifyStatus::Clean => return,
            VerifyStatus::Corrected(_) => ("corrected", true),
            VerifyStatus::ChecksumRepaired(_) => ("checksum_repaired", true),
            VerifyStatus::Uncorrectable => ("uncorrectable", false),
        };
        self.events.push(DetectionEvent {
            pass,
            component: Component::Memory,
            site: format!("mem[{addr}]"),
            latency_cycles: outcome.latency_cycles,
            status: status.into(),
            corrected,
        });
    }

    /// Writes one register and reads it back through the decode path,
    /// resolving any faults parked on it this pass. Returns the value the
    /// datapath will use and whether the read must abort the pass.
    fn register_read(&mut self, pass: u64, id: u32, value: u64) -> Result<(u64, bool)> {
        let hits = self.routes.reg.remove(&(pass, id)).unwrap_or_default();
        let stuck = self.routes.stuck_reg.get(&id).cloned().unwrap_or_default();
        if self.protection.registers {
            self.rf.write(id, value)?;
            if !hits.is_empty() || !stuck.is_empty() {
                self.rf.corrupt(id, |bits| {
                    let mut out = bits;
                    for &(_, bit) in &hits {
                        out ^= 1u128 << bit;
                    }
                    for &(_, bit, one) in &stuck {
                        if one {
                            out |= 1u128 << bit;
                        } else {
                            out &= !(1u128 << bit);
                        }
                    }
                    out
                })?;
            }
            let (got, status) = self.rf.read(id)?;
            let ids = hits
                .iter()
                .map(|&(i, _)| i)
                .chain(stuck.iter().map(|&(i, _, _)| i));
            let outcome = match (&status, got == value) {
                (DecodeStatus::Clean, true) => FaultOutcome::Absorbed,
                (DecodeStatus::Corrected(_), true) => FaultOutcome::Corrected,
                (DecodeStatus::DoubleError, _) => FaultOutcome::Uncorrectable,
                // Three or more flips can alias into a clean or "corrected"
                // word that is simply wrong.
                (_, false) => FaultOutcome::Missed,
            };
            for i in ids.collect::<Vec<_>>() {
                self.resolve(i, outcome);
            }
            match status {
                DecodeStatus::Clean => Ok((got, false)),
                DecodeStatus::Corrected(pos) => {
                    self.events.push(DetectionEvent {
                        pass,
                        component: Component::Register,
                        site: format!("reg[{id}]"),
                        latency_cycles: self.prep.anchors.register,
                        status: format!("corrected@{pos}"),
                        corrected: true,
                    });
                    Ok((got, false))
                }
                DecodeStatus::DoubleError => {
                    self.events.push(DetectionEvent {
                        pass,
                        component: Component::Register,
                        site: format!("reg[{id}]"),
                        latency_cycles: self.prep.anchors.register,
                        status: "double_error".into(),
                        corrected: false,
                    });
                    Ok((got, true))
                }
            }
        } else {
            let alpha = if id == REG_SHIFT {
                SHIFT_ALPHA
            } else {
                ADDR_ALPHA
            };
            let mut raw = value as u32;
            for &(_, bit) in &hits {
                if bit < alpha {
                    raw ^= 1 << bit;
                }
            }
            for &(_, bit, one) in &stuck {
                if bit < alpha {
                    raw = apply_to_word(raw, &[], &[(bit, one)]);
                }
            }
            let got = raw as u64;
            for &(i, _) in &hits {
                self.resolve(
                    i,
                    if got == value {
                        FaultOutcome::Absorbed
                    } else {
                        FaultOutcome::Missed
                    },
                );
            }
            for &(i, _, _) in &stuck {
                self.resolve(
                    i,
                    if got == value {
                        FaultOutcome::Absorbed
                    } else {
                        FaultOutcome::Missed
                    },
                );
            }
            self.raw_regs.insert(id, got);
            Ok((got, false))
        }
    }

    /// The relu-and-requantise stage on one accumulator block, run under
    /// redundant execution with majority voting when enabled.
    fn relu_stage(&mut self, pass: u64, spec: ReluSpec) -> Result<()> {
        let acc = self.stream(pass, spec.acc_addr, ElemKind::Acc(self.prep.dtype))?;
        let (shift, abort) = self.register_read(pass, REG_SHIFT, self.prep.requant_shift as u64)?;
        if abort {
            let zero = Block::zeroed(self.n, self.n, ElemKind::Data(self.prep.dtype));
            return self.mvin_block(pass, spec.out_addr, zero, None);
        }
        let shift = (shift as u32) & 31;
        let lanes: Vec<u32> = (0..self.n)
            .flat_map(|r| (0..self.n).map(move |c| (r, c)))
            .map(|(r, c)| acc.get(r, c))
            .collect();
        let oracle: Vec<u32> = lanes.iter().map(|&w| (w as i32).max(0) as u32).collect();
        let mut flips: Vec<(usize, ReplicaFlip)> = self.routes.nl.remove(&pass).unwrap_or_default();
        for &(id, replica, index, bit, one) in &self.routes.stuck_nl {
            if index < oracle.len() && replica < self.protection.nonlinear_copies {
                let have = (oracle[index] >> bit) & 1 == 1;
                if have != one {
                    flips.push((
                        id,
                        ReplicaFlip {
                            replica,
                            index,
                            bit,
                        },
                    ));
                }
            }
        }
        let copies = self.protection.nonlinear_copies;
        let voted = if self.protection.nonlinear {
            let only_flips: Vec<ReplicaFlip> = flips.iter().map(|&(_, f)| f).collect();
            let guarded = redundant_apply(
                NlOp::Relu,
                &lanes,
                ElemKind::Acc(self.prep.dtype),
                copies,
                &only_flips,
            )?;
            let passed = guarded.check.passed();
            let repaired = guarded.votes.iter().any(|&v| (v as u32) < copies);
            if repaired || !passed {
                self.events.push(DetectionEvent {
                    pass,
                    component: Component::Nonlinear,
                    site: format!("nl[{}]", spec.acc_addr),
                    latency_cycles: self.prep.anchors.nonlinear,
                    status: if passed {
                        "vote_repaired".into()
                    } else {
                        "vote_split".into()
                    },
                    corrected: passed && guarded.output == oracle,
                });
            }
            let outcome = if !passed {
                FaultOutcome::Uncorrectable
            } else if guarded.output == oracle {
                FaultOutcome::Corrected
            } else {
                FaultOutcome::Missed
            };
            for &(id, _) in &flips {
                self.resolve(id, outcome);
            }
            guarded.output
        } else {
            let mut out = oracle.clone();
            for &(_, f) in &flips {
                if f.replica == 0 && f.index < out.len() {
                    out[f.index] ^= 1 << f.bit;
                }
            }
            for &(id, f) in &flips {
                let wrong =
                    f.replica == 0 && f.index < out.len() && out[f.index] != oracle[f.index];
                self.resolve(
                    id,
                    if wrong {
                        FaultOutcome::Missed
                    } else {
                        FaultOutcome::Absorbed
                    },
                );
            }
            out
        };
        let mut a1 = Block::zeroed(self.n, self.n, ElemKind::Data(self.prep.dtype));
        for r in 0..self.n {
            for c in 0..self.n {
                let v = (voted[r * self.n + c] as i32 >> shift).clamp(-128, 127) as i8;
                a1.set(r, c, int8_cell(v))?;
            }
        }
        self.mvin_block(pass, spec.out_addr, a1, None)
    }
}

/// Runs one trial of the prepared workload under `protection`, applying
/// `plan` to both runs of a paired experiment. Fault accounting reflects
/// the protected configuration given here; run with
/// `ProtectionConfig::none()` for the unprotected twin.
pub fn run_trial(
    prep: &PreparedWorkload,
    protection: &ProtectionConfig,
    plan: &FaultPlan,
    batch: usize,
) -> Result<TrialResult> {
    if !(2..=3).contains(&protection.nonlinear_copies) {
        return Err(SimError::Config(format!(
            "nonlinear redundancy must use 2 or 3 copies, got {}",
            protection.nonlinear_copies
        )));
    }
    let n = prep.geometry.n();
    let batch = batch % prep.batches();
    let (records, routes) = route_plan(plan);
    let mut ex = Executor {
        prep,
        protection,
        n,
        mem: GuardedMemory::new(prep.capacity_words.max(1)),
        mirror: HashMap::new(),
        rf: RegisterFile::new(),
        raw_regs: HashMap::new(),
        records,
        routes,
        pending: HashMap::new(),
        events: Vec::new(),
    };
    for &(id, alpha) in &[
        (REG_A, ADDR_ALPHA),
        (REG_B, ADDR_ALPHA),
        (REG_D, ADDR_ALPHA),
        (REG_OUT, ADDR_ALPHA),
        (REG_SHIFT, SHIFT_ALPHA),
    ] {
        ex.rf.define(id, alpha)?;
    }
    let initial: Vec<StaticBlock> = prep
        .shared
        .iter()
        .chain(prep.per_batch[batch].iter())
        .cloned()
        .collect();
    for sb in initial {
        ex.mvin_block(0, sb.addr, sb.block, sb.tile)?;
    }

    let mut predictions = Vec::new();
    let mut result_words = Vec::new();
    let data_kind = ElemKind::Data(prep.dtype);
    let acc_kind = ElemKind::Acc(prep.dtype);
    let acc_mask = full_mask(acc_kind);

    for (p, spec) in prep.passes.iter().enumerate() {
        let pass = p as u64;
        ex.apply_memory_faults(pass)?;
        ex.scrub_resident(pass)?;

        let (a_addr, abort_a) = ex.register_read(pass, REG_A, spec.a_addr as u64)?;
        let (b_addr, abort_b) = ex.register_read(pass, REG_B, spec.b_addr as u64)?;
        let (d_addr, abort_d) = ex.register_read(pass, REG_D, spec.d_addr as u64)?;
        let (out_addr, abort_o) = ex.register_read(pass, REG_OUT, spec.out_addr as u64)?;
        let aborted = abort_a || abort_b || abort_d || abort_o;

        if aborted {
            // Untrustworthy addressing: squash the group to zeros rather
            // than compute on garbage. The double error is already logged.
            let zero = zeros_acc(n, prep.dtype);
            let pads = checksum_generate(&zero, acc_mask);
            ex.mirror
                .insert(spec.out_addr, (zero.clone(), pads.clone()));
            if protection.memory {
                ex.mem
                    .mvin_with_checksums(spec.out_addr, zero, acc_mask, pads, Some(spec.tile))?;
            } else {
                ex.mem
                    .mvin(spec.out_addr, zero, acc_mask, Some(spec.tile))?;
            }
        } else {
            let a = ex.stream(pass, a_addr as usize, data_kind)?;
            let b = ex.stream(pass, b_addr as usize, data_kind)?;
            let d = ex.stream(pass, d_addr as usize, acc_kind)?;

            let taps = if protection.array_shield {
                Some(shield_checksums(&a, &b, &d)?)
            } else {
                None
            };

            let input_hits = ex.routes.input.remove(&pass).unwrap_or_default();
            let psum_hits = ex.routes.psum.remove(&pass).unwrap_or_default();
            let faults = ArrayFaults {
                input_flips: input_hits.iter().map(|&(_, f)| f).collect(),
                input_stuck: ex.routes.stuck_input.iter().map(|&(_, f)| f).collect(),
                psum_flips: psum_hits.iter().map(|&(_, f)| f).collect(),
                pe_stuck: ex.routes.stuck_pe.iter().map(|&(_, f)| f).collect(),
            };
            let array_ids: Vec<usize> = input_hits
                .iter()
                .map(|&(id, _)| id)
                .chain(psum_hits.iter().map(|&(id, _)| id))
                .chain(ex.routes.stuck_input.iter().map(|&(id, _)| id))
                .chain(ex.routes.stuck_pe.iter().map(|&(id, _)| id))
                .collect();

            let mut result = gemm(&a, &b, &d, &prep.geometry, &faults)?;
            let local_oracle = if array_ids.is_empty() {
                None
            } else {
                Some(gemm(&a, &b, &d, &prep.geometry, &ArrayFaults::default())?)
            };

            if let Some(taps) = taps {
                let raw = result.clone();
                let outcome = shield_verify(&mut result, &taps, &prep.geometry)?;
                let (status_str, corrected_flag) = match outcome.status {
                    ArrayVerifyStatus::Clean => (None, false),
                    ArrayVerifyStatus::Corrected { row, col } => {
                        let delta = raw.get(row, col) ^ result.get(row, col);
                        ex.mem.log_external_fault(
                            spec.out_addr,
                            FaultSiteRef::Cell { row, col },
                            delta,
                        );
                        (Some(format!("corrected[{row},{col}]")), true)
                    }
                    ArrayVerifyStatus::TileFault { tile_row, tile_col } => {
                        ex.mem.log_external_fault(
                            spec.out_addr,
                            FaultSiteRef::Tile {
                                row: tile_row.unwrap_or(0),
                                col: tile_col,
                            },
                            0,
                        );
                        let r = tile_row.map_or("-".to_string(), |t| t.to_string());
                        (Some(format!("tile_fault[{r},{tile_col}]")), false)
                    }
                    ArrayVerifyStatus::Uncorrectable => {
                        ex.mem
                            .log_external_fault(spec.out_addr, FaultSiteRef::Block, 0);
                        (Some("uncorrectable".into()), false)
                    }
                };
                if let Some(status) = status_str {
                    ex.events.push(DetectionEvent {
                        pass,
                        component: Component::Array,
                        site: format!("array[l{}g{}]", spec.tile.0, spec.tile.1),
                        latency_cycles: prep.anchors.array,
                        status,
                        corrected: corrected_flag,
                    });
                }
                if !array_ids.is_empty() {
                    let oracle = local_oracle.as_ref().expect("oracle built when ids exist");
                    let fault_outcome = match outcome.status {
                        ArrayVerifyStatus::Clean | ArrayVerifyStatus::Corrected { .. } => {
                            if &result == oracle {
                                if matches!(outcome.status, ArrayVerifyStatus::Clean) {
                                    FaultOutcome::Absorbed
                                } else {
                                    FaultOutcome::Corrected
                                }
                            } else {
                                FaultOutcome::Missed
                            }
                        }
                        ArrayVerifyStatus::TileFault { .. } | ArrayVerifyStatus::Uncorrectable => {
                            FaultOutcome::Uncorrectable
                        }
                    };
                    for id in &array_ids {
                        ex.resolve(*id, fault_outcome);
                    }
                }
            } else if !array_ids.is_empty() {
                let oracle = local_oracle.as_ref().expect("oracle built when ids exist");
                let outcome = if &result == oracle {
                    FaultOutcome::Absorbed
                } else {
                    FaultOutcome::Missed
                };
                for id in &array_ids {
                    ex.resolve(*id, outcome);
                }
            }

            // Writeback: checksums are predicted from the verified result
            // before the store traverses the bus, so store-path corruption
            // stays visible to the next verify. The store lands wherever
            // the OUT register points; a silently corrupted register turns
            // this into a wild or dropped store.
            let target = out_addr as usize;
            let predicted = checksum_generate(&result, acc_mask);
            let mirror_block = result.clone();
            let wb_hits = ex.routes.wb.remove(&pass).unwrap_or_default();
            let mut stored = result;
            let mut wb_ids = Vec::new();
            for (id, row, col, bit) in wb_hits {
                let old = stored.get(row, col);
                let new = (old ^ (1 << bit)) & acc_mask;
                stored.set(row, col, new)?;
                wb_ids.push(id);
            }
            let stuck_wb = ex.routes.stuck_wb.clone();
            for (id, row, col, bit, one) in stuck_wb {
                if row < n && col < n {
                    let old = stored.get(row, col);
                    let new = apply_to_word(old, &[], &[(bit, one)]) & acc_mask;
                    if new != old {
                        stored.set(row, col, new)?;
                    }
                    wb_ids.push(id);
                }
            }
            let written = if protection.memory {
                ex.mem
                    .mvin_with_checksums(
                        target,
                        stored,
                        acc_mask,
                        predicted.clone(),
                        Some(spec.tile),
                    )
                    .is_ok()
            } else {
                ex.mem
                    .mvin(target, stored, acc_mask, Some(spec.tile))
                    .is_ok()
            };
            if written {
                ex.mirror.insert(target, (mirror_block, predicted));
                for id in wb_ids {
                    ex.mark_pending(target, id);
                }
            }
            // A failed wild store is dropped on the floor; its bus faults
            // were never consumed and stay absorbed.
        }

        if let Some(relu) = spec.relu {
            ex.relu_stage(pass, relu)?;
        }
        if let Some(readout) = spec.readout {
            let block = ex.stream(pass, readout.acc_addr, acc_kind)?;
            for r in 0..n {
                for c in 0..n {
                    result_words.push(block.get(r, c));
                }
            }
            if prep.classes > 0 {
                for r in 0..n {
                    let mut best = 0usize;
                    for c in 1..readout.cols {
                        if block.value_i32(r, c) > block.value_i32(r, best) {
                            best = c;
                        }
                    }
                    predictions.push(best);
                }
            }
        }
    }

    let error_log = ex.mem.mvout_error_block(false);
    Ok(TrialResult {
        trial: plan.trial,
        batch,
        records: ex.records,
        events: ex.events,
        predictions,
        result_words,
        error_log,
    })
}
