//! Functional and timing model of a systolic-array NPU protected end to end:
//! SEC-DED registers, dual-vector checksummed local memory, a decoupled
//! checksum shield beside the array, and invariant/redundancy guards on the
//! nonlinear operators, plus the fault-injection campaign machinery used to
//! measure what the stack catches and repairs.

pub mod block;
pub mod campaign;
pub mod ecc;
pub mod error;
pub mod fault;
pub mod guarded_memory;
pub mod nonlinear;
pub mod numerics;
pub mod systolic;

pub use block::{Block, ElemKind};
pub use campaign::{
    run_campaign, run_sensitivity, run_trial, CampaignConfig, CampaignOutput, CampaignReport,
    FaultSpec, GemmSpec, MlpSpec, PreparedWorkload, ProtectionConfig, SensitivityTable,
    SiteClassWeights, TrialResult, WorkloadSpec,
};
pub use ecc::{check_width, secded_decode, secded_encode, Codeword, DecodeStatus, RegisterFile};
pub use error::{Result, SimError};
pub use fault::{
    apply_to_word, plan_permanents, plan_transients, trial_rng, FaultPlan, PermanentFault, Site,
    SiteEntry, TransientFault,
};
pub use guarded_memory::{
    checksum_generate, verify_latency, Axis, Checksums, ErrorRecord, FaultSiteRef, GuardedMemory,
    VerifyOutcome, VerifyStatus,
};
pub use nonlinear::{
    layernorm_guarded, redundant_apply, softmax_guarded, GuardCheck, GuardedLanes, GuardedVector,
    NlOp, ReplicaFlip,
};
pub use numerics::{
    decode_word, encode_word, flip_bit, protection_mask, BitMask, DType, Protection, Word,
    WordValue,
};
pub use systolic::array::{
    gemm, transpose_stream, ArrayFaults, InputFlip, InputStuck, Operand, PeStuck, PsumFlip,
};
pub use systolic::shield::{
    configure_shields, float_tolerance, pipeline_schedule, shield_checksums, shield_verify, AccVec,
    ArrayVerifyOutcome, ArrayVerifyStatus, ShieldChecksums, ShieldConfig, TimingReport,
};
pub use systolic::{ArrayGeometry, Dataflow};
