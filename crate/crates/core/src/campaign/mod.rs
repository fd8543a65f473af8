//! Fault-injection campaigns: workload preparation, paired
//! protected/unprotected trials on identical fault plans, aggregation into
//! coverage/latency/slowdown metrics, and the float bit-position
//! sensitivity sweep.

pub mod report;
pub mod sensitivity;
pub mod trial;
pub mod workload;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::fault::{plan_permanents, plan_transients, trial_rng, FaultPlan, PermanentFault};
use crate::numerics::DType;
use crate::systolic::shield::{configure_shields, pipeline_schedule};
use crate::systolic::{ArrayGeometry, Dataflow};

pub use report::{
    aggregate, error_log_csv, error_rows_from, events_csv, trials_csv, AggregateInputs,
    CampaignOutput, CampaignReport, ErrorLogRow, EventRow, LatencyStats, SiteStats, TrialPair,
    TrialRow,
};
pub use sensitivity::{
    sensitivity_csv, sensitivity_sweep, BitClass, SensitivityRow, SensitivityTable,
};
pub use trial::{
    build_inventory, latency_anchors, prepare_workload, run_trial, site_class, Component,
    DetectionEvent, FaultOutcome, FaultRecord, LatencyAnchors, PreparedWorkload, TrialResult,
};
pub use workload::{gaussian_blobs, train_mlp, BlobSpec, Dataset, MlpParams, QuantMlp};

/// The classifier workload: a dense two-layer net on Gaussian blobs,
/// trained in float and deployed quantised.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: usize,
    pub classes: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    pub mean_scale: f32,
    pub noise: f32,
    pub dataset_seed: u64,
    pub train_seed: u64,
    pub epochs: usize,
    pub lr: f32,
}

impl Default for MlpSpec {
    fn default() -> Self {
        MlpSpec {
            input_dim: 64,
            hidden: 32,
            classes: 10,
            train_samples: 512,
            test_samples: 256,
            mean_scale: 1.0,
            noise: 1.0,
            dataset_seed: 7,
            train_seed: 11,
            epochs: 30,
            lr: 0.05,
        }
    }
}

impl MlpSpec {
    pub fn blob_spec(&self) -> BlobSpec {
        BlobSpec {
            classes: self.classes,
            input_dim: self.input_dim,
            train_samples: self.train_samples,
            test_samples: self.test_samples,
            mean_scale: self.mean_scale,
            noise: self.noise,
            seed: self.dataset_seed,
        }
    }
}

/// A bare accumulating GEMM chain with random operands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GemmSpec {
    pub groups: u32,
    pub seed: u64,
}

impl Default for GemmSpec {
    fn default() -> Self {
        GemmSpec { groups: 8, seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WorkloadSpec {
    TinyMlp(MlpSpec),
    SingleGemm(GemmSpec),
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec::TinyMlp(MlpSpec::default())
    }
}

/// Per-module protection toggles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtectionConfig {
    pub registers: bool,
    pub memory: bool,
    pub array_shield: bool,
    pub nonlinear: bool,
    pub nonlinear_copies: u32,
}

impl Default for ProtectionConfig {
    fn default() -> Self {
        ProtectionConfig {
            registers: true,
            memory: true,
            array_shield: true,
            nonlinear: true,
            nonlinear_copies: 3,
        }
    }
}

impl ProtectionConfig {
    /// Everything off: the unprotected twin of a paired experiment.
    pub fn none() -> Self {
        ProtectionConfig {
            registers: false,
            memory: false,
            array_shield: false,
            nonlinear: false,
            nonlinear_copies: 3,
        }
    }
}

/// Relative fault-arrival weight per site class, multiplied by each site's
/// bit count. Storage cells default to full weight; pipeline latch classes
/// are derated for their single-cycle exposure windows, and the load bus
/// defaults to zero because stream hits are sealed under fresh checksums
/// and undetectable by construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SiteClassWeights {
    pub register: f64,
    pub memory: f64,
    pub guardpad: f64,
    pub mvin_stream: f64,
    pub array_input: f64,
    pub pe_psum: f64,
    pub writeback: f64,
    pub nonlinear: f64,
}

impl Default for SiteClassWeights {
    fn default() -> Self {
        SiteClassWeights {
            register: 1.0,
            memory: 1.0,
            guardpad: 1.0,
            mvin_stream: 0.0,
            array_input: 0.05,
            pe_psum: 0.05,
            writeback: 0.05,
            nonlinear: 0.05,
        }
    }
}

impl SiteClassWeights {
    fn all(&self) -> [f64; 8] {
        [
            self.register,
            self.memory,
            self.guardpad,
            self.mvin_stream,
            self.array_input,
            self.pe_psum,
            self.writeback,
            self.nonlinear,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct FaultSpec {
    /// Randomly placed stuck-at faults per trial.
    pub permanents: usize,
    /// Stuck-at faults applied verbatim in every trial.
    pub pinned_permanents: Vec<PermanentFault>,
    pub weights: SiteClassWeights,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CampaignConfig {
    pub seed: u64,
    pub trials: u64,
    /// Per-bit transient upset probability per pass.
    pub rate: f64,
    pub geometry: ArrayGeometry,
    pub dtype: DType,
    pub protection: ProtectionConfig,
    pub workload: WorkloadSpec,
    pub faults: FaultSpec,
    /// Reporting frequency for cycle-to-time conversion.
    pub frequency_mhz: u64,
    pub sensitivity_rates: Vec<f64>,
    pub sensitivity_seed: u64,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            seed: 1,
            trials: 100,
            rate: 1e-5,
            geometry: ArrayGeometry::new(16, 1, Dataflow::WS).expect("static geometry"),
            dtype: DType::Int8,
            protection: ProtectionConfig::default(),
            workload: WorkloadSpec::default(),
            faults: FaultSpec::default(),
            frequency_mhz: 500,
            sensitivity_rates: vec![0.0, 1e-6, 1e-5, 1e-4, 1e-3],
            sensitivity_seed: 17,
        }
    }
}

impl CampaignConfig {
    /// Revalidates the geometry (deserialization bypasses the constructor).
    pub fn geometry(&self) -> Result<ArrayGeometry> {
        ArrayGeometry::new(
            self.geometry.tiles_per_row,
            self.geometry.pes_per_tile_row,
            self.geometry.dataflow,
        )
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry()?;
        if self.trials == 0 {
            return Err(SimError::Config(
                "a campaign needs at least one trial".into(),
            ));
        }
        if !self.rate.is_finite() || !(0.0..=1.0).contains(&self.rate) {
            return Err(SimError::Config(format!(
                "transient rate {} outside [0,1]",
                self.rate
            )));
        }
        if self.frequency_mhz == 0 {
            return Err(SimError::Config(
                "reporting frequency must be positive".into(),
            ));
        }
        if !(2..=3).contains(&self.protection.nonlinear_copies) {
            return Err(SimError::Config(format!(
                "nonlinear redundancy must use 2 or 3 copies, got {}",
                self.protection.nonlinear_copies
            )));
        }
        for w in self.faults.weights.all() {
            if !w.is_finite() || w < 0.0 {
                return Err(SimError::Config(format!("site-class weight {w} invalid")));
            }
        }
        for r in &self.sensitivity_rates {
            if !r.is_finite() || !(0.0..=1.0).contains(r) {
                return Err(SimError::Config(format!(
                    "sensitivity rate {r} outside [0,1]"
                )));
            }
        }
        Ok(())
    }
}

/// Builds the per-trial fault plan: transient arrivals over the weighted
/// site inventory plus the configured permanents.
pub fn plan_for_trial(
    config: &CampaignConfig,
    inventory: &[crate::fault::SiteEntry],
    prep: &PreparedWorkload,
    t: u64,
) -> Result<FaultPlan> {
    let mut rng = trial_rng(config.seed, t);
    let transients = plan_transients(
        inventory,
        config.rate,
        prep.input_bits_per_pass(),
        prep.n_passes(),
        &mut rng,
    )?;
    let mut permanents = plan_permanents(inventory, config.faults.permanents, &mut rng)?;
    permanents.extend(config.faults.pinned_permanents.iter().cloned());
    Ok(FaultPlan {
        master_seed: config.seed,
        trial: t,
        rate: config.rate,
        transients,
        permanents,
    })
}

/// Runs the full paired campaign: every trial executes once protected and
/// once with everything off on the identical plan. Trials fan out over the
/// worker pool; aggregation consumes them in trial order, so reports are
/// byte-stable for a given config and seed.
pub fn run_campaign(config: &CampaignConfig) -> Result<CampaignOutput> {
    config.validate()?;
    let prep = prepare_workload(config)?;
    let inventory = build_inventory(
        &prep,
        &config.faults.weights,
        config.protection.nonlinear_copies,
    );
    let shield_cfg = configure_shields(&prep.geometry)?;
    let timing = pipeline_schedule(prep.n_passes().max(1), &shield_cfg)?;
    let clean: Vec<TrialResult> = (0..prep.batches())
        .map(|b| run_trial(&prep, &config.protection, &FaultPlan::default(), b))
        .collect::<Result<_>>()?;
    let pairs: Vec<TrialPair> = (0..config.trials)
        .into_par_iter()
        .map(|t| -> Result<TrialPair> {
            let plan = plan_for_trial(config, &inventory, &prep, t)?;
            let batch = (t as usize) % prep.batches();
            let protected = run_trial(&prep, &config.protection, &plan, batch)?;
            let unprotected = run_trial(&prep, &ProtectionConfig::none(), &plan, batch)?;
            Ok(TrialPair {
                plan,
                protected,
                unprotected,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    aggregate(
        AggregateInputs {
            config,
            anchors: prep.anchors,
            timing,
            passes_per_trial: prep.n_passes(),
            labels: prep.all_labels(),
            clean: &clean,
        },
        &pairs,
    )
}

/// Trains the float classifier and sweeps flip rates per bit-position
/// class over its parameters.
pub fn run_sensitivity(config: &CampaignConfig) -> Result<SensitivityTable> {
    config.validate()?;
    let WorkloadSpec::TinyMlp(spec) = &config.workload else {
        return Err(SimError::Config(
            "the sensitivity sweep studies the float classifier; configure a tiny_mlp workload"
                .into(),
        ));
    };
    let (train, test) = gaussian_blobs(&spec.blob_spec())?;
    let params = train_mlp(&train, spec.hidden, spec.train_seed, spec.epochs, spec.lr)?;
    sensitivity_sweep(
        &params,
        &test,
        &config.sensitivity_rates,
        config.sensitivity_seed,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> CampaignConfig {
        let mut cfg = CampaignConfig::default();
        cfg.trials = 6;
        cfg.rate = 2e-5;
        cfg.workload = WorkloadSpec::TinyMlp(MlpSpec {
            input_dim: 32,
            hidden: 16,
            train_samples: 256,
            test_samples: 32,
            epochs: 12,
            ..MlpSpec::default()
        });
        cfg
    }

    #[test]
    fn partial_json_config_fills_defaults() {
        let cfg: CampaignConfig = serde_json::from_str(r#"{"trials": 3, "rate": 0.0001}"#).unwrap();
        assert_eq!(cfg.trials, 3);
        assert_eq!(cfg.rate, 1e-4);
        assert_eq!(cfg.seed, 1);
        assert_eq!(cfg.geometry.tiles_per_row, 16);
        assert!(matches!(cfg.workload, WorkloadSpec::TinyMlp(_)));
        let json = serde_json::to_string(&cfg).unwrap();
        let back: CampaignConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn workload_json_uses_a_kind_tag() {
        let cfg: CampaignConfig = serde_json::from_str(
            r#"{"workload": {"kind": "single_gemm", "groups": 4, "seed": 2}}"#,
        )
        .unwrap();
        assert_eq!(
            cfg.workload,
            WorkloadSpec::SingleGemm(GemmSpec { groups: 4, seed: 2 })
        );
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = CampaignConfig::default();
        cfg.trials = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = CampaignConfig::default();
        cfg.rate = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = CampaignConfig::default();
        cfg.faults.weights.memory = -1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = CampaignConfig::default();
        cfg.protection.nonlinear_copies = 5;
        assert!(cfg.validate().is_err());
        let mut cfg = CampaignConfig::default();
        cfg.geometry.tiles_per_row = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn campaign_invariants_hold_and_reports_are_deterministic() {
        let cfg = small_config();
        let a = run_campaign(&cfg).unwrap();
        let r = &a.report;
        assert_eq!(r.trials, 6);
        assert!(r.detected_corrected <= r.detected);
        assert!(r.detected <= r.injected_consequential);
        assert!(r.injected_consequential <= r.injected_faults);
        for c in [
            r.detection_coverage,
            r.correction_coverage,
            r.detection_coverage_raw,
        ]
        .into_iter()
        .flatten()
        {
            assert!((0.0..=1.0).contains(&c));
        }
        assert!(r.timing.slowdown > 1.0);
        // input 32 / hidden 16 on a 16-wide array: 2 k-blocks + 1 layer-2 pass.
        assert_eq!(r.passes_per_trial, 3);
        let b = run_campaign(&cfg).unwrap();
        let ja = serde_json::to_string_pretty(&a.report).unwrap();
        let jb = serde_json::to_string_pretty(&b.report).unwrap();
        assert_eq!(ja, jb, "same config+seed must serialize identically");
    }

    #[test]
    fn zero_rate_campaign_reports_null_coverage_and_equal_accuracy() {
        let mut cfg = small_config();
        cfg.rate = 0.0;
        cfg.trials = 2;
        let out = run_campaign(&cfg).unwrap();
        let r = &out.report;
        assert_eq!(r.injected_faults, 0);
        assert_eq!(r.detection_coverage, None);
        assert_eq!(r.correction_coverage, None);
        assert_eq!(r.accuracy_protected, r.accuracy_unprotected);
        assert_eq!(r.accuracy_protected, r.accuracy_clean);
        assert_eq!(r.output_fidelity_protected, 1.0);
        assert_eq!(r.output_fidelity_unprotected, 1.0);
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"detection_coverage\":null"));
    }

    #[test]
    fn gemm_campaign_runs_on_float_dataflows() {
        let mut cfg = CampaignConfig::default();
        cfg.trials = 3;
        cfg.rate = 1e-5;
        cfg.dtype = DType::Fp32;
        cfg.geometry = ArrayGeometry::new(16, 1, crate::systolic::Dataflow::OS).unwrap();
        cfg.workload = WorkloadSpec::SingleGemm(GemmSpec { groups: 4, seed: 3 });
        let out = run_campaign(&cfg).unwrap();
        assert_eq!(out.report.accuracy_protected, None);
        assert_eq!(out.report.trials, 3);
        assert_eq!(out.trial_rows.len(), 3);
    }

    #[test]
    fn sensitivity_requires_the_classifier_workload() {
        let mut cfg = CampaignConfig::default();
        cfg.workload = WorkloadSpec::SingleGemm(GemmSpec::default());
        assert!(run_sensitivity(&cfg).is_err());
    }
}
