//! Campaign aggregation: folds per-trial fault records, detection events,
//! predictions, and error-block snapshots into one report plus flat CSV
//! tables. Aggregation is deterministic: trials are consumed in index
//! order and every map is ordered.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::fault::FaultPlan;
use crate::guarded_memory::{Axis, ErrorRecord, FaultSiteRef};
use crate::systolic::shield::TimingReport;

use super::trial::{site_class, FaultOutcome, LatencyAnchors, TrialResult};
use super::CampaignConfig;

/// Detection-latency statistics for one component, measured over events.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub events: u64,
    pub worst_cycles: u64,
    pub mean_cycles: f64,
}

/// Outcome tally for one fault-site class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiteStats {
    pub injected: u64,
    pub consequential: u64,
    pub detected: u64,
    pub corrected: u64,
    pub missed: u64,
    pub absorbed: u64,
}

/// One row of trials.csv.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRow {
    pub trial: u64,
    pub batch: usize,
    pub injected: u64,
    pub consequential: u64,
    pub absorbed: u64,
    pub detected: u64,
    pub corrected: u64,
    pub uncorrectable: u64,
    pub missed: u64,
    pub correct_protected: u64,
    pub correct_unprotected: u64,
    pub samples: u64,
    pub fidelity_protected: f64,
    pub fidelity_unprotected: f64,
}

/// One row of events.csv.
#[derive(Debug, Clone, PartialEq)]
pub struct EventRow {
    pub trial: u64,
    pub pass: u64,
    pub component: &'static str,
    pub site: String,
    pub latency_cycles: u64,
    pub status: String,
    pub corrected: bool,
}

/// One row of error_log.csv, aggregated across trials.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorLogRow {
    pub address: usize,
    pub row: String,
    pub col_or_tile: String,
    pub count: u64,
    pub last_delta: u32,
}

/// The campaign's headline numbers. Coverage ratios use the consequential
/// denominator (faults that were not architecturally absorbed); the raw
/// ratio over everything injected is reported alongside.
#[derive(Debug, Clone, Serialize)]
pub struct CampaignReport {
    pub config: CampaignConfig,
    pub trials: u64,
    pub passes_per_trial: u64,
    pub samples_per_trial: u64,
    pub injected_faults: u64,
    pub injected_consequential: u64,
    pub absorbed_faults: u64,
    pub detected: u64,
    pub detected_corrected: u64,
    pub detected_uncorrectable: u64,
    pub missed: u64,
    pub detection_coverage: Option<f64>,
    pub correction_coverage: Option<f64>,
    pub detection_coverage_raw: Option<f64>,
    pub latency_cycles: BTreeMap<String, LatencyStats>,
    pub latency_anchor_cycles: BTreeMap<String, u64>,
    pub worst_detection_latency_us: f64,
    pub timing: TimingReport,
    pub accuracy_clean: Option<f64>,
    pub accuracy_protected: Option<f64>,
    pub accuracy_unprotected: Option<f64>,
    pub output_fidelity_protected: f64,
    pub output_fidelity_unprotected: f64,
    pub per_site: BTreeMap<String, SiteStats>,
}

/// A protected run and its unprotected twin on the identical fault plan.
#[derive(Debug, Clone)]
pub struct TrialPair {
    pub plan: FaultPlan,
    pub protected: TrialResult,
    pub unprotected: TrialResult,
}

/// Everything a campaign run produces, ready for the writers.
#[derive(Debug, Clone)]
pub struct CampaignOutput {
    pub report: CampaignReport,
    pub trial_rows: Vec<TrialRow>,
    pub event_rows: Vec<EventRow>,
    pub error_rows: Vec<ErrorLogRow>,
    pub plans: Vec<FaultPlan>,
}

pub struct AggregateInputs<'a> {
    pub config: &'a CampaignConfig,
    pub anchors: LatencyAnchors,
    pub timing: TimingReport,
    pub passes_per_trial: u64,
    /// Reference labels per batch; empty slices for plain GEMM workloads.
    pub labels: &'a [Vec<usize>],
    /// Fault-free baselines per batch, run under the same protection.
    pub clean: &'a [TrialResult],
}

fn word_fidelity(got: &[u32], want: &[u32]) -> f64 {
    if want.is_empty() {
        return 1.0;
    }
    let matches = got.iter().zip(want.iter()).filter(|(a, b)| a == b).count();
    matches as f64 / want.len() as f64
}

fn correct_count(predictions: &[usize], labels: &[usize]) -> u64 {
    predictions
        .iter()
        .zip(labels.iter())
        .filter(|(p, l)| p == l)
        .count() as u64
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Folds finished trials into the campaign report. Pairs must arrive in
/// trial order; the invariant corrected <= detected <= consequential is
/// enforced and a violation is a bug, not a data point.
pub fn aggregate(inputs: AggregateInputs<'_>, pairs: &[TrialPair]) -> Result<CampaignOutput> {
    let mut trial_rows = Vec::with_capacity(pairs.len());
    let mut event_rows = Vec::new();
    let mut per_site: BTreeMap<String, SiteStats> = BTreeMap::new();
    let mut latency: BTreeMap<String, (u64, u64, u64)> = BTreeMap::new();
    let mut error_map: BTreeMap<(usize, String, String), (u64, u32)> = BTreeMap::new();
    let mut plans = Vec::with_capacity(pairs.len());

    let (mut injected, mut absorbed, mut corrected, mut uncorrectable, mut missed) =
        (0u64, 0u64, 0u64, 0u64, 0u64);
    let (mut correct_p, mut correct_u, mut samples) = (0u64, 0u64, 0u64);
    let (mut fid_p_sum, mut fid_u_sum) = (0.0f64, 0.0f64);
    let mut clean_correct = 0u64;

    for pair in pairs {
        let t = &pair.protected;
        let (mut ti, mut ta, mut tc, mut tu, mut tm) = (0u64, 0u64, 0u64, 0u64, 0u64);
        for rec in &t.records {
            ti += 1;
            let s = per_site
                .entry(site_class(&rec.site).to_string())
                .or_default();
            s.injected += 1;
            match rec.outcome {
                FaultOutcome::Absorbed => {
                    ta += 1;
                    s.absorbed += 1;
                }
                FaultOutcome::Corrected => {
                    tc += 1;
                    s.consequential += 1;
                    s.detected += 1;
                    s.corrected += 1;
                }
                FaultOutcome::Uncorrectable => {
                    tu += 1;
                    s.consequential += 1;
                    s.detected += 1;
                }
                FaultOutcome::Missed => {
                    tm += 1;
                    s.consequential += 1;
                    s.missed += 1;
                }
            }
        }
        injected += ti;
        absorbed += ta;
        corrected += tc;
        uncorrectable += tu;
        missed += tm;

        for ev in &t.events {
            let e = latency
                .entry(ev.component.name().to_string())
                .or_insert((0, 0, 0));
            e.0 += 1;
            e.1 = e.1.max(ev.latency_cycles);
            e.2 += ev.latency_cycles;
            event_rows.push(EventRow {
                trial: t.trial,
                pass: ev.pass,
                component: ev.component.name(),
                site: ev.site.clone(),
                latency_cycles: ev.latency_cycles,
                status: ev.status.clone(),
                corrected: ev.corrected,
            });
        }

        for rec in &t.error_log {
            let (row, col) = render_site(&rec.site);
            let entry = error_map
                .entry((rec.address, row, col))
                .or_insert((0, rec.last_delta));
            entry.0 += rec.count;
            entry.1 = rec.last_delta;
        }

        let clean = inputs
            .clean
            .get(t.batch)
            .ok_or_else(|| SimError::Config(format!("no clean baseline for batch {}", t.batch)))?;
        let labels = inputs.labels.get(t.batch).map(Vec::as_slice).unwrap_or(&[]);
        let cp = correct_count(&t.predictions, labels);
        let cu = correct_count(&pair.unprotected.predictions, labels);
        let fp = word_fidelity(&t.result_words, &clean.result_words);
        let fu = word_fidelity(&pair.unprotected.result_words, &clean.result_words);
        correct_p += cp;
        correct_u += cu;
        clean_correct += correct_count(&clean.predictions, labels);
        samples += labels.len() as u64;
        fid_p_sum += fp;
        fid_u_sum += fu;

        trial_rows.push(TrialRow {
            trial: t.trial,
            batch: t.batch,
            injected: ti,
            consequential: ti - ta,
            absorbed: ta,
            detected: tc + tu,
            corrected: tc,
            uncorrectable: tu,
            missed: tm,
            correct_protected: cp,
            correct_unprotected: cu,
            samples: labels.len() as u64,
            fidelity_protected: fp,
            fidelity_unprotected: fu,
        });
        plans.push(pair.plan.clone());
    }

    let detected = corrected + uncorrectable;
    let consequential = detected + missed;
    if corrected > detected || detected > consequential || consequential > injected {
        return Err(SimError::Config(format!(
            "fault accounting violated corrected({corrected}) <= detected({detected}) \
             <= consequential({consequential}) <= injected({injected})"
        )));
    }

    let latency_cycles = latency
        .into_iter()
        .map(|(k, (n, worst, sum))| {
            (
                k,
                LatencyStats {
                    events: n,
                    worst_cycles: worst,
                    mean_cycles: sum as f64 / n as f64,
                },
            )
        })
        .collect();
    let latency_anchor_cycles: BTreeMap<String, u64> = [
        ("register".to_string(), inputs.anchors.register),
        ("memory".to_string(), inputs.anchors.memory),
        ("array".to_string(), inputs.anchors.array),
        ("nonlinear".to_string(), inputs.anchors.nonlinear),
    ]
    .into_iter()
    .collect();

    let n_trials = pairs.len() as u64;
    let has_labels = samples > 0;
    let report = CampaignReport {
        config: inputs.config.clone(),
        trials: n_trials,
        passes_per_trial: inputs.passes_per_trial,
        samples_per_trial: inputs.labels.first().map(|l| l.len() as u64).unwrap_or(0),
        injected_faults: injected,
        injected_consequential: consequential,
        absorbed_faults: absorbed,
        detected,
        detected_corrected: corrected,
        detected_uncorrectable: uncorrectable,
        missed,
        detection_coverage: ratio(detected, consequential),
        correction_coverage: ratio(corrected, detected),
        detection_coverage_raw: ratio(detected, injected),
        latency_cycles,
        latency_anchor_cycles,
        worst_detection_latency_us: inputs.anchors.worst() as f64
            / inputs.config.frequency_mhz as f64,
        timing: inputs.timing,
        accuracy_clean: has_labels.then(|| clean_correct as f64 / samples as f64),
        accuracy_protected: has_labels.then(|| correct_p as f64 / samples as f64),
        accuracy_unprotected: has_labels.then(|| correct_u as f64 / samples as f64),
        output_fidelity_protected: if pairs.is_empty() {
            1.0
        } else {
            fid_p_sum / pairs.len() as f64
        },
        output_fidelity_unprotected: if pairs.is_empty() {
            1.0
        } else {
            fid_u_sum / pairs.len() as f64
        },
        per_site,
    };

    let error_rows = error_map
        .into_iter()
        .map(|((address, row, col), (count, delta))| ErrorLogRow {
            address,
            row,
            col_or_tile: col,
            count,
            last_delta: delta,
        })
        .collect();

    Ok(CampaignOutput {
        report,
        trial_rows,
        event_rows,
        error_rows,
        plans,
    })
}

/// Error-block site rendering: data cells use bare indices, checksum hits
/// keep their axis prefix, tile verdicts are prefixed `t`, and whole-block
/// verdicts render as dashes.
fn render_site(site: &FaultSiteRef) -> (String, String) {
    match site {
        FaultSiteRef::Cell { row, col } => (row.to_string(), col.to_string()),
        FaultSiteRef::Checksum { axis, index } => {
            let tag = match axis {
                Axis::Row => format!("r{index}"),
                Axis::Col => format!("c{index}"),
            };
            ("sum".to_string(), tag)
        }
        FaultSiteRef::Tile { row, col } => (format!("t{row}"), format!("t{col}")),
        FaultSiteRef::Block => ("-".to_string(), "-".to_string()),
    }
}

pub fn trials_csv(rows: &[TrialRow]) -> String {
    let mut s = String::from(
        "trial,batch,injected,consequential,absorbed,detected,corrected,uncorrectable,missed,\
         correct_protected,correct_unprotected,samples,fidelity_protected,fidelity_unprotected\n",
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.trial,
            r.batch,
            r.injected,
            r.consequential,
            r.absorbed,
            r.detected,
            r.corrected,
            r.uncorrectable,
            r.missed,
            r.correct_protected,
            r.correct_unprotected,
            r.samples,
            r.fidelity_protected,
            r.fidelity_unprotected
        );
    }
    s
}

pub fn events_csv(rows: &[EventRow]) -> String {
    let mut s = String::from("trial,pass,component,site,latency_cycles,status,corrected\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.trial, r.pass, r.component, r.site, r.latency_cycles, r.status, r.corrected
        );
    }
    s
}

pub fn error_log_csv(rows: &[ErrorLogRow]) -> String {
    let mut s = String::from("address,row,col_or_tile,count,last_delta_hex\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},0x{:08x}",
            r.address, r.row, r.col_or_tile, r.count, r.last_delta
        );
    }
    s
}

/// Aggregates raw per-trial error records the way the writers expect;
/// exposed for replay, which deals in a single trial.
pub fn error_rows_from(records: &[ErrorRecord]) -> Vec<ErrorLogRow> {
    let mut map: BTreeMap<(usize, String, String), (u64, u32)> = BTreeMap::new();
    for rec in records {
        let (row, col) = render_site(&rec.site);
        let e = map
            .entry((rec.address, row, col))
            .or_insert((0, rec.last_delta));
        e.0 += rec.count;
        e.1 = rec.last_delta;
    }
    map.into_iter()
        .map(|((address, row, col), (count, delta))| ErrorLogRow {
            address,
            row,
            col_or_tile: col,
            count,
            last_delta: delta,
        })
        .collect()
}
