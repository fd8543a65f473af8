//! Acceptance suite: one test per shipping criterion, each printing a
//! `criterion N: PASS/FAIL` verdict line (visible with `--nocapture` or on
//! failure) before asserting the stated thresholds. Tolerances are pinned
//! here, not tuned elsewhere.
//!
//! Every expected value is computed by an oracle local to this file:
//! exhaustive enumeration for the ECC code, bit-exact block comparisons
//! for the memory checksums, an independent triple-loop reference for the
//! shield sums, and closed-form counts for the timing model.

use std::collections::BTreeSet;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use guardsim_core::campaign::{prepare_workload, BitClass};
use guardsim_core::{
    check_width, configure_shields, pipeline_schedule, protection_mask, run_campaign,
    run_sensitivity, run_trial, secded_decode, secded_encode, shield_checksums, AccVec,
    ArrayGeometry, Axis, Block, CampaignConfig, DType, Dataflow, DecodeStatus, ElemKind, FaultPlan,
    GemmSpec, GuardedMemory, MlpSpec, Protection, ProtectionConfig, VerifyStatus, WorkloadSpec,
};

fn verdict(criterion: u32, name: &str, pass: bool) {
    let flag = if pass { "PASS" } else { "FAIL" };
    println!("criterion {criterion}: {flag} ({name})");
}

/// Criterion 1: SEC-DED exhaustive correctness. For each register width,
/// every single-bit flip of every codeword must decode back to the exact
/// data word, and every double flip must be flagged DoubleError with no
/// silent miscorrection. Budget: under 10 seconds.
#[test]
fn criterion_1_ecc_exhaustive() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xec);
    let mut singles = 0u64;
    let mut doubles = 0u64;
    let mut wrong = Vec::new();

    for alpha in [8u32, 16, 32] {
        let width = alpha + check_width(alpha);
        for _ in 0..256 {
            let data = rng.random::<u64>() & ((1u64 << alpha) - 1);
            let clean = secded_encode(data, alpha).unwrap();
            for i in 0..width {
                let mut cw = clean;
                cw.flip(i).unwrap();
                let (decoded, status) = secded_decode(&cw);
                singles += 1;
                if !matches!(status, DecodeStatus::Corrected(_)) || decoded != data {
                    wrong.push(format!("alpha {alpha} single flip at {i}: {status:?}"));
                }
            }
            for i in 0..width {
                for j in i + 1..width {
                    let mut cw = clean;
                    cw.flip(i).unwrap();
                    cw.flip(j).unwrap();
                    let (_, status) = secded_decode(&cw);
                    doubles += 1;
                    if status != DecodeStatus::DoubleError {
                        wrong.push(format!("alpha {alpha} double flip {i},{j}: {status:?}"));
                    }
                }
            }
        }
    }

    let elapsed = started.elapsed();
    let pass = wrong.is_empty() && elapsed.as_secs() < 10;
    verdict(1, "ECC exhaustive correctness", pass);
    assert!(
        wrong.is_empty(),
        "{} bad decodes, first: {}",
        wrong.len(),
        wrong[0]
    );
    assert!(
        elapsed.as_secs() < 10,
        "{singles} singles + {doubles} doubles took {elapsed:?}"
    );
    assert!(
        singles >= 256 * (13 + 22 + 39),
        "enumeration shrank: {singles} singles"
    );
}

fn random_block(rng: &mut ChaCha8Rng, n: usize, kind: ElemKind) -> Block {
    let mut block = Block::zeroed(n, n, kind);
    for r in 0..n {
        for c in 0..n {
            match kind {
                ElemKind::Data(DType::Int8) => {
                    block.set_i32(r, c, rng.random::<i8>() as i32).unwrap()
                }
                ElemKind::Acc(DType::Int8) => {
                    block.set_i32(r, c, rng.random::<i16>() as i32).unwrap()
                }
                _ => block.set_f32(r, c, rng.random_range(-2.0..2.0)).unwrap(),
            }
        }
    }
    block
}

/// Criterion 2: local-memory checksum behaviour at scale. Masked-field
/// data flips are always corrected bit-exactly, guardpad flips never touch
/// data, and clean blocks never trigger a false positive. Budget: 30 s.
#[test]
fn criterion_2_memory_checksums() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x3e);
    let combos: Vec<(usize, ElemKind)> = [4usize, 16]
        .into_iter()
        .flat_map(|n| {
            [
                (n, ElemKind::Data(DType::Int8)),
                (n, ElemKind::Data(DType::Fp32)),
                (n, ElemKind::Data(DType::Bf16)),
                (n, ElemKind::Acc(DType::Int8)),
            ]
        })
        .collect();

    let mut data_injections = 0u32;
    let mut uncorrected = 0u32;
    let mut pad_injections = 0u32;
    let mut pad_data_touches = 0u32;
    let mut pad_unflagged = 0u32;
    let mut clean_checks = 0u32;
    let mut false_positives = 0u32;

    for (n, kind) in &combos {
        let (n, kind) = (*n, *kind);
        let mask = match kind {
            ElemKind::Data(dt) => protection_mask(dt, Protection::Full).unwrap().mask,
            ElemKind::Acc(_) => u32::MAX,
        };
        let mut mem = GuardedMemory::new(4096);
        let block = random_block(&mut rng, n, kind);
        mem.mvin(0, block.clone(), mask, None).unwrap();

        // 10_000 single-bit data flips spread over 8 combos.
        for _ in 0..1250 {
            let r = rng.random_range(0..n);
            let c = rng.random_range(0..n);
            let masked_bits: Vec<u32> = (0..32).filter(|b| (mask >> b) & 1 == 1).collect();
            let bit = masked_bits[rng.random_range(0..masked_bits.len())];
            mem.corrupt_data(0, r, c, |w| w ^ (1 << bit)).unwrap();
            let (_, _, outcome) = mem.stream_out(0, 0, 0, n, n).unwrap();
            data_injections += 1;
            let restored = mem.block(0).unwrap() == &block;
            if !matches!(outcome.status, VerifyStatus::Corrected(_)) || !restored {
                uncorrected += 1;
            }
        }

        // Guardpad-only flips: flag or repair, never modify data. Stored
        // sums live in width-bit registers, so only those bits can flip.
        let pad_width = mem.checksums(0).unwrap().width;
        for _ in 0..1250 {
            let axis = if rng.random::<bool>() {
                Axis::Row
            } else {
                Axis::Col
            };
            let index = rng.random_range(0..n);
            let bit = rng.random_range(0..pad_width);
            mem.corrupt_checksum(0, axis, index, |w| w ^ (1 << bit))
                .unwrap();
            let (_, _, outcome) = mem.stream_out(0, 0, 0, n, n).unwrap();
            pad_injections += 1;
            if mem.block(0).unwrap() != &block {
                pad_data_touches += 1;
                // Re-seed the block so later iterations compare sanely.
                mem.mvin(0, block.clone(), mask, None).unwrap();
            }
            match outcome.status {
                VerifyStatus::ChecksumRepaired(_) | VerifyStatus::Uncorrectable => {}
                _ => pad_unflagged += 1,
            }
        }

        // Clean verifies: zero false positives.
        for _ in 0..1250 {
            let (_, _, outcome) = mem.stream_out(0, 0, 0, n, n).unwrap();
            clean_checks += 1;
            if outcome.status != VerifyStatus::Clean {
                false_positives += 1;
            }
        }
    }

    let elapsed = started.elapsed();
    let pass = uncorrected == 0
        && pad_data_touches == 0
        && pad_unflagged == 0
        && false_positives == 0
        && data_injections >= 10_000
        && pad_injections >= 10_000
        && clean_checks >= 10_000
        && elapsed.as_secs() < 30;
    verdict(2, "memory checksum correction", pass);
    assert_eq!(uncorrected, 0, "of {data_injections} masked data flips");
    assert_eq!(pad_data_touches, 0, "guardpad flips modified data words");
    assert_eq!(
        pad_unflagged, 0,
        "guardpad flips neither repaired nor flagged"
    );
    assert_eq!(false_positives, 0, "of {clean_checks} clean verifies");
    assert!(elapsed.as_secs() < 30, "{elapsed:?}");
}

/// Reference row/column sums of A*B+D computed by a plain triple loop,
/// wrapping i32 for Int8 and f64 accumulation for the float dtypes.
fn reference_sums(a: &Block, b: &Block, d: &Block, n: usize, int: bool) -> (Vec<f64>, Vec<f64>) {
    let mut rows = vec![0f64; n];
    let mut cols = vec![0f64; n];
    let mut irows = vec![0i32; n];
    let mut icols = vec![0i32; n];
    for i in 0..n {
        for j in 0..n {
            if int {
                let mut acc = d.value_i32(i, j);
                for k in 0..n {
                    acc = acc.wrapping_add(a.value_i32(i, k).wrapping_mul(b.value_i32(k, j)));
                }
                irows[i] = irows[i].wrapping_add(acc);
                icols[j] = icols[j].wrapping_add(acc);
            } else {
                let mut acc = d.value_f32(i, j) as f64;
                for k in 0..n {
                    acc += a.value_f32(i, k) as f64 * b.value_f32(k, j) as f64;
                }
                rows[i] += acc;
                cols[j] += acc;
            }
        }
    }
    if int {
        (
            irows.into_iter().map(f64::from).collect(),
            icols.into_iter().map(f64::from).collect(),
        )
    } else {
        (rows, cols)
    }
}

fn check_matches(check: &AccVec, reference: &[f64], int: bool, rel: f64) -> bool {
    match check {
        AccVec::Int(v) => {
            int && v.len() == reference.len()
                && v.iter()
                    .zip(reference)
                    .all(|(got, want)| f64::from(*got) == *want)
        }
        AccVec::Float(v) => {
            !int && v.len() == reference.len()
                && v.iter()
                    .zip(reference)
                    .all(|(got, want)| (f64::from(*got) - want).abs() <= rel * want.abs().max(1.0))
        }
    }
}

/// Criterion 3: the shield's predicted sums equal brute-force row/column
/// sums of A*B+D: exactly for Int8 (even under wrapping), within 1e-4
/// relative for the float dtypes. 1,000 random triples per dtype.
#[test]
fn criterion_3_shield_oracle_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xab);
    let mut failures = 0u32;
    let mut triples = 0u32;
    let mut first = String::new();
    for dtype in [DType::Int8, DType::Fp32, DType::Bf16] {
        let int = dtype == DType::Int8;
        let rel = if int { 0.0 } else { 1e-4 };
        for n in [2usize, 4, 8, 16] {
            for _ in 0..250 {
                let a = random_block(&mut rng, n, ElemKind::Data(dtype));
                let b = random_block(&mut rng, n, ElemKind::Data(dtype));
                let d = random_block(&mut rng, n, ElemKind::Acc(dtype));
                let checks = shield_checksums(&a, &b, &d).unwrap();
                let (rows, cols) = reference_sums(&a, &b, &d, n, int);
                triples += 1;
                if !check_matches(&checks.row_check, &rows, int, rel)
                    || !check_matches(&checks.col_check, &cols, int, rel)
                {
                    failures += 1;
                    if first.is_empty() {
                        first = format!(
                            "{dtype:?} n={n}: rows {:?} vs {rows:?}, cols {:?} vs {cols:?}",
                            checks.row_check, checks.col_check
                        );
                    }
                }
            }
        }
    }
    let pass = failures == 0 && triples == 3000;
    verdict(3, "shield equals brute-force ABFT sums", pass);
    assert_eq!(failures, 0, "of {triples} triples; first: {first}");
}

/// Criterion 4: shield sizing at the two reference geometries, plus the
/// fit property sigma(K_min) <= L_SA across the geometry grid.
#[test]
fn criterion_4_shield_sizing() {
    let a = configure_shields(&ArrayGeometry::new(16, 1, Dataflow::WS).unwrap()).unwrap();
    let b = configure_shields(&ArrayGeometry::new(32, 4, Dataflow::WS).unwrap()).unwrap();

    let mut grid_violations = Vec::new();
    let mut grid_points = 0u32;
    for i in 1..=32u32 {
        for j in 1..=8u32 {
            let geometry = ArrayGeometry::new(i, j, Dataflow::WS).unwrap();
            // Degenerate geometries (zero/negative service margin) must
            // refuse a shield rather than report a bogus fit.
            let Ok(cfg) = configure_shields(&geometry) else {
                continue;
            };
            grid_points += 1;
            if cfg.shield_window > cfg.array_window {
                grid_violations.push((i, j, cfg.shield_window, cfg.array_window));
            }
        }
    }

    let pass = (a.shield_count, a.shield_window, a.array_window) == (1, 37, 47)
        && (b.shield_count, b.shield_window, b.array_window) == (2, 130, 191)
        && grid_violations.is_empty();
    verdict(4, "shield sizing K and sigma", pass);
    assert_eq!(
        (a.shield_count, a.shield_window, a.array_window),
        (1, 37, 47)
    );
    assert_eq!(
        (b.shield_count, b.shield_window, b.array_window),
        (2, 130, 191)
    );
    assert!(
        grid_violations.is_empty(),
        "sigma > L_SA at {grid_violations:?} of {grid_points} geometries"
    );
}

/// Criterion 5: slowdown envelope. The stated bound is slowdown <= 1.07
/// for every n_groups >= 8 on both reference geometries, approaching 1.0
/// as the group count grows, with the two-geometry geometric mean at
/// n_groups = 32 inside [1.00, 1.07].
///
/// The pipeline model puts the n_groups = 8 points at ~1.0734 (16x1) and
/// ~1.0760 (32x4): the one-time fill and drain stages amortise over only
/// eight groups. The bound as stated first holds from n_groups = 9. The
/// assertions below encode the criterion verbatim, so this test documents
/// the discrepancy by failing at the n_groups = 8 point.
#[test]
fn criterion_5_slowdown_envelope() {
    let geometries = [
        ArrayGeometry::new(16, 1, Dataflow::WS).unwrap(),
        ArrayGeometry::new(32, 4, Dataflow::WS).unwrap(),
    ];
    let mut worst_at_8 = 0f64;
    let mut bound_violations = Vec::new();
    let mut approach_ok = true;
    let mut geomean_at_32 = 1f64;

    for geometry in &geometries {
        let cfg = configure_shields(geometry).unwrap();
        let mut last = f64::MAX;
        for n_groups in [8u64, 16, 32, 64, 256, 4096] {
            let timing = pipeline_schedule(n_groups, &cfg).unwrap();
            if timing.slowdown > 1.07 {
                bound_violations.push((
                    geometry.tiles_per_row,
                    geometry.pes_per_tile_row,
                    n_groups,
                    timing.slowdown,
                ));
            }
            if n_groups == 8 {
                worst_at_8 = worst_at_8.max(timing.slowdown);
            }
            if n_groups == 32 {
                geomean_at_32 *= timing.slowdown;
            }
            // Monotone approach toward 1.0 from above.
            approach_ok &= timing.slowdown < last && timing.slowdown >= 1.0;
            last = timing.slowdown;
        }
        let tail = pipeline_schedule(4096, &cfg).unwrap().slowdown;
        approach_ok &= tail < 1.001;
    }
    geomean_at_32 = geomean_at_32.sqrt();

    let pass = bound_violations.is_empty() && approach_ok && (1.0..=1.07).contains(&geomean_at_32);
    verdict(5, "slowdown envelope", pass);
    assert!(
        approach_ok,
        "slowdown does not fall monotonically toward 1.0"
    );
    assert!(
        (1.0..=1.07).contains(&geomean_at_32),
        "geometric mean at 32 groups: {geomean_at_32}"
    );
    assert!(
        bound_violations.is_empty(),
        "slowdown exceeds 1.07 at {bound_violations:?}; the eight-group points \
         sit at {worst_at_8:.4} and the bound first holds from nine groups"
    );
}

fn coverage_config(rate: f64, trials: u64) -> CampaignConfig {
    CampaignConfig {
        seed: 11,
        trials,
        rate,
        ..CampaignConfig::default()
    }
}

/// Criterion 6: coverage at desk scale on the 16x1 Int8 geometry with the
/// classifier workload. At rates <= 1e-4 with at least 1,000 consequential
/// transients: detection >= 0.99 and correction >= 0.95; both coverages
/// monotonically non-increasing as the rate climbs to 1e-2. Budget: 5 min.
#[test]
fn criterion_6_coverage_trends() {
    let started = Instant::now();
    // Arrivals scale with the rate, so low rates need many trials to bank
    // at least a thousand consequential faults.
    let grid = [(1e-5, 4000u64), (1e-4, 1000), (1e-3, 300), (1e-2, 60)];
    let mut detection = Vec::new();
    let mut correction = Vec::new();
    let mut consequential = Vec::new();
    for (rate, trials) in grid {
        let report = run_campaign(&coverage_config(rate, trials)).unwrap().report;
        detection.push(report.detection_coverage.unwrap_or(1.0));
        correction.push(report.correction_coverage.unwrap_or(1.0));
        consequential.push(report.injected_consequential);
    }
    let elapsed = started.elapsed();

    let enough = consequential[0] >= 1000 && consequential[1] >= 1000;
    let strong = detection[0] >= 0.99
        && detection[1] >= 0.99
        && correction[0] >= 0.95
        && correction[1] >= 0.95;
    let monotone =
        detection.windows(2).all(|w| w[1] <= w[0]) && correction.windows(2).all(|w| w[1] <= w[0]);
    let pass = enough && strong && monotone && elapsed.as_secs() < 300;
    verdict(6, "coverage at desk scale", pass);
    assert!(enough, "consequential faults per rate: {consequential:?}");
    assert!(
        strong,
        "detection {detection:?} correction {correction:?} at rates 1e-5 and 1e-4"
    );
    assert!(
        monotone,
        "coverage rose with rate: detection {detection:?} correction {correction:?}"
    );
    assert!(elapsed.as_secs() < 300, "{elapsed:?}");
}

/// Criterion 7: modeled worst-case detection latency per component stays
/// within 500 cycles (1 us at 500 MHz) at both reference geometries, and
/// the array path is the largest because its verdict waits for the shield.
#[test]
fn criterion_7_detection_latency() {
    let mut pass = true;
    let mut rows = Vec::new();
    for (i, j) in [(16u32, 1u32), (32, 4)] {
        let geometry = ArrayGeometry::new(i, j, Dataflow::WS).unwrap();
        let n = geometry.n();
        let anchors = guardsim_core::campaign::latency_anchors(&geometry, n, n).unwrap();
        let worst = anchors.worst();
        let micros = worst as f64 / 500.0;
        let array_largest = anchors.array >= anchors.register
            && anchors.array >= anchors.memory
            && anchors.array >= anchors.nonlinear;
        pass &= worst <= 500 && micros <= 1.0 && array_largest;
        rows.push((i, j, anchors, micros));
    }
    verdict(7, "sub-microsecond detection latency", pass);
    for (i, j, anchors, micros) in rows {
        assert!(
            anchors.worst() <= 500,
            "({i},{j}): {anchors:?} -> {micros:.3} us"
        );
        assert!(
            anchors.array >= anchors.register
                && anchors.array >= anchors.memory
                && anchors.array >= anchors.nonlinear,
            "({i},{j}): array path is not the largest: {anchors:?}"
        );
    }
}

/// Criterion 8: bit-position sensitivity of the float classifier at rate
/// 1e-5. Mantissa flips move accuracy by under one point; flips in the
/// sign/exponent region cost at least ten points; the rate-0 column equals
/// the fault-free baseline exactly.
///
/// The model is sized so that upsets actually arrive at 1e-5: ~820k
/// parameter bits give about eight expected flips per inference.
#[test]
fn criterion_8_position_sensitivity() {
    let config = CampaignConfig {
        workload: WorkloadSpec::TinyMlp(MlpSpec {
            input_dim: 256,
            hidden: 96,
            classes: 10,
            train_samples: 1024,
            test_samples: 256,
            mean_scale: 1.0,
            noise: 1.0,
            dataset_seed: 7,
            train_seed: 11,
            epochs: 20,
            lr: 0.05,
        }),
        sensitivity_rates: vec![0.0, 1e-5],
        ..CampaignConfig::default()
    };
    let table = run_sensitivity(&config).unwrap();
    let baseline = table.baseline_accuracy;
    let drop = |class: BitClass| -> f64 {
        let accuracy = table.accuracy_at(class, 1e-5).unwrap();
        (baseline - accuracy) * 100.0
    };

    let zero_exact = [
        BitClass::Sign,
        BitClass::ExponentHigh,
        BitClass::Mantissa,
        BitClass::SignExponent,
    ]
    .into_iter()
    .all(|c| table.accuracy_at(c, 0.0).unwrap() == baseline);

    let mantissa = drop(BitClass::Mantissa);
    let sensitive = drop(BitClass::SignExponent);
    let exponent = drop(BitClass::ExponentHigh);

    let pass = zero_exact && mantissa < 1.0 && sensitive >= 10.0 && exponent >= 10.0;
    verdict(8, "bit-position sensitivity", pass);
    assert!(zero_exact, "rate-0 column deviates from the baseline");
    assert!(mantissa < 1.0, "mantissa flips cost {mantissa:.2} points");
    assert!(
        sensitive >= 10.0,
        "sign/exponent flips cost only {sensitive:.2} points"
    );
    assert!(
        exponent >= 10.0,
        "high-exponent flips cost only {exponent:.2} points"
    );
}

/// Criterion 9: identical config and seed give byte-identical report.json,
/// trial order and parallel scheduling notwithstanding.
#[test]
fn criterion_9_determinism() {
    let config = CampaignConfig {
        seed: 21,
        trials: 8,
        rate: 5e-5,
        geometry: ArrayGeometry::new(8, 1, Dataflow::WS).unwrap(),
        workload: WorkloadSpec::SingleGemm(GemmSpec { groups: 3, seed: 5 }),
        ..CampaignConfig::default()
    };
    let a = serde_json::to_string_pretty(&run_campaign(&config).unwrap().report).unwrap();
    let b = serde_json::to_string_pretty(&run_campaign(&config).unwrap().report).unwrap();
    let pass = a.as_bytes() == b.as_bytes();
    verdict(9, "byte-identical reports", pass);
    assert!(pass, "reports differ between identical runs");
}

/// Criterion 10: with protection enabled and zero faults, workload outputs
/// are bit-identical to the unprotected run, for both the classifier and
/// the plain GEMM workload.
#[test]
fn criterion_10_protection_is_transparent() {
    let mut pass = true;
    let mut checked = Vec::new();
    let configs = [
        CampaignConfig::default(),
        CampaignConfig {
            dtype: DType::Fp32,
            geometry: ArrayGeometry::new(8, 1, Dataflow::WS).unwrap(),
            workload: WorkloadSpec::SingleGemm(GemmSpec { groups: 4, seed: 9 }),
            ..CampaignConfig::default()
        },
    ];
    for config in &configs {
        let prep = prepare_workload(config).unwrap();
        let plan = FaultPlan::default();
        for batch in 0..prep.batches() {
            let on = run_trial(&prep, &config.protection, &plan, batch).unwrap();
            let off = run_trial(&prep, &ProtectionConfig::none(), &plan, batch).unwrap();
            let same = on.result_words == off.result_words && on.predictions == off.predictions;
            pass &= same && on.events.is_empty() && off.events.is_empty();
            checked.push((batch, same));
        }
    }
    // The two workloads exercise disjoint block layouts; make sure both ran.
    let batches: BTreeSet<usize> = checked.iter().map(|(b, _)| *b).collect();
    pass &= !batches.is_empty();
    verdict(10, "protection decoupled from results", pass);
    assert!(pass, "outputs diverged: {checked:?}");
}
