//! Guards for the nonlinear operators.
//!
//! Two kinds of protection, matching what each operator gives us for free:
//!
//! * LayerNorm and softmax have algebraic invariants over their outputs (the
//!   normalised values sum to zero; the probabilities sum to one), so a
//!   single extra reduction checks the whole vector. The check accumulator is
//!   double width, like the array's, so its own rounding noise sits far below
//!   the tolerances.
//! * ReLU, GELU and the pooling ops have no such invariant, so they run on
//!   two or three redundant lanes and vote per element on the exact bit
//!   pattern. Three lanes repair any single-lane upset; two lanes only
//!   detect.
//!
//! The invariant checks catch any fault that moves an output by more than the
//! tolerance. Flips confined to low mantissa bits, or on elements whose
//! magnitude sits under the tolerance floor, can pass unseen; the property
//! tests below pin down exactly that boundary instead of claiming more.

use serde::{Deserialize, Serialize};

use crate::block::ElemKind;
use crate::error::{Result, SimError};
use crate::numerics::DType;

/// Outcome of an invariant or voting check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GuardCheck {
    Pass,
    Fail {
        measured: f64,
        expected: f64,
        tolerance: f64,
    },
}

impl GuardCheck {
    pub fn passed(&self) -> bool {
        matches!(self, GuardCheck::Pass)
    }
}

/// Result of a guarded vector operator (LayerNorm, softmax).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuardedVector {
    pub output: Vec<f32>,
    pub check: GuardCheck,
}

/// Bit flip injected into one replica's output element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplicaFlip {
    pub replica: u32,
    pub index: usize,
    pub bit: u32,
}

/// Result of a redundantly executed elementwise operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuardedLanes {
    pub output: Vec<u32>,
    pub check: GuardCheck,
    /// Per element: replicas agreeing with the emitted pattern; 0 means no
    /// majority existed and the element is untrusted.
    pub votes: Vec<u8>,
}

/// Zero-sum tolerance for the LayerNorm guard. The absolute floor of one
/// keeps degenerate inputs (constant vectors, where the normalised values are
/// pure rounding noise) from tripping the check.
pub fn layernorm_tolerance(n: usize, max_abs_z: f32) -> f64 {
    n as f64 * (2.0f64).powi(-16) * f64::from(max_abs_z).max(1.0)
}

/// Unit-sum tolerance for the softmax guard, set by the element precision.
pub fn softmax_tolerance(dtype: DType) -> Result<f64> {
    match dtype {
        DType::Bf16 => Ok((2.0f64).powi(-12)),
        DType::Fp32 => Ok((2.0f64).powi(-20)),
        DType::Int8 => Err(SimError::Unsupported(
            "softmax guard is float-domain; dequantise first".into(),
        )),
    }
}

fn apply_flips(values: &mut [f32], flips: &[(usize, u32)]) -> Result<()> {
    for &(index, bit) in flips {
        if index >= values.len() {
            return Err(SimError::Index {
                what: "guard flip element",
                index,
                limit: values.len(),
            });
        }
        if bit >= 32 {
            return Err(SimError::Index {
                what: "guard flip bit",
                index: bit as usize,
                limit: 32,
            });
        }
        values[index] = f32::from_bits(values[index].to_bits() ^ (1 << bit));
    }
    Ok(())
}

/// LayerNorm with the zero-sum guard.
///
/// Normalises `x`, checks that the pre-affine values sum to (nearly) zero,
/// then applies the affine transform. `flips` corrupt the normalised values
/// before the guard sees them, which is where upsets in the normaliser
/// datapath land.
pub fn layernorm_guarded(
    x: &[f32],
    gamma: &[f32],
    beta: &[f32],
    eps: f32,
    flips: &[(usize, u32)],
) -> Result<GuardedVector> {
    let n = x.len();
    if n < 2 {
        return Err(SimError::Shape(format!(
            "layernorm needs at least 2 elements, got {n}"
        )));
    }
    if gamma.len() != n || beta.len() != n {
        return Err(SimError::Shape(format!(
            "affine parameters must match the input: {n} vs gamma {} beta {}",
            gamma.len(),
            beta.len()
        )));
    }
    let mut mean = 0f32;
    for &v in x {
        mean += v;
    }
    mean /= n as f32;
    let mut var = 0f32;
    for &v in x {
        var += (v - mean) * (v - mean);
    }
    var /= n as f32;
    // Variance-underflow bypass: when the spread is below the rounding noise
    // of the mean itself, the residuals are sub-ulp artefacts with a shared
    // sign, and normalising would blow them up to +-1 across the board. The
    // vector is constant at working precision, so emit zeros.
    let mut max_abs_x = 0f32;
    for &v in x {
        if v.abs() > max_abs_x {
            max_abs_x = v.abs();
        }
    }
    let noise_floor = max_abs_x * (2.0f32).powi(-21);
    let mut z: Vec<f32> = if var.sqrt() <= noise_floor {
        vec![0.0; n]
    } else {
        let inv_sigma = 1.0 / (var + eps).sqrt();
        x.iter().map(|&v| (v - mean) * inv_sigma).collect()
    };
    apply_flips(&mut z, flips)?;

    // Double-width check accumulator over whatever the guard actually sees.
    let mut sum = 0f64;
    let mut max_abs = 0f32;
    for &v in &z {
        sum += f64::from(v);
        if v.abs() > max_abs {
            max_abs = v.abs();
        }
    }
    let tolerance = layernorm_tolerance(n, max_abs);
    let measured = sum.abs();
    // Written so a NaN sum lands on the fail side.
    let check = if measured <= tolerance {
        GuardCheck::Pass
    } else {
        GuardCheck::Fail {
            measured,
            expected: 0.0,
            tolerance,
        }
    };
    let output = z
        .iter()
        .zip(gamma.iter().zip(beta.iter()))
        .map(|(&zv, (&g, &b))| g * zv + b)
        .collect();
    Ok(GuardedVector { output, check })
}

/// Numerically stable softmax with the unit-sum guard.
pub fn softmax_guarded(x: &[f32], dtype: DType, flips: &[(usize, u32)]) -> Result<GuardedVector> {
    let n = x.len();
    if n < 2 {
        return Err(SimError::Shape(format!(
            "softmax needs at least 2 elements, got {n}"
        )));
    }
    let tolerance = softmax_tolerance(dtype)?;
    let mut m = x[0];
    for &v in &x[1..] {
        if v > m {
            m = v;
        }
    }
    let exps: Vec<f32> = x.iter().map(|&v| (v - m).exp()).collect();
    let mut denom = 0f32;
    for &e in &exps {
        denom += e;
    }
    let mut y: Vec<f32> = exps.iter().map(|&e| e / denom).collect();
    apply_flips(&mut y, flips)?;

    let mut sum = 0f64;
    for &v in &y {
        sum += f64::from(v);
    }
    let measured = (sum - 1.0).abs();
    let check = if measured <= tolerance {
        GuardCheck::Pass
    } else {
        GuardCheck::Fail {
            measured,
            expected: 1.0,
            tolerance,
        }
    };
    Ok(GuardedVector { output: y, check })
}

/// Elementwise operators executed on redundant lanes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NlOp {
    Relu,
    Gelu,
    MaxPool { window: usize },
    AvgPool { window: usize },
}

fn gelu_tanh(x: f32) -> f32 {
    const SQRT_2_OVER_PI: f32 = 0.797_884_56;
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + 0.044715 * x * x * x)).tanh())
}

fn lane_f32(bits: u32, kind: ElemKind) -> f32 {
    match kind {
        ElemKind::Data(DType::Bf16) => crate::numerics::bf16_to_f32(bits as u16),
        _ => f32::from_bits(bits),
    }
}

fn f32_lane(v: f32, kind: ElemKind) -> u32 {
    match kind {
        ElemKind::Data(DType::Bf16) => crate::numerics::f32_to_bf16(v) as u32,
        _ => v.to_bits(),
    }
}

fn lane_i32(bits: u32, kind: ElemKind) -> i32 {
    match kind {
        ElemKind::Data(DType::Int8) => (bits as u8) as i8 as i32,
        _ => bits as i32,
    }
}

fn i32_lane(v: i32, kind: ElemKind) -> u32 {
    match kind {
        ElemKind::Data(DType::Int8) => (v.clamp(i8::MIN as i32, i8::MAX as i32) as i8 as u8) as u32,
        _ => v as u32,
    }
}

fn is_float_kind(kind: ElemKind) -> bool {
    !matches!(kind.dtype(), DType::Int8)
}

fn apply_op(op: NlOp, lanes: &[u32], kind: ElemKind) -> Result<Vec<u32>> {
    match op {
        NlOp::Relu => {
            if is_float_kind(kind) {
                // Comparator semantics: emit the input only when strictly
                // positive, so NaN rectifies to zero.
                Ok(lanes
                    .iter()
                    .map(|&b| {
                        let v = lane_f32(b, kind);
                        if v > 0.0 {
                            b
                        } else {
                            f32_lane(0.0, kind)
                        }
                    })
                    .collect())
            } else {
                Ok(lanes
                    .iter()
                    .map(|&b| {
                        let v = lane_i32(b, kind);
                        i32_lane(v.max(0), kind)
                    })
                    .collect())
            }
        }
        NlOp::Gelu => {
            if !is_float_kind(kind) {
                return Err(SimError::Unsupported(
                    "gelu runs in the float domain".into(),
                ));
            }
            Ok(lanes
                .iter()
                .map(|&b| f32_lane(gelu_tanh(lane_f32(b, kind)), kind))
                .collect())
        }
        NlOp::MaxPool { window } | NlOp::AvgPool { window } => {
            if window == 0 {
                return Err(SimError::Config("pool window must be positive".into()));
            }
            if lanes.len() % window != 0 {
                return Err(SimError::Shape(format!(
                    "pool window {window} does not divide {} elements",
                    lanes.len()
                )));
            }
            let mut out = Vec::with_capacity(lanes.len() / window);
            for chunk in lanes.chunks(window) {
                let bits = match op {
                    NlOp::MaxPool { .. } => {
                        if is_float_kind(kind) {
                            let mut best = chunk[0];
                            for &b in &chunk[1..] {
                                if lane_f32(b, kind) > lane_f32(best, kind) {
                                    best = b;
                                }
                            }
                            best
                        } else {
                            let mut best = chunk[0];
                            for &b in &chunk[1..] {
                                if lane_i32(b, kind) > lane_i32(best, kind) {
                                    best = b;
                                }
                            }
                            best
                        }
                    }
                    NlOp::AvgPool { .. } => {
                        if is_float_kind(kind) {
                            let mut s = 0f32;
                            for &b in chunk {
                                s += lane_f32(b, kind);
                            }
                            f32_lane(s / window as f32, kind)
                        } else {
                            // Truncating division, like a shift-based divider.
                            let mut s = 0i64;
                            for &b in chunk {
                                s += lane_i32(b, kind) as i64;
                            }
                            i32_lane((s / window as i64) as i32, kind)
                        }
                    }
                    _ => unreachable!(),
                };
                out.push(bits);
            }
            Ok(out)
        }
    }
}

/// Run `op` on `copies` redundant lanes and vote per element on the exact
/// output bit pattern. `flips` corrupt individual replica outputs. With three
/// copies a single corrupt lane is outvoted; with two a mismatch can only be
/// flagged. The emitted element falls back to replica 0 when no majority
/// exists.
pub fn redundant_apply(
    op: NlOp,
    lanes: &[u32],
    kind: ElemKind,
    copies: u32,
    flips: &[ReplicaFlip],
) -> Result<GuardedLanes> {
    if !(2..=3).contains(&copies) {
        return Err(SimError::Config(format!(
            "redundant execution supports 2 or 3 copies, got {copies}"
        )));
    }
    if lanes.is_empty() {
        return Err(SimError::Shape("empty lane vector".into()));
    }
    let base = apply_op(op, lanes, kind)?;
    let out_len = base.len();
    let mut replicas: Vec<Vec<u32>> = (0..copies).map(|_| base.clone()).collect();
    let width = kind.width();
    for f in flips {
        if f.replica >= copies {
            return Err(SimError::Config(format!(
                "flip targets replica {} of {copies}",
                f.replica
            )));
        }
        if f.index >= out_len {
            return Err(SimError::Index {
                what: "replica flip element",
                index: f.index,
                limit: out_len,
            });
        }
        if f.bit >= width {
            return Err(SimError::Index {
                what: "replica flip bit",
                index: f.bit as usize,
                limit: width as usize,
            });
        }
        replicas[f.replica as usize][f.index] ^= 1 << f.bit;
    }

    let mut output = Vec::with_capacity(out_len);
    let mut votes = Vec::with_capacity(out_len);
    let mut split_elements = 0u64;
    for i in 0..out_len {
        let mut winner = replicas[0][i];
        let mut count = 1u8;
        for r in 1..copies as usize {
            if replicas[r][i] == winner {
                count += 1;
            }
        }
        if copies == 3 && count == 1 {
            // Replica 0 is outvoted or all three disagree.
            if replicas[1][i] == replicas[2][i] {
                winner = replicas[1][i];
                count = 2;
            } else {
                count = 0;
            }
        } else if copies == 2 && count == 1 {
            count = 0;
        }
        if count == 0 {
            split_elements += 1;
        }
        output.push(winner);
        votes.push(count);
    }
    let check = if split_elements == 0 {
        GuardCheck::Pass
    } else {
        GuardCheck::Fail {
            measured: split_elements as f64,
            expected: 0.0,
            tolerance: 0.0,
        }
    };
    Ok(GuardedLanes {
        output,
        check,
        votes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    const EPS: f32 = 1e-5;

    /// Independent f64 reference for the normalised values.
    fn layernorm_f64(x: &[f32]) -> Vec<f64> {
        let n = x.len() as f64;
        let mean: f64 = x.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
        let var: f64 = x
            .iter()
            .map(|&v| (f64::from(v) - mean).powi(2))
            .sum::<f64>()
            / n;
        let sigma = (var + f64::from(EPS)).sqrt();
        x.iter().map(|&v| (f64::from(v) - mean) / sigma).collect()
    }

    fn softmax_f64(x: &[f32]) -> Vec<f64> {
        let m = x.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let exps: Vec<f64> = x.iter().map(|&v| f64::from(v - m).exp()).collect();
        let s: f64 = exps.iter().sum();
        exps.iter().map(|&e| e / s).collect()
    }

    #[test]
    fn layernorm_matches_f64_reference() {
        let mut rng = StdRng::seed_from_u64(41);
        for _ in 0..100 {
            let n = rng.random_range(2..48);
            let x: Vec<f32> = (0..n).map(|_| rng.random_range(-100.0..100.0)).collect();
            let gamma: Vec<f32> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
            let beta: Vec<f32> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let got = layernorm_guarded(&x, &gamma, &beta, EPS, &[]).unwrap();
            assert!(got.check.passed());
            let zref = layernorm_f64(&x);
            for i in 0..n {
                let want = f64::from(gamma[i]) * zref[i] + f64::from(beta[i]);
                assert!(
                    (f64::from(got.output[i]) - want).abs() <= 1e-4 * want.abs().max(1.0),
                    "element {i}: {} vs {want}",
                    got.output[i]
                );
            }
        }
    }

    #[test]
    fn layernorm_passes_on_degenerate_and_extreme_scales() {
        // Constant vectors normalise to rounding noise; the absolute floor in
        // the tolerance must absorb it.
        for c in [0.0f32, 0.1, -3.5, 1e-20, 1e20] {
            let x = vec![c; 16];
            let gamma = vec![1.0; 16];
            let beta = vec![0.0; 16];
            let got = layernorm_guarded(&x, &gamma, &beta, EPS, &[]).unwrap();
            assert!(got.check.passed(), "constant {c}");
        }
        for scale in [1e-15f32, 1e-3, 1.0, 1e6, 1e15] {
            let mut rng = StdRng::seed_from_u64(42);
            let x: Vec<f32> = (0..32)
                .map(|_| rng.random_range(-1.0..1.0) * scale)
                .collect();
            let gamma = vec![1.0; 32];
            let beta = vec![0.0; 32];
            let got = layernorm_guarded(&x, &gamma, &beta, EPS, &[]).unwrap();
            assert!(got.check.passed(), "scale {scale}");
        }
    }

    /// Draws a vector whose normalised values all clear the detectability
    /// floor, resampling as needed. Returns the vector.
    fn sample_above_floor(n: usize, rng: &mut StdRng) -> Vec<f32> {
        'outer: for _ in 0..500 {
            let x: Vec<f32> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
            let z = layernorm_f64(&x);
            let max_abs = z.iter().fold(0f64, |m, &v| m.max(v.abs()));
            let floor = n as f64 * (2.0f64).powi(-15) * max_abs;
            for &v in &z {
                if v.abs() < floor {
                    continue 'outer;
                }
            }
            return x;
        }
        panic!("could not sample a vector above the detectability floor");
    }

    #[test]
    fn layernorm_detects_sign_and_high_exponent_flips_above_the_floor() {
        // The zero-sum check catches any single flip that moves a normalised
        // value by more than the tolerance. Sign and high-exponent flips move
        // an element by at least its own magnitude, so requiring every
        // element to sit above the floor makes detection certain. Low
        // mantissa flips move values by far less and are explicitly outside
        // this guarantee.
        let mut rng = StdRng::seed_from_u64(43);
        for _ in 0..300 {
            let n = rng.random_range(4..33);
            let x = sample_above_floor(n, &mut rng);
            let gamma = vec![1.0; n];
            let beta = vec![0.0; n];
            let index = rng.random_range(0..n);
            let bit = *[31u32, 30, 29, 28, 27].get(rng.random_range(0..5)).unwrap();
            let got = layernorm_guarded(&x, &gamma, &beta, EPS, &[(index, bit)]).unwrap();
            assert!(
                !got.check.passed(),
                "n={n} index={index} bit={bit} escaped the zero-sum check"
            );
        }
    }

    #[test]
    fn layernorm_carries_the_corruption_into_its_output() {
        let x: Vec<f32> = (0..8).map(|i| i as f32).collect();
        let gamma = vec![1.0; 8];
        let beta = vec![0.0; 8];
        let clean = layernorm_guarded(&x, &gamma, &beta, EPS, &[]).unwrap();
        let dirty = layernorm_guarded(&x, &gamma, &beta, EPS, &[(3, 31)]).unwrap();
        assert!(!dirty.check.passed());
        assert_eq!(dirty.output[3], -clean.output[3]);
        for i in 0..8 {
            if i != 3 {
                assert_eq!(dirty.output[i], clean.output[i]);
            }
        }
    }

    #[test]
    fn layernorm_nan_input_fails_the_check() {
        let mut x = vec![1.0f32, 2.0, 3.0, 4.0];
        x[2] = f32::NAN;
        let gamma = vec![1.0; 4];
        let beta = vec![0.0; 4];
        let got = layernorm_guarded(&x, &gamma, &beta, EPS, &[]).unwrap();
        assert!(!got.check.passed());
    }

    #[test]
    fn layernorm_shape_errors() {
        let gamma = vec![1.0; 4];
        let beta = vec![0.0; 4];
        assert!(layernorm_guarded(&[1.0], &gamma, &beta, EPS, &[]).is_err());
        assert!(layernorm_guarded(&[1.0, 2.0, 3.0], &gamma, &beta, EPS, &[]).is_err());
        assert!(layernorm_guarded(&[1.0; 4], &gamma, &beta, EPS, &[(4, 0)]).is_err());
        assert!(layernorm_guarded(&[1.0; 4], &gamma, &beta, EPS, &[(0, 32)]).is_err());
    }

    #[test]
    fn softmax_matches_f64_reference_and_passes_clean() {
        let mut rng = StdRng::seed_from_u64(44);
        for _ in 0..200 {
            let n = rng.random_range(2..65);
            let base: f32 = rng.random_range(-1016.0..1016.0);
            let x: Vec<f32> = (0..n).map(|_| base + rng.random_range(0.0..8.0)).collect();
            let got = softmax_guarded(&x, DType::Fp32, &[]).unwrap();
            assert!(got.check.passed(), "clean softmax failed its own check");
            let want = softmax_f64(&x);
            let mut sum = 0f64;
            for i in 0..n {
                assert!(
                    (f64::from(got.output[i]) - want[i]).abs() <= 1e-5,
                    "element {i}"
                );
                sum += f64::from(got.output[i]);
            }
            assert!((sum - 1.0).abs() < 1e-5);
            // Largest input wins the largest probability.
            let argmax_x = (0..n)
                .max_by(|&a, &b| x[a].partial_cmp(&x[b]).unwrap())
                .unwrap();
            let argmax_y = (0..n)
                .max_by(|&a, &b| got.output[a].partial_cmp(&got.output[b]).unwrap())
                .unwrap();
            assert_eq!(x[argmax_x], x[argmax_y]);
        }
    }

    #[test]
    fn softmax_detects_sign_and_high_exponent_flips() {
        // A sign or high-exponent flip moves one probability by roughly its
        // own magnitude, so detection is certain once every probability
        // clears the dtype's tolerance: the input spread bounds the smallest
        // probability at exp(-spread)/n, which must beat 2^-20 (Fp32, spread
        // 8 suffices) or the much coarser 2^-12 (Bf16, needs spread <= 3).
        let mut rng = StdRng::seed_from_u64(45);
        for dt in [DType::Fp32, DType::Bf16] {
            let spread = match dt {
                DType::Fp32 => 8.0f32,
                DType::Bf16 => 3.0,
                DType::Int8 => unreachable!(),
            };
            for _ in 0..300 {
                let n = rng.random_range(2..65);
                let base: f32 = rng.random_range(-1016.0..1016.0);
                let x: Vec<f32> = (0..n)
                    .map(|_| base + rng.random_range(0.0..spread))
                    .collect();
                let index = rng.random_range(0..n);
                let bit = *[31u32, 30, 29, 28, 27].get(rng.random_range(0..5)).unwrap();
                let got = softmax_guarded(&x, dt, &[(index, bit)]).unwrap();
                assert!(!got.check.passed(), "n={n} bit={bit} {dt:?}");
            }
        }
    }

    #[test]
    fn softmax_tolerance_ordering_between_dtypes() {
        // A mid-mantissa flip on y = 0.5 moves the sum by 2^-14: inside the
        // Bf16 budget, outside the Fp32 budget.
        let x = vec![1.0f32, 1.0];
        let flips = [(0usize, 10u32)];
        let coarse = softmax_guarded(&x, DType::Bf16, &flips).unwrap();
        assert!(coarse.check.passed());
        let fine = softmax_guarded(&x, DType::Fp32, &flips).unwrap();
        match fine.check {
            GuardCheck::Fail {
                measured,
                expected,
                tolerance,
            } => {
                assert!((expected - 1.0).abs() < 1e-12);
                assert!((measured - (2.0f64).powi(-14)).abs() < 1e-9);
                assert!((tolerance - (2.0f64).powi(-20)).abs() < 1e-12);
            }
            GuardCheck::Pass => panic!("fp32 budget must flag a 2^-14 deviation"),
        }
    }

    #[test]
    fn softmax_rejects_bad_inputs() {
        assert!(softmax_guarded(&[1.0], DType::Fp32, &[]).is_err());
        assert!(softmax_guarded(&[1.0, 2.0], DType::Int8, &[]).is_err());
        let nan = softmax_guarded(&[1.0, f32::NAN, 2.0], DType::Fp32, &[]).unwrap();
        assert!(!nan.check.passed());
    }

    #[test]
    fn relu_oracles_int_and_float() {
        let lanes: Vec<u32> = [-5i32, 3, 0, -1].iter().map(|&v| v as u32).collect();
        let got = redundant_apply(NlOp::Relu, &lanes, ElemKind::Acc(DType::Int8), 3, &[]).unwrap();
        let want: Vec<u32> = [0i32, 3, 0, 0].iter().map(|&v| v as u32).collect();
        assert_eq!(got.output, want);
        assert!(got.check.passed());
        assert!(got.votes.iter().all(|&v| v == 3));

        let lanes: Vec<u32> = [-2.5f32, 1.5, f32::NAN, 0.0]
            .iter()
            .map(|v| v.to_bits())
            .collect();
        let got = redundant_apply(NlOp::Relu, &lanes, ElemKind::Data(DType::Fp32), 2, &[]).unwrap();
        assert_eq!(got.output[0], 0.0f32.to_bits());
        assert_eq!(got.output[1], 1.5f32.to_bits());
        assert_eq!(got.output[2], 0.0f32.to_bits(), "NaN rectifies to zero");
        assert_eq!(got.output[3], 0.0f32.to_bits());
    }

    #[test]
    fn gelu_matches_the_tanh_form_reference() {
        let mut rng = StdRng::seed_from_u64(46);
        for _ in 0..200 {
            let v: f32 = rng.random_range(-6.0..6.0);
            let lanes = [v.to_bits()];
            let got =
                redundant_apply(NlOp::Gelu, &lanes, ElemKind::Data(DType::Fp32), 3, &[]).unwrap();
            let x = f64::from(v);
            let want = 0.5
                * x
                * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh());
            let gv = f64::from(f32::from_bits(got.output[0]));
            assert!((gv - want).abs() <= 1e-5 * want.abs().max(1.0), "gelu({v})");
        }
        // Asymptotes: identity for large x, zero for very negative x.
        let big = redundant_apply(
            NlOp::Gelu,
            &[8.0f32.to_bits()],
            ElemKind::Data(DType::Fp32),
            3,
            &[],
        )
        .unwrap();
        assert!((f32::from_bits(big.output[0]) - 8.0).abs() < 1e-3);
        let neg = redundant_apply(
            NlOp::Gelu,
            &[(-8.0f32).to_bits()],
            ElemKind::Data(DType::Fp32),
            3,
            &[],
        )
        .unwrap();
        assert!(f32::from_bits(neg.output[0]).abs() < 1e-3);
        // Int lanes cannot host gelu.
        assert!(redundant_apply(NlOp::Gelu, &[1], ElemKind::Acc(DType::Int8), 3, &[]).is_err());
    }

    #[test]
    fn pooling_oracles() {
        let lanes: Vec<u32> = [1i32, 5, 3, 2].iter().map(|&v| v as u32).collect();
        let got = redundant_apply(
            NlOp::MaxPool { window: 2 },
            &lanes,
            ElemKind::Acc(DType::Int8),
            3,
            &[],
        )
        .unwrap();
        let want: Vec<u32> = [5i32, 3].iter().map(|&v| v as u32).collect();
        assert_eq!(got.output, want);
        let got = redundant_apply(
            NlOp::AvgPool { window: 2 },
            &lanes,
            ElemKind::Acc(DType::Int8),
            3,
            &[],
        )
        .unwrap();
        let want: Vec<u32> = [3i32, 2].iter().map(|&v| v as u32).collect();
        assert_eq!(got.output, want, "truncating average");

        let lanes: Vec<u32> = [1.0f32, 5.0, 3.0, 2.0]
            .iter()
            .map(|v| v.to_bits())
            .collect();
        let got = redundant_apply(
            NlOp::AvgPool { window: 4 },
            &lanes,
            ElemKind::Data(DType::Fp32),
            3,
            &[],
        )
        .unwrap();
        assert_eq!(f32::from_bits(got.output[0]), 2.75);

        // Window must divide the lane count and be positive.
        assert!(redundant_apply(
            NlOp::MaxPool { window: 3 },
            &lanes,
            ElemKind::Data(DType::Fp32),
            3,
            &[],
        )
        .is_err());
        assert!(redundant_apply(
            NlOp::AvgPool { window: 0 },
            &lanes,
            ElemKind::Data(DType::Fp32),
            3,
            &[],
        )
        .is_err());
    }

    #[test]
    fn triple_redundancy_outvotes_a_single_corrupt_lane() {
        let mut rng = StdRng::seed_from_u64(47);
        for _ in 0..100 {
            let lanes: Vec<u32> = (0..16)
                .map(|_| rng.random_range(-100i32..100) as u32)
                .collect();
            let clean =
                redundant_apply(NlOp::Relu, &lanes, ElemKind::Acc(DType::Int8), 3, &[]).unwrap();
            let flip = ReplicaFlip {
                replica: rng.random_range(0..3),
                index: rng.random_range(0..16),
                bit: rng.random_range(0..32),
            };
            let got = redundant_apply(NlOp::Relu, &lanes, ElemKind::Acc(DType::Int8), 3, &[flip])
                .unwrap();
            assert_eq!(got.output, clean.output, "majority repairs the lane");
            assert!(got.check.passed());
            assert_eq!(got.votes[flip.index], 2);
        }
    }

    #[test]
    fn dual_redundancy_detects_but_cannot_repair() {
        let lanes: Vec<u32> = (0..8).map(|v| v as u32).collect();
        let flip = ReplicaFlip {
            replica: 1,
            index: 5,
            bit: 3,
        };
        let got =
            redundant_apply(NlOp::Relu, &lanes, ElemKind::Acc(DType::Int8), 2, &[flip]).unwrap();
        assert!(!got.check.passed());
        assert_eq!(got.votes[5], 0);
        // Primary lane untouched, so the emitted value happens to be right;
        // a flip on replica 0 instead leaves a wrong emitted value.
        assert_eq!(got.output[5], 5);
        let flip0 = ReplicaFlip {
            replica: 0,
            index: 5,
            bit: 3,
        };
        let got =
            redundant_apply(NlOp::Relu, &lanes, ElemKind::Acc(DType::Int8), 2, &[flip0]).unwrap();
        assert!(!got.check.passed());
        assert_eq!(got.output[5], 5 ^ 8);
    }

    #[test]
    fn three_way_split_has_no_majority() {
        let lanes: Vec<u32> = (0..4).map(|v| v as u32).collect();
        let flips = [
            ReplicaFlip {
                replica: 0,
                index: 2,
                bit: 1,
            },
            ReplicaFlip {
                replica: 1,
                index: 2,
                bit: 4,
            },
        ];
        let got =
            redundant_apply(NlOp::Relu, &lanes, ElemKind::Acc(DType::Int8), 3, &flips).unwrap();
        assert_eq!(got.votes[2], 0);
        match got.check {
            GuardCheck::Fail { measured, .. } => assert_eq!(measured, 1.0),
            GuardCheck::Pass => panic!("split must fail"),
        }
    }

    #[test]
    fn matching_double_corruption_outvotes_the_truth() {
        // Two replicas hit by the same flip form a corrupt majority: the vote
        // passes and the output is wrong. This is the known blind spot of
        // pattern voting; the campaign's fault model makes it vanishingly
        // rare (independent upsets landing on the same element and bit).
        let lanes: Vec<u32> = (0..4).map(|v| v as u32).collect();
        let flips = [
            ReplicaFlip {
                replica: 1,
                index: 2,
                bit: 6,
            },
            ReplicaFlip {
                replica: 2,
                index: 2,
                bit: 6,
            },
        ];
        let got =
            redundant_apply(NlOp::Relu, &lanes, ElemKind::Acc(DType::Int8), 3, &flips).unwrap();
        assert!(got.check.passed());
        assert_eq!(got.votes[2], 2);
        assert_eq!(got.output[2], 2 ^ 64);
    }

    #[test]
    fn redundancy_configuration_errors() {
        let lanes = [1u32, 2];
        for copies in [0u32, 1, 4] {
            assert!(
                redundant_apply(NlOp::Relu, &lanes, ElemKind::Acc(DType::Int8), copies, &[])
                    .is_err()
            );
        }
        assert!(redundant_apply(NlOp::Relu, &[], ElemKind::Acc(DType::Int8), 3, &[]).is_err());
        let bad_replica = ReplicaFlip {
            replica: 3,
            index: 0,
            bit: 0,
        };
        assert!(redundant_apply(
            NlOp::Relu,
            &lanes,
            ElemKind::Acc(DType::Int8),
            3,
            &[bad_replica]
        )
        .is_err());
        let bad_index = ReplicaFlip {
            replica: 0,
            index: 2,
            bit: 0,
        };
        assert!(redundant_apply(
            NlOp::Relu,
            &lanes,
            ElemKind::Acc(DType::Int8),
            3,
            &[bad_index]
        )
        .is_err());
        let bad_bit = ReplicaFlip {
            replica: 0,
            index: 0,
            bit: 8,
        };
        assert!(redundant_apply(
            NlOp::Relu,
            &lanes,
            ElemKind::Data(DType::Int8),
            3,
            &[bad_bit]
        )
        .is_err());
    }
}
