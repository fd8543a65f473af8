//! Synthetic workloads for fault campaigns: Gaussian-blob classification
//! data, a small dense classifier trained in simulation, and a fixed-point
//! form of that classifier for the integer datapath.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Labelled feature vectors, row-major.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub inputs: Vec<Vec<f32>>,
    pub labels: Vec<usize>,
    pub input_dim: usize,
    pub classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Shape and sampling parameters of the synthetic blob task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub classes: usize,
    pub input_dim: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    /// Scale of the per-class mean vectors; larger means wider class
    /// separation and easier classification.
    pub mean_scale: f32,
    /// Per-dimension standard deviation around the class mean.
    pub noise: f32,
    pub seed: u64,
}

/// Draws train and test sets from one family of Gaussian blobs. Class means
/// are sampled once, then both splits sample around them, cycling through
/// the classes so every split is label-balanced.
pub fn gaussian_blobs(spec: &BlobSpec) -> Result<(Dataset, Dataset)> {
    if spec.classes < 2 || spec.input_dim == 0 {
        return Err(SimError::Config(format!(
            "blob task needs >= 2 classes and a positive input dim, got {} / {}",
            spec.classes, spec.input_dim
        )));
    }
    if spec.train_samples == 0 || spec.test_samples == 0 {
        return Err(SimError::Config("blob task needs non-empty splits".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let means: Vec<Vec<f32>> = (0..spec.classes)
        .map(|_| {
            (0..spec.input_dim)
                .map(|_| {
                    let z: f32 = rng.sample(StandardNormal);
                    z * spec.mean_scale
                })
                .collect()
        })
        .collect();
    let draw = |count: usize, rng: &mut ChaCha8Rng| {
        let mut inputs = Vec::with_capacity(count);
        let mut labels = Vec::with_capacity(count);
        for s in 0..count {
            let c = s % spec.classes;
            let x: Vec<f32> = means[c]
                .iter()
                .map(|m| {
                    let z: f32 = rng.sample(StandardNormal);
                    m + z * spec.noise
                })
                .collect();
            inputs.push(x);
            labels.push(c);
        }
        Dataset {
            inputs,
            labels,
            input_dim: spec.input_dim,
            classes: spec.classes,
        }
    };
    let train = draw(spec.train_samples, &mut rng);
    let test = draw(spec.test_samples, &mut rng);
    Ok((train, test))
}

/// One-hidden-layer dense classifier: relu(x W1 + b1) W2 + b2.
/// Weights are row-major: w1[i * hidden + j], w2[j * classes + c].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub input_dim: usize,
    pub hidden: usize,
    pub classes: usize,
    pub w1: Vec<f32>,
    pub b1: Vec<f32>,
    pub w2: Vec<f32>,
    pub b2: Vec<f32>,
}

impl MlpParams {
    fn hidden_acts(&self, x: &[f32]) -> Vec<f32> {
        let mut h = self.b1.clone();
        for (i, &xi) in x.iter().enumerate() {
            let row = &self.w1[i * self.hidden..(i + 1) * self.hidden];
            for (j, &w) in row.iter().enumerate() {
                h[j] += xi * w;
            }
        }
        for v in &mut h {
            if !(*v > 0.0) {
                *v = 0.0;
            }
        }
        h
    }

    pub fn logits(&self, x: &[f32]) -> Vec<f32> {
        let h = self.hidden_acts(x);
        let mut out = self.b2.clone();
        for (j, &hj) in h.iter().enumerate() {
            let row = &self.w2[j * self.classes..(j + 1) * self.classes];
            for (c, &w) in row.iter().enumerate() {
                out[c] += hj * w;
            }
        }
        out
    }

    pub fn predict(&self, x: &[f32]) -> usize {
        argmax(&self.logits(x))
    }

    pub fn accuracy(&self, ds: &Dataset) -> f64 {
        let correct = ds
            .inputs
            .iter()
            .zip(&ds.labels)
            .filter(|(x, &y)| self.predict(x) == y)
            .count();
        correct as f64 / ds.len() as f64
    }

    /// All parameters concatenated (w1, b1, w2, b2); the flat view the
    /// sensitivity sweep corrupts.
    pub fn flat_params(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.flat_len());
        out.extend_from_slice(&self.w1);
        out.extend_from_slice(&self.b1);
        out.extend_from_slice(&self.w2);
        out.extend_from_slice(&self.b2);
        out
    }

    pub fn flat_len(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    /// Rebuilds a parameter set from a corrupted flat view.
    pub fn with_flat(&self, flat: &[f32]) -> Result<MlpParams> {
        if flat.len() != self.flat_len() {
            return Err(SimError::Shape(format!(
                "flat parameter vector has {} entries, expected {}",
                flat.len(),
                self.flat_len()
            )));
        }
        let (w1, rest) = flat.split_at(self.w1.len());
        let (b1, rest) = rest.split_at(self.b1.len());
        let (w2, b2) = rest.split_at(self.w2.len());
        Ok(MlpParams {
            input_dim: self.input_dim,
            hidden: self.hidden,
            classes: self.classes,
            w1: w1.to_vec(),
            b1: b1.to_vec(),
            w2: w2.to_vec(),
            b2: b2.to_vec(),
        })
    }
}

/// Lowest index wins ties, matching the integer pipeline's readout.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn argmax_i32(values: &[i32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Trains the classifier with plain per-sample SGD on softmax cross
/// entropy. Deterministic for a given seed; returns the fitted parameters.
pub fn train_mlp(
    train: &Dataset,
    hidden: usize,
    seed: u64,
    epochs: usize,
    lr: f32,
) -> Result<MlpParams> {
    if hidden == 0 {
        return Err(SimError::Config("hidden width must be positive".into()));
    }
    let d = train.input_dim;
    let c = train.classes;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let he = |fan_in: usize, rng: &mut ChaCha8Rng| -> f32 {
        let z: f32 = rng.sample(StandardNormal);
        z * (2.0 / fan_in as f32).sqrt()
    };
    let mut p = MlpParams {
        input_dim: d,
        hidden,
        classes: c,
        w1: (0..d * hidden).map(|_| he(d, &mut rng)).collect(),
        b1: vec![0.0; hidden],
        w2: (0..hidden * c).map(|_| he(hidden, &mut rng)).collect(),
        b2: vec![0.0; c],
    };
    let mut order: Vec<usize> = (0..train.len()).collect();
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for &s in &order {
            let x = &train.inputs[s];
            let y = train.labels[s];
            let h = p.hidden_acts(x);
            let mut logits = p.b2.clone();
            for (j, &hj) in h.iter().enumerate() {
                for (k, &w) in p.w2[j * c..(j + 1) * c].iter().enumerate() {
                    logits[k] += hj * w;
                }
            }
            let max = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let exps: Vec<f32> = logits.iter().map(|&l| (l - max).exp()).collect();
            let sum: f32 = exps.iter().sum();
            // dL/dlogit = softmax - onehot
            let mut dl: Vec<f32> = exps.iter().map(|&e| e / sum).collect();
            dl[y] -= 1.0;
            let mut dh = vec![0.0f32; hidden];
            for j in 0..hidden {
                for (k, &g) in dl.iter().enumerate() {
                    dh[j] += g * p.w2[j * c + k];
                    p.w2[j * c + k] -= lr * g * h[j];
                }
            }
            for (k, &g) in dl.iter().enumerate() {
                p.b2[k] -= lr * g;
            }
            for j in 0..hidden {
                if h[j] <= 0.0 {
                    dh[j] = 0.0;
                }
            }
            for (i, &xi) in x.iter().enumerate() {
                for (j, &g) in dh.iter().enumerate() {
                    p.w1[i * hidden + j] -= lr * g * xi;
                }
            }
            for (j, &g) in dh.iter().enumerate() {
                p.b1[j] -= lr * g;
            }
        }
    }
    Ok(p)
}

/// Power-of-two fixed-point deployment of the classifier. All scales are
/// shifts so the requantisation between layers is a plain arithmetic shift,
/// matching the integer datapath's mvout hardware.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantMlp {
    pub input_dim: usize,
    pub hidden: usize,
    pub classes: usize,
    /// Inputs are stored as round(x * 2^x_shift).
    pub x_shift: u32,
    pub w1_shift: u32,
    /// First-layer accumulators shift right by this much before clamping
    /// back to int8 activations.
    pub requant_shift: u32,
    pub w2_shift: u32,
    pub w1q: Vec<i8>,
    pub b1q: Vec<i32>,
    pub w2q: Vec<i8>,
    pub b2q: Vec<i32>,
}

fn pow2_shift_for(max_abs: f32) -> u32 {
    // Largest s with max_abs * 2^s <= 127, clamped to a sane range.
    if !(max_abs > 0.0) {
        return 15;
    }
    let mut s = 0i32;
    while max_abs * ((1i64 << (s + 1)) as f32) <= 127.0 && s < 15 {
        s += 1;
    }
    s.max(0) as u32
}

fn quant_i8(v: f32, shift: u32) -> i8 {
    let scaled = (v * (1i64 << shift) as f32).round();
    scaled.clamp(-128.0, 127.0) as i8
}

impl QuantMlp {
    /// Calibrates shifts over the given dataset and quantises the weights.
    pub fn quantise(p: &MlpParams, calib: &Dataset) -> Result<QuantMlp> {
        if calib.input_dim != p.input_dim {
            return Err(SimError::Shape(
                "calibration set does not match the classifier input".into(),
            ));
        }
        let max_abs = |vs: &[f32]| vs.iter().fold(0.0f32, |m, &v| m.max(v.abs()));
        let max_x = calib
            .inputs
            .iter()
            .map(|x| max_abs(x))
            .fold(0.0f32, f32::max);
        let x_shift = pow2_shift_for(max_x);
        let w1_shift = pow2_shift_for(max_abs(&p.w1));
        let w2_shift = pow2_shift_for(max_abs(&p.w2));
        let max_h = calib
            .inputs
            .iter()
            .map(|x| max_abs(&p.hidden_acts(x)))
            .fold(0.0f32, f32::max);
        let a_shift = pow2_shift_for(max_h).min(x_shift + w1_shift);
        let requant_shift = x_shift + w1_shift - a_shift;
        let b1_scale = (1i64 << (x_shift + w1_shift)) as f32;
        let b2_scale = (1i64 << (a_shift + w2_shift)) as f32;
        Ok(QuantMlp {
            input_dim: p.input_dim,
            hidden: p.hidden,
            classes: p.classes,
            x_shift,
            w1_shift,
            requant_shift,
            w2_shift,
            w1q: p.w1.iter().map(|&w| quant_i8(w, w1_shift)).collect(),
            b1q: p
                .b1
                .iter()
                .map(|&b| (b * b1_scale).round() as i32)
                .collect(),
            w2q: p.w2.iter().map(|&w| quant_i8(w, w2_shift)).collect(),
            b2q: p
                .b2
                .iter()
                .map(|&b| (b * b2_scale).round() as i32)
                .collect(),
        })
    }

    pub fn quantise_input(&self, x: &[f32]) -> Vec<i8> {
        x.iter().map(|&v| quant_i8(v, self.x_shift)).collect()
    }

    /// Integer reference forward pass: exactly the arithmetic the blocked
    /// datapath performs (wrapping 32-bit accumulation, relu, arithmetic
    /// shift, int8 clamp), so a fault-free pipeline run must match it
    /// bit for bit.
    pub fn forward(&self, xq: &[i8]) -> Vec<i32> {
        let mut acc1 = self.b1q.clone();
        for (i, &xi) in xq.iter().enumerate() {
            let row = &self.w1q[i * self.hidden..(i + 1) * self.hidden];
            for (j, &w) in row.iter().enumerate() {
                acc1[j] = acc1[j].wrapping_add(xi as i32 * w as i32);
            }
        }
        let a1: Vec<i32> = acc1
            .iter()
            .map(|&v| {
                let r = v.max(0) >> self.requant_shift;
                r.clamp(-128, 127)
            })
            .collect();
        let mut acc2 = self.b2q.clone();
        for (j, &aj) in a1.iter().enumerate() {
            let row = &self.w2q[j * self.classes..(j + 1) * self.classes];
            for (c, &w) in row.iter().enumerate() {
                acc2[c] = acc2[c].wrapping_add(aj * w as i32);
            }
        }
        acc2
    }

    pub fn predict(&self, xq: &[i8]) -> usize {
        argmax_i32(&self.forward(xq))
    }

    pub fn accuracy(&self, ds: &Dataset) -> f64 {
        let correct = ds
            .inputs
            .iter()
            .zip(&ds.labels)
            .filter(|(x, &y)| self.predict(&self.quantise_input(x)) == y)
            .count();
        correct as f64 / ds.len() as f64
    }
}
