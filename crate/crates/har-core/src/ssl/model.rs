//! Encoder, projection head, and prediction head parameter sets.
//!
//! The encoder treats a feature vector as a length-`input_dim` sequence of
//! one channel: conv(1->32, k=3, same) + ReLU + dropout, conv(32->64) +
//! ReLU + dropout, then an LSTM with 64 hidden units whose final state is
//! the representation `r`.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, Tape};
use crate::error::{HarError, Result};

/// Encoder output width (LSTM hidden units).
pub const ENCODER_OUT_DIM: usize = 64;
const CONV1_FILTERS: usize = 32;
const CONV2_FILTERS: usize = 64;

/// Serializable dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn from_array(a: &Array2<f64>) -> Self {
        Mat {
            rows: a.nrows(),
            cols: a.ncols(),
            data: a.iter().copied().collect(),
        }
    }

    pub fn to_array(&self) -> Array2<f64> {
        Array2::from_shape_vec((self.rows, self.cols), self.data.clone())
            .expect("stored shape consistent")
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    fn randn(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Self {
        let data = (0..rows * cols)
            .map(|_| {
                let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
                let u2: f64 = rng.gen_range(0.0..1.0);
                (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos() * scale
            })
            .collect();
        Mat { rows, cols, data }
    }
}

/// Conv-conv-LSTM encoder weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub schema_version: u32,
    /// Input feature dimension, consumed as the sequence length.
    pub input_dim: usize,
    pub dropout: f64,
    pub seed: u64,
    pub conv1_w: Mat,
    pub conv1_b: Mat,
    pub conv2_w: Mat,
    pub conv2_b: Mat,
    pub lstm_w_ih: Mat,
    pub lstm_w_hh: Mat,
    pub lstm_b: Mat,
}

impl EncoderParams {
    pub fn init(input_dim: usize, dropout: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = ENCODER_OUT_DIM;
        EncoderParams {
            schema_version: 1,
            input_dim,
            dropout,
            seed,
            conv1_w: Mat::randn(3, CONV1_FILTERS, (2.0f64 / 3.0).sqrt() * 0.5, &mut rng),
            conv1_b: Mat::zeros(1, CONV1_FILTERS),
            conv2_w: Mat::randn(
                3 * CONV1_FILTERS,
                CONV2_FILTERS,
                (2.0f64 / (3.0 * CONV1_FILTERS as f64)).sqrt(),
                &mut rng,
            ),
            conv2_b: Mat::zeros(1, CONV2_FILTERS),
            lstm_w_ih: Mat::randn(CONV2_FILTERS, 4 * h, (1.0 / CONV2_FILTERS as f64).sqrt(), &mut rng),
            lstm_w_hh: Mat::randn(h, 4 * h, (1.0 / h as f64).sqrt(), &mut rng),
            lstm_b: Mat::zeros(1, 4 * h),
        }
    }

    /// Flattens a batch of feature vectors into the `(b*t, 1)` layout the
    /// conv stack expects.
    pub fn to_sequence(&self, xs: &Array2<f64>) -> Result<Array2<f64>> {
        if xs.ncols() != self.input_dim {
            return Err(HarError::data(format!(
                "encode: input dim {} != encoder input dim {}",
                xs.ncols(),
                self.input_dim
            )));
        }
        let flat: Vec<f64> = xs.iter().copied().collect();
        Ok(Array2::from_shape_vec((xs.nrows() * self.input_dim, 1), flat)
            .expect("row-major flatten"))
    }

    /// Records the encoder forward pass. `masks`, when present, are the
    /// inverted-dropout masks for the two conv activations (training mode).
    /// Returns the representation node `(b, 64)` and the parameter nodes in
    /// field order.
    pub fn forward(
        &self,
        tape: &mut Tape,
        xs: &Array2<f64>,
        masks: Option<(Array2<f64>, Array2<f64>)>,
    ) -> Result<(NodeId, Vec<NodeId>)> {
        let b = xs.nrows();
        let t = self.input_dim;
        let seq = self.to_sequence(xs)?;
        let x = tape.input(seq);
        let conv1_w = tape.input(self.conv1_w.to_array());
        let conv1_b = tape.input(self.conv1_b.to_array());
        let conv2_w = tape.input(self.conv2_w.to_array());
        let conv2_b = tape.input(self.conv2_b.to_array());
        let lstm_w_ih = tape.input(self.lstm_w_ih.to_array());
        let lstm_w_hh = tape.input(self.lstm_w_hh.to_array());
        let lstm_b = tape.input(self.lstm_b.to_array());
        let params = vec![
            conv1_w, conv1_b, conv2_w, conv2_b, lstm_w_ih, lstm_w_hh, lstm_b,
        ];

        let c1 = tape.conv1d_same(x, conv1_w, conv1_b, b, t);
        let c1 = tape.relu(c1);
        let c1 = match &masks {
            Some((m1, _)) => tape.mul_mask(c1, m1.clone()),
            None => c1,
        };
        self.check_finite(tape, c1, "conv1")?;
        let c2 = tape.conv1d_same(c1, conv2_w, conv2_b, b, t);
        let c2 = tape.relu(c2);
        let c2 = match &masks {
            Some((_, m2)) => tape.mul_mask(c2, m2.clone()),
            None => c2,
        };
        self.check_finite(tape, c2, "conv2")?;
        let r = tape.lstm_last(c2, lstm_w_ih, lstm_w_hh, lstm_b, b, t);
        self.check_finite(tape, r, "lstm")?;
        Ok((r, params))
    }

    fn check_finite(&self, tape: &Tape, node: NodeId, layer: &str) -> Result<()> {
        if tape.value(node).iter().any(|v| !v.is_finite()) {
            return Err(HarError::train(format!(
                "encoder produced a non-finite value in layer '{layer}'"
            )));
        }
        Ok(())
    }

    /// Inference-mode encoding (no dropout): pure function of (self, xs).
    pub fn encode_batch(&self, xs: &Array2<f64>) -> Result<Array2<f64>> {
        let mut tape = Tape::new();
        let (r, _) = self.forward(&mut tape, xs, None)?;
        Ok(tape.value(r).clone())
    }

    /// Inference-mode encoding of a single feature vector.
    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        let xs = Array2::from_shape_vec((1, x.len()), x.to_vec())
            .map_err(|e| HarError::data(format!("encode: {e}")))?;
        Ok(self.encode_batch(&xs)?.row(0).to_vec())
    }

    /// Samples inverted-dropout masks for one training forward.
    pub fn sample_masks(
        &self,
        b: usize,
        rng: &mut ChaCha8Rng,
    ) -> Option<(Array2<f64>, Array2<f64>)> {
        if self.dropout <= 0.0 {
            return None;
        }
        let keep = 1.0 - self.dropout;
        let t = self.input_dim;
        let mut draw = |rows: usize, cols: usize| {
            Array2::from_shape_fn((rows, cols), |_| {
                if rng.gen_range(0.0..1.0) < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
        };
        Some((draw(b * t, CONV1_FILTERS), draw(b * t, CONV2_FILTERS)))
    }

    pub fn param_arrays_mut(&mut self) -> Vec<&mut Mat> {
        vec![
            &mut self.conv1_w,
            &mut self.conv1_b,
            &mut self.conv2_w,
            &mut self.conv2_b,
            &mut self.lstm_w_ih,
            &mut self.lstm_w_hh,
            &mut self.lstm_b,
        ]
    }
}

/// Projection head: three linear layers with input sizes 64, 128, 256 and
/// ReLU between. Used only during pretraining and discarded afterwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionParams {
    pub w1: Mat,
    pub b1: Mat,
    pub w2: Mat,
    pub b2: Mat,
    pub w3: Mat,
    pub b3: Mat,
}

impl ProjectionParams {
    /// Output width of the projection (the z-space the loss sees).
    pub const OUT_DIM: usize = 128;

    pub fn init(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ProjectionParams {
            w1: Mat::randn(64, 128, (2.0f64 / 64.0).sqrt(), &mut rng),
            b1: Mat::zeros(1, 128),
            w2: Mat::randn(128, 256, (2.0f64 / 128.0).sqrt(), &mut rng),
            b2: Mat::zeros(1, 256),
            w3: Mat::randn(256, Self::OUT_DIM, (2.0f64 / 256.0).sqrt(), &mut rng),
            b3: Mat::zeros(1, Self::OUT_DIM),
        }
    }

    pub fn forward(&self, tape: &mut Tape, r: NodeId) -> (NodeId, Vec<NodeId>) {
        let w1 = tape.input(self.w1.to_array());
        let b1 = tape.input(self.b1.to_array());
        let w2 = tape.input(self.w2.to_array());
        let b2 = tape.input(self.b2.to_array());
        let w3 = tape.input(self.w3.to_array());
        let b3 = tape.input(self.b3.to_array());
        let params = vec![w1, b1, w2, b2, w3, b3];
        let h = tape.matmul(r, w1);
        let h = tape.add_row_bias(h, b1);
        let h = tape.relu(h);
        let h = tape.matmul(h, w2);
        let h = tape.add_row_bias(h, b2);
        let h = tape.relu(h);
        let h = tape.matmul(h, w3);
        let z = tape.add_row_bias(h, b3);
        (z, params)
    }

    pub fn param_arrays_mut(&mut self) -> Vec<&mut Mat> {
        vec![
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.w3,
            &mut self.b3,
        ]
    }
}

/// Prediction head for fine-tuning: two linear layers with input sizes 64
/// and 256, ReLU between, logits over the prominent activities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionHeadParams {
    pub w1: Mat,
    pub b1: Mat,
    pub w2: Mat,
    pub b2: Mat,
}

impl PredictionHeadParams {
    pub fn init(classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PredictionHeadParams {
            w1: Mat::randn(64, 256, (2.0f64 / 64.0).sqrt(), &mut rng),
            b1: Mat::zeros(1, 256),
            w2: Mat::randn(256, classes, (2.0f64 / 256.0).sqrt(), &mut rng),
            b2: Mat::zeros(1, classes),
        }
    }

    pub fn classes(&self) -> usize {
        self.w2.cols
    }

    pub fn forward(&self, tape: &mut Tape, r: NodeId) -> (NodeId, Vec<NodeId>) {
        let w1 = tape.input(self.w1.to_array());
        let b1 = tape.input(self.b1.to_array());
        let w2 = tape.input(self.w2.to_array());
        let b2 = tape.input(self.b2.to_array());
        let params = vec![w1, b1, w2, b2];
        let h = tape.matmul(r, w1);
        let h = tape.add_row_bias(h, b1);
        let h = tape.relu(h);
        let h = tape.matmul(h, w2);
        let logits = tape.add_row_bias(h, b2);
        (logits, params)
    }

    pub fn param_arrays_mut(&mut self) -> Vec<&mut Mat> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::s;

    #[test]
    fn inference_is_deterministic() {
        let enc = EncoderParams::init(16, 0.1, 5);
        let x: Vec<f64> = (0..16).map(|i| (i as f64 * 0.37).sin()).collect();
        let a = enc.encode(&x).unwrap();
        let b = enc.encode(&x).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), ENCODER_OUT_DIM);
        assert!(a.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let mut enc = EncoderParams::init(8, 0.0, 1);
        for m in enc.param_arrays_mut() {
            m.data.iter_mut().for_each(|v| *v = 0.0);
        }
        let x = vec![1.0; 8];
        let r = enc.encode(&x).unwrap();
        assert!(r.iter().all(|&v| v == 0.0), "{r:?}");
    }

    /// Independent straight-line reimplementation of the forward pass used
    /// as an oracle against the tape route.
    fn naive_forward(enc: &EncoderParams, x: &[f64]) -> Vec<f64> {
        let t = enc.input_dim;
        let sigmoid = |v: f64| 1.0 / (1.0 + (-v).exp());
        // conv1: 1 channel in
        let w1 = enc.conv1_w.to_array();
        let b1 = enc.conv1_b.to_array();
        let mut a1 = vec![vec![0.0; CONV1_FILTERS]; t];
        for pos in 0..t {
            for f in 0..CONV1_FILTERS {
                let mut acc = b1[(0, f)];
                for (tap, off) in [(0usize, -1isize), (1, 0), (2, 1)] {
                    let p = pos as isize + off;
                    if (0..t as isize).contains(&p) {
                        acc += x[p as usize] * w1[(tap, f)];
                    }
                }
                a1[pos][f] = acc.max(0.0);
            }
        }
        // conv2: 32 channels in
        let w2 = enc.conv2_w.to_array();
        let b2 = enc.conv2_b.to_array();
        let mut a2 = vec![vec![0.0; CONV2_FILTERS]; t];
        for pos in 0..t {
            for f in 0..CONV2_FILTERS {
                let mut acc = b2[(0, f)];
                for (tap, off) in [(0usize, -1isize), (1, 0), (2, 1)] {
                    let p = pos as isize + off;
                    if (0..t as isize).contains(&p) {
                        for c in 0..CONV1_FILTERS {
                            acc += a1[p as usize][c] * w2[(tap * CONV1_FILTERS + c, f)];
                        }
                    }
                }
                a2[pos][f] = acc.max(0.0);
            }
        }
        // lstm
        let wi = enc.lstm_w_ih.to_array();
        let wh = enc.lstm_w_hh.to_array();
        let bb = enc.lstm_b.to_array();
        let h_n = ENCODER_OUT_DIM;
        let mut h = vec![0.0; h_n];
        let mut c = vec![0.0; h_n];
        for step in 0..t {
            let mut gates = vec![0.0; 4 * h_n];
            for (g, gate) in gates.iter_mut().enumerate() {
                let mut acc = bb[(0, g)];
                for cin in 0..CONV2_FILTERS {
                    acc += a2[step][cin] * wi[(cin, g)];
                }
                for hh in 0..h_n {
                    acc += h[hh] * wh[(hh, g)];
                }
                *gate = acc;
            }
            for j in 0..h_n {
                let ig = sigmoid(gates[j]);
                let fg = sigmoid(gates[h_n + j]);
                let gg = gates[2 * h_n + j].tanh();
                let og = sigmoid(gates[3 * h_n + j]);
                c[j] = fg * c[j] + ig * gg;
                h[j] = og * c[j].tanh();
            }
        }
        h
    }

    #[test]
    fn tape_forward_matches_naive_reimplementation() {
        let enc = EncoderParams::init(12, 0.0, 77);
        let x: Vec<f64> = (0..12).map(|i| ((i as f64) * 1.3).cos() * 0.8).collect();
        let fast = enc.encode(&x).unwrap();
        let slow = naive_forward(&enc, &x);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-6, "mismatch {a} vs {b}");
        }
    }

    #[test]
    fn batch_rows_match_single_encodes() {
        let enc = EncoderParams::init(10, 0.0, 3);
        let xs = Array2::from_shape_fn((3, 10), |(r, c)| ((r * 10 + c) as f64 * 0.21).sin());
        let batch = enc.encode_batch(&xs).unwrap();
        for i in 0..3 {
            let single = enc.encode(xs.slice(s![i, ..]).as_slice().unwrap()).unwrap();
            for (a, b) in batch.row(i).iter().zip(&single) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
