//! Masked-token window embedder.
//!
//! A single self-attention block over token embeddings with a masked-token
//! prediction head. Training masks each position with the configured
//! probability and minimizes cross entropy on the masked positions; at
//! inference the mean of the final hidden states is the window embedding.

use ndarray::{s, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::au::vocab::{Vocabulary, MASK_ID};
use crate::au::EventWindow;
use crate::autodiff::optim::Adam;
use crate::autodiff::{softmax_rows, NodeId, Tape};
use crate::error::{HarError, Result};

/// Training configuration for the embedder.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbedderConfig {
    /// Embedding dimension.
    pub dim: usize,
    /// Hidden width of the position-wise feed-forward sublayer.
    pub ffn_dim: usize,
    pub mask_prob: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Fraction of windows held out for the before/after loss check.
    pub holdout_frac: f64,
    pub seed: u64,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig {
            dim: 64,
            ffn_dim: 128,
            mask_prob: 0.15,
            epochs: 30,
            batch_size: 64,
            learning_rate: 1e-3,
            holdout_frac: 0.1,
            seed: 0,
        }
    }
}

/// Loss bookkeeping from a training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbedderTrainReport {
    pub initial_holdout_loss: f64,
    pub final_holdout_loss: f64,
    pub holdout_masked_accuracy: f64,
    pub epoch_losses: Vec<f64>,
}

/// Trained masked-token embedder (schema-versioned for persistence).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaskedEmbedder {
    pub schema_version: u32,
    pub vocab: Vocabulary,
    pub window_size: usize,
    pub dim: usize,
    pub mask_prob: f64,
    pub seed: u64,
    token_emb: Vec<f64>,
    pos_emb: Vec<f64>,
    wq: Vec<f64>,
    wk: Vec<f64>,
    wv: Vec<f64>,
    wo: Vec<f64>,
    ffn_w1: Vec<f64>,
    ffn_b1: Vec<f64>,
    ffn_w2: Vec<f64>,
    ffn_b2: Vec<f64>,
    head_w: Vec<f64>,
    head_b: Vec<f64>,
    ffn_dim: usize,
    pub report: EmbedderTrainReport,
}

/// Dense parameter set used during training; flattened into the serializable
/// struct afterwards.
struct Params {
    token_emb: Array2<f64>,
    pos_emb: Array2<f64>,
    wq: Array2<f64>,
    wk: Array2<f64>,
    wv: Array2<f64>,
    wo: Array2<f64>,
    ffn_w1: Array2<f64>,
    ffn_b1: Array2<f64>,
    ffn_w2: Array2<f64>,
    ffn_b2: Array2<f64>,
    head_w: Array2<f64>,
    head_b: Array2<f64>,
}

impl Params {
    fn init(vocab_size: usize, window: usize, dim: usize, ffn: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut randn = |rows: usize, cols: usize, scale: f64| {
            Array2::from_shape_fn((rows, cols), |_| {
                // Box-Muller keeps us off rand_distr here; stream is seeded
                let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
                let u2: f64 = rng.gen_range(0.0..1.0);
                (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos() * scale
            })
        };
        Params {
            token_emb: randn(vocab_size, dim, 0.02),
            pos_emb: randn(window, dim, 0.02),
            wq: randn(dim, dim, 0.05),
            wk: randn(dim, dim, 0.05),
            wv: randn(dim, dim, 0.05),
            wo: randn(dim, dim, 0.05),
            ffn_w1: randn(dim, ffn, 0.05),
            ffn_b1: Array2::zeros((1, ffn)),
            ffn_w2: randn(ffn, dim, 0.05),
            ffn_b2: Array2::zeros((1, dim)),
            head_w: randn(dim, vocab_size, 0.05),
            head_b: Array2::zeros((1, vocab_size)),
        }
    }

    fn as_vec_mut(&mut self) -> Vec<&mut Array2<f64>> {
        vec![
            &mut self.token_emb,
            &mut self.pos_emb,
            &mut self.wq,
            &mut self.wk,
            &mut self.wv,
            &mut self.wo,
            &mut self.ffn_w1,
            &mut self.ffn_b1,
            &mut self.ffn_w2,
            &mut self.ffn_b2,
            &mut self.head_w,
            &mut self.head_b,
        ]
    }
}

/// One training batch: token ids with masked positions replaced, plus the
/// original ids at those positions.
struct MaskedBatch {
    ids: Vec<u32>,
    masked_flat: Vec<usize>,
    targets: Vec<usize>,
    batch: usize,
}

fn apply_masks(windows: &[Vec<u32>], mask_prob: f64, rng: &mut ChaCha8Rng) -> MaskedBatch {
    let t = windows[0].len();
    let mut ids = Vec::with_capacity(windows.len() * t);
    let mut masked_flat = Vec::new();
    let mut targets = Vec::new();
    for (w, win) in windows.iter().enumerate() {
        for (p, &tok) in win.iter().enumerate() {
            let flat = w * t + p;
            if rng.gen_range(0.0..1.0) < mask_prob {
                ids.push(MASK_ID);
                masked_flat.push(flat);
                targets.push(tok as usize);
            } else {
                ids.push(tok);
            }
        }
    }
    MaskedBatch {
        ids,
        masked_flat,
        targets,
        batch: windows.len(),
    }
}

/// Records the forward pass on a tape and returns the masked-token loss
/// node plus the parameter nodes (in `Params` field order). `None` when the
/// batch has no masked position.
fn masked_loss(
    tape: &mut Tape,
    params: &Params,
    batch: &MaskedBatch,
    t: usize,
) -> Option<(NodeId, Vec<NodeId>)> {
    if batch.masked_flat.is_empty() {
        return None;
    }
    let b = batch.batch;
    let dim = params.wq.nrows();
    let token_emb = tape.input(params.token_emb.clone());
    let pos_emb = tape.input(params.pos_emb.clone());
    let wq = tape.input(params.wq.clone());
    let wk = tape.input(params.wk.clone());
    let wv = tape.input(params.wv.clone());
    let wo = tape.input(params.wo.clone());
    let ffn_w1 = tape.input(params.ffn_w1.clone());
    let ffn_b1 = tape.input(params.ffn_b1.clone());
    let ffn_w2 = tape.input(params.ffn_w2.clone());
    let ffn_b2 = tape.input(params.ffn_b2.clone());
    let head_w = tape.input(params.head_w.clone());
    let head_b = tape.input(params.head_b.clone());
    let param_nodes = vec![
        token_emb, pos_emb, wq, wk, wv, wo, ffn_w1, ffn_b1, ffn_w2, ffn_b2, head_w, head_b,
    ];

    let tok_idx: Vec<usize> = batch.ids.iter().map(|&i| i as usize).collect();
    let pos_idx: Vec<usize> = (0..b).flat_map(|_| 0..t).collect();
    let tok = tape.gather_rows(token_emb, tok_idx);
    let pos = tape.gather_rows(pos_emb, pos_idx);
    let x = tape.add(tok, pos);

    let q = tape.matmul(x, wq);
    let k = tape.matmul(x, wk);
    let v = tape.matmul(x, wv);
    let scores = tape.blocked_matmul_nt(q, k, b, t);
    let scores = tape.scale(scores, 1.0 / (dim as f64).sqrt());
    let attn = tape.softmax_rows(scores);
    let ctx = tape.blocked_matmul(attn, v, b, t);
    let ctx = tape.matmul(ctx, wo);
    let h1 = tape.add(x, ctx);

    let f = tape.matmul(h1, ffn_w1);
    let f = tape.add_row_bias(f, ffn_b1);
    let f = tape.relu(f);
    let f = tape.matmul(f, ffn_w2);
    let f = tape.add_row_bias(f, ffn_b2);
    let h2 = tape.add(h1, f);

    let picked = tape.gather_rows(h2, batch.masked_flat.clone());
    let logits = tape.matmul(picked, head_w);
    let logits = tape.add_row_bias(logits, head_b);
    let loss = tape.cross_entropy_mean(logits, batch.targets.clone());
    Some((loss, param_nodes))
}

impl MaskedEmbedder {
    fn from_params(
        params: Params,
        vocab: Vocabulary,
        window_size: usize,
        config: &EmbedderConfig,
        report: EmbedderTrainReport,
    ) -> Self {
        let flat = |a: &Array2<f64>| a.iter().copied().collect::<Vec<f64>>();
        MaskedEmbedder {
            schema_version: 1,
            vocab,
            window_size,
            dim: config.dim,
            mask_prob: config.mask_prob,
            seed: config.seed,
            token_emb: flat(&params.token_emb),
            pos_emb: flat(&params.pos_emb),
            wq: flat(&params.wq),
            wk: flat(&params.wk),
            wv: flat(&params.wv),
            wo: flat(&params.wo),
            ffn_w1: flat(&params.ffn_w1),
            ffn_b1: flat(&params.ffn_b1),
            ffn_w2: flat(&params.ffn_w2),
            ffn_b2: flat(&params.ffn_b2),
            head_w: flat(&params.head_w),
            head_b: flat(&params.head_b),
            ffn_dim: config.ffn_dim,
            report,
        }
    }

    fn mat(&self, data: &[f64], rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_vec((rows, cols), data.to_vec()).expect("stored shape consistent")
    }

    fn params_view(&self) -> Params {
        let v = self.vocab.len();
        let (t, d, f) = (self.window_size, self.dim, self.ffn_dim);
        Params {
            token_emb: self.mat(&self.token_emb, v, d),
            pos_emb: self.mat(&self.pos_emb, t, d),
            wq: self.mat(&self.wq, d, d),
            wk: self.mat(&self.wk, d, d),
            wv: self.mat(&self.wv, d, d),
            wo: self.mat(&self.wo, d, d),
            ffn_w1: self.mat(&self.ffn_w1, d, f),
            ffn_b1: self.mat(&self.ffn_b1, 1, f),
            ffn_w2: self.mat(&self.ffn_w2, f, d),
            ffn_b2: self.mat(&self.ffn_b2, 1, d),
            head_w: self.mat(&self.head_w, d, v),
            head_b: self.mat(&self.head_b, 1, v),
        }
    }

    /// Encodes a window's token keys through the vocabulary (unknown -> UNK).
    pub fn encode_window(&self, window: &EventWindow) -> Vec<u32> {
        window.tokens.iter().map(|k| self.vocab.encode(k)).collect()
    }

    /// Embeds a batch of windows: mean of the final hidden states, one
    /// `dim`-vector per window. Pure function of (self, windows).
    pub fn embed_batch(&self, windows: &[EventWindow]) -> Result<Array2<f64>> {
        if windows.is_empty() {
            return Ok(Array2::zeros((0, self.dim)));
        }
        let t = self.window_size;
        for w in windows {
            if w.tokens.len() != t {
                return Err(HarError::data(format!(
                    "embed: window length {} != embedder window size {t}",
                    w.tokens.len()
                )));
            }
        }
        let p = self.params_view();
        let mut out = Array2::zeros((windows.len(), self.dim));
        // fixed chunking keeps memory bounded on large blocks
        let chunk = 256usize;
        for (ci, ws) in windows.chunks(chunk).enumerate() {
            let b = ws.len();
            let mut x = Array2::zeros((b * t, self.dim));
            for (wi, w) in ws.iter().enumerate() {
                for (pi, key) in w.tokens.iter().enumerate() {
                    let id = self.vocab.encode(key) as usize;
                    let mut row = x.row_mut(wi * t + pi);
                    row.assign(&(&p.token_emb.row(id) + &p.pos_emb.row(pi)));
                }
            }
            let q = x.dot(&p.wq);
            let k = x.dot(&p.wk);
            let v = x.dot(&p.wv);
            let scale = 1.0 / (self.dim as f64).sqrt();
            let mut ctx = Array2::zeros((b * t, self.dim));
            for blk in 0..b {
                let r = s![blk * t..(blk + 1) * t, ..];
                let scores = q.slice(r).dot(&k.slice(r).t()) * scale;
                let attn = softmax_rows(&scores);
                ctx.slice_mut(r).assign(&attn.dot(&v.slice(r)));
            }
            let h1 = &x + &ctx.dot(&p.wo);
            let f = (h1.dot(&p.ffn_w1) + &p.ffn_b1.broadcast((b * t, self.ffn_dim)).unwrap())
                .mapv(|v| v.max(0.0));
            let h2 = &h1 + &(f.dot(&p.ffn_w2) + &p.ffn_b2.broadcast((b * t, self.dim)).unwrap());
            for wi in 0..b {
                let block = h2.slice(s![wi * t..(wi + 1) * t, ..]);
                out.row_mut(ci * chunk + wi)
                    .assign(&(block.sum_axis(Axis(0)) / t as f64));
            }
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(HarError::train("embed: non-finite output"));
        }
        Ok(out)
    }

    /// Embeds one window.
    pub fn embed(&self, window: &EventWindow) -> Result<Vec<f64>> {
        Ok(self
            .embed_batch(std::slice::from_ref(window))?
            .row(0)
            .to_vec())
    }
}

/// Evaluates the masked-token loss and accuracy on a fixed (window, mask)
/// set without touching parameters.
fn eval_masked(
    params: &Params,
    windows: &[Vec<u32>],
    t: usize,
    mask_seed: u64,
    mask_prob: f64,
) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(mask_seed);
    let batch = apply_masks(windows, mask_prob, &mut rng);
    if batch.masked_flat.is_empty() {
        return (0.0, 1.0);
    }
    let mut tape = Tape::new();
    let (loss, _) = masked_loss(&mut tape, params, &batch, t).expect("non-empty masks");
    let loss_val = tape.scalar(loss);
    let logits = masked_logits(params, &batch, t);
    let mut ok = 0usize;
    for (row, &target) in logits.rows().into_iter().zip(&batch.targets) {
        let (mut best, mut best_v) = (0usize, f64::NEG_INFINITY);
        for (j, &v) in row.iter().enumerate() {
            if v > best_v {
                best_v = v;
                best = j;
            }
        }
        if best == target {
            ok += 1;
        }
    }
    (loss_val, ok as f64 / batch.targets.len() as f64)
}

/// Plain forward to masked-position logits (inference-style, no tape).
fn masked_logits(params: &Params, batch: &MaskedBatch, t: usize) -> Array2<f64> {
    let b = batch.batch;
    let dim = params.wq.nrows();
    let mut x = Array2::zeros((b * t, dim));
    for (flat, &id) in batch.ids.iter().enumerate() {
        let pos = flat % t;
        x.row_mut(flat)
            .assign(&(&params.token_emb.row(id as usize) + &params.pos_emb.row(pos)));
    }
    let q = x.dot(&params.wq);
    let k = x.dot(&params.wk);
    let v = x.dot(&params.wv);
    let scale = 1.0 / (dim as f64).sqrt();
    let mut ctx = Array2::zeros((b * t, dim));
    for blk in 0..b {
        let r = s![blk * t..(blk + 1) * t, ..];
        let scores = q.slice(r).dot(&k.slice(r).t()) * scale;
        let attn = softmax_rows(&scores);
        ctx.slice_mut(r).assign(&attn.dot(&v.slice(r)));
    }
    let h1 = &x + &ctx.dot(&params.wo);
    let f = (h1.dot(&params.ffn_w1)
        + &params
            .ffn_b1
            .broadcast((b * t, params.ffn_w1.ncols()))
            .unwrap())
        .mapv(|v| v.max(0.0));
    let h2 = &h1 + &(f.dot(&params.ffn_w2) + &params.ffn_b2.broadcast((b * t, dim)).unwrap());
    let mut picked = Array2::zeros((batch.masked_flat.len(), dim));
    for (i, &flat) in batch.masked_flat.iter().enumerate() {
        picked.row_mut(i).assign(&h2.row(flat));
    }
    picked.dot(&params.head_w)
        + &params
            .head_b
            .broadcast((batch.masked_flat.len(), params.head_b.ncols()))
            .unwrap()
}

/// Trains a masked-token embedder on event windows.
///
/// Deterministic per (windows, config.seed): the shuffle, masking, and
/// initialization all derive from the seed.
pub fn train_embedder(windows: &[EventWindow], config: &EmbedderConfig) -> Result<MaskedEmbedder> {
    if windows.is_empty() {
        return Err(HarError::data("train_embedder: no windows"));
    }
    let t = windows[0].tokens.len();
    if windows.iter().any(|w| w.tokens.len() != t) {
        return Err(HarError::data("train_embedder: ragged window lengths"));
    }
    let vocab = Vocabulary::build(
        windows
            .iter()
            .flat_map(|w| w.tokens.iter().map(String::as_str)),
    );
    if vocab.real_tokens() < 2 {
        return Err(HarError::data(format!(
            "train_embedder: vocabulary has {} distinct tokens, need >= 2",
            vocab.real_tokens()
        )));
    }

    let encoded: Vec<Vec<u32>> = windows
        .iter()
        .map(|w| w.tokens.iter().map(|k| vocab.encode(k)).collect())
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..encoded.len()).collect();
    order.shuffle(&mut rng);
    let n_holdout = ((encoded.len() as f64 * config.holdout_frac).round() as usize)
        .clamp(1, encoded.len());
    let holdout: Vec<Vec<u32>> = order[..n_holdout]
        .iter()
        .map(|&i| encoded[i].clone())
        .collect();
    let train: Vec<Vec<u32>> = if n_holdout == encoded.len() {
        encoded.clone()
    } else {
        order[n_holdout..].iter().map(|&i| encoded[i].clone()).collect()
    };

    let mut params = Params::init(vocab.len(), t, config.dim, config.ffn_dim, &mut rng);
    let mask_eval_seed = config.seed ^ 0x9e37_79b9_7f4a_7c15;
    let (initial_holdout_loss, _) =
        eval_masked(&params, &holdout, t, mask_eval_seed, config.mask_prob);

    let mut adam = Adam::new(config.learning_rate);
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut train_order: Vec<usize> = (0..train.len()).collect();
    for _epoch in 0..config.epochs {
        train_order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut steps = 0usize;
        for chunk in train_order.chunks(config.batch_size) {
            let batch_windows: Vec<Vec<u32>> =
                chunk.iter().map(|&i| train[i].clone()).collect();
            let batch = apply_masks(&batch_windows, config.mask_prob, &mut rng);
            let mut tape = Tape::new();
            let Some((loss, param_nodes)) = masked_loss(&mut tape, &params, &batch, t) else {
                continue;
            };
            let loss_val = tape.scalar(loss);
            if !loss_val.is_finite() {
                return Err(HarError::train(format!(
                    "train_embedder: loss diverged at epoch {_epoch}"
                )));
            }
            epoch_loss += loss_val;
            steps += 1;
            let store = tape.backward(loss);
            let grads: Vec<_> = param_nodes
                .iter()
                .map(|&id| store.grad(id, tape.value(id).dim()))
                .collect();
            adam.step(&mut params.as_vec_mut(), &grads);
        }
        epoch_losses.push(if steps > 0 { epoch_loss / steps as f64 } else { 0.0 });
    }

    let (final_holdout_loss, holdout_masked_accuracy) =
        eval_masked(&params, &holdout, t, mask_eval_seed, config.mask_prob);

    Ok(MaskedEmbedder::from_params(
        params,
        vocab,
        t,
        config,
        EmbedderTrainReport {
            initial_holdout_loss,
            final_holdout_loss,
            holdout_masked_accuracy,
            epoch_losses,
        },
    ))
}
