//! Contrastive pretraining and supervised fine-tuning.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::optim::Adam;
use crate::autodiff::Tape;
use crate::derive_seed;
use crate::error::{HarError, Result};
use crate::ssl::augment::{noise_with_rng, scale_with_rng};
use crate::ssl::classify::Classifier;
use crate::ssl::loss::nt_xent_on_tape;
use crate::ssl::model::{EncoderParams, PredictionHeadParams, ProjectionParams};
use crate::ssl::{FeatureVector, TrainConfig};

/// Result of pretraining: the encoder (projection head discarded) plus the
/// loss trace.
#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub encoder: EncoderParams,
    pub initial_loss: f64,
    /// Mean batch loss per epoch.
    pub loss_trace: Vec<f64>,
}

fn to_matrix(data: &[FeatureVector]) -> Result<Array2<f64>> {
    if data.is_empty() {
        return Err(HarError::data("ssl: empty data"));
    }
    let dim = data[0].len();
    if data.iter().any(|v| v.len() != dim) {
        return Err(HarError::data("ssl: ragged feature vectors"));
    }
    let flat: Vec<f64> = data.iter().flatten().copied().collect();
    Ok(Array2::from_shape_vec((data.len(), dim), flat).expect("rectangular"))
}

/// Deterministic subsample: seeded shuffle then truncate.
fn subsample<T: Clone>(items: &[T], cap: Option<usize>, seed: u64) -> Vec<T> {
    match cap {
        Some(cap) if items.len() > cap => {
            let mut idx: Vec<usize> = (0..items.len()).collect();
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            idx.truncate(cap);
            idx.sort_unstable();
            idx.into_iter().map(|i| items[i].clone()).collect()
        }
        _ => items.to_vec(),
    }
}

/// Builds the interleaved view matrix for one batch: rows (2i, 2i+1) are
/// the noise and scale views of batch item i.
fn build_views(
    batch: &[&FeatureVector],
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Array2<f64> {
    let dim = batch[0].len();
    let mut views = Array2::zeros((2 * batch.len(), dim));
    for (i, x) in batch.iter().enumerate() {
        let a = noise_with_rng(x, config.noise_sigma, rng);
        let b = scale_with_rng(x, config.scale_mean, config.scale_std, rng);
        for (j, v) in a.iter().enumerate() {
            views[(2 * i, j)] = *v;
        }
        for (j, v) in b.iter().enumerate() {
            views[(2 * i + 1, j)] = *v;
        }
    }
    views
}

/// One contrastive forward/backward; returns the loss. Mutates the encoder
/// and projection through the optimizer when `opt` is given.
fn contrastive_step(
    encoder: &mut EncoderParams,
    projection: &mut ProjectionParams,
    views: &Array2<f64>,
    config: &TrainConfig,
    mask_rng: Option<&mut ChaCha8Rng>,
    opt: Option<&mut Adam>,
) -> Result<f64> {
    let mut tape = Tape::new();
    let masks = match mask_rng {
        Some(rng) => encoder.sample_masks(views.nrows(), rng),
        None => None,
    };
    let (r, enc_nodes) = encoder.forward(&mut tape, views, masks)?;
    let (z, proj_nodes) = projection.forward(&mut tape, r);
    // cosine similarity needs nonzero rows
    for (i, row) in tape.value(z).rows().into_iter().enumerate() {
        let norm: f64 = row.iter().map(|v| v * v).sum();
        if norm < 1e-24 || !norm.is_finite() {
            return Err(HarError::train(format!(
                "pretrain: projected vector {i} has zero/non-finite norm"
            )));
        }
    }
    let loss = nt_xent_on_tape(&mut tape, z, config.temperature);
    let loss_val = tape.scalar(loss);
    if let Some(opt) = opt {
        let store = tape.backward(loss);
        let grads: Vec<Array2<f64>> = enc_nodes
            .iter()
            .chain(proj_nodes.iter())
            .map(|&id| store.grad(id, tape.value(id).dim()))
            .collect();
        let mut params = encoder.param_arrays_mut();
        params.extend(projection.param_arrays_mut());
        let mut arrays: Vec<Array2<f64>> = params.iter().map(|m| m.to_array()).collect();
        {
            let mut refs: Vec<&mut Array2<f64>> = arrays.iter_mut().collect();
            opt.step(&mut refs, &grads);
        }
        for (m, a) in params.into_iter().zip(arrays) {
            m.data = a.iter().copied().collect();
        }
    }
    Ok(loss_val)
}

/// Pretrains the encoder with NT-Xent over augmented pairs.
///
/// Each item yields (noise view, scale view) as the positive pair; batches
/// are `config.batch_size` items (2N views); trailing partial batches are
/// dropped. Deterministic per (data, config.seed). Returns the encoder
/// only; the projection head is discarded.
pub fn pretrain(data: &[FeatureVector], config: &TrainConfig) -> Result<PretrainOutcome> {
    if data.len() < config.batch_size {
        return Err(HarError::data(format!(
            "pretrain: {} samples < batch size {}",
            data.len(),
            config.batch_size
        )));
    }
    if config.batch_size < 2 {
        return Err(HarError::data("pretrain: batch size must be >= 2"));
    }
    let data = subsample(data, config.max_pretrain_samples, derive_seed(config.seed, "ssl-subsample"));
    let matrix = to_matrix(&data)?;
    let dim = matrix.ncols();

    let mut encoder = EncoderParams::init(dim, config.dropout, derive_seed(config.seed, "ssl-encoder"));
    let mut projection = ProjectionParams::init(derive_seed(config.seed, "ssl-projection"));

    // loss at initialization: sequential batches, no dropout, eval-only
    let mut eval_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "ssl-init-eval"));
    let mut initial_loss = 0.0;
    let mut init_batches = 0usize;
    for chunk in data.chunks(config.batch_size) {
        if chunk.len() < 2 {
            continue;
        }
        let refs: Vec<&FeatureVector> = chunk.iter().collect();
        let views = build_views(&refs, config, &mut eval_rng);
        initial_loss +=
            contrastive_step(&mut encoder, &mut projection, &views, config, None, None)?;
        init_batches += 1;
    }
    if init_batches > 0 {
        initial_loss /= init_batches as f64;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "ssl-pretrain"));
    let mut opt = Adam::new(config.learning_rate);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut loss_trace = Vec::with_capacity(config.pretrain_epochs);
    for epoch in 0..config.pretrain_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut steps = 0usize;
        for chunk in order.chunks(config.batch_size) {
            if chunk.len() < config.batch_size {
                continue; // contrastive batches are full-size only
            }
            let refs: Vec<&FeatureVector> = chunk.iter().map(|&i| &data[i]).collect();
            let views = build_views(&refs, config, &mut rng);
            let loss = contrastive_step(
                &mut encoder,
                &mut projection,
                &views,
                config,
                Some(&mut rng),
                Some(&mut opt),
            )?;
            if !loss.is_finite() {
                return Err(HarError::train(format!(
                    "pretrain diverged at epoch {epoch}; trace so far: {loss_trace:?}"
                )));
            }
            epoch_loss += loss;
            steps += 1;
        }
        loss_trace.push(if steps > 0 { epoch_loss / steps as f64 } else { 0.0 });
    }

    Ok(PretrainOutcome {
        encoder,
        initial_loss,
        loss_trace,
    })
}

/// Fine-tunes the encoder plus a fresh prediction head on labeled seed
/// points with cross entropy. The encoder is updated unless
/// `config.freeze_encoder` is set.
pub fn fine_tune(
    encoder: &EncoderParams,
    seeds: &[(FeatureVector, String)],
    config: &TrainConfig,
) -> Result<Classifier> {
    if seeds.is_empty() {
        return Err(HarError::data("fine_tune: no seed points"));
    }
    let mut labels: Vec<String> = seeds.iter().map(|(_, l)| l.clone()).collect();
    labels.sort();
    labels.dedup();
    if labels.len() < 2 {
        return Err(HarError::data(
            "fine_tune: need at least two distinct labels",
        ));
    }

    // class-interleaved deterministic cap so no label disappears
    let seeds: Vec<(FeatureVector, String)> = match config.max_finetune_samples {
        Some(cap) if seeds.len() > cap => {
            let mut by_class: Vec<Vec<&(FeatureVector, String)>> = labels
                .iter()
                .map(|l| seeds.iter().filter(|(_, sl)| sl == l).collect())
                .collect();
            let mut shuffle_rng =
                ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "ssl-ft-subsample"));
            for class in &mut by_class {
                class.shuffle(&mut shuffle_rng);
            }
            let mut taken = Vec::with_capacity(cap);
            let mut round = 0usize;
            while taken.len() < cap {
                let mut any = false;
                for class in &by_class {
                    if let Some(item) = class.get(round) {
                        taken.push((*item).clone());
                        any = true;
                        if taken.len() == cap {
                            break;
                        }
                    }
                }
                if !any {
                    break;
                }
                round += 1;
            }
            taken
        }
        _ => seeds.to_vec(),
    };

    let targets: Vec<usize> = seeds
        .iter()
        .map(|(_, l)| labels.binary_search(l).expect("label known"))
        .collect();
    let features: Vec<FeatureVector> = seeds.iter().map(|(f, _)| f.clone()).collect();
    let matrix = to_matrix(&features)?;

    let mut encoder = encoder.clone();
    let mut head = PredictionHeadParams::init(labels.len(), derive_seed(config.seed, "ssl-head"));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "ssl-finetune"));
    let mut opt = Adam::new(config.learning_rate);
    let mut order: Vec<usize> = (0..seeds.len()).collect();
    let mut loss_trace = Vec::with_capacity(config.finetune_epochs);

    for epoch in 0..config.finetune_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut steps = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let rows: Vec<usize> = chunk.to_vec();
            let mut batch = Array2::zeros((rows.len(), matrix.ncols()));
            let mut batch_targets = Vec::with_capacity(rows.len());
            for (bi, &i) in rows.iter().enumerate() {
                batch.row_mut(bi).assign(&matrix.row(i));
                batch_targets.push(targets[i]);
            }
            let mut tape = Tape::new();
            let masks = encoder.sample_masks(batch.nrows(), &mut rng);
            let (r, enc_nodes) = encoder.forward(&mut tape, &batch, masks)?;
            let (logits, head_nodes) = head.forward(&mut tape, r);
            let loss = tape.cross_entropy_mean(logits, batch_targets);
            let loss_val = tape.scalar(loss);
            if !loss_val.is_finite() {
                return Err(HarError::train(format!(
                    "fine_tune diverged at epoch {epoch}; trace so far: {loss_trace:?}"
                )));
            }
            epoch_loss += loss_val;
            steps += 1;
            let store = tape.backward(loss);
            if config.freeze_encoder {
                let grads: Vec<Array2<f64>> = head_nodes
                    .iter()
                    .map(|&id| store.grad(id, tape.value(id).dim()))
                    .collect();
                let mut params = head.param_arrays_mut();
                apply_step(&mut opt, &mut params, &grads);
            } else {
                let grads: Vec<Array2<f64>> = enc_nodes
                    .iter()
                    .chain(head_nodes.iter())
                    .map(|&id| store.grad(id, tape.value(id).dim()))
                    .collect();
                let mut params = encoder.param_arrays_mut();
                params.extend(head.param_arrays_mut());
                apply_step(&mut opt, &mut params, &grads);
            }
        }
        loss_trace.push(if steps > 0 { epoch_loss / steps as f64 } else { 0.0 });
    }

    Ok(Classifier {
        schema_version: 1,
        encoder,
        head,
        labels,
        seed: config.seed,
        loss_trace,
    })
}

fn apply_step(
    opt: &mut Adam,
    params: &mut [&mut crate::ssl::model::Mat],
    grads: &[Array2<f64>],
) {
    let mut arrays: Vec<Array2<f64>> = params.iter().map(|m| m.to_array()).collect();
    {
        let mut refs: Vec<&mut Array2<f64>> = arrays.iter_mut().collect();
        opt.step(&mut refs, grads);
    }
    for (m, a) in params.iter_mut().zip(arrays) {
        m.data = a.iter().copied().collect();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ssl::predict_thresholded;

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            batch_size: 8,
            pretrain_epochs: 2,
            finetune_epochs: 30,
            seed: 5,
            ..TrainConfig::default()
        }
    }

    fn fixture(n: usize, dim: usize) -> Vec<FeatureVector> {
        (0..n)
            .map(|i| {
                (0..dim)
                    .map(|j| ((i * dim + j) as f64 * 0.7).sin() + 0.1 * (i % 3) as f64)
                    .collect()
            })
            .collect()
    }

    #[test]
    fn pretrain_loss_decreases_from_init() {
        let data = fixture(32, 12);
        let out = pretrain(&data, &tiny_config()).unwrap();
        assert!(
            out.loss_trace[0] < out.initial_loss,
            "epoch-1 loss {} not below initial {}",
            out.loss_trace[0],
            out.initial_loss
        );
    }

    #[test]
    fn pretrain_is_deterministic() {
        let data = fixture(24, 10);
        let a = pretrain(&data, &tiny_config()).unwrap();
        let b = pretrain(&data, &tiny_config()).unwrap();
        assert_eq!(a.encoder, b.encoder);
        assert_eq!(a.loss_trace, b.loss_trace);
    }

    #[test]
    fn pretrain_rejects_small_data() {
        let data = fixture(4, 10);
        assert!(pretrain(&data, &tiny_config()).is_err());
    }

    fn separable_seeds(n_per: usize, dim: usize) -> Vec<(FeatureVector, String)> {
        let mut seeds = Vec::new();
        for i in 0..n_per {
            let mut a = vec![0.0; dim];
            a[0] = 1.0 + 0.01 * i as f64;
            a[1] = -0.5;
            seeds.push((a, "A".to_string()));
            let mut b = vec![0.0; dim];
            b[dim - 1] = 1.0 + 0.01 * i as f64;
            b[1] = 0.5;
            seeds.push((b, "B".to_string()));
        }
        seeds
    }

    #[test]
    fn fine_tune_fits_separable_toy() {
        let seeds = separable_seeds(8, 8);
        let enc = EncoderParams::init(8, 0.0, 1);
        let mut config = tiny_config();
        config.dropout = 0.0;
        config.finetune_epochs = 200;
        let clf = fine_tune(&enc, &seeds, &config).unwrap();
        let mut correct = 0;
        for (x, label) in &seeds {
            if let Some((pred, _)) = predict_thresholded(&clf, x, 0.5).unwrap() {
                if &pred == label {
                    correct += 1;
                }
            }
        }
        assert_eq!(correct, seeds.len(), "training accuracy below 1.0");
        // loss decreased across the first epochs
        assert!(clf.loss_trace[1] < clf.loss_trace[0]);
    }

    #[test]
    fn fine_tune_rejects_single_class() {
        let seeds: Vec<(FeatureVector, String)> = (0..6)
            .map(|i| (vec![i as f64; 4], "Only".to_string()))
            .collect();
        let enc = EncoderParams::init(4, 0.0, 1);
        assert!(fine_tune(&enc, &seeds, &tiny_config()).is_err());
    }

    #[test]
    fn label_index_round_trip() {
        let seeds = separable_seeds(4, 6);
        let enc = EncoderParams::init(6, 0.0, 2);
        let mut config = tiny_config();
        config.finetune_epochs = 5;
        let clf = fine_tune(&enc, &seeds, &config).unwrap();
        for label in &clf.labels {
            let idx = clf.labels.binary_search(label).unwrap();
            assert_eq!(&clf.labels[idx], label);
        }
    }
}
