//! Thresholded activity prediction.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autodiff::softmax_rows;
use crate::error::{HarError, Result};
use crate::ssl::model::{EncoderParams, PredictionHeadParams};

/// Fine-tuned encoder plus prediction head with the label mapping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    pub schema_version: u32,
    pub encoder: EncoderParams,
    pub head: PredictionHeadParams,
    /// Sorted label list; row index in the head output = position here.
    pub labels: Vec<String>,
    pub seed: u64,
    pub loss_trace: Vec<f64>,
}

impl Classifier {
    /// Softmax probabilities for a batch of feature vectors.
    pub fn predict_probs_batch(&self, xs: &Array2<f64>) -> Result<Array2<f64>> {
        let mut probs = Array2::zeros((xs.nrows(), self.labels.len()));
        // chunked so eval over long blocks stays memory-bounded
        let chunk = 256usize;
        for (ci, rows) in (0..xs.nrows()).collect::<Vec<_>>().chunks(chunk).enumerate() {
            let mut sub = Array2::zeros((rows.len(), xs.ncols()));
            for (bi, &r) in rows.iter().enumerate() {
                sub.row_mut(bi).assign(&xs.row(r));
            }
            let r = self.encoder.encode_batch(&sub)?;
            let logits = self.head_logits(&r);
            let p = softmax_rows(&logits);
            for bi in 0..rows.len() {
                probs.row_mut(ci * chunk + bi).assign(&p.row(bi));
            }
        }
        Ok(probs)
    }

    pub fn predict_probs(&self, x: &[f64]) -> Result<Vec<f64>> {
        let xs = Array2::from_shape_vec((1, x.len()), x.to_vec())
            .map_err(|e| HarError::data(format!("predict: {e}")))?;
        Ok(self.predict_probs_batch(&xs)?.row(0).to_vec())
    }

    fn head_logits(&self, r: &Array2<f64>) -> Array2<f64> {
        let w1 = self.head.w1.to_array();
        let b1 = self.head.b1.to_array();
        let w2 = self.head.w2.to_array();
        let b2 = self.head.b2.to_array();
        let h = (r.dot(&w1) + &b1.broadcast((r.nrows(), w1.ncols())).unwrap())
            .mapv(|v| v.max(0.0));
        h.dot(&w2) + &b2.broadcast((r.nrows(), w2.ncols())).unwrap()
    }
}

/// Softmax prediction gated by a confidence threshold: the argmax label is
/// returned only when its probability reaches `theta`.
pub fn predict_thresholded(
    classifier: &Classifier,
    x: &[f64],
    theta: f64,
) -> Result<Option<(String, f64)>> {
    if !(0.0..1.0).contains(&theta) || theta <= 0.0 {
        return Err(HarError::data("predict_thresholded: theta must be in (0,1)"));
    }
    let probs = classifier.predict_probs(x)?;
    Ok(pick(&probs, theta).map(|(idx, p)| (classifier.labels[idx].clone(), p)))
}

/// Batch variant returning label indices.
pub fn predict_thresholded_batch(
    classifier: &Classifier,
    xs: &Array2<f64>,
    theta: f64,
) -> Result<Vec<Option<(usize, f64)>>> {
    if !(0.0..1.0).contains(&theta) || theta <= 0.0 {
        return Err(HarError::data("predict_thresholded: theta must be in (0,1)"));
    }
    let probs = classifier.predict_probs_batch(xs)?;
    Ok(probs
        .rows()
        .into_iter()
        .map(|row| pick(&row.to_owned().insert_axis(ndarray::Axis(0)), theta))
        .collect())
}

fn pick(probs: &Array2<f64>, theta: f64) -> Option<(usize, f64)> {
    let row = probs.row(0);
    let (mut best, mut best_p) = (0usize, f64::NEG_INFINITY);
    for (i, &p) in row.iter().enumerate() {
        if p > best_p {
            best_p = p;
            best = i;
        }
    }
    (best_p >= theta).then_some((best, best_p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ssl::model::Mat;

    /// Classifier with an identity-ish head so logits are controllable.
    fn hand_classifier(logit_bias: [f64; 2]) -> Classifier {
        let encoder = EncoderParams::init(4, 0.0, 0);
        let mut head = PredictionHeadParams::init(2, 0);
        // zero both layers, then set the output bias to the target logits
        head.w1 = Mat::zeros(64, 256);
        head.b1 = Mat::zeros(1, 256);
        head.w2 = Mat::zeros(256, 2);
        head.b2 = Mat {
            rows: 1,
            cols: 2,
            data: logit_bias.to_vec(),
        };
        Classifier {
            schema_version: 1,
            encoder,
            head,
            labels: vec!["A".into(), "B".into()],
            seed: 0,
            loss_trace: vec![],
        }
    }

    #[test]
    fn hand_built_logits_softmax() {
        // logits (2.0, 0.0): P(A) = e^2 / (e^2 + 1) = 0.8807970779778824
        let clf = hand_classifier([2.0, 0.0]);
        let out = predict_thresholded(&clf, &[0.0; 4], 0.7).unwrap();
        let (label, conf) = out.expect("above threshold");
        assert_eq!(label, "A");
        assert!((conf - 0.8807970779778824).abs() < 1e-9, "conf {conf}");
    }

    #[test]
    fn threshold_ceiling_yields_none() {
        let clf = hand_classifier([2.0, 0.0]);
        let out = predict_thresholded(&clf, &[0.0; 4], 1.0 - 1e-9).unwrap();
        assert!(out.is_none());
    }

    #[test]
    fn threshold_below_uniform_always_predicts() {
        let clf = hand_classifier([0.3, -0.1]);
        // 1/|classes| = 0.5; just below it the argmax always clears
        let out = predict_thresholded(&clf, &[0.0; 4], 0.5 - 1e-6).unwrap();
        assert!(out.is_some());
    }

    #[test]
    fn softmax_sums_to_one_and_positive() {
        let clf = hand_classifier([1.3, -0.7]);
        let probs = clf.predict_probs(&[0.1, 0.2, 0.3, 0.4]).unwrap();
        let sum: f64 = probs.iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
        assert!(probs.iter().all(|&p| p > 0.0));
    }

    #[test]
    fn constant_logit_shift_keeps_argmax() {
        let a = hand_classifier([2.0, 0.0]);
        let b = hand_classifier([7.0, 5.0]);
        let pa = a.predict_probs(&[0.0; 4]).unwrap();
        let pb = b.predict_probs(&[0.0; 4]).unwrap();
        let argmax = |p: &[f64]| {
            p.iter()
                .enumerate()
                .max_by(|x, y| x.1.partial_cmp(y.1).unwrap())
                .unwrap()
                .0
        };
        assert_eq!(argmax(&pa), argmax(&pb));
    }

    #[test]
    fn invalid_theta_rejected() {
        let clf = hand_classifier([1.0, 0.0]);
        assert!(predict_thresholded(&clf, &[0.0; 4], 0.0).is_err());
        assert!(predict_thresholded(&clf, &[0.0; 4], 1.0).is_err());
    }
}
