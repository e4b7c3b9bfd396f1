//! Normalized temperature-scaled cross entropy (NT-Xent).

use ndarray::Array2;

use crate::autodiff::{NodeId, Tape};
use crate::error::{HarError, Result};

/// Direct evaluation of the NT-Xent loss.
///
/// `z` holds 2N projected vectors where rows `(2i, 2i+1)` are the augmented
/// views of the same input. For each anchor i the loss is
/// `-log( exp(sim(z_i, z_j)/tau) / sum_{k != i} exp(sim(z_i, z_k)/tau) )`
/// with cosine similarity, averaged over all 2N anchors and stabilized by
/// max subtraction. A single pair (N = 1) gives exactly zero.
pub fn nt_xent(z: &[Vec<f64>], tau: f64) -> Result<f64> {
    if z.len() < 2 || z.len() % 2 != 0 {
        return Err(HarError::data(format!(
            "nt_xent: need an even number of views >= 2, got {}",
            z.len()
        )));
    }
    if tau <= 0.0 {
        return Err(HarError::data("nt_xent: temperature must be positive"));
    }
    let n = z.len();
    let dim = z[0].len();
    if z.iter().any(|v| v.len() != dim) {
        return Err(HarError::data("nt_xent: ragged vectors"));
    }
    let mut unit = Vec::with_capacity(n);
    for (i, v) in z.iter().enumerate() {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(HarError::data(format!(
                "nt_xent: vector {i} has zero/non-finite norm; cosine undefined"
            )));
        }
        unit.push(v.iter().map(|x| x / norm).collect::<Vec<f64>>());
    }
    let sim = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut total = 0.0;
    for i in 0..n {
        let partner = i ^ 1;
        let mut mx = f64::NEG_INFINITY;
        for k in 0..n {
            if k != i {
                mx = mx.max(sim(&unit[i], &unit[k]) / tau);
            }
        }
        let mut denom = 0.0;
        for k in 0..n {
            if k != i {
                denom += (sim(&unit[i], &unit[k]) / tau - mx).exp();
            }
        }
        let pos = sim(&unit[i], &unit[partner]) / tau;
        total += mx + denom.ln() - pos;
    }
    Ok(total / n as f64)
}

/// Tape route used during pretraining: normalize rows, cosine similarity
/// matrix, temperature scale, paired contrastive loss. Agrees with
/// [`nt_xent`] (both routes are cross-checked in tests).
pub fn nt_xent_on_tape(tape: &mut Tape, z: NodeId, tau: f64) -> NodeId {
    let zn = tape.l2_normalize_rows(z);
    let sims = tape.matmul_nt(zn, zn);
    let sims = tape.scale(sims, 1.0 / tau);
    tape.ntxent_pairs(sims)
}

/// Convenience wrapper for evaluating the tape route on raw vectors.
pub fn nt_xent_via_tape(z: &[Vec<f64>], tau: f64) -> f64 {
    let dim = z[0].len();
    let flat: Vec<f64> = z.iter().flatten().copied().collect();
    let arr = Array2::from_shape_vec((z.len(), dim), flat).expect("rectangular");
    let mut tape = Tape::new();
    let node = tape.input(arr);
    let loss = nt_xent_on_tape(&mut tape, node, tau);
    tape.scalar(loss)
}

#[cfg(test)]
mod tests {
    use super::*;

    // independently computed: mean anchor loss on {e1,e1,e2,e2}, tau=1
    // equals ln(1 + 2/e)
    const ORTHONORMAL_PAIR_LOSS: f64 = 0.5514447139320511;

    #[test]
    fn single_pair_is_exactly_zero() {
        let z = vec![vec![0.3, -1.2, 0.7], vec![-2.0, 0.4, 0.9]];
        assert_eq!(nt_xent(&z, 0.5).unwrap(), 0.0);
        assert_eq!(nt_xent(&z, 3.0).unwrap(), 0.0);
    }

    #[test]
    fn orthonormal_two_pair_fixture() {
        let z = vec![
            vec![1.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, 1.0],
        ];
        let loss = nt_xent(&z, 1.0).unwrap();
        assert!(
            (loss - ORTHONORMAL_PAIR_LOSS).abs() < 1e-6,
            "loss {loss} vs oracle {ORTHONORMAL_PAIR_LOSS}"
        );
    }

    #[test]
    fn invariant_under_uniform_positive_rescaling() {
        let z = vec![
            vec![0.5, 0.1, -0.3],
            vec![0.4, 0.2, -0.2],
            vec![-0.7, 0.9, 0.1],
            vec![-0.6, 0.8, 0.2],
        ];
        let a = nt_xent(&z, 0.5).unwrap();
        let scaled: Vec<Vec<f64>> = z
            .iter()
            .map(|v| v.iter().map(|x| x * 37.5).collect())
            .collect();
        let b = nt_xent(&scaled, 0.5).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn zero_vector_is_rejected() {
        let z = vec![vec![0.0, 0.0], vec![1.0, 0.0]];
        assert!(nt_xent(&z, 1.0).is_err());
    }

    #[test]
    fn loss_is_nonnegative() {
        // denominator includes the positive term, so each anchor's loss >= 0
        let mut vecs = Vec::new();
        let mut state = 12345u64;
        for _ in 0..8 {
            let v: Vec<f64> = (0..5)
                .map(|_| {
                    state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
                    ((state >> 33) as f64 / (1u64 << 31) as f64) - 1.0
                })
                .collect();
            vecs.push(v);
        }
        for tau in [0.1, 0.5, 1.0, 5.0] {
            assert!(nt_xent(&vecs, tau).unwrap() >= 0.0);
        }
    }

    #[test]
    fn tape_route_agrees_with_direct_route() {
        let z = vec![
            vec![0.9, 0.2, 0.1, -0.5],
            vec![0.8, 0.3, 0.2, -0.4],
            vec![-0.2, 0.7, -0.6, 0.1],
            vec![-0.3, 0.8, -0.5, 0.2],
            vec![0.1, -0.9, 0.4, 0.3],
            vec![0.2, -0.8, 0.5, 0.2],
        ];
        for tau in [0.2, 0.5, 1.0] {
            let direct = nt_xent(&z, tau).unwrap();
            let taped = nt_xent_via_tape(&z, tau);
            assert!(
                (direct - taped).abs() < 1e-10,
                "tau {tau}: direct {direct} vs tape {taped}"
            );
        }
    }
}
