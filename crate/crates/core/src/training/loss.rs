use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor};

/// Per-class loss weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights(pub Vec<f64>);

impl ClassWeights {
    pub fn uniform(k: usize) -> Self {
        ClassWeights(vec![1.0; k])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Class weights from the effective number of samples:
/// `e_t = (1 − ε^{n_t}) / (1 − ε)`, `w̃_t = 1/e_t`,
/// `w_t = w̃_t / Σ_k w̃_k · Σ_k n_k`.
pub fn effective_number_weights(counts: &[u64], eps: f64) -> Result<ClassWeights> {
    if counts.is_empty() {
        return Err(Error::InvalidArgument("no class counts given".into()));
    }
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::InvalidArgument(format!(
            "effective-number ε must lie in [0, 1), got {eps}"
        )));
    }
    if let Some(t) = counts.iter().position(|&n| n == 0) {
        return Err(Error::InvalidArgument(format!("class {t} has no samples")));
    }
    let inv_effective: Vec<f64> = counts
        .iter()
        .map(|&n| (1.0 - eps) / (1.0 - eps.powf(n as f64)))
        .collect();
    let norm: f64 = inv_effective.iter().sum();
    let total: f64 = counts.iter().map(|&n| n as f64).sum();
    Ok(ClassWeights(
        inv_effective.iter().map(|w| w / norm * total).collect(),
    ))
}

/// Batch-mean focal loss of probabilities `p[B, K]` against soft labels.
pub fn focal_loss(p: &Tensor, soft_labels: &[f64], weights: &ClassWeights, gamma: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let pv = tape.input(p.clone());
    let l = tape.focal_loss(pv, soft_labels, weights.as_slice(), gamma)?;
    Ok(tape.value(l).data()[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Direct transcription of the effective-number formula.
    fn oracle(counts: &[u64], eps: f64) -> Vec<f64> {
        let e: Vec<f64> = counts
            .iter()
            .map(|&n| (1.0 - eps.powi(n as i32)) / (1.0 - eps))
            .collect();
        let wt: Vec<f64> = e.iter().map(|v| 1.0 / v).collect();
        let s: f64 = wt.iter().sum();
        let n: f64 = counts.iter().sum::<u64>() as f64;
        wt.iter().map(|w| w / s * n).collect()
    }

    #[test]
    fn equal_counts_give_equal_weights() {
        let w = effective_number_weights(&[40, 40], 0.9).unwrap();
        assert_abs_diff_eq!(w.0[0], 40.0, epsilon = 1e-9);
        assert_abs_diff_eq!(w.0[1], 40.0, epsilon = 1e-9);
    }

    #[test]
    fn sleep_counts_saturate() {
        // 2087 + 16366 = 18453
        let w = effective_number_weights(&[2087, 16366], 0.99).unwrap();
        for v in &w.0 {
            assert!((v - 9226.5).abs() < 0.1, "{v}");
        }
        let o = oracle(&[2087, 16366], 0.99);
        assert_abs_diff_eq!(w.0[0], o[0], epsilon = 1e-9);
    }

    #[test]
    fn zero_eps_is_uniform() {
        let w = effective_number_weights(&[1, 1_000_000], 0.0).unwrap();
        assert_eq!(w.0[0], w.0[1]);
        assert_abs_diff_eq!(w.0[0], 1_000_001.0 / 2.0, epsilon = 1e-6);
    }

    #[test]
    fn matches_oracle_on_small_counts() {
        for (counts, eps) in [(&[3u64, 17][..], 0.9), (&[5, 2, 9][..], 0.5), (&[100, 7][..], 0.999)] {
            let w = effective_number_weights(counts, eps).unwrap();
            for (a, b) in w.0.iter().zip(oracle(counts, eps)) {
                assert_abs_diff_eq!(*a, b, epsilon = 1e-9 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(effective_number_weights(&[1, 2], 1.0).is_err());
        assert!(effective_number_weights(&[0, 2], 0.5).is_err());
    }

    #[test]
    fn focal_examples() {
        let w = ClassWeights::uniform(2);
        let p = Tensor::new(&[1, 2], vec![0.5, 0.5]).unwrap();
        let l = focal_loss(&p, &[1.0, 0.0], &w, 2.0).unwrap();
        assert_abs_diff_eq!(l, 0.25 * 2f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(l, 0.173287, epsilon = 1e-6);

        let sure = Tensor::new(&[1, 2], vec![0.0, 1.0]).unwrap();
        assert_eq!(focal_loss(&sure, &[0.0, 1.0], &w, 2.25).unwrap(), 0.0);

        let p = Tensor::new(&[2, 2], vec![0.8, 0.2, 0.3, 0.7]).unwrap();
        let ce = -(0.8f64.ln() + 0.7f64.ln()) / 2.0;
        let l = focal_loss(&p, &[1.0, 0.0, 0.0, 1.0], &w, 0.0).unwrap();
        assert_abs_diff_eq!(l, ce, epsilon = 1e-12);
    }

    #[test]
    fn rejects_non_distributions() {
        let w = ClassWeights::uniform(2);
        let p = Tensor::new(&[1, 2], vec![0.5, 0.6]).unwrap();
        assert!(focal_loss(&p, &[1.0, 0.0], &w, 2.0).is_err());
    }
}
