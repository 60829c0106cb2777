use rand_distr::{Beta, Distribution};

use crate::error::{Error, Result};
use crate::numerics::RngState;

/// Convex combination of two samples and their label vectors.
pub fn mixup(
    x_i: &[f64],
    y_i: &[f64],
    x_j: &[f64],
    y_j: &[f64],
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidArgument(format!(
            "mixup coefficient must lie in [0, 1], got {lambda}"
        )));
    }
    if x_i.len() != x_j.len() || y_i.len() != y_j.len() {
        return Err(Error::shape(
            "mixup",
            format!(
                "inputs {} vs {}, labels {} vs {}",
                x_i.len(),
                x_j.len(),
                y_i.len(),
                y_j.len()
            ),
        ));
    }
    let blend = |a: &[f64], b: &[f64]| -> Vec<f64> {
        if lambda == 1.0 {
            return a.to_vec();
        }
        a.iter()
            .zip(b)
            .map(|(p, q)| lambda * p + (1.0 - lambda) * q)
            .collect()
    };
    Ok((blend(x_i, x_j), blend(y_i, y_j)))
}

/// Draws the mixing coefficient from `Beta(α, α)`.
pub fn sample_lambda(alpha: f64, rng: &mut RngState) -> Result<f64> {
    let beta = Beta::new(alpha, alpha)
        .map_err(|e| Error::InvalidArgument(format!("Beta({alpha}, {alpha}): {e}")))?;
    Ok(beta.sample(rng))
}
