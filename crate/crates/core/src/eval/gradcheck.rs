use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradcheckConfig {
    pub eps: f64,
    pub tolerance: f64,
    /// Above this many parameters a seeded subsample of this size is checked.
    pub max_checked: usize,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            eps: 1e-5,
            tolerance: 1e-3,
            max_checked: 10_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub passed: bool,
    pub max_rel_err: f64,
    /// Parameter index where `max_rel_err` occurred.
    pub worst_index: usize,
    pub checked: usize,
}

/// Relative error `|a − n| / max(|a|, |n|, 1e-6)`; the floor keeps parameters
/// with vanishing gradients from dividing roundoff by zero.
fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Compares `analytic` with central differences of `loss` around `theta`.
/// Passes iff the largest relative error is strictly below the tolerance.
pub fn gradcheck(
    theta: &[f64],
    analytic: &[f64],
    mut loss: impl FnMut(&[f64]) -> f64,
    cfg: &GradcheckConfig,
) -> Result<GradcheckReport> {
    if theta.len() != analytic.len() {
        return Err(Error::Dimension(format!(
            "{} parameters but {} gradient entries",
            theta.len(),
            analytic.len()
        )));
    }
    let indices: Vec<usize> = if theta.len() > cfg.max_checked {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut v = rand::seq::index::sample(&mut rng, theta.len(), cfg.max_checked).into_vec();
        v.sort_unstable();
        v
    } else {
        (0..theta.len()).collect()
    };
    let mut p = theta.to_vec();
    let mut worst = (0.0f64, 0usize);
    for &i in &indices {
        let orig = p[i];
        p[i] = orig + cfg.eps;
        let up = loss(&p);
        p[i] = orig - cfg.eps;
        let down = loss(&p);
        p[i] = orig;
        let numeric = (up - down) / (2.0 * cfg.eps);
        if !numeric.is_finite() || !analytic[i].is_finite() {
            return Err(Error::NonFinite {
                step: 0,
                what: format!("gradient check at parameter {i}"),
            });
        }
        let e = rel_err(analytic[i], numeric);
        if e > worst.0 || i == indices[0] {
            worst = (e, i);
        }
    }
    Ok(GradcheckReport {
        passed: worst.0 < cfg.tolerance,
        max_rel_err: worst.0,
        worst_index: worst.1,
        checked: indices.len(),
    })
}

/// [`gradcheck`] over every parameter of `model`; `loss_and_grad` returns the
/// loss and the flattened analytic gradient in [`ParamSet`] order.
pub fn gradcheck_params<P: ParamSet<f64>>(
    model: &mut P,
    mut loss_and_grad: impl FnMut(&P) -> (f64, Vec<f64>),
    cfg: &GradcheckConfig,
) -> Result<GradcheckReport> {
    let theta = model.to_flat();
    let (_, analytic) = loss_and_grad(model);
    let report = gradcheck(
        &theta,
        &analytic,
        |p| {
            model.set_flat(p);
            loss_and_grad(model).0
        },
        cfg,
    );
    model.set_flat(&theta);
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let r = gradcheck(&[3.0], &[6.0], |p| p[0] * p[0], &GradcheckConfig::default()).unwrap();
        assert!(r.passed);
        assert!(r.max_rel_err < 1e-8);
    }

    #[test]
    fn zero_tolerance_fails_on_rounding() {
        let cfg = GradcheckConfig {
            tolerance: 0.0,
            ..Default::default()
        };
        let r = gradcheck(&[3.0], &[6.0], |p| p[0] * p[0], &cfg).unwrap();
        assert!(!r.passed);
    }

    #[test]
    fn wrong_gradient_fails() {
        let r = gradcheck(
            &[1.0, 2.0],
            &[2.0, 5.0],
            |p| p[0] * p[0] + p[1] * p[1],
            &GradcheckConfig::default(),
        )
        .unwrap();
        assert!(!r.passed);
        assert_eq!(r.worst_index, 1);
    }

    #[test]
    fn non_finite_names_parameter() {
        let err = gradcheck(
            &[1.0, 0.0],
            &[0.0, 0.0],
            |p| p[0] + p[1].sqrt(),
            &GradcheckConfig::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("parameter 1"), "{err}");
    }

    #[test]
    fn large_models_are_subsampled() {
        let n = 50;
        let theta: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let grad: Vec<f64> = theta.iter().map(|v| 2.0 * v).collect();
        let cfg = GradcheckConfig {
            max_checked: 10,
            ..Default::default()
        };
        let r = gradcheck(&theta, &grad, |p| p.iter().map(|v| v * v).sum(), &cfg).unwrap();
        assert_eq!(r.checked, 10);
        assert!(r.passed);
    }
}
