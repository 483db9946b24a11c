use super::Real;

pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus<T: Real>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Mean binary cross-entropy of `sigmoid(logits)` against a constant label,
/// plus its gradient with respect to each logit.
pub fn bce_with_logits<T: Real>(logits: &[T], label: bool) -> (T, Vec<T>) {
    let n = T::of(logits.len() as f64);
    let mut loss = T::zero();
    let mut grad = Vec::with_capacity(logits.len());
    for &z in logits {
        // -ln σ(z) = softplus(-z); -ln(1-σ(z)) = softplus(z)
        if label {
            loss += softplus(-z);
            grad.push((sigmoid(z) - T::one()) / n);
        } else {
            loss += softplus(z);
            grad.push(sigmoid(z) / n);
        }
    }
    (loss / n, grad)
}

/// Mean absolute difference over positions where `weight` is nonzero.
/// Weights act as a per-element mask; an empty mask gives zero.
pub fn masked_l1<T: Real>(pred: &[T], target: &[T], weight: Option<&[T]>) -> T {
    assert_eq!(pred.len(), target.len());
    match weight {
        None => {
            if pred.is_empty() {
                return T::zero();
            }
            let s: T = pred.iter().zip(target).map(|(&p, &t)| (p - t).abs()).sum();
            s / T::of(pred.len() as f64)
        }
        Some(w) => {
            assert_eq!(w.len(), pred.len());
            let total: T = w.iter().copied().sum();
            if total == T::zero() {
                return T::zero();
            }
            let s: T = pred
                .iter()
                .zip(target)
                .zip(w)
                .map(|((&p, &t), &m)| m * (p - t).abs())
                .sum();
            s / total
        }
    }
}

/// Gradient of [`masked_l1`] with respect to `pred`.
pub fn masked_l1_grad<T: Real>(pred: &[T], target: &[T], weight: Option<&[T]>) -> Vec<T> {
    let total = match weight {
        None => T::of(pred.len() as f64),
        Some(w) => w.iter().copied().sum(),
    };
    if total == T::zero() {
        return vec![T::zero(); pred.len()];
    }
    pred.iter()
        .zip(target)
        .enumerate()
        .map(|(i, (&p, &t))| {
            let m = weight.map_or(T::one(), |w| w[i]);
            let d = p - t;
            let s = if d > T::zero() {
                T::one()
            } else if d < T::zero() {
                -T::one()
            } else {
                T::zero()
            };
            m * s / total
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bce_at_half() {
        let (l_real, _) = bce_with_logits(&[0.0f64], true);
        let (l_fake, _) = bce_with_logits(&[0.0f64], false);
        assert!((l_real - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((l_fake - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn confident_real_costs_nothing() {
        let (l, g) = bce_with_logits(&[40.0f64], true);
        assert!(l < 1e-15);
        assert!(g[0].abs() < 1e-15);
    }

    #[test]
    fn masked_l1_cases() {
        let p = [0.5f64, 0.7, 0.1];
        let t = [0.3f64, 0.5, 0.9];
        let m = [1.0f64, 1.0, 0.0];
        assert!((masked_l1(&p, &t, Some(&m)) - 0.2).abs() < 1e-12);
        assert_eq!(masked_l1(&p, &t, Some(&[0.0; 3])), 0.0);
        assert_eq!(masked_l1(&p, &p, None), 0.0);
    }
}
