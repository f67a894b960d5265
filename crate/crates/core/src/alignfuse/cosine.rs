use std::sync::Once;

use crate::scalar::{dot, norm, Real};

const MIN_NORM: f64 = 1e-12;
static ZERO_NORM: Once = Once::new();

fn warn_zero_norm() {
    ZERO_NORM.call_once(|| log::warn!("cosine similarity of a zero-norm vector taken as 0"));
}

/// Cosine similarity; 0 when either vector has norm below 1e-12.
pub fn cosine_sim<T: Real>(a: &[T], b: &[T]) -> T {
    let na = norm(a);
    let nb = norm(b);
    if na.as_f64() < MIN_NORM || nb.as_f64() < MIN_NORM {
        warn_zero_norm();
        return T::zero();
    }
    let s = dot(a, b) / (na * nb);
    s.max(-T::one()).min(T::one())
}

/// Cosine similarity with its gradients with respect to `a` and `b`. The
/// zero-norm case returns zero gradients.
pub fn cosine_grad<T: Real>(a: &[T], b: &[T]) -> (T, Vec<T>, Vec<T>) {
    let na = norm(a);
    let nb = norm(b);
    if na.as_f64() < MIN_NORM || nb.as_f64() < MIN_NORM {
        warn_zero_norm();
        return (T::zero(), vec![T::zero(); a.len()], vec![T::zero(); b.len()]);
    }
    let s = dot(a, b) / (na * nb);
    let inv = T::one() / (na * nb);
    let ka = s / (na * na);
    let kb = s / (nb * nb);
    let da = a.iter().zip(b).map(|(x, y)| *y * inv - *x * ka).collect();
    let db = a.iter().zip(b).map(|(x, y)| *x * inv - *y * kb).collect();
    (s, da, db)
}
