//! Scalar and group thresholding.

/// `sign(x)(|x| − τ)₊`
#[inline]
pub fn soft(x: f64, tau: f64) -> f64 {
    crate::local::lasso::soft_threshold(x, tau)
}

/// `x·1(|x| > τ)`
#[inline]
pub fn hard(x: f64, tau: f64) -> f64 {
    if x.abs() > tau {
        x
    } else {
        0.0
    }
}

/// `x(1 − τ/‖x‖₂)₊`, in place. A group exactly on the boundary is zeroed.
pub fn group_soft(x: &mut [f64], tau: f64) {
    let norm = l2(x);
    if norm <= tau {
        x.iter_mut().for_each(|v| *v = 0.0);
    } else {
        let scale = 1.0 - tau / norm;
        x.iter_mut().for_each(|v| *v *= scale);
    }
}

/// `x·1(‖x‖₂ > τ)`, in place.
pub fn group_hard(x: &mut [f64], tau: f64) {
    if l2(x) <= tau {
        x.iter_mut().for_each(|v| *v = 0.0);
    }
}

#[inline]
pub fn l2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Removes the mean (projection onto `{x : Σ x = 0}`).
pub fn center(x: &mut [f64]) {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    x.iter_mut().for_each(|v| *v -= mean);
}
