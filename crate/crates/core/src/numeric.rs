//! Shared numerically careful scalar helpers.

/// Largest linear-predictor magnitude fed to `exp`; keeps intensities finite.
pub const EXP_CLAMP: f64 = 700.0;

/// Inverse logit, branch-free against overflow in either tail.
pub fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^t) without overflow.
pub fn log1p_exp(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// log(sigmoid(eta)); exact in both tails, never -inf for finite input.
pub fn log_sigmoid(eta: f64) -> f64 {
    -log1p_exp(-eta)
}
