//! Risk measures used by WCPG and RAAC: the Gaussian CVaR weight, the Monte
//! Carlo CVaR of a quantile critic, the quantile (pinball) loss and the
//! variance Bellman target.

use rand::Rng as _;
use rand_distr::Open01;

use crate::error::{domain, Result};
use crate::rng::Rng;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn std_normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// `Q - (pdf(alpha) / cdf(alpha)) sqrt(var)` for a return distribution
/// `N(Q, var)`.
///
/// The coefficient is evaluated at `alpha` itself, not at the alpha-quantile
/// `Phi^-1(alpha)` that the textbook Gaussian CVaR uses.
pub fn gaussian_cvar(q: f64, var: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(domain(format!("CVaR level must lie in (0, 1], got {alpha}")));
    }
    if !(var >= 0.0) {
        return Err(domain(format!("variance must be non-negative, got {var}")));
    }
    Ok(q - std_normal_pdf(alpha) / std_normal_cdf(alpha) * var.sqrt())
}

/// `K` percentiles drawn uniformly from the open interval `(0, alpha)`.
pub fn sample_taus(alpha: f64, k: usize, rng: &mut Rng) -> Result<Vec<f64>> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(domain(format!("CVaR level must lie in (0, 1], got {alpha}")));
    }
    if k == 0 {
        return Err(domain("need at least one quantile sample"));
    }
    Ok((0..k)
        .map(|_| {
            let u: f64 = rng.sample(Open01);
            alpha * u
        })
        .collect())
}

/// Monte Carlo CVaR of a quantile function: `(1/K) sum_k z(tau_k)` with
/// `tau_k ~ U(0, alpha)`.
///
/// Sampling on `(0, alpha)` already carries the `1/alpha` of
/// `(1/alpha) int_0^alpha z(tau) dtau`, so the sum is divided by `K` only.
pub fn raac_cvar(mut z: impl FnMut(f64) -> f64, alpha: f64, k: usize, rng: &mut Rng) -> Result<f64> {
    let taus = sample_taus(alpha, k, rng)?;
    Ok(taus.iter().map(|&t| z(t)).sum::<f64>() / k as f64)
}

/// Quantile regression loss `u (tau - 1{u < 0})` for residual
/// `u = target - prediction`.
pub fn pinball(u: f64, tau: f64) -> f64 {
    u * (tau - if u < 0.0 { 1.0 } else { 0.0 })
}

/// Expected pinball loss of predicting `theta` for a discrete distribution
/// given as `(value, probability)` atoms.
pub fn expected_pinball(atoms: &[(f64, f64)], theta: f64, tau: f64) -> f64 {
    atoms.iter().map(|&(v, p)| p * pinball(v - theta, tau)).sum()
}

/// One-sample target for the return variance of `(s, a)`:
/// `r^2 + 2 gamma r Q' + gamma^2 (var' + Q'^2) - Q^2`.
/// Its expectation over transitions is the variance Bellman backup when `q`
/// is the mean return of `(s, a)`. Single samples can be negative; flooring
/// them would bias that expectation upwards.
pub fn variance_target(reward: f64, terminated: bool, q_next: f64, var_next: f64, q: f64, gamma: f64) -> f64 {
    let second = if terminated {
        reward * reward
    } else {
        reward * reward + 2.0 * gamma * reward * q_next + gamma * gamma * (var_next + q_next * q_next)
    };
    second - q * q
}
