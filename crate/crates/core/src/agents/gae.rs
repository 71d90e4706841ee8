//! Generalized advantage estimation.

/// One transition of a rollout as seen by GAE.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaeStep {
    pub reward: f64,
    pub value: f64,
    /// Value of the next observation (ignored when `terminated`).
    pub next_value: f64,
    /// True terminal: no bootstrap.
    pub terminated: bool,
    /// Episode or rollout boundary after this step: the advantage recursion
    /// restarts here.
    pub boundary: bool,
}

/// Advantages for a flat rollout that may contain several episode segments.
pub fn gae_steps(steps: &[GaeStep], gamma: f64, lambda: f64) -> Vec<f64> {
    let mut adv = vec![0.0; steps.len()];
    let mut next = 0.0;
    for (t, s) in steps.iter().enumerate().rev() {
        let live = if s.terminated { 0.0 } else { 1.0 };
        let delta = s.reward + gamma * live * s.next_value - s.value;
        let carry = if s.boundary || s.terminated { 0.0 } else { next };
        next = delta + gamma * lambda * carry;
        adv[t] = next;
    }
    adv
}

/// Single trajectory: `values[t]` for each reward plus the bootstrap value of
/// the state after the last reward (use 0 for a terminal end).
pub fn gae(rewards: &[f64], values: &[f64], bootstrap: f64, gamma: f64, lambda: f64) -> Vec<f64> {
    assert_eq!(rewards.len(), values.len());
    let n = rewards.len();
    let steps: Vec<GaeStep> = (0..n)
        .map(|t| GaeStep {
            reward: rewards[t],
            value: values[t],
            next_value: if t + 1 < n { values[t + 1] } else { bootstrap },
            terminated: false,
            boundary: t + 1 == n,
        })
        .collect();
    gae_steps(&steps, gamma, lambda)
}

/// Shift to zero mean and scale to unit variance (population); constant
/// inputs are only centred.
pub fn normalize(xs: &mut [f64]) {
    if xs.is_empty() {
        return;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    for x in xs.iter_mut() {
        *x -= mean;
        if std > 1e-8 {
            *x /= std;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use rand::Rng;

    #[test]
    fn lambda_zero_is_td_error() {
        let r = [1.0, 0.5, 2.0];
        let v = [0.3, -0.2, 0.9];
        let a = gae(&r, &v, 0.4, 0.9, 0.0);
        let expected = [1.0 + 0.9 * -0.2 - 0.3, 0.5 + 0.9 * 0.9 + 0.2, 2.0 + 0.9 * 0.4 - 0.9];
        for (x, y) in a.iter().zip(expected) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn lambda_one_gamma_one_is_return_minus_value() {
        let r = [1.0, 2.0, 3.0, 4.0];
        let v = [0.5, 0.1, -1.0, 2.0];
        let a = gae(&r, &v, 0.0, 1.0, 1.0);
        let expected = [10.0 - 0.5, 9.0 - 0.1, 7.0 + 1.0, 4.0 - 2.0];
        for (x, y) in a.iter().zip(expected) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_double_loop() {
        let mut rng = substream(3, &[]);
        let (g, l) = (0.97, 0.9);
        let r: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let boot = rng.random_range(-1.0..1.0);
        let a = gae(&r, &v, boot, g, l);
        let next = |t: usize| if t + 1 < 5 { v[t + 1] } else { boot };
        for t in 0..5 {
            let mut oracle = 0.0;
            for k in t..5 {
                let delta = r[k] + g * next(k) - v[k];
                oracle += (g * l).powi((k - t) as i32) * delta;
            }
            assert!((a[t] - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn terminal_cuts_bootstrap_and_carry() {
        let steps = [
            GaeStep { reward: 1.0, value: 0.0, next_value: 5.0, terminated: true, boundary: true },
            GaeStep { reward: 1.0, value: 0.0, next_value: 0.0, terminated: false, boundary: true },
        ];
        let a = gae_steps(&steps, 0.9, 0.9);
        assert_eq!(a, vec![1.0, 1.0]);
    }

    #[test]
    fn normalization() {
        let mut x = vec![1.0, 2.0, 3.0, 4.0];
        normalize(&mut x);
        let m: f64 = x.iter().sum::<f64>() / 4.0;
        let v: f64 = x.iter().map(|v| v * v).sum::<f64>() / 4.0;
        assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-12);
        let mut c = vec![2.0; 3];
        normalize(&mut c);
        assert_eq!(c, vec![0.0; 3]);
    }
}
