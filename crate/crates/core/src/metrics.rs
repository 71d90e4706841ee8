//! Quadratic step cost, exponentiated episode return, length-normalized
//! evaluation return, RMSE, and small statistics helpers.

use ndarray::{Array1, Array2};

use crate::error::{config, domain, Result};

/// Constant weight matrices of the quadratic cost.
#[derive(Clone, Debug, PartialEq)]
pub struct CostWeights {
    pub state: Array2<f64>,
    pub input: Array2<f64>,
}

impl CostWeights {
    pub fn diagonal(state: &[f64], input: &[f64]) -> Self {
        Self {
            state: Array2::from_diag(&Array1::from(state.to_vec())),
            input: Array2::from_diag(&Array1::from(input.to_vec())),
        }
    }

    pub fn cartpole_default() -> Self {
        Self::diagonal(&[1.0, 1.0, 0.1, 0.1], &[0.1])
    }

    pub fn quadrotor_default() -> Self {
        Self::diagonal(&[1.0, 1.0, 0.1, 0.1, 0.1, 0.1], &[0.1, 0.1])
    }

    /// Symmetric to 1e-12 and positive semi-definite (eigenvalues >= -1e-10).
    pub fn validate(&self) -> Result<()> {
        check_psd(&self.state, "weights.state")?;
        check_psd(&self.input, "weights.input")
    }
}

fn check_psd(m: &Array2<f64>, name: &str) -> Result<()> {
    let (r, c) = m.dim();
    if r != c || r == 0 {
        return Err(config(format!("{name} must be a non-empty square matrix, got {r}x{c}")));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(config(format!("{name} has non-finite entries")));
    }
    for i in 0..r {
        for j in 0..i {
            if (m[[i, j]] - m[[j, i]]).abs() > 1e-12 {
                return Err(config(format!("{name} is not symmetric at ({i}, {j})")));
            }
        }
    }
    let dm = nalgebra::DMatrix::from_fn(r, c, |i, j| m[[i, j]]);
    let min = dm.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min);
    if min < -1e-10 {
        return Err(config(format!("{name} is not positive semi-definite (eigenvalue {min})")));
    }
    Ok(())
}

fn quad_form(m: &Array2<f64>, v: &[f64]) -> f64 {
    let v = Array1::from(v.to_vec());
    v.dot(&m.dot(&v))
}

/// `(x - xg)' Wx (x - xg) + (u - ug)' Wu (u - ug)`.
pub fn quadratic_cost(x: &[f64], x_goal: &[f64], u: &[f64], u_goal: &[f64], w: &CostWeights) -> Result<f64> {
    let n = w.state.nrows();
    let m = w.input.nrows();
    if x.len() != n || x_goal.len() != n || u.len() != m || u_goal.len() != m {
        return Err(domain(format!(
            "cost dimensions: x {} goal {} (weights {n}), u {} goal {} (weights {m})",
            x.len(),
            x_goal.len(),
            u.len(),
            u_goal.len()
        )));
    }
    let dx: Vec<f64> = x.iter().zip(x_goal).map(|(a, b)| a - b).collect();
    let du: Vec<f64> = u.iter().zip(u_goal).map(|(a, b)| a - b).collect();
    let c = quad_form(&w.state, &dx) + quad_form(&w.input, &du);
    if !c.is_finite() {
        return Err(domain("non-finite cost"));
    }
    // roundoff can leave a PSD form a hair below zero
    Ok(c.max(0.0))
}

/// Per-step reward `exp(-cost)`.
pub fn step_reward(cost: f64) -> f64 {
    (-cost).exp()
}

/// Sum of `exp(-cost)` over an episode.
pub fn episode_return(costs: &[f64]) -> Result<f64> {
    if let Some(c) = costs.iter().find(|c| !(**c >= 0.0)) {
        return Err(domain(format!("costs must be non-negative, got {c}")));
    }
    Ok(costs.iter().map(|c| step_reward(*c)).sum())
}

/// Mean over episodes of return divided by episode length.
pub fn avg_normalized_return(episodes: &[(f64, usize)]) -> Result<f64> {
    if episodes.is_empty() {
        return Err(domain("no episodes to average"));
    }
    let mut total = 0.0;
    for &(ret, len) in episodes {
        if len == 0 {
            return Err(domain("episode length must be >= 1"));
        }
        total += ret / len as f64;
    }
    Ok(total / episodes.len() as f64)
}

/// Root of the mean squared Euclidean distance between paired vectors.
pub fn rmse(states: &[Vec<f64>], references: &[Vec<f64>]) -> Result<f64> {
    if states.len() != references.len() || states.is_empty() {
        return Err(domain(format!(
            "rmse needs equal non-empty sequences, got {} and {}",
            states.len(),
            references.len()
        )));
    }
    let mut sum = 0.0;
    for (s, r) in states.iter().zip(references) {
        if s.len() != r.len() {
            return Err(domain("rmse vector dimension mismatch"));
        }
        sum += s.iter().zip(r).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok((sum / states.len() as f64).sqrt())
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1); zero for fewer than two values.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Ranks starting at 1, ties get the average rank.
fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|a, b| xs[*a].total_cmp(&xs[*b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            out[idx[k]] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation (Pearson on average ranks).
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(domain("spearman needs two equal-length sequences of length >= 2"));
    }
    let (rx, ry) = (ranks(xs), ranks(ys));
    let (mx, my) = (mean(&rx), mean(&ry));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(domain("spearman undefined for a constant sequence"));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub ret: f64,
    pub len: usize,
    pub rmse: f64,
}

impl EpisodeRecord {
    pub fn normalized_return(&self) -> f64 {
        self.ret / self.len as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSummary {
    pub episodes: Vec<EpisodeRecord>,
}

impl EvalSummary {
    pub fn new(episodes: Vec<EpisodeRecord>) -> Result<Self> {
        if episodes.is_empty() {
            return Err(domain("evaluation summary needs at least one episode"));
        }
        Ok(Self { episodes })
    }

    pub fn n(&self) -> usize {
        self.episodes.len()
    }

    pub fn normalized_returns(&self) -> Vec<f64> {
        self.episodes.iter().map(EpisodeRecord::normalized_return).collect()
    }

    pub fn mean_return(&self) -> f64 {
        let pairs: Vec<(f64, usize)> = self.episodes.iter().map(|e| (e.ret, e.len)).collect();
        avg_normalized_return(&pairs).expect("non-empty summary")
    }

    pub fn std_return(&self) -> f64 {
        std_dev(&self.normalized_returns())
    }

    pub fn mean_rmse(&self) -> f64 {
        mean(&self.episodes.iter().map(|e| e.rmse).collect::<Vec<_>>())
    }

    pub fn std_rmse(&self) -> f64 {
        std_dev(&self.episodes.iter().map(|e| e.rmse).collect::<Vec<_>>())
    }

    pub fn mean_len(&self) -> f64 {
        mean(&self.episodes.iter().map(|e| e.len as f64).collect::<Vec<_>>())
    }
}
