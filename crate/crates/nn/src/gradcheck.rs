//! Central finite-difference check of tape gradients.
//!
//! Losses implement [`Objective`] generically so the same graph can be
//! replayed in `f64`, which keeps the difference quotient well above
//! rounding noise.

use ndarray::Array2;
use rand::seq::index::sample;
use rand::Rng;

use crate::error::NnError;
use crate::param::ParamStore;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

/// A scalar loss of the parameters in a store.
pub trait Objective {
    fn loss<T: Scalar>(&self, tape: &mut Tape<T>, params: &ParamStore<T>) -> Result<Var, NnError>;
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    pub eps: f64,
    pub coords: usize,
    /// Denominator floor so coordinates with vanishing gradients are compared
    /// in absolute terms.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            coords: 64,
            floor: 1e-6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// (array index, flat element index, analytic, numeric) of the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
}

/// Value and analytic gradient of `obj` at `params`, in `f64`.
pub fn value_and_grad<O: Objective>(obj: &O, params: &ParamStore<f64>) -> Result<(f64, Vec<Array2<f64>>), NnError> {
    let mut tape = Tape::<f64>::new();
    let root = obj.loss(&mut tape, params)?;
    let grads = tape.backward(root)?;
    Ok((tape.scalar(root), grads.for_store(params)))
}

fn eval<O: Objective>(obj: &O, params: &ParamStore<f64>) -> Result<f64, NnError> {
    let mut tape = Tape::<f64>::new();
    let root = obj.loss(&mut tape, params)?;
    Ok(tape.scalar(root))
}

/// Max relative error `|analytic - numeric| / max(|numeric|, floor)` over a
/// random subset of at least `cfg.coords` coordinates (all of them when the
/// store is smaller).
pub fn grad_check<O: Objective, S: Scalar, R: Rng + ?Sized>(
    obj: &O,
    params: &ParamStore<S>,
    cfg: GradCheckConfig,
    rng: &mut R,
) -> Result<GradCheckReport, NnError> {
    let p64 = params.cast::<f64>();
    let (_, analytic) = value_and_grad(obj, &p64)?;
    compare_gradients(obj, &p64, &analytic, cfg, rng)
}

/// Compares a supplied gradient against central differences of `obj`.
pub fn compare_gradients<O: Objective, R: Rng + ?Sized>(
    obj: &O,
    params: &ParamStore<f64>,
    analytic: &[Array2<f64>],
    cfg: GradCheckConfig,
    rng: &mut R,
) -> Result<GradCheckReport, NnError> {
    let index: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .flat_map(|(a, p)| (0..p.values.len()).map(move |e| (a, e)))
        .collect();
    let picks: Vec<usize> = if index.len() <= cfg.coords {
        (0..index.len()).collect()
    } else {
        let mut v = sample(rng, index.len(), cfg.coords).into_vec();
        v.sort_unstable();
        v
    };

    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        worst: None,
    };
    for k in picks {
        let (a, e) = index[k];
        let orig = flat(&work, a, e);
        set_flat(&mut work, a, e, orig + cfg.eps);
        let plus = eval(obj, &work)?;
        set_flat(&mut work, a, e, orig - cfg.eps);
        let minus = eval(obj, &work)?;
        set_flat(&mut work, a, e, orig);

        let numeric = (plus - minus) / (2.0 * cfg.eps);
        let an = analytic[a].iter().nth(e).copied().unwrap_or(f64::NAN);
        let rel = (an - numeric).abs() / numeric.abs().max(cfg.floor);
        report.checked += 1;
        if rel > report.max_rel_error || rel.is_nan() {
            report.max_rel_error = if rel.is_nan() { f64::INFINITY } else { rel };
            report.worst = Some((a, e, an, numeric));
        }
    }
    Ok(report)
}

fn flat(store: &ParamStore<f64>, a: usize, e: usize) -> f64 {
    let p = store.iter().nth(a).unwrap();
    *p.values.iter().nth(e).unwrap()
}

fn set_flat(store: &mut ParamStore<f64>, a: usize, e: usize, v: f64) {
    let p = store.iter_mut().nth(a).unwrap();
    *p.values.iter_mut().nth(e).unwrap() = v;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::param::ParamId;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Quadratic;
    impl Objective for Quadratic {
        fn loss<T: Scalar>(&self, tape: &mut Tape<T>, params: &ParamStore<T>) -> Result<Var, NnError> {
            let w = tape.param(params, ParamId(0));
            let sq = tape.square(w);
            let s = tape.sum(sq);
            Ok(tape.scale(s, T::c(1.5)))
        }
    }

    fn store() -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.push(array![[0.3, -1.2, 2.0], [0.7, 0.01, -0.4]]);
        s
    }

    #[test]
    fn quadratic_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = GradCheckConfig {
            eps: 1e-3,
            ..Default::default()
        };
        let r = grad_check(&Quadratic, &store(), cfg, &mut rng).unwrap();
        assert_eq!(r.checked, 6);
        assert!(r.max_rel_error <= 1e-8, "{r:?}");
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = store();
        let (_, g) = value_and_grad(&Quadratic, &s).unwrap();
        let doubled: Vec<_> = g.iter().map(|a| a * 2.0).collect();
        let r = compare_gradients(&Quadratic, &s, &doubled, GradCheckConfig::default(), &mut rng).unwrap();
        assert!((r.max_rel_error - 1.0).abs() < 1e-6, "{r:?}");
    }
}
