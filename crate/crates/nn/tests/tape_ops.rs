use ndarray::{array, Array2};
use perturbrl_nn::gradcheck::value_and_grad;
use perturbrl_nn::policy::{log_prob_on_tape, rsample_on_tape};
use perturbrl_nn::{
    grad_check, GaussianPolicy, GradCheckConfig, Mlp, NnError, Objective, ParamId, ParamStore,
    Scalar, Tape, Var,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[test]
fn square_at_three_has_gradient_six() {
    let mut store = ParamStore::<f64>::new();
    let w = store.push(array![[3.0]]);
    let mut tape = Tape::<f64>::new();
    let x = tape.param(&store, w);
    let y = tape.square(x);
    let g = tape.backward(y).unwrap();
    assert_eq!(g.for_store(&store)[0], array![[6.0]]);
}

#[test]
fn constant_has_zero_gradient() {
    let mut store = ParamStore::<f64>::new();
    store.push(array![[1.5, 2.0]]);
    let mut tape = Tape::<f64>::new();
    let _unused = tape.param(&store, ParamId(0));
    let c = tape.constant(array![[4.0]]);
    let y = tape.square(c);
    let g = tape.backward(y).unwrap();
    assert_eq!(g.for_store(&store)[0], array![[0.0, 0.0]]);
}

#[test]
fn non_scalar_root_is_rejected() {
    let mut tape = Tape::<f64>::new();
    let c = tape.constant(array![[1.0, 2.0]]);
    assert!(matches!(tape.backward(c), Err(NnError::NonScalarRoot(1, 2))));
}

#[test]
fn fan_out_accumulates() {
    // f(w) = w * w + 3 w, w used three times
    let mut store = ParamStore::<f64>::new();
    store.push(array![[2.0]]);
    let mut tape = Tape::<f64>::new();
    let w = tape.param(&store, ParamId(0));
    let ww = tape.mul(w, w);
    let w3 = tape.scale(w, 3.0);
    let y = tape.add(ww, w3);
    let g = tape.backward(y).unwrap();
    assert_eq!(g.for_store(&store)[0], array![[7.0]]);
}

/// Exercises every primitive in one smooth loss.
struct AllOps {
    x: Array2<f64>,
}

impl Objective for AllOps {
    fn loss<T: Scalar>(&self, tape: &mut Tape<T>, p: &ParamStore<T>) -> Result<Var, NnError> {
        let x = tape.constant(self.x.mapv(T::c));
        let w = tape.param(p, ParamId(0));
        let b = tape.param(p, ParamId(1));
        let s = tape.param(p, ParamId(2));
        let h = tape.matmul(x, w);
        let h = tape.add_row(h, b);
        let t = tape.tanh(h);
        let e = tape.exp(t);
        let sp = tape.softplus(h);
        let l = tape.ln(sp);
        let m = tape.mul(e, l);
        let d = tape.sub(m, t);
        let sq = tape.square(d);
        let cl = tape.clamp(h, T::c(-5.0), T::c(5.0));
        let mn = tape.minimum(sq, cl);
        let scaled = tape.mul_scalar_var(mn, s);
        let cols = tape.sum_cols(scaled);
        let bc = tape.broadcast_cols(cols, 2);
        let cat = tape.concat_cols(&[bc, t]);
        let sl = tape.slice_cols(cat, 1, 4);
        let row = tape.slice_cols(b, 0, 3);
        let br = tape.broadcast_rows(row, self.x.nrows());
        let z = tape.add(sl, br);
        let z = tape.add_scalar(z, T::c(0.3));
        let z = tape.neg(z);
        let total = tape.sum(z);
        let avg = tape.mean(sq);
        Ok(tape.add(total, avg))
    }
}

#[test]
fn every_primitive_passes_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::<f64>::new();
    store.glorot(3, 4, 1.0, &mut rng);
    store.push(array![[0.1, -0.2, 0.3, 0.05]]);
    store.push(array![[0.8]]);
    let x = Array2::from_shape_fn((5, 3), |(i, j)| ((i * 3 + j) as f64 * 0.37).sin());
    let r = grad_check(&AllOps { x }, &store, GradCheckConfig::default(), &mut rng).unwrap();
    assert!(r.max_rel_error <= 1e-6, "{r:?}");
}

/// Squashed-Gaussian actor objective: reparameterized sample pushed through
/// a quadratic "critic", plus the log density of fixed actions.
struct ActorLoss {
    policy: GaussianPolicy,
    obs: Array2<f64>,
    eps: Array2<f64>,
    raw: Array2<f64>,
}

impl Objective for ActorLoss {
    fn loss<T: Scalar>(&self, tape: &mut Tape<T>, p: &ParamStore<T>) -> Result<Var, NnError> {
        let obs = tape.constant(self.obs.mapv(T::c));
        let (mean, log_std) = self.policy.distribution_on_tape(tape, p, obs)?;
        let (a, lp) = rsample_on_tape(tape, mean, log_std, &self.eps.mapv(T::c));
        let q = tape.square(a);
        let q = tape.sum_cols(q);
        let lp_fixed = log_prob_on_tape(tape, mean, log_std, &self.raw.mapv(T::c));
        let t = tape.sub(lp, q);
        let t = tape.add(t, lp_fixed);
        Ok(tape.mean(t))
    }
}

#[test]
fn actor_loss_gradient_matches_finite_differences_at_eps_1e3() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut store = ParamStore::<f32>::new();
    let policy = GaussianPolicy::state_dependent(&mut store, 3, &[16, 16], 2, &mut rng).unwrap();
    // move the output layer away from its near-zero init
    for id in policy.net.param_ids() {
        store.get_mut(id).values.mapv_inplace(|v| v * 1.5 + 0.05);
    }
    let n = 8;
    let obs = Array2::from_shape_fn((n, 3), |_| StandardNormal.sample(&mut rng));
    let eps = Array2::from_shape_fn((n, 2), |_| StandardNormal.sample(&mut rng));
    let raw = Array2::from_shape_fn((n, 2), |_| StandardNormal.sample(&mut rng));
    let obj = ActorLoss { policy, obs, eps, raw };
    let cfg = GradCheckConfig {
        eps: 1e-3,
        coords: 64,
        floor: 1e-3,
    };
    let r = grad_check(&obj, &store, cfg, &mut rng).unwrap();
    assert!(r.checked >= 64);
    assert!(r.max_rel_error <= 1e-4, "{r:?}");
}

#[test]
fn f32_and_f64_tapes_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::<f32>::new();
    let mlp = Mlp::new(&mut store, &[4, 8, 1], 1.0, &mut rng).unwrap();
    let x = Array2::from_shape_fn((6, 4), |(i, j)| (i as f32 - j as f32) * 0.1);
    struct L<'a>(&'a Mlp, Array2<f64>);
    impl Objective for L<'_> {
        fn loss<T: Scalar>(&self, tape: &mut Tape<T>, p: &ParamStore<T>) -> Result<Var, NnError> {
            let x = tape.constant(self.1.mapv(T::c));
            let y = self.0.forward(tape, p, x)?;
            let y = tape.square(y);
            Ok(tape.mean(y))
        }
    }
    let obj = L(&mlp, x.mapv(|v| v as f64));
    let (v64, g64) = value_and_grad(&obj, &store.cast()).unwrap();
    let mut tape = Tape::<f32>::new();
    let root = obj.loss(&mut tape, &store).unwrap();
    let g32 = tape.backward(root).unwrap().for_store(&store);
    assert!((tape.scalar(root) as f64 - v64).abs() < 1e-5);
    for (a, b) in g32.iter().zip(&g64) {
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((*x as f64 - y).abs() < 1e-4);
        }
    }
}
