use ndarray::Array2;
use rand::Rng;

use crate::error::NnError;
use crate::param::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

/// Dense network: affine layers with tanh between them, linear output.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    layers: Vec<(ParamId, ParamId)>,
}

impl Mlp {
    /// Allocates weights in `store`. `sizes` = [input, hidden..., output].
    /// The output layer is scaled by `out_gain` (small values give a near-zero
    /// initial output).
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        sizes: &[usize],
        out_gain: f64,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(NnError::Shape(format!("invalid layer sizes {sizes:?}")));
        }
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let gain = if i + 1 == n { out_gain } else { 1.0 };
                let w = store.glorot(sizes[i], sizes[i + 1], gain, rng);
                let b = store.zeros(1, sizes[i + 1]);
                (w, b)
            })
            .collect();
        Ok(Self {
            sizes: sizes.to_vec(),
            layers,
        })
    }

    /// Rebuilds the layout over arrays that already exist in a store, starting
    /// at `first` (weights and biases interleaved, as allocated by `new`).
    pub fn from_layout<T: Scalar>(store: &ParamStore<T>, sizes: &[usize], first: ParamId) -> Result<Self, NnError> {
        let n = sizes.len().saturating_sub(1);
        let mut layers = Vec::with_capacity(n);
        for i in 0..n {
            let w = ParamId(first.0 + 2 * i);
            let b = ParamId(first.0 + 2 * i + 1);
            if w.0 >= store.len() || b.0 >= store.len() {
                return Err(NnError::Shape(format!("layer {i} missing from store")));
            }
            if store.get(w).shape() != [sizes[i], sizes[i + 1]] || store.get(b).shape() != [1, sizes[i + 1]] {
                return Err(NnError::Shape(format!("layer {i} has unexpected shape")));
            }
            layers.push((w, b));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            layers,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|&(w, b)| [w, b]).collect()
    }

    fn check_input(&self, cols: usize) -> Result<(), NnError> {
        if cols != self.input_dim() {
            return Err(NnError::Shape(format!(
                "network expects {} inputs, got {cols}",
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Records a forward pass of a batch (rows = samples).
    pub fn forward<T: Scalar, U: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<U>,
        input: Var,
    ) -> Result<Var, NnError> {
        self.record(tape, store, input, false)
    }

    /// Forward pass with the weights held constant; gradients still flow to
    /// `input`.
    pub fn forward_frozen<T: Scalar, U: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<U>,
        input: Var,
    ) -> Result<Var, NnError> {
        self.record(tape, store, input, true)
    }

    fn record<T: Scalar, U: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<U>,
        input: Var,
        frozen: bool,
    ) -> Result<Var, NnError> {
        self.check_input(tape.value(input).ncols())?;
        let mut h = input;
        let last = self.layers.len() - 1;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let (wv, bv) = if frozen {
                (tape.frozen(store, w), tape.frozen(store, b))
            } else {
                (tape.param(store, w), tape.param(store, b))
            };
            let z = tape.matmul(h, wv);
            h = tape.add_row(z, bv);
            if i < last {
                h = tape.tanh(h);
            }
        }
        Ok(h)
    }

    /// Tape-free forward pass. Same arithmetic as [`Mlp::forward`].
    pub fn infer<T: Scalar>(&self, store: &ParamStore<T>, input: &Array2<T>) -> Result<Array2<T>, NnError> {
        self.check_input(input.ncols())?;
        let mut h = input.clone();
        let last = self.layers.len() - 1;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            h = h.dot(&store.get(w).values) + &store.get(b).values;
            if i < last {
                h.mapv_inplace(T::tanh_act);
            }
        }
        Ok(h)
    }
}
