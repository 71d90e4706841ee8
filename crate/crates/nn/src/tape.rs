//! Reverse-mode automatic differentiation over 2-D arrays.
//!
//! A [`Tape`] records every primitive in evaluation order, so the node list is
//! already topologically sorted. [`Tape::backward`] walks it once in reverse,
//! accumulating adjoints additively wherever a value fans out.

use ndarray::{s, Array2, Axis, Zip};

use crate::error::NnError;
use crate::param::{ParamId, ParamStore};
use crate::scalar::Scalar;

/// Handle to a node on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    MulScalarVar(Var, Var),
    Tanh(Var),
    Exp(Var),
    Ln(Var),
    Softplus(Var),
    Square(Var),
    Clamp(Var, T, T),
    Minimum(Var, Var),
    Sum(Var),
    Mean(Var),
    SumCols(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
    BroadcastRows(Var),
    BroadcastCols(Var),
}

#[derive(Clone, Debug)]
struct Node<T> {
    value: Array2<T>,
    op: Op<T>,
}

/// Recorded computation. Cheap to create; build one per loss evaluation.
#[derive(Clone, Debug, Default)]
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    bindings: Vec<(ParamId, Var)>,
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    nodes: Vec<Option<Array2<T>>>,
    bindings: Vec<(ParamId, Var)>,
}

impl<T: Scalar> Gradients<T> {
    /// Adjoint of an arbitrary node; `None` when the root does not depend on it.
    pub fn wrt(&self, v: Var) -> Option<&Array2<T>> {
        self.nodes[v.0].as_ref()
    }

    /// Gradients for every array of `store`, summed over all bindings of the
    /// same parameter. Unused parameters get zeros.
    pub fn for_store<U: Scalar>(&self, store: &ParamStore<U>) -> Vec<Array2<T>> {
        let mut out: Vec<Array2<T>> = store
            .iter()
            .map(|p| Array2::zeros(p.values.raw_dim()))
            .collect();
        for &(pid, var) in &self.bindings {
            if let Some(g) = &self.nodes[var.0] {
                out[pid.0] += g;
            }
        }
        out
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            bindings: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<T> {
        &self.nodes[v.0].value
    }

    /// Value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn constant(&mut self, value: Array2<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Places a parameter on the tape, converting its element type. Gradients
    /// flowing into the returned node are attributed to `id`.
    pub fn param<U: Scalar>(&mut self, store: &ParamStore<U>, id: ParamId) -> Var {
        let value = store.get(id).values.mapv(|x| T::c(x.to_f64().unwrap_or(f64::NAN)));
        let v = self.push(value, Op::Leaf);
        self.bindings.push((id, v));
        v
    }

    /// Places a parameter on the tape as a constant: no gradient reaches `id`.
    pub fn frozen<U: Scalar>(&mut self, store: &ParamStore<U>, id: ParamId) -> Var {
        let value = store.get(id).values.mapv(|x| T::c(x.to_f64().unwrap_or(f64::NAN)));
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    /// `a` (n x m) plus a row vector `row` (1 x m) broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let value = self.value(a) + self.value(row);
        self.push(value, Op::AddRow(a, row))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) - self.value(b);
        self.push(value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) * self.value(b);
        self.push(value, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let value = self.value(a) * c;
        self.push(value, Op::Scale(a, c))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -T::one())
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        let value = self.value(a) + c;
        self.push(value, Op::AddScalar(a))
    }

    /// Matrix `a` times a 1x1 node `s`.
    pub fn mul_scalar_var(&mut self, a: Var, s: Var) -> Var {
        let k = self.scalar(s);
        let value = self.value(a) * k;
        self.push(value, Op::MulScalarVar(a, s))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(T::tanh_act);
        self.push(value, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(T::exp);
        self.push(value, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(T::ln);
        self.push(value, Op::Ln(a))
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(softplus);
        self.push(value, Op::Softplus(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x * x);
        self.push(value, Op::Square(a))
    }

    /// Elementwise clamp; the gradient passes only where `lo <= x <= hi`.
    pub fn clamp(&mut self, a: Var, lo: T, hi: T) -> Var {
        let value = self.value(a).mapv(|x| x.max(lo).min(hi));
        self.push(value, Op::Clamp(a, lo, hi))
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Var {
        let mut value = self.value(a).clone();
        Zip::from(&mut value)
            .and(self.value(b))
            .for_each(|x, &y| *x = x.min(y));
        self.push(value, Op::Minimum(a, b))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(value, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let n = T::c(v.len() as f64);
        let value = Array2::from_elem((1, 1), v.sum() / n);
        self.push(value, Op::Mean(a))
    }

    /// Row sums as an n x 1 column.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let value = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(value, Op::SumCols(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("row counts must agree");
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let value = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(value, Op::SliceCols(a, start, end))
    }

    /// Repeats a 1 x m row `rows` times.
    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Var {
        let v = self.value(a);
        let value = v.broadcast((rows, v.ncols())).expect("1 x m row").to_owned();
        self.push(value, Op::BroadcastRows(a))
    }

    /// Repeats an n x 1 column `cols` times.
    pub fn broadcast_cols(&mut self, a: Var, cols: usize) -> Var {
        let v = self.value(a);
        let value = v.broadcast((v.nrows(), cols)).expect("n x 1 column").to_owned();
        self.push(value, Op::BroadcastCols(a))
    }

    /// Reverse sweep from a 1x1 root.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>, NnError> {
        let shape = self.value(root).dim();
        if shape != (1, 1) {
            return Err(NnError::NonScalarRoot(shape.0, shape.1));
        }
        let mut grads: Vec<Option<Array2<T>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Array2::ones((1, 1)));

        for i in (0..=root.0).rev() {
            let Some(g_keep) = grads[i].take() else { continue };
            let g = g_keep.clone();
            let node = &self.nodes[i];
            let mut out: Vec<(Var, Array2<T>)> = Vec::new();
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    out.push((*a, ga));
                    out.push((*b, gb));
                }
                Op::AddRow(a, row) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    out.push((*row, gr));
                    out.push((*a, g));
                }
                Op::Add(a, b) => {
                    out.push((*b, g.clone()));
                    out.push((*a, g));
                }
                Op::Sub(a, b) => {
                    out.push((*b, g.mapv(|x| -x)));
                    out.push((*a, g));
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    out.push((*a, ga));
                    out.push((*b, gb));
                }
                Op::Scale(a, c) => out.push((*a, g * *c)),
                Op::AddScalar(a) => out.push((*a, g)),
                Op::MulScalarVar(a, sv) => {
                    let k = self.scalar(*sv);
                    let gs = (&g * self.value(*a)).sum();
                    out.push((*sv, Array2::from_elem((1, 1), gs)));
                    out.push((*a, g * k));
                }
                Op::Tanh(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(&node.value)
                        .for_each(|g, &y| *g = *g * (T::one() - y * y));
                    out.push((*a, ga));
                }
                Op::Exp(a) => out.push((*a, g * &node.value)),
                Op::Ln(a) => out.push((*a, g / self.value(*a))),
                Op::Softplus(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(self.value(*a))
                        .for_each(|g, &x| *g = *g * sigmoid(x));
                    out.push((*a, ga));
                }
                Op::Square(a) => {
                    let two = T::c(2.0);
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(self.value(*a))
                        .for_each(|g, &x| *g = *g * two * x);
                    out.push((*a, ga));
                }
                Op::Clamp(a, lo, hi) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(self.value(*a)).for_each(|g, &x| {
                        if x < *lo || x > *hi {
                            *g = T::zero();
                        }
                    });
                    out.push((*a, ga));
                }
                Op::Minimum(a, b) => {
                    let mut ga = g.clone();
                    let mut gb = g;
                    Zip::from(&mut ga)
                        .and(&mut gb)
                        .and(self.value(*a))
                        .and(self.value(*b))
                        .for_each(|ga, gb, &x, &y| {
                            if x <= y {
                                *gb = T::zero();
                            } else {
                                *ga = T::zero();
                            }
                        });
                    out.push((*a, ga));
                    out.push((*b, gb));
                }
                Op::Sum(a) => {
                    let ga = Array2::from_elem(self.value(*a).raw_dim(), g[[0, 0]]);
                    out.push((*a, ga));
                }
                Op::Mean(a) => {
                    let v = self.value(*a);
                    let n = T::c(v.len() as f64);
                    let ga = Array2::from_elem(v.raw_dim(), g[[0, 0]] / n);
                    out.push((*a, ga));
                }
                Op::SumCols(a) => {
                    let ga = g.broadcast(self.value(*a).raw_dim()).unwrap().to_owned();
                    out.push((*a, ga));
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        let gp = g.slice(s![.., start..start + w]).to_owned();
                        out.push((p, gp));
                        start += w;
                    }
                }
                Op::SliceCols(a, start, end) => {
                    let mut ga = Array2::zeros(self.value(*a).raw_dim());
                    ga.slice_mut(s![.., *start..*end]).assign(&g);
                    out.push((*a, ga));
                }
                Op::BroadcastRows(a) => {
                    let ga = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    out.push((*a, ga));
                }
                Op::BroadcastCols(a) => {
                    let ga = g.sum_axis(Axis(1)).insert_axis(Axis(1));
                    out.push((*a, ga));
                }
            }
            grads[i] = Some(g_keep);
            for (v, gv) in out {
                accumulate(&mut grads, v, gv);
            }
        }
        Ok(Gradients {
            nodes: grads,
            bindings: self.bindings.clone(),
        })
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Array2<T>>], v: Var, g: Array2<T>) {
    match &mut grads[v.0] {
        Some(acc) => *acc += &g,
        slot @ None => *slot = Some(g),
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
