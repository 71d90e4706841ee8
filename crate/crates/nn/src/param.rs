use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::scalar::Scalar;

/// Stable ordinal of an array inside a [`ParamStore`]. Also its checkpoint id.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// One trainable weight array. Shapes are fixed after construction.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamArray<T> {
    pub id: ParamId,
    pub values: Array2<T>,
}

impl<T: Scalar> ParamArray<T> {
    pub fn shape(&self) -> [usize; 2] {
        let (r, c) = self.values.dim();
        [r, c]
    }
}

/// Flat, ordered collection of weight arrays (actor, critics, adversaries...).
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore<T> {
    arrays: Vec<ParamArray<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { arrays: Vec::new() }
    }

    pub fn push(&mut self, values: Array2<T>) -> ParamId {
        let id = ParamId(self.arrays.len());
        self.arrays.push(ParamArray { id, values });
        id
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> ParamId {
        self.push(Array2::zeros((rows, cols)))
    }

    pub fn filled(&mut self, rows: usize, cols: usize, value: T) -> ParamId {
        self.push(Array2::from_elem((rows, cols), value))
    }

    /// Uniform(-limit, limit) with the Glorot limit `sqrt(6 / (fan_in + fan_out))`,
    /// multiplied by `gain`.
    pub fn glorot<R: Rng + ?Sized>(&mut self, rows: usize, cols: usize, gain: f64, rng: &mut R) -> ParamId {
        let limit = gain * (6.0 / (rows + cols) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
        let values = Array2::from_shape_simple_fn((rows, cols), || T::c(dist.sample(rng)));
        self.push(values)
    }

    pub fn get(&self, id: ParamId) -> &ParamArray<T> {
        &self.arrays[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamArray<T> {
        &mut self.arrays[id.0]
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, ParamArray<T>> {
        self.arrays.iter()
    }

    pub fn iter_mut(&mut self) -> std::slice::IterMut<'_, ParamArray<T>> {
        self.arrays.iter_mut()
    }

    pub fn num_scalars(&self) -> usize {
        self.arrays.iter().map(|a| a.values.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.arrays
            .iter()
            .all(|a| a.values.iter().all(|v| v.is_finite()))
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            arrays: self
                .arrays
                .iter()
                .map(|a| ParamArray {
                    id: a.id,
                    values: a.values.mapv(|x| U::c(x.to_f64().unwrap_or(f64::NAN))),
                })
                .collect(),
        }
    }

    /// Copies values of arrays `ids` from `src` (same ids, same shapes).
    pub fn copy_from(&mut self, src: &ParamStore<T>, ids: &[ParamId]) {
        for &id in ids {
            self.arrays[id.0].values.assign(&src.arrays[id.0].values);
        }
    }

    /// Polyak averaging `dst <- tau * src + (1 - tau) * dst` over paired ids.
    pub fn polyak(&mut self, pairs: &[(ParamId, ParamId)], tau: T) {
        for &(src, dst) in pairs {
            let s = self.arrays[src.0].values.clone();
            let d = &mut self.arrays[dst.0].values;
            d.zip_mut_with(&s, |d, &s| *d = tau * s + (T::one() - tau) * *d);
        }
    }

    /// New store holding copies of `ids`, renumbered from 0 in the given order.
    pub fn subset(&self, ids: &[ParamId]) -> ParamStore<T> {
        ParamStore {
            arrays: ids
                .iter()
                .enumerate()
                .map(|(k, id)| ParamArray {
                    id: ParamId(k),
                    values: self.arrays[id.0].values.clone(),
                })
                .collect(),
        }
    }

    /// Polyak averaging of every array towards a store with the same layout:
    /// `self <- tau * src + (1 - tau) * self`.
    pub fn polyak_from(&mut self, src: &ParamStore<T>, tau: T) {
        for (d, s) in self.arrays.iter_mut().zip(&src.arrays) {
            d.values.zip_mut_with(&s.values, |d, &s| *d = tau * s + (T::one() - tau) * *d);
        }
    }

    pub(crate) fn from_arrays(arrays: Vec<ParamArray<T>>) -> Self {
        Self { arrays }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn subset_renumbers_in_order() {
        let mut s = ParamStore::<f32>::new();
        s.push(array![[1.0]]);
        s.push(array![[2.0, 3.0]]);
        s.push(array![[4.0]]);
        let sub = s.subset(&[ParamId(2), ParamId(0)]);
        assert_eq!(sub.len(), 2);
        assert_eq!(sub.get(ParamId(0)).values, array![[4.0]]);
        assert_eq!(sub.get(ParamId(1)).id, ParamId(1));
    }

    #[test]
    fn polyak_with_unit_tau_copies() {
        let mut a = ParamStore::<f32>::new();
        a.push(array![[1.0, 2.0]]);
        let mut b = ParamStore::<f32>::new();
        b.push(array![[5.0, -1.0]]);
        let mut half = b.clone();
        b.polyak_from(&a, 1.0);
        assert_eq!(b, a);
        half.polyak_from(&a, 0.5);
        assert_eq!(half.get(ParamId(0)).values, array![[3.0, 0.5]]);
    }
}
