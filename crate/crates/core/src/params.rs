//! Flat, name-addressable parameter storage.
//!
//! Every learnable array of the network lives in one contiguous `Vec<f64>`.
//! Layers keep [`ParamId`] handles into a shared [`Layout`]; gradients and
//! optimizer moments are stores with the same layout, so the optimizer,
//! checkpointing and gradient checking all operate on plain slices.

use std::collections::BTreeMap;
use std::sync::Arc;

use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Handle to one named array inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Debug, Clone, PartialEq)]
pub struct ParamInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Default, PartialEq)]
pub struct Layout {
    infos: Vec<ParamInfo>,
    by_name: BTreeMap<String, usize>,
    total: usize,
}

impl Layout {
    pub fn infos(&self) -> &[ParamInfo] {
        &self.infos
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn info(&self, id: ParamId) -> &ParamInfo {
        &self.infos[id.0]
    }

    /// Index of the parameter array owning flat position `flat`.
    pub fn owner_of(&self, flat: usize) -> Option<&ParamInfo> {
        let idx = self
            .infos
            .partition_point(|info| info.offset + info.len() <= flat);
        self.infos.get(idx)
    }
}

/// Collects parameter declarations and their initial values.
pub struct ParamBuilder {
    layout: Layout,
    data: Vec<f64>,
    rng: ChaCha8Rng,
}

impl ParamBuilder {
    pub fn new(rng: ChaCha8Rng) -> Self {
        Self {
            layout: Layout::default(),
            data: Vec::new(),
            rng,
        }
    }

    fn push(&mut self, name: &str, shape: &[usize], values: Vec<f64>) -> ParamId {
        assert!(
            !self.layout.by_name.contains_key(name),
            "duplicate parameter name {name}"
        );
        debug_assert_eq!(values.len(), shape.iter().product::<usize>());
        let id = self.layout.infos.len();
        self.layout.infos.push(ParamInfo {
            name: name.to_string(),
            shape: shape.to_vec(),
            offset: self.data.len(),
        });
        self.layout.by_name.insert(name.to_string(), id);
        self.layout.total += values.len();
        self.data.extend(values);
        ParamId(id)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> ParamId {
        let n = shape.iter().product();
        self.push(name, shape, vec![0.0; n])
    }

    pub fn ones(&mut self, name: &str, shape: &[usize]) -> ParamId {
        let n = shape.iter().product();
        self.push(name, shape, vec![1.0; n])
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    pub fn fan_in_uniform(&mut self, name: &str, shape: &[usize], fan_in: usize) -> ParamId {
        let k = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n = shape.iter().product();
        let values = (0..n).map(|_| self.rng.random_range(-k..k)).collect();
        self.push(name, shape, values)
    }

    /// `blocks` stacked square matrices of side `side`, each orthonormalised
    /// from a gaussian draw (modified Gram-Schmidt, the Q factor of a QR).
    pub fn orthogonal_blocks(&mut self, name: &str, blocks: usize, side: usize) -> ParamId {
        let mut values = Vec::with_capacity(blocks * side * side);
        for _ in 0..blocks {
            let mut rows: Vec<Vec<f64>> = (0..side)
                .map(|_| {
                    (0..side)
                        .map(|_| StandardNormal.sample(&mut self.rng))
                        .collect()
                })
                .collect();
            for i in 0..side {
                for j in 0..i {
                    let dot: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
                    let (head, tail) = rows.split_at_mut(i);
                    for (a, b) in tail[0].iter_mut().zip(&head[j]) {
                        *a -= dot * b;
                    }
                }
                let norm = rows[i].iter().map(|a| a * a).sum::<f64>().sqrt();
                for a in rows[i].iter_mut() {
                    *a /= norm;
                }
            }
            values.extend(rows.into_iter().flatten());
        }
        self.push(name, &[blocks * side, side], values)
    }

    pub fn finish(self) -> ParamStore {
        ParamStore {
            layout: Arc::new(self.layout),
            data: self.data,
        }
    }
}

/// Values for every array of a [`Layout`]: parameters, gradients, or
/// optimizer moments.
#[derive(Debug, Clone)]
pub struct ParamStore {
    layout: Arc<Layout>,
    data: Vec<f64>,
}

impl ParamStore {
    pub fn zeros_like(other: &ParamStore) -> Self {
        Self {
            layout: Arc::clone(&other.layout),
            data: vec![0.0; other.data.len()],
        }
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn same_layout(&self, other: &ParamStore) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || *self.layout == *other.layout
    }

    /// Total number of scalar entries.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.layout.find(name)
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.find(name).map(|id| self.slice(id))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        self.find(name).map(|id| self.slice_mut(id))
    }

    pub fn slice(&self, id: ParamId) -> &[f64] {
        let info = self.layout.info(id);
        &self.data[info.offset..info.offset + info.len()]
    }

    pub fn slice_mut(&mut self, id: ParamId) -> &mut [f64] {
        let info = self.layout.info(id);
        let (start, len) = (info.offset, info.len());
        &mut self.data[start..start + len]
    }

    fn dims2(&self, id: ParamId) -> (usize, usize) {
        let shape = &self.layout.info(id).shape;
        match shape.as_slice() {
            [r, c] => (*r, *c),
            [n] => (1, *n),
            _ => (shape[0], shape[1..].iter().product()),
        }
    }

    /// Row-major matrix view; arrays of rank > 2 are flattened after the
    /// first axis.
    pub fn mat(&self, id: ParamId) -> ArrayView2<'_, f64> {
        let dims = self.dims2(id);
        ArrayView2::from_shape(dims, self.slice(id)).expect("contiguous parameter")
    }

    pub fn mat_mut(&mut self, id: ParamId) -> ArrayViewMut2<'_, f64> {
        let dims = self.dims2(id);
        ArrayViewMut2::from_shape(dims, self.slice_mut(id)).expect("contiguous parameter")
    }

    pub fn vec(&self, id: ParamId) -> ArrayView1<'_, f64> {
        ArrayView1::from(self.slice(id))
    }

    pub fn vec_mut(&mut self, id: ParamId) -> ArrayViewMut1<'_, f64> {
        ArrayViewMut1::from(self.slice_mut(id))
    }

    pub fn add_assign(&mut self, other: &ParamStore) {
        debug_assert!(self.same_layout(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for a in &mut self.data {
            *a *= factor;
        }
    }

    pub fn fill(&mut self, value: f64) {
        self.data.fill(value);
    }

    /// Name of the first array holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.data
            .iter()
            .position(|v| !v.is_finite())
            .and_then(|flat| self.layout.owner_of(flat))
            .map(|info| info.name.as_str())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn builder() -> ParamBuilder {
        ParamBuilder::new(ChaCha8Rng::seed_from_u64(3))
    }

    #[test]
    fn layout_offsets_are_contiguous() {
        let mut b = builder();
        let w = b.fan_in_uniform("a.weight", &[4, 4], 4);
        let bias = b.zeros("a.bias", &[4]);
        let store = b.finish();
        assert_eq!(store.len(), 20);
        assert_eq!(store.layout().info(bias).offset, 16);
        assert_eq!(store.mat(w).dim(), (4, 4));
        assert!(store.slice(w).iter().all(|v| v.abs() <= 0.5));
        assert_eq!(store.find("a.bias"), Some(bias));
    }

    #[test]
    fn orthogonal_blocks_are_orthonormal() {
        let mut b = builder();
        let id = b.orthogonal_blocks("w", 3, 5);
        let store = b.finish();
        let m = store.mat(id);
        for blk in 0..3 {
            for i in 0..5 {
                for j in 0..5 {
                    let dot = m.row(blk * 5 + i).dot(&m.row(blk * 5 + j));
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((dot - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn owner_lookup_finds_nan() {
        let mut b = builder();
        b.zeros("first", &[3]);
        let second = b.zeros("second", &[2, 2]);
        let mut store = b.finish();
        assert_eq!(store.first_non_finite(), None);
        store.slice_mut(second)[3] = f64::NAN;
        assert_eq!(store.first_non_finite(), Some("second"));
    }
}
