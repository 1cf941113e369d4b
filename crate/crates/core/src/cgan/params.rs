//! Flat parameter storage with named, shaped blocks.
//!
//! Every network keeps all of its weights in one `Vec<f64>` so optimizer
//! updates, clipping and serialization work on a single slice. Layers hold
//! [`BlockId`]s and borrow ndarray views into the buffer.

use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockId(pub usize);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    values: Vec<f64>,
    blocks: Vec<Block>,
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet { values: Vec::new(), blocks: Vec::new() }
    }

    /// Append a zero-initialized block.
    pub fn add(&mut self, name: impl Into<String>, shape: &[usize]) -> BlockId {
        let len = shape.iter().product();
        let offset = self.values.len();
        self.values.resize(offset + len, 0.0);
        self.blocks.push(Block { name: name.into(), shape: shape.to_vec(), offset, len });
        BlockId(self.blocks.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn zeros_like(&self) -> Self {
        ParamSet { values: vec![0.0; self.values.len()], blocks: self.blocks.clone() }
    }

    pub fn fill(&mut self, v: f64) {
        self.values.iter_mut().for_each(|x| *x = v);
    }

    /// Same block names and shapes.
    pub fn same_layout(&self, other: &ParamSet) -> bool {
        self.blocks == other.blocks && self.values.len() == other.values.len()
    }

    pub fn slice(&self, id: BlockId) -> &[f64] {
        let b = &self.blocks[id.0];
        &self.values[b.offset..b.offset + b.len]
    }

    pub fn slice_mut(&mut self, id: BlockId) -> &mut [f64] {
        let b = &self.blocks[id.0];
        &mut self.values[b.offset..b.offset + b.len]
    }

    pub fn view1(&self, id: BlockId) -> ArrayView1<'_, f64> {
        ArrayView1::from(self.slice(id))
    }

    pub fn view1_mut(&mut self, id: BlockId) -> ArrayViewMut1<'_, f64> {
        ArrayViewMut1::from(self.slice_mut(id))
    }

    pub fn view2(&self, id: BlockId) -> ArrayView2<'_, f64> {
        let shape = self.shape2(id);
        ArrayView2::from_shape(shape, self.slice(id)).expect("block is 2-d")
    }

    pub fn view2_mut(&mut self, id: BlockId) -> ArrayViewMut2<'_, f64> {
        let shape = self.shape2(id);
        ArrayViewMut2::from_shape(shape, self.slice_mut(id)).expect("block is 2-d")
    }

    fn shape2(&self, id: BlockId) -> (usize, usize) {
        match self.blocks[id.0].shape[..] {
            [r, c] => (r, c),
            ref s => panic!("block {} has shape {s:?}, expected 2-d", self.blocks[id.0].name),
        }
    }

    /// Uniform Glorot initialization using the block's first two dimensions
    /// as fan-in and fan-out.
    pub fn init_glorot<R: Rng + ?Sized>(&mut self, id: BlockId, fan_in: usize, fan_out: usize, rng: &mut R) {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
        for v in self.slice_mut(id) {
            *v = dist.sample(rng);
        }
    }

    pub fn add_scaled(&mut self, other: &ParamSet, scale: f64) {
        debug_assert_eq!(self.values.len(), other.values.len());
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
    }

    pub fn clamp(&mut self, limit: f64) {
        for v in &mut self.values {
            *v = v.clamp(-limit, limit);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blocks_are_contiguous_views() {
        let mut p = ParamSet::new();
        let a = p.add("a", &[2, 3]);
        let b = p.add("b", &[4]);
        assert_eq!(p.len(), 10);
        p.view2_mut(a)[[1, 2]] = 5.0;
        p.view1_mut(b)[0] = 7.0;
        assert_eq!(p.values()[5], 5.0);
        assert_eq!(p.values()[6], 7.0);
        let z = p.zeros_like();
        assert!(z.same_layout(&p));
        assert!(z.values().iter().all(|v| *v == 0.0));
    }
}
