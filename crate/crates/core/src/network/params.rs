//! Named parameter tensors, their gradients, and the `ATRW` checkpoint format.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;

use crate::autodiff::{AutodiffError, Graph, Tensor, Var};
use crate::binio::{FormatError, LeReader, LeWriter};
use crate::rng::{substream, StreamKind};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ATRW";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<S> {
    names: Vec<String>,
    values: Vec<Tensor<S>>,
    grads: Vec<Vec<S>>,
}

impl<S: Scalar> Default for ParamStore<S> {
    fn default() -> Self {
        Self { names: Vec::new(), values: Vec::new(), grads: Vec::new() }
    }
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<S>) -> ParamId {
        self.grads.push(vec![S::zero(); value.numel()]);
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Kaiming-uniform tensor, bound `sqrt(6 / fan_in)`, drawn from the
    /// initialization substream of `seed` for this parameter index.
    pub fn add_kaiming(&mut self, name: impl Into<String>, shape: &[usize], fan_in: usize, seed: u64) -> ParamId {
        let bound = (6.0 / fan_in as f64).sqrt();
        let mut rng = substream(seed, StreamKind::Init, self.values.len(), 0);
        let t = Tensor::from_fn(shape, |_| S::lit(rng.gen_range(-bound..bound)));
        self.add(name, t)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<S> {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &[S] {
        &self.grads[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| g.iter_mut().for_each(|v| *v = S::zero()));
    }

    /// Inserts every parameter as a trainable leaf.
    pub fn bind(&self, g: &mut Graph<S>) -> Result<Vec<Var>, AutodiffError> {
        self.values.iter().map(|v| g.leaf(v.clone())).collect()
    }

    /// Inserts every parameter as a constant (inference only).
    pub fn bind_frozen(&self, g: &mut Graph<S>) -> Result<Vec<Var>, AutodiffError> {
        self.values.iter().map(|v| g.input(v.clone())).collect()
    }

    /// Adds the graph gradients of `vars` (from [`ParamStore::bind`]).
    pub fn accumulate(&mut self, g: &Graph<S>, vars: &[Var]) {
        for (acc, v) in self.grads.iter_mut().zip(vars) {
            if let Some(gv) = g.grad(*v) {
                acc.iter_mut().zip(gv).for_each(|(a, b)| *a = *a + *b);
            }
        }
    }

    pub(crate) fn values_and_grads_mut(&mut self) -> impl Iterator<Item = (&mut Tensor<S>, &[S])> {
        self.values.iter_mut().zip(self.grads.iter().map(Vec::as_slice))
    }
}

/// Named tensors serialized as `ATRW`: magic, version u32, tensor count u32,
/// then per tensor: name length u16, UTF-8 name, ndim u8, dims u32 each, data
/// f64 LE.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Tensor<f64>)>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Tensor<f64>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor<f64>) {
        self.tensors.push((name.into(), t));
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<W, FormatError> {
        let mut w = LeWriter::new(w);
        w.bytes(CHECKPOINT_MAGIC)?;
        w.u32(CHECKPOINT_VERSION)?;
        w.count(self.tensors.len())?;
        for (name, t) in &self.tensors {
            let len = u16::try_from(name.len()).map_err(|_| FormatError::Malformed(format!("name too long: {name}")))?;
            let ndim = u8::try_from(t.ndim()).map_err(|_| FormatError::Malformed(format!("too many dims: {name}")))?;
            w.u16(len)?;
            w.bytes(name.as_bytes())?;
            w.u8(ndim)?;
            for d in t.shape() {
                w.count(*d)?;
            }
            for v in t.data() {
                w.f64(*v)?;
            }
        }
        Ok(w.finish()?)
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self, FormatError> {
        let mut r = LeReader::new(r);
        r.magic(CHECKPOINT_MAGIC)?;
        r.version("ATRW", CHECKPOINT_VERSION)?;
        let n = r.count()?;
        let mut tensors = Vec::with_capacity(n.min(1 << 12));
        for _ in 0..n {
            let len = r.u16()? as usize;
            let name = String::from_utf8(r.vec(len)?).map_err(|e| FormatError::Malformed(e.to_string()))?;
            let ndim = r.u8()? as usize;
            let shape = (0..ndim).map(|_| r.count()).collect::<Result<Vec<_>, _>>()?;
            let total: usize = shape.iter().product();
            let data = (0..total).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
            let t = Tensor::new(shape, data).map_err(|e| FormatError::Malformed(e.to_string()))?;
            tensors.push((name, t));
        }
        r.expect_eof()?;
        Ok(Self { tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), FormatError> {
        self.write_to(BufWriter::new(File::create(path)?))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, FormatError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}
