use std::io::{Read, Write};
use std::path::Path;

use rand_xoshiro::rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

use super::{NdError, Tape, Tensor, Var};

/// Seeded xoshiro256** stream. Floats are drawn from the top 53 bits so the
/// sequence is bit-stable across platforms.
#[derive(Debug, Clone)]
pub struct Rng(Xoshiro256StarStar);

impl Rng {
    pub fn seed(seed: u64) -> Self {
        Self(Xoshiro256StarStar::seed_from_u64(seed))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `0..n` (rejection-free multiply-shift; bias is
    /// below 2^-40 for the sizes used here).
    pub fn below(&mut self, n: usize) -> usize {
        ((self.0.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of trainable tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Weight drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn add_uniform(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        fan_in: usize,
        rng: &mut Rng,
    ) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.uniform(-bound, bound)).collect();
        self.add(name, Tensor::matrix(rows, cols, data).expect("shape"))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    pub fn zero_all(&mut self) {
        self.values.iter_mut().for_each(|v| v.fill(0.0));
    }

    pub fn save(&self, path: &Path) -> Result<(), NdError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NdError> {
        let bytes = std::fs::read(path)?;
        Self::read_from(&mut bytes.as_slice())
    }

    /// Checkpoint layout: `HMFN1`, then per tensor `u32 name_len`, name bytes,
    /// `u32 rank`, `rank x u32` dims, little-endian f64 payload. All integers
    /// little-endian.
    pub fn write_to(&self, w: &mut impl Write) -> Result<(), NdError> {
        w.write_all(CHECKPOINT_MAGIC)?;
        for (name, t) in self.iter() {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, NdError> {
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic)
            .map_err(|_| NdError::Checkpoint("truncated header".into()))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(NdError::Checkpoint("bad magic".into()));
        }
        let mut store = ParamStore::new();
        loop {
            let mut len = [0u8; 4];
            match r.read(&mut len[..1])? {
                0 => break,
                _ => r
                    .read_exact(&mut len[1..])
                    .map_err(|_| NdError::Checkpoint("truncated record".into()))?,
            }
            let name_len = u32::from_le_bytes(len) as usize;
            let mut name = vec![0u8; name_len];
            read_exact(r, &mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| NdError::Checkpoint("name is not UTF-8".into()))?;
            let rank = read_u32(r)? as usize;
            let shape = (0..rank)
                .map(|_| read_u32(r).map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            let mut buf = [0u8; 8];
            for _ in 0..n {
                read_exact(r, &mut buf)?;
                data.push(f64::from_le_bytes(buf));
            }
            store.add(name, Tensor::new(shape, data)?);
        }
        Ok(store)
    }

    /// Copies values from `other` by name; every parameter here must be present
    /// there with an identical shape.
    pub fn assign_from(&mut self, other: &ParamStore) -> Result<(), NdError> {
        for i in 0..self.values.len() {
            let id = other
                .find(&self.names[i])
                .ok_or_else(|| NdError::Checkpoint(format!("missing tensor {}", self.names[i])))?;
            let src = other.get(id);
            if src.shape() != self.values[i].shape() {
                return Err(NdError::ShapeMismatch {
                    op: "checkpoint",
                    left: self.values[i].shape().to_vec(),
                    right: src.shape().to_vec(),
                });
            }
            self.values[i] = src.clone();
        }
        Ok(())
    }
}

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"HMFN1";

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<(), NdError> {
    r.read_exact(buf)
        .map_err(|_| NdError::Checkpoint("truncated record".into()))
}

fn read_u32(r: &mut impl Read) -> Result<u32, NdError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// A tape plus lazily bound parameter leaves for one forward/backward pass.
pub struct Session<'p> {
    pub tape: Tape,
    params: &'p ParamStore,
    bound: Vec<Option<Var>>,
}

impl<'p> Session<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            tape: Tape::new(),
            params,
            bound: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    /// Leaf for parameter `id`, created on first use.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self.tape.leaf(self.params.get(id).clone());
        self.bound[id.0] = Some(v);
        v
    }

    pub fn bound_var(&self, id: ParamId) -> Option<Var> {
        self.bound[id.0]
    }

    /// Gradient per parameter, in store order. Parameters that never entered
    /// the graph get zeros.
    pub fn param_grads(&self, loss: Var) -> Result<Vec<Tensor>, NdError> {
        let grads = self.tape.backward(loss)?;
        Ok(self
            .params
            .ids()
            .map(|id| match self.bound[id.0] {
                Some(v) => grads.get(v),
                None => {
                    let t = self.params.get(id);
                    Tensor::new(t.shape().to_vec(), vec![0.0; t.numel()]).unwrap()
                }
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rng_is_deterministic() {
        let mut a = Rng::seed(42);
        let mut b = Rng::seed(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        let x = Rng::seed(1).next_f64();
        assert!((0.0..1.0).contains(&x));
    }

    #[test]
    fn uniform_init_respects_fan_in_bound() {
        let mut rng = Rng::seed(3);
        let mut store = ParamStore::new();
        let id = store.add_uniform("w", 16, 4, 16, &mut rng);
        assert!(store.get(id).data().iter().all(|v| v.abs() <= 0.25));
    }

    #[test]
    fn checkpoint_roundtrip() {
        let mut rng = Rng::seed(9);
        let mut store = ParamStore::new();
        store.add_uniform("layer.weight", 3, 2, 3, &mut rng);
        store.add("layer.bias", Tensor::new(vec![2], vec![0.5, -0.25]).unwrap());
        let mut buf = Vec::new();
        store.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..5], b"HMFN1");
        let back = ParamStore::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, store);
    }

    #[test]
    fn checkpoint_rejects_bad_magic_and_truncation() {
        assert!(ParamStore::read_from(&mut &b"HMFN2"[..]).is_err());
        let mut store = ParamStore::new();
        store.add("w", Tensor::ones(2, 2));
        let mut buf = Vec::new();
        store.write_to(&mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(ParamStore::read_from(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn session_binds_lazily() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::ones(1, 2));
        let b = store.add("b", Tensor::ones(2, 1));
        let mut s = Session::new(&store);
        let va = s.param(a);
        assert_eq!(s.param(a), va);
        let loss = s.tape.sum(va);
        let g = s.param_grads(loss).unwrap();
        assert_eq!(g[a.index()].data(), &[1.0, 1.0]);
        assert_eq!(g[b.index()].data(), &[0.0, 0.0]);
    }
}
