//! Named parameter storage with gradient and momentum buffers, plus the
//! binary checkpoint container.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, Array3, ArrayD, ArrayView1, ArrayView2, ArrayView3, IxDyn};

use crate::error::{Error, Result};
use crate::ops::Scalar;

const CHECKPOINT_MAGIC: &[u8; 8] = b"MVXCKPT1";
const CHECKPOINT_VERSION: u32 = 1;

/// Handle to one parameter inside a [`ParameterStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
pub struct Param<S> {
    pub name: String,
    pub value: ArrayD<S>,
    pub grad: ArrayD<S>,
    pub momentum: ArrayD<S>,
    /// Weight decay applies to weights only, not to norm/bias parameters.
    pub apply_decay: bool,
}

/// All learnable weights of a model, keyed by unique names. Iteration order
/// is insertion order, which makes optimizer updates and checkpoints
/// deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParameterStore<S> {
    params: Vec<Param<S>>,
    by_name: HashMap<String, usize>,
}

impl<S: Scalar> ParameterStore<S> {
    pub fn new() -> Self {
        ParameterStore {
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: ArrayD<S>, apply_decay: bool) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::validation(format!("duplicate parameter name {name}")));
        }
        let id = self.params.len();
        self.by_name.insert(name.clone(), id);
        let shape = value.raw_dim();
        self.params.push(Param {
            name,
            value,
            grad: ArrayD::zeros(shape.clone()),
            momentum: ArrayD::zeros(shape),
            apply_decay,
        });
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Param<S> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<S> {
        &mut self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<S>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<S>> {
        self.params.iter_mut()
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(S::zero());
        }
    }

    pub fn view2(&self, id: ParamId) -> ArrayView2<'_, S> {
        self.params[id.0]
            .value
            .view()
            .into_dimensionality()
            .expect("parameter is not 2-d")
    }

    pub fn view1(&self, id: ParamId) -> ArrayView1<'_, S> {
        self.params[id.0]
            .value
            .view()
            .into_dimensionality()
            .expect("parameter is not 1-d")
    }

    pub fn view3(&self, id: ParamId) -> ArrayView3<'_, S> {
        self.params[id.0]
            .value
            .view()
            .into_dimensionality()
            .expect("parameter is not 3-d")
    }

    pub fn add_grad2(&mut self, id: ParamId, grad: &Array2<S>) {
        let mut g = self.params[id.0]
            .grad
            .view_mut()
            .into_dimensionality::<ndarray::Ix2>()
            .expect("parameter is not 2-d");
        g += grad;
    }

    pub fn add_grad1(&mut self, id: ParamId, grad: &Array1<S>) {
        let mut g = self.params[id.0]
            .grad
            .view_mut()
            .into_dimensionality::<ndarray::Ix1>()
            .expect("parameter is not 1-d");
        g += grad;
    }

    pub fn add_grad3(&mut self, id: ParamId, grad: &Array3<S>) {
        let mut g = self.params[id.0]
            .grad
            .view_mut()
            .into_dimensionality::<ndarray::Ix3>()
            .expect("parameter is not 3-d");
        g += grad;
    }

    /// Serialize values (not gradients/momenta) with an embedded config blob.
    pub fn save_checkpoint(&self, path: impl AsRef<Path>, config_json: &str) -> Result<()> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.push(S::BYTES as u8);
        let cfg = config_json.as_bytes();
        out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        out.extend_from_slice(cfg);
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for p in &self.params {
            let name = p.name.as_bytes();
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name);
            let shape = p.value.shape();
            out.push(shape.len() as u8);
            for &dim in shape {
                out.extend_from_slice(&(dim as u32).to_le_bytes());
            }
            out.push(if p.apply_decay { 1 } else { 0 });
            for &v in p.value.iter() {
                v.write_le(&mut out);
            }
        }
        fs::write(path, out)?;
        Ok(())
    }
}

/// A loaded checkpoint: the config blob plus named tensors (stored at f64 to
/// be precision-agnostic; conversion happens when binding to a model).
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config_json: String,
    pub tensors: Vec<(String, ArrayD<f64>, bool)>,
}

impl Checkpoint {
    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        let bytes = fs::read(path.as_ref())?;
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
            if *pos + n > bytes.len() {
                return Err(Error::Incompatible("checkpoint truncated".into()));
            }
            let s = &bytes[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        if take(&mut pos, 8)? != CHECKPOINT_MAGIC {
            return Err(Error::Incompatible("not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Incompatible(format!(
                "checkpoint version {version} unsupported"
            )));
        }
        let dtype = take(&mut pos, 1)?[0] as usize;
        if dtype != 4 && dtype != 8 {
            return Err(Error::Incompatible(format!("unknown dtype width {dtype}")));
        }
        let cfg_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let config_json = String::from_utf8(take(&mut pos, cfg_len)?.to_vec())
            .map_err(|_| Error::Incompatible("config blob is not UTF-8".into()))?;
        let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
                .map_err(|_| Error::Incompatible("tensor name is not UTF-8".into()))?;
            let ndim = take(&mut pos, 1)?[0] as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize);
            }
            let decay = take(&mut pos, 1)?[0] == 1;
            let len: usize = shape.iter().product();
            let payload = take(&mut pos, len * dtype)?;
            let data: Vec<f64> = (0..len)
                .map(|i| {
                    if dtype == 4 {
                        f32::read_le(&payload[i * 4..]) as f64
                    } else {
                        f64::read_le(&payload[i * 8..])
                    }
                })
                .collect();
            let arr = ArrayD::from_shape_vec(IxDyn(&shape), data)
                .map_err(|e| Error::Incompatible(format!("bad tensor shape: {e}")))?;
            tensors.push((name, arr, decay));
        }
        Ok(Checkpoint {
            config_json,
            tensors,
        })
    }

    /// Rebuild a typed parameter store. Fails with a shape diff when the
    /// checkpoint does not match the expected layout.
    pub fn bind<S: Scalar>(&self, expected: &ParameterStore<S>) -> Result<ParameterStore<S>> {
        if self.tensors.len() != expected.len() {
            return Err(Error::Incompatible(format!(
                "checkpoint has {} tensors, model expects {}",
                self.tensors.len(),
                expected.len()
            )));
        }
        let mut store = ParameterStore::new();
        for ((name, data, decay), exp) in self.tensors.iter().zip(expected.iter()) {
            if name != &exp.name || data.shape() != exp.value.shape() {
                return Err(Error::Incompatible(format!(
                    "tensor mismatch: checkpoint {name} {:?} vs model {} {:?}",
                    data.shape(),
                    exp.name,
                    exp.value.shape()
                )));
            }
            store.add(name.clone(), data.mapv(S::from_f64), *decay)?;
        }
        Ok(store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn duplicate_names_rejected() {
        let mut ps = ParameterStore::<f64>::new();
        ps.add("w", array![[1.0]].into_dyn(), true).unwrap();
        assert!(ps.add("w", array![[2.0]].into_dyn(), true).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut ps = ParameterStore::<f64>::new();
        ps.add("a.weight", array![[1.5, -2.0], [0.0, 3.25]].into_dyn(), true)
            .unwrap();
        ps.add("a.bias", array![0.5, 0.25].into_dyn(), false).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ckpt.bin");
        ps.save_checkpoint(&p, "{\"k\":1}").unwrap();
        let ck = Checkpoint::load(&p).unwrap();
        assert_eq!(ck.config_json, "{\"k\":1}");
        let restored = ck.bind::<f64>(&ps).unwrap();
        assert_eq!(restored.get(ParamId(0)).value, ps.get(ParamId(0)).value);
        assert_eq!(restored.get(ParamId(1)).apply_decay, false);
    }

    #[test]
    fn checkpoint_shape_mismatch_is_incompatible() {
        let mut ps = ParameterStore::<f64>::new();
        ps.add("w", array![[1.0, 2.0]].into_dyn(), true).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ckpt.bin");
        ps.save_checkpoint(&p, "{}").unwrap();
        let ck = Checkpoint::load(&p).unwrap();
        let mut other = ParameterStore::<f64>::new();
        other.add("w", array![[1.0], [2.0]].into_dyn(), true).unwrap();
        match ck.bind::<f64>(&other) {
            Err(Error::Incompatible(msg)) => assert!(msg.contains("w")),
            other => panic!("expected incompatible, got {other:?}"),
        }
    }
}
