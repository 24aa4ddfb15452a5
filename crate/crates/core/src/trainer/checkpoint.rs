//! `IVCK` checkpoint files.
//!
//! Layout (little-endian): magic `IVCK`, `u32` version, length-prefixed
//! TOML training config, length-prefixed TOML training state, `u32` tensor
//! count, then per tensor: `u32` name length, UTF-8 name, `u8` dtype tag,
//! `u32` rank, `u32` extents, raw payload. Adam moments are stored as
//! `adam.m/<name>` and `adam.v/<name>`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chansim::{CsiDims, DatasetStats};
use crate::config::TrainConfig;
use crate::diff::{Adam, AdamConfig};
use crate::error::{Error, Result};
use crate::model::InvCsiNet;
use crate::tensor::{DType, Scalar};

const MAGIC: &[u8; 4] = b"IVCK";
const VERSION: u32 = 1;

/// Serializable position of a ChaCha stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// Decimal `u128` word position (TOML integers are 64-bit).
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().unwrap_or(0));
        rng
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct State {
    epoch: usize,
    step: u64,
    dims: CsiDims,
    stats: DatasetStats,
    rng: RngState,
}

/// Everything needed to resume training or evaluate bit-exactly.
#[derive(Debug, Clone)]
pub struct Checkpoint<T> {
    pub net: InvCsiNet<T>,
    pub adam: Adam<T>,
    pub epoch: usize,
    pub rng: RngState,
}

struct RawTensor {
    dtype: DType,
    extents: Vec<usize>,
    data: Vec<f64>,
}

fn put_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("value {v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_tensor<W: Write, T: Scalar>(w: &mut W, name: &str, extents: &[usize], data: &[T]) -> Result<()> {
    put_u32(w, name.len())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&[T::DTYPE.tag()])?;
    put_u32(w, extents.len())?;
    for &e in extents {
        put_u32(w, e)?;
    }
    match T::DTYPE {
        DType::F32 => {
            for v in data {
                w.write_all(&(v.to_f64_lossy() as f32).to_le_bytes())?;
            }
        }
        DType::F64 => {
            for v in data {
                w.write_all(&v.to_f64_lossy().to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn write_checkpoint<W: Write, T: Scalar>(w: &mut W, ckpt: &Checkpoint<T>) -> Result<()> {
    let net = &ckpt.net;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let config = net.config.to_toml();
    put_u32(w, config.len())?;
    w.write_all(config.as_bytes())?;
    let state = State {
        epoch: ckpt.epoch,
        step: net.store.step(),
        dims: net.dims,
        stats: net.stats,
        rng: ckpt.rng.clone(),
    };
    let state = toml::to_string(&state).expect("state serializes");
    put_u32(w, state.len())?;
    w.write_all(state.as_bytes())?;

    let ids: Vec<_> = net.store.ids().collect();
    put_u32(w, ids.len() * 3)?;
    let (m, v) = ckpt.adam.moments();
    for &id in &ids {
        put_tensor(w, net.store.name(id), net.store.tensor(id).shape(), net.store.get(id))?;
    }
    for (prefix, moments) in [("adam.m/", m), ("adam.v/", v)] {
        for &id in &ids {
            let name = format!("{prefix}{}", net.store.name(id));
            put_tensor(w, &name, net.store.tensor(id).shape(), &moments[id.index()])?;
        }
    }
    Ok(())
}

pub fn save_checkpoint<T: Scalar>(path: impl AsRef<Path>, ckpt: &Checkpoint<T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, ckpt)?;
    w.flush()?;
    Ok(())
}

fn take<R: Read>(r: &mut R, n: usize, what: &str) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format(format!("truncated checkpoint while reading {what}")),
        _ => Error::Io(e),
    })?;
    Ok(buf)
}

fn get_u32<R: Read>(r: &mut R, what: &str) -> Result<usize> {
    let b = take(r, 4, what)?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
}

fn get_text<R: Read>(r: &mut R, what: &str) -> Result<String> {
    let n = get_u32(r, what)?;
    String::from_utf8(take(r, n, what)?).map_err(|_| Error::Format(format!("{what} is not UTF-8")))
}

fn get_tensor<R: Read>(r: &mut R, index: usize) -> Result<(String, RawTensor)> {
    let name = get_text(r, &format!("tensor {index} name"))?;
    let tag = take(r, 1, &name)?[0];
    let dtype = DType::from_tag(tag).ok_or_else(|| Error::Format(format!("tensor {name}: unknown dtype tag {tag}")))?;
    let rank = get_u32(r, &name)?;
    if rank > 8 {
        return Err(Error::Format(format!("tensor {name}: implausible rank {rank}")));
    }
    let extents = (0..rank).map(|_| get_u32(r, &name)).collect::<Result<Vec<_>>>()?;
    let len: usize = extents.iter().product();
    let data = match dtype {
        DType::F32 => take(r, len * 4, &name)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect(),
        DType::F64 => take(r, len * 8, &name)?
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect(),
    };
    Ok((name, RawTensor { dtype, extents, data }))
}

/// Parsed file contents before they are bound to a model.
pub struct CheckpointFile {
    pub config: TrainConfig,
    state: State,
    tensors: BTreeMap<String, RawTensor>,
}

impl CheckpointFile {
    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let magic = take(r, 4, "magic")?;
        if magic != MAGIC {
            return Err(Error::Format(format!("bad magic {magic:?}, expected \"IVCK\"")));
        }
        let version = get_u32(r, "version")? as u32;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let config = TrainConfig::from_toml(&get_text(r, "config")?)?;
        let state: State =
            toml::from_str(&get_text(r, "state")?).map_err(|e| Error::Format(format!("checkpoint state: {e}")))?;
        let count = get_u32(r, "tensor count")?;
        let mut tensors = BTreeMap::new();
        for i in 0..count {
            let (name, t) = get_tensor(r, i)?;
            tensors.insert(name, t);
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        Ok(Self { config, state, tensors })
    }

    pub fn dims(&self) -> CsiDims {
        self.state.dims
    }

    /// Copies every stored tensor into `net`, which must have identical
    /// parameter names and shapes. Mismatches name the offending tensor.
    pub fn restore_params<T: Scalar>(&self, net: &mut InvCsiNet<T>) -> Result<()> {
        let ids: Vec<_> = net.store.ids().collect();
        for &id in &ids {
            let name = net.store.name(id).to_string();
            let t = self
                .tensors
                .get(&name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks tensor {name}")))?;
            let want = net.store.tensor(id).shape().to_vec();
            if t.extents != want {
                return Err(Error::Shape(format!(
                    "tensor {name}: checkpoint has extents {:?}, model expects {want:?}",
                    t.extents
                )));
            }
            let vals: Vec<T> = t.data.iter().map(|&v| T::lit(v)).collect();
            net.store.set(id, &vals)?;
        }
        let known = ids.len() * 3;
        if self.tensors.len() != known {
            let extra = self
                .tensors
                .keys()
                .find(|k| {
                    let base = k.strip_prefix("adam.m/").or_else(|| k.strip_prefix("adam.v/")).unwrap_or(k);
                    net.store.id(base).is_none()
                })
                .cloned()
                .unwrap_or_default();
            return Err(Error::Format(format!("checkpoint holds unexpected tensor {extra}")));
        }
        net.stats = self.state.stats;
        net.store.set_step(self.state.step);
        Ok(())
    }

    fn moments<T: Scalar>(&self, net: &InvCsiNet<T>, prefix: &str) -> Result<Vec<Vec<T>>> {
        net.store
            .ids()
            .map(|id| {
                let name = format!("{prefix}{}", net.store.name(id));
                let t = self
                    .tensors
                    .get(&name)
                    .ok_or_else(|| Error::Format(format!("checkpoint lacks tensor {name}")))?;
                if t.data.len() != net.store.get(id).len() {
                    return Err(Error::Shape(format!("tensor {name}: wrong length {}", t.data.len())));
                }
                Ok(t.data.iter().map(|&v| T::lit(v)).collect())
            })
            .collect()
    }

    pub fn into_checkpoint<T: Scalar>(self) -> Result<Checkpoint<T>> {
        let mut net = InvCsiNet::<T>::new(&self.config, self.state.dims)?;
        self.restore_params(&mut net)?;
        let mut adam = Adam::new(&net.store, AdamConfig::default());
        adam.set_moments(self.moments(&net, "adam.m/")?, self.moments(&net, "adam.v/")?);
        Ok(Checkpoint {
            net,
            adam,
            epoch: self.state.epoch,
            rng: self.state.rng,
        })
    }

    /// Stored precision of the parameter tensors.
    pub fn dtype(&self) -> DType {
        self.tensors.values().next().map(|t| t.dtype).unwrap_or_default()
    }
}

pub fn read_checkpoint<R: Read, T: Scalar>(r: &mut R) -> Result<Checkpoint<T>> {
    CheckpointFile::read_from(r)?.into_checkpoint()
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<Checkpoint<T>> {
    let mut r = BufReader::new(File::open(path)?);
    read_checkpoint(&mut r)
}
