//! Versioned binary checkpoints: magic, version, the resolved run
//! configuration as JSON, then named tensors with shape headers.
//!
//! All integers are little-endian `u32`/`u64`; values are `f64` bit patterns.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::config::RunConfig;
use crate::episodic::ModelParams;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const MAGIC: &[u8; 8] = b"CUEFSLCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub tensors: Vec<(String, Tensor)>,
}

fn put_u32<W: Write>(out: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{v} exceeds u32")))?;
    out.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32<R: Read>(r: &mut R, what: &str) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|e| Error::Checkpoint(format!("reading {what}: {e}")))?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn get_bytes<R: Read>(r: &mut R, n: usize, what: &str) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    r.take(n as u64).read_to_end(&mut buf)?;
    if buf.len() != n {
        return Err(Error::Checkpoint(format!(
            "truncated {what}: expected {n} bytes, found {}",
            buf.len()
        )));
    }
    Ok(buf)
}

impl Checkpoint {
    pub fn from_model(config: &RunConfig, model: &ModelParams) -> Self {
        let mut config = config.clone();
        config.variant = model.variant();
        config.model = model.net.config.clone();
        config.seed = model.seed;
        Checkpoint {
            config,
            tensors: model
                .params
                .iter()
                .map(|p| (p.name.clone(), p.value.clone()))
                .collect(),
        }
    }

    /// Rebuilds the model and overwrites every parameter from the stored
    /// tensors; the name and shape sets must match exactly.
    pub fn to_model(&self) -> Result<ModelParams> {
        let c = &self.config;
        let mut model = ModelParams::new(c.variant, c.model.clone(), c.seed)?;
        if model.params.len() != self.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "variant {} has {} tensors, checkpoint holds {}",
                c.variant,
                model.params.len(),
                self.tensors.len()
            )));
        }
        for (name, tensor) in &self.tensors {
            let id = model
                .params
                .id(name)
                .ok_or_else(|| Error::Checkpoint(format!("unexpected tensor {name:?}")))?;
            let slot = model.params.value_mut(id);
            if slot.shape() != tensor.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name:?} has shape {:?}, model expects {:?}",
                    tensor.shape(),
                    slot.shape()
                )));
            }
            *slot = tensor.clone();
        }
        Ok(model)
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        let json = serde_json::to_vec(&self.config)?;
        put_u32(&mut out, json.len())?;
        out.write_all(&json)?;
        put_u32(&mut out, self.tensors.len())?;
        for (name, t) in &self.tensors {
            put_u32(&mut out, name.len())?;
            out.write_all(name.as_bytes())?;
            put_u32(&mut out, t.shape().len())?;
            for &d in t.shape() {
                out.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in t.data() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let magic = get_bytes(&mut r, 8, "magic")?;
        if magic != MAGIC {
            return Err(Error::Checkpoint(
                "not a checkpoint file (bad magic)".into(),
            ));
        }
        let version = get_u32(&mut r, "version")?;
        if version != VERSION as usize {
            return Err(Error::Checkpoint(format!(
                "checkpoint version {version}, this build reads {VERSION}"
            )));
        }
        let n = get_u32(&mut r, "config length")?;
        let json = get_bytes(&mut r, n, "config")?;
        let config: RunConfig = serde_json::from_slice(&json)
            .map_err(|e| Error::Checkpoint(format!("embedded config: {e}")))?;
        let count = get_u32(&mut r, "tensor count")?;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let len = get_u32(&mut r, "name length")?;
            let name = String::from_utf8(get_bytes(&mut r, len, "name")?)
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
            let rank = get_u32(&mut r, "rank")?;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let b = get_bytes(&mut r, 8, "shape")?;
                shape.push(u64::from_le_bytes(b.try_into().expect("8 bytes")) as usize);
            }
            let size: usize = shape.iter().product();
            let raw = get_bytes(&mut r, size * 8, &format!("tensor {name:?}"))?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push((name, Tensor::new(shape, data)?));
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", rest.len())));
        }
        Ok(Checkpoint { config, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Checkpoint::read(BufReader::new(File::open(path)?))
    }

    /// Human-readable listing of the stored tensors.
    pub fn manifest(&self) -> String {
        let mut s = format!(
            "checkpoint v{VERSION}\nvariant\t{}\nseed\t{}\ntensors\t{}\n",
            self.config.variant,
            self.config.seed,
            self.tensors.len()
        );
        for (name, t) in &self.tensors {
            let shape: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            s.push_str(&format!("{name}\t{}\t{:.6e}\n", shape.join("x"), t.norm()));
        }
        s
    }
}
