//! Binary tensor container.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic      8 bytes  "ADSSMCKP"
//! version    u32
//! dims       5 x u64  n_pp, n_rr, latent, hidden, attn_hidden
//! count      u64      number of tensors
//! per tensor:
//!   name_len u32, name (UTF-8), rank u32, rank x u64 dims, row-major f64 data
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::params::{Param, ParameterSet, Tensor};
use super::Dims;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"ADSSMCKP";
pub const VERSION: u32 = 1;

const MAX_NAME_LEN: usize = 4096;
const MAX_RANK: usize = 8;
const MAX_ELEMENTS: usize = 1 << 32;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedTensor {
    pub fn scalar(name: impl Into<String>, v: f64) -> Self {
        Self { name: name.into(), shape: vec![], data: vec![v] }
    }
}

/// Parameter tensors in checkpoint order, names prefixed with `prefix`.
pub fn params_to_named(params: &ParameterSet, prefix: &str) -> Vec<NamedTensor> {
    params
        .iter()
        .map(|(p, t)| NamedTensor { name: format!("{prefix}{}", p.name()), shape: t.shape.clone(), data: t.data.clone() })
        .collect()
}

/// Rebuilds a parameter set from the tensors named `prefix + param name`.
pub fn params_from_named(dims: Dims, tensors: &[NamedTensor], prefix: &str) -> Result<ParameterSet> {
    let mut out = Vec::with_capacity(Param::ALL.len());
    for &p in Param::ALL {
        let name = format!("{prefix}{}", p.name());
        let t = tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
        out.push(Tensor { shape: t.shape.clone(), data: t.data.clone() });
    }
    ParameterSet::from_tensors(dims, out)
}

pub fn write_tensors<W: Write>(mut w: W, dims: &Dims, tensors: &[NamedTensor]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for d in [dims.n_pp, dims.n_rr, dims.latent, dims.hidden, dims.attn_hidden] {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    w.write_all(&(tensors.len() as u64).to_le_bytes())?;
    for t in tensors {
        if t.data.len() != t.shape.iter().product::<usize>() {
            return Err(Error::Checkpoint(format!("{}: data length does not match shape", t.name)));
        }
        w.write_all(&(t.name.len() as u32).to_le_bytes())?;
        w.write_all(t.name.as_bytes())?;
        w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
        for &d in &t.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in &t.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_usize<R: Read>(r: &mut R, what: &str) -> Result<usize> {
    usize::try_from(read_u64(r)?).map_err(|_| Error::Checkpoint(format!("{what} out of range")))
}

pub fn read_tensors<R: Read>(mut r: R) -> Result<(Dims, Vec<NamedTensor>)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let dims = Dims {
        n_pp: read_usize(&mut r, "n_pp")?,
        n_rr: read_usize(&mut r, "n_rr")?,
        latent: read_usize(&mut r, "latent")?,
        hidden: read_usize(&mut r, "hidden")?,
        attn_hidden: read_usize(&mut r, "attn_hidden")?,
    };
    dims.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
    let count = read_usize(&mut r, "tensor count")?;
    let mut tensors = Vec::new();
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        if name_len > MAX_NAME_LEN {
            return Err(Error::Checkpoint(format!("tensor name of {name_len} bytes")));
        }
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let rank = read_u32(&mut r)? as usize;
        if rank > MAX_RANK {
            return Err(Error::Checkpoint(format!("{name}: rank {rank}")));
        }
        let shape = (0..rank).map(|_| read_usize(&mut r, "dimension")).collect::<Result<Vec<_>>>()?;
        let n = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).filter(|&n| n <= MAX_ELEMENTS);
        let n = n.ok_or_else(|| Error::Checkpoint(format!("{name}: tensor too large")))?;
        let mut raw = vec![0u8; n * 8];
        r.read_exact(&mut raw)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        tensors.push(NamedTensor { name, shape, data });
    }
    Ok((dims, tensors))
}

pub fn save_tensors(path: &Path, dims: &Dims, tensors: &[NamedTensor]) -> Result<()> {
    // write-then-rename so a crash never leaves a truncated checkpoint behind
    let tmp = path.with_extension("tmp");
    write_tensors(BufWriter::new(File::create(&tmp)?), dims, tensors)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_tensors(path: &Path) -> Result<(Dims, Vec<NamedTensor>)> {
    read_tensors(BufReader::new(File::open(path)?))
}

pub fn save_params(path: &Path, params: &ParameterSet) -> Result<()> {
    save_tensors(path, params.dims(), &params_to_named(params, ""))
}

pub fn load_params(path: &Path) -> Result<ParameterSet> {
    let (dims, tensors) = load_tensors(path)?;
    params_from_named(dims, &tensors, "")
}
