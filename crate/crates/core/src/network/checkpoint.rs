//! Little-endian parameter files: magic `FPTW`, a `u32` version, a `u32`
//! tensor count, then per tensor the name length (`u32`), UTF-8 name, rank
//! (`u32`), dims (`u64` each) and `f64` data. The network configuration is
//! stored as `config.*` tensors ahead of the parameters.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::lsa::AttentionType;
use crate::nn::Parameters;

use super::{init_network, NetworkConfig, NetworkParams};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"FPTW";

struct Tensor {
    name: String,
    dims: Vec<usize>,
    data: Vec<f64>,
}

fn config_tensors(c: &NetworkConfig) -> Vec<Tensor> {
    let t = |name: &str, data: Vec<f64>| Tensor { name: format!("config.{name}"), dims: vec![data.len()], data };
    vec![
        t("voxel_size", vec![c.voxel_size]),
        t("window", vec![c.window as f64]),
        t("encoder_widths", c.encoder_widths.iter().map(|&w| w as f64).collect()),
        t("decoder_widths", c.decoder_widths.iter().map(|&w| w as f64).collect()),
        t("d_enc", vec![c.d_enc as f64]),
        t("in_features", vec![c.in_features as f64]),
        t("n_classes", vec![c.n_classes as f64]),
        t("attention", vec![c.attention.code()]),
        t("seed", vec![(c.seed >> 32) as f64, (c.seed & 0xffff_ffff) as f64]),
    ]
}

pub fn write_checkpoint(params: &NetworkParams, w: &mut impl Write) -> Result<()> {
    let mut tensors = config_tensors(&params.config);
    params.visit("", &mut |name, dims, data| {
        tensors.push(Tensor { name: name.to_string(), dims: dims.to_vec(), data: data.to_vec() })
    });
    w.write_all(MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for t in &tensors {
        w.write_all(&(t.name.len() as u32).to_le_bytes())?;
        w.write_all(t.name.as_bytes())?;
        w.write_all(&(t.dims.len() as u32).to_le_bytes())?;
        for &d in &t.dims {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in &t.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn save_checkpoint(params: &NetworkParams, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(params, &mut w)?;
    w.flush()?;
    Ok(())
}

fn fmt(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

fn read_exact<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => fmt("checkpoint truncated"),
        _ => Error::Io(e),
    })?;
    Ok(buf)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    Ok(u32::from_le_bytes(read_exact(r)?))
}

fn read_tensor(r: &mut impl Read) -> Result<Tensor> {
    let len = read_u32(r)? as usize;
    if len > 1 << 16 {
        return Err(fmt(format!("tensor name length {len} is implausible")));
    }
    let mut name = vec![0u8; len];
    r.read_exact(&mut name).map_err(|_| fmt("checkpoint truncated"))?;
    let name = String::from_utf8(name).map_err(|_| fmt("tensor name is not UTF-8"))?;
    let rank = read_u32(r)? as usize;
    if rank > 8 {
        return Err(fmt(format!("tensor {name} has rank {rank}")));
    }
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        dims.push(u64::from_le_bytes(read_exact(r)?) as usize);
    }
    let count = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| fmt("tensor too large"))?;
    let mut data = Vec::with_capacity(count.min(1 << 24));
    for _ in 0..count {
        data.push(f64::from_le_bytes(read_exact(r)?));
    }
    Ok(Tensor { name, dims, data })
}

fn as_count(v: f64, what: &str) -> Result<usize> {
    if v.fract() != 0.0 || !(0.0..=u32::MAX as f64).contains(&v) {
        return Err(fmt(format!("config.{what} is not a count: {v}")));
    }
    Ok(v as usize)
}

fn parse_config(tensors: &[Tensor]) -> Result<NetworkConfig> {
    let get = |name: &str, len: usize| -> Result<&[f64]> {
        let t = tensors
            .iter()
            .find(|t| t.name == format!("config.{name}"))
            .ok_or_else(|| fmt(format!("missing config.{name}")))?;
        if t.data.len() != len {
            return Err(fmt(format!("config.{name} has {} values, expected {len}", t.data.len())));
        }
        Ok(&t.data)
    };
    let ew = get("encoder_widths", 2)?;
    let dw = get("decoder_widths", 2)?;
    let seed = get("seed", 2)?;
    let config = NetworkConfig {
        voxel_size: get("voxel_size", 1)?[0],
        window: as_count(get("window", 1)?[0], "window")?,
        encoder_widths: [as_count(ew[0], "encoder_widths")?, as_count(ew[1], "encoder_widths")?],
        decoder_widths: [as_count(dw[0], "decoder_widths")?, as_count(dw[1], "decoder_widths")?],
        d_enc: as_count(get("d_enc", 1)?[0], "d_enc")?,
        in_features: as_count(get("in_features", 1)?[0], "in_features")?,
        n_classes: as_count(get("n_classes", 1)?[0], "n_classes")?,
        attention: AttentionType::from_code(get("attention", 1)?[0])
            .ok_or_else(|| fmt("unknown attention code"))?,
        seed: ((as_count(seed[0], "seed")? as u64) << 32) | as_count(seed[1], "seed")? as u64,
    };
    config.validate().map_err(|e| fmt(e.to_string()))?;
    Ok(config)
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<NetworkParams> {
    if &read_exact::<4>(r)? != MAGIC {
        return Err(fmt("not a parameter file (bad magic)"));
    }
    let version = read_u32(r)?;
    if version != CHECKPOINT_VERSION {
        return Err(fmt(format!("unsupported checkpoint version {version}")));
    }
    let count = read_u32(r)? as usize;
    let tensors = (0..count).map(|_| read_tensor(r)).collect::<Result<Vec<_>>>()?;
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(fmt(format!("{} trailing bytes", rest.len())));
    }

    let config = parse_config(&tensors)?;
    let mut params = init_network(&config)?;
    let mut expected = Vec::new();
    params.visit("", &mut |name, dims, _| expected.push((name.to_string(), dims.to_vec())));
    let stored: Vec<&Tensor> = tensors.iter().filter(|t| !t.name.starts_with("config.")).collect();
    if stored.len() != expected.len() {
        return Err(fmt(format!("{} parameter tensors, expected {}", stored.len(), expected.len())));
    }
    for (t, (name, dims)) in stored.iter().zip(&expected) {
        if &t.name != name || &t.dims != dims {
            return Err(fmt(format!("tensor {} {:?} where {name} {dims:?} was expected", t.name, t.dims)));
        }
    }
    let mut it = stored.iter();
    params.visit_mut("", &mut |_, data| data.copy_from_slice(&it.next().expect("counted").data));
    Ok(params)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<NetworkParams> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}
