//! Dataset directories: `manifest.json`, `provenance.json` and binary tensor
//! caches `b.bin` / `h.bin`.
//!
//! Cache layout (little-endian): magic `HYST0001`, `u32` rank, `rank` x `u64`
//! extents, then `f32` values in row-major order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AugmentConfig, DataError, NormScale, NormalizedDataset, Provenance, Sample, SplitIndices, SplitSpec};
use crate::diffkernel::Tensor;

pub const CACHE_MAGIC: &[u8; 8] = b"HYST0001";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub scheme: String,
    pub scale: NormScale,
    pub regime: String,
    pub augmentation: AugmentConfig,
    pub augment_seed: u64,
    pub split: SplitSpec,
    pub split_indices: SplitIndices,
    pub n_samples: usize,
    pub sample_len: usize,
    /// Hash of the material parameters that produced the source loops.
    pub params_hash: Option<String>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn fmt_err(path: &Path, detail: impl ToString) -> DataError {
    DataError::Format {
        path: path.display().to_string(),
        detail: detail.to_string(),
    }
}

pub fn write_cache(path: &Path, t: &Tensor<f64>) -> Result<(), DataError> {
    let mut buf = Vec::with_capacity(16 + 8 * t.shape().len() + 4 * t.numel());
    buf.extend_from_slice(CACHE_MAGIC);
    buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let mut f = std::fs::File::create(path).map_err(io_err(path))?;
    f.write_all(&buf).map_err(io_err(path))
}

pub fn read_cache(path: &Path) -> Result<Tensor<f64>, DataError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(io_err(path))?;
    if bytes.len() < 12 || &bytes[..8] != CACHE_MAGIC {
        return Err(fmt_err(path, "not a tensor cache (bad magic)"));
    }
    let rank = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let header = 12 + 8 * rank;
    if rank > 8 || bytes.len() < header {
        return Err(fmt_err(path, format!("truncated header for rank {rank}")));
    }
    let shape: Vec<usize> = (0..rank)
        .map(|i| u64::from_le_bytes(bytes[12 + 8 * i..20 + 8 * i].try_into().expect("8 bytes")) as usize)
        .collect();
    let n: usize = shape.iter().product();
    if bytes.len() != header + 4 * n {
        return Err(fmt_err(
            path,
            format!(
                "shape {shape:?} needs {} data bytes, found {}",
                4 * n,
                bytes.len() - header
            ),
        ));
    }
    let data = bytes[header..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Tensor::new(shape, data).map_err(|e| fmt_err(path, e))
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<(), DataError> {
    let text = serde_json::to_string_pretty(v).expect("serializable");
    std::fs::write(path, text).map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, DataError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| fmt_err(path, e))
}

/// Writes a prepared dataset into `dir` (created if needed).
pub fn write_dataset(dir: &Path, ds: &NormalizedDataset, manifest: &Manifest) -> Result<(), DataError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let l = ds.sample_len()?;
    let err = |e: crate::diffkernel::KernelError| DataError::Input(e.to_string());
    let b = Tensor::new(
        vec![ds.len(), l],
        ds.samples.iter().flat_map(|s| s.b.iter().copied()).collect(),
    )
    .map_err(err)?;
    let h = Tensor::new(
        vec![ds.len(), l],
        ds.samples.iter().flat_map(|s| s.h.iter().copied()).collect(),
    )
    .map_err(err)?;
    write_cache(&dir.join("b.bin"), &b)?;
    write_cache(&dir.join("h.bin"), &h)?;
    let prov: Vec<&Provenance> = ds.samples.iter().map(|s| &s.prov).collect();
    write_json(&dir.join("provenance.json"), &prov)?;
    write_json(&dir.join("manifest.json"), manifest)
}

pub fn read_dataset(dir: &Path) -> Result<(NormalizedDataset, Manifest), DataError> {
    let manifest: Manifest = read_json(&dir.join("manifest.json"))?;
    let prov: Vec<Provenance> = read_json(&dir.join("provenance.json"))?;
    let b = read_cache(&dir.join("b.bin"))?;
    let h = read_cache(&dir.join("h.bin"))?;
    let n = prov.len();
    if b.shape() != h.shape() || b.shape().len() != 2 || b.shape()[0] != n || n != manifest.n_samples {
        return Err(fmt_err(
            dir,
            format!(
                "inconsistent dataset: b {:?}, h {:?}, {n} provenance records",
                b.shape(),
                h.shape()
            ),
        ));
    }
    let l = b.shape()[1];
    let samples = prov
        .into_iter()
        .enumerate()
        .map(|(i, prov)| Sample {
            b: b.data()[i * l..(i + 1) * l].to_vec(),
            h: h.data()[i * l..(i + 1) * l].to_vec(),
            prov,
        })
        .collect();
    Ok((
        NormalizedDataset {
            samples,
            scale: manifest.scale.clone(),
        },
        manifest,
    ))
}
