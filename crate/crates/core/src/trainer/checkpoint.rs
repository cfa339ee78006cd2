//! Single-file checkpoints: magic, format version, JSON header, raw tensors.
//!
//! Layout: `STYLSHFT` | u32 LE format version | u64 LE header length |
//! header JSON | f32 LE tensor data in header order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use styleshift_nn::{Adam, AdamState, Parameterized};

use super::{TrainConfig, TrainState};
use crate::models::{ModelSpecs, Networks};
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"STYLSHFT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: TrainConfig,
    specs: ModelSpecs,
    iteration: u64,
    data_cursor: u64,
    rng: ChaCha8Rng,
    opt_g_step: u64,
    opt_d_step: u64,
    tensors: Vec<TensorEntry>,
}

fn param_tensors(nets: &Networks<f32>) -> Vec<(String, ArrayD<f32>)> {
    let mut out = Vec::new();
    for (name, m) in nets.modules() {
        m.visit_params(name, &mut |n, p| out.push((format!("param/{n}"), p.value.clone())));
    }
    out
}

fn moment_tensors(prefix: &str, state: &AdamState<f32>) -> Vec<(String, ArrayD<f32>)> {
    let first = state.first.iter().enumerate().map(|(i, a)| (format!("{prefix}/m/{i}"), a.clone()));
    let second = state.second.iter().enumerate().map(|(i, a)| (format!("{prefix}/v/{i}"), a.clone()));
    first.chain(second).collect()
}

fn ckpt_err(path: &Path, msg: impl std::fmt::Display) -> Error {
    Error::Checkpoint(format!("`{}`: {msg}", path.display()))
}

/// Writes `state` atomically (temporary file, then rename).
pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let mut tensors = param_tensors(&state.nets);
    tensors.extend(moment_tensors("adam_g", &state.opt_g.state));
    tensors.extend(moment_tensors("adam_d", &state.opt_d.state));
    let header = Header {
        format_version: FORMAT_VERSION,
        config: state.config.clone(),
        specs: state.nets.specs(),
        iteration: state.iteration,
        data_cursor: state.data_cursor,
        rng: state.rng.clone(),
        opt_g_step: state.opt_g.state.step,
        opt_d_step: state.opt_d.state.step,
        tensors: tensors.iter().map(|(n, a)| TensorEntry { name: n.clone(), shape: a.shape().to_vec() }).collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| ckpt_err(path, e))?;

    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let tmp = path.with_extension("tmp");
    {
        let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(&tmp, e);
        w.write_all(MAGIC).map_err(io)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io)?;
        w.write_all(&(json.len() as u64).to_le_bytes()).map_err(io)?;
        w.write_all(&json).map_err(io)?;
        for (_, a) in &tensors {
            for v in a.iter() {
                w.write_all(&v.to_le_bytes()).map_err(io)?;
            }
        }
        w.flush().map_err(io)?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], path: &Path) -> Result<()> {
    r.read_exact(buf).map_err(|e| ckpt_err(path, format!("truncated file ({e})")))
}

/// Restores a full training state.
pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingPath(path.to_path_buf()),
        _ => Error::io(path, e),
    })?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    read_exact(&mut r, &mut magic, path)?;
    if &magic != MAGIC {
        return Err(ckpt_err(path, "not a checkpoint (bad magic)"));
    }
    let mut word = [0u8; 4];
    read_exact(&mut r, &mut word, path)?;
    let version = u32::from_le_bytes(word);
    if version != FORMAT_VERSION {
        return Err(ckpt_err(path, format!("format version {version}, expected {FORMAT_VERSION}")));
    }
    let mut len = [0u8; 8];
    read_exact(&mut r, &mut len, path)?;
    let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
    read_exact(&mut r, &mut json, path)?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| ckpt_err(path, format!("bad header: {e}")))?;

    let mut tensors = Vec::with_capacity(header.tensors.len());
    for entry in &header.tensors {
        let n: usize = entry.shape.iter().product();
        let mut bytes = vec![0u8; n * 4];
        read_exact(&mut r, &mut bytes, path)?;
        let data: Vec<f32> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        tensors.push((entry.name.clone(), ArrayD::from_shape_vec(IxDyn(&entry.shape), data).expect("shape matches length")));
    }
    if r.read(&mut [0u8; 1]).map_err(|e| Error::io(path, e))? != 0 {
        return Err(ckpt_err(path, "trailing bytes after tensor data"));
    }

    // rebuild with throwaway weights, then overwrite every tensor by name
    let mut scratch = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let mut nets = Networks::<f32>::new(&header.specs, &mut scratch)?;
    let mut it = tensors.into_iter();
    let mut mismatch = None;
    for (name, m) in [
        ("generator", &mut nets.generator as &mut dyn Parameterized<f32>),
        ("style_extractor", &mut nets.style_extractor),
        ("discriminator", &mut nets.discriminator),
    ] {
        m.visit_params_mut(name, &mut |n, p| match it.next() {
            Some((tn, a)) if tn == format!("param/{n}") && a.shape() == p.value.shape() => p.value = a,
            other => {
                mismatch.get_or_insert_with(|| format!("expected tensor `param/{n}`, found {:?}", other.map(|(tn, _)| tn)));
            }
        });
    }
    if let Some(m) = mismatch {
        return Err(ckpt_err(path, m));
    }
    let rest: Vec<ArrayD<f32>> = it.map(|(_, a)| a).collect();
    let cfg = &header.config;
    let adam = super::adam_config(cfg);
    let n_g = nets.generator.snapshot().len() + nets.style_extractor.snapshot().len();
    let n_d = nets.discriminator.snapshot().len();
    if rest.len() != 2 * (n_g + n_d) {
        return Err(ckpt_err(path, "optimizer state does not match the parameter count"));
    }
    let state_g = AdamState { step: header.opt_g_step, first: rest[..n_g].to_vec(), second: rest[n_g..2 * n_g].to_vec() };
    let off = 2 * n_g;
    let state_d = AdamState {
        step: header.opt_d_step,
        first: rest[off..off + n_d].to_vec(),
        second: rest[off + n_d..].to_vec(),
    };
    let opt_g = Adam::from_state(adam, state_g, &[&nets.generator, &nets.style_extractor])?;
    let opt_d = Adam::from_state(adam, state_d, &[&nets.discriminator])?;
    Ok(TrainState {
        config: header.config,
        iteration: header.iteration,
        nets,
        opt_g,
        opt_d,
        rng: header.rng,
        data_cursor: header.data_cursor,
    })
}
