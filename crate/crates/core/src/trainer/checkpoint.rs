//! Versioned binary checkpoints.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` header length, a JSON
//! header, then every tensor in header order as little-endian scalars.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{NetworkParams, ParamSet};
use crate::scalar::Scalar;

use super::optim::Adam;
use super::preset::TrainerConfig;
use super::step::TrainerState;

pub const MAGIC: &[u8; 8] = b"OTLABCK\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0} (expected {FORMAT_VERSION})")]
    Version(u32),
    #[error("checkpoint holds {found} data but {expected} was requested")]
    Dtype { found: String, expected: String },
    #[error("corrupt header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("truncated or oversized tensor data")]
    Data,
    #[error("config hash {found} does not match its embedded config ({computed})")]
    HashMismatch { found: String, computed: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub group: String,
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub dtype: String,
    pub iter: u64,
    pub config_hash: String,
    pub config: TrainerConfig,
    pub adam_step_generator: u64,
    pub adam_step_potential: u64,
    pub tensors: Vec<TensorEntry>,
}

/// Group name, tensor names and tensors, in file order.
type Group<'a, T> = (&'static str, &'a [String], &'a [Array2<T>]);

fn groups<T: Scalar>(s: &TrainerState<T>) -> Vec<Group<'_, T>> {
    let (g, p) = (&s.params.generator, &s.params.potential);
    vec![
        ("generator", &g.names, &g.tensors),
        ("potential", &p.names, &p.tensors),
        ("adam_generator.m", &g.names, &s.opt_generator.m),
        ("adam_generator.v", &g.names, &s.opt_generator.v),
        ("adam_potential.m", &p.names, &s.opt_potential.m),
        ("adam_potential.v", &p.names, &s.opt_potential.v),
    ]
}

pub fn encode<T: Scalar>(state: &TrainerState<T>) -> Vec<u8> {
    let mut tensors = Vec::new();
    let mut data = Vec::new();
    for (group, names, ts) in groups(state) {
        for (name, t) in names.iter().zip(ts) {
            tensors.push(TensorEntry {
                group: group.to_string(),
                name: name.clone(),
                shape: [t.nrows(), t.ncols()],
            });
            for &v in t.iter() {
                v.write_le(&mut data);
            }
        }
    }
    let header = CheckpointHeader {
        version: FORMAT_VERSION,
        dtype: T::DTYPE.to_string(),
        iter: state.iter,
        config_hash: state.config.config_hash(),
        config: state.config.clone(),
        adam_step_generator: state.opt_generator.step,
        adam_step_potential: state.opt_potential.step,
        tensors,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(20 + json.len() + data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&data);
    out
}

pub fn read_header(bytes: &[u8]) -> Result<(CheckpointHeader, usize), CheckpointError> {
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Version(version));
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let end = 20usize.checked_add(len).filter(|&e| e <= bytes.len()).ok_or(CheckpointError::Data)?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[20..end])?;
    let computed = header.config.config_hash();
    if computed != header.config_hash {
        return Err(CheckpointError::HashMismatch {
            found: header.config_hash,
            computed,
        });
    }
    Ok((header, end))
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<TrainerState<T>, CheckpointError> {
    let (header, mut pos) = read_header(bytes)?;
    if header.dtype != T::DTYPE {
        return Err(CheckpointError::Dtype {
            found: header.dtype,
            expected: T::DTYPE.into(),
        });
    }
    let width = std::mem::size_of::<T>();
    let mut sets: Vec<(String, ParamSet<T>)> = Vec::new();
    for e in &header.tensors {
        let n = e.shape[0] * e.shape[1];
        let chunk = bytes.get(pos..pos + n * width).ok_or(CheckpointError::Data)?;
        pos += n * width;
        let vals = chunk
            .chunks_exact(width)
            .map(T::read_le)
            .collect::<Option<Vec<T>>>()
            .ok_or(CheckpointError::Data)?;
        let t = Array2::from_shape_vec((e.shape[0], e.shape[1]), vals).map_err(|_| CheckpointError::Data)?;
        match sets.last_mut() {
            Some((g, set)) if *g == e.group => {
                set.names.push(e.name.clone());
                set.tensors.push(t);
            }
            _ => sets.push((
                e.group.clone(),
                ParamSet {
                    names: vec![e.name.clone()],
                    tensors: vec![t],
                },
            )),
        }
    }
    if pos != bytes.len() {
        return Err(CheckpointError::Data);
    }
    let mut take = |name: &str| -> Result<ParamSet<T>, CheckpointError> {
        let i = sets.iter().position(|(g, _)| g == name).ok_or(CheckpointError::Data)?;
        Ok(sets.remove(i).1)
    };
    let params = NetworkParams {
        arch: header.config.arch,
        generator: take("generator")?,
        potential: take("potential")?,
    };
    let (gm, gv, pm, pv) = (
        take("adam_generator.m")?,
        take("adam_generator.v")?,
        take("adam_potential.m")?,
        take("adam_potential.v")?,
    );
    let mut state = TrainerState::from_params(header.config, params);
    let fresh = NetworkParams::<T>::init(state.config.arch, &mut ChaCha8Rng::seed_from_u64(0));
    let shapes = |ts: &[Array2<T>]| ts.iter().map(|t| t.dim()).collect::<Vec<_>>();
    let (gs, ps) = (fresh.generator.shapes(), fresh.potential.shapes());
    if state.params.generator.shapes() != gs
        || state.params.potential.shapes() != ps
        || shapes(&gm.tensors) != gs
        || shapes(&gv.tensors) != gs
        || shapes(&pm.tensors) != ps
        || shapes(&pv.tensors) != ps
    {
        return Err(CheckpointError::Data);
    }
    state.iter = header.iter;
    state.opt_generator = Adam {
        step: header.adam_step_generator,
        m: gm.tensors,
        v: gv.tensors,
        ..state.opt_generator
    };
    state.opt_potential = Adam {
        step: header.adam_step_potential,
        m: pm.tensors,
        v: pv.tensors,
        ..state.opt_potential
    };
    Ok(state)
}

pub fn save<T: Scalar>(state: &TrainerState<T>, path: &Path) -> Result<(), CheckpointError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode(state))?;
    Ok(())
}

pub fn load<T: Scalar>(path: &Path) -> Result<TrainerState<T>, CheckpointError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}
