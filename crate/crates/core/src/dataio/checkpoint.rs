//! Training checkpoints: `MFCK`, a `u32` version, a JSON header, then named
//! `MFT1` tensors holding every parameter and optimizer moment as `f64`.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{Reader, Tensor};
use crate::fields::{Aabb, Backend, FieldModel, GridField, SplatCloud};
use crate::tokens::{Mlp, TokenBank};
use crate::trainer::{Optimizers, TrainConfig, TrainState};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MFCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    backend: Backend,
    config: TrainConfig,
    d_m: usize,
    grid_resolution: Option<[usize; 3]>,
    grid_bounds: Option<([f64; 3], [f64; 3])>,
    bank: BankShape,
    rng_seed: [u8; 32],
    rng_stream: u64,
    /// Decimal string: the position does not fit in a JSON number.
    rng_word_pos: String,
    geometry_steps: usize,
    mask_steps: usize,
    skipped_steps: usize,
    optimizer_steps: Vec<(String, u64, u64)>,
}

#[derive(Serialize, Deserialize)]
struct BankShape {
    n_k: usize,
    num_freqs: usize,
    hidden: usize,
    d_m: usize,
    d_s: usize,
}

fn tensors_of(state: &TrainState) -> Vec<(String, Tensor)> {
    let mut out = Vec::new();
    let mut push = |name: &str, v: &[f64]| out.push((name.to_string(), Tensor::f64(vec![v.len()], v.to_vec())));
    match &state.field {
        FieldModel::Grid(g) => {
            push("density", &g.density);
            push("color", &g.color);
            push("mask_feature", &g.mask_feature);
            push("background_feature", &g.background_feature);
        }
        FieldModel::Splat(s) => {
            push("positions", &s.positions);
            push("radii", &s.radii);
            push("opacity_raw", &s.opacity_raw);
            push("colors", &s.colors);
            push("mask_features", &s.mask_features);
            push("background_feature", &s.background_feature);
        }
    }
    push("query_mlp", &state.bank.query_mlp.params);
    push("semantic_mlp", &state.bank.semantic_mlp.params);
    for (name, opt) in state.optim.groups() {
        push(&format!("adam.{name}.m"), &opt.m);
        push(&format!("adam.{name}.v"), &opt.v);
    }
    out
}

pub fn encode_checkpoint(state: &TrainState) -> Vec<u8> {
    let (grid_resolution, grid_bounds) = match &state.field {
        FieldModel::Grid(g) => (Some(g.resolution()), Some((g.bounds().min, g.bounds().max))),
        FieldModel::Splat(_) => (None, None),
    };
    let header = Header {
        backend: state.field.backend(),
        config: state.config.clone(),
        d_m: state.field.d_m(),
        grid_resolution,
        grid_bounds,
        bank: BankShape {
            n_k: state.bank.n_k,
            num_freqs: state.bank.num_freqs,
            hidden: state.bank.query_mlp.n_hidden,
            d_m: state.bank.d_m,
            d_s: state.bank.d_s,
        },
        rng_seed: state.rng.get_seed(),
        rng_stream: state.rng.get_stream(),
        rng_word_pos: state.rng.get_word_pos().to_string(),
        geometry_steps: state.geometry_steps,
        mask_steps: state.mask_steps,
        skipped_steps: state.skipped_steps,
        optimizer_steps: state
            .optim
            .groups()
            .iter()
            .map(|(n, o)| (n.to_string(), o.step, o.skipped))
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let tensors = tensors_of(state);
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        let bytes = t.encode();
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
        out.extend_from_slice(&bytes);
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> std::result::Result<TrainState, String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err("not a checkpoint (bad magic)".into());
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(format!("unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"));
    }
    let header_len = r.u32()? as usize;
    let header: Header = serde_json::from_slice(r.take(header_len)?).map_err(|e| format!("bad header: {e}"))?;
    let count = r.u32()? as usize;
    let mut tensors = std::collections::HashMap::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|_| "tensor name is not UTF-8")?;
        let len_bytes: [u8; 8] = r.take(8)?.try_into().unwrap();
        let len = usize::try_from(u64::from_le_bytes(len_bytes)).map_err(|_| "tensor too large")?;
        let t = Tensor::decode(r.take(len)?).map_err(|e| format!("tensor `{name}`: {e}"))?;
        let values = match t.data {
            super::tensor::TensorData::F64(v) => v,
            _ => return Err(format!("tensor `{name}` is not f64")),
        };
        tensors.insert(name, values);
    }
    if r.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.pos));
    }
    let mut take = |name: &str| tensors.remove(name).ok_or_else(|| format!("missing tensor `{name}`"));
    let d_m = header.d_m;
    let field = match header.backend {
        Backend::Grid => {
            let res = header.grid_resolution.ok_or("grid checkpoint without resolution")?;
            let (min, max) = header.grid_bounds.ok_or("grid checkpoint without bounds")?;
            FieldModel::Grid(
                GridField::from_parts(
                    res,
                    Aabb { min, max },
                    d_m,
                    take("density")?,
                    take("color")?,
                    take("mask_feature")?,
                    take("background_feature")?,
                )
                .map_err(|e| e.to_string())?,
            )
        }
        Backend::Splat => FieldModel::Splat(
            SplatCloud::new(
                d_m,
                take("positions")?,
                take("radii")?,
                take("opacity_raw")?,
                take("colors")?,
                take("mask_features")?,
                take("background_feature")?,
            )
            .map_err(|e| e.to_string())?,
        ),
    };
    let b = &header.bank;
    let n_in = 2 * b.num_freqs;
    let mlp = |params: Vec<f64>, n_out: usize, name: &str| -> std::result::Result<Mlp, String> {
        if params.len() != Mlp::param_count(n_in, b.hidden, n_out) {
            return Err(format!("tensor `{name}` has the wrong length"));
        }
        Ok(Mlp {
            n_in,
            n_hidden: b.hidden,
            n_out,
            params,
        })
    };
    let bank = TokenBank {
        n_k: b.n_k,
        num_freqs: b.num_freqs,
        d_m: b.d_m,
        d_s: b.d_s,
        query_mlp: mlp(take("query_mlp")?, b.d_m, "query_mlp")?,
        semantic_mlp: mlp(take("semantic_mlp")?, b.d_s, "semantic_mlp")?,
    };
    bank.validate().map_err(|e| e.to_string())?;
    if bank.d_m != field.d_m() {
        return Err(format!("token bank d_m={} but field d_m={}", bank.d_m, field.d_m()));
    }
    let mut optim = Optimizers {
        geometry: Default::default(),
        color: Default::default(),
        feature: Default::default(),
        background: Default::default(),
        query_mlp: Default::default(),
        semantic_mlp: Default::default(),
    };
    for (name, opt) in optim.groups_mut() {
        opt.m = take(&format!("adam.{name}.m"))?;
        opt.v = take(&format!("adam.{name}.v"))?;
        let (_, step, skipped) = header
            .optimizer_steps
            .iter()
            .find(|(n, _, _)| n == name)
            .ok_or_else(|| format!("missing optimizer counters for `{name}`"))?;
        opt.step = *step;
        opt.skipped = *skipped;
    }
    let (g, c, f, bg) = field.params();
    let expected = [g.len(), c.len(), f.len(), bg.len(), bank.query_mlp.params.len(), bank.semantic_mlp.params.len()];
    for ((name, opt), len) in optim.groups().iter().zip(expected) {
        if opt.m.len() != len || opt.v.len() != len {
            return Err(format!("optimizer moments for `{name}` do not match the parameters"));
        }
    }
    let word_pos: u128 = header.rng_word_pos.parse().map_err(|_| "bad rng position")?;
    let mut rng = <ChaCha8Rng as rand::SeedableRng>::from_seed(header.rng_seed);
    rng.set_stream(header.rng_stream);
    rng.set_word_pos(word_pos);
    Ok(TrainState {
        config: header.config,
        field,
        bank,
        optim,
        rng,
        geometry_steps: header.geometry_steps,
        mask_steps: header.mask_steps,
        skipped_steps: header.skipped_steps,
    })
}

pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, encode_checkpoint(state)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|msg| Error::format(path, msg))
}

/// Loads a checkpoint and rejects it unless its mask feature width is `d_m`.
pub fn load_checkpoint_expecting(path: &Path, d_m: usize) -> Result<TrainState> {
    let state = load_checkpoint(path)?;
    if state.field.d_m() != d_m {
        return Err(Error::format(
            path,
            format!("checkpoint has d_m={} but the run expects d_m={d_m}", state.field.d_m()),
        ));
    }
    Ok(state)
}
