//! Model file: `TMLP` magic, u32 format version, u64 metadata length, JSON
//! metadata, then the little-endian f32 arrays listed in the manifest.
//!
//! Manifest offsets count bytes from the start of the array section. Trees
//! travel inside the metadata; routing matrices are recompiled on load.

use std::path::Path;

use serde::{Deserialize, Serialize};
use tmlp::data::{FeatureSchema, Preprocessor};
use tmlp::ensemble::EnsembleBundle;
use tmlp::gbdt::GbdtModel;
use tmlp::model::{Arch, BlockParams, HeadParams, PrunedModel, TmlpParams, TokenizerParams};
use tmlp::nn::Matrix;
use tmlp::pipeline::{FitConfig, TmlpModel};

pub const MAGIC: &[u8; 4] = b"TMLP";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

#[derive(Debug, thiserror::Error)]
pub enum BundleError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("corrupt model file: {0}")]
    CorruptModel(String),
}

fn corrupt(msg: impl Into<String>) -> BundleError {
    BundleError::CorruptModel(msg.into())
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub offset: u64,
}

#[derive(Serialize, Deserialize, Clone, Debug)]
struct BranchMeta {
    learning_rate: f64,
    arch: Arch,
    hidden: Vec<Vec<usize>>,
    inter: Vec<Vec<usize>>,
    arrays: Vec<ArrayEntry>,
}

#[derive(Serialize, Deserialize, Clone, Debug)]
struct Metadata {
    schema: FeatureSchema,
    preprocessor: Preprocessor,
    config: FitConfig,
    gate: Option<GbdtModel>,
    branches: Vec<BranchMeta>,
}

pub fn to_bytes(model: &TmlpModel) -> Result<Vec<u8>, BundleError> {
    let mut data: Vec<u8> = Vec::new();
    let mut branches = Vec::new();
    for (b, &lr) in model.bundle.branches.iter().zip(&model.bundle.learning_rates) {
        let mut arrays = Vec::new();
        for (name, _, m) in b.params.tensors() {
            arrays.push(ArrayEntry {
                name,
                shape: [m.rows(), m.cols()],
                offset: data.len() as u64,
            });
            for v in m.as_slice() {
                data.extend_from_slice(&v.to_le_bytes());
            }
        }
        branches.push(BranchMeta {
            learning_rate: lr,
            arch: b.params.arch.clone(),
            hidden: b.hidden.clone(),
            inter: b.inter.clone(),
            arrays,
        });
    }
    let meta = Metadata {
        schema: model.schema.clone(),
        preprocessor: model.preprocessor.clone(),
        config: model.config.clone(),
        gate: model.bundle.gate.clone(),
        branches,
    };
    let json = serde_json::to_vec(&meta).map_err(|e| corrupt(e.to_string()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + json.len() + data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&data);
    Ok(out)
}

pub fn save(model: &TmlpModel, path: impl AsRef<Path>) -> Result<(), BundleError> {
    std::fs::write(path, to_bytes(model)?)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<TmlpModel, BundleError> {
    from_bytes(&std::fs::read(path)?)
}

pub fn from_bytes(bytes: &[u8]) -> Result<TmlpModel, BundleError> {
    if bytes.len() < HEADER_LEN {
        return Err(corrupt("file shorter than its header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(corrupt("bad magic bytes"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(corrupt(format!("unsupported format version {version}")));
    }
    let meta_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let meta_end = usize::try_from(meta_len)
        .ok()
        .and_then(|l| l.checked_add(HEADER_LEN))
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| corrupt("metadata runs past the end of the file"))?;
    let meta: Metadata = serde_json::from_slice(&bytes[HEADER_LEN..meta_end]).map_err(|e| corrupt(format!("metadata: {e}")))?;
    let data = &bytes[meta_end..];

    let mut expected = 0u64;
    let mut branches = Vec::new();
    let mut rates = Vec::new();
    for bm in meta.branches {
        let mut tensors = Vec::new();
        for entry in &bm.arrays {
            if entry.offset != expected {
                return Err(corrupt(format!("array {} at offset {} (expected {expected})", entry.name, entry.offset)));
            }
            let len = entry.shape[0]
                .checked_mul(entry.shape[1])
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| corrupt("array size overflows"))?;
            let start = entry.offset as usize;
            let end = start.checked_add(len).filter(|&e| e <= data.len()).ok_or_else(|| corrupt(format!("array {} runs past the end of the file", entry.name)))?;
            let values = data[start..end].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            let m = Matrix::from_vec(entry.shape[0], entry.shape[1], values).map_err(|e| corrupt(e.to_string()))?;
            tensors.push((entry.name.clone(), m));
            expected = end as u64;
        }
        let params = assemble(bm.arch, tensors)?;
        let pruned = PrunedModel {
            params,
            hidden: bm.hidden,
            inter: bm.inter,
        };
        check_shapes(&pruned)?;
        branches.push(pruned);
        rates.push(bm.learning_rate);
    }
    if expected != data.len() as u64 {
        return Err(corrupt("trailing bytes after the last array"));
    }
    if meta.gate.as_ref().is_some_and(|g| g.n_features != meta.schema.n_features()) {
        return Err(corrupt("gate feature count differs from the schema"));
    }
    let bundle = EnsembleBundle::new(meta.gate, branches, rates).map_err(|e| corrupt(e.to_string()))?;
    if bundle.n_features() != meta.schema.n_features() {
        return Err(corrupt("network feature count differs from the schema"));
    }
    Ok(TmlpModel {
        schema: meta.schema,
        preprocessor: meta.preprocessor,
        config: meta.config,
        bundle,
    })
}

fn empty() -> Matrix<f32> {
    Matrix::zeros(0, 0)
}

/// Places named arrays into a parameter set of `arch.n_blocks` blocks.
fn assemble(arch: Arch, tensors: Vec<(String, Matrix<f32>)>) -> Result<TmlpParams<f32>, BundleError> {
    let block = || BlockParams {
        ln1_gain: empty(),
        ln1_bias: empty(),
        w1: empty(),
        c1: empty(),
        ln2_gain: empty(),
        ln2_bias: empty(),
        w3: empty(),
        b3: empty(),
        w2: empty(),
        c2: empty(),
        log_alpha_h: empty(),
        log_alpha_in: empty(),
    };
    let mut params = TmlpParams {
        tokenizer: TokenizerParams {
            w_num: empty(),
            b_num: empty(),
            emb: empty(),
            cls: empty(),
        },
        blocks: (0..arch.n_blocks).map(|_| block()).collect(),
        head: HeadParams {
            ln_gain: empty(),
            ln_bias: empty(),
            w: empty(),
            b: empty(),
        },
        arch,
    };
    let mut slots = params.tensors_mut();
    if slots.len() != tensors.len() {
        return Err(corrupt(format!("{} arrays for {} parameters", tensors.len(), slots.len())));
    }
    for ((name, _, slot), (got, m)) in slots.iter_mut().zip(tensors) {
        if *name != got {
            return Err(corrupt(format!("expected array {name}, found {got}")));
        }
        **slot = m;
    }
    drop(slots);
    Ok(params)
}

fn check_shapes(m: &PrunedModel) -> Result<(), BundleError> {
    let p = &m.params;
    let a = &p.arch;
    let d = a.d;
    let tokens = a.n_tokens();
    let n_emb: usize = a.cat_cardinalities.iter().sum();
    let mut want: Vec<(usize, usize)> = vec![(a.n_num, d), (a.n_num, d), (n_emb, d), (1, d)];
    if m.hidden.len() != a.n_blocks || m.inter.len() != a.n_blocks {
        return Err(corrupt("kept-unit lists do not match the block count"));
    }
    for (h, i) in m.hidden.iter().zip(&m.inter) {
        if h.windows(2).any(|w| w[0] >= w[1]) || h.last().is_some_and(|&x| x >= d) {
            return Err(corrupt("hidden unit list is not an increasing subset of the width"));
        }
        if i.len() != a.d_ff {
            return Err(corrupt("intermediate unit list does not match the width"));
        }
        let (kh, k) = (h.len(), i.len());
        want.extend([(1, d), (1, d), (kh, 2 * k), (1, 2 * k), (1, k), (1, k), (tokens, tokens), (1, tokens), (k, d), (1, d), (1, kh), (1, k)]);
    }
    want.extend([(1, d), (1, d), (d, a.n_out), (1, a.n_out)]);
    for ((name, _, t), shape) in p.tensors().into_iter().zip(want) {
        if t.shape() != shape {
            return Err(corrupt(format!("array {name} has shape {:?}, expected {shape:?}", t.shape())));
        }
    }
    Ok(())
}
