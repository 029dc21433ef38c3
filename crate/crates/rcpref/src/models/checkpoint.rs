//! Checkpoint file: `RCPF` magic, u32 format version, u32 header length, JSON
//! header `{model_kind, dims, seed, ...}`, then the parameters as f64 LE.

use serde::{Deserialize, Serialize};

use super::features::FeatureConfig;
use super::policy::{PolicyParams, Role};
use super::scorer::{Scorer, ScorerArch, ScorerParams};
use super::Parameters;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"RCPF";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model_kind", rename_all = "snake_case")]
enum Header {
    Scorer { dims: Vec<usize>, seed: u64, arch: ScorerArch, features: FeatureConfig },
    Policy { dims: Vec<usize>, seed: u64, role: Role },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Scorer(Scorer),
    Policy(PolicyParams),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub seed: u64,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let (header, values) = match &self.model {
            Model::Scorer(s) => {
                let hidden = match s.params.arch {
                    ScorerArch::Linear => 0,
                    ScorerArch::Mlp { hidden } => hidden,
                };
                (
                    Header::Scorer {
                        dims: vec![s.params.input_dim, hidden],
                        seed: self.seed,
                        arch: s.params.arch,
                        features: s.features,
                    },
                    s.params.values(),
                )
            }
            Model::Policy(p) => {
                (Header::Policy { dims: vec![p.vocab, p.dim], seed: self.seed, role: p.role() }, p.values())
            }
        };
        let h = serde_json::to_vec(&header).expect("header serialises");
        let mut out = Vec::with_capacity(12 + h.len() + 8 * values.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(h.len() as u32).to_le_bytes());
        out.extend_from_slice(&h);
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Domain(format!("checkpoint: {m}"));
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(bad("missing magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(bad(&format!("unsupported format version {version}")));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body = bytes.get(12..12 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| bad(&e.to_string()))?;
        let rest = &bytes[12 + hlen..];
        if rest.len() % 8 != 0 {
            return Err(bad("parameter block is not a whole number of f64"));
        }
        let values: Vec<f64> = rest.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(match header {
            Header::Scorer { dims, seed, arch, features } => {
                let hidden = match arch {
                    ScorerArch::Linear => 0,
                    ScorerArch::Mlp { hidden } => hidden,
                };
                if dims != [features.dim(), hidden] {
                    return Err(bad(&format!("dims {dims:?} disagree with the feature configuration")));
                }
                let params = ScorerParams::from_values(arch, dims[0], values)?;
                Checkpoint { model: Model::Scorer(Scorer { features, params }), seed }
            }
            Header::Policy { dims, seed, role } => {
                if dims.len() != 2 {
                    return Err(bad("policy dims must be [vocab, embed]"));
                }
                Checkpoint { model: Model::Policy(PolicyParams::from_values(dims[0], dims[1], role, values)?), seed }
            }
        })
    }
}
