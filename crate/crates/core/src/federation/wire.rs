//! Byte encoding for protocol messages.
//!
//! Messages are UTF-8 JSON objects:
//!
//! ```text
//! {
//!   "format": "fedkmeans-message",
//!   "version": 1,
//!   "kind": "client_update" | "global_model",
//!   "client_id": 3,            // client_update only
//!   "round": 5,                // global_model only
//!   "k": 2, "dim": 2,
//!   "means": [[0.5, 1.0], [3.25, -2.0]],
//!   "counts": [12, 7]
//! }
//! ```
//!
//! Floats are written in shortest round-trip form and parsed exactly, so
//! encoding is lossless for every finite `f64`. `k` and `dim` are redundant
//! with the arrays and are checked on decode; `dim` also describes messages
//! with no means.

use serde::{Deserialize, Serialize};

use super::{ClientUpdate, GlobalModel};
use crate::error::{Error, Result};
use crate::points::ClusterSet;

pub const FORMAT: &str = "fedkmeans-message";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Update(ClientUpdate),
    Model(GlobalModel),
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    format: String,
    version: u32,
    #[serde(flatten)]
    body: Body,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Body {
    ClientUpdate {
        client_id: usize,
        #[serde(flatten)]
        clusters: WireClusters,
    },
    GlobalModel {
        round: usize,
        #[serde(flatten)]
        clusters: WireClusters,
    },
}

#[derive(Serialize, Deserialize)]
struct WireClusters {
    k: usize,
    dim: usize,
    means: Vec<Vec<f64>>,
    counts: Vec<u64>,
}

impl From<&ClusterSet> for WireClusters {
    fn from(c: &ClusterSet) -> Self {
        Self {
            k: c.k(),
            dim: c.dim(),
            means: c.means().map(<[f64]>::to_vec).collect(),
            counts: c.counts().to_vec(),
        }
    }
}

impl WireClusters {
    fn into_clusters(self) -> Result<ClusterSet> {
        if self.means.len() != self.k || self.counts.len() != self.k {
            return Err(Error::Wire(format!(
                "k = {} but {} means and {} counts",
                self.k,
                self.means.len(),
                self.counts.len()
            )));
        }
        if let Some(i) = self.means.iter().position(|m| m.len() != self.dim) {
            return Err(Error::Wire(format!(
                "mean {i} does not have dim = {}",
                self.dim
            )));
        }
        let flat: Vec<f64> = self.means.into_iter().flatten().collect();
        ClusterSet::new(flat, self.counts, self.dim).map_err(|e| Error::Wire(e.to_string()))
    }
}

impl Message {
    pub fn encode(&self) -> Vec<u8> {
        let body = match self {
            Message::Update(u) => Body::ClientUpdate {
                client_id: u.client_id,
                clusters: (&u.clusters).into(),
            },
            Message::Model(m) => Body::GlobalModel {
                round: m.round,
                clusters: (&m.means).into(),
            },
        };
        let env = Envelope {
            format: FORMAT.to_string(),
            version: VERSION,
            body,
        };
        serde_json::to_vec(&env).expect("message serialization cannot fail")
    }

    pub fn decode(bytes: &[u8]) -> Result<Message> {
        let env: Envelope =
            serde_json::from_slice(bytes).map_err(|e| Error::Wire(e.to_string()))?;
        if env.format != FORMAT {
            return Err(Error::Wire(format!("unknown format `{}`", env.format)));
        }
        if env.version != VERSION {
            return Err(Error::Wire(format!("unsupported version {}", env.version)));
        }
        Ok(match env.body {
            Body::ClientUpdate {
                client_id,
                clusters,
            } => Message::Update(ClientUpdate {
                client_id,
                clusters: clusters.into_clusters()?,
            }),
            Body::GlobalModel { round, clusters } => Message::Model(GlobalModel {
                round,
                means: clusters.into_clusters()?,
            }),
        })
    }
}
