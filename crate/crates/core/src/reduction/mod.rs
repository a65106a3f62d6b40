//! Online reward-dimension reducers `f: R^K -> R^m`.
//!
//! [`Reducer`] wraps the learned positive row-stochastic map ([`OursReducer`])
//! and the baselines (incremental PCA, nonnegative PCA, autoencoder) behind
//! one observe / update / transform contract.

mod ae;
mod ipca;
mod npca;
mod ours;

pub use ae::{AeParams, AeReducer};
pub use ipca::{effective_rank, top_eigenvectors, IpcaParams, IpcaReducer, StreamingMoments};
pub use npca::{npca_objective, npca_objective_gradient, NpcaParams, NpcaReducer};
pub use ours::{Ablation, OursGrads, OursParams, OursReducer, Parameterization, ReductionMatrix};

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, usage, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReducerKind {
    None,
    Ours,
    Ipca,
    Npca,
    Ae,
}

impl ReducerKind {
    pub const ALL: [ReducerKind; 5] = [Self::None, Self::Ours, Self::Ipca, Self::Npca, Self::Ae];

    pub fn name(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Ours => "ours",
            Self::Ipca => "ipca",
            Self::Npca => "npca",
            Self::Ae => "ae",
        }
    }
}

impl fmt::Display for ReducerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ReducerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| usage(format!("unknown reducer `{s}` (expected none, ours, ipca, npca or ae)")))
    }
}

/// Hyperparameters for every reducer; only the selected one is used.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReducerParams {
    pub ours: OursParams,
    pub ipca: IpcaParams,
    pub npca: NpcaParams,
    pub ae: AeParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Reducer {
    None { dim: usize },
    Ours(OursReducer),
    Ipca(IpcaReducer),
    Npca(NpcaReducer),
    Ae(AeReducer),
}

impl Reducer {
    /// Builds a reducer from `K` to `m`. `none` requires `m == K`; ablation
    /// flags only apply to `ours`.
    pub fn new<R: Rng + ?Sized>(
        kind: ReducerKind,
        k: usize,
        m: usize,
        params: &ReducerParams,
        ablation: Ablation,
        rng: &mut R,
    ) -> Result<Self> {
        if kind != ReducerKind::Ours && !ablation.is_none() {
            return Err(usage(format!("ablation flags apply only to `ours`, not `{kind}`")));
        }
        Ok(match kind {
            ReducerKind::None => {
                if m != k {
                    return Err(usage(format!("reducer `none` needs m == K, got m={m}, K={k}")));
                }
                Self::None { dim: k }
            }
            ReducerKind::Ours => Self::Ours(OursReducer::new(k, m, params.ours.clone(), ablation, rng)?),
            ReducerKind::Ipca => Self::Ipca(IpcaReducer::new(k, m, params.ipca.clone())?),
            ReducerKind::Npca => Self::Npca(NpcaReducer::new(k, m, params.npca.clone())?),
            ReducerKind::Ae => Self::Ae(AeReducer::new(k, m, params.ae.clone(), rng)?),
        })
    }

    pub fn kind(&self) -> ReducerKind {
        match self {
            Self::None { .. } => ReducerKind::None,
            Self::Ours(_) => ReducerKind::Ours,
            Self::Ipca(_) => ReducerKind::Ipca,
            Self::Npca(_) => ReducerKind::Npca,
            Self::Ae(_) => ReducerKind::Ae,
        }
    }

    pub fn source_dim(&self) -> usize {
        match self {
            Self::None { dim } => *dim,
            Self::Ours(r) => r.source_dim(),
            Self::Ipca(r) => r.source_dim(),
            Self::Npca(r) => r.source_dim(),
            Self::Ae(r) => r.source_dim(),
        }
    }

    pub fn target_dim(&self) -> usize {
        match self {
            Self::None { dim } => *dim,
            Self::Ours(r) => r.target_dim(),
            Self::Ipca(r) => r.target_dim(),
            Self::Npca(r) => r.target_dim(),
            Self::Ae(r) => r.target_dim(),
        }
    }

    /// Steps between updates (PCA refreshes for `ipca`); `None` for the identity.
    pub fn update_interval(&self) -> Option<usize> {
        match self {
            Self::None { .. } => None,
            Self::Ours(r) => Some(r.params().update_interval),
            Self::Ipca(r) => Some(r.params().refresh_interval),
            Self::Npca(r) => Some(r.params().update_interval),
            Self::Ae(r) => Some(r.params().update_interval),
        }
    }

    /// Minibatch size for reducers trained on replayed rewards, else `None`.
    pub fn batch_size(&self) -> Option<usize> {
        match self {
            Self::Ours(r) => Some(r.params().batch_size),
            Self::Ae(r) => Some(r.params().batch_size),
            _ => None,
        }
    }

    /// Feeds one freshly observed reward to the streaming statistics.
    pub fn observe(&mut self, r: &[f64]) -> Result<()> {
        match self {
            Self::Ipca(x) => x.observe(r),
            Self::Npca(x) => x.observe(r),
            _ => ensure_len("reward", r.len(), self.source_dim()),
        }
    }

    /// Whether `transform` is currently defined.
    pub fn ready(&self) -> bool {
        match self {
            Self::Ipca(x) => x.projection().is_some(),
            _ => true,
        }
    }

    /// One scheduled update. Returns the loss (negated objective for `npca`)
    /// or `None` when the reducer had nothing to do.
    pub fn update<R: Rng + ?Sized>(&mut self, batch: Option<&DMatrix<f64>>, rng: &mut R) -> Result<Option<f64>> {
        let need = || usage("this reducer trains on a reward minibatch");
        match self {
            Self::None { .. } => Ok(None),
            Self::Ours(x) => x.update(batch.ok_or_else(need)?, rng).map(Some),
            Self::Ae(x) => x.update(batch.ok_or_else(need)?).map(Some),
            Self::Ipca(x) => {
                if x.moments().count() < 2 {
                    return Ok(None);
                }
                x.refresh()?;
                Ok(None)
            }
            Self::Npca(x) => {
                if x.moments().count() < 2 {
                    return Ok(None);
                }
                x.update().map(|objective| Some(-objective))
            }
        }
    }

    pub fn transform(&self, r: &[f64]) -> Result<Vec<f64>> {
        match self {
            Self::None { dim } => {
                ensure_len("reward", r.len(), *dim)?;
                Ok(r.to_vec())
            }
            Self::Ours(x) => x.transform(r),
            Self::Ipca(x) => x.transform(r),
            Self::Npca(x) => x.transform(r),
            Self::Ae(x) => x.transform(r),
        }
    }

    /// Reduces a batch of rewards, one per row.
    pub fn transform_batch(&self, rewards: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match self {
            Self::None { dim } => {
                ensure_len("reward batch width", rewards.ncols(), *dim)?;
                Ok(rewards.clone())
            }
            Self::Ours(x) => x.transform_batch(rewards),
            Self::Ipca(x) => x.transform_batch(rewards),
            Self::Npca(x) => x.transform_batch(rewards),
            Self::Ae(x) => x.transform_batch(rewards),
        }
    }

    /// The linear part of the map as an `m x K` matrix, when there is one.
    pub fn realized_matrix(&self) -> Option<DMatrix<f64>> {
        match self {
            Self::None { dim } => Some(DMatrix::identity(*dim, *dim)),
            Self::Ours(x) => Some(x.realized()),
            Self::Ipca(x) => x.projection().map(|u| u.transpose()),
            Self::Npca(x) => Some(x.realized().transpose()),
            Self::Ae(_) => None,
        }
    }

    /// JSON checkpoint: the realized matrix (rows) next to the full raw state.
    pub fn checkpoint(&self) -> Result<serde_json::Value> {
        let realized = self
            .realized_matrix()
            .map(|a| a.row_iter().map(|row| row.iter().copied().collect::<Vec<f64>>()).collect::<Vec<_>>());
        Ok(serde_json::json!({
            "kind": self.kind(),
            "source_dim": self.source_dim(),
            "target_dim": self.target_dim(),
            "realized": realized,
            "state": serde_json::to_value(self)?,
        }))
    }

    pub fn from_checkpoint(value: &serde_json::Value) -> Result<Self> {
        let state = value.get("state").ok_or_else(|| usage("checkpoint has no `state` field"))?;
        Ok(serde_json::from_value(state.clone())?)
    }
}
