use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::problem::{TileDims, TileProblem};
use crate::graph::LayerKind;
use crate::rational::{score_serde, Score};

/// Pluggable `L1_backend` estimate for a tile.
#[derive(Clone)]
pub struct BackendFn(pub Arc<BackendCost>);

pub type BackendCost = dyn Fn(&TileProblem, &TileDims) -> usize + Send + Sync;

impl fmt::Debug for BackendFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("BackendFn(..)")
    }
}

/// Built-in backend scratch models.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum BackendModel {
    /// Per-core im2col buffers: `cores*K_h*K_w*C_x` for conv and
    /// `cores*K_w*h_x^t` for depthwise; nothing for 1x1 kernels, linear,
    /// pooling and add.
    Im2col {
        cores: usize,
    },
    Zero,
}

/// Capacities and transfer characteristics of the three memory levels.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MemoryHierarchy {
    pub l1_bytes: usize,
    pub l2_bytes: usize,
    pub l3_bytes: usize,
    /// Bytes per cycle.
    pub l2l1_bandwidth: f64,
    pub l2l1_latency: u64,
    pub l3l2_bandwidth: f64,
    pub l3l2_latency: u64,
    pub backend: BackendModel,
    #[serde(skip)]
    pub custom_backend: Option<BackendFn>,
}

impl Default for MemoryHierarchy {
    fn default() -> Self {
        MemoryHierarchy {
            l1_bytes: 64 * 1024,
            l2_bytes: 512 * 1024,
            l3_bytes: 8 * 1024 * 1024,
            l2l1_bandwidth: 8.0,
            l2l1_latency: 8,
            l3l2_bandwidth: 2.0,
            l3l2_latency: 100,
            backend: BackendModel::Im2col { cores: 8 },
            custom_backend: None,
        }
    }
}

impl MemoryHierarchy {
    pub fn with_sizes(l1: usize, l2: usize, l3: usize) -> Self {
        MemoryHierarchy { l1_bytes: l1, l2_bytes: l2, l3_bytes: l3, ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.l1_bytes == 0 || self.l1_bytes >= self.l2_bytes || self.l2_bytes >= self.l3_bytes {
            return Err(format!(
                "memory sizes must satisfy 0 < l1 < l2 < l3, got {} / {} / {}",
                self.l1_bytes, self.l2_bytes, self.l3_bytes
            ));
        }
        let ok = |b: f64| b.is_finite() && b > 0.0;
        if !ok(self.l2l1_bandwidth) || !ok(self.l3l2_bandwidth) {
            return Err("bandwidths must be positive".to_string());
        }
        Ok(())
    }

    /// Backend scratch bytes needed in L1 by a tile.
    pub fn backend_bytes(&self, p: &TileProblem, t: &TileDims) -> usize {
        if let Some(f) = &self.custom_backend {
            return (f.0)(p, t);
        }
        match self.backend {
            BackendModel::Zero => 0,
            BackendModel::Im2col { cores } => {
                if p.k_h * p.k_w == 1 {
                    return 0;
                }
                match p.kind {
                    LayerKind::Conv => cores * p.k_h * p.k_w * p.c_x,
                    LayerKind::Depthwise => cores * p.k_w * t.h_x_t,
                    _ => 0,
                }
            }
        }
    }
}

/// Weights of the tile-selection objective.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectiveWeights {
    #[serde(with = "score_serde")]
    pub alpha: Score,
    #[serde(with = "score_serde")]
    pub beta_i2c: Score,
    #[serde(with = "score_serde")]
    pub beta_par: Score,
    #[serde(with = "score_serde")]
    pub beta_mm_w: Score,
    #[serde(with = "score_serde")]
    pub beta_mm_ch: Score,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        ObjectiveWeights {
            alpha: Score::new(1, 2),
            beta_i2c: Score::from_integer(100),
            beta_par: Score::from_integer(1_000_000),
            beta_mm_w: Score::from_integer(1_000_000),
            beta_mm_ch: Score::from_integer(1_000_000),
        }
    }
}

impl ObjectiveWeights {
    /// Pure occupancy maximization.
    pub fn occupancy_only() -> Self {
        ObjectiveWeights {
            alpha: Score::from_integer(1),
            beta_i2c: Score::from_integer(0),
            beta_par: Score::from_integer(0),
            beta_mm_w: Score::from_integer(0),
            beta_mm_ch: Score::from_integer(0),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let all = [&self.alpha, &self.beta_i2c, &self.beta_par, &self.beta_mm_w, &self.beta_mm_ch];
        if all.iter().any(|v| **v < Score::from_integer(0)) {
            return Err("objective weights must be non-negative".to_string());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::bare_layer;
    use crate::graph::Padding;

    #[test]
    fn sizes_must_grow_outward() {
        assert!(MemoryHierarchy::default().validate().is_ok());
        assert!(MemoryHierarchy::with_sizes(0, 2, 3).validate().is_err());
        assert!(MemoryHierarchy::with_sizes(4, 4, 8).validate().is_err());
        let mut m = MemoryHierarchy::default();
        m.l3l2_bandwidth = f64::NAN;
        assert!(m.validate().is_err());
    }

    #[test]
    fn im2col_scratch_by_kind() {
        let m = MemoryHierarchy::default();
        let conv = TileProblem::from_layer(&bare_layer(LayerKind::Conv, (8, 8, 16), 8, (3, 3), 1, Padding::uniform(1)));
        let t = TileDims::new(&conv, &m, 8, 4, 4);
        assert_eq!(m.backend_bytes(&conv, &t), 8 * 9 * 16);

        let dw = TileProblem::from_layer(&bare_layer(LayerKind::Depthwise, (8, 8, 16), 16, (3, 3), 1, Padding::uniform(1)));
        let t = TileDims::new(&dw, &m, 8, 4, 4);
        assert_eq!(m.backend_bytes(&dw, &t), 8 * 3 * t.h_x_t);

        let pw = TileProblem::from_layer(&bare_layer(LayerKind::Pointwise, (8, 8, 16), 8, (1, 1), 1, Padding::default()));
        let t = TileDims::new(&pw, &m, 8, 4, 4);
        assert_eq!(m.backend_bytes(&pw, &t), 0);
    }

    #[test]
    fn negative_objective_weight_is_rejected() {
        assert!(ObjectiveWeights::default().validate().is_ok());
        let w = ObjectiveWeights { beta_par: Score::from_integer(-1), ..ObjectiveWeights::default() };
        assert!(w.validate().is_err());
    }
}
