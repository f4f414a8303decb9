//! Training losses: clamped binary cross-entropy, mean squared error, and
//! their weighted combination for the dual-task hybrid.

use serde::{Deserialize, Serialize};

use crate::tensor::{GradGraph, Value};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    /// Weight on the reconstruction term.
    #[serde(default = "default_lambda")]
    pub lambda_recon: f32,
    /// Probability clamp inside the BCE logs.
    #[serde(default = "default_clamp")]
    pub bce_clamp: f32,
}

fn default_lambda() -> f32 {
    1.0
}
fn default_clamp() -> f32 {
    1e-7
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { lambda_recon: default_lambda(), bce_clamp: default_clamp() }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_recon < 0.0 {
            return Err(Error::InvalidArgument(format!("lambda_recon {}", self.lambda_recon)));
        }
        if !(self.bce_clamp > 0.0 && self.bce_clamp <= 1e-4) {
            return Err(Error::InvalidArgument(format!("bce_clamp {}", self.bce_clamp)));
        }
        Ok(())
    }
}

/// -(y ln p + (1 - y) ln(1 - p)) with p clamped to [eps, 1 - eps].
pub fn bce_loss(g: &mut GradGraph, probability: Value, label: f32, clamp: f32) -> Result<Value> {
    if label != 0.0 && label != 1.0 {
        return Err(Error::BadLabel(label));
    }
    let p = g.clamp(probability, clamp, 1.0 - clamp);
    let ln_p = g.ln(p);
    let neg = g.scale(p, -1.0);
    let one_minus = g.add_scalar(neg, 1.0);
    let ln_1mp = g.ln(one_minus);
    let a = g.scale(ln_p, -label);
    let b = g.scale(ln_1mp, -(1.0 - label));
    g.add(a, b)
}

/// mean((a - b)^2)
pub fn mse_loss(g: &mut GradGraph, a: Value, b: Value) -> Result<Value> {
    let d = g.sub(a, b)?;
    let sq = g.mul(d, d)?;
    Ok(g.mean_all(sq))
}

/// BCE(probability, label) + lambda_recon * MSE(recon, target).
pub fn combined_loss(
    g: &mut GradGraph,
    recon: Value,
    target: Value,
    probability: Value,
    label: f32,
    cfg: &LossConfig,
) -> Result<Value> {
    cfg.validate()?;
    let bce = bce_loss(g, probability, label, cfg.bce_clamp)?;
    let mse = mse_loss(g, recon, target)?;
    let weighted = g.scale(mse, cfg.lambda_recon);
    g.add(bce, weighted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tensor;

    fn scalar_loss(
        build: impl FnOnce(&mut GradGraph) -> Result<Value>,
    ) -> f32 {
        let mut g = GradGraph::new();
        let v = build(&mut g).unwrap();
        g.value(v).data()[0]
    }

    #[test]
    fn near_perfect_hybrid_loss_is_epsilon_level() {
        let cfg = LossConfig::default();
        let loss = scalar_loss(|g| {
            let recon = g.constant(Tensor::filled(&[4, 4], 0.5));
            let target = g.constant(Tensor::filled(&[4, 4], 0.5));
            let p = g.constant(Tensor::scalar(1.0 - cfg.bce_clamp));
            combined_loss(g, recon, target, p, 1.0, &cfg)
        });
        assert!(loss.abs() < 1e-4, "loss {loss}");
    }

    #[test]
    fn zero_lambda_reduces_to_bce_ln2() {
        let cfg = LossConfig { lambda_recon: 0.0, ..LossConfig::default() };
        let loss = scalar_loss(|g| {
            let recon = g.constant(Tensor::filled(&[2, 2], 0.9));
            let target = g.constant(Tensor::zeros(&[2, 2]));
            let p = g.constant(Tensor::scalar(0.5));
            combined_loss(g, recon, target, p, 1.0, &cfg)
        });
        assert!((loss - std::f32::consts::LN_2).abs() <= 1e-6, "loss {loss}");
    }

    #[test]
    fn hand_summed_case() {
        // BCE(0.5, 1) + 1.0 * MSE of 0.04 = 0.6931 + 0.04
        let cfg = LossConfig::default();
        let loss = scalar_loss(|g| {
            let recon = g.constant(Tensor::filled(&[5], 0.2));
            let target = g.constant(Tensor::zeros(&[5]));
            let p = g.constant(Tensor::scalar(0.5));
            combined_loss(g, recon, target, p, 1.0, &cfg)
        });
        assert!((loss - 0.7331).abs() <= 1e-4, "loss {loss}");
    }

    #[test]
    fn labels_outside_zero_one_are_rejected() {
        let mut g = GradGraph::new();
        let p = g.constant(Tensor::scalar(0.5));
        assert!(matches!(bce_loss(&mut g, p, 0.7, 1e-7), Err(Error::BadLabel(_))));
    }

    #[test]
    fn clamp_bounds_are_validated() {
        assert!(LossConfig { lambda_recon: 1.0, bce_clamp: 0.0 }.validate().is_err());
        assert!(LossConfig { lambda_recon: 1.0, bce_clamp: 2e-4 }.validate().is_err());
        assert!(LossConfig { lambda_recon: -1.0, bce_clamp: 1e-7 }.validate().is_err());
    }
}
