//! Workload description: the model being trained and the FL global
//! parameters.
//!
//! Descriptors carry two distinct things. The layer-count fields describe a
//! workload *shape* (what the controller featurizes), while `trainable`
//! names the concrete desk-scale differentiable body that actually runs.
//! The paper-like kinds pair realistic layer mixes with small stand-in
//! bodies; the toy kinds are their own bodies.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Workload shape selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NnKind {
    CnnLike,
    LstmLike,
    MobileNetLike,
    ToyLogistic,
    ToyMlp,
}

/// Concrete trainable body behind a descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BodyKind {
    /// Multinomial logistic regression.
    Logistic,
    /// One hidden tanh layer followed by a softmax readout.
    Mlp { hidden: usize },
}

/// Dimensions needed to instantiate a trainable body.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BodySpec {
    pub kind: BodyKind,
    pub features: usize,
    pub classes: usize,
}

impl BodySpec {
    pub fn param_count(&self) -> usize {
        match self.kind {
            BodyKind::Logistic => self.features * self.classes + self.classes,
            BodyKind::Mlp { hidden } => {
                hidden * self.features + hidden + self.classes * hidden + self.classes
            }
        }
    }
}

/// Workload shape plus its trainable body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NnDescriptor {
    pub conv_layers: u32,
    pub fc_layers: u32,
    pub rc_layers: u32,
    /// FLOPs for one forward+backward pass over a single sample.
    pub flops_per_sample: f64,
    /// Bytes transmitted for one gradient/model update.
    pub update_bytes: u64,
    pub trainable: BodySpec,
}

/// Builds the descriptor for a workload kind over the given data shape.
///
/// FLOPs and update size derive from the trainable body: 6 FLOPs per
/// parameter per sample for forward+backward, 4 bytes per parameter on the
/// wire. `hidden` applies to `ToyMlp` (required nonzero there) and is
/// ignored by kinds with fixed stand-in bodies.
pub fn describe_nn(kind: NnKind, features: usize, classes: usize, hidden: usize) -> Result<NnDescriptor> {
    if features == 0 || classes < 2 {
        return Err(SimError::Config("workload needs >=1 feature and >=2 classes".into()));
    }
    let (conv, fc, rc, body_kind) = match kind {
        NnKind::CnnLike => (2, 2, 0, BodyKind::Mlp { hidden: 64 }),
        NnKind::LstmLike => (0, 1, 2, BodyKind::Mlp { hidden: 48 }),
        NnKind::MobileNetLike => (28, 1, 0, BodyKind::Mlp { hidden: 96 }),
        NnKind::ToyLogistic => (0, 1, 0, BodyKind::Logistic),
        NnKind::ToyMlp => {
            if hidden == 0 {
                return Err(SimError::Config("toy_mlp requires a nonzero hidden layer width".into()));
            }
            (0, 2, 0, BodyKind::Mlp { hidden })
        }
    };
    let trainable = BodySpec { kind: body_kind, features, classes };
    let params = trainable.param_count();
    Ok(NnDescriptor {
        conv_layers: conv,
        fc_layers: fc,
        rc_layers: rc,
        flops_per_sample: 6.0 * params as f64,
        update_bytes: 4 * params as u64,
        trainable,
    })
}

/// FL global parameters fixed for the lifetime of an experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlobalParams {
    /// Minibatch size B.
    pub batch_size: usize,
    /// Local epochs E.
    pub local_epochs: usize,
    /// Participants per round K.
    pub participants_per_round: usize,
    /// Fleet size N.
    pub fleet_size: usize,
    /// Accuracy (percent) at which the experiment stops.
    pub target_accuracy: f64,
    pub max_rounds: usize,
    /// Learning rate for on-device SGD.
    pub local_lr: f64,
}

impl GlobalParams {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.local_epochs == 0 {
            return Err(SimError::Config("B and E must be >= 1".into()));
        }
        if self.participants_per_round == 0 || self.participants_per_round > self.fleet_size {
            return Err(SimError::Config(format!(
                "K must satisfy 1 <= K <= N (K={}, N={})",
                self.participants_per_round, self.fleet_size
            )));
        }
        if !(self.target_accuracy > 0.0 && self.target_accuracy <= 100.0) {
            return Err(SimError::Config("target_accuracy must be in (0,100]".into()));
        }
        if !(self.local_lr.is_finite() && self.local_lr >= 0.0) {
            return Err(SimError::Config("local_lr must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logistic_update_bytes() {
        let nn = describe_nn(NnKind::ToyLogistic, 64, 10, 0).unwrap();
        assert_eq!(nn.update_bytes, 4 * (64 * 10 + 10));
        assert_eq!(nn.update_bytes, 2600);
        assert_eq!(nn.flops_per_sample, 6.0 * 650.0);
        assert_eq!(nn.fc_layers, 1);
    }

    #[test]
    fn layer_mixes() {
        let cnn = describe_nn(NnKind::CnnLike, 32, 10, 0).unwrap();
        assert_eq!((cnn.conv_layers, cnn.fc_layers, cnn.rc_layers), (2, 2, 0));
        let lstm = describe_nn(NnKind::LstmLike, 32, 10, 0).unwrap();
        assert_eq!((lstm.conv_layers, lstm.fc_layers, lstm.rc_layers), (0, 1, 2));
        let mob = describe_nn(NnKind::MobileNetLike, 32, 10, 0).unwrap();
        assert_eq!((mob.conv_layers, mob.fc_layers, mob.rc_layers), (28, 1, 0));
    }

    #[test]
    fn zero_hidden_mlp_rejected() {
        assert!(matches!(describe_nn(NnKind::ToyMlp, 8, 3, 0), Err(SimError::Config(_))));
        assert!(describe_nn(NnKind::ToyMlp, 8, 3, 4).is_ok());
    }

    #[test]
    fn mlp_param_count() {
        let spec = BodySpec { kind: BodyKind::Mlp { hidden: 4 }, features: 8, classes: 3 };
        assert_eq!(spec.param_count(), 4 * 8 + 4 + 3 * 4 + 3);
    }

    #[test]
    fn global_params_bounds() {
        let mut p = GlobalParams {
            batch_size: 16,
            local_epochs: 5,
            participants_per_round: 10,
            fleet_size: 20,
            target_accuracy: 90.0,
            max_rounds: 100,
            local_lr: 0.1,
        };
        assert!(p.validate().is_ok());
        p.participants_per_round = 21;
        assert!(p.validate().is_err());
    }
}
