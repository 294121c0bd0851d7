use serde::{Deserialize, Serialize};

use matmodal_nn::{AdamConfig, ContrastiveVariant};

use crate::{ModelError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Xrd,
    Composition,
    Structure,
}

impl Modality {
    pub fn prefix(self) -> &'static str {
        match self {
            Modality::Xrd => "enc.xrd",
            Modality::Composition => "enc.comp",
            Modality::Structure => "enc.struct",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Xrd => "xrd",
            Modality::Composition => "composition",
            Modality::Structure => "structure",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// a, b, c (Å) and α, β, γ (degrees).
    Lattice,
    /// eV/atom.
    FormationEnergy,
    /// Seven-way classification.
    CrystalSystem,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Lattice, Task::FormationEnergy, Task::CrystalSystem];

    pub fn name(self) -> &'static str {
        match self {
            Task::Lattice => "lattice",
            Task::FormationEnergy => "formation_energy",
            Task::CrystalSystem => "crystal_system",
        }
    }

    pub fn out_dim(self) -> usize {
        match self {
            Task::Lattice => 6,
            Task::FormationEnergy => 1,
            Task::CrystalSystem => matmodal_core::CrystalSystem::COUNT,
        }
    }
}

/// How the CNN collapses its last feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CnnPool {
    GlobalAvg,
    Flatten,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CnnConfig {
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub stride: usize,
    pub pool: CnnPool,
    /// Appends the normalized 2θ coordinate as a second input channel.
    pub coord_channel: bool,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self {
            channels: vec![8, 16, 32],
            kernel: 7,
            stride: 2,
            pool: CnnPool::Flatten,
            coord_channel: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 128],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpnnConfig {
    pub node_dim: usize,
    pub rounds: usize,
    pub n_rbf: usize,
    /// Å; also the radius-graph cutoff.
    pub cutoff: f64,
    pub max_neighbors: usize,
}

impl Default for MpnnConfig {
    fn default() -> Self {
        Self {
            node_dim: 64,
            rounds: 3,
            n_rbf: 32,
            cutoff: 5.0,
            max_neighbors: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub d: usize,
    pub cnn: CnnConfig,
    pub mlp: MlpConfig,
    pub mpnn: MpnnConfig,
    pub head_hidden: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            d: 128,
            cnn: CnnConfig::default(),
            mlp: MlpConfig::default(),
            mpnn: MpnnConfig::default(),
            head_hidden: 64,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.d < 2 {
            return bad("embedding dim d must be >= 2");
        }
        if self.cnn.channels.is_empty() || self.cnn.channels.contains(&0) {
            return bad("cnn.channels must be nonempty and >= 1");
        }
        if self.cnn.kernel == 0 || self.cnn.stride == 0 {
            return bad("cnn.kernel and cnn.stride must be >= 1");
        }
        if self.mlp.hidden.contains(&0) {
            return bad("mlp.hidden sizes must be >= 1");
        }
        let m = &self.mpnn;
        if m.node_dim == 0 || m.n_rbf == 0 || m.max_neighbors == 0 {
            return bad("mpnn sizes must be >= 1");
        }
        if !(m.cutoff > 0.0 && m.cutoff.is_finite()) {
            return bad("mpnn.cutoff must be > 0");
        }
        if self.head_hidden == 0 {
            return bad("head_hidden must be >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    /// Contrastive temperature.
    pub tau: f64,
    pub trainable_tau: bool,
    pub variant: ContrastiveVariant,
    /// Weight of the contrastive term in joint training.
    pub lambda: f64,
    /// Keep encoder weights fixed during downstream training.
    pub freeze_encoder: bool,
    pub tasks: Vec<Task>,
    pub seed: u64,
    /// Stops after this many optimizer steps, mid-epoch if needed.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            epochs: 30,
            adam: AdamConfig::default(),
            tau: 0.1,
            trainable_tau: false,
            variant: ContrastiveVariant::Standard,
            lambda: 1.0,
            freeze_encoder: false,
            tasks: Task::ALL.to_vec(),
            seed: 0,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must fail these checks
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.batch_size < 2 {
            return bad(format!("batch_size {} must be >= 2", self.batch_size));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau {} must be > 0", self.tau));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda {} must be >= 0", self.lambda));
        }
        if !(self.adam.lr > 0.0) {
            return bad(format!("learning rate {} must be > 0", self.adam.lr));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let e = EncoderConfig::default();
        e.validate().unwrap();
        let t = TrainConfig::default();
        t.validate().unwrap();
        let back: TrainConfig = serde_json::from_str(&serde_json::to_string(&t).unwrap()).unwrap();
        assert_eq!(back, t);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"bogus": 1}"#).is_err());
        let partial: TrainConfig = serde_json::from_str(r#"{"epochs": 3}"#).unwrap();
        assert_eq!(partial.epochs, 3);
        assert_eq!(partial.batch_size, 64);
    }

    #[test]
    fn invalid_values() {
        let mut t = TrainConfig::default();
        t.batch_size = 1;
        assert!(t.validate().is_err());
        let mut t = TrainConfig::default();
        t.tau = 0.0;
        assert!(t.validate().is_err());
        let mut e = EncoderConfig::default();
        e.d = 1;
        assert!(e.validate().is_err());
    }
}
