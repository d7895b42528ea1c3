//! Model hyperparameters and architecture variants.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Token-mixing block of a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionVariant {
    /// Multi-head subspace self-attention: one projection per head shared by
    /// query, key and value.
    Mssa,
    /// Standard multi-head self-attention with separate Q/K/V projections.
    Mhsa,
}

/// Per-token block of a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MlpVariant {
    /// One nonnegative ISTA step against a learned dictionary.
    Ista,
    /// Two-layer GELU perceptron with an outer residual.
    Mlp,
}

/// The four rows of the attention/MLP ablation matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arch {
    Crate,
    CrateMlp,
    CrateMhsa,
    Vit,
}

impl Arch {
    pub const ALL: [Arch; 4] = [Arch::Crate, Arch::CrateMlp, Arch::CrateMhsa, Arch::Vit];

    pub fn variants(self) -> (AttentionVariant, MlpVariant) {
        match self {
            Arch::Crate => (AttentionVariant::Mssa, MlpVariant::Ista),
            Arch::CrateMlp => (AttentionVariant::Mssa, MlpVariant::Mlp),
            Arch::CrateMhsa => (AttentionVariant::Mhsa, MlpVariant::Ista),
            Arch::Vit => (AttentionVariant::Mhsa, MlpVariant::Mlp),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Arch::Crate => "crate",
            Arch::CrateMlp => "crate-mlp",
            Arch::CrateMhsa => "crate-mhsa",
            Arch::Vit => "vit",
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "crate" => Ok(Arch::Crate),
            "crate-mlp" => Ok(Arch::CrateMlp),
            "crate-mhsa" => Ok(Arch::CrateMhsa),
            "vit" => Ok(Arch::Vit),
            other => Err(Error::config(format!(
                "unknown architecture {other:?} (expected crate, crate-mlp, crate-mhsa or vit)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub model_dim: usize,
    pub num_heads: usize,
    pub head_dim: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub patch_h: usize,
    pub patch_w: usize,
    /// Quantization precision of the coding rates.
    pub epsilon: f64,
    /// Sparsity weight of the ISTA step.
    pub lambda: f64,
    /// Step size of the ISTA step.
    pub ista_step: f64,
    pub num_classes: usize,
    pub attention: AttentionVariant,
    pub mlp: MlpVariant,
    /// Hidden width of the MLP variant; ignored by ISTA layers.
    pub mlp_hidden: usize,
}

impl ModelConfig {
    /// The small configuration used for gradient checks:
    /// d=8, p=4, K=2, L=2, 2×2 patch grid of 4×4 RGB patches, 3 classes.
    pub fn tiny(arch: Arch) -> Self {
        let (attention, mlp) = arch.variants();
        ModelConfig {
            num_layers: 2,
            model_dim: 8,
            num_heads: 2,
            head_dim: 4,
            channels: 3,
            height: 8,
            width: 8,
            patch_h: 4,
            patch_w: 4,
            epsilon: 1.0,
            lambda: 0.1,
            ista_step: 0.1,
            num_classes: 3,
            attention,
            mlp,
            mlp_hidden: 16,
        }
    }

    /// Desk-scale configuration: d=64, p=16, K=4, L=4 on 3×32×32 images with
    /// 8×8 patches.
    pub fn desk(arch: Arch, num_classes: usize) -> Self {
        let (attention, mlp) = arch.variants();
        ModelConfig {
            num_layers: 4,
            model_dim: 64,
            num_heads: 4,
            head_dim: 16,
            channels: 3,
            height: 32,
            width: 32,
            patch_h: 8,
            patch_w: 8,
            epsilon: 1.0,
            lambda: 0.1,
            ista_step: 0.1,
            num_classes,
            attention,
            mlp,
            mlp_hidden: 4 * 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("model_dim", self.model_dim),
            ("num_heads", self.num_heads),
            ("head_dim", self.head_dim),
            ("channels", self.channels),
            ("height", self.height),
            ("width", self.width),
            ("patch_h", self.patch_h),
            ("patch_w", self.patch_w),
            ("num_classes", self.num_classes),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if self.num_heads * self.head_dim != self.model_dim {
            return Err(Error::config(format!(
                "num_heads * head_dim = {} * {} != model_dim {}",
                self.num_heads, self.head_dim, self.model_dim
            )));
        }
        if self.height % self.patch_h != 0 || self.width % self.patch_w != 0 {
            return Err(Error::config(format!(
                "patch {}x{} does not tile image {}x{}",
                self.patch_h, self.patch_w, self.height, self.width
            )));
        }
        if !(self.epsilon > 0.0) || !(self.ista_step > 0.0) || !(self.lambda >= 0.0) {
            return Err(Error::config("epsilon and ista_step must be positive, lambda nonnegative"));
        }
        if self.mlp == MlpVariant::Mlp && self.mlp_hidden == 0 {
            return Err(Error::config("mlp_hidden must be positive for the MLP variant"));
        }
        Ok(())
    }

    pub fn arch(&self) -> Arch {
        match (self.attention, self.mlp) {
            (AttentionVariant::Mssa, MlpVariant::Ista) => Arch::Crate,
            (AttentionVariant::Mssa, MlpVariant::Mlp) => Arch::CrateMlp,
            (AttentionVariant::Mhsa, MlpVariant::Ista) => Arch::CrateMhsa,
            (AttentionVariant::Mhsa, MlpVariant::Mlp) => Arch::Vit,
        }
    }

    /// Patch grid as (rows, cols).
    pub fn grid(&self) -> (usize, usize) {
        (self.height / self.patch_h, self.width / self.patch_w)
    }

    /// N, the number of patch tokens.
    pub fn num_patches(&self) -> usize {
        let (r, c) = self.grid();
        r * c
    }

    /// N + 1, patches plus the class token.
    pub fn num_tokens(&self) -> usize {
        self.num_patches() + 1
    }

    /// Flattened patch length C·P_H·P_W.
    pub fn patch_dim(&self) -> usize {
        self.channels * self.patch_h * self.patch_w
    }

    /// Softmax temperature 1/√p.
    pub fn attn_scale(&self) -> f64 {
        (self.head_dim as f64).powf(-0.5)
    }
}
