use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture description for one DS-TDNN variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(default = "default_mels")]
    pub n_mels: usize,
    /// Total stem channels `C`; each branch carries `C/2`.
    pub channels: usize,
    /// Res2Conv scale per block pair; its length is the number of block pairs.
    pub scales: Vec<usize>,
    /// Expert filters per global block.
    pub experts: Vec<usize>,
    /// Sparse-mask ratio per global block.
    pub sparse_ratios: Vec<f64>,
    /// Channel count after multi-layer feature aggregation.
    pub mfa_dim: usize,
    pub embedding_dim: usize,
    pub stem_kernel: usize,
    pub local_kernel: usize,
    /// Weight on the same-branch input, `1 − w` goes to the other branch.
    pub fusion_weight: f64,
    /// Sequence length at which global filters are parameterized.
    pub filter_frames: usize,
}

fn default_mels() -> usize {
    80
}

impl ModelConfig {
    /// Desk-scale default: the small layout at 1/8 width.
    pub fn toy() -> Self {
        Self {
            n_mels: 80,
            channels: 64,
            scales: vec![4, 4, 4],
            experts: vec![4, 4, 8],
            sparse_ratios: vec![0.3, 0.1, 0.1],
            mfa_dim: 192,
            embedding_dim: 192,
            stem_kernel: 7,
            local_kernel: 3,
            fusion_weight: 0.8,
            filter_frames: 200,
        }
    }

    pub fn small() -> Self {
        Self {
            channels: 512,
            scales: vec![4, 4, 4],
            experts: vec![4, 4, 8],
            sparse_ratios: vec![0.3, 0.1, 0.1],
            mfa_dim: 1536,
            ..Self::toy()
        }
    }

    pub fn base() -> Self {
        Self {
            channels: 1024,
            scales: vec![4, 4, 8],
            experts: vec![4, 8, 8],
            sparse_ratios: vec![0.3, 0.1, 0.1],
            mfa_dim: 1536,
            ..Self::toy()
        }
    }

    pub fn large() -> Self {
        Self {
            channels: 1536,
            scales: vec![4, 8, 8],
            experts: vec![8, 8, 8],
            sparse_ratios: vec![0.4, 0.2, 0.2],
            mfa_dim: 1536,
            ..Self::toy()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "toy" => Ok(Self::toy()),
            "small" | "s" => Ok(Self::small()),
            "base" | "b" => Ok(Self::base()),
            "large" | "l" => Ok(Self::large()),
            other => Err(Error::Config(format!("unknown preset {other}"))),
        }
    }

    pub fn block_pairs(&self) -> usize {
        self.scales.len()
    }

    pub fn branch_channels(&self) -> usize {
        self.channels / 2
    }

    /// Bottleneck width of the squeeze-excitation gate.
    pub fn se_bottleneck(&self) -> usize {
        (self.branch_channels() / 16).max(4)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.channels == 0 || self.channels % 2 != 0 {
            return fail(format!("channel count {} must be even and positive", self.channels));
        }
        let n = self.block_pairs();
        if n == 0 {
            return fail("at least one block pair is required".into());
        }
        if self.experts.len() != n || self.sparse_ratios.len() != n {
            return fail(format!(
                "per-layer lists differ in length: scales {n}, experts {}, sparse ratios {}",
                self.experts.len(),
                self.sparse_ratios.len()
            ));
        }
        let half = self.branch_channels();
        if let Some(s) = self.scales.iter().find(|&&s| s == 0 || half % s != 0) {
            return fail(format!("branch width {half} is not divisible by scale {s}"));
        }
        if self.experts.contains(&0) {
            return fail("every global block needs at least one expert".into());
        }
        if self.sparse_ratios.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return fail("sparse ratios must lie in [0, 1]".into());
        }
        if self.stem_kernel % 2 == 0 || self.local_kernel % 2 == 0 {
            return fail("kernel sizes must be odd to preserve length".into());
        }
        if self.mfa_dim == 0 || self.embedding_dim == 0 || self.n_mels == 0 {
            return fail("dimensions must be positive".into());
        }
        if self.filter_frames < 2 {
            return fail("filter_frames must be at least 2".into());
        }
        if !(0.0..=1.0).contains(&self.fusion_weight) {
            return fail("fusion weight must lie in [0, 1]".into());
        }
        Ok(())
    }
}
