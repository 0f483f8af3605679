use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub latent_dim: usize,
    pub style_dim: usize,
    /// Width of the reference encoder body.
    pub ref_hidden_dim: usize,
    pub ref_heads: usize,
    pub ref_kernel: usize,
    pub d_ssl: usize,
    pub d_ling: usize,
    pub n_linear_bins: usize,
    pub n_mels_ref: usize,
    pub posterior_layers: usize,
    pub posterior_kernel: usize,
    pub posterior_dilation_rate: usize,
    pub energy_layers: usize,
    pub energy_kernel: usize,
    pub fusion_kernel: usize,
    pub flow_layers: usize,
    pub flow_wn_layers: usize,
    pub flow_kernel: usize,
    /// Couplings only shift; the flow becomes volume preserving.
    pub flow_mean_only: bool,
    pub upsample_rates: Vec<usize>,
    pub decoder_initial_channels: usize,
    pub resblock_kernels: Vec<usize>,
    pub resblock_dilations: Vec<Vec<usize>>,
    pub discriminator: DiscriminatorConfig,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 192,
            latent_dim: 192,
            style_dim: 128,
            ref_hidden_dim: 128,
            ref_heads: 2,
            ref_kernel: 5,
            d_ssl: 1024,
            d_ling: 192,
            n_linear_bins: 442,
            n_mels_ref: 128,
            posterior_layers: 16,
            posterior_kernel: 5,
            posterior_dilation_rate: 1,
            energy_layers: 3,
            energy_kernel: 3,
            fusion_kernel: 3,
            flow_layers: 4,
            flow_wn_layers: 4,
            flow_kernel: 5,
            flow_mean_only: false,
            upsample_rates: vec![11, 5, 2, 2],
            decoder_initial_channels: 1024,
            resblock_kernels: vec![3, 7, 11],
            resblock_dilations: vec![vec![1, 3, 5]; 3],
            discriminator: DiscriminatorConfig::default(),
            seed: 1234,
        }
    }
}

impl ModelConfig {
    /// Small network for desk-scale smoke runs and tests.
    pub fn tiny() -> Self {
        Self {
            hidden_dim: 64,
            latent_dim: 64,
            style_dim: 32,
            ref_hidden_dim: 32,
            d_ling: 64,
            posterior_layers: 4,
            energy_layers: 2,
            flow_layers: 2,
            flow_wn_layers: 2,
            decoder_initial_channels: 64,
            resblock_kernels: vec![3, 7],
            resblock_dilations: vec![vec![1, 3]; 2],
            discriminator: DiscriminatorConfig::tiny(),
            ..Self::default()
        }
    }

    /// Total decoder upsampling, i.e. samples per latent frame.
    pub fn hop(&self) -> usize {
        self.upsample_rates.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim != self.hidden_dim {
            return Err(Error::config(format!(
                "latent_dim ({}) must equal hidden_dim ({})",
                self.latent_dim, self.hidden_dim
            )));
        }
        if self.latent_dim % 2 != 0 {
            return Err(Error::config("latent_dim must be even for channel-half couplings"));
        }
        if self.ref_hidden_dim % self.ref_heads.max(1) != 0 || self.ref_heads == 0 {
            return Err(Error::config("ref_hidden_dim must be divisible by ref_heads"));
        }
        for (name, k) in [
            ("posterior_kernel", self.posterior_kernel),
            ("energy_kernel", self.energy_kernel),
            ("fusion_kernel", self.fusion_kernel),
            ("flow_kernel", self.flow_kernel),
            ("ref_kernel", self.ref_kernel),
        ] {
            if k % 2 == 0 {
                return Err(Error::config(format!("{name} must be odd, got {k}")));
            }
        }
        if self.upsample_rates.is_empty() || self.upsample_rates.contains(&0) {
            return Err(Error::config("upsample_rates must be non-empty and positive"));
        }
        if self.decoder_initial_channels >> self.upsample_rates.len() == 0 {
            return Err(Error::config("decoder_initial_channels too small for the number of stages"));
        }
        if self.resblock_kernels.len() != self.resblock_dilations.len() || self.resblock_kernels.is_empty() {
            return Err(Error::config("resblock_kernels and resblock_dilations must pair up"));
        }
        if self.energy_layers == 0 || self.flow_wn_layers == 0 || self.posterior_layers == 0 {
            return Err(Error::config("layer counts must be positive"));
        }
        self.discriminator.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub periods: Vec<usize>,
    /// Channel progression of each period sub-discriminator.
    pub period_channels: Vec<usize>,
    pub fft_sizes: Vec<usize>,
    pub band_channels: usize,
    /// Frequency bands as fractions of the Nyquist range.
    pub bands: Vec<(f64, f64)>,
    /// Add a style projection term to every logit map.
    pub conditional: bool,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            periods: vec![2, 3, 5, 7, 11],
            period_channels: vec![32, 128, 512, 1024, 1024],
            fft_sizes: vec![2048, 1024, 512],
            band_channels: 32,
            bands: vec![(0.0, 0.1), (0.1, 0.25), (0.25, 0.5), (0.5, 0.75), (0.75, 1.0)],
            conditional: false,
        }
    }
}

impl DiscriminatorConfig {
    pub fn tiny() -> Self {
        Self {
            period_channels: vec![8, 16, 32],
            fft_sizes: vec![1024, 512],
            band_channels: 8,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.periods.is_empty() && self.fft_sizes.is_empty() {
            return Err(Error::config("discriminator needs at least one sub-discriminator"));
        }
        if self.period_channels.is_empty() || self.band_channels == 0 {
            return Err(Error::config("discriminator channel counts must be positive"));
        }
        if self.bands.is_empty() || self.bands.iter().any(|&(lo, hi)| !(0.0 <= lo && lo < hi && hi <= 1.0)) {
            return Err(Error::config("bands must be increasing fractions within [0, 1]"));
        }
        if self.fft_sizes.iter().any(|&n| n < 16 || n % 4 != 0) {
            return Err(Error::config("fft_sizes must be multiples of 4 and at least 16"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_consistent() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.hop(), 220);
        assert_eq!((c.hidden_dim, c.latent_dim, c.style_dim, c.d_ling), (192, 192, 128, 192));
        ModelConfig::tiny().validate().unwrap();
        assert_eq!(ModelConfig::tiny().hop(), 220);
    }

    #[test]
    fn latent_must_match_hidden() {
        let c = ModelConfig {
            latent_dim: 128,
            ..ModelConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<ModelConfig>(r#"{"speaker_id": 3}"#).is_err());
        let c: ModelConfig = serde_json::from_str(r#"{"flow_layers": 2}"#).unwrap();
        assert_eq!(c.flow_layers, 2);
    }
}
