//! Generator (posterior encoder, prior branches, fusion, flow, decoder) and
//! discriminator.
//!
//! All tensors are batched: frame grids are `(B, channels, T)`, waveforms
//! `(B, samples)` and style vectors `(B, style_dim)`. Style enters only the
//! fusion network and the flow.

mod config;
mod decoder;
mod discriminator;
mod encoders;
mod flow;
pub mod layers;
mod params;
pub mod spectral;
mod types;

use candle_core::{DType, Device, Tensor};

pub use config::{DiscriminatorConfig, ModelConfig};
pub use decoder::Decoder;
pub use discriminator::{DiscOutput, Discriminator};
pub use encoders::{EnergyEncoder, FusionNetwork, LinguisticProjection, PosteriorEncoder, ReferenceEncoder};
pub use flow::Flow;
pub use params::{Init, ParamStore, Params};
pub use types::{GaussianFrames, Latent, StyleVector};

use crate::error::Result;

#[derive(Debug, Clone)]
pub struct Generator {
    pub posterior: PosteriorEncoder,
    pub reference: ReferenceEncoder,
    pub energy: EnergyEncoder,
    pub linguistic: LinguisticProjection,
    pub fusion: FusionNetwork,
    pub flow: Flow,
    pub decoder: Decoder,
}

impl Generator {
    pub fn new(cfg: &ModelConfig, p: &Params) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            posterior: PosteriorEncoder::new(cfg, &p.pp("posterior"))?,
            reference: ReferenceEncoder::new(cfg, &p.pp("reference"))?,
            energy: EnergyEncoder::new(cfg, &p.pp("energy"))?,
            linguistic: LinguisticProjection::new(cfg, &p.pp("linguistic"))?,
            fusion: FusionNetwork::new(cfg, &p.pp("fusion"))?,
            flow: Flow::new(cfg, &p.pp("flow"))?,
            decoder: Decoder::new(cfg, &p.pp("decoder"))?,
        })
    }

    /// `x_linear (B, bins, T)` to `q(z | x_linear)`.
    pub fn posterior_encode(&self, x_linear: &Tensor) -> Result<GaussianFrames> {
        self.posterior.forward(x_linear)
    }

    /// `mel (B, n_mels, T)` to one style vector per item.
    pub fn reference_encode(&self, mel: &Tensor) -> Result<StyleVector> {
        self.reference.forward(mel)
    }

    /// `energy (B, T)` to `(B, hidden, T)`.
    pub fn energy_encode(&self, energy: &Tensor) -> Result<Tensor> {
        self.energy.forward(energy)
    }

    /// `(B, d_ssl, T)` to `(B, d_ling, T)`.
    pub fn linguistic_project(&self, feats: &Tensor) -> Result<Tensor> {
        self.linguistic.forward(feats)
    }

    pub fn fuse_prior(&self, ling: &Tensor, energy: &Tensor, style: &StyleVector) -> Result<GaussianFrames> {
        self.fusion.forward(ling, energy, style)
    }

    /// Prior parameters straight from the raw feature tracks.
    pub fn prior(&self, ssl: &Tensor, energy: &Tensor, style: &StyleVector) -> Result<GaussianFrames> {
        let ling = self.linguistic_project(ssl)?;
        let e = self.energy_encode(energy)?;
        self.fuse_prior(&ling, &e, style)
    }

    pub fn flow_forward(&self, z: &Latent, style: &StyleVector) -> Result<(Latent, Tensor)> {
        self.flow.forward(z, style)
    }

    pub fn flow_inverse(&self, z_prime: &Latent, style: &StyleVector) -> Result<Latent> {
        self.flow.inverse(z_prime, style)
    }

    /// `(B, latent, T)` to `(B, T * hop)`.
    pub fn decode(&self, z: &Latent) -> Result<Tensor> {
        self.decoder.forward(z)
    }
}

/// Generator and discriminator with their separate parameter stores.
#[derive(Clone)]
pub struct VcModel {
    pub config: ModelConfig,
    pub gen_params: ParamStore,
    pub disc_params: ParamStore,
    pub generator: Generator,
    pub discriminator: Discriminator,
}

impl VcModel {
    pub fn new(cfg: &ModelConfig, dtype: DType, device: &Device) -> Result<Self> {
        cfg.validate()?;
        let gen_params = ParamStore::new(cfg.seed, dtype, device);
        let disc_params = ParamStore::new(cfg.seed.wrapping_add(0x5eed), dtype, device);
        let generator = Generator::new(cfg, &gen_params.root())?;
        let discriminator = Discriminator::new(cfg, &disc_params.root())?;
        Ok(Self {
            config: cfg.clone(),
            gen_params,
            disc_params,
            generator,
            discriminator,
        })
    }

    pub fn device(&self) -> &Device {
        self.gen_params.device()
    }

    pub fn dtype(&self) -> DType {
        self.gen_params.dtype()
    }
}
