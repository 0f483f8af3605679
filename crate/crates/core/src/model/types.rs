use candle_core::Tensor;

use crate::error::{Error, Result};

/// Diagonal Gaussian per frame, `(B, latent_dim, T)`, stored through log-σ.
#[derive(Debug, Clone)]
pub struct GaussianFrames {
    pub mu: Tensor,
    pub log_sigma: Tensor,
}

impl GaussianFrames {
    pub fn new(mu: Tensor, log_sigma: Tensor) -> Result<Self> {
        if mu.dims() != log_sigma.dims() {
            return Err(Error::dim(format!(
                "mu {:?} and log_sigma {:?} differ in shape",
                mu.dims(),
                log_sigma.dims()
            )));
        }
        Ok(Self { mu, log_sigma })
    }

    /// Builds from an explicit σ, which must be strictly positive.
    pub fn from_sigma(mu: Tensor, sigma: Tensor) -> Result<Self> {
        let min = sigma.flatten_all()?.min(0)?.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
        if !(min > 0.0) {
            return Err(Error::Numeric(format!("sigma must be positive, found {min}")));
        }
        Self::new(mu, sigma.log()?)
    }

    pub fn sigma(&self) -> Result<Tensor> {
        Ok(self.log_sigma.exp()?)
    }

    /// `mu + scale * sigma * noise`.
    pub fn sample(&self, noise: &Tensor, scale: f64) -> Result<Latent> {
        Ok(Latent((&self.mu + (self.sigma()? * noise)?.affine(scale, 0.0)?)?))
    }

    pub fn dims(&self) -> &[usize] {
        self.mu.dims()
    }

    pub fn frames(&self) -> usize {
        self.mu.dims().last().copied().unwrap_or(0)
    }
}

/// Frame-level latent `(B, latent_dim, T)`.
#[derive(Debug, Clone)]
pub struct Latent(pub Tensor);

impl Latent {
    pub fn tensor(&self) -> &Tensor {
        &self.0
    }
}

/// Utterance-level style embedding `(B, style_dim)`.
#[derive(Debug, Clone)]
pub struct StyleVector(pub Tensor);

impl StyleVector {
    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    /// `(B, style_dim, 1)` for broadcasting along time.
    pub fn as_global(&self) -> Result<Tensor> {
        Ok(self.0.unsqueeze(2)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    #[test]
    fn from_sigma_rejects_nonpositive() {
        let mu = Tensor::zeros((1, 2, 2), candle_core::DType::F32, &Device::Cpu).unwrap();
        let s = Tensor::new(&[[[1.0f32, 0.0], [1.0, 1.0]]], &Device::Cpu).unwrap();
        assert!(matches!(GaussianFrames::from_sigma(mu.clone(), s), Err(Error::Numeric(_))));
        let s = Tensor::ones((1, 2, 2), candle_core::DType::F32, &Device::Cpu).unwrap();
        assert!(GaussianFrames::from_sigma(mu, s).is_ok());
    }
}
