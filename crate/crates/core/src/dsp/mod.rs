//! Signal-processing kernels: WAV I/O, resampling, STFT, mel projection and
//! frame energy. Everything here is a pure function of its inputs.

mod audio;
mod energy;
mod mel;
mod resample;
mod stft;

pub use audio::{load_wav, write_wav, AudioClip, Category, SAMPLE_RATE};
pub use energy::{frame_energy, normalize_energy, EnergyContour, ENERGY_EPSILON};
pub use mel::{
    hz_to_mel, mel_filterbank, mel_spectrogram, mel_to_hz, MelFilterbank, MelNorm,
    MelSpectrogram, MEL_EPSILON,
};
pub use resample::{resample, resample_by_ratio};
pub use stft::{reflect_index, stft, LinearSpectrogram, StftConfig, WindowKind};

pub(crate) use stft::magnitude_frames;
