//! On-disk feature cache: one tensor container per clip holding the aligned
//! tracks, with the feature hash and frame count in its header.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use candle_core::{Device, Tensor};
use ndarray::Array2;
use sha2::{Digest, Sha256};

use crate::container;
use crate::error::{Error, Result};
use crate::features::ClipFeatures;

const TRACKS: [&str; 5] = ["linear", "mel", "energy", "ling", "waveform"];

pub struct FeatureCache {
    root: PathBuf,
    hash: String,
}

fn grid(a: &Array2<f32>) -> Result<Tensor> {
    Ok(Tensor::from_vec(a.iter().copied().collect::<Vec<_>>(), a.dim(), &Device::Cpu)?)
}

fn to_grid(t: &Tensor) -> Result<Array2<f32>> {
    let (r, c) = t.dims2()?;
    Array2::from_shape_vec((r, c), t.flatten_all()?.to_vec1()?).map_err(|e| Error::Data(e.to_string()))
}

impl FeatureCache {
    pub fn new(root: impl Into<PathBuf>, feature_hash: impl Into<String>) -> Self {
        Self {
            root: root.into(),
            hash: feature_hash.into(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// File for a clip id: readable stem plus a digest of the full id.
    pub fn entry_path(&self, id: &str) -> PathBuf {
        let stem: String = Path::new(id)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
            .take(48)
            .collect();
        let digest = hex::encode(&Sha256::digest(id.as_bytes())[..6]);
        self.root.join(format!("{stem}-{digest}.safetensors"))
    }

    /// True when the entry exists and was written under the current hash.
    pub fn is_fresh(&self, id: &str) -> bool {
        container::read_metadata(&self.entry_path(id))
            .map(|m| m.get("feature_hash") == Some(&self.hash) && m.get("id").map(String::as_str) == Some(id))
            .unwrap_or(false)
    }

    pub fn store(&self, f: &ClipFeatures, hop: usize) -> Result<PathBuf> {
        f.check(hop)?;
        let mut tensors = BTreeMap::new();
        tensors.insert("linear".to_string(), grid(&f.linear)?);
        tensors.insert("mel".to_string(), grid(&f.mel)?);
        tensors.insert("ling".to_string(), grid(&f.ling)?);
        tensors.insert("energy".to_string(), Tensor::new(f.energy.as_slice(), &Device::Cpu)?);
        tensors.insert("waveform".to_string(), Tensor::new(f.waveform.as_slice(), &Device::Cpu)?);
        let meta = HashMap::from([
            ("id".to_string(), f.id.clone()),
            ("feature_hash".to_string(), self.hash.clone()),
            ("n_frames".to_string(), f.n_frames().to_string()),
            ("hop".to_string(), hop.to_string()),
        ]);
        let path = self.entry_path(&f.id);
        container::write_atomic(&path, &tensors, meta)?;
        Ok(path)
    }

    pub fn load_file(&self, path: &Path) -> Result<ClipFeatures> {
        let (t, meta) = container::read(path, &Device::Cpu)?;
        if meta.get("feature_hash") != Some(&self.hash) {
            return Err(Error::Data(format!("{} was built under a different feature config", path.display())));
        }
        for name in TRACKS {
            if !t.contains_key(name) {
                return Err(Error::Data(format!("{} lacks the {name} track", path.display())));
            }
        }
        let hop: usize = meta
            .get("hop")
            .and_then(|h| h.parse().ok())
            .ok_or_else(|| Error::Data(format!("{} lacks a hop header", path.display())))?;
        let f = ClipFeatures {
            id: meta.get("id").cloned().unwrap_or_default(),
            linear: to_grid(&t["linear"])?,
            mel: to_grid(&t["mel"])?,
            ling: to_grid(&t["ling"])?,
            energy: t["energy"].to_vec1()?,
            waveform: t["waveform"].to_vec1()?,
        };
        f.check(hop)?;
        Ok(f)
    }

    pub fn load(&self, id: &str) -> Result<ClipFeatures> {
        self.load_file(&self.entry_path(id))
    }

    /// Every entry written under the current hash, sorted by path; stale
    /// entries are skipped with a warning.
    pub fn load_all(&self) -> Result<Vec<ClipFeatures>> {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(&self.root)
            .map_err(|e| Error::Data(format!("cache {}: {e}", self.root.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "safetensors"))
            .collect();
        paths.sort();
        let mut out = Vec::with_capacity(paths.len());
        for p in paths {
            match self.load_file(&p) {
                Ok(f) => out.push(f),
                Err(e) => log::warn!("skipping cache entry: {e}"),
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feats(id: &str, t: usize) -> ClipFeatures {
        ClipFeatures {
            id: id.into(),
            linear: Array2::from_shape_fn((3, t), |(i, j)| (i * 10 + j) as f32),
            mel: Array2::ones((2, t)),
            energy: (0..t).map(|i| i as f32).collect(),
            ling: Array2::zeros((4, t)),
            waveform: vec![0.5; t * 2],
        }
    }

    #[test]
    fn store_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cache = FeatureCache::new(dir.path(), "h1");
        let f = feats("data/a clip.wav", 5);
        assert!(!cache.is_fresh(&f.id));
        cache.store(&f, 2).unwrap();
        assert!(cache.is_fresh(&f.id));
        assert_eq!(cache.load(&f.id).unwrap(), f);
        assert_eq!(cache.load_all().unwrap(), vec![f.clone()]);

        let other = FeatureCache::new(dir.path(), "h2");
        assert!(!other.is_fresh(&f.id));
        assert!(other.load_all().unwrap().is_empty());
    }

    #[test]
    fn distinct_ids_distinct_files() {
        let cache = FeatureCache::new("/tmp", "h");
        assert_ne!(cache.entry_path("a/x.wav"), cache.entry_path("b/x.wav"));
    }
}
