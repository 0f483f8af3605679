//! Named-tensor files with a string metadata header (safetensors layout).

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{Device, Tensor};
use safetensors::SafeTensors;

use crate::error::{Error, Result};

/// Writes to a sibling temporary file and renames it into place, so readers
/// never observe a partial file.
pub fn write_atomic(path: &Path, tensors: &BTreeMap<String, Tensor>, meta: HashMap<String, String>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let contiguous = tensors
        .iter()
        .map(|(k, t)| Ok((k.clone(), t.contiguous()?)))
        .collect::<Result<Vec<_>>>()?;
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    safetensors::serialize_to_file(contiguous, Some(meta), &tmp)
        .map_err(|e| Error::State(format!("writing {}: {e}", tmp.display())))?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Header metadata only; does not materialize any tensor.
pub fn read_metadata(path: &Path) -> Result<HashMap<String, String>> {
    let bytes = std::fs::read(path)?;
    let (_, meta) = SafeTensors::read_metadata(&bytes)
        .map_err(|e| Error::State(format!("{} is not a tensor container: {e}", path.display())))?;
    Ok(meta.metadata().clone().unwrap_or_default())
}

pub fn read(path: &Path, device: &Device) -> Result<(BTreeMap<String, Tensor>, HashMap<String, String>)> {
    let bytes = std::fs::read(path)?;
    let (_, meta) = SafeTensors::read_metadata(&bytes)
        .map_err(|e| Error::State(format!("{} is not a tensor container: {e}", path.display())))?;
    let tensors = candle_core::safetensors::load_buffer(&bytes, device)?;
    Ok((tensors.into_iter().collect(), meta.metadata().clone().unwrap_or_default()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::DType;

    #[test]
    fn round_trip_with_metadata() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/x.safetensors");
        let mut t = BTreeMap::new();
        t.insert("a".to_string(), Tensor::arange(0f32, 6.0, &Device::Cpu).unwrap().reshape((2, 3)).unwrap().t().unwrap());
        t.insert("b".to_string(), Tensor::zeros(1, DType::F64, &Device::Cpu).unwrap());
        let meta = HashMap::from([("k".to_string(), "v".to_string())]);
        write_atomic(&path, &t, meta.clone()).unwrap();
        let (back, m) = read(&path, &Device::Cpu).unwrap();
        assert_eq!(m, meta);
        assert_eq!(read_metadata(&path).unwrap(), meta);
        assert_eq!(back["a"].to_vec2::<f32>().unwrap(), vec![vec![0.0, 3.0], vec![1.0, 4.0], vec![2.0, 5.0]]);
        assert_eq!(back["b"].dtype(), DType::F64);
        assert_eq!(std::fs::read_dir(dir.path().join("sub")).unwrap().count(), 1);
    }

    #[test]
    fn garbage_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad");
        std::fs::write(&path, b"not a container").unwrap();
        assert!(matches!(read(&path, &Device::Cpu), Err(Error::State(_))));
    }
}
