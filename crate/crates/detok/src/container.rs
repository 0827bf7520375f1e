//! Reading and writing the tensor-container file format (named tensors with a
//! JSON header mapping name -> dtype/shape/offset, little-endian buffers).

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use safetensors::tensor::TensorView;
use safetensors::{Dtype, SafeTensors};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// A tensor promoted to 64-bit floats, as used by every analysis.
#[derive(Debug, Clone)]
pub struct Tensor64 {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor64 {
    pub fn into_array2(self, name: &str) -> Result<Array2<f64>> {
        if self.shape.len() != 2 {
            return Err(Error::Dimension(format!(
                "tensor {name:?} has shape {:?}, expected a matrix",
                self.shape
            )));
        }
        Array2::from_shape_vec((self.shape[0], self.shape[1]), self.data)
            .map_err(|e| Error::Dimension(format!("tensor {name:?}: {e}")))
    }

    pub fn into_array1(self, name: &str) -> Result<Array1<f64>> {
        if self.shape.len() != 1 {
            return Err(Error::Dimension(format!(
                "tensor {name:?} has shape {:?}, expected a vector",
                self.shape
            )));
        }
        Ok(Array1::from_vec(self.data))
    }

    /// Reject NaN or infinite entries.
    pub fn ensure_finite(&self, name: &str) -> Result<()> {
        if let Some(pos) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Corrupt(format!(
                "tensor {name:?} contains a non-finite value at flat index {pos}"
            )));
        }
        Ok(())
    }
}

fn f16_bits_to_f64(bits: u16) -> f64 {
    let sign = ((bits >> 15) & 1) as u32;
    let exp = ((bits >> 10) & 0x1f) as u32;
    let frac = (bits & 0x3ff) as u32;
    let f32_bits = if exp == 0 {
        if frac == 0 {
            sign << 31
        } else {
            // Subnormal: renormalize.
            let mut e = 127 - 15 + 1;
            let mut f = frac;
            while f & 0x400 == 0 {
                f <<= 1;
                e -= 1;
            }
            (sign << 31) | ((e as u32) << 23) | ((f & 0x3ff) << 13)
        }
    } else if exp == 0x1f {
        (sign << 31) | (0xff << 23) | (frac << 13)
    } else {
        (sign << 31) | ((exp + 127 - 15) << 23) | (frac << 13)
    };
    f32::from_bits(f32_bits) as f64
}

fn bf16_bits_to_f64(bits: u16) -> f64 {
    f32::from_bits((bits as u32) << 16) as f64
}

fn view_to_f64(name: &str, view: &TensorView) -> Result<Tensor64> {
    let bytes = view.data();
    let data = match view.dtype() {
        Dtype::F64 => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
        Dtype::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        Dtype::F16 => bytes
            .chunks_exact(2)
            .map(|c| f16_bits_to_f64(u16::from_le_bytes(c.try_into().unwrap())))
            .collect(),
        Dtype::BF16 => bytes
            .chunks_exact(2)
            .map(|c| bf16_bits_to_f64(u16::from_le_bytes(c.try_into().unwrap())))
            .collect(),
        other => {
            return Err(Error::Container(format!(
                "tensor {name:?} has unsupported dtype {other:?}"
            )))
        }
    };
    Ok(Tensor64 {
        shape: view.shape().to_vec(),
        data,
    })
}

/// Read the named tensors from a container file, promoted to f64.
///
/// With `names = None` every tensor in the file is returned. A requested name
/// that is absent yields [`Error::TensorNotFound`].
pub fn read_tensors(
    path: &Path,
    names: Option<&[&str]>,
) -> Result<HashMap<String, Tensor64>> {
    let buffer = fs::read(path).map_err(|e| Error::io(path, e))?;
    let st = SafeTensors::deserialize(&buffer)
        .map_err(|e| Error::Container(format!("{}: {e}", path.display())))?;

    let mut out = HashMap::new();
    match names {
        Some(names) => {
            for &name in names {
                let view = st.tensor(name).map_err(|_| Error::TensorNotFound {
                    name: name.to_string(),
                })?;
                out.insert(name.to_string(), view_to_f64(name, &view)?);
            }
        }
        None => {
            for (name, view) in st.tensors() {
                let t = view_to_f64(&name, &view)?;
                out.insert(name, t);
            }
        }
    }
    Ok(out)
}

/// Read the free-form string metadata stored in a container file header.
pub fn read_metadata(path: &Path) -> Result<HashMap<String, String>> {
    let buffer = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (_, meta) = SafeTensors::read_metadata(&buffer)
        .map_err(|e| Error::Container(format!("{}: {e}", path.display())))?;
    Ok(meta.metadata().clone().unwrap_or_default())
}

/// On-disk float width for [`write_tensors`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StorageDtype {
    F32,
    F64,
}

/// Write named tensors to a container file atomically (temp file + rename).
pub fn write_tensors(
    path: &Path,
    tensors: &[(&str, &[usize], &[f64])],
    dtype: StorageDtype,
    metadata: Option<HashMap<String, String>>,
) -> Result<()> {
    let mut buffers: Vec<Vec<u8>> = Vec::with_capacity(tensors.len());
    for &(name, shape, data) in tensors {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Dimension(format!(
                "tensor {name:?}: shape {shape:?} does not match {} values",
                data.len()
            )));
        }
        let bytes = match dtype {
            StorageDtype::F32 => data
                .iter()
                .flat_map(|&v| (v as f32).to_le_bytes())
                .collect(),
            StorageDtype::F64 => data.iter().flat_map(|&v| v.to_le_bytes()).collect(),
        };
        buffers.push(bytes);
    }
    let st_dtype = match dtype {
        StorageDtype::F32 => Dtype::F32,
        StorageDtype::F64 => Dtype::F64,
    };
    let views: Vec<(&str, TensorView)> = tensors
        .iter()
        .zip(&buffers)
        .map(|(&(name, shape, _), bytes)| {
            TensorView::new(st_dtype, shape.to_vec(), bytes)
                .map(|v| (name, v))
                .map_err(|e| Error::Container(format!("tensor {name:?}: {e}")))
        })
        .collect::<Result<_>>()?;

    let tmp = path.with_extension("tmp");
    safetensors::serialize_to_file(views, &metadata, &tmp)
        .map_err(|e| Error::Container(format!("{}: {e}", tmp.display())))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Hex SHA-256 of a file's contents, used to key derived-tensor caches.
pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_f64() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.safetensors");
        let data = vec![1.0, -2.5, 3.25, 0.0, 1e-30, 4.0];
        write_tensors(
            &path,
            &[("m", &[2, 3], &data)],
            StorageDtype::F64,
            None,
        )
        .unwrap();
        let got = read_tensors(&path, None).unwrap();
        assert_eq!(got["m"].shape, vec![2, 3]);
        assert_eq!(got["m"].data, data);
    }

    #[test]
    fn f32_storage_promotes_to_f64() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.safetensors");
        write_tensors(
            &path,
            &[("v", &[2], &[0.5, -1.25])],
            StorageDtype::F32,
            None,
        )
        .unwrap();
        let got = read_tensors(&path, Some(&["v"])).unwrap();
        assert_eq!(got["v"].data, vec![0.5, -1.25]);
    }

    #[test]
    fn missing_tensor_is_named_in_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.safetensors");
        write_tensors(&path, &[("a", &[1], &[1.0])], StorageDtype::F32, None).unwrap();
        let err = read_tensors(&path, Some(&["wte.weight"])).unwrap_err();
        match err {
            Error::TensorNotFound { name } => assert_eq!(name, "wte.weight"),
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn metadata_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.safetensors");
        let mut meta = HashMap::new();
        meta.insert("source_hash".to_string(), "abc123".to_string());
        write_tensors(
            &path,
            &[("a", &[1], &[1.0])],
            StorageDtype::F64,
            Some(meta),
        )
        .unwrap();
        let got = read_metadata(&path).unwrap();
        assert_eq!(got["source_hash"], "abc123");
    }

    #[test]
    fn f16_conversion_matches_known_values() {
        // 0x3c00 = 1.0, 0xc000 = -2.0, 0x7bff = 65504 (f16 max), 0x0001 = 2^-24
        assert_eq!(f16_bits_to_f64(0x3c00), 1.0);
        assert_eq!(f16_bits_to_f64(0xc000), -2.0);
        assert_eq!(f16_bits_to_f64(0x7bff), 65504.0);
        assert_eq!(f16_bits_to_f64(0x0001), 2f64.powi(-24));
        assert_eq!(bf16_bits_to_f64(0x3f80), 1.0);
    }
}
