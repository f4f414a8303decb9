//! Volumes, synthetic phantoms, augmentation, container I/O and splits.

mod augment;
mod manifest;
mod npy;
mod phantom;
mod split;

pub use augment::{augment, AugmentParams};
pub use manifest::{read_manifest, write_manifest, ManifestEntry};
pub use npy::{decode_npy, encode_npy, read_npy, write_npy, NpyArray, NpyData};
pub use phantom::{generate_phantom, PhantomParams};
pub use split::make_split;

use crate::{Error, Result, Tensor};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Plane {
    Sagittal,
}

/// One patient's grayscale scan: (s, h, w) intensities in [0, 1], an optional
/// tear label and, for synthetic volumes, a ground-truth lesion mask.
#[derive(Debug, Clone)]
pub struct Volume {
    pub patient_id: String,
    pub plane: Plane,
    pub data: Tensor,
    pub label: Option<u8>,
    pub roi_mask: Option<Vec<u8>>,
}

impl Volume {
    pub fn slices(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn hw(&self) -> (usize, usize) {
        (self.data.shape()[1], self.data.shape()[2])
    }

    /// The model-facing view: (s, 1, h, w).
    pub fn as_batch(&self) -> Tensor {
        let (h, w) = self.hw();
        Tensor::from_vec(&[self.slices(), 1, h, w], self.data.data().to_vec())
            .expect("same element count")
    }

    pub fn slice_tensor(&self, k: usize) -> Tensor {
        let (h, w) = self.hw();
        Tensor::from_vec(&[h, w], self.data.data()[k * h * w..(k + 1) * h * w].to_vec())
            .expect("in range")
    }

    /// Load a volume from an NPY container; intensities are min-max
    /// normalized to [0, 1] per volume.
    pub fn from_npy(path: &Path, label: Option<u8>) -> Result<Self> {
        let arr = read_npy(path)?;
        if arr.shape.len() != 3 {
            return Err(Error::shape(
                "volume",
                format!("expected (s, h, w), got {:?}", arr.shape),
            ));
        }
        let raw: Vec<f32> = match arr.data {
            NpyData::F32(v) => v,
            NpyData::F64(v) => v.into_iter().map(|x| x as f32).collect(),
            NpyData::U8(v) => v.into_iter().map(|x| x as f32).collect(),
        };
        let (lo, hi) = raw.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
        let span = if hi > lo { hi - lo } else { 1.0 };
        let data = Tensor::from_vec(&arr.shape, raw.iter().map(|&v| (v - lo) / span).collect())?;
        let patient_id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "unknown".into());
        Ok(Volume { patient_id, plane: Plane::Sagittal, data, label, roi_mask: None })
    }

    /// Write the volume (and its mask, when present) as NPY containers.
    /// The mask lands next to the volume with a `_mask.npy` suffix.
    pub fn to_npy(&self, path: &Path) -> Result<()> {
        let arr = NpyArray {
            shape: self.data.shape().to_vec(),
            data: NpyData::F32(self.data.data().to_vec()),
        };
        write_npy(path, &arr)?;
        if let Some(mask) = &self.roi_mask {
            let mask_arr =
                NpyArray { shape: self.data.shape().to_vec(), data: NpyData::U8(mask.clone()) };
            write_npy(&mask_sibling(path), &mask_arr)?;
        }
        Ok(())
    }
}

/// `foo.npy` -> `foo_mask.npy`
pub fn mask_sibling(path: &Path) -> std::path::PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}_mask.npy"))
}
