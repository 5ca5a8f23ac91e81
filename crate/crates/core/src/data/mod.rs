//! Datasets, paired augmentation, subsampling and label colourisation.

pub mod augment;
pub mod image_io;
pub mod palette;
pub mod subsample;
pub mod synthetic;
pub mod voc;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::LabelMap;
use crate::tensor::{Shape, Tensor};

pub use augment::{augment_pair, augment_with, AugmentDraws, AugmentSpec};
pub use image_io::RgbImage;
pub use palette::{colorize_labels, voc_palette};
pub use subsample::{dominant_class, stratified_subsample};
pub use synthetic::{generate_synthetic_sample, SyntheticSceneSpec};
pub use voc::{load_voc_pair, VocDataset};

/// An image of shape `(1, 3, H, W)` and its label map.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePair {
    pub image: Tensor,
    pub label: LabelMap,
}

impl SamplePair {
    pub fn new(image: Tensor, label: LabelMap) -> Result<Self> {
        let s = image.shape();
        if s.n() != 1 || s.c() != 3 || s.h() != label.height() || s.w() != label.width() {
            return Err(Error::ShapeMismatch {
                op: "sample pair",
                left: s.to_vec(),
                right: vec![label.height(), label.width()],
            });
        }
        Ok(SamplePair { image, label })
    }

    pub fn height(&self) -> usize {
        self.label.height()
    }

    pub fn width(&self) -> usize {
        self.label.width()
    }

    pub fn from_rgb(img: &RgbImage, label: LabelMap) -> Result<Self> {
        let (h, w) = (img.height, img.width);
        let mut data = vec![0.0; 3 * h * w];
        for (i, px) in img.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * h * w + i] = px[c] as f64 / 255.0;
            }
        }
        SamplePair::new(Tensor::from_vec(Shape::new(1, 3, h, w), data)?, label)
    }

    /// Quantises the (un-normalised) image back to 8 bits.
    pub fn to_rgb(&self) -> RgbImage {
        let (h, w) = (self.height(), self.width());
        let mut img = RgbImage::new(w, h);
        let d = self.image.data();
        for i in 0..h * w {
            for c in 0..3 {
                img.data[i * 3 + c] = (d[c * h * w + i].clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
        img
    }
}

/// Sidecar written next to a generated synthetic dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticManifest {
    pub spec: SyntheticSceneSpec,
    pub count: u64,
    pub seed: u64,
}

pub const SYNTHETIC_MANIFEST: &str = "manifest.json";

/// Writes scenes `0..count` as `images/NNNNN.ppm` and `labels/NNNNN.pgm`.
pub fn write_synthetic_dataset(dir: &Path, spec: &SyntheticSceneSpec, count: u64) -> Result<()> {
    spec.validate()?;
    for sub in ["images", "labels"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    for i in 0..count {
        let pair = generate_synthetic_sample(spec, i)?;
        image_io::write_ppm(&dir.join(format!("images/{i:05}.ppm")), &pair.to_rgb())?;
        image_io::write_pgm(&dir.join(format!("labels/{i:05}.pgm")), &pair.label)?;
    }
    let manifest = SyntheticManifest {
        spec: spec.clone(),
        count,
        seed: spec.seed,
    };
    let path = dir.join(SYNTHETIC_MANIFEST);
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

pub fn read_synthetic_manifest(dir: &Path) -> Result<SyntheticManifest> {
    let path = dir.join(SYNTHETIC_MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))
}

/// Loads a directory written by [`write_synthetic_dataset`].
pub fn read_synthetic_dataset(dir: &Path) -> Result<(SyntheticManifest, Vec<SamplePair>)> {
    let manifest = read_synthetic_manifest(dir)?;
    let classes = manifest.spec.num_classes();
    let mut pairs = Vec::with_capacity(manifest.count as usize);
    for i in 0..manifest.count {
        let img_path = dir.join(format!("images/{i:05}.ppm"));
        let lab_path = dir.join(format!("labels/{i:05}.pgm"));
        let img = image_io::read_ppm(&img_path)?;
        let label = image_io::read_pgm(&lab_path)?;
        label
            .validate(classes)
            .map_err(|e| Error::format(&lab_path, e.to_string()))?;
        if (img.height, img.width) != (label.height(), label.width()) {
            return Err(Error::format(&lab_path, "label size differs from image"));
        }
        pairs.push(SamplePair::from_rgb(&img, label)?);
    }
    Ok((manifest, pairs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_shapes_must_agree() {
        let img = Tensor::zeros(Shape::new(1, 3, 4, 5));
        assert!(SamplePair::new(img.clone(), LabelMap::filled(4, 5, 0)).is_ok());
        assert!(SamplePair::new(img, LabelMap::filled(5, 4, 0)).is_err());
    }

    #[test]
    fn synthetic_directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSceneSpec {
            height: 16,
            width: 16,
            ..Default::default()
        };
        write_synthetic_dataset(dir.path(), &spec, 3).unwrap();
        let (m, pairs) = read_synthetic_dataset(dir.path()).unwrap();
        assert_eq!(m.count, 3);
        for (i, p) in pairs.iter().enumerate() {
            let orig = generate_synthetic_sample(&spec, i as u64).unwrap();
            assert_eq!(p.label, orig.label);
            for (a, b) in p.image.data().iter().zip(orig.image.data()) {
                assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
            }
        }
    }
}
