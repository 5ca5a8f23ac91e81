//! PASCAL VOC 2012 segmentation layout:
//! `JPEGImages/<id>.jpg`, `SegmentationClass/<id>.png`,
//! `ImageSets/Segmentation/<split>.txt`.

use std::fs;
use std::path::{Path, PathBuf};

use super::image_io::{read_labels, read_rgb};
use super::SamplePair;
use crate::error::{Error, Result};
use crate::metrics::IGNORE_LABEL;

pub const VOC_CLASSES: usize = 21;

pub fn load_voc_pair(image_path: &Path, label_path: &Path) -> Result<SamplePair> {
    let img = read_rgb(image_path)?;
    let label = read_labels(label_path)?;
    if let Some(i) = label
        .data()
        .iter()
        .position(|&v| v != IGNORE_LABEL && v as usize >= VOC_CLASSES)
    {
        let (y, x) = (i / label.width(), i % label.width());
        return Err(Error::format(
            label_path,
            format!(
                "label {} at pixel (row {y}, col {x}) is outside [0, {VOC_CLASSES}) and not {IGNORE_LABEL}",
                label.data()[i]
            ),
        ));
    }
    if (img.height, img.width) != (label.height(), label.width()) {
        return Err(Error::format(
            label_path,
            format!(
                "label is {}x{} but image {} is {}x{}",
                label.height(),
                label.width(),
                image_path.display(),
                img.height,
                img.width
            ),
        ));
    }
    SamplePair::from_rgb(&img, label)
}

/// Lazily loaded list of image ids for one split.
#[derive(Clone, Debug)]
pub struct VocDataset {
    root: PathBuf,
    ids: Vec<String>,
}

impl VocDataset {
    pub fn open(root: &Path, split: &str) -> Result<Self> {
        let list = root
            .join("ImageSets/Segmentation")
            .join(format!("{split}.txt"));
        let text = fs::read_to_string(&list).map_err(|e| Error::io(&list, e))?;
        let ids: Vec<String> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect();
        if ids.is_empty() {
            return Err(Error::format(&list, "split lists no images"));
        }
        Ok(VocDataset {
            root: root.to_path_buf(),
            ids,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn paths(&self, i: usize) -> (PathBuf, PathBuf) {
        let id = &self.ids[i];
        (
            self.root.join("JPEGImages").join(format!("{id}.jpg")),
            self.root
                .join("SegmentationClass")
                .join(format!("{id}.png")),
        )
    }

    pub fn load(&self, i: usize) -> Result<SamplePair> {
        let (img, lab) = self.paths(i);
        load_voc_pair(&img, &lab)
    }
}
