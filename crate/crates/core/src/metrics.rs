//! Per-image mean intersection-over-union and the summary statistics reported
//! per experiment.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Label value excluded from losses and metrics.
pub const IGNORE_LABEL: u8 = 255;

/// Per-pixel class ids for one image, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LabelMap {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height * width != data.len() {
            return Err(Error::config(format!(
                "label map {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(LabelMap {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: u8) -> Self {
        LabelMap {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    /// Checks every non-ignored value is below `classes`.
    pub fn validate(&self, classes: usize) -> Result<()> {
        match self
            .data
            .iter()
            .position(|&v| v != IGNORE_LABEL && v as usize >= classes)
        {
            Some(i) => Err(Error::InvalidLabel {
                label: self.data[i],
                index: i,
                classes,
            }),
            None => Ok(()),
        }
    }

    /// Pixel counts per class id (ignored pixels excluded).
    pub fn histogram(&self, classes: usize) -> Vec<usize> {
        let mut h = vec![0; classes];
        for &v in &self.data {
            if (v as usize) < classes {
                h[v as usize] += 1;
            }
        }
        h
    }
}

/// K x K pixel counts, rows = ground truth, columns = prediction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionCounts {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionCounts {
    pub fn new(classes: usize) -> Self {
        ConfusionCounts {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn add(&mut self, other: &ConfusionCounts) {
        self.counts
            .iter_mut()
            .zip(&other.counts)
            .for_each(|(a, b)| *a += b);
    }

    /// IoU of one class, or `None` when it is absent from both maps.
    pub fn class_iou(&self, k: usize) -> Option<f64> {
        let tp = self.get(k, k);
        let row: u64 = (0..self.classes).map(|p| self.get(k, p)).sum();
        let col: u64 = (0..self.classes).map(|t| self.get(t, k)).sum();
        let union = row + col - tp;
        (union > 0).then(|| tp as f64 / union as f64)
    }
}

pub fn confusion_counts(
    pred: &LabelMap,
    truth: &LabelMap,
    classes: usize,
) -> Result<ConfusionCounts> {
    if pred.height != truth.height || pred.width != truth.width {
        return Err(Error::Evaluation(format!(
            "prediction is {}x{} but ground truth is {}x{}",
            pred.height, pred.width, truth.height, truth.width
        )));
    }
    let mut cm = ConfusionCounts::new(classes);
    for (&p, &t) in pred.data.iter().zip(&truth.data) {
        if p == IGNORE_LABEL || t == IGNORE_LABEL {
            continue;
        }
        if p as usize >= classes || t as usize >= classes {
            return Err(Error::Evaluation(format!(
                "label {} outside [0, {classes})",
                p.max(t)
            )));
        }
        cm.counts[t as usize * classes + p as usize] += 1;
    }
    Ok(cm)
}

/// Mean IoU over classes present in either the truth or the prediction.
pub fn image_miou(counts: &ConfusionCounts) -> Result<f64> {
    if counts.total() == 0 {
        return Err(Error::Evaluation(
            "mIoU of an image with no counted pixels".into(),
        ));
    }
    let ious: Vec<f64> = (0..counts.classes)
        .filter_map(|k| counts.class_iou(k))
        .collect();
    Ok(ious.iter().sum::<f64>() / ious.len() as f64)
}

pub fn miou(pred: &LabelMap, truth: &LabelMap, classes: usize) -> Result<f64> {
    image_miou(&confusion_counts(pred, truth, classes)?)
}

/// Distribution of per-image mIoU values plus the mean loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiouSummary {
    pub mean: f64,
    pub std: f64,
    pub worst: f64,
    pub median: f64,
    pub best: f64,
    pub loss: f64,
}

pub fn dataset_summary(per_image_mious: &[f64], per_image_losses: &[f64]) -> Result<MiouSummary> {
    if per_image_mious.is_empty() || per_image_mious.len() != per_image_losses.len() {
        return Err(Error::Evaluation(format!(
            "summary needs equal nonempty sequences, got {} mIoU and {} loss values",
            per_image_mious.len(),
            per_image_losses.len()
        )));
    }
    let n = per_image_mious.len() as f64;
    let mean = per_image_mious.iter().sum::<f64>() / n;
    let var = per_image_mious
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / n;
    let mut sorted = per_image_mious.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(MiouSummary {
        mean,
        std: var.sqrt(),
        worst: sorted[0],
        median: sorted[(sorted.len() - 1) / 2],
        best: sorted[sorted.len() - 1],
        loss: per_image_losses.iter().sum::<f64>() / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(h: usize, w: usize, v: &[u8]) -> LabelMap {
        LabelMap::new(h, w, v.to_vec()).unwrap()
    }

    #[test]
    fn hand_counted_two_by_two() {
        let truth = map(2, 2, &[0, 0, 1, 1]);
        let pred = map(2, 2, &[0, 0, 0, 0]);
        let cm = confusion_counts(&pred, &truth, 2).unwrap();
        assert_eq!(
            (cm.get(0, 0), cm.get(0, 1), cm.get(1, 0), cm.get(1, 1)),
            (2, 0, 2, 0)
        );
        assert_eq!(image_miou(&cm).unwrap(), 0.25);
    }

    #[test]
    fn identical_maps_are_diagonal() {
        let m = map(2, 3, &[0, 1, 2, 2, 1, 0]);
        let cm = confusion_counts(&m, &m, 3).unwrap();
        for t in 0..3 {
            for p in 0..3 {
                assert_eq!(cm.get(t, p) > 0, t == p);
            }
        }
        assert_eq!(image_miou(&cm).unwrap(), 1.0);
    }

    #[test]
    fn total_miss_is_zero() {
        let truth = LabelMap::filled(3, 3, 0);
        let pred = LabelMap::filled(3, 3, 1);
        assert_eq!(miou(&pred, &truth, 2).unwrap(), 0.0);
    }

    #[test]
    fn ignored_everywhere() {
        let truth = LabelMap::filled(2, 2, IGNORE_LABEL);
        let pred = LabelMap::filled(2, 2, 0);
        let cm = confusion_counts(&pred, &truth, 2).unwrap();
        assert_eq!(cm.total(), 0);
        assert!(image_miou(&cm).is_err());
    }

    #[test]
    fn shape_mismatch() {
        let a = LabelMap::filled(2, 2, 0);
        let b = LabelMap::filled(2, 3, 0);
        assert!(matches!(
            confusion_counts(&a, &b, 2),
            Err(Error::Evaluation(_))
        ));
    }

    #[test]
    fn summary_examples() {
        let s = dataset_summary(&[0.5], &[1.0]).unwrap();
        assert_eq!(
            (s.mean, s.std, s.worst, s.median, s.best),
            (0.5, 0.0, 0.5, 0.5, 0.5)
        );

        let s = dataset_summary(&[0.6, 0.2, 0.4], &[0.0; 3]).unwrap();
        assert!((s.mean - 0.4).abs() < 1e-15);
        assert!((s.std - (0.08f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((s.std - 0.1633).abs() < 1e-4);
        assert_eq!((s.worst, s.median, s.best), (0.2, 0.4, 0.6));

        let s = dataset_summary(&[0.3; 4], &[0.0; 4]).unwrap();
        assert_eq!(s.std, 0.0);
        assert_eq!(s.worst, s.best);

        // lower middle for even lengths
        let s = dataset_summary(&[0.1, 0.4, 0.2, 0.3], &[0.0; 4]).unwrap();
        assert_eq!(s.median, 0.2);
        assert!(dataset_summary(&[], &[]).is_err());
        assert!(dataset_summary(&[0.1], &[]).is_err());
    }

    #[test]
    fn validate_reports_pixel() {
        let m = map(1, 3, &[0, 255, 21]);
        match m.validate(21) {
            Err(Error::InvalidLabel {
                label: 21,
                index: 2,
                ..
            }) => {}
            other => panic!("{other:?}"),
        }
    }
}
