//! Pixel-level road segmentation scores.

use std::iter::Sum;
use std::ops::{Add, AddAssign};

use image::GrayImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Confusion counts with road as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

impl Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

impl AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl Sum for ConfusionCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), Add::add)
    }
}

/// Counts over two `{0,1}` masks of equal length.
pub fn confusion(pred: &[u8], gt: &[u8]) -> Result<ConfusionCounts> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!("prediction has {} pixels, truth {}", pred.len(), gt.len())));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.iter().zip(gt) {
        match (p, g) {
            (1, 1) => c.tp += 1,
            (1, 0) => c.fp += 1,
            (0, 1) => c.fn_ += 1,
            (0, 0) => c.tn += 1,
            _ => return Err(Error::invalid(format!("mask values must be 0 or 1, found {p}/{g}"))),
        }
    }
    Ok(c)
}

pub fn confusion_images(pred: &GrayImage, gt: &GrayImage) -> Result<ConfusionCounts> {
    if pred.dimensions() != gt.dimensions() {
        return Err(Error::Shape(format!(
            "prediction {:?} vs truth {:?}",
            pred.dimensions(),
            gt.dimensions()
        )));
    }
    confusion(pred.as_raw(), gt.as_raw())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub iou: f64,
    pub miou: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Road IoU, two-class mean IoU, precision, recall and F1.
///
/// With no road in either mask every road score is 1; with no background
/// in either mask the background IoU is 1. Any other zero denominator
/// gives 0.
pub fn scores(c: &ConfusionCounts) -> Scores {
    let road_absent = c.tp + c.fp + c.fn_ == 0;
    let bg_absent = c.tn + c.fp + c.fn_ == 0;
    let (iou, precision, recall, f1) = if road_absent {
        (1.0, 1.0, 1.0, 1.0)
    } else {
        (
            ratio(c.tp, c.tp + c.fp + c.fn_),
            ratio(c.tp, c.tp + c.fp),
            ratio(c.tp, c.tp + c.fn_),
            ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
        )
    };
    let bg_iou = if bg_absent {
        1.0
    } else {
        ratio(c.tn, c.tn + c.fp + c.fn_)
    };
    Scores {
        iou,
        miou: 0.5 * (iou + bg_iou),
        precision,
        recall,
        f1,
    }
}

/// JSON-facing metrics report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub iou: f64,
    pub miou: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub n_pixels: u64,
}

impl From<&ConfusionCounts> for MetricsReport {
    fn from(c: &ConfusionCounts) -> Self {
        let s = scores(c);
        Self {
            iou: s.iou,
            miou: s.miou,
            precision: s.precision,
            recall: s.recall,
            f1: s.f1,
            n_pixels: c.total(),
        }
    }
}
