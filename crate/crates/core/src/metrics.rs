//! Dataset-level mIoU and F-score over class-indexed label maps.

use crate::data::LabelMap;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Precision weight of the F-measure.
pub const F_BETA_SQ: f64 = 0.3;

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub miou: f64,
    pub fscore: f64,
    /// `(class, IoU)` for every class with a nonzero union.
    pub per_class_iou: Vec<(u16, f64)>,
}

/// Mergeable pixel counts.
///
/// Binary mode collapses every nonzero label to foreground and scores only the
/// foreground class. Semantic mode scores every class, background included.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MetricAccumulator {
    n_class: usize,
    semantic: bool,
    intersection: Vec<u64>,
    union: Vec<u64>,
    tp: u64,
    fp: u64,
    fn_: u64,
}

impl MetricAccumulator {
    pub fn binary() -> Self {
        Self::with_classes(2, false)
    }

    pub fn semantic(n_class: usize) -> Self {
        Self::with_classes(n_class, true)
    }

    fn with_classes(n_class: usize, semantic: bool) -> Self {
        MetricAccumulator {
            n_class,
            semantic,
            intersection: vec![0; n_class],
            union: vec![0; n_class],
            tp: 0,
            fp: 0,
            fn_: 0,
        }
    }

    pub fn update(&mut self, pred: &LabelMap, gt: &LabelMap) -> Result<()> {
        if (pred.frames, pred.height, pred.width) != (gt.frames, gt.height, gt.width) {
            return Err(Error::dim(format!(
                "prediction [{}, {}, {}] and labels [{}, {}, {}] differ in extent",
                pred.frames, pred.height, pred.width, gt.frames, gt.height, gt.width
            )));
        }
        for (&p, &g) in pred.data.iter().zip(&gt.data) {
            let (p, g) = if self.semantic {
                (p as usize, g as usize)
            } else {
                (usize::from(p != 0), usize::from(g != 0))
            };
            if p >= self.n_class || g >= self.n_class {
                return Err(Error::dim(format!(
                    "label {} outside {} classes",
                    p.max(g),
                    self.n_class
                )));
            }
            if p == g {
                self.intersection[p] += 1;
                self.union[p] += 1;
            } else {
                self.union[p] += 1;
                self.union[g] += 1;
            }
            match (p != 0, g != 0) {
                (true, true) if p == g => self.tp += 1,
                (true, true) => {
                    self.fp += 1;
                    self.fn_ += 1;
                }
                (true, false) => self.fp += 1,
                (false, true) => self.fn_ += 1,
                (false, false) => {}
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &MetricAccumulator) {
        assert_eq!(
            (self.n_class, self.semantic),
            (other.n_class, other.semantic),
            "merging incompatible accumulators"
        );
        for (a, b) in self.intersection.iter_mut().zip(&other.intersection) {
            *a += b;
        }
        for (a, b) in self.union.iter_mut().zip(&other.union) {
            *a += b;
        }
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    /// mIoU averages over classes with a nonzero union; with none (prediction
    /// and labels both empty) it is 1. F uses β² = 0.3 and is 0 when undefined.
    pub fn report(&self) -> MetricReport {
        let first = usize::from(!self.semantic);
        let per_class_iou: Vec<(u16, f64)> = (first..self.n_class)
            .filter(|&c| self.union[c] > 0)
            .map(|c| (c as u16, self.intersection[c] as f64 / self.union[c] as f64))
            .collect();
        let miou = if per_class_iou.is_empty() {
            1.0
        } else {
            per_class_iou.iter().map(|(_, v)| v).sum::<f64>() / per_class_iou.len() as f64
        };
        MetricReport {
            miou,
            fscore: f_beta(self.tp, self.fp, self.fn_),
            per_class_iou,
        }
    }
}

fn f_beta(tp: u64, fp: u64, fn_: u64) -> f64 {
    let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    f_beta_from(precision, ratio(tp, tp + fn_))
}

/// F-measure from precision and recall directly.
pub fn f_beta_from(precision: f64, recall: f64) -> f64 {
    let den = F_BETA_SQ * precision + recall;
    if den == 0.0 {
        0.0
    } else {
        (1.0 + F_BETA_SQ) * precision * recall / den
    }
}

pub fn miou(pred: &LabelMap, gt: &LabelMap, n_class: usize) -> Result<f64> {
    let mut acc = if n_class <= 1 {
        MetricAccumulator::binary()
    } else {
        MetricAccumulator::semantic(n_class)
    };
    acc.update(pred, gt)?;
    Ok(acc.report().miou)
}

pub fn f_score(pred: &LabelMap, gt: &LabelMap) -> Result<f64> {
    let mut acc = MetricAccumulator::binary();
    acc.update(pred, gt)?;
    Ok(acc.report().fscore)
}

/// Hard labels from logits `[T, C, h, w]`: `logit > 0` (probability above 0.5)
/// for one channel, per-pixel argmax otherwise.
pub fn predict_labels(logits: &Tensor) -> LabelMap {
    let s = logits.shape();
    let (t, c, h, w) = (s[0], s[1], s[2], s[3]);
    let hw = h * w;
    let d = logits.data();
    let mut out = LabelMap::zeros(t, h, w);
    for f in 0..t {
        for i in 0..hw {
            out.data[f * hw + i] = if c == 1 {
                u16::from(d[f * hw + i] > 0.0)
            } else {
                let mut best = 0;
                for k in 1..c {
                    if d[(f * c + k) * hw + i] > d[(f * c + best) * hw + i] {
                        best = k;
                    }
                }
                best as u16
            };
        }
    }
    out
}
