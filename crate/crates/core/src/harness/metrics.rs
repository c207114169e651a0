use serde::{Deserialize, Serialize};

use super::data::TaskKind;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Metrics {
    Segmentation {
        /// `None` for classes absent from both prediction and target.
        per_class_iou: Vec<Option<f64>>,
        miou: f64,
    },
    Classification {
        top1: f64,
        top5: f64,
    },
}

impl Metrics {
    /// mIoU for segmentation, top-1 accuracy for classification.
    pub fn headline(&self) -> f64 {
        match self {
            Metrics::Segmentation { miou, .. } => *miou,
            Metrics::Classification { top1, .. } => *top1,
        }
    }
}

/// Per-class `|P ∩ G| / |P ∪ G|` and their mean over classes present in
/// either prediction or target.
pub fn iou(pred: &[usize], target: &[usize], classes: usize) -> (Vec<Option<f64>>, f64) {
    let mut inter = vec![0usize; classes];
    let mut union = vec![0usize; classes];
    for (&p, &g) in pred.iter().zip(target) {
        if p == g {
            inter[p] += 1;
            union[p] += 1;
        } else {
            union[p] += 1;
            union[g] += 1;
        }
    }
    let per: Vec<Option<f64>> =
        (0..classes).map(|k| (union[k] > 0).then(|| inter[k] as f64 / union[k] as f64)).collect();
    let present: Vec<f64> = per.iter().flatten().copied().collect();
    let mean = if present.is_empty() { 1.0 } else { present.iter().sum::<f64>() / present.len() as f64 };
    (per, mean)
}

/// Fraction of samples whose target is among the `k` highest scores (ties
/// broken toward the lower class index).
pub fn topk_accuracy(scores: &Tensor, targets: &[usize], k: usize) -> f64 {
    let (n, c) = (scores.shape()[0], scores.shape()[1]);
    let inner: usize = scores.shape()[2..].iter().product();
    let mut hits = 0;
    for (pos, &t) in targets.iter().enumerate() {
        let (b, s) = (pos / inner, pos % inner);
        let at = |j: usize| scores.data()[(b * c + j) * inner + s];
        let better = (0..c).filter(|&j| at(j) > at(t) || (at(j) == at(t) && j < t)).count();
        if better < k {
            hits += 1;
        }
    }
    debug_assert_eq!(targets.len(), n * inner);
    hits as f64 / targets.len().max(1) as f64
}

/// Metrics of class scores `[N, C, ...]` against labels.
pub fn metrics(scores: &Tensor, targets: &[usize], kind: TaskKind) -> Metrics {
    let classes = scores.shape()[1];
    match kind {
        TaskKind::Segmentation => {
            let (per_class_iou, miou) = iou(&scores.argmax_axis1(), targets, classes);
            Metrics::Segmentation { per_class_iou, miou }
        }
        TaskKind::Classification => Metrics::Classification {
            top1: topk_accuracy(scores, targets, 1),
            top5: topk_accuracy(scores, targets, 5),
        },
    }
}
