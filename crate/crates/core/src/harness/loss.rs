use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{RanpError, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    CePlusDice,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub kind: LossKind,
    /// Weight of the dice term.
    pub alpha: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { kind: LossKind::CrossEntropy, alpha: 0.25 }
    }
}

impl LossConfig {
    pub fn ce_plus_dice(alpha: f64) -> Self {
        LossConfig { kind: LossKind::CePlusDice, alpha }
    }
}

/// Mean over classes of `2 |P_i ∩ G_i| / (|P_i| + |G_i|)` on hard labels.
/// A class absent from both prediction and target counts as a perfect match.
pub fn dice_overlap(pred: &[usize], target: &[usize], classes: usize) -> f64 {
    let mut inter = vec![0usize; classes];
    let mut p = vec![0usize; classes];
    let mut g = vec![0usize; classes];
    for (&a, &b) in pred.iter().zip(target) {
        p[a] += 1;
        g[b] += 1;
        if a == b {
            inter[a] += 1;
        }
    }
    let total: f64 = (0..classes)
        .map(|i| if p[i] + g[i] == 0 { 1.0 } else { 2.0 * inter[i] as f64 / (p[i] + g[i]) as f64 })
        .sum();
    total / classes as f64
}

fn check_targets(targets: &[usize], classes: usize) -> Result<()> {
    match targets.iter().find(|&&t| t >= classes) {
        Some(t) => Err(RanpError::Contract(format!("class index {t} >= class count {classes}"))),
        None => Ok(()),
    }
}

/// Loss on the tape. The dice term uses argmax predictions, so it shifts the
/// value but carries no gradient.
pub fn taped_loss(tape: &mut Tape, logits: Var, targets: &[usize], cfg: &LossConfig) -> Result<Var> {
    let classes = tape.value(logits).shape()[1];
    check_targets(targets, classes)?;
    let ce = tape.softmax_cross_entropy(logits, targets)?;
    Ok(match cfg.kind {
        LossKind::CrossEntropy => ce,
        LossKind::CePlusDice => {
            let dice = dice_overlap(&tape.value(logits).argmax_axis1(), targets, classes);
            tape.affine(ce, 1.0, cfg.alpha * (1.0 - dice))
        }
    })
}

/// `CE + α (1 - dice)` for class scores `[N, C, ...]`.
pub fn loss(logits: &Tensor, targets: &[usize], cfg: &LossConfig) -> Result<f64> {
    let mut tape = Tape::new();
    let x = tape.leaf(logits.clone());
    let l = taped_loss(&mut tape, x, targets, cfg)?;
    Ok(tape.value(l).item())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_hot(labels: &[usize], classes: usize, scale: f64) -> Tensor {
        let n = labels.len();
        let mut data = vec![0.0; classes * n];
        for (i, &l) in labels.iter().enumerate() {
            data[l * n + i] = scale;
        }
        Tensor::new(vec![1, classes, n], data).unwrap()
    }

    #[test]
    fn perfect_prediction_has_zero_loss() {
        let labels = [0, 1, 1, 2, 0, 2];
        let logits = one_hot(&labels, 3, 1e3);
        assert_eq!(loss(&logits, &labels, &LossConfig::ce_plus_dice(0.25)).unwrap(), 0.0);
        assert_eq!(dice_overlap(&labels, &labels, 3), 1.0);
    }

    #[test]
    fn alpha_zero_is_cross_entropy() {
        let labels = [0, 1, 1, 0];
        let logits = Tensor::from_fn(&[1, 2, 4], |i| (i as f64 * 0.7).sin());
        let ce = loss(&logits, &labels, &LossConfig::default()).unwrap();
        assert_eq!(loss(&logits, &labels, &LossConfig::ce_plus_dice(0.0)).unwrap(), ce);
        assert!(loss(&logits, &labels, &LossConfig::ce_plus_dice(0.25)).unwrap() > ce);
    }

    #[test]
    fn dice_half_correct_two_class_volume() {
        // 8 voxels: target [0,0,0,0,1,1,1,1], prediction wrong on voxels 2..6
        let target = [0, 0, 0, 0, 1, 1, 1, 1];
        let pred = [0, 0, 1, 1, 0, 0, 1, 1];
        // class 0: |P∩G| = 2, |P| = 4, |G| = 4 -> 0.5; class 1 likewise
        assert_eq!(dice_overlap(&pred, &target, 2), 0.5);
        let logits = one_hot(&pred, 2, 1e3);
        let cfg = LossConfig::ce_plus_dice(0.25);
        let ce = loss(&logits, &target, &LossConfig::default()).unwrap();
        assert!((loss(&logits, &target, &cfg).unwrap() - (ce + 0.25 * 0.5)).abs() < 1e-12);
    }

    #[test]
    fn rejects_out_of_range_class() {
        let logits = Tensor::zeros(&[1, 2, 2]);
        assert!(loss(&logits, &[0, 2], &LossConfig::default()).is_err());
    }
}
