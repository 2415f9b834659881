//! Loss and metrics against brute-force pixel counting on random 8×8 pairs.

mod common;

use avseg_core::loss::dice_loss;
use avseg_core::metrics::{f_score, miou, MetricAccumulator};
use avseg_core::tensor::{Tape, Tensor};
use common::oracle::{self, label_map};

#[test]
fn binary_metrics_match_pixel_counts() {
    oracle::binary_metrics().unwrap();
}

#[test]
fn semantic_miou_matches_pixel_counts() {
    oracle::semantic_miou().unwrap();
}

#[test]
fn dice_matches_direct_sum() {
    oracle::dice().unwrap();
}

#[test]
fn worked_examples() {
    let dice = |p: f64, g: f64| {
        let mut tape = Tape::new();
        let pv = tape.constant(Tensor::full(&[4, 4], p));
        let gv = tape.constant(Tensor::full(&[4, 4], g));
        let l = dice_loss(&mut tape, pv, gv).unwrap();
        tape.value(l).item()
    };
    assert_eq!(dice(1.0, 1.0), 0.0);
    assert!((dice(1.0, 0.0) - (1.0 - 1.0 / 17.0)).abs() < 1e-15);
    assert_eq!(dice(0.0, 0.0), 0.0);

    let gt = label_map((0..64).map(|i| u16::from(i < 32)).collect());
    let half = label_map((0..64).map(|i| u16::from(i < 16)).collect());
    assert_eq!(miou(&half, &gt, 1).unwrap(), 0.5);
    assert_eq!(f_score(&half, &gt).unwrap(), 1.3 * 0.5 / 0.8);
    assert_eq!(f_score(&gt, &gt).unwrap(), 1.0);
    assert_eq!(f_score(&label_map(vec![0; 64]), &gt).unwrap(), 0.0);

    let mut acc = MetricAccumulator::binary();
    acc.update(&gt, &gt).unwrap();
    assert_eq!(acc.report().miou, 1.0);
}
