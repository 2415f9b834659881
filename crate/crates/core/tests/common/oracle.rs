//! Brute-force pixel-counting oracles on random 8×8 pairs.

use avseg_core::data::LabelMap;
use avseg_core::loss::dice_loss;
use avseg_core::metrics::{f_score, miou};
use avseg_core::tensor::{Tape, Tensor};
use rand::Rng;

use super::rng;

pub const SIDE: usize = 8;
pub const PAIRS: u64 = 50;

pub fn label_map(data: Vec<u16>) -> LabelMap {
    LabelMap {
        frames: 1,
        height: SIDE,
        width: SIDE,
        data,
    }
}

fn random_labels(r: &mut impl Rng, n_class: u16) -> LabelMap {
    label_map((0..SIDE * SIDE).map(|_| r.gen_range(0..n_class)).collect())
}

fn count(pred: &LabelMap, gt: &LabelMap, f: impl Fn(u16, u16) -> bool) -> u64 {
    let mut n = 0;
    for y in 0..SIDE {
        for x in 0..SIDE {
            if f(pred.data[y * SIDE + x], gt.data[y * SIDE + x]) {
                n += 1;
            }
        }
    }
    n
}

fn oracle_binary_iou(pred: &LabelMap, gt: &LabelMap) -> f64 {
    let inter = count(pred, gt, |p, g| p != 0 && g != 0);
    let union = count(pred, gt, |p, g| p != 0 || g != 0);
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

fn oracle_semantic_miou(pred: &LabelMap, gt: &LabelMap, n_class: u16) -> f64 {
    let mut ious = Vec::new();
    for c in 0..n_class {
        let inter = count(pred, gt, |p, g| p == c && g == c);
        let union = count(pred, gt, |p, g| p == c || g == c);
        if union > 0 {
            ious.push(inter as f64 / union as f64);
        }
    }
    ious.iter().sum::<f64>() / ious.len() as f64
}

fn oracle_f(pred: &LabelMap, gt: &LabelMap) -> f64 {
    let tp = count(pred, gt, |p, g| p != 0 && g != 0) as f64;
    let fp = count(pred, gt, |p, g| p != 0 && g == 0) as f64;
    let fn_ = count(pred, gt, |p, g| p == 0 && g != 0) as f64;
    let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
    if 0.3 * precision + recall == 0.0 {
        0.0
    } else {
        (1.0 + 0.3) * precision * recall / (0.3 * precision + recall)
    }
}

pub fn binary_metrics() -> Result<(), String> {
    let mut r = rng(40);
    for i in 0..PAIRS {
        // vary the foreground rate so some pairs are sparse or empty
        let rate = i as f64 / PAIRS as f64;
        let mut draw = || {
            label_map(
                (0..SIDE * SIDE)
                    .map(|_| u16::from(r.gen_bool(rate)))
                    .collect(),
            )
        };
        let (pred, gt) = (draw(), draw());
        let (got, want) = (miou(&pred, &gt, 1).unwrap(), oracle_binary_iou(&pred, &gt));
        if got != want {
            return Err(format!("pair {i}: binary mIoU {got} vs {want}"));
        }
        let (got, want) = (f_score(&pred, &gt).unwrap(), oracle_f(&pred, &gt));
        if got != want {
            return Err(format!("pair {i}: F {got} vs {want}"));
        }
    }
    Ok(())
}

pub fn semantic_miou() -> Result<(), String> {
    let mut r = rng(41);
    for i in 0..PAIRS {
        let n_class = r.gen_range(2..6u16);
        let pred = random_labels(&mut r, n_class);
        let gt = random_labels(&mut r, n_class);
        let got = miou(&pred, &gt, n_class as usize).unwrap();
        let want = oracle_semantic_miou(&pred, &gt, n_class);
        if got != want {
            return Err(format!("pair {i}: semantic mIoU {got} vs {want}"));
        }
    }
    Ok(())
}

pub fn dice() -> Result<(), String> {
    let mut r = rng(42);
    for i in 0..PAIRS {
        let frames = r.gen_range(1..4);
        let p: Vec<f64> = (0..frames * SIDE * SIDE)
            .map(|_| r.gen_range(0.0..=1.0))
            .collect();
        let g: Vec<f64> = (0..frames * SIDE * SIDE)
            .map(|_| f64::from(u8::from(r.gen_bool(0.3))))
            .collect();
        let mut want = 0.0;
        for f in 0..frames {
            let (mut pg, mut sp, mut sg) = (0.0, 0.0, 0.0);
            for k in f * SIDE * SIDE..(f + 1) * SIDE * SIDE {
                pg += p[k] * g[k];
                sp += p[k];
                sg += g[k];
            }
            want += 1.0 - (2.0 * pg + 1.0) / (sp + sg + 1.0);
        }
        want /= frames as f64;

        let mut tape = Tape::new();
        let pv = tape.constant(Tensor::new(&[frames, 1, SIDE, SIDE], p).unwrap());
        let gv = tape.constant(Tensor::new(&[frames, 1, SIDE, SIDE], g).unwrap());
        let loss = dice_loss(&mut tape, pv, gv).unwrap();
        let got = tape.value(loss).item();
        if (got - want).abs() > 1e-12 {
            return Err(format!("pair {i}: dice {got} vs {want}"));
        }
    }
    Ok(())
}
