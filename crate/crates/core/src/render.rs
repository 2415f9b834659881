//! Plain-PPM side-by-sides: input frame, ground-truth overlay, prediction overlay.

use std::fmt::Write as _;

use crate::data::{Clip, LabelMap};
use crate::error::Result;
use crate::metrics::predict_labels;
use crate::model::Model;

pub const OVERLAY_ALPHA: f64 = 0.5;

const RED: [f64; 3] = [1.0, 0.0, 0.0];

/// Overlay colors for semantic labels; class `c` uses entry `(c - 1) % 8`.
pub const CLASS_COLORS: [[f64; 3]; 8] = [
    [1.0, 0.0, 0.0],
    [0.0, 0.8, 0.0],
    [0.0, 0.3, 1.0],
    [1.0, 0.85, 0.0],
    [1.0, 0.0, 1.0],
    [0.0, 0.9, 0.9],
    [1.0, 0.5, 0.0],
    [0.6, 0.3, 1.0],
];

/// Color painted over a pixel labelled `class`, or `None` for background.
pub fn overlay_color(class: u16, binary: bool) -> Option<[f64; 3]> {
    match class {
        0 => None,
        _ if binary => Some(RED),
        c => Some(CLASS_COLORS[(c as usize - 1) % CLASS_COLORS.len()]),
    }
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Overlays labels `[H/4, W/4]` onto an RGB frame `[3, H, W]` (planar),
/// upsampling labels 4× by nearest neighbour. Returns interleaved RGB bytes.
pub fn overlay(
    frame: &[f64],
    height: usize,
    width: usize,
    labels: Option<&[u16]>,
    binary: bool,
) -> Vec<u8> {
    let hw = height * width;
    let mut out = Vec::with_capacity(3 * hw);
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            let rgb = [frame[i], frame[hw + i], frame[2 * hw + i]];
            let paint =
                labels.and_then(|l| overlay_color(l[(y / 4) * (width / 4) + x / 4], binary));
            for ch in 0..3 {
                let v = match paint {
                    Some(c) => (1.0 - OVERLAY_ALPHA) * rgb[ch] + OVERLAY_ALPHA * c[ch],
                    None => rgb[ch],
                };
                out.push(to_byte(v));
            }
        }
    }
    out
}

/// Plain (P3) PPM of three panels side by side.
pub fn triptych(
    frame: &[f64],
    height: usize,
    width: usize,
    gt: &[u16],
    pred: &[u16],
    binary: bool,
) -> String {
    let panels = [
        overlay(frame, height, width, None, binary),
        overlay(frame, height, width, Some(gt), binary),
        overlay(frame, height, width, Some(pred), binary),
    ];
    let mut s = format!("P3\n{} {}\n255\n", 3 * width, height);
    for y in 0..height {
        let mut row = Vec::with_capacity(9 * width);
        for p in &panels {
            row.extend(
                p[3 * y * width..3 * (y + 1) * width]
                    .iter()
                    .map(u8::to_string),
            );
        }
        writeln!(s, "{}", row.join(" ")).expect("write to String");
    }
    s
}

/// One triptych per frame of `clip`, using `model`'s predictions.
pub fn render_clip(model: &Model, clip: &Clip) -> Result<Vec<String>> {
    let pred: LabelMap = predict_labels(&model.predict(&clip.frames, &clip.audio)?);
    let s = clip.frames.shape();
    let (h, w) = (s[2], s[3]);
    let binary = model.config.n_class == 1;
    Ok((0..clip.n_frames())
        .map(|t| {
            let frame = &clip.frames.data()[t * 3 * h * w..(t + 1) * 3 * h * w];
            triptych(frame, h, w, clip.gt.frame(t), pred.frame(t), binary)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlay_blends_only_labelled_blocks() {
        let (h, w) = (8, 8);
        let frame = vec![0.2; 3 * h * w];
        let mut labels = vec![0u16; 4];
        labels[3] = 1;
        let img = overlay(&frame, h, w, Some(&labels), true);
        let px = |x: usize, y: usize| &img[3 * (y * w + x)..3 * (y * w + x) + 3];
        assert_eq!(px(0, 0), &[51, 51, 51]);
        assert_eq!(px(4, 4), &[153, 26, 26]);
        assert_eq!(px(7, 7), &[153, 26, 26]);
        assert_eq!(px(3, 7), &[51, 51, 51]);
    }

    #[test]
    fn ppm_header_and_size() {
        let frame = vec![0.5; 3 * 4 * 4];
        let s = triptych(&frame, 4, 4, &[1], &[0], true);
        let mut lines = s.lines();
        assert_eq!(lines.next(), Some("P3"));
        assert_eq!(lines.next(), Some("12 4"));
        assert_eq!(lines.next(), Some("255"));
        assert_eq!(lines.next().unwrap().split(' ').count(), 36);
    }
}
