//! Grouped bar chart of the normalised metrics, written as PNG.
//!
//! One group per summary row, three bars per group in the order
//! ratio followed (blue), distance per regrasp (orange), velocity (green),
//! each with a black one-standard-deviation whisker. Horizontal grid lines
//! mark every 0.25.

use std::path::Path;

use cable_follow::harness::GroupSummary;
use image::{Rgb, RgbImage};

const PLOT_H: u32 = 300;
const MARGIN: u32 = 30;
const BAR_W: u32 = 24;
const GROUP_GAP: u32 = 36;
const COLORS: [Rgb<u8>; 3] = [Rgb([52, 101, 164]), Rgb([245, 121, 0]), Rgb([78, 154, 6])];

fn fill(img: &mut RgbImage, x0: u32, y0: u32, x1: u32, y1: u32, c: Rgb<u8>) {
    for x in x0.min(x1)..x0.max(x1).min(img.width()) {
        for y in y0.min(y1)..y0.max(y1).min(img.height()) {
            img.put_pixel(x, y, c);
        }
    }
}

pub fn bar_chart(groups: &[GroupSummary], path: &Path) -> image::ImageResult<()> {
    let values: Vec<[(f64, f64); 3]> = groups
        .iter()
        .map(|g| {
            [
                (g.ratio_mean, g.ratio_std),
                (g.dist_per_regrasp_mean, g.dist_per_regrasp_std),
                (g.vel_norm_mean, g.vel_norm_std),
            ]
        })
        .collect();
    let top = values
        .iter()
        .flatten()
        .map(|(m, s)| m + s)
        .filter(|v| v.is_finite())
        .fold(1.0f64, f64::max);
    let top = (top * 4.0).ceil() / 4.0;

    let group_w = 3 * BAR_W + GROUP_GAP;
    let width = 2 * MARGIN + group_w * groups.len().max(1) as u32;
    let height = PLOT_H + 2 * MARGIN;
    let base = MARGIN + PLOT_H;
    let to_px = |v: f64| -> u32 {
        let v = if v.is_finite() { v.clamp(0.0, top) } else { 0.0 };
        base - (v / top * PLOT_H as f64).round() as u32
    };

    let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
    let mut level = 0.0;
    while level <= top + 1e-9 {
        let y = to_px(level);
        fill(&mut img, MARGIN, y, width - MARGIN, y + 1, Rgb([215, 215, 215]));
        level += 0.25;
    }
    for (gi, bars) in values.iter().enumerate() {
        let gx = MARGIN + GROUP_GAP / 2 + gi as u32 * group_w;
        for (bi, &(mean, std)) in bars.iter().enumerate() {
            let x0 = gx + bi as u32 * BAR_W;
            fill(&mut img, x0 + 2, to_px(mean), x0 + BAR_W - 2, base, COLORS[bi]);
            let xm = x0 + BAR_W / 2;
            let (hi, lo) = (to_px(mean + std), to_px(mean - std));
            fill(&mut img, xm, hi, xm + 1, lo + 1, Rgb([0, 0, 0]));
            fill(&mut img, xm - 4, hi, xm + 5, hi + 1, Rgb([0, 0, 0]));
            fill(&mut img, xm - 4, lo, xm + 5, lo + 1, Rgb([0, 0, 0]));
        }
    }
    fill(&mut img, MARGIN, MARGIN, MARGIN + 1, base + 1, Rgb([0, 0, 0]));
    fill(&mut img, MARGIN, base, width - MARGIN, base + 1, Rgb([0, 0, 0]));
    img.save(path)
}
