//! Minimal PNG line charts of training curves.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::agent::TrainLogRecord;

const W: u32 = 480;
const H: u32 = 320;
const MARGIN: u32 = 24;
const COLORS: [[u8; 3]; 3] = [[200, 30, 30], [30, 120, 200], [30, 160, 60]];

/// Writes `losses.png` (IL, CS, CT means per epoch) and, when any epoch was
/// evaluated, `eval_sr.png`.
pub fn write_curves(records: &[TrainLogRecord], dir: &Path) -> Result<(), image::ImageError> {
    let xs: Vec<f64> = records.iter().map(|r| r.epoch as f64).collect();
    let losses: Vec<Vec<(f64, f64)>> = [
        records.iter().map(|r| r.mean_il).collect::<Vec<_>>(),
        records.iter().map(|r| r.mean_cs).collect(),
        records.iter().map(|r| r.mean_ct).collect(),
    ]
    .into_iter()
    .map(|ys| xs.iter().copied().zip(ys).collect())
    .collect();
    chart(&losses).save(dir.join("losses.png"))?;

    let sr: Vec<(f64, f64)> = records
        .iter()
        .filter_map(|r| r.eval_sr.map(|s| (r.epoch as f64, s)))
        .collect();
    if !sr.is_empty() {
        chart(&[sr]).save(dir.join("eval_sr.png"))?;
    }
    Ok(())
}

fn chart(series: &[Vec<(f64, f64)>]) -> RgbImage {
    let mut img = RgbImage::from_pixel(W, H, Rgb([255, 255, 255]));
    let pts = series.iter().flatten().filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x0 > x1 {
        return img;
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y1 = y0 + 1.0;
    }
    let grey = Rgb([120, 120, 120]);
    line(&mut img, (MARGIN as i64, (H - MARGIN) as i64), ((W - MARGIN) as i64, (H - MARGIN) as i64), grey);
    line(&mut img, (MARGIN as i64, MARGIN as i64), (MARGIN as i64, (H - MARGIN) as i64), grey);
    let to_px = |(x, y): (f64, f64)| -> (i64, i64) {
        let w = (W - 2 * MARGIN) as f64;
        let h = (H - 2 * MARGIN) as f64;
        (
            MARGIN as i64 + ((x - x0) / (x1 - x0) * w).round() as i64,
            (H - MARGIN) as i64 - ((y - y0) / (y1 - y0) * h).round() as i64,
        )
    };
    for (s, c) in series.iter().zip(COLORS.iter().cycle()) {
        let good: Vec<_> = s.iter().copied().filter(|(x, y)| x.is_finite() && y.is_finite()).collect();
        for w in good.windows(2) {
            line(&mut img, to_px(w[0]), to_px(w[1]), Rgb(*c));
        }
        if let [only] = good.as_slice() {
            line(&mut img, to_px(*only), to_px(*only), Rgb(*c));
        }
    }
    img
}

// Bresenham
fn line(img: &mut RgbImage, (mut x, mut y): (i64, i64), (x2, y2): (i64, i64), c: Rgb<u8>) {
    let dx = (x2 - x).abs();
    let dy = -(y2 - y).abs();
    let (sx, sy) = (if x < x2 { 1 } else { -1 }, if y < y2 { 1 } else { -1 });
    let mut err = dx + dy;
    loop {
        if x >= 0 && y >= 0 && (x as u32) < W && (y as u32) < H {
            img.put_pixel(x as u32, y as u32, c);
        }
        if x == x2 && y == y2 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}
