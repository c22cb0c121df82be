//! Minimal PNG plotting: loss curves and metric bars. Presentation only,
//! never gates anything.

use std::path::Path;

use anyhow::{Context, Result};

const W: usize = 800;
const H: usize = 400;
const MARGIN: usize = 40;

struct Canvas {
    px: Vec<u8>,
}

impl Canvas {
    fn new() -> Self {
        Canvas {
            px: vec![255u8; W * H * 3],
        }
    }

    fn set(&mut self, x: i64, y: i64, rgb: [u8; 3]) {
        if x < 0 || y < 0 || x >= W as i64 || y >= H as i64 {
            return;
        }
        let i = (y as usize * W + x as usize) * 3;
        self.px[i..i + 3].copy_from_slice(&rgb);
    }

    fn line(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, rgb: [u8; 3]) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        loop {
            self.set(x, y, rgb);
            if x == x1 && y == y1 {
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

    fn rect(&mut self, x0: usize, y0: usize, x1: usize, y1: usize, rgb: [u8; 3]) {
        for y in y0..y1.min(H) {
            for x in x0..x1.min(W) {
                self.set(x as i64, y as i64, rgb);
            }
        }
    }

    fn save(&self, path: &Path) -> Result<()> {
        let img = image::RgbImage::from_raw(W as u32, H as u32, self.px.clone())
            .context("plot buffer")?;
        img.save(path)
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}

const SERIES_COLORS: [[u8; 3]; 4] = [
    [30, 30, 30],    // total
    [200, 60, 60],   // task
    [60, 110, 200],  // distill
    [60 + 100, 160, 60], // af
];

/// Plot the per-step loss columns of a losses.csv next to it.
pub fn loss_curve(csv_path: &Path, png_path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(csv_path)?;
    let mut series: [Vec<f64>; 4] = [Vec::new(), Vec::new(), Vec::new(), Vec::new()];
    for line in text.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 6 {
            continue;
        }
        // columns: step, stage, l_task, l_distill, l_af, total
        series[0].push(cols[5].parse().unwrap_or(f64::NAN));
        series[1].push(cols[2].parse().unwrap_or(f64::NAN));
        series[2].push(cols[3].parse().unwrap_or(f64::NAN));
        series[3].push(cols[4].parse().unwrap_or(f64::NAN));
    }
    let n = series[0].len();
    if n < 2 {
        return Ok(()); // nothing worth plotting
    }
    let max = series
        .iter()
        .flat_map(|s| s.iter())
        .filter(|v| v.is_finite())
        .fold(1e-12f64, |a, &b| a.max(b));
    let mut canvas = Canvas::new();
    // axes
    canvas.line(
        MARGIN as i64,
        (H - MARGIN) as i64,
        (W - MARGIN) as i64,
        (H - MARGIN) as i64,
        [120, 120, 120],
    );
    canvas.line(
        MARGIN as i64,
        MARGIN as i64,
        MARGIN as i64,
        (H - MARGIN) as i64,
        [120, 120, 120],
    );
    let plot_w = (W - 2 * MARGIN) as f64;
    let plot_h = (H - 2 * MARGIN) as f64;
    for (si, s) in series.iter().enumerate() {
        let color = SERIES_COLORS[si];
        let mut prev: Option<(i64, i64)> = None;
        for (i, &v) in s.iter().enumerate() {
            if !v.is_finite() {
                prev = None;
                continue;
            }
            let x = MARGIN as f64 + plot_w * i as f64 / (n - 1) as f64;
            let y = (H - MARGIN) as f64 - plot_h * (v / max).clamp(0.0, 1.0);
            let p = (x as i64, y as i64);
            if let Some(q) = prev {
                canvas.line(q.0, q.1, p.0, p.1, color);
            }
            prev = Some(p);
        }
    }
    canvas.save(png_path)
}

/// Horizontal bars of one metric across runs.
pub fn metric_bars(labels: &[String], values: &[f64], png_path: &Path) -> Result<()> {
    if labels.is_empty() {
        return Ok(());
    }
    let mut canvas = Canvas::new();
    let max = values.iter().fold(1e-12f64, |a, &b| a.max(b.abs()));
    let rows = labels.len();
    let row_h = (H - 2 * MARGIN) / rows.max(1);
    for (i, &v) in values.iter().enumerate() {
        let y0 = MARGIN + i * row_h + row_h / 6;
        let y1 = MARGIN + (i + 1) * row_h - row_h / 6;
        let len = ((W - 2 * MARGIN) as f64 * (v.abs() / max)) as usize;
        let color = SERIES_COLORS[i % SERIES_COLORS.len()];
        canvas.rect(MARGIN, y0, MARGIN + len, y1, color);
    }
    canvas.save(png_path)
}
