//! Scene rasterizer: 4x4 supersampled coverage over a flat background.

use super::{Scene, Shape};
use crate::vocab::BACKGROUND;

const SUBSAMPLES: usize = 4;

/// Render an arbitrary subset of a scene's shapes to planar 8-bit RGB.
/// Shapes never overlap (generator invariant), so paint order is irrelevant.
pub fn render_shapes(scene: &Scene, shapes: &[Shape]) -> Vec<u8> {
    let side = scene.side;
    let hw = side * side;
    let mut out = vec![0u8; 3 * hw];
    let inv = 1.0 / (SUBSAMPLES * SUBSAMPLES) as f64;
    for y in 0..side {
        for x in 0..side {
            let mut rgb = [
                BACKGROUND[0] as f64,
                BACKGROUND[1] as f64,
                BACKGROUND[2] as f64,
            ];
            for shape in shapes {
                // Cheap reject: pixel outside the shape's bbox.
                let [bx0, by0, bx1, by1] = shape.bbox();
                if (x as i64) < bx0 - 1
                    || (x as i64) > bx1 + 1
                    || (y as i64) < by0 - 1
                    || (y as i64) > by1 + 1
                {
                    continue;
                }
                let mut hits = 0usize;
                for sy in 0..SUBSAMPLES {
                    for sx in 0..SUBSAMPLES {
                        let px = x as f64 + (sx as f64 + 0.5) / SUBSAMPLES as f64;
                        let py = y as f64 + (sy as f64 + 0.5) / SUBSAMPLES as f64;
                        if shape.contains(px, py, 1.0) {
                            hits += 1;
                        }
                    }
                }
                if hits > 0 {
                    let alpha = hits as f64 * inv;
                    let col = shape.rgb();
                    for c in 0..3 {
                        rgb[c] = rgb[c] * (1.0 - alpha) + col[c] as f64 * alpha;
                    }
                }
            }
            for c in 0..3 {
                out[c * hw + y * side + x] = (rgb[c].clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
    }
    out
}

/// Render the full scene.
pub fn render_scene(scene: &Scene) -> Vec<u8> {
    render_shapes(scene, &scene.shapes)
}
