//! Procedural inpainting benchmark: scenes of colored shapes, one-shape
//! masks, local prompts naming only the masked shape, global prompts listing
//! the whole scene.
//!
//! The generator is deterministic given an RNG stream. Supervised samples
//! carry the clean image; self-supervised samples carry only the masked
//! image, mask, and prompts.

mod dataset;
mod render;

pub use dataset::{
    build_datasets, dataset_hash_of, load_split, DataConfig, Dataset, DatasetSummary,
};
pub use render::{render_scene, render_shapes};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Scalar;
use crate::rng::Rng;
use crate::vocab::{COLORS, KINDS, PALETTE};
use rand::Rng as _;

pub const CANVAS_SIDE: usize = 32;
/// Masked pixels are filled with this 8-bit sentinel (0.5 quantized).
pub const SENTINEL_U8: u8 = 128;
const MIN_RADIUS: f64 = 3.5;
const MAX_RADIUS: f64 = 6.0;
/// Square half-side as a fraction of r (square inscribed in the
/// circumradius circle).
const SQUARE_HALF: f64 = std::f64::consts::FRAC_1_SQRT_2;
const MASK_DILATION: i64 = 2;
const SCENE_ATTEMPTS: usize = 200;
const PLACE_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Circle,
    Square,
    Triangle,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Circle => KINDS[0],
            Kind::Square => KINDS[1],
            Kind::Triangle => KINDS[2],
        }
    }

    fn from_index(i: usize) -> Kind {
        match i {
            0 => Kind::Circle,
            1 => Kind::Square,
            _ => Kind::Triangle,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Shape {
    pub kind: Kind,
    /// Palette index into [`crate::vocab::COLORS`].
    pub color: usize,
    pub cx: f64,
    pub cy: f64,
    pub r: f64,
}

impl Shape {
    pub fn color_name(&self) -> &'static str {
        COLORS[self.color]
    }

    pub fn rgb(&self) -> [f32; 3] {
        PALETTE[self.color]
    }

    /// Circumradius: exactly `r` for every kind, so placement acceptance is
    /// independent of kind and color (keeps the generated distribution
    /// uniform under rejection sampling).
    pub fn extent(&self) -> f64 {
        self.r
    }

    /// Point-in-shape test in canvas coordinates; `shrink` scales the shape
    /// towards its center (shrink < 1 erodes, used by the color oracle).
    pub fn contains(&self, x: f64, y: f64, shrink: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let r = self.r * shrink;
        match self.kind {
            Kind::Circle => dx * dx + dy * dy <= r * r,
            Kind::Square => {
                let half = SQUARE_HALF * r;
                dx.abs() <= half && dy.abs() <= half
            }
            Kind::Triangle => {
                // Up-pointing triangle inscribed in radius r.
                let v0 = (0.0, -r);
                let v1 = (-0.866 * r, 0.5 * r);
                let v2 = (0.866 * r, 0.5 * r);
                let sign = |a: (f64, f64), b: (f64, f64)| -> f64 {
                    (dx - b.0) * (a.1 - b.1) - (a.0 - b.0) * (dy - b.1)
                };
                let d0 = sign(v0, v1);
                let d1 = sign(v1, v2);
                let d2 = sign(v2, v0);
                let has_neg = d0 < 0.0 || d1 < 0.0 || d2 < 0.0;
                let has_pos = d0 > 0.0 || d1 > 0.0 || d2 > 0.0;
                !(has_neg && has_pos)
            }
        }
    }

    /// Tight pixel bounding box [x0, y0, x1, y1] inclusive.
    pub fn bbox(&self) -> [i64; 4] {
        let (x0, x1, y0, y1) = match self.kind {
            Kind::Circle => (
                self.cx - self.r,
                self.cx + self.r,
                self.cy - self.r,
                self.cy + self.r,
            ),
            Kind::Square => {
                let half = SQUARE_HALF * self.r;
                (self.cx - half, self.cx + half, self.cy - half, self.cy + half)
            }
            Kind::Triangle => (
                self.cx - 0.866 * self.r,
                self.cx + 0.866 * self.r,
                self.cy - self.r,
                self.cy + 0.5 * self.r,
            ),
        };
        [
            x0.floor() as i64,
            y0.floor() as i64,
            x1.ceil() as i64,
            y1.ceil() as i64,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub side: usize,
    pub shapes: Vec<Shape>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Sl,
    Ssl,
    Test,
}

impl Split {
    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Sl => "sl",
            Split::Ssl => "ssl",
            Split::Test => "test",
        }
    }
}

/// One benchmark example. `image` is absent for the self-supervised split.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub split: Split,
    pub scene_seed: u64,
    pub target_index: usize,
    /// Planar RGB, `[3 * side * side]`, row-major per channel.
    pub image: Option<Vec<u8>>,
    /// 0/1 per pixel, `[side * side]`.
    pub mask: Vec<u8>,
    pub masked_image: Vec<u8>,
    pub local_prompt: String,
    pub global_prompt: String,
    pub has_ground_truth: bool,
    pub side: usize,
}

impl Sample {
    pub fn mask_arr<F: Scalar>(&self) -> Array2<F> {
        let hw = self.side * self.side;
        Array2::from_shape_fn((1, hw), |(_, i)| F::fromf(self.mask[i] as f64))
    }

    pub fn masked_arr<F: Scalar>(&self) -> Array2<F> {
        u8_planar_to_arr(&self.masked_image, 3, self.side)
    }

    pub fn image_arr<F: Scalar>(&self) -> Option<Array2<F>> {
        self.image.as_ref().map(|img| u8_planar_to_arr(img, 3, self.side))
    }
}

pub fn u8_planar_to_arr<F: Scalar>(data: &[u8], channels: usize, side: usize) -> Array2<F> {
    let hw = side * side;
    Array2::from_shape_fn((channels, hw), |(c, i)| {
        F::fromf(data[c * hw + i] as f64 / 255.0)
    })
}

/// Generate a scene with a uniformly drawn shape count in
/// `[min_shapes, max_shapes]`, rejection-sampling placements until the
/// separation constraint holds.
pub fn generate_scene_counts(rng: &mut Rng, min_shapes: usize, max_shapes: usize) -> Result<Scene> {
    if min_shapes == 0 || max_shapes < min_shapes {
        return Err(Error::ConstraintError(format!(
            "invalid shape count range {min_shapes}..={max_shapes}"
        )));
    }
    let side = CANVAS_SIDE as f64;
    for _ in 0..SCENE_ATTEMPTS {
        let count = rng.gen_range(min_shapes..=max_shapes);
        let mut shapes: Vec<Shape> = Vec::with_capacity(count);
        let mut ok = true;
        // Draw each slot's identity once and retry only the position, so
        // rejection sampling cannot skew the (kind, color) distribution.
        'place: for _ in 0..count {
            let template = Shape {
                kind: Kind::from_index(rng.gen_range(0..KINDS.len())),
                color: rng.gen_range(0..COLORS.len()),
                cx: 0.0,
                cy: 0.0,
                r: rng.gen_range(MIN_RADIUS..MAX_RADIUS),
            };
            let ext = template.extent();
            let lo = ext + 2.0;
            let hi = side - 2.0 - ext;
            if hi <= lo {
                ok = false;
                break;
            }
            for _ in 0..PLACE_ATTEMPTS {
                let shape = Shape {
                    cx: rng.gen_range(lo..hi),
                    cy: rng.gen_range(lo..hi),
                    ..template
                };
                let separated = shapes.iter().all(|other| {
                    let d = ((shape.cx - other.cx).powi(2) + (shape.cy - other.cy).powi(2)).sqrt();
                    d >= shape.extent() + other.extent() + 4.0
                });
                if separated {
                    shapes.push(shape);
                    continue 'place;
                }
            }
            ok = false;
            break;
        }
        if ok {
            return Ok(Scene {
                side: CANVAS_SIDE,
                shapes,
            });
        }
    }
    Err(Error::ConstraintError(format!(
        "could not place {min_shapes}..={max_shapes} shapes in {SCENE_ATTEMPTS} attempts"
    )))
}

/// Default scene family: 2-4 shapes.
pub fn generate_scene(rng: &mut Rng) -> Result<Scene> {
    generate_scene_counts(rng, 2, 4)
}

/// Disambiguation family: exactly two shapes of the same kind with distinct
/// colors, the setting where a global prompt underdetermines the target.
pub fn generate_two_same_kind_scene(rng: &mut Rng) -> Result<Scene> {
    for _ in 0..SCENE_ATTEMPTS {
        let scene = generate_scene_counts(rng, 2, 2)?;
        let kind = scene.shapes[0].kind;
        let mut shapes = scene.shapes.clone();
        shapes[1].kind = kind;
        if shapes[1].color == shapes[0].color {
            shapes[1].color = (shapes[1].color + 1 + (rng.gen_range(0..COLORS.len() - 1)))
                % COLORS.len();
            if shapes[1].color == shapes[0].color {
                shapes[1].color = (shapes[0].color + 1) % COLORS.len();
            }
        }
        // Same-kind swap can change extents; re-check separation.
        let d = ((shapes[0].cx - shapes[1].cx).powi(2) + (shapes[0].cy - shapes[1].cy).powi(2))
            .sqrt();
        if d >= shapes[0].extent() + shapes[1].extent() + 4.0 {
            return Ok(Scene {
                side: scene.side,
                shapes,
            });
        }
    }
    Err(Error::ConstraintError(
        "could not build a two-same-kind scene".to_string(),
    ))
}

/// Dilated bounding-box mask (0/1) of one shape, clamped to the canvas.
pub fn shape_mask(scene: &Scene, target_index: usize) -> Result<Vec<u8>> {
    let shape = scene
        .shapes
        .get(target_index)
        .ok_or(Error::IndexError {
            index: target_index,
            len: scene.shapes.len(),
        })?;
    let [x0, y0, x1, y1] = shape.bbox();
    let side = scene.side as i64;
    let (x0, y0) = (
        (x0 - MASK_DILATION).max(0),
        (y0 - MASK_DILATION).max(0),
    );
    let (x1, y1) = (
        (x1 + MASK_DILATION).min(side - 1),
        (y1 + MASK_DILATION).min(side - 1),
    );
    let mut mask = vec![0u8; scene.side * scene.side];
    for y in y0..=y1 {
        for x in x0..=x1 {
            mask[(y * side + x) as usize] = 1;
        }
    }
    Ok(mask)
}

pub fn local_prompt(shape: &Shape) -> String {
    format!("{} {}", shape.color_name(), shape.kind.name())
}

/// Canonical global prompt: every shape in scene order, joined by "and".
pub fn global_prompt(scene: &Scene) -> String {
    scene
        .shapes
        .iter()
        .map(local_prompt)
        .collect::<Vec<_>>()
        .join(" and ")
}

/// Build one sample from a scene. The self-supervised split drops the clean
/// image entirely.
pub fn make_sample(
    scene: &Scene,
    target_index: usize,
    split: Split,
    id: String,
    scene_seed: u64,
) -> Result<Sample> {
    let mask = shape_mask(scene, target_index)?;
    let image = render_scene(scene);
    let hw = scene.side * scene.side;
    let mut masked = image.clone();
    for c in 0..3 {
        for i in 0..hw {
            if mask[i] == 1 {
                masked[c * hw + i] = SENTINEL_U8;
            }
        }
    }
    let target = &scene.shapes[target_index];
    let keep_image = split != Split::Ssl;
    Ok(Sample {
        id,
        split,
        scene_seed,
        target_index,
        image: keep_image.then_some(image),
        mask,
        masked_image: masked,
        local_prompt: local_prompt(target),
        global_prompt: global_prompt(scene),
        has_ground_truth: keep_image,
        side: scene.side,
    })
}

/// Predict the palette color rendered inside the target shape's footprint:
/// mean RGB over interior pixels, nearest palette entry. This is the oracle
/// behind the local-vs-global prompt comparison.
pub fn classify_region_color(image: &[f32], scene: &Scene, target_index: usize) -> Result<usize> {
    let shape = scene
        .shapes
        .get(target_index)
        .ok_or(Error::IndexError {
            index: target_index,
            len: scene.shapes.len(),
        })?;
    let side = scene.side;
    let hw = side * side;
    let mut acc = [0f64; 3];
    let mut count = 0usize;
    for y in 0..side {
        for x in 0..side {
            if shape.contains(x as f64 + 0.5, y as f64 + 0.5, 0.7) {
                for c in 0..3 {
                    acc[c] += image[c * hw + y * side + x] as f64;
                }
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::ConstraintError(
            "target shape has no interior pixels".to_string(),
        ));
    }
    let mean = [acc[0] / count as f64, acc[1] / count as f64, acc[2] / count as f64];
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, p) in PALETTE.iter().enumerate() {
        let d = (0..3).map(|c| (mean[c] - p[c] as f64).powi(2)).sum::<f64>();
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn scene_generation_is_deterministic() {
        let a = generate_scene(&mut rng::seeded(7)).unwrap();
        let b = generate_scene(&mut rng::seeded(7)).unwrap();
        assert_eq!(a, b);
        assert_eq!(render_scene(&a), render_scene(&b));
    }

    #[test]
    fn scene_invariants_hold() {
        for seed in 0..200u64 {
            let scene = generate_scene(&mut rng::stream(1, seed)).unwrap();
            assert!((2..=4).contains(&scene.shapes.len()));
            for s in &scene.shapes {
                let [x0, y0, x1, y1] = s.bbox();
                assert!(x0 >= 0 && y0 >= 0, "shape leaves canvas: {s:?}");
                assert!(x1 < scene.side as i64 && y1 < scene.side as i64);
            }
            for (i, a) in scene.shapes.iter().enumerate() {
                for b in &scene.shapes[i + 1..] {
                    let d = ((a.cx - b.cx).powi(2) + (a.cy - b.cy).powi(2)).sqrt();
                    assert!(d >= a.extent() + b.extent() + 4.0 - 1e-9);
                }
            }
        }
    }

    #[test]
    fn zero_shape_request_rejected() {
        let err = generate_scene_counts(&mut rng::seeded(1), 0, 0);
        assert!(matches!(err, Err(Error::ConstraintError(_))));
    }

    /// (kind, color) pairs drawn by the generator stay within 3 sigma of
    /// uniform over 10k scenes.
    #[test]
    fn kind_color_distribution_uniform() {
        let mut counts = [[0usize; 6]; 3];
        let mut total = 0usize;
        for seed in 0..10_000u64 {
            let scene = generate_scene(&mut rng::stream(42, seed)).unwrap();
            for s in &scene.shapes {
                counts[s.kind as usize][s.color] += 1;
                total += 1;
            }
        }
        let p = 1.0 / 18.0;
        let expect = total as f64 * p;
        let sigma = (total as f64 * p * (1.0 - p)).sqrt();
        for kind in 0..3 {
            for color in 0..6 {
                let got = counts[kind][color] as f64;
                assert!(
                    (got - expect).abs() < 3.0 * sigma,
                    "pair ({kind},{color}): {got} vs {expect} (sigma {sigma})"
                );
            }
        }
    }

    #[test]
    fn sample_prompts_and_mask() {
        // two-shape scene: local prompt names only the target, global names both
        let scene = generate_two_same_kind_scene(&mut rng::seeded(33)).unwrap();
        let sample = make_sample(&scene, 1, Split::Sl, "t".to_string(), 0).unwrap();
        let target = &scene.shapes[1];
        let other = &scene.shapes[0];
        assert_eq!(
            sample.local_prompt,
            format!("{} {}", target.color_name(), target.kind.name())
        );
        assert!(sample.global_prompt.contains(target.color_name()));
        assert!(sample.global_prompt.contains(other.color_name()));
        assert!(sample.global_prompt.contains(" and "));
        // mask covers the target bbox
        let [x0, y0, x1, y1] = target.bbox();
        for y in y0..=y1 {
            for x in x0..=x1 {
                assert_eq!(sample.mask[y as usize * scene.side + x as usize], 1);
            }
        }
        // mask intersects no other-shape pixels
        let side = scene.side;
        for y in 0..side {
            for x in 0..side {
                if sample.mask[y * side + x] == 1 {
                    assert!(
                        !other.contains(x as f64 + 0.5, y as f64 + 0.5, 1.0),
                        "other shape leaks into mask at ({x},{y})"
                    );
                }
            }
        }
    }

    #[test]
    fn ssl_sample_has_no_clean_image() {
        let scene = generate_scene(&mut rng::seeded(9)).unwrap();
        let sample = make_sample(&scene, 0, Split::Ssl, "s".to_string(), 0).unwrap();
        assert!(sample.image.is_none());
        assert!(!sample.has_ground_truth);
        // masked image carries the sentinel inside the mask
        let hw = scene.side * scene.side;
        for (p, &m) in sample.mask.iter().enumerate() {
            if m == 1 {
                for c in 0..3 {
                    assert_eq!(sample.masked_image[c * hw + p], SENTINEL_U8);
                }
            }
        }
    }

    /// Rendering only the prompted shape reproduces the masked content of
    /// the clean image (anti-aliasing tolerance).
    #[test]
    fn local_prompt_faithfulness() {
        for seed in 0..50u64 {
            let scene = generate_scene(&mut rng::stream(17, seed)).unwrap();
            let target_index = (seed as usize) % scene.shapes.len();
            let sample =
                make_sample(&scene, target_index, Split::Sl, "f".to_string(), seed).unwrap();
            let only_target = render_shapes(&scene, &scene.shapes[target_index..=target_index]);
            let clean = sample.image.as_ref().unwrap();
            let hw = scene.side * scene.side;
            let mut diff = 0.0;
            let mut count = 0usize;
            for (p, &m) in sample.mask.iter().enumerate() {
                if m == 1 {
                    for c in 0..3 {
                        diff += (only_target[c * hw + p] as f64 - clean[c * hw + p] as f64).abs()
                            / 255.0;
                        count += 1;
                    }
                }
            }
            let mean_diff = diff / count as f64;
            assert!(mean_diff < 0.02, "seed {seed}: {mean_diff}");
        }
    }

    #[test]
    fn color_classifier_reads_rendered_color() {
        for seed in 200..260u64 {
            let scene = generate_scene(&mut rng::stream(18, seed)).unwrap();
            let img = render_scene(&scene);
            let imgf: Vec<f32> = {
                let hw = scene.side * scene.side;
                (0..3 * hw).map(|i| img[i] as f32 / 255.0).collect()
            };
            for (i, s) in scene.shapes.iter().enumerate() {
                assert_eq!(classify_region_color(&imgf, &scene, i).unwrap(), s.color);
            }
        }
    }

    #[test]
    fn two_same_kind_family() {
        for seed in 0..40u64 {
            let scene = generate_two_same_kind_scene(&mut rng::stream(19, seed)).unwrap();
            assert_eq!(scene.shapes.len(), 2);
            assert_eq!(scene.shapes[0].kind, scene.shapes[1].kind);
            assert_ne!(scene.shapes[0].color, scene.shapes[1].color);
        }
    }
}
