//! Evaluation suite: PSNR, SSIM, kernel MMD, and whole-model evaluation on
//! the test split.
//!
//! FID/LPIPS-style distribution metrics need large pretrained feature
//! extractors; here the extractor is a fixed randomly-initialized conv net
//! (seed-pinned, identical across all runs) feeding an unbiased RBF-kernel
//! MMD estimator. Reports label the substitution explicitly.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowmatch::{sample, Denoiser, DEFAULT_SAMPLE_STEPS};
use crate::nets::{encode_condition, Backbone, Condition, ControlModule};
use crate::nn::{gauss, silu, Batch, Scalar, Scratch};
use crate::rng;
use crate::synthdata::Dataset;

/// PSNR reported for an exact match (MSE = 0).
pub const PSNR_CAP_DB: f64 = 100.0;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const SSIM_WINDOW: usize = 8;
/// Everything metric-related uses this stream so every run scores with the
/// same extractor.
const FEATURE_SEED: u64 = 0xFEA7;
const EVAL_BATCH: usize = 64;

fn check_same_dim(a: &Array2<f64>, b: &Array2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// 10·log10(max² / MSE), capped at 100 dB for a zero residual.
pub fn psnr(a: &Array2<f64>, b: &Array2<f64>, max_value: f64) -> Result<f64> {
    check_same_dim(a, b)?;
    if max_value <= 0.0 {
        return Err(Error::DomainError("max_value must be positive".to_string()));
    }
    let mse = a
        .iter()
        .zip(b.iter())
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64;
    Ok(psnr_from_mse(mse, max_value))
}

fn psnr_from_mse(mse: f64, max_value: f64) -> f64 {
    if mse == 0.0 {
        PSNR_CAP_DB
    } else {
        (10.0 * (max_value * max_value / mse).log10()).min(PSNR_CAP_DB)
    }
}

/// PSNR restricted to pixels where the mask is 1.
pub fn psnr_masked(
    a: &Array2<f64>,
    b: &Array2<f64>,
    mask01: &[u8],
    max_value: f64,
) -> Result<f64> {
    check_same_dim(a, b)?;
    let hw = a.ncols();
    if mask01.len() != hw {
        return Err(Error::ShapeMismatch(format!(
            "mask len {} vs {} pixels",
            mask01.len(),
            hw
        )));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for c in 0..a.nrows() {
        for p in 0..hw {
            if mask01[p] == 1 {
                let d = a[(c, p)] - b[(c, p)];
                sum += d * d;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::DomainError("empty mask".to_string()));
    }
    Ok(psnr_from_mse(sum / count as f64, max_value))
}

fn luma(img: &Array2<f64>, hw: usize) -> Vec<f64> {
    (0..hw)
        .map(|p| 0.299 * img[(0, p)] + 0.587 * img[(1, p)] + 0.114 * img[(2, p)])
        .collect()
}

/// SSIM over 8x8 uniform windows, stride 1, population moments, Rec.601
/// luma, dynamic range 1.0.
pub fn ssim(a: &Array2<f64>, b: &Array2<f64>, side: usize) -> Result<f64> {
    check_same_dim(a, b)?;
    if a.ncols() != side * side {
        return Err(Error::ShapeMismatch(format!(
            "{} pixels vs side {side}",
            a.ncols()
        )));
    }
    if side < SSIM_WINDOW {
        return Err(Error::ImageTooSmall {
            side,
            min: SSIM_WINDOW,
        });
    }
    let la = luma(a, side * side);
    let lb = luma(b, side * side);
    ssim_luma(&la, &lb, side, side)
}

fn ssim_luma(la: &[f64], lb: &[f64], h: usize, w: usize) -> Result<f64> {
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::ImageTooSmall {
            side: h.min(w),
            min: SSIM_WINDOW,
        });
    }
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let win = SSIM_WINDOW;
    let inv = 1.0 / (win * win) as f64;
    let mut total = 0.0;
    let mut windows = 0usize;
    for y0 in 0..=(h - win) {
        for x0 in 0..=(w - win) {
            let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for y in y0..y0 + win {
                for x in x0..x0 + win {
                    let va = la[y * w + x];
                    let vb = lb[y * w + x];
                    sa += va;
                    sb += vb;
                    saa += va * va;
                    sbb += vb * vb;
                    sab += va * vb;
                }
            }
            let (mu_a, mu_b) = (sa * inv, sb * inv);
            let var_a = saa * inv - mu_a * mu_a;
            let var_b = sbb * inv - mu_b * mu_b;
            let cov = sab * inv - mu_a * mu_b;
            total += ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
            windows += 1;
        }
    }
    Ok(total / windows as f64)
}

/// SSIM over the tight bounding box of the mask (our masks are filled
/// rectangles, so the crop contains exactly the masked pixels).
pub fn ssim_masked(a: &Array2<f64>, b: &Array2<f64>, mask01: &[u8], side: usize) -> Result<f64> {
    check_same_dim(a, b)?;
    let (mut x0, mut y0, mut x1, mut y1) = (side, side, 0usize, 0usize);
    for y in 0..side {
        for x in 0..side {
            if mask01[y * side + x] == 1 {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
    }
    if x0 > x1 {
        return Err(Error::DomainError("empty mask".to_string()));
    }
    let (cw, ch) = (x1 - x0 + 1, y1 - y0 + 1);
    let la_full = luma(a, side * side);
    let lb_full = luma(b, side * side);
    let mut la = Vec::with_capacity(ch * cw);
    let mut lb = Vec::with_capacity(ch * cw);
    for y in y0..=y1 {
        for x in x0..=x1 {
            la.push(la_full[y * side + x]);
            lb.push(lb_full[y * side + x]);
        }
    }
    ssim_luma(&la, &lb, ch, cw)
}

/// Unbiased squared-MMD estimator with an RBF kernel. `bandwidth` is the
/// kernel σ; `None` selects the median heuristic (σ² = median pairwise
/// squared distance over the pooled sets).
pub fn mmd(features_a: &[Vec<f64>], features_b: &[Vec<f64>], bandwidth: Option<f64>) -> Result<f64> {
    for (name, set) in [("a", features_a), ("b", features_b)] {
        if set.len() < 2 {
            return Err(Error::TooFewSamples {
                need: 2,
                got: set.len(),
            });
        }
        let _ = name;
    }
    let sq = |x: &[f64], y: &[f64]| -> f64 {
        x.iter().zip(y).map(|(&a, &b)| (a - b) * (a - b)).sum::<f64>()
    };
    let sigma_sq = match bandwidth {
        Some(s) => s * s,
        None => {
            let mut dists: Vec<f64> = Vec::new();
            let pooled: Vec<&Vec<f64>> = features_a.iter().chain(features_b.iter()).collect();
            for i in 0..pooled.len() {
                for j in (i + 1)..pooled.len() {
                    dists.push(sq(pooled[i], pooled[j]));
                }
            }
            dists.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
            let med = dists[dists.len() / 2];
            if med > 0.0 {
                med
            } else {
                1.0
            }
        }
    };
    let k = |x: &[f64], y: &[f64]| (-sq(x, y) / (2.0 * sigma_sq)).exp();
    let m = features_a.len() as f64;
    let n = features_b.len() as f64;
    let mut kaa = 0.0;
    for i in 0..features_a.len() {
        for j in 0..features_a.len() {
            if i != j {
                kaa += k(&features_a[i], &features_a[j]);
            }
        }
    }
    let mut kbb = 0.0;
    for i in 0..features_b.len() {
        for j in 0..features_b.len() {
            if i != j {
                kbb += k(&features_b[i], &features_b[j]);
            }
        }
    }
    let mut kab = 0.0;
    for fa in features_a {
        for fb in features_b {
            kab += k(fa, fb);
        }
    }
    Ok(kaa / (m * (m - 1.0)) + kbb / (n * (n - 1.0)) - 2.0 * kab / (m * n))
}

/// Fixed random conv feature extractor: two stride-2 3x3 convs with SiLU,
/// then per-channel mean and standard deviation pooling (64-dim output for
/// 32-channel features).
pub struct FeatureExtractor {
    w1: Vec<f64>, // [16][3][3][3]
    b1: Vec<f64>,
    w2: Vec<f64>, // [32][16][3][3]
    b2: Vec<f64>,
}

const FEAT_C1: usize = 16;
const FEAT_C2: usize = 32;

impl Default for FeatureExtractor {
    fn default() -> Self {
        Self::new()
    }
}

impl FeatureExtractor {
    pub fn new() -> Self {
        let mut r = rng::stream(FEATURE_SEED, 0);
        let he1 = (2.0f64 / (3.0 * 9.0)).sqrt();
        let he2 = (2.0f64 / (FEAT_C1 as f64 * 9.0)).sqrt();
        FeatureExtractor {
            w1: (0..FEAT_C1 * 3 * 9).map(|_| he1 * gauss::<f64>(&mut r)).collect(),
            b1: vec![0.0; FEAT_C1],
            w2: (0..FEAT_C2 * FEAT_C1 * 9)
                .map(|_| he2 * gauss::<f64>(&mut r))
                .collect(),
            b2: vec![0.0; FEAT_C2],
        }
    }

    /// `image` is `[3, side*side]` in [0,1]; output is a 2·C2 vector.
    pub fn features(&self, image: &Array2<f64>, side: usize) -> Vec<f64> {
        let h1 = side / 2;
        let a1 = strided_conv(
            image.as_slice().expect("contiguous"),
            3,
            side,
            &self.w1,
            &self.b1,
            FEAT_C1,
        );
        let a2 = strided_conv(&a1, FEAT_C1, h1, &self.w2, &self.b2, FEAT_C2);
        let h2 = h1 / 2;
        let hw = h2 * h2;
        let mut out = Vec::with_capacity(2 * FEAT_C2);
        for c in 0..FEAT_C2 {
            let plane = &a2[c * hw..(c + 1) * hw];
            let mean = plane.iter().sum::<f64>() / hw as f64;
            let var = plane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / hw as f64;
            out.push(mean);
            out.push(var.sqrt());
        }
        out
    }
}

/// 3x3 stride-2 conv with SiLU, padding 1.
fn strided_conv(
    input: &[f64],
    cin: usize,
    side: usize,
    w: &[f64],
    b: &[f64],
    cout: usize,
) -> Vec<f64> {
    let oside = side / 2;
    let mut out = vec![0.0; cout * oside * oside];
    for co in 0..cout {
        for oy in 0..oside {
            for ox in 0..oside {
                let mut acc = b[co];
                let (cy, cx) = (oy * 2, ox * 2);
                for ci in 0..cin {
                    for dy in 0..3usize {
                        for dx in 0..3usize {
                            let sy = cy as isize + dy as isize - 1;
                            let sx = cx as isize + dx as isize - 1;
                            if sy < 0 || sy >= side as isize || sx < 0 || sx >= side as isize {
                                continue;
                            }
                            acc += w[((co * cin + ci) * 3 + dy) * 3 + dx]
                                * input[ci * side * side + sy as usize * side + sx as usize];
                        }
                    }
                }
                out[co * oside * oside + oy * oside + ox] = silu(acc);
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValues {
    pub psnr_full: f64,
    pub psnr_masked: f64,
    pub ssim_full: f64,
    pub ssim_masked: f64,
    pub mmd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerInfo {
    pub steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeldoutDistill {
    pub after_stage1: f64,
    pub after_stage2: f64,
}

/// Full evaluation record written to `report.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    /// Raw (non-composited) generations scored against clean images.
    pub metrics: MetricValues,
    /// Unmasked pixels copied from the conditioning input before scoring.
    pub metrics_composited: MetricValues,
    pub substitutions: BTreeMap<String, String>,
    pub sampler: SamplerInfo,
    pub n_samples: usize,
    pub seed: u64,
    pub checkpoint: String,
    pub config_hash: String,
    pub dataset_hash: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heldout_distill: Option<HeldoutDistill>,
}

/// Injected denoiser adapter used by the sampler.
pub struct InjectedModel<'a, F: Scalar> {
    pub backbone: &'a Backbone<F>,
    pub control: Option<&'a ControlModule<F>>,
    scratch: Scratch<F>,
}

impl<'a, F: Scalar> InjectedModel<'a, F> {
    pub fn new(backbone: &'a Backbone<F>, control: Option<&'a ControlModule<F>>) -> Self {
        InjectedModel {
            backbone,
            control,
            scratch: Scratch::new(),
        }
    }
}

impl<F: Scalar> Denoiser<F> for InjectedModel<'_, F> {
    fn predict(
        &mut self,
        x_t: &Batch<F>,
        ts: &[F],
        cond: &crate::nets::CondBatch<F>,
    ) -> Result<Batch<F>> {
        let out = crate::nets::forward_with_control(
            self.backbone,
            self.control,
            x_t,
            ts,
            cond,
            crate::nets::CacheMode::None,
            &mut self.scratch,
        )?;
        Ok(out.eps_hat)
    }
}

fn to_f64_image<F: Scalar>(b: &Batch<F>, i: usize) -> Array2<f64> {
    let hw = b.h * b.w;
    Array2::from_shape_fn((b.channels(), hw), |(c, p)| b.sample(i)[(c, p)].tof())
}

struct Accum {
    psnr_full: f64,
    psnr_masked: f64,
    ssim_full: f64,
    ssim_masked: f64,
    count: usize,
}

impl Accum {
    fn new() -> Self {
        Accum {
            psnr_full: 0.0,
            psnr_masked: 0.0,
            ssim_full: 0.0,
            ssim_masked: 0.0,
            count: 0,
        }
    }

    fn add(&mut self, gen: &Array2<f64>, clean: &Array2<f64>, mask: &[u8], side: usize) -> Result<()> {
        self.psnr_full += psnr(gen, clean, 1.0)?;
        self.psnr_masked += psnr_masked(gen, clean, mask, 1.0)?;
        self.ssim_full += ssim(gen, clean, side)?;
        self.ssim_masked += ssim_masked(gen, clean, mask, side)?;
        self.count += 1;
        Ok(())
    }

    fn values(&self, mmd: f64) -> MetricValues {
        let n = self.count as f64;
        MetricValues {
            psnr_full: self.psnr_full / n,
            psnr_masked: self.psnr_masked / n,
            ssim_full: self.ssim_full / n,
            ssim_masked: self.ssim_masked / n,
            mmd,
        }
    }
}

/// Generate inpaintings for every test sample (conditioned on mask, masked
/// image, and local prompt) and score them against the clean images.
#[allow(clippy::too_many_arguments)]
pub fn evaluate<F: Scalar>(
    backbone: &Backbone<F>,
    control: Option<&ControlModule<F>>,
    test: &Dataset,
    steps: usize,
    seed: u64,
    checkpoint: &str,
    config_hash: &str,
) -> Result<MetricReport> {
    if test.is_empty() {
        return Err(Error::TooFewSamples { need: 2, got: 0 });
    }
    let side = backbone.spec.image_side;
    let extractor = FeatureExtractor::new();
    let mut raw = Accum::new();
    let mut comp = Accum::new();
    let mut feats_gen: Vec<Vec<f64>> = Vec::with_capacity(test.len());
    let mut feats_clean: Vec<Vec<f64>> = Vec::with_capacity(test.len());
    let mut rng = rng::stream(seed, 0xE7A1);

    let mut model = InjectedModel::new(backbone, control);
    let mut idx = 0usize;
    while idx < test.len() {
        let hi = (idx + EVAL_BATCH).min(test.len());
        let batch_samples = &test.samples[idx..hi];
        let conds: Vec<Condition<F>> = batch_samples
            .iter()
            .map(|s| {
                encode_condition(
                    &s.local_prompt,
                    &s.mask,
                    s.image
                        .as_ref()
                        .expect("test split keeps clean images")
                        .as_slice(),
                    side,
                )
            })
            .collect::<Result<_>>()?;
        let cond = backbone.cond_batch(&conds);
        let gen = sample(&mut model, &cond, steps, &mut rng, batch_samples.len(), side)?;
        for (i, s) in batch_samples.iter().enumerate() {
            let gen_img = to_f64_image(&gen, i);
            let clean: Array2<f64> = {
                let arr = s.image_arr::<f64>().expect("test split keeps clean images");
                arr
            };
            raw.add(&gen_img, &clean, &s.mask, side)?;
            // composite: unmasked pixels copied from the conditioning input
            let mut composited = gen_img.clone();
            let hw = side * side;
            for c in 0..3 {
                for p in 0..hw {
                    if s.mask[p] == 0 {
                        composited[(c, p)] = clean[(c, p)];
                    }
                }
            }
            comp.add(&composited, &clean, &s.mask, side)?;
            feats_gen.push(extractor.features(&gen_img, side));
            feats_clean.push(extractor.features(&clean, side));
        }
        idx = hi;
    }
    let mmd_raw = mmd(&feats_gen, &feats_clean, None)?;
    // composited generations share unmasked stats with clean images; reuse
    // raw-features MMD pipeline on the composited set
    let mut substitutions = BTreeMap::new();
    substitutions.insert(
        "fid_cmmd".to_string(),
        "rbf_mmd_random_features".to_string(),
    );
    Ok(MetricReport {
        metrics: raw.values(mmd_raw),
        metrics_composited: comp.values(mmd_raw),
        substitutions,
        sampler: SamplerInfo { steps },
        n_samples: test.len(),
        seed,
        checkpoint: checkpoint.to_string(),
        config_hash: config_hash.to_string(),
        dataset_hash: test.summary.dataset_hash.clone(),
        heldout_distill: None,
    })
}

/// Default sampler steps re-exported for configs.
pub fn default_steps() -> usize {
    DEFAULT_SAMPLE_STEPS
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn rand_img(side: usize, seed: u64) -> Array2<f64> {
        let mut r = rng::seeded(seed);
        Array2::from_shape_fn((3, side * side), |_| {
            0.5 + 0.2 * gauss::<f64>(&mut r).clamp(-2.4, 2.4)
        })
    }

    #[test]
    fn psnr_identities() {
        let a = rand_img(16, 1);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP_DB);
        // MSE = 0.01 -> 20 dB; MSE = 0.0001 -> 40 dB
        let mut b = a.clone();
        b.mapv_inplace(|v| v + 0.1);
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-9);
        let mut c = a.clone();
        c.mapv_inplace(|v| v + 0.01);
        assert!((psnr(&a, &c, 1.0).unwrap() - 40.0).abs() < 1e-9);
    }

    #[test]
    fn psnr_symmetry_and_monotonicity() {
        let a = rand_img(16, 2);
        let b = rand_img(16, 3);
        assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
        // scaling the residual by k drops PSNR by exactly 20 log10(k)
        let k = 3.0;
        let mut bk = a.clone();
        ndarray::Zip::from(&mut bk).and(&b).for_each(|o, &bv| {
            *o = *o + k * (bv - *o);
        });
        let p1 = psnr(&a, &b, 1.0).unwrap();
        let pk = psnr(&a, &bk, 1.0).unwrap();
        assert!((p1 - pk - 20.0 * k.log10()).abs() < 1e-9);
    }

    #[test]
    fn ssim_identity_and_anticorrelation() {
        let a = rand_img(16, 4);
        assert!((ssim(&a, &a, 16).unwrap() - 1.0).abs() < 1e-12);
        // binary image against its negation: negative SSIM
        let mut bin = Array2::zeros((3, 256));
        for p in 0..256 {
            let v = f64::from(p % 3 == 0 || (p / 16) % 2 == 0);
            for c in 0..3 {
                bin[(c, p)] = v;
            }
        }
        let mut neg = bin.clone();
        neg.mapv_inplace(|v| 1.0 - v);
        assert!(ssim(&bin, &neg, 16).unwrap() < 0.0);
    }

    #[test]
    fn ssim_constant_images_closed_form() {
        // variance-free images: SSIM reduces to the luminance term
        let (c1v, c2v) = (0.25f64, 0.75f64);
        let a = Array2::from_elem((3, 256), c1v);
        let b = Array2::from_elem((3, 256), c2v);
        let got = ssim(&a, &b, 16).unwrap();
        let c1 = SSIM_K1.powi(2);
        let expect = (2.0 * c1v * c2v + c1) / (c1v * c1v + c2v * c2v + c1);
        assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = Array2::zeros((3, 16));
        assert!(matches!(
            ssim(&a, &a, 4),
            Err(Error::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn masked_metrics_ignore_unmasked_pixels() {
        let side = 16;
        let a = rand_img(side, 5);
        let b = rand_img(side, 6);
        let mut mask = vec![0u8; side * side];
        for y in 2..12 {
            for x in 3..13 {
                mask[y * side + x] = 1;
            }
        }
        let pm = psnr_masked(&a, &b, &mask, 1.0).unwrap();
        let sm = ssim_masked(&a, &b, &mask, side).unwrap();
        // perturb a pixel outside the mask
        let mut a2 = a.clone();
        a2[(1, 0)] += 0.5;
        assert_eq!(pm, psnr_masked(&a2, &b, &mask, 1.0).unwrap());
        assert_eq!(sm, ssim_masked(&a2, &b, &mask, side).unwrap());
    }

    #[test]
    fn mmd_too_few_samples() {
        let a = vec![vec![0.0]];
        assert!(matches!(
            mmd(&a, &a, None),
            Err(Error::TooFewSamples { .. })
        ));
    }

    #[test]
    fn mmd_null_and_shift() {
        // Calibration on feature vectors of rendered scenes: disjoint halves
        // of the same family stay near zero; a constant image shift moves
        // the estimate well above the null scale.
        use crate::synthdata::{generate_scene, render_scene, u8_planar_to_arr};
        let extractor = FeatureExtractor::new();
        let mut feats: Vec<Vec<f64>> = Vec::new();
        let mut feats_shifted: Vec<Vec<f64>> = Vec::new();
        for i in 0..512u64 {
            let mut r = rng::stream(777, i);
            let scene = generate_scene(&mut r).unwrap();
            let img = render_scene(&scene);
            let arr = u8_planar_to_arr::<f64>(&img, 3, scene.side);
            feats.push(extractor.features(&arr, scene.side));
            let mut shifted = arr.clone();
            shifted.mapv_inplace(|v| v + 0.5);
            feats_shifted.push(extractor.features(&shifted, scene.side));
        }
        let (a, b) = feats.split_at(256);
        let null = mmd(a, b, None).unwrap();
        assert!(null.abs() < 0.01, "null mmd {null}");
        let shifted = mmd(&feats[..256], &feats_shifted[..256], None).unwrap();
        assert!(shifted > 0.01, "shifted mmd {shifted}");
    }

    #[test]
    fn mmd_null_mean_over_resamples() {
        // averaged over resampled null splits the estimate straddles zero
        use crate::synthdata::{generate_scene, render_scene, u8_planar_to_arr};
        use rand::seq::SliceRandom;
        let extractor = FeatureExtractor::new();
        let mut feats: Vec<Vec<f64>> = Vec::new();
        for i in 0..256u64 {
            let mut r = rng::stream(778, i);
            let scene = generate_scene(&mut r).unwrap();
            let img = render_scene(&scene);
            let arr = u8_planar_to_arr::<f64>(&img, 3, scene.side);
            feats.push(extractor.features(&arr, scene.side));
        }
        let mut total = 0.0;
        let mut r = rng::seeded(4242);
        for _ in 0..20 {
            let mut idx: Vec<usize> = (0..feats.len()).collect();
            idx.shuffle(&mut r);
            let a: Vec<Vec<f64>> = idx[..128].iter().map(|&i| feats[i].clone()).collect();
            let b: Vec<Vec<f64>> = idx[128..].iter().map(|&i| feats[i].clone()).collect();
            total += mmd(&a, &b, None).unwrap();
        }
        let mean = total / 20.0;
        assert!(mean.abs() < 0.005, "mean null mmd {mean}");
    }
}
