//! Frozen toy backbone denoiser plus teacher/student control modules.
//!
//! The backbone is a fixed-width residual conv net over an 8x8 hidden grid
//! (4x4 patch embedding of a 32x32 image), with additive timestep embedding
//! and pooled prompt-embedding modulation in every block. A control module
//! mirrors the block structure, reads `(x_t, mask, masked_image)`, and emits
//! one feature map per layer; each feature goes through a zero-initialized
//! 1x1 output projection and is added to the backbone hidden state at the
//! backbone layers its alignment plan targets.
//!
//! Backbone weights are seed-pinned and never receive gradients. The
//! backward pass here propagates gradients *through* the frozen backbone
//! into the control module only.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::alignment::AlignmentPlan;
use crate::error::{Error, Result};
use crate::nn::{
    add_sample_bias, conv1x1_backward_input, conv1x1_backward_weights, conv1x1_forward,
    conv3x3_backward_input, conv3x3_backward_weights, conv3x3_forward, dsilu, gauss, matmul_into,
    patchify, silu, sum_spatial, time_embedding, unpatchify, Batch, Scalar, Scratch,
};
use crate::rng;
use crate::synthdata::SENTINEL_U8;
use crate::vocab;

pub const CONTROL_IN_CHANNELS: usize = 7; // x_t(3) + mask(1) + masked(3)

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackboneSpec {
    pub layers: usize,
    pub width: usize,
    pub image_side: usize,
    pub patch: usize,
}

impl Default for BackboneSpec {
    fn default() -> Self {
        BackboneSpec {
            layers: 8,
            width: 64,
            image_side: 32,
            patch: 4,
        }
    }
}

impl BackboneSpec {
    pub fn grid(&self) -> usize {
        self.image_side / self.patch
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Teacher,
    Student,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlModuleSpec {
    pub layers: usize,
    pub role: Role,
}

/// One conditioning record: token ids, binary mask, sentinel-filled image.
#[derive(Debug, Clone)]
pub struct Condition<F> {
    pub tokens: Vec<usize>,
    /// `[1, side*side]`, values exactly 0 or 1.
    pub mask: Array2<F>,
    /// `[3, side*side]`, sentinel fill inside the mask.
    pub masked_image: Array2<F>,
}

/// Tokenize a prompt and apply the sentinel fill inside the mask.
pub fn encode_condition<F: Scalar>(
    prompt: &str,
    mask01: &[u8],
    image_u8: &[u8],
    side: usize,
) -> Result<Condition<F>> {
    let tokens = vocab::tokenize(prompt)?;
    let hw = side * side;
    if mask01.len() != hw || image_u8.len() != 3 * hw {
        return Err(Error::ShapeMismatch(format!(
            "mask {} / image {} vs side {side}",
            mask01.len(),
            image_u8.len()
        )));
    }
    let sentinel = F::fromf(SENTINEL_U8 as f64 / 255.0);
    let mask = Array2::from_shape_fn((1, hw), |(_, i)| F::fromf(mask01[i] as f64));
    let masked_image = Array2::from_shape_fn((3, hw), |(c, i)| {
        if mask01[i] == 1 {
            sentinel
        } else {
            F::fromf(image_u8[c * hw + i] as f64 / 255.0)
        }
    });
    Ok(Condition {
        tokens,
        mask,
        masked_image,
    })
}

/// Batched conditioning: pooled prompt embeddings plus stacked mask/masked
/// image planes.
pub struct CondBatch<F> {
    /// `[width, N]` pooled prompt embedding per sample.
    pub pemb: Array2<F>,
    pub mask: Batch<F>,
    pub masked: Batch<F>,
}

#[derive(Debug, Clone)]
pub struct Block<F> {
    pub w_conv: Array2<F>,
    pub b_conv: Array2<F>,
    pub w_t: Array2<F>,
    pub w_p: Array2<F>,
    pub w_out: Array2<F>,
    pub b_out: Array2<F>,
}

pub struct BlockCache<F> {
    input: Option<Batch<F>>,
    z: Batch<F>,
    u: Option<Batch<F>>,
}

#[derive(Debug, Clone, Default)]
pub struct BlockGrads<F> {
    pub w_conv: Array2<F>,
    pub b_conv: Array2<F>,
    pub w_t: Array2<F>,
    pub w_p: Array2<F>,
    pub w_out: Array2<F>,
    pub b_out: Array2<F>,
}

impl<F: Scalar> Block<F> {
    fn init(width: usize, rng: &mut rng::Rng) -> Self {
        let he3 = (2.0 / (width * 9) as f64).sqrt();
        let emb_scale = 0.1 * (1.0 / width as f64).sqrt();
        let out_scale = 0.1 * (2.0 / width as f64).sqrt();
        Block {
            w_conv: rand_mat(width, width * 9, he3, rng),
            b_conv: Array2::zeros((width, 1)),
            w_t: rand_mat(width, width, emb_scale, rng),
            w_p: rand_mat(width, width, emb_scale, rng),
            w_out: rand_mat(width, width, out_scale, rng),
            b_out: Array2::zeros((width, 1)),
        }
    }

    fn zero_grads(&self) -> BlockGrads<F> {
        BlockGrads {
            w_conv: Array2::zeros(self.w_conv.dim()),
            b_conv: Array2::zeros(self.b_conv.dim()),
            w_t: Array2::zeros(self.w_t.dim()),
            w_p: Array2::zeros(self.w_p.dim()),
            w_out: Array2::zeros(self.w_out.dim()),
            b_out: Array2::zeros(self.b_out.dim()),
        }
    }

    /// out = h + W_out · silu(conv(h) + W_t·temb + W_p·pemb)
    fn forward(
        &self,
        h: &Batch<F>,
        temb: &Array2<F>,
        pemb: &Array2<F>,
        scratch: &mut Scratch<F>,
        keep: CacheMode,
    ) -> (Batch<F>, Option<BlockCache<F>>) {
        let mut z = conv3x3_forward(&self.w_conv, &self.b_conv, h, scratch);
        let width = self.w_t.nrows();
        let n = h.n;
        let mut bias = Array2::zeros((width, n));
        matmul_into(&self.w_t.view(), &temb.view(), &mut bias.view_mut(), false);
        matmul_into(&self.w_p.view(), &pemb.view(), &mut bias.view_mut(), true);
        add_sample_bias(&mut z, &bias);
        let mut u = z.clone();
        u.data.mapv_inplace(silu);
        let mut out = conv1x1_forward(&self.w_out, &self.b_out, &u);
        out.data += &h.data;
        let cache = match keep {
            CacheMode::None => None,
            CacheMode::Frozen => Some(BlockCache {
                input: None,
                z,
                u: None,
            }),
            CacheMode::Trainable => Some(BlockCache {
                input: Some(h.clone()),
                z,
                u: Some(u),
            }),
        };
        (out, cache)
    }

    /// Returns the gradient at the block input; accumulates parameter
    /// gradients when `grads` is provided (trainable cache required then).
    fn backward(
        &self,
        d_out: &Batch<F>,
        cache: &BlockCache<F>,
        temb: &Array2<F>,
        pemb: &Array2<F>,
        grads: Option<&mut BlockGrads<F>>,
        scratch: &mut Scratch<F>,
    ) -> Batch<F> {
        let mut du = conv1x1_backward_input(&self.w_out, d_out);
        ndarray::Zip::from(&mut du.data)
            .and(&cache.z.data)
            .for_each(|d, &z| *d = *d * dsilu(z));
        let dz = du;
        if let Some(g) = grads {
            let u = cache.u.as_ref().expect("trainable cache keeps u");
            let input = cache.input.as_ref().expect("trainable cache keeps input");
            conv1x1_backward_weights(u, d_out, &mut g.w_out, &mut g.b_out);
            let s = sum_spatial(&dz);
            general_mm_acc(&s.view(), &temb.t(), &mut g.w_t);
            general_mm_acc(&s.view(), &pemb.t(), &mut g.w_p);
            conv3x3_backward_weights(input, &dz, &mut g.w_conv, &mut g.b_conv, scratch);
        }
        let mut d_in = conv3x3_backward_input(&self.w_conv, &dz, self.w_conv.nrows(), scratch);
        d_in.data += &d_out.data; // residual path
        d_in
    }
}

fn general_mm_acc<F: Scalar>(a: &ArrayView2<F>, b: &ArrayView2<F>, out: &mut Array2<F>) {
    ndarray::linalg::general_mat_mul(F::one(), a, b, F::one(), &mut out.view_mut());
}

fn rand_mat<F: Scalar>(r: usize, c: usize, std: f64, rng: &mut rng::Rng) -> Array2<F> {
    Array2::from_shape_fn((r, c), |_| {
        F::fromf(std) * gauss::<F>(rng)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheMode {
    None,
    Frozen,
    Trainable,
}

pub struct Backbone<F> {
    pub spec: BackboneSpec,
    pub embed: Array2<F>,
    pub w_pe: Array2<F>,
    pub b_pe: Array2<F>,
    pub blocks: Vec<Block<F>>,
    pub w_head: Array2<F>,
    pub b_head: Array2<F>,
}

impl<F: Scalar> Backbone<F> {
    /// Seed-pinned random backbone; frozen for the lifetime of every run.
    pub fn init(spec: BackboneSpec, seed: u64) -> Self {
        let mut r = rng::stream(seed, 0xBACB_0000);
        let c = spec.width;
        let pk = spec.patch * spec.patch;
        Backbone {
            spec,
            embed: rand_mat(vocab::vocab_size(), c, 1.0, &mut r),
            w_pe: rand_mat(c, 3 * pk, (2.0 / (3 * pk) as f64).sqrt(), &mut r),
            b_pe: Array2::zeros((c, 1)),
            blocks: (0..spec.layers).map(|_| Block::init(c, &mut r)).collect(),
            w_head: rand_mat(3 * pk, c, (2.0 / c as f64).sqrt(), &mut r),
            b_head: Array2::zeros((3 * pk, 1)),
        }
    }

    /// Mean token embedding per sample, `[width, N]`.
    pub fn pool_prompts(&self, token_lists: &[&[usize]]) -> Array2<F> {
        let c = self.spec.width;
        let mut out = Array2::zeros((c, token_lists.len()));
        for (n, tokens) in token_lists.iter().enumerate() {
            let inv = F::fromf(1.0 / tokens.len() as f64);
            for &t in tokens.iter() {
                for ch in 0..c {
                    out[(ch, n)] += self.embed[(t, ch)] * inv;
                }
            }
        }
        out
    }

    /// Build a batched condition block from per-sample conditions.
    pub fn cond_batch(&self, conds: &[Condition<F>]) -> CondBatch<F> {
        let side = self.spec.image_side;
        let masks: Vec<Array2<F>> = conds.iter().map(|c| c.mask.clone()).collect();
        let maskeds: Vec<Array2<F>> = conds.iter().map(|c| c.masked_image.clone()).collect();
        let tokens: Vec<&[usize]> = conds.iter().map(|c| c.tokens.as_slice()).collect();
        CondBatch {
            pemb: self.pool_prompts(&tokens),
            mask: Batch::from_samples(&masks, side, side),
            masked: Batch::from_samples(&maskeds, side, side),
        }
    }

    pub fn time_embeddings(&self, ts: &[F]) -> Array2<F> {
        let c = self.spec.width;
        let mut out = Array2::zeros((c, ts.len()));
        for (n, &t) in ts.iter().enumerate() {
            let e = time_embedding(t, c);
            for ch in 0..c {
                out[(ch, n)] = e[ch];
            }
        }
        out
    }

    pub fn checksum(&self) -> String {
        checksum_params(self.param_list())
    }

    fn param_list(&self) -> Vec<&Array2<F>> {
        let mut v: Vec<&Array2<F>> = vec![&self.embed, &self.w_pe, &self.b_pe];
        for b in &self.blocks {
            v.extend([&b.w_conv, &b.b_conv, &b.w_t, &b.w_p, &b.w_out, &b.b_out]);
        }
        v.extend([&self.w_head, &self.b_head]);
        v
    }
}

pub struct ControlModule<F> {
    pub spec: ControlModuleSpec,
    /// Full alignment plan (student) or identity plan (teacher).
    pub plan: AlignmentPlan,
    /// Per-layer backbone injection targets, 1-based.
    pub targets: Vec<Vec<usize>>,
    pub w_pe: Array2<F>,
    pub b_pe: Array2<F>,
    pub blocks: Vec<Block<F>>,
    pub projs: Vec<(Array2<F>, Array2<F>)>,
}

/// Parameter gradients mirroring [`ControlModule`].
pub struct ControlGrads<F> {
    pub w_pe: Array2<F>,
    pub b_pe: Array2<F>,
    pub blocks: Vec<BlockGrads<F>>,
    pub projs: Vec<(Array2<F>, Array2<F>)>,
}

impl<F: Scalar> ControlModule<F> {
    /// Initialize a control module from the backbone prefix: trunk block j
    /// copies backbone block j, the patch embedding copies the x_t channels
    /// (zeros for mask/masked channels), and every output projection starts
    /// at zero so the initial injection is a no-op.
    pub fn init_from_backbone(
        backbone: &Backbone<F>,
        layers: usize,
        role: Role,
        plan: AlignmentPlan,
    ) -> Result<Self> {
        let spec = backbone.spec;
        if layers > spec.layers {
            return Err(Error::ShapeMismatch(format!(
                "control layers {layers} exceed backbone layers {}",
                spec.layers
            )));
        }
        if plan.injection.len() != layers {
            return Err(Error::PlanMismatch(format!(
                "plan has {} injection entries for {layers} layers",
                plan.injection.len()
            )));
        }
        for entry in &plan.injection {
            for &t in entry {
                if t < 1 || t > spec.layers {
                    return Err(Error::InvalidTarget {
                        teacher_layer: 0,
                        target: t,
                        backbone_layers: spec.layers,
                    });
                }
            }
        }
        let c = spec.width;
        let pk = spec.patch * spec.patch;
        let mut w_pe = Array2::zeros((c, CONTROL_IN_CHANNELS * pk));
        // x_t occupies the first 3 channels of the control input.
        for row in 0..c {
            for col in 0..3 * pk {
                w_pe[(row, col)] = backbone.w_pe[(row, col)];
            }
        }
        let targets = plan.injection.clone();
        Ok(ControlModule {
            spec: ControlModuleSpec { layers, role },
            plan,
            targets,
            w_pe,
            b_pe: backbone.b_pe.clone(),
            blocks: backbone.blocks[..layers].to_vec(),
            projs: (0..layers)
                .map(|_| (Array2::zeros((c, c)), Array2::zeros((c, 1))))
                .collect(),
        })
    }

    pub fn zero_grads(&self) -> ControlGrads<F> {
        ControlGrads {
            w_pe: Array2::zeros(self.w_pe.dim()),
            b_pe: Array2::zeros(self.b_pe.dim()),
            blocks: self.blocks.iter().map(Block::zero_grads).collect(),
            projs: self
                .projs
                .iter()
                .map(|(w, b)| (Array2::zeros(w.dim()), Array2::zeros(b.dim())))
                .collect(),
        }
    }

    pub fn param_shapes(&self) -> Vec<(usize, usize)> {
        self.param_list().iter().map(|p| p.dim()).collect()
    }

    fn param_list(&self) -> Vec<&Array2<F>> {
        let mut v: Vec<&Array2<F>> = vec![&self.w_pe, &self.b_pe];
        for b in &self.blocks {
            v.extend([&b.w_conv, &b.b_conv, &b.w_t, &b.w_p, &b.w_out, &b.b_out]);
        }
        for (w, b) in &self.projs {
            v.extend([w, b]);
        }
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Array2<F>> {
        let mut v: Vec<&mut Array2<F>> = vec![&mut self.w_pe, &mut self.b_pe];
        for b in &mut self.blocks {
            v.extend([
                &mut b.w_conv,
                &mut b.b_conv,
                &mut b.w_t,
                &mut b.w_p,
                &mut b.w_out,
                &mut b.b_out,
            ]);
        }
        for (w, b) in &mut self.projs {
            v.push(w);
            v.push(b);
        }
        v
    }

    pub fn checksum(&self) -> String {
        checksum_params(self.param_list())
    }
}

impl<F: Scalar> ControlGrads<F> {
    pub fn flat(&self) -> Vec<&Array2<F>> {
        let mut v: Vec<&Array2<F>> = vec![&self.w_pe, &self.b_pe];
        for b in &self.blocks {
            v.extend([&b.w_conv, &b.b_conv, &b.w_t, &b.w_p, &b.w_out, &b.b_out]);
        }
        for (w, b) in &self.projs {
            v.extend([w, b]);
        }
        v
    }

    pub fn scale(&mut self, k: F) {
        // used by gradient-accumulation tests
        let mut all: Vec<&mut Array2<F>> = vec![&mut self.w_pe, &mut self.b_pe];
        for b in &mut self.blocks {
            all.extend([
                &mut b.w_conv,
                &mut b.b_conv,
                &mut b.w_t,
                &mut b.w_p,
                &mut b.w_out,
                &mut b.b_out,
            ]);
        }
        for (w, b) in &mut self.projs {
            all.push(w);
            all.push(b);
        }
        for a in all {
            a.mapv_inplace(|v| v * k);
        }
    }
}

fn checksum_params<F: Scalar>(params: Vec<&Array2<F>>) -> String {
    let mut hasher = Sha256::new();
    for p in params {
        for &v in p.iter() {
            hasher.update(v.tof().to_le_bytes());
        }
    }
    format!("{:x}", hasher.finalize())
}

/// Everything the backward pass needs from one injected forward.
pub struct ForwardCaches<F> {
    backbone_blocks: Vec<BlockCache<F>>,
    control_input: Batch<F>,
    control_blocks: Vec<BlockCache<F>>,
    temb: Array2<F>,
}

pub struct ForwardOut<F> {
    pub eps_hat: Batch<F>,
    pub feats: Vec<Batch<F>>,
    pub caches: Option<ForwardCaches<F>>,
}

/// Injected forward pass. With `control = None` this is the bare backbone.
/// `cache` must be `Trainable` to call [`backward_control`] afterwards.
pub fn forward_with_control<F: Scalar>(
    backbone: &Backbone<F>,
    control: Option<&ControlModule<F>>,
    x_t: &Batch<F>,
    ts: &[F],
    cond: &CondBatch<F>,
    cache: CacheMode,
    scratch: &mut Scratch<F>,
) -> Result<ForwardOut<F>> {
    let spec = backbone.spec;
    let side = spec.image_side;
    if x_t.h != side || x_t.w != side || x_t.channels() != 3 {
        return Err(Error::ShapeMismatch(format!(
            "x_t is [{}x{}x{}], expected [3x{side}x{side}]",
            x_t.channels(),
            x_t.h,
            x_t.w
        )));
    }
    if ts.len() != x_t.n || cond.mask.n != x_t.n || cond.masked.n != x_t.n {
        return Err(Error::ShapeMismatch(
            "batch size disagreement between x_t, t, and condition".to_string(),
        ));
    }
    let n = x_t.n;
    let g = spec.grid();
    let temb = backbone.time_embeddings(ts);

    // Control trunk first: features do not depend on backbone hidden state.
    let mut feats: Vec<Batch<F>> = Vec::new();
    let mut injected: Vec<Batch<F>> = Vec::new();
    let mut control_blocks: Vec<BlockCache<F>> = Vec::new();
    let mut control_input = Batch::zeros(0, 0, 0, 0);
    if let Some(ctrl) = control {
        if ctrl.blocks.len() != ctrl.targets.len() {
            return Err(Error::PlanMismatch(format!(
                "control has {} layers but {} target entries",
                ctrl.blocks.len(),
                ctrl.targets.len()
            )));
        }
        let mut input = Batch::zeros(CONTROL_IN_CHANNELS, n, side, side);
        for c in 0..3 {
            input.data.row_mut(c).assign(&x_t.data.row(c));
        }
        input.data.row_mut(3).assign(&cond.mask.data.row(0));
        for c in 0..3 {
            input.data.row_mut(4 + c).assign(&cond.masked.data.row(c));
        }
        let col = patchify(&input, spec.patch);
        let mut h = Batch::zeros(spec.width, n, g, g);
        matmul_into(&ctrl.w_pe.view(), &col.view(), &mut h.data.view_mut(), false);
        for (c, mut row) in h.data.rows_mut().into_iter().enumerate() {
            let b = ctrl.b_pe[(c, 0)];
            row.mapv_inplace(|v| v + b);
        }
        for (j, block) in ctrl.blocks.iter().enumerate() {
            let (out, bc) = block.forward(&h, &temb, &cond.pemb, scratch, cache_for_control(cache));
            if let Some(bc) = bc {
                control_blocks.push(bc);
            }
            h = out;
            let inj = conv1x1_forward(&ctrl.projs[j].0, &ctrl.projs[j].1, &h);
            feats.push(h.clone());
            injected.push(inj);
        }
        if cache == CacheMode::Trainable {
            control_input = input;
        }
    }

    // Backbone with injections added at each targeted block input.
    let col = patchify(x_t, spec.patch);
    let mut h = Batch::zeros(spec.width, n, g, g);
    matmul_into(&backbone.w_pe.view(), &col.view(), &mut h.data.view_mut(), false);
    for (c, mut row) in h.data.rows_mut().into_iter().enumerate() {
        let b = backbone.b_pe[(c, 0)];
        row.mapv_inplace(|v| v + b);
    }
    let mut backbone_blocks: Vec<BlockCache<F>> = Vec::new();
    for (b_idx, block) in backbone.blocks.iter().enumerate() {
        if let Some(ctrl) = control {
            for (j, targets) in ctrl.targets.iter().enumerate() {
                if targets.contains(&(b_idx + 1)) {
                    h.data += &injected[j].data;
                }
            }
        }
        let keep = if cache == CacheMode::None {
            CacheMode::None
        } else {
            CacheMode::Frozen
        };
        let (out, bc) = block.forward(&h, &temb, &cond.pemb, scratch, keep);
        if let Some(bc) = bc {
            backbone_blocks.push(bc);
        }
        h = out;
    }
    let mut patch_vals = Array2::zeros((3 * spec.patch * spec.patch, n * g * g));
    matmul_into(&backbone.w_head.view(), &h.data.view(), &mut patch_vals.view_mut(), false);
    for (c, mut row) in patch_vals.rows_mut().into_iter().enumerate() {
        let b = backbone.b_head[(c, 0)];
        row.mapv_inplace(|v| v + b);
    }
    let eps_hat = unpatchify(&patch_vals, 3, n, side, side, spec.patch);

    let caches = (cache == CacheMode::Trainable).then_some(ForwardCaches {
        backbone_blocks,
        control_input,
        control_blocks,
        temb,
    });
    Ok(ForwardOut {
        eps_hat,
        feats,
        caches,
    })
}

fn cache_for_control(mode: CacheMode) -> CacheMode {
    match mode {
        CacheMode::Trainable => CacheMode::Trainable,
        _ => CacheMode::None,
    }
}

/// Backpropagate `d_eps_hat` (gradient at the model output) and `d_feats`
/// (direct gradients on the raw control features, e.g. from the feature
/// loss) into control-module parameter gradients. The backbone stays
/// untouched: only input gradients flow through its frozen blocks.
#[allow(clippy::too_many_arguments)]
pub fn backward_control<F: Scalar>(
    backbone: &Backbone<F>,
    control: &ControlModule<F>,
    out: &ForwardOut<F>,
    d_eps_hat: &Batch<F>,
    d_feats: &[Option<Batch<F>>],
    cond: &CondBatch<F>,
    grads: &mut ControlGrads<F>,
    scratch: &mut Scratch<F>,
) -> Result<()> {
    let caches = out
        .caches
        .as_ref()
        .ok_or_else(|| Error::Numeric("backward requires a trainable-cached forward".to_string()))?;
    let spec = backbone.spec;
    let n = d_eps_hat.n;
    let g = spec.grid();
    let temb = &caches.temb;

    // Head: eps = unpatchify(W_head · h + b_head)
    let d_patch = patchify(d_eps_hat, spec.patch);
    let mut d_h = Batch::zeros(spec.width, n, g, g);
    ndarray::linalg::general_mat_mul(
        F::one(),
        &backbone.w_head.t(),
        &d_patch.view(),
        F::zero(),
        &mut d_h.data.view_mut(),
    );

    // Frozen backbone blocks, collecting gradients at injection points.
    let mut d_inj: Vec<Batch<F>> = (0..control.blocks.len())
        .map(|_| Batch::zeros(spec.width, n, g, g))
        .collect();
    for b_idx in (0..backbone.blocks.len()).rev() {
        d_h = backbone.blocks[b_idx].backward(
            &d_h,
            &caches.backbone_blocks[b_idx],
            temb,
            &cond.pemb,
            None,
            scratch,
        );
        for (j, targets) in control.targets.iter().enumerate() {
            if targets.contains(&(b_idx + 1)) {
                d_inj[j].data += &d_h.data;
            }
        }
    }

    // Control trunk, top layer down.
    let mut d_next: Option<Batch<F>> = None;
    for j in (0..control.blocks.len()).rev() {
        let mut d_feat = conv1x1_backward_input(&control.projs[j].0, &d_inj[j]);
        let (proj_w, proj_b) = &mut grads.projs[j];
        conv1x1_backward_weights(&out.feats[j], &d_inj[j], proj_w, proj_b);
        if let Some(extra) = &d_feats[j] {
            d_feat.data += &extra.data;
        }
        if let Some(from_next) = d_next {
            d_feat.data += &from_next.data;
        }
        d_next = Some(control.blocks[j].backward(
            &d_feat,
            &caches.control_blocks[j],
            temb,
            &cond.pemb,
            Some(&mut grads.blocks[j]),
            scratch,
        ));
    }

    // Control patch embedding.
    if let Some(d_h0) = d_next {
        let col = patchify(&caches.control_input, spec.patch);
        general_mm_acc(&d_h0.data.view(), &col.t(), &mut grads.w_pe);
        for (c, row) in d_h0.data.rows().into_iter().enumerate() {
            grads.b_pe[(c, 0)] += row.sum();
        }
    }
    Ok(())
}

/// Checkpoint manifest stored beside the weight blob.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub schema_version: u32,
    pub backbone: BackboneSpec,
    pub control: ControlModuleSpec,
    pub plan: AlignmentPlan,
    pub seed: u64,
    pub config_hash: String,
    pub stage: String,
}

/// Write a control-module checkpoint: `dir/manifest.json` + `dir/weights.bin`
/// (little-endian f64 per parameter, canonical order).
pub fn save_control<F: Scalar>(
    dir: &std::path::Path,
    module: &ControlModule<F>,
    meta: &CheckpointMeta,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(meta)?)?;
    let mut bytes: Vec<u8> = Vec::new();
    for p in module.param_list() {
        for &v in p.iter() {
            bytes.extend_from_slice(&v.tof().to_le_bytes());
        }
    }
    std::fs::write(dir.join("weights.bin"), bytes)?;
    Ok(())
}

/// Load a control-module checkpoint against a backbone rebuilt from the
/// manifest's seed.
pub fn load_control<F: Scalar>(
    dir: &std::path::Path,
) -> Result<(ControlModule<F>, Backbone<F>, CheckpointMeta)> {
    let meta: CheckpointMeta =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
    let backbone = Backbone::init(meta.backbone, meta.seed);
    let mut module = ControlModule::init_from_backbone(
        &backbone,
        meta.control.layers,
        meta.control.role,
        meta.plan.clone(),
    )?;
    let bytes = std::fs::read(dir.join("weights.bin"))?;
    let mut offset = 0usize;
    for p in module.params_mut() {
        for v in p.iter_mut() {
            let raw: [u8; 8] = bytes[offset..offset + 8]
                .try_into()
                .map_err(|_| Error::IoFailure("weights.bin truncated".to_string()))?;
            *v = F::fromf(f64::from_le_bytes(raw));
            offset += 8;
        }
    }
    if offset != bytes.len() {
        return Err(Error::IoFailure(format!(
            "weights.bin has {} trailing bytes",
            bytes.len() - offset
        )));
    }
    Ok((module, backbone, meta))
}
