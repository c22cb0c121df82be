//! Training orchestration: teacher pretraining, two-stage distillation, the
//! from-scratch baseline, and the ablation variants.
//!
//! All training runs in f32 on a single thread; every random draw comes from
//! a stream derived from (run seed, step), so reruns are bitwise
//! reproducible. The backbone never receives gradients; the teacher receives
//! them only during its own pretraining.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::alignment::{build_alignment_plan, build_injection_plan, identity_injection, AlignmentPlan};
use crate::error::{Error, Result};
use crate::flowmatch::{add_noise_batch, sample};
use crate::losses::{
    distill_loss, grad_task_loss, mask_weight, stage1_grads, stage1_loss, stage2_grads,
    stage2_loss, task_loss, LossBreakdown, LossWeights, WeightMatrix,
};
use crate::metrics::{self, psnr_masked, HeldoutDistill, InjectedModel, MetricReport};
use crate::nets::{
    backward_control, encode_condition, forward_with_control, save_control, Backbone,
    BackboneSpec, CacheMode, CheckpointMeta, CondBatch, Condition, ControlModule, Role,
};
use crate::nn::{gauss, unit_uniform, Adam, Batch, Scratch};
use crate::rng;
use crate::synthdata::{load_split, Dataset, Sample, Split};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Ours,
    Fc,
    WoMask,
    OneStage,
    Sl,
    WoCf,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Ours,
        Variant::Fc,
        Variant::WoMask,
        Variant::OneStage,
        Variant::Sl,
        Variant::WoCf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Ours => "ours",
            Variant::Fc => "fc",
            Variant::WoMask => "wo_mask",
            Variant::OneStage => "one_stage",
            Variant::Sl => "sl",
            Variant::WoCf => "wo_cf",
        }
    }

    pub fn parse(s: &str) -> Result<Variant> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Validity(format!("unknown variant {s:?}")))
    }

    pub fn needs_teacher(self) -> bool {
        !matches!(self, Variant::Fc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub backbone: BackboneSpec,
    pub student_layers: usize,
    pub teacher_layers: usize,
    /// The frozen backbone is pinned to this seed for every run.
    pub backbone_seed: u64,
    /// Teacher pretraining seed (one teacher serves all variants/seeds).
    pub teacher_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backbone: BackboneSpec::default(),
            student_layers: 4,
            teacher_layers: 8,
            backbone_seed: 1000,
            teacher_seed: 2000,
        }
    }
}

impl ModelConfig {
    pub fn student_plan(&self) -> Result<AlignmentPlan> {
        let plan = build_alignment_plan(self.student_layers, self.teacher_layers)?;
        build_injection_plan(
            &plan,
            &identity_injection(self.teacher_layers),
            self.backbone.layers,
        )
    }

    /// Identity wiring for the teacher: layer i injects into backbone layer i.
    pub fn teacher_plan(&self) -> Result<AlignmentPlan> {
        if self.teacher_layers > self.backbone.layers {
            return Err(Error::InvalidTarget {
                teacher_layer: self.teacher_layers,
                target: self.teacher_layers,
                backbone_layers: self.backbone.layers,
            });
        }
        Ok(AlignmentPlan {
            student_layers: self.teacher_layers,
            teacher_layers: self.teacher_layers,
            pairs: (1..=self.teacher_layers).map(|i| vec![i]).collect(),
            injection: (1..=self.teacher_layers).map(|i| vec![i]).collect(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TeacherParams {
    pub max_steps: usize,
    /// Held-out masked-PSNR (dB) at which pretraining may stop.
    pub psnr_floor_db: f64,
    pub eval_every: usize,
    pub eval_samples: usize,
    pub learning_rate: f64,
}

impl Default for TeacherParams {
    fn default() -> Self {
        TeacherParams {
            max_steps: 3000,
            psnr_floor_db: 17.0,
            eval_every: 250,
            eval_samples: 64,
            learning_rate: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub variant: Variant,
    pub seed: u64,
    pub stage1_steps: usize,
    pub stage2_steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weights: LossWeights,
    pub model: ModelConfig,
    pub data_root: String,
}

impl TrainConfig {
    pub fn total_steps(&self) -> usize {
        self.stage1_steps + self.stage2_steps
    }

    /// Per-variant stage budgets. Every variant consumes the same total:
    /// `sl` folds the stage-2 budget into stage 1; `one_stage` and `fc` run
    /// a single phase of the full budget.
    pub fn effective_stages(&self) -> (usize, usize) {
        match self.variant {
            Variant::Sl | Variant::Fc | Variant::OneStage => (self.total_steps(), 0),
            _ => (self.stage1_steps, self.stage2_steps),
        }
    }

    /// Loss weights after variant adjustments (wo_cf drops the feature
    /// loss; wo_mask is handled by weight-plane construction instead).
    pub fn effective_weights(&self) -> LossWeights {
        let mut w = self.weights;
        if self.variant == Variant::WoCf {
            w.lambda_af = 0.0;
        }
        w
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.batch_size == 0 {
            return Err(Error::DomainError("batch_size must be positive".to_string()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::DomainError("learning_rate must be positive".to_string()));
        }
        let m = &self.model;
        if m.teacher_layers != 2 * m.student_layers
            && m.teacher_layers != 2 * m.student_layers - 1
        {
            return Err(Error::ShapeMismatch(format!(
                "teacher layers {} must be 2S or 2S-1 for S={}",
                m.teacher_layers, m.student_layers
            )));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: Variant::Ours,
            seed: 0,
            stage1_steps: 3000,
            stage2_steps: 1000,
            batch_size: 32,
            learning_rate: 1e-3,
            weights: LossWeights::default(),
            model: ModelConfig::default(),
            data_root: "data".to_string(),
        }
    }
}

/// Stream ids for deriving per-purpose RNGs from the run seed.
mod streams {
    pub const STEP_BASE: u64 = 1 << 32;
    pub const HELDOUT: u64 = 0xD157;
}

struct LossLog {
    file: std::io::BufWriter<fs::File>,
    rows: usize,
}

impl LossLog {
    fn create(path: &Path) -> Result<Self> {
        let mut file = std::io::BufWriter::new(fs::File::create(path)?);
        writeln!(file, "step,stage,l_task,l_distill,l_af,total")?;
        Ok(LossLog { file, rows: 0 })
    }

    fn log(&mut self, step: usize, stage: &str, bd: &LossBreakdown) -> Result<()> {
        writeln!(
            self.file,
            "{step},{stage},{:.6e},{:.6e},{:.6e},{:.6e}",
            bd.l_task, bd.l_distill, bd.l_af, bd.total
        )?;
        self.rows += 1;
        Ok(())
    }

    fn finish(mut self) -> Result<usize> {
        self.file.flush()?;
        Ok(self.rows)
    }
}

/// One training batch in network layout.
struct TrainBatch {
    x0: Option<Batch<f32>>,
    x_t: Batch<f32>,
    epsilon: Batch<f32>,
    ts: Vec<f32>,
    cond: CondBatch<f32>,
    mask: Batch<f32>,
    /// Positions within the batch that carry ground truth (one_stage mixes).
    labeled: Vec<usize>,
}

fn draw_indices(rng: &mut rng::Rng, len: usize, count: usize) -> Vec<usize> {
    use rand::Rng as _;
    (0..count).map(|_| rng.gen_range(0..len)).collect()
}

/// Assemble a batch. Labeled samples noise the clean image; unlabeled
/// samples noise the pseudo-source (masked image with fresh Gaussian fill
/// inside the mask). Returns an error if an allegedly unlabeled sample
/// exposes ground truth.
fn assemble_batch(
    backbone: &Backbone<f32>,
    samples: &[&Sample],
    rng: &mut rng::Rng,
    require_unlabeled: bool,
) -> Result<TrainBatch> {
    let side = backbone.spec.image_side;
    let hw = side * side;
    let n = samples.len();
    let mut source = Batch::zeros(3, n, side, side);
    let mut epsilon = Batch::zeros(3, n, side, side);
    let mut ts = Vec::with_capacity(n);
    let mut conds: Vec<Condition<f32>> = Vec::with_capacity(n);
    let mut labeled = Vec::new();
    let mut any_labeled = false;
    for (i, s) in samples.iter().enumerate() {
        if require_unlabeled && s.has_ground_truth {
            return Err(Error::Validity(format!(
                "sample {} exposes ground truth in the self-supervised stage",
                s.id
            )));
        }
        let t: f32 = unit_uniform(rng);
        ts.push(t);
        for v in epsilon.sample_mut(i).iter_mut() {
            *v = gauss(rng);
        }
        if let Some(img) = s.image_arr::<f32>() {
            source.sample_mut(i).assign(&img);
            labeled.push(i);
            any_labeled = true;
        } else {
            // pseudo-source: masked image, mask region refilled with noise
            let masked = s.masked_arr::<f32>();
            let mut view = source.sample_mut(i);
            view.assign(&masked);
            for c in 0..3 {
                for p in 0..hw {
                    if s.mask[p] == 1 {
                        view[(c, p)] = gauss(rng);
                    }
                }
            }
        }
        let image_for_cond: &[u8] = &s.masked_image;
        conds.push(encode_condition(
            &s.local_prompt,
            &s.mask,
            image_for_cond,
            side,
        )?);
    }
    let x_t = add_noise_batch(&source, &epsilon, &ts)?;
    let cond = backbone.cond_batch(&conds);
    let masks: Vec<ndarray::Array2<f32>> = samples.iter().map(|s| s.mask_arr::<f32>()).collect();
    let mask = Batch::from_samples(&masks, side, side);
    Ok(TrainBatch {
        x0: any_labeled.then_some(source),
        x_t,
        epsilon,
        ts,
        cond,
        mask,
        labeled,
    })
}

fn check_finite(x: f64, what: &str, step: usize) -> Result<()> {
    if !x.is_finite() {
        return Err(Error::Numeric(format!("{what} became {x} at step {step}")));
    }
    Ok(())
}

/// Weight plane for the task loss: Eq. 2 weights normally, all-ones for the
/// wo_mask ablation.
fn task_weight_plane(mask: &Batch<f32>, weights: &LossWeights, variant: Variant) -> Result<WeightMatrix<f32>> {
    if variant == Variant::WoMask {
        Ok(WeightMatrix::uniform(mask.n, mask.h, mask.w))
    } else {
        mask_weight(mask, weights.alpha as f32)
    }
}

/// Train the teacher control module with the unweighted flow-matching task
/// loss until the held-out masked-PSNR floor is reached (or max_steps).
/// Returns the module and whether it converged.
pub fn train_teacher(
    backbone: &Backbone<f32>,
    d_sl: &Dataset,
    heldout: &[Sample],
    model: &ModelConfig,
    params: &TeacherParams,
    batch_size: usize,
    sample_steps: usize,
    log: Option<&mut LossLogHandle>,
) -> Result<(ControlModule<f32>, bool, f64)> {
    let plan = model.teacher_plan()?;
    let mut teacher =
        ControlModule::init_from_backbone(backbone, model.teacher_layers, Role::Teacher, plan)?;
    let mut adam = Adam::new(params.learning_rate as f32, &teacher.param_shapes());
    let mut scratch = Scratch::new();
    let seed = model.teacher_seed;
    let mut converged = false;
    let mut best_psnr = f64::NEG_INFINITY;
    let mut log = log;
    for step in 0..params.max_steps {
        let mut step_rng = rng::stream(seed, streams::STEP_BASE + step as u64);
        let idx = draw_indices(&mut step_rng, d_sl.len(), batch_size);
        let samples: Vec<&Sample> = idx.iter().map(|&i| &d_sl.samples[i]).collect();
        let batch = assemble_batch(backbone, &samples, &mut step_rng, false)?;
        let out = forward_with_control(
            backbone,
            Some(&teacher),
            &batch.x_t,
            &batch.ts,
            &batch.cond,
            CacheMode::Trainable,
            &mut scratch,
        )?;
        let uniform = WeightMatrix::uniform(batch.x_t.n, batch.x_t.h, batch.x_t.w);
        let l = task_loss(&batch.epsilon, &out.eps_hat, &uniform)?;
        check_finite(l as f64, "teacher loss", step)?;
        let d_eps = grad_task_loss(&batch.epsilon, &out.eps_hat, &uniform)?;
        let d_feats: Vec<Option<Batch<f32>>> = (0..teacher.blocks.len()).map(|_| None).collect();
        let mut grads = teacher.zero_grads();
        backward_control(
            backbone,
            &teacher,
            &out,
            &d_eps,
            &d_feats,
            &batch.cond,
            &mut grads,
            &mut scratch,
        )?;
        adam.step(teacher.params_mut(), grads.flat());
        if let Some(log) = log.as_deref_mut() {
            log.log(
                step,
                "teacher",
                &LossBreakdown {
                    l_task: l as f64,
                    l_distill: 0.0,
                    l_af: 0.0,
                    total: l as f64,
                },
            )?;
        }
        if (step + 1) % params.eval_every == 0 || step + 1 == params.max_steps {
            let p = heldout_masked_psnr(backbone, &teacher, heldout, sample_steps, seed)?;
            best_psnr = best_psnr.max(p);
            if p >= params.psnr_floor_db {
                converged = true;
                break;
            }
        }
    }
    Ok((teacher, converged, best_psnr))
}

/// Masked-PSNR of sampled inpaintings over a held-out slice.
pub fn heldout_masked_psnr(
    backbone: &Backbone<f32>,
    control: &ControlModule<f32>,
    heldout: &[Sample],
    steps: usize,
    seed: u64,
) -> Result<f64> {
    let side = backbone.spec.image_side;
    let conds: Vec<Condition<f32>> = heldout
        .iter()
        .map(|s| encode_condition(&s.local_prompt, &s.mask, &s.masked_image, side))
        .collect::<Result<_>>()?;
    let cond = backbone.cond_batch(&conds);
    let mut model = InjectedModel::new(backbone, Some(control));
    let mut rng = rng::stream(seed, 0x9E7A);
    let gen = sample(&mut model, &cond, steps, &mut rng, heldout.len(), side)?;
    let mut total = 0.0;
    for (i, s) in heldout.iter().enumerate() {
        let hw = side * side;
        let gen_img =
            ndarray::Array2::from_shape_fn((3, hw), |(c, p)| gen.sample(i)[(c, p)] as f64);
        let clean = s
            .image_arr::<f64>()
            .ok_or_else(|| Error::Validity("held-out sample lacks clean image".to_string()))?;
        total += psnr_masked(&gen_img, &clean, &s.mask, 1.0)?;
    }
    Ok(total / heldout.len() as f64)
}

/// Held-out distillation loss: teacher and student evaluated on identical
/// stage-2-style inputs built deterministically from the given seed.
pub fn heldout_distill_loss(
    backbone: &Backbone<f32>,
    student: &ControlModule<f32>,
    teacher: &ControlModule<f32>,
    heldout: &Dataset,
    seed: u64,
) -> Result<f64> {
    let mut scratch = Scratch::new();
    let mut total = 0.0;
    let mut batches = 0usize;
    let bsz = 64usize;
    let mut idx = 0usize;
    let mut rng = rng::stream(seed, streams::HELDOUT);
    while idx < heldout.len() {
        let hi = (idx + bsz).min(heldout.len());
        let samples: Vec<&Sample> = heldout.samples[idx..hi].iter().collect();
        // stage-2 style inputs regardless of stored ground truth
        let side = backbone.spec.image_side;
        let hw = side * side;
        let n = samples.len();
        let mut source = Batch::zeros(3, n, side, side);
        let mut epsilon = Batch::zeros(3, n, side, side);
        let mut ts = Vec::with_capacity(n);
        let mut conds = Vec::with_capacity(n);
        for (i, s) in samples.iter().enumerate() {
            ts.push(unit_uniform::<f32>(&mut rng));
            for v in epsilon.sample_mut(i).iter_mut() {
                *v = gauss(&mut rng);
            }
            let masked = s.masked_arr::<f32>();
            let mut view = source.sample_mut(i);
            view.assign(&masked);
            for c in 0..3 {
                for p in 0..hw {
                    if s.mask[p] == 1 {
                        view[(c, p)] = gauss(&mut rng);
                    }
                }
            }
            conds.push(encode_condition(
                &s.local_prompt,
                &s.mask,
                &s.masked_image,
                side,
            )?);
        }
        let x_t = add_noise_batch(&source, &epsilon, &ts)?;
        let cond = backbone.cond_batch(&conds);
        let t_out = forward_with_control(
            backbone,
            Some(teacher),
            &x_t,
            &ts,
            &cond,
            CacheMode::None,
            &mut scratch,
        )?;
        let s_out = forward_with_control(
            backbone,
            Some(student),
            &x_t,
            &ts,
            &cond,
            CacheMode::None,
            &mut scratch,
        )?;
        total += distill_loss(&t_out.eps_hat, &s_out.eps_hat)? as f64;
        batches += 1;
        idx = hi;
    }
    Ok(total / batches as f64)
}

/// Opaque handle so callers outside this module can pass a loss log around.
pub struct LossLogHandle(LossLog);

impl LossLogHandle {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(LossLogHandle(LossLog::create(path)?))
    }

    fn log(&mut self, step: usize, stage: &str, bd: &LossBreakdown) -> Result<()> {
        self.0.log(step, stage, bd)
    }

    pub fn finish(self) -> Result<usize> {
        self.0.finish()
    }
}

enum StepKind<'a> {
    /// Supervised stage-1 objective on labeled data.
    Supervised,
    /// Self-supervised stage-2 objective on unlabeled data.
    SelfSupervised,
    /// Mixed single-phase objective (one_stage ablation).
    Mixed { d_ssl: &'a Dataset },
    /// Task loss only (fc baseline).
    TaskOnly,
}

/// Shared optimization loop over one stage.
#[allow(clippy::too_many_arguments)]
fn run_stage(
    backbone: &Backbone<f32>,
    student: &mut ControlModule<f32>,
    teacher: Option<&ControlModule<f32>>,
    data: &Dataset,
    kind: StepKind<'_>,
    cfg: &TrainConfig,
    steps: usize,
    step_offset: usize,
    stage_tag: &str,
    adam: &mut Adam<f32>,
    log: &mut LossLogHandle,
) -> Result<()> {
    let weights = cfg.effective_weights();
    let weights32 = weights;
    let mut scratch = Scratch::new();
    let plan = student.plan.clone();
    for local_step in 0..steps {
        let step = step_offset + local_step;
        let mut step_rng = rng::stream(cfg.seed, streams::STEP_BASE + step as u64);
        let (samples, require_unlabeled): (Vec<&Sample>, bool) = match &kind {
            StepKind::Mixed { d_ssl } => {
                let merged = data.len() + d_ssl.len();
                let idx = draw_indices(&mut step_rng, merged, cfg.batch_size);
                (
                    idx.iter()
                        .map(|&i| {
                            if i < data.len() {
                                &data.samples[i]
                            } else {
                                &d_ssl.samples[i - data.len()]
                            }
                        })
                        .collect(),
                    false,
                )
            }
            StepKind::SelfSupervised => {
                let idx = draw_indices(&mut step_rng, data.len(), cfg.batch_size);
                (idx.iter().map(|&i| &data.samples[i]).collect(), true)
            }
            _ => {
                let idx = draw_indices(&mut step_rng, data.len(), cfg.batch_size);
                (idx.iter().map(|&i| &data.samples[i]).collect(), false)
            }
        };
        let batch = assemble_batch(backbone, &samples, &mut step_rng, require_unlabeled)?;

        let cache = CacheMode::Trainable;
        let s_out = forward_with_control(
            backbone,
            Some(student),
            &batch.x_t,
            &batch.ts,
            &batch.cond,
            cache,
            &mut scratch,
        )?;
        let t_out = match teacher {
            Some(t) => Some(forward_with_control(
                backbone,
                Some(t),
                &batch.x_t,
                &batch.ts,
                &batch.cond,
                CacheMode::None,
                &mut scratch,
            )?),
            None => None,
        };

        let (bd, d_eps, d_feats) = match &kind {
            StepKind::TaskOnly => {
                let x0 = batch.x0.as_ref().expect("task-only stage uses labeled data");
                let _ = x0;
                let w = task_weight_plane(&batch.mask, &weights32, cfg.variant)?;
                let l = task_loss(&batch.epsilon, &s_out.eps_hat, &w)?;
                let mut d_eps = grad_task_loss(&batch.epsilon, &s_out.eps_hat, &w)?;
                let lt = weights32.lambda_task as f32;
                d_eps.data.mapv_inplace(|v| v * lt);
                let total = weights32.lambda_task * l as f64;
                (
                    LossBreakdown {
                        l_task: l as f64,
                        l_distill: 0.0,
                        l_af: 0.0,
                        total,
                    },
                    d_eps,
                    vec![],
                )
            }
            StepKind::Supervised => {
                let t_out = t_out.as_ref().expect("supervised stage requires teacher");
                let w = task_weight_plane(&batch.mask, &weights32, cfg.variant)?;
                let (_, bd) = stage1_loss(
                    &batch.epsilon,
                    &s_out.eps_hat,
                    &t_out.eps_hat,
                    &s_out.feats,
                    &t_out.feats,
                    &w,
                    &plan,
                    &weights32,
                )?;
                let (d_eps, d_feats) = stage1_grads(
                    &batch.epsilon,
                    &s_out.eps_hat,
                    &t_out.eps_hat,
                    &s_out.feats,
                    &t_out.feats,
                    &w,
                    &plan,
                    &weights32,
                )?;
                (bd, d_eps, d_feats)
            }
            StepKind::SelfSupervised => {
                let t_out = t_out.as_ref().expect("self-supervised stage requires teacher");
                let (_, bd) = stage2_loss(
                    &t_out.eps_hat,
                    &s_out.eps_hat,
                    &s_out.feats,
                    &t_out.feats,
                    &plan,
                    &weights32,
                )?;
                let (d_eps, d_feats) = stage2_grads(
                    &t_out.eps_hat,
                    &s_out.eps_hat,
                    &s_out.feats,
                    &t_out.feats,
                    &plan,
                    &weights32,
                )?;
                (bd, d_eps, d_feats)
            }
            StepKind::Mixed { .. } => {
                let t_out = t_out.as_ref().expect("mixed stage requires teacher");
                let (mut d_eps, d_feats) = stage2_grads(
                    &t_out.eps_hat,
                    &s_out.eps_hat,
                    &s_out.feats,
                    &t_out.feats,
                    &plan,
                    &weights32,
                )?;
                let (_, mut bd) = stage2_loss(
                    &t_out.eps_hat,
                    &s_out.eps_hat,
                    &s_out.feats,
                    &t_out.feats,
                    &plan,
                    &weights32,
                )?;
                // task term over the labeled sub-batch only
                if !batch.labeled.is_empty() {
                    let sub = |b: &Batch<f32>| select_columns(b, &batch.labeled);
                    let eps_l = sub(&batch.epsilon);
                    let eh_l = sub(&s_out.eps_hat);
                    let mask_l = select_columns(&batch.mask, &batch.labeled);
                    let w = task_weight_plane(&mask_l, &weights32, cfg.variant)?;
                    let l_task = task_loss(&eps_l, &eh_l, &w)?;
                    let mut g = grad_task_loss(&eps_l, &eh_l, &w)?;
                    let lt = weights32.lambda_task as f32;
                    g.data.mapv_inplace(|v| v * lt);
                    scatter_add_columns(&mut d_eps, &g, &batch.labeled);
                    bd.l_task = l_task as f64;
                    bd.total += weights32.lambda_task * l_task as f64;
                }
                (bd, d_eps, d_feats)
            }
        };
        check_finite(bd.total, "training loss", step)?;

        let d_feats_opt: Vec<Option<Batch<f32>>> = if d_feats.is_empty() {
            (0..student.blocks.len()).map(|_| None).collect()
        } else {
            d_feats.into_iter().map(Some).collect()
        };
        let mut grads = student.zero_grads();
        backward_control(
            backbone,
            student,
            &s_out,
            &d_eps,
            &d_feats_opt,
            &batch.cond,
            &mut grads,
            &mut scratch,
        )?;
        adam.step(student.params_mut(), grads.flat());
        log.log(step, stage_tag, &bd)?;
    }
    Ok(())
}

fn select_columns(b: &Batch<f32>, rows: &[usize]) -> Batch<f32> {
    let hw = b.h * b.w;
    let mut out = Batch::zeros(b.channels(), rows.len(), b.h, b.w);
    for (dst, &src) in rows.iter().enumerate() {
        out.sample_mut(dst).assign(&b.sample(src));
    }
    let _ = hw;
    out
}

fn scatter_add_columns(dst: &mut Batch<f32>, src: &Batch<f32>, rows: &[usize]) {
    for (s_idx, &d_idx) in rows.iter().enumerate() {
        let add = src.sample(s_idx).to_owned();
        let mut view = dst.sample_mut(d_idx);
        view += &add;
    }
}

/// Result bundle of a full variant run.
pub struct RunOutput {
    pub checkpoint_dir: PathBuf,
    pub report: MetricReport,
    pub teacher_checksum_before: Option<String>,
    pub teacher_checksum_after: Option<String>,
    pub backbone_checksum_before: String,
    pub backbone_checksum_after: String,
}

/// Execute one variant end to end inside `run_dir`: train per the variant's
/// pipeline composition, evaluate on the test split, and persist
/// checkpoints, the per-step loss log, and `report.json`.
pub fn run_variant(
    run_dir: &Path,
    cfg: &TrainConfig,
    config_hash: &str,
    teacher_ckpt: Option<&Path>,
) -> Result<RunOutput> {
    cfg.validate()?;
    fs::create_dir_all(run_dir)?;
    let result = run_variant_inner(run_dir, cfg, config_hash, teacher_ckpt);
    if let Err(Error::Numeric(msg)) = &result {
        let crash = serde_json::json!({
            "error": msg,
            "variant": cfg.variant.name(),
            "seed": cfg.seed,
            "config_hash": config_hash,
        });
        let _ = fs::write(
            run_dir.join("crash.json"),
            serde_json::to_string_pretty(&crash).unwrap_or_default(),
        );
    }
    result
}

fn run_variant_inner(
    run_dir: &Path,
    cfg: &TrainConfig,
    config_hash: &str,
    teacher_ckpt: Option<&Path>,
) -> Result<RunOutput> {
    let data_root = PathBuf::from(&cfg.data_root);
    let d_sl = load_split(&data_root, Split::Sl)?;
    let d_test = load_split(&data_root, Split::Test)?;

    let backbone = Backbone::<f32>::init(cfg.model.backbone, cfg.model.backbone_seed);
    let backbone_checksum_before = backbone.checksum();

    let teacher: Option<ControlModule<f32>> = if cfg.variant.needs_teacher() {
        let path = teacher_ckpt.ok_or_else(|| {
            Error::Validity(
                "variant requires a teacher checkpoint; run train-teacher first".to_string(),
            )
        })?;
        if !path.exists() {
            return Err(Error::Validity(format!(
                "teacher checkpoint {} not found; run train-teacher first",
                path.display()
            )));
        }
        let (module, _, _) = crate::nets::load_control::<f32>(path)?;
        Some(module)
    } else {
        None
    };
    let teacher_checksum_before = teacher.as_ref().map(|t| t.checksum());

    let plan = cfg.model.student_plan()?;
    fs::write(run_dir.join("alignment.json"), plan.to_json())?;
    let mut student = ControlModule::init_from_backbone(
        &backbone,
        cfg.model.student_layers,
        Role::Student,
        plan,
    )?;
    let mut adam = Adam::new(cfg.learning_rate as f32, &student.param_shapes());
    let mut log = LossLogHandle::create(&run_dir.join("losses.csv"))?;
    let (s1, s2) = cfg.effective_stages();
    let ckpt_root = run_dir.join("checkpoints");

    let mut heldout_after_s1 = None;
    let mut heldout_after_s2 = None;

    match cfg.variant {
        Variant::Fc => {
            run_stage(
                &backbone,
                &mut student,
                None,
                &d_sl,
                StepKind::TaskOnly,
                cfg,
                s1,
                0,
                "task_only",
                &mut adam,
                &mut log,
            )?;
            save_stage(&ckpt_root, "task_only", s1, &student, cfg, config_hash)?;
        }
        Variant::OneStage => {
            let d_ssl = load_split(&data_root, Split::Ssl)?;
            run_stage(
                &backbone,
                &mut student,
                teacher.as_ref(),
                &d_sl,
                StepKind::Mixed { d_ssl: &d_ssl },
                cfg,
                s1,
                0,
                "merged",
                &mut adam,
                &mut log,
            )?;
            save_stage(&ckpt_root, "merged", s1, &student, cfg, config_hash)?;
        }
        Variant::Sl => {
            run_stage(
                &backbone,
                &mut student,
                teacher.as_ref(),
                &d_sl,
                StepKind::Supervised,
                cfg,
                s1,
                0,
                "stage1",
                &mut adam,
                &mut log,
            )?;
            save_stage(&ckpt_root, "stage1", s1, &student, cfg, config_hash)?;
        }
        Variant::Ours | Variant::WoMask | Variant::WoCf => {
            run_stage(
                &backbone,
                &mut student,
                teacher.as_ref(),
                &d_sl,
                StepKind::Supervised,
                cfg,
                s1,
                0,
                "stage1",
                &mut adam,
                &mut log,
            )?;
            save_stage(&ckpt_root, "stage1", s1, &student, cfg, config_hash)?;
            if let Some(t) = teacher.as_ref() {
                heldout_after_s1 =
                    Some(heldout_distill_loss(&backbone, &student, t, &d_test, cfg.seed)?);
            }
            if s2 > 0 {
                let d_ssl = load_split(&data_root, Split::Ssl)?;
                run_stage(
                    &backbone,
                    &mut student,
                    teacher.as_ref(),
                    &d_ssl,
                    StepKind::SelfSupervised,
                    cfg,
                    s2,
                    s1,
                    "stage2",
                    &mut adam,
                    &mut log,
                )?;
            }
            save_stage(&ckpt_root, "stage2", s2, &student, cfg, config_hash)?;
            if let Some(t) = teacher.as_ref() {
                heldout_after_s2 =
                    Some(heldout_distill_loss(&backbone, &student, t, &d_test, cfg.seed)?);
            }
        }
    }
    log.finish()?;

    // Freeze verification data, both returned and persisted for audits.
    let backbone_checksum_after = backbone.checksum();
    let teacher_checksum_after = teacher.as_ref().map(|t| t.checksum());
    let freeze = serde_json::json!({
        "backbone_before": backbone_checksum_before,
        "backbone_after": backbone_checksum_after,
        "teacher_before": teacher_checksum_before,
        "teacher_after": teacher_checksum_after,
    });
    fs::write(
        run_dir.join("freeze.json"),
        serde_json::to_string_pretty(&freeze)?,
    )?;

    let ckpt_name = format!("{}-final", cfg.variant.name());
    let final_dir = ckpt_root.join(&ckpt_name);
    save_control(
        &final_dir,
        &student,
        &CheckpointMeta {
            schema_version: 1,
            backbone: cfg.model.backbone,
            control: student.spec,
            plan: student.plan.clone(),
            seed: cfg.model.backbone_seed,
            config_hash: config_hash.to_string(),
            stage: "final".to_string(),
        },
    )?;

    let mut report = metrics::evaluate(
        &backbone,
        Some(&student),
        &d_test,
        crate::flowmatch::DEFAULT_SAMPLE_STEPS,
        cfg.seed,
        &ckpt_name,
        config_hash,
    )?;
    if let (Some(a), Some(b)) = (heldout_after_s1, heldout_after_s2) {
        report.heldout_distill = Some(HeldoutDistill {
            after_stage1: a,
            after_stage2: b,
        });
    }
    fs::write(
        run_dir.join("report.json"),
        serde_json::to_string_pretty(&report)?,
    )?;

    Ok(RunOutput {
        checkpoint_dir: final_dir,
        report,
        teacher_checksum_before,
        teacher_checksum_after,
        backbone_checksum_before,
        backbone_checksum_after,
    })
}

fn save_stage(
    ckpt_root: &Path,
    stage: &str,
    step: usize,
    module: &ControlModule<f32>,
    cfg: &TrainConfig,
    config_hash: &str,
) -> Result<()> {
    save_control(
        &ckpt_root.join(format!("{stage}-{step}")),
        module,
        &CheckpointMeta {
            schema_version: 1,
            backbone: cfg.model.backbone,
            control: module.spec,
            plan: module.plan.clone(),
            seed: cfg.model.backbone_seed,
            config_hash: config_hash.to_string(),
            stage: stage.to_string(),
        },
    )
}

/// Train the teacher and persist its checkpoint plus a small manifest
/// (convergence flag, best held-out masked-PSNR).
pub fn train_and_save_teacher(
    out_dir: &Path,
    data_root: &Path,
    model: &ModelConfig,
    params: &TeacherParams,
    batch_size: usize,
    sample_steps: usize,
    config_hash: &str,
) -> Result<(PathBuf, bool, f64)> {
    let started = std::time::Instant::now();
    let d_sl = load_split(data_root, Split::Sl)?;
    let d_test = load_split(data_root, Split::Test)?;
    let heldout: Vec<Sample> = d_test.samples[..params.eval_samples.min(d_test.len())].to_vec();
    let backbone = Backbone::<f32>::init(model.backbone, model.backbone_seed);
    fs::create_dir_all(out_dir)?;
    let mut log = LossLogHandle::create(&out_dir.join("losses.csv"))?;
    let (teacher, converged, best_psnr) = train_teacher(
        &backbone,
        &d_sl,
        &heldout,
        model,
        params,
        batch_size,
        sample_steps,
        Some(&mut log),
    )?;
    log.finish()?;
    let ckpt = out_dir.join("checkpoint");
    save_control(
        &ckpt,
        &teacher,
        &CheckpointMeta {
            schema_version: 1,
            backbone: model.backbone,
            control: teacher.spec,
            plan: teacher.plan.clone(),
            seed: model.backbone_seed,
            config_hash: config_hash.to_string(),
            stage: "teacher".to_string(),
        },
    )?;
    let manifest = serde_json::json!({
        "converged": converged,
        "best_heldout_masked_psnr_db": best_psnr,
        "psnr_floor_db": params.psnr_floor_db,
        "config_hash": config_hash,
    });
    fs::write(
        out_dir.join("teacher.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok((ckpt, converged, best_psnr))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{build_datasets, DataConfig};

    #[test]
    fn variant_invariants() {
        let mut cfg = TrainConfig {
            stage1_steps: 30,
            stage2_steps: 10,
            ..TrainConfig::default()
        };
        cfg.variant = Variant::Sl;
        assert_eq!(cfg.effective_stages(), (40, 0));
        cfg.variant = Variant::OneStage;
        assert_eq!(cfg.effective_stages(), (40, 0));
        cfg.variant = Variant::Fc;
        assert_eq!(cfg.effective_stages(), (40, 0));
        cfg.variant = Variant::Ours;
        assert_eq!(cfg.effective_stages(), (30, 10));
        cfg.variant = Variant::WoCf;
        assert_eq!(cfg.effective_weights().lambda_af, 0.0);
    }

    #[test]
    fn variant_parsing() {
        assert_eq!(Variant::parse("wo_mask").unwrap(), Variant::WoMask);
        assert!(Variant::parse("nope").is_err());
        for v in Variant::ALL {
            assert_eq!(Variant::parse(v.name()).unwrap(), v);
        }
    }

    #[test]
    fn tiny_dataset_builds() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = DataConfig {
            n_sl: 12,
            n_ssl: 12,
            n_test: 4,
            ..DataConfig::default()
        };
        cfg.validate().unwrap();
        let summary = build_datasets(dir.path(), &cfg, 5).unwrap();
        assert_eq!(summary.counts, [12, 12, 4]);
    }
}
