//! Training objectives: mask-weighted task loss, output distillation loss,
//! asymmetric feature loss, and the stage-1/stage-2 combinations.
//!
//! Every squared norm is normalized by per-sample element count and averaged
//! over the batch, so the default loss weights stay meaningful across
//! resolutions. Analytic gradients (with respect to student-side inputs)
//! live next to each loss and are exactly what the trainer backpropagates;
//! the gradient suite checks them against central finite differences.

use serde::{Deserialize, Serialize};

use crate::alignment::AlignmentPlan;
use crate::error::{Error, Result};
use crate::nn::{Batch, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_task: f64,
    pub lambda_distill: f64,
    pub lambda_af: f64,
    pub alpha: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_task: 4.0,
            lambda_distill: 1.0,
            lambda_af: 1.0,
            alpha: 0.975,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.5 && self.alpha <= 1.0) {
            return Err(Error::DomainError(format!(
                "alpha must lie in (0.5, 1], got {}",
                self.alpha
            )));
        }
        for (name, l) in [
            ("lambda_task", self.lambda_task),
            ("lambda_distill", self.lambda_distill),
            ("lambda_af", self.lambda_af),
        ] {
            if l < 0.0 || !l.is_finite() {
                return Err(Error::DomainError(format!("{name} must be >= 0, got {l}")));
            }
        }
        Ok(())
    }
}

/// Per-pixel weight plane, one channel, broadcast over image channels.
#[derive(Debug, Clone)]
pub struct WeightMatrix<F> {
    pub w: Batch<F>,
}

impl<F: Scalar> WeightMatrix<F> {
    /// All-ones weights: the unweighted objective used by the wo_mask
    /// ablation (Eq. 2 cannot express this since alpha > 0.5 is required).
    pub fn uniform(n: usize, h: usize, w: usize) -> Self {
        let mut b = Batch::zeros(1, n, h, w);
        b.data.fill(F::one());
        WeightMatrix { w: b }
    }
}

/// ω = α·M + (1−α)·(J−M), requiring α in (0.5, 1] and a binary mask.
pub fn mask_weight<F: Scalar>(mask: &Batch<F>, alpha: F) -> Result<WeightMatrix<F>> {
    let half = F::fromf(0.5);
    if !(alpha > half && alpha <= F::one()) {
        return Err(Error::DomainError(format!(
            "alpha must lie in (0.5, 1], got {}",
            alpha.tof()
        )));
    }
    if mask.channels() != 1 {
        return Err(Error::ShapeMismatch(format!(
            "mask must have one channel, got {}",
            mask.channels()
        )));
    }
    let one_minus = F::one() - alpha;
    let mut w = mask.clone();
    for v in w.data.iter_mut() {
        let m = *v;
        if m != F::zero() && m != F::one() {
            return Err(Error::DomainError(format!(
                "mask must be binary, found {}",
                m.tof()
            )));
        }
        *v = alpha * m + one_minus * (F::one() - m);
    }
    Ok(WeightMatrix { w })
}

fn check_weight_shape<F: Scalar>(x: &Batch<F>, w: &WeightMatrix<F>) -> Result<()> {
    if w.w.n != x.n || w.w.h != x.h || w.w.w != x.w {
        return Err(Error::ShapeMismatch(format!(
            "weight plane [{}x{}x{}] vs tensor [{}x{}x{}]",
            w.w.n, w.w.h, w.w.w, x.n, x.h, x.w
        )));
    }
    Ok(())
}

/// L_task = mean_n ‖ω ⊙ (ε − ε̂)‖² / (C·H·W)
pub fn task_loss<F: Scalar>(
    epsilon: &Batch<F>,
    epsilon_hat: &Batch<F>,
    weights: &WeightMatrix<F>,
) -> Result<F> {
    epsilon.check_same_shape(epsilon_hat, "task_loss")?;
    check_weight_shape(epsilon, weights)?;
    let wrow = weights.w.data.row(0);
    let mut total = F::zero();
    for row in epsilon.data.rows().into_iter().zip(epsilon_hat.data.rows()) {
        let (e, eh) = row;
        for ((&e, &eh), &w) in e.iter().zip(eh.iter()).zip(wrow.iter()) {
            let r = w * (e - eh);
            total += r * r;
        }
    }
    Ok(total / F::fromf((epsilon.n * epsilon.elems_per_sample()) as f64))
}

/// dL_task/dε̂ = 2·ω²·(ε̂ − ε) / (N·C·H·W)
pub fn grad_task_loss<F: Scalar>(
    epsilon: &Batch<F>,
    epsilon_hat: &Batch<F>,
    weights: &WeightMatrix<F>,
) -> Result<Batch<F>> {
    epsilon.check_same_shape(epsilon_hat, "grad_task_loss")?;
    check_weight_shape(epsilon, weights)?;
    let norm = F::fromf(2.0 / (epsilon.n * epsilon.elems_per_sample()) as f64);
    let mut out = epsilon_hat.clone();
    let wrow = weights.w.data.row(0);
    for c in 0..out.channels() {
        let e = epsilon.data.row(c);
        let mut o = out.data.row_mut(c);
        for ((o, &e), &w) in o.iter_mut().zip(e.iter()).zip(wrow.iter()) {
            *o = norm * w * w * (*o - e);
        }
    }
    Ok(out)
}

/// L_distill = mean_n ‖ε_T − ε̂‖² / (C·H·W); the teacher side carries no
/// gradient by construction (it is plain data here).
pub fn distill_loss<F: Scalar>(epsilon_teacher: &Batch<F>, epsilon_hat: &Batch<F>) -> Result<F> {
    epsilon_teacher.check_same_shape(epsilon_hat, "distill_loss")?;
    let mut total = F::zero();
    for (&t, &s) in epsilon_teacher.data.iter().zip(epsilon_hat.data.iter()) {
        let r = t - s;
        total += r * r;
    }
    Ok(total / F::fromf((epsilon_hat.n * epsilon_hat.elems_per_sample()) as f64))
}

/// dL_distill/dε̂ = 2·(ε̂ − ε_T) / (N·C·H·W)
pub fn grad_distill_loss<F: Scalar>(
    epsilon_teacher: &Batch<F>,
    epsilon_hat: &Batch<F>,
) -> Result<Batch<F>> {
    epsilon_teacher.check_same_shape(epsilon_hat, "grad_distill_loss")?;
    let norm = F::fromf(2.0 / (epsilon_hat.n * epsilon_hat.elems_per_sample()) as f64);
    let mut out = epsilon_hat.clone();
    ndarray::Zip::from(&mut out.data)
        .and(&epsilon_teacher.data)
        .for_each(|o, &t| *o = norm * (*o - t));
    Ok(out)
}

/// L_af = Σ_j ‖c_j·f_S^j − Σ_{i∈pairs_j} f_T^i‖² / (N·C·h·w), with c_j the
/// pair size (2, or 1 for the odd-T singleton).
pub fn asymmetric_feature_loss<F: Scalar>(
    f_student: &[Batch<F>],
    f_teacher: &[Batch<F>],
    plan: &AlignmentPlan,
) -> Result<F> {
    check_feature_plan(f_student, f_teacher, plan)?;
    let mut total = F::zero();
    for (j, fs) in f_student.iter().enumerate() {
        let c = F::fromf(plan.pair_coefficient(j + 1));
        let norm = F::fromf(1.0 / (fs.n * fs.elems_per_sample()) as f64);
        let teachers: Vec<&[F]> = plan.pairs[j]
            .iter()
            .map(|&i| f_teacher[i - 1].data.as_slice().expect("contiguous"))
            .collect();
        let student = fs.data.as_slice().expect("contiguous");
        let mut term = F::zero();
        for (idx, &s) in student.iter().enumerate() {
            let mut r = c * s;
            for t in &teachers {
                r -= t[idx];
            }
            term += r * r;
        }
        total += term * norm;
    }
    Ok(total)
}

/// dL_af/df_S^j = 2·c_j·(c_j·f_S^j − Σ f_T^i) / (N·C·h·w)
pub fn grad_asymmetric_feature_loss<F: Scalar>(
    f_student: &[Batch<F>],
    f_teacher: &[Batch<F>],
    plan: &AlignmentPlan,
) -> Result<Vec<Batch<F>>> {
    check_feature_plan(f_student, f_teacher, plan)?;
    let mut grads = Vec::with_capacity(f_student.len());
    for (j, fs) in f_student.iter().enumerate() {
        let c = F::fromf(plan.pair_coefficient(j + 1));
        let norm = F::fromf(2.0 / (fs.n * fs.elems_per_sample()) as f64) * c;
        let teachers: Vec<&[F]> = plan.pairs[j]
            .iter()
            .map(|&i| f_teacher[i - 1].data.as_slice().expect("contiguous"))
            .collect();
        let mut g = fs.clone();
        for (idx, v) in g.data.iter_mut().enumerate() {
            let mut r = c * *v;
            for t in &teachers {
                r -= t[idx];
            }
            *v = norm * r;
        }
        grads.push(g);
    }
    Ok(grads)
}

fn check_feature_plan<F: Scalar>(
    f_student: &[Batch<F>],
    f_teacher: &[Batch<F>],
    plan: &AlignmentPlan,
) -> Result<()> {
    if f_student.len() != plan.student_layers {
        return Err(Error::PlanMismatch(format!(
            "{} student features, plan expects {}",
            f_student.len(),
            plan.student_layers
        )));
    }
    if f_teacher.len() != plan.teacher_layers {
        return Err(Error::PlanMismatch(format!(
            "{} teacher features, plan expects {}",
            f_teacher.len(),
            plan.teacher_layers
        )));
    }
    for (j, fs) in f_student.iter().enumerate() {
        for &i in &plan.pairs[j] {
            fs.check_same_shape(&f_teacher[i - 1], "asymmetric_feature_loss")?;
        }
    }
    Ok(())
}

/// Per-step record of the objective terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_task: f64,
    pub l_distill: f64,
    pub l_af: f64,
    pub total: f64,
}

/// Stage-1 objective: λ_task·L_task + λ_distill·L_distill + λ_af·L_af.
#[allow(clippy::too_many_arguments)]
pub fn stage1_loss<F: Scalar>(
    epsilon: &Batch<F>,
    epsilon_hat: &Batch<F>,
    epsilon_teacher: &Batch<F>,
    f_student: &[Batch<F>],
    f_teacher: &[Batch<F>],
    task_weights: &WeightMatrix<F>,
    plan: &AlignmentPlan,
    weights: &LossWeights,
) -> Result<(F, LossBreakdown)> {
    weights.validate()?;
    let l_task = task_loss(epsilon, epsilon_hat, task_weights)?;
    let l_distill = distill_loss(epsilon_teacher, epsilon_hat)?;
    let l_af = asymmetric_feature_loss(f_student, f_teacher, plan)?;
    let total = F::fromf(weights.lambda_task) * l_task
        + F::fromf(weights.lambda_distill) * l_distill
        + F::fromf(weights.lambda_af) * l_af;
    Ok((
        total,
        LossBreakdown {
            l_task: l_task.tof(),
            l_distill: l_distill.tof(),
            l_af: l_af.tof(),
            total: total.tof(),
        },
    ))
}

/// Gradients of the stage-1 objective with respect to the student outputs:
/// returns (dL/dε̂, dL/df_S^j per layer).
#[allow(clippy::too_many_arguments)]
pub fn stage1_grads<F: Scalar>(
    epsilon: &Batch<F>,
    epsilon_hat: &Batch<F>,
    epsilon_teacher: &Batch<F>,
    f_student: &[Batch<F>],
    f_teacher: &[Batch<F>],
    task_weights: &WeightMatrix<F>,
    plan: &AlignmentPlan,
    weights: &LossWeights,
) -> Result<(Batch<F>, Vec<Batch<F>>)> {
    weights.validate()?;
    let mut d_eps = grad_task_loss(epsilon, epsilon_hat, task_weights)?;
    let lt = F::fromf(weights.lambda_task);
    d_eps.data.mapv_inplace(|v| v * lt);
    let d_distill = grad_distill_loss(epsilon_teacher, epsilon_hat)?;
    let ld = F::fromf(weights.lambda_distill);
    ndarray::Zip::from(&mut d_eps.data)
        .and(&d_distill.data)
        .for_each(|a, &b| *a += ld * b);
    let mut d_feats = grad_asymmetric_feature_loss(f_student, f_teacher, plan)?;
    let la = F::fromf(weights.lambda_af);
    for g in &mut d_feats {
        g.data.mapv_inplace(|v| v * la);
    }
    Ok((d_eps, d_feats))
}

/// Stage-2 objective: λ_distill·L_distill + λ_af·L_af. No ground-truth
/// image or noise target appears in the signature at all.
pub fn stage2_loss<F: Scalar>(
    epsilon_teacher: &Batch<F>,
    epsilon_hat: &Batch<F>,
    f_student: &[Batch<F>],
    f_teacher: &[Batch<F>],
    plan: &AlignmentPlan,
    weights: &LossWeights,
) -> Result<(F, LossBreakdown)> {
    weights.validate()?;
    let l_distill = distill_loss(epsilon_teacher, epsilon_hat)?;
    let l_af = asymmetric_feature_loss(f_student, f_teacher, plan)?;
    let total = F::fromf(weights.lambda_distill) * l_distill + F::fromf(weights.lambda_af) * l_af;
    Ok((
        total,
        LossBreakdown {
            l_task: 0.0,
            l_distill: l_distill.tof(),
            l_af: l_af.tof(),
            total: total.tof(),
        },
    ))
}

/// Gradients of the stage-2 objective with respect to the student outputs.
pub fn stage2_grads<F: Scalar>(
    epsilon_teacher: &Batch<F>,
    epsilon_hat: &Batch<F>,
    f_student: &[Batch<F>],
    f_teacher: &[Batch<F>],
    plan: &AlignmentPlan,
    weights: &LossWeights,
) -> Result<(Batch<F>, Vec<Batch<F>>)> {
    weights.validate()?;
    let mut d_eps = grad_distill_loss(epsilon_teacher, epsilon_hat)?;
    let ld = F::fromf(weights.lambda_distill);
    d_eps.data.mapv_inplace(|v| v * ld);
    let mut d_feats = grad_asymmetric_feature_loss(f_student, f_teacher, plan)?;
    let la = F::fromf(weights.lambda_af);
    for g in &mut d_feats {
        g.data.mapv_inplace(|v| v * la);
    }
    Ok((d_eps, d_feats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alignment::build_alignment_plan;
    use crate::nn::gauss;
    use crate::rng;

    fn rand_batch(c: usize, n: usize, h: usize, w: usize, seed: u64) -> Batch<f64> {
        let mut r = rng::seeded(seed);
        let mut b = Batch::zeros(c, n, h, w);
        b.fill_gauss(&mut r);
        b
    }

    fn binary_mask(n: usize, h: usize, w: usize, seed: u64) -> Batch<f64> {
        let mut r = rng::seeded(seed);
        let mut b = Batch::zeros(1, n, h, w);
        b.data.mapv_inplace(|_| f64::from(gauss::<f64>(&mut r) > 0.0));
        b
    }

    #[test]
    fn mask_weight_values() {
        let mut m = Batch::<f64>::zeros(1, 1, 1, 2);
        m.data[(0, 0)] = 1.0;
        let w = mask_weight(&m, 0.975).unwrap();
        assert!((w.w.data[(0, 0)] - 0.975).abs() < 1e-15);
        assert!((w.w.data[(0, 1)] - 0.025).abs() < 1e-15);
    }

    #[test]
    fn mask_weight_all_zero_mask() {
        let m = Batch::<f64>::zeros(1, 2, 3, 3);
        let w = mask_weight(&m, 0.8).unwrap();
        assert!(w.w.data.iter().all(|&v| (v - 0.2).abs() < 1e-15));
    }

    #[test]
    fn mask_weight_rejects_half_alpha() {
        let m = Batch::<f64>::zeros(1, 1, 2, 2);
        assert!(matches!(
            mask_weight(&m, 0.5),
            Err(Error::DomainError(_))
        ));
    }

    #[test]
    fn mask_weight_partition_is_exact() {
        let m = binary_mask(2, 4, 4, 3);
        for &alpha in &[0.975, 0.6, 0.51, 1.0] {
            let w = mask_weight(&m, alpha).unwrap();
            let mut flipped = m.clone();
            flipped.data.mapv_inplace(|v| 1.0 - v);
            let wf = mask_weight(&flipped, alpha).unwrap();
            for (&a, &b) in w.w.data.iter().zip(wf.w.data.iter()) {
                assert_eq!(a + b, 1.0, "partition must be exact");
            }
        }
    }

    #[test]
    fn task_loss_zero_at_exact_prediction() {
        let e = rand_batch(3, 2, 4, 4, 5);
        let w = WeightMatrix::uniform(2, 4, 4);
        assert_eq!(task_loss(&e, &e, &w).unwrap(), 0.0);
    }

    #[test]
    fn task_loss_uniform_weight_is_mse() {
        let e = rand_batch(3, 2, 4, 4, 6);
        let eh = rand_batch(3, 2, 4, 4, 7);
        let w = WeightMatrix::uniform(2, 4, 4);
        let l = task_loss(&e, &eh, &w).unwrap();
        let mut diff = e.clone();
        diff.data -= &eh.data;
        assert!((l - diff.mean_sq()).abs() < 1e-14);
    }

    #[test]
    fn task_loss_single_pixel_value() {
        // one pixel, eps=1, eps_hat=0, omega=0.975 -> 0.975^2
        let mut e = Batch::<f64>::zeros(1, 1, 1, 1);
        e.data[(0, 0)] = 1.0;
        let eh = Batch::<f64>::zeros(1, 1, 1, 1);
        let mut m = Batch::<f64>::zeros(1, 1, 1, 1);
        m.data[(0, 0)] = 1.0;
        let w = mask_weight(&m, 0.975).unwrap();
        let l = task_loss(&e, &eh, &w).unwrap();
        assert!((l - 0.950625).abs() < 1e-12);
    }

    #[test]
    fn distill_loss_constant_offset() {
        let t = rand_batch(3, 2, 4, 4, 8);
        let mut s = t.clone();
        s.data.mapv_inplace(|v| v + 0.37);
        let l = distill_loss(&t, &s).unwrap();
        assert!((l - 0.37f64.powi(2)).abs() < 1e-12);
    }

    #[test]
    fn af_loss_zero_at_pairwise_mean() {
        let plan = build_alignment_plan(2, 4).unwrap();
        let f_t: Vec<Batch<f64>> = (0..4).map(|i| rand_batch(2, 2, 3, 3, 40 + i)).collect();
        let f_s: Vec<Batch<f64>> = (0..2)
            .map(|j| {
                let mut m = f_t[2 * j].clone();
                m.data += &f_t[2 * j + 1].data;
                m.data.mapv_inplace(|v| v * 0.5);
                m
            })
            .collect();
        let l = asymmetric_feature_loss(&f_s, &f_t, &plan).unwrap();
        assert!(l.abs() <= 1e-12);
    }

    #[test]
    fn af_loss_scalar_example() {
        // S=1, teacher features both 1 everywhere, student 0, 2 elements
        let plan = build_alignment_plan(1, 2).unwrap();
        let f_s = vec![Batch::<f64>::zeros(1, 1, 1, 2)];
        let mut ones = Batch::<f64>::zeros(1, 1, 1, 2);
        ones.data.fill(1.0);
        let f_t = vec![ones.clone(), ones];
        let l = asymmetric_feature_loss(&f_s, &f_t, &plan).unwrap();
        assert!((l - 4.0).abs() < 1e-12);
    }

    #[test]
    fn af_loss_homogeneity() {
        let plan = build_alignment_plan(2, 4).unwrap();
        let f_t: Vec<Batch<f64>> = (0..4).map(|i| rand_batch(2, 1, 3, 3, 50 + i)).collect();
        let f_s: Vec<Batch<f64>> = (0..2).map(|_| Batch::zeros(2, 1, 3, 3)).collect();
        let l1 = asymmetric_feature_loss(&f_s, &f_t, &plan).unwrap();
        let f_t2: Vec<Batch<f64>> = f_t
            .iter()
            .map(|f| {
                let mut d = f.clone();
                d.data.mapv_inplace(|v| v * 2.0);
                d
            })
            .collect();
        let l2 = asymmetric_feature_loss(&f_s, &f_t2, &plan).unwrap();
        assert!((l2 - 4.0 * l1).abs() < 1e-10 * l1.abs().max(1.0));
    }

    #[test]
    fn odd_t_singleton_reaches_zero() {
        // T = 2S-1: last pair is a singleton with coefficient 1, so a
        // student matching the lone teacher feature exactly has zero loss.
        let plan = build_alignment_plan(2, 3).unwrap();
        let f_t: Vec<Batch<f64>> = (0..3).map(|i| rand_batch(1, 1, 2, 2, 60 + i)).collect();
        let mut f_s0 = f_t[0].clone();
        f_s0.data += &f_t[1].data;
        f_s0.data.mapv_inplace(|v| v * 0.5);
        let f_s = vec![f_s0, f_t[2].clone()];
        let l = asymmetric_feature_loss(&f_s, &f_t, &plan).unwrap();
        assert!(l.abs() <= 1e-12);
    }

    #[test]
    fn stage_losses_combine_terms() {
        let plan = build_alignment_plan(2, 4).unwrap();
        let e = rand_batch(3, 2, 4, 4, 70);
        let eh = rand_batch(3, 2, 4, 4, 71);
        let et = rand_batch(3, 2, 4, 4, 72);
        let f_s: Vec<Batch<f64>> = (0..2).map(|i| rand_batch(2, 2, 2, 2, 73 + i)).collect();
        let f_t: Vec<Batch<f64>> = (0..4).map(|i| rand_batch(2, 2, 2, 2, 80 + i)).collect();
        let m = binary_mask(2, 4, 4, 90);
        let lw = LossWeights::default();
        let w = mask_weight(&m, lw.alpha).unwrap();
        let (total, bd) = stage1_loss(&e, &eh, &et, &f_s, &f_t, &w, &plan, &lw).unwrap();
        let expect = 4.0 * bd.l_task + bd.l_distill + bd.l_af;
        assert!((total - expect).abs() < 1e-12);

        // stage2 equals stage1 at lambda_task = 0
        let lw0 = LossWeights {
            lambda_task: 0.0,
            ..lw
        };
        let (s1, _) = stage1_loss(&e, &eh, &et, &f_s, &f_t, &w, &plan, &lw0).unwrap();
        let (s2, _) = stage2_loss(&et, &eh, &f_s, &f_t, &plan, &lw).unwrap();
        assert_eq!(s1, s2);
    }

    #[test]
    fn stage1_linear_in_each_lambda() {
        let plan = build_alignment_plan(1, 2).unwrap();
        let e = rand_batch(3, 1, 2, 2, 100);
        let eh = rand_batch(3, 1, 2, 2, 101);
        let et = rand_batch(3, 1, 2, 2, 102);
        let f_s = vec![rand_batch(2, 1, 2, 2, 103)];
        let f_t: Vec<Batch<f64>> = (0..2).map(|i| rand_batch(2, 1, 2, 2, 104 + i)).collect();
        let m = binary_mask(1, 2, 2, 110);
        let base = LossWeights {
            lambda_task: 1.3,
            lambda_distill: 0.7,
            lambda_af: 2.1,
            alpha: 0.9,
        };
        let w = mask_weight(&m, base.alpha).unwrap();
        let (l0, bd) = stage1_loss(&e, &eh, &et, &f_s, &f_t, &w, &plan, &base).unwrap();
        for field in 0..3 {
            let mut doubled = base;
            match field {
                0 => doubled.lambda_task *= 2.0,
                1 => doubled.lambda_distill *= 2.0,
                _ => doubled.lambda_af *= 2.0,
            }
            let (l2, _) = stage1_loss(&e, &eh, &et, &f_s, &f_t, &w, &plan, &doubled).unwrap();
            let term = match field {
                0 => base.lambda_task * bd.l_task,
                1 => base.lambda_distill * bd.l_distill,
                _ => base.lambda_af * bd.l_af,
            };
            assert!((l2 - (l0 + term)).abs() < 1e-12);
        }
    }

    /// Central finite differences against each analytic gradient.
    #[test]
    fn gradients_match_finite_differences() {
        let plan = build_alignment_plan(2, 4).unwrap();
        let e = rand_batch(3, 2, 3, 3, 200);
        let et = rand_batch(3, 2, 3, 3, 201);
        let m = binary_mask(2, 3, 3, 202);
        let lw = LossWeights::default();
        let w = mask_weight(&m, lw.alpha).unwrap();
        let eh = rand_batch(3, 2, 3, 3, 203);
        let f_s: Vec<Batch<f64>> = (0..2).map(|i| rand_batch(2, 2, 2, 2, 210 + i)).collect();
        let f_t: Vec<Batch<f64>> = (0..4).map(|i| rand_batch(2, 2, 2, 2, 220 + i)).collect();

        let fd_eps = 1e-5;
        let check = |analytic: f64, fd: f64, what: &str| {
            let denom = analytic.abs().max(fd.abs()).max(1e-10);
            assert!(
                (analytic - fd).abs() / denom < 1e-6,
                "{what}: analytic {analytic} vs fd {fd}"
            );
        };

        // task
        let g = grad_task_loss(&e, &eh, &w).unwrap();
        for idx in [0usize, 10, 33] {
            let mut p = eh.clone();
            p.data.as_slice_mut().unwrap()[idx] += fd_eps;
            let mut q = eh.clone();
            q.data.as_slice_mut().unwrap()[idx] -= fd_eps;
            let fd = (task_loss(&e, &p, &w).unwrap() - task_loss(&e, &q, &w).unwrap())
                / (2.0 * fd_eps);
            check(g.data.as_slice().unwrap()[idx], fd, "task");
        }
        // distill
        let g = grad_distill_loss(&et, &eh).unwrap();
        for idx in [1usize, 17] {
            let mut p = eh.clone();
            p.data.as_slice_mut().unwrap()[idx] += fd_eps;
            let mut q = eh.clone();
            q.data.as_slice_mut().unwrap()[idx] -= fd_eps;
            let fd = (distill_loss(&et, &p).unwrap() - distill_loss(&et, &q).unwrap())
                / (2.0 * fd_eps);
            check(g.data.as_slice().unwrap()[idx], fd, "distill");
        }
        // af
        let g = grad_asymmetric_feature_loss(&f_s, &f_t, &plan).unwrap();
        for layer in 0..2 {
            for idx in [0usize, 7] {
                let mut p = f_s.clone();
                p[layer].data.as_slice_mut().unwrap()[idx] += fd_eps;
                let mut q = f_s.clone();
                q[layer].data.as_slice_mut().unwrap()[idx] -= fd_eps;
                let fd = (asymmetric_feature_loss(&p, &f_t, &plan).unwrap()
                    - asymmetric_feature_loss(&q, &f_t, &plan).unwrap())
                    / (2.0 * fd_eps);
                check(g[layer].data.as_slice().unwrap()[idx], fd, "af");
            }
        }
    }
}
