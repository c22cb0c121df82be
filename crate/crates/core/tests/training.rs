//! Training-pipeline integration tests on desk-scale-but-tiny
//! configurations: the sampler reconstruction oracle, freeze contracts,
//! stage-2 data purity, logging, and run determinism.

use std::path::Path;

use refine_core::flowmatch::{sample, DEFAULT_SAMPLE_STEPS};
use refine_core::losses::LossWeights;
use refine_core::metrics::InjectedModel;
use refine_core::nets::{Backbone, BackboneSpec, ControlModule, Role};
use refine_core::nn::Batch;
use refine_core::rng;
use refine_core::synthdata::{
    build_datasets, generate_scene, load_split, make_sample, DataConfig, Dataset, DatasetSummary,
    Sample, Split,
};
use refine_core::trainer::{
    heldout_distill_loss, run_variant, train_and_save_teacher, train_teacher, ModelConfig,
    TeacherParams, TrainConfig, Variant,
};

fn tiny_model() -> ModelConfig {
    ModelConfig {
        backbone: BackboneSpec {
            layers: 4,
            width: 16,
            image_side: 32,
            patch: 2,
        },
        student_layers: 2,
        teacher_layers: 4,
        backbone_seed: 310,
        teacher_seed: 311,
    }
}

fn tiny_data(root: &Path) -> DataConfig {
    let cfg = DataConfig {
        n_sl: 24,
        n_ssl: 24,
        n_test: 8,
        sl_seed_start: 0,
        ssl_seed_start: 24,
        test_seed_start: 48,
    };
    build_datasets(root, &cfg, 77).unwrap();
    cfg
}

fn in_memory_dataset(samples: Vec<Sample>) -> Dataset {
    Dataset {
        summary: DatasetSummary {
            schema_version: 1,
            counts: [samples.len(), 0, 0],
            seed: 0,
            generator_version: "in-memory".to_string(),
            config: DataConfig {
                n_sl: samples.len(),
                n_ssl: 0,
                n_test: 0,
                ..DataConfig::default()
            },
            dataset_hash: "in-memory".to_string(),
        },
        samples,
    }
}

/// A teacher overfit to a one-image dataset reconstructs that image from
/// pure noise through the 16-step Euler sampler (MSE < 1e-2).
#[test]
fn overfit_one_image_reconstructs_through_sampler() {
    let model = ModelConfig {
        backbone: BackboneSpec {
            layers: 4,
            width: 24,
            image_side: 32,
            patch: 2,
        },
        ..tiny_model()
    };
    let backbone = Backbone::<f32>::init(model.backbone, model.backbone_seed);
    let scene = generate_scene(&mut rng::seeded(4)).unwrap();
    let sample_rec = make_sample(&scene, 0, Split::Sl, "one".to_string(), 4).unwrap();
    let d_one = in_memory_dataset(vec![sample_rec.clone()]);
    let params = TeacherParams {
        max_steps: 3000,
        psnr_floor_db: f64::INFINITY, // run the full budget
        eval_every: 10_000,
        eval_samples: 1,
        learning_rate: 2e-3,
    };
    let (teacher, _, _) = train_teacher(
        &backbone,
        &d_one,
        &[sample_rec.clone()],
        &model,
        &params,
        8,
        DEFAULT_SAMPLE_STEPS,
        None,
    )
    .unwrap();

    let cond = backbone.cond_batch(&[refine_core::nets::encode_condition(
        &sample_rec.local_prompt,
        &sample_rec.mask,
        &sample_rec.masked_image,
        32,
    )
    .unwrap()]);
    let mut m = InjectedModel::new(&backbone, Some(&teacher));
    let mut r = rng::seeded(123);
    let gen = sample(&mut m, &cond, DEFAULT_SAMPLE_STEPS, &mut r, 1, 32).unwrap();
    let clean = sample_rec.image_arr::<f32>().unwrap();
    let mut mse = 0.0f64;
    for (g, c) in gen.data.iter().zip(clean.iter()) {
        mse += ((g - c) as f64).powi(2);
    }
    mse /= clean.len() as f64;
    assert!(mse < 1e-2, "reconstruction MSE {mse}");
}

/// After one distillation step with a nonzero distill loss, at least one
/// student projection weight moves off zero.
#[test]
fn single_distill_step_activates_projection() {
    let dir = tempfile::tempdir().unwrap();
    let data_root = dir.path().join("data");
    tiny_data(&data_root);
    let model = tiny_model();

    // quick teacher (not converged, just non-trivial)
    let teacher_dir = dir.path().join("teacher");
    let (teacher_ckpt, _, _) = train_and_save_teacher(
        &teacher_dir,
        &data_root,
        &model,
        &TeacherParams {
            max_steps: 30,
            psnr_floor_db: f64::INFINITY,
            eval_every: 10_000,
            eval_samples: 2,
            learning_rate: 1e-3,
        },
        8,
        4,
        "testhash",
    )
    .unwrap();

    let run_dir = dir.path().join("run");
    let cfg = TrainConfig {
        variant: Variant::Ours,
        seed: 5,
        stage1_steps: 1,
        stage2_steps: 0,
        batch_size: 4,
        learning_rate: 1e-3,
        weights: LossWeights::default(),
        model,
        data_root: data_root.to_string_lossy().to_string(),
    };
    let out = run_variant(&run_dir, &cfg, "testhash", Some(&teacher_ckpt)).unwrap();
    let (student, _, _) =
        refine_core::nets::load_control::<f32>(&out.checkpoint_dir).unwrap();
    let moved = student
        .projs
        .iter()
        .any(|(w, _)| w.iter().any(|&v| v != 0.0));
    assert!(moved, "projection weights stayed at zero after a distill step");
}

/// Backbone and teacher checksums are bit-identical across a full (tiny)
/// ours run; stage-2 consumes only unlabeled ids; the loss log has one row
/// per step.
#[test]
fn freeze_purity_and_logging_contracts() {
    let dir = tempfile::tempdir().unwrap();
    let data_root = dir.path().join("data");
    tiny_data(&data_root);
    let model = tiny_model();
    let teacher_dir = dir.path().join("teacher");
    let (teacher_ckpt, _, _) = train_and_save_teacher(
        &teacher_dir,
        &data_root,
        &model,
        &TeacherParams {
            max_steps: 40,
            psnr_floor_db: f64::INFINITY,
            eval_every: 10_000,
            eval_samples: 2,
            learning_rate: 1e-3,
        },
        8,
        4,
        "testhash",
    )
    .unwrap();

    let cfg = TrainConfig {
        variant: Variant::Ours,
        seed: 6,
        stage1_steps: 12,
        stage2_steps: 6,
        batch_size: 4,
        learning_rate: 1e-3,
        weights: LossWeights::default(),
        model,
        data_root: data_root.to_string_lossy().to_string(),
    };
    let run_dir = dir.path().join("run");
    let out = run_variant(&run_dir, &cfg, "testhash", Some(&teacher_ckpt)).unwrap();

    assert_eq!(out.backbone_checksum_before, out.backbone_checksum_after);
    assert_eq!(
        out.teacher_checksum_before.as_deref(),
        out.teacher_checksum_after.as_deref()
    );

    let csv = std::fs::read_to_string(run_dir.join("losses.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 18, "one row per optimization step");
    assert_eq!(rows.iter().filter(|r| r.contains(",stage1,")).count(), 12);
    assert_eq!(rows.iter().filter(|r| r.contains(",stage2,")).count(), 6);

    // report written with all metric fields
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run_dir.join("report.json")).unwrap())
            .unwrap();
    for key in [
        "psnr_full",
        "psnr_masked",
        "ssim_full",
        "ssim_masked",
        "mmd",
    ] {
        assert!(report["metrics"][key].is_number(), "missing {key}");
    }
    assert_eq!(
        report["substitutions"]["fid_cmmd"],
        "rbf_mmd_random_features"
    );
}

/// Stage 2 refuses samples that expose ground truth.
#[test]
fn stage2_rejects_ground_truth_samples() {
    let dir = tempfile::tempdir().unwrap();
    let data_root = dir.path().join("data");
    tiny_data(&data_root);
    // corrupt: copy sl images over ssl images and flip the manifest flag
    let ssl_dir = data_root.join("ssl");
    let manifest = std::fs::read_to_string(ssl_dir.join("manifest.jsonl")).unwrap();
    let patched: String = manifest
        .lines()
        .map(|l| l.replace("\"has_ground_truth\":false", "\"has_ground_truth\":true"))
        .collect::<Vec<_>>()
        .join("\n");
    std::fs::write(ssl_dir.join("manifest.jsonl"), patched + "\n").unwrap();

    let model = tiny_model();
    let teacher_dir = dir.path().join("teacher");
    let (teacher_ckpt, _, _) = train_and_save_teacher(
        &teacher_dir,
        &data_root,
        &model,
        &TeacherParams {
            max_steps: 5,
            psnr_floor_db: f64::INFINITY,
            eval_every: 10_000,
            eval_samples: 2,
            learning_rate: 1e-3,
        },
        8,
        4,
        "testhash",
    )
    .unwrap();
    let cfg = TrainConfig {
        variant: Variant::Ours,
        seed: 6,
        stage1_steps: 1,
        stage2_steps: 2,
        batch_size: 4,
        learning_rate: 1e-3,
        weights: LossWeights::default(),
        model,
        data_root: data_root.to_string_lossy().to_string(),
    };
    let run_dir = dir.path().join("run");
    let err = run_variant(&run_dir, &cfg, "testhash", Some(&teacher_ckpt));
    assert!(err.is_err(), "ground-truth-exposing ssl sample must be rejected");
}

/// The fc baseline runs without a teacher checkpoint existing at all, and
/// distillation variants fail actionably when it is missing.
#[test]
fn fc_is_teacher_free_and_missing_teacher_is_actionable() {
    let dir = tempfile::tempdir().unwrap();
    let data_root = dir.path().join("data");
    tiny_data(&data_root);
    let model = tiny_model();
    let bogus = dir.path().join("no-such-teacher");
    let mut cfg = TrainConfig {
        variant: Variant::Fc,
        seed: 7,
        stage1_steps: 6,
        stage2_steps: 2,
        batch_size: 4,
        learning_rate: 1e-3,
        weights: LossWeights::default(),
        model,
        data_root: data_root.to_string_lossy().to_string(),
    };
    run_variant(&dir.path().join("run-fc"), &cfg, "testhash", None).unwrap();

    cfg.variant = Variant::Ours;
    let err = run_variant(&dir.path().join("run-ours"), &cfg, "testhash", Some(&bogus));
    let msg = format!("{}", err.err().unwrap());
    assert!(msg.contains("train-teacher"), "actionable message, got: {msg}");
}

/// Identical (variant, seed, config) reruns produce identical loss
/// trajectories and final metrics.
#[test]
fn short_run_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let data_root = dir.path().join("data");
    tiny_data(&data_root);
    let model = tiny_model();
    let teacher_dir = dir.path().join("teacher");
    let (teacher_ckpt, _, _) = train_and_save_teacher(
        &teacher_dir,
        &data_root,
        &model,
        &TeacherParams {
            max_steps: 20,
            psnr_floor_db: f64::INFINITY,
            eval_every: 10_000,
            eval_samples: 2,
            learning_rate: 1e-3,
        },
        8,
        4,
        "testhash",
    )
    .unwrap();
    let cfg = TrainConfig {
        variant: Variant::WoMask,
        seed: 9,
        stage1_steps: 8,
        stage2_steps: 4,
        batch_size: 4,
        learning_rate: 1e-3,
        weights: LossWeights::default(),
        model,
        data_root: data_root.to_string_lossy().to_string(),
    };
    let out1 = run_variant(&dir.path().join("run1"), &cfg, "testhash", Some(&teacher_ckpt)).unwrap();
    let out2 = run_variant(&dir.path().join("run2"), &cfg, "testhash", Some(&teacher_ckpt)).unwrap();
    let csv1 = std::fs::read_to_string(dir.path().join("run1").join("losses.csv")).unwrap();
    let csv2 = std::fs::read_to_string(dir.path().join("run2").join("losses.csv")).unwrap();
    assert_eq!(csv1, csv2, "loss trajectories must match bit-for-bit");
    assert_eq!(out1.report.metrics.psnr_full, out2.report.metrics.psnr_full);
    assert_eq!(out1.report.metrics.mmd, out2.report.metrics.mmd);
}

/// Held-out distillation loss for a zero-projection student equals the
/// distance between bare-backbone output and teacher output; it is finite
/// and reproducible.
#[test]
fn heldout_distill_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let data_root = dir.path().join("data");
    tiny_data(&data_root);
    let model = tiny_model();
    let backbone = Backbone::<f32>::init(model.backbone, model.backbone_seed);
    let plan = model.student_plan().unwrap();
    let student =
        ControlModule::init_from_backbone(&backbone, 2, Role::Student, plan).unwrap();
    let teacher = ControlModule::init_from_backbone(
        &backbone,
        4,
        Role::Teacher,
        model.teacher_plan().unwrap(),
    )
    .unwrap();
    let d_test = load_split(&data_root, Split::Test).unwrap();
    let a = heldout_distill_loss(&backbone, &student, &teacher, &d_test, 3).unwrap();
    let b = heldout_distill_loss(&backbone, &student, &teacher, &d_test, 3).unwrap();
    assert_eq!(a, b);
    // zero-projection student AND zero-projection teacher coincide with the
    // bare backbone, so the distance is exactly zero
    assert_eq!(a, 0.0);
}

/// Rough per-step timing at the full default model size; ignored by
/// default, used to size the experiment budget.
#[test]
#[ignore]
fn bench_default_step() {
    let dir = tempfile::tempdir().unwrap();
    let data_root = dir.path().join("data");
    let cfg = DataConfig {
        n_sl: 64,
        n_ssl: 64,
        n_test: 8,
        sl_seed_start: 0,
        ssl_seed_start: 64,
        test_seed_start: 128,
    };
    build_datasets(&data_root, &cfg, 1).unwrap();
    let model = ModelConfig::default();
    let backbone = Backbone::<f32>::init(model.backbone, model.backbone_seed);
    let d_sl = load_split(&data_root, Split::Sl).unwrap();
    let heldout: Vec<Sample> = d_sl.samples[..4].to_vec();
    let params = TeacherParams {
        max_steps: 10,
        psnr_floor_db: f64::INFINITY,
        eval_every: 100_000,
        eval_samples: 4,
        learning_rate: 1e-3,
    };
    let t0 = std::time::Instant::now();
    let _ = train_teacher(&backbone, &d_sl, &heldout, &model, &params, 32, 4, None).unwrap();
    let teacher_step = t0.elapsed().as_secs_f64() / 10.0;
    println!("teacher step: {:.3} s", teacher_step);

    let _ = Batch::<f32>::zeros(1, 1, 1, 1);
    let t1 = std::time::Instant::now();
    let teacher_dir = dir.path().join("teacher");
    let (teacher_ckpt, _, _) = train_and_save_teacher(
        &teacher_dir,
        &data_root,
        &model,
        &params,
        32,
        4,
        "bench",
    )
    .unwrap();
    println!("teacher 10 steps + save: {:.2} s", t1.elapsed().as_secs_f64());

    let cfg = TrainConfig {
        variant: Variant::Ours,
        seed: 1,
        stage1_steps: 10,
        stage2_steps: 5,
        batch_size: 32,
        learning_rate: 1e-3,
        weights: LossWeights::default(),
        model,
        data_root: data_root.to_string_lossy().to_string(),
    };
    let t2 = std::time::Instant::now();
    run_variant(&dir.path().join("run"), &cfg, "bench", Some(&teacher_ckpt)).unwrap();
    println!(
        "ours 15 steps + eval(8): {:.2} s ({:.3} s/step upper bound)",
        t2.elapsed().as_secs_f64(),
        t2.elapsed().as_secs_f64() / 15.0
    );
}
