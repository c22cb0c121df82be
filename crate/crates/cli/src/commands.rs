//! Subcommand implementations.

use std::path::{Path, PathBuf};

use anyhow::anyhow;
use serde::{Deserialize, Serialize};

use refine_core::metrics::MetricReport;
use refine_core::nets::{encode_condition, load_control};
use refine_core::rng;
use refine_core::synthdata::{
    build_datasets, classify_region_color, generate_two_same_kind_scene, global_prompt,
    local_prompt, render_scene, shape_mask,
};
use refine_core::trainer::{run_variant, train_and_save_teacher, TrainConfig, Variant};

use crate::config::ExperimentConfig;
use crate::plot;

/// Exit codes promised by the interface: 0 ok, 2 config error, 3 numeric
/// failure, 4 validity refusal.
#[derive(Debug)]
pub enum CmdError {
    Config(anyhow::Error),
    Numeric(anyhow::Error),
    Validity(anyhow::Error),
}

impl CmdError {
    pub fn code(&self) -> i32 {
        match self {
            CmdError::Config(_) => 2,
            CmdError::Numeric(_) => 3,
            CmdError::Validity(_) => 4,
        }
    }

    pub fn message(&self) -> String {
        match self {
            CmdError::Config(e) | CmdError::Numeric(e) | CmdError::Validity(e) => {
                format!("{e:#}")
            }
        }
    }
}

pub type CmdResult<T> = std::result::Result<T, CmdError>;

fn config_err<T>(e: impl Into<anyhow::Error>) -> CmdResult<T> {
    Err(CmdError::Config(e.into()))
}

fn validity_err<T>(msg: String) -> CmdResult<T> {
    Err(CmdError::Validity(anyhow!(msg)))
}

/// Map core errors onto the exit-code taxonomy.
fn core_err<T>(e: refine_core::Error) -> CmdResult<T> {
    use refine_core::Error as E;
    Err(match e {
        E::Numeric(_) => CmdError::Numeric(anyhow!("{e}")),
        E::Validity(_) => CmdError::Validity(anyhow!("{e}")),
        E::DomainError(_) | E::ShapeMismatch(_) | E::PlanMismatch(_) | E::UnknownToken { .. }
        | E::IndexError { .. } => CmdError::Config(anyhow!("{e}")),
        other => CmdError::Validity(anyhow!("{other}")),
    })
}

pub fn out_root(cli_out: Option<&Path>) -> PathBuf {
    if let Some(p) = cli_out {
        return p.to_path_buf();
    }
    if let Ok(env) = std::env::var("REFINE_OUT") {
        if !env.is_empty() {
            return PathBuf::from(env);
        }
    }
    PathBuf::from("runs")
}

pub fn data_dir(out: &Path) -> PathBuf {
    out.join("data")
}

pub fn teacher_dir(out: &Path, cfg: &ExperimentConfig) -> PathBuf {
    out.join("teacher").join(cfg.hash8())
}

pub fn run_dir(out: &Path, variant: Variant, seed: u64, cfg: &ExperimentConfig) -> PathBuf {
    out.join("runs")
        .join(format!("{}-s{}-{}", variant.name(), seed, cfg.hash8()))
}

fn dir_nonempty(p: &Path) -> bool {
    p.is_dir()
        && std::fs::read_dir(p)
            .map(|mut d| d.next().is_some())
            .unwrap_or(false)
}

/// Verify the on-disk dataset matches the config's data section + seed.
fn check_dataset(out: &Path, cfg: &ExperimentConfig) -> CmdResult<PathBuf> {
    let dir = data_dir(out);
    let summary_path = dir.join("dataset.json");
    if !summary_path.exists() {
        return validity_err(format!(
            "dataset not found at {}; run `refine gen-data` first",
            dir.display()
        ));
    }
    let summary: refine_core::synthdata::DatasetSummary =
        serde_json::from_str(&std::fs::read_to_string(&summary_path).map_err(|e| {
            CmdError::Validity(anyhow!("reading {}: {e}", summary_path.display()))
        })?)
        .map_err(|e| CmdError::Validity(anyhow!("parsing dataset.json: {e}")))?;
    if summary.config != cfg.data || summary.seed != cfg.seed {
        return validity_err(format!(
            "dataset at {} was generated with a different data config or seed; \
             regenerate with `refine gen-data --force`",
            dir.display()
        ));
    }
    Ok(dir)
}

pub fn cmd_gen_data(cfg: &ExperimentConfig, out: &Path, force: bool) -> CmdResult<()> {
    let dest = data_dir(out);
    if dir_nonempty(&dest) {
        if !force {
            return validity_err(format!(
                "{} already exists; pass --force to regenerate",
                dest.display()
            ));
        }
        std::fs::remove_dir_all(&dest)
            .map_err(|e| CmdError::Validity(anyhow!("clearing {}: {e}", dest.display())))?;
    }
    let summary = match build_datasets(&dest, &cfg.data, cfg.seed) {
        Ok(s) => s,
        Err(e) => return core_err(e),
    };
    println!(
        "generated {} sl / {} ssl / {} test samples at {}",
        summary.counts[0],
        summary.counts[1],
        summary.counts[2],
        dest.display()
    );
    println!("dataset hash: {}", summary.dataset_hash);
    Ok(())
}

pub fn cmd_train_teacher(cfg: &ExperimentConfig, out: &Path) -> CmdResult<()> {
    let data = check_dataset(out, cfg)?;
    let dest = teacher_dir(out, cfg);
    let ckpt = dest.join("checkpoint");
    if ckpt.join("weights.bin").exists() {
        println!("teacher checkpoint already exists at {}", ckpt.display());
        return Ok(());
    }
    let started = std::time::Instant::now();
    let (ckpt, converged, best_psnr) = match train_and_save_teacher(
        &dest,
        &data,
        &cfg.model,
        &cfg.teacher,
        cfg.train.batch_size,
        cfg.eval.sample_steps,
        &cfg.config_hash(),
    ) {
        Ok(v) => v,
        Err(e) => return core_err(e),
    };
    let _ = plot::loss_curve(&dest.join("losses.csv"), &dest.join("loss_curve.png"));
    println!(
        "teacher trained in {:.1} min; held-out masked-PSNR {:.2} dB (floor {:.2} dB)",
        started.elapsed().as_secs_f64() / 60.0,
        best_psnr,
        cfg.teacher.psnr_floor_db
    );
    if converged {
        println!("converged: floor reached; checkpoint at {}", ckpt.display());
    } else {
        println!(
            "warning: NonConvergence — floor not reached within {} steps; run is flagged in teacher.json",
            cfg.teacher.max_steps
        );
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub seed: u64,
    pub started_at: String,
    pub finished_at: Option<String>,
    pub artifacts: std::collections::BTreeMap<String, String>,
    pub code_version: String,
}

fn now_iso() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

pub fn cmd_run(
    variant_name: &str,
    seed: u64,
    cfg: &ExperimentConfig,
    out: &Path,
) -> CmdResult<PathBuf> {
    let variant = match Variant::parse(variant_name) {
        Ok(v) => v,
        Err(e) => return config_err(anyhow!("{e}")),
    };
    let data = check_dataset(out, cfg)?;
    let teacher_ckpt = if variant.needs_teacher() {
        let ckpt = teacher_dir(out, cfg).join("checkpoint");
        if !ckpt.join("weights.bin").exists() {
            return validity_err(format!(
                "teacher checkpoint missing at {}; run `refine train-teacher` first",
                ckpt.display()
            ));
        }
        Some(ckpt)
    } else {
        None
    };
    let dir = run_dir(out, variant, seed, cfg);
    if dir.join("report.json").exists() {
        return validity_err(format!(
            "run directory {} is already complete; completed runs are never mutated \
             (use a different --out or REFINE_OUT, or remove it manually)",
            dir.display()
        ));
    }
    std::fs::create_dir_all(&dir)
        .map_err(|e| CmdError::Validity(anyhow!("creating {}: {e}", dir.display())))?;
    let config_hash = cfg.config_hash();
    std::fs::write(
        dir.join("config.json"),
        serde_json::to_string_pretty(&serde_json::to_value(cfg).expect("config serializes"))
            .expect("pretty json"),
    )
    .map_err(|e| CmdError::Validity(anyhow!("writing config.json: {e}")))?;

    let mut manifest = RunManifest {
        command: format!("run --variant {} --seed {}", variant.name(), seed),
        config: serde_json::to_value(cfg).expect("config serializes"),
        config_hash: config_hash.clone(),
        seed,
        started_at: now_iso(),
        finished_at: None,
        artifacts: Default::default(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
    };
    write_manifest(&dir, &manifest)?;

    let train_cfg = TrainConfig {
        variant,
        seed,
        stage1_steps: cfg.train.stage1_steps,
        stage2_steps: cfg.train.stage2_steps,
        batch_size: cfg.train.batch_size,
        learning_rate: cfg.train.learning_rate,
        weights: cfg.train.weights,
        model: cfg.model,
        data_root: data.to_string_lossy().to_string(),
    };
    let started = std::time::Instant::now();
    let output = match run_variant(&dir, &train_cfg, &config_hash, teacher_ckpt.as_deref()) {
        Ok(o) => o,
        Err(e) => return core_err(e),
    };
    let _ = plot::loss_curve(&dir.join("losses.csv"), &dir.join("loss_curve.png"));

    manifest.finished_at = Some(now_iso());
    manifest.artifacts.insert(
        "checkpoint".to_string(),
        output.checkpoint_dir.to_string_lossy().to_string(),
    );
    for name in ["report.json", "losses.csv", "loss_curve.png", "alignment.json"] {
        manifest
            .artifacts
            .insert(name.to_string(), dir.join(name).to_string_lossy().to_string());
    }
    write_manifest(&dir, &manifest)?;

    println!(
        "{} seed {} finished in {:.1} min",
        variant.name(),
        seed,
        started.elapsed().as_secs_f64() / 60.0
    );
    let m = &output.report.metrics;
    println!(
        "  psnr_full {:.3} dB | psnr_masked {:.3} dB | ssim_full {:.4} | ssim_masked {:.4} | mmd {:.5}",
        m.psnr_full, m.psnr_masked, m.ssim_full, m.ssim_masked, m.mmd
    );
    if let Some(h) = output.report.heldout_distill {
        println!(
            "  held-out distill loss: stage1 {:.5} -> stage2 {:.5}",
            h.after_stage1, h.after_stage2
        );
    }
    Ok(dir)
}

fn write_manifest(dir: &Path, manifest: &RunManifest) -> CmdResult<()> {
    std::fs::write(
        dir.join("run.json"),
        serde_json::to_string_pretty(manifest).expect("manifest serializes"),
    )
    .map_err(|e| CmdError::Validity(anyhow!("writing run.json: {e}")))?;
    Ok(())
}

/// Column spec: (label, higher-is-better, accessor).
type Col = (
    &'static str,
    bool,
    fn(&refine_core::metrics::MetricValues) -> f64,
);

const COLUMNS: [Col; 5] = [
    ("psnr_full^", true, |m| m.psnr_full),
    ("psnr_masked^", true, |m| m.psnr_masked),
    ("ssim_full^", true, |m| m.ssim_full),
    ("ssim_masked^", true, |m| m.ssim_masked),
    ("mmd_v", false, |m| m.mmd),
];

pub fn cmd_table(run_dirs: &[PathBuf], csv_out: Option<&Path>) -> CmdResult<String> {
    if run_dirs.is_empty() {
        return config_err(anyhow!("no run directories given"));
    }
    let mut reports: Vec<(String, MetricReport)> = Vec::new();
    for dir in run_dirs {
        let path = dir.join("report.json");
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CmdError::Validity(anyhow!("reading {}: {e}", path.display())))?;
        let report: MetricReport = serde_json::from_str(&text)
            .map_err(|e| CmdError::Validity(anyhow!("parsing {}: {e}", path.display())))?;
        let label = dir
            .file_name()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_else(|| dir.display().to_string());
        reports.push((label, report));
    }
    let hash0 = &reports[0].1.dataset_hash;
    if let Some((label, _)) = reports.iter().find(|(_, r)| &r.dataset_hash != hash0) {
        return validity_err(format!(
            "refusing to compare: run {label} was evaluated on a different dataset (hash mismatch)"
        ));
    }

    // best value per column (only flagged when more than one run)
    let flag = reports.len() > 1;
    let mut best: Vec<f64> = Vec::new();
    for (_, higher, get) in COLUMNS {
        let vals = reports.iter().map(|(_, r)| get(&r.metrics));
        best.push(if higher {
            vals.fold(f64::NEG_INFINITY, f64::max)
        } else {
            vals.fold(f64::INFINITY, f64::min)
        });
    }

    let mut text = String::new();
    let mut csv = String::from("run,psnr_full,psnr_masked,ssim_full,ssim_masked,mmd\n");
    let width = reports.iter().map(|(l, _)| l.len()).max().unwrap_or(8).max(8);
    text.push_str(&format!("{:width$}", "run"));
    for (label, _, _) in COLUMNS {
        text.push_str(&format!(" {label:>14}"));
    }
    text.push('\n');
    for (label, report) in &reports {
        text.push_str(&format!("{label:width$}"));
        csv.push_str(label);
        for (ci, (_, _, get)) in COLUMNS.iter().enumerate() {
            let v = get(&report.metrics);
            let mark = if flag && v == best[ci] { "*" } else { " " };
            text.push_str(&format!(" {v:>13.4}{mark}"));
            csv.push_str(&format!(",{v:.6}"));
        }
        text.push('\n');
        csv.push('\n');
    }
    if let Some(csv_path) = csv_out {
        std::fs::write(csv_path, &csv)
            .map_err(|e| CmdError::Validity(anyhow!("writing {}: {e}", csv_path.display())))?;
        let labels: Vec<String> = reports.iter().map(|(l, _)| l.clone()).collect();
        let values: Vec<f64> = reports.iter().map(|(_, r)| r.metrics.psnr_masked).collect();
        let _ = plot::metric_bars(&labels, &values, &csv_path.with_extension("png"));
    }
    print!("{text}");
    Ok(text)
}

/// Local-vs-global prompt side-by-side on a two-same-shape scene: renders
/// [original | mask | local-prompt generation | global-prompt generation].
pub fn cmd_promptdemo(
    scene_seed: u64,
    target_index: usize,
    checkpoint: &Path,
    cfg: &ExperimentConfig,
    out: &Path,
) -> CmdResult<PathBuf> {
    let (control, backbone, _meta) = match load_control::<f32>(checkpoint) {
        Ok(v) => v,
        Err(e) => return core_err(e),
    };
    let mut scene_rng = rng::stream(0xDE30, scene_seed);
    let scene = match generate_two_same_kind_scene(&mut scene_rng) {
        Ok(s) => s,
        Err(e) => return core_err(e),
    };
    if target_index >= scene.shapes.len() {
        return config_err(anyhow!(
            "target index {target_index} out of range for {} shapes",
            scene.shapes.len()
        ));
    }
    let side = scene.side;
    let image = render_scene(&scene);
    let mask = match shape_mask(&scene, target_index) {
        Ok(m) => m,
        Err(e) => return core_err(e),
    };
    let local = local_prompt(&scene.shapes[target_index]);
    let global = global_prompt(&scene);
    let mut tiles: Vec<Vec<u8>> = vec![image.clone()];
    let hw = side * side;
    // mask tile as white-on-black
    let mut mask_tile = vec![0u8; 3 * hw];
    for p in 0..hw {
        if mask[p] == 1 {
            for c in 0..3 {
                mask_tile[c * hw + p] = 255;
            }
        }
    }
    tiles.push(mask_tile);

    let mut predictions = Vec::new();
    for prompt in [&local, &global] {
        let cond_single = match encode_condition::<f32>(prompt, &mask, &image, side) {
            Ok(c) => c,
            Err(e) => return core_err(e),
        };
        let cond = backbone.cond_batch(&[cond_single]);
        let mut model = refine_core::metrics::InjectedModel::new(&backbone, Some(&control));
        let mut gen_rng = rng::stream(0xDE31, scene_seed);
        let gen = match refine_core::flowmatch::sample(
            &mut model,
            &cond,
            cfg.eval.sample_steps,
            &mut gen_rng,
            1,
            side,
        ) {
            Ok(g) => g,
            Err(e) => return core_err(e),
        };
        let mut tile = vec![0u8; 3 * hw];
        let mut genf = vec![0f32; 3 * hw];
        for c in 0..3 {
            for p in 0..hw {
                let v = gen.data[(c, p)].clamp(0.0, 1.0);
                genf[c * hw + p] = v;
                tile[c * hw + p] = (v * 255.0).round() as u8;
            }
        }
        let predicted = classify_region_color(&genf, &scene, target_index)
            .map(|i| refine_core::vocab::COLORS[i])
            .unwrap_or("?");
        predictions.push(predicted);
        tiles.push(tile);
    }

    // 4-tile grid, 4x nearest upscale, 2px separators
    let scale = 4usize;
    let sep = 2usize;
    let tile_w = side * scale;
    let grid_w = tiles.len() * tile_w + (tiles.len() - 1) * sep;
    let grid_h = tile_w;
    let mut grid = vec![255u8; 3 * grid_w * grid_h];
    for (ti, tile) in tiles.iter().enumerate() {
        let x_off = ti * (tile_w + sep);
        for y in 0..grid_h {
            for x in 0..tile_w {
                let (sy, sx) = (y / scale, x / scale);
                for c in 0..3 {
                    grid[(y * grid_w + x_off + x) * 3 + c] = tile[c * hw + sy * side + sx];
                }
            }
        }
    }
    let demo_dir = out.join("demo");
    std::fs::create_dir_all(&demo_dir)
        .map_err(|e| CmdError::Validity(anyhow!("creating demo dir: {e}")))?;
    let png = demo_dir.join(format!("scene{scene_seed}-t{target_index}.png"));
    let img = image::RgbImage::from_raw(grid_w as u32, grid_h as u32, grid)
        .ok_or_else(|| CmdError::Numeric(anyhow!("grid buffer")))?;
    img.save(&png)
        .map_err(|e| CmdError::Validity(anyhow!("writing {}: {e}", png.display())))?;

    let target_color = scene.shapes[target_index].color_name();
    println!("scene {scene_seed}: target is a {local} (panel order: original, mask, local, global)");
    println!("  local prompt  {local:?} -> masked region classified {}", predictions[0]);
    println!("  global prompt {global:?} -> masked region classified {}", predictions[1]);
    println!(
        "  local correct: {} | global correct: {}",
        predictions[0] == target_color,
        predictions[1] == target_color
    );
    println!("grid written to {}", png.display());
    Ok(png)
}

pub fn cmd_gradcheck() -> CmdResult<()> {
    let started = std::time::Instant::now();
    let results = refine_core::gradcheck::run_suite(7);
    let mut all_pass = true;
    for r in &results {
        println!(
            "{} {:<28} max rel err {:.3e} over {} elements ({} instances)",
            if r.pass { "PASS" } else { "FAIL" },
            r.op,
            r.max_rel_err,
            r.elements_checked,
            r.instances
        );
        all_pass &= r.pass;
    }
    println!("gradcheck finished in {:.2} s", started.elapsed().as_secs_f64());
    if !all_pass {
        return Err(CmdError::Numeric(anyhow!("gradient check failed")));
    }
    Ok(())
}

/// Ensure `Result` from anyhow maps to config errors at the CLI boundary.
pub fn load_config(path: Option<&Path>) -> CmdResult<ExperimentConfig> {
    ExperimentConfig::load(path).map_err(CmdError::Config)
}

/// Used by the acceptance suite: train-or-reuse a run and return its report.
pub fn ensure_run(
    variant: Variant,
    seed: u64,
    cfg: &ExperimentConfig,
    out: &Path,
) -> CmdResult<MetricReport> {
    let dir = run_dir(out, variant, seed, cfg);
    let report_path = dir.join("report.json");
    if !report_path.exists() {
        cmd_run(variant.name(), seed, cfg, out)?;
    }
    let report: MetricReport = serde_json::from_str(
        &std::fs::read_to_string(&report_path)
            .map_err(|e| CmdError::Validity(anyhow!("reading {}: {e}", report_path.display())))?,
    )
    .map_err(|e| CmdError::Validity(anyhow!("parsing report.json: {e}")))?;
    Ok(report)
}

/// Train-or-reuse the shared teacher.
pub fn ensure_teacher(cfg: &ExperimentConfig, out: &Path) -> CmdResult<()> {
    let ckpt = teacher_dir(out, cfg).join("checkpoint");
    if !ckpt.join("weights.bin").exists() {
        cmd_gen_data_if_missing(cfg, out)?;
        cmd_train_teacher(cfg, out)?;
    }
    Ok(())
}

pub fn cmd_gen_data_if_missing(cfg: &ExperimentConfig, out: &Path) -> CmdResult<()> {
    if check_dataset(out, cfg).is_ok() {
        return Ok(());
    }
    cmd_gen_data(cfg, out, false)
}

/// Load a run's report if present.
pub fn try_load_report(dir: &Path) -> Option<MetricReport> {
    let text = std::fs::read_to_string(dir.join("report.json")).ok()?;
    serde_json::from_str(&text).ok()
}
