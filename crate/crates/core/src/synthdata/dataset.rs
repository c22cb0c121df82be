//! On-disk dataset layout and loading.
//!
//! ```text
//! root/
//!   dataset.json            summary: counts, seed, generator version, hash
//!   {sl,ssl,test}/
//!     images/NNNNN.png      clean image (sl/test) or masked image (ssl)
//!     masks/NNNNN.png       0/255 grayscale
//!     manifest.jsonl        one record per sample
//! ```

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{generate_scene, make_sample, Sample, Scene, Split, SENTINEL_U8};
use crate::error::{Error, Result};
use crate::rng;
use rand::Rng as _;

pub const GENERATOR_VERSION: &str = "synthdata-v1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub n_sl: usize,
    pub n_ssl: usize,
    pub n_test: usize,
    /// First scene seed of each split; ranges must be disjoint.
    pub sl_seed_start: u64,
    pub ssl_seed_start: u64,
    pub test_seed_start: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            n_sl: 4096,
            n_ssl: 4096,
            n_test: 512,
            sl_seed_start: 0,
            ssl_seed_start: 4096,
            test_seed_start: 8192,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        let ranges = [
            (self.sl_seed_start, self.n_sl as u64, "sl"),
            (self.ssl_seed_start, self.n_ssl as u64, "ssl"),
            (self.test_seed_start, self.n_test as u64, "test"),
        ];
        for (i, a) in ranges.iter().enumerate() {
            for b in &ranges[i + 1..] {
                let (a0, a1) = (a.0, a.0 + a.1);
                let (b0, b1) = (b.0, b.0 + b.1);
                if a0 < b1 && b0 < a1 {
                    return Err(Error::Validity(format!(
                        "scene seed ranges overlap between splits {} and {}",
                        a.2, b.2
                    )));
                }
            }
        }
        Ok(())
    }

    fn split_range(&self, split: Split) -> (u64, usize) {
        match split {
            Split::Sl => (self.sl_seed_start, self.n_sl),
            Split::Ssl => (self.ssl_seed_start, self.n_ssl),
            Split::Test => (self.test_seed_start, self.n_test),
        }
    }
}

/// Per-sample manifest record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestLine {
    pub id: String,
    pub split: Split,
    pub local_prompt: String,
    pub global_prompt: String,
    pub scene_seed: u64,
    pub has_ground_truth: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub schema_version: u32,
    pub counts: [usize; 3],
    pub seed: u64,
    pub generator_version: String,
    pub config: DataConfig,
    pub dataset_hash: String,
}

pub struct Dataset {
    pub summary: DatasetSummary,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Regenerate the scene (and target index) behind a sample from its
    /// recorded seed. Scenes are not stored on disk; determinism makes them
    /// reconstructible.
    pub fn scene_of(&self, sample: &Sample) -> Result<(Scene, usize)> {
        scene_for_seed(self.summary.seed, sample.scene_seed)
    }
}

pub fn scene_for_seed(dataset_seed: u64, scene_seed: u64) -> Result<(Scene, usize)> {
    let mut rng = rng::stream(dataset_seed, scene_seed);
    let scene = generate_scene(&mut rng)?;
    let target = rng.gen_range(0..scene.shapes.len());
    Ok((scene, target))
}

fn generate_sample(dataset_seed: u64, scene_seed: u64, split: Split, index: usize) -> Result<Sample> {
    let (scene, target) = scene_for_seed(dataset_seed, scene_seed)?;
    make_sample(
        &scene,
        target,
        split,
        format!("{}-{:05}", split.dir_name(), index),
        scene_seed,
    )
}

fn save_png_rgb(path: &Path, planar: &[u8], side: usize) -> Result<()> {
    let hw = side * side;
    let mut interleaved = vec![0u8; 3 * hw];
    for i in 0..hw {
        for c in 0..3 {
            interleaved[i * 3 + c] = planar[c * hw + i];
        }
    }
    let img = image::RgbImage::from_raw(side as u32, side as u32, interleaved)
        .ok_or_else(|| Error::IoFailure("rgb buffer size".to_string()))?;
    img.save(path)?;
    Ok(())
}

fn save_png_gray(path: &Path, mask01: &[u8], side: usize) -> Result<()> {
    let buf: Vec<u8> = mask01.iter().map(|&m| if m > 0 { 255 } else { 0 }).collect();
    let img = image::GrayImage::from_raw(side as u32, side as u32, buf)
        .ok_or_else(|| Error::IoFailure("gray buffer size".to_string()))?;
    img.save(path)?;
    Ok(())
}

fn load_png_rgb(path: &Path) -> Result<(Vec<u8>, usize)> {
    let img = image::open(path)?.to_rgb8();
    let side = img.width() as usize;
    let hw = side * side;
    let raw = img.into_raw();
    let mut planar = vec![0u8; 3 * hw];
    for i in 0..hw {
        for c in 0..3 {
            planar[c * hw + i] = raw[i * 3 + c];
        }
    }
    Ok((planar, side))
}

fn load_png_gray(path: &Path) -> Result<Vec<u8>> {
    let img = image::open(path)?.to_luma8();
    Ok(img.into_raw().iter().map(|&v| u8::from(v > 127)).collect())
}

/// Generate and write all three splits. Returns the summary (also written to
/// `root/dataset.json`).
pub fn build_datasets(root: &Path, config: &DataConfig, seed: u64) -> Result<DatasetSummary> {
    config.validate()?;
    for split in [Split::Sl, Split::Ssl, Split::Test] {
        let (start, count) = config.split_range(split);
        let dir = root.join(split.dir_name());
        fs::create_dir_all(dir.join("images"))?;
        fs::create_dir_all(dir.join("masks"))?;
        let mut manifest = fs::File::create(dir.join("manifest.jsonl"))?;
        for i in 0..count {
            let scene_seed = start + i as u64;
            let sample = generate_sample(seed, scene_seed, split, i)?;
            let img_path = dir.join("images").join(format!("{i:05}.png"));
            match split {
                Split::Ssl => save_png_rgb(&img_path, &sample.masked_image, sample.side)?,
                _ => save_png_rgb(
                    &img_path,
                    sample.image.as_ref().expect("labeled split keeps image"),
                    sample.side,
                )?,
            }
            save_png_gray(
                &dir.join("masks").join(format!("{i:05}.png")),
                &sample.mask,
                sample.side,
            )?;
            let line = ManifestLine {
                id: sample.id.clone(),
                split,
                local_prompt: sample.local_prompt.clone(),
                global_prompt: sample.global_prompt.clone(),
                scene_seed,
                has_ground_truth: sample.has_ground_truth,
            };
            serde_json::to_writer(&mut manifest, &line)?;
            manifest.write_all(b"\n")?;
        }
    }
    let dataset_hash = dataset_hash_of(root)?;
    let summary = DatasetSummary {
        schema_version: 1,
        counts: [config.n_sl, config.n_ssl, config.n_test],
        seed,
        generator_version: GENERATOR_VERSION.to_string(),
        config: config.clone(),
        dataset_hash,
    };
    fs::write(
        root.join("dataset.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    Ok(summary)
}

/// SHA-256 over every split file (sorted relative path + bytes).
pub fn dataset_hash_of(root: &Path) -> Result<String> {
    let mut files: Vec<PathBuf> = Vec::new();
    for split in ["sl", "ssl", "test"] {
        let dir = root.join(split);
        if !dir.exists() {
            continue;
        }
        files.push(dir.join("manifest.jsonl"));
        for sub in ["images", "masks"] {
            let mut entries: Vec<PathBuf> = fs::read_dir(dir.join(sub))?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<_>>()?;
            entries.sort();
            files.extend(entries);
        }
    }
    let mut hasher = Sha256::new();
    for f in files {
        let rel = f.strip_prefix(root).unwrap_or(&f);
        hasher.update(rel.to_string_lossy().as_bytes());
        hasher.update(fs::read(&f)?);
    }
    Ok(format!("{:x}", hasher.finalize()))
}

/// Load one split into memory. For sl/test the masked image is
/// reconstructed from the stored clean image (identical bytes to what the
/// builder produced); ssl stores the masked image directly and yields no
/// clean image.
pub fn load_split(root: &Path, split: Split) -> Result<Dataset> {
    let summary: DatasetSummary =
        serde_json::from_str(&fs::read_to_string(root.join("dataset.json"))?)?;
    let dir = root.join(split.dir_name());
    let manifest = fs::File::open(dir.join("manifest.jsonl"))?;
    let mut samples = Vec::new();
    for (i, line) in BufReader::new(manifest).lines().enumerate() {
        let line = line?;
        let rec: ManifestLine = serde_json::from_str(&line)?;
        let (img, side) = load_png_rgb(&dir.join("images").join(format!("{i:05}.png")))?;
        let mask = load_png_gray(&dir.join("masks").join(format!("{i:05}.png")))?;
        let hw = side * side;
        let (image, masked_image) = if rec.has_ground_truth {
            let mut masked = img.clone();
            for c in 0..3 {
                for p in 0..hw {
                    if mask[p] == 1 {
                        masked[c * hw + p] = SENTINEL_U8;
                    }
                }
            }
            (Some(img), masked)
        } else {
            (None, img)
        };
        // Target index is reconstructible from the scene seed.
        let (_, target_index) = scene_for_seed(summary.seed, rec.scene_seed)?;
        samples.push(Sample {
            id: rec.id,
            split,
            scene_seed: rec.scene_seed,
            target_index,
            image,
            mask,
            masked_image,
            local_prompt: rec.local_prompt,
            global_prompt: rec.global_prompt,
            has_ground_truth: rec.has_ground_truth,
            side,
        });
    }
    Ok(Dataset { summary, samples })
}
