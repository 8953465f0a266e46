//! Solver accuracy across patch size, interval, drop ratio and image size.

use std::fmt::Write as _;

use super::data::smooth_image;
use super::HarnessError;
use crate::attacks::{jigsaw_solve, puzzle_metrics, Arrangement, PuzzleMetrics};
use crate::cipher::{drop_patches, gen_key, rs_encrypt};
use crate::imgio::{split_patches, Image};
use crate::rng::KeyStream;

pub const SWEEP_HEADER: &str = "patch_size,interval,drop_ratio,image_size,direct,neighbor,model_accuracy";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepSetting {
    pub patch_size: usize,
    pub interval: usize,
    pub drop_ratio: f64,
    pub image_size: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub settings: Vec<SweepSetting>,
    /// Puzzles per setting.
    pub images: usize,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    pub setting: SweepSetting,
    /// Means over the corpus.
    pub direct: f64,
    pub neighbor: f64,
    pub model_accuracy: Option<f64>,
}

/// Samples `img` on the setting's grid, drops patches, shuffles with a key
/// and scores the solver against the layout of the original image. Dropped
/// patches stay in the truth, so their adjacencies count as unrecovered.
pub fn puzzle_trial(img: &Image, patch_size: usize, interval: usize, drop_ratio: f64, seed: u64) -> Result<PuzzleMetrics, HarnessError> {
    let mut stream = KeyStream::new(seed);
    let (drop_seed, key_seed) = (stream.fork(), stream.fork());
    let mut grid = split_patches(img, patch_size, interval)?;
    if drop_ratio > 0.0 {
        grid = drop_patches(&grid, drop_ratio, drop_seed)?;
    }
    let key = gen_key(key_seed, grid.len())?;
    let cipher = rs_encrypt(&grid, &key)?;
    let truth = Arrangement::from_key(grid.rows, grid.cols, key.perm(), |_| true);
    let found = jigsaw_solve(&cipher)?;
    Ok(puzzle_metrics(&found, &truth)?)
}

/// Runs every setting over the same smooth corpus. Image `i` has the same
/// seed in every setting, so smaller image sizes are crops of larger ones
/// and settings are paired. `model` optionally supplies an accuracy column.
pub fn sweep(
    config: &SweepConfig,
    mut model: Option<&mut dyn FnMut(&SweepSetting) -> Result<f64, HarnessError>>,
) -> Result<Vec<SweepRow>, HarnessError> {
    if config.images == 0 {
        return Err(HarnessError::Config("sweep needs at least one image".into()));
    }
    let mut seeds = KeyStream::new(config.seed);
    let image_seeds: Vec<(u64, u64)> = (0..config.images).map(|_| (seeds.fork(), seeds.fork())).collect();
    let mut rows = Vec::with_capacity(config.settings.len());
    for s in &config.settings {
        let (mut direct, mut neighbor) = (0.0, 0.0);
        for &(img_seed, trial_seed) in &image_seeds {
            let img = smooth_image(s.image_size, s.image_size, 3, img_seed)?;
            let m = puzzle_trial(&img, s.patch_size, s.interval, s.drop_ratio, trial_seed)?;
            direct += m.direct;
            neighbor += m.neighbor;
        }
        let n = config.images as f64;
        let model_accuracy = match model.as_mut() {
            Some(f) => Some(f(s)?),
            None => None,
        };
        rows.push(SweepRow {
            setting: *s,
            direct: direct / n,
            neighbor: neighbor / n,
            model_accuracy,
        });
    }
    Ok(rows)
}

/// CSV with [`SWEEP_HEADER`]; a missing model accuracy is an empty field.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{SWEEP_HEADER}\n");
    for r in rows {
        let s = &r.setting;
        let acc = r.model_accuracy.map(|a| format!("{a:.6}")).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{:.6},{:.6},{}",
            s.patch_size, s.interval, s.drop_ratio, s.image_size, r.direct, r.neighbor, acc
        )
        .unwrap();
    }
    out
}
