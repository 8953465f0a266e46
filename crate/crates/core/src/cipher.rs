//! Patch-level encryption: random shuffling (RS), sub-patch mixing (MI),
//! their alternation into a substitution-permutation cipher, keys and
//! key-space accounting.

use std::fmt::Write as _;

use num_bigint::BigUint;
use thiserror::Error;

use crate::imgio::{extract_block, split_subpatches, write_block, Image, ImageError, PatchGrid};
use crate::rng::KeyStream;

/// Sub-patches mixed per patch. The only supported value.
pub const SUB_PATCHES: usize = 4;

const KEY_MAGIC: &str = "PICRYPT-KEY 1";

#[derive(Debug, Error)]
pub enum CipherError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("key error: {0}")]
    Key(String),
    #[error("key file line {line}: {reason}")]
    KeyFile { line: usize, reason: String },
    #[error(transparent)]
    Image(#[from] ImageError),
}

/// A seeded permutation of patch indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PermutationKey {
    n: usize,
    seed: u64,
    perm: Vec<usize>,
}

impl PermutationKey {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    pub fn inverse(&self) -> Vec<usize> {
        invert(&self.perm)
    }

    /// Serializes to the four-line key file format.
    pub fn to_key_file(&self) -> String {
        let mut out = String::new();
        let perm: Vec<String> = self.perm.iter().map(ToString::to_string).collect();
        writeln!(out, "{KEY_MAGIC}").unwrap();
        writeln!(out, "n={}", self.n).unwrap();
        writeln!(out, "seed={}", self.seed).unwrap();
        writeln!(out, "perm={}", perm.join(",")).unwrap();
        out
    }

    /// Parses a key file and checks that `perm` is the one `(seed, n)` generates.
    pub fn from_key_file(text: &str) -> Result<Self, CipherError> {
        let lines: Vec<&str> = text.lines().collect();
        let bad = |line: usize, reason: &str| CipherError::KeyFile {
            line,
            reason: reason.to_string(),
        };
        if lines.len() != 4 {
            return Err(bad(lines.len().min(4) + 1, "expected exactly four lines"));
        }
        if lines[0] != KEY_MAGIC {
            return Err(bad(1, "missing PICRYPT-KEY 1 header"));
        }
        let field = |idx: usize, name: &str| {
            lines[idx]
                .strip_prefix(name)
                .and_then(|rest| rest.strip_prefix('='))
                .ok_or_else(|| bad(idx + 1, &format!("expected {name}=...")))
        };
        let n: usize = field(1, "n")?.parse().map_err(|_| bad(2, "n is not an integer"))?;
        let seed: u64 = field(2, "seed")?
            .parse()
            .map_err(|_| bad(3, "seed is not an unsigned 64-bit integer"))?;
        let perm = field(3, "perm")?
            .split(',')
            .map(|s| s.parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| bad(4, "perm holds a non-integer entry"))?;
        let expected = gen_key(seed, n).map_err(|e| bad(2, &e.to_string()))?;
        if expected.perm != perm {
            return Err(CipherError::Key(format!(
                "permutation does not match seed {seed} for n={n}"
            )));
        }
        Ok(expected)
    }
}

pub fn invert(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// Fisher–Yates over `n-1 ..= 1`, drawing `j` uniformly from `[0, i]`.
pub fn gen_key(seed: u64, n: usize) -> Result<PermutationKey, CipherError> {
    if n == 0 {
        return Err(CipherError::Domain("a key needs at least one patch".into()));
    }
    let mut stream = KeyStream::new(seed);
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = stream.bounded(i as u64 + 1) as usize;
        perm.swap(i, j);
    }
    Ok(PermutationKey { n, seed, perm })
}

/// Output slot `i` receives input item `perm[i]`.
pub fn apply_permutation<T: Clone>(items: &[T], perm: &[usize]) -> Vec<T> {
    perm.iter().map(|&src| items[src].clone()).collect()
}

fn check_key(key: &PermutationKey, count: usize) -> Result<(), CipherError> {
    if key.n != count {
        return Err(CipherError::Key(format!(
            "key covers {} patches but the grid has {count}",
            key.n
        )));
    }
    Ok(())
}

pub fn rs_encrypt(grid: &PatchGrid, key: &PermutationKey) -> Result<PatchGrid, CipherError> {
    check_key(key, grid.len())?;
    Ok(grid.with_patches(apply_permutation(&grid.patches, &key.perm)))
}

pub fn rs_decrypt(grid: &PatchGrid, key: &PermutationKey) -> Result<PatchGrid, CipherError> {
    check_key(key, grid.len())?;
    Ok(grid.with_patches(apply_permutation(&grid.patches, &key.inverse())))
}

/// Real-valued grid of square tiles with values in [0,1].
///
/// `tile_size` is the side of each stored tile; after mixing it is half the
/// source patch size.
#[derive(Clone, Debug, PartialEq)]
pub struct MixedGrid {
    pub rows: usize,
    pub cols: usize,
    pub tile_size: usize,
    pub channels: usize,
    pub patches: Vec<Vec<f64>>,
}

impl MixedGrid {
    pub fn tile_len(&self) -> usize {
        self.tile_size * self.tile_size * self.channels
    }

    pub fn permuted(&self, key: &PermutationKey) -> Result<Self, CipherError> {
        check_key(key, self.patches.len())?;
        Ok(Self {
            patches: apply_permutation(&self.patches, &key.perm),
            ..self.clone()
        })
    }

    /// Tiles laid edge to edge into a `(rows·t) × (cols·t)` plane.
    pub fn to_plane(&self) -> (usize, usize, Vec<f64>) {
        let t = self.tile_size;
        let (h, w) = (self.rows * t, self.cols * t);
        let mut plane = vec![0.0; h * w * self.channels];
        for (idx, tile) in self.patches.iter().enumerate() {
            write_block(&mut plane, w, self.channels, (idx / self.cols) * t, (idx % self.cols) * t, t, tile);
        }
        (h, w, plane)
    }

    /// Quantizes to 8 bits (round half to even) for viewing.
    pub fn to_image(&self) -> Result<Image, CipherError> {
        let (h, w, plane) = self.to_plane();
        Ok(Image::new(h, w, self.channels, plane.iter().map(|&v| quantize(v)).collect())?)
    }

    /// Population variance of per-tile means.
    pub fn tile_mean_variance(&self) -> f64 {
        let means: Vec<f64> = self
            .patches
            .iter()
            .map(|p| p.iter().sum::<f64>() / p.len() as f64)
            .collect();
        let mu = means.iter().sum::<f64>() / means.len() as f64;
        means.iter().map(|m| (m - mu).powi(2)).sum::<f64>() / means.len() as f64
    }
}

pub fn quantize(v: f64) -> u8 {
    (v * 255.0).round_ties_even().clamp(0.0, 255.0) as u8
}

/// Elementwise mean of the four quadrants of a real-valued patch.
pub fn mix_patch(patch: &[f64], patch_size: usize, channels: usize) -> Result<Vec<f64>, CipherError> {
    let [a, b, c, d] = split_subpatches(patch, patch_size, channels)?;
    Ok(mean_of_four([&a, &b, &c, &d]))
}

pub(crate) fn mean_of_four(parts: [&[f64]; 4]) -> Vec<f64> {
    (0..parts[0].len())
        .map(|i| (parts[0][i] + parts[1][i] + parts[2][i] + parts[3][i]) / 4.0)
        .collect()
}

fn mix_tiles(
    rows: usize,
    cols: usize,
    patch_size: usize,
    channels: usize,
    patches: &[Vec<f64>],
) -> Result<MixedGrid, CipherError> {
    let mixed = patches
        .iter()
        .map(|p| mix_patch(p, patch_size, channels))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(MixedGrid {
        rows,
        cols,
        tile_size: patch_size / 2,
        channels,
        patches: mixed,
    })
}

pub fn mi_encrypt(grid: &PatchGrid) -> Result<MixedGrid, CipherError> {
    mi_encrypt_with(grid, SUB_PATCHES)
}

/// Mixing with an explicit sub-patch count; anything but 4 is rejected.
pub fn mi_encrypt_with(grid: &PatchGrid, sub_patches: usize) -> Result<MixedGrid, CipherError> {
    if sub_patches != SUB_PATCHES {
        return Err(CipherError::Domain(format!(
            "mixing is defined for {SUB_PATCHES} sub-patches, got {sub_patches}"
        )));
    }
    if !grid.patch_size.is_multiple_of(2) {
        return Err(ImageError::Geometry(format!("mixing needs an even patch size, got {}", grid.patch_size)).into());
    }
    let patches = grid
        .patches
        .iter()
        .enumerate()
        .map(|(i, p)| {
            p.as_ref()
                .map(|p| p.iter().map(|&v| f64::from(v) / 255.0).collect::<Vec<_>>())
                .ok_or_else(|| CipherError::Domain(format!("patch {i} is a hole; mixing needs every patch")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    mix_tiles(grid.rows, grid.cols, grid.patch_size, grid.channels, &patches)
}

/// Alternates RS (fresh sub-key per round) and MI, starting with RS.
///
/// After each round the mixed tiles are laid into a plane and re-split at
/// the original patch size, so every later round mixes across former patch
/// boundaries. Each round halves the plane; its sides must stay divisible by
/// the patch size.
pub fn spn_encrypt(grid: &PatchGrid, rounds: usize, seed: u64) -> Result<MixedGrid, CipherError> {
    if rounds == 0 {
        return Err(CipherError::Domain("spn needs at least one round".into()));
    }
    let mut stream = KeyStream::new(seed);
    let key = gen_key(stream.fork(), grid.len())?;
    let mut state = mi_encrypt(&rs_encrypt(grid, &key)?)?;
    let p = grid.patch_size;
    for round in 1..rounds {
        let (h, w, plane) = state.to_plane();
        if h % p != 0 || w % p != 0 {
            return Err(ImageError::Geometry(format!(
                "round {}: {h}x{w} plane is not divisible into {p}-pixel patches",
                round + 1
            ))
            .into());
        }
        let (rows, cols) = (h / p, w / p);
        let patches: Vec<Vec<f64>> = (0..rows * cols)
            .map(|i| extract_block(&plane, w, state.channels, (i / cols) * p, (i % cols) * p, p))
            .collect();
        let key = gen_key(stream.fork(), patches.len())?;
        let shuffled = apply_permutation(&patches, key.perm());
        state = mix_tiles(rows, cols, p, state.channels, &shuffled)?;
    }
    Ok(state)
}

/// `n!`, the number of RS keys over `n` patches.
pub fn keyspace(n: u64) -> BigUint {
    (1..=n).fold(BigUint::from(1u32), |acc, k| acc * k)
}

/// Replaces `floor(ratio·n)` PRNG-chosen patches with holes.
pub fn drop_patches(grid: &PatchGrid, ratio: f64, seed: u64) -> Result<PatchGrid, CipherError> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(CipherError::Domain(format!("drop ratio must lie in [0,1), got {ratio}")));
    }
    let n = grid.len();
    let count = (ratio * n as f64).floor() as usize;
    if count == 0 {
        return Ok(grid.clone());
    }
    let order = gen_key(seed, n)?;
    let mut patches = grid.patches.clone();
    for &idx in &order.perm[..count] {
        patches[idx] = None;
    }
    Ok(grid.with_patches(patches))
}
