//! Binary PPM/PGM codec and patch-grid decomposition.
//!
//! Only `P6`/`P5` with maxval 255 are accepted. Output headers are always
//! canonical (`P6\n<w> <h>\n255\n`), so files written here round-trip
//! byte-for-byte.

use std::fs;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("decode error in {field}: {reason}")]
    Decode { field: &'static str, reason: String },
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("assembly error: {0}")]
    Assembly(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn decode_err(field: &'static str, reason: impl Into<String>) -> ImageError {
    ImageError::Decode {
        field,
        reason: reason.into(),
    }
}

/// An 8-bit raster, row-major with interleaved channels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<u8>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<u8>) -> Result<Self, ImageError> {
        if channels != 1 && channels != 3 {
            return Err(ImageError::Geometry(format!("channels must be 1 or 3, got {channels}")));
        }
        if pixels.len() != height * width * channels {
            return Err(ImageError::Geometry(format!(
                "pixel buffer holds {} values, expected {}x{}x{}",
                pixels.len(),
                height,
                width,
                channels
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: u8) -> Result<Self, ImageError> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> u8 {
        self.pixels[(row * self.width + col) * self.channels + channel]
    }

    pub fn set(&mut self, row: usize, col: usize, channel: usize, value: u8) {
        self.pixels[(row * self.width + col) * self.channels + channel] = value;
    }

    /// Encodes as `P6` (3 channels) or `P5` (1 channel).
    pub fn encode_pnm(&self) -> Vec<u8> {
        let magic = if self.channels == 3 { "P6" } else { "P5" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn decode_pnm(bytes: &[u8]) -> Result<Self, ImageError> {
        let mut cursor = HeaderCursor { bytes, pos: 0 };
        let magic = cursor.token("magic")?;
        let channels = match magic {
            b"P6" => 3,
            b"P5" => 1,
            other => {
                return Err(decode_err(
                    "magic",
                    format!("expected P6 or P5, found {:?}", String::from_utf8_lossy(other)),
                ))
            }
        };
        let width = cursor.number("width")?;
        let height = cursor.number("height")?;
        let maxval = cursor.number("maxval")?;
        if maxval != 255 {
            return Err(decode_err("maxval", format!("only 255 is supported, found {maxval}")));
        }
        // exactly one whitespace byte separates maxval from the raster
        match bytes.get(cursor.pos) {
            Some(b) if b.is_ascii_whitespace() => cursor.pos += 1,
            _ => return Err(decode_err("maxval", "missing whitespace before payload")),
        }
        if width == 0 || height == 0 {
            return Err(decode_err("width", "image dimensions must be nonzero"));
        }
        let expected = width
            .checked_mul(height)
            .and_then(|v| v.checked_mul(channels))
            .ok_or_else(|| decode_err("width", "dimensions overflow"))?;
        let payload = &bytes[cursor.pos..];
        if payload.len() < expected {
            return Err(decode_err(
                "payload",
                format!("truncated: {} of {} bytes present", payload.len(), expected),
            ));
        }
        if payload.len() > expected {
            return Err(decode_err(
                "payload",
                format!("{} trailing bytes after raster", payload.len() - expected),
            ));
        }
        Self::new(height, width, channels, payload.to_vec())
    }
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderCursor<'a> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    fn token(&mut self, field: &'static str) -> Result<&'a [u8], ImageError> {
        self.skip_space_and_comments();
        let start = self.pos;
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() || b == b'#' {
                break;
            }
            self.pos += 1;
        }
        if start == self.pos {
            return Err(decode_err(field, "missing header field"));
        }
        Ok(&self.bytes[start..self.pos])
    }

    fn number(&mut self, field: &'static str) -> Result<usize, ImageError> {
        let tok = self.token(field)?;
        std::str::from_utf8(tok)
            .ok()
            .filter(|s| s.bytes().all(|b| b.is_ascii_digit()))
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| decode_err(field, format!("not a decimal integer: {:?}", String::from_utf8_lossy(tok))))
    }
}

pub fn load_ppm(path: impl AsRef<Path>) -> Result<Image, ImageError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| ImageError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Image::decode_pnm(&bytes)
}

pub fn save_ppm(img: &Image, path: impl AsRef<Path>) -> Result<(), ImageError> {
    let path = path.as_ref();
    fs::write(path, img.encode_pnm()).map_err(|source| ImageError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Copies a `size`×`size` block whose top-left corner is at (`top`, `left`).
pub(crate) fn extract_block<T: Copy>(
    data: &[T],
    width: usize,
    channels: usize,
    top: usize,
    left: usize,
    size: usize,
) -> Vec<T> {
    let mut out = Vec::with_capacity(size * size * channels);
    for r in top..top + size {
        let start = (r * width + left) * channels;
        out.extend_from_slice(&data[start..start + size * channels]);
    }
    out
}

pub(crate) fn write_block<T: Copy>(
    data: &mut [T],
    width: usize,
    channels: usize,
    top: usize,
    left: usize,
    size: usize,
    block: &[T],
) {
    let line = size * channels;
    for (i, r) in (top..top + size).enumerate() {
        let start = (r * width + left) * channels;
        data[start..start + line].copy_from_slice(&block[i * line..(i + 1) * line]);
    }
}

/// Number of patch positions along one axis for stride `patch + interval`.
pub fn grid_extent(side: usize, patch_size: usize, interval: usize) -> usize {
    if patch_size == 0 || patch_size > side {
        0
    } else {
        (side - patch_size) / (patch_size + interval) + 1
    }
}

/// A square patch of `patch_size`² × `channels` values, or a dropped slot.
pub type PatchRecord = Option<Vec<u8>>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatchGrid {
    pub rows: usize,
    pub cols: usize,
    pub patch_size: usize,
    pub channels: usize,
    pub interval: usize,
    pub patches: Vec<PatchRecord>,
}

impl PatchGrid {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn patch_len(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    pub fn holes(&self) -> usize {
        self.patches.iter().filter(|p| p.is_none()).count()
    }

    /// Patches as flattened reals in [0,1], holes omitted.
    pub fn to_unit_vectors(&self) -> Vec<Vec<f64>> {
        self.patches
            .iter()
            .flatten()
            .map(|p| p.iter().map(|&v| f64::from(v) / 255.0).collect())
            .collect()
    }

    pub fn with_patches(&self, patches: Vec<PatchRecord>) -> Self {
        Self {
            patches,
            ..self.clone()
        }
    }
}

pub fn split_patches(img: &Image, patch_size: usize, interval: usize) -> Result<PatchGrid, ImageError> {
    if patch_size < 2 {
        return Err(ImageError::Geometry(format!("patch size must be at least 2, got {patch_size}")));
    }
    if patch_size > img.height.min(img.width) {
        return Err(ImageError::Geometry(format!(
            "patch size {patch_size} exceeds image side {}",
            img.height.min(img.width)
        )));
    }
    if interval == 0 && (!img.height.is_multiple_of(patch_size) || !img.width.is_multiple_of(patch_size)) {
        return Err(ImageError::Geometry(format!(
            "{}x{} image is not divisible into {patch_size}-pixel patches",
            img.height, img.width
        )));
    }
    let rows = grid_extent(img.height, patch_size, interval);
    let cols = grid_extent(img.width, patch_size, interval);
    let stride = patch_size + interval;
    let mut patches = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            patches.push(Some(extract_block(
                &img.pixels,
                img.width,
                img.channels,
                r * stride,
                c * stride,
                patch_size,
            )));
        }
    }
    Ok(PatchGrid {
        rows,
        cols,
        patch_size,
        channels: img.channels,
        interval,
        patches,
    })
}

pub fn assemble(grid: &PatchGrid) -> Result<Image, ImageError> {
    if grid.interval > 0 {
        return Err(ImageError::Assembly(format!(
            "grid sampled with interval {}; gap pixels are unrecoverable",
            grid.interval
        )));
    }
    if grid.patches.len() != grid.rows * grid.cols {
        return Err(ImageError::Assembly("patch count does not match grid shape".into()));
    }
    let p = grid.patch_size;
    let (height, width) = (grid.rows * p, grid.cols * p);
    let mut pixels = vec![0u8; height * width * grid.channels];
    for (idx, patch) in grid.patches.iter().enumerate() {
        let patch = patch
            .as_ref()
            .ok_or_else(|| ImageError::Assembly(format!("patch {idx} is a hole")))?;
        if patch.len() != grid.patch_len() {
            return Err(ImageError::Assembly(format!("patch {idx} has {} values", patch.len())));
        }
        write_block(
            &mut pixels,
            width,
            grid.channels,
            (idx / grid.cols) * p,
            (idx % grid.cols) * p,
            p,
            patch,
        );
    }
    Image::new(height, width, grid.channels, pixels)
}

/// Splits a square patch into quadrants, ordered TL, TR, BL, BR.
pub fn split_subpatches<T: Copy>(patch: &[T], patch_size: usize, channels: usize) -> Result<[Vec<T>; 4], ImageError> {
    if !patch_size.is_multiple_of(2) {
        return Err(ImageError::Geometry(format!("sub-patch split needs an even patch size, got {patch_size}")));
    }
    if patch.len() != patch_size * patch_size * channels {
        return Err(ImageError::Geometry(format!(
            "patch holds {} values, expected {}",
            patch.len(),
            patch_size * patch_size * channels
        )));
    }
    let h = patch_size / 2;
    Ok([
        extract_block(patch, patch_size, channels, 0, 0, h),
        extract_block(patch, patch_size, channels, 0, h, h),
        extract_block(patch, patch_size, channels, h, 0, h),
        extract_block(patch, patch_size, channels, h, h, h),
    ])
}

/// Inverse of [`split_subpatches`].
pub fn join_subpatches<T: Copy + Default>(quads: &[Vec<T>; 4], sub_size: usize, channels: usize) -> Vec<T> {
    let size = sub_size * 2;
    let mut out = vec![T::default(); size * size * channels];
    for (q, block) in quads.iter().enumerate() {
        write_block(&mut out, size, channels, (q / 2) * sub_size, (q % 2) * sub_size, sub_size, block);
    }
    out
}
