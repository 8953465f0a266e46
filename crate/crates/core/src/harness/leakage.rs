//! Privacy leakage as the fraction of detections that survive encryption.

use super::{encrypt_image, Encryption, HarnessError};
use crate::imgio::Image;

pub const MARKER_SIZE: usize = 8;

/// Number of `8×8` windows whose every value is 255.
pub fn marker_count(img: &Image) -> usize {
    let (h, w, c) = (img.height(), img.width(), img.channels());
    if h < MARKER_SIZE || w < MARKER_SIZE {
        return 0;
    }
    // run[y][x]: white pixels ending at x in row y; then count vertical runs
    let white = |y: usize, x: usize| (0..c).all(|ch| img.get(y, x, ch) == 255);
    let mut run = vec![0usize; h * w];
    for y in 0..h {
        let mut r = 0;
        for x in 0..w {
            r = if white(y, x) { r + 1 } else { 0 };
            run[y * w + x] = r;
        }
    }
    let mut count = 0;
    for x in MARKER_SIZE - 1..w {
        let mut tall = 0;
        for y in 0..h {
            tall = if run[y * w + x] >= MARKER_SIZE { tall + 1 } else { 0 };
            if tall >= MARKER_SIZE {
                count += 1;
            }
        }
    }
    count
}

/// Detections on the encrypted corpus over detections on the originals.
/// Image `i` is encrypted with seed `seed + i`.
pub fn leakage_ratio(
    detector: impl Fn(&Image) -> usize,
    corpus: &[Image],
    patch_size: usize,
    encryption: Encryption,
    seed: u64,
) -> Result<f64, HarnessError> {
    let original: usize = corpus.iter().map(&detector).sum();
    if original == 0 {
        return Err(HarnessError::Undefined("detector finds nothing on the original corpus".into()));
    }
    let mut encrypted = 0;
    for (i, img) in corpus.iter().enumerate() {
        encrypted += detector(&encrypt_image(img, patch_size, encryption, seed.wrapping_add(i as u64))?);
    }
    Ok(encrypted as f64 / original as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(img: &Image) -> usize {
        let mut n = 0;
        for y in 0..=img.height().saturating_sub(MARKER_SIZE) {
            for x in 0..=img.width().saturating_sub(MARKER_SIZE) {
                let all = (y..y + MARKER_SIZE)
                    .all(|yy| (x..x + MARKER_SIZE).all(|xx| (0..img.channels()).all(|c| img.get(yy, xx, c) == 255)));
                n += usize::from(all);
            }
        }
        n
    }

    #[test]
    fn matches_window_scan() {
        let mut img = Image::filled(24, 24, 3, 10).unwrap();
        for y in 2..12 {
            for x in 5..14 {
                for c in 0..3 {
                    img.set(y, x, c, 255);
                }
            }
        }
        assert_eq!(marker_count(&img), naive(&img));
        assert_eq!(marker_count(&img), 3 * 2);
    }

    #[test]
    fn no_encryption_keeps_everything() {
        let mut img = Image::filled(32, 32, 3, 0).unwrap();
        for y in 3..11 {
            for x in 20..28 {
                for c in 0..3 {
                    img.set(y, x, c, 255);
                }
            }
        }
        assert_eq!(leakage_ratio(marker_count, &[img], 16, Encryption::None, 0).unwrap(), 1.0);
    }

    #[test]
    fn empty_originals_are_undefined() {
        let img = Image::filled(16, 16, 3, 0).unwrap();
        assert!(matches!(
            leakage_ratio(marker_count, &[img], 8, Encryption::Rs, 0),
            Err(HarnessError::Undefined(_))
        ));
    }
}
