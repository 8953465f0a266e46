//! Deterministic synthetic corpora.

use super::HarnessError;
use crate::imgio::Image;
use crate::rng::KeyStream;

/// One base colour per class; no channel reaches 255 so the white marker
/// stays unique.
pub const PALETTE: [[f64; 3]; 10] = [
    [220.0, 40.0, 40.0],
    [40.0, 200.0, 60.0],
    [50.0, 80.0, 230.0],
    [230.0, 220.0, 40.0],
    [210.0, 50.0, 200.0],
    [40.0, 210.0, 210.0],
    [240.0, 140.0, 30.0],
    [130.0, 60.0, 200.0],
    [160.0, 230.0, 120.0],
    [240.0, 160.0, 180.0],
];

const SHAPES: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SynthSpec {
    pub image_size: usize,
    pub classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Stamp an 8×8 white square on every image.
    pub marker: bool,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            image_size: 64,
            classes: 10,
            train_per_class: 500,
            test_per_class: 100,
            marker: false,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    pub image: Image,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub classes: usize,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Class `c` draws shape `c mod 5` in colour `PALETTE[c]` at a random
/// position and scale over a noisy dark background. Labels cycle, so every
/// split is exactly balanced.
pub fn gen_dataset(spec: &SynthSpec) -> Result<Dataset, HarnessError> {
    if spec.classes < 2 || spec.classes > PALETTE.len() {
        return Err(HarnessError::Config(format!(
            "classes must lie in 2..={}, got {}",
            PALETTE.len(),
            spec.classes
        )));
    }
    if spec.image_size < 16 {
        return Err(HarnessError::Config(format!("image_size must be at least 16, got {}", spec.image_size)));
    }
    let mut stream = KeyStream::new(spec.seed);
    let mut split = |count: usize| -> Vec<Sample> {
        (0..count * spec.classes)
            .map(|i| {
                let label = i % spec.classes;
                Sample {
                    image: render(spec, label, stream.fork()),
                    label,
                }
            })
            .collect()
    };
    let train = split(spec.train_per_class);
    let test = split(spec.test_per_class);
    Ok(Dataset {
        classes: spec.classes,
        train,
        test,
    })
}

fn inside(shape: usize, dy: f64, dx: f64, r: f64) -> bool {
    match shape {
        0 => dx * dx + dy * dy <= r * r,
        1 => dx.abs() <= 0.8 * r && dy.abs() <= 0.8 * r,
        2 => dy.abs() <= r && dx.abs() <= (dy + r) / 2.0,
        3 => {
            let d2 = dx * dx + dy * dy;
            d2 <= r * r && d2 >= 0.3 * r * r
        }
        _ => (dx.abs() <= r / 3.0 && dy.abs() <= r) || (dy.abs() <= r / 3.0 && dx.abs() <= r),
    }
}

fn render(spec: &SynthSpec, label: usize, seed: u64) -> Image {
    let size = spec.image_size;
    let mut s = KeyStream::new(seed);
    let bg: Vec<f64> = (0..3).map(|_| s.uniform(10.0, 60.0)).collect();
    let color: Vec<f64> = PALETTE[label].iter().map(|&v| (v + s.uniform(-15.0, 15.0)).clamp(0.0, 240.0)).collect();
    let sz = size as f64;
    let r = s.uniform(sz / 8.0, sz / 3.0);
    let cy = s.uniform(r, sz - r);
    let cx = s.uniform(r, sz - r);
    let shape = label % SHAPES;
    let mut pixels = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
            let on = inside(shape, dy, dx, r);
            for ch in 0..3 {
                let v = if on { color[ch] } else { bg[ch] + s.uniform(-8.0, 8.0) };
                pixels.push(v.round().clamp(0.0, 240.0) as u8);
            }
        }
    }
    let mut img = Image::new(size, size, 3, pixels).expect("buffer matches geometry");
    if spec.marker {
        let top = s.bounded((size - 8 + 1) as u64) as usize;
        let left = s.bounded((size - 8 + 1) as u64) as usize;
        for y in top..top + 8 {
            for x in left..left + 8 {
                for ch in 0..3 {
                    img.set(y, x, ch, 255);
                }
            }
        }
    }
    img
}

/// Sum of random plane waves evaluated in absolute pixel coordinates, so a
/// smaller image with the same seed is exactly the top-left crop of a
/// larger one.
pub fn smooth_image(height: usize, width: usize, channels: usize, seed: u64) -> Result<Image, HarnessError> {
    const WAVES: usize = 4;
    let mut s = KeyStream::new(seed);
    let waves: Vec<Vec<[f64; 4]>> = (0..channels)
        .map(|_| {
            (0..WAVES)
                .map(|_| {
                    let angle = s.uniform(0.0, std::f64::consts::TAU);
                    let k = std::f64::consts::TAU / s.uniform(20.0, 80.0);
                    [s.uniform(0.05, 0.12), k * angle.cos(), k * angle.sin(), s.uniform(0.0, std::f64::consts::TAU)]
                })
                .collect()
        })
        .collect();
    let mut pixels = Vec::with_capacity(height * width * channels);
    for y in 0..height {
        for x in 0..width {
            for w in &waves {
                let v = 0.5 + w.iter().map(|[a, ky, kx, ph]| a * (ky * y as f64 + kx * x as f64 + ph).sin()).sum::<f64>();
                pixels.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    Ok(Image::new(height, width, channels, pixels)?)
}

/// Top-left `height × width` window.
pub fn crop(img: &Image, height: usize, width: usize) -> Result<Image, HarnessError> {
    if height > img.height() || width > img.width() {
        return Err(HarnessError::Config(format!(
            "cannot crop {}x{} to {height}x{width}",
            img.height(),
            img.width()
        )));
    }
    let c = img.channels();
    let mut pixels = Vec::with_capacity(height * width * c);
    for y in 0..height {
        let start = y * img.width() * c;
        pixels.extend_from_slice(&img.pixels()[start..start + width * c]);
    }
    Ok(Image::new(height, width, c, pixels)?)
}
