//! Synthetic data, toy-scale training on ciphertext, leakage measurement and
//! security sweeps.

mod config;
mod data;
mod leakage;
mod sweep;
mod train;

pub use config::{parse_config, RunConfig, CONFIG_KEYS};
pub use data::{crop, gen_dataset, smooth_image, Dataset, Sample, SynthSpec, PALETTE};
pub use leakage::{leakage_ratio, marker_count, MARKER_SIZE};
pub use sweep::{puzzle_trial, sweep, sweep_csv, SweepConfig, SweepRow, SweepSetting, SWEEP_HEADER};
pub use train::{
    evaluate, model_grad_check, predictions, train, train_with, Adam, AdamConfig, Classifier, EpochStats, History, TrainConfig,
};

use thiserror::Error;

use crate::attacks::AttackError;
use crate::cipher::{
    apply_permutation, drop_patches, gen_key, mi_encrypt, mix_patch, rs_encrypt, spn_encrypt, CipherError,
};
use crate::imgio::{assemble, split_patches, Image, ImageError, PatchGrid};
use crate::pevit::ModelError;
use crate::rng::KeyStream;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("undefined ratio: {0}")]
    Undefined(String),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Cipher(#[from] CipherError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// How images are turned into ciphertext before the model sees them.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Encryption {
    None,
    Rs,
    Mi,
    /// RS, then MI.
    RsMi,
    /// MI, then RS. Yields the same tokens as [`Encryption::RsMi`] for the
    /// same key since mixing acts on each patch separately.
    MiRs,
    /// SPN with the given round count.
    Spn(usize),
}

impl Encryption {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let t = text.trim();
        Ok(match t {
            "none" => Self::None,
            "rs" => Self::Rs,
            "mi" => Self::Mi,
            "rs+mi" => Self::RsMi,
            "mi+rs" => Self::MiRs,
            _ => {
                let rounds = t
                    .strip_prefix("spn(")
                    .and_then(|r| r.strip_suffix(')'))
                    .or_else(|| t.strip_prefix("spn"))
                    .and_then(|r| r.parse::<usize>().ok())
                    .filter(|&r| r >= 1)
                    .ok_or_else(|| HarnessError::Config(format!("unknown encryption mode {t:?}")))?;
                Self::Spn(rounds)
            }
        })
    }

    pub fn mixes(self) -> bool {
        !matches!(self, Self::None | Self::Rs)
    }

    /// Length of one model token for patch size `p` and `c` channels.
    pub fn token_dim(self, p: usize, c: usize) -> usize {
        if self.mixes() {
            (p / 2) * (p / 2) * c
        } else {
            p * p * c
        }
    }
}

impl std::fmt::Display for Encryption {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::None => f.write_str("none"),
            Self::Rs => f.write_str("rs"),
            Self::Mi => f.write_str("mi"),
            Self::RsMi => f.write_str("rs+mi"),
            Self::MiRs => f.write_str("mi+rs"),
            Self::Spn(r) => write!(f, "spn({r})"),
        }
    }
}

/// Patch geometry and cipher applied to every image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TokenSetting {
    pub patch_size: usize,
    pub drop_ratio: f64,
    pub encryption: Encryption,
}

fn mixed_records(grid: &PatchGrid) -> Result<Vec<Option<Vec<f64>>>, HarnessError> {
    grid.patches
        .iter()
        .map(|p| {
            p.as_ref()
                .map(|p| {
                    let unit: Vec<f64> = p.iter().map(|&v| f64::from(v) / 255.0).collect();
                    mix_patch(&unit, grid.patch_size, grid.channels)
                })
                .transpose()
                .map_err(HarnessError::from)
        })
        .collect()
}

fn unit_records(grid: &PatchGrid) -> Vec<Option<Vec<f64>>> {
    grid.patches
        .iter()
        .map(|p| p.as_ref().map(|p| p.iter().map(|&v| f64::from(v) / 255.0).collect()))
        .collect()
}

/// Model tokens for one image. `seed` drives both the drop pattern and the
/// key; dropped patches are omitted.
pub fn image_tokens(img: &Image, setting: &TokenSetting, seed: u64) -> Result<Vec<Vec<f64>>, HarnessError> {
    let mut stream = KeyStream::new(seed);
    let (drop_seed, key_seed) = (stream.fork(), stream.fork());
    let mut grid = split_patches(img, setting.patch_size, 0)?;
    if setting.drop_ratio > 0.0 {
        grid = drop_patches(&grid, setting.drop_ratio, drop_seed)?;
    }
    let records = match setting.encryption {
        Encryption::None => unit_records(&grid),
        Encryption::Rs => unit_records(&rs_encrypt(&grid, &gen_key(key_seed, grid.len())?)?),
        Encryption::Mi => mixed_records(&grid)?,
        Encryption::RsMi => mixed_records(&rs_encrypt(&grid, &gen_key(key_seed, grid.len())?)?)?,
        Encryption::MiRs => apply_permutation(&mixed_records(&grid)?, gen_key(key_seed, grid.len())?.perm()),
        Encryption::Spn(rounds) => {
            if grid.holes() > 0 {
                return Err(HarnessError::Config("spn cannot be combined with patch dropping".into()));
            }
            spn_encrypt(&grid, rounds, key_seed)?.patches.into_iter().map(Some).collect()
        }
    };
    Ok(records.into_iter().flatten().collect())
}

/// Viewable ciphertext. Mixed settings come out at half resolution per round.
pub fn encrypt_image(img: &Image, patch_size: usize, encryption: Encryption, seed: u64) -> Result<Image, HarnessError> {
    let grid = split_patches(img, patch_size, 0)?;
    let key = || gen_key(seed, grid.len());
    Ok(match encryption {
        Encryption::None => img.clone(),
        Encryption::Rs => assemble(&rs_encrypt(&grid, &key()?)?)?,
        Encryption::Mi => mi_encrypt(&grid)?.to_image()?,
        Encryption::RsMi => mi_encrypt(&rs_encrypt(&grid, &key()?)?)?.to_image()?,
        Encryption::MiRs => mi_encrypt(&grid)?.permuted(&key()?)?.to_image()?,
        Encryption::Spn(rounds) => spn_encrypt(&grid, rounds, seed)?.to_image()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(seed: u64) -> Image {
        let mut s = KeyStream::new(seed);
        Image::new(16, 16, 3, (0..16 * 16 * 3).map(|_| s.bounded(256) as u8).collect()).unwrap()
    }

    #[test]
    fn parse_modes() {
        for (text, mode) in [
            ("none", Encryption::None),
            ("rs", Encryption::Rs),
            ("mi", Encryption::Mi),
            ("rs+mi", Encryption::RsMi),
            ("mi+rs", Encryption::MiRs),
            ("spn(3)", Encryption::Spn(3)),
            ("spn2", Encryption::Spn(2)),
        ] {
            assert_eq!(Encryption::parse(text).unwrap(), mode);
            assert_eq!(Encryption::parse(&mode.to_string()).unwrap(), mode);
        }
        assert!(Encryption::parse("spn(0)").is_err());
        assert!(Encryption::parse("aes").is_err());
    }

    #[test]
    fn both_composition_orders_agree() {
        let setting = |e| TokenSetting {
            patch_size: 4,
            drop_ratio: 0.0,
            encryption: e,
        };
        let img = image(3);
        let a = image_tokens(&img, &setting(Encryption::RsMi), 11).unwrap();
        let b = image_tokens(&img, &setting(Encryption::MiRs), 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            encrypt_image(&img, 4, Encryption::RsMi, 5).unwrap(),
            encrypt_image(&img, 4, Encryption::MiRs, 5).unwrap()
        );
    }

    #[test]
    fn token_dims_and_drops() {
        let img = image(4);
        let s = TokenSetting {
            patch_size: 4,
            drop_ratio: 0.25,
            encryption: Encryption::Mi,
        };
        let t = image_tokens(&img, &s, 0).unwrap();
        assert_eq!(t.len(), 12);
        assert!(t.iter().all(|v| v.len() == Encryption::Mi.token_dim(4, 3)));
        let s = TokenSetting {
            encryption: Encryption::Spn(2),
            ..s
        };
        assert!(image_tokens(&img, &s, 0).is_err());
    }

    #[test]
    fn rs_tokens_are_a_permutation_of_plain_tokens() {
        let img = image(5);
        let plain = |e| TokenSetting {
            patch_size: 4,
            drop_ratio: 0.0,
            encryption: e,
        };
        let mut a = image_tokens(&img, &plain(Encryption::None), 1).unwrap();
        let mut b = image_tokens(&img, &plain(Encryption::Rs), 1).unwrap();
        assert_ne!(a, b);
        let key = |v: &Vec<f64>| v.iter().map(|x| (x * 255.0).round() as u64).collect::<Vec<_>>();
        a.sort_by_key(key);
        b.sort_by_key(key);
        assert_eq!(a, b);
    }
}
