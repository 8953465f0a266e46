//! Detection front end over mixed (MI) patches.
//!
//! Each mixed patch is embedded by `H(x) = W₂·gelu(W₁·x + b₁) + b₂`, the
//! detection tokens are prepended and a learned positional table is added:
//! `z₀ = [det₁ … det_k; H(x₁) … H(x_N)] + P`. Mixing makes `z₀` blind to the
//! order of sub-patches inside a patch, while `P` keeps it sensitive to where
//! each patch sits.

use std::collections::BTreeMap;

use crate::cipher::{MixedGrid, SUB_PATCHES};
use crate::pevit::{init_tensor, run_encoder, BlockWeights, ModelError};
use crate::rng::KeyStream;
use crate::tensor::{Graph, Tensor, TensorError, Var};

pub const DEFAULT_DET_TOKENS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DetConfig {
    pub det_tokens: usize,
    pub patch_size: usize,
    pub channels: usize,
    pub embed_dim: usize,
    /// Patch tokens per image.
    pub patches: usize,
    pub depth: usize,
    pub heads: usize,
}

impl DetConfig {
    pub fn sub_dim(&self) -> usize {
        (self.patch_size / 2).pow(2) * self.channels
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.patch_size == 0 || !self.patch_size.is_multiple_of(2) {
            return Err(ModelError::Config(format!("patch size must be even, got {}", self.patch_size)));
        }
        if self.det_tokens == 0 {
            return Err(ModelError::Config("need at least one detection token".into()));
        }
        if self.heads == 0 || !self.embed_dim.is_multiple_of(self.heads) {
            return Err(ModelError::Config(format!(
                "embed_dim {} is not divisible by {} heads",
                self.embed_dim, self.heads
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MiEmbedWeights<T> {
    pub w1: T,
    pub b1: T,
    pub w2: T,
    pub b2: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetWeights<T> {
    pub embed: MiEmbedWeights<T>,
    pub det_tokens: T,
    pub pos: T,
    pub blocks: Vec<BlockWeights<T>>,
}

impl<T> DetWeights<T> {
    pub fn try_build<E>(config: &DetConfig, mut f: impl FnMut(String, Vec<usize>) -> Result<T, E>) -> Result<Self, E> {
        let d = config.embed_dim;
        let embed = MiEmbedWeights {
            w1: f("mi.w1".into(), vec![config.sub_dim(), d])?,
            b1: f("mi.b1".into(), vec![d])?,
            w2: f("mi.w2".into(), vec![d, d])?,
            b2: f("mi.b2".into(), vec![d])?,
        };
        let det_tokens = f("det_tokens".into(), vec![config.det_tokens, d])?;
        let pos = f("pos_embed".into(), vec![config.det_tokens + config.patches, d])?;
        let head_dim = d / config.heads.max(1);
        let blocks = (0..config.depth)
            .map(|l| BlockWeights::try_build(&format!("layer{l}"), d, config.heads, head_dim, &mut f))
            .collect::<Result<Vec<_>, E>>()?;
        Ok(Self {
            embed,
            det_tokens,
            pos,
            blocks,
        })
    }

    pub fn values(&self) -> Vec<&T> {
        let mut out = vec![&self.embed.w1, &self.embed.b1, &self.embed.w2, &self.embed.b2, &self.det_tokens, &self.pos];
        for b in &self.blocks {
            b.visit(&mut out);
        }
        out
    }

    pub fn map<U>(&self, config: &DetConfig, mut f: impl FnMut(&T) -> U) -> DetWeights<U> {
        let mut it = self.values().into_iter();
        DetWeights::try_build::<std::convert::Infallible>(config, |_, _| Ok(f(it.next().expect("layout matches config"))))
            .expect("infallible")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetParams {
    pub config: DetConfig,
    pub weights: DetWeights<Tensor>,
}

impl DetParams {
    pub fn init(config: DetConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut stream = KeyStream::new(seed);
        let weights = DetWeights::try_build::<ModelError>(&config, |name, shape| Ok(init_tensor(&name, shape, &mut stream)))?;
        Ok(Self { config, weights })
    }

    pub fn named(&self) -> Vec<(String, Tensor)> {
        let mut names = Vec::new();
        DetWeights::<()>::try_build::<std::convert::Infallible>(&self.config, |n, _| {
            names.push(n);
            Ok(())
        })
        .expect("infallible");
        names.into_iter().zip(self.weights.values()).map(|(n, t)| (n, t.clone())).collect()
    }

    pub fn from_named(config: DetConfig, entries: Vec<(String, Tensor)>) -> Result<Self, ModelError> {
        config.validate()?;
        let mut map: BTreeMap<String, Tensor> = entries.into_iter().collect();
        let weights = DetWeights::try_build::<ModelError>(&config, |name, shape| {
            let t = map
                .remove(&name)
                .ok_or_else(|| ModelError::Checkpoint(format!("missing parameter {name}")))?;
            if t.shape() != shape.as_slice() {
                return Err(ModelError::Checkpoint(format!("{name}: stored shape {:?}, expected {shape:?}", t.shape())));
            }
            Ok(t)
        })?;
        if let Some(extra) = map.keys().next() {
            return Err(ModelError::Checkpoint(format!("unexpected parameter {extra}")));
        }
        Ok(Self { config, weights })
    }

    pub fn bind(&self, g: &mut Graph) -> DetWeights<Var> {
        self.weights.map(&self.config, |t| g.param(t.clone()))
    }

    pub fn bind_frozen(&self, g: &mut Graph) -> DetWeights<Var> {
        self.weights.map(&self.config, |t| g.constant(t.clone()))
    }
}

/// `H(x) = W₂·gelu(W₁·x + b₁) + b₂` for every row of `mixed`.
pub fn embed_mixed(g: &mut Graph, mixed: Var, weights: &MiEmbedWeights<Var>) -> Result<Var, TensorError> {
    let hidden = g.linear(mixed, weights.w1, weights.b1)?;
    let act = g.gelu(hidden);
    g.linear(act, weights.w2, weights.b2)
}

/// Embedding of a single mixed patch of length `(P/2)²·C`.
pub fn mi_patch_embed(mixed_patch: &[f64], weights: &MiEmbedWeights<Tensor>) -> Result<Vec<f64>, TensorError> {
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(vec![1, mixed_patch.len()], mixed_patch.to_vec())?);
    let w = MiEmbedWeights {
        w1: g.constant(weights.w1.clone()),
        b1: g.constant(weights.b1.clone()),
        w2: g.constant(weights.w2.clone()),
        b2: g.constant(weights.b2.clone()),
    };
    let out = embed_mixed(&mut g, x, &w)?;
    Ok(g.value(out).data().to_vec())
}

/// `[det tokens; H(x₁ˢ) … H(x_Nˢ)] + P`, patch tokens in grid order.
pub fn build_det_sequence(g: &mut Graph, grid: &MixedGrid, weights: &DetWeights<Var>) -> Result<Var, TensorError> {
    let det_shape = g.shape(weights.det_tokens).to_vec();
    let pos_rows = g.shape(weights.pos)[0];
    if det_shape.len() != 2 || pos_rows != det_shape[0] + grid.patches.len() {
        return Err(TensorError::Shape {
            op: "build_det_sequence",
            left: g.shape(weights.pos).to_vec(),
            right: vec![det_shape.first().copied().unwrap_or(0) + grid.patches.len(), det_shape.get(1).copied().unwrap_or(0)],
        });
    }
    let x = g.constant(Tensor::from_rows(&grid.patches)?);
    let emb = embed_mixed(g, x, &weights.embed)?;
    let seq = g.concat_rows(&[weights.det_tokens, emb])?;
    g.add(seq, weights.pos)
}

/// Runs the shared encoder stack over the detection sequence.
pub fn det_encode(g: &mut Graph, grid: &MixedGrid, weights: &DetWeights<Var>) -> Result<Var, TensorError> {
    let z0 = build_det_sequence(g, grid, weights)?;
    let rows = g.shape(z0)[0];
    run_encoder(g, &weights.blocks, z0, &[(0, rows)], None)
}

/// Rearranges the quadrants of a `P×P` patch; `order[q]` names the source
/// quadrant placed at position `q`.
pub fn reorder_quadrants(patch: &[u8], patch_size: usize, channels: usize, order: [usize; SUB_PATCHES]) -> Vec<u8> {
    let quads = crate::imgio::split_subpatches(patch, patch_size, channels).expect("even patch size");
    let moved = [
        quads[order[0]].clone(),
        quads[order[1]].clone(),
        quads[order[2]].clone(),
        quads[order[3]].clone(),
    ];
    crate::imgio::join_subpatches(&moved, patch_size / 2, channels)
}
