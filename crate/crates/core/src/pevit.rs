//! Permutation-invariant vision transformer (PEViT).
//!
//! A pre-norm ViT encoder with no absolute positional embedding. Patch
//! tokens are `xᵖ·E`, optionally plus a reference-based positional code
//! `RPE(xᵖ − x_ref)`, which depends only on the patch itself. The class
//! token sits at row 0 of every sequence, so its final state is invariant
//! to the order of the patches.
//!
//! Parameters are named `patch_embed`, `class_token`,
//! `layer<ℓ>.<block>.<name>` (blocks `ln1`, `attn`, `ln2`, `ffn`),
//! `norm.{gamma,beta}`, `head.{weight,bias}` and `rpe.*`.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::rng::KeyStream;
use crate::tensor::{Graph, Tensor, TensorError, Var};

const INIT_STD: f64 = 0.02;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    /// `P²·C`, the flattened patch length.
    pub patch_dim: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub classes: usize,
    pub rpe_enabled: bool,
    pub rpe_hidden: usize,
}

impl ModelConfig {
    /// `head_dim = embed_dim / heads`, `rpe_hidden = embed_dim`.
    pub fn new(patch_dim: usize, embed_dim: usize, depth: usize, heads: usize, classes: usize, rpe: bool) -> Self {
        Self {
            patch_dim,
            embed_dim,
            depth,
            heads,
            head_dim: if heads == 0 { 0 } else { embed_dim / heads },
            classes,
            rpe_enabled: rpe,
            rpe_hidden: embed_dim,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: String| Err(ModelError::Config(m));
        if self.heads == 0 || self.heads * self.head_dim != self.embed_dim {
            return fail(format!(
                "heads ({}) × head_dim ({}) must equal embed_dim ({})",
                self.heads, self.head_dim, self.embed_dim
            ));
        }
        if self.depth == 0 {
            return fail("depth must be at least 1".into());
        }
        if self.classes < 2 {
            return fail(format!("need at least 2 classes, got {}", self.classes));
        }
        if self.patch_dim == 0 || self.embed_dim == 0 {
            return fail("patch_dim and embed_dim must be nonzero".into());
        }
        if self.rpe_enabled && self.rpe_hidden == 0 {
            return fail("rpe_hidden must be nonzero".into());
        }
        Ok(())
    }
}

/// One pre-norm encoder layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockWeights<T> {
    pub ln1_gamma: T,
    pub ln1_beta: T,
    /// Per-head `D×d` projections.
    pub wq: Vec<T>,
    pub wk: Vec<T>,
    pub wv: Vec<T>,
    /// `(h·d)×D` output projection.
    pub wo: T,
    pub ln2_gamma: T,
    pub ln2_beta: T,
    pub ffn_w1: T,
    pub ffn_b1: T,
    pub ffn_w2: T,
    pub ffn_b2: T,
}

impl<T> BlockWeights<T> {
    pub(crate) fn try_build<E>(
        prefix: &str,
        embed_dim: usize,
        heads: usize,
        head_dim: usize,
        f: &mut impl FnMut(String, Vec<usize>) -> Result<T, E>,
    ) -> Result<Self, E> {
        let d = embed_dim;
        let per_head = |kind: &str, f: &mut dyn FnMut(String, Vec<usize>) -> Result<T, E>| {
            (0..heads)
                .map(|h| f(format!("{prefix}.attn.{kind}.h{h}"), vec![d, head_dim]))
                .collect::<Result<Vec<_>, E>>()
        };
        Ok(Self {
            ln1_gamma: f(format!("{prefix}.ln1.gamma"), vec![d])?,
            ln1_beta: f(format!("{prefix}.ln1.beta"), vec![d])?,
            wq: per_head("q", f)?,
            wk: per_head("k", f)?,
            wv: per_head("v", f)?,
            wo: f(format!("{prefix}.attn.out"), vec![heads * head_dim, d])?,
            ln2_gamma: f(format!("{prefix}.ln2.gamma"), vec![d])?,
            ln2_beta: f(format!("{prefix}.ln2.beta"), vec![d])?,
            ffn_w1: f(format!("{prefix}.ffn.w1"), vec![d, 4 * d])?,
            ffn_b1: f(format!("{prefix}.ffn.b1"), vec![4 * d])?,
            ffn_w2: f(format!("{prefix}.ffn.w2"), vec![4 * d, d])?,
            ffn_b2: f(format!("{prefix}.ffn.b2"), vec![d])?,
        })
    }

    pub(crate) fn visit<'a>(&'a self, out: &mut Vec<&'a T>) {
        out.extend([&self.ln1_gamma, &self.ln1_beta]);
        out.extend(&self.wq);
        out.extend(&self.wk);
        out.extend(&self.wv);
        out.extend([
            &self.wo,
            &self.ln2_gamma,
            &self.ln2_beta,
            &self.ffn_w1,
            &self.ffn_b1,
            &self.ffn_w2,
            &self.ffn_b2,
        ]);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RpeWeights<T> {
    /// Learnable reference, in patch space.
    pub x_ref: T,
    pub w1: T,
    pub b1: T,
    pub w2: T,
    pub b2: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PevitWeights<T> {
    pub patch_embed: T,
    pub class_token: T,
    pub blocks: Vec<BlockWeights<T>>,
    pub norm_gamma: T,
    pub norm_beta: T,
    pub head_weight: T,
    pub head_bias: T,
    pub rpe: Option<RpeWeights<T>>,
}

impl<T> PevitWeights<T> {
    /// Builds every parameter in canonical order, passing its name and shape
    /// to `f`.
    pub fn try_build<E>(
        config: &ModelConfig,
        mut f: impl FnMut(String, Vec<usize>) -> Result<T, E>,
    ) -> Result<Self, E> {
        let d = config.embed_dim;
        let patch_embed = f("patch_embed".into(), vec![config.patch_dim, d])?;
        let class_token = f("class_token".into(), vec![d])?;
        let blocks = (0..config.depth)
            .map(|l| BlockWeights::try_build(&format!("layer{l}"), d, config.heads, config.head_dim, &mut f))
            .collect::<Result<Vec<_>, E>>()?;
        let norm_gamma = f("norm.gamma".into(), vec![d])?;
        let norm_beta = f("norm.beta".into(), vec![d])?;
        let head_weight = f("head.weight".into(), vec![d, config.classes])?;
        let head_bias = f("head.bias".into(), vec![config.classes])?;
        let rpe = if config.rpe_enabled {
            let hidden = config.rpe_hidden;
            Some(RpeWeights {
                x_ref: f("rpe.x_ref".into(), vec![config.patch_dim])?,
                w1: f("rpe.w1".into(), vec![config.patch_dim, hidden])?,
                b1: f("rpe.b1".into(), vec![hidden])?,
                w2: f("rpe.w2".into(), vec![hidden, d])?,
                b2: f("rpe.b2".into(), vec![d])?,
            })
        } else {
            None
        };
        Ok(Self {
            patch_embed,
            class_token,
            blocks,
            norm_gamma,
            norm_beta,
            head_weight,
            head_bias,
            rpe,
        })
    }

    /// All parameters in the same order as [`PevitWeights::try_build`].
    pub fn values(&self) -> Vec<&T> {
        let mut out = vec![&self.patch_embed, &self.class_token];
        for b in &self.blocks {
            b.visit(&mut out);
        }
        out.extend([&self.norm_gamma, &self.norm_beta, &self.head_weight, &self.head_bias]);
        if let Some(r) = &self.rpe {
            out.extend([&r.x_ref, &r.w1, &r.b1, &r.w2, &r.b2]);
        }
        out
    }

    pub fn map<U>(&self, config: &ModelConfig, mut f: impl FnMut(&T) -> U) -> PevitWeights<U> {
        let mut it = self.values().into_iter();
        PevitWeights::try_build::<std::convert::Infallible>(config, |_, _| {
            Ok(f(it.next().expect("layout matches config")))
        })
        .expect("infallible")
    }
}

/// Canonical parameter names for `config`, in storage order.
pub fn parameter_names(config: &ModelConfig) -> Vec<String> {
    let mut names = Vec::new();
    PevitWeights::<()>::try_build::<std::convert::Infallible>(config, |name, _| {
        names.push(name);
        Ok(())
    })
    .expect("infallible");
    names
}

pub(crate) fn init_tensor(name: &str, shape: Vec<usize>, stream: &mut KeyStream) -> Tensor {
    if name.ends_with(".gamma") {
        return Tensor::filled(&shape, 1.0);
    }
    let is_bias = name.ends_with(".beta") || name.ends_with(".bias") || name.ends_with(".b1") || name.ends_with(".b2");
    if is_bias {
        return Tensor::zeros(&shape);
    }
    let n = shape.iter().product();
    let data = (0..n).map(|_| stream.normal(INIT_STD)).collect();
    Tensor::new(shape, data).expect("shape matches data")
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub weights: PevitWeights<Tensor>,
}

impl ModelParams {
    /// Truncation-free normal(0, 0.02) matrices, unit LN gains, zero biases.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut stream = KeyStream::new(seed);
        let weights = PevitWeights::try_build::<ModelError>(&config, |name, shape| Ok(init_tensor(&name, shape, &mut stream)))?;
        Ok(Self { config, weights })
    }

    pub fn zeros(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let weights = PevitWeights::try_build::<ModelError>(&config, |_, shape| Ok(Tensor::zeros(&shape)))?;
        Ok(Self { config, weights })
    }

    pub fn named(&self) -> Vec<(String, Tensor)> {
        parameter_names(&self.config)
            .into_iter()
            .zip(self.weights.values())
            .map(|(n, t)| (n, t.clone()))
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.values().iter().map(|t| t.len()).sum()
    }

    /// Rebuilds parameters from named tensors, inferring the configuration.
    /// Every entry must be consumed.
    pub fn from_named(entries: Vec<(String, Tensor)>) -> Result<Self, ModelError> {
        let mut map: BTreeMap<String, Tensor> = entries.into_iter().collect();
        let config = infer_config(&map)?;
        let weights = PevitWeights::try_build::<ModelError>(&config, |name, shape| {
            let t = map
                .remove(&name)
                .ok_or_else(|| ModelError::Checkpoint(format!("missing parameter {name}")))?;
            if t.shape() != shape.as_slice() {
                return Err(ModelError::Checkpoint(format!(
                    "{name}: stored shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            Ok(t)
        })?;
        if let Some(extra) = map.keys().next() {
            return Err(ModelError::Checkpoint(format!("unexpected parameter {extra}")));
        }
        Ok(Self { config, weights })
    }

    pub fn bind(&self, g: &mut Graph) -> PevitWeights<Var> {
        self.weights.map(&self.config, |t| g.param(t.clone()))
    }

    pub fn bind_frozen(&self, g: &mut Graph) -> PevitWeights<Var> {
        self.weights.map(&self.config, |t| g.constant(t.clone()))
    }
}

fn infer_config(map: &BTreeMap<String, Tensor>) -> Result<ModelConfig, ModelError> {
    let shape_of = |name: &str| {
        map.get(name)
            .map(|t| t.shape().to_vec())
            .ok_or_else(|| ModelError::Checkpoint(format!("missing parameter {name}")))
    };
    let pe = shape_of("patch_embed")?;
    let head = shape_of("head.weight")?;
    if pe.len() != 2 || head.len() != 2 {
        return Err(ModelError::Checkpoint("patch_embed and head.weight must be matrices".into()));
    }
    let depth = (0..).take_while(|l| map.contains_key(&format!("layer{l}.ln1.gamma"))).count();
    let heads = (0..).take_while(|h| map.contains_key(&format!("layer0.attn.q.h{h}"))).count();
    let q = shape_of("layer0.attn.q.h0")?;
    let rpe_hidden = map.get("rpe.w1").map(|t| t.shape().get(1).copied().unwrap_or(0));
    let config = ModelConfig {
        patch_dim: pe[0],
        embed_dim: pe[1],
        depth,
        heads,
        head_dim: q.get(1).copied().unwrap_or(0),
        classes: head[1],
        rpe_enabled: rpe_hidden.is_some(),
        rpe_hidden: rpe_hidden.unwrap_or(pe[1]),
    };
    config.validate()?;
    Ok(config)
}

/// `softmax(Q·Kᵀ/√d)·V`, returning the output and the weight matrix.
pub fn attention(g: &mut Graph, q: Var, k: Var, v: Var) -> Result<(Var, Var), TensorError> {
    let d = *g.shape(q).last().unwrap_or(&1);
    if g.shape(k).last() != Some(&d) || g.shape(k).first() != g.shape(v).first() {
        return Err(TensorError::Shape {
            op: "attention",
            left: g.shape(k).to_vec(),
            right: g.shape(v).to_vec(),
        });
    }
    let kt = g.transpose_last_two(k)?;
    let logits = g.matmul(q, kt)?;
    let scaled = g.scale(logits, 1.0 / (d as f64).sqrt());
    let weights = g.softmax_rows(scaled);
    Ok((g.matmul(weights, v)?, weights))
}

/// Row ranges of independent sequences packed into one token matrix.
pub type Segments = [(usize, usize)];

/// Multi-head self-attention applied independently within each segment.
/// Returns the projected output and, per segment, the per-head weights.
pub fn msa(g: &mut Graph, x: Var, block: &BlockWeights<Var>, segments: &Segments) -> Result<(Var, Vec<Vec<Var>>), TensorError> {
    let heads = block.wq.len();
    let mut head_outputs = Vec::with_capacity(heads);
    let mut maps = vec![Vec::with_capacity(heads); segments.len()];
    for h in 0..heads {
        let q = g.matmul(x, block.wq[h])?;
        let k = g.matmul(x, block.wk[h])?;
        let v = g.matmul(x, block.wv[h])?;
        let mut parts = Vec::with_capacity(segments.len());
        for (s, &(start, len)) in segments.iter().enumerate() {
            let (qs, ks, vs) = (g.slice_rows(q, start, len)?, g.slice_rows(k, start, len)?, g.slice_rows(v, start, len)?);
            let (out, w) = attention(g, qs, ks, vs)?;
            parts.push(out);
            maps[s].push(w);
        }
        head_outputs.push(if parts.len() == 1 { parts[0] } else { g.concat_rows(&parts)? });
    }
    let concat = if heads == 1 { head_outputs[0] } else { g.concat_last_axis(&head_outputs)? };
    Ok((g.matmul(concat, block.wo)?, maps))
}

pub fn feed_forward(g: &mut Graph, x: Var, block: &BlockWeights<Var>) -> Result<Var, TensorError> {
    let hidden = g.linear(x, block.ffn_w1, block.ffn_b1)?;
    let act = g.gelu(hidden);
    g.linear(act, block.ffn_w2, block.ffn_b2)
}

/// `z' = MSA(LN(z)) + z; z = FFN(LN(z')) + z'`.
pub fn encoder_block(g: &mut Graph, z: Var, block: &BlockWeights<Var>, segments: &Segments) -> Result<(Var, Vec<Vec<Var>>), TensorError> {
    let n1 = g.layer_norm(z, block.ln1_gamma, block.ln1_beta)?;
    let (attn, maps) = msa(g, n1, block, segments)?;
    let z_mid = g.add(attn, z)?;
    let n2 = g.layer_norm(z_mid, block.ln2_gamma, block.ln2_beta)?;
    let ffn = feed_forward(g, n2, block)?;
    Ok((g.add(ffn, z_mid)?, maps))
}

/// Layer outputs and attention weights collected during a forward pass.
#[derive(Debug, Default)]
pub struct Trace {
    /// `z_0 … z_L`.
    pub layers: Vec<Var>,
    /// `[layer][segment][head]`.
    pub attention: Vec<Vec<Vec<Var>>>,
}

pub fn run_encoder(
    g: &mut Graph,
    blocks: &[BlockWeights<Var>],
    tokens: Var,
    segments: &Segments,
    mut trace: Option<&mut Trace>,
) -> Result<Var, TensorError> {
    let mut z = tokens;
    if let Some(t) = trace.as_deref_mut() {
        t.layers.push(z);
    }
    for block in blocks {
        let (next, maps) = encoder_block(g, z, block, segments)?;
        z = next;
        if let Some(t) = trace.as_deref_mut() {
            t.layers.push(z);
            t.attention.push(maps);
        }
    }
    Ok(z)
}

/// `sigmoid(W₂·gelu(W₁·(x − x_ref) + b₁) + b₂)` for every row of `x`.
pub fn rpe(g: &mut Graph, x: Var, weights: &RpeWeights<Var>) -> Result<Var, TensorError> {
    let neg_ref = g.scale(weights.x_ref, -1.0);
    let diff = g.add_row(x, neg_ref)?;
    let hidden = g.linear(diff, weights.w1, weights.b1)?;
    let act = g.gelu(hidden);
    let out = g.linear(act, weights.w2, weights.b2)?;
    Ok(g.sigmoid(out))
}

fn check_patches(config: &ModelConfig, images: &[Vec<Vec<f64>>]) -> Result<(), ModelError> {
    for patches in images {
        if let Some(bad) = patches.iter().find(|p| p.len() != config.patch_dim) {
            return Err(TensorError::Shape {
                op: "forward",
                left: vec![bad.len()],
                right: vec![config.patch_dim],
            }
            .into());
        }
    }
    Ok(())
}

/// Token matrix `[x_class; xᵖE (+ RPE(xᵖ)); …]` for each image, stacked.
/// Returns the matrix and each image's row range.
pub fn token_sequence(
    g: &mut Graph,
    weights: &PevitWeights<Var>,
    config: &ModelConfig,
    images: &[Vec<Vec<f64>>],
) -> Result<(Var, Vec<(usize, usize)>), ModelError> {
    check_patches(config, images)?;
    let d = config.embed_dim;
    let rows: Vec<Vec<f64>> = images.iter().flatten().cloned().collect();
    let class = g.reshape(weights.class_token, &[1, d])?;
    let embedded = if rows.is_empty() {
        None
    } else {
        let x = g.constant(Tensor::from_rows(&rows)?);
        let mut emb = g.matmul(x, weights.patch_embed)?;
        if let Some(r) = &weights.rpe {
            let pos = rpe(g, x, r)?;
            emb = g.add(emb, pos)?;
        }
        Some(emb)
    };
    let mut parts = Vec::with_capacity(images.len() * 2);
    let mut segments = Vec::with_capacity(images.len());
    let (mut patch_row, mut token_row) = (0, 0);
    for patches in images {
        parts.push(class);
        if let (Some(emb), n @ 1..) = (embedded, patches.len()) {
            parts.push(g.slice_rows(emb, patch_row, n)?);
        }
        segments.push((token_row, patches.len() + 1));
        patch_row += patches.len();
        token_row += patches.len() + 1;
    }
    Ok((g.concat_rows(&parts)?, segments))
}

/// Final class-token states → `LN` → linear head, one logit row per segment.
pub fn classify(
    g: &mut Graph,
    weights: &PevitWeights<Var>,
    z: Var,
    segments: &Segments,
) -> Result<Var, TensorError> {
    let class_rows: Vec<usize> = segments.iter().map(|&(start, _)| start).collect();
    let cls = g.select_rows(z, &class_rows)?;
    let y = g.layer_norm(cls, weights.norm_gamma, weights.norm_beta)?;
    g.linear(y, weights.head_weight, weights.head_bias)
}

/// Logits (`images.len() × classes`) for a batch of patch sets.
pub fn forward_batch(
    g: &mut Graph,
    weights: &PevitWeights<Var>,
    config: &ModelConfig,
    images: &[Vec<Vec<f64>>],
    trace: Option<&mut Trace>,
) -> Result<Var, ModelError> {
    let (tokens, segments) = token_sequence(g, weights, config, images)?;
    let z = run_encoder(g, &weights.blocks, tokens, &segments, trace)?;
    Ok(classify(g, weights, z, &segments)?)
}

/// Logits for a single image given as flattened patches in [0,1].
pub fn forward(patches: &[Vec<f64>], params: &ModelParams) -> Result<Vec<f64>, ModelError> {
    let mut g = Graph::new();
    let w = params.bind_frozen(&mut g);
    let logits = forward_batch(&mut g, &w, &params.config, &[patches.to_vec()], None)?;
    Ok(g.value(logits).data().to_vec())
}

/// Predicted class per image.
pub fn predict(images: &[Vec<Vec<f64>>], params: &ModelParams) -> Result<Vec<usize>, ModelError> {
    let mut g = Graph::new();
    let w = params.bind_frozen(&mut g);
    let logits = forward_batch(&mut g, &w, &params.config, images, None)?;
    Ok(argmax_rows(g.value(logits)))
}

pub fn argmax_rows(t: &Tensor) -> Vec<usize> {
    (0..t.rows())
        .map(|r| {
            t.row(r)
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}

/// Per-head `(N+1)×(N+1)` attention weights of `layer` for one image.
pub fn export_attention(patches: &[Vec<f64>], params: &ModelParams, layer: usize) -> Result<Vec<Tensor>, ModelError> {
    if layer >= params.config.depth {
        return Err(ModelError::Config(format!(
            "layer {layer} out of range for depth {}",
            params.config.depth
        )));
    }
    let mut g = Graph::new();
    let w = params.bind_frozen(&mut g);
    let mut trace = Trace::default();
    forward_batch(&mut g, &w, &params.config, &[patches.to_vec()], Some(&mut trace))?;
    Ok(trace.attention[layer][0].iter().map(|&v| g.value(v).clone()).collect())
}

/// Row-wise Shannon entropy (nats) of an attention row.
pub fn row_entropy(row: &[f64]) -> f64 {
    row.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(rpe: bool) -> ModelConfig {
        ModelConfig::new(12, 8, 2, 2, 3, rpe)
    }

    fn patches(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut s = KeyStream::new(seed);
        (0..n).map(|_| (0..dim).map(|_| s.unit()).collect()).collect()
    }

    #[test]
    fn config_validation() {
        assert!(tiny(false).validate().is_ok());
        let mut bad = tiny(false);
        bad.head_dim = 3;
        assert!(bad.validate().is_err());
        assert!(ModelConfig::new(12, 8, 0, 2, 3, false).validate().is_err());
        assert!(ModelConfig::new(12, 8, 1, 2, 1, false).validate().is_err());
    }

    #[test]
    fn names_follow_layer_convention() {
        let names = parameter_names(&tiny(true));
        assert_eq!(names[0], "patch_embed");
        assert!(names.contains(&"layer1.attn.q.h1".to_string()));
        assert!(names.contains(&"layer0.ffn.w2".to_string()));
        assert!(names.contains(&"rpe.x_ref".to_string()));
        let params = ModelParams::init(tiny(true), 0).unwrap();
        assert_eq!(names.len(), params.weights.values().len());
    }

    #[test]
    fn named_roundtrip_infers_config() {
        for rpe in [false, true] {
            let params = ModelParams::init(tiny(rpe), 4).unwrap();
            let back = ModelParams::from_named(params.named()).unwrap();
            assert_eq!(back, params);
        }
        let mut named = ModelParams::init(tiny(false), 4).unwrap().named();
        named.push(("stray".into(), Tensor::scalar(0.0)));
        assert!(ModelParams::from_named(named).is_err());
    }

    #[test]
    fn attention_with_one_key_copies_value() {
        let mut g = Graph::new();
        let q = g.constant(Tensor::new(vec![3, 2], vec![1.0, 2.0, -3.0, 0.5, 0.0, 9.0]).unwrap());
        let k = g.constant(Tensor::new(vec![1, 2], vec![0.3, -0.7]).unwrap());
        let v = g.constant(Tensor::new(vec![1, 2], vec![4.0, -1.0]).unwrap());
        let (o, _) = attention(&mut g, q, k, v).unwrap();
        assert_eq!(g.value(o).data(), &[4.0, -1.0, 4.0, -1.0, 4.0, -1.0]);
    }

    #[test]
    fn attention_with_zero_logits_averages_values() {
        let mut g = Graph::new();
        let q = g.constant(Tensor::zeros(&[2, 2]));
        let k = g.constant(Tensor::new(vec![3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let v = g.constant(Tensor::new(vec![3, 2], vec![1.0, 10.0, 2.0, 20.0, 6.0, 60.0]).unwrap());
        let (o, _) = attention(&mut g, q, k, v).unwrap();
        for r in 0..2 {
            assert!((g.value(o).row(r)[0] - 3.0).abs() < 1e-12);
            assert!((g.value(o).row(r)[1] - 30.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_weights_give_zero_logits_and_identity_blocks() {
        let params = ModelParams::zeros(tiny(false)).unwrap();
        let x = patches(5, 12, 1);
        assert!(forward(&x, &params).unwrap().iter().all(|&v| v == 0.0));

        let mut g = Graph::new();
        let w = params.bind_frozen(&mut g);
        let z = g.constant(Tensor::from_rows(&patches(4, 8, 2)).unwrap());
        let (out, _) = encoder_block(&mut g, z, &w.blocks[0], &[(0, 4)]).unwrap();
        assert_eq!(g.value(out), g.value(z));
    }

    #[test]
    fn single_patch_is_well_defined() {
        let params = ModelParams::init(tiny(true), 3).unwrap();
        let logits = forward(&patches(1, 12, 5), &params).unwrap();
        assert_eq!(logits.len(), 3);
        assert!(logits.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn wrong_patch_dim_is_a_shape_error() {
        let params = ModelParams::init(tiny(false), 3).unwrap();
        assert!(matches!(
            forward(&patches(2, 11, 5), &params),
            Err(ModelError::Tensor(TensorError::Shape { .. }))
        ));
    }

    #[test]
    fn rpe_at_reference_with_zero_weights_is_half() {
        let mut params = ModelParams::zeros(tiny(true)).unwrap();
        let x_ref = patches(1, 12, 9).remove(0);
        params.weights.rpe.as_mut().unwrap().x_ref = Tensor::vector(x_ref.clone());
        let mut g = Graph::new();
        let w = params.bind_frozen(&mut g);
        let x = g.constant(Tensor::from_rows(&[x_ref]).unwrap());
        let out = rpe(&mut g, x, w.rpe.as_ref().unwrap()).unwrap();
        assert!(g.value(out).data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn batched_forward_matches_single_images() {
        let params = ModelParams::init(tiny(true), 8).unwrap();
        let images = vec![patches(3, 12, 1), patches(5, 12, 2), patches(1, 12, 3)];
        let mut g = Graph::new();
        let w = params.bind_frozen(&mut g);
        let logits = forward_batch(&mut g, &w, &params.config, &images, None).unwrap();
        for (i, img) in images.iter().enumerate() {
            let single = forward(img, &params).unwrap();
            for (a, b) in g.value(logits).row(i).iter().zip(&single) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_export_rows_are_distributions() {
        let params = ModelParams::init(tiny(false), 8).unwrap();
        let maps = export_attention(&patches(4, 12, 1), &params, 1).unwrap();
        assert_eq!(maps.len(), 2);
        for m in &maps {
            assert_eq!(m.shape(), &[5, 5]);
            for r in 0..5 {
                assert!((m.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
        assert!(export_attention(&patches(4, 12, 1), &params, 2).is_err());
    }

    #[test]
    fn zero_weights_give_uniform_attention() {
        let params = ModelParams::zeros(tiny(false)).unwrap();
        let maps = export_attention(&patches(3, 12, 1), &params, 0).unwrap();
        assert!(maps.iter().all(|m| m.data().iter().all(|&v| (v - 0.25).abs() < 1e-15)));
    }
}
