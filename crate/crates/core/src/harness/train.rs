//! Minibatch training and evaluation of PEViT (and the positional baseline).

use std::path::Path;

use super::data::Sample;
use super::{image_tokens, Encryption, HarnessError, TokenSetting};
use crate::pevit::{
    argmax_rows, classify, forward_batch, run_encoder, token_sequence, ModelConfig, ModelError, ModelParams, PevitWeights,
};
use crate::rng::KeyStream;
use crate::tensor::{grad_check, read_checkpoint, write_checkpoint, GradCheckReport, Graph, Sampling, Tensor, Var};

const POS_EMBED: &str = "pos_embed";
const EVAL_CHUNK: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adaptive-moment optimizer without weight decay.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    pub fn new(config: AdamConfig, sizes: &[usize]) -> Self {
        Self {
            config,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    /// Advances the step counter; call once per batch before [`Adam::update`].
    pub fn tick(&mut self) {
        self.t += 1;
    }

    pub fn update(&mut self, index: usize, param: &mut [f64], grad: &[f64]) {
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        let (m, v) = (&mut self.m[index], &mut self.v[index]);
        for i in 0..param.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
            param[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub rpe: bool,
    pub patch_size: usize,
    pub drop_ratio: f64,
    pub encryption: Encryption,
    pub epochs: usize,
    pub batch: usize,
    pub adam: AdamConfig,
    /// Adds a learned absolute positional table (DeiT-like baseline).
    pub positional: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            depth: 4,
            heads: 4,
            rpe: false,
            patch_size: 16,
            drop_ratio: 0.0,
            encryption: Encryption::Rs,
            epochs: 20,
            batch: 32,
            adam: AdamConfig::default(),
            positional: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn tokens(&self) -> TokenSetting {
        TokenSetting {
            patch_size: self.patch_size,
            drop_ratio: self.drop_ratio,
            encryption: self.encryption,
        }
    }

    fn validate(&self) -> Result<(), HarnessError> {
        if self.epochs == 0 || self.batch == 0 {
            return Err(HarnessError::Config("epochs and batch must be at least 1".into()));
        }
        if self.positional && self.encryption != Encryption::None && self.encryption != Encryption::Rs {
            return Err(HarnessError::Config("the positional baseline supports only none or rs".into()));
        }
        Ok(())
    }
}

/// A PEViT, optionally with an absolute positional table over
/// `[class; patches]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    pub model: ModelParams,
    pub pos_embed: Option<Tensor>,
}

impl Classifier {
    pub fn named(&self) -> Vec<(String, Tensor)> {
        let mut out = self.model.named();
        if let Some(p) = &self.pos_embed {
            out.push((POS_EMBED.into(), p.clone()));
        }
        out
    }

    pub fn from_named(mut entries: Vec<(String, Tensor)>) -> Result<Self, HarnessError> {
        let pos_embed = entries
            .iter()
            .position(|(n, _)| n == POS_EMBED)
            .map(|i| entries.remove(i).1);
        Ok(Self {
            model: ModelParams::from_named(entries)?,
            pos_embed,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), HarnessError> {
        Ok(write_checkpoint(path, &self.named())?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        Self::from_named(read_checkpoint(path)?)
    }

    fn tensors(&self) -> Vec<&Tensor> {
        let mut out = self.model.weights.values();
        out.extend(&self.pos_embed);
        out
    }

    fn bind(&self, g: &mut Graph, trainable: bool) -> (PevitWeights<Var>, Option<Var>) {
        let mut leaf = |t: &Tensor| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) };
        let w = self.model.weights.map(&self.model.config, &mut leaf);
        let pos = self.pos_embed.as_ref().map(leaf);
        (w, pos)
    }

    fn logits(
        &self,
        g: &mut Graph,
        w: &PevitWeights<Var>,
        pos: Option<Var>,
        images: &[Vec<Vec<f64>>],
    ) -> Result<Var, HarnessError> {
        let (mut tokens, segments) = token_sequence(g, w, &self.model.config, images)?;
        if let Some(p) = pos {
            let rows = g.shape(p)[0];
            let parts = segments
                .iter()
                .map(|&(_, len)| {
                    if len > rows {
                        return Err(HarnessError::Config(format!("{len} tokens exceed the {rows}-row positional table")));
                    }
                    Ok(g.slice_rows(p, 0, len)?)
                })
                .collect::<Result<Vec<_>, _>>()?;
            let table = g.concat_rows(&parts)?;
            tokens = g.add(tokens, table)?;
        }
        let z = run_encoder(g, &w.blocks, tokens, &segments, None)?;
        Ok(classify(g, w, z, &segments)?)
    }

    /// Predicted labels for already-tokenized images.
    pub fn predict_tokens(&self, images: &[Vec<Vec<f64>>]) -> Result<Vec<usize>, HarnessError> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(EVAL_CHUNK) {
            let mut g = Graph::new();
            let (w, pos) = self.bind(&mut g, false);
            let logits = self.logits(&mut g, &w, pos, chunk)?;
            out.extend(argmax_rows(g.value(logits)));
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub train_accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochStats>,
}

fn check_geometry(cfg: &TrainConfig, samples: &[Sample]) -> Result<usize, HarnessError> {
    let first = samples
        .first()
        .ok_or_else(|| HarnessError::Config("no training samples".into()))?;
    let (h, w, c) = (first.image.height(), first.image.width(), first.image.channels());
    if samples.iter().any(|s| (s.image.height(), s.image.width(), s.image.channels()) != (h, w, c)) {
        return Err(HarnessError::Config("training images differ in geometry".into()));
    }
    if cfg.patch_size == 0 || h % cfg.patch_size != 0 || w % cfg.patch_size != 0 {
        return Err(HarnessError::Config(format!(
            "{h}x{w} images are not divisible into {}-pixel patches",
            cfg.patch_size
        )));
    }
    if cfg.encryption.mixes() && !cfg.patch_size.is_multiple_of(2) {
        return Err(HarnessError::Config("mixing needs an even patch size".into()));
    }
    Ok(c)
}

pub fn train(cfg: &TrainConfig, samples: &[Sample], classes: usize) -> Result<(Classifier, History), HarnessError> {
    train_with(cfg, samples, classes, |_, _| true)
}

/// Like [`train`], calling `observer` after every epoch; training stops
/// early when it returns false.
///
/// Each epoch visits the samples in a fresh order and, for RS settings,
/// encrypts every image under a fresh key.
pub fn train_with(
    cfg: &TrainConfig,
    samples: &[Sample],
    classes: usize,
    mut observer: impl FnMut(&Classifier, &EpochStats) -> bool,
) -> Result<(Classifier, History), HarnessError> {
    cfg.validate()?;
    let channels = check_geometry(cfg, samples)?;
    let setting = cfg.tokens();
    let model_cfg = ModelConfig::new(
        cfg.encryption.token_dim(cfg.patch_size, channels),
        cfg.embed_dim,
        cfg.depth,
        cfg.heads,
        classes,
        cfg.rpe,
    );
    let mut stream = KeyStream::new(cfg.seed);
    let model = ModelParams::init(model_cfg, stream.fork())?;
    let pos_embed = if cfg.positional {
        let img = &samples[0].image;
        let n = (img.height() / cfg.patch_size) * (img.width() / cfg.patch_size);
        let mut s = KeyStream::new(stream.fork());
        let data = (0..(n + 1) * cfg.embed_dim).map(|_| s.normal(0.02)).collect();
        Some(Tensor::new(vec![n + 1, cfg.embed_dim], data)?)
    } else {
        None
    };
    let mut clf = Classifier { model, pos_embed };
    let sizes: Vec<usize> = clf.tensors().iter().map(|t| t.len()).collect();
    let mut adam = Adam::new(cfg.adam, &sizes);
    let mut history = History::default();

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        for i in (1..order.len()).rev() {
            order.swap(i, stream.bounded(i as u64 + 1) as usize);
        }
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch) {
            let images = batch
                .iter()
                .map(|&i| image_tokens(&samples[i].image, &setting, stream.next_u64()))
                .collect::<Result<Vec<_>, _>>()?;
            let labels: Vec<usize> = batch.iter().map(|&i| samples[i].label).collect();

            let mut g = Graph::new();
            let (w, pos) = clf.bind(&mut g, true);
            let logits = clf.logits(&mut g, &w, pos, &images)?;
            let loss = g.cross_entropy(logits, &labels)?;
            g.backward(loss)?;
            loss_sum += g.value(loss).data()[0] * batch.len() as f64;
            correct += argmax_rows(g.value(logits)).iter().zip(&labels).filter(|(a, b)| a == b).count();

            let mut vars = w.values().into_iter().copied().collect::<Vec<_>>();
            vars.extend(pos);
            let grads: Vec<Vec<f64>> = vars
                .iter()
                .map(|&v| g.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; g.value(v).len()]))
                .collect();
            adam.tick();
            let mut index = 0;
            let config = clf.model.config;
            clf.model.weights = clf.model.weights.map(&config, |t| {
                let mut t = t.clone();
                adam.update(index, t.data_mut(), &grads[index]);
                index += 1;
                t
            });
            if let Some(p) = clf.pos_embed.as_mut() {
                adam.update(index, p.data_mut(), &grads[index]);
            }
        }
        let stats = EpochStats {
            epoch: epoch + 1,
            loss: loss_sum / samples.len() as f64,
            train_accuracy: correct as f64 / samples.len() as f64,
        };
        history.epochs.push(stats);
        if !observer(&clf, &stats) {
            break;
        }
    }
    Ok((clf, history))
}

/// Predicted labels under `setting`; image `i` uses the `i`-th draw of a
/// stream seeded with `seed`.
pub fn predictions(
    clf: &Classifier,
    samples: &[Sample],
    setting: &TokenSetting,
    seed: u64,
) -> Result<Vec<usize>, HarnessError> {
    let mut stream = KeyStream::new(seed);
    let images = samples
        .iter()
        .map(|s| image_tokens(&s.image, setting, stream.next_u64()))
        .collect::<Result<Vec<_>, _>>()?;
    clf.predict_tokens(&images)
}

/// Top-1 accuracy.
pub fn evaluate(clf: &Classifier, samples: &[Sample], setting: &TokenSetting, seed: u64) -> Result<f64, HarnessError> {
    if samples.is_empty() {
        return Err(HarnessError::Config("no evaluation samples".into()));
    }
    let preds = predictions(clf, samples, setting, seed)?;
    Ok(preds.iter().zip(samples).filter(|(p, s)| **p == s.label).count() as f64 / samples.len() as f64)
}

/// Central-difference check of the full PEViT cross-entropy loss on random
/// patch sets, over `samples` randomly chosen coordinates.
pub fn model_grad_check(
    config: ModelConfig,
    seed: u64,
    samples: usize,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport, HarnessError> {
    let mut stream = KeyStream::new(seed);
    let params = ModelParams::init(config, stream.fork())?;
    let images: Vec<Vec<Vec<f64>>> = (0..2)
        .map(|i| (0..3 + i).map(|_| (0..config.patch_dim).map(|_| stream.unit()).collect()).collect())
        .collect();
    let labels: Vec<usize> = (0..images.len()).map(|_| stream.bounded(config.classes as u64) as usize).collect();
    let tensors: Vec<Tensor> = params.weights.values().into_iter().cloned().collect();
    let sampling = Sampling::Random {
        count: samples,
        seed: stream.fork(),
    };
    grad_check(
        &tensors,
        |g, vars| -> Result<Var, ModelError> {
            let mut it = vars.iter().copied();
            let w = params.weights.map(&config, |_| it.next().expect("one var per tensor"));
            let logits = forward_batch(g, &w, &config, &images, None)?;
            Ok(g.cross_entropy(logits, &labels)?)
        },
        step,
        tolerance,
        sampling,
    )
    .map_err(HarnessError::from)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{gen_dataset, SynthSpec};

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            embed_dim: 16,
            depth: 1,
            heads: 2,
            patch_size: 16,
            epochs: 1,
            batch: 5,
            ..TrainConfig::default()
        }
    }

    fn tiny_data() -> Vec<Sample> {
        let spec = SynthSpec {
            image_size: 32,
            train_per_class: 1,
            test_per_class: 0,
            ..SynthSpec::default()
        };
        gen_dataset(&spec).unwrap().train
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut adam = Adam::new(AdamConfig::default(), &[2]);
        let mut p = [1.0, -1.0];
        adam.tick();
        adam.update(0, &mut p, &[0.5, -3.0]);
        assert!((p[0] - (1.0 - 1e-3)).abs() < 1e-9);
        assert!((p[1] - (-1.0 + 1e-3)).abs() < 1e-9);
    }

    #[test]
    fn smoke_one_epoch() {
        let (clf, hist) = train(&tiny_cfg(), &tiny_data(), 10).unwrap();
        assert_eq!(hist.epochs.len(), 1);
        assert!(hist.epochs[0].loss.is_finite());
        let again = train(&tiny_cfg(), &tiny_data(), 10).unwrap().0;
        assert_eq!(clf, again);
    }

    #[test]
    fn checkpoint_roundtrip_with_positions() {
        let cfg = TrainConfig {
            positional: true,
            ..tiny_cfg()
        };
        let (clf, _) = train(&cfg, &tiny_data(), 10).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.petn");
        clf.save(&path).unwrap();
        assert_eq!(Classifier::load(&path).unwrap(), clf);
    }

    #[test]
    fn small_model_gradients_check_out() {
        let report = model_grad_check(ModelConfig::new(12, 8, 1, 2, 3, true), 1, 100, 1e-5, 1e-4).unwrap();
        assert!(report.passed(), "{report:?}");
        assert_eq!(report.checked, 100);
    }

    #[test]
    fn geometry_mismatch_is_config_error() {
        let cfg = TrainConfig {
            patch_size: 12,
            ..tiny_cfg()
        };
        assert!(matches!(train(&cfg, &tiny_data(), 10), Err(HarnessError::Config(_))));
    }
}
