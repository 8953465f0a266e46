//! `picrypt` command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or format error, 3 internal
//! invariant violation.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use picrypt::attacks::{
    grad_leak_invert, jigsaw_solve, mi_collision, pearson, puzzle_metrics, single_token_embed_gradient, Arrangement,
    AttackError,
};
use picrypt::cipher::{gen_key, keyspace, mi_encrypt, rs_decrypt, rs_encrypt, spn_encrypt, CipherError, PermutationKey};
use picrypt::harness::{
    evaluate, gen_dataset, leakage_ratio, marker_count, model_grad_check, parse_config, sweep, sweep_csv, train_with,
    Classifier, Encryption, HarnessError, RunConfig, SweepConfig, SweepSetting, SynthSpec,
};
use picrypt::imgio::{assemble, load_ppm, save_ppm, split_patches, ImageError};
use picrypt::pevit::{ModelConfig, ModelError};
use picrypt::tensor::TensorError;

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_INTERNAL: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "picrypt", version, about = "Patch-shuffling image encryption, PEViT training and attacks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Encrypt a PPM/PGM image.
    Encrypt(EncryptArgs),
    /// Invert RS encryption with a key file.
    Decrypt(DecryptArgs),
    /// Print n!, the number of RS keys over n patches.
    Keyspace {
        #[arg(long)]
        n: u64,
    },
    /// Reassemble an RS ciphertext with the greedy puzzle solver.
    AttackJigsaw(JigsawArgs),
    /// Invert a single-token embedding gradient.
    AttackGradleak(GradleakArgs),
    /// Build alternative sub-patch sets for one mixed tile.
    AttackCollision(CollisionArgs),
    /// Train a model from a key=value config.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the config's test split.
    Eval(EvalArgs),
    /// Fraction of marker detections that survive encryption.
    Leakage(LeakageArgs),
    /// Solver accuracy over a grid of settings, as CSV.
    Sweep(SweepArgs),
    /// Finite-difference check of the full model gradient.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct EncryptArgs {
    /// rs, mi, rs+mi, mi+rs or spn(R)
    #[arg(long)]
    mode: String,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    patch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Key file to write (RS modes).
    #[arg(long)]
    key: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DecryptArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    key: PathBuf,
    #[arg(long)]
    patch: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct JigsawArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    patch: usize,
    /// Key file; when given, metrics against the true layout are appended.
    #[arg(long)]
    key: Option<PathBuf>,
    /// Write the arrangement dump here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the reassembled image here.
    #[arg(long)]
    image: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradleakArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    patch: usize,
    /// Row-major index of the patch fed to the model.
    #[arg(long, default_value_t = 0)]
    slot: usize,
    /// Checkpoint to attack; a fresh model is initialised when absent.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    label: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Recovered patch, rescaled so its largest entry is 255.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CollisionArgs {
    /// Mixed ciphertext image.
    #[arg(long = "in")]
    input: PathBuf,
    /// Side of a mixed tile (half the original patch size).
    #[arg(long)]
    tile: usize,
    #[arg(long, default_value_t = 0)]
    slot: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Four lines of comma-separated sub-patch values.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch CSV history.
    #[arg(long)]
    history: Option<PathBuf>,
    /// Stop once test accuracy reaches this value.
    #[arg(long)]
    target: Option<f64>,
    /// Overrides train.seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Seed for test-time keys.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct LeakageArgs {
    #[arg(long)]
    mode: String,
    #[arg(long, default_value_t = 16)]
    patch: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 200)]
    images: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Comma-separated patch sizes.
    #[arg(long, default_value = "8")]
    patch: String,
    #[arg(long, default_value = "0")]
    interval: String,
    #[arg(long, default_value = "0")]
    drop: String,
    #[arg(long, default_value = "112")]
    size: String,
    #[arg(long, default_value_t = 20)]
    images: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(String),
    Internal(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Self::Usage(_) => EXIT_USAGE,
            Self::Data(_) => EXIT_DATA,
            Self::Internal(_) => EXIT_INTERNAL,
        }
    }

    fn message(&self) -> &str {
        match self {
            Self::Usage(m) | Self::Data(m) | Self::Internal(m) => m,
        }
    }
}

fn from_tensor(e: TensorError) -> Failure {
    match e {
        TensorError::Internal(_) => Failure::Internal(e.to_string()),
        _ => Failure::Data(e.to_string()),
    }
}

impl From<ImageError> for Failure {
    fn from(e: ImageError) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<CipherError> for Failure {
    fn from(e: CipherError) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Tensor(t) => from_tensor(t),
            other => Self::Data(other.to_string()),
        }
    }
}

impl From<AttackError> for Failure {
    fn from(e: AttackError) -> Self {
        match e {
            AttackError::Model(m) => m.into(),
            other => Self::Data(other.to_string()),
        }
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Model(m) => m.into(),
            HarnessError::Attack(a) => a.into(),
            HarnessError::Tensor(t) => from_tensor(t),
            other => Self::Data(other.to_string()),
        }
    }
}

impl From<TensorError> for Failure {
    fn from(e: TensorError) -> Self {
        from_tensor(e)
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::Data(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

/// Parses `argv` (program name first), runs the command and returns the
/// exit code. Results go to `out`, diagnostics to `err`.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let text = e.render().to_string();
            if code == 0 {
                let _ = write!(out, "{text}");
            } else {
                let _ = write!(err, "{text}");
            }
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => 0,
        Err(f) => {
            let _ = writeln!(err, "picrypt: {}", f.message());
            f.code()
        }
    }
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<(), Failure> {
    match command {
        Command::Encrypt(a) => encrypt(a),
        Command::Decrypt(a) => decrypt(a),
        Command::Keyspace { n } => emit(out, format!("{}\n", keyspace(n))),
        Command::AttackJigsaw(a) => attack_jigsaw(a, out),
        Command::AttackGradleak(a) => attack_gradleak(a, out),
        Command::AttackCollision(a) => attack_collision(a, out),
        Command::Train(a) => train_cmd(a, out),
        Command::Eval(a) => eval_cmd(a, out),
        Command::Leakage(a) => leakage_cmd(a, out),
        Command::Sweep(a) => sweep_cmd(a, out),
        Command::Gradcheck(a) => gradcheck_cmd(a, out),
    }
}

fn emit(out: &mut dyn Write, text: impl AsRef<str>) -> Result<(), Failure> {
    out.write_all(text.as_ref().as_bytes())
        .map_err(|e| Failure::Internal(format!("writing output: {e}")))
}

fn parse_mode(text: &str) -> Result<Encryption, Failure> {
    Encryption::parse(text).map_err(|e| Failure::Usage(e.to_string()))
}

fn encrypt(a: EncryptArgs) -> Result<(), Failure> {
    let mode = parse_mode(&a.mode)?;
    let img = load_ppm(&a.input)?;
    let grid = split_patches(&img, a.patch, 0)?;
    let key = || gen_key(a.seed, grid.len());
    let cipher = match mode {
        Encryption::None => img.clone(),
        Encryption::Rs => assemble(&rs_encrypt(&grid, &key()?)?)?,
        Encryption::Mi => mi_encrypt(&grid)?.to_image()?,
        Encryption::RsMi => mi_encrypt(&rs_encrypt(&grid, &key()?)?)?.to_image()?,
        Encryption::MiRs => mi_encrypt(&grid)?.permuted(&key()?)?.to_image()?,
        Encryption::Spn(r) => spn_encrypt(&grid, r, a.seed)?.to_image()?,
    };
    let keyed = matches!(mode, Encryption::Rs | Encryption::RsMi | Encryption::MiRs);
    match (&a.key, keyed) {
        (Some(path), true) => write_file(path, key()?.to_key_file())?,
        (None, true) => return Err(Failure::Usage(format!("mode {mode} needs --key"))),
        (Some(_), false) => return Err(Failure::Usage(format!("mode {mode} does not produce a key"))),
        (None, false) => {}
    }
    save_ppm(&cipher, &a.out)?;
    Ok(())
}

fn load_key(path: &Path) -> Result<PermutationKey, Failure> {
    Ok(PermutationKey::from_key_file(&read_text(path)?)?)
}

fn decrypt(a: DecryptArgs) -> Result<(), Failure> {
    let key = load_key(&a.key)?;
    let img = load_ppm(&a.input)?;
    let grid = split_patches(&img, a.patch, 0)?;
    save_ppm(&assemble(&rs_decrypt(&grid, &key)?)?, &a.out)?;
    Ok(())
}

fn attack_jigsaw(a: JigsawArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let img = load_ppm(&a.input)?;
    let grid = split_patches(&img, a.patch, 0)?;
    let found = jigsaw_solve(&grid)?;
    let metrics = match &a.key {
        Some(path) => {
            let key = load_key(path)?;
            if key.n() != grid.len() {
                return Err(Failure::Data(format!("key covers {} patches, image has {}", key.n(), grid.len())));
            }
            let truth = Arrangement::from_key(grid.rows, grid.cols, key.perm(), |_| true);
            Some(puzzle_metrics(&found, &truth)?)
        }
        None => None,
    };
    if let Some(path) = &a.image {
        let placed = found
            .placement
            .iter()
            .map(|slot| slot.and_then(|i| grid.patches[i].clone()))
            .collect::<Vec<_>>();
        let filled = placed
            .into_iter()
            .map(|p| Some(p.unwrap_or_else(|| vec![0; grid.patch_len()])))
            .collect();
        save_ppm(&assemble(&grid.with_patches(filled))?, path)?;
    }
    let dump = found.dump(metrics.as_ref());
    match &a.out {
        Some(path) => write_file(path, dump),
        None => emit(out, dump),
    }
}

fn attack_gradleak(a: GradleakArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let img = load_ppm(&a.input)?;
    let grid = split_patches(&img, a.patch, 0)?;
    let tokens = grid.to_unit_vectors();
    let x = tokens
        .get(a.slot)
        .ok_or_else(|| Failure::Usage(format!("slot {} out of range for {} patches", a.slot, tokens.len())))?;
    let params = match &a.checkpoint {
        Some(path) => Classifier::load(path)?.model,
        None => picrypt::pevit::ModelParams::init(ModelConfig::new(x.len(), 64, 1, 4, 10, false), a.seed)?,
    };
    if a.label >= params.config.classes {
        return Err(Failure::Usage(format!("label {} out of range", a.label)));
    }
    let grad = single_token_embed_gradient(&params, x, a.label)?;
    let dir = grad_leak_invert(&grad)?;
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let cosine = if norm == 0.0 { 0.0 } else { dir.iter().zip(x).map(|(d, v)| d * v).sum::<f64>() / norm };
    emit(out, format!("cosine={cosine}\npearson={}\n", pearson(&dir, x)))?;
    if let Some(path) = &a.out {
        let peak = dir.iter().fold(0.0f64, |m, &v| m.max(v));
        let pixels = dir
            .iter()
            .map(|&v| if peak > 0.0 { (v / peak * 255.0).round().clamp(0.0, 255.0) as u8 } else { 0 })
            .collect();
        let patch = picrypt::imgio::Image::new(a.patch, a.patch, grid.channels, pixels)?;
        save_ppm(&patch, path)?;
    }
    Ok(())
}

fn attack_collision(a: CollisionArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let img = load_ppm(&a.input)?;
    let grid = split_patches(&img, a.tile, 0)?;
    let tile = grid
        .patches
        .get(a.slot)
        .and_then(|p| p.as_ref())
        .ok_or_else(|| Failure::Usage(format!("slot {} out of range for {} tiles", a.slot, grid.len())))?;
    let mixed: Vec<f64> = tile.iter().map(|&v| f64::from(v) / 255.0).collect();
    let subs = mi_collision(&mixed, a.seed);
    let err = (0..mixed.len())
        .map(|i| ((subs[0][i] + subs[1][i] + subs[2][i] + subs[3][i]) / 4.0 - mixed[i]).abs())
        .fold(0.0, f64::max);
    if !(err < 1e-12) {
        return Err(Failure::Internal(format!("collision mean error {err}")));
    }
    emit(out, format!("max_mean_error={err:e}\n"))?;
    if let Some(path) = &a.out {
        let text: String = subs
            .iter()
            .map(|s| s.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",") + "\n")
            .collect();
        write_file(path, text)?;
    }
    Ok(())
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig, Failure> {
    match path {
        Some(p) => Ok(parse_config(&read_text(p)?)?),
        None => Ok(RunConfig::default()),
    }
}

fn train_cmd(a: TrainArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let mut cfg = load_config(&a.config)?;
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    let data = gen_dataset(&cfg.data)?;
    let setting = cfg.train.tokens();
    let mut failure = None;
    let mut lines = vec!["epoch,loss,train_accuracy,test_accuracy".to_string()];
    let (clf, _) = train_with(&cfg.train, &data.train, data.classes, |clf, stats| {
        let acc = if data.test.is_empty() {
            Ok(f64::NAN)
        } else {
            evaluate(clf, &data.test, &setting, cfg.train.seed)
        };
        match acc {
            Ok(acc) => {
                lines.push(format!("{},{},{},{}", stats.epoch, stats.loss, stats.train_accuracy, acc));
                a.target.is_none_or(|t| !(acc >= t))
            }
            Err(e) => {
                failure = Some(e);
                false
            }
        }
    })?;
    if let Some(e) = failure {
        return Err(e.into());
    }
    clf.save(&a.out)?;
    let text = lines.join("\n") + "\n";
    if let Some(p) = &a.history {
        write_file(p, &text)?;
    }
    emit(out, text)
}

fn eval_cmd(a: EvalArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let cfg = load_config(&a.config)?;
    let clf = Classifier::load(&a.checkpoint)?;
    let data = gen_dataset(&cfg.data)?;
    let acc = evaluate(&clf, &data.test, &cfg.train.tokens(), a.seed)?;
    emit(out, format!("accuracy={acc}\n"))
}

fn leakage_cmd(a: LeakageArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let mode = parse_mode(&a.mode)?;
    let spec = SynthSpec {
        image_size: a.size,
        marker: true,
        train_per_class: 0,
        test_per_class: a.images.div_ceil(10),
        seed: a.seed,
        ..SynthSpec::default()
    };
    let corpus: Vec<_> = gen_dataset(&spec)?.test.into_iter().take(a.images).map(|s| s.image).collect();
    let ratio = leakage_ratio(marker_count, &corpus, a.patch, mode, a.seed)?;
    emit(out, format!("ratio={ratio}\n"))
}

fn list<T: std::str::FromStr>(flag: &str, text: &str) -> Result<Vec<T>, Failure> {
    text.split(',')
        .map(|t| t.trim().parse().map_err(|_| Failure::Usage(format!("--{flag}: bad value {t:?}"))))
        .collect()
}

fn sweep_cmd(a: SweepArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let mut settings = Vec::new();
    for &image_size in &list::<usize>("size", &a.size)? {
        for &patch_size in &list::<usize>("patch", &a.patch)? {
            for &interval in &list::<usize>("interval", &a.interval)? {
                for &drop_ratio in &list::<f64>("drop", &a.drop)? {
                    settings.push(SweepSetting {
                        patch_size,
                        interval,
                        drop_ratio,
                        image_size,
                    });
                }
            }
        }
    }
    let rows = sweep(
        &SweepConfig {
            settings,
            images: a.images,
            seed: a.seed,
        },
        None,
    )?;
    let csv = sweep_csv(&rows);
    match &a.out {
        Some(p) => write_file(p, csv),
        None => emit(out, csv),
    }
}

fn gradcheck_cmd(a: GradcheckArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let config = ModelConfig::new(12, 8, 2, 2, 3, true);
    let report = model_grad_check(config, a.seed, a.samples, a.step, a.tolerance)?;
    emit(
        out,
        format!(
            "checked={}\nmax_rel_error={:e}\nworst={:?}\n",
            report.checked, report.max_rel_error, report.worst
        ),
    )?;
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Internal(format!(
            "gradient check failed: {:e} ≥ {:e}",
            report.max_rel_error, report.tolerance
        )))
    }
}
