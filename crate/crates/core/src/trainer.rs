//! Class-weighted training of the residual classifier with RMSprop and a
//! stepped learning-rate schedule.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harvest::BlobStore;
use crate::manifest::{Manifest, Split};
use crate::nn::{argmax, ops, ArchitectureDescriptor, Model, ModelError, Prediction, TensorSpec};
use crate::preprocess::{self, AugmentDraws, AugmentPolicy, Image, NormStats, PreprocessError};
use crate::taxonomy::ClassId;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training split is empty")]
    EmptyTrainSplit,
    #[error("class counts are all zero")]
    EmptyCounts,
    #[error("degenerate-weights: fewer than two classes have examples")]
    DegenerateWeights,
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {diagnostics}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        diagnostics: String,
    },
    #[error("non-finite logits")]
    NonFiniteLogits,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Examples per class (`n_k`), indexed by [`ClassId::index`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassFrequencyTable {
    pub counts: Vec<u64>,
}

impl ClassFrequencyTable {
    pub fn new(counts: Vec<u64>) -> Self {
        ClassFrequencyTable { counts }
    }

    pub fn from_labels(labels: impl IntoIterator<Item = usize>, classes: usize) -> Self {
        let mut counts = vec![0; classes];
        for l in labels {
            if l < classes {
                counts[l] += 1;
            }
        }
        ClassFrequencyTable { counts }
    }

    /// Accepted records, restricted to `split` when given.
    pub fn from_manifest(manifest: &Manifest, split: Option<Split>) -> Self {
        Self::from_labels(
            manifest
                .accepted()
                .filter(|r| split.is_none() || r.split == split)
                .map(|r| r.label.index()),
            ClassId::COUNT,
        )
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Per-class loss multipliers `w_k = 1 − n_k / N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights(pub Vec<f64>);

impl ClassWeights {
    pub fn uniform(classes: usize) -> Self {
        ClassWeights(vec![1.0; classes])
    }
}

pub fn class_weights(table: &ClassFrequencyTable) -> Result<ClassWeights, TrainError> {
    let n = table.total();
    if n == 0 {
        return Err(TrainError::EmptyCounts);
    }
    if table.counts.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(TrainError::DegenerateWeights);
    }
    let nf = n as f64;
    Ok(ClassWeights(
        table.counts.iter().map(|&c| 1.0 - c as f64 / nf).collect(),
    ))
}

/// `w[label] · (−ln softmax(logits)[label])`.
pub fn weighted_loss(logits: &[f64], label: usize, weights: &ClassWeights) -> Result<f64, TrainError> {
    Ok(weighted_loss_grad(logits, label, weights)?.0)
}

/// Loss and its gradient with respect to the logits.
pub fn weighted_loss_grad(
    logits: &[f64],
    label: usize,
    weights: &ClassWeights,
) -> Result<(f64, Vec<f64>), TrainError> {
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(TrainError::NonFiniteLogits);
    }
    if label >= logits.len() || weights.0.len() != logits.len() {
        return Err(TrainError::Shape(format!(
            "label {label}, {} logits, {} weights",
            logits.len(),
            weights.0.len()
        )));
    }
    let w = weights.0[label];
    let loss = w * (ops::log_sum_exp(logits) - logits[label]);
    let mut g = ops::softmax(logits);
    g[label] -= 1.0;
    g.iter_mut().for_each(|v| *v *= w);
    Ok((loss, g))
}

/// Mean weighted loss over a `[B, K]` batch and the matching logit gradient.
pub fn batch_loss(
    logits: &[f64],
    labels: &[usize],
    weights: &ClassWeights,
) -> Result<(f64, Vec<f64>), TrainError> {
    let b = labels.len();
    if b == 0 || !logits.len().is_multiple_of(b) {
        return Err(TrainError::Shape(format!("{} logits for {b} labels", logits.len())));
    }
    let k = logits.len() / b;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (i, &l) in labels.iter().enumerate() {
        let (loss, g) = weighted_loss_grad(&logits[i * k..(i + 1) * k], l, weights)?;
        total += loss;
        grad.extend(g.into_iter().map(|v| v / b as f64));
    }
    Ok((total / b as f64, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RmsProp {
    /// Smoothing constant of the squared-gradient average.
    pub rho: f64,
    pub eps: f64,
}

impl Default for RmsProp {
    fn default() -> Self {
        RmsProp { rho: 0.9, eps: 1e-8 }
    }
}

/// One RMSprop update without momentum; L2 is added to the gradient.
pub fn rmsprop_step(
    params: &mut [f64],
    grads: &[f64],
    accumulator: &mut [f64],
    lr: f64,
    l2: f64,
    opt: RmsProp,
) -> Result<(), TrainError> {
    if params.len() != grads.len() || params.len() != accumulator.len() {
        return Err(TrainError::Shape(format!(
            "{} params, {} grads, {} accumulators",
            params.len(),
            grads.len(),
            accumulator.len()
        )));
    }
    if lr <= 0.0 {
        return Err(TrainError::Config(format!("learning rate {lr} must be positive")));
    }
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(accumulator.iter_mut()) {
        let g = g + l2 * *p;
        *v = opt.rho * *v + (1.0 - opt.rho) * g * g;
        *p -= lr * g / (v.sqrt() + opt.eps);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BestCriterion {
    ValLoss,
    ValAccuracy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightSource {
    TrainingSplit,
    WholeDataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub initial_lr: f64,
    /// Epochs (0-based) at which the rate is multiplied by `lr_decay_factor`.
    pub lr_decay_epochs: Vec<usize>,
    pub lr_decay_factor: f64,
    pub l2_strength: f64,
    pub rmsprop: RmsProp,
    pub max_epochs: usize,
    pub best_criterion: BestCriterion,
    pub weight_source: WeightSource,
    pub augment: AugmentPolicy,
    pub architecture: ArchitectureDescriptor,
    /// Prepare batches on a second thread. Results are identical either way.
    pub prefetch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 10,
            initial_lr: 1e-4,
            lr_decay_epochs: vec![10, 30, 40],
            lr_decay_factor: 0.1,
            l2_strength: 1e-4,
            rmsprop: RmsProp::default(),
            max_epochs: 50,
            best_criterion: BestCriterion::ValLoss,
            weight_source: WeightSource::TrainingSplit,
            augment: AugmentPolicy::default(),
            architecture: ArchitectureDescriptor::default(),
            prefetch: false,
        }
    }
}

impl TrainConfig {
    pub fn parse(document: &str) -> Result<Self, TrainError> {
        let c: TrainConfig = toml::from_str(document).map_err(|e| TrainError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch_size and max_epochs must be positive".into());
        }
        if !(self.initial_lr > 0.0) || !(self.lr_decay_factor > 0.0) || !(self.l2_strength >= 0.0) {
            return bad("learning rate and decay factor must be positive, L2 non-negative".into());
        }
        if !(0.0..1.0).contains(&self.rmsprop.rho) || !(self.rmsprop.eps > 0.0) {
            return bad(format!("bad RMSprop constants {:?}", self.rmsprop));
        }
        self.architecture.validate()?;
        Ok(())
    }

    /// `initial_lr · factor^(number of decay epochs ≤ epoch)`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let steps = self.lr_decay_epochs.iter().filter(|&&e| e <= epoch).count();
        self.initial_lr * self.lr_decay_factor.powi(steps as i32)
    }
}

/// A labelled image already resized to the model input.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub label: usize,
    pub image: Image,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    /// Accuracy of the training-mode (augmented) forward passes.
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub accumulator: Vec<f64>,
    /// Completed epochs.
    pub epoch: usize,
    pub history: Vec<EpochStats>,
    pub norm: NormStats,
    pub weights: ClassWeights,
    pub config: TrainConfig,
}

pub struct TrainOutcome {
    pub best: Checkpoint,
    pub last: Checkpoint,
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed ^ mix(epoch as u64 + 1)));
    idx.shuffle(&mut rng);
    idx
}

struct Batch {
    x: Vec<f64>,
    labels: Vec<usize>,
}

fn make_batch(
    samples: &[Sample],
    idx: &[usize],
    policy: Option<&AugmentPolicy>,
    norm: &NormStats,
    seed: u64,
) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::new();
    let mut labels = Vec::with_capacity(idx.len());
    for &i in idx {
        let s = &samples[i];
        let img = match policy {
            Some(p) => AugmentDraws::sample(p, &mut rng).apply(&s.image),
            None => s.image.clone(),
        };
        x.extend(norm.normalize_chw(&img));
        labels.push(s.label);
    }
    Batch { x, labels }
}

/// Weighted loss and accuracy of eval-mode predictions over `samples`.
pub fn evaluate_samples(
    model: &Model,
    samples: &[Sample],
    norm: &NormStats,
    weights: &ClassWeights,
    batch_size: usize,
) -> Result<(f64, f64, Vec<usize>), TrainError> {
    let mut total = 0.0;
    let mut correct = 0usize;
    let mut preds = Vec::with_capacity(samples.len());
    let all: Vec<usize> = (0..samples.len()).collect();
    for chunk in all.chunks(batch_size.max(1)) {
        let b = make_batch(samples, chunk, None, norm, 0);
        let f = model.forward_eval(&b.x, chunk.len())?;
        let (loss, _) = batch_loss(&f.logits, &b.labels, weights)?;
        total += loss * chunk.len() as f64;
        let k = model.arch.num_classes;
        for (i, &l) in b.labels.iter().enumerate() {
            let p = argmax(&f.logits[i * k..(i + 1) * k]);
            correct += usize::from(p == l);
            preds.push(p);
        }
    }
    let n = samples.len().max(1) as f64;
    Ok((total / n, correct as f64 / n, preds))
}

/// Trains from scratch. `weights` defaults to the training-split counts.
pub fn train(
    config: &TrainConfig,
    train_set: &[Sample],
    val_set: &[Sample],
    norm: &NormStats,
    weights: Option<ClassWeights>,
    seed: u64,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptyTrainSplit);
    }
    let arch = config.architecture;
    for s in train_set.iter().chain(val_set) {
        if s.image.width != arch.input_size || s.image.height != arch.input_size {
            return Err(TrainError::Shape(format!(
                "sample {} is {}x{}, model expects {}x{}",
                s.id, s.image.width, s.image.height, arch.input_size, arch.input_size
            )));
        }
        if s.label >= arch.num_classes {
            return Err(ModelError::Label(s.label).into());
        }
    }
    let weights = match weights {
        Some(w) => w,
        None => class_weights(&ClassFrequencyTable::from_labels(
            train_set.iter().map(|s| s.label),
            arch.num_classes,
        ))?,
    };
    let mut model = Model::new(arch, seed)?;
    let mut accumulator = vec![0.0; model.param_count()];
    let mut history: Vec<EpochStats> = Vec::new();
    let mut best: Option<(f64, Checkpoint)> = None;
    let bs = config.batch_size;

    for epoch in 0..config.max_epochs {
        let lr = config.lr_at(epoch);
        let order = epoch_order(train_set.len(), seed, epoch);
        let chunks: Vec<Vec<usize>> = order.chunks(bs).map(<[usize]>::to_vec).collect();
        let batch_seed = |b: usize| mix(seed ^ mix((epoch as u64) << 32 | b as u64));
        let (mut loss_sum, mut correct) = (0.0, 0usize);

        let mut step = |b: usize, batch: Batch, model: &mut Model| -> Result<(), TrainError> {
            let n = batch.labels.len();
            let trace = model.forward_train(&batch.x, n)?;
            let (loss, dlogits) = batch_loss(&trace.logits, &batch.labels, &weights).map_err(|e| match e {
                TrainError::NonFiniteLogits => TrainError::NonFiniteLoss {
                    epoch,
                    batch: b,
                    diagnostics: "logits not finite".into(),
                },
                e => e,
            })?;
            if !loss.is_finite() {
                let max_abs = model.params.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    batch: b,
                    diagnostics: format!("loss {loss}, lr {lr}, max |param| {max_abs}"),
                });
            }
            let k = model.arch.num_classes;
            for (i, &l) in batch.labels.iter().enumerate() {
                correct += usize::from(argmax(&trace.logits[i * k..(i + 1) * k]) == l);
            }
            loss_sum += loss * n as f64;
            let grads = model.backward(&trace, &dlogits);
            rmsprop_step(&mut model.params, &grads, &mut accumulator, lr, config.l2_strength, config.rmsprop)
        };

        if config.prefetch {
            let (tx, rx) = std::sync::mpsc::sync_channel::<Batch>(2);
            std::thread::scope(|s| -> Result<(), TrainError> {
                let chunks = &chunks;
                s.spawn(move || {
                    for (b, idx) in chunks.iter().enumerate() {
                        let batch = make_batch(train_set, idx, Some(&config.augment), norm, batch_seed(b));
                        if tx.send(batch).is_err() {
                            break;
                        }
                    }
                });
                for (b, batch) in rx.iter().enumerate() {
                    step(b, batch, &mut model)?;
                }
                Ok(())
            })?;
        } else {
            for (b, idx) in chunks.iter().enumerate() {
                let batch = make_batch(train_set, idx, Some(&config.augment), norm, batch_seed(b));
                step(b, batch, &mut model)?;
            }
        }

        let n = train_set.len() as f64;
        let (val_loss, val_accuracy) = if val_set.is_empty() {
            (None, None)
        } else {
            let (l, a, _) = evaluate_samples(&model, val_set, norm, &weights, bs)?;
            (Some(l), Some(a))
        };
        let stats = EpochStats {
            epoch,
            lr,
            train_loss: loss_sum / n,
            train_accuracy: correct as f64 / n,
            val_loss,
            val_accuracy,
        };
        log::info!(
            "epoch {:>3} lr {:.1e} train loss {:.4} acc {:.3} val loss {} acc {}",
            epoch,
            lr,
            stats.train_loss,
            stats.train_accuracy,
            val_loss.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into()),
            val_accuracy.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into()),
        );
        history.push(stats.clone());
        let score = match (config.best_criterion, val_loss, val_accuracy) {
            (BestCriterion::ValLoss, Some(l), _) => l,
            (BestCriterion::ValAccuracy, _, Some(a)) => -a,
            _ => stats.train_loss,
        };
        let ckpt = Checkpoint {
            model: model.clone(),
            accumulator: accumulator.clone(),
            epoch: epoch + 1,
            history: history.clone(),
            norm: *norm,
            weights: weights.clone(),
            config: config.clone(),
        };
        if best.as_ref().is_none_or(|(s, _)| score < *s) {
            best = Some((score, ckpt));
        }
    }
    let last = Checkpoint {
        model,
        accumulator,
        epoch: config.max_epochs,
        history,
        norm: *norm,
        weights,
        config: config.clone(),
    };
    Ok(TrainOutcome {
        best: best.map(|(_, c)| c).unwrap_or_else(|| last.clone()),
        last,
    })
}

/// Decodes, optionally crops, and resizes a stored image for the model.
pub fn prepare_image(bytes: &[u8], crop_ego: bool, size: usize) -> Result<Image, PreprocessError> {
    let mut img = Image::decode(bytes)?;
    if crop_ego {
        img = preprocess::crop_ego(&img)?;
    }
    Ok(preprocess::resize_to_model(&img, size))
}

/// Loads the accepted records of `split`. Records whose blob is missing or
/// unreadable are returned separately with the reason.
pub fn load_split(
    manifest: &Manifest,
    blobs: &BlobStore,
    split: Option<Split>,
    size: usize,
) -> (Vec<Sample>, Vec<(String, String)>) {
    let mut ok = Vec::new();
    let mut missing = Vec::new();
    for r in manifest.accepted().filter(|r| split.is_none() || r.split == split) {
        let Some(sum) = r.blob_checksum.as_deref() else {
            missing.push((r.id.clone(), "no blob recorded".into()));
            continue;
        };
        let loaded = blobs
            .get(sum)
            .map_err(|e| e.to_string())
            .and_then(|b| prepare_image(&b, r.crop_ego, size).map_err(|e| e.to_string()));
        match loaded {
            Ok(image) => ok.push(Sample {
                id: r.id.clone(),
                label: r.label.index(),
                image,
            }),
            Err(e) => missing.push((r.id.clone(), e)),
        }
    }
    (ok, missing)
}

impl Checkpoint {
    pub fn predict(&self, image: &Image) -> Result<Prediction, TrainError> {
        let a = self.model.arch;
        let img = if image.width != a.input_size || image.height != a.input_size {
            preprocess::resize_to_model(image, a.input_size)
        } else {
            image.clone()
        };
        Ok(self.model.predict(&self.norm.normalize_chw(&img))?)
    }
}

/// `(class, probabilities, embedding)` for an already-preprocessed image.
pub fn predict(checkpoint: &Checkpoint, image: &Image) -> Result<Prediction, TrainError> {
    checkpoint.predict(image)
}

const MAGIC: &[u8; 4] = b"RWCK";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    architecture: ArchitectureDescriptor,
    epoch: usize,
    history: Vec<EpochStats>,
    norm: NormStats,
    weights: ClassWeights,
    config: TrainConfig,
    tensors: Vec<TensorSpec>,
}

impl Checkpoint {
    /// Container layout: `RWCK`, u32 version, u64 header length, JSON
    /// header, then every tensor as little-endian f64 in header order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let arch = self.model.arch;
        let mut tensors = Vec::new();
        let mut offset = 0;
        let mut push = |prefix: &str, layout: Vec<TensorSpec>| {
            for t in layout {
                let len = t.len();
                tensors.push(TensorSpec {
                    name: format!("{prefix}/{}", t.name),
                    shape: t.shape,
                    offset,
                });
                offset += len;
            }
        };
        push("param", arch.param_layout());
        push("buffer", arch.buffer_layout());
        push("rmsprop", arch.param_layout());
        let header = Header {
            architecture: arch,
            epoch: self.epoch,
            history: self.history.clone(),
            norm: self.norm,
            weights: self.weights.clone(),
            config: self.config.clone(),
            tensors,
        };
        let json = serde_json::to_vec(&header).expect("header serialises");
        let mut out = Vec::with_capacity(16 + json.len() + 8 * offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for v in self.model.params.iter().chain(&self.model.buffers).chain(&self.accumulator) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint, TrainError> {
        let bad = |m: &str| TrainError::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(bad(&format!("unsupported format version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..16usize.saturating_add(hlen)).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| bad(&e.to_string()))?;
        let arch = header.architecture;
        arch.validate()?;
        let np: usize = arch.param_layout().iter().map(TensorSpec::len).sum();
        let nb: usize = arch.buffer_layout().iter().map(TensorSpec::len).sum();
        let data = &bytes[16 + hlen..];
        if data.len() != 8 * (2 * np + nb) {
            return Err(bad("tensor data length does not match the architecture"));
        }
        let vals: Vec<f64> = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let model = Model {
            arch,
            params: vals[..np].to_vec(),
            buffers: vals[np..np + nb].to_vec(),
        };
        Ok(Checkpoint {
            model,
            accumulator: vals[np + nb..].to_vec(),
            epoch: header.epoch,
            history: header.history,
            norm: header.norm,
            weights: header.weights,
            config: header.config,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
        }
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint, TrainError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}
