//! A compact residual CNN: stem conv → pool → residual blocks → global
//! average pooling → batch-normalised embedding → fully-connected head.
//!
//! Parameters live in one flat `Vec<f64>` described by a [`TensorSpec`]
//! layout, so the optimiser, gradient checks and checkpoints all work on
//! plain slices.

pub mod ops;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::ClassId;
use ops::{BnCache, ConvShape};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("input has {got} values, expected {expected}")]
    InputSize { expected: usize, got: usize },
    #[error("invalid architecture: {0}")]
    Architecture(String),
    #[error("label index {0} out of range")]
    Label(usize),
    #[error("non-finite logits")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureDescriptor {
    pub input_size: usize,
    pub in_channels: usize,
    /// Channels in the stem and every residual block.
    pub width: usize,
    pub stem_kernel: usize,
    pub stem_stride: usize,
    /// Average-pool window after the stem.
    pub pool: usize,
    pub blocks: usize,
    pub num_classes: usize,
}

impl Default for ArchitectureDescriptor {
    fn default() -> Self {
        ArchitectureDescriptor {
            input_size: crate::preprocess::MODEL_INPUT,
            in_channels: 3,
            width: 16,
            stem_kernel: 3,
            stem_stride: 2,
            pool: 4,
            blocks: 3,
            num_classes: ClassId::COUNT,
        }
    }
}

impl ArchitectureDescriptor {
    pub fn stem_shape(&self) -> ConvShape {
        ConvShape {
            cin: self.in_channels,
            cout: self.width,
            k: self.stem_kernel,
            stride: self.stem_stride,
            pad: self.stem_kernel / 2,
            h: self.input_size,
            w: self.input_size,
        }
    }

    /// Side length after the stem convolution.
    pub fn stem_out(&self) -> usize {
        self.stem_shape().ho()
    }

    /// Side length of the feature maps seen by the residual blocks and CAM.
    pub fn feature_size(&self) -> usize {
        self.stem_out() / self.pool.max(1)
    }

    fn block_shape(&self) -> ConvShape {
        let f = self.feature_size();
        ConvShape {
            cin: self.width,
            cout: self.width,
            k: 3,
            stride: 1,
            pad: 1,
            h: f,
            w: f,
        }
    }

    /// Length of the normalised pooled vector fed to the FC layer.
    pub fn embedding_dim(&self) -> usize {
        self.width
    }

    pub fn input_len(&self) -> usize {
        self.in_channels * self.input_size * self.input_size
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Architecture(m.to_string()));
        if self.in_channels == 0 || self.width == 0 || self.num_classes < 2 {
            return bad("channels, width and class count must be positive (at least two classes)");
        }
        if self.stem_kernel == 0 || self.stem_stride == 0 || self.pool == 0 {
            return bad("kernel, stride and pool must be positive");
        }
        if self.input_size + 2 * (self.stem_kernel / 2) < self.stem_kernel {
            return bad("input smaller than the stem kernel");
        }
        if self.feature_size() == 0 {
            return bad("pooling leaves no spatial extent");
        }
        Ok(())
    }

    /// Named parameter tensors in storage order.
    pub fn param_layout(&self) -> Vec<TensorSpec> {
        let w = self.width;
        let mut l = Layout::default();
        l.push("stem.conv.weight", vec![w, self.in_channels, self.stem_kernel, self.stem_kernel]);
        l.push("stem.bn.gamma", vec![w]);
        l.push("stem.bn.beta", vec![w]);
        for b in 0..self.blocks {
            for c in 1..=2 {
                l.push(&format!("block{b}.conv{c}.weight"), vec![w, w, 3, 3]);
                l.push(&format!("block{b}.bn{c}.gamma"), vec![w]);
                l.push(&format!("block{b}.bn{c}.beta"), vec![w]);
            }
        }
        l.push("neck.bn.gamma", vec![w]);
        l.push("neck.bn.beta", vec![w]);
        l.push("fc.weight", vec![self.num_classes, w]);
        l.push("fc.bias", vec![self.num_classes]);
        l.0
    }

    /// Batch-norm running statistics in storage order.
    pub fn buffer_layout(&self) -> Vec<TensorSpec> {
        let w = self.width;
        let mut l = Layout::default();
        l.push("stem.bn.running_mean", vec![w]);
        l.push("stem.bn.running_var", vec![w]);
        for b in 0..self.blocks {
            for c in 1..=2 {
                l.push(&format!("block{b}.bn{c}.running_mean"), vec![w]);
                l.push(&format!("block{b}.bn{c}.running_var"), vec![w]);
            }
        }
        l.push("neck.bn.running_mean", vec![w]);
        l.push("neck.bn.running_var", vec![w]);
        l.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Default)]
struct Layout(Vec<TensorSpec>);

impl Layout {
    fn push(&mut self, name: &str, shape: Vec<usize>) {
        let offset = self.0.last().map(|t| t.offset + t.len()).unwrap_or(0);
        self.0.push(TensorSpec {
            name: name.to_string(),
            shape,
            offset,
        });
    }
}

/// Offsets into the flat parameter vector, in layout order.
#[derive(Debug, Clone, Copy)]
struct BnOff {
    gamma: usize,
    beta: usize,
}

#[derive(Debug, Clone)]
struct Offsets {
    stem_w: usize,
    stem_bn: BnOff,
    blocks: Vec<[(usize, BnOff); 2]>,
    neck: BnOff,
    fc_w: usize,
    fc_b: usize,
}

impl Offsets {
    fn of(layout: &[TensorSpec]) -> Offsets {
        let mut it = layout.iter().map(|t| t.offset);
        let mut next = || it.next().expect("layout complete");
        let stem_w = next();
        let stem_bn = BnOff { gamma: next(), beta: next() };
        let n_blocks = (layout.len() - 7) / 6;
        let blocks = (0..n_blocks)
            .map(|_| {
                let c1 = next();
                let b1 = BnOff { gamma: next(), beta: next() };
                let c2 = next();
                let b2 = BnOff { gamma: next(), beta: next() };
                [(c1, b1), (c2, b2)]
            })
            .collect();
        Offsets {
            stem_w,
            stem_bn,
            blocks,
            neck: BnOff { gamma: next(), beta: next() },
            fc_w: next(),
            fc_b: next(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub arch: ArchitectureDescriptor,
    pub params: Vec<f64>,
    /// Batch-norm running means and variances.
    pub buffers: Vec<f64>,
}

/// Everything the backward pass needs from a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    pub batch: usize,
    input: Vec<f64>,
    stem_bn: BnCache,
    stem_act: Vec<f64>,
    blocks: Vec<BlockTrace>,
    neck_bn: BnCache,
    /// Output of the last residual block, `[B, width, f, f]`.
    pub features: Vec<f64>,
    pub embedding: Vec<f64>,
    pub logits: Vec<f64>,
}

#[derive(Debug, Clone)]
struct BlockTrace {
    input: Vec<f64>,
    bn1: BnCache,
    act1: Vec<f64>,
    bn2: BnCache,
    out: Vec<f64>,
}

/// Eval-mode forward output for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub batch: usize,
    pub features: Vec<f64>,
    pub embedding: Vec<f64>,
    pub logits: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class: ClassId,
    pub probabilities: Vec<f64>,
    pub embedding: Vec<f64>,
}

impl Model {
    /// He-normal convolutions drawn from `seed`, unit/zero batch norms and
    /// an all-zero FC layer (so training starts from uniform predictions).
    pub fn new(arch: ArchitectureDescriptor, seed: u64) -> Result<Model, ModelError> {
        arch.validate()?;
        let layout = arch.param_layout();
        let n = layout.last().map(|t| t.offset + t.len()).unwrap_or(0);
        let mut params = vec![0.0; n];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in &layout {
            let slice = &mut params[t.range()];
            if t.name.contains(".conv") {
                let fan_in: usize = t.shape[1..].iter().product();
                let d = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("valid std");
                slice.iter_mut().for_each(|v| *v = d.sample(&mut rng));
            } else if t.name.ends_with("gamma") {
                slice.fill(1.0);
            }
        }
        let buffers = arch
            .buffer_layout()
            .iter()
            .flat_map(|t| {
                let v = if t.name.ends_with("running_var") { 1.0 } else { 0.0 };
                std::iter::repeat_n(v, t.len())
            })
            .collect();
        Ok(Model { arch, params, buffers })
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.arch
            .param_layout()
            .into_iter()
            .find(|t| t.name == name)
            .map(|t| &self.params[t.range()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let t = self.arch.param_layout().into_iter().find(|t| t.name == name)?;
        Some(&mut self.params[t.range()])
    }

    /// FC weights as `[num_classes][embedding_dim]`.
    pub fn fc_weights(&self) -> &[f64] {
        let off = Offsets::of(&self.arch.param_layout());
        &self.params[off.fc_w..off.fc_w + self.arch.num_classes * self.arch.width]
    }

    /// Per-channel weights `w` and offset `c` with
    /// `logit[class] = c + Σ_j w[j]·pooled[j]` in inference mode, where
    /// `pooled` is the global average of the last block's feature maps.
    pub fn class_map_weights(&self, class: usize) -> Result<(Vec<f64>, f64), ModelError> {
        let a = &self.arch;
        if class >= a.num_classes {
            return Err(ModelError::Label(class));
        }
        let off = Offsets::of(&a.param_layout());
        let boff = a.buffer_layout();
        let bi = 2 * (1 + 2 * a.blocks);
        let (rm, rv) = (&self.buffers[boff[bi].range()], &self.buffers[boff[bi + 1].range()]);
        let w = a.width;
        let fw = &self.fc_weights()[class * w..(class + 1) * w];
        let mut c = self.params[off.fc_b + class];
        let mut weights = Vec::with_capacity(w);
        for j in 0..w {
            let scale = self.params[off.neck.gamma + j] / (rv[j] + ops::BN_EPS).sqrt();
            weights.push(fw[j] * scale);
            c += fw[j] * (self.params[off.neck.beta + j] - scale * rm[j]);
        }
        Ok((weights, c))
    }

    fn check_input(&self, x: &[f64], batch: usize) -> Result<(), ModelError> {
        let expected = batch * self.arch.input_len();
        if x.len() != expected || batch == 0 {
            return Err(ModelError::InputSize { expected, got: x.len() });
        }
        Ok(())
    }

    fn logits(&self, off: &Offsets, embedding: &[f64], batch: usize) -> Vec<f64> {
        let a = &self.arch;
        let mut logits = vec![0.0; batch * a.num_classes];
        let fw = &self.params[off.fc_w..off.fc_w + a.num_classes * a.width];
        let fb = &self.params[off.fc_b..off.fc_b + a.num_classes];
        for b in 0..batch {
            let e = &embedding[b * a.width..(b + 1) * a.width];
            for k in 0..a.num_classes {
                let row = &fw[k * a.width..(k + 1) * a.width];
                logits[b * a.num_classes + k] = fb[k] + row.iter().zip(e).map(|(w, x)| w * x).sum::<f64>();
            }
        }
        logits
    }

    /// Training-mode forward pass: batch statistics, running stats updated.
    pub fn forward_train(&mut self, x: &[f64], batch: usize) -> Result<Trace, ModelError> {
        self.check_input(x, batch)?;
        let a = self.arch;
        let layout = a.param_layout();
        let off = Offsets::of(&layout);
        let boff = a.buffer_layout();
        let w = a.width;
        let stem = a.stem_shape();
        let so = stem.ho() * stem.wo();

        let y = ops::conv_forward(x, batch, &stem, &self.params[off.stem_w..off.stem_w + w * stem.cin * stem.k * stem.k]);
        let (params, buffers) = (&self.params, &mut self.buffers);
        let bn = |buffers: &mut Vec<f64>, y: &[f64], o: BnOff, bi: usize, hw: usize| {
            let (rm, rv) = (boff[2 * bi].offset, boff[2 * bi + 1].offset);
            let (m, v) = buffers.split_at_mut(rv);
            ops::bn_forward_train(
                y,
                batch,
                w,
                hw,
                &params[o.gamma..o.gamma + w],
                &params[o.beta..o.beta + w],
                &mut m[rm..rm + w],
                &mut v[..w],
            )
        };
        let (mut act, stem_bn) = bn(buffers, &y, off.stem_bn, 0, so);
        ops::relu(&mut act);
        let stem_act = act;
        let mut h = ops::avgpool_forward(&stem_act, batch * w, stem.ho(), stem.wo(), a.pool);

        let bs = a.block_shape();
        let fhw = bs.h * bs.w;
        let kk = w * 9;
        let mut blocks = Vec::with_capacity(a.blocks);
        for (i, blk) in off.blocks.iter().enumerate() {
            let input = h;
            let c1 = ops::conv_forward(&input, batch, &bs, &params[blk[0].0..blk[0].0 + w * kk]);
            let (mut act1, bn1) = bn(buffers, &c1, blk[0].1, 1 + 2 * i, fhw);
            ops::relu(&mut act1);
            let c2 = ops::conv_forward(&act1, batch, &bs, &params[blk[1].0..blk[1].0 + w * kk]);
            let (mut out, bn2) = bn(buffers, &c2, blk[1].1, 2 + 2 * i, fhw);
            for (o, x) in out.iter_mut().zip(&input) {
                *o += x;
            }
            ops::relu(&mut out);
            h = out.clone();
            blocks.push(BlockTrace { input, bn1, act1, bn2, out });
        }
        let pooled = ops::gap_forward(&h, batch * w, fhw);
        let (embedding, neck_bn) = bn(buffers, &pooled, off.neck, 1 + 2 * a.blocks, 1);
        let logits = self.logits(&off, &embedding, batch);
        Ok(Trace {
            batch,
            input: x.to_vec(),
            stem_bn,
            stem_act,
            blocks,
            neck_bn,
            features: h,
            embedding,
            logits,
        })
    }

    /// Inference forward pass using running statistics.
    pub fn forward_eval(&self, x: &[f64], batch: usize) -> Result<Forward, ModelError> {
        self.check_input(x, batch)?;
        let a = self.arch;
        let off = Offsets::of(&a.param_layout());
        let boff = a.buffer_layout();
        let w = a.width;
        let stem = a.stem_shape();
        let p = &self.params;
        let bn = |y: &[f64], o: BnOff, bi: usize, hw: usize| {
            let (rm, rv) = (boff[2 * bi].offset, boff[2 * bi + 1].offset);
            ops::bn_forward_eval(
                y,
                batch,
                w,
                hw,
                &p[o.gamma..o.gamma + w],
                &p[o.beta..o.beta + w],
                &self.buffers[rm..rm + w],
                &self.buffers[rv..rv + w],
            )
        };
        let y = ops::conv_forward(x, batch, &stem, &p[off.stem_w..off.stem_w + w * stem.cin * stem.k * stem.k]);
        let mut act = bn(&y, off.stem_bn, 0, stem.ho() * stem.wo());
        ops::relu(&mut act);
        let mut h = ops::avgpool_forward(&act, batch * w, stem.ho(), stem.wo(), a.pool);
        let bs = a.block_shape();
        let fhw = bs.h * bs.w;
        for (i, blk) in off.blocks.iter().enumerate() {
            let c1 = ops::conv_forward(&h, batch, &bs, &p[blk[0].0..blk[0].0 + w * w * 9]);
            let mut act1 = bn(&c1, blk[0].1, 1 + 2 * i, fhw);
            ops::relu(&mut act1);
            let c2 = ops::conv_forward(&act1, batch, &bs, &p[blk[1].0..blk[1].0 + w * w * 9]);
            let mut out = bn(&c2, blk[1].1, 2 + 2 * i, fhw);
            for (o, x) in out.iter_mut().zip(&h) {
                *o += x;
            }
            ops::relu(&mut out);
            h = out;
        }
        let embedding = bn(&ops::gap_forward(&h, batch * w, fhw), off.neck, 1 + 2 * a.blocks, 1);
        let logits = self.logits(&off, &embedding, batch);
        Ok(Forward {
            batch,
            features: h,
            embedding,
            logits,
        })
    }

    /// Gradient of the loss with respect to every parameter, given the
    /// loss gradient at the logits (`[B, num_classes]`).
    pub fn backward(&self, trace: &Trace, dlogits: &[f64]) -> Vec<f64> {
        let a = self.arch;
        let off = Offsets::of(&a.param_layout());
        let (w, k, batch) = (a.width, a.num_classes, trace.batch);
        let p = &self.params;
        let mut g = vec![0.0; p.len()];

        // FC head.
        let mut demb = vec![0.0; batch * w];
        for b in 0..batch {
            let e = &trace.embedding[b * w..(b + 1) * w];
            for c in 0..k {
                let d = dlogits[b * k + c];
                g[off.fc_b + c] += d;
                let row = off.fc_w + c * w;
                for j in 0..w {
                    g[row + j] += d * e[j];
                    demb[b * w + j] += d * p[row + j];
                }
            }
        }
        let bs = a.block_shape();
        let fhw = bs.h * bs.w;
        let (gamma_slice, rest) = split_grads(&mut g, off.neck, w);
        let dpooled = ops::bn_backward(&demb, &trace.neck_bn, batch, w, 1, &p[off.neck.gamma..off.neck.gamma + w], gamma_slice, rest);
        let mut dh = ops::gap_backward(&dpooled, fhw);

        for (i, blk) in off.blocks.iter().enumerate().rev() {
            let t = &trace.blocks[i];
            ops::relu_backward(&mut dh, &t.out);
            let dskip = dh.clone();
            let (gamma_slice, rest) = split_grads(&mut g, blk[1].1, w);
            let dc2 = ops::bn_backward(&dh, &t.bn2, batch, w, fhw, &p[blk[1].1.gamma..blk[1].1.gamma + w], gamma_slice, rest);
            let mut da1 = ops::conv_backward(&t.act1, &dc2, batch, &bs, &p[blk[1].0..blk[1].0 + w * w * 9], &mut g[blk[1].0..blk[1].0 + w * w * 9], true)
                .expect("dx requested");
            ops::relu_backward(&mut da1, &t.act1);
            let (gamma_slice, rest) = split_grads(&mut g, blk[0].1, w);
            let dc1 = ops::bn_backward(&da1, &t.bn1, batch, w, fhw, &p[blk[0].1.gamma..blk[0].1.gamma + w], gamma_slice, rest);
            let dx = ops::conv_backward(&t.input, &dc1, batch, &bs, &p[blk[0].0..blk[0].0 + w * w * 9], &mut g[blk[0].0..blk[0].0 + w * w * 9], true)
                .expect("dx requested");
            dh = dx.iter().zip(&dskip).map(|(a, b)| a + b).collect();
        }

        let stem = a.stem_shape();
        let mut dact = ops::avgpool_backward(&dh, batch * w, stem.ho(), stem.wo(), a.pool);
        ops::relu_backward(&mut dact, &trace.stem_act);
        let (gamma_slice, rest) = split_grads(&mut g, off.stem_bn, w);
        let dy = ops::bn_backward(
            &dact,
            &trace.stem_bn,
            batch,
            w,
            stem.ho() * stem.wo(),
            &p[off.stem_bn.gamma..off.stem_bn.gamma + w],
            gamma_slice,
            rest,
        );
        let n = w * stem.cin * stem.k * stem.k;
        ops::conv_backward(&trace.input, &dy, batch, &stem, &p[off.stem_w..off.stem_w + n], &mut g[off.stem_w..off.stem_w + n], false);
        g
    }

    /// Single CHW image → class, softmax probabilities and FC-input embedding.
    pub fn predict(&self, chw: &[f64]) -> Result<Prediction, ModelError> {
        let f = self.forward_eval(chw, 1)?;
        let probabilities = ops::softmax(&f.logits);
        if probabilities.iter().any(|p| !p.is_finite()) {
            return Err(ModelError::NonFinite);
        }
        let idx = argmax(&probabilities);
        Ok(Prediction {
            class: ClassId::from_index(idx).ok_or(ModelError::Label(idx))?,
            probabilities,
            embedding: f.embedding,
        })
    }
}

/// Disjoint mutable views of a batch norm's gamma and beta gradients.
fn split_grads(g: &mut [f64], o: BnOff, w: usize) -> (&mut [f64], &mut [f64]) {
    debug_assert_eq!(o.beta, o.gamma + w);
    let (a, b) = g[o.gamma..o.beta + w].split_at_mut(w);
    (a, b)
}

/// Index of the largest value; the first wins ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}
