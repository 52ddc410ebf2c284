//! Batched NCHW kernels in f64 with hand-written backward passes.

/// Output side length of a convolution or pooling window.
pub fn out_len(n: usize, k: usize, stride: usize, pad: usize) -> usize {
    (n + 2 * pad - k) / stride + 1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub h: usize,
    pub w: usize,
}

impl ConvShape {
    pub fn ho(&self) -> usize {
        out_len(self.h, self.k, self.stride, self.pad)
    }

    pub fn wo(&self) -> usize {
        out_len(self.w, self.k, self.stride, self.pad)
    }

    fn patch(&self) -> usize {
        self.cin * self.k * self.k
    }
}

fn im2col(x: &[f64], s: &ConvShape, cols: &mut [f64]) {
    let (ho, wo) = (s.ho(), s.wo());
    let n = ho * wo;
    for c in 0..s.cin {
        let plane = &x[c * s.h * s.w..(c + 1) * s.h * s.w];
        for ky in 0..s.k {
            for kx in 0..s.k {
                let row = &mut cols[((c * s.k + ky) * s.k + kx) * n..][..n];
                for oy in 0..ho {
                    let iy = (oy * s.stride + ky) as isize - s.pad as isize;
                    let dst = &mut row[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= s.h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * s.w..(iy as usize + 1) * s.w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * s.stride + kx) as isize - s.pad as isize;
                        *d = if ix < 0 || ix >= s.w as isize { 0.0 } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], s: &ConvShape, dx: &mut [f64]) {
    let (ho, wo) = (s.ho(), s.wo());
    let n = ho * wo;
    for c in 0..s.cin {
        let plane = &mut dx[c * s.h * s.w..(c + 1) * s.h * s.w];
        for ky in 0..s.k {
            for kx in 0..s.k {
                let row = &cols[((c * s.k + ky) * s.k + kx) * n..][..n];
                for oy in 0..ho {
                    let iy = (oy * s.stride + ky) as isize - s.pad as isize;
                    if iy < 0 || iy >= s.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * s.w..(iy as usize + 1) * s.w];
                    for ox in 0..wo {
                        let ix = (ox * s.stride + kx) as isize - s.pad as isize;
                        if ix >= 0 && ix < s.w as isize {
                            dst[ix as usize] += row[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `weight` is `[cout][cin·k·k]`. No bias; every conv feeds a batch norm.
pub fn conv_forward(x: &[f64], batch: usize, s: &ConvShape, weight: &[f64]) -> Vec<f64> {
    let n = s.ho() * s.wo();
    let kk = s.patch();
    let mut y = vec![0.0; batch * s.cout * n];
    let mut cols = vec![0.0; kk * n];
    for b in 0..batch {
        im2col(&x[b * s.cin * s.h * s.w..(b + 1) * s.cin * s.h * s.w], s, &mut cols);
        let yb = &mut y[b * s.cout * n..(b + 1) * s.cout * n];
        for o in 0..s.cout {
            let out = &mut yb[o * n..(o + 1) * n];
            let wrow = &weight[o * kk..(o + 1) * kk];
            for (p, &a) in wrow.iter().enumerate() {
                let col = &cols[p * n..(p + 1) * n];
                for (d, &c) in out.iter_mut().zip(col) {
                    *d += a * c;
                }
            }
        }
    }
    y
}

/// Accumulates the weight gradient into `dweight` and returns the input
/// gradient when `need_dx`.
pub fn conv_backward(
    x: &[f64],
    dy: &[f64],
    batch: usize,
    s: &ConvShape,
    weight: &[f64],
    dweight: &mut [f64],
    need_dx: bool,
) -> Option<Vec<f64>> {
    let n = s.ho() * s.wo();
    let kk = s.patch();
    let plane = s.cin * s.h * s.w;
    let mut cols = vec![0.0; kk * n];
    let mut dcols = vec![0.0; kk * n];
    let mut dx = need_dx.then(|| vec![0.0; batch * plane]);
    for b in 0..batch {
        im2col(&x[b * plane..(b + 1) * plane], s, &mut cols);
        let dyb = &dy[b * s.cout * n..(b + 1) * s.cout * n];
        for o in 0..s.cout {
            let g = &dyb[o * n..(o + 1) * n];
            let dw = &mut dweight[o * kk..(o + 1) * kk];
            for (p, d) in dw.iter_mut().enumerate() {
                let col = &cols[p * n..(p + 1) * n];
                *d += g.iter().zip(col).map(|(a, c)| a * c).sum::<f64>();
            }
        }
        if let Some(dx) = dx.as_mut() {
            dcols.fill(0.0);
            for o in 0..s.cout {
                let g = &dyb[o * n..(o + 1) * n];
                let wrow = &weight[o * kk..(o + 1) * kk];
                for (p, &a) in wrow.iter().enumerate() {
                    let dc = &mut dcols[p * n..(p + 1) * n];
                    for (d, &gv) in dc.iter_mut().zip(g) {
                        *d += a * gv;
                    }
                }
            }
            col2im(&dcols, s, &mut dx[b * plane..(b + 1) * plane]);
        }
    }
    dx
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Saved state of a training-mode batch norm.
#[derive(Debug, Clone)]
pub struct BnCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
}

/// Training mode: normalises with batch statistics and updates the running
/// estimates (`running_var` uses the unbiased batch variance).
#[allow(clippy::too_many_arguments)]
pub fn bn_forward_train(
    x: &[f64],
    batch: usize,
    c: usize,
    hw: usize,
    gamma: &[f64],
    beta: &[f64],
    running_mean: &mut [f64],
    running_var: &mut [f64],
) -> (Vec<f64>, BnCache) {
    let m = (batch * hw) as f64;
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; c];
    for ch in 0..c {
        let mut sum = 0.0;
        for b in 0..batch {
            sum += x[(b * c + ch) * hw..][..hw].iter().sum::<f64>();
        }
        let mean = sum / m;
        let mut sq = 0.0;
        for b in 0..batch {
            sq += x[(b * c + ch) * hw..][..hw].iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
        }
        let var = sq / m;
        let is = 1.0 / (var + BN_EPS).sqrt();
        inv_std[ch] = is;
        for b in 0..batch {
            let base = (b * c + ch) * hw;
            for i in base..base + hw {
                let xh = (x[i] - mean) * is;
                xhat[i] = xh;
                y[i] = gamma[ch] * xh + beta[ch];
            }
        }
        let unbiased = if m > 1.0 { sq / (m - 1.0) } else { var };
        running_mean[ch] = (1.0 - BN_MOMENTUM) * running_mean[ch] + BN_MOMENTUM * mean;
        running_var[ch] = (1.0 - BN_MOMENTUM) * running_var[ch] + BN_MOMENTUM * unbiased;
    }
    (y, BnCache { xhat, inv_std })
}

#[allow(clippy::too_many_arguments)]
pub fn bn_forward_eval(
    x: &[f64],
    batch: usize,
    c: usize,
    hw: usize,
    gamma: &[f64],
    beta: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for ch in 0..c {
        let is = 1.0 / (running_var[ch] + BN_EPS).sqrt();
        let (g, bt, mu) = (gamma[ch], beta[ch], running_mean[ch]);
        for b in 0..batch {
            let base = (b * c + ch) * hw;
            for i in base..base + hw {
                y[i] = g * (x[i] - mu) * is + bt;
            }
        }
    }
    y
}

/// Returns `dx`; accumulates `dgamma`, `dbeta`.
#[allow(clippy::too_many_arguments, clippy::needless_range_loop)]
pub fn bn_backward(
    dy: &[f64],
    cache: &BnCache,
    batch: usize,
    c: usize,
    hw: usize,
    gamma: &[f64],
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) -> Vec<f64> {
    let m = (batch * hw) as f64;
    let mut dx = vec![0.0; dy.len()];
    for ch in 0..c {
        let (mut sdy, mut sdyx) = (0.0, 0.0);
        for b in 0..batch {
            let base = (b * c + ch) * hw;
            for i in base..base + hw {
                sdy += dy[i];
                sdyx += dy[i] * cache.xhat[i];
            }
        }
        dgamma[ch] += sdyx;
        dbeta[ch] += sdy;
        let k = gamma[ch] * cache.inv_std[ch] / m;
        for b in 0..batch {
            let base = (b * c + ch) * hw;
            for i in base..base + hw {
                dx[i] = k * (m * dy[i] - sdy - cache.xhat[i] * sdyx);
            }
        }
    }
    dx
}

pub fn relu(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zeroes `dy` where the ReLU output was not positive.
pub fn relu_backward(dy: &mut [f64], out: &[f64]) {
    for (d, &o) in dy.iter_mut().zip(out) {
        if o <= 0.0 {
            *d = 0.0;
        }
    }
}

/// Non-overlapping `k×k` average pooling; trailing rows/columns that do not
/// fill a window are dropped.
pub fn avgpool_forward(x: &[f64], planes: usize, h: usize, w: usize, k: usize) -> Vec<f64> {
    let (ho, wo) = (h / k, w / k);
    let inv = 1.0 / (k * k) as f64;
    let mut y = vec![0.0; planes * ho * wo];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut y[p * ho * wo..(p + 1) * ho * wo];
        for yy in 0..h.min(ho * k) {
            let row = &src[yy * w..];
            let drow = &mut dst[(yy / k) * wo..(yy / k + 1) * wo];
            for (ox, d) in drow.iter_mut().enumerate() {
                *d += row[ox * k..ox * k + k].iter().sum::<f64>() * inv;
            }
        }
    }
    y
}

pub fn avgpool_backward(dy: &[f64], planes: usize, h: usize, w: usize, k: usize) -> Vec<f64> {
    let (ho, wo) = (h / k, w / k);
    let inv = 1.0 / (k * k) as f64;
    let mut dx = vec![0.0; planes * h * w];
    for p in 0..planes {
        let g = &dy[p * ho * wo..(p + 1) * ho * wo];
        let dst = &mut dx[p * h * w..(p + 1) * h * w];
        for yy in 0..ho * k {
            for xx in 0..wo * k {
                dst[yy * w + xx] = g[(yy / k) * wo + xx / k] * inv;
            }
        }
    }
    dx
}

/// Mean over each `hw` plane.
pub fn gap_forward(x: &[f64], planes: usize, hw: usize) -> Vec<f64> {
    (0..planes)
        .map(|p| x[p * hw..(p + 1) * hw].iter().sum::<f64>() / hw as f64)
        .collect()
}

pub fn gap_backward(dy: &[f64], hw: usize) -> Vec<f64> {
    let mut dx = Vec::with_capacity(dy.len() * hw);
    for &g in dy {
        dx.extend(std::iter::repeat_n(g / hw as f64, hw));
    }
    dx
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `ln Σ exp(z)`.
pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln()
}
