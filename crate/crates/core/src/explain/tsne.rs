use std::io::{self, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::taxonomy::ClassId;

use super::ExplainError;

/// Entropy tolerance for the bandwidth search, in bits.
pub const ENTROPY_TOL: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub learning_rate: f64,
    pub iterations: usize,
    pub early_exaggeration: f64,
    /// Iterations run with exaggerated affinities.
    pub exaggeration_iters: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    /// Iteration at which momentum switches to `final_momentum`.
    pub momentum_switch: usize,
    pub min_gain: f64,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 50.0,
            learning_rate: 500.0,
            iterations: 1000,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch: 250,
            min_gain: 0.01,
            seed: 0,
        }
    }
}

impl TsneConfig {
    pub fn validate(&self, n: usize) -> Result<(), ExplainError> {
        if !(self.perplexity > 1.0) || !self.perplexity.is_finite() {
            return Err(ExplainError::Config(format!("perplexity must exceed 1, got {}", self.perplexity)));
        }
        if self.iterations == 0 || !(self.learning_rate > 0.0) {
            return Err(ExplainError::Config("iterations and learning rate must be positive".into()));
        }
        if !(self.early_exaggeration >= 1.0) || !(self.min_gain > 0.0) {
            return Err(ExplainError::Config("exaggeration must be at least 1 and min gain positive".into()));
        }
        if n < 2 || (n as f64 - 1.0) <= 3.0 * self.perplexity {
            return Err(ExplainError::PerplexityInfeasible {
                n,
                perplexity: self.perplexity,
            });
        }
        Ok(())
    }
}

/// Vectors to project, with per-point labels for plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSet {
    pub ids: Vec<String>,
    pub points: Vec<Vec<f64>>,
    pub truths: Vec<ClassId>,
    pub predicted: Vec<ClassId>,
}

impl EmbeddingSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn validate(&self) -> Result<usize, ExplainError> {
        let n = self.points.len();
        if self.ids.len() != n || self.truths.len() != n || self.predicted.len() != n {
            return Err(ExplainError::Shape("ids, points and labels differ in length".into()));
        }
        let d = self.points.first().map_or(0, Vec::len);
        if d == 0 || self.points.iter().any(|p| p.len() != d) {
            return Err(ExplainError::Shape("points must share a positive dimension".into()));
        }
        if self.points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(ExplainError::NonFinite);
        }
        Ok(d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsneResult {
    pub coords: Vec<[f64; 2]>,
    /// KL(P‖Q) after every iteration, against the unexaggerated P.
    pub kl_history: Vec<f64>,
    /// Calibrated entropy of each conditional row, in bits.
    pub entropies: Vec<f64>,
}

pub fn squared_distances(points: &[Vec<f64>]) -> Vec<f64> {
    let n = points.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v: f64 = points[i].iter().zip(&points[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

/// One conditional row `p_{j|i}` for precision `beta` and its entropy in bits.
fn row_at(dist: &[f64], i: usize, beta: f64, out: &mut [f64]) -> f64 {
    // Shift by the nearest neighbour distance so the largest term is 1.
    let dmin = dist
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != i)
        .map(|(_, v)| *v)
        .fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    for (j, (o, &d)) in out.iter_mut().zip(dist).enumerate() {
        *o = if j == i { 0.0 } else { (-(d - dmin) * beta).exp() };
        sum += *o;
    }
    let mut h = 0.0;
    for (j, o) in out.iter_mut().enumerate() {
        *o /= sum;
        if j != i && *o > 0.0 {
            h -= *o * o.log2();
        }
    }
    h
}

/// Conditional affinities with each row's entropy bisected to
/// `log2(perplexity)`. Returns the row-major `n×n` matrix and the entropies.
pub fn calibrate(dist: &[f64], n: usize, perplexity: f64) -> Result<(Vec<f64>, Vec<f64>), ExplainError> {
    let target = perplexity.log2();
    let threads = std::thread::available_parallelism().map_or(1, |t| t.get()).min(n.max(1));
    let per = n.div_ceil(threads);
    let mut p = vec![0.0; n * n];
    let mut entropies = vec![0.0; n];
    let work = |t: usize, rows: &mut [f64], hs: &mut [f64]| -> Result<(), ExplainError> {
        for (k, (row, h)) in rows.chunks_mut(n).zip(hs.iter_mut()).enumerate() {
            let i = t * per + k;
            *h = calibrate_row(&dist[i * n..(i + 1) * n], i, target, row)?;
        }
        Ok(())
    };
    // No spawning on a single core (and on targets without threads).
    if threads <= 1 {
        work(0, &mut p, &mut entropies)?;
        return Ok((p, entropies));
    }
    std::thread::scope(|scope| {
        let handles: Vec<_> = p
            .chunks_mut(per * n)
            .zip(entropies.chunks_mut(per))
            .enumerate()
            .map(|(t, (rows, hs))| scope.spawn(move || work(t, rows, hs)))
            .collect();
        handles
            .into_iter()
            .try_for_each(|h| h.join().expect("calibration thread"))
    })?;
    Ok((p, entropies))
}

fn calibrate_row(dist: &[f64], i: usize, target: f64, row: &mut [f64]) -> Result<f64, ExplainError> {
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    let mut beta = 1.0;
    // Scale the starting precision to the data.
    let mean: f64 = dist.iter().sum::<f64>() / (dist.len() - 1).max(1) as f64;
    if mean > 0.0 {
        beta = 1.0 / mean;
    }
    let mut h = row_at(dist, i, beta, row);
    for _ in 0..500 {
        if (h - target).abs() < ENTROPY_TOL {
            return Ok(h);
        }
        if h > target {
            lo = beta;
            beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = (beta + lo) / 2.0;
        }
        h = row_at(dist, i, beta, row);
    }
    if (h - target).abs() < ENTROPY_TOL {
        Ok(h)
    } else {
        Err(ExplainError::Calibration { row: i, entropy: h, target })
    }
}

/// `(P + Pᵀ) / 2n`, floored at a tiny positive value.
pub fn symmetrize(cond: &[f64], n: usize) -> Vec<f64> {
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                p[i * n + j] = ((cond[i * n + j] + cond[j * n + i]) / (2.0 * n as f64)).max(1e-300);
            }
        }
    }
    p
}

/// KL(P‖Q) for 2-D coordinates under the Student-t kernel.
pub fn kl_divergence(p: &[f64], y: &[[f64; 2]]) -> f64 {
    let n = y.len();
    let mut z = 0.0;
    let mut num = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let dx = y[i][0] - y[j][0];
                let dy = y[i][1] - y[j][1];
                num[i * n + j] = 1.0 / (1.0 + dx * dx + dy * dy);
                z += num[i * n + j];
            }
        }
    }
    let mut kl = 0.0;
    for k in 0..n * n {
        if p[k] > 0.0 && num[k] > 0.0 {
            kl += p[k] * (p[k] / (num[k] / z)).ln();
        }
    }
    kl
}

/// Gradient of KL with affinities scaled by `exaggeration`; also returns
/// the KL of the unscaled objective at `y`.
pub fn gradient(p: &[f64], y: &[[f64; 2]], exaggeration: f64) -> (Vec<[f64; 2]>, f64) {
    let n = y.len();
    let mut num = vec![0.0; n * n];
    let mut z = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let dx = y[i][0] - y[j][0];
            let dy = y[i][1] - y[j][1];
            let v = 1.0 / (1.0 + dx * dx + dy * dy);
            num[i * n + j] = v;
            num[j * n + i] = v;
            z += 2.0 * v;
        }
    }
    let mut grad = vec![[0.0; 2]; n];
    let mut kl = 0.0;
    for i in 0..n {
        let (mut gx, mut gy) = (0.0, 0.0);
        for j in 0..n {
            if i == j {
                continue;
            }
            let k = i * n + j;
            let q = num[k] / z;
            kl += p[k] * (p[k] / q).ln();
            let m = (exaggeration * p[k] - q) * num[k];
            gx += m * (y[i][0] - y[j][0]);
            gy += m * (y[i][1] - y[j][1]);
        }
        grad[i] = [4.0 * gx, 4.0 * gy];
    }
    (grad, kl)
}

/// Exact t-SNE to two dimensions.
pub fn tsne(set: &EmbeddingSet, config: &TsneConfig) -> Result<TsneResult, ExplainError> {
    set.validate()?;
    tsne_points(&set.points, config)
}

pub fn tsne_points(points: &[Vec<f64>], config: &TsneConfig) -> Result<TsneResult, ExplainError> {
    let n = points.len();
    config.validate(n)?;
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(ExplainError::NonFinite);
    }
    let dist = squared_distances(points);
    let (cond, entropies) = calibrate(&dist, n, config.perplexity)?;
    let p = symmetrize(&cond, n);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let init = Normal::new(0.0, 1e-4).expect("valid std");
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [init.sample(&mut rng), init.sample(&mut rng)]).collect();
    let mut update = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut kl_history = Vec::with_capacity(config.iterations);

    for it in 0..config.iterations {
        let exaggeration = if it < config.exaggeration_iters { config.early_exaggeration } else { 1.0 };
        let momentum = if it < config.momentum_switch { config.initial_momentum } else { config.final_momentum };
        let (grad, _) = gradient(&p, &y, exaggeration);
        for i in 0..n {
            for d in 0..2 {
                let g = grad[i][d];
                gains[i][d] = if (g > 0.0) != (update[i][d] > 0.0) {
                    gains[i][d] + 0.2
                } else {
                    (gains[i][d] * 0.8).max(config.min_gain)
                };
                update[i][d] = momentum * update[i][d] - config.learning_rate * gains[i][d] * g;
                y[i][d] += update[i][d];
            }
        }
        let mean = y.iter().fold([0.0; 2], |a, v| [a[0] + v[0], a[1] + v[1]]);
        for v in &mut y {
            v[0] -= mean[0] / n as f64;
            v[1] -= mean[1] / n as f64;
        }
        let kl = kl_divergence(&p, &y);
        if !kl.is_finite() || y.iter().flatten().any(|v| !v.is_finite()) {
            return Err(ExplainError::Diverged { iteration: it });
        }
        kl_history.push(kl);
    }
    Ok(TsneResult {
        coords: y,
        kl_history,
        entropies,
    })
}

/// Mean silhouette coefficient of `labels` over 2-D points.
pub fn silhouette(coords: &[[f64; 2]], labels: &[usize]) -> f64 {
    let n = coords.len();
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut total = 0.0;
    for i in 0..n {
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for j in 0..n {
            if i != j {
                let d = ((coords[i][0] - coords[j][0]).powi(2) + (coords[i][1] - coords[j][1]).powi(2)).sqrt();
                sums[labels[j]] += d;
                counts[labels[j]] += 1;
            }
        }
        let own = labels[i];
        if counts[own] == 0 {
            continue;
        }
        let a = sums[own] / counts[own] as f64;
        let b = (0..k)
            .filter(|&c| c != own && counts[c] > 0)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        if b.is_finite() {
            total += (b - a) / a.max(b);
        }
    }
    total / n as f64
}

/// `id,x,y,true_label,predicted_label` rows.
pub fn write_points_csv<W: Write>(mut out: W, set: &EmbeddingSet, coords: &[[f64; 2]]) -> io::Result<()> {
    writeln!(out, "id,x,y,true_label,predicted_label")?;
    for (i, c) in coords.iter().enumerate() {
        writeln!(
            out,
            "{},{},{},{},{}",
            set.ids[i],
            c[0],
            c[1],
            set.truths[i].as_str(),
            set.predicted[i].as_str()
        )?;
    }
    Ok(())
}
