//! Model diagnostics: class activation maps and t-SNE projections of the
//! FC-input embeddings.

mod cam;
mod tsne;

pub use cam::{
    cam, cam_from_features, colormap, map_png, min_max, overlay, upsample_bilinear, weighted_sum, ActivationMap,
};
pub use tsne::{
    calibrate, gradient, kl_divergence, silhouette, squared_distances, symmetrize, tsne, tsne_points,
    write_points_csv, EmbeddingSet, TsneConfig, TsneResult, ENTROPY_TOL,
};

use thiserror::Error;

use crate::harvest::BlobStore;
use crate::manifest::{Manifest, Split};
use crate::nn::ModelError;
use crate::taxonomy::ClassId;
use crate::trainer::{load_split, Checkpoint};

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("perplexity-infeasible: {n} points cannot support perplexity {perplexity} (need n - 1 > 3 * perplexity)")]
    PerplexityInfeasible { n: usize, perplexity: f64 },
    #[error("non-finite embedding values")]
    NonFinite,
    #[error("t-SNE diverged at iteration {iteration}")]
    Diverged { iteration: usize },
    #[error("row {row}: entropy {entropy} bits did not reach {target}")]
    Calibration { row: usize, entropy: f64, target: f64 },
    #[error("invalid t-SNE configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("no images could be loaded for the embedding set")]
    NoImages,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// FC-input embeddings and predictions for the accepted records of `split`
/// (all accepted records when `None`). Unloadable records are returned
/// separately.
pub fn collect_embeddings(
    checkpoint: &Checkpoint,
    manifest: &Manifest,
    blobs: &BlobStore,
    split: Option<Split>,
) -> Result<(EmbeddingSet, Vec<(String, String)>), ExplainError> {
    let (samples, missing) = load_split(manifest, blobs, split, checkpoint.model.arch.input_size);
    if samples.is_empty() {
        return Err(ExplainError::NoImages);
    }
    let mut set = EmbeddingSet {
        ids: Vec::with_capacity(samples.len()),
        points: Vec::with_capacity(samples.len()),
        truths: Vec::with_capacity(samples.len()),
        predicted: Vec::with_capacity(samples.len()),
    };
    for s in samples {
        let p = checkpoint.model.predict(&checkpoint.norm.normalize_chw(&s.image))?;
        set.truths.push(ClassId::from_index(s.label).ok_or(ModelError::Label(s.label))?);
        set.predicted.push(p.class);
        set.points.push(p.embedding);
        set.ids.push(s.id);
    }
    Ok((set, missing))
}
