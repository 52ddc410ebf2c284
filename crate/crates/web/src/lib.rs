//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every export takes plain numbers or a JSON string and returns a JSON
//! string, so the page needs no bundler or generated typings beyond the
//! `wasm-bindgen --target web` output.

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use roadwatch::evaluate::{metrics, ConfusionMatrix};
use roadwatch::explain::{silhouette, tsne_points, TsneConfig};
use roadwatch::preprocess::CropRule;
use roadwatch::reference;
use roadwatch::synthetic::gaussian_clusters;
use roadwatch::ClassId;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Projects `k` Gaussian clusters of `per_cluster` points in `dim`
/// dimensions. Returns `{coords, labels, kl, silhouette}`. Small sets need
/// a learning rate well below the 500 used for full embedding sets.
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn tsne_clusters(
    k: usize,
    per_cluster: usize,
    dim: usize,
    separation: f64,
    perplexity: f64,
    learning_rate: f64,
    iterations: usize,
    seed: u64,
) -> Result<String, String> {
    if k == 0 || per_cluster == 0 || dim == 0 {
        return Err("clusters, points and dimensions must be positive".into());
    }
    if k * per_cluster > 1500 {
        return Err("at most 1500 points in the browser".into());
    }
    let (points, labels) = gaussian_clusters(k, per_cluster, dim, separation, seed);
    let config = TsneConfig {
        perplexity,
        learning_rate,
        iterations,
        seed,
        ..TsneConfig::default()
    };
    let out = tsne_points(&points, &config).map_err(err)?;
    Ok(json!({
        "coords": out.coords,
        "labels": labels,
        "kl": out.kl_history,
        "silhouette": silhouette(&out.coords, &labels),
    })
    .to_string())
}

/// Class names in matrix order.
#[wasm_bindgen]
pub fn class_names() -> String {
    json!(ClassId::ALL.iter().map(|c| c.as_str()).collect::<Vec<_>>()).to_string()
}

/// The published full test-set confusion matrix, rows = true class.
#[wasm_bindgen]
pub fn reference_matrix() -> String {
    json!(reference::FULL_TEST_CONFUSION).to_string()
}

/// Metrics for a 9×9 count matrix given as JSON rows in [`class_names`]
/// order. Returns `{accuracy, macro_f1, n, per_class: [{class, precision,
/// recall, f1, support}]}`.
#[wasm_bindgen]
pub fn matrix_metrics(rows_json: &str) -> Result<String, String> {
    let rows: Vec<Vec<u64>> = serde_json::from_str(rows_json).map_err(err)?;
    let m = ConfusionMatrix::from_rows(ClassId::ALL.to_vec(), rows).map_err(err)?;
    let r = metrics(&m).map_err(err)?;
    let per_class: Vec<Value> = r
        .per_class
        .iter()
        .map(|c| {
            json!({
                "class": c.class.as_str(),
                "precision": c.precision,
                "recall": c.recall,
                "f1": c.f1,
                "support": c.support,
                "undefined": c.undefined,
            })
        })
        .collect();
    Ok(json!({
        "n": r.n,
        "accuracy": r.accuracy,
        "macro_f1": r.macro_f1,
        "per_class": per_class,
    })
    .to_string())
}

/// Ego-vehicle crop window for a `width`×`height` frame:
/// `{x, y, width, height}`.
#[wasm_bindgen]
pub fn crop_window(width: usize, height: usize) -> Result<String, String> {
    let (x, y, w, h) = CropRule::default().window(width, height).map_err(err)?;
    Ok(json!({"x": x, "y": y, "width": w, "height": h}).to_string())
}
