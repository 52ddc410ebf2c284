use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::blobs::{sha256_hex, BlobStore, StoredBlob};
use super::providers::ProviderConfig;
use super::{run_query, CandidateImage, HarvestError, RetryPolicy, SearchProvider, TokenBucket};
use crate::manifest::{ImageRecord, ManifestStore};
use crate::querygen::QuerySpec;

/// Body and declared content type of a fetched URL.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fetched {
    pub content_type: Option<String>,
    pub bytes: Vec<u8>,
}

pub trait Fetch: Send + Sync {
    fn fetch(&self, url: &str) -> Result<Fetched, HarvestError>;
}

/// Serves a fixed URL → response map.
#[derive(Debug, Clone, Default)]
pub struct StaticFetcher {
    pub responses: BTreeMap<String, Fetched>,
}

impl StaticFetcher {
    pub fn with(mut self, url: impl Into<String>, content_type: Option<&str>, bytes: Vec<u8>) -> Self {
        self.responses.insert(
            url.into(),
            Fetched {
                content_type: content_type.map(str::to_string),
                bytes,
            },
        );
        self
    }
}

impl Fetch for StaticFetcher {
    fn fetch(&self, url: &str) -> Result<Fetched, HarvestError> {
        self.responses.get(url).cloned().ok_or_else(|| HarvestError::Http {
            status: 404,
            url: url.to_string(),
        })
    }
}

/// Reads `file://` URLs and bare paths.
#[derive(Debug, Clone, Default)]
pub struct FileFetcher;

impl Fetch for FileFetcher {
    fn fetch(&self, url: &str) -> Result<Fetched, HarvestError> {
        let path = PathBuf::from(url.strip_prefix("file://").unwrap_or(url));
        match std::fs::read(&path) {
            Ok(bytes) => Ok(Fetched {
                content_type: None,
                bytes,
            }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(HarvestError::Http {
                status: 404,
                url: url.to_string(),
            }),
            Err(e) => Err(e.into()),
        }
    }
}

/// Renders a small deterministic PNG for each `fixture://` URL, so fixture
/// harvests produce decodable, mostly distinct images.
#[derive(Debug, Clone, Default)]
pub struct SyntheticFetcher;

impl Fetch for SyntheticFetcher {
    fn fetch(&self, url: &str) -> Result<Fetched, HarvestError> {
        if !url.starts_with("fixture://") {
            return Err(HarvestError::UnsupportedUrl(url.to_string()));
        }
        let d = Sha256::digest(url.as_bytes());
        let f = |i: usize| f32::from(d[i]) / 255.0;
        let (a, b, c, phase) = (1.0 + 6.0 * f(0), 1.0 + 6.0 * f(1), 1.0 + 6.0 * f(2), std::f32::consts::TAU * f(3));
        let img = image::RgbImage::from_fn(64, 48, |x, y| {
            let (u, v) = (x as f32 / 64.0, y as f32 / 48.0);
            let ch = |k: f32, base: usize| {
                let s = ((u * k + v * (7.0 - k) + phase + base as f32).sin() * 0.5 + 0.5) * 255.0;
                s as u8
            };
            image::Rgb([ch(a, 0), ch(b, 1), ch(c, 2)])
        });
        let mut out = std::io::Cursor::new(Vec::new());
        img.write_to(&mut out, image::ImageFormat::Png)
            .map_err(|e| HarvestError::Io(std::io::Error::other(e)))?;
        Ok(Fetched {
            content_type: Some("image/png".into()),
            bytes: out.into_inner(),
        })
    }
}

#[cfg(feature = "net")]
#[derive(Debug, Clone)]
pub struct HttpFetcher {
    agent: ureq::Agent,
}

#[cfg(feature = "net")]
impl Default for HttpFetcher {
    fn default() -> Self {
        HttpFetcher {
            agent: super::providers::http_agent(),
        }
    }
}

#[cfg(feature = "net")]
impl Fetch for HttpFetcher {
    fn fetch(&self, url: &str) -> Result<Fetched, HarvestError> {
        let net = |e: ureq::Error| HarvestError::Network {
            provider: "download".into(),
            message: e.to_string(),
        };
        let mut resp = self.agent.get(url).call().map_err(net)?;
        let status = resp.status().as_u16();
        if status >= 400 {
            return Err(HarvestError::Http {
                status,
                url: url.to_string(),
            });
        }
        let content_type = resp
            .headers()
            .get("content-type")
            .and_then(|v| v.to_str().ok())
            .map(str::to_string);
        let bytes = resp
            .body_mut()
            .with_config()
            .limit(50 * 1024 * 1024)
            .read_to_vec()
            .map_err(net)?;
        Ok(Fetched { content_type, bytes })
    }
}

/// Dispatches on URL scheme: `fixture://`, `file://` or a path, and
/// `http(s)://` when built with network support.
#[derive(Debug, Clone, Default)]
pub struct DefaultFetcher {
    #[cfg(feature = "net")]
    http: HttpFetcher,
}

impl Fetch for DefaultFetcher {
    fn fetch(&self, url: &str) -> Result<Fetched, HarvestError> {
        if url.starts_with("fixture://") {
            SyntheticFetcher.fetch(url)
        } else if url.starts_with("http://") || url.starts_with("https://") {
            #[cfg(feature = "net")]
            {
                self.http.fetch(url)
            }
            #[cfg(not(feature = "net"))]
            {
                Err(HarvestError::UnsupportedUrl(url.to_string()))
            }
        } else {
            FileFetcher.fetch(url)
        }
    }
}

pub fn looks_like_image(bytes: &[u8]) -> bool {
    image::guess_format(bytes).is_ok()
}

/// Fetches the candidate's URL and stores the body in `blobs`.
pub fn download(
    fetcher: &dyn Fetch,
    blobs: &BlobStore,
    candidate: &CandidateImage,
    retry: &RetryPolicy,
) -> Result<StoredBlob, HarvestError> {
    let url = candidate.url.as_str();
    let fetched = retry.run_blocking(|_| fetcher.fetch(url))?;
    if fetched.bytes.is_empty() {
        return Err(HarvestError::EmptyBody(url.to_string()));
    }
    let declared_ok = fetched
        .content_type
        .as_deref()
        .map(|ct| {
            let ct = ct.trim().to_ascii_lowercase();
            ct.starts_with("image/") || ct.starts_with("application/octet-stream")
        })
        .unwrap_or(true);
    if !declared_ok || !looks_like_image(&fetched.bytes) {
        return Err(HarvestError::NotAnImage {
            url: url.to_string(),
            content_type: fetched.content_type.unwrap_or_else(|| "unknown".into()),
        });
    }
    Ok(blobs.put(&fetched.bytes)?)
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct HarvestOptions {
    pub retry: Option<RetryPolicy>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HarvestSummary {
    pub queries_run: usize,
    pub candidates: usize,
    pub records_added: usize,
    pub already_present: usize,
    pub new_blobs: usize,
    /// (query or URL, error) pairs.
    pub failures: Vec<(String, String)>,
}

pub fn record_id(candidate: &CandidateImage) -> String {
    let key = format!(
        "{}|{}|{}",
        candidate.query.language.as_str(),
        candidate.query.text,
        candidate.url
    );
    format!("{}-{}", candidate.provider, &sha256_hex(key.as_bytes())[..16])
}

fn downloads_parallel(
    fetcher: &dyn Fetch,
    blobs: &BlobStore,
    candidates: &[CandidateImage],
    retry: &RetryPolicy,
    parallelism: usize,
) -> Vec<Result<StoredBlob, HarvestError>> {
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<StoredBlob, HarvestError>>>> =
        candidates.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..parallelism.clamp(1, candidates.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(c) = candidates.get(i) else { break };
                let r = download(fetcher, blobs, c, retry);
                *slots[i].lock().unwrap_or_else(|e| e.into_inner()) = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| {
            m.into_inner()
                .unwrap_or_else(|e| e.into_inner())
                .expect("every slot filled")
        })
        .collect()
}

/// Runs every query against every provider, downloads the results and adds
/// a pending record per stored image. Records already in the manifest are
/// left alone, so re-running is safe.
pub fn harvest(
    queries: &[QuerySpec],
    providers: &[(Box<dyn SearchProvider>, ProviderConfig)],
    fetcher: &dyn Fetch,
    blobs: &BlobStore,
    store: &ManifestStore,
    options: &HarvestOptions,
) -> Result<HarvestSummary, HarvestError> {
    let retry = options.retry.unwrap_or_default();
    let mut summary = HarvestSummary::default();
    for (provider, config) in providers {
        let limiter = TokenBucket::new(config.rate_limit, config.burst);
        for query in queries {
            summary.queries_run += 1;
            let candidates = match run_query(provider.as_ref(), query, &retry, Some(&limiter)) {
                Ok(c) => c,
                Err(e) => {
                    log::warn!("{} / {:?}: {e}", provider.id(), query.text);
                    summary.failures.push((query.text.clone(), e.to_string()));
                    continue;
                }
            };
            summary.candidates += candidates.len();
            let total = candidates.len();
            let fresh: Vec<CandidateImage> = store.read(|m| {
                candidates
                    .into_iter()
                    .filter(|c| m.get(&record_id(c)).is_none())
                    .collect()
            });
            let skipped = total - fresh.len();
            let results = downloads_parallel(fetcher, blobs, &fresh, &retry, config.parallelism);
            let mut records = Vec::new();
            for (c, r) in fresh.iter().zip(results) {
                match r {
                    Ok(blob) => {
                        summary.new_blobs += usize::from(blob.created);
                        let mut rec = ImageRecord::new(record_id(c), c.provider, c.query.class_id);
                        rec.blob_checksum = Some(blob.checksum);
                        rec.query = Some(c.query.clone());
                        rec.rank = Some(c.rank);
                        rec.url = Some(c.url.clone());
                        rec.geotag = c.geotag.clone();
                        rec.fetched_at = Some(c.fetched_at);
                        records.push(rec);
                    }
                    Err(e) => summary.failures.push((c.url.clone(), e.to_string())),
                }
            }
            let (added, present) = store.transact(|m| -> Result<(usize, usize), HarvestError> {
                let (mut added, mut present) = (0, 0);
                for rec in records {
                    if m.get(&rec.id).is_some() {
                        present += 1;
                    } else {
                        m.insert(rec)?;
                        added += 1;
                    }
                }
                Ok((added, present))
            })?;
            summary.records_added += added;
            summary.already_present += present + skipped;
        }
    }
    Ok(summary)
}
