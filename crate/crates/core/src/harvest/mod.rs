//! Candidate image retrieval from image-search providers.

mod blobs;
mod pipeline;
pub mod providers;
mod report;

use std::sync::Mutex;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manifest::{GeoTag, ManifestError, ProviderId};
use crate::querygen::QuerySpec;

pub use blobs::{is_checksum, sha256_hex, BlobStore, StoredBlob};
pub use pipeline::{
    download, harvest, looks_like_image, record_id, DefaultFetcher, Fetch, Fetched, FileFetcher, HarvestOptions,
    HarvestSummary, StaticFetcher, SyntheticFetcher,
};
pub use providers::{build_provider, FixtureProvider, LiveProvider, ProviderConfig, ProvidersFile};
pub use report::{harvest_report, HarvestReport, ReportCell, ReportKey, ReportRow};

/// Results kept per query; later results are discarded.
pub const RESULT_CAP: usize = 100;

#[derive(Debug, Error)]
pub enum HarvestError {
    #[error("{provider}: network failure: {message}")]
    Network { provider: String, message: String },
    #[error("{provider}: quota exceeded")]
    QuotaExceeded { provider: String },
    #[error("{provider}: malformed response: {message}")]
    Malformed { provider: String, message: String },
    #[error("provider {0} is not configured")]
    NotConfigured(String),
    #[error("query text is empty")]
    EmptyQuery,
    #[error("HTTP status {status} for {url}")]
    Http { status: u16, url: String },
    #[error("not-an-image: {url} ({content_type})")]
    NotAnImage { url: String, content_type: String },
    #[error("empty body from {0}")]
    EmptyBody(String),
    #[error("unsupported URL {0}")]
    UnsupportedUrl(String),
    #[error("invalid provider configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
}

impl HarvestError {
    /// Failures worth another attempt.
    pub fn is_transient(&self) -> bool {
        match self {
            HarvestError::Network { .. } => true,
            HarvestError::Http { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

/// One search result as returned by a provider, before capping and ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub url: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geotag: Option<GeoTag>,
}

impl SearchHit {
    pub fn new(url: impl Into<String>) -> Self {
        SearchHit {
            url: url.into(),
            geotag: None,
        }
    }
}

/// One page of provider results. `next` is the offset of the following
/// page, if the provider reports one.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultPage {
    pub hits: Vec<SearchHit>,
    pub next: Option<usize>,
}

pub trait SearchProvider: Send + Sync {
    fn id(&self) -> ProviderId;

    /// Results starting at the 0-based `offset`.
    fn fetch_page(&self, query: &QuerySpec, offset: usize) -> Result<ResultPage, HarvestError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateImage {
    pub url: String,
    pub provider: ProviderId,
    pub query: QuerySpec,
    /// 1-based position in the provider's result list.
    pub rank: u32,
    pub fetched_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bytes_checksum: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geotag: Option<GeoTag>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
    /// Fraction of each delay randomised away, in `[0, 1]`.
    pub jitter: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(8),
            jitter: 0.5,
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        RetryPolicy {
            attempts: 1,
            ..Default::default()
        }
    }

    /// Delay before retry number `retry` (1-based): `base·2^(retry-1)`
    /// capped at `max_delay`, then shrunk by up to `jitter` of itself.
    pub fn delay<R: Rng + ?Sized>(&self, retry: u32, rng: &mut R) -> Duration {
        let exp = self.base_delay.saturating_mul(1u32 << (retry.saturating_sub(1)).min(20));
        let capped = exp.min(self.max_delay);
        let j = self.jitter.clamp(0.0, 1.0);
        if j == 0.0 {
            return capped;
        }
        capped.mul_f64(1.0 - j * rng.random::<f64>())
    }

    /// Runs `op` until it succeeds, fails permanently, or attempts run out.
    pub fn run<T>(
        &self,
        mut op: impl FnMut(u32) -> Result<T, HarvestError>,
        sleep: &mut dyn FnMut(Duration),
    ) -> Result<T, HarvestError> {
        let mut rng = jitter_rng();
        let attempts = self.attempts.max(1);
        let mut attempt = 1;
        loop {
            match op(attempt) {
                Ok(v) => return Ok(v),
                Err(e) if e.is_transient() && attempt < attempts => {
                    let d = self.delay(attempt, &mut rng);
                    log::warn!("attempt {attempt} failed ({e}); retrying in {d:?}");
                    sleep(d);
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }

    pub fn run_blocking<T>(&self, op: impl FnMut(u32) -> Result<T, HarvestError>) -> Result<T, HarvestError> {
        self.run(op, &mut std::thread::sleep)
    }
}

/// Per-call jitter source. Seeded from std's hasher keys so concurrent
/// clients do not back off in lockstep.
fn jitter_rng() -> ChaCha8Rng {
    use std::hash::{BuildHasher, Hasher};
    ChaCha8Rng::seed_from_u64(std::collections::hash_map::RandomState::new().build_hasher().finish())
}

/// Token bucket: `capacity` burst, refilled at `rate` tokens per second.
#[derive(Debug)]
pub struct TokenBucket {
    capacity: f64,
    rate: f64,
    state: Mutex<(f64, Instant)>,
}

impl TokenBucket {
    pub fn new(rate_per_sec: f64, capacity: f64) -> Self {
        let capacity = capacity.max(1.0);
        TokenBucket {
            capacity,
            rate: rate_per_sec,
            state: Mutex::new((capacity, Instant::now())),
        }
    }

    /// Takes a token at time `now`, or returns how long until one is free.
    pub fn try_acquire_at(&self, now: Instant) -> Result<(), Duration> {
        let mut s = self.state.lock().unwrap_or_else(|e| e.into_inner());
        let elapsed = now.saturating_duration_since(s.1).as_secs_f64();
        s.0 = (s.0 + elapsed * self.rate).min(self.capacity);
        s.1 = s.1.max(now);
        if s.0 >= 1.0 {
            s.0 -= 1.0;
            Ok(())
        } else if self.rate <= 0.0 {
            Err(Duration::MAX)
        } else {
            Err(Duration::from_secs_f64((1.0 - s.0) / self.rate))
        }
    }

    pub fn acquire(&self) {
        loop {
            match self.try_acquire_at(Instant::now()) {
                Ok(()) => return,
                Err(wait) => std::thread::sleep(wait.min(Duration::from_secs(60))),
            }
        }
    }
}

/// Pages through `provider` until [`RESULT_CAP`] results, an empty page or
/// the last page, and ranks what was kept 1, 2, ...
pub fn run_query(
    provider: &dyn SearchProvider,
    query: &QuerySpec,
    retry: &RetryPolicy,
    limiter: Option<&TokenBucket>,
) -> Result<Vec<CandidateImage>, HarvestError> {
    if query.text.trim().is_empty() {
        return Err(HarvestError::EmptyQuery);
    }
    let mut hits: Vec<SearchHit> = Vec::new();
    let mut offset = 0usize;
    while hits.len() < RESULT_CAP {
        let page = retry.run_blocking(|_| {
            if let Some(l) = limiter {
                l.acquire();
            }
            provider.fetch_page(query, offset)
        })?;
        if page.hits.is_empty() {
            break;
        }
        offset += page.hits.len();
        hits.extend(page.hits);
        match page.next {
            Some(n) if n >= offset => offset = n,
            Some(_) => {
                return Err(HarvestError::Malformed {
                    provider: provider.id().to_string(),
                    message: "pagination does not advance".into(),
                })
            }
            None => break,
        }
    }
    hits.truncate(RESULT_CAP);
    let now = Utc::now();
    Ok(hits
        .into_iter()
        .enumerate()
        .map(|(i, h)| CandidateImage {
            url: h.url,
            provider: provider.id(),
            query: query.clone(),
            rank: i as u32 + 1,
            fetched_at: now,
            bytes_checksum: None,
            geotag: h.geotag,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::querygen::{Language, QueryOrigin};
    use crate::taxonomy::ClassId;
    use std::cell::Cell;

    pub(crate) fn query(text: &str) -> QuerySpec {
        QuerySpec {
            text: text.into(),
            language: Language::En,
            class_id: ClassId::Fire,
            origin: QueryOrigin {
                context: "road".into(),
                incident: "fire".into(),
            },
        }
    }

    #[test]
    fn cap_at_one_hundred() {
        let p = FixtureProvider::synthetic(ProviderId::LocalFixture, 250);
        let got = run_query(&p, &query("road fire"), &RetryPolicy::none(), None).unwrap();
        assert_eq!(got.len(), 100);
        assert_eq!(got.first().unwrap().rank, 1);
        assert_eq!(got.last().unwrap().rank, 100);
        assert!(got.windows(2).all(|w| w[0].rank + 1 == w[1].rank));
        assert!(got.iter().all(|c| c.provider == ProviderId::LocalFixture && c.query.text == "road fire"));
    }

    #[test]
    fn passthrough_and_empty() {
        let p = FixtureProvider::synthetic(ProviderId::LocalFixture, 37);
        assert_eq!(run_query(&p, &query("x"), &RetryPolicy::none(), None).unwrap().len(), 37);
        let p = FixtureProvider::synthetic(ProviderId::LocalFixture, 0);
        assert!(run_query(&p, &query("x"), &RetryPolicy::none(), None).unwrap().is_empty());
    }

    #[test]
    fn rank_order_follows_provider() {
        let p = FixtureProvider::synthetic(ProviderId::Bing, 12).with_page_size(5);
        let got = run_query(&p, &query("road fire"), &RetryPolicy::none(), None).unwrap();
        let urls: Vec<_> = got.iter().map(|c| c.url.clone()).collect();
        let want: Vec<_> = p.results_for("road fire").iter().map(|h| h.url.clone()).collect();
        assert_eq!(urls, want);
    }

    #[test]
    fn empty_query_rejected() {
        let p = FixtureProvider::synthetic(ProviderId::LocalFixture, 3);
        assert!(matches!(
            run_query(&p, &query("  "), &RetryPolicy::none(), None),
            Err(HarvestError::EmptyQuery)
        ));
    }

    #[test]
    fn retry_recovers_from_transient_failures() {
        let calls = Cell::new(0);
        let mut slept = Vec::new();
        let policy = RetryPolicy {
            jitter: 0.0,
            ..Default::default()
        };
        let out = policy.run(
            |_| {
                calls.set(calls.get() + 1);
                if calls.get() < 3 {
                    Err(HarvestError::Network {
                        provider: "p".into(),
                        message: "reset".into(),
                    })
                } else {
                    Ok(7)
                }
            },
            &mut |d| slept.push(d),
        );
        assert_eq!(out.unwrap(), 7);
        assert_eq!(slept, vec![Duration::from_millis(500), Duration::from_millis(1000)]);
    }

    #[test]
    fn retry_gives_up_after_three() {
        let calls = Cell::new(0);
        let out: Result<(), _> = RetryPolicy::default().run(
            |_| {
                calls.set(calls.get() + 1);
                Err(HarvestError::Http {
                    status: 503,
                    url: "u".into(),
                })
            },
            &mut |_| {},
        );
        assert!(matches!(out, Err(HarvestError::Http { status: 503, .. })));
        assert_eq!(calls.get(), 3);
    }

    #[test]
    fn permanent_errors_not_retried() {
        let calls = Cell::new(0);
        let out: Result<(), _> = RetryPolicy::default().run(
            |_| {
                calls.set(calls.get() + 1);
                Err(HarvestError::QuotaExceeded { provider: "g".into() })
            },
            &mut |_| {},
        );
        assert!(out.is_err());
        assert_eq!(calls.get(), 1);
    }

    #[test]
    fn jittered_delay_bounds() {
        let policy = RetryPolicy::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for retry in 1..6 {
            let full = policy.base_delay.saturating_mul(1 << (retry - 1)).min(policy.max_delay);
            for _ in 0..20 {
                let d = policy.delay(retry, &mut rng);
                assert!(d <= full && d >= full.mul_f64(0.5));
            }
        }
    }

    #[test]
    fn token_bucket_paces() {
        let b = TokenBucket::new(2.0, 2.0);
        let t0 = Instant::now();
        assert!(b.try_acquire_at(t0).is_ok());
        assert!(b.try_acquire_at(t0).is_ok());
        let wait = b.try_acquire_at(t0).unwrap_err();
        assert!((wait.as_secs_f64() - 0.5).abs() < 1e-6);
        assert!(b.try_acquire_at(t0 + Duration::from_millis(500)).is_ok());
        assert!(b.try_acquire_at(t0 + Duration::from_millis(500)).is_err());
    }
}
