//! Provider configuration, the local fixture provider, and thin adapters
//! for live image-search APIs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{HarvestError, ResultPage, SearchHit, SearchProvider};
use crate::manifest::{GeoTag, ProviderId};
use crate::querygen::QuerySpec;

fn default_rate() -> f64 {
    1.0
}
fn default_burst() -> f64 {
    1.0
}
fn default_page_size() -> usize {
    10
}
fn default_parallelism() -> usize {
    4
}

/// One entry of the provider configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub provider: ProviderId,
    #[serde(default)]
    pub endpoint: Option<String>,
    /// Name of the environment variable holding the API key.
    #[serde(default)]
    pub key_env: Option<String>,
    /// Requests per second.
    #[serde(default = "default_rate")]
    pub rate_limit: f64,
    #[serde(default = "default_burst")]
    pub burst: f64,
    #[serde(default = "default_page_size")]
    pub page_size: usize,
    /// Concurrent downloads for this provider.
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    /// Provider-specific parameters (e.g. the Google engine id `cx`).
    #[serde(default)]
    pub params: BTreeMap<String, String>,
    /// Local fixture: JSON file mapping query text to result URLs.
    #[serde(default)]
    pub fixture: Option<PathBuf>,
    /// Local fixture: synthesise this many results for every query.
    #[serde(default)]
    pub synthetic_results: Option<usize>,
}

impl ProviderConfig {
    pub fn new(provider: ProviderId) -> Self {
        ProviderConfig {
            provider,
            endpoint: None,
            key_env: None,
            rate_limit: default_rate(),
            burst: default_burst(),
            page_size: default_page_size(),
            parallelism: default_parallelism(),
            params: BTreeMap::new(),
            fixture: None,
            synthetic_results: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProvidersFile {
    #[serde(default, rename = "provider")]
    pub providers: Vec<ProviderConfig>,
}

impl ProvidersFile {
    pub fn parse(document: &str) -> Result<Self, HarvestError> {
        let file: ProvidersFile = toml::from_str(document).map_err(|e| HarvestError::Config(e.to_string()))?;
        for p in &file.providers {
            if !p.provider.is_search_provider() {
                return Err(HarvestError::Config(format!("{} is not a search provider", p.provider)));
            }
            if p.page_size == 0 || p.parallelism == 0 {
                return Err(HarvestError::Config(format!("{}: page_size and parallelism must be positive", p.provider)));
            }
        }
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self, HarvestError> {
        let text = std::fs::read_to_string(path)?;
        let mut file = Self::parse(&text)?;
        // Fixture paths are relative to the config file.
        if let Some(dir) = path.parent() {
            for p in &mut file.providers {
                if let Some(f) = &p.fixture {
                    if f.is_relative() {
                        p.fixture = Some(dir.join(f));
                    }
                }
            }
        }
        Ok(file)
    }
}

/// Builds the provider described by `config`. Live providers need their key
/// variable set.
pub fn build_provider(config: &ProviderConfig) -> Result<Box<dyn SearchProvider>, HarvestError> {
    match config.provider {
        ProviderId::LocalFixture => {
            let p = match (&config.fixture, config.synthetic_results) {
                (Some(path), _) => {
                    FixtureProvider::from_json(config.provider, &std::fs::read_to_string(path)?)?
                }
                (None, Some(n)) => FixtureProvider::synthetic(config.provider, n),
                (None, None) => {
                    return Err(HarvestError::Config(
                        "local-fixture needs `fixture` or `synthetic_results`".into(),
                    ))
                }
            };
            Ok(Box::new(p.with_page_size(config.page_size)))
        }
        _ => Ok(Box::new(LiveProvider::from_config(config)?)),
    }
}

/// Deterministic in-process provider.
#[derive(Debug, Clone)]
pub struct FixtureProvider {
    id: ProviderId,
    results: BTreeMap<String, Vec<SearchHit>>,
    synthetic: Option<usize>,
    page_size: usize,
}

impl FixtureProvider {
    /// Answers every query with `n` generated `fixture://` URLs.
    pub fn synthetic(id: ProviderId, n: usize) -> Self {
        FixtureProvider {
            id,
            results: BTreeMap::new(),
            synthetic: Some(n),
            page_size: 10,
        }
    }

    pub fn new(id: ProviderId) -> Self {
        FixtureProvider {
            id,
            results: BTreeMap::new(),
            synthetic: None,
            page_size: 10,
        }
    }

    /// Reads `{"query text": ["url", ...], ...}`.
    pub fn from_json(id: ProviderId, document: &str) -> Result<Self, HarvestError> {
        let map: BTreeMap<String, Vec<String>> =
            serde_json::from_str(document).map_err(|e| HarvestError::Config(e.to_string()))?;
        let mut p = FixtureProvider::new(id);
        for (q, urls) in map {
            p = p.with_results(q, urls.into_iter().map(SearchHit::new).collect());
        }
        Ok(p)
    }

    pub fn with_results(mut self, query: impl Into<String>, hits: Vec<SearchHit>) -> Self {
        self.results.insert(query.into(), hits);
        self
    }

    pub fn with_page_size(mut self, page_size: usize) -> Self {
        self.page_size = page_size.max(1);
        self
    }

    pub fn results_for(&self, query: &str) -> Vec<SearchHit> {
        if let Some(hits) = self.results.get(query) {
            return hits.clone();
        }
        let slug: String = query
            .chars()
            .map(|c| if c.is_alphanumeric() { c } else { '-' })
            .collect();
        (0..self.synthetic.unwrap_or(0))
            .map(|i| SearchHit::new(format!("fixture://{}/{}/{:04}", self.id, slug, i)))
            .collect()
    }
}

impl SearchProvider for FixtureProvider {
    fn id(&self) -> ProviderId {
        self.id
    }

    fn fetch_page(&self, query: &QuerySpec, offset: usize) -> Result<ResultPage, HarvestError> {
        let all = self.results_for(&query.text);
        let end = (offset + self.page_size).min(all.len());
        let hits = all.get(offset..end).map(<[SearchHit]>::to_vec).unwrap_or_default();
        Ok(ResultPage {
            next: (end < all.len()).then_some(end),
            hits,
        })
    }
}

/// A request to a live provider, before it is sent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiRequest {
    pub url: String,
    pub query: Vec<(String, String)>,
    pub headers: Vec<(String, String)>,
}

#[derive(Debug, Clone)]
pub struct LiveProvider {
    config: ProviderConfig,
    key: String,
}

impl LiveProvider {
    pub fn from_config(config: &ProviderConfig) -> Result<Self, HarvestError> {
        let var = config
            .key_env
            .as_deref()
            .ok_or_else(|| HarvestError::NotConfigured(format!("{}: no key_env", config.provider)))?;
        let key = std::env::var(var)
            .map_err(|_| HarvestError::NotConfigured(format!("{}: ${var} is not set", config.provider)))?;
        Ok(Self::with_key(config.clone(), key))
    }

    pub fn with_key(config: ProviderConfig, key: String) -> Self {
        LiveProvider { config, key }
    }

    fn endpoint(&self) -> String {
        if let Some(e) = &self.config.endpoint {
            return e.clone();
        }
        match self.config.provider {
            ProviderId::Google => "https://www.googleapis.com/customsearch/v1",
            ProviderId::Bing => "https://api.bing.microsoft.com/v7.0/images/search",
            ProviderId::Flickr => "https://api.flickr.com/services/rest/",
            _ => "https://api.geograph.org.uk/syndicator.php",
        }
        .to_string()
    }

    pub fn request(&self, query: &QuerySpec, offset: usize) -> ApiRequest {
        let n = self.config.page_size;
        let s = |v: &str| v.to_string();
        let mut q: Vec<(String, String)> = Vec::new();
        let mut headers = Vec::new();
        match self.config.provider {
            ProviderId::Google => {
                q.push((s("key"), self.key.clone()));
                q.push((s("cx"), self.config.params.get("cx").cloned().unwrap_or_default()));
                q.push((s("q"), query.text.clone()));
                q.push((s("searchType"), s("image")));
                q.push((s("num"), n.min(10).to_string()));
                q.push((s("start"), (offset + 1).to_string()));
            }
            ProviderId::Bing => {
                headers.push((s("Ocp-Apim-Subscription-Key"), self.key.clone()));
                q.push((s("q"), query.text.clone()));
                q.push((s("count"), n.to_string()));
                q.push((s("offset"), offset.to_string()));
            }
            ProviderId::Flickr => {
                q.push((s("method"), s("flickr.photos.search")));
                q.push((s("api_key"), self.key.clone()));
                q.push((s("text"), query.text.clone()));
                q.push((s("sort"), s("relevance")));
                q.push((s("extras"), s("url_l,geo")));
                q.push((s("per_page"), n.to_string()));
                q.push((s("page"), (offset / n + 1).to_string()));
                q.push((s("format"), s("json")));
                q.push((s("nojsoncallback"), s("1")));
            }
            _ => {
                q.push((s("key"), self.key.clone()));
                q.push((s("text"), query.text.clone()));
                q.push((s("perpage"), n.to_string()));
                q.push((s("page"), (offset / n + 1).to_string()));
                q.push((s("format"), s("JSON")));
            }
        }
        for (k, v) in &self.config.params {
            if k != "cx" {
                q.push((k.clone(), v.clone()));
            }
        }
        ApiRequest {
            url: self.endpoint(),
            query: q,
            headers,
        }
    }

    pub fn parse(&self, status: u16, body: &[u8], offset: usize) -> Result<ResultPage, HarvestError> {
        parse_response(self.config.provider, status, body, offset, self.config.page_size)
    }
}

impl SearchProvider for LiveProvider {
    fn id(&self) -> ProviderId {
        self.config.provider
    }

    #[cfg(feature = "net")]
    fn fetch_page(&self, query: &QuerySpec, offset: usize) -> Result<ResultPage, HarvestError> {
        let req = self.request(query, offset);
        let mut call = http_agent().get(&req.url).query_pairs(req.query.iter().map(|(k, v)| (k.as_str(), v.as_str())));
        for (k, v) in &req.headers {
            call = call.header(k.as_str(), v.as_str());
        }
        let mut resp = call.call().map_err(|e| HarvestError::Network {
            provider: self.config.provider.to_string(),
            message: e.to_string(),
        })?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_vec().map_err(|e| HarvestError::Network {
            provider: self.config.provider.to_string(),
            message: e.to_string(),
        })?;
        self.parse(status, &body, offset)
    }

    #[cfg(not(feature = "net"))]
    fn fetch_page(&self, _query: &QuerySpec, _offset: usize) -> Result<ResultPage, HarvestError> {
        Err(HarvestError::NotConfigured(format!(
            "{}: built without network support",
            self.config.provider
        )))
    }
}

#[cfg(feature = "net")]
pub(crate) fn http_agent() -> ureq::Agent {
    ureq::Agent::config_builder()
        .http_status_as_error(false)
        .timeout_global(Some(std::time::Duration::from_secs(30)))
        .build()
        .into()
}

fn malformed(provider: ProviderId, message: impl Into<String>) -> HarvestError {
    HarvestError::Malformed {
        provider: provider.to_string(),
        message: message.into(),
    }
}

fn number(v: Option<&Value>) -> Option<f64> {
    match v? {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

fn geotag(lat: Option<&Value>, lon: Option<&Value>) -> Option<GeoTag> {
    let (lat, lon) = (number(lat)?, number(lon)?);
    (lat != 0.0 || lon != 0.0).then_some(GeoTag { lat, lon, region: None })
}

/// Turns a provider's HTTP response into a page of hits.
pub fn parse_response(
    provider: ProviderId,
    status: u16,
    body: &[u8],
    offset: usize,
    page_size: usize,
) -> Result<ResultPage, HarvestError> {
    let quota = || HarvestError::QuotaExceeded {
        provider: provider.to_string(),
    };
    if status == 429 && provider == ProviderId::Google {
        return Err(quota());
    }
    if status == 403 && matches!(provider, ProviderId::Google | ProviderId::Bing) {
        return Err(quota());
    }
    if status >= 400 {
        return Err(HarvestError::Http {
            status,
            url: provider.to_string(),
        });
    }
    let v: Value = serde_json::from_slice(body).map_err(|e| malformed(provider, e.to_string()))?;
    if !v.is_object() {
        return Err(malformed(provider, "expected a JSON object"));
    }
    match provider {
        ProviderId::Google => {
            if let Some(err) = v.get("error") {
                let reason = err.to_string();
                if reason.contains("rateLimitExceeded") || reason.contains("dailyLimitExceeded") {
                    return Err(quota());
                }
                return Err(malformed(provider, reason));
            }
            let hits = match v.get("items") {
                None => Vec::new(),
                Some(Value::Array(items)) => items
                    .iter()
                    .map(|it| {
                        it.get("link")
                            .and_then(Value::as_str)
                            .map(SearchHit::new)
                            .ok_or_else(|| malformed(provider, "item without link"))
                    })
                    .collect::<Result<_, _>>()?,
                Some(_) => return Err(malformed(provider, "`items` is not an array")),
            };
            let next = v
                .pointer("/queries/nextPage/0/startIndex")
                .and_then(Value::as_u64)
                .map(|s| s.saturating_sub(1) as usize);
            Ok(ResultPage { hits, next })
        }
        ProviderId::Bing => {
            let items = v
                .get("value")
                .and_then(Value::as_array)
                .ok_or_else(|| malformed(provider, "missing `value` array"))?;
            let hits = items
                .iter()
                .map(|it| {
                    it.get("contentUrl")
                        .and_then(Value::as_str)
                        .map(SearchHit::new)
                        .ok_or_else(|| malformed(provider, "item without contentUrl"))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let next = v.get("nextOffset").and_then(Value::as_u64).map(|n| n as usize);
            Ok(ResultPage { hits, next })
        }
        ProviderId::Flickr => {
            if v.get("stat").and_then(Value::as_str) == Some("fail") {
                let msg = v.get("message").and_then(Value::as_str).unwrap_or("request failed");
                return Err(malformed(provider, msg));
            }
            let photos = v.get("photos").ok_or_else(|| malformed(provider, "missing `photos`"))?;
            let list = photos
                .get("photo")
                .and_then(Value::as_array)
                .ok_or_else(|| malformed(provider, "missing `photo` array"))?;
            let mut hits = Vec::with_capacity(list.len());
            for p in list {
                let url = match p.get("url_l").and_then(Value::as_str) {
                    Some(u) => u.to_string(),
                    None => {
                        let field = |k: &str| -> Result<String, HarvestError> {
                            match p.get(k) {
                                Some(Value::String(s)) => Ok(s.clone()),
                                Some(Value::Number(n)) => Ok(n.to_string()),
                                _ => Err(malformed(provider, format!("photo without `{k}`"))),
                            }
                        };
                        format!(
                            "https://live.staticflickr.com/{}/{}_{}_b.jpg",
                            field("server")?,
                            field("id")?,
                            field("secret")?
                        )
                    }
                };
                hits.push(SearchHit {
                    url,
                    geotag: geotag(p.get("latitude"), p.get("longitude")),
                });
            }
            let page = number(photos.get("page")).unwrap_or(1.0) as usize;
            let pages = number(photos.get("pages")).unwrap_or(0.0) as usize;
            let per = number(photos.get("perpage")).map(|p| p as usize).unwrap_or(page_size);
            let next = (page < pages && !hits.is_empty()).then_some(page * per);
            Ok(ResultPage { hits, next })
        }
        _ => {
            let items = v
                .get("items")
                .and_then(Value::as_array)
                .ok_or_else(|| malformed(provider, "missing `items` array"))?;
            let mut hits = Vec::with_capacity(items.len());
            for it in items {
                let url = ["imageurl", "thumb", "link"]
                    .iter()
                    .find_map(|k| it.get(*k).and_then(Value::as_str))
                    .ok_or_else(|| malformed(provider, "item without image url"))?;
                hits.push(SearchHit {
                    url: url.to_string(),
                    geotag: geotag(it.get("lat"), it.get("long")),
                });
            }
            let next = (hits.len() >= page_size).then_some(offset + hits.len());
            Ok(ResultPage { hits, next })
        }
    }
}
