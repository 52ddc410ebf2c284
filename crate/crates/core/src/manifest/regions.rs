use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{GeoTag, ManifestError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    England,
    Scotland,
    Ireland,
    Wales,
    Other,
}

impl Region {
    pub fn as_str(self) -> &'static str {
        match self {
            Region::England => "england",
            Region::Scotland => "scotland",
            Region::Ireland => "ireland",
            Region::Wales => "wales",
            Region::Other => "other",
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Region {
    type Err = ManifestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "england" => Ok(Region::England),
            "scotland" => Ok(Region::Scotland),
            // Geograph Ireland covers the whole island.
            "ireland" | "northern ireland" | "northern_ireland" => Ok(Region::Ireland),
            "wales" | "cymru" => Ok(Region::Wales),
            "other" => Ok(Region::Other),
            other => Err(ManifestError::Regions(format!("unknown region `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min_lat: f64,
    pub max_lat: f64,
    pub min_lon: f64,
    pub max_lon: f64,
}

impl BoundingBox {
    fn contains(&self, lat: f64, lon: f64) -> bool {
        (self.min_lat..=self.max_lat).contains(&lat) && (self.min_lon..=self.max_lon).contains(&lon)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionRule {
    pub region: Region,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BoundingBox>,
    /// Closed ring of `[lat, lon]` vertices.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polygon: Option<Vec<[f64; 2]>>,
}

impl RegionRule {
    fn contains(&self, lat: f64, lon: f64) -> bool {
        if let Some(poly) = &self.polygon {
            return point_in_polygon(poly, lat, lon);
        }
        self.bbox.as_ref().is_some_and(|b| b.contains(lat, lon))
    }
}

/// Even-odd ray casting along the longitude axis.
fn point_in_polygon(ring: &[[f64; 2]], lat: f64, lon: f64) -> bool {
    let mut inside = false;
    let n = ring.len();
    if n < 3 {
        return false;
    }
    let mut j = n - 1;
    for i in 0..n {
        let [yi, xi] = ring[i];
        let [yj, xj] = ring[j];
        if (yi > lat) != (yj > lat) {
            let x_cross = xj + (lat - yj) / (yi - yj) * (xi - xj);
            if lon < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Ordered region rules; the first matching rule wins, so regions are
/// disjoint by construction. Unmatched points resolve to [`Region::Other`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionMap {
    pub rules: Vec<RegionRule>,
}

pub const DEFAULT_REGIONS: &str = include_str!("../../config/regions.toml");

impl Default for RegionMap {
    fn default() -> Self {
        RegionMap::parse(DEFAULT_REGIONS).expect("shipped region map is valid")
    }
}

impl RegionMap {
    pub fn parse(document: &str) -> Result<RegionMap, ManifestError> {
        let map: RegionMap =
            toml::from_str(document).map_err(|e| ManifestError::Regions(e.to_string()))?;
        for rule in &map.rules {
            if rule.bbox.is_none() && rule.polygon.is_none() {
                return Err(ManifestError::Regions(format!(
                    "rule for {} has neither bbox nor polygon",
                    rule.region
                )));
            }
        }
        Ok(map)
    }

    pub fn locate(&self, lat: f64, lon: f64) -> Region {
        self.rules
            .iter()
            .find(|r| r.contains(lat, lon))
            .map_or(Region::Other, |r| r.region)
    }

    /// A region name carried by the tag takes precedence over coordinates.
    pub fn resolve(&self, tag: &GeoTag) -> Region {
        if let Some(name) = &tag.region {
            if let Ok(region) = name.parse() {
                return region;
            }
        }
        self.locate(tag.lat, tag.lon)
    }
}
