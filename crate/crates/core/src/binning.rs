//! Label discretization into named concept bins, and label distances.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Label distance functions for negative weighting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceKind {
    Absolute,
    SqrtAbsolute,
    Squared,
}

impl DistanceKind {
    pub const ALL: [DistanceKind; 3] = [
        DistanceKind::Absolute,
        DistanceKind::SqrtAbsolute,
        DistanceKind::Squared,
    ];
}

impl fmt::Display for DistanceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DistanceKind::Absolute => "absolute",
            DistanceKind::SqrtAbsolute => "sqrt",
            DistanceKind::Squared => "squared",
        };
        f.write_str(s)
    }
}

impl FromStr for DistanceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "absolute" => Ok(DistanceKind::Absolute),
            "sqrt" | "sqrt-absolute" => Ok(DistanceKind::SqrtAbsolute),
            "squared" => Ok(DistanceKind::Squared),
            other => Err(Error::Config(format!(
                "unknown distance kind '{other}' (expected absolute|sqrt|squared)"
            ))),
        }
    }
}

/// Distance between two labels.
///
/// The square-root variant takes the root of the absolute difference so it
/// stays real and symmetric.
pub fn label_distance(y_i: f64, y_j: f64, kind: DistanceKind) -> f64 {
    let d = (y_i - y_j).abs();
    match kind {
        DistanceKind::Absolute => d,
        DistanceKind::SqrtAbsolute => d.sqrt(),
        DistanceKind::Squared => d * d,
    }
}

/// Ordered bin edges, bin centers, and one concept name per bin.
///
/// Bins are half-open `[edges[i], edges[i+1])` with a closed final bin.
#[derive(Debug, Clone, PartialEq)]
pub struct BinSpec {
    edges: Vec<f64>,
    centers: Vec<f64>,
    concepts: Vec<String>,
}

impl BinSpec {
    pub fn new(edges: Vec<f64>, centers: Vec<f64>, concepts: Vec<String>) -> Result<Self> {
        let k = centers.len();
        if k < 2 {
            return Err(Error::Config(format!("need at least 2 bins, got {k}")));
        }
        if edges.len() != k + 1 {
            return Err(Error::BadArity(format!(
                "{} edges for {k} bins (need {})",
                edges.len(),
                k + 1
            )));
        }
        if concepts.len() != k {
            return Err(Error::BadArity(format!(
                "{} concept names for {k} bins",
                concepts.len()
            )));
        }
        if edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("bin edges must be strictly ascending".into()));
        }
        for (i, &c) in centers.iter().enumerate() {
            if c < edges[i] || c > edges[i + 1] {
                return Err(Error::Config(format!(
                    "center {c} of bin {i} lies outside [{}, {}]",
                    edges[i],
                    edges[i + 1]
                )));
            }
        }
        Ok(Self {
            edges,
            centers,
            concepts,
        })
    }

    /// Uniform-width bins over `[y_min, y_max]` with centers at midpoints.
    pub fn uniform(y_min: f64, y_max: f64, k: usize, concepts: Vec<String>) -> Result<Self> {
        if y_min >= y_max {
            return Err(Error::Config(format!(
                "empty label range [{y_min}, {y_max}]"
            )));
        }
        let width = (y_max - y_min) / k as f64;
        let edges: Vec<f64> = (0..=k).map(|i| y_min + width * i as f64).collect();
        let centers: Vec<f64> = (0..k).map(|i| y_min + width * (i as f64 + 0.5)).collect();
        Self::new(edges, centers, concepts)
    }

    pub fn num_bins(&self) -> usize {
        self.centers.len()
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn concepts(&self) -> &[String] {
        &self.concepts
    }

    pub fn range(&self) -> (f64, f64) {
        (self.edges[0], *self.edges.last().unwrap())
    }

    /// Bin index of a label. Half-open bins, closed last bin.
    pub fn assign(&self, y: f64) -> Result<usize> {
        let (lo, hi) = self.range();
        if !(lo..=hi).contains(&y) {
            return Err(Error::OutOfRange { label: y, lo, hi });
        }
        let k = self.num_bins();
        for i in 0..k - 1 {
            if y < self.edges[i + 1] {
                return Ok(i);
            }
        }
        Ok(k - 1)
    }

    /// One line per bin: `edge_lo,edge_hi,center,concept-name`.
    pub fn to_config_string(&self) -> String {
        let mut out = String::new();
        for i in 0..self.num_bins() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                self.edges[i],
                self.edges[i + 1],
                self.centers[i],
                self.concepts[i]
            ));
        }
        out
    }

    pub fn parse(text: &str, path: &str) -> Result<Self> {
        let mut edges: Vec<f64> = Vec::new();
        let mut centers = Vec::new();
        let mut concepts = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.splitn(4, ',').collect();
            if parts.len() != 4 {
                return Err(Error::Parse {
                    path: path.into(),
                    line: lineno + 1,
                    detail: format!("expected 4 comma-separated fields, got {}", parts.len()),
                });
            }
            let num = |s: &str, what: &str| -> Result<f64> {
                s.trim().parse::<f64>().map_err(|_| Error::Parse {
                    path: path.into(),
                    line: lineno + 1,
                    detail: format!("invalid {what} '{s}'"),
                })
            };
            let lo = num(parts[0], "edge_lo")?;
            let hi = num(parts[1], "edge_hi")?;
            let center = num(parts[2], "center")?;
            if let Some(&prev_hi) = edges.last() {
                if lo != prev_hi {
                    return Err(Error::Parse {
                        path: path.into(),
                        line: lineno + 1,
                        detail: format!(
                            "bins must be contiguous: edge_lo {lo} != previous edge_hi {prev_hi}"
                        ),
                    });
                }
            } else {
                edges.push(lo);
            }
            edges.push(hi);
            centers.push(center);
            concepts.push(parts[3].trim().to_string());
        }
        Self::new(edges, centers, concepts)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_config_string())?;
        Ok(())
    }
}

/// Shipped concept vocabularies: age groups for five-bin age-like ranges,
/// decade names for year-like ranges, generic group names otherwise.
pub fn default_vocabulary(k: usize, y_min: f64, y_max: f64) -> Vec<String> {
    if k == 5 && y_min >= 0.0 && y_max <= 120.0 {
        return [
            "child",
            "teenager",
            "young adult",
            "middle-aged adult",
            "older adult",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
    }
    if (1800.0..=2100.0).contains(&y_min) && y_max <= 2100.0 {
        let width = (y_max - y_min) / k as f64;
        return (0..k)
            .map(|i| {
                let decade = ((y_min + width * i as f64) / 10.0).floor() * 10.0;
                format!("{}s", decade as i64)
            })
            .collect();
    }
    (1..=k).map(|i| format!("group {i}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec_0_60() -> BinSpec {
        BinSpec::uniform(0.0, 60.0, 3, vec!["a".into(), "b".into(), "c".into()]).unwrap()
    }

    #[test]
    fn interior_point() {
        assert_eq!(spec_0_60().assign(25.0).unwrap(), 1);
    }

    #[test]
    fn half_open_convention_at_edge() {
        assert_eq!(spec_0_60().assign(20.0).unwrap(), 1);
    }

    #[test]
    fn last_bin_is_closed() {
        assert_eq!(spec_0_60().assign(60.0).unwrap(), 2);
    }

    #[test]
    fn out_of_range_label_is_rejected() {
        assert!(matches!(
            spec_0_60().assign(61.0),
            Err(Error::OutOfRange { .. })
        ));
    }

    #[test]
    fn distances() {
        assert_eq!(label_distance(20.0, 30.0, DistanceKind::Absolute), 10.0);
        assert_eq!(label_distance(20.0, 30.0, DistanceKind::Squared), 100.0);
        assert!((label_distance(20.0, 30.0, DistanceKind::SqrtAbsolute) - 10f64.sqrt()).abs() < 1e-15);
        for kind in DistanceKind::ALL {
            assert_eq!(label_distance(20.0, 20.0, kind), 0.0);
        }
    }

    #[test]
    fn decade_bins_have_mid_decade_centers() {
        let concepts = default_vocabulary(5, 1930.0, 1980.0);
        assert_eq!(concepts[0], "1930s");
        let spec = BinSpec::uniform(1930.0, 1980.0, 5, concepts).unwrap();
        assert_eq!(spec.centers(), &[1935.0, 1945.0, 1955.0, 1965.0, 1975.0]);
    }

    #[test]
    fn two_bin_midpoints() {
        let spec = BinSpec::uniform(0.0, 10.0, 2, vec!["low".into(), "high".into()]).unwrap();
        assert_eq!(spec.edges(), &[0.0, 5.0, 10.0]);
        assert_eq!(spec.centers(), &[2.5, 7.5]);
    }

    #[test]
    fn age_range_spec() {
        let spec = BinSpec::uniform(16.0, 77.0, 5, default_vocabulary(5, 16.0, 77.0)).unwrap();
        assert_eq!(spec.range(), (16.0, 77.0));
        assert_eq!(spec.num_bins(), 5);
        assert_eq!(spec.concepts()[4], "older adult");
    }

    #[test]
    fn centers_assign_to_their_own_bin() {
        let spec = BinSpec::uniform(16.0, 77.0, 5, default_vocabulary(5, 16.0, 77.0)).unwrap();
        for (i, &c) in spec.centers().iter().enumerate() {
            assert_eq!(spec.assign(c).unwrap(), i);
        }
    }

    #[test]
    fn config_round_trip() {
        let spec = spec_0_60();
        let text = spec.to_config_string();
        let parsed = BinSpec::parse(&text, "inline").unwrap();
        assert_eq!(parsed, spec);
    }

    #[test]
    fn non_contiguous_config_is_rejected() {
        let err = BinSpec::parse("0,10,5,a\n11,20,15,b\n", "inline").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn bad_arity_is_rejected() {
        let err = BinSpec::uniform(0.0, 10.0, 3, vec!["a".into()]).unwrap_err();
        assert!(matches!(err, Error::BadArity(_)));
    }
}
