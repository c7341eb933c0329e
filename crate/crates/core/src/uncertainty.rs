//! Per-query uncertainty estimators. Higher `u` means less confidence in the
//! top-1 retrieved candidate.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{GeoLookup, EARTH_RADIUS_M};
use crate::error::{Error, Result};
use crate::matching::{InlierSource, MatchError};
use crate::retrieval::Shortlist;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Estimator {
    L2,
    PAScore,
    SUE,
    Random,
    Inlier,
}

impl Estimator {
    pub const ALL: [Estimator; 5] = [
        Estimator::L2,
        Estimator::PAScore,
        Estimator::SUE,
        Estimator::Random,
        Estimator::Inlier,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::L2 => "l2",
            Estimator::PAScore => "pa",
            Estimator::SUE => "sue",
            Estimator::Random => "random",
            Estimator::Inlier => "inlier",
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l2" => Ok(Estimator::L2),
            "pa" | "pascore" | "pa-score" => Ok(Estimator::PAScore),
            "sue" => Ok(Estimator::SUE),
            "random" => Ok(Estimator::Random),
            "inlier" | "inliers" => Ok(Estimator::Inlier),
            other => Err(Error::InvalidConfig(format!("unknown estimator {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyScore {
    pub query_id: String,
    pub estimator: Estimator,
    pub u: f64,
}

impl UncertaintyScore {
    fn new(query_id: &str, estimator: Estimator, u: f64) -> Self {
        Self {
            query_id: query_id.to_owned(),
            estimator,
            u,
        }
    }
}

fn require_len(shortlist: &Shortlist, need: usize) -> Result<()> {
    if shortlist.len() < need {
        return Err(Error::ShortlistTooShort {
            query: shortlist.query_id.clone(),
            len: shortlist.len(),
            need,
        });
    }
    Ok(())
}

/// Descriptor distance to the nearest neighbor.
pub fn u_l2(shortlist: &Shortlist) -> Result<UncertaintyScore> {
    require_len(shortlist, 1)?;
    Ok(UncertaintyScore::new(
        &shortlist.query_id,
        Estimator::L2,
        shortlist.entries[0].distance,
    ))
}

/// Ratio of first to second nearest-neighbor distance; 1 when both are exact matches.
pub fn u_pa(shortlist: &Shortlist) -> Result<UncertaintyScore> {
    require_len(shortlist, 2)?;
    let (d1, d2) = (shortlist.entries[0].distance, shortlist.entries[1].distance);
    let u = if d2 == 0.0 { 1.0 } else { d1 / d2 };
    Ok(UncertaintyScore::new(&shortlist.query_id, Estimator::PAScore, u))
}

/// Parameters of the shortlist geographic-spread estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SueParams {
    /// Number of leading candidates considered.
    pub top_l: usize,
    /// Gaussian bandwidth on descriptor distance. `None` uses `d_(1) + 1e-9`.
    pub sigma: Option<f64>,
}

impl Default for SueParams {
    fn default() -> Self {
        Self {
            top_l: 10,
            sigma: None,
        }
    }
}

/// Distance-weighted spatial variance (m^2) of the top-L candidates.
///
/// Weights are `exp(-d_j^2 / sigma^2)` normalized to one. Positions are
/// projected onto an equirectangular plane scaled at the weighted mean
/// latitude and centered on the weighted mean position.
pub fn u_sue(shortlist: &Shortlist, db: GeoLookup<'_>, params: SueParams) -> Result<UncertaintyScore> {
    require_len(shortlist, 1)?;
    if params.top_l == 0 {
        return Err(Error::InvalidConfig("SUE top_l must be at least 1".into()));
    }
    let top = &shortlist.entries[..params.top_l.min(shortlist.len())];
    let d1 = top[0].distance;
    let sigma = params.sigma.unwrap_or(d1 + 1e-9);
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::InvalidConfig(format!("SUE sigma must be positive, got {sigma}")));
    }

    let mut points = Vec::with_capacity(top.len());
    for e in top {
        let rec = db.require(&e.db_id)?;
        // shifted by d1^2 so the leading weight never underflows
        let w = (-(e.distance * e.distance - d1 * d1) / (sigma * sigma)).exp();
        points.push((w, rec.lat, rec.lon));
    }
    let total: f64 = points.iter().map(|p| p.0).sum();
    // offsets from the first candidate keep coincident points exactly coincident
    let (lat_ref, lon_ref) = (points[0].1, points[0].2);
    let lat0 = lat_ref + points.iter().map(|p| p.0 * (p.1 - lat_ref)).sum::<f64>() / total;
    let east_scale = EARTH_RADIUS_M * lat0.to_radians().cos();

    let projected: Vec<(f64, f64, f64)> = points
        .iter()
        .map(|&(w, lat, lon)| {
            (
                w / total,
                (lon - lon_ref).to_radians() * east_scale,
                (lat - lat_ref).to_radians() * EARTH_RADIUS_M,
            )
        })
        .collect();
    let mx: f64 = projected.iter().map(|p| p.0 * p.1).sum();
    let my: f64 = projected.iter().map(|p| p.0 * p.2).sum();
    let u = projected
        .iter()
        .map(|&(w, x, y)| w * ((x - mx).powi(2) + (y - my).powi(2)))
        .sum();
    Ok(UncertaintyScore::new(&shortlist.query_id, Estimator::SUE, u))
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Uniform `[0, 1)` draw keyed on `(seed, query_id)`; independent of call order.
pub fn u_random(query_id: &str, seed: u64) -> UncertaintyScore {
    let bits = splitmix64(splitmix64(seed) ^ fnv1a64(query_id.as_bytes()));
    let u = (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    UncertaintyScore::new(query_id, Estimator::Random, u)
}

/// Negated inlier count of the top-1 pair.
pub fn u_inlier(query_id: &str, top1_db_id: &str, provider: &(impl InlierSource + ?Sized)) -> Result<UncertaintyScore, MatchError> {
    let n = provider.inliers(query_id, top1_db_id)?;
    Ok(UncertaintyScore::new(query_id, Estimator::Inlier, -f64::from(n)))
}

/// Everything an estimator may need besides the shortlist.
#[derive(Clone, Copy)]
pub struct EstimatorContext<'a> {
    pub db: GeoLookup<'a>,
    pub provider: &'a dyn InlierSource,
    pub seed: u64,
    pub sue: SueParams,
}

pub fn estimate(estimator: Estimator, shortlist: &Shortlist, ctx: &EstimatorContext<'_>) -> Result<UncertaintyScore> {
    match estimator {
        Estimator::L2 => u_l2(shortlist),
        Estimator::PAScore => u_pa(shortlist),
        Estimator::SUE => u_sue(shortlist, ctx.db, ctx.sue),
        Estimator::Random => Ok(u_random(&shortlist.query_id, ctx.seed)),
        Estimator::Inlier => {
            require_len(shortlist, 1)?;
            Ok(u_inlier(&shortlist.query_id, &shortlist.entries[0].db_id, ctx.provider)?)
        }
    }
}

/// Writes `query_id,estimator,u,prob`; `prob` is blank when uncalibrated.
pub fn write_scores(path: &Path, rows: &[(UncertaintyScore, Option<f64>)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| crate::retrieval::csv_io(path, e))?;
    w.write_record(["query_id", "estimator", "u", "prob"])
        .map_err(|e| crate::retrieval::csv_io(path, e))?;
    for (s, p) in rows {
        let prob = p.map(|p| p.to_string()).unwrap_or_default();
        w.write_record([s.query_id.as_str(), s.estimator.name(), &s.u.to_string(), &prob])
            .map_err(|e| crate::retrieval::csv_io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_scores(path: &Path) -> Result<Vec<(UncertaintyScore, Option<f64>)>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| crate::retrieval::csv_io(path, e))?;
    crate::retrieval::check_header(&mut rdr, path, "scores", &["query_id", "estimator", "u", "prob"])?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let bad = |msg: String| Error::Csv {
            what: "scores",
            line,
            msg,
        };
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let estimator: Estimator = rec[1].parse().map_err(|e: Error| bad(e.to_string()))?;
        let u: f64 = rec[2].parse().map_err(|_| bad(format!("bad u {:?}", &rec[2])))?;
        let prob = match rec[3].trim() {
            "" => None,
            p => Some(p.parse().map_err(|_| bad(format!("bad prob {p:?}")))?),
        };
        out.push((UncertaintyScore::new(&rec[0], estimator, u), prob));
    }
    Ok(out)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{GeoRecord, Manifest};
    use crate::matching::InlierTable;
    use crate::retrieval::ShortlistEntry;

    fn shortlist(ds: &[f64]) -> Shortlist {
        Shortlist {
            query_id: "q".into(),
            entries: ds
                .iter()
                .enumerate()
                .map(|(i, &d)| ShortlistEntry {
                    db_id: format!("d{i}"),
                    distance: d,
                })
                .collect(),
        }
    }

    #[test]
    fn l2_is_first_distance() {
        assert_eq!(u_l2(&shortlist(&[0.0, 0.3])).unwrap().u, 0.0);
        assert_eq!(u_l2(&shortlist(&[0.42, 0.5])).unwrap().u, 0.42);
        assert!(u_l2(&shortlist(&[])).is_err());
    }

    #[test]
    fn pa_score_cases() {
        assert_eq!(u_pa(&shortlist(&[0.2, 0.4])).unwrap().u, 0.5);
        assert_eq!(u_pa(&shortlist(&[0.3, 0.3])).unwrap().u, 1.0);
        assert_eq!(u_pa(&shortlist(&[0.0, 0.5])).unwrap().u, 0.0);
        assert_eq!(u_pa(&shortlist(&[0.0, 0.0])).unwrap().u, 1.0);
        assert!(matches!(
            u_pa(&shortlist(&[0.1])),
            Err(Error::ShortlistTooShort { need: 2, .. })
        ));
    }

    fn manifest(points: &[(f64, f64)]) -> Manifest {
        Manifest::new(
            points
                .iter()
                .enumerate()
                .map(|(i, &(lat, lon))| GeoRecord {
                    id: format!("d{i}"),
                    lat,
                    lon,
                    descriptor_index: i,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn sue_zero_spread() {
        let m = manifest(&[(45.0, 7.0); 4]);
        let s = u_sue(&shortlist(&[0.1, 0.2, 0.3, 0.4]), m.geo(), SueParams::default()).unwrap();
        assert_eq!(s.u, 0.0);
    }

    #[test]
    fn sue_two_points_100m_apart() {
        let dlat = (100.0 / EARTH_RADIUS_M).to_degrees();
        let m = manifest(&[(45.0, 7.0), (45.0 + dlat, 7.0)]);
        let s = u_sue(&shortlist(&[0.3, 0.3]), m.geo(), SueParams::default()).unwrap();
        assert!((s.u - 2500.0).abs() / 2500.0 < 1e-6, "{}", s.u);
    }

    #[test]
    fn sue_unknown_id() {
        let m = manifest(&[(45.0, 7.0)]);
        assert!(matches!(
            u_sue(&shortlist(&[0.1, 0.2]), m.geo(), SueParams::default()),
            Err(Error::UnknownId(_))
        ));
    }

    #[test]
    fn random_is_keyed_and_uniform() {
        assert_eq!(u_random("q17", 7).u, u_random("q17", 7).u);
        assert_ne!(u_random("q17", 7).u, u_random("q17", 8).u);
        let n = 10_000;
        let mean = (0..n).map(|i| u_random(&format!("q{i}"), 42).u).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.02, "{mean}");
        assert!((0..1000).all(|i| (0.0..1.0).contains(&u_random(&i.to_string(), 1).u)));
    }

    #[test]
    fn inlier_is_negated_count() {
        let mut t = InlierTable::new();
        t.insert("q", "a", 26).unwrap();
        t.insert("q", "b", 0).unwrap();
        t.insert("q", "c", 2366).unwrap();
        assert_eq!(u_inlier("q", "a", &t).unwrap().u, -26.0);
        assert_eq!(u_inlier("q", "b", &t).unwrap().u, 0.0);
        assert_eq!(u_inlier("q", "c", &t).unwrap().u, -2366.0);
        assert!(matches!(u_inlier("q", "z", &t), Err(MatchError::Missing { .. })));
    }

    #[test]
    fn estimator_names_roundtrip() {
        for e in Estimator::ALL {
            assert_eq!(e.name().parse::<Estimator>().unwrap(), e);
        }
        assert!("foo".parse::<Estimator>().is_err());
    }
}
