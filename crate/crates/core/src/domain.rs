//! The discrete location universe, its Euclidean geometry and the
//! adversary's prior.
//!
//! Locations are addressed internally by their index in
//! [`LocationDomain::locations`]; the `id` field is the user-facing label
//! carried through files and reports.

use std::collections::HashSet;
use std::io::Read;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{hilbert_value, HilbertValue, RankTable, MAX_ORDER};

/// Tolerance on `|sum(prior) - 1|`.
pub const PRIOR_SUM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub id: u32,
    pub col: u32,
    pub row: u32,
    /// Cell center in kilometers.
    pub center: (f64, f64),
}

/// Euclidean distance between two cell centers, in kilometers.
pub fn distance(a: &Location, b: &Location) -> f64 {
    (a.center.0 - b.center.0).hypot(a.center.1 - b.center.1)
}

/// A finite (possibly sparse) set of cells on a `2^order x 2^order` grid.
///
/// Immutable after construction. Pairwise distances are precomputed since
/// every scoring, mechanism and audit routine is dominated by distance
/// lookups.
#[derive(Debug, Clone)]
pub struct LocationDomain {
    order: u32,
    cell_size_km: f64,
    locations: Vec<Location>,
    hilbert: Vec<HilbertValue>,
    ranks: RankTable,
    dist: Vec<f64>,
}

impl LocationDomain {
    /// Builds a domain from `(id, col, row)` triples.
    pub fn new(order: u32, cell_size_km: f64, cells: &[(u32, u32, u32)]) -> Result<Self> {
        if order == 0 || order > MAX_ORDER {
            return Err(Error::InvalidParameter(format!(
                "order must be in 1..={MAX_ORDER}, got {order}"
            )));
        }
        if !(cell_size_km.is_finite() && cell_size_km > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "cell size must be positive, got {cell_size_km}"
            )));
        }
        let side = 1u64 << order;
        let mut ids = HashSet::with_capacity(cells.len());
        let mut occupied = HashSet::with_capacity(cells.len());
        let mut locations = Vec::with_capacity(cells.len());
        let mut hilbert = Vec::with_capacity(cells.len());
        for &(id, col, row) in cells {
            if !ids.insert(id) {
                return Err(Error::DuplicateId(id));
            }
            if u64::from(col) >= side || u64::from(row) >= side {
                return Err(Error::OutOfGrid { id, col, row, side });
            }
            if !occupied.insert((col, row)) {
                return Err(Error::InvalidParameter(format!(
                    "cell ({col},{row}) listed twice (id {id})"
                )));
            }
            let center = (
                (f64::from(col) + 0.5) * cell_size_km,
                (f64::from(row) + 0.5) * cell_size_km,
            );
            locations.push(Location { id, col, row, center });
            hilbert.push(hilbert_value(col, row, order)?);
        }
        let ranks = RankTable::from_values(&hilbert);
        let n = locations.len();
        let mut dist = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let d = distance(&locations[i], &locations[j]);
                dist[i * n + j] = d;
                dist[j * n + i] = d;
            }
        }
        Ok(LocationDomain { order, cell_size_km, locations, hilbert, ranks, dist })
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn cell_size_km(&self) -> f64 {
        self.cell_size_km
    }

    pub fn locations(&self) -> &[Location] {
        &self.locations
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    pub fn location(&self, index: usize) -> &Location {
        &self.locations[index]
    }

    pub fn id(&self, index: usize) -> u32 {
        self.locations[index].id
    }

    pub fn index_of(&self, id: u32) -> Result<usize> {
        self.locations
            .iter()
            .position(|l| l.id == id)
            .ok_or(Error::UnknownLocation(id))
    }

    pub fn hilbert_value(&self, index: usize) -> HilbertValue {
        self.hilbert[index]
    }

    pub fn ranks(&self) -> &RankTable {
        &self.ranks
    }

    /// Distance between two locations given by index.
    #[inline]
    pub fn dist(&self, a: usize, b: usize) -> f64 {
        self.dist[a * self.locations.len() + b]
    }

    /// Max pairwise distance over `members` (0 for fewer than two).
    pub fn diameter(&self, members: &[usize]) -> f64 {
        let mut best = 0.0f64;
        for (k, &a) in members.iter().enumerate() {
            for &b in &members[k + 1..] {
                best = best.max(self.dist(a, b));
            }
        }
        best
    }

    /// D(X): the diameter of the whole domain.
    pub fn domain_diameter(&self) -> f64 {
        self.dist.iter().copied().fold(0.0, f64::max)
    }

    pub fn to_dump(&self, prior: Option<&PriorDistribution>) -> DomainDump {
        DomainDump {
            order: self.order,
            cell_size_km: self.cell_size_km,
            locations: self
                .locations
                .iter()
                .map(|l| CellRecord { id: l.id, col: l.col, row: l.row })
                .collect(),
            prior: prior.map(|p| p.probs().to_vec()),
        }
    }

    pub fn to_json(&self, prior: Option<&PriorDistribution>) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_dump(prior))?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub id: u32,
    pub col: u32,
    pub row: u32,
}

/// JSON form of a domain and, optionally, its prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainDump {
    pub order: u32,
    pub cell_size_km: f64,
    pub locations: Vec<CellRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<Vec<f64>>,
}

impl DomainDump {
    pub fn into_domain(self) -> Result<(LocationDomain, Option<PriorDistribution>)> {
        let cells: Vec<_> = self.locations.iter().map(|c| (c.id, c.col, c.row)).collect();
        let domain = LocationDomain::new(self.order, self.cell_size_km, &cells)?;
        let prior = match self.prior {
            Some(p) => Some(PriorDistribution::new(&domain, p)?),
            None => None,
        };
        Ok((domain, prior))
    }
}

pub fn load_domain_json(path: &Path) -> Result<(LocationDomain, Option<PriorDistribution>)> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    let dump: DomainDump = serde_json::from_str(&text)?;
    dump.into_domain()
}

#[derive(Debug, Deserialize)]
struct RegionRecord {
    id: u32,
    col: u32,
    row: u32,
    #[serde(default)]
    weight: Option<f64>,
}

/// Loads a regions CSV (`id,col,row[,weight]`).
///
/// Weights, when present for every row, are normalized into a prior.
pub fn load_domain(
    path: &Path,
    cell_size_km: f64,
    order: u32,
) -> Result<(LocationDomain, Option<PriorDistribution>)> {
    let file = std::fs::File::open(path)
        .map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    read_domain(file, cell_size_km, order)
        .map_err(|e| match e {
            Error::Csv { source, .. } => Error::Csv { path: path.to_path_buf(), source },
            other => other,
        })
}

/// Same as [`load_domain`] for an arbitrary reader.
pub fn read_domain<R: Read>(
    reader: R,
    cell_size_km: f64,
    order: u32,
) -> Result<(LocationDomain, Option<PriorDistribution>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut cells = Vec::new();
    let mut weights = Vec::new();
    for rec in rdr.deserialize::<RegionRecord>() {
        let rec = rec.map_err(|source| Error::Csv { path: "<input>".into(), source })?;
        cells.push((rec.id, rec.col, rec.row));
        weights.push((rec.id, rec.weight));
    }
    let domain = LocationDomain::new(order, cell_size_km, &cells)?;
    let given = weights.iter().filter(|(_, w)| w.is_some()).count();
    let prior = if given == 0 {
        None
    } else if given < weights.len() {
        return Err(Error::PartialWeights);
    } else {
        let mut w = Vec::with_capacity(weights.len());
        for (id, weight) in weights {
            let weight = weight.unwrap_or_default();
            if !(weight.is_finite() && weight > 0.0) {
                return Err(Error::NonPositiveWeight { id, weight });
            }
            w.push(weight);
        }
        Some(PriorDistribution::from_weights(&domain, &w)?)
    };
    Ok((domain, prior))
}

/// The bundled 50-region example (order 5, 1 km cells, fixed prior).
///
/// The region coordinates are an approximate reconstruction laid out so that
/// the Hilbert ranks 1..=50 coincide with the region ids.
pub fn bundled_example() -> (LocationDomain, PriorDistribution) {
    const CSV: &str = include_str!("../data/regions50.csv");
    let (domain, prior) = read_domain(CSV.as_bytes(), 1.0, 5).expect("bundled example is valid");
    (domain, prior.expect("bundled example carries weights"))
}

/// The adversary's prior over the domain. Strictly positive, sums to one.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorDistribution {
    probs: Vec<f64>,
}

impl PriorDistribution {
    /// Wraps already-normalized probabilities.
    pub fn new(domain: &LocationDomain, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != domain.len() {
            return Err(Error::PriorMismatch { prior: probs.len(), domain: domain.len() });
        }
        for (i, &p) in probs.iter().enumerate() {
            if !(p.is_finite() && p > 0.0) {
                return Err(Error::NonPositiveWeight { id: domain.id(i), weight: p });
            }
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > PRIOR_SUM_TOLERANCE {
            return Err(Error::InvalidParameter(format!("prior sums to {sum}, not 1")));
        }
        Ok(PriorDistribution { probs })
    }

    /// Normalizes positive weights into a prior.
    pub fn from_weights(domain: &LocationDomain, weights: &[f64]) -> Result<Self> {
        if weights.len() != domain.len() {
            return Err(Error::PriorMismatch { prior: weights.len(), domain: domain.len() });
        }
        if weights.is_empty() {
            return Err(Error::EmptyDomain);
        }
        for (i, &w) in weights.iter().enumerate() {
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::NonPositiveWeight { id: domain.id(i), weight: w });
            }
        }
        let z: f64 = weights.iter().sum();
        let probs = weights.iter().map(|w| w / z).collect();
        Ok(PriorDistribution { probs })
    }

    pub fn uniform(domain: &LocationDomain) -> Result<Self> {
        Self::from_weights(domain, &vec![1.0; domain.len()])
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    #[inline]
    pub fn get(&self, index: usize) -> f64 {
        self.probs[index]
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Draws one weight per location uniformly from `[low, high]`, then normalizes.
pub fn random_prior(
    domain: &LocationDomain,
    low: f64,
    high: f64,
    seed: u64,
) -> Result<PriorDistribution> {
    if !(low > 0.0 && low <= high && high.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "prior range must satisfy 0 < low <= high, got [{low}, {high}]"
        )));
    }
    if domain.is_empty() {
        return Err(Error::EmptyDomain);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<f64> = (0..domain.len()).map(|_| rng.gen_range(low..=high)).collect();
    PriorDistribution::from_weights(domain, &weights)
}
