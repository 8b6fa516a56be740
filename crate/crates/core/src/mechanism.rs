//! Exponential obfuscation mechanisms and pseudo-location sampling.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{LocationDomain, PriorDistribution};
use crate::error::{Error, Result};
use crate::pls::{partition_domain, pive_search_all, DomainPartition, ProtectionLocationSet, SearchParams};

/// Tolerance on row sums accepted by [`ObfuscationMatrix::from_rows`].
pub const ROW_SUM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Pive,
    Uniform,
    Personalized,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Pive, Scheme::Uniform, Scheme::Personalized];

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Pive => "pive",
            Scheme::Uniform => "uniform",
            Scheme::Personalized => "personalized",
        }
    }

    /// Whether the scheme carries a provable per-set guarantee.
    pub fn is_certified(self) -> bool {
        !matches!(self, Scheme::Pive)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pive" => Ok(Scheme::Pive),
            "uniform" => Ok(Scheme::Uniform),
            "personalized" => Ok(Scheme::Personalized),
            other => Err(Error::InvalidParameter(format!("unknown scheme '{other}'"))),
        }
    }
}

/// Row-stochastic matrix `f(x'|x)`: rows are true locations, columns pseudo-locations.
#[derive(Debug, Clone, PartialEq)]
pub struct ObfuscationMatrix {
    scheme: Scheme,
    n: usize,
    probs: Vec<f64>,
    log_probs: Vec<f64>,
    sensitivity_km: Vec<f64>,
    epsilon: Vec<f64>,
}

impl ObfuscationMatrix {
    /// Wraps explicit rows. Used for hand-built fixtures and negative controls.
    pub fn from_rows(scheme: Scheme, rows: Vec<Vec<f64>>, sensitivity_km: Vec<f64>, epsilon: Vec<f64>) -> Result<Self> {
        let n = rows.len();
        if sensitivity_km.len() != n || epsilon.len() != n {
            return Err(Error::InvalidParameter("per-row metadata length mismatch".into()));
        }
        let mut probs = Vec::with_capacity(n * n);
        for (x, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidParameter(format!("row {x} has {} entries, expected {n}", row.len())));
            }
            if row.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
                return Err(Error::InvalidParameter(format!("row {x} has a negative or non-finite entry")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::InvalidParameter(format!("row {x} sums to {sum}")));
            }
            probs.extend_from_slice(row);
        }
        let log_probs = probs.iter().map(|p| p.ln()).collect();
        Ok(ObfuscationMatrix { scheme, n, probs, log_probs, sensitivity_km, epsilon })
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.probs[x * self.n..(x + 1) * self.n]
    }

    pub fn log_row(&self, x: usize) -> &[f64] {
        &self.log_probs[x * self.n..(x + 1) * self.n]
    }

    #[inline]
    pub fn prob(&self, x: usize, x_prime: usize) -> f64 {
        self.probs[x * self.n + x_prime]
    }

    #[inline]
    pub fn log_prob(&self, x: usize, x_prime: usize) -> f64 {
        self.log_probs[x * self.n + x_prime]
    }

    pub fn sensitivity(&self, x: usize) -> f64 {
        self.sensitivity_km[x]
    }

    pub fn sensitivities(&self) -> &[f64] {
        &self.sensitivity_km
    }

    pub fn epsilon(&self, x: usize) -> f64 {
        self.epsilon[x]
    }

    /// Writes the matrix as CSV plus a JSON sidecar next to it.
    pub fn write(&self, domain: &LocationDomain, e_m: f64, csv_path: &Path) -> Result<()> {
        let csv_err = |source| Error::Csv { path: csv_path.to_path_buf(), source };
        let mut w = csv::Writer::from_path(csv_path).map_err(csv_err)?;
        let mut header = vec!["true_location".to_string()];
        header.extend((0..self.n).map(|i| domain.id(i).to_string()));
        w.write_record(&header).map_err(csv_err)?;
        for x in 0..self.n {
            let mut rec = vec![domain.id(x).to_string()];
            rec.extend(self.row(x).iter().map(|p| p.to_string()));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush().map_err(|source| Error::Io { path: csv_path.to_path_buf(), source })?;

        let sidecar = MatrixSidecar {
            scheme: self.scheme,
            epsilon: self.epsilon.first().copied().unwrap_or_default(),
            e_m,
            sensitivities: self.sensitivity_km.clone(),
        };
        let json_path = csv_path.with_extension("json");
        std::fs::write(&json_path, serde_json::to_string_pretty(&sidecar)?)
            .map_err(|source| Error::Io { path: json_path, source })
    }
}

/// Metadata written next to a matrix dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixSidecar {
    pub scheme: Scheme,
    pub epsilon: f64,
    #[serde(rename = "E_m")]
    pub e_m: f64,
    pub sensitivities: Vec<f64>,
}

/// Log-probabilities of one exponential-mechanism row over the full domain.
fn exponential_log_row(domain: &LocationDomain, x: usize, epsilon: f64, sensitivity: f64) -> Vec<f64> {
    let n = domain.len();
    if sensitivity == 0.0 {
        return (0..n).map(|j| if j == x { 0.0 } else { f64::NEG_INFINITY }).collect();
    }
    let scale = epsilon / (2.0 * sensitivity);
    let mut logs: Vec<f64> = (0..n).map(|j| -scale * domain.dist(x, j)).collect();
    // the exponent at x itself is 0, so the largest term is exactly 1
    let lse = logs.iter().map(|a| a.exp()).sum::<f64>().ln();
    logs.iter_mut().for_each(|a| *a -= lse);
    logs
}

fn assemble(domain: &LocationDomain, scheme: Scheme, sensitivity_km: Vec<f64>, epsilon: Vec<f64>) -> ObfuscationMatrix {
    let n = domain.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|x| exponential_log_row(domain, x, epsilon[x], sensitivity_km[x]))
        .collect();
    let log_probs: Vec<f64> = rows.into_iter().flatten().collect();
    let probs = log_probs.iter().map(|l| l.exp()).collect();
    ObfuscationMatrix { scheme, n, probs, log_probs, sensitivity_km, epsilon }
}

/// PIVE: each row uses the diameter of its own protection set.
pub fn pive_matrix_from_sets(domain: &LocationDomain, sets: &[ProtectionLocationSet], epsilon: f64) -> ObfuscationMatrix {
    let sens = sets.iter().map(|s| s.diameter_km).collect();
    assemble(domain, Scheme::Pive, sens, vec![epsilon; domain.len()])
}

/// Uniform: every row uses the largest protection-set diameter.
pub fn uniform_matrix_from_sets(domain: &LocationDomain, sets: &[ProtectionLocationSet], epsilon: f64) -> ObfuscationMatrix {
    let d_max = sets.iter().map(|s| s.diameter_km).fold(0.0, f64::max);
    assemble(domain, Scheme::Uniform, vec![d_max; domain.len()], vec![epsilon; domain.len()])
}

pub fn build_pive_matrix(domain: &LocationDomain, prior: &PriorDistribution, params: &SearchParams) -> Result<ObfuscationMatrix> {
    let sets = pive_search_all(domain, prior, params)?;
    Ok(pive_matrix_from_sets(domain, &sets, params.epsilon))
}

pub fn build_uniform_matrix(domain: &LocationDomain, prior: &PriorDistribution, params: &SearchParams) -> Result<ObfuscationMatrix> {
    let sets = pive_search_all(domain, prior, params)?;
    Ok(uniform_matrix_from_sets(domain, &sets, params.epsilon))
}

/// Scheme selection plus optional per-group privacy levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeConfig {
    pub scheme: Scheme,
    pub params: SearchParams,
    /// One epsilon per partition group; personalized scheme only.
    #[serde(default)]
    pub epsilon_overrides: Option<Vec<f64>>,
}

impl SchemeConfig {
    pub fn new(scheme: Scheme, params: SearchParams) -> Self {
        SchemeConfig { scheme, params, epsilon_overrides: None }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if let Some(over) = &self.epsilon_overrides {
            if self.scheme != Scheme::Personalized {
                return Err(Error::InvalidParameter("epsilon overrides require the personalized scheme".into()));
            }
            if let Some(bad) = over.iter().find(|e| !(e.is_finite() && **e > 0.0)) {
                return Err(Error::InvalidParameter(format!("epsilon override must be > 0, got {bad}")));
            }
        }
        Ok(())
    }
}

/// Personalized: every row uses the diameter (and epsilon) of its group.
///
/// With overrides, each group must still satisfy `E' >= e^{eps_k}·E_m`.
pub fn build_personalized_matrix(
    domain: &LocationDomain,
    partition: &DomainPartition,
    config: &SchemeConfig,
) -> Result<ObfuscationMatrix> {
    config.validate()?;
    let eps_of_group: Vec<f64> = match &config.epsilon_overrides {
        Some(over) => {
            if over.len() != partition.len() {
                return Err(Error::InvalidParameter(format!(
                    "{} epsilon overrides for {} groups",
                    over.len(),
                    partition.len()
                )));
            }
            for (g, &eps) in partition.groups.iter().zip(over) {
                let threshold = eps.exp() * config.params.e_m;
                if g.e_prime_score < threshold {
                    return Err(Error::InvalidParameter(format!(
                        "group starting at location {} has E' = {:.6} below e^{eps}·E_m = {threshold:.6}",
                        domain.id(g.members[0]),
                        g.e_prime_score
                    )));
                }
            }
            over.clone()
        }
        None => vec![config.params.epsilon; partition.len()],
    };
    let mut sens = vec![0.0; domain.len()];
    let mut eps = vec![0.0; domain.len()];
    for x in 0..domain.len() {
        let k = partition.group_of(x);
        sens[x] = partition.groups[k].diameter_km;
        eps[x] = eps_of_group[k];
    }
    Ok(assemble(domain, Scheme::Personalized, sens, eps))
}

/// Protection structure that accompanies a built matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum Protection {
    /// One (possibly overlapping) set per location, indexed by location.
    PerLocation(Vec<ProtectionLocationSet>),
    Partition(DomainPartition),
}

impl Protection {
    /// Distinct protection sets, in a stable order.
    pub fn sets(&self) -> Vec<&ProtectionLocationSet> {
        match self {
            Protection::PerLocation(sets) => {
                let mut out: Vec<&ProtectionLocationSet> = Vec::new();
                for s in sets {
                    if !out.iter().any(|o| o.members == s.members) {
                        out.push(s);
                    }
                }
                out
            }
            Protection::Partition(p) => p.groups.iter().collect(),
        }
    }

    /// The set protecting location `x`.
    pub fn set_of(&self, x: usize) -> &ProtectionLocationSet {
        match self {
            Protection::PerLocation(sets) => &sets[x],
            Protection::Partition(p) => &p.groups[p.group_of(x)],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuiltScheme {
    pub matrix: ObfuscationMatrix,
    pub protection: Protection,
}

/// Runs the set search for the scheme and builds its matrix.
pub fn build_scheme(domain: &LocationDomain, prior: &PriorDistribution, config: &SchemeConfig) -> Result<BuiltScheme> {
    config.validate()?;
    let eps = config.params.epsilon;
    Ok(match config.scheme {
        Scheme::Pive => {
            let sets = pive_search_all(domain, prior, &config.params)?;
            BuiltScheme { matrix: pive_matrix_from_sets(domain, &sets, eps), protection: Protection::PerLocation(sets) }
        }
        Scheme::Uniform => {
            let sets = pive_search_all(domain, prior, &config.params)?;
            BuiltScheme { matrix: uniform_matrix_from_sets(domain, &sets, eps), protection: Protection::PerLocation(sets) }
        }
        Scheme::Personalized => {
            let partition = partition_domain(domain, prior, &config.params)?;
            let matrix = build_personalized_matrix(domain, &partition, config)?;
            BuiltScheme { matrix, protection: Protection::Partition(partition) }
        }
    })
}

fn draw(row: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (j, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return j;
        }
    }
    // rounding left u above the final cumulative sum: take the last supported column
    row.iter().rposition(|&p| p > 0.0).unwrap_or(row.len() - 1)
}

/// Draws one pseudo-location index for `true_location`.
pub fn sample_pseudo(matrix: &ObfuscationMatrix, true_location: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    draw(matrix.row(true_location), &mut rng)
}

/// Draws `count` pseudo-location indices from one seeded stream.
pub fn sample_pseudo_many(matrix: &ObfuscationMatrix, true_location: usize, count: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let row = matrix.row(true_location);
    (0..count).map(|_| draw(row, &mut rng)).collect()
}
