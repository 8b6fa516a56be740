//! Bayesian adversary and the privacy / utility metrics built on it.
//!
//! All quantities are exact sums over the discrete domain. Ties in the
//! adversary's argmin resolve to the smallest location id.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{LocationDomain, PriorDistribution};
use crate::error::{Error, Result};
use crate::mechanism::{ObfuscationMatrix, Scheme};
use crate::pls::ProtectionLocationSet;

/// Slack below which two error values are treated as equal when counting
/// violations of the claimed lower bound.
const VIOLATION_SLACK: f64 = 1e-12;

/// Posterior over true locations given one observed pseudo-location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorRow {
    pub x_prime: usize,
    pub probs: Vec<f64>,
}

/// `Pr(x')`: marginal probability of observing `x_prime`.
pub fn evidence(matrix: &ObfuscationMatrix, prior: &PriorDistribution, x_prime: usize) -> f64 {
    (0..matrix.len()).map(|x| prior.get(x) * matrix.prob(x, x_prime)).sum()
}

pub fn posterior(matrix: &ObfuscationMatrix, prior: &PriorDistribution, domain: &LocationDomain, x_prime: usize) -> Result<PosteriorRow> {
    let joint: Vec<f64> = (0..matrix.len()).map(|x| prior.get(x) * matrix.prob(x, x_prime)).collect();
    let z: f64 = joint.iter().sum();
    if z <= 0.0 {
        return Err(Error::ZeroEvidence(domain.id(x_prime)));
    }
    Ok(PosteriorRow { x_prime, probs: joint.into_iter().map(|j| j / z).collect() })
}

/// Best guess over `candidates` for (unnormalized) location weights, with its cost.
fn best_guess<I>(weights: &[f64], candidates: I, domain: &LocationDomain) -> (usize, f64)
where
    I: IntoIterator<Item = usize>,
{
    let mut best = (usize::MAX, f64::INFINITY);
    for g in candidates {
        let cost: f64 = weights
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > 0.0)
            .map(|(x, &w)| w * domain.dist(g, x))
            .sum();
        let better = cost < best.1 || (cost == best.1 && domain.id(g) < domain.id(best.0));
        if better {
            best = (g, cost);
        }
    }
    best
}

/// The adversary's optimal guess and its expected error under `posterior`.
pub fn optimal_attack(posterior: &[f64], domain: &LocationDomain) -> (usize, f64) {
    best_guess(posterior, 0..domain.len(), domain)
}

/// ExpEr(x') for every pseudo-location.
pub fn conditional_errors(matrix: &ObfuscationMatrix, prior: &PriorDistribution, domain: &LocationDomain) -> Result<Vec<f64>> {
    (0..domain.len())
        .into_par_iter()
        .map(|xp| posterior(matrix, prior, domain, xp).map(|post| optimal_attack(&post.probs, domain).1))
        .collect()
}

/// ExpErr: the unconditional expected inference error.
pub fn expected_error(matrix: &ObfuscationMatrix, prior: &PriorDistribution, domain: &LocationDomain) -> f64 {
    (0..domain.len())
        .into_par_iter()
        .map(|xp| {
            let joint: Vec<f64> = (0..domain.len()).map(|x| prior.get(x) * matrix.prob(x, xp)).collect();
            best_guess(&joint, 0..domain.len(), domain).1
        })
        .collect::<Vec<_>>()
        .into_iter()
        .sum()
}

/// QLoss: expected distance between true and reported location.
pub fn quality_loss(matrix: &ObfuscationMatrix, prior: &PriorDistribution, domain: &LocationDomain) -> f64 {
    let mut total = 0.0;
    for x in 0..domain.len() {
        let row: f64 = matrix.row(x).iter().enumerate().map(|(xp, &f)| f * domain.dist(xp, x)).sum();
        total += prior.get(x) * row;
    }
    total
}

fn set_weights(members: &[usize], matrix: &ObfuscationMatrix, prior: &PriorDistribution, x_prime: usize) -> Vec<f64> {
    let mut w = vec![0.0; matrix.len()];
    for &x in members {
        w[x] = prior.get(x) * matrix.prob(x, x_prime);
    }
    w
}

fn set_error<I>(
    members: &[usize],
    matrix: &ObfuscationMatrix,
    prior: &PriorDistribution,
    domain: &LocationDomain,
    x_prime: usize,
    candidates: I,
) -> Result<f64>
where
    I: IntoIterator<Item = usize>,
{
    let w = set_weights(members, matrix, prior, x_prime);
    let z: f64 = w.iter().sum();
    if z <= 0.0 {
        return Err(Error::ZeroEvidence(domain.id(x_prime)));
    }
    Ok(best_guess(&w, candidates, domain).1 / z)
}

/// Error after normalizing the posterior within `members`; guesses range over the domain.
pub fn dop_er(members: &[usize], matrix: &ObfuscationMatrix, prior: &PriorDistribution, domain: &LocationDomain, x_prime: usize) -> Result<f64> {
    set_error(members, matrix, prior, domain, x_prime, 0..domain.len())
}

/// As [`dop_er`] but the guess is restricted to `members`.
pub fn piv_er(members: &[usize], matrix: &ObfuscationMatrix, prior: &PriorDistribution, domain: &LocationDomain, x_prime: usize) -> Result<f64> {
    set_error(members, matrix, prior, domain, x_prime, members.iter().copied())
}

/// Joint mass `Pr(x, x')` on which the in-set error exceeds the true
/// conditional error, i.e. where the claimed lower bound is not attained.
pub fn violation_mass(
    matrix: &ObfuscationMatrix,
    prior: &PriorDistribution,
    domain: &LocationDomain,
    sets: &[ProtectionLocationSet],
) -> Result<f64> {
    let exp_er = conditional_errors(matrix, prior, domain)?;
    violation_mass_with(matrix, prior, domain, sets, &exp_er)
}

fn violation_mass_with(
    matrix: &ObfuscationMatrix,
    prior: &PriorDistribution,
    domain: &LocationDomain,
    sets: &[ProtectionLocationSet],
    exp_er: &[f64],
) -> Result<f64> {
    let per_x: Vec<f64> = (0..domain.len())
        .into_par_iter()
        .map(|x| {
            let mut mass = 0.0;
            for (xp, &err) in exp_er.iter().enumerate() {
                let joint = prior.get(x) * matrix.prob(x, xp);
                if joint == 0.0 {
                    continue;
                }
                let dop = dop_er(&sets[x].members, matrix, prior, domain, xp)?;
                if dop > err + VIOLATION_SLACK * err.max(1.0) {
                    mass += joint;
                }
            }
            Ok(mass)
        })
        .collect::<Result<_>>()?;
    Ok(per_x.iter().sum())
}

/// All metrics for one matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// ExpEr(x') by pseudo-location index.
    pub exp_er: Vec<f64>,
    pub exp_err: f64,
    pub qloss: f64,
    pub min_exp_er: f64,
    /// Present when per-location protection sets are supplied.
    pub violation_mass: Option<f64>,
    /// DopEr and PivEr by `[set][x']` for the supplied sets.
    pub dop_er: Vec<Vec<f64>>,
    pub piv_er: Vec<Vec<f64>>,
}

impl MetricsReport {
    /// `per_location` enables the violation mass; `sets` are the distinct
    /// protection sets whose in-set errors are tabulated.
    pub fn compute(
        matrix: &ObfuscationMatrix,
        prior: &PriorDistribution,
        domain: &LocationDomain,
        sets: &[&ProtectionLocationSet],
        per_location: Option<&[ProtectionLocationSet]>,
    ) -> Result<Self> {
        let exp_er = conditional_errors(matrix, prior, domain)?;
        let exp_err = expected_error(matrix, prior, domain);
        let qloss = quality_loss(matrix, prior, domain);
        let min_exp_er = exp_er.iter().copied().fold(f64::INFINITY, f64::min);
        let violation_mass = per_location
            .map(|s| violation_mass_with(matrix, prior, domain, s, &exp_er))
            .transpose()?;
        let table = |f: fn(&[usize], &ObfuscationMatrix, &PriorDistribution, &LocationDomain, usize) -> Result<f64>| {
            sets.par_iter()
                .map(|s| (0..domain.len()).map(|xp| f(&s.members, matrix, prior, domain, xp)).collect::<Result<Vec<_>>>())
                .collect::<Result<Vec<_>>>()
        };
        let dop_er = table(dop_er)?;
        let piv_er = table(piv_er)?;
        Ok(MetricsReport { exp_er, exp_err, qloss, min_exp_er, violation_mass, dop_er, piv_er })
    }

    /// `Σ Pr(x')·ExpEr(x')`, which must agree with `exp_err`.
    pub fn exp_err_from_conditionals(&self, matrix: &ObfuscationMatrix, prior: &PriorDistribution) -> f64 {
        self.exp_er.iter().enumerate().map(|(xp, e)| evidence(matrix, prior, xp) * e).sum()
    }
}

/// One line of the metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub scheme: Scheme,
    pub epsilon: f64,
    #[serde(rename = "E_m")]
    pub e_m: f64,
    #[serde(rename = "ExpErr")]
    pub exp_err: f64,
    #[serde(rename = "QLoss")]
    pub qloss: f64,
    #[serde(rename = "min_ExpEr_xprime")]
    pub min_exp_er: f64,
    pub violation_mass: Option<f64>,
}

pub fn write_metrics_csv(rows: &[MetricsRow], path: &Path) -> Result<()> {
    let err = |source| Error::Csv { path: path.to_path_buf(), source };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    for r in rows {
        w.serialize(r).map_err(err)?;
    }
    w.flush().map_err(|source| Error::Io { path: path.to_path_buf(), source })
}
