//! Exhaustive ratio audits over `(x, y, x')` triples.
//!
//! Ratios are evaluated in log space. A check passes when the largest
//! observed ratio is at most the bound times `1 + 1e-9`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{LocationDomain, PriorDistribution};
use crate::error::Result;
use crate::mechanism::ObfuscationMatrix;
use crate::pls::{pive_search_all, DomainPartition, ProtectionLocationSet, SearchParams};

pub const RELATIVE_SLACK: f64 = 1e-9;
pub const WITNESS_CAP: usize = 100;

/// What a report covers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AuditScope {
    Set { members: Vec<u32> },
    GroupPair { first: Vec<u32>, second: Vec<u32> },
    Domain,
    Circles { diameter_km: f64, count: usize },
}

/// A triple whose ratio `f(x'|x)/f(x'|y)` exceeded the bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub x: u32,
    pub y: u32,
    pub x_prime: u32,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub check: String,
    pub scope: AuditScope,
    /// Largest observed ratio (for geo checks, divided by `e^{eps_g·d(x,y)}`).
    pub max_ratio: f64,
    pub bound: f64,
    pub pass: bool,
    /// Number of violating triples; `witnesses` holds at most [`WITNESS_CAP`].
    pub violations: usize,
    pub witnesses: Vec<Witness>,
    /// Smallest deviation that would make a geo check pass.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_theta: Option<f64>,
}

/// Running maximum and violations of one scan.
#[derive(Debug, Clone, Default)]
struct Scan {
    max_log: f64,
    violations: usize,
    witnesses: Vec<Witness>,
}

impl Scan {
    fn merge(mut self, other: Scan) -> Scan {
        self.max_log = self.max_log.max(other.max_log);
        self.violations += other.violations;
        let room = WITNESS_CAP.saturating_sub(self.witnesses.len());
        self.witnesses.extend(other.witnesses.into_iter().take(room));
        self
    }
}

/// Scans every `x ∈ xs`, `y ∈ ys`, `x'` for `ln f(x'|x) − ln f(x'|y) − shift(x, y)`
/// against `log_bound`.
fn scan<S>(matrix: &ObfuscationMatrix, domain: &LocationDomain, xs: &[usize], ys: &[usize], log_bound: f64, shift: S) -> Scan
where
    S: Fn(usize, usize) -> f64 + Sync,
{
    let limit = log_bound + RELATIVE_SLACK.ln_1p();
    let parts: Vec<Scan> = xs
        .par_iter()
        .map(|&x| {
            let mut acc = Scan { max_log: f64::NEG_INFINITY, ..Scan::default() };
            for &y in ys {
                if x == y {
                    continue;
                }
                let s = shift(x, y);
                for xp in 0..matrix.len() {
                    let (lx, ly) = (matrix.log_prob(x, xp), matrix.log_prob(y, xp));
                    if lx == f64::NEG_INFINITY {
                        // 0/anything never exceeds a bound
                        continue;
                    }
                    let log_ratio = lx - ly;
                    let excess = log_ratio - s;
                    acc.max_log = acc.max_log.max(excess);
                    if excess > limit {
                        acc.violations += 1;
                        if acc.witnesses.len() < WITNESS_CAP {
                            acc.witnesses.push(Witness {
                                x: domain.id(x),
                                y: domain.id(y),
                                x_prime: domain.id(xp),
                                ratio: log_ratio.exp(),
                            });
                        }
                    }
                }
            }
            acc
        })
        .collect();
    parts
        .into_iter()
        .fold(Scan { max_log: f64::NEG_INFINITY, ..Scan::default() }, Scan::merge)
}

fn report(check: &str, scope: AuditScope, scan: Scan, log_bound: f64) -> AuditReport {
    // fewer than two rows: no pair to compare, every ratio is trivially 1
    let max_log = if scan.max_log == f64::NEG_INFINITY { 0.0 } else { scan.max_log };
    AuditReport {
        check: check.to_string(),
        scope,
        max_ratio: max_log.exp(),
        bound: log_bound.exp(),
        pass: scan.violations == 0,
        violations: scan.violations,
        witnesses: scan.witnesses,
        min_theta: None,
    }
}

fn ids(domain: &LocationDomain, members: &[usize]) -> Vec<u32> {
    members.iter().map(|&i| domain.id(i)).collect()
}

/// ε-DP on a set: `f(x'|x) <= e^ε f(x'|y)` for all `x, y` in `members`.
pub fn check_dp_on_set(matrix: &ObfuscationMatrix, domain: &LocationDomain, members: &[usize], epsilon: f64) -> AuditReport {
    let s = scan(matrix, domain, members, members, epsilon, |_, _| 0.0);
    report("dp", AuditScope::Set { members: ids(domain, members) }, s, epsilon)
}

/// DP over the whole domain against `e^{log_bound}`.
pub fn check_dp_on_domain(matrix: &ObfuscationMatrix, domain: &LocationDomain, log_bound: f64) -> AuditReport {
    let all: Vec<usize> = (0..domain.len()).collect();
    let s = scan(matrix, domain, &all, &all, log_bound, |_, _| 0.0);
    report("dp-global", AuditScope::Domain, s, log_bound)
}

/// Geo-indistinguishability within a set:
/// `f(x'|x) <= e^{eps_g (d(x,y) + theta)} f(x'|y)`.
pub fn check_geo_indist(
    matrix: &ObfuscationMatrix,
    domain: &LocationDomain,
    members: &[usize],
    epsilon_g: f64,
    theta: f64,
) -> AuditReport {
    let log_bound = epsilon_g * theta;
    let s = scan(matrix, domain, members, members, log_bound, |x, y| epsilon_g * domain.dist(x, y));
    let mut r = report("geo", AuditScope::Set { members: ids(domain, members) }, s, log_bound);
    // the check passes at theta exactly when max excess <= eps_g·theta
    r.min_theta = Some((r.max_ratio.ln() / epsilon_g).max(0.0));
    r
}

/// Pairwise and global reports for a partitioned matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossPlsReport {
    pub pairwise: Vec<AuditReport>,
    pub global: AuditReport,
    pub pass: bool,
}

/// Across groups `i != j`: ratio at most `exp(ε/2·(D(X)/D_i + D(X)/D_j))`;
/// over the whole domain: at most `exp(ε·D(X)/D_min)`.
pub fn check_cross_pls(matrix: &ObfuscationMatrix, domain: &LocationDomain, partition: &DomainPartition, epsilon: f64) -> CrossPlsReport {
    let d_x = domain.domain_diameter();
    let scale = |d: f64| if d_x == 0.0 { 0.0 } else { d_x / d };
    let mut pairwise = Vec::new();
    for (i, gi) in partition.groups.iter().enumerate() {
        for (j, gj) in partition.groups.iter().enumerate() {
            if i == j {
                continue;
            }
            let log_bound = epsilon / 2.0 * (scale(gi.diameter_km) + scale(gj.diameter_km));
            let s = scan(matrix, domain, &gi.members, &gj.members, log_bound, |_, _| 0.0);
            let scope = AuditScope::GroupPair { first: ids(domain, &gi.members), second: ids(domain, &gj.members) };
            pairwise.push(report("dp-cross", scope, s, log_bound));
        }
    }
    let global = check_dp_on_domain(matrix, domain, epsilon * scale(partition.min_diameter()));
    let pass = global.pass && pairwise.iter().all(|r| r.pass);
    CrossPlsReport { pairwise, global, pass }
}

/// Whole-domain bound `exp(ε·D(X)/D_max)` for the uniform scheme.
pub fn check_uniform_global(matrix: &ObfuscationMatrix, domain: &LocationDomain, epsilon: f64, d_max: f64) -> AuditReport {
    let d_x = domain.domain_diameter();
    let log_bound = if d_x == 0.0 { 0.0 } else { epsilon * d_x / d_max };
    check_dp_on_domain(matrix, domain, log_bound)
}

/// ε-DP on every set of locations inside a circle of diameter `d_max`
/// centred on a domain location.
pub fn check_circle_sets(matrix: &ObfuscationMatrix, domain: &LocationDomain, epsilon: f64, d_max: f64) -> AuditReport {
    let radius = d_max / 2.0 * (1.0 + RELATIVE_SLACK);
    let mut total = Scan { max_log: f64::NEG_INFINITY, ..Scan::default() };
    for c in 0..domain.len() {
        let inside: Vec<usize> = (0..domain.len()).filter(|&x| domain.dist(c, x) <= radius).collect();
        total = total.merge(scan(matrix, domain, &inside, &inside, epsilon, |_, _| 0.0));
    }
    report("dp-circles", AuditScope::Circles { diameter_km: d_max, count: domain.len() }, total, epsilon)
}

/// Locations `y ∈ Φ(x)` whose own set differs from `Φ(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntersectionWitness {
    pub x: u32,
    pub y: u32,
    pub diameter_x: f64,
    pub diameter_y: f64,
}

pub fn intersecting_sets_from(domain: &LocationDomain, sets: &[ProtectionLocationSet]) -> Vec<IntersectionWitness> {
    let mut out = Vec::new();
    for (x, sx) in sets.iter().enumerate() {
        for &y in &sx.members {
            if y != x && sets[y].members != sx.members {
                out.push(IntersectionWitness {
                    x: domain.id(x),
                    y: domain.id(y),
                    diameter_x: sx.diameter_km,
                    diameter_y: sets[y].diameter_km,
                });
            }
        }
    }
    out
}

pub fn find_intersecting_sets(domain: &LocationDomain, prior: &PriorDistribution, params: &SearchParams) -> Result<Vec<IntersectionWitness>> {
    let sets = pive_search_all(domain, prior, params)?;
    Ok(intersecting_sets_from(domain, &sets))
}
