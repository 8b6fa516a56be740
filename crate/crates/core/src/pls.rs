//! Protection location sets: error scores, the per-location window search
//! and the disjoint partitioner used by the personalized scheme.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{LocationDomain, PriorDistribution};
use crate::error::{Error, Result};

/// Relative slack used when comparing diameters for ties.
const DIAMETER_TIE_RTOL: f64 = 1e-9;

/// Order among windows of equal (minimal) diameter.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieBreak {
    /// Fewer members first, then the smaller left endpoint rank.
    #[default]
    FewestLeftmost,
    /// More members first, then the larger left endpoint rank. On the bundled
    /// layout this order yields the reference set for every location.
    MostRightmost,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchParams {
    pub epsilon: f64,
    /// Minimum inference-error threshold in km. For the uniform scheme this
    /// doubles as the local threshold on PLS-restricted error.
    pub e_m: f64,
    /// Half-width of the rank window searched around each location.
    pub range: usize,
    #[serde(default)]
    pub tie_break: TieBreak,
}

impl SearchParams {
    pub fn new(epsilon: f64, e_m: f64, range: usize) -> Result<Self> {
        let p = SearchParams { epsilon, e_m, range, tie_break: TieBreak::default() };
        p.validate()?;
        Ok(p)
    }

    pub fn with_tie_break(mut self, tie_break: TieBreak) -> Self {
        self.tie_break = tie_break;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::InvalidParameter(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if !(self.e_m.is_finite() && self.e_m >= 0.0) {
            return Err(Error::InvalidParameter(format!("E_m must be >= 0, got {}", self.e_m)));
        }
        if self.range == 0 {
            return Err(Error::InvalidParameter("range must be positive".into()));
        }
        Ok(())
    }

    /// The feasibility threshold `e^epsilon * E_m`.
    pub fn threshold(&self) -> f64 {
        self.epsilon.exp() * self.e_m
    }
}

/// A set of locations contiguous in Hilbert rank, with its scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtectionLocationSet {
    /// Location indices in rank order.
    pub members: Vec<usize>,
    pub diameter_km: f64,
    pub e_score: f64,
    pub e_prime_score: f64,
}

impl ProtectionLocationSet {
    pub fn from_members(members: Vec<usize>, domain: &LocationDomain, prior: &PriorDistribution) -> Self {
        let diameter_km = domain.diameter(&members);
        let e_score = e_score(&members, prior, domain);
        let e_prime_score = e_prime_score(&members, prior, domain);
        ProtectionLocationSet { members, diameter_km, e_score, e_prime_score }
    }

    pub fn contains(&self, index: usize) -> bool {
        self.members.contains(&index)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn ids(&self, domain: &LocationDomain) -> Vec<u32> {
        self.members.iter().map(|&i| domain.id(i)).collect()
    }
}

fn weighted_cost(center: usize, members: &[usize], prior: &PriorDistribution, domain: &LocationDomain) -> f64 {
    members.iter().map(|&x| prior.get(x) * domain.dist(center, x)).sum()
}

fn min_weighted_cost<I>(candidates: I, members: &[usize], prior: &PriorDistribution, domain: &LocationDomain) -> f64
where
    I: IntoIterator<Item = usize>,
{
    let mass: f64 = members.iter().map(|&x| prior.get(x)).sum();
    let best = candidates
        .into_iter()
        .map(|c| weighted_cost(c, members, prior, domain))
        .fold(f64::INFINITY, f64::min);
    best / mass
}

/// E(Φ): prior-weighted expected distance to the best guess inside Φ.
pub fn e_score(members: &[usize], prior: &PriorDistribution, domain: &LocationDomain) -> f64 {
    assert!(!members.is_empty(), "E is undefined on an empty set");
    min_weighted_cost(members.iter().copied(), members, prior, domain)
}

/// E'(Φ): as [`e_score`] but the guess ranges over the whole domain.
pub fn e_prime_score(members: &[usize], prior: &PriorDistribution, domain: &LocationDomain) -> f64 {
    assert!(!members.is_empty(), "E' is undefined on an empty set");
    min_weighted_cost(0..domain.len(), members, prior, domain)
}

fn diameter_cmp(a: f64, b: f64) -> Ordering {
    if (a - b).abs() <= DIAMETER_TIE_RTOL * a.abs().max(b.abs()) {
        Ordering::Equal
    } else {
        a.total_cmp(&b)
    }
}

/// Window candidate: rank bounds plus diameter.
#[derive(Debug, Clone, Copy)]
struct Window {
    lo: usize,
    hi: usize,
    diameter: f64,
}

impl Window {
    fn better_than(&self, other: &Window, tie: TieBreak) -> bool {
        let size = |w: &Window| w.hi - w.lo;
        let ord = diameter_cmp(self.diameter, other.diameter).then_with(|| match tie {
            TieBreak::FewestLeftmost => size(self).cmp(&size(other)).then(self.lo.cmp(&other.lo)),
            TieBreak::MostRightmost => size(other).cmp(&size(self)).then(other.lo.cmp(&self.lo)),
        });
        ord == Ordering::Less
    }
}

/// Finds the smallest-diameter rank window around `x` with `E >= e^ε·E_m`.
pub fn pive_search(
    domain: &LocationDomain,
    prior: &PriorDistribution,
    x: usize,
    params: &SearchParams,
) -> Result<ProtectionLocationSet> {
    params.validate()?;
    let ranks = domain.ranks();
    let n = domain.len();
    let r = ranks.rank(x);
    let threshold = params.threshold();
    let lo_min = r.saturating_sub(params.range);
    let hi_max = (r + params.range).min(n - 1);

    let mut best: Option<Window> = None;
    for lo in lo_min..=r {
        for hi in r..=hi_max {
            let members = &ranks.order()[lo..=hi];
            let w = Window { lo, hi, diameter: domain.diameter(members) };
            if best.as_ref().is_some_and(|b| !w.better_than(b, params.tie_break)) {
                continue;
            }
            if e_score(members, prior, domain) >= threshold {
                best = Some(w);
            }
        }
    }
    let w = best.ok_or(Error::NoFeasibleSet { id: domain.id(x), range: params.range, threshold })?;
    Ok(ProtectionLocationSet::from_members(ranks.order()[w.lo..=w.hi].to_vec(), domain, prior))
}

/// Runs [`pive_search`] for every location; entry `i` is the PLS of location `i`.
pub fn pive_search_all(
    domain: &LocationDomain,
    prior: &PriorDistribution,
    params: &SearchParams,
) -> Result<Vec<ProtectionLocationSet>> {
    (0..domain.len())
        .into_par_iter()
        .map(|x| pive_search(domain, prior, x, params))
        .collect()
}

/// Disjoint, rank-contiguous groups covering the domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainPartition {
    pub groups: Vec<ProtectionLocationSet>,
    group_of: Vec<usize>,
}

impl DomainPartition {
    /// Builds a partition from explicit member lists. Groups must be
    /// non-empty, pairwise disjoint and cover the domain.
    pub fn from_groups(
        groups: Vec<Vec<usize>>,
        domain: &LocationDomain,
        prior: &PriorDistribution,
    ) -> Result<Self> {
        let mut group_of = vec![usize::MAX; domain.len()];
        for (k, g) in groups.iter().enumerate() {
            if g.is_empty() {
                return Err(Error::InvalidParameter(format!("group {k} is empty")));
            }
            for &x in g {
                if x >= domain.len() {
                    return Err(Error::InvalidParameter(format!("location index {x} out of range")));
                }
                if group_of[x] != usize::MAX {
                    return Err(Error::InvalidParameter(format!(
                        "location {} appears in two groups",
                        domain.id(x)
                    )));
                }
                group_of[x] = k;
            }
        }
        if let Some(x) = group_of.iter().position(|&k| k == usize::MAX) {
            return Err(Error::Uncovered(domain.id(x)));
        }
        let groups = groups
            .into_iter()
            .map(|g| ProtectionLocationSet::from_members(g, domain, prior))
            .collect();
        Ok(DomainPartition { groups, group_of })
    }

    /// Index of the group holding location `x`.
    pub fn group_of(&self, x: usize) -> usize {
        self.group_of[x]
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn min_diameter(&self) -> f64 {
        self.groups.iter().map(|g| g.diameter_km).fold(f64::INFINITY, f64::min)
    }

    pub fn max_diameter(&self) -> f64 {
        self.groups.iter().map(|g| g.diameter_km).fold(0.0, f64::max)
    }
}

/// Greedy left-to-right split along the Hilbert order: a group is closed as
/// soon as `E'(group) >= e^ε·E_m`. A failing tail is merged backwards until
/// the merged group passes.
pub fn partition_domain(
    domain: &LocationDomain,
    prior: &PriorDistribution,
    params: &SearchParams,
) -> Result<DomainPartition> {
    params.validate()?;
    if domain.is_empty() {
        return Err(Error::EmptyDomain);
    }
    let threshold = params.threshold();
    let order = domain.ranks().order();
    let whole = e_prime_score(order, prior, domain);
    if whole < threshold {
        return Err(Error::Infeasible { whole, threshold });
    }

    // rank bounds [start, end) of closed groups
    let mut bounds: Vec<(usize, usize)> = Vec::new();
    let mut start = 0;
    for end in 1..=order.len() {
        if e_prime_score(&order[start..end], prior, domain) >= threshold {
            bounds.push((start, end));
            start = end;
        }
    }
    let mut tail_start = start;
    while tail_start < order.len() {
        // E'(X) passes, so at worst everything collapses into one group
        let (prev_start, _) = bounds.pop().expect("whole domain is feasible");
        tail_start = prev_start;
        if e_prime_score(&order[tail_start..], prior, domain) >= threshold {
            bounds.push((tail_start, order.len()));
            break;
        }
    }

    let groups = bounds.iter().map(|&(s, e)| order[s..e].to_vec()).collect();
    DomainPartition::from_groups(groups, domain, prior)
}
