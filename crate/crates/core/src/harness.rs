//! Experiment driver: configuration, epsilon sweeps, the per-location set
//! table and the violation demonstration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audit::{
    check_circle_sets, check_cross_pls, check_dp_on_set, check_geo_indist, check_uniform_global, intersecting_sets_from,
    AuditReport, CrossPlsReport, IntersectionWitness, Witness,
};
use crate::domain::{bundled_example, load_domain, load_domain_json, random_prior, LocationDomain, PriorDistribution};
use crate::error::{Error, Result};
use crate::mechanism::{build_scheme, BuiltScheme, Protection, Scheme, SchemeConfig};
use crate::metrics::{conditional_errors, expected_error, quality_loss, violation_mass, MetricsReport};
use crate::pls::{partition_domain, pive_search_all, ProtectionLocationSet, SearchParams, TieBreak};

pub const DEFAULT_EPSILONS: [f64; 6] = [0.4, 0.6, 0.8, 1.0, 1.2, 1.4];

/// Where the adversary's prior comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorSource {
    /// Weights stored with the domain (CSV weight column or JSON prior).
    #[default]
    File,
    Uniform,
    /// Uniform draws in `[low, high]`, normalized. Falls back to the run seed.
    Random {
        low: f64,
        high: f64,
        #[serde(default)]
        seed: Option<u64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Regions CSV or domain JSON; the bundled example when absent.
    pub domain: Option<PathBuf>,
    pub cell_size_km: f64,
    pub order: u32,
    pub prior: PriorSource,
    pub schemes: Vec<Scheme>,
    /// Privacy level for single-point commands.
    pub epsilon: f64,
    /// Grid used by the sweep.
    pub epsilons: Vec<f64>,
    /// Error threshold; also serves as the local threshold of the uniform scheme.
    #[serde(alias = "E_m", alias = "e_m_tilde")]
    pub e_m: f64,
    pub range: usize,
    pub tie_break: TieBreak,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            domain: None,
            cell_size_km: 1.0,
            order: 5,
            prior: PriorSource::File,
            schemes: Scheme::ALL.to_vec(),
            epsilon: 1.0,
            epsilons: DEFAULT_EPSILONS.to_vec(),
            e_m: 0.15,
            range: 4,
            tie_break: TieBreak::default(),
            output_dir: PathBuf::from("out"),
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schemes.is_empty() {
            return Err(Error::InvalidParameter("at least one scheme is required".into()));
        }
        if self.epsilons.is_empty() {
            return Err(Error::InvalidParameter("epsilon grid is empty".into()));
        }
        for &e in self.epsilons.iter().chain([&self.epsilon]) {
            if !(e.is_finite() && e > 0.0) {
                return Err(Error::InvalidParameter(format!("epsilon must be > 0, got {e}")));
            }
        }
        self.params(self.epsilon).map(|_| ())
    }

    pub fn params(&self, epsilon: f64) -> Result<SearchParams> {
        Ok(SearchParams::new(epsilon, self.e_m, self.range)?.with_tie_break(self.tie_break))
    }

    /// Loads the domain and prior described by the config.
    pub fn resolve(&self) -> Result<(LocationDomain, PriorDistribution)> {
        let (domain, stored) = match &self.domain {
            None => {
                let (d, p) = bundled_example();
                (d, Some(p))
            }
            Some(path) if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) => load_domain_json(path)?,
            Some(path) => load_domain(path, self.cell_size_km, self.order)?,
        };
        let prior = match &self.prior {
            PriorSource::File => stored.ok_or_else(|| {
                Error::InvalidParameter("domain file carries no prior weights; choose a uniform or random prior".into())
            })?,
            PriorSource::Uniform => PriorDistribution::uniform(&domain)?,
            PriorSource::Random { low, high, seed } => random_prior(&domain, *low, *high, seed.unwrap_or(self.seed))?,
        };
        Ok((domain, prior))
    }
}

/// One row of `sweep.csv`. Metric fields are empty when the point failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub scheme: Scheme,
    pub epsilon: f64,
    #[serde(rename = "E_m")]
    pub e_m: f64,
    #[serde(rename = "ExpErr")]
    pub exp_err: Option<f64>,
    #[serde(rename = "QLoss")]
    pub qloss: Option<f64>,
    #[serde(rename = "min_ExpEr")]
    pub min_exp_er: Option<f64>,
    pub violation_mass: Option<f64>,
    pub dp_pass: Option<bool>,
    pub audit_max_ratio: Option<f64>,
}

/// Contents of `audit_<scheme>_<eps>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointAudit {
    pub scheme: Scheme,
    pub epsilon: f64,
    #[serde(rename = "E_m")]
    pub e_m: f64,
    pub pass: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub set_reports: Vec<AuditReport>,
    pub geo_reports: Vec<AuditReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub global: Option<AuditReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub circles: Option<AuditReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cross: Option<CrossPlsReport>,
}

impl PointAudit {
    fn failed(scheme: Scheme, epsilon: f64, e_m: f64, err: &Error) -> Self {
        PointAudit {
            scheme,
            epsilon,
            e_m,
            pass: false,
            error: Some(err.to_string()),
            set_reports: Vec::new(),
            geo_reports: Vec::new(),
            global: None,
            circles: None,
            cross: None,
        }
    }

    /// Largest ratio seen by the per-set DP checks.
    pub fn max_set_ratio(&self) -> f64 {
        self.set_reports.iter().map(|r| r.max_ratio).fold(1.0, f64::max)
    }
}

/// Runs every audit that applies to the scheme of `built`.
pub fn audit_scheme(domain: &LocationDomain, built: &BuiltScheme, epsilon: f64, e_m: f64) -> PointAudit {
    let m = &built.matrix;
    let sets = built.protection.sets();
    let set_reports: Vec<AuditReport> = sets.iter().map(|s| check_dp_on_set(m, domain, &s.members, epsilon)).collect();
    let mut out = PointAudit {
        scheme: m.scheme(),
        epsilon,
        e_m,
        pass: true,
        error: None,
        set_reports,
        geo_reports: Vec::new(),
        global: None,
        circles: None,
        cross: None,
    };
    match (&built.protection, m.scheme()) {
        (Protection::PerLocation(all), Scheme::Uniform) => {
            let d_max = all.iter().map(|s| s.diameter_km).fold(0.0, f64::max);
            if d_max > 0.0 {
                let eps_g = epsilon / (2.0 * d_max);
                out.geo_reports = sets.iter().map(|s| check_geo_indist(m, domain, &s.members, eps_g, d_max)).collect();
            }
            out.global = Some(check_uniform_global(m, domain, epsilon, d_max));
            out.circles = Some(check_circle_sets(m, domain, epsilon, d_max));
        }
        (Protection::Partition(part), Scheme::Personalized) => {
            out.geo_reports = part
                .groups
                .iter()
                .filter(|g| g.diameter_km > 0.0)
                .map(|g| check_geo_indist(m, domain, &g.members, epsilon / (2.0 * g.diameter_km), g.diameter_km))
                .collect();
            out.cross = Some(check_cross_pls(m, domain, part, epsilon));
        }
        _ => {}
    }
    out.pass = out.set_reports.iter().chain(&out.geo_reports).chain(&out.global).chain(&out.circles).all(|r| r.pass)
        && out.cross.as_ref().is_none_or(|c| c.pass);
    out
}

fn evaluate_point(domain: &LocationDomain, prior: &PriorDistribution, cfg: &ExperimentConfig, scheme: Scheme, epsilon: f64) -> (SweepRow, PointAudit) {
    let mut row = SweepRow {
        scheme,
        epsilon,
        e_m: cfg.e_m,
        exp_err: None,
        qloss: None,
        min_exp_er: None,
        violation_mass: None,
        dp_pass: None,
        audit_max_ratio: None,
    };
    let attempt = || -> Result<(BuiltScheme, MetricsReport)> {
        let params = cfg.params(epsilon)?;
        let built = build_scheme(domain, prior, &SchemeConfig::new(scheme, params))?;
        let per_location: Vec<ProtectionLocationSet> = (0..domain.len()).map(|x| built.protection.set_of(x).clone()).collect();
        let report = MetricsReport::compute(&built.matrix, prior, domain, &[], Some(&per_location))?;
        Ok((built, report))
    };
    match attempt() {
        Ok((built, report)) => {
            let audit = audit_scheme(domain, &built, epsilon, cfg.e_m);
            row.exp_err = Some(report.exp_err);
            row.qloss = Some(report.qloss);
            row.min_exp_er = Some(report.min_exp_er);
            row.violation_mass = report.violation_mass;
            row.dp_pass = Some(audit.pass);
            row.audit_max_ratio = Some(audit.max_set_ratio());
            (row, audit)
        }
        Err(e) => (row, PointAudit::failed(scheme, epsilon, cfg.e_m, &e)),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub audits: Vec<PointAudit>,
}

impl SweepOutcome {
    /// Points of a certified scheme whose audits failed (build errors excluded).
    pub fn certified_failures(&self) -> Vec<&PointAudit> {
        self.audits.iter().filter(|a| a.scheme.is_certified() && a.error.is_none() && !a.pass).collect()
    }
}

pub fn audit_file_name(scheme: Scheme, epsilon: f64) -> String {
    format!("audit_{scheme}_{epsilon}.json")
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let err = |source| Error::Csv { path: path.to_path_buf(), source };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    for r in rows {
        w.serialize(r).map_err(err)?;
    }
    w.flush().map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source })
}

/// Evaluates every (scheme, epsilon) point without writing anything.
pub fn sweep(cfg: &ExperimentConfig) -> Result<SweepOutcome> {
    cfg.validate()?;
    let (domain, prior) = cfg.resolve()?;
    let points: Vec<(Scheme, f64)> =
        cfg.schemes.iter().flat_map(|&s| cfg.epsilons.iter().map(move |&e| (s, e))).collect();
    let (rows, audits) = points
        .par_iter()
        .map(|&(s, e)| evaluate_point(&domain, &prior, cfg, s, e))
        .collect::<Vec<_>>()
        .into_iter()
        .unzip();
    Ok(SweepOutcome { rows, audits })
}

/// Runs the sweep and writes `sweep.csv` and one audit JSON per point.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepOutcome> {
    let outcome = sweep(cfg)?;
    ensure_dir(&cfg.output_dir)?;
    write_csv(&cfg.output_dir.join("sweep.csv"), &outcome.rows)?;
    for a in &outcome.audits {
        let path = cfg.output_dir.join(audit_file_name(a.scheme, a.epsilon));
        std::fs::write(&path, serde_json::to_string_pretty(a)?).map_err(|source| Error::Io { path, source })?;
    }
    Ok(outcome)
}

/// One row of `table1.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetTableRow {
    pub seed_location: u32,
    /// Member ids in rank order, space separated.
    pub members: String,
    pub diameter_km: f64,
    #[serde(rename = "E")]
    pub e: f64,
    #[serde(rename = "E_prime")]
    pub e_prime: f64,
}

fn table_row(domain: &LocationDomain, seed: usize, set: &ProtectionLocationSet) -> SetTableRow {
    let members = set.ids(domain).iter().map(u32::to_string).collect::<Vec<_>>().join(" ");
    SetTableRow { seed_location: domain.id(seed), members, diameter_km: set.diameter_km, e: set.e_score, e_prime: set.e_prime_score }
}

/// Per-location sets from the window search, in rank order.
pub fn pls_table(cfg: &ExperimentConfig) -> Result<Vec<SetTableRow>> {
    let (domain, prior) = cfg.resolve()?;
    let sets = pive_search_all(&domain, &prior, &cfg.params(cfg.epsilon)?)?;
    Ok(domain.ranks().order().iter().map(|&x| table_row(&domain, x, &sets[x])).collect())
}

/// Partition groups; `seed_location` is the first member of each group.
pub fn partition_table(cfg: &ExperimentConfig) -> Result<Vec<SetTableRow>> {
    let (domain, prior) = cfg.resolve()?;
    let part = partition_domain(&domain, &prior, &cfg.params(cfg.epsilon)?)?;
    Ok(part.groups.iter().map(|g| table_row(&domain, g.members[0], g)).collect())
}

pub fn write_table(rows: &[SetTableRow], path: &Path) -> Result<()> {
    write_csv(path, rows)
}

/// The table as CSV text.
pub fn table_csv(rows: &[SetTableRow]) -> Result<String> {
    let err = |source| Error::Csv { path: PathBuf::from("<memory>"), source };
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidParameter(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Writes `table1.csv` into the output directory.
pub fn run_table1(cfg: &ExperimentConfig) -> Result<Vec<SetTableRow>> {
    let rows = pls_table(cfg)?;
    ensure_dir(&cfg.output_dir)?;
    write_table(&rows, &cfg.output_dir.join("table1.csv"))?;
    Ok(rows)
}

/// Outcome of the three violation demonstrations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoReport {
    pub intersections: Vec<IntersectionWitness>,
    /// Largest-ratio DP violation of the window-search scheme, with its bound.
    pub dp_violation: Option<(Witness, f64)>,
    pub violation_mass: Option<f64>,
    /// Per-set DP violations found in the corrected schemes.
    pub corrected_violations: Vec<(Scheme, usize)>,
    pub demonstrated: bool,
    pub text: String,
}

pub fn demo_violations(cfg: &ExperimentConfig) -> Result<DemoReport> {
    let (domain, prior) = cfg.resolve()?;
    let mut text = String::new();
    if domain.len() < 2 {
        text.push_str("domain has a single location: all checks are vacuous\n");
        return Ok(DemoReport {
            intersections: Vec::new(),
            dp_violation: None,
            violation_mass: None,
            corrected_violations: Vec::new(),
            demonstrated: false,
            text,
        });
    }
    let eps = cfg.epsilon;
    let params = cfg.params(eps)?;
    let _ = writeln!(text, "epsilon = {eps}, E_m = {}, threshold = {:.4}, range = {}", cfg.e_m, params.threshold(), cfg.range);

    let sets = pive_search_all(&domain, &prior, &params)?;
    let intersections = intersecting_sets_from(&domain, &sets);
    let _ = writeln!(text, "\n[1] intersecting protection sets with different diameters: {}", intersections.len());
    for w in intersections.iter().filter(|w| w.diameter_x != w.diameter_y).take(10) {
        let _ = writeln!(text, "    {} in set of {}: diameters {:.3} vs {:.3}", w.y, w.x, w.diameter_x, w.diameter_y);
    }

    let pive = build_scheme(&domain, &prior, &SchemeConfig::new(Scheme::Pive, params))?;
    let bound = eps.exp();
    let dp_violation = pive
        .protection
        .sets()
        .iter()
        .flat_map(|s| check_dp_on_set(&pive.matrix, &domain, &s.members, eps).witnesses)
        .max_by(|a, b| a.ratio.total_cmp(&b.ratio))
        .map(|w| (w, bound));
    let _ = writeln!(text, "\n[2] DP violation inside a protection set:");
    match &dp_violation {
        Some((w, b)) => {
            let _ = writeln!(text, "    f({x}|{}) / f({x}|{}) = {:.4} > e^eps = {b:.4}", w.x, w.y, w.ratio, x = w.x_prime);
        }
        None => text.push_str("    none found\n"),
    }

    let mass = violation_mass(&pive.matrix, &prior, &domain, &sets)?;
    let _ = writeln!(text, "\n[3] mass where in-set error exceeds the true conditional error: {:.4} ({:.2}%)", mass, 100.0 * mass);

    let mut corrected_violations = Vec::new();
    text.push_str("\ncorrected schemes, per-set DP violations:\n");
    for scheme in [Scheme::Uniform, Scheme::Personalized] {
        let built = build_scheme(&domain, &prior, &SchemeConfig::new(scheme, params))?;
        let count: usize = built.protection.sets().iter().map(|s| check_dp_on_set(&built.matrix, &domain, &s.members, eps).violations).sum();
        let _ = writeln!(text, "    {scheme}: {count}");
        corrected_violations.push((scheme, count));
    }

    let demonstrated = intersections.iter().any(|w| w.diameter_x != w.diameter_y) && dp_violation.is_some() && mass > 0.0;
    let _ = writeln!(text, "\nall three demonstrated: {}", if demonstrated { "yes" } else { "no" });
    Ok(DemoReport { intersections, dp_violation, violation_mass: Some(mass), corrected_violations, demonstrated, text })
}

/// Writes `violations.txt` into the output directory.
pub fn run_demo(cfg: &ExperimentConfig) -> Result<DemoReport> {
    let report = demo_violations(cfg)?;
    ensure_dir(&cfg.output_dir)?;
    let path = cfg.output_dir.join("violations.txt");
    std::fs::write(&path, &report.text).map_err(|source| Error::Io { path, source })?;
    Ok(report)
}

/// ExpErr, QLoss and min ExpEr for one scheme at one point, without audits.
pub fn scheme_metrics(domain: &LocationDomain, prior: &PriorDistribution, config: &SchemeConfig) -> Result<(f64, f64, f64)> {
    let built = build_scheme(domain, prior, config)?;
    let m = &built.matrix;
    let min_exp_er = conditional_errors(m, prior, domain)?.into_iter().fold(f64::INFINITY, f64::min);
    Ok((expected_error(m, prior, domain), quality_loss(m, prior, domain), min_exp_er))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips() {
        let cfg = ExperimentConfig::default();
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentConfig>(&json).unwrap(), cfg);
        let partial: ExperimentConfig = serde_json::from_str(r#"{"E_m": 0.2, "prior": {"kind": "random", "low": 0.01, "high": 0.03}}"#).unwrap();
        assert_eq!(partial.e_m, 0.2);
        assert_eq!(partial.epsilons, DEFAULT_EPSILONS.to_vec());
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn validation() {
        let mut cfg = ExperimentConfig { schemes: vec![], ..Default::default() };
        assert!(cfg.validate().is_err());
        cfg.schemes = vec![Scheme::Pive];
        cfg.epsilons = vec![1.0, -1.0];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn table_rows_for_five_and_six() {
        let cfg = ExperimentConfig::default();
        let rows = pls_table(&cfg).unwrap();
        assert_eq!(rows.len(), 50);
        let five = rows.iter().find(|r| r.seed_location == 5).unwrap();
        assert_eq!((five.members.as_str(), five.diameter_km), ("5 6", 2.0));
        let six = rows.iter().find(|r| r.seed_location == 6).unwrap();
        assert_eq!((six.members.as_str(), six.diameter_km), ("6 7", 1.0));
        for r in &rows {
            assert!(r.members.split(' ').any(|m| m == r.seed_location.to_string()));
        }
    }

    #[test]
    fn singleton_demo_is_vacuous() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one.csv");
        std::fs::write(&path, "id,col,row\n1,0,0\n").unwrap();
        let cfg = ExperimentConfig { domain: Some(path), prior: PriorSource::Uniform, ..Default::default() };
        let r = demo_violations(&cfg).unwrap();
        assert!(!r.demonstrated);
        assert!(r.text.contains("vacuous"));
    }
}
