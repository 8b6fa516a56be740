use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use plslab::audit::{check_cross_pls, check_dp_on_set, check_geo_indist, check_uniform_global, intersecting_sets_from};
use plslab::harness::{self, ExperimentConfig};
use plslab::hilbert::hilbert_value;
use plslab::mechanism::{build_scheme, Protection, Scheme, SchemeConfig};
use plslab::pls::{pive_search_all, TieBreak};
use serde_json::json;

/// Exit status used when a check ran to completion but did not pass.
const CHECK_FAILED: u8 = 2;

#[derive(Parser)]
#[command(name = "plslab", version, about = "Location obfuscation laboratory: protection sets, mechanisms and privacy audits")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON experiment config; flags below override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Regions CSV or domain JSON (default: bundled 50-region example).
    #[arg(long, global = true)]
    domain: Option<PathBuf>,
    /// Privacy level(s), comma separated. The first is used by single-point commands.
    #[arg(long, global = true, value_delimiter = ',')]
    epsilon: Vec<f64>,
    /// Inference-error threshold in km.
    #[arg(long = "em", global = true)]
    e_m: Option<f64>,
    /// Half-width of the rank window searched around each location.
    #[arg(long, global = true)]
    range: Option<usize>,
    /// Run seed (used by random priors without an explicit seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Scheme(s), comma separated: pive, uniform, personalized.
    #[arg(long, global = true, value_delimiter = ',')]
    scheme: Vec<Scheme>,
    /// Order among equal-diameter windows.
    #[arg(long, global = true, value_enum)]
    tie_break: Option<TieRule>,
    /// Output directory (sweep, table1, demo) or output file (pls, audit).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Print the Hilbert value of a grid cell.
    Hilbert {
        #[arg(long)]
        order: u32,
        #[arg(long)]
        col: u32,
        #[arg(long)]
        row: u32,
    },
    /// Compute protection sets as CSV.
    Pls {
        #[arg(long, value_enum, default_value = "pive")]
        mode: PlsMode,
    },
    /// Run one audit for one scheme and print a JSON report.
    Audit {
        #[arg(long, value_enum)]
        check: Check,
    },
    /// Sweep epsilon for every scheme; writes sweep.csv and audit JSONs.
    Sweep,
    /// Write table1.csv with the per-location protection sets.
    Table1,
    /// Demonstrate the failures of the window-search scheme; writes violations.txt.
    Demo,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlsMode {
    Pive,
    Partition,
}

#[derive(Clone, Copy, ValueEnum)]
enum Check {
    Dp,
    Geo,
    Cross,
    /// Pairs of overlapping window sets with different diameters.
    #[value(name = "intersections", alias = "obs1")]
    Intersections,
}

#[derive(Clone, Copy, ValueEnum)]
enum TieRule {
    FewestLeftmost,
    MostRightmost,
}

impl From<TieRule> for TieBreak {
    fn from(t: TieRule) -> Self {
        match t {
            TieRule::FewestLeftmost => TieBreak::FewestLeftmost,
            TieRule::MostRightmost => TieBreak::MostRightmost,
        }
    }
}

impl Cli {
    fn experiment(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path).with_context(|| format!("loading config {}", path.display()))?,
            None => ExperimentConfig::default(),
        };
        if let Some(d) = &self.domain {
            cfg.domain = Some(d.clone());
        }
        if let Some(&first) = self.epsilon.first() {
            cfg.epsilon = first;
            cfg.epsilons = self.epsilon.clone();
        }
        if let Some(e_m) = self.e_m {
            cfg.e_m = e_m;
        }
        if let Some(r) = self.range {
            cfg.range = r;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if !self.scheme.is_empty() {
            cfg.schemes = self.scheme.clone();
        }
        if let Some(t) = self.tie_break {
            cfg.tie_break = t.into();
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn run_audit(cli: &Cli, cfg: &ExperimentConfig, check: Check) -> Result<ExitCode> {
    let scheme = match cli.scheme.as_slice() {
        [s] => *s,
        [] => bail!("audit needs --scheme"),
        _ => bail!("audit takes exactly one scheme"),
    };
    let (domain, prior) = cfg.resolve()?;
    let eps = cfg.epsilon;
    let params = cfg.params(eps)?;

    let (value, pass) = match check {
        Check::Intersections => {
            let sets = pive_search_all(&domain, &prior, &params)?;
            let found = intersecting_sets_from(&domain, &sets);
            (json!({ "check": "intersections", "epsilon": eps, "E_m": cfg.e_m, "witnesses": found }), true)
        }
        _ => {
            let built = build_scheme(&domain, &prior, &SchemeConfig::new(scheme, params))?;
            let m = &built.matrix;
            match check {
                Check::Dp => {
                    let reports: Vec<_> =
                        built.protection.sets().iter().map(|s| check_dp_on_set(m, &domain, &s.members, eps)).collect();
                    let pass = reports.iter().all(|r| r.pass);
                    (json!({ "scheme": scheme, "epsilon": eps, "pass": pass, "reports": reports }), pass)
                }
                Check::Geo => {
                    let d_max = m.sensitivities().iter().copied().fold(0.0, f64::max);
                    let reports: Vec<_> = built
                        .protection
                        .sets()
                        .iter()
                        .filter(|s| s.diameter_km > 0.0)
                        .map(|s| {
                            // uniform rows share one scale; the others use their own set's diameter
                            let theta = if scheme == Scheme::Uniform { d_max } else { s.diameter_km };
                            check_geo_indist(m, &domain, &s.members, eps / (2.0 * theta), theta)
                        })
                        .collect();
                    let pass = reports.iter().all(|r| r.pass);
                    (json!({ "scheme": scheme, "epsilon": eps, "pass": pass, "reports": reports }), pass)
                }
                Check::Cross => match &built.protection {
                    Protection::Partition(part) => {
                        let r = check_cross_pls(m, &domain, part, eps);
                        let pass = r.pass;
                        (json!({ "scheme": scheme, "epsilon": eps, "report": r }), pass)
                    }
                    Protection::PerLocation(_) if scheme == Scheme::Uniform => {
                        let d_max = m.sensitivities().iter().copied().fold(0.0, f64::max);
                        let r = check_uniform_global(m, &domain, eps, d_max);
                        let pass = r.pass;
                        (json!({ "scheme": scheme, "epsilon": eps, "report": r }), pass)
                    }
                    Protection::PerLocation(_) => bail!("the cross check applies to the uniform and personalized schemes"),
                },
                Check::Intersections => unreachable!(),
            }
        }
    };
    emit(cli.out.as_deref(), &(serde_json::to_string_pretty(&value)? + "\n"))?;
    // failures of the uncertified scheme are the expected demonstration
    Ok(if pass || !scheme.is_certified() { ExitCode::SUCCESS } else { ExitCode::from(CHECK_FAILED) })
}

fn run(cli: &Cli) -> Result<ExitCode> {
    if let Command::Hilbert { order, col, row } = cli.command {
        println!("{}", hilbert_value(col, row, order)?.0);
        return Ok(ExitCode::SUCCESS);
    }
    let cfg = cli.experiment()?;
    match &cli.command {
        Command::Hilbert { .. } => unreachable!(),
        Command::Pls { mode } => {
            let rows = match mode {
                PlsMode::Pive => harness::pls_table(&cfg)?,
                PlsMode::Partition => harness::partition_table(&cfg)?,
            };
            emit(cli.out.as_deref(), &harness::table_csv(&rows)?)?;
        }
        Command::Audit { check } => return run_audit(cli, &cfg, *check),
        Command::Sweep => {
            let outcome = harness::run_sweep(&cfg)?;
            for a in outcome.audits.iter().filter(|a| a.error.is_some()) {
                eprintln!("{} at epsilon {}: {}", a.scheme, a.epsilon, a.error.as_deref().unwrap_or_default());
            }
            let failed = outcome.certified_failures();
            println!("wrote {} rows to {}", outcome.rows.len(), cfg.output_dir.join("sweep.csv").display());
            if !failed.is_empty() {
                for a in failed {
                    eprintln!("audit failed: {} at epsilon {}", a.scheme, a.epsilon);
                }
                return Ok(ExitCode::from(CHECK_FAILED));
            }
        }
        Command::Table1 => {
            let rows = harness::run_table1(&cfg)?;
            println!("wrote {} rows to {}", rows.len(), cfg.output_dir.join("table1.csv").display());
        }
        Command::Demo => {
            let report = harness::run_demo(&cfg)?;
            print!("{}", report.text);
            if !report.demonstrated {
                return Ok(ExitCode::from(CHECK_FAILED));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    run(&cli)
}
