//! `pdsa`: probabilistic dynamic security assessment from the command line.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context as _, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use pdsa_core::contingency::{enumerate, to_csv};
use pdsa_core::mc::RiskReport;
use pdsa_core::pipeline::{assess, audit_screening, enhance, generate_db, Context, RunConfig};

#[derive(Parser)]
#[command(name = "pdsa", version, about = "Probabilistic dynamic security assessment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesise MC years, dispatch every hour and store the snapshots.
    GenerateDb,
    /// Print the contingency list with frequencies as CSV.
    ListContingencies,
    /// Estimate per-contingency and total risk.
    Assess,
    /// Train security boundaries for the critical contingencies of a report.
    Enhance {
        #[arg(long, value_name = "PATH")]
        report: PathBuf,
    },
    /// Summarise a risk report.
    Report {
        #[arg(long, value_name = "PATH")]
        report: PathBuf,
        /// Rows of the critical-contingency table.
        #[arg(long, default_value_t = 10)]
        top: usize,
    },
    /// Score screening against full simulation over random scenarios.
    AuditScreening {
        #[arg(long)]
        scenarios: Option<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

/// Flags override the configuration file, which overrides the defaults.
#[derive(Args)]
struct Overrides {
    /// JSON configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Network case JSON (default: the bundled desk grid).
    #[arg(long, global = true, value_name = "PATH")]
    case: Option<PathBuf>,
    /// Weather model JSON (default: bundled).
    #[arg(long, global = true, value_name = "PATH")]
    weather: Option<PathBuf>,
    #[arg(long, global = true, value_name = "DIR")]
    db: Option<PathBuf>,
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    years: Option<u32>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    warmup: Option<u64>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    /// Per-contingency sample cap.
    #[arg(long, global = true)]
    cap: Option<u64>,
    /// Stop after this many samples overall.
    #[arg(long, global = true)]
    max_samples: Option<u64>,
    #[arg(long, global = true, value_enum)]
    screening: Option<Switch>,
    /// CCT margin in milliseconds; negative values are allowed.
    #[arg(long, global = true, allow_negative_numbers = true, value_name = "MS")]
    cct_margin: Option<f64>,
    /// Random protection-parameter simulations per sensitive scenario.
    #[arg(long = "protection-k", global = true)]
    protection_k: Option<usize>,
    #[arg(long, global = true)]
    critical: Option<usize>,
    #[arg(long, global = true)]
    min_samples: Option<usize>,
    #[arg(long, global = true)]
    max_dim: Option<usize>,
    /// Write the acting trajectory of every simulated scenario under OUT/traces.
    #[arg(long, global = true)]
    dump_traces: bool,
}

impl Overrides {
    fn apply(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = &self.$flag { c.$($field).+ = v.clone().into(); })*
            };
        }
        set!(
            case => case, weather => weather, db => db, out => out, years => years,
            seed => seed, workers => workers, epsilon => engine.epsilon, alpha => engine.alpha,
            warmup => engine.warmup, batch_size => engine.batch_size, cap => engine.cap,
            max_samples => engine.max_total_samples, protection_k => protection_k,
            critical => critical, min_samples => min_samples, max_dim => max_dim,
        );
        if let Some(s) = self.screening {
            c.screening = matches!(s, Switch::On);
        }
        if let Some(ms) = self.cct_margin {
            c.indicators.cct_margin_s = ms / 1000.0;
        }
        c.dump_traces |= self.dump_traces;
        c.validate()?;
        Ok(c)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format(|buf, rec| {
            writeln!(
                buf,
                "level={} target={} msg={:?}",
                rec.level(),
                rec.target(),
                rec.args().to_string()
            )
        })
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = cli.overrides.apply()?;
    match cli.command {
        Command::GenerateDb => {
            generate_db(&cfg)?;
        }
        Command::ListContingencies => {
            let case = cfg.load_case()?;
            print!("{}", to_csv(&case, &enumerate(&case)));
        }
        Command::Assess => {
            let a = assess(&Context::load(&cfg)?)?;
            for p in a.outcome_paths {
                log::info!("wrote {}", p.display());
            }
        }
        Command::Enhance { report } => {
            let r = read_report(&report)?;
            let e = enhance(&Context::load(&cfg)?, &r)?;
            log::info!("{} boundary models, {} skipped", e.reports.len(), e.skipped.len());
        }
        Command::Report { report, top } => print!("{}", summary(&read_report(&report)?, top)),
        Command::AuditScreening { scenarios } => {
            let mut cfg = cfg;
            if let Some(n) = scenarios {
                cfg.audit_scenarios = n;
            }
            audit_screening(&Context::load(&cfg)?)?;
        }
    }
    Ok(())
}

fn read_report(path: &Path) -> Result<RiskReport> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let r: RiskReport = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if r.contingencies.is_empty() {
        bail!("{} lists no contingencies", path.display());
    }
    Ok(r)
}

/// Plain-text summary: totals, the critical-contingency table and class shares.
fn summary(r: &RiskReport, top: usize) -> String {
    let m = 1e6;
    let mut s = format!(
        "manifest {}\ntotal risk {:.3} MEUR/yr, SE bound {:.3} (variance {:.3}, coverage {:.3}), eps {}, alpha {}\n\n",
        r.manifest_hash,
        r.total.risk / m,
        r.total.se / m,
        r.total.variance_term / m,
        r.total.coverage_term / m,
        r.epsilon,
        r.alpha
    );
    s += &format!(
        "{:<4} {:<24} {:<4} {:>12} {:>10} {:>8} {:>6}\n",
        "rank", "contingency", "cls", "MEUR/yr", "SE", "N", "share"
    );
    let mut shown = 0.0;
    for (k, id) in r.ranking.iter().take(top).enumerate() {
        let c = r.get(id).expect("ranked ids are in the report");
        shown += c.risk_eur_per_year;
        s += &format!(
            "{:<4} {:<24} {:<4} {:>12.4} {:>10.4} {:>8} {:>5.1}%{}\n",
            k + 1,
            id,
            c.class,
            c.risk_eur_per_year / m,
            c.se_eur_per_year / m,
            c.samples,
            100.0 * share(c.risk_eur_per_year, r.total.risk),
            if c.capped { " capped" } else { "" }
        );
    }
    s += &format!(
        "top {} carry {:.1}% of the total\n\n",
        top.min(r.ranking.len()),
        100.0 * share(shown, r.total.risk)
    );
    for class in ["N-1", "N-2"] {
        let (n, risk, samples) = r
            .contingencies
            .iter()
            .filter(|c| c.class == class)
            .fold((0, 0.0, 0), |(n, x, k), c| (n + 1, x + c.risk_eur_per_year, k + c.samples));
        s += &format!("{class}: {n} contingencies, {samples} samples, {:.3} MEUR/yr\n", risk / m);
    }
    s
}

fn share(x: f64, total: f64) -> f64 {
    if total > 0.0 {
        x / total
    } else {
        0.0
    }
}
