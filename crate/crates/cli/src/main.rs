use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use sarbf::config::{parse_schemes, ExperimentConfig};
use sarbf::model::{generate_channels, linear_to_db, watts_to_dbm};
use sarbf::robust::{RobustOptions, SarRobustForm};
use sarbf::sim::{
    bench_csv, cdf_csv, run_robust_cdf, run_sweep, single_user_bench, summarize, sweep_csv, timing_csv,
    validate_invariants, SweepSpec,
};

#[derive(Parser)]
#[command(name = "sarbf", version, about = "SAR-constrained SWIPT beamforming experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep one parameter over a grid and run every scheme on each trial.
    Sweep(Common),
    /// Realized SINR/EH distributions of robust and non-robust designs.
    RobustCdf(Common),
    /// Fast single-user solver against the SDP path.
    SingleUserBench(Common),
    /// Run the invariant checks; exits nonzero if any fails.
    Validate(Common),
}

#[derive(Args)]
struct Common {
    /// TOML experiment file; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Trials per grid point (error samples for robust-cdf).
    #[arg(long)]
    trials: Option<usize>,
    /// Comma-separated scheme list, e.g. `optimal,zf,backoff`.
    #[arg(long)]
    schemes: Option<String>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

struct Loaded {
    cfg: ExperimentConfig,
    hash: String,
}

impl Common {
    fn load(&self) -> Result<Loaded> {
        let text = match &self.config {
            Some(p) => fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?,
            None => String::new(),
        };
        let mut cfg = ExperimentConfig::from_toml(&text).map_err(|e| match &self.config {
            Some(p) => anyhow::anyhow!("{}: {e}", p.display()),
            None => anyhow::anyhow!("{e}"),
        })?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(t) = self.trials {
            if t == 0 {
                bail!("--trials must be at least 1");
            }
            cfg.trials = t;
        }
        if let Some(list) = &self.schemes {
            cfg.sweep.schemes = parse_schemes(list)?;
            if cfg.sweep.schemes.is_empty() {
                bail!("--schemes is empty");
            }
        }
        let hash = format!("{:x}", Sha256::digest(text.as_bytes()));
        Ok(Loaded { cfg, hash })
    }

    fn out_dir(&self) -> Result<Option<&Path>> {
        if let Some(dir) = &self.out {
            fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        }
        Ok(self.out.as_deref())
    }
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("cannot write {}", path.display()))
}

fn manifest(command: &str, l: &Loaded, extra: &[(&str, String)]) -> String {
    let mut m = format!(
        "command = {command}\nconfig_sha256 = {}\nseed = {}\ntrials = {}\nsarbf_version = {}\n",
        l.hash,
        l.cfg.seed,
        l.cfg.trials,
        env!("CARGO_PKG_VERSION"),
    );
    for (k, v) in extra {
        m.push_str(&format!("{k} = {v}\n"));
    }
    m
}

fn sweep(c: &Common) -> Result<()> {
    let l = c.load()?;
    let spec = SweepSpec::from_config(&l.cfg);
    let records = run_sweep(&l.cfg, &spec, c.jobs)?;
    let num_sar = l.cfg.base_scenario()?.num_sar();
    println!("{:>14} {:>10} {:>9} {:>12}", spec.parameter.name(), "scheme", "feasible", "mean_t");
    for s in summarize(&records) {
        println!("{:>14.6} {:>10} {:>9.3} {:>12.6}", s.value, s.scheme.name(), s.feasibility_rate, s.mean_t);
    }
    if let Some(dir) = c.out_dir()? {
        write(dir, "sweep.csv", &sweep_csv(&records, spec.parameter, num_sar))?;
        write(dir, "timing.csv", &timing_csv(&records))?;
        let schemes: Vec<&str> = spec.schemes.iter().map(|s| s.name()).collect();
        write(
            dir,
            "manifest.txt",
            &manifest(
                "sweep",
                &l,
                &[
                    ("parameter", spec.parameter.name().to_string()),
                    ("values", format!("{:?}", spec.values)),
                    ("schemes", schemes.join(",")),
                    ("rows", records.len().to_string()),
                ],
            ),
        )?;
    }
    Ok(())
}

fn robust_cdf(c: &Common) -> Result<()> {
    let l = c.load()?;
    let cfg = &l.cfg;
    let samples = c.trials.unwrap_or(cfg.robust.error_samples);
    let scenario = cfg.base_scenario()?;
    let unc = cfg.uncertainty.build(&scenario)?;
    let channels = generate_channels(&scenario, &cfg.channel, cfg.seed)?;
    let opts = RobustOptions {
        sar_form: if cfg.robust.linear_sar_surrogate { SarRobustForm::LinearSurrogate } else { SarRobustForm::Exact },
        draws: cfg.robust.draws,
        seed: cfg.seed,
        ..Default::default()
    };
    let cdf = run_robust_cdf(&scenario, &channels, &unc, &cfg.eh, samples, &opts)?;
    println!("robust    violation probability {:.4}  power {:.4e} W", cdf.robust.violation_probability, cdf.robust.transmit_power);
    println!(
        "nonrobust violation probability {:.4}  power {:.4e} W",
        cdf.nonrobust.violation_probability, cdf.nonrobust.transmit_power
    );
    if let Some(dir) = c.out_dir()? {
        write(dir, "cdf_sinr.csv", &cdf_csv(&cdf, |r| &r.sinr, linear_to_db))?;
        write(dir, "cdf_eh.csv", &cdf_csv(&cdf, |r| &r.harvested, watts_to_dbm))?;
        write(
            dir,
            "manifest.txt",
            &manifest(
                "robust-cdf",
                &l,
                &[
                    ("error_samples", samples.to_string()),
                    ("robust_violation_probability", format!("{:.6}", cdf.robust.violation_probability)),
                    ("nonrobust_violation_probability", format!("{:.6}", cdf.nonrobust.violation_probability)),
                ],
            ),
        )?;
    }
    Ok(())
}

fn bench(c: &Common) -> Result<()> {
    let l = c.load()?;
    let trials = c.trials.unwrap_or(50);
    let rows = single_user_bench(&l.cfg, trials, l.cfg.seed, 1e-5, c.jobs)?;
    let csv = bench_csv(&rows);
    let worst = rows.iter().map(|r| (r.t_fast - r.t_sdp).abs() / r.t_sdp).fold(0.0, f64::max);
    let tf: f64 = rows.iter().map(|r| r.time_fast).sum();
    let ts: f64 = rows.iter().map(|r| r.time_sdp).sum();
    print!("{csv}");
    println!("# max relative gap {worst:.3e}, time fast {tf:.4} s, sdp {ts:.4} s, speedup {:.1}x", ts / tf);
    if let Some(dir) = c.out_dir()? {
        write(dir, "single_user_bench.csv", &csv)?;
        write(dir, "manifest.txt", &manifest("single-user-bench", &l, &[("trials", trials.to_string())]))?;
    }
    Ok(())
}

fn validate(c: &Common) -> Result<bool> {
    let l = c.load()?;
    let checks = validate_invariants(c.trials.unwrap_or(5), l.cfg.seed);
    for ch in &checks {
        println!("{} {:<22} {}", if ch.passed { "PASS" } else { "FAIL" }, ch.name, ch.detail);
    }
    Ok(checks.iter().all(|c| c.passed))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Sweep(c) => sweep(c).map(|_| true),
        Command::RobustCdf(c) => robust_cdf(c).map(|_| true),
        Command::SingleUserBench(c) => bench(c).map(|_| true),
        Command::Validate(c) => validate(c),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
