//! Monte Carlo harness: parameter sweeps over all schemes, realized SINR/EH
//! distributions under channel errors, and the single-user solver benchmark.
//!
//! Everything here is deterministic given the seed. Trials run in parallel
//! and rows are sorted before they are returned. Solver wall time is kept
//! out of the main CSV so that reruns produce identical bytes.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::baseline::{backoff_design, solve_p14};
use crate::config::{ExperimentConfig, Scheme, SweepParameter};
use crate::eh::{EhModel, HarvestCurve};
use crate::error::{Error, Result};
use crate::fastsu::maximize_ratio_single_user;
use crate::fixedbf::{maximize_ratio_fixed, FixedScheme};
use crate::hybrid::maximize_ratio_hybrid;
use crate::metrics::{check_feasibility_at_ratio, evaluate, sar_exposure_with, BeamformingSolution};
use crate::model::{generate_channels, ChannelModel, ChannelSet, SystemScenario, UncertaintyModel};
use crate::optimal::{maximize_ratio, maximize_ratio_with, probe_targets, recover_beamformers, solve_p2, BisectionOptions};
use crate::robust::{
    maximize_ratio_robust, requirements, robust_design, sample_channel_error, sample_sar_error, worst_case_margins,
    RobustOptions, SarRobustForm,
};

/// Relative tolerance used when re-validating records.
pub const RECORD_TOLERANCE: f64 = 1e-6;

pub const SWEEP_CSV_VERSION: &str = "# sarbf sweep v1";
pub const TIMING_CSV_VERSION: &str = "# sarbf timing v1";
pub const CDF_CSV_VERSION: &str = "# sarbf cdf v1";

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub schemes: Vec<Scheme>,
}

impl SweepSpec {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        Self {
            parameter: cfg.sweep.parameter,
            values: cfg.sweep.values.clone(),
            trials: cfg.trials,
            seed: cfg.seed,
            schemes: cfg.sweep.schemes.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::Config("sweep grid must not be empty".into()));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.schemes.is_empty() {
            return Err(Error::Config("at least one scheme is required".into()));
        }
        Ok(())
    }

    /// Channel seed of trial `i`.
    pub fn trial_seed(&self, trial: usize) -> u64 {
        self.seed.wrapping_add(trial as u64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrialStatus {
    /// A design was produced and re-validated.
    Feasible,
    /// A design was produced but fails re-validation (e.g. `no_sar` against
    /// the SAR limits, `nonrobust` against the worst case).
    Violating,
    /// The scheme reported infeasibility.
    Infeasible,
    /// Solver or numerical failure.
    Failed,
}

impl TrialStatus {
    pub fn name(self) -> &'static str {
        match self {
            Self::Feasible => "feasible",
            Self::Violating => "violating",
            Self::Infeasible => "infeasible",
            Self::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub value_index: usize,
    pub value: f64,
    pub trial: usize,
    pub seed: u64,
    pub scheme: Scheme,
    pub status: TrialStatus,
    /// Achieved ratio; 0 when no design was produced.
    pub t: f64,
    pub transmit_power: f64,
    pub sar: Vec<f64>,
    /// Seconds spent inside the scheme's solver.
    pub wall_time: f64,
}

impl TrialRecord {
    pub fn feasible(&self) -> bool {
        self.status == TrialStatus::Feasible
    }
}

/// Everything a scheme needs for one trial.
pub struct TrialContext<'a> {
    pub scenario: &'a SystemScenario,
    pub channels: &'a ChannelSet,
    pub uncertainty: &'a UncertaintyModel,
    pub eh: &'a dyn HarvestCurve,
    pub robust: RobustOptions,
}

/// Design with `scheme` and re-validate it. Returns `(t, solution, status)`.
pub fn run_scheme(scheme: Scheme, ctx: &TrialContext) -> Result<(f64, BeamformingSolution, TrialStatus)> {
    let (s, ch, eh) = (ctx.scenario, ctx.channels, ctx.eh);
    let (t, sol) = match scheme {
        Scheme::Optimal | Scheme::Nonrobust => {
            let r = maximize_ratio(s, ch, eh)?;
            (r.t, r.solution)
        }
        Scheme::FastSu => {
            let r = maximize_ratio_single_user(s, ch, eh, BisectionOptions::default())?;
            (r.t, r.solution)
        }
        Scheme::Zf | Scheme::Rzf => {
            let fixed = if scheme == Scheme::Zf { FixedScheme::Zf } else { FixedScheme::Rzf };
            let r = maximize_ratio_fixed(fixed, s, ch, eh)?;
            (r.t, r.solution)
        }
        Scheme::Hybrid => {
            let r = maximize_ratio_hybrid(s, ch, eh)?;
            (r.t, r.solution)
        }
        Scheme::Robust => {
            let r = maximize_ratio_robust(s, ch, ctx.uncertainty, eh, &ctx.robust)?;
            (r.t, r.solution)
        }
        Scheme::Backoff => {
            let r = backoff_design(s, ch, eh)?;
            (r.t, r.solution)
        }
        Scheme::NoSar => {
            let r = solve_p14(s, ch, eh)?;
            (r.t, r.solution)
        }
    };
    let nominal_ok = check_feasibility_at_ratio(&sol, s, ch, eh, t, RECORD_TOLERANCE).all_satisfied();
    let ok = match scheme {
        Scheme::Robust | Scheme::Nonrobust => {
            nominal_ok && worst_case_holds(&sol, s, ch, ctx.uncertainty, eh, t)?
        }
        _ => nominal_ok,
    };
    Ok((t, sol, if ok { TrialStatus::Feasible } else { TrialStatus::Violating }))
}

fn worst_case_holds(
    sol: &BeamformingSolution,
    s: &SystemScenario,
    ch: &ChannelSet,
    unc: &UncertaintyModel,
    eh: &dyn HarvestCurve,
    t: f64,
) -> Result<bool> {
    let tg = probe_targets(s, eh, t)?;
    let m = worst_case_margins(sol, s, ch, unc, &tg.sinr, &tg.rf);
    let (sn, en) = requirements(sol, s, &tg.sinr, &tg.rf);
    Ok(m.holds(&sn, &en, &s.sar_limits, RECORD_TOLERANCE))
}

fn robust_options(cfg: &ExperimentConfig, seed: u64) -> RobustOptions {
    RobustOptions {
        sar_form: if cfg.robust.linear_sar_surrogate { SarRobustForm::LinearSurrogate } else { SarRobustForm::Exact },
        draws: cfg.robust.draws,
        seed,
        ..Default::default()
    }
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

/// Run every (grid value, trial, scheme) combination. Channels depend only on
/// the trial, so schemes and grid points are compared on the same draws.
/// `jobs = 0` uses one worker per core.
pub fn run_sweep(cfg: &ExperimentConfig, spec: &SweepSpec, jobs: usize) -> Result<Vec<TrialRecord>> {
    spec.validate()?;
    let base = cfg.base_scenario()?;
    let eh = cfg.eh;
    eh.validate()?;
    let grid: Vec<(SystemScenario, UncertaintyModel)> =
        spec.values.iter().map(|&v| cfg_scenario_at(cfg, spec.parameter, v)).collect::<Result<_>>()?;
    let channels: Vec<ChannelSet> = (0..spec.trials)
        .map(|i| generate_channels(&base, &cfg.channel, spec.trial_seed(i)))
        .collect::<Result<_>>()?;

    let jobs_list: Vec<(usize, usize, Scheme)> = (0..spec.values.len())
        .flat_map(|v| (0..spec.trials).flat_map(move |i| spec.schemes.iter().map(move |&s| (v, i, s))))
        .collect();
    let pool = thread_pool(jobs)?;
    let mut records: Vec<TrialRecord> = pool.install(|| {
        jobs_list
            .par_iter()
            .map(|&(v, i, scheme)| {
                let (scenario, unc) = &grid[v];
                let seed = spec.trial_seed(i);
                let ctx = TrialContext {
                    scenario,
                    channels: &channels[i],
                    uncertainty: unc,
                    eh: &eh,
                    robust: robust_options(cfg, seed),
                };
                let start = Instant::now();
                let out = run_scheme(scheme, &ctx);
                let wall_time = start.elapsed().as_secs_f64();
                let (status, t, power, sar) = match out {
                    Ok((t, sol, status)) => {
                        let sar = scenario.sar_matrices.iter().map(|a| sar_exposure_with(a, &sol)).collect();
                        (status, t, sol.transmit_power(), sar)
                    }
                    Err(e) if e.is_infeasibility() => (TrialStatus::Infeasible, 0.0, 0.0, vec![]),
                    Err(_) => (TrialStatus::Failed, 0.0, 0.0, vec![]),
                };
                TrialRecord {
                    value_index: v,
                    value: spec.values[v],
                    trial: i,
                    seed,
                    scheme,
                    status,
                    t,
                    transmit_power: power,
                    sar,
                    wall_time,
                }
            })
            .collect()
    });
    records.sort_by_key(|r| (r.value_index, r.trial, r.scheme));
    Ok(records)
}

fn cfg_scenario_at(cfg: &ExperimentConfig, parameter: SweepParameter, value: f64) -> Result<(SystemScenario, UncertaintyModel)> {
    let mut c = cfg.clone();
    c.sweep.parameter = parameter;
    c.scenario_at(value)
}

fn sci(v: f64) -> String {
    format!("{v:.9e}")
}

/// One row per record; wall time lives in [`timing_csv`].
pub fn sweep_csv(records: &[TrialRecord], parameter: SweepParameter, num_sar: usize) -> String {
    let mut out = String::from(SWEEP_CSV_VERSION);
    out.push('\n');
    let mut cols: Vec<String> =
        ["parameter", "value", "trial", "seed", "scheme", "status", "t", "transmit_power_w"].map(String::from).to_vec();
    cols.extend((0..num_sar).map(|l| format!("sar_{l}")));
    out.push_str(&cols.join(","));
    out.push('\n');
    for r in records {
        let mut row = vec![
            parameter.name().to_string(),
            sci(r.value),
            r.trial.to_string(),
            r.seed.to_string(),
            r.scheme.to_string(),
            r.status.name().to_string(),
            sci(r.t),
            sci(r.transmit_power),
        ];
        row.extend((0..num_sar).map(|l| r.sar.get(l).map_or_else(String::new, |&v| sci(v))));
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn timing_csv(records: &[TrialRecord]) -> String {
    let mut out = format!("{TIMING_CSV_VERSION}\nvalue,trial,scheme,wall_time_s\n");
    for r in records {
        out.push_str(&format!("{},{},{},{:.6e}\n", sci(r.value), r.trial, r.scheme, r.wall_time));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSummary {
    pub value: f64,
    pub scheme: Scheme,
    pub trials: usize,
    pub feasibility_rate: f64,
    /// Mean `t` over feasible trials (NaN when there are none).
    pub mean_t: f64,
    pub mean_wall_time: f64,
}

/// Per (grid value, scheme) aggregates; a pure function of the records.
pub fn summarize(records: &[TrialRecord]) -> Vec<SweepSummary> {
    let mut keys: Vec<(usize, Scheme)> = records.iter().map(|r| (r.value_index, r.scheme)).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .map(|(v, scheme)| {
            let rows: Vec<&TrialRecord> = records.iter().filter(|r| r.value_index == v && r.scheme == scheme).collect();
            let feasible: Vec<&&TrialRecord> = rows.iter().filter(|r| r.feasible()).collect();
            let n = rows.len();
            SweepSummary {
                value: rows[0].value,
                scheme,
                trials: n,
                feasibility_rate: feasible.len() as f64 / n as f64,
                mean_t: feasible.iter().map(|r| r.t).sum::<f64>() / feasible.len() as f64,
                mean_wall_time: rows.iter().map(|r| r.wall_time).sum::<f64>() / n as f64,
            }
        })
        .collect()
}

/// Realized per-user values over sampled channel errors.
#[derive(Debug, Clone, PartialEq)]
pub struct Realizations {
    /// `[sample][user]`.
    pub sinr: Vec<Vec<f64>>,
    pub harvested: Vec<Vec<f64>>,
    /// Realized exposure per sample and SAR constraint.
    pub sar: Vec<Vec<f64>>,
    pub transmit_power: f64,
    /// Fraction of samples where some user misses its SINR or EH target.
    pub violation_probability: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustCdf {
    pub robust: Realizations,
    pub nonrobust: Realizations,
}

/// Robust and non-robust designs at the scenario's own targets for the same
/// channel estimates, then realized SINR/EH under `samples` errors drawn on
/// the uncertainty-set boundary.
pub fn run_robust_cdf(
    scenario: &SystemScenario,
    channels: &ChannelSet,
    uncertainty: &UncertaintyModel,
    eh: &dyn HarvestCurve,
    samples: usize,
    opts: &RobustOptions,
) -> Result<RobustCdf> {
    let rf: Vec<f64> = scenario
        .eh_targets
        .iter()
        .map(|&l| if l > 0.0 { eh.inverse(l) } else { Ok(0.0) })
        .collect::<Result<_>>()?;
    let sinr = &scenario.sinr_targets;
    let (_, robust) = robust_design(scenario, channels, uncertainty, sinr, &rf, opts)?;
    let nominal = solve_p2(scenario, channels, sinr, &rf)?;
    let nonrobust = recover_beamformers(&nominal, scenario, channels, sinr, &rf)?;

    let realize = |sol: &BeamformingSolution, seed: u64| -> Result<Realizations> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nt = scenario.num_antennas;
        let mut out = Realizations {
            sinr: Vec::with_capacity(samples),
            harvested: Vec::with_capacity(samples),
            sar: Vec::with_capacity(samples),
            transmit_power: sol.transmit_power(),
            violation_probability: 0.0,
        };
        let mut violations = 0usize;
        for _ in 0..samples {
            let actual = ChannelSet::from_vectors(
                (0..scenario.num_users)
                    .map(|k| channels.h(k) + sample_channel_error(&mut rng, nt, uncertainty.channel_radius(k)))
                    .collect(),
            )?;
            let r = evaluate(sol, scenario, &actual, eh);
            let missed = (0..scenario.num_users).any(|k| {
                r.sinr[k] < scenario.sinr_targets[k] * (1.0 - RECORD_TOLERANCE)
                    || r.harvested[k] < scenario.eh_targets[k] * (1.0 - RECORD_TOLERANCE)
            });
            violations += usize::from(missed);
            out.sar.push(
                scenario
                    .sar_matrices
                    .iter()
                    .zip(&uncertainty.sar_bounds)
                    .map(|(a, &tau)| sar_exposure_with(&(a + sample_sar_error(&mut rng, nt, tau)), sol))
                    .collect(),
            );
            out.sinr.push(r.sinr);
            out.harvested.push(r.harvested);
        }
        out.violation_probability = violations as f64 / samples.max(1) as f64;
        Ok(out)
    };
    // both designs see the same error draws
    Ok(RobustCdf { robust: realize(&robust, opts.seed)?, nonrobust: realize(&nonrobust, opts.seed)? })
}

/// Empirical CDF table: `scheme,user,value,cdf`, values ascending per user.
/// `transform` converts the raw value (e.g. to dB or dBm).
pub fn cdf_csv(cdf: &RobustCdf, pick: impl Fn(&Realizations) -> &Vec<Vec<f64>>, transform: impl Fn(f64) -> f64) -> String {
    let mut out = format!("{CDF_CSV_VERSION}\nscheme,user,value,cdf\n");
    for (name, r) in [("robust", &cdf.robust), ("nonrobust", &cdf.nonrobust)] {
        let table = pick(r);
        let users = table.first().map_or(0, Vec::len);
        for k in 0..users {
            let mut vals: Vec<f64> = table.iter().map(|row| transform(row[k])).collect();
            vals.sort_by(f64::total_cmp);
            let n = vals.len() as f64;
            for (i, v) in vals.iter().enumerate() {
                out.push_str(&format!("{name},{k},{},{:.6}\n", sci(*v), (i + 1) as f64 / n));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub seed: u64,
    pub t_fast: f64,
    pub t_sdp: f64,
    pub time_fast: f64,
    pub time_sdp: f64,
}

/// Fast single-user solver against the SDP path on one-user draws of the
/// configured scenario; both bisect to `rel_width`.
pub fn single_user_bench(
    cfg: &ExperimentConfig,
    trials: usize,
    seed: u64,
    rel_width: f64,
    jobs: usize,
) -> Result<Vec<BenchRow>> {
    let mut sc = cfg.scenario.clone();
    sc.num_users = 1;
    let scenario = sc.build()?;
    let opts = BisectionOptions { rel_width, ..Default::default() };
    let eh = cfg.eh;
    let pool = thread_pool(jobs)?;
    pool.install(|| {
        (0..trials)
            .into_par_iter()
            .map(|i| {
                let s = seed.wrapping_add(i as u64);
                let ch = generate_channels(&scenario, &cfg.channel, s)?;
                let start = Instant::now();
                let fast = maximize_ratio_single_user(&scenario, &ch, &eh, opts)?;
                let time_fast = start.elapsed().as_secs_f64();
                let start = Instant::now();
                let sdp = maximize_ratio_with(&scenario, &ch, &eh, opts)?;
                let time_sdp = start.elapsed().as_secs_f64();
                Ok(BenchRow { seed: s, t_fast: fast.t, t_sdp: sdp.t, time_fast, time_sdp })
            })
            .collect()
    })
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("# sarbf single-user bench v1\nseed,t_fast,t_sdp,rel_diff,time_fast_s,time_sdp_s\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:.3e},{:.6e},{:.6e}\n",
            r.seed,
            sci(r.t_fast),
            sci(r.t_sdp),
            (r.t_fast - r.t_sdp).abs() / r.t_sdp,
            r.time_fast,
            r.time_sdp
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Quick invariant checks over `trials` random instances: rectifier curve
/// round trips, the worst-case SAR bound against sampling, fast-vs-SDP
/// agreement, rank-one relaxation and the ordering optimal >= hybrid >=
/// ZF on a few default draws.
pub fn validate_invariants(trials: usize, seed: u64) -> Vec<CheckOutcome> {
    let eh = EhModel::default();
    let mut out = Vec::new();

    let mut worst: f64 = 0.0;
    for i in 0..200 {
        let x = 10f64.powf(-9.0 + 9.0 * i as f64 / 199.0);
        let y = eh.forward(x).unwrap_or(f64::NAN);
        let back = eh.inverse(y).unwrap_or(f64::NAN);
        worst = worst.max((back - x).abs() / x);
    }
    out.push(CheckOutcome {
        name: "eh_round_trip",
        passed: eh.forward(0.0).ok() == Some(0.0) && worst <= 1e-9,
        detail: format!("max relative round-trip error {worst:.2e}"),
    });

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = crate::model::default_sar_matrix();
    let mut sar_ok = true;
    for _ in 0..trials {
        let w = (0..2).fold(crate::linalg::CMatrix::zeros(4, 4), |acc, _| {
            acc + crate::linalg::outer(&sample_channel_error(&mut rng, 4, 1.0))
        });
        let bound = crate::robust::worst_case_sar_margin(&w, &a, 0.5);
        for _ in 0..1000 {
            let d = sample_sar_error(&mut rng, 4, 0.5);
            sar_ok &= crate::linalg::trace_product(&(&a + &d), &w) <= bound * (1.0 + 1e-12);
        }
    }
    out.push(CheckOutcome { name: "worst_case_sar_bound", passed: sar_ok, detail: format!("{trials} matrices x 1000 draws") });

    let single = SystemScenario::default_for(4, 1).expect("default scenario");
    let opts = BisectionOptions { rel_width: 1e-5, ..Default::default() };
    let mut max_diff: f64 = 0.0;
    let mut compared = 0;
    for i in 0..trials {
        let Ok(ch) = generate_channels(&single, &ChannelModel::default(), seed.wrapping_add(i as u64)) else { continue };
        if let (Ok(f), Ok(s)) =
            (maximize_ratio_single_user(&single, &ch, &eh, opts), maximize_ratio_with(&single, &ch, &eh, opts))
        {
            max_diff = max_diff.max((f.t - s.t).abs() / s.t);
            compared += 1;
        }
    }
    out.push(CheckOutcome {
        name: "fast_matches_sdp",
        passed: compared > 0 && max_diff <= 1e-3,
        detail: format!("{compared} instances, max relative gap {max_diff:.2e}"),
    });

    let multi = SystemScenario::default_for(4, 4).expect("default scenario");
    let mut worst_rank: f64 = 0.0;
    let mut order_ok = true;
    let mut solved = 0;
    for i in 0..trials {
        let Ok(ch) = generate_channels(&multi, &ChannelModel::default(), seed.wrapping_add(1000 + i as u64)) else {
            continue;
        };
        let Ok(tg) = probe_targets(&multi, &eh, 1.0) else { continue };
        if let Ok(sdp) = solve_p2(&multi, &ch, &tg.sinr, &tg.rf) {
            worst_rank = sdp.rank_ratios.iter().fold(worst_rank, |m, &r| m.max(r));
            solved += 1;
        }
        if let (Ok(o), Ok(h), Ok(z)) = (
            maximize_ratio(&multi, &ch, &eh),
            maximize_ratio_hybrid(&multi, &ch, &eh),
            maximize_ratio_fixed(FixedScheme::Zf, &multi, &ch, &eh),
        ) {
            order_ok &= o.t >= h.t * (1.0 - 2e-3) && h.t >= z.t * (1.0 - 2e-3);
        }
    }
    out.push(CheckOutcome {
        name: "relaxation_rank_one",
        passed: solved > 0 && worst_rank <= 1e-5,
        detail: format!("{solved} instances, worst eigenvalue ratio {worst_rank:.2e}"),
    });
    out.push(CheckOutcome { name: "scheme_ordering", passed: order_ok, detail: "optimal >= hybrid >= zf".into() });
    out
}
