//! Seeded experiment suites that emit one CSV row per condition.
//!
//! Every row repeats the full configuration, so a CSV alone is enough to
//! rerun it. Trial `t` of condition `c` draws from `task_stream(seed, [c, t])`
//! and all reductions are integer counts or order-preserving collections, so
//! the output does not depend on the number of worker threads.

use rand::RngCore;
use rayon::prelude::*;
use serde::Serialize;
use t2smark::bep::{analytic_bep, simulate_single_stage, sixteenth_quantile_taus, tau_sweep};
use t2smark::detector::null_statistics;
use t2smark::rng::{stream_from_u64, task_stream};
use t2smark::two_stage::{decode_two_stage_with_map, encode_two_stage_with_map};
use t2smark::{
    calibrate_threshold, CalibrationMethod, ChannelSpec, CodecParams, MasterKey, TwoStageParams,
    WatermarkBits,
};

use crate::error::{data, usage, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    /// Analytic bit-error probability (optionally with Monte-Carlo BER) over τ × σ.
    Bep,
    /// Single-stage BER over a τ grid at one σ.
    TauSweep,
    /// Two-stage payload BER over payload widths.
    Capacity,
    /// Two-stage payload accuracy over session key widths.
    Keysize,
    /// Analytic vs Monte-Carlo detection thresholds over target FPRs.
    Fprcal,
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::Bep => "bep",
            Suite::TauSweep => "tau_sweep",
            Suite::Capacity => "capacity",
            Suite::Keysize => "keysize",
            Suite::Fprcal => "fprcal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub suite: Suite,
    pub seed: u64,
    /// Encode/decode trials per condition.
    pub trials: usize,
    pub n_key: usize,
    pub key_bits: usize,
    pub n_payload: usize,
    pub payload_bits: usize,
    pub tau: f64,
    pub sigmas: Vec<f64>,
    pub taus: Vec<f64>,
    pub payload_bits_grid: Vec<usize>,
    pub key_bits_grid: Vec<usize>,
    pub fprs: Vec<f64>,
    /// Null vectors for calibration and, separately, for evaluation.
    pub null_trials: usize,
}

impl ExperimentConfig {
    /// Defaults for `suite` on the 4×64×64 layout.
    pub fn new(suite: Suite, seed: u64) -> Self {
        let (trials, sigmas, taus) = match suite {
            Suite::Bep => (0, vec![2.0], vec![0.0, t2smark::DEFAULT_TAU]),
            Suite::TauSweep => (1000, vec![2.0], sixteenth_quantile_taus()),
            Suite::Capacity => (1000, vec![2.0], vec![]),
            Suite::Keysize => (2000, vec![5.0], vec![]),
            Suite::Fprcal => (0, vec![], vec![]),
        };
        Self {
            suite,
            seed,
            trials,
            n_key: 4096,
            key_bits: 16,
            n_payload: 12_288,
            payload_bits: 256,
            tau: t2smark::DEFAULT_TAU,
            sigmas,
            taus,
            payload_bits_grid: vec![256, 384, 512, 768, 1024],
            key_bits_grid: vec![8, 16, 24, 32],
            fprs: vec![1e-2, 1e-3],
            null_trials: 100_000,
        }
    }

    fn layout(&self, key_bits: usize, payload_bits: usize) -> CliResult<TwoStageParams> {
        TwoStageParams::new(self.n_key, key_bits, self.n_payload, payload_bits, self.tau)
            .map_err(usage)
    }

    fn single_sigma(&self) -> CliResult<f64> {
        match self.sigmas.as_slice() {
            [s] => Ok(*s),
            _ => Err(usage(format!(
                "suite {} takes exactly one sigma",
                self.suite.name()
            ))),
        }
    }

    /// Rejects invalid grids before any computation.
    pub fn validate(&self) -> CliResult<()> {
        for &s in &self.sigmas {
            if !(s.is_finite() && s > 0.0) {
                return Err(usage(format!("sigma must be positive, got {s}")));
            }
        }
        for &t in &self.taus {
            if !(t.is_finite() && t >= 0.0) {
                return Err(usage(format!("tau must be non-negative, got {t}")));
            }
        }
        self.layout(self.key_bits, self.payload_bits)?;
        match self.suite {
            Suite::Bep => {
                if self.taus.is_empty() || self.sigmas.is_empty() {
                    return Err(usage("bep suite needs at least one tau and one sigma"));
                }
                for &t in &self.taus {
                    analytic_bep(self.n_payload, self.payload_bits, t, self.sigmas[0])
                        .map_err(usage)?;
                    CodecParams::new(self.n_payload, self.payload_bits, t).map_err(usage)?;
                }
            }
            Suite::TauSweep => {
                self.single_sigma()?;
                if self.taus.is_empty() || self.trials == 0 {
                    return Err(usage("tau_sweep needs at least one tau and one trial"));
                }
                for &t in &self.taus {
                    CodecParams::new(self.n_payload, self.payload_bits, t).map_err(usage)?;
                    analytic_bep(self.n_payload, self.payload_bits, t, self.sigmas[0])
                        .map_err(usage)?;
                }
            }
            Suite::Capacity => {
                self.single_sigma()?;
                if self.payload_bits_grid.is_empty() || self.trials == 0 {
                    return Err(usage("capacity suite needs payload widths and trials"));
                }
                for &m in &self.payload_bits_grid {
                    self.layout(self.key_bits, m)?;
                }
            }
            Suite::Keysize => {
                self.single_sigma()?;
                if self.key_bits_grid.is_empty() || self.trials == 0 {
                    return Err(usage("keysize suite needs key widths and trials"));
                }
                for &k in &self.key_bits_grid {
                    self.layout(k, self.payload_bits)?;
                }
            }
            Suite::Fprcal => {
                if self.fprs.is_empty() {
                    return Err(usage("fprcal needs at least one target FPR"));
                }
                for &f in &self.fprs {
                    if !(f > 0.0 && f < 0.5) {
                        return Err(usage(format!("target FPR must lie in (0, 0.5), got {f}")));
                    }
                }
                if self.null_trials < 2 {
                    return Err(usage("fprcal needs at least 2 null trials"));
                }
            }
        }
        Ok(())
    }
}

/// CSV text plus the configuration that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub config: ExperimentConfig,
    pub csv: String,
    pub rows: usize,
}

struct Table {
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

const COMMON: [&str; 10] = [
    "version",
    "suite",
    "seed",
    "trials",
    "n_key",
    "key_bits",
    "n_payload",
    "payload_bits",
    "tau",
    "sigma",
];

impl Table {
    fn new(extra: &[&'static str]) -> Self {
        Self {
            header: COMMON.iter().chain(extra).copied().collect(),
            rows: Vec::new(),
        }
    }

    fn to_csv(&self) -> CliResult<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).map_err(data)?;
        for r in &self.rows {
            w.write_record(r).map_err(data)?;
        }
        let bytes = w.into_inner().map_err(data)?;
        String::from_utf8(bytes).map_err(data)
    }
}

struct Common<'a> {
    cfg: &'a ExperimentConfig,
    trials: usize,
    key_bits: usize,
    payload_bits: usize,
    tau: f64,
    sigma: Option<f64>,
}

impl Common<'_> {
    fn cells(&self) -> Vec<String> {
        vec![
            env!("CARGO_PKG_VERSION").to_owned(),
            self.cfg.suite.name().to_owned(),
            self.cfg.seed.to_string(),
            self.trials.to_string(),
            self.cfg.n_key.to_string(),
            self.key_bits.to_string(),
            self.cfg.n_payload.to_string(),
            self.payload_bits.to_string(),
            self.tau.to_string(),
            self.sigma.map(|s| s.to_string()).unwrap_or_default(),
        ]
    }
}

fn row(common: Common<'_>, extra: Vec<String>) -> Vec<String> {
    let mut r = common.cells();
    r.extend(extra);
    r
}

/// Outcome counts of two-stage encode → channel → decode trials.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct TwoStageCounts {
    pub trials: u64,
    pub key_failures: u64,
    pub payload_errors: u64,
    pub payload_bits: u64,
}

impl TwoStageCounts {
    fn merge(self, o: Self) -> Self {
        Self {
            trials: self.trials + o.trials,
            key_failures: self.key_failures + o.key_failures,
            payload_errors: self.payload_errors + o.payload_errors,
            payload_bits: self.payload_bits + o.payload_bits,
        }
    }

    pub fn payload_ber(&self) -> f64 {
        self.payload_errors as f64 / self.payload_bits as f64
    }

    pub fn key_success_rate(&self) -> f64 {
        1.0 - self.key_failures as f64 / self.trials as f64
    }
}

/// Runs `trials` full two-stage round trips through `channel`, each with a
/// fresh master key and payload.
pub fn simulate_two_stage(
    params: &TwoStageParams,
    channel: &ChannelSpec,
    trials: usize,
    seed: u64,
    condition: u64,
) -> CliResult<TwoStageCounts> {
    (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = task_stream(seed, &[condition, t as u64]);
            let master = MasterKey::random(&mut rng);
            let map1 = params.stage1_map(&master).map_err(data)?;
            let payload = WatermarkBits::random(&mut rng, params.payload_bits());
            let enc = encode_two_stage_with_map(params, &map1, &payload, &mut rng).map_err(data)?;
            let noisy = channel.apply(&enc.noise, &mut rng).map_err(data)?;
            let dec = decode_two_stage_with_map(params, &map1, &noisy).map_err(data)?;
            Ok(TwoStageCounts {
                trials: 1,
                key_failures: u64::from(dec.session_key != enc.session_key),
                payload_errors: (payload.len() - dec.payload.agreement(&payload)) as u64,
                payload_bits: payload.len() as u64,
            })
        })
        .try_reduce(TwoStageCounts::default, |a, b| Ok(a.merge(b)))
}

/// Runs the suite on the current rayon pool.
pub fn run(cfg: &ExperimentConfig) -> CliResult<ExperimentOutput> {
    cfg.validate()?;
    let table = match cfg.suite {
        Suite::Bep => run_bep(cfg)?,
        Suite::TauSweep => run_tau_sweep(cfg)?,
        Suite::Capacity => run_capacity(cfg)?,
        Suite::Keysize => run_keysize(cfg)?,
        Suite::Fprcal => run_fprcal(cfg)?,
    };
    Ok(ExperimentOutput {
        config: cfg.clone(),
        csv: table.to_csv()?,
        rows: table.rows.len(),
    })
}

/// Runs the suite on a dedicated pool of `jobs` threads (1 = sequential).
pub fn run_with_jobs(cfg: &ExperimentConfig, jobs: usize) -> CliResult<ExperimentOutput> {
    if jobs == 0 {
        return Err(usage("--jobs must be at least 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(data)?;
    pool.install(|| run(cfg))
}

fn run_bep(cfg: &ExperimentConfig) -> CliResult<Table> {
    let mut table = Table::new(&[
        "r",
        "a",
        "big_a",
        "b",
        "c",
        "analytic_pe",
        "empirical_ber",
        "std_err",
        "errors",
        "bits",
    ]);
    let mut condition = 0u64;
    for &tau in &cfg.taus {
        for &sigma in &cfg.sigmas {
            let p = analytic_bep(cfg.n_payload, cfg.payload_bits, tau, sigma).map_err(usage)?;
            let params = CodecParams::new(cfg.n_payload, cfg.payload_bits, tau).map_err(usage)?;
            let empirical = if cfg.trials > 0 {
                let c = simulate_single_stage(
                    &params,
                    &ChannelSpec::Awgn { sigma },
                    cfg.trials,
                    cfg.seed,
                    condition,
                )
                .map_err(data)?;
                vec![
                    c.rate().to_string(),
                    c.std_err().to_string(),
                    c.errors.to_string(),
                    c.bits.to_string(),
                ]
            } else {
                vec![String::new(); 4]
            };
            condition += 1;
            let mut extra = vec![
                params.r.to_string(),
                p.a.to_string(),
                p.big_a.to_string(),
                p.b_val.to_string(),
                p.c_val.to_string(),
                p.p_e.to_string(),
            ];
            extra.extend(empirical);
            let common = Common {
                cfg,
                trials: cfg.trials,
                key_bits: cfg.key_bits,
                payload_bits: cfg.payload_bits,
                tau,
                sigma: Some(sigma),
            };
            table.rows.push(row(common, extra));
        }
    }
    Ok(table)
}

fn run_tau_sweep(cfg: &ExperimentConfig) -> CliResult<Table> {
    let sigma = cfg.single_sigma()?;
    let rows = tau_sweep(
        cfg.n_payload,
        cfg.payload_bits,
        sigma,
        &cfg.taus,
        cfg.trials,
        &mut stream_from_u64(cfg.seed),
    )
    .map_err(data)?;
    let mut table = Table::new(&[
        "r",
        "analytic_pe",
        "empirical_ber",
        "std_err",
        "errors",
        "bits",
    ]);
    for r in rows {
        let common = Common {
            cfg,
            trials: cfg.trials,
            key_bits: cfg.key_bits,
            payload_bits: cfg.payload_bits,
            tau: r.tau,
            sigma: Some(sigma),
        };
        table.rows.push(row(
            common,
            vec![
                r.r.to_string(),
                r.analytic_pe.to_string(),
                r.empirical_ber.to_string(),
                r.std_err.to_string(),
                r.errors.to_string(),
                r.bits.to_string(),
            ],
        ));
    }
    Ok(table)
}

fn run_capacity(cfg: &ExperimentConfig) -> CliResult<Table> {
    let sigma = cfg.single_sigma()?;
    let channel = ChannelSpec::Awgn { sigma };
    let mut table = Table::new(&[
        "r_payload",
        "analytic_payload_pe",
        "payload_ber",
        "std_err",
        "key_failure_rate",
        "payload_errors",
        "payload_bits_total",
    ]);
    for (c, &m_b) in cfg.payload_bits_grid.iter().enumerate() {
        let params = cfg.layout(cfg.key_bits, m_b)?;
        let analytic = analytic_bep(params.stage2.n, m_b, cfg.tau, sigma).map_err(usage)?;
        let counts = simulate_two_stage(&params, &channel, cfg.trials, cfg.seed, c as u64)?;
        let ber = counts.payload_ber();
        let common = Common {
            cfg,
            trials: cfg.trials,
            key_bits: cfg.key_bits,
            payload_bits: m_b,
            tau: cfg.tau,
            sigma: Some(sigma),
        };
        table.rows.push(row(
            common,
            vec![
                params.stage2.r.to_string(),
                analytic.p_e.to_string(),
                ber.to_string(),
                (ber * (1.0 - ber) / counts.payload_bits as f64)
                    .sqrt()
                    .to_string(),
                (counts.key_failures as f64 / counts.trials as f64).to_string(),
                counts.payload_errors.to_string(),
                counts.payload_bits.to_string(),
            ],
        ));
    }
    Ok(table)
}

fn run_keysize(cfg: &ExperimentConfig) -> CliResult<Table> {
    let sigma = cfg.single_sigma()?;
    let channel = ChannelSpec::Awgn { sigma };
    let mut table = Table::new(&[
        "r_key",
        "analytic_key_pe",
        "predicted_key_success",
        "key_success_rate",
        "predicted_payload_accuracy",
        "payload_accuracy",
        "payload_errors",
        "payload_bits_total",
    ]);
    for (c, &m_k) in cfg.key_bits_grid.iter().enumerate() {
        let params = cfg.layout(m_k, cfg.payload_bits)?;
        let key_pe = analytic_bep(params.stage1.n, m_k, cfg.tau, sigma)
            .map_err(usage)?
            .p_e;
        let payload_pe = analytic_bep(params.stage2.n, cfg.payload_bits, cfg.tau, sigma)
            .map_err(usage)?
            .p_e;
        let key_ok = (1.0 - key_pe).powi(m_k as i32);
        // A wrong session key leaves the payload at chance.
        let predicted_acc = key_ok * (1.0 - payload_pe) + (1.0 - key_ok) * 0.5;
        let counts = simulate_two_stage(&params, &channel, cfg.trials, cfg.seed, c as u64)?;
        let common = Common {
            cfg,
            trials: cfg.trials,
            key_bits: m_k,
            payload_bits: cfg.payload_bits,
            tau: cfg.tau,
            sigma: Some(sigma),
        };
        table.rows.push(row(
            common,
            vec![
                params.stage1.r.to_string(),
                key_pe.to_string(),
                key_ok.to_string(),
                counts.key_success_rate().to_string(),
                predicted_acc.to_string(),
                (1.0 - counts.payload_ber()).to_string(),
                counts.payload_errors.to_string(),
                counts.payload_bits.to_string(),
            ],
        ));
    }
    Ok(table)
}

/// Calibration and evaluation for one target FPR.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FprCalibration {
    pub target_fpr: f64,
    pub analytic_threshold: f64,
    pub mc_threshold: f64,
    /// `|mc − analytic| / mc`
    pub relative_gap: f64,
    /// Positive rate of each threshold on an independent null set.
    pub analytic_empirical_fpr: f64,
    pub mc_empirical_fpr: f64,
    pub eval_trials: usize,
}

/// Calibrates analytically and by Monte-Carlo (`null_trials` nulls), then
/// evaluates both thresholds on `null_trials` fresh nulls under another key.
pub fn calibrate_and_evaluate(
    params: &TwoStageParams,
    target_fpr: f64,
    null_trials: usize,
    seed: u64,
    condition: u64,
) -> CliResult<FprCalibration> {
    let analytic = calibrate_threshold(
        params,
        target_fpr,
        CalibrationMethod::Analytic,
        0,
        &mut stream_from_u64(seed),
    )
    .map_err(usage)?;
    let mc = calibrate_threshold(
        params,
        target_fpr,
        CalibrationMethod::MonteCarlo,
        null_trials,
        &mut task_stream(seed, &[condition, 0]),
    )
    .map_err(usage)?;
    let mut eval_rng = task_stream(seed, &[condition, 1]);
    let master = MasterKey::random(&mut eval_rng);
    let map1 = params.stage1_map(&master).map_err(data)?;
    let nulls = null_statistics(params, &map1, null_trials, eval_rng.next_u64());
    let rate = |d: f64| nulls.iter().filter(|&&l| l > d).count() as f64 / nulls.len() as f64;
    Ok(FprCalibration {
        target_fpr,
        analytic_threshold: analytic,
        mc_threshold: mc,
        relative_gap: (mc - analytic).abs() / mc,
        analytic_empirical_fpr: rate(analytic),
        mc_empirical_fpr: rate(mc),
        eval_trials: nulls.len(),
    })
}

fn run_fprcal(cfg: &ExperimentConfig) -> CliResult<Table> {
    let params = cfg.layout(cfg.key_bits, cfg.payload_bits)?;
    let mut table = Table::new(&[
        "target_fpr",
        "null_trials",
        "analytic_threshold",
        "mc_threshold",
        "relative_gap",
        "analytic_empirical_fpr",
        "mc_empirical_fpr",
    ]);
    for (c, &fpr) in cfg.fprs.iter().enumerate() {
        let cal = calibrate_and_evaluate(&params, fpr, cfg.null_trials, cfg.seed, c as u64)?;
        let common = Common {
            cfg,
            trials: cfg.trials,
            key_bits: cfg.key_bits,
            payload_bits: cfg.payload_bits,
            tau: cfg.tau,
            sigma: None,
        };
        table.rows.push(row(
            common,
            vec![
                fpr.to_string(),
                cfg.null_trials.to_string(),
                cal.analytic_threshold.to_string(),
                cal.mc_threshold.to_string(),
                cal.relative_gap.to_string(),
                cal.analytic_empirical_fpr.to_string(),
                cal.mc_empirical_fpr.to_string(),
            ],
        ));
    }
    Ok(table)
}
