//! Subcommand definitions and handlers. Each handler returns the text to
//! print on stdout; JSON for single-shot commands.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;
use t2smark::rng::stream_from_u64;
use t2smark::two_stage::{decode_two_stage_with_map, encode_two_stage_with_map};
use t2smark::{
    calibrate_threshold, detect, CalibrationMethod, ChannelSpec, MasterKey, NoiseVector, Registry,
    TwoStageParams, WatermarkBits, DEFAULT_TAU,
};

use crate::error::{data, usage, CliError, CliResult};
use crate::experiment::{self, ExperimentConfig, Suite};
use crate::noise_file;

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(
    name = "t2smark",
    version,
    about = "Tail-truncated sampling watermarks for Gaussian latents"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a 256-bit master key as 64 hex characters.
    Keygen {
        #[arg(long)]
        out: PathBuf,
        /// Deterministic key for tests.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Sample a watermarked noise vector.
    Embed {
        #[arg(long)]
        key: PathBuf,
        /// Payload as hex, or `random`.
        #[arg(long, default_value = "random")]
        payload: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        layout: LayoutArgs,
    },
    /// Apply a channel such as `awgn:1.0+flip:0.01` to a noise file.
    Attack {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        channel: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode the session key and payload.
    Extract {
        #[arg(long)]
        key: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Reference payload hex; adds bit accuracy to the report.
        #[arg(long)]
        expected: Option<String>,
        #[command(flatten)]
        layout: LayoutArgs,
    },
    /// Compare the stage-1 statistic with a calibrated threshold.
    Detect {
        #[arg(long)]
        key: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        calibration: CalibrationArgs,
        #[command(flatten)]
        layout: LayoutArgs,
    },
    /// Print the detection threshold for a target false-positive rate.
    Calibrate {
        #[command(flatten)]
        calibration: CalibrationArgs,
        #[command(flatten)]
        layout: LayoutArgs,
    },
    /// Run a seeded experiment suite and write CSV.
    Experiment(ExperimentArgs),
    /// Identity registry operations.
    Trace {
        #[command(subcommand)]
        command: TraceCommand,
    },
}

#[derive(Debug, Clone, Args)]
pub struct LayoutArgs {
    /// Total latent dimension.
    #[arg(long, default_value_t = 16_384)]
    pub n: usize,
    /// Stage-1 (session key) dimension.
    #[arg(long, default_value_t = 4096)]
    pub n_key: usize,
    #[arg(long, default_value_t = 16)]
    pub key_bits: usize,
    #[arg(long, default_value_t = 256)]
    pub payload_bits: usize,
    #[arg(long, default_value_t = DEFAULT_TAU)]
    pub tau: f64,
    /// 16×64×64 layout: n = 65536, stage 1 = 16384.
    #[arg(long)]
    pub sd35: bool,
}

impl LayoutArgs {
    pub fn dims(&self) -> (usize, usize) {
        if self.sd35 {
            (65_536, 16_384)
        } else {
            (self.n, self.n_key)
        }
    }

    pub fn params(&self) -> CliResult<TwoStageParams> {
        let (n, n_key) = self.dims();
        if n_key >= n {
            return Err(usage(format!(
                "--n-key ({n_key}) must be smaller than --n ({n})"
            )));
        }
        TwoStageParams::new(n_key, self.key_bits, n - n_key, self.payload_bits, self.tau)
            .map_err(usage)
    }
}

#[derive(Debug, Clone, Args)]
pub struct CalibrationArgs {
    #[arg(long, default_value_t = 1e-6)]
    pub fpr: f64,
    /// `analytic` or `monte_carlo`.
    #[arg(long, default_value = "analytic")]
    pub method: String,
    /// Null vectors for Monte-Carlo calibration.
    #[arg(long, default_value_t = 100_000)]
    pub trials: usize,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct ExperimentArgs {
    #[arg(value_enum)]
    pub suite: Suite,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Trials per condition (suite default if omitted).
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub sigma: Option<Vec<f64>>,
    /// τ values for bep and tau_sweep.
    #[arg(long, value_delimiter = ',')]
    pub tau_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub payload_bits_grid: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub key_bits_grid: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub fpr: Option<Vec<f64>>,
    #[arg(long)]
    pub null_trials: Option<usize>,
    /// Worker threads (1 = sequential). Output does not depend on it.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[command(flatten)]
    pub layout: LayoutArgs,
}

impl ExperimentArgs {
    pub fn config(&self) -> CliResult<ExperimentConfig> {
        let (n, n_key) = self.layout.dims();
        if n_key >= n {
            return Err(usage(format!(
                "--n-key ({n_key}) must be smaller than --n ({n})"
            )));
        }
        let mut cfg = ExperimentConfig::new(self.suite, self.seed);
        cfg.n_key = n_key;
        cfg.n_payload = n - n_key;
        cfg.key_bits = self.layout.key_bits;
        cfg.payload_bits = self.layout.payload_bits;
        cfg.tau = self.layout.tau;
        macro_rules! set {
            ($field:ident, $src:expr) => {
                if let Some(v) = &$src {
                    cfg.$field = v.clone();
                }
            };
        }
        set!(trials, self.trials);
        set!(sigmas, self.sigma);
        set!(taus, self.tau_grid);
        set!(payload_bits_grid, self.payload_bits_grid);
        set!(key_bits_grid, self.key_bits_grid);
        set!(fprs, self.fpr);
        set!(null_trials, self.null_trials);
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
pub enum TraceCommand {
    /// Add an account and its watermark bits to a registry file.
    Register {
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        account: String,
        /// Watermark bits as hex.
        #[arg(long)]
        bits: String,
    },
    /// Find the registered account closest to a watermark.
    Match {
        #[arg(long)]
        db: PathBuf,
        /// Watermark bits as hex; otherwise extracted from --input with --key.
        #[arg(long, conflicts_with_all = ["key", "input"])]
        bits: Option<String>,
        #[arg(long, requires = "input")]
        key: Option<PathBuf>,
        #[arg(long, requires = "key")]
        input: Option<PathBuf>,
        #[command(flatten)]
        layout: LayoutArgs,
    },
}

fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(rand::random)
}

fn read_key(path: &Path) -> CliResult<MasterKey> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    MasterKey::from_hex(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn parse_bits(hex: &str, expected_len: usize) -> CliResult<WatermarkBits> {
    let bits =
        WatermarkBits::from_hex(hex.trim()).map_err(|e| usage(format!("bad hex bits: {e}")))?;
    if bits.len() != expected_len {
        return Err(usage(format!(
            "expected {expected_len} bits, got {}",
            bits.len()
        )));
    }
    Ok(bits)
}

fn check_len(params: &TwoStageParams, noise: &NoiseVector) -> CliResult<()> {
    if noise.len() != params.n() {
        return Err(data(format!(
            "noise file has {} values but the layout needs {}",
            noise.len(),
            params.n()
        )));
    }
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    serde_json::to_string_pretty(value).map_err(data)
}

fn hex_or_bits(bits: &WatermarkBits) -> String {
    bits.to_hex().unwrap_or_else(|| {
        bits.as_slice()
            .iter()
            .map(|&b| if b > 0 { '1' } else { '0' })
            .collect()
    })
}

/// Parses `args` (including the program name) and runs the command.
/// Help and version requests come back as `Ok` with their text.
pub fn run_args<I, T>(args: I) -> CliResult<String>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) => match e.kind() {
            clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                Ok(e.to_string())
            }
            _ => {
                let msg = e.to_string();
                Err(CliError::Usage(
                    msg.strip_prefix("error: ")
                        .unwrap_or(&msg)
                        .trim_end()
                        .to_owned(),
                ))
            }
        },
    }
}

pub fn run(cli: Cli) -> CliResult<String> {
    match cli.command {
        Command::Keygen { out, seed } => keygen(&out, seed),
        Command::Embed {
            key,
            payload,
            seed,
            out,
            layout,
        } => embed(&key, &payload, seed, &out, &layout),
        Command::Attack {
            input,
            channel,
            seed,
            out,
        } => attack(&input, &channel, seed, &out),
        Command::Extract {
            key,
            input,
            expected,
            layout,
        } => extract(&key, &input, expected.as_deref(), &layout),
        Command::Detect {
            key,
            input,
            calibration,
            layout,
        } => detect_cmd(&key, &input, &calibration, &layout),
        Command::Calibrate {
            calibration,
            layout,
        } => calibrate(&calibration, &layout),
        Command::Experiment(args) => experiment_cmd(&args),
        Command::Trace { command } => trace(command),
    }
}

fn keygen(out: &Path, seed: Option<u64>) -> CliResult<String> {
    let key = match seed {
        Some(s) => MasterKey::random(&mut stream_from_u64(s)),
        None => MasterKey::from_bytes(rand::random()),
    };
    fs::write(out, format!("{}\n", key.to_hex())).map_err(|e| CliError::io(out, e))?;
    to_json(&json!({
        "command": "keygen",
        "version": VERSION,
        "out": out,
        "seed": seed,
    }))
}

fn embed(
    key_path: &Path,
    payload: &str,
    seed: Option<u64>,
    out: &Path,
    layout: &LayoutArgs,
) -> CliResult<String> {
    let params = layout.params()?;
    let seed = resolve_seed(seed);
    let mut rng = stream_from_u64(seed);
    let payload = if payload == "random" {
        WatermarkBits::random(&mut rng, params.payload_bits())
    } else {
        parse_bits(payload, params.payload_bits())?
    };
    let master = read_key(key_path)?;
    let map1 = params.stage1_map(&master).map_err(data)?;
    let enc = encode_two_stage_with_map(&params, &map1, &payload, &mut rng).map_err(data)?;
    noise_file::write(out, &enc.noise)?;
    to_json(&json!({
        "command": "embed",
        "version": VERSION,
        "params": params,
        "seed": seed,
        "key_file": key_path,
        "out": out,
        "payload": hex_or_bits(&payload),
        "session_key": {
            "value": enc.session_key.value(),
            "width": enc.session_key.width(),
            "test_only": true,
        },
    }))
}

fn attack(input: &Path, channel: &str, seed: Option<u64>, out: &Path) -> CliResult<String> {
    let spec: ChannelSpec = channel
        .parse()
        .map_err(|e| usage(format!("bad channel {channel:?}: {e}")))?;
    let seed = resolve_seed(seed);
    let noise = noise_file::read(input)?;
    let attacked = spec
        .apply(&noise, &mut stream_from_u64(seed))
        .map_err(data)?;
    noise_file::write(out, &attacked)?;
    to_json(&json!({
        "command": "attack",
        "version": VERSION,
        "input": input,
        "channel": spec.to_string(),
        "seed": seed,
        "out": out,
        "n": attacked.len(),
    }))
}

fn extract(
    key_path: &Path,
    input: &Path,
    expected: Option<&str>,
    layout: &LayoutArgs,
) -> CliResult<String> {
    let params = layout.params()?;
    let expected = expected
        .map(|h| parse_bits(h, params.payload_bits()))
        .transpose()?;
    let master = read_key(key_path)?;
    let noise = noise_file::read(input)?;
    check_len(&params, &noise)?;
    let map1 = params.stage1_map(&master).map_err(data)?;
    let dec = decode_two_stage_with_map(&params, &map1, &noise).map_err(data)?;
    let accuracy = expected.map(|e| e.agreement(&dec.payload) as f64 / e.len() as f64);
    to_json(&json!({
        "command": "extract",
        "version": VERSION,
        "params": params,
        "input": input,
        "payload": hex_or_bits(&dec.payload),
        "session_key": { "value": dec.session_key.value(), "width": dec.session_key.width() },
        "bit_accuracy": accuracy,
    }))
}

fn method(calibration: &CalibrationArgs) -> CliResult<CalibrationMethod> {
    calibration.method.parse().map_err(usage)
}

fn threshold(
    params: &TwoStageParams,
    calibration: &CalibrationArgs,
) -> CliResult<(f64, CalibrationMethod, u64)> {
    let method = method(calibration)?;
    let seed = resolve_seed(calibration.seed);
    let d = calibrate_threshold(
        params,
        calibration.fpr,
        method,
        calibration.trials,
        &mut stream_from_u64(seed),
    )
    .map_err(usage)?;
    Ok((d, method, seed))
}

fn detect_cmd(
    key_path: &Path,
    input: &Path,
    calibration: &CalibrationArgs,
    layout: &LayoutArgs,
) -> CliResult<String> {
    let params = layout.params()?;
    method(calibration)?;
    let master = read_key(key_path)?;
    let noise = noise_file::read(input)?;
    check_len(&params, &noise)?;
    let (d, method, seed) = threshold(&params, calibration)?;
    let result = detect(&params, &master, &noise, d, calibration.fpr).map_err(data)?;
    to_json(&json!({
        "command": "detect",
        "version": VERSION,
        "params": params,
        "input": input,
        "method": method,
        "trials": calibration.trials,
        "seed": seed,
        "statistic": result.statistic,
        "threshold": result.threshold,
        "watermarked": result.watermarked,
        "target_fpr": result.target_fpr,
    }))
}

fn calibrate(calibration: &CalibrationArgs, layout: &LayoutArgs) -> CliResult<String> {
    let params = layout.params()?;
    let (d, method, seed) = threshold(&params, calibration)?;
    to_json(&json!({
        "command": "calibrate",
        "version": VERSION,
        "params": params,
        "method": method,
        "trials": calibration.trials,
        "seed": seed,
        "target_fpr": calibration.fpr,
        "threshold": d,
    }))
}

fn experiment_cmd(args: &ExperimentArgs) -> CliResult<String> {
    let cfg = args.config()?;
    cfg.validate()?;
    let output = match args.jobs {
        Some(j) => experiment::run_with_jobs(&cfg, j)?,
        None => experiment::run(&cfg)?,
    };
    fs::write(&args.out, &output.csv).map_err(|e| CliError::io(&args.out, e))?;
    to_json(&json!({
        "command": "experiment",
        "version": VERSION,
        "config": output.config,
        "out": args.out,
        "rows": output.rows,
    }))
}

fn load_registry(db: &Path, m: Option<usize>) -> CliResult<Registry> {
    let text = match fs::read_to_string(db) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound && m.is_some() => String::new(),
        Err(e) => return Err(CliError::io(db, e)),
    };
    let m = match m {
        Some(m) => m,
        None => text
            .lines()
            .find_map(|l| l.split_once('\t'))
            .map(|(_, bits)| bits.trim_end_matches('\r').len())
            .ok_or_else(|| CliError::Data(format!("{}: registry is empty", db.display())))?,
    };
    Registry::from_text(m, &text).map_err(|e| CliError::Data(format!("{}: {e}", db.display())))
}

fn trace(command: TraceCommand) -> CliResult<String> {
    match command {
        TraceCommand::Register { db, account, bits } => {
            let bits = WatermarkBits::from_hex(bits.trim())
                .map_err(|e| usage(format!("bad hex bits: {e}")))?;
            let mut reg = load_registry(&db, Some(bits.len()))?;
            reg.register(&account, bits).map_err(data)?;
            fs::write(&db, reg.to_text()).map_err(|e| CliError::io(&db, e))?;
            to_json(&json!({
                "command": "trace register",
                "version": VERSION,
                "db": db,
                "account": account,
                "records": reg.len(),
            }))
        }
        TraceCommand::Match {
            db,
            bits,
            key,
            input,
            layout,
        } => {
            let reg = load_registry(&db, None)?;
            let query = match (bits, key, input) {
                (Some(hex), _, _) => parse_bits(&hex, reg.bit_len())?,
                (None, Some(key), Some(input)) => {
                    let params = layout.params()?;
                    let master = read_key(&key)?;
                    let noise = noise_file::read(&input)?;
                    check_len(&params, &noise)?;
                    let map1 = params.stage1_map(&master).map_err(data)?;
                    decode_two_stage_with_map(&params, &map1, &noise)
                        .map_err(data)?
                        .payload
                }
                _ => return Err(usage("trace match needs --bits or both --key and --input")),
            };
            let m = reg.best_match(&query).map_err(data)?;
            to_json(&json!({
                "command": "trace match",
                "version": VERSION,
                "db": db,
                "records": reg.len(),
                "query": hex_or_bits(&query),
                "account_id": m.account_id,
                "bit_accuracy": m.bit_accuracy,
                "margin": m.margin,
            }))
        }
    }
}
