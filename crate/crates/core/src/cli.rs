//! Command-line front end.
//!
//! Every CSV starts with a `#` line carrying the tool version and the SHA-256
//! of the config file, followed by a header row. Exit codes: 0 success,
//! 2 config error, 3 numerical failure, 4 I/O error.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use num_rational::Rational64;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::attack::{AttackerConfig, CounterSemantics};
use crate::chain::{
    attacked_j, j_max, recommend_schedule, threshold_beta_against, Bracket, ChainModel, FlagRates, JMax,
    Recommendation, ThresholdReport,
};
use crate::config::{ExperimentConfig, ResolvedDetector};
use crate::error::Error;
use crate::lds::{steady_state, SteadyState, SystemModel};
use crate::montecarlo::{simulate, sweep_beta_with, ScheduleKind, SimConfig, SimReport};
use crate::rational::to_f64;
use crate::schedule::{
    build_offline_schedule, first_principles_offline_j, offline_j_closed_form, online_high_rate, online_j_closed_form,
    online_j_renewal, EnergyModel,
};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const THREADS_ENV: &str = "ACKSIEGE_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "acksiege",
    version,
    about = "Fake flag-ACK attacks on ACK-based sensor power schedules"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Closed forms, chain analysis, threshold and recommendation as JSON (plus a β table CSV).
    Analyze(CommonArgs),
    /// Monte Carlo `k,J_k` series for the configured schedule.
    Simulate(CommonArgs),
    /// J_k curves: offline, online, online under β = 1/5 and β = 2/3.
    Fig4(CommonArgs),
    /// Chain J over the β grid with Monte Carlo cross-points and the threshold bracket.
    Fig5(CommonArgs),
    /// β table with the recommendation per budget.
    Threshold(CommonArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Output file; standard output when absent.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub runs: Option<u64>,
    #[arg(long)]
    pub horizon: Option<u64>,
    #[arg(long = "t-max")]
    pub t_max: Option<u64>,
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numerical(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::DivergedSolver { .. } | Error::DivergingSeries(_) | Error::Analysis { .. } => {
                CliError::Numerical(e.to_string())
            }
            _ => CliError::Config(e.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// A loaded config with command-line overrides applied.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: ExperimentConfig,
    pub sha256: String,
}

impl Loaded {
    pub fn from_text(text: &str, args: &CommonArgs) -> CliResult<Self> {
        let mut config = ExperimentConfig::from_json(text)?;
        if let Some(s) = args.seed {
            config.sim.seed = s;
        }
        if let Some(r) = args.runs {
            config.sim.runs = r;
        }
        if let Some(h) = args.horizon {
            config.sim.horizon = h;
        }
        if let Some(t) = args.t_max {
            config.analysis.t_max = t;
        }
        Ok(Self {
            config,
            sha256: hex(&Sha256::digest(text.as_bytes())),
        })
    }

    fn banner(&self) -> String {
        format!("# acksiege {VERSION} config_sha256={}\n", self.sha256)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Everything derived from the config that the commands share.
struct Setup {
    model: SystemModel,
    ss: SteadyState,
    energy: EnergyModel,
    detector: ResolvedDetector,
    attacker: AttackerConfig,
}

impl Setup {
    fn new(cfg: &ExperimentConfig) -> CliResult<Self> {
        let model = cfg.system_model()?;
        let ss = steady_state(&model)?;
        let energy = cfg.energy_model()?;
        let detector = cfg.detector(&energy)?;
        let attacker = cfg.attacker()?;
        Ok(Self {
            model,
            ss,
            energy,
            detector,
            attacker,
        })
    }

    fn j_offline(&self) -> f64 {
        offline_j_closed_form(&build_offline_schedule(&self.energy), &self.ss, self.model.lambda())
    }

    fn threshold(&self, cfg: &ExperimentConfig) -> CliResult<ThresholdReport> {
        Ok(threshold_beta_against(
            &self.ss,
            self.model.lambda(),
            self.j_offline(),
            self.detector.config.z0,
            cfg.analysis.t_max,
            self.attacker.semantics,
        )?)
    }

    fn sim(&self, cfg: &ExperimentConfig, schedule: ScheduleKind, attacker: AttackerConfig) -> CliResult<SimConfig> {
        let sim = SimConfig {
            detector: Some(self.detector.config),
            attacker,
            schedule,
            horizon: cfg.sim.horizon,
            runs: cfg.sim.runs,
            seed: cfg.sim.seed,
            mode: cfg.sim.mode,
            channel: cfg.sim.channel,
            record_every: cfg.sim.record_every,
            ..SimConfig::offline(self.model.clone(), self.energy)
        };
        sim.validate()?;
        Ok(sim)
    }
}

#[derive(Debug, Serialize)]
struct EnergyReport {
    delta_high: String,
    delta_low: String,
    psi: String,
    high_fraction: String,
}

#[derive(Debug, Serialize)]
struct AttackerReport {
    enabled: bool,
    beta: String,
    r: u64,
    t: u64,
    semantics: CounterSemantics,
}

#[derive(Debug, Serialize)]
struct JMaxReport {
    #[serde(flatten)]
    j_max: JMax,
    /// `ρ(A)²(1−λ)`, which must stay below 1.
    series_ratio: f64,
}

#[derive(Debug, Serialize)]
struct AnalyzeReport {
    tool: &'static str,
    version: &'static str,
    config_sha256: String,
    pbar: Vec<Vec<f64>>,
    pbar_trace: f64,
    steady_state_iterations: usize,
    energy: EnergyReport,
    offline_schedule: String,
    j_offline: f64,
    j_offline_enumerated: f64,
    detector: ResolvedDetector,
    online_high_rate: f64,
    online_energy_rate: f64,
    j_online: f64,
    j_online_closed_form: f64,
    attacker: AttackerReport,
    j_attacked: f64,
    attacked_flag_rates: Option<FlagRates>,
    unattacked_flag_rates: FlagRates,
    j_max: Option<JMaxReport>,
    j_max_error: Option<String>,
    j_unattacked_fixed_window: f64,
    bracket: Bracket,
    beta_bar: f64,
    monotonicity_violations: Vec<(f64, f64)>,
    recommendation: Recommendation,
}

fn rational_str(x: Rational64) -> String {
    x.to_string()
}

fn analyze_report(loaded: &Loaded) -> CliResult<(AnalyzeReport, ThresholdReport)> {
    let cfg = &loaded.config;
    let s = Setup::new(cfg)?;
    let lambda = s.model.lambda();
    let sched = build_offline_schedule(&s.energy);
    let det = s.detector.config;
    let threshold = s.threshold(cfg)?;
    let rho = s.model.spectral_radius();
    let (j_max_report, j_max_error) = match j_max(&s.model, &s.ss, cfg.analysis.tail_tol) {
        Ok(j) => (
            Some(JMaxReport {
                j_max: j,
                series_ratio: rho * rho * (1.0 - lambda),
            }),
            None,
        ),
        Err(e) => (None, Some(e.to_string())),
    };
    let j_attacked = attacked_j(&s.model, &s.ss, det.z0, &s.attacker, cfg.analysis.tail_tol)?;
    let attacked_flag_rates = ChainModel::for_attacker(det.z0, &s.attacker, lambda)?.map(|c| c.flag_rates());
    let unattacked_flag_rates = ChainModel::unattacked(det.z0, lambda)?.flag_rates();
    let high_rate = online_high_rate(det.z0, det.mu, lambda);
    let pbar = s.ss.pbar();
    let report = AnalyzeReport {
        tool: "acksiege",
        version: VERSION,
        config_sha256: loaded.sha256.clone(),
        pbar: pbar.row_iter().map(|r| r.iter().copied().collect()).collect(),
        pbar_trace: pbar.trace(),
        steady_state_iterations: s.ss.iterations(),
        energy: EnergyReport {
            delta_high: rational_str(s.energy.delta_high),
            delta_low: rational_str(s.energy.delta_low),
            psi: rational_str(s.energy.psi),
            high_fraction: rational_str(s.energy.high_fraction()),
        },
        offline_schedule: sched.to_string(),
        j_offline: offline_j_closed_form(&sched, &s.ss, lambda),
        j_offline_enumerated: first_principles_offline_j(&sched, &s.ss, lambda),
        detector: s.detector,
        online_high_rate: high_rate,
        online_energy_rate: s.energy.energy_rate(high_rate),
        j_online: online_j_renewal(&det, &s.ss, lambda),
        j_online_closed_form: online_j_closed_form(&det, &s.ss, lambda),
        attacker: AttackerReport {
            enabled: s.attacker.enabled,
            beta: rational_str(s.attacker.beta),
            r: s.attacker.r,
            t: s.attacker.t,
            semantics: s.attacker.semantics,
        },
        j_attacked,
        attacked_flag_rates,
        unattacked_flag_rates,
        j_max: j_max_report,
        j_max_error,
        j_unattacked_fixed_window: threshold.j_unattacked,
        bracket: threshold.bracket,
        beta_bar: threshold.bracket.beta_bar(),
        monotonicity_violations: threshold.monotonicity_violations.clone(),
        recommendation: recommend_schedule(s.attacker.beta_f64(), threshold.bracket.beta_bar()),
    };
    Ok((report, threshold))
}

fn beta_table(loaded: &Loaded, t: &ThresholdReport) -> String {
    let mut out = loaded.banner();
    out.push_str("r,t,beta,J_chain,J_offline,J_online,recommendation\n");
    let bar = t.bracket.beta_bar();
    for g in &t.grid {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            g.r,
            g.t,
            g.beta,
            g.j_chain,
            t.j_reference,
            t.j_unattacked,
            recommend_schedule(g.beta, bar)
        );
    }
    out
}

/// JSON report and β table.
pub fn cmd_analyze(loaded: &Loaded) -> CliResult<(String, String)> {
    let (report, threshold) = analyze_report(loaded)?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| CliError::Numerical(e.to_string()))?;
    Ok((json + "\n", beta_table(loaded, &threshold)))
}

pub fn cmd_threshold(loaded: &Loaded) -> CliResult<String> {
    let s = Setup::new(&loaded.config)?;
    Ok(beta_table(loaded, &s.threshold(&loaded.config)?))
}

#[derive(Debug, Serialize)]
struct SimSummary<'a> {
    tool: &'static str,
    version: &'static str,
    config_sha256: &'a str,
    config: &'a ExperimentConfig,
    detector: Option<ResolvedDetector>,
    j_final: f64,
    j_final_stderr: f64,
    energy_avg: f64,
    flag_rate: f64,
    passed_flag_rate: f64,
    blocked_fraction: f64,
    charged_fraction: f64,
    total_steps: u64,
    per_run_seeds: &'a [u64],
}

/// `k,J_k` CSV and JSON summary.
pub fn cmd_simulate(loaded: &Loaded) -> CliResult<(String, String)> {
    let cfg = &loaded.config;
    let sim = cfg.sim_config()?;
    let rep: SimReport = simulate(&sim)?;
    let mut csv = loaded.banner();
    csv.push_str("k,J_k\n");
    for (k, j) in &rep.jk_series {
        let _ = writeln!(csv, "{k},{j}");
    }
    let detector = match sim.schedule {
        ScheduleKind::Online => Some(cfg.detector(&sim.energy)?),
        ScheduleKind::Offline => None,
    };
    let summary = SimSummary {
        tool: "acksiege",
        version: VERSION,
        config_sha256: &loaded.sha256,
        config: cfg,
        detector,
        j_final: rep.j_final,
        j_final_stderr: rep.j_final_stderr,
        energy_avg: rep.energy_avg,
        flag_rate: rep.flag_rate,
        passed_flag_rate: rep.passed_flag_rate,
        blocked_fraction: rep.blocked_fraction,
        charged_fraction: rep.charged_fraction,
        total_steps: rep.total_steps,
        per_run_seeds: &rep.per_run_seeds,
    };
    let json = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Numerical(e.to_string()))?;
    Ok((csv, json + "\n"))
}

pub fn cmd_fig4(loaded: &Loaded) -> CliResult<String> {
    let cfg = &loaded.config;
    let s = Setup::new(cfg)?;
    let sem = s.attacker.semantics;
    let budget = |r, t| AttackerConfig::from_pair(r, t).map(|a| a.with_semantics(sem));
    let runs = [
        s.sim(cfg, ScheduleKind::Offline, AttackerConfig::disabled())?,
        s.sim(cfg, ScheduleKind::Online, AttackerConfig::disabled())?,
        s.sim(cfg, ScheduleKind::Online, budget(1, 5)?)?,
        s.sim(cfg, ScheduleKind::Online, budget(2, 3)?)?,
    ];
    let reports = runs.iter().map(simulate).collect::<Result<Vec<_>, _>>()?;
    let mut out = loaded.banner();
    out.push_str("k,J_offline,J_online,J_attacked_1_5,J_attacked_2_3\n");
    for i in 0..reports[0].jk_series.len() {
        let k = reports[0].jk_series[i].0;
        let _ = write!(out, "{k}");
        for r in &reports {
            let _ = write!(out, ",{}", r.jk_series[i].1);
        }
        out.push('\n');
    }
    Ok(out)
}

/// Budgets simulated for the cross-points of [`cmd_fig5`].
pub const FIG5_MC_BETAS: [(i64, i64); 5] = [(0, 1), (1, 5), (1, 4), (1, 3), (2, 3)];

pub fn cmd_fig5(loaded: &Loaded) -> CliResult<String> {
    let cfg = &loaded.config;
    let s = Setup::new(cfg)?;
    let t = s.threshold(cfg)?;
    let mut out = loaded.banner();
    match t.bracket {
        Bracket::Crossing {
            beta_low,
            beta_high,
            estimate,
        } => {
            let _ = writeln!(
                out,
                "# bracket beta_low={beta_low} beta_high={beta_high} beta_bar={estimate}"
            );
        }
        other => {
            let _ = writeln!(out, "# bracket {}", serde_json::to_string(&other).unwrap_or_default());
        }
    }
    out.push_str("source,r,t,beta,J,J_stderr,J_offline\n");
    let j_off = t.j_reference;
    let _ = writeln!(out, "chain,0,1,0,{},0,{j_off}", t.j_unattacked);
    for g in &t.grid {
        let _ = writeln!(out, "chain,{},{},{},{},0,{j_off}", g.r, g.t, g.beta, g.j_chain);
    }
    match j_max(&s.model, &s.ss, cfg.analysis.tail_tol) {
        Ok(jm) => {
            let _ = writeln!(out, "j_max,1,1,1,{},0,{j_off}", jm.value);
        }
        Err(e) => {
            let _ = writeln!(out, "# j_max unavailable: {e}");
        }
    }
    let base = s.sim(cfg, ScheduleKind::Online, AttackerConfig::disabled())?;
    let betas: Vec<Rational64> = FIG5_MC_BETAS.iter().map(|&(r, t)| Rational64::new(r, t)).collect();
    let sweep = sweep_beta_with(&base, &betas, s.attacker.semantics)?;
    for (b, p) in betas.iter().zip(&sweep) {
        let _ = writeln!(
            out,
            "monte_carlo,{},{},{},{},{},{j_off}",
            b.numer(),
            b.denom(),
            to_f64(*b),
            p.j_final,
            p.j_final_stderr
        );
    }
    Ok(out)
}

fn write_out(path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::Io(format!("{}: {e}", p.display()))),
        None => {
            use std::io::Write;
            std::io::stdout()
                .write_all(text.as_bytes())
                .map_err(|e| CliError::Io(e.to_string()))
        }
    }
}

fn sibling(path: &Path, ext: &str) -> PathBuf {
    let mut p = path.to_path_buf();
    let stem = p
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    p.set_file_name(format!("{stem}.{ext}"));
    p
}

/// Sizes the global rayon pool from `ACKSIEGE_THREADS` if it is set.
pub fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
    // A second call in the same process keeps the first pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn run(cli: Cli) -> CliResult<()> {
    configure_threads()?;
    let args = match &cli.command {
        Command::Analyze(a) | Command::Simulate(a) | Command::Fig4(a) | Command::Fig5(a) | Command::Threshold(a) => a,
    };
    let text =
        std::fs::read_to_string(&args.config).map_err(|e| CliError::Io(format!("{}: {e}", args.config.display())))?;
    let loaded = Loaded::from_text(&text, args)?;
    let out = args.out.as_deref();
    match &cli.command {
        Command::Analyze(_) => {
            let (json, csv) = cmd_analyze(&loaded)?;
            write_out(out, &json)?;
            if let Some(p) = out {
                write_out(Some(&sibling(p, "csv")), &csv)?;
            }
        }
        Command::Simulate(_) => {
            let (csv, json) = cmd_simulate(&loaded)?;
            write_out(out, &csv)?;
            match out {
                Some(p) => write_out(Some(&sibling(p, "json")), &json)?,
                None => eprint!("{json}"),
            }
        }
        Command::Fig4(_) => write_out(out, &cmd_fig4(&loaded)?)?,
        Command::Fig5(_) => write_out(out, &cmd_fig5(&loaded)?)?,
        Command::Threshold(_) => write_out(out, &cmd_threshold(&loaded)?)?,
    }
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("acksiege: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCALAR: &str = r#"{
        "system": {"A": 1.2, "C": 0.7, "Q": 0.8, "R": 0.8},
        "channel": {"lambda": 0.5},
        "energy": {"delta_high": "8", "delta_low": "1", "psi": "2"},
        "detector": {"z0": 2, "L": 4},
        "attacker": {"beta": "1/5"},
        "sim": {"horizon": 200, "runs": 4, "seed": 3}
    }"#;

    fn args() -> CommonArgs {
        CommonArgs::default()
    }

    #[test]
    fn error_classes() {
        assert_eq!(CliError::from(Error::Config("x".into())).exit_code(), 2);
        assert_eq!(CliError::from(Error::InvalidBudget("x".into())).exit_code(), 2);
        assert_eq!(CliError::from(Error::DivergingSeries("x".into())).exit_code(), 3);
        assert_eq!(CliError::Io("x".into()).exit_code(), 4);
    }

    #[test]
    fn overrides_apply() {
        let mut a = args();
        a.seed = Some(9);
        a.runs = Some(2);
        a.horizon = Some(10);
        a.t_max = Some(5);
        let l = Loaded::from_text(SCALAR, &a).unwrap();
        assert_eq!(
            (
                l.config.sim.seed,
                l.config.sim.runs,
                l.config.sim.horizon,
                l.config.analysis.t_max
            ),
            (9, 2, 10, 5)
        );
        assert_eq!(l.sha256.len(), 64);
    }

    #[test]
    fn analyze_fields() {
        let l = Loaded::from_text(SCALAR, &args()).unwrap();
        let (json, csv) = cmd_analyze(&l).unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["offline_schedule"], "1000000");
        assert_eq!(v["recommendation"], "online");
        assert_eq!(v["detector"]["calibrated"], true);
        assert!(csv.starts_with("# acksiege "));
        assert_eq!(
            csv.lines().nth(1),
            Some("r,t,beta,J_chain,J_offline,J_online,recommendation")
        );
        assert_eq!(csv.lines().count(), 2 + 45);
    }

    #[test]
    fn simulate_rows() {
        let mut a = args();
        a.runs = Some(1);
        a.horizon = Some(10);
        let (csv, json) = cmd_simulate(&Loaded::from_text(SCALAR, &a).unwrap()).unwrap();
        assert_eq!(csv.lines().count(), 2 + 10);
        assert!(json.contains("\"per_run_seeds\""));
    }
}
