//! `bounded` command line. Exit codes: 0 success, 1 validation or usage
//! failure, 2 runtime failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, Context};
use bounded_core::catalog::{load_catalog, synthetic_full_profile, BundleCatalog};
use bounded_core::embed::{Embedder, FixtureEmbedder, RemoteEmbedder, RemoteEmbedderConfig};
use bounded_core::ground::GroundingConfig;
use bounded_core::harness::{
    self, depth_distribution_oracle, empirical_depth_distribution, parse_cross_cases, parse_probes,
    parse_whisper_cases, run_grounding_benchmark, run_trial, run_trial_batch, run_whisper_benchmark, Fixtures, Setup,
    TrialConfig,
};
use bounded_core::policy::{MockPolicy, MockRuleSet, PolicyBackend, RemotePolicy, RemotePolicyConfig};
use bounded_core::runtime::{replay, JsonlSink, Room, RoomConfig, Scenario};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::room_loop::{Pacing, RoomHandle};
use crate::session::Gateway;

#[derive(Debug, Parser)]
#[command(name = "bounded", version, about = "Bounded-autonomy multi-agent room engine")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Start the WebSocket gateway with rooms from scenario files.
    Serve(ServeArgs),
    /// Run decay trials and print the summary table.
    Trial(TrialArgs),
    /// Run the grounding probe benchmark.
    BenchGround(BenchGroundArgs),
    /// Run the whisper benchmark and cross-whisper check.
    BenchWhisper(BenchWhisperArgs),
    /// Rebuild final room state from a trace file.
    Replay(ReplayArgs),
    /// Print the analytic terminal-depth distribution.
    OracleDepth(OracleArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DecayArg {
    On,
    Off,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EmbedderArg {
    Fixture,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    Mock,
    Remote,
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// Print JSON instead of the table.
    #[arg(long)]
    pub json: bool,
    /// Also write report.json and report.txt into this directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FixtureArgs {
    /// Catalog JSONL; defaults to the shipped sample catalog.
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "fixture")]
    pub embedder: EmbedderArg,
    /// Fixture embedding table; defaults to the shipped table.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PolicyArgs {
    #[arg(long, value_enum, default_value = "mock")]
    pub policy: PolicyArg,
    /// Rule table for the mock policy.
    #[arg(long)]
    pub rules: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Scenario JSONL, one room each; defaults to the shipped party room.
    #[arg(long)]
    pub scenario: Vec<PathBuf>,
    /// Room config JSON; missing fields take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: String,
    /// Milliseconds per round.
    #[arg(long, default_value_t = 1000)]
    pub tick_ms: u64,
    /// Write one trace file per room here.
    #[arg(long)]
    pub trace_dir: Option<PathBuf>,
    #[command(flatten)]
    pub fixtures: FixtureArgs,
    #[command(flatten)]
    pub policy: PolicyArgs,
}

#[derive(Debug, Args)]
pub struct TrialArgs {
    #[arg(long, value_enum, default_value = "both")]
    pub decay: DecayArg,
    #[arg(long, default_value_t = 0.2)]
    pub alpha: f64,
    /// baseline, s1, s2, s3, s4 or all.
    #[arg(long, default_value = "baseline")]
    pub setup: String,
    #[arg(long, default_value_t = 20)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = harness::trial::TRIAL_HORIZON)]
    pub horizon: u64,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Write each trial's trace as JSONL here.
    #[arg(long)]
    pub trace_dir: Option<PathBuf>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct BenchGroundArgs {
    /// Probe JSONL; defaults to the shipped probes.
    #[arg(long)]
    pub probes: Option<PathBuf>,
    #[arg(long)]
    pub max_pglv: Option<u8>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Pad the catalog to the full production pool sizes.
    #[arg(long)]
    pub full_profile: bool,
    #[command(flatten)]
    pub fixtures: FixtureArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct BenchWhisperArgs {
    /// Whisper case JSONL; defaults to the shipped cases.
    #[arg(long)]
    pub cases: Option<PathBuf>,
    /// Cross-whisper pairs JSONL; defaults to the shipped pairs.
    #[arg(long)]
    pub cross: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub policy: PolicyArgs,
    #[command(flatten)]
    pub fixtures: FixtureArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long, default_value_t = 0.2)]
    pub alpha: f64,
    #[arg(long, default_value_t = 10)]
    pub depth_cap: u32,
    /// Also run this many engine chains and report the distance.
    #[arg(long, default_value_t = 0)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug)]
pub enum CliError {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

fn invalid(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Validation(e.into())
}

fn failed(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Runtime(e.into())
}

type CliResult = Result<(), CliError>;

/// Parses `argv` and runs the command, writing reports to `out` and
/// diagnostics to `err`. Returns the exit code.
pub fn cli_main_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    0
                }
                _ => {
                    let _ = write!(err, "{text}");
                    1
                }
            };
        }
    };
    match run(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let (CliError::Validation(inner) | CliError::Runtime(inner)) = &e;
            let _ = writeln!(err, "error: {inner:#}");
            e.exit_code()
        }
    }
}

pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    cli_main_with(argv, &mut std::io::stdout(), &mut std::io::stderr())
}

pub fn run(cli: Cli, out: &mut dyn Write) -> CliResult {
    match cli.command {
        Command::Serve(a) => serve(a),
        Command::Trial(a) => trial(a, out),
        Command::BenchGround(a) => bench_ground(a, out),
        Command::BenchWhisper(a) => bench_whisper(a, out),
        Command::Replay(a) => replay_cmd(a, out),
        Command::OracleDepth(a) => oracle(a, out),
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(invalid)
}

fn load_room_config(path: Option<&Path>) -> Result<RoomConfig, CliError> {
    let config = match path {
        Some(p) => serde_json::from_str(&read(p)?)
            .with_context(|| format!("parsing {}", p.display()))
            .map_err(invalid)?,
        None => RoomConfig::default(),
    };
    RoomConfig::validate(&config).map_err(|e| invalid(anyhow!(e)))?;
    Ok(config)
}

fn load_catalog_arg(args: &FixtureArgs) -> Result<BundleCatalog, CliError> {
    match &args.catalog {
        Some(p) => load_catalog(p).map_err(invalid),
        None => Ok(BundleCatalog::parse_jsonl(harness::SHIPPED_CATALOG).expect("shipped catalog parses")),
    }
}

fn load_embedder(args: &FixtureArgs) -> Result<Arc<dyn Embedder>, CliError> {
    match args.embedder {
        EmbedderArg::Fixture => {
            let e = match &args.embeddings {
                Some(p) => FixtureEmbedder::load(p).map_err(invalid)?,
                None => FixtureEmbedder::parse_jsonl(harness::SHIPPED_EMBEDDINGS).expect("shipped embeddings parse"),
            };
            Ok(Arc::new(e))
        }
        EmbedderArg::Remote => {
            let config = RemoteEmbedderConfig::from_env()
                .ok_or_else(|| invalid(anyhow!("remote embedder needs BOUNDED_EMBED_ENDPOINT and BOUNDED_EMBED_DIM")))?;
            Ok(Arc::new(RemoteEmbedder::new(config).map_err(invalid)?))
        }
    }
}

fn load_policy(args: &PolicyArgs) -> Result<Arc<dyn PolicyBackend>, CliError> {
    match args.policy {
        PolicyArg::Mock => {
            let rules = match &args.rules {
                Some(p) => MockRuleSet::load(p).map_err(|e| invalid(anyhow!(e)))?,
                None => MockRuleSet::shipped(),
            };
            Ok(Arc::new(MockPolicy::new(rules)))
        }
        PolicyArg::Remote => {
            let config = RemotePolicyConfig::from_env()
                .ok_or_else(|| invalid(anyhow!("remote policy needs BOUNDED_POLICY_ENDPOINT")))?;
            Ok(Arc::new(RemotePolicy::new(config).map_err(|e| invalid(anyhow!(e)))?))
        }
    }
}

/// Prints the table (or JSON) and optionally writes both into `--out`.
fn emit(out: &mut dyn Write, args: &OutputArgs, json: &str, table: &str) -> CliResult {
    let shown = if args.json { json } else { table };
    writeln!(out, "{}", shown.trim_end()).map_err(failed)?;
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("creating {}", dir.display()))
            .map_err(failed)?;
        std::fs::write(dir.join("report.json"), format!("{json}\n")).map_err(failed)?;
        std::fs::write(dir.join("report.txt"), table).map_err(failed)?;
    }
    Ok(())
}

fn to_json(v: &impl Serialize) -> String {
    serde_json::to_string_pretty(v).expect("report serializes")
}

fn trial(a: TrialArgs, out: &mut dyn Write) -> CliResult {
    let setups: Vec<Setup> = if a.setup.eq_ignore_ascii_case("all") {
        Setup::ALL.to_vec()
    } else {
        vec![Setup::parse(&a.setup).ok_or_else(|| invalid(anyhow!("unknown setup {:?}", a.setup)))?]
    };
    let decays: &[bool] = match a.decay {
        DecayArg::On => &[true],
        DecayArg::Off => &[false],
        DecayArg::Both => &[true, false],
    };
    let room = load_room_config(a.config.as_deref())?;
    let mut configs = Vec::new();
    for setup in setups {
        for &decay in decays {
            let mut c = TrialConfig::for_setup(setup, decay, a.n);
            c.alpha = a.alpha;
            c.base_seed = a.seed;
            c.horizon = a.horizon;
            c.room = room.clone();
            c.validate().map_err(invalid)?;
            configs.push(c);
        }
    }
    let fixtures = Fixtures::shipped();
    if let Some(dir) = &a.trace_dir {
        std::fs::create_dir_all(dir).map_err(failed)?;
        for c in &configs {
            for seed in c.seeds() {
                let run = run_trial(c, &fixtures, seed).map_err(failed)?;
                let name = format!("{}-{}-{seed}.jsonl", c.setup, if c.decay_enabled { "on" } else { "off" });
                std::fs::write(dir.join(name), run.trace).map_err(failed)?;
            }
        }
    }
    let report = run_trial_batch(&configs, &fixtures).map_err(failed)?;
    emit(out, &a.output, &report.to_json(), &report.to_table())
}

fn bench_ground(a: BenchGroundArgs, out: &mut dyn Write) -> CliResult {
    let probes = match &a.probes {
        Some(p) => parse_probes(&read(p)?).map_err(invalid)?,
        None => parse_probes(harness::SHIPPED_PROBES).map_err(invalid)?,
    };
    let mut catalog = load_catalog_arg(&a.fixtures)?;
    if a.full_profile {
        catalog = synthetic_full_profile(&catalog);
    }
    let embedder = load_embedder(&a.fixtures)?;
    let mut config = GroundingConfig::default();
    if let Some(m) = a.max_pglv {
        config.max_pglv = m;
    }
    if let Some(t) = a.threshold {
        config.fallback_threshold = t;
    }
    config.validate().map_err(|e| invalid(anyhow!(e)))?;
    let report = run_grounding_benchmark(&probes, embedder.as_ref(), &catalog, &config).map_err(|e| match e {
        harness::HarnessError::UnknownExpectedBundle(_) | harness::HarnessError::UnknownPool(_) => invalid(e),
        other => failed(other),
    })?;
    let mut table = report.to_table();
    if a.max_pglv.is_some() {
        let full = GroundingConfig::default();
        let base = run_grounding_benchmark(&probes, embedder.as_ref(), &catalog, &full).map_err(failed)?;
        for (pool, size) in &report.pool_sizes {
            let before = base.pool_sizes[pool];
            if before != *size {
                table.push_str(&format!("candidate pool {}: {before} -> {size}\n", pool.as_str()));
            }
        }
    }
    emit(out, &a.output, &report.to_json(), &table)
}

fn bench_whisper(a: BenchWhisperArgs, out: &mut dyn Write) -> CliResult {
    let cases = match &a.cases {
        Some(p) => parse_whisper_cases(&read(p)?).map_err(invalid)?,
        None => parse_whisper_cases(harness::SHIPPED_WHISPER_CASES).map_err(invalid)?,
    };
    let cross = match &a.cross {
        Some(p) => parse_cross_cases(&read(p)?).map_err(invalid)?,
        None => parse_cross_cases(harness::SHIPPED_CROSS_CASES).map_err(invalid)?,
    };
    let fixtures = Fixtures {
        catalog: Arc::new(load_catalog_arg(&a.fixtures)?),
        embedder: load_embedder(&a.fixtures)?,
        policy: load_policy(&a.policy)?,
        scenario: Scenario::party(),
    };
    let report = run_whisper_benchmark(&cases, &cross, &fixtures, a.seed).map_err(|e| match e {
        harness::HarnessError::UnknownAgent(_) | harness::HarnessError::Config(_) => invalid(e),
        other => failed(other),
    })?;
    emit(out, &a.output, &report.to_json(), &report.to_table())
}

fn replay_cmd(a: ReplayArgs, out: &mut dyn Write) -> CliResult {
    let file = std::fs::File::open(&a.trace)
        .with_context(|| format!("opening {}", a.trace.display()))
        .map_err(invalid)?;
    let state = replay(std::io::BufReader::new(file)).map_err(invalid)?;
    if a.json {
        writeln!(out, "{}", to_json(&state)).map_err(failed)?;
        return Ok(());
    }
    let mut t = format!(
        "room {}: {} events, {} chains ended, halted {}\n",
        state.room_id,
        state.history.len(),
        state.chains.len(),
        state.halted
    );
    for (root, status) in &state.chains {
        t.push_str(&format!("chain {root}: {status:?}\n"));
    }
    for (id, agent) in &state.agents {
        let rel: Vec<String> = agent.relationship.iter().map(|(p, s)| format!("{p}={s}")).collect();
        t.push_str(&format!("agent {id} {:?} [{}]\n", agent.emotion, rel.join(" ")));
    }
    write!(out, "{t}").map_err(failed)
}

#[derive(Serialize)]
struct OracleReport {
    oracle: harness::DepthDistribution,
    mean: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    empirical: Option<harness::DepthDistribution>,
    #[serde(skip_serializing_if = "Option::is_none")]
    total_variation: Option<f64>,
}

fn oracle(a: OracleArgs, out: &mut dyn Write) -> CliResult {
    if a.alpha.is_nan() || a.alpha < 0.0 || a.depth_cap < 2 {
        return Err(invalid(anyhow!("need alpha >= 0 and depth_cap >= 2")));
    }
    let o = depth_distribution_oracle(a.alpha, a.depth_cap);
    let empirical = if a.samples > 0 {
        let fixtures = Fixtures::shipped();
        Some(empirical_depth_distribution(a.samples, a.alpha, a.seed, &fixtures).map_err(failed)?)
    } else {
        None
    };
    let mut table = format!("# alpha {} depth_cap {}\n{:>5} {:>10}", a.alpha, a.depth_cap, "depth", "P(oracle)");
    if empirical.is_some() {
        table.push_str(&format!(" {:>10}", "P(engine)"));
    }
    table.push('\n');
    let mut depths: Vec<u32> = o.probs.keys().copied().collect();
    if let Some(e) = &empirical {
        depths.extend(e.probs.keys().copied());
        depths.sort_unstable();
        depths.dedup();
    }
    for d in depths {
        table.push_str(&format!("{d:>5} {:>10.4}", o.prob(d)));
        if let Some(e) = &empirical {
            table.push_str(&format!(" {:>10.4}", e.prob(d)));
        }
        table.push('\n');
    }
    table.push_str(&format!("mean {:.4}\n", o.mean()));
    let total_variation = empirical.as_ref().map(|e| e.total_variation(&o));
    if let Some(tv) = total_variation {
        table.push_str(&format!("total variation {tv:.4}\n"));
    }
    let report = OracleReport {
        mean: o.mean(),
        oracle: o,
        empirical,
        total_variation,
    };
    emit(out, &a.output, &to_json(&report), &table)
}

fn serve(a: ServeArgs) -> CliResult {
    let config = load_room_config(a.config.as_deref())?;
    let catalog = Arc::new(load_catalog_arg(&a.fixtures)?);
    let embedder = load_embedder(&a.fixtures)?;
    let policy = load_policy(&a.policy)?;
    let scenarios = if a.scenario.is_empty() {
        vec![Scenario::party()]
    } else {
        a.scenario
            .iter()
            .map(|p| Scenario::load(p).map_err(invalid))
            .collect::<Result<Vec<_>, _>>()?
    };
    if a.tick_ms == 0 {
        return Err(invalid(anyhow!("--tick-ms must be >= 1")));
    }
    let mut handles = Vec::new();
    for s in &scenarios {
        let state = s.build_state(config.clone());
        let window = state.config.history_window;
        let mut room = Room::new(state, catalog.clone(), embedder.clone(), policy.clone()).map_err(invalid)?;
        if let Some(dir) = &a.trace_dir {
            std::fs::create_dir_all(dir).map_err(failed)?;
            let path = dir.join(format!("{}.jsonl", s.room_id));
            let file = std::fs::File::create(&path)
                .with_context(|| format!("creating {}", path.display()))
                .map_err(failed)?;
            room = room
                .with_sink(Box::new(JsonlSink::new(std::io::BufWriter::new(file))))
                .map_err(failed)?;
        }
        handles.push(RoomHandle::spawn(room, Pacing::Tick(Duration::from_millis(a.tick_ms)), window));
    }
    let gateway = Arc::new(Gateway::new(handles));
    let runtime = tokio::runtime::Runtime::new().map_err(failed)?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&a.bind)
            .await
            .with_context(|| format!("binding {}", a.bind))
            .map_err(failed)?;
        tracing::info!(addr = %a.bind, rooms = ?gateway.room_ids().collect::<Vec<_>>(), "gateway listening");
        crate::server::serve(listener, gateway).await.map_err(failed)
    })
}
