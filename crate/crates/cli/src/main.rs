use std::fs;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::builder::{PossibleValuesParser, TypedValueParser};
use clap::{ArgGroup, Args, Parser, Subcommand};
use serde::Serialize;

use skg_core::channel_sim::{simulate_scenario, ScenarioConfig};
use skg_core::keyderive::{parse_key_file, write_key_file, KeyMaterial, KEY_BITS};
use skg_core::pipeline::Levels;
use skg_core::presets;
use skg_core::quality::{min_entropy, nist_suite, shannon_entropy, NistResult, QualityError, NIST_MIN_BITS};
use skg_core::session::{
    connect_and_run, nonce_from_seed, run_session, serve_once, SessionConfig, SessionError, SessionOutcome,
    SessionReport,
};
use skg_core::trace_model::{parse_trace, write_trace, ProbeTrace};

const DEFAULT_SEED: u64 = 1;

#[derive(Parser)]
#[command(name = "skg", version, about = "Secret key generation from reciprocal 5G NR channel estimates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write gNB/UE (and optionally EVE) trace files.
    Simulate(SimulateArgs),
    /// Run both parties in this process.
    Run(RunArgs),
    /// Run one party over TCP: gNB side with --listen, UE side with --connect.
    Serve(ServeArgs),
    /// Run the UE side over TCP against a serving gNB.
    Connect(ConnectArgs),
    /// Entropy and NIST subset on key files or 0/1 bit files.
    Analyze(AnalyzeArgs),
    /// Run every built-in scenario for one seed and tabulate the results.
    Report(ReportArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Built-in scenario name or path to a key=value scenario file.
    #[arg(long)]
    scenario: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Also write an eavesdropper trace.
    #[arg(long)]
    eve: bool,
}

#[derive(Args)]
#[command(group(ArgGroup::new("input").required(true).args(["scenario", "gnb_trace"])))]
struct Inputs {
    /// Built-in scenario name or path to a key=value scenario file.
    #[arg(long, conflicts_with_all = ["gnb_trace", "ue_trace"])]
    scenario: Option<String>,
    #[arg(long, requires = "ue_trace")]
    gnb_trace: Option<PathBuf>,
    #[arg(long, requires = "gnb_trace")]
    ue_trace: Option<PathBuf>,
    /// Simulation seed; also fixes the session nonce.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct Tuning {
    /// Quantisation levels.
    #[arg(long = "q", default_value_t = 2, value_parser = PossibleValuesParser::new(["2", "4", "8"]).map(|s| s.parse::<u32>().unwrap()))]
    q: u32,
    #[arg(long, default_value_t = 5)]
    tolerance_ms: u64,
    #[arg(long, default_value_t = 6)]
    max_passes: u32,
    #[arg(long, default_value_t = 64)]
    safety_margin: usize,
    /// Peer timeout in seconds.
    #[arg(long, default_value_t = 30)]
    timeout_s: u64,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[command(flatten)]
    tuning: Tuning,
    /// Directory for gnb.key and ue.key.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long)]
    json_report: Option<PathBuf>,
}

#[derive(Args)]
#[command(group(ArgGroup::new("endpoint").required(true).args(["listen", "connect"])))]
struct ServeArgs {
    #[arg(long)]
    listen: Option<String>,
    #[arg(long)]
    connect: Option<String>,
    #[command(flatten)]
    inputs: Inputs,
    #[command(flatten)]
    tuning: Tuning,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long)]
    json_report: Option<PathBuf>,
}

#[derive(Args)]
struct ConnectArgs {
    #[arg(long)]
    connect: String,
    #[command(flatten)]
    inputs: Inputs,
    #[command(flatten)]
    tuning: Tuning,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long)]
    json_report: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Key files or files of 0/1 characters; contents are concatenated.
    #[arg(required = true)]
    files: Vec<PathBuf>,
    #[arg(long)]
    json_report: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[command(flatten)]
    tuning: Tuning,
    /// Writes keys.txt with one line per scenario.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    json_report: Option<PathBuf>,
}

/// Error name, message and process exit code.
#[derive(Debug)]
struct Failure {
    name: &'static str,
    message: String,
    code: u8,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Failure { name: "InvalidConfig", message: message.into(), code: 2 }
    }

    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        Failure { name: "IoFailure", message: format!("{}: {e}", path.display()), code: 2 }
    }
}

impl From<SessionError> for Failure {
    fn from(e: SessionError) -> Self {
        let code = match e {
            SessionError::Protocol(_) | SessionError::Timeout | SessionError::ConnectionRefused(_) => 3,
            SessionError::NeedsLongerTrace { .. } => 4,
            SessionError::VerificationFailed => 5,
            _ => 2,
        };
        Failure { name: e.name(), message: e.to_string(), code }
    }
}

fn scenario_config(name: &str, seed: Option<u64>) -> Result<ScenarioConfig, Failure> {
    if let Some(p) = presets::find(name) {
        return Ok(p.config(seed.unwrap_or(DEFAULT_SEED)));
    }
    let path = Path::new(name);
    if path.is_file() {
        let mut cfg = ScenarioConfig::load(path).map_err(|e| Failure::config(e.to_string()))?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        return Ok(cfg);
    }
    Err(Failure::config(format!(
        "unknown scenario {name:?}; built-in scenarios: {}",
        presets::names().join(", ")
    )))
}

/// Traces, scenario id and seed for a session.
fn load_inputs(inputs: &Inputs) -> Result<(ProbeTrace, ProbeTrace, String, u64), Failure> {
    if let (Some(g), Some(u)) = (&inputs.gnb_trace, &inputs.ue_trace) {
        let gnb = parse_trace(g).map_err(|e| Failure::from(SessionError::from(e)))?;
        let ue = parse_trace(u).map_err(|e| Failure::from(SessionError::from(e)))?;
        let id = g.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "traces".into());
        return Ok((gnb, ue, id, inputs.seed.unwrap_or(DEFAULT_SEED)));
    }
    let name = inputs.scenario.as_deref().ok_or_else(|| Failure::config("no input given"))?;
    let cfg = scenario_config(name, inputs.seed)?;
    let sim = simulate_scenario(&cfg).map_err(|e| Failure::from(SessionError::from(e)))?;
    Ok((sim.gnb, sim.ue, cfg.name.clone(), cfg.seed))
}

fn session_config(tuning: &Tuning, scenario_id: String, seed: u64) -> Result<SessionConfig, Failure> {
    let levels = Levels::from_count(tuning.q).ok_or_else(|| Failure::config("--q must be 2, 4 or 8"))?;
    let cfg = SessionConfig {
        scenario_id,
        levels,
        tolerance_ms: tuning.tolerance_ms,
        max_passes: tuning.max_passes,
        safety_margin: tuning.safety_margin,
        nonce: nonce_from_seed(seed),
        timeout: Duration::from_secs(tuning.timeout_s.max(1)),
        ..SessionConfig::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::io(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Failure::io(path, e))
}

fn write_keys(dir: &Path, name: &str, key: &KeyMaterial) -> Result<PathBuf, Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))?;
    let path = dir.join(name);
    write_key_file(&path, std::slice::from_ref(key)).map_err(|e| Failure::io(&path, e))?;
    Ok(path)
}

fn print_summary(outcome: &SessionOutcome) {
    let r = &outcome.report;
    let s = &r.session;
    let q = &r.quality;
    println!(
        "scenario {}: {} probe pairs, orientation {} (corr {:.3} standard, {:.3} reversed{})",
        s.scenario_id,
        s.probe_pairs,
        s.orientation.ordering.as_str(),
        s.orientation.corr_standard,
        s.orientation.corr_reversed,
        if s.orientation.used_bdr_fallback { ", decided by BDR probe" } else { "" }
    );
    println!(
        "subbands {:.0} kHz x {}, {} raw bits, BDR {:.2}% -> {:.2}%",
        s.subband.width_hz / 1e3,
        s.subband.band_count,
        s.raw_bits,
        q.bdr_initial * 100.0,
        q.bdr_final * 100.0
    );
    println!(
        "leaked {} bits (r={}, {} passes), {} bits compressed to {}, h1 {:.4}, Hmin {:.4} ({:.1} effective bits)",
        q.leaked_bits, s.hamming_r, s.passes, s.reconciled_bits, s.key_bits, q.h1_per_bit, q.hmin_per_bit, q.effective_bits
    );
    println!("KGR {:.1} bps raw, {:.2} bps net", q.kgr_raw_bps, q.kgr_net_bps);
    println!("digest {}", outcome.local().key.digest_hex());
}

fn finish_session(outcome: &SessionOutcome, out: &Path, json: Option<&Path>) -> Result<(), Failure> {
    print_summary(outcome);
    for (party, file) in [(&outcome.gnb, "gnb.key"), (&outcome.ue, "ue.key")] {
        if let Some(p) = party {
            let path = write_keys(out, file, &p.key)?;
            println!("wrote {}", path.display());
        }
    }
    if let Some(path) = json {
        write_json(path, &outcome.report)?;
    }
    Ok(())
}

fn cmd_simulate(args: &SimulateArgs) -> Result<(), Failure> {
    let mut cfg = scenario_config(&args.scenario, args.seed)?;
    cfg.eavesdropper |= args.eve;
    let sim = simulate_scenario(&cfg).map_err(|e| Failure::from(SessionError::from(e)))?;
    fs::create_dir_all(&args.out).map_err(|e| Failure::io(&args.out, e))?;
    println!("seed={}", cfg.seed);
    print!("{}", cfg.to_config_text());
    let mut files = vec![("gnb.trace", &sim.gnb), ("ue.trace", &sim.ue)];
    if let Some(eve) = &sim.eve {
        files.push(("eve.trace", eve));
    }
    for (name, trace) in files {
        let path = args.out.join(name);
        write_trace(trace, &path).map_err(|e| Failure::io(&path, e))?;
        println!("wrote {} ({} probes)", path.display(), trace.len());
    }
    Ok(())
}

fn cmd_run(args: &RunArgs) -> Result<(), Failure> {
    let (gnb, ue, id, seed) = load_inputs(&args.inputs)?;
    let cfg = session_config(&args.tuning, id, seed)?;
    let outcome = run_session(&gnb, &ue, &cfg)?;
    finish_session(&outcome, &args.out, args.json_report.as_deref())
}

fn cmd_serve(args: &ServeArgs) -> Result<(), Failure> {
    let (gnb, ue, id, seed) = load_inputs(&args.inputs)?;
    let cfg = session_config(&args.tuning, id, seed)?;
    let outcome = match (&args.listen, &args.connect) {
        (Some(addr), _) => {
            let listener = TcpListener::bind(addr).map_err(|e| Failure::config(format!("cannot listen on {addr}: {e}")))?;
            if let Ok(local) = listener.local_addr() {
                eprintln!("listening on {local}");
            }
            serve_once(&listener, &gnb, &ue, &cfg)?
        }
        (None, Some(addr)) => connect_and_run(addr.as_str(), &gnb, &ue, &cfg)?,
        (None, None) => return Err(Failure::config("--listen or --connect is required")),
    };
    finish_session(&outcome, &args.out, args.json_report.as_deref())
}

fn cmd_connect(args: &ConnectArgs) -> Result<(), Failure> {
    let (gnb, ue, id, seed) = load_inputs(&args.inputs)?;
    let cfg = session_config(&args.tuning, id, seed)?;
    let outcome = connect_and_run(args.connect.as_str(), &gnb, &ue, &cfg)?;
    finish_session(&outcome, &args.out, args.json_report.as_deref())
}

#[derive(Serialize)]
struct Analysis {
    input_bits: usize,
    keys: usize,
    h1_per_bit: f64,
    hmin_per_bit: f64,
    effective_bits: f64,
    nist_results: Vec<NistResult>,
    nist_passed: usize,
    notes: Vec<String>,
}

/// Bits from a key file, or from a file of 0/1 characters.
fn read_bits(path: &Path) -> Result<(Vec<u8>, usize), Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
    if let Ok(keys) = parse_key_file(&text) {
        if !keys.is_empty() {
            return Ok((keys.iter().flat_map(|k| k.key_bits()).collect(), keys.len()));
        }
    }
    let mut bits = Vec::new();
    for c in text.chars().filter(|c| !c.is_whitespace()) {
        match c {
            '0' => bits.push(0),
            '1' => bits.push(1),
            _ => {
                return Err(Failure::config(format!(
                    "{}: neither a key file nor a 0/1 bit file",
                    path.display()
                )))
            }
        }
    }
    Ok((bits, 0))
}

fn analyze_bits(bits: &[u8], keys: usize) -> Result<Analysis, Failure> {
    let quality = |e: QualityError| Failure { name: "Empty", message: e.to_string(), code: 2 };
    let h1 = shannon_entropy(bits).map_err(quality)?;
    let (hmin, effective) = min_entropy(bits).map_err(quality)?;
    let mut notes = Vec::new();
    let nist_results = match nist_suite(bits) {
        Ok(r) => r,
        Err(e @ QualityError::TooShort(_)) => {
            notes.push(format!("NIST subset skipped (TooShort): {e}"));
            Vec::new()
        }
        Err(e) => return Err(quality(e)),
    };
    if keys > 1 {
        notes.push(format!("{keys} keys of {KEY_BITS} bits concatenated"));
    }
    Ok(Analysis {
        input_bits: bits.len(),
        keys,
        h1_per_bit: h1,
        hmin_per_bit: hmin,
        effective_bits: effective,
        nist_passed: nist_results.iter().filter(|r| r.pass).count(),
        nist_results,
        notes,
    })
}

fn cmd_analyze(args: &AnalyzeArgs) -> Result<(), Failure> {
    let mut bits = Vec::new();
    let mut keys = 0;
    for f in &args.files {
        let (b, k) = read_bits(f)?;
        bits.extend(b);
        keys += k;
    }
    let analysis = analyze_bits(&bits, keys)?;
    match &args.json_report {
        Some(path) => {
            write_json(path, &analysis)?;
            println!(
                "{} bits, h1 {:.4}, Hmin {:.4}, NIST {}/{} passed",
                analysis.input_bits,
                analysis.h1_per_bit,
                analysis.hmin_per_bit,
                analysis.nist_passed,
                analysis.nist_results.len()
            );
        }
        None => println!("{}", serde_json::to_string_pretty(&analysis).map_err(|e| Failure::config(e.to_string()))?),
    }
    Ok(())
}

#[derive(Serialize)]
struct SuiteReport {
    seed: u64,
    scenarios: Vec<SessionReport>,
    failures: Vec<String>,
    concatenated: Option<Analysis>,
}

fn cmd_report(args: &ReportArgs) -> Result<(), Failure> {
    println!(
        "{:<8} {:>7} {:>8} {:>9} {:>6} {:>9} {:>9} {:>7} {:>7}",
        "scenario", "probes", "BDR(%)", "sub(kHz)", "key", "raw bps", "net bps", "h1", "eff"
    );
    let mut reports = Vec::new();
    let mut keys = Vec::new();
    let mut failures = Vec::new();
    let mut first_failure = None;
    for preset in &presets::PRESETS {
        let scenario = preset.config(args.seed);
        let sim = simulate_scenario(&scenario).map_err(|e| Failure::from(SessionError::from(e)))?;
        let cfg = session_config(&args.tuning, preset.name.to_string(), args.seed)?;
        match run_session(&sim.gnb, &sim.ue, &cfg) {
            Ok(outcome) => {
                let r = &outcome.report;
                println!(
                    "{:<8} {:>7} {:>8.2} {:>9.0} {:>6} {:>9.1} {:>9.2} {:>7.4} {:>7.1}",
                    preset.name,
                    r.session.probe_pairs,
                    r.quality.bdr_initial * 100.0,
                    r.session.subband.width_hz / 1e3,
                    r.session.key_bits,
                    r.quality.kgr_raw_bps,
                    r.quality.kgr_net_bps,
                    r.quality.h1_per_bit,
                    r.quality.effective_bits
                );
                keys.push(outcome.local().key.clone());
                reports.push(outcome.report);
            }
            Err(e) => {
                let f = Failure::from(e);
                println!("{:<8} failed: {}: {}", preset.name, f.name, f.message);
                failures.push(format!("{}: {}", preset.name, f.name));
                first_failure.get_or_insert(f);
            }
        }
    }
    let bits: Vec<u8> = keys.iter().flat_map(|k| k.key_bits()).collect();
    let concatenated = if bits.len() >= NIST_MIN_BITS { Some(analyze_bits(&bits, keys.len())?) } else { None };
    if let Some(a) = &concatenated {
        println!("NIST subset on {} concatenated key bits: {}/{} passed", a.input_bits, a.nist_passed, a.nist_results.len());
        for r in &a.nist_results {
            println!("  {:<34} p={:.6} {}", r.name, r.p_value, if r.pass { "pass" } else { "FAIL" });
        }
    }
    if let Some(dir) = &args.out {
        if first_failure.is_none() {
            let path = dir.join("keys.txt");
            fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))?;
            write_key_file(&path, &keys).map_err(|e| Failure::io(&path, e))?;
            println!("wrote {}", path.display());
        }
    }
    if let Some(path) = &args.json_report {
        write_json(path, &SuiteReport { seed: args.seed, scenarios: reports, failures, concatenated })?;
    }
    first_failure.map_or(Ok(()), Err)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Run(a) => cmd_run(a),
        Command::Serve(a) => cmd_serve(a),
        Command::Connect(a) => cmd_connect(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}: {}", f.name, f.message);
            ExitCode::from(f.code)
        }
    }
}
