use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use beamcast::config::{ConfigFile, RunTarget};
use beamcast::engine::{
    round_senders, run_random, run_unicast, write_trace, EngineError, RandomConfig, RunConfig, RunOutcome,
};
use beamcast::fieldmap::{compute_field, render, FieldError, RenderMode, RenderSpec, Viewport};
use beamcast::phasor::{canonical_phasor, ChannelParams, Phasor, Position};
use beamcast::placement::make_random;
use beamcast::schedule::{build_schedule, ScheduleParams, Variant};
use beamcast::verify::{self, Suite};

const EXIT_FAILURE: u8 = 1;
const EXIT_PRECONDITION: u8 = 2;
const EXIT_RECEPTION: u8 = 3;
const EXIT_USAGE: u8 = 64;
const EXIT_CONFIG: u8 = 65;
const EXIT_IO: u8 = 74;

#[derive(Parser)]
#[command(name = "beamcast", version, about = "Cooperative-beamforming unicast simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    U1,
    U2,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Snr,
    Phase,
}

#[derive(Subcommand)]
enum Command {
    /// Print the relay rectangles for a distance.
    Schedule {
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        w0: f64,
        #[arg(long)]
        distance: f64,
        #[arg(long, value_enum, default_value = "u1")]
        variant: VariantArg,
        /// Also write the schedule as JSON lines.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Execute a grid or random-placement run.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Stop at the first failed round.
        #[arg(long)]
        strict: bool,
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Rasterise the field of one round, or of the config's sender rectangle.
    Field {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        round: Option<u32>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run a built-in property suite.
    Verify {
        #[arg(long)]
        suite: Suite,
    },
    /// Repeated random-placement runs with a success-rate report.
    Random {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        k: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        runs: u64,
        /// Defaults to the smallest admitted wavelength, 3k/sqrt(ln n).
        #[arg(long)]
        lambda: Option<f64>,
    },
}

/// Error carrying the process exit code it maps to.
struct Failure {
    code: u8,
    msg: String,
}

impl Failure {
    fn new(code: u8, msg: impl ToString) -> Self {
        Failure { code, msg: msg.to_string() }
    }
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        Failure::new(EXIT_PRECONDITION, e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::new(EXIT_IO, e)
    }
}

impl From<beamcast::config::ConfigError> for Failure {
    fn from(e: beamcast::config::ConfigError) -> Self {
        Failure::new(EXIT_CONFIG, format!("malformed config: {e}"))
    }
}

impl From<FieldError> for Failure {
    fn from(e: FieldError) -> Self {
        Failure::new(EXIT_PRECONDITION, e)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(command: Command) -> Result<u8, Failure> {
    match command {
        Command::Schedule { lambda, w0, distance, variant, json } => schedule(lambda, w0, distance, variant, json),
        Command::Run { config, strict, trace } => run(&config, strict, trace),
        Command::Field { config, round, out, mode, csv } => field(&config, round, &out, mode, csv),
        Command::Verify { suite } => verify(suite),
        Command::Random { n, k, seed, runs, lambda } => random(n, k, seed, runs, lambda),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path).map(BufWriter::new).map_err(|e| Failure::new(EXIT_IO, format!("{}: {e}", path.display())))
}

fn load_config(path: &Path) -> Result<ConfigFile, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::new(EXIT_IO, format!("{}: {e}", path.display())))?;
    Ok(ConfigFile::parse(&text)?)
}

fn schedule(lambda: f64, w0: f64, distance: f64, variant: VariantArg, json: Option<PathBuf>) -> Result<u8, Failure> {
    let variant = match variant {
        VariantArg::U1 => Variant::UnicastI,
        VariantArg::U2 => Variant::UnicastII,
    };
    let sched = build_schedule(ScheduleParams::new(variant, lambda, w0, distance))
        .map_err(|e| Failure::new(EXIT_PRECONDITION, e))?;
    println!("{:>5} {:>16} {:>16} {:>10} {:>16} {:>10}  policy", "round", "x_lo", "x_hi", "h", "w", "nodes");
    for r in &sched.rects {
        println!(
            "{:>5} {:>16.3} {:>16.3} {:>10.3} {:>16.3} {:>10}  {:?}",
            r.round,
            r.x_lo,
            r.x_hi,
            r.height(),
            r.width(),
            r.grid_node_count(),
            r.policy
        );
    }
    if let Some(path) = json {
        let mut out = create(&path)?;
        sched.write_jsonl(&mut out)?;
        out.flush()?;
    }
    Ok(0)
}

fn print_summary(outcome: &RunOutcome) {
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    let s = &outcome.summary;
    println!(
        "{} rounds ({} line, {} relay), distance {:.1}, energy {:.6e}, time {:.6e} s, v/c {:.6}",
        s.rounds_total, s.line_rounds, s.relay_rounds, s.distance, s.energy_total, s.time_total_s, s.velocity_over_c
    );
    match &s.failure {
        None => println!("success"),
        Some(f) => println!("failed: {f}"),
    }
}

fn run(path: &Path, strict: bool, trace: Option<PathBuf>) -> Result<u8, Failure> {
    let cfg = load_config(path)?;
    let outcome = match cfg.run_target()? {
        RunTarget::Grid(mut c) => {
            c.strict |= strict;
            let outcome = run_unicast(&c)?;
            if let Some(p) = &trace {
                let mut out = create(p)?;
                write_trace(&mut out, &c, &outcome)?;
                out.flush()?;
            }
            outcome
        }
        RunTarget::Random(mut c) => {
            c.strict |= strict;
            let outcome = run_random(&c)?;
            if let Some(p) = &trace {
                let mut out = create(p)?;
                write_trace(&mut out, &random_echo(&c), &outcome)?;
                out.flush()?;
            }
            outcome
        }
    };
    print_summary(&outcome);
    Ok(if outcome.summary.success { 0 } else { EXIT_RECEPTION })
}

/// Random runs share the grid trace header; the fields without a random
/// counterpart echo neutral values.
fn random_echo(c: &RandomConfig) -> RunConfig {
    RunConfig {
        nodes: c.nodes.clone(),
        params: c.params,
        variant: Variant::UnicastI,
        w0: 0.0,
        source: c.source,
        target: c.target,
        t0_processing_s: c.t0_processing_s,
        verify_mode: beamcast::engine::VerifyMode::AllNodes,
        strict: c.strict,
    }
}

fn integer_viewport(x_lo: f64, x_hi: f64, y_lo: f64, y_hi: f64) -> Viewport {
    Viewport { x_lo: x_lo.floor(), x_hi: x_hi.ceil() + 1.0, y_lo: y_lo.floor(), y_hi: y_hi.ceil() + 1.0 }
}

fn field(
    path: &Path,
    round: Option<u32>,
    out: &Path,
    mode: Option<ModeArg>,
    csv: Option<PathBuf>,
) -> Result<u8, Failure> {
    let cfg = load_config(path)?;
    let mode = match mode {
        Some(ModeArg::Snr) => RenderMode::Snr,
        Some(ModeArg::Phase) => RenderMode::PhaseError,
        None => cfg.mode()?.unwrap_or(RenderMode::Snr),
    };
    let resolution = cfg.resolution()?;
    let (senders, params, default_view): (Vec<(Position, Phasor)>, ChannelParams, Viewport) = match cfg.field_setup()? {
        Some(setup) => {
            let params = cfg.channel()?;
            let senders = setup.senders.grid_nodes().map(|p| (p, canonical_phasor(p.x, params.lambda))).collect();
            let far = setup.receivers.unwrap_or(setup.senders);
            let span = far.x_hi - setup.senders.x_lo;
            let view =
                integer_viewport(setup.senders.x_lo, far.x_hi + span / 4.0, -span / 20.0, far.y_hi + span / 20.0);
            (senders, params, view)
        }
        None => {
            let round = round.ok_or_else(|| Failure::new(EXIT_USAGE, "--round is required without a senders key"))?;
            let RunTarget::Grid(mut c) = cfg.run_target()? else {
                return Err(Failure::new(EXIT_PRECONDITION, "round fields need a grid placement"));
            };
            c.strict = false;
            let outcome = run_unicast(&c)?;
            let trace = outcome
                .trace
                .iter()
                .find(|t| t.round == round)
                .ok_or_else(|| Failure::new(EXIT_PRECONDITION, format!("run has no round {round}")))?;
            let rs = round_senders(&c, trace, outcome.lambda)?;
            let params = c.params.with_lambda(outcome.lambda);
            let span = rs.receiver_rect.x_hi - rs.sender_rect.x_lo;
            let view = integer_viewport(
                rs.sender_rect.x_lo,
                rs.receiver_rect.x_hi + span / 4.0,
                -span / 20.0,
                rs.receiver_rect.y_hi + span / 20.0,
            );
            (rs.senders, params, view)
        }
    };
    let viewport = cfg.viewport()?.unwrap_or(default_view);
    let map = compute_field(&senders[..], viewport, resolution, &params)?;
    let mut img = create(out)?;
    img.write_all(&render(&map, &RenderSpec { mode, tau: params.tau }))?;
    img.flush()?;
    if let Some(p) = csv {
        let mut w = create(&p)?;
        map.write_csv(&mut w)?;
        w.flush()?;
    }
    let above = map.above_mask(params.tau).iter().filter(|&&b| b).count();
    println!("{} x {} cells, {above} at or above tau", map.width, map.height);
    Ok(0)
}

fn verify(suite: Suite) -> Result<u8, Failure> {
    let checks = verify::run(suite);
    let mut ok = true;
    for c in &checks {
        println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
        ok &= c.pass;
    }
    Ok(if ok { 0 } else { EXIT_FAILURE })
}

fn random(n: usize, k: f64, seed: u64, runs: u64, lambda: Option<f64>) -> Result<u8, Failure> {
    let lambda = lambda.unwrap_or_else(|| beamcast::engine::random::min_random_lambda(n, k));
    let mut successes = 0u64;
    for s in seed..seed + runs {
        let nodes = make_random(n, s, k).map_err(|e| Failure::new(EXIT_PRECONDITION, e))?;
        let outcome = run_random(&RandomConfig::across(nodes, ChannelParams::grid(lambda), 1e-2))?;
        match &outcome.summary.failure {
            None => successes += 1,
            Some(f) => println!("seed {s}: {f}"),
        }
    }
    println!("{successes}/{runs} runs succeeded (n = {n}, k = {k}, lambda = {lambda})",);
    Ok(0)
}
