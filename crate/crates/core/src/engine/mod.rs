//! Round-by-round protocol execution.
//!
//! A grid run sends the message along up to two straight legs. Each leg
//! starts with a line broadcast that informs a row of `8·w0` nodes, hops
//! from that line into rectangle 0, then relays through the schedule's
//! rectangles. Every round is checked by summing the field of its senders
//! at the verified receivers.

pub mod analysis;
pub mod field;
pub mod line;
pub mod random;
pub mod rounds;
pub mod unicast;

use std::io::Write;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::phasor::{ChannelParams, PhysicsError, Position};
use crate::placement::{NodeSet, PlacementError, PlacementModel, GENERATOR_NAME};
use crate::schedule::{RectSpec, ScheduleError, Variant};

pub use analysis::{lower_bound_check, max_amplitude_scan, AmplitudeScan, LowerBound};
pub use field::Method;
pub use line::{line_broadcast, LineBroadcast};
pub use random::{run_random, RandomConfig};
pub use rounds::{first_rectangle_hop, relay_round, RoundResult};
pub use unicast::{round_senders, run_unicast, RoundSenders};

/// Wavelength nudge applied when λ is a whole number of grid units.
pub const LAMBDA_EPSILON: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Physics(#[from] PhysicsError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Placement(#[from] PlacementError),
    #[error("precondition violated: {0}")]
    Precondition(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum VerifyMode {
    AllNodes,
    /// Corners, edge midpoints, centre, plus `count` seeded interior nodes.
    Sampled {
        count: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Line,
    FirstRect,
    Relay,
    Preparation,
}

/// Record of one round. Rectangles are in grid coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTrace {
    pub round: u32,
    pub leg: u32,
    pub stage: Stage,
    pub sender_rect: RectSpec,
    pub receiver_rect: RectSpec,
    pub senders: u64,
    pub verified: u64,
    pub failed: u64,
    pub min_snr: f64,
    pub min_re: f64,
    pub worst_phase_err: f64,
    /// Accumulated self-sync allowance for this round, when one applies.
    pub phase_budget: Option<f64>,
    pub near_field_pairs: u64,
    pub method: Method,
    pub energy_added: f64,
    pub elapsed_time_s: f64,
    pub informed_distance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub nodes: NodeSet,
    pub params: ChannelParams,
    pub variant: Variant,
    pub w0: f64,
    pub source: Position,
    pub target: Position,
    pub t0_processing_s: f64,
    pub verify_mode: VerifyMode,
    /// Stop at the first failed round instead of finishing the schedule.
    pub strict: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub success: bool,
    pub failure: Option<String>,
    pub rounds_total: u32,
    pub line_rounds: u32,
    pub relay_rounds: u32,
    pub distance: f64,
    pub energy_total: f64,
    pub time_total_s: f64,
    pub velocity_m_per_s: f64,
    pub velocity_over_c: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub lambda: f64,
    pub lambda_perturbed: bool,
    pub warnings: Vec<String>,
    pub trace: Vec<RoundTrace>,
    pub summary: RunSummary,
}

/// Moves λ off whole grid units, where every on-axis path would be an exact
/// number of periods.
pub fn perturb_lambda(lambda: f64) -> (f64, bool) {
    if lambda.fract() == 0.0 {
        (lambda + LAMBDA_EPSILON, true)
    } else {
        (lambda, false)
    }
}

/// Grid nodes of `rect` to verify. Sampled mode always covers the corners,
/// the edge midpoints and the centre; `extra` nodes are added when inside.
pub fn sample_nodes(rect: &RectSpec, mode: VerifyMode, salt: u64, extra: &[Position]) -> Vec<Position> {
    let (x0, x1) = rect.grid_cols();
    let (y0, y1) = rect.grid_rows();
    if x1 < x0 || y1 < y0 {
        return Vec::new();
    }
    let mut picked: Vec<(i64, i64)> = match mode {
        VerifyMode::AllNodes => (x0..=x1).flat_map(|x| (y0..=y1).map(move |y| (x, y))).collect(),
        VerifyMode::Sampled { count, seed } => {
            let (xm, ym) = ((x0 + x1) / 2, (y0 + y1) / 2);
            let mut v = vec![(x0, y0), (x1, y0), (x0, y1), (x1, y1), (xm, y0), (xm, y1), (x0, ym), (x1, ym), (xm, ym)];
            let total = rect.grid_node_count();
            let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let rows = (y1 - y0 + 1) as u64;
            if total <= usize::MAX as u64 && (total as usize) <= count.saturating_mul(4) {
                for idx in sample(&mut rng, total as usize, count.min(total as usize)) {
                    let idx = idx as u64;
                    v.push((x0 + (idx / rows) as i64, y0 + (idx % rows) as i64));
                }
            } else {
                use rand::Rng;
                for _ in 0..count {
                    let idx = rng.gen_range(0..total);
                    v.push((x0 + (idx / rows) as i64, y0 + (idx % rows) as i64));
                }
            }
            v
        }
    };
    for p in extra {
        if rect.contains(*p) && p.x.fract() == 0.0 && p.y.fract() == 0.0 {
            picked.push((p.x as i64, p.y as i64));
        }
    }
    picked.sort_unstable();
    picked.dedup();
    picked.into_iter().map(|(x, y)| Position::new(x as f64, y as f64)).collect()
}

#[derive(Serialize)]
struct Header<'a> {
    r#type: &'static str,
    generator: &'static str,
    seed: Option<u64>,
    lambda_effective: f64,
    lambda_perturbed: bool,
    warnings: &'a [String],
    config: ConfigEcho<'a>,
}

#[derive(Serialize)]
struct ConfigEcho<'a> {
    placement: PlacementModel,
    node_count: u64,
    tx_range: f64,
    tx_amplitude: f64,
    params: &'a ChannelParams,
    variant: Variant,
    w0: f64,
    source: Position,
    target: Position,
    t0_processing_s: f64,
    verify_mode: VerifyMode,
    strict: bool,
}

#[derive(Serialize)]
struct Tagged<'a, T: Serialize> {
    r#type: &'static str,
    #[serde(flatten)]
    body: &'a T,
}

/// Writes the run as JSON lines: a header echoing the configuration, one
/// line per round, and the summary.
pub fn write_trace<W: Write>(mut out: W, config: &RunConfig, outcome: &RunOutcome) -> std::io::Result<()> {
    let seed = match (config.nodes.model, config.verify_mode) {
        (PlacementModel::Random { seed, .. }, _) => Some(seed),
        (_, VerifyMode::Sampled { seed, .. }) => Some(seed),
        _ => None,
    };
    let header = Header {
        r#type: "header",
        generator: GENERATOR_NAME,
        seed,
        lambda_effective: outcome.lambda,
        lambda_perturbed: outcome.lambda_perturbed,
        warnings: &outcome.warnings,
        config: ConfigEcho {
            placement: config.nodes.model,
            node_count: config.nodes.len(),
            tx_range: config.nodes.tx_range,
            tx_amplitude: config.nodes.tx_amplitude,
            params: &config.params,
            variant: config.variant,
            w0: config.w0,
            source: config.source,
            target: config.target,
            t0_processing_s: config.t0_processing_s,
            verify_mode: config.verify_mode,
            strict: config.strict,
        },
    };
    serde_json::to_writer(&mut out, &header)?;
    writeln!(out)?;
    for round in &outcome.trace {
        serde_json::to_writer(&mut out, &Tagged { r#type: "round", body: round })?;
        writeln!(out)?;
    }
    serde_json::to_writer(&mut out, &Tagged { r#type: "summary", body: &outcome.summary })?;
    writeln!(out)?;
    Ok(())
}
