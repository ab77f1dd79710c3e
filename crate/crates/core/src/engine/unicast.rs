//! Grid unicast: line start-up, first rectangle, relay rounds, per leg.

use crate::phasor::{canonical_phasor, ChannelParams, Phasor, Position};
use crate::schedule::{build_schedule, route_xy, DelayPolicy, Leg, RectSpec, ScheduleParams};

use super::field::{Method, SenderWeights, Source, BRUTE_FORCE_LIMIT};
use super::line::line_broadcast;
use super::rounds::{first_rectangle_hop, relay_round, RoundResult};
use super::{perturb_lambda, EngineError, RoundTrace, RunConfig, RunOutcome, RunSummary, Stage};

/// Bookkeeping shared by every round of a run.
struct Ledger<'a> {
    config: &'a RunConfig,
    params: ChannelParams,
    trace: Vec<RoundTrace>,
    energy: f64,
    elapsed: f64,
    informed: f64,
    failure: Option<String>,
    line_rounds: u32,
    relay_rounds: u32,
}

impl Ledger<'_> {
    fn next_round(&self) -> u32 {
        self.trace.len() as u32 + 1
    }

    /// Appends a round. `hop` is the local distance from the sender
    /// rectangle's near edge to the receiver rectangle's far edge.
    #[allow(clippy::too_many_arguments)]
    fn record(
        &mut self,
        leg_index: u32,
        leg: &Leg,
        stage: Stage,
        sender: &RectSpec,
        receiver: &RectSpec,
        senders: u64,
        res: &RoundResult,
    ) {
        let amp = self.config.nodes.tx_amplitude;
        let energy = senders as f64 * amp * amp;
        let hop = receiver.x_hi - sender.x_lo;
        let spacing = self.params.grid_spacing_m;
        self.energy += energy;
        self.elapsed += hop * spacing / self.params.light_speed + self.config.t0_processing_s;
        let global = leg.rect_to_global(receiver);
        let src = self.config.source;
        let far = [
            Position::new(global.x_lo, global.y_lo),
            Position::new(global.x_hi, global.y_lo),
            Position::new(global.x_lo, global.y_hi),
            Position::new(global.x_hi, global.y_hi),
        ]
        .into_iter()
        .map(|p| p.dist(src))
        .fold(0.0, f64::max);
        self.informed = self.informed.max(far);
        let round = self.next_round();
        if !res.pass && self.failure.is_none() {
            let listed: Vec<String> = res.failures.iter().map(|p| leg.to_global(*p).to_string()).collect();
            self.failure = Some(format!(
                "round {round} ({stage:?}): {} of {} verified receivers failed; min |y|^2 = {:.6}, worst phase error = {:.6} rad; first failures: [{}]",
                res.failed,
                res.verified,
                res.min_snr,
                res.worst_phase_err,
                listed.join(", ")
            ));
        }
        match stage {
            Stage::Line => self.line_rounds += 1,
            _ => self.relay_rounds += 1,
        }
        self.trace.push(RoundTrace {
            round,
            leg: leg_index,
            stage,
            sender_rect: leg.rect_to_global(sender),
            receiver_rect: global,
            senders,
            verified: res.verified,
            failed: res.failed,
            min_snr: res.min_snr,
            min_re: res.min_re,
            worst_phase_err: res.worst_phase_err,
            phase_budget: res.phase_budget,
            near_field_pairs: res.near_field_pairs,
            method: res.method,
            energy_added: energy,
            elapsed_time_s: self.elapsed,
            informed_distance: self.informed,
            pass: res.pass,
        });
    }

    fn stop(&self) -> bool {
        self.config.strict && self.failure.is_some()
    }
}

fn axis_rect(lo: f64, hi: f64, policy: DelayPolicy) -> RectSpec {
    RectSpec { round: 0, x_lo: lo, x_hi: hi, y_lo: 0.0, y_hi: 0.0, policy }
}

fn check_in_grid(leg: &Leg, rect: &RectSpec, grid: (u64, u64)) -> Result<(), EngineError> {
    let g = leg.rect_to_global(rect);
    let (x0, x1) = g.grid_cols();
    let (y0, y1) = g.grid_rows();
    if x0 < 0 || y0 < 0 || x1 >= grid.0 as i64 || y1 >= grid.1 as i64 {
        return Err(EngineError::Precondition(format!(
            "rectangle [{}, {}] x [{}, {}] leaves the {} x {} grid",
            g.x_lo, g.x_hi, g.y_lo, g.y_hi, grid.0, grid.1
        )));
    }
    Ok(())
}

fn is_grid_point(p: Position, grid: (u64, u64)) -> bool {
    p.x.fract() == 0.0 && p.y.fract() == 0.0 && p.x >= 0.0 && p.y >= 0.0 && p.x < grid.0 as f64 && p.y < grid.1 as f64
}

/// Runs the grid protocol from `config.source` to `config.target`.
///
/// Preconditions (grid placement, schedule constraints, geometry inside the
/// grid) are errors. Reception failures end the run in strict mode and are
/// reported in the summary either way.
pub fn run_unicast(config: &RunConfig) -> Result<RunOutcome, EngineError> {
    let (rows, cols) = config.nodes.grid_dims().ok_or_else(|| {
        EngineError::Precondition("grid unicast needs a grid placement; use the random runner".into())
    })?;
    let grid = (cols, rows);
    config.params.validate_grid()?;
    if !(config.t0_processing_s >= 0.0) {
        return Err(EngineError::Precondition("t0 must be non-negative".into()));
    }
    for (name, p) in [("source", config.source), ("target", config.target)] {
        if !is_grid_point(p, grid) {
            return Err(EngineError::Precondition(format!("{name} {p} is not a grid node")));
        }
    }
    let (lambda, lambda_perturbed) = perturb_lambda(config.params.lambda);
    let mut warnings = Vec::new();
    if lambda_perturbed {
        warnings.push(format!("lambda {} is a whole number of grid units; using {lambda}", config.params.lambda));
    }
    let params = config.params.with_lambda(lambda);
    let template = ScheduleParams::new(config.variant, lambda, config.w0, 0.0);
    template.validate()?;
    let amplitude = config.nodes.tx_amplitude;
    let w0 = config.w0;
    let line_len = (8.0 * w0).floor() as u64;

    let mut ledger = Ledger {
        config,
        params,
        trace: Vec::new(),
        energy: 0.0,
        elapsed: 0.0,
        informed: 0.0,
        failure: None,
        line_rounds: 0,
        relay_rounds: 0,
    };

    let legs = route_xy(config.source, config.target, grid);
    'legs: for (leg_index, leg) in legs.iter().enumerate() {
        let leg_index = leg_index as u32;
        let target_local = Position::new(leg.length, 0.0);
        let relaying = leg.length >= 9.0 * w0;
        let schedule = if relaying {
            let s = build_schedule(ScheduleParams { distance: leg.length - 9.0 * w0, ..template })?;
            let rects: Vec<RectSpec> = s.rects.iter().map(|r| r.translated(9.0 * w0, 0.0)).collect();
            for r in &rects {
                check_in_grid(leg, r, grid)?;
            }
            Some(rects)
        } else {
            None
        };
        let m_target = if relaying { line_len } else { leg.length as u64 + 1 };
        check_in_grid(leg, &axis_rect(0.0, (m_target - 1) as f64, DelayPolicy::PhaseCorrected), grid)?;

        let line = line_broadcast(m_target, &params, amplitude, None)?;
        let mut prev_end = 0u64;
        for (&end, edge) in line.prefix_ends.iter().zip(&line.edge_envelope) {
            let snr = edge.norm_sqr();
            let res = RoundResult {
                verified: 1,
                failed: u64::from(snr < params.tau),
                min_snr: snr,
                min_re: edge.re,
                worst_phase_err: edge.arg().abs(),
                phase_budget: None,
                near_field_pairs: 0,
                method: Method::BruteForce,
                failures: Vec::new(),
                next_weights: None,
                pass: snr >= params.tau,
            };
            let sender = axis_rect(0.0, prev_end as f64, DelayPolicy::PhaseCorrected);
            let receiver = axis_rect((prev_end + 1) as f64, end as f64, DelayPolicy::PhaseCorrected);
            ledger.record(leg_index, leg, Stage::Line, &sender, &receiver, prev_end + 1, &res);
            prev_end = end;
            if ledger.stop() {
                break 'legs;
            }
        }
        let Some(rects) = schedule else { continue };

        let rect0 = rects[0];
        let salt = ledger.next_round() as u64;
        let extra: Vec<Position> = if rects.len() == 1 { vec![target_local] } else { Vec::new() };
        let res = first_rectangle_hop(line_len as usize, amplitude, &rect0, &params, config.verify_mode, salt, &extra)?;
        let line_rect = axis_rect(0.0, (line_len - 1) as f64, DelayPolicy::PhaseCorrected);
        ledger.record(leg_index, leg, Stage::FirstRect, &line_rect, &rect0, line_len, &res);
        if ledger.stop() {
            break;
        }

        let mut weights = SenderWeights::Uniform(amplitude);
        for i in 1..rects.len() {
            let (sender, receiver) = (rects[i - 1], rects[i]);
            let last = i + 1 == rects.len();
            let extra: Vec<Position> = if last { vec![target_local] } else { Vec::new() };
            let source = Source::Rect { rect: sender, weights: weights.clone() };
            let salt = ledger.next_round() as u64;
            let res = relay_round(source, &receiver, &params, config.verify_mode, salt, &extra, i, amplitude, !last)?;
            ledger.record(leg_index, leg, Stage::Relay, &sender, &receiver, sender.grid_node_count(), &res);
            if ledger.stop() {
                break 'legs;
            }
            weights = res.next_weights.unwrap_or(SenderWeights::Uniform(amplitude));
        }
    }

    let distance = config.source.dist(config.target);
    let time = ledger.elapsed;
    let velocity = if time > 0.0 { distance * params.grid_spacing_m / time } else { 0.0 };
    let summary = RunSummary {
        success: ledger.failure.is_none(),
        failure: ledger.failure.clone(),
        rounds_total: ledger.trace.len() as u32,
        line_rounds: ledger.line_rounds,
        relay_rounds: ledger.relay_rounds,
        distance,
        energy_total: ledger.energy,
        time_total_s: time,
        velocity_m_per_s: velocity,
        velocity_over_c: velocity / params.light_speed,
    };
    Ok(RunOutcome { lambda, lambda_perturbed, warnings, trace: ledger.trace, summary })
}

/// Senders of one traced round with their transmitted phasors, in the
/// frame of the round's leg (x along the leg, y across it).
#[derive(Debug, Clone)]
pub struct RoundSenders {
    pub senders: Vec<(Position, Phasor)>,
    pub sender_rect: RectSpec,
    pub receiver_rect: RectSpec,
}

/// Rebuilds the transmitting nodes of `round` for rasterising. Every sender
/// carries its canonical phasor scaled to the node amplitude.
pub fn round_senders(config: &RunConfig, round: &RoundTrace, lambda: f64) -> Result<RoundSenders, EngineError> {
    let (rows, cols) = config
        .nodes
        .grid_dims()
        .ok_or_else(|| EngineError::Precondition("round fields need a grid placement".into()))?;
    let legs = route_xy(config.source, config.target, (cols, rows));
    let leg = legs
        .get(round.leg as usize)
        .ok_or_else(|| EngineError::Precondition(format!("round {} names missing leg {}", round.round, round.leg)))?;
    let sender_rect = leg.rect_to_local(&round.sender_rect);
    let receiver_rect = leg.rect_to_local(&round.receiver_rect);
    let count = sender_rect.grid_node_count();
    if count > BRUTE_FORCE_LIMIT {
        return Err(EngineError::Precondition(format!(
            "round {} has {count} senders, above the raster limit of {BRUTE_FORCE_LIMIT}",
            round.round
        )));
    }
    let amp = config.nodes.tx_amplitude;
    let senders = sender_rect.grid_nodes().map(|p| (p, canonical_phasor(p.x, lambda) * amp)).collect();
    Ok(RoundSenders { senders, sender_rect, receiver_rect })
}
