//! Unicast over uniformly random nodes.
//!
//! The source informs the square of side `k√(log n)` around itself directly,
//! the square beams into the first `w₁ × h₁` rectangle, and the rectangles
//! then grow double-exponentially toward the target. Every transmitting node
//! sets its phase from its own true position and every receiving node is
//! checked by summing the field of the actual random senders.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::phasor::{canonical_phasor, superpose, ChannelParams, Phasor, Position};
use crate::placement::{log_n, min_density, NodeSet, PlacementModel};
use crate::schedule::{lay_out, DelayPolicy, RectDims, RectSpec};

use super::field::Method;
use super::{perturb_lambda, EngineError, RoundTrace, RunOutcome, RunSummary, Stage};

const MAX_LISTED_FAILURES: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomConfig {
    pub nodes: NodeSet,
    pub params: ChannelParams,
    /// Snapped to the nearest node.
    pub source: Position,
    /// Must lie ahead of the source in +x, within half a first-rectangle
    /// height of its row.
    pub target: Position,
    pub t0_processing_s: f64,
    pub strict: bool,
}

impl RandomConfig {
    /// Source near the left edge and target near the right edge, both on the
    /// middle row of the square region.
    pub fn across(nodes: NodeSet, params: ChannelParams, t0_processing_s: f64) -> Self {
        let side = (nodes.len() as f64).sqrt();
        let source = Position::new(nodes.tx_range, side / 2.0);
        let target = Position::new(side - 1.0, side / 2.0);
        RandomConfig { nodes, params, source, target, t0_processing_s, strict: true }
    }
}

/// `k` recovered from the placement's transmission range.
fn range_constant(nodes: &NodeSet, n: usize) -> f64 {
    nodes.tx_range / log_n(n).sqrt()
}

/// Smallest wavelength the random-placement analysis admits, `3k/√(ln n)`.
pub fn min_random_lambda(n: usize, k: f64) -> f64 {
    3.0 * k / (n as f64).ln().sqrt()
}

/// Preparation square side followed by the relay rectangle dimensions.
fn random_dims(n: usize, k: f64, lambda: f64) -> impl Iterator<Item = RectDims> {
    let l = log_n(n);
    let side = k * l.sqrt();
    let first = RectDims::new(k * l.powf(1.5) / 3.0, side);
    let relays = std::iter::successors(Some(first), move |d| {
        let w = d.w * d.h / (3.0 * std::f64::consts::SQRT_2);
        let h = d.h.max((lambda * w / 4.0).sqrt()).min(w);
        Some(RectDims::new(w, h))
    });
    std::iter::once(RectDims::new(side, side)).chain(relays)
}

/// Nodes sorted by x for rectangle queries.
struct Index {
    nodes: Vec<Position>,
}

impl Index {
    fn new(nodes: &NodeSet) -> Self {
        let mut nodes = nodes.stored_positions().to_vec();
        nodes.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
        Index { nodes }
    }

    fn inside(&self, r: &RectSpec) -> Vec<Position> {
        let lo = self.nodes.partition_point(|p| p.x < r.x_lo);
        let hi = self.nodes.partition_point(|p| p.x <= r.x_hi);
        self.nodes[lo..hi].iter().copied().filter(|p| r.contains(*p)).collect()
    }

    fn nearest(&self, q: Position) -> Position {
        *self.nodes.iter().min_by(|a, b| a.dist(q).total_cmp(&b.dist(q))).expect("nonempty placement")
    }
}

struct Check {
    verified: u64,
    failed: u64,
    min_snr: f64,
    min_re: f64,
    worst_phase_err: f64,
    near_field_pairs: u64,
    failures: Vec<Position>,
}

fn check(senders: &[(Position, Phasor)], receivers: &[Position], params: &ChannelParams) -> Result<Check, EngineError> {
    let rx: Vec<_> =
        receivers.par_iter().map(|&r| superpose(senders, r, params).map(|rec| (r, rec))).collect::<Result<_, _>>()?;
    let mut c = Check {
        verified: receivers.len() as u64,
        failed: 0,
        min_snr: f64::INFINITY,
        min_re: f64::INFINITY,
        worst_phase_err: 0.0,
        near_field_pairs: 0,
        failures: Vec::new(),
    };
    for (r, rec) in rx {
        let a = rec.y * canonical_phasor(r.x, params.lambda).conj();
        let snr = rec.y.norm_sqr();
        c.min_snr = c.min_snr.min(snr);
        c.min_re = c.min_re.min(a.re);
        c.worst_phase_err = c.worst_phase_err.max(a.arg().abs());
        c.near_field_pairs += rec.near_field;
        if snr < params.tau {
            c.failed += 1;
            if c.failures.len() < MAX_LISTED_FAILURES {
                c.failures.push(r);
            }
        }
    }
    Ok(c)
}

/// Runs the random-placement protocol. Geometry that does not fit in the
/// region, a wavelength below the admitted minimum, or a target off the
/// source row are precondition errors.
pub fn run_random(config: &RandomConfig) -> Result<RunOutcome, EngineError> {
    let n = match config.nodes.model {
        PlacementModel::Random { n, .. } => n,
        _ => return Err(EngineError::Precondition("run_random needs a random placement".into())),
    };
    config.params.validate()?;
    let k = range_constant(&config.nodes, n);
    let lambda_min = min_random_lambda(n, k);
    if config.params.lambda < lambda_min * (1.0 - 1e-12) {
        return Err(EngineError::Precondition(format!(
            "lambda {} is below 3k/sqrt(ln n) = {lambda_min}",
            config.params.lambda
        )));
    }
    let (lambda, lambda_perturbed) = perturb_lambda(config.params.lambda);
    let mut warnings = Vec::new();
    if lambda_perturbed {
        warnings.push(format!("lambda {} is a whole number of grid units; using {lambda}", config.params.lambda));
    }
    let params = config.params.with_lambda(lambda);
    let amp = config.nodes.tx_amplitude;
    let region = (n as f64).sqrt();
    let index = Index::new(&config.nodes);
    let source = index.nearest(config.source);

    let dims: Vec<RectDims> =
        random_dims(n, k, lambda).take(crate::schedule::MAX_ROUNDS + 2).take_while(|d| d.w.is_finite()).collect();
    if dims.windows(2).skip(1).any(|w| w[1].w <= w[0].w) {
        return Err(EngineError::Precondition(format!(
            "rectangles do not grow: first height {} is at most 3*sqrt(2)",
            dims[1].h
        )));
    }
    let side = dims[0].w;
    let origin_x = source.x - side / 2.0;
    let distance = config.target.x - origin_x;
    if config.target.x <= source.x || (config.target.y - source.y).abs() > dims[1].h / 2.0 {
        return Err(EngineError::Precondition(format!(
            "target {} is not ahead of source {source} within its row band",
            config.target
        )));
    }
    let mut local = lay_out(dims.iter().copied(), distance, |_| DelayPolicy::PhaseCorrected)?;
    // the density guarantee needs an area of at least k² log n
    if let Some(last) = local.last_mut().filter(|r| r.round > 1) {
        last.x_lo = last.x_lo.min(last.x_hi - side);
    }
    let rects: Vec<RectSpec> = local
        .iter()
        .map(|r| {
            let h = r.height();
            RectSpec {
                x_lo: r.x_lo + origin_x,
                x_hi: r.x_hi + origin_x,
                y_lo: source.y - h / 2.0,
                y_hi: source.y + h / 2.0,
                ..*r
            }
        })
        .collect();
    for r in &rects {
        if r.x_lo < 0.0 || r.y_lo < 0.0 || r.x_hi > region || r.y_hi > region {
            return Err(EngineError::Precondition(format!(
                "rectangle {} [{:.2}, {:.2}] x [{:.2}, {:.2}] leaves the {region:.2}-wide region",
                r.round, r.x_lo, r.x_hi, r.y_lo, r.y_hi
            )));
        }
    }

    let required = (n as f64).ln().ceil() as u64;
    let mut trace = Vec::new();
    let (mut energy, mut elapsed, mut informed) = (0.0, 0.0, 0.0f64);
    let mut failure: Option<String> = None;
    let source_rect = RectSpec {
        round: 0,
        x_lo: source.x,
        x_hi: source.x,
        y_lo: source.y,
        y_hi: source.y,
        policy: DelayPolicy::PhaseCorrected,
    };
    let mut senders = vec![(source, canonical_phasor(source.x, lambda) * amp)];
    let mut sender_rect = source_rect;
    for (i, rect) in rects.iter().enumerate() {
        let receivers: Vec<Position> = index.inside(rect).into_iter().filter(|p| !sender_rect.contains(*p)).collect();
        let c = check(&senders, &receivers, &params)?;
        let dense = receivers.len() as u64 >= required;
        let pass = c.failed == 0 && dense;
        let round = trace.len() as u32 + 1;
        if !pass && failure.is_none() {
            let density = min_density(&config.nodes, side)?;
            let listed: Vec<String> = c.failures.iter().map(|p| p.to_string()).collect();
            failure = Some(format!(
                "round {round}: {} nodes in rectangle (need {required}), {} below threshold, min |y|^2 = {:.6}; region-wide min count in {side:.2}-squares = {} ({}); first failures: [{}]",
                receivers.len(),
                c.failed,
                c.min_snr,
                density.min_count,
                if density.pass { "dense" } else { "sparse" },
                listed.join(", ")
            ));
        }
        let added = senders.len() as f64 * amp * amp;
        energy += added;
        elapsed += (rect.x_hi - sender_rect.x_lo) * params.grid_spacing_m / params.light_speed + config.t0_processing_s;
        informed = [rect.x_lo, rect.x_hi]
            .into_iter()
            .flat_map(|x| [rect.y_lo, rect.y_hi].map(|y| Position::new(x, y).dist(source)))
            .fold(informed, f64::max);
        trace.push(RoundTrace {
            round,
            leg: 0,
            stage: if i == 0 { Stage::Preparation } else { Stage::Relay },
            sender_rect,
            receiver_rect: *rect,
            senders: senders.len() as u64,
            verified: c.verified,
            failed: c.failed,
            min_snr: c.min_snr,
            min_re: c.min_re,
            worst_phase_err: c.worst_phase_err,
            phase_budget: None,
            near_field_pairs: c.near_field_pairs,
            method: Method::BruteForce,
            energy_added: added,
            elapsed_time_s: elapsed,
            informed_distance: informed,
            pass,
        });
        if config.strict && failure.is_some() {
            break;
        }
        senders = index.inside(rect).into_iter().map(|p| (p, canonical_phasor(p.x, lambda) * amp)).collect();
        sender_rect = *rect;
    }

    let distance = source.dist(config.target);
    let velocity = if elapsed > 0.0 { distance * params.grid_spacing_m / elapsed } else { 0.0 };
    let relay_rounds = trace.len() as u32;
    let summary = RunSummary {
        success: failure.is_none(),
        failure,
        rounds_total: relay_rounds,
        line_rounds: 0,
        relay_rounds,
        distance,
        energy_total: energy,
        time_total_s: elapsed,
        velocity_m_per_s: velocity,
        velocity_over_c: velocity / params.light_speed,
    };
    Ok(RunOutcome { lambda, lambda_perturbed, warnings, trace, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::placement::make_random;

    fn config(n: usize, seed: u64) -> RandomConfig {
        let k = 3.0;
        let nodes = make_random(n, seed, k).unwrap();
        let params = ChannelParams::grid(min_random_lambda(n, k));
        RandomConfig::across(nodes, params, 1e-2)
    }

    #[test]
    fn dims_start_with_preparation_square() {
        let d: Vec<_> = random_dims(100_000, 3.0, 2.65).take(3).collect();
        let l = 100_000f64.log2();
        assert!((d[0].w - 3.0 * l.sqrt()).abs() < 1e-12);
        assert!((d[1].w - l.powf(1.5)).abs() < 1e-9);
        assert!((d[2].w - d[1].w * d[1].h / (3.0 * 2f64.sqrt())).abs() < 1e-9);
    }

    #[test]
    fn medium_run_reaches_target() {
        let out = run_random(&config(100_000, 1)).unwrap();
        assert!(out.summary.success, "{:?}", out.summary.failure);
        assert_eq!(out.trace[0].stage, Stage::Preparation);
        assert!(
            out.trace.last().unwrap().receiver_rect.contains(config(100_000, 1).target)
                || out.trace.last().unwrap().receiver_rect.x_hi >= config(100_000, 1).target.x
        );
    }

    #[test]
    fn small_region_is_a_precondition_error() {
        assert!(matches!(run_random(&config(100, 1)), Err(EngineError::Precondition(_))));
    }

    #[test]
    fn wavelength_below_hypothesis_rejected() {
        let mut c = config(100_000, 1);
        c.params = ChannelParams::grid(1.0);
        assert!(matches!(run_random(&c), Err(EngineError::Precondition(_))));
    }

    #[test]
    fn identical_seed_identical_trace() {
        let a = run_random(&config(20_000, 9));
        let b = run_random(&config(20_000, 9));
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
    }
}
