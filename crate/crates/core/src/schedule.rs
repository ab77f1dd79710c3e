//! Relay-rectangle schedules for the two grid unicast protocols.
//!
//! Unicast I corrects every relay node's phase before it re-transmits and
//! grows rectangles as `w_{i+1} = w_i·h_i/(3√2)`, `h_i² = λ·w_i/4`.
//! Unicast II lets nodes re-transmit with the phase they received, so the
//! admissible height shrinks with the round index to keep the accumulated
//! phase error summable.
//!
//! Schedules are laid out in a leg-local frame: the message travels along
//! `+x`, rectangles grow upward from the axis `y = 0`, and rectangle 0
//! starts at `x = 0`. [`route_xy`] maps legs onto the grid.

use std::f64::consts::{E, PI};
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::phasor::Position;

const SQRT18: f64 = 4.242_640_687_119_285;
const REL_TOL: f64 = 1e-9;
pub const MAX_ROUNDS: usize = 64;

/// Upper-bound constant of the self-sync width recursion, valid from round 3.
pub const C3: f64 = 1.58;
pub const C5: f64 = E;
/// `18^{-1/4}`, the height recursion factor.
pub fn c6() -> f64 {
    18f64.powf(-0.25)
}

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("schedule needs more than {MAX_ROUNDS} rounds; widths are not growing")]
    RoundCap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    UnicastI,
    UnicastII,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelayPolicy {
    PhaseCorrected,
    SelfSync,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RectDims {
    pub w: f64,
    pub h: f64,
}

impl RectDims {
    pub fn new(w: f64, h: f64) -> Self {
        RectDims { w, h }
    }
}

/// An axis-aligned relay rectangle. Membership is closed on both ends, so a
/// grid node on the boundary belongs to the rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RectSpec {
    pub round: u32,
    pub x_lo: f64,
    pub x_hi: f64,
    pub y_lo: f64,
    pub y_hi: f64,
    pub policy: DelayPolicy,
}

impl RectSpec {
    pub fn width(&self) -> f64 {
        self.x_hi - self.x_lo
    }

    pub fn height(&self) -> f64 {
        self.y_hi - self.y_lo
    }

    pub fn contains(&self, p: Position) -> bool {
        p.x >= self.x_lo && p.x <= self.x_hi && p.y >= self.y_lo && p.y <= self.y_hi
    }

    /// Integer x coordinates of grid nodes inside, as an inclusive range.
    pub fn grid_cols(&self) -> (i64, i64) {
        (self.x_lo.ceil() as i64, self.x_hi.floor() as i64)
    }

    pub fn grid_rows(&self) -> (i64, i64) {
        (self.y_lo.ceil() as i64, self.y_hi.floor() as i64)
    }

    pub fn grid_node_count(&self) -> u64 {
        let (x0, x1) = self.grid_cols();
        let (y0, y1) = self.grid_rows();
        if x1 < x0 || y1 < y0 {
            return 0;
        }
        (x1 - x0 + 1) as u64 * (y1 - y0 + 1) as u64
    }

    /// Grid nodes inside, column by column.
    pub fn grid_nodes(&self) -> impl Iterator<Item = Position> {
        let (x0, x1) = self.grid_cols();
        let (y0, y1) = self.grid_rows();
        (x0..=x1).flat_map(move |x| (y0..=y1).map(move |y| Position::new(x as f64, y as f64)))
    }

    pub fn translated(&self, dx: f64, dy: f64) -> RectSpec {
        RectSpec { x_lo: self.x_lo + dx, x_hi: self.x_hi + dx, y_lo: self.y_lo + dy, y_hi: self.y_hi + dy, ..*self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub lambda: f64,
    pub w0: f64,
    pub h0: f64,
    pub variant: Variant,
    /// Distance from the left edge of rectangle 0 to the target.
    pub distance: f64,
}

impl ScheduleParams {
    pub fn unicast1(lambda: f64, w0: f64, distance: f64) -> Self {
        ScheduleParams { lambda, w0, h0: (lambda * w0 / 4.0).sqrt(), variant: Variant::UnicastI, distance }
    }

    pub fn unicast2(lambda: f64, w0: f64, distance: f64) -> Self {
        ScheduleParams {
            lambda,
            w0,
            h0: (3.0 * lambda * w0 / (2.0 * PI * PI)).sqrt(),
            variant: Variant::UnicastII,
            distance,
        }
    }

    pub fn new(variant: Variant, lambda: f64, w0: f64, distance: f64) -> Self {
        match variant {
            Variant::UnicastI => Self::unicast1(lambda, w0, distance),
            Variant::UnicastII => Self::unicast2(lambda, w0, distance),
        }
    }

    pub fn dims0(&self) -> RectDims {
        RectDims::new(self.w0, self.h0)
    }

    pub fn validate(&self) -> Result<(), ScheduleError> {
        let fail = |msg: String| Err(ScheduleError::Precondition(msg));
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return fail(format!("lambda must be positive, got {}", self.lambda));
        }
        if !(self.distance >= 0.0 && self.distance.is_finite()) {
            return fail(format!("distance must be non-negative, got {}", self.distance));
        }
        let min_w0 = min_w0(self.variant, self.lambda);
        if !(self.w0 >= min_w0 * (1.0 - REL_TOL)) {
            return fail(format!(
                "w0 = {} below minimum {:.6} for {:?} at lambda = {}",
                self.w0, min_w0, self.variant, self.lambda
            ));
        }
        let (min_h0, h0_sq) = match self.variant {
            Variant::UnicastI => (SQRT18, self.lambda * self.w0 / 4.0),
            Variant::UnicastII => (4.0 * SQRT18, 3.0 * self.lambda * self.w0 / (2.0 * PI * PI)),
        };
        if !(self.h0 >= min_h0 * (1.0 - REL_TOL)) {
            return fail(format!("h0 = {} below minimum {:.6}", self.h0, min_h0));
        }
        if (self.h0 * self.h0 - h0_sq).abs() > REL_TOL * h0_sq {
            return fail(format!("h0^2 = {} does not match the required {}", self.h0 * self.h0, h0_sq));
        }
        Ok(())
    }
}

/// Smallest admissible `w0` for a variant.
///
/// Unicast II uses `96π²e·c₂/λ` with `c₂ = 2^{c₄}`;
/// [`min_w0_unicast2_stated`] gives the smaller `c₄` form.
pub fn min_w0(variant: Variant, lambda: f64) -> f64 {
    match variant {
        Variant::UnicastI => 72.0 / lambda,
        Variant::UnicastII => 96.0 * PI * PI * E * c2() / lambda,
    }
}

pub fn min_w0_unicast2_stated(lambda: f64) -> f64 {
    96.0 * PI * PI * E * c4() / lambda
}

/// Partial sum of `Σ_{u≥0} log₂(2+u) / (3/2)^{u+1}`.
pub fn c4_partial(terms: usize) -> f64 {
    let mut sum = 0.0;
    let mut denom = 1.5;
    for u in 0..terms {
        sum += (2.0 + u as f64).log2() / denom;
        denom *= 1.5;
    }
    sum
}

/// Limit of [`c4_partial`]; the tail beyond 200 terms is below 1e-30.
pub fn c4() -> f64 {
    c4_partial(200)
}

pub fn c2() -> f64 {
    c4().exp2()
}

fn le(a: f64, b: f64) -> bool {
    a <= b + REL_TOL * b.abs().max(a.abs())
}

/// Checks one growth step `prev` (round `i`) → `next` (round `i+1`) and
/// returns the labels of every violated constraint.
pub fn validate_step(prev: RectDims, next: RectDims, i: usize, lambda: f64, variant: Variant) -> Vec<&'static str> {
    let mut violated = Vec::new();
    if !le(prev.h, next.h) {
        violated.push("h nondecreasing violated");
    }
    if !le(prev.w, next.w) {
        violated.push("w nondecreasing violated");
    }
    if !le(next.w, prev.w * prev.h / (3.0 * 2f64.sqrt())) {
        violated.push("w growth bound violated");
    }
    if !le(next.h, next.w) {
        violated.push("h ≤ w violated");
    }
    match variant {
        Variant::UnicastI => {
            if !le(next.h * next.h, lambda * next.w / 4.0) {
                violated.push("h² ≤ λw/4 violated");
            }
        }
        Variant::UnicastII => {
            let budget = |d: RectDims, round: usize| {
                let k = (round + 1) as f64;
                3.0 * lambda * d.w / (2.0 * PI * PI * k * k)
            };
            if !le(prev.h * prev.h, budget(prev, i)) || !le(next.h * next.h, budget(next, i + 1)) {
                violated.push("self-sync height budget violated");
            }
        }
    }
    violated
}

/// Closed-form Unicast I dimensions of round `i`.
pub fn closed_form_unicast1(i: usize, lambda: f64, w0: f64) -> Result<RectDims, ScheduleError> {
    let floor = 72.0 / lambda;
    if !(w0 >= floor) {
        return Err(ScheduleError::Precondition(format!(
            "base below 1, sequence shrinks (w0 = {w0} < 72/lambda = {floor})"
        )));
    }
    let h0 = (lambda * w0 / 4.0).sqrt();
    if i == 0 {
        return Ok(RectDims::new(w0, h0));
    }
    let growth = 1.5f64.powi(i as i32);
    let w = floor * (growth * (w0 / floor).ln()).exp();
    let h = SQRT18 * (growth * (h0 / SQRT18).ln()).exp();
    Ok(RectDims::new(w, h))
}

/// One step of the Unicast II recursion from round `i` to `i + 1`.
pub fn recursion_unicast2(prev: RectDims, i: usize, lambda: f64) -> RectDims {
    let k = (i + 1) as f64;
    let w = lambda.sqrt() / (12f64.sqrt() * PI * k) * prev.w.powf(1.5);
    let h = c6() * k / (k + 1.0) * prev.h.powf(1.5);
    RectDims::new(w, h)
}

/// Closed-form bounds `(lower, upper)` on the Unicast II width of round `i`.
///
/// Both share the factor `(√λ/(√12π))^{2·1.5^i−2}·w0^{1.5^i}`. The lower
/// bound uses `c₂^{−1.5^i}` and holds for every round. The upper bound uses
/// `C3^{−1.5^i}` and holds from round 3 on; earlier rounds divide by too few
/// factors for it to apply, so rounds 0..=2 report the exact width instead.
pub fn closed_form_bounds_unicast2(i: usize, lambda: f64, w0: f64) -> (f64, f64) {
    let growth = 1.5f64.powi(i as i32);
    let scale = lambda.sqrt() / (12f64.sqrt() * PI);
    let common = (2.0 * growth - 2.0) * scale.ln() + growth * w0.ln();
    let lower = (common - growth * c2().ln()).exp();
    let upper = if i >= 3 {
        (common - growth * C3.ln()).exp()
    } else {
        let mut dims = RectDims::new(w0, 1.0);
        for round in 0..i {
            dims = recursion_unicast2(dims, round, lambda);
        }
        dims.w
    };
    (lower, upper)
}

/// Raw `C3` upper-bound form, without the round-3 cutover.
pub fn c3_form_unicast2(i: usize, lambda: f64, w0: f64) -> f64 {
    let growth = 1.5f64.powi(i as i32);
    let scale = lambda.sqrt() / (12f64.sqrt() * PI);
    ((2.0 * growth - 2.0) * scale.ln() + growth * w0.ln() - growth * C3.ln()).exp()
}

/// Round-count bound for Unicast I over `distance`:
/// `⌈log_{3/2} log_{λw0/72}(distance·λ/72)⌉ + 2`.
pub fn unicast1_round_bound(lambda: f64, w0: f64, distance: f64) -> usize {
    let base = lambda * w0 / 72.0;
    let reach = distance * lambda / 72.0;
    if reach <= base || base <= 1.0 {
        return 2;
    }
    let inner = reach.ln() / base.ln();
    (inner.ln() / 1.5f64.ln()).ceil().max(0.0) as usize + 2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RectSchedule {
    pub params: ScheduleParams,
    /// Rectangle 0 followed by one rectangle per relay round.
    pub rects: Vec<RectSpec>,
}

impl RectSchedule {
    pub fn relay_rounds(&self) -> usize {
        self.rects.len().saturating_sub(1)
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for r in &self.rects {
            let record = ScheduleRecord {
                round: r.round,
                x_lo: r.x_lo,
                x_hi: r.x_hi,
                y_lo: r.y_lo,
                y_hi: r.y_hi,
                w: r.width(),
                h: r.height(),
                policy: r.policy,
            };
            serde_json::to_writer(&mut out, &record)?;
            writeln!(out)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleRecord {
    pub round: u32,
    pub x_lo: f64,
    pub x_hi: f64,
    pub y_lo: f64,
    pub y_hi: f64,
    pub w: f64,
    pub h: f64,
    pub policy: DelayPolicy,
}

/// Lays rectangles end to end with a gap of `w_i` before rectangle `i`,
/// stopping at the first one that reaches `distance`. That one is clipped
/// to end at the target, keeping at least one grid unit of width.
pub fn lay_out<I>(dims: I, distance: f64, policy: impl Fn(u32) -> DelayPolicy) -> Result<Vec<RectSpec>, ScheduleError>
where
    I: IntoIterator<Item = RectDims>,
{
    let mut rects: Vec<RectSpec> = Vec::new();
    let mut end = 0.0;
    for (round, d) in dims.into_iter().enumerate() {
        if round > MAX_ROUNDS {
            return Err(ScheduleError::RoundCap);
        }
        let round = round as u32;
        let mut x_lo = if round == 0 { 0.0 } else { end + d.w };
        let mut x_hi = x_lo + d.w;
        let last = x_hi >= distance;
        if last && round > 0 {
            x_hi = distance;
            x_lo = x_lo.min(distance - 1.0);
        }
        rects.push(RectSpec { round, x_lo, x_hi, y_lo: 0.0, y_hi: d.h, policy: policy(round) });
        end = x_hi;
        if last {
            return Ok(rects);
        }
    }
    Err(ScheduleError::RoundCap)
}

/// Dimension sequence of a variant, starting at round 0. Infinite.
pub fn dims_sequence(params: &ScheduleParams) -> Box<dyn Iterator<Item = RectDims>> {
    let p = *params;
    match p.variant {
        Variant::UnicastI => Box::new((0..).map(move |i| closed_form_unicast1(i, p.lambda, p.w0).expect("validated"))),
        Variant::UnicastII => Box::new(
            std::iter::successors(Some((0usize, p.dims0())), move |&(i, d)| {
                Some((i + 1, recursion_unicast2(d, i, p.lambda)))
            })
            .map(|(_, d)| d),
        ),
    }
}

pub fn build_schedule(params: ScheduleParams) -> Result<RectSchedule, ScheduleError> {
    params.validate()?;
    let variant = params.variant;
    let dims: Vec<RectDims> = dims_sequence(&params).take(MAX_ROUNDS + 2).collect();
    let mut rects = lay_out(dims.iter().copied(), params.distance, |round| match (variant, round) {
        (Variant::UnicastII, r) if r > 0 => DelayPolicy::SelfSync,
        _ => DelayPolicy::PhaseCorrected,
    })?;
    // a final rectangle pulled in to the target sits closer to its senders
    // than planned; keep its height within the phase budget of that gap
    if let [.., prev, last] = rects.as_mut_slice() {
        let gap = last.x_lo - prev.x_hi;
        if gap < dims[last.round as usize].w {
            last.y_hi = last.y_hi.min((params.lambda * gap / 4.0).sqrt());
        }
    }
    for i in 1..rects.len() {
        let violated = validate_step(dims[i - 1], dims[i], i - 1, params.lambda, variant);
        if !violated.is_empty() {
            return Err(ScheduleError::Precondition(format!("step {}->{i}: {}", i - 1, violated.join(", "))));
        }
    }
    Ok(RectSchedule { params, rects })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    X,
    Y,
}

/// One straight leg of a route. Local coordinates `(u, v)` map to the grid as
/// `origin + forward·u·axis + side·v·perp`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leg {
    pub axis: Axis,
    pub origin: Position,
    pub forward: f64,
    pub side: f64,
    /// Grid distance from the leg origin to its end.
    pub length: f64,
}

impl Leg {
    pub fn to_global(&self, p: Position) -> Position {
        let along = self.forward * p.x;
        let across = self.side * p.y;
        match self.axis {
            Axis::X => Position::new(self.origin.x + along, self.origin.y + across),
            Axis::Y => Position::new(self.origin.x + across, self.origin.y + along),
        }
    }

    pub fn rect_to_global(&self, r: &RectSpec) -> RectSpec {
        let a = self.to_global(Position::new(r.x_lo, r.y_lo));
        let b = self.to_global(Position::new(r.x_hi, r.y_hi));
        RectSpec { x_lo: a.x.min(b.x), x_hi: a.x.max(b.x), y_lo: a.y.min(b.y), y_hi: a.y.max(b.y), ..*r }
    }

    /// Inverse of [`Leg::to_global`].
    pub fn to_local(&self, g: Position) -> Position {
        let (along, across) = match self.axis {
            Axis::X => (g.x - self.origin.x, g.y - self.origin.y),
            Axis::Y => (g.y - self.origin.y, g.x - self.origin.x),
        };
        Position::new(self.forward * along, self.side * across)
    }

    pub fn rect_to_local(&self, r: &RectSpec) -> RectSpec {
        let a = self.to_local(Position::new(r.x_lo, r.y_lo));
        let b = self.to_local(Position::new(r.x_hi, r.y_hi));
        RectSpec { x_lo: a.x.min(b.x), x_hi: a.x.max(b.x), y_lo: a.y.min(b.y), y_hi: a.y.max(b.y), ..*r }
    }

    pub fn end(&self) -> Position {
        self.to_global(Position::new(self.length, 0.0))
    }
}

/// Splits a route into an x leg and a y leg through the turn point
/// `(target.x, source.y)`. Zero-length legs are omitted. Rectangles expand
/// toward the grid centre: `grid` is `(cols, rows)` of the node grid.
pub fn route_xy(source: Position, target: Position, grid: (u64, u64)) -> Vec<Leg> {
    let (cols, rows) = (grid.0 as f64, grid.1 as f64);
    let toward_centre = |coord: f64, extent: f64| if coord <= (extent - 1.0) / 2.0 { 1.0 } else { -1.0 };
    let mut legs = Vec::new();
    let dx = target.x - source.x;
    if dx != 0.0 {
        legs.push(Leg {
            axis: Axis::X,
            origin: source,
            forward: dx.signum(),
            side: toward_centre(source.y, rows),
            length: dx.abs(),
        });
    }
    let dy = target.y - source.y;
    if dy != 0.0 {
        legs.push(Leg {
            axis: Axis::Y,
            origin: Position::new(target.x, source.y),
            forward: dy.signum(),
            side: toward_centre(target.x, cols),
            length: dy.abs(),
        });
    }
    legs
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }

    /// Iterates `w ← w·h/(3√2)`, `h ← √(λw/4)` from round 0.
    fn unicast1_oracle(i: usize, lambda: f64, w0: f64) -> RectDims {
        let mut w = w0;
        let mut h = (lambda * w0 / 4.0).sqrt();
        for _ in 0..i {
            w = w * h / (3.0 * 2f64.sqrt());
            h = (lambda * w / 4.0).sqrt();
        }
        RectDims::new(w, h)
    }

    #[test]
    fn unicast1_closed_form_examples() {
        let d0 = closed_form_unicast1(0, 0.1, 1440.0).unwrap();
        assert_eq!(d0, RectDims::new(1440.0, 6.0));
        let d1 = closed_form_unicast1(1, 0.1, 1440.0).unwrap();
        assert!(rel(d1.w, 720.0 * 2f64.powf(1.5)) < 1e-12);
        assert!(rel(d1.h, SQRT18 * (6.0 / SQRT18).powf(1.5)) < 1e-12);
        assert!((d1.w - 2036.468).abs() < 1e-3 && (d1.h - 7.1352).abs() < 1e-4);
        for i in 0..6 {
            let d = closed_form_unicast1(i, 0.1, 720.0).unwrap();
            assert!(rel(d.w, 720.0) < 1e-12, "fixed point drifted at {i}");
        }
        assert!(closed_form_unicast1(1, 0.1, 700.0).is_err());
    }

    #[test]
    fn unicast1_closed_form_matches_recursion() {
        for &lambda in &[0.05, 0.1, 0.25, 0.5] {
            for mult in [1.0, 2.0, 4.0] {
                let w0 = mult * 72.0 / lambda;
                for i in 0..=8 {
                    let c = closed_form_unicast1(i, lambda, w0).unwrap();
                    let o = unicast1_oracle(i, lambda, w0);
                    assert!(rel(c.w, o.w) < 1e-9 && rel(c.h, o.h) < 1e-9, "λ={lambda} w0={w0} i={i}");
                }
            }
        }
    }

    #[test]
    fn unicast1_steps_validate() {
        for &lambda in &[0.05, 0.1, 0.25, 0.5] {
            for mult in [1.0, 2.0, 4.0] {
                let w0 = mult * 72.0 / lambda;
                for i in 0..8 {
                    let a = closed_form_unicast1(i, lambda, w0).unwrap();
                    let b = closed_form_unicast1(i + 1, lambda, w0).unwrap();
                    let v = validate_step(a, b, i, lambda, Variant::UnicastI);
                    assert!(v.is_empty(), "λ={lambda} w0={w0} i={i}: {v:?}");
                }
            }
        }
    }

    #[test]
    fn validate_step_reports_violations() {
        let prev = RectDims::new(10.0, 6.0);
        let next = RectDims::new(10.0, 12.0);
        assert!(validate_step(prev, next, 0, 0.1, Variant::UnicastI).contains(&"h ≤ w violated"));
        let v = validate_step(RectDims::new(341.0, 6.0), RectDims::new(482.0, 7.0), 0, 0.1, Variant::UnicastI);
        assert_eq!(v, vec!["h² ≤ λw/4 violated"]);
    }

    #[test]
    fn c4_series_and_c2() {
        assert!((c4_partial(60) - 3.586).abs() < 1e-3);
        assert!((c2() - 12.011).abs() < 1e-2);
        assert!(c4_partial(10) < c4_partial(20));
    }

    #[test]
    fn unicast2_threshold_at_lambda_two() {
        let w = min_w0(Variant::UnicastII, 2.0);
        assert!(rel(w, 96.0 * PI * PI * E * 2f64.powf(c4_partial(300)) / 2.0) < 1e-14);
        assert_eq!(w.ceil(), 15468.0);
        assert!(min_w0_unicast2_stated(2.0) < w);
    }

    #[test]
    fn unicast2_height_fixed_point() {
        let h0 = 4.0 * SQRT18;
        let d = recursion_unicast2(RectDims::new(1e6, h0), 0, 2.0);
        assert!(rel(d.h, h0) < 1e-12);
    }

    #[test]
    fn unicast2_first_width() {
        let d = recursion_unicast2(RectDims::new(15467.0, 1.0), 0, 2.0);
        let oracle = 2f64.sqrt() / (12f64.sqrt() * PI) * 15467f64 * 15467f64.sqrt();
        assert!(rel(d.w, oracle) < 1e-12);
        assert!((d.w / 2.5e5 - 1.0).abs() < 0.01, "{}", d.w);
    }

    #[test]
    fn unicast2_width_decays_for_fixed_input() {
        let prev = RectDims::new(100.0, 1.0);
        let widths: Vec<f64> = [1, 10, 100, 1000].iter().map(|&i| recursion_unicast2(prev, i, 2.0).w).collect();
        assert!(widths.windows(2).all(|p| p[1] < p[0]));
    }

    #[test]
    fn unicast2_sandwich() {
        let (lambda, w0) = (2.0, 15467.0);
        let mut d = RectDims::new(w0, 1.0);
        for i in 0..=8 {
            let (lo, hi) = closed_form_bounds_unicast2(i, lambda, w0);
            assert!(lo <= d.w * (1.0 + 1e-12) && d.w <= hi * (1.0 + 1e-12), "i={i}: {lo} {} {hi}", d.w);
            d = recursion_unicast2(d, i, lambda);
        }
        assert!(c3_form_unicast2(1, lambda, w0) < closed_form_bounds_unicast2(1, lambda, w0).1);
    }

    #[test]
    fn unicast2_recursion_holds_constraints() {
        let lambda = 2.0;
        let params = ScheduleParams::unicast2(lambda, min_w0(Variant::UnicastII, lambda).ceil(), 1e12);
        params.validate().unwrap();
        let dims: Vec<_> = dims_sequence(&params).take(6).collect();
        for i in 0..5 {
            let v = validate_step(dims[i], dims[i + 1], i, lambda, Variant::UnicastII);
            assert!(v.is_empty(), "i={i}: {v:?}");
        }
        assert!((dims[0].h - 68.6).abs() < 0.1);
        assert!((dims[1].h - 138.0).abs() < 1.0);
    }

    #[test]
    fn schedule_for_one_million() {
        let s = build_schedule(ScheduleParams::unicast1(0.1, 1440.0, 1e6)).unwrap();
        assert_eq!(s.relay_rounds(), 6);
        assert!(s.rects.len() <= unicast1_round_bound(0.1, 1440.0, 1e6) + 1);
        let last = s.rects.last().unwrap();
        assert_eq!(last.x_hi, 1e6);
        for pair in s.rects.windows(2) {
            let gap = pair[1].x_lo - pair[0].x_hi;
            if pair[1].round as usize + 1 < s.rects.len() {
                assert!(rel(gap, pair[1].width()) < 1e-12);
            }
        }
        let mut end = 1440.0;
        for (i, r) in s.rects.iter().enumerate().skip(1).take(5) {
            end += 2.0 * 720.0 * 2f64.powf(1.5f64.powi(i as i32));
            assert!(rel(r.x_hi, end) < 1e-12, "round {i}");
        }
    }

    #[test]
    fn oracle_enumeration_matches_layout() {
        let (lambda, w0) = (0.1, 1440.0);
        for d in [1e4, 1e5, 1e6, 1e7] {
            let s = build_schedule(ScheduleParams::unicast1(lambda, w0, d)).unwrap();
            let mut end = w0;
            let mut rounds = 0;
            while end < d {
                rounds += 1;
                end += 2.0 * unicast1_oracle(rounds, lambda, w0).w;
            }
            assert_eq!(s.relay_rounds(), rounds, "d={d}");
        }
    }

    #[test]
    fn degenerate_schedules() {
        let s = build_schedule(ScheduleParams::unicast1(0.1, 1440.0, 1440.0)).unwrap();
        assert_eq!(s.relay_rounds(), 0);
        let s = build_schedule(ScheduleParams::unicast1(0.1, 1440.0, 100.0)).unwrap();
        assert_eq!(s.rects.len(), 1);
        let low = ScheduleParams::unicast2(2.0, 1000.0, 1e6);
        assert!(matches!(build_schedule(low), Err(ScheduleError::Precondition(_))));
        let stuck = ScheduleParams::unicast1(0.1, 720.0, 1e9);
        assert_eq!(build_schedule(stuck), Err(ScheduleError::RoundCap));
    }

    #[test]
    fn clipping_keeps_target_inside() {
        // target lands in the gap before rectangle 2
        let d = 5513.0 + 1000.0;
        let s = build_schedule(ScheduleParams::unicast1(0.1, 1440.0, d)).unwrap();
        let last = s.rects.last().unwrap();
        assert_eq!((last.x_lo, last.x_hi), (d - 1.0, d));
        assert!(last.contains(Position::new(d, 0.0)));
    }

    #[test]
    fn unicast2_policies() {
        let lambda = 2.0;
        let s = build_schedule(ScheduleParams::unicast2(lambda, 15468.0, 1e10)).unwrap();
        assert_eq!(s.rects[0].policy, DelayPolicy::PhaseCorrected);
        assert!(s.rects[1..].iter().all(|r| r.policy == DelayPolicy::SelfSync));
    }

    #[test]
    fn rect_membership_is_closed() {
        let r = RectSpec { round: 0, x_lo: 1.0, x_hi: 3.0, y_lo: 0.0, y_hi: 2.0, policy: DelayPolicy::PhaseCorrected };
        assert_eq!(r.grid_node_count(), 9);
        assert_eq!(r.grid_nodes().count(), 9);
        assert!(r.contains(Position::new(3.0, 2.0)));
        let frac = RectSpec { x_lo: 0.5, x_hi: 2.5, ..r };
        assert_eq!(frac.grid_cols(), (1, 2));
    }

    #[test]
    fn routes() {
        let grid = (2_000_000, 2_000_000);
        let o = Position::new(0.0, 0.0);
        let legs = route_xy(o, Position::new(1e6, 0.0), grid);
        assert_eq!(legs.len(), 1);
        assert_eq!(legs[0].axis, Axis::X);
        let legs = route_xy(o, Position::new(0.0, 1e6), grid);
        assert_eq!(legs.len(), 1);
        assert_eq!(legs[0].axis, Axis::Y);
        assert_eq!(legs[0].end(), Position::new(0.0, 1e6));
        let legs = route_xy(o, Position::new(1e6, 1e6), grid);
        assert_eq!(legs.len(), 2);
        assert_eq!(legs[1].origin, Position::new(1e6, 0.0));
        assert_eq!(legs[1].end(), Position::new(1e6, 1e6));
        assert!(route_xy(o, o, grid).is_empty());
        // high side of the grid expands downward
        let legs = route_xy(Position::new(0.0, 1_999_999.0), Position::new(10.0, 1_999_999.0), grid);
        assert_eq!(legs[0].side, -1.0);
        let r = RectSpec { round: 1, x_lo: 2.0, x_hi: 5.0, y_lo: 0.0, y_hi: 3.0, policy: DelayPolicy::SelfSync };
        let g = legs[0].rect_to_global(&r);
        assert_eq!((g.y_lo, g.y_hi), (1_999_996.0, 1_999_999.0));
        assert_eq!(legs[0].rect_to_local(&g), r);
        let up = route_xy(Position::new(7.0, 9.0), Position::new(3.0, 2.0), (20, 20));
        for leg in &up {
            let p = Position::new(4.0, 1.0);
            assert_eq!(leg.to_local(leg.to_global(p)), p);
        }
    }

    #[test]
    fn clipped_final_rectangle_keeps_phase_budget() {
        let s = build_schedule(ScheduleParams::unicast1(0.1, 1440.0, 1e6 - 9.0 * 1440.0)).unwrap();
        let [.., prev, last] = s.rects.as_slice() else { panic!("short schedule") };
        let gap = last.x_lo - prev.x_hi;
        assert!(last.height() * last.height() <= 0.1 * gap / 4.0 * (1.0 + 1e-12));
        assert!(last.height() < closed_form_unicast1(last.round as usize, 0.1, 1440.0).unwrap().h);
    }

    #[test]
    fn two_leg_round_count() {
        let p = ScheduleParams::unicast1(0.1, 1440.0, 1e6);
        let one = build_schedule(p).unwrap().relay_rounds();
        let legs = route_xy(Position::new(0.0, 0.0), Position::new(1e6, 1e6), (2_000_001, 2_000_001));
        let total: usize = legs
            .iter()
            .map(|l| build_schedule(ScheduleParams { distance: l.length, ..p }).unwrap().relay_rounds())
            .sum();
        assert!(total <= 2 * one + 2);
    }

    #[test]
    fn jsonl_export() {
        let s = build_schedule(ScheduleParams::unicast1(0.1, 1440.0, 1e5)).unwrap();
        let mut buf = Vec::new();
        s.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), s.rects.len());
        let rec: ScheduleRecord = serde_json::from_str(lines[1]).unwrap();
        assert_eq!(rec.round, 1);
        assert_eq!(rec.policy, DelayPolicy::PhaseCorrected);
        assert!(lines[0].contains("\"policy\":\"phase_corrected\""));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn unicast1_monotone(lambda in 0.05f64..0.5, mult in 1.0f64..8.0, i in 0usize..8) {
                let w0 = mult * 72.0 / lambda;
                let a = closed_form_unicast1(i, lambda, w0).unwrap();
                let b = closed_form_unicast1(i + 1, lambda, w0).unwrap();
                prop_assert!(b.w >= a.w && b.h >= a.h);
            }
        }
    }
}
