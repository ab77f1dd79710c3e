//! Phase alignment: the corrective delay a relay node waits before
//! re-transmitting, the geometric phase shift of an off-axis receiver, and
//! the error budget of self-synchronised relaying.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::phasor::{canonical_phasor, superpose, ChannelParams, Phasor, PhysicsError, Position, SenderSet};
use crate::schedule::{DelayPolicy, RectSpec};

/// Grid nodes of a rectangle transmitting `phase(node)`, ordered by column
/// then row. Positions are generated on demand.
pub struct GridRectSenders<F> {
    x0: i64,
    y0: i64,
    rows: usize,
    len: usize,
    phase: F,
}

impl<F: Fn(Position) -> Phasor + Sync> GridRectSenders<F> {
    pub fn new(rect: &RectSpec, phase: F) -> Self {
        let (x0, x1) = rect.grid_cols();
        let (y0, y1) = rect.grid_rows();
        let cols = (x1 - x0 + 1).max(0) as usize;
        let rows = (y1 - y0 + 1).max(0) as usize;
        GridRectSenders { x0, y0, rows, len: if rows == 0 { 0 } else { cols * rows }, phase }
    }

    #[inline]
    pub fn position(&self, index: usize) -> Position {
        let col = (index / self.rows) as i64;
        let row = (index % self.rows) as i64;
        Position::new((self.x0 + col) as f64, (self.y0 + row) as f64)
    }
}

impl<F: Fn(Position) -> Phasor + Sync> SenderSet for GridRectSenders<F> {
    fn len(&self) -> usize {
        self.len
    }

    #[inline]
    fn sender(&self, index: usize) -> (Position, Phasor) {
        let p = self.position(index);
        (p, (self.phase)(p))
    }
}

/// Nodes `x = 0..m` on the axis, each transmitting `amplitude` times its
/// canonical phasor.
pub struct LineSenders {
    pub m: usize,
    pub lambda: f64,
    pub amplitude: f64,
}

impl SenderSet for LineSenders {
    fn len(&self) -> usize {
        self.m
    }

    #[inline]
    fn sender(&self, index: usize) -> (Position, Phasor) {
        let x = index as f64;
        (Position::new(x, 0.0), canonical_phasor(x, self.lambda).scale(self.amplitude))
    }
}

/// Phase of `y` measured against the canonical phase of a receiver at
/// `r_x`, in (−π, π].
pub fn phase_error(y: Phasor, r_x: f64, lambda: f64) -> f64 {
    (y * canonical_phasor(r_x, lambda).conj()).arg()
}

/// Delay that rotates a received signal `y` onto the canonical phase of its
/// receiver: one carrier period plus the residual phase as a fraction of a
/// period. Re-transmitting `unit(y)·e^{−j2πfψ}` yields the canonical phasor.
pub fn delay_for(y: Phasor, r_x: f64, params: &ChannelParams) -> f64 {
    let f = params.carrier_freq_hz;
    1.0 / f + phase_error(y, r_x, params.lambda) / (TAU * f)
}

/// Phasor a node transmits after waiting `delay` on a received `y`.
pub fn apply_delay(y: Phasor, delay: f64, params: &ChannelParams) -> Phasor {
    let cycles = delay * params.carrier_freq_hz;
    y.unit() * Phasor::cis(-TAU * cycles.fract())
}

/// Corrective delay of a receiver `r` of the signal sent by `senders`.
pub fn psi<S: SenderSet + ?Sized>(r: Position, senders: &S, params: &ChannelParams) -> Result<f64, PhysicsError> {
    let y = superpose(senders, r, params)?.y;
    Ok(delay_for(y, r.x, params))
}

/// [`psi`] for a rectangle of grid senders transmitting `phase(node)`.
pub fn psi_rect<F: Fn(Position) -> Phasor + Sync>(
    r: Position,
    senders: &RectSpec,
    phase: F,
    params: &ChannelParams,
) -> Result<f64, PhysicsError> {
    psi(r, &GridRectSenders::new(senders, phase), params)
}

/// [`psi`] for the phase-aligned line `x = 0..m` of unit senders.
pub fn psi_line(r: Position, m: usize, params: &ChannelParams) -> Result<f64, PhysicsError> {
    let line = LineSenders { m, lambda: params.lambda, amplitude: 1.0 };
    psi(r, &line, params)
}

/// Extra phase `(2π/λ)(dist − dx)` a receiver at offset `(dx, dy)` from a
/// sender sees relative to an on-axis receiver at the same `dx`.
pub fn phase_shift_delta(s: Position, r: Position, lambda: f64) -> f64 {
    let dx = r.x - s.x;
    let dy = r.y - s.y;
    let d = dx.hypot(dy);
    TAU / lambda * crate::phasor::path_excess(dx, dy, d)
}

/// `π·dy²/(λ·dx)`, the upper bound on [`phase_shift_delta`].
pub fn phase_shift_bound(dx: f64, dy: f64, lambda: f64) -> f64 {
    PI * dy * dy / (lambda * dx)
}

/// `x²/2 − (√(1+x²) − 1)`, non-negative for all real `x`.
pub fn sqrt_expansion_gap(x: f64) -> f64 {
    let x2 = x * x;
    x2 / 2.0 - x2 / ((1.0 + x2).sqrt() + 1.0)
}

/// Phase budget of one self-synchronised relay round: `3/(2π·round²)`.
pub fn self_sync_round_error(round: usize) -> f64 {
    let k = round as f64;
    3.0 / (2.0 * PI * k * k)
}

/// Accumulated self-sync phase budget after `rounds` relay rounds.
pub fn self_sync_error_budget(rounds: usize) -> f64 {
    (1..=rounds).map(self_sync_round_error).sum()
}

/// Limit of [`self_sync_error_budget`], summed as a partial sum plus an
/// Euler–Maclaurin tail rather than taken from the closed form.
pub fn self_sync_budget_limit() -> f64 {
    let n = 1000usize;
    let head = self_sync_error_budget(n);
    // Σ_{k>n} 1/k² = 1/n − 1/(2n²) + 1/(6n³) − 1/(30n⁵) + …
    let nf = n as f64;
    let tail = 1.0 / nf - 1.0 / (2.0 * nf * nf) + 1.0 / (6.0 * nf.powi(3)) - 1.0 / (30.0 * nf.powi(5));
    head + 3.0 / (2.0 * PI) * tail
}

#[derive(Debug, Error, PartialEq)]
pub enum DelayError {
    #[error("delay {delay} s outside [0, {limit}) s")]
    OutOfRange { delay: f64, limit: f64 },
    #[error("self-sync rounds use one delay for every node")]
    NotConstant,
}

/// Per-node delays of one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayPlan {
    pub round: u32,
    pub policy: DelayPolicy,
    pub delays: Vec<f64>,
}

const DELAY_TOL_S: f64 = 1e-12;

impl DelayPlan {
    pub fn phase_corrected(round: u32, delays: Vec<f64>, params: &ChannelParams) -> Result<Self, DelayError> {
        let limit = 2.0 / params.carrier_freq_hz;
        if let Some(&delay) = delays.iter().find(|&&d| !(d >= -DELAY_TOL_S && d < limit)) {
            return Err(DelayError::OutOfRange { delay, limit });
        }
        Ok(DelayPlan { round, policy: DelayPolicy::PhaseCorrected, delays })
    }

    pub fn self_sync(round: u32, delays: Vec<f64>) -> Result<Self, DelayError> {
        if let Some(first) = delays.first() {
            if delays.iter().any(|d| (d - first).abs() > DELAY_TOL_S) {
                return Err(DelayError::NotConstant);
            }
        }
        Ok(DelayPlan { round, policy: DelayPolicy::SelfSync, delays })
    }
}

/// Phase shift allowance `alpha` for a `w × h` step at wavelength `lambda`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseShiftBound {
    pub h: f64,
    pub w: f64,
    pub lambda: f64,
    pub alpha: f64,
}

impl PhaseShiftBound {
    /// Smallest allowance the geometry certifies: `π·h²/(λ·w)`.
    pub fn for_rect(w: f64, h: f64, lambda: f64) -> Self {
        PhaseShiftBound { h, w, lambda, alpha: PI * h * h / (lambda * w) }
    }

    /// Whether `h² ≤ (α/π)·λ·w`.
    pub fn certifies(&self) -> bool {
        self.h * self.h <= self.alpha / PI * self.lambda * self.w * (1.0 + 1e-12)
    }
}
