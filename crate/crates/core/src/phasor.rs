//! Free-space channel physics: complex gains, superposition and the
//! reception rule.
//!
//! A receiver at `r` hears `y = Σ h(s_i, r) · x_i` where
//! `h(s, r) = exp(-j·2π·dist/λ) / dist`. Reception succeeds iff `|y|² ≥ τ`.
//!
//! All sums go through [`pairwise_sum`], a balanced binary tree over the
//! sender index. The tree shape depends only on the number of terms, so the
//! result is bit-identical for any rayon worker count.

use std::f64::consts::TAU;
use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhysicsError {
    #[error("zero distance between sender {sender} and receiver {receiver}")]
    ZeroDistance { sender: Position, receiver: Position },
    #[error("invalid channel parameter {name} = {value}: {reason}")]
    InvalidParam { name: &'static str, value: f64, reason: &'static str },
}

/// Complex baseband amplitude.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Phasor {
    pub re: f64,
    pub im: f64,
}

impl Phasor {
    pub const ZERO: Phasor = Phasor { re: 0.0, im: 0.0 };
    pub const ONE: Phasor = Phasor { re: 1.0, im: 0.0 };

    #[inline]
    pub const fn new(re: f64, im: f64) -> Self {
        Phasor { re, im }
    }

    /// `e^{jθ}`.
    #[inline]
    pub fn cis(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Phasor { re: c, im: s }
    }

    #[inline]
    pub fn from_polar(magnitude: f64, theta: f64) -> Self {
        Phasor::cis(theta).scale(magnitude)
    }

    #[inline]
    pub fn norm_sqr(self) -> f64 {
        self.re * self.re + self.im * self.im
    }

    #[inline]
    pub fn abs(self) -> f64 {
        self.re.hypot(self.im)
    }

    /// Principal argument in (−π, π].
    #[inline]
    pub fn arg(self) -> f64 {
        self.im.atan2(self.re)
    }

    #[inline]
    pub fn conj(self) -> Self {
        Phasor { re: self.re, im: -self.im }
    }

    #[inline]
    pub fn scale(self, k: f64) -> Self {
        Phasor { re: self.re * k, im: self.im * k }
    }

    /// Unit phasor with the same argument; zero stays zero.
    pub fn unit(self) -> Self {
        let m = self.abs();
        if m == 0.0 {
            Phasor::ZERO
        } else {
            self.scale(1.0 / m)
        }
    }

    pub fn is_finite(self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
}

impl Add for Phasor {
    type Output = Phasor;
    #[inline]
    fn add(self, o: Phasor) -> Phasor {
        Phasor { re: self.re + o.re, im: self.im + o.im }
    }
}

impl AddAssign for Phasor {
    #[inline]
    fn add_assign(&mut self, o: Phasor) {
        self.re += o.re;
        self.im += o.im;
    }
}

impl Sub for Phasor {
    type Output = Phasor;
    #[inline]
    fn sub(self, o: Phasor) -> Phasor {
        Phasor { re: self.re - o.re, im: self.im - o.im }
    }
}

impl Mul for Phasor {
    type Output = Phasor;
    #[inline]
    fn mul(self, o: Phasor) -> Phasor {
        Phasor { re: self.re * o.re - self.im * o.im, im: self.re * o.im + self.im * o.re }
    }
}

impl Mul<f64> for Phasor {
    type Output = Phasor;
    #[inline]
    fn mul(self, k: f64) -> Phasor {
        self.scale(k)
    }
}

impl Neg for Phasor {
    type Output = Phasor;
    fn neg(self) -> Phasor {
        Phasor { re: -self.re, im: -self.im }
    }
}

impl fmt::Display for Phasor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{:+}j", self.re, self.im)
    }
}

/// Point in the plane, in grid units.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    #[inline]
    pub const fn new(x: f64, y: f64) -> Self {
        Position { x, y }
    }

    #[inline]
    pub fn dist(self, other: Position) -> f64 {
        (other.x - self.x).hypot(other.y - self.y)
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    /// Carrier wavelength in grid units.
    pub lambda: f64,
    /// SNR threshold on `|y|²`.
    pub tau: f64,
    pub carrier_freq_hz: f64,
    /// Propagation speed in m/s.
    pub light_speed: f64,
    pub grid_spacing_m: f64,
}

impl ChannelParams {
    /// Grid-model defaults: τ = 1, 1 m spacing, `f = c / (λ · spacing)`.
    pub fn grid(lambda: f64) -> Self {
        ChannelParams {
            lambda,
            tau: 1.0,
            carrier_freq_hz: SPEED_OF_LIGHT / lambda,
            light_speed: SPEED_OF_LIGHT,
            grid_spacing_m: 1.0,
        }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.carrier_freq_hz = self.light_speed / (lambda * self.grid_spacing_m);
        self.lambda = lambda;
        self
    }

    pub fn validate(&self) -> Result<(), PhysicsError> {
        let check = |name, value: f64| {
            if value.is_finite() && value > 0.0 {
                Ok(())
            } else {
                Err(PhysicsError::InvalidParam { name, value, reason: "must be finite and positive" })
            }
        };
        check("lambda", self.lambda)?;
        check("tau", self.tau)?;
        check("carrier_freq_hz", self.carrier_freq_hz)?;
        check("light_speed", self.light_speed)?;
        check("grid_spacing_m", self.grid_spacing_m)
    }

    /// Grid runs additionally fix τ = 1.
    pub fn validate_grid(&self) -> Result<(), PhysicsError> {
        self.validate()?;
        if self.tau != 1.0 {
            return Err(PhysicsError::InvalidParam { name: "tau", value: self.tau, reason: "grid model uses tau = 1" });
        }
        Ok(())
    }

    /// One carrier period in seconds.
    pub fn period_s(&self) -> f64 {
        1.0 / self.carrier_freq_hz
    }
}

/// Fractional part of `a / b` in [0, 1), with the quotient remainder taken
/// by an fma so that large `a / b` keeps its sub-cycle precision.
#[inline]
pub fn frac_cycles(a: f64, b: f64) -> f64 {
    let q = (a / b).floor();
    let mut rem = (-q).mul_add(b, a);
    if rem < 0.0 {
        rem += b;
    } else if rem >= b {
        rem -= b;
    }
    let f = rem / b;
    if f >= 1.0 {
        0.0
    } else {
        f
    }
}

/// Canonical carrier phasor of a node at `x`: `e^{-j·2π·x/λ}`.
#[inline]
pub fn canonical_phasor(x: f64, lambda: f64) -> Phasor {
    Phasor::cis(-TAU * frac_cycles(x, lambda))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelGain {
    pub gain: Phasor,
    /// dist ≤ 2λ: the far-field assumption does not hold for this pair.
    pub near_field: bool,
}

/// Baseband channel gain `e^{-j·2π·dist/λ} / dist`.
pub fn channel_gain(s: Position, r: Position, params: &ChannelParams) -> Result<ChannelGain, PhysicsError> {
    let d = s.dist(r);
    if d == 0.0 {
        return Err(PhysicsError::ZeroDistance { sender: s, receiver: r });
    }
    Ok(ChannelGain { gain: raw_gain(d, params.lambda), near_field: d <= 2.0 * params.lambda })
}

#[inline]
fn raw_gain(d: f64, lambda: f64) -> Phasor {
    Phasor::cis(-TAU * frac_cycles(d, lambda)).scale(1.0 / d)
}

/// Envelope gain: the channel gain with the canonical phase offset
/// `e^{-j·2π·(r_x − s_x)/λ}` divided out.
///
/// `channel_gain(s, r) · canonical(s_x) == envelope_gain(s, r) · canonical(r_x)`.
/// The path excess `dist − dx` is computed as `dy² / (dist + dx)` when the
/// receiver lies ahead of the sender, which keeps full relative precision
/// at distances of 10¹² grid units.
#[inline]
pub fn envelope_gain(s: Position, r: Position, lambda: f64) -> Phasor {
    let dx = r.x - s.x;
    let dy = r.y - s.y;
    let d = dx.hypot(dy);
    let excess = path_excess(dx, dy, d);
    Phasor::cis(-TAU * frac_cycles(excess, lambda)).scale(1.0 / d)
}

/// `dist − dx` without cancellation.
#[inline]
pub fn path_excess(dx: f64, dy: f64, d: f64) -> f64 {
    if dx > 0.0 {
        dy * dy / (d + dx)
    } else {
        d - dx
    }
}

#[inline]
pub fn received_power(y: Phasor) -> f64 {
    y.norm_sqr()
}

#[inline]
pub fn can_receive(y: Phasor, params: &ChannelParams) -> bool {
    received_power(y) >= params.tau
}

/// Ordered collection of transmitting nodes. Index order is ascending
/// `(x, then y)`; the summation tree is laid over this order.
pub trait SenderSet: Sync {
    fn len(&self) -> usize;
    fn sender(&self, index: usize) -> (Position, Phasor);

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl SenderSet for [(Position, Phasor)] {
    fn len(&self) -> usize {
        <[(Position, Phasor)]>::len(self)
    }
    fn sender(&self, index: usize) -> (Position, Phasor) {
        self[index]
    }
}

impl SenderSet for Vec<(Position, Phasor)> {
    fn len(&self) -> usize {
        Vec::len(self)
    }
    fn sender(&self, index: usize) -> (Position, Phasor) {
        self[index]
    }
}

const LEAF: usize = 8;
const PAR_CUTOFF: usize = 1 << 15;

/// Balanced pairwise sum of `term(i)` for `i in 0..n`.
///
/// Leaves of at most 8 terms are added left to right; the split point of a
/// range is always `lo + len / 2`, so the tree depends on `n` alone.
pub fn pairwise_sum<F>(n: usize, term: &F) -> Phasor
where
    F: Fn(usize) -> Phasor + Sync,
{
    sum_range(0, n, term)
}

fn sum_range<F>(lo: usize, hi: usize, term: &F) -> Phasor
where
    F: Fn(usize) -> Phasor + Sync,
{
    let len = hi - lo;
    if len <= LEAF {
        let mut acc = Phasor::ZERO;
        for i in lo..hi {
            acc += term(i);
        }
        return acc;
    }
    let mid = lo + len / 2;
    if len >= PAR_CUTOFF {
        let (a, b) = rayon::join(|| sum_range(lo, mid, term), || sum_range(mid, hi, term));
        a + b
    } else {
        sum_range(lo, mid, term) + sum_range(mid, hi, term)
    }
}

/// Fallible variant of [`pairwise_sum`] with the same tree shape. The first
/// error in index order is not guaranteed; any error aborts the sum.
pub fn try_pairwise_sum<F, E>(n: usize, term: &F) -> Result<Phasor, E>
where
    F: Fn(usize) -> Result<Phasor, E> + Sync,
    E: Send,
{
    try_sum_range(0, n, term)
}

fn try_sum_range<F, E>(lo: usize, hi: usize, term: &F) -> Result<Phasor, E>
where
    F: Fn(usize) -> Result<Phasor, E> + Sync,
    E: Send,
{
    let len = hi - lo;
    if len <= LEAF {
        let mut acc = Phasor::ZERO;
        for i in lo..hi {
            acc += term(i)?;
        }
        return Ok(acc);
    }
    let mid = lo + len / 2;
    if len >= PAR_CUTOFF {
        let (a, b) = rayon::join(|| try_sum_range(lo, mid, term), || try_sum_range(mid, hi, term));
        Ok(a? + b?)
    } else {
        Ok(try_sum_range(lo, mid, term)? + try_sum_range(mid, hi, term)?)
    }
}

/// Received signal at one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reception {
    pub y: Phasor,
    /// Sender-receiver pairs closer than 2λ.
    pub near_field: u64,
}

/// `y = Σ h(s_i, r) · x_i` over all senders.
pub fn superpose<S: SenderSet + ?Sized>(
    senders: &S,
    r: Position,
    params: &ChannelParams,
) -> Result<Reception, PhysicsError> {
    let lambda = params.lambda;
    let near = 2.0 * lambda;
    let y = try_pairwise_sum(senders.len(), &|i| {
        let (s, x) = senders.sender(i);
        let d = s.dist(r);
        if d == 0.0 {
            return Err(PhysicsError::ZeroDistance { sender: s, receiver: r });
        }
        Ok(raw_gain(d, lambda) * x)
    })?;
    let near_field = (0..senders.len()).filter(|&i| senders.sender(i).0.dist(r) <= near).count() as u64;
    Ok(Reception { y, near_field })
}

/// Envelope sum `Σ x̃_s · envelope_gain(s, r)` where `x̃_s` is the sender
/// phasor with its own canonical phase removed. Multiply by
/// `canonical_phasor(r.x)` to recover `y`.
pub fn superpose_envelope<S: SenderSet + ?Sized>(senders: &S, r: Position, lambda: f64) -> Phasor {
    pairwise_sum(senders.len(), &|i| {
        let (s, w) = senders.sender(i);
        envelope_gain(s, r, lambda) * w
    })
}
