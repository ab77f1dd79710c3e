//! Received-envelope evaluation for one round.
//!
//! The envelope of a receiver `r` is `A(r) = y(r)·e^{+j2π·r_x/λ}`, the
//! received signal with the receiver's canonical phase divided out. Senders
//! are described in the same frame by a weight `x̃(s) = x(s)·e^{+j2π·s_x/λ}`,
//! which is constant for phase-corrected rectangles and slowly varying for
//! self-synchronised ones.
//!
//! Small sender sets are summed node by node with [`superpose`]. Sender
//! rectangles beyond [`BRUTE_FORCE_LIMIT`] nodes are summed with a tensor
//! lattice-sum rule: every axis keeps exact strips at both ends and replaces
//! the interior sum by its Euler–Maclaurin midpoint integral, evaluated on
//! Gauss–Legendre panels, with endpoint derivative corrections taken from
//! finite differences on the strips. The rule depends only on the sender
//! rectangle and a bound on how fast the summand turns, so it is built once
//! per round and shared by all receivers.

use std::f64::consts::{PI, TAU};
use std::sync::Arc;

use rayon::prelude::*;

use crate::phasor::{
    canonical_phasor, envelope_gain, pairwise_sum, superpose, ChannelParams, Phasor, PhysicsError, Position,
};
use crate::schedule::RectSpec;
use crate::sync::{GridRectSenders, LineSenders};

/// Sender sets up to this many nodes are summed exactly.
pub const BRUTE_FORCE_LIMIT: u64 = 1 << 22;

/// Nodes kept exact at each end of a quadrature axis.
const EDGE_STRIP: i64 = 64;
/// Axes up to this many nodes are summed exactly.
const EXACT_AXIS: i64 = 4 * EDGE_STRIP;
/// Largest summand phase change allowed across one Gauss–Legendre panel.
const PANEL_PHASE: f64 = 3.0;
const GL_POINTS: usize = 16;

/// Chebyshev tensor interpolant of a complex field over a rectangle.
#[derive(Debug, Clone)]
pub struct Chebyshev2 {
    x_lo: f64,
    x_hi: f64,
    y_lo: f64,
    y_hi: f64,
    nx: usize,
    ny: usize,
    /// Coefficients, `ny` rows of `nx`.
    coeffs: Vec<Phasor>,
}

fn cheb_nodes(n: usize) -> Vec<f64> {
    (0..n).map(|k| (PI * (k as f64 + 0.5) / n as f64).cos()).collect()
}

fn to_unit(v: f64, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        (2.0 * v - lo - hi) / (hi - lo)
    } else {
        0.0
    }
}

fn from_unit(t: f64, lo: f64, hi: f64) -> f64 {
    0.5 * (lo + hi) + 0.5 * (hi - lo) * t
}

/// 1-D Chebyshev transform of samples at [`cheb_nodes`].
fn cheb_transform(values: &[Phasor]) -> Vec<Phasor> {
    let n = values.len();
    (0..n)
        .map(|j| {
            let factor = if j == 0 { 1.0 } else { 2.0 } / n as f64;
            let mut acc = Phasor::ZERO;
            for (k, &v) in values.iter().enumerate() {
                acc += v.scale((PI * j as f64 * (k as f64 + 0.5) / n as f64).cos());
            }
            acc.scale(factor)
        })
        .collect()
}

fn clenshaw(coeffs: &[Phasor], t: f64) -> Phasor {
    let mut b1 = Phasor::ZERO;
    let mut b2 = Phasor::ZERO;
    for &c in coeffs.iter().skip(1).rev() {
        let b0 = b1.scale(2.0 * t) - b2 + c;
        b2 = b1;
        b1 = b0;
    }
    b1.scale(t) - b2 + coeffs[0]
}

impl Chebyshev2 {
    /// Samples `f` on an `nx × ny` Chebyshev grid over the rectangle. Axes of
    /// zero extent collapse to one sample.
    pub fn build<F>(rect: &RectSpec, nx: usize, ny: usize, f: F) -> Result<Self, PhysicsError>
    where
        F: Fn(Position) -> Result<Phasor, PhysicsError> + Sync,
    {
        let nx = if rect.width() > 0.0 { nx.max(1) } else { 1 };
        let ny = if rect.height() > 0.0 { ny.max(1) } else { 1 };
        let tx = cheb_nodes(nx);
        let ty = cheb_nodes(ny);
        let samples: Vec<Phasor> = (0..nx * ny)
            .into_par_iter()
            .map(|idx| {
                let (iy, ix) = (idx / nx, idx % nx);
                let p = Position::new(from_unit(tx[ix], rect.x_lo, rect.x_hi), from_unit(ty[iy], rect.y_lo, rect.y_hi));
                f(p)
            })
            .collect::<Result<_, _>>()?;
        let mut rows: Vec<Phasor> = Vec::with_capacity(nx * ny);
        for iy in 0..ny {
            rows.extend(cheb_transform(&samples[iy * nx..(iy + 1) * nx]));
        }
        let mut coeffs = vec![Phasor::ZERO; nx * ny];
        for jx in 0..nx {
            let column: Vec<Phasor> = (0..ny).map(|iy| rows[iy * nx + jx]).collect();
            for (jy, c) in cheb_transform(&column).into_iter().enumerate() {
                coeffs[jy * nx + jx] = c;
            }
        }
        Ok(Chebyshev2 { x_lo: rect.x_lo, x_hi: rect.x_hi, y_lo: rect.y_lo, y_hi: rect.y_hi, nx, ny, coeffs })
    }

    pub fn eval(&self, p: Position) -> Phasor {
        let tx = to_unit(p.x, self.x_lo, self.x_hi);
        let ty = to_unit(p.y, self.y_lo, self.y_hi);
        let row_values: Vec<Phasor> =
            (0..self.ny).map(|jy| clenshaw(&self.coeffs[jy * self.nx..(jy + 1) * self.nx], tx)).collect();
        clenshaw(&row_values, ty)
    }
}

/// Per-node weight `x̃` of a sender rectangle.
#[derive(Debug, Clone)]
pub enum SenderWeights {
    /// Phase-corrected nodes sending at a fixed amplitude.
    Uniform(f64),
    /// Self-synchronised nodes re-sending the unit phasor they received,
    /// scaled by `amplitude`.
    Carried { envelope: Arc<Chebyshev2>, amplitude: f64 },
}

impl SenderWeights {
    #[inline]
    pub fn at(&self, p: Position) -> Phasor {
        match self {
            SenderWeights::Uniform(a) => Phasor::new(*a, 0.0),
            SenderWeights::Carried { envelope, amplitude } => envelope.eval(p).unit().scale(*amplitude),
        }
    }
}

/// Transmitters of one round.
#[derive(Debug, Clone)]
pub enum Source {
    /// Axis nodes `x = 0..m`, all phase-aligned.
    Line {
        m: usize,
        amplitude: f64,
    },
    Rect {
        rect: RectSpec,
        weights: SenderWeights,
    },
}

impl Source {
    pub fn node_count(&self) -> u64 {
        match self {
            Source::Line { m, .. } => *m as u64,
            Source::Rect { rect, .. } => rect.grid_node_count(),
        }
    }

    pub fn amplitude(&self) -> f64 {
        match self {
            Source::Line { amplitude, .. } => *amplitude,
            Source::Rect { weights: SenderWeights::Uniform(a), .. } => *a,
            Source::Rect { weights: SenderWeights::Carried { amplitude, .. }, .. } => *amplitude,
        }
    }

    pub fn x_lo(&self) -> f64 {
        match self {
            Source::Line { .. } => 0.0,
            Source::Rect { rect, .. } => rect.x_lo,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    BruteForce,
    Quadrature,
}

/// Envelope at one receiver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Envelope {
    pub a: Phasor,
    pub near_field: u64,
}

/// One axis of a lattice-sum rule: `Σ_{k=lo..=hi} g(k) ≈ Σ weight·g(node)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisRule {
    pub nodes: Vec<(f64, f64)>,
}

fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let step = p1 / dp;
            x -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

impl AxisRule {
    /// Rule for the integers `lo..=hi`. `max_panel` caps the panel length
    /// so the summand turns by at most a few radians per panel.
    pub fn new(lo: i64, hi: i64, max_panel: f64) -> AxisRule {
        let n = hi - lo + 1;
        if n <= EXACT_AXIS {
            return AxisRule { nodes: (lo..=hi).map(|k| (k as f64, 1.0)).collect() };
        }
        let mut nodes: Vec<(f64, f64)> = Vec::new();
        let a = lo + EDGE_STRIP;
        let b = hi - EDGE_STRIP;
        for k in (lo..a).chain(b + 1..=hi) {
            nodes.push((k as f64, 1.0));
        }
        // Σ_{k=a..=b} g(k) = ∫_{a−½}^{b+½} g − (1/24)[g′]_{a−½}^{b+½} + (7/5760)[g‴]_{a−½}^{b+½} − …
        let (left, right) = (a as f64 - 0.5, b as f64 + 0.5);
        let gl = gauss_legendre(GL_POINTS);
        for (p_lo, p_hi) in graded_panels(left, right, max_panel) {
            let half = 0.5 * (p_hi - p_lo);
            let mid = 0.5 * (p_hi + p_lo);
            for &(t, w) in &gl {
                nodes.push((mid + half * t, half * w));
            }
        }
        // g′(c) ≈ [g(c−3/2) − 27g(c−½) + 27g(c+½) − g(c+3/2)]/24
        // g‴(c) ≈ g(c+3/2) − 3g(c+½) + 3g(c−½) − g(c−3/2)
        let d1 = [1.0 / 24.0, -27.0 / 24.0, 27.0 / 24.0, -1.0 / 24.0];
        let d3 = [-1.0, 3.0, -3.0, 1.0];
        for (c, sign) in [(right, 1.0), (left, -1.0)] {
            let base = (c - 1.5).round() as i64;
            for j in 0..4 {
                let w = sign * (-d1[j] / 24.0 + 7.0 * d3[j] / 5760.0);
                nodes.push(((base + j as i64) as f64, w));
            }
        }
        AxisRule { nodes }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Panels over `[lo, hi]` that start at a few units next to each end and
/// double inward, never exceeding `max_panel`.
fn graded_panels(lo: f64, hi: f64, max_panel: f64) -> Vec<(f64, f64)> {
    let first = 16.0f64.min(max_panel.max(1.0));
    let mut left_edges = vec![lo];
    let mut right_edges = vec![hi];
    let mut len = first;
    loop {
        let l = *left_edges.last().unwrap();
        let r = *right_edges.last().unwrap();
        if r - l <= 2.0 * len {
            break;
        }
        left_edges.push(l + len);
        right_edges.push(r - len);
        len = (len * 2.0).min(max_panel);
    }
    let l = *left_edges.last().unwrap();
    let r = *right_edges.last().unwrap();
    let middle = ((r - l) / max_panel).ceil().max(1.0) as usize;
    let mut edges = left_edges;
    for k in 1..middle {
        edges.push(l + (r - l) * k as f64 / middle as f64);
    }
    edges.extend(right_edges.into_iter().rev());
    edges.windows(2).map(|w| (w[0], w[1])).collect()
}

/// Sender side of one round, ready to evaluate at many receivers.
pub struct PreparedSource {
    source: Source,
    /// Quadrature nodes with folded-in weights; empty on the exact path.
    nodes: Vec<(Position, Phasor)>,
    method: Method,
}

impl PreparedSource {
    /// Picks the summation method for `source` heard by receivers in
    /// `receivers`.
    pub fn prepare(source: Source, receivers: &RectSpec, lambda: f64) -> PreparedSource {
        Self::prepare_with_limit(source, receivers, lambda, BRUTE_FORCE_LIMIT)
    }

    pub fn prepare_with_limit(source: Source, receivers: &RectSpec, lambda: f64, limit: u64) -> PreparedSource {
        let rect = match &source {
            Source::Rect { rect, .. } if rect.grid_node_count() > limit => *rect,
            _ => return PreparedSource { source, nodes: Vec::new(), method: Method::BruteForce },
        };
        let (x0, x1) = rect.grid_cols();
        let (y0, y1) = rect.grid_rows();
        let dx_min = (receivers.x_lo - rect.x_hi).max(1.0);
        let span_y = receivers.y_hi.max(rect.y_hi) - receivers.y_lo.min(rect.y_lo);
        // phase turn rates of the summand along each axis, per grid unit
        let rate_y = TAU / lambda * span_y / dx_min;
        let rate_x = TAU / lambda * span_y * span_y / (2.0 * dx_min * dx_min);
        let weight_rate = match &source {
            Source::Rect { weights: SenderWeights::Carried { .. }, .. } => {
                PI / rect.width().max(rect.height()).max(1.0)
            }
            _ => 0.0,
        };
        let amp_rate = 1.0 / dx_min;
        let panel = |rate: f64| PANEL_PHASE / (rate + weight_rate + amp_rate);
        let xr = AxisRule::new(x0, x1, panel(rate_x));
        let yr = AxisRule::new(y0, y1, panel(rate_y));
        let weights = match &source {
            Source::Rect { weights, .. } => weights.clone(),
            Source::Line { .. } => unreachable!(),
        };
        let mut nodes = Vec::with_capacity(xr.len() * yr.len());
        for &(x, wx) in &xr.nodes {
            for &(y, wy) in &yr.nodes {
                let p = Position::new(x, y);
                nodes.push((p, weights.at(p).scale(wx * wy)));
            }
        }
        PreparedSource { source, nodes, method: Method::Quadrature }
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn source(&self) -> &Source {
        &self.source
    }

    pub fn envelope(&self, r: Position, params: &ChannelParams) -> Result<Envelope, PhysicsError> {
        let lambda = params.lambda;
        let to_env = |y: Phasor| y * canonical_phasor(r.x, lambda).conj();
        match (&self.method, &self.source) {
            (Method::BruteForce, Source::Line { m, amplitude }) => {
                let line = LineSenders { m: *m, lambda, amplitude: *amplitude };
                let rec = superpose(&line, r, params)?;
                Ok(Envelope { a: to_env(rec.y), near_field: rec.near_field })
            }
            (Method::BruteForce, Source::Rect { rect, weights }) => {
                let senders = GridRectSenders::new(rect, |s: Position| weights.at(s) * canonical_phasor(s.x, lambda));
                let rec = superpose(&senders, r, params)?;
                Ok(Envelope { a: to_env(rec.y), near_field: rec.near_field })
            }
            (Method::Quadrature, _) => {
                let a = pairwise_sum(self.nodes.len(), &|i| {
                    let (s, w) = self.nodes[i];
                    envelope_gain(s, r, lambda) * w
                });
                Ok(Envelope { a, near_field: 0 })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::DelayPolicy;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn rect(x_lo: f64, x_hi: f64, y_hi: f64) -> RectSpec {
        RectSpec { round: 0, x_lo, x_hi, y_lo: 0.0, y_hi, policy: DelayPolicy::PhaseCorrected }
    }

    fn brute(source: &Source, r: Position, params: &ChannelParams) -> Phasor {
        let prepared =
            PreparedSource::prepare_with_limit(source.clone(), &rect(0.0, 0.0, 0.0), params.lambda, u64::MAX);
        assert_eq!(prepared.method(), Method::BruteForce);
        prepared.envelope(r, params).unwrap().a
    }

    fn quad(source: &Source, receivers: &RectSpec, r: Position, params: &ChannelParams) -> Phasor {
        let prepared = PreparedSource::prepare_with_limit(source.clone(), receivers, params.lambda, 0);
        assert_eq!(prepared.method(), Method::Quadrature);
        prepared.envelope(r, params).unwrap().a
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let gl = gauss_legendre(GL_POINTS);
        let total: f64 = gl.iter().map(|p| p.1).sum();
        assert!((total - 2.0).abs() < 1e-14);
        let x30: f64 = gl.iter().map(|&(x, w)| w * x.powi(30)).sum();
        assert!((x30 - 2.0 / 31.0).abs() < 1e-14);
    }

    #[test]
    fn axis_rule_sums_smooth_functions() {
        let rule = AxisRule::new(3, 100_000, 2000.0);
        assert!(rule.len() < 2000);
        let f = |k: f64| (k / 7000.0).sin() / (k + 500.0);
        let exact: f64 = (3..=100_000).map(|k| f(k as f64)).sum();
        let approx: f64 = rule.nodes.iter().map(|&(x, w)| w * f(x)).sum();
        assert!(((approx - exact) / exact).abs() < 1e-12, "{approx} vs {exact}");
        // constants sum to the node count
        let count: f64 = rule.nodes.iter().map(|p| p.1).sum();
        assert!((count - 99_998.0).abs() < 1e-8);
    }

    #[test]
    fn short_axis_is_exact() {
        let rule = AxisRule::new(0, 59, 1.0);
        assert_eq!(rule.len(), 60);
        assert!(rule.nodes.iter().all(|p| p.1 == 1.0));
    }

    #[test]
    fn quadrature_matches_brute_force_phase_corrected() {
        let params = ChannelParams::grid(0.1);
        let senders = rect(0.0, 20_000.0, 30.0);
        let receivers = rect(40_000.0, 60_000.0, 40.0);
        let source = Source::Rect { rect: senders, weights: SenderWeights::Uniform(1.0) };
        for r in [Position::new(40_000.0, 0.0), Position::new(60_000.0, 40.0), Position::new(47_123.0, 17.0)] {
            let b = brute(&source, r, &params);
            let q = quad(&source, &receivers, r, &params);
            assert!((b - q).abs() / b.abs() < 1e-9, "{r}: {b} vs {q}");
        }
    }

    #[test]
    fn quadrature_matches_brute_force_carried() {
        let params = ChannelParams::grid(2.000001);
        let senders = rect(0.0, 30_000.0, 300.0);
        let receivers = rect(60_000.0, 90_000.0, 500.0);
        let field = Chebyshev2::build(&senders, 8, 8, |p| {
            Ok(Phasor::cis(0.3 * (p.x / 30_000.0) - 0.2 * (p.y / 300.0).powi(2)).scale(1.7))
        })
        .unwrap();
        let source = Source::Rect {
            rect: senders,
            weights: SenderWeights::Carried { envelope: Arc::new(field), amplitude: 1.0 },
        };
        for r in [Position::new(60_000.0, 500.0), Position::new(75_000.0, 0.0)] {
            let b = brute(&source, r, &params);
            let q = quad(&source, &receivers, r, &params);
            assert!((b - q).abs() / b.abs() < 1e-9, "{r}: {b} vs {q}");
        }
    }

    #[test]
    fn chebyshev_reproduces_envelope() {
        let params = ChannelParams::grid(0.1);
        let senders = rect(0.0, 2000.0, 7.0);
        let target = rect(4000.0, 7000.0, 12.0);
        let source = Source::Rect { rect: senders, weights: SenderWeights::Uniform(1.0) };
        let interp = Chebyshev2::build(&target, 24, 24, |p| Ok(brute(&source, p, &params))).unwrap();
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(3);
        for _ in 0..20 {
            let p = Position::new(rng.gen_range(4000.0..7000.0), rng.gen_range(0.0..12.0));
            let exact = brute(&source, p, &params);
            assert!((interp.eval(p) - exact).abs() / exact.abs() < 1e-9);
        }
    }

    #[test]
    fn chebyshev_degenerate_axis() {
        let line = rect(0.0, 10.0, 0.0);
        let c = Chebyshev2::build(&line, 6, 6, |p| Ok(Phasor::new(p.x * p.x, 1.0))).unwrap();
        let v = c.eval(Position::new(3.0, 0.0));
        assert!((v.re - 9.0).abs() < 1e-12 && (v.im - 1.0).abs() < 1e-12);
    }

    #[test]
    fn prepare_picks_method_by_size() {
        let small = Source::Rect { rect: rect(0.0, 100.0, 10.0), weights: SenderWeights::Uniform(1.0) };
        let big = Source::Rect { rect: rect(0.0, 200_000.0, 40.0), weights: SenderWeights::Uniform(1.0) };
        let rx = rect(400_000.0, 500_000.0, 50.0);
        assert_eq!(PreparedSource::prepare(small, &rx, 0.1).method(), Method::BruteForce);
        let p = PreparedSource::prepare(big, &rx, 0.1);
        assert_eq!(p.method(), Method::Quadrature);
        assert!(p.nodes.len() < 100_000);
    }

    #[test]
    fn line_source_on_axis_is_harmonic() {
        let params = ChannelParams::grid(0.1);
        let line = Source::Line { m: 10, amplitude: 1.0 };
        let a = brute(&line, Position::new(20.0, 0.0), &params);
        let harmonic: f64 = (11..=20).map(|k| 1.0 / k as f64).sum();
        assert!((a.re - harmonic).abs() < 1e-9 && a.im.abs() < 1e-9);
    }
}
