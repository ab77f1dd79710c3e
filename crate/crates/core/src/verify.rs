//! Self-checks runnable from the command line.

use std::f64::consts::{FRAC_PI_4, SQRT_2};

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::Serialize;

use crate::phasor::Position;
use crate::schedule::{c2, c4_partial, closed_form_unicast1, min_w0, validate_step, RectDims, Variant};
use crate::sync::{phase_shift_bound, phase_shift_delta, self_sync_budget_limit, sqrt_expansion_gap};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Lemmas,
    Series,
    Bounds,
}

impl std::str::FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "lemmas" => Ok(Suite::Lemmas),
            "series" => Ok(Suite::Series),
            "bounds" => Ok(Suite::Bounds),
            _ => Err(format!("unknown suite {s:?}; expected lemmas, series or bounds")),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

fn check(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Check {
    Check { name: name.into(), pass, detail: detail.into() }
}

pub const LEMMA_LAMBDAS: [f64; 4] = [0.05, 0.1, 0.25, 0.5];
pub const LEMMA_STEPS: usize = 8;

/// Multiples of the minimum base width: 1, 1.25, …, 4.
pub fn lemma_multiples() -> impl Iterator<Item = f64> {
    (0..13).map(|k| 1.0 + 0.25 * k as f64)
}

pub fn run(suite: Suite) -> Vec<Check> {
    match suite {
        Suite::Lemmas => lemmas(),
        Suite::Series => series(),
        Suite::Bounds => bounds(10_000, 100_000, 1),
    }
}

/// Every closed-form Unicast I step satisfies the step inequalities and
/// matches the iterated recursion.
pub fn lemmas() -> Vec<Check> {
    let mut out = Vec::new();
    for lambda in LEMMA_LAMBDAS {
        for mult in lemma_multiples() {
            let w0 = mult * min_w0(Variant::UnicastI, lambda);
            let mut violations = Vec::new();
            let mut worst_rel = 0.0f64;
            let mut iter = RectDims::new(w0, (lambda * w0 / 4.0).sqrt());
            for i in 0..LEMMA_STEPS {
                let a = closed_form_unicast1(i, lambda, w0).expect("w0 above the minimum");
                let b = closed_form_unicast1(i + 1, lambda, w0).expect("w0 above the minimum");
                for v in validate_step(a, b, i, lambda, Variant::UnicastI) {
                    violations.push(format!("step {i}: {v}"));
                }
                let w = iter.w * iter.h / (3.0 * SQRT_2);
                iter = RectDims::new(w, (lambda * w / 4.0).sqrt());
                worst_rel = worst_rel.max(((iter.w - b.w) / b.w).abs()).max(((iter.h - b.h) / b.h).abs());
            }
            out.push(check(
                format!("unicast1 lambda={lambda} w0={w0}"),
                violations.is_empty() && worst_rel <= 1e-9,
                if violations.is_empty() {
                    format!("closed form vs recursion: max relative gap {worst_rel:.3e}")
                } else {
                    violations.join("; ")
                },
            ));
        }
    }
    out
}

pub fn series() -> Vec<Check> {
    let c4 = c4_partial(200);
    let c2 = c2();
    let limit = self_sync_budget_limit();
    vec![
        check("c4 series", (c4 - 3.586).abs() <= 1e-3, format!("c4 = {c4:.6}")),
        check("c2 = 2^c4", (c2 - 12.011).abs() <= 1e-2, format!("c2 = {c2:.6}")),
        check(
            "self-sync budget limit",
            (limit - FRAC_PI_4).abs() <= 1e-12,
            format!("limit = {limit:.15}, pi/4 = {FRAC_PI_4:.15}"),
        ),
    ]
}

/// Random-sample checks of the corner phase-shift lemma and the square-root
/// inequality behind it.
pub fn bounds(triples: usize, points: usize, seed: u64) -> Vec<Check> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut worst_corner = 0.0f64;
    let mut bound_breaks = 0usize;
    for _ in 0..triples {
        let lambda: f64 = rng.gen_range(0.01..2.0);
        let w: f64 = rng.gen_range(1.0..1e6);
        let h = rng.gen_range(0.0..=1.0) * (lambda * w / 4.0).sqrt();
        let dx = w * rng.gen_range(1.0..4.0);
        let dy = rng.gen_range(0.0..=h);
        let corner = phase_shift_delta(Position::new(0.0, 0.0), Position::new(w, h), lambda);
        worst_corner = worst_corner.max(corner);
        let delta = phase_shift_delta(Position::new(0.0, 0.0), Position::new(dx, dy), lambda);
        if delta > phase_shift_bound(dx, dy, lambda) * (1.0 + 1e-12) {
            bound_breaks += 1;
        }
    }
    let mut worst_gap = f64::INFINITY;
    for _ in 0..points {
        let x = rng.gen_range(0.0..1e3f64).powf(rng.gen_range(0.0..1.0));
        worst_gap = worst_gap.min(sqrt_expansion_gap(x));
    }
    vec![
        check(
            "corner phase shift within pi/4",
            worst_corner <= FRAC_PI_4 + 1e-9,
            format!("{triples} triples, worst {worst_corner:.12}"),
        ),
        check("phase shift below pi dy^2/(lambda dx)", bound_breaks == 0, format!("{bound_breaks} violations")),
        check("x^2/2 >= sqrt(1+x^2) - 1", worst_gap >= 0.0, format!("{points} points, min gap {worst_gap:.3e}")),
    ]
}
