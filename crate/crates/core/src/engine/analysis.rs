//! Post-run diagnostics: the quadratic growth law of informed distance and
//! peak field amplitudes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::phasor::{superpose, ChannelParams, PhysicsError, Position, SenderSet};
use crate::schedule::RectSpec;

use super::{EngineError, RoundTrace};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LowerBound {
    pub ok: bool,
    /// Smallest `k` with `d_{i+1} ≤ k·d_i²` over consecutive rounds.
    pub fitted_k: f64,
    /// Largest growth constant a single round can physically achieve.
    pub k_max: f64,
}

/// Fits `d_{i+1} ≤ k·d_i²` to a sequence of informed distances. Rounds with
/// `d_i < 1` carry no constraint. The fit is accepted when it stays within
/// `1 + 2π·amplitude/√τ`, the bound on how far the field of senders within
/// distance `d` can still clear the threshold.
pub fn lower_bound_check(distances: &[f64], amplitude: f64, tau: f64) -> LowerBound {
    let fitted_k = distances.windows(2).filter(|w| w[0] >= 1.0).map(|w| w[1] / (w[0] * w[0])).fold(0.0, f64::max);
    let k_max = 1.0 + 2.0 * std::f64::consts::PI * amplitude / tau.sqrt();
    LowerBound { ok: fitted_k.is_finite() && fitted_k <= k_max, fitted_k, k_max }
}

/// Informed distance after each round of a trace.
pub fn informed_distances(trace: &[RoundTrace]) -> Vec<f64> {
    trace.iter().map(|t| t.informed_distance).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeScan {
    pub max_amp: f64,
    pub argmax: Position,
    pub samples: u64,
}

/// Largest `|y|` over a lattice of `resolution` points per grid unit covering
/// `region`. Points that coincide with a sender are skipped.
pub fn max_amplitude_scan<S: SenderSet + ?Sized>(
    senders: &S,
    region: &RectSpec,
    resolution: f64,
    params: &ChannelParams,
) -> Result<AmplitudeScan, EngineError> {
    if senders.is_empty() {
        return Err(EngineError::Precondition("amplitude scan needs at least one sender".into()));
    }
    if !(resolution > 0.0) {
        return Err(EngineError::Precondition(format!("resolution {resolution} must be positive")));
    }
    let nx = (region.width() * resolution).floor() as u64 + 1;
    let ny = (region.height() * resolution).floor() as u64 + 1;
    let best = (0..nx * ny)
        .into_par_iter()
        .map(|k| {
            let p =
                Position::new(region.x_lo + (k / ny) as f64 / resolution, region.y_lo + (k % ny) as f64 / resolution);
            match superpose(senders, p, params) {
                Ok(rx) => Ok(Some((rx.y.abs(), k, p))),
                Err(PhysicsError::ZeroDistance { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .try_fold(|| None, |acc: Option<(f64, u64, Position)>, item| item.map(|s| pick(acc, s)))
        .try_reduce(
            || None,
            |a, b| {
                Ok(match b {
                    Some(b) => pick(a, Some(b)),
                    None => a,
                })
            },
        )?;
    let (max_amp, _, argmax) =
        best.ok_or_else(|| EngineError::Precondition("every scan point coincides with a sender".into()))?;
    Ok(AmplitudeScan { max_amp, argmax, samples: nx * ny })
}

/// Larger amplitude wins; ties go to the lower lattice index so the result
/// does not depend on how the scan was split across threads.
fn pick(a: Option<(f64, u64, Position)>, b: Option<(f64, u64, Position)>) -> Option<(f64, u64, Position)> {
    match (a, b) {
        (None, x) | (x, None) => x,
        (Some(a), Some(b)) => {
            if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) {
                Some(b)
            } else {
                Some(a)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phasor::{canonical_phasor, Phasor};
    use crate::schedule::DelayPolicy;

    fn region(x_lo: f64, x_hi: f64, y_lo: f64, y_hi: f64) -> RectSpec {
        RectSpec { round: 0, x_lo, x_hi, y_lo, y_hi, policy: DelayPolicy::PhaseCorrected }
    }

    #[test]
    fn double_exponential_fits_with_unit_k() {
        let d: Vec<f64> = (0..5).map(|i| 2f64.powi(1 << i)).collect();
        let lb = lower_bound_check(&d, 1.0, 1.0);
        assert!(lb.ok);
        assert_eq!(lb.fitted_k, 1.0);
    }

    #[test]
    fn linear_growth_is_trivially_fine() {
        let d: Vec<f64> = (1..20).map(f64::from).collect();
        let lb = lower_bound_check(&d, 1.0, 1.0);
        assert!(lb.ok && lb.fitted_k <= 2.0);
    }

    #[test]
    fn super_quadratic_growth_is_rejected() {
        let d: Vec<f64> = (0..4).map(|i| 2f64.powi(3i32.pow(i))).collect();
        assert!(!lower_bound_check(&d, 1.0, 1.0).ok);
    }

    #[test]
    fn single_sender_amplitude_is_inverse_distance() {
        let s = [(Position::new(0.0, 0.0), Phasor::ONE)];
        let scan = max_amplitude_scan(&s[..], &region(1.0, 5.0, 0.0, 3.0), 1.0, &ChannelParams::grid(0.1)).unwrap();
        assert!((scan.max_amp - 1.0).abs() < 1e-12);
        assert_eq!(scan.argmax, Position::new(1.0, 0.0));
    }

    #[test]
    fn aligned_line_peaks_at_harmonic_number() {
        let m = 500;
        let lambda = 0.1;
        let s: Vec<(Position, Phasor)> =
            (0..m).map(|u| (Position::new(u as f64, 0.0), canonical_phasor(u as f64, lambda))).collect();
        let scan =
            max_amplitude_scan(&s[..], &region(m as f64, m as f64 + 5.0, 0.0, 0.0), 1.0, &ChannelParams::grid(lambda))
                .unwrap();
        let h: f64 = (1..=m).map(|k| 1.0 / k as f64).sum();
        assert!((scan.max_amp - h).abs() < 1e-9, "{} vs {h}", scan.max_amp);
        assert_eq!(scan.argmax, Position::new(m as f64, 0.0));
    }

    #[test]
    fn empty_senders_rejected() {
        let s: [(Position, Phasor); 0] = [];
        assert!(max_amplitude_scan(&s[..], &region(0.0, 1.0, 0.0, 1.0), 1.0, &ChannelParams::grid(0.1)).is_err());
    }
}
