//! Start-up broadcast along the axis.
//!
//! The informed prefix `0..=e` transmits with reception-time alignment, so
//! every contribution arrives at a node `j` ahead of the prefix in phase and
//! the received amplitude is `amplitude · Σ_{u=0..=e} 1/(j−u)`. Each round
//! extends the prefix to the farthest node that still clears the threshold.

use serde::{Deserialize, Serialize};

use crate::phasor::{canonical_phasor, superpose, ChannelParams, Phasor, Position};
use crate::sync::LineSenders;

use super::EngineError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineBroadcast {
    /// Last informed node index after each round.
    pub prefix_ends: Vec<u64>,
    /// Received envelope at the farthest new node of each round.
    pub edge_envelope: Vec<Phasor>,
}

impl LineBroadcast {
    pub fn rounds(&self) -> usize {
        self.prefix_ends.len()
    }
}

/// `Σ_{u=0..=e} 1/(j−u)` for `j > e`.
pub fn line_gain(e: u64, j: u64) -> f64 {
    let terms = e + 1;
    crate::phasor::pairwise_sum(terms as usize, &|u| Phasor::new(1.0 / (j - u as u64) as f64, 0.0)).re
}

/// Broadcasts from node 0 until nodes `0..m_target` are informed. The
/// prefix never extends past `m_target − 1`.
pub fn line_broadcast(
    m_target: u64,
    params: &ChannelParams,
    amplitude: f64,
    grid_width: Option<u64>,
) -> Result<LineBroadcast, EngineError> {
    if m_target < 2 {
        return Err(EngineError::Precondition(format!("line target {m_target} must be at least 2")));
    }
    if let Some(width) = grid_width {
        if m_target > width {
            return Err(EngineError::Precondition(format!("line of {m_target} nodes exceeds grid width {width}")));
        }
    }
    let need = params.tau.sqrt() / amplitude;
    let mut e = 0u64;
    let mut out = LineBroadcast { prefix_ends: Vec::new(), edge_envelope: Vec::new() };
    while e + 1 < m_target {
        // the gain falls as j moves away; bracket and bisect on the series
        let reaches = |j: u64| line_gain(e, j) >= need;
        if !reaches(e + 1) {
            return Err(EngineError::Precondition(format!(
                "prefix 0..={e} cannot reach its neighbour at amplitude {amplitude}"
            )));
        }
        let mut lo = e + 1;
        let mut hi = e + 2;
        while reaches(hi) && hi < m_target - 1 {
            lo = hi;
            hi = e + 1 + 2 * (hi - e);
        }
        let hi = hi.min(m_target - 1);
        let mut j = if reaches(hi) {
            hi
        } else {
            let (mut a, mut b) = (lo, hi);
            while b - a > 1 {
                let mid = a + (b - a) / 2;
                if reaches(mid) {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            a
        };
        // the field decides; the series only proposes
        let line = LineSenders { m: (e + 1) as usize, lambda: params.lambda, amplitude };
        let envelope = |j: u64| -> Result<Phasor, EngineError> {
            let y = superpose(&line, Position::new(j as f64, 0.0), params)?.y;
            Ok(y * canonical_phasor(j as f64, params.lambda).conj())
        };
        let mut edge = envelope(j)?;
        while edge.norm_sqr() < params.tau && j > e + 1 {
            j -= 1;
            edge = envelope(j)?;
        }
        if edge.norm_sqr() < params.tau {
            return Err(EngineError::Precondition(format!("node {} does not receive from the line", e + 1)));
        }
        while j + 1 < m_target {
            let next = envelope(j + 1)?;
            if next.norm_sqr() < params.tau {
                break;
            }
            j += 1;
            edge = next;
        }
        e = j;
        out.prefix_ends.push(e);
        out.edge_envelope.push(edge);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn harmonic_reach(e: u64) -> u64 {
        let mut j = e + 1;
        while (0..=e).map(|u| 1.0 / (j + 1 - u) as f64).sum::<f64>() >= 1.0 {
            j += 1;
        }
        j
    }

    #[test]
    fn single_node_reaches_neighbour() {
        let b = line_broadcast(2, &ChannelParams::grid(0.1), 1.0, None).unwrap();
        assert_eq!(b.prefix_ends, vec![1]);
        assert!((b.edge_envelope[0] - Phasor::ONE).abs() < 1e-9);
    }

    #[test]
    fn growth_matches_harmonic_oracle() {
        for m in [10u64, 100, 1000, 10_000] {
            let j = harmonic_reach(m - 1);
            let ratio = (j + 1) as f64 / m as f64;
            assert!(ratio >= 1.5, "m={m} ratio={ratio}");
            assert!((ratio - std::f64::consts::E / (std::f64::consts::E - 1.0)).abs() < 0.05, "m={m}");
        }
    }

    #[test]
    fn prefix_follows_series_and_field() {
        let params = ChannelParams::grid(0.1);
        let b = line_broadcast(5000, &params, 1.0, None).unwrap();
        let mut e = 0;
        for &next in &b.prefix_ends {
            let want = harmonic_reach(e).min(4999);
            assert!((next as i64 - want as i64).abs() <= 1, "from {e}: {next} vs {want}");
            e = next;
        }
        assert_eq!(e, 4999);
    }

    #[test]
    fn rounds_for_reference_line() {
        let b = line_broadcast(8 * 1440, &ChannelParams::grid(0.1), 1.0, None).unwrap();
        let bound = (11520f64.ln() / 1.5f64.ln()).ceil() as usize;
        assert!(b.rounds() <= bound + 2, "{}", b.rounds());
        assert!(b.rounds() >= 18);
    }

    #[test]
    fn too_wide_for_grid() {
        assert!(line_broadcast(100, &ChannelParams::grid(0.1), 1.0, Some(50)).is_err());
    }
}
