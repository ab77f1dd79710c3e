//! Field rasters, heatmap rendering and CSV dumps.
//!
//! Cell `(i, j)` of a map samples the point `(x_lo + i/res, y_lo + j/res)`,
//! so at one sample per grid unit over an integer-aligned viewport each cell
//! is exactly one node.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::phasor::{canonical_phasor, superpose, ChannelParams, Phasor, PhysicsError, Position, SenderSet};

/// Requests above this many cells are refused before allocating.
pub const MAX_CELLS: u64 = 100_000_000;

/// SNR palette: below τ runs from `BELOW_LO` toward `BELOW_HI`, at or above τ
/// from `ABOVE_LO` toward `ABOVE_HI`.
pub const BELOW_LO: [u8; 3] = [96, 0, 128];
pub const BELOW_HI: [u8; 3] = [0, 224, 224];
pub const ABOVE_LO: [u8; 3] = [255, 140, 0];
pub const ABOVE_HI: [u8; 3] = [255, 250, 220];
/// Cells that coincide with a sender.
pub const SOURCE: [u8; 3] = [255, 255, 255];
pub const PHASE_LO: [u8; 3] = [0, 0, 0];
pub const PHASE_HI: [u8; 3] = [0, 64, 255];

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("resolution {0} must be positive")]
    Resolution(f64),
    #[error("viewport [{0}, {1}] x [{2}, {3}] is empty")]
    EmptyViewport(f64, f64, f64, f64),
    #[error("{cells} cells exceeds the limit of {MAX_CELLS}")]
    TooLarge { cells: u64 },
    #[error(transparent)]
    Physics(#[from] PhysicsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Viewport {
    pub x_lo: f64,
    pub x_hi: f64,
    pub y_lo: f64,
    pub y_hi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldMap {
    pub viewport: Viewport,
    pub resolution: f64,
    pub width: usize,
    pub height: usize,
    pub lambda: f64,
    /// Row-major from `(x_lo, y_lo)`; `None` marks a sender position.
    pub cells: Vec<Option<Phasor>>,
}

impl FieldMap {
    pub fn position(&self, i: usize, j: usize) -> Position {
        Position::new(self.viewport.x_lo + i as f64 / self.resolution, self.viewport.y_lo + j as f64 / self.resolution)
    }

    pub fn cell(&self, i: usize, j: usize) -> Option<Phasor> {
        self.cells[j * self.width + i]
    }

    /// Cells at or above the threshold; sender cells are excluded.
    pub fn above_mask(&self, tau: f64) -> Vec<bool> {
        self.cells.iter().map(|c| c.is_some_and(|y| y.norm_sqr() >= tau)).collect()
    }

    /// Writes `x,y,re,im,snr` rows in cell order. Sender cells carry `NaN`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "x,y,re,im,snr")?;
        for j in 0..self.height {
            for i in 0..self.width {
                let p = self.position(i, j);
                let y = self.cell(i, j).unwrap_or(Phasor::new(f64::NAN, f64::NAN));
                writeln!(out, "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}", p.x, p.y, y.re, y.im, y.norm_sqr())?;
            }
        }
        Ok(())
    }
}

/// Samples `y` over `viewport` at `resolution` points per grid unit.
pub fn compute_field<S: SenderSet + ?Sized>(
    senders: &S,
    viewport: Viewport,
    resolution: f64,
    params: &ChannelParams,
) -> Result<FieldMap, FieldError> {
    if !(resolution > 0.0) || !resolution.is_finite() {
        return Err(FieldError::Resolution(resolution));
    }
    let Viewport { x_lo, x_hi, y_lo, y_hi } = viewport;
    if !(x_hi > x_lo && y_hi > y_lo) {
        return Err(FieldError::EmptyViewport(x_lo, x_hi, y_lo, y_hi));
    }
    let width = ((x_hi - x_lo) * resolution).ceil();
    let height = ((y_hi - y_lo) * resolution).ceil();
    let cells = width * height;
    if cells > MAX_CELLS as f64 {
        return Err(FieldError::TooLarge { cells: cells as u64 });
    }
    let (width, height) = (width as usize, height as usize);
    let mut map = FieldMap { viewport, resolution, width, height, lambda: params.lambda, cells: Vec::new() };
    let rows: Vec<Vec<Option<Phasor>>> = (0..height)
        .into_par_iter()
        .map(|j| {
            (0..width)
                .map(|i| match superpose(senders, map.position(i, j), params) {
                    Ok(rx) => Ok(Some(rx.y)),
                    Err(PhysicsError::ZeroDistance { .. }) => Ok(None),
                    Err(e) => Err(e),
                })
                .collect()
        })
        .collect::<Result<_, _>>()?;
    map.cells = rows.into_iter().flatten().collect();
    Ok(map)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderMode {
    Snr,
    PhaseError,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderSpec {
    pub mode: RenderMode,
    pub tau: f64,
}

fn lerp(a: [u8; 3], b: [u8; 3], t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0);
    std::array::from_fn(|k| (a[k] as f64 + (b[k] as f64 - a[k] as f64) * t).round() as u8)
}

/// Colour of a received value in SNR mode.
pub fn snr_colour(snr: f64, tau: f64) -> [u8; 3] {
    if snr >= tau {
        lerp(ABOVE_LO, ABOVE_HI, 1.0 - tau / snr)
    } else {
        lerp(BELOW_LO, BELOW_HI, snr / tau)
    }
}

/// Whether a rendered SNR pixel lies in the at-or-above-threshold band.
pub fn in_above_band(rgb: [u8; 3]) -> bool {
    rgb[0] == 255 && rgb != SOURCE
}

/// Phase error `|arg(y) + 2πx/λ|` folded into `[0, π]`.
pub fn cell_phase_error(y: Phasor, x: f64, lambda: f64) -> f64 {
    (y * canonical_phasor(x, lambda).conj()).arg().abs()
}

/// Binary PPM (P6, maxval 255), first row at `y_lo`.
pub fn render(map: &FieldMap, spec: &RenderSpec) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", map.width, map.height).into_bytes();
    out.reserve(map.cells.len() * 3);
    for j in 0..map.height {
        for i in 0..map.width {
            let rgb = match map.cell(i, j) {
                None => SOURCE,
                Some(y) => match spec.mode {
                    RenderMode::Snr => snr_colour(y.norm_sqr(), spec.tau),
                    RenderMode::PhaseError => {
                        let e = cell_phase_error(y, map.position(i, j).x, map.lambda);
                        lerp(PHASE_LO, PHASE_HI, e / std::f64::consts::PI)
                    }
                },
            };
            out.extend_from_slice(&rgb);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vp(x_lo: f64, x_hi: f64, y_lo: f64, y_hi: f64) -> Viewport {
        Viewport { x_lo, x_hi, y_lo, y_hi }
    }

    fn pixels(ppm: &[u8], w: usize, h: usize) -> &[u8] {
        let header = format!("P6\n{w} {h}\n255\n").len();
        &ppm[header..]
    }

    #[test]
    fn single_sender_inverse_distance() {
        let params = ChannelParams::grid(0.1);
        let s = [(Position::new(10.0, 10.0), Phasor::ONE)];
        let map = compute_field(&s[..], vp(0.0, 3.0, 0.0, 3.0), 1.0, &params).unwrap();
        assert_eq!((map.width, map.height), (3, 3));
        for j in 0..3 {
            for i in 0..3 {
                let p = map.position(i, j);
                let d = p.dist(s[0].0);
                assert!((map.cell(i, j).unwrap().abs() - 1.0 / d).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn sender_cells_are_sentinels_and_render_white() {
        let params = ChannelParams::grid(0.1);
        let s = [(Position::new(1.0, 1.0), Phasor::ONE)];
        let map = compute_field(&s[..], vp(0.0, 3.0, 0.0, 3.0), 1.0, &params).unwrap();
        assert_eq!(map.cell(1, 1), None);
        let ppm = render(&map, &RenderSpec { mode: RenderMode::Snr, tau: 1.0 });
        let px = pixels(&ppm, 3, 3);
        assert_eq!(&px[12..15], &SOURCE);
    }

    #[test]
    fn empty_senders_give_zero_field_and_deepest_colour() {
        let params = ChannelParams::grid(0.1);
        let s: [(Position, Phasor); 0] = [];
        let map = compute_field(&s[..], vp(0.0, 4.0, 0.0, 2.0), 1.0, &params).unwrap();
        assert!(map.cells.iter().all(|c| *c == Some(Phasor::ZERO)));
        let ppm = render(&map, &RenderSpec { mode: RenderMode::Snr, tau: 1.0 });
        assert!(pixels(&ppm, 4, 2).chunks(3).all(|p| p == BELOW_LO));
    }

    #[test]
    fn threshold_is_the_band_boundary() {
        assert_eq!(snr_colour(1.0, 1.0), ABOVE_LO);
        assert!(in_above_band(snr_colour(1.0, 1.0)));
        assert!(!in_above_band(snr_colour(1.0 - 1e-12, 1.0)));
        assert!(in_above_band(snr_colour(1e300, 1.0)));
        assert!(!in_above_band(snr_colour(0.0, 1.0)));
    }

    #[test]
    fn refuses_huge_requests_and_bad_arguments() {
        let params = ChannelParams::grid(0.1);
        let s = [(Position::new(0.0, 0.0), Phasor::ONE)];
        assert!(matches!(
            compute_field(&s[..], vp(0.0, 1e5, 0.0, 1e4), 1.0, &params),
            Err(FieldError::TooLarge { .. })
        ));
        assert!(compute_field(&s[..], vp(0.0, 1.0, 0.0, 1.0), 0.0, &params).is_err());
        assert!(compute_field(&s[..], vp(1.0, 1.0, 0.0, 1.0), 1.0, &params).is_err());
    }

    #[test]
    fn csv_mask_matches_rendered_band() {
        let params = ChannelParams::grid(0.1);
        let s: Vec<(Position, Phasor)> =
            (0..20).map(|u| (Position::new(u as f64, 0.0), canonical_phasor(u as f64, 0.1))).collect();
        let map = compute_field(&s[..], vp(-5.0, 45.0, -3.0, 4.0), 1.0, &params).unwrap();
        let mut csv = Vec::new();
        map.write_csv(&mut csv).unwrap();
        let from_csv: Vec<bool> = String::from_utf8(csv)
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap() >= 1.0)
            .collect();
        let ppm = render(&map, &RenderSpec { mode: RenderMode::Snr, tau: 1.0 });
        let from_ppm: Vec<bool> =
            pixels(&ppm, map.width, map.height).chunks(3).map(|p| in_above_band([p[0], p[1], p[2]])).collect();
        assert_eq!(from_csv, from_ppm);
        assert_eq!(from_csv, map.above_mask(1.0));
        assert!(from_csv.iter().any(|&b| b) && from_csv.iter().any(|&b| !b));
    }

    #[test]
    fn phase_rings_have_wavelength_period() {
        // one sender, sampled up its own column: the phase error relative to
        // the column's fixed canonical phase advances by 2π per λ of distance
        let lambda = 0.5;
        let params = ChannelParams::grid(lambda);
        let s = [(Position::new(0.0, 0.0), Phasor::ONE)];
        let map = compute_field(&s[..], vp(0.0, 0.01, 1.0, 3.0), 8.0, &params).unwrap();
        for j in 0..map.height {
            let p = map.position(0, j);
            let y = map.cell(0, j).unwrap();
            let want = (-2.0 * std::f64::consts::PI * p.y / lambda).rem_euclid(2.0 * std::f64::consts::PI);
            let want = if want > std::f64::consts::PI { 2.0 * std::f64::consts::PI - want } else { want };
            assert!((cell_phase_error(y, p.x, lambda) - want).abs() < 1e-9);
        }
        let ppm = render(&map, &RenderSpec { mode: RenderMode::PhaseError, tau: 1.0 });
        // distance 1 and 1.5 are one wavelength apart: same colour
        let px = pixels(&ppm, map.width, map.height);
        assert_eq!(&px[0..3], &px[4 * 3..4 * 3 + 3]);
    }

    #[test]
    fn identical_inputs_render_identically() {
        let params = ChannelParams::grid(0.1);
        let s: Vec<(Position, Phasor)> =
            (0..50).map(|u| (Position::new(u as f64, 0.0), canonical_phasor(u as f64, 0.1))).collect();
        let a = render(
            &compute_field(&s[..], vp(0.0, 80.0, -10.0, 10.0), 2.0, &params).unwrap(),
            &RenderSpec { mode: RenderMode::Snr, tau: 1.0 },
        );
        let b = render(
            &compute_field(&s[..], vp(0.0, 80.0, -10.0, 10.0), 2.0, &params).unwrap(),
            &RenderSpec { mode: RenderMode::Snr, tau: 1.0 },
        );
        assert_eq!(a, b);
    }
}
