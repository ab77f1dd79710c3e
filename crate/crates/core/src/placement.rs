//! Node placement: the unit grid and the uniform-random square, plus the
//! sliding-window node-count check used for the random model.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::phasor::Position;

pub const GENERATOR_NAME: &str = "xoshiro256++";

#[derive(Debug, Error)]
pub enum PlacementError {
    #[error("grid dimensions must be at least 1x1, got {rows}x{cols}")]
    ZeroDimension { rows: u64, cols: u64 },
    #[error("random placement needs n >= 2 and k > 0 (n = {n}, k = {k})")]
    BadRandomParams { n: usize, k: f64 },
    #[error("density check applies to random model")]
    NotRandom,
    #[error("grid with {0} nodes is too large to enumerate")]
    TooLarge(u64),
    #[error("csv line {line}: {msg}")]
    Csv { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlacementModel {
    Grid {
        rows: u64,
        cols: u64,
    },
    Random {
        n: usize,
        seed: u64,
    },
    /// Imported from CSV.
    Explicit,
}

/// A placement of nodes with its per-node transmission budget.
///
/// Grid positions are implied by `(rows, cols)` and are not stored: grids of
/// 10⁶ × 10³ nodes are routine for the engine, which only ever touches the
/// nodes inside relay rectangles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSet {
    positions: Vec<Position>,
    pub model: PlacementModel,
    /// Single-node reception range in grid units.
    pub tx_range: f64,
    /// Per-node maximum input amplitude `|x_i|`.
    pub tx_amplitude: f64,
}

pub fn make_grid(rows: u64, cols: u64) -> Result<NodeSet, PlacementError> {
    if rows == 0 || cols == 0 {
        return Err(PlacementError::ZeroDimension { rows, cols });
    }
    Ok(NodeSet { positions: Vec::new(), model: PlacementModel::Grid { rows, cols }, tx_range: 1.0, tx_amplitude: 1.0 })
}

/// `log₂ n`, the "log n" of the transmission-range formulas.
pub fn log_n(n: usize) -> f64 {
    (n as f64).log2()
}

pub fn make_random(n: usize, seed: u64, k: f64) -> Result<NodeSet, PlacementError> {
    if n < 2 || !(k > 0.0) {
        return Err(PlacementError::BadRandomParams { n, k });
    }
    let side = (n as f64).sqrt();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let positions = (0..n).map(|_| Position::new(rng.gen_range(0.0..side), rng.gen_range(0.0..side))).collect();
    let range = k * log_n(n).sqrt();
    Ok(NodeSet { positions, model: PlacementModel::Random { n, seed }, tx_range: range, tx_amplitude: range })
}

impl NodeSet {
    pub fn len(&self) -> u64 {
        match self.model {
            PlacementModel::Grid { rows, cols } => rows * cols,
            _ => self.positions.len() as u64,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Side of the square region for random placements; grid extent otherwise.
    pub fn extent(&self) -> (f64, f64) {
        match self.model {
            PlacementModel::Grid { rows, cols } => ((cols - 1) as f64, (rows - 1) as f64),
            PlacementModel::Random { n, .. } => {
                let s = (n as f64).sqrt();
                (s, s)
            }
            PlacementModel::Explicit => {
                self.positions.iter().fold((0.0, 0.0), |(mx, my), p| (f64::max(mx, p.x), f64::max(my, p.y)))
            }
        }
    }

    /// Stored positions; empty for grids (use [`NodeSet::positions`]).
    pub fn stored_positions(&self) -> &[Position] {
        &self.positions
    }

    /// All positions, ascending `(x, then y)` for grids.
    pub fn positions(&self) -> Box<dyn Iterator<Item = Position> + '_> {
        match self.model {
            PlacementModel::Grid { rows, cols } => {
                Box::new((0..cols).flat_map(move |x| (0..rows).map(move |y| Position::new(x as f64, y as f64))))
            }
            _ => Box::new(self.positions.iter().copied()),
        }
    }

    pub fn grid_dims(&self) -> Option<(u64, u64)> {
        match self.model {
            PlacementModel::Grid { rows, cols } => Some((rows, cols)),
            _ => None,
        }
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<(), PlacementError> {
        if self.len() > 50_000_000 {
            return Err(PlacementError::TooLarge(self.len()));
        }
        writeln!(out, "x,y")?;
        for p in self.positions() {
            writeln!(out, "{},{}", p.x, p.y)?;
        }
        Ok(())
    }

    /// Reads `x,y` rows. The result is an explicit placement with unit
    /// transmission budget.
    pub fn read_csv<R: BufRead>(input: R) -> Result<NodeSet, PlacementError> {
        let mut positions = Vec::new();
        for (idx, line) in input.lines().enumerate() {
            let line = line?;
            let lineno = idx + 1;
            if idx == 0 {
                if line.trim() != "x,y" {
                    return Err(PlacementError::Csv { line: 1, msg: format!("expected header \"x,y\", got {line:?}") });
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let mut field = |name: &str| -> Result<f64, PlacementError> {
                let raw =
                    parts.next().ok_or_else(|| PlacementError::Csv { line: lineno, msg: format!("missing {name}") })?;
                raw.trim()
                    .parse::<f64>()
                    .map_err(|e| PlacementError::Csv { line: lineno, msg: format!("bad {name} {raw:?}: {e}") })
            };
            let x = field("x")?;
            let y = field("y")?;
            if !x.is_finite() || !y.is_finite() {
                return Err(PlacementError::Csv { line: lineno, msg: "coordinates must be finite".into() });
            }
            positions.push(Position::new(x, y));
        }
        Ok(NodeSet { positions, model: PlacementModel::Explicit, tx_range: 1.0, tx_amplitude: 1.0 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityReport {
    pub square_side: f64,
    pub min_count: usize,
    /// `⌈ln n⌉`.
    pub required: usize,
    pub pass: bool,
}

/// Minimum node count over axis-aligned square windows of side
/// `square_side` swept with step `square_side / 4` across the region.
///
/// The sweep runs from both the low and the high edge so the windows
/// flush with the far border are included.
pub fn min_density(nodes: &NodeSet, square_side: f64) -> Result<DensityReport, PlacementError> {
    let n = match nodes.model {
        PlacementModel::Random { n, .. } => n,
        _ => return Err(PlacementError::NotRandom),
    };
    let region = (n as f64).sqrt();
    let required = (n as f64).ln().ceil() as usize;
    if square_side >= region {
        let min_count = nodes.positions.len();
        return Ok(DensityReport { square_side, min_count, required, pass: min_count >= required });
    }
    let step = square_side / 4.0;
    let low = window_min(&nodes.positions, region, step, false);
    let high = window_min(&nodes.positions, region, step, true);
    let min_count = low.min(high);
    Ok(DensityReport { square_side, min_count, required, pass: min_count >= required })
}

/// Bins points into `step`-sized cells anchored at 0 (or mirrored at
/// `region` when `mirrored`) and scans every 4×4 block fully inside the
/// region with a 2-D prefix sum.
fn window_min(points: &[Position], region: f64, step: f64, mirrored: bool) -> usize {
    let cells = (region / step).floor() as usize;
    if cells < 4 {
        return points.len();
    }
    let mut grid = vec![0u32; cells * cells];
    for p in points {
        let (x, y) = if mirrored { (region - p.x, region - p.y) } else { (p.x, p.y) };
        let cx = (x / step).floor();
        let cy = (y / step).floor();
        if cx < 0.0 || cy < 0.0 {
            continue;
        }
        let (cx, cy) = (cx as usize, cy as usize);
        if cx < cells && cy < cells {
            grid[cy * cells + cx] += 1;
        }
    }
    let w = cells + 1;
    let mut prefix = vec![0u64; w * w];
    for cy in 0..cells {
        let mut row = 0u64;
        for cx in 0..cells {
            row += grid[cy * cells + cx] as u64;
            prefix[(cy + 1) * w + cx + 1] = prefix[cy * w + cx + 1] + row;
        }
    }
    let block = |x0: usize, y0: usize| {
        let (x1, y1) = (x0 + 4, y0 + 4);
        prefix[y1 * w + x1] + prefix[y0 * w + x0] - prefix[y0 * w + x1] - prefix[y1 * w + x0]
    };
    let mut min = u64::MAX;
    for y0 in 0..=cells - 4 {
        for x0 in 0..=cells - 4 {
            min = min.min(block(x0, y0));
        }
    }
    min as usize
}
