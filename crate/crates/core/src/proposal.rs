//! Candidate moments on the 2D temporal grid.
//!
//! Block `(i, j)` of a `T × T` grid covers clips `i..=j`, i.e. the time span
//! `[i·τ, (j+1)·τ)`. Grid-shaped features are stored as `(T·T) × C` matrices
//! with row `i·T + j`; rows of invalid blocks are materialised zeros.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Which upper-triangular blocks are kept as candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// Short moments dense, long moments on a power-of-two stride.
    Sparse,
    /// Every block with `i <= j`.
    Dense,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Sparse => "sparse",
            Scheme::Dense => "dense",
        })
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sparse" => Ok(Scheme::Sparse),
            "dense" => Ok(Scheme::Dense),
            other => Err(Error::Config(format!("unknown grid scheme `{other}`"))),
        }
    }
}

impl Scheme {
    /// Stride applied to moments of `len` clips on a grid of side `t`.
    pub fn stride(self, t: usize, len: usize) -> usize {
        match self {
            Scheme::Dense => 1,
            Scheme::Sparse => {
                let base = (t / 4).max(1);
                let mut stride = 1;
                while base * stride < len {
                    stride *= 2;
                }
                stride
            }
        }
    }

    pub fn is_valid(self, t: usize, i: usize, j: usize) -> bool {
        if i > j || j >= t {
            return false;
        }
        let s = self.stride(t, j - i + 1);
        i.is_multiple_of(s) && (j + 1).is_multiple_of(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateGrid {
    t: usize,
    tau: f64,
    scheme: Scheme,
    valid: Vec<bool>,
    blocks: Vec<usize>,
}

/// Builds the validity mask for a video of `duration` seconds.
pub fn build_grid(t: usize, duration: f64, scheme: Scheme) -> Result<CandidateGrid> {
    if t == 0 {
        return Err(Error::Validation("grid side must be at least 1".into()));
    }
    if duration <= 0.0 || !duration.is_finite() {
        return Err(Error::Validation(format!("duration {duration} must be positive")));
    }
    let mut valid = vec![false; t * t];
    let mut blocks = Vec::new();
    for i in 0..t {
        for j in i..t {
            if scheme.is_valid(t, i, j) {
                valid[i * t + j] = true;
                blocks.push(i * t + j);
            }
        }
    }
    Ok(CandidateGrid {
        t,
        tau: duration / t as f64,
        scheme,
        valid,
        blocks,
    })
}

impl CandidateGrid {
    pub fn side(&self) -> usize {
        self.t
    }

    /// Seconds per grid clip.
    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    /// Number of valid candidates, `N_A`.
    pub fn num_valid(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_valid(&self, i: usize, j: usize) -> bool {
        i < self.t && j < self.t && self.valid[i * self.t + j]
    }

    pub fn is_valid_row(&self, row: usize) -> bool {
        self.valid[row]
    }

    /// Flat rows `i·T + j` of the valid blocks, row-major order.
    pub fn valid_rows(&self) -> &[usize] {
        &self.blocks
    }

    pub fn block_of_row(&self, row: usize) -> (usize, usize) {
        (row / self.t, row % self.t)
    }

    /// Same mask, different video length.
    pub fn with_duration(&self, duration: f64) -> Result<CandidateGrid> {
        if duration <= 0.0 || !duration.is_finite() {
            return Err(Error::Validation(format!("duration {duration} must be positive")));
        }
        let mut grid = self.clone();
        grid.tau = duration / self.t as f64;
        Ok(grid)
    }

    /// Time span of a valid or invalid upper-triangular block.
    pub fn span(&self, i: usize, j: usize) -> Result<MomentSpan> {
        span_of_block(i, j, self.tau)
    }

    /// Zeroes every invalid row of a grid-shaped matrix.
    pub fn mask_rows(&self, map: &mut Array2<f64>) {
        for (row, mut r) in map.axis_iter_mut(Axis(0)).enumerate() {
            if !self.valid[row] {
                r.fill(0.0);
            }
        }
    }

    /// `'#'` for valid blocks, `'.'` otherwise; one grid row per line.
    pub fn render_mask(&self) -> String {
        let mut out = String::with_capacity(self.t * (self.t + 1));
        for i in 0..self.t {
            for j in 0..self.t {
                out.push(if self.is_valid(i, j) { '#' } else { '.' });
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentSpan {
    pub start: f64,
    pub end: f64,
}

impl MomentSpan {
    pub fn new(start: f64, end: f64) -> Result<Self> {
        if !(start >= 0.0 && start < end && end.is_finite()) {
            return Err(Error::Validation(format!("invalid span ({start}, {end})")));
        }
        Ok(Self { start, end })
    }

    pub fn length(&self) -> f64 {
        self.end - self.start
    }
}

pub fn span_of_block(i: usize, j: usize, tau: f64) -> Result<MomentSpan> {
    if i > j {
        return Err(Error::Validation(format!(
            "block ({i}, {j}) starts after it ends"
        )));
    }
    MomentSpan::new(i as f64 * tau, (j + 1) as f64 * tau)
}

/// Intersection over union of two time spans; 0 when disjoint.
pub fn temporal_iou(a: &MomentSpan, b: &MomentSpan) -> f64 {
    let inter = (a.end.min(b.end) - a.start.max(b.start)).max(0.0);
    let union = a.end.max(b.end) - a.start.min(b.start);
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Content-level (`A_C`) and boundary-level (`A_B`) moment features.
#[derive(Debug, Clone)]
pub struct MomentFeatureMaps {
    pub content: Array2<f64>,
    pub boundary: Array2<f64>,
    /// Clip index holding each content maximum, per row and channel.
    pub(crate) argmax: Vec<u32>,
}

/// Elementwise max of clip rows `i..=j` for every valid block.
pub fn content_map(clips: ArrayView2<'_, f64>, grid: &CandidateGrid) -> Array2<f64> {
    content_map_with_argmax(clips, grid).0
}

/// Row sum of the start and end clips of every valid block.
pub fn boundary_map(clips: ArrayView2<'_, f64>, grid: &CandidateGrid) -> Array2<f64> {
    let t = grid.side();
    assert_eq!(clips.nrows(), t, "clip count must equal grid side");
    let c = clips.ncols();
    let mut out = Array2::zeros((t * t, c));
    for &row in grid.valid_rows() {
        let (i, j) = grid.block_of_row(row);
        let mut dst = out.row_mut(row);
        dst.assign(&clips.row(i));
        dst += &clips.row(j);
    }
    out
}

pub(crate) fn content_map_with_argmax(
    clips: ArrayView2<'_, f64>,
    grid: &CandidateGrid,
) -> (Array2<f64>, Vec<u32>) {
    let t = grid.side();
    assert_eq!(clips.nrows(), t, "clip count must equal grid side");
    let c = clips.ncols();
    let mut out = Array2::zeros((t * t, c));
    let mut argmax = vec![0u32; t * t * c];
    let mut run = vec![0.0; c];
    let mut run_idx = vec![0u32; c];
    for i in 0..t {
        // running max over i..=j, extended one clip at a time
        for j in i..t {
            let clip = clips.row(j);
            for ch in 0..c {
                if j == i || clip[ch] > run[ch] {
                    run[ch] = clip[ch];
                    run_idx[ch] = j as u32;
                }
            }
            let row = i * t + j;
            if grid.is_valid_row(row) {
                out.row_mut(row)
                    .iter_mut()
                    .zip(&run)
                    .for_each(|(d, s)| *d = *s);
                argmax[row * c..(row + 1) * c].copy_from_slice(&run_idx);
            }
        }
    }
    (out, argmax)
}

/// Builds both maps from query-aware clip features.
pub fn moment_maps(clips: ArrayView2<'_, f64>, grid: &CandidateGrid) -> MomentFeatureMaps {
    let (content, argmax) = content_map_with_argmax(clips, grid);
    let boundary = boundary_map(clips, grid);
    MomentFeatureMaps {
        content,
        boundary,
        argmax,
    }
}

impl MomentFeatureMaps {
    pub(crate) fn push_pattern(&self, out: &mut Vec<u32>) {
        out.extend_from_slice(&self.argmax);
    }

    /// Gradient with respect to the clip features, given gradients of both
    /// maps. Rows of invalid blocks are ignored.
    pub fn backward(
        &self,
        grid: &CandidateGrid,
        d_content: ArrayView2<'_, f64>,
        d_boundary: ArrayView2<'_, f64>,
    ) -> Array2<f64> {
        let t = grid.side();
        let c = self.content.ncols();
        let mut d_clips = Array2::zeros((t, c));
        for &row in grid.valid_rows() {
            let (i, j) = grid.block_of_row(row);
            let dc = d_content.row(row);
            let idx = &self.argmax[row * c..(row + 1) * c];
            for ch in 0..c {
                d_clips[[idx[ch] as usize, ch]] += dc[ch];
            }
            let db = d_boundary.row(row);
            d_clips.row_mut(i).scaled_add(1.0, &db);
            d_clips.row_mut(j).scaled_add(1.0, &db);
        }
        d_clips
    }
}
