//! Voting-map outlier rejection.
//!
//! Every proposed match implies a query-image origin pose; the map is a 2D
//! grid over the mapped area in which each match votes for the cell holding
//! its implied origin. True correspondences pile up in one cell while
//! outliers spread roughly uniformly, so the winning cell's matches are what
//! the pose estimator gets to see. Orientation is not binned; RANSAC enforces
//! angular consistency afterwards.

use std::collections::HashMap;

use thiserror::Error;

use crate::geometry::{implied_origin, Correspondence, Extent};
use crate::image::Image;
use crate::scalar::{num, Scalar};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VotingError {
    #[error("no votes have been cast")]
    EmptyMap,
}

/// Default cell edge length in pixels.
pub const DEFAULT_CELL_SIZE: f64 = 75.0;

/// Grid accumulator over the mapped extent plus a margin.
#[derive(Debug, Clone)]
pub struct VotingMap<S = f64> {
    origin: (S, S),
    cell_size: S,
    cols: usize,
    rows: usize,
    counts: Vec<u32>,
    registries: HashMap<usize, Vec<Correspondence<S>>>,
    cast: u64,
    dropped: u64,
}

impl<S: Scalar> VotingMap<S> {
    /// Builds a zeroed grid covering `extent` plus `margin` on each side.
    ///
    /// Callers localizing a `w x h` query pass its diagonal as the margin so
    /// query origins outside the mapped reference extent can still vote.
    pub fn new(extent: &Extent<S>, cell_size: S, margin: S) -> Self {
        assert!(cell_size > S::zero(), "cell size must be positive");
        let margin = margin.max(S::zero());
        let interior_cols = (extent.width() / cell_size).ceil().to_usize().unwrap_or(0).max(1);
        let interior_rows = (extent.height() / cell_size).ceil().to_usize().unwrap_or(0).max(1);
        let margin_cells = (margin / cell_size).ceil().to_usize().unwrap_or(0);
        let cols = interior_cols + 2 * margin_cells;
        let rows = interior_rows + 2 * margin_cells;
        let offset = num::<S>(margin_cells as f64) * cell_size;
        Self {
            origin: (extent.min_x - offset, extent.min_y - offset),
            cell_size,
            cols,
            rows,
            counts: vec![0; cols * rows],
            registries: HashMap::new(),
            cast: 0,
            dropped: 0,
        }
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cell_size(&self) -> S {
        self.cell_size
    }

    pub fn origin(&self) -> (S, S) {
        self.origin
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    /// Votes received so far, including dropped ones.
    pub fn votes_cast(&self) -> u64 {
        self.cast
    }

    /// Votes whose implied origin fell outside the grid.
    pub fn votes_dropped(&self) -> u64 {
        self.dropped
    }

    /// Row-major index of the cell containing `p`, if inside the grid.
    pub fn cell_of(&self, p: (S, S)) -> Option<usize> {
        let cx = ((p.0 - self.origin.0) / self.cell_size).floor();
        let cy = ((p.1 - self.origin.1) / self.cell_size).floor();
        if cx < S::zero() || cy < S::zero() {
            return None;
        }
        let (cx, cy) = (cx.to_usize()?, cy.to_usize()?);
        (cx < self.cols && cy < self.rows).then(|| cy * self.cols + cx)
    }

    /// Center of a cell in global coordinates.
    pub fn cell_center(&self, index: usize) -> (S, S) {
        let half = num::<S>(0.5);
        let col = num::<S>((index % self.cols) as f64);
        let row = num::<S>((index / self.cols) as f64);
        (
            self.origin.0 + (col + half) * self.cell_size,
            self.origin.1 + (row + half) * self.cell_size,
        )
    }

    /// Computes each correspondence's implied origin and tallies its cell.
    /// Out-of-grid votes are dropped (and counted); in-grid correspondences
    /// are registered with their cell.
    pub fn cast_votes(&mut self, correspondences: &[Correspondence<S>]) {
        for c in correspondences {
            self.cast += 1;
            let origin = implied_origin(c);
            match self.cell_of((origin.x, origin.y)) {
                Some(cell) => {
                    self.counts[cell] += 1;
                    self.registries.entry(cell).or_default().push(*c);
                }
                None => self.dropped += 1,
            }
        }
    }

    /// The cell with the most votes (ties: lowest row-major index) and its
    /// registered correspondences in canonical order.
    pub fn winning_cell(&self) -> Result<(usize, Vec<Correspondence<S>>), VotingError> {
        if self.cast == self.dropped {
            return Err(VotingError::EmptyMap);
        }
        let mut best = 0usize;
        for (i, &c) in self.counts.iter().enumerate() {
            if c > self.counts[best] {
                best = i;
            }
        }
        let mut registry = self.registries.get(&best).cloned().unwrap_or_default();
        registry.sort_unstable_by(|a, b| a.canonical_cmp(b));
        Ok((best, registry))
    }

    /// One pixel per cell, counts linearly rescaled so the maximum maps to
    /// 255 (round half up); zero-vote cells are black.
    pub fn dump_votes(&self) -> Image {
        let max = self.counts.iter().copied().max().unwrap_or(0) as u64;
        Image::from_fn(self.cols as u32, self.rows as u32, |x, y| {
            let c = self.counts[y as usize * self.cols + x as usize] as u64;
            if max == 0 {
                0
            } else {
                ((c * 255 * 2 + max) / (2 * max)) as u8
            }
        })
    }
}
