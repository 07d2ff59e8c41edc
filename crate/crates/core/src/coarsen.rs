//! Temporal coarsening: map a panel/regime on a fine time grid onto a
//! coarser grid that keeps every `delta`-th time point.
//!
//! The retained indices are anchored at the **last** time point and walk
//! backwards in steps of `delta`; the earliest landing is then pulled to
//! the first time point, so both endpoints are always retained. When
//! `delta` divides `horizon - 1` the walk lands on the first point by
//! itself and the grid is exactly uniform. The grid length is
//! `⌊(horizon−1)/delta⌋ + 1` in either case.
//!
//! Coarsening a panel keeps the retained columns untouched — features are
//! subsampled, never averaged — so coarsening commutes with itself:
//! coarsening by 2 and then by 2 again equals coarsening by 4 on grids
//! where both walks align.
//!
//! Coarsening a regime keeps its planned values at retained points. This
//! preserves the target quantity only when the plan's decision boundary is
//! visible on the coarse grid, so it is an error if the end of a partially
//! specified plan, or the jump point of a plan that initiates treatment,
//! falls between retained points.

use thiserror::Error;

use crate::panel::{Panel, TreatmentRegime};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum CoarsenError {
    #[error("delta must be at least 1")]
    ZeroDelta,
    #[error("delta {delta} too large for horizon {horizon}: nothing between endpoints")]
    DeltaTooLarge { delta: usize, horizon: usize },
    #[error("grid was built for horizon {grid} but data has horizon {data}")]
    HorizonMismatch { grid: usize, data: usize },
    #[error(
        "regime boundary at time index {index} is not retained by the grid; \
         the coarsened plan would target a different quantity"
    )]
    BoundaryNotRetained { index: usize },
}

/// Retained time indices of one coarsening step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoarseGrid {
    delta: usize,
    fine_horizon: usize,
    /// Zero-based retained indices, strictly increasing; first is 0 and
    /// last is `fine_horizon - 1`.
    indices: Vec<usize>,
}

impl CoarseGrid {
    pub fn delta(&self) -> usize {
        self.delta
    }

    pub fn fine_horizon(&self) -> usize {
        self.fine_horizon
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.delta == 1
    }

    /// Whether fine index `t` is retained.
    pub fn retains(&self, t: usize) -> bool {
        self.indices.binary_search(&t).is_ok()
    }
}

/// Number of points on the coarse grid: `⌊(horizon−1)/delta⌋ + 1`.
pub fn coarse_length(fine_horizon: usize, delta: usize) -> Result<usize, CoarsenError> {
    check_delta(fine_horizon, delta)?;
    Ok((fine_horizon - 1) / delta + 1)
}

fn check_delta(fine_horizon: usize, delta: usize) -> Result<(), CoarsenError> {
    if delta == 0 {
        return Err(CoarsenError::ZeroDelta);
    }
    if fine_horizon == 0 {
        return Err(CoarsenError::HorizonMismatch { grid: 0, data: 0 });
    }
    if fine_horizon > 1 && delta > fine_horizon - 1 {
        return Err(CoarsenError::DeltaTooLarge {
            delta,
            horizon: fine_horizon,
        });
    }
    Ok(())
}

/// Build the retained-index grid for the given fine horizon and width.
pub fn coarse_indices(fine_horizon: usize, delta: usize) -> Result<CoarseGrid, CoarsenError> {
    let len = coarse_length(fine_horizon, delta)?;
    let last = fine_horizon - 1;
    let mut indices = Vec::with_capacity(len);
    for j in 0..len {
        // Walk back from the end; the earliest landing is clamped to 0.
        let back = (len - 1 - j) * delta;
        indices.push(if j == 0 { 0 } else { last - back });
    }
    debug_assert!(indices.windows(2).all(|p| p[0] < p[1]));
    debug_assert_eq!(indices.len(), len);
    Ok(CoarseGrid {
        delta,
        fine_horizon,
        indices,
    })
}

/// Subsample a panel onto the grid. The input may itself be coarse; the
/// result's `delta` is the product of the input's and the grid's.
pub fn coarsen_panel<S: Scalar>(
    panel: &Panel<S>,
    grid: &CoarseGrid,
) -> Result<Panel<S>, CoarsenError> {
    if grid.fine_horizon != panel.horizon() {
        return Err(CoarsenError::HorizonMismatch {
            grid: grid.fine_horizon,
            data: panel.horizon(),
        });
    }
    Ok(panel.subset_times(&grid.indices, panel.delta() * grid.delta))
}

/// Restrict a treatment plan to the grid's retained points.
///
/// Errors when the plan's specified/unspecified boundary, or the time at
/// which it initiates treatment, is not retained: either way the coarse
/// plan would describe a different intervention.
pub fn coarsen_regime(
    regime: &TreatmentRegime,
    grid: &CoarseGrid,
) -> Result<TreatmentRegime, CoarsenError> {
    if grid.fine_horizon != regime.horizon() {
        return Err(CoarsenError::HorizonMismatch {
            grid: grid.fine_horizon,
            data: regime.horizon(),
        });
    }
    if !regime.fully_specified() {
        let boundary = regime.specified_len() - 1;
        if !grid.retains(boundary) {
            return Err(CoarsenError::BoundaryNotRetained { index: boundary });
        }
    }
    if let Some(jump) = regime.jump_index() {
        if !grid.retains(jump) {
            return Err(CoarsenError::BoundaryNotRetained { index: jump });
        }
    }
    let specified: Vec<u8> = grid
        .indices
        .iter()
        .filter(|&&t| t < regime.specified_len())
        .map(|&t| regime.value_at(t).expect("filtered to specified range"))
        .collect();
    TreatmentRegime::from_specified(specified, grid.len())
        .map_err(|_| CoarsenError::BoundaryNotRetained { index: 0 })
}
