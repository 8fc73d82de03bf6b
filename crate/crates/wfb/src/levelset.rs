//! Level-set helpers: marching-squares length of `{u = s}` weighted by face
//! averages, and detection of cells straddling a threshold.

use crate::grid::{NodeClass, ScalarField};
use crate::weights::WeightField;

/// Weighted length of the level set `{u = s}` inside the unit ball:
/// marching-squares segments per cell, each weighted by the mean of the face
/// values of the two cell edges it crosses. Only cells whose four corners are
/// interior nodes contribute. Returns `(weighted length, segment count)`.
///
/// 2d only; the corresponding Hausdorff integral has no canonical discrete
/// form in 3d and nothing in the solver needs it there.
pub fn weighted_level_length(field: &ScalarField, wf: &WeightField, level: f64) -> (f64, usize) {
    let grid = &field.grid;
    assert_eq!(grid.n, 2, "marching squares is 2d");
    wf.assert_matches(grid);
    let h = grid.h;
    let mut total = 0.0;
    let mut segments = 0usize;

    for cell in 0..grid.cells.len {
        if grid.interior_corner_count(cell) != 4 {
            continue;
        }
        let m = grid.cells.multi(cell);
        let (i, j) = (m[0], m[1]);
        let n00 = grid.nodes.index([i, j, 0]);
        let n10 = grid.nodes.index([i + 1, j, 0]);
        let n11 = grid.nodes.index([i + 1, j + 1, 0]);
        let n01 = grid.nodes.index([i, j + 1, 0]);
        let u00 = field.values[n00];
        let u10 = field.values[n10];
        let u11 = field.values[n11];
        let u01 = field.values[n01];

        let case = (u00 > level) as usize
            | (((u10 > level) as usize) << 1)
            | (((u11 > level) as usize) << 2)
            | (((u01 > level) as usize) << 3);
        if case == 0 || case == 15 {
            continue;
        }

        // Crossing parameter along an edge from value a to value b.
        let t = |a: f64, b: f64| ((level - a) / (b - a)).clamp(0.0, 1.0);
        // Cell-local coordinates of the crossing on each cell edge, plus the
        // node-graph edge (axis, lower node) carrying its face weight.
        let bottom = || ((t(u00, u10), 0.0), (0usize, n00));
        let right = || ((1.0, t(u10, u11)), (1usize, n10));
        let top = || ((t(u01, u11), 1.0), (0usize, n01));
        let left = || ((0.0, t(u00, u01)), (1usize, n00));

        let mut emit = |a: ((f64, f64), (usize, usize)), b: ((f64, f64), (usize, usize))| {
            let ((ax, ay), (ea, na)) = a;
            let ((bx, by), (eb, nb)) = b;
            let len = h * ((bx - ax).powi(2) + (by - ay).powi(2)).sqrt();
            let wa = wf.face_value(ea, grid.edge_index(ea, na));
            let wb = wf.face_value(eb, grid.edge_index(eb, nb));
            total += len * 0.5 * (wa + wb);
            segments += 1;
        };

        match case {
            1 | 14 => emit(bottom(), left()),
            2 | 13 => emit(bottom(), right()),
            4 | 11 => emit(right(), top()),
            8 | 7 => emit(top(), left()),
            3 | 12 => emit(left(), right()),
            6 | 9 => emit(bottom(), top()),
            5 => {
                // Saddle with c00, c11 above: resolve by the center average.
                if 0.25 * (u00 + u10 + u11 + u01) > level {
                    emit(bottom(), right());
                    emit(top(), left());
                } else {
                    emit(bottom(), left());
                    emit(right(), top());
                }
            }
            10 => {
                if 0.25 * (u00 + u10 + u11 + u01) > level {
                    emit(bottom(), left());
                    emit(right(), top());
                } else {
                    emit(bottom(), right());
                    emit(top(), left());
                }
            }
            _ => unreachable!(),
        }
    }
    (total, segments)
}

/// Cells with at least one counted corner strictly above `delta` and one at
/// or below it. Exterior corners are ignored (their stored zero is a storage
/// convention, not a field value); cells entirely outside the ball never
/// qualify.
pub fn straddling_cells(field: &ScalarField, delta: f64) -> Vec<usize> {
    let grid = &field.grid;
    let mut out = Vec::new();
    for cell in 0..grid.cells.len {
        if grid.interior_corner_count(cell) == 0 {
            continue;
        }
        let mut above = false;
        let mut below = false;
        for corner in grid.cell_corners(cell) {
            if grid.class(corner) == NodeClass::Exterior {
                continue;
            }
            if field.values[corner] > delta {
                above = true;
            } else {
                below = true;
            }
        }
        if above && below {
            out.push(cell);
        }
    }
    out
}
