//! Optimal bipartite assignment and the box association primitives built on
//! top of it.

use crate::geometry::{iou, BBox};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssignmentError {
    #[error("cost matrix entry ({row}, {col}) is not finite: {value}")]
    NonFinite { row: usize, col: usize, value: f64 },
    #[error("ragged cost matrix: row {row} has {len} entries, expected {expected}")]
    Ragged { row: usize, len: usize, expected: usize },
}

/// Dense row-major matrix of finite costs.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, AssignmentError> {
        assert_eq!(data.len(), rows * cols, "cost matrix data length");
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(AssignmentError::NonFinite { row: pos / cols.max(1), col: pos % cols.max(1), value: data[pos] });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, AssignmentError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (r, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(AssignmentError::Ragged { row: r, len: row.len(), expected: cols });
            }
            data.extend_from_slice(row);
        }
        Self::new(rows.len(), cols, data)
    }

    /// Builds a matrix from a cost function; the function must return finite values.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self, AssignmentError> {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self::new(rows, cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }
}

/// A partial matching between rows and columns.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Assignment {
    /// Matched `(row, col)` pairs, sorted by row.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_rows: Vec<usize>,
    pub unmatched_cols: Vec<usize>,
}

impl Assignment {
    /// Builds an assignment from matched pairs, filling the unmatched lists.
    pub fn from_pairs(rows: usize, cols: usize, mut pairs: Vec<(usize, usize)>) -> Self {
        pairs.sort_unstable();
        let mut row_used = vec![false; rows];
        let mut col_used = vec![false; cols];
        for &(r, c) in &pairs {
            row_used[r] = true;
            col_used[c] = true;
        }
        Self {
            pairs,
            unmatched_rows: (0..rows).filter(|&r| !row_used[r]).collect(),
            unmatched_cols: (0..cols).filter(|&c| !col_used[c]).collect(),
        }
    }

    pub fn col_for_row(&self, row: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.0 == row).map(|p| p.1)
    }

    pub fn total_cost(&self, costs: &CostMatrix) -> f64 {
        self.pairs.iter().map(|&(r, c)| costs.get(r, c)).sum()
    }
}

/// Kuhn-Munkres with row/column potentials and shortest augmenting paths,
/// O(n^2 m) for `n <= m`. Rectangular inputs are matched to size
/// `min(rows, cols)`.
pub fn solve_min_cost(costs: &CostMatrix) -> Assignment {
    let (rows, cols) = (costs.rows, costs.cols);
    if rows == 0 || cols == 0 {
        return Assignment::from_pairs(rows, cols, Vec::new());
    }
    let transposed = rows > cols;
    let (n, m) = if transposed { (cols, rows) } else { (rows, cols) };
    let cost = |i: usize, j: usize| if transposed { costs.get(j, i) } else { costs.get(i, j) };

    // 1-based arrays; index 0 is the virtual source column.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut way = vec![0usize; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut min_to = vec![0.0f64; m + 1];
    let mut used = vec![false; m + 1];

    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0usize;
        min_to.iter_mut().for_each(|x| *x = f64::INFINITY);
        used.iter_mut().for_each(|x| *x = false);
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let reduced = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if reduced < min_to[j] {
                    min_to[j] = reduced;
                    way[j] = j0;
                }
                if min_to[j] < delta {
                    delta = min_to[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_to[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let pairs = (1..=m)
        .filter(|&j| owner[j] != 0)
        .map(|j| if transposed { (j - 1, owner[j] - 1) } else { (owner[j] - 1, j - 1) })
        .collect();
    Assignment::from_pairs(rows, cols, pairs)
}

/// Matches detections (rows) to tracking boxes (columns) by maximum total
/// IoU; pairs below `min_iou` are demoted to unmatched on both sides.
pub fn match_by_iou(dets: &[BBox], tracks: &[BBox], min_iou: f64) -> Assignment {
    let ious: Vec<f64> = dets.iter().flat_map(|d| tracks.iter().map(move |t| iou(d, t))).collect();
    let costs = CostMatrix::new(dets.len(), tracks.len(), ious.iter().map(|x| -x).collect())
        .expect("IoU values are finite");
    let full = solve_min_cost(&costs);
    let kept = full
        .pairs
        .into_iter()
        .filter(|&(d, t)| {
            let v = ious[d * tracks.len() + t];
            v >= min_iou && v > 0.0
        })
        .collect();
    Assignment::from_pairs(dets.len(), tracks.len(), kept)
}

/// One surviving box of greedy NMS together with the boxes it suppressed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NmsGroup {
    pub kept: usize,
    pub suppressed: Vec<usize>,
}

/// Score order used by NMS: descending score, then ascending index.
fn score_order(boxes: &[(BBox, f64)]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| boxes[b].1.total_cmp(&boxes[a].1).then(a.cmp(&b)));
    order
}

/// Greedy NMS that also records which kept box suppressed each dropped box
/// (the highest-scoring kept box overlapping it above `iou_thresh`).
pub fn nms_groups(boxes: &[(BBox, f64)], iou_thresh: f64) -> Vec<NmsGroup> {
    let mut groups: Vec<NmsGroup> = Vec::new();
    for idx in score_order(boxes) {
        let owner = groups.iter_mut().find(|g| iou(&boxes[g.kept].0, &boxes[idx].0) > iou_thresh);
        match owner {
            Some(g) => g.suppressed.push(idx),
            None => groups.push(NmsGroup { kept: idx, suppressed: Vec::new() }),
        }
    }
    groups
}

/// Indices of the boxes surviving greedy NMS, in descending score order.
pub fn nms_merge(boxes: &[(BBox, f64)], iou_thresh: f64) -> Vec<usize> {
    nms_groups(boxes, iou_thresh).into_iter().map(|g| g.kept).collect()
}
