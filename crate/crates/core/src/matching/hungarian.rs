use ndarray::Array2;

use crate::error::{invalid, Result};

/// One-to-one assignment as `(prediction, ground truth)` pairs sorted by
/// prediction index.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Assignment {
    pub pairs: Vec<(usize, usize)>,
}

impl Assignment {
    pub fn total_cost(&self, cost: &Array2<f64>) -> f64 {
        self.pairs.iter().map(|&(r, c)| cost[(r, c)]).sum()
    }

    /// Ground-truth index matched to each prediction, if any.
    pub fn by_prediction(&self, num_preds: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; num_preds];
        for &(p, g) in &self.pairs {
            out[p] = Some(g);
        }
        out
    }
}

/// Minimum-cost assignment of a rectangular cost matrix (rows are
/// predictions, columns ground truths).
///
/// Solves the square zero-padded problem with the potential-based
/// Kuhn-Munkres method, then, among all optimal assignments (the perfect
/// matchings on edges that are tight under the optimal potentials), picks
/// the lexicographically smallest pair list.
pub fn hungarian(cost: &Array2<f64>) -> Result<Assignment> {
    let (rows, cols) = cost.dim();
    if !cost.iter().all(|c| c.is_finite()) {
        return Err(invalid("cost matrix entries must be finite"));
    }
    if rows == 0 || cols == 0 {
        return Ok(Assignment::default());
    }
    let n = rows.max(cols);
    let c = |i: usize, j: usize| if i < rows && j < cols { cost[(i, j)] } else { 0.0 };

    let (u, v, mut row_of_col) = solve_square(n, &c);
    let mut col_of_row = vec![0usize; n];
    for (j, &i) in row_of_col.iter().enumerate() {
        col_of_row[i] = j;
    }

    let scale = cost.iter().fold(1.0f64, |a, b| a.max(b.abs()));
    let tol = 1e-9 * scale;
    let tight = |i: usize, j: usize| c(i, j) - u[i] - v[j] <= tol;

    // Lexicographic refinement over the tight graph.
    for i in 0..n {
        let candidates: Vec<usize> = if i < rows {
            (0..n).collect()
        } else {
            vec![col_of_row[i]]
        };
        for j in candidates {
            if j == col_of_row[i] {
                break;
            }
            if row_of_col[j] < i || !tight(i, j) {
                continue;
            }
            if reroute(i, j, &tight, &mut col_of_row, &mut row_of_col) {
                break;
            }
        }
    }

    let pairs = (0..rows)
        .filter(|&i| col_of_row[i] < cols)
        .map(|i| (i, col_of_row[i]))
        .collect();
    Ok(Assignment { pairs })
}

/// Tries to move row `i` onto column `j` while keeping rows `< i` fixed and
/// the matching perfect. Applies the change and returns true on success.
fn reroute(
    i: usize,
    j: usize,
    tight: &impl Fn(usize, usize) -> bool,
    col_of_row: &mut [usize],
    row_of_col: &mut [usize],
) -> bool {
    let n = col_of_row.len();
    let displaced = row_of_col[j];
    let freed = col_of_row[i];
    // Find an alternating path from `displaced` to `freed` through rows > i.
    let mut visited = vec![false; n];
    let mut parent_row = vec![usize::MAX; n];
    let mut stack = vec![displaced];
    let mut found = false;
    'search: while let Some(r) = stack.pop() {
        for col in 0..n {
            if visited[col] || col == j || !tight(r, col) {
                continue;
            }
            if col == freed {
                parent_row[col] = r;
                found = true;
                break 'search;
            }
            let next = row_of_col[col];
            if next <= i {
                continue;
            }
            visited[col] = true;
            parent_row[col] = r;
            stack.push(next);
        }
    }
    if !found {
        return false;
    }
    // Walk back from `freed`, shifting each row along the path.
    let mut col = freed;
    loop {
        let r = parent_row[col];
        let prev = col_of_row[r];
        col_of_row[r] = col;
        row_of_col[col] = r;
        if r == displaced {
            break;
        }
        col = prev;
    }
    col_of_row[i] = j;
    row_of_col[j] = i;
    true
}

/// Square Kuhn-Munkres with potentials. Returns row potentials, column
/// potentials and the row assigned to each column.
fn solve_square(n: usize, c: &impl Fn(usize, usize) -> f64) -> (Vec<f64>, Vec<f64>, Vec<usize>) {
    // 1-based internal indexing; index 0 is the virtual source.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = c(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let row_of_col = (1..=n).map(|j| p[j] - 1).collect();
    (u[1..].to_vec(), v[1..].to_vec(), row_of_col)
}
