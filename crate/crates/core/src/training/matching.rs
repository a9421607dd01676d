use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One-to-one assignment of ground-truth rows to prediction slots.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchAssignment<S> {
    /// `(gt_index, query_index)` sorted by `gt_index`.
    pub pairs: Vec<(usize, usize)>,
    pub total_cost: S,
}

impl<S: Scalar> MatchAssignment<S> {
    pub fn empty() -> Self {
        MatchAssignment {
            pairs: Vec::new(),
            total_cost: S::zero(),
        }
    }

    pub fn cast<T: Scalar>(&self) -> MatchAssignment<T> {
        MatchAssignment {
            pairs: self.pairs.clone(),
            total_cost: T::lit(self.total_cost.to_f64_lossy()),
        }
    }

    /// Query slot assigned to each ground-truth row.
    pub fn queries(&self) -> Vec<usize> {
        self.pairs.iter().map(|&(_, q)| q).collect()
    }

    /// `Some(gt_index)` for slots that were matched.
    pub fn slot_targets(&self, slots: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; slots];
        for &(g, q) in &self.pairs {
            out[q] = Some(g);
        }
        out
    }
}

/// Minimum-cost assignment of every row of a `G × N` cost matrix to a
/// distinct column.
///
/// Among optimal assignments the lexicographically smallest list of columns
/// (in row order) is returned. Totals are summed in row order.
pub fn hungarian_match<S: Scalar>(cost: &[Vec<S>]) -> Result<MatchAssignment<S>> {
    let rows = cost.len();
    if rows == 0 {
        return Ok(MatchAssignment::empty());
    }
    let cols = cost[0].len();
    if let Some(bad) = cost.iter().find(|r| r.len() != cols) {
        return Err(Error::dim("hungarian_match", &[rows, cols], &[bad.len()]));
    }
    if rows > cols {
        return Err(Error::Capacity { rows, cols });
    }
    if cost.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::Parameter("cost matrix has non-finite entries".into()));
    }

    let all_rows: Vec<usize> = (0..rows).collect();
    let all_cols: Vec<usize> = (0..cols).collect();
    let mut best = solve(cost, &all_rows, &all_cols);
    let optimum = total(cost, &best);

    // Walk rows in order, taking the smallest column that still admits an
    // optimal completion.
    for i in 0..rows {
        let fixed = &best[..i];
        let rest_rows: Vec<usize> = (i + 1..rows).collect();
        for q in 0..best[i] {
            if fixed.contains(&q) {
                continue;
            }
            let rest_cols: Vec<usize> = (0..cols).filter(|c| *c != q && !fixed.contains(c)).collect();
            let tail = solve(cost, &rest_rows, &rest_cols);
            let mut candidate = fixed.to_vec();
            candidate.push(q);
            candidate.extend(tail);
            if total(cost, &candidate) <= optimum {
                best = candidate;
                break;
            }
        }
    }
    Ok(MatchAssignment {
        total_cost: total(cost, &best),
        pairs: best.into_iter().enumerate().collect(),
    })
}

fn total<S: Scalar>(cost: &[Vec<S>], cols: &[usize]) -> S {
    cols.iter()
        .enumerate()
        .fold(S::zero(), |acc, (r, &c)| acc + cost[r][c])
}

/// Shortest augmenting path with potentials over the sub-matrix selected by
/// `rows` × `cols`; returns the chosen column (original index) per row.
fn solve<S: Scalar>(cost: &[Vec<S>], rows: &[usize], cols: &[usize]) -> Vec<usize> {
    let (n, m) = (rows.len(), cols.len());
    if n == 0 {
        return Vec::new();
    }
    let c = |i: usize, j: usize| cost[rows[i - 1]][cols[j - 1]];
    let inf = S::infinity();
    let mut u = vec![S::zero(); n + 1];
    let mut v = vec![S::zero(); m + 1];
    // owner[j]: 1-based row holding column j, 0 when free.
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = c(i0, j) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
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
    let mut out = vec![0; n];
    for j in 1..=m {
        if owner[j] != 0 {
            out[owner[j] - 1] = cols[j - 1];
        }
    }
    out
}
