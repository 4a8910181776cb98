//! Minimum-cost assignment of targets (columns) to predictions (rows).

use crate::{Error, Result};

/// Dense row-major cost matrix: rows are predictions, columns are targets.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "cost matrix of {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged cost matrix".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    #[inline]
    pub fn get(&self, pred: usize, target: usize) -> f64 {
        self.data[pred * self.cols + target]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// `(pred, target)` pairs ordered by target.
    pub pairs: Vec<(usize, usize)>,
    /// Predictions without a target, ascending.
    pub unmatched_preds: Vec<usize>,
    pub total_cost: f64,
}

impl MatchResult {
    fn from_assignment(cost: &CostMatrix, assign: &[usize]) -> Self {
        let mut taken = vec![false; cost.rows];
        let mut pairs = Vec::with_capacity(assign.len());
        for (j, &i) in assign.iter().enumerate() {
            taken[i] = true;
            pairs.push((i, j));
        }
        let unmatched_preds = (0..cost.rows).filter(|&i| !taken[i]).collect();
        Self {
            pairs,
            unmatched_preds,
            total_cost: assignment_total(cost, assign),
        }
    }
}

fn assignment_total(cost: &CostMatrix, assign: &[usize]) -> f64 {
    assign.iter().enumerate().map(|(j, &i)| cost.get(i, j)).sum()
}

fn tie_tolerance(total: f64) -> f64 {
    1e-9 * (1.0 + total.abs())
}

fn check_input(cost: &CostMatrix) -> Result<()> {
    if cost.cols > cost.rows {
        return Err(Error::Invalid(format!(
            "cannot match {} targets to {} predictions",
            cost.cols, cost.rows
        )));
    }
    if let Some(k) = cost.data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "cost matrix entry ({}, {})",
            k / cost.cols.max(1),
            k % cost.cols.max(1)
        )));
    }
    Ok(())
}

/// Shortest-augmenting-path Hungarian solver over the targets in `targets`
/// and the predictions not in `excluded`. Returns the chosen prediction per
/// target, in the order of `targets`.
fn solve(cost: &CostMatrix, targets: &[usize], excluded: &[bool]) -> Vec<usize> {
    let preds: Vec<usize> = (0..cost.rows).filter(|&i| !excluded[i]).collect();
    let n = targets.len();
    let m = preds.len();
    debug_assert!(n <= m);
    if n == 0 {
        return Vec::new();
    }
    // 1-based potentials; column 0 is the virtual start.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost.get(preds[j - 1], targets[i0 - 1]) - u[i0] - v[j];
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
    let mut out = vec![0usize; n];
    for j in 1..=m {
        if owner[j] != 0 {
            out[owner[j] - 1] = preds[j - 1];
        }
    }
    out
}

/// Optimal assignment of every target to a distinct prediction.
///
/// Among assignments whose total is within a relative `1e-9` of the optimum,
/// the one with the lexicographically smallest prediction sequence (read in
/// target order) is returned, so ties resolve deterministically.
pub fn hungarian_match(cost: &CostMatrix) -> Result<MatchResult> {
    check_input(cost)?;
    let all_targets: Vec<usize> = (0..cost.cols).collect();
    let mut assign = solve(cost, &all_targets, &vec![false; cost.rows]);
    let optimum = assignment_total(cost, &assign);
    let tol = tie_tolerance(optimum);

    let mut excluded = vec![false; cost.rows];
    for j in 0..cost.cols {
        let fixed_sum: f64 = (0..j).map(|k| cost.get(assign[k], k)).sum();
        for i in 0..assign[j] {
            if excluded[i] {
                continue;
            }
            excluded[i] = true;
            let rest: Vec<usize> = (j + 1..cost.cols).collect();
            let tail = solve(cost, &rest, &excluded);
            excluded[i] = false;
            let candidate = fixed_sum
                + cost.get(i, j)
                + rest.iter().zip(&tail).map(|(&t, &p)| cost.get(p, t)).sum::<f64>();
            if candidate <= optimum + tol {
                assign[j] = i;
                assign[j + 1..].copy_from_slice(&tail);
                break;
            }
        }
        excluded[assign[j]] = true;
    }
    Ok(MatchResult::from_assignment(cost, &assign))
}

/// Exhaustive minimum over all injections of targets into predictions,
/// with the same tie rule as [`hungarian_match`]. Limited to 8 targets.
pub fn brute_force_match(cost: &CostMatrix) -> Result<MatchResult> {
    check_input(cost)?;
    if cost.cols > 8 {
        return Err(Error::Invalid(format!(
            "brute-force matching is limited to 8 targets, got {}",
            cost.cols
        )));
    }
    let mut best = f64::INFINITY;
    let mut current = Vec::with_capacity(cost.cols);
    let mut used = vec![false; cost.rows];
    enumerate(cost, &mut current, &mut used, &mut |a| {
        let t = assignment_total(cost, a);
        if t < best {
            best = t;
        }
        false
    });
    let tol = tie_tolerance(best);
    let mut chosen = Vec::new();
    enumerate(cost, &mut current, &mut used, &mut |a| {
        if assignment_total(cost, a) <= best + tol {
            chosen = a.to_vec();
            true
        } else {
            false
        }
    });
    Ok(MatchResult::from_assignment(cost, &chosen))
}

/// Lexicographic enumeration of injections; the visitor returns `true` to stop.
fn enumerate(
    cost: &CostMatrix,
    current: &mut Vec<usize>,
    used: &mut [bool],
    visit: &mut dyn FnMut(&[usize]) -> bool,
) -> bool {
    if current.len() == cost.cols {
        return visit(current);
    }
    for i in 0..cost.rows {
        if used[i] {
            continue;
        }
        used[i] = true;
        current.push(i);
        let stop = enumerate(cost, current, used, visit);
        current.pop();
        used[i] = false;
        if stop {
            return true;
        }
    }
    false
}
