//! Exact rectangular linear assignment.
//!
//! [`solve_min`] runs the shortest-augmenting-path Hungarian method with row
//! and column potentials (O(n^2 m) for n rows and m >= n columns). Among all
//! optimal assignments the one whose column sequence, read in row order, is
//! lexicographically smallest is returned. Ties are resolved on the subgraph
//! of edges that are tight under the final potentials: an assignment is
//! optimal exactly when it uses only tight edges and covers every column
//! with a strictly negative potential, so rows are pinned one at a time to
//! their smallest column that still admits such a matching.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AssignmentError {
    #[error("batch of {rows} rows exceeds {cols} columns")]
    TooManyRows { rows: usize, cols: usize },
    #[error("row {row} has no permitted column")]
    InfeasibleRow { row: usize },
    #[error("no assignment covers every row using permitted edges")]
    Infeasible,
    #[error("entry ({row}, {col}) is not finite")]
    NonFinite { row: usize, col: usize },
    #[error("ragged input: row {row} has {len} entries, expected {expected}")]
    Ragged { row: usize, len: usize, expected: usize },
}

/// Dense row-major cost matrix. Forbidden edges hold [`CostMatrix::FORBIDDEN`].
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    /// Sentinel for an edge that may never be selected. It compares above
    /// every finite cost, so it also exceeds `rows * max_finite_entry`.
    pub const FORBIDDEN: f64 = f64::INFINITY;

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, AssignmentError> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (row, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(AssignmentError::Ragged {
                    row,
                    len: r.len(),
                    expected: cols,
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
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

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.cols + col] = value;
    }

    pub fn forbid(&mut self, row: usize, col: usize) {
        self.set(row, col, Self::FORBIDDEN);
    }

    pub fn is_forbidden(&self, row: usize, col: usize) -> bool {
        self.get(row, col) == Self::FORBIDDEN
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    fn check(&self) -> Result<(), AssignmentError> {
        if self.rows > self.cols {
            return Err(AssignmentError::TooManyRows {
                rows: self.rows,
                cols: self.cols,
            });
        }
        for row in 0..self.rows {
            let mut any = false;
            for (col, &x) in self.row(row).iter().enumerate() {
                if x == Self::FORBIDDEN {
                    continue;
                }
                if !x.is_finite() {
                    return Err(AssignmentError::NonFinite { row, col });
                }
                any = true;
            }
            if !any {
                return Err(AssignmentError::InfeasibleRow { row });
            }
        }
        Ok(())
    }

    fn max_abs_finite(&self) -> f64 {
        self.data
            .iter()
            .filter(|x| x.is_finite())
            .fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// Row `i` is assigned column `columns[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub columns: Vec<usize>,
    /// Sum of the selected entries of the input matrix.
    pub total: f64,
}

impl Assignment {
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.columns.iter().copied().enumerate()
    }
}

/// Minimum-cost assignment of every row to a distinct column.
pub fn solve_min(cost: &CostMatrix) -> Result<Assignment, AssignmentError> {
    cost.check()?;
    let columns = solve_checked(cost)?;
    let total = columns.iter().enumerate().map(|(i, &j)| cost.get(i, j)).sum();
    Ok(Assignment { columns, total })
}

/// Maximum-weight assignment. Forbidden edges are never chosen.
pub fn solve_max(weight: &CostMatrix) -> Result<Assignment, AssignmentError> {
    weight.check()?;
    let max = weight
        .data
        .iter()
        .filter(|x| x.is_finite())
        .fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let mut flipped = weight.clone();
    for x in &mut flipped.data {
        if x.is_finite() {
            *x = max - *x;
        }
    }
    let columns = solve_checked(&flipped)?;
    let total = columns.iter().enumerate().map(|(i, &j)| weight.get(i, j)).sum();
    Ok(Assignment { columns, total })
}

const NONE: usize = usize::MAX;

fn solve_checked(cost: &CostMatrix) -> Result<Vec<usize>, AssignmentError> {
    let (n, m) = (cost.rows, cost.cols);
    if n == 0 {
        return Ok(Vec::new());
    }

    // 1-based potentials; index 0 is the virtual root of each search tree.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    let mut minv = vec![0.0f64; m + 1];
    let mut used = vec![false; m + 1];

    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        minv.fill(f64::INFINITY);
        used.fill(false);
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let row = cost.row(i0 - 1);
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = row[j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                // On equal slack prefer a free column: it ends the search.
                if minv[j] < delta || (minv[j] == delta && owner[j] == 0 && owner[j1] != 0) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            if !delta.is_finite() {
                return Err(AssignmentError::Infeasible);
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

    let mut col_of = vec![NONE; n];
    let mut row_of = vec![NONE; m];
    for j in 1..=m {
        if owner[j] != 0 {
            col_of[owner[j] - 1] = j - 1;
            row_of[j - 1] = owner[j] - 1;
        }
    }

    let tol = 1e-9 * cost.max_abs_finite();
    let tight = |i: usize, j: usize| {
        let c = cost.get(i, j);
        c.is_finite() && c - u[i + 1] - v[j + 1] <= tol
    };
    let must_cover: Vec<bool> = (0..m).map(|j| v[j + 1] < -tol).collect();

    let mut state = Matching {
        col_of,
        row_of,
        fixed_row: vec![false; n],
        fixed_col: vec![false; m],
    };
    for i in 0..n {
        for c in 0..m {
            if state.fixed_col[c] || !tight(i, c) {
                continue;
            }
            if state.col_of[i] == c {
                break;
            }
            let mut trial = state.clone();
            if trial.force(i, c, &tight, &must_cover) {
                state = trial;
                break;
            }
        }
        state.fixed_row[i] = true;
        state.fixed_col[state.col_of[i]] = true;
    }
    Ok(state.col_of)
}

#[derive(Clone)]
struct Matching {
    col_of: Vec<usize>,
    row_of: Vec<usize>,
    fixed_row: Vec<bool>,
    fixed_col: Vec<bool>,
}

impl Matching {
    /// Moves row `i` onto column `c` and repairs the rest of the matching so
    /// that every row stays matched over tight edges and every must-cover
    /// column stays covered. Returns false if no such repair exists.
    fn force(
        &mut self,
        i: usize,
        c: usize,
        tight: &impl Fn(usize, usize) -> bool,
        must_cover: &[bool],
    ) -> bool {
        let old = self.col_of[i];
        let displaced = self.row_of[c];
        self.row_of[old] = NONE;
        self.col_of[i] = c;
        self.row_of[c] = i;
        // Pin row i while repairing; the caller's loop pins it for good.
        self.fixed_row[i] = true;
        self.fixed_col[c] = true;

        let ok = (displaced == NONE || self.augment_row(displaced, tight))
            && (!must_cover[old] || self.row_of[old] != NONE || self.cover_column(old, tight, must_cover));

        self.fixed_row[i] = false;
        self.fixed_col[c] = false;
        ok
    }

    /// Finds an alternating path from unmatched row `start` to a free column.
    fn augment_row(&mut self, start: usize, tight: &impl Fn(usize, usize) -> bool) -> bool {
        self.col_of[start] = NONE;
        let m = self.row_of.len();
        let mut parent_row = vec![NONE; m];
        let mut queue = std::collections::VecDeque::from([start]);
        let mut seen_row = vec![false; self.col_of.len()];
        seen_row[start] = true;
        while let Some(r) = queue.pop_front() {
            for j in 0..m {
                if self.fixed_col[j] || parent_row[j] != NONE || !tight(r, j) {
                    continue;
                }
                parent_row[j] = r;
                let next = self.row_of[j];
                if next == NONE {
                    // Flip the path back to `start`.
                    let mut col = j;
                    loop {
                        let row = parent_row[col];
                        let prev = self.col_of[row];
                        self.col_of[row] = col;
                        self.row_of[col] = row;
                        if row == start {
                            return true;
                        }
                        col = prev;
                    }
                }
                if !self.fixed_row[next] && !seen_row[next] {
                    seen_row[next] = true;
                    queue.push_back(next);
                }
            }
        }
        false
    }

    /// Covers free column `start` by shifting rows along an alternating path
    /// that ends by releasing a column outside the must-cover set.
    fn cover_column(
        &mut self,
        start: usize,
        tight: &impl Fn(usize, usize) -> bool,
        must_cover: &[bool],
    ) -> bool {
        let n = self.col_of.len();
        let m = self.row_of.len();
        // parent_col[row] = column the row would move into.
        let mut parent_col = vec![NONE; n];
        let mut seen_col = vec![false; m];
        seen_col[start] = true;
        let mut queue = std::collections::VecDeque::from([start]);
        while let Some(j) = queue.pop_front() {
            for r in 0..n {
                if self.fixed_row[r] || parent_col[r] != NONE || !tight(r, j) {
                    continue;
                }
                parent_col[r] = j;
                let x = self.col_of[r];
                if !must_cover[x] {
                    self.row_of[x] = NONE;
                    let mut row = r;
                    loop {
                        let target = parent_col[row];
                        let prev_owner = self.row_of[target];
                        self.col_of[row] = target;
                        self.row_of[target] = row;
                        if target == start {
                            return true;
                        }
                        row = prev_owner;
                    }
                }
                if !seen_col[x] && !self.fixed_col[x] {
                    seen_col[x] = true;
                    queue.push_back(x);
                }
            }
        }
        false
    }
}

#[cfg(test)]
pub(crate) mod oracle {
    use super::CostMatrix;

    /// Exhaustive search over injective maps in lexicographic order; returns
    /// the first optimum found, i.e. the lexicographically smallest one.
    pub fn brute_force(cost: &CostMatrix, maximize: bool) -> Option<(Vec<usize>, f64)> {
        fn rec(
            cost: &CostMatrix,
            maximize: bool,
            row: usize,
            used: &mut Vec<bool>,
            cur: &mut Vec<usize>,
            acc: f64,
            best: &mut Option<(Vec<usize>, f64)>,
        ) {
            if row == cost.rows() {
                let better = match best {
                    None => true,
                    Some((_, b)) => {
                        if maximize {
                            acc > *b
                        } else {
                            acc < *b
                        }
                    }
                };
                if better {
                    *best = Some((cur.clone(), acc));
                }
                return;
            }
            for j in 0..cost.cols() {
                if used[j] || cost.is_forbidden(row, j) {
                    continue;
                }
                used[j] = true;
                cur.push(j);
                rec(cost, maximize, row + 1, used, cur, acc + cost.get(row, j), best);
                cur.pop();
                used[j] = false;
            }
        }
        let mut best = None;
        rec(
            cost,
            maximize,
            0,
            &mut vec![false; cost.cols()],
            &mut Vec::new(),
            0.0,
            &mut best,
        );
        best
    }
}

#[cfg(test)]
mod tests {
    use super::oracle::brute_force;
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn m(rows: &[&[f64]]) -> CostMatrix {
        CostMatrix::from_rows(rows).unwrap()
    }

    fn assert_valid(a: &Assignment, cost: &CostMatrix) {
        assert_eq!(a.columns.len(), cost.rows());
        let mut seen = vec![false; cost.cols()];
        let mut sum = 0.0;
        for (i, j) in a.pairs() {
            assert!(!seen[j], "column {j} reused");
            seen[j] = true;
            assert!(!cost.is_forbidden(i, j));
            sum += cost.get(i, j);
        }
        assert_eq!(sum, a.total);
    }

    #[test]
    fn min_examples() {
        let a = solve_min(&m(&[&[4.0]])).unwrap();
        assert_eq!((a.columns, a.total), (vec![0], 4.0));

        let a = solve_min(&m(&[&[1.0, 2.0], &[2.0, 4.0]])).unwrap();
        assert_eq!((a.columns, a.total), (vec![1, 0], 4.0));

        let a = solve_min(&m(&[&[5.0, 1.0, 3.0]])).unwrap();
        assert_eq!((a.columns, a.total), (vec![1], 1.0));
    }

    #[test]
    fn max_examples() {
        let a = solve_max(&m(&[&[1.0, 2.0], &[2.0, 4.0]])).unwrap();
        assert_eq!((a.columns, a.total), (vec![0, 1], 5.0));

        let flat = CostMatrix::filled(4, 6, 3.0);
        assert_eq!(solve_max(&flat).unwrap().columns, vec![0, 1, 2, 3]);
        assert_eq!(solve_min(&flat).unwrap().columns, vec![0, 1, 2, 3]);
    }

    #[test]
    fn forbidden_optimum_falls_back_to_next_best() {
        let mut w = m(&[&[9.0, 1.0, 0.0], &[8.0, 7.0, 0.0]]);
        // Unique optimum is {0->0, 1->1} = 16.
        assert_eq!(solve_max(&w).unwrap().columns, vec![0, 1]);
        w.forbid(0, 0);
        let a = solve_max(&w).unwrap();
        let (cols, total) = brute_force(&w, true).unwrap();
        assert_eq!(a.columns, cols);
        assert_eq!(a.total, total);
        assert_eq!(a.columns, vec![1, 0]);
    }

    #[test]
    fn errors() {
        assert_eq!(
            solve_min(&CostMatrix::filled(3, 2, 1.0)),
            Err(AssignmentError::TooManyRows { rows: 3, cols: 2 })
        );
        let mut c = CostMatrix::filled(2, 2, 1.0);
        c.forbid(1, 0);
        c.forbid(1, 1);
        assert_eq!(solve_min(&c), Err(AssignmentError::InfeasibleRow { row: 1 }));

        let mut c = CostMatrix::filled(2, 3, 1.0);
        for i in 0..2 {
            c.forbid(i, 1);
            c.forbid(i, 2);
        }
        assert_eq!(solve_min(&c), Err(AssignmentError::Infeasible));

        let c = m(&[&[1.0, f64::NAN]]);
        assert_eq!(solve_min(&c), Err(AssignmentError::NonFinite { row: 0, col: 1 }));
    }

    #[test]
    fn empty_batch() {
        let a = solve_min(&CostMatrix::filled(0, 5, 0.0)).unwrap();
        assert!(a.columns.is_empty());
        assert_eq!(a.total, 0.0);
    }

    #[test]
    fn matches_brute_force_with_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..2000 {
            let n = rng.random_range(1..=5);
            let mcols = rng.random_range(n..=6);
            let mut c = CostMatrix::filled(n, mcols, 0.0);
            for i in 0..n {
                for j in 0..mcols {
                    c.set(i, j, rng.random_range(0..4) as f64);
                }
            }
            for maximize in [false, true] {
                let a = if maximize { solve_max(&c) } else { solve_min(&c) }.unwrap();
                let (cols, total) = brute_force(&c, maximize).unwrap();
                assert_valid(&a, &c);
                assert_eq!(a.total, total, "{c:?}");
                assert_eq!(a.columns, cols, "tie-break differs for {c:?}");
            }
        }
    }

    #[test]
    fn large_square_solve_is_fast() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut c = CostMatrix::filled(300, 300, 0.0);
        for i in 0..300 {
            for j in 0..300 {
                c.set(i, j, rng.random::<f64>());
            }
        }
        let start = std::time::Instant::now();
        let a = solve_min(&c).unwrap();
        let elapsed = start.elapsed();
        assert_valid(&a, &c);
        assert!(elapsed.as_millis() < 100, "{elapsed:?}");

        let start = std::time::Instant::now();
        let a = solve_min(&CostMatrix::filled(300, 300, 1.0)).unwrap();
        assert!(start.elapsed().as_millis() < 100);
        assert_eq!(a.columns, (0..300).collect::<Vec<_>>());
    }

    fn matrix_strategy() -> impl Strategy<Value = CostMatrix> {
        (1usize..=7)
            .prop_flat_map(|n| (Just(n), n..=7usize))
            .prop_flat_map(|(n, mcols)| {
                proptest::collection::vec(0u32..100, n * mcols).prop_map(move |vals| {
                    let mut c = CostMatrix::filled(n, mcols, 0.0);
                    for (k, v) in vals.into_iter().enumerate() {
                        c.set(k / mcols, k % mcols, f64::from(v));
                    }
                    c
                })
            })
    }

    proptest! {
        #[test]
        fn optimal_against_exhaustive_search(c in matrix_strategy()) {
            let a = solve_min(&c).unwrap();
            assert_valid(&a, &c);
            let (cols, total) = brute_force(&c, false).unwrap();
            prop_assert_eq!(a.total, total);
            prop_assert_eq!(a.columns, cols);
        }

        #[test]
        fn argmin_invariant_under_scaling_and_row_shifts(
            c in matrix_strategy(), scale in 1u32..10, shift in 0u32..50, row_seed in 0usize..7
        ) {
            let base = solve_min(&c).unwrap();
            let mut scaled = c.clone();
            for i in 0..c.rows() {
                for j in 0..c.cols() {
                    scaled.set(i, j, c.get(i, j) * f64::from(scale));
                }
            }
            prop_assert_eq!(&solve_min(&scaled).unwrap().columns, &base.columns);

            let mut shifted = c.clone();
            let r = row_seed % c.rows();
            for j in 0..c.cols() {
                shifted.set(r, j, c.get(r, j) + f64::from(shift));
            }
            prop_assert_eq!(&solve_min(&shifted).unwrap().columns, &base.columns);
        }
    }
}
