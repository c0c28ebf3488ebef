//! Dense exact linear algebra over Q for the small systems that show up in
//! slope spans, flats and unit solving.

use num_traits::{One, Zero};

use crate::puiseux::{qi, Q};

pub fn to_q(v: &[i64]) -> Vec<Q> {
    v.iter().map(|&x| qi(x)).collect()
}

/// Reduced row echelon form; returns the nonzero rows and pivot columns.
pub fn rref(mut m: Vec<Vec<Q>>) -> (Vec<Vec<Q>>, Vec<usize>) {
    let rows = m.len();
    let cols = m.first().map_or(0, |r| r.len());
    let mut pivots = Vec::new();
    let mut r = 0;
    for c in 0..cols {
        if r == rows {
            break;
        }
        let Some(p) = (r..rows).find(|&i| !m[i][c].is_zero()) else {
            continue;
        };
        m.swap(r, p);
        let inv = m[r][c].recip();
        for x in m[r].iter_mut() {
            *x *= &inv;
        }
        let pivot_row = m[r].clone();
        for (i, row) in m.iter_mut().enumerate() {
            if i != r && !row[c].is_zero() {
                let f = row[c].clone();
                for (x, y) in row.iter_mut().zip(pivot_row.iter()) {
                    *x -= &f * y;
                }
            }
        }
        pivots.push(c);
        r += 1;
    }
    m.truncate(r);
    (m, pivots)
}

pub fn rank(m: &[Vec<Q>]) -> usize {
    rref(m.to_vec()).1.len()
}

pub fn rank_i64(vectors: &[Vec<i64>]) -> usize {
    rank(&vectors.iter().map(|v| to_q(v)).collect::<Vec<_>>())
}

/// Basis of `{x : M x = 0}` where `m` has `ncols` columns.
pub fn nullspace(m: &[Vec<Q>], ncols: usize) -> Vec<Vec<Q>> {
    let (r, pivots) = rref(m.to_vec());
    let mut out = Vec::new();
    for free in (0..ncols).filter(|c| !pivots.contains(c)) {
        let mut x = vec![Q::zero(); ncols];
        x[free] = Q::one();
        for (row, &p) in r.iter().zip(pivots.iter()) {
            x[p] = -row[free].clone();
        }
        out.push(x);
    }
    out
}

/// Row space basis (RREF) of a set of vectors.
pub fn span_basis(vectors: &[Vec<Q>], dim: usize) -> Vec<Vec<Q>> {
    if vectors.is_empty() {
        return vec![];
    }
    let mut m = vectors.to_vec();
    for v in &mut m {
        debug_assert_eq!(v.len(), dim);
    }
    rref(m).0
}

/// Whether `v` lies in the row space spanned by an RREF basis.
pub fn in_span(basis: &[Vec<Q>], v: &[Q]) -> bool {
    let r = reduce_mod(basis, v);
    r.iter().all(|x| x.is_zero())
}

/// Reduce `v` modulo an RREF basis (zeroes every pivot coordinate).
pub fn reduce_mod(basis: &[Vec<Q>], v: &[Q]) -> Vec<Q> {
    let mut out = v.to_vec();
    for row in basis {
        let Some(p) = row.iter().position(|x| !x.is_zero()) else {
            continue;
        };
        if out[p].is_zero() {
            continue;
        }
        let f = out[p].clone() / &row[p];
        for (x, y) in out.iter_mut().zip(row.iter()) {
            *x -= &f * y;
        }
    }
    out
}

/// Solves `A x = b` for many right-hand sides.  Pivots are taken in column
/// order, so earlier columns are preferred and free columns get zero.
#[derive(Debug, Clone)]
pub struct ColumnSolver {
    rows: usize,
    cols: usize,
    /// `E` with `E A = R` (RREF), stored row by row.
    e: Vec<Vec<Q>>,
    pivots: Vec<usize>,
}

impl ColumnSolver {
    /// `a` is given row-major with `rows x cols` entries.
    pub fn new(a: &[Vec<Q>], cols: usize) -> Self {
        let rows = a.len();
        let mut aug: Vec<Vec<Q>> = a
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let mut r = row.clone();
                r.extend((0..rows).map(|j| if i == j { Q::one() } else { Q::zero() }));
                r
            })
            .collect();
        // Eliminate only over the first `cols` columns.
        let mut pivots = Vec::new();
        let mut r = 0;
        for c in 0..cols {
            if r == rows {
                break;
            }
            let Some(p) = (r..rows).find(|&i| !aug[i][c].is_zero()) else {
                continue;
            };
            aug.swap(r, p);
            let inv = aug[r][c].recip();
            for x in aug[r].iter_mut() {
                *x *= &inv;
            }
            let pr = aug[r].clone();
            for (i, row) in aug.iter_mut().enumerate() {
                if i != r && !row[c].is_zero() {
                    let f = row[c].clone();
                    for (x, y) in row.iter_mut().zip(pr.iter()) {
                        *x -= &f * y;
                    }
                }
            }
            pivots.push(c);
            r += 1;
        }
        let e = aug.into_iter().map(|row| row[cols..].to_vec()).collect();
        ColumnSolver { rows, cols, e, pivots }
    }

    pub fn rank(&self) -> usize {
        self.pivots.len()
    }

    pub fn pivots(&self) -> &[usize] {
        &self.pivots
    }

    /// A solution of `A x = b`, or `None` if `b` is outside the column span.
    pub fn solve(&self, b: &[Q]) -> Option<Vec<Q>> {
        assert_eq!(b.len(), self.rows);
        let eb: Vec<Q> = self
            .e
            .iter()
            .map(|row| row.iter().zip(b).fold(Q::zero(), |acc, (x, y)| acc + x * y))
            .collect();
        if eb[self.pivots.len()..].iter().any(|x| !x.is_zero()) {
            return None;
        }
        let mut x = vec![Q::zero(); self.cols];
        for (k, &p) in self.pivots.iter().enumerate() {
            x[p] = eb[k].clone();
        }
        Some(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[i64]]) -> Vec<Vec<Q>> {
        rows.iter().map(|r| to_q(r)).collect()
    }

    #[test]
    fn rank_and_nullspace() {
        let a = m(&[&[1, 2, 3], &[2, 4, 6], &[0, 1, 1]]);
        assert_eq!(rank(&a), 2);
        let ns = nullspace(&a, 3);
        assert_eq!(ns.len(), 1);
        for row in &a {
            let dot: Q = row.iter().zip(&ns[0]).map(|(x, y)| x * y).sum();
            assert!(dot.is_zero());
        }
    }

    #[test]
    fn solver_prefers_early_columns() {
        let a = m(&[&[2, -2, 1, 1], &[0, 0, 1, -1]]);
        let s = ColumnSolver::new(&a, 4);
        assert_eq!(s.pivots(), &[0, 2]);
        let x = s.solve(&to_q(&[0, 2])).unwrap();
        assert_eq!(x, to_q(&[-1, 0, 2, 0]));
        let b = m(&[&[1, 0], &[1, 0]]);
        assert!(ColumnSolver::new(&b, 2).solve(&to_q(&[1, 2])).is_none());
    }

    #[test]
    fn span_membership() {
        let basis = span_basis(&m(&[&[1, 1, 0], &[0, 1, 1]]), 3);
        assert!(in_span(&basis, &to_q(&[1, 2, 1])));
        assert!(!in_span(&basis, &to_q(&[0, 0, 1])));
    }
}
