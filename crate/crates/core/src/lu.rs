//! Sparse LU factorization with fill-reducing column preordering.
//!
//! Factors `P A Q = L U` column by column (left-looking, Gilbert-Peierls): each
//! column of `A Q` is solved against the partial `L` with a sparse triangular
//! solve whose nonzero pattern comes from a depth-first reachability pass. Rows
//! are chosen by threshold partial pivoting that prefers the diagonal entry of
//! the symmetric preorder whenever it is within [`PIVOT_THRESHOLD`] of the
//! column maximum.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::sparse::{CsrMatrix, Triplets};

/// Diagonal candidates within this fraction of the column maximum are kept.
pub const PIVOT_THRESHOLD: f64 = 0.1;

/// Pivots smaller than this times `max |A|` are treated as zero.
pub const SINGULAR_RELATIVE: f64 = 1e-14;

const UNSET: usize = usize::MAX;

/// Reusable result of [`lu_factor`].
#[derive(Debug, Clone)]
pub struct Factorization {
    lower: CsrMatrix,
    upper: CsrMatrix,
    row_perm: Vec<usize>,
    col_perm: Vec<usize>,
    source_nnz: usize,
    fill_nnz: usize,
}

/// Factorizes `a` with a freshly computed minimum-degree column order.
pub fn lu_factor(a: &CsrMatrix) -> Result<Factorization> {
    Factorization::new(a)
}

pub fn lu_solve(f: &Factorization, b: &[f64]) -> Result<Vec<f64>> {
    f.solve(b)
}

impl Factorization {
    pub fn new(a: &CsrMatrix) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::DimensionMismatch {
                expected: a.n_rows(),
                found: a.n_cols(),
            });
        }
        let order = min_degree_order(a);
        Self::with_ordering(a, &order)
    }

    /// Factorizes with a caller-supplied column order, typically cached from an
    /// earlier factorization of a matrix with the same pattern.
    pub fn with_ordering(a: &CsrMatrix, col_order: &[usize]) -> Result<Self> {
        let n = a.n_rows();
        if !a.is_square() {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: a.n_cols(),
            });
        }
        if col_order.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: col_order.len(),
            });
        }
        if !a.all_finite() {
            return Err(Error::NonFinite);
        }
        let tiny = SINGULAR_RELATIVE * a.max_abs();

        // column access to A
        let at = a.transpose();

        let mut pinv = vec![UNSET; n];
        // L columns keep original row indices until the end
        let mut lp = Vec::with_capacity(n + 1);
        let mut li: Vec<usize> = Vec::with_capacity(a.nnz() * 2);
        let mut lx: Vec<f64> = Vec::with_capacity(a.nnz() * 2);
        let mut up = Vec::with_capacity(n + 1);
        let mut ui: Vec<usize> = Vec::with_capacity(a.nnz() * 2);
        let mut ux: Vec<f64> = Vec::with_capacity(a.nnz() * 2);

        let mut x = vec![0.0; n];
        let mut reach = Reach::new(n);

        for (k, &col) in col_order.iter().enumerate() {
            lp.push(li.len());
            up.push(ui.len());
            let (a_rows, a_vals) = at.row(col);

            reach.compute(a_rows, &lp, &li, &pinv);
            for &i in reach.pattern() {
                x[i] = 0.0;
            }
            for (&i, &v) in a_rows.iter().zip(a_vals) {
                x[i] = v;
            }
            // sparse forward solve in topological order
            for &j in reach.pattern() {
                let jcol = pinv[j];
                if jcol == UNSET {
                    continue;
                }
                let xj = x[j];
                if xj == 0.0 {
                    continue;
                }
                let (lo, hi) = (lp[jcol] + 1, column_end(&lp, jcol, li.len()));
                for p in lo..hi {
                    x[li[p]] -= lx[p] * xj;
                }
            }

            let mut best = UNSET;
            let mut best_abs = -1.0;
            for &i in reach.pattern() {
                if pinv[i] == UNSET {
                    let v = x[i].abs();
                    if v > best_abs {
                        best_abs = v;
                        best = i;
                    }
                } else {
                    ui.push(pinv[i]);
                    ux.push(x[i]);
                }
            }
            if best == UNSET || best_abs <= tiny || best_abs == 0.0 {
                return Err(Error::SingularMatrix { pivot: k });
            }
            if pinv[col] == UNSET && x[col].abs() >= PIVOT_THRESHOLD * best_abs {
                best = col;
            }
            let pivot = x[best];
            ui.push(k);
            ux.push(pivot);
            pinv[best] = k;
            li.push(best);
            lx.push(1.0);
            for &i in reach.pattern() {
                if pinv[i] == UNSET {
                    li.push(i);
                    lx.push(x[i] / pivot);
                }
                x[i] = 0.0;
            }
        }
        lp.push(li.len());
        up.push(ui.len());

        // stored column-wise; transpose into CSR via triplets
        let mut lt = Triplets::new(n, n);
        for k in 0..n {
            for p in lp[k]..lp[k + 1] {
                lt.add(pinv[li[p]], k, lx[p]);
            }
        }
        let mut ut = Triplets::new(n, n);
        for k in 0..n {
            for p in up[k]..up[k + 1] {
                ut.add(ui[p], k, ux[p]);
            }
        }
        let lower = lt.build();
        let upper = ut.build();
        let mut row_perm = vec![0; n];
        for (i, &k) in pinv.iter().enumerate() {
            row_perm[k] = i;
        }
        let fill_nnz = lower.nnz() + upper.nnz();
        Ok(Factorization {
            lower,
            upper,
            row_perm,
            col_perm: col_order.to_vec(),
            source_nnz: a.nnz(),
            fill_nnz,
        })
    }

    pub fn dim(&self) -> usize {
        self.row_perm.len()
    }

    /// Solves `A x = b` with the stored factors.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.dim();
        if b.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: b.len(),
            });
        }
        let mut y: Vec<f64> = self.row_perm.iter().map(|&r| b[r]).collect();
        // unit lower triangular, diagonal stored last in each row
        for i in 0..n {
            let (cols, vals) = self.lower.row(i);
            let mut s = y[i];
            for (&c, &v) in cols.iter().zip(vals) {
                if c < i {
                    s -= v * y[c];
                }
            }
            y[i] = s;
        }
        for i in (0..n).rev() {
            let (cols, vals) = self.upper.row(i);
            let mut s = y[i];
            let mut diag = 0.0;
            for (&c, &v) in cols.iter().zip(vals) {
                if c > i {
                    s -= v * y[c];
                } else if c == i {
                    diag = v;
                }
            }
            y[i] = s / diag;
        }
        let mut x = vec![0.0; n];
        for (k, &c) in self.col_perm.iter().enumerate() {
            x[c] = y[k];
        }
        Ok(x)
    }

    pub fn lower(&self) -> &CsrMatrix {
        &self.lower
    }

    pub fn upper(&self) -> &CsrMatrix {
        &self.upper
    }

    pub fn row_perm(&self) -> &[usize] {
        &self.row_perm
    }

    /// Column order used; pass it to [`Factorization::with_ordering`] to reuse.
    pub fn col_perm(&self) -> &[usize] {
        &self.col_perm
    }

    pub fn source_nnz(&self) -> usize {
        self.source_nnz
    }

    pub fn fill_nnz(&self) -> usize {
        self.fill_nnz
    }
}

fn column_end(lp: &[usize], k: usize, len: usize) -> usize {
    if k + 1 < lp.len() {
        lp[k + 1]
    } else {
        len
    }
}

/// Depth-first reachability in the graph of the partial `L`.
struct Reach {
    marked: Vec<bool>,
    out: Vec<usize>,
    stack: Vec<usize>,
    pos: Vec<usize>,
}

impl Reach {
    fn new(n: usize) -> Self {
        Reach {
            marked: vec![false; n],
            out: Vec::with_capacity(n),
            stack: Vec::with_capacity(n),
            pos: Vec::with_capacity(n),
        }
    }

    fn compute(&mut self, seeds: &[usize], lp: &[usize], li: &[usize], pinv: &[usize]) {
        for &i in &self.out {
            self.marked[i] = false;
        }
        self.out.clear();
        for &s in seeds {
            if self.marked[s] {
                continue;
            }
            self.stack.clear();
            self.pos.clear();
            self.stack.push(s);
            self.pos.push(UNSET);
            while let Some(&j) = self.stack.last() {
                let top = self.stack.len() - 1;
                let jcol = pinv[j];
                if self.pos[top] == UNSET {
                    self.marked[j] = true;
                    self.pos[top] = if jcol == UNSET { 0 } else { lp[jcol] };
                }
                let end = if jcol == UNSET {
                    0
                } else {
                    column_end(lp, jcol, li.len())
                };
                let mut descended = false;
                let mut p = self.pos[top];
                while p < end {
                    let i = li[p];
                    p += 1;
                    if !self.marked[i] {
                        self.pos[top] = p;
                        self.stack.push(i);
                        self.pos.push(UNSET);
                        descended = true;
                        break;
                    }
                }
                if !descended {
                    self.stack.pop();
                    self.pos.pop();
                    self.out.push(j);
                }
            }
        }
        // reverse postorder is a topological order
        self.out.reverse();
    }

    fn pattern(&self) -> &[usize] {
        &self.out
    }
}

/// Minimum-degree ordering of the symmetrized pattern `A + A^T`.
///
/// Ties are broken by the lowest index so the result depends only on the
/// pattern.
pub fn min_degree_order(a: &CsrMatrix) -> Vec<usize> {
    let n = a.n_rows();
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for (r, c, _) in a.iter() {
        if r != c && c < n {
            adj[r].insert(c);
            adj[c].insert(r);
        }
    }
    let mut queue: BTreeSet<(usize, usize)> = (0..n).map(|i| (adj[i].len(), i)).collect();
    let mut eliminated = vec![false; n];
    let mut order = Vec::with_capacity(n);
    while let Some((_, v)) = queue.pop_first() {
        eliminated[v] = true;
        order.push(v);
        let nbrs: Vec<usize> = core::mem::take(&mut adj[v]).into_iter().collect();
        for &u in &nbrs {
            queue.remove(&(adj[u].len(), u));
            adj[u].remove(&v);
        }
        for (idx, &u) in nbrs.iter().enumerate() {
            for &w in &nbrs[idx + 1..] {
                adj[u].insert(w);
                adj[w].insert(u);
            }
        }
        for &u in &nbrs {
            debug_assert!(!eliminated[u]);
            queue.insert((adj[u].len(), u));
        }
    }
    order
}
