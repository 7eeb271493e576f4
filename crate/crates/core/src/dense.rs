//! Small dense matrices for the reduced Krylov problems.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use crate::error::{Error, Result};
use crate::math;

/// Square row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    n: usize,
    values: Vec<f64>,
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.values[i * self.n + j]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.values[i * self.n + j]
    }
}

impl DenseMatrix {
    pub fn zeros(n: usize) -> Self {
        DenseMatrix {
            n,
            values: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn diagonal(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len());
        for (i, &v) in d.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let n = rows.len();
        let mut m = Self::zeros(n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: row.len(),
                });
            }
            m.values[i * n..(i + 1) * n].copy_from_slice(row);
        }
        Ok(m)
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n).map(|i| self[(i, j)]).collect()
    }

    /// Leading `m x m` block.
    pub fn leading(&self, m: usize) -> DenseMatrix {
        DenseMatrix::from_fn(m, |i, j| self[(i, j)])
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn matmul(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.n, other.n);
        let n = self.n;
        let mut out = DenseMatrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.values[i * n + k];
                if a == 0.0 {
                    continue;
                }
                let (src, dst) = (
                    &other.values[k * n..(k + 1) * n],
                    &mut out.values[i * n..(i + 1) * n],
                );
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.n, x.len());
        (0..self.n)
            .map(|i| math::dot(&self.values[i * self.n..(i + 1) * self.n], x))
            .collect()
    }

    pub fn scale(&self, a: f64) -> DenseMatrix {
        DenseMatrix {
            n: self.n,
            values: self.values.iter().map(|v| v * a).collect(),
        }
    }

    /// `self + a * other`
    pub fn add_scaled(&self, a: f64, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.n, other.n);
        DenseMatrix {
            n: self.n,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(x, y)| x + a * y)
                .collect(),
        }
    }

    pub fn transpose(&self) -> DenseMatrix {
        DenseMatrix::from_fn(self.n, |i, j| self[(j, i)])
    }

    /// Maximum absolute column sum.
    pub fn norm1(&self) -> f64 {
        (0..self.n)
            .map(|j| (0..self.n).map(|i| self[(i, j)].abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn norm_fro(&self) -> f64 {
        math::norm2(&self.values)
    }

    pub fn lu(&self) -> Result<DenseLu> {
        DenseLu::new(self)
    }

    pub fn inverse(&self) -> Result<DenseMatrix> {
        let lu = self.lu()?;
        let mut inv = DenseMatrix::zeros(self.n);
        let mut e = vec![0.0; self.n];
        for j in 0..self.n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            let col = lu.solve(&e);
            for i in 0..self.n {
                inv[(i, j)] = col[i];
            }
        }
        Ok(inv)
    }

    /// `e^self` by scaling and squaring with a diagonal Padé approximant of
    /// degree 3, 5, 7, 9 or 13 chosen from the 1-norm.
    pub fn expm(&self) -> Result<DenseMatrix> {
        if !self.all_finite() {
            return Err(Error::NonFinite);
        }
        let norm = self.norm1();
        for &(deg, theta) in &PADE_THETA {
            if norm <= theta {
                return pade(self, deg);
            }
        }
        let s = math::ceil(math::log2(norm / THETA_13)).max(0.0) as i32;
        let scaled = self.scale(libm::ldexp(1.0, -s));
        let mut r = pade(&scaled, 13)?;
        for _ in 0..s {
            r = r.matmul(&r);
        }
        Ok(r)
    }

    /// `phi_k(self)` for `k` in `{1, 2}`, read off the top-right block of the
    /// exponential of the block matrix `[[M, I, 0], [0, 0, I], [0, 0, 0]]`
    /// truncated to `k + 1` block rows.
    pub fn phi(&self, k: usize) -> Result<DenseMatrix> {
        if !(1..=2).contains(&k) {
            return Err(Error::InvalidArgument("phi order must be 1 or 2"));
        }
        if !self.all_finite() {
            return Err(Error::NonFinite);
        }
        let n = self.n;
        let big = (k + 1) * n;
        let mut aug = DenseMatrix::zeros(big);
        for i in 0..n {
            for j in 0..n {
                aug[(i, j)] = self[(i, j)];
            }
        }
        for b in 0..k {
            for i in 0..n {
                aug[(b * n + i, (b + 1) * n + i)] = 1.0;
            }
        }
        let e = aug.expm()?;
        Ok(DenseMatrix::from_fn(n, |i, j| e[(i, k * n + j)]))
    }

    /// `phi_k(self) b` through the `(n + k)`-dimensional augmentation
    /// `[[M, b, 0], [0, 0, 1], [0, 0, 0]]`.
    pub fn phi_apply(&self, k: usize, b: &[f64]) -> Result<Vec<f64>> {
        if k == 0 {
            return Ok(self.expm()?.mul_vec(b));
        }
        if b.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: b.len(),
            });
        }
        let n = self.n;
        let mut aug = DenseMatrix::zeros(n + k);
        for i in 0..n {
            for j in 0..n {
                aug[(i, j)] = self[(i, j)];
            }
            aug[(i, n)] = b[i];
        }
        for j in 0..k.saturating_sub(1) {
            aug[(n + j, n + j + 1)] = 1.0;
        }
        let e = aug.expm()?;
        Ok((0..n).map(|i| e[(i, n + k - 1)]).collect())
    }
}

/// Free-function form of [`DenseMatrix::expm`].
pub fn dense_expm(m: &DenseMatrix) -> Result<DenseMatrix> {
    m.expm()
}

/// Free-function form of [`DenseMatrix::phi`].
pub fn dense_phi(k: usize, m: &DenseMatrix) -> Result<DenseMatrix> {
    m.phi(k)
}

const THETA_13: f64 = 5.371920351148152;
const PADE_THETA: [(usize, f64); 4] = [
    (3, 1.495585217958292e-2),
    (5, 2.539_398_330_063_23e-1),
    (7, 9.504178996162932e-1),
    (9, 2.097847961257068),
];

const B3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const B5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const B7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const B9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const B13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

fn pade(a: &DenseMatrix, deg: usize) -> Result<DenseMatrix> {
    let n = a.n;
    let ident = DenseMatrix::identity(n);
    let a2 = a.matmul(a);
    let (u, v) = if deg == 13 {
        let b = &B13;
        let a4 = a2.matmul(&a2);
        let a6 = a4.matmul(&a2);
        let inner_u = a6.scale(b[13]).add_scaled(b[11], &a4).add_scaled(b[9], &a2);
        let u = a6
            .matmul(&inner_u)
            .add_scaled(b[7], &a6)
            .add_scaled(b[5], &a4)
            .add_scaled(b[3], &a2)
            .add_scaled(b[1], &ident);
        let u = a.matmul(&u);
        let inner_v = a6.scale(b[12]).add_scaled(b[10], &a4).add_scaled(b[8], &a2);
        let v = a6
            .matmul(&inner_v)
            .add_scaled(b[6], &a6)
            .add_scaled(b[4], &a4)
            .add_scaled(b[2], &a2)
            .add_scaled(b[0], &ident);
        (u, v)
    } else {
        let b: &[f64] = match deg {
            3 => &B3,
            5 => &B5,
            7 => &B7,
            _ => &B9,
        };
        // even powers A^0, A^2, ..., A^(deg-1)
        let mut powers = vec![ident.clone(), a2.clone()];
        while powers.len() <= deg / 2 {
            let next = powers.last().unwrap().matmul(&a2);
            powers.push(next);
        }
        let mut u = DenseMatrix::zeros(n);
        let mut v = DenseMatrix::zeros(n);
        for (k, p) in powers.iter().enumerate().take(deg / 2 + 1) {
            u = u.add_scaled(b[2 * k + 1], p);
            v = v.add_scaled(b[2 * k], p);
        }
        (a.matmul(&u), v)
    };
    let lhs = v.add_scaled(-1.0, &u);
    let rhs = v.add_scaled(1.0, &u);
    let lu = lhs.lu()?;
    let mut out = DenseMatrix::zeros(n);
    for j in 0..n {
        let col = lu.solve(&rhs.column(j));
        for i in 0..n {
            out[(i, j)] = col[i];
        }
    }
    Ok(out)
}

/// Dense LU with partial pivoting.
#[derive(Debug, Clone)]
pub struct DenseLu {
    lu: DenseMatrix,
    perm: Vec<usize>,
}

impl DenseLu {
    pub fn new(a: &DenseMatrix) -> Result<Self> {
        if !a.all_finite() {
            return Err(Error::NonFinite);
        }
        let n = a.n;
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (p, pmax) = (k..n)
                .map(|i| (i, lu[(i, k)].abs()))
                .fold((k, -1.0), |best, c| if c.1 > best.1 { c } else { best });
            if pmax == 0.0 {
                return Err(Error::SingularMatrix { pivot: k });
            }
            if p != k {
                perm.swap(p, k);
                for j in 0..n {
                    lu.values.swap(p * n + j, k * n + j);
                }
            }
            let d = lu[(k, k)];
            for i in k + 1..n {
                let f = lu[(i, k)] / d;
                lu[(i, k)] = f;
                if f != 0.0 {
                    for j in k + 1..n {
                        let ukj = lu[(k, j)];
                        lu[(i, j)] -= f * ukj;
                    }
                }
            }
        }
        Ok(DenseLu { lu, perm })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.lu.n;
        let mut y: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = y[i];
            for j in 0..i {
                s -= self.lu[(i, j)] * y[j];
            }
            y[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for j in i + 1..n {
                s -= self.lu[(i, j)] * y[j];
            }
            y[i] = s / self.lu[(i, i)];
        }
        y
    }
}
