//! Matrix-exponential-vector products in the invert Krylov subspace.
//!
//! With `J = -C^{-1} G` the subspace is built on `A = J^{-1} = -G^{-1} C`, so
//! each Arnoldi step costs one product with `C` and one solve with the
//! factorized `G`. `C` is never inverted and may be singular.
//!
//! When `C` has empty rows the system is a DAE and `e^{hJ}` is understood as
//! its flow, which maps a start vector `v` to `e^{hJ} P v` where `P` projects
//! out the null space of `C` while keeping `C v` fixed. Those systems use a
//! start vector of `A v`: the basis then never contains null directions and
//!
//! ```text
//! e^{hJ} P v  ~=  beta V H^{-1} e^{h H^{-1}} e1,   beta = |A v|.
//! ```

use alloc::vec;
use alloc::vec::Vec;

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::lu::Factorization;
use crate::math;
use crate::sparse::CsrMatrix;

/// Reduced matrices with a 1-norm condition number above this are rejected.
pub const MAX_REDUCED_CONDITION: f64 = 1e12;

/// The convergence statistic is the largest residual over the times
/// `h, h/2, ..., h/2^(RESIDUAL_SAMPLES-1)`.
pub const RESIDUAL_SAMPLES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MevpConfig {
    /// Residual tolerance, relative to `|v|_2 |G|_inf` (or `|C|_inf` for the
    /// standard subspace).
    pub eps: f64,
    pub m_max: usize,
    /// Happy breakdown when `h_{j+1,j} <= breakdown_tol |w|` before orthogonalization.
    pub breakdown_tol: f64,
    /// Test the residual every `check_stride` Arnoldi steps.
    pub check_stride: usize,
    /// Record a per-iteration trace in the returned basis.
    pub trace: bool,
}

impl Default for MevpConfig {
    fn default() -> Self {
        MevpConfig {
            eps: 1e-7,
            m_max: 100,
            breakdown_tol: 1e-12,
            check_stride: 1,
            trace: false,
        }
    }
}

impl MevpConfig {
    pub fn with_eps(eps: f64) -> Self {
        MevpConfig {
            eps,
            ..MevpConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::InvalidArgument("Krylov eps must be positive"));
        }
        if self.m_max == 0 || self.check_stride == 0 {
            return Err(Error::InvalidArgument(
                "m_max and check_stride must be at least 1",
            ));
        }
        if !(self.breakdown_tol >= 0.0) {
            return Err(Error::InvalidArgument(
                "breakdown tolerance must be nonnegative",
            ));
        }
        Ok(())
    }
}

/// One row of the convergence trace.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TraceRow {
    pub j: usize,
    pub h_sub: f64,
    pub residual: f64,
    pub h_next: f64,
}

/// The operator `A = -G^{-1} C` with everything needed to apply it and to
/// measure residuals.
#[derive(Debug, Clone, Copy)]
pub struct InvertOperator<'a> {
    g: &'a CsrMatrix,
    g_lu: &'a Factorization,
    c: &'a CsrMatrix,
    g_norm: f64,
    algebraic: bool,
}

impl<'a> InvertOperator<'a> {
    pub fn new(g: &'a CsrMatrix, g_lu: &'a Factorization, c: &'a CsrMatrix) -> Result<Self> {
        let n = g.n_rows();
        for (expected, found) in [
            (n, g.n_cols()),
            (n, c.n_rows()),
            (n, c.n_cols()),
            (n, g_lu.dim()),
        ] {
            if expected != found {
                return Err(Error::DimensionMismatch { expected, found });
            }
        }
        Ok(InvertOperator {
            g,
            g_lu,
            c,
            g_norm: g.norm_inf(),
            algebraic: !c.empty_rows().is_empty(),
        })
    }

    pub fn dim(&self) -> usize {
        self.g.n_rows()
    }

    pub fn g(&self) -> &'a CsrMatrix {
        self.g
    }

    pub fn c(&self) -> &'a CsrMatrix {
        self.c
    }

    pub fn g_lu(&self) -> &'a Factorization {
        self.g_lu
    }

    /// True when `C` has empty rows, i.e. some unknowns are algebraic.
    pub fn has_algebraic_rows(&self) -> bool {
        self.algebraic
    }

    /// `-G^{-1} (C v)`.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        let cv = self.c.spmv(v)?;
        let mut w = self.g_lu.solve(&cv)?;
        for x in &mut w {
            *x = -*x;
        }
        Ok(w)
    }

    /// `G^{-1} b`.
    pub fn solve_g(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.g_lu.solve(b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum BasisKind {
    /// Started from `v`; approximates `e^{hJ} v`.
    Invert,
    /// Started from `A v`; approximates `e^{hJ} P v`.
    InvertProjected,
    /// Standard subspace on `J`; approximates `e^{hJ} v`.
    Standard,
}

/// Arnoldi data retained after convergence so the product can be re-evaluated
/// at any smaller step without touching the operator.
#[derive(Debug, Clone)]
pub struct KrylovBasis {
    kind: BasisKind,
    /// `m + 1` orthonormal columns; the last is zero after a happy breakdown.
    v: Vec<Vec<f64>>,
    /// Leading `m x m` block of the Hessenberg matrix.
    h: DenseMatrix,
    h_next: f64,
    /// `H^{-1}` for invert bases, `H` itself for the standard one.
    exp_arg: DenseMatrix,
    beta: f64,
    h_sub: f64,
    residual: f64,
    /// Exact copy of the caller's vector, returned for a zero step.
    origin: Vec<f64>,
    trace: Vec<TraceRow>,
}

impl KrylovBasis {
    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    /// Accepted dimension.
    pub fn m(&self) -> usize {
        self.h.n()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn h_sub(&self) -> f64 {
        self.h_sub
    }

    /// Convergence statistic at `h_sub`: the largest residual norm over the
    /// sampled times in `(0, h_sub]`.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    /// `h_{m+1,m}`; zero after a happy breakdown.
    pub fn h_next(&self) -> f64 {
        self.h_next
    }

    pub fn hessenberg(&self) -> &DenseMatrix {
        &self.h
    }

    /// Extended `(m + 1) x m` Hessenberg matrix, row-major.
    pub fn hbar(&self) -> Vec<Vec<f64>> {
        let m = self.m();
        let mut rows: Vec<Vec<f64>> = (0..m)
            .map(|i| (0..m).map(|j| self.h[(i, j)]).collect())
            .collect();
        let mut last = vec![0.0; m];
        if m > 0 {
            last[m - 1] = self.h_next;
        }
        rows.push(last);
        rows
    }

    /// Basis columns `v_1 .. v_{m+1}`.
    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.v
    }

    pub fn trace(&self) -> &[TraceRow] {
        &self.trace
    }

    /// `|V^T V - I|_F` over all `m + 1` columns (`m` after a breakdown).
    pub fn orthonormality_error(&self) -> f64 {
        let cols: Vec<&Vec<f64>> = self
            .v
            .iter()
            .filter(|c| c.iter().any(|&x| x != 0.0))
            .collect();
        let mut s = 0.0;
        for (i, a) in cols.iter().enumerate() {
            for (j, b) in cols.iter().enumerate() {
                let d = math::dot(a, b) - if i == j { 1.0 } else { 0.0 };
                s += d * d;
            }
        }
        math::sqrt(s)
    }

    /// `|A V_m - V_m H_m - h_{m+1,m} v_{m+1} e_m^T|_F` with `A` applied
    /// through the operator. Only meaningful for invert bases.
    pub fn arnoldi_relation_error(&self, op: &InvertOperator<'_>) -> Result<f64> {
        let m = self.m();
        let mut s = 0.0;
        for j in 0..m {
            let mut r = op.apply(&self.v[j])?;
            for i in 0..m {
                math::axpy(-self.h[(i, j)], &self.v[i], &mut r);
            }
            if j + 1 == m {
                math::axpy(-self.h_next, &self.v[m], &mut r);
            }
            s += r.iter().map(|x| x * x).sum::<f64>();
        }
        Ok(math::sqrt(s))
    }

    fn combine(&self, coef: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.origin.len()];
        for (c, col) in coef.iter().zip(&self.v) {
            math::axpy(self.beta * c, col, &mut out);
        }
        out
    }

    fn check_step(&self, h_new: f64) -> Result<()> {
        if !(h_new >= 0.0) || !h_new.is_finite() {
            return Err(Error::InvalidArgument(
                "step must be finite and nonnegative",
            ));
        }
        if h_new > self.h_sub {
            return Err(Error::StepBeyondBasis {
                h_new,
                h_sub: self.h_sub,
            });
        }
        Ok(())
    }

    /// Reduced coefficients of the product at step `t`.
    fn coefficients(&self, t: f64) -> Result<Vec<f64>> {
        let e1 = unit(self.m(), 0);
        let y = self.exp_arg.scale(t).expm()?.mul_vec(&e1);
        Ok(match self.kind {
            BasisKind::InvertProjected => self.exp_arg.mul_vec(&y),
            _ => y,
        })
    }

    /// The product at `h_new <= h_sub`, using only stored data.
    pub fn eval(&self, h_new: f64) -> Result<Vec<f64>> {
        self.check_step(h_new)?;
        if self.m() == 0 || (h_new == 0.0 && self.kind != BasisKind::InvertProjected) {
            return Ok(self.origin.clone());
        }
        Ok(self.combine(&self.coefficients(h_new)?))
    }

    /// `e^{hJ} P v - P v`, evaluated in the reduced space so it stays
    /// accurate when `h` is tiny compared with the time constants.
    pub fn eval_delta(&self, h_new: f64) -> Result<Vec<f64>> {
        self.check_step(h_new)?;
        let m = self.m();
        if m == 0 || h_new == 0.0 {
            return Ok(vec![0.0; self.origin.len()]);
        }
        // (e^X - I) e1 = X phi_1(X) e1
        let x = self.exp_arg.scale(h_new);
        let d = x.mul_vec(&x.phi_apply(1, &unit(m, 0))?);
        let coef = match self.kind {
            BasisKind::InvertProjected => self.exp_arg.mul_vec(&d),
            _ => d,
        };
        Ok(self.combine(&coef))
    }

    /// Residual norm for reduced coefficients `y = e^{tX} e1`.
    fn residual_from(&self, y: Vec<f64>, tail_norm: f64) -> f64 {
        let m = self.m();
        let s = match self.kind {
            BasisKind::Standard => y[m - 1],
            BasisKind::Invert => self.exp_arg.mul_vec(&y)[m - 1],
            BasisKind::InvertProjected => {
                let once = self.exp_arg.mul_vec(&y);
                self.exp_arg.mul_vec(&once)[m - 1]
            }
        };
        (self.beta * self.h_next * s).abs() * tail_norm
    }

    /// Residual norm at step `t` given `|G v_{m+1}|` (or `|C v_{m+1}|`).
    fn residual_with(&self, t: f64, tail_norm: f64) -> Result<f64> {
        if self.m() == 0 || self.h_next == 0.0 {
            return Ok(0.0);
        }
        let y = self.exp_arg.scale(t).expm()?.column(0);
        Ok(self.residual_from(y, tail_norm))
    }

    /// Largest residual over `t / 2^k`, `k < RESIDUAL_SAMPLES`. A small residual
    /// at `t` alone can hide an unconverged slow mode whose error was
    /// committed earlier in the step.
    fn residual_scan(&self, t: f64, tail_norm: f64) -> Result<f64> {
        if self.m() == 0 || self.h_next == 0.0 {
            return Ok(0.0);
        }
        let first = t / (1u64 << (RESIDUAL_SAMPLES - 1)) as f64;
        let mut e = self.exp_arg.scale(first).expm()?;
        let mut worst = 0.0f64;
        for k in 0..RESIDUAL_SAMPLES {
            worst = worst.max(self.residual_from(e.column(0), tail_norm));
            if k + 1 < RESIDUAL_SAMPLES {
                e = e.matmul(&e);
            }
        }
        Ok(worst)
    }
}

impl KrylovBasis {
    /// `|y_m(t) - y_{m-1}(t)|_2`, the change from the approximation of one
    /// dimension less. Infinite when there is no such approximation or it
    /// cannot be formed. A fast Ritz value can make the residual vanish while
    /// a slow mode is still missing; the change does not.
    fn iterate_change(&self, t: f64) -> Result<f64> {
        let m = self.m();
        if m < 2 {
            return Ok(f64::INFINITY);
        }
        let prev_arg = match self.kind {
            BasisKind::Standard => self.h.leading(m - 1),
            _ => match checked_inverse(&self.h.leading(m - 1)) {
                Ok(inv) => inv,
                Err(_) => return Ok(f64::INFINITY),
            },
        };
        let reduced = |arg: &DenseMatrix| -> Option<Vec<f64>> {
            let y = arg.scale(t).expm().ok()?.column(0);
            let y = match self.kind {
                BasisKind::InvertProjected => arg.mul_vec(&y),
                _ => y,
            };
            y.iter().all(|x| x.is_finite()).then_some(y)
        };
        let (Some(cur), Some(prev)) = (reduced(&self.exp_arg), reduced(&prev_arg)) else {
            return Ok(f64::INFINITY);
        };
        let mut s = cur[m - 1] * cur[m - 1];
        for (a, b) in cur.iter().zip(&prev) {
            s += (a - b) * (a - b);
        }
        Ok(self.beta * math::sqrt(s))
    }
}

fn unit(m: usize, i: usize) -> Vec<f64> {
    let mut e = vec![0.0; m];
    e[i] = 1.0;
    e
}

/// `H^{-1}` with a 1-norm condition check.
fn checked_inverse(h: &DenseMatrix) -> Result<DenseMatrix> {
    let inv = h.inverse().map_err(|_| Error::SingularReducedMatrix)?;
    if !inv.all_finite() || h.norm1() * inv.norm1() > MAX_REDUCED_CONDITION {
        return Err(Error::SingularReducedMatrix);
    }
    Ok(inv)
}

fn check_start(v: &[f64], n: usize) -> Result<()> {
    if v.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: v.len(),
        });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(())
}

/// Modified Gram-Schmidt of `w` against `basis`, with a second pass when more
/// than half the norm was removed. Returns the final norm.
fn orthogonalize(w: &mut [f64], basis: &[Vec<f64>], coeffs: &mut [f64]) -> (f64, f64) {
    let pre = math::norm2(w);
    for (c, q) in coeffs.iter_mut().zip(basis) {
        *c = math::dot(w, q);
        math::axpy(-*c, q, w);
    }
    let mut norm = math::norm2(w);
    if norm < pre * core::f64::consts::FRAC_1_SQRT_2 {
        for (c, q) in coeffs.iter_mut().zip(basis) {
            let d = math::dot(w, q);
            *c += d;
            math::axpy(-d, q, w);
        }
        norm = math::norm2(w);
    }
    (pre, norm)
}

struct Arnoldi<'c> {
    kind: BasisKind,
    cfg: &'c MevpConfig,
    /// `|G|_inf` or `|C|_inf`.
    scale: f64,
    /// Upper bound on the dimension of the Krylov space.
    max_dim: usize,
}

impl Arnoldi<'_> {
    /// Runs Arnoldi from `start` with operator `apply`, stopping at the first
    /// residual below tolerance. `tail` maps `v_{m+1}` to the matrix the
    /// residual is measured with.
    fn run(
        &self,
        start: &[f64],
        origin: &[f64],
        h: f64,
        mut apply: impl FnMut(&[f64]) -> Result<Vec<f64>>,
        tail: impl Fn(&[f64]) -> Result<f64>,
    ) -> Result<(Vec<f64>, KrylovBasis)> {
        let cfg = self.cfg;
        let beta = math::norm2(start);
        if beta == 0.0 {
            return Err(Error::ZeroStartVector);
        }
        // relative to the vector being propagated, not the projected start
        let tol = cfg.eps * math::norm2(origin) * self.scale;
        let mut vs: Vec<Vec<f64>> = vec![start.iter().map(|x| x / beta).collect()];
        // columns of the extended Hessenberg matrix, column j has j + 2 entries
        let mut cols: Vec<Vec<f64>> = Vec::new();
        let mut trace = Vec::new();
        let mut last_residual = f64::INFINITY;
        for j in 0..cfg.m_max {
            let mut w = apply(&vs[j])?;
            let mut col = vec![0.0; j + 2];
            let (pre, norm) = orthogonalize(&mut w, &vs, &mut col[..j + 1]);
            let m = j + 1;
            let happy = norm <= cfg.breakdown_tol * pre || norm == 0.0;
            // the subspace cannot grow past `max_dim`; what is left of `w` is roundoff
            let exhausted = !happy && m >= self.max_dim;
            let breakdown = happy || exhausted;
            col[m] = if breakdown { 0.0 } else { norm };
            cols.push(col);
            let next = if breakdown {
                vec![0.0; w.len()]
            } else {
                w.iter().map(|x| x / norm).collect()
            };
            if !(breakdown || m % cfg.check_stride == 0 || m == cfg.m_max) {
                vs.push(next);
                continue;
            }
            let hm = DenseMatrix::from_fn(m, |r, c| if r <= c + 1 { cols[c][r] } else { 0.0 });
            let exp_arg = match self.kind {
                BasisKind::Standard => hm.clone(),
                _ => match checked_inverse(&hm) {
                    Ok(inv) => inv,
                    // an interior Ritz value can sit at zero; later ones move away
                    Err(_) if !breakdown && m < cfg.m_max => {
                        vs.push(next);
                        last_residual = f64::INFINITY;
                        continue;
                    }
                    Err(e) => return Err(e),
                },
            };
            vs.push(next);
            let basis = KrylovBasis {
                kind: self.kind,
                v: vs,
                h: hm,
                h_next: cols[j][m],
                exp_arg,
                beta,
                h_sub: h,
                residual: 0.0,
                origin: origin.to_vec(),
                trace: Vec::new(),
            };
            let residual = if norm == 0.0 {
                0.0
            } else if breakdown {
                // converged regardless; report what the truncated remnant leaves
                let mut probe = basis.clone();
                probe.h_next = norm;
                probe.v[m] = w.iter().map(|x| x / norm).collect();
                let tail_norm = tail(&probe.v[m])?;
                probe.residual_scan(h, tail_norm).unwrap_or(0.0)
            } else {
                // a Ritz value near zero can overflow the reduced exponential
                match basis.residual_scan(h, tail(&basis.v[m])?) {
                    Err(Error::NonFinite) => f64::INFINITY,
                    other => other?,
                }
            };
            if cfg.trace {
                trace.push(TraceRow {
                    j: m,
                    h_sub: h,
                    residual,
                    h_next: basis.h_next,
                });
            }
            let converged = residual <= tol
                && (breakdown || basis.iterate_change(h)? <= cfg.eps * math::norm2(origin));
            if converged {
                let mut basis = basis;
                basis.residual = residual;
                basis.trace = trace;
                let out = basis.eval(h)?;
                if out.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite);
                }
                return Ok((out, basis));
            }
            last_residual = residual;
            vs = basis.v;
        }
        Err(Error::NoConvergence {
            residual: last_residual,
            dim: cfg.m_max,
        })
    }
}

/// Trivial basis for a zero step: reproduces `v` and nothing else.
fn identity_basis(v: &[f64], kind: BasisKind) -> KrylovBasis {
    let beta = math::norm2(v);
    KrylovBasis {
        kind,
        v: vec![v.iter().map(|x| x / beta).collect()],
        h: DenseMatrix::zeros(0),
        h_next: 0.0,
        exp_arg: DenseMatrix::zeros(0),
        beta,
        h_sub: 0.0,
        residual: 0.0,
        origin: v.to_vec(),
        trace: Vec::new(),
    }
}

fn invert_iks(
    op: &InvertOperator<'_>,
    v: &[f64],
    cfg: &MevpConfig,
    h: f64,
    projected: bool,
) -> Result<(Vec<f64>, KrylovBasis)> {
    cfg.validate()?;
    check_start(v, op.dim())?;
    if !(h >= 0.0 && h.is_finite()) {
        return Err(Error::InvalidArgument(
            "step must be finite and nonnegative",
        ));
    }
    if v.iter().all(|&x| x == 0.0) {
        return Err(Error::ZeroStartVector);
    }
    let kind = if projected {
        BasisKind::InvertProjected
    } else {
        BasisKind::Invert
    };
    if h == 0.0 && !projected {
        return Ok((v.to_vec(), identity_basis(v, kind)));
    }
    let start = if projected { op.apply(v)? } else { v.to_vec() };
    if projected && start.iter().all(|&x| x == 0.0) {
        // v lies entirely in the null space of C: the flow maps it to zero
        let mut basis = identity_basis(v, kind);
        basis.h_sub = h;
        basis.beta = 0.0;
        return Ok((vec![0.0; v.len()], basis));
    }
    // a projected start stays in the range of G^{-1} C
    let max_dim = if projected {
        op.dim() - op.c.empty_rows().len()
    } else {
        op.dim()
    };
    let arnoldi = Arnoldi {
        kind,
        cfg,
        scale: op.g_norm,
        max_dim,
    };
    arnoldi.run(
        &start,
        v,
        h,
        |x| op.apply(x),
        |x| Ok(math::norm2(&op.g.spmv(x)?)),
    )
}

/// `e^{hJ} v` with `J = -C^{-1} G`, from the invert Krylov subspace.
///
/// Systems whose `C` has empty rows use the projected start (see the module
/// docs); otherwise Arnoldi starts from `v` itself and falls back to the
/// projected start only if the reduced matrix turns out singular.
pub fn mevp_iks(
    op: &InvertOperator<'_>,
    v: &[f64],
    cfg: &MevpConfig,
    h: f64,
) -> Result<(Vec<f64>, KrylovBasis)> {
    if op.has_algebraic_rows() {
        return invert_iks(op, v, cfg, h, true);
    }
    match invert_iks(op, v, cfg, h, false) {
        Err(Error::SingularReducedMatrix) => invert_iks(op, v, cfg, h, true),
        other => other,
    }
}

/// Arnoldi from `v` itself regardless of the structure of `C`.
pub fn mevp_iks_plain(
    op: &InvertOperator<'_>,
    v: &[f64],
    cfg: &MevpConfig,
    h: f64,
) -> Result<(Vec<f64>, KrylovBasis)> {
    invert_iks(op, v, cfg, h, false)
}

/// Arnoldi from `A v`; approximates the DAE flow `e^{hJ} P v`.
pub fn mevp_iks_projected(
    op: &InvertOperator<'_>,
    v: &[f64],
    cfg: &MevpConfig,
    h: f64,
) -> Result<(Vec<f64>, KrylovBasis)> {
    invert_iks(op, v, cfg, h, true)
}

/// Residual norm `|beta h_{m+1,m} s| |G v_{m+1}|_2` of an invert basis at step `h`,
/// where `s = e_m^T H^{-1} e^{h H^{-1}} e1` (one more `H^{-1}` for projected bases).
pub fn mevp_residual(basis: &KrylovBasis, g: &CsrMatrix, h: f64) -> Result<f64> {
    if basis.kind == BasisKind::Standard {
        return Err(Error::InvalidArgument("residual needs an invert basis"));
    }
    if !(h >= 0.0 && h.is_finite()) {
        return Err(Error::InvalidArgument(
            "step must be finite and nonnegative",
        ));
    }
    let m = basis.m();
    if m == 0 || basis.h_next == 0.0 {
        return Ok(0.0);
    }
    let tail = math::norm2(&g.spmv(&basis.v[m])?);
    basis.residual_with(h, tail)
}

impl KrylovBasis {
    /// Whether this invert basis can serve step `h` without new operator
    /// applications: `h <= h_sub` and the residual at `h` still passes.
    pub fn covers(&self, op: &InvertOperator<'_>, cfg: &MevpConfig, h: f64) -> Result<bool> {
        if h > self.h_sub || self.kind == BasisKind::Standard {
            return Ok(false);
        }
        let m = self.m();
        if m == 0 || self.h_next == 0.0 {
            return Ok(true);
        }
        let tail = math::norm2(&op.g.spmv(&self.v[m])?);
        let v_norm = math::norm2(&self.origin);
        Ok(self.residual_scan(h, tail)? <= cfg.eps * v_norm * op.g_norm
            && self.iterate_change(h)? <= cfg.eps * v_norm)
    }
}

/// Re-evaluates a converged basis at `h_new <= h_sub`.
pub fn eval_at_scaled_h(basis: &KrylovBasis, h_new: f64) -> Result<Vec<f64>> {
    basis.eval(h_new)
}

/// `phi_1(hJ) v = -(1/h) G^{-1} C (e^{hJ} v - v)`.
pub fn phi1_apply(
    op: &InvertOperator<'_>,
    v: &[f64],
    cfg: &MevpConfig,
    h: f64,
) -> Result<Vec<f64>> {
    check_start(v, op.dim())?;
    if v.iter().all(|&x| x == 0.0) {
        return Ok(vec![0.0; v.len()]);
    }
    if h == 0.0 {
        return Ok(v.to_vec());
    }
    let (_, basis) = mevp_iks(op, v, cfg, h)?;
    let delta = basis.eval_delta(h)?;
    let mut out = op.apply(&delta)?;
    for x in &mut out {
        *x /= h;
    }
    Ok(out)
}

/// `phi_2(hJ) v = (1/h^2) (G^{-1} C)^2 (e^{hJ} v - v) + (1/h) G^{-1} C v`.
pub fn phi2_apply(
    op: &InvertOperator<'_>,
    v: &[f64],
    cfg: &MevpConfig,
    h: f64,
) -> Result<Vec<f64>> {
    check_start(v, op.dim())?;
    if v.iter().all(|&x| x == 0.0) {
        return Ok(vec![0.0; v.len()]);
    }
    if h == 0.0 {
        return Ok(v.iter().map(|x| 0.5 * x).collect());
    }
    let (_, basis) = mevp_iks(op, v, cfg, h)?;
    let delta = basis.eval_delta(h)?;
    let first = op.apply(&delta)?;
    let mut out = op.apply(&first)?;
    let av = op.apply(v)?;
    for (o, a) in out.iter_mut().zip(&av) {
        *o = *o / (h * h) - a / h;
    }
    Ok(out)
}

/// `e^{hJ} v` from the standard Krylov subspace of `J = -C^{-1} G`. Factorizes
/// `C`, so it fails with [`Error::SingularMatrix`] whenever `C` is singular.
pub fn mevp_standard(
    c: &CsrMatrix,
    g: &CsrMatrix,
    v: &[f64],
    cfg: &MevpConfig,
    h: f64,
) -> Result<(Vec<f64>, KrylovBasis)> {
    cfg.validate()?;
    let n = g.n_rows();
    if c.n_rows() != n || c.n_cols() != n || g.n_cols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: c.n_rows(),
        });
    }
    check_start(v, n)?;
    let c_lu = Factorization::new(c)?;
    if v.iter().all(|&x| x == 0.0) {
        return Err(Error::ZeroStartVector);
    }
    if h == 0.0 {
        return Ok((v.to_vec(), identity_basis(v, BasisKind::Standard)));
    }
    let arnoldi = Arnoldi {
        kind: BasisKind::Standard,
        cfg,
        scale: c.norm_inf(),
        max_dim: n,
    };
    arnoldi.run(
        v,
        v,
        h,
        |x| {
            let mut w = c_lu.solve(&g.spmv(x)?)?;
            for y in &mut w {
                *y = -*y;
            }
            Ok(w)
        },
        |x| Ok(math::norm2(&c.spmv(x)?)),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lu::lu_factor;

    struct Pair {
        c: CsrMatrix,
        g: CsrMatrix,
        g_lu: Factorization,
    }

    impl Pair {
        fn new(c: CsrMatrix, g: CsrMatrix) -> Self {
            let g_lu = lu_factor(&g).unwrap();
            Pair { c, g, g_lu }
        }
        fn op(&self) -> InvertOperator<'_> {
            InvertOperator::new(&self.g, &self.g_lu, &self.c).unwrap()
        }
    }

    fn diag_pair() -> Pair {
        Pair::new(
            CsrMatrix::identity(3),
            CsrMatrix::diagonal(&[1.0, 2.0, 3.0]),
        )
    }

    /// Dense `expm(-h C^{-1} G) v` for a nonsingular pair.
    fn dense_oracle(p: &Pair, v: &[f64], h: f64) -> Vec<f64> {
        let n = v.len();
        let cd = p.c.to_dense();
        let gd = p.g.to_dense();
        let c_inv = DenseMatrix::from_fn(n, |i, j| cd[i][j]).inverse().unwrap();
        let gm = DenseMatrix::from_fn(n, |i, j| gd[i][j]);
        c_inv.matmul(&gm).scale(-h).expm().unwrap().mul_vec(v)
    }

    fn tridiag_pair(n: usize) -> Pair {
        let mut c = vec![];
        let mut g = vec![];
        for i in 0..n {
            c.push((i, i, 1.0 + 0.1 * i as f64));
            g.push((i, i, 2.5));
            if i + 1 < n {
                g.push((i, i + 1, -1.0));
                g.push((i + 1, i, -1.0));
                c.push((i, i + 1, 0.05));
                c.push((i + 1, i, 0.05));
            }
        }
        Pair::new(
            CsrMatrix::from_triplets(n, n, &c),
            CsrMatrix::from_triplets(n, n, &g),
        )
    }

    fn dist(a: &[f64], b: &[f64]) -> f64 {
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        math::norm2(&d)
    }

    #[test]
    fn invariant_subspace_breaks_down_at_one() {
        let p = diag_pair();
        let (out, basis) =
            mevp_iks(&p.op(), &[1.0, 0.0, 0.0], &MevpConfig::default(), 0.7).unwrap();
        assert_eq!(basis.m(), 1);
        assert_eq!(basis.residual(), 0.0);
        assert!((out[0] - libm::exp(-0.7)).abs() < 1e-15);
        assert_eq!(&out[1..], &[0.0, 0.0]);
    }

    #[test]
    fn zero_step_returns_start() {
        let p = tridiag_pair(6);
        let v = [1.0, -2.0, 0.5, 0.25, 3.0, -1.0];
        let (out, basis) = mevp_iks(&p.op(), &v, &MevpConfig::default(), 0.0).unwrap();
        assert_eq!(out, v);
        assert_eq!(eval_at_scaled_h(&basis, 0.0).unwrap(), v);
    }

    #[test]
    fn zero_vector_is_rejected() {
        let p = diag_pair();
        let err = mevp_iks(&p.op(), &[0.0; 3], &MevpConfig::default(), 1.0).unwrap_err();
        assert_eq!(err, Error::ZeroStartVector);
    }

    #[test]
    fn matches_dense_exponential() {
        let p = tridiag_pair(12);
        let v: Vec<f64> = (0..12).map(|i| libm::sin(i as f64 + 0.3)).collect();
        let cfg = MevpConfig::default();
        for &h in &[0.01, 0.3, 2.0, 20.0] {
            let (out, basis) = mevp_iks(&p.op(), &v, &cfg, h).unwrap();
            let err = dist(&out, &dense_oracle(&p, &v, h));
            assert!(err <= 10.0 * cfg.eps * math::norm2(&v), "h = {h}: {err}");
            assert!(basis.orthonormality_error() < 1e-10);
            let rel = basis.arnoldi_relation_error(&p.op()).unwrap();
            assert!(rel <= 1e-9 * basis.hessenberg().norm_fro());
        }
    }

    #[test]
    fn residual_for_two_dimensional_basis() {
        let p = tridiag_pair(5);
        let v = [1.0, 0.0, 0.0, 0.0, 0.0];
        let cfg = MevpConfig {
            m_max: 2,
            check_stride: 2,
            eps: 1e30,
            ..MevpConfig::default()
        };
        let (_, basis) = mevp_iks(&p.op(), &v, &cfg, 0.5).unwrap();
        assert_eq!(basis.m(), 2);
        let hinv = basis.hessenberg().inverse().unwrap();
        let tail = math::norm2(&p.g.spmv(&basis.vectors()[2]).unwrap());
        for t in [0.0, 0.5] {
            let s = hinv.matmul(&hinv.scale(t).expm().unwrap())[(1, 0)];
            let expected = (basis.beta() * basis.h_next() * s).abs() * tail;
            let r = mevp_residual(&basis, &p.g, t).unwrap();
            assert!((r - expected).abs() <= 1e-13 * expected, "{r} {expected}");
        }
    }

    #[test]
    fn fast_ritz_value_does_not_stop_early() {
        // v sits mostly on a node with tiny capacitance: the first Ritz value is
        // fast and its reduced solution has decayed by h, while the slow mode
        // carried by the first node has not
        let c = CsrMatrix::diagonal(&[1.994826121907414, 0.01569572717682592]);
        let g = CsrMatrix::from_dense(&[
            &[2.2008499157392554, -0.6355108563594382],
            &[-0.6355108563594382, 2.2619882341831223],
        ]);
        let p = Pair::new(c, g);
        let v = [0.14633660145057048, -0.5767877651517233];
        let (y, basis) =
            mevp_iks(&p.op(), &v, &MevpConfig::with_eps(1e-9), 0.4710482036512194).unwrap();
        assert_eq!(basis.m(), 2);
        assert!((y[0] - 0.08994772031286166).abs() < 1e-9, "{y:?}");
        assert!((y[1] - 0.02544993642330329).abs() < 1e-9, "{y:?}");
    }

    #[test]
    fn converged_residual_is_below_tolerance() {
        let p = tridiag_pair(10);
        let v = [1.0; 10];
        let cfg = MevpConfig::default();
        let (_, basis) = mevp_iks(&p.op(), &v, &cfg, 1.0).unwrap();
        let r = mevp_residual(&basis, &p.g, 1.0).unwrap();
        assert!(r <= basis.residual());
        assert!(basis.residual() <= cfg.eps * math::norm2(&v) * p.g.norm_inf());
    }

    #[test]
    fn rescaling_matches_fresh_product() {
        let p = tridiag_pair(15);
        let v: Vec<f64> = (0..15).map(|i| 1.0 / (1.0 + i as f64)).collect();
        let cfg = MevpConfig::with_eps(1e-10);
        let (out, basis) = mevp_iks(&p.op(), &v, &cfg, 1.0).unwrap();
        assert_eq!(eval_at_scaled_h(&basis, 1.0).unwrap(), out);
        let half = eval_at_scaled_h(&basis, 0.5).unwrap();
        let (fresh, _) = mevp_iks(&p.op(), &v, &cfg, 0.5).unwrap();
        assert!(dist(&half, &fresh) <= 1e-10 * math::norm2(&v));
        assert!(matches!(
            eval_at_scaled_h(&basis, 1.5),
            Err(Error::StepBeyondBasis { .. })
        ));
    }

    #[test]
    fn scalar_phi_values() {
        let p = Pair::new(CsrMatrix::identity(1), CsrMatrix::identity(1));
        let cfg = MevpConfig::default();
        let p1 = phi1_apply(&p.op(), &[2.0], &cfg, 1.0).unwrap();
        assert!((p1[0] - 2.0 * 0.6321205588285577).abs() < 1e-14);
        let p2 = phi2_apply(&p.op(), &[2.0], &cfg, 1.0).unwrap();
        assert!((p2[0] - 2.0 * 0.36787944117144233).abs() < 1e-14);
        assert_eq!(phi1_apply(&p.op(), &[0.0], &cfg, 1.0).unwrap(), vec![0.0]);
        assert_eq!(phi2_apply(&p.op(), &[0.0], &cfg, 1.0).unwrap(), vec![0.0]);
    }

    #[test]
    fn phi_small_step_limits() {
        let p = diag_pair();
        let v = [1.0, -1.0, 2.0];
        let cfg = MevpConfig::default();
        let h = 1e-15;
        let p1 = phi1_apply(&p.op(), &v, &cfg, h).unwrap();
        assert!(dist(&p1, &v) <= 1e-6 * math::norm2(&v));
        let p2 = phi2_apply(&p.op(), &v, &cfg, 1e-4).unwrap();
        let half: Vec<f64> = v.iter().map(|x| 0.5 * x).collect();
        assert!(dist(&p2, &half) <= 1e-3 * math::norm2(&v));
    }

    #[test]
    fn phi_matches_dense_on_tridiagonal() {
        let p = tridiag_pair(8);
        let v: Vec<f64> = (0..8).map(|i| libm::cos(i as f64)).collect();
        let cfg = MevpConfig::with_eps(1e-11);
        let h = 0.8;
        let cd = p.c.to_dense();
        let gd = p.g.to_dense();
        let j = DenseMatrix::from_fn(8, |r, c| cd[r][c])
            .inverse()
            .unwrap()
            .matmul(&DenseMatrix::from_fn(8, |r, c| gd[r][c]))
            .scale(-h);
        let o1 = j.phi_apply(1, &v).unwrap();
        let o2 = j.phi_apply(2, &v).unwrap();
        assert!(dist(&phi1_apply(&p.op(), &v, &cfg, h).unwrap(), &o1) < 1e-8);
        assert!(dist(&phi2_apply(&p.op(), &v, &cfg, h).unwrap(), &o2) < 1e-8);
    }

    #[test]
    fn standard_subspace() {
        let p = diag_pair();
        let (out, basis) =
            mevp_standard(&p.c, &p.g, &[0.0, 1.0, 0.0], &MevpConfig::default(), 0.4).unwrap();
        assert_eq!(basis.m(), 1);
        assert!((out[1] - libm::exp(-0.8)).abs() < 1e-15);

        let q = tridiag_pair(10);
        let v = [0.5; 10];
        let cfg = MevpConfig::default();
        let (a, _) = mevp_standard(&q.c, &q.g, &v, &cfg, 0.6).unwrap();
        let (b, _) = mevp_iks(&q.op(), &v, &cfg, 0.6).unwrap();
        assert!(dist(&a, &b) <= 2.0 * cfg.eps * math::norm2(&v));
    }

    #[test]
    fn standard_subspace_needs_nonsingular_c() {
        let c = CsrMatrix::diagonal(&[1.0, 0.0, 1.0]);
        let g = CsrMatrix::diagonal(&[1.0, 1.0, 1.0]);
        let err = mevp_standard(&c, &g, &[1.0; 3], &MevpConfig::default(), 1.0).unwrap_err();
        assert!(matches!(err, Error::SingularMatrix { .. }));
    }

    #[test]
    fn algebraic_rows_follow_dae_flow() {
        // x0' = -(x0 - x1), 0 = -(2 x1 - x0): x1 = x0 / 2, x0' = -x0 / 2
        let c = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0)]);
        let g = CsrMatrix::from_dense(&[&[1.0, -1.0], &[-1.0, 2.0]]);
        let p = Pair::new(c, g);
        let op = p.op();
        assert!(op.has_algebraic_rows());
        let h = 0.9;
        // inconsistent start: x1 is replaced by the consistent value
        let (out, basis) = mevp_iks(&op, &[1.0, 5.0], &MevpConfig::default(), h).unwrap();
        assert_eq!(basis.kind(), BasisKind::InvertProjected);
        let x0 = libm::exp(-h / 2.0);
        assert!((out[0] - x0).abs() < 1e-14);
        assert!((out[1] - x0 / 2.0).abs() < 1e-14);
        // purely algebraic start is annihilated
        let (z, _) = mevp_iks(&op, &[0.0, 1.0], &MevpConfig::default(), h).unwrap();
        assert_eq!(z, vec![0.0, 0.0]);
    }

    #[test]
    fn trace_records_every_check() {
        let p = tridiag_pair(10);
        let cfg = MevpConfig {
            trace: true,
            ..MevpConfig::default()
        };
        let (_, basis) = mevp_iks(&p.op(), &[1.0; 10], &cfg, 1.0).unwrap();
        assert_eq!(basis.trace().len(), basis.m());
        assert_eq!(basis.trace().last().unwrap().residual, basis.residual());
    }

    #[test]
    fn dimension_cap_reports_no_convergence() {
        let p = tridiag_pair(20);
        let v: Vec<f64> = (0..20).map(|i| libm::sin(3.0 * i as f64)).collect();
        let cfg = MevpConfig {
            m_max: 2,
            eps: 1e-14,
            ..MevpConfig::default()
        };
        assert!(matches!(
            mevp_iks(&p.op(), &v, &cfg, 5.0),
            Err(Error::NoConvergence { dim: 2, .. })
        ));
    }
    #[test]
    fn projected_basis_stops_at_capacitive_rank() {
        let n = 6;
        let mut g = vec![];
        for i in 0..n {
            g.push((i, i, 3.0));
            if i + 1 < n {
                g.push((i, i + 1, -1.0));
                g.push((i + 1, i, -1.0));
            }
        }
        let c = CsrMatrix::from_triplets(n, n, &[(1, 1, 1.0), (4, 4, 0.5)]);
        let p = Pair::new(c, CsrMatrix::from_triplets(n, n, &g));
        let v = [1.0, -0.5, 0.25, 2.0, 0.0, 1.5];
        let cfg = MevpConfig {
            eps: 1e-14,
            m_max: 2,
            ..MevpConfig::default()
        };
        let (y, basis) = mevp_iks_projected(&p.op(), &v, &cfg, 0.7).unwrap();
        assert_eq!(basis.m(), 2);
        assert_eq!(basis.h_next(), 0.0);
        assert!(basis.residual() < 1e-12);
        let wide = MevpConfig { m_max: 10, ..cfg };
        let (z, _) = mevp_iks_projected(&p.op(), &v, &wide, 0.7).unwrap();
        assert_eq!(y, z);
    }
}
