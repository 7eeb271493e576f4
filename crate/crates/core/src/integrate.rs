//! DC operating point and transient analysis.
//!
//! Three transient methods share one driver:
//!
//! - [`Method::Benr`]: backward Euler on the charge form, Newton-Raphson with a
//!   fresh factorization of `C/h + G` per iteration, step doubling for error
//!   control.
//! - [`Method::Er`]: exponential Rosenbrock-Euler. Devices are evaluated and
//!   `G_k` factorized once per step. The step is
//!
//!   ```text
//!   x+ = x + (e^{hJ} - I)(v1 + v2) + G^{-1} B du
//!   v1 = x - G^{-1}(F(x) + B u),   v2 = G^{-1} C G^{-1} B du/h
//!   ```
//!
//!   and the nonlinear remainder `dF = F(x+) - F(x)` drives the error estimate
//!   `e = -(e^{hJ} w - w)`, `w = G^{-1} dF`. Rejected steps shrink `h` and reuse
//!   the Krylov basis of `v1 + v2`.
//! - [`Method::Erc`]: ER plus the correction `x+ -= gamma h phi_2(hJ) C^{-1} dF`.

use alloc::vec;
use alloc::vec::Vec;

use crate::circuit::MnaSystem;
use crate::devices::{evaluate, residual_f, Linearization};
use crate::error::{Error, Result};
use crate::krylov::{mevp_iks, InvertOperator, KrylovBasis, MevpConfig, TraceRow};
use crate::lu::{min_degree_order, Factorization};
use crate::math;
use crate::sparse::CsrMatrix;

/// Newton convergence: `|dx| <= NR_RELTOL |x| + NR_ABSTOL`.
pub const NR_RELTOL: f64 = 1e-3;
pub const NR_ABSTOL: f64 = 1e-6;
pub const NR_MAX_ITERS: usize = 50;
const DC_MAX_ITERS: usize = 100;
const DC_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Method {
    Benr,
    Er,
    Erc,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Benr => "BENR",
            Method::Er => "ER",
            Method::Erc => "ERC",
        }
    }
}

/// When an accepted step lets the next one grow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum GrowthRule {
    /// Grow only after a step accepted at its first attempt.
    FirstTry,
    /// Grow whenever the step needed fewer than `grow_threshold` rejections.
    FewRejects,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CorrectionSpec {
    pub gamma: f64,
    pub enabled: bool,
}

impl Default for CorrectionSpec {
    fn default() -> Self {
        CorrectionSpec {
            gamma: 0.1,
            enabled: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StepControl {
    /// Local error budget, infinity norm.
    pub err_budget: f64,
    pub alpha: f64,
    pub beta: f64,
    pub grow_threshold: usize,
    pub growth: GrowthRule,
    pub max_rejects: usize,
    pub krylov: MevpConfig,
    /// Defaults to a fiftieth of the simulated span.
    pub hmax: Option<f64>,
    /// Defaults to `1e-12` of the simulated span.
    pub hmin: Option<f64>,
    pub correction: CorrectionSpec,
    /// Keep `h` at the initial step (clamped to breakpoints) and accept every
    /// step without error control.
    pub fixed_step: bool,
    /// BENR Newton matrix `C/h + G/2` instead of `C/h + G`.
    pub benr_half_g: bool,
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl {
            err_budget: 1e-4,
            alpha: 0.5,
            beta: 2.0,
            grow_threshold: 5,
            growth: GrowthRule::FirstTry,
            max_rejects: 40,
            krylov: MevpConfig::default(),
            hmax: None,
            hmin: None,
            correction: CorrectionSpec::default(),
            fixed_step: false,
            benr_half_g: false,
        }
    }
}

impl StepControl {
    /// Control settings taken from netlist options.
    pub fn from_options(opts: &crate::circuit::SimOptions) -> Self {
        StepControl {
            err_budget: opts.err_budget,
            krylov: MevpConfig {
                eps: opts.krylov_eps,
                m_max: opts.m_max,
                ..MevpConfig::default()
            },
            hmax: opts.hmax,
            hmin: opts.hmin,
            ..StepControl::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0 && self.beta > 1.0) {
            return Err(Error::InvalidArgument("need 0 < alpha < 1 < beta"));
        }
        if !(self.err_budget > 0.0) {
            return Err(Error::InvalidArgument("error budget must be positive"));
        }
        if !(self.correction.gamma >= 0.0) {
            return Err(Error::InvalidArgument(
                "correction gamma must be nonnegative",
            ));
        }
        for h in [self.hmin, self.hmax].into_iter().flatten() {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::InvalidArgument("HMIN and HMAX must be positive"));
            }
        }
        self.krylov.validate()
    }

    /// Concrete `(hmin, hmax)` for a run over `span` seconds.
    pub fn step_bounds(&self, span: f64) -> (f64, f64) {
        let hmax = self.hmax.unwrap_or(span / 50.0);
        let hmin = self.hmin.unwrap_or(span * 1e-12).min(hmax);
        (hmin, hmax)
    }

    fn grows(&self, rejects: usize) -> bool {
        match self.growth {
            GrowthRule::FirstTry => rejects == 0,
            GrowthRule::FewRejects => rejects < self.grow_threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub t: f64,
    pub x: Vec<f64>,
    pub h: f64,
    pub k: usize,
}

/// Per-step instrumentation.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StepRecord {
    pub t: f64,
    pub h_accepted: f64,
    pub lu_count: usize,
    /// Dimension of every Krylov product used by the accepted step.
    pub krylov_dims: Vec<usize>,
    pub nr_iters: usize,
    pub rejects: usize,
    pub err_norm: f64,
    /// Arnoldi trace of the solution product, filled when tracing is enabled.
    #[cfg_attr(
        feature = "serde",
        serde(default, skip_serializing_if = "Vec::is_empty")
    )]
    pub krylov_trace: Vec<TraceRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorEstimate {
    pub e_rr: Vec<f64>,
    pub norm_inf: f64,
    /// `F(x+) - F(x)`.
    pub delta_f: Vec<f64>,
    /// `G^{-1} dF`.
    pub w: Vec<f64>,
    /// Dimension of the Krylov product, `None` when it was skipped.
    pub krylov_dim: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TransientResult {
    pub method: Method,
    /// Sample times, starting with the initial time.
    pub times: Vec<f64>,
    /// Full unknown vector at each sample time.
    pub states: Vec<Vec<f64>>,
    /// One record per accepted step.
    pub records: Vec<StepRecord>,
}

impl TransientResult {
    pub fn final_state(&self) -> &[f64] {
        self.states.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// Time series of unknown `idx`.
    pub fn series(&self, idx: usize) -> Vec<f64> {
        self.states.iter().map(|x| x[idx]).collect()
    }

    /// Unknown `idx` at time `t`, linearly interpolated between samples and
    /// held constant outside them.
    pub fn interpolate(&self, idx: usize, t: f64) -> f64 {
        let ts = &self.times;
        if ts.is_empty() {
            return f64::NAN;
        }
        let k = ts.partition_point(|&s| s <= t);
        if k == 0 {
            return self.states[0][idx];
        }
        if k == ts.len() {
            return self.states[k - 1][idx];
        }
        let (t0, t1) = (ts[k - 1], ts[k]);
        let (a, b) = (self.states[k - 1][idx], self.states[k][idx]);
        if t1 == t0 {
            return b;
        }
        a + (b - a) * (t - t0) / (t1 - t0)
    }

    pub fn lu_total(&self) -> usize {
        self.records.iter().map(|r| r.lu_count).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CostSummary {
    pub steps: usize,
    pub lu_total: usize,
    /// Mean Krylov dimension over all products in accepted steps.
    pub m_avg: f64,
    /// Mean Newton iterations per step.
    pub nr_avg: f64,
    pub rejects: usize,
}

pub fn cost_report(records: &[StepRecord]) -> Result<CostSummary> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("no step records"));
    }
    let dims: Vec<usize> = records
        .iter()
        .flat_map(|r| r.krylov_dims.iter().copied())
        .collect();
    let m_avg = if dims.is_empty() {
        0.0
    } else {
        dims.iter().sum::<usize>() as f64 / dims.len() as f64
    };
    Ok(CostSummary {
        steps: records.len(),
        lu_total: records.iter().map(|r| r.lu_count).sum(),
        m_avg,
        nr_avg: records.iter().map(|r| r.nr_iters).sum::<usize>() as f64 / records.len() as f64,
        rejects: records.iter().map(|r| r.rejects).sum(),
    })
}

/// Factorizes matrices that mostly share one sparsity pattern, recomputing the
/// column order only when the pattern changes.
#[derive(Debug, Clone, Default)]
pub struct LuCache {
    pattern: Option<(Vec<usize>, Vec<usize>)>,
    order: Vec<usize>,
}

impl LuCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn factor(&mut self, a: &CsrMatrix) -> Result<Factorization> {
        let same = matches!(&self.pattern, Some((r, c))
            if r.as_slice() == a.row_offsets() && c.as_slice() == a.col_indices());
        if !same {
            self.order = min_degree_order(a);
            self.pattern = Some((a.row_offsets().to_vec(), a.col_indices().to_vec()));
        }
        Factorization::with_ordering(a, &self.order)
    }
}

fn add_node_conductance(g: &CsrMatrix, n_nodes: usize, value: f64) -> Result<CsrMatrix> {
    let d: Vec<f64> = (0..g.n_rows())
        .map(|i| if i < n_nodes { value } else { 0.0 })
        .collect();
    g.add_scaled(1.0, &CsrMatrix::diagonal(&d), 1.0)
}

/// Newton solve of `f(x) + extra x_nodes = B u(0)` from `x0`.
fn newton_dc(sys: &MnaSystem, x0: &[f64], extra: f64, cache: &mut LuCache) -> Result<Vec<f64>> {
    let bu = sys.excitation(0.0);
    let mut x = x0.to_vec();
    let mut lin = evaluate(sys, &x, None)?;
    for _ in 0..DC_MAX_ITERS {
        let mut rhs = vec![0.0; x.len()];
        for i in 0..x.len() {
            let shunt = if i < sys.n_nodes() { extra * x[i] } else { 0.0 };
            rhs[i] = bu[i] - lin.f_at_x[i] - shunt;
        }
        let jac = if extra > 0.0 {
            add_node_conductance(&lin.g_k, sys.n_nodes(), extra)?
        } else {
            lin.g_k.clone()
        };
        let dx = cache.factor(&jac)?.solve(&rhs)?;
        let x_new: Vec<f64> = x.iter().zip(&dx).map(|(a, d)| a + d).collect();
        if x_new.iter().any(|v| !v.is_finite()) {
            return Err(Error::NoDcConvergence);
        }
        lin = evaluate(sys, &x_new, Some(&x))?;
        let done = math::norm_inf(&dx) <= DC_TOL * (1.0 + math::norm_inf(&x_new));
        x = x_new;
        if done && !lin.limited {
            return Ok(x);
        }
    }
    Err(Error::NoDcConvergence)
}

/// DC operating point: Newton with junction limiting, falling back to gmin
/// stepping from `1e-3` S down by decades.
pub fn dc_solve(sys: &MnaSystem) -> Result<Vec<f64>> {
    let mut cache = LuCache::new();
    let zero = vec![0.0; sys.n()];
    if let Ok(x) = newton_dc(sys, &zero, 0.0, &mut cache) {
        return Ok(x);
    }
    let mut x = zero;
    let mut g = 1e-3;
    while g > sys.options().gmin.max(1e-15) {
        x = newton_dc(sys, &x, g, &mut cache).map_err(|_| Error::NoDcConvergence)?;
        g /= 10.0;
    }
    newton_dc(sys, &x, 0.0, &mut cache).map_err(|_| Error::NoDcConvergence)
}

/// Solves `(q(x) - q_prev)/h + f(x) = B u(t_new)` by Newton from `x_start`.
fn be_solve(
    sys: &MnaSystem,
    x_start: &[f64],
    q_prev: &[f64],
    t_new: f64,
    h: f64,
    half_g: bool,
    cache: &mut LuCache,
) -> (Result<Vec<f64>>, usize, usize) {
    let mut iters = 0;
    let mut lus = 0;
    let res = (|| {
        let bu = sys.excitation(t_new);
        let mut x = x_start.to_vec();
        let mut lin = evaluate(sys, &x, None)?;
        let g_scale = if half_g { 0.5 } else { 1.0 };
        for _ in 0..NR_MAX_ITERS {
            iters += 1;
            let rhs: Vec<f64> = (0..x.len())
                .map(|i| bu[i] - lin.f_at_x[i] - (lin.q_at_x[i] - q_prev[i]) / h)
                .collect();
            let jac = lin.c_k.add_scaled(1.0 / h, &lin.g_k, g_scale)?;
            lus += 1;
            let dx = cache.factor(&jac)?.solve(&rhs)?;
            let x_new: Vec<f64> = x.iter().zip(&dx).map(|(a, d)| a + d).collect();
            if x_new.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite);
            }
            lin = evaluate(sys, &x_new, Some(&x))?;
            if sys.is_linear() && !half_g {
                return Ok(x_new);
            }
            let small = math::norm_inf(&dx) <= NR_RELTOL * math::norm_inf(&x_new) + NR_ABSTOL;
            x = x_new;
            if small && !lin.limited {
                return Ok(x);
            }
        }
        Err(Error::NoConvergence {
            residual: f64::NAN,
            dim: NR_MAX_ITERS,
        })
    })();
    (res, iters, lus)
}

/// Adaptive BENR step from `state` trying `state.h` first. Returns the new
/// state vector and the record (whose `h_accepted` may be smaller than
/// `state.h`).
pub fn benr_step(
    sys: &MnaSystem,
    state: &SimState,
    ctl: &StepControl,
    hmin: f64,
    cache: &mut LuCache,
) -> Result<(Vec<f64>, StepRecord)> {
    let x_k = &state.x;
    let q_k = evaluate(sys, x_k, None)?.q_at_x;
    let mut rec = StepRecord {
        t: state.t,
        ..StepRecord::default()
    };
    let mut h = state.h;
    loop {
        let mut solve = |x0: &[f64], q0: &[f64], t_new: f64, hh: f64, rec: &mut StepRecord| {
            let (r, it, lu) = be_solve(sys, x0, q0, t_new, hh, ctl.benr_half_g, cache);
            rec.nr_iters += it;
            rec.lu_count += lu;
            r
        };
        let attempt: Result<(Vec<f64>, f64)> = (|| {
            let full = solve(x_k, &q_k, state.t + h, h, &mut rec)?;
            if ctl.fixed_step {
                return Ok((full, 0.0));
            }
            let mid = solve(x_k, &q_k, state.t + 0.5 * h, 0.5 * h, &mut rec)?;
            let q_mid = evaluate(sys, &mid, None)?.q_at_x;
            let end = solve(&mid, &q_mid, state.t + h, 0.5 * h, &mut rec)?;
            let diff: Vec<f64> = full.iter().zip(&end).map(|(a, b)| a - b).collect();
            Ok((end, math::norm_inf(&diff)))
        })();
        match attempt {
            Ok((x, err)) if err <= ctl.err_budget => {
                rec.h_accepted = h;
                rec.err_norm = err;
                rec.t = state.t + h;
                return Ok((x, rec));
            }
            Err(e) if ctl.fixed_step => return Err(e),
            Err(Error::DimensionMismatch { expected, found }) => {
                return Err(Error::DimensionMismatch { expected, found })
            }
            _ => {}
        }
        rec.rejects += 1;
        h *= ctl.alpha;
        if h < hmin || rec.rejects > ctl.max_rejects {
            return Err(Error::StepFailure { t: state.t, h });
        }
    }
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn is_zero(v: &[f64]) -> bool {
    v.iter().all(|&x| x == 0.0)
}

/// Per-step data of an ER step: everything that does not depend on `h`
/// inside one source segment.
pub struct ErPlan<'a> {
    sys: &'a MnaSystem,
    lin: &'a Linearization,
    op: InvertOperator<'a>,
    cfg: MevpConfig,
    t: f64,
    x: Vec<f64>,
    /// `F(x_k)`.
    f_k: Vec<f64>,
    /// `v1 + v2`.
    v: Vec<f64>,
    /// `G^{-1} B du/h`.
    drift: Vec<f64>,
    basis: Option<KrylovBasis>,
}

impl<'a> ErPlan<'a> {
    /// Prepares a step from `(t, x)`. `slope_probe` is any step inside the
    /// current source segment and fixes the input slope.
    pub fn new(
        sys: &'a MnaSystem,
        lin: &'a Linearization,
        g_lu: &'a Factorization,
        t: f64,
        slope_probe: f64,
        cfg: MevpConfig,
    ) -> Result<Self> {
        let op = InvertOperator::new(&lin.g_k, g_lu, &lin.c_k)?;
        let x = lin.x_ref.clone();
        let f_k = residual_f(sys, lin, &x)?;
        let bu = sys.excitation(t);
        let rhs: Vec<f64> = f_k.iter().zip(&bu).map(|(f, b)| f + b).collect();
        let v1 = sub(&x, &op.solve_g(&rhs)?);
        let du = sub(&sys.excitation(t + slope_probe), &bu);
        let slope: Vec<f64> = du.iter().map(|d| d / slope_probe).collect();
        let drift = if is_zero(&slope) {
            vec![0.0; x.len()]
        } else {
            op.solve_g(&slope)?
        };
        // v2 = G^{-1} C G^{-1} B du/h = -A drift
        let v = if is_zero(&drift) {
            v1
        } else {
            let v2 = op.apply(&drift)?;
            sub(&v1, &v2)
        };
        Ok(ErPlan {
            sys,
            lin,
            op,
            cfg,
            t,
            x,
            f_k,
            v,
            drift,
            basis: None,
        })
    }

    pub fn operator(&self) -> &InvertOperator<'a> {
        &self.op
    }

    /// Start vector `v1 + v2` of the solution product.
    pub fn start_vector(&self) -> &[f64] {
        &self.v
    }

    pub fn basis(&self) -> Option<&KrylovBasis> {
        self.basis.as_ref()
    }

    /// `x_{k+1}` at step `h`, reusing the cached basis when it covers `h`.
    /// Returns the state and whether a new basis had to be built.
    pub fn solution(&mut self, h: f64) -> Result<(Vec<f64>, bool)> {
        let mut fresh = false;
        let expv = if is_zero(&self.v) {
            vec![0.0; self.x.len()]
        } else {
            let reuse = match &self.basis {
                Some(b) => b.covers(&self.op, &self.cfg, h)?,
                None => false,
            };
            if reuse {
                self.basis.as_ref().expect("checked above").eval(h)?
            } else {
                fresh = true;
                let (out, basis) = mevp_iks(&self.op, &self.v, &self.cfg, h)?;
                self.basis = Some(basis);
                out
            }
        };
        let x_next = (0..self.x.len())
            .map(|i| self.x[i] - self.v[i] + expv[i] + h * self.drift[i])
            .collect();
        Ok((x_next, fresh))
    }

    pub fn solution_dim(&self) -> Option<usize> {
        if is_zero(&self.v) {
            None
        } else {
            self.basis.as_ref().map(KrylovBasis::m)
        }
    }

    pub fn error(&self, x_next: &[f64], h: f64) -> Result<ErrorEstimate> {
        nonlinear_error(
            self.sys, self.lin, &self.op, &self.f_k, x_next, &self.cfg, h,
        )
    }

    pub fn time(&self) -> f64 {
        self.t
    }
}

/// A single ER step of size `state.h` with no error control.
pub fn er_step(
    sys: &MnaSystem,
    lin: &Linearization,
    g_lu: &Factorization,
    state: &SimState,
    cfg: &MevpConfig,
) -> Result<(Vec<f64>, Option<KrylovBasis>)> {
    let mut plan = ErPlan::new(sys, lin, g_lu, state.t, state.h, *cfg)?;
    let (x, _) = plan.solution(state.h)?;
    Ok((x, plan.basis))
}

/// Local nonlinear error `e = -(e^{hJ} w - w)` with `w = G^{-1}(F(x+) - F(x))`.
/// `f_k` is `F(x_k)` under the same linearization.
pub fn nonlinear_error(
    sys: &MnaSystem,
    lin: &Linearization,
    op: &InvertOperator<'_>,
    f_k: &[f64],
    x_next: &[f64],
    cfg: &MevpConfig,
    h: f64,
) -> Result<ErrorEstimate> {
    let delta_f = sub(&residual_f(sys, lin, x_next)?, f_k);
    let n = x_next.len();
    if is_zero(&delta_f) {
        return Ok(ErrorEstimate {
            e_rr: vec![0.0; n],
            norm_inf: 0.0,
            w: vec![0.0; n],
            delta_f,
            krylov_dim: None,
        });
    }
    let w = op.solve_g(&delta_f)?;
    if is_zero(&w) {
        return Ok(ErrorEstimate {
            e_rr: vec![0.0; n],
            norm_inf: 0.0,
            w,
            delta_f,
            krylov_dim: None,
        });
    }
    let (ew, basis) = mevp_iks(op, &w, cfg, h)?;
    let e_rr = sub(&w, &ew);
    Ok(ErrorEstimate {
        norm_inf: math::norm_inf(&e_rr),
        e_rr,
        w,
        delta_f,
        krylov_dim: Some(basis.m()),
    })
}

/// Correction `D = gamma h phi_2(hJ) C^{-1} dF`, evaluated without `C^{-1}` as
/// `gamma ((e^{hJ} u - u)/h + w)` with `w = G^{-1} dF`, `u = G^{-1} C w`.
/// Returns `D` and the dimension of the Krylov product, if one was needed.
pub fn correction_term(
    op: &InvertOperator<'_>,
    w: &[f64],
    cfg: &MevpConfig,
    h: f64,
    spec: &CorrectionSpec,
) -> Result<(Vec<f64>, Option<usize>)> {
    let n = w.len();
    if !spec.enabled || spec.gamma == 0.0 || is_zero(w) {
        return Ok((vec![0.0; n], None));
    }
    if !(h > 0.0) {
        return Err(Error::InvalidArgument("correction needs a positive step"));
    }
    // u = G^{-1} C w = -A w
    let u: Vec<f64> = op.apply(w)?.iter().map(|x| -x).collect();
    if is_zero(&u) {
        return Ok((w.iter().map(|x| spec.gamma * x).collect(), None));
    }
    let (_, basis) = mevp_iks(op, &u, cfg, h)?;
    let delta = basis.eval_delta(h)?;
    let d = (0..n).map(|i| spec.gamma * (delta[i] / h + w[i])).collect();
    Ok((d, Some(basis.m())))
}

/// Errors after which a smaller step may succeed.
fn retryable(e: &Error) -> bool {
    matches!(
        e,
        Error::NoConvergence { .. } | Error::NonFinite | Error::SingularReducedMatrix
    )
}

/// Adaptive ER / ERC step from `state`, trying `state.h` first.
pub fn er_adaptive_step(
    sys: &MnaSystem,
    method: Method,
    state: &SimState,
    ctl: &StepControl,
    hmin: f64,
    cache: &mut LuCache,
) -> Result<(Vec<f64>, StepRecord)> {
    let lin = evaluate(sys, &state.x, None)?;
    let g_lu = cache.factor(&lin.g_k)?;
    let mut plan = ErPlan::new(sys, &lin, &g_lu, state.t, state.h, ctl.krylov)?;
    let mut rec = StepRecord {
        t: state.t,
        lu_count: 1,
        ..StepRecord::default()
    };
    let correct = method == Method::Erc && ctl.correction.enabled;
    let mut h = state.h;
    loop {
        let attempt: Result<(Vec<f64>, f64, Vec<usize>)> = (|| {
            let (mut x_next, _) = plan.solution(h)?;
            let mut dims: Vec<usize> = plan.solution_dim().into_iter().collect();
            if sys.is_linear() || (ctl.fixed_step && !correct) {
                return Ok((x_next, 0.0, dims));
            }
            let est = plan.error(&x_next, h)?;
            dims.extend(est.krylov_dim);
            if correct {
                let (d, dim) =
                    correction_term(plan.operator(), &est.w, &ctl.krylov, h, &ctl.correction)?;
                dims.extend(dim);
                for (x, c) in x_next.iter_mut().zip(&d) {
                    *x -= c;
                }
            }
            Ok((x_next, est.norm_inf, dims))
        })();
        match attempt {
            Ok((x, err, dims)) if err <= ctl.err_budget || ctl.fixed_step => {
                rec.h_accepted = h;
                rec.err_norm = err;
                rec.krylov_dims = dims;
                rec.t = state.t + h;
                if ctl.krylov.trace {
                    if let Some(b) = plan.basis() {
                        rec.krylov_trace = b.trace().to_vec();
                    }
                }
                return Ok((x, rec));
            }
            Ok(_) => {}
            Err(e) if retryable(&e) && !ctl.fixed_step => {}
            Err(e) => return Err(e),
        }
        rec.rejects += 1;
        h *= ctl.alpha;
        if h < hmin || rec.rejects > ctl.max_rejects {
            return Err(Error::StepFailure { t: state.t, h });
        }
    }
}

/// Transient analysis from the DC operating point over `[0, t_stop]`.
/// `h_hint` is the suggested first step.
pub fn transient(
    sys: &MnaSystem,
    method: Method,
    ctl: &StepControl,
    t_stop: f64,
    h_hint: f64,
) -> Result<TransientResult> {
    let x0 = dc_solve(sys)?;
    transient_from(sys, method, ctl, &x0, 0.0, t_stop, h_hint)
}

/// Transient analysis from a given state.
pub fn transient_from(
    sys: &MnaSystem,
    method: Method,
    ctl: &StepControl,
    x0: &[f64],
    t0: f64,
    t_stop: f64,
    h_hint: f64,
) -> Result<TransientResult> {
    ctl.validate()?;
    if x0.len() != sys.n() {
        return Err(Error::DimensionMismatch {
            expected: sys.n(),
            found: x0.len(),
        });
    }
    if !(t_stop > t0) || !(h_hint > 0.0) {
        return Err(Error::InvalidArgument(
            "need t_stop > t0 and a positive step hint",
        ));
    }
    let (hmin, hmax) = ctl.step_bounds(t_stop - t0);
    let first_bp = sys.next_breakpoint(t0, t_stop).unwrap_or(t_stop);
    let h_init = if ctl.fixed_step {
        h_hint
    } else {
        h_hint.min(first_bp - t0).min(hmax)
    };
    let mut state = SimState {
        t: t0,
        x: x0.to_vec(),
        h: h_init,
        k: 0,
    };
    let mut out = TransientResult {
        method,
        times: vec![t0],
        states: vec![x0.to_vec()],
        records: Vec::new(),
    };
    let mut cache = LuCache::new();
    let t_eps = 1e-12 * (t_stop - t0);
    while t_stop - state.t > t_eps {
        let limit = sys.next_breakpoint(state.t, t_stop).unwrap_or(t_stop);
        let nominal = state.h;
        let mut trial = state.clone();
        if limit - state.t <= nominal * (1.0 + 1e-9) {
            trial.h = limit - state.t;
        }
        let (x, rec) = match method {
            Method::Benr => benr_step(sys, &trial, ctl, hmin, &mut cache)?,
            Method::Er | Method::Erc => {
                er_adaptive_step(sys, method, &trial, ctl, hmin, &mut cache)?
            }
        };
        let reached = limit - state.t - rec.h_accepted <= t_eps;
        state.t = if reached {
            limit
        } else {
            state.t + rec.h_accepted
        };
        state.x = x;
        state.k += 1;
        if !ctl.fixed_step {
            let base = if rec.rejects > 0 {
                rec.h_accepted
            } else {
                nominal
            };
            state.h = if ctl.grows(rec.rejects) {
                (base * ctl.beta).min(hmax)
            } else {
                base
            };
        }
        let mut rec = rec;
        rec.t = state.t;
        out.times.push(state.t);
        out.states.push(state.x.clone());
        out.records.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{Circuit, Element, SourceWaveform};
    use crate::devices::DiodeModel;
    use alloc::string::ToString;

    fn r(name: &str, a: &str, b: &str, v: f64) -> Element {
        Element::Resistor {
            name: name.into(),
            a: a.into(),
            b: b.into(),
            resistance: v,
        }
    }

    fn c(name: &str, a: &str, b: &str, v: f64) -> Element {
        Element::Capacitor {
            name: name.into(),
            a: a.into(),
            b: b.into(),
            capacitance: v,
        }
    }

    fn vsrc(name: &str, p: &str, wave: SourceWaveform) -> Element {
        Element::VoltageSource {
            name: name.into(),
            pos: p.into(),
            neg: "0".into(),
            wave,
        }
    }

    fn build(elements: Vec<Element>) -> MnaSystem {
        MnaSystem::build(&Circuit::new(elements)).unwrap()
    }

    /// Unit RC to ground: x' = -x.
    fn rc_decay() -> MnaSystem {
        build(vec![r("R1", "a", "0", 1.0), c("C1", "a", "0", 1.0)])
    }

    fn state(x: Vec<f64>, h: f64) -> SimState {
        SimState { t: 0.0, x, h, k: 0 }
    }

    #[test]
    fn divider_operating_point() {
        let sys = build(vec![
            vsrc("V1", "in", SourceWaveform::Dc(1.0)),
            r("R1", "in", "m", 1.0),
            r("R2", "m", "0", 1.0),
        ]);
        let x = dc_solve(&sys).unwrap();
        let m = sys.node_index("m").unwrap();
        assert!((x[m] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn unexcited_circuit_rests_at_zero() {
        let sys = build(vec![
            vsrc("V1", "in", SourceWaveform::Dc(0.0)),
            r("R1", "in", "a", 10.0),
            c("C1", "a", "0", 1e-3),
        ]);
        assert!(dc_solve(&sys).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn diode_operating_point_matches_bisection() {
        let sys = build(vec![
            vsrc("V1", "in", SourceWaveform::Dc(1.0)),
            r("R1", "in", "a", 1e3),
            Element::Diode {
                name: "D1".into(),
                anode: "a".into(),
                cathode: "0".into(),
                model: DiodeModel::default(),
            },
        ]);
        let x = dc_solve(&sys).unwrap();
        let v = x[sys.node_index("a").unwrap()];
        let (is, vt) = (1e-14, 0.02585);
        let f = |v: f64| is * (libm::exp(v / vt) - 1.0) - (1.0 - v) / 1e3;
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        // gmin on the node shifts the answer by ~1e-12 A
        assert!((v - lo).abs() < 1e-8, "{v} vs {lo}");
    }

    #[test]
    fn backward_euler_decay_step() {
        let sys = rc_decay();
        let ctl = StepControl {
            fixed_step: true,
            ..StepControl::default()
        };
        let (x, rec) =
            benr_step(&sys, &state(vec![1.0], 0.1), &ctl, 0.0, &mut LuCache::new()).unwrap();
        // gmin perturbs the conductance by 1e-12
        assert!((x[0] - 1.0 / 1.1).abs() < 1e-11);
        assert_eq!(rec.nr_iters, 1);
        assert_eq!(rec.lu_count, 1);
    }

    #[test]
    fn backward_euler_from_rest() {
        let sys = rc_decay();
        let ctl = StepControl::default();
        let (x, rec) =
            benr_step(&sys, &state(vec![0.0], 0.1), &ctl, 0.0, &mut LuCache::new()).unwrap();
        assert_eq!(x, vec![0.0]);
        // full step plus two half steps, one iteration each
        assert_eq!(rec.nr_iters, 3);
        assert_eq!(rec.lu_count, 3);
    }

    fn er_single(sys: &MnaSystem, x: Vec<f64>, t: f64, h: f64) -> Vec<f64> {
        let lin = evaluate(sys, &x, None).unwrap();
        let g_lu = LuCache::new().factor(&lin.g_k).unwrap();
        let st = SimState { t, x, h, k: 0 };
        er_step(sys, &lin, &g_lu, &st, &MevpConfig::with_eps(1e-10))
            .unwrap()
            .0
    }

    #[test]
    fn er_exact_exponential_decay() {
        let x = er_single(&rc_decay(), vec![1.0], 0.0, 1.0);
        assert!((x[0] - libm::exp(-1.0)).abs() < 1e-9);
        assert_eq!(er_single(&rc_decay(), vec![0.0], 0.0, 1.0), vec![0.0]);
    }

    #[test]
    fn er_ramp_response() {
        // series source u = t through R = 1 into C = 1: x = t - 1 + e^{-t}
        let sys = build(vec![
            vsrc(
                "V1",
                "in",
                SourceWaveform::Pwl(vec![(0.0, 0.0), (10.0, 10.0)]),
            ),
            r("R1", "in", "a", 1.0),
            c("C1", "a", "0", 1.0),
        ]);
        let x = er_single(&sys, vec![0.0; sys.n()], 0.0, 1.0);
        let a = sys.node_index("a").unwrap();
        assert!((x[a] - libm::exp(-1.0)).abs() < 1e-9, "{}", x[a]);
        let inn = sys.node_index("in").unwrap();
        assert!((x[inn] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn linear_circuit_has_zero_error_and_no_correction() {
        let sys = rc_decay();
        let lin = evaluate(&sys, &[1.0], None).unwrap();
        let g_lu = LuCache::new().factor(&lin.g_k).unwrap();
        let op = InvertOperator::new(&lin.g_k, &g_lu, &lin.c_k).unwrap();
        let f_k = residual_f(&sys, &lin, &[1.0]).unwrap();
        let est =
            nonlinear_error(&sys, &lin, &op, &f_k, &[0.3], &MevpConfig::default(), 1.0).unwrap();
        assert_eq!(est.norm_inf, 0.0);
        assert_eq!(est.krylov_dim, None);
        let (d, dim) = correction_term(
            &op,
            &est.w,
            &MevpConfig::default(),
            1.0,
            &CorrectionSpec::default(),
        )
        .unwrap();
        assert_eq!(d, vec![0.0]);
        assert_eq!(dim, None);
        let off = CorrectionSpec {
            gamma: 0.0,
            enabled: true,
        };
        let (d, _) = correction_term(&op, &[1.0], &MevpConfig::default(), 1.0, &off).unwrap();
        assert_eq!(d, vec![0.0]);
    }

    #[test]
    fn transient_decay_tracks_exponential() {
        let sys = rc_decay();
        let ctl = StepControl {
            err_budget: 1e-6,
            krylov: MevpConfig::with_eps(1e-9),
            ..StepControl::default()
        };
        for method in [Method::Er, Method::Erc] {
            let res = transient_from(&sys, method, &ctl, &[1.0], 0.0, 5.0, 0.01).unwrap();
            assert!((res.times.last().unwrap() - 5.0).abs() < 1e-12);
            for (t, x) in res.times.iter().zip(&res.states) {
                assert!(
                    (x[0] - libm::exp(-t)).abs() <= 1e-6,
                    "{} at {t}",
                    method.name()
                );
            }
            assert!(res
                .records
                .iter()
                .all(|r| r.lu_count == 1 && r.rejects == 0));
        }
    }

    #[test]
    fn quiet_circuit_grows_to_hmax() {
        let sys = build(vec![
            vsrc("V1", "in", SourceWaveform::Dc(0.0)),
            r("R1", "in", "a", 1.0),
            c("C1", "a", "0", 1.0),
        ]);
        let res = transient(&sys, Method::Er, &StepControl::default(), 10.0, 0.01).unwrap();
        assert!(res.states.iter().all(|x| x.iter().all(|&v| v == 0.0)));
        let last = res.records.last().unwrap();
        assert!((last.h_accepted - 10.0 / 50.0).abs() < 1e-12 || last.h_accepted < 0.2);
        assert!(res
            .records
            .iter()
            .any(|r| (r.h_accepted - 0.2).abs() < 1e-12));
    }

    #[test]
    fn breakpoints_are_hit_exactly() {
        let sys = build(vec![
            vsrc(
                "V1",
                "in",
                SourceWaveform::Pwl(vec![(0.0, 0.0), (0.3, 1.0), (0.7, 1.0), (1.0, 0.0)]),
            ),
            r("R1", "in", "a", 1.0),
            c("C1", "a", "0", 0.1),
        ]);
        let res = transient(&sys, Method::Er, &StepControl::default(), 2.0, 0.05).unwrap();
        for bp in [0.3, 0.7, 1.0] {
            assert!(res.times.contains(&bp), "missing {bp}");
        }
    }

    #[test]
    fn cost_report_arithmetic() {
        let rec = StepRecord {
            lu_count: 1,
            krylov_dims: vec![7, 9],
            ..StepRecord::default()
        };
        let s = cost_report(&[rec]).unwrap();
        assert_eq!(s.lu_total, 1);
        assert_eq!(s.m_avg, 8.0);
        let benr = StepRecord {
            lu_count: 3,
            nr_iters: 3,
            ..StepRecord::default()
        };
        assert_eq!(cost_report(&[benr]).unwrap().lu_total, 3);
        assert!(cost_report(&[]).is_err());
    }

    #[test]
    fn interpolation_between_samples() {
        let res = TransientResult {
            method: Method::Er,
            times: vec![0.0, 1.0, 3.0],
            states: vec![vec![0.0], vec![2.0], vec![6.0]],
            records: vec![],
        };
        assert_eq!(res.interpolate(0, 2.0), 4.0);
        assert_eq!(res.interpolate(0, -1.0), 0.0);
        assert_eq!(res.interpolate(0, 9.0), 6.0);
        assert_eq!(Method::Erc.name().to_string(), "ERC");
    }
}
