//! Nonlinear device evaluation.
//!
//! [`evaluate`] freezes the circuit at a state `x_k` and returns the
//! linearization `C_k`, `G_k` together with the total static current `f(x_k)`.
//! [`residual_f`] then gives the nonlinear remainder
//!
//! ```text
//! F(x) = G_k x - f(x)
//! ```
//!
//! so that `-G_k x + F(x) + B u` equals the exact right-hand side `B u - f(x)`,
//! and `F` has zero derivative at `x_k`.

use alloc::vec;
use alloc::vec::Vec;

use crate::circuit::{DeviceInstance, MnaSystem};
use crate::error::{Error, Result};
use crate::math;
use crate::sparse::{CsrMatrix, Triplets};

/// Exponent cap for the diode; beyond it the current is extended linearly.
pub const DIODE_EXP_LIMIT: f64 = 80.0;

/// Junction diode: `i = Is (exp(v/Vt) - 1)`, charge `Cj0 v + TT i(v)`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DiodeModel {
    pub is: f64,
    pub vt: f64,
    /// Constant junction capacitance.
    pub cj0: f64,
    /// Transit time for the diffusion charge.
    pub tt: f64,
}

impl Default for DiodeModel {
    fn default() -> Self {
        DiodeModel {
            is: 1e-14,
            vt: 0.02585,
            cj0: 0.0,
            tt: 0.0,
        }
    }
}

impl DiodeModel {
    pub fn validate(&self) -> Result<()> {
        let ok = self.is > 0.0
            && self.vt > 0.0
            && self.cj0 >= 0.0
            && self.tt >= 0.0
            && [self.is, self.vt, self.cj0, self.tt]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidCircuit(
                "diode needs IS > 0, VT > 0, CJ0 >= 0, TT >= 0".into(),
            ))
        }
    }

    /// Current and small-signal conductance at junction voltage `v`.
    pub fn current(&self, v: f64) -> (f64, f64) {
        let a = v / self.vt;
        if a <= DIODE_EXP_LIMIT {
            let e = math::exp(a);
            (self.is * (e - 1.0), self.is * e / self.vt)
        } else {
            let e = math::exp(DIODE_EXP_LIMIT);
            (
                self.is * (e * (1.0 + a - DIODE_EXP_LIMIT) - 1.0),
                self.is * e / self.vt,
            )
        }
    }

    /// Charge and capacitance at `v`.
    pub fn charge(&self, v: f64) -> (f64, f64) {
        let (i, g) = self.current(v);
        (self.cj0 * v + self.tt * i, self.cj0 + self.tt * g)
    }

    pub fn vcrit(&self) -> f64 {
        self.vt * math::ln(self.vt / (core::f64::consts::SQRT_2 * self.is))
    }
}

/// Junction-voltage limiting for Newton updates: above the critical voltage a
/// step larger than two thermal voltages is compressed logarithmically.
pub fn pnjlim(v_new: f64, v_old: f64, vt: f64, vcrit: f64) -> f64 {
    if v_new > vcrit && (v_new - v_old).abs() > 2.0 * vt {
        if v_old > 0.0 {
            let arg = 1.0 + (v_new - v_old) / vt;
            if arg > 0.0 {
                v_old + vt * math::ln(arg)
            } else {
                vcrit
            }
        } else {
            vt * math::ln(v_new / vt)
        }
    } else {
        v_new
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Polarity {
    N,
    P,
}

/// Level-1 (square-law) MOSFET without body effect.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MosfetModel {
    pub polarity: Polarity,
    /// Threshold magnitude.
    pub vth: f64,
    pub kp: f64,
    pub lambda: f64,
    pub w: f64,
    pub l: f64,
    pub cgs0: f64,
    pub cgd0: f64,
}

impl Default for MosfetModel {
    fn default() -> Self {
        MosfetModel {
            polarity: Polarity::N,
            vth: 0.7,
            kp: 2e-5,
            lambda: 0.0,
            w: 1e-6,
            l: 1e-6,
            cgs0: 0.0,
            cgd0: 0.0,
        }
    }
}

/// Drain current and its partial derivatives with respect to the drain, gate
/// and source voltages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MosfetEval {
    pub id: f64,
    pub gd: f64,
    pub gg: f64,
    pub gs: f64,
}

impl MosfetModel {
    pub fn validate(&self) -> Result<()> {
        let vals = [
            self.vth,
            self.kp,
            self.lambda,
            self.w,
            self.l,
            self.cgs0,
            self.cgd0,
        ];
        let ok = self.kp > 0.0
            && self.w > 0.0
            && self.l > 0.0
            && self.vth >= 0.0
            && self.lambda >= 0.0
            && self.cgs0 >= 0.0
            && self.cgd0 >= 0.0
            && vals.iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidCircuit(
                "MOSFET needs KP, W, L > 0 and nonnegative VTH, LAMBDA, CGS, CGD".into(),
            ))
        }
    }

    pub fn beta(&self) -> f64 {
        self.kp * self.w / self.l
    }

    /// n-channel square law for `vds >= 0`; returns `(id, gm, gds)`.
    fn forward(&self, vgs: f64, vds: f64) -> (f64, f64, f64) {
        let vov = vgs - self.vth;
        if vov <= 0.0 {
            return (0.0, 0.0, 0.0);
        }
        let beta = self.beta();
        let clm = 1.0 + self.lambda * vds;
        if vds < vov {
            let core = vov * vds - 0.5 * vds * vds;
            (
                beta * core * clm,
                beta * vds * clm,
                beta * ((vov - vds) * clm + self.lambda * core),
            )
        } else {
            let core = 0.5 * vov * vov;
            (
                beta * core * clm,
                beta * vov * clm,
                beta * core * self.lambda,
            )
        }
    }

    /// n-channel evaluation valid for either sign of `vds` (source and drain
    /// swap roles when `vds < 0`).
    fn n_channel(&self, vd: f64, vg: f64, vs: f64) -> MosfetEval {
        let (vgs, vds) = (vg - vs, vd - vs);
        let (id, d_vgs, d_vds) = if vds >= 0.0 {
            let (id, gm, gds) = self.forward(vgs, vds);
            (id, gm, gds)
        } else {
            let (id, gm, gds) = self.forward(vgs - vds, -vds);
            (-id, -gm, gm + gds)
        };
        MosfetEval {
            id,
            gd: d_vds,
            gg: d_vgs,
            gs: -d_vds - d_vgs,
        }
    }

    /// Current into the drain terminal and its derivatives.
    pub fn eval(&self, vd: f64, vg: f64, vs: f64) -> MosfetEval {
        match self.polarity {
            Polarity::N => self.n_channel(vd, vg, vs),
            Polarity::P => {
                let e = self.n_channel(-vd, -vg, -vs);
                MosfetEval { id: -e.id, ..e }
            }
        }
    }
}

/// Device-frozen view of the circuit at `x_ref`.
#[derive(Debug, Clone)]
pub struct Linearization {
    /// `C_lin` plus device charge derivatives.
    pub c_k: CsrMatrix,
    /// `G_lin` plus device conductances.
    pub g_k: CsrMatrix,
    /// Total static current `f(x_ref)` (linear part included).
    pub f_at_x: Vec<f64>,
    /// Total charge `q(x_ref)`.
    pub q_at_x: Vec<f64>,
    pub x_ref: Vec<f64>,
    /// Some junction voltage was limited; `f_at_x` and `q_at_x` are then
    /// companion-model values rather than exact ones.
    pub limited: bool,
    g_dev: CsrMatrix,
}

impl Linearization {
    /// Device-only part of `G_k`.
    pub fn device_conductance(&self) -> &CsrMatrix {
        &self.g_dev
    }
}

fn volt(x: &[f64], i: Option<usize>) -> f64 {
    i.map_or(0.0, |k| x[k])
}

fn check_state(sys: &MnaSystem, x: &[f64]) -> Result<()> {
    if x.len() != sys.n() {
        return Err(Error::DimensionMismatch {
            expected: sys.n(),
            found: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(())
}

/// Evaluates all devices at `x`. With `limit_from`, diode junction voltages
/// are limited against that previous iterate and the stamps are taken at the
/// limited voltage (Newton companion model).
pub fn evaluate(sys: &MnaSystem, x: &[f64], limit_from: Option<&[f64]>) -> Result<Linearization> {
    check_state(sys, x)?;
    if let Some(prev) = limit_from {
        check_state(sys, prev)?;
    }
    let n = sys.n();
    let mut g_dev = Triplets::new(n, n);
    let mut c_dev = Triplets::new(n, n);
    let mut f = sys.g_lin().spmv(x)?;
    let mut q = sys.c_lin().spmv(x)?;
    let mut limited = false;

    for dev in sys.devices() {
        match dev {
            DeviceInstance::Diode {
                anode,
                cathode,
                model,
                ..
            } => {
                let v = volt(x, *anode) - volt(x, *cathode);
                let v_eval = match limit_from {
                    Some(prev) => {
                        let v_old = volt(prev, *anode) - volt(prev, *cathode);
                        pnjlim(v, v_old, model.vt, model.vcrit())
                    }
                    None => v,
                };
                limited |= v_eval != v;
                let (i0, g) = model.current(v_eval);
                let (q0, cap) = model.charge(v_eval);
                let i = i0 + g * (v - v_eval);
                let qv = q0 + cap * (v - v_eval);
                if let Some(a) = anode {
                    f[*a] += i;
                    q[*a] += qv;
                }
                if let Some(k) = cathode {
                    f[*k] -= i;
                    q[*k] -= qv;
                }
                g_dev.stamp_pair(*anode, *cathode, g);
                c_dev.stamp_pair(*anode, *cathode, cap);
            }
            DeviceInstance::Mosfet {
                drain,
                gate,
                source,
                model,
                ..
            } => {
                let (vd, vg, vs) = (volt(x, *drain), volt(x, *gate), volt(x, *source));
                let e = model.eval(vd, vg, vs);
                if let Some(d) = drain {
                    f[*d] += e.id;
                }
                if let Some(s) = source {
                    f[*s] -= e.id;
                }
                for (row, sign) in [(*drain, 1.0), (*source, -1.0)] {
                    g_dev.add_opt(row, *drain, sign * e.gd);
                    g_dev.add_opt(row, *gate, sign * e.gg);
                    g_dev.add_opt(row, *source, sign * e.gs);
                }
                let (qgs, qgd) = (model.cgs0 * (vg - vs), model.cgd0 * (vg - vd));
                if let Some(g) = gate {
                    q[*g] += qgs + qgd;
                }
                if let Some(s) = source {
                    q[*s] -= qgs;
                }
                if let Some(d) = drain {
                    q[*d] -= qgd;
                }
                c_dev.stamp_pair(*gate, *source, model.cgs0);
                c_dev.stamp_pair(*gate, *drain, model.cgd0);
            }
        }
    }
    let g_dev = g_dev.build();
    let c_dev = c_dev.build();
    let g_k = sys.g_lin().add_scaled(1.0, &g_dev, 1.0)?;
    let c_k = sys.c_lin().add_scaled(1.0, &c_dev, 1.0)?;
    Ok(Linearization {
        c_k,
        g_k,
        f_at_x: f,
        q_at_x: q,
        x_ref: x.to_vec(),
        limited,
        g_dev,
    })
}

/// Nonlinear device currents at `x`, without the linear stamps.
pub fn device_currents(sys: &MnaSystem, x: &[f64]) -> Result<Vec<f64>> {
    check_state(sys, x)?;
    let mut out = vec![0.0; sys.n()];
    for dev in sys.devices() {
        match dev {
            DeviceInstance::Diode {
                anode,
                cathode,
                model,
                ..
            } => {
                let (i, _) = model.current(volt(x, *anode) - volt(x, *cathode));
                if let Some(a) = anode {
                    out[*a] += i;
                }
                if let Some(k) = cathode {
                    out[*k] -= i;
                }
            }
            DeviceInstance::Mosfet {
                drain,
                gate,
                source,
                model,
                ..
            } => {
                let id = model
                    .eval(volt(x, *drain), volt(x, *gate), volt(x, *source))
                    .id;
                if let Some(d) = drain {
                    out[*d] += id;
                }
                if let Some(s) = source {
                    out[*s] -= id;
                }
            }
        }
    }
    Ok(out)
}

/// `F(x) = G_k x - f(x)` with `G_k` frozen at `lin.x_ref`.
///
/// Computed as `G_dev x - i_dev(x)` so the linear stamps cancel exactly; the
/// result is identically zero for circuits without nonlinear devices.
pub fn residual_f(sys: &MnaSystem, lin: &Linearization, x: &[f64]) -> Result<Vec<f64>> {
    let mut out = lin.g_dev.spmv(x)?;
    let i = device_currents(sys, x)?;
    for (o, c) in out.iter_mut().zip(i) {
        *o -= c;
    }
    Ok(out)
}
