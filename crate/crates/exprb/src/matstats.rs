//! Sparsity and fill statistics of `C`, `G` and the BENR matrix `C/h + G`.

use exprb_core::devices::evaluate;
use exprb_core::integrate::dc_solve;
use exprb_core::lu::Factorization;
use exprb_core::sparse::CsrMatrix;
use exprb_core::MnaSystem;
use serde::Serialize;

/// LU fill count, or the marker `"singular"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(untagged)]
pub enum Fill {
    Nnz(usize),
    Singular(&'static str),
}

impl Fill {
    fn of(a: &CsrMatrix) -> Self {
        match Factorization::new(a) {
            Ok(f) => Fill::Nnz(f.fill_nnz()),
            Err(_) => Fill::Singular("singular"),
        }
    }

    pub fn nnz(&self) -> Option<usize> {
        match self {
            Fill::Nnz(n) => Some(*n),
            Fill::Singular(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatStats {
    pub n: usize,
    pub h: f64,
    pub nnz_c: usize,
    pub nnz_g: usize,
    pub nnz_c_over_h_plus_g: usize,
    pub empty_c_rows: usize,
    pub fill_c: Fill,
    pub fill_g: Fill,
    pub fill_c_over_h_plus_g: Fill,
}

/// The matrices the statistics are taken from: `C` and `G` linearized at the
/// operating point (or at zero when it cannot be found), and `C/h + G`.
pub fn matrices(sys: &MnaSystem, h: f64) -> exprb_core::Result<[CsrMatrix; 3]> {
    let x = if sys.is_linear() {
        vec![0.0; sys.n()]
    } else {
        dc_solve(sys).unwrap_or_else(|_| vec![0.0; sys.n()])
    };
    let lin = evaluate(sys, &x, None)?;
    let cg = lin.c_k.add_scaled(1.0 / h, &lin.g_k, 1.0)?;
    Ok([lin.c_k, lin.g_k, cg])
}

pub fn matstats(sys: &MnaSystem, h: f64) -> exprb_core::Result<MatStats> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(exprb_core::Error::InvalidArgument("h must be positive"));
    }
    let [c, g, cg] = matrices(sys, h)?;
    Ok(MatStats {
        n: sys.n(),
        h,
        nnz_c: c.nnz(),
        nnz_g: g.nnz(),
        nnz_c_over_h_plus_g: cg.nnz(),
        empty_c_rows: c.empty_rows().len(),
        fill_c: Fill::of(&c),
        fill_g: Fill::of(&g),
        fill_c_over_h_plus_g: Fill::of(&cg),
    })
}
