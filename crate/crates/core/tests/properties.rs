use exprb_core::dense::DenseMatrix;
use exprb_core::krylov::{eval_at_scaled_h, mevp_iks, InvertOperator, MevpConfig};
use exprb_core::lu::lu_factor;
use exprb_core::{Circuit, CsrMatrix, Element, MnaSystem, SimOptions, SourceWaveform};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn diff2(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Random sparse symmetric M-matrix: a few negative couplings per row and a
/// diagonal that dominates them by at least one.
fn conductance(rng: &mut ChaCha8Rng, n: usize) -> CsrMatrix {
    let mut t = Vec::new();
    let mut diag = vec![0.0; n];
    for i in 0..n {
        for _ in 0..rng.random_range(1..=2) {
            let j = rng.random_range(0..n);
            if j == i {
                continue;
            }
            let g = rng.random_range(0.1..1.0);
            t.push((i, j, -g));
            t.push((j, i, -g));
            diag[i] += g;
            diag[j] += g;
        }
    }
    for (i, d) in diag.iter().enumerate() {
        t.push((i, i, d + rng.random_range(1.0..2.0)));
    }
    CsrMatrix::from_triplets(n, n, &t)
}

fn capacitance(rng: &mut ChaCha8Rng, n: usize) -> CsrMatrix {
    let mut t = Vec::new();
    for i in 0..n {
        t.push((i, i, 10f64.powf(rng.random_range(-2.0..1.0))));
    }
    CsrMatrix::from_triplets(n, n, &t)
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn dense(a: &CsrMatrix) -> DenseMatrix {
    let rows = a.to_dense();
    DenseMatrix::from_fn(a.n_rows(), |i, j| rows[i][j])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn lu_solve_residual(seed in any::<u64>(), n in 2usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // unsymmetric: perturb a symmetric M-matrix with one-sided entries
        let mut t: Vec<(usize, usize, f64)> = conductance(&mut rng, n).iter().collect();
        for _ in 0..n {
            t.push((rng.random_range(0..n), rng.random_range(0..n), rng.random_range(-0.3..0.3)));
        }
        let a = CsrMatrix::from_triplets(n, n, &t);
        let b = random_vec(&mut rng, n);
        let f = lu_factor(&a).unwrap();
        let x = f.solve(&b).unwrap();
        let ax = a.spmv(&x).unwrap();
        prop_assert!(diff2(&ax, &b) <= 1e-10 * (1.0 + norm2(&b)));
        prop_assert!(f.fill_nnz() >= n);
    }

    #[test]
    fn spmv_matches_dense(seed in any::<u64>(), rows in 1usize..20, cols in 1usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t: Vec<(usize, usize, f64)> = (0..rows * cols / 3 + 1)
            .map(|_| (rng.random_range(0..rows), rng.random_range(0..cols), rng.random_range(-5.0..5.0)))
            .collect();
        let a = CsrMatrix::from_triplets(rows, cols, &t);
        let x = random_vec(&mut rng, cols);
        let y = a.spmv(&x).unwrap();
        let d = a.to_dense();
        for i in 0..rows {
            let yi: f64 = d[i].iter().zip(&x).map(|(p, q)| p * q).sum();
            prop_assert!((y[i] - yi).abs() <= 1e-13 * (1.0 + yi.abs()));
        }
    }

    #[test]
    fn expm_inverse_pair(seed in any::<u64>(), n in 1usize..8, scale in 0.1f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = DenseMatrix::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let m = m.scale(scale / m.norm1().max(1e-300));
        let prod = m.expm().unwrap().matmul(&m.scale(-1.0).expm().unwrap());
        let err = prod.add_scaled(-1.0, &DenseMatrix::identity(n)).norm1();
        prop_assert!(err <= 1e-9, "err {err}");
    }

    #[test]
    fn phi_recurrence(seed in any::<u64>(), n in 1usize..8, scale in 0.01f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = DenseMatrix::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let m = m.scale(scale / m.norm1().max(1e-300));
        let i = DenseMatrix::identity(n);
        let phi1 = m.phi(1).unwrap();
        let phi2 = m.phi(2).unwrap();
        // M phi_{k+1}(M) = phi_k(M) - phi_k(0)
        let lhs = m.matmul(&phi2);
        let rhs = phi1.add_scaled(-1.0, &i);
        prop_assert!(lhs.add_scaled(-1.0, &rhs).norm1() <= 1e-10);
        let lhs = m.matmul(&phi1);
        let rhs = m.expm().unwrap().add_scaled(-1.0, &i);
        prop_assert!(lhs.add_scaled(-1.0, &rhs).norm1() <= 1e-10);
    }

    #[test]
    fn mevp_is_linear_in_v(seed in any::<u64>(), n in 3usize..30, alpha in -50.0f64..50.0) {
        prop_assume!(alpha.abs() > 1e-3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = conductance(&mut rng, n);
        let c = capacitance(&mut rng, n);
        let g_lu = lu_factor(&g).unwrap();
        let op = InvertOperator::new(&g, &g_lu, &c).unwrap();
        let v = random_vec(&mut rng, n);
        let h = 10f64.powf(rng.random_range(-2.0..1.0));
        let cfg = MevpConfig::with_eps(1e-10);
        let (a, ba) = mevp_iks(&op, &v, &cfg, h).unwrap();
        let sv: Vec<f64> = v.iter().map(|x| alpha * x).collect();
        let (b, bb) = mevp_iks(&op, &sv, &cfg, h).unwrap();
        prop_assert_eq!(ba.m(), bb.m());
        let scaled: Vec<f64> = a.iter().map(|x| alpha * x).collect();
        prop_assert!(diff2(&scaled, &b) <= 1e-12 * norm2(&sv));
    }

    #[test]
    fn mevp_matches_dense_oracle(seed in any::<u64>(), n in 2usize..25) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = conductance(&mut rng, n);
        let c = capacitance(&mut rng, n);
        let g_lu = lu_factor(&g).unwrap();
        let op = InvertOperator::new(&g, &g_lu, &c).unwrap();
        let v = random_vec(&mut rng, n);
        let h = 10f64.powf(rng.random_range(-2.0..1.0));
        let (y, basis) = mevp_iks(&op, &v, &MevpConfig::with_eps(1e-9), h).unwrap();
        let j = dense(&c).inverse().unwrap().matmul(&dense(&g)).scale(-h);
        let want = j.expm().unwrap().mul_vec(&v);
        prop_assert!(diff2(&y, &want) <= 1e-7 * norm2(&v), "m = {}", basis.m());
        prop_assert!(basis.orthonormality_error() <= 1e-10);
    }

    #[test]
    fn rescaled_eval_is_pure(seed in any::<u64>(), n in 3usize..25, frac in 0.05f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = conductance(&mut rng, n);
        let c = capacitance(&mut rng, n);
        let g_lu = lu_factor(&g).unwrap();
        let op = InvertOperator::new(&g, &g_lu, &c).unwrap();
        let v = random_vec(&mut rng, n);
        let h = 10f64.powf(rng.random_range(-2.0..1.0));
        let (_, basis) = mevp_iks(&op, &v, &MevpConfig::default(), h).unwrap();
        let a = eval_at_scaled_h(&basis, frac * basis.h_sub()).unwrap();
        let b = eval_at_scaled_h(&basis, frac * basis.h_sub()).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(eval_at_scaled_h(&basis, basis.h_sub() * 1.5).is_err());
    }

    #[test]
    fn resistor_network_kcl(seed in any::<u64>(), nodes in 2usize..15) {
        // G times the all-ones voltage vector leaves only the currents into ground
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let name = |i: usize| if i == 0 { "0".to_string() } else { format!("n{i}") };
        let mut elements = Vec::new();
        let mut to_ground = vec![0.0; nodes + 1];
        for k in 1..=nodes {
            let r = 10f64.powf(rng.random_range(0.0..4.0));
            let other = rng.random_range(0..k);
            elements.push(Element::Resistor {
                name: format!("R{k}"),
                a: name(k),
                b: name(other),
                resistance: r,
            });
            if other == 0 {
                to_ground[k] += 1.0 / r;
            }
        }
        let opts = SimOptions { gmin: 0.0, ..SimOptions::default() };
        let sys = MnaSystem::build(&Circuit::new(elements).with_options(opts)).unwrap();
        let ones = vec![1.0; sys.n()];
        let i = sys.g_lin().spmv(&ones).unwrap();
        for k in 1..=nodes {
            let idx = sys.node_index(&name(k)).unwrap();
            prop_assert!((i[idx] - to_ground[k]).abs() <= 1e-12 * (1.0 + to_ground[k]));
        }
        let g = sys.g_lin();
        for (r, c, v) in g.iter() {
            prop_assert!((g.get(c, r) - v).abs() <= 1e-15 * v.abs());
        }
    }

    #[test]
    fn pwl_sources_are_continuous(seed in any::<u64>(), points in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = 0.0;
        let mut pts = Vec::new();
        let mut slope = 0.0f64;
        let mut last: Option<(f64, f64)> = None;
        for _ in 0..points {
            t += rng.random_range(0.1..1.0);
            let v = rng.random_range(-2.0..2.0);
            if let Some((t0, v0)) = last {
                slope = slope.max(((v - v0) / (t - t0)).abs());
            }
            last = Some((t, v));
            pts.push((t, v));
        }
        let w = SourceWaveform::Pwl(pts);
        w.validate().unwrap();
        let dt = 1e-6;
        for k in 0..200 {
            let s = k as f64 * t / 190.0;
            prop_assert!((w.eval(s + dt) - w.eval(s)).abs() <= slope * dt * (1.0 + 1e-9) + 1e-15);
        }
    }
}
