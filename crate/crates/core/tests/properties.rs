use std::sync::Arc;

use hjb_pi::domains::{restrict_grid, SublevelDomain};
use hjb_pi::kernels::{KernelSpec, KernelSurrogate};
use hjb_pi::lqr::{newton_kleinman, solve_lyapunov};
use hjb_pi::reference::e_l2;
use hjb_pi::value::squared_norm;
use hjb_pi::{BoundingBox, Grid};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn surrogate(sigma: f64, data: &[(f64, f64, f64)]) -> KernelSurrogate<f64> {
    let centers: Vec<DVector<f64>> = data.iter().map(|(a, b, _)| DVector::from_vec(vec![*a, *b])).collect();
    let coeffs = DVector::from_iterator(data.len(), data.iter().map(|(_, _, c)| *c));
    KernelSurrogate::new(KernelSpec::gaussian(sigma).unwrap(), &centers, coeffs).unwrap()
}

fn centers() -> impl Strategy<Value = Vec<(f64, f64, f64)>> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0), 1..12)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn gradient_matches_central_differences(sigma in 0.3f64..2.0, data in centers(), x in -1.0f64..1.0, y in -1.0f64..1.0) {
        let s = surrogate(sigma, &data);
        let p = DVector::from_vec(vec![x, y]);
        let g = s.grad(&p).unwrap();
        let h = 1e-5;
        let fd = DVector::from_fn(2, |i, _| {
            let mut e = DVector::zeros(2);
            e[i] = h;
            (s.eval(&(&p + &e)).unwrap() - s.eval(&(&p - &e)).unwrap()) / (2.0 * h)
        });
        let scale = data.iter().map(|d| d.2.abs()).sum::<f64>() / (sigma * sigma);
        prop_assert!((&g - &fd).norm() <= 1e-6 * g.norm().max(1e-3 * scale));
    }

    #[test]
    fn zeroed_surrogate_vanishes_at_origin(sigma in 0.3f64..2.0, data in centers()) {
        let s = surrogate(sigma, &data);
        prop_assert_eq!(s.eval(&DVector::zeros(2)).unwrap(), 0.0);
        prop_assert_eq!(s.grad(&DVector::zeros(2)).unwrap().len(), 2);
    }

    #[test]
    fn zeroed_kernel_symmetric(sigma in 0.3f64..2.0, a in -1.0f64..1.0, b in -1.0f64..1.0, c in -1.0f64..1.0, d in -1.0f64..1.0) {
        let k = KernelSpec::gaussian(sigma).unwrap();
        prop_assert_eq!(k.eval_slices(&[a, b], &[c, d]), k.eval_slices(&[c, d], &[a, b]));
    }

    #[test]
    fn shift_difference_matches_naive(sigma in 0.5f64..2.0, x in -1.0f64..1.0, y in -1.0f64..1.0, dx in -0.1f64..0.1, dy in -0.1f64..0.1, c in -1.0f64..1.0, e in -1.0f64..1.0) {
        let k = KernelSpec::gaussian(sigma).unwrap();
        let naive = k.eval_slices(&[x, y], &[c, e]) - k.eval_slices(&[x + dx, y + dy], &[c, e]);
        let fast = k.shift_difference(&[x, y], &[dx, dy], &[c, e]);
        prop_assert!((naive - fast).abs() <= 1e-14);
    }

    #[test]
    fn restricted_grids_nest(c1 in 0.05f64..2.0, shrink in 0.1f64..1.0) {
        let grid = Grid::rectangular(&[1.0, 1.0], 11).unwrap();
        let bbox = BoundingBox::symmetric(&[1.0, 1.0]);
        let d1 = Arc::new(SublevelDomain::new(Arc::new(squared_norm()), c1, bbox.clone(), None));
        let d2 = SublevelDomain::new(Arc::new(squared_norm()), c1 * shrink, bbox, Some(d1.clone()));
        if let (Ok(g1), Ok(g2)) = (restrict_grid(&grid, &d1), restrict_grid(&grid, &d2)) {
            prop_assert!(g2.points().iter().all(|p| g1.points().contains(p)));
            prop_assert!(g1.points().iter().all(|p| grid.points().contains(p)));
            prop_assert!(g2.points().iter().all(|p| p.norm_squared() < c1 * shrink));
        }
    }

    #[test]
    fn e_l2_doubles_with_error(refs in prop::collection::vec(0.1f64..3.0, 1..20), errs in prop::collection::vec(-0.1f64..0.1, 20)) {
        let a1: Vec<f64> = refs.iter().zip(&errs).map(|(r, e)| r + e).collect();
        let a2: Vec<f64> = refs.iter().zip(&errs).map(|(r, e)| r + 2.0 * e).collect();
        let (m1, m2) = (e_l2(&a1, &refs).unwrap(), e_l2(&a2, &refs).unwrap());
        prop_assert!((m2 - 2.0 * m1).abs() <= 1e-12 * (1.0 + m2));
    }

    #[test]
    fn lyapunov_solution_is_spd(a11 in -3.0f64..-0.5, a12 in -1.0f64..1.0, a21 in -1.0f64..1.0, a22 in -3.0f64..-0.5) {
        let a = DMatrix::from_row_slice(2, 2, &[a11, a12, a21, a22]);
        prop_assume!(a.complex_eigenvalues().iter().all(|l| l.re < -0.1));
        let q = DMatrix::identity(2, 2);
        let p = solve_lyapunov(&a, &q).unwrap().p;
        let res = a.transpose() * &p + &p * &a + &q;
        prop_assert!(res.amax() <= 1e-10 * (1.0 + p.amax()));
        prop_assert!(p.symmetric_eigen().eigenvalues.min() > 0.0);
    }

    #[test]
    fn kleinman_iterates_decrease(a21 in -2.0f64..2.0, a22 in -1.0f64..2.0, r in 0.02f64..2.0) {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, a21, a22]);
        let b = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        // places both closed-loop poles at -2
        let k0 = DMatrix::from_row_slice(1, 2, &[a21 + 4.0, a22 + 4.0]);
        let res = newton_kleinman(&a, &b, &DMatrix::identity(2, 2), &DMatrix::from_element(1, 1, r), &k0, 1e-12, 100).unwrap();
        prop_assert!(res.converged);
        for w in res.iterates.windows(2) {
            // Loewner order: P_s − P_{s+1} is positive semidefinite
            let diff = &w[0] - &w[1];
            prop_assert!(diff.symmetric_eigen().eigenvalues.min() >= -1e-9 * w[0].amax());
        }
    }
}
