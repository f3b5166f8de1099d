//! Property tests for the structural invariants: occupation filling,
//! pointwise spin-matrix bounds, and the flip involution.

use num_complex::Complex64;
use proptest::prelude::*;
use spindft::grid::{ComplexField, Grid, RealField, SpinorField};
use spindft::scf::occupy;
use spindft::spin::{density_from_orbitals, OccupiedSet, SpinDensityField};

fn tiny_grid() -> Grid {
    Grid::new(2, 3.0, [0.0; 3]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn occupy_respects_coleman_constraints(
        gaps in proptest::collection::vec(0.0..0.8f64, 3..12),
        first in -3.0..0.0f64,
        lambda_frac in 0.05..0.999f64,
    ) {
        let mut eigs = vec![first];
        for g in &gaps {
            eigs.push(eigs.last().unwrap() + g);
        }
        let capacity = eigs.len() as f64;
        let lambda = lambda_frac * capacity;
        let deg_tol = 1e-6;
        let (occ, fermi) = occupy(&eigs, lambda, deg_tol).unwrap();

        // Coleman: 0 <= n <= 1, sum n = lambda
        prop_assert!(occ.iter().all(|&n| (0.0..=1.0).contains(&n)));
        let sum: f64 = occ.iter().sum();
        prop_assert!((sum - lambda).abs() < 1e-10);

        // Aufbau: full below, empty above, fractional only at the frontier
        for (i, &n) in occ.iter().enumerate() {
            if n > 1.0 - 1e-12 {
                prop_assert!(eigs[i] <= fermi + deg_tol);
            } else if n < 1e-12 {
                prop_assert!(eigs[i] >= fermi - deg_tol);
            } else {
                prop_assert!((eigs[i] - fermi).abs() <= deg_tol);
            }
        }

        // levels within deg_tol of each other share the fractional charge
        for i in 0..occ.len() {
            for j in (i + 1)..occ.len() {
                if (eigs[i] - eigs[j]).abs() <= f64::EPSILON && occ[i] < 1.0 - 1e-12 {
                    prop_assert!((occ[i] - occ[j]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn spin_matrix_eigenvalue_bounds(
        ruu in 0.0..2.0f64,
        rdd in 0.0..2.0f64,
        phase in 0.0..std::f64::consts::TAU,
        mag_frac in 0.0..1.0f64,
    ) {
        // Hermitian PSD by construction: |rud|^2 <= ruu rdd
        let grid = tiny_grid();
        let offdiag = mag_frac * (ruu * rdd).sqrt();
        let mut r = SpinDensityField::zeros(&grid);
        r.ruu = RealField::constant(&grid, ruu);
        r.rdd = RealField::constant(&grid, rdd);
        r.rud_re = RealField::constant(&grid, offdiag * phase.cos());
        r.rud_im = RealField::constant(&grid, offdiag * phase.sin());

        let (plus, minus) = r.eigenvalues_pm().unwrap();
        let rho = ruu + rdd;
        prop_assert!(minus.values()[0] >= -1e-12);
        prop_assert!(plus.values()[0] >= minus.values()[0]);
        prop_assert!(plus.values()[0] <= rho + 1e-12);
        prop_assert!((plus.values()[0] + minus.values()[0] - rho).abs() <= 1e-12 * (1.0 + rho));

        let m = r.magnetization();
        let m_norm = (m[0].values()[0].powi(2)
            + m[1].values()[0].powi(2)
            + m[2].values()[0].powi(2))
        .sqrt();
        prop_assert!(m_norm <= rho + 1e-12);
    }

    #[test]
    fn flip_is_involution_on_densities(
        re_u in proptest::collection::vec(-1.0..1.0f64, 8),
        im_u in proptest::collection::vec(-1.0..1.0f64, 8),
        re_d in proptest::collection::vec(-1.0..1.0f64, 8),
        im_d in proptest::collection::vec(-1.0..1.0f64, 8),
        occ in 0.05..1.0f64,
    ) {
        let grid = tiny_grid();
        let up: Vec<Complex64> =
            re_u.iter().zip(&im_u).map(|(&a, &b)| Complex64::new(a, b)).collect();
        let dn: Vec<Complex64> =
            re_d.iter().zip(&im_d).map(|(&a, &b)| Complex64::new(a, b)).collect();
        let psi = SpinorField::new(
            ComplexField::from_values(&grid, up).unwrap(),
            ComplexField::from_values(&grid, dn).unwrap(),
        )
        .unwrap();
        if psi.norm_sq() < 1e-6 {
            return Ok(());
        }
        let set = OccupiedSet::new(vec![psi.normalized().unwrap()], vec![occ]).unwrap();
        let r = density_from_orbitals(&set).unwrap();
        let r2 = density_from_orbitals(&set.flip().flip()).unwrap();
        for idx in 0..grid.size() {
            prop_assert!((r.ruu.values()[idx] - r2.ruu.values()[idx]).abs() < 1e-13);
            prop_assert!((r.rdd.values()[idx] - r2.rdd.values()[idx]).abs() < 1e-13);
            prop_assert!((r.rud_re.values()[idx] - r2.rud_re.values()[idx]).abs() < 1e-13);
            prop_assert!((r.rud_im.values()[idx] - r2.rud_im.values()[idx]).abs() < 1e-13);
        }
        // flip preserves the trace density and negates m
        let rf = density_from_orbitals(&set.flip()).unwrap();
        for idx in 0..grid.size() {
            let rho = r.ruu.values()[idx] + r.rdd.values()[idx];
            let rho_f = rf.ruu.values()[idx] + rf.rdd.values()[idx];
            prop_assert!((rho - rho_f).abs() < 1e-13);
        }
    }
}
