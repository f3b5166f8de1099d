//! Mean-field Hamiltonian assembly and application: kinetic stencil, nuclear
//! and Hartree potentials, Zeeman coupling through U, and the xc block.
//!
//! The operator is applied matrix-free: 7-point stencil plus a pointwise
//! 2x2 Hermitian action per node. The Hartree potential solves the discrete
//! Poisson problem `-Lap phi = 4 pi rho` by conjugate gradients with
//! Dirichlet boundary data taken from the monopole `q/|r - r_c|`.

use crate::error::{Error, Result};
use crate::grid::{compensated_sum, Grid, RealField, SpinorField};
use crate::spin::{ExternalFields, HermitianMatrixField, UField};
use num_complex::Complex64;

/// Soft-Coulomb nuclear potential `V(r) = -sum_k z_k / sqrt(|r-R_k|^2 + a^2)`.
pub fn nuclear_potential(ext: &ExternalFields, grid: &Grid) -> Result<RealField> {
    if ext.softening < 0.0 {
        return Err(Error::config("softening length must be nonnegative".to_string()));
    }
    for nuc in &ext.nuclei {
        if nuc.charge == 0 {
            return Err(Error::config("nuclear charge must be at least 1".to_string()));
        }
        if !grid.contains(nuc.position) {
            return Err(Error::config(format!(
                "nucleus at {:?} lies outside the box",
                nuc.position
            )));
        }
    }
    let a2 = ext.softening * ext.softening;
    let mut v = RealField::zeros(grid);
    for (i, j, k, idx) in grid.iter_nodes() {
        let p = grid.coord(i, j, k);
        let mut acc = 0.0;
        for nuc in &ext.nuclei {
            let r2 = (p[0] - nuc.position[0]).powi(2)
                + (p[1] - nuc.position[1]).powi(2)
                + (p[2] - nuc.position[2]).powi(2);
            let d = (r2 + a2).sqrt();
            if d == 0.0 {
                return Err(Error::config(
                    "unsoftened nucleus coincides with a grid node; set softening_a > 0"
                        .to_string(),
                ));
            }
            acc -= nuc.charge as f64 / d;
        }
        v.values_mut()[idx] = acc;
    }
    Ok(v)
}

/// Converged solution of the discrete Poisson problem.
#[derive(Debug, Clone)]
pub struct HartreeSolution {
    pub phi: RealField,
    pub residual_norm: f64,
    pub iterations: usize,
}

/// Solve `-Lap_h phi = 4 pi rho` with monopole Dirichlet boundary values.
///
/// Boundary nodes sit on the box faces; their values `q/|r - r_c|`
/// (q = total charge, r_c = center of charge) enter the right-hand side of
/// the zero-boundary system. Plain CG on the SPD stencil.
pub fn hartree_potential(rho: &RealField, tol: f64, max_iter: usize) -> Result<HartreeSolution> {
    hartree_potential_warm(rho, tol, max_iter, None)
}

/// [`hartree_potential`] with an initial guess, typically the solution of
/// the previous SCF iteration.
pub fn hartree_potential_warm(
    rho: &RealField,
    tol: f64,
    max_iter: usize,
    guess: Option<&RealField>,
) -> Result<HartreeSolution> {
    let grid = *rho.grid();
    if !(tol > 0.0) {
        return Err(Error::config("poisson tolerance must be positive".to_string()));
    }
    let q = rho.integrate()?;
    let n = grid.n();
    let h = grid.spacing();
    let inv_h2 = 1.0 / (h * h);

    // center of charge; box center for (numerically) neutral densities
    let center = if q.abs() > 1e-14 {
        let mut c = [0.0; 3];
        for (i, j, k, idx) in grid.iter_nodes() {
            let p = grid.coord(i, j, k);
            let w = rho.values()[idx];
            c[0] += w * p[0];
            c[1] += w * p[1];
            c[2] += w * p[2];
        }
        let s = grid.volume_element() / q;
        [c[0] * s, c[1] * s, c[2] * s]
    } else {
        grid.center()
    };

    let monopole = |p: [f64; 3]| -> f64 {
        if q.abs() <= 1e-14 {
            return 0.0;
        }
        let d = ((p[0] - center[0]).powi(2)
            + (p[1] - center[1]).powi(2)
            + (p[2] - center[2]).powi(2))
        .sqrt()
        .max(h / 2.0);
        q / d
    };

    // rhs = 4 pi rho + boundary contributions through missing neighbors
    let mut rhs: Vec<f64> = rho.values().iter().map(|&r| 4.0 * std::f64::consts::PI * r).collect();
    let origin = grid.origin();
    let l = grid.length();
    for (i, j, k, idx) in grid.iter_nodes() {
        let p = grid.coord(i, j, k);
        let pos = [i, j, k];
        for axis in 0..3 {
            if pos[axis] == 0 {
                let mut ghost = p;
                ghost[axis] = origin[axis];
                rhs[idx] += monopole(ghost) * inv_h2;
            }
            if pos[axis] == n - 1 {
                let mut ghost = p;
                ghost[axis] = origin[axis] + l;
                rhs[idx] += monopole(ghost) * inv_h2;
            }
        }
    }

    // CG on A x = rhs with A = -Lap_h (zero boundary)
    let m = grid.size();
    let apply = |x: &RealField| x.laplacian().scaled(-1.0);
    let b_norm = compensated_sum(rhs.iter().map(|v| v * v)).sqrt();
    if b_norm == 0.0 {
        return Ok(HartreeSolution { phi: RealField::zeros(&grid), residual_norm: 0.0, iterations: 0 });
    }
    let mut x = match guess {
        Some(g) if *g.grid() == grid => g.clone(),
        _ => RealField::zeros(&grid),
    };
    let mut r = RealField::from_values(&grid, rhs)?;
    if guess.is_some() {
        let ax = apply(&x);
        for i in 0..m {
            r.values_mut()[i] -= ax.values()[i];
        }
    }
    let mut p = r.clone();
    let mut rs_old = compensated_sum(r.values().iter().map(|v| v * v));
    if rs_old.sqrt() <= tol * b_norm {
        return Ok(HartreeSolution {
            phi: x,
            residual_norm: rs_old.sqrt() / b_norm,
            iterations: 0,
        });
    }
    for it in 0..max_iter {
        let iterations = it + 1;
        let ap = apply(&p);
        let p_ap = compensated_sum(p.values().iter().zip(ap.values()).map(|(a, b)| a * b));
        if p_ap <= 0.0 {
            return Err(Error::solver(format!(
                "poisson CG lost positive definiteness at iteration {it}"
            )));
        }
        let alpha = rs_old / p_ap;
        for i in 0..m {
            x.values_mut()[i] += alpha * p.values()[i];
            r.values_mut()[i] -= alpha * ap.values()[i];
        }
        let rs_new = compensated_sum(r.values().iter().map(|v| v * v));
        if rs_new.sqrt() <= tol * b_norm {
            return Ok(HartreeSolution {
                phi: x,
                residual_norm: rs_new.sqrt() / b_norm,
                iterations,
            });
        }
        let beta = rs_new / rs_old;
        for i in 0..m {
            p.values_mut()[i] = r.values()[i] + beta * p.values()[i];
        }
        rs_old = rs_new;
    }
    Err(Error::solver(format!(
        "poisson CG did not reach tol {tol} in {max_iter} iterations (relative residual {:.3e})",
        rs_old.sqrt() / b_norm
    )))
}

/// Hartree energy `J = 1/2 integrate(rho phi)`.
pub fn hartree_energy(rho: &RealField, sol: &HartreeSolution) -> Result<f64> {
    if rho.grid() != sol.phi.grid() {
        return Err(Error::config("hartree solution computed on a different grid".to_string()));
    }
    Ok(0.5 * rho.dot(&sol.phi))
}

/// Assembled mean-field operator; blocks are optional so the same type
/// serves the full model, the problem at infinity (U absent) and the
/// non-interacting model (Hartree and xc absent).
#[derive(Debug, Clone)]
pub struct MeanFieldOperator {
    grid: Grid,
    pub v_nuc: Option<RealField>,
    pub u: Option<UField>,
    pub hartree: Option<HartreeSolution>,
    pub vxc: Option<HermitianMatrixField>,
}

impl MeanFieldOperator {
    pub fn new(
        grid: Grid,
        v_nuc: Option<RealField>,
        u: Option<UField>,
        hartree: Option<HartreeSolution>,
        vxc: Option<HermitianMatrixField>,
    ) -> Result<MeanFieldOperator> {
        if let Some(f) = &v_nuc {
            if *f.grid() != grid {
                return Err(Error::config("nuclear potential on a different grid".to_string()));
            }
        }
        if let Some(u) = &u {
            if *u.mat.grid() != grid {
                return Err(Error::config("U field on a different grid".to_string()));
            }
        }
        if let Some(hs) = &hartree {
            if *hs.phi.grid() != grid {
                return Err(Error::config("hartree potential on a different grid".to_string()));
            }
        }
        if let Some(v) = &vxc {
            if *v.grid() != grid {
                return Err(Error::config("xc potential on a different grid".to_string()));
            }
        }
        Ok(MeanFieldOperator { grid, v_nuc, u, hartree, vxc })
    }

    /// Kinetic-only operator, mostly for spectra tests.
    pub fn kinetic(grid: Grid) -> MeanFieldOperator {
        MeanFieldOperator { grid, v_nuc: None, u: None, hartree: None, vxc: None }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Apply to a spinor field: `(-1/2 Lap + phi_H) I2 + U + V_xc`.
    pub fn apply(&self, psi: &SpinorField) -> Result<SpinorField> {
        if *psi.grid() != self.grid {
            return Err(Error::config("spinor lives on a different grid".to_string()));
        }
        let x = psi.to_flat();
        let mut y = vec![Complex64::new(0.0, 0.0); x.len()];
        self.apply_flat(&x, &mut y);
        SpinorField::from_flat(&self.grid, &y)
    }

    /// Flattened `[up; down]` application used by the eigensolver.
    pub fn apply_flat(&self, x: &[Complex64], y: &mut [Complex64]) {
        let m = self.grid.size();
        debug_assert_eq!(x.len(), 2 * m);
        debug_assert_eq!(y.len(), 2 * m);
        // kinetic part channelwise
        kinetic_into(&self.grid, &x[..m], &mut y[..m]);
        {
            let (up, down) = y.split_at_mut(m);
            let _ = up;
            kinetic_into(&self.grid, &x[m..], down);
        }
        // local scalar potential (Hartree)
        if let Some(hs) = &self.hartree {
            for i in 0..m {
                let v = hs.phi.values()[i];
                y[i] += v * x[i];
                y[m + i] += v * x[m + i];
            }
        }
        // 2x2 matrix blocks: U and V_xc
        for mat in [self.u.as_ref().map(|u| &u.mat), self.vxc.as_ref()].into_iter().flatten() {
            for i in 0..m {
                let uu = mat.uu.values()[i];
                let dd = mat.dd.values()[i];
                let ud = Complex64::new(mat.ud_re.values()[i], mat.ud_im.values()[i]);
                let xu = x[i];
                let xd = x[m + i];
                y[i] += uu * xu + ud * xd;
                y[m + i] += ud.conj() * xu + dd * xd;
            }
        }
    }

    /// Per-node diagonal (up channel then down channel), for preconditioning.
    pub fn diagonal(&self) -> Vec<f64> {
        let m = self.grid.size();
        let h2 = self.grid.spacing() * self.grid.spacing();
        let t_diag = 3.0 / h2;
        let mut d = vec![t_diag; 2 * m];
        if let Some(hs) = &self.hartree {
            for i in 0..m {
                d[i] += hs.phi.values()[i];
                d[m + i] += hs.phi.values()[i];
            }
        }
        for mat in [self.u.as_ref().map(|u| &u.mat), self.vxc.as_ref()].into_iter().flatten() {
            for i in 0..m {
                d[i] += mat.uu.values()[i];
                d[m + i] += mat.dd.values()[i];
            }
        }
        d
    }

    /// Total local scalar potential of one spin channel; the operator must
    /// be spin-diagonal (collinear / unpolarized tiers).
    pub fn channel_potential(&self, channel: Spin) -> Result<RealField> {
        let off = self.max_offdiagonal();
        if off > 1e-14 {
            return Err(Error::config(format!(
                "channel restriction of an operator with off-diagonal coupling {off:.3e}"
            )));
        }
        let mut v = RealField::zeros(&self.grid);
        if let Some(hs) = &self.hartree {
            v = v.add(&hs.phi);
        }
        for mat in [self.u.as_ref().map(|u| &u.mat), self.vxc.as_ref()].into_iter().flatten() {
            v = v.add(match channel {
                Spin::Up => &mat.uu,
                Spin::Down => &mat.dd,
            });
        }
        Ok(v)
    }

    fn max_offdiagonal(&self) -> f64 {
        let mut worst = 0.0_f64;
        for mat in [self.u.as_ref().map(|u| &u.mat), self.vxc.as_ref()].into_iter().flatten() {
            worst = worst.max(mat.ud_re.max_abs()).max(mat.ud_im.max_abs());
        }
        worst
    }
}

fn kinetic_into(grid: &Grid, x: &[Complex64], y: &mut [Complex64]) {
    let n = grid.n();
    let half_inv_h2 = 0.5 / (grid.spacing() * grid.spacing());
    for i in 0..n {
        for j in 0..n {
            let row = (i * n + j) * n;
            for k in 0..n {
                let c = row + k;
                let mut acc = x[c] * 6.0;
                if i > 0 {
                    acc -= x[c - n * n];
                }
                if i + 1 < n {
                    acc -= x[c + n * n];
                }
                if j > 0 {
                    acc -= x[c - n];
                }
                if j + 1 < n {
                    acc -= x[c + n];
                }
                if k > 0 {
                    acc -= x[c - 1];
                }
                if k + 1 < n {
                    acc -= x[c + 1];
                }
                y[c] = acc * half_inv_h2;
            }
        }
    }
}

/// Spin channel selector for the collinear / unpolarized tiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Spin {
    Up,
    Down,
}

/// Abstract Hermitian operator on C^N; implemented by the spinor operator
/// and by its single-channel restriction.
pub trait HermitianOp {
    fn dim(&self) -> usize;
    fn apply_to(&self, x: &[Complex64], y: &mut [Complex64]);
    /// Number of spinor components (1 or 2); the preconditioner treats the
    /// vector as that many stacked scalar grid functions.
    fn components(&self) -> usize;
    fn grid(&self) -> &Grid;
}

impl HermitianOp for MeanFieldOperator {
    fn dim(&self) -> usize {
        2 * self.grid.size()
    }
    fn apply_to(&self, x: &[Complex64], y: &mut [Complex64]) {
        self.apply_flat(x, y);
    }
    fn components(&self) -> usize {
        2
    }
    fn grid(&self) -> &Grid {
        &self.grid
    }
}

/// Single spin channel of a spin-diagonal mean-field operator:
/// `-1/2 Lap + (local channel potential)` acting on scalar grid functions.
pub struct ChannelOperator {
    grid: Grid,
    potential: RealField,
}

impl ChannelOperator {
    pub fn new(op: &MeanFieldOperator, channel: Spin) -> Result<ChannelOperator> {
        Ok(ChannelOperator { grid: *op.grid(), potential: op.channel_potential(channel)? })
    }

    /// Kinetic plus arbitrary local potential (used by tests and the
    /// unpolarized tier, where both channels coincide).
    pub fn from_potential(grid: Grid, potential: RealField) -> Result<ChannelOperator> {
        if *potential.grid() != grid {
            return Err(Error::config("potential on a different grid".to_string()));
        }
        Ok(ChannelOperator { grid, potential })
    }
}

impl HermitianOp for ChannelOperator {
    fn dim(&self) -> usize {
        self.grid.size()
    }
    fn apply_to(&self, x: &[Complex64], y: &mut [Complex64]) {
        kinetic_into(&self.grid, x, y);
        for i in 0..self.grid.size() {
            y[i] += self.potential.values()[i] * x[i];
        }
    }
    fn components(&self) -> usize {
        1
    }
    fn grid(&self) -> &Grid {
        &self.grid
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spin::{assemble_u, BFieldSpec, Nucleus, BOHR_MAGNETON};
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;

    fn ext(nuclei: Vec<Nucleus>, a: f64) -> ExternalFields {
        ExternalFields { nuclei, b: BFieldSpec::None, softening: a }
    }

    #[test]
    fn nuclear_potential_point_values() {
        // z-shifted box: the origin is not a node, so a = 0 is legal
        let g = Grid::new(15, 8.0, [-4.0, -4.0, -4.25]).unwrap();
        let e = ext(vec![Nucleus { charge: 1, position: [0.0, 0.0, 0.0] }], 0.0);
        let v = nuclear_potential(&e, &g).unwrap();
        // node (11, 7, 8) sits at (2, 0, 0.25): Coulomb at that distance
        let idx = g.index(11, 7, 8);
        assert_eq!(g.coord(11, 7, 8), [2.0, 0.0, 0.25]);
        let d = (4.0_f64 + 0.0625).sqrt();
        assert_relative_eq!(v.values()[idx], -1.0 / d, max_relative = 1e-14);
        assert!(v.values().iter().all(|&x| x < 0.0));

        // softened on-site value: -1/sqrt(0 + 1) = -1
        let g0 = Grid::new(15, 8.0, [-4.0, -4.0, -4.0]).unwrap();
        let e = ext(vec![Nucleus { charge: 1, position: [0.0, 0.0, 0.0] }], 1.0);
        let v = nuclear_potential(&e, &g0).unwrap();
        let idx0 = g0.index(7, 7, 7);
        assert_eq!(g0.coord(7, 7, 7), [0.0, 0.0, 0.0]);
        assert_relative_eq!(v.values()[idx0], -1.0, max_relative = 1e-14);

        // superposition of two nuclei, unsoftened, off-node positions
        let e = ext(
            vec![
                Nucleus { charge: 1, position: [1.0, 0.0, 0.0] },
                Nucleus { charge: 2, position: [-2.0, 0.0, 0.0] },
            ],
            0.0,
        );
        let v = nuclear_potential(&e, &g).unwrap();
        // node (7, 7, 8) at (0, 0, 0.25): distances sqrt(1.0625), sqrt(4.0625)
        let idx = g.index(7, 7, 8);
        let expect = -1.0 / (1.0625_f64).sqrt() - 2.0 / (4.0625_f64).sqrt();
        assert_relative_eq!(v.values()[idx], expect, max_relative = 1e-14);
    }

    #[test]
    fn nuclear_potential_rejects_singular_sample() {
        let g = Grid::new(15, 8.0, [-4.0, -4.0, -4.0]).unwrap();
        let e = ext(vec![Nucleus { charge: 1, position: [0.0, 0.0, 0.0] }], 0.0);
        // nucleus on a node with a = 0 -> error; (0,0,0) is the node (7,7,7)
        assert!(nuclear_potential(&e, &g).is_err());

        let g_off = Grid::new(8, 8.0, [-4.0, -4.0, -4.0]).unwrap();
        // with n even the origin is not a node; fine
        assert!(nuclear_potential(&e, &g_off).is_ok());
    }

    #[test]
    fn hartree_zero_density() {
        let g = Grid::centered(8, 6.0).unwrap();
        let sol = hartree_potential(&RealField::zeros(&g), 1e-10, 500).unwrap();
        assert_eq!(sol.phi.max_abs(), 0.0);
        assert_eq!(sol.iterations, 0);
    }

    fn gaussian_density(g: &Grid, alpha: f64) -> RealField {
        let norm = (alpha / std::f64::consts::PI).powf(1.5);
        RealField::from_fn(g, |p| {
            norm * (-alpha * (p[0] * p[0] + p[1] * p[1] + p[2] * p[2])).exp()
        })
    }

    #[test]
    fn hartree_gaussian_matches_erf_potential() {
        let g = Grid::centered(32, 12.0).unwrap();
        let alpha = 1.0;
        let rho = gaussian_density(&g, alpha);
        let sol = hartree_potential(&rho, 1e-9, 6000).unwrap();
        // compare against erf(sqrt(alpha) r)/r away from the boundary
        let mut worst = 0.0_f64;
        for (i, j, k, idx) in g.iter_nodes() {
            let p = g.coord(i, j, k);
            let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            if r > 4.0 {
                continue;
            }
            let exact = if r < 1e-12 {
                2.0 * (alpha / std::f64::consts::PI).sqrt()
            } else {
                libm::erf(alpha.sqrt() * r) / r
            };
            worst = worst.max((sol.phi.values()[idx] - exact).abs());
        }
        // h = 0.36: O(h^2) stencil error plus monopole boundary error
        assert!(worst < 0.02, "worst pointwise error {worst}");
        // positivity
        assert!(sol.phi.values().iter().all(|&v| v >= -1e-10));
    }

    #[test]
    fn hartree_energy_gaussian_self_energy() {
        // J = sqrt(alpha/(2 pi)) for the normalized Gaussian
        let g = Grid::centered(32, 12.0).unwrap();
        let alpha = 1.0;
        let rho = gaussian_density(&g, alpha);
        let sol = hartree_potential(&rho, 1e-9, 6000).unwrap();
        let j = hartree_energy(&rho, &sol).unwrap();
        let exact = (alpha / (2.0 * std::f64::consts::PI)).sqrt();
        assert!((j - exact).abs() < 0.01 * exact, "J = {j}, exact = {exact}");
        assert!(j >= 0.0);
    }

    #[test]
    fn hartree_energy_is_quadratic() {
        let g = Grid::centered(12, 8.0).unwrap();
        let rho = gaussian_density(&g, 0.8);
        let sol1 = hartree_potential(&rho, 1e-10, 4000).unwrap();
        let j1 = hartree_energy(&rho, &sol1).unwrap();
        // doubling rho scales every CG iterate exactly (powers of two)
        let rho2 = rho.scaled(2.0);
        let sol2 = hartree_potential(&rho2, 1e-10, 4000).unwrap();
        let j2 = hartree_energy(&rho2, &sol2).unwrap();
        assert_relative_eq!(j2, 4.0 * j1, max_relative = 1e-12);
    }

    #[test]
    fn hartree_boundary_error_bounded_by_inverse_box() {
        // fixed h, growing box: J on boxes L and 2L differ by at most C/L
        let j_at = |l: f64| {
            let n = (4.0 * l) as usize;
            let g = Grid::centered(n, l).unwrap();
            let rho = gaussian_density(&g, 1.0);
            let sol = hartree_potential(&rho, 1e-9, 6000).unwrap();
            hartree_energy(&rho, &sol).unwrap()
        };
        let diff = (j_at(6.0) - j_at(12.0)).abs();
        assert!(diff <= 0.05 / 6.0, "|J(L) - J(2L)| = {diff} exceeds C/L");
    }

    #[test]
    fn kinetic_eigenvector_of_dirichlet_mode() {
        let g = Grid::new(6, 4.0, [0.0; 3]).unwrap();
        let op = MeanFieldOperator::kinetic(g);
        let n = g.n();
        let mode = |m: usize, t: usize| {
            (std::f64::consts::PI * (m as f64 + 1.0) * (t as f64 + 1.0) / (n as f64 + 1.0)).sin()
        };
        let mut up = vec![Complex64::new(0.0, 0.0); g.size()];
        for (i, j, k, idx) in g.iter_nodes() {
            up[idx] = Complex64::new(mode(0, i) * mode(1, j) * mode(0, k), 0.0);
        }
        let psi = SpinorField::new(
            crate::grid::ComplexField::from_values(&g, up).unwrap(),
            crate::grid::ComplexField::zeros(&g),
        )
        .unwrap();
        let expect = 0.5
            * (g.dirichlet_eigenvalue_1d(0)
                + g.dirichlet_eigenvalue_1d(1)
                + g.dirichlet_eigenvalue_1d(0));
        let h_psi = op.apply(&psi).unwrap();
        for (a, b) in h_psi.up().values().iter().zip(psi.up().values()) {
            assert!((a - expect * b).norm() < 1e-10 * expect);
        }
    }

    #[test]
    fn uniform_bz_shifts_channels() {
        let g = Grid::centered(6, 4.0).unwrap();
        let b0 = 0.7;
        let b = BFieldSpec::Uniform { amplitude: b0, axis: 2 }.sample(&g).unwrap().unwrap();
        let u = assemble_u(&RealField::zeros(&g), Some(&b), BOHR_MAGNETON).unwrap();
        let op = MeanFieldOperator::new(g, None, Some(u), None, None).unwrap();
        let op_free = MeanFieldOperator::kinetic(g);

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let psi = random_spinor(&g, &mut rng);
        let with_b = op.apply(&psi).unwrap();
        let free = op_free.apply(&psi).unwrap();
        for i in 0..g.size() {
            let d_up = with_b.up().values()[i] - free.up().values()[i];
            assert!((d_up - (-BOHR_MAGNETON * b0) * psi.up().values()[i]).norm() < 1e-14);
            let d_dn = with_b.down().values()[i] - free.down().values()[i];
            assert!((d_dn - (BOHR_MAGNETON * b0) * psi.down().values()[i]).norm() < 1e-14);
        }
    }

    fn random_spinor(g: &Grid, rng: &mut rand_chacha::ChaCha8Rng) -> SpinorField {
        let mk = |rng: &mut rand_chacha::ChaCha8Rng| {
            crate::grid::ComplexField::from_values(
                g,
                (0..g.size())
                    .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                    .collect(),
            )
            .unwrap()
        };
        SpinorField::new(mk(rng), mk(rng)).unwrap()
    }

    fn full_operator(g: &Grid, seed: u64) -> MeanFieldOperator {
        let e = ExternalFields {
            nuclei: vec![Nucleus { charge: 2, position: [0.1, -0.2, 0.0] }],
            b: BFieldSpec::Gaussian {
                center: [0.3, 0.0, -0.1],
                width: 1.0,
                amplitude: 0.8,
                axis: 0,
            },
            softening: 0.3,
        };
        let v = nuclear_potential(&e, g).unwrap();
        let b = e.b.sample(g).unwrap();
        let u = assemble_u(&v, b.as_ref(), BOHR_MAGNETON).unwrap();
        let set = crate::spin::tests::random_occupied_set(g, 2, seed);
        let r = crate::spin::density_from_orbitals(&set).unwrap();
        let rho = r.trace_density();
        let hs = hartree_potential(&rho, 1e-9, 4000).unwrap();
        let vxc =
            crate::xc::vxc_matrix(&r, &crate::xc::XcFunctional::xalpha(), crate::xc::S_TOL_SCALE)
                .unwrap();
        MeanFieldOperator::new(*g, Some(v), Some(u), Some(hs), Some(vxc)).unwrap()
    }

    #[test]
    fn operator_is_hermitian_and_linear() {
        let g = Grid::centered(6, 5.0).unwrap();
        let op = full_operator(&g, 17);
        for seed in [41, 42, 43] {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let psi = random_spinor(&g, &mut rng);
            let chi = random_spinor(&g, &mut rng);
            let h_psi = op.apply(&psi).unwrap();
            let h_chi = op.apply(&chi).unwrap();
            let lhs = psi.inner(&h_chi);
            let rhs = chi.inner(&h_psi).conj();
            assert!(
                (lhs - rhs).norm() <= 1e-12 * lhs.norm().max(1.0),
                "hermiticity violated: {lhs} vs {rhs}"
            );

            // linearity
            let a = Complex64::new(0.7, -0.3);
            let b = Complex64::new(-1.2, 0.4);
            let mut combo = SpinorField::zeros(&g);
            combo.axpy(a, &psi);
            combo.axpy(b, &chi);
            let h_combo = op.apply(&combo).unwrap();
            for i in 0..g.size() {
                let expect = a * h_psi.up().values()[i] + b * h_chi.up().values()[i];
                assert!((h_combo.up().values()[i] - expect).norm() < 1e-12);
                let expect = a * h_psi.down().values()[i] + b * h_chi.down().values()[i];
                assert!((h_combo.down().values()[i] - expect).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn spin_scalar_operator_commutes_with_flip() {
        // U = 0 and xc off: H is spin-scalar and commutes with the
        // (antilinear) flip on every vector
        let g = Grid::centered(6, 5.0).unwrap();
        let rho = gaussian_density(&g, 1.0);
        let hs = hartree_potential(&rho, 1e-10, 2000).unwrap();
        let op = MeanFieldOperator::new(g, None, None, Some(hs), None).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let psi = random_spinor(&g, &mut rng);
        let flip = |s: &SpinorField| {
            SpinorField::new(s.down().conj(), s.up().conj().scaled(Complex64::new(-1.0, 0.0)))
                .unwrap()
        };
        let a = op.apply(&flip(&psi)).unwrap();
        let b = flip(&op.apply(&psi).unwrap());
        for i in 0..g.size() {
            assert!((a.up().values()[i] - b.up().values()[i]).norm() < 1e-12);
            assert!((a.down().values()[i] - b.down().values()[i]).norm() < 1e-12);
        }
    }

    #[test]
    fn channel_restriction_requires_spin_diagonal() {
        let g = Grid::centered(6, 5.0).unwrap();
        let op = full_operator(&g, 23); // has transverse B -> off-diagonal
        assert!(ChannelOperator::new(&op, Spin::Up).is_err());

        let bz = BFieldSpec::Uniform { amplitude: 0.4, axis: 2 }.sample(&g).unwrap().unwrap();
        let u = assemble_u(&RealField::zeros(&g), Some(&bz), BOHR_MAGNETON).unwrap();
        let op = MeanFieldOperator::new(g, None, Some(u), None, None).unwrap();
        let ch = ChannelOperator::new(&op, Spin::Down).unwrap();
        assert_eq!(ch.dim(), g.size());
    }
}
