//! Exchange-correlation: the local function g, its admissibility conditions,
//! the von Barth-Hedin spin-polarized energy
//! `E_xc(rho+, rho-) = 1/2 [E_lda(2 rho+) + E_lda(2 rho-)]`,
//! and the matrix-valued potential entering the mean-field Hamiltonian.
//!
//! The potential is the energy-consistent derivative of the von Barth-Hedin
//! form: `V_xc = g'(2 rho+) (I+P)/2 + g'(2 rho-) (I-P)/2` with the direction
//! matrix `P = [[ruu-rdd, 2 rud],[2 conj(rud), rdd-ruu]] / s`,
//! `s = sqrt((ruu-rdd)^2 + 4 |rud|^2)`. It is pinned by a finite-difference
//! functional-derivative test rather than by transcription.

use crate::error::{Error, Result};
use crate::grid::RealField;
use crate::spin::{HermitianMatrixField, SpinDensityField};

/// Conventional Slater-Dirac exchange constant `(3/4)(3/pi)^(1/3)`.
pub fn default_c_x() -> f64 {
    0.75 * (3.0 / std::f64::consts::PI).powf(1.0 / 3.0)
}

/// Degeneracy threshold scale for the direction matrix: below
/// `s < S_TOL_SCALE * (1 + rho)` the averaged limit `g'(rho) I` is used.
pub const S_TOL_SCALE: f64 = 1e-10;

/// Local density functional used for the xc energy.
#[derive(Debug, Clone, PartialEq)]
pub enum XcFunctional {
    /// No exchange-correlation (reduced Hartree-Fock-like model).
    None,
    /// Slater Xalpha: `g(rho) = -c_x rho^(4/3)`.
    XAlpha { c_x: f64 },
}

impl XcFunctional {
    pub fn xalpha() -> XcFunctional {
        XcFunctional::XAlpha { c_x: default_c_x() }
    }

    pub fn is_none(&self) -> bool {
        matches!(self, XcFunctional::None)
    }

    pub fn name(&self) -> &'static str {
        match self {
            XcFunctional::None => "none",
            XcFunctional::XAlpha { .. } => "xalpha",
        }
    }

    /// `g(rho)`; negative densities are numerical noise and clamp to zero.
    pub fn g(&self, rho: f64) -> f64 {
        let rho = rho.max(0.0);
        match self {
            XcFunctional::None => 0.0,
            XcFunctional::XAlpha { c_x } => -c_x * rho.powf(4.0 / 3.0),
        }
    }

    /// `g'(rho)` with the same clamping.
    pub fn g_prime(&self, rho: f64) -> f64 {
        let rho = rho.max(0.0);
        match self {
            XcFunctional::None => 0.0,
            XcFunctional::XAlpha { c_x } => -(4.0 / 3.0) * c_x * rho.powf(1.0 / 3.0),
        }
    }

    /// Gate the functional through the admissibility validator.
    /// `None` is exempt: it corresponds to dropping the xc term entirely.
    pub fn validate(&self) -> Result<()> {
        match self {
            XcFunctional::None => Ok(()),
            XcFunctional::XAlpha { c_x } => {
                if !(*c_x > 0.0) || !c_x.is_finite() {
                    return Err(Error::config(format!("xalpha constant must be positive, got {c_x}")));
                }
                let v = validate_cond_g(|r| self.g(r), |r| self.g_prime(r));
                if v.admissible {
                    Ok(())
                } else {
                    Err(Error::config(format!("xc functional fails admissibility: {}", v.reason)))
                }
            }
        }
    }
}

/// Outcome of the admissibility check on a log-spaced sample grid.
#[derive(Debug, Clone)]
pub struct CondGVerdict {
    pub admissible: bool,
    pub reason: String,
    /// Estimated growth exponents of |g'| at the small/large density ends.
    pub beta_minus: f64,
    pub beta_plus: f64,
    /// Estimated small-density exponent of g itself.
    pub alpha: f64,
}

/// Validate the hypotheses on g numerically: g(0) = 0, g' <= 0, |g'| grows
/// like `rho^beta` with `0 < beta- <= beta+ < 2/3` across the sampled range,
/// and `g(rho)/rho^alpha` has a negative small-density limit for some
/// `1 <= alpha < 3/2`. Total and pure; never panics on user-supplied g.
pub fn validate_cond_g(g: impl Fn(f64) -> f64, g_prime: impl Fn(f64) -> f64) -> CondGVerdict {
    let fail = |reason: String| CondGVerdict {
        admissible: false,
        reason,
        beta_minus: f64::NAN,
        beta_plus: f64::NAN,
        alpha: f64::NAN,
    };

    let g0 = g(0.0);
    if !(g0.abs() <= 1e-14) {
        return fail(format!("g(0) = {g0}, expected 0"));
    }

    // log-spaced samples over 16 decades
    let decades = 16.0;
    let samples_per_decade = 8;
    let count = (decades as usize) * samples_per_decade + 1;
    let rhos: Vec<f64> = (0..count)
        .map(|i| 10f64.powf(-10.0 + decades * i as f64 / (count - 1) as f64))
        .collect();

    let mut gp = Vec::with_capacity(count);
    for &r in &rhos {
        let v = g_prime(r);
        if !v.is_finite() {
            return fail(format!("g'({r}) is not finite"));
        }
        if v > 1e-14 {
            return fail(format!("g'({r}) = {v} > 0 violates monotonicity"));
        }
        gp.push(v.abs());
    }

    // local log-slopes of |g'|; all must sit inside (0, 2/3)
    let mut slopes = Vec::new();
    for w in rhos.windows(2).zip(gp.windows(2)) {
        let (rw, gw) = w;
        if gw[0] > 0.0 && gw[1] > 0.0 {
            slopes.push((gw[1].ln() - gw[0].ln()) / (rw[1].ln() - rw[0].ln()));
        }
    }
    if slopes.is_empty() {
        return fail("|g'| vanishes identically on the sample grid".to_string());
    }
    let margin = 1e-6;
    let beta_minus = slopes.iter().copied().fold(f64::INFINITY, f64::min);
    let beta_plus = slopes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if beta_minus <= margin {
        return fail(format!(
            "growth window violated: local exponent {beta_minus:.4} of |g'| is not positive"
        ));
    }
    if beta_plus >= 2.0 / 3.0 - margin {
        return fail(format!(
            "growth window violated: local exponent {beta_plus:.4} of |g'| reaches 2/3"
        ));
    }

    // small-density exponent of g: limsup g/rho^alpha < 0 for some alpha in [1, 3/2)
    let lo: Vec<usize> = (0..2 * samples_per_decade).collect();
    let mut alpha_est = Vec::new();
    for w in lo.windows(2) {
        let (i, j) = (w[0], w[1]);
        let (gi, gj) = (g(rhos[i]), g(rhos[j]));
        if gi >= 0.0 || gj >= 0.0 {
            return fail(format!("g must be negative near 0, got g({}) = {}", rhos[i], gi));
        }
        alpha_est.push(((-gj).ln() - (-gi).ln()) / (rhos[j].ln() - rhos[i].ln()));
    }
    let alpha = alpha_est.iter().sum::<f64>() / alpha_est.len() as f64;
    if !(1.0 - 1e-6..1.5 - margin).contains(&alpha) {
        return fail(format!(
            "small-density exponent alpha = {alpha:.4} falls outside [1, 3/2)"
        ));
    }

    CondGVerdict {
        admissible: true,
        reason: "ok".to_string(),
        beta_minus,
        beta_plus,
        alpha,
    }
}

/// Spin-polarized xc energy `1/2 integrate(g(2 rho+) + g(2 rho-))`.
pub fn exc_lsda(rho_plus: &RealField, rho_minus: &RealField, f: &XcFunctional) -> Result<f64> {
    if rho_plus.grid() != rho_minus.grid() {
        return Err(Error::config("rho+ and rho- live on different grids".to_string()));
    }
    if f.is_none() {
        return Ok(0.0);
    }
    let density = rho_plus.zip_map(rho_minus, |p, m| 0.5 * (f.g(2.0 * p) + f.g(2.0 * m)));
    density.integrate()
}

/// Matrix xc potential per node. Where the eigenvalue splitting `s` falls
/// below `s_tol * (1 + rho)` the direction matrix is undefined and the
/// continuous limit `g'(rho) I` applies.
pub fn vxc_matrix(r: &SpinDensityField, f: &XcFunctional, s_tol: f64) -> Result<HermitianMatrixField> {
    let grid = *r.grid();
    let mut out = HermitianMatrixField::zeros(&grid);
    if f.is_none() {
        return Ok(out);
    }
    let m = grid.size();
    for idx in 0..m {
        let a = r.ruu.values()[idx];
        let d = r.rdd.values()[idx];
        let re = r.rud_re.values()[idx];
        let im = r.rud_im.values()[idx];
        let rho = a + d;
        let s = ((a - d) * (a - d) + 4.0 * (re * re + im * im)).sqrt();
        if s < s_tol * (1.0 + rho) {
            let gp = f.g_prime(rho);
            out.uu.values_mut()[idx] = gp;
            out.dd.values_mut()[idx] = gp;
        } else {
            let rho_p = 0.5 * (rho + s);
            let rho_m = 0.5 * (rho - s);
            let gp_p = f.g_prime(2.0 * rho_p);
            let gp_m = f.g_prime(2.0 * rho_m);
            let avg = 0.5 * (gp_p + gp_m);
            let dif = 0.5 * (gp_p - gp_m);
            out.uu.values_mut()[idx] = avg + dif * (a - d) / s;
            out.dd.values_mut()[idx] = avg - dif * (a - d) / s;
            out.ud_re.values_mut()[idx] = dif * 2.0 * re / s;
            out.ud_im.values_mut()[idx] = dif * 2.0 * im / s;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{ComplexField, Grid, SpinorField};
    use crate::spin::{density_from_orbitals, OccupiedSet};
    use approx::assert_relative_eq;
    use num_complex::Complex64;

    #[test]
    fn xalpha_values() {
        let f = XcFunctional::XAlpha { c_x: 0.7386 };
        assert_eq!(f.g(0.0), 0.0);
        assert_eq!(f.g_prime(0.0), 0.0);
        assert_relative_eq!(f.g(1.0), -0.7386, epsilon = 1e-15);

        let f1 = XcFunctional::XAlpha { c_x: 1.0 };
        assert_relative_eq!(f1.g(8.0), -16.0, max_relative = 1e-14);
        assert_relative_eq!(f1.g_prime(8.0), -8.0 / 3.0, max_relative = 1e-14);
    }

    #[test]
    fn default_constant_is_slater_dirac() {
        assert_relative_eq!(default_c_x(), 0.738558766382022, epsilon = 1e-12);
    }

    #[test]
    fn negative_density_clamps() {
        let f = XcFunctional::xalpha();
        assert_eq!(f.g(-1e-13), 0.0);
        assert_eq!(f.g_prime(-1e-13), 0.0);
    }

    #[test]
    fn cond_g_accepts_xalpha() {
        let f = XcFunctional::xalpha();
        let v = validate_cond_g(|r| f.g(r), |r| f.g_prime(r));
        assert!(v.admissible, "{}", v.reason);
        assert_relative_eq!(v.beta_minus, 1.0 / 3.0, epsilon = 1e-6);
        assert_relative_eq!(v.beta_plus, 1.0 / 3.0, epsilon = 1e-6);
        assert_relative_eq!(v.alpha, 4.0 / 3.0, epsilon = 1e-6);
        assert!(f.validate().is_ok());
    }

    #[test]
    fn cond_g_rejects_wrong_sign() {
        // g = +rho^2 has g' >= 0
        let v = validate_cond_g(|r| r * r, |r| 2.0 * r);
        assert!(!v.admissible);
        assert!(v.reason.contains("monotonicity"));
    }

    #[test]
    fn cond_g_rejects_growth_window_violations() {
        // g = -rho^(5/3): exponent of |g'| is 2/3, outside the open window
        let v = validate_cond_g(|r| -r.powf(5.0 / 3.0), |r| -(5.0 / 3.0) * r.powf(2.0 / 3.0));
        assert!(!v.admissible);
        // g = -rho: g' constant, beta = 0 not allowed
        let v = validate_cond_g(|r| -r, |_| -1.0);
        assert!(!v.admissible);
        // g = -rho^2: |g'| grows linearly, beta = 1 >= 2/3
        let v = validate_cond_g(|r| -r * r, |r| -2.0 * r);
        assert!(!v.admissible);
    }

    #[test]
    fn cond_g_is_total_on_hostile_input() {
        let v = validate_cond_g(|_| f64::NAN, |_| f64::NAN);
        assert!(!v.admissible);
    }

    fn gaussian(g: &Grid, center: [f64; 3], w: f64) -> ComplexField {
        let raw = ComplexField::from_fn(g, |p| {
            let r2 = (p[0] - center[0]).powi(2)
                + (p[1] - center[1]).powi(2)
                + (p[2] - center[2]).powi(2);
            Complex64::new((-r2 / (2.0 * w * w)).exp(), 0.0)
        });
        let n = raw.norm_sq().sqrt();
        raw.scaled(Complex64::new(1.0 / n, 0.0))
    }

    #[test]
    fn exc_reduces_to_lda_when_unpolarized() {
        let g = Grid::centered(10, 8.0).unwrap();
        let rho = gaussian(&g, [0.0; 3], 1.3).abs_sq();
        let half = rho.scaled(0.5);
        let f = XcFunctional::xalpha();
        let e = exc_lsda(&half, &half, &f).unwrap();
        let direct = rho.map(|r| f.g(r)).integrate().unwrap();
        assert_relative_eq!(e, direct, max_relative = 1e-13);
    }

    #[test]
    fn exc_fully_polarized_scaling() {
        let g = Grid::centered(10, 8.0).unwrap();
        let rho = gaussian(&g, [0.0; 3], 1.3).abs_sq();
        let zero = RealField::zeros(&g);
        let c_x = default_c_x();
        let f = XcFunctional::XAlpha { c_x };
        let e = exc_lsda(&rho, &zero, &f).unwrap();
        let expect = -(2f64.powf(1.0 / 3.0)) * c_x
            * rho.map(|r| r.powf(4.0 / 3.0)).integrate().unwrap();
        assert_relative_eq!(e, expect, max_relative = 1e-13);
        // symmetry under channel swap
        let e2 = exc_lsda(&zero, &rho, &f).unwrap();
        assert_eq!(e, e2);
    }

    #[test]
    fn exc_zero_functional() {
        let g = Grid::centered(6, 5.0).unwrap();
        let rho = gaussian(&g, [0.0; 3], 1.0).abs_sq();
        assert_eq!(exc_lsda(&rho, &rho, &XcFunctional::None).unwrap(), 0.0);
    }

    #[test]
    fn vxc_collinear_and_degenerate_limits() {
        let g = Grid::new(2, 3.0, [0.0; 3]).unwrap();
        let f = XcFunctional::xalpha();

        // collinear with ruu > rdd
        let mut r = crate::spin::SpinDensityField::zeros(&g);
        r.ruu = RealField::constant(&g, 0.7);
        r.rdd = RealField::constant(&g, 0.2);
        let v = vxc_matrix(&r, &f, S_TOL_SCALE).unwrap();
        assert_relative_eq!(v.uu.values()[0], f.g_prime(1.4), max_relative = 1e-13);
        assert_relative_eq!(v.dd.values()[0], f.g_prime(0.4), max_relative = 1e-13);
        assert_eq!(v.ud_re.values()[0], 0.0);

        // collinear with rdd > ruu keeps channel assignment
        let mut r = crate::spin::SpinDensityField::zeros(&g);
        r.ruu = RealField::constant(&g, 0.2);
        r.rdd = RealField::constant(&g, 0.7);
        let v = vxc_matrix(&r, &f, S_TOL_SCALE).unwrap();
        assert_relative_eq!(v.uu.values()[0], f.g_prime(0.4), max_relative = 1e-13);
        assert_relative_eq!(v.dd.values()[0], f.g_prime(1.4), max_relative = 1e-13);

        // unpolarized: V_xc = g'(rho) I
        let mut r = crate::spin::SpinDensityField::zeros(&g);
        r.ruu = RealField::constant(&g, 0.45);
        r.rdd = RealField::constant(&g, 0.45);
        let v = vxc_matrix(&r, &f, S_TOL_SCALE).unwrap();
        assert_relative_eq!(v.uu.values()[0], f.g_prime(0.9), max_relative = 1e-13);
        assert_relative_eq!(v.dd.values()[0], f.g_prime(0.9), max_relative = 1e-13);
        assert_eq!(v.ud_re.values()[0], 0.0);
        assert_eq!(v.ud_im.values()[0], 0.0);
    }

    #[test]
    fn vxc_eigenvalues_are_channel_derivatives() {
        // for a general noncollinear point the eigenvalues of V_xc must be
        // {g'(2 rho+), g'(2 rho-)}
        let g = Grid::new(2, 3.0, [0.0; 3]).unwrap();
        let f = XcFunctional::xalpha();
        let mut r = crate::spin::SpinDensityField::zeros(&g);
        r.ruu = RealField::constant(&g, 0.5);
        r.rdd = RealField::constant(&g, 0.4);
        r.rud_re = RealField::constant(&g, 0.3);
        r.rud_im = RealField::constant(&g, 0.1);
        let v = vxc_matrix(&r, &f, S_TOL_SCALE).unwrap();
        let m = nalgebra::Matrix2::new(
            Complex64::new(v.uu.values()[0], 0.0),
            Complex64::new(v.ud_re.values()[0], v.ud_im.values()[0]),
            Complex64::new(v.ud_re.values()[0], -v.ud_im.values()[0]),
            Complex64::new(v.dd.values()[0], 0.0),
        );
        let mut ev: Vec<f64> = m.symmetric_eigen().eigenvalues.iter().copied().collect();
        ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let (p, mi) = r.eigenvalues_pm().unwrap();
        assert_relative_eq!(ev[0], f.g_prime(2.0 * p.values()[0]), epsilon = 1e-13);
        assert_relative_eq!(ev[1], f.g_prime(2.0 * mi.values()[0]), epsilon = 1e-13);
        assert!(ev[1] <= 0.0);
    }

    /// Central-difference functional-derivative oracle with Richardson
    /// extrapolation over t in {1e-3, 1e-4}: this test pins the chain-rule
    /// convention g'(2 rho±) of the potential.
    #[test]
    fn vxc_matches_finite_difference_of_energy() {
        let g = Grid::centered(8, 7.0).unwrap();
        let f = XcFunctional::xalpha();

        // a smooth, well-polarized density: s and rho- bounded away from 0
        let phi_a = gaussian(&g, [0.4, 0.0, 0.0], 1.4);
        let phi_b = gaussian(&g, [-0.4, 0.2, 0.0], 1.1);
        let phi_c = gaussian(&g, [0.0, -0.3, 0.3], 1.2);
        let inv2 = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        let set = OccupiedSet::new(
            vec![
                SpinorField::new(phi_a.clone(), ComplexField::zeros(&g)).unwrap(),
                SpinorField::new(ComplexField::zeros(&g), phi_b.clone()).unwrap(),
                SpinorField::new(phi_c.scaled(inv2), phi_c.scaled(inv2 * Complex64::i())).unwrap(),
            ],
            vec![1.0, 0.7, 0.5],
        )
        .unwrap();
        let r0 = density_from_orbitals(&set).unwrap();

        // smooth Hermitian perturbation
        let bump = |c: [f64; 3], w: f64| {
            RealField::from_fn(&g, move |p| {
                let r2 =
                    (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2);
                (-r2 / (2.0 * w * w)).exp()
            })
        };
        let d_uu = bump([0.2, 0.1, 0.0], 1.4).scaled(0.03);
        let d_dd = bump([-0.2, 0.0, 0.1], 1.2).scaled(-0.02);
        let d_re = bump([0.0, 0.3, -0.1], 1.3).scaled(0.015);
        let d_im = bump([0.1, -0.2, 0.2], 1.5).scaled(0.02);

        let energy_at = |t: f64| -> f64 {
            let mut r = r0.clone();
            r.ruu = r.ruu.zip_map(&d_uu, |a, b| a + t * b);
            r.rdd = r.rdd.zip_map(&d_dd, |a, b| a + t * b);
            r.rud_re = r.rud_re.zip_map(&d_re, |a, b| a + t * b);
            r.rud_im = r.rud_im.zip_map(&d_im, |a, b| a + t * b);
            let (p, m) = r.eigenvalues_pm().unwrap();
            exc_lsda(&p, &m, &f).unwrap()
        };
        let central = |t: f64| (energy_at(t) - energy_at(-t)) / (2.0 * t);
        // Richardson over t and t/10 cancels the t^2 term
        let d_fd = (100.0 * central(1e-4) - central(1e-3)) / 99.0;

        let v = vxc_matrix(&r0, &f, S_TOL_SCALE).unwrap();
        // tr[V_xc dR] = vuu duu + vdd ddd + 2(vre dre + vim dim)
        let d_an = v.uu.dot(&d_uu)
            + v.dd.dot(&d_dd)
            + 2.0 * (v.ud_re.dot(&d_re) + v.ud_im.dot(&d_im));

        assert!(
            (d_fd - d_an).abs() <= 1e-6,
            "functional derivative mismatch: fd = {d_fd}, analytic = {d_an}"
        );
    }
}
