//! The 2x2 spin density matrix field R, its eigenvalue fields, the
//! magnetization, the external coupling matrix U, the occupied orbital
//! representation of a mixed state, and the spin-flip transformation.
//!
//! Conventions (atomic units): R = [[ruu, rud], [conj(rud), rdd]] is
//! Hermitian positive semidefinite per node, rho = tr R, and
//! m = tr[sigma R] = (2 Re rud, -2 Im rud, ruu - rdd) with the standard
//! Pauli matrices. The Zeeman coupling enters through
//! U = [[V - mu Bz, -mu Bx + i mu By], [-mu Bx - i mu By, V + mu Bz]],
//! so that tr[U R] = V rho - mu B.m pointwise.

use crate::error::{Error, Result};
use crate::grid::{compensated_sum, Grid, RealField, SpinorField};
use num_complex::Complex64;

/// Bohr magneton in atomic units.
pub const BOHR_MAGNETON: f64 = 0.5;

/// Orthonormality tolerance accepted at construction; beyond it the set is
/// re-orthonormalized by modified Gram-Schmidt.
pub const ORTHONORMALITY_TOL: f64 = 1e-8;

/// Occupied orbitals with fractional occupations: the spectral
/// representation of a one-body density matrix with 0 <= gamma <= 1.
#[derive(Debug, Clone)]
pub struct OccupiedSet {
    orbitals: Vec<SpinorField>,
    occupations: Vec<f64>,
}

impl OccupiedSet {
    /// Build a set, validating occupations and restoring orthonormality by
    /// modified Gram-Schmidt if the input drifted beyond tolerance.
    pub fn new(orbitals: Vec<SpinorField>, occupations: Vec<f64>) -> Result<OccupiedSet> {
        if orbitals.len() != occupations.len() {
            return Err(Error::config("orbital/occupation count mismatch".to_string()));
        }
        for &n in &occupations {
            if !((-1e-12..=1.0 + 1e-12).contains(&n)) || !n.is_finite() {
                return Err(Error::config(format!("occupation {n} outside [0,1]")));
            }
        }
        let occupations: Vec<f64> = occupations.iter().map(|&n| n.clamp(0.0, 1.0)).collect();
        if let Some(first) = orbitals.first() {
            let g = *first.grid();
            if orbitals.iter().any(|o| *o.grid() != g) {
                return Err(Error::config("orbitals must share one grid".to_string()));
            }
        }
        let mut set = OccupiedSet { orbitals, occupations };
        if set.orthonormality_error() > ORTHONORMALITY_TOL {
            set.reorthonormalize()?;
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.orbitals.len()
    }
    pub fn is_empty(&self) -> bool {
        self.orbitals.is_empty()
    }
    pub fn orbitals(&self) -> &[SpinorField] {
        &self.orbitals
    }
    pub fn occupations(&self) -> &[f64] {
        &self.occupations
    }
    pub fn grid(&self) -> Option<&Grid> {
        self.orbitals.first().map(|o| o.grid())
    }

    /// Trace of gamma, `sum n_k`.
    pub fn trace(&self) -> f64 {
        compensated_sum(self.occupations.iter().copied())
    }

    /// Largest deviation of `<Phi_k, Phi_l>` from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let mut worst = 0.0_f64;
        for k in 0..self.orbitals.len() {
            for l in k..self.orbitals.len() {
                let ip = self.orbitals[k].inner(&self.orbitals[l]);
                let target = if k == l { 1.0 } else { 0.0 };
                worst = worst.max((ip - Complex64::new(target, 0.0)).norm());
            }
        }
        worst
    }

    /// Modified Gram-Schmidt with a reorthogonalization pass.
    pub fn reorthonormalize(&mut self) -> Result<()> {
        for pass in 0..2 {
            for k in 0..self.orbitals.len() {
                for l in 0..k {
                    let c = self.orbitals[l].inner(&self.orbitals[k]);
                    let proj = self.orbitals[l].clone();
                    self.orbitals[k].axpy(-c, &proj);
                }
                let norm = self.orbitals[k].norm_sq().sqrt();
                if norm < 1e-10 {
                    return Err(Error::numeric(format!(
                        "orbital {k} became numerically null during re-orthonormalization (pass {pass})"
                    )));
                }
                let inv = Complex64::new(1.0 / norm, 0.0);
                self.orbitals[k] = SpinorField::new(
                    self.orbitals[k].up().scaled(inv),
                    self.orbitals[k].down().scaled(inv),
                )?;
            }
        }
        Ok(())
    }

    /// Discrete kinetic energy `sum_k n_k 1/2 <Phi_k, -Lap Phi_k>`.
    pub fn kinetic_energy(&self) -> f64 {
        compensated_sum(
            self.orbitals.iter().zip(&self.occupations).map(|(o, &n)| n * o.kinetic_energy()),
        )
    }

    /// Per-channel kinetic energies `(Tr(-Lap gamma_uu), Tr(-Lap gamma_dd))`,
    /// without the 1/2 factor.
    pub fn channel_kinetic(&self) -> (f64, f64) {
        let up = compensated_sum(self.orbitals.iter().zip(&self.occupations).map(|(o, &n)| {
            let lap = o.up().laplacian();
            -n * o.up().inner(&lap).re
        }));
        let down = compensated_sum(self.orbitals.iter().zip(&self.occupations).map(|(o, &n)| {
            let lap = o.down().laplacian();
            -n * o.down().inner(&lap).re
        }));
        (up, down)
    }

    /// Spin-flip transformation: Phi = (u, d) -> (conj(d), -conj(u)).
    /// Preserves density and kinetic energy, negates the magnetization.
    pub fn flip(&self) -> OccupiedSet {
        let orbitals = self
            .orbitals
            .iter()
            .map(|o| {
                SpinorField::new(o.down().conj(), o.up().conj().scaled(Complex64::new(-1.0, 0.0)))
                    .expect("channels share the grid")
            })
            .collect();
        OccupiedSet { orbitals, occupations: self.occupations.clone() }
    }
}

/// Hermitian 2x2 matrix field stored as four real channels; used for the
/// external coupling U and the xc potential.
#[derive(Debug, Clone)]
pub struct HermitianMatrixField {
    pub uu: RealField,
    pub dd: RealField,
    pub ud_re: RealField,
    pub ud_im: RealField,
}

impl HermitianMatrixField {
    pub fn zeros(grid: &Grid) -> HermitianMatrixField {
        HermitianMatrixField {
            uu: RealField::zeros(grid),
            dd: RealField::zeros(grid),
            ud_re: RealField::zeros(grid),
            ud_im: RealField::zeros(grid),
        }
    }

    pub fn grid(&self) -> &Grid {
        self.uu.grid()
    }

    /// Pointwise trace, `uu + dd`.
    pub fn trace_field(&self) -> RealField {
        self.uu.add(&self.dd)
    }
}

/// The spin density matrix field R(r); Hermitian PSD per node.
#[derive(Debug, Clone)]
pub struct SpinDensityField {
    pub ruu: RealField,
    pub rdd: RealField,
    pub rud_re: RealField,
    pub rud_im: RealField,
}

impl SpinDensityField {
    pub fn zeros(grid: &Grid) -> SpinDensityField {
        SpinDensityField {
            ruu: RealField::zeros(grid),
            rdd: RealField::zeros(grid),
            rud_re: RealField::zeros(grid),
            rud_im: RealField::zeros(grid),
        }
    }

    pub fn grid(&self) -> &Grid {
        self.ruu.grid()
    }

    /// Total electron density rho = tr R.
    pub fn trace_density(&self) -> RealField {
        self.ruu.add(&self.rdd)
    }

    /// Pointwise eigenvalues `rho± = (rho ± sqrt((ruu-rdd)^2 + 4|rud|^2))/2`.
    pub fn eigenvalues_pm(&self) -> Result<(RealField, RealField)> {
        let grid = *self.grid();
        let m = grid.size();
        let mut plus = vec![0.0; m];
        let mut minus = vec![0.0; m];
        for idx in 0..m {
            let a = self.ruu.values()[idx];
            let d = self.rdd.values()[idx];
            let re = self.rud_re.values()[idx];
            let im = self.rud_im.values()[idx];
            if !(a.is_finite() && d.is_finite() && re.is_finite() && im.is_finite()) {
                return Err(Error::numeric("eigenvalues_pm: non-finite spin density".to_string()));
            }
            let s = ((a - d) * (a - d) + 4.0 * (re * re + im * im)).sqrt();
            plus[idx] = 0.5 * (a + d + s);
            minus[idx] = 0.5 * (a + d - s);
        }
        Ok((RealField::from_values(&grid, plus)?, RealField::from_values(&grid, minus)?))
    }

    /// Spin angular momentum density m = tr[sigma R].
    pub fn magnetization(&self) -> [RealField; 3] {
        [
            self.rud_re.scaled(2.0),
            self.rud_im.scaled(-2.0),
            self.ruu.zip_map(&self.rdd, |a, b| a - b),
        ]
    }

    /// `h^3 sum` of absolute channel differences; the SCF mixing metric.
    pub fn l1_distance(&self, other: &SpinDensityField) -> f64 {
        let d = |a: &RealField, b: &RealField| {
            compensated_sum(a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()))
        };
        self.grid().volume_element()
            * (d(&self.ruu, &other.ruu)
                + d(&self.rdd, &other.rdd)
                + d(&self.rud_re, &other.rud_re)
                + d(&self.rud_im, &other.rud_im))
    }

    /// Linear mixing `(1-beta) self + beta other` on the four channels.
    pub fn mixed(&self, other: &SpinDensityField, beta: f64) -> SpinDensityField {
        let mix = |a: &RealField, b: &RealField| a.zip_map(b, |x, y| (1.0 - beta) * x + beta * y);
        SpinDensityField {
            ruu: mix(&self.ruu, &other.ruu),
            rdd: mix(&self.rdd, &other.rdd),
            rud_re: mix(&self.rud_re, &other.rud_re),
            rud_im: mix(&self.rud_im, &other.rud_im),
        }
    }

    /// Zero the off-diagonal channels (collinear restriction).
    pub fn make_collinear(&mut self) {
        self.rud_re = RealField::zeros(self.rud_re.grid());
        self.rud_im = RealField::zeros(self.rud_im.grid());
    }
}

/// Diagonal-value density of the one-body matrix:
/// `R^{ab}(r) = sum_k n_k phi_k^a(r) conj(phi_k^b(r))`.
pub fn density_from_orbitals(set: &OccupiedSet) -> Result<SpinDensityField> {
    let grid = *set
        .grid()
        .ok_or_else(|| Error::config("density of an empty occupied set needs a grid".to_string()))?;
    let m = grid.size();
    let mut ruu = vec![0.0; m];
    let mut rdd = vec![0.0; m];
    let mut rud_re = vec![0.0; m];
    let mut rud_im = vec![0.0; m];
    for (orb, &n) in set.orbitals().iter().zip(set.occupations()) {
        if !(0.0..=1.0).contains(&n) {
            return Err(Error::config(format!("occupation {n} outside [0,1]")));
        }
        let up = orb.up().values();
        let dn = orb.down().values();
        for idx in 0..m {
            let u = up[idx];
            let d = dn[idx];
            ruu[idx] += n * u.norm_sqr();
            rdd[idx] += n * d.norm_sqr();
            let cross = u * d.conj();
            rud_re[idx] += n * cross.re;
            rud_im[idx] += n * cross.im;
        }
    }
    Ok(SpinDensityField {
        ruu: RealField::from_values(&grid, ruu)?,
        rdd: RealField::from_values(&grid, rdd)?,
        rud_re: RealField::from_values(&grid, rud_re)?,
        rud_im: RealField::from_values(&grid, rud_im)?,
    })
}

/// One point nucleus with integer charge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nucleus {
    pub charge: u32,
    pub position: [f64; 3],
}

/// Analytic magnetic field specification; sampled on the grid before use.
#[derive(Debug, Clone, PartialEq)]
pub enum BFieldSpec {
    None,
    /// Constant field of the given amplitude along a coordinate axis.
    Uniform { amplitude: f64, axis: usize },
    /// Gaussian envelope `amplitude * exp(-|r-center|^2/(2 width^2))` along an axis.
    Gaussian { center: [f64; 3], width: f64, amplitude: f64, axis: usize },
    /// Arbitrary per-node samples `(bx, by, bz)`, row-major over (i,j,k).
    Samples(Vec<[f64; 3]>),
}

impl BFieldSpec {
    pub fn is_none(&self) -> bool {
        matches!(self, BFieldSpec::None)
    }

    /// Whether any x/y component can be nonzero (collinear mode forbids it).
    pub fn has_transverse(&self) -> bool {
        match self {
            BFieldSpec::None => false,
            BFieldSpec::Uniform { axis, amplitude } => *axis != 2 && *amplitude != 0.0,
            BFieldSpec::Gaussian { axis, amplitude, .. } => *axis != 2 && *amplitude != 0.0,
            BFieldSpec::Samples(s) => s.iter().any(|b| b[0] != 0.0 || b[1] != 0.0),
        }
    }

    /// Sample the three components on the grid. `None` stays `None`.
    pub fn sample(&self, grid: &Grid) -> Result<Option<[RealField; 3]>> {
        match self {
            BFieldSpec::None => Ok(None),
            BFieldSpec::Uniform { amplitude, axis } => {
                check_axis(*axis)?;
                let mut comps =
                    [RealField::zeros(grid), RealField::zeros(grid), RealField::zeros(grid)];
                comps[*axis] = RealField::constant(grid, *amplitude);
                Ok(Some(comps))
            }
            BFieldSpec::Gaussian { center, width, amplitude, axis } => {
                check_axis(*axis)?;
                if !(*width > 0.0) {
                    return Err(Error::config("gaussian B width must be positive".to_string()));
                }
                let mut comps =
                    [RealField::zeros(grid), RealField::zeros(grid), RealField::zeros(grid)];
                let w2 = 2.0 * width * width;
                comps[*axis] = RealField::from_fn(grid, |p| {
                    let r2 = (p[0] - center[0]).powi(2)
                        + (p[1] - center[1]).powi(2)
                        + (p[2] - center[2]).powi(2);
                    amplitude * (-r2 / w2).exp()
                });
                Ok(Some(comps))
            }
            BFieldSpec::Samples(rows) => {
                if rows.len() != grid.size() {
                    return Err(Error::config(format!(
                        "B samples count {} does not match grid size {}",
                        rows.len(),
                        grid.size()
                    )));
                }
                let pick = |a: usize| {
                    RealField::from_values(grid, rows.iter().map(|b| b[a]).collect()).unwrap()
                };
                Ok(Some([pick(0), pick(1), pick(2)]))
            }
        }
    }
}

fn check_axis(axis: usize) -> Result<()> {
    if axis > 2 {
        return Err(Error::config(format!("B axis must be 0..=2, got {axis}")));
    }
    Ok(())
}

/// Nuclei, magnetic field and Coulomb softening describing the environment.
#[derive(Debug, Clone)]
pub struct ExternalFields {
    pub nuclei: Vec<Nucleus>,
    pub b: BFieldSpec,
    /// Soft-Coulomb regularization length (bohr).
    pub softening: f64,
}

impl ExternalFields {
    pub fn total_charge(&self) -> u32 {
        self.nuclei.iter().map(|n| n.charge).sum()
    }
}

/// External coupling matrix field; Hermitian with `tr U = 2V` by construction.
#[derive(Debug, Clone)]
pub struct UField {
    pub mat: HermitianMatrixField,
    pub mu: f64,
}

impl UField {
    /// Half-trace, recovering the spin-independent potential V.
    pub fn potential(&self) -> RealField {
        self.mat.uu.zip_map(&self.mat.dd, |a, b| 0.5 * (a + b))
    }
}

/// Assemble U from the scalar potential and the (optional) sampled B field.
pub fn assemble_u(v: &RealField, b: Option<&[RealField; 3]>, mu: f64) -> Result<UField> {
    let grid = *v.grid();
    let mat = match b {
        None => HermitianMatrixField {
            uu: v.clone(),
            dd: v.clone(),
            ud_re: RealField::zeros(&grid),
            ud_im: RealField::zeros(&grid),
        },
        Some([bx, by, bz]) => {
            if *bx.grid() != grid || *by.grid() != grid || *bz.grid() != grid {
                return Err(Error::config("B components sampled on a different grid".to_string()));
            }
            HermitianMatrixField {
                uu: v.zip_map(bz, |vv, b| vv - mu * b),
                dd: v.zip_map(bz, |vv, b| vv + mu * b),
                ud_re: bx.scaled(-mu),
                ud_im: by.scaled(mu),
            }
        }
    };
    Ok(UField { mat, mu })
}

/// External energy split: `(total, int V rho, -mu int B.m)`.
///
/// The total is `integrate(tr[U R])` evaluated directly from the stored
/// channels; the parts use `V = tr U / 2` and the Pauli decomposition, so
/// `total = v_rho + zeeman` is an algebraic identity of the model.
pub fn external_energy(u: &UField, r: &SpinDensityField) -> Result<(f64, f64, f64)> {
    if u.mat.grid() != r.grid() {
        return Err(Error::config("U and R live on different grids".to_string()));
    }
    let m = r.grid().size();
    let w = r.grid().volume_element();
    let total = w * compensated_sum((0..m).map(|i| {
        u.mat.uu.values()[i] * r.ruu.values()[i]
            + u.mat.dd.values()[i] * r.rdd.values()[i]
            + 2.0 * (u.mat.ud_re.values()[i] * r.rud_re.values()[i]
                + u.mat.ud_im.values()[i] * r.rud_im.values()[i])
    }));
    let v_rho = w * compensated_sum((0..m).map(|i| {
        0.5 * (u.mat.uu.values()[i] + u.mat.dd.values()[i])
            * (r.ruu.values()[i] + r.rdd.values()[i])
    }));
    let zeeman = w * compensated_sum((0..m).map(|i| {
        0.5 * (u.mat.uu.values()[i] - u.mat.dd.values()[i])
            * (r.ruu.values()[i] - r.rdd.values()[i])
            + 2.0 * (u.mat.ud_re.values()[i] * r.rud_re.values()[i]
                + u.mat.ud_im.values()[i] * r.rud_im.values()[i])
    }));
    if !(total.is_finite() && v_rho.is_finite() && zeeman.is_finite()) {
        return Err(Error::numeric("external energy is non-finite".to_string()));
    }
    Ok((total, v_rho, zeeman))
}
