//! Outer self-consistent minimization: Aufbau occupation with fractional
//! degeneracy handling, linear density mixing on the four R channels, energy
//! assembly, and the model tiers (full / collinear / unpolarized / infinity /
//! non-interacting).
//!
//! The solver realizes the fixed point `gamma = 1(H_gamma < eps_F) + delta`
//! by iterating: assemble H from the mixed density, take the lowest
//! eigenpairs, occupy, rebuild the density, mix. Both the converged state
//! and its spin flip are evaluated and the lower one is returned.

use crate::eigen::{lowest_eigenpairs, EigOptions};
use crate::error::{Error, Result};
use crate::grid::{ComplexField, Grid, RealField, SpinorField};
use crate::operator::{
    hartree_energy, hartree_potential, nuclear_potential, ChannelOperator, MeanFieldOperator, Spin,
};
use crate::spin::{
    assemble_u, density_from_orbitals, external_energy, ExternalFields, OccupiedSet,
    SpinDensityField, UField, BOHR_MAGNETON,
};
use crate::xc::{exc_lsda, vxc_matrix, XcFunctional, S_TOL_SCALE};
use num_complex::Complex64;

/// Model tier: which blocks of the energy are active and how the spin
/// structure is restricted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Unrestricted noncollinear model with all blocks.
    Full,
    /// Off-diagonal spin density forced to zero; only B_z couples.
    Collinear,
    /// One spatial problem with equal spin channels; B drops out.
    Unpolarized,
    /// The problem at infinity: U = 0, interactions kept.
    Infinity,
    /// U kept, Hartree and xc off (linear problem).
    NonInteracting,
}

impl Mode {
    pub fn has_external(&self) -> bool {
        !matches!(self, Mode::Infinity)
    }
    pub fn has_hartree(&self) -> bool {
        !matches!(self, Mode::NonInteracting)
    }
    pub fn has_xc(&self) -> bool {
        !matches!(self, Mode::NonInteracting)
    }
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::Collinear => "collinear",
            Mode::Unpolarized => "unpolarized",
            Mode::Infinity => "infinity",
            Mode::NonInteracting => "noninteracting",
        }
    }
}

/// Which initial guesses to run; with a magnetic field the aligned start
/// hedges against the non-convexity of the functional.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Starts {
    Default,
    Aligned,
    Both,
}

/// All solver controls. Tolerances are hartree or dimensionless as noted.
#[derive(Debug, Clone)]
pub struct ScfOptions {
    pub lambda: f64,
    pub mode: Mode,
    pub xc: XcFunctional,
    /// Linear mixing weight on the new density.
    pub mix_beta: f64,
    /// Density convergence threshold on `h^3 sum |dR|`.
    pub tol_rho: f64,
    /// Energy convergence threshold (hartree).
    pub tol_e: f64,
    pub max_iter: usize,
    /// Levels within this window of the frontier share the fractional charge.
    pub deg_tol: f64,
    pub starts: Starts,
    /// Eigenpairs beyond ceil(lambda) to expose the Fermi gap.
    pub eig_k_extra: usize,
    pub eig_tol: f64,
    pub eig_max_iter: usize,
    pub seed: u64,
    pub poisson_tol: f64,
    pub poisson_max_iter: usize,
}

impl Default for ScfOptions {
    fn default() -> Self {
        ScfOptions {
            lambda: 1.0,
            mode: Mode::Full,
            xc: XcFunctional::xalpha(),
            mix_beta: 0.3,
            tol_rho: 1e-6,
            tol_e: 1e-8,
            max_iter: 200,
            deg_tol: 1e-6,
            starts: Starts::Default,
            eig_k_extra: 8,
            eig_tol: 1e-9,
            eig_max_iter: 800,
            seed: 7,
            poisson_tol: 1e-9,
            poisson_max_iter: 20000,
        }
    }
}

/// A fully specified variational problem on a grid.
#[derive(Debug, Clone)]
pub struct ScfProblem {
    pub grid: Grid,
    pub ext: ExternalFields,
    pub opts: ScfOptions,
}

/// Energy split of the functional; `total` is the sum of the parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyBreakdown {
    pub kinetic: f64,
    pub hartree: f64,
    pub v_ext: f64,
    pub zeeman: f64,
    pub xc: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    pub fn zero() -> EnergyBreakdown {
        EnergyBreakdown { kinetic: 0.0, hartree: 0.0, v_ext: 0.0, zeeman: 0.0, xc: 0.0, total: 0.0 }
    }
}

/// Per-iteration diagnostics kept for convergence reporting and for the
/// Coleman-constraint audit.
#[derive(Debug, Clone, Copy)]
pub struct IterRecord {
    pub iter: usize,
    pub energy: f64,
    pub delta_rho: f64,
    pub delta_e: f64,
    pub occ_sum_error: f64,
    pub orthonormality_error: f64,
    pub fermi: f64,
}

/// Converged SCF state.
#[derive(Debug, Clone)]
pub struct ScfState {
    pub occupied: OccupiedSet,
    pub density: SpinDensityField,
    pub fermi: f64,
    pub energy: EnergyBreakdown,
    /// All computed levels, ascending, including unoccupied ones.
    pub eigenvalues: Vec<f64>,
    pub residual_norms: Vec<f64>,
    pub iterations: usize,
    pub history: Vec<IterRecord>,
    /// True when the returned state is the spin flip of the raw SCF output.
    pub flipped: bool,
}

/// Aufbau filling: states fill in ascending order with occupation 1; the
/// remainder is split equally over every level within `deg_tol` of the
/// frontier. Returns the occupations and the Fermi energy.
pub fn occupy(eigenvalues: &[f64], lambda: f64, deg_tol: f64) -> Result<(Vec<f64>, f64)> {
    if !(lambda > 0.0) {
        return Err(Error::config(format!("lambda must be positive, got {lambda}")));
    }
    if eigenvalues.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::config("occupy expects ascending eigenvalues".to_string()));
    }
    let mut occ = vec![0.0; eigenvalues.len()];
    let mut remaining = lambda;
    let mut fermi = f64::NAN;
    let mut i = 0;
    while i < eigenvalues.len() && remaining > 0.0 {
        let level = eigenvalues[i];
        let mut end = i + 1;
        while end < eigenvalues.len() && eigenvalues[end] - level <= deg_tol {
            end += 1;
        }
        let size = end - i;
        fermi = level;
        if remaining >= size as f64 {
            for o in occ.iter_mut().take(end).skip(i) {
                *o = 1.0;
            }
            remaining -= size as f64;
        } else {
            let share = remaining / size as f64;
            for o in occ.iter_mut().take(end).skip(i) {
                *o = share;
            }
            remaining = 0.0;
        }
        i = end;
    }
    if remaining > 1e-12 {
        return Err(Error::config(format!(
            "lambda = {lambda} exceeds the capacity of {} computed levels; increase eig.k_extra",
            eigenvalues.len()
        )));
    }
    Ok((occ, fermi))
}

/// Everything needed to evaluate the energy of an occupied set.
pub struct EnergyContext<'a> {
    pub u: Option<&'a UField>,
    pub hartree_on: bool,
    pub xc: &'a XcFunctional,
    pub poisson_tol: f64,
    pub poisson_max_iter: usize,
}

/// Evaluate the full energy breakdown of an occupied set.
pub fn evaluate_energy(set: &OccupiedSet, ctx: &EnergyContext) -> Result<EnergyBreakdown> {
    let density = density_from_orbitals(set)?;
    evaluate_energy_with_density(set, &density, ctx)
}

/// Energy breakdown when the density of `set` is already available.
pub fn evaluate_energy_with_density(
    set: &OccupiedSet,
    density: &SpinDensityField,
    ctx: &EnergyContext,
) -> Result<EnergyBreakdown> {
    evaluate_energy_warm(set, density, ctx, None).map(|(e, _)| e)
}

fn evaluate_energy_warm(
    set: &OccupiedSet,
    density: &SpinDensityField,
    ctx: &EnergyContext,
    phi_guess: Option<&RealField>,
) -> Result<(EnergyBreakdown, Option<RealField>)> {
    let kinetic = set.kinetic_energy();
    let rho = density.trace_density();
    let (hartree, phi) = if ctx.hartree_on {
        let sol = crate::operator::hartree_potential_warm(
            &rho,
            ctx.poisson_tol,
            ctx.poisson_max_iter,
            phi_guess,
        )?;
        (hartree_energy(&rho, &sol)?, Some(sol.phi))
    } else {
        (0.0, None)
    };
    let (v_ext, zeeman) = match ctx.u {
        Some(u) => {
            let (_, v_rho, zeeman) = external_energy(u, density)?;
            (v_rho, zeeman)
        }
        None => (0.0, 0.0),
    };
    let xc = if ctx.xc.is_none() {
        0.0
    } else {
        let (rho_p, rho_m) = density.eigenvalues_pm()?;
        exc_lsda(&rho_p, &rho_m, ctx.xc)?
    };
    let total = kinetic + hartree + v_ext + zeeman + xc;
    if !total.is_finite() {
        return Err(Error::numeric("total energy is non-finite".to_string()));
    }
    Ok((EnergyBreakdown { kinetic, hartree, v_ext, zeeman, xc, total }, phi))
}

enum WarmStore {
    SpinorBlock(Vec<Vec<Complex64>>),
    Channels(Vec<Vec<Complex64>>, Vec<Vec<Complex64>>),
    SingleBlock(Vec<Vec<Complex64>>),
}

struct OrbitalSolve {
    eigenvalues: Vec<f64>,
    residual_norms: Vec<f64>,
    orbitals: Vec<SpinorField>,
    warm: WarmStore,
}

/// Run the self-consistent loop and return the lower of the converged state
/// and its spin flip.
pub fn scf_solve(problem: &ScfProblem) -> Result<ScfState> {
    let opts = &problem.opts;
    if !(opts.lambda > 0.0) {
        return Err(Error::config("lambda must be positive".to_string()));
    }
    if !(opts.mix_beta > 0.0 && opts.mix_beta <= 1.0) {
        return Err(Error::config("mix.beta must lie in (0, 1]".to_string()));
    }
    for (name, v) in [
        ("scf.tol_rho", opts.tol_rho),
        ("scf.tol_e", opts.tol_e),
        ("deg_tol", opts.deg_tol),
        ("eig.tol", opts.eig_tol),
        ("poisson.tol", opts.poisson_tol),
    ] {
        if !(v > 0.0) {
            return Err(Error::config(format!("{name} must be positive")));
        }
    }
    if opts.mode.has_xc() {
        opts.xc.validate()?;
    }
    if opts.mode == Mode::Collinear && problem.ext.b.has_transverse() {
        return Err(Error::config(
            "collinear mode couples only B_z; transverse components are not allowed".to_string(),
        ));
    }

    let grid = problem.grid;
    let b_fields = if opts.mode.has_external() && opts.mode != Mode::Unpolarized {
        problem.ext.b.sample(&grid)?
    } else {
        None
    };
    let (v_nuc, u) = if opts.mode.has_external() {
        let v = nuclear_potential(&problem.ext, &grid)?;
        let b_for_u = match opts.mode {
            Mode::Unpolarized => None, // the model is independent of B
            _ => b_fields.as_ref(),
        };
        let u = assemble_u(&v, b_for_u, BOHR_MAGNETON)?;
        (Some(v), Some(u))
    } else {
        (None, None)
    };

    let aligned_possible = b_fields.is_some();
    let mut runs: Vec<bool> = match opts.starts {
        Starts::Default => vec![false],
        Starts::Aligned => vec![aligned_possible],
        Starts::Both => {
            if aligned_possible {
                vec![false, true]
            } else {
                vec![false]
            }
        }
    };
    runs.dedup();

    let mut best: Option<ScfState> = None;
    let mut first_err: Option<Error> = None;
    for aligned in runs {
        let r0 = initial_density(&grid, &problem.ext, opts, aligned, b_fields.as_ref());
        match scf_loop(problem, v_nuc.as_ref(), u.as_ref(), r0) {
            Ok(state) => {
                let better = match &best {
                    None => true,
                    Some(b) => state.energy.total < b.energy.total,
                };
                if better {
                    best = Some(state);
                }
            }
            Err(e) => {
                if first_err.is_none() {
                    first_err = Some(e);
                }
            }
        }
    }
    match best {
        Some(state) => Ok(state),
        None => Err(first_err.unwrap_or_else(|| Error::solver("scf produced no state".to_string()))),
    }
}

fn gaussian_blob(grid: &Grid, center: [f64; 3], width: f64) -> RealField {
    RealField::from_fn(grid, |p| {
        let r2 =
            (p[0] - center[0]).powi(2) + (p[1] - center[1]).powi(2) + (p[2] - center[2]).powi(2);
        (-r2 / (2.0 * width * width)).exp()
    })
}

fn initial_density(
    grid: &Grid,
    ext: &ExternalFields,
    opts: &ScfOptions,
    aligned: bool,
    b: Option<&[RealField; 3]>,
) -> SpinDensityField {
    // superposition of per-nucleus Gaussians; a single centered blob when no
    // nuclei apply (problem at infinity)
    let mut rho = RealField::zeros(grid);
    let use_nuclei = opts.mode.has_external() && !ext.nuclei.is_empty();
    if use_nuclei {
        let z_total: f64 = ext.nuclei.iter().map(|n| n.charge as f64).sum();
        for nuc in &ext.nuclei {
            let blob = gaussian_blob(grid, nuc.position, 1.0);
            let w = nuc.charge as f64 / z_total;
            rho = rho.zip_map(&blob, |a, b| a + w * b);
        }
    } else {
        rho = gaussian_blob(grid, grid.center(), 1.5);
    }
    let mass = rho.integrate().unwrap_or(0.0);
    let scale = if mass > 0.0 { opts.lambda / mass } else { 0.0 };
    let rho = rho.scaled(scale);

    let mut r = SpinDensityField::zeros(grid);
    match (aligned, b) {
        (true, Some([bx, by, bz])) => {
            // fully polarized along the local field direction
            for idx in 0..grid.size() {
                let (bxv, byv, bzv) =
                    (bx.values()[idx], by.values()[idx], bz.values()[idx]);
                let norm = (bxv * bxv + byv * byv + bzv * bzv).sqrt();
                let d = rho.values()[idx];
                if norm > 1e-12 {
                    let (ex, ey, ez) = (bxv / norm, byv / norm, bzv / norm);
                    r.ruu.values_mut()[idx] = 0.5 * d * (1.0 + ez);
                    r.rdd.values_mut()[idx] = 0.5 * d * (1.0 - ez);
                    r.rud_re.values_mut()[idx] = 0.5 * d * ex;
                    r.rud_im.values_mut()[idx] = -0.5 * d * ey;
                } else {
                    r.ruu.values_mut()[idx] = 0.5 * d;
                    r.rdd.values_mut()[idx] = 0.5 * d;
                }
            }
            if opts.mode == Mode::Collinear {
                r.make_collinear();
            }
        }
        _ => {
            r.ruu = rho.scaled(0.5);
            r.rdd = rho.scaled(0.5);
        }
    }
    r
}

fn scf_loop(
    problem: &ScfProblem,
    v_nuc: Option<&RealField>,
    u: Option<&UField>,
    mut r_mixed: SpinDensityField,
) -> Result<ScfState> {
    let opts = &problem.opts;
    let grid = problem.grid;
    let ctx = EnergyContext {
        u,
        hartree_on: opts.mode.has_hartree(),
        xc: if opts.mode.has_xc() { &opts.xc } else { &XcFunctional::None },
        poisson_tol: opts.poisson_tol,
        poisson_max_iter: opts.poisson_max_iter,
    };

    let mut history: Vec<IterRecord> = Vec::new();
    let mut energy_prev = f64::INFINITY;
    let mut r_prev: Option<SpinDensityField> = None;
    let mut streak = 0;
    let mut warm: Option<WarmStore> = None;
    let mut phi_assembly: Option<RealField> = None;
    let mut phi_energy: Option<RealField> = None;
    let mut outcome: Option<(OccupiedSet, SpinDensityField, f64, EnergyBreakdown, Vec<f64>, Vec<f64>)> =
        None;

    for iter in 0..opts.max_iter {
        let op = assemble_operator(&grid, v_nuc, u, &r_mixed, opts, phi_assembly.as_ref())?;
        if let Some(hs) = &op.hartree {
            phi_assembly = Some(hs.phi.clone());
        }
        let solve = solve_orbitals(&op, opts, warm.take())?;
        let (occs, fermi) = occupy(&solve.eigenvalues, opts.lambda, opts.deg_tol)?;
        let set = OccupiedSet::new(solve.orbitals.clone(), occs)?;
        let mut r_new = density_from_orbitals(&set)?;
        if opts.mode == Mode::Collinear {
            r_new.make_collinear();
        }
        let (energy, phi_new) = evaluate_energy_warm(&set, &r_new, &ctx, phi_energy.as_ref())?;
        if let Some(phi) = phi_new {
            phi_energy = Some(phi);
        }
        // change of the output density between successive iterations; a
        // fixed operator therefore converges right after its first solve
        let delta_rho = match &r_prev {
            Some(prev) => r_new.l1_distance(prev),
            None => f64::INFINITY,
        };
        let delta_e = (energy.total - energy_prev).abs();
        history.push(IterRecord {
            iter,
            energy: energy.total,
            delta_rho,
            delta_e,
            occ_sum_error: (set.trace() - opts.lambda).abs(),
            orthonormality_error: set.orthonormality_error(),
            fermi,
        });

        if delta_rho < opts.tol_rho && delta_e < opts.tol_e {
            streak += 1;
        } else {
            streak = 0;
        }
        outcome = Some((
            set,
            r_new.clone(),
            fermi,
            energy,
            solve.eigenvalues.clone(),
            solve.residual_norms.clone(),
        ));
        warm = Some(solve.warm);
        if streak >= 3 {
            break;
        }
        r_mixed = r_mixed.mixed(&r_new, opts.mix_beta);
        energy_prev = energy.total;
        r_prev = Some(r_new);
    }

    if streak < 3 {
        let oscillating = history.len() > 12 && {
            let tail: Vec<f64> = history.iter().rev().take(8).map(|h| h.delta_rho).collect();
            let head = history[history.len() - 12].delta_rho;
            tail.iter().cloned().fold(f64::INFINITY, f64::min) > 0.5 * head
        };
        let hint = if oscillating { "; density oscillates, consider a smaller mix.beta" } else { "" };
        let last = history.last();
        return Err(Error::solver(format!(
            "scf did not converge in {} iterations (last delta_rho = {:.3e}, delta_e = {:.3e}){hint}",
            opts.max_iter,
            last.map(|h| h.delta_rho).unwrap_or(f64::NAN),
            last.map(|h| h.delta_e).unwrap_or(f64::NAN),
        )));
    }

    let (set, density, fermi, energy, eigenvalues, residual_norms) =
        outcome.expect("converged loop ran at least once");

    // the minimizer candidate is the better of the state and its flip:
    // only the Zeeman part changes sign under the flip
    let (set, density, energy, flipped) = if energy.zeeman > 0.0 {
        let flipped_set = set.flip();
        let flipped_density = density_from_orbitals(&flipped_set)?;
        let flipped_energy = evaluate_energy_with_density(&flipped_set, &flipped_density, &ctx)?;
        if flipped_energy.total < energy.total {
            (flipped_set, flipped_density, flipped_energy, true)
        } else {
            (set, density, energy, false)
        }
    } else {
        (set, density, energy, false)
    };

    Ok(ScfState {
        occupied: set,
        density,
        fermi,
        energy,
        eigenvalues,
        residual_norms,
        iterations: history.len(),
        history,
        flipped,
    })
}

fn assemble_operator(
    grid: &Grid,
    v_nuc: Option<&RealField>,
    u: Option<&UField>,
    r: &SpinDensityField,
    opts: &ScfOptions,
    phi_guess: Option<&RealField>,
) -> Result<MeanFieldOperator> {
    let hartree = if opts.mode.has_hartree() {
        let rho = r.trace_density();
        Some(crate::operator::hartree_potential_warm(
            &rho,
            opts.poisson_tol,
            opts.poisson_max_iter,
            phi_guess,
        )?)
    } else {
        None
    };
    let vxc = if opts.mode.has_xc() && !opts.xc.is_none() {
        Some(vxc_matrix(r, &opts.xc, S_TOL_SCALE)?)
    } else {
        None
    };
    MeanFieldOperator::new(*grid, v_nuc.cloned(), u.cloned(), hartree, vxc)
}

fn flat_to_spinor(grid: &Grid, flat: &[Complex64]) -> Result<SpinorField> {
    // eigenvectors are unit in the plain l2 norm; rescale to the discrete
    // L2 normalization used by OccupiedSet
    let s = Complex64::new(1.0 / grid.volume_element().sqrt(), 0.0);
    let f = SpinorField::from_flat(grid, flat)?;
    SpinorField::new(f.up().scaled(s), f.down().scaled(s))
}

fn channel_to_spinor(grid: &Grid, v: &[Complex64], channel: Spin) -> Result<SpinorField> {
    let s = Complex64::new(1.0 / grid.volume_element().sqrt(), 0.0);
    let f = ComplexField::from_values(grid, v.to_vec())?.scaled(s);
    match channel {
        Spin::Up => SpinorField::new(f, ComplexField::zeros(grid)),
        Spin::Down => SpinorField::new(ComplexField::zeros(grid), f),
    }
}

fn solve_orbitals(
    op: &MeanFieldOperator,
    opts: &ScfOptions,
    warm: Option<WarmStore>,
) -> Result<OrbitalSolve> {
    let grid = *op.grid();
    match opts.mode {
        Mode::Full | Mode::Infinity | Mode::NonInteracting => {
            let k = opts.lambda.ceil() as usize + opts.eig_k_extra;
            let eig_opts = EigOptions {
                k,
                tol: opts.eig_tol,
                max_iter: opts.eig_max_iter,
                seed: opts.seed,
            };
            let prev = match &warm {
                Some(WarmStore::SpinorBlock(v)) => Some(&v[..]),
                _ => None,
            };
            let sol = lowest_eigenpairs(op, &eig_opts, prev)?;
            let orbitals = sol
                .vectors
                .iter()
                .map(|v| flat_to_spinor(&grid, v))
                .collect::<Result<Vec<_>>>()?;
            Ok(OrbitalSolve {
                eigenvalues: sol.eigenvalues,
                residual_norms: sol.residual_norms,
                orbitals,
                warm: WarmStore::SpinorBlock(sol.vectors),
            })
        }
        Mode::Collinear => {
            let k = opts.lambda.ceil() as usize + opts.eig_k_extra;
            let (warm_up, warm_dn) = match &warm {
                Some(WarmStore::Channels(a, b)) => (Some(&a[..]), Some(&b[..])),
                _ => (None, None),
            };
            let up_op = ChannelOperator::new(op, Spin::Up)?;
            let dn_op = ChannelOperator::new(op, Spin::Down)?;
            let eig_up = EigOptions {
                k,
                tol: opts.eig_tol,
                max_iter: opts.eig_max_iter,
                seed: opts.seed,
            };
            let eig_dn = EigOptions { seed: opts.seed.wrapping_add(1), ..eig_up };
            let sol_up = lowest_eigenpairs(&up_op, &eig_up, warm_up)?;
            let sol_dn = lowest_eigenpairs(&dn_op, &eig_dn, warm_dn)?;

            // merge ascending, deterministically breaking exact ties by channel
            let mut tagged: Vec<(f64, Spin, usize, f64)> = Vec::with_capacity(2 * k);
            for (i, &e) in sol_up.eigenvalues.iter().enumerate() {
                tagged.push((e, Spin::Up, i, sol_up.residual_norms[i]));
            }
            for (i, &e) in sol_dn.eigenvalues.iter().enumerate() {
                tagged.push((e, Spin::Down, i, sol_dn.residual_norms[i]));
            }
            tagged.sort_by(|a, b| {
                a.0.partial_cmp(&b.0)
                    .unwrap()
                    .then_with(|| matches!(a.1, Spin::Up).cmp(&matches!(b.1, Spin::Up)).reverse())
                    .then(a.2.cmp(&b.2))
            });
            let mut eigenvalues = Vec::with_capacity(tagged.len());
            let mut residual_norms = Vec::with_capacity(tagged.len());
            let mut orbitals = Vec::with_capacity(tagged.len());
            for (e, ch, i, r) in &tagged {
                eigenvalues.push(*e);
                residual_norms.push(*r);
                let v = match ch {
                    Spin::Up => &sol_up.vectors[*i],
                    Spin::Down => &sol_dn.vectors[*i],
                };
                orbitals.push(channel_to_spinor(&grid, v, *ch)?);
            }
            Ok(OrbitalSolve {
                eigenvalues,
                residual_norms,
                orbitals,
                warm: WarmStore::Channels(sol_up.vectors, sol_dn.vectors),
            })
        }
        Mode::Unpolarized => {
            // one spatial problem; every level carries a spin-up and a
            // spin-down copy so the frontier splits evenly
            let k = (opts.lambda / 2.0).ceil() as usize + opts.eig_k_extra;
            let ch_op = ChannelOperator::new(op, Spin::Up)?;
            let eig_opts = EigOptions {
                k,
                tol: opts.eig_tol,
                max_iter: opts.eig_max_iter,
                seed: opts.seed,
            };
            let prev = match &warm {
                Some(WarmStore::SingleBlock(v)) => Some(&v[..]),
                _ => None,
            };
            let sol = lowest_eigenpairs(&ch_op, &eig_opts, prev)?;
            let mut eigenvalues = Vec::with_capacity(2 * k);
            let mut residual_norms = Vec::with_capacity(2 * k);
            let mut orbitals = Vec::with_capacity(2 * k);
            for (i, &e) in sol.eigenvalues.iter().enumerate() {
                for ch in [Spin::Up, Spin::Down] {
                    eigenvalues.push(e);
                    residual_norms.push(sol.residual_norms[i]);
                    orbitals.push(channel_to_spinor(&grid, &sol.vectors[i], ch)?);
                }
            }
            Ok(OrbitalSolve {
                eigenvalues,
                residual_norms,
                orbitals,
                warm: WarmStore::SingleBlock(sol.vectors),
            })
        }
    }
}
