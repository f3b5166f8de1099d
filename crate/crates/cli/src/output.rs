//! Deterministic text artifacts: energy/orbital/sweep CSVs and the
//! verification report. All floats render with 17 significant digits so
//! identical runs produce byte-identical files.

use spindft::dump::format_f64;
use spindft::scf::ScfState;
use spindft::verify::{CheckVerdict, SweepReport};

pub fn energy_csv(state: &ScfState) -> String {
    let e = &state.energy;
    let mut out = String::from("part,value_hartree\n");
    for (name, v) in [
        ("kinetic", e.kinetic),
        ("hartree", e.hartree),
        ("v_ext", e.v_ext),
        ("zeeman", e.zeeman),
        ("xc", e.xc),
        ("total", e.total),
    ] {
        out.push_str(&format!("{name},{}\n", format_f64(v)));
    }
    out
}

pub fn orbitals_csv(state: &ScfState) -> String {
    let mut out = String::from("index,energy_hartree,occupation,residual_norm\n");
    for (i, &e) in state.eigenvalues.iter().enumerate() {
        let occ = state.occupied.occupations().get(i).copied().unwrap_or(0.0);
        let res = state.residual_norms.get(i).copied().unwrap_or(f64::NAN);
        out.push_str(&format!("{i},{},{},{}\n", format_f64(e), format_f64(occ), format_f64(res)));
    }
    out.push_str(&format!("# fermi_energy_hartree,{}\n", format_f64(state.fermi)));
    out
}

pub fn sweep_csv(report: &SweepReport) -> String {
    let mut out = String::from(
        "lambda,i_lambda,i_lambda_inf,scaling_bound,binding_margin,converged,converged_inf\n",
    );
    for p in &report.points {
        let opt = |v: Option<f64>| v.map(format_f64).unwrap_or_default();
        let margin = match (p.i_full, p.i_inf) {
            (Some(a), Some(b)) => format_f64(b - a),
            _ => String::new(),
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            format_f64(p.lambda),
            opt(p.i_full),
            opt(p.i_inf),
            opt(p.scaling_bound),
            margin,
            p.i_full.is_some(),
            p.i_inf.is_some(),
        ));
    }
    out
}

pub fn verdict_block(v: &CheckVerdict) -> String {
    format!(
        "check: {}\nclass: {}\nverdict: {}\nmargin: {}\ndetail: {}\n\n",
        v.name,
        if v.exact { "exact" } else { "soft" },
        if v.pass { "pass" } else { "soft-fail" },
        format_f64(v.margin),
        v.detail
    )
}

pub fn sweep_report_text(report: &SweepReport) -> String {
    let mut out = String::new();
    out.push_str("# lambda sweep report\n");
    out.push_str("# all energies are numerical upper bounds of the discretized functional\n\n");
    for p in &report.points {
        out.push_str(&format!("lambda: {}\n", format_f64(p.lambda)));
        match p.i_full {
            Some(v) => out.push_str(&format!(
                "i_lambda: {}\nscf_iterations: {}\n",
                format_f64(v),
                p.full_iterations
            )),
            None => out.push_str(&format!(
                "i_lambda: unconverged ({})\n",
                p.full_error.as_deref().unwrap_or("unknown")
            )),
        }
        match p.i_inf {
            Some(v) => out.push_str(&format!(
                "i_lambda_inf: {}\nscf_iterations_inf: {}\n",
                format_f64(v),
                p.inf_iterations
            )),
            None => out.push_str(&format!(
                "i_lambda_inf: unconverged ({})\n",
                p.inf_error.as_deref().unwrap_or("unknown")
            )),
        }
        if let Some(b) = p.scaling_bound {
            out.push_str(&format!("scaling_bound: {}\n", format_f64(b)));
        }
        out.push('\n');
    }
    for v in &report.verdicts {
        out.push_str(&verdict_block(v));
    }
    out
}
