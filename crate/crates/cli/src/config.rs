//! Line-based `key = value` run configuration with `[section]` headers.
//!
//! The schema is strict: unknown sections or keys, duplicate keys (except
//! the repeatable `nucleus`), type mismatches and missing required keys are
//! all rejected with the offending line number. Defaults are applied during
//! parsing, so a parsed config is always fully populated.

use spindft::dump::format_f64;
use spindft::grid::Grid;
use spindft::scf::{Mode, ScfOptions, ScfProblem, Starts};
use spindft::spin::{BFieldSpec, ExternalFields, Nucleus};
use spindft::xc::{default_c_x, XcFunctional};
use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

#[derive(Debug)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(line: usize, message: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError { line: Some(line), message: message.into() })
}

fn err_global<T>(message: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError { line: None, message: message.into() })
}

/// Magnetic field specification as written in the config; `File` defers
/// sampling to run time.
#[derive(Debug, Clone, PartialEq)]
pub enum BSpec {
    None,
    Uniform { amplitude: f64, axis: usize },
    Gaussian { center: [f64; 3], width: f64, amplitude: f64, axis: usize },
    File(PathBuf),
}

impl BSpec {
    fn has_transverse(&self) -> bool {
        match self {
            BSpec::None => false,
            BSpec::Uniform { axis, amplitude } => *axis != 2 && *amplitude != 0.0,
            BSpec::Gaussian { axis, amplitude, .. } => *axis != 2 && *amplitude != 0.0,
            // a file field may have any components; checked after loading
            BSpec::File(_) => false,
        }
    }
}

/// Fully validated run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub n: usize,
    pub length: f64,
    pub origin: [f64; 3],
    pub lambda: f64,
    pub mode: Mode,
    pub nuclei: Vec<Nucleus>,
    pub softening: f64,
    pub b: BSpec,
    pub xc: XcFunctional,
    pub tol_rho: f64,
    pub tol_e: f64,
    pub scf_max_iter: usize,
    pub deg_tol: f64,
    pub starts: Starts,
    pub mix_beta: f64,
    pub eig_k_extra: usize,
    pub eig_tol: f64,
    pub eig_max_iter: usize,
    pub seed: u64,
    pub poisson_tol: f64,
    pub poisson_max_iter: usize,
    pub sweep_lambdas: Vec<f64>,
    pub tol_bind: f64,
    pub verify_seeds: Vec<u64>,
}

const SECTIONS: &[&str] =
    &["grid", "system", "field", "xc", "scf", "mix", "eig", "poisson", "sweep", "verify"];

fn known_keys(section: &str) -> &'static [&'static str] {
    match section {
        "grid" => &["n", "length", "origin"],
        "system" => &["lambda", "mode", "nucleus", "softening_a"],
        "field" => &["b"],
        "xc" => &["xc", "c_x"],
        "scf" => &["tol_rho", "tol_e", "max_iter", "deg_tol", "starts"],
        "mix" => &["beta"],
        "eig" => &["k_extra", "tol", "max_iter", "seed"],
        "poisson" => &["tol", "max_iter"],
        "sweep" => &["lambdas", "tol_bind"],
        "verify" => &["seeds"],
        _ => &[],
    }
}

struct RawEntry {
    line: usize,
    value: String,
}

/// Parse and validate a configuration text. Deterministic; defaults filled.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let mut entries: Vec<(String, String, RawEntry)> = Vec::new();
    let mut section = String::new();
    let mut seen: HashSet<(String, String)> = HashSet::new();

    for (i, raw_line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = match raw_line.find('#') {
            Some(pos) => &raw_line[..pos],
            None => raw_line,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = match name.strip_suffix(']') {
                Some(n) => n.trim(),
                None => return err(line_no, "malformed section header"),
            };
            if !SECTIONS.contains(&name) {
                return err(line_no, format!("unknown section [{name}]"));
            }
            section = name.to_string();
            continue;
        }
        let (key, value) = match line.split_once('=') {
            Some((k, v)) => (k.trim().to_string(), v.trim().to_string()),
            None => return err(line_no, "expected `key = value`"),
        };
        if section.is_empty() {
            return err(line_no, format!("key `{key}` appears before any [section]"));
        }
        if !known_keys(&section).contains(&key.as_str()) {
            return err(line_no, format!("unknown key `{key}` in section [{section}]"));
        }
        if key != "nucleus" && !seen.insert((section.clone(), key.clone())) {
            return err(line_no, format!("duplicate key `{key}` in section [{section}]"));
        }
        entries.push((section.clone(), key, RawEntry { line: line_no, value }));
    }

    let find = |sec: &str, key: &str| -> Option<&RawEntry> {
        entries.iter().find(|(s, k, _)| s == sec && k == key).map(|(_, _, e)| e)
    };

    let parse_f64 = |e: &RawEntry, what: &str| -> Result<f64, ConfigError> {
        e.value
            .parse::<f64>()
            .map_err(|_| ConfigError {
                line: Some(e.line),
                message: format!("{what}: expected a number, got `{}`", e.value),
            })
            .and_then(|v| {
                if v.is_finite() {
                    Ok(v)
                } else {
                    err(e.line, format!("{what}: must be finite"))
                }
            })
    };
    let parse_usize = |e: &RawEntry, what: &str| -> Result<usize, ConfigError> {
        e.value.parse::<usize>().map_err(|_| ConfigError {
            line: Some(e.line),
            message: format!("{what}: expected a nonnegative integer, got `{}`", e.value),
        })
    };

    // [grid]
    let n_entry = find("grid", "n")
        .ok_or_else(|| ConfigError { line: None, message: "missing required key grid.n".into() })?;
    let n = parse_usize(n_entry, "grid.n")?;
    if n < 2 {
        return err(n_entry.line, "grid.n must be at least 2");
    }
    let length_entry = find("grid", "length").ok_or_else(|| ConfigError {
        line: None,
        message: "missing required key grid.length".into(),
    })?;
    let length = parse_f64(length_entry, "grid.length")?;
    if !(length > 0.0) {
        return err(length_entry.line, "grid.length must be positive");
    }
    let origin = match find("grid", "origin") {
        Some(e) => {
            let parts: Vec<&str> = e.value.split_whitespace().collect();
            if parts.len() != 3 {
                return err(e.line, "grid.origin needs three coordinates");
            }
            let mut o = [0.0; 3];
            for (a, p) in o.iter_mut().zip(&parts) {
                *a = p.parse::<f64>().map_err(|_| ConfigError {
                    line: Some(e.line),
                    message: format!("grid.origin: bad coordinate `{p}`"),
                })?;
            }
            o
        }
        None => [-length / 2.0, -length / 2.0, -length / 2.0],
    };
    let spacing = length / (n as f64 + 1.0);

    // [system]
    let lambda_entry = find("system", "lambda").ok_or_else(|| ConfigError {
        line: None,
        message: "missing required key system.lambda".into(),
    })?;
    let lambda = parse_f64(lambda_entry, "system.lambda")?;
    if !(lambda > 0.0) {
        return err(lambda_entry.line, "system.lambda must be positive");
    }
    let mode = match find("system", "mode") {
        Some(e) => match e.value.as_str() {
            "full" => Mode::Full,
            "collinear" => Mode::Collinear,
            "unpolarized" => Mode::Unpolarized,
            "infinity" => Mode::Infinity,
            "noninteracting" => Mode::NonInteracting,
            other => return err(e.line, format!("unknown mode `{other}`")),
        },
        None => Mode::Full,
    };
    let mut nuclei = Vec::new();
    for (sec, key, e) in &entries {
        if sec == "system" && key == "nucleus" {
            let parts: Vec<&str> = e.value.split_whitespace().collect();
            if parts.len() != 4 {
                return err(e.line, "nucleus needs `z x y z` (charge and three coordinates)");
            }
            let charge = parts[0].parse::<u32>().map_err(|_| ConfigError {
                line: Some(e.line),
                message: format!("nucleus charge: expected a positive integer, got `{}`", parts[0]),
            })?;
            if charge == 0 {
                return err(e.line, "nucleus charge must be at least 1");
            }
            let mut pos = [0.0; 3];
            for (a, p) in pos.iter_mut().zip(&parts[1..]) {
                *a = p.parse::<f64>().map_err(|_| ConfigError {
                    line: Some(e.line),
                    message: format!("nucleus position: bad coordinate `{p}`"),
                })?;
            }
            nuclei.push(Nucleus { charge, position: pos });
        }
    }
    let softening = match find("system", "softening_a") {
        Some(e) => {
            let a = parse_f64(e, "system.softening_a")?;
            if a < 0.0 {
                return err(e.line, "system.softening_a must be nonnegative");
            }
            a
        }
        None => spacing / 2.0,
    };

    // [field]
    let b = match find("field", "b") {
        Some(e) => {
            let parts: Vec<&str> = e.value.split_whitespace().collect();
            let axis_of = |s: &str| -> Result<usize, ConfigError> {
                match s {
                    "x" => Ok(0),
                    "y" => Ok(1),
                    "z" => Ok(2),
                    other => err(e.line, format!("bad axis `{other}` (use x, y or z)")),
                }
            };
            let num = |s: &str, what: &str| -> Result<f64, ConfigError> {
                s.parse::<f64>().map_err(|_| ConfigError {
                    line: Some(e.line),
                    message: format!("{what}: bad number `{s}`"),
                })
            };
            match parts.first().copied() {
                Some("none") if parts.len() == 1 => BSpec::None,
                Some("uniform") if parts.len() == 3 => BSpec::Uniform {
                    amplitude: num(parts[1], "uniform amplitude")?,
                    axis: axis_of(parts[2])?,
                },
                Some("gaussian") if parts.len() == 7 => BSpec::Gaussian {
                    center: [
                        num(parts[1], "gaussian center")?,
                        num(parts[2], "gaussian center")?,
                        num(parts[3], "gaussian center")?,
                    ],
                    width: num(parts[4], "gaussian width")?,
                    amplitude: num(parts[5], "gaussian amplitude")?,
                    axis: axis_of(parts[6])?,
                },
                Some("file") if parts.len() == 2 => BSpec::File(PathBuf::from(parts[1])),
                _ => {
                    return err(
                        e.line,
                        "field.b must be `none`, `uniform <amp> <axis>`, \
                         `gaussian <cx> <cy> <cz> <width> <amp> <axis>` or `file <path>`",
                    )
                }
            }
        }
        None => BSpec::None,
    };

    // [xc]
    let c_x = match find("xc", "c_x") {
        Some(e) => {
            let v = parse_f64(e, "xc.c_x")?;
            if !(v > 0.0) {
                return err(e.line, "xc.c_x must be positive");
            }
            Some(v)
        }
        None => None,
    };
    let xc = match find("xc", "xc") {
        Some(e) => match e.value.as_str() {
            "none" => {
                if let Some(entry) = find("xc", "c_x") {
                    return err(entry.line, "xc.c_x is meaningless with xc = none");
                }
                XcFunctional::None
            }
            "xalpha" => XcFunctional::XAlpha { c_x: c_x.unwrap_or_else(default_c_x) },
            other => return err(e.line, format!("unknown xc functional `{other}`")),
        },
        None => XcFunctional::XAlpha { c_x: c_x.unwrap_or_else(default_c_x) },
    };

    // [scf] / [mix] / [eig] / [poisson]
    let positive = |e: &RawEntry, what: &str| -> Result<f64, ConfigError> {
        let v = parse_f64(e, what)?;
        if !(v > 0.0) {
            return err(e.line, format!("{what} must be positive"));
        }
        Ok(v)
    };
    let tol_rho = match find("scf", "tol_rho") {
        Some(e) => positive(e, "scf.tol_rho")?,
        None => 1e-6,
    };
    let tol_e = match find("scf", "tol_e") {
        Some(e) => positive(e, "scf.tol_e")?,
        None => 1e-8,
    };
    let scf_max_iter = match find("scf", "max_iter") {
        Some(e) => parse_usize(e, "scf.max_iter")?,
        None => 200,
    };
    let deg_tol = match find("scf", "deg_tol") {
        Some(e) => positive(e, "scf.deg_tol")?,
        None => 1e-6,
    };
    let starts = match find("scf", "starts") {
        Some(e) => match e.value.as_str() {
            "default" => Starts::Default,
            "aligned" => Starts::Aligned,
            "both" => Starts::Both,
            other => return err(e.line, format!("unknown starts `{other}`")),
        },
        None => Starts::Default,
    };
    let mix_beta = match find("mix", "beta") {
        Some(e) => {
            let v = positive(e, "mix.beta")?;
            if v > 1.0 {
                return err(e.line, "mix.beta must lie in (0, 1]");
            }
            v
        }
        None => 0.3,
    };
    let eig_k_extra = match find("eig", "k_extra") {
        Some(e) => parse_usize(e, "eig.k_extra")?,
        None => 8,
    };
    let eig_tol = match find("eig", "tol") {
        Some(e) => positive(e, "eig.tol")?,
        None => 1e-9,
    };
    let eig_max_iter = match find("eig", "max_iter") {
        Some(e) => parse_usize(e, "eig.max_iter")?,
        None => 800,
    };
    let seed = match find("eig", "seed") {
        Some(e) => e.value.parse::<u64>().map_err(|_| ConfigError {
            line: Some(e.line),
            message: format!("eig.seed: expected an integer, got `{}`", e.value),
        })?,
        None => 7,
    };
    let poisson_tol = match find("poisson", "tol") {
        Some(e) => positive(e, "poisson.tol")?,
        None => 1e-9,
    };
    let poisson_max_iter = match find("poisson", "max_iter") {
        Some(e) => parse_usize(e, "poisson.max_iter")?,
        None => 20000,
    };

    // [sweep] / [verify]
    let sweep_lambdas = match find("sweep", "lambdas") {
        Some(e) => {
            let mut ls = Vec::new();
            for p in e.value.split_whitespace() {
                let v = p.parse::<f64>().map_err(|_| ConfigError {
                    line: Some(e.line),
                    message: format!("sweep.lambdas: bad number `{p}`"),
                })?;
                if !(v > 0.0) {
                    return err(e.line, "sweep.lambdas must all be positive");
                }
                ls.push(v);
            }
            if ls.windows(2).any(|w| w[0] >= w[1]) {
                return err(e.line, "sweep.lambdas must be strictly increasing");
            }
            ls
        }
        None => vec![0.5, 1.0],
    };
    let tol_bind = match find("sweep", "tol_bind") {
        Some(e) => positive(e, "sweep.tol_bind")?,
        None => 1e-4,
    };
    let verify_seeds = match find("verify", "seeds") {
        Some(e) => {
            let mut seeds = Vec::new();
            for p in e.value.split_whitespace() {
                seeds.push(p.parse::<u64>().map_err(|_| ConfigError {
                    line: Some(e.line),
                    message: format!("verify.seeds: bad integer `{p}`"),
                })?);
            }
            if seeds.is_empty() {
                return err(e.line, "verify.seeds must list at least one seed");
            }
            seeds
        }
        None => vec![1, 2, 3],
    };

    let config = RunConfig {
        n,
        length,
        origin,
        lambda,
        mode,
        nuclei,
        softening,
        b,
        xc,
        tol_rho,
        tol_e,
        scf_max_iter,
        deg_tol,
        starts,
        mix_beta,
        eig_k_extra,
        eig_tol,
        eig_max_iter,
        seed,
        poisson_tol,
        poisson_max_iter,
        sweep_lambdas,
        tol_bind,
        verify_seeds,
    };

    // model-tier consistency: the collinear model couples only B_z
    if config.mode == Mode::Collinear && config.b.has_transverse() {
        return err_global(
            "mode = collinear couples only B_z; remove the transverse field components",
        );
    }
    // nuclei must lie inside the box
    let grid = config
        .grid()
        .map_err(|e| ConfigError { line: None, message: e.to_string() })?;
    for nuc in &config.nuclei {
        if !grid.contains(nuc.position) {
            return err_global(format!("nucleus at {:?} lies outside the box", nuc.position));
        }
    }
    Ok(config)
}

impl RunConfig {
    pub fn grid(&self) -> spindft::Result<Grid> {
        Grid::new(self.n, self.length, self.origin)
    }

    /// Resolve the `file` B spec by loading per-node samples.
    pub fn b_field_spec(&self, base_dir: &Path) -> anyhow::Result<BFieldSpec> {
        Ok(match &self.b {
            BSpec::None => BFieldSpec::None,
            BSpec::Uniform { amplitude, axis } => {
                BFieldSpec::Uniform { amplitude: *amplitude, axis: *axis }
            }
            BSpec::Gaussian { center, width, amplitude, axis } => BFieldSpec::Gaussian {
                center: *center,
                width: *width,
                amplitude: *amplitude,
                axis: *axis,
            },
            BSpec::File(path) => {
                let full = if path.is_absolute() { path.clone() } else { base_dir.join(path) };
                let text = std::fs::read_to_string(&full)
                    .map_err(|e| anyhow::anyhow!("cannot read B field file {full:?}: {e}"))?;
                let mut rows = Vec::new();
                for (i, line) in text.lines().enumerate() {
                    let line = line.trim();
                    if line.is_empty() || line.starts_with('#') {
                        continue;
                    }
                    let parts: Vec<&str> = line.split_whitespace().collect();
                    if parts.len() != 3 {
                        anyhow::bail!("B field file line {}: expected `bx by bz`", i + 1);
                    }
                    let mut row = [0.0; 3];
                    for (a, p) in row.iter_mut().zip(&parts) {
                        *a = p
                            .parse::<f64>()
                            .map_err(|_| anyhow::anyhow!("B field file line {}: bad number", i + 1))?;
                    }
                    rows.push(row);
                }
                let spec = BFieldSpec::Samples(rows);
                if self.mode == Mode::Collinear && spec.has_transverse() {
                    anyhow::bail!("mode = collinear couples only B_z; the B file has transverse components");
                }
                spec
            }
        })
    }

    /// Assemble the solver problem; `base_dir` anchors relative file paths.
    pub fn to_problem(&self, base_dir: &Path) -> anyhow::Result<ScfProblem> {
        let grid = self.grid()?;
        let b = self.b_field_spec(base_dir)?;
        Ok(ScfProblem {
            grid,
            ext: ExternalFields { nuclei: self.nuclei.clone(), b, softening: self.softening },
            opts: ScfOptions {
                lambda: self.lambda,
                mode: self.mode,
                xc: self.xc.clone(),
                mix_beta: self.mix_beta,
                tol_rho: self.tol_rho,
                tol_e: self.tol_e,
                max_iter: self.scf_max_iter,
                deg_tol: self.deg_tol,
                starts: self.starts,
                eig_k_extra: self.eig_k_extra,
                eig_tol: self.eig_tol,
                eig_max_iter: self.eig_max_iter,
                seed: self.seed,
                poisson_tol: self.poisson_tol,
                poisson_max_iter: self.poisson_max_iter,
            },
        })
    }

    /// Canonical text form; `parse_config(render(c)) == c` for every valid c.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str("[grid]\n");
        out.push_str(&format!("n = {}\n", self.n));
        out.push_str(&format!("length = {}\n", format_f64(self.length)));
        out.push_str(&format!(
            "origin = {} {} {}\n",
            format_f64(self.origin[0]),
            format_f64(self.origin[1]),
            format_f64(self.origin[2])
        ));
        out.push_str("\n[system]\n");
        out.push_str(&format!("lambda = {}\n", format_f64(self.lambda)));
        out.push_str(&format!("mode = {}\n", self.mode.name()));
        for nuc in &self.nuclei {
            out.push_str(&format!(
                "nucleus = {} {} {} {}\n",
                nuc.charge,
                format_f64(nuc.position[0]),
                format_f64(nuc.position[1]),
                format_f64(nuc.position[2])
            ));
        }
        out.push_str(&format!("softening_a = {}\n", format_f64(self.softening)));
        out.push_str("\n[field]\n");
        let axis_name = |a: usize| ["x", "y", "z"][a];
        match &self.b {
            BSpec::None => out.push_str("b = none\n"),
            BSpec::Uniform { amplitude, axis } => out.push_str(&format!(
                "b = uniform {} {}\n",
                format_f64(*amplitude),
                axis_name(*axis)
            )),
            BSpec::Gaussian { center, width, amplitude, axis } => out.push_str(&format!(
                "b = gaussian {} {} {} {} {} {}\n",
                format_f64(center[0]),
                format_f64(center[1]),
                format_f64(center[2]),
                format_f64(*width),
                format_f64(*amplitude),
                axis_name(*axis)
            )),
            BSpec::File(path) => out.push_str(&format!("b = file {}\n", path.display())),
        }
        out.push_str("\n[xc]\n");
        match &self.xc {
            XcFunctional::None => out.push_str("xc = none\n"),
            XcFunctional::XAlpha { c_x } => {
                out.push_str("xc = xalpha\n");
                out.push_str(&format!("c_x = {}\n", format_f64(*c_x)));
            }
        }
        out.push_str("\n[scf]\n");
        out.push_str(&format!("tol_rho = {}\n", format_f64(self.tol_rho)));
        out.push_str(&format!("tol_e = {}\n", format_f64(self.tol_e)));
        out.push_str(&format!("max_iter = {}\n", self.scf_max_iter));
        out.push_str(&format!("deg_tol = {}\n", format_f64(self.deg_tol)));
        let starts = match self.starts {
            Starts::Default => "default",
            Starts::Aligned => "aligned",
            Starts::Both => "both",
        };
        out.push_str(&format!("starts = {starts}\n"));
        out.push_str("\n[mix]\n");
        out.push_str(&format!("beta = {}\n", format_f64(self.mix_beta)));
        out.push_str("\n[eig]\n");
        out.push_str(&format!("k_extra = {}\n", self.eig_k_extra));
        out.push_str(&format!("tol = {}\n", format_f64(self.eig_tol)));
        out.push_str(&format!("max_iter = {}\n", self.eig_max_iter));
        out.push_str(&format!("seed = {}\n", self.seed));
        out.push_str("\n[poisson]\n");
        out.push_str(&format!("tol = {}\n", format_f64(self.poisson_tol)));
        out.push_str(&format!("max_iter = {}\n", self.poisson_max_iter));
        out.push_str("\n[sweep]\n");
        let lambdas: Vec<String> = self.sweep_lambdas.iter().map(|l| format_f64(*l)).collect();
        out.push_str(&format!("lambdas = {}\n", lambdas.join(" ")));
        out.push_str(&format!("tol_bind = {}\n", format_f64(self.tol_bind)));
        out.push_str("\n[verify]\n");
        let seeds: Vec<String> = self.verify_seeds.iter().map(|s| s.to_string()).collect();
        out.push_str(&format!("seeds = {}\n", seeds.join(" ")));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "\
[grid]
n = 15
length = 8.0

[system]
lambda = 1.0
nucleus = 1 0.0 0.0 0.0
";

    #[test]
    fn minimal_config_fills_defaults() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.n, 15);
        assert_eq!(c.softening, 0.25); // h/2 = (8/16)/2
        assert_eq!(c.mix_beta, 0.3);
        assert!(matches!(c.xc, XcFunctional::XAlpha { .. }));
        assert_eq!(c.mode, Mode::Full);
        assert_eq!(c.origin, [-4.0, -4.0, -4.0]);
        assert_eq!(c.b, BSpec::None);
        assert_eq!(c.sweep_lambdas, vec![0.5, 1.0]);
    }

    #[test]
    fn collinear_with_transverse_b_rejected() {
        let text = format!("{MINIMAL}mode = collinear\n\n[field]\nb = uniform 0.1 x\n");
        let e = parse_config(&text).unwrap_err();
        assert!(e.message.contains("B_z"), "{e}");
        // B_z is fine
        let text = format!("{MINIMAL}mode = collinear\n\n[field]\nb = uniform 0.1 z\n");
        assert!(parse_config(&text).is_ok());
    }

    #[test]
    fn duplicate_key_rejected_with_line() {
        let text = format!("{MINIMAL}lambda = 2.0\n");
        let e = parse_config(&text).unwrap_err();
        assert!(e.message.contains("duplicate"));
        assert_eq!(e.line, Some(8));
    }

    #[test]
    fn unknown_key_and_section_rejected() {
        let text = format!("{MINIMAL}charge = 3\n");
        assert!(parse_config(&text).unwrap_err().message.contains("unknown key"));
        let text = format!("{MINIMAL}\n[grids]\nn = 3\n");
        assert!(parse_config(&text).unwrap_err().message.contains("unknown section"));
    }

    #[test]
    fn type_mismatch_carries_line_number() {
        let text = "[grid]\nn = 3.5\nlength = 8\n\n[system]\nlambda = 1\n";
        let e = parse_config(text).unwrap_err();
        assert_eq!(e.line, Some(2));
    }

    #[test]
    fn missing_required_key_rejected() {
        let e = parse_config("[grid]\nn = 8\n").unwrap_err();
        assert!(e.message.contains("grid.length"));
    }

    #[test]
    fn nucleus_outside_box_rejected() {
        let text = "[grid]\nn = 8\nlength = 4\n\n[system]\nlambda = 1\nnucleus = 1 9 0 0\n";
        assert!(parse_config(text).unwrap_err().message.contains("outside"));
    }

    #[test]
    fn render_parse_round_trip() {
        let text = format!(
            "{MINIMAL}mode = collinear\nsoftening_a = 0.17\n\n[field]\nb = uniform 0.25 z\n\
             \n[scf]\ntol_rho = 2e-7\nstarts = both\n\n[eig]\nseed = 42\n\
             \n[sweep]\nlambdas = 0.25 0.5 1.0\n"
        );
        let c = parse_config(&text).unwrap();
        let rendered = c.render();
        let back = parse_config(&rendered).unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn render_round_trips_all_b_variants() {
        for field in [
            "b = none",
            "b = uniform -0.375 y",
            "b = gaussian 0.1 -0.2 0.3 1.5 0.7 x",
            "b = file bfield.dat",
        ] {
            let text = format!("{MINIMAL}\n[field]\n{field}\n");
            let c = parse_config(&text).unwrap();
            assert_eq!(c, parse_config(&c.render()).unwrap());
        }
    }

    #[test]
    fn comments_and_blank_lines_ignored() {
        let text = "# header\n[grid]\nn = 8   # nodes\nlength = 4\n\n[system]\nlambda = 0.5\n";
        let c = parse_config(text).unwrap();
        assert_eq!(c.n, 8);
        assert_eq!(c.lambda, 0.5);
    }
}
