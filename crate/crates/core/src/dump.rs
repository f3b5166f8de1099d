//! Plain-text density dump: grid header followed by one row per node with
//! the four R channels, the eigenvalue fields and the magnetization,
//! row-major over (i, j, k). Byte-stable for fixed inputs.

use crate::error::Result;
use crate::spin::SpinDensityField;
use std::io::Write;

/// Render a float with 17 significant digits (lossless for f64).
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Write the dump to any sink.
pub fn write_density_dump(w: &mut impl Write, r: &SpinDensityField) -> Result<()> {
    let grid = r.grid();
    let (plus, minus) = r.eigenvalues_pm()?;
    let m = r.magnetization();
    let mut out = String::new();
    out.push_str(&format!("dims {} {} {}\n", grid.n(), grid.n(), grid.n()));
    out.push_str(&format!("spacing {}\n", format_f64(grid.spacing())));
    let o = grid.origin();
    out.push_str(&format!(
        "origin {} {} {}\n",
        format_f64(o[0]),
        format_f64(o[1]),
        format_f64(o[2])
    ));
    out.push_str("columns ruu rdd rud_re rud_im rho_plus rho_minus m_x m_y m_z\n");
    w.write_all(out.as_bytes()).map_err(io_err)?;
    for idx in 0..grid.size() {
        let row = format!(
            "{} {} {} {} {} {} {} {} {}\n",
            format_f64(r.ruu.values()[idx]),
            format_f64(r.rdd.values()[idx]),
            format_f64(r.rud_re.values()[idx]),
            format_f64(r.rud_im.values()[idx]),
            format_f64(plus.values()[idx]),
            format_f64(minus.values()[idx]),
            format_f64(m[0].values()[idx]),
            format_f64(m[1].values()[idx]),
            format_f64(m[2].values()[idx]),
        );
        w.write_all(row.as_bytes()).map_err(io_err)?;
    }
    Ok(())
}

fn io_err(e: std::io::Error) -> crate::error::Error {
    crate::error::Error::Solver(format!("write failed: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Grid, RealField};

    #[test]
    fn dump_layout_and_determinism() {
        let g = Grid::new(2, 3.0, [0.0; 3]).unwrap();
        let mut r = SpinDensityField::zeros(&g);
        r.ruu = RealField::from_fn(&g, |p| p[0] + 0.1 * p[1]);
        r.rdd = RealField::constant(&g, 0.25);

        let mut a = Vec::new();
        write_density_dump(&mut a, &r).unwrap();
        let mut b = Vec::new();
        write_density_dump(&mut b, &r).unwrap();
        assert_eq!(a, b);

        let text = String::from_utf8(a).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "dims 2 2 2");
        assert!(lines[1].starts_with("spacing 1"));
        assert_eq!(lines[3], "columns ruu rdd rud_re rud_im rho_plus rho_minus m_x m_y m_z");
        assert_eq!(lines.len(), 4 + 8);
        // row count and column count per row
        for row in &lines[4..] {
            assert_eq!(row.split_whitespace().count(), 9);
        }
    }

    #[test]
    fn float_rendering_round_trips() {
        for v in [0.0, 1.0, -0.5, std::f64::consts::PI, 1.2345678901234567e-9] {
            let s = format_f64(v);
            let back: f64 = s.parse().unwrap();
            assert_eq!(v, back);
        }
    }
}
