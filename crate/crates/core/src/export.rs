//! CSV writers. Every file starts with `# config:` and `# seed:` comment
//! lines; numbers use a fixed `{:.9e}` format so reruns compare bit-exactly.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::convergence::StrongErrorReport;
use crate::error::Result;
use crate::observables::GridSpec;
use crate::Real;

/// Comment block written at the top of each file.
#[derive(Debug, Clone, PartialEq)]
pub struct Header {
    pub config: String,
    pub seed: u64,
    /// Further `key: value` comment lines, e.g. the command options.
    pub extra: Vec<(String, String)>,
}

impl Header {
    pub fn new(config: String, seed: u64) -> Self {
        Header { config, seed, extra: Vec::new() }
    }

    pub fn with(mut self, key: &str, value: impl Into<String>) -> Self {
        self.extra.push((key.to_string(), value.into()));
        self
    }

    fn write(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "# config: {}", self.config)?;
        writeln!(w, "# seed: {}", self.seed)?;
        for (k, v) in &self.extra {
            writeln!(w, "# {k}: {v}")?;
        }
        Ok(())
    }
}

#[inline]
fn f(v: f64) -> String {
    format!("{v:.9e}")
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn write_grid_field<T: Real>(path: &Path, header: &Header, spec: &GridSpec<T>, field: &[T], column: &str) -> Result<()> {
    let mut w = create(path)?;
    header.write(&mut w)?;
    writeln!(w, "x,y,{column}")?;
    for ix in 0..spec.nx {
        for iy in 0..spec.ny {
            let v = field[spec.index(ix, iy)];
            writeln!(w, "{},{},{}", f(spec.x_center(ix).as_f64()), f(spec.y_center(iy).as_f64()), f(v.as_f64()))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `x,y,dose` over all cells, x-major.
pub fn write_dose<T: Real>(path: &Path, header: &Header, spec: &GridSpec<T>, dose: &[T]) -> Result<()> {
    write_grid_field(path, header, spec, dose, "dose")
}

/// `x,y,dsens` over all cells, x-major.
pub fn write_sensitivity<T: Real>(path: &Path, header: &Header, spec: &GridSpec<T>, sens: &[T]) -> Result<()> {
    write_grid_field(path, header, spec, sens, "dsens")
}

/// `x,dose_integrated_over_y`.
pub fn write_profile<T: Real>(path: &Path, header: &Header, profile: &[(T, T)]) -> Result<()> {
    let mut w = create(path)?;
    header.write(&mut w)?;
    writeln!(w, "x,dose_integrated_over_y")?;
    for (x, d) in profile {
        writeln!(w, "{},{}", f(x.as_f64()), f(d.as_f64()))?;
    }
    w.flush()?;
    Ok(())
}

fn slope_text(s: Option<f64>) -> String {
    s.map(|v| format!("{v:.4}")).unwrap_or_else(|| "nan".into())
}

/// One row per h, then the fitted slopes. `self_test` is the largest
/// terminal difference of the m = 1 coupling check; it is reported as a
/// comment and never enters the fit.
pub fn write_convergence(path: &Path, header: &Header, r: &StrongErrorReport, self_test: Option<f64>) -> Result<()> {
    let mut w = create(path)?;
    header.write(&mut w)?;
    writeln!(w, "h,err_E,err_Omega,err_X,err_J_alpha,err_J_p,err_J_kappa")?;
    for i in 0..r.h_values.len() {
        let row = [r.h_values[i], r.err_e[i], r.err_omega[i], r.err_x[i], r.err_j[0][i], r.err_j[1][i], r.err_j[2][i]];
        writeln!(w, "{}", row.iter().map(|v| f(*v)).collect::<Vec<_>>().join(","))?;
    }
    writeln!(
        w,
        "# slopes: E={} Omega={} X={} J_alpha={} J_p={} J_kappa={}",
        slope_text(Some(r.slope_e)),
        slope_text(Some(r.slope_omega)),
        slope_text(Some(r.slope_x)),
        slope_text(r.slope_j[0]),
        slope_text(r.slope_j[1]),
        slope_text(r.slope_j[2]),
    )?;
    if let Some(d) = self_test {
        writeln!(w, "# coupling self-test (m=1): max_abs_diff={}", f(d))?;
    }
    w.flush()?;
    Ok(())
}

/// Norm statistics of the direction vectors at one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormRow {
    pub step: usize,
    pub t: f64,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

/// `step,t,norm_mean,norm_min,norm_max`.
pub fn write_norms(path: &Path, header: &Header, rows: &[NormRow]) -> Result<()> {
    let mut w = create(path)?;
    header.write(&mut w)?;
    writeln!(w, "step,t,norm_mean,norm_min,norm_max")?;
    for r in rows {
        writeln!(w, "{},{},{},{},{}", r.step, f(r.t), f(r.mean), f(r.min), f(r.max))?;
    }
    w.flush()?;
    Ok(())
}

pub const HISTOGRAM_BINS: usize = 50;

/// Counts of `angles` in `bins` equal bins over [−π, π).
pub fn angle_histogram(angles: &[f64], bins: usize) -> Vec<u64> {
    use std::f64::consts::PI;
    let mut counts = vec![0u64; bins];
    for a in angles {
        let u = ((a + PI) / (2.0 * PI)).rem_euclid(1.0);
        let k = ((u * bins as f64) as usize).min(bins - 1);
        counts[k] += 1;
    }
    counts
}

/// `bin_left,bin_right,count,density` with density normalised to integrate to 1.
pub fn write_histogram(path: &Path, header: &Header, angles: &[f64]) -> Result<()> {
    use std::f64::consts::PI;
    let counts = angle_histogram(angles, HISTOGRAM_BINS);
    let width = 2.0 * PI / HISTOGRAM_BINS as f64;
    let n = angles.len().max(1) as f64;
    let mut w = create(path)?;
    header.write(&mut w)?;
    writeln!(w, "bin_left,bin_right,count,density")?;
    for (k, c) in counts.iter().enumerate() {
        let left = -PI + k as f64 * width;
        writeln!(w, "{},{},{},{}", f(left), f(left + width), c, f(*c as f64 / (n * width)))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dose_file_layout() {
        let dir = tempfile::tempdir().unwrap();
        let spec = GridSpec::new(2, 3, [0.0, 2.0, 0.0, 3.0]).unwrap();
        let field: Vec<f64> = (0..6).map(|i| i as f64).collect();
        let p = dir.path().join("sub/dose.csv");
        write_dose(&p, &Header::new("{}".into(), 7), &spec, &field).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# config: {}");
        assert_eq!(lines[1], "# seed: 7");
        assert_eq!(lines[2], "x,y,dose");
        assert_eq!(lines.len(), 3 + 6);
        assert_eq!(lines[3], "5.000000000e-1,5.000000000e-1,0.000000000e0");
        assert!(lines[4].ends_with("1.000000000e0"));
    }

    #[test]
    fn histogram_bins_cover_the_circle() {
        use std::f64::consts::PI;
        let c = angle_histogram(&[-PI, -PI + 1e-9, 0.0, PI - 1e-12, PI], 50);
        assert_eq!(c.iter().sum::<u64>(), 5);
        assert_eq!(c[0], 3);
        assert_eq!(c[25], 1);
        assert_eq!(c[49], 1);
    }
}
