//! Long-format `(series, x, y, lo, hi)` tables from result CSVs, by header detection.

use std::io::Write;
use std::path::Path;

use crate::error::CliError;

#[derive(Debug, PartialEq)]
pub struct Point {
    pub series: String,
    pub x: f64,
    pub y: f64,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
}

fn point(series: impl Into<String>, x: f64, y: f64, lo: Option<f64>, hi: Option<f64>) -> Point {
    Point {
        series: series.into(),
        x,
        y,
        lo,
        hi,
    }
}

fn starts_with(header: &[String], cols: &[&str]) -> bool {
    header.len() >= cols.len() && header.iter().zip(cols).all(|(h, c)| h == c)
}

fn positive_ln(v: f64) -> Option<f64> {
    (v > 0.0).then(|| v.ln())
}

/// Converts one CSV; `Ok(None)` when its schema is not plottable.
pub fn convert_file(path: &Path) -> Result<Option<Vec<Point>>, CliError> {
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let header: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
    let mut rows: Vec<Vec<String>> = Vec::new();
    for r in rdr.records() {
        rows.push(r?.iter().map(String::from).collect());
    }
    let f = |s: &str| -> Result<f64, CliError> {
        s.parse::<f64>()
            .map_err(|_| CliError::Config(format!("{}: `{s}` is not a number", path.display())))
    };
    let mut out = Vec::new();
    if starts_with(&header, &["t", "tv", "ci_lo", "ci_hi"]) {
        for r in &rows {
            out.push(point(
                "TV",
                f(&r[0])?,
                f(&r[1])?,
                Some(f(&r[2])?),
                Some(f(&r[3])?),
            ));
        }
    } else if header == ["y0", "value"] {
        let series = if stem.starts_with("invariant") {
            "g"
        } else {
            "p_t"
        };
        for r in &rows {
            out.push(point(series, f(&r[0])?, f(&r[1])?, None, None));
        }
    } else if starts_with(
        &header,
        &[
            "coordinate",
            "eps",
            "log_eps",
            "moment",
            "std_err",
            "log_moment",
        ],
    ) {
        for r in &rows {
            let (moment, se) = (f(&r[3])?, f(&r[4])?);
            out.push(point(
                format!("coord_{}", r[0]),
                f(&r[2])?,
                f(&r[5])?,
                positive_ln(moment - 2.0 * se),
                positive_ln(moment + 2.0 * se),
            ));
        }
    } else if starts_with(&header, &["eps", "hits", "estimate", "ci_lo", "ci_hi"]) {
        for r in &rows {
            out.push(point(
                "P_hit",
                f(&r[0])?,
                f(&r[2])?,
                Some(f(&r[3])?),
                Some(f(&r[4])?),
            ));
        }
    } else if starts_with(&header, &["t", "coordinate", "mean", "std_err"]) {
        for r in &rows {
            let (mean, se) = (f(&r[2])?, f(&r[3])?);
            out.push(point(
                format!("mean_{}", r[1]),
                f(&r[0])?,
                mean,
                Some(mean - 1.96 * se),
                Some(mean + 1.96 * se),
            ));
        }
    } else if header == ["t", "psi_ode", "psi_closed", "rel_err"] {
        for r in &rows {
            let t = f(&r[0])?;
            out.push(point("psi_ode", t, f(&r[1])?, None, None));
            out.push(point("psi_closed", t, f(&r[2])?, None, None));
        }
    } else if starts_with(
        &header,
        &[
            "sweep", "x_scale", "x_norm", "t", "lambda", "norm", "rescaled",
        ],
    ) {
        for r in &rows {
            let lambda = &r[4];
            if r[0] == "x" {
                out.push(point(
                    format!("x_sweep_lambda_{lambda}"),
                    f(&r[2])?,
                    f(&r[5])?,
                    None,
                    None,
                ));
            } else {
                out.push(point(
                    format!("t_sweep_lambda_{lambda}"),
                    f(&r[3])?,
                    f(&r[6])?,
                    None,
                    None,
                ));
            }
        }
    } else {
        return Ok(None);
    }
    Ok(Some(out))
}

/// Converts a CSV file, or every plottable CSV of an artifact directory
/// (in file-name order).
pub fn emit_plot_data(artifact: &Path) -> Result<Vec<Point>, CliError> {
    if !artifact.exists() {
        return Err(CliError::Config(format!(
            "artifact {} does not exist",
            artifact.display()
        )));
    }
    if artifact.is_file() {
        return convert_file(artifact)?.ok_or_else(|| {
            CliError::Config(format!("unknown artifact schema: {}", artifact.display()))
        });
    }
    let mut files: Vec<_> = std::fs::read_dir(artifact)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|x| x == "csv")
                && p.file_name().is_some_and(|n| n != "plot_data.csv")
        })
        .collect();
    files.sort();
    let mut out = Vec::new();
    let mut any = false;
    for f in files {
        if let Some(points) = convert_file(&f)? {
            any = true;
            out.extend(points);
        }
    }
    if !any {
        return Err(CliError::Config(format!(
            "no artifact with a known schema in {}",
            artifact.display()
        )));
    }
    Ok(out)
}

pub fn write_points<W: Write>(w: W, points: &[Point]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["series", "x", "y", "lo", "hi"])?;
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for p in points {
        w.write_record([
            p.series.clone(),
            p.x.to_string(),
            p.y.to_string(),
            opt(p.lo),
            opt(p.hi),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn decay_table_becomes_tv_series() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "decay.csv",
            "t,tv,ci_lo,ci_hi,floor,used_in_fit\n0.5,1.2,1.1,1.3,0.04,true\n",
        );
        let pts = emit_plot_data(&p).unwrap();
        assert_eq!(pts, vec![point("TV", 0.5, 1.2, Some(1.1), Some(1.3))]);
    }

    #[test]
    fn density_and_rates() {
        let dir = tempfile::tempdir().unwrap();
        let d = write(dir.path(), "density.csv", "y0,value\n0,0.5\n0.1,0.25\n");
        assert_eq!(
            emit_plot_data(&d).unwrap()[1],
            point("p_t", 0.1, 0.25, None, None)
        );
        let g = write(dir.path(), "invariant.csv", "y0,value\n0,0.5\n");
        assert_eq!(emit_plot_data(&g).unwrap()[0].series, "g");
        let r = write(
            dir.path(),
            "rates.csv",
            "coordinate,eps,log_eps,moment,std_err,log_moment\n1,0.1,-2.3,0.2,0.01,-1.6\n",
        );
        let pts = emit_plot_data(&r).unwrap();
        assert_eq!(pts[0].series, "coord_1");
        assert_eq!((pts[0].x, pts[0].y), (-2.3, -1.6));
        assert!((pts[0].hi.unwrap() - 0.22f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn unknown_schema_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "other.csv", "a,b\n1,2\n");
        assert!(matches!(emit_plot_data(&p), Err(CliError::Config(_))));
        assert!(emit_plot_data(&dir.path().join("missing.csv")).is_err());
        assert!(emit_plot_data(dir.path()).is_err());
    }
}
