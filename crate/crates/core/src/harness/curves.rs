//! Aligned learning curves across run directories, as CSV plus static SVG.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::HarnessError;
use crate::trainer::RunPaths;

/// Columns of `metrics.csv` that are plotted.
pub const CURVE_SERIES: [&str; 4] = ["mean_episode_reward", "mean_step_reward", "mean_episode_length", "success_rate"];

/// Per-iteration series of one run; missing cells are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunCurves {
    pub name: String,
    pub iterations: Vec<usize>,
    /// `series[k][i]` is `CURVE_SERIES[k]` at `iterations[i]`.
    pub series: Vec<Vec<Option<f64>>>,
}

pub fn read_run(dir: &Path) -> Result<RunCurves, HarnessError> {
    let path = RunPaths::new(dir).metrics();
    let mut reader = csv::Reader::from_path(&path)?;
    let bad = |msg: String| HarnessError::Format { path: path.clone(), msg };
    let header = reader.headers()?.clone();
    let col = |name: &str| header.iter().position(|h| h == name).ok_or_else(|| bad(format!("missing column {name}")));
    let it_col = col("iteration")?;
    let cols = CURVE_SERIES.iter().map(|n| col(n)).collect::<Result<Vec<_>, _>>()?;
    let mut out = RunCurves {
        name: dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned()),
        iterations: Vec::new(),
        series: vec![Vec::new(); CURVE_SERIES.len()],
    };
    for rec in reader.records() {
        let rec = rec?;
        let it = rec.get(it_col).unwrap_or("").parse().map_err(|e| bad(format!("iteration: {e}")))?;
        out.iterations.push(it);
        for (k, &c) in cols.iter().enumerate() {
            let cell = rec.get(c).unwrap_or("");
            let v = if cell.is_empty() {
                None
            } else {
                Some(cell.parse::<f64>().map_err(|e| bad(format!("{}: {e}", CURVE_SERIES[k])))?)
            };
            out.series[k].push(v);
        }
    }
    Ok(out)
}

/// Runs restricted to their common iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedCurves {
    pub iterations: Vec<usize>,
    pub runs: Vec<RunCurves>,
    pub warnings: Vec<String>,
}

/// Keeps the iterations present in every run, warning when ranges differ.
pub fn align(runs: Vec<RunCurves>) -> AlignedCurves {
    let mut warnings = Vec::new();
    let mut common: Option<BTreeSet<usize>> = None;
    for r in &runs {
        let set: BTreeSet<usize> = r.iterations.iter().copied().collect();
        common = Some(match common {
            None => set,
            Some(c) => c.intersection(&set).copied().collect(),
        });
    }
    let common = common.unwrap_or_default();
    let aligned = runs
        .into_iter()
        .map(|r| {
            if r.iterations.len() != common.len() {
                warnings.push(format!(
                    "{}: {} iterations logged, aligned on the {} shared with every run",
                    r.name,
                    r.iterations.len(),
                    common.len()
                ));
            }
            let keep: Vec<usize> = (0..r.iterations.len()).filter(|&i| common.contains(&r.iterations[i])).collect();
            RunCurves {
                iterations: keep.iter().map(|&i| r.iterations[i]).collect(),
                series: r.series.iter().map(|s| keep.iter().map(|&i| s[i]).collect()).collect(),
                name: r.name,
            }
        })
        .collect();
    AlignedCurves {
        iterations: common.into_iter().collect(),
        runs: aligned,
        warnings,
    }
}

impl AlignedCurves {
    /// Wide CSV: `iteration`, then `<run>:<series>` for every run and series.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration");
        for r in &self.runs {
            for name in CURVE_SERIES {
                let _ = write!(s, ",{}:{}", r.name, name);
            }
        }
        s.push('\n');
        for (i, it) in self.iterations.iter().enumerate() {
            let _ = write!(s, "{it}");
            for r in &self.runs {
                for series in &r.series {
                    s.push(',');
                    if let Some(v) = series[i] {
                        let _ = write!(s, "{v}");
                    }
                }
            }
            s.push('\n');
        }
        s
    }

    /// Line chart of one series across runs.
    pub fn to_svg(&self, series: usize) -> String {
        const W: f64 = 640.0;
        const H: f64 = 360.0;
        const PAD: f64 = 48.0;
        const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];
        let points: Vec<(usize, f64)> = self
            .runs
            .iter()
            .flat_map(|r| r.iterations.iter().zip(&r.series[series]).filter_map(|(&i, v)| v.map(|v| (i, v))))
            .collect();
        let (xmin, xmax) = points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0 as f64), b.max(p.0 as f64)));
        let (ymin, ymax) = points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1), b.max(p.1)));
        let span = |lo: f64, hi: f64| if hi > lo { hi - lo } else { 1.0 };
        let sx = |x: f64| PAD + (x - xmin) / span(xmin, xmax) * (W - 2.0 * PAD);
        let sy = |y: f64| H - PAD - (y - ymin) / span(ymin, ymax) * (H - 2.0 * PAD);
        let mut s = format!(r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#);
        s.push('\n');
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<path d="M{PAD} {PAD} V{} H{}" fill="none" stroke="black"/>"#,
            H - PAD,
            W - PAD
        );
        let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"#, W / 2.0, CURVE_SERIES[series]);
        if !points.is_empty() {
            let _ = writeln!(s, r#"<text x="{PAD}" y="{}" text-anchor="middle">{xmin}</text>"#, H - PAD + 16.0);
            let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{xmax}</text>"#, W - PAD, H - PAD + 16.0);
            let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{ymin:.3}</text>"#, PAD - 4.0, H - PAD);
            let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{ymax:.3}</text>"#, PAD - 4.0, PAD + 4.0);
        }
        for (k, r) in self.runs.iter().enumerate() {
            let color = COLORS[k % COLORS.len()];
            let pts: Vec<String> = r
                .iterations
                .iter()
                .zip(&r.series[series])
                .filter_map(|(&i, v)| v.map(|v| format!("{:.1},{:.1}", sx(i as f64), sy(v))))
                .collect();
            if !pts.is_empty() {
                let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, pts.join(" "));
            }
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
                W - PAD - 150.0,
                PAD + 14.0 * k as f64,
                r.name
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

/// Writes `curves.csv` and one SVG per series into `out`. Returns the
/// aligned data; warnings are also printed to stderr.
pub fn emit_curves(run_dirs: &[PathBuf], out: &Path) -> Result<AlignedCurves, HarnessError> {
    if run_dirs.is_empty() {
        return Err(HarnessError::Usage("at least one run directory required".into()));
    }
    let runs = run_dirs.iter().map(|d| read_run(d)).collect::<Result<Vec<_>, _>>()?;
    let aligned = align(runs);
    for w in &aligned.warnings {
        eprintln!("warning: {w}");
    }
    fs::create_dir_all(out)?;
    fs::write(out.join("curves.csv"), aligned.to_csv())?;
    for (k, name) in CURVE_SERIES.iter().enumerate() {
        fs::write(out.join(format!("{name}.svg")), aligned.to_svg(k))?;
    }
    Ok(aligned)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(name: &str, its: &[usize]) -> RunCurves {
        RunCurves {
            name: name.into(),
            iterations: its.to_vec(),
            series: (0..4).map(|k| its.iter().map(|&i| Some((i * 10 + k) as f64)).collect()).collect(),
        }
    }

    #[test]
    fn aligns_on_intersection_with_warning() {
        let a = align(vec![run("a", &[1, 2, 3, 4]), run("b", &[3, 4, 5])]);
        assert_eq!(a.iterations, vec![3, 4]);
        assert_eq!(a.warnings.len(), 2);
        assert_eq!(a.runs[1].series[0], vec![Some(30.0), Some(40.0)]);
        let same = align(vec![run("a", &[1, 2]), run("b", &[1, 2])]);
        assert!(same.warnings.is_empty());
    }

    #[test]
    fn csv_has_paired_columns() {
        let a = align(vec![run("x", &[1]), run("y", &[1])]);
        let csv = a.to_csv();
        let header = csv.lines().next().unwrap();
        assert_eq!(header.split(',').count(), 1 + 2 * CURVE_SERIES.len());
        assert!(header.contains("x:success_rate") && header.contains("y:success_rate"));
    }
}
