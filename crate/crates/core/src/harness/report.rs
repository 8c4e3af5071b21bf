//! Sweep reports: per-scan, per-point and summary CSVs, a JSON statistics
//! file and a text table of accuracy and precision per PD orientation.
//!
//! Every writer formats numbers with fixed precision, so identical inputs give
//! byte-identical files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::sweep::{pooled, SweepResult, SweepSpec, SweepStats, AXES};
use crate::scene_sim::PdLayout;

pub const SCANS_CSV: &str = "scans.csv";
pub const POINTS_CSV: &str = "points.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const STATS_JSON: &str = "stats.json";
pub const TABLE_TXT: &str = "table.txt";

pub const DEFINITIONS: &str = "\
Accuracy: mean over reference points of |mean estimation error| at that point.
Precision: mean over reference points of the standard deviation (n-1) of the error over repeated scans.
Angles in degrees, translations in millimeters. Points where every scan failed are excluded.";

const UNITS: [&str; 6] = ["deg", "deg", "deg", "mm", "mm", "mm"];

/// Row label for a PD layout.
pub fn layout_label(layout: PdLayout) -> &'static str {
    match layout {
        PdLayout::Horizontal => "Horizontal PD",
        PdLayout::Vertical => "Vertical PD",
        PdLayout::Mixed => "Mixed PD",
    }
}

/// All sweeps run with one PD layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Run {
    pub label: String,
    pub results: Vec<SweepResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub spec: SweepSpec,
    pub stats: SweepStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub label: String,
    pub sweeps: Vec<SweepEntry>,
}

impl RunStats {
    /// Accuracy and precision pooled over the points of every sweep.
    pub fn combined(&self) -> Result<([f64; 6], [f64; 6])> {
        pooled(self.sweeps.iter().flat_map(|s| s.stats.points.iter()))
    }
}

/// Contents of `stats.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsFile {
    pub runs: Vec<RunStats>,
}

impl StatsFile {
    pub fn from_runs(runs: &[Run]) -> Result<Self> {
        let s = Self {
            runs: runs
                .iter()
                .map(|r| RunStats {
                    label: r.label.clone(),
                    sweeps: r
                        .results
                        .iter()
                        .map(|x| SweepEntry {
                            spec: x.spec.clone(),
                            stats: x.stats.clone(),
                        })
                        .collect(),
                })
                .collect(),
        };
        s.validate()?;
        Ok(s)
    }

    /// Rejects anything that would render as an empty table.
    pub fn validate(&self) -> Result<()> {
        if self.runs.is_empty() {
            return Err(Error::Analysis("no sweep runs to report".into()));
        }
        for r in &self.runs {
            if r.sweeps.is_empty() {
                return Err(Error::Analysis(format!("{}: no sweeps", r.label)));
            }
            for s in &r.sweeps {
                if s.stats.points.is_empty() {
                    return Err(Error::Analysis(format!("{} {}: empty sweep", r.label, s.spec.parameter.label())));
                }
            }
            r.combined().map_err(|e| Error::Analysis(format!("{}: {e}", r.label)))?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map(|s| s + "\n").map_err(|e| Error::Analysis(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Self = serde_json::from_str(text).map_err(|e| Error::Input(format!("stats file: {e}")))?;
        s.validate()?;
        Ok(s)
    }
}

fn csv_text(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// One row per simulated scan.
pub fn scans_csv(runs: &[Run]) -> String {
    let mut s = String::from("orientation,sweep,point,reference,scan_id,correspondences,yaw_deg,tilt_deg,roll_deg,x_m,y_m,z_m");
    for (a, u) in AXES.iter().zip(UNITS) {
        write!(s, ",err_{a}_{u}").unwrap();
    }
    s.push_str(",failure\n");
    for run in runs {
        for res in &run.results {
            for r in &res.records {
                write!(
                    s,
                    "{},{},{},{:.6},{},{}",
                    csv_text(&run.label),
                    res.spec.parameter.label(),
                    r.point,
                    r.reference,
                    r.scan_id,
                    r.correspondences
                )
                .unwrap();
                match r.estimate {
                    Some(e) => write!(
                        s,
                        ",{:.9},{:.9},{:.9},{:.9},{:.9},{:.9}",
                        e.yaw.to_degrees(),
                        e.tilt.to_degrees(),
                        e.roll.to_degrees(),
                        e.x,
                        e.y,
                        e.z
                    )
                    .unwrap(),
                    None => s.push_str(",,,,,,"),
                }
                match r.error {
                    Some(e) => e.iter().for_each(|v| write!(s, ",{v:.6}").unwrap()),
                    None => s.push_str(",,,,,,"),
                }
                writeln!(s, ",{}", csv_text(r.failure.as_deref().unwrap_or(""))).unwrap();
            }
        }
    }
    s
}

/// One row per reference point with per-axis bias and spread.
pub fn points_csv(stats: &StatsFile) -> String {
    let mut s = String::from("orientation,sweep,point,reference,unit,solved,failed");
    for prefix in ["mean", "std"] {
        for (a, u) in AXES.iter().zip(UNITS) {
            write!(s, ",{prefix}_{a}_{u}").unwrap();
        }
    }
    s.push_str(",failure\n");
    for run in &stats.runs {
        for sw in &run.sweeps {
            for (i, p) in sw.stats.points.iter().enumerate() {
                write!(
                    s,
                    "{},{},{i},{:.6},{},{},{}",
                    csv_text(&run.label),
                    sw.spec.parameter.label(),
                    p.reference,
                    sw.spec.parameter.unit(),
                    p.solved,
                    p.failed
                )
                .unwrap();
                p.mean_error.iter().chain(&p.std_error).for_each(|v| write!(s, ",{v:.6}").unwrap());
                writeln!(s, ",{}", csv_text(p.failure.as_deref().unwrap_or(""))).unwrap();
            }
        }
    }
    s
}

/// Accuracy and precision per orientation, for each sweep and pooled.
pub fn summary_csv(stats: &StatsFile) -> Result<String> {
    stats.validate()?;
    let mut s = String::from("orientation,sweep,metric");
    for (a, u) in AXES.iter().zip(UNITS) {
        write!(s, ",{a}_{u}").unwrap();
    }
    s.push('\n');
    let mut row = |label: &str, sweep: &str, metric: &str, v: &[f64; 6]| {
        write!(s, "{},{sweep},{metric}", csv_text(label)).unwrap();
        v.iter().for_each(|x| write!(s, ",{x:.6}").unwrap());
        s.push('\n');
    };
    for run in &stats.runs {
        for sw in &run.sweeps {
            row(&run.label, sw.spec.parameter.label(), "accuracy", &sw.stats.accuracy);
            row(&run.label, sw.spec.parameter.label(), "precision", &sw.stats.precision);
        }
        let (acc, prec) = run.combined()?;
        row(&run.label, "combined", "accuracy", &acc);
        row(&run.label, "combined", "precision", &prec);
    }
    Ok(s)
}

/// Accuracy/precision table in tilt, roll, yaw and ΔX, one block per
/// orientation, pooled over all sweeps of that orientation.
pub fn table_text(stats: &StatsFile) -> Result<String> {
    stats.validate()?;
    let width = stats.runs.iter().map(|r| r.label.chars().count()).max().unwrap_or(0).max(11);
    let mut s = String::new();
    writeln!(s, "{:<width$}  {:<9}  {:>10}  {:>10}  {:>10}  {:>10}", "", "", "Tilt (deg)", "Roll (deg)", "Yaw (deg)", "ΔX (mm)").unwrap();
    for run in &stats.runs {
        let (acc, prec) = run.combined()?;
        for (i, (name, v)) in [("Accuracy", acc), ("Precision", prec)].into_iter().enumerate() {
            let label = if i == 0 { run.label.as_str() } else { "" };
            writeln!(s, "{label:<width$}  {name:<9}  {:>10.3}  {:>10.3}  {:>10.3}  {:>10.2}", v[0], v[1], v[2], v[3]).unwrap();
        }
    }
    s.push('\n');
    s.push_str(DEFINITIONS);
    s.push('\n');
    Ok(s)
}

fn write_file(dir: &Path, name: &str, text: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    Ok(path)
}

/// Write the summary CSV and the table for existing statistics.
pub fn write_summary(dir: &Path, stats: &StatsFile) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    Ok(vec![
        write_file(dir, SUMMARY_CSV, &summary_csv(stats)?)?,
        write_file(dir, TABLE_TXT, &table_text(stats)?)?,
    ])
}

/// Write every report artifact for `runs` into `dir`.
pub fn write_report(dir: &Path, runs: &[Run]) -> Result<Vec<PathBuf>> {
    let stats = StatsFile::from_runs(runs)?;
    std::fs::create_dir_all(dir)?;
    let mut out = vec![
        write_file(dir, SCANS_CSV, &scans_csv(runs))?,
        write_file(dir, POINTS_CSV, &points_csv(&stats))?,
        write_file(dir, STATS_JSON, &stats.to_json()?)?,
    ];
    out.extend(write_summary(dir, &stats)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::sweep::{PointStats, SweepParameter};

    fn point(reference: f64, m: f64, sd: f64) -> PointStats {
        PointStats {
            reference,
            solved: 50,
            failed: 0,
            mean_error: [m, -m, m, 10.0 * m, 0.0, 0.0],
            std_error: [sd; 6],
            failure: None,
        }
    }

    fn stats(label: &str) -> RunStats {
        let spec = SweepSpec::yaw();
        let pts = vec![point(-0.5, 0.01, 0.1), point(0.0, -0.03, 0.2), point(0.5, 0.02, 0.3)];
        RunStats {
            label: label.into(),
            sweeps: vec![SweepEntry {
                stats: SweepStats::from_points(SweepParameter::Yaw, pts).unwrap(),
                spec,
            }],
        }
    }

    fn file() -> StatsFile {
        StatsFile {
            runs: vec![stats("Horizontal PD"), stats("Vertical PD")],
        }
    }

    #[test]
    fn table_rows_and_columns() {
        let t = table_text(&file()).unwrap();
        let lines: Vec<&str> = t.lines().collect();
        assert!(lines[0].contains("Tilt (deg)") && lines[0].contains("Roll (deg)") && lines[0].contains("Yaw (deg)") && lines[0].contains("ΔX (mm)"));
        assert!(lines[1].starts_with("Horizontal PD") && lines[1].contains("Accuracy"));
        assert!(lines[2].contains("Precision"));
        assert!(lines[3].starts_with("Vertical PD"));
        let nums: Vec<f64> = lines[1].split_whitespace().skip(3).map(|v| v.parse().unwrap()).collect();
        assert_eq!(nums.len(), 4);
        assert!((nums[2] - 0.02).abs() < 1e-12);
        assert!((nums[3] - 0.2).abs() < 1e-12);
        assert!(t.contains("Accuracy: mean over reference points"));
    }

    #[test]
    fn summary_is_byte_stable() {
        let a = summary_csv(&file()).unwrap();
        let b = summary_csv(&StatsFile::from_json(&file().to_json().unwrap()).unwrap()).unwrap();
        assert_eq!(a, b);
        assert_eq!(points_csv(&file()), points_csv(&file()));
        assert_eq!(a.lines().count(), 1 + 2 * 4);
        assert!(a.lines().nth(3).unwrap().starts_with("Horizontal PD,combined,accuracy,"));
    }

    #[test]
    fn empty_inputs_are_errors() {
        assert!(table_text(&StatsFile { runs: vec![] }).is_err());
        let mut f = file();
        f.runs[0].sweeps[0].stats.points.clear();
        assert!(summary_csv(&f).is_err());
        let mut f = file();
        f.runs[1].sweeps.clear();
        assert!(table_text(&f).is_err());
        let mut f = file();
        f.runs[0].sweeps[0].stats.points.iter_mut().for_each(|p| p.solved = 0);
        assert!(f.validate().is_err());
        assert!(StatsFile::from_runs(&[]).is_err());
    }

    #[test]
    fn labels_are_quoted_when_needed() {
        assert_eq!(csv_text("a,b"), "\"a,b\"");
        assert_eq!(csv_text("plain"), "plain");
    }
}
