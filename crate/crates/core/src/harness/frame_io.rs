//! Scan-frame files: comma-separated records tagged by their first field.
//!
//! ```text
//! # S,scan_id,timestamp_s
//! # G,scan_id,yaw_deg,tilt_deg,roll_deg,x_m,y_m,z_m
//! # B,scan_id,channel,azimuth_index,azimuth_deg,omega_deg,range_m,reflectivity
//! # D,scan_id,pd_id,noise_floor_v,elements
//! # P,scan_id,pd_id,time_s,v...
//! ```
//!
//! `S` opens a scan, `G` (optional) carries its ground-truth pose, `B` is one
//! LiDAR return, `D` declares a PD record with its sampled element indices
//! (separated by `;`) and each `P` adds one pulse of peak voltages to the
//! latest `D` of that PD. Lines starting with `#` and blank lines are ignored.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use crate::afe::{PdSample, PdSignalRecord};
use crate::error::{Error, Result};
use crate::geometry::{PolarBeam, Pose6DOF};
use crate::scene_sim::ScanFrame;

pub const HEADER: &str = "\
# pdtarget scan frames v1
# S,scan_id,timestamp_s
# G,scan_id,yaw_deg,tilt_deg,roll_deg,x_m,y_m,z_m
# B,scan_id,channel,azimuth_index,azimuth_deg,omega_deg,range_m,reflectivity
# D,scan_id,pd_id,noise_floor_v,elements
# P,scan_id,pd_id,time_s,v...
";

fn fields(tag: &str) -> &'static [&'static str] {
    match tag {
        "S" => &["tag", "scan_id", "timestamp_s"],
        "G" => &["tag", "scan_id", "yaw_deg", "tilt_deg", "roll_deg", "x_m", "y_m", "z_m"],
        "B" => &["tag", "scan_id", "channel", "azimuth_index", "azimuth_deg", "omega_deg", "range_m", "reflectivity"],
        "D" => &["tag", "scan_id", "pd_id", "noise_floor_v", "elements"],
        "P" => &["tag", "scan_id", "pd_id", "time_s"],
        _ => &[],
    }
}

/// Serialize frames. Output depends only on the frames, so equal inputs give
/// byte-identical files.
pub fn write_frames<W: Write>(mut w: W, frames: &[ScanFrame]) -> Result<()> {
    let mut s = String::from(HEADER);
    for f in frames {
        let id = f.scan_id;
        writeln!(s, "S,{id},{}", f.timestamp).unwrap();
        if let Some(g) = &f.ground_truth {
            writeln!(
                s,
                "G,{id},{},{},{},{},{},{}",
                g.yaw.to_degrees(),
                g.tilt.to_degrees(),
                g.roll.to_degrees(),
                g.x,
                g.y,
                g.z
            )
            .unwrap();
        }
        for b in &f.beams {
            writeln!(
                s,
                "B,{id},{},{},{},{},{},{}",
                b.channel,
                b.azimuth_index,
                b.alpha.to_degrees(),
                b.omega.to_degrees(),
                b.range,
                b.reflectivity
            )
            .unwrap();
        }
        for r in &f.pd_records {
            let elements: Vec<String> = r.sampled_elements.iter().map(|e| e.to_string()).collect();
            writeln!(s, "D,{id},{},{},{}", r.pd_id, r.noise_floor, elements.join(";")).unwrap();
            for p in &r.samples {
                write!(s, "P,{id},{},{}", r.pd_id, p.time).unwrap();
                for v in &p.voltages {
                    write!(s, ",{v}").unwrap();
                }
                s.push('\n');
            }
        }
    }
    w.write_all(s.as_bytes())?;
    Ok(())
}

pub fn save_frames(path: &Path, frames: &[ScanFrame]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_frames(std::io::BufWriter::new(file), frames)
}

pub fn load_frames(path: &Path) -> Result<Vec<ScanFrame>> {
    let file = std::fs::File::open(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    read_frames(std::io::BufReader::new(file), &path.display().to_string())
}

struct Line<'a> {
    origin: &'a str,
    number: usize,
    tag: &'static str,
    cols: Vec<&'a str>,
}

impl<'a> Line<'a> {
    fn error(&self, index: usize, message: impl Into<String>) -> Error {
        let names = fields(self.tag);
        let field = match names.get(index) {
            Some(n) => n.to_string(),
            None if self.tag == "P" => format!("v{}", index - names.len()),
            None => format!("column {}", index + 1),
        };
        Error::Parse {
            path: self.origin.to_string(),
            line: self.number,
            field,
            message: message.into(),
        }
    }

    fn get<T: std::str::FromStr>(&self, index: usize) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.cols.get(index).ok_or_else(|| self.error(index, "missing"))?;
        raw.trim().parse::<T>().map_err(|e| self.error(index, format!("`{raw}`: {e}")))
    }

    fn float(&self, index: usize) -> Result<f64> {
        let v: f64 = self.get(index)?;
        if !v.is_finite() {
            return Err(self.error(index, "not finite"));
        }
        Ok(v)
    }
}

/// Parse frames written by [`write_frames`]. Errors name the line and field.
pub fn read_frames<R: BufRead>(reader: R, origin: &str) -> Result<Vec<ScanFrame>> {
    let mut frames: Vec<ScanFrame> = Vec::new();
    let mut by_id: HashMap<u64, usize> = HashMap::new();

    for (i, text) in reader.lines().enumerate() {
        let text = text?;
        let trimmed = text.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = trimmed.split(',').collect();
        let tag = match cols[0].trim() {
            "S" => "S",
            "G" => "G",
            "B" => "B",
            "D" => "D",
            "P" => "P",
            other => {
                return Err(Error::Parse {
                    path: origin.to_string(),
                    line: i + 1,
                    field: "tag".into(),
                    message: format!("unknown record type `{other}`"),
                })
            }
        };
        let line = Line {
            origin,
            number: i + 1,
            tag,
            cols,
        };
        let expected = fields(tag).len();
        let too_many = match tag {
            "P" => line.cols.len() == expected,
            _ => line.cols.len() > expected,
        };
        if too_many {
            let msg = if tag == "P" { "no voltages" } else { "unexpected extra column" };
            return Err(line.error(line.cols.len().min(expected), msg));
        }

        let scan_id: u64 = line.get(1)?;
        if tag == "S" {
            if by_id.contains_key(&scan_id) {
                return Err(line.error(1, format!("scan {scan_id} declared twice")));
            }
            by_id.insert(scan_id, frames.len());
            frames.push(ScanFrame {
                scan_id,
                timestamp: line.float(2)?,
                beams: Vec::new(),
                pd_records: Vec::new(),
                ground_truth: None,
                truth: None,
            });
            continue;
        }
        let Some(&k) = by_id.get(&scan_id) else {
            return Err(line.error(1, format!("scan {scan_id} has no preceding S record")));
        };
        let frame = &mut frames[k];
        match tag {
            "G" => {
                let v: Vec<f64> = (2..8).map(|c| line.float(c)).collect::<Result<_>>()?;
                frame.ground_truth = Some(Pose6DOF::new(v[0].to_radians(), v[1].to_radians(), v[2].to_radians(), v[3], v[4], v[5]));
            }
            "B" => {
                let range = line.float(6)?;
                if range < 0.0 {
                    return Err(line.error(6, "negative range"));
                }
                frame.beams.push(PolarBeam {
                    channel: line.get(2)?,
                    azimuth_index: line.get(3)?,
                    alpha: line.float(4)?.to_radians(),
                    omega: line.float(5)?.to_radians(),
                    range,
                    reflectivity: line.get(7)?,
                });
            }
            "D" => {
                let pd_id: usize = line.get(2)?;
                let elements = line.cols.get(4).ok_or_else(|| line.error(4, "missing"))?;
                let sampled_elements = elements
                    .split(';')
                    .map(|e| e.trim().parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| line.error(4, format!("`{elements}`: {e}")))?;
                frame.pd_records.push(PdSignalRecord {
                    pd_id,
                    scan_id,
                    sampled_elements,
                    samples: Vec::new(),
                    noise_floor: line.float(3)?,
                });
            }
            "P" => {
                let pd_id: usize = line.get(2)?;
                let time = line.float(3)?;
                let voltages: Vec<f64> = (4..line.cols.len()).map(|c| line.float(c)).collect::<Result<_>>()?;
                let Some(rec) = frame.pd_records.iter_mut().rev().find(|r| r.pd_id == pd_id) else {
                    return Err(line.error(2, format!("PD {pd_id} has no preceding D record in scan {scan_id}")));
                };
                if voltages.len() != rec.sampled_elements.len() {
                    return Err(line.error(4, format!("{} voltages for {} sampled elements", voltages.len(), rec.sampled_elements.len())));
                }
                rec.samples.push(PdSample { time, voltages });
            }
            _ => unreachable!(),
        }
    }
    Ok(frames)
}
