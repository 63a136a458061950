//! ASCII point-cloud file I/O: PLY, PCD, and CSV/XYZ subsets.
//!
//! All writers emit coordinates with 9 significant digits (scientific
//! notation), which round-trips metric coordinates well below 1e-7 absolute.
//! Sensor id and frame label are carried in comment lines where each format
//! allows them (`comment` in PLY, `#` in PCD and CSV); files without those
//! comments still parse, with empty labels.

use super::{CloudError, PointCloud};
use crate::se3::Vec3;
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    /// `ply` / `format ascii 1.0` / `element vertex N` / x,y,z float
    /// properties / `end_header`.
    PlyAscii,
    /// PCD v0.7 header with `FIELDS x y z` and `DATA ascii`.
    PcdAscii,
    /// One `x,y,z` triple per line, optional header row, `#` comments.
    XyzCsv,
}

impl CloudFormat {
    /// Guess from the file extension (`.ply`, `.pcd`, `.csv`/`.xyz`).
    pub fn from_extension(path: &Path) -> Result<Self, CloudError> {
        match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()) {
            Some(e) if e == "ply" => Ok(Self::PlyAscii),
            Some(e) if e == "pcd" => Ok(Self::PcdAscii),
            Some(e) if e == "csv" || e == "xyz" => Ok(Self::XyzCsv),
            other => Err(CloudError::UnsupportedFormat(format!(
                "cannot infer cloud format from extension {other:?}"
            ))),
        }
    }
}

fn fmt_coord(v: f64) -> String {
    format!("{v:.8e}")
}

pub fn write_cloud(cloud: &PointCloud, path: &Path, format: CloudFormat) -> Result<(), CloudError> {
    let mut out = String::new();
    match format {
        CloudFormat::PlyAscii => {
            out.push_str("ply\nformat ascii 1.0\n");
            let _ = writeln!(out, "comment sensor_id={}", cloud.sensor_id);
            let _ = writeln!(out, "comment frame={}", cloud.frame_label);
            let _ = writeln!(out, "element vertex {}", cloud.len());
            out.push_str("property float x\nproperty float y\nproperty float z\nend_header\n");
            for p in cloud.points() {
                let _ = writeln!(out, "{} {} {}", fmt_coord(p.x), fmt_coord(p.y), fmt_coord(p.z));
            }
        }
        CloudFormat::PcdAscii => {
            let _ = writeln!(out, "# sensor_id={}", cloud.sensor_id);
            let _ = writeln!(out, "# frame={}", cloud.frame_label);
            out.push_str("VERSION 0.7\nFIELDS x y z\nSIZE 4 4 4\nTYPE F F F\nCOUNT 1 1 1\n");
            let _ = writeln!(out, "WIDTH {}", cloud.len());
            out.push_str("HEIGHT 1\nVIEWPOINT 0 0 0 1 0 0 0\n");
            let _ = writeln!(out, "POINTS {}", cloud.len());
            out.push_str("DATA ascii\n");
            for p in cloud.points() {
                let _ = writeln!(out, "{} {} {}", fmt_coord(p.x), fmt_coord(p.y), fmt_coord(p.z));
            }
        }
        CloudFormat::XyzCsv => {
            let _ = writeln!(out, "# sensor_id={}", cloud.sensor_id);
            let _ = writeln!(out, "# frame={}", cloud.frame_label);
            out.push_str("x,y,z\n");
            for p in cloud.points() {
                let _ = writeln!(out, "{},{},{}", fmt_coord(p.x), fmt_coord(p.y), fmt_coord(p.z));
            }
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_cloud(path: &Path, format: CloudFormat) -> Result<PointCloud, CloudError> {
    let text = std::fs::read_to_string(path)?;
    match format {
        CloudFormat::PlyAscii => parse_ply(&text),
        CloudFormat::PcdAscii => parse_pcd(&text),
        CloudFormat::XyzCsv => parse_csv(&text),
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> CloudError {
    CloudError::Parse { line, message: message.into() }
}

fn parse_float(token: &str, line: usize) -> Result<f64, CloudError> {
    token
        .parse::<f64>()
        .map_err(|_| parse_err(line, format!("expected a number, got {token:?}")))
}

/// `key=value` metadata carried in a comment line.
fn comment_meta(rest: &str, sensor: &mut String, frame: &mut String) {
    if let Some(v) = rest.strip_prefix("sensor_id=") {
        *sensor = v.trim().to_string();
    } else if let Some(v) = rest.strip_prefix("frame=") {
        *frame = v.trim().to_string();
    }
}

fn parse_ply(text: &str) -> Result<PointCloud, CloudError> {
    let mut lines = text.lines().enumerate();
    let (_, first) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    if first.trim() != "ply" {
        return Err(parse_err(1, "missing 'ply' magic line"));
    }
    let mut vertex_count: Option<usize> = None;
    let mut properties: Vec<String> = Vec::new();
    let mut sensor = String::new();
    let mut frame = String::new();
    let mut saw_format = false;
    let mut header_end = 0usize;
    for (i, raw) in &mut lines {
        let line_no = i + 1;
        let line = raw.trim();
        if line == "end_header" {
            header_end = line_no;
            break;
        }
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("format") => {
                let rest: Vec<&str> = tokens.collect();
                if rest != ["ascii", "1.0"] {
                    return Err(CloudError::UnsupportedFormat(format!(
                        "only 'format ascii 1.0' is supported (line {line_no})"
                    )));
                }
                saw_format = true;
            }
            Some("comment") => {
                comment_meta(line.trim_start_matches("comment").trim(), &mut sensor, &mut frame);
            }
            Some("element") => match (tokens.next(), tokens.next()) {
                (Some("vertex"), Some(n)) => {
                    vertex_count = Some(
                        n.parse()
                            .map_err(|_| parse_err(line_no, format!("bad vertex count {n:?}")))?,
                    );
                }
                (Some(other), _) => {
                    return Err(CloudError::UnsupportedFormat(format!(
                        "unsupported element {other:?} (line {line_no})"
                    )));
                }
                _ => return Err(parse_err(line_no, "malformed element line")),
            },
            Some("property") => match (tokens.next(), tokens.next()) {
                (Some(ty), Some(name))
                    if matches!(ty, "float" | "double" | "float32" | "float64") =>
                {
                    properties.push(name.to_string());
                }
                _ => {
                    return Err(CloudError::UnsupportedFormat(format!(
                        "unsupported property line {line_no}: {line:?}"
                    )));
                }
            },
            Some(other) => {
                return Err(parse_err(line_no, format!("unexpected header keyword {other:?}")));
            }
            None => {}
        }
    }
    if header_end == 0 {
        return Err(parse_err(text.lines().count(), "missing end_header"));
    }
    if !saw_format {
        return Err(parse_err(header_end, "missing format line"));
    }
    if properties != ["x", "y", "z"] {
        return Err(CloudError::UnsupportedFormat(format!(
            "need exactly x, y, z float properties, got {properties:?}"
        )));
    }
    let count = vertex_count.ok_or_else(|| parse_err(header_end, "missing 'element vertex'"))?;

    let mut points = Vec::with_capacity(count);
    for (i, raw) in lines {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let x = parse_float(tokens.next().unwrap_or(""), line_no)?;
        let y = parse_float(tokens.next().unwrap_or(""), line_no)?;
        let z = parse_float(tokens.next().unwrap_or(""), line_no)?;
        if tokens.next().is_some() {
            return Err(parse_err(line_no, "more than 3 values on a vertex line"));
        }
        points.push(Vec3::new(x, y, z));
    }
    if points.len() != count {
        return Err(parse_err(
            text.lines().count(),
            format!("header promised {count} vertices, found {}", points.len()),
        ));
    }
    PointCloud::new(points, sensor, frame)
}

fn parse_pcd(text: &str) -> Result<PointCloud, CloudError> {
    let mut sensor = String::new();
    let mut frame = String::new();
    let mut fields_ok = false;
    let mut count: Option<usize> = None;
    let mut width: Option<usize> = None;
    let mut height: usize = 1;
    let mut data_line = 0usize;
    let mut lines = text.lines().enumerate();
    for (i, raw) in &mut lines {
        let line_no = i + 1;
        let line = raw.trim();
        if let Some(rest) = line.strip_prefix('#') {
            comment_meta(rest.trim(), &mut sensor, &mut frame);
            continue;
        }
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("FIELDS") => {
                let rest: Vec<&str> = tokens.collect();
                if rest != ["x", "y", "z"] {
                    return Err(CloudError::UnsupportedFormat(format!(
                        "need 'FIELDS x y z', got {rest:?} (line {line_no})"
                    )));
                }
                fields_ok = true;
            }
            Some("POINTS") => {
                let n = tokens.next().ok_or_else(|| parse_err(line_no, "missing POINTS value"))?;
                count = Some(
                    n.parse().map_err(|_| parse_err(line_no, format!("bad POINTS value {n:?}")))?,
                );
            }
            Some("WIDTH") => {
                let n = tokens.next().ok_or_else(|| parse_err(line_no, "missing WIDTH value"))?;
                width = Some(
                    n.parse().map_err(|_| parse_err(line_no, format!("bad WIDTH value {n:?}")))?,
                );
            }
            Some("HEIGHT") => {
                let n = tokens.next().ok_or_else(|| parse_err(line_no, "missing HEIGHT value"))?;
                height = n
                    .parse()
                    .map_err(|_| parse_err(line_no, format!("bad HEIGHT value {n:?}")))?;
            }
            Some("DATA") => {
                match tokens.next() {
                    Some("ascii") => {}
                    other => {
                        return Err(CloudError::UnsupportedFormat(format!(
                            "only 'DATA ascii' is supported, got {other:?} (line {line_no})"
                        )));
                    }
                }
                data_line = line_no;
                break;
            }
            // VERSION, SIZE, TYPE, COUNT, VIEWPOINT: accepted and ignored.
            Some(_) => {}
            None => {}
        }
    }
    if data_line == 0 {
        return Err(parse_err(text.lines().count(), "missing 'DATA ascii' line"));
    }
    if !fields_ok {
        return Err(parse_err(data_line, "missing 'FIELDS x y z' before DATA"));
    }
    let expected = count.or(width.map(|w| w * height));

    let mut points = Vec::new();
    for (i, raw) in lines {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let x = parse_float(tokens.next().unwrap_or(""), line_no)?;
        let y = parse_float(tokens.next().unwrap_or(""), line_no)?;
        let z = parse_float(tokens.next().unwrap_or(""), line_no)?;
        points.push(Vec3::new(x, y, z));
    }
    if let Some(n) = expected {
        if points.len() != n {
            return Err(parse_err(
                text.lines().count(),
                format!("header promised {n} points, found {}", points.len()),
            ));
        }
    }
    PointCloud::new(points, sensor, frame)
}

fn parse_csv(text: &str) -> Result<PointCloud, CloudError> {
    let mut sensor = String::new();
    let mut frame = String::new();
    let mut points = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            comment_meta(rest.trim(), &mut sensor, &mut frame);
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(|c| c.trim()).collect();
        if cells.len() != 3 {
            return Err(parse_err(line_no, format!("expected 3 comma-separated values, got {}", cells.len())));
        }
        // An optional header row is allowed anywhere a number is not.
        if cells[0].parse::<f64>().is_err() {
            let lowered: Vec<String> = cells.iter().map(|c| c.to_ascii_lowercase()).collect();
            if lowered == ["x", "y", "z"] {
                continue;
            }
            return Err(parse_err(line_no, format!("expected a number, got {:?}", cells[0])));
        }
        let x = parse_float(cells[0], line_no)?;
        let y = parse_float(cells[1], line_no)?;
        let z = parse_float(cells[2], line_no)?;
        points.push(Vec3::new(x, y, z));
    }
    PointCloud::new(points, sensor, frame)
}
