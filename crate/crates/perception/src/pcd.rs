//! ASCII PCD reading and writing (`FIELDS x y z`, `DATA ascii`).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::PcdError;
use crate::geometry::PointCloud;

pub fn to_string(cloud: &PointCloud) -> String {
    let n = cloud.points.len();
    let mut out = String::with_capacity(160 + n * 32);
    out.push_str("# .PCD v0.7 - Point Cloud Data file format\n");
    out.push_str("VERSION 0.7\nFIELDS x y z\nSIZE 8 8 8\nTYPE F F F\nCOUNT 1 1 1\n");
    let _ = writeln!(out, "WIDTH {n}\nHEIGHT 1\nVIEWPOINT 0 0 0 1 0 0 0\nPOINTS {n}\nDATA ascii");
    for p in &cloud.points {
        let _ = writeln!(out, "{} {} {}", p.x, p.y, p.z);
    }
    out
}

pub fn parse(text: &str, frame_id: &str) -> Result<PointCloud, PcdError> {
    let mut fields: Option<Vec<String>> = None;
    let mut declared: Option<usize> = None;
    let mut lines = text.lines().enumerate();
    let mut data_started = false;

    for (lineno, raw) in lines.by_ref() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let keyword = parts.next().unwrap_or_default();
        match keyword {
            "FIELDS" => fields = Some(parts.map(str::to_string).collect()),
            "POINTS" => {
                let v = parts.next().ok_or_else(|| PcdError::header(lineno + 1, "POINTS without a count"))?;
                declared = Some(v.parse().map_err(|_| PcdError::header(lineno + 1, "POINTS is not an integer"))?);
            }
            "DATA" => {
                let kind = parts.next().unwrap_or_default();
                if kind != "ascii" {
                    return Err(PcdError::header(lineno + 1, format!("unsupported DATA encoding `{kind}`")));
                }
                data_started = true;
                break;
            }
            "VERSION" | "SIZE" | "TYPE" | "COUNT" | "WIDTH" | "HEIGHT" | "VIEWPOINT" => {}
            other => return Err(PcdError::header(lineno + 1, format!("unknown header keyword `{other}`"))),
        }
    }
    if !data_started {
        return Err(PcdError::header(0, "missing DATA line"));
    }
    let fields = fields.ok_or_else(|| PcdError::header(0, "missing FIELDS line"))?;
    let col = |name: &str| {
        fields
            .iter()
            .position(|f| f == name)
            .ok_or_else(|| PcdError::header(0, format!("FIELDS lacks `{name}`")))
    };
    let (ix, iy, iz) = (col("x")?, col("y")?, col("z")?);

    let mut points = Vec::with_capacity(declared.unwrap_or(0));
    for (lineno, raw) in lines {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let values: Vec<&str> = line.split_whitespace().collect();
        if values.len() != fields.len() {
            return Err(PcdError::data(lineno + 1, format!("expected {} values, found {}", fields.len(), values.len())));
        }
        let get = |i: usize| -> Result<f64, PcdError> {
            let v: f64 = values[i]
                .parse()
                .map_err(|_| PcdError::data(lineno + 1, format!("`{}` is not a number", values[i])))?;
            if !v.is_finite() {
                return Err(PcdError::data(lineno + 1, "non-finite coordinate"));
            }
            Ok(v)
        };
        points.push(Vector3::new(get(ix)?, get(iy)?, get(iz)?));
    }
    if let Some(n) = declared {
        if n != points.len() {
            return Err(PcdError::data(0, format!("POINTS declares {n} but {} were read", points.len())));
        }
    }
    Ok(PointCloud::with_frame(points, frame_id))
}

pub fn read(path: &Path) -> Result<PointCloud, PcdError> {
    let text = fs::read_to_string(path).map_err(|e| PcdError::Io(path.display().to_string(), e))?;
    parse(&text, "map")
}

pub fn write(path: &Path, cloud: &PointCloud) -> Result<(), PcdError> {
    fs::write(path, to_string(cloud)).map_err(|e| PcdError::Io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_points_exactly() {
        let cloud = PointCloud::new(vec![
            Vector3::new(0.1, -2.5, 3.0),
            Vector3::new(1e-7, 123.456789012345, -0.0),
        ]);
        let back = parse(&to_string(&cloud), "map").unwrap();
        assert_eq!(back, cloud);
    }

    #[test]
    fn extra_fields_are_ignored() {
        let text = "FIELDS x y z intensity\nPOINTS 1\nDATA ascii\n1 2 3 0.5\n";
        let cloud = parse(text, "map").unwrap();
        assert_eq!(cloud.points, vec![Vector3::new(1.0, 2.0, 3.0)]);
    }

    #[test]
    fn count_mismatch_and_garbage_are_rejected() {
        assert!(parse("FIELDS x y z\nPOINTS 2\nDATA ascii\n1 2 3\n", "map").is_err());
        let err = parse("FIELDS x y z\nPOINTS 1\nDATA ascii\n1 nope 3\n", "map").unwrap_err();
        assert!(err.to_string().contains("line 4"), "{err}");
        assert!(parse("FIELDS x y z\nDATA binary\n", "map").is_err());
    }
}
