//! Point clouds as `x,y,z` CSV and their pose sidecars
//! (`time,tx,ty,tz,qw,qx,qy,qz`).

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::io::{fmt_f64, read_text, write_text};
use crate::sensing::{Point, RigidTransform};

/// `scan_0001.csv` → `scan_0001.pose.csv`.
pub fn sidecar_path(cloud: &Path) -> PathBuf {
    let stem = cloud.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    cloud.with_file_name(format!("{stem}.pose.csv"))
}

fn parse_rows<const N: usize>(text: &str, header: &str, source: &str) -> Result<Vec<[f64; N]>> {
    let mut rows = Vec::new();
    let mut lines = text.lines().enumerate().map(|(k, l)| (k + 1, l.trim()));
    match lines.next() {
        Some((_, h)) if h.replace(' ', "") == header => {}
        Some((n, h)) => return Err(Error::parse(source, n, format!("expected header `{header}`, found `{h}`"))),
        None => return Err(Error::parse(source, 1, format!("missing header `{header}`"))),
    }
    for (n, l) in lines {
        if l.is_empty() {
            continue;
        }
        let fields: Vec<&str> = l.split(',').map(str::trim).collect();
        if fields.len() != N {
            return Err(Error::parse(source, n, format!("expected {N} fields, found {}", fields.len())));
        }
        let mut row = [0.0; N];
        for (k, f) in fields.iter().enumerate() {
            row[k] = f
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::parse(source, n, format!("bad number `{f}`")))?;
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn read_cloud_csv(path: &Path) -> Result<Vec<Point>> {
    parse_rows::<3>(&read_text(path)?, "x,y,z", &path.display().to_string())
}

pub fn write_cloud_csv(path: &Path, points: &[Point]) -> Result<()> {
    let mut s = String::from("x,y,z\n");
    for p in points {
        s.push_str(&format!("{},{},{}\n", fmt_f64(p[0]), fmt_f64(p[1]), fmt_f64(p[2])));
    }
    write_text(path, &s)
}

/// Reads the single pose row of a sidecar.
pub fn read_pose_csv(path: &Path) -> Result<(f64, RigidTransform)> {
    let source = path.display().to_string();
    let rows = parse_rows::<8>(&read_text(path)?, "time,tx,ty,tz,qw,qx,qy,qz", &source)?;
    let [r] = rows.as_slice() else {
        return Err(Error::parse(source, 2, format!("expected exactly one pose row, found {}", rows.len())));
    };
    let pose = RigidTransform::from_quaternion([r[1], r[2], r[3]], r[4], r[5], r[6], r[7])
        .map_err(|e| Error::parse(&source, 2, e.to_string()))?;
    Ok((r[0], pose))
}

pub fn write_pose_csv(path: &Path, time: f64, pose: &RigidTransform) -> Result<()> {
    let t = &pose.translation;
    let q = pose.quaternion();
    let vals: Vec<String> = [time, t.x, t.y, t.z, q[0], q[1], q[2], q[3]].iter().map(|v| fmt_f64(*v)).collect();
    write_text(path, &format!("time,tx,ty,tz,qw,qx,qy,qz\n{}\n", vals.join(",")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cloud_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        let pts = vec![[0.1, -2.0, 1.0 / 3.0], [1e-9, 0.0, -0.0]];
        write_cloud_csv(&p, &pts).unwrap();
        let back = read_cloud_csv(&p).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in pts.iter().zip(&back) {
            for k in 0..3 {
                assert_eq!(a[k].to_bits(), b[k].to_bits());
            }
        }
    }

    #[test]
    fn pose_round_trip_and_sidecar_name() {
        let dir = tempfile::tempdir().unwrap();
        let cloud = dir.path().join("scan_0003.csv");
        let side = sidecar_path(&cloud);
        assert_eq!(side.file_name().unwrap(), "scan_0003.pose.csv");
        let pose = RigidTransform::from_xyz_ypr([1.0, 2.0, 0.5], 0.7, 0.1, -0.2);
        write_pose_csv(&side, 1.5, &pose).unwrap();
        let (t, back) = read_pose_csv(&side).unwrap();
        assert_eq!(t, 1.5);
        assert!((back.rotation - pose.rotation).norm() < 1e-12);
        assert_eq!(back.translation, pose.translation);
    }

    #[test]
    fn unnormalized_quaternion_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.pose.csv");
        std::fs::write(&p, "time,tx,ty,tz,qw,qx,qy,qz\n0,0,0,0,1.01,0,0,0\n").unwrap();
        assert!(matches!(read_pose_csv(&p), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn malformed_rows_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        std::fs::write(&p, "x,y,z\n1,2,3\n1,2\n").unwrap();
        let e = read_cloud_csv(&p).unwrap_err().to_string();
        assert!(e.contains(":3:"), "{e}");
        std::fs::write(&p, "a,b,c\n").unwrap();
        assert!(read_cloud_csv(&p).is_err());
    }
}
