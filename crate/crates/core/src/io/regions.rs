//! Planar-region documents.
//!
//! ```text
//! region 0 cells 412
//! plane 0.0 0.0 1.0 0.15
//! outer:
//! 0.0 0.0
//! ...
//! hole:
//! ...
//! ```
//!
//! Regions are separated by a blank line.

use crate::io::fmt_f64;
use crate::postprocess::PlanarRegion;

pub fn regions_to_text(regions: &[PlanarRegion]) -> String {
    let mut s = String::new();
    for (k, r) in regions.iter().enumerate() {
        if k > 0 {
            s.push('\n');
        }
        let n = r.plane.normal;
        s.push_str(&format!("region {k} cells {}\n", r.cell_count));
        s.push_str(&format!(
            "plane {} {} {} {}\n",
            fmt_f64(n[0]),
            fmt_f64(n[1]),
            fmt_f64(n[2]),
            fmt_f64(r.plane.offset)
        ));
        let mut poly = |tag: &str, pts: &[[f64; 2]]| {
            s.push_str(tag);
            s.push('\n');
            for p in pts {
                s.push_str(&format!("{} {}\n", fmt_f64(p[0]), fmt_f64(p[1])));
            }
        };
        poly("outer:", &r.outer);
        for h in &r.holes {
            poly("hole:", h);
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::postprocess::Plane;

    #[test]
    fn document_layout() {
        let r = PlanarRegion {
            plane: Plane {
                normal: [0.0, 0.0, 1.0],
                offset: 0.15,
            },
            outer: vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
            holes: vec![vec![[0.2, 0.2], [0.2, 0.4], [0.4, 0.4], [0.4, 0.2]]],
            cell_count: 96,
            cells: vec![],
            rms: 0.0,
        };
        let text = regions_to_text(&[r.clone(), r]);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "region 0 cells 96");
        assert_eq!(lines[1], "plane 0.0 0.0 1.0 0.15");
        assert_eq!(lines[2], "outer:");
        assert_eq!(lines[7], "hole:");
        assert_eq!(lines[12], "");
        assert_eq!(lines[13], "region 1 cells 96");
    }
}
