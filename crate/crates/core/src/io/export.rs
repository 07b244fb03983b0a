//! Single-layer exports for plotting.

use crate::error::{Error, Result};
use crate::grid::Layer;
use crate::io::fmt_f64;

/// One line per row (row 0 first), comma separated, `nan` where invalid.
pub fn export_csv(layer: &Layer) -> String {
    let mut s = String::new();
    for r in 0..layer.height {
        let row: Vec<String> = (0..layer.width)
            .map(|c| {
                let i = r * layer.width + c;
                fmt_f64(if layer.valid[i] { layer.values[i] } else { f64::NAN })
            })
            .collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

pub fn parse_csv_layer(text: &str) -> Result<Layer> {
    let mut values = Vec::new();
    let mut width = None;
    let mut height = 0;
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|_| Error::parse("csv", n + 1, format!("bad value `{t}`"))))
            .collect::<Result<_>>()?;
        if *width.get_or_insert(row.len()) != row.len() {
            return Err(Error::parse("csv", n + 1, "ragged row"));
        }
        values.extend(row);
        height += 1;
    }
    let width = width.unwrap_or(0);
    let valid = values.iter().map(|v| !v.is_nan()).collect();
    Ok(Layer::new(width, height, values, valid))
}

/// Binary 16-bit PGM. Valid cells map linearly onto `1..=65535` (a constant
/// layer becomes 32768); invalid cells are 0. The top image row is the
/// highest map row, so north is up.
pub fn export_pgm(layer: &Layer) -> Vec<u8> {
    let (lo, hi) = layer
        .values
        .iter()
        .zip(&layer.valid)
        .filter(|(_, v)| **v)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (x, _)| (lo.min(*x), hi.max(*x)));
    let level = |v: f64| -> u16 {
        if hi > lo {
            1 + ((v - lo) / (hi - lo) * 65534.0).round() as u16
        } else {
            32768
        }
    };
    let comment = if lo.is_finite() {
        format!("# scale: gray 1..65535 maps linearly to [{}, {}]; 0 = invalid", fmt_f64(lo), fmt_f64(hi))
    } else {
        "# scale: no valid cells; 0 = invalid".to_string()
    };
    let mut out = format!("P5\n{comment}\n{} {}\n65535\n", layer.width, layer.height).into_bytes();
    for r in (0..layer.height).rev() {
        for c in 0..layer.width {
            let i = r * layer.width + c;
            let g = if layer.valid[i] { level(layer.values[i]) } else { 0 };
            out.extend(g.to_be_bytes());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pixels(pgm: &[u8]) -> (String, Vec<u16>) {
        let mut newlines = 0;
        let mut k = 0;
        while newlines < 4 {
            if pgm[k] == b'\n' {
                newlines += 1;
            }
            k += 1;
        }
        let header = String::from_utf8(pgm[..k].to_vec()).unwrap();
        let px = pgm[k..].chunks(2).map(|b| u16::from_be_bytes([b[0], b[1]])).collect();
        (header, px)
    }

    #[test]
    fn constant_layer_is_one_gray_level() {
        let (header, px) = pixels(&export_pgm(&Layer::constant(4, 3, 0.7)));
        assert!(header.starts_with("P5\n# scale:") && header.contains("[0.7, 0.7]"));
        assert_eq!(px.len(), 12);
        assert!(px.iter().all(|g| *g == 32768));
    }

    #[test]
    fn ramp_spans_full_range_and_flips_rows() {
        let mut l = Layer::from_values(2, 2, vec![0.0, 1.0, 2.0, 3.0]);
        l.valid[1] = false;
        let (_, px) = pixels(&export_pgm(&l));
        // Image rows: map row 1 then map row 0.
        assert_eq!(px, vec![43690, 65535, 1, 0]);
    }

    #[test]
    fn csv_reimport_is_exact() {
        let mut l = Layer::from_values(3, 2, vec![0.1, -2.5, 1.0 / 7.0, 1e-12, 0.0, 4.0]);
        l.valid[4] = false;
        l.values[4] = f64::NAN;
        let back = parse_csv_layer(&export_csv(&l)).unwrap();
        assert_eq!((back.width, back.height), (3, 2));
        assert_eq!(back.valid, l.valid);
        for i in 0..6 {
            if l.valid[i] {
                assert_eq!(back.values[i].to_bits(), l.values[i].to_bits());
            }
        }
    }
}
