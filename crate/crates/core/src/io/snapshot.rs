//! Map snapshot files.
//!
//! ```text
//! reliefmap-snapshot v1
//! resolution: 0.04
//! width: 3
//! height: 2
//! center_x: 0.0
//! center_y: 0.0
//! layers: elevation, variance
//! layer: elevation
//! 0.1 0.2 nan        (row 0, lowest y)
//! 0.1 0.2 0.3        (row 1)
//! layer: variance
//! ...
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{ElevationMap, GridSpec, LAYER_NAMES};
use crate::io::{fmt_f64, read_text, write_text};

pub const SNAPSHOT_HEADER: &str = "reliefmap-snapshot v1";

pub fn snapshot_to_text(map: &ElevationMap) -> String {
    let spec = map.spec();
    let mut s = String::new();
    s.push_str(SNAPSHOT_HEADER);
    s.push('\n');
    s.push_str(&format!("resolution: {}\n", fmt_f64(spec.resolution)));
    s.push_str(&format!("width: {}\nheight: {}\n", spec.width, spec.height));
    s.push_str(&format!("center_x: {}\ncenter_y: {}\n", fmt_f64(spec.center[0]), fmt_f64(spec.center[1])));
    s.push_str(&format!("layers: {}\n", LAYER_NAMES.join(", ")));
    for name in LAYER_NAMES {
        s.push_str(&format!("layer: {name}\n"));
        let values = map.layer_raw(name).expect("known layer");
        for row in values.chunks(spec.width) {
            let cells: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
            s.push_str(&cells.join(" "));
            s.push('\n');
        }
    }
    s
}

pub fn save_snapshot(map: &ElevationMap, path: &Path) -> Result<()> {
    write_text(path, &snapshot_to_text(map))
}

pub fn load_snapshot(path: &Path) -> Result<ElevationMap> {
    parse_snapshot(&read_text(path)?, &path.display().to_string())
}

pub fn parse_snapshot(text: &str, source: &str) -> Result<ElevationMap> {
    let mut lines = text.lines().enumerate().map(|(k, l)| (k + 1, l.trim_end()));
    let err = |line: usize, msg: String| Error::parse(source, line, msg);
    let mut next = |what: &str| {
        lines
            .next()
            .ok_or_else(|| Error::parse(source, text.lines().count() + 1, format!("unexpected end of file, expected {what}")))
    };

    let (n, first) = next("header")?;
    if first != SNAPSHOT_HEADER {
        return Err(err(n, format!("expected `{SNAPSHOT_HEADER}`, found `{first}`")));
    }
    let mut field = |key: &str| -> Result<(usize, String)> {
        let (n, l) = next(&format!("`{key}:`"))?;
        let v = l
            .strip_prefix(key)
            .and_then(|r| r.strip_prefix(':'))
            .ok_or_else(|| Error::parse(source, n, format!("expected `{key}:`, found `{l}`")))?;
        Ok((n, v.trim().to_string()))
    };
    let num = |(n, v): (usize, String)| -> Result<f64> {
        v.parse::<f64>().map_err(|_| Error::parse(source, n, format!("bad number `{v}`")))
    };
    let int = |(n, v): (usize, String)| -> Result<usize> {
        v.parse::<usize>().map_err(|_| Error::parse(source, n, format!("bad integer `{v}`")))
    };
    let resolution = num(field("resolution")?)?;
    let width = int(field("width")?)?;
    let height = int(field("height")?)?;
    let cx = num(field("center_x")?)?;
    let cy = num(field("center_y")?)?;
    let (ln, layer_list) = field("layers")?;
    let spec = GridSpec::new(resolution, width, height, [cx, cy]).map_err(|e| err(ln, e.to_string()))?;
    let names: Vec<String> = layer_list
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    for name in &names {
        if !LAYER_NAMES.contains(&name.as_str()) {
            return Err(err(ln, format!("unknown layer `{name}` (available: {})", LAYER_NAMES.join(", "))));
        }
    }

    let mut map = ElevationMap::new(spec);
    for name in &names {
        let (n, l) = next(&format!("`layer: {name}`"))?;
        if l.strip_prefix("layer:").map(str::trim) != Some(name.as_str()) {
            return Err(err(n, format!("expected `layer: {name}`, found `{l}`")));
        }
        let mut values = Vec::with_capacity(spec.len());
        for _ in 0..height {
            let (n, row) = next(&format!("a row of layer `{name}`"))?;
            let before = values.len();
            for tok in row.split_whitespace() {
                values.push(tok.parse::<f64>().map_err(|_| err(n, format!("bad value `{tok}`")))?);
            }
            if values.len() - before != width {
                return Err(err(n, format!("expected {width} values, found {}", values.len() - before)));
            }
        }
        map.set_layer_raw(name, values)?;
    }
    if let Some((n, l)) = lines.find(|(_, l)| !l.trim().is_empty()) {
        return Err(err(n, format!("trailing content `{l}`")));
    }
    Ok(map)
}
