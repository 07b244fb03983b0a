//! Executor for small single-channel convolution stacks.
//!
//! Weight file format:
//!
//! ```text
//! layers: 2
//! input: elevation        (optional, defaults to elevation)
//! kernel: 3
//! 0 0 0
//! 0 1 0
//! 0 0 0
//! bias: 0.0
//! activation: relu
//! ...
//! ```

use std::collections::VecDeque;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::Layer;
use crate::{cell_map, ExecMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Identity => x,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Identity => "identity",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::InvalidModel(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    /// Odd kernel side length.
    pub size: usize,
    /// Row-major `size × size` weights; row 0 multiplies the lowest row offset.
    pub kernel: Vec<f64>,
    pub bias: f64,
    pub activation: Activation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvNetSpec {
    pub layers: Vec<ConvLayer>,
    /// Map layer fed to the first convolution.
    pub input: String,
}

impl ConvNetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidModel("model has no layers".into()));
        }
        for (k, l) in self.layers.iter().enumerate() {
            if l.size == 0 || l.size % 2 == 0 {
                return Err(Error::InvalidModel(format!(
                    "layer {k}: kernel size {} is not odd",
                    l.size
                )));
            }
            if l.kernel.len() != l.size * l.size {
                return Err(Error::InvalidModel(format!(
                    "layer {k}: expected {} weights, got {}",
                    l.size * l.size,
                    l.kernel.len()
                )));
            }
            if !l.bias.is_finite() || l.kernel.iter().any(|w| !w.is_finite()) {
                return Err(Error::InvalidModel(format!("layer {k}: non-finite weight")));
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(n, l)| (n + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
            .peekable();
        let bad = |line: usize, msg: String| Error::InvalidModel(format!("line {line}: {msg}"));

        let mut field = |key: &str| -> Result<(usize, String)> {
            let (n, l) = lines
                .next()
                .ok_or_else(|| Error::InvalidModel(format!("unexpected end of file, expected `{key}:`")))?;
            let rest = l
                .strip_prefix(key)
                .and_then(|r| r.trim_start().strip_prefix(':'))
                .ok_or_else(|| bad(n, format!("expected `{key}:`, found `{l}`")))?;
            Ok((n, rest.trim().to_string()))
        };

        let (n, count) = field("layers")?;
        let count: usize = count
            .parse()
            .map_err(|_| bad(n, format!("bad layer count `{count}`")))?;

        let mut input = "elevation".to_string();
        if let Some((_, l)) = lines.peek() {
            if let Some(rest) = l.strip_prefix("input") {
                if let Some(name) = rest.trim_start().strip_prefix(':') {
                    input = name.trim().to_string();
                    lines.next();
                }
            }
        }

        let mut take = |key: &str| -> Result<(usize, String)> {
            let (n, l) = lines
                .next()
                .ok_or_else(|| Error::InvalidModel(format!("unexpected end of file, expected `{key}`")))?;
            if key.is_empty() {
                return Ok((n, l.to_string()));
            }
            let rest = l
                .strip_prefix(key)
                .and_then(|r| r.trim_start().strip_prefix(':'))
                .ok_or_else(|| bad(n, format!("expected `{key}:`, found `{l}`")))?;
            Ok((n, rest.trim().to_string()))
        };

        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let (n, size) = take("kernel")?;
            let size: usize = size.parse().map_err(|_| bad(n, format!("bad kernel size `{size}`")))?;
            let mut kernel = Vec::with_capacity(size * size);
            for _ in 0..size {
                let (n, row) = take("")?;
                let vals: Vec<f64> = row
                    .split_whitespace()
                    .map(|t| t.parse::<f64>().map_err(|_| bad(n, format!("bad weight `{t}`"))))
                    .collect::<Result<_>>()?;
                if vals.len() != size {
                    return Err(bad(n, format!("expected {size} weights, got {}", vals.len())));
                }
                kernel.extend(vals);
            }
            let (n, bias) = take("bias")?;
            let bias: f64 = bias.parse().map_err(|_| bad(n, format!("bad bias `{bias}`")))?;
            let (_, act) = take("activation")?;
            layers.push(ConvLayer {
                size,
                kernel,
                bias,
                activation: act.parse()?,
            });
        }
        if let Some((n, l)) = lines.next() {
            return Err(bad(n, format!("trailing content `{l}`")));
        }
        let spec = ConvNetSpec { layers, input };
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("layers: {}\ninput: {}\n", self.layers.len(), self.input);
        for l in &self.layers {
            s.push_str(&format!("kernel: {}\n", l.size));
            for row in l.kernel.chunks(l.size) {
                let row: Vec<String> = row.iter().map(|w| format!("{w:?}")).collect();
                s.push_str(&row.join(" "));
                s.push('\n');
            }
            s.push_str(&format!("bias: {:?}\nactivation: {}\n", l.bias, l.activation.name()));
        }
        s
    }
}

/// Replaces invalid entries by the value of the nearest valid cell
/// (4-connected breadth-first order, row-major tie-break). An all-invalid
/// layer becomes all zeros.
pub fn fill_nearest_valid(layer: &Layer) -> Vec<f64> {
    let (w, h) = (layer.width, layer.height);
    let mut out = vec![0.0; w * h];
    let mut seen = vec![false; w * h];
    let mut queue = VecDeque::new();
    for i in 0..w * h {
        if layer.valid[i] {
            out[i] = layer.values[i];
            seen[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (r, c) = (i / w, i % w);
        let neighbors = [
            (r > 0).then(|| i - w),
            (c > 0).then(|| i - 1),
            (c + 1 < w).then(|| i + 1),
            (r + 1 < h).then(|| i + w),
        ];
        for j in neighbors.into_iter().flatten() {
            if !seen[j] {
                seen[j] = true;
                out[j] = out[i];
                queue.push_back(j);
            }
        }
    }
    out
}

/// One same-size convolution with border-replicate padding, bias and activation.
pub fn convolve(values: &[f64], width: usize, height: usize, layer: &ConvLayer, mode: ExecMode) -> Vec<f64> {
    let k = layer.size as i64;
    let half = k / 2;
    let (w, h) = (width as i64, height as i64);
    cell_map(values.len(), mode, |i| {
        let (r, c) = (i as i64 / w, i as i64 % w);
        let mut acc = 0.0;
        for kr in 0..k {
            let rr = (r + kr - half).clamp(0, h - 1);
            for kc in 0..k {
                let cc = (c + kc - half).clamp(0, w - 1);
                acc += layer.kernel[(kr * k + kc) as usize] * values[(rr * w + cc) as usize];
            }
        }
        layer.activation.apply(acc + layer.bias)
    })
}

/// Runs the whole stack on `input` and clamps the result to `[0, 1]`.
pub fn conv_filter_inference(input: &Layer, spec: &ConvNetSpec, mode: ExecMode) -> Result<Vec<f64>> {
    spec.validate()?;
    let mut values = fill_nearest_valid(input);
    for layer in &spec.layers {
        values = convolve(&values, input.width, input.height, layer, mode);
    }
    for v in &mut values {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(values)
}
