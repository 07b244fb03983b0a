//! Layered 2.5D grid storage.
//!
//! Cells are stored row-major. Columns advance along world +x and rows along
//! world +y, so cell `(row, col)` covers
//! `[origin.x + col·res, origin.x + (col+1)·res) × [origin.y + row·res, ...)`
//! where `origin = center − extent/2`.
//!
//! Invalid cells carry `NaN` in every height-like layer in addition to the
//! explicit validity flags; kernels branch on the flags, the sentinel only
//! exists so snapshots can write `nan` literally.

use crate::error::{Error, Result};

/// Geometry of a fixed-size, robot-centric grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub resolution: f64,
    pub width: usize,
    pub height: usize,
    pub center: [f64; 2],
}

/// Row/column address of a cell. Only constructed in range.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellIndex {
    pub row: usize,
    pub col: usize,
}

impl CellIndex {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

impl GridSpec {
    pub fn new(resolution: f64, width: usize, height: usize, center: [f64; 2]) -> Result<Self> {
        if !(resolution > 0.0) || !resolution.is_finite() {
            return Err(Error::InvalidParam(format!(
                "grid resolution must be positive, got {resolution}"
            )));
        }
        if width < 3 || height < 3 {
            return Err(Error::InvalidParam(format!(
                "grid must be at least 3x3 cells, got {width}x{height}"
            )));
        }
        if !center[0].is_finite() || !center[1].is_finite() {
            return Err(Error::InvalidParam("grid center must be finite".into()));
        }
        Ok(Self {
            resolution,
            width,
            height,
            center,
        })
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Physical size in meters, `[x, y]`.
    pub fn extent(&self) -> [f64; 2] {
        [
            self.width as f64 * self.resolution,
            self.height as f64 * self.resolution,
        ]
    }

    /// World position of the lower-left corner of cell `(0, 0)`.
    pub fn origin(&self) -> [f64; 2] {
        let [ex, ey] = self.extent();
        [self.center[0] - ex / 2.0, self.center[1] - ey / 2.0]
    }

    /// Continuous cell coordinates `[col, row]` of a world point (no bounds check).
    pub fn cell_coords(&self, x: f64, y: f64) -> [f64; 2] {
        let [ox, oy] = self.origin();
        [(x - ox) / self.resolution, (y - oy) / self.resolution]
    }

    pub fn world_to_index(&self, x: f64, y: f64) -> Result<CellIndex> {
        self.try_index(x, y).ok_or(Error::OutOfMap { x, y })
    }

    /// Like [`world_to_index`](Self::world_to_index) but without building an error.
    pub fn try_index(&self, x: f64, y: f64) -> Option<CellIndex> {
        let [fc, fr] = self.cell_coords(x, y);
        if !(fc >= 0.0 && fr >= 0.0) {
            return None;
        }
        let (col, row) = (fc.floor() as usize, fr.floor() as usize);
        (col < self.width && row < self.height).then_some(CellIndex { row, col })
    }

    /// World xy of the cell center.
    pub fn index_to_world(&self, idx: CellIndex) -> [f64; 2] {
        let [ox, oy] = self.origin();
        [
            ox + (idx.col as f64 + 0.5) * self.resolution,
            oy + (idx.row as f64 + 0.5) * self.resolution,
        ]
    }

    #[inline]
    pub fn flat(&self, idx: CellIndex) -> usize {
        idx.row * self.width + idx.col
    }

    #[inline]
    pub fn unflat(&self, i: usize) -> CellIndex {
        CellIndex {
            row: i / self.width,
            col: i % self.width,
        }
    }

    /// Flat index of the cell containing `(x, y)`, if inside the map.
    #[inline]
    pub fn flat_at(&self, x: f64, y: f64) -> Option<usize> {
        self.try_index(x, y).map(|i| self.flat(i))
    }
}

/// Whole-cell translation applied by [`ElevationMap::recenter`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ShiftReport {
    pub cols: i64,
    pub rows: i64,
}

impl ShiftReport {
    pub fn is_zero(&self) -> bool {
        self.cols == 0 && self.rows == 0
    }
}

/// Parameters of the constant time-variance growth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VarianceGrowth {
    /// Variance added per nominal update period, m².
    pub time_variance: f64,
    /// Cap, m².
    pub max_variance: f64,
    /// Seconds.
    pub nominal_period: f64,
}

/// A single scalar layer with its validity mask, detached from the map.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

impl Layer {
    pub fn new(width: usize, height: usize, values: Vec<f64>, valid: Vec<bool>) -> Self {
        assert_eq!(values.len(), width * height);
        assert_eq!(valid.len(), width * height);
        Self {
            width,
            height,
            values,
            valid,
        }
    }

    /// A fully valid layer.
    pub fn from_values(width: usize, height: usize, values: Vec<f64>) -> Self {
        let valid = vec![true; values.len()];
        Self::new(width, height, values, valid)
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        Self::from_values(width, height, vec![value; width * height])
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    #[inline]
    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.valid[row * self.width + col]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Names of the scalar layers that can be exported or persisted.
pub const LAYER_NAMES: [&str; 8] = [
    "elevation",
    "variance",
    "last_update",
    "upper_bound",
    "traversability",
    "normal_x",
    "normal_y",
    "normal_z",
];

/// Robot-centric layered elevation grid.
#[derive(Clone, Debug)]
pub struct ElevationMap {
    spec: GridSpec,
    pub elevation: Vec<f64>,
    pub variance: Vec<f64>,
    /// Seconds; `NaN` for cells never updated.
    pub last_update: Vec<f64>,
    /// Points that fell into each cell during the current scan.
    pub scan_point_count: Vec<u32>,
    pub upper_bound: Vec<f64>,
    pub upper_bound_valid: Vec<bool>,
    pub traversability: Vec<f64>,
    pub normal: Vec<[f64; 3]>,
    pub normal_valid: Vec<bool>,
    pub valid: Vec<bool>,
    /// Stamp of the most recent integrated scan.
    pub last_scan_time: Option<f64>,
}

impl ElevationMap {
    /// An all-invalid map.
    pub fn new(spec: GridSpec) -> Self {
        let n = spec.len();
        Self {
            spec,
            elevation: vec![f64::NAN; n],
            variance: vec![f64::NAN; n],
            last_update: vec![f64::NAN; n],
            scan_point_count: vec![0; n],
            upper_bound: vec![f64::NAN; n],
            upper_bound_valid: vec![false; n],
            traversability: vec![f64::NAN; n],
            normal: vec![[f64::NAN; 3]; n],
            normal_valid: vec![false; n],
            valid: vec![false; n],
            last_scan_time: None,
        }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.spec.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spec.is_empty()
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Writes a height estimate and marks the cell valid. The upper bound of an
    /// observed cell follows its estimate.
    pub fn set_estimate(&mut self, i: usize, height: f64, variance: f64, stamp: f64) {
        self.elevation[i] = height;
        self.variance[i] = variance;
        self.last_update[i] = stamp;
        self.valid[i] = true;
        self.upper_bound[i] = height;
        self.upper_bound_valid[i] = true;
    }

    /// Drops the height estimate of a cell. The upper bound is kept.
    pub fn invalidate(&mut self, i: usize) {
        self.elevation[i] = f64::NAN;
        self.variance[i] = f64::NAN;
        self.valid[i] = false;
        self.traversability[i] = f64::NAN;
        self.normal[i] = [f64::NAN; 3];
        self.normal_valid[i] = false;
    }

    pub fn clear_upper_bound(&mut self, i: usize) {
        self.upper_bound[i] = f64::NAN;
        self.upper_bound_valid[i] = false;
    }

    /// Moves the map center towards `new_center` by a whole number of cells.
    ///
    /// Each axis moves only when the displacement reaches one full cell; the
    /// step is then the nearest integer cell count. Surviving cells keep their
    /// values bit-for-bit, exposed cells start invalid.
    pub fn recenter(&mut self, new_center: [f64; 2]) -> ShiftReport {
        let res = self.spec.resolution;
        let quantize = |d: f64| -> i64 {
            if d.abs() >= res {
                (d / res).round() as i64
            } else {
                0
            }
        };
        let shift = ShiftReport {
            cols: quantize(new_center[0] - self.spec.center[0]),
            rows: quantize(new_center[1] - self.spec.center[1]),
        };
        if shift.is_zero() {
            return shift;
        }
        self.spec.center[0] += shift.cols as f64 * res;
        self.spec.center[1] += shift.rows as f64 * res;

        let (w, h) = (self.spec.width, self.spec.height);
        let (dr, dc) = (shift.rows, shift.cols);
        shift_layer(&mut self.elevation, w, h, dr, dc, f64::NAN);
        shift_layer(&mut self.variance, w, h, dr, dc, f64::NAN);
        shift_layer(&mut self.last_update, w, h, dr, dc, f64::NAN);
        shift_layer(&mut self.scan_point_count, w, h, dr, dc, 0);
        shift_layer(&mut self.upper_bound, w, h, dr, dc, f64::NAN);
        shift_layer(&mut self.upper_bound_valid, w, h, dr, dc, false);
        shift_layer(&mut self.traversability, w, h, dr, dc, f64::NAN);
        shift_layer(&mut self.normal, w, h, dr, dc, [f64::NAN; 3]);
        shift_layer(&mut self.normal_valid, w, h, dr, dc, false);
        shift_layer(&mut self.valid, w, h, dr, dc, false);
        shift
    }

    /// Grows the variance of every valid cell by `time_variance` per nominal
    /// period elapsed, capped at `max_variance`.
    pub fn add_time_variance(&mut self, dt: f64, growth: &VarianceGrowth) {
        self.add_time_variance_where(dt, growth, |_| true);
    }

    /// Same as [`add_time_variance`](Self::add_time_variance), restricted to
    /// cells for which `apply` returns true.
    pub fn add_time_variance_where(
        &mut self,
        dt: f64,
        growth: &VarianceGrowth,
        apply: impl Fn(usize) -> bool,
    ) {
        if !(dt > 0.0) {
            return;
        }
        let added = growth.time_variance * dt / growth.nominal_period;
        for i in 0..self.variance.len() {
            if self.valid[i] && apply(i) {
                self.variance[i] = (self.variance[i] + added).min(growth.max_variance);
            }
        }
    }

    /// Adds `offset` to the elevation and upper-bound layers of every valid cell.
    pub fn shift_heights(&mut self, offset: f64) {
        if offset == 0.0 {
            return;
        }
        for i in 0..self.len() {
            if self.valid[i] {
                self.elevation[i] += offset;
            }
            if self.upper_bound_valid[i] {
                self.upper_bound[i] += offset;
            }
        }
    }

    pub fn elevation_layer(&self) -> Layer {
        Layer::new(
            self.spec.width,
            self.spec.height,
            self.elevation.clone(),
            self.valid.clone(),
        )
    }

    /// Extracts a named scalar layer. Invalid entries hold `NaN`.
    pub fn layer(&self, name: &str) -> Result<Layer> {
        let (w, h) = (self.spec.width, self.spec.height);
        let with = |values: Vec<f64>, valid: Vec<bool>| Ok(Layer::new(w, h, values, valid));
        match name {
            "elevation" => with(self.elevation.clone(), self.valid.clone()),
            "variance" => with(self.variance.clone(), self.valid.clone()),
            "last_update" => {
                let valid = self.last_update.iter().map(|t| !t.is_nan()).collect();
                with(self.last_update.clone(), valid)
            }
            "upper_bound" => with(self.upper_bound.clone(), self.upper_bound_valid.clone()),
            "traversability" => {
                let valid = self.traversability.iter().map(|t| !t.is_nan()).collect();
                with(self.traversability.clone(), valid)
            }
            "normal_x" | "normal_y" | "normal_z" => {
                let axis = match name {
                    "normal_x" => 0,
                    "normal_y" => 1,
                    _ => 2,
                };
                with(
                    self.normal.iter().map(|n| n[axis]).collect(),
                    self.normal_valid.clone(),
                )
            }
            _ => Err(Error::UnknownLayer {
                name: name.to_string(),
                available: LAYER_NAMES.join(", "),
            }),
        }
    }

    /// Overwrites a named layer from raw values (`NaN` = invalid) and rebuilds
    /// the matching validity flags.
    pub fn set_layer_raw(&mut self, name: &str, values: Vec<f64>) -> Result<()> {
        if values.len() != self.len() {
            return Err(Error::InvalidParam(format!(
                "layer `{name}` has {} values, map has {} cells",
                values.len(),
                self.len()
            )));
        }
        match name {
            "elevation" => {
                self.valid = values.iter().map(|v| !v.is_nan()).collect();
                self.elevation = values;
            }
            "variance" => self.variance = values,
            "last_update" => self.last_update = values,
            "upper_bound" => {
                self.upper_bound_valid = values.iter().map(|v| !v.is_nan()).collect();
                self.upper_bound = values;
            }
            "traversability" => self.traversability = values,
            "normal_x" | "normal_y" | "normal_z" => {
                let axis = match name {
                    "normal_x" => 0,
                    "normal_y" => 1,
                    _ => 2,
                };
                for (n, v) in self.normal.iter_mut().zip(values) {
                    n[axis] = v;
                }
                self.normal_valid = self.normal.iter().map(|n| n.iter().all(|c| !c.is_nan())).collect();
            }
            _ => {
                return Err(Error::UnknownLayer {
                    name: name.to_string(),
                    available: LAYER_NAMES.join(", "),
                })
            }
        }
        Ok(())
    }

    /// Raw values of a named layer, `NaN` where invalid.
    pub fn layer_raw(&self, name: &str) -> Result<Vec<f64>> {
        self.layer(name).map(|l| l.values)
    }
}

fn shift_layer<T: Copy>(data: &mut Vec<T>, width: usize, height: usize, dr: i64, dc: i64, fill: T) {
    let mut out = vec![fill; data.len()];
    let (w, h) = (width as i64, height as i64);
    // New cell (r, c) takes old cell (r + dr, c + dc).
    let c_lo = 0.max(-dc);
    let c_hi = w.min(w - dc);
    if c_lo < c_hi {
        for r in 0..h {
            let src_r = r + dr;
            if !(0..h).contains(&src_r) {
                continue;
            }
            let dst = (r * w + c_lo) as usize;
            let src = (src_r * w + c_lo + dc) as usize;
            let n = (c_hi - c_lo) as usize;
            out[dst..dst + n].copy_from_slice(&data[src..src + n]);
        }
    }
    *data = out;
}
