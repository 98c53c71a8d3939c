//! Dyadic geometry on the periodic unit cube and the sampled-function
//! substrate.
//!
//! The torus `[0,1)^d` is sampled at cell centers `(i + 1/2) / 2^L_j` on
//! each axis. Integrals are Riemann sums with cell weight `2^{-sum L_j}`.
//! Arrays are row-major with axis 0 slowest.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{LabError, Result};

/// Default bound on the number of grid points times vector components.
pub const DEFAULT_SAMPLE_BUDGET: usize = 1 << 23;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawGridSpec", into = "RawGridSpec")]
pub struct GridSpec {
    log_res: Vec<u32>,
    groups: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct RawGridSpec {
    log_res: Vec<u32>,
    #[serde(default)]
    groups: Vec<usize>,
}

impl TryFrom<RawGridSpec> for GridSpec {
    type Error = LabError;
    fn try_from(raw: RawGridSpec) -> Result<Self> {
        let groups = if raw.groups.is_empty() { vec![raw.log_res.len()] } else { raw.groups };
        GridSpec::new(raw.log_res, groups)
    }
}

impl From<GridSpec> for RawGridSpec {
    fn from(g: GridSpec) -> Self {
        RawGridSpec { log_res: g.log_res, groups: g.groups }
    }
}

impl GridSpec {
    /// `log_res[j]` is the base-2 log of the sample count on axis `j`;
    /// `groups` partitions the axes into consecutive blocks.
    pub fn new(log_res: Vec<u32>, groups: Vec<usize>) -> Result<Self> {
        Self::with_budget(log_res, groups, DEFAULT_SAMPLE_BUDGET)
    }

    pub fn with_budget(log_res: Vec<u32>, groups: Vec<usize>, budget: usize) -> Result<Self> {
        if log_res.is_empty() {
            return Err(LabError::Config("grid dimension must be positive".into()));
        }
        if let Some(l) = log_res.iter().find(|&&l| l < 2) {
            return Err(LabError::Config(format!("every axis needs L_j >= 2, got {l}")));
        }
        if groups.iter().sum::<usize>() != log_res.len() || groups.contains(&0) {
            return Err(LabError::Config(format!(
                "axis grouping {groups:?} does not partition {} axes",
                log_res.len()
            )));
        }
        let total: u32 = log_res.iter().sum();
        if total >= 63 || (1usize << total) > budget {
            return Err(LabError::Config(format!(
                "grid with 2^{total} samples exceeds the budget of {budget}"
            )));
        }
        Ok(GridSpec { log_res, groups })
    }

    /// `d` axes with `2^l` samples each, a single group.
    pub fn uniform(d: usize, l: u32) -> Result<Self> {
        Self::new(vec![l; d], vec![d])
    }

    pub fn dim(&self) -> usize {
        self.log_res.len()
    }

    pub fn log_res(&self) -> &[u32] {
        &self.log_res
    }

    pub fn groups(&self) -> &[usize] {
        &self.groups
    }

    pub fn shape(&self) -> Vec<usize> {
        self.log_res.iter().map(|&l| 1usize << l).collect()
    }

    pub fn len(&self) -> usize {
        1usize << self.log_res.iter().sum::<u32>()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cell_measure(&self) -> f64 {
        (-(self.log_res.iter().sum::<u32>() as f64)).exp2()
    }

    /// Finest dyadic cube scale resolvable on every axis.
    pub fn max_cube_scale(&self) -> u32 {
        *self.log_res.iter().min().unwrap()
    }

    /// The same grid with every axis refined by `2^by`.
    pub fn refined(&self, by: u32) -> Result<GridSpec> {
        GridSpec::new(self.log_res.iter().map(|l| l + by).collect(), self.groups.clone())
    }

    pub fn strides(&self) -> Vec<usize> {
        let shape = self.shape();
        let mut strides = vec![1; shape.len()];
        for j in (0..shape.len().saturating_sub(1)).rev() {
            strides[j] = strides[j + 1] * shape[j + 1];
        }
        strides
    }

    pub fn coords(&self, mut index: usize) -> Vec<usize> {
        let mut c = vec![0; self.dim()];
        for j in (0..self.dim()).rev() {
            let n = 1usize << self.log_res[j];
            c[j] = index % n;
            index /= n;
        }
        c
    }

    pub fn index(&self, coords: &[usize]) -> usize {
        coords
            .iter()
            .zip(&self.log_res)
            .fold(0, |acc, (&c, &l)| (acc << l) | c)
    }

    pub fn cell_center(&self, index: usize) -> Vec<f64> {
        self.coords(index)
            .iter()
            .zip(&self.log_res)
            .map(|(&c, &l)| (c as f64 + 0.5) / (1u64 << l) as f64)
            .collect()
    }

    /// All cell centers, row-major.
    pub fn cell_centers(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.cell_center(i)).collect()
    }

    pub fn resolves(&self, cube: &DyadicCube) -> bool {
        cube.dim() == self.dim() && cube.scale() <= self.max_cube_scale()
    }

    /// Per-axis half-open cell index ranges covered by `cube`.
    pub fn cube_ranges(&self, cube: &DyadicCube) -> Vec<(usize, usize)> {
        debug_assert!(self.resolves(cube));
        cube.pos
            .iter()
            .zip(&self.log_res)
            .map(|(&p, &l)| {
                let m = 1usize << (l - cube.scale);
                (p as usize * m, (p as usize + 1) * m)
            })
            .collect()
    }

    /// Call `f` with the flat index of every cell of `cube`.
    pub fn for_each_cell(&self, cube: &DyadicCube, mut f: impl FnMut(usize)) {
        let ranges = self.cube_ranges(cube);
        let strides = self.strides();
        let d = ranges.len();
        let last = ranges[d - 1];
        let mut idx: Vec<usize> = ranges.iter().map(|r| r.0).collect();
        loop {
            let base: usize = (0..d - 1).map(|j| idx[j] * strides[j]).sum();
            for c in last.0..last.1 {
                f(base + c);
            }
            // advance the outer odometer
            let mut j = d - 1;
            loop {
                if j == 0 {
                    return;
                }
                j -= 1;
                idx[j] += 1;
                if idx[j] < ranges[j].1 {
                    break;
                }
                idx[j] = ranges[j].0;
            }
        }
    }

    pub fn cube_cells(&self, cube: &DyadicCube) -> Vec<usize> {
        let mut out = Vec::new();
        self.for_each_cell(cube, |i| out.push(i));
        out
    }

    /// Number of grid cells in `cube`.
    pub fn cube_cell_count(&self, cube: &DyadicCube) -> usize {
        self.log_res.iter().map(|&l| 1usize << (l - cube.scale)).product()
    }

    /// The dyadic cube of scale `k` containing cell `index`.
    pub fn cube_of_cell(&self, index: usize, k: u32) -> DyadicCube {
        let pos = self
            .coords(index)
            .iter()
            .zip(&self.log_res)
            .map(|(&c, &l)| (c >> (l - k)) as u64)
            .collect();
        DyadicCube { scale: k, pos }
    }
}

/// Complex samples on a grid, optionally vector-valued.
///
/// Storage is component-major: component `v` (row-major over the vector
/// shape) occupies `values[v * n .. (v + 1) * n]` with `n` grid points.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    spec: GridSpec,
    vshape: Vec<usize>,
    values: Vec<Complex64>,
}

impl GridFunction {
    pub fn new(spec: GridSpec, vshape: Vec<usize>, values: Vec<Complex64>) -> Result<Self> {
        let ncomp: usize = vshape.iter().product();
        if vshape.contains(&0) {
            return Err(LabError::ShapeMismatch("vector index sets must be nonempty".into()));
        }
        if values.len() != ncomp * spec.len() {
            return Err(LabError::ShapeMismatch(format!(
                "{} values for grid of {} points x {} components",
                values.len(),
                spec.len(),
                ncomp
            )));
        }
        if values.len() > DEFAULT_SAMPLE_BUDGET {
            return Err(LabError::Config(format!(
                "{} samples exceed the budget of {DEFAULT_SAMPLE_BUDGET}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(LabError::Config(format!("non-finite sample at flat index {i}")));
        }
        Ok(GridFunction { spec, vshape, values })
    }

    pub fn zeros(spec: GridSpec, vshape: Vec<usize>) -> Self {
        let n = spec.len() * vshape.iter().product::<usize>();
        GridFunction { spec, vshape, values: vec![Complex64::default(); n] }
    }

    pub fn from_real(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        Self::new(spec, vec![], values.into_iter().map(|v| Complex64::new(v, 0.0)).collect())
    }

    /// Scalar real function sampled at cell centers.
    pub fn from_fn(spec: GridSpec, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let vals = (0..spec.len()).map(|i| f(&spec.cell_center(i))).collect();
        Self::from_real(spec, vals)
    }

    /// Stack scalar functions on the same grid into components of one
    /// function with the given vector shape.
    pub fn stack(parts: &[GridFunction], vshape: Vec<usize>) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| LabError::ShapeMismatch("cannot stack zero functions".into()))?;
        if vshape.iter().product::<usize>() != parts.len() {
            return Err(LabError::ShapeMismatch("vector shape does not match part count".into()));
        }
        let mut values = Vec::with_capacity(parts.len() * first.spec.len());
        for p in parts {
            if p.spec != first.spec || p.ncomp() != 1 {
                return Err(LabError::ShapeMismatch("stacked parts must be scalar on one grid".into()));
            }
            values.extend_from_slice(&p.values);
        }
        Self::new(first.spec.clone(), vshape, values)
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn vshape(&self) -> &[usize] {
        &self.vshape
    }

    pub fn ncomp(&self) -> usize {
        self.vshape.iter().product()
    }

    pub fn npoints(&self) -> usize {
        self.spec.len()
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn component(&self, c: usize) -> &[Complex64] {
        let n = self.npoints();
        &self.values[c * n..(c + 1) * n]
    }

    pub fn component_mut(&mut self, c: usize) -> &mut [Complex64] {
        let n = self.npoints();
        &mut self.values[c * n..(c + 1) * n]
    }

    /// Component `c` as a scalar function.
    pub fn component_function(&self, c: usize) -> GridFunction {
        GridFunction {
            spec: self.spec.clone(),
            vshape: vec![],
            values: self.component(c).to_vec(),
        }
    }

    pub fn same_shape(&self, other: &GridFunction) -> bool {
        self.spec == other.spec && self.vshape == other.vshape
    }

    pub fn check_same_shape(&self, other: &GridFunction) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(LabError::ShapeMismatch(format!(
                "grid {:?} x {:?} vs grid {:?} x {:?}",
                self.spec.log_res, self.vshape, other.spec.log_res, other.vshape
            )))
        }
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> GridFunction {
        GridFunction {
            spec: self.spec.clone(),
            vshape: self.vshape.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn abs(&self) -> GridFunction {
        self.map(|v| Complex64::new(v.norm(), 0.0))
    }

    pub fn scale(&self, s: Complex64) -> GridFunction {
        self.map(|v| v * s)
    }

    pub fn sub(&self, other: &GridFunction) -> Result<GridFunction> {
        self.check_same_shape(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Ok(GridFunction { spec: self.spec.clone(), vshape: self.vshape.clone(), values })
    }

    pub fn add(&self, other: &GridFunction) -> Result<GridFunction> {
        self.check_same_shape(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect();
        Ok(GridFunction { spec: self.spec.clone(), vshape: self.vshape.clone(), values })
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.norm()))
    }

    /// Multiply every component pointwise by the scalar `mask`.
    pub fn mask(&self, mask: &CellSet) -> Result<GridFunction> {
        if mask.spec() != &self.spec {
            return Err(LabError::ShapeMismatch("mask on a different grid".into()));
        }
        let n = self.npoints();
        let mut out = self.clone();
        for (i, v) in out.values.iter_mut().enumerate() {
            if !mask.cells[i % n] {
                *v = Complex64::default();
            }
        }
        Ok(out)
    }

    pub fn real_parts(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.re).collect()
    }

    /// Serialize as one JSON header line followed by little-endian
    /// `(re, im)` f64 pairs in storage order.
    pub fn write_binary(&self, mut w: impl Write, labels: Option<&[String]>) -> Result<()> {
        let header = GridHeader {
            format: GRID_FORMAT.to_string(),
            version: 1,
            grid: self.spec.clone(),
            vector_shape: self.vshape.clone(),
            layout: GRID_LAYOUT.to_string(),
            labels: labels.map(|l| l.to_vec()),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        let mut buf = Vec::with_capacity(self.values.len() * 16);
        for v in &self.values {
            buf.extend_from_slice(&v.re.to_le_bytes());
            buf.extend_from_slice(&v.im.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_binary(&mut out, None).expect("writing to a Vec cannot fail");
        out
    }

    /// Parse the binary format; returns the function and optional labels.
    pub fn read_binary(mut r: impl Read) -> Result<(GridFunction, Option<Vec<String>>)> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| LabError::Parse("missing header line".into()))?;
        let header: GridHeader = serde_json::from_slice(&bytes[..nl])?;
        if header.format != GRID_FORMAT {
            return Err(LabError::Parse(format!("unknown format `{}`", header.format)));
        }
        let body = &bytes[nl + 1..];
        if body.len() % 16 != 0 {
            return Err(LabError::Parse("truncated sample data".into()));
        }
        let values = body
            .chunks_exact(16)
            .map(|c| {
                let re = f64::from_le_bytes(c[..8].try_into().unwrap());
                let im = f64::from_le_bytes(c[8..].try_into().unwrap());
                Complex64::new(re, im)
            })
            .collect();
        let f = GridFunction::new(header.grid, header.vector_shape, values)?;
        Ok((f, header.labels))
    }
}

const GRID_FORMAT: &str = "lplab-grid-function";
const GRID_LAYOUT: &str =
    "component-major; grid row-major with axis 0 slowest; little-endian f64 (re, im) pairs";

#[derive(Serialize, Deserialize)]
struct GridHeader {
    format: String,
    version: u32,
    grid: GridSpec,
    vector_shape: Vec<usize>,
    layout: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<String>>,
}

/// A set of grid cells (a boolean grid function).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CellSet {
    spec: GridSpec,
    cells: Vec<bool>,
}

impl CellSet {
    pub fn empty(spec: GridSpec) -> Self {
        let n = spec.len();
        CellSet { spec, cells: vec![false; n] }
    }

    pub fn full(spec: GridSpec) -> Self {
        let n = spec.len();
        CellSet { spec, cells: vec![true; n] }
    }

    pub fn from_cells(spec: GridSpec, cells: Vec<bool>) -> Result<Self> {
        if cells.len() != spec.len() {
            return Err(LabError::ShapeMismatch("cell mask length".into()));
        }
        Ok(CellSet { spec, cells })
    }

    /// Cells whose center satisfies `pred`.
    pub fn from_fn(spec: GridSpec, pred: impl Fn(&[f64]) -> bool) -> Self {
        let cells = (0..spec.len()).map(|i| pred(&spec.cell_center(i))).collect();
        CellSet { spec, cells }
    }

    pub fn from_cubes<'a>(spec: GridSpec, cubes: impl IntoIterator<Item = &'a DyadicCube>) -> Self {
        let mut s = CellSet::empty(spec);
        for q in cubes {
            let spec = s.spec.clone();
            spec.for_each_cell(q, |i| s.cells[i] = true);
        }
        s
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn contains_cell(&self, i: usize) -> bool {
        self.cells[i]
    }

    pub fn insert(&mut self, i: usize) {
        self.cells[i] = true;
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&b| b).count()
    }

    pub fn measure(&self) -> f64 {
        self.count() as f64 * self.spec.cell_measure()
    }

    pub fn is_empty(&self) -> bool {
        !self.cells.iter().any(|&b| b)
    }

    pub fn union(&self, other: &CellSet) -> CellSet {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn intersection(&self, other: &CellSet) -> CellSet {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn difference(&self, other: &CellSet) -> CellSet {
        self.zip_with(other, |a, b| a && !b)
    }

    pub fn is_subset(&self, other: &CellSet) -> bool {
        self.cells.iter().zip(&other.cells).all(|(&a, &b)| !a || b)
    }

    fn zip_with(&self, other: &CellSet, f: impl Fn(bool, bool) -> bool) -> CellSet {
        assert_eq!(self.spec, other.spec, "cell sets on different grids");
        let cells = self.cells.iter().zip(&other.cells).map(|(&a, &b)| f(a, b)).collect();
        CellSet { spec: self.spec.clone(), cells }
    }

    pub fn contains_cube(&self, cube: &DyadicCube) -> bool {
        let mut all = true;
        self.spec.for_each_cell(cube, |i| all &= self.cells[i]);
        all
    }

    pub fn indicator(&self) -> GridFunction {
        let vals = self.cells.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        GridFunction::from_real(self.spec.clone(), vals).expect("indicator is well formed")
    }
}

/// Dyadic cube `prod_j [x_j 2^-k, (x_j + 1) 2^-k)` in the unit torus.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DyadicCube {
    scale: u32,
    pos: Vec<u64>,
}

impl DyadicCube {
    pub fn new(scale: u32, pos: Vec<u64>) -> Result<Self> {
        if pos.is_empty() {
            return Err(LabError::Config("cube needs at least one coordinate".into()));
        }
        if scale >= 63 || pos.iter().any(|&p| p >> scale != 0) {
            return Err(LabError::Config(format!(
                "cube position {pos:?} outside [0, 2^{scale})"
            )));
        }
        Ok(DyadicCube { scale, pos })
    }

    /// The whole torus `[0,1)^d`.
    pub fn unit(d: usize) -> Self {
        DyadicCube { scale: 0, pos: vec![0; d] }
    }

    /// Convenience constructor for intervals.
    pub fn interval(scale: u32, x: u64) -> Self {
        DyadicCube::new(scale, vec![x]).expect("interval position in range")
    }

    pub fn scale(&self) -> u32 {
        self.scale
    }

    pub fn pos(&self) -> &[u64] {
        &self.pos
    }

    pub fn dim(&self) -> usize {
        self.pos.len()
    }

    pub fn side(&self) -> f64 {
        (-(self.scale as f64)).exp2()
    }

    pub fn measure(&self) -> f64 {
        (-((self.scale as usize * self.dim()) as f64)).exp2()
    }

    pub fn corner(&self) -> Vec<f64> {
        let s = self.side();
        self.pos.iter().map(|&p| p as f64 * s).collect()
    }

    pub fn center(&self) -> Vec<f64> {
        let s = self.side();
        self.pos.iter().map(|&p| (p as f64 + 0.5) * s).collect()
    }

    pub fn contains(&self, other: &DyadicCube) -> bool {
        other.scale >= self.scale
            && other.dim() == self.dim()
            && other
                .pos
                .iter()
                .zip(&self.pos)
                .all(|(&o, &s)| o >> (other.scale - self.scale) == s)
    }

    pub fn intersects(&self, other: &DyadicCube) -> bool {
        self.contains(other) || other.contains(self)
    }

    pub fn parent(&self) -> Option<DyadicCube> {
        (self.scale > 0).then(|| DyadicCube {
            scale: self.scale - 1,
            pos: self.pos.iter().map(|p| p >> 1).collect(),
        })
    }

    pub fn ancestor_at(&self, k: u32) -> Option<DyadicCube> {
        (k <= self.scale).then(|| DyadicCube {
            scale: k,
            pos: self.pos.iter().map(|p| p >> (self.scale - k)).collect(),
        })
    }

    pub fn children(&self) -> Vec<DyadicCube> {
        let d = self.dim();
        (0..1u64 << d)
            .map(|mask| DyadicCube {
                scale: self.scale + 1,
                pos: (0..d)
                    .map(|j| 2 * self.pos[j] + ((mask >> (d - 1 - j)) & 1))
                    .collect(),
            })
            .collect()
    }

    /// Wrap-around Euclidean distance from `x` to the cube.
    pub fn torus_distance(&self, x: &[f64]) -> f64 {
        let s = self.side();
        let mut acc = 0.0;
        for (j, &xj) in x.iter().enumerate() {
            let a = self.pos[j] as f64 * s;
            let t = (xj - a).rem_euclid(1.0);
            if t >= s {
                let d = (t - s).min(1.0 - t);
                acc += d * d;
            }
        }
        acc.sqrt()
    }

    /// `(1 + dist(x, Q) / side(Q))^{-decay}` on the torus.
    pub fn decay_weight(&self, x: &[f64], decay: f64) -> f64 {
        (1.0 + self.torus_distance(x) / self.side()).powf(-decay)
    }

    /// Whether `x` lies in the concentric dilate of side `factor * side`,
    /// measured on the torus.
    pub fn dilate_contains(&self, factor: f64, x: &[f64]) -> bool {
        let half = 0.5 * factor * self.side();
        if half >= 0.5 {
            return true;
        }
        let c = self.center();
        x.iter().zip(&c).all(|(&xj, &cj)| {
            let t = (xj - cj).rem_euclid(1.0);
            t.min(1.0 - t) < half
        })
    }

    fn corner_key(&self) -> (Vec<u128>, u32) {
        // corners compared at a common fine scale
        (self.pos.iter().map(|&p| (p as u128) << (64 - self.scale)).collect(), self.scale)
    }
}

impl fmt::Display for DyadicCube {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.scale)?;
        for p in &self.pos {
            write!(f, " {p}")?;
        }
        Ok(())
    }
}

impl FromStr for DyadicCube {
    type Err = LabError;
    fn from_str(s: &str) -> Result<Self> {
        let mut it = s.split_whitespace();
        let k = it
            .next()
            .ok_or_else(|| LabError::Parse("empty cube line".into()))?
            .parse::<u32>()
            .map_err(|e| LabError::Parse(format!("bad scale in `{s}`: {e}")))?;
        let pos = it
            .map(|t| t.parse::<u64>().map_err(|e| LabError::Parse(format!("bad coordinate in `{s}`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        DyadicCube::new(k, pos)
    }
}

impl Serialize for DyadicCube {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DyadicCube {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Finite family of dyadic cubes of one dimension.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Collection {
    cubes: BTreeSet<DyadicCube>,
}

impl Collection {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_cubes(cubes: impl IntoIterator<Item = DyadicCube>) -> Result<Self> {
        let mut c = Collection::new();
        for q in cubes {
            c.insert(q)?;
        }
        Ok(c)
    }

    /// Every dyadic cube of dimension `d` with scale in `k_min..=k_max`.
    pub fn all_dyadic(d: usize, k_min: u32, k_max: u32) -> Self {
        let mut cubes = BTreeSet::new();
        let mut level = vec![DyadicCube::unit(d)];
        for k in 0..=k_max {
            if k >= k_min {
                cubes.extend(level.iter().cloned());
            }
            if k < k_max {
                level = level.iter().flat_map(|q| q.children()).collect();
            }
        }
        Collection { cubes }
    }

    pub fn insert(&mut self, q: DyadicCube) -> Result<()> {
        if let Some(first) = self.cubes.iter().next() {
            if first.dim() != q.dim() {
                return Err(LabError::ShapeMismatch(format!(
                    "cube {q} of dimension {} in a collection of dimension {}",
                    q.dim(),
                    first.dim()
                )));
            }
        }
        self.cubes.insert(q);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.cubes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cubes.is_empty()
    }

    pub fn contains(&self, q: &DyadicCube) -> bool {
        self.cubes.contains(q)
    }

    pub fn iter(&self) -> impl Iterator<Item = &DyadicCube> {
        self.cubes.iter()
    }

    pub fn dim(&self) -> Option<usize> {
        self.cubes.iter().next().map(|q| q.dim())
    }

    pub fn min_scale(&self) -> Option<u32> {
        self.cubes.iter().next().map(|q| q.scale())
    }

    pub fn max_scale(&self) -> Option<u32> {
        self.cubes.iter().next_back().map(|q| q.scale())
    }

    /// Members contained in `i0`.
    pub fn restrict(&self, i0: &DyadicCube) -> Collection {
        Collection { cubes: self.cubes.iter().filter(|q| i0.contains(q)).cloned().collect() }
    }

    /// Members not contained in `i0`.
    pub fn restrict_complement(&self, i0: &DyadicCube) -> Collection {
        Collection { cubes: self.cubes.iter().filter(|q| !i0.contains(q)).cloned().collect() }
    }

    /// The relevant cubes: every dyadic `J` containing some member with
    /// `scale(J) >= cap` (so `|J|` is at most the cap volume), plus the
    /// members themselves.
    pub fn relevant_closure(&self, cap: u32) -> Collection {
        let mut out = BTreeSet::new();
        for q in &self.cubes {
            out.insert(q.clone());
            let mut cur = q.clone();
            while cur.scale() > cap {
                cur = cur.parent().expect("scale > cap >= 0");
                if !out.insert(cur.clone()) {
                    // ancestors of an already inserted cube are present too,
                    // except when that cube was a member; keep walking then
                    if !self.cubes.contains(&cur) {
                        break;
                    }
                }
            }
        }
        Collection { cubes: out }
    }

    /// Members not strictly contained in another member.
    pub fn maximal(&self) -> Vec<DyadicCube> {
        let set: HashSet<&DyadicCube> = self.cubes.iter().collect();
        self.cubes
            .iter()
            .filter(|q| {
                let mut cur = q.parent();
                while let Some(p) = cur {
                    if set.contains(&p) {
                        return false;
                    }
                    cur = p.parent();
                }
                true
            })
            .cloned()
            .collect()
    }

    /// One cube per line: `k x_1 ... x_d`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for q in &self.cubes {
            s.push_str(&q.to_string());
            s.push('\n');
        }
        s
    }

    /// Parse the line format; blank lines and `#` comments are skipped.
    pub fn from_text(text: &str) -> Result<Self> {
        let cubes = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::parse)
            .collect::<Result<Vec<DyadicCube>>>()?;
        Self::from_cubes(cubes)
    }
}

impl FromIterator<DyadicCube> for Collection {
    fn from_iter<T: IntoIterator<Item = DyadicCube>>(iter: T) -> Self {
        Collection::from_cubes(iter).expect("cubes of one dimension")
    }
}

/// Result of [`maximal_cover`].
#[derive(Clone, Debug, PartialEq)]
pub struct Cover {
    /// Pairwise disjoint maximal dyadic cubes inside the set.
    pub cubes: Vec<DyadicCube>,
    /// Cells of the set not covered by any resolvable dyadic cube.
    pub residual: Vec<usize>,
}

impl Cover {
    pub fn measure(&self) -> f64 {
        self.cubes.iter().map(DyadicCube::measure).sum()
    }
}

/// Decompose a cell set into maximal dyadic cubes.
///
/// Output is ordered lexicographically by lower corner. Cells that no
/// resolvable cube covers (possible on anisotropic grids) are reported in
/// `residual`.
pub fn maximal_cover(set: &CellSet) -> Cover {
    let spec = set.spec();
    let d = spec.dim();
    let kmax = spec.max_cube_scale();

    // full[k][flat position]
    let mut full: Vec<Vec<bool>> = Vec::with_capacity(kmax as usize + 1);
    let nfinest = 1usize << (kmax as usize * d);
    let mut counts = vec![0usize; nfinest];
    for i in 0..spec.len() {
        if set.cells[i] {
            let q = spec.cube_of_cell(i, kmax);
            counts[flat_pos(&q)] += 1;
        }
    }
    let per_cube = spec.len() / nfinest;
    full.push(counts.iter().map(|&c| c == per_cube).collect());
    for k in (0..kmax).rev() {
        let finer = full.last().unwrap();
        let n = 1usize << (k as usize * d);
        let mut level = vec![true; n];
        for (idx, &f) in finer.iter().enumerate() {
            if !f {
                level[parent_flat(idx, k + 1, d)] = false;
            }
        }
        full.push(level);
    }
    full.reverse();

    let mut cubes = Vec::new();
    for k in 0..=kmax {
        for (idx, &f) in full[k as usize].iter().enumerate() {
            if f && (k == 0 || !full[k as usize - 1][parent_flat(idx, k, d)]) {
                cubes.push(unflat_pos(idx, k, d));
            }
        }
    }
    cubes.sort_by_key(DyadicCube::corner_key);

    let residual = (0..spec.len())
        .filter(|&i| set.cells[i] && !full[kmax as usize][flat_pos(&spec.cube_of_cell(i, kmax))])
        .collect();
    Cover { cubes, residual }
}

/// Maximal cover of the union of a family of cubes.
pub fn maximal_cover_of_cubes(spec: &GridSpec, cubes: &[DyadicCube]) -> Cover {
    maximal_cover(&CellSet::from_cubes(spec.clone(), cubes))
}

fn flat_pos(q: &DyadicCube) -> usize {
    q.pos.iter().fold(0usize, |acc, &p| (acc << q.scale) | p as usize)
}

fn unflat_pos(mut idx: usize, k: u32, d: usize) -> DyadicCube {
    let mut pos = vec![0u64; d];
    let mask = (1usize << k) - 1;
    for j in (0..d).rev() {
        pos[j] = (idx & mask) as u64;
        idx >>= k;
    }
    DyadicCube { scale: k, pos }
}

fn parent_flat(idx: usize, k: u32, d: usize) -> usize {
    let q = unflat_pos(idx, k, d);
    flat_pos(&q.parent().expect("k >= 1"))
}
