//! Weights on the torus: constructors, grid maximal operators, A_p and
//! rectangle characteristics, A_infinity probing and reverse Hölder
//! exponents.
//!
//! Class membership cannot be decided on a finite grid. Every verdict here
//! compares an estimate at the working resolution with the same estimate on
//! a grid refined `2^refine_levels` times per axis; growth beyond `tol` is
//! reported as unstable.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::grid::{GridFunction, GridSpec};
use crate::par;

/// Family of windows for maximal operators and characteristics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WindowMode {
    /// Cubes: the same physical side on every axis.
    Cubes,
    /// Axis-parallel rectangles with independent dyadic sides.
    Rectangles,
}

/// Window side lengths in cells, one vector per window shape.
fn window_shapes(spec: &GridSpec, mode: WindowMode) -> Vec<Vec<usize>> {
    let l = spec.log_res();
    match mode {
        WindowMode::Cubes => (0..=spec.max_cube_scale())
            .map(|k| l.iter().map(|&lj| 1usize << (lj - k)).collect())
            .collect(),
        WindowMode::Rectangles => {
            let mut out = vec![vec![]];
            for &lj in l {
                out = out
                    .into_iter()
                    .flat_map(|prefix: Vec<usize>| {
                        (0..=lj).map(move |k| {
                            let mut v = prefix.clone();
                            v.push(1usize << (lj - k));
                            v
                        })
                    })
                    .collect();
            }
            out
        }
    }
}

/// Apply `op(a, b)` along `axis` with partner offset `off` (periodic),
/// writing into a fresh buffer. `sign` selects `x + off` or `x - off`.
fn axis_pass(data: &[f64], shape: &[usize], axis: usize, off: usize, forward: bool, op: fn(f64, f64) -> f64) -> Vec<f64> {
    let n = shape[axis];
    let stride: usize = shape[axis + 1..].iter().product();
    let block = n * stride;
    let mut out = vec![0.0; data.len()];
    for (b, chunk) in out.chunks_mut(block).enumerate() {
        let base = b * block;
        for i in 0..n {
            let j = if forward { (i + off) % n } else { (i + n - off % n) % n };
            for s in 0..stride {
                chunk[i * stride + s] = op(data[base + i * stride + s], data[base + j * stride + s]);
            }
        }
    }
    out
}

/// Periodic sums over the window `[x, x + lens)` for every start `x`.
/// Built by doubling, so all partial sums are of nonnegative terms and no
/// cancellation occurs.
pub(crate) fn box_sums(data: &[f64], shape: &[usize], lens: &[usize]) -> Vec<f64> {
    let mut cur = data.to_vec();
    for (axis, &len) in lens.iter().enumerate() {
        let mut w = 1;
        while w < len {
            cur = axis_pass(&cur, shape, axis, w, true, |a, b| a + b);
            w *= 2;
        }
    }
    cur
}

/// For every point `x`, the maximum of `data[t]` over starts `t` with
/// `x` in `[t, t + lens)`.
pub(crate) fn covering_max(data: &[f64], shape: &[usize], lens: &[usize]) -> Vec<f64> {
    let mut cur = data.to_vec();
    for (axis, &len) in lens.iter().enumerate() {
        let mut w = 1;
        while w < len {
            cur = axis_pass(&cur, shape, axis, w, false, f64::max);
            w *= 2;
        }
    }
    cur
}

/// Uncentered grid maximal function of `|f|`, per vector index.
pub fn maximal_function(f: &GridFunction, mode: WindowMode) -> Result<GridFunction> {
    let spec = f.spec();
    let shape = spec.shape();
    let n = spec.len();
    let shapes = window_shapes(spec, mode);
    let mut out = Vec::with_capacity(n * f.ncomp());
    for c in 0..f.ncomp() {
        let abs: Vec<f64> = f.component(c).iter().map(|v| v.norm()).collect();
        out.extend(maximal_values(&abs, &shape, &shapes));
    }
    GridFunction::new(spec.clone(), f.vshape().to_vec(), out.into_iter().map(|v| Complex64::new(v, 0.0)).collect())
}

fn maximal_values(abs: &[f64], shape: &[usize], shapes: &[Vec<usize>]) -> Vec<f64> {
    let per_shape = par::map(shapes, |lens| {
        let count: usize = lens.iter().product();
        let avg: Vec<f64> = box_sums(abs, shape, lens).into_iter().map(|s| s / count as f64).collect();
        covering_max(&avg, shape, lens)
    });
    let mut m = abs.to_vec();
    for b in per_shape {
        m.iter_mut().zip(&b).for_each(|(a, v)| *a = a.max(*v));
    }
    m
}

/// Maximal function of a real field on `spec` (first-class helper for the
/// stopping-time code).
pub fn maximal_of_values(spec: &GridSpec, vals: &[f64], mode: WindowMode) -> Vec<f64> {
    let abs: Vec<f64> = vals.iter().map(|v| v.abs()).collect();
    maximal_values(&abs, &spec.shape(), &window_shapes(spec, mode))
}

/// Recipe for a weight; kept with the samples so the weight can be rebuilt
/// on other grids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum WeightKind {
    Constant {
        value: f64,
    },
    /// `|x - center|^a`, torus distance; center defaults to the midpoint,
    /// which is a cell boundary and never a sample point.
    Power {
        a: f64,
        #[serde(default)]
        center: Option<Vec<f64>>,
    },
    /// One factor per axis group.
    Product {
        factors: Vec<WeightKind>,
    },
    /// `exp(-dist(x, C)^{-power})` for `count` equally spaced centers: flat
    /// zeros, outside every A_p.
    Cusp {
        power: f64,
        #[serde(default = "one")]
        count: usize,
    },
    Custom {
        values: Vec<f64>,
    },
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq)]
pub struct Weight {
    spec: GridSpec,
    values: Vec<f64>,
    kind: WeightKind,
}

fn check_positive(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
        Some(index) => Err(LabError::NonPositiveWeight { index, value: values[index] }),
        None => Ok(()),
    }
}

fn torus_dist(x: &[f64], c: &[f64]) -> f64 {
    x.iter()
        .zip(c)
        .map(|(a, b)| {
            let t = (a - b).rem_euclid(1.0);
            let t = t.min(1.0 - t);
            t * t
        })
        .sum::<f64>()
        .sqrt()
}

fn evaluate(spec: &GridSpec, kind: &WeightKind) -> Result<Vec<f64>> {
    let d = spec.dim();
    match kind {
        WeightKind::Constant { value } => Ok(vec![*value; spec.len()]),
        WeightKind::Power { a, center } => {
            if !a.is_finite() || *a <= -(d as f64) {
                return Err(LabError::Config(format!("power weight exponent {a} must exceed -{d}")));
            }
            let c = center.clone().unwrap_or_else(|| vec![0.5; d]);
            if c.len() != d {
                return Err(LabError::ShapeMismatch("power weight center has the wrong dimension".into()));
            }
            Ok((0..spec.len()).map(|i| torus_dist(&spec.cell_center(i), &c).powf(*a)).collect())
        }
        WeightKind::Cusp { power, count } => {
            if !(power.is_finite() && *power > 0.0) || *count == 0 {
                return Err(LabError::Config("cusp weight needs power > 0 and count >= 1".into()));
            }
            let centers: Vec<Vec<f64>> =
                (0..*count).map(|j| vec![(j as f64 + 0.5) / *count as f64; d]).collect();
            Ok((0..spec.len())
                .map(|i| {
                    let x = spec.cell_center(i);
                    let r = centers.iter().map(|c| torus_dist(&x, c)).fold(f64::INFINITY, f64::min);
                    (-r.powf(-power)).exp()
                })
                .collect())
        }
        WeightKind::Product { factors } => {
            let groups = spec.groups();
            if factors.len() != groups.len() {
                return Err(LabError::ShapeMismatch(format!(
                    "{} product factors for {} axis groups",
                    factors.len(),
                    groups.len()
                )));
            }
            let mut axis = 0;
            let mut parts = Vec::new();
            for (g, f) in groups.iter().zip(factors) {
                let sub = GridSpec::new(spec.log_res()[axis..axis + g].to_vec(), vec![*g])?;
                parts.push((axis, *g, sub.clone(), evaluate(&sub, f)?));
                axis += g;
            }
            Ok((0..spec.len())
                .map(|i| {
                    let c = spec.coords(i);
                    parts.iter().map(|(a, g, sub, vals)| vals[sub.index(&c[*a..a + g])]).product()
                })
                .collect())
        }
        WeightKind::Custom { values } => {
            if values.len() != spec.len() {
                return Err(LabError::ShapeMismatch("custom weight does not match the grid".into()));
            }
            Ok(values.clone())
        }
    }
}

/// Build a weight on `spec`.
pub fn make_weight(spec: &GridSpec, kind: WeightKind) -> Result<Weight> {
    let values = evaluate(spec, &kind)?;
    check_positive(&values)?;
    Ok(Weight { spec: spec.clone(), values, kind })
}

impl Weight {
    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn kind(&self) -> &WeightKind {
        &self.kind
    }

    /// Rebuild on another grid; custom weights cannot be resampled.
    pub fn resample(&self, spec: &GridSpec) -> Result<Weight> {
        if matches!(self.kind, WeightKind::Custom { .. }) {
            return Err(LabError::Config("custom weights have no recipe to resample".into()));
        }
        make_weight(spec, self.kind.clone())
    }

    pub fn function(&self) -> GridFunction {
        GridFunction::from_real(self.spec.clone(), self.values.clone()).expect("finite samples")
    }

    /// `w(E)` for a set of cells given as a predicate on indices.
    pub fn mass(&self, mut member: impl FnMut(usize) -> bool) -> f64 {
        let terms: Vec<f64> = (0..self.values.len()).filter(|&i| member(i)).map(|i| self.values[i]).collect();
        par::pairwise_sum(&terms) * self.spec.cell_measure()
    }
}

/// Two-resolution comparison settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stability {
    pub refine_levels: u32,
    pub tol: f64,
}

impl Default for Stability {
    fn default() -> Self {
        Stability { refine_levels: 4, tol: 0.1 }
    }
}

/// Window over which an estimate was attained: start cell and side lengths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub start: Vec<usize>,
    pub lens: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApReport {
    pub p: f64,
    pub mode: WindowMode,
    pub estimate: f64,
    pub window: Window,
    /// Estimate on the refined grid, when computed.
    pub refined_estimate: Option<f64>,
    /// `refined / base <= 1 + tol`; `None` when the weight cannot be
    /// resampled.
    pub stable: Option<bool>,
    /// Some `w^{1-p'}` window average underflowed to zero.
    pub underflow: bool,
}

/// Starting positions on the half-side lattice of `lens`, per axis.
fn lattice_starts(shape: &[usize], lens: &[usize]) -> Vec<usize> {
    let strides: Vec<usize> = (0..shape.len()).map(|j| shape[j + 1..].iter().product()).collect();
    let mut out = vec![0usize];
    for j in 0..shape.len() {
        let step = (lens[j] / 2).max(1);
        let stride = strides[j];
        out = out
            .into_iter()
            .flat_map(|base| (0..shape[j]).step_by(step).map(move |t| base + t * stride))
            .collect();
    }
    out
}

fn unflatten(shape: &[usize], mut i: usize) -> Vec<usize> {
    let mut c = vec![0; shape.len()];
    for j in (0..shape.len()).rev() {
        c[j] = i % shape[j];
        i /= shape[j];
    }
    c
}

/// `sup_W ln( avg_W a ) + e * ln( avg_W b )` over dyadic and half-shifted
/// windows, with the attaining window.
fn window_sup(spec: &GridSpec, a: &[f64], b: &[f64], e: f64, mode: WindowMode) -> (f64, Window, bool) {
    let shape = spec.shape();
    let shapes = window_shapes(spec, mode);
    let per = par::map(&shapes, |lens| {
        let count = lens.iter().product::<usize>() as f64;
        let sa = box_sums(a, &shape, lens);
        let sb = box_sums(b, &shape, lens);
        let mut best = (f64::NEG_INFINITY, 0usize);
        let mut under = false;
        for t in lattice_starts(&shape, lens) {
            if sb[t] == 0.0 {
                under = true;
                continue;
            }
            let v = (sa[t] / count).ln() + e * (sb[t] / count).ln();
            if v > best.0 {
                best = (v, t);
            }
        }
        (best, under)
    });
    let mut best = (f64::NEG_INFINITY, Window { start: vec![0; shape.len()], lens: shape.clone() });
    let mut under = false;
    for (lens, ((v, t), u)) in shapes.iter().zip(per) {
        under |= u;
        if v > best.0 {
            best = (v, Window { start: unflatten(&shape, t), lens: lens.clone() });
        }
    }
    (best.0, best.1, under)
}

/// `sup (avg w)(avg w^{1-p'})^{p-1}` at the weight's own resolution.
fn ap_estimate(w: &Weight, p: f64, mode: WindowMode) -> (f64, Window, bool) {
    // u = w / min w >= 1, so u^{1-p'} <= 1 and sigma (p - 1) = -1 removes
    // the normalization exactly
    let wmin = w.values.iter().copied().fold(f64::INFINITY, f64::min);
    let u: Vec<f64> = w.values.iter().map(|v| v / wmin).collect();
    let sigma = -1.0 / (p - 1.0);
    let us: Vec<f64> = u.iter().map(|v| v.powf(sigma)).collect();
    let (lv, win, under) = window_sup(&w.spec, &u, &us, p - 1.0, mode);
    (lv.exp(), win, under)
}

/// A_p characteristic estimate; with `stability`, also compare against the
/// refined grid.
pub fn ap_characteristic(w: &Weight, p: f64, mode: WindowMode, stability: Option<&Stability>) -> Result<ApReport> {
    if !(p.is_finite() && p > 1.0) {
        return Err(LabError::Exponent { what: "A_p index (needs p > 1)", value: p });
    }
    let (estimate, window, mut underflow) = ap_estimate(w, p, mode);
    let (refined_estimate, stable) = match stability {
        Some(s) if !matches!(w.kind, WeightKind::Custom { .. }) => {
            let fine = w.resample(&w.spec.refined(s.refine_levels)?)?;
            let (r, _, u) = ap_estimate(&fine, p, mode);
            underflow |= u;
            (Some(r), Some(r <= estimate * (1.0 + s.tol)))
        }
        _ => (None, None),
    };
    Ok(ApReport { p, mode, estimate, window, refined_estimate, stable, underflow })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AInfinityReport {
    /// Smallest stable index found, `None` for "unstable".
    pub q_w: Option<f64>,
    pub floor: f64,
    pub q_max: f64,
    /// The answer is the search floor, so the true index may be smaller.
    pub at_floor: bool,
    pub estimate: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeOptions {
    pub floor: f64,
    pub q_max: f64,
    pub iterations: usize,
    pub mode: WindowMode,
    pub stability: Stability,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        ProbeOptions { floor: 1.0 + 1.0 / 64.0, q_max: 32.0, iterations: 12, mode: WindowMode::Cubes, stability: Stability::default() }
    }
}

fn stable_at(w: &Weight, q: f64, opts: &ProbeOptions) -> Result<Option<f64>> {
    let r = ap_characteristic(w, q, opts.mode, Some(&opts.stability))?;
    Ok((r.stable == Some(true) && !r.underflow && r.estimate.is_finite()).then_some(r.estimate))
}

/// Smallest `q` in `[floor, q_max]` whose A_q estimate is resolution-stable,
/// by bisection (the classes increase with `q`).
pub fn a_infinity_probe(w: &Weight, opts: &ProbeOptions) -> Result<AInfinityReport> {
    let mut report = AInfinityReport { q_w: None, floor: opts.floor, q_max: opts.q_max, at_floor: false, estimate: None };
    let Some(top) = stable_at(w, opts.q_max, opts)? else {
        return Ok(report);
    };
    if let Some(e) = stable_at(w, opts.floor, opts)? {
        report.q_w = Some(opts.floor);
        report.at_floor = true;
        report.estimate = Some(e);
        return Ok(report);
    }
    let (mut lo, mut hi, mut est) = (opts.floor, opts.q_max, top);
    for _ in 0..opts.iterations {
        let mid = 0.5 * (lo + hi);
        match stable_at(w, mid, opts)? {
            Some(e) => {
                hi = mid;
                est = e;
            }
            None => lo = mid,
        }
    }
    report.q_w = Some(hi);
    report.estimate = Some(est);
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReverseHolderReport {
    /// Largest stable exponent found; 0 when none is stable.
    pub eps: f64,
    /// `sup (avg w^{1+eps})^{1/(1+eps)} / avg w` at `eps`.
    pub k: f64,
    pub ceiling: f64,
    pub at_ceiling: bool,
    /// `eps <= flag_below`: no usable self-improvement.
    pub flagged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RhOptions {
    pub start: f64,
    pub ceiling: f64,
    /// On a grid a window of `m` cells cannot show a reverse Hölder ratio
    /// above `m^{eps/(1+eps)}`, so failures surface only slowly in `eps`;
    /// exponents at or below this level are reported as degenerate.
    pub flag_below: f64,
    pub mode: WindowMode,
    pub stability: Stability,
}

impl Default for RhOptions {
    fn default() -> Self {
        RhOptions { start: 1.0 / 64.0, ceiling: 4.0, flag_below: 0.125, mode: WindowMode::Cubes, stability: Stability::default() }
    }
}

fn rh_constant(w: &Weight, eps: f64, mode: WindowMode) -> f64 {
    let wmax = w.values.iter().copied().fold(0.0, f64::max);
    let u: Vec<f64> = w.values.iter().map(|v| v / wmax).collect();
    let ue: Vec<f64> = u.iter().map(|v| v.powf(1.0 + eps)).collect();
    // ln avg u^{1+eps} / (1+eps) - ln avg u
    let (lv, _, _) = window_sup(&w.spec, &ue, &u, -(1.0 + eps), mode);
    (lv / (1.0 + eps)).exp()
}

/// Doubling search over `eps = start * 2^j <= ceiling` for the largest
/// exponent whose reverse Hölder constant is resolution-stable.
pub fn reverse_holder_exponent(w: &Weight, opts: &RhOptions) -> Result<ReverseHolderReport> {
    check_positive(&[opts.start, opts.ceiling])?;
    let fine = w.resample(&w.spec.refined(opts.stability.refine_levels)?)?;
    let mut best: Option<(f64, f64)> = None;
    let mut eps = opts.start;
    while eps <= opts.ceiling {
        let k = rh_constant(w, eps, opts.mode);
        let kf = rh_constant(&fine, eps, opts.mode);
        if !(k.is_finite() && kf <= k * (1.0 + opts.stability.tol)) {
            break;
        }
        best = Some((eps, k));
        eps *= 2.0;
    }
    let (eps, k) = best.unwrap_or((0.0, f64::INFINITY));
    Ok(ReverseHolderReport {
        eps,
        k,
        ceiling: opts.ceiling,
        at_ceiling: 2.0 * eps > opts.ceiling,
        flagged: eps <= opts.flag_below,
    })
}

/// Largest 1-D A_p estimate over every slice of a weight on a grid with
/// two axis groups of one axis each, varying `axis` with the other fixed.
pub fn slice_characteristic(w: &Weight, p: f64, axis: usize) -> Result<f64> {
    let spec = &w.spec;
    if spec.dim() != 2 || axis > 1 {
        return Err(LabError::ShapeMismatch("slices are taken on 2-D grids".into()));
    }
    let shape = spec.shape();
    let other = 1 - axis;
    let line = GridSpec::new(vec![spec.log_res()[axis]], vec![1])?;
    let slices: Vec<usize> = (0..shape[other]).collect();
    let vals = par::map(&slices, |&fixed| {
        let vals: Vec<f64> = (0..shape[axis])
            .map(|t| {
                let mut c = [0usize; 2];
                c[axis] = t;
                c[other] = fixed;
                w.values[spec.index(&c)]
            })
            .collect();
        let slice = Weight { spec: line.clone(), values: vals.clone(), kind: WeightKind::Custom { values: vals } };
        ap_estimate(&slice, p, WindowMode::Cubes).0
    });
    Ok(vals.into_iter().fold(0.0, f64::max))
}
