//! Mixed-norm and weak quasi-norms, size functionals, smoothed averages and
//! BMO-type square-function averages.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::decomposition::CoefficientMap;
use crate::error::{check_exponent, LabError, Result};
use crate::grid::{CellSet, Collection, DyadicCube, GridFunction, GridSpec};
use crate::par;

/// Exponent tuples for `L^P(L^Q)`. `groups` records the block structure of
/// `P` and must match the grid's axis grouping; an empty `groups` accepts any.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixedNormSpec {
    pub p: Vec<f64>,
    #[serde(default)]
    pub groups: Vec<usize>,
    #[serde(default)]
    pub q: Vec<f64>,
}

impl MixedNormSpec {
    pub fn new(p: Vec<f64>, q: Vec<f64>) -> Result<Self> {
        let s = MixedNormSpec { p, groups: vec![], q };
        s.validate()?;
        Ok(s)
    }

    /// Every spatial axis gets exponent `p`, scalar-valued.
    pub fn scalar(d: usize, p: f64) -> Result<Self> {
        Self::new(vec![p; d], vec![])
    }

    pub fn validate(&self) -> Result<()> {
        if self.p.is_empty() {
            return Err(LabError::Config("P must have one exponent per axis".into()));
        }
        for &p in &self.p {
            check_exponent("P entry", p)?;
        }
        for &q in &self.q {
            check_exponent("Q entry", q)?;
        }
        if !self.groups.is_empty() && self.groups.iter().sum::<usize>() != self.p.len() {
            return Err(LabError::Config(format!("grouping {:?} does not cover P", self.groups)));
        }
        Ok(())
    }

    fn check(&self, f: &GridFunction) -> Result<()> {
        self.validate()?;
        if self.p.len() != f.spec().dim() {
            return Err(LabError::ShapeMismatch(format!(
                "P has {} entries for a {}-dimensional grid",
                self.p.len(),
                f.spec().dim()
            )));
        }
        if self.q.len() != f.vshape().len() {
            return Err(LabError::ShapeMismatch(format!(
                "Q has {} entries for vector shape {:?}",
                self.q.len(),
                f.vshape()
            )));
        }
        if !self.groups.is_empty() && self.groups != f.spec().groups() {
            return Err(LabError::ShapeMismatch(format!(
                "P grouping {:?} differs from grid grouping {:?}",
                self.groups,
                f.spec().groups()
            )));
        }
        Ok(())
    }
}

/// `(sum_i |x_i|^r * weight)^{1/r}` along `axis` of a row-major tensor.
pub fn reduce_axis(data: &[f64], shape: &[usize], axis: usize, r: f64, weight: f64) -> Vec<f64> {
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    par::map_range(outer * inner, |o| {
        let (a, b) = (o / inner, o % inner);
        let base = a * len * inner + b;
        let terms: Vec<f64> = (0..len).map(|i| data[base + i * inner].abs().powf(r)).collect();
        (par::pairwise_sum(&terms) * weight).powf(1.0 / r)
    })
}

/// Pointwise `L^Q` quasi-norm over the vector indices, innermost last.
/// Returns one value per grid point.
pub fn vector_norm(f: &GridFunction, q: &[f64]) -> Result<Vec<f64>> {
    if q.len() != f.vshape().len() {
        return Err(LabError::ShapeMismatch(format!("Q has {} entries for vector shape {:?}", q.len(), f.vshape())));
    }
    for &e in q {
        check_exponent("Q entry", e)?;
    }
    let mut shape: Vec<usize> = f.vshape().to_vec();
    shape.push(f.npoints());
    let mut data: Vec<f64> = f.values().iter().map(|v| v.norm()).collect();
    for j in (0..q.len()).rev() {
        data = reduce_axis(&data, &shape, j, q[j], 1.0);
        shape.remove(j);
    }
    Ok(data)
}

/// Iterated spatial quasi-norm of a scalar real field, innermost (last) axis
/// first; `weight`, if given, enters the innermost integral.
pub fn spatial_mixed_norm(spec: &GridSpec, vals: &[f64], p: &[f64], weight: Option<&[f64]>) -> Result<f64> {
    if p.len() != spec.dim() || vals.len() != spec.len() {
        return Err(LabError::ShapeMismatch("field does not match the grid".into()));
    }
    for &e in p {
        check_exponent("P entry", e)?;
    }
    let mut shape = spec.shape();
    let d = shape.len();
    let last = d - 1;
    let n_last = shape[last];
    // innermost integral, possibly weighted
    let inner_count = vals.len() / n_last;
    let cell = 1.0 / n_last as f64;
    let r = p[last];
    let mut data = par::map_range(inner_count, |o| {
        let base = o * n_last;
        let terms: Vec<f64> = (0..n_last)
            .map(|i| {
                let w = weight.map_or(1.0, |w| w[base + i]);
                vals[base + i].abs().powf(r) * w
            })
            .collect();
        (par::pairwise_sum(&terms) * cell).powf(1.0 / r)
    });
    shape.pop();
    for j in (0..last).rev() {
        data = reduce_axis(&data, &shape, j, p[j], 1.0 / shape[j] as f64);
        shape.pop();
    }
    Ok(data[0])
}

/// `||f||_{L^P(L^Q)}`: the `Q` tuple over vector indices (innermost `q_n`
/// first), then `P` over spatial axes (innermost `p_d` first).
pub fn mixed_norm(f: &GridFunction, spec: &MixedNormSpec) -> Result<f64> {
    spec.check(f)?;
    let v = vector_norm(f, &spec.q)?;
    spatial_mixed_norm(f.spec(), &v, &spec.p, None)
}

/// Mixed norm with a weight in the innermost spatial integral.
pub fn weighted_mixed_norm(f: &GridFunction, spec: &MixedNormSpec, weight: &[f64]) -> Result<f64> {
    spec.check(f)?;
    if weight.len() != f.npoints() {
        return Err(LabError::ShapeMismatch("weight does not match the grid".into()));
    }
    let v = vector_norm(f, &spec.q)?;
    spatial_mixed_norm(f.spec(), &v, &spec.p, Some(weight))
}

/// `max_v v |{|f| >= v}|^{1/p}` over attained levels `v` of `|f|`.
pub fn weak_quasinorm_values(vals: &[f64], cell: f64, p: f64) -> Result<f64> {
    check_exponent("weak-norm p", p)?;
    let mut a: Vec<f64> = vals.iter().map(|v| v.abs()).collect();
    a.sort_by(|x, y| y.total_cmp(x));
    let mut best = 0.0f64;
    let mut i = 0;
    while i < a.len() && a[i] > 0.0 {
        let v = a[i];
        while i < a.len() && a[i] == v {
            i += 1;
        }
        best = best.max(v * (i as f64 * cell).powf(1.0 / p));
    }
    Ok(best)
}

/// Weak `L^{p,infinity}` quasi-norm of a scalar function.
pub fn weak_quasinorm(f: &GridFunction, p: f64) -> Result<f64> {
    if f.ncomp() != 1 {
        return Err(LabError::ShapeMismatch("weak quasi-norm takes a scalar function".into()));
    }
    let vals: Vec<f64> = f.values().iter().map(|v| v.norm()).collect();
    weak_quasinorm_values(&vals, f.spec().cell_measure(), p)
}

/// Supremum of smoothed averages of `1_E` over the relevant cubes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeReport {
    pub value: f64,
    pub cube: Option<DyadicCube>,
    pub decay: f64,
}

/// Per-axis wrap-around distances from every cell center to the cube's
/// projection, in units of the side length.
fn scaled_axis_distances(spec: &GridSpec, q: &DyadicCube) -> Vec<Vec<f64>> {
    let s = q.side();
    (0..spec.dim())
        .map(|j| {
            let n = 1usize << spec.log_res()[j];
            let a = q.pos()[j] as f64 * s;
            (0..n)
                .map(|i| {
                    let x = (i as f64 + 0.5) / n as f64;
                    let t = (x - a).rem_euclid(1.0);
                    if t < s {
                        0.0
                    } else {
                        (t - s).min(1.0 - t) / s
                    }
                })
                .collect()
        })
        .collect()
}

/// `(1/|I|) sum_{x in cells} g(x) (1 + dist(x, I)/side)^{-decay} * cell`.
fn smoothed_sum(spec: &GridSpec, q: &DyadicCube, decay: f64, cells: impl Iterator<Item = (usize, f64)>) -> f64 {
    let dist = scaled_axis_distances(spec, q);
    let terms: Vec<f64> = cells
        .map(|(i, g)| {
            let c = spec.coords(i);
            let r2: f64 = c.iter().enumerate().map(|(j, &cj)| dist[j][cj] * dist[j][cj]).sum();
            g * (1.0 + r2.sqrt()).powf(-decay)
        })
        .collect();
    par::pairwise_sum(&terms) * spec.cell_measure() / q.measure()
}

/// `size_I(1_E)` maximized over the closure of `c` with the given cap.
pub fn size_indicator(e: &CellSet, c: &Collection, decay: f64, cap: u32) -> Result<SizeReport> {
    check_exponent("size decay", decay)?;
    let closure = c.relevant_closure(cap);
    if closure.is_empty() {
        return Err(LabError::Config("size of an empty collection".into()));
    }
    let spec = e.spec();
    let members: Vec<usize> = (0..spec.len()).filter(|&i| e.contains_cell(i)).collect();
    let cubes: Vec<&DyadicCube> = closure.iter().collect();
    let vals = par::map(&cubes, |q| smoothed_sum(spec, q, decay, members.iter().map(|&i| (i, 1.0))));
    let mut best = (0.0, None);
    for (q, v) in cubes.iter().zip(vals) {
        if v > best.0 || best.1.is_none() {
            best = (v, Some((*q).clone()));
        }
    }
    Ok(SizeReport { value: best.0, cube: best.1, decay })
}

/// `(1/|I0|) integral g chi_{I0}` with `chi_{I0} = (1 + dist/side)^{-decay}`.
pub fn smoothed_average(spec: &GridSpec, g: &[f64], q0: &DyadicCube, decay: f64) -> Result<f64> {
    check_exponent("average decay", decay)?;
    if g.len() != spec.len() {
        return Err(LabError::ShapeMismatch("averaged field does not match the grid".into()));
    }
    Ok(smoothed_sum(spec, q0, decay, g.iter().copied().enumerate()))
}

/// `|I0|^{-1/p} || (sum_{I in c, I subset I0} |a_I|^2/|I| 1_I)^{1/2} ||_{L^p(L^Q)}`.
pub fn local_sf_average(
    spec: &GridSpec,
    coeffs: &CoefficientMap,
    c: &Collection,
    q0: &DyadicCube,
    p: f64,
    q: Option<&[f64]>,
) -> Result<f64> {
    check_exponent("local average p", p)?;
    let qexp = q.unwrap_or(&[]);
    if qexp.len() != coeffs.vshape().len() {
        return Err(LabError::ShapeMismatch("Q does not match the coefficient vector shape".into()));
    }
    if !spec.resolves(q0) {
        return Err(LabError::BelowResolution(vec![q0.to_string()]));
    }
    let ncomp = coeffs.ncomp();
    let cells = spec.cube_cells(q0);
    let m = cells.len();
    let local_of = |i: usize| -> usize { cells.binary_search(&i).expect("cell of q0") };
    let mut acc = vec![0.0; m * ncomp];
    for q in c.iter().filter(|q| q0.contains(q)) {
        let Some(a) = coeffs.get(q) else { continue };
        let inv = 1.0 / q.measure();
        let qc: Vec<usize> = spec.cube_cells(q).into_iter().map(local_of).collect();
        for (v, av) in a.iter().enumerate() {
            let w = av.norm_sqr() * inv;
            if w != 0.0 {
                qc.iter().for_each(|&li| acc[v * m + li] += w);
            }
        }
    }
    let mut shape = coeffs.vshape().to_vec();
    shape.push(m);
    let mut data: Vec<f64> = acc.into_iter().map(f64::sqrt).collect();
    for j in (0..qexp.len()).rev() {
        data = reduce_axis(&data, &shape, j, qexp[j], 1.0);
        shape.remove(j);
    }
    let terms: Vec<f64> = data.iter().map(|v| v.powf(p)).collect();
    let integral = par::pairwise_sum(&terms) * spec.cell_measure();
    Ok(integral.powf(1.0 / p) * q0.measure().powf(-1.0 / p))
}

/// Supremum of [`local_sf_average`] over the closure, with the full table.
pub fn bmo_quantity(
    spec: &GridSpec,
    coeffs: &CoefficientMap,
    c: &Collection,
    q: f64,
    qspec: Option<&[f64]>,
    cap: u32,
) -> Result<(f64, Vec<(DyadicCube, f64)>)> {
    check_exponent("bmo q", q)?;
    let closure: Vec<DyadicCube> = c.relevant_closure(cap).iter().cloned().collect();
    let vals = par::map(&closure, |c0| local_sf_average(spec, coeffs, c, c0, q, qspec));
    let mut table = Vec::with_capacity(closure.len());
    let mut best = 0.0f64;
    for (c0, v) in closure.into_iter().zip(vals) {
        let v = v?;
        best = best.max(v);
        table.push((c0, v));
    }
    Ok((best, table))
}

/// JSON record for a norm or size evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormRecord {
    pub op: String,
    pub inputs_digest: String,
    pub value: f64,
    pub attaining_cube: Option<DyadicCube>,
}

impl NormRecord {
    pub fn new(op: &str, input: &GridFunction, value: f64, attaining_cube: Option<DyadicCube>) -> Self {
        NormRecord { op: op.to_string(), inputs_digest: digest_hex(&input.to_bytes()), value, attaining_cube }
    }
}

pub fn digest_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(spec: &GridSpec, vshape: Vec<usize>, seed: u64) -> GridFunction {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = spec.len() * vshape.iter().product::<usize>();
        let vals = (0..n).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        GridFunction::new(spec.clone(), vshape, vals).unwrap()
    }

    #[test]
    fn constant_one_has_unit_norm() {
        let spec = GridSpec::uniform(2, 4).unwrap();
        let f = GridFunction::from_fn(spec, |_| 1.0).unwrap();
        let n = mixed_norm(&f, &MixedNormSpec::new(vec![2.0, 3.0], vec![]).unwrap()).unwrap();
        assert!((n - 1.0).abs() < 1e-15);
    }

    #[test]
    fn separable_indicator() {
        let spec = GridSpec::uniform(2, 5).unwrap();
        let f = GridFunction::from_fn(spec, |x| if x[0] < 0.5 { 1.0 } else { 0.0 }).unwrap();
        for (p1, p2) in [(2.0, 3.0), (0.5, 4.0), (1.0, 0.7)] {
            let n = mixed_norm(&f, &MixedNormSpec::new(vec![p1, p2], vec![]).unwrap()).unwrap();
            assert!((n - 0.5f64.powf(1.0 / p1)).abs() < 1e-14);
        }
    }

    /// Direct nested sums for d = 2 and up to two vector axes.
    fn oracle(f: &GridFunction, p: &[f64], q: &[f64]) -> f64 {
        let shape = f.spec().shape();
        let vs = f.vshape();
        let n = f.npoints();
        let (s1, s2) = match vs.len() {
            0 => (1, 1),
            1 => (1, vs[0]),
            _ => (vs[0], vs[1]),
        };
        let point = |g: usize| -> f64 {
            let mut outer = 0.0;
            for a in 0..s1 {
                let mut inner = 0.0;
                for b in 0..s2 {
                    let v = f.values()[(a * s2 + b) * n + g].norm();
                    inner += if q.is_empty() { v } else { v.powf(q[q.len() - 1]) };
                }
                let inner = if q.is_empty() { inner } else { inner.powf(1.0 / q[q.len() - 1]) };
                outer += if q.len() == 2 { inner.powf(q[0]) } else { inner };
            }
            if q.len() == 2 { outer.powf(1.0 / q[0]) } else { outer }
        };
        let mut total = 0.0;
        for x in 0..shape[0] {
            let mut row = 0.0;
            for y in 0..shape[1] {
                row += point(x * shape[1] + y).powf(p[1]) / shape[1] as f64;
            }
            total += row.powf(p[0] / p[1]) / shape[0] as f64;
        }
        total.powf(1.0 / p[0])
    }

    #[test]
    fn matches_nested_sum_oracle() {
        let cases: [(Vec<f64>, Vec<f64>, Vec<usize>); 4] = [
            (vec![0.5, 3.0], vec![0.7], vec![3]),
            (vec![3.0, 0.5], vec![0.7, 2.0], vec![2, 4]),
            (vec![2.0, 2.0], vec![], vec![]),
            (vec![1.5, 0.75], vec![1.0, 0.7], vec![4, 2]),
        ];
        for (seed, (p, q, vs)) in cases.into_iter().enumerate() {
            let spec = GridSpec::new(vec![4, 3], vec![2]).unwrap();
            let f = random(&spec, vs, seed as u64);
            let got = mixed_norm(&f, &MixedNormSpec::new(p.clone(), q.clone()).unwrap()).unwrap();
            let want = oracle(&f, &p, &q);
            assert!((got - want).abs() <= 1e-12 * want, "{got} vs {want}");
        }
    }

    #[test]
    fn exponent_and_shape_errors() {
        let spec = GridSpec::uniform(1, 3).unwrap();
        let f = random(&spec, vec![2], 0);
        assert!(mixed_norm(&f, &MixedNormSpec { p: vec![2.0], groups: vec![], q: vec![] }).is_err());
        assert!(MixedNormSpec::new(vec![0.0], vec![]).is_err());
        assert!(MixedNormSpec::new(vec![f64::INFINITY], vec![]).is_err());
    }

    #[test]
    fn weak_norm_examples() {
        let spec = GridSpec::uniform(1, 4).unwrap();
        let e = GridFunction::from_fn(spec.clone(), |x| if x[0] < 0.25 { 1.0 } else { 0.0 }).unwrap();
        assert!((weak_quasinorm(&e, 2.0).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(weak_quasinorm(&GridFunction::zeros(spec.clone(), vec![]), 1.0).unwrap(), 0.0);
        // two levels: 3 on 1/8, 1 on further 3/8
        let f = GridFunction::from_fn(spec, |x| if x[0] < 0.125 { 3.0 } else if x[0] < 0.5 { 1.0 } else { 0.0 }).unwrap();
        let p = 1.5;
        let want = (3.0 * 0.125f64.powf(1.0 / p)).max(0.5f64.powf(1.0 / p));
        assert!((weak_quasinorm(&f, p).unwrap() - want).abs() < 1e-15);
    }

    #[test]
    fn size_examples() {
        let spec = GridSpec::uniform(1, 8).unwrap();
        let c = Collection::from_cubes([DyadicCube::unit(1)]).unwrap();
        let full = size_indicator(&CellSet::full(spec.clone()), &c, 100.0, 0).unwrap();
        assert!((full.value - 1.0).abs() < 1e-15);
        let empty = size_indicator(&CellSet::empty(spec.clone()), &c, 100.0, 0).unwrap();
        assert_eq!(empty.value, 0.0);
        assert!(size_indicator(&CellSet::empty(spec), &Collection::new(), 100.0, 0).is_err());
    }

    #[test]
    fn size_of_half_interval_matches_quadrature() {
        let m = 100.0;
        for l in [6, 7] {
            let spec = GridSpec::uniform(1, l).unwrap();
            let e = CellSet::from_fn(spec, |x| x[0] < 0.5);
            let c = Collection::from_cubes([DyadicCube::interval(1, 0)]).unwrap();
            let r = size_indicator(&e, &c, m, 1).unwrap();
            assert!((r.value - 1.0).abs() < 1e-14);
            assert_eq!(r.cube, Some(DyadicCube::interval(1, 0)));
        }
        // E = [0,1/2), I = [1/2, 3/4): the average converges to the integral
        // of (1 + t/s)^{-M}; distances (0, 1/4] occur once, [1/4, 3/8] twice
        let s = 0.25;
        let tail = |a: f64, b: f64| s / (m - 1.0) * ((1.0 + a / s).powf(1.0 - m) - (1.0 + b / s).powf(1.0 - m));
        let exact = (tail(0.0, 0.25) + 2.0 * tail(0.25, 0.375)) / s;
        let mut prev = None;
        for l in [10u32, 11, 12] {
            let spec = GridSpec::uniform(1, l).unwrap();
            let e = CellSet::from_fn(spec.clone(), |x| x[0] < 0.5);
            let q = DyadicCube::interval(2, 2);
            let g = e.indicator().real_parts();
            let v = smoothed_average(&spec, &g, &q, m).unwrap();
            let err = (v - exact).abs();
            if let Some(pe) = prev {
                // midpoint rule: error shrinks at least by half per refinement
                assert!(err < 0.6 * pe, "{err} vs {pe}");
            }
            prev = Some(err);
        }
        assert!(prev.unwrap() < 1e-3 * exact);
    }

    #[test]
    fn smoothed_average_examples() {
        let spec = GridSpec::uniform(1, 6).unwrap();
        let q = DyadicCube::interval(2, 1);
        let one = vec![1.0; spec.len()];
        let v = smoothed_average(&spec, &one, &q, 10.0).unwrap();
        let wmin = (1.0 + (0.5 - 0.125) / 0.25f64).powf(-10.0);
        assert!(v <= 1.0 / q.measure() + 1e-12 && v >= wmin);
        assert_eq!(smoothed_average(&spec, &vec![0.0; 64], &q, 10.0).unwrap(), 0.0);
        let ind = CellSet::from_cubes(spec.clone(), [&q]).indicator().real_parts();
        assert!((smoothed_average(&spec, &ind, &q, 10.0).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn local_average_single_cube_closed_form() {
        let spec = GridSpec::uniform(1, 6).unwrap();
        let q0 = DyadicCube::interval(2, 1);
        let c = Collection::from_cubes([q0.clone()]).unwrap();
        let a = CoefficientMap::from_scalar([(q0.clone(), Complex64::new(1.5, -2.0))]);
        let v = local_sf_average(&spec, &a, &c, &q0, 2.0, None).unwrap();
        assert!((v - 2.5 / q0.measure().sqrt()).abs() < 1e-12);
        let z = CoefficientMap::from_scalar([(q0.clone(), Complex64::new(0.0, 0.0))]);
        assert_eq!(local_sf_average(&spec, &z, &c, &q0, 2.0, None).unwrap(), 0.0);
        let scaled = local_sf_average(&spec, &a.scaled(Complex64::new(-3.0, 0.0)), &c, &q0, 0.7, None).unwrap();
        let base = local_sf_average(&spec, &a, &c, &q0, 0.7, None).unwrap();
        assert!((scaled - 3.0 * base).abs() < 1e-12 * scaled);
        let (b, table) = bmo_quantity(&spec, &a, &c, 2.0, None, 2).unwrap();
        assert_eq!(table.len(), 1);
        assert_eq!(b, v);
    }

    #[test]
    fn bmo_ratio_is_finite_on_random_fixture() {
        let spec = GridSpec::uniform(1, 7).unwrap();
        let c = Collection::all_dyadic(1, 0, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = CoefficientMap::from_scalar(c.iter().map(|q| (q.clone(), Complex64::new(rng.random_range(-1.0..1.0), 0.0))));
        let (b1, _) = bmo_quantity(&spec, &a, &c, 1.0, None, 0).unwrap();
        let (b2, _) = bmo_quantity(&spec, &a, &c, 2.0, None, 0).unwrap();
        assert!(b1 > 0.0 && b2 > 0.0 && (b2 / b1).is_finite());
        assert!(b1 <= b2 * (1.0 + 1e-12), "Holder on probability averages");
    }

    #[test]
    fn weighted_norm_with_unit_weight_is_plain_norm() {
        let spec = GridSpec::uniform(2, 4).unwrap();
        let f = random(&spec, vec![], 3);
        let s = MixedNormSpec::scalar(2, 0.5).unwrap();
        let a = mixed_norm(&f, &s).unwrap();
        let b = weighted_mixed_norm(&f, &s, &vec![1.0; spec.len()]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn record_serializes() {
        let spec = GridSpec::uniform(1, 2).unwrap();
        let f = GridFunction::zeros(spec, vec![]);
        let r = NormRecord::new("mixed_norm", &f, 0.0, Some(DyadicCube::interval(1, 1)));
        let s = serde_json::to_string(&r).unwrap();
        assert!(s.contains("\"attaining_cube\":\"1 1\""));
        let back: NormRecord = serde_json::from_str(&s).unwrap();
        assert_eq!(back, r);
    }

    proptest! {
        #[test]
        fn equal_exponents_give_plain_lp(seed in 0u64..1000, p in 0.3f64..4.0) {
            let spec = GridSpec::uniform(2, 3).unwrap();
            let f = random(&spec, vec![], seed);
            let n = mixed_norm(&f, &MixedNormSpec::scalar(2, p).unwrap()).unwrap();
            let direct = (f.values().iter().map(|v| v.norm().powf(p)).sum::<f64>() * spec.cell_measure()).powf(1.0 / p);
            prop_assert!((n - direct).abs() <= 1e-12 * direct);
        }

        #[test]
        fn chebyshev(seed in 0u64..1000, p in 0.3f64..4.0) {
            let spec = GridSpec::uniform(1, 6).unwrap();
            let f = random(&spec, vec![], seed);
            let weak = weak_quasinorm(&f, p).unwrap();
            let strong = mixed_norm(&f, &MixedNormSpec::scalar(1, p).unwrap()).unwrap();
            prop_assert!(weak <= strong * (1.0 + 1e-12));
        }

        #[test]
        fn size_is_monotone(bits in proptest::collection::vec(any::<bool>(), 64), extra in proptest::collection::vec(any::<bool>(), 64)) {
            let spec = GridSpec::uniform(1, 6).unwrap();
            let e1 = CellSet::from_cells(spec.clone(), bits).unwrap();
            let e2 = e1.union(&CellSet::from_cells(spec, extra).unwrap());
            let c = Collection::all_dyadic(1, 2, 4);
            let s1 = size_indicator(&e1, &c, 100.0, 0).unwrap().value;
            let s2 = size_indicator(&e2, &c, 100.0, 0).unwrap().value;
            prop_assert!(s1 <= s2);
        }
    }
}
