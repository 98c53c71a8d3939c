//! Exceptional sets, major subsets, the two level-set stopping times and
//! the sparse family construction with its verification and bounds.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::decomposition::CoefficientMap;
use crate::error::{check_exponent, LabError, Result};
use crate::grid::{maximal_cover, CellSet, Collection, DyadicCube, GridSpec};
use crate::norms::{self, local_sf_average, smoothed_average};
use crate::par;
use crate::square::{discrete_square_function, localized_square_function, SquareFunctionResult};
use crate::weights::{maximal_of_values, WindowMode, Weight};

fn lp_norm(spec: &GridSpec, vals: &[f64], p: f64) -> f64 {
    let terms: Vec<f64> = vals.iter().map(|v| v.abs().powf(p)).collect();
    (par::pairwise_sum(&terms) * spec.cell_measure()).powf(1.0 / p)
}

/// Pointwise `||Sf(x)||_Q` (plain modulus for scalar results).
fn pointwise(sf: &SquareFunctionResult, q: Option<&[f64]>) -> Result<Vec<f64>> {
    norms::vector_norm(&sf.function, q.unwrap_or(&[]))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExceptionalOptions {
    /// The `10` in the threshold `C 2^{10k/p} ||Sf||_p`.
    pub exponent: f64,
    /// Target: `|Omega| < budget` (torus measure 1).
    pub budget: f64,
    pub c_start: f64,
    pub c_max: f64,
    pub mode: WindowMode,
}

impl Default for ExceptionalOptions {
    fn default() -> Self {
        ExceptionalOptions { exponent: 10.0, budget: 0.1, c_start: 1.0, c_max: 1e12, mode: WindowMode::Rectangles }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExceptionalLevel {
    pub k: u32,
    pub threshold: f64,
    pub omega: CellSet,
    /// `Omega_k` together with `{M 1_{Omega_k} > 2^{-k}}`.
    pub omega_tilde: CellSet,
}

/// Measured quantities of one level, for reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub k: u32,
    pub threshold: f64,
    pub measure: f64,
    pub tilde_measure: f64,
    /// `2^{-10k} C^{-p}` with the configured exponent in place of 10.
    pub chebyshev_bound: f64,
    /// `|Omega~_k| / (2^k |Omega_k|)`, the measured maximal-operator constant.
    pub maximal_ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExceptionalSets {
    pub c: f64,
    pub p: f64,
    pub sf_norm: f64,
    pub levels: Vec<ExceptionalLevel>,
    pub union: CellSet,
    /// Number of `C` values tried.
    pub attempts: usize,
    exponent: f64,
}

impl ExceptionalSets {
    pub fn measure(&self) -> f64 {
        self.union.measure()
    }

    pub fn summary(&self) -> Vec<LevelSummary> {
        self.levels
            .iter()
            .map(|l| {
                let m = l.omega.measure();
                LevelSummary {
                    k: l.k,
                    threshold: l.threshold,
                    measure: m,
                    tilde_measure: l.omega_tilde.measure(),
                    chebyshev_bound: (-(self.exponent * l.k as f64)).exp2() * self.c.powf(-self.p),
                    maximal_ratio: (m > 0.0).then(|| l.omega_tilde.measure() / ((l.k as f64).exp2() * m)),
                }
            })
            .collect()
    }
}

fn exceptional_at(spec: &GridSpec, s: &[f64], norm: f64, p: f64, c: f64, opts: &ExceptionalOptions) -> ExceptionalSets {
    let smax = s.iter().copied().fold(0.0, f64::max);
    let mut levels = Vec::new();
    let mut union = CellSet::empty(spec.clone());
    let mut k = 0u32;
    loop {
        let threshold = c * (opts.exponent * k as f64 / p).exp2() * norm;
        if smax <= threshold {
            break;
        }
        let omega = CellSet::from_cells(spec.clone(), s.iter().map(|&v| v > threshold).collect()).expect("grid");
        let ind: Vec<f64> = omega.cells().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        let m = maximal_of_values(spec, &ind, opts.mode);
        let level = (-(k as f64)).exp2();
        let tilde = CellSet::from_cells(
            spec.clone(),
            m.iter().zip(omega.cells()).map(|(&v, &b)| b || v > level).collect(),
        )
        .expect("grid");
        union = union.union(&tilde);
        levels.push(ExceptionalLevel { k, threshold, omega, omega_tilde: tilde });
        k += 1;
    }
    ExceptionalSets { c, p, sf_norm: norm, levels, union, attempts: 0, exponent: opts.exponent }
}

/// `Omega_k = {||Sf|| > C 2^{ek/p} ||Sf||_p}`, their maximal dilates and
/// the union, with `C` doubled until `|Omega| < budget`.
pub fn build_exceptional_sets(
    sf: &SquareFunctionResult,
    p: f64,
    q: Option<&[f64]>,
    opts: &ExceptionalOptions,
) -> Result<ExceptionalSets> {
    check_exponent("exceptional-set p", p)?;
    let spec = sf.function.spec();
    let s = pointwise(sf, q)?;
    let norm = lp_norm(spec, &s, p);
    let mut c = opts.c_start;
    let mut attempts = 0;
    loop {
        attempts += 1;
        let mut e = exceptional_at(spec, &s, norm, p, c, opts);
        e.attempts = attempts;
        if e.measure() < opts.budget {
            return Ok(e);
        }
        if 2.0 * c > opts.c_max {
            return Err(LabError::BudgetUnattainable { budget: opts.budget, measure: e.measure(), c });
        }
        c *= 2.0;
    }
}

/// `F \ Omega`, rejected unless it keeps at least half of `F`.
pub fn major_subset(f: &CellSet, exc: &ExceptionalSets) -> Result<CellSet> {
    if f.is_empty() {
        return Err(LabError::Config("major subset of an empty set".into()));
    }
    let kept = f.difference(&exc.union);
    if 2 * kept.count() < f.count() {
        return Err(LabError::MajorityViolated { kept: kept.measure(), half: f.measure() / 2.0 });
    }
    Ok(kept)
}

/// Which averages drive a stopping time.
#[derive(Clone, Debug)]
pub enum AverageSource<'a> {
    /// `|I0|^{-1/p} ||S_{I(I0)} f||_{L^p(L^Q)}`, selected when `>=` the
    /// level threshold.
    SfAverage { coeffs: &'a CoefficientMap, p: f64, q: Option<&'a [f64]> },
    /// Smoothed average of `1_set`, selected when `>` the level threshold.
    SizeAverage { set: &'a CellSet, decay: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    SfAverage,
    SizeAverage,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectedCube {
    pub cube: DyadicCube,
    pub average: f64,
    /// Members of the collection assigned to this cube at this level.
    pub members: Vec<DyadicCube>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoppingLevel {
    pub n: u32,
    pub threshold: f64,
    /// Collects the members whose candidates all have zero average.
    pub terminal: bool,
    pub selected: Vec<SelectedCube>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoppingDecomposition {
    pub direction: Direction,
    pub reference: f64,
    pub levels: Vec<StoppingLevel>,
    /// Members that no admissible candidate covers.
    pub excluded: Vec<DyadicCube>,
}

impl StoppingDecomposition {
    /// `(n, head)` for every assigned member.
    pub fn assignment(&self) -> BTreeMap<DyadicCube, (u32, DyadicCube)> {
        let mut out = BTreeMap::new();
        for l in &self.levels {
            for s in &l.selected {
                for m in &s.members {
                    out.insert(m.clone(), (l.n, s.cube.clone()));
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, Default)]
pub struct StoppingOptions {
    /// Closure cap: candidates are members and their ancestors of scale `>= cap`.
    pub cap: u32,
    /// Candidates must meet this set (e.g. the complement of `Omega_0`).
    pub admissible: Option<CellSet>,
}

fn maximal_of(set: &BTreeSet<DyadicCube>) -> Vec<DyadicCube> {
    set.iter()
        .filter(|q| (0..q.scale()).all(|k| !set.contains(&q.ancestor_at(k).expect("coarser scale"))))
        .cloned()
        .collect()
}

/// Greedy level-set selection of maximal cubes with thresholds
/// `reference / 2^n`, `n = 1, 2, ...`, removing everything inside the
/// selected cubes after each level.
pub fn stopping_time(
    spec: &GridSpec,
    c: &Collection,
    source: &AverageSource<'_>,
    reference: f64,
    opts: &StoppingOptions,
) -> Result<StoppingDecomposition> {
    if !(reference.is_finite() && reference > 0.0) {
        return Err(LabError::Config(format!("stopping-time reference must be positive, got {reference}")));
    }
    let direction = match source {
        AverageSource::SfAverage { .. } => Direction::SfAverage,
        AverageSource::SizeAverage { .. } => Direction::SizeAverage,
    };
    let closure = c.relevant_closure(opts.cap);
    let candidates: Vec<DyadicCube> = closure
        .iter()
        .filter(|q| match &opts.admissible {
            Some(a) => spec.cube_cells(q).into_iter().any(|i| a.contains_cell(i)),
            None => true,
        })
        .cloned()
        .collect();
    let indicator = match source {
        AverageSource::SizeAverage { set, .. } => set.indicator().real_parts(),
        AverageSource::SfAverage { .. } => Vec::new(),
    };
    let averages: Vec<f64> = par::map(&candidates, |q| match source {
        AverageSource::SfAverage { coeffs, p, q: qs } => local_sf_average(spec, coeffs, c, q, *p, *qs),
        AverageSource::SizeAverage { decay, .. } => smoothed_average(spec, &indicator, q, *decay),
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let avg: BTreeMap<DyadicCube, f64> = candidates.iter().cloned().zip(averages).collect();
    let passes = |a: f64, t: f64| match direction {
        Direction::SfAverage => a >= t,
        Direction::SizeAverage => a > t,
    };

    let mut remaining: BTreeSet<DyadicCube> = candidates.iter().cloned().collect();
    let mut unassigned: BTreeSet<DyadicCube> = c.iter().filter(|q| remaining.contains(q)).cloned().collect();
    let excluded: Vec<DyadicCube> = c.iter().filter(|q| !remaining.contains(q)).cloned().collect();
    let mut levels = Vec::new();
    let mut n = 1u32;
    while !unassigned.is_empty() {
        let amax = remaining.iter().map(|q| avg[q]).fold(0.0, f64::max);
        if amax == 0.0 {
            let heads = maximal_of(&remaining);
            let selected = heads
                .into_iter()
                .map(|h| {
                    let members: Vec<DyadicCube> = unassigned.iter().filter(|m| h.contains(m)).cloned().collect();
                    SelectedCube { average: 0.0, cube: h, members }
                })
                .filter(|s| !s.members.is_empty())
                .collect();
            levels.push(StoppingLevel { n, threshold: 0.0, terminal: true, selected });
            break;
        }
        // jump over levels at which nothing can be selected
        let ratio = (reference / amax).log2();
        let first = match direction {
            Direction::SfAverage => ratio.ceil(),
            Direction::SizeAverage => ratio.floor() + 1.0,
        };
        // one level of slack against rounding in the logarithm
        if first - 1.0 > n as f64 {
            n = (first - 1.0) as u32;
        }
        let threshold = reference / (n as f64).exp2();
        let passing: BTreeSet<DyadicCube> = remaining.iter().filter(|q| passes(avg[*q], threshold)).cloned().collect();
        if passing.is_empty() {
            n += 1;
            continue;
        }
        let mut selected = Vec::new();
        for h in maximal_of(&passing) {
            let members: Vec<DyadicCube> = unassigned.iter().filter(|m| h.contains(m)).cloned().collect();
            for m in &members {
                unassigned.remove(m);
            }
            remaining.retain(|q| !h.contains(q));
            selected.push(SelectedCube { average: avg[&h], cube: h, members });
        }
        levels.push(StoppingLevel { n, threshold, terminal: false, selected });
        if levels.len() > closure.len() {
            return Err(LabError::Invariant("stopping time exceeded the collection size".into()));
        }
        n += 1;
    }
    Ok(StoppingDecomposition { direction, reference, levels, excluded })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub n1: u32,
    pub head1: DyadicCube,
    pub n2: u32,
    pub head2: DyadicCube,
    pub members: Vec<DyadicCube>,
}

/// Intersect two decompositions of the same collection into
/// `(n1, I1, n2, I2)` buckets; every member lands in exactly one bucket and
/// lies inside both heads.
pub fn intersect_buckets(c: &Collection, d1: &StoppingDecomposition, d2: &StoppingDecomposition) -> Result<Vec<Bucket>> {
    let (a1, a2) = (d1.assignment(), d2.assignment());
    let mut buckets: BTreeMap<(u32, DyadicCube, u32, DyadicCube), Vec<DyadicCube>> = BTreeMap::new();
    for q in c.iter() {
        let (Some((n1, h1)), Some((n2, h2))) = (a1.get(q), a2.get(q)) else {
            if d1.excluded.contains(q) || d2.excluded.contains(q) {
                continue;
            }
            return Err(LabError::Invariant(format!("cube {q} is in no bucket")));
        };
        if !(h1.contains(q) && h2.contains(q)) {
            return Err(LabError::Invariant(format!("cube {q} is not inside its bucket heads")));
        }
        buckets.entry((*n1, h1.clone(), *n2, h2.clone())).or_default().push(q.clone());
    }
    Ok(buckets
        .into_iter()
        .map(|((n1, head1, n2, head2), members)| Bucket { n1, head1, n2, head2, members })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountingBound {
    pub n: u32,
    /// `sum |I|` over the cubes selected at level `n`.
    pub mass: f64,
    /// `2^{np} (||Sf||_p / reference)^p`.
    pub bound: f64,
    pub ratio: f64,
}

/// Measured packing of each level against `2^{np}`, normalized by `norm`.
pub fn counting_bounds(d: &StoppingDecomposition, norm: f64, p: f64) -> Vec<CountingBound> {
    d.levels
        .iter()
        .filter(|l| !l.terminal)
        .map(|l| {
            let mass: f64 = l.selected.iter().map(|s| s.cube.measure()).sum();
            let bound = (l.n as f64 * p).exp2() * (norm / d.reference).powf(p);
            CountingBound { n: l.n, mass, bound, ratio: if bound > 0.0 { mass / bound } else { f64::INFINITY } }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseOptions {
    pub c_start: f64,
    pub c_max: f64,
    /// Decay exponent of `chi~_Q`.
    pub decay: f64,
    pub mode: WindowMode,
    pub q: Option<Vec<f64>>,
}

impl Default for SparseOptions {
    fn default() -> Self {
        SparseOptions { c_start: 1.0, c_max: 1e12, decay: 4.0, mode: WindowMode::Cubes, q: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseNode {
    pub cube: DyadicCube,
    pub generation: u32,
    pub parent: Option<DyadicCube>,
    pub children: Vec<DyadicCube>,
    /// Cells of `E_Q = Q \ union(children)` and of `Q`.
    pub e_cells: usize,
    pub q_cells: usize,
    pub e_measure: f64,
    /// `I_Q`: members inside `Q` not contained in the stopping set.
    pub members: Vec<DyadicCube>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseFamily {
    pub c_const: f64,
    pub p1: f64,
    pub attempts: usize,
    pub nodes: Vec<SparseNode>,
    pub verified: bool,
}

impl SparseFamily {
    /// Cells of `E_Q` for node `i`.
    pub fn e_cells(&self, spec: &GridSpec, i: usize) -> Vec<usize> {
        let node = &self.nodes[i];
        let kids = CellSet::from_cubes(spec.clone(), node.children.iter());
        spec.cube_cells(&node.cube).into_iter().filter(|&x| !kids.contains_cell(x)).collect()
    }
}

/// Outcome of one construction attempt at a fixed constant.
enum Attempt {
    Done(Vec<SparseNode>),
    TooLarge,
}

fn construct_at(
    spec: &GridSpec,
    coeffs: &CoefficientMap,
    c: &Collection,
    w: &Weight,
    p1: f64,
    cc: f64,
    opts: &SparseOptions,
) -> Result<Attempt> {
    let mut nodes = Vec::new();
    let mut queue: Vec<(DyadicCube, u32, Option<DyadicCube>)> =
        c.maximal().into_iter().map(|q| (q, 0, None)).collect();
    let depth_cap = spec.max_cube_scale() + 1;
    let mut head = 0;
    while head < queue.len() {
        let (q0, generation, parent) = queue[head].clone();
        head += 1;
        if generation > depth_cap {
            return Err(LabError::Invariant("sparse recursion deeper than the grid".into()));
        }
        let cells = spec.cube_cells(&q0);
        // square-function part of the stopping set
        let sf = localized_square_function(spec, coeffs, c, &q0)?;
        let s = pointwise(&sf, opts.q.as_deref())?;
        let avg = local_sf_average(spec, coeffs, c, &q0, p1, opts.q.as_deref())?;
        // weight part
        let chi: Vec<f64> = (0..spec.len())
            .map(|i| w.values()[i] * q0.decay_weight(&spec.cell_center(i), opts.decay))
            .collect();
        let mw = maximal_of_values(spec, &chi, opts.mode);
        let wavg = smoothed_average(spec, w.values(), &q0, opts.decay)?;
        let mut x = CellSet::empty(spec.clone());
        for &i in &cells {
            if s[i] > cc * avg || mw[i] > cc * wavg {
                x.insert(i);
            }
        }
        if 2 * x.count() > cells.len() {
            return Ok(Attempt::TooLarge);
        }
        let children: Vec<DyadicCube> = maximal_cover(&x)
            .cubes
            .into_iter()
            .filter(|k| c.iter().any(|m| k.contains(m)))
            .collect();
        let members: Vec<DyadicCube> = c
            .iter()
            .filter(|m| q0.contains(m) && !spec.cube_cells(m).into_iter().all(|i| x.contains_cell(i)))
            .cloned()
            .collect();
        let kids = CellSet::from_cubes(spec.clone(), children.iter());
        let e_cells = cells.iter().filter(|&&i| !kids.contains_cell(i)).count();
        for k in &children {
            queue.push((k.clone(), generation + 1, Some(q0.clone())));
        }
        nodes.push(SparseNode {
            e_measure: e_cells as f64 * spec.cell_measure(),
            cube: q0,
            generation,
            parent,
            children,
            e_cells,
            q_cells: cells.len(),
            members,
        });
    }
    Ok(Attempt::Done(nodes))
}

/// Sparse family for the coefficients over `c` and the weight `w`, with the
/// stopping constant doubled (and the construction restarted) until every
/// stopping set keeps at most half of its cube.
pub fn sparse_construct(
    spec: &GridSpec,
    coeffs: &CoefficientMap,
    c: &Collection,
    w: &Weight,
    p1: f64,
    opts: &SparseOptions,
) -> Result<SparseFamily> {
    check_exponent("sparse p1", p1)?;
    if c.is_empty() {
        return Err(LabError::Config("sparse construction needs a nonempty collection".into()));
    }
    if w.spec() != spec {
        return Err(LabError::ShapeMismatch("weight lives on another grid".into()));
    }
    let mut cc = opts.c_start;
    let mut attempts = 0;
    loop {
        attempts += 1;
        match construct_at(spec, coeffs, c, w, p1, cc, opts)? {
            Attempt::Done(nodes) => {
                let mut fam = SparseFamily { c_const: cc, p1, attempts, nodes, verified: false };
                verify_sparse(spec, coeffs, c, &mut fam)?;
                return Ok(fam);
            }
            Attempt::TooLarge if 2.0 * cc <= opts.c_max => cc *= 2.0,
            Attempt::TooLarge => {
                return Err(LabError::SparseInvariant(format!("no constant up to {} keeps |E_Q| >= |Q|/2", opts.c_max)))
            }
        }
    }
}

/// Check the sparse invariants exactly and mark the family verified.
pub fn verify_sparse(spec: &GridSpec, coeffs: &CoefficientMap, c: &Collection, fam: &mut SparseFamily) -> Result<()> {
    let mut owner = vec![usize::MAX; spec.len()];
    let mut seen: BTreeSet<DyadicCube> = BTreeSet::new();
    for (i, node) in fam.nodes.iter().enumerate() {
        let e = fam.e_cells(spec, i);
        if 2 * e.len() < node.q_cells || e.len() != node.e_cells {
            return Err(LabError::SparseInvariant(format!("|E_Q| < |Q|/2 at {}", node.cube)));
        }
        for x in e {
            if owner[x] != usize::MAX {
                return Err(LabError::SparseInvariant(format!("E sets of {} and {} overlap", fam.nodes[owner[x]].cube, node.cube)));
            }
            owner[x] = i;
        }
        for m in &node.members {
            if !c.contains(m) || !seen.insert(m.clone()) {
                return Err(LabError::SparseInvariant(format!("member {m} assigned twice or foreign")));
            }
        }
        // the localized square function over I_Q is constant on children
        let local = Collection::from_cubes(node.members.iter().cloned())?;
        let sf = discrete_square_function(spec, &coeffs.restricted(&local), &local)?;
        for k in &node.children {
            let cells = spec.cube_cells(k);
            for comp in 0..sf.function.ncomp() {
                let v = sf.function.component(comp);
                if cells.iter().any(|&x| v[x] != v[cells[0]]) {
                    return Err(LabError::SparseInvariant(format!("localized S not constant on child {k}")));
                }
            }
        }
    }
    if seen.len() != c.len() {
        return Err(LabError::SparseInvariant(format!("{} of {} members assigned", seen.len(), c.len())));
    }
    fam.verified = true;
    Ok(())
}

/// Weight factor in the sparse bound.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightFactor {
    /// `(avg_{chi~_Q} w^{1+eps_p})^{1/(1+eps_p)} |Q|`.
    Smoothed,
    /// `w(E_Q)`.
    SparseSet,
}

/// `sum_Q (|Q|^{-1/p1} ||S_{I(Q)} f||_{p1})^p * weight factor`.
#[allow(clippy::too_many_arguments)]
pub fn sparse_bound_rhs(
    spec: &GridSpec,
    coeffs: &CoefficientMap,
    c: &Collection,
    fam: &SparseFamily,
    w: &Weight,
    p: f64,
    eps_p: f64,
    factor: WeightFactor,
    opts: &SparseOptions,
) -> Result<f64> {
    if !fam.verified {
        return Err(LabError::Unverified);
    }
    check_exponent("sparse p", p)?;
    if !(eps_p.is_finite() && eps_p >= 0.0) {
        return Err(LabError::Config(format!("eps_p must be >= 0, got {eps_p}")));
    }
    let powered: Vec<f64> = w.values().iter().map(|v| v.powf(1.0 + eps_p)).collect();
    let terms = par::map_range(fam.nodes.len(), |i| -> Result<f64> {
        let q = &fam.nodes[i].cube;
        let a = local_sf_average(spec, coeffs, c, q, fam.p1, opts.q.as_deref())?;
        if a == 0.0 {
            return Ok(0.0);
        }
        let wf = match factor {
            WeightFactor::Smoothed => smoothed_average(spec, &powered, q, opts.decay)?.powf(1.0 / (1.0 + eps_p)) * q.measure(),
            WeightFactor::SparseSet => {
                let e: BTreeSet<usize> = fam.e_cells(spec, i).into_iter().collect();
                w.mass(|x| e.contains(&x))
            }
        };
        Ok(a.powf(p) * wf)
    });
    let terms: Vec<f64> = terms.into_iter().collect::<Result<_>>()?;
    Ok(par::pairwise_sum(&terms))
}

/// Split `c` by the maximal cubes of `{||Sf|| > alpha}`: members inside one
/// of them go to the first collection, the rest to the second.
pub fn interpolation_split(
    sf: &SquareFunctionResult,
    q: Option<&[f64]>,
    c: &Collection,
    alpha: f64,
) -> Result<(Collection, Collection)> {
    check_exponent("split level", alpha)?;
    let spec = sf.function.spec();
    let s = pointwise(sf, q)?;
    let set = CellSet::from_cells(spec.clone(), s.iter().map(|&v| v > alpha).collect())?;
    let cover = maximal_cover(&set).cubes;
    let (mut c1, mut c2) = (Collection::new(), Collection::new());
    for m in c.iter() {
        if cover.iter().any(|k| k.contains(m)) {
            c1.insert(m.clone())?;
        } else {
            c2.insert(m.clone())?;
        }
    }
    Ok((c1, c2))
}
