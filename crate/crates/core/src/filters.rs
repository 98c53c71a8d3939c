//! Littlewood-Paley filter banks on the frequency lattice and lacunary
//! families of dyadic-cube-adapted functions.

use std::fmt::Write as _;
use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{check_exponent, LabError, Result};
use crate::fft;
use crate::grid::{Collection, DyadicCube, GridFunction, GridSpec};
use crate::par;

/// Highest derivative order checked for smooth one-dimensional profiles.
pub const MAX_DERIVATIVE_ORDER: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    /// `cos^2(pi/2 * beta(|log2|xi| - k|))` with the Meyer polynomial `beta`.
    SmoothBump,
    /// Indicator of `k <= log2|xi| < k + 1`.
    SharpAnnulus,
}

/// Meyer's auxiliary polynomial: `beta(x) + beta(1 - x) = 1` on `[0, 1]`.
fn meyer_beta(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x.powi(4) * (35.0 - 84.0 * x + 70.0 * x * x - 20.0 * x * x * x)
}

fn bump(u: f64) -> f64 {
    let a = u.abs();
    if a >= 1.0 {
        0.0
    } else {
        let c = (std::f64::consts::FRAC_PI_2 * meyer_beta(a)).cos();
        c * c
    }
}

/// One Littlewood-Paley factor acting on `m = log_res.len()` consecutive axes.
#[derive(Clone, Debug)]
pub struct FilterBank {
    log_res: Vec<u32>,
    k_min: u32,
    k_max: u32,
    profile: Profile,
    decay: f64,
    /// `multipliers[k - k_min]` sampled on the factor lattice, row-major.
    multipliers: Vec<Vec<f64>>,
}

impl FilterBank {
    /// Bank on a factor with the given per-axis resolutions. `k_range`
    /// defaults to `0..=ceil(log2 max|xi|)`.
    pub fn new(log_res: Vec<u32>, k_range: Option<(u32, u32)>, profile: Profile) -> Result<Self> {
        if log_res.is_empty() {
            return Err(LabError::Config("filter bank needs at least one axis".into()));
        }
        let top = Self::nyquist_scale(&log_res);
        let (k_min, k_max) = k_range.unwrap_or((0, top));
        if k_min > k_max {
            return Err(LabError::Config(format!("empty scale range {k_min}..={k_max}")));
        }
        if k_max > top {
            return Err(LabError::Config(format!(
                "scale {k_max} exceeds the Nyquist band (max scale {top})"
            )));
        }
        let m = log_res.len();
        let mut bank = FilterBank {
            log_res,
            k_min,
            k_max,
            profile,
            decay: 100.0 * m as f64,
            multipliers: Vec::new(),
        };
        let radii = bank.lattice_radii();
        bank.multipliers = (k_min..=k_max)
            .map(|k| radii.iter().map(|&r| bank.value(k, r)).collect())
            .collect();
        Ok(bank)
    }

    /// Decay exponent used by [`FilterBank::decay_report`] (default `100 m`).
    pub fn with_decay(mut self, decay: f64) -> Result<Self> {
        check_exponent("filter decay", decay)?;
        self.decay = decay;
        Ok(self)
    }

    /// `ceil(log2 max|xi|)` over the lattice of the given resolutions.
    pub fn nyquist_scale(log_res: &[u32]) -> u32 {
        let r2: f64 = log_res.iter().map(|&l| (1u64 << (2 * (l - 1))) as f64).sum();
        (0.5 * r2.log2()).ceil() as u32
    }

    pub fn dim(&self) -> usize {
        self.log_res.len()
    }

    pub fn log_res(&self) -> &[u32] {
        &self.log_res
    }

    pub fn k_min(&self) -> u32 {
        self.k_min
    }

    pub fn k_max(&self) -> u32 {
        self.k_max
    }

    pub fn scales(&self) -> std::ops::RangeInclusive<u32> {
        self.k_min..=self.k_max
    }

    pub fn profile(&self) -> Profile {
        self.profile
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    /// `psi_k` at radius `|xi|`.
    pub fn value(&self, k: u32, radius: f64) -> f64 {
        if radius <= 0.0 || k < self.k_min || k > self.k_max {
            return 0.0;
        }
        let t = radius.log2().clamp(self.k_min as f64, self.k_max as f64);
        match self.profile {
            Profile::SmoothBump => bump(t - k as f64),
            Profile::SharpAnnulus => {
                let band = (t.floor() as u32).min(self.k_max);
                if band == k {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Multiplier of scale `k` on the factor lattice (row-major).
    pub fn multiplier(&self, k: u32) -> &[f64] {
        &self.multipliers[(k - self.k_min) as usize]
    }

    fn lattice_len(&self) -> usize {
        1usize << self.log_res.iter().sum::<u32>()
    }

    /// Signed lattice frequency of a flat factor index.
    pub fn lattice_point(&self, mut idx: usize) -> Vec<i64> {
        let mut xi = vec![0; self.dim()];
        for j in (0..self.dim()).rev() {
            let n = 1usize << self.log_res[j];
            xi[j] = fft::frequency(idx % n, n);
            idx /= n;
        }
        xi
    }

    fn lattice_radii(&self) -> Vec<f64> {
        (0..self.lattice_len())
            .map(|i| {
                let xi = self.lattice_point(i);
                (xi.iter().map(|&x| (x * x) as f64).sum::<f64>()).sqrt()
            })
            .collect()
    }

    /// `max |sum_k psi_k(xi) - 1|` over nonzero lattice points, and
    /// `max |sum_k psi_k(0)|`.
    pub fn partition_defect(&self) -> (f64, f64) {
        let mut off = 0.0f64;
        let mut origin = 0.0f64;
        for i in 0..self.lattice_len() {
            let s: f64 = self.multipliers.iter().map(|m| m[i]).sum();
            if i == 0 {
                origin = s.abs();
            } else {
                off = off.max((s - 1.0).abs());
            }
        }
        (off, origin)
    }

    /// Measured constants `C_alpha` with
    /// `|d^alpha psi_k(xi)| <= C_alpha 2^{-alpha k} (1 + |xi|/2^k)^{-decay}`
    /// on the lattice, as base-2 logarithms.
    ///
    /// Derivatives are exact Taylor coefficients of the continuous profile;
    /// they are computed for smooth one-dimensional banks up to order
    /// [`MAX_DERIVATIVE_ORDER`], otherwise only `alpha = 0` is checked.
    pub fn decay_report(&self) -> DecayReport {
        let max_order = if self.dim() == 1 && self.profile == Profile::SmoothBump {
            MAX_DERIVATIVE_ORDER
        } else {
            0
        };
        let radii = self.lattice_radii();
        let mut log2_c = vec![f64::NEG_INFINITY; max_order + 1];
        for k in self.scales() {
            for &r in radii.iter().skip(1) {
                let derivs = if max_order == 0 {
                    vec![self.value(k, r)]
                } else {
                    self.radial_derivatives(k, r, max_order)
                };
                let w = self.decay * (1.0 + r / (k as f64).exp2()).log2();
                for (a, dv) in derivs.iter().enumerate() {
                    if *dv != 0.0 {
                        let v = dv.abs().log2() + a as f64 * k as f64 + w;
                        log2_c[a] = log2_c[a].max(v);
                    }
                }
            }
        }
        DecayReport { decay: self.decay, log2_constants: log2_c }
    }

    /// Derivatives of order `0..=n` of the 1-D smooth profile in `|xi|`.
    fn radial_derivatives(&self, k: u32, r: f64, n: usize) -> Vec<f64> {
        let t = r.log2();
        let mut out = vec![0.0; n + 1];
        if t < self.k_min as f64 || t > self.k_max as f64 {
            // clamped region: constant in xi
            out[0] = self.value(k, r);
            return out;
        }
        let u = t - k as f64;
        if u.abs() >= 1.0 {
            return out;
        }
        // jet of |u| in the variable h = xi - r
        let mut lg = jet::log2_shift(r, n);
        lg[0] -= k as f64;
        if u < 0.0 {
            lg.iter_mut().for_each(|c| *c = -*c);
        }
        let b = jet::meyer_beta(&lg);
        let val = jet::cos_squared_half_pi(&b);
        let mut fact = 1.0;
        for (a, c) in val.iter().enumerate() {
            if a > 0 {
                fact *= a as f64;
            }
            out[a] = c * fact;
        }
        out
    }

    /// CSV with one row per lattice point: frequency coordinates then one
    /// column per scale.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for j in 0..self.dim() {
            let _ = write!(s, "xi{j},");
        }
        let cols: Vec<String> = self.scales().map(|k| format!("psi_{k}")).collect();
        s.push_str(&cols.join(","));
        s.push('\n');
        for i in 0..self.lattice_len() {
            for x in self.lattice_point(i) {
                let _ = write!(s, "{x},");
            }
            let vals: Vec<String> = self.multipliers.iter().map(|m| format!("{:e}", m[i])).collect();
            s.push_str(&vals.join(","));
            s.push('\n');
        }
        s
    }
}

/// Measured decay constants, `log2_constants[alpha]`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct DecayReport {
    pub decay: f64,
    pub log2_constants: Vec<f64>,
}

impl DecayReport {
    pub fn all_finite(&self) -> bool {
        self.log2_constants.iter().all(|c| c.is_finite() || *c == f64::NEG_INFINITY)
    }
}

/// Truncated Taylor series arithmetic used for exact profile derivatives.
mod jet {
    pub type Jet = Vec<f64>;

    pub fn mul(a: &[f64], b: &[f64]) -> Jet {
        let n = a.len();
        let mut out = vec![0.0; n];
        for i in 0..n {
            if a[i] == 0.0 {
                continue;
            }
            for j in 0..n - i {
                out[i + j] += a[i] * b[j];
            }
        }
        out
    }

    /// Series of `log2(r + h)` in `h`.
    pub fn log2_shift(r: f64, n: usize) -> Jet {
        let mut out = vec![0.0; n + 1];
        out[0] = r.ln();
        let mut p = 1.0;
        for (i, c) in out.iter_mut().enumerate().skip(1) {
            p /= r;
            let sign = if i % 2 == 1 { 1.0 } else { -1.0 };
            *c = sign * p / i as f64;
        }
        out.iter_mut().for_each(|c| *c /= std::f64::consts::LN_2);
        out
    }

    pub fn meyer_beta(x: &[f64]) -> Jet {
        // x^4 (35 - 84 x + 70 x^2 - 20 x^3) by Horner
        let coeffs = [-20.0, 70.0, -84.0, 35.0];
        let mut acc = vec![0.0; x.len()];
        for c in coeffs {
            acc = mul(&acc, x);
            acc[0] += c;
        }
        let x2 = mul(x, x);
        let x4 = mul(&x2, &x2);
        mul(&acc, &x4)
    }

    /// `cos^2(pi/2 * b) = (1 + cos(pi b)) / 2`.
    pub fn cos_squared_half_pi(b: &[f64]) -> Jet {
        let n = b.len();
        let b0 = std::f64::consts::PI * b[0];
        let mut r: Jet = b.iter().map(|c| std::f64::consts::PI * c).collect();
        r[0] = 0.0;
        // cos(r) and sin(r) for r with zero constant term
        let mut cos_r = vec![0.0; n];
        let mut sin_r = vec![0.0; n];
        let mut pow = vec![0.0; n];
        pow[0] = 1.0;
        let mut fact = 1.0;
        for m in 0..n {
            if m > 0 {
                pow = mul(&pow, &r);
                fact *= m as f64;
            }
            let sign = if (m / 2) % 2 == 0 { 1.0 } else { -1.0 };
            let target = if m % 2 == 0 { &mut cos_r } else { &mut sin_r };
            for (t, p) in target.iter_mut().zip(&pow) {
                *t += sign * p / fact;
            }
        }
        let (c0, s0) = (b0.cos(), b0.sin());
        let mut out: Jet = cos_r.iter().zip(&sin_r).map(|(c, s)| 0.5 * (c0 * c - s0 * s)).collect();
        out[0] += 0.5;
        out
    }
}

/// Tensor product of banks on consecutive axis blocks.
#[derive(Clone, Debug)]
pub struct TensorFilterBank {
    factors: Vec<FilterBank>,
}

impl TensorFilterBank {
    pub fn new(factors: Vec<FilterBank>) -> Result<Self> {
        if factors.is_empty() {
            return Err(LabError::Config("tensor bank needs at least one factor".into()));
        }
        Ok(TensorFilterBank { factors })
    }

    /// One factor per axis group of `spec`, default scale ranges.
    pub fn for_grid(spec: &GridSpec, profile: Profile) -> Result<Self> {
        let mut factors = Vec::new();
        let mut start = 0;
        for &g in spec.groups() {
            factors.push(FilterBank::new(spec.log_res()[start..start + g].to_vec(), None, profile)?);
            start += g;
        }
        Self::new(factors)
    }

    pub fn factors(&self) -> &[FilterBank] {
        &self.factors
    }

    pub fn dim(&self) -> usize {
        self.factors.iter().map(FilterBank::dim).sum()
    }

    pub fn check_grid(&self, spec: &GridSpec) -> Result<()> {
        let res: Vec<u32> = self.factors.iter().flat_map(|f| f.log_res.iter().copied()).collect();
        if res != spec.log_res() {
            return Err(LabError::ShapeMismatch(format!(
                "bank resolutions {res:?} do not match grid {:?}",
                spec.log_res()
            )));
        }
        Ok(())
    }

    /// Every scale tuple, lexicographic.
    pub fn scale_tuples(&self) -> Vec<Vec<u32>> {
        let mut out = vec![vec![]];
        for f in &self.factors {
            out = out
                .into_iter()
                .flat_map(|t| {
                    f.scales().map(move |k| {
                        let mut t = t.clone();
                        t.push(k);
                        t
                    })
                })
                .collect();
        }
        out
    }

    /// Full-grid multiplier; `None` entries leave that factor untouched.
    pub fn multiplier(&self, k: &[Option<u32>]) -> Vec<f64> {
        assert_eq!(k.len(), self.factors.len(), "one scale entry per factor");
        let bits: Vec<u32> = self.factors.iter().map(|f| f.log_res.iter().sum()).collect();
        let total: u32 = bits.iter().sum();
        let mut out = vec![1.0; 1usize << total];
        let mut shift = total;
        for (f, (kk, &b)) in self.factors.iter().zip(k.iter().zip(&bits)) {
            shift -= b;
            if let Some(kk) = kk {
                let m = f.multiplier(*kk);
                let mask = (1usize << b) - 1;
                for (i, v) in out.iter_mut().enumerate() {
                    *v *= m[(i >> shift) & mask];
                }
            }
        }
        out
    }

    pub fn full_multiplier(&self, k: &[u32]) -> Vec<f64> {
        let k: Vec<Option<u32>> = k.iter().map(|&x| Some(x)).collect();
        self.multiplier(&k)
    }

    /// Mask of grid frequencies whose component in some factor is zero.
    pub fn factor_zero_mask(&self) -> Vec<bool> {
        let bits: Vec<u32> = self.factors.iter().map(|f| f.log_res.iter().sum()).collect();
        let total: u32 = bits.iter().sum();
        (0..1usize << total)
            .map(|i| {
                let mut shift = total;
                bits.iter().any(|&b| {
                    shift -= b;
                    (i >> shift) & ((1usize << b) - 1) == 0
                })
            })
            .collect()
    }
}

/// Per-component spectrum of a grid function, reused across bands.
#[derive(Clone, Debug)]
pub struct Spectrum {
    spec: GridSpec,
    vshape: Vec<usize>,
    data: Vec<Complex64>,
}

impl Spectrum {
    pub fn new(f: &GridFunction) -> Self {
        let spec = f.spec().clone();
        let shape = spec.shape();
        let n = spec.len();
        let mut data = f.values().to_vec();
        for comp in data.chunks_mut(n) {
            fft::forward(comp, &shape);
        }
        Spectrum { spec, vshape: f.vshape().to_vec(), data }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn vshape(&self) -> &[usize] {
        &self.vshape
    }

    /// Inverse transform of the spectrum times a real multiplier.
    pub fn apply(&self, mult: &[f64]) -> GridFunction {
        let shape = self.spec.shape();
        let n = self.spec.len();
        let mut data: Vec<Complex64> = self.data.iter().enumerate().map(|(i, v)| v * mult[i % n]).collect();
        for comp in data.chunks_mut(n) {
            fft::inverse(comp, &shape);
        }
        GridFunction::new(self.spec.clone(), self.vshape.clone(), data).expect("transform preserves shape")
    }
}

/// `f * Psi_k` via multiplication on the frequency lattice.
pub fn band_convolve(f: &GridFunction, bank: &TensorFilterBank, k: &[u32]) -> Result<GridFunction> {
    bank.check_grid(f.spec())?;
    if k.len() != bank.factors.len() {
        return Err(LabError::ShapeMismatch(format!(
            "{} scale indices for {} factors",
            k.len(),
            bank.factors.len()
        )));
    }
    for (kk, fb) in k.iter().zip(&bank.factors) {
        if !fb.scales().contains(kk) {
            return Err(LabError::Config(format!("scale {kk} outside {:?}", fb.scales())));
        }
    }
    Ok(Spectrum::new(f).apply(&bank.full_multiplier(k)))
}

/// Remove every frequency with a zero component in some factor, making `f`
/// mean zero along each factor.
pub fn project_mean_zero(f: &GridFunction, bank: &TensorFilterBank) -> Result<GridFunction> {
    bank.check_grid(f.spec())?;
    let mask: Vec<f64> = bank.factor_zero_mask().iter().map(|&z| if z { 0.0 } else { 1.0 }).collect();
    Ok(Spectrum::new(f).apply(&mask))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyKind {
    /// Tensor product of per-axis Haar functions, supported on the cube.
    Haar,
    /// Tensor product of periodized `u exp(-8 u^2)` centered on the cube.
    SmoothWavelet,
}

/// Window selecting the annulus `2^l I \ 2^{l-1} I`, scaled by `2^{M l}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitWindow {
    pub level: u32,
    pub budget: f64,
}

const SMOOTH_A: f64 = 8.0;

/// `L^p`-normalized lacunary family indexed by a collection, evaluated on
/// demand.
#[derive(Clone, Debug)]
pub struct LacunaryFamily {
    spec: GridSpec,
    collection: Collection,
    p: f64,
    kind: FamilyKind,
    decay: f64,
    window: Option<SplitWindow>,
}

/// Outer and inner per-axis window masks and the inner scale.
type AtomWindow = (Vec<Vec<bool>>, Vec<Vec<bool>>, f64);

/// Values of one family member as a tensor of per-axis profiles, possibly
/// windowed.
pub struct Atom {
    norm: f64,
    axis: Vec<Vec<f64>>,
    support: Vec<Vec<usize>>,
    window: Option<AtomWindow>,
    strides: Vec<usize>,
}

impl Atom {
    /// Call `f(index, value)` for every grid point where the atom may be
    /// nonzero.
    #[allow(clippy::needless_range_loop)]
    pub fn for_each(&self, mut f: impl FnMut(usize, f64)) {
        let d = self.axis.len();
        if self.support.iter().any(Vec::is_empty) {
            return;
        }
        let mut it = vec![0usize; d];
        loop {
            let mut idx = 0;
            let mut v = self.norm;
            for j in 0..d {
                let c = self.support[j][it[j]];
                idx += c * self.strides[j];
                v *= self.axis[j][c];
            }
            if let Some((outer, inner, scale)) = &self.window {
                let mut o = true;
                let mut i = true;
                for j in 0..d {
                    let c = self.support[j][it[j]];
                    o &= outer[j][c];
                    i &= inner[j][c];
                }
                v *= if o && !i { *scale } else { 0.0 };
            }
            f(idx, v);
            let mut j = d;
            loop {
                if j == 0 {
                    return;
                }
                j -= 1;
                it[j] += 1;
                if it[j] < self.support[j].len() {
                    break;
                }
                it[j] = 0;
            }
        }
    }

    pub fn dense(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        self.for_each(|i, v| out[i] = v);
        out
    }
}

impl LacunaryFamily {
    /// Build a family; `p` may be `f64::INFINITY` for `L^infinity`
    /// normalization.
    pub fn new(spec: GridSpec, collection: Collection, p: f64, kind: FamilyKind) -> Result<Self> {
        if p.is_nan() || p <= 0.0 {
            return Err(LabError::Exponent { what: "family normalization p", value: p });
        }
        if let Some(d) = collection.dim() {
            if d != spec.dim() {
                return Err(LabError::ShapeMismatch(format!(
                    "collection of dimension {d} on a {}-dimensional grid",
                    spec.dim()
                )));
            }
        }
        let min_cells = match kind {
            FamilyKind::Haar => 1,
            FamilyKind::SmoothWavelet => 2,
        };
        let limit = spec.max_cube_scale().saturating_sub(min_cells);
        let bad: Vec<String> = collection.iter().filter(|q| q.scale() > limit).map(|q| q.to_string()).collect();
        if !bad.is_empty() {
            return Err(LabError::BelowResolution(bad));
        }
        Ok(LacunaryFamily { spec, collection, p, kind, decay: 100.0, window: None })
    }

    pub fn with_decay(mut self, decay: f64) -> Result<Self> {
        check_exponent("family decay", decay)?;
        self.decay = decay;
        Ok(self)
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn collection(&self) -> &Collection {
        &self.collection
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn kind(&self) -> FamilyKind {
        self.kind
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    pub fn window(&self) -> Option<SplitWindow> {
        self.window
    }

    /// Smoothness order at which derivative bounds are meaningful.
    pub fn smoothness(&self) -> usize {
        match (self.kind, self.window) {
            (FamilyKind::SmoothWavelet, None) => MAX_DERIVATIVE_ORDER,
            _ => 0,
        }
    }

    /// Same family restricted to another index collection.
    pub fn with_collection(&self, collection: Collection) -> Result<Self> {
        let mut f = LacunaryFamily::new(self.spec.clone(), collection, self.p, self.kind)?;
        f.decay = self.decay;
        f.window = self.window;
        Ok(f)
    }

    /// The atom of cube `q` with derivative order `alpha` along axis 0
    /// (ignored for `alpha = 0`).
    pub fn atom_derivative(&self, q: &DyadicCube, alpha: usize) -> Result<Atom> {
        if !self.collection.contains(q) {
            return Err(LabError::NotInCollection(q.to_string()));
        }
        let d = self.spec.dim();
        let side = q.side();
        let norm = if self.p.is_infinite() { 1.0 } else { q.measure().powf(-1.0 / self.p) };
        let mut axis = Vec::with_capacity(d);
        let mut support = Vec::with_capacity(d);
        for j in 0..d {
            let l = self.spec.log_res()[j];
            let n = 1usize << l;
            let order = if j == 0 { alpha } else { 0 };
            let (vals, supp) = match self.kind {
                FamilyKind::Haar => {
                    let m = 1usize << (l - q.scale());
                    let start = q.pos()[j] as usize * m;
                    let mut v = vec![0.0; n];
                    for (i, x) in v.iter_mut().enumerate().skip(start).take(m) {
                        *x = if i < start + m / 2 { 1.0 } else { -1.0 };
                    }
                    (v, (start..start + m).collect::<Vec<_>>())
                }
                FamilyKind::SmoothWavelet => {
                    let c = q.center()[j];
                    let v: Vec<f64> = (0..n)
                        .map(|i| {
                            let x = (i as f64 + 0.5) / n as f64;
                            smooth_profile_periodic((x - c) / side, 1.0 / side, order)
                        })
                        .collect();
                    let s = (0..n).filter(|&i| v[i] != 0.0).collect();
                    (v, s)
                }
            };
            axis.push(vals);
            support.push(supp);
        }
        let window = self.window.map(|w| {
            let member = |factor: f64| -> Vec<Vec<bool>> {
                (0..d)
                    .map(|j| {
                        let n = 1usize << self.spec.log_res()[j];
                        let c = q.center()[j];
                        let half = 0.5 * factor * side;
                        (0..n)
                            .map(|i| {
                                if half >= 0.5 {
                                    return true;
                                }
                                let t = ((i as f64 + 0.5) / n as f64 - c).rem_euclid(1.0);
                                t.min(1.0 - t) < half
                            })
                            .collect()
                    })
                    .collect()
            };
            let outer = member((w.level as f64).exp2());
            let inner = if w.level == 0 {
                outer.iter().map(|v| vec![false; v.len()]).collect()
            } else {
                member((w.level as f64 - 1.0).exp2())
            };
            (outer, inner, (w.budget * w.level as f64).exp2())
        });
        if let Some((outer, _, _)) = &window {
            for j in 0..d {
                support[j].retain(|&i| outer[j][i]);
            }
        }
        Ok(Atom { norm, axis, support, window, strides: self.spec.strides() })
    }

    pub fn atom(&self, q: &DyadicCube) -> Result<Atom> {
        self.atom_derivative(q, 0)
    }

    /// Dense samples of `phi_q`.
    pub fn values(&self, q: &DyadicCube) -> Result<Vec<f64>> {
        Ok(self.atom(q)?.dense(self.spec.len()))
    }

    /// Largest `|sum phi_I cell| / ||phi_I||_1` over the family.
    pub fn mean_defect(&self) -> f64 {
        let cubes: Vec<&DyadicCube> = self.collection.iter().collect();
        let cell = self.spec.cell_measure();
        par::map(&cubes, |q| {
            let a = self.atom(q).expect("member");
            let mut vals = Vec::new();
            let mut l1 = 0.0;
            a.for_each(|_, v| {
                vals.push(v);
                l1 += v.abs();
            });
            let s = par::pairwise_sum(&vals);
            if l1 == 0.0 {
                0.0
            } else {
                (s * cell).abs() / (l1 * cell)
            }
        })
        .into_iter()
        .fold(0.0, f64::max)
    }

    /// Measured decay constants
    /// `C_alpha = max |d^alpha phi_I(x)| |I|^{1/p} l^alpha (1 + dist(x,I)/l)^decay`
    /// (base-2 logarithms), where `l` is the side length and derivatives
    /// are taken along axis 0.
    pub fn decay_report(&self) -> DecayReport {
        let orders = if self.spec.dim() == 1 { self.smoothness() } else { 0 };
        let centers = self.spec.cell_centers();
        let cubes: Vec<&DyadicCube> = self.collection.iter().collect();
        let per_cube = par::map(&cubes, |q| {
            let side = q.side();
            let lognorm = if self.p.is_infinite() { 0.0 } else { q.measure().log2() / self.p };
            (0..=orders)
                .map(|a| {
                    let atom = self.atom_derivative(q, a).expect("member");
                    let mut best = f64::NEG_INFINITY;
                    atom.for_each(|i, v| {
                        if v != 0.0 {
                            let w = self.decay * (1.0 + q.torus_distance(&centers[i]) / side).log2();
                            best = best.max(v.abs().log2() + lognorm + w);
                        }
                    });
                    best
                })
                .collect::<Vec<f64>>()
        });
        let mut log2_c = vec![f64::NEG_INFINITY; orders + 1];
        for v in per_cube {
            for (a, c) in v.into_iter().enumerate() {
                log2_c[a] = log2_c[a].max(c);
            }
        }
        DecayReport { decay: self.decay, log2_constants: log2_c }
    }

    /// Write all members in the grid-function binary format with cube ids
    /// as component labels.
    pub fn write_binary(&self, w: impl Write) -> Result<()> {
        let parts = self
            .collection
            .iter()
            .map(|q| GridFunction::from_real(self.spec.clone(), self.values(q)?))
            .collect::<Result<Vec<_>>>()?;
        let labels: Vec<String> = self.collection.iter().map(|q| q.to_string()).collect();
        let f = GridFunction::stack(&parts, vec![parts.len()])?;
        f.write_binary(w, Some(&labels))
    }
}

/// Derivative of order `alpha` in `u` of `sum_m Phi(u + m * period)` with
/// `Phi(u) = u exp(-a u^2)`.
fn smooth_profile_periodic(u: f64, period: f64, alpha: usize) -> f64 {
    let u0 = u - period * (u / period).round();
    let images = (12.0 / period).ceil().max(1.0) as i64;
    let mut s = 0.0;
    for m in -images..=images {
        s += smooth_profile_derivative(u0 + m as f64 * period, alpha);
    }
    s
}

/// `Phi^{(alpha)}(u) = -(1/(2a)) (-sqrt a)^{alpha+1} H_{alpha+1}(sqrt(a) u) exp(-a u^2)`.
fn smooth_profile_derivative(u: f64, alpha: usize) -> f64 {
    let e = (-SMOOTH_A * u * u).exp();
    if e == 0.0 {
        return 0.0;
    }
    let sa = SMOOTH_A.sqrt();
    let n = alpha + 1;
    let z = sa * u;
    // physicists' Hermite recurrence
    let (mut h0, mut h1) = (1.0, 2.0 * z);
    for k in 1..n {
        let h2 = 2.0 * z * h1 - 2.0 * k as f64 * h0;
        h0 = h1;
        h1 = h2;
    }
    let hn = if n == 0 { h0 } else { h1 };
    -(1.0 / (2.0 * SMOOTH_A)) * (-sa).powi(n as i32) * hn * e
}

/// Result of [`spatial_split`].
#[derive(Clone, Debug)]
pub struct SplitResult {
    pub families: Vec<LacunaryFamily>,
    /// `max_I sup |phi_I - sum_l 2^{-M l} phi_{I,l}|`, measured directly.
    pub tail_residual: f64,
    /// A-priori bound from the decay estimate, `C_0 |I|^{-1/p} (2^{l_max}/2 + 1/2)^{-decay}`.
    pub tail_bound: f64,
    pub meets_tolerance: bool,
}

/// Split a family into pieces `phi_{I,l}` supported in `2^l I` with
/// `phi_I = sum_l 2^{-M l} phi_{I,l}` up to the truncation tail.
pub fn spatial_split(fam: &LacunaryFamily, budget: f64, l_max: u32, tol: f64) -> Result<SplitResult> {
    check_exponent("split budget", budget)?;
    if fam.window.is_some() {
        return Err(LabError::Config("family is already split".into()));
    }
    if fam.kind == FamilyKind::Haar {
        return Ok(SplitResult {
            families: vec![fam.clone()],
            tail_residual: 0.0,
            tail_bound: 0.0,
            meets_tolerance: true,
        });
    }
    let families: Vec<LacunaryFamily> = (0..=l_max)
        .map(|level| {
            let mut f = fam.clone();
            f.window = Some(SplitWindow { level, budget });
            f
        })
        .collect();
    let cubes: Vec<&DyadicCube> = fam.collection.iter().collect();
    let n = fam.spec.len();
    let residuals = par::map(&cubes, |q| {
        let mut acc = vec![0.0; n];
        for f in &families {
            let s = (-budget * f.window.unwrap().level as f64).exp2();
            f.atom(q).expect("member").for_each(|i, v| acc[i] += s * v);
        }
        let base = fam.values(q).expect("member");
        base.iter().zip(&acc).fold(0.0f64, |m, (b, a)| m.max((b - a).abs()))
    });
    let tail_residual = residuals.into_iter().fold(0.0, f64::max);
    let c0 = fam.decay_report().log2_constants[0];
    let reach = 0.5 * ((l_max as f64).exp2() - 1.0);
    let tail_bound = fam
        .collection
        .iter()
        .map(|q| {
            if 0.5 * (l_max as f64).exp2() * q.side() >= 0.5 {
                return 0.0;
            }
            let lognorm = if fam.p.is_infinite() { 0.0 } else { -q.measure().log2() / fam.p };
            (c0 + lognorm - fam.decay * (1.0 + reach).log2()).exp2()
        })
        .fold(0.0, f64::max);
    Ok(SplitResult { families, tail_residual, tail_bound, meets_tolerance: tail_residual <= tol })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_function(spec: &GridSpec, seed: u64) -> GridFunction {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vals = (0..spec.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        GridFunction::from_real(spec.clone(), vals).unwrap()
    }

    #[test]
    fn smooth_partition_of_unity_and_origin() {
        for res in [vec![6], vec![4, 5], vec![3, 3, 3]] {
            let b = FilterBank::new(res, None, Profile::SmoothBump).unwrap();
            let (off, origin) = b.partition_defect();
            assert!(off <= 1e-12, "defect {off}");
            assert_eq!(origin, 0.0);
        }
    }

    #[test]
    fn sharp_partition_is_exact() {
        let b = FilterBank::new(vec![7], Some((2, 6)), Profile::SharpAnnulus).unwrap();
        assert_eq!(b.partition_defect(), (0.0, 0.0));
    }

    #[test]
    fn scale_range_beyond_nyquist_is_rejected() {
        assert_eq!(FilterBank::nyquist_scale(&[6]), 5);
        assert!(FilterBank::new(vec![6], Some((0, 6)), Profile::SmoothBump).is_err());
        assert!(FilterBank::new(vec![6], Some((3, 2)), Profile::SmoothBump).is_err());
    }

    #[test]
    fn decay_constants_are_finite() {
        let b = FilterBank::new(vec![8], None, Profile::SmoothBump).unwrap();
        let r = b.decay_report();
        assert_eq!(r.log2_constants.len(), MAX_DERIVATIVE_ORDER + 1);
        assert!(r.log2_constants.iter().all(|c| c.is_finite()));
        let b2 = FilterBank::new(vec![4, 4], None, Profile::SmoothBump).unwrap();
        assert_eq!(b2.decay_report().decay, 200.0);
    }

    #[test]
    fn jet_derivatives_match_finite_differences() {
        let b = FilterBank::new(vec![10], None, Profile::SmoothBump).unwrap();
        let (k, r) = (5u32, 45.3);
        let d = b.radial_derivatives(k, r, 2);
        let h = 1e-3;
        let f = |x: f64| b.value(k, x);
        let d1 = (f(r + h) - f(r - h)) / (2.0 * h);
        let d2 = (f(r + h) - 2.0 * f(r) + f(r - h)) / (h * h);
        assert!((d[0] - f(r)).abs() < 1e-14);
        assert!((d[1] - d1).abs() < 1e-7 * d1.abs().max(1e-3), "{} vs {d1}", d[1]);
        assert!((d[2] - d2).abs() < 1e-4 * d2.abs().max(1e-3), "{} vs {d2}", d[2]);
    }

    #[test]
    fn single_frequency_is_scaled_by_profile() {
        let spec = GridSpec::uniform(1, 7).unwrap();
        let bank = TensorFilterBank::for_grid(&spec, Profile::SmoothBump).unwrap();
        let xi0 = 11.0;
        let f = GridFunction::from_fn(spec, |x| (2.0 * std::f64::consts::PI * xi0 * x[0]).cos()).unwrap();
        for k in bank.factors()[0].scales() {
            let g = band_convolve(&f, &bank, &[k]).unwrap();
            let s = bank.factors()[0].value(k, xi0);
            let err = g.sub(&f.scale(Complex64::new(s, 0.0))).unwrap().sup_norm();
            assert!(err < 1e-12, "k={k} err={err}");
        }
    }

    #[test]
    fn band_convolve_matches_direct_circular_convolution() {
        let spec = GridSpec::uniform(1, 6).unwrap();
        let n = spec.len();
        let bank = TensorFilterBank::for_grid(&spec, Profile::SmoothBump).unwrap();
        let f = random_function(&spec, 3);
        for k in [1u32, 3, 5] {
            // spatial kernel by direct inverse DFT of the multiplier
            let m = bank.factors()[0].multiplier(k);
            let kernel: Vec<Complex64> = (0..n)
                .map(|x| {
                    (0..n)
                        .map(|xi| {
                            let ph = 2.0 * std::f64::consts::PI * (xi * x) as f64 / n as f64;
                            Complex64::from_polar(m[xi], ph)
                        })
                        .sum::<Complex64>()
                        / n as f64
                })
                .collect();
            let direct: Vec<Complex64> = (0..n)
                .map(|x| (0..n).map(|y| f.values()[y] * kernel[(x + n - y) % n]).sum())
                .collect();
            let g = band_convolve(&f, &bank, &[k]).unwrap();
            let scale = direct.iter().fold(0.0f64, |a, v| a.max(v.norm()));
            let err = g.values().iter().zip(&direct).fold(0.0f64, |a, (u, v)| a.max((u - v).norm()));
            assert!(err <= 1e-10 * scale.max(1e-300), "k={k}: {err} vs {scale}");
        }
    }

    #[test]
    fn calderon_reproduction_on_mean_zero_functions() {
        let spec = GridSpec::new(vec![5, 5], vec![1, 1]).unwrap();
        let bank = TensorFilterBank::for_grid(&spec, Profile::SmoothBump).unwrap();
        let f = project_mean_zero(&random_function(&spec, 9), &bank).unwrap();
        let mut acc = GridFunction::zeros(spec, vec![]);
        for k in bank.scale_tuples() {
            acc = acc.add(&band_convolve(&f, &bank, &k).unwrap()).unwrap();
        }
        assert!(acc.sub(&f).unwrap().sup_norm() <= 1e-10 * f.sup_norm());
    }

    #[test]
    fn tensor_band_equals_sequential_factor_bands() {
        let spec = GridSpec::new(vec![4, 5], vec![1, 1]).unwrap();
        let bank = TensorFilterBank::for_grid(&spec, Profile::SmoothBump).unwrap();
        let f = random_function(&spec, 5);
        let k = [2u32, 3];
        let joint = band_convolve(&f, &bank, &k).unwrap();
        let s1 = Spectrum::new(&f).apply(&bank.multiplier(&[Some(2), None]));
        let s12 = Spectrum::new(&s1).apply(&bank.multiplier(&[None, Some(3)]));
        let s2 = Spectrum::new(&f).apply(&bank.multiplier(&[None, Some(3)]));
        let s21 = Spectrum::new(&s2).apply(&bank.multiplier(&[Some(2), None]));
        assert!(joint.sub(&s12).unwrap().sup_norm() < 1e-12);
        assert!(joint.sub(&s21).unwrap().sup_norm() < 1e-12);
    }

    #[test]
    fn haar_member_example() {
        let spec = GridSpec::uniform(1, 4).unwrap();
        let c = Collection::from_cubes([DyadicCube::interval(1, 0)]).unwrap();
        let fam = LacunaryFamily::new(spec.clone(), c, 2.0, FamilyKind::Haar).unwrap();
        let v = fam.values(&DyadicCube::interval(1, 0)).unwrap();
        let s = 2f64.sqrt();
        let expect: Vec<f64> = (0..16).map(|i| if i < 4 { s } else if i < 8 { -s } else { 0.0 }).collect();
        assert_eq!(v, expect);
        let l2: f64 = v.iter().map(|x| x * x).sum::<f64>() * spec.cell_measure();
        assert!((l2 - 1.0).abs() < 1e-15);
        assert!(fam.mean_defect() <= 1e-15);
    }

    #[test]
    fn smooth_family_is_mean_zero_with_finite_constants() {
        let spec = GridSpec::uniform(1, 8).unwrap();
        let fam = LacunaryFamily::new(spec, Collection::all_dyadic(1, 0, 6), 2.0, FamilyKind::SmoothWavelet).unwrap();
        assert!(fam.mean_defect() <= 1e-10);
        let r = fam.decay_report();
        assert_eq!(r.log2_constants.len(), MAX_DERIVATIVE_ORDER + 1);
        assert!(r.log2_constants.iter().all(|c| c.is_finite()));
    }

    #[test]
    fn smooth_family_satisfies_stored_bound_pointwise() {
        let spec = GridSpec::uniform(1, 7).unwrap();
        let fam = LacunaryFamily::new(spec.clone(), Collection::all_dyadic(1, 1, 4), 1.0, FamilyKind::SmoothWavelet).unwrap();
        let c0 = fam.decay_report().log2_constants[0];
        for q in fam.collection().iter() {
            for i in 0..spec.len() {
                // independent evaluation straight from the closed form
                let x = spec.cell_center(i)[0];
                let u = (x - q.center()[0]) / q.side();
                let direct: f64 = (-20..=20).map(|m| {
                    let v = u + m as f64 / q.side();
                    v * (-8.0 * v * v).exp()
                }).sum::<f64>() / q.side();
                let bound = (c0 - q.side().log2() - 100.0 * (1.0 + q.torus_distance(&[x]) / q.side()).log2()).exp2();
                assert!(direct.abs() <= bound * (1.0 + 1e-9) + 1e-300, "{q} at {x}");
            }
        }
    }

    #[test]
    fn derivative_closed_form_matches_finite_difference() {
        let h = 1e-5;
        for a in 0..4 {
            let u = 0.37;
            let fd = (smooth_profile_derivative(u + h, a) - smooth_profile_derivative(u - h, a)) / (2.0 * h);
            let ex = smooth_profile_derivative(u, a + 1);
            assert!((fd - ex).abs() < 1e-5 * ex.abs().max(1.0), "order {a}: {fd} vs {ex}");
        }
        assert!((smooth_profile_derivative(0.3, 0) - 0.3 * (-8.0f64 * 0.09).exp()).abs() < 1e-15);
    }

    #[test]
    fn below_resolution_cubes_are_listed() {
        let spec = GridSpec::uniform(1, 4).unwrap();
        let c = Collection::from_cubes([DyadicCube::interval(4, 1), DyadicCube::interval(2, 0)]).unwrap();
        match LacunaryFamily::new(spec, c, 2.0, FamilyKind::Haar) {
            Err(LabError::BelowResolution(v)) => assert_eq!(v, vec!["4 1".to_string()]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn split_reconstructs_and_respects_supports() {
        let spec = GridSpec::uniform(1, 8).unwrap();
        let c = Collection::from_cubes([DyadicCube::interval(4, 3), DyadicCube::interval(6, 40)]).unwrap();
        let fam = LacunaryFamily::new(spec.clone(), c, 2.0, FamilyKind::SmoothWavelet).unwrap().with_decay(20.0).unwrap();
        let split = spatial_split(&fam, 20.0, 3, 1e-8).unwrap();
        assert_eq!(split.families.len(), 4);
        assert!(split.tail_residual <= split.tail_bound, "{} > {}", split.tail_residual, split.tail_bound);
        for f in &split.families {
            let l = f.window().unwrap().level;
            for q in f.collection().iter() {
                let v = f.values(q).unwrap();
                for (i, x) in v.iter().enumerate() {
                    if !q.dilate_contains((l as f64).exp2(), &spec.cell_center(i)) {
                        assert_eq!(*x, 0.0);
                    }
                }
            }
            assert!(f.mean_defect() <= 1e-10);
        }
        let full = spatial_split(&fam, 20.0, 7, 1e-8).unwrap();
        assert_eq!(full.tail_residual, 0.0);
        assert!(full.meets_tolerance);
    }

    #[test]
    fn haar_split_is_identity() {
        let spec = GridSpec::uniform(1, 5).unwrap();
        let fam = LacunaryFamily::new(spec, Collection::all_dyadic(1, 0, 2), 2.0, FamilyKind::Haar).unwrap();
        let s = spatial_split(&fam, 100.0, 5, 1e-8).unwrap();
        assert_eq!(s.families.len(), 1);
        assert_eq!(s.tail_residual, 0.0);
    }

    #[test]
    fn family_binary_export_roundtrips() {
        let spec = GridSpec::uniform(1, 4).unwrap();
        let fam = LacunaryFamily::new(spec, Collection::all_dyadic(1, 0, 1), 2.0, FamilyKind::Haar).unwrap();
        let mut buf = Vec::new();
        fam.write_binary(&mut buf).unwrap();
        let (g, labels) = GridFunction::read_binary(&buf[..]).unwrap();
        assert_eq!(labels.unwrap(), vec!["0 0", "1 0", "1 1"]);
        assert_eq!(g.ncomp(), 3);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let b = FilterBank::new(vec![3], None, Profile::SharpAnnulus).unwrap();
        let csv = b.to_csv();
        assert!(csv.starts_with("xi0,psi_0,psi_1,psi_2\n"));
        assert_eq!(csv.lines().count(), 9);
    }
}
