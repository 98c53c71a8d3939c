//! Seeded test functions stored as finite Fourier sums, so the same fixture
//! can be sampled on any grid that resolves its frequencies.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::fft;
use crate::grid::{GridFunction, GridSpec, DEFAULT_SAMPLE_BUDGET};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Recipe {
    Zero,
    /// Every frequency has `|k_j| = 2^{s_j}` for one scale per axis, so the
    /// one-dimensional and per-axis tensor smooth banks see a single band.
    SingleBand,
    /// Localized bumps, a chirp and a few dyadic wave packets.
    Mixed,
    /// Low frequencies with Gaussian-decaying amplitudes.
    Smooth,
}

impl std::str::FromStr for Recipe {
    type Err = LabError;
    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| LabError::Config(format!("unknown corpus recipe {s:?} (zero, single-band, mixed, smooth)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    pub recipe: Recipe,
    #[serde(default = "default_count")]
    pub count: usize,
    /// Vector shape of every fixture; empty for scalar functions.
    #[serde(default)]
    pub vshape: Vec<usize>,
    /// `log2` of the largest per-axis frequency; defaults to `min L_j - 2`.
    #[serde(default)]
    pub max_freq_log2: Option<u32>,
}

fn default_count() -> usize {
    4
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec { recipe: Recipe::Mixed, count: default_count(), vshape: vec![], max_freq_log2: None }
    }
}

/// `amp * cos(2 pi k.x + phase)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub k: Vec<i64>,
    pub amp: f64,
    pub phase: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fixture {
    pub id: usize,
    pub recipe: Recipe,
    pub vshape: Vec<usize>,
    /// Modes of each vector component.
    pub components: Vec<Vec<Mode>>,
}

impl Fixture {
    /// Largest `|k_j|` over all modes.
    pub fn max_frequency(&self) -> i64 {
        self.components.iter().flatten().flat_map(|m| m.k.iter().map(|k| k.abs())).max().unwrap_or(0)
    }

    /// Cell-centered samples; every frequency must lie strictly below the
    /// Nyquist index of its axis.
    pub fn sample(&self, spec: &GridSpec) -> Result<GridFunction> {
        let shape = spec.shape();
        let n = spec.len();
        for m in self.components.iter().flatten() {
            if m.k.len() != shape.len() {
                return Err(LabError::ShapeMismatch(format!("mode {:?} on a {}-dimensional grid", m.k, shape.len())));
            }
            if m.k.iter().zip(&shape).any(|(k, &nj)| 2 * k.unsigned_abs() as usize >= nj) {
                return Err(LabError::Config(format!("mode {:?} is not resolved by grid {:?}", m.k, spec.log_res())));
            }
        }
        let mut values = Vec::with_capacity(n * self.components.len());
        for modes in &self.components {
            let mut data = vec![Complex64::default(); n];
            for m in modes {
                // shift to cell centers: exp(2 pi i k (j + 1/2) / n)
                let half: f64 = m.k.iter().zip(&shape).map(|(&k, &nj)| PI * k as f64 / nj as f64).sum();
                let c = Complex64::from_polar(0.5 * m.amp * n as f64, m.phase + half);
                let idx = |sign: i64| -> usize {
                    let coords: Vec<usize> =
                        m.k.iter().zip(&shape).map(|(&k, &nj)| (sign * k).rem_euclid(nj as i64) as usize).collect();
                    spec.index(&coords)
                };
                data[idx(1)] += c;
                data[idx(-1)] += c.conj();
            }
            fft::inverse(&mut data, &shape);
            values.extend(data.into_iter().map(|v| Complex64::new(v.re, 0.0)));
        }
        GridFunction::new(spec.clone(), self.vshape.clone(), values)
    }
}

struct Draw<'a> {
    rng: &'a mut ChaCha8Rng,
    d: usize,
    maxf: i64,
}

impl Draw<'_> {
    fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    fn phase(&mut self) -> f64 {
        self.rng.random_range(0.0..2.0 * PI)
    }

    fn admissible(&self, k: &[i64]) -> bool {
        k.iter().all(|&kj| kj != 0 && kj.abs() <= self.maxf)
    }

    /// Gaussian packet around `center` with per-axis width `width`, located
    /// at `x0`, with an extra quadratic phase `chirp |k - center|^2`.
    fn packet(&mut self, center: &[f64], width: f64, x0: &[f64], chirp: f64, scale: f64, out: &mut Vec<Mode>) {
        let r = (3.0 * width).ceil() as i64;
        let lo: Vec<i64> = center.iter().map(|c| c.round() as i64 - r).collect();
        let span = (2 * r + 1) as usize;
        let total = span.pow(self.d as u32);
        let start = out.len();
        for flat in 0..total {
            let mut rem = flat;
            let mut k = vec![0i64; self.d];
            for j in (0..self.d).rev() {
                k[j] = lo[j] + (rem % span) as i64;
                rem /= span;
            }
            if !self.admissible(&k) {
                continue;
            }
            let r2: f64 = k.iter().zip(center).map(|(&kj, c)| (kj as f64 - c).powi(2)).sum();
            let amp = (-r2 / (2.0 * width * width)).exp();
            if amp < 1e-8 {
                continue;
            }
            let phase = -2.0 * PI * k.iter().zip(x0).map(|(&kj, x)| kj as f64 * x).sum::<f64>() + chirp * r2;
            out.push(Mode { k, amp, phase });
        }
        let norm: f64 = out[start..].iter().map(|m| m.amp * m.amp).sum::<f64>().sqrt();
        if norm > 0.0 {
            for m in &mut out[start..] {
                m.amp *= scale / norm;
            }
        }
    }

    fn point(&mut self) -> Vec<f64> {
        (0..self.d).map(|_| self.rng.random_range(0.0..1.0)).collect()
    }

    fn signed(&mut self, lo: f64, hi: f64) -> f64 {
        let v = self.rng.random_range(lo..hi);
        if self.rng.random_bool(0.5) {
            v
        } else {
            -v
        }
    }

    fn component(&mut self, recipe: Recipe) -> Vec<Mode> {
        let mut out = Vec::new();
        let top = (self.maxf as f64).log2().floor() as u32;
        match recipe {
            Recipe::Zero => {}
            Recipe::SingleBand => {
                let s: Vec<u32> = (0..self.d).map(|_| self.rng.random_range(0..=top)).collect();
                // one representative per +-k pair: first axis positive
                for signs in 0..(1usize << (self.d - 1)) {
                    let k: Vec<i64> = (0..self.d)
                        .map(|j| {
                            let neg = j > 0 && (signs >> (j - 1)) & 1 == 1;
                            let v = 1i64 << s[j];
                            if neg {
                                -v
                            } else {
                                v
                            }
                        })
                        .collect();
                    let amp = self.normal().abs() + 0.1;
                    let phase = self.phase();
                    out.push(Mode { k, amp, phase });
                }
            }
            Recipe::Mixed => {
                let fmax = self.maxf as f64;
                for _ in 0..2 {
                    let center: Vec<f64> = (0..self.d).map(|_| self.signed(1.0, fmax / 2.0)).collect();
                    let width = (center.iter().map(|c| c.abs()).fold(f64::INFINITY, f64::min) / 4.0).max(0.75);
                    let x0 = self.point();
                    let scale = self.rng.random_range(0.5..1.5);
                    self.packet(&center, width, &x0, 0.0, scale, &mut out);
                }
                let center: Vec<f64> = (0..self.d).map(|_| self.signed(fmax / 8.0, fmax / 2.0).max(1.0)).collect();
                let x0 = self.point();
                let chirp = self.rng.random_range(0.01..0.05);
                self.packet(&center, (fmax / 16.0).max(1.0), &x0, chirp, 1.0, &mut out);
                for _ in 0..3 {
                    let s = self.rng.random_range(1..=top.max(1));
                    let center: Vec<f64> = (0..self.d).map(|_| self.signed(0.0, 1.0).signum() * (1u64 << s) as f64).collect();
                    let x0 = self.point();
                    let scale = self.rng.random_range(0.25..1.0);
                    self.packet(&center, ((1u64 << s) as f64 / 4.0).max(0.5), &x0, 0.0, scale, &mut out);
                }
            }
            Recipe::Smooth => {
                let lim = self.maxf.min(8);
                let total = (2 * lim + 1).pow(self.d as u32);
                for flat in 0..total {
                    let mut rem = flat;
                    let k: Vec<i64> = (0..self.d)
                        .map(|_| {
                            let v = (rem % (2 * lim + 1)) - lim;
                            rem /= 2 * lim + 1;
                            v
                        })
                        .collect();
                    // one representative per +-k pair
                    if !self.admissible(&k) || k[0] < 0 {
                        continue;
                    }
                    let r2: f64 = k.iter().map(|&v| (v * v) as f64).sum();
                    let amp = (-r2 / 16.0).exp() * self.normal();
                    let phase = self.phase();
                    out.push(Mode { k, amp, phase });
                }
            }
        }
        out
    }
}

/// Seeded fixtures for `grid`; deterministic in `(spec, grid, seed)`.
pub fn generate_corpus(spec: &CorpusSpec, grid: &GridSpec, seed: u64) -> Result<Vec<Fixture>> {
    let ncomp: usize = spec.vshape.iter().product();
    if grid.len().saturating_mul(ncomp).saturating_mul(spec.count) > DEFAULT_SAMPLE_BUDGET * 4 {
        return Err(LabError::Config(format!(
            "corpus of {} fixtures with vector shape {:?} on {:?} exceeds the sample budget",
            spec.count,
            spec.vshape,
            grid.log_res()
        )));
    }
    let lmin = *grid.log_res().iter().min().expect("nonempty grid");
    let default_top = lmin.saturating_sub(2);
    let top = spec.max_freq_log2.unwrap_or(default_top);
    if top + 2 > lmin {
        return Err(LabError::Config(format!("max frequency 2^{top} needs every axis to have L_j >= {}", top + 2)));
    }
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(spec.count);
    for id in 0..spec.count {
        let mut rng = ChaCha8Rng::seed_from_u64(master.next_u64());
        let mut draw = Draw { rng: &mut rng, d: grid.dim(), maxf: 1i64 << top };
        let components = (0..ncomp).map(|_| draw.component(spec.recipe)).collect();
        out.push(Fixture { id, recipe: spec.recipe, vshape: spec.vshape.clone(), components });
    }
    Ok(out)
}

/// Generate and sample in one step.
pub fn sample_corpus(spec: &CorpusSpec, grid: &GridSpec, seed: u64) -> Result<Vec<GridFunction>> {
    generate_corpus(spec, grid, seed)?.iter().map(|f| f.sample(grid)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::{FilterBank, Profile, TensorFilterBank};
    use crate::square::{square_function, tensor_square_function};

    fn spec(recipe: Recipe, count: usize) -> CorpusSpec {
        CorpusSpec { recipe, count, ..Default::default() }
    }

    fn brute(fx: &Fixture, g: &GridSpec) -> Vec<f64> {
        (0..g.len())
            .map(|i| {
                let x = g.cell_center(i);
                fx.components[0]
                    .iter()
                    .map(|m| {
                        let t: f64 = m.k.iter().zip(&x).map(|(&k, &xj)| k as f64 * xj).sum();
                        m.amp * (2.0 * PI * t + m.phase).cos()
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let g = GridSpec::uniform(2, 6).unwrap();
        for r in [Recipe::Mixed, Recipe::Smooth, Recipe::SingleBand] {
            let a = sample_corpus(&spec(r, 3), &g, 11).unwrap();
            let b = sample_corpus(&spec(r, 3), &g, 11).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert_eq!(x.to_bytes(), y.to_bytes());
            }
            let c = sample_corpus(&spec(r, 3), &g, 12).unwrap();
            assert_ne!(a[0].to_bytes(), c[0].to_bytes());
        }
    }

    #[test]
    fn zero_recipe_gives_zero_functions() {
        let g = GridSpec::uniform(1, 6).unwrap();
        for f in sample_corpus(&spec(Recipe::Zero, 2), &g, 0).unwrap() {
            assert!(f.values().iter().all(|v| *v == Complex64::default()));
        }
    }

    #[test]
    fn spectral_sampling_matches_direct_sum() {
        for g in [GridSpec::uniform(1, 7).unwrap(), GridSpec::uniform(2, 5).unwrap()] {
            let fx = &generate_corpus(&spec(Recipe::Mixed, 1), &g, 5).unwrap()[0];
            let f = fx.sample(&g).unwrap().real_parts();
            let b = brute(fx, &g);
            let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let err = f.iter().zip(&b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
            assert!(err <= 1e-12 * scale.max(1.0), "{err}");
        }
    }

    #[test]
    fn mean_zero_along_every_axis() {
        let g = GridSpec::uniform(2, 6).unwrap();
        for f in sample_corpus(&spec(Recipe::Mixed, 3), &g, 2).unwrap() {
            let v = f.real_parts();
            for i in 0..64 {
                let row: f64 = v[i * 64..(i + 1) * 64].iter().sum();
                let col: f64 = (0..64).map(|j| v[j * 64 + i]).sum();
                assert!(row.abs() < 1e-9 && col.abs() < 1e-9);
            }
        }
    }

    #[test]
    fn single_band_square_function_is_the_modulus() {
        let g = GridSpec::uniform(1, 8).unwrap();
        let bank = FilterBank::new(vec![8], None, Profile::SmoothBump).unwrap();
        for f in sample_corpus(&spec(Recipe::SingleBand, 3), &g, 4).unwrap() {
            let s = square_function(&f, &bank).unwrap().values();
            for (a, b) in s.iter().zip(f.real_parts()) {
                assert!((a - b.abs()).abs() < 1e-10);
            }
        }
        let g2 = GridSpec::new(vec![6, 6], vec![1, 1]).unwrap();
        let tb = TensorFilterBank::for_grid(&g2, Profile::SmoothBump).unwrap();
        for f in sample_corpus(&spec(Recipe::SingleBand, 2), &g2, 4).unwrap() {
            let s = tensor_square_function(&f, &tb).unwrap().values();
            for (a, b) in s.iter().zip(f.real_parts()) {
                assert!((a - b.abs()).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn refined_samples_match_direct_sum() {
        let g = GridSpec::uniform(1, 6).unwrap();
        let fx = &generate_corpus(&spec(Recipe::Mixed, 1), &g, 8).unwrap()[0];
        let r = g.refined(1).unwrap();
        let f = fx.sample(&r).unwrap().real_parts();
        let b = brute(fx, &r);
        assert!(f.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-10));
    }

    #[test]
    fn vector_fixtures_fill_every_component() {
        let g = GridSpec::uniform(1, 6).unwrap();
        let cs = CorpusSpec { vshape: vec![2, 3], ..spec(Recipe::Mixed, 1) };
        let f = &sample_corpus(&cs, &g, 1).unwrap()[0];
        assert_eq!(f.vshape(), &[2, 3]);
        for c in 0..6 {
            assert!(f.component(c).iter().any(|v| v.re.abs() > 1e-6));
        }
    }

    #[test]
    fn unresolved_frequency_rejected() {
        let g = GridSpec::uniform(1, 8).unwrap();
        let fx = &generate_corpus(&spec(Recipe::Mixed, 1), &g, 1).unwrap()[0];
        assert!(fx.max_frequency() > 8);
        assert!(fx.sample(&GridSpec::uniform(1, 4).unwrap()).is_err());
        assert!("wobbly".parse::<Recipe>().is_err());
        assert_eq!("single-band".parse::<Recipe>().unwrap(), Recipe::SingleBand);
    }
}
