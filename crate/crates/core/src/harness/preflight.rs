//! Small invariant suites run before every experiment and by
//! `lp-lab verify-invariants`.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decomposition::{analyze, synthesize, CoefficientMap};
use crate::error::{LabError, Result};
use crate::filters::{band_convolve, project_mean_zero, FamilyKind, FilterBank, LacunaryFamily, Profile, TensorFilterBank};
use crate::grid::{Collection, GridFunction, GridSpec};
use crate::harness::corpus::{generate_corpus, CorpusSpec, Recipe};
use crate::norms::{mixed_norm, MixedNormSpec};
use crate::square::{discrete_square_function, tensor_square_function};
use crate::stopping::{intersect_buckets, sparse_construct, stopping_time, AverageSource, SparseOptions, StoppingOptions};
use crate::weights::{ap_characteristic, make_weight, maximal_function, WeightKind, WindowMode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvariantOutcome {
    pub module: String,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn ensure(ok: bool, detail: impl Into<String>) -> Result<String> {
    let detail = detail.into();
    if ok {
        Ok(detail)
    } else {
        Err(LabError::Invariant(detail))
    }
}

fn random(spec: &GridSpec, seed: u64) -> GridFunction {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vals = (0..spec.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    GridFunction::from_real(spec.clone(), vals).expect("grid")
}

fn partition_of_unity() -> Result<String> {
    let bank = FilterBank::new(vec![9], None, Profile::SmoothBump)?;
    let (off, origin) = bank.partition_defect();
    ensure(off <= 1e-12 && origin == 0.0, format!("defect {off:e}, origin {origin:e}"))
}

fn calderon() -> Result<String> {
    let spec = GridSpec::new(vec![5, 5], vec![1, 1])?;
    let tb = TensorFilterBank::for_grid(&spec, Profile::SmoothBump)?;
    let f = project_mean_zero(&random(&spec, 1), &tb)?;
    let mut sum = vec![Complex64::default(); spec.len()];
    for k in tb.scale_tuples() {
        for (s, v) in sum.iter_mut().zip(band_convolve(&f, &tb, &k)?.values()) {
            *s += v;
        }
    }
    let err = sum.iter().zip(f.values()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    ensure(err <= 1e-10 * f.sup_norm(), format!("error {err:e}"))
}

fn single_band() -> Result<String> {
    let spec = GridSpec::new(vec![6, 6], vec![1, 1])?;
    let tb = TensorFilterBank::for_grid(&spec, Profile::SmoothBump)?;
    let cs = CorpusSpec { recipe: Recipe::SingleBand, count: 2, ..Default::default() };
    let mut worst = 0.0f64;
    for fx in generate_corpus(&cs, &spec, 3)? {
        let f = fx.sample(&spec)?;
        let s = tensor_square_function(&f, &tb)?.values();
        for (a, b) in s.iter().zip(f.values()) {
            worst = worst.max((a - b.norm()).abs());
        }
    }
    ensure(worst <= 1e-10, format!("max |Sf - |f|| = {worst:e}"))
}

fn mixed_norm_oracle() -> Result<String> {
    let spec = GridSpec::new(vec![3, 2], vec![1, 1])?;
    let f = random(&spec, 2);
    let (p0, p1) = (0.5, 3.0);
    let v = f.real_parts();
    let outer: f64 = (0..8)
        .map(|i| {
            let inner: f64 = (0..4).map(|j| v[i * 4 + j].abs().powf(p1) / 4.0).sum();
            inner.powf(p0 / p1) / 8.0
        })
        .sum();
    let oracle = outer.powf(1.0 / p0);
    let got = mixed_norm(&f, &MixedNormSpec::new(vec![p0, p1], vec![])?)?;
    ensure(((got - oracle) / oracle).abs() <= 1e-12, format!("{got} vs {oracle}"))
}

fn haar_round_trip() -> Result<String> {
    let spec = GridSpec::uniform(1, 6)?;
    let c = Collection::all_dyadic(1, 0, 5);
    let fam = LacunaryFamily::new(spec.clone(), c, 2.0, FamilyKind::Haar)?;
    let tb = TensorFilterBank::for_grid(&spec, Profile::SmoothBump)?;
    let f = project_mean_zero(&random(&spec, 3), &tb)?;
    let g = synthesize(&analyze(&f, &fam)?, &fam)?;
    let err = g.sub(&f)?.sup_norm();
    ensure(err <= 1e-12, format!("Haar reconstruction error {err:e}"))
}

fn constant_weight() -> Result<String> {
    let spec = GridSpec::uniform(2, 5)?;
    let w = make_weight(&spec, WeightKind::Constant { value: 3.0 })?;
    for p in [1.5, 2.0, 4.0] {
        for mode in [WindowMode::Cubes, WindowMode::Rectangles] {
            let r = ap_characteristic(&w, p, mode, None)?;
            if r.estimate != 1.0 {
                return Err(LabError::Invariant(format!("[1]_A_{p} = {} in {mode:?}", r.estimate)));
            }
        }
    }
    Ok("[c]_{A_p} = 1 exactly".into())
}

fn maximal_dominates() -> Result<String> {
    let spec = GridSpec::uniform(2, 5)?;
    let f = random(&spec, 4);
    let m = maximal_function(&f, WindowMode::Rectangles)?.real_parts();
    let ok = m.iter().zip(f.values()).all(|(a, b)| *a >= b.norm() * (1.0 - 1e-14));
    ensure(ok, "M f >= |f|")
}

fn stopping_exhaustive() -> Result<String> {
    let spec = GridSpec::uniform(1, 6)?;
    let c = Collection::all_dyadic(1, 1, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let coeffs = CoefficientMap::from_scalar(c.iter().map(|q| (q.clone(), Complex64::new(rng.random_range(-1.0..1.0), 0.0))));
    let sf = discrete_square_function(&spec, &coeffs, &c)?.values();
    let reference = sf.iter().map(|v| v * spec.cell_measure()).sum::<f64>();
    let src = AverageSource::SfAverage { coeffs: &coeffs, p: 1.0, q: None };
    let d = stopping_time(&spec, &c, &src, reference, &StoppingOptions::default())?;
    let buckets = intersect_buckets(&c, &d, &d)?;
    let total: usize = buckets.iter().map(|b| b.members.len()).sum();
    ensure(total == c.len(), format!("{total} of {} cubes bucketed", c.len()))
}

fn sparse_invariants() -> Result<String> {
    let spec = GridSpec::uniform(1, 7)?;
    let c = Collection::all_dyadic(1, 0, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let coeffs = CoefficientMap::from_scalar(
        c.iter().map(|q| (q.clone(), Complex64::new(rng.random_range(-1.0..1.0) * q.measure().sqrt(), 0.0))),
    );
    let w = make_weight(&spec, WeightKind::Power { a: 0.5, center: None })?;
    let fam = sparse_construct(&spec, &coeffs, &c, &w, 0.5, &SparseOptions::default())?;
    ensure(fam.verified, format!("{} sparse cubes, C = {}", fam.nodes.len(), fam.c_const))
}

fn corpus_determinism() -> Result<String> {
    let spec = GridSpec::uniform(2, 5)?;
    let cs = CorpusSpec::default();
    let a: Vec<Vec<u8>> = generate_corpus(&cs, &spec, 9)?.iter().map(|f| f.sample(&spec).map(|g| g.to_bytes())).collect::<Result<_>>()?;
    let b: Vec<Vec<u8>> = generate_corpus(&cs, &spec, 9)?.iter().map(|f| f.sample(&spec).map(|g| g.to_bytes())).collect::<Result<_>>()?;
    ensure(a == b, "identical corpus bytes")
}

type Check = (&'static str, &'static str, fn() -> Result<String>);

const CHECKS: [Check; 10] = [
    ("filters", "partition of unity", partition_of_unity),
    ("filters", "Calderon reproduction", calderon),
    ("square_functions", "single-band S f = |f|", single_band),
    ("norms_sizes", "mixed-norm nested-sum oracle", mixed_norm_oracle),
    ("decomposition", "Haar analysis-synthesis round trip", haar_round_trip),
    ("weights", "constant weight characteristic", constant_weight),
    ("weights", "maximal function dominates", maximal_dominates),
    ("stopping_sparse", "bucket exhaustiveness", stopping_exhaustive),
    ("stopping_sparse", "sparse invariants", sparse_invariants),
    ("harness_cli", "corpus determinism", corpus_determinism),
];

/// Run every invariant check and report each outcome.
pub fn verify_invariants() -> Vec<InvariantOutcome> {
    CHECKS
        .iter()
        .map(|(module, name, check)| {
            let (passed, detail) = match check() {
                Ok(d) => (true, d),
                Err(e) => (false, e.to_string()),
            };
            InvariantOutcome { module: module.to_string(), name: name.to_string(), passed, detail }
        })
        .collect()
}

/// Fail with the first violated invariant.
pub fn preflight() -> Result<()> {
    match verify_invariants().into_iter().find(|o| !o.passed) {
        Some(o) => Err(LabError::Preflight(format!("{}: {} ({})", o.module, o.name, o.detail))),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_invariants_pass() {
        for o in verify_invariants() {
            assert!(o.passed, "{o:?}");
        }
        preflight().unwrap();
    }
}
