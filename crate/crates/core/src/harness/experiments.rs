//! End-to-end inequality checks: one evaluator per experiment kind, a base
//! pass on the configured grid and a refined pass at doubled resolution.

use std::collections::BTreeMap;

use serde_json::{json, Value};

use crate::decomposition::{analyze, synthesize};
use crate::error::{LabError, Result};
use crate::filters::{LacunaryFamily, TensorFilterBank};
use crate::grid::{CellSet, Collection, DyadicCube, GridFunction, GridSpec};
use crate::harness::config::{ExperimentConfig, ExperimentKind};
use crate::harness::corpus::{generate_corpus, Fixture};
use crate::harness::preflight::preflight;
use crate::harness::report::{environment_digest, max_ratio, Pass, Record, Report, StabilityVerdict, Summary};
use crate::norms::{
    digest_hex, local_sf_average, mixed_norm, size_indicator, smoothed_average, weighted_mixed_norm,
    MixedNormSpec,
};
use crate::par;
use crate::square::{discrete_square_function, tensor_square_function};
use crate::stopping::{sparse_bound_rhs, sparse_construct, SparseOptions, WeightFactor};
use crate::weights::{a_infinity_probe, make_weight, ProbeOptions, Weight, WeightKind, WindowMode};

/// Decay exponent of the size functional.
pub const SIZE_DECAY: f64 = 100.0;

/// Largest number of grid bits, counted after the probe's own refinement,
/// used for weight probes.
pub const PROBE_BITS: u32 = 16;

type Params = BTreeMap<String, Value>;

fn params(v: Value) -> Params {
    match v {
        Value::Object(m) => m.into_iter().collect(),
        _ => unreachable!("params are built from objects"),
    }
}

/// `int |g|^p w` over the torus.
fn weighted_power_integral(g: &GridFunction, p: f64, w: &Weight) -> f64 {
    let terms: Vec<f64> = g.values().iter().zip(w.values()).map(|(v, wv)| v.norm().powf(p) * wv).collect();
    par::pairwise_sum(&terms) * g.spec().cell_measure()
}

struct Families {
    kind: crate::filters::FamilyKind,
    top: u32,
    collection: Collection,
    family: LacunaryFamily,
}

fn families(cfg: &ExperimentConfig, grid: &GridSpec) -> Result<Vec<Families>> {
    let mut out = Vec::new();
    for &kind in &cfg.family.kinds {
        for &top in &cfg.family.tops {
            let collection = Collection::all_dyadic(grid.dim(), cfg.family.k_min, top);
            let family = LacunaryFamily::new(grid.clone(), collection.clone(), 2.0, kind)?.with_decay(cfg.family.decay)?;
            out.push(Families { kind, top, collection, family });
        }
    }
    Ok(out)
}

fn weights(cfg: &ExperimentConfig, grid: &GridSpec) -> Result<Vec<Weight>> {
    cfg.weights.iter().map(|k| make_weight(grid, k.clone())).collect()
}

fn density_set(grid: &GridSpec, rho: f64) -> CellSet {
    CellSet::from_fn(grid.clone(), |x| x[0] < rho)
}

/// Records of one fixture plus kind-specific facts for the summary.
type FixtureOutput = (Vec<Record>, BTreeMap<String, Value>);

fn run_main(cfg: &ExperimentConfig, grid: &GridSpec, pass: Pass, fx: &Fixture) -> Result<FixtureOutput> {
    let bank = TensorFilterBank::for_grid(grid, cfg.filter.profile)?;
    let f = fx.sample(grid)?;
    let sf = tensor_square_function(&f, &bank)?;
    let mut recs = Vec::new();
    for n in &cfg.norms {
        let lhs = mixed_norm(&f, n)?;
        let rhs = mixed_norm(&sf.function, n)?;
        recs.push(Record::new(pass, fx.id, grid.log_res(), params(json!({ "P": n.p, "Q": n.q })), lhs, rhs));
    }
    Ok((recs, BTreeMap::new()))
}

fn run_discrete(cfg: &ExperimentConfig, grid: &GridSpec, pass: Pass, fx: &Fixture) -> Result<FixtureOutput> {
    let f = fx.sample(grid)?;
    let mut recs = Vec::new();
    let mut monotone = true;
    let mut reduction = true;
    let mut densities = cfg.densities.clone();
    densities.sort_by(f64::total_cmp);
    for fam in families(cfg, grid)? {
        let coeffs = analyze(&f, &fam.family)?;
        let g = synthesize(&coeffs, &fam.family)?;
        let sf = discrete_square_function(grid, &coeffs, &fam.collection)?;
        let mut last_size = 0.0;
        for &rho in &densities {
            let e = density_set(grid, rho);
            let size = size_indicator(&e, &fam.collection, SIZE_DECAY, 0)?.value;
            monotone &= size >= last_size;
            last_size = size;
            let full = e.count() == grid.len();
            let masked = g.mask(&e)?;
            for n in &cfg.norms {
                let p = n.p.iter().copied().fold(f64::INFINITY, f64::min);
                // the full torus is the unlocalized estimate, without a size factor
                let factor = if full { 1.0 } else { size.powf(1.0 / p - cfg.eps) };
                let lhs = mixed_norm(&masked, n)?;
                let sfn = mixed_norm(&sf.function, n)?;
                if full {
                    reduction &= lhs == mixed_norm(&g, n)?;
                }
                recs.push(Record::new(
                    pass,
                    fx.id,
                    grid.log_res(),
                    params(json!({
                        "family": fam.kind, "top": fam.top, "density": rho, "size": size,
                        "size_factor": factor, "P": n.p, "Q": n.q, "eps": cfg.eps,
                    })),
                    lhs,
                    sfn * factor,
                ));
            }
        }
    }
    let checks = BTreeMap::from([
        ("size_monotone".to_string(), json!(monotone)),
        ("full_torus_reduction".to_string(), json!(reduction)),
    ]);
    Ok((recs, checks))
}

fn run_localization(cfg: &ExperimentConfig, grid: &GridSpec, pass: Pass, fx: &Fixture) -> Result<FixtureOutput> {
    let f = fx.sample(grid)?;
    let ws = weights(cfg, grid)?;
    let heads = Collection::all_dyadic(grid.dim(), cfg.local_scale, cfg.local_scale);
    let mut recs = Vec::new();
    for fam in families(cfg, grid)? {
        let coeffs = analyze(&f, &fam.family)?;
        for i0 in heads.iter() {
            let local = fam.collection.restrict(i0);
            if local.is_empty() {
                continue;
            }
            let lc = coeffs.restricted(&local);
            let g = synthesize(&lc, &fam.family.with_collection(local.clone())?)?;
            let mut plus: Vec<&DyadicCube> = local.iter().collect();
            if !local.contains(i0) {
                plus.push(i0);
            }
            for (wi, w) in ws.iter().enumerate() {
                let wavg = plus
                    .iter()
                    .map(|j| smoothed_average(grid, w.values(), j, cfg.decay))
                    .collect::<Result<Vec<f64>>>()?
                    .into_iter()
                    .fold(0.0, f64::max);
                for &p in &cfg.exponents {
                    let p1 = cfg.p1_fraction * p;
                    let a1 = local
                        .iter()
                        .map(|j| local_sf_average(grid, &lc, &local, j, p1, None))
                        .collect::<Result<Vec<f64>>>()?
                        .into_iter()
                        .fold(0.0, f64::max);
                    let lhs = weighted_power_integral(&g, p, w);
                    let rhs = a1.powf(p) * wavg * i0.measure();
                    recs.push(Record::new(
                        pass,
                        fx.id,
                        grid.log_res(),
                        params(json!({
                            "family": fam.kind, "top": fam.top, "i0": i0, "weight": wi, "p": p, "p1": p1,
                        })),
                        lhs,
                        rhs,
                    ));
                }
            }
        }
    }
    Ok((recs, BTreeMap::new()))
}

fn run_sparse(cfg: &ExperimentConfig, grid: &GridSpec, pass: Pass, fx: &Fixture) -> Result<FixtureOutput> {
    let f = fx.sample(grid)?;
    let ws = weights(cfg, grid)?;
    let opts = SparseOptions { decay: cfg.decay, ..Default::default() };
    let mut recs = Vec::new();
    let mut verified = true;
    let mut max_c: f64 = 0.0;
    let mut min_e_fraction: f64 = 1.0;
    for fam in families(cfg, grid)? {
        let coeffs = analyze(&f, &fam.family)?;
        let g = synthesize(&coeffs, &fam.family)?;
        for (wi, w) in ws.iter().enumerate() {
            for &p in &cfg.exponents {
                let p1 = cfg.p1_fraction * p;
                let eps_p = if p <= 1.0 { 0.0 } else { cfg.eps_sparse };
                let sparse = sparse_construct(grid, &coeffs, &fam.collection, w, p1, &opts)?;
                verified &= sparse.verified;
                max_c = max_c.max(sparse.c_const);
                for n in &sparse.nodes {
                    min_e_fraction = min_e_fraction.min(n.e_cells as f64 / n.q_cells as f64);
                }
                let lhs = weighted_power_integral(&g, p, w);
                let rhs = sparse_bound_rhs(grid, &coeffs, &fam.collection, &sparse, w, p, eps_p, WeightFactor::Smoothed, &opts)?;
                let rhs_e = sparse_bound_rhs(grid, &coeffs, &fam.collection, &sparse, w, p, eps_p, WeightFactor::SparseSet, &opts)?;
                recs.push(Record::new(
                    pass,
                    fx.id,
                    grid.log_res(),
                    params(json!({
                        "family": fam.kind, "top": fam.top, "weight": wi, "p": p, "p1": p1, "eps_p": eps_p,
                        "sparse_cubes": sparse.nodes.len(), "stopping_constant": sparse.c_const,
                        "rhs_sparse_set": rhs_e,
                    })),
                    lhs,
                    rhs,
                ));
            }
        }
    }
    let checks = BTreeMap::from([
        ("sparse_verified".to_string(), json!(verified)),
        ("max_stopping_constant".to_string(), json!(max_c)),
        ("min_e_fraction".to_string(), json!(min_e_fraction)),
    ]);
    Ok((recs, checks))
}

fn run_weighted(cfg: &ExperimentConfig, grid: &GridSpec, pass: Pass, fx: &Fixture) -> Result<FixtureOutput> {
    let bank = TensorFilterBank::for_grid(grid, cfg.filter.profile)?;
    let f = fx.sample(grid)?;
    let sf = tensor_square_function(&f, &bank)?;
    let ws = weights(cfg, grid)?;
    let mut recs = Vec::new();
    for (wi, w) in ws.iter().enumerate() {
        for &p in &cfg.exponents {
            let n = MixedNormSpec::scalar(grid.dim(), p)?;
            let lhs = weighted_mixed_norm(&f, &n, w.values())?;
            let rhs = weighted_mixed_norm(&sf.function, &n, w.values())?;
            let parameters = grid.groups().len();
            recs.push(Record::new(
                pass,
                fx.id,
                grid.log_res(),
                params(json!({ "weight": wi, "p": p, "parameters": parameters })),
                lhs,
                rhs,
            ));
        }
    }
    Ok((recs, BTreeMap::new()))
}

fn run_kurtz(cfg: &ExperimentConfig, grid: &GridSpec, pass: Pass, fx: &Fixture) -> Result<FixtureOutput> {
    let bank = TensorFilterBank::for_grid(grid, cfg.filter.profile)?;
    let f = fx.sample(grid)?;
    let sf = tensor_square_function(&f, &bank)?;
    let ws = weights(cfg, grid)?;
    let mut recs = Vec::new();
    for (wi, w) in ws.iter().enumerate() {
        for n in &cfg.norms {
            let lhs = weighted_mixed_norm(&f, n, w.values())?;
            let rhs = weighted_mixed_norm(&sf.function, n, w.values())?;
            recs.push(Record::new(
                pass,
                fx.id,
                grid.log_res(),
                params(json!({ "weight": wi, "P": n.p, "Q": n.q })),
                lhs,
                rhs,
            ));
        }
    }
    Ok((recs, BTreeMap::new()))
}

/// Grid used to probe a weight: the experiment grid capped so that the
/// refined probe grid has at most [`PROBE_BITS`] bits, split evenly over
/// the axes.
fn probe_grid(grid: &GridSpec) -> Result<GridSpec> {
    let d = grid.dim() as u32;
    let refine = ProbeOptions::default().stability.refine_levels;
    let per_axis = (PROBE_BITS / d).saturating_sub(refine).max(2);
    let log_res: Vec<u32> = grid.log_res().iter().map(|&l| l.min(per_axis)).collect();
    GridSpec::new(log_res, grid.groups().to_vec())
}

fn probe(kind: &WeightKind, grid: &GridSpec, mode: WindowMode, decay: f64) -> Result<Value> {
    let w = make_weight(&probe_grid(grid)?, kind.clone())?;
    let r = a_infinity_probe(&w, &ProbeOptions { mode, ..Default::default() })?;
    let d = grid.dim() as f64;
    Ok(json!({
        "kind": kind,
        "q_w": r.q_w,
        "at_floor": r.at_floor,
        "stable": r.q_w.is_some(),
        "decay_condition": r.q_w.is_some_and(|q| d * q < decay),
    }))
}

/// `A_infinity` probes of every configured weight, with the `d q_w < M`
/// condition on the decay of `chi~`.
fn weight_checks(cfg: &ExperimentConfig, kind: ExperimentKind) -> Result<BTreeMap<String, Value>> {
    let mut out = BTreeMap::new();
    if cfg.weights.is_empty() || kind == ExperimentKind::Main || kind == ExperimentKind::Discrete {
        return Ok(out);
    }
    let mode = if cfg.grid.groups().len() > 1 { WindowMode::Rectangles } else { WindowMode::Cubes };
    let probes = cfg.weights.iter().map(|k| probe(k, &cfg.grid, mode, cfg.decay)).collect::<Result<Vec<_>>>()?;
    out.insert("weights".to_string(), Value::Array(probes));
    if kind == ExperimentKind::KurtzProduct {
        out.insert("factor_conditions".to_string(), kurtz_conditions(cfg)?);
    }
    Ok(out)
}

/// For `w = w_1 ... w_k` and each `P`, whether `w_l^{p_l / p_k}` passes the
/// one-parameter probe on its own axis group.
fn kurtz_conditions(cfg: &ExperimentConfig) -> Result<Value> {
    let groups = cfg.grid.groups();
    let mut out = Vec::new();
    for (wi, kind) in cfg.weights.iter().enumerate() {
        let WeightKind::Product { factors } = kind else { continue };
        for n in &cfg.norms {
            let p_inner = *n.p.last().expect("nonempty P");
            let mut axis = 0;
            let mut ok = Vec::new();
            for (g, factor) in groups.iter().zip(factors) {
                let t = n.p[axis] / p_inner;
                let powered = match factor {
                    WeightKind::Constant { value } => Some(WeightKind::Constant { value: value.powf(t) }),
                    WeightKind::Power { a, center } => Some(WeightKind::Power { a: a * t, center: center.clone() }),
                    _ => None,
                };
                let sub = GridSpec::new(cfg.grid.log_res()[axis..axis + g].to_vec(), vec![*g])?;
                ok.push(match powered {
                    Some(k) => probe(&k, &sub, WindowMode::Cubes, cfg.decay)?["stable"].clone(),
                    None => Value::Null,
                });
                axis += g;
            }
            out.push(json!({ "weight": wi, "P": n.p, "factors_in_a_infinity": ok }));
        }
    }
    Ok(Value::Array(out))
}

fn run_pass(
    kind: ExperimentKind,
    cfg: &ExperimentConfig,
    grid: &GridSpec,
    pass: Pass,
    fixtures: &[Fixture],
) -> Result<(Vec<Record>, Vec<Params>)> {
    let eval = |fx: &Fixture| match kind {
        ExperimentKind::Main => run_main(cfg, grid, pass, fx),
        ExperimentKind::Discrete => run_discrete(cfg, grid, pass, fx),
        ExperimentKind::Localization => run_localization(cfg, grid, pass, fx),
        ExperimentKind::Sparse => run_sparse(cfg, grid, pass, fx),
        ExperimentKind::Weighted => run_weighted(cfg, grid, pass, fx),
        ExperimentKind::KurtzProduct => run_kurtz(cfg, grid, pass, fx),
    };
    let outs = par::map(fixtures, eval);
    let mut records = Vec::new();
    let mut checks = Vec::new();
    for o in outs {
        let (r, c) = o?;
        records.extend(r);
        checks.push(c);
    }
    Ok((records, checks))
}

/// Fold per-fixture facts: booleans with `and`, numbers with `max`
/// (`min` for keys starting with `min_`).
fn merge_checks(per_fixture: &[BTreeMap<String, Value>], prefix: &str, into: &mut BTreeMap<String, Value>) {
    let mut acc: BTreeMap<String, Value> = BTreeMap::new();
    for m in per_fixture {
        for (k, v) in m {
            let merged = match (acc.get(k), v) {
                (None, v) => v.clone(),
                (Some(Value::Bool(a)), Value::Bool(b)) => json!(*a && *b),
                (Some(a), b) if a.is_f64() || a.is_u64() => {
                    let (x, y) = (a.as_f64().unwrap_or(0.0), b.as_f64().unwrap_or(0.0));
                    json!(if k.starts_with("min_") { x.min(y) } else { x.max(y) })
                }
                (Some(a), _) => a.clone(),
            };
            acc.insert(k.clone(), merged);
        }
    }
    for (k, v) in acc {
        into.insert(format!("{prefix}{k}"), v);
    }
}

/// Run `kind` under `cfg` with corpus seed `seed`.
pub fn run_experiment(kind: ExperimentKind, cfg: &ExperimentConfig, seed: u64) -> Result<Report> {
    cfg.validate()?;
    cfg.check_kind(kind)?;
    if cfg.weights.iter().any(|w| matches!(w, WeightKind::Custom { .. })) {
        return Err(LabError::Config("experiments need weights given by formula, not custom samples".into()));
    }
    if cfg.preflight {
        preflight()?;
    }
    let fixtures = generate_corpus(&cfg.corpus, &cfg.grid, seed)?;
    let mut checks = weight_checks(cfg, kind)?;
    let (mut records, per_fixture) = run_pass(kind, cfg, &cfg.grid, Pass::Base, &fixtures)?;
    merge_checks(&per_fixture, "", &mut checks);
    let (base_max, finite) = max_ratio(&records, Pass::Base);
    let mut stability = None;
    if cfg.refine {
        let fine = cfg.grid.refined(1)?;
        let (refined, per_fixture) = run_pass(kind, cfg, &fine, Pass::Refined, &fixtures)?;
        merge_checks(&per_fixture, "refined.", &mut checks);
        let (fine_max, fine_finite) = max_ratio(&refined, Pass::Refined);
        records.extend(refined);
        if let (Some(a), Some(b), true) = (base_max, fine_max, fine_finite) {
            stability = Some(StabilityVerdict::new(a, b, cfg.tolerances.stability));
        }
    }
    let summary = Summary {
        kind,
        seed,
        config_digest: digest_hex(cfg.canonical_json().as_bytes()),
        environment_digest: environment_digest(),
        records: records.len(),
        max_ratio: base_max,
        finite,
        stability,
        checks,
    };
    Ok(Report { summary, records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::corpus::Recipe;

    fn config(kind: ExperimentKind, grid: GridSpec, extra: Value) -> ExperimentConfig {
        let mut v = serde_json::to_value(ExperimentConfig::template(kind, grid)).unwrap();
        for (k, x) in extra.as_object().unwrap() {
            v[k] = x.clone();
        }
        v["preflight"] = json!(false);
        ExperimentConfig::from_json(&v.to_string()).unwrap()
    }

    #[test]
    fn main_run_is_finite_and_stable() {
        let grid = GridSpec::new(vec![6, 6], vec![1, 1]).unwrap();
        let cfg = config(
            ExperimentKind::Main,
            grid,
            json!({ "corpus": { "recipe": "mixed", "count": 2 }, "norms": [{ "p": [2, 2] }, { "p": [0.5, 3] }] }),
        );
        let r = run_experiment(ExperimentKind::Main, &cfg, 1).unwrap();
        assert_eq!(r.records.len(), 8);
        assert!(r.summary.finite);
        assert!(r.summary.stability.unwrap().stable);
    }

    #[test]
    fn discrete_full_torus_reduces_exactly() {
        let grid = GridSpec::uniform(1, 8).unwrap();
        let cfg = config(
            ExperimentKind::Discrete,
            grid,
            json!({ "corpus": { "recipe": "mixed", "count": 1 }, "norms": [{ "p": [1] }], "refine": false }),
        );
        let r = run_experiment(ExperimentKind::Discrete, &cfg, 2).unwrap();
        assert_eq!(r.summary.checks["full_torus_reduction"], json!(true));
        assert_eq!(r.summary.checks["size_monotone"], json!(true));
        for rec in r.records.iter().filter(|x| x.params["density"] == json!(1.0)) {
            assert_eq!(rec.params["size_factor"], json!(1.0));
        }
    }

    #[test]
    fn sparse_run_verifies_invariants() {
        let grid = GridSpec::uniform(1, 8).unwrap();
        let cfg = config(
            ExperimentKind::Sparse,
            grid,
            json!({
                "corpus": { "recipe": "mixed", "count": 1 },
                "weights": [{ "kind": "power", "a": 0.5 }],
                "exponents": [0.5, 2.0],
                "family": { "kinds": ["haar"], "tops": [4] },
            }),
        );
        let r = run_experiment(ExperimentKind::Sparse, &cfg, 3).unwrap();
        assert_eq!(r.summary.checks["sparse_verified"], json!(true));
        assert!(r.summary.checks["min_e_fraction"].as_f64().unwrap() >= 0.5);
        assert!(r.summary.finite);
    }

    #[test]
    fn zero_corpus_gives_zero_ratios() {
        let grid = GridSpec::uniform(1, 7).unwrap();
        let cfg = config(
            ExperimentKind::Weighted,
            grid,
            json!({ "corpus": { "recipe": "zero", "count": 1 }, "weights": [{ "kind": "constant", "value": 1.0 }] }),
        );
        let r = run_experiment(ExperimentKind::Weighted, &cfg, 0).unwrap();
        assert!(r.records.iter().all(|x| x.ratio == Some(0.0)));
    }

    #[test]
    fn kind_mismatch_and_custom_weights_rejected() {
        let grid = GridSpec::uniform(1, 6).unwrap();
        let cfg = config(ExperimentKind::Main, grid.clone(), json!({ "norms": [{ "p": [2] }] }));
        assert!(run_experiment(ExperimentKind::Discrete, &cfg, 0).is_err());
        let cfg = config(
            ExperimentKind::Weighted,
            grid,
            json!({ "weights": [{ "kind": "custom", "values": vec![1.0; 64] }] }),
        );
        assert!(run_experiment(ExperimentKind::Weighted, &cfg, 0).is_err());
    }

    #[test]
    fn runs_are_deterministic_across_thread_modes() {
        let grid = GridSpec::uniform(1, 8).unwrap();
        let cfg = config(
            ExperimentKind::Localization,
            grid,
            json!({
                "corpus": { "recipe": Recipe::Smooth, "count": 2 },
                "weights": [{ "kind": "power", "a": 0.25 }],
                "exponents": [0.5, 1.0],
                "family": { "kinds": ["smooth-wavelet"], "tops": [4] },
            }),
        );
        let a = run_experiment(ExperimentKind::Localization, &cfg, 4).unwrap();
        let b = par::sequential(|| run_experiment(ExperimentKind::Localization, &cfg, 4).unwrap());
        assert_eq!(a, b);
    }
}
