//! JSON experiment configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_exponent, LabError, Result};
use crate::filters::{FamilyKind, Profile};
use crate::grid::GridSpec;
use crate::harness::corpus::CorpusSpec;
use crate::norms::MixedNormSpec;
use crate::weights::WeightKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    /// `||f||_{L^P(L^Q)} <~ ||S f||_{L^P(L^Q)}` for the tensor square function.
    Main,
    /// Discrete model sums against the discrete square function, with the
    /// size factor of `1_E`.
    Discrete,
    /// Local estimate over the subcollection inside a fixed cube, `p <= 1`.
    Localization,
    /// Sparse domination of the weighted model sum.
    Sparse,
    /// `||f||_{L^p(w)} <~ ||S f||_{L^p(w)}`; bi-parameter on two-group grids.
    Weighted,
    /// Weighted mixed norms with product weights `u(x) v(y)`.
    KurtzProduct,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        ExperimentKind::Main,
        ExperimentKind::Discrete,
        ExperimentKind::Localization,
        ExperimentKind::Sparse,
        ExperimentKind::Weighted,
        ExperimentKind::KurtzProduct,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Main => "main",
            ExperimentKind::Discrete => "discrete",
            ExperimentKind::Localization => "localization",
            ExperimentKind::Sparse => "sparse",
            ExperimentKind::Weighted => "weighted",
            ExperimentKind::KurtzProduct => "kurtz-product",
        }
    }
}

impl std::str::FromStr for ExperimentKind {
    type Err = LabError;
    fn from_str(s: &str) -> Result<Self> {
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| LabError::Config(format!("unknown experiment kind {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    #[serde(default = "default_profile")]
    pub profile: Profile,
}

fn default_profile() -> Profile {
    Profile::SmoothBump
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig { profile: default_profile() }
    }
}

/// Lacunary families over the nested collections
/// `all dyadic cubes with k_min <= scale <= top`, one per entry of `tops`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyConfig {
    #[serde(default = "default_family_kinds")]
    pub kinds: Vec<FamilyKind>,
    #[serde(default = "default_k_min")]
    pub k_min: u32,
    #[serde(default = "default_tops")]
    pub tops: Vec<u32>,
    #[serde(default = "default_family_decay")]
    pub decay: f64,
}

fn default_family_kinds() -> Vec<FamilyKind> {
    vec![FamilyKind::Haar, FamilyKind::SmoothWavelet]
}
fn default_k_min() -> u32 {
    1
}
fn default_tops() -> Vec<u32> {
    vec![3, 5]
}
fn default_family_decay() -> f64 {
    100.0
}

impl Default for FamilyConfig {
    fn default() -> Self {
        FamilyConfig { kinds: default_family_kinds(), k_min: default_k_min(), tops: default_tops(), decay: default_family_decay() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    /// Allowed relative growth of the maximal ratio under refinement.
    #[serde(default = "default_stability")]
    pub stability: f64,
}

fn default_stability() -> f64 {
    0.1
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { stability: default_stability() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Must agree with `--kind` when present.
    #[serde(default)]
    pub kind: Option<ExperimentKind>,
    pub grid: GridSpec,
    #[serde(default)]
    pub corpus: CorpusSpec,
    /// `L^P(L^Q)` sweep for the main, discrete and product-weight runs.
    #[serde(default)]
    pub norms: Vec<MixedNormSpec>,
    /// Scalar exponents for the weighted, sparse and localization runs.
    #[serde(default = "default_exponents")]
    pub exponents: Vec<f64>,
    #[serde(default)]
    pub filter: FilterConfig,
    #[serde(default)]
    pub family: FamilyConfig,
    #[serde(default)]
    pub weights: Vec<WeightKind>,
    /// Densities of the sets `E = {x_1 < rho}` in the discrete run.
    #[serde(default = "default_densities")]
    pub densities: Vec<f64>,
    /// Loss in the size exponent `1/p - eps`.
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// `eps_p` of the sparse bound for `p > 1` (zero is used for `p <= 1`).
    #[serde(default = "default_eps")]
    pub eps_sparse: f64,
    /// Local averages use `p1 = p1_fraction * p`.
    #[serde(default = "default_p1_fraction")]
    pub p1_fraction: f64,
    /// Decay exponent `M` of `chi~`.
    #[serde(default = "default_decay")]
    pub decay: f64,
    /// Scale of the cubes `I_0` in the localization run.
    #[serde(default = "default_local_scale")]
    pub local_scale: u32,
    #[serde(default)]
    pub tolerances: Tolerances,
    /// Rerun at doubled resolution for the stability verdict.
    #[serde(default = "yes")]
    pub refine: bool,
    #[serde(default = "yes")]
    pub preflight: bool,
}

fn default_exponents() -> Vec<f64> {
    vec![0.5, 1.0, 2.0]
}
fn default_densities() -> Vec<f64> {
    vec![1.0, 0.25, 0.0625, 0.015625]
}
fn default_eps() -> f64 {
    0.1
}
fn default_p1_fraction() -> f64 {
    0.5
}
fn default_decay() -> f64 {
    10.0
}
fn default_local_scale() -> u32 {
    1
}
fn yes() -> bool {
    true
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Defaults for `kind` on `grid`, as used by the bundled configs.
    pub fn template(kind: ExperimentKind, grid: GridSpec) -> Self {
        let mut cfg: ExperimentConfig =
            serde_json::from_value(serde_json::json!({ "grid": grid })).expect("defaults deserialize");
        cfg.kind = Some(kind);
        cfg
    }

    /// Canonical JSON (field order fixed by the struct, maps sorted).
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        for n in &self.norms {
            n.validate()?;
            if n.p.len() != self.grid.dim() {
                return Err(LabError::Config(format!("P {:?} needs one entry per axis of the grid", n.p)));
            }
            if n.q.len() != self.corpus.vshape.len() {
                return Err(LabError::Config(format!("Q {:?} does not match vector shape {:?}", n.q, self.corpus.vshape)));
            }
        }
        for &p in &self.exponents {
            check_exponent("exponent", p)?;
        }
        for &rho in &self.densities {
            if !(rho > 0.0 && rho <= 1.0) {
                return Err(LabError::Config(format!("density {rho} is not in (0, 1]")));
            }
        }
        check_exponent("eps", self.eps)?;
        check_exponent("family decay", self.family.decay)?;
        check_exponent("chi decay", self.decay)?;
        check_exponent("stability tolerance", self.tolerances.stability)?;
        if !(self.p1_fraction > 0.0 && self.p1_fraction <= 1.0) {
            return Err(LabError::Config(format!("p1_fraction {} is not in (0, 1]", self.p1_fraction)));
        }
        if !(self.eps_sparse.is_finite() && self.eps_sparse >= 0.0) {
            return Err(LabError::Config(format!("eps_sparse {} must be finite and >= 0", self.eps_sparse)));
        }
        let mut tops = self.family.tops.clone();
        tops.sort_unstable();
        if tops.first().is_some_and(|&t| t < self.family.k_min) {
            return Err(LabError::Config("every family top must be >= k_min".into()));
        }
        if self.family.kinds.is_empty() && !self.family.tops.is_empty() {
            return Err(LabError::Config("family tops given without family kinds".into()));
        }
        Ok(())
    }

    /// Check that `kind` can run with this config.
    pub fn check_kind(&self, kind: ExperimentKind) -> Result<()> {
        if let Some(k) = self.kind {
            if k != kind {
                return Err(LabError::Config(format!("config is for {:?}, not {:?}", k.name(), kind.name())));
            }
        }
        let need = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(LabError::Config(format!("{} run needs {what}", kind.name())))
            }
        };
        match kind {
            ExperimentKind::Main => need(!self.norms.is_empty(), "at least one norm"),
            ExperimentKind::Discrete => {
                need(!self.norms.is_empty(), "at least one norm")?;
                need(!self.family.tops.is_empty(), "family tops")?;
                need(!self.densities.is_empty(), "densities")
            }
            ExperimentKind::Localization => {
                need(self.exponents.iter().all(|&p| p <= 1.0), "exponents p <= 1")?;
                need(!self.family.tops.is_empty() && !self.weights.is_empty(), "families and weights")?;
                need(self.corpus.vshape.is_empty(), "scalar fixtures")
            }
            ExperimentKind::Sparse => {
                need(!self.family.tops.is_empty() && !self.weights.is_empty(), "families and weights")?;
                need(self.corpus.vshape.is_empty(), "scalar fixtures")
            }
            ExperimentKind::Weighted => {
                need(!self.weights.is_empty(), "weights")?;
                need(self.corpus.vshape.is_empty(), "scalar fixtures")
            }
            ExperimentKind::KurtzProduct => {
                need(self.grid.groups().len() >= 2, "a grid with at least two axis groups")?;
                need(!self.norms.is_empty() && !self.weights.is_empty(), "norms and product weights")?;
                need(
                    self.weights.iter().all(|w| matches!(w, WeightKind::Product { .. })),
                    "product weights only",
                )
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = ExperimentConfig::from_json(r#"{"grid": {"log_res": [6]}, "norms": [{"p": [2]}]}"#).unwrap();
        assert_eq!(cfg.eps, 0.1);
        assert_eq!(cfg.densities, vec![1.0, 0.25, 0.0625, 0.015625]);
        assert!(cfg.refine && cfg.preflight);
        cfg.check_kind(ExperimentKind::Main).unwrap();
        assert!(cfg.check_kind(ExperimentKind::Weighted).is_err());
    }

    #[test]
    fn rejects_bad_exponents_and_fields() {
        assert!(ExperimentConfig::from_json(r#"{"grid": {"log_res": [6]}, "exponents": [-1]}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"grid": {"log_res": [6]}, "eps": 0}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"grid": {"log_res": [6]}, "densities": [1.5]}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"grid": {"log_res": [6]}, "colour": 1}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"grid": {"log_res": [6, 6]}, "norms": [{"p": [2]}]}"#).is_err());
    }

    #[test]
    fn kind_names_round_trip() {
        for k in ExperimentKind::ALL {
            assert_eq!(k.name().parse::<ExperimentKind>().unwrap(), k);
            let json = serde_json::to_string(&k).unwrap();
            assert_eq!(json, format!("\"{}\"", k.name()));
        }
    }

    #[test]
    fn canonical_json_round_trips() {
        let cfg = ExperimentConfig::template(ExperimentKind::Sparse, GridSpec::uniform(1, 8).unwrap());
        let back = ExperimentConfig::from_json(&cfg.canonical_json()).unwrap();
        assert_eq!(back, cfg);
    }
}
