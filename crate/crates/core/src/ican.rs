//! Inter-class analogical pseudo-features.
//!
//! A real feature `f` of class `y` is expressed relative to its prototype,
//! `q = f - p^y`, rescaled per dimension by the ratio of the target and source
//! standard deviations, and re-anchored on the target prototype:
//!
//! ```text
//! zeta = q * r^target / (r^y + alpha) + p^target
//! ```
//!
//! The Gaussian-noise generator (`p^target + eps * r^target`) is kept as the
//! comparison baseline. Both are registered by name in [`generator_registry`].

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::registry::Registry;
use crate::stats::StatisticsStore;
use crate::Label;

pub const DEFAULT_ALPHA: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoFeature {
    pub vector: Vec<f64>,
    pub label: Label,
    pub source_label: Label,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    #[default]
    Analogical,
    GaussianNoise,
}

impl GeneratorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            GeneratorKind::Analogical => "analogical",
            GeneratorKind::GaussianNoise => "gaussian_noise",
        }
    }
}

impl std::str::FromStr for GeneratorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "analogical" => Ok(GeneratorKind::Analogical),
            "gaussian_noise" | "gaussian" => Ok(GeneratorKind::GaussianNoise),
            other => Err(Error::UnknownStrategy {
                kind: "pseudo-feature generator",
                name: other.to_string(),
                available: "analogical, gaussian_noise".into(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IcanConfig {
    /// Zero-division guard added to the source STD.
    pub alpha: f64,
    /// Pseudo-features generated per real feature in a batch. Fractional
    /// values are allowed: a batch of `n` real features yields
    /// `round(pseudo_per_real * n)` pseudo-features.
    pub pseudo_per_real: f64,
    pub generator: GeneratorKind,
}

impl Default for IcanConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            pseudo_per_real: 1.0,
            generator: GeneratorKind::Analogical,
        }
    }
}

impl IcanConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid_argument("alpha must be positive and finite"));
        }
        if !(self.pseudo_per_real >= 0.0 && self.pseudo_per_real.is_finite()) {
            return Err(Error::invalid_argument(
                "pseudo_per_real must be non-negative and finite",
            ));
        }
        Ok(())
    }

    /// Number of pseudo-features produced for a batch of `real_count` features.
    pub fn pseudo_count(&self, real_count: usize) -> usize {
        (self.pseudo_per_real * real_count as f64).round() as usize
    }
}

/// Elementwise `feature - prototype`.
pub fn relative_distribution(feature: &[f64], prototype: &[f64]) -> Result<Vec<f64>> {
    check_dim(prototype.len(), feature.len())?;
    Ok(feature.iter().zip(prototype).map(|(f, p)| f - p).collect())
}

pub fn generate_analogical(
    store: &StatisticsStore,
    feature: &[f64],
    source: Label,
    target: Label,
    alpha: f64,
) -> Result<PseudoFeature> {
    if source == target {
        return Err(Error::invalid_argument(
            "pseudo-feature target must differ from the source class",
        ));
    }
    if !(alpha > 0.0) {
        return Err(Error::invalid_argument("alpha must be positive"));
    }
    let src = store.get(source)?;
    let dst = store.get(target)?;
    let q = relative_distribution(feature, &src.prototype)?;
    let src_std = src.std();
    let dst_std = dst.std();

    let vector = q
        .iter()
        .zip(&src_std)
        .zip(dst_std.iter().zip(&dst.prototype))
        .map(|((q, rs), (rt, pt))| q * (rt / (rs + alpha)) + pt)
        .collect::<Vec<_>>();
    if let Some(index) = vector.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    Ok(PseudoFeature {
        vector,
        label: target,
        source_label: source,
    })
}

/// Uniform draw over seen classes other than `source`. `None` when no such
/// class exists yet.
pub fn sample_old_class<R: Rng + ?Sized>(
    store: &StatisticsStore,
    source: Label,
    rng: &mut R,
) -> Option<Label> {
    let candidates: Vec<Label> = store
        .seen_classes()
        .into_iter()
        .filter(|&c| c != source)
        .collect();
    if candidates.is_empty() {
        return None;
    }
    Some(candidates[rng.random_range(0..candidates.len())])
}

pub fn generate_gaussian_baseline<R: Rng + ?Sized>(
    store: &StatisticsStore,
    target: Label,
    rng: &mut R,
) -> Result<PseudoFeature> {
    let dst = store.get(target)?;
    let std = dst.std();
    let vector = dst
        .prototype
        .iter()
        .zip(&std)
        .map(|(p, r)| {
            let eps: f64 = rng.sample(StandardNormal);
            p + eps * r
        })
        .collect();
    Ok(PseudoFeature {
        vector,
        label: target,
        source_label: target,
    })
}

/// A strategy producing one pseudo-feature of `target` given a real feature of
/// `source`.
pub trait PseudoGenerator: Send + Sync {
    fn name(&self) -> &'static str;

    fn generate(
        &self,
        store: &StatisticsStore,
        feature: &[f64],
        source: Label,
        target: Label,
        rng: &mut dyn RngCore,
    ) -> Result<PseudoFeature>;
}

pub struct AnalogicalGenerator {
    pub alpha: f64,
}

impl PseudoGenerator for AnalogicalGenerator {
    fn name(&self) -> &'static str {
        "analogical"
    }

    fn generate(
        &self,
        store: &StatisticsStore,
        feature: &[f64],
        source: Label,
        target: Label,
        _rng: &mut dyn RngCore,
    ) -> Result<PseudoFeature> {
        generate_analogical(store, feature, source, target, self.alpha)
    }
}

pub struct GaussianNoiseGenerator;

impl PseudoGenerator for GaussianNoiseGenerator {
    fn name(&self) -> &'static str {
        "gaussian_noise"
    }

    fn generate(
        &self,
        store: &StatisticsStore,
        _feature: &[f64],
        source: Label,
        target: Label,
        rng: &mut dyn RngCore,
    ) -> Result<PseudoFeature> {
        if source == target {
            return Err(Error::invalid_argument(
                "pseudo-feature target must differ from the source class",
            ));
        }
        let mut pseudo = generate_gaussian_baseline(store, target, rng)?;
        pseudo.source_label = source;
        Ok(pseudo)
    }
}

pub type GeneratorRegistry = Registry<dyn PseudoGenerator, IcanConfig>;

/// Registry with the built-in generators.
pub fn generator_registry() -> GeneratorRegistry {
    let mut reg = GeneratorRegistry::new("pseudo-feature generator");
    reg.register(GeneratorKind::Analogical.as_str(), |cfg: &IcanConfig| {
        Box::new(AnalogicalGenerator { alpha: cfg.alpha }) as Box<dyn PseudoGenerator>
    });
    reg.register(GeneratorKind::GaussianNoise.as_str(), |_: &IcanConfig| {
        Box::new(GaussianNoiseGenerator) as Box<dyn PseudoGenerator>
    });
    reg
}
