//! Hyperparameter spaces, variant genomes, and the linear-softmax policy
//! family that variants decode into.
//!
//! A variant assigns one [`Gene`] to every [`HyperparameterSpec`] of a
//! [`HyperparameterSpace`]. The builtin space lays out `K * d` weight genes
//! named `w_<action>_<feature>`, then `temperature`, `floor`, and the
//! categorical `feature_map`; [`PolicyLayout`] maps such a genome onto a
//! [`Policy`].

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::fnv1a64;

pub const WEIGHT_RANGE: (f64, f64) = (-5.0, 5.0);
pub const TEMPERATURE_RANGE: (f64, f64) = (0.05, 5.0);
pub const FLOOR_RANGE: (f64, f64) = (0.0, 0.5);

pub const TEMPERATURE: &str = "temperature";
pub const FLOOR: &str = "floor";
pub const FEATURE_MAP: &str = "feature_map";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("invalid hyperparameter space: {0}")]
    InvalidSpace(String),
    #[error("variant has {got} assignments, space has {expected} hyperparameters")]
    Arity { expected: usize, got: usize },
    #[error("hyperparameter `{name}`: {detail}")]
    OutOfRange { name: String, detail: String },
    #[error("space does not describe a policy: {0}")]
    Layout(String),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("context has dimension {got}, policy expects {expected}")]
    ContextDimension { got: usize, expected: usize },
    #[error("context contains a non-finite entry")]
    NonFiniteContext,
}

// ── Hyperparameter specs ────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub enum ParamKind {
    Continuous { lo: f64, hi: f64 },
    Integer { lo: i64, hi: i64 },
    Categorical { values: Vec<String> },
}

/// One hyperparameter and its range of valid values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec", into = "RawSpec")]
pub struct HyperparameterSpec {
    pub name: String,
    pub kind: ParamKind,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    name: String,
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    range: Option<[serde_json::Number; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    values: Option<Vec<String>>,
}

impl TryFrom<RawSpec> for HyperparameterSpec {
    type Error = PolicyError;

    fn try_from(raw: RawSpec) -> Result<Self, Self::Error> {
        let bad = |msg: &str| PolicyError::InvalidSpace(format!("`{}`: {msg}", raw.name));
        let kind = match raw.kind.as_str() {
            "continuous" => {
                let [lo, hi] = raw.range.as_ref().ok_or_else(|| bad("missing range"))?;
                let (lo, hi) = (
                    lo.as_f64().ok_or_else(|| bad("range bound is not a number"))?,
                    hi.as_f64().ok_or_else(|| bad("range bound is not a number"))?,
                );
                ParamKind::Continuous { lo, hi }
            }
            "integer" => {
                let [lo, hi] = raw.range.as_ref().ok_or_else(|| bad("missing range"))?;
                let (lo, hi) = (
                    lo.as_i64().ok_or_else(|| bad("integer range needs integer bounds"))?,
                    hi.as_i64().ok_or_else(|| bad("integer range needs integer bounds"))?,
                );
                ParamKind::Integer { lo, hi }
            }
            "categorical" => ParamKind::Categorical {
                values: raw.values.clone().ok_or_else(|| bad("missing values"))?,
            },
            other => return Err(bad(&format!("unknown kind `{other}`"))),
        };
        let spec = Self { name: raw.name, kind };
        spec.validate()?;
        Ok(spec)
    }
}

impl From<HyperparameterSpec> for RawSpec {
    fn from(spec: HyperparameterSpec) -> Self {
        let num = |v: f64| serde_json::Number::from_f64(v).expect("ranges are finite");
        match spec.kind {
            ParamKind::Continuous { lo, hi } => RawSpec {
                name: spec.name,
                kind: "continuous".into(),
                range: Some([num(lo), num(hi)]),
                values: None,
            },
            ParamKind::Integer { lo, hi } => RawSpec {
                name: spec.name,
                kind: "integer".into(),
                range: Some([lo.into(), hi.into()]),
                values: None,
            },
            ParamKind::Categorical { values } => RawSpec {
                name: spec.name,
                kind: "categorical".into(),
                range: None,
                values: Some(values),
            },
        }
    }
}

impl HyperparameterSpec {
    pub fn continuous(name: impl Into<String>, lo: f64, hi: f64) -> Self {
        Self {
            name: name.into(),
            kind: ParamKind::Continuous { lo, hi },
        }
    }

    pub fn integer(name: impl Into<String>, lo: i64, hi: i64) -> Self {
        Self {
            name: name.into(),
            kind: ParamKind::Integer { lo, hi },
        }
    }

    pub fn categorical<S: Into<String>>(name: impl Into<String>, values: impl IntoIterator<Item = S>) -> Self {
        Self {
            name: name.into(),
            kind: ParamKind::Categorical {
                values: values.into_iter().map(Into::into).collect(),
            },
        }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        let bad = |msg: String| PolicyError::InvalidSpace(format!("`{}`: {msg}", self.name));
        match &self.kind {
            ParamKind::Continuous { lo, hi } => {
                if !lo.is_finite() || !hi.is_finite() {
                    return Err(bad("range bounds must be finite".into()));
                }
                if lo > hi {
                    return Err(bad(format!("lo {lo} > hi {hi}")));
                }
            }
            ParamKind::Integer { lo, hi } => {
                if lo > hi {
                    return Err(bad(format!("lo {lo} > hi {hi}")));
                }
            }
            ParamKind::Categorical { values } => {
                if values.is_empty() {
                    return Err(bad("categorical value list is empty".into()));
                }
                let mut seen = HashSet::new();
                if let Some(dup) = values.iter().find(|v| !seen.insert(v.as_str())) {
                    return Err(bad(format!("duplicate categorical value `{dup}`")));
                }
            }
        }
        Ok(())
    }

    /// Checks that `gene` has this spec's kind and lies within its range.
    pub fn check(&self, gene: &Gene) -> Result<(), PolicyError> {
        let out = |detail: String| PolicyError::OutOfRange {
            name: self.name.clone(),
            detail,
        };
        match (&self.kind, gene) {
            (ParamKind::Continuous { lo, hi }, Gene::Real(v)) => {
                if v.is_finite() && *lo <= *v && *v <= *hi {
                    Ok(())
                } else {
                    Err(out(format!("{v} is outside [{lo}, {hi}]")))
                }
            }
            (ParamKind::Integer { lo, hi }, Gene::Int(v)) => {
                if lo <= v && v <= hi {
                    Ok(())
                } else {
                    Err(out(format!("{v} is outside [{lo}, {hi}]")))
                }
            }
            (ParamKind::Categorical { values }, Gene::Choice(v)) => {
                if values.iter().any(|c| c == v) {
                    Ok(())
                } else {
                    Err(out(format!("`{v}` is not one of {values:?}")))
                }
            }
            (kind, gene) => Err(out(format!("gene {gene} does not match kind {kind:?}"))),
        }
    }
}

/// The ordered hyperparameter list a variant assigns values to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpace")]
pub struct HyperparameterSpace {
    specs: Vec<HyperparameterSpec>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpace {
    specs: Vec<HyperparameterSpec>,
}

impl TryFrom<RawSpace> for HyperparameterSpace {
    type Error = PolicyError;

    fn try_from(raw: RawSpace) -> Result<Self, Self::Error> {
        Self::new(raw.specs)
    }
}

impl HyperparameterSpace {
    pub fn new(specs: Vec<HyperparameterSpec>) -> Result<Self, PolicyError> {
        if specs.is_empty() {
            return Err(PolicyError::InvalidSpace(
                "space needs at least one hyperparameter".into(),
            ));
        }
        let mut names = HashSet::new();
        for spec in &specs {
            spec.validate()?;
            if !names.insert(spec.name.as_str()) {
                return Err(PolicyError::InvalidSpace(format!("duplicate name `{}`", spec.name)));
            }
        }
        Ok(Self { specs })
    }

    pub fn specs(&self) -> &[HyperparameterSpec] {
        &self.specs
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.specs.iter().position(|s| s.name == name)
    }

    pub fn validate_variant(&self, variant: &Variant) -> Result<(), PolicyError> {
        if variant.assignments.len() != self.specs.len() {
            return Err(PolicyError::Arity {
                expected: self.specs.len(),
                got: variant.assignments.len(),
            });
        }
        self.specs
            .iter()
            .zip(&variant.assignments)
            .try_for_each(|(spec, gene)| spec.check(gene))
    }

    pub fn to_json_pretty(&self) -> String {
        #[derive(Serialize)]
        struct Out<'a> {
            specs: &'a [HyperparameterSpec],
        }
        serde_json::to_string_pretty(&Out { specs: &self.specs }).expect("space serializes")
    }
}

pub fn weight_gene_name(action: usize, feature: usize) -> String {
    format!("w_{action}_{feature}")
}

/// Canonical policy space for `d` features and `k` actions: `k * d` weights,
/// temperature, exploration floor, and feature map.
pub fn builtin_space(d: usize, k: usize) -> HyperparameterSpace {
    let mut specs = Vec::with_capacity(k * d + 3);
    for a in 0..k {
        for j in 0..d {
            specs.push(HyperparameterSpec::continuous(
                weight_gene_name(a, j),
                WEIGHT_RANGE.0,
                WEIGHT_RANGE.1,
            ));
        }
    }
    specs.push(HyperparameterSpec::continuous(
        TEMPERATURE,
        TEMPERATURE_RANGE.0,
        TEMPERATURE_RANGE.1,
    ));
    specs.push(HyperparameterSpec::continuous(FLOOR, FLOOR_RANGE.0, FLOOR_RANGE.1));
    specs.push(HyperparameterSpec::categorical(FEATURE_MAP, FeatureMap::NAMES));
    HyperparameterSpace::new(specs).expect("builtin space is well formed")
}

// ── Variants ────────────────────────────────────────────────────────────

/// A single hyperparameter value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Gene {
    Int(i64),
    Real(f64),
    Choice(String),
}

impl fmt::Display for Gene {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Gene::Int(v) => write!(f, "{v}"),
            Gene::Real(v) => write!(f, "{v}"),
            Gene::Choice(v) => f.write_str(v),
        }
    }
}

/// One full assignment of values to a space's hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub id: String,
    pub assignments: Vec<Gene>,
}

impl Variant {
    pub fn new(assignments: Vec<Gene>) -> Self {
        Self {
            id: variant_id(&assignments),
            assignments,
        }
    }
}

/// Lowercase hex FNV-1a of the decimal renderings joined by `|`.
pub fn variant_id(assignments: &[Gene]) -> String {
    let joined = assignments
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("|");
    format!("{:016x}", fnv1a64(joined.as_bytes()))
}

// ── Policies ────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMap {
    Identity,
    L2Normalized,
}

impl FeatureMap {
    pub const NAMES: [&'static str; 2] = ["identity", "l2_normalized"];

    pub fn name(self) -> &'static str {
        match self {
            FeatureMap::Identity => Self::NAMES[0],
            FeatureMap::L2Normalized => Self::NAMES[1],
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "identity" => Some(FeatureMap::Identity),
            "l2_normalized" => Some(FeatureMap::L2Normalized),
            _ => None,
        }
    }
}

/// Linear-softmax policy with temperature and a uniform exploration floor:
/// `p_a = (1 - floor) * softmax(theta_a . phi(x) / temperature) + floor / K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPolicy", into = "RawPolicy")]
pub struct Policy {
    k: usize,
    d: usize,
    /// Row-major `k x d`.
    weights: Vec<f64>,
    temperature: f64,
    floor: f64,
    feature_map: FeatureMap,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPolicy {
    weights: Vec<Vec<f64>>,
    temperature: f64,
    floor: f64,
    feature_map: FeatureMap,
}

impl TryFrom<RawPolicy> for Policy {
    type Error = PolicyError;

    fn try_from(raw: RawPolicy) -> Result<Self, Self::Error> {
        Policy::new(raw.weights, raw.temperature, raw.floor, raw.feature_map)
    }
}

impl From<Policy> for RawPolicy {
    fn from(p: Policy) -> Self {
        RawPolicy {
            weights: p.weights.chunks(p.d).map(<[f64]>::to_vec).collect(),
            temperature: p.temperature,
            floor: p.floor,
            feature_map: p.feature_map,
        }
    }
}

impl Policy {
    pub fn new(
        weights: Vec<Vec<f64>>,
        temperature: f64,
        floor: f64,
        feature_map: FeatureMap,
    ) -> Result<Self, PolicyError> {
        let k = weights.len();
        let d = weights.first().map_or(0, Vec::len);
        if k < 2 || d < 1 {
            return Err(PolicyError::InvalidPolicy(format!(
                "weight matrix must be K x d with K >= 2, d >= 1 (got {k} x {d})"
            )));
        }
        if weights.iter().any(|row| row.len() != d) {
            return Err(PolicyError::InvalidPolicy("weight rows have unequal length".into()));
        }
        let flat: Vec<f64> = weights.into_iter().flatten().collect();
        Self::from_flat(k, d, flat, temperature, floor, feature_map)
    }

    pub fn from_flat(
        k: usize,
        d: usize,
        weights: Vec<f64>,
        temperature: f64,
        floor: f64,
        feature_map: FeatureMap,
    ) -> Result<Self, PolicyError> {
        if weights.len() != k * d {
            return Err(PolicyError::InvalidPolicy(format!(
                "expected {} weights, got {}",
                k * d,
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(PolicyError::InvalidPolicy("weights must be finite".into()));
        }
        if !(temperature.is_finite() && temperature > 0.0) {
            return Err(PolicyError::InvalidPolicy(format!(
                "temperature must be > 0, got {temperature}"
            )));
        }
        if !(FLOOR_RANGE.0..=FLOOR_RANGE.1).contains(&floor) {
            return Err(PolicyError::InvalidPolicy(format!(
                "floor must lie in [0, 0.5], got {floor}"
            )));
        }
        Ok(Self {
            k,
            d,
            weights,
            temperature,
            floor,
            feature_map,
        })
    }

    /// Uniform policy over `k` actions in dimension `d`.
    pub fn uniform(d: usize, k: usize) -> Self {
        Self::from_flat(k, d, vec![0.0; k * d], 1.0, 0.0, FeatureMap::Identity).expect("uniform policy is valid")
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn feature_map(&self) -> FeatureMap {
        self.feature_map
    }

    pub fn with_floor(&self, floor: f64) -> Result<Self, PolicyError> {
        Self::from_flat(
            self.k,
            self.d,
            self.weights.clone(),
            self.temperature,
            floor,
            self.feature_map,
        )
    }

    fn check_context(&self, context: &[f64]) -> Result<(), PolicyError> {
        if context.len() != self.d {
            return Err(PolicyError::ContextDimension {
                got: context.len(),
                expected: self.d,
            });
        }
        if context.iter().any(|v| !v.is_finite()) {
            return Err(PolicyError::NonFiniteContext);
        }
        Ok(())
    }

    /// Feature vector fed to the linear scorer. A zero context maps to zero
    /// under `l2_normalized`.
    pub fn features(&self, context: &[f64]) -> Result<Vec<f64>, PolicyError> {
        self.check_context(context)?;
        Ok(self.features_unchecked(context))
    }

    fn features_unchecked(&self, context: &[f64]) -> Vec<f64> {
        match self.feature_map {
            FeatureMap::Identity => context.to_vec(),
            FeatureMap::L2Normalized => {
                let norm = context.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 0.0 {
                    context.iter().map(|v| v / norm).collect()
                } else {
                    vec![0.0; context.len()]
                }
            }
        }
    }

    /// Action distribution for `context`.
    pub fn action_probabilities(&self, context: &[f64]) -> Result<Vec<f64>, PolicyError> {
        let mut out = vec![0.0; self.k];
        self.action_probabilities_into(context, &mut out)?;
        Ok(out)
    }

    /// Writes the action distribution into `out` (length `K`).
    pub fn action_probabilities_into(&self, context: &[f64], out: &mut [f64]) -> Result<(), PolicyError> {
        self.check_context(context)?;
        assert_eq!(out.len(), self.k, "output buffer must have one slot per action");
        let phi = self.features_unchecked(context);
        for (slot, row) in out.iter_mut().zip(self.weights.chunks(self.d)) {
            *slot = row.iter().zip(&phi).map(|(w, f)| w * f).sum::<f64>();
        }
        let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for s in out.iter_mut() {
            *s = ((*s - max) / self.temperature).exp();
            total += *s;
        }
        let uniform = 1.0 / self.k as f64;
        for p in out.iter_mut() {
            let base = *p / total;
            // (1 - eps) * base + eps / K, written so that base == 1/K stays exact
            *p = base + self.floor * (uniform - base);
        }
        Ok(())
    }
}

/// Where each policy parameter sits in a space's genome.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyLayout {
    k: usize,
    d: usize,
    /// Gene index of weight `(a, j)` at `a * d + j`.
    weights: Vec<usize>,
    temperature: usize,
    floor: usize,
    feature_map: usize,
}

impl PolicyLayout {
    /// Locates the policy genes in `space` by name. Every gene of the space
    /// must be a policy gene.
    pub fn from_space(space: &HyperparameterSpace) -> Result<Self, PolicyError> {
        let find = |name: &str| {
            space
                .position(name)
                .ok_or_else(|| PolicyError::Layout(format!("missing hyperparameter `{name}`")))
        };
        let temperature = find(TEMPERATURE)?;
        let floor = find(FLOOR)?;
        let feature_map = find(FEATURE_MAP)?;

        let mut cells = Vec::new();
        for (idx, spec) in space.specs().iter().enumerate() {
            if [temperature, floor, feature_map].contains(&idx) {
                continue;
            }
            let (a, j) = parse_weight_name(&spec.name)
                .ok_or_else(|| PolicyError::Layout(format!("unexpected hyperparameter `{}`", spec.name)))?;
            if !matches!(spec.kind, ParamKind::Continuous { .. }) {
                return Err(PolicyError::Layout(format!(
                    "weight `{}` must be continuous",
                    spec.name
                )));
            }
            cells.push((a, j, idx));
        }
        let k = cells.iter().map(|c| c.0 + 1).max().unwrap_or(0);
        let d = cells.iter().map(|c| c.1 + 1).max().unwrap_or(0);
        if k < 2 || d < 1 || cells.len() != k * d {
            return Err(PolicyError::Layout(format!(
                "weight genes must form a full K x d grid with K >= 2 (found {} genes for {k} x {d})",
                cells.len()
            )));
        }
        let mut weights = vec![usize::MAX; k * d];
        for (a, j, idx) in cells {
            weights[a * d + j] = idx;
        }
        if weights.contains(&usize::MAX) {
            return Err(PolicyError::Layout("duplicate weight gene".into()));
        }
        for (idx, what) in [(temperature, TEMPERATURE), (floor, FLOOR)] {
            if !matches!(space.specs()[idx].kind, ParamKind::Continuous { .. }) {
                return Err(PolicyError::Layout(format!("`{what}` must be continuous")));
            }
        }
        match &space.specs()[feature_map].kind {
            ParamKind::Categorical { values } if values.iter().all(|v| FeatureMap::from_name(v).is_some()) => {}
            _ => {
                return Err(PolicyError::Layout(format!(
                    "`{FEATURE_MAP}` must be categorical over {:?}",
                    FeatureMap::NAMES
                )))
            }
        }
        Ok(Self {
            k,
            d,
            weights,
            temperature,
            floor,
            feature_map,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Decodes an already range-checked variant.
    pub fn decode_unchecked(&self, variant: &Variant) -> Result<Policy, PolicyError> {
        let real = |idx: usize| match &variant.assignments[idx] {
            Gene::Real(v) => Ok(*v),
            other => Err(PolicyError::Layout(format!("expected real gene at {idx}, got {other}"))),
        };
        let weights = self.weights.iter().map(|&i| real(i)).collect::<Result<Vec<_>, _>>()?;
        let feature_map = match &variant.assignments[self.feature_map] {
            Gene::Choice(name) => FeatureMap::from_name(name)
                .ok_or_else(|| PolicyError::Layout(format!("unknown feature map `{name}`")))?,
            other => return Err(PolicyError::Layout(format!("expected feature map name, got {other}"))),
        };
        Policy::from_flat(
            self.k,
            self.d,
            weights,
            real(self.temperature)?,
            real(self.floor)?,
            feature_map,
        )
    }

    /// Writes `policy` back into a genome for a space with this layout.
    pub fn encode(&self, space: &HyperparameterSpace, policy: &Policy) -> Result<Variant, PolicyError> {
        if policy.k() != self.k || policy.d() != self.d {
            return Err(PolicyError::Layout(format!(
                "policy is {} x {}, layout is {} x {}",
                policy.k(),
                policy.d(),
                self.k,
                self.d
            )));
        }
        let mut genes = vec![Gene::Int(0); space.len()];
        for (cell, &idx) in self.weights.iter().enumerate() {
            genes[idx] = Gene::Real(policy.weights()[cell]);
        }
        genes[self.temperature] = Gene::Real(policy.temperature());
        genes[self.floor] = Gene::Real(policy.floor());
        genes[self.feature_map] = Gene::Choice(policy.feature_map().name().to_string());
        let variant = Variant::new(genes);
        space.validate_variant(&variant)?;
        Ok(variant)
    }
}

fn parse_weight_name(name: &str) -> Option<(usize, usize)> {
    let rest = name.strip_prefix("w_")?;
    let (a, j) = rest.split_once('_')?;
    Some((a.parse().ok()?, j.parse().ok()?))
}

/// Validates `variant` against `space` and decodes it into a policy.
pub fn decode(space: &HyperparameterSpace, variant: &Variant) -> Result<Policy, PolicyError> {
    space.validate_variant(variant)?;
    PolicyLayout::from_space(space)?.decode_unchecked(variant)
}

/// Encodes `policy` as a variant of `space`.
pub fn encode(space: &HyperparameterSpace, policy: &Policy) -> Result<Variant, PolicyError> {
    PolicyLayout::from_space(space)?.encode(space, policy)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn policy_variant(k: usize, d: usize, weights: &[f64], tau: f64, eps: f64, map: &str) -> Variant {
        let mut genes: Vec<Gene> = weights.iter().map(|&w| Gene::Real(w)).collect();
        assert_eq!(genes.len(), k * d);
        genes.push(Gene::Real(tau));
        genes.push(Gene::Real(eps));
        genes.push(Gene::Choice(map.into()));
        Variant::new(genes)
    }

    #[test]
    fn builtin_space_sizes() {
        assert_eq!(builtin_space(2, 2).len(), 7);
        assert_eq!(builtin_space(4, 3).len(), 15);
        let s = builtin_space(1, 2);
        assert_eq!(s.len(), 5);
        for spec in &s.specs()[..2] {
            assert_eq!(spec.kind, ParamKind::Continuous { lo: -5.0, hi: 5.0 });
        }
    }

    #[test]
    fn zero_weights_decode_to_uniform() {
        let space = builtin_space(3, 4);
        let v = policy_variant(4, 3, &[0.0; 12], 1.0, 0.0, "identity");
        let p = decode(&space, &v).unwrap();
        for x in [[1.0, -2.0, 3.0], [0.0, 0.0, 0.0], [1e3, 1e-3, -7.0]] {
            assert_eq!(p.action_probabilities(&x).unwrap(), vec![0.25; 4]);
        }
    }

    #[test]
    fn zero_weights_uniform_for_any_temperature_and_floor() {
        for (tau, eps) in [(0.05, 0.0), (1.0, 0.3), (5.0, 0.5)] {
            let p = Policy::from_flat(3, 2, vec![0.0; 6], tau, eps, FeatureMap::L2Normalized).unwrap();
            assert_eq!(p.action_probabilities(&[2.0, -1.0]).unwrap(), vec![1.0 / 3.0; 3]);
        }
    }

    #[test]
    fn floor_above_half_rejected() {
        let space = builtin_space(1, 2);
        let v = policy_variant(2, 1, &[0.0, 0.0], 1.0, 1.0, "identity");
        let err = decode(&space, &v).unwrap_err();
        assert!(
            matches!(err, PolicyError::OutOfRange { ref name, .. } if name == FLOOR),
            "{err}"
        );
    }

    #[test]
    fn hand_computed_softmax() {
        let space = builtin_space(1, 2);
        let v = policy_variant(2, 1, &[1.0, 0.0], 1.0, 0.0, "identity");
        let p = decode(&space, &v).unwrap();
        let probs = p.action_probabilities(&[1.0]).unwrap();
        let e = std::f64::consts::E;
        assert!((probs[0] - e / (e + 1.0)).abs() < 1e-12);
        assert!((probs[0] - 0.73106).abs() < 1e-5);
        assert!((probs[1] - 0.26894).abs() < 1e-5);
    }

    #[test]
    fn saturated_scores_mix_with_floor() {
        let p = Policy::new(vec![vec![1000.0], vec![0.0]], 0.05, 0.5, FeatureMap::Identity).unwrap();
        let probs = p.action_probabilities(&[1.0]).unwrap();
        assert!((probs[0] - 0.75).abs() < 1e-9);
        assert!((probs[1] - 0.25).abs() < 1e-9);
    }

    #[test]
    fn l2_feature_map() {
        let p = Policy::from_flat(2, 2, vec![0.0; 4], 1.0, 0.0, FeatureMap::L2Normalized).unwrap();
        let phi = p.features(&[3.0, 4.0]).unwrap();
        assert!((phi[0] - 0.6).abs() < 1e-15 && (phi[1] - 0.8).abs() < 1e-15);
        assert_eq!(p.features(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn non_finite_context_rejected() {
        let p = Policy::uniform(2, 2);
        assert_eq!(
            p.action_probabilities(&[f64::NAN, 0.0]),
            Err(PolicyError::NonFiniteContext)
        );
        assert!(matches!(
            p.action_probabilities(&[1.0]),
            Err(PolicyError::ContextDimension { got: 1, expected: 2 })
        ));
    }

    #[test]
    fn decode_reports_offending_spec() {
        let space = builtin_space(1, 2);
        let v = policy_variant(2, 1, &[6.0, 0.0], 1.0, 0.0, "identity");
        match decode(&space, &v) {
            Err(PolicyError::OutOfRange { name, .. }) => assert_eq!(name, "w_0_0"),
            other => panic!("unexpected {other:?}"),
        }
        let v = policy_variant(2, 1, &[0.0, 0.0], 1.0, 0.0, "cosine");
        assert!(matches!(decode(&space, &v), Err(PolicyError::OutOfRange { name, .. }) if name == FEATURE_MAP));
        let short = Variant::new(vec![Gene::Real(0.0)]);
        assert!(matches!(
            decode(&space, &short),
            Err(PolicyError::Arity { expected: 5, got: 1 })
        ));
    }

    #[test]
    fn variant_id_is_fnv_of_joined_rendering() {
        let genes = vec![Gene::Real(0.5), Gene::Int(3), Gene::Choice("identity".into())];
        assert_eq!(variant_id(&genes), format!("{:016x}", fnv1a64(b"0.5|3|identity")));
        assert_eq!(Variant::new(genes.clone()).id, Variant::new(genes).id);
    }

    #[test]
    fn space_json_round_trip_and_validation() {
        let space = HyperparameterSpace::new(vec![
            HyperparameterSpec::continuous("lr", 0.001, 0.1),
            HyperparameterSpec::integer("depth", 1, 8),
            HyperparameterSpec::categorical("loss", ["l1", "l2"]),
        ])
        .unwrap();
        let json = space.to_json_pretty();
        let back: HyperparameterSpace = serde_json::from_str(&json).unwrap();
        assert_eq!(back, space);
        assert!(json.contains("\"range\": [\n        1,\n        8\n      ]"), "{json}");

        for bad in [
            r#"{"specs": []}"#,
            r#"{"specs": [{"name": "a", "kind": "continuous", "range": [2, 1]}]}"#,
            r#"{"specs": [{"name": "a", "kind": "integer", "range": [0.5, 1]}]}"#,
            r#"{"specs": [{"name": "a", "kind": "categorical", "values": []}]}"#,
            r#"{"specs": [{"name": "a", "kind": "categorical", "values": ["x", "x"]}]}"#,
            r#"{"specs": [{"name": "a", "kind": "continuous", "range": [0, 1]}, {"name": "a", "kind": "continuous", "range": [0, 1]}]}"#,
            r#"{"specs": [{"name": "a", "kind": "ordinal", "values": ["x"]}]}"#,
        ] {
            assert!(serde_json::from_str::<HyperparameterSpace>(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn gene_json_keeps_kind() {
        let genes = vec![
            Gene::Real(1.0),
            Gene::Int(1),
            Gene::Real(1e-7),
            Gene::Choice("a".into()),
        ];
        let json = serde_json::to_string(&genes).unwrap();
        let back: Vec<Gene> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, genes);
    }

    #[test]
    fn policy_json_round_trip() {
        let p = Policy::new(
            vec![vec![1.0, 2.0], vec![-1.0, 0.5], vec![0.0, 0.0]],
            0.7,
            0.1,
            FeatureMap::L2Normalized,
        )
        .unwrap();
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(serde_json::from_str::<Policy>(&json).unwrap(), p);
        assert!(serde_json::from_str::<Policy>(
            r#"{"weights": [[1.0], [2.0, 3.0]], "temperature": 1.0, "floor": 0.0, "feature_map": "identity"}"#
        )
        .is_err());
    }

    #[test]
    fn layout_rejects_foreign_spaces() {
        let space = HyperparameterSpace::new(vec![HyperparameterSpec::continuous("g", 0.0, 1.0)]).unwrap();
        assert!(matches!(PolicyLayout::from_space(&space), Err(PolicyError::Layout(_))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_policy() -> impl Strategy<Value = Policy> {
            (2usize..5, 1usize..5).prop_flat_map(|(k, d)| {
                (
                    prop::collection::vec(-5.0f64..=5.0, k * d),
                    0.05f64..=5.0,
                    0.0f64..=0.5,
                    prop::bool::ANY,
                )
                    .prop_map(move |(w, tau, eps, l2)| {
                        let map = if l2 {
                            FeatureMap::L2Normalized
                        } else {
                            FeatureMap::Identity
                        };
                        Policy::from_flat(k, d, w, tau, eps, map).unwrap()
                    })
            })
        }

        proptest! {
            #[test]
            fn probabilities_are_floored_distributions(p in arb_policy(), seed in prop::collection::vec(-5.0f64..5.0, 4)) {
                let x: Vec<f64> = (0..p.d()).map(|j| seed[j % seed.len()] * (j as f64 + 1.0)).collect();
                let probs = p.action_probabilities(&x).unwrap();
                let total: f64 = probs.iter().sum();
                prop_assert!((total - 1.0).abs() <= 1e-12, "sum {}", total);
                let lower = p.floor() / p.k() as f64;
                for q in &probs {
                    prop_assert!(*q >= lower * (1.0 - 1e-12), "{} < {}", q, lower);
                }
            }

            #[test]
            fn shift_invariance(p in arb_policy(), c in -3.0f64..3.0) {
                // a bias feature with equal weight for every action shifts all scores by c
                let k = p.k();
                let d = p.d();
                let mut rows: Vec<Vec<f64>> = p.weights().chunks(d).map(|r| r.to_vec()).collect();
                for row in &mut rows { row.push(c); }
                let shifted = Policy::new(rows, p.temperature(), p.floor(), FeatureMap::Identity).unwrap();
                let base = Policy::from_flat(k, d, p.weights().to_vec(), p.temperature(), p.floor(), FeatureMap::Identity).unwrap();
                let x: Vec<f64> = (0..d).map(|j| (j as f64) - 1.0).collect();
                let mut xb = x.clone();
                xb.push(1.0);
                let a = base.action_probabilities(&x).unwrap();
                let b = shifted.action_probabilities(&xb).unwrap();
                for (u, v) in a.iter().zip(&b) {
                    prop_assert!((u - v).abs() < 1e-12);
                }
            }

            #[test]
            fn encode_decode_round_trip(p in arb_policy()) {
                let space = builtin_space(p.d(), p.k());
                let v = encode(&space, &p).unwrap();
                let back = decode(&space, &v).unwrap();
                for i in 0..5 {
                    let x: Vec<f64> = (0..p.d()).map(|j| ((i * 7 + j) as f64).sin() * 3.0).collect();
                    let a = p.action_probabilities(&x).unwrap();
                    let b = back.action_probabilities(&x).unwrap();
                    for (u, w) in a.iter().zip(&b) {
                        prop_assert!((u - w).abs() <= 1e-12);
                    }
                }
            }
        }
    }
}
