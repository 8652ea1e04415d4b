//! Bias measurements over a trained embedding model.
//!
//! The finetuning probe moves each human embedding one gradient step along
//! `m = g(e_j, r_s, e_a) - mean_b g(e_j, r_s, e_b)` and records how much
//! every target score `g(e_j, r_p, e_p)` changes. Averaging that change over
//! all humans gives the bias score `b_p`. The trained model is only read;
//! perturbed embeddings live in scratch buffers.
//!
//! The pairwise baseline instead compares two fixed entities directly.

use std::collections::BTreeSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::model::{Argument, EmbeddingModel, ScoreFunction};
use crate::store::{count_by_attribute, select_humans, CountTable, EntityId, HumanRule, RelationId, TripleStore};

pub const DEFAULT_ALPHA: f64 = 0.01;

/// Ranges at least this long are split across threads during reduction.
const PARALLEL_SPAN: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct BiasProbeSpec {
    pub sensitive_relation: RelationId,
    pub attribute_a: EntityId,
    /// One attribute for a pairwise-attribute probe, several for one-vs-rest.
    pub attribute_b: Vec<EntityId>,
    pub target_relation: RelationId,
    pub alpha: f64,
    /// Ascending, no duplicates.
    pub humans: Vec<EntityId>,
}

impl BiasProbeSpec {
    pub fn new(
        sensitive_relation: RelationId,
        attribute_a: EntityId,
        attribute_b: Vec<EntityId>,
        target_relation: RelationId,
        alpha: f64,
        humans: impl IntoIterator<Item = EntityId>,
    ) -> Result<Self> {
        let humans: BTreeSet<EntityId> = humans.into_iter().collect();
        let spec = BiasProbeSpec {
            sensitive_relation,
            attribute_a,
            attribute_b,
            target_relation,
            alpha,
            humans: humans.into_iter().collect(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.attribute_b.is_empty() {
            return Err(Error::Config("attribute_b must name at least one attribute".into()));
        }
        if self.attribute_b.contains(&self.attribute_a) {
            return Err(Error::Config("attribute_a must not appear in attribute_b".into()));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if self.humans.is_empty() {
            return Err(Error::NoHumans);
        }
        if !self.humans.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config("humans must be ascending without duplicates".into()));
        }
        Ok(())
    }

    /// The same probe with the roles of `a` and `b` exchanged (`|B| = 1` only).
    pub fn swapped(&self) -> Result<Self> {
        match self.attribute_b.as_slice() {
            [b] => Ok(BiasProbeSpec {
                attribute_a: *b,
                attribute_b: vec![self.attribute_a],
                ..self.clone()
            }),
            _ => Err(Error::Config("only a single-attribute comparison can be swapped".into())),
        }
    }

    pub fn with_alpha(&self, alpha: f64) -> Self {
        BiasProbeSpec {
            alpha,
            ..self.clone()
        }
    }

    fn check_against(&self, model: &EmbeddingModel) -> Result<()> {
        let entity_ok = |id: EntityId| {
            if id.index() < model.entity_count() {
                Ok(())
            } else {
                Err(Error::IdOutOfRange {
                    kind: "entity",
                    id: id.index(),
                    size: model.entity_count(),
                })
            }
        };
        let relation_ok = |id: RelationId| {
            if id.index() < model.relation_count() {
                Ok(())
            } else {
                Err(Error::IdOutOfRange {
                    kind: "relation",
                    id: id.index(),
                    size: model.relation_count(),
                })
            }
        };
        relation_ok(self.sensitive_relation)?;
        relation_ok(self.target_relation)?;
        entity_ok(self.attribute_a)?;
        self.attribute_b.iter().try_for_each(|&b| entity_ok(b))?;
        self.humans.iter().try_for_each(|&h| entity_ok(h))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasScoreRow {
    pub target: EntityId,
    pub b_p: f64,
    pub count_a: u64,
    pub count_b: u64,
}

fn check_entity(model: &EmbeddingModel, id: EntityId) -> Result<()> {
    if id.index() < model.entity_count() {
        Ok(())
    } else {
        Err(Error::IdOutOfRange {
            kind: "entity",
            id: id.index(),
            size: model.entity_count(),
        })
    }
}

/// `∂m/∂e_j` for `m = g(e_j, r_s, e_a) - mean_{b in B} g(e_j, r_s, e_b)`.
pub fn finetune_direction(model: &EmbeddingModel, spec: &BiasProbeSpec, person: EntityId) -> Result<Vec<f64>> {
    spec.validate()?;
    spec.check_against(model)?;
    check_entity(model, person)?;
    Ok(direction_unchecked(model, spec, model.entity(person)))
}

fn direction_unchecked(model: &EmbeddingModel, spec: &BiasProbeSpec, head: &[f64]) -> Vec<f64> {
    let kind = model.kind();
    let relation = model.relation(spec.sensitive_relation);
    let mut delta = vec![0.0; model.width()];
    kind.add_gradient(head, relation, model.entity(spec.attribute_a), Argument::Head, 1.0, &mut delta);
    let share = -1.0 / spec.attribute_b.len() as f64;
    for &b in &spec.attribute_b {
        kind.add_gradient(head, relation, model.entity(b), Argument::Head, share, &mut delta);
    }
    delta
}

/// `e_j' = e_j + alpha * ∂m/∂e_j`, computed in a fresh buffer.
pub fn finetuned_embedding(model: &EmbeddingModel, spec: &BiasProbeSpec, person: EntityId) -> Result<Vec<f64>> {
    let delta = finetune_direction(model, spec, person)?;
    Ok(step(model.entity(person), &delta, spec.alpha))
}

fn step(head: &[f64], delta: &[f64], alpha: f64) -> Vec<f64> {
    head.iter().zip(delta).map(|(e, d)| e + alpha * d).collect()
}

/// `g(e_j', r_p, e_p) - g(e_j, r_p, e_p)` for one person and one target.
pub fn profession_delta(
    model: &EmbeddingModel,
    spec: &BiasProbeSpec,
    person: EntityId,
    target: EntityId,
) -> Result<f64> {
    check_entity(model, target)?;
    let updated = finetuned_embedding(model, spec, person)?;
    let kind = model.kind();
    let relation = model.relation(spec.target_relation);
    let tail = model.entity(target);
    Ok(kind.score(&updated, relation, tail) - kind.score(model.entity(person), relation, tail))
}

/// Per-target deltas for one person, in `targets` order.
fn person_deltas(model: &EmbeddingModel, spec: &BiasProbeSpec, person: EntityId, targets: &[EntityId]) -> Vec<f64> {
    let kind = model.kind();
    let original = model.entity(person);
    let delta = direction_unchecked(model, spec, original);
    let updated = step(original, &delta, spec.alpha);
    let relation = model.relation(spec.target_relation);
    targets
        .iter()
        .map(|&t| {
            let tail = model.entity(t);
            kind.score(&updated, relation, tail) - kind.score(original, relation, tail)
        })
        .collect()
}

/// Sums `leaf(i)` for `i` in `lo..hi` with a fixed midpoint-split tree, so the
/// result does not depend on how the work is scheduled across threads.
fn tree_sum<F>(lo: usize, hi: usize, leaf: &F) -> Vec<f64>
where
    F: Fn(usize) -> Vec<f64> + Sync,
{
    debug_assert!(hi > lo);
    if hi - lo == 1 {
        return leaf(lo);
    }
    let mid = lo + (hi - lo) / 2;
    let (mut left, right) = if hi - lo >= PARALLEL_SPAN {
        rayon::join(|| tree_sum(lo, mid, leaf), || tree_sum(mid, hi, leaf))
    } else {
        (tree_sum(lo, mid, leaf), tree_sum(mid, hi, leaf))
    };
    for (l, r) in left.iter_mut().zip(right) {
        *l += r;
    }
    left
}

/// Mean probe delta over `spec.humans` for each target, in `targets` order.
pub fn mean_deltas(model: &EmbeddingModel, spec: &BiasProbeSpec, targets: &[EntityId]) -> Result<Vec<f64>> {
    spec.validate()?;
    spec.check_against(model)?;
    targets.iter().try_for_each(|&t| check_entity(model, t))?;
    if targets.is_empty() {
        return Ok(Vec::new());
    }
    let humans = &spec.humans;
    let sums = tree_sum(0, humans.len(), &|i| person_deltas(model, spec, humans[i], targets));
    let n = humans.len() as f64;
    Ok(sums.into_iter().map(|s| s / n).collect())
}

fn attribute_counts(store: &TripleStore, spec: &BiasProbeSpec) -> Result<(CountTable, CountTable)> {
    let humans: BTreeSet<EntityId> = spec.humans.iter().copied().collect();
    let a = count_by_attribute(store, &humans, spec.sensitive_relation, spec.attribute_a, spec.target_relation)?;
    let mut b = CountTable::default();
    for &attr in &spec.attribute_b {
        b.merge(count_by_attribute(store, &humans, spec.sensitive_relation, attr, spec.target_relation)?);
    }
    Ok((a, b))
}

/// One row per tail observed under the target relation, ascending by id,
/// unfiltered. `count_b` sums over every attribute in `B`.
pub fn bias_scores(model: &EmbeddingModel, store: &TripleStore, spec: &BiasProbeSpec) -> Result<Vec<BiasScoreRow>> {
    model.check_matches(store)?;
    let targets = store.targets(spec.target_relation);
    let means = mean_deltas(model, spec, &targets)?;
    let (counts_a, counts_b) = attribute_counts(store, spec)?;
    Ok(targets
        .iter()
        .zip(means)
        .map(|(&target, b_p)| BiasScoreRow {
            target,
            b_p,
            count_a: counts_a.get(spec.attribute_a, target),
            count_b: counts_b.sum_over(&spec.attribute_b, target),
        })
        .collect())
}

/// `g(e_person_a, r_p, e_p) - g(e_person_b, r_p, e_p)` for every target,
/// with the same count columns as [`bias_scores`].
pub fn pairwise_bias(
    model: &EmbeddingModel,
    store: &TripleStore,
    person_a: EntityId,
    person_b: EntityId,
    spec: &BiasProbeSpec,
) -> Result<Vec<BiasScoreRow>> {
    model.check_matches(store)?;
    spec.check_against(model)?;
    check_entity(model, person_a)?;
    check_entity(model, person_b)?;
    let kind = model.kind();
    let relation = model.relation(spec.target_relation);
    let (counts_a, counts_b) = attribute_counts(store, spec)?;
    Ok(store
        .targets(spec.target_relation)
        .into_iter()
        .map(|target| {
            let tail = model.entity(target);
            let b_p = kind.score(model.entity(person_a), relation, tail)
                - kind.score(model.entity(person_b), relation, tail);
            BiasScoreRow {
                target,
                b_p,
                count_a: counts_a.get(spec.attribute_a, target),
                count_b: counts_b.sum_over(&spec.attribute_b, target),
            }
        })
        .collect())
}

/// How the probe file selects humans, before label resolution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HumanSelector {
    /// Humans have at least one fact with this relation (defaults to the
    /// sensitive relation).
    HasSensitiveFact(Option<String>),
    Typed { relation: String, class: String },
}

impl HumanSelector {
    fn parse(text: &str) -> Option<Self> {
        let text = text.trim();
        if text == "has_sensitive_fact" {
            return Some(HumanSelector::HasSensitiveFact(None));
        }
        let (name, args) = text.strip_suffix(')')?.split_once('(')?;
        let args: Vec<&str> = args.split(',').map(str::trim).collect();
        match (name.trim(), args.as_slice()) {
            ("has_sensitive_fact", [rel]) if !rel.is_empty() => {
                Some(HumanSelector::HasSensitiveFact(Some(rel.to_string())))
            }
            ("typed", [rel, class]) if !rel.is_empty() && !class.is_empty() => Some(HumanSelector::Typed {
                relation: rel.to_string(),
                class: class.to_string(),
            }),
            _ => None,
        }
    }
}

impl std::fmt::Display for HumanSelector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HumanSelector::HasSensitiveFact(None) => f.write_str("has_sensitive_fact"),
            HumanSelector::HasSensitiveFact(Some(rel)) => write!(f, "has_sensitive_fact({rel})"),
            HumanSelector::Typed { relation, class } => write!(f, "typed({relation}, {class})"),
        }
    }
}

/// Comparison attributes as written in a probe file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AttributeSet {
    Labels(Vec<String>),
    /// `*`: every other tail of the sensitive relation (one-vs-rest).
    AllOthers,
}

/// Label-level probe description read from a `key = value` file.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeFile {
    pub sensitive_relation: String,
    pub attribute_a: String,
    pub attribute_b: AttributeSet,
    pub target_relation: String,
    pub alpha: f64,
    pub human_rule: HumanSelector,
}

impl ProbeFile {
    pub fn from_key_values(mut kv: KeyValues) -> Result<Self> {
        let sensitive_relation = kv.require_str("sensitive_relation")?;
        let attribute_a = kv.require_str("attribute_a")?;
        let raw_b = kv.require_str("attribute_b")?;
        let attribute_b = if raw_b.trim() == "*" {
            AttributeSet::AllOthers
        } else {
            let labels: Vec<String> = raw_b
                .split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect();
            if labels.is_empty() {
                return Err(Error::Config("attribute_b is empty".into()));
            }
            AttributeSet::Labels(labels)
        };
        let target_relation = kv.require_str("target_relation")?;
        let alpha = kv.take_parsed("alpha")?.unwrap_or(DEFAULT_ALPHA);
        let human_rule = match kv.take_str("human_rule") {
            None => HumanSelector::HasSensitiveFact(None),
            Some((text, line)) => HumanSelector::parse(&text).ok_or_else(|| {
                Error::Parse {
                    source_name: kv.source_name().to_string(),
                    line,
                    message: format!(
                        "bad human_rule '{text}' (expected has_sensitive_fact, has_sensitive_fact(REL) or typed(REL, CLASS))"
                    ),
                }
            })?,
        };
        kv.finish()?;
        Ok(ProbeFile {
            sensitive_relation,
            attribute_a,
            attribute_b,
            target_relation,
            alpha,
            human_rule,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_key_values(KeyValues::read(path)?)
    }

    pub fn to_key_values(&self) -> String {
        let b = match &self.attribute_b {
            AttributeSet::AllOthers => "*".to_string(),
            AttributeSet::Labels(labels) => labels.join(","),
        };
        format!(
            "sensitive_relation = {}\nattribute_a = {}\nattribute_b = {}\ntarget_relation = {}\nalpha = {}\nhuman_rule = {}\n",
            self.sensitive_relation, self.attribute_a, b, self.target_relation, self.alpha, self.human_rule
        )
    }

    /// Resolves labels against the store and selects the humans.
    pub fn resolve(&self, store: &TripleStore) -> Result<BiasProbeSpec> {
        let sensitive = store.relation(&self.sensitive_relation)?;
        let attribute_a = store.entity(&self.attribute_a)?;
        let attribute_b = match &self.attribute_b {
            AttributeSet::Labels(labels) => labels.iter().map(|l| store.entity(l)).collect::<Result<Vec<_>>>()?,
            AttributeSet::AllOthers => store
                .targets(sensitive)
                .into_iter()
                .filter(|&e| e != attribute_a)
                .collect(),
        };
        let target = store.relation(&self.target_relation)?;
        let rule = match &self.human_rule {
            HumanSelector::HasSensitiveFact(None) => HumanRule::HasSensitiveFact(sensitive),
            HumanSelector::HasSensitiveFact(Some(rel)) => HumanRule::HasSensitiveFact(store.relation(rel)?),
            HumanSelector::Typed { relation, class } => {
                HumanRule::Typed(store.relation(relation)?, store.entity(class)?)
            }
        };
        let humans = select_humans(store, rule)?;
        BiasProbeSpec::new(sensitive, attribute_a, attribute_b, target, self.alpha, humans)
    }
}
