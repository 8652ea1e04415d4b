//! Synthetic graphs with planted attribute/profession correlations.

use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::store::TripleStore;

const GROUP_PREFIX: &str = "group.";

#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    /// Tail of every member's sensitive fact.
    pub attribute: String,
    /// Profession label and probability, in declaration order.
    pub professions: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub humans_per_group: usize,
    pub groups: Vec<Group>,
    pub sensitive_relation: String,
    pub target_relation: String,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.humans_per_group == 0 {
            return Err(Error::Config("humans_per_group must be positive".into()));
        }
        if self.groups.len() < 2 {
            return Err(Error::Config("at least two groups are required".into()));
        }
        for (i, g) in self.groups.iter().enumerate() {
            if self.groups[..i].iter().any(|other| other.attribute == g.attribute) {
                return Err(Error::Config(format!("duplicate group '{}'", g.attribute)));
            }
            if g.professions.is_empty() {
                return Err(Error::Config(format!("group '{}' has no professions", g.attribute)));
            }
            if g.professions.iter().any(|(_, p)| !(p.is_finite() && *p >= 0.0)) {
                return Err(Error::Config(format!("group '{}' has a negative probability", g.attribute)));
            }
            let total: f64 = g.professions.iter().map(|(_, p)| p).sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "group '{}' probabilities sum to {total}, not 1",
                    g.attribute
                )));
            }
        }
        Ok(())
    }

    /// Two groups over `professions` labels `prof_00..`. With probability
    /// `skew` a member draws uniformly from its group's `planted` designated
    /// professions, otherwise uniformly from all of them. Group `group_a`
    /// owns `prof_00..prof_{planted-1}`, `group_b` the next `planted`.
    pub fn planted(humans_per_group: usize, professions: usize, planted: usize, skew: f64, seed: u64) -> Self {
        assert!(2 * planted <= professions, "not enough professions to plant");
        let label = |i: usize| format!("prof_{i:02}");
        let base = (1.0 - skew) / professions as f64;
        let group = |attribute: &str, owned: std::ops::Range<usize>| Group {
            attribute: attribute.to_string(),
            professions: (0..professions)
                .map(|i| {
                    let extra = if owned.contains(&i) { skew / planted as f64 } else { 0.0 };
                    (label(i), base + extra)
                })
                .collect(),
        };
        SynthSpec {
            humans_per_group,
            groups: vec![group("group_a", 0..planted), group("group_b", planted..2 * planted)],
            sensitive_relation: "hasAttribute".into(),
            target_relation: "hasProfession".into(),
            seed,
        }
    }

    pub fn from_key_values(mut kv: KeyValues) -> Result<Self> {
        let humans_per_group = kv
            .take_parsed("humans_per_group")?
            .ok_or_else(|| Error::Config("missing key 'humans_per_group'".into()))?;
        let sensitive_relation = kv.require_str("sensitive_relation")?;
        let target_relation = kv.require_str("target_relation")?;
        let seed = kv.take_parsed("seed")?.unwrap_or(0);
        let source_name = kv.source_name().to_string();
        let mut groups = Vec::new();
        for (attribute, value, line) in kv.take_prefixed(GROUP_PREFIX) {
            let mut professions = Vec::new();
            for item in value.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                let parsed = item
                    .rsplit_once(':')
                    .and_then(|(label, p)| Some((label.trim().to_string(), p.trim().parse::<f64>().ok()?)));
                match parsed {
                    Some(entry) if !entry.0.is_empty() => professions.push(entry),
                    _ => {
                        return Err(Error::parse(
                            &source_name,
                            line,
                            format!("expected `label:probability`, found '{item}'"),
                        ))
                    }
                }
            }
            groups.push(Group {
                attribute,
                professions,
            });
        }
        kv.finish()?;
        let spec = SynthSpec {
            humans_per_group,
            groups,
            sensitive_relation,
            target_relation,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_key_values(KeyValues::read(path)?)
    }

    pub fn to_key_values(&self) -> String {
        let mut out = format!(
            "humans_per_group = {}\nsensitive_relation = {}\ntarget_relation = {}\nseed = {}\n",
            self.humans_per_group, self.sensitive_relation, self.target_relation, self.seed
        );
        for g in &self.groups {
            let dist: Vec<String> = g.professions.iter().map(|(l, p)| format!("{l}:{p}")).collect();
            out += &format!("{GROUP_PREFIX}{} = {}\n", g.attribute, dist.join(", "));
        }
        out
    }
}

/// Label of the `index`-th member of a group.
pub fn human_label(attribute: &str, index: usize) -> String {
    format!("human_{attribute}_{index:05}")
}

/// Two facts per human: its group attribute and one drawn profession.
pub fn generate(spec: &SynthSpec) -> Result<TripleStore> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut store = TripleStore::new();
    for group in &spec.groups {
        let weights = WeightedIndex::new(group.professions.iter().map(|(_, p)| *p))
            .map_err(|e| Error::Config(format!("group '{}': {e}", group.attribute)))?;
        for i in 0..spec.humans_per_group {
            let human = human_label(&group.attribute, i);
            store.insert_labels(&human, &spec.sensitive_relation, &group.attribute);
            let profession = &group.professions[weights.sample(&mut rng)].0;
            store.insert_labels(&human, &spec.target_relation, profession);
        }
    }
    Ok(store)
}
