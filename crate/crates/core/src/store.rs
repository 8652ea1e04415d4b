//! Triple ingestion, label interning and the count tables used in reports.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const ENTITY_VOCAB_FILE: &str = "entities.csv";
const RELATION_VOCAB_FILE: &str = "relations.csv";
const TRIPLES_FILE: &str = "triples.tsv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntityId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RelationId(pub u32);

impl EntityId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl RelationId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

impl fmt::Display for RelationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: EntityId, relation: RelationId, tail: EntityId) -> Self {
        Triple {
            head,
            relation,
            tail,
        }
    }
}

/// Label interner assigning dense ids in first-appearance order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    labels: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, label: &str) -> u32 {
        if let Some(&id) = self.ids.get(label) {
            return id;
        }
        let id = u32::try_from(self.labels.len()).expect("vocabulary exceeds u32 ids");
        self.labels.push(label.to_string());
        self.ids.insert(label.to_string(), id);
        id
    }

    pub fn get(&self, label: &str) -> Option<u32> {
        self.ids.get(label).copied()
    }

    pub fn label(&self, id: u32) -> Option<&str> {
        self.labels.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Writes the `id,label` CSV dump.
    pub fn write_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["id", "label"])?;
        for (id, label) in self.labels.iter().enumerate() {
            out.write_record([id.to_string().as_str(), label.as_str()])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads an `id,label` dump; ids must be exactly `0..n` in order.
    pub fn read_csv<R: Read>(source_name: &str, reader: R) -> Result<Self> {
        let mut input = csv::Reader::from_reader(reader);
        let mut vocab = Vocab::new();
        for (row, record) in input.records().enumerate() {
            // header is line 1
            let line = row + 2;
            let record = record.map_err(|e| Error::parse(source_name, line, e.to_string()))?;
            if record.len() != 2 {
                return Err(Error::parse(source_name, line, "expected two fields `id,label`"));
            }
            let id: usize = record[0]
                .parse()
                .map_err(|_| Error::parse(source_name, line, format!("bad id '{}'", &record[0])))?;
            if id != vocab.len() {
                return Err(Error::parse(
                    source_name,
                    line,
                    format!("expected id {}, found {id}", vocab.len()),
                ));
            }
            if vocab.get(&record[1]).is_some() {
                return Err(Error::parse(
                    source_name,
                    line,
                    format!("duplicate label '{}'", &record[1]),
                ));
            }
            vocab.intern(&record[1]);
        }
        Ok(vocab)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TripleFormat {
    Tsv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IngestStats {
    /// Non-empty lines read.
    pub lines: usize,
    pub unique_triples: usize,
}

/// Deduplicated facts with label vocabularies and a (head, relation) index.
///
/// Read-only once built; all query methods take `&self`.
#[derive(Debug, Clone, Default)]
pub struct TripleStore {
    triples: Vec<Triple>,
    facts: HashSet<Triple>,
    entities: Vocab,
    relations: Vocab,
    by_head_relation: HashMap<(EntityId, RelationId), Vec<EntityId>>,
}

impl TripleStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Interns the labels and stores the fact. Returns `false` for a duplicate.
    pub fn insert_labels(&mut self, head: &str, relation: &str, tail: &str) -> bool {
        let h = EntityId(self.entities.intern(head));
        let r = RelationId(self.relations.intern(relation));
        let t = EntityId(self.entities.intern(tail));
        self.insert(Triple::new(h, r, t))
    }

    fn insert(&mut self, triple: Triple) -> bool {
        if !self.facts.insert(triple) {
            return false;
        }
        self.triples.push(triple);
        self.by_head_relation
            .entry((triple.head, triple.relation))
            .or_default()
            .push(triple.tail);
        true
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn entities(&self) -> &Vocab {
        &self.entities
    }

    pub fn relations(&self) -> &Vocab {
        &self.relations
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn contains(&self, triple: &Triple) -> bool {
        self.facts.contains(triple)
    }

    /// Tails stored under `(head, relation)`, in insertion order.
    pub fn tails(&self, head: EntityId, relation: RelationId) -> &[EntityId] {
        self.by_head_relation
            .get(&(head, relation))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    #[cfg(test)]
    pub(crate) fn head_relation_index(&self) -> &HashMap<(EntityId, RelationId), Vec<EntityId>> {
        &self.by_head_relation
    }

    pub fn entity(&self, label: &str) -> Result<EntityId> {
        self.entities
            .get(label)
            .map(EntityId)
            .ok_or_else(|| Error::UnknownLabel {
                kind: "entity",
                label: label.to_string(),
            })
    }

    pub fn relation(&self, label: &str) -> Result<RelationId> {
        self.relations
            .get(label)
            .map(RelationId)
            .ok_or_else(|| Error::UnknownLabel {
                kind: "relation",
                label: label.to_string(),
            })
    }

    pub fn entity_label(&self, id: EntityId) -> Result<&str> {
        self.check_entity(id)?;
        Ok(self.entities.label(id.0).unwrap())
    }

    pub fn relation_label(&self, id: RelationId) -> Result<&str> {
        self.check_relation(id)?;
        Ok(self.relations.label(id.0).unwrap())
    }

    pub fn check_entity(&self, id: EntityId) -> Result<()> {
        if id.index() < self.entities.len() {
            Ok(())
        } else {
            Err(Error::IdOutOfRange {
                kind: "entity",
                id: id.index(),
                size: self.entities.len(),
            })
        }
    }

    pub fn check_relation(&self, id: RelationId) -> Result<()> {
        if id.index() < self.relations.len() {
            Ok(())
        } else {
            Err(Error::IdOutOfRange {
                kind: "relation",
                id: id.index(),
                size: self.relations.len(),
            })
        }
    }

    /// Distinct tails observed under `relation`, ascending by id.
    pub fn targets(&self, relation: RelationId) -> Vec<EntityId> {
        let set: BTreeSet<EntityId> = self
            .triples
            .iter()
            .filter(|t| t.relation == relation)
            .map(|t| t.tail)
            .collect();
        set.into_iter().collect()
    }

    /// Parses tab-separated `head relation tail` lines.
    pub fn from_reader<R: Read>(source_name: &str, reader: R) -> Result<(Self, IngestStats)> {
        let mut store = TripleStore::new();
        let mut lines = 0;
        for (idx, line) in BufReader::new(reader).lines().enumerate() {
            let line_no = idx + 1;
            let line = line.map_err(|e| Error::parse(source_name, line_no, e.to_string()))?;
            let line = line.strip_suffix('\r').unwrap_or(&line);
            if line.trim().is_empty() {
                continue;
            }
            lines += 1;
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::parse(
                    source_name,
                    line_no,
                    format!("expected 3 tab-separated fields, found {}", fields.len()),
                ));
            }
            if fields.iter().any(|f| f.is_empty()) {
                return Err(Error::parse(source_name, line_no, "empty field"));
            }
            store.insert_labels(fields[0], fields[1], fields[2]);
        }
        if store.is_empty() {
            return Err(Error::EmptyInput(source_name.to_string()));
        }
        let stats = IngestStats {
            lines,
            unique_triples: store.len(),
        };
        Ok((store, stats))
    }

    pub fn write_tsv<W: Write>(&self, writer: W) -> std::io::Result<()> {
        let mut out = BufWriter::new(writer);
        for t in &self.triples {
            writeln!(
                out,
                "{}\t{}\t{}",
                self.entities.labels[t.head.index()],
                self.relations.labels[t.relation.index()],
                self.entities.labels[t.tail.index()]
            )?;
        }
        out.flush()
    }

    /// Writes the store directory: both vocabulary dumps plus the triple file.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, vocab) in [
            (ENTITY_VOCAB_FILE, &self.entities),
            (RELATION_VOCAB_FILE, &self.relations),
        ] {
            let path = dir.join(name);
            let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
            vocab
                .write_csv(BufWriter::new(file))
                .map_err(|e| Error::io(&path, e.into()))?;
        }
        let path = dir.join(TRIPLES_FILE);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        self.write_tsv(file).map_err(|e| Error::io(&path, e))
    }

    /// Reloads a directory written by [`TripleStore::save`], preserving ids.
    pub fn load(dir: &Path) -> Result<Self> {
        let read_vocab = |name: &str| -> Result<Vocab> {
            let path = dir.join(name);
            let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
            Vocab::read_csv(&path.display().to_string(), BufReader::new(file))
        };
        let entities = read_vocab(ENTITY_VOCAB_FILE)?;
        let relations = read_vocab(RELATION_VOCAB_FILE)?;

        let path = dir.join(TRIPLES_FILE);
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let source_name = path.display().to_string();
        let (parsed, _) = TripleStore::from_reader(&source_name, file)?;

        let mut store = TripleStore {
            entities,
            relations,
            ..TripleStore::default()
        };
        for t in parsed.triples() {
            let head = store.entity(parsed.entities.labels[t.head.index()].as_str())?;
            let relation = store.relation(parsed.relations.labels[t.relation.index()].as_str())?;
            let tail = store.entity(parsed.entities.labels[t.tail.index()].as_str())?;
            store.insert(Triple::new(head, relation, tail));
        }
        Ok(store)
    }
}

pub fn load_triples(path: &Path, format: TripleFormat) -> Result<(TripleStore, IngestStats)> {
    match format {
        TripleFormat::Tsv => {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            TripleStore::from_reader(&path.display().to_string(), file)
        }
    }
}

/// Which entities count as humans for auditing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HumanRule {
    /// Every entity heading at least one fact with this relation.
    HasSensitiveFact(RelationId),
    /// Every entity `j` with `(j, relation, class)` stored, e.g. `instanceOf human`.
    Typed(RelationId, EntityId),
}

pub fn select_humans(store: &TripleStore, rule: HumanRule) -> Result<BTreeSet<EntityId>> {
    match rule {
        HumanRule::HasSensitiveFact(relation) => {
            store.check_relation(relation)?;
            Ok(store
                .triples()
                .iter()
                .filter(|t| t.relation == relation)
                .map(|t| t.head)
                .collect())
        }
        HumanRule::Typed(relation, class) => {
            store.check_relation(relation)?;
            store.check_entity(class)?;
            Ok(store
                .triples()
                .iter()
                .filter(|t| t.relation == relation && t.tail == class)
                .map(|t| t.head)
                .collect())
        }
    }
}

/// Counts of humans holding both an attribute and a target tail.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CountTable {
    rows: BTreeMap<(EntityId, EntityId), u64>,
}

impl CountTable {
    pub fn get(&self, attribute: EntityId, target: EntityId) -> u64 {
        self.rows.get(&(attribute, target)).copied().unwrap_or(0)
    }

    pub fn rows(&self) -> &BTreeMap<(EntityId, EntityId), u64> {
        &self.rows
    }

    /// Sum of counts for `target` over several attributes.
    pub fn sum_over(&self, attributes: &[EntityId], target: EntityId) -> u64 {
        attributes.iter().map(|&a| self.get(a, target)).sum()
    }

    pub fn merge(&mut self, other: CountTable) {
        for (key, count) in other.rows {
            *self.rows.entry(key).or_insert(0) += count;
        }
    }
}

/// For each tail `t` observed under `target_relation`, counts humans `j`
/// with both `(j, sensitive_relation, attribute)` and `(j, target_relation, t)`.
/// Tails with no such human appear with count 0.
pub fn count_by_attribute(
    store: &TripleStore,
    humans: &BTreeSet<EntityId>,
    sensitive_relation: RelationId,
    attribute: EntityId,
    target_relation: RelationId,
) -> Result<CountTable> {
    store.check_relation(sensitive_relation)?;
    store.check_relation(target_relation)?;
    store.check_entity(attribute)?;

    let mut rows: BTreeMap<(EntityId, EntityId), u64> = store
        .targets(target_relation)
        .into_iter()
        .map(|t| ((attribute, t), 0))
        .collect();
    for &person in humans {
        if !store.contains(&Triple::new(person, sensitive_relation, attribute)) {
            continue;
        }
        for &target in store.tails(person, target_relation) {
            *rows.entry((attribute, target)).or_insert(0) += 1;
        }
    }
    Ok(CountTable { rows })
}
