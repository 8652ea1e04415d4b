//! Embedding tables and the TransE (dot similarity) and ComplEx score functions.
//!
//! Rows are flat `f64` slices. A ComplEx row of dimension `d` has width `2d`:
//! real parts in `[0, d)` and imaginary parts in `[d, 2d)`.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::store::{EntityId, RelationId, Triple, TripleStore};

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"KGBEMB01";
const HEADER_LEN: usize = 8 + 4 + 8 * 4;

/// Which argument of `g(head, relation, tail)` to differentiate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Argument {
    Head,
    Relation,
    Tail,
}

/// A triple score function over flat embedding rows.
///
/// Implementations need not be linear in any argument; the bias probe only
/// relies on `score` and `add_gradient`.
pub trait ScoreFunction {
    /// Width of a stored row for a model of dimension `dim`.
    fn row_width(&self, dim: usize) -> usize;

    fn score(&self, head: &[f64], relation: &[f64], tail: &[f64]) -> f64;

    /// Adds `scale * ∂g/∂wrt` into `out`.
    fn add_gradient(
        &self,
        head: &[f64],
        relation: &[f64],
        tail: &[f64],
        wrt: Argument,
        scale: f64,
        out: &mut [f64],
    );
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    /// `g = (e1 + r) · e2`
    TransEDot,
    /// `g = Re(<e1, r, conj(e2)>)`
    ComplEx,
}

impl ModelKind {
    fn code(self) -> u32 {
        match self {
            ModelKind::TransEDot => 0,
            ModelKind::ComplEx => 1,
        }
    }

    fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(ModelKind::TransEDot),
            1 => Some(ModelKind::ComplEx),
            _ => None,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::TransEDot => "transe",
            ModelKind::ComplEx => "complex",
        })
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "transe" | "transe_dot" | "transedot" => Ok(ModelKind::TransEDot),
            "complex" => Ok(ModelKind::ComplEx),
            other => Err(format!("unknown model kind '{other}'")),
        }
    }
}

impl ScoreFunction for ModelKind {
    fn row_width(&self, dim: usize) -> usize {
        match self {
            ModelKind::TransEDot => dim,
            ModelKind::ComplEx => 2 * dim,
        }
    }

    fn score(&self, head: &[f64], relation: &[f64], tail: &[f64]) -> f64 {
        debug_assert!(head.len() == relation.len() && relation.len() == tail.len());
        match self {
            ModelKind::TransEDot => head
                .iter()
                .zip(relation)
                .zip(tail)
                .map(|((h, r), t)| (h + r) * t)
                .sum(),
            ModelKind::ComplEx => {
                let d = head.len() / 2;
                let (hr, hi) = head.split_at(d);
                let (rr, ri) = relation.split_at(d);
                let (tr, ti) = tail.split_at(d);
                (0..d)
                    .map(|i| {
                        hr[i] * rr[i] * tr[i] + hr[i] * ri[i] * ti[i] + hi[i] * rr[i] * ti[i]
                            - hi[i] * ri[i] * tr[i]
                    })
                    .sum()
            }
        }
    }

    fn add_gradient(
        &self,
        head: &[f64],
        relation: &[f64],
        tail: &[f64],
        wrt: Argument,
        scale: f64,
        out: &mut [f64],
    ) {
        match self {
            ModelKind::TransEDot => match wrt {
                Argument::Head | Argument::Relation => {
                    for (o, t) in out.iter_mut().zip(tail) {
                        *o += scale * t;
                    }
                }
                Argument::Tail => {
                    for ((o, h), r) in out.iter_mut().zip(head).zip(relation) {
                        *o += scale * (h + r);
                    }
                }
            },
            ModelKind::ComplEx => {
                let d = head.len() / 2;
                let (hr, hi) = head.split_at(d);
                let (rr, ri) = relation.split_at(d);
                let (tr, ti) = tail.split_at(d);
                let (out_re, out_im) = out.split_at_mut(d);
                for i in 0..d {
                    let (re, im) = match wrt {
                        Argument::Head => (rr[i] * tr[i] + ri[i] * ti[i], rr[i] * ti[i] - ri[i] * tr[i]),
                        Argument::Relation => {
                            (hr[i] * tr[i] + hi[i] * ti[i], hr[i] * ti[i] - hi[i] * tr[i])
                        }
                        Argument::Tail => (hr[i] * rr[i] - hi[i] * ri[i], hr[i] * ri[i] + hi[i] * rr[i]),
                    };
                    out_re[i] += scale * re;
                    out_im[i] += scale * im;
                }
            }
        }
    }
}

/// Entity and relation tables for one score function.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    kind: ModelKind,
    dim: usize,
    seed: u64,
    entity_count: usize,
    relation_count: usize,
    entities: Vec<f64>,
    relations: Vec<f64>,
}

impl EmbeddingModel {
    /// Rows drawn i.i.d. uniform on `[-1/sqrt(dim), 1/sqrt(dim)]`, entities first.
    pub fn init(
        kind: ModelKind,
        dim: usize,
        entity_count: usize,
        relation_count: usize,
        seed: u64,
    ) -> Result<Self> {
        if dim == 0 || entity_count == 0 || relation_count == 0 {
            return Err(Error::Config(format!(
                "model needs dim, entity count and relation count >= 1 (got {dim}, {entity_count}, {relation_count})"
            )));
        }
        let width = kind.row_width(dim);
        let bound = 1.0 / (dim as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entities = (0..entity_count * width).map(|_| dist.sample(&mut rng)).collect();
        let relations = (0..relation_count * width).map(|_| dist.sample(&mut rng)).collect();
        Ok(EmbeddingModel {
            kind,
            dim,
            seed,
            entity_count,
            relation_count,
            entities,
            relations,
        })
    }

    pub fn for_store(kind: ModelKind, dim: usize, store: &TripleStore, seed: u64) -> Result<Self> {
        Self::init(kind, dim, store.entity_count(), store.relation_count(), seed)
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn width(&self) -> usize {
        self.kind.row_width(self.dim)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn entity_count(&self) -> usize {
        self.entity_count
    }

    pub fn relation_count(&self) -> usize {
        self.relation_count
    }

    pub fn entity_table(&self) -> &[f64] {
        &self.entities
    }

    pub fn relation_table(&self) -> &[f64] {
        &self.relations
    }

    fn check_entity(&self, id: EntityId) -> Result<()> {
        if id.index() < self.entity_count {
            Ok(())
        } else {
            Err(Error::IdOutOfRange {
                kind: "entity",
                id: id.index(),
                size: self.entity_count,
            })
        }
    }

    fn check_relation(&self, id: RelationId) -> Result<()> {
        if id.index() < self.relation_count {
            Ok(())
        } else {
            Err(Error::IdOutOfRange {
                kind: "relation",
                id: id.index(),
                size: self.relation_count,
            })
        }
    }

    pub fn check_triple(&self, triple: &Triple) -> Result<()> {
        self.check_entity(triple.head)?;
        self.check_relation(triple.relation)?;
        self.check_entity(triple.tail)
    }

    /// Panics if `id` is out of range.
    pub fn entity(&self, id: EntityId) -> &[f64] {
        let w = self.width();
        &self.entities[id.index() * w..(id.index() + 1) * w]
    }

    /// Panics if `id` is out of range.
    pub fn relation(&self, id: RelationId) -> &[f64] {
        let w = self.width();
        &self.relations[id.index() * w..(id.index() + 1) * w]
    }

    pub fn entity_mut(&mut self, id: EntityId) -> &mut [f64] {
        let w = self.width();
        &mut self.entities[id.index() * w..(id.index() + 1) * w]
    }

    pub fn relation_mut(&mut self, id: RelationId) -> &mut [f64] {
        let w = self.width();
        &mut self.relations[id.index() * w..(id.index() + 1) * w]
    }

    pub(crate) fn tables_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.entities, &mut self.relations)
    }

    pub fn score(&self, head: EntityId, relation: RelationId, tail: EntityId) -> Result<f64> {
        let triple = Triple::new(head, relation, tail);
        self.check_triple(&triple)?;
        Ok(self.score_unchecked(&triple))
    }

    pub(crate) fn score_unchecked(&self, t: &Triple) -> f64 {
        self.kind
            .score(self.entity(t.head), self.relation(t.relation), self.entity(t.tail))
    }

    pub fn score_gradient(
        &self,
        head: EntityId,
        relation: RelationId,
        tail: EntityId,
        wrt: Argument,
    ) -> Result<Vec<f64>> {
        self.check_triple(&Triple::new(head, relation, tail))?;
        let mut out = vec![0.0; self.width()];
        self.kind.add_gradient(
            self.entity(head),
            self.relation(relation),
            self.entity(tail),
            wrt,
            1.0,
            &mut out,
        );
        Ok(out)
    }

    /// Fails unless the tables match the store's vocabulary sizes.
    pub fn check_matches(&self, store: &TripleStore) -> Result<()> {
        if self.entity_count != store.entity_count() || self.relation_count != store.relation_count() {
            return Err(Error::Checkpoint(format!(
                "model has {} entities / {} relations but the store has {} / {}",
                self.entity_count,
                self.relation_count,
                store.entity_count(),
                store.relation_count()
            )));
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.entities.iter().chain(&self.relations).all(|v| v.is_finite())
    }

    /// Header (magic, kind, dim, entity count, relation count, seed) then the
    /// tables as little-endian `f64`, entities first, row-major.
    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(&CHECKPOINT_MAGIC)?;
        out.write_all(&self.kind.code().to_le_bytes())?;
        for v in [
            self.dim as u64,
            self.entity_count as u64,
            self.relation_count as u64,
            self.seed,
        ] {
            out.write_all(&v.to_le_bytes())?;
        }
        for v in self.entities.iter().chain(&self.relations) {
            out.write_all(&v.to_le_bytes())?;
        }
        out.flush()
    }

    pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Self> {
        let mut header = [0u8; HEADER_LEN];
        input
            .read_exact(&mut header)
            .map_err(|_| Error::Checkpoint("truncated header".into()))?;
        if header[..8] != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let code = u32::from_le_bytes(header[8..12].try_into().unwrap());
        let kind =
            ModelKind::from_code(code).ok_or_else(|| Error::Checkpoint(format!("unknown model kind {code}")))?;
        let field = |i: usize| u64::from_le_bytes(header[12 + 8 * i..20 + 8 * i].try_into().unwrap());
        let to_usize = |v: u64| usize::try_from(v).map_err(|_| Error::Checkpoint("size overflow".into()));
        let dim = to_usize(field(0))?;
        let entity_count = to_usize(field(1))?;
        let relation_count = to_usize(field(2))?;
        let seed = field(3);
        if dim == 0 || entity_count == 0 || relation_count == 0 {
            return Err(Error::Checkpoint("zero-sized model".into()));
        }
        let width = kind.row_width(dim);
        let read_table = |input: &mut R, rows: usize| -> Result<Vec<f64>> {
            let n = rows
                .checked_mul(width)
                .ok_or_else(|| Error::Checkpoint("size overflow".into()))?;
            let mut values = Vec::with_capacity(n);
            let mut buf = [0u8; 8];
            for _ in 0..n {
                input
                    .read_exact(&mut buf)
                    .map_err(|_| Error::Checkpoint("truncated tables".into()))?;
                let v = f64::from_le_bytes(buf);
                if !v.is_finite() {
                    return Err(Error::Checkpoint("non-finite value in tables".into()));
                }
                values.push(v);
            }
            Ok(values)
        };
        let entities = read_table(&mut input, entity_count)?;
        let relations = read_table(&mut input, relation_count)?;
        let mut rest = [0u8; 1];
        if input.read(&mut rest).map_err(|e| Error::Checkpoint(e.to_string()))? != 0 {
            return Err(Error::Checkpoint("trailing bytes after tables".into()));
        }
        Ok(EmbeddingModel {
            kind,
            dim,
            seed,
            entity_count,
            relation_count,
            entities,
            relations,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_checkpoint(BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_checkpoint(BufReader::new(file))
    }
}
