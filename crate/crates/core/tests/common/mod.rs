#![allow(dead_code)]

use kgbias::store::{EntityId, RelationId, TripleStore};
use kgbias::trainer::Row;
use kgbias::{EmbeddingModel, ModelKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

/// Central differences of `f` over every coordinate of `point`.
pub fn central_diff<F: FnMut(&[f64]) -> f64>(mut f: F, point: &[f64], h: f64) -> Vec<f64> {
    let mut x = point.to_vec();
    (0..point.len())
        .map(|i| {
            x[i] = point[i] + h;
            let plus = f(&x);
            x[i] = point[i] - h;
            let minus = f(&x);
            x[i] = point[i];
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// ‖a - b‖ / max(‖a‖, ‖b‖); zero when both vectors are zero.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

pub fn scalar_relative_error(a: f64, b: f64) -> f64 {
    relative_error(&[a], &[b])
}

/// A model with the given row in place of the original.
pub fn with_row(model: &EmbeddingModel, row: Row, values: &[f64]) -> EmbeddingModel {
    let mut m = model.clone();
    match row {
        Row::Entity(id) => m.entity_mut(id).copy_from_slice(values),
        Row::Relation(id) => m.relation_mut(id).copy_from_slice(values),
    }
    m
}

pub fn row_of(model: &EmbeddingModel, row: Row) -> Vec<f64> {
    match row {
        Row::Entity(id) => model.entity(id).to_vec(),
        Row::Relation(id) => model.relation(id).to_vec(),
    }
}

/// Model with values uniform in [-1, 1] rather than the small init scale.
pub fn random_model(kind: ModelKind, dim: usize, entities: usize, relations: usize, seed: u64) -> EmbeddingModel {
    let mut m = EmbeddingModel::init(kind, dim, entities, relations, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for e in 0..entities {
        for v in m.entity_mut(EntityId(e as u32)) {
            *v = rng.gen_range(-1.0..1.0);
        }
    }
    for r in 0..relations {
        for v in m.relation_mut(RelationId(r as u32)) {
            *v = rng.gen_range(-1.0..1.0);
        }
    }
    m
}

/// Humans `person_i` with one gender and one profession each, built in a
/// fixed order so entity ids are predictable: people first, then attributes
/// and professions interleaved by first appearance.
pub fn gender_store(people: usize, professions: usize, seed: u64) -> TripleStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut text = String::new();
    for i in 0..people {
        let g = if rng.gen_bool(0.5) { "male" } else { "female" };
        let p = rng.gen_range(0..professions);
        text += &format!("person_{i}\thasGender\t{g}\nperson_{i}\thasProfession\tprof_{p}\n");
    }
    TripleStore::from_reader("generated", text.as_bytes()).unwrap().0
}

pub fn sha256_file(path: &std::path::Path) -> Vec<u8> {
    use sha2::{Digest, Sha256};
    Sha256::digest(std::fs::read(path).unwrap()).to_vec()
}
