//! Negative-sampling training with a softmax cross-entropy over one positive
//! and its corruptions.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::model::{Argument, EmbeddingModel, ModelKind, ScoreFunction};
use crate::store::{EntityId, RelationId, Triple, TripleStore};

const ADAGRAD_EPS: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    Sgd,
    /// Per-element squared-gradient accumulators.
    Adagrad,
}

impl fmt::Display for Optimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Optimizer::Sgd => "sgd",
            Optimizer::Adagrad => "adagrad",
        })
    }
}

impl FromStr for Optimizer {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(Optimizer::Sgd),
            "adagrad" => Ok(Optimizer::Adagrad),
            other => Err(format!("unknown optimizer '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub dim: usize,
    pub negatives_per_positive: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    /// Positives per optimizer step. Negatives are always drawn per positive.
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelKind::TransEDot,
            dim: 200,
            negatives_per_positive: 1000,
            epochs: 50,
            learning_rate: 0.1,
            optimizer: Optimizer::Adagrad,
            batch_size: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dim", self.dim),
            ("negatives_per_positive", self.negatives_per_positive),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
        ];
        for (name, value) in positive {
            if value == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        // zero is allowed: it is the "no-op training" case
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }

    /// Reads `key = value` overrides on top of the defaults.
    pub fn from_key_values(mut kv: KeyValues) -> Result<Self> {
        let mut config = TrainConfig::default();
        if let Some(v) = kv.take_parsed::<String>("model")? {
            config.model = v.parse().map_err(Error::Config)?;
        }
        if let Some(v) = kv.take_parsed("dim")? {
            config.dim = v;
        }
        if let Some(v) = kv.take_parsed("negatives_per_positive")? {
            config.negatives_per_positive = v;
        }
        if let Some(v) = kv.take_parsed("epochs")? {
            config.epochs = v;
        }
        if let Some(v) = kv.take_parsed("learning_rate")? {
            config.learning_rate = v;
        }
        if let Some(v) = kv.take_parsed::<String>("optimizer")? {
            config.optimizer = v.parse().map_err(Error::Config)?;
        }
        if let Some(v) = kv.take_parsed("batch_size")? {
            config.batch_size = v;
        }
        if let Some(v) = kv.take_parsed("seed")? {
            config.seed = v;
        }
        kv.finish()?;
        config.validate()?;
        Ok(config)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_key_values(KeyValues::read(path)?)
    }

    pub fn to_key_values(&self) -> String {
        format!(
            "model = {}\ndim = {}\nnegatives_per_positive = {}\nepochs = {}\nlearning_rate = {}\noptimizer = {}\nbatch_size = {}\nseed = {}\n",
            self.model,
            self.dim,
            self.negatives_per_positive,
            self.epochs,
            self.learning_rate,
            self.optimizer,
            self.batch_size,
            self.seed
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    /// 1-based.
    pub epoch: usize,
    pub mean_loss: f64,
}

/// Draws `k` corruptions of `positive`, each replacing the head or the tail
/// (probability 1/2 each) with a different, uniformly drawn entity.
///
/// Corruptions are not filtered against the store, so a negative may happen
/// to be a true fact.
pub fn sample_negatives<R: Rng + ?Sized>(
    store: &TripleStore,
    positive: &Triple,
    k: usize,
    rng: &mut R,
) -> Result<Vec<Triple>> {
    let mut out = Vec::with_capacity(k);
    fill_negatives(store.entity_count(), positive, k, rng, &mut out)?;
    Ok(out)
}

fn fill_negatives<R: Rng + ?Sized>(
    entity_count: usize,
    positive: &Triple,
    k: usize,
    rng: &mut R,
    out: &mut Vec<Triple>,
) -> Result<()> {
    if entity_count < 2 {
        return Err(Error::VocabularyTooSmall);
    }
    out.clear();
    for _ in 0..k {
        let corrupt_head = rng.gen_bool(0.5);
        let replaced = if corrupt_head {
            positive.head
        } else {
            positive.tail
        };
        let mut draw = rng.gen_range(0..entity_count - 1) as u32;
        if draw >= replaced.0 {
            draw += 1;
        }
        let mut negative = *positive;
        if corrupt_head {
            negative.head = EntityId(draw);
        } else {
            negative.tail = EntityId(draw);
        }
        out.push(negative);
    }
    Ok(())
}

/// `-log softmax(scores)[positive_index]` and its gradient with respect to
/// the scores, `softmax(scores) - onehot(positive_index)`.
pub fn softmax_ce_loss(scores: &[f64], positive_index: usize) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; scores.len()];
    let loss = softmax_ce_into(scores, positive_index, &mut grad);
    (loss, grad)
}

fn softmax_ce_into(scores: &[f64], positive_index: usize, grad: &mut [f64]) -> f64 {
    assert!(positive_index < scores.len(), "positive index out of range");
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (g, &s) in grad.iter_mut().zip(scores) {
        *g = (s - max).exp();
        total += *g;
    }
    for g in grad.iter_mut() {
        *g /= total;
    }
    grad[positive_index] -= 1.0;
    // log-sum-exp minus the positive score, both shifted by max
    total.ln() - (scores[positive_index] - max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Row {
    Entity(EntityId),
    Relation(RelationId),
}

/// Gradient rows keyed by the embedding row they belong to.
#[derive(Debug, Clone)]
pub struct SparseGrad {
    width: usize,
    slots: HashMap<Row, usize>,
    rows: Vec<Row>,
    values: Vec<f64>,
}

impl SparseGrad {
    pub fn new(width: usize) -> Self {
        SparseGrad {
            width,
            slots: HashMap::new(),
            rows: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn clear(&mut self) {
        self.slots.clear();
        self.rows.clear();
        self.values.clear();
    }

    fn row_mut(&mut self, row: Row) -> &mut [f64] {
        let width = self.width;
        let slot = *self.slots.entry(row).or_insert_with(|| {
            self.rows.push(row);
            self.values.resize(self.values.len() + width, 0.0);
            self.rows.len() - 1
        });
        &mut self.values[slot * width..(slot + 1) * width]
    }

    pub fn get(&self, row: Row) -> Option<&[f64]> {
        self.slots
            .get(&row)
            .map(|&slot| &self.values[slot * self.width..(slot + 1) * self.width])
    }

    /// Touched rows in first-touch order.
    pub fn iter(&self) -> impl Iterator<Item = (Row, &[f64])> {
        self.rows
            .iter()
            .zip(self.values.chunks_exact(self.width))
            .map(|(&row, values)| (row, values))
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Loss of one positive against its negatives (positive at softmax index 0).
/// Adds the loss gradient for every touched row into `grads`.
pub fn positive_loss(
    model: &EmbeddingModel,
    positive: &Triple,
    negatives: &[Triple],
    grads: &mut SparseGrad,
) -> f64 {
    let mut scores = Vec::with_capacity(negatives.len() + 1);
    let mut coeffs = vec![0.0; negatives.len() + 1];
    positive_loss_with(model, positive, negatives, grads, &mut scores, &mut coeffs)
}

fn positive_loss_with(
    model: &EmbeddingModel,
    positive: &Triple,
    negatives: &[Triple],
    grads: &mut SparseGrad,
    scores: &mut Vec<f64>,
    coeffs: &mut [f64],
) -> f64 {
    scores.clear();
    scores.push(model.score_unchecked(positive));
    scores.extend(negatives.iter().map(|t| model.score_unchecked(t)));
    let loss = softmax_ce_into(scores, 0, coeffs);

    let kind = model.kind();
    for (triple, &coeff) in std::iter::once(positive).chain(negatives).zip(coeffs.iter()) {
        let h = model.entity(triple.head);
        let r = model.relation(triple.relation);
        let t = model.entity(triple.tail);
        kind.add_gradient(h, r, t, Argument::Head, coeff, grads.row_mut(Row::Entity(triple.head)));
        kind.add_gradient(
            h,
            r,
            t,
            Argument::Relation,
            coeff,
            grads.row_mut(Row::Relation(triple.relation)),
        );
        kind.add_gradient(h, r, t, Argument::Tail, coeff, grads.row_mut(Row::Entity(triple.tail)));
    }
    loss
}

struct OptimizerState {
    optimizer: Optimizer,
    learning_rate: f64,
    entity_acc: Vec<f64>,
    relation_acc: Vec<f64>,
}

impl OptimizerState {
    fn new(config: &TrainConfig, model: &EmbeddingModel) -> Self {
        let (entity_acc, relation_acc) = match config.optimizer {
            Optimizer::Adagrad => (
                vec![0.0; model.entity_table().len()],
                vec![0.0; model.relation_table().len()],
            ),
            Optimizer::Sgd => (Vec::new(), Vec::new()),
        };
        OptimizerState {
            optimizer: config.optimizer,
            learning_rate: config.learning_rate,
            entity_acc,
            relation_acc,
        }
    }

    /// Descends along `grads / batch_len`.
    fn apply(&mut self, model: &mut EmbeddingModel, grads: &SparseGrad, batch_len: usize) {
        let width = model.width();
        let inv_batch = 1.0 / batch_len as f64;
        let lr = self.learning_rate;
        let (entities, relations) = model.tables_mut();
        for (row, raw) in grads.iter() {
            let (weights, acc) = match row {
                Row::Entity(id) => (
                    &mut entities[id.index() * width..(id.index() + 1) * width],
                    &mut self.entity_acc,
                ),
                Row::Relation(id) => (
                    &mut relations[id.index() * width..(id.index() + 1) * width],
                    &mut self.relation_acc,
                ),
            };
            let offset = match row {
                Row::Entity(id) => id.index() * width,
                Row::Relation(id) => id.index() * width,
            };
            match self.optimizer {
                Optimizer::Sgd => {
                    for (w, &g) in weights.iter_mut().zip(raw) {
                        *w -= lr * g * inv_batch;
                    }
                }
                Optimizer::Adagrad => {
                    let acc = &mut acc[offset..offset + width];
                    for ((w, a), &g) in weights.iter_mut().zip(acc.iter_mut()).zip(raw) {
                        let g = g * inv_batch;
                        *a += g * g;
                        *w -= lr * g / (a.sqrt() + ADAGRAD_EPS);
                    }
                }
            }
        }
    }
}

/// Trains a freshly initialised model (init seed = `config.seed`).
pub fn train(store: &TripleStore, config: &TrainConfig) -> Result<(EmbeddingModel, Vec<LossRecord>)> {
    let model = EmbeddingModel::for_store(config.model, config.dim, store, config.seed)?;
    train_model(model, store, config, |_| {})
}

/// Continues training `model`, calling `on_epoch` after every epoch.
///
/// Single-threaded and fully determined by the model, store and config.
pub fn train_model<F: FnMut(&LossRecord)>(
    mut model: EmbeddingModel,
    store: &TripleStore,
    config: &TrainConfig,
    mut on_epoch: F,
) -> Result<(EmbeddingModel, Vec<LossRecord>)> {
    config.validate()?;
    if store.is_empty() {
        return Err(Error::EmptyInput("training store".into()));
    }
    model.check_matches(store)?;
    if store.entity_count() < 2 {
        return Err(Error::VocabularyTooSmall);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    // keep the sampling stream apart from the initialisation stream
    rng.set_stream(1);

    let mut state = OptimizerState::new(config, &model);
    let mut grads = SparseGrad::new(model.width());
    let mut negatives = Vec::with_capacity(config.negatives_per_positive);
    let mut scores = Vec::with_capacity(config.negatives_per_positive + 1);
    let mut coeffs = vec![0.0; config.negatives_per_positive + 1];
    let mut order: Vec<usize> = (0..store.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            grads.clear();
            for &i in batch {
                let positive = store.triples()[i];
                fill_negatives(
                    store.entity_count(),
                    &positive,
                    config.negatives_per_positive,
                    &mut rng,
                    &mut negatives,
                )?;
                let loss =
                    positive_loss_with(&model, &positive, &negatives, &mut grads, &mut scores, &mut coeffs);
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        loss,
                        head: store.entity_label(positive.head)?.to_string(),
                        relation: store.relation_label(positive.relation)?.to_string(),
                        tail: store.entity_label(positive.tail)?.to_string(),
                    });
                }
                total += loss;
            }
            state.apply(&mut model, &grads, batch.len());
        }
        let record = LossRecord {
            epoch,
            mean_loss: total / store.len() as f64,
        };
        on_epoch(&record);
        history.push(record);
    }
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_entity_store() -> TripleStore {
        TripleStore::from_reader("t", "a\tr\tb\n".as_bytes()).unwrap().0
    }

    #[test]
    fn softmax_ce_direct_arithmetic() {
        let (loss, grad) = softmax_ce_loss(&[1.0, 0.0, 0.0], 0);
        let expected = (1.0 + 2.0 * (-1.0f64).exp()).ln();
        assert!((loss - expected).abs() < 1e-15);
        assert!((loss - 0.55144).abs() < 1e-5);
        let z = 1.0f64.exp() + 2.0;
        assert!((grad[0] - (1.0f64.exp() / z - 1.0)).abs() < 1e-15);
        assert!((grad[1] - 1.0 / z).abs() < 1e-15);
        assert!(grad.iter().sum::<f64>().abs() < 1e-15);
    }

    #[test]
    fn equal_scores_give_log_k_plus_one() {
        for k in [1usize, 10, 1000] {
            let (loss, _) = softmax_ce_loss(&vec![0.3; k + 1], 0);
            assert!((loss - ((k + 1) as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_decreases_as_positive_score_grows() {
        let (at10, _) = softmax_ce_loss(&[10.0, 0.0, 1.0], 0);
        let (at20, _) = softmax_ce_loss(&[20.0, 0.0, 1.0], 0);
        assert!(at20 < at10 && at20 >= 0.0);
    }

    #[test]
    fn softmax_is_stable_for_large_scores() {
        let (loss, grad) = softmax_ce_loss(&[1000.0, 999.0, -1000.0], 1);
        assert!(loss.is_finite() && grad.iter().all(|g| g.is_finite()));
        assert!((loss - (1.0 + (-1.0f64).exp()).ln() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn negatives_differ_in_exactly_one_slot() {
        let text: String = (0..50).map(|i| format!("e{i}\tr\te{}\n", (i + 1) % 50)).collect();
        let store = TripleStore::from_reader("t", text.as_bytes()).unwrap().0;
        let positive = store.triples()[7];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let negatives = sample_negatives(&store, &positive, 1000, &mut rng).unwrap();
        assert_eq!(negatives.len(), 1000);
        for n in &negatives {
            assert_eq!(n.relation, positive.relation);
            let head_changed = n.head != positive.head;
            let tail_changed = n.tail != positive.tail;
            assert!(head_changed ^ tail_changed, "{n:?}");
        }
    }

    #[test]
    fn two_entity_vocab_forces_the_other_entity() {
        let store = two_entity_store();
        let positive = store.triples()[0];
        let (a, b) = (positive.head, positive.tail);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in sample_negatives(&store, &positive, 200, &mut rng).unwrap() {
            assert!(n == Triple::new(b, positive.relation, b) || n == Triple::new(a, positive.relation, a));
        }
    }

    #[test]
    fn single_entity_vocab_cannot_be_corrupted() {
        let store = TripleStore::from_reader("t", "a\tr\ta\n".as_bytes()).unwrap().0;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            sample_negatives(&store, &store.triples()[0], 5, &mut rng),
            Err(Error::VocabularyTooSmall)
        ));
    }

    #[test]
    fn positive_loss_touches_expected_rows() {
        let text: String = (0..10).map(|i| format!("e{i}\tr\te{}\n", (i + 3) % 10)).collect();
        let store = TripleStore::from_reader("t", text.as_bytes()).unwrap().0;
        let model = EmbeddingModel::for_store(ModelKind::ComplEx, 4, &store, 1).unwrap();
        let positive = store.triples()[0];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let negatives = sample_negatives(&store, &positive, 6, &mut rng).unwrap();
        let mut grads = SparseGrad::new(model.width());
        let loss = positive_loss(&model, &positive, &negatives, &mut grads);
        assert!(loss > 0.0);
        assert!(grads.len() <= 2 * negatives.len() + 3);
        assert!(grads.get(Row::Relation(positive.relation)).is_some());
        assert!(grads.get(Row::Entity(positive.head)).is_some());
    }

    #[test]
    fn config_parses_and_validates() {
        let kv = KeyValues::parse(
            "cfg",
            "model = complex\ndim = 16\nnegatives_per_positive = 5\nepochs = 2\nlearning_rate = 0.5\noptimizer = sgd\nbatch_size = 4\nseed = 9\n",
        )
        .unwrap();
        let cfg = TrainConfig::from_key_values(kv).unwrap();
        assert_eq!(cfg.model, ModelKind::ComplEx);
        assert_eq!(cfg.optimizer, Optimizer::Sgd);
        assert_eq!((cfg.dim, cfg.negatives_per_positive, cfg.epochs, cfg.batch_size, cfg.seed), (16, 5, 2, 4, 9));
        let round = TrainConfig::from_key_values(KeyValues::parse("x", &cfg.to_key_values()).unwrap()).unwrap();
        assert_eq!(round, cfg);

        assert!(TrainConfig::from_key_values(KeyValues::parse("c", "epochs = 0\n").unwrap()).is_err());
        assert!(TrainConfig::from_key_values(KeyValues::parse("c", "learning_rate = -1\n").unwrap()).is_err());
        assert!(TrainConfig::from_key_values(KeyValues::parse("c", "optimizer = adam\n").unwrap()).is_err());
    }

    #[test]
    fn defaults() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.dim, 200);
        assert_eq!(cfg.negatives_per_positive, 1000);
        assert_eq!(cfg.optimizer, Optimizer::Adagrad);
        assert_eq!(cfg.learning_rate, 0.1);
        assert_eq!(cfg.epochs, 50);
    }

    #[test]
    fn non_finite_loss_names_the_triple() {
        let store = two_entity_store();
        let mut model = EmbeddingModel::for_store(ModelKind::TransEDot, 2, &store, 0).unwrap();
        model.entity_mut(EntityId(0))[0] = f64::MAX;
        model.entity_mut(EntityId(1))[0] = f64::MAX;
        let cfg = TrainConfig {
            dim: 2,
            negatives_per_positive: 2,
            epochs: 1,
            ..TrainConfig::default()
        };
        let err = train_model(model, &store, &cfg, |_| {}).unwrap_err();
        assert!(err.is_numeric());
        let msg = err.to_string();
        assert!(msg.contains("(a, r, b)"), "{msg}");
    }
}
