//! End-to-end runs driven by a [`RunConfig`]: load the splits, build the
//! vocabulary and model, train, and score every test set.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{DataFormat, DatasetConfig, RunConfig};
use crate::data::{self, DatasetStats, LabeledSample, TokenCounts, Vocab};
use crate::error::{Error, Result};
use crate::metrics::{self, EvalReport};
use crate::model::Model;
use crate::train::{self, TrainHooks, TrainOutcome};

/// Independent random streams derived from the run seed.
const SPLIT_STREAM: u64 = 1;
const EMBEDDING_STREAM: u64 = 2;
const INIT_STREAM: u64 = 3;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Fails with a configuration error naming every configured file that does
/// not exist.
pub fn check_paths(cfg: &RunConfig) -> Result<()> {
    let ds = &cfg.dataset;
    let mut paths: Vec<(&str, &Path)> = Vec::new();
    for (key, p) in [("train", &ds.train), ("val", &ds.val), ("test", &ds.test), ("glove", &ds.glove)] {
        if let Some(p) = p {
            paths.push((key, p));
        }
    }
    paths.extend(ds.extra_tests.iter().map(|(k, p)| (k.as_str(), p.as_path())));
    paths.extend(ds.segments.values().map(|p| ("segments", p.as_path())));
    let missing: Vec<String> = paths
        .iter()
        .filter(|(_, p)| !p.exists())
        .map(|(k, p)| format!("{k}: {}", p.display()))
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(format!("missing files: {}", missing.join(", "))))
    }
}

/// Loads one data file in the configured format.
pub fn load_split(ds: &DatasetConfig, path: &Path, max_edus: usize) -> Result<Vec<LabeledSample>> {
    let samples = match ds.format {
        DataFormat::Xml => {
            let sidecar = ds.segments.get(path.to_string_lossy().as_ref());
            let (samples, report) = data::load_semeval_xml(path, &ds.aspects, sidecar.map(|p| p.as_path()), max_edus)?;
            log::info!(
                "{}: {} sentences read, {} conflict pairs and {} sentences dropped, {} segmented heuristically",
                path.display(),
                report.sentences_read,
                report.conflict_pairs_dropped,
                report.sentences_dropped,
                report.heuristic_segmented
            );
            samples
        }
        DataFormat::Jsonl => data::load_jsonl(path, &ds.aspects, max_edus)?,
    };
    let stats = DatasetStats::of(&samples);
    log::info!(
        "{}: {} sentences ({} single, {} multiple)",
        path.display(),
        stats.sentences,
        stats.single,
        stats.multiple
    );
    Ok(samples)
}

#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Vec<LabeledSample>,
    pub val: Vec<LabeledSample>,
    /// `test` first when configured, then the extra test sets by name.
    pub tests: Vec<(String, Vec<LabeledSample>)>,
}

impl Splits {
    pub fn all(&self) -> impl Iterator<Item = &LabeledSample> {
        self.train
            .iter()
            .chain(&self.val)
            .chain(self.tests.iter().flat_map(|(_, s)| s))
    }
}

/// Loads train, validation, and test data. Without a validation file a
/// seeded fraction of the training file is held out.
pub fn load_splits(cfg: &RunConfig) -> Result<Splits> {
    let ds = &cfg.dataset;
    let max_edus = cfg.model.max_edus;
    let train_path = ds
        .train
        .as_deref()
        .ok_or_else(|| Error::Config("dataset.train is not set".into()))?;
    let full = load_split(ds, train_path, max_edus)?;
    let (train, val) = match &ds.val {
        Some(p) => (full, load_split(ds, p, max_edus)?),
        None => data::split_train_val(&full, ds.val_fraction, &mut stream(cfg.train.seed, SPLIT_STREAM))?,
    };
    let mut tests = Vec::new();
    if let Some(p) = &ds.test {
        tests.push(("test".to_string(), load_split(ds, p, max_edus)?));
    }
    for (name, p) in &ds.extra_tests {
        tests.push((name.clone(), load_split(ds, p, max_edus)?));
    }
    Ok(Splits { train, val, tests })
}

/// Builds the vocabulary over every loaded split plus the aspect init words,
/// initialises the model, and copies GloVe vectors in when configured.
pub fn build_model(cfg: &RunConfig, splits: &Splits) -> Result<Model> {
    let ds = &cfg.dataset;
    let init_words: Vec<String> = ds.aspects.iter().filter_map(|a| ds.init_word(a)).collect();
    let vocab = Vocab::build(splits.all(), &init_words);
    log::info!("vocabulary: {} ids, hash {}", vocab.len(), vocab.hash());
    let mut model = Model::new(&cfg.model, ds.aspects.clone(), vocab, &mut stream(cfg.train.seed, INIT_STREAM))?;
    if let Some(path) = &ds.glove {
        let counts = TokenCounts::of(splits.all());
        let emb = data::load_glove(
            path,
            &model.vocab,
            &counts,
            cfg.model.word_dim,
            &mut stream(cfg.train.seed, EMBEDDING_STREAM),
        )?;
        let initialised = model.load_pretrained(&emb, ds)?;
        for (aspect, ok) in model.aspects.iter().zip(initialised) {
            if !ok {
                log::info!("aspect `{aspect}` starts from a random vector");
            }
        }
    }
    Ok(model)
}

#[derive(Clone, Debug)]
pub struct TrainedRun {
    pub model: Model,
    pub outcome: TrainOutcome,
    pub tests: Vec<(String, EvalReport)>,
}

/// Loads data, trains with early stopping on the validation split, and
/// evaluates the restored best model on every test set.
pub fn run(cfg: &RunConfig, hooks: TrainHooks) -> Result<TrainedRun> {
    cfg.validate()?;
    check_paths(cfg)?;
    let splits = load_splits(cfg)?;
    let mut model = build_model(cfg, &splits)?;
    let train_set = data::encode_all(&splits.train, &model.vocab);
    let val_set = data::encode_all(&splits.val, &model.vocab);
    let outcome = train::train(&mut model, &train_set, &val_set, &cfg.train, hooks)?;
    let mut tests = Vec::new();
    for (name, samples) in &splits.tests {
        let (report, _) = metrics::evaluate(&model.params, &data::encode_all(samples, &model.vocab))?;
        log::info!("{name}: accuracy {:.4}, macro-F1 {:.4}", report.accuracy, report.macro_f1);
        tests.push((name.clone(), report));
    }
    Ok(TrainedRun { model, outcome, tests })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic;

    fn config(dir: &Path) -> RunConfig {
        let corpus = synthetic::clause_corpus(40, 0.5, 1);
        let train = dir.join("train.jsonl");
        let test = dir.join("test.jsonl");
        data::write_jsonl(&train, &corpus.samples[..30], &corpus.aspects).unwrap();
        data::write_jsonl(&test, &corpus.samples[30..], &corpus.aspects).unwrap();
        let mut cfg = RunConfig::default();
        cfg.dataset.format = DataFormat::Jsonl;
        cfg.dataset.aspects = corpus.aspects;
        cfg.dataset.train = Some(train);
        cfg.dataset.test = Some(test);
        cfg.model.word_dim = 6;
        cfg.model.aspect_dim = 6;
        cfg.model.fuse_dim = 6;
        cfg.model.hidden_dim = 3;
        cfg.model.max_edus = 4;
        cfg.train.batch_size = 8;
        cfg.train.eval_every = 2;
        cfg.train.max_epochs = 2;
        cfg
    }

    #[test]
    fn splits_and_vocab() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = config(dir.path());
        let splits = load_splits(&cfg).unwrap();
        assert_eq!((splits.train.len(), splits.val.len()), (24, 6));
        assert_eq!(splits.tests[0].1.len(), 10);
        let again = load_splits(&cfg).unwrap();
        assert_eq!(splits.val, again.val);
        let model = build_model(&cfg, &splits).unwrap();
        assert!(model.vocab.get("food").is_some() && model.vocab.get("service").is_some());
    }

    #[test]
    fn missing_files_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = config(dir.path());
        cfg.dataset.glove = Some(dir.path().join("nope.txt"));
        let err = run(&cfg, TrainHooks::default()).unwrap_err();
        assert!(err.is_config(), "{err}");
        assert!(err.to_string().contains("nope.txt"));
    }

    #[test]
    fn run_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = config(dir.path());
        let a = run(&cfg, TrainHooks::default()).unwrap();
        let b = run(&cfg, TrainHooks::default()).unwrap();
        assert_eq!(a.model.store().snapshot(), b.model.store().snapshot());
        assert_eq!(a.tests, b.tests);
        assert_eq!(a.tests[0].0, "test");
    }

    #[test]
    fn glove_rows_are_copied() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = config(dir.path());
        let glove = dir.path().join("glove.txt");
        std::fs::write(&glove, "food 1 2 3 4 5 6\nunseen 0 0 0 0 0 0\n").unwrap();
        cfg.dataset.glove = Some(glove);
        let splits = load_splits(&cfg).unwrap();
        let model = build_model(&cfg, &splits).unwrap();
        let id = model.vocab.get("food").unwrap();
        let table = model.store().value(model.params.word_embeddings);
        assert_eq!(table.row_slice(id), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let aspects = model.store().value(model.params.aspect_embeddings);
        assert_eq!(aspects.row_slice(0), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }
}
