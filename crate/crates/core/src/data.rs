//! Dataset loading, vocabulary, pretrained vectors, splitting, and batching.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::labels::{LabelRecord, Polarity};
use crate::segment::{self, SegmentedSentence, SentenceRecord};
use crate::tensor::Tensor;

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// A segmented sentence with its gold (aspect id, polarity) pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub sentence: SegmentedSentence,
    pub labels: Vec<(usize, Polarity)>,
}

impl LabeledSample {
    /// Checks the sample invariants: at least one label, unique aspect ids
    /// within range, and at most `max_edus` EDUs.
    pub fn validate(&self, num_aspects: usize, max_edus: usize) -> Result<()> {
        if self.labels.is_empty() {
            return Err(Error::Validation(format!("`{}` has no labels", self.sentence.text)));
        }
        let mut seen = vec![false; num_aspects];
        for &(a, _) in &self.labels {
            if a >= num_aspects {
                return Err(Error::Validation(format!("aspect id {a} out of range")));
            }
            if std::mem::replace(&mut seen[a], true) {
                return Err(Error::Validation(format!(
                    "aspect id {a} labelled twice in `{}`",
                    self.sentence.text
                )));
            }
        }
        if self.sentence.edus.len() > max_edus {
            return Err(Error::Validation(format!(
                "`{}` has {} EDUs, more than the supported {max_edus}",
                self.sentence.text,
                self.sentence.edus.len()
            )));
        }
        Ok(())
    }

    pub fn to_record(&self, aspects: &[String]) -> SentenceRecord {
        SentenceRecord::from_sentence(
            &self.sentence,
            self.labels
                .iter()
                .map(|&(a, polarity)| LabelRecord {
                    aspect: aspects[a].clone(),
                    polarity,
                })
                .collect(),
        )
    }
}

fn aspect_id(aspects: &[String], name: &str) -> Result<usize> {
    aspects
        .iter()
        .position(|a| a == name)
        .ok_or_else(|| Error::Validation(format!("unknown aspect category `{name}` (known: {})", aspects.join(", "))))
}

/// Sentence, label, and polarity counts of a loaded split.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub sentences: usize,
    pub single: usize,
    pub multiple: usize,
    pub negative: usize,
    pub neutral: usize,
    pub positive: usize,
}

impl DatasetStats {
    pub fn of(samples: &[LabeledSample]) -> Self {
        let mut s = DatasetStats {
            sentences: samples.len(),
            ..Default::default()
        };
        for sample in samples {
            if sample.labels.len() == 1 {
                s.single += 1;
            } else {
                s.multiple += 1;
            }
            for &(_, p) in &sample.labels {
                match p {
                    Polarity::Negative => s.negative += 1,
                    Polarity::Neutral => s.neutral += 1,
                    Polarity::Positive => s.positive += 1,
                }
            }
        }
        s
    }
}

/// What happened while loading a file.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub sentences_read: usize,
    pub conflict_pairs_dropped: usize,
    pub sentences_dropped: usize,
    pub heuristic_segmented: usize,
}

/// Loads SemEval-2014 / MAMS aspect-category XML.
///
/// Conflict-polarity pairs are dropped, as are sentences left without
/// labels. EDUs come from `segments` (pre-segmented JSONL matched on the
/// sentence text) when given and matching, otherwise from the heuristic
/// segmenter.
pub fn load_semeval_xml(
    path: &Path,
    aspects: &[String],
    segments: Option<&Path>,
    max_edus: usize,
) -> Result<(Vec<LabeledSample>, LoadReport)> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let sidecar: HashMap<String, SegmentedSentence> = match segments {
        Some(p) => segment::read_presegmented(p)?
            .into_iter()
            .map(|(s, _)| (s.text.clone(), s))
            .collect(),
        None => HashMap::new(),
    };
    parse_semeval_xml(&content, path, aspects, &sidecar, max_edus)
}

fn parse_semeval_xml(
    content: &str,
    path: &Path,
    aspects: &[String],
    sidecar: &HashMap<String, SegmentedSentence>,
    max_edus: usize,
) -> Result<(Vec<LabeledSample>, LoadReport)> {
    let doc = roxmltree::Document::parse(content).map_err(|e| {
        let pos = e.pos();
        Error::parse(path, pos.row as usize, e.to_string())
    })?;
    let mut report = LoadReport::default();
    let mut samples = Vec::new();
    for node in doc.descendants().filter(|n| n.has_tag_name("sentence")) {
        report.sentences_read += 1;
        let line = doc.text_pos_at(node.range().start).row as usize;
        let text = node
            .children()
            .find(|c| c.has_tag_name("text"))
            .and_then(|t| t.text())
            .ok_or_else(|| Error::parse(path, line, "sentence without <text>"))?
            .to_string();
        let mut labels: Vec<(usize, Polarity)> = Vec::new();
        for cat in node.descendants().filter(|c| c.has_tag_name("aspectCategory")) {
            let name = cat
                .attribute("category")
                .ok_or_else(|| Error::parse(path, line, "aspectCategory without category"))?;
            let pol = cat
                .attribute("polarity")
                .ok_or_else(|| Error::parse(path, line, "aspectCategory without polarity"))?;
            if pol == "conflict" {
                report.conflict_pairs_dropped += 1;
                continue;
            }
            let id = aspect_id(aspects, name)
                .map_err(|e| Error::Validation(format!("{}:{line}: {e}", path.display())))?;
            let polarity: Polarity = pol
                .parse()
                .map_err(|e| Error::Validation(format!("{}:{line}: {e}", path.display())))?;
            match labels.iter().find(|(a, _)| *a == id) {
                Some(&(_, p)) if p == polarity => {}
                Some(_) => {
                    return Err(Error::Validation(format!(
                        "{}:{line}: aspect `{name}` labelled with two polarities",
                        path.display()
                    )))
                }
                None => labels.push((id, polarity)),
            }
        }
        if labels.is_empty() {
            report.sentences_dropped += 1;
            continue;
        }
        let sentence = match sidecar.get(&text) {
            Some(s) => s.clone(),
            None => {
                report.heuristic_segmented += 1;
                segment::heuristic_segment(&text)
                    .map_err(|e| Error::Validation(format!("{}:{line}: {e}", path.display())))?
            }
        };
        let sample = LabeledSample { sentence, labels };
        sample.validate(aspects.len(), max_edus)?;
        samples.push(sample);
    }
    Ok((samples, report))
}

/// Reads labelled pre-segmented JSONL.
pub fn load_jsonl(path: &Path, aspects: &[String], max_edus: usize) -> Result<Vec<LabeledSample>> {
    let mut out = Vec::new();
    for (i, (sentence, labels)) in segment::read_presegmented(path)?.into_iter().enumerate() {
        let labels = labels
            .iter()
            .map(|l| Ok((aspect_id(aspects, &l.aspect)?, l.polarity)))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::Validation(format!("{} sentence {}: {e}", path.display(), i + 1)))?;
        let sample = LabeledSample { sentence, labels };
        sample.validate(aspects.len(), max_edus)?;
        out.push(sample);
    }
    Ok(out)
}

/// Writes samples in the labelled pre-segmented JSONL format.
pub fn write_jsonl(path: &Path, samples: &[LabeledSample], aspects: &[String]) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for s in samples {
        let line = serde_json::to_string(&s.to_record(aspects)).expect("record serializes");
        writeln!(file, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Token ↔ id map. Id 0 is padding, id 1 the unknown token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[PAD_ID] != PAD_TOKEN || tokens[UNK_ID] != UNK_TOKEN {
            return Err(Error::Validation("vocabulary must start with <pad>, <unk>".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Validation(format!("token `{t}` appears twice in the vocabulary")));
            }
        }
        Ok(Vocab { tokens, index })
    }

    /// Vocabulary of every token in `samples` plus `extra` words, ordered by
    /// descending frequency then lexicographically.
    pub fn build<'a>(samples: impl IntoIterator<Item = &'a LabeledSample>, extra: &[String]) -> Self {
        let counts = TokenCounts::of(samples);
        let mut entries: Vec<(&String, usize)> = counts.counts.iter().map(|(t, &c)| (t, c)).collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let mut tokens = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        tokens.extend(entries.into_iter().map(|(t, _)| t.clone()));
        for w in extra {
            if !counts.counts.contains_key(w) && !tokens.contains(w) {
                tokens.push(w.clone());
            }
        }
        Vocab::from_tokens(tokens).expect("special tokens cannot collide with corpus tokens")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK_ID)
    }

    /// SHA-256 over the tokens in id order, hex encoded.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update([0u8]);
        }
        hex::encode(h.finalize())
    }
}

/// Token occurrence counts over a corpus.
#[derive(Clone, Debug, Default)]
pub struct TokenCounts {
    pub counts: BTreeMap<String, usize>,
}

impl TokenCounts {
    pub fn of<'a>(samples: impl IntoIterator<Item = &'a LabeledSample>) -> Self {
        let mut counts = BTreeMap::new();
        for s in samples {
            for e in &s.sentence.edus {
                for t in &e.tokens {
                    *counts.entry(t.clone()).or_insert(0) += 1;
                }
            }
        }
        TokenCounts { counts }
    }
}

/// How much of the corpus the pretrained vectors cover.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GloveCoverage {
    pub types_found: usize,
    pub types_total: usize,
    pub tokens_found: usize,
    pub tokens_total: usize,
}

impl GloveCoverage {
    /// Fraction of corpus token occurrences with a pretrained vector.
    pub fn token_fraction(&self) -> f64 {
        if self.tokens_total == 0 {
            0.0
        } else {
            self.tokens_found as f64 / self.tokens_total as f64
        }
    }
}

/// An embedding matrix aligned with a [`Vocab`].
#[derive(Clone, Debug)]
pub struct Embeddings {
    pub matrix: Tensor,
    /// Whether row `i` came from the pretrained file.
    pub pretrained: Vec<bool>,
    pub coverage: Option<GloveCoverage>,
}

impl Embeddings {
    /// Uniform(−range, range) rows with a zero padding row.
    pub fn random<R: Rng>(vocab: &Vocab, dim: usize, range: f64, rng: &mut R) -> Self {
        let mut data: Vec<f64> = (0..vocab.len() * dim).map(|_| rng.gen_range(-range..range)).collect();
        data[..dim].iter_mut().for_each(|v| *v = 0.0);
        Embeddings {
            matrix: Tensor::new(vec![vocab.len(), dim], data).expect("shape matches"),
            pretrained: vec![false; vocab.len()],
            coverage: None,
        }
    }

    /// Row for `token` when it was found in the pretrained file.
    pub fn pretrained_row(&self, vocab: &Vocab, token: &str) -> Option<&[f64]> {
        let id = vocab.get(token)?;
        self.pretrained[id].then(|| self.matrix.row_slice(id))
    }
}

/// Reads GloVe text vectors (`token v1 … v_dim` per line) for the vocabulary.
/// Rows for tokens absent from the file, and the unknown token, are
/// uniform(−0.1, 0.1); the padding row is zero.
pub fn load_glove<R: Rng>(path: &Path, vocab: &Vocab, corpus: &TokenCounts, dim: usize, rng: &mut R) -> Result<Embeddings> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut emb = Embeddings::random(vocab, dim, 0.1, rng);
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let token = fields.next().unwrap_or_default();
        let values: Vec<&str> = fields.collect();
        if values.len() != dim {
            return Err(Error::parse(
                path,
                lineno + 1,
                format!("expected {dim} values after the token, found {}", values.len()),
            ));
        }
        let Some(id) = vocab.get(token) else { continue };
        if id == PAD_ID || id == UNK_ID || emb.pretrained[id] {
            continue;
        }
        let row = &mut emb.matrix.data_mut()[id * dim..(id + 1) * dim];
        for (dst, raw) in row.iter_mut().zip(&values) {
            *dst = raw
                .parse()
                .map_err(|_| Error::parse(path, lineno + 1, format!("`{raw}` is not a number")))?;
        }
        emb.pretrained[id] = true;
    }
    let mut cov = GloveCoverage {
        types_found: 0,
        types_total: corpus.counts.len(),
        tokens_found: 0,
        tokens_total: corpus.counts.values().sum(),
    };
    for (t, &c) in &corpus.counts {
        if vocab.get(t).is_some_and(|id| emb.pretrained[id]) {
            cov.types_found += 1;
            cov.tokens_found += c;
        }
    }
    log::info!(
        "GloVe coverage: {:.2}% of corpus tokens ({} of {} types)",
        100.0 * cov.token_fraction(),
        cov.types_found,
        cov.types_total
    );
    emb.coverage = Some(cov);
    Ok(emb)
}

/// A sample with token ids in place of strings.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedSample {
    pub edus: Vec<Vec<usize>>,
    pub labels: Vec<(usize, Polarity)>,
}

impl EncodedSample {
    pub fn new(sample: &LabeledSample, vocab: &Vocab) -> Self {
        EncodedSample {
            edus: sample
                .sentence
                .edus
                .iter()
                .map(|e| e.tokens.iter().map(|t| vocab.id(t)).collect())
                .collect(),
            labels: sample.labels.clone(),
        }
    }
}

pub fn encode_all(samples: &[LabeledSample], vocab: &Vocab) -> Vec<EncodedSample> {
    samples.iter().map(|s| EncodedSample::new(s, vocab)).collect()
}

/// One sentence padded to the batch's EDU count and EDU length.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PaddedSample {
    /// `J_pad × T_pad` word ids, [`PAD_ID`] at padded positions.
    pub word_ids: Vec<Vec<usize>>,
    pub word_mask: Vec<Vec<bool>>,
    pub edu_mask: Vec<bool>,
    pub labels: Vec<(usize, Polarity)>,
}

impl PaddedSample {
    /// The sample without any padding.
    pub fn unpadded(sample: &EncodedSample) -> Self {
        pad_batch(&[sample]).samples.remove(0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub samples: Vec<PaddedSample>,
    pub max_edus: usize,
    pub max_words: usize,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Pads every EDU to the longest EDU in the batch and every sentence to the
/// largest EDU count, with masks marking real positions.
pub fn pad_batch(samples: &[&EncodedSample]) -> Batch {
    let max_edus = samples.iter().map(|s| s.edus.len()).max().unwrap_or(0);
    let max_words = samples
        .iter()
        .flat_map(|s| s.edus.iter().map(Vec::len))
        .max()
        .unwrap_or(0);
    let samples = samples
        .iter()
        .map(|s| {
            let mut word_ids = vec![vec![PAD_ID; max_words]; max_edus];
            let mut word_mask = vec![vec![false; max_words]; max_edus];
            for (j, edu) in s.edus.iter().enumerate() {
                word_ids[j][..edu.len()].copy_from_slice(edu);
                word_mask[j][..edu.len()].iter_mut().for_each(|m| *m = true);
            }
            let edu_mask = (0..max_edus).map(|j| j < s.edus.len()).collect();
            PaddedSample {
                word_ids,
                word_mask,
                edu_mask,
                labels: s.labels.clone(),
            }
        })
        .collect();
    Batch {
        samples,
        max_edus,
        max_words,
    }
}

/// Shuffles with `rng` and cuts into batches of `batch_size`; the last batch
/// may be smaller.
pub fn make_batches<R: Rng>(samples: &[EncodedSample], batch_size: usize, rng: &mut R) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be ≥ 1".into()));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(rng);
    Ok(order
        .chunks(batch_size)
        .map(|chunk| {
            let refs: Vec<&EncodedSample> = chunk.iter().map(|&i| &samples[i]).collect();
            pad_batch(&refs)
        })
        .collect())
}

/// Number of held-out samples: `round(fraction · n)`, kept within `[1, n−1]`
/// when `n ≥ 2`.
pub fn validation_size(n: usize, fraction: f64) -> usize {
    let raw = (fraction * n as f64).round() as usize;
    if n < 2 {
        raw.min(n)
    } else {
        raw.clamp(1, n - 1)
    }
}

/// Seeded random split by sentence.
pub fn split_train_val<T: Clone, R: Rng>(samples: &[T], fraction: f64, rng: &mut R) -> Result<(Vec<T>, Vec<T>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("validation fraction {fraction} outside (0, 1)")));
    }
    let n_val = validation_size(samples.len(), fraction);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(rng);
    let mut is_val = vec![false; samples.len()];
    for &i in &order[..n_val] {
        is_val[i] = true;
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (s, v) in samples.iter().zip(is_val) {
        if v {
            val.push(s.clone());
        } else {
            train.push(s.clone());
        }
    }
    Ok((train, val))
}
