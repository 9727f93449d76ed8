//! The full model: EDU encoding, EDU-level attention, heads, and loss, plus
//! batched gradients, predictions, and attention dumps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Graph, Var};
use crate::config::{DatasetConfig, Lambdas, ModelConfig};
use crate::data::{Batch, Embeddings, EncodedSample, LabeledSample, PaddedSample, Vocab};
use crate::encoder::{self, EncoderVars, ModelParams};
use crate::error::{Error, Result};
use crate::labels::Polarity;
use crate::sentence::{self, LossBreakdown, LossScale, SentenceHeads};
use crate::tensor::ParamStore;

/// Parameters together with the vocabulary and aspect set they were built for.
#[derive(Clone, Debug)]
pub struct Model {
    pub params: ModelParams,
    pub aspects: Vec<String>,
    pub vocab: Vocab,
}

impl Model {
    pub fn new<R: Rng>(config: &ModelConfig, aspects: Vec<String>, vocab: Vocab, rng: &mut R) -> Result<Self> {
        let params = ModelParams::init(config, vocab.len(), aspects.len(), rng)?;
        Ok(Model { params, aspects, vocab })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.params.config
    }

    pub fn num_aspects(&self) -> usize {
        self.aspects.len()
    }

    pub fn store(&self) -> &ParamStore {
        &self.params.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.params.store
    }

    /// Copies pretrained word vectors into the embedding table and
    /// initialises each aspect vector from its configured word when that
    /// word has a pretrained vector. Returns which aspects were initialised.
    pub fn load_pretrained(&mut self, emb: &Embeddings, dataset: &DatasetConfig) -> Result<Vec<bool>> {
        let table = self.params.word_embeddings;
        if emb.matrix.shape() != self.params.store.value(table).shape() {
            return Err(Error::Dimension(format!(
                "pretrained matrix {:?} does not match the word table {:?}",
                emb.matrix.shape(),
                self.params.store.value(table).shape()
            )));
        }
        *self.params.store.value_mut(table) = emb.matrix.clone();
        let da = self.params.config.aspect_dim;
        let mut initialised = Vec::with_capacity(self.aspects.len());
        for (k, aspect) in self.aspects.iter().enumerate() {
            let row = dataset
                .init_word(aspect)
                .and_then(|w| emb.pretrained_row(&self.vocab, &w))
                .filter(|r| r.len() == da);
            if let Some(row) = row {
                let dst = self.params.store.value_mut(self.params.aspect_embeddings);
                dst.data_mut()[k * da..(k + 1) * da].copy_from_slice(row);
            }
            initialised.push(row.is_some());
        }
        Ok(initialised)
    }
}

/// Graph leaves for every parameter used in a forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ModelVars {
    pub encoder: EncoderVars,
    pub w_edu_attention: Var,
    pub w_sentiment: Var,
    pub b_sentiment: Var,
    pub w_aspect_head: Var,
    pub b_aspect_head: Var,
}

impl ModelVars {
    pub fn new(g: &mut Graph, p: &ModelParams) -> Self {
        ModelVars {
            encoder: EncoderVars::new(g, p),
            w_edu_attention: g.param(p.w_edu_attention),
            w_sentiment: g.param(p.w_sentiment),
            b_sentiment: g.param(p.b_sentiment),
            w_aspect_head: g.param(p.w_aspect_head),
            b_aspect_head: g.param(p.b_aspect_head),
        }
    }
}

/// Graph nodes of one sentence's forward pass.
#[derive(Clone, Debug)]
pub struct SentenceOutput {
    pub heads: SentenceHeads,
    /// `J×(K·D)` EDU representations, zero rows for padded EDUs.
    pub edus: Var,
    /// `K×J` EDU attention.
    pub beta: Var,
    /// `K×D` sentence vectors before dropout.
    pub sentences: Var,
    /// `K×T` word attention for every real EDU.
    pub alphas: Vec<Var>,
}

/// Forward pass over one (possibly padded) sentence. Dropout is active
/// only when `rng` is given.
pub fn forward_sentence<R: Rng>(
    g: &mut Graph,
    p: &ModelParams,
    vars: &ModelVars,
    sample: &PaddedSample,
    dropout: f64,
    mut rng: Option<&mut R>,
) -> Result<SentenceOutput> {
    let k = p.num_aspects;
    let d = p.rep_dim();
    let total = sample.edu_mask.len();
    let real: Vec<usize> = (0..total).filter(|&j| sample.edu_mask[j]).collect();
    if real.is_empty() {
        return Err(Error::Input("sentence without EDUs".into()));
    }
    let mut rows = Vec::with_capacity(real.len());
    let mut alphas = Vec::with_capacity(real.len());
    for &j in &real {
        let enc = encoder::encode_edu(
            g,
            p,
            &vars.encoder,
            &sample.word_ids[j],
            &sample.word_mask[j],
            j,
            dropout,
            rng.as_deref_mut(),
        )?;
        rows.push(g.reshape(enc.rep, 1, k * d)?);
        alphas.push(enc.alpha);
    }
    let stacked = g.concat_rows(&rows)?;
    let edus = if real.len() == total {
        stacked
    } else {
        g.scatter_row_blocks(stacked, 1, &real, total)?
    };
    let beta = sentence::edu_attention(g, edus, vars.w_edu_attention, &sample.edu_mask, k)?;
    let sentences = sentence::sentence_representation(g, edus, beta)?;
    let dropped = g.dropout(sentences, dropout, rng)?;
    let sentiment_logits = sentence::sentiment_logits(g, dropped, vars.w_sentiment, vars.b_sentiment)?;
    let aspect_logits = sentence::aspect_logits(g, dropped, vars.w_aspect_head, vars.b_aspect_head)?;
    let orth = sentence::orth_regularization(g, beta, p.config.orth_norm)?;
    Ok(SentenceOutput {
        heads: SentenceHeads {
            sentiment_logits,
            aspect_logits,
            orth,
        },
        edus,
        beta,
        sentences,
        alphas,
    })
}

/// Batch loss on a single graph.
pub fn batch_loss<R: Rng>(
    g: &mut Graph,
    p: &ModelParams,
    samples: &[PaddedSample],
    dropout: f64,
    lambdas: Lambdas,
    mut rng: Option<&mut R>,
) -> Result<(Var, LossBreakdown)> {
    let vars = ModelVars::new(g, p);
    let mut heads = Vec::with_capacity(samples.len());
    for s in samples {
        heads.push(forward_sentence(g, p, &vars, s, dropout, rng.as_deref_mut())?.heads);
    }
    let gold: Vec<Vec<(usize, Polarity)>> = samples.iter().map(|s| s.labels.clone()).collect();
    sentence::total_loss(g, &heads, &gold, p.num_aspects, lambdas)
}

/// Gradients of the batch loss, one set per sentence in batch order.
///
/// Every sentence gets its own graph, built in parallel. Dropout masks come
/// from per-sentence generators seeded in order from `rng`, so results do
/// not depend on thread scheduling.
pub fn batch_gradients<R: Rng>(
    p: &ModelParams,
    batch: &Batch,
    dropout: f64,
    lambdas: Lambdas,
    rng: Option<&mut R>,
) -> Result<(Vec<Gradients>, LossBreakdown)> {
    sentence::check_lambdas(lambdas)?;
    let gold: Vec<Vec<(usize, Polarity)>> = batch.samples.iter().map(|s| s.labels.clone()).collect();
    let scale = LossScale::of(&gold, p.num_aspects)?;
    let seeds: Option<Vec<u64>> = rng.map(|r| batch.samples.iter().map(|_| r.gen()).collect());
    let results: Vec<Result<(Gradients, [f64; 3])>> = batch
        .samples
        .par_iter()
        .enumerate()
        .map(|(i, sample)| {
            let mut local = seeds.as_ref().map(|s| ChaCha8Rng::seed_from_u64(s[i]));
            let mut g = Graph::new(&p.store);
            let vars = ModelVars::new(&mut g, p);
            let out = forward_sentence(&mut g, p, &vars, sample, dropout, local.as_mut())?;
            let terms = sentence::sentence_loss_terms(&mut g, &out.heads, &sample.labels, p.num_aspects)?;
            let (loss, parts) = sentence::weighted_sentence_loss(&mut g, &terms, scale, lambdas)?;
            Ok((g.backward(loss)?, parts))
        })
        .collect();
    let mut grads = Vec::with_capacity(results.len());
    let mut parts = [0.0; 3];
    for r in results {
        let (gr, p) = r?;
        grads.push(gr);
        parts.iter_mut().zip(p).for_each(|(a, b)| *a += b);
    }
    Ok((grads, LossBreakdown::from_parts(parts, lambdas)))
}

/// Model output for one gold aspect of a sentence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairPrediction {
    pub sentence: usize,
    pub aspect: usize,
    pub gold: Polarity,
    pub predicted: Polarity,
    /// Softmax over negative, neutral, positive.
    pub probabilities: [f64; 3],
    /// Sigmoid of the aspect-presence head.
    pub presence: f64,
}

impl PairPrediction {
    pub fn confidence(&self) -> f64 {
        self.probabilities[self.predicted.index()]
    }
}

pub fn argmax(p: &[f64; 3]) -> Polarity {
    let mut best = 0;
    for i in 1..3 {
        if p[i] > p[best] {
            best = i;
        }
    }
    Polarity::from_index(best).expect("index < 3")
}

/// Inference-time outputs of one sentence for every aspect.
#[derive(Clone, Debug)]
pub struct SentenceInference {
    /// `K` rows of sentiment probabilities.
    pub probabilities: Vec<[f64; 3]>,
    pub presence: Vec<f64>,
    /// `K×J` EDU attention.
    pub beta: Vec<Vec<f64>>,
    /// Per EDU, `K×T` word attention, `T` being the longest EDU of the
    /// sentence; positions past an EDU's end are zero.
    pub alphas: Vec<Vec<Vec<f64>>>,
}

pub fn infer(p: &ModelParams, sample: &EncodedSample) -> Result<SentenceInference> {
    let padded = PaddedSample::unpadded(sample);
    let mut g = Graph::new(&p.store);
    let vars = ModelVars::new(&mut g, p);
    let out = forward_sentence::<ChaCha8Rng>(&mut g, p, &vars, &padded, 0.0, None)?;
    let rows = |t: &crate::tensor::Tensor| -> Vec<Vec<f64>> { (0..t.rows()).map(|r| t.row_slice(r).to_vec()).collect() };
    let logits = g.value(out.heads.sentiment_logits);
    let probabilities = (0..logits.rows())
        .map(|r| sentence::predict_sentiment(logits.row_slice(r)))
        .collect::<Result<Vec<_>>>()?;
    let presence = g
        .value(out.heads.aspect_logits)
        .data()
        .iter()
        .map(|&z| sentence::predict_aspect_presence(z))
        .collect();
    Ok(SentenceInference {
        probabilities,
        presence,
        beta: rows(g.value(out.beta)),
        alphas: out.alphas.iter().map(|&a| rows(g.value(a))).collect(),
    })
}

/// Predicts every (sentence, gold aspect) pair, in sentence order.
pub fn predict_pairs(p: &ModelParams, samples: &[EncodedSample]) -> Result<Vec<PairPrediction>> {
    let per_sentence: Vec<Result<Vec<PairPrediction>>> = samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let inf = infer(p, s)?;
            Ok(s.labels
                .iter()
                .map(|&(a, gold)| PairPrediction {
                    sentence: i,
                    aspect: a,
                    gold,
                    predicted: argmax(&inf.probabilities[a]),
                    probabilities: inf.probabilities[a],
                    presence: inf.presence[a],
                })
                .collect())
        })
        .collect();
    let mut out = Vec::new();
    for r in per_sentence {
        out.extend(r?);
    }
    Ok(out)
}

fn percent(x: f64) -> f64 {
    (x * 10_000.0).round() / 100.0
}

/// Word attention of one aspect over one EDU.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EduWordAttention {
    pub edu: usize,
    pub tokens: Vec<String>,
    /// Percent, two decimals.
    pub scores: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AspectAttention {
    pub aspect: String,
    pub gold: Option<Polarity>,
    pub predicted: Polarity,
    pub confidence: f64,
    pub words: Vec<EduWordAttention>,
    /// EDU attention in percent.
    pub edus: Vec<f64>,
}

/// Word- and EDU-level attention of one sentence for every aspect.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionDump {
    pub text: String,
    pub edus: Vec<String>,
    pub aspects: Vec<AspectAttention>,
    /// `J×K` EDU-by-aspect attention matrix in percent.
    pub matrix: Vec<Vec<f64>>,
}

pub fn attention_dump(model: &Model, sample: &LabeledSample) -> Result<AttentionDump> {
    let encoded = EncodedSample::new(sample, &model.vocab);
    let inf = infer(&model.params, &encoded)?;
    let sentence = &sample.sentence;
    let aspects = model
        .aspects
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let probs = inf.probabilities[k];
            let predicted = argmax(&probs);
            AspectAttention {
                aspect: name.clone(),
                gold: sample.labels.iter().find(|(a, _)| *a == k).map(|&(_, p)| p),
                predicted,
                confidence: probs[predicted.index()],
                words: sentence
                    .edus
                    .iter()
                    .enumerate()
                    .map(|(j, e)| EduWordAttention {
                        edu: j,
                        tokens: e.tokens.clone(),
                        scores: inf.alphas[j][k][..e.tokens.len()].iter().map(|&x| percent(x)).collect(),
                    })
                    .collect(),
                edus: inf.beta[k].iter().map(|&x| percent(x)).collect(),
            }
        })
        .collect();
    let j_count = sentence.edus.len();
    let matrix = (0..j_count)
        .map(|j| inf.beta.iter().map(|row| percent(row[j])).collect())
        .collect();
    Ok(AttentionDump {
        text: sentence.text.clone(),
        edus: (0..j_count).map(|j| sentence.edu_text(j)).collect(),
        aspects,
        matrix,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use crate::data::pad_batch;
    use crate::tensor::Tensor;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            word_dim: 3,
            aspect_dim: 3,
            fuse_dim: 3,
            hidden_dim: 2,
            max_edus: 4,
            init_range: 0.5,
            ..Default::default()
        }
    }

    fn params(seed: u64, k: usize) -> ModelParams {
        let mut p = ModelParams::init(&tiny_config(), 12, k, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        for id in [p.position_table, p.b_sentiment, p.b_aspect_head, p.gru_forward.b_ih, p.gru_backward.b_hh] {
            for v in p.store.value_mut(id).data_mut() {
                *v = rng.gen_range(-0.5..0.5);
            }
        }
        p
    }

    fn toy_samples() -> Vec<EncodedSample> {
        vec![
            EncodedSample {
                edus: vec![vec![2, 3, 4], vec![5, 6]],
                labels: vec![(0, Polarity::Positive), (1, Polarity::Negative)],
            },
            EncodedSample {
                edus: vec![vec![7, 8, 9, 10]],
                labels: vec![(1, Polarity::Neutral)],
            },
        ]
    }

    fn padded(samples: &[EncodedSample]) -> Batch {
        let refs: Vec<&EncodedSample> = samples.iter().collect();
        pad_batch(&refs)
    }

    #[test]
    fn forward_shapes_and_simplex() {
        let p = params(1, 2);
        let batch = padded(&toy_samples());
        let mut g = Graph::new(&p.store);
        let vars = ModelVars::new(&mut g, &p);
        let out = forward_sentence::<ChaCha8Rng>(&mut g, &p, &vars, &batch.samples[1], 0.0, None).unwrap();
        let beta = g.value(out.beta);
        assert_eq!(beta.shape(), &[2, 2]);
        for k in 0..2 {
            assert_eq!(beta.get(k, 1), 0.0, "padded EDU must get zero attention");
            assert!((beta.get(k, 0) - 1.0).abs() < 1e-12);
        }
        assert_eq!(out.alphas.len(), 1);
        assert_eq!(g.value(out.heads.sentiment_logits).shape(), &[2, 3]);
        assert_eq!(g.value(out.heads.aspect_logits).shape(), &[2, 1]);
        assert!(g.value(out.edus).row_slice(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn padding_does_not_change_outputs() {
        let p = params(2, 2);
        let samples = toy_samples();
        let batch = padded(&samples);
        for (s, padded) in samples.iter().zip(&batch.samples) {
            let run = |sample: &PaddedSample| {
                let mut g = Graph::new(&p.store);
                let vars = ModelVars::new(&mut g, &p);
                let out = forward_sentence::<ChaCha8Rng>(&mut g, &p, &vars, sample, 0.0, None).unwrap();
                (
                    g.value(out.heads.sentiment_logits).clone(),
                    g.value(out.heads.orth).item(),
                )
            };
            let (a, oa) = run(&PaddedSample::unpadded(s));
            let (b, ob) = run(padded);
            assert!(a.max_abs_diff(&b) < 1e-12);
            assert!((oa - ob).abs() < 1e-12);
        }
    }

    #[test]
    fn aspect_embedding_change_is_local() {
        let mut p = params(3, 3);
        let sample = PaddedSample::unpadded(&toy_samples()[0]);
        let run = |p: &ModelParams| {
            let mut g = Graph::new(&p.store);
            let vars = ModelVars::new(&mut g, p);
            let out = forward_sentence::<ChaCha8Rng>(&mut g, p, &vars, &sample, 0.0, None).unwrap();
            let alphas: Vec<Tensor> = out.alphas.iter().map(|&a| g.value(a).clone()).collect();
            (alphas, g.value(out.edus).clone())
        };
        let (a0, e0) = run(&p);
        let da = p.config.aspect_dim;
        for v in &mut p.store.value_mut(p.aspect_embeddings).data_mut()[da..2 * da] {
            *v += 0.7;
        }
        let (a1, e1) = run(&p);
        let d = p.rep_dim();
        for (x, y) in a0.iter().zip(&a1) {
            for k in [0, 2] {
                assert_eq!(x.row_slice(k), y.row_slice(k));
            }
        }
        for j in 0..e0.rows() {
            for k in [0, 2] {
                assert_eq!(&e0.row_slice(j)[k * d..(k + 1) * d], &e1.row_slice(j)[k * d..(k + 1) * d]);
            }
            assert_ne!(&e0.row_slice(j)[d..2 * d], &e1.row_slice(j)[d..2 * d]);
        }
    }

    #[test]
    fn end_to_end_gradient_check() {
        let mut p = params(4, 2);
        let batch = padded(&toy_samples());
        let ids: Vec<_> = p.store.ids().collect();
        let config = p.clone();
        let report = grad_check(&mut p.store, &ids, |g| {
            let (loss, _) = batch_loss::<ChaCha8Rng>(g, &config, &batch.samples, 0.0, Lambdas::default(), None)?;
            Ok(loss)
        })
        .unwrap();
        assert!(report.max_rel_error <= 1e-4, "{report:?}");
        assert_eq!(report.checked, p.store.num_values());
    }

    #[test]
    fn parallel_gradients_match_single_graph() {
        let p = params(5, 2);
        let batch = padded(&toy_samples());
        let lambdas = Lambdas {
            sentiment: 1.0,
            aspect: 0.5,
            orth: 0.3,
        };
        let (reference, ref_breakdown) = {
            let mut g = Graph::new(&p.store);
            let (loss, b) = batch_loss::<ChaCha8Rng>(&mut g, &p, &batch.samples, 0.0, lambdas, None).unwrap();
            (g.backward(loss).unwrap(), b)
        };
        let (parts, breakdown) = batch_gradients::<ChaCha8Rng>(&p, &batch, 0.0, lambdas, None).unwrap();
        assert!((breakdown.total - ref_breakdown.total).abs() < 1e-12);
        let mut store = p.store.clone();
        store.zero_grad();
        for gr in &parts {
            gr.accumulate_into(&mut store);
        }
        for id in p.store.ids() {
            let expected = reference.get(id).unwrap_or_else(|| Tensor::zeros(p.store.value(id).shape()));
            assert!(store.get(id).grad.max_abs_diff(&expected) < 1e-12, "{}", store.get(id).name);
        }
    }

    #[test]
    fn dropout_gradients_are_seed_deterministic() {
        let p = params(6, 2);
        let batch = padded(&toy_samples());
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let (g, b) = batch_gradients(&p, &batch, 0.5, Lambdas::default(), Some(&mut rng)).unwrap();
            (g.iter().map(|x| x.get(p.w_fuse).unwrap()).collect::<Vec<_>>(), b)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn predictions_cover_gold_pairs() {
        let p = params(7, 2);
        let preds = predict_pairs(&p, &toy_samples()).unwrap();
        assert_eq!(preds.len(), 3);
        assert_eq!((preds[2].sentence, preds[2].aspect, preds[2].gold), (1, 1, Polarity::Neutral));
        for pr in &preds {
            assert!((pr.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(pr.probabilities.iter().all(|&x| x <= pr.confidence()));
            assert!(pr.presence > 0.0 && pr.presence < 1.0);
        }
    }

    #[test]
    fn dump_in_percent() {
        let text = "the food is tasty and the bill is never too large";
        let sentence = crate::segment::heuristic_segment(text).unwrap();
        let sample = LabeledSample {
            sentence,
            labels: vec![(0, Polarity::Positive)],
        };
        let vocab = Vocab::build([&sample], &[]);
        let model = Model {
            params: ModelParams::init(&tiny_config(), vocab.len(), 2, &mut ChaCha8Rng::seed_from_u64(1)).unwrap(),
            aspects: vec!["food".into(), "price".into()],
            vocab,
        };
        let dump = attention_dump(&model, &sample).unwrap();
        assert_eq!(dump.edus, ["the food is tasty", "and the bill is never too large"]);
        assert_eq!(dump.matrix.len(), 2);
        assert_eq!(dump.aspects[0].gold, Some(Polarity::Positive));
        assert_eq!(dump.aspects[1].gold, None);
        for a in &dump.aspects {
            assert!((a.edus.iter().sum::<f64>() - 100.0).abs() < 0.02);
            for w in &a.words {
                assert_eq!(w.tokens.len(), w.scores.len());
                assert!((w.scores.iter().sum::<f64>() - 100.0).abs() < 0.1);
                assert!(w.scores.iter().all(|s| (s * 100.0 - (s * 100.0).round()).abs() < 1e-6));
            }
        }
    }

    #[test]
    fn pretrained_aspect_init() {
        let sample = LabeledSample {
            sentence: crate::segment::heuristic_segment("great food").unwrap(),
            labels: vec![(0, Polarity::Positive)],
        };
        let vocab = Vocab::build([&sample], &["price".into()]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut model = Model::new(&tiny_config(), vec!["food".into(), "price".into(), "misc".into()], vocab.clone(), &mut rng).unwrap();
        let mut emb = Embeddings::random(&vocab, 3, 0.1, &mut rng);
        let food = vocab.id("food");
        emb.matrix.data_mut()[food * 3..food * 3 + 3].copy_from_slice(&[1.0, 2.0, 3.0]);
        emb.pretrained[food] = true;
        let mut dataset = DatasetConfig::default();
        dataset.aspects = model.aspects.clone();
        let init = model.load_pretrained(&emb, &dataset).unwrap();
        assert_eq!(init, [true, false, false]);
        assert_eq!(model.store().value(model.params.aspect_embeddings).row_slice(0), &[1.0, 2.0, 3.0]);
        assert_eq!(model.store().value(model.params.word_embeddings), &emb.matrix);
    }
}
