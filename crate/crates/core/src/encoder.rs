//! Aspect-specific EDU encoding.
//!
//! Every word of an EDU is fused with each aspect embedding, the fused
//! sequence runs through a bidirectional GRU, sparsemax picks the words that
//! matter for the aspect, and the attended hidden states plus a learned
//! EDU-position vector form the EDU representation.
//!
//! All `K` aspects are processed together. Sequences are laid out time-major:
//! row `t·K + k` holds time step `t` for aspect `k`.

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::{ParamGroup, ParamId, ParamStore, Tensor};

/// Parameter ids of one GRU direction. Gate columns are ordered
/// `[reset | update | candidate]`.
#[derive(Clone, Copy, Debug)]
pub struct GruParams {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b_ih: ParamId,
    pub b_hh: ParamId,
}

/// Every learnable tensor of the model.
#[derive(Clone, Debug)]
pub struct ModelParams {
    pub store: ParamStore,
    pub config: ModelConfig,
    pub vocab_size: usize,
    pub num_aspects: usize,
    pub word_embeddings: ParamId,
    pub aspect_embeddings: ParamId,
    pub w_fuse: ParamId,
    pub w_aspect: ParamId,
    pub gru_forward: GruParams,
    pub gru_backward: GruParams,
    pub w_word_attention: ParamId,
    pub position_table: ParamId,
    pub w_edu_attention: ParamId,
    pub w_sentiment: ParamId,
    pub b_sentiment: ParamId,
    pub w_aspect_head: ParamId,
    pub b_aspect_head: ParamId,
}

fn uniform<R: Rng>(rng: &mut R, shape: &[usize], range: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-range..range)).collect())
        .expect("shape matches length")
}

impl ModelParams {
    /// Random initialisation: weights uniform in `±init_range`, biases and the
    /// position table zero. The padding row (id 0) of the word table is zero.
    pub fn init<R: Rng>(config: &ModelConfig, vocab_size: usize, num_aspects: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        if vocab_size < 2 || num_aspects == 0 {
            return Err(Error::Config(format!(
                "need a vocabulary of ≥ 2 ids and ≥ 1 aspect, got {vocab_size} and {num_aspects}"
            )));
        }
        let r = config.init_range;
        let (dw, da, df, h, d) = (
            config.word_dim,
            config.aspect_dim,
            config.fuse_dim,
            config.hidden_dim,
            config.rep_dim(),
        );
        let mut store = ParamStore::new();
        let mut words = uniform(rng, &[vocab_size, dw], r);
        words.data_mut()[..dw].iter_mut().for_each(|v| *v = 0.0);
        let word_embeddings = store.add("word_embeddings", words, ParamGroup::Embedding)?;
        let aspect_embeddings = store.add("aspect_embeddings", uniform(rng, &[num_aspects, da], r), ParamGroup::Model)?;
        let w_fuse = store.add("w_fuse", uniform(rng, &[dw, df], r), ParamGroup::Model)?;
        let w_aspect = store.add("w_aspect", uniform(rng, &[da, df], r), ParamGroup::Model)?;
        let mut gru = |prefix: &str, store: &mut ParamStore| -> Result<GruParams> {
            Ok(GruParams {
                w_ih: store.add(&format!("{prefix}.w_ih"), uniform(rng, &[df, 3 * h], r), ParamGroup::Model)?,
                w_hh: store.add(&format!("{prefix}.w_hh"), uniform(rng, &[h, 3 * h], r), ParamGroup::Model)?,
                b_ih: store.add(&format!("{prefix}.b_ih"), Tensor::zeros(&[1, 3 * h]), ParamGroup::Model)?,
                b_hh: store.add(&format!("{prefix}.b_hh"), Tensor::zeros(&[1, 3 * h]), ParamGroup::Model)?,
            })
        };
        let gru_forward = gru("gru_forward", &mut store)?;
        let gru_backward = gru("gru_backward", &mut store)?;
        let w_word_attention = store.add("w_word_attention", uniform(rng, &[d, 1], r), ParamGroup::Model)?;
        let position_table = store.add("position_table", Tensor::zeros(&[config.max_edus, d]), ParamGroup::Model)?;
        let w_edu_attention = store.add("w_edu_attention", uniform(rng, &[d, 1], r), ParamGroup::Model)?;
        let w_sentiment = store.add("w_sentiment", uniform(rng, &[d, 3], r), ParamGroup::Model)?;
        let b_sentiment = store.add("b_sentiment", Tensor::zeros(&[1, 3]), ParamGroup::Model)?;
        let w_aspect_head = store.add("w_aspect_head", uniform(rng, &[d, 1], r), ParamGroup::Model)?;
        let b_aspect_head = store.add("b_aspect_head", Tensor::zeros(&[1, 1]), ParamGroup::Model)?;
        Ok(ModelParams {
            store,
            config: config.clone(),
            vocab_size,
            num_aspects,
            word_embeddings,
            aspect_embeddings,
            w_fuse,
            w_aspect,
            gru_forward,
            gru_backward,
            w_word_attention,
            position_table,
            w_edu_attention,
            w_sentiment,
            b_sentiment,
            w_aspect_head,
            b_aspect_head,
        })
    }

    pub fn rep_dim(&self) -> usize {
        self.config.rep_dim()
    }
}

/// Graph leaves of one GRU direction.
#[derive(Clone, Copy, Debug)]
pub struct GruVars {
    pub w_ih: Var,
    pub w_hh: Var,
    pub b_ih: Var,
    pub b_hh: Var,
}

impl GruVars {
    pub fn new(g: &mut Graph, p: &GruParams) -> Self {
        GruVars {
            w_ih: g.param(p.w_ih),
            w_hh: g.param(p.w_hh),
            b_ih: g.param(p.b_ih),
            b_hh: g.param(p.b_hh),
        }
    }
}

/// `tanh(words·W_fuse + aspects·W_k)` for every (word, aspect) pair.
///
/// `words` is `T×d_w`, `aspects` is `K×d_a`; the result is `T·K×d_f`,
/// time-major.
pub fn fuse_word_aspect(g: &mut Graph, words: Var, aspects: Var, w_fuse: Var, w_k: Var) -> Result<Var> {
    let steps = g.value(words).rows();
    let k = g.value(aspects).rows();
    let word_part = g.matmul(words, w_fuse)?;
    let aspect_part = g.matmul(aspects, w_k)?;
    let word_rows = g.repeat_rows(word_part, k)?;
    let aspect_rows = g.tile(aspect_part, steps)?;
    let pre = g.add(word_rows, aspect_rows)?;
    Ok(g.tanh(pre))
}

/// One GRU direction over `steps` time steps of a `batch`-row input whose
/// gate pre-activations `x·W_ih + b_ih` are already in `proj`. Returns the
/// hidden state of every step in time order.
fn gru_direction(g: &mut Graph, gru: &GruVars, proj: Var, steps: usize, batch: usize, reverse: bool) -> Result<Vec<Var>> {
    let hidden = g.value(gru.w_hh).rows();
    let mut h = g.constant(Tensor::zeros(&[batch, hidden]));
    let mut outputs = vec![h; steps];
    let order: Vec<usize> = if reverse { (0..steps).rev().collect() } else { (0..steps).collect() };
    for t in order {
        let gi = g.slice_rows(proj, t * batch, batch)?;
        let hw = g.matmul(h, gru.w_hh)?;
        let gh = g.add_row(hw, gru.b_hh)?;
        let (gi_r, gh_r) = (g.slice_cols(gi, 0, hidden)?, g.slice_cols(gh, 0, hidden)?);
        let (gi_z, gh_z) = (g.slice_cols(gi, hidden, hidden)?, g.slice_cols(gh, hidden, hidden)?);
        let (gi_n, gh_n) = (g.slice_cols(gi, 2 * hidden, hidden)?, g.slice_cols(gh, 2 * hidden, hidden)?);
        let r_pre = g.add(gi_r, gh_r)?;
        let r = g.sigmoid(r_pre);
        let z_pre = g.add(gi_z, gh_z)?;
        let z = g.sigmoid(z_pre);
        let gated = g.mul(r, gh_n)?;
        let n_pre = g.add(gi_n, gated)?;
        let n = g.tanh(n_pre);
        let keep_new = g.one_minus(z);
        let new_part = g.mul(keep_new, n)?;
        let old_part = g.mul(z, h)?;
        h = g.add(new_part, old_part)?;
        outputs[t] = h;
    }
    Ok(outputs)
}

/// Bidirectional GRU with zero initial states over a time-major
/// `steps·batch×d_f` input; returns `steps·batch×2h` with each row
/// `[forward; backward]`.
pub fn bigru_encode(g: &mut Graph, forward: &GruVars, backward: &GruVars, inputs: Var, steps: usize, batch: usize) -> Result<Var> {
    if steps == 0 || batch == 0 {
        return Err(Error::Dimension("GRU over an empty sequence".into()));
    }
    if g.value(inputs).rows() != steps * batch {
        return Err(Error::Dimension(format!(
            "GRU input {:?} does not hold {steps} steps of {batch} rows",
            g.value(inputs).shape()
        )));
    }
    let fw_in = g.matmul(inputs, forward.w_ih)?;
    let fw_proj = g.add_row(fw_in, forward.b_ih)?;
    let bw_in = g.matmul(inputs, backward.w_ih)?;
    let bw_proj = g.add_row(bw_in, backward.b_ih)?;
    let fw = gru_direction(g, forward, fw_proj, steps, batch, false)?;
    let bw = gru_direction(g, backward, bw_proj, steps, batch, true)?;
    let mut rows = Vec::with_capacity(steps);
    for t in 0..steps {
        rows.push(g.concat_cols(&[fw[t], bw[t]])?);
    }
    g.concat_rows(&rows)
}

/// Word-level sparse attention: scores `H·w` per aspect, sparsemax over the
/// unmasked positions. `hidden` is `T·K×D` time-major with `T = mask.len()`;
/// the result is `K×T`.
pub fn word_attention(g: &mut Graph, hidden: Var, w_attn: Var, mask: &[bool], num_aspects: usize) -> Result<Var> {
    let steps = mask.len();
    if !mask.iter().any(|&m| m) {
        return Err(Error::Input("word attention over an EDU with no valid words".into()));
    }
    let scores = g.matmul(hidden, w_attn)?;
    let grid = g.reshape(scores, steps, num_aspects)?;
    let by_aspect = g.transpose(grid);
    g.sparsemax_rows(by_aspect, mask)
}

/// `Emb_p(edu_index) + Σ_t α[k,t]·H[t,k]` for every aspect `k`; `K×D`.
pub fn edu_representation(
    g: &mut Graph,
    hidden: Var,
    alpha: Var,
    edu_index: usize,
    position_table: ParamId,
) -> Result<Var> {
    let max_edus = g.params().value(position_table).rows();
    if edu_index >= max_edus {
        return Err(Error::Config(format!(
            "EDU index {edu_index} exceeds the position table size {max_edus}"
        )));
    }
    let (k, steps) = (g.value(alpha).rows(), g.value(alpha).cols());
    let d = g.value(hidden).cols();
    let values = g.reshape(hidden, steps, k * d)?;
    let mixed = g.grouped_weighted_sum(alpha, values)?;
    let position = g.embed(position_table, &[edu_index])?;
    g.add_row(mixed, position)
}

/// Graph nodes produced for one EDU.
#[derive(Clone, Copy, Debug)]
pub struct EncodedEdu {
    /// `T·K×D` hidden states, time-major, zero rows at masked positions.
    pub hidden: Var,
    /// `K×T` word attention.
    pub alpha: Var,
    /// `K×D` aspect-specific EDU representations.
    pub rep: Var,
}

/// Parameter leaves shared by all EDUs in a graph.
#[derive(Clone, Copy, Debug)]
pub struct EncoderVars {
    pub aspects: Var,
    pub w_fuse: Var,
    pub w_aspect: Var,
    pub forward: GruVars,
    pub backward: GruVars,
    pub w_word_attention: Var,
}

impl EncoderVars {
    pub fn new(g: &mut Graph, p: &ModelParams) -> Self {
        EncoderVars {
            aspects: g.param(p.aspect_embeddings),
            w_fuse: g.param(p.w_fuse),
            w_aspect: g.param(p.w_aspect),
            forward: GruVars::new(g, &p.gru_forward),
            backward: GruVars::new(g, &p.gru_backward),
            w_word_attention: g.param(p.w_word_attention),
        }
    }
}

/// Runs fusion, dropout, the bi-GRU, word attention, and the position-augmented
/// sum for one EDU given padded word ids and their mask.
#[allow(clippy::too_many_arguments)]
pub fn encode_edu<R: Rng>(
    g: &mut Graph,
    p: &ModelParams,
    vars: &EncoderVars,
    word_ids: &[usize],
    mask: &[bool],
    edu_index: usize,
    dropout: f64,
    rng: Option<&mut R>,
) -> Result<EncodedEdu> {
    if word_ids.len() != mask.len() {
        return Err(Error::Dimension(format!(
            "{} word ids with a mask of length {}",
            word_ids.len(),
            mask.len()
        )));
    }
    let positions: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    if positions.is_empty() {
        return Err(Error::Input("EDU with no valid words".into()));
    }
    let ids: Vec<usize> = positions.iter().map(|&i| word_ids[i]).collect();
    let k = p.num_aspects;
    let words = g.embed(p.word_embeddings, &ids)?;
    let fused = fuse_word_aspect(g, words, vars.aspects, vars.w_fuse, vars.w_aspect)?;
    let fused = g.dropout(fused, dropout, rng)?;
    let valid_hidden = bigru_encode(g, &vars.forward, &vars.backward, fused, ids.len(), k)?;
    let hidden = if positions.len() == mask.len() {
        valid_hidden
    } else {
        g.scatter_row_blocks(valid_hidden, k, &positions, mask.len())?
    };
    let alpha = word_attention(g, hidden, vars.w_word_attention, mask, k)?;
    let rep = edu_representation(g, hidden, alpha, edu_index, p.position_table)?;
    Ok(EncodedEdu { hidden, alpha, rep })
}
