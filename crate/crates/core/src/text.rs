//! Concept-token text encoder and the embedding partition machinery used by
//! the self-supervised training variants.

use rand::Rng;
use thiserror::Error;

use crate::data::{vocabulary, ConceptText};
use crate::nn;
use crate::tensor::{Graph, ParameterStore, Scalar, Tensor, TensorError, Var};

/// Tokens per text, including padding.
pub const TEXT_LEN: usize = 4;
/// Embedding width.
pub const TEXT_DIM: usize = 64;
pub const TEXT_HEADS: usize = 4;
pub const PAD: usize = 0;

#[derive(Debug, Error, PartialEq)]
pub enum TextError {
    #[error("unknown token `{0}`")]
    UnknownToken(String),
    #[error("text has {0} tokens, at most {TEXT_LEN} fit")]
    TooLong(usize),
    #[error("cannot partition width {d} into {k} parts")]
    Partition { k: usize, d: usize },
    #[error("{op}: expected {expected} embeddings of equal shape")]
    SetShape { op: &'static str, expected: String },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, TextError>;

/// Fixed token-to-id map with PAD at id 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self {
            tokens: vocabulary(),
        }
    }
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Result<usize> {
        self.tokens
            .iter()
            .position(|t| t == token)
            .ok_or_else(|| TextError::UnknownToken(token.to_string()))
    }

    /// Ids right-padded with PAD to [`TEXT_LEN`].
    pub fn ids<'a>(&self, tokens: impl IntoIterator<Item = &'a str>) -> Result<Vec<usize>> {
        let mut ids = tokens.into_iter().map(|t| self.id(t)).collect::<Result<Vec<_>>>()?;
        if ids.len() > TEXT_LEN {
            return Err(TextError::TooLong(ids.len()));
        }
        ids.resize(TEXT_LEN, PAD);
        Ok(ids)
    }

    pub fn text_ids(&self, text: &ConceptText) -> Result<Vec<usize>> {
        self.ids(text.tokens())
    }
}

/// Token embedding, learned positions, one pre-norm self-attention block and
/// a final layer norm. Output rows are `[batch * TEXT_LEN, TEXT_DIM]`.
#[derive(Debug, Clone)]
pub struct TextEncoder {
    pub prefix: String,
}

impl TextEncoder {
    pub fn new(prefix: impl Into<String>) -> Self {
        Self { prefix: prefix.into() }
    }

    fn key(&self, leaf: &str) -> String {
        format!("{}.{leaf}", self.prefix)
    }

    pub fn init<F: Scalar>(&self, store: &mut ParameterStore<F>, vocab: &Vocabulary, rng: &mut impl Rng) -> Result<()> {
        store.init_normal(&self.key("tok"), &[vocab.len(), TEXT_DIM], 0.5, rng)?;
        store.init_normal(&self.key("pos"), &[TEXT_LEN, TEXT_DIM], 0.5, rng)?;
        nn::init_encoder_block(store, &self.key("block"), TEXT_DIM, rng)?;
        nn::init_layer_norm(store, &self.key("ln"), TEXT_DIM)?;
        Ok(())
    }

    /// Encode `ids.len() / TEXT_LEN` padded texts.
    pub fn forward<F: Scalar>(&self, g: &mut Graph<F>, store: &ParameterStore<F>, ids: &[usize]) -> Result<Var> {
        if ids.is_empty() || !ids.len().is_multiple_of(TEXT_LEN) {
            return Err(TextError::TooLong(ids.len()));
        }
        let batch = ids.len() / TEXT_LEN;
        let tok = g.param(store, &self.key("tok"))?;
        let pos = g.param(store, &self.key("pos"))?;
        let x = g.embedding(tok, ids)?;
        let positions: Vec<usize> = (0..ids.len()).map(|i| i % TEXT_LEN).collect();
        let p = g.embedding(pos, &positions)?;
        let x = g.add(x, p)?;
        let x = nn::encoder_block(g, store, &self.key("block"), x, batch, TEXT_HEADS)?;
        Ok(nn::layer_norm(g, store, &self.key("ln"), x)?)
    }

    /// Embedding of one text as a `[TEXT_LEN, TEXT_DIM]` tensor.
    pub fn encode<F: Scalar>(&self, store: &ParameterStore<F>, vocab: &Vocabulary, text: &ConceptText) -> Result<Tensor<F>> {
        let ids = vocab.text_ids(text)?;
        let mut g = Graph::new();
        let out = self.forward(&mut g, store, &ids)?;
        Ok(g.value(out).clone())
    }
}

/// Split the last axis into `k` equal column blocks.
pub fn partition<F: Scalar>(g: &mut Graph<F>, c: Var, k: usize) -> Result<Vec<Var>> {
    let shape = g.shape(c).to_vec();
    let d = *shape.last().expect("rank >= 1");
    if k == 0 || !d.is_multiple_of(k) {
        return Err(TextError::Partition { k, d });
    }
    if k == 1 {
        return Ok(vec![c]);
    }
    let w = d / k;
    let axis = shape.len() - 1;
    (0..k).map(|i| Ok(g.slice(c, axis, i * w, (i + 1) * w)?)).collect()
}

/// [`partition`] on a plain tensor.
pub fn partition_tensor<F: Scalar>(c: &Tensor<F>, k: usize) -> Result<Vec<Tensor<F>>> {
    let mut g = Graph::new();
    let v = g.constant(c.clone())?;
    let parts = partition(&mut g, v, k)?;
    Ok(parts.into_iter().map(|p| g.value(p).clone()).collect())
}

fn check_set<F: Scalar>(g: &Graph<F>, op: &'static str, set: &[Var]) -> Result<Vec<usize>> {
    let first = set.first().ok_or(TextError::SetShape {
        op,
        expected: "at least one".into(),
    })?;
    let shape = g.shape(*first).to_vec();
    if set.iter().any(|v| g.shape(*v) != shape.as_slice()) {
        return Err(TextError::SetShape {
            op,
            expected: format!("{} equal", set.len()),
        });
    }
    Ok(shape)
}

pub fn init_project_oss<F: Scalar>(store: &mut ParameterStore<F>, prefix: &str, k: usize, rng: &mut impl Rng) -> Result<()> {
    if k == 0 || !TEXT_DIM.is_multiple_of(k) {
        return Err(TextError::Partition { k, d: TEXT_DIM });
    }
    Ok(nn::init_linear(store, prefix, TEXT_DIM / k, TEXT_DIM, rng)?)
}

/// One affine map `d/K -> d`, shared across the sub-embeddings.
pub fn project_oss<F: Scalar>(g: &mut Graph<F>, store: &ParameterStore<F>, prefix: &str, subs: &[Var]) -> Result<Vec<Var>> {
    check_set(g, "project_oss", subs)?;
    subs.iter().map(|&s| Ok(nn::linear(g, store, prefix, s)?)).collect()
}

pub fn init_project_sc<F: Scalar>(store: &mut ParameterStore<F>, prefix: &str, k: usize, rng: &mut impl Rng) -> Result<()> {
    if k == 0 || !TEXT_DIM.is_multiple_of(k) {
        return Err(TextError::Partition { k, d: TEXT_DIM });
    }
    nn::init_linear(store, &format!("{prefix}.up"), TEXT_DIM / k, TEXT_DIM, rng)?;
    nn::init_encoder_block(store, &format!("{prefix}.block0"), TEXT_DIM, rng)?;
    nn::init_encoder_block(store, &format!("{prefix}.block1"), TEXT_DIM, rng)?;
    Ok(())
}

/// Shared up-projection followed by a shared two-layer pre-norm transformer.
/// Each sub-embedding is `[batch * TEXT_LEN, d/K]`.
pub fn project_sc<F: Scalar>(g: &mut Graph<F>, store: &ParameterStore<F>, prefix: &str, subs: &[Var]) -> Result<Vec<Var>> {
    let shape = check_set(g, "project_sc", subs)?;
    let rows = shape[..shape.len() - 1].iter().product::<usize>();
    if rows % TEXT_LEN != 0 {
        return Err(TextError::SetShape {
            op: "project_sc",
            expected: format!("rows divisible by {TEXT_LEN}"),
        });
    }
    let batch = rows / TEXT_LEN;
    subs.iter()
        .map(|&s| {
            let x = nn::linear(g, store, &format!("{prefix}.up"), s)?;
            let x = nn::encoder_block(g, store, &format!("{prefix}.block0"), x, batch, TEXT_HEADS)?;
            Ok(nn::encoder_block(g, store, &format!("{prefix}.block1"), x, batch, TEXT_HEADS)?)
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct OrthoLoss {
    pub loss: Var,
    /// Pairs skipped because one side had zero norm.
    pub degenerate: usize,
}

/// Mean over samples and unordered pairs of the squared cosine between the
/// flattened embeddings. Every element of `set` is `[batch * L, d]`.
pub fn ortho_loss<F: Scalar>(g: &mut Graph<F>, set: &[Var], batch: usize) -> Result<OrthoLoss> {
    let shape = check_set(g, "ortho_loss", set)?;
    if set.len() < 2 {
        return Err(TextError::SetShape {
            op: "ortho_loss",
            expected: "at least two".into(),
        });
    }
    let numel: usize = shape.iter().product();
    if batch == 0 || !numel.is_multiple_of(batch) {
        return Err(TextError::SetShape {
            op: "ortho_loss",
            expected: format!("batch {batch} dividing {numel}"),
        });
    }
    let flat: Vec<Var> = set
        .iter()
        .map(|&c| g.reshape(c, &[batch, numel / batch]))
        .collect::<std::result::Result<_, _>>()?;
    let norms: Vec<Var> = flat
        .iter()
        .map(|&c| {
            let sq = g.square(c)?;
            g.sum_last(sq)
        })
        .collect::<std::result::Result<_, _>>()?;
    let mut degenerate = 0;
    let mut terms = Vec::new();
    for i in 0..flat.len() {
        for j in i + 1..flat.len() {
            let prod = g.mul(flat[i], flat[j])?;
            let dot = g.sum_last(prod)?;
            let dot2 = g.square(dot)?;
            let denom = g.mul(norms[i], norms[j])?;
            // zero-norm rows have dot = 0; lift their denominator to 1 so the
            // cosine is 0 instead of NaN
            let guard: Vec<F> = g
                .value(denom)
                .data()
                .iter()
                .map(|&d| if d > F::zero() { F::zero() } else { F::one() })
                .collect();
            degenerate += guard.iter().filter(|&&m| m > F::zero()).count();
            let guard = g.constant(Tensor::new(&[batch], guard)?)?;
            let denom = g.add(denom, guard)?;
            let cos2 = g.div(dot2, denom)?;
            terms.push(g.mean(cos2)?);
        }
    }
    if degenerate > 0 {
        log::warn!("ortho_loss: {degenerate} zero-norm embedding pair(s) treated as orthogonal");
    }
    let n = terms.len();
    let sum = if n == 1 { terms[0] } else { g.concat(&terms, 0)? };
    let loss = if n == 1 { sum } else { g.mean(sum)? };
    Ok(OrthoLoss { loss, degenerate })
}
