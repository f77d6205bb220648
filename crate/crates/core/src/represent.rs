//! Goal-guided attention pooling over token embeddings.

use ndarray::{Array1, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::numeric::{cosine, norm, softmax, SimplexVector};

#[derive(Debug, Clone, PartialEq)]
pub struct DocRepresentation {
    /// `sum_n a_n e_n` with attention weights from goal similarity.
    pub goal_pooled: Array1<f64>,
    /// Plain row mean of the token embeddings.
    pub mean_pooled: Array1<f64>,
    pub attention: SimplexVector,
}

/// Each token scores the largest cosine it has with any goal vector; the
/// softmax of those scores weights the tokens.
pub fn goal_attention_pool(
    token_embs: ArrayView2<'_, f64>,
    goal_embs: &[ArrayView1<'_, f64>],
) -> Result<DocRepresentation> {
    let scores = attention_scores(token_embs, goal_embs)?;
    let attention = softmax(scores.view())?;
    let goal_pooled = attention.view().dot(&token_embs);
    Ok(DocRepresentation {
        goal_pooled,
        mean_pooled: mean_pool(token_embs)?,
        attention,
    })
}

/// Per-token score: the largest cosine with any goal vector.
pub fn attention_scores(token_embs: ArrayView2<'_, f64>, goal_embs: &[ArrayView1<'_, f64>]) -> Result<Array1<f64>> {
    if token_embs.nrows() == 0 {
        return Err(Error::domain("attention pooling needs at least one token"));
    }
    if goal_embs.is_empty() {
        return Err(Error::domain("attention pooling needs at least one goal vector"));
    }
    if goal_embs.iter().any(|g| norm(*g) == 0.0) {
        return Err(Error::domain("goal vector is zero"));
    }
    let mut scores = Array1::<f64>::zeros(token_embs.nrows());
    for (n, e) in token_embs.axis_iter(Axis(0)).enumerate() {
        if norm(e) == 0.0 {
            return Err(Error::domain(format!("token {n} has a zero embedding")));
        }
        let mut best = f64::NEG_INFINITY;
        for g in goal_embs {
            best = best.max(cosine(e, *g)?);
        }
        scores[n] = best;
    }
    Ok(scores)
}

pub fn mean_pool(token_embs: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
    token_embs
        .mean_axis(Axis(0))
        .ok_or_else(|| Error::domain("mean pooling of zero tokens"))
}
