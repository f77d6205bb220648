//! Goal clustering, batching, optimization of the topic matrix, checkpoints.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::model::{align_topics_to_goals, total_loss_and_grad, Bandwidth, BatchContext, GoalMatrix, Hyper, TopicMatrix};
use crate::numeric::{kmeans, Adam, AdamConfig, SinkhornConfig};
use crate::providers::{embed_phrase, embed_tokens, AugmentedPair, DocGoals, Embedder};
use crate::represent::goal_attention_pool;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub k: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub tau: f64,
    pub delta: f64,
    pub eta: f64,
    pub zeta: f64,
    pub epsilon: f64,
    /// Symmetric Dirichlet concentration; `1/K` when unset.
    pub alpha: Option<f64>,
    pub epochs: usize,
    pub seed: u64,
    /// Run exactly this many steps, ignoring `epochs` and early stopping.
    pub max_steps: Option<usize>,
    /// Stop after this many consecutive epochs improving the mean loss by
    /// less than `min_improvement`.
    pub patience: Option<usize>,
    pub min_improvement: f64,
    pub sinkhorn_max_iter: usize,
    pub sinkhorn_tol: f64,
    pub bandwidth: Bandwidth,
    /// Vocabulary threshold used at extraction time.
    pub min_count: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let sk = SinkhornConfig::default();
        TrainConfig {
            k: 20,
            batch_size: 32,
            lr: 2e-3,
            tau: 0.05,
            delta: 0.6,
            eta: 1.0,
            zeta: 1.0,
            epsilon: sk.epsilon,
            alpha: None,
            epochs: 50,
            seed: 0,
            max_steps: None,
            patience: Some(5),
            min_improvement: 1e-4,
            sinkhorn_max_iter: sk.max_iter,
            sinkhorn_tol: sk.tol,
            bandwidth: Bandwidth::Median,
            min_count: crate::corpus::DEFAULT_MIN_COUNT,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::validation(m));
        if self.k < 2 {
            return fail(format!("K must be at least 2, got {}", self.k));
        }
        if self.batch_size < 1 {
            return fail("batch size must be at least 1".into());
        }
        let positive = [
            ("lr", self.lr),
            ("tau", self.tau),
            ("epsilon", self.epsilon),
            ("sinkhorn_tol", self.sinkhorn_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return fail(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [("eta", self.eta), ("zeta", self.zeta), ("min_improvement", self.min_improvement)] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("{name} must be nonnegative, got {v}"));
            }
        }
        if !(-1.0..=1.0).contains(&self.delta) {
            return fail(format!("delta must lie in [-1, 1], got {}", self.delta));
        }
        if let Some(a) = self.alpha {
            if !(a > 0.0 && a.is_finite()) {
                return fail(format!("alpha must be positive, got {a}"));
            }
        }
        if let Bandwidth::Fixed(g) = self.bandwidth {
            if !(g > 0.0 && g.is_finite()) {
                return fail(format!("kernel bandwidth must be positive, got {g}"));
            }
        }
        if self.sinkhorn_max_iter == 0 {
            return fail("sinkhorn_max_iter must be positive".into());
        }
        if self.min_count == 0 {
            return fail("min_count must be positive".into());
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
            _ => Error::io(path, e),
        })?;
        let config: TrainConfig = serde_json::from_str(&text)
            .map_err(|e| Error::validation(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }

    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or(1.0 / self.k as f64)
    }

    pub fn hyper(&self) -> Hyper {
        Hyper {
            tau: self.tau,
            delta: self.delta,
            eta: self.eta,
            zeta: self.zeta,
            alpha: self.alpha(),
            bandwidth: self.bandwidth,
            sinkhorn: SinkhornConfig {
                epsilon: self.epsilon,
                max_iter: self.sinkhorn_max_iter,
                tol: self.sinkhorn_tol,
            },
        }
    }
}

/// Corpus-level goal set plus each document's own goal list.
#[derive(Debug, Clone, PartialEq)]
pub struct GoalSet {
    /// Distinct phrases in first-seen order.
    pub phrases: Vec<String>,
    pub per_doc: BTreeMap<String, Vec<String>>,
}

/// Drops documents tagged irrelevant and unions the remaining goal phrases.
pub fn build_goal_set(corpus: &Corpus, doc_goals: &[DocGoals]) -> Result<(Corpus, GoalSet)> {
    let mut by_id: BTreeMap<&str, &DocGoals> = BTreeMap::new();
    for g in doc_goals {
        g.validate()?;
        if by_id.insert(g.doc_id.as_str(), g).is_some() {
            return Err(Error::validation(format!("duplicate goals for document {:?}", g.doc_id)));
        }
    }
    for d in corpus.documents() {
        if !by_id.contains_key(d.id.as_str()) {
            return Err(Error::validation(format!("no goals for document {:?}", d.id)));
        }
    }
    let kept = corpus.retain(|d| by_id[d.id.as_str()].relevant);
    let mut seen = HashSet::new();
    let mut phrases = Vec::new();
    let mut per_doc = BTreeMap::new();
    for d in kept.documents() {
        let goals = &by_id[d.id.as_str()].goals;
        for p in goals {
            if seen.insert(p.clone()) {
                phrases.push(p.clone());
            }
        }
        per_doc.insert(d.id.clone(), goals.clone());
    }
    Ok((kept, GoalSet { phrases, per_doc }))
}

/// Clusters the phrase embeddings of `phrases` into `k` groups whose
/// centroids become the goal matrix.
pub fn build_goal_matrix(phrases: &[String], k: usize, embedder: &dyn Embedder, seed: u64) -> Result<GoalMatrix> {
    if phrases.len() < k {
        return Err(Error::domain(format!(
            "only {} distinct goal phrases for K={k}; choose K <= {}",
            phrases.len(),
            phrases.len()
        )));
    }
    let embs = embed_phrases(phrases, embedder)?;
    let clusters = kmeans(embs.view(), k, seed)?;
    GoalMatrix::from_clusters(embs.view(), clusters.assignments, phrases.to_vec(), k)
}

pub fn embed_phrases(phrases: &[String], embedder: &dyn Embedder) -> Result<Array2<f64>> {
    let mut embs = Array2::<f64>::zeros((phrases.len(), embedder.dim()));
    for (i, p) in phrases.iter().enumerate() {
        embs.row_mut(i).assign(&embed_phrase(embedder, p)?);
    }
    Ok(embs)
}

/// Fixed per-document inputs to training: both augmentations pooled.
#[derive(Debug, Clone, PartialEq)]
pub struct PairRepresentation {
    pub doc_id: String,
    pub goal_pooled: [Array1<f64>; 2],
    pub mean_pooled: [Array1<f64>; 2],
}

/// Embeds both augmentations and pools them against the document's own goals.
pub fn represent_pair(pair: &AugmentedPair, goals: &[String], embedder: &dyn Embedder) -> Result<PairRepresentation> {
    if goals.is_empty() {
        return Err(Error::validation(format!("document {:?} has no goal phrases", pair.doc_id)));
    }
    let goal_embs = embed_phrases(goals, embedder)?;
    let goal_views: Vec<_> = goal_embs.rows().into_iter().collect();
    let ctx = |e: Error| match e {
        Error::Domain(m) => Error::Domain(format!("document {:?}: {m}", pair.doc_id)),
        other => other,
    };
    let a = goal_attention_pool(embed_tokens(embedder, &pair.tokens_a).map_err(ctx)?.view(), &goal_views)?;
    let b = goal_attention_pool(embed_tokens(embedder, &pair.tokens_b).map_err(ctx)?.view(), &goal_views)?;
    Ok(PairRepresentation {
        doc_id: pair.doc_id.clone(),
        goal_pooled: [a.goal_pooled, b.goal_pooled],
        mean_pooled: [a.mean_pooled, b.mean_pooled],
    })
}

/// Stacks the representations as `[a_1..a_M, b_1..b_M]` and precomputes the
/// goal distributions and negative mask.
pub fn batch_from_representations(reps: &[&PairRepresentation], goals: &GoalMatrix, delta: f64) -> Result<BatchContext> {
    let m = reps.len();
    let h = goals.dim();
    let mut gp = Array2::<f64>::zeros((2 * m, h));
    let mut mp = Array2::<f64>::zeros((2 * m, h));
    for (i, r) in reps.iter().enumerate() {
        for side in 0..2 {
            gp.row_mut(side * m + i).assign(&r.goal_pooled[side]);
            mp.row_mut(side * m + i).assign(&r.mean_pooled[side]);
        }
    }
    BatchContext::new(gp, mp, goals, delta)
}

pub fn prepare_batch(
    doc_ids: &[&str],
    pairs: &BTreeMap<String, AugmentedPair>,
    goal_set: &GoalSet,
    embedder: &dyn Embedder,
    goals: &GoalMatrix,
    delta: f64,
) -> Result<BatchContext> {
    let mut reps = Vec::with_capacity(doc_ids.len());
    for id in doc_ids {
        let pair = pairs
            .get(*id)
            .ok_or_else(|| Error::validation(format!("no augmentation for document {id:?}")))?;
        let own = goal_set
            .per_doc
            .get(*id)
            .ok_or_else(|| Error::validation(format!("no goals for document {id:?}")))?;
        reps.push(represent_pair(pair, own, embedder)?);
    }
    let refs: Vec<_> = reps.iter().collect();
    batch_from_representations(&refs, goals, delta)
}

/// Splits `n` items into `ceil(n / m)` batches whose sizes differ by at most
/// one, dropping any batch smaller than 2.
pub fn batch_sizes(n: usize, m: usize) -> Vec<usize> {
    if n == 0 || m == 0 {
        return Vec::new();
    }
    let count = n.div_ceil(m);
    let base = n / count;
    let extra = n % count;
    (0..count)
        .map(|i| base + usize::from(i < extra))
        .filter(|&s| s >= 2)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub total: f64,
    pub contrastive: f64,
    pub prior_match: f64,
    pub ot: f64,
    pub transport_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub steps: Vec<StepRecord>,
    pub epochs: usize,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn totals(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.total).collect()
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_digest: String,
    pub seed: u64,
    pub steps: usize,
    pub topics: TopicMatrix,
    pub goals: GoalMatrix,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    version: u32,
    k: usize,
    h: usize,
    config_digest: String,
    seed: u64,
    steps: usize,
    et_sha256: String,
    eg_sha256: String,
    assignments: Vec<usize>,
    candidates: Vec<String>,
}

fn f32_blob(m: &Array2<f64>) -> Vec<u8> {
    m.iter().flat_map(|&x| (x as f32).to_le_bytes()).collect()
}

fn from_f32_blob(bytes: &[u8], k: usize, h: usize) -> Array2<f64> {
    let v = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Array2::from_shape_vec((k, h), v).expect("blob length checked")
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let et = f32_blob(self.topics.values());
        let eg = f32_blob(self.goals.centroids());
        let manifest = Manifest {
            version: CHECKPOINT_VERSION,
            k: self.topics.k(),
            h: self.topics.dim(),
            config_digest: self.config_digest.clone(),
            seed: self.seed,
            steps: self.steps,
            et_sha256: hex::encode(Sha256::digest(&et)),
            eg_sha256: hex::encode(Sha256::digest(&eg)),
            assignments: self.goals.assignments().to_vec(),
            candidates: self.goals.candidates().to_vec(),
        };
        let mut out = serde_json::to_vec(&manifest).expect("manifest serializes");
        out.push(b'\n');
        out.extend_from_slice(&et);
        out.extend_from_slice(&eg);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Corruption("checkpoint has no manifest line".into()))?;
        let manifest: Manifest = serde_json::from_slice(&bytes[..nl])
            .map_err(|e| Error::Corruption(format!("checkpoint manifest: {e}")))?;
        if manifest.version != CHECKPOINT_VERSION {
            return Err(Error::Corruption(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                manifest.version
            )));
        }
        let blob_len = manifest
            .k
            .checked_mul(manifest.h)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Corruption("checkpoint dimensions overflow".into()))?;
        let body = &bytes[nl + 1..];
        if body.len() != 2 * blob_len {
            return Err(Error::Corruption(format!(
                "checkpoint body is {} bytes, expected {}",
                body.len(),
                2 * blob_len
            )));
        }
        let (et, eg) = body.split_at(blob_len);
        if hex::encode(Sha256::digest(et)) != manifest.et_sha256 {
            return Err(Error::Corruption("topic matrix digest mismatch".into()));
        }
        if hex::encode(Sha256::digest(eg)) != manifest.eg_sha256 {
            return Err(Error::Corruption("goal matrix digest mismatch".into()));
        }
        let corrupt = |e: Error| Error::Corruption(e.to_string());
        let topics = TopicMatrix::from_array(from_f32_blob(et, manifest.k, manifest.h)).map_err(corrupt)?;
        let goals = GoalMatrix::new(
            from_f32_blob(eg, manifest.k, manifest.h),
            manifest.assignments,
            manifest.candidates,
        )
        .map_err(corrupt)?;
        Ok(Checkpoint {
            config_digest: manifest.config_digest,
            seed: manifest.seed,
            steps: manifest.steps,
            topics,
            goals,
        })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    crate::providers::write_atomic(path.as_ref(), &ckpt.to_bytes())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
        _ => Error::io(path, e),
    })?;
    Checkpoint::from_bytes(&bytes)
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub checkpoint: Checkpoint,
    pub history: TrainHistory,
}

/// Builds the goal set and goal matrix, then optimizes the topic matrix.
pub fn train(
    corpus: &Corpus,
    doc_goals: &[DocGoals],
    pairs: &[AugmentedPair],
    config: &TrainConfig,
    embedder: &dyn Embedder,
) -> Result<TrainOutput> {
    config.validate()?;
    let (kept, goal_set) = build_goal_set(corpus, doc_goals)?;
    if kept.is_empty() {
        return Err(Error::validation("every document was tagged irrelevant; nothing to train on"));
    }
    let goals = build_goal_matrix(&goal_set.phrases, config.k, embedder, config.seed)?;
    train_with_goal_matrix(&kept, &goal_set, pairs, goals, config, embedder)
}

/// Optimizes the topic matrix against an already clustered goal matrix.
pub fn train_with_goal_matrix(
    corpus: &Corpus,
    goal_set: &GoalSet,
    pairs: &[AugmentedPair],
    goals: GoalMatrix,
    config: &TrainConfig,
    embedder: &dyn Embedder,
) -> Result<TrainOutput> {
    config.validate()?;
    if goals.k() != config.k {
        return Err(Error::validation(format!(
            "goal matrix has {} clusters but K={}",
            goals.k(),
            config.k
        )));
    }
    if goals.dim() != embedder.dim() {
        return Err(Error::validation(format!(
            "goal matrix dimension {} does not match embedder dimension {}",
            goals.dim(),
            embedder.dim()
        )));
    }
    let by_id: BTreeMap<&str, &AugmentedPair> = pairs.iter().map(|p| (p.doc_id.as_str(), p)).collect();
    let mut reps = Vec::new();
    for d in corpus.documents() {
        let Some(pair) = by_id.get(d.id.as_str()) else {
            log::warn!("document {:?} has no augmentation pair; skipped", d.id);
            continue;
        };
        let own = goal_set
            .per_doc
            .get(&d.id)
            .ok_or_else(|| Error::validation(format!("no goals for document {:?}", d.id)))?;
        reps.push(represent_pair(pair, own, embedder)?);
    }
    if reps.len() < 2 {
        return Err(Error::validation(format!(
            "training needs at least 2 documents with augmentations, found {}",
            reps.len()
        )));
    }

    let mut topics = TopicMatrix::random(config.k, embedder.dim(), config.seed)?;
    let hyper = config.hyper();
    let mut adam = Adam::new(
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
        config.k * embedder.dim(),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let sizes = batch_sizes(reps.len(), config.batch_size);
    let mut order: Vec<usize> = (0..reps.len()).collect();
    let mut history = TrainHistory::default();
    let mut best = f64::INFINITY;
    let mut stale = 0;
    let mut step = 0;

    'epochs: for epoch in 0.. {
        if config.max_steps.is_none() && epoch >= config.epochs {
            break;
        }
        order.shuffle(&mut rng);
        let mut epoch_sum = 0.0;
        let mut start = 0;
        for &size in &sizes {
            if config.max_steps.is_some_and(|max| step >= max) {
                break 'epochs;
            }
            let members: Vec<&PairRepresentation> = order[start..start + size].iter().map(|&i| &reps[i]).collect();
            start += size;
            let batch = batch_from_representations(&members, &goals, config.delta)?;
            let lb = total_loss_and_grad(&topics, &goals, &batch, &hyper, &mut rng).map_err(|e| match e {
                Error::NonFinite(m) => Error::NonFinite(format!("step {step}, epoch {epoch}: {m}")),
                other => other,
            })?;
            adam.step(topics.params_mut(), lb.grad_et.as_slice().expect("contiguous gradient"))?;
            topics.validate()?;
            history.steps.push(StepRecord {
                step,
                epoch,
                total: lb.total,
                contrastive: lb.contrastive,
                prior_match: lb.prior_match,
                ot: lb.ot,
                transport_cost: lb.transport_cost,
            });
            log::debug!("step {step} epoch {epoch} loss {:.6}", lb.total);
            epoch_sum += lb.total;
            step += 1;
        }
        if sizes.is_empty() {
            break;
        }
        history.epochs = epoch + 1;
        let mean = epoch_sum / sizes.len() as f64;
        if config.max_steps.is_none() {
            if let Some(patience) = config.patience {
                if best - mean < config.min_improvement {
                    stale += 1;
                    if stale >= patience {
                        history.stopped_early = true;
                        break;
                    }
                } else {
                    stale = 0;
                }
                best = best.min(mean);
            }
        }
    }
    if history.steps.is_empty() {
        return Err(Error::validation("no training step ran (batches smaller than 2 are dropped)"));
    }

    let mut values = align_topics_to_goals(&topics, &goals)?.into_inner();
    crate::numeric::round_to_f32(&mut values);
    Ok(TrainOutput {
        checkpoint: Checkpoint {
            config_digest: config.digest(),
            seed: config.seed,
            steps: step,
            topics: TopicMatrix::from_array(values)?,
            goals,
        },
        history,
    })
}
