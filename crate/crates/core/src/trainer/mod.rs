//! Training loop: virtual step, meta update of the contribution network and
//! actual Adam step, repeated over minibatches.

mod data;
mod step;

pub use data::{
    link_split, minibatch_sampler, node_split, prepare_labels, prepare_structure, proportional_sizes,
    sample_negative, select_metapaths, training_adjacencies, LinkSplit, MinibatchSampler, NodeSplit, Pair,
    PrimarySplit, SplitData, TrainingData, Which,
};
pub use step::{
    actual_step, joint_gradients, joint_loss, meta_update_lambda, virtual_step, Adam, AdamConfig, JointLoss,
    MetaTarget, MetaUpdate, PretextBatch, PretextTrace, PrimaryBatch, StepBatch, VirtualStep, Weighting,
};

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::metrics::{argmax_rows, auc, macro_f1, micro_f1};
use crate::model::{link_score, node_logits, Encoder, ModelDims, ModelState, PretextMode};
use crate::pseudolabel::{JumpLabel, PairSamplerConfig, DEFAULT_J_MAX, MAX_J_MAX};
use crate::rng::{derive_seed, rng_for, stream};
use crate::{Error, Matrix, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Link,
    Node,
}

/// Objective used to update the contribution network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetaObjective {
    /// Primary-task loss on validation minibatches at the look-ahead weights.
    ValidationPrimary,
    /// Weighted pretext loss on a separate pretext minibatch at the
    /// look-ahead weights.
    PretextLookahead,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Inner (virtual step) and Adam learning rate α.
    pub lr: f64,
    /// Contribution-network learning rate β.
    pub meta_lr: f64,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub val_batch_size: usize,
    /// Pretext pairs per step, shared across metapaths.
    pub pretext_batch_size: usize,
    pub epochs: usize,
    pub train_frac: f64,
    pub val_frac: f64,
    pub seed: u64,
    pub task: TaskKind,
    pub pretext_mode: PretextMode,
    pub j_max: u8,
    /// Use the first `k` metapaths; `None` uses all.
    pub metapath_count: Option<usize>,
    pub dims: ModelDims,
    pub pair_sampler: PairSamplerConfig,
    /// Primary task only: no pretext heads, no meta step.
    pub vanilla: bool,
    pub meta_objective: MetaObjective,
    /// Freeze every contribution weight at this value and skip the meta step.
    pub fixed_contribution: Option<f64>,
    /// Largest target-node count accepted for the dense aggregation matrix.
    pub dense_cap: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.001,
            meta_lr: 0.0001,
            weight_decay: 0.0001,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 256,
            val_batch_size: 256,
            pretext_batch_size: 256,
            epochs: 50,
            train_frac: 0.4,
            val_frac: 0.2,
            seed: 0,
            task: TaskKind::Link,
            pretext_mode: PretextMode::Regression,
            j_max: DEFAULT_J_MAX,
            metapath_count: None,
            dims: ModelDims::default(),
            pair_sampler: PairSamplerConfig::default(),
            vanilla: false,
            meta_objective: MetaObjective::ValidationPrimary,
            fixed_contribution: None,
            dense_cap: 4096,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(self.meta_lr > 0.0 && self.meta_lr.is_finite()) {
            return bad("meta learning rate must be positive");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight decay must be non-negative");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || self.adam_eps <= 0.0 {
            return bad("adam betas must lie in [0, 1) and epsilon must be positive");
        }
        if self.batch_size == 0 || self.val_batch_size == 0 || self.pretext_batch_size == 0 {
            return bad("batch sizes must be at least 1");
        }
        if !(self.train_frac > 0.0 && self.val_frac > 0.0 && self.train_frac + self.val_frac <= 1.0) {
            return bad("train and validation fractions must be positive and sum to at most 1");
        }
        if self.j_max < 1 || self.j_max > MAX_J_MAX {
            return Err(Error::Config(format!("j_max must lie in 1..={MAX_J_MAX}, got {}", self.j_max)));
        }
        if self.metapath_count == Some(0) {
            return bad("metapath count must be at least 1");
        }
        if let Some(c) = self.fixed_contribution {
            if !c.is_finite() {
                return bad("fixed contribution must be finite");
            }
        }
        if self.dims.hidden == 0 || self.dims.embed == 0 || self.dims.primary_hidden == 0 || self.dims.contribution_hidden == 0 {
            return bad("layer widths must be positive");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean primary loss over the epoch's actual steps.
    pub loss_pri: f64,
    /// Mean contribution-weighted pretext loss.
    pub loss_pre_total: f64,
    /// AUC (link) or Macro-F1 (node) on the whole validation split.
    pub val_metric: f64,
    /// Mean contribution weight per metapath, ascending id.
    pub mean_con: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct History {
    pub metapaths: Vec<u32>,
    pub records: Vec<EpochRecord>,
}

impl History {
    pub fn peak_metric(&self) -> Option<f64> {
        self.records.iter().map(|r| r.val_metric).reduce(f64::max)
    }

    pub fn mean_metric(&self) -> Option<f64> {
        if self.records.is_empty() {
            return None;
        }
        Some(self.records.iter().map(|r| r.val_metric).sum::<f64>() / self.records.len() as f64)
    }
}

/// Scores on one evaluation split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Evaluation {
    Link { auc: f64 },
    Node { macro_f1: f64, micro_f1: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalSplit {
    Val,
    Test,
}

/// Scores the model on the validation or test split.
pub fn evaluate<E: Encoder>(state: &ModelState<E>, data: &TrainingData, split: EvalSplit) -> Result<Evaluation> {
    let z = state.encoder.embed(&data.inputs)?;
    evaluate_embeddings(state, &z, data, split)
}

fn evaluate_embeddings<E: Encoder>(state: &ModelState<E>, z: &Matrix, data: &TrainingData, split: EvalSplit) -> Result<Evaluation> {
    match &data.split.primary {
        PrimarySplit::Link { .. } => {
            let samples = match split {
                EvalSplit::Val => data.split.val_link_samples(),
                EvalSplit::Test => data.split.test_link_samples(),
            };
            let scores: Vec<f64> = samples.iter().map(|&((i, j), _)| link_score(z.row(i), z.row(j), &state.primary)).collect();
            let labels: Vec<bool> = samples.iter().map(|&(_, t)| t > 0.5).collect();
            Ok(Evaluation::Link { auc: auc(&scores, &labels)? })
        }
        PrimarySplit::Node(s) => {
            let nodes = match split {
                EvalSplit::Val => &s.val,
                EvalSplit::Test => &s.test,
            };
            let truth: Vec<usize> = nodes.iter().map(|&v| s.classes[v].expect("labeled")).collect();
            let rows: Vec<Vec<f64>> = nodes.iter().map(|&v| node_logits(z.row(v), &state.primary)).collect();
            let pred = if rows.is_empty() { Vec::new() } else { argmax_rows(&Matrix::from_rows(&rows)?) };
            Ok(Evaluation::Node {
                macro_f1: macro_f1(&truth, &pred, s.num_classes)?,
                micro_f1: micro_f1(&truth, &pred, s.num_classes)?,
            })
        }
    }
}

fn val_metric(e: Evaluation) -> f64 {
    match e {
        Evaluation::Link { auc } => auc,
        Evaluation::Node { macro_f1, .. } => macro_f1,
    }
}

/// Per-metapath pretext samplers splitting the pretext batch proportionally
/// to label counts.
struct PretextSampler {
    groups: Vec<(u32, Vec<JumpLabel>, Option<MinibatchSampler>)>,
}

impl PretextSampler {
    fn new(data: &TrainingData, total: usize, seed: u64, tag: u64) -> Result<Self> {
        let lists: Vec<Vec<JumpLabel>> =
            data.metapaths.iter().map(|&m| data.split.pretext.for_metapath(m).copied().collect()).collect();
        let sizes = proportional_sizes(total, &lists.iter().map(Vec::len).collect::<Vec<_>>());
        let mut groups = Vec::new();
        for (d, ((&m, list), size)) in data.metapaths.iter().zip(lists).zip(sizes).enumerate() {
            let sampler = if size == 0 {
                None
            } else {
                Some(MinibatchSampler::new(list.len(), size, derive_seed(seed, tag, d as u64))?)
            };
            groups.push((m, list, sampler));
        }
        Ok(PretextSampler { groups })
    }

    fn batch(&self, step: u64) -> Vec<PretextBatch> {
        self.groups
            .iter()
            .map(|(m, list, sampler)| {
                let idx = sampler.as_ref().map(|s| s.batch(step)).unwrap_or_default();
                PretextBatch {
                    metapath: *m,
                    pairs: idx.iter().map(|&k| (list[k].i, list[k].j)).collect(),
                    y: idx.iter().map(|&k| list[k].y).collect(),
                }
            })
            .collect()
    }
}

fn primary_batch(data: &TrainingData, link: &[(Pair, f64)], idx: &[usize], which: Which) -> PrimaryBatch {
    match &data.split.primary {
        PrimarySplit::Link { .. } => PrimaryBatch::Link {
            pairs: idx.iter().map(|&k| link[k].0).collect(),
            targets: idx.iter().map(|&k| link[k].1).collect(),
        },
        PrimarySplit::Node(s) => {
            let pool = match which {
                Which::Train => &s.train,
                Which::Val => &s.val,
            };
            let nodes: Vec<usize> = idx.iter().map(|&k| pool[k]).collect();
            let classes = nodes.iter().map(|&v| s.classes[v].expect("labeled")).collect();
            PrimaryBatch::Node { nodes, classes }
        }
    }
}

fn with_context(e: Error, epoch: usize, step: u64) -> Error {
    match e {
        Error::NonFinite { op } => Error::NonFinite { op: format!("{op} at epoch {epoch}, step {step}") },
        other => other,
    }
}

/// Freshly initialized model for `data` under `cfg`.
pub fn init_model(data: &TrainingData, cfg: &TrainConfig) -> Result<ModelState> {
    let dims = ModelDims { input: data.inputs.x.cols(), ..cfg.dims };
    ModelState::init(dims, data.task, &data.metapaths, cfg.pretext_mode, cfg.j_max, &mut rng_for(cfg.seed, stream::INIT, 0))
}

/// Trains from a fresh initialization.
pub fn train(data: &TrainingData, cfg: &TrainConfig) -> Result<(ModelState, History)> {
    train_with(data, cfg, |_, _| {})
}

/// Trains, calling `on_epoch` with the record and model after every epoch.
pub fn train_with(
    data: &TrainingData,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord, &ModelState),
) -> Result<(ModelState, History)> {
    cfg.validate()?;
    let mut state = init_model(data, cfg)?;
    let mut history = History { metapaths: data.metapaths.clone(), records: Vec::new() };
    if cfg.epochs == 0 {
        return Ok((state, history));
    }
    if data.split.population(Which::Train) == 0 {
        return Err(Error::Config("empty training split".into()));
    }
    if data.split.population(Which::Val) == 0 {
        return Err(Error::Config("empty validation split".into()));
    }
    let use_pretext = !cfg.vanilla && !data.split.pretext.is_empty();
    let pretext = PretextSampler::new(data, cfg.pretext_batch_size, cfg.seed, stream::PRETEXT_BATCH)?;
    let meta_pretext = PretextSampler::new(data, cfg.pretext_batch_size, cfg.seed, stream::META_PRETEXT_BATCH)?;
    let val_link = data.split.val_link_samples();
    let val_sampler = MinibatchSampler::new(
        data.split.population(Which::Val),
        cfg.val_batch_size,
        derive_seed(cfg.seed, stream::VAL_BATCH, 0),
    )?;
    let train_seed = derive_seed(cfg.seed, stream::PRIMARY_BATCH, 0);
    let mut adam = Adam::new(cfg.adam(), &state.trainable());
    let mut global: u64 = 0;
    let d = data.metapaths.len();

    for epoch in 0..cfg.epochs {
        let train_link = data.split.train_link_samples(cfg.seed, epoch as u64);
        let population = match &data.split.primary {
            PrimarySplit::Link { .. } => train_link.len(),
            PrimarySplit::Node(s) => s.train.len(),
        };
        let sampler = MinibatchSampler::new(population, cfg.batch_size, train_seed)?;
        let spe = sampler.steps_per_epoch();
        let (mut sum_pri, mut sum_pre) = (0.0, 0.0);
        let mut con_sum = vec![0.0; d];
        let mut con_n = vec![0usize; d];
        for s in 0..spe {
            let idx = sampler.batch(epoch as u64 * spe + s);
            let batch = StepBatch {
                primary: primary_batch(data, &train_link, &idx, Which::Train),
                pretext: if use_pretext { pretext.batch(global) } else { Vec::new() },
            };
            let losses = (|| -> Result<JointLoss> {
                if !use_pretext {
                    return actual_step(&mut state, &mut adam, &data.inputs, &batch, Weighting::Off);
                }
                if let Some(c) = cfg.fixed_contribution {
                    return actual_step(&mut state, &mut adam, &data.inputs, &batch, Weighting::Constant(c));
                }
                let vs = virtual_step(&state, &data.inputs, &batch, cfg.lr)?;
                if vs.trace.is_some() {
                    let val_batch;
                    let meta_batch;
                    let target = match cfg.meta_objective {
                        MetaObjective::ValidationPrimary => {
                            val_batch = primary_batch(data, &val_link, &val_sampler.batch(global), Which::Val);
                            MetaTarget::Validation(&val_batch)
                        }
                        MetaObjective::PretextLookahead => {
                            meta_batch = meta_pretext.batch(global);
                            MetaTarget::Pretext(&meta_batch)
                        }
                    };
                    let upd = meta_update_lambda(&state, &vs, &data.inputs, target, cfg.meta_lr)?;
                    state.contribution = upd.contribution;
                }
                let net = state.contribution.clone();
                actual_step(&mut state, &mut adam, &data.inputs, &batch, Weighting::Contribution(&net))
            })()
            .map_err(|e| with_context(e, epoch, s))?;
            sum_pri += losses.primary;
            sum_pre += losses.pretext_total();
            let active = batch.pretext.iter().filter(|pb| !pb.pairs.is_empty());
            for (pb, w) in active.zip(&losses.weights) {
                if let Some(k) = data.metapaths.iter().position(|&m| m == pb.metapath) {
                    con_sum[k] += w.iter().sum::<f64>();
                    con_n[k] += w.len();
                }
            }
            global += 1;
        }
        let metric = val_metric(evaluate(&state, data, EvalSplit::Val)?);
        let record = EpochRecord {
            epoch,
            loss_pri: sum_pri / spe as f64,
            loss_pre_total: sum_pre / spe as f64,
            val_metric: metric,
            mean_con: con_sum.iter().zip(&con_n).map(|(&s, &n)| if n == 0 { 0.0 } else { s / n as f64 }).collect(),
        };
        on_epoch(&record, &state);
        history.records.push(record);
    }
    Ok((state, history))
}
