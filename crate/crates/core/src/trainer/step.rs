//! Virtual step, contribution-network meta update and actual step.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::data::Pair;
use crate::autodiff::{Tape, Var};
use crate::error::arg_err;
use crate::matrix::{dot, Matrix};
use crate::model::{pair_features, Affine, ContributionNet, Encoder, GraphInputs, Mlp, ModelState, Parameters, PretextMode, Task};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum PrimaryBatch {
    Link { pairs: Vec<Pair>, targets: Vec<f64> },
    Node { nodes: Vec<usize>, classes: Vec<usize> },
}

impl PrimaryBatch {
    pub fn len(&self) -> usize {
        match self {
            PrimaryBatch::Link { pairs, .. } => pairs.len(),
            PrimaryBatch::Node { nodes, .. } => nodes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Labeled pairs of one metapath.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PretextBatch {
    pub metapath: u32,
    pub pairs: Vec<Pair>,
    pub y: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepBatch {
    pub primary: PrimaryBatch,
    pub pretext: Vec<PretextBatch>,
}

/// How pretext losses enter the joint objective.
#[derive(Debug, Clone, Copy)]
pub enum Weighting<'a> {
    /// Pretext terms dropped entirely.
    Off,
    /// Every sample weighted by the same constant.
    Constant(f64),
    /// `Con(φ; λ)` on detached pair features.
    Contribution(&'a ContributionNet),
}

/// Losses of one joint forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct JointLoss {
    pub primary: f64,
    /// `Con_i · ℓ_i` per sample, one vector per pretext batch.
    pub weighted: Vec<Vec<f64>>,
    /// Weights used for every pretext sample.
    pub weights: Vec<Vec<f64>>,
    /// `primary + Σ_d mean(weighted_d)`.
    pub total: f64,
}

impl JointLoss {
    pub fn pretext_total(&self) -> f64 {
        self.weighted.iter().filter(|w| !w.is_empty()).map(|w| w.iter().sum::<f64>() / w.len() as f64).sum()
    }
}

struct Forward {
    tape: Tape,
    trainable: Vec<Var>,
    z: Var,
    primary: Var,
    total: Var,
    weighted: Vec<Var>,
    weights: Vec<Vec<f64>>,
}

fn bind_all<E: Encoder>(tape: &mut Tape, state: &ModelState<E>) -> Result<Vec<Var>> {
    state.trainable().into_iter().map(|m| tape.param(m.clone())).collect()
}

fn primary_loss(tape: &mut Tape, z: Var, head: &[Var], batch: &PrimaryBatch) -> Result<Var> {
    match batch {
        PrimaryBatch::Link { pairs, targets } => {
            let (is, js): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
            let zi = tape.gather_rows(z, &is)?;
            let zj = tape.gather_rows(z, &js)?;
            let h = tape.mul(zi, zj)?;
            let o = Mlp::forward(tape, h, head)?;
            let p = tape.sigmoid(o)?;
            tape.bce(p, targets)
        }
        PrimaryBatch::Node { nodes, classes } => {
            let zi = tape.gather_rows(z, nodes)?;
            let o = Mlp::forward(tape, zi, head)?;
            tape.cross_entropy(o, classes)
        }
    }
}

/// Per-sample pretext loss (a column) for pair rows `zi`, `zj`.
fn pretext_per_sample(tape: &mut Tape, zi: Var, zj: Var, head: &[Var], mode: PretextMode, y: &[u8]) -> Result<Var> {
    pretext_head_and_loss(tape, zi, zj, head, mode, y).map(|(_, l)| l)
}

fn pretext_head_and_loss(
    tape: &mut Tape,
    zi: Var,
    zj: Var,
    head: &[Var],
    mode: PretextMode,
    y: &[u8],
) -> Result<(Var, Var)> {
    let d = tape.sub(zi, zj)?;
    let phi = tape.abs(d)?;
    let out = Affine::forward(tape, phi, head)?;
    let loss = match mode {
        PretextMode::Regression => {
            let t: Vec<f64> = y.iter().map(|&v| f64::from(v)).collect();
            let target = tape.constant(Matrix::column(&t))?;
            tape.squared_error(out, target)?
        }
        PretextMode::Classification => {
            let classes: Vec<usize> = y.iter().map(|&v| usize::from(v) - 1).collect();
            tape.cross_entropy_per_sample(out, &classes)?
        }
    };
    Ok((out, loss))
}

fn check_task<E: Encoder>(state: &ModelState<E>, batch: &PrimaryBatch) -> Result<()> {
    match (state.task, batch) {
        (Task::Link, PrimaryBatch::Link { .. }) | (Task::Node { .. }, PrimaryBatch::Node { .. }) => Ok(()),
        _ => Err(arg_err!("primary batch does not match the model task")),
    }
}

fn head_slice(trainable: &[Var], enc: usize, head: usize) -> &[Var] {
    let start = enc + 4 + 2 * head;
    &trainable[start..start + 2]
}

fn joint_forward<E: Encoder>(
    state: &ModelState<E>,
    inputs: &GraphInputs,
    batch: &StepBatch,
    weighting: Weighting<'_>,
) -> Result<Forward> {
    check_task(state, &batch.primary)?;
    let mut tape = Tape::new();
    let trainable = bind_all(&mut tape, state)?;
    let enc_count = state.encoder.params().len();
    let z = state.encoder.forward(&mut tape, inputs, &trainable[..enc_count])?;
    let primary = primary_loss(&mut tape, z, &trainable[enc_count..enc_count + 4], &batch.primary)?;
    let mut total = primary;
    let mut weighted = Vec::new();
    let mut weights = Vec::new();
    if !matches!(weighting, Weighting::Off) {
        for pb in batch.pretext.iter().filter(|pb| !pb.pairs.is_empty()) {
            let h = state
                .pretext_index(pb.metapath)
                .ok_or_else(|| arg_err!("no pretext head for metapath {}", pb.metapath))?;
            let w = match weighting {
                Weighting::Constant(c) => vec![c; pb.pairs.len()],
                Weighting::Contribution(net) => net.weights(&pair_features(tape.value(z), &pb.pairs))?,
                Weighting::Off => unreachable!(),
            };
            let (is, js): (Vec<usize>, Vec<usize>) = pb.pairs.iter().copied().unzip();
            let zi = tape.gather_rows(z, &is)?;
            let zj = tape.gather_rows(z, &js)?;
            let l = pretext_per_sample(&mut tape, zi, zj, head_slice(&trainable, enc_count, h), state.pretext_mode, &pb.y)?;
            let wc = tape.constant(Matrix::column(&w))?;
            let wl = tape.mul(l, wc)?;
            let m = tape.mean(wl)?;
            total = tape.add(total, m)?;
            weighted.push(wl);
            weights.push(w);
        }
    }
    Ok(Forward { tape, trainable, z, primary, total, weighted, weights })
}

impl Forward {
    fn losses(&self) -> JointLoss {
        JointLoss {
            primary: self.tape.scalar(self.primary),
            weighted: self.weighted.iter().map(|&v| self.tape.value(v).as_slice().to_vec()).collect(),
            weights: self.weights.clone(),
            total: self.tape.scalar(self.total),
        }
    }

    fn gradients<E: Encoder>(&mut self, state: &ModelState<E>) -> Result<Vec<Matrix>> {
        self.tape.backward(self.total)?;
        let params = state.trainable();
        let mut out = Vec::with_capacity(params.len());
        for (k, (&v, p)) in self.trainable.iter().zip(params).enumerate() {
            let g = self.tape.grad(v).cloned().unwrap_or_else(|| Matrix::zeros(p.rows(), p.cols()));
            if !g.is_finite() {
                return Err(Error::NonFinite { op: format!("gradient of the {}", state.group_name(k)) });
            }
            out.push(g);
        }
        Ok(out)
    }
}

/// Primary loss and weighted per-sample pretext losses at the current state.
pub fn joint_loss<E: Encoder>(
    state: &ModelState<E>,
    inputs: &GraphInputs,
    batch: &StepBatch,
    weighting: Weighting<'_>,
) -> Result<JointLoss> {
    Ok(joint_forward(state, inputs, batch, weighting)?.losses())
}

/// Gradients of the joint loss with respect to every trainable tensor, in
/// [`ModelState::trainable`] order.
pub fn joint_gradients<E: Encoder>(
    state: &ModelState<E>,
    inputs: &GraphInputs,
    batch: &StepBatch,
    weighting: Weighting<'_>,
) -> Result<(JointLoss, Vec<Matrix>)> {
    let mut f = joint_forward(state, inputs, batch, weighting)?;
    let g = f.gradients(state)?;
    Ok((f.losses(), g))
}

/// Per-sample pretext gradients retained from the virtual step.
#[derive(Debug, Clone, PartialEq)]
pub struct PretextTrace {
    pub metapath: u32,
    pub pairs: Vec<Pair>,
    /// Detached `|z_i − z_j|` at the pre-step weights.
    pub phi: Matrix,
    /// `∂ℓ_r/∂z_i` and `∂ℓ_r/∂z_j` for every sample row `r`.
    pub dzi: Matrix,
    pub dzj: Matrix,
    /// `∂ℓ_r/∂(head output)_r`; with `phi` it gives the head gradient.
    pub dout: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VirtualStep<E: Encoder> {
    /// Look-ahead weights `ŵ` (encoder and heads; λ unchanged).
    pub w_hat: ModelState<E>,
    pub losses: JointLoss,
    pub alpha: f64,
    /// `None` when no pretext batch took part.
    pub trace: Option<Vec<PretextTrace>>,
}

fn pretext_traces<E: Encoder>(state: &ModelState<E>, z: &Matrix, pretext: &[PretextBatch]) -> Result<Vec<PretextTrace>> {
    let mut out = Vec::new();
    for pb in pretext.iter().filter(|pb| !pb.pairs.is_empty()) {
        let h = state
            .pretext_index(pb.metapath)
            .ok_or_else(|| arg_err!("no pretext head for metapath {}", pb.metapath))?;
        let (is, js): (Vec<usize>, Vec<usize>) = pb.pairs.iter().copied().unzip();
        let mut tape = Tape::new();
        let zi = tape.leaf(z.select_rows(&is), true)?;
        let zj = tape.leaf(z.select_rows(&js), true)?;
        let head: Vec<Var> = state.pretext[h].affine.params().into_iter().map(|m| tape.constant(m.clone())).collect::<Result<_>>()?;
        let (o, l) = pretext_head_and_loss(&mut tape, zi, zj, &head, state.pretext_mode, &pb.y)?;
        let s = tape.sum(l)?;
        tape.backward(s)?;
        let zero = Matrix::zeros(is.len(), z.cols());
        let o_shape = tape.value(o).shape();
        out.push(PretextTrace {
            metapath: pb.metapath,
            pairs: pb.pairs.clone(),
            phi: pair_features(z, &pb.pairs),
            dzi: tape.grad(zi).cloned().unwrap_or_else(|| zero.clone()),
            dzj: tape.grad(zj).cloned().unwrap_or(zero),
            dout: tape.grad(o).cloned().unwrap_or_else(|| Matrix::zeros(o_shape.0, o_shape.1)),
        });
    }
    Ok(out)
}

fn apply_sgd<E: Encoder>(state: &ModelState<E>, grads: &[Matrix], lr: f64) -> ModelState<E> {
    let mut next = state.clone();
    for (p, g) in next.trainable_mut().into_iter().zip(grads) {
        p.axpy(-lr, g);
    }
    next
}

/// One plain gradient step of size `alpha` on the contribution-weighted
/// joint loss, with `Con` held constant.
pub fn virtual_step<E: Encoder>(
    state: &ModelState<E>,
    inputs: &GraphInputs,
    batch: &StepBatch,
    alpha: f64,
) -> Result<VirtualStep<E>> {
    let mut f = joint_forward(state, inputs, batch, Weighting::Contribution(&state.contribution))?;
    let grads = f.gradients(state)?;
    let z = f.tape.value(f.z).clone();
    let traces = pretext_traces(state, &z, &batch.pretext)?;
    Ok(VirtualStep {
        w_hat: apply_sgd(state, &grads, alpha),
        losses: f.losses(),
        alpha,
        trace: if traces.is_empty() { None } else { Some(traces) },
    })
}

/// The objective whose look-ahead value drives the λ update.
#[derive(Debug, Clone, Copy)]
pub enum MetaTarget<'a> {
    /// Primary loss on a validation minibatch.
    Validation(&'a PrimaryBatch),
    /// Contribution-weighted pretext loss on a separate pretext batch; adds
    /// the direct dependence on λ. Here φ stays attached to `ŵ`.
    Pretext(&'a [PretextBatch]),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetaUpdate {
    pub contribution: ContributionNet,
    /// `∂L/∂λ` in parameter order.
    pub grad: Vec<Matrix>,
    /// Meta objective evaluated at `ŵ`.
    pub objective: f64,
}

/// `∂L(ŵ)/∂Con_r = −α (∇_w L(ŵ))ᵀ ∇_w ℓ_r / |B_d|` for every traced sample.
/// `v_heads[d]` is the objective's gradient for the pretext head of trace
/// `d`, when it has one.
fn indirect_coefficients<E: Encoder>(
    state: &ModelState<E>,
    inputs: &GraphInputs,
    traces: &[PretextTrace],
    v_enc: &[Matrix],
    v_heads: &[Option<Affine>],
    alpha: f64,
) -> Result<Vec<Vec<f64>>> {
    let (_, zdot) = state.encoder.jvp(inputs, v_enc)?;
    Ok(traces
        .iter()
        .zip(v_heads)
        .map(|(t, vh)| {
            let nb = t.pairs.len() as f64;
            t.pairs
                .iter()
                .enumerate()
                .map(|(r, &(i, j))| {
                    let mut c = dot(t.dzi.row(r), zdot.row(i)) + dot(t.dzj.row(r), zdot.row(j));
                    if let Some(v) = vh {
                        c += dot(t.dout.row(r), &v.apply(t.phi.row(r)));
                    }
                    -alpha * c / nb
                })
                .collect()
        })
        .collect())
}

/// Gradient of `Σ_r coef_r · Con(φ_r; λ)` with respect to λ.
fn contribution_gradient(net: &ContributionNet, terms: &[(&Matrix, &[f64])]) -> Result<Vec<Matrix>> {
    let mut tape = Tape::new();
    let params = net.mlp.bind(&mut tape)?;
    let mut total: Option<Var> = None;
    for &(phi, coef) in terms {
        if coef.is_empty() {
            continue;
        }
        let x = tape.constant(phi.clone())?;
        let con = ContributionNet::forward(&mut tape, x, &params)?;
        let c = tape.constant(Matrix::column(coef))?;
        let wc = tape.mul(con, c)?;
        let s = tape.sum(wc)?;
        total = Some(match total {
            Some(t) => tape.add(t, s)?,
            None => s,
        });
    }
    let shapes = net.mlp.params();
    let Some(total) = total else {
        return Ok(shapes.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect());
    };
    tape.backward(total)?;
    params
        .iter()
        .zip(shapes)
        .map(|(&v, p)| {
            let g = tape.grad(v).cloned().unwrap_or_else(|| Matrix::zeros(p.rows(), p.cols()));
            if g.is_finite() {
                Ok(g)
            } else {
                Err(Error::NonFinite { op: "gradient of the contribution network".into() })
            }
        })
        .collect()
}

/// Meta update of the contribution network: differentiates the look-ahead
/// objective `L(ŵ(λ))` through the virtual step and takes one SGD step of
/// size `beta` on λ. `state` must hold the pre-step weights `w`.
pub fn meta_update_lambda<E: Encoder>(
    state: &ModelState<E>,
    virtual_step: &VirtualStep<E>,
    inputs: &GraphInputs,
    target: MetaTarget<'_>,
    beta: f64,
) -> Result<MetaUpdate> {
    let traces = virtual_step
        .trace
        .as_ref()
        .ok_or_else(|| Error::State("meta update needs the pretext trace of a virtual step".into()))?;
    let w_hat = &virtual_step.w_hat;
    let enc_count = w_hat.encoder.params().len();
    let mut tape = Tape::new();
    let trainable = bind_all(&mut tape, w_hat)?;
    let z = w_hat.encoder.forward(&mut tape, inputs, &trainable[..enc_count])?;
    let mut direct: Vec<(Matrix, Vec<f64>)> = Vec::new();
    let objective = match target {
        MetaTarget::Validation(vb) => {
            if vb.is_empty() {
                return Err(Error::Config("empty validation batch for the meta update".into()));
            }
            check_task(w_hat, vb)?;
            primary_loss(&mut tape, z, &trainable[enc_count..enc_count + 4], vb)?
        }
        MetaTarget::Pretext(batches) => {
            let lambda: Vec<Var> =
                w_hat.contribution.mlp.params().into_iter().map(|m| tape.constant(m.clone())).collect::<Result<_>>()?;
            let mut total: Option<Var> = None;
            for pb in batches.iter().filter(|pb| !pb.pairs.is_empty()) {
                let h = w_hat
                    .pretext_index(pb.metapath)
                    .ok_or_else(|| arg_err!("no pretext head for metapath {}", pb.metapath))?;
                let (is, js): (Vec<usize>, Vec<usize>) = pb.pairs.iter().copied().unzip();
                let zi = tape.gather_rows(z, &is)?;
                let zj = tape.gather_rows(z, &js)?;
                let l = pretext_per_sample(&mut tape, zi, zj, head_slice(&trainable, enc_count, h), w_hat.pretext_mode, &pb.y)?;
                let diff = tape.sub(zi, zj)?;
                let phi = tape.abs(diff)?;
                let con = ContributionNet::forward(&mut tape, phi, &lambda)?;
                let nb = pb.pairs.len() as f64;
                direct.push((tape.value(phi).clone(), tape.value(l).as_slice().iter().map(|v| v / nb).collect()));
                let wl = tape.mul(l, con)?;
                let m = tape.mean(wl)?;
                total = Some(match total {
                    Some(t) => tape.add(t, m)?,
                    None => m,
                });
            }
            total.ok_or_else(|| Error::Config("empty pretext meta batch".into()))?
        }
    };
    let value = tape.scalar(objective);
    if !value.is_finite() {
        return Err(Error::NonFinite { op: "meta objective".into() });
    }
    tape.backward(objective)?;
    let v_enc: Vec<Matrix> = trainable[..enc_count]
        .iter()
        .zip(w_hat.encoder.params())
        .map(|(&v, p)| tape.grad(v).cloned().unwrap_or_else(|| Matrix::zeros(p.rows(), p.cols())))
        .collect();
    let mut v_heads = Vec::with_capacity(traces.len());
    for t in traces {
        let h = w_hat
            .pretext_index(t.metapath)
            .ok_or_else(|| arg_err!("no pretext head for metapath {}", t.metapath))?;
        let vars = head_slice(&trainable, enc_count, h);
        v_heads.push(match (tape.grad(vars[0]), tape.grad(vars[1])) {
            (Some(w), Some(b)) => Some(Affine { weight: w.clone(), bias: b.clone() }),
            _ => None,
        });
    }
    let coefs = indirect_coefficients(state, inputs, traces, &v_enc, &v_heads, virtual_step.alpha)?;
    let mut terms: Vec<(&Matrix, &[f64])> = traces.iter().zip(&coefs).map(|(t, c)| (&t.phi, c.as_slice())).collect();
    terms.extend(direct.iter().map(|(p, c)| (p, c.as_slice())));
    let grad = contribution_gradient(&state.contribution, &terms)?;
    let mut contribution = state.contribution.clone();
    for (p, g) in contribution.mlp.params_mut().into_iter().zip(&grad) {
        p.axpy(-beta, g);
    }
    Ok(MetaUpdate { contribution, grad, objective: value })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 coefficient added to every gradient.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 0.001, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0001 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub t: u64,
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &[&Matrix]) -> Self {
        let zeros: Vec<Matrix> = params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
        Adam { config, t: 0, m: zeros.clone(), v: zeros }
    }

    pub fn step(&mut self, params: Vec<&mut Matrix>, grads: &[Matrix]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(arg_err!("adam: {} params, {} grads, {} moments", params.len(), grads.len(), self.m.len()));
        }
        let c = self.config;
        self.t += 1;
        let t = self.t as f64;
        let bc1 = 1.0 - libm::pow(c.beta1, t);
        let bc2 = 1.0 - libm::pow(c.beta2, t);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            if p.shape() != g.shape() {
                return Err(arg_err!("adam: parameter {:?} vs gradient {:?}", p.shape(), g.shape()));
            }
            let pv = p.as_mut_slice();
            for (((w, &gr), mk), vk) in pv.iter_mut().zip(g.as_slice()).zip(m.as_mut_slice()).zip(v.as_mut_slice()) {
                let gr = gr + c.weight_decay * *w;
                *mk = c.beta1 * *mk + (1.0 - c.beta1) * gr;
                *vk = c.beta2 * *vk + (1.0 - c.beta2) * gr * gr;
                let mh = *mk / bc1;
                let vh = *vk / bc2;
                *w -= c.lr * mh / (libm::sqrt(vh) + c.eps);
            }
        }
        Ok(())
    }
}

/// Adam step of encoder and heads on the joint loss with the given weighting.
pub fn actual_step<E: Encoder>(
    state: &mut ModelState<E>,
    adam: &mut Adam,
    inputs: &GraphInputs,
    batch: &StepBatch,
    weighting: Weighting<'_>,
) -> Result<JointLoss> {
    let (losses, grads) = joint_gradients(state, inputs, batch, weighting)?;
    if !losses.total.is_finite() {
        return Err(Error::NonFinite { op: "joint loss".into() });
    }
    adam.step(state.trainable_mut(), &grads)?;
    Ok(losses)
}
