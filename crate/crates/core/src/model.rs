//! GCN encoder, task heads and the contribution network.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng as _;

use crate::autodiff::{sigmoid, Tape, Var};
use crate::error::arg_err;
use crate::graph::NormAdj;
use crate::matrix::Matrix;
use crate::rng::Rng;
use crate::Result;

/// Glorot-uniform `rows × cols` matrix.
pub fn glorot(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    let bound = libm::sqrt(6.0 / (rows + cols) as f64);
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized")
}

/// Ordered access to the trainable matrices of a component.
pub trait Parameters {
    fn params(&self) -> Vec<&Matrix>;
    fn params_mut(&mut self) -> Vec<&mut Matrix>;

    fn param_count(&self) -> usize {
        self.params().iter().map(|m| m.len()).sum()
    }

    /// Records every parameter on `tape` as a gradient-requiring leaf.
    fn bind(&self, tape: &mut Tape) -> Result<Vec<Var>> {
        self.params().into_iter().map(|m| tape.param(m.clone())).collect()
    }
}

/// Node features with the normalized aggregation matrix, plus `Ã·X`, which
/// does not change during training.
#[derive(Debug, Clone)]
pub struct GraphInputs {
    pub x: Matrix,
    pub adj: Matrix,
    pub ax: Matrix,
}

impl GraphInputs {
    pub fn new(x: Matrix, adj: &NormAdj) -> Result<Self> {
        let ax = adj.matrix.matmul(&x)?;
        Ok(GraphInputs { x, adj: adj.matrix.clone(), ax })
    }

    pub fn n(&self) -> usize {
        self.x.rows()
    }
}

/// A node encoder `Z = h(Ã, X; w)` usable by the trainer.
pub trait Encoder: Parameters + Clone {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;

    /// Records the forward pass; `params` are this encoder's bound parameters
    /// in [`Parameters::params`] order.
    fn forward(&self, tape: &mut Tape, g: &GraphInputs, params: &[Var]) -> Result<Var>;

    /// Embeddings and their directional derivative along `tangent`
    /// (one matrix per parameter).
    fn jvp(&self, g: &GraphInputs, tangent: &[Matrix]) -> Result<(Matrix, Matrix)>;

    /// Embeddings without recording gradients.
    fn embed(&self, g: &GraphInputs) -> Result<Matrix> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.params().into_iter().map(|m| tape.constant(m.clone())).collect::<Result<_>>()?;
        let z = self.forward(&mut tape, g, &vars)?;
        Ok(tape.value(z).clone())
    }
}

/// Two-layer GCN weights: `w0` is d×h, `w1` is h×l.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnParams {
    pub w0: Matrix,
    pub w1: Matrix,
}

impl GcnParams {
    pub fn init(input: usize, hidden: usize, embed: usize, rng: &mut Rng) -> Self {
        GcnParams { w0: glorot(input, hidden, rng), w1: glorot(hidden, embed, rng) }
    }
}

impl Parameters for GcnParams {
    fn params(&self) -> Vec<&Matrix> {
        vec![&self.w0, &self.w1]
    }
    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.w0, &mut self.w1]
    }
}

impl Encoder for GcnParams {
    fn input_dim(&self) -> usize {
        self.w0.rows()
    }

    fn output_dim(&self) -> usize {
        self.w1.cols()
    }

    fn forward(&self, tape: &mut Tape, g: &GraphInputs, params: &[Var]) -> Result<Var> {
        let [w0, w1] = params else {
            return Err(arg_err!("GCN expects 2 parameter tensors, got {}", params.len()));
        };
        if g.x.cols() != self.input_dim() {
            return Err(arg_err!("features have {} columns, encoder expects {}", g.x.cols(), self.input_dim()));
        }
        let ax = tape.constant(g.ax.clone())?;
        let adj = tape.constant(g.adj.clone())?;
        let pre = tape.matmul(ax, *w0)?;
        let h1 = tape.relu(pre)?;
        let hw = tape.matmul(h1, *w1)?;
        tape.matmul(adj, hw)
    }

    fn jvp(&self, g: &GraphInputs, tangent: &[Matrix]) -> Result<(Matrix, Matrix)> {
        let [v0, v1] = tangent else {
            return Err(arg_err!("GCN tangent needs 2 matrices, got {}", tangent.len()));
        };
        let pre = g.ax.matmul(&self.w0)?;
        let h1 = pre.map(|v| if v > 0.0 { v } else { 0.0 });
        let z = g.adj.matmul(&h1.matmul(&self.w1)?)?;
        let dpre = g.ax.matmul(v0)?;
        let dh1 = dpre.zip_map(&pre, |d, p| if p > 0.0 { d } else { 0.0 });
        let mut inner = dh1.matmul(&self.w1)?;
        inner.axpy(1.0, &h1.matmul(v1)?);
        let dz = g.adj.matmul(&inner)?;
        Ok((z, dz))
    }
}

/// `Ã · relu(Ã · X · w0) · w1` computed directly.
pub fn gcn_forward(x: &Matrix, adj: &NormAdj, p: &GcnParams) -> Result<Matrix> {
    p.embed(&GraphInputs::new(x.clone(), adj)?)
}

/// `x·W + b` with `W` in×out and `b` 1×out.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl Affine {
    pub fn init(input: usize, output: usize, rng: &mut Rng) -> Self {
        Affine { weight: glorot(input, output, rng), bias: Matrix::zeros(1, output) }
    }

    pub fn forward(tape: &mut Tape, x: Var, params: &[Var]) -> Result<Var> {
        let [w, b] = params else {
            return Err(arg_err!("affine layer expects 2 parameter tensors"));
        };
        let xw = tape.matmul(x, *w)?;
        tape.add(xw, *b)
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let out = self.weight.cols();
        let mut y = self.bias.as_slice().to_vec();
        for (k, &xv) in x.iter().enumerate() {
            let row = self.weight.row(k);
            for o in 0..out {
                y[o] += xv * row[o];
            }
        }
        y
    }
}

impl Parameters for Affine {
    fn params(&self) -> Vec<&Matrix> {
        vec![&self.weight, &self.bias]
    }
    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Affine → relu → affine.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub hidden: Affine,
    pub output: Affine,
}

impl Mlp {
    pub fn init(input: usize, hidden: usize, output: usize, rng: &mut Rng) -> Self {
        Mlp { hidden: Affine::init(input, hidden, rng), output: Affine::init(hidden, output, rng) }
    }

    pub fn forward(tape: &mut Tape, x: Var, params: &[Var]) -> Result<Var> {
        if params.len() != 4 {
            return Err(arg_err!("MLP expects 4 parameter tensors, got {}", params.len()));
        }
        let h = Affine::forward(tape, x, &params[..2])?;
        let h = tape.relu(h)?;
        Affine::forward(tape, h, &params[2..])
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let h: Vec<f64> = self.hidden.apply(x).into_iter().map(|v| v.max(0.0)).collect();
        self.output.apply(&h)
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.output.weight.cols()
    }
}

impl Parameters for Mlp {
    fn params(&self) -> Vec<&Matrix> {
        let mut p = self.hidden.params();
        p.extend(self.output.params());
        p
    }
    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut p = self.hidden.params_mut();
        p.extend(self.output.params_mut());
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    /// Binary link prediction on target-node pairs.
    Link,
    /// Node classification with `classes` classes.
    Node { classes: usize },
}

/// How a pretext head maps `|z_i − z_j|` to a jump number.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PretextMode {
    /// One scalar, squared error against ŷ.
    Regression,
    /// `j_max` logits, cross-entropy against ŷ − 1.
    Classification,
}

/// Primary-task network on top of embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimaryHead {
    pub mlp: Mlp,
}

/// Jump-number predictor for one metapath.
#[derive(Debug, Clone, PartialEq)]
pub struct PretextHead {
    pub metapath: u32,
    pub affine: Affine,
}

/// Per-sample weight `Con(φ; λ) ∈ (0, 1)` for pretext losses.
#[derive(Debug, Clone, PartialEq)]
pub struct ContributionNet {
    pub mlp: Mlp,
}

impl ContributionNet {
    /// Records `sigmoid(mlp(φ))` for a batch of φ rows.
    pub fn forward(tape: &mut Tape, phi: Var, params: &[Var]) -> Result<Var> {
        let o = Mlp::forward(tape, phi, params)?;
        tape.sigmoid(o)
    }

    /// Weights for every row of `phi`, no gradient.
    pub fn weights(&self, phi: &Matrix) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.mlp.params().into_iter().map(|m| tape.constant(m.clone())).collect::<Result<_>>()?;
        let x = tape.constant(phi.clone())?;
        let w = Self::forward(&mut tape, x, &vars)?;
        Ok(tape.value(w).as_slice().to_vec())
    }
}

/// Dimensions of every network in a [`ModelState`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub input: usize,
    pub hidden: usize,
    pub embed: usize,
    pub primary_hidden: usize,
    pub contribution_hidden: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims { input: 0, hidden: 512, embed: 64, primary_hidden: 100, contribution_hidden: 1000 }
    }
}

/// All learnable state: encoder `w`, primary head θ₁, pretext heads θ₂ (one
/// per metapath, ascending id) and contribution network λ.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState<E: Encoder = GcnParams> {
    pub encoder: E,
    pub primary: PrimaryHead,
    pub pretext: Vec<PretextHead>,
    pub contribution: ContributionNet,
    pub task: Task,
    pub pretext_mode: PretextMode,
}

impl ModelState<GcnParams> {
    /// Glorot-initialized weights, zero biases.
    pub fn init(
        dims: ModelDims,
        task: Task,
        metapaths: &[u32],
        pretext_mode: PretextMode,
        j_max: u8,
        rng: &mut Rng,
    ) -> Result<Self> {
        if dims.input == 0 || dims.hidden == 0 || dims.embed == 0 {
            return Err(arg_err!("model dimensions must be positive: {dims:?}"));
        }
        let encoder = GcnParams::init(dims.input, dims.hidden, dims.embed, rng);
        let out = match task {
            Task::Link => 1,
            Task::Node { classes } if classes >= 2 => classes,
            Task::Node { classes } => return Err(arg_err!("node classification needs ≥ 2 classes, got {classes}")),
        };
        let primary = PrimaryHead { mlp: Mlp::init(dims.embed, dims.primary_hidden, out, rng) };
        let mut ids = metapaths.to_vec();
        ids.sort_unstable();
        ids.dedup();
        let pre_out = match pretext_mode {
            PretextMode::Regression => 1,
            PretextMode::Classification => j_max as usize,
        };
        let pretext = ids
            .into_iter()
            .map(|m| PretextHead { metapath: m, affine: Affine::init(dims.embed, pre_out, rng) })
            .collect();
        let contribution = ContributionNet { mlp: Mlp::init(dims.embed, dims.contribution_hidden, 1, rng) };
        Ok(ModelState { encoder, primary, pretext, contribution, task, pretext_mode })
    }
}

impl<E: Encoder> ModelState<E> {
    pub fn pretext_index(&self, metapath: u32) -> Option<usize> {
        self.pretext.iter().position(|h| h.metapath == metapath)
    }

    /// Encoder, primary-head and pretext-head parameters in checkpoint order.
    pub fn trainable(&self) -> Vec<&Matrix> {
        let mut p = self.encoder.params();
        p.extend(self.primary.mlp.params());
        for h in &self.pretext {
            p.extend(h.affine.params());
        }
        p
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut Matrix> {
        self.split_mut().0
    }

    fn split_mut(&mut self) -> (Vec<&mut Matrix>, Vec<&mut Matrix>) {
        let mut p = self.encoder.params_mut();
        p.extend(self.primary.mlp.params_mut());
        for h in &mut self.pretext {
            p.extend(h.affine.params_mut());
        }
        (p, self.contribution.mlp.params_mut())
    }

    /// Name of the parameter group owning trainable tensor `k`.
    pub fn group_name(&self, k: usize) -> String {
        let enc = self.encoder.params().len();
        if k < enc {
            return "encoder".into();
        }
        if k < enc + 4 {
            return "primary head".into();
        }
        let h = (k - enc - 4) / 2;
        match self.pretext.get(h) {
            Some(head) => format!("pretext head (metapath {})", head.metapath),
            None => "unknown".into(),
        }
    }

    /// Every tensor in checkpoint order: encoder, θ₁, θ₂ ascending, λ.
    pub fn all_tensors(&self) -> Vec<&Matrix> {
        let mut p = self.trainable();
        p.extend(self.contribution.mlp.params());
        p
    }

    pub fn all_tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let (mut p, lambda) = self.split_mut();
        p.extend(lambda);
        p
    }
}

/// `sigmoid(mlp(z_i ⊙ z_j))`.
pub fn link_score(zi: &[f64], zj: &[f64], head: &PrimaryHead) -> f64 {
    let h: Vec<f64> = zi.iter().zip(zj).map(|(a, b)| a * b).collect();
    sigmoid(head.mlp.apply(&h)[0])
}

/// Class probabilities `softmax(mlp(z_i))`.
pub fn node_logits(zi: &[f64], head: &PrimaryHead) -> Vec<f64> {
    let o = head.mlp.apply(zi);
    let m = Matrix::from_vec(1, o.len(), o).expect("row");
    crate::autodiff::row_softmax(&m).into_vec()
}

/// `affine(|z_i − z_j|)`; first output for the regression head.
pub fn pretext_predict(zi: &[f64], zj: &[f64], head: &PretextHead) -> f64 {
    let u: Vec<f64> = zi.iter().zip(zj).map(|(a, b)| libm::fabs(a - b)).collect();
    head.affine.apply(&u)[0]
}

/// `Con(φ; λ) = sigmoid(mlp(φ))`.
pub fn contribution(phi: &[f64], net: &ContributionNet) -> f64 {
    sigmoid(net.mlp.apply(phi)[0])
}

/// `|z_i − z_j|` rows for a batch of pairs.
pub fn pair_features(z: &Matrix, pairs: &[(usize, usize)]) -> Matrix {
    let mut out = Matrix::zeros(pairs.len(), z.cols());
    for (r, &(i, j)) in pairs.iter().enumerate() {
        for ((o, a), b) in out.row_mut(r).iter_mut().zip(z.row(i)).zip(z.row(j)) {
            *o = libm::fabs(a - b);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;
    use crate::sparse::BoolCsr;

    #[test]
    fn isolated_node_with_identity_weights_is_passthrough() {
        let adj = crate::graph::normalize_adj(&BoolCsr::zeros(1, 1)).unwrap();
        let x = Matrix::from_vec(1, 3, vec![1.0, 0.5, 2.0]).unwrap();
        let p = GcnParams { w0: Matrix::identity(3), w1: Matrix::identity(3) };
        assert_eq!(gcn_forward(&x, &adj, &p).unwrap(), x);
    }

    #[test]
    fn zero_features_give_zero_embeddings() {
        let adj = crate::graph::normalize_adj(&BoolCsr::from_pairs(3, 3, &[(0, 1), (1, 0)]).unwrap()).unwrap();
        let mut rng = rng_for(1, 0, 0);
        let p = GcnParams::init(4, 6, 2, &mut rng);
        let z = gcn_forward(&Matrix::zeros(3, 4), &adj, &p).unwrap();
        assert!(z.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn heads_on_degenerate_inputs() {
        let mut rng = rng_for(2, 0, 0);
        let head = PrimaryHead { mlp: Mlp::init(4, 5, 1, &mut rng) };
        let zero = [0.0; 4];
        let other = [0.3, -1.0, 2.0, 0.1];
        let expected = sigmoid(head.mlp.apply(&zero)[0]);
        assert_eq!(link_score(&zero, &other, &head), expected);

        let pre = PretextHead { metapath: 0, affine: Affine::init(4, 1, &mut rng) };
        let mut pre_b = pre.clone();
        pre_b.affine.bias[(0, 0)] = 0.75;
        assert_eq!(pretext_predict(&other, &other, &pre_b), 0.75);

        let mut node = PrimaryHead { mlp: Mlp::init(4, 5, 3, &mut rng) };
        for m in node.mlp.params_mut() {
            m.as_mut_slice().fill(0.0);
        }
        for p in node_logits(&other, &node) {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }

        let mut con = ContributionNet { mlp: Mlp::init(4, 8, 1, &mut rng) };
        con.mlp.output.weight.as_mut_slice().fill(0.0);
        assert_eq!(contribution(&other, &con), 0.5);
    }

    #[test]
    fn node_task_needs_two_classes() {
        let mut rng = rng_for(0, 0, 0);
        let dims = ModelDims { input: 3, hidden: 4, embed: 2, primary_hidden: 3, contribution_hidden: 3 };
        assert!(ModelState::init(dims, Task::Node { classes: 1 }, &[0], PretextMode::Regression, 4, &mut rng).is_err());
        let s = ModelState::init(dims, Task::Link, &[3, 1, 3], PretextMode::Regression, 4, &mut rng).unwrap();
        assert_eq!(s.pretext.iter().map(|h| h.metapath).collect::<Vec<_>>(), vec![1, 3]);
        assert_eq!(s.all_tensors().len(), 2 + 4 + 4 + 4);
        assert_eq!(s.group_name(0), "encoder");
        assert_eq!(s.group_name(5), "primary head");
        assert_eq!(s.group_name(8), "pretext head (metapath 3)");
    }
}
