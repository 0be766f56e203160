mod common;

use std::collections::BTreeSet;

use common::*;
use rand::Rng;
use sesim_core::model::{ModelState, Parameters};
use sesim_core::trainer::{
    init_model, joint_gradients, joint_loss, meta_update_lambda, train, train_with, virtual_step, MetaTarget,
    PretextBatch, PrimaryBatch, PrimarySplit, StepBatch, TaskKind, TrainingData, Weighting,
};
use sesim_core::{Error, Matrix};

const H: f64 = 1e-4;

fn val_primary_loss(state: &ModelState, data: &TrainingData, vb: &PrimaryBatch) -> f64 {
    let b = StepBatch { primary: vb.clone(), pretext: Vec::new() };
    joint_loss(state, &data.inputs, &b, Weighting::Off).unwrap().primary
}

fn weighted_pretext_loss(state: &ModelState, data: &TrainingData, pretext: &[PretextBatch]) -> f64 {
    // Every contribution weight recomputed from the current embeddings.
    let z = sesim_core::model::Encoder::embed(&state.encoder, &data.inputs).unwrap();
    let mut total = 0.0;
    for pb in pretext.iter().filter(|p| !p.pairs.is_empty()) {
        let phi = sesim_core::model::pair_features(&z, &pb.pairs);
        let w = state.contribution.weights(&phi).unwrap();
        let b = StepBatch {
            primary: PrimaryBatch::Link { pairs: vec![(0, 1)], targets: vec![1.0] },
            pretext: vec![pb.clone()],
        };
        let l = joint_loss(state, &data.inputs, &b, Weighting::Constant(1.0)).unwrap();
        total += l.weighted[0].iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / w.len() as f64;
    }
    total
}

fn perturb_lambda(state: &ModelState, t: usize, k: usize, h: f64) -> ModelState {
    let mut s = state.clone();
    s.contribution.mlp.params_mut()[t].as_mut_slice()[k] += h;
    s
}

fn meta_check(task: TaskKind, seed: u64, literal: bool) {
    let (data, cfg) = small_problem(task, seed);
    let mut state = init_model(&data, &cfg).unwrap();
    randomize_biases(&mut state, seed);
    let batch = sample_batch(&data, 6, 0);
    let vb = val_batch(&data);
    let meta_pre = sample_batch(&data, 5, 3).pretext;
    let alpha = 0.05;
    let vs = virtual_step(&state, &data.inputs, &batch, alpha).unwrap();
    let target = if literal { MetaTarget::Pretext(&meta_pre) } else { MetaTarget::Validation(&vb) };
    let upd = meta_update_lambda(&state, &vs, &data.inputs, target, 0.1).unwrap();
    let objective = |s: &ModelState| {
        let w_hat = virtual_step(s, &data.inputs, &batch, alpha).unwrap().w_hat;
        if literal {
            weighted_pretext_loss(&w_hat, &data, &meta_pre)
        } else {
            val_primary_loss(&w_hat, &data, &vb)
        }
    };
    let mut r = rng(seed + 31);
    let shapes: Vec<usize> = state.contribution.mlp.params().iter().map(|p| p.len()).collect();
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    while checked < 10 {
        let t = r.random_range(0..shapes.len());
        let k = r.random_range(0..shapes[t]);
        let analytic = upd.grad[t].as_slice()[k];
        let f = |h: f64| objective(&perturb_lambda(&state, t, k, h));
        let (fp, f0, fm) = (f(H), f(0.0), f(-H));
        let (right, left) = ((fp - f0) / H, (f0 - fm) / H);
        if (right - left).abs() > 1e-2 * right.abs().max(left.abs()) {
            // A relu kink lies within the stencil.
            continue;
        }
        let numeric = (fp - fm) / (2.0 * H);
        if analytic.abs().max(numeric.abs()) < 1e-12 {
            continue;
        }
        worst = worst.max((analytic - numeric).abs() / analytic.abs().max(numeric.abs()));
        checked += 1;
    }
    assert!(worst < 1e-3, "{task:?} seed {seed} literal={literal}: worst relative error {worst}");
}

#[test]
fn meta_gradient_matches_finite_differences() {
    for seed in 0..10 {
        meta_check(TaskKind::Link, seed, false);
        meta_check(TaskKind::Node, seed, false);
    }
}

#[test]
fn pretext_lookahead_meta_gradient_matches_finite_differences() {
    for seed in 0..10 {
        meta_check(TaskKind::Link, seed, true);
    }
}

#[test]
fn virtual_step_is_plain_sgd_on_the_weighted_loss() {
    let (data, cfg) = small_problem(TaskKind::Link, 4);
    let state = init_model(&data, &cfg).unwrap();
    let before = state.clone();
    let batch = sample_batch(&data, 6, 0);
    let vs = virtual_step(&state, &data.inputs, &batch, 0.01).unwrap();
    assert_eq!(state, before);
    let (_, g) = joint_gradients(&state, &data.inputs, &batch, Weighting::Contribution(&state.contribution)).unwrap();
    for ((p, q), g) in state.trainable().into_iter().zip(vs.w_hat.trainable()).zip(&g) {
        let mut want = p.clone();
        want.axpy(-0.01, g);
        assert_eq!(&want, q);
    }
    assert_eq!(vs.w_hat.contribution, state.contribution);
}

#[test]
fn meta_update_edge_cases() {
    let (data, cfg) = small_problem(TaskKind::Link, 5);
    let state = init_model(&data, &cfg).unwrap();
    let batch = sample_batch(&data, 6, 0);
    let vb = val_batch(&data);
    let vs = virtual_step(&state, &data.inputs, &batch, 0.01).unwrap();
    let same = meta_update_lambda(&state, &vs, &data.inputs, MetaTarget::Validation(&vb), 0.0).unwrap();
    assert_eq!(same.contribution, state.contribution);
    let empty = PrimaryBatch::Link { pairs: vec![], targets: vec![] };
    assert!(matches!(
        meta_update_lambda(&state, &vs, &data.inputs, MetaTarget::Validation(&empty), 0.1),
        Err(Error::Config(_))
    ));
    let no_pretext = StepBatch { primary: batch.primary.clone(), pretext: vec![] };
    let bare = virtual_step(&state, &data.inputs, &no_pretext, 0.01).unwrap();
    assert!(matches!(
        meta_update_lambda(&state, &bare, &data.inputs, MetaTarget::Validation(&vb), 0.1),
        Err(Error::State(_))
    ));
}

#[test]
fn zeroed_contribution_output_gives_one_half() {
    let (data, cfg) = small_problem(TaskKind::Link, 6);
    let mut state = init_model(&data, &cfg).unwrap();
    state.contribution.mlp.output.weight = Matrix::zeros(cfg.dims.contribution_hidden, 1);
    let phi = random_matrix(50, cfg.dims.embed, &mut rng(1)).map(f64::abs);
    assert!(state.contribution.weights(&phi).unwrap().iter().all(|&w| w == 0.5));
    let batch = sample_batch(&data, 6, 0);
    let a = joint_gradients(&state, &data.inputs, &batch, Weighting::Contribution(&state.contribution)).unwrap();
    let b = joint_gradients(&state, &data.inputs, &batch, Weighting::Constant(0.5)).unwrap();
    assert_eq!(a.1, b.1);
}

#[test]
fn zero_epochs_return_the_initialization() {
    let (data, mut cfg) = small_problem(TaskKind::Link, 0);
    cfg.epochs = 0;
    let (state, history) = train(&data, &cfg).unwrap();
    assert_eq!(state, init_model(&data, &cfg).unwrap());
    assert!(history.records.is_empty());
}

#[test]
fn training_is_deterministic() {
    let (data, mut cfg) = small_problem(TaskKind::Node, 2);
    cfg.epochs = 3;
    let a = train(&data, &cfg).unwrap();
    let b = train(&data, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.1.records.len(), 3);
    assert!(a.1.records.iter().all(|r| r.mean_con.iter().all(|&c| c > 0.0 && c < 1.0)));
}

fn bits(s: &ModelState) -> Vec<u64> {
    s.trainable().into_iter().flat_map(|m| m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>()).collect()
}

#[test]
fn frozen_zero_contribution_matches_vanilla_bitwise() {
    for task in [TaskKind::Link, TaskKind::Node] {
        let (data, mut cfg) = small_problem(task, 8);
        cfg.epochs = 4;
        let mut vanilla_cfg = cfg.clone();
        vanilla_cfg.vanilla = true;
        let mut bypass_cfg = cfg.clone();
        bypass_cfg.fixed_contribution = Some(0.0);
        let (v, hv) = train(&data, &vanilla_cfg).unwrap();
        let (b, hb) = train(&data, &bypass_cfg).unwrap();
        assert_eq!(bits(&v), bits(&b), "{task:?}");
        let metric = |h: &sesim_core::trainer::History| h.records.iter().map(|r| (r.loss_pri.to_bits(), r.val_metric.to_bits())).collect::<Vec<_>>();
        assert_eq!(metric(&hv), metric(&hb));
    }
}

#[test]
fn sesim_training_changes_lambda_and_reduces_loss() {
    let (data, mut cfg) = small_problem(TaskKind::Link, 1);
    cfg.epochs = 12;
    cfg.lr = 0.01;
    let init = init_model(&data, &cfg).unwrap();
    let mut seen = 0;
    let (state, history) = train_with(&data, &cfg, |r, _| {
        assert_eq!(r.epoch, seen);
        seen += 1;
    })
    .unwrap();
    assert_ne!(state.contribution, init.contribution);
    assert!(history.records[10].loss_pri < history.records[0].loss_pri);
    assert!(history.peak_metric().unwrap() >= history.mean_metric().unwrap());
}

#[test]
fn non_finite_loss_reports_position() {
    use sesim_core::{HetGraph, Relation};
    let (g, mps) = random_three_type([24, 12, 12], 0.12, 5, 0, 3);
    let types = g.node_types().clone();
    let rels: Vec<Relation> = g.relations().to_vec();
    let huge = Matrix::filled(24, 5, 1e306);
    let g = HetGraph::new(types, rels, 0, huge, None).unwrap();
    let (_, cfg) = small_problem(TaskKind::Link, 3);
    let data = TrainingData::prepare(&g, &mps, None, &cfg).unwrap();
    let mut cfg = cfg;
    cfg.epochs = 1;
    match train(&data, &cfg) {
        Err(Error::NonFinite { op }) => assert!(op.contains("epoch 0, step 0"), "{op}"),
        other => panic!("expected a numeric failure, got {other:?}"),
    }
}

#[test]
fn splits_keep_held_out_data_away_from_training() {
    let (data, _) = small_problem(TaskKind::Link, 12);
    let PrimarySplit::Link { split, .. } = &data.split.primary else { panic!() };
    let train: BTreeSet<_> = split.train.iter().copied().collect();
    let held: BTreeSet<_> = split.held_out().copied().collect();
    assert!(train.is_disjoint(&held));
    for &(i, j) in &held {
        assert!(!data.message_graph.get(i, j) && !data.message_graph.get(j, i));
        for a in &data.train_adjs {
            assert!(!a.matrix.get(i, j));
        }
    }
    for e in &data.split.pretext.entries {
        assert!(!held.contains(&(e.i.min(e.j), e.i.max(e.j))));
    }
    let epoch = data.split.train_link_samples(3, 0);
    let pos = epoch.iter().filter(|s| s.1 == 1.0).count();
    assert_eq!(pos, epoch.len() - pos);
    assert_ne!(epoch, data.split.train_link_samples(3, 1));

    let (node, _) = small_problem(TaskKind::Node, 12);
    let PrimarySplit::Node(s) = &node.split.primary else { panic!() };
    let val: BTreeSet<_> = s.val.iter().copied().collect();
    assert!(s.train.iter().all(|v| !val.contains(v)));
    assert!(node.split.pretext.entries.iter().all(|e| !val.contains(&e.i) && !val.contains(&e.j)));
}
