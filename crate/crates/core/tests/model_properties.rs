mod common;

use common::*;
use rand::seq::SliceRandom;
use sesim_core::graph::normalize_adj;
use sesim_core::model::{contribution, Encoder, GcnParams, GraphInputs};
use sesim_core::trainer::{init_model, joint_gradients, TaskKind, Weighting};
use sesim_core::BoolCsr;

#[test]
fn encoder_is_permutation_equivariant() {
    let mut r = rng(15);
    let a = random_undirected(15, 0.2, &mut r);
    let x = random_matrix(15, 4, &mut r);
    let enc = GcnParams::init(4, 10, 3, &mut r);
    let z = enc.embed(&GraphInputs::new(x.clone(), &normalize_adj(&a.matrix).unwrap()).unwrap()).unwrap();
    let mut perm: Vec<usize> = (0..15).collect();
    perm.shuffle(&mut r);
    // Node k of the permuted graph is node perm[k] of the original.
    let mut inv = vec![0; 15];
    for (k, &p) in perm.iter().enumerate() {
        inv[p] = k;
    }
    let edges: Vec<(usize, usize)> = a.matrix.iter().map(|(i, j)| (inv[i], inv[j])).collect();
    let ap = BoolCsr::from_pairs(15, 15, &edges).unwrap();
    let xp = x.select_rows(&perm);
    let zp = enc.embed(&GraphInputs::new(xp, &normalize_adj(&ap).unwrap()).unwrap()).unwrap();
    assert!(zp.max_abs_diff(&z.select_rows(&perm)) < 1e-10);
}

#[test]
fn contribution_weights_stay_in_the_open_unit_interval() {
    let (data, cfg) = small_problem(TaskKind::Link, 2);
    let state = init_model(&data, &cfg).unwrap();
    let phi = random_matrix(1000, cfg.dims.embed, &mut rng(3)).map(|v| 4.0 * v.abs());
    for w in state.contribution.weights(&phi).unwrap() {
        assert!(w > 0.0 && w < 1.0);
    }
    assert_eq!(contribution(phi.row(0), &state.contribution), state.contribution.weights(&phi).unwrap()[0]);
}

#[test]
fn pretext_weight_enters_gradients_linearly() {
    let (data, cfg) = small_problem(TaskKind::Node, 4);
    let state = init_model(&data, &cfg).unwrap();
    let batch = sample_batch(&data, 6, 0);
    let g = |c: f64| joint_gradients(&state, &data.inputs, &batch, Weighting::Constant(c)).unwrap().1;
    let (g0, g1, g3) = (g(0.0), g(1.0), g(3.0));
    for ((a, b), c) in g0.iter().zip(&g1).zip(&g3) {
        let lin = a.zip_map(b, |x, y| x + 3.0 * (y - x));
        assert!(lin.max_abs_diff(c) < 1e-12);
    }
    let off = joint_gradients(&state, &data.inputs, &batch, Weighting::Off).unwrap().1;
    for (a, b) in g0.iter().zip(&off) {
        assert!(a.max_abs_diff(b) == 0.0);
    }
}
