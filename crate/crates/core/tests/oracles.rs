mod common;

use common::*;
use graft::body_model::toy::{build_toy_model, ToyModelOptions};
use graft::body_model::HumanState;
use graft::metrics::{pa_mpjpe, procrustes};
use graft::scene::kdtree::KdTree;
use graft::training::{step_loss, LossWeights};
use nalgebra::Vector3;
use rand::Rng;

const LBS_TOL: f64 = 1e-12;

#[test]
fn forward_matches_matrix_skinning() {
    for smplx in [false, true] {
        let model = build_toy_model(&ToyModelOptions {
            smplx_joint_layout: smplx,
            ..Default::default()
        })
        .unwrap();
        let mut r = rng(11);
        for _ in 0..20 {
            let s = random_state(&mut r, 0.8);
            let mesh = model.forward(&s).unwrap();
            let (v, j) = naive_lbs(&model, &s);
            assert!(max_abs_diff(&mesh.vertices, &v) < LBS_TOL, "{}", max_abs_diff(&mesh.vertices, &v));
            assert!(max_abs_diff(&mesh.joints, &j) < LBS_TOL);
        }
    }
}

#[test]
fn rest_state_is_the_template_bit_for_bit() {
    let model = build_toy_model(&ToyModelOptions::default()).unwrap();
    let mesh = model.forward(&HumanState::identity()).unwrap();
    assert_eq!(&mesh.vertices[..], model.template_vertices());
}

#[test]
fn template_offset_matches_normal_equations() {
    let model = build_toy_model(&ToyModelOptions {
        template_in_shape_span: false,
        ..Default::default()
    })
    .unwrap();
    let oracle = template_offset_oracle(&model);
    for (a, b) in model.template_offset().iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-9 * (1.0 + b.abs()), "{a} vs {b}");
    }
}

#[test]
fn kdtree_knn_matches_scan() {
    let mut r = rng(3);
    let pts: Vec<Vector3<f64>> = (0..600)
        .map(|_| Vector3::new(r.random_range(0..6) as f64, r.random_range(0..6) as f64, r.random_range(0..4) as f64) * 0.25)
        .collect();
    let tree = KdTree::build(pts.clone());
    for _ in 0..100 {
        let q = Vector3::new(r.random_range(-2..26) as f64, r.random_range(-2..26) as f64, r.random_range(-2..18) as f64) * 0.0625;
        for k in [1, 5, 17] {
            assert_eq!(tree.knn(&q, k), brute_knn(&pts, &q, k));
        }
    }
}

#[test]
fn procrustes_matches_quaternion_oracle() {
    let mut r = rng(5);
    for _ in 0..50 {
        let gt: Vec<Vector3<f64>> = (0..12).map(|_| random_vec(&mut r, 1.0)).collect();
        let pred: Vec<Vector3<f64>> = gt.iter().map(|g| g * 1.3 + random_vec(&mut r, 0.2)).collect();
        let ours = pa_mpjpe(&pred, &gt).unwrap();
        let oracle = horn_pa_mpjpe(&pred, &gt);
        assert!((ours - oracle).abs() < 1e-9, "{ours} vs {oracle}");
        assert!(procrustes(&pred, &gt).unwrap().rotation.determinant() > 0.0);
    }
}

#[test]
fn loss_matches_term_by_term_definition() {
    let model = build_toy_model(&ToyModelOptions::default()).unwrap();
    let mut r = rng(9);
    let w = LossWeights::default();
    for _ in 0..10 {
        let gt = random_state(&mut r, 0.5);
        let preds = [random_state(&mut r, 0.5), random_state(&mut r, 0.5)];
        let ours = step_loss(&preds, &gt, &model, &w).unwrap().total;
        let oracle: f64 = preds.iter().map(|p| naive_loss(&model, p, &gt, &w)).sum();
        assert!((ours - oracle).abs() < 1e-10 * oracle.max(1.0), "{ours} vs {oracle}");
    }
}
