mod common;

use common::*;
use posegroup_core::appnet::{self, app_iterate, fuse, initial_nodes};
use posegroup_core::geonet::{embed_edges, geo_forward, geo_iterate, normalize_rows_by_type, AffinityMatrix};
use posegroup_core::{build_graph, Branches, DetectionSet, EdgeLabels, Error, Target};

#[test]
fn normalization_divides_each_type_group_by_its_sum() {
    // row 0 sees two type-1 nodes with affinities 0.2 and 0.6
    let a = matrix(3, |i, k| match (i.min(k), i.max(k)) {
        (0, 1) => 0.2,
        (0, 2) => 0.6,
        _ => 0.5,
    });
    let out = normalize_rows_by_type(&a, &[0, 1, 1]);
    assert!((out[1] - 0.25).abs() < 1e-15);
    assert!((out[2] - 0.75).abs() < 1e-15);
    assert_eq!(out[0], 0.0);
}

#[test]
fn normalization_of_all_ones_is_uniform_per_type() {
    let a = AffinityMatrix::ones(5);
    let out = normalize_rows_by_type(&a, &[0, 1, 1, 1, 1]);
    for k in 1..5 {
        assert_eq!(out[k], 0.25);
    }
}

#[test]
fn zero_sum_groups_stay_zero() {
    let a = matrix(3, |_, _| 0.0);
    let out = normalize_rows_by_type(&a, &[0, 1, 1]);
    assert!(out.iter().all(|v| *v == 0.0));
}

#[test]
fn five_nodes_store_ten_shared_embeddings() {
    let model = small_model(3, 256, Branches::GeoOnly, 1);
    let g = random_graph(5, 3, 8, 2);
    let emb = embed_edges(&g, &model.weights.geo).unwrap();
    assert_eq!(emb.num_pairs(), 10);
    assert_eq!(emb.dim, 256);
    for m in 0..5 {
        for n in 0..5 {
            if m != n {
                assert_eq!(emb.get(m, n), emb.get(n, m));
            }
        }
    }
}

#[test]
fn coincident_same_type_pairs_share_one_embedding() {
    let dets = vec![
        det(0, 0.3, 0.3, 1, vec![0.0; 8]),
        det(1, 0.3, 0.3, 1, vec![0.0; 8]),
        det(2, 0.7, 0.2, 1, vec![0.0; 8]),
        det(3, 0.7, 0.2, 1, vec![0.0; 8]),
    ];
    let g = build_graph(&DetectionSet::new(dets, 8).unwrap()).unwrap();
    let model = small_model(2, 32, Branches::GeoOnly, 3);
    let emb = embed_edges(&g, &model.weights.geo).unwrap();
    assert_eq!(emb.get(0, 1), emb.get(2, 3));
}

#[test]
fn geometry_branch_outputs_three_symmetric_matrices_in_open_unit_interval() {
    let model = small_model(4, 32, Branches::GeoOnly, 4);
    let g = random_graph(9, 4, 8, 5);
    let out = geo_forward(&g, &model.weights.geo).unwrap();
    assert_eq!(out.matrices.len(), 3);
    assert!(!out.single_node);
    for a in &out.matrices {
        for m in 0..9 {
            for n in 0..9 {
                if m != n {
                    assert!(a.get(m, n) > 0.0 && a.get(m, n) < 1.0);
                    assert_eq!(a.get(m, n), a.get(n, m));
                }
            }
        }
    }
    assert_eq!(out, geo_forward(&g, &model.weights.geo).unwrap());
}

#[test]
fn stepwise_iteration_reproduces_forward() {
    let model = small_model(3, 16, Branches::GeoOnly, 6);
    let g = random_graph(6, 3, 8, 7);
    let params = &model.weights.geo;
    let emb = embed_edges(&g, params).unwrap();
    let mut prev = AffinityMatrix::ones(6);
    let full = geo_forward(&g, params).unwrap();
    for l in 0..3 {
        let (_, next) = geo_iterate(&g, &emb, &prev, params, l).unwrap();
        assert!(max_abs_diff(&next, &full.matrices[l]) < 1e-12);
        prev = next;
    }
    assert!(matches!(geo_iterate(&g, &emb, &prev, params, 3), Err(Error::InvalidArgument(_))));
}

#[test]
fn single_node_graph_is_flagged() {
    let model = small_model(2, 16, Branches::Full, 8);
    let g = random_graph(1, 2, 8, 9);
    let out = geo_forward(&g, &model.weights.geo).unwrap();
    assert!(out.single_node && out.matrices.is_empty());
    let labels = EdgeLabels::new_masked(1);
    let (loss, grad) = model.compute_gradients(&g, &labels).unwrap();
    assert_eq!(loss.total, 0.0);
    assert!(grad.tensors().iter().all(|t| t.data.iter().all(|v| *v == 0.0)));
}

#[test]
fn unknown_type_pair_is_model_incompatible() {
    let model = small_model(2, 16, Branches::GeoOnly, 10);
    let g = random_graph(6, 4, 8, 11);
    match embed_edges(&g, &model.weights.geo) {
        Err(Error::ModelIncompatible(msg)) => assert!(msg.contains('3'), "{msg}"),
        other => panic!("expected incompatibility, got {other:?}"),
    }
}

#[test]
fn permutation_equivariance_and_translation_invariance() {
    let model = small_model(4, 64, Branches::Full, 12);
    for seed in 0..20u64 {
        let g = random_graph(4 + (seed as usize % 9), 4, 8, 100 + seed);
        let n = g.len();
        let base = model.forward(&g).unwrap();

        let mut perm: Vec<usize> = (0..n).collect();
        perm.rotate_left(seed as usize % n);
        perm.reverse();
        let pg = g.permuted(&perm).unwrap();
        let moved = model.forward(&pg).unwrap();
        for (a, b) in base.geo.iter().zip(&moved.geo).chain(base.app.iter().zip(&moved.app)) {
            assert!(max_abs_diff(&permute(a, &perm), b) < 1e-9, "seed {seed}");
        }
        let fa = base.fused.as_ref().unwrap();
        assert!(max_abs_diff(&permute(fa, &perm), moved.fused.as_ref().unwrap()) < 1e-9);

        let mut shifted: Vec<_> = g.nodes().to_vec();
        for d in &mut shifted {
            d.keypoint.x += 0.07;
            d.keypoint.y -= 0.05;
        }
        let sg = posegroup_core::DetectionGraph::from_nodes(shifted, 8).unwrap();
        let geo_shift = geo_forward(&sg, &model.weights.geo).unwrap();
        for (a, b) in base.geo.iter().zip(&geo_shift.matrices) {
            assert!(max_abs_diff(a, b) < 1e-9, "seed {seed}");
        }
    }
}

#[test]
fn appearance_affinity_is_exactly_symmetric_and_flat_for_equal_features() {
    let model = small_model(3, 32, Branches::AppOnly, 13);
    let params = &model.weights.app;
    let g = random_graph(7, 3, 8, 14);
    let nodes = initial_nodes(&g, params).unwrap();
    let (a, next) = app_iterate(&g, &nodes, params, 0).unwrap();
    assert_eq!(next.len(), 7 * 32);
    for m in 0..7 {
        for n in 0..7 {
            assert_eq!(a.get(m, n), a.get(n, m));
        }
    }
    let flat = vec![0.25; 7 * 32];
    let (a, _) = app_iterate(&g, &flat, params, 1).unwrap();
    let v = a.get(0, 1);
    for m in 0..7 {
        for n in 0..7 {
            if m != n {
                assert_eq!(a.get(m, n), v);
            }
        }
    }
    assert!(matches!(app_iterate(&g, &flat, params, 2), Err(Error::InvalidArgument(_))));
    assert!(matches!(app_iterate(&g, &flat[..10], params, 0), Err(Error::ModelIncompatible(_))));
}

#[test]
fn full_model_has_two_appearance_stages_and_fused_output_in_range() {
    let model = small_model(3, 32, Branches::Full, 15);
    let g = random_graph(8, 3, 8, 16);
    let out = model.forward(&g).unwrap();
    assert_eq!(out.app.len(), 2);
    assert_eq!(out.geo.len(), 3);
    let f = out.fused.unwrap();
    assert_eq!(model.weights.fuse.mlp.widths(), vec![2, 16, 64, 64, 16, 1]);
    for m in 0..8 {
        for n in 0..8 {
            if m != n {
                assert!(f.get(m, n) > 0.0 && f.get(m, n) < 1.0);
                assert_eq!(f.get(m, n), f.get(n, m));
            }
        }
    }
    let again = fuse(out.geo.last().unwrap(), out.app.last().unwrap(), &model.weights.fuse).unwrap();
    assert!(max_abs_diff(&again, &f) < 1e-12);
    assert!(fuse(&out.geo[0], &AffinityMatrix::ones(3), &model.weights.fuse).is_err());
}

#[test]
fn single_edge_at_one_half_costs_three_ln_two() {
    let half = AffinityMatrix::from_pair_logits(2, &[0.0]);
    let mut labels = EdgeLabels::new_masked(2);
    labels.set(0, 1, Target::One, true);
    let geo = vec![half.clone(); 3];
    let app = vec![half.clone(); 2];
    let l = appnet::loss(&geo, &app, Some(&half), &labels).unwrap();
    assert!((l.total - 3.0 * std::f64::consts::LN_2).abs() < 1e-12);
    assert_eq!(l.edges, 1);
}

#[test]
fn saturated_correct_predictions_cost_almost_nothing() {
    let labels = random_labels(6, 17);
    let mut logits = Vec::new();
    for m in 0..6 {
        for n in m + 1..6 {
            logits.push(if labels.target(m, n) == Target::One { 20.0 } else { -20.0 });
        }
    }
    let a = AffinityMatrix::from_pair_logits(6, &logits);
    let l = appnet::loss(&[a.clone(), a.clone(), a.clone()], &[a.clone(), a.clone()], Some(&a), &labels).unwrap();
    assert!(l.total < 1e-6 && l.total >= 0.0);
}

#[test]
fn unmasked_unlabeled_edge_is_a_consistency_error() {
    let mut labels = EdgeLabels::new_masked(2);
    labels.set(0, 1, Target::Unlabeled, true);
    let a = AffinityMatrix::ones(2);
    assert!(matches!(appnet::loss(&[a.clone()], &[], None, &labels), Err(Error::Consistency(_))));
}

#[test]
fn masked_label_flips_leave_loss_and_gradients_bit_identical() {
    let model = small_model(3, 24, Branches::Full, 18);
    for seed in 0..5 {
        let g = random_graph(7, 3, 8, 200 + seed);
        let labels = random_labels(7, 300 + seed);
        let mut flipped = labels.clone();
        for m in 0..7 {
            for n in m + 1..7 {
                if !labels.mask(m, n) {
                    let t = if labels.target(m, n) == Target::One { Target::Zero } else { Target::One };
                    flipped.set(m, n, t, false);
                }
            }
        }
        let (la, ga) = model.compute_gradients(&g, &labels).unwrap();
        let (lb, gb) = model.compute_gradients(&g, &flipped).unwrap();
        assert_eq!(la.total.to_bits(), lb.total.to_bits());
        assert_eq!(ga, gb);
    }
}

#[test]
fn fully_masked_graph_has_zero_loss_and_gradients() {
    let model = small_model(3, 16, Branches::Full, 19);
    let g = random_graph(6, 3, 8, 20);
    let (l, grad) = model.compute_gradients(&g, &EdgeLabels::new_masked(6)).unwrap();
    assert_eq!(l.total, 0.0);
    assert!(grad.tensors().iter().all(|t| t.data.iter().all(|v| *v == 0.0)));
}

#[test]
fn gradients_are_deterministic_and_match_plain_loss() {
    let model = small_model(3, 24, Branches::Full, 21);
    let g = random_graph(7, 3, 8, 22);
    let labels = random_labels(7, 23);
    let (la, ga) = model.compute_gradients(&g, &labels).unwrap();
    let (lb, gb) = model.compute_gradients(&g, &labels).unwrap();
    assert_eq!(ga, gb);
    assert_eq!(la, lb);
    let plain = model.loss(&g, &labels).unwrap();
    assert!((plain.total - la.total).abs() < 1e-12 * la.total.max(1.0));
}
