use ndarray::{Array2, Array3, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::layers::{Ctx, Mode};
use crate::autodiff::{array, Graph};
use crate::data::{StateLabel, Window};

fn random_frames(rng: &mut ChaCha8Rng, rows: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, FEATURES), |_| rng.random_range(0.0..1.0))
}

fn eval_output(model: &ModelState, frames: &Array2<f64>, adjacency: Option<ArrayD<f64>>) -> ArrayD<f64> {
    let mut g = Graph::new();
    let p = model.params.bind_frozen(&mut g);
    let mut ctx = Ctx::new(&model.params, Mode::Eval);
    let x = g.constant(frames.clone().into_dyn());
    let a = adjacency.map(|a| g.constant(a));
    let state = model.initial_rnn(&mut g, frames.nrows() / model.config.n_neurons);
    let (out, _) = module_output(&mut g, &p, &mut ctx, model, x, a, state).unwrap();
    g.value(out).clone()
}

#[test]
fn message_pass_matches_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let n = rng.random_range(1..=8);
        let f = rng.random_range(1..=4);
        let a = Array2::from_shape_fn((n, n), |_| rng.random_range(0.0..1.0));
        let x = Array2::from_shape_fn((n, f), |_| rng.random_range(-1.0..1.0));
        let mut g = Graph::new();
        let at = g.constant(a.clone().into_shape_with_order(IxDyn(&[1, n, n])).unwrap());
        let xt = g.constant(x.clone().into_dyn());
        let h = message_pass(&mut g, at, xt).unwrap();
        let h = g.value(h);
        for i in 0..n {
            for c in 0..f {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += a[[i, j]] * x[[j, c]];
                }
                assert!((h[[i, c]] - acc).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn message_pass_half_weights() {
    let mut g = Graph::new();
    let a = g.constant(array(&[1, 2, 2], vec![0.5; 4]));
    let x = g.constant(array(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]));
    let h = message_pass(&mut g, a, x).unwrap();
    assert_eq!(g.value(h).iter().copied().collect::<Vec<_>>(), vec![0.5; 4]);
    let bad = g.constant(array(&[3, 2], vec![0.0; 6]));
    assert!(message_pass(&mut g, a, bad).is_err());
}

#[test]
fn identity_adjacency_reduces_gnn_to_mlp() {
    let n = 4;
    let gnn = ModelState::new(ModelConfig::classifier(ModuleKind::Gnn, n, 3), 11).unwrap();
    let mut mlp = ModelState::new(ModelConfig::classifier(ModuleKind::Mlp, n, 3), 12).unwrap();
    let names: Vec<String> = mlp.params.names().map(str::to_owned).collect();
    for name in &names {
        *mlp.params.get_mut(name).unwrap() = gnn.params.get(name).unwrap().clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let frames = random_frames(&mut rng, 5 * n);
    let eye = ArrayD::from_shape_fn(IxDyn(&[5, n, n]), |ix| if ix[1] == ix[2] { 1.0 } else { 0.0 });
    let a = eval_output(&gnn, &frames, Some(eye));
    let b = eval_output(&mlp, &frames, None);
    assert_eq!(a.shape(), &[5, 3]);
    for (x, y) in a.iter().zip(b.iter()) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn mlp_output_shape_and_order_sensitivity() {
    let n = 5;
    let model = ModelState::new(ModelConfig::classifier(ModuleKind::Mlp, n, 2), 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let frames = random_frames(&mut rng, n);
    let mut g = Graph::new();
    let p = model.params.bind_frozen(&mut g);
    let mut ctx = Ctx::new(&model.params, Mode::Eval);
    let x = g.constant(frames.clone().into_dyn());
    let (h, _) = mlp_forward(&mut g, &p, &mut ctx, &model, x, None).unwrap();
    assert_eq!(g.shape(h), &[1, CLASSIFY_HIDDEN]);
    let base = g.value(h).clone();

    let mut permuted = frames.clone();
    permuted.row_mut(0).assign(&frames.row(1));
    permuted.row_mut(1).assign(&frames.row(0));
    let x = g.constant(permuted.into_dyn());
    let (h2, _) = mlp_forward(&mut g, &p, &mut ctx, &model, x, None).unwrap();
    assert_ne!(&base, g.value(h2));

    let wrong = g.constant(ArrayD::zeros(IxDyn(&[n + 1, FEATURES])));
    assert!(mlp_forward(&mut g, &p, &mut ctx, &model, wrong, None).is_err());
}

#[test]
fn zero_input_gives_zero_preactivation() {
    let model = ModelState::new(ModelConfig::classifier(ModuleKind::Mlp, 3, 2), 0).unwrap();
    let mut g = Graph::new();
    let p = model.params.bind_frozen(&mut g);
    let x = g.constant(ArrayD::zeros(IxDyn(&[1, 6])));
    let pre = crate::autodiff::layers::linear(&mut g, &p, "g.fc1", x).unwrap();
    assert!(g.value(pre).iter().all(|&v| v == 0.0));
}

fn gnn_window_model(mode: EdgeMode, self_edges: bool) -> ModelState {
    let mut cfg = ModelConfig::classifier(ModuleKind::Gnn, 4, 2);
    cfg.edge_mode = mode;
    cfg.include_self_edges = self_edges;
    ModelState::new(cfg, 5).unwrap()
}

fn random_window(rng: &mut ChaCha8Rng, n: usize, w: usize) -> Array3<f64> {
    Array3::from_shape_fn((n, w, FEATURES), |_| rng.random_range(0.0..1.0))
}

#[test]
fn inferred_edges_are_probabilities() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for mode in [EdgeMode::Dynamic, EdgeMode::Static, EdgeMode::OneHot] {
        let model = gnn_window_model(mode, true);
        let mats = encode_edges(&model, &random_window(&mut rng, 4, 8)).unwrap();
        let expected = if mode == EdgeMode::Dynamic { 8 } else { 1 };
        assert_eq!(mats.len(), expected);
        for m in &mats {
            assert!(m.weights.iter().all(|&w| (0.0..=1.0).contains(&w)));
            assert_eq!(m.timestep.is_some(), mode == EdgeMode::Dynamic);
        }
    }
}

#[test]
fn self_edges_masked_when_disabled() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for mode in [EdgeMode::Dynamic, EdgeMode::Static] {
        let model = gnn_window_model(mode, false);
        for m in encode_edges(&model, &random_window(&mut rng, 4, 8)).unwrap() {
            for i in 0..4 {
                assert_eq!(m.weights[[i, i]], 0.0);
            }
        }
    }
}

#[test]
fn static_edges_shared_across_window_steps() {
    let model = gnn_window_model(EdgeMode::Static, true);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let windows: Vec<Window> = (0..3)
        .map(|i| Window {
            worm_id: "w".into(),
            start_index: i * 8,
            features: random_window(&mut rng, 4, 8),
            labels: vec![StateLabel::Forward; 8],
        })
        .collect();
    let refs: Vec<&Window> = windows.iter().collect();
    let frames = window_frames(&refs).unwrap();
    let mut g = Graph::new();
    let p = model.params.bind_frozen(&mut g);
    let mut ctx = Ctx::new(&model.params, Mode::Eval);
    let x = g.constant(frames.into_dyn());
    let a = super::edges::adjacency_for_frames(&mut g, &p, &mut ctx, &model, x, 8).unwrap();
    let a = g.value(a);
    assert_eq!(a.shape(), &[24, 4, 4]);
    for t in 1..8 {
        for b in 0..3 {
            assert_eq!(a.index_axis(ndarray::Axis(0), t * 3 + b), a.index_axis(ndarray::Axis(0), b));
        }
    }
}

#[test]
fn connectome_not_encodable() {
    let model = gnn_window_model(EdgeMode::Connectome, true);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(encode_edges(&model, &random_window(&mut rng, 4, 8)).is_err());
    let mlp = ModelState::new(ModelConfig::classifier(ModuleKind::Mlp, 4, 2), 0).unwrap();
    assert!(encode_edges(&mlp, &random_window(&mut rng, 4, 8)).is_err());
}

#[test]
fn connectome_parsing() {
    let names: Vec<String> = ["A", "B", "C"].iter().map(|s| s.to_string()).collect();
    let empty = parse_connectome("# nothing\n", &names, true).unwrap();
    assert_eq!(empty.weights, Array2::<f64>::eye(3));
    let m = parse_connectome("A B 2.0\nA C 1.0\nA Z 9\n", &names, false).unwrap();
    assert_eq!(m.weights[[0, 1]], 1.0);
    assert_eq!(m.weights[[0, 2]], 0.5);
    assert_eq!(m.weights.sum(), 1.5);
    assert!(parse_connectome("A B\n", &names, true).unwrap_err().contains("line 1"));
    assert!(parse_connectome("A,B,-1\n", &names, true).is_err());
}

#[test]
fn classify_argmax_and_ties() {
    let mut g = Graph::new();
    let logits = g.constant(array(&[3, 3], vec![2.0, 1.0, 0.0, 1.0, 1.0, 0.0, -3.0, 0.0, 5.0]));
    let (probs, pred) = classify(&mut g, logits).unwrap();
    assert_eq!(pred, vec![0, 0, 2]);
    for row in g.value(probs).rows() {
        assert!((row.sum() - 1.0).abs() < 1e-12);
    }
}

fn zero_head(model: &mut ModelState) {
    let names: Vec<String> = model
        .params
        .names()
        .filter(|n| n.contains("head"))
        .map(str::to_owned)
        .collect();
    for name in names {
        model.params.get_mut(&name).unwrap().fill(0.0);
    }
}

#[test]
fn zeroed_module_output_is_identity_step() {
    for kind in [ModuleKind::Mlp, ModuleKind::NodeMlp, ModuleKind::Gnn, ModuleKind::Linear] {
        let mut cfg = ModelConfig::predictor(kind, 3);
        cfg.hidden_dim = 8;
        let mut model = ModelState::new(cfg, 1).unwrap();
        zero_head(&mut model);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x0 = random_frames(&mut rng, 6);
        let mut g = Graph::new();
        let p = model.params.bind_frozen(&mut g);
        let mut ctx = Ctx::new(&model.params, Mode::Eval);
        let preds = rollout(&mut g, &p, &mut ctx, &model, &x0, 16, None, 0.0, &mut rng).unwrap();
        assert_eq!(preds.len(), 16);
        for t in preds {
            assert_eq!(g.shape(t), &[6, FEATURES]);
            assert_eq!(g.value(t), &x0.clone().into_dyn(), "{kind:?}");
        }
    }
}

#[test]
fn full_teacher_forcing_feeds_ground_truth() {
    let mut cfg = ModelConfig::predictor(ModuleKind::Gnn, 3);
    cfg.hidden_dim = 8;
    let mut model = ModelState::new(cfg, 1).unwrap();
    zero_head(&mut model);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let teacher: Vec<Array2<f64>> = (0..5).map(|_| random_frames(&mut rng, 3)).collect();
    let mut g = Graph::new();
    let p = model.params.bind_frozen(&mut g);
    let mut ctx = Ctx::new(&model.params, Mode::Eval);
    let preds = rollout(&mut g, &p, &mut ctx, &model, &teacher[0], 5, Some(&teacher), 1.0, &mut rng).unwrap();
    // identity steps: prediction s equals the input fed at step s
    for (s, t) in preds.iter().enumerate() {
        assert_eq!(g.value(*t), &teacher[s].clone().into_dyn());
    }
    assert!(rollout(&mut g, &p, &mut ctx, &model, &teacher[0], 6, Some(&teacher), 0.5, &mut rng).is_err());
}

#[test]
fn recurrent_rollout_needs_burn_in() {
    let mut cfg = ModelConfig::predictor(ModuleKind::Mlp, 3);
    cfg.hidden_dim = 8;
    cfg.recurrent = true;
    let model = ModelState::new(cfg, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let teacher: Vec<Array2<f64>> = (0..8).map(|_| random_frames(&mut rng, 3)).collect();
    let mut g = Graph::new();
    let p = model.params.bind_frozen(&mut g);
    let mut ctx = Ctx::new(&model.params, Mode::Eval);
    assert!(rollout(&mut g, &p, &mut ctx, &model, &teacher[0], 8, None, 0.0, &mut rng).is_err());
    let preds = rollout(&mut g, &p, &mut ctx, &model, &teacher[0], 8, Some(&teacher[..4]), 0.0, &mut rng).unwrap();
    assert_eq!(preds.len(), 8);
}

#[test]
fn recurrent_classifiers_run() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let windows: Vec<Window> = (0..2)
        .map(|i| Window {
            worm_id: "w".into(),
            start_index: i * 8,
            features: random_window(&mut rng, 4, 8),
            labels: vec![StateLabel::Reverse1; 8],
        })
        .collect();
    let refs: Vec<&Window> = windows.iter().collect();
    for kind in [ModuleKind::Mlp, ModuleKind::NodeMlp, ModuleKind::Gnn] {
        for mode in [EdgeMode::Dynamic, EdgeMode::Static] {
            let mut cfg = ModelConfig::classifier(kind, 4, 2);
            cfg.recurrent = true;
            cfg.edge_mode = mode;
            let model = ModelState::new(cfg, 0).unwrap();
            let mut g = Graph::new();
            let p = model.params.bind(&mut g);
            let mut ctx = Ctx::new(&model.params, Mode::Train);
            let logits = classify_windows(&mut g, &p, &mut ctx, &model, &refs).unwrap();
            assert_eq!(g.shape(logits), &[16, 2]);
        }
    }
}

#[test]
fn window_frames_are_step_major() {
    let mk = |v: f64| Window {
        worm_id: "w".into(),
        start_index: 0,
        features: Array3::from_shape_fn((2, 3, 2), |(n, t, c)| v + (n * 100 + t * 10 + c) as f64),
        labels: vec![StateLabel::Forward, StateLabel::Unknown, StateLabel::Reverse2],
    };
    let (a, b) = (mk(0.0), mk(1000.0));
    let frames = window_frames(&[&a, &b]).unwrap();
    assert_eq!(frames.dim(), (12, 2));
    // row (t * B + b) * N + n
    assert_eq!(frames[[(2 * 2 + 1) * 2 + 1, 1]], 1000.0 + 100.0 + 20.0 + 1.0);
    let targets = window_targets(&[&a, &b], crate::data::LabelScheme::Binary);
    assert_eq!(targets, vec![Some(0), Some(0), None, None, Some(1), Some(1)]);
}

#[test]
fn checkpoint_round_trip_and_stability() {
    let mut cfg = ModelConfig::classifier(ModuleKind::Gnn, 4, 2);
    cfg.recurrent = true;
    let model = ModelState::new(cfg, 21).unwrap();
    let text = Checkpoint::from_model(&model).to_json();
    let back = Checkpoint::from_json(&text).unwrap().into_model().unwrap();
    assert_eq!(back, model);
    assert_eq!(Checkpoint::from_model(&back).to_json(), text);

    let mut ck = Checkpoint::from_model(&model);
    ck.parameters[0].shape.push(1);
    let err = ck.into_model().unwrap_err().to_string();
    assert!(err.contains("checkpoint shape") && err.contains("model shape"), "{err}");
}

#[test]
fn neuron_count_mismatch_names_both() {
    let model = ModelState::new(ModelConfig::classifier(ModuleKind::Mlp, 15, 2), 0).unwrap();
    let err = check_neuron_count(&model, 3).unwrap_err().to_string();
    assert!(err.contains("15") && err.contains('3'));
}

#[test]
fn parameter_layout_is_pure_function_of_config() {
    let cfg = ModelConfig::predictor(ModuleKind::NodeMlp, 3);
    let a = ModelState::new(cfg.clone(), 1).unwrap();
    let b = ModelState::new(cfg, 2).unwrap();
    let shapes = |m: &ModelState| m.params.iter().map(|(k, v)| (k.to_owned(), v.shape().to_vec())).collect::<Vec<_>>();
    assert_eq!(shapes(&a), shapes(&b));
    assert_ne!(a.params, b.params);
}
