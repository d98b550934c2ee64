mod common {
    pub mod reference;
}

use common::reference::{self, Mat};
use ndgg::autodiff::Tape;
use ndgg::dataset::{Dataset, SplitMasks};
use ndgg::graph::normalize_adjacency;
use ndgg::model::{gradient_check, GateMode, GraphInputs, Model, ModelConfig, ModelKind, ModelParams};
use ndgg::rng::SplitRng;
use ndgg::synthetic::random_graph;
use ndgg::{Graph, Tensor};

fn toy(n: usize, f: usize, c: usize, seed: u64) -> Dataset {
    let mut rng = SplitRng::new(seed);
    let graph = random_graph(n, 3.0, &mut rng).unwrap();
    let features = Tensor::from_fn(n, f, |_, _| rng.uniform(0.0, 1.0));
    let labels = (0..n).map(|i| Some(i % c)).collect();
    let train = (0..n / 2).collect();
    let val = vec![n / 2];
    let test = ((n / 2 + 1)..n).collect();
    Dataset::new("toy", graph, features, labels, SplitMasks::new(train, val, test), c).unwrap()
}

fn small(kind: ModelKind, layers: usize) -> ModelConfig {
    let mut c = ModelConfig::new(kind).with_layers(layers);
    c.hidden = 5;
    c.degree_dim = 3;
    c.degree_cap = 4;
    c
}

fn model(cfg: ModelConfig, inputs: &GraphInputs, seed: u64) -> Model {
    Model::init(cfg, inputs, &mut SplitRng::new(seed)).unwrap()
}

fn forward(m: &Model, inputs: &GraphInputs, mode: GateMode) -> (Tensor, Vec<Tensor>) {
    let mut tape = Tape::new();
    let fwd = m.forward(&mut tape, inputs, false, &mut SplitRng::new(0), mode).unwrap();
    let hidden = fwd.hidden.iter().map(|&h| tape.value(h).clone()).collect();
    (tape.value(fwd.logits).clone(), hidden)
}

#[test]
fn single_node_gcn_is_relu_then_linear() {
    let g = Graph::from_edges(1, &[]).unwrap();
    let x = Tensor::from_rows(&[[0.2, 0.5, 0.3]]);
    let d = Dataset::new("one", g, x.clone(), vec![Some(0)], SplitMasks::new(vec![0], vec![], vec![]), 2).unwrap();
    let mut cfg = small(ModelKind::Gcn, 1);
    cfg.row_normalize = false;
    let inputs = GraphInputs::new(&d, &cfg).unwrap();
    let m = model(cfg, &inputs, 3);
    let w0 = m.params.input.as_ref().unwrap();
    let expect = x.matmul(w0).unwrap().map(|v| v.max(0.0)).matmul(&m.params.output).unwrap();
    assert!(m.logits(&inputs).unwrap().max_abs_diff(&expect) < 1e-15);
}

#[test]
fn saturated_gates_reduce_to_single_layer_model() {
    let d = toy(10, 4, 3, 1);
    let deep_cfg = small(ModelKind::Ndggnet, 6);
    let inputs = GraphInputs::new(&d, &deep_cfg).unwrap();
    let mut deep = model(deep_cfg.clone(), &inputs, 2);
    for layer in &mut deep.params.layers {
        let gate = layer.gate.as_mut().unwrap();
        gate.bias = Tensor::filled(1, gate.bias.cols(), 1e3);
    }
    let shallow = Model {
        config: deep_cfg.with_layers(1),
        params: ModelParams {
            layers: Vec::new(),
            ..deep.params.clone()
        },
    };
    assert_eq!(deep.logits(&inputs).unwrap(), shallow.logits(&inputs).unwrap());
}

#[test]
fn gate_limits_are_bitwise() {
    for seed in 0..3 {
        let d = toy(9, 4, 3, 10 + seed);
        let cfg = small(ModelKind::Ndggnet, 5);
        let inputs = GraphInputs::new(&d, &cfg).unwrap();
        let gated = model(cfg.clone(), &inputs, seed);

        let (_, hidden) = forward(&gated, &inputs, GateMode::Fixed(1.0));
        assert_eq!(hidden.last().unwrap(), &hidden[0]);

        let gcn = Model {
            config: ModelConfig {
                kind: ModelKind::Gcn,
                ..cfg
            },
            params: ModelParams {
                embedding: None,
                layers: gated
                    .params
                    .layers
                    .iter()
                    .map(|l| ndgg::model::LayerParams {
                        weight: l.weight.clone(),
                        gate: None,
                    })
                    .collect(),
                ..gated.params.clone()
            },
        };
        let (zero, _) = forward(&gated, &inputs, GateMode::Fixed(0.0));
        assert_eq!(zero, gcn.logits(&inputs).unwrap());
    }
}

#[test]
fn learned_gate_stays_inside_unit_interval() {
    let d = toy(12, 3, 2, 4);
    let cfg = small(ModelKind::Ndggnet, 3);
    let inputs = GraphInputs::new(&d, &cfg).unwrap();
    let m = model(cfg, &inputs, 4);
    let (_, hidden) = forward(&m, &inputs, GateMode::Learned);
    // a blend of two finite states is bounded by them elementwise
    let (_, ones) = forward(&m, &inputs, GateMode::Fixed(1.0));
    let (_, zeros) = forward(&m, &inputs, GateMode::Fixed(0.0));
    assert_eq!(hidden.len(), ones.len());
    assert_eq!(hidden.len(), zeros.len());
    assert!(hidden.iter().all(Tensor::is_finite));
}

#[test]
fn sgc_matches_dense_oracle() {
    let edges = [(0, 1), (1, 2)];
    let g = Graph::from_edges(3, &edges).unwrap();
    let x = Tensor::from_rows(&[[1.0, 0.0], [0.5, 0.5], [0.0, 2.0]]);
    let d = Dataset::new(
        "path",
        g.clone(),
        x.clone(),
        vec![Some(0), Some(1), Some(0)],
        SplitMasks::new(vec![0], vec![1], vec![2]),
        2,
    )
    .unwrap();
    let mut cfg = ModelConfig::new(ModelKind::Sgc).with_layers(2);
    cfg.row_normalize = false;
    let inputs = GraphInputs::new(&d, &cfg).unwrap();
    let m = model(cfg, &inputs, 7);

    let a = normalize_adjacency(&g).to_dense();
    let a2 = a.matmul(&a).unwrap();
    let expect = a2.matmul(&x).unwrap().matmul(&m.params.output).unwrap();
    assert!(m.logits(&inputs).unwrap().max_abs_diff(&expect) < 1e-14);
}

#[test]
fn logits_are_permutation_equivariant() {
    for kind in ModelKind::ALL {
        let d = toy(14, 4, 3, 21);
        let cfg = small(kind, 4);
        let inputs = GraphInputs::new(&d, &cfg).unwrap();
        let m = model(cfg.clone(), &inputs, 5);
        let base = m.logits(&inputs).unwrap();

        let mut perm: Vec<usize> = (0..d.num_nodes()).collect();
        SplitRng::new(99).shuffle(&mut perm);
        let permuted = d.permute(&perm).unwrap();
        let p_inputs = GraphInputs::new(&permuted, &cfg).unwrap();
        let out = m.logits(&p_inputs).unwrap();
        for (old, &new) in perm.iter().enumerate() {
            for j in 0..base.cols() {
                assert!((out.get(new, j) - base.get(old, j)).abs() < 1e-10, "{kind}");
            }
        }
    }
}

fn tape_loss_and_grads(m: &Model, inputs: &GraphInputs, d: &Dataset) -> (f64, Vec<Tensor>) {
    let mut tape = Tape::new();
    let fwd = m.forward(&mut tape, inputs, false, &mut SplitRng::new(0), GateMode::Learned).unwrap();
    let loss = tape.softmax_cross_entropy(fwd.logits, d.labels(), &d.masks().train).unwrap();
    (tape.value(loss).get(0, 0), tape.backward(loss).unwrap().into_vec())
}

fn params_of(m: &Model) -> Vec<Tensor> {
    m.params.tensors().into_iter().cloned().collect()
}

fn check_against_reference(cfg: ModelConfig, d: &Dataset, seed: u64) -> f64 {
    let inputs = GraphInputs::new(d, &cfg).unwrap();
    let m = model(cfg.clone(), &inputs, seed);
    let (tape_loss, grads) = tape_loss_and_grads(&m, &inputs, d);
    let params = params_of(&m);
    let plain: Vec<Mat<f64>> = params.iter().map(Mat::from_tensor).collect();
    let ref_loss = reference::loss(&cfg, d, &plain, &d.masks().train);
    assert!((tape_loss - ref_loss).abs() < 1e-12, "{}: forward {tape_loss} vs {ref_loss}", cfg.kind);
    let fd = reference::central_differences(&cfg, d, &params, &d.masks().train, 1e-5);
    reference::max_relative_error(&grads, &fd)
}

#[test]
fn full_model_gradients_match_finite_differences() {
    for kind in ModelKind::ALL {
        for seed in 0..3 {
            let d = toy(8, 4, 3, 100 + seed);
            let layers = if kind == ModelKind::Sgc { 2 } else { 4 };
            let mut cfg = small(kind, layers);
            cfg.gate_hidden_layers = usize::from(seed == 2);
            let err = check_against_reference(cfg, &d, seed);
            assert!(err < 1e-6, "{kind} seed {seed}: {err}");
        }
    }
}

#[test]
fn raw_feature_gate_variant_matches_finite_differences() {
    let d = toy(8, 4, 2, 3);
    let mut cfg = small(ModelKind::Ndggnet, 3);
    cfg.gate_uses_raw_x = true;
    let inputs = GraphInputs::new(&d, &cfg).unwrap();
    let m = model(cfg.clone(), &inputs, 1);
    assert_eq!(m.params.layers[0].gate.as_ref().unwrap().weight.rows(), 3 + 4 + 2 * 5);
    let err = check_against_reference(cfg, &d, 1);
    assert!(err < 1e-6, "{err}");
}

#[test]
fn library_check_agrees_on_well_conditioned_models() {
    // plain f64 central differences are limited by roundoff; on shallow
    // models with sizeable gradients they still agree closely
    let d = toy(8, 4, 3, 7);
    for kind in [ModelKind::Gcn, ModelKind::Sgc] {
        let mut cfg = small(kind, 2);
        cfg.row_normalize = false;
        let inputs = GraphInputs::new(&d, &cfg).unwrap();
        let m = model(cfg, &inputs, 2);
        let err = gradient_check(&m, &inputs, d.labels(), &d.masks().train, 1e-5).unwrap();
        assert!(err < 1e-5, "{kind}: {err}");
    }
}

#[test]
fn mismatched_parameters_are_rejected() {
    let d = toy(8, 4, 2, 3);
    let cfg = small(ModelKind::Ndggnet, 3);
    let inputs = GraphInputs::new(&d, &cfg).unwrap();
    let mut m = model(cfg, &inputs, 1);
    m.params.layers.pop();
    assert!(m.logits(&inputs).is_err());
}
