use super::cells::{CellIdx, CellKind};
use super::recurrent::{embed_sequence, flatten_head, StackedLayer};
use super::*;
use crate::tensor::Tensor;
use crate::textprep::{Label, LabeledDocument};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rand_values(n: usize, r: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| r.random_range(-0.5..0.5)).collect()
}

/// Toy spec at gradient-check sizes: vocab 10, dim 4, hidden 3.
pub(crate) fn toy_spec(variant: Variant) -> ModelSpec {
    let mut spec = ModelSpec::new(variant, 4);
    spec.hidden_units = 3;
    spec.max_len = 6;
    spec.dropout_p = 0.0;
    spec.trainable_embeddings = true;
    if let Some(conv) = spec.conv.as_mut() {
        if variant.needs_routing() {
            conv.filters = 2;
        } else {
            conv.kernel_sizes = vec![2, 3];
            conv.num_layers = 2;
            conv.filters = 2;
            conv.pool_window = 2;
        }
    }
    if let Some(routing) = spec.routing.as_mut() {
        routing.conv_filters = 2;
        routing.capsule_filters = 2;
        routing.capsule_dim = 4;
        if variant == Variant::CapsuleB {
            spec.max_len = 8;
        }
    }
    if let Some(attn) = spec.attention.as_mut() {
        attn.word_context_dim = 3;
        attn.sentence_context_dim = 3;
        attn.conv_filters = 2;
        attn.sentence_len = 3;
    }
    spec
}

fn toy_model(variant: Variant, seed: u64) -> Model {
    Model::with_random_embeddings(toy_spec(variant), 10, &mut rng(seed)).unwrap()
}

// ---- cell unit tests ------------------------------------------------------

struct LstmSetup {
    tensors: Vec<Tensor>,
}

impl LstmSetup {
    fn zeros(d: usize, h: usize) -> LstmSetup {
        let mut tensors = Vec::new();
        for _ in 0..4 {
            tensors.push(Tensor::zeros(vec![d, h]));
            tensors.push(Tensor::zeros(vec![h, h]));
            tensors.push(Tensor::vector(vec![0.0; h]));
        }
        LstmSetup { tensors }
    }

    fn random(d: usize, h: usize, r: &mut ChaCha8Rng) -> LstmSetup {
        let mut tensors = Vec::new();
        for _ in 0..4 {
            tensors.push(Tensor::new(vec![d, h], rand_values(d * h, r)).unwrap());
            tensors.push(Tensor::new(vec![h, h], rand_values(h * h, r)).unwrap());
            tensors.push(Tensor::vector(rand_values(h, r)));
        }
        LstmSetup { tensors }
    }

    fn set_bias(&mut self, gate: usize, value: f64) {
        for v in self.tensors[gate * 3 + 2].values_mut() {
            *v = value;
        }
    }

    fn bind(&self, tape: &mut Tape) -> LstmGates {
        let v: Vec<Var> = self.tensors.iter().map(|t| tape.param(t.clone())).collect();
        LstmGates {
            w_i: v[0],
            u_i: v[1],
            b_i: v[2],
            w_f: v[3],
            u_f: v[4],
            b_f: v[5],
            w_g: v[6],
            u_g: v[7],
            b_g: v[8],
            w_o: v[9],
            u_o: v[10],
            b_o: v[11],
        }
    }
}

#[test]
fn lstm_cell_all_zero_gives_zero_state() {
    let setup = LstmSetup::zeros(2, 3);
    let mut tape = Tape::new();
    let g = setup.bind(&mut tape);
    let x = tape.constant(Tensor::row(vec![0.0, 0.0]));
    let h = tape.constant(Tensor::row(vec![0.0; 3]));
    let c = tape.constant(Tensor::row(vec![0.0; 3]));
    let (h1, c1) = lstm_cell(&mut tape, &g, x, h, c).unwrap();
    assert_eq!(tape.values(h1), &[0.0; 3]);
    assert_eq!(tape.values(c1), &[0.0; 3]);
}

#[test]
fn lstm_cell_saturated_gates_keep_memory() {
    // forget gate ~1, input gate ~0: the cell state passes through.
    let mut setup = LstmSetup::random(2, 3, &mut rng(4));
    setup.set_bias(1, 100.0); // f
    setup.set_bias(0, -100.0); // i
    let mut tape = Tape::new();
    let g = setup.bind(&mut tape);
    let x = tape.constant(Tensor::row(vec![0.3, -0.7]));
    let h = tape.constant(Tensor::row(vec![0.1, 0.2, -0.3]));
    let c_prev = vec![0.5, -0.25, 0.75];
    let c = tape.constant(Tensor::row(c_prev.clone()));
    let (_, c1) = lstm_cell(&mut tape, &g, x, h, c).unwrap();
    for (got, want) in tape.values(c1).iter().zip(&c_prev) {
        assert!((got - want).abs() <= 1e-12, "{got} vs {want}");
    }
}

#[test]
fn gru_cell_zero_update_gate_carries_state() {
    let h_dim = 3;
    let mut tensors = Vec::new();
    let mut r = rng(9);
    for _ in 0..3 {
        tensors.push(Tensor::new(vec![2, h_dim], rand_values(2 * h_dim, &mut r)).unwrap());
        tensors.push(Tensor::new(vec![h_dim, h_dim], rand_values(h_dim * h_dim, &mut r)).unwrap());
        tensors.push(Tensor::vector(rand_values(h_dim, &mut r)));
    }
    // z gate saturated to 0: zero its weights and drive the bias down.
    for v in tensors[0].values_mut() {
        *v = 0.0;
    }
    for v in tensors[1].values_mut() {
        *v = 0.0;
    }
    for v in tensors[2].values_mut() {
        *v = -100.0;
    }
    let mut tape = Tape::new();
    let v: Vec<Var> = tensors.iter().map(|t| tape.param(t.clone())).collect();
    let g = GruGates {
        w_z: v[0],
        u_z: v[1],
        b_z: v[2],
        w_r: v[3],
        u_r: v[4],
        b_r: v[5],
        w_h: v[6],
        u_h: v[7],
        b_h: v[8],
    };
    let x = tape.constant(Tensor::row(vec![0.4, -0.2]));
    let h_prev = vec![0.3, -0.6, 0.1];
    let h = tape.constant(Tensor::row(h_prev.clone()));
    let h1 = gru_cell(&mut tape, &g, x, h).unwrap();
    for (got, want) in tape.values(h1).iter().zip(&h_prev) {
        assert!((got - want).abs() <= 1e-12);
    }
}

#[test]
fn gru_cell_zero_everything_gives_zero() {
    let mut tape = Tape::new();
    let mut z = |s: Vec<usize>, tape: &mut Tape| tape.constant(Tensor::zeros(s));
    let g = GruGates {
        w_z: z(vec![2, 3], &mut tape),
        u_z: z(vec![3, 3], &mut tape),
        b_z: z(vec![3], &mut tape),
        w_r: z(vec![2, 3], &mut tape),
        u_r: z(vec![3, 3], &mut tape),
        b_r: z(vec![3], &mut tape),
        w_h: z(vec![2, 3], &mut tape),
        u_h: z(vec![3, 3], &mut tape),
        b_h: z(vec![3], &mut tape),
    };
    let x = tape.constant(Tensor::row(vec![0.0, 0.0]));
    let h = tape.constant(Tensor::row(vec![0.0; 3]));
    let h1 = gru_cell(&mut tape, &g, x, h).unwrap();
    assert_eq!(tape.values(h1), &[0.0; 3]);
}

#[test]
fn rnn_cell_zero_gives_zero() {
    let mut tape = Tape::new();
    let w = tape.constant(Tensor::zeros(vec![2, 3]));
    let u = tape.constant(Tensor::zeros(vec![3, 3]));
    let b = tape.constant(Tensor::zeros(vec![3]));
    let g = RnnGates { w, u, b };
    let x = tape.constant(Tensor::row(vec![1.0, -1.0]));
    let h = tape.constant(Tensor::row(vec![0.5; 3]));
    let h1 = rnn_cell(&mut tape, &g, x, h).unwrap();
    assert_eq!(tape.values(h1), &[0.0; 3]);
}

/// Central finite differences for a scalar tape program over explicit
/// tensor leaves; rebuilds the graph per probe, independent of backward.
/// The build closure returns the loss handle and the leaf handles.
fn fd_gradient(
    build: &dyn Fn(&mut Tape, &[Tensor]) -> (Var, Vec<Var>),
    leaves: &[Tensor],
    which: usize,
    step: f64,
) -> Vec<f64> {
    let eval = |leaves: &[Tensor]| {
        let mut tape = Tape::new();
        let (loss, _) = build(&mut tape, leaves);
        tape.values(loss)[0]
    };
    (0..leaves[which].numel())
        .map(|i| {
            let mut plus = leaves.to_vec();
            plus[which].values_mut()[i] += step;
            let mut minus = leaves.to_vec();
            minus[which].values_mut()[i] -= step;
            (eval(&plus) - eval(&minus)) / (2.0 * step)
        })
        .collect()
}

fn check_leaves(
    build: &dyn Fn(&mut Tape, &[Tensor]) -> (Var, Vec<Var>),
    leaves: &[Tensor],
    tol: f64,
    what: &str,
) {
    let mut tape = Tape::new();
    let (loss, handles) = build(&mut tape, leaves);
    tape.backward(loss).unwrap();
    for which in 0..leaves.len() {
        let analytic = tape.grad(handles[which]).expect("leaf grad").to_vec();
        let numeric = fd_gradient(build, leaves, which, 1e-5);
        for (i, (&a, &n)) in analytic.iter().zip(&numeric).enumerate() {
            let denom = a.abs().max(n.abs()).max(1.0);
            assert!(
                ((a - n) / denom).abs() <= tol,
                "{what} leaf {which}[{i}]: {a} vs {n}"
            );
        }
    }
}

#[test]
fn lstm_unrolled_gradient_matches_finite_differences() {
    let (d, t_len) = (2, 5);
    let mut r = rng(17);
    let setup = LstmSetup::random(d, 3, &mut r);
    let mut leaves = setup.tensors.clone();
    leaves.push(Tensor::new(vec![t_len, d], rand_values(t_len * d, &mut r)).unwrap());
    let build = |tape: &mut Tape, leaves: &[Tensor]| -> (Var, Vec<Var>) {
        let v: Vec<Var> = leaves.iter().map(|t| tape.param(t.clone())).collect();
        let g = LstmGates {
            w_i: v[0],
            u_i: v[1],
            b_i: v[2],
            w_f: v[3],
            u_f: v[4],
            b_f: v[5],
            w_g: v[6],
            u_g: v[7],
            b_g: v[8],
            w_o: v[9],
            u_o: v[10],
            b_o: v[11],
        };
        let seq = v[12];
        let mut h = tape.constant(Tensor::row(vec![0.0; 3]));
        let mut c = h;
        for t in 0..5 {
            let x = tape.select_row(seq, t).unwrap();
            let (hn, cn) = lstm_cell(tape, &g, x, h, c).unwrap();
            h = hn;
            c = cn;
        }
        let sq = tape.mul(h, h).unwrap();
        (tape.sum(sq), v)
    };
    check_leaves(&build, &leaves, 1e-4, "lstm unrolled");
}

#[test]
fn gru_unrolled_gradient_matches_finite_differences() {
    let (d, h_dim, t_len) = (2, 3, 4);
    let mut r = rng(23);
    let mut leaves = Vec::new();
    for _ in 0..3 {
        leaves.push(Tensor::new(vec![d, h_dim], rand_values(d * h_dim, &mut r)).unwrap());
        leaves.push(Tensor::new(vec![h_dim, h_dim], rand_values(h_dim * h_dim, &mut r)).unwrap());
        leaves.push(Tensor::vector(rand_values(h_dim, &mut r)));
    }
    leaves.push(Tensor::new(vec![t_len, d], rand_values(t_len * d, &mut r)).unwrap());
    let build = |tape: &mut Tape, leaves: &[Tensor]| -> (Var, Vec<Var>) {
        let v: Vec<Var> = leaves.iter().map(|t| tape.param(t.clone())).collect();
        let g = GruGates {
            w_z: v[0],
            u_z: v[1],
            b_z: v[2],
            w_r: v[3],
            u_r: v[4],
            b_r: v[5],
            w_h: v[6],
            u_h: v[7],
            b_h: v[8],
        };
        let seq = v[9];
        let mut h = tape.constant(Tensor::row(vec![0.0; 3]));
        for t in 0..4 {
            let x = tape.select_row(seq, t).unwrap();
            h = gru_cell(tape, &g, x, h).unwrap();
        }
        let sq = tape.mul(h, h).unwrap();
        (tape.sum(sq), v)
    };
    check_leaves(&build, &leaves, 1e-4, "gru unrolled");
}

// ---- spec validation --------------------------------------------------------

#[test]
fn spec_rejects_variant_specific_omissions() {
    let mut spec = ModelSpec::new(Variant::CapsuleA, 4);
    spec.routing = None;
    assert!(spec.validate().is_err());

    let mut spec = ModelSpec::new(Variant::CapsuleA, 4);
    spec.conv = None;
    assert!(spec.validate().is_err());

    let mut spec = ModelSpec::new(Variant::Hahnn, 4);
    spec.attention = None;
    assert!(spec.validate().is_err());

    let mut spec = ModelSpec::new(Variant::Lstm, 4);
    spec.conv = Some(ConvSpec::hybrid_default());
    assert!(spec.validate().is_err());

    let mut spec = ModelSpec::new(Variant::Lstm, 4);
    spec.attention = Some(AttentionSpec::default());
    assert!(spec.validate().is_err());
}

#[test]
fn spec_enforces_gram_sets() {
    let mut spec = ModelSpec::new(Variant::CapsuleA, 4);
    spec.routing.as_mut().unwrap().grams = vec![3, 4, 5];
    assert!(spec.validate().is_err());
    let spec_b = ModelSpec::new(Variant::CapsuleB, 4);
    assert_eq!(spec_b.routing.as_ref().unwrap().grams, vec![3, 4, 5]);
    assert!(spec_b.validate().is_ok());
}

#[test]
fn variant_names_round_trip() {
    for v in Variant::ALL {
        assert_eq!(Variant::parse(&v.name()).unwrap(), v);
    }
    assert!(Variant::parse("bert").is_err());
}

// ---- forward contracts ------------------------------------------------------

fn sample_ids(len: usize) -> Vec<u32> {
    (0..len).map(|i| 2 + (i as u32 % 8)).collect()
}

#[test]
fn every_variant_produces_four_normalized_scores() {
    for variant in Variant::ALL {
        let model = toy_model(variant, 5);
        let proba = model.predict_proba(&sample_ids(8)).unwrap();
        assert_eq!(proba.len(), 4);
        match model.head_kind() {
            HeadKind::Softmax => {
                assert!(
                    (proba.iter().sum::<f64>() - 1.0).abs() <= 1e-12,
                    "{variant:?}: {proba:?}"
                );
                assert!(proba.iter().all(|&p| p > 0.0));
            }
            HeadKind::CapsuleNorms => {
                assert!(
                    proba.iter().all(|&p| (0.0..1.0).contains(&p)),
                    "{variant:?}: {proba:?}"
                );
            }
        }
    }
}

#[test]
fn zero_head_predicts_uniform() {
    let mut model = toy_model(Variant::Lstm, 3);
    for p in model.params_mut().items_mut() {
        if p.name.starts_with("head.") {
            for v in p.tensor.values_mut() {
                *v = 0.0;
            }
        }
    }
    let proba = model.predict_proba(&sample_ids(5)).unwrap();
    for p in proba {
        assert!((p - 0.25).abs() <= 1e-12);
    }
}

#[test]
fn predictions_are_invariant_to_pad_length() {
    for variant in Variant::ALL {
        let model = toy_model(variant, 11);
        let base = sample_ids(6);
        let mut padded_20 = base.clone();
        padded_20.resize(20, 0);
        let mut padded_50 = base.clone();
        padded_50.resize(50, 0);
        let a = model.predict_proba(&base).unwrap();
        let b = model.predict_proba(&padded_20).unwrap();
        let c = model.predict_proba(&padded_50).unwrap();
        assert_eq!(a, b, "{variant:?}");
        assert_eq!(a, c, "{variant:?}");
    }
}

#[test]
fn single_token_prediction_invariant_to_pad_length() {
    let model = toy_model(Variant::Gru, 13);
    let mut short = vec![4u32];
    short.resize(20, 0);
    let mut long = vec![4u32];
    long.resize(50, 0);
    assert_eq!(
        model.predict_proba(&short).unwrap(),
        model.predict_proba(&long).unwrap()
    );
}

#[test]
fn eval_forward_is_pure() {
    for variant in [Variant::Lstm, Variant::CnnGru, Variant::Hahnn, Variant::CapsuleA] {
        let model = toy_model(variant, 29);
        let ids = sample_ids(8);
        let a = model.predict_proba(&ids).unwrap();
        let b = model.predict_proba(&ids).unwrap();
        assert_eq!(a, b, "{variant:?}");
    }
}

#[test]
fn all_pad_input_is_empty_sequence_error() {
    let model = toy_model(Variant::Lstm, 7);
    assert!(matches!(
        model.predict_proba(&[0, 0, 0]),
        Err(Error::EmptySequence)
    ));
}

#[test]
fn strict_forward_rejects_too_short_sequences() {
    let model = toy_model(Variant::CnnLstm, 7);
    // kernels (2,3) with pool 2: min_len = 3 + 2 - 1 = 4
    assert_eq!(model.min_len(), 4);
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let err = model
        .forward_scores(&mut tape, &bound, &[2, 3], Mode::Eval, &mut rng(0))
        .unwrap_err();
    assert!(matches!(err, Error::SequenceTooShort { .. }));
    // The pipeline path pads instead of failing.
    assert!(model.predict_proba(&[2, 3]).is_ok());
}

#[test]
fn embedding_dim_mismatch_is_config_error() {
    let spec = toy_spec(Variant::Lstm);
    let table = Tensor::zeros(vec![10, 5]); // spec wants dim 4
    assert!(matches!(
        Model::with_embedding_table(spec, table, None, &mut rng(0)),
        Err(Error::Config(_))
    ));
}

#[test]
fn bilstm_tied_weights_palindrome_symmetry() {
    // With identical forward/backward cells, a palindromic input makes the
    // backward state sequence the mirror of the forward one.
    let (d, h, t_len) = (3, 4, 5);
    let mut r = rng(31);
    let setup = LstmSetup::random(d, h, &mut r);
    let mut tape = Tape::new();
    let g = setup.bind(&mut tape);
    let half: Vec<f64> = rand_values(d * 2, &mut r);
    let mut rows: Vec<f64> = half.clone();
    rows.extend(rand_values(d, &mut r)); // middle row
    let mirrored: Vec<f64> = half.chunks(d).rev().flatten().copied().collect();
    rows.extend(mirrored);
    let seq = tape.constant(Tensor::new(vec![t_len, d], rows).unwrap());

    let mut run = |tape: &mut Tape, reverse: bool| -> Vec<Vec<f64>> {
        let order: Vec<usize> = if reverse {
            (0..t_len).rev().collect()
        } else {
            (0..t_len).collect()
        };
        let mut h_v = tape.constant(Tensor::row(vec![0.0; h]));
        let mut c_v = h_v;
        let mut out = vec![Vec::new(); t_len];
        for t in order {
            let x = tape.select_row(seq, t).unwrap();
            let (hn, cn) = lstm_cell(tape, &g, x, h_v, c_v).unwrap();
            h_v = hn;
            c_v = cn;
            out[t] = tape.values(hn).to_vec();
        }
        out
    };
    let fwd = run(&mut tape, false);
    let bwd = run(&mut tape, true);
    for t in 0..t_len {
        for (a, b) in fwd[t].iter().zip(&bwd[t_len - 1 - t]) {
            assert!((a - b).abs() <= 1e-12);
        }
    }
}

#[test]
fn bilstm_concat_width_is_twice_hidden() {
    let model = toy_model(Variant::BiLstm, 3);
    // The time-distributed dense consumes 2h columns.
    let td = model.params().get("td_dense.w").unwrap();
    assert_eq!(td.tensor.shape(), &[6, 3]);
}

#[test]
fn cnn_alignment_length_matches_shape_arithmetic() {
    // kernel sizes (3,5), pool 2, L=50: branch lengths 24 and 23, so the
    // concatenated sequence is truncated to 23.
    let mut tape = Tape::new();
    let mut r = rng(41);
    let x = tape.constant(Tensor::new(vec![50, 4], rand_values(200, &mut r)).unwrap());
    let k3 = tape.constant(Tensor::new(vec![3, 4, 2], rand_values(24, &mut r)).unwrap());
    let k5 = tape.constant(Tensor::new(vec![5, 4, 2], rand_values(40, &mut r)).unwrap());
    let c3 = tape.conv1d(x, k3, 1, 1).unwrap();
    let p3 = tape.maxpool1d(c3, 2).unwrap();
    let c5 = tape.conv1d(x, k5, 1, 1).unwrap();
    let p5 = tape.maxpool1d(c5, 2).unwrap();
    assert_eq!(tape.shape(p3), &[24, 2]);
    assert_eq!(tape.shape(p5), &[23, 2]);
    let s3 = tape.slice_rows(p3, 0, 23).unwrap();
    let cat = tape.concat_cols(&[s3, p5]).unwrap();
    assert_eq!(tape.shape(cat), &[23, 4]);
}

#[test]
fn stacked_identity_second_layer_reproduces_depth_one() {
    let mut model = toy_model(Variant::StackedLstm(2), 57);
    let h = model.spec().hidden_units;
    // Shrink layer 0 and the embedding so the states are small enough for
    // tanh(tanh(x)) ~ x to hold tightly.
    for p in model.params_mut().items_mut() {
        if p.name.starts_with("layer0.") || p.name == "embedding" {
            for v in p.tensor.values_mut() {
                *v *= 0.02;
            }
        }
        if p.name.starts_with("layer1.") {
            let gate = p.name.rsplit('.').next().unwrap();
            match gate {
                "b_i" | "b_o" => p.tensor.values_mut().fill(100.0),
                "b_f" => p.tensor.values_mut().fill(-100.0),
                "w_g" => {
                    p.tensor.values_mut().fill(0.0);
                    for i in 0..h {
                        p.tensor.values_mut()[i * h + i] = 1.0;
                    }
                }
                _ => p.tensor.values_mut().fill(0.0),
            }
        }
    }
    let ids = sample_ids(5);
    let full = model.predict_proba(&ids).unwrap();

    // Depth-1 reference: layer-0 states straight into the shared head.
    let Arch::Stacked(arch) = &model.arch else {
        panic!("stacked arch expected")
    };
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let seq = embed_sequence(
        &mut tape,
        bound[model.embedding_idx],
        &ids,
        0.0,
        Mode::Eval,
        &mut rng(0),
    )
    .unwrap();
    let StackedLayer::Uni(cell) = &arch.layers[0] else {
        panic!("uni layer expected")
    };
    let states = cell.run_over(&mut tape, &bound, seq, false).unwrap();
    let stacked = tape.stack_rows(&states).unwrap();
    let logits = flatten_head(
        &mut tape,
        &bound,
        &arch.td_dense,
        &arch.head,
        model.spec().max_len,
        stacked,
    )
    .unwrap();
    let sm = tape.softmax(logits);
    let reference = tape.values(sm);
    for (a, b) in full.iter().zip(reference) {
        assert!((a - b).abs() <= 1e-3, "{full:?} vs {reference:?}");
    }
}

#[test]
fn parameter_counts_match_shape_arithmetic() {
    let cell = |kind: CellKind, input: usize, h: usize| kind.param_count(input, h);
    let dense = |i: usize, o: usize| i * o + o;
    let (v, d, h, max_len) = (10usize, 4usize, 3usize, 6usize);
    let emb = v * d;

    for variant in Variant::ALL {
        let model = toy_model(variant, 99);
        let expected = match variant {
            Variant::Rnn => emb + cell(CellKind::Rnn, d, h) + dense(h, h) + dense(h, 4),
            Variant::Lstm => emb + cell(CellKind::Lstm, d, h) + dense(h, h) + dense(h, 4),
            Variant::Gru => emb + cell(CellKind::Gru, d, h) + dense(h, h) + dense(h, 4),
            Variant::BiLstm => {
                emb + 2 * cell(CellKind::Lstm, d, h) + dense(2 * h, h) + dense(max_len * h, 4)
            }
            Variant::StackedLstm(depth) => {
                emb + cell(CellKind::Lstm, d, h)
                    + (depth as usize - 1) * cell(CellKind::Lstm, h, h)
                    + dense(h, h)
                    + dense(max_len * h, 4)
            }
            Variant::StackedBiLstm(depth) => {
                emb + 2 * cell(CellKind::Lstm, d, h)
                    + (depth as usize - 1) * 2 * cell(CellKind::Lstm, 2 * h, h)
                    + dense(2 * h, h)
                    + dense(max_len * h, 4)
            }
            Variant::CnnGru | Variant::CnnLstm | Variant::CnnBiLstm => {
                let f = 2usize;
                let convs = (2 * d * f + f) + (3 * d * f + f);
                let seq_dim = 2 * f;
                let (rec, head_in) = match variant {
                    Variant::CnnGru => (cell(CellKind::Gru, seq_dim, h), h),
                    Variant::CnnLstm => (cell(CellKind::Lstm, seq_dim, h), h),
                    _ => (2 * cell(CellKind::Lstm, seq_dim, h), 2 * h),
                };
                emb + convs + rec + dense(head_in, 4)
            }
            Variant::Hahnn => {
                let (cf, a) = (2usize, 3usize);
                let word_dim = 2 * h + 3 * cf;
                let convs: usize = [3, 4, 5].iter().map(|k| k * d * cf + cf).sum();
                emb + 2 * cell(CellKind::Gru, d, h)
                    + convs
                    + (dense(word_dim, a) + a)
                    + 2 * cell(CellKind::Gru, word_dim, h)
                    + (dense(2 * h, a) + a)
                    + dense(2 * h, 4)
            }
            Variant::CapsuleA | Variant::CapsuleB => {
                let (f, types, dim) = (2usize, 2usize, 4usize);
                let grams: &[usize] = if variant == Variant::CapsuleA {
                    &[3]
                } else {
                    &[3, 4, 5]
                };
                let per_branch = |g: usize| {
                    (g * d * f + f) + (f * types * dim + types * dim) + (types * 4 * dim * dim)
                };
                emb + grams.iter().map(|&g| per_branch(g)).sum::<usize>()
            }
        };
        assert_eq!(
            model.params().total_count(),
            expected,
            "{variant:?}\n{}",
            model.describe()
        );
    }
}

#[test]
fn capsule_branch_counts_match_variants() {
    let a = toy_model(Variant::CapsuleA, 1);
    let b = toy_model(Variant::CapsuleB, 1);
    let Arch::Capsule(arch_a) = &a.arch else { panic!() };
    let Arch::Capsule(arch_b) = &b.arch else { panic!() };
    assert_eq!(arch_a.branch_count(), 1);
    assert_eq!(arch_a.branch_grams(), vec![3]);
    assert_eq!(arch_b.branch_count(), 3);
    assert_eq!(arch_b.branch_grams(), vec![3, 4, 5]);
}

// ---- attention ----------------------------------------------------------------

#[test]
fn single_sentence_document_gets_unit_sentence_attention() {
    let model = toy_model(Variant::Hahnn, 61);
    let ids = vec![2, 3, 4]; // one 3-token sentence (sentence_len = 3)
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let (_, trace) = model
        .forward_with_attention(&mut tape, &bound, &ids, Mode::Eval, &mut rng(0))
        .unwrap();
    assert_eq!(trace.sentence_weights, vec![1.0]);
    assert_eq!(trace.word_weights.len(), 1);
}

#[test]
fn attention_weights_sum_to_one() {
    let model = toy_model(Variant::Hahnn, 67);
    let ids = sample_ids(8); // three sentences under sentence_len = 3
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let (_, trace) = model
        .forward_with_attention(&mut tape, &bound, &ids, Mode::Eval, &mut rng(0))
        .unwrap();
    assert!(trace.word_weights.len() > 1);
    for w in &trace.word_weights {
        assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }
    assert!((trace.sentence_weights.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
}

// ---- routing -------------------------------------------------------------------

#[test]
fn routing_first_iteration_coupling_is_uniform() {
    let mut tape = Tape::new();
    let mut r = rng(73);
    let uhat = tape.param(Tensor::new(vec![3, 4, 2], rand_values(24, &mut r)).unwrap());
    let (_, coupling) = dynamic_routing(&mut tape, uhat, 3).unwrap();
    for &c in tape.values(coupling[0]) {
        assert!((c - 0.25).abs() <= 1e-12);
    }
}

#[test]
fn routing_coupling_rows_sum_to_one_every_iteration() {
    let mut tape = Tape::new();
    let mut r = rng(79);
    let uhat = tape.param(Tensor::new(vec![4, 3, 2], rand_values(24, &mut r)).unwrap());
    let (_, coupling) = dynamic_routing(&mut tape, uhat, 4).unwrap();
    assert_eq!(coupling.len(), 4);
    for c in coupling {
        for row in tape.values(c).chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }
}

fn scalar_squash(s: &[f64]) -> Vec<f64> {
    let norm = s.iter().map(|x| x * x).sum::<f64>().sqrt();
    let factor = norm / (1.0 + norm * norm);
    s.iter().map(|&x| x * factor).collect()
}

#[test]
fn routing_matches_scalar_reimplementation() {
    // 2 input capsules, 2 output capsules, 2 dims, hand-set predictions.
    let uhat_vals = [[[0.5, -0.2], [0.1, 0.9]], [[-0.3, 0.4], [0.8, 0.2]]];
    let iterations = 3;

    // Independent scalar routing.
    let mut b = [[0.0f64; 2]; 2];
    let mut v = [[0.0f64; 2]; 2];
    for iter in 0..iterations {
        let mut c = [[0.0f64; 2]; 2];
        for i in 0..2 {
            let m = b[i][0].max(b[i][1]);
            let e0 = (b[i][0] - m).exp();
            let e1 = (b[i][1] - m).exp();
            c[i][0] = e0 / (e0 + e1);
            c[i][1] = e1 / (e0 + e1);
        }
        for j in 0..2 {
            let mut s = [0.0f64; 2];
            for i in 0..2 {
                for q in 0..2 {
                    s[q] += c[i][j] * uhat_vals[i][j][q];
                }
            }
            let sq = scalar_squash(&s);
            v[j] = [sq[0], sq[1]];
        }
        if iter + 1 < iterations {
            for i in 0..2 {
                for j in 0..2 {
                    b[i][j] += uhat_vals[i][j][0] * v[j][0] + uhat_vals[i][j][1] * v[j][1];
                }
            }
        }
    }

    let mut tape = Tape::new();
    let flat: Vec<f64> = uhat_vals.iter().flatten().flatten().copied().collect();
    let uhat = tape.param(Tensor::new(vec![2, 2, 2], flat).unwrap());
    let (out, _) = dynamic_routing(&mut tape, uhat, iterations).unwrap();
    let got = tape.values(out);
    for j in 0..2 {
        for q in 0..2 {
            assert!(
                (got[j * 2 + q] - v[j][q]).abs() <= 1e-12,
                "v[{j}][{q}]: {} vs {}",
                got[j * 2 + q],
                v[j][q]
            );
        }
    }
}

#[test]
fn capsule_forward_matches_scalar_reimplementation() {
    let model = toy_model(Variant::CapsuleA, 83);
    let routing = model.spec().routing.clone().unwrap();
    let (filters, types, dim) = (
        routing.conv_filters,
        routing.capsule_filters,
        routing.capsule_dim,
    );
    let d = model.spec().embedding_dim;
    let gram = 3;
    let ids = sample_ids(6);

    let values = |name: &str| model.params().get(name).unwrap().tensor.values().to_vec();
    let emb = values("embedding");
    let kern = values("branch3.conv.kernels");
    let conv_bias = values("branch3.conv.bias");
    let prim_w = values("branch3.primary.w");
    let prim_b = values("branch3.primary.b");
    let transform = values("branch3.transform");

    // Scalar forward, written independently of the tape ops.
    let t_len = ids.len();
    let x: Vec<Vec<f64>> = ids
        .iter()
        .map(|&i| emb[i as usize * d..(i as usize + 1) * d].to_vec())
        .collect();
    let positions = t_len - gram + 1;
    let mut feats = vec![vec![0.0; filters]; positions];
    for p in 0..positions {
        for f in 0..filters {
            let mut s = conv_bias[f];
            for j in 0..gram {
                for i in 0..d {
                    s += x[p + j][i] * kern[(j * d + i) * filters + f];
                }
            }
            feats[p][f] = s.max(0.0);
        }
    }
    let mut primary = Vec::new(); // (positions * types) rows of dim values
    for feat in &feats {
        let mut pre = prim_b.clone();
        for (f, &fv) in feat.iter().enumerate() {
            for q in 0..types * dim {
                pre[q] += fv * prim_w[f * types * dim + q];
            }
        }
        for t in 0..types {
            primary.push(scalar_squash(&pre[t * dim..(t + 1) * dim]));
        }
    }
    let i_total = primary.len();
    let classes = 4;
    let mut uhat = vec![vec![vec![0.0; dim]; classes]; i_total];
    for (i, u) in primary.iter().enumerate() {
        let t = i % types;
        for j in 0..classes {
            let w = &transform[(t * classes + j) * dim * dim..(t * classes + j + 1) * dim * dim];
            for q in 0..dim {
                let mut s = 0.0;
                for p in 0..dim {
                    s += u[p] * w[p * dim + q];
                }
                uhat[i][j][q] = s;
            }
        }
    }
    let mut b = vec![vec![0.0f64; classes]; i_total];
    let mut v = vec![vec![0.0f64; dim]; classes];
    for iter in 0..routing.iterations {
        let mut c = vec![vec![0.0f64; classes]; i_total];
        for i in 0..i_total {
            let m = b[i].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = b[i].iter().map(|&x| (x - m).exp()).collect();
            let sum: f64 = exps.iter().sum();
            for j in 0..classes {
                c[i][j] = exps[j] / sum;
            }
        }
        for (j, vj) in v.iter_mut().enumerate() {
            let mut s = vec![0.0; dim];
            for i in 0..i_total {
                for q in 0..dim {
                    s[q] += c[i][j] * uhat[i][j][q];
                }
            }
            *vj = scalar_squash(&s);
        }
        if iter + 1 < routing.iterations {
            for i in 0..i_total {
                for j in 0..classes {
                    b[i][j] += (0..dim).map(|q| uhat[i][j][q] * v[j][q]).sum::<f64>();
                }
            }
        }
    }
    let expected: Vec<f64> = v
        .iter()
        .map(|vj| vj.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();

    let got = model.predict_proba(&ids).unwrap();
    for (g, e) in got.iter().zip(&expected) {
        assert!((g - e).abs() <= 1e-12, "{got:?} vs {expected:?}");
    }
}

// ---- training --------------------------------------------------------------------

/// Tiny linearly separable set: each class has its own marker token.
pub(crate) fn separable_docs(per_class: usize, len: usize) -> Vec<LabeledDocument> {
    let mut docs = Vec::new();
    for c in 0..4 {
        for i in 0..per_class {
            let marker = 2 + c as u32;
            let filler = 6 + ((i + c) % 4) as u32;
            let mut ids = vec![filler; len];
            ids[0] = marker;
            ids[len / 2] = marker;
            docs.push(LabeledDocument {
                token_ids: ids,
                label: Label::from_index(c).unwrap(),
                raw: crate::textprep::CleanComment {
                    text: String::new(),
                    source_id: (c * per_class + i) as u64,
                    chars_removed: 0,
                },
            });
        }
    }
    docs
}

#[test]
fn lstm_overfits_separable_set() {
    let mut spec = toy_spec(Variant::Lstm);
    spec.hidden_units = 8;
    spec.optimizer = crate::tensor::OptimizerConfig::adam(0.02, 0.0);
    spec.batch_size = 8;
    let mut model = Model::with_random_embeddings(spec, 10, &mut rng(3)).unwrap();
    let docs = separable_docs(8, 6);
    let history = train_model(&mut model, &docs, &[], 60, 12).unwrap();
    let last = history.epochs.last().unwrap();
    assert!(
        last.train_accuracy >= 0.99,
        "accuracy history {:?}",
        history
            .epochs
            .iter()
            .map(|e| e.train_accuracy)
            .collect::<Vec<_>>()
    );
    let first = history.epochs.first().unwrap();
    assert!(last.train_loss < first.train_loss);
}

#[test]
fn training_is_deterministic_per_seed() {
    let docs = separable_docs(4, 6);
    let run = || {
        let mut spec = toy_spec(Variant::Gru);
        spec.optimizer = crate::tensor::OptimizerConfig::adam(0.05, 0.0);
        let mut model = Model::with_random_embeddings(spec, 10, &mut rng(21)).unwrap();
        let history = train_model(&mut model, &docs, &docs, 5, 77).unwrap();
        let weights: Vec<f64> = model
            .params()
            .items()
            .iter()
            .flat_map(|p| p.tensor.values().iter().copied())
            .collect();
        (history, weights)
    };
    let (h1, w1) = run();
    let (h2, w2) = run();
    assert_eq!(h1, h2);
    assert_eq!(w1, w2);
}

#[test]
fn empty_training_set_is_error() {
    let mut model = toy_model(Variant::Lstm, 5);
    assert!(matches!(
        train_model(&mut model, &[], &[], 1, 0),
        Err(Error::Training(_))
    ));
}

#[test]
fn early_stopping_halts_training() {
    let docs = separable_docs(4, 6);
    let mut spec = toy_spec(Variant::Lstm);
    spec.early_stopping = true;
    spec.regularizer.early_stop_patience = 1;
    // A huge learning rate makes validation loss bounce immediately.
    spec.optimizer = crate::tensor::OptimizerConfig::sgd(50.0);
    let mut model = Model::with_random_embeddings(spec, 10, &mut rng(5)).unwrap();
    let history = train_model(&mut model, &docs, &docs, 50, 9).unwrap();
    assert!(history.stopped_early);
    assert!(history.epochs.len() < 50);
}

#[test]
fn cross_validation_aggregate_is_mean_of_folds() {
    let docs = separable_docs(6, 6);
    let outcome = cross_validate(&docs, 3, true, 42, 30, 1, |seed| {
        let mut spec = toy_spec(Variant::Gru);
        spec.hidden_units = 8;
        spec.optimizer = crate::tensor::OptimizerConfig::adam(0.02, 0.0);
        spec.batch_size = 8;
        Model::with_random_embeddings(spec, 10, &mut rng(seed))
    })
    .unwrap();
    let mean_acc: f64 = outcome.fold_reports.iter().map(|r| r.accuracy).sum::<f64>()
        / outcome.fold_reports.len() as f64;
    assert!((outcome.aggregate.accuracy - mean_acc).abs() <= 1e-12);
    assert_eq!(outcome.fold_reports.len(), 3);
}

#[test]
fn cross_validation_two_folds_learn_separable_set() {
    let docs = separable_docs(8, 6);
    let outcome = cross_validate(&docs, 2, true, 7, 60, 2, |seed| {
        let mut spec = toy_spec(Variant::Lstm);
        spec.hidden_units = 8;
        spec.optimizer = crate::tensor::OptimizerConfig::adam(0.02, 0.0);
        spec.batch_size = 8;
        Model::with_random_embeddings(spec, 10, &mut rng(seed))
    })
    .unwrap();
    for (i, report) in outcome.fold_reports.iter().enumerate() {
        assert!(report.accuracy >= 0.9, "fold {i}: {}", report.accuracy);
    }
}

#[test]
fn cross_validation_is_deterministic() {
    let docs = separable_docs(4, 6);
    let run = || {
        cross_validate(&docs, 2, true, 11, 8, 1, |seed| {
            Model::with_random_embeddings(toy_spec(Variant::Gru), 10, &mut rng(seed))
        })
        .unwrap()
    };
    let a = run();
    let b = run();
    assert_eq!(a.fold_reports, b.fold_reports);
    assert_eq!(a.histories, b.histories);
}
