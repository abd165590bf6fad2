mod common;

use cogat::autodiff::{finite_difference_check, Tape, Tensor};
use cogat::corpus::EncodedDialog;
use cogat::diagnostics::{gradcheck_fixture, run_gradcheck, GradcheckDims};
use cogat::model::{AblationMode, CoGat, ModelConfig, ModelDims};
use cogat::Error;
use common::random_fixture;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dialog(tokens: Vec<Vec<usize>>, speakers: Vec<usize>) -> EncodedDialog {
    let n = tokens.len();
    EncodedDialog {
        id: "t".into(),
        tokens,
        speakers,
        acts: vec![Some(0); n],
        sentiments: vec![Some(0); n],
    }
}

fn small_model(mode: AblationMode) -> CoGat {
    model_with_layers(mode, 2)
}

fn model_with_layers(mode: AblationMode, interaction_layers: usize) -> CoGat {
    let config = ModelConfig {
        hidden: 8,
        embedding: 6,
        heads: 2,
        speaker_layers: 2,
        interaction_layers,
        ablation: mode,
        ..ModelConfig::default()
    };
    let dims = ModelDims {
        vocab: 10,
        acts: 3,
        sentiments: 2,
    };
    CoGat::new(config, dims, 5).unwrap()
}

#[test]
fn single_token_utterance_vector_is_its_only_state() {
    let model = small_model(AblationMode::Full);
    let mut tape = Tape::new();
    let bound = model.params().bind(&mut tape);
    let emb = model.encoder().embed(&mut tape, &bound, &[4]).unwrap();
    let (h, e) = model
        .encoder()
        .encode_utterance(&mut tape, &bound, emb)
        .unwrap();
    assert_eq!(tape.shape(h), &[1, 8]);
    assert_eq!(tape.value(h), tape.value(e));
}

#[test]
fn zero_weights_give_zero_utterance_vector() {
    let mut model = small_model(AblationMode::Full);
    let mut params = model.params().clone();
    for p in params
        .iter_mut()
        .filter(|p| p.name.starts_with("encoder.utterance"))
    {
        p.tensor.values_mut().fill(0.0);
    }
    model.load_params(params).unwrap();
    let mut tape = Tape::new();
    let bound = model.params().bind(&mut tape);
    let emb = model
        .encoder()
        .embed(&mut tape, &bound, &[2, 3, 0])
        .unwrap();
    let (_, e) = model
        .encoder()
        .encode_utterance(&mut tape, &bound, emb)
        .unwrap();
    assert!(tape.value(e).iter().all(|&x| x == 0.0));
}

#[test]
fn distinct_speakers_attend_only_to_themselves() {
    let model = small_model(AblationMode::Full);
    let mut tape = Tape::new();
    let bound = model.params().bind(&mut tape);
    let fwd = model
        .forward(
            &mut tape,
            &bound,
            &dialog(vec![vec![2], vec![3, 4], vec![5]], vec![0, 1, 2]),
        )
        .unwrap();
    let speaker: Vec<_> = fwd
        .attention
        .iter()
        .filter(|(n, _)| n.starts_with("speaker"))
        .collect();
    assert_eq!(speaker.len(), 4);
    for (_, att) in speaker {
        let t = tape.tensor(*att);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(t.at(i, j), if i == j { 1.0 } else { 0.0 });
            }
        }
    }
}

#[test]
fn speaker_encoder_is_permutation_equivariant() {
    let model = small_model(AblationMode::Full);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..10 {
        let n = rng.gen_range(2..=6);
        let speakers: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
        let e: Vec<f64> = (0..n * 8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let pe: Vec<f64> = perm
            .iter()
            .flat_map(|&p| e[p * 8..(p + 1) * 8].to_vec())
            .collect();
        let ps: Vec<usize> = perm.iter().map(|&p| speakers[p]).collect();

        let mut tape = Tape::new();
        let bound = model.params().bind(&mut tape);
        let x = tape.constant(&Tensor::matrix(n, 8, e).unwrap());
        let px = tape.constant(&Tensor::matrix(n, 8, pe).unwrap());
        let act = model.config().activation;
        let (out, _) = model
            .encoder()
            .speaker_encode(&mut tape, &bound, x, &speakers, act)
            .unwrap();
        let (pout, _) = model
            .encoder()
            .speaker_encode(&mut tape, &bound, px, &ps, act)
            .unwrap();
        let (out, pout) = (tape.tensor(out), tape.tensor(pout));
        for (i, &p) in perm.iter().enumerate() {
            for (a, b) in pout.row(i).iter().zip(out.row(p)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn no_speaker_mode_passes_utterance_vectors_through() {
    let model = small_model(AblationMode::NoSpeaker);
    let mut tape = Tape::new();
    let bound = model.params().bind(&mut tape);
    let fwd = model
        .forward(
            &mut tape,
            &bound,
            &dialog(vec![vec![2], vec![3, 4]], vec![0, 0]),
        )
        .unwrap();
    assert_eq!(tape.value(fwd.e), tape.value(fwd.e_m));
    assert!(fwd.attention.iter().all(|(n, _)| !n.starts_with("speaker")));
}

#[test]
fn only_separate_mode_owns_a_second_stack() {
    for mode in AblationMode::ALL {
        let model = small_model(mode);
        let has = model
            .params()
            .iter()
            .any(|p| p.name.starts_with("separate."));
        assert_eq!(has, mode == AblationMode::Separate, "{mode}");
        assert_eq!(
            model.separate_layers().is_some(),
            mode == AblationMode::Separate
        );
    }
}

#[test]
fn separate_mode_feeds_both_decoders_the_same_sum() {
    let model = small_model(AblationMode::Separate);
    let mut tape = Tape::new();
    let bound = model.params().bind(&mut tape);
    let fwd = model
        .forward(
            &mut tape,
            &bound,
            &dialog(vec![vec![2], vec![3, 4], vec![7]], vec![0, 1, 0]),
        )
        .unwrap();
    // Changing S⁰ must move the act logits: the tasks meet only at the decoders.
    let noise = tape.constant(&Tensor::matrix(3, 8, vec![0.5; 24]).unwrap());
    let moved = model.interact(&mut tape, &bound, fwd.d0, noise).unwrap();
    assert_ne!(tape.value(fwd.act_logits), tape.value(moved.act_logits));
    // The single-task stacks themselves do not mix.
    assert_eq!(tape.value(fwd.d_l), tape.value(moved.d_l));
}

#[test]
fn one_layer_without_cross_utterance_edges_ignores_other_act_nodes() {
    // With more layers, information can hop act → sentiment → act.
    let model = model_with_layers(AblationMode::NoCrossUtterance, 1);
    let mut tape = Tape::new();
    let bound = model.params().bind(&mut tape);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut m =
        |_: ()| Tensor::matrix(3, 8, (0..24).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let (d, s) = (m(()), m(()));
    let mut d2 = d.clone();
    d2.values_mut()[8..].iter_mut().for_each(|x| *x += 1.0);
    let (a, b) = (tape.constant(&d), tape.constant(&s));
    let base = model.interact(&mut tape, &bound, a, b).unwrap();
    let a2 = tape.constant(&d2);
    let moved = model.interact(&mut tape, &bound, a2, b).unwrap();
    // Row 0 of act states cannot see act rows 1..3; it does see every sentiment node.
    assert_eq!(&tape.value(base.d_l)[..8], &tape.value(moved.d_l)[..8]);
}

#[test]
fn empty_dialog_is_rejected() {
    let model = small_model(AblationMode::Full);
    let mut tape = Tape::new();
    let bound = model.params().bind(&mut tape);
    assert!(matches!(
        model.forward(&mut tape, &bound, &dialog(vec![], vec![])),
        Err(Error::Config(_))
    ));
}

#[test]
fn out_of_range_token_is_a_vocab_error() {
    let model = small_model(AblationMode::Full);
    assert!(matches!(
        model.predict(&dialog(vec![vec![42]], vec![0])),
        Err(Error::Vocab { index: 42, .. })
    ));
}

#[test]
fn predictions_are_argmax_of_distributions() {
    let model = small_model(AblationMode::Full);
    let p = model
        .predict(&dialog(
            vec![vec![2, 3], vec![4], vec![5, 6, 7]],
            vec![0, 1, 0],
        ))
        .unwrap();
    for i in 0..3 {
        let row = p.act_probs.row(i);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(row.iter().all(|&x| x <= row[p.acts[i]]));
    }
}

#[test]
fn gradcheck_every_mode_tiny() {
    for mode in AblationMode::ALL {
        let report = run_gradcheck(GradcheckDims::Tiny, mode, 3, 1e-4).unwrap();
        assert!(
            report.max_rel_error() < 1e-3,
            "{mode}: {}",
            report.max_rel_error()
        );
    }
}

#[test]
fn gradcheck_small() {
    let report = run_gradcheck(GradcheckDims::Small, AblationMode::Full, 1, 1e-4).unwrap();
    assert!(report.max_rel_error() < 1e-3, "{}", report.max_rel_error());
}

#[test]
fn gradcheck_with_per_type_projection_and_relu() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (_, dialog) = gradcheck_fixture(GradcheckDims::Tiny, AblationMode::Full, 0).unwrap();
    let config = ModelConfig {
        hidden: 4,
        embedding: 6,
        heads: 2,
        speaker_layers: 1,
        interaction_layers: 2,
        per_type_projection: true,
        activation: cogat::nn::Activation::Relu,
        ablation: AblationMode::Full,
    };
    let dims = ModelDims {
        vocab: 8,
        acts: 2,
        sentiments: 2,
    };
    let model = CoGat::new(config, dims, rng.gen()).unwrap();
    assert!(model.params().iter().any(|p| p.name.ends_with("w_cross")));
    let report = finite_difference_check(model.params(), 1e-4, |t, b| {
        model.dialog_loss(t, b, &dialog)
    })
    .unwrap();
    assert!(report.max_rel_error() < 1e-3, "{}", report.max_rel_error());
}

#[test]
fn l2_penalty_gradient_is_two_c_theta() {
    let model = small_model(AblationMode::Full);
    let c = 0.3;
    let mut tape = Tape::new();
    let bound = model.params().bind(&mut tape);
    let pen = model.params().l2_penalty(&mut tape, &bound, c).unwrap();
    tape.backward(pen).unwrap();
    for (p, &v) in model.params().iter().zip(&bound) {
        let cols = p.tensor.dims2().map_or(p.tensor.numel(), |(_, c)| c);
        for (j, (g, theta)) in tape.grad(v).iter().zip(p.tensor.values()).enumerate() {
            let frozen = p.frozen_row.is_some_and(|r| j / cols == r);
            let want = if frozen { 0.0 } else { 2.0 * c * theta };
            assert!((g - want).abs() < 1e-14, "{}", p.name);
        }
    }
    // Central differences are exact on a quadratic, so a coarse step only cuts roundoff.
    let report = finite_difference_check(model.params(), 1e-3, |t, b| {
        Ok(model.params().l2_penalty(t, b, c).unwrap())
    })
    .unwrap();
    assert!(report.max_rel_error() < 1e-6, "{}", report.max_rel_error());
}

#[test]
fn random_fixtures_forward_without_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for i in 0..25 {
        let (model, dialog) = random_fixture(&mut rng, AblationMode::ALL[i % 5], 6);
        let mut tape = Tape::new();
        let bound = model.params().bind(&mut tape);
        let loss = model.dialog_loss(&mut tape, &bound, &dialog).unwrap();
        assert!(tape.value(loss)[0].is_finite());
        tape.backward(loss).unwrap();
    }
}

#[test]
fn seeded_initialization_is_reproducible() {
    let a = small_model(AblationMode::Full);
    let b = small_model(AblationMode::Full);
    assert_eq!(a.params(), b.params());
    let pad = a.params().by_name("encoder.embedding").unwrap();
    assert!(pad.tensor.row(0).iter().all(|&x| x == 0.0));
}
