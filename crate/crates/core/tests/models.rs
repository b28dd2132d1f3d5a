use mcqa_transfer::corpus::{McqaExample, PAD};
use mcqa_transfer::memn2n::{self, Memn2nHyper};
use mcqa_transfer::model::{Model, ModelConfig, ModelKind};
use mcqa_transfer::qacnn::{self, QacnnHyper};
use mcqa_transfer::rng::SeedStream;
use mcqa_transfer::tensor::{Graph, ParamStore, Tensor};
use proptest::prelude::*;
use rand::Rng;

#[path = "common/oracle.rs"]
mod oracle;

use oracle::*;

const VOCAB: usize = 12;

fn tiny_config(kind: ModelKind) -> ModelConfig {
    ModelConfig {
        kind,
        embed_dim: 4,
        qacnn: QacnnHyper {
            window1: 3,
            filters1: 2,
            window2: 3,
            filters2: 2,
            hidden: 3,
            max_choice_len: 3,
            attention_scale: 2.0,
        },
        ..ModelConfig::default()
    }
}

fn tiny_model(kind: ModelKind, seed: u64) -> Model {
    Model::init(&tiny_config(kind), VOCAB, None, &SeedStream::new(seed)).unwrap()
}

fn random_example(seed: u64, sentences: usize, choices: usize) -> McqaExample {
    let mut rng = SeedStream::new(seed).derive("example").rng();
    let mut words = |n: usize| -> Vec<usize> { (0..n).map(|_| rng.gen_range(2..VOCAB)).collect() };
    let story = (0..sentences).map(|i| words(1 + (i + seed as usize) % 4)).collect();
    let question = words(2);
    let choices = (0..choices).map(|j| words(1 + j % 3)).collect();
    McqaExample {
        story,
        question,
        choices,
        answer: Some(0),
        qtype: None,
    }
}

// ---- memn2n ----

#[test]
fn memn2n_encode_ignores_pad() {
    let t = memn2n::table_from_rows(&[vec![0.0, 0.0], vec![9.0, 9.0], vec![1.0, 3.0], vec![3.0, 5.0]]).unwrap();
    assert_eq!(memn2n::encode_sentence(&[2, 3], &t).unwrap(), vec![2.0, 4.0]);
    assert_eq!(memn2n::encode_sentence(&[2, PAD, 3, PAD], &t).unwrap(), vec![2.0, 4.0]);
    assert!(memn2n::encode_sentence(&[], &t).is_err());
    assert!(memn2n::encode_sentence(&[PAD, PAD], &t).is_err());
}

#[test]
fn memn2n_uniform_attention_on_identical_memories() {
    let m = tiny_model(ModelKind::Memn2n, 1);
    let mut ex = random_example(4, 1, 3);
    ex.story = vec![vec![3, 4]; 4];
    let out = memn2n::forward(&m.params, &m.config.memn2n, &ex).unwrap();
    for w in &out.attention[0] {
        assert!((w - 0.25).abs() < 1e-12);
    }
}

#[test]
fn memn2n_identical_choices_tie() {
    let m = tiny_model(ModelKind::Memn2n, 2);
    let mut ex = random_example(5, 3, 3);
    ex.choices[2] = ex.choices[0].clone();
    let p = m.choice_probs(&ex).unwrap();
    assert_eq!(p[0], p[2]);
}

fn hand_set_memn2n() -> ParamStore {
    let mut p = ParamStore::new();
    let rows = |r: &[[f64; 2]]| Tensor::from_rows(&r.iter().map(|x| x.to_vec()).collect::<Vec<_>>()).unwrap();
    p.insert(memn2n::EMBED_A, rows(&[[0., 0.], [0., 0.], [1., 0.], [0., 1.], [0.5, 0.5]]), false).unwrap();
    p.insert(memn2n::EMBED_B, rows(&[[0., 0.], [0., 0.], [2., 0.], [0., 1.], [1., 1.]]), false).unwrap();
    p.insert(memn2n::EMBED_C, rows(&[[0., 0.], [0., 0.], [0., 1.], [1., 0.], [-1., 2.]]), false).unwrap();
    p.insert(memn2n::EMBED_F, rows(&[[0., 0.], [0., 0.], [1., 1.], [1., -1.], [0., 2.]]), false).unwrap();
    p
}

#[test]
fn memn2n_hand_set_matches_arithmetic() {
    let p = hand_set_memn2n();
    let ex = McqaExample {
        story: vec![vec![2], vec![3, 4]],
        question: vec![2],
        choices: vec![vec![2], vec![3], vec![4]],
        answer: None,
        qtype: None,
    };
    // Memories: m = [(1,0), (0.25,0.75)], c = [(0,1), (0,1)], u = (2,0).
    // Logits 2 and 0.5, so the read vector is (0,1) whatever the weights.
    // u' = (2,1); scores 3, 1, 2.
    let z = 1.0f64.exp() + (-1.0f64).exp() + 1.0;
    let expect = [1.0f64.exp() / z, (-1.0f64).exp() / z, 1.0 / z];
    let out = memn2n::forward(&p, &Memn2nHyper::default(), &ex).unwrap();
    assert!(max_abs_diff(&out.choice_probs, &expect) < 1e-12);
    let a = [1.5f64.exp() / (1.5f64.exp() + 1.0), 1.0 / (1.5f64.exp() + 1.0)];
    assert!(max_abs_diff(&out.attention[0], &a) < 1e-12);
    assert!(max_abs_diff(&out.choice_probs, &o_memn2n(&p, 1, &ex)) < 1e-12);
}

#[test]
fn memn2n_multi_hop_matches_oracle() {
    let mut cfg = tiny_config(ModelKind::Memn2n);
    for hops in 1..=3 {
        cfg.memn2n.hops = hops;
        let m = Model::init(&cfg, VOCAB, None, &SeedStream::new(hops as u64)).unwrap();
        for s in 0..10 {
            let ex = random_example(s, 3, 4);
            let got = m.choice_probs(&ex).unwrap();
            assert!(max_abs_diff(&got, &o_memn2n(&m.params, hops, &ex)) < 1e-12);
        }
    }
}

#[test]
fn memn2n_gradients_match_finite_differences() {
    let mut cfg = tiny_config(ModelKind::Memn2n);
    cfg.memn2n.hops = 2;
    let m = Model::init(&cfg, VOCAB, None, &SeedStream::new(9)).unwrap();
    check_model_gradients(&m, &random_example(3, 3, 4), 1e-4);
}

// ---- qacnn ----

fn one_word_params(rows: &[Vec<f64>]) -> ParamStore {
    let cfg = tiny_config(ModelKind::Qacnn);
    let mut m = Model::init(&cfg, rows.len(), None, &SeedStream::new(0)).unwrap();
    m.params.get_mut(qacnn::EMBED).unwrap().data_mut().copy_from_slice(&rows.concat());
    m.params
}

#[test]
fn similarity_entries() {
    let p = one_word_params(&[
        vec![0.0; 4],
        vec![0.0; 4],
        vec![1.0, 0.0, 0.0, 0.0],
        vec![0.0, 2.0, 0.0, 0.0],
        vec![3.0, 0.0, 0.0, 0.0],
    ]);
    let ex = McqaExample {
        story: vec![vec![2, 3]],
        question: vec![4, 3],
        choices: vec![vec![2], vec![3]],
        answer: None,
        qtype: None,
    };
    let maps = qacnn::similarity_maps(&p, &tiny_config(ModelKind::Qacnn).qacnn, &ex).unwrap();
    assert_eq!(maps.sq[0].data(), &[1.0, 0.0, 0.0, 1.0]);
    // Choice 0 is padded to three columns; PAD columns are zero.
    assert_eq!(maps.sc[0][0].shape(), &[2, 3]);
    assert_eq!(maps.sc[0][0].data(), &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
}

#[test]
fn similarity_matches_dot_norm_oracle() {
    let m = tiny_model(ModelKind::Qacnn, 11);
    let ex = McqaExample {
        story: vec![vec![2, 5, 7]],
        question: vec![3, 9],
        choices: vec![vec![4], vec![6]],
        answer: None,
        qtype: None,
    };
    let maps = qacnn::similarity_maps(&m.params, &m.config.qacnn, &ex).unwrap();
    assert_eq!(maps.sq[0].shape(), &[3, 2]);
    let e = |i| emb(&m.params, qacnn::EMBED, i);
    for (r, s) in [2, 5, 7].iter().enumerate() {
        for (c, q) in [3, 9].iter().enumerate() {
            let (a, b) = (e(*s), e(*q));
            let expect = o_dot(&a, &b) / (o_dot(&a, &a).sqrt() * o_dot(&b, &b).sqrt());
            assert!((maps.sq[0].data()[r * 2 + c] - expect).abs() < 1e-12);
        }
    }
    for m in maps.sq.iter().chain(maps.sc.iter().flatten()) {
        assert!(m.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }
}

#[test]
fn word_attention_cases() {
    let flat = Tensor::new(vec![4, 2], vec![0.3; 8]).unwrap();
    for w in qacnn::word_attention(&flat, 5.0).unwrap() {
        assert!((w - 0.25).abs() < 1e-12);
    }
    // Max similarity 1 at one word, -1 elsewhere: logit gap 2 before scaling.
    let mut sq = vec![-1.0; 10];
    sq[4] = 1.0;
    let sq = Tensor::new(vec![5, 2], sq).unwrap();
    let scale = QacnnHyper::default().attention_scale;
    let a = qacnn::word_attention(&sq, scale).unwrap();
    let expect = (2.0 * scale).exp() / ((2.0 * scale).exp() + 4.0);
    assert!((a[2] - expect).abs() < 1e-12);
    assert!(a[2] > 0.9);
    assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn stage1_selection_and_linearity() {
    let m = tiny_model(ModelKind::Qacnn, 12);
    let mut rng = SeedStream::new(1).rng();
    let sc = vec![Tensor::uniform(vec![4, 3], -1.0, 1.0, &mut rng)];
    let w = m.params.get(qacnn::CNN1_W).unwrap();
    let b = m.params.get(qacnn::CNN1_B).unwrap();
    let rows: Vec<Vec<f64>> = (0..4).map(|i| sc[0].row(i).to_vec()).collect();
    let conv = o_conv(&rows, w, b);
    let one_hot = qacnn::stage1(&m.params, &sc, &[vec![0.0, 0.0, 1.0, 0.0]]).unwrap();
    assert!(max_abs_diff(&one_hot[0], &conv[2]) < 1e-12);
    let uniform = qacnn::stage1(&m.params, &sc, &[vec![0.25; 4]]).unwrap();
    assert!(max_abs_diff(&uniform[0], &o_mean(&conv)) < 1e-12);
}

#[test]
fn stage1_matches_loop_oracle() {
    let m = tiny_model(ModelKind::Qacnn, 13);
    let mut rng = SeedStream::new(2).rng();
    let sc: Vec<Tensor> = (0..2).map(|_| Tensor::uniform(vec![3, 3], -1.0, 1.0, &mut rng)).collect();
    let att = vec![o_softmax(&[0.1, 0.9, -0.3]), o_softmax(&[1.0, 0.0, 0.5])];
    let got = qacnn::stage1(&m.params, &sc, &att).unwrap();
    let w = m.params.get(qacnn::CNN1_W).unwrap();
    let b = m.params.get(qacnn::CNN1_B).unwrap();
    for s in 0..2 {
        let rows: Vec<Vec<f64>> = (0..3).map(|i| sc[s].row(i).to_vec()).collect();
        assert!(max_abs_diff(&got[s], &o_pool(&att[s], &o_conv(&rows, w, b))) < 1e-12);
    }
}

#[test]
fn stage2_cases() {
    let m = tiny_model(ModelKind::Qacnn, 14);
    let mut rng = SeedStream::new(3).rng();
    let one = vec![Tensor::uniform(vec![2, 2], -1.0, 1.0, &mut rng)];
    let (_, att) = qacnn::stage2(&m.params, &[vec![0.3, -0.2]], &one, 5.0).unwrap();
    assert_eq!(att, vec![1.0]);

    let sqs: Vec<Tensor> = (0..3).map(|_| Tensor::uniform(vec![2, 2], -1.0, 1.0, &mut rng)).collect();
    let feats = vec![vec![0.1, 0.4], vec![-0.3, 0.2], vec![0.7, 0.0]];
    let (got, att) = qacnn::stage2(&m.params, &feats, &sqs, 3.0).unwrap();
    let logits: Vec<f64> = sqs
        .iter()
        .map(|t| 3.0 * t.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let expect_att = o_softmax(&logits);
    assert!(max_abs_diff(&att, &expect_att) < 1e-12);
    let w = m.params.get(qacnn::CNN2_W).unwrap();
    let b = m.params.get(qacnn::CNN2_B).unwrap();
    assert!(max_abs_diff(&got, &o_pool(&expect_att, &o_conv(&feats, w, b))) < 1e-12);

    // One-hot sentence attention selects that sentence's convolved vector.
    let mut peaked = sqs.clone();
    peaked[1] = Tensor::new(vec![2, 2], vec![1.0; 4]).unwrap();
    for t in [0, 2] {
        peaked[t] = Tensor::new(vec![2, 2], vec![-1.0; 4]).unwrap();
    }
    let (got, att) = qacnn::stage2(&m.params, &feats, &peaked, 400.0).unwrap();
    assert_eq!(att[1], 1.0);
    assert!(max_abs_diff(&got, &o_conv(&feats, w, b)[1]) < 1e-12);
}

#[test]
fn qacnn_forward_matches_composed_oracle() {
    for seed in 0..20 {
        let m = tiny_model(ModelKind::Qacnn, seed);
        let ex = random_example(seed, 2, 2);
        let got = m.choice_probs(&ex).unwrap();
        assert!(max_abs_diff(&got, &o_qacnn(&m.params, &m.config.qacnn, &ex)) < 1e-10);
        let ex = random_example(seed + 100, 4, 5);
        let got = m.choice_probs(&ex).unwrap();
        assert!(max_abs_diff(&got, &o_qacnn(&m.params, &m.config.qacnn, &ex)) < 1e-10);
    }
}

#[test]
fn qacnn_identical_choices_tie_and_counts() {
    let m = tiny_model(ModelKind::Qacnn, 21);
    let mut ex = random_example(8, 3, 4);
    ex.choices[3] = ex.choices[1].clone();
    let p = m.choice_probs(&ex).unwrap();
    assert_eq!(p[1], p[3]);
    for k in [4, 5] {
        let p = m.choice_probs(&random_example(9, 3, k)).unwrap();
        assert_eq!(p.len(), k);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn export_attention_alignment() {
    let m = tiny_model(ModelKind::Qacnn, 22);
    let mut ex = random_example(10, 3, 4);
    ex.story[1].push(PAD);
    let rec = qacnn::export_attention(&m.params, &m.config.qacnn, &ex, 2).unwrap();
    assert_eq!(rec.word_level.len(), ex.story.len());
    for (w, s) in rec.word_level.iter().zip(&ex.story) {
        assert_eq!(w.len(), s.iter().filter(|t| **t != PAD).count());
        assert!(w.iter().all(|v| *v >= 0.0));
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    assert!((rec.sentence_level.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert!(qacnn::export_attention(&m.params, &m.config.qacnn, &ex, 4).is_err());
}

#[test]
fn qacnn_gradients_match_finite_differences() {
    for seed in 0..3 {
        let m = tiny_model(ModelKind::Qacnn, 30 + seed);
        check_model_gradients(&m, &random_example(seed, 3, 4), 1e-3);
    }
}

#[test]
fn memn2n_takes_vectors_only_when_asked() {
    let table = mcqa_transfer::corpus::EmbeddingMatrix::random(VOCAB, 4, &SeedStream::new(9));
    let mut cfg = tiny_config(ModelKind::Memn2n);
    let m = Model::init(&cfg, VOCAB, Some(&table), &SeedStream::new(1)).unwrap();
    assert!(m.pretrained.is_empty());
    assert!(!m.params.get(memn2n::EMBED_A).unwrap().bit_eq(&table.matrix));
    cfg.memn2n.pretrained_init = true;
    let m = Model::init(&cfg, VOCAB, Some(&table), &SeedStream::new(1)).unwrap();
    assert_eq!(m.pretrained, vec![memn2n::EMBED_A.to_string(), memn2n::EMBED_B.to_string()]);
    for name in [memn2n::EMBED_A, memn2n::EMBED_B] {
        assert!(m.params.get(name).unwrap().bit_eq(&table.matrix));
        assert!(m.params.is_frozen(name).unwrap());
    }
    assert!(!m.params.is_frozen(memn2n::EMBED_F).unwrap());
}

#[test]
fn frozen_pretrained_table_is_excluded_from_gradients() {
    let cfg = tiny_config(ModelKind::Qacnn);
    let table = mcqa_transfer::corpus::EmbeddingMatrix::random(VOCAB, 4, &SeedStream::new(5));
    let m = Model::init(&cfg, VOCAB, Some(&table), &SeedStream::new(5)).unwrap();
    assert!(m.params.is_frozen(qacnn::EMBED).unwrap());
    let mut g = Graph::new();
    let loss = m.loss(&mut g, &random_example(1, 3, 4), 0).unwrap();
    let grads = g.backward(loss).unwrap();
    assert!(grads.param(qacnn::EMBED).is_none());
    assert!(grads.param(qacnn::FC2_W).is_some());
}

fn check_model_gradients(m: &Model, ex: &McqaExample, tol: f64) {
    let err = max_gradient_error(m, ex, 1, 1e-5);
    assert!(err < tol, "relative error {err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn choice_permutation_equivariance(seed in 0u64..10_000, k in 2usize..6, rot in 1usize..5) {
        for kind in [ModelKind::Qacnn, ModelKind::Memn2n] {
            let m = tiny_model(kind, seed);
            let ex = random_example(seed, 3, k);
            let perm: Vec<usize> = (0..k).map(|i| (i + rot) % k).collect();
            let p = m.choice_probs(&ex).unwrap();
            let q = m.choice_probs(&ex.permute_choices(&perm)).unwrap();
            for (new, old) in perm.iter().enumerate() {
                prop_assert!((q[new] - p[*old]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn memn2n_sentence_order_invariance(seed in 0u64..10_000, rot in 1usize..4) {
        let m = tiny_model(ModelKind::Memn2n, seed);
        let ex = random_example(seed, 4, 3);
        let perm: Vec<usize> = (0..4).map(|i| (i + rot) % 4).collect();
        let p = m.choice_probs(&ex).unwrap();
        let q = m.choice_probs(&ex.permute_sentences(&perm)).unwrap();
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_maps_are_distributions(seed in 0u64..10_000, n in 1usize..6) {
        let m = tiny_model(ModelKind::Qacnn, seed);
        let ex = random_example(seed, n, 4);
        let out = qacnn::forward(&m.params, &m.config.qacnn, &ex).unwrap();
        for w in out.attention.word_level.iter().chain([&out.attention.sentence_level]) {
            prop_assert!(w.iter().all(|v| *v >= 0.0));
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let mem = tiny_model(ModelKind::Memn2n, seed);
        for w in memn2n::forward(&mem.params, &mem.config.memn2n, &ex).unwrap().attention {
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
