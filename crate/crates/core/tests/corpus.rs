use std::collections::BTreeSet;

use mcqa_transfer::corpus::*;
use mcqa_transfer::rng::SeedStream;
use mcqa_transfer::Error;
use proptest::prelude::*;

fn small() -> SynthConfig {
    let mut cfg = SynthConfig::default();
    cfg.source_sizes.train = 60;
    cfg.source_sizes.dev = 10;
    cfg.source_sizes.test = 10;
    cfg.target_sizes.train = 20;
    cfg.target_sizes.dev = 10;
    cfg.target_sizes.test = 40;
    cfg
}

#[test]
fn dataset_round_trip_is_identity() {
    let corpus = gen_synthetic(&small()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for ds in [&corpus.source.train, &corpus.target.dev, &corpus.target.test] {
        let path = dir.path().join(format!("x.{}.jsonl", ds.split));
        ds.save(&path).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(back.examples, ds.examples);
        assert_eq!(back.split, ds.split);
        assert_eq!(back.choice_count, ds.choice_count);
        let again = dir.path().join(format!("y.{}.jsonl", ds.split));
        back.save(&again).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
    }
}

#[test]
fn vectors_round_trip_exactly() {
    let corpus = gen_synthetic(&small()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.txt");
    write_vectors(&path, &corpus.vectors).unwrap();
    let back = read_vectors(&path, Some(32)).unwrap();
    assert_eq!(back, corpus.vectors);
    assert!(matches!(read_vectors(&path, Some(16)), Err(Error::Parse { .. } | Error::Shape { .. })));
}

#[test]
fn pretrained_vectors_cover_vocab_and_freeze() {
    let corpus = gen_synthetic(&small()).unwrap();
    let c = &corpus;
    let all = [&c.source.train, &c.source.dev, &c.source.test, &c.target.train, &c.target.dev, &c.target.test];
    let vocab = build_vocab(&all, 1);
    let known: BTreeSet<&str> = corpus.vectors.iter().map(|(t, _)| t.as_str()).collect();
    for t in vocab.tokens().iter().skip(2) {
        assert!(known.contains(t.as_str()), "{t} has no vector");
    }
    let m = EmbeddingMatrix::from_vectors(&corpus.vectors, &vocab, 32, &SeedStream::new(0)).unwrap();
    assert!(m.frozen);
    assert!(m.matrix.data()[..32].iter().all(|x| *x == 0.0));
}

/// Reads the answer off the story by rule: the token that follows the
/// questioned entity, compared in canonical (unshifted) form.
fn rule_answer(corpus: &SynthCorpus, ex: &RawExample) -> Vec<usize> {
    let entity = corpus.canonical(ex.question.split(' ').last().unwrap()).to_string();
    let mut next = None;
    for s in &ex.story {
        let toks: Vec<&str> = s.split(' ').collect();
        for w in toks.windows(2) {
            if corpus.canonical(w[0]) == entity {
                next = Some(corpus.canonical(w[1]).to_string());
            }
        }
    }
    let next = next.expect("questioned entity appears in the story");
    ex.choices
        .iter()
        .enumerate()
        .filter(|(_, c)| corpus.canonical(c.split(' ').last().unwrap()) == next)
        .map(|(i, _)| i)
        .collect()
}

#[test]
fn rule_oracle_solves_every_split() {
    let corpus = gen_synthetic(&small()).unwrap();
    for ds in [&corpus.source.train, &corpus.source.test, &corpus.target.train, &corpus.target.test] {
        for ex in &ds.examples {
            let hits = rule_answer(&corpus, ex);
            assert_eq!(hits, vec![ex.answer.unwrap()], "exactly one consistent choice");
        }
    }
}

#[test]
fn question_types_follow_side_settings() {
    let corpus = gen_synthetic(&small()).unwrap();
    let types = |ds: &Dataset| ds.examples.iter().map(|e| e.qtype.unwrap()).collect::<BTreeSet<u8>>();
    assert_eq!(types(&corpus.source.train), BTreeSet::from([1, 2]));
    assert_eq!(types(&corpus.target.test), BTreeSet::from([1, 2, 3]));
    assert_eq!(corpus.source.train.choice_count, 5);
    assert_eq!(corpus.target.test.choice_count, 4);

    // type 3 offers the word right before the entity as a distractor
    for ex in corpus.target.test.examples.iter().filter(|e| e.qtype == Some(3)) {
        let entity = corpus.canonical(ex.question.split(' ').last().unwrap()).to_string();
        let lead = ex
            .story
            .iter()
            .flat_map(|s| {
                let t: Vec<String> = s.split(' ').map(|w| corpus.canonical(w).to_string()).collect();
                t.windows(2).filter(|w| w[1] == entity).map(|w| w[0].clone()).collect::<Vec<_>>()
            })
            .next()
            .unwrap();
        assert!(ex.choices.iter().any(|c| corpus.canonical(c.split(' ').last().unwrap()) == lead));
    }
}

#[test]
fn generation_is_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    gen_synthetic(&small()).unwrap().write(a.path()).unwrap();
    gen_synthetic(&small()).unwrap().write(b.path()).unwrap();
    let mut names: Vec<_> = std::fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 7);
    for n in names {
        assert_eq!(std::fs::read(a.path().join(&n)).unwrap(), std::fs::read(b.path().join(&n)).unwrap());
    }
    let other = gen_synthetic(&SynthConfig { seed: 9, ..small() }).unwrap();
    assert_ne!(other.source.train, gen_synthetic(&small()).unwrap().source.train);
}

#[test]
fn shift_controls_synonym_rate() {
    let count = |shift: f64| {
        let c = gen_synthetic(&SynthConfig { shift, ..small() }).unwrap();
        let (mut syn, mut total) = (0usize, 0usize);
        for ex in &c.target.test.examples {
            for text in ex.story.iter().chain(&ex.choices).chain(std::iter::once(&ex.question)) {
                for t in text.split(' ') {
                    if t.starts_with('x') {
                        syn += 1;
                    }
                    if t.starts_with('x') || t.starts_with('s') {
                        total += 1;
                    }
                }
            }
        }
        syn as f64 / total as f64
    };
    assert_eq!(count(0.0), 0.0);
    assert_eq!(count(1.0), 1.0);
    let mid = count(0.3);
    assert!((mid - 0.3).abs() < 0.05, "{mid}");
}

#[test]
fn unshifted_target_uses_source_vocabulary() {
    let cfg = SynthConfig {
        shift: 0.0,
        target_choices: 5,
        target_qtypes: vec![1, 2],
        ..small()
    };
    let c = gen_synthetic(&cfg).unwrap();
    let vocab = |ds: &Dataset| build_vocab(&[ds], 1).tokens().iter().cloned().collect::<BTreeSet<String>>();
    let src = vocab(&c.source.train);
    let tgt = vocab(&c.target.test);
    let content = |s: &BTreeSet<String>| s.iter().filter(|t| t.starts_with('s')).count();
    assert!(tgt.iter().all(|t| !t.starts_with('x')));
    assert!(content(&src) > 0 && content(&tgt) > 0);
}

#[test]
fn bad_synth_configs_rejected() {
    for cfg in [
        SynthConfig { sentence_len: 2, ..small() },
        SynthConfig { target_qtypes: vec![], ..small() },
        SynthConfig { source_qtypes: vec![4], ..small() },
        SynthConfig { shift: 1.5, ..small() },
        SynthConfig { target_pool: 500, ..small() },
    ] {
        assert!(matches!(gen_synthetic(&cfg), Err(Error::Config(_))));
    }
}

#[test]
fn known_split_sizes_checked_only_for_known_names() {
    let ex = RawExample {
        story: vec!["a b".into()],
        question: "a".into(),
        choices: vec!["a".into(), "b".into(), "c".into(), "d".into()],
        answer: Some(0),
        qtype: Some(1),
    };
    let make = |split, n| Dataset::new("toefl", split, vec![ex.clone(); n]).unwrap();
    let good = DatasetTriple {
        train: make(Split::Train, 717),
        dev: make(Split::Dev, 124),
        test: make(Split::Test, 122),
    };
    assert!(check_known_split_sizes("toefl-manual", &good).is_ok());
    let bad = DatasetTriple {
        test: make(Split::Test, 121),
        ..good.clone()
    };
    assert!(matches!(check_known_split_sizes("toefl-asr", &bad), Err(Error::Validation { .. })));
    assert!(check_known_split_sizes("custom", &bad).is_ok());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn subsamples_nest(n in 0usize..300, a in 0.0f64..=1.0, b in 0.0f64..=1.0, seed in any::<u64>()) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let examples: Vec<RawExample> = (0..n)
            .map(|i| RawExample {
                story: vec![format!("w{i}")],
                question: "q".into(),
                choices: vec!["a".into(), "b".into()],
                answer: Some(i % 2),
                qtype: None,
            })
            .collect();
        let ds = Dataset::new("d", Split::Train, examples).unwrap();
        let small = subsample(&ds, lo, seed).unwrap();
        let large = subsample(&ds, hi, seed).unwrap();
        prop_assert_eq!(small.len(), (lo * n as f64 + 1e-9).floor() as usize);
        prop_assert!(small.examples.iter().all(|e| large.examples.contains(e)));
        // original order kept
        let pos: Vec<usize> = large.examples.iter().map(|e| ds.examples.iter().position(|x| x == e).unwrap()).collect();
        prop_assert!(pos.windows(2).all(|w| w[0] < w[1]));
    }
}
