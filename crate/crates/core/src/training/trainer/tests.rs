use super::*;
use crate::corpusgen::{generate, CodeSample, Dataset};
use crate::models::Head;
use crate::training::{prepare, student_loss, PrepareConfig};

fn tiny_data(seed: u64, n: usize) -> PreparedData {
    let cfg = PrepareConfig {
        vocab_size: 200,
        seq_len: 24,
        ..PrepareConfig::default()
    };
    prepare(&generate(seed, n, 0.3).unwrap(), &cfg, None).unwrap()
}

fn ta_cfg(d: &PreparedData) -> TeacherAConfig {
    TeacherAConfig {
        embed_dim: 8,
        filters_per_width: 4,
        ..TeacherAConfig::new(d.code_vocab.len())
    }
}

fn tb_cfg(d: &PreparedData) -> TeacherBConfig {
    TeacherBConfig {
        embed_dim: 8,
        hidden_dim: 8,
        ..TeacherBConfig::new(d.structure_vocab.len())
    }
}

fn st_cfg(d: &PreparedData) -> StudentConfig {
    StudentConfig {
        embed_dim: 8,
        layers: 1,
        heads: 2,
        ffn_dim: 16,
        seq_len: d.config.seq_len,
        ..StudentConfig::new(d.code_vocab.len())
    }
}

fn quick(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 8,
        learning_rate: 1e-2,
        seed,
        ..TrainConfig::default()
    }
}

fn teachers(d: &PreparedData, seed: u64) -> (Checkpoint, Checkpoint) {
    let a = train_teacher_a(d, &ta_cfg(d), &quick(1, seed), None).unwrap().checkpoint;
    let b = train_teacher_b(d, &tb_cfg(d), &quick(1, seed), None).unwrap().checkpoint;
    (a, b)
}

fn mean_ce(ckpt: &Checkpoint, samples: &[PreparedSample]) -> f64 {
    let logits = teacher_logits(ckpt, samples).unwrap();
    logits
        .iter()
        .zip(samples)
        .map(|(l, s)| -predict_from_logits(*l).probs[usize::from(s.label)].ln())
        .sum::<f64>()
        / samples.len() as f64
}

/// Two samples that differ in one planted token.
fn separable() -> PreparedData {
    let a = CodeSample {
        id: "a".into(),
        code: "int f(int *p){ return p[9]; }".into(),
        label: 1,
    };
    let b = CodeSample {
        id: "b".into(),
        code: "int f(int *p){ return 0; }".into(),
        label: 0,
    };
    let data = Dataset {
        name: "pair".into(),
        train: vec![a.clone(), b.clone()],
        val: vec![a.clone(), b.clone()],
        test: vec![a, b],
    };
    let cfg = PrepareConfig {
        vocab_size: 60,
        seq_len: 20,
        ..PrepareConfig::default()
    };
    prepare(&data, &cfg, None).unwrap()
}

#[test]
fn one_step_decreases_loss_for_every_model() {
    let d = separable();
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 2,
        ..TrainConfig::default()
    };
    let zero = |c: ModelConfig| -> ModelConfig {
        match c {
            ModelConfig::TeacherA(c) => ModelConfig::TeacherA(TeacherAConfig { dropout_rate: 0.0, ..c }),
            ModelConfig::TeacherB(c) => ModelConfig::TeacherB(TeacherBConfig { dropout_rate: 0.0, ..c }),
            ModelConfig::Student(c) => ModelConfig::Student(StudentConfig { dropout_rate: 0.0, ..c }),
        }
    };
    for config in [
        zero(ModelConfig::TeacherA(ta_cfg(&d))),
        zero(ModelConfig::TeacherB(tb_cfg(&d))),
        zero(ModelConfig::Student(st_cfg(&d))),
    ] {
        let init = config.init_store(&mut rng_stream(cfg.seed, STREAM_INIT)).unwrap();
        let hash = vocab_hash_for(config.kind(), &d);
        let before = Checkpoint::from_store(config.clone(), &init, hash, None).unwrap();
        let after = match &config {
            ModelConfig::TeacherA(c) => train_teacher_a(&d, c, &cfg, None),
            ModelConfig::TeacherB(c) => train_teacher_b(&d, c, &cfg, None),
            ModelConfig::Student(c) => train_student(
                &d,
                None,
                None,
                DistillationWeights::cross_entropy_only(),
                c,
                &TrainConfig {
                    ablation: Ablation::WithoutBoth,
                    ..cfg.clone()
                },
                None,
            ),
        }
        .unwrap()
        .checkpoint;
        let (l0, l1) = (mean_ce(&before, &d.train), mean_ce(&after, &d.train));
        assert!(l1 < l0, "{}: {l0} -> {l1}", config.kind());
    }
}

#[test]
fn same_seed_same_checkpoints() {
    let d = tiny_data(1, 60);
    let (a1, b1) = teachers(&d, 5);
    let (a2, b2) = teachers(&d, 5);
    assert_eq!(a1.to_bytes().unwrap(), a2.to_bytes().unwrap());
    assert_eq!(b1.to_bytes().unwrap(), b2.to_bytes().unwrap());
    let s = |a, b| {
        train_student(&d, Some(a), Some(b), DistillationWeights::default(), &st_cfg(&d), &quick(2, 5), None)
            .unwrap()
            .checkpoint
            .to_bytes()
            .unwrap()
    };
    assert_eq!(s(&a1, &b1), s(&a2, &b2));
    let (a3, _) = teachers(&d, 6);
    assert_ne!(a1.to_bytes().unwrap(), a3.to_bytes().unwrap());
}

#[test]
fn without_teachers_matches_plain_cross_entropy_loop() {
    let d = tiny_data(2, 60);
    let cfg = TrainConfig {
        ablation: Ablation::WithoutBoth,
        ..quick(2, 9)
    };
    let scfg = st_cfg(&d);
    let got = train_student(&d, None, None, DistillationWeights::default(), &scfg, &cfg, None).unwrap();

    // Independent loop: same streams, cross-entropy of the cls head only.
    let config = ModelConfig::Student(scfg.clone());
    let mut store = config.init_store(&mut rng_stream(9, STREAM_INIT)).unwrap();
    let model = Student::bind(&scfg, &store).unwrap();
    let mut adam = AdamState::new(cfg.learning_rate);
    let (mut shuffle, mut dropout) = (rng_stream(9, STREAM_SHUFFLE), rng_stream(9, STREAM_DROPOUT));
    let mut per_epoch = Vec::new();
    for _ in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..d.train.len()).collect();
        order.shuffle(&mut shuffle);
        for idx in order.chunks(cfg.batch_size) {
            store.zero_grad();
            {
                let mut tape = Tape::new(&store);
                let batch: Vec<_> = idx.iter().map(|&i| &d.train[i].sequence).collect();
                let out = model.forward(&mut tape, &batch, Attention::Compact, Some(&mut dropout)).unwrap();
                let p = tape.softmax_t(out.cls, 1.0).unwrap();
                let labels: Vec<usize> = idx.iter().map(|&i| d.train[i].label as usize).collect();
                let loss = tape.cross_entropy(p, &labels).unwrap();
                tape.backward(loss).unwrap();
            }
            adam_step(&mut store, &mut adam).unwrap();
        }
        per_epoch.push(store.snapshot());
    }
    let best = got.checkpoint.metrics.unwrap().epoch;
    let want: Vec<&Tensor> = per_epoch[best - 1].iter().collect();
    let have: Vec<&Tensor> = got.checkpoint.params.iter().map(|(_, t)| t).collect();
    assert_eq!(have, want);
}

#[test]
fn zero_delta_ignores_teacher_a() {
    let d = tiny_data(3, 60);
    let (a1, b) = teachers(&d, 1);
    let (a2, _) = teachers(&d, 2);
    assert_ne!(teacher_logits(&a1, &d.train).unwrap(), teacher_logits(&a2, &d.train).unwrap());
    let w = DistillationWeights::new(0.5, 0.0, 0.5, 1.0).unwrap();
    let run = |a| train_student(&d, Some(a), Some(&b), w, &st_cfg(&d), &quick(1, 3), None).unwrap().checkpoint;
    assert_eq!(run(&a1), run(&a2));
    // With a positive weight the teacher does matter.
    let w = DistillationWeights::default();
    let run = |a| train_student(&d, Some(a), Some(&b), w, &st_cfg(&d), &quick(1, 3), None).unwrap().checkpoint;
    assert_ne!(run(&a1), run(&a2));
}

#[test]
fn teachers_stay_frozen() {
    let d = tiny_data(4, 60);
    let (a, b) = teachers(&d, 1);
    let (ab, bb) = (a.to_bytes().unwrap(), b.to_bytes().unwrap());
    train_student(&d, Some(&a), Some(&b), DistillationWeights::default(), &st_cfg(&d), &quick(1, 1), None).unwrap();
    assert_eq!(a.to_bytes().unwrap(), ab);
    assert_eq!(b.to_bytes().unwrap(), bb);
}

#[test]
fn teacher_slots_validated() {
    let d = tiny_data(5, 60);
    let (a, b) = teachers(&d, 1);
    let w = DistillationWeights::default();
    let err = train_student(&d, Some(&a), Some(&a), w, &st_cfg(&d), &quick(1, 1), None).unwrap_err();
    assert_eq!(
        err,
        TrainError::KindMismatch {
            slot: "teacher B",
            expected: ModelKind::TeacherB,
            found: ModelKind::TeacherA
        }
    );
    let err = train_student(&d, Some(&a), None, w, &st_cfg(&d), &quick(1, 1), None).unwrap_err();
    assert!(matches!(err, TrainError::Precondition(_)), "{err}");
    let mut other = b.clone();
    other.vocab_hash = "0".repeat(64);
    let err = train_student(&d, Some(&a), Some(&other), w, &st_cfg(&d), &quick(1, 1), None).unwrap_err();
    assert!(matches!(err, TrainError::VocabMismatch { what: "structure", .. }), "{err}");
    // w/oB only needs teacher A.
    let cfg = TrainConfig {
        ablation: Ablation::WithoutB,
        ..quick(1, 1)
    };
    train_student(&d, Some(&a), None, w, &st_cfg(&d), &cfg, None).unwrap();
}

#[test]
fn bad_inputs_rejected() {
    let d = tiny_data(6, 60);
    let mut wrong = st_cfg(&d);
    wrong.vocab_size += 1;
    assert!(matches!(
        train_student(&d, None, None, DistillationWeights::default(), &wrong, &TrainConfig { ablation: Ablation::WithoutBoth, ..quick(1, 1) }, None),
        Err(TrainError::Config(_))
    ));
    let mut cfg = quick(1, 1);
    cfg.batch_size = 0;
    assert!(train_teacher_a(&d, &ta_cfg(&d), &cfg, None).is_err());
    let mut empty = d.clone();
    empty.val.clear();
    assert_eq!(train_teacher_a(&empty, &ta_cfg(&d), &quick(1, 1), None).unwrap_err(), TrainError::EmptySplit("val"));
    let dfg_cfg = TrainConfig {
        structure_mode: StructureMode::Dfg,
        ..quick(1, 1)
    };
    assert!(matches!(train_teacher_b(&d, &tb_cfg(&d), &dfg_cfg, None), Err(TrainError::Config(_))));
}

#[test]
fn selected_epoch_and_evaluation_agree() {
    let d = tiny_data(7, 80);
    let mut seen = Vec::new();
    let mut cb = |e: &EpochLog| seen.push(*e);
    let out = train_teacher_a(&d, &ta_cfg(&d), &quick(3, 1), Some(&mut cb)).unwrap();
    assert_eq!(seen, out.history);
    let m = out.checkpoint.metrics.unwrap();
    let best = out
        .history
        .iter()
        .fold(None::<&EpochLog>, |b, e| match b {
            Some(b) if b.val_f1 > e.val_f1 || (b.val_f1 == e.val_f1 && b.val_recall >= e.val_recall) => Some(b),
            _ => Some(e),
        })
        .unwrap();
    assert_eq!(m.epoch, best.epoch);
    let report = evaluate_checkpoint(&out.checkpoint, &d, "val").unwrap();
    assert!((report.f1 - m.f1).abs() <= 1e-9);
    assert_eq!(report.total(), d.val.len());
    assert_eq!(report.predictions.len(), d.val.len());
    assert_eq!(report.model, "teacher_a");
    let err = evaluate_checkpoint(&out.checkpoint, &d, "dev").unwrap_err().to_string();
    assert!(err.contains("train, val, test"), "{err}");
}

#[test]
fn prediction_rule() {
    assert_eq!(predict_from_logits([2.0, -1.0]).label, 0);
    assert_eq!(predict_from_logits([0.3, 0.3]).label, 0);
    assert_eq!(predict_from_logits([-1.0, 2.0]).label, 1);
    let p = predict_from_logits([0.0, 1.0]).probs;
    assert!((p[0] + p[1] - 1.0).abs() < 1e-15);
}

#[test]
fn distillation_heads_do_not_affect_predictions() {
    let d = tiny_data(8, 60);
    let out = train_student(
        &d,
        None,
        None,
        DistillationWeights::default(),
        &st_cfg(&d),
        &TrainConfig {
            ablation: Ablation::WithoutBoth,
            ..quick(1, 1)
        },
        None,
    )
    .unwrap();
    let base = predict(&out.checkpoint, &d.test).unwrap();
    let mut perturbed = out.checkpoint.clone();
    for (name, t) in perturbed.params.iter_mut() {
        if name.starts_with("head.dia") || name.starts_with("head.dib") {
            for (k, v) in t.data_mut().iter_mut().enumerate() {
                *v += 10.0 * ((k as f64) * 0.7).sin() + 1.0;
            }
        }
    }
    assert_eq!(predict(&perturbed, &d.test).unwrap(), base);
}

#[test]
fn graph_loss_matches_scalar_loss_on_one_sample() {
    let d = tiny_data(9, 60);
    let (a, b) = teachers(&d, 1);
    let scfg = st_cfg(&d);
    let config = ModelConfig::Student(scfg.clone());
    let store = config.init_store(&mut rng_stream(0, STREAM_INIT)).unwrap();
    let model = Student::bind(&scfg, &store).unwrap();
    let s = &d.train[0..1];
    let (la, lb) = (teacher_logits(&a, s).unwrap(), teacher_logits(&b, s).unwrap());
    let w = DistillationWeights::new(0.3, 0.49, 0.21, 2.0).unwrap();
    let mut tape = Tape::new(&store);
    let out = model.forward(&mut tape, &[&s[0].sequence], Attention::Compact, None).unwrap();
    let y = [usize::from(s[0].label)];
    let loss = student_loss_terms(&mut tape, &out, &y, Some(&teacher_rows(&la, &[0])), Some(&teacher_rows(&lb, &[0])), &w).unwrap();
    let row = |v: Var, h| {
        let t = tape.value(v).data();
        crate::models::Logits::new(h, [t[0], t[1]])
    };
    let scalar = student_loss(
        &row(out.cls, Head::Cls),
        &row(out.dia, Head::Dia),
        &row(out.dib, Head::Dib),
        &crate::models::Logits::new(Head::TeacherA, la[0]),
        &crate::models::Logits::new(Head::TeacherB, lb[0]),
        y[0],
        &w,
    )
    .unwrap();
    assert!((tape.value(loss).data()[0] - scalar.total).abs() < 1e-12);
}
