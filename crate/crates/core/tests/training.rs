//! Teachers must find the planted patterns on the standard generated corpus.

use vulndistill::corpusgen::generate;
use vulndistill::frontend::StructureMode;
use vulndistill::models::{TeacherAConfig, TeacherBConfig};
use vulndistill::training::{evaluate_checkpoint, prepare, train_teacher_a, train_teacher_b, PrepareConfig, TrainConfig};

fn config(mode: StructureMode) -> (PrepareConfig, TrainConfig) {
    let p = PrepareConfig {
        vocab_size: 1024,
        seq_len: 64,
        structure_mode: mode,
        ..PrepareConfig::default()
    };
    let t = TrainConfig {
        seed: 3,
        structure_mode: mode,
        ..TrainConfig::default()
    };
    (p, t)
}

#[test]
fn teacher_a_learns_planted_patterns() {
    let data = generate(21, 2000, 0.3).unwrap();
    let (p, t) = config(StructureMode::Ast);
    let prepared = prepare(&data, &p, None).unwrap();
    let out = train_teacher_a(&prepared, &TeacherAConfig::new(prepared.code_vocab.len()), &t, None).unwrap();
    let val = evaluate_checkpoint(&out.checkpoint, &prepared, "val").unwrap();
    assert!(val.f1 >= 0.8, "teacher A val F1 {}", val.f1);
}

#[test]
fn teacher_b_learns_planted_patterns_in_both_modes() {
    let data = generate(21, 2000, 0.3).unwrap();
    for mode in [StructureMode::Ast, StructureMode::Dfg] {
        let (p, t) = config(mode);
        let prepared = prepare(&data, &p, None).unwrap();
        let out = train_teacher_b(&prepared, &TeacherBConfig::new(prepared.structure_vocab.len()), &t, None).unwrap();
        assert_eq!(out.history.len(), 10);
        let val = evaluate_checkpoint(&out.checkpoint, &prepared, "val").unwrap();
        assert!(val.f1 >= 0.8, "teacher B ({mode}) val F1 {}", val.f1);
    }
}
