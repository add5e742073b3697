use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{check_inputs, DEFAULT_STEP};
use super::*;

fn t2(rows: &[&[f64]]) -> Tensor {
    Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn random_probs(rng: &mut ChaCha8Rng, rows: usize) -> Tensor {
    let data: Vec<f64> = (0..rows)
        .flat_map(|_| {
            let a: f64 = rng.random_range(0.01..0.99);
            [a, 1.0 - a]
        })
        .collect();
    Tensor::new(vec![rows, 2], data).unwrap()
}

#[test]
fn matmul_identity_and_dot() {
    let mut tape = Tape::detached();
    let i = tape.constant(t2(&[&[1.0, 0.0], &[0.0, 1.0]]));
    let b = tape.constant(t2(&[&[5.0, 6.0], &[7.0, 8.0]]));
    let out = tape.matmul(i, b).unwrap();
    assert_eq!(tape.value(out).data(), &[5.0, 6.0, 7.0, 8.0]);

    let a = tape.constant(t2(&[&[1.0, 2.0]]));
    let c = tape.constant(t2(&[&[3.0], &[4.0]]));
    let out = tape.matmul(a, c).unwrap();
    assert_eq!(tape.value(out).data(), &[11.0]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut tape = Tape::detached();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2, 3]));
    let err = tape.matmul(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[2, 3]"), "{msg}");
    assert!(matches!(err, NumericsError::ShapeMismatch { .. }));
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..5 {
        let a = random(&mut rng, &[4, 3]);
        let b = random(&mut rng, &[3, 2]);
        let report = check_inputs(&[a, b], DEFAULT_STEP, |t, v| {
            let m = t.matmul(v[0], v[1])?;
            t.sum(m)
        })
        .unwrap();
        assert!(report.max_rel_err() < 1e-4, "{report:?}");
    }
}

#[test]
fn softmax_examples() {
    let mut tape = Tape::detached();
    let a = tape.constant(Tensor::vector(vec![0.0, 0.0]));
    let p = tape.softmax_t(a, 1.0).unwrap();
    assert_eq!(tape.value(p).data(), &[0.5, 0.5]);

    let a = tape.constant(Tensor::vector(vec![2f64.ln(), 0.0]));
    let p = tape.softmax_t(a, 1.0).unwrap();
    let d = tape.value(p).data();
    assert!((d[0] - 2.0 / 3.0).abs() < 1e-15 && (d[1] - 1.0 / 3.0).abs() < 1e-15);

    let a = tape.constant(Tensor::vector(vec![1.0, 3.0]));
    let p = tape.softmax_t(a, 1000.0).unwrap();
    assert!(tape.value(p).data().iter().all(|x| (x - 0.5).abs() < 1e-3));
}

#[test]
fn softmax_rejects_non_positive_temperature() {
    let mut tape = Tape::detached();
    let a = tape.constant(Tensor::vector(vec![1.0, 2.0]));
    for t in [0.0, -1.0, f64::NAN] {
        assert!(matches!(tape.softmax_t(a, t), Err(NumericsError::Temperature(_))));
    }
}

#[test]
fn softmax_rows_sum_to_one_and_entropy_grows_with_temperature() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let logits = random(&mut rng, &[3, 5]);
        let logits = Tensor::new(vec![3, 5], logits.data().iter().map(|x| x * 20.0).collect()).unwrap();
        let mut prev = [-1.0; 3];
        for t in [0.1, 0.5, 1.0, 2.0, 10.0, 100.0] {
            let p = softmax_rows(&logits, t);
            for r in 0..3 {
                let row = p.row(r);
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                let h: f64 = row.iter().filter(|&&x| x > 0.0).map(|x| -x * x.ln()).sum();
                assert!(h >= prev[r] - 1e-12);
                prev[r] = h;
            }
        }
    }
}

#[test]
fn cross_entropy_examples() {
    let mut tape = Tape::detached();
    let p = tape.constant(t2(&[&[1.0, 0.0]]));
    let l = tape.cross_entropy(p, &[0]).unwrap();
    assert_eq!(tape.value(l).data()[0], 0.0);

    let p = tape.constant(t2(&[&[0.5, 0.5]]));
    let l = tape.cross_entropy(p, &[1]).unwrap();
    assert!((tape.value(l).data()[0] - 2f64.ln()).abs() < 1e-15);

    // Zero probability at the label is clamped rather than producing inf.
    let p = tape.constant(t2(&[&[1.0, 0.0]]));
    let l = tape.cross_entropy(p, &[1]).unwrap();
    assert!((tape.value(l).data()[0] + PROB_FLOOR.ln()).abs() < 1e-9);

    assert!(matches!(tape.cross_entropy(p, &[2]), Err(NumericsError::Label { .. })));
}

#[test]
fn cross_entropy_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..5 {
        let logits = random(&mut rng, &[8, 2]);
        let labels: Vec<usize> = (0..8).map(|_| rng.random_range(0..2)).collect();
        let report = check_inputs(&[logits], DEFAULT_STEP, |t, v| {
            let p = t.softmax_t(v[0], 1.0)?;
            t.cross_entropy(p, &labels)
        })
        .unwrap();
        assert!(report.max_rel_err() < 1e-4, "{report:?}");
    }
}

#[test]
fn kl_examples() {
    let mut tape = Tape::detached();
    let q = t2(&[&[0.3, 0.7]]);
    let p = tape.constant(q.clone());
    let kl = tape.kl_div(p, &q).unwrap();
    assert_eq!(tape.value(kl).data()[0], 0.0);

    let p = tape.constant(t2(&[&[0.5, 0.5]]));
    let kl = tape.kl_div(p, &t2(&[&[1.0, 0.0]])).unwrap();
    assert!((tape.value(kl).data()[0] - 2f64.ln()).abs() < 1e-15);

    let bad = tape.constant(t2(&[&[0.5, 0.6]]));
    assert!(matches!(tape.kl_div(bad, &q), Err(NumericsError::NotStochastic { .. })));
}

#[test]
fn kl_is_nonnegative_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    for _ in 0..1000 {
        let p = random_probs(&mut rng, 3);
        let q = random_probs(&mut rng, 3);
        let mut tape = Tape::detached();
        let pv = tape.constant(p.clone());
        let kl = tape.kl_div(pv, &q).unwrap();
        assert!(tape.value(kl).data()[0] >= -1e-12);
        let same = tape.kl_div(pv, &p).unwrap();
        assert_eq!(tape.value(same).data()[0], 0.0);
    }
}

#[test]
fn kl_gradient_flows_only_into_student_side() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..5 {
        let logits = random(&mut rng, &[4, 2]);
        let q = random_probs(&mut rng, 4);
        let report = check_inputs(&[logits], DEFAULT_STEP, |t, v| {
            let p = t.softmax_t(v[0], 2.0)?;
            t.kl_div(p, &q)
        })
        .unwrap();
        assert!(report.max_rel_err() < 1e-4, "{report:?}");
    }
}

#[test]
fn backward_sum_and_square() {
    let mut tape = Tape::detached();
    let x = tape.input(Tensor::zeros(&[2, 3]));
    let s = tape.sum(x).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[1.0; 6]);

    let mut tape = Tape::detached();
    let x = tape.input(Tensor::vector(vec![1.0, 2.0]));
    let sq = tape.mul(x, x).unwrap();
    let s = tape.sum(sq).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[2.0, 4.0]);
}

#[test]
fn backward_rejects_non_scalar() {
    let mut tape = Tape::detached();
    let x = tape.input(Tensor::zeros(&[2]));
    assert!(matches!(tape.backward(x), Err(NumericsError::NonScalarLoss(_))));
}

#[test]
fn repeated_backward_accumulates_into_parameters() {
    let mut store = ParamStore::new();
    let id = store.add("w", Tensor::vector(vec![1.0, 2.0])).unwrap();
    let mut tape = Tape::new(&store);
    let w = tape.param(id);
    let sq = tape.mul(w, w).unwrap();
    let s = tape.sum(sq).unwrap();
    tape.backward(s).unwrap();
    tape.backward(s).unwrap();
    drop(tape);
    assert_eq!(store.get(id).grad().unwrap(), vec![4.0, 8.0]);
}

#[test]
fn constants_receive_no_gradient() {
    let mut tape = Tape::detached();
    let c = tape.constant(Tensor::vector(vec![1.0, 2.0]));
    let x = tape.input(Tensor::vector(vec![3.0, 4.0]));
    let m = tape.mul(c, x).unwrap();
    let s = tape.sum(m).unwrap();
    tape.backward(s).unwrap();
    assert!(tape.grad(c).is_none());
    assert_eq!(tape.grad(x).unwrap(), &[1.0, 2.0]);
}

#[test]
fn duplicate_parameter_names_rejected() {
    let mut store = ParamStore::new();
    store.add("a", Tensor::scalar(0.0)).unwrap();
    assert!(matches!(
        store.add("a", Tensor::scalar(1.0)),
        Err(NumericsError::DuplicateParameter(_))
    ));
}

#[test]
fn adam_zero_gradient_leaves_parameters() {
    let mut store = ParamStore::new();
    store.add("w", Tensor::vector(vec![0.5, -1.5])).unwrap();
    store.zero_grad();
    let mut adam = AdamState::new(0.1);
    adam_step(&mut store, &mut adam).unwrap();
    assert_eq!(store.by_name("w").unwrap().value().data(), &[0.5, -1.5]);
    assert_eq!(adam.step, 1);
}

#[test]
fn adam_first_step_moves_by_learning_rate() {
    let mut store = ParamStore::new();
    let id = store.add("p", Tensor::scalar(1.0)).unwrap();
    store.zero_grad();
    store.accumulate(id, &[1.0]);
    let mut adam = AdamState::new(0.1);
    adam.apply(&mut store).unwrap();
    // m_hat = 1, v_hat = 1, so the step is lr / (1 + eps_hat).
    let expected = 1.0 - 0.1 / (1.0 + 1e-8);
    let got = store.get(id).value().data()[0];
    assert!((got - expected).abs() < 1e-15, "{got}");
    assert_eq!(store.get(id).grad().unwrap(), vec![1.0]);
}

#[test]
fn adam_requires_gradients() {
    let mut store = ParamStore::new();
    store.add("p", Tensor::scalar(1.0)).unwrap();
    let mut adam = AdamState::new(0.1);
    assert!(matches!(adam.apply(&mut store), Err(NumericsError::MissingGrad(_))));
}

#[test]
fn adam_runs_are_bitwise_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut store = ParamStore::new();
        let id = store.add("w", random(&mut rng, &[3, 3])).unwrap();
        let x = random(&mut rng, &[4, 3]);
        let mut adam = AdamState::new(0.01);
        for _ in 0..20 {
            store.zero_grad();
            let mut tape = Tape::new(&store);
            let xv = tape.constant(x.clone());
            let w = tape.param(id);
            let y = tape.matmul(xv, w).unwrap();
            let y = tape.tanh(y).unwrap();
            let l = tape.mean(y).unwrap();
            tape.backward(l).unwrap();
            drop(tape);
            adam.apply(&mut store).unwrap();
        }
        store.snapshot()
    };
    let a = run();
    let b = run();
    let bits = |v: &[Tensor]| v.iter().flat_map(|t| t.data().iter().map(|x| x.to_bits())).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
}

fn assert_kernel<F>(seed: u64, shapes: &[&[usize]], build: F)
where
    F: Fn(&mut Tape<'_>, &[Var]) -> Result<Var, NumericsError>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..5 {
        let inputs: Vec<Tensor> = shapes.iter().map(|s| random(&mut rng, s)).collect();
        // A random linear read-out keeps gradients non-uniform.
        let report = check_inputs(&inputs, DEFAULT_STEP, |t, v| {
            let out = build(t, v)?;
            let shape = t.shape(out).to_vec();
            let n: usize = shape.iter().product();
            let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            let w = Tensor::new(shape, (0..n).map(|_| r.random_range(-1.0..1.0)).collect())?;
            let wv = t.constant(w);
            let prod = t.mul(out, wv)?;
            t.sum(prod)
        })
        .unwrap();
        assert!(report.max_rel_err() < 1e-4, "seed {seed}: {report:?}");
    }
}

#[test]
fn elementwise_kernels_gradcheck() {
    assert_kernel(1, &[&[3, 4], &[3, 4]], |t, v| t.add(v[0], v[1]));
    assert_kernel(2, &[&[3, 4], &[3, 4]], |t, v| t.mul(v[0], v[1]));
    assert_kernel(3, &[&[3, 4]], |t, v| t.tanh(v[0]));
    assert_kernel(4, &[&[3, 4]], |t, v| t.relu(v[0]));
    assert_kernel(5, &[&[3, 4]], |t, v| t.scale(v[0], -2.5));
    assert_kernel(6, &[&[3, 4], &[4]], |t, v| t.add_row(v[0], v[1]));
    assert_kernel(7, &[&[3, 4]], |t, v| t.transpose(v[0]));
}

#[test]
fn structural_kernels_gradcheck() {
    assert_kernel(10, &[&[6, 3]], |t, v| t.gather(v[0], &[4, 0, 4, 2]));
    assert_kernel(11, &[&[7, 3]], |t, v| t.unfold(v[0], 3));
    assert_kernel(12, &[&[5, 4]], |t, v| t.max_rows(v[0]));
    assert_kernel(13, &[&[5, 4]], |t, v| t.mean_rows(v[0]));
    assert_kernel(14, &[&[2, 3], &[2, 2]], |t, v| t.concat(&[v[0], v[1]], Axis::Last));
    assert_kernel(15, &[&[2, 3], &[4, 3]], |t, v| t.concat(&[v[0], v[1]], Axis::Rows));
    assert_kernel(16, &[&[3, 6]], |t, v| t.slice_last(v[0], 2, 3));
    assert_kernel(17, &[&[3, 4]], |t, v| t.softmax_t(v[0], 0.7));
    assert_kernel(18, &[&[6]], |t, v| t.reshape(v[0], vec![2, 3]));
    assert_kernel(19, &[&[3, 5], &[5], &[5]], |t, v| t.layer_norm(v[0], v[1], v[2], 1e-5));
    assert_kernel(20, &[&[7, 3], &[6, 4], &[4]], |t, v| t.conv1d(v[0], v[1], v[2], 2));
}

#[test]
fn conv1d_matches_direct_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let x = random(&mut rng, &[6, 2]);
    let w = random(&mut rng, &[3 * 2, 4]);
    let b = random(&mut rng, &[4]);
    let mut tape = Tape::detached();
    let (xv, wv, bv) = (tape.constant(x.clone()), tape.constant(w.clone()), tape.constant(b.clone()));
    let out = tape.conv1d(xv, wv, bv, 3).unwrap();
    assert_eq!(tape.shape(out), &[4, 4]);
    for t in 0..4 {
        for f in 0..4 {
            let mut s = b.data()[f];
            for j in 0..3 {
                for c in 0..2 {
                    s += x.data()[(t + j) * 2 + c] * w.data()[(j * 2 + c) * 4 + f];
                }
            }
            assert!((tape.value(out).data()[t * 4 + f] - s).abs() < 1e-12);
        }
    }
}

#[test]
fn embedding_gradient_scatter_adds_into_table() {
    let mut store = ParamStore::new();
    let id = store.add("emb", Tensor::zeros(&[4, 2])).unwrap();
    let mut tape = Tape::new(&store);
    let e = tape.param(id);
    let rows = tape.gather(e, &[1, 3, 1]).unwrap();
    let s = tape.sum(rows).unwrap();
    tape.backward(s).unwrap();
    drop(tape);
    assert_eq!(store.get(id).grad().unwrap(), vec![0.0, 0.0, 2.0, 2.0, 0.0, 0.0, 1.0, 1.0]);
}
