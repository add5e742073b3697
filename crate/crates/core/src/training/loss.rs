use super::{DistillationWeights, TrainError};
use crate::models::{Head, Logits, StudentOutputs};
use crate::numerics::{softmax_rows, Tape, Tensor, Var};

/// The weighted objective on a tape. Terms with zero weight are not built,
/// so their inputs (teacher logits included) never affect gradients.
/// Teacher logits are plain tensors `[B, 2]` and carry no gradient.
pub fn student_loss_terms(
    tape: &mut Tape,
    out: &StudentOutputs,
    labels: &[usize],
    teacher_a: Option<&Tensor>,
    teacher_b: Option<&Tensor>,
    w: &DistillationWeights,
) -> Result<Var, TrainError> {
    w.validate()?;
    let mut terms = Vec::with_capacity(3);
    if w.gamma > 0.0 {
        let p = tape.softmax_t(out.cls, 1.0)?;
        let ce = tape.cross_entropy(p, labels)?;
        terms.push(tape.scale(ce, w.gamma)?);
    }
    for (weight, head, teacher, name) in [(w.delta, out.dia, teacher_a, "A"), (w.eta, out.dib, teacher_b, "B")] {
        if weight > 0.0 {
            let t = teacher.ok_or_else(|| TrainError::Precondition(format!("teacher {name} logits for a nonzero weight")))?;
            let q = softmax_rows(t, w.temperature);
            let p = tape.softmax_t(head, w.temperature)?;
            let kl = tape.kl_div(p, &q)?;
            terms.push(tape.scale(kl, weight)?);
        }
    }
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = tape.add(total, t)?;
    }
    Ok(total)
}

/// Per-term values of the objective for one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub ce: f64,
    pub kl_a: f64,
    pub kl_b: f64,
    pub total: f64,
}

/// Scalar objective for one sample's head logits.
pub fn student_loss(
    s_cls: &Logits,
    s_dia: &Logits,
    s_dib: &Logits,
    t_a: &Logits,
    t_b: &Logits,
    label: usize,
    w: &DistillationWeights,
) -> Result<LossTerms, TrainError> {
    w.validate()?;
    for (l, want) in [(s_cls, Head::Cls), (s_dia, Head::Dia), (s_dib, Head::Dib), (t_a, Head::TeacherA), (t_b, Head::TeacherB)] {
        if l.head != want {
            return Err(TrainError::Config(format!("expected {want:?} logits, got {:?}", l.head)));
        }
        if !l.is_finite() {
            return Err(TrainError::Config(format!("non-finite {:?} logits", l.head)));
        }
    }
    let row = |l: &Logits| Tensor::new(vec![1, 2], l.values.to_vec()).expect("1x2");
    let mut tape = Tape::detached();
    let cls = tape.constant(row(s_cls));
    let dia = tape.constant(row(s_dia));
    let dib = tape.constant(row(s_dib));
    let p = tape.softmax_t(cls, 1.0)?;
    let ce = tape.cross_entropy(p, &[label])?;
    let (qa, qb) = (softmax_rows(&row(t_a), w.temperature), softmax_rows(&row(t_b), w.temperature));
    let pa = tape.softmax_t(dia, w.temperature)?;
    let kl_a = tape.kl_div(pa, &qa)?;
    let pb = tape.softmax_t(dib, w.temperature)?;
    let kl_b = tape.kl_div(pb, &qb)?;
    let v = |x| tape.value(x).data()[0];
    let (ce, kl_a, kl_b) = (v(ce), v(kl_a), v(kl_b));
    let mut total = 0.0;
    if w.gamma > 0.0 {
        total += w.gamma * ce;
    }
    if w.delta > 0.0 {
        total += w.delta * kl_a;
    }
    if w.eta > 0.0 {
        total += w.eta * kl_b;
    }
    Ok(LossTerms { ce, kl_a, kl_b, total })
}
