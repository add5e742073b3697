//! Central finite-difference oracle for the tape's analytic gradients.
//!
//! Only forward evaluations are used on the numeric side, so the oracle stays
//! independent of every adjoint it checks.

use super::{NumericsError, ParamStore, Tape, Tensor, Var};

pub const DEFAULT_STEP: f64 = 1e-5;

/// Below this norm a gradient counts as zero and the error is absolute.
pub const ZERO_GRAD_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a| + |n|, ZERO_GRAD_FLOOR)` over whole gradient vectors.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    diff / (na + nn).max(ZERO_GRAD_FLOOR)
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// `(name, relative error, entries checked)` per tensor.
    pub entries: Vec<(String, f64, usize)>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.entries.iter().map(|e| e.1).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&(String, f64, usize)> {
        self.entries.iter().max_by(|a, b| a.1.total_cmp(&b.1))
    }
}

fn probe_indices(len: usize, max_entries: Option<usize>) -> Vec<usize> {
    match max_entries {
        Some(k) if k < len => {
            let stride = len.div_ceil(k);
            (0..len).step_by(stride).collect()
        }
        _ => (0..len).collect(),
    }
}

/// Compares parameter gradients of the scalar built by `build` with central
/// differences of step `h`. At most `max_entries` coordinates per parameter
/// are probed (evenly strided).
pub fn check_params<F>(
    store: &mut ParamStore,
    h: f64,
    max_entries: Option<usize>,
    build: F,
) -> Result<GradCheckReport, NumericsError>
where
    F: Fn(&mut Tape<'_>) -> Result<Var, NumericsError>,
{
    store.clear_grad();
    {
        let mut tape = Tape::new(store);
        let loss = build(&mut tape)?;
        tape.backward(loss)?;
    }
    let eval = |store: &ParamStore| -> Result<f64, NumericsError> {
        let mut tape = Tape::new(store);
        let loss = build(&mut tape)?;
        Ok(tape.value(loss).data()[0])
    };
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    let mut entries = Vec::new();
    for id in ids {
        let name = store.get(id).name().to_string();
        let full = store.get(id).grad().unwrap_or_else(|| vec![0.0; store.get(id).value().len()]);
        let idx = probe_indices(full.len(), max_entries);
        let mut analytic = Vec::with_capacity(idx.len());
        let mut numeric = Vec::with_capacity(idx.len());
        for &j in &idx {
            let orig = store.get(id).value().data()[j];
            store.get_mut(id).value_mut().data_mut()[j] = orig + h;
            let plus = eval(store)?;
            store.get_mut(id).value_mut().data_mut()[j] = orig - h;
            let minus = eval(store)?;
            store.get_mut(id).value_mut().data_mut()[j] = orig;
            analytic.push(full[j]);
            numeric.push((plus - minus) / (2.0 * h));
        }
        entries.push((name, relative_error(&analytic, &numeric), idx.len()));
    }
    store.clear_grad();
    Ok(GradCheckReport { entries })
}

/// Same check for free input tensors on a detached tape.
pub fn check_inputs<F>(inputs: &[Tensor], h: f64, build: F) -> Result<GradCheckReport, NumericsError>
where
    F: Fn(&mut Tape<'_>, &[Var]) -> Result<Var, NumericsError>,
{
    let mut tape = Tape::detached();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
        .collect();
    drop(tape);

    let eval = |xs: &[Tensor]| -> Result<f64, NumericsError> {
        let mut tape = Tape::detached();
        let vars: Vec<Var> = xs.iter().map(|t| tape.input(t.clone())).collect();
        let loss = build(&mut tape, &vars)?;
        Ok(tape.value(loss).data()[0])
    };
    let mut work = inputs.to_vec();
    let mut entries = Vec::new();
    for (k, a) in analytic.iter().enumerate() {
        let mut numeric = Vec::with_capacity(a.len());
        for j in 0..a.len() {
            let orig = work[k].data()[j];
            work[k].data_mut()[j] = orig + h;
            let plus = eval(&work)?;
            work[k].data_mut()[j] = orig - h;
            let minus = eval(&work)?;
            work[k].data_mut()[j] = orig;
            numeric.push((plus - minus) / (2.0 * h));
        }
        entries.push((format!("input{k}"), relative_error(a, &numeric), a.len()));
    }
    Ok(GradCheckReport { entries })
}
