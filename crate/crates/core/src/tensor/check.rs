//! Central finite-difference gradient checking.

use super::{Tape, Tensor, Var};
use crate::{Error, Result};

/// Outcome of comparing analytic and numeric gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Max over all entries of `|a - n| / max(1, |a|, |n|)`.
    pub max_rel_error: f64,
    /// `(input index, flat entry index)` of the worst entry.
    pub worst: Option<(usize, usize)>,
    /// Number of entries compared.
    pub entries: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

fn eval_scalar<F>(inputs: &[Tensor], f: &F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let value = tape.value(out);
    if value.len() != 1 {
        return Err(Error::usage(format!(
            "grad_check: program must return a scalar, got shape {:?}",
            value.shape()
        )));
    }
    Ok(value.item())
}

/// Value and reverse-mode gradients of `f` with respect to every input.
pub fn analytic_gradient<F>(inputs: &[Tensor], f: &F) -> Result<(f64, Vec<Tensor>)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let value = tape.value(out).item();
    Ok((value, vars.iter().map(|&v| grads.wrt(v).clone()).collect()))
}

/// Central differences `(f(x+ε) - f(x-ε)) / 2ε`, one entry at a time.
pub fn numeric_gradient<F>(inputs: &[Tensor], eps: f64, f: &F) -> Result<Vec<Tensor>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut work = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut grad = Vec::with_capacity(inputs[i].len());
        for j in 0..inputs[i].len() {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + eps;
            let plus = eval_scalar(&work, f)?;
            work[i].data_mut()[j] = orig - eps;
            let minus = eval_scalar(&work, f)?;
            work[i].data_mut()[j] = orig;
            let d = (plus - minus) / (2.0 * eps);
            if !d.is_finite() {
                return Err(Error::numeric(
                    "grad_check",
                    format!("finite difference for input {i} entry {j} is {d}"),
                ));
            }
            grad.push(d);
        }
        out.push(Tensor::new(inputs[i].shape().to_vec(), grad)?);
    }
    Ok(out)
}

pub fn compare_gradients(analytic: &[Tensor], numeric: &[Tensor]) -> Result<GradCheckReport> {
    if analytic.len() != numeric.len() {
        return Err(Error::dim(format!(
            "grad_check: {} analytic vs {} numeric gradients",
            analytic.len(),
            numeric.len()
        )));
    }
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        entries: 0,
    };
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        if a.shape() != n.shape() {
            return Err(Error::dim(format!(
                "grad_check: input {i} gradient shapes {:?} vs {:?}",
                a.shape(),
                n.shape()
            )));
        }
        for (j, (&ga, &gn)) in a.data().iter().zip(n.data()).enumerate() {
            let err = relative_error(ga, gn);
            report.entries += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((i, j));
            }
        }
    }
    Ok(report)
}

/// Checks reverse-mode gradients of the scalar program `f` against central
/// finite differences with step `eps`, over every entry of every input.
pub fn grad_check<F>(inputs: &[Tensor], eps: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let (_, analytic) = analytic_gradient(inputs, &f)?;
    let numeric = numeric_gradient(inputs, eps, &f)?;
    compare_gradients(&analytic, &numeric)
}
