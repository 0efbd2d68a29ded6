//! Analytic-versus-numeric gradient comparison.
//!
//! The numeric side only ever runs forward passes, so it shares nothing with
//! the backward rules it checks.

use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Central-difference step used throughout the test suites.
pub const DEFAULT_STEP: f64 = 1e-6;

/// `|a − n| / max(1, |a|, |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// The single worst coordinate found by a check.
#[derive(Debug, Clone, PartialEq)]
pub struct Offender {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub checked: usize,
    pub worst: Option<Offender>,
}

impl Report {
    pub fn max_rel_error(&self) -> f64 {
        self.worst.as_ref().map_or(0.0, |w| w.rel_error)
    }

    pub fn merge(&mut self, other: Report) {
        self.checked += other.checked;
        if let Some(o) = other.worst {
            if self.worst.as_ref().is_none_or(|w| o.rel_error > w.rel_error) {
                self.worst = Some(o);
            }
        }
    }
}

fn eval<F>(inputs: &[Tensor], f: &F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    tape.value(loss).item()
}

/// Compares gradients of the scalar built by `f` at the listed
/// `(input, flat index)` coordinates.
pub fn check_coords<F>(inputs: &[Tensor], coords: &[(usize, usize)], step: f64, f: F) -> Result<Report>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let mut report = Report::default();
    let mut work = inputs.to_vec();
    for &(i, j) in coords {
        let analytic = grads.get(vars[i]).map_or(0.0, |g| g.data()[j]);
        let orig = work[i].data()[j];
        work[i].data_mut()[j] = orig + step;
        let plus = eval(&work, &f)?;
        work[i].data_mut()[j] = orig - step;
        let minus = eval(&work, &f)?;
        work[i].data_mut()[j] = orig;
        let numeric = (plus - minus) / (2.0 * step);
        let rel_error = relative_error(analytic, numeric);
        report.merge(Report {
            checked: 1,
            worst: Some(Offender {
                input: i,
                index: j,
                analytic,
                numeric,
                rel_error,
            }),
        });
    }
    Ok(report)
}

/// Checks every coordinate of every input.
pub fn check_all<F>(inputs: &[Tensor], step: f64, f: F) -> Result<Report>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let coords: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.numel()).map(move |j| (i, j)))
        .collect();
    check_coords(inputs, &coords, step, f)
}
