//! Central finite-difference gradient checks against candle's backward pass.

use crate::error::{EtherError, Result};
use candle_core::{Tensor, Var};
use rand::rngs::StdRng;
use rand::seq::index::sample;
use rand::SeedableRng;
use std::fmt;

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Check at most this many entries per input (sampled); 0 checks all.
    pub max_entries_per_input: usize,
    pub seed: u64,
    /// Denominator floor: relative error is `|a - n| / max(|a|, |n|, floor)`.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-3,
            max_entries_per_input: 0,
            seed: 0,
            floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct InputCheck {
    pub name: String,
    pub checked: usize,
    pub max_relative_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub inputs: Vec<InputCheck>,
}

impl GradCheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.inputs.iter().map(|c| c.max_relative_error).fold(0.0, f64::max)
    }

    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_relative_error() < tolerance
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.inputs {
            writeln!(
                f,
                "{}: {} entries, max rel err {:.3e} at #{} (analytic {:.6e}, numeric {:.6e})",
                c.name, c.checked, c.max_relative_error, c.worst_index, c.analytic, c.numeric
            )?;
        }
        Ok(())
    }
}

fn scalar(t: &Tensor) -> Result<f64> {
    if t.elem_count() != 1 {
        return Err(EtherError::shape("scalar", t.dims()));
    }
    let v = t.flatten_all()?.to_dtype(candle_core::DType::F64)?.to_vec1::<f64>()?[0];
    if !v.is_finite() {
        return Err(EtherError::NonFinite("gradient-check objective".into()));
    }
    Ok(v)
}

fn write(var: &Var, values: &[f64]) -> Result<()> {
    let t = Tensor::from_slice(values, var.shape(), var.device())?.to_dtype(var.dtype())?;
    var.set(&t)?;
    Ok(())
}

/// Compare backward gradients of the scalar `function` with respect to each
/// input against central differences. Inputs are restored afterwards.
pub fn check_gradients<F>(function: F, inputs: &[(&str, &Var)], opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn() -> Result<Tensor>,
{
    let out = function()?;
    scalar(&out)?;
    let grads = out.backward()?;
    let mut rng = StdRng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport::default();
    for (name, var) in inputs {
        let n = var.elem_count();
        let analytic: Vec<f64> = match grads.get(var.as_tensor()) {
            Some(g) => g.flatten_all()?.to_dtype(candle_core::DType::F64)?.to_vec1()?,
            None => vec![0.0; n],
        };
        let original: Vec<f64> = var.as_tensor().flatten_all()?.to_dtype(candle_core::DType::F64)?.to_vec1()?;
        let indices: Vec<usize> = if opts.max_entries_per_input == 0 || opts.max_entries_per_input >= n {
            (0..n).collect()
        } else {
            sample(&mut rng, n, opts.max_entries_per_input).into_vec()
        };
        let mut check = InputCheck {
            name: name.to_string(),
            checked: indices.len(),
            max_relative_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        let mut values = original.clone();
        for &i in &indices {
            values[i] = original[i] + opts.step;
            write(var, &values)?;
            let plus = scalar(&function()?)?;
            values[i] = original[i] - opts.step;
            write(var, &values)?;
            let minus = scalar(&function()?)?;
            values[i] = original[i];
            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = analytic[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
            if rel > check.max_relative_error || check.checked == 0 {
                check.max_relative_error = rel;
                check.worst_index = i;
                check.analytic = a;
                check.numeric = numeric;
            }
        }
        write(var, &original)?;
        report.inputs.push(check);
    }
    Ok(report)
}
