//! Central finite-difference verification of analytic gradients.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub step: f64,
    pub rel_tol: f64,
    pub abs_floor: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            step: 1e-4,
            rel_tol: 1e-4,
            abs_floor: 1e-7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub failures: usize,
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, floor / rel_tol)`.
    pub max_rel_error: f64,
    /// `(input, element, analytic, numeric)` of the worst element.
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Compares reverse-mode gradients of the scalar `f(inputs)` against central
/// differences taken on fresh tapes. An element passes when
/// `|a - n| <= max(rel_tol * max(|a|, |n|), abs_floor)`.
pub fn check_gradients<F>(inputs: &[Tensor], f: &F, cfg: &GradCheck) -> Result<GradCheckReport>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    let tape = Tape::new();
    let vars = inputs
        .iter()
        .map(|t| tape.leaf(t.clone(), true))
        .collect::<Result<Vec<_>>>()?;
    let loss = f(&tape, &vars)?;
    let grads = tape.backward(loss)?;

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let t = Tape::new();
        let vs = perturbed
            .iter()
            .map(|x| t.constant(x.clone()))
            .collect::<Result<Vec<_>>>()?;
        let l = f(&t, &vs)?;
        Ok(t.item(l))
    };

    let mut report = GradCheckReport {
        checked: 0,
        failures: 0,
        max_rel_error: 0.0,
        worst: None,
    };
    let mut work = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(*v, inputs[i].numel());
        for j in 0..inputs[i].numel() {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + cfg.step;
            let up = eval(&work)?;
            work[i].data_mut()[j] = orig - cfg.step;
            let down = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * cfg.step);
            let a = analytic[j];
            let diff = (a - numeric).abs();
            let scale = a.abs().max(numeric.abs());
            let rel = diff / scale.max(cfg.abs_floor / cfg.rel_tol);
            report.checked += 1;
            if diff > (cfg.rel_tol * scale).max(cfg.abs_floor) {
                report.failures += 1;
            }
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some((i, j, a, numeric));
            }
        }
    }
    Ok(report)
}
