//! Central finite differences against reverse-mode gradients.

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::params::ModelParams;

/// `|ad − fd| / max(1e-8, |ad| + |fd|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub components: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn components(&self) -> usize {
        self.params.iter().map(|p| p.components).sum()
    }
}

/// Compares the tape gradient of the scalar built by `f` with central differences
/// `(f(θ+ε) − f(θ−ε)) / 2ε` for every component of every parameter.
///
/// `f` receives a fresh tape and the parameters bound on it in id order.
pub fn finite_difference_check<F>(
    params: &ModelParams,
    epsilon: f64,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let loss = f(&mut tape, &bound)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = bound.iter().map(|&v| tape.grad(v).to_vec()).collect();

    let eval = |p: &ModelParams| -> Result<f64> {
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape);
        let loss = f(&mut tape, &bound)?;
        Ok(tape.value(loss)[0])
    };

    let mut probe = params.clone();
    let mut report = Vec::with_capacity(params.len());
    for (id, grads) in params.ids().zip(&analytic) {
        let mut worst: f64 = 0.0;
        let param = params.get(id);
        let frozen = param
            .frozen_row
            .and_then(|r| param.tensor.dims2().map(|(_, c)| r * c..(r + 1) * c));
        for (j, &ad) in grads.iter().enumerate() {
            if frozen.as_ref().is_some_and(|f| f.contains(&j)) {
                continue;
            }
            let orig = probe.get(id).tensor.values()[j];
            probe.get_mut(id).tensor.values_mut()[j] = orig + epsilon;
            let plus = eval(&probe)?;
            probe.get_mut(id).tensor.values_mut()[j] = orig - epsilon;
            let minus = eval(&probe)?;
            probe.get_mut(id).tensor.values_mut()[j] = orig;
            let fd = (plus - minus) / (2.0 * epsilon);
            worst = worst.max(relative_error(ad, fd));
        }
        report.push(ParamCheck {
            name: params.get(id).name.clone(),
            components: grads.len(),
            max_rel_error: worst,
        });
    }
    Ok(GradCheckReport { params: report })
}
