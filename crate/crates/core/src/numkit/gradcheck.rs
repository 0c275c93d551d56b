//! Finite-difference verification of tape gradients.

use crate::error::Result;

use super::{Bound, ParamStore, Tape, Tensor, Var};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Per-entry comparison of an analytic and a numeric gradient.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    /// `max |a - n| / (|a| + |n| + 1e-8)` over all entries.
    pub max_rel_error: f64,
}

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / (a.abs() + n.abs() + 1e-8))
        .fold(0.0, f64::max)
}

/// Compares the tape gradient of a scalar function `f` at `x` with central
/// differences. `f` receives a tape and the leaf holding `x` and returns the
/// scalar output.
pub fn grad_check<F>(f: F, x: &Tensor) -> Result<GradCheck>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let leaf = tape.param(x);
    let out = f(&mut tape, leaf)?;
    let grads = tape.backward(out)?;
    let analytic = grads
        .get(leaf)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; x.len()]);

    let eval = |probe: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let leaf = tape.constant(probe.clone());
        let out = f(&mut tape, leaf)?;
        Ok(tape.value(out).item())
    };
    let mut probe = x.clone();
    let mut numeric = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + FD_STEP;
        let up = eval(&probe)?;
        probe.data_mut()[i] = orig - FD_STEP;
        let down = eval(&probe)?;
        probe.data_mut()[i] = orig;
        numeric.push((up - down) / (2.0 * FD_STEP));
    }
    let max_rel_error = relative_error(&analytic, &numeric);
    Ok(GradCheck {
        analytic,
        numeric,
        max_rel_error,
    })
}

/// Like [`grad_check`], but differentiates with respect to every trainable
/// tensor of `params` at once. `f` receives a tape and the bound store. The
/// entries of `analytic` and `numeric` follow the store's order.
pub fn grad_check_params<F>(f: F, params: &ParamStore) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &Bound) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let out = f(&mut tape, &bound)?;
    let grads = tape.backward(out)?;
    let mut store = params.clone();
    store.zero_grad();
    store.accumulate(&bound, &grads);

    let eval = |probe: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let bound = probe.bind_frozen(&mut tape);
        let out = f(&mut tape, &bound)?;
        Ok(tape.value(out).item())
    };
    let mut probe = params.clone();
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let trainable: Vec<String> = params
        .iter()
        .filter(|(_, t)| t.requires_grad())
        .map(|(n, _)| n.to_string())
        .collect();
    for name in &trainable {
        let g = store.get(name)?.grad().map(<[f64]>::to_vec);
        let n = params.get(name)?.len();
        analytic.extend(g.unwrap_or_else(|| vec![0.0; n]));
        for i in 0..n {
            let orig = probe.get(name)?.data()[i];
            probe.get_mut(name)?.data_mut()[i] = orig + FD_STEP;
            let up = eval(&probe)?;
            probe.get_mut(name)?.data_mut()[i] = orig - FD_STEP;
            let down = eval(&probe)?;
            probe.get_mut(name)?.data_mut()[i] = orig;
            numeric.push((up - down) / (2.0 * FD_STEP));
        }
    }
    let max_rel_error = relative_error(&analytic, &numeric);
    Ok(GradCheck {
        analytic,
        numeric,
        max_rel_error,
    })
}
