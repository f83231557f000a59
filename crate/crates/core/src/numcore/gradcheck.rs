//! Central finite-difference check of tape gradients.

use serde::Serialize;

use super::params::{ParamId, ParamStore};
use super::tape::{NodeId, Tape};
use crate::error::{Error, Result};

pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Serialize)]
pub struct GradEntry {
    pub name: String,
    pub len: usize,
    pub max_rel_error: f64,
    /// Coordinate where the worst error was observed.
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradReport {
    pub step: f64,
    pub entries: Vec<GradEntry>,
}

impl GradReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&GradEntry> {
        self.entries.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

/// `|a − n| / max(1, |a|, |n|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Compares the tape gradient of the scalar built by `build` against central
/// differences `(f(θ+h) − f(θ−h)) / 2h`, one coordinate at a time.
///
/// `params = None` checks every parameter the analytic backward pass touched.
/// Gradients already in `store` are cleared. Parameter values are restored
/// before returning.
pub fn gradcheck<F>(store: &mut ParamStore, params: Option<&[ParamId]>, step: f64, mut build: F) -> Result<GradReport>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<NodeId>,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidInput(format!("finite-difference step must be > 0, got {step}")));
    }
    store.zero_grad();
    let mut tape = Tape::new();
    let loss = build(&mut tape, store)?;
    let center = tape.scalar_value(loss);
    if !center.is_finite() {
        return Err(Error::ProbeFailure("<center>".into()));
    }
    tape.backward(loss, store)?;
    let ids: Vec<ParamId> = match params {
        Some(p) => p.to_vec(),
        None => {
            let mut t = store.touched().to_vec();
            t.sort();
            t
        }
    };
    let analytic: Vec<Vec<f64>> = ids.iter().map(|&id| store.grad(id).to_vec()).collect();
    store.zero_grad();

    let mut eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let n = build(&mut tape, store)?;
        Ok(tape.scalar_value(n))
    };

    let mut entries = Vec::with_capacity(ids.len());
    for (id, analytic) in ids.iter().zip(analytic) {
        let len = store.value(*id).len();
        let mut numeric = vec![0.0; len];
        #[allow(clippy::needless_range_loop)]
        for k in 0..len {
            let orig = store.value(*id)[k];
            store.value_mut(*id)[k] = orig + step;
            let plus = eval(store);
            store.value_mut(*id)[k] = orig - step;
            let minus = eval(store);
            store.value_mut(*id)[k] = orig;
            let (plus, minus) = (plus?, minus?);
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::ProbeFailure(store.name(*id).to_string()));
            }
            numeric[k] = (plus - minus) / (2.0 * step);
        }
        let (worst_index, max_rel_error) = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, n)| relative_error(*a, *n))
            .enumerate()
            .fold((0, 0.0), |best, (i, e)| if e > best.1 { (i, e) } else { best });
        entries.push(GradEntry {
            name: store.name(*id).to_string(),
            len,
            max_rel_error,
            worst_index,
            analytic,
            numeric,
        });
    }
    Ok(GradReport { step, entries })
}
