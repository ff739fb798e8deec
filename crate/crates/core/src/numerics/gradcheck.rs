//! Finite-difference verification of tape gradients (five-point central
//! stencil).

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ParamStore, Tape, Var};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub step: f64,
    /// Tensors larger than this are checked on a random subsample of this size.
    pub max_elements_per_tensor: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-3,
            max_elements_per_tensor: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    /// Largest analytic gradient magnitude among the checked elements.
    pub max_abs_grad: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub params: Vec<ParamCheck>,
}

/// `|a − n| / max(1e-6, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-6)
}

/// Compares analytic gradients of `loss` against finite differences for
/// every parameter in `store`. `loss` must be deterministic.
///
/// Parameter values are restored before returning; gradients in the store
/// are overwritten with the analytic gradient.
pub fn grad_check<F>(store: &mut ParamStore, cfg: &GradCheckConfig, mut loss: F) -> GradCheckReport
where
    F: FnMut(&ParamStore, &mut Tape) -> Var,
{
    store.zero_grads();
    let mut tape = Tape::new();
    let out = loss(store, &mut tape);
    tape.backward_into(out, store);

    let mut eval = |store: &ParamStore| {
        let mut tape = Tape::new();
        let v = loss(store, &mut tape);
        tape.value(v).item()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let ids: Vec<_> = store.ids().collect();
    let mut params = Vec::with_capacity(ids.len());
    for id in ids {
        let n = store.value(id).len();
        let elements: Vec<usize> = if n > cfg.max_elements_per_tensor {
            let mut picked = sample(&mut rng, n, cfg.max_elements_per_tensor).into_vec();
            picked.sort_unstable();
            picked
        } else {
            (0..n).collect()
        };
        let mut worst = 0.0f64;
        let mut max_abs_grad = 0.0f64;
        for e in elements.iter().copied() {
            let original = store.value(id).data()[e];
            let mut at = |offset: f64| {
                store.value_mut(id).data_mut()[e] = original + offset * cfg.step;
                eval(store)
            };
            let numeric = (8.0 * (at(1.0) - at(-1.0)) - (at(2.0) - at(-2.0))) / (12.0 * cfg.step);
            store.value_mut(id).data_mut()[e] = original;
            let analytic = store.grad(id).data()[e];
            worst = worst.max(relative_error(analytic, numeric));
            max_abs_grad = max_abs_grad.max(analytic.abs());
        }
        params.push(ParamCheck {
            name: store.get(id).name.clone(),
            checked: elements.len(),
            max_rel_error: worst,
            max_abs_grad,
        });
    }
    let max_rel_error = params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max);
    GradCheckReport {
        max_rel_error,
        params,
    }
}
