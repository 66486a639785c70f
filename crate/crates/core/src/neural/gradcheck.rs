use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};

const STEP: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Number of scalar coordinates compared.
    pub checked: usize,
    /// Largest `|analytic − numeric| / max(1, |numeric|)`.
    pub max_rel_err: f64,
    /// Parameter name and element index of the worst coordinate.
    pub worst: Option<(String, usize)>,
}

/// Compares reverse-mode gradients of `loss` with central differences on
/// `n_coords` parameter scalars chosen at random (all of them if fewer).
pub fn grad_check<F>(store: &ParamStore, loss: F, n_coords: usize, seed: u64) -> GradCheckReport
where
    F: for<'a> Fn(&mut Tape<'a>) -> Var,
{
    let grads = {
        let mut tape = Tape::new(store);
        let l = loss(&mut tape);
        tape.backward(l)
    };
    let eval = |s: &ParamStore| {
        let mut tape = Tape::new(s);
        let l = loss(&mut tape);
        tape.scalar(l)
    };

    let mut coords: Vec<(ParamId, usize)> = Vec::new();
    for (id, _, v) in store.iter() {
        coords.extend((0..v.len()).map(|k| (id, k)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = sample(&mut rng, coords.len(), n_coords.min(coords.len()));

    let mut work = store.clone();
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_err: 0.0,
        worst: None,
    };
    for i in picked {
        let (id, k) = coords[i];
        let cols = store.value(id).ncols();
        let at = [k / cols, k % cols];
        let orig = store.value(id)[at];
        work.value_mut(id)[at] = orig + STEP;
        let up = eval(&work);
        work.value_mut(id)[at] = orig - STEP;
        let down = eval(&work);
        work.value_mut(id)[at] = orig;
        let numeric = (up - down) / (2.0 * STEP);
        let analytic = grads[id.0]
            .as_ref()
            .map_or(0.0, |g| g[at]);
        let err = (analytic - numeric).abs() / numeric.abs().max(1.0);
        report.checked += 1;
        if err > report.max_rel_err || report.worst.is_none() {
            report.max_rel_err = report.max_rel_err.max(err);
            report.worst = Some((store.name(id).to_string(), k));
        }
    }
    report
}
