use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ParamId, ParamStore, Result, Tape, Var};

/// Which parameter entries a gradient check perturbs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntrySelection {
    All,
    /// About `count` entries in total, spread evenly across the checked
    /// parameters and drawn without replacement within each.
    Sample { count: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub entries_checked: usize,
    /// (parameter name, flat index, analytic, numeric) of the worst entry.
    pub worst: Option<(String, usize, f64, f64)>,
}

/// Compares tape gradients against central differences
/// `(f(p + h) − f(p − h)) / 2h` for the listed parameters.
///
/// Relative error per entry uses `max(|analytic|, |numeric|, 1e-8)` as the
/// denominator. Listed parameters are temporarily marked as requiring
/// gradients; their flags and values are restored before returning.
pub fn finite_difference_check<F>(
    store: &mut ParamStore,
    params: &[ParamId],
    h: f64,
    selection: EntrySelection,
    mut f: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
{
    let saved_flags: Vec<bool> = params.iter().map(|&p| store.get(p).requires_grad()).collect();
    for &p in params {
        store.set_requires_grad(p, true);
    }

    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|&p| {
            grads
                .wrt_param(p)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; store.get(p).len()])
        })
        .collect();

    let mut eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let out = f(&mut tape, store)?;
        Ok(tape.value(out).data()[0])
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        entries_checked: 0,
        worst: None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(match selection {
        EntrySelection::Sample { seed, .. } => seed,
        EntrySelection::All => 0,
    });
    let per_param = match selection {
        EntrySelection::All => usize::MAX,
        EntrySelection::Sample { count, .. } => count.div_ceil(params.len().max(1)),
    };

    for (pi, &p) in params.iter().enumerate() {
        let len = store.get(p).len();
        let entries: Vec<usize> = if per_param >= len {
            (0..len).collect()
        } else {
            let mut idx = sample(&mut rng, len, per_param).into_vec();
            idx.sort_unstable();
            idx
        };
        for i in entries {
            let orig = store.get(p).data()[i];
            store.get_mut(p).data_mut()[i] = orig + h;
            let up = eval(store);
            store.get_mut(p).data_mut()[i] = orig - h;
            let down = eval(store);
            store.get_mut(p).data_mut()[i] = orig;
            let numeric = (up? - down?) / (2.0 * h);
            let a = analytic[pi][i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.entries_checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some((store.name(p).to_string(), i, a, numeric));
            }
        }
    }

    for (&p, on) in params.iter().zip(saved_flags) {
        store.set_requires_grad(p, on);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn quadratic_matches_analytic() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
        let report = finite_difference_check(&mut store, &[x], 1e-4, EntrySelection::All, |tape, s| {
            let v = tape.param(s, x);
            let sq = tape.mul(v, v)?;
            tape.sum(sq)
        })
        .unwrap();
        assert_eq!(report.entries_checked, 3);
        assert!(report.max_rel_error < 1e-6, "{report:?}");
        assert!(!store.get(x).requires_grad());
    }

    #[test]
    fn constant_function_has_zero_error() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::new(vec![2], vec![1.0, -1.0]).unwrap());
        let report = finite_difference_check(&mut store, &[x], 1e-4, EntrySelection::All, |tape, _| {
            Ok(tape.constant(Tensor::scalar(4.0)))
        })
        .unwrap();
        assert_eq!(report.max_rel_error, 0.0);
    }

    #[test]
    fn sampling_spreads_across_params() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::filled(&[50], 0.5));
        let b = store.add("b", Tensor::filled(&[50], -0.5));
        let report = finite_difference_check(
            &mut store,
            &[a, b],
            1e-4,
            EntrySelection::Sample { count: 10, seed: 3 },
            |tape, s| {
                let va = tape.param(s, a);
                let vb = tape.param(s, b);
                let p = tape.mul(va, vb)?;
                tape.sum(p)
            },
        )
        .unwrap();
        assert_eq!(report.entries_checked, 10);
        assert!(report.max_rel_error < 1e-8);
    }
}
