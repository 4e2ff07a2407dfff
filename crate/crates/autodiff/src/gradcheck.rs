use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Graph, ParamStore, Result, Var};

/// Settings for [`gradcheck`].
#[derive(Clone, Debug)]
pub struct GradcheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Pass threshold on the reported maximum relative error.
    pub tolerance: f64,
    /// Denominator floor: errors are relative to `max(|analytic|, |numeric|, floor)`.
    pub floor: f64,
    /// Check at most this many randomly chosen entries per parameter.
    pub max_entries_per_param: Option<usize>,
    pub seed: u64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-6,
            tolerance: 1e-4,
            floor: 1e-3,
            max_entries_per_param: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    pub worst_param: Option<String>,
    pub worst_entry: usize,
    pub entries_checked: usize,
    pub passed: bool,
}

/// Compares reverse-mode gradients of the scalar built by `build` against
/// central finite differences, one parameter entry at a time.
pub fn gradcheck<F>(store: &ParamStore, build: F, opts: &GradcheckOptions) -> Result<GradcheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let out = build(&mut g, s)?;
        Ok(g.value(out).data()[0])
    };
    let mut g = Graph::new();
    let out = build(&mut g, store)?;
    let grads = g.backward(out)?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut probe = store.clone();
    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        worst_param: None,
        worst_entry: 0,
        entries_checked: 0,
        passed: true,
    };
    for id in store.ids() {
        let n = store.get(id).len();
        let entries: Vec<usize> = match opts.max_entries_per_param {
            Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        for k in entries {
            let orig = store.get(id).data()[k];
            probe.get_mut(id).data_mut()[k] = orig + opts.step;
            let up = eval(&probe)?;
            probe.get_mut(id).data_mut()[k] = orig - opts.step;
            let down = eval(&probe)?;
            probe.get_mut(id).data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * opts.step);
            let analytic = grads.get(id).map_or(0.0, |a| a.data()[k]);
            let denom = analytic.abs().max(numeric.abs()).max(opts.floor);
            let rel = (analytic - numeric).abs() / denom;
            report.entries_checked += 1;
            if rel > report.max_rel_error || report.worst_param.is_none() {
                report.max_rel_error = rel.max(report.max_rel_error);
                if rel >= report.max_rel_error {
                    report.worst_param = Some(store.name(id).to_string());
                    report.worst_entry = k;
                }
            }
        }
    }
    report.passed = report.max_rel_error < opts.tolerance;
    Ok(report)
}
