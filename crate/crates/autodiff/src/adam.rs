use crate::{Array, AutodiffError, Gradients, ParamId, ParamStore, Result};

/// Adam optimizer with bias-corrected moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    state: AdamState,
}

/// Moment estimates and step counter, one slot per parameter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Array>,
    pub v: Vec<Array>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self::with_betas(lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            state: AdamState::default(),
        }
    }

    pub fn state(&self) -> &AdamState {
        &self.state
    }

    pub fn set_state(&mut self, state: AdamState) {
        self.state = state;
    }

    fn ensure_state(&mut self, store: &ParamStore) -> Result<()> {
        if self.state.m.is_empty() {
            for (_, _, value) in store.iter() {
                self.state.m.push(Array::zeros(value.rows(), value.cols()));
                self.state.v.push(Array::zeros(value.rows(), value.cols()));
            }
            return Ok(());
        }
        if self.state.m.len() != store.len() || self.state.v.len() != store.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "adam",
                detail: format!("state for {} params, store has {}", self.state.m.len(), store.len()),
            });
        }
        for (id, name, value) in store.iter() {
            let i = id.index();
            if self.state.m[i].shape() != value.shape() || self.state.v[i].shape() != value.shape() {
                return Err(AutodiffError::ShapeMismatch {
                    op: "adam",
                    detail: format!("moment shape for {name}"),
                });
            }
        }
        Ok(())
    }

    /// One update. Parameters without a gradient are treated as having a zero gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<()> {
        self.step_filtered(store, grads, |_| true)
    }

    /// Like [`Adam::step`], but parameters rejected by `trainable` keep both
    /// their values and their moments.
    pub fn step_filtered(
        &mut self,
        store: &mut ParamStore,
        grads: &Gradients,
        trainable: impl Fn(ParamId) -> bool,
    ) -> Result<()> {
        self.ensure_state(store)?;
        for (id, g) in &grads.by_param {
            if g.shape() != store.get(*id).shape() {
                return Err(AutodiffError::ShapeMismatch {
                    op: "adam",
                    detail: format!("gradient {:?} for {} {:?}", g.shape(), store.name(*id), store.get(*id).shape()),
                });
            }
        }
        self.state.step += 1;
        let t = self.state.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let ids: Vec<_> = store.ids().collect();
        for id in ids.into_iter().filter(|&id| trainable(id)) {
            let i = id.index();
            let grad = grads.get(id);
            let m = self.state.m[i].data_mut();
            let v = self.state.v[i].data_mut();
            let p = store.get_mut(id).data_mut();
            for k in 0..p.len() {
                let gk = grad.map_or(0.0, |g| g.data()[k]);
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
                let mh = m[k] / bc1;
                let vh = v[k] / bc2;
                p[k] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
