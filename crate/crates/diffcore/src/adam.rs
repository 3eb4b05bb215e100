use crate::error::{DiffError, Result};
use crate::tensor::{ParamId, ParamStore, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct ParamGroup {
    pub params: Vec<ParamId>,
    pub lr: f64,
}

/// Adam with bias correction over one or more parameter groups.
///
/// Moments are kept per parameter; the step counter is shared by all groups
/// of one optimizer and advances by exactly one per [`Adam::step`].
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub groups: Vec<ParamGroup>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    t: u64,
    /// First and second moments, indexed like the flattened group list.
    moments: Vec<(Tensor, Tensor)>,
}

impl Adam {
    pub fn new(store: &ParamStore, params: &[ParamId], lr: f64) -> Self {
        Self::with_groups(
            store,
            vec![ParamGroup {
                params: params.to_vec(),
                lr,
            }],
        )
    }

    pub fn with_groups(store: &ParamStore, groups: Vec<ParamGroup>) -> Self {
        let moments = groups
            .iter()
            .flat_map(|g| g.params.iter())
            .map(|&id| {
                let shape = store.value(id).shape();
                (Tensor::zeros(shape), Tensor::zeros(shape))
            })
            .collect();
        Adam {
            groups,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            t: 0,
            moments,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn params(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.groups.iter().flat_map(|g| g.params.iter().copied())
    }

    pub fn moments(&self) -> &[(Tensor, Tensor)] {
        &self.moments
    }

    /// Restores counter and moments, e.g. from a checkpoint.
    pub fn restore(&mut self, t: u64, moments: Vec<(Tensor, Tensor)>) -> Result<()> {
        if moments.len() != self.moments.len() {
            return Err(DiffError::shape(
                "adam_restore",
                &[self.moments.len()],
                &[moments.len()],
            ));
        }
        for ((m, v), (cm, _)) in moments.iter().zip(&self.moments) {
            if m.shape() != cm.shape() || v.shape() != cm.shape() {
                return Err(DiffError::shape("adam_restore", cm.shape(), m.shape()));
            }
        }
        self.t = t;
        self.moments = moments;
        Ok(())
    }

    /// Applies one update from the gradients currently held in `store`.
    /// Gradients are left untouched.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        let mut slot = 0;
        for group in &self.groups {
            for &id in &group.params {
                if store.grad(id).shape() != self.moments[slot].0.shape() {
                    return Err(DiffError::shape(
                        "adam_step",
                        self.moments[slot].0.shape(),
                        store.grad(id).shape(),
                    ));
                }
                slot += 1;
            }
        }
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let mut slot = 0;
        for group in &self.groups {
            for &id in &group.params {
                let grad = store.grad(id).data().to_vec();
                let (m, v) = &mut self.moments[slot];
                let value = store.value_mut(id).data_mut();
                for i in 0..grad.len() {
                    let g = grad[i];
                    let mi = &mut m.data_mut()[i];
                    *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                    let vi = &mut v.data_mut()[i];
                    *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                    let m_hat = *mi / bc1;
                    let v_hat = *vi / bc2;
                    value[i] -= group.lr * m_hat / (v_hat.sqrt() + self.epsilon);
                }
                slot += 1;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::from_vec(vec![1.0, -2.0, 3.0]));
        let mut adam = Adam::new(&store, &[p], 0.1);
        for _ in 0..10 {
            adam.step(&mut store).unwrap();
        }
        assert_eq!(store.value(p).data(), &[1.0, -2.0, 3.0]);
        assert_eq!(adam.steps(), 10);
    }

    #[test]
    fn first_step_magnitude_is_learning_rate() {
        // t = 1: m = 0.1, v = 0.001, m_hat = 1, v_hat = 1 -> delta = -lr / (1 + eps)
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::scalar(0.0));
        store.grad_mut(p).data_mut()[0] = 1.0;
        let mut adam = Adam::new(&store, &[p], 0.1);
        adam.step(&mut store).unwrap();
        let expected = -0.1 / (1.0 + 1e-8);
        assert!((store.value(p).item() - expected).abs() < 1e-15);
        assert_eq!(store.grad(p).item(), 1.0);
    }

    #[test]
    fn groups_use_their_own_learning_rates() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::scalar(0.0));
        let b = store.add("b", Tensor::scalar(0.0));
        store.grad_mut(a).data_mut()[0] = 1.0;
        store.grad_mut(b).data_mut()[0] = 1.0;
        let mut adam = Adam::with_groups(
            &store,
            vec![
                ParamGroup {
                    params: vec![a],
                    lr: 0.1,
                },
                ParamGroup {
                    params: vec![b],
                    lr: 0.01,
                },
            ],
        );
        adam.step(&mut store).unwrap();
        let da = store.value(a).item();
        let db = store.value(b).item();
        assert!((da / db - 10.0).abs() < 1e-9);
    }

    #[test]
    fn mismatched_restore_is_rejected() {
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::zeros(&[2]));
        let mut adam = Adam::new(&store, &[p], 0.1);
        let bad = vec![(Tensor::zeros(&[3]), Tensor::zeros(&[3]))];
        assert!(adam.restore(1, bad).is_err());
    }
}
