use crate::error::{DiffError, Result};

/// Row-major block of `f64` values with an explicit shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(DiffError::shape("tensor", &shape, &[data.len()]));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(DiffError::shape("reshape", &self.shape, shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Handle to a trainable tensor held by a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors together with their gradient accumulators.
///
/// Every parameter owns a gradient of identical shape. Gradients only ever
/// grow through [`crate::Graph::backward`] and are reset by `zero_grad`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    grads: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let grad = Tensor::zeros(value.shape());
        self.names.push(name.into());
        self.values.push(value);
        self.grads.push(grad);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.grads[id.0]
    }

    /// Replaces a parameter's value; the shape must not change.
    pub fn set_value(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        if value.shape() != self.values[id.0].shape() {
            return Err(DiffError::shape(
                "set_value",
                self.values[id.0].shape(),
                value.shape(),
            ));
        }
        self.values[id.0] = value;
        Ok(())
    }

    pub fn zero_grad(&mut self, ids: &[ParamId]) {
        for id in ids {
            self.grads[id.0].data.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn zero_all_grads(&mut self) {
        for g in &mut self.grads {
            g.data.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, grad: &[f64]) {
        for (acc, g) in self.grads[id.0].data.iter_mut().zip(grad) {
            *acc += g;
        }
    }

    /// Total number of scalar weights across the given parameters.
    pub fn count(&self, ids: &[ParamId]) -> usize {
        ids.iter().map(|id| self.values[id.0].numel()).sum()
    }
}

/// `target <- tau * online + (1 - tau) * target`, pairwise over two groups.
pub fn soft_update(
    store: &mut ParamStore,
    online: &[ParamId],
    target: &[ParamId],
    tau: f64,
) -> Result<()> {
    if online.len() != target.len() {
        return Err(DiffError::shape(
            "soft_update",
            &[online.len()],
            &[target.len()],
        ));
    }
    for (&o, &t) in online.iter().zip(target) {
        if store.values[o.0].shape() != store.values[t.0].shape() {
            return Err(DiffError::shape(
                "soft_update",
                store.values[o.0].shape(),
                store.values[t.0].shape(),
            ));
        }
    }
    for (&o, &t) in online.iter().zip(target) {
        let src = store.values[o.0].data.clone();
        for (dst, s) in store.values[t.0].data.iter_mut().zip(src) {
            *dst = tau * s + (1.0 - tau) * *dst;
        }
    }
    Ok(())
}

/// Copies online values into target parameters (a soft update with tau = 1).
pub fn hard_update(store: &mut ParamStore, online: &[ParamId], target: &[ParamId]) -> Result<()> {
    soft_update(store, online, target, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_data() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        let err = Tensor::new(vec![2, 3], vec![0.0; 5]).unwrap_err();
        assert!(matches!(err, DiffError::Shape { .. }));
    }

    #[test]
    fn soft_update_rates() {
        let mut store = ParamStore::new();
        let online = store.add("o", Tensor::scalar(2.0));
        let target = store.add("t", Tensor::scalar(1.0));
        soft_update(&mut store, &[online], &[target], 0.0).unwrap();
        assert_eq!(store.value(target).item(), 1.0);
        soft_update(&mut store, &[online], &[target], 0.01).unwrap();
        assert!((store.value(target).item() - 1.01).abs() < 1e-15);
        soft_update(&mut store, &[online], &[target], 1.0).unwrap();
        assert_eq!(store.value(target).item(), 2.0);
    }

    #[test]
    fn soft_update_rejects_mismatched_shapes() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::zeros(&[2]));
        let b = store.add("b", Tensor::zeros(&[3]));
        assert!(soft_update(&mut store, &[a], &[b], 0.5).is_err());
    }
}
