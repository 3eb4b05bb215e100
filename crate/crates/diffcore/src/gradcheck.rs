//! Central finite-difference checks of analytic gradients.

use crate::error::{DiffError, Result};
use crate::graph::{Graph, Var};
use crate::tensor::{ParamId, ParamStore, Tensor};

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

fn eval_scalar(g: &Graph, out: Var) -> Result<f64> {
    let v = g.value(out);
    if v.numel() != 1 {
        return Err(DiffError::contract(
            "gradient_check",
            format!("function must be scalar, got {:?}", v.shape()),
        ));
    }
    let y = v.item();
    if !y.is_finite() {
        return Err(DiffError::NonFinite {
            what: "gradient_check objective".into(),
        });
    }
    Ok(y)
}

/// Max relative error between backprop and central differences of `f` at `x`.
pub fn gradient_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    if h <= 0.0 {
        return Err(DiffError::contract("gradient_check", "step must be positive"));
    }
    let mut store = ParamStore::new();
    let mut g = Graph::new();
    let xv = g.leaf(x.clone());
    let out = f(&mut g, xv)?;
    eval_scalar(&g, out)?;
    g.backward(out, &mut store)?;
    let analytic = g
        .grad(xv)
        .map(|s| s.to_vec())
        .unwrap_or_else(|| vec![0.0; x.numel()]);

    let eval_at = |t: Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let v = g.constant(t);
        let out = f(&mut g, v)?;
        eval_scalar(&g, out)
    };
    let mut worst: f64 = 0.0;
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        let numeric = (eval_at(plus)? - eval_at(minus)?) / (2.0 * h);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    Ok(worst)
}

/// Same check taken over stored parameters instead of a free input.
///
/// `f` builds the objective from the store; every coordinate of every listed
/// parameter is perturbed in turn. Store gradients are zeroed first.
pub fn gradient_check_params<F>(f: F, store: &mut ParamStore, params: &[ParamId], h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    if h <= 0.0 {
        return Err(DiffError::contract("gradient_check", "step must be positive"));
    }
    store.zero_all_grads();
    let mut g = Graph::new();
    let out = f(&mut g, store)?;
    eval_scalar(&g, out)?;
    g.backward(out, store)?;
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let out = f(&mut g, s)?;
        eval_scalar(&g, out)
    };
    let mut worst: f64 = 0.0;
    for &id in params {
        for i in 0..store.value(id).numel() {
            let analytic = store.grad(id).data()[i];
            let orig = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = orig + h;
            let up = eval(store)?;
            store.value_mut(id).data_mut()[i] = orig - h;
            let down = eval(store)?;
            store.value_mut(id).data_mut()[i] = orig;
            worst = worst.max(relative_error(analytic, (up - down) / (2.0 * h)));
        }
    }
    store.zero_all_grads();
    Ok(worst)
}
