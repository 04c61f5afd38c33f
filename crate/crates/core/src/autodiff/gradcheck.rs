//! Central finite-difference gradient checks (f64 only).

use crate::autodiff::{Graph, Var};
use crate::error::{usage_err, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Gradients smaller than this are compared in absolute terms.
pub const MAGNITUDE_FLOOR: f64 = 1e-6;

/// `|a − n| / max(|a|, |n|, MAGNITUDE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(MAGNITUDE_FLOOR)
}

fn scalar_of(g: &Graph<f64>, v: Var) -> Result<f64> {
    let t = g.value(v);
    if t.numel() != 1 {
        return Err(usage_err!("gradient check needs a scalar function, got {:?}", t.shape()));
    }
    Ok(t.data()[0])
}

/// Worst relative error between backward gradients and central differences
/// `(f(x+h) − f(x−h)) / 2h` over every element of every input.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], h: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|x| g.constant(x.clone())).collect();
        let out = f(&mut g, &vars)?;
        scalar_of(&g, out)
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|x| g.leaf(x.clone(), true)).collect();
    let out = f(&mut g, &vars)?;
    scalar_of(&g, out)?;
    let grads = g.backward(out)?;

    let mut worst = 0.0f64;
    let mut probe = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var);
        for i in 0..inputs[k].numel() {
            let orig = probe[k].data()[i];
            probe[k].data_mut()[i] = orig + h;
            let plus = eval(&probe)?;
            probe[k].data_mut()[i] = orig - h;
            let minus = eval(&probe)?;
            probe[k].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.map_or(0.0, |g| g[i]);
            worst = worst.max(relative_error(a, numeric));
        }
    }
    Ok(worst)
}

/// Per-parameter worst relative error for a loss built from a parameter
/// store. `sample` limits how many (evenly strided) elements are probed per
/// tensor; `None` probes every element.
pub fn grad_check_params<F>(
    store: &mut ParamStore<f64>,
    h: f64,
    sample: Option<usize>,
    f: F,
) -> Result<Vec<(String, f64)>>
where
    F: Fn(&ParamStore<f64>, &mut Graph<f64>) -> Result<Var>,
{
    let mut g = Graph::new();
    let out = f(store, &mut g)?;
    scalar_of(&g, out)?;
    let grads = g.backward(out)?;
    let analytic: Vec<(String, Option<Vec<f64>>)> = store
        .names()
        .map(|name| {
            let grad = g.param_var(name).and_then(|v| grads.get(v)).map(<[f64]>::to_vec);
            (name.to_string(), grad)
        })
        .collect();

    let mut report = Vec::new();
    for (name, grad) in analytic {
        if !store.get(&name).is_some_and(|p| p.requires_grad) {
            continue;
        }
        let n = store.get(&name).map_or(0, |p| p.value.numel());
        let step = match sample {
            Some(s) if s > 0 && n > s => n / s,
            _ => 1,
        };
        let mut worst = 0.0f64;
        for i in (0..n).step_by(step) {
            let orig = store.value(&name)?.data()[i];
            store.value_mut(&name)?.data_mut()[i] = orig + h;
            let plus = {
                let mut g = Graph::new();
                let v = f(store, &mut g)?;
                scalar_of(&g, v)?
            };
            store.value_mut(&name)?.data_mut()[i] = orig - h;
            let minus = {
                let mut g = Graph::new();
                let v = f(store, &mut g)?;
                scalar_of(&g, v)?
            };
            store.value_mut(&name)?.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = grad.as_ref().map_or(0.0, |g| g[i]);
            worst = worst.max(relative_error(a, numeric));
        }
        report.push((name, worst));
    }
    Ok(report)
}
