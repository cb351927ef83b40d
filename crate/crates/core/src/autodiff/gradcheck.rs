use ndarray::ArrayD;

use super::graph::{Graph, Tensor};
use super::params::{Bindings, ParamStore};
use crate::error::AutodiffError;

/// Gradients smaller than this are compared absolutely: central differences
/// with a 1e-6 step cannot resolve them to better than about 1e-10.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-4;

/// `|analytic - numeric| / max(RELATIVE_ERROR_FLOOR, |analytic| + |numeric|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

fn check_step(step: f64) -> Result<(), AutodiffError> {
    if step > 0.0 && step.is_finite() {
        Ok(())
    } else {
        Err(AutodiffError::InvalidArgument {
            op: "grad_check",
            message: format!("step must be positive, got {step}"),
        })
    }
}

fn scalar_root<E: From<AutodiffError>>(graph: &Graph, root: Tensor) -> Result<f64, E> {
    if !graph.shape(root).is_empty() {
        return Err(AutodiffError::NonScalarRoot(graph.shape(root).to_vec()).into());
    }
    Ok(graph.scalar(root))
}

/// Compares the reverse-mode gradient of a scalar function of `input`
/// against central differences and returns the worst relative error.
pub fn grad_check<F, E>(function: F, input: &ArrayD<f64>, step: f64) -> Result<f64, E>
where
    F: Fn(&mut Graph, Tensor) -> Result<Tensor, E>,
    E: From<AutodiffError>,
{
    check_step(step)?;
    let mut graph = Graph::new();
    let x = graph.leaf(input.clone(), true);
    let root = function(&mut graph, x)?;
    scalar_root::<E>(&graph, root)?;
    graph.backward(root)?;
    let analytic = graph
        .grad(x)
        .cloned()
        .unwrap_or_else(|| ArrayD::zeros(input.raw_dim()));

    let eval = |v: ArrayD<f64>| -> Result<f64, E> {
        let mut g = Graph::new();
        let x = g.leaf(v, false);
        let r = function(&mut g, x)?;
        scalar_root::<E>(&g, r)
    };

    let mut worst = 0.0f64;
    for (k, a) in analytic.iter().enumerate() {
        let mut plus = input.clone();
        let mut minus = input.clone();
        plus.as_slice_mut().unwrap()[k] += step;
        minus.as_slice_mut().unwrap()[k] -= step;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * step);
        worst = worst.max(relative_error(*a, numeric));
    }
    Ok(worst)
}

/// Same as [`grad_check`], but differentiates with respect to every
/// parameter in `store`.
pub fn grad_check_params<F, E>(function: F, store: &ParamStore, step: f64) -> Result<f64, E>
where
    F: Fn(&mut Graph, &Bindings) -> Result<Tensor, E>,
    E: From<AutodiffError>,
{
    check_step(step)?;
    let mut graph = Graph::new();
    let bound = store.bind(&mut graph);
    let root = function(&mut graph, &bound)?;
    scalar_root::<E>(&graph, root)?;
    graph.backward(root)?;
    let grads = bound.gradients(&graph);

    let eval = |s: &ParamStore| -> Result<f64, E> {
        let mut g = Graph::new();
        let b = s.bind_frozen(&mut g);
        let r = function(&mut g, &b)?;
        scalar_root::<E>(&g, r)
    };

    let mut worst = 0.0f64;
    let mut probe = store.clone();
    for (name, grad) in &grads {
        let len = store.get(name).unwrap().len();
        for k in 0..len {
            let original = store.get(name).unwrap().as_slice().unwrap()[k];
            probe.get_mut(name).unwrap().as_slice_mut().unwrap()[k] = original + step;
            let up = eval(&probe)?;
            probe.get_mut(name).unwrap().as_slice_mut().unwrap()[k] = original - step;
            let down = eval(&probe)?;
            probe.get_mut(name).unwrap().as_slice_mut().unwrap()[k] = original;
            let numeric = (up - down) / (2.0 * step);
            let analytic = grad.as_ref().map_or(0.0, |g| g.as_slice().unwrap()[k]);
            worst = worst.max(relative_error(analytic, numeric));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::array;

    #[test]
    fn constant_function_has_zero_error() {
        let err = grad_check::<_, AutodiffError>(
            |g, _x| Ok(g.constant(array(&[], vec![4.0]))),
            &array(&[3], vec![1.0, 2.0, 3.0]),
            1e-6,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn non_scalar_output_rejected() {
        let res = grad_check::<_, AutodiffError>(
            |g, x| Ok(g.relu(x)),
            &array(&[2], vec![1.0, 2.0]),
            1e-6,
        );
        assert!(matches!(res, Err(AutodiffError::NonScalarRoot(_))));
    }

    #[test]
    fn nonpositive_step_rejected() {
        let res = grad_check::<_, AutodiffError>(
            |g, x| Ok(g.sum_all(x)),
            &array(&[1], vec![1.0]),
            0.0,
        );
        assert!(res.is_err());
    }
}
