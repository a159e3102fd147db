use std::sync::Arc;

use super::array::{Element, NdArray};
use super::graph::{Graph, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    /// (input index, element index) of the worst element.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
}

fn eval<T: Element, F>(f: &F, inputs: &[NdArray<T>]) -> Result<T>
where
    F: Fn(&Graph<T>, &[Var]) -> Result<Var>,
{
    let g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|x| g.leaf(Arc::new(x.clone()), true)).collect();
    let out = f(&g, &vars)?;
    let v = g.value(out);
    if v.len() != 1 {
        return Err(Error::dim(format!(
            "grad_check needs a scalar function, got {:?}",
            v.shape()
        )));
    }
    let y = v.data()[0];
    if !y.is_finite() {
        return Err(Error::NonFinite(format!("function value {y} during gradient check")));
    }
    Ok(y)
}

/// Compares reverse-mode gradients of the scalar `f` with central finite
/// differences at every element of every input.
///
/// The per-element error is `|g_a - g_n| / max(1e-8, |g_a| + |g_n|)`; the
/// maximum over all elements is returned.
pub fn grad_check<T: Element, F>(f: F, inputs: &[NdArray<T>], eps: f64) -> Result<GradCheck>
where
    F: Fn(&Graph<T>, &[Var]) -> Result<Var>,
{
    if eps <= 0.0 || !eps.is_finite() {
        return Err(Error::config(format!("grad_check eps must be positive, got {eps}")));
    }
    let analytic: Vec<Vec<f64>> = {
        let g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|x| g.leaf(Arc::new(x.clone()), true)).collect();
        let out = f(&g, &vars)?;
        let grads = g.backward(out)?;
        vars.iter()
            .zip(inputs)
            .map(|(&v, x)| match grads.get(v) {
                Some(gr) => gr.to_f64_vec(),
                None => vec![0.0; x.len()],
            })
            .collect()
    };

    let mut report = GradCheck {
        max_rel_err: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
    };
    let mut work: Vec<NdArray<T>> = inputs.to_vec();
    for (a, input) in inputs.iter().enumerate() {
        for (e, &orig) in input.data().iter().enumerate() {
            work[a].data_mut()[e] = T::of(orig.as_f64() + eps);
            let up = eval(&f, &work)?.as_f64();
            work[a].data_mut()[e] = T::of(orig.as_f64() - eps);
            let down = eval(&f, &work)?.as_f64();
            work[a].data_mut()[e] = orig;

            let numeric = (up - down) / (2.0 * eps);
            let ga = analytic[a][e];
            if !ga.is_finite() {
                return Err(Error::NonFinite(format!("analytic gradient at input {a}, element {e}")));
            }
            let rel = (ga - numeric).abs() / (ga.abs() + numeric.abs()).max(1e-8);
            if rel > report.max_rel_err {
                report = GradCheck {
                    max_rel_err: rel,
                    worst: (a, e),
                    analytic: ga,
                    numeric,
                };
            }
        }
    }
    Ok(report)
}
