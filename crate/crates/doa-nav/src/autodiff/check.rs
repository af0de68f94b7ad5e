//! Finite-difference gradient checking. The check only ever evaluates the
//! forward pass of the function under test, so it stays independent of the
//! backward implementation it is used to verify.

use rand::seq::index::sample;
use rand::Rng;

use super::{Graph, NodeId, Result, Tensor};

/// Builds a scalar loss from leaves bound in a fresh graph. Called many
/// times with perturbed parameter values, so it must be deterministic.
pub trait LossFn {
    fn build(&self, g: &mut Graph, params: &[NodeId]) -> Result<NodeId>;
}

impl<F> LossFn for F
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    fn build(&self, g: &mut Graph, params: &[NodeId]) -> Result<NodeId> {
        self(g, params)
    }
}

fn eval(f: &impl LossFn, params: &[Tensor]) -> Result<f64> {
    let mut g = Graph::new();
    let ids: Vec<NodeId> = params.iter().map(|t| g.leaf(t.clone())).collect();
    let loss = f.build(&mut g, &ids)?;
    Ok(g.value(loss).data()[0])
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}

/// Central-difference check over every coordinate of every parameter.
/// Returns the maximum relative error between tape gradients and finite
/// differences.
pub fn grad_check(f: impl LossFn, params: &[Tensor], eps: f64) -> Result<f64> {
    run(&f, params, eps, &mut |n| (0..n).collect())
}

/// As `grad_check`, but probing at most `max_coords` randomly chosen
/// coordinates per parameter (for large parameter sets).
pub fn grad_check_sampled(
    f: impl LossFn,
    params: &[Tensor],
    eps: f64,
    max_coords: usize,
    rng: &mut impl Rng,
) -> Result<f64> {
    run(&f, params, eps, &mut |n| {
        if n <= max_coords {
            (0..n).collect()
        } else {
            let mut idx = sample(rng, n, max_coords).into_vec();
            idx.sort_unstable();
            idx
        }
    })
}

fn run(
    f: &impl LossFn,
    params: &[Tensor],
    eps: f64,
    pick: &mut impl FnMut(usize) -> Vec<usize>,
) -> Result<f64> {
    assert!(eps > 0.0, "eps must be positive");

    // Analytic gradients from one tape pass.
    let mut g = Graph::new();
    let ids: Vec<NodeId> = params.iter().map(|t| g.leaf(t.clone())).collect();
    let loss = f.build(&mut g, &ids)?;
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| g.grad(id).map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; g.value(id).numel()]))
        .collect();

    let mut max_rel = 0.0f64;
    for (pi, base) in params.iter().enumerate() {
        for ci in pick(base.numel()) {
            let mut plus: Vec<Tensor> = params.to_vec();
            plus[pi].data_mut()[ci] += eps;
            let mut minus: Vec<Tensor> = params.to_vec();
            minus[pi].data_mut()[ci] -= eps;
            let numeric = (eval(f, &plus)? - eval(f, &minus)?) / (2.0 * eps);
            max_rel = max_rel.max(relative_error(analytic[pi][ci], numeric));
        }
    }
    Ok(max_rel)
}
