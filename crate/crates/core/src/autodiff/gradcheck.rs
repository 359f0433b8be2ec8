use super::graph::{Graph, OpKind, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Compare analytic gradients against central finite differences.
///
/// `function` builds a scalar from the parameter leaves it is handed (in the
/// same order as `params`). Returns the max over all entries of
/// `|analytic - numeric| / max(1, |analytic|)`.
pub fn grad_check<F>(function: F, params: &[Tensor], step: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    grad_check_with_fault(function, params, step, None)
}

/// Same as [`grad_check`], with an optional corrupted backward rule on the
/// analytic pass.
pub fn grad_check_with_fault<F>(
    function: F,
    params: &[Tensor],
    step: f64,
    fault: Option<OpKind>,
) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(Error::contract(format!("grad_check step must be > 0, got {step}")));
    }
    let mut graph = Graph::new();
    if let Some(kind) = fault {
        graph.inject_backward_fault(kind);
    }
    let vars = params
        .iter()
        .map(|p| graph.leaf(&p.clone().with_grad()))
        .collect::<Result<Vec<_>>>()?;
    let out = function(&mut graph, &vars)?;
    check_finite(graph.scalar(out), "base point")?;
    let grads = graph.backward(out)?;

    let evaluate = |perturbed: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars = perturbed.iter().map(|p| g.leaf(p)).collect::<Result<Vec<_>>>()?;
        let out = function(&mut g, &vars)?;
        Ok(g.scalar(out))
    };

    let mut work: Vec<Tensor> = params.to_vec();
    let mut worst: f64 = 0.0;
    for (pi, param) in params.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[pi], param.len());
        for k in 0..param.len() {
            let orig = param.data()[k];
            work[pi].data_mut()[k] = orig + step;
            let plus = evaluate(&work)?;
            work[pi].data_mut()[k] = orig - step;
            let minus = evaluate(&work)?;
            work[pi].data_mut()[k] = orig;
            let label = format!("parameter {pi} entry {k}");
            check_finite(plus, &label)?;
            check_finite(minus, &label)?;
            let numeric = (plus - minus) / (2.0 * step);
            let err = (analytic[k] - numeric).abs() / analytic[k].abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

fn check_finite(value: f64, what: &str) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("function value at {what}")))
    }
}
