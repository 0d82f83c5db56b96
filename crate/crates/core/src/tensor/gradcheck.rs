use super::{Graph, ParamSet, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of comparing reverse-mode gradients with central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub pass: bool,
}

/// Checks `program` at `point` against central differences with step
/// `h = 1e-3 · max(1, |x|)` per coordinate.
///
/// `program` receives a fresh graph and the point as a trainable leaf and
/// must return a scalar node. The relative error of coordinate `i` is
/// `|a - n| / max(|a|, |n|, 1e-3 · max_j |n_j|)`, so coordinates that are
/// tiny next to the rest of the gradient are compared on the gradient's
/// own scale.
pub fn finite_diff_check<F>(mut program: F, point: &Tensor<f64>, tolerance: f64) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph<f64>, Var) -> Result<Var>,
{
    let mut eval = |p: Tensor<f64>, with_grad: bool| -> Result<(f64, Option<Vec<f64>>)> {
        let mut g = Graph::new();
        let x = g.leaf(p, true);
        let y = program(&mut g, x)?;
        if g.value(y).numel() != 1 {
            return Err(Error::Contract("gradient check needs a scalar program".into()));
        }
        let value = g.value(y).data()[0];
        if !with_grad {
            return Ok((value, None));
        }
        g.backward(y)?;
        let grad = g.grad(x).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; g.value(x).numel()]);
        Ok((value, Some(grad)))
    };

    let (_, analytic) = eval(point.clone(), true)?;
    let analytic = analytic.expect("gradient requested");
    let mut numeric = Vec::with_capacity(point.numel());
    for i in 0..point.numel() {
        let x = point.data()[i];
        let h = 1e-3 * x.abs().max(1.0);
        let mut plus = point.clone();
        plus.data_mut()[i] = x + h;
        let mut minus = point.clone();
        minus.data_mut()[i] = x - h;
        let (fp, _) = eval(plus, false)?;
        let (fm, _) = eval(minus, false)?;
        numeric.push((fp - fm) / (2.0 * h));
    }

    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-3 * scale).max(f64::MIN_POSITIVE);
    let (mut worst, mut worst_index) = (0.0f64, 0);
    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(floor);
        if rel > worst {
            worst = rel;
            worst_index = i;
        }
    }
    Ok(GradCheckReport {
        max_rel_error: worst,
        worst_index,
        analytic,
        numeric,
        pass: worst < tolerance,
    })
}

/// Where each named parameter lives inside a flattened `[1, P]` vector.
#[derive(Clone, Debug, PartialEq)]
pub struct FlatLayout {
    pub entries: Vec<(String, Vec<usize>, usize)>,
    pub total: usize,
}

/// Concatenates every parameter (name order) into one `[1, P]` tensor.
pub fn flatten_params(params: &ParamSet<f64>) -> (Tensor<f64>, FlatLayout) {
    let mut data = Vec::new();
    let mut entries = Vec::new();
    for (name, t) in params.params() {
        entries.push((name.clone(), t.shape().to_vec(), data.len()));
        data.extend_from_slice(t.data());
    }
    let total = data.len();
    let flat = Tensor::new(vec![1, total], data).expect("finite parameters");
    (flat, FlatLayout { entries, total })
}

/// Slices `flat` back into named parameter nodes and binds each one, so a
/// model forward pass sees `flat` as its parameters.
pub fn bind_flat(g: &mut Graph<f64>, flat: Var, layout: &FlatLayout) -> Result<()> {
    if g.shape(flat) != [1, layout.total] {
        return Err(Error::dim("bind_flat", g.shape(flat), &[1, layout.total]));
    }
    for (name, shape, offset) in &layout.entries {
        let n: usize = shape.iter().product();
        let part = g.narrow(flat, *offset, n)?;
        let part = g.reshape(part, shape)?;
        g.bind(name, part)?;
    }
    Ok(())
}
