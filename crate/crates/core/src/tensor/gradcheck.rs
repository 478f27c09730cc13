use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, ParameterSet, Result, TensorError, Var};

#[derive(Debug, Clone, Copy)]
pub struct FdOptions {
    /// Stencil spacing of the five-point derivative.
    pub step: f64,
    /// Coordinates sampled per parameter; `None` checks all of them.
    pub coords_per_param: Option<usize>,
    pub seed: u64,
}

impl Default for FdOptions {
    fn default() -> Self {
        Self {
            step: 1e-3,
            coords_per_param: Some(24),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    /// Analytic and numeric derivative at the worst coordinate.
    pub worst_values: (f64, f64),
    pub coords_checked: usize,
}

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Reverse-mode gradient of `loss_fn` for every parameter, keyed by name.
pub fn analytic_gradients<F>(params: &ParameterSet, loss_fn: F) -> Result<BTreeMap<String, Vec<f64>>>
where
    F: Fn(&ParameterSet, &mut Graph) -> Result<Var>,
{
    let mut work = params.clone();
    work.zero_grad();
    let mut g = Graph::new();
    let loss = loss_fn(&work, &mut g)?;
    g.backward(loss)?;
    work.accumulate_grads(&g)?;
    Ok(work
        .iter()
        .map(|(n, t)| (n.to_string(), t.grad().expect("zeroed above").to_vec()))
        .collect())
}

/// Checks the reverse-mode gradient of `loss_fn` against finite differences.
pub fn finite_diff_check<F>(params: &ParameterSet, loss_fn: F, opts: &FdOptions) -> Result<FdReport>
where
    F: Fn(&ParameterSet, &mut Graph) -> Result<Var>,
{
    let analytic = analytic_gradients(params, &loss_fn)?;
    compare_gradients(params, &analytic, |p| {
        let mut g = Graph::new();
        let l = loss_fn(p, &mut g)?;
        g.item(l)
    }, opts)
}

/// Compares a supplied gradient map with finite differences of `value_fn`.
pub fn compare_gradients<F>(
    params: &ParameterSet,
    analytic: &BTreeMap<String, Vec<f64>>,
    value_fn: F,
    opts: &FdOptions,
) -> Result<FdReport>
where
    F: Fn(&ParameterSet) -> Result<f64>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut probe = params.clone();
    let mut report = FdReport {
        max_rel_error: 0.0,
        worst: None,
        worst_values: (0.0, 0.0),
        coords_checked: 0,
    };
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in names {
        let grad = analytic
            .get(&name)
            .ok_or_else(|| TensorError::Usage(format!("no analytic gradient for {name}")))?;
        let n = params.get(&name).expect("name from set").len();
        let coords: Vec<usize> = match opts.coords_per_param {
            Some(k) if k < n => {
                let mut v = rand::seq::index::sample(&mut rng, n, k).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..n).collect(),
        };
        for i in coords {
            let orig = params.get(&name).expect("name from set").values()[i];
            // fourth-order stencil; its error is near roundoff for smooth losses
            let mut at = |offset: f64| -> Result<f64> {
                probe.get_mut(&name).expect("cloned").values_mut()[i] = orig + offset;
                value_fn(&probe)
            };
            let h = opts.step;
            let numeric = (8.0 * (at(h)? - at(-h)?) - (at(2.0 * h)? - at(-2.0 * h)?)) / (12.0 * h);
            probe.get_mut(&name).expect("cloned").values_mut()[i] = orig;
            let err = relative_error(grad[i], numeric);
            report.coords_checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((name.clone(), i));
                report.worst_values = (grad[i], numeric);
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn quadratic_is_exact() {
        let mut ps = ParameterSet::new();
        ps.insert("x", Tensor::vector(vec![0.3, -1.2, 2.0]).unwrap());
        let rep = finite_diff_check(
            &ps,
            |p, g| {
                let x = g.param(p, "x")?;
                let sq = g.mul(x, x)?;
                let s = g.scale(sq, 0.5)?;
                g.sum(s)
            },
            &FdOptions::default(),
        )
        .unwrap();
        assert_eq!(rep.coords_checked, 3);
        assert!(rep.max_rel_error < 1e-8, "{rep:?}");
    }

    #[test]
    fn two_layer_net_matches() {
        let mut ps = ParameterSet::new();
        ps.insert("w1", Tensor::matrix(3, 4, (0..12).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap());
        ps.insert("b1", Tensor::vector(vec![0.1, -0.2, 0.05, 0.0]).unwrap());
        ps.insert("w2", Tensor::matrix(4, 3, (0..12).map(|i| (i as f64 * 0.91).cos()).collect()).unwrap());
        ps.insert("b2", Tensor::vector(vec![0.0, 0.3, -0.1]).unwrap());
        let x = Tensor::matrix(2, 3, vec![0.5, -1.0, 2.0, 0.0, 1.5, -0.5]).unwrap();
        let rep = finite_diff_check(
            &ps,
            |p, g| {
                let xin = g.constant(&x);
                let w1 = g.param(p, "w1")?;
                let b1 = g.param(p, "b1")?;
                let h = g.affine(xin, w1, b1)?;
                let h = g.tanh(h)?;
                let w2 = g.param(p, "w2")?;
                let b2 = g.param(p, "b2")?;
                let o = g.affine(h, w2, b2)?;
                let lp = g.log_softmax(o, 1)?;
                let picked = g.pick(lp, &[2, 0])?;
                let s = g.mean(picked)?;
                g.scale(s, -1.0)
            },
            &FdOptions {
                coords_per_param: None,
                ..FdOptions::default()
            },
        )
        .unwrap();
        assert!(rep.max_rel_error < 1e-4, "{rep:?}");
    }
}
