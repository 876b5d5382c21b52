use super::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Outcome of comparing reverse-mode gradients with central differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// `(input, flat index)` of the worst coordinate.
    pub worst: (usize, usize),
    pub checked: usize,
}

/// Checks `f`'s gradient with respect to every coordinate listed in `coords`
/// (`None` = all coordinates of every input) using central differences of
/// step `h`.
pub fn finite_difference_check<F>(
    inputs: &[Tensor<f64>],
    coords: Option<&[(usize, usize)]>,
    h: f64,
    floor: f64,
    f: F,
) -> GradCheckReport
where
    F: for<'g> Fn(&'g Graph<f64>, &[Var<'g, f64>]) -> Var<'g, f64>,
{
    let graph = Graph::new();
    let vars: Vec<_> = inputs.iter().map(|t| graph.param(t.clone())).collect();
    let loss = f(&graph, &vars);
    let grads = graph.backward(loss);
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| grads.get_or_zeros(v)).collect();

    let eval = |perturbed: &[Tensor<f64>]| -> f64 {
        let g = Graph::new();
        let vs: Vec<_> = perturbed.iter().map(|t| g.constant(t.clone())).collect();
        f(&g, &vs).item()
    };
    let all: Vec<(usize, usize)>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = inputs
                .iter()
                .enumerate()
                .flat_map(|(i, t)| (0..t.len()).map(move |j| (i, j)))
                .collect();
            &all
        }
    };
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for &(i, j) in coords {
        let orig = work[i].data()[j];
        work[i].data_mut()[j] = orig + h;
        let plus = eval(&work);
        work[i].data_mut()[j] = orig - h;
        let minus = eval(&work);
        work[i].data_mut()[j] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic[i].data()[j];
        let abs = (a - numeric).abs();
        let rel = abs / a.abs().max(numeric.abs()).max(floor);
        report.checked += 1;
        report.max_abs_err = report.max_abs_err.max(abs);
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst = (i, j);
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smooth_composite_passes() {
        let x = Tensor::new(vec![2, 3], vec![0.3, -0.2, 0.9, 1.1, 0.4, -0.7]);
        let w = Tensor::new(vec![3, 2], vec![0.5, -0.1, 0.2, 0.8, -0.6, 0.3]);
        let r = finite_difference_check(&[x, w], None, 1e-4, 1e-8, |_, v| {
            v[0].linear(v[1], None).softmax_last().ln().sqr().sum_all()
        });
        assert!(r.max_rel_err < 1e-6, "{r:?}");
        assert_eq!(r.checked, 12);
    }
}
