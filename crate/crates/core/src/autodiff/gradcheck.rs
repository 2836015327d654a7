//! Central-difference validation of reverse-mode gradients.

use crate::autodiff::Tensor;
use crate::error::Result;

/// Outcome of one finite-difference sweep.
#[derive(Debug, Clone)]
pub struct GradReport {
    /// Largest relative error seen across all checked elements.
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    /// Total elements compared.
    pub checked: usize,
}

impl GradReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }
}

impl std::fmt::Display for GradReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "max rel err {:.3e} over {} elements (worst: {}[{}] analytic {:.6e} numeric {:.6e})",
            self.max_rel_err,
            self.checked,
            self.worst_param,
            self.worst_index,
            self.analytic_at_worst,
            self.numeric_at_worst
        )
    }
}

/// Compares reverse-mode gradients of `loss_fn` against central differences
/// over every element of every tensor in `params`.
///
/// `loss_fn` must rebuild the graph from the live parameter values on every
/// call and return a scalar. Relative error per element is
/// `|a - n| / max(1e-8, |a| + |n|)`.
pub fn finite_diff_check<F>(params: &[Tensor], mut loss_fn: F, h: f64) -> Result<GradReport>
where
    F: FnMut() -> Result<Tensor>,
{
    for p in params {
        p.zero_grad();
    }
    let loss = loss_fn()?;
    loss.backward()?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect();

    let mut report = GradReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        checked: 0,
    };

    for (pi, p) in params.iter().enumerate() {
        let name = p
            .name()
            .unwrap_or_else(|| format!("param{pi}"));
        for i in 0..p.numel() {
            let orig = p.at(i);
            p.set_at(i, orig + h);
            let up = loss_fn()?.scalar();
            p.set_at(i, orig - h);
            let down = loss_fn()?.scalar();
            p.set_at(i, orig);

            let numeric = (up - down) / (2.0 * h);
            let a = analytic[pi][i];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            report.checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_param = name.clone();
                report.worst_index = i;
                report.analytic_at_worst = a;
                report.numeric_at_worst = numeric;
            }
        }
    }
    Ok(report)
}
