//! Central finite-difference gradient checking over any [`Params`] model.

use super::layers::Params;

#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub epsilon: f64,
    pub rel_tolerance: f64,
    /// Magnitudes below this are compared absolutely against it.
    pub floor: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            rel_tolerance: 1e-4,
            floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub names: Vec<String>,
}

impl GradReport {
    pub fn relative_errors(&self, floor: f64) -> impl Iterator<Item = f64> + '_ {
        self.analytic
            .iter()
            .zip(&self.numeric)
            .map(move |(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
    }

    pub fn max_relative_error(&self, floor: f64) -> f64 {
        self.relative_errors(floor).fold(0.0, f64::max)
    }

    /// Panics naming the worst parameter if any error exceeds the tolerance.
    pub fn assert_ok(&self, cfg: GradCheck) {
        if let Some((i, err)) = self
            .relative_errors(cfg.floor)
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(&b.1))
        {
            assert!(
                err <= cfg.rel_tolerance,
                "gradient mismatch at {} (flat index {i}): analytic {} vs numeric {} (rel {err:.3e})",
                self.names[i],
                self.analytic[i],
                self.numeric[i]
            );
        }
    }
}

/// Compares `grad(model)` with central differences of `loss` for every
/// scalar parameter of `model`.
pub fn check_gradients<M, L, G>(model: &M, loss: L, grad: G) -> GradReport
where
    M: Params + Clone,
    L: Fn(&M) -> f64,
    G: Fn(&M) -> M,
{
    check_gradients_with(model, loss, grad, GradCheck::default().epsilon)
}

pub fn check_gradients_with<M, L, G>(model: &M, loss: L, grad: G, epsilon: f64) -> GradReport
where
    M: Params + Clone,
    L: Fn(&M) -> f64,
    G: Fn(&M) -> M,
{
    let analytic = grad(model).flatten();
    let base = model.flatten();
    let mut names = Vec::with_capacity(base.len());
    model.visit(&mut |name, _, data| {
        names.extend((0..data.len()).map(|i| format!("{name}[{i}]")));
    });
    let mut probe = model.clone();
    let mut params = base.clone();
    let numeric = (0..base.len())
        .map(|i| {
            params[i] = base[i] + epsilon;
            probe.assign(&params);
            let up = loss(&probe);
            params[i] = base[i] - epsilon;
            probe.assign(&params);
            let down = loss(&probe);
            params[i] = base[i];
            (up - down) / (2.0 * epsilon)
        })
        .collect();
    GradReport {
        analytic,
        numeric,
        names,
    }
}
