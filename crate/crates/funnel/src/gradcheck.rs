//! Finite-difference gradient checking.
//!
//! Every backward pass in the crate is validated against this module before
//! anything downstream trusts it. The checker compares analytic gradients
//! with central differences of a scalar loss `<forward(x, params), r>` for a
//! fixed random projection `r`. Output elements within `kink_eps` of a
//! max-selection tie or rectifier zero get their projection weight zeroed, so
//! a finite step cannot flip a selection that matters; those sites are
//! reported as skipped.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Relative error metric used everywhere: |a-n| / max(|a|, |n|, 1e-8).
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// A differentiable operation under test.
pub trait CheckTarget {
    fn forward(&self, x: &Tensor, params: &[Tensor]) -> Result<Tensor>;

    /// Gradients of `<forward, grad_out>` w.r.t. input and every parameter
    /// tensor, in the same order as `params`.
    fn backward(
        &self,
        x: &Tensor,
        params: &[Tensor],
        grad_out: &Tensor,
    ) -> Result<(Tensor, Vec<Tensor>)>;

    /// Per-output-element distance to the nearest selection flip (max tie or
    /// rectifier zero). `None` means the op is smooth everywhere.
    fn kink_margins(&self, _x: &Tensor, _params: &[Tensor]) -> Result<Option<Tensor>> {
        Ok(None)
    }

    /// Upper bound on |d(margin)/d(coordinate)| over all checked
    /// coordinates: how far one finite-difference step can move a selection
    /// margin, per unit step. The exclusion radius is `kink_eps` times this.
    /// Ops whose margins move one-for-one with their inputs keep the
    /// default.
    fn flip_sensitivity(&self, _x: &Tensor, _params: &[Tensor]) -> Result<f64> {
        Ok(1.0)
    }
}

/// `CheckTarget` from plain closures, for ops without selection kinks.
pub struct FnTarget<F, B> {
    pub forward: F,
    pub backward: B,
}

impl<F, B> CheckTarget for FnTarget<F, B>
where
    F: Fn(&Tensor, &[Tensor]) -> Result<Tensor>,
    B: Fn(&Tensor, &[Tensor], &Tensor) -> Result<(Tensor, Vec<Tensor>)>,
{
    fn forward(&self, x: &Tensor, params: &[Tensor]) -> Result<Tensor> {
        (self.forward)(x, params)
    }

    fn backward(
        &self,
        x: &Tensor,
        params: &[Tensor],
        grad_out: &Tensor,
    ) -> Result<(Tensor, Vec<Tensor>)> {
        (self.backward)(x, params, grad_out)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CheckSettings {
    /// Central-difference step.
    pub h: f64,
    /// Pass threshold on the worst relative error.
    pub tol: f64,
    /// Selection-margin radius excluded from the loss projection.
    pub kink_eps: f64,
    /// Seed for the fixed random projection.
    pub seed: u64,
}

impl Default for CheckSettings {
    fn default() -> Self {
        CheckSettings { h: 1e-5, tol: 1e-5, kink_eps: 1e-4, seed: 0x5eed }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Flat index of the worst coordinate within `worst_tensor`.
    pub worst_index: usize,
    /// "input" or "param<k>".
    pub worst_tensor: String,
    /// Output elements excluded for sitting within `kink_eps` of a flip.
    pub skipped_count: usize,
    /// Total coordinates compared.
    pub checked_count: usize,
    pub passed: bool,
}

impl GradCheckReport {
    /// Line-oriented `key=value` rendering used by the CLI.
    pub fn render(&self) -> String {
        format!(
            "passed={}\nmax_rel_error={:.3e}\nmax_abs_error={:.3e}\nworst_tensor={}\nworst_index={}\nskipped_count={}\nchecked_count={}",
            self.passed,
            self.max_rel_error,
            self.max_abs_error,
            self.worst_tensor,
            self.worst_index,
            self.skipped_count,
            self.checked_count
        )
    }
}

/// Central differences of a scalar-valued function, one probe per coordinate.
pub fn numeric_gradient(
    f: impl Fn(&Tensor) -> Result<f64>,
    x: &Tensor,
    h: f64,
) -> Result<Tensor> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step h must be > 0, got {h}")));
    }
    let mut grad = x.zeros_like();
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let fp = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let fm = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss at coordinate {i}: f+={fp} f-={fm}"
            )));
        }
        grad.data_mut()[i] = (fp - fm) / (2.0 * h);
    }
    Ok(grad)
}

/// Compare analytic and numeric gradients for the input and every parameter
/// tensor. Failures are carried in the report, never raised.
pub fn check(
    target: &dyn CheckTarget,
    x: &Tensor,
    params: &[Tensor],
    settings: CheckSettings,
) -> Result<GradCheckReport> {
    let y = target.forward(x, params)?;
    if !y.is_finite() {
        return Err(Error::Numeric("forward produced non-finite output".into()));
    }

    // Fixed projection with entries bounded away from zero; tie-adjacent
    // output elements contribute nothing to the loss.
    let mut rng = Rng::new(settings.seed);
    let mut r = y.zeros_like();
    for v in r.data_mut().iter_mut() {
        let mag = 0.5 + rng.next_f64();
        *v = if rng.next_f64() < 0.5 { -mag } else { mag };
    }
    let mut skipped = 0usize;
    if let Some(margins) = target.kink_margins(x, params)? {
        if margins.shape() != y.shape() {
            return Err(Error::ShapeMismatch(format!(
                "kink margins {} do not match output {}",
                margins.shape(),
                y.shape()
            )));
        }
        let radius = settings.kink_eps * target.flip_sensitivity(x, params)?.max(1.0);
        for (rv, &m) in r.data_mut().iter_mut().zip(margins.data()) {
            if m < radius {
                *rv = 0.0;
                skipped += 1;
            }
        }
    }

    let (grad_x, grad_params) = target.backward(x, params, &r)?;
    if grad_params.len() != params.len() {
        return Err(Error::State(format!(
            "backward returned {} parameter gradients for {} parameters",
            grad_params.len(),
            params.len()
        )));
    }

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst_index: 0,
        worst_tensor: "input".into(),
        skipped_count: skipped,
        checked_count: 0,
        passed: true,
    };

    // input coordinates
    let loss_x = |probe: &Tensor| -> Result<f64> { target.forward(probe, params)?.dot(&r) };
    let numeric_x = numeric_gradient(loss_x, x, settings.h)?;
    accumulate(&mut report, "input", &grad_x, &numeric_x);

    // parameter coordinates, one tensor at a time
    for (k, param) in params.iter().enumerate() {
        let loss_p = |probe: &Tensor| -> Result<f64> {
            let mut tweaked: Vec<Tensor> = params.to_vec();
            tweaked[k] = probe.clone();
            target.forward(x, &tweaked)?.dot(&r)
        };
        let numeric_p = numeric_gradient(loss_p, param, settings.h)?;
        accumulate(&mut report, &format!("param{k}"), &grad_params[k], &numeric_p);
    }

    report.passed = report.max_rel_error <= settings.tol;
    Ok(report)
}

fn accumulate(report: &mut GradCheckReport, name: &str, analytic: &Tensor, numeric: &Tensor) {
    for (i, (&a, &n)) in analytic.data().iter().zip(numeric.data()).enumerate() {
        let rel = rel_error(a, n);
        let abs = (a - n).abs();
        report.checked_count += 1;
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_index = i;
            report.worst_tensor = name.to_string();
        }
        if abs > report.max_abs_error {
            report.max_abs_error = abs;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numeric_gradient_of_sum_is_ones() {
        let x = Tensor::from_vec(1, 1, 2, 2, vec![0.3, -1.2, 4.0, 0.0]).unwrap();
        let g = numeric_gradient(|t| Ok(t.sum()), &x, 1e-5).unwrap();
        for &v in g.data() {
            assert!((v - 1.0).abs() <= 1e-9, "{v}");
        }
    }

    #[test]
    fn numeric_gradient_of_half_norm_squared_is_x() {
        let x = Tensor::from_vec(1, 1, 1, 3, vec![0.5, -2.0, 3.25]).unwrap();
        let g = numeric_gradient(|t| Ok(0.5 * t.dot(t).unwrap()), &x, 1e-5).unwrap();
        for (gv, xv) in g.data().iter().zip(x.data()) {
            assert!((gv - xv).abs() <= 1e-6, "{gv} vs {xv}");
        }
    }

    #[test]
    fn numeric_gradient_of_relu_sum_away_from_kink() {
        let x = Tensor::from_vec(1, 1, 1, 2, vec![2.0, -2.0]).unwrap();
        let g = numeric_gradient(
            |t| Ok(t.data().iter().map(|&v| v.max(0.0)).sum()),
            &x,
            1e-5,
        )
        .unwrap();
        assert!((g.data()[0] - 1.0).abs() <= 1e-9);
        assert!(g.data()[1].abs() <= 1e-9);
    }

    #[test]
    fn bad_step_rejected() {
        let x = Tensor::zeros(1, 1, 1, 1).unwrap();
        assert!(numeric_gradient(|t| Ok(t.sum()), &x, 0.0).is_err());
    }

    struct Relu;

    impl CheckTarget for Relu {
        fn forward(&self, x: &Tensor, _p: &[Tensor]) -> Result<Tensor> {
            Ok(x.map(|v| if v >= 0.0 { v } else { 0.0 }))
        }
        fn backward(&self, x: &Tensor, _p: &[Tensor], g: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
            let mut gx = g.clone();
            for (gv, &xv) in gx.data_mut().iter_mut().zip(x.data()) {
                if xv < 0.0 {
                    *gv = 0.0;
                }
            }
            Ok((gx, Vec::new()))
        }
        fn kink_margins(&self, x: &Tensor, _p: &[Tensor]) -> Result<Option<Tensor>> {
            Ok(Some(x.map(f64::abs)))
        }
    }

    /// Wraps a target, scaling output and gradients by a constant.
    struct Scaled<'a>(&'a dyn CheckTarget, f64);

    impl CheckTarget for Scaled<'_> {
        fn forward(&self, x: &Tensor, p: &[Tensor]) -> Result<Tensor> {
            Ok(self.0.forward(x, p)?.mul_scalar(self.1))
        }
        fn backward(&self, x: &Tensor, p: &[Tensor], g: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
            let (gx, gp) = self.0.backward(x, p, g)?;
            Ok((gx.mul_scalar(self.1), gp.into_iter().map(|t| t.mul_scalar(self.1)).collect()))
        }
        fn kink_margins(&self, x: &Tensor, p: &[Tensor]) -> Result<Option<Tensor>> {
            self.0.kink_margins(x, p)
        }
    }

    /// Wraps a target, corrupting the input gradient by one percent.
    struct Corrupted<'a>(&'a dyn CheckTarget);

    impl CheckTarget for Corrupted<'_> {
        fn forward(&self, x: &Tensor, p: &[Tensor]) -> Result<Tensor> {
            self.0.forward(x, p)
        }
        fn backward(&self, x: &Tensor, p: &[Tensor], g: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
            let (gx, gp) = self.0.backward(x, p, g)?;
            Ok((gx.mul_scalar(1.01), gp))
        }
        fn kink_margins(&self, x: &Tensor, p: &[Tensor]) -> Result<Option<Tensor>> {
            self.0.kink_margins(x, p)
        }
    }

    fn test_input() -> Tensor {
        // magnitudes kept above 0.1 so no coordinate sits near the kink
        let mut rng = Rng::new(42);
        let mut t = Tensor::gaussian(1, 2, 4, 4, 0.0, 1.0, &mut rng).unwrap();
        for v in t.data_mut().iter_mut() {
            if v.abs() < 0.2 {
                *v += if *v >= 0.0 { 0.3 } else { -0.3 };
            }
        }
        t
    }

    #[test]
    fn relu_passes_cleanly() {
        let report = check(&Relu, &test_input(), &[], CheckSettings::default()).unwrap();
        assert!(report.passed, "{}", report.render());
        assert!(report.max_rel_error <= 1e-6);
        assert_eq!(report.skipped_count, 0);
    }

    #[test]
    fn corrupted_backward_is_flagged() {
        let report =
            check(&Corrupted(&Relu), &test_input(), &[], CheckSettings::default()).unwrap();
        assert!(!report.passed);
        assert!(report.max_rel_error > 1e-3);
    }

    #[test]
    fn rel_error_is_scale_invariant() {
        let x = test_input();
        let base = check(&Relu, &x, &[], CheckSettings::default()).unwrap();
        let scaled = check(&Scaled(&Relu, 10.0), &x, &[], CheckSettings::default()).unwrap();
        assert!(
            (base.max_rel_error - scaled.max_rel_error).abs() <= 1e-10,
            "{} vs {}",
            base.max_rel_error,
            scaled.max_rel_error
        );
    }

    #[test]
    fn kink_sites_are_skipped() {
        let x = Tensor::from_vec(1, 1, 1, 4, vec![1.0, -1.0, 1e-6, -1e-6]).unwrap();
        let report = check(&Relu, &x, &[], CheckSettings::default()).unwrap();
        assert_eq!(report.skipped_count, 2);
        assert!(report.passed, "{}", report.render());
    }
}
