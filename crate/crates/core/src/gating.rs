//! Per-query gate between the frozen base predictor `q0` and the retriever.
//!
//! The per-query objective is
//! `J(lambda) = CE(p_true, (1 - lambda) q0 + lambda rhat) + zeta * lambda * (1 - w_fact)`.
//! It is convex in `lambda`, so the soft gate is found by bisection on
//! `dJ/dlambda = -sum_y p_y (rhat_y - q0_y) / p_lambda_y + zeta (1 - w_fact)`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::simplex::{cross_entropy, ExtReal, ProbVec};

/// Bisection step cap for [`soft_gate`].
pub const MAX_BISECTION_STEPS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GateMode {
    Hard,
    Soft,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateInputs {
    p_true: ProbVec,
    q0: ProbVec,
    rhat: ProbVec,
    w_fact: f64,
    zeta: f64,
}

impl GateInputs {
    pub fn new(p_true: ProbVec, q0: ProbVec, rhat: ProbVec, w_fact: f64, zeta: f64) -> Result<Self> {
        p_true.check_same_labels(&q0)?;
        p_true.check_same_labels(&rhat)?;
        if !(w_fact > 0.0 && w_fact <= 1.0) {
            return Err(Error::InvalidParameter {
                name: "w_fact",
                reason: format!("{w_fact} is outside (0, 1]"),
            });
        }
        if !(zeta >= 0.0 && zeta.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "zeta",
                reason: format!("{zeta} is not a finite nonnegative real"),
            });
        }
        Ok(Self { p_true, q0, rhat, w_fact, zeta })
    }

    pub fn p_true(&self) -> &ProbVec {
        &self.p_true
    }

    pub fn q0(&self) -> &ProbVec {
        &self.q0
    }

    pub fn rhat(&self) -> &ProbVec {
        &self.rhat
    }

    pub fn w_fact(&self) -> f64 {
        self.w_fact
    }

    pub fn zeta(&self) -> f64 {
        self.zeta
    }

    /// `zeta * (1 - w_fact)`.
    pub fn penalty(&self) -> f64 {
        self.zeta * (1.0 - self.w_fact)
    }

    pub fn ell0(&self) -> ExtReal {
        cross_entropy(&self.p_true, &self.q0).expect("label counts checked at construction")
    }

    pub fn ellr(&self) -> ExtReal {
        cross_entropy(&self.p_true, &self.rhat).expect("label counts checked at construction")
    }

    /// `dJ/dlambda` at `lambda`; `-inf`/`+inf` where a supported label has
    /// zero mixed mass.
    pub fn objective_derivative(&self, lambda: f64) -> f64 {
        let mut slope = 0.0;
        for y in 0..self.p_true.num_labels() {
            let p = self.p_true[y];
            if p == 0.0 {
                continue;
            }
            let (q, r) = (self.q0[y], self.rhat[y]);
            let mixed = (1.0 - lambda) * q + lambda * r;
            let diff = r - q;
            if mixed == 0.0 {
                if diff == 0.0 {
                    continue;
                }
                return if diff > 0.0 { f64::NEG_INFINITY } else { f64::INFINITY };
            }
            slope += p * diff / mixed;
        }
        -slope + self.penalty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GateDecision {
    pub lambda: f64,
    pub ell0: ExtReal,
    pub ellr: ExtReal,
    pub penalty: f64,
    /// `J(lambda)` at the chosen gate.
    pub objective: ExtReal,
    pub mixed: ProbVec,
    pub mode: GateMode,
}

/// `(1 - lambda) q0 + lambda rhat`.
pub fn mixture(q0: &ProbVec, rhat: &ProbVec, lambda: f64) -> Result<ProbVec> {
    q0.check_same_labels(rhat)?;
    check_lambda(lambda)?;
    // Exact endpoints keep J(0) == ell0 and J(1) == ellr + penalty bitwise.
    if lambda == 0.0 {
        return Ok(q0.clone());
    }
    if lambda == 1.0 {
        return Ok(rhat.clone());
    }
    let probs = q0
        .as_slice()
        .iter()
        .zip(rhat.as_slice())
        .map(|(q, r)| ((1.0 - lambda) * q + lambda * r).clamp(0.0, 1.0))
        .collect();
    ProbVec::new(probs)
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidParameter {
            name: "lambda",
            reason: format!("{lambda} is outside [0, 1]"),
        });
    }
    Ok(())
}

/// `J(lambda; x)`; may be `+inf`.
pub fn local_objective(inputs: &GateInputs, lambda: f64) -> Result<ExtReal> {
    let mixed = mixture(&inputs.q0, &inputs.rhat, lambda)?;
    let fit = cross_entropy(&inputs.p_true, &mixed)?;
    Ok(fit.plus(lambda * inputs.penalty()))
}

/// Bayes-optimal binary gate: retrieve only if `ellr + penalty < ell0`.
pub fn hard_gate(inputs: &GateInputs) -> GateDecision {
    let ell0 = inputs.ell0();
    let ellr = inputs.ellr();
    let penalty = inputs.penalty();
    let switch = ellr.plus(penalty) < ell0;
    let (lambda, mixed, objective) = if switch {
        (1.0, inputs.rhat.clone(), ellr.plus(penalty))
    } else {
        (0.0, inputs.q0.clone(), ell0)
    };
    GateDecision { lambda, ell0, ellr, penalty, objective, mixed, mode: GateMode::Hard }
}

/// Minimizes `J` over `[0, 1]`.
///
/// Returns `lambda = 0` when `dJ/dlambda(0) >= 0` and `lambda = 1` when
/// `dJ/dlambda(1) <= 0`. Otherwise bisects the derivative, which is
/// nondecreasing by convexity, and requires `|dJ/dlambda| <= tol` at the
/// returned point.
pub fn soft_gate(inputs: &GateInputs, tol: f64) -> Result<GateDecision> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::InvalidParameter { name: "tol", reason: format!("{tol} is not positive") });
    }
    let ell0 = inputs.ell0();
    let ellr = inputs.ellr();
    let everywhere_infinite = (0..inputs.p_true.num_labels())
        .any(|y| inputs.p_true[y] > 0.0 && inputs.q0[y] == 0.0 && inputs.rhat[y] == 0.0);
    if everywhere_infinite {
        return Err(Error::InfiniteObjective);
    }

    let slope_at_zero = if ell0.is_finite() {
        inputs.objective_derivative(0.0)
    } else {
        f64::NEG_INFINITY
    };
    let slope_at_one = if ellr.is_finite() {
        inputs.objective_derivative(1.0)
    } else {
        f64::INFINITY
    };

    let lambda = if slope_at_zero >= 0.0 {
        0.0
    } else if slope_at_one <= 0.0 {
        1.0
    } else {
        bisect_root(inputs, tol)?
    };

    Ok(GateDecision {
        lambda,
        ell0,
        ellr,
        penalty: inputs.penalty(),
        objective: local_objective(inputs, lambda)?,
        mixed: mixture(&inputs.q0, &inputs.rhat, lambda)?,
        mode: GateMode::Soft,
    })
}

// Runs to interval collapse (or the step cap) without early exit, so the result
// is a monotone function of the penalty.
fn bisect_root(inputs: &GateInputs, tol: f64) -> Result<f64> {
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..MAX_BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if inputs.objective_derivative(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let (d_lo, d_hi) = (inputs.objective_derivative(lo), inputs.objective_derivative(hi));
    let (lambda, residual) = if d_lo.abs() <= d_hi.abs() { (lo, d_lo) } else { (hi, d_hi) };
    if residual.abs() > tol {
        return Err(Error::NonConvergence { lambda, residual: residual.abs() });
    }
    Ok(lambda)
}

/// Additive smoothing `(rhat + eps) / (1 + C eps)`; `eps = 0` returns `rhat` unchanged.
pub fn smooth(rhat: &ProbVec, eps: f64) -> Result<ProbVec> {
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::InvalidParameter { name: "eps", reason: format!("{eps} is not >= 0") });
    }
    if eps == 0.0 {
        return Ok(rhat.clone());
    }
    let denom = 1.0 + eps * rhat.num_labels() as f64;
    ProbVec::new(rhat.as_slice().iter().map(|r| (r + eps) / denom).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(v: &[f64]) -> ProbVec {
        ProbVec::new(v.to_vec()).unwrap()
    }

    fn inputs(p: &[f64], q0: &[f64], rhat: &[f64], w: f64, zeta: f64) -> GateInputs {
        GateInputs::new(pv(p), pv(q0), pv(rhat), w, zeta).unwrap()
    }

    #[test]
    fn mixture_examples() {
        let q0 = pv(&[0.3, 0.7]);
        let r = pv(&[0.9, 0.1]);
        assert_eq!(mixture(&q0, &r, 0.0).unwrap(), q0);
        assert_eq!(mixture(&q0, &r, 1.0).unwrap(), r);
        let m = mixture(&pv(&[1.0, 0.0]), &pv(&[0.0, 1.0]), 0.5).unwrap();
        assert_eq!(m.as_slice(), &[0.5, 0.5]);
        assert!(mixture(&q0, &r, 1.5).is_err());
        assert!(mixture(&q0, &r, f64::NAN).is_err());
    }

    #[test]
    fn objective_examples() {
        let g = inputs(&[0.6, 0.4], &[0.5, 0.5], &[0.8, 0.2], 0.7, 0.0);
        let fit = cross_entropy(g.p_true(), &mixture(g.q0(), g.rhat(), 0.3).unwrap()).unwrap();
        assert_eq!(local_objective(&g, 0.3).unwrap(), fit);

        let g = inputs(&[0.6, 0.4], &[0.5, 0.5], &[0.8, 0.2], 0.7, 3.0);
        assert_eq!(local_objective(&g, 0.0).unwrap(), g.ell0());

        let g = inputs(&[0.6, 0.4], &[0.5, 0.5], &[0.8, 0.2], 1.0, 3.0);
        let fit = cross_entropy(g.p_true(), &mixture(g.q0(), g.rhat(), 0.6).unwrap()).unwrap();
        assert_eq!(local_objective(&g, 0.6).unwrap(), fit);
    }

    // Builds inputs with prescribed ell0 / ellr by choosing q0 and rhat as
    // point-mass p_true against two-label distributions.
    fn with_losses(ell0: f64, ellr: f64, w: f64, zeta: f64) -> GateInputs {
        let q = (-ell0).exp();
        let r = (-ellr).exp();
        inputs(&[1.0, 0.0], &[q, 1.0 - q], &[r, 1.0 - r], w, zeta)
    }

    #[test]
    fn hard_gate_examples() {
        let d = hard_gate(&with_losses(1.0, 0.5, 1.0, 1.0));
        assert_eq!(d.lambda, 1.0);
        let d = hard_gate(&with_losses(0.5, 0.5, 0.3, 2.0));
        assert_eq!(d.lambda, 0.0);
        let d = hard_gate(&with_losses(0.5, 0.5, 1.0, 0.0));
        assert_eq!(d.lambda, 0.0);
        let d = hard_gate(&with_losses(1.0, 0.5, 0.5, 2.0));
        assert_eq!(d.lambda, 0.0);
        assert_eq!(d.penalty, 1.0);
    }

    #[test]
    fn hard_gate_infinite_retriever_loss() {
        let d = hard_gate(&inputs(&[0.5, 0.5], &[0.5, 0.5], &[1.0, 0.0], 1.0, 0.0));
        assert!(!d.ellr.is_finite());
        assert_eq!(d.lambda, 0.0);
        let d = hard_gate(&inputs(&[0.5, 0.5], &[1.0, 0.0], &[0.5, 0.5], 1.0, 0.0));
        assert_eq!(d.lambda, 1.0);
    }

    #[test]
    fn soft_gate_examples() {
        let d = soft_gate(&inputs(&[0.6, 0.4], &[0.3, 0.7], &[0.3, 0.7], 0.5, 1.0), 1e-12).unwrap();
        assert_eq!(d.lambda, 0.0);

        let d = soft_gate(&inputs(&[0.6, 0.4], &[0.3, 0.7], &[0.6, 0.4], 0.5, 0.0), 1e-12).unwrap();
        assert_eq!(d.lambda, 1.0);

        let d = soft_gate(&inputs(&[0.5, 0.5], &[0.8, 0.2], &[0.2, 0.8], 0.5, 0.0), 1e-12).unwrap();
        assert!((d.lambda - 0.5).abs() < 1e-12, "lambda = {}", d.lambda);
        assert_eq!(d.mode, GateMode::Soft);
    }

    #[test]
    fn soft_gate_infinite_endpoints() {
        // rhat misses a supported label: J(1) = inf, optimum is interior.
        let g = inputs(&[0.5, 0.5], &[0.2, 0.8], &[1.0, 0.0], 1.0, 0.0);
        let d = soft_gate(&g, 1e-10).unwrap();
        assert!(d.lambda > 0.0 && d.lambda < 1.0);
        assert!(g.objective_derivative(d.lambda).abs() <= 1e-10);
        // q0 and rhat miss different labels: both endpoints infinite.
        let g = inputs(&[0.5, 0.5], &[1.0, 0.0], &[0.0, 1.0], 1.0, 0.0);
        let d = soft_gate(&g, 1e-10).unwrap();
        assert!((d.lambda - 0.5).abs() < 1e-9);
        // Both miss the same supported label.
        let g = inputs(&[0.5, 0.5], &[1.0, 0.0], &[1.0, 0.0], 1.0, 0.0);
        assert_eq!(soft_gate(&g, 1e-10), Err(Error::InfiniteObjective));
    }

    #[test]
    fn input_validation() {
        assert!(GateInputs::new(pv(&[1.0]), pv(&[1.0]), pv(&[1.0]), 0.0, 0.0).is_err());
        assert!(GateInputs::new(pv(&[1.0]), pv(&[1.0]), pv(&[1.0]), 1.0, -1.0).is_err());
        assert!(GateInputs::new(pv(&[1.0]), pv(&[0.5, 0.5]), pv(&[1.0]), 1.0, 0.0).is_err());
        let g = inputs(&[1.0], &[1.0], &[1.0], 1.0, 0.0);
        assert!(soft_gate(&g, 0.0).is_err());
    }

    #[test]
    fn smoothing() {
        let r = pv(&[1.0, 0.0]);
        assert_eq!(smooth(&r, 0.0).unwrap(), r);
        let s = smooth(&r, 0.5).unwrap();
        assert_eq!(s.as_slice(), &[0.75, 0.25]);
    }
}
