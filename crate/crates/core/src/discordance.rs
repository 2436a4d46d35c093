//! Discordance score, its change under the optimal hard gate, regime
//! classification and the large-sample target of that change.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::gating::{hard_gate, GateDecision, GateInputs};
use crate::simplex::{cross_entropy, modal_label, ExtReal, ProbVec};

/// Tolerance under which `ell_bayes == ell0` is flagged as degenerate.
pub const DEGENERACY_TOLERANCE: f64 = 1e-12;

/// Switching regimes of the hard gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Regime {
    /// Gate switches and the retriever backs its own top label at least as much as `q0`.
    A,
    /// Gate switches although `q0` puts more mass on the retriever's top label.
    B,
    /// Penalized retriever loss does not beat `ell0`; gate stays off.
    C,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscordanceRecord {
    /// Retriever's modal label (0-based).
    pub y_r: usize,
    pub h_q0: f64,
    pub h_mixed: f64,
    pub delta_h: f64,
    pub delta_x: f64,
    pub regime: Regime,
    pub gate: GateDecision,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AsymptoticTarget {
    /// Bayes label (0-based).
    pub y_star: usize,
    pub gamma: f64,
    pub ell_bayes: ExtReal,
    pub ell0: ExtReal,
    pub lambda_inf: u8,
    pub limit_value: f64,
}

/// `w_fact * (1 - dist[y_r])`.
pub fn hdisc(w_fact: f64, dist: &ProbVec, y_r: usize) -> Result<f64> {
    if !(w_fact > 0.0 && w_fact <= 1.0) {
        return Err(Error::InvalidParameter {
            name: "w_fact",
            reason: format!("{w_fact} is outside (0, 1]"),
        });
    }
    Ok(w_fact * (1.0 - dist.get(y_r)?))
}

/// `lambda * w_fact * (rhat[y_r] - q0[y_r])`.
pub fn delta_h(lambda: f64, w_fact: f64, rhat_at_yr: f64, q0_at_yr: f64) -> f64 {
    lambda * w_fact * (rhat_at_yr - q0_at_yr)
}

pub fn classify_regime(
    ell0: ExtReal,
    ellr: ExtReal,
    penalty: f64,
    rhat_at_yr: f64,
    q0_at_yr: f64,
) -> Regime {
    if ellr.plus(penalty) < ell0 {
        if rhat_at_yr >= q0_at_yr {
            Regime::A
        } else {
            Regime::B
        }
    } else {
        Regime::C
    }
}

/// Applies the hard gate and records the resulting change in discordance.
pub fn realized_delta_h(inputs: &GateInputs) -> DiscordanceRecord {
    let gate = hard_gate(inputs);
    let y_r = modal_label(inputs.rhat());
    let w = inputs.w_fact();
    let (r, q) = (inputs.rhat()[y_r], inputs.q0()[y_r]);
    let delta_x = r - q;
    DiscordanceRecord {
        y_r,
        h_q0: w * (1.0 - q),
        h_mixed: w * (1.0 - gate.mixed[y_r]),
        delta_h: delta_h(gate.lambda, w, r, q),
        delta_x,
        regime: classify_regime(gate.ell0, gate.ellr, gate.penalty, r, q),
        gate,
    }
}

/// Limit of the realized change for a query with true conditional `p_true`.
///
/// Errors when the Bayes label is not unique or `ell_bayes` equals `ell0`.
pub fn asymptotic_target(p_true: &ProbVec, q0: &ProbVec) -> Result<AsymptoticTarget> {
    let y_star = modal_label(p_true);
    let top = p_true[y_star];
    let runner_up = (0..p_true.num_labels())
        .filter(|&y| y != y_star)
        .map(|y| p_true[y])
        .fold(0.0, f64::max);
    let gamma = top - runner_up;
    if gamma <= 0.0 {
        return Err(Error::NonUniqueBayesLabel);
    }
    let ell_bayes = cross_entropy(p_true, p_true)?;
    let ell0 = cross_entropy(p_true, q0)?;
    if ell0.is_finite() && (ell0.value() - ell_bayes.value()).abs() <= DEGENERACY_TOLERANCE {
        return Err(Error::DegenerateTarget { ell_bayes: ell_bayes.value() });
    }
    let lambda_inf = u8::from(ell_bayes < ell0);
    Ok(AsymptoticTarget {
        y_star,
        gamma,
        ell_bayes,
        ell0,
        lambda_inf,
        limit_value: f64::from(lambda_inf) * (top - q0[y_star]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(v: &[f64]) -> ProbVec {
        ProbVec::new(v.to_vec()).unwrap()
    }

    fn er(v: f64) -> ExtReal {
        ExtReal::finite(v).unwrap()
    }

    #[test]
    fn hdisc_examples() {
        assert!((hdisc(1.0, &pv(&[0.2, 0.8]), 0).unwrap() - 0.8).abs() < 1e-15);
        assert_eq!(hdisc(0.6, &pv(&[1.0, 0.0]), 0).unwrap(), 0.0);
        assert!(hdisc(1e-9, &pv(&[0.0, 1.0]), 0).unwrap() <= 1e-9);
        assert!(hdisc(1.0, &pv(&[1.0]), 1).is_err());
    }

    #[test]
    fn delta_h_examples() {
        assert_eq!(delta_h(0.0, 0.9, 0.8, 0.1), 0.0);
        assert!((delta_h(1.0, 0.5, 0.6, 0.4) - 0.1).abs() < 1e-15);
        assert!(delta_h(0.7, 0.4, 0.0, 1.0).abs() <= 0.7 * 0.4);
    }

    #[test]
    fn regime_examples() {
        assert_eq!(classify_regime(er(1.0), er(0.4), 0.0, 0.7, 0.3), Regime::A);
        assert_eq!(classify_regime(er(1.0), er(0.3), 0.1, 0.3, 0.5), Regime::B);
        assert_eq!(classify_regime(er(1.0), er(1.0), 0.2, 0.9, 0.1), Regime::C);
        assert_eq!(classify_regime(er(1.0), ExtReal::INFINITY, 0.0, 0.9, 0.1), Regime::C);
        assert_eq!(classify_regime(ExtReal::INFINITY, ExtReal::INFINITY, 0.0, 0.9, 0.1), Regime::C);
    }

    #[test]
    fn realized_change_by_regime() {
        // C: retriever misses a supported label.
        let g = GateInputs::new(pv(&[0.5, 0.5]), pv(&[0.5, 0.5]), pv(&[1.0, 0.0]), 1.0, 0.0).unwrap();
        let rec = realized_delta_h(&g);
        assert_eq!(rec.regime, Regime::C);
        assert_eq!(rec.delta_h, 0.0);

        // A: retriever matches the truth and is peaked on its top label.
        let g = GateInputs::new(pv(&[0.8, 0.2]), pv(&[0.4, 0.6]), pv(&[0.8, 0.2]), 0.9, 0.1).unwrap();
        let rec = realized_delta_h(&g);
        assert_eq!(rec.regime, Regime::A);
        assert!(rec.delta_h >= 0.0);
        assert!((rec.delta_h - (rec.h_q0 - rec.h_mixed)).abs() < 1e-15);

        // B: retriever fits better but q0 is more confident on y_r.
        let g = GateInputs::new(pv(&[0.5, 0.5]), pv(&[0.9, 0.1]), pv(&[0.6, 0.4]), 1.0, 0.0).unwrap();
        let rec = realized_delta_h(&g);
        assert_eq!(rec.regime, Regime::B);
        assert!(rec.delta_h <= 0.0);
    }

    #[test]
    fn asymptotic_target_example() {
        let t = asymptotic_target(&pv(&[0.7, 0.3]), &pv(&[0.4, 0.6])).unwrap();
        assert_eq!(t.y_star, 0);
        assert!((t.gamma - 0.4).abs() < 1e-15);
        assert!((t.ell_bayes.value() - 0.610_864_302_054_893_5).abs() < 1e-12);
        assert!((t.ell0.value() - 0.794_651_199_441_705_7).abs() < 1e-12);
        assert_eq!(t.lambda_inf, 1);
        assert!((t.limit_value - 0.3).abs() < 1e-15);
    }

    #[test]
    fn asymptotic_target_rejections() {
        let p = pv(&[0.7, 0.3]);
        assert!(matches!(asymptotic_target(&p, &p), Err(Error::DegenerateTarget { .. })));
        let u = ProbVec::uniform(3).unwrap();
        assert_eq!(asymptotic_target(&u, &u), Err(Error::NonUniqueBayesLabel));
    }

    #[test]
    fn single_label_is_degenerate() {
        // ell_bayes = ell0 = 0 for C = 1, which is degenerate.
        let one = pv(&[1.0]);
        assert!(matches!(asymptotic_target(&one, &one), Err(Error::DegenerateTarget { .. })));
    }
}
