//! Convergence-guarantee bookkeeping: checks the hyperparameter conditions
//! the analysis assumes, the step-size schedule it prescribes, and the
//! geometric round-sampling distribution it samples the reported iterate
//! from. Advisory only — the smoothness constant `L` is a user estimate.

use crate::error::{Error, Result};

/// One checked hypothesis: `lhs <= rhs` (or strict, per `name`).
#[derive(Debug, Clone)]
pub struct Condition {
    pub name: &'static str,
    pub satisfied: bool,
    pub lhs: f64,
    pub rhs: f64,
}

/// Outcome of [`validate_theorem_conditions`].
#[derive(Debug, Clone)]
pub struct TheoryReport {
    /// Per-round contraction increment.
    pub zeta: f64,
    pub eta_le: f64,
    pub eta_mue: f64,
    /// Minimum admissible round count.
    pub k_floor: f64,
    pub conditions: Vec<Condition>,
    /// Sampling distribution over rounds `0..K`, proportional to
    /// `(1 + zeta)^(K - 1 - k)`.
    pub pk: Vec<f64>,
}

impl TheoryReport {
    pub fn all_satisfied(&self) -> bool {
        self.conditions.iter().all(|c| c.satisfied)
    }
}

/// The analysis' step size: `1 / (4 E sqrt(3 L K))`.
pub fn theorem_eta(local_epochs: usize, rounds: usize, l_smooth: f64) -> Result<f64> {
    if local_epochs == 0 || rounds == 0 {
        return Err(Error::contract("epochs and rounds must be >= 1"));
    }
    if !(l_smooth > 0.0 && l_smooth.is_finite()) {
        return Err(Error::contract("smoothness constant must be positive"));
    }
    Ok(1.0 / (4.0 * local_epochs as f64 * (3.0 * l_smooth * rounds as f64).sqrt()))
}

/// Evaluate the contraction increment, the four hyperparameter conditions,
/// and the round-sampling distribution for a configuration.
pub fn validate_theorem_conditions(
    eta: f64,
    mu: f64,
    local_epochs: usize,
    rounds: usize,
    l_smooth: f64,
) -> Result<TheoryReport> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::contract("eta must be positive and finite"));
    }
    if !(mu >= 0.0 && mu.is_finite()) {
        return Err(Error::contract("mu must be >= 0 and finite"));
    }
    if local_epochs == 0 || rounds == 0 {
        return Err(Error::contract("epochs and rounds must be >= 1"));
    }
    if !(l_smooth > 0.0 && l_smooth.is_finite()) {
        return Err(Error::contract("smoothness constant must be positive"));
    }

    let e = local_epochs as f64;
    let k = rounds as f64;
    let l = l_smooth;

    let zeta = eta * eta
        * e
        * e
        * (9.0 * eta * l * l * e
            + 4.0 * eta * mu * e
            + 6.0 * l * (1.0 + 4.0 * eta * eta * mu * mu * e * e / 18.0));

    let eta_le = eta * l * e;
    let eta_mue = eta * mu * e;
    let k_floor = (3.0 * l / 32.0)
        .max(mu * mu / (12.0 * l))
        .max(mu * mu / (108.0 * l * l * l));

    let conditions = vec![
        Condition {
            name: "eta*L*E <= 1/2",
            satisfied: eta_le <= 0.5,
            lhs: eta_le,
            rhs: 0.5,
        },
        Condition {
            name: "eta*mu*E <= 1/2",
            satisfied: eta_mue <= 0.5,
            lhs: eta_mue,
            rhs: 0.5,
        },
        Condition {
            name: "mu < 1",
            satisfied: mu < 1.0,
            lhs: mu,
            rhs: 1.0,
        },
        Condition {
            name: "K >= max(3L/32, mu^2/(12L), mu^2/(108L^3))",
            satisfied: k >= k_floor,
            lhs: k,
            rhs: k_floor,
        },
    ];

    Ok(TheoryReport {
        zeta,
        eta_le,
        eta_mue,
        k_floor,
        conditions,
        pk: sampling_distribution(zeta, rounds),
    })
}

/// Normalized weights `(1 + zeta)^(K - 1 - k)` for `k = 0..K`, computed in
/// log space for stability. Exactly uniform when `zeta == 0`.
fn sampling_distribution(zeta: f64, rounds: usize) -> Vec<f64> {
    let k = rounds;
    if zeta == 0.0 {
        return vec![1.0 / k as f64; k];
    }
    let log_base = zeta.ln_1p();
    let logs: Vec<f64> = (0..k).map(|i| (k - 1 - i) as f64 * log_base).collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logs.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Second, independently factored evaluation of the contraction
    /// increment: zeta = 9 eta^3 E^3 L^2 + 4 eta^3 E^3 mu
    ///                 + 6 eta^2 E^2 L + (4/3) eta^4 E^4 L mu^2.
    fn zeta_oracle(eta: f64, mu: f64, e: f64, l: f64) -> f64 {
        9.0 * eta.powi(3) * e.powi(3) * l * l
            + 4.0 * eta.powi(3) * e.powi(3) * mu
            + 6.0 * eta.powi(2) * e.powi(2) * l
            + (4.0 / 3.0) * eta.powi(4) * e.powi(4) * l * mu * mu
    }

    #[test]
    fn vanishing_eta_gives_uniform_sampling() {
        let report = validate_theorem_conditions(1e-12, 0.1, 5, 100, 1.0).unwrap();
        assert!(report.zeta < 1e-20);
        for &p in &report.pk {
            assert!((p - 0.01).abs() < 1e-6);
        }
    }

    #[test]
    fn zeta_matches_independent_arithmetic_over_a_grid() {
        let mut points = 0;
        for &eta in &[1e-4, 1e-3, 1e-2, 0.1, 0.5] {
            for &mu in &[0.0, 0.01, 0.1, 0.9] {
                for &e in &[1usize, 5, 10] {
                    for &l in &[0.1, 1.0, 10.0] {
                        let report =
                            validate_theorem_conditions(eta, mu, e, 50, l).unwrap();
                        let want = zeta_oracle(eta, mu, e as f64, l);
                        let tol = 1e-12 * want.abs().max(1.0);
                        assert!(
                            (report.zeta - want).abs() <= tol,
                            "eta={eta} mu={mu} E={e} L={l}: {} vs {want}",
                            report.zeta
                        );
                        points += 1;
                    }
                }
            }
        }
        assert!(points >= 100);
    }

    #[test]
    fn violated_step_size_condition_is_flagged() {
        let report = validate_theorem_conditions(1.0, 0.0, 1, 10, 1.0).unwrap();
        let c = &report.conditions[0];
        assert!(!c.satisfied);
        assert_eq!(c.lhs, 1.0);
        assert!(!report.all_satisfied());
    }

    #[test]
    fn satisfied_configuration_passes_all_conditions() {
        // eta L E = 0.05, eta mu E = 0.005, mu < 1, K floor tiny.
        let report = validate_theorem_conditions(0.01, 0.1, 5, 100, 1.0).unwrap();
        assert!(report.all_satisfied(), "{:?}", report.conditions);
    }

    #[test]
    fn schedule_eta_closed_form_values() {
        // sqrt(3 * 1/3 * 1) = 1, so eta = 1/4.
        assert!((theorem_eta(1, 1, 1.0 / 3.0).unwrap() - 0.25).abs() < 1e-15);
        // 1 / (20 sqrt(300))
        let want = 1.0 / (20.0 * 300.0f64.sqrt());
        assert!((theorem_eta(5, 100, 1.0).unwrap() - want).abs() < 1e-15);
        assert!((want - 0.0028868).abs() < 1e-7);
    }

    #[test]
    fn schedule_eta_scales_inverse_sqrt_rounds() {
        let base = theorem_eta(3, 50, 2.0).unwrap();
        let doubled = theorem_eta(3, 100, 2.0).unwrap();
        assert!((doubled - base / 2.0f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn sampling_distribution_is_monotone_and_normalized() {
        for &(eta, mu) in &[(0.01, 0.0), (0.05, 0.2), (0.1, 0.5)] {
            let report = validate_theorem_conditions(eta, mu, 5, 64, 1.0).unwrap();
            let sum: f64 = report.pk.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12);
            assert!(report.zeta > 0.0);
            for w in report.pk.windows(2) {
                assert!(w[0] >= w[1], "weights must not increase with k");
            }
        }
    }

    #[test]
    fn zero_zeta_distribution_is_exactly_uniform() {
        let pk = sampling_distribution(0.0, 8);
        for &p in &pk {
            assert_eq!(p.to_bits(), 0.125f64.to_bits());
        }
    }

    #[test]
    fn zeta_is_nonnegative_and_increasing_in_eta() {
        let etas = [1e-4, 1e-3, 1e-2, 0.1, 0.3];
        let mut last = -1.0;
        for &eta in &etas {
            let report = validate_theorem_conditions(eta, 0.2, 4, 32, 1.5).unwrap();
            assert!(report.zeta >= 0.0);
            assert!(report.zeta > last, "zeta must grow with eta");
            last = report.zeta;
        }
    }

    #[test]
    fn schedule_eta_satisfies_step_condition_when_rounds_suffice() {
        for &l in &[0.1, 0.5, 1.0, 4.0, 16.0] {
            for &e in &[1usize, 2, 5, 20] {
                for &k in &[1usize, 2, 10, 100] {
                    if (k as f64) < 3.0 * l / 16.0 {
                        continue;
                    }
                    let eta = theorem_eta(e, k, l).unwrap();
                    let report = validate_theorem_conditions(eta, 0.0, e, k, l).unwrap();
                    assert!(
                        report.conditions[0].satisfied,
                        "L={l} E={e} K={k}: eta*L*E = {}",
                        report.eta_le
                    );
                }
            }
        }
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        assert!(validate_theorem_conditions(0.0, 0.0, 1, 1, 1.0).is_err());
        assert!(validate_theorem_conditions(0.1, -0.1, 1, 1, 1.0).is_err());
        assert!(validate_theorem_conditions(0.1, 0.0, 0, 1, 1.0).is_err());
        assert!(validate_theorem_conditions(0.1, 0.0, 1, 0, 1.0).is_err());
        assert!(validate_theorem_conditions(0.1, 0.0, 1, 1, 0.0).is_err());
        assert!(theorem_eta(0, 1, 1.0).is_err());
    }
}
