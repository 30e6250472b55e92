//! Breslow-type estimators of the cumulative baseline hazard.
//!
//! Every estimator here is affine in the treatment effect:
//! `Λ̂(t; θ) = A(t) − θ B(t)`. `A` has jumps at event times plus a
//! piecewise-constant drift density, `B` is absolutely continuous. Keeping
//! both parts lets the score be evaluated at any `θ` without refitting.

use crate::data::{RiskSetIndex, StepFunction, SurvivalDataset};
use crate::error::{Error, Result};
use crate::logit::expit;

/// Which subjects' weights enter a weighted Breslow estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weighting {
    /// Unit weights for every subject.
    None,
    /// Covariate-balancing weights of arm 0 or 1.
    Arm(u8),
}

/// `Λ̂(t; θ) = A(t) − θ B(t)` on the segments of some risk-set index.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineEstimate {
    knots: Vec<f64>,
    jump_a: Vec<f64>,
    /// Density of `A` on the segment ending at each knot.
    rate_a: Vec<f64>,
    /// Density of `B` on the segment ending at each knot.
    rate_b: Vec<f64>,
    cum_a: Vec<f64>,
    cum_b: Vec<f64>,
    /// End of the interval on which the (weighted) risk set is non-empty.
    support_end: f64,
    weighting: Weighting,
}

impl BaselineEstimate {
    fn from_parts(
        knots: Vec<f64>,
        jump_a: Vec<f64>,
        rate_a: Vec<f64>,
        rate_b: Vec<f64>,
        support_end: f64,
        weighting: Weighting,
    ) -> Self {
        let m = knots.len();
        let mut cum_a = vec![0.0; m];
        let mut cum_b = vec![0.0; m];
        let mut a = 0.0;
        let mut b = 0.0;
        let mut prev = 0.0;
        for g in 0..m {
            let len = knots[g] - prev;
            a += rate_a[g] * len + jump_a[g];
            b += rate_b[g] * len;
            cum_a[g] = a;
            cum_b[g] = b;
            prev = knots[g];
        }
        Self {
            knots,
            jump_a,
            rate_a,
            rate_b,
            cum_a,
            cum_b,
            support_end,
            weighting,
        }
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn jumps(&self) -> &[f64] {
        &self.jump_a
    }

    pub fn drift_a(&self) -> &[f64] {
        &self.rate_a
    }

    pub fn drift_b(&self) -> &[f64] {
        &self.rate_b
    }

    pub fn weighting(&self) -> Weighting {
        self.weighting
    }

    pub fn weighted(&self) -> bool {
        self.weighting != Weighting::None
    }

    /// Last time at which the estimator's risk set carries positive weight.
    pub fn support_end(&self) -> f64 {
        self.support_end
    }

    /// Start of the segment ending at knot `g`.
    #[inline]
    pub fn segment_start(&self, g: usize) -> f64 {
        if g == 0 {
            0.0
        } else {
            self.knots[g - 1]
        }
    }

    /// `(A(t), B(t))`.
    pub fn components(&self, t: f64) -> (f64, f64) {
        // knots with u_g <= t contribute fully
        let full = self.knots.partition_point(|&u| u <= t);
        let (mut a, mut b) = if full == 0 {
            (0.0, 0.0)
        } else {
            (self.cum_a[full - 1], self.cum_b[full - 1])
        };
        if full < self.knots.len() {
            let start = self.segment_start(full);
            let len = (t - start).max(0.0);
            a += self.rate_a[full] * len;
            b += self.rate_b[full] * len;
        }
        (a, b)
    }

    /// `Λ̂(t; θ)`.
    pub fn eval(&self, t: f64, theta: f64) -> f64 {
        let (a, b) = self.components(t);
        a - theta * b
    }

    /// The estimator frozen at `θ = theta_l`: `Λ̂(t; θ_l)` for every `θ`.
    pub fn fixed_at(&self, theta_l: f64) -> Self {
        let rate_a = self
            .rate_a
            .iter()
            .zip(&self.rate_b)
            .map(|(a, b)| a - theta_l * b)
            .collect();
        Self::from_parts(
            self.knots.clone(),
            self.jump_a.clone(),
            rate_a,
            vec![0.0; self.knots.len()],
            self.support_end,
            self.weighting,
        )
    }

    /// The jump part of `A` as a step function.
    pub fn jump_part(&self) -> StepFunction {
        StepFunction::from_increments(&self.knots, &self.jump_a).expect("knots increasing")
    }

    /// Total variation of `Λ̂(·; θ)` on `[0, ∞)`.
    pub fn total_variation(&self, theta: f64) -> f64 {
        let mut tv = 0.0;
        for g in 0..self.knots.len() {
            let len = self.knots[g] - self.segment_start(g);
            tv += self.jump_a[g].abs() + ((self.rate_a[g] - theta * self.rate_b[g]) * len).abs();
        }
        tv
    }

    /// Writes `t, A(t), B(t)` at the knots.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let err = |e: csv::Error| Error::Io(e.to_string());
        wtr.write_record(["time", "a", "b"]).map_err(err)?;
        for g in 0..self.knots.len() {
            wtr.write_record([
                format!("{}", self.knots[g]),
                format!("{}", self.cum_a[g]),
                format!("{}", self.cum_b[g]),
            ])
            .map_err(err)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Shared construction: weights `w_i ≥ 0`, numerator weights `num_w_i`.
fn weighted_estimate(
    data: &SurvivalDataset,
    index: &RiskSetIndex,
    beta_z: &[f64],
    weight: &[f64],
    num_weight: &[f64],
    profile_theta: bool,
    weighting: Weighting,
) -> Result<BaselineEstimate> {
    let m = index.n_groups();
    let knots = index.distinct_times().to_vec();
    let den = index.risk_sums(|i| weight[i]);
    let drift = index.risk_sums(|i| num_weight[i] * beta_z[i]);
    let dsum = index.risk_sums(|i| num_weight[i] * data.treatment(i));
    let ev = index.event_sums(data.events(), |i| num_weight[i]);
    let mut jump_a = vec![0.0; m];
    let mut rate_a = vec![0.0; m];
    let mut rate_b = vec![0.0; m];
    let mut support_end = 0.0;
    let arm = match weighting {
        Weighting::Arm(k) => k,
        Weighting::None => 0,
    };
    for g in 0..m {
        if den[g] > 0.0 {
            jump_a[g] = ev[g] / den[g];
            rate_a[g] = -drift[g] / den[g];
            if profile_theta {
                rate_b[g] = dsum[g] / den[g];
            }
            support_end = knots[g];
        } else if ev[g] > 0.0 {
            return Err(Error::NoOverlapInArm {
                arm,
                time: knots[g],
            });
        }
    }
    Ok(BaselineEstimate::from_parts(
        knots,
        jump_a,
        rate_a,
        rate_b,
        support_end,
        weighting,
    ))
}

/// The Breslow estimator `Λ̂(t; β, θ)` in affine form.
///
/// `dA = Σ{dN_i − Y_i β'Z_i dt} / Σ Y_i`, `dB = D̄(t) dt`.
pub fn breslow(data: &SurvivalDataset, index: &RiskSetIndex, beta: &[f64]) -> BaselineEstimate {
    let bz = data.linear_predictor(beta);
    let ones = vec![1.0; data.n()];
    weighted_estimate(data, index, &bz, &ones, &ones, true, Weighting::None)
        .expect("unit weights never leave an event without risk mass")
}

/// Covariate-balancing weights `w⁰_i = (1 − D_i) π_i`, `w¹_i = D_i (1 − π_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BalanceWeights {
    pub w0: Vec<f64>,
    pub w1: Vec<f64>,
}

impl BalanceWeights {
    pub fn from_propensities(treatments: &[bool], ps: &[f64]) -> Self {
        let w0 = treatments
            .iter()
            .zip(ps)
            .map(|(&d, &p)| if d { 0.0 } else { p })
            .collect();
        let w1 = treatments
            .iter()
            .zip(ps)
            .map(|(&d, &p)| if d { 1.0 - p } else { 0.0 })
            .collect();
        Self { w0, w1 }
    }

    /// Weights from a logistic coefficient vector `(γ_0, γ_1..p)`.
    pub fn from_gamma(data: &SurvivalDataset, gamma: &[f64]) -> Self {
        let ps = propensities(data, gamma);
        Self::from_propensities(data.treatments(), &ps)
    }

    pub fn arm(&self, k: u8) -> &[f64] {
        if k == 0 {
            &self.w0
        } else {
            &self.w1
        }
    }
}

/// `expit(γ_0 + Z_i'γ_{1:})` for every subject.
pub fn propensities(data: &SurvivalDataset, gamma: &[f64]) -> Vec<f64> {
    assert_eq!(gamma.len(), data.p() + 1);
    data.linear_predictor(&gamma[1..])
        .into_iter()
        .map(|e| expit(e + gamma[0]))
        .collect()
}

/// Placement of the balancing weights in the arm estimators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightPlacement {
    /// `w^k` in numerator and denominator (used by every estimator).
    ArmBoth,
    /// `w¹` in the numerator for both arms. Kept only to show that the
    /// closed-form identity between the HDi forms fails with it.
    TreatedNumerator,
}

/// Arm-`k` weighted Breslow estimator. With `profile_theta` it is the
/// θ-profiled estimator `Λ̌^k(t, θ; β, γ)`; without, the θ-free `Λ̌^k(t; β, γ)`.
pub fn weighted_breslow(
    data: &SurvivalDataset,
    index: &RiskSetIndex,
    beta: &[f64],
    weights: &BalanceWeights,
    arm: u8,
    profile_theta: bool,
) -> Result<BaselineEstimate> {
    weighted_breslow_placed(data, index, beta, weights, arm, profile_theta, WeightPlacement::ArmBoth)
}

pub fn weighted_breslow_placed(
    data: &SurvivalDataset,
    index: &RiskSetIndex,
    beta: &[f64],
    weights: &BalanceWeights,
    arm: u8,
    profile_theta: bool,
    placement: WeightPlacement,
) -> Result<BaselineEstimate> {
    assert!(arm <= 1);
    let bz = data.linear_predictor(beta);
    let w = weights.arm(arm);
    let num = match placement {
        WeightPlacement::ArmBoth => w,
        WeightPlacement::TreatedNumerator => weights.arm(1),
    };
    weighted_estimate(data, index, &bz, w, num, profile_theta, Weighting::Arm(arm))
}

/// Nelson–Aalen estimator, as an independent reference.
pub fn nelson_aalen(index: &RiskSetIndex) -> StepFunction {
    let inc: Vec<f64> = index
        .event_counts()
        .iter()
        .zip(index.at_risk_counts())
        .map(|(&e, &r)| e as f64 / r as f64)
        .collect();
    StepFunction::from_increments(index.distinct_times(), &inc).expect("sorted")
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn toy() -> SurvivalDataset {
        SurvivalDataset::new(
            vec![1.0, 2.0, 3.0],
            vec![true; 3],
            vec![true, false, true],
            DMatrix::from_row_slice(3, 1, &[0.2, -0.1, 0.4]),
            None,
        )
        .unwrap()
    }

    #[test]
    fn nelson_aalen_reduction() {
        let d = toy();
        let idx = RiskSetIndex::new(&d);
        let b = breslow(&d, &idx, &[0.0]);
        let na = nelson_aalen(&idx);
        for t in [0.5, 1.0, 1.5, 2.0, 3.0, 4.0] {
            assert_eq!(b.eval(t, 0.0), na.eval(t));
        }
        for (a, b) in na.increments().iter().zip([1.0 / 3.0, 0.5, 1.0]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn affine_in_theta() {
        let d = toy();
        let idx = RiskSetIndex::new(&d);
        let b = breslow(&d, &idx, &[0.5]);
        for t in [0.3, 1.0, 2.5, 3.0] {
            let (_, bb) = b.components(t);
            let diff = b.eval(t, 0.7) - b.eval(t, -0.2);
            assert!((diff + 0.9 * bb).abs() < 1e-15);
        }
    }

    #[test]
    fn event_without_risk_mass_is_no_overlap() {
        let d = toy();
        let idx = RiskSetIndex::new(&d);
        let w = BalanceWeights {
            w0: vec![0.0, 0.0, 0.0],
            w1: vec![0.5, 0.0, 0.5],
        };
        let err = weighted_breslow_placed(&d, &idx, &[0.0], &w, 0, false, WeightPlacement::TreatedNumerator);
        assert!(matches!(err, Err(Error::NoOverlapInArm { arm: 0, .. })));
        let ok = weighted_breslow(&d, &idx, &[0.0], &w, 1, false).unwrap();
        assert_eq!(ok.support_end(), 3.0);
        let w_early = BalanceWeights {
            w0: vec![0.0, 0.0, 0.0],
            w1: vec![0.5, 0.0, 0.0],
        };
        let ok = weighted_breslow(&d, &idx, &[0.0], &w_early, 1, false).unwrap();
        assert_eq!(ok.support_end(), 1.0);
    }
}
