//! Attainment thresholds for the convex closed forms.
//!
//! Both closed forms trade a sphere branch against a Lipschitz shift that
//! scales with the level. The smallest level at which the sphere branch
//! wins (in aggregate for the tail mean, per sample for the expectile) is a
//! ratio of sphere gains to `L eps`; above it the worst case is attained.

use crate::domain::{DiscreteDistribution, DomainError, LossFunction, NormKind};

use super::WorstCaseError;

/// Which level family the threshold is computed for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdFamily {
    Cvar,
    Expectile,
}

/// Diagnostics backing a threshold. A unit threshold with `condition_holds`
/// false means no level below one guarantees attainment.
#[derive(Debug, Clone)]
pub struct AttainabilityReport {
    /// Strict sphere-gain condition of the sufficient criterion: aggregate
    /// gain for the tail-mean family, every sample for the expectile family.
    pub condition_holds: bool,
    /// First sample with zero sphere gain when the condition fails.
    pub failing_sample: Option<usize>,
    /// Per-sample gains `sphere_max_i - loss(center_i)`.
    pub sphere_gains: Vec<f64>,
    /// Zero radius or zero Lipschitz constant: every level attains and the
    /// returned threshold is the family's smallest valid level.
    pub degenerate: bool,
}

/// Smallest level at which the sphere branch of the closed form weakly
/// dominates, so the worst-case distribution exists. Levels at or above the
/// threshold attain; a returned 1.0 is a sentinel for "never below one".
pub fn attainability_threshold(
    loss: &LossFunction,
    samples: &DiscreteDistribution,
    eps: f64,
    norm: NormKind,
    family: ThresholdFamily,
) -> Result<(f64, AttainabilityReport), WorstCaseError> {
    loss.validate()?;
    if !eps.is_finite() || eps < 0.0 {
        return Err(DomainError::BadRadius(eps).into());
    }
    if loss.dim() != samples.dim() {
        return Err(
            DomainError::DimensionMismatch { expected: samples.dim(), got: loss.dim() }.into()
        );
    }
    if !loss.is_convex() {
        return Err(WorstCaseError::Unsupported(
            "attainment thresholds describe the convex closed forms".into(),
        ));
    }
    let lip = loss.lipschitz(norm);
    let w = samples.weights();
    let pts = samples.points();
    let mut gains = Vec::with_capacity(pts.len());
    for c in pts {
        let sm = loss.sphere_max(c, eps, norm)?;
        gains.push((sm.value - loss.evaluate(c)).max(0.0));
    }
    let floor = match family {
        ThresholdFamily::Cvar => 0.0,
        ThresholdFamily::Expectile => 0.5,
    };
    if eps == 0.0 || lip == 0.0 {
        return Ok((
            floor,
            AttainabilityReport {
                condition_holds: true,
                failing_sample: None,
                sphere_gains: gains,
                degenerate: true,
            },
        ));
    }
    let (alpha_star, holds) = match family {
        ThresholdFamily::Cvar => {
            let g: f64 = gains.iter().zip(w).map(|(gi, &wi)| wi * gi).sum();
            ((1.0 - g / (lip * eps)).clamp(0.0, 1.0), g > 0.0)
        }
        ThresholdFamily::Expectile => {
            // Per-sample: beta = (1-alpha)/alpha must not exceed
            // gain_i / (L eps), which the Lipschitz bound keeps in [0, 1].
            let beta_min = gains
                .iter()
                .map(|gi| (gi / (lip * eps)).min(1.0))
                .fold(f64::INFINITY, f64::min);
            ((1.0 / (1.0 + beta_min)).clamp(0.5, 1.0), beta_min > 0.0)
        }
    };
    let failing_sample =
        if holds { None } else { gains.iter().position(|&gi| gi == 0.0).or(Some(0)) };
    Ok((
        alpha_star,
        AttainabilityReport {
            condition_holds: holds,
            failing_sample,
            sphere_gains: gains,
            degenerate: false,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::AffinePiece;
    use crate::worst_case::{wce_closed_form_cvar, wce_closed_form_expectile};

    fn abs_loss() -> LossFunction {
        LossFunction::MaxAffine {
            pieces: vec![
                AffinePiece { gradient: vec![1.0], offset: 0.0 },
                AffinePiece { gradient: vec![-1.0], offset: 0.0 },
            ],
        }
    }

    fn hinge() -> LossFunction {
        // max(0, xi - 1): flat left of one, unit slope right of it.
        LossFunction::MaxAffine {
            pieces: vec![
                AffinePiece { gradient: vec![0.0], offset: 0.0 },
                AffinePiece { gradient: vec![1.0], offset: -1.0 },
            ],
        }
    }

    #[test]
    fn full_gain_attains_at_every_level() {
        let samples = DiscreteDistribution::uniform(vec![vec![0.0]]).unwrap();
        let (a, report) =
            attainability_threshold(&abs_loss(), &samples, 0.1, NormKind::L2, ThresholdFamily::Cvar)
                .unwrap();
        assert_eq!(a, 0.0);
        assert!(report.condition_holds);
        let (a, _) = attainability_threshold(
            &abs_loss(),
            &samples,
            0.1,
            NormKind::L2,
            ThresholdFamily::Expectile,
        )
        .unwrap();
        assert_eq!(a, 0.5);
    }

    #[test]
    fn flat_sphere_sample_is_never_guaranteed() {
        // Sample far inside the flat region: zero sphere gain.
        let samples = DiscreteDistribution::uniform(vec![vec![0.0], vec![1.5]]).unwrap();
        let (a, report) = attainability_threshold(
            &hinge(),
            &samples,
            0.5,
            NormKind::L2,
            ThresholdFamily::Expectile,
        )
        .unwrap();
        assert_eq!(a, 1.0);
        assert!(!report.condition_holds);
        assert_eq!(report.failing_sample, Some(0));
        assert_eq!(report.sphere_gains[0], 0.0);
    }

    #[test]
    fn cvar_threshold_matches_closed_form_branch_flip() {
        let samples = DiscreteDistribution::uniform(vec![vec![0.0], vec![1.5]]).unwrap();
        let eps = 0.5;
        let (a_star, report) =
            attainability_threshold(&hinge(), &samples, eps, NormKind::L2, ThresholdFamily::Cvar)
                .unwrap();
        // Aggregate gain (0 + 0.5)/2 over L*eps = 0.5 gives one half.
        assert!((a_star - 0.5).abs() < 1e-12);
        assert!(report.condition_holds);
        for k in 0..=10 {
            let alpha = k as f64 / 10.0;
            if alpha >= 1.0 {
                break;
            }
            let r = wce_closed_form_cvar(&hinge(), &samples, eps, alpha, NormKind::L2).unwrap();
            assert_eq!(
                r.attained(),
                alpha >= a_star,
                "alpha={alpha} attained={} threshold={a_star}",
                r.attained()
            );
        }
    }

    #[test]
    fn expectile_threshold_matches_closed_form_branch_flip() {
        // Both samples gain, unevenly: the smaller gain sets the threshold.
        let loss = LossFunction::MaxAffine {
            pieces: vec![
                AffinePiece { gradient: vec![1.0], offset: 0.0 },
                AffinePiece { gradient: vec![-0.25], offset: 0.3 },
            ],
        };
        let samples = DiscreteDistribution::uniform(vec![vec![1.0], vec![-1.0]]).unwrap();
        let eps = 0.4;
        let (a_star, report) = attainability_threshold(
            &loss,
            &samples,
            eps,
            NormKind::L2,
            ThresholdFamily::Expectile,
        )
        .unwrap();
        assert!(report.condition_holds);
        assert!((0.5..1.0).contains(&a_star), "threshold {a_star}");
        for k in 1..=19 {
            // Offset grid so no point lands exactly on the threshold.
            let alpha = 0.5 + 0.0251 * k as f64;
            let r = wce_closed_form_expectile(&loss, &samples, eps, alpha, NormKind::L2).unwrap();
            assert_eq!(
                r.attained(),
                alpha >= a_star - 1e-12,
                "alpha={alpha} attained={} threshold={a_star}",
                r.attained()
            );
        }
    }

    #[test]
    fn zero_radius_is_degenerate() {
        let samples = DiscreteDistribution::uniform(vec![vec![0.3]]).unwrap();
        let (a, report) =
            attainability_threshold(&abs_loss(), &samples, 0.0, NormKind::L2, ThresholdFamily::Cvar)
                .unwrap();
        assert_eq!(a, 0.0);
        assert!(report.degenerate);
        let (a, report) = attainability_threshold(
            &abs_loss(),
            &samples,
            0.0,
            NormKind::L2,
            ThresholdFamily::Expectile,
        )
        .unwrap();
        assert_eq!(a, 0.5);
        assert!(report.degenerate);
    }

    #[test]
    fn concave_losses_are_rejected() {
        let concave = LossFunction::MinAffine {
            pieces: vec![
                AffinePiece { gradient: vec![1.0], offset: 0.0 },
                AffinePiece { gradient: vec![-1.0], offset: 0.0 },
            ],
        };
        let samples = DiscreteDistribution::uniform(vec![vec![0.0]]).unwrap();
        assert!(attainability_threshold(
            &concave,
            &samples,
            0.1,
            NormKind::L2,
            ThresholdFamily::Cvar
        )
        .is_err());
    }
}
