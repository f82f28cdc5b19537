use crate::error::{Error, Result};

/// Per-instance loss on raw scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Loss {
    /// Binary hinge on a single score; class 0 ↦ y = −1, class 1 ↦ y = +1.
    Hinge,
    /// Softmax cross-entropy over `C ≥ 2` scores.
    CrossEntropy,
}

impl Loss {
    pub fn tag(self) -> &'static str {
        match self {
            Loss::Hinge => "hinge",
            Loss::CrossEntropy => "cross_entropy",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Loss> {
        match tag {
            "hinge" => Ok(Loss::Hinge),
            "cross_entropy" | "crossentropy" | "ce" => Ok(Loss::CrossEntropy),
            other => Err(Error::InvalidValue(format!("unknown loss '{other}'"))),
        }
    }

    /// Loss matching a model's output count.
    pub fn for_outputs(outputs: usize) -> Loss {
        if outputs == 1 {
            Loss::Hinge
        } else {
            Loss::CrossEntropy
        }
    }

    /// Check that this loss can be used with `outputs` scores and labels
    /// drawn from `classes` classes.
    pub fn check_compatible(self, outputs: usize, classes: usize) -> Result<()> {
        match self {
            Loss::Hinge if outputs != 1 || classes > 2 => Err(Error::InvalidValue(format!(
                "hinge loss needs a single-output model and binary labels, got {outputs} outputs and {classes} classes"
            ))),
            Loss::CrossEntropy if outputs < 2 || classes > outputs => {
                Err(Error::InvalidValue(format!(
                    "cross-entropy needs >= 2 outputs covering all {classes} classes, model has {outputs}"
                )))
            }
            _ => Ok(()),
        }
    }

    /// Loss value and gradient with respect to the scores.
    pub fn value_grad(self, scores: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
        match self {
            Loss::Hinge => {
                if scores.len() != 1 || label > 1 {
                    return Err(Error::InvalidValue(format!(
                        "hinge loss takes one score and a label in {{0, 1}}, got {} scores and label {label}",
                        scores.len()
                    )));
                }
                let y = if label == 1 { 1.0 } else { -1.0 };
                let (v, g) = hinge(scores[0], y);
                Ok((v, vec![g]))
            }
            Loss::CrossEntropy => {
                if label >= scores.len() {
                    return Err(Error::InvalidValue(format!(
                        "label {label} out of range for {} classes",
                        scores.len()
                    )));
                }
                Ok(cross_entropy(scores, label))
            }
        }
    }
}

/// `max(0, 1 − y·ŷ)` and its subgradient (0 at the kink).
pub fn hinge(score: f64, y: f64) -> (f64, f64) {
    let margin = y * score;
    if margin < 1.0 {
        (1.0 - margin, -y)
    } else {
        (0.0, 0.0)
    }
}

/// `−log softmax(s)[label]` and `softmax(s) − e_label`.
pub fn cross_entropy(scores: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let value = sum.ln() - (scores[label] - max);
    let mut grad: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    grad[label] -= 1.0;
    (value, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hinge_margin_satisfied() {
        let (v, g) = Loss::Hinge.value_grad(&[2.0], 1).unwrap();
        assert_eq!((v, g[0]), (0.0, 0.0));
        let (v, g) = Loss::Hinge.value_grad(&[0.25], 0).unwrap();
        assert_eq!((v, g[0]), (1.25, 1.0));
        // kink
        assert_eq!(hinge(1.0, 1.0), (0.0, 0.0));
    }

    #[test]
    fn uniform_cross_entropy_is_log_c() {
        for label in 0..4 {
            let (v, g) = Loss::CrossEntropy.value_grad(&[0.3; 4], label).unwrap();
            assert!((v - 4f64.ln()).abs() < 1e-15);
            assert!((g.iter().sum::<f64>()).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_bad_labels() {
        assert!(Loss::CrossEntropy.value_grad(&[0.0, 1.0], 2).is_err());
        assert!(Loss::Hinge.value_grad(&[0.0], 2).is_err());
        assert!(Loss::Hinge.value_grad(&[0.0, 1.0], 1).is_err());
        assert!(Loss::Hinge.check_compatible(3, 3).is_err());
        assert!(Loss::CrossEntropy.check_compatible(1, 2).is_err());
        assert!(Loss::CrossEntropy.check_compatible(3, 3).is_ok());
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = 1e-6;
        for _ in 0..50 {
            let s: Vec<f64> = (0..5).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let label = rng.gen_range(0..5);
            let (_, g) = cross_entropy(&s, label);
            for i in 0..5 {
                let (mut up, mut dn) = (s.clone(), s.clone());
                up[i] += h;
                dn[i] -= h;
                let fd = (cross_entropy(&up, label).0 - cross_entropy(&dn, label).0) / (2.0 * h);
                assert!((fd - g[i]).abs() <= 1e-6 * g[i].abs().max(1e-2), "{fd} vs {}", g[i]);
            }
            let score: f64 = rng.gen_range(-3.0..3.0);
            let y = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            if (1.0 - y * score).abs() < 1e-3 {
                continue;
            }
            let fd = (hinge(score + h, y).0 - hinge(score - h, y).0) / (2.0 * h);
            assert!((fd - hinge(score, y).1).abs() < 1e-6);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn losses_nonnegative_and_shift_invariant(
                s in prop::collection::vec(-20.0f64..20.0, 2..8),
                shift in -50.0f64..50.0,
                label_seed in any::<usize>(),
            ) {
                let label = label_seed % s.len();
                let (v, _) = cross_entropy(&s, label);
                prop_assert!(v >= 0.0);
                let shifted: Vec<f64> = s.iter().map(|x| x + shift).collect();
                let (w, _) = cross_entropy(&shifted, label);
                prop_assert!((v - w).abs() <= 1e-12 * v.abs().max(1.0));
                prop_assert!(hinge(s[0], 1.0).0 >= 0.0 && hinge(s[0], -1.0).0 >= 0.0);
            }
        }
    }
}
