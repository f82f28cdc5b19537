//! Model synthesis for unseen domains and tasks from their descriptors.
//!
//! Descriptors are taken as raw slices so that arbitrary real-valued
//! combinations (including the zero vector) can be synthesised.

use crate::descriptors::{DomainSchema, Encoding};
use crate::error::{Error, Result};
use crate::model::FactorizedModel;
use crate::single::SingleOutputModel;
use crate::tensor::{Matrix, Vector};

fn require_distributed(schema: &DomainSchema) -> Result<()> {
    match schema.encoding() {
        Encoding::Distributed { .. } => Ok(()),
        other => Err(Error::Descriptor(format!(
            "zero-shot domain adaptation needs a distributed descriptor; a {other} descriptor \
             gives an unseen domain no columns of Q to combine"
        ))),
    }
}

/// Weights `P·Q·z` for a (possibly unseen) domain descriptor. With identity
/// `P` this is `Q·z`.
pub fn zsda_weights(model: &SingleOutputModel, schema: &DomainSchema, z: &[f64]) -> Result<Vector> {
    require_distributed(schema)?;
    check_len(schema, z)?;
    model.generate_weights(z)
}

/// Weight matrix (`D×C`) generated for a (possibly unseen) descriptor.
pub fn zsda_weight_matrix(model: &FactorizedModel, schema: &DomainSchema, z: &[f64]) -> Result<Matrix> {
    require_distributed(schema)?;
    check_len(schema, z)?;
    model.weight_matrix(z)
}

fn check_len(schema: &DomainSchema, z: &[f64]) -> Result<()> {
    if z.len() != schema.descriptor_len() {
        return Err(Error::Shape(format!(
            "descriptor has length {}, schema expects {}",
            z.len(),
            schema.descriptor_len()
        )));
    }
    Ok(())
}

/// Index of the candidate task descriptor with the highest single-output
/// score `xᵀPQz`; ties go to the lowest index.
pub fn zsl_classify(model: &FactorizedModel, x: &[f64], candidates: &[Vec<f64>]) -> Result<usize> {
    if candidates.is_empty() {
        return Err(Error::InvalidValue("zero-shot classification needs at least one candidate".into()));
    }
    if model.output_dim() != 1 {
        return Err(Error::InvalidValue(format!(
            "zero-shot classification scores one output per descriptor, model has {}",
            model.output_dim()
        )));
    }
    let mut best = (0, f64::NEG_INFINITY);
    for (i, z) in candidates.iter().enumerate() {
        let s = model.scores(x, z)?[0];
        if s > best.1 {
            best = (i, s);
        }
    }
    Ok(best.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptors::Factor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn grid() -> Arc<DomainSchema> {
        Arc::new(
            DomainSchema::distributed(vec![Factor::new("A", &["1", "2"]), Factor::new("B", &["1", "2"])])
                .unwrap(),
        )
    }

    fn model(seed: u64) -> SingleOutputModel {
        SingleOutputModel::init_fixed_identity(5, 4, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn seen_descriptor_reproduces_generated_weights() {
        let s = grid();
        let m = model(1);
        for id in 0..4 {
            let z = s.encode_domain(id).unwrap();
            assert_eq!(zsda_weights(&m, &s, z.as_slice()).unwrap(), m.generate_weights(z.as_slice()).unwrap());
        }
    }

    #[test]
    fn unseen_combination_sums_factor_columns() {
        let s = grid();
        let m = model(2);
        let z = s.encode_distributed(&["2", "1"]).unwrap();
        let w = zsda_weights(&m, &s, z.as_slice()).unwrap();
        // columns: A-1, A-2, B-1, B-2
        for r in 0..5 {
            let want = m.q()[(r, 1)] + m.q()[(r, 2)];
            assert!((w[r] - want).abs() < 1e-15);
        }
        let zero = zsda_weights(&m, &s, &[0.0; 4]).unwrap();
        assert!(zero.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_hot_schema_rejected() {
        let s = DomainSchema::one_hot(4).unwrap();
        let err = zsda_weights(&model(0), &s, &[1.0, 0.0, 0.0, 0.0]).unwrap_err();
        assert!(err.to_string().contains("distributed"));
        let fm: FactorizedModel = model(0).into();
        assert!(zsda_weight_matrix(&fm, &s, &[1.0, 0.0, 0.0, 0.0]).is_err());
        assert!(zsda_weights(&model(0), &grid(), &[1.0; 3]).is_err());
    }

    #[test]
    fn zsl_rules() {
        let fm: FactorizedModel = model(3).into();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        assert_eq!(zsl_classify(&fm, &x, &[vec![0.0, 1.0, 1.0, 0.0]]).unwrap(), 0);
        assert!(zsl_classify(&fm, &x, &[]).is_err());
        let cands: Vec<Vec<f64>> = (0..4).map(|id| grid().encode_domain(id).unwrap().as_slice().to_vec()).collect();
        let k = zsl_classify(&fm, &x, &cands).unwrap();
        let scaled: Vec<f64> = x.iter().map(|v| v * 3.5).collect();
        assert_eq!(zsl_classify(&fm, &scaled, &cands).unwrap(), k);
        // duplicates tie, lowest index wins
        assert_eq!(zsl_classify(&fm, &x, &[cands[k].clone(), cands[k].clone()]).unwrap(), 0);
    }

    #[test]
    fn multi_output_matrix_synthesis() {
        let s = grid();
        let fm: FactorizedModel =
            crate::multi::CpModel::init(5, 3, 4, 2, &mut ChaCha8Rng::seed_from_u64(8)).into();
        let z = s.encode_domain(3).unwrap();
        assert_eq!(zsda_weight_matrix(&fm, &s, z.as_slice()).unwrap(), fm.weight_matrix(z.as_slice()).unwrap());
    }

    mod props {
        use super::*;
        use proptest::prelude::{any, prop_assert, proptest};

        proptest! {
            #[test]
            fn synthesis_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let m = model(seed);
                let z1: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let z2: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let mix: Vec<f64> = z1.iter().zip(&z2).map(|(u, v)| a * u + b * v).collect();
                let s = grid();
                let w = zsda_weights(&m, &s, &mix).unwrap();
                let w1 = zsda_weights(&m, &s, &z1).unwrap();
                let w2 = zsda_weights(&m, &s, &z2).unwrap();
                for r in 0..5 {
                    prop_assert!((w[r] - (a * w1[r] + b * w2[r])).abs() <= 1e-12);
                }
            }
        }
    }
}
