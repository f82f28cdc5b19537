//! Synthetic factorial multi-domain benchmarks with a planted model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::sync::Arc;

use crate::dataset::{Instance, MultiDomainDataset};
use crate::descriptors::{DomainSchema, Factor};
use crate::error::{Error, Result};
use crate::model::{class_of, FactorizedModel};
use crate::multi::TuckerModel;
use crate::single::SingleOutputModel;
use crate::tensor::{Matrix, Tensor3};

/// Retries per instance before the margin is declared infeasible.
pub const MARGIN_RETRIES: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PlantedKind {
    /// Binary labels from `sign(xᵀw)` with `w = w₀ + Σ_f v_f(state_f)`.
    /// `w₀` has expected norm 1 and each factor effect `v` has expected
    /// norm `effect`.
    Additive { effect: f64 },
    /// Multi-class labels from the argmax of a random low-rank Tucker model
    /// over the distributed descriptor.
    LowRankTucker { ranks: [usize; 3] },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub factors: Vec<Factor>,
    /// `D`
    pub features: usize,
    /// `C` (must be 2 for the additive model)
    pub classes: usize,
    /// training instances per domain
    pub n_train: usize,
    /// test instances per domain
    pub n_test: usize,
    pub kind: PlantedKind,
    /// label flip probability `ρ`
    pub noise: f64,
    /// minimum `|score|` (or top-two score gap) of accepted instances
    pub margin: f64,
    pub seed: u64,
}

impl SynthSpec {
    /// 2×2 factorial binary benchmark.
    pub fn grid_2x2(features: usize, n_train: usize, n_test: usize, effect: f64, noise: f64, seed: u64) -> Self {
        SynthSpec {
            factors: vec![Factor::new("A", &["1", "2"]), Factor::new("B", &["1", "2"])],
            features,
            classes: 2,
            n_train,
            n_test,
            kind: PlantedKind::Additive { effect },
            noise,
            margin: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidValue(m));
        if self.features == 0 {
            return bad("features must be >= 1".into());
        }
        if !(0.0..0.5).contains(&self.noise) {
            return bad(format!("noise must be in [0, 0.5), got {}", self.noise));
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return bad(format!("margin must be finite and >= 0, got {}", self.margin));
        }
        if self.n_train == 0 {
            return bad("n_train must be >= 1".into());
        }
        match self.kind {
            PlantedKind::Additive { effect } => {
                if self.classes != 2 {
                    return bad(format!("the additive planted model is binary, got {} classes", self.classes));
                }
                if !(effect >= 0.0 && effect.is_finite()) {
                    return bad(format!("effect must be finite and >= 0, got {effect}"));
                }
            }
            PlantedKind::LowRankTucker { ranks } => {
                if self.classes < 2 {
                    return bad("need at least two classes".into());
                }
                let b: usize = self.factors.iter().map(Factor::cardinality).sum();
                let dims = [self.features, self.classes, b];
                if ranks.iter().zip(dims).any(|(&k, d)| k == 0 || k > d) {
                    return bad(format!("ranks {ranks:?} must lie in 1..=(D, C, B) = {dims:?}"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub train: MultiDomainDataset,
    pub test: MultiDomainDataset,
    /// planted model, taking the distributed descriptor of each domain
    pub truth: FactorizedModel,
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, sd: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| sd * rng.sample::<f64, _>(StandardNormal))
}

fn planted(spec: &SynthSpec, schema: &DomainSchema, rng: &mut ChaCha8Rng) -> FactorizedModel {
    let d = spec.features;
    let b = schema.descriptor_len();
    let sd = 1.0 / (d as f64).sqrt();
    match spec.kind {
        PlantedKind::Additive { effect } => {
            let shared: Vec<f64> = (0..d).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect();
            let mut q = normal_matrix(rng, d, b, sd * effect);
            // the shared part rides on every state column of the first factor,
            // which is active exactly once per descriptor
            for c in 0..spec.factors[0].cardinality() {
                for r in 0..d {
                    q[(r, c)] += shared[r];
                }
            }
            SingleOutputModel::with_fixed_identity(q).into()
        }
        PlantedKind::LowRankTucker { ranks: [kd, kc, kb] } => {
            let s = Tensor3::from_fn([kd, kc, kb], |_, _, _| rng.sample(StandardNormal));
            let u_d = normal_matrix(rng, kd, d, sd);
            let u_c = normal_matrix(rng, kc, spec.classes, 1.0);
            let u_b = normal_matrix(rng, kb, b, 1.0);
            TuckerModel::new(s, u_d, u_c, u_b).expect("consistent shapes").into()
        }
    }
}

fn score_gap(scores: &[f64]) -> f64 {
    if scores.len() == 1 {
        return scores[0].abs();
    }
    let mut top = [f64::NEG_INFINITY; 2];
    for &s in scores {
        if s > top[0] {
            top = [s, top[0]];
        } else if s > top[1] {
            top[1] = s;
        }
    }
    top[0] - top[1]
}

/// Generate train and test sets. Everything is drawn from one stream seeded
/// by `spec.seed`: the planted model first, then each domain in id order
/// (training instances before test instances).
pub fn generate(spec: &SynthSpec) -> Result<SynthOutput> {
    spec.validate()?;
    let schema = Arc::new(DomainSchema::distributed(spec.factors.clone())?);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let truth = planted(spec, &schema, &mut rng);
    let c = spec.classes;
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for dom in 0..schema.domain_count() {
        let z = schema.encode_domain(dom)?.as_slice().to_vec();
        for k in 0..spec.n_train + spec.n_test {
            let mut tries = 0;
            let (x, scores) = loop {
                let x: Vec<f64> = (0..spec.features).map(|_| rng.sample(StandardNormal)).collect();
                let s = truth.scores(&x, &z)?;
                if score_gap(&s) >= spec.margin {
                    break (x, s);
                }
                tries += 1;
                if tries >= MARGIN_RETRIES {
                    return Err(Error::InvalidValue(format!(
                        "margin {} infeasible: {MARGIN_RETRIES} draws in domain {} all fell inside it",
                        spec.margin,
                        schema.domain_name(dom)
                    )));
                }
            };
            let mut label = class_of(&scores);
            if rng.gen::<f64>() < spec.noise {
                // any other class, uniformly
                let shift = rng.gen_range(1..c);
                label = (label + shift) % c;
            }
            let inst = Instance { x, domain: dom, label };
            if k < spec.n_train {
                train.push(inst);
            } else {
                test.push(inst);
            }
        }
    }
    let names: Vec<String> = if c == 2 {
        vec!["neg".into(), "pos".into()]
    } else {
        (0..c).map(|i| format!("c{i}")).collect()
    };
    let note = format!("synthetic seed={} noise={} margin={}", spec.seed, spec.noise, spec.margin);
    let mk = |inst| MultiDomainDataset::new((*schema).clone(), spec.features, names.clone(), inst, note.clone());
    Ok(SynthOutput {
        train: mk(train)?,
        test: mk(test)?,
        truth,
    })
}
