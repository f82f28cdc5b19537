//! Mini-batch SGD on the domain-averaged empirical risk
//! `1/M Σᵢ 1/Nᵢ Σⱼ ℓ(ŷ, y) + Σ λ·reg`.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::MultiDomainDataset;
use crate::error::{Error, Result};
use crate::loss::Loss;
use crate::model::FactorizedModel;
use crate::regularizers::{block_penalty, RegTerm};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Schedule {
    Constant,
    /// multiply the rate by `factor` every `every` epochs
    StepDecay { factor: f64, every: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub schedule: Schedule,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub loss: Loss,
    pub regs: Vec<RegTerm>,
    /// draw a domain uniformly, then an instance uniformly within it
    pub balanced: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            schedule: Schedule::Constant,
            batch_size: 32,
            epochs: 500,
            seed: 0,
            loss: Loss::Hinge,
            regs: Vec::new(),
            balanced: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidValue(m));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be finite and >= 0, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch size must be >= 1".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if let Schedule::StepDecay { factor, every } = self.schedule {
            if !(factor > 0.0 && factor.is_finite()) || every == 0 {
                return bad(format!(
                    "step decay needs factor > 0 and every >= 1, got factor {factor}, every {every}"
                ));
            }
        }
        Ok(())
    }

    /// Learning rate used during `epoch` (0-based).
    pub fn rate_at(&self, epoch: usize) -> f64 {
        match self.schedule {
            Schedule::Constant => self.learning_rate,
            Schedule::StepDecay { factor, every } => {
                self.learning_rate * factor.powi((epoch / every) as i32)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// objective before the first update
    pub initial_objective: f64,
    /// objective after each epoch
    pub objectives: Vec<f64>,
    /// training error rate per domain id after the last epoch
    pub domain_errors: BTreeMap<usize, f64>,
    pub iterations: usize,
    pub wall_clock: Duration,
}

/// Overall and per-domain error rates of a model on a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSummary {
    pub overall: f64,
    pub per_domain: BTreeMap<usize, f64>,
}

pub fn evaluate(model: &FactorizedModel, ds: &MultiDomainDataset) -> Result<ErrorSummary> {
    check_dims(model, ds)?;
    let zs = descriptors(ds);
    let mut per: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    let mut wrong = 0;
    for inst in ds.iter() {
        let miss = (model.predict_class(&inst.x, &zs[&inst.domain])? != inst.label) as usize;
        wrong += miss;
        let e = per.entry(inst.domain).or_default();
        e.0 += miss;
        e.1 += 1;
    }
    Ok(ErrorSummary {
        overall: if ds.is_empty() { 0.0 } else { wrong as f64 / ds.len() as f64 },
        per_domain: per
            .into_iter()
            .map(|(d, (w, n))| (d, w as f64 / n as f64))
            .collect(),
    })
}

fn descriptors(ds: &MultiDomainDataset) -> BTreeMap<usize, Vec<f64>> {
    ds.domains().into_iter().map(|d| (d, ds.descriptor(d))).collect()
}

fn check_dims(model: &FactorizedModel, ds: &MultiDomainDataset) -> Result<()> {
    if model.feature_dim() != ds.feature_dim() || model.descriptor_dim() != ds.descriptor_dim() {
        return Err(Error::Shape(format!(
            "model expects D = {}, B = {} but the dataset has D = {}, B = {}",
            model.feature_dim(),
            model.descriptor_dim(),
            ds.feature_dim(),
            ds.descriptor_dim()
        )));
    }
    Ok(())
}

/// Regulariser value, optionally accumulating subgradients of trainable
/// blocks into `grads`.
pub(crate) fn reg_value_grad(
    model: &FactorizedModel,
    regs: &[RegTerm],
    mut grads: Option<&mut [Vec<f64>]>,
) -> Result<f64> {
    let specs = model.block_specs();
    let data = model.block_data();
    let mut total = 0.0;
    for term in regs {
        let Some(b) = specs.iter().position(|s| s.id == term.target) else {
            return Err(Error::InvalidValue(format!(
                "regulariser targets block {} which a {} model does not have",
                term.target,
                model.kind()
            )));
        };
        let (v, g) = block_penalty(term.kind, specs[b].shape, data[b], term.weight)?;
        total += v;
        if let Some(grads) = grads.as_deref_mut() {
            if !specs[b].frozen {
                for (acc, gi) in grads[b].iter_mut().zip(g) {
                    *acc += gi;
                }
            }
        }
    }
    Ok(total)
}

/// Domain-averaged empirical risk plus regularisers.
pub fn objective(model: &FactorizedModel, ds: &MultiDomainDataset, cfg: &TrainConfig) -> Result<f64> {
    check_dims(model, ds)?;
    let zs = descriptors(ds);
    let mut per: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for inst in ds.iter() {
        let s = model.scores(&inst.x, &zs[&inst.domain])?;
        let (l, _) = cfg.loss.value_grad(&s, inst.label)?;
        let e = per.entry(inst.domain).or_default();
        e.0 += l;
        e.1 += 1;
    }
    let m = per.len().max(1) as f64;
    let risk: f64 = per.values().map(|(s, n)| s / *n as f64).sum::<f64>() / m;
    Ok(risk + reg_value_grad(model, &cfg.regs, None)?)
}

/// Batches (positions into the dataset view) for every epoch, drawn from the
/// configured seed.
pub fn sample_schedule(ds: &MultiDomainDataset, cfg: &TrainConfig) -> Vec<Vec<Vec<usize>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = ds.len();
    let per_epoch = n.div_ceil(cfg.batch_size);
    let domain_rows: Vec<Vec<usize>> = ds.domain_rows().into_values().collect();
    (0..cfg.epochs)
        .map(|_| {
            if cfg.balanced {
                (0..per_epoch)
                    .map(|_| {
                        (0..cfg.batch_size)
                            .map(|_| {
                                let rows = &domain_rows[rng.gen_range(0..domain_rows.len())];
                                rows[rng.gen_range(0..rows.len())]
                            })
                            .collect()
                    })
                    .collect()
            } else {
                let mut order: Vec<usize> = (0..n).collect();
                order.shuffle(&mut rng);
                order.chunks(cfg.batch_size).map(<[usize]>::to_vec).collect()
            }
        })
        .collect()
}

/// Train with batches drawn from `cfg.seed`.
pub fn fit(
    model: FactorizedModel,
    ds: &MultiDomainDataset,
    cfg: &TrainConfig,
) -> Result<(FactorizedModel, TrainReport)> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::Dataset("cannot train on an empty dataset".into()));
    }
    let schedule = sample_schedule(ds, cfg);
    fit_with_schedule(model, ds, cfg, &schedule)
}

/// Train on an explicit batch sequence (`schedule[epoch][batch]` lists
/// dataset positions). The number of epochs is `schedule.len()`; the
/// learning-rate schedule follows `cfg`.
pub fn fit_with_schedule(
    mut model: FactorizedModel,
    ds: &MultiDomainDataset,
    cfg: &TrainConfig,
    schedule: &[Vec<Vec<usize>>],
) -> Result<(FactorizedModel, TrainReport)> {
    let start = Instant::now();
    cfg.validate()?;
    check_dims(&model, ds)?;
    if ds.is_empty() {
        return Err(Error::Dataset("cannot train on an empty dataset".into()));
    }
    cfg.loss.check_compatible(model.output_dim(), ds.num_classes())?;

    let zs = descriptors(ds);
    // importance weight N / (M·Nᵢ) turns a uniform draw over instances into
    // an unbiased estimate of the domain-averaged risk
    let counts = ds.domain_rows();
    let m = counts.len() as f64;
    let n = ds.len() as f64;
    let weight: BTreeMap<usize, f64> = counts
        .iter()
        .map(|(&d, rows)| {
            let w = if cfg.balanced { 1.0 } else { n / (m * rows.len() as f64) };
            (d, w)
        })
        .collect();
    let frozen: Vec<bool> = model.block_specs().iter().map(|s| s.frozen).collect();

    let initial = objective(&model, ds, cfg)?;
    if !initial.is_finite() {
        return Err(Error::Diverged {
            epoch: 0,
            reason: format!("initial objective is {initial}"),
        });
    }
    let mut objectives = Vec::with_capacity(schedule.len());
    let mut iterations = 0;
    for (epoch, batches) in schedule.iter().enumerate() {
        let eta = cfg.rate_at(epoch);
        for batch in batches {
            if batch.is_empty() {
                continue;
            }
            let mut grads = model.zero_grads();
            let scale = 1.0 / batch.len() as f64;
            for &pos in batch {
                let inst = ds.get(pos);
                let z = &zs[&inst.domain];
                let s = model.scores(&inst.x, z)?;
                let (_, mut dy) = cfg.loss.value_grad(&s, inst.label)?;
                let w = weight[&inst.domain] * scale;
                dy.iter_mut().for_each(|g| *g *= w);
                model.backward(&inst.x, z, &dy, &mut grads)?;
            }
            reg_value_grad(&model, &cfg.regs, Some(&mut grads))?;
            for ((block, g), &fz) in model.block_data_mut().into_iter().zip(&grads).zip(&frozen) {
                if fz {
                    continue;
                }
                for (p, gi) in block.iter_mut().zip(g) {
                    *p -= eta * gi;
                }
            }
            iterations += 1;
        }
        let obj = objective(&model, ds, cfg)?;
        if !obj.is_finite() {
            return Err(Error::Diverged {
                epoch: epoch + 1,
                reason: format!("objective became {obj}"),
            });
        }
        if initial > 0.0 && obj > 1e6 * initial {
            return Err(Error::Diverged {
                epoch: epoch + 1,
                reason: format!("objective {obj:.3e} exceeds 1e6 x initial {initial:.3e}"),
            });
        }
        objectives.push(obj);
    }
    let domain_errors = evaluate(&model, ds)?.per_domain;
    Ok((
        model,
        TrainReport {
            initial_objective: initial,
            objectives,
            domain_errors,
            iterations,
            wall_clock: start.elapsed(),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Instance;
    use crate::descriptors::{DomainSchema, Factor};
    use crate::regularizers::RegKind;
    use crate::single::SingleOutputModel;
    use crate::model::BlockId;
    use crate::tensor::Matrix;
    use rand_distr::StandardNormal;

    fn separable(seed: u64, per_domain: usize, d: usize) -> MultiDomainDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let schema = DomainSchema::one_hot(2).unwrap();
        let ws: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let mut inst = Vec::new();
        for (dom, w) in ws.iter().enumerate() {
            let mut k = 0;
            while k < per_domain {
                let x: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                let s: f64 = x.iter().zip(w).map(|(a, b)| a * b).sum();
                if s.abs() < 0.5 {
                    continue;
                }
                inst.push(Instance { x, domain: dom, label: (s > 0.0) as usize });
                k += 1;
            }
        }
        MultiDomainDataset::new(schema, d, vec!["neg".into(), "pos".into()], inst, "separable").unwrap()
    }

    fn fixed_p_model(d: usize, b: usize, seed: u64) -> FactorizedModel {
        SingleOutputModel::init_fixed_identity(d, b, &mut ChaCha8Rng::seed_from_u64(seed)).into()
    }

    #[test]
    fn zero_rate_leaves_parameters() {
        let ds = separable(1, 10, 4);
        let model = fixed_p_model(4, 2, 2);
        let cfg = TrainConfig { learning_rate: 0.0, epochs: 3, batch_size: 4, ..Default::default() };
        let (trained, rep) = fit(model.clone(), &ds, &cfg).unwrap();
        assert_eq!(trained, model);
        assert!(rep.objectives.iter().all(|&o| o == rep.initial_objective));
        assert_eq!(rep.objectives.len(), 3);
        assert_eq!(rep.iterations, 3 * 5);
    }

    #[test]
    fn separable_data_reaches_zero_training_error() {
        let ds = separable(5, 30, 5);
        let cfg = TrainConfig { learning_rate: 0.05, epochs: 200, batch_size: 8, seed: 3, ..Default::default() };
        let (_, rep) = fit(fixed_p_model(5, 2, 4), &ds, &cfg).unwrap();
        assert!(rep.domain_errors.values().all(|&e| e == 0.0), "{:?}", rep.domain_errors);
    }

    #[test]
    fn seeded_runs_are_bitwise_identical() {
        let ds = separable(8, 20, 4);
        let cfg = TrainConfig { epochs: 10, batch_size: 5, seed: 11, balanced: true, ..Default::default() };
        let a = fit(fixed_p_model(4, 2, 1), &ds, &cfg).unwrap();
        let b = fit(fixed_p_model(4, 2, 1), &ds, &cfg).unwrap();
        assert_eq!(a.0, b.0);
        let bits = |r: &TrainReport| r.objectives.iter().map(|o| o.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.1), bits(&b.1));
    }

    #[test]
    fn first_epoch_decreases_objective() {
        let ds = separable(21, 50, 6);
        let cfg = TrainConfig { learning_rate: 1e-3, epochs: 1, batch_size: 4, ..Default::default() };
        let (_, rep) = fit(fixed_p_model(6, 2, 9), &ds, &cfg).unwrap();
        assert!(rep.objectives[0] < rep.initial_objective);
    }

    #[test]
    fn frozen_blocks_stay_put() {
        let ds = separable(2, 10, 3);
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 3,
            regs: vec![RegTerm::new(BlockId::P, RegKind::Frobenius, 0.1).unwrap()],
            ..Default::default()
        };
        let (trained, _) = fit(fixed_p_model(3, 2, 0), &ds, &cfg).unwrap();
        assert_eq!(trained.block_matrix(BlockId::P).unwrap(), Matrix::identity(3));
    }

    #[test]
    fn balanced_sampling_weights_domains_equally() {
        // domain 0 has 90 rows, domain 1 has 10
        let full = separable(4, 90, 3);
        let keep: Vec<usize> = (0..full.len()).filter(|&p| full.get(p).domain == 0 || p < 100).collect();
        let ds = full.subset(&keep);
        let cfg = TrainConfig { batch_size: 10, epochs: 200, balanced: true, ..Default::default() };
        let sched = sample_schedule(&ds, &cfg);
        let (mut c0, mut c1) = (0usize, 0usize);
        for p in sched.iter().flatten().flatten() {
            if ds.get(*p).domain == 0 { c0 += 1 } else { c1 += 1 }
        }
        let frac = c0 as f64 / (c0 + c1) as f64;
        assert!((frac - 0.5).abs() < 0.02, "{frac}");
    }

    #[test]
    fn divergence_names_epoch() {
        let ds = separable(3, 10, 3);
        let model: FactorizedModel = SingleOutputModel::init(3, 2, 2, &mut ChaCha8Rng::seed_from_u64(1)).into();
        let cfg = TrainConfig { learning_rate: 1e6, epochs: 50, batch_size: 1, ..Default::default() };
        match fit(model, &ds, &cfg) {
            Err(Error::Diverged { epoch, .. }) => assert!(epoch >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn mismatched_dims_rejected() {
        let ds = separable(3, 5, 3);
        assert!(matches!(fit(fixed_p_model(4, 2, 0), &ds, &TrainConfig::default()), Err(Error::Shape(_))));
        let cfg = TrainConfig { loss: Loss::CrossEntropy, ..Default::default() };
        assert!(fit(fixed_p_model(3, 2, 0), &ds, &cfg).is_err());
        let cfg = TrainConfig { batch_size: 0, ..Default::default() };
        assert!(fit(fixed_p_model(3, 2, 0), &ds, &cfg).is_err());
    }

    #[test]
    fn step_decay_rates() {
        let cfg = TrainConfig {
            learning_rate: 1.0,
            schedule: Schedule::StepDecay { factor: 0.5, every: 2 },
            ..Default::default()
        };
        assert_eq!((cfg.rate_at(0), cfg.rate_at(1), cfg.rate_at(2), cfg.rate_at(5)), (1.0, 1.0, 0.5, 0.25));
    }

    #[test]
    fn matches_full_batch_descent_oracle() {
        // single domain, one-hot z, identity P, hinge + Frobenius on Q
        let full = separable(17, 20, 5);
        let rows: Vec<usize> = (0..full.len()).filter(|&p| full.get(p).domain == 0).collect();
        let ds = full.subset(&rows);
        let schema = DomainSchema::distributed(vec![Factor::new("only", &["a"])]).unwrap();
        let inst: Vec<Instance> = ds.iter().map(|i| Instance { domain: 0, ..i.clone() }).collect();
        let ds = MultiDomainDataset::new(schema, 5, vec!["n".into(), "p".into()], inst, "").unwrap();
        let lambda = 0.05;
        let cfg = TrainConfig {
            learning_rate: 0.05,
            schedule: Schedule::StepDecay { factor: 0.5, every: 400 },
            batch_size: 20,
            epochs: 6000,
            regs: vec![RegTerm::new(BlockId::Q, RegKind::Frobenius, lambda).unwrap()],
            ..Default::default()
        };
        let (_, rep) = fit(fixed_p_model(5, 1, 0), &ds, &cfg).unwrap();

        // oracle: plain loops, subgradient descent with a decaying step run
        // until the step is below 1e-10, keeping the best objective seen
        let f = |w: &[f64]| {
            let mut s = 0.0;
            for i in ds.iter() {
                let y = if i.label == 1 { 1.0 } else { -1.0 };
                let m: f64 = i.x.iter().zip(w).map(|(a, b)| a * b).sum();
                s += (1.0 - y * m).max(0.0);
            }
            s / ds.len() as f64 + lambda * w.iter().map(|v| v * v).sum::<f64>()
        };
        let mut w = vec![0.0; 5];
        let mut best = f(&w);
        let mut t = 1.0;
        loop {
            let step = 0.5 / t;
            if step < 1e-10 {
                break;
            }
            let mut g: Vec<f64> = w.iter().map(|v| 2.0 * lambda * v).collect();
            for i in ds.iter() {
                let y = if i.label == 1 { 1.0 } else { -1.0 };
                let m: f64 = i.x.iter().zip(&w).map(|(a, b)| a * b).sum();
                if y * m < 1.0 {
                    for (gk, xk) in g.iter_mut().zip(&i.x) {
                        *gk -= y * xk / ds.len() as f64;
                    }
                }
            }
            for (wk, gk) in w.iter_mut().zip(&g) {
                *wk -= step * gk;
            }
            best = best.min(f(&w));
            t *= 1.0005;
        }
        let ours = *rep.objectives.last().unwrap();
        assert!(ours <= best * 1.01, "sgd {ours} vs oracle {best}");
    }
}
