//! Method fitting and evaluation protocols.

use std::collections::BTreeMap;

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use mdmtl::dataset::{baselines_view, k_folds, leave_one_domain_out, preprocess_pair, split, BaselineMode, MultiDomainDataset};
use mdmtl::descriptors::Encoding;
use mdmtl::loss::Loss;
use mdmtl::model::{class_of, FactorizedModel, FullTensorModel};
use mdmtl::multi::{CpModel, TtModel, TuckerModel};
use mdmtl::regularizers::{RegKind, RegTerm};
use mdmtl::single::{default_rank, SingleOutputModel};
use mdmtl::tensor::Tensor3;
use mdmtl::trainer::{fit, TrainConfig};
use mdmtl::zero_shot::zsda_weight_matrix;

use crate::config::{ExperimentConfig, Method, RankChoice};
use crate::error::CliError;
use crate::report::{MethodReport, MetricsReport, RepeatRecord};

/// How a method sees domain identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum View {
    /// every instance gets `z = [1]`
    Constant,
    Encoded(Encoding),
}

impl View {
    pub fn apply(self, ds: &MultiDomainDataset) -> MultiDomainDataset {
        match self {
            View::Constant => baselines_view(ds, BaselineMode::Aggregation).remove(0),
            View::Encoded(e) => ds.with_encoding(e),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Fitted {
    PerDomain(BTreeMap<usize, FactorizedModel>),
    Joint { model: FactorizedModel, view: View },
}

/// Hyperparameters chosen per fit (by default or by grid search).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MethodParams {
    pub weight_decay: f64,
    pub rank: RankChoice,
}

impl MethodParams {
    pub fn describe(&self) -> String {
        format!("weight_decay={:?};rank={}", self.weight_decay, self.rank.describe())
    }
}

fn distributed() -> Encoding {
    Encoding::Distributed { constant: false }
}

pub fn method_view(method: Method) -> Option<View> {
    match method {
        Method::Sdl => None,
        Method::Aggregation => Some(View::Constant),
        Method::Md1 => Some(View::Encoded(Encoding::OneHot)),
        Method::Md2 => Some(View::Encoded(Encoding::OneHotConst)),
        Method::Parametrised | Method::Cp | Method::Tucker | Method::Tt => Some(View::Encoded(distributed())),
    }
}

/// Check method/data compatibility and rank bounds before any training.
pub fn validate_methods(cfg: &ExperimentConfig, ds: &MultiDomainDataset) -> Result<(), CliError> {
    let (d, c) = (ds.feature_dim(), ds.num_classes());
    let b = ds.schema().with_encoding(distributed()).descriptor_len();
    for &m in &cfg.methods {
        if m.single_output() && c != 2 {
            return Err(CliError::config(
                "model.methods",
                format!("{} is a single-output method and needs 2 classes, data has {c}", m.tag()),
            ));
        }
        if m.is_tensor() && c < 3 {
            return Err(CliError::config(
                "model.methods",
                format!("{} is a multi-output method; use md1/md2/parametrised for binary data", m.tag()),
            ));
        }
        let [kd, kc, kb] = cfg.tensor_ranks;
        let bad = match m {
            Method::Tucker => kd > d || kc > c || kb > b,
            Method::Tt => kd > d || kb > b,
            _ => false,
        };
        if bad {
            return Err(CliError::config(
                "model.tensor_ranks",
                format!("ranks {:?} exceed the dimensions (D, C, B) = ({d}, {c}, {b})", cfg.tensor_ranks),
            ));
        }
        if let (true, RankChoice::Fixed(k)) = (m.single_output(), cfg.rank) {
            if k > d {
                return Err(CliError::config("model.rank", format!("rank {k} exceeds D = {d}")));
            }
        }
    }
    Ok(())
}

fn init_model(method: Method, ds: &MultiDomainDataset, cfg: &ExperimentConfig, params: MethodParams, rng: &mut ChaCha8Rng) -> FactorizedModel {
    let (d, c, b) = (ds.feature_dim(), ds.num_classes(), ds.descriptor_dim());
    let [kd, kc, kb] = cfg.tensor_ranks;
    match method {
        Method::Sdl | Method::Aggregation if c == 2 => SingleOutputModel::init_fixed_identity(d, b, rng).into(),
        Method::Sdl | Method::Aggregation => {
            let bound = 1.0 / (d as f64).sqrt();
            FullTensorModel { w: Tensor3::from_fn([d, c, b], |_, _, _| rand::Rng::gen_range(rng, -bound..=bound)) }.into()
        }
        Method::Md1 | Method::Md2 | Method::Parametrised => {
            let k = match params.rank {
                RankChoice::Identity => return SingleOutputModel::init_fixed_identity(d, b, rng).into(),
                RankChoice::Auto => default_rank(d),
                RankChoice::Fixed(k) => k,
            };
            SingleOutputModel::init(d, k.min(d), b, rng).into()
        }
        Method::Cp => CpModel::init(d, c, b, kd, rng).into(),
        Method::Tucker => TuckerModel::init(d, c, b, [kd, kc, kb], rng).into(),
        Method::Tt => TtModel::init(d, c, b, [kd, kb], rng).into(),
    }
}

fn train_config(model: &FactorizedModel, cfg: &ExperimentConfig, params: MethodParams, seed: u64) -> TrainConfig {
    let mut regs = Vec::new();
    let specs = model.block_specs();
    if params.weight_decay > 0.0 {
        for s in specs.iter().filter(|s| !s.frozen) {
            regs.push(RegTerm { target: s.id, kind: RegKind::Frobenius, weight: params.weight_decay });
        }
    }
    // explicit terms apply to the methods that have the targeted block
    regs.extend(cfg.train.regs.iter().filter(|r| specs.iter().any(|s| s.id == r.target)).copied());
    TrainConfig { seed, loss: Loss::for_outputs(model.output_dim()), regs, ..cfg.train.clone() }
}

fn fit_one(method: Method, ds: &MultiDomainDataset, cfg: &ExperimentConfig, params: MethodParams, seed: u64) -> Result<FactorizedModel, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = init_model(method, ds, cfg, params, &mut rng);
    let tc = train_config(&model, cfg, params, seed);
    Ok(fit(model, ds, &tc)?.0)
}

pub fn fit_method(method: Method, train: &MultiDomainDataset, cfg: &ExperimentConfig, params: MethodParams, seed: u64) -> Result<Fitted, CliError> {
    match method_view(method) {
        None => {
            let views = baselines_view(train, BaselineMode::Sdl);
            let mut models = BTreeMap::new();
            for (dom, v) in train.domains().into_iter().zip(views) {
                models.insert(dom, fit_one(method, &v, cfg, params, seed)?);
            }
            Ok(Fitted::PerDomain(models))
        }
        Some(view) => Ok(Fitted::Joint { model: fit_one(method, &view.apply(train), cfg, params, seed)?, view }),
    }
}

/// Predicted class of every instance of `test`, in order.
pub fn predict(fitted: &Fitted, test: &MultiDomainDataset) -> Result<Vec<usize>, CliError> {
    match fitted {
        Fitted::PerDomain(models) => test
            .iter()
            .map(|i| {
                let m = models.get(&i.domain).ok_or_else(|| {
                    mdmtl::Error::Dataset(format!("no per-domain model for domain {}", test.domain_name(i.domain)))
                })?;
                Ok(m.predict_class(&i.x, &[1.0])?)
            })
            .collect(),
        Fitted::Joint { model, view } => {
            let viewed = view.apply(test);
            let zs: BTreeMap<usize, Vec<f64>> = viewed.domains().into_iter().map(|d| (d, viewed.descriptor(d))).collect();
            viewed.iter().map(|i| Ok(model.predict_class(&i.x, &zs[&i.domain])?)).collect()
        }
    }
}

/// Overall error and error per domain name.
pub fn error_rates(test: &MultiDomainDataset, predicted: &[usize]) -> (f64, Vec<(String, f64)>) {
    let mut per: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    let mut wrong = 0;
    for (i, &p) in test.iter().zip(predicted) {
        let miss = (p != i.label) as usize;
        wrong += miss;
        let e = per.entry(i.domain).or_default();
        e.0 += miss;
        e.1 += 1;
    }
    let overall = if test.is_empty() { 0.0 } else { wrong as f64 / test.len() as f64 };
    let per = per
        .into_iter()
        .map(|(d, (w, n))| (test.domain_name(d), w as f64 / n as f64))
        .collect();
    (overall, per)
}

fn default_params(cfg: &ExperimentConfig) -> MethodParams {
    MethodParams { weight_decay: cfg.weight_decay, rank: cfg.rank }
}

/// Grid search over weight decay (and rank for low-rank methods) by k-fold
/// cross-validation on `train`, minimising mean validation error. Ties keep
/// the earlier candidate.
pub fn select_params(method: Method, train: &MultiDomainDataset, cfg: &ExperimentConfig, seed: u64) -> Result<MethodParams, CliError> {
    if cfg.cv.folds < 2 {
        return Ok(default_params(cfg));
    }
    let ranks: Vec<RankChoice> = if method.single_output() && !cfg.cv.ranks.is_empty() {
        cfg.cv.ranks.iter().map(|&k| RankChoice::Fixed(k)).collect()
    } else {
        vec![cfg.rank]
    };
    let decays = if cfg.cv.weight_decays.is_empty() { vec![cfg.weight_decay] } else { cfg.cv.weight_decays.clone() };
    let folds = k_folds(train, cfg.cv.folds, seed)?;
    let mut best: Option<(f64, MethodParams)> = None;
    for &rank in &ranks {
        for &weight_decay in &decays {
            let params = MethodParams { weight_decay, rank };
            let mut total = 0.0;
            for (tr, va) in &folds {
                let fitted = fit_method(method, tr, cfg, params, seed)?;
                total += error_rates(va, &predict(&fitted, va)?).0;
            }
            let mean = total / folds.len() as f64;
            if best.is_none_or(|(b, _)| mean < b) {
                best = Some((mean, params));
            }
        }
    }
    Ok(best.expect("at least one candidate").1)
}

/// Apply optional bias augmentation before any split.
pub fn prepare_pool(pool: MultiDomainDataset, cfg: &ExperimentConfig) -> Result<MultiDomainDataset, CliError> {
    Ok(if cfg.bias { pool.with_bias_feature()? } else { pool })
}

fn repeat_seed(cfg: &ExperimentConfig, r: usize) -> u64 {
    cfg.train.seed.wrapping_add(r as u64)
}

/// Random-split protocol: for each repeat, split the pool, fit every method
/// on the training part and score it on the test part.
/// Returns the report and the repeat-0 fitted models.
pub fn run_split(cfg: &ExperimentConfig, pool: &MultiDomainDataset) -> Result<(MetricsReport, Vec<(Method, Fitted)>), CliError> {
    let crate::config::Protocol::FixedSplit { train_fraction, repeats } = cfg.protocol else {
        return Err(CliError::config("eval.protocol", "train uses the split protocol; run the zsda subcommand for leave-one-domain-out"));
    };
    validate_methods(cfg, pool)?;
    let jobs: Vec<(usize, usize)> = (0..repeats).flat_map(|r| (0..cfg.methods.len()).map(move |m| (r, m))).collect();
    let results: Vec<Result<(RepeatRecord, Fitted), CliError>> = jobs
        .par_iter()
        .map(|&(r, mi)| {
            let method = cfg.methods[mi];
            let seed = repeat_seed(cfg, r);
            let (train, test) = split(pool, train_fraction, seed)?;
            let (train, test) = if cfg.preprocess { preprocess_pair(&train, &test)? } else { (train, test) };
            let params = select_params(method, &train, cfg, seed)?;
            let fitted = fit_method(method, &train, cfg, params, seed)?;
            let (error, per_domain) = error_rates(&test, &predict(&fitted, &test)?);
            info!("{} repeat {r}: error {error:.4}", method.tag());
            Ok((RepeatRecord { repeat: r, seed, error, per_domain, params: params.describe() }, fitted))
        })
        .collect();
    let mut per_method: Vec<Vec<RepeatRecord>> = vec![Vec::new(); cfg.methods.len()];
    let mut first = Vec::new();
    for (&(r, mi), res) in jobs.iter().zip(results) {
        let (rec, fitted) = res?;
        if r == 0 {
            first.push((cfg.methods[mi], fitted));
        }
        per_method[mi].push(rec);
    }
    let methods = cfg.methods.iter().zip(per_method).map(|(m, recs)| MethodReport::new(m.tag(), recs)).collect();
    let seeds = (0..repeats).map(|r| repeat_seed(cfg, r)).collect();
    Ok((MetricsReport::new("split", methods, cfg, seeds), first))
}

/// Leave-one-domain-out zero-shot adaptation: for every held-out domain,
/// synthesise its model from its descriptor (`zsda`) and compare with the
/// model trained on the pooled remaining domains (`direct`).
pub fn run_zsda(cfg: &ExperimentConfig, pool: &MultiDomainDataset) -> Result<MetricsReport, CliError> {
    if !matches!(pool.schema().encoding(), Encoding::Distributed { .. }) {
        return Err(CliError::Core(mdmtl::Error::Descriptor(format!(
            "zero-shot domain adaptation needs a distributed descriptor schema; this dataset uses {}",
            pool.schema().encoding()
        ))));
    }
    let domains = pool.domains();
    if domains.len() < 2 {
        return Err(CliError::Core(mdmtl::Error::Dataset("zero-shot adaptation needs at least two domains".into())));
    }
    let synth_method = if pool.num_classes() == 2 { Method::Parametrised } else { Method::Tucker };
    let mut probe = cfg.clone();
    probe.methods = vec![synth_method, Method::Aggregation];
    validate_methods(&probe, pool)?;
    let repeats = cfg.protocol.repeats();
    let jobs: Vec<(usize, usize)> = (0..repeats).flat_map(|r| domains.iter().map(move |&h| (r, h))).collect();
    let results: Vec<Result<[(f64, String); 2], CliError>> = jobs
        .par_iter()
        .map(|&(r, held)| {
            let seed = repeat_seed(cfg, r);
            let (train, test) = leave_one_domain_out(pool, held)?;
            let (train, test) = if cfg.preprocess { preprocess_pair(&train, &test)? } else { (train, test) };
            // synthesised model
            let p = select_params(synth_method, &train, cfg, seed)?;
            let Fitted::Joint { model, .. } = fit_method(synth_method, &train, cfg, p, seed)? else {
                unreachable!("joint method")
            };
            let schema = test.schema();
            let w = zsda_weight_matrix(&model, schema, &test.descriptor(held))?;
            let pred: Vec<usize> = test
                .iter()
                .map(|i| {
                    let scores: Vec<f64> = (0..w.cols()).map(|c| (0..w.rows()).map(|d| i.x[d] * w[(d, c)]).sum()).collect();
                    class_of(&scores)
                })
                .collect();
            let zsda = error_rates(&test, &pred).0;
            // pooled model applied as is
            let q = select_params(Method::Aggregation, &train, cfg, seed)?;
            let direct_fit = fit_method(Method::Aggregation, &train, cfg, q, seed)?;
            let direct = error_rates(&test, &predict(&direct_fit, &test)?).0;
            info!("held out {} repeat {r}: zsda {zsda:.4}, direct {direct:.4}", pool.domain_name(held));
            Ok([(zsda, p.describe()), (direct, q.describe())])
        })
        .collect();
    let mut recs: [Vec<RepeatRecord>; 2] = [Vec::new(), Vec::new()];
    let mut rows: [BTreeMap<usize, Vec<(String, f64)>>; 2] = [BTreeMap::new(), BTreeMap::new()];
    let mut params: [BTreeMap<usize, String>; 2] = [BTreeMap::new(), BTreeMap::new()];
    for (&(r, held), res) in jobs.iter().zip(results) {
        for (k, (err, p)) in res?.into_iter().enumerate() {
            rows[k].entry(r).or_default().push((pool.domain_name(held), err));
            params[k].entry(r).or_insert(p);
        }
    }
    for k in 0..2 {
        for r in 0..repeats {
            let per_domain = rows[k].remove(&r).unwrap_or_default();
            let error = per_domain.iter().map(|(_, e)| e).sum::<f64>() / per_domain.len() as f64;
            recs[k].push(RepeatRecord { repeat: r, seed: repeat_seed(cfg, r), error, per_domain, params: params[k][&r].clone() });
        }
    }
    let [zs, di] = recs;
    let methods = vec![MethodReport::new("zsda", zs), MethodReport::new("direct", di)];
    let seeds = (0..repeats).map(|r| repeat_seed(cfg, r)).collect();
    Ok(MetricsReport::new("zsda", methods, cfg, seeds))
}
