//! Multi-domain datasets and the views used by the experiment protocols.
//!
//! A dataset is an immutable instance store plus a list of row indices, so
//! splits, folds and per-domain views share storage.

use std::collections::BTreeMap;
use std::sync::Arc;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::descriptors::{DomainSchema, Encoding};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub x: Vec<f64>,
    pub domain: usize,
    pub label: usize,
}

#[derive(Debug, Clone)]
pub struct MultiDomainDataset {
    schema: Arc<DomainSchema>,
    feature_dim: usize,
    class_names: Arc<Vec<String>>,
    store: Arc<Vec<Instance>>,
    rows: Vec<usize>,
    note: String,
}

impl PartialEq for MultiDomainDataset {
    fn eq(&self, other: &Self) -> bool {
        self.schema == other.schema
            && self.feature_dim == other.feature_dim
            && self.class_names == other.class_names
            && self.note == other.note
            && self.len() == other.len()
            && self.iter().zip(other.iter()).all(|(a, b)| a == b)
    }
}

impl MultiDomainDataset {
    pub fn new(
        schema: DomainSchema,
        feature_dim: usize,
        class_names: Vec<String>,
        instances: Vec<Instance>,
        note: impl Into<String>,
    ) -> Result<Self> {
        if feature_dim == 0 {
            return Err(Error::Dataset("feature dimension must be >= 1".into()));
        }
        if class_names.len() < 2 {
            return Err(Error::Dataset("need at least two classes".into()));
        }
        let m = schema.domain_count();
        for (i, inst) in instances.iter().enumerate() {
            if inst.x.len() != feature_dim {
                return Err(Error::Dataset(format!(
                    "instance {i} has {} features, expected {feature_dim}",
                    inst.x.len()
                )));
            }
            if let Some(j) = inst.x.iter().position(|v| !v.is_finite()) {
                return Err(Error::Dataset(format!("instance {i} feature {j} is not finite")));
            }
            if inst.domain >= m {
                return Err(Error::Dataset(format!(
                    "instance {i} has domain id {} but the schema has {m} domains",
                    inst.domain
                )));
            }
            if inst.label >= class_names.len() {
                return Err(Error::Dataset(format!(
                    "instance {i} has label {} but there are {} classes",
                    inst.label,
                    class_names.len()
                )));
            }
        }
        let rows = (0..instances.len()).collect();
        Ok(MultiDomainDataset {
            schema: Arc::new(schema),
            feature_dim,
            class_names: Arc::new(class_names),
            store: Arc::new(instances),
            rows,
            note: note.into(),
        })
    }

    fn view(&self, rows: Vec<usize>) -> Self {
        MultiDomainDataset {
            schema: Arc::clone(&self.schema),
            feature_dim: self.feature_dim,
            class_names: Arc::clone(&self.class_names),
            store: Arc::clone(&self.store),
            rows,
            note: self.note.clone(),
        }
    }

    pub fn schema(&self) -> &Arc<DomainSchema> {
        &self.schema
    }

    /// `D`
    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// `B` under the current encoding.
    pub fn descriptor_dim(&self) -> usize {
        self.schema.descriptor_len()
    }

    /// `C`
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn note(&self) -> &str {
        &self.note
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = note.into();
        self
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, i: usize) -> &Instance {
        &self.store[self.rows[i]]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Instance> + '_ {
        self.rows.iter().map(move |&r| &self.store[r])
    }

    /// Descriptor vector of a domain under the current encoding.
    pub fn descriptor(&self, domain: usize) -> Vec<f64> {
        self.schema
            .encode_domain(domain)
            .expect("domain ids validated at construction")
            .as_slice()
            .to_vec()
    }

    /// Domain ids that have at least one instance, ascending.
    pub fn domains(&self) -> Vec<usize> {
        self.domain_rows().into_keys().collect()
    }

    /// Positions (into this view) of the instances of each domain.
    pub fn domain_rows(&self) -> BTreeMap<usize, Vec<usize>> {
        let mut map: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (pos, inst) in self.iter().enumerate() {
            map.entry(inst.domain).or_default().push(pos);
        }
        map
    }

    pub fn domain_name(&self, domain: usize) -> String {
        self.schema.domain_name(domain)
    }

    /// Same instances, descriptors produced with a different encoding.
    pub fn with_encoding(&self, encoding: Encoding) -> Self {
        let mut v = self.view(self.rows.clone());
        v.schema = Arc::new(self.schema.with_encoding(encoding));
        v
    }

    /// View over a subset of this view's positions.
    pub fn subset(&self, positions: &[usize]) -> Self {
        self.view(positions.iter().map(|&p| self.rows[p]).collect())
    }

    /// Instances of one domain.
    pub fn domain_view(&self, domain: usize) -> Self {
        let rows = self
            .rows
            .iter()
            .copied()
            .filter(|&r| self.store[r].domain == domain)
            .collect();
        self.view(rows)
    }

    /// Materialise the view with a feature transform applied.
    pub fn map_features(&self, mut f: impl FnMut(&[f64]) -> Vec<f64>) -> Result<Self> {
        let instances: Vec<Instance> = self
            .iter()
            .map(|i| Instance {
                x: f(&i.x),
                domain: i.domain,
                label: i.label,
            })
            .collect();
        let d = instances.first().map_or(self.feature_dim, |i| i.x.len());
        MultiDomainDataset::new(
            (*self.schema).clone(),
            d,
            (*self.class_names).clone(),
            instances,
            self.note.clone(),
        )
    }

    /// Append a constant-1 feature (opt-in bias term).
    pub fn with_bias_feature(&self) -> Result<Self> {
        self.map_features(|x| {
            let mut v = x.to_vec();
            v.push(1.0);
            v
        })
    }

    // stratum key: (domain, label)
    fn strata(&self) -> BTreeMap<(usize, usize), Vec<usize>> {
        let mut map: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for (pos, inst) in self.iter().enumerate() {
            map.entry((inst.domain, inst.label)).or_default().push(pos);
        }
        map
    }
}

/// Stratified (per domain and class) random split. Strata with fewer than two
/// instances go entirely to the training side.
pub fn split(
    ds: &MultiDomainDataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(MultiDomainDataset, MultiDomainDataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidValue(format!(
            "train fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for ((domain, label), mut pos) in ds.strata() {
        if pos.len() < 2 {
            warn!(
                "stratum (domain {}, class {}) has {} instance(s); assigned to train",
                ds.domain_name(domain),
                label,
                pos.len()
            );
            train.extend(pos);
            continue;
        }
        pos.shuffle(&mut rng);
        let n_train = ((pos.len() as f64) * train_fraction).round() as usize;
        let n_train = n_train.clamp(1, pos.len() - 1);
        train.extend_from_slice(&pos[..n_train]);
        test.extend_from_slice(&pos[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((ds.subset(&train), ds.subset(&test)))
}

/// Train on every domain except `held_out`, test on `held_out`.
pub fn leave_one_domain_out(
    ds: &MultiDomainDataset,
    held_out: usize,
) -> Result<(MultiDomainDataset, MultiDomainDataset)> {
    let domains = ds.domains();
    if domains.len() < 2 {
        return Err(Error::Dataset(
            "leave-one-domain-out needs at least two domains".into(),
        ));
    }
    if !domains.contains(&held_out) {
        return Err(Error::Dataset(format!(
            "domain id {held_out} has no instances in this dataset"
        )));
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (pos, inst) in ds.iter().enumerate() {
        if inst.domain == held_out {
            test.push(pos);
        } else {
            train.push(pos);
        }
    }
    Ok((ds.subset(&train), ds.subset(&test)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineMode {
    /// one single-domain dataset per domain
    Sdl,
    /// all instances pooled under one constant domain
    Aggregation,
}

/// Datasets for the single-domain and aggregation baselines. Every returned
/// view uses the constant schema (`B = 1`, `z = [1]`); SDL views come in
/// ascending domain order.
pub fn baselines_view(ds: &MultiDomainDataset, mode: BaselineMode) -> Vec<MultiDomainDataset> {
    let pooled = |rows: Vec<&Instance>| {
        let instances = rows
            .into_iter()
            .map(|i| Instance {
                x: i.x.clone(),
                domain: 0,
                label: i.label,
            })
            .collect();
        MultiDomainDataset::new(
            DomainSchema::constant(),
            ds.feature_dim,
            (*ds.class_names).clone(),
            instances,
            ds.note.clone(),
        )
        .expect("instances already validated")
    };
    match mode {
        BaselineMode::Aggregation => vec![pooled(ds.iter().collect())],
        BaselineMode::Sdl => ds
            .domains()
            .into_iter()
            .map(|d| pooled(ds.iter().filter(|i| i.domain == d).collect()))
            .collect(),
    }
}

/// Stratified `k`-fold partition of a dataset's positions. Returns
/// `(train, validation)` pairs. `k` is reduced (with a warning) when the
/// smallest stratum cannot fill every fold.
pub fn k_folds(ds: &MultiDomainDataset, k: usize, seed: u64) -> Result<Vec<(MultiDomainDataset, MultiDomainDataset)>> {
    if k < 2 {
        return Err(Error::InvalidValue(format!("need at least 2 folds, got {k}")));
    }
    let strata = ds.strata();
    let smallest = strata.values().map(Vec::len).min().unwrap_or(0);
    let k_eff = k.min(smallest.max(2));
    if k_eff < k {
        warn!("smallest stratum has {smallest} instances; using {k_eff} folds instead of {k}");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of = vec![0usize; ds.len()];
    for mut pos in strata.into_values() {
        pos.shuffle(&mut rng);
        for (i, p) in pos.into_iter().enumerate() {
            fold_of[p] = i % k_eff;
        }
    }
    Ok((0..k_eff)
        .map(|f| {
            let (mut tr, mut va) = (Vec::new(), Vec::new());
            for (p, &fp) in fold_of.iter().enumerate() {
                if fp == f {
                    va.push(p)
                } else {
                    tr.push(p)
                }
            }
            (ds.subset(&tr), ds.subset(&va))
        })
        .collect())
}

/// Scale each feature vector to sum to one (vectors summing to zero are left
/// unchanged).
pub fn sum_normalize(x: &[f64]) -> Vec<f64> {
    let s: f64 = x.iter().sum();
    if s == 0.0 || !s.is_finite() {
        x.to_vec()
    } else {
        x.iter().map(|v| v / s).collect()
    }
}

/// Per-feature z-score with statistics fitted on one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(ds: &MultiDomainDataset) -> Self {
        let d = ds.feature_dim();
        let n = ds.len().max(1) as f64;
        let mut mean = vec![0.0; d];
        for i in ds.iter() {
            for (m, v) in mean.iter_mut().zip(&i.x) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for i in ds.iter() {
            for ((s, v), m) in var.iter_mut().zip(&i.x).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, std }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

/// Sum-normalise both splits, then z-score them with statistics of the
/// training split only.
pub fn preprocess_pair(
    train: &MultiDomainDataset,
    test: &MultiDomainDataset,
) -> Result<(MultiDomainDataset, MultiDomainDataset)> {
    let train = train.map_features(sum_normalize)?;
    let test = test.map_features(sum_normalize)?;
    let z = Standardizer::fit(&train);
    Ok((train.map_features(|x| z.apply(x))?, test.map_features(|x| z.apply(x))?))
}
