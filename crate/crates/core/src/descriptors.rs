//! Semantic domain/task descriptors.
//!
//! A [`DomainSchema`] describes a grid of domains indexed by one or more
//! categorical factors, together with the encoding used to turn a domain into
//! its descriptor vector `z`. Domains are identified by a *domain id*, the
//! mixed-radix index of their state tuple with the first factor varying
//! slowest. The id does not depend on the encoding, so the same dataset can be
//! fed to one-hot, one-hot+constant and distributed models.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{Matrix, Vector};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Factor {
    pub name: String,
    pub states: Vec<String>,
}

impl Factor {
    pub fn new(name: impl Into<String>, states: &[&str]) -> Self {
        Factor {
            name: name.into(),
            states: states.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn cardinality(&self) -> usize {
        self.states.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Encoding {
    /// `z = e_id`, `B = M`
    OneHot,
    /// one-hot followed by a constant 1, `B = M + 1`
    OneHotConst,
    /// one one-hot block per factor, optionally followed by a constant 1
    Distributed { constant: bool },
}

impl Encoding {
    pub fn tag(self) -> &'static str {
        match self {
            Encoding::OneHot => "onehot",
            Encoding::OneHotConst => "onehot_const",
            Encoding::Distributed { constant: false } => "distributed",
            Encoding::Distributed { constant: true } => "distributed_const",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Encoding> {
        match tag {
            "onehot" => Ok(Encoding::OneHot),
            "onehot_const" => Ok(Encoding::OneHotConst),
            "distributed" => Ok(Encoding::Distributed { constant: false }),
            "distributed_const" => Ok(Encoding::Distributed { constant: true }),
            other => Err(Error::Descriptor(format!("unknown encoding '{other}'"))),
        }
    }
}

impl fmt::Display for Encoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

const RESERVED: &[char] = &[',', ';', ':', '+', '\n', '\r', '='];

fn check_name(kind: &str, name: &str) -> Result<()> {
    if name.trim().is_empty() || name.trim() != name || name.contains(RESERVED) {
        return Err(Error::Descriptor(format!(
            "invalid {kind} name '{name}' (must be non-empty, untrimmed-free and avoid {RESERVED:?})"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomainSchema {
    factors: Vec<Factor>,
    encoding: Encoding,
}

impl DomainSchema {
    pub fn new(factors: Vec<Factor>, encoding: Encoding) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::Descriptor("schema needs at least one factor".into()));
        }
        for (i, f) in factors.iter().enumerate() {
            check_name("factor", &f.name)?;
            if f.states.is_empty() {
                return Err(Error::Descriptor(format!("factor '{}' has no states", f.name)));
            }
            if factors[..i].iter().any(|g| g.name == f.name) {
                return Err(Error::Descriptor(format!("duplicate factor '{}'", f.name)));
            }
            for (j, s) in f.states.iter().enumerate() {
                check_name("state", s)?;
                if f.states[..j].contains(s) {
                    return Err(Error::Descriptor(format!(
                        "duplicate state '{s}' in factor '{}'",
                        f.name
                    )));
                }
            }
        }
        Ok(DomainSchema { factors, encoding })
    }

    /// `M` atomic domains named `0..M-1` under one-hot encoding.
    pub fn one_hot(m: usize) -> Result<Self> {
        Self::new(vec![Self::atomic_factor(m)?], Encoding::OneHot)
    }

    /// `M` atomic domains under one-hot + constant encoding.
    pub fn one_hot_const(m: usize) -> Result<Self> {
        Self::new(vec![Self::atomic_factor(m)?], Encoding::OneHotConst)
    }

    pub fn distributed(factors: Vec<Factor>) -> Result<Self> {
        Self::new(factors, Encoding::Distributed { constant: false })
    }

    /// A single domain whose descriptor is the constant `[1]`.
    pub fn constant() -> Self {
        DomainSchema {
            factors: vec![Factor::new("domain", &["all"])],
            encoding: Encoding::OneHot,
        }
    }

    fn atomic_factor(m: usize) -> Result<Factor> {
        if m == 0 {
            return Err(Error::Descriptor("domain count must be >= 1".into()));
        }
        Ok(Factor {
            name: "domain".into(),
            states: (0..m).map(|i| i.to_string()).collect(),
        })
    }

    pub fn with_encoding(&self, encoding: Encoding) -> Self {
        DomainSchema {
            factors: self.factors.clone(),
            encoding,
        }
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn encoding(&self) -> Encoding {
        self.encoding
    }

    /// Number of distinct domains `M` in the factor grid.
    pub fn domain_count(&self) -> usize {
        self.factors.iter().map(Factor::cardinality).product()
    }

    /// Descriptor length `B`.
    pub fn descriptor_len(&self) -> usize {
        match self.encoding {
            Encoding::OneHot => self.domain_count(),
            Encoding::OneHotConst => self.domain_count() + 1,
            Encoding::Distributed { constant } => {
                self.factors.iter().map(Factor::cardinality).sum::<usize>() + constant as usize
            }
        }
    }

    pub fn domain_id(&self, states: &[usize]) -> Result<usize> {
        if states.len() != self.factors.len() {
            return Err(Error::Descriptor(format!(
                "expected {} factor states, got {}",
                self.factors.len(),
                states.len()
            )));
        }
        let mut id = 0;
        for (f, &s) in self.factors.iter().zip(states) {
            if s >= f.cardinality() {
                return Err(Error::Descriptor(format!(
                    "state index {s} out of range for factor '{}'",
                    f.name
                )));
            }
            id = id * f.cardinality() + s;
        }
        Ok(id)
    }

    pub fn domain_states(&self, id: usize) -> Result<Vec<usize>> {
        if id >= self.domain_count() {
            return Err(Error::Descriptor(format!(
                "domain id {id} out of range (M = {})",
                self.domain_count()
            )));
        }
        let mut rest = id;
        let mut states = vec![0; self.factors.len()];
        for (slot, f) in states.iter_mut().zip(&self.factors).rev() {
            *slot = rest % f.cardinality();
            rest /= f.cardinality();
        }
        Ok(states)
    }

    /// Domain id from state names, one per factor in schema order.
    pub fn domain_id_by_names<S: AsRef<str>>(&self, names: &[S]) -> Result<usize> {
        if names.len() != self.factors.len() {
            return Err(Error::Descriptor(format!(
                "expected {} factor states, got {}",
                self.factors.len(),
                names.len()
            )));
        }
        let states = self
            .factors
            .iter()
            .zip(names)
            .map(|(f, n)| {
                f.states.iter().position(|s| s == n.as_ref()).ok_or_else(|| {
                    Error::Descriptor(format!(
                        "unknown state '{}' for factor '{}'",
                        n.as_ref(),
                        f.name
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        self.domain_id(&states)
    }

    /// Human-readable domain label, e.g. `day+weekend`.
    pub fn domain_name(&self, id: usize) -> String {
        match self.domain_states(id) {
            Ok(states) => states
                .iter()
                .zip(&self.factors)
                .map(|(&s, f)| f.states[s].as_str())
                .collect::<Vec<_>>()
                .join("+"),
            Err(_) => format!("#{id}"),
        }
    }

    fn encode_id_raw(&self, id: usize) -> Result<Vec<f64>> {
        let b = self.descriptor_len();
        let mut z = vec![0.0; b];
        match self.encoding {
            Encoding::OneHot | Encoding::OneHotConst => {
                if id >= self.domain_count() {
                    return Err(Error::Descriptor(format!(
                        "domain index {id} out of range (M = {})",
                        self.domain_count()
                    )));
                }
                z[id] = 1.0;
                if self.encoding == Encoding::OneHotConst {
                    z[b - 1] = 1.0;
                }
            }
            Encoding::Distributed { constant } => {
                let states = self.domain_states(id)?;
                let mut offset = 0;
                for (f, s) in self.factors.iter().zip(states) {
                    z[offset + s] = 1.0;
                    offset += f.cardinality();
                }
                if constant {
                    z[b - 1] = 1.0;
                }
            }
        }
        Ok(z)
    }

    fn require(&self, encoding: Encoding, op: &str) -> Result<()> {
        if self.encoding != encoding {
            return Err(Error::Descriptor(format!(
                "{op} requires a {encoding} schema, this one is {}",
                self.encoding
            )));
        }
        Ok(())
    }

    pub fn encode_one_hot(self: &Arc<Self>, index: usize) -> Result<Descriptor> {
        self.require(Encoding::OneHot, "encode_one_hot")?;
        self.encode_domain(index)
    }

    pub fn encode_one_hot_const(self: &Arc<Self>, index: usize) -> Result<Descriptor> {
        self.require(Encoding::OneHotConst, "encode_one_hot_const")?;
        self.encode_domain(index)
    }

    pub fn encode_distributed<S: AsRef<str>>(self: &Arc<Self>, states: &[S]) -> Result<Descriptor> {
        if !matches!(self.encoding, Encoding::Distributed { .. }) {
            return Err(Error::Descriptor(format!(
                "encode_distributed requires a distributed schema, this one is {}",
                self.encoding
            )));
        }
        let id = self.domain_id_by_names(states)?;
        self.encode_domain(id)
    }

    /// Descriptor of the domain with the given id under this schema's encoding.
    pub fn encode_domain(self: &Arc<Self>, id: usize) -> Result<Descriptor> {
        let values = Vector::from_vec_unchecked(self.encode_id_raw(id)?);
        Ok(Descriptor {
            values,
            schema: Arc::clone(self),
        })
    }

    /// Recover the domain id from a descriptor built for this schema.
    pub fn decode(&self, z: &[f64]) -> Result<usize> {
        check_descriptor(self, z)?;
        match self.encoding {
            Encoding::OneHot | Encoding::OneHotConst => Ok(z
                .iter()
                .take(self.domain_count())
                .position(|&v| v == 1.0)
                .expect("checked one-hot")),
            Encoding::Distributed { .. } => {
                let mut offset = 0;
                let mut states = Vec::with_capacity(self.factors.len());
                for f in &self.factors {
                    let block = &z[offset..offset + f.cardinality()];
                    states.push(block.iter().position(|&v| v == 1.0).expect("checked block"));
                    offset += f.cardinality();
                }
                self.domain_id(&states)
            }
        }
    }

    /// Compact text form, e.g. `distributed;time:day,night;week:weekday,weekend`.
    pub fn to_spec_string(&self) -> String {
        let mut s = self.encoding.tag().to_string();
        for f in &self.factors {
            s.push(';');
            s.push_str(&f.name);
            s.push(':');
            s.push_str(&f.states.join(","));
        }
        s
    }

    pub fn parse_spec_string(text: &str) -> Result<Self> {
        let mut parts = text.trim().split(';');
        let encoding = Encoding::from_tag(parts.next().unwrap_or_default().trim())?;
        let factors = parts
            .map(|p| {
                let (name, states) = p.split_once(':').ok_or_else(|| {
                    Error::Descriptor(format!("factor '{p}' must look like name:state,state"))
                })?;
                Ok(Factor {
                    name: name.trim().to_string(),
                    states: states.split(',').map(|s| s.trim().to_string()).collect(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        DomainSchema::new(factors, encoding)
    }
}

fn check_descriptor(schema: &DomainSchema, z: &[f64]) -> Result<()> {
    let b = schema.descriptor_len();
    if z.len() != b {
        return Err(Error::Descriptor(format!(
            "descriptor length {} does not match schema length {b}",
            z.len()
        )));
    }
    if z.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Descriptor("descriptor entries must be 0 or 1".into()));
    }
    let ones = |s: &[f64]| s.iter().filter(|&&v| v == 1.0).count();
    match schema.encoding {
        Encoding::OneHot => {
            if ones(z) != 1 {
                return Err(Error::Descriptor("one-hot descriptor needs exactly one 1".into()));
            }
        }
        Encoding::OneHotConst => {
            if z[b - 1] != 1.0 || ones(&z[..b - 1]) != 1 {
                return Err(Error::Descriptor(
                    "one-hot+constant descriptor needs one 1 in the index part and a trailing 1"
                        .into(),
                ));
            }
        }
        Encoding::Distributed { constant } => {
            let mut offset = 0;
            for f in &schema.factors {
                if ones(&z[offset..offset + f.cardinality()]) != 1 {
                    return Err(Error::Descriptor(format!(
                        "block for factor '{}' needs exactly one 1",
                        f.name
                    )));
                }
                offset += f.cardinality();
            }
            if constant && z[b - 1] != 1.0 {
                return Err(Error::Descriptor("missing trailing constant".into()));
            }
        }
    }
    Ok(())
}

/// Descriptor vector `z` together with the schema that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor {
    values: Vector,
    schema: Arc<DomainSchema>,
}

impl Descriptor {
    /// Validates `values` against the schema invariant.
    pub fn new(values: Vector, schema: Arc<DomainSchema>) -> Result<Self> {
        check_descriptor(&schema, values.as_slice())?;
        Ok(Descriptor { values, schema })
    }

    pub fn values(&self) -> &Vector {
        &self.values
    }

    pub fn as_slice(&self) -> &[f64] {
        self.values.as_slice()
    }

    pub fn schema(&self) -> &Arc<DomainSchema> {
        &self.schema
    }

    pub fn domain_id(&self) -> usize {
        self.schema.decode(self.as_slice()).expect("descriptor validated at construction")
    }
}

/// Stack descriptors as the columns of `Z` (`B×M`).
pub fn build_z(descriptors: &[Descriptor]) -> Result<Matrix> {
    let first = descriptors
        .first()
        .ok_or_else(|| Error::Descriptor("cannot build Z from no descriptors".into()))?;
    if descriptors.iter().any(|d| d.schema != first.schema) {
        return Err(Error::Descriptor("descriptors come from different schemas".into()));
    }
    let cols: Vec<&[f64]> = descriptors.iter().map(Descriptor::as_slice).collect();
    Matrix::from_columns(&cols)
}
