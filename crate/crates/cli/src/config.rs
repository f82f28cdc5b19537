//! Experiment configuration: INI text plus `section.key=value` overrides.

use std::path::PathBuf;
use std::str::FromStr;

use ini::Ini;

use mdmtl::descriptors::Factor;
use mdmtl::loss::Loss;
use mdmtl::model::BlockId;
use mdmtl::regularizers::{RegKind, RegTerm};
use mdmtl::synth::{PlantedKind, SynthSpec};
use mdmtl::trainer::{Schedule, TrainConfig};

use crate::error::CliError;

/// Every key the runner understands, with its default. Unknown keys are
/// rejected so typos surface before any training.
pub const DEFAULTS: &[(&str, &str, &str)] = &[
    ("data", "source", "synth"),
    ("data", "data_path", ""),
    ("data", "header_path", ""),
    ("data", "preprocess", "false"),
    ("data", "bias", "false"),
    ("data", "factors", "A:1,2;B:1,2"),
    ("data", "features", "50"),
    ("data", "classes", "2"),
    ("data", "n_per_domain", "200"),
    ("data", "planted", "additive"),
    ("data", "effect", "0.6"),
    ("data", "planted_ranks", "2,2,2"),
    ("data", "noise", "0.1"),
    ("data", "margin", "0"),
    ("data", "seed", "1"),
    ("model", "methods", "sdl,aggregation,md1,md2,parametrised"),
    ("model", "rank", "auto"),
    ("model", "tensor_ranks", "16,4,2"),
    ("train", "learning_rate", "0.01"),
    ("train", "schedule", "constant"),
    ("train", "decay_factor", "0.5"),
    ("train", "decay_every", "100"),
    ("train", "batch_size", "32"),
    ("train", "epochs", "500"),
    ("train", "seed", "7"),
    ("train", "balanced", "false"),
    ("train", "weight_decay", "0.001"),
    ("train", "regs", ""),
    ("eval", "protocol", "split"),
    ("eval", "train_fraction", "0.5"),
    ("eval", "repeats", "10"),
    ("eval", "cv_folds", "10"),
    ("eval", "grid_weight_decay", "0.0001,0.001,0.01"),
    ("eval", "grid_rank", ""),
    ("output", "dir", "out"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// one linear model per domain
    Sdl,
    /// one linear model for all domains pooled
    Aggregation,
    /// low-rank `PQ` over one-hot descriptors
    Md1,
    /// low-rank `PQ` over one-hot + constant descriptors
    Md2,
    /// low-rank `PQ` over distributed descriptors
    Parametrised,
    Cp,
    Tucker,
    Tt,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Sdl,
        Method::Aggregation,
        Method::Md1,
        Method::Md2,
        Method::Parametrised,
        Method::Cp,
        Method::Tucker,
        Method::Tt,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Method::Sdl => "sdl",
            Method::Aggregation => "aggregation",
            Method::Md1 => "md1",
            Method::Md2 => "md2",
            Method::Parametrised => "parametrised",
            Method::Cp => "cp",
            Method::Tucker => "tucker",
            Method::Tt => "tt",
        }
    }

    /// Whether the method needs binary labels (single-output model).
    pub fn single_output(self) -> bool {
        matches!(self, Method::Md1 | Method::Md2 | Method::Parametrised)
    }

    pub fn is_tensor(self) -> bool {
        matches!(self, Method::Cp | Method::Tucker | Method::Tt)
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Method::ALL
            .into_iter()
            .find(|m| m.tag() == s.trim())
            .ok_or_else(|| {
                let names: Vec<_> = Method::ALL.iter().map(|m| m.tag()).collect();
                format!("unknown method '{s}', expected one of {}", names.join(", "))
            })
    }
}

/// Inner dimension of the single-output `PQ` factorisation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RankChoice {
    /// `round(D / ln D)`
    Auto,
    /// `P` fixed to the identity, so `w = Qz`
    Identity,
    Fixed(usize),
}

impl RankChoice {
    pub fn describe(self) -> String {
        match self {
            RankChoice::Auto => "auto".into(),
            RankChoice::Identity => "identity".into(),
            RankChoice::Fixed(k) => k.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synth(SynthSpec),
    Files { data: PathBuf, header: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Protocol {
    FixedSplit { train_fraction: f64, repeats: usize },
    LeaveOneDomainOut { repeats: usize },
}

impl Protocol {
    pub fn repeats(self) -> usize {
        match self {
            Protocol::FixedSplit { repeats, .. } | Protocol::LeaveOneDomainOut { repeats } => repeats,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvConfig {
    /// 0 disables the grid search
    pub folds: usize,
    pub weight_decays: Vec<f64>,
    pub ranks: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub source: DataSource,
    pub preprocess: bool,
    pub bias: bool,
    pub methods: Vec<Method>,
    pub rank: RankChoice,
    pub tensor_ranks: [usize; 3],
    pub train: TrainConfig,
    /// Frobenius penalty on every trainable block
    pub weight_decay: f64,
    pub protocol: Protocol,
    pub cv: CvConfig,
    pub out_dir: PathBuf,
    /// resolved key/value pairs, for echoing into reports
    pub resolved: Vec<(String, String, String)>,
}

/// Raw configuration: defaults, then a file, then overrides.
#[derive(Debug, Clone)]
pub struct RawConfig {
    ini: Ini,
}

impl Default for RawConfig {
    fn default() -> Self {
        let mut ini = Ini::new();
        for (s, k, v) in DEFAULTS {
            ini.with_section(Some(*s)).set(*k, *v);
        }
        RawConfig { ini }
    }
}

impl RawConfig {
    pub fn from_str_with_defaults(text: &str) -> Result<Self, CliError> {
        let parsed = Ini::load_from_str(text).map_err(|e| CliError::config("<file>", e.to_string()))?;
        let mut raw = RawConfig::default();
        for (sec, props) in parsed.iter() {
            let Some(sec) = sec else {
                if let Some((k, _)) = props.iter().next() {
                    return Err(CliError::config(k, "keys must appear under a [section]"));
                }
                continue;
            };
            for (k, v) in props.iter() {
                raw.set(sec, k, v)?;
            }
        }
        Ok(raw)
    }

    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<(), CliError> {
        if !DEFAULTS.iter().any(|(s, k, _)| *s == section && *k == key) {
            return Err(CliError::config(format!("{section}.{key}"), "unknown key"));
        }
        self.ini.with_section(Some(section)).set(key, value.trim());
        Ok(())
    }

    /// Apply a `section.key=value` override.
    pub fn apply_override(&mut self, spec: &str) -> Result<(), CliError> {
        let (path, value) = spec
            .split_once('=')
            .ok_or_else(|| CliError::config(spec, "override must look like section.key=value"))?;
        let (section, key) = path
            .trim()
            .split_once('.')
            .ok_or_else(|| CliError::config(path, "override key must look like section.key"))?;
        self.set(section, key, value)
    }

    pub fn get(&self, section: &str, key: &str) -> &str {
        self.ini
            .section(Some(section))
            .and_then(|p| p.get(key))
            .expect("every key has a default")
    }

    fn parse<T: FromStr>(&self, section: &str, key: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.get(section, key);
        v.parse()
            .map_err(|e: T::Err| CliError::config(format!("{section}.{key}"), format!("cannot parse '{v}': {e}")))
    }

    fn list<T: FromStr>(&self, section: &str, key: &str) -> Result<Vec<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.get(section, key);
        v.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse().map_err(|e: T::Err| {
                    CliError::config(format!("{section}.{key}"), format!("cannot parse '{s}': {e}"))
                })
            })
            .collect()
    }

    /// All resolved values in a stable order.
    pub fn resolved(&self) -> Vec<(String, String, String)> {
        DEFAULTS
            .iter()
            .map(|(s, k, _)| (s.to_string(), k.to_string(), self.get(s, k).to_string()))
            .collect()
    }

    /// Resolved configuration as INI text (stable key order).
    pub fn to_ini_string(&self) -> String {
        let mut out = String::new();
        let mut current = "";
        for (s, k, _) in DEFAULTS {
            if *s != current {
                if !current.is_empty() {
                    out.push('\n');
                }
                out.push_str(&format!("[{s}]\n"));
                current = s;
            }
            out.push_str(&format!("{k} = {}\n", self.get(s, k)));
        }
        out
    }

    pub fn synth_spec(&self) -> Result<SynthSpec, CliError> {
        let factors = parse_factors(self.get("data", "factors"))?;
        let classes: usize = self.parse("data", "classes")?;
        let kind = match self.get("data", "planted") {
            "additive" => PlantedKind::Additive { effect: self.parse("data", "effect")? },
            "tucker" => {
                let r: Vec<usize> = self.list("data", "planted_ranks")?;
                let ranks: [usize; 3] = r
                    .try_into()
                    .map_err(|_| CliError::config("data.planted_ranks", "need three ranks K_D,K_C,K_B"))?;
                PlantedKind::LowRankTucker { ranks }
            }
            other => {
                return Err(CliError::config("data.planted", format!("unknown planted model '{other}'")))
            }
        };
        let spec = SynthSpec {
            factors,
            features: self.parse("data", "features")?,
            classes,
            n_train: self.parse("data", "n_per_domain")?,
            n_test: 0,
            kind,
            noise: self.parse("data", "noise")?,
            margin: self.parse("data", "margin")?,
            seed: self.parse("data", "seed")?,
        };
        spec.validate().map_err(|e| CliError::config("data", e.to_string()))?;
        Ok(spec)
    }

    pub fn build(&self) -> Result<ExperimentConfig, CliError> {
        let source = match self.get("data", "source") {
            "synth" => DataSource::Synth(self.synth_spec()?),
            "file" => {
                let data = self.get("data", "data_path");
                let header = self.get("data", "header_path");
                if data.is_empty() || header.is_empty() {
                    return Err(CliError::config(
                        "data.data_path",
                        "file source needs both data.data_path and data.header_path",
                    ));
                }
                DataSource::Files { data: data.into(), header: header.into() }
            }
            other => {
                return Err(CliError::config("data.source", format!("expected 'synth' or 'file', got '{other}'")))
            }
        };
        let methods: Vec<Method> = self.list("model", "methods")?;
        if methods.is_empty() {
            return Err(CliError::config("model.methods", "at least one method is required"));
        }
        let rank = match self.get("model", "rank") {
            "auto" => RankChoice::Auto,
            "identity" => RankChoice::Identity,
            _ => {
                let k: usize = self.parse("model", "rank")?;
                if k == 0 {
                    return Err(CliError::config("model.rank", "rank must be >= 1"));
                }
                RankChoice::Fixed(k)
            }
        };
        let tr: Vec<usize> = self.list("model", "tensor_ranks")?;
        let tensor_ranks: [usize; 3] = tr
            .try_into()
            .map_err(|_| CliError::config("model.tensor_ranks", "need three ranks K_D,K_C,K_B"))?;
        if tensor_ranks.contains(&0) {
            return Err(CliError::config("model.tensor_ranks", "ranks must be >= 1"));
        }

        let schedule = match self.get("train", "schedule") {
            "constant" => Schedule::Constant,
            "step" => Schedule::StepDecay {
                factor: self.parse("train", "decay_factor")?,
                every: self.parse("train", "decay_every")?,
            },
            other => {
                return Err(CliError::config("train.schedule", format!("expected 'constant' or 'step', got '{other}'")))
            }
        };
        let train = TrainConfig {
            learning_rate: self.parse("train", "learning_rate")?,
            schedule,
            batch_size: self.parse("train", "batch_size")?,
            epochs: self.parse("train", "epochs")?,
            seed: self.parse("train", "seed")?,
            loss: Loss::Hinge,
            regs: parse_regs(self.get("train", "regs"))?,
            balanced: self.parse("train", "balanced")?,
        };
        train.validate().map_err(|e| CliError::config("train", e.to_string()))?;
        let weight_decay: f64 = self.parse("train", "weight_decay")?;
        if !(weight_decay >= 0.0 && weight_decay.is_finite()) {
            return Err(CliError::config("train.weight_decay", "must be finite and >= 0"));
        }

        let repeats: usize = self.parse("eval", "repeats")?;
        if repeats == 0 {
            return Err(CliError::config("eval.repeats", "must be >= 1"));
        }
        let protocol = match self.get("eval", "protocol") {
            "split" => {
                let f: f64 = self.parse("eval", "train_fraction")?;
                if !(f > 0.0 && f < 1.0) {
                    return Err(CliError::config("eval.train_fraction", "must be in (0, 1)"));
                }
                Protocol::FixedSplit { train_fraction: f, repeats }
            }
            "lodo" => Protocol::LeaveOneDomainOut { repeats },
            other => {
                return Err(CliError::config("eval.protocol", format!("expected 'split' or 'lodo', got '{other}'")))
            }
        };
        let cv = CvConfig {
            folds: self.parse("eval", "cv_folds")?,
            weight_decays: self.list("eval", "grid_weight_decay")?,
            ranks: self.list("eval", "grid_rank")?,
        };
        if cv.folds == 1 {
            return Err(CliError::config("eval.cv_folds", "use 0 to disable or >= 2 folds"));
        }
        Ok(ExperimentConfig {
            source,
            preprocess: self.parse("data", "preprocess")?,
            bias: self.parse("data", "bias")?,
            methods,
            rank,
            tensor_ranks,
            train,
            weight_decay,
            protocol,
            cv,
            out_dir: self.get("output", "dir").into(),
            resolved: self.resolved(),
        })
    }
}

fn parse_factors(text: &str) -> Result<Vec<Factor>, CliError> {
    text.split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|f| {
            let (name, states) = f
                .split_once(':')
                .ok_or_else(|| CliError::config("data.factors", format!("'{f}' must look like name:state,state")))?;
            let states: Vec<&str> = states.split(',').map(str::trim).collect();
            Ok(Factor::new(name.trim(), &states))
        })
        .collect()
}

/// `Q:l21:0.01;P:frobenius:0.001`
fn parse_regs(text: &str) -> Result<Vec<RegTerm>, CliError> {
    let err = |m: String| CliError::config("train.regs", m);
    text.split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|t| {
            let parts: Vec<&str> = t.split(':').map(str::trim).collect();
            let [block, kind, weight] = parts[..] else {
                return Err(err(format!("'{t}' must look like BLOCK:kind:weight")));
            };
            let block = BlockId::parse(block).map_err(|e| err(e.to_string()))?;
            let kind = RegKind::from_tag(kind).map_err(|e| err(e.to_string()))?;
            let weight: f64 = weight.parse().map_err(|_| err(format!("bad weight '{weight}'")))?;
            RegTerm::new(block, kind, weight).map_err(|e| err(e.to_string()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_build() {
        let cfg = RawConfig::default().build().unwrap();
        assert_eq!(cfg.methods.len(), 5);
        assert_eq!(cfg.protocol, Protocol::FixedSplit { train_fraction: 0.5, repeats: 10 });
        assert!(matches!(cfg.source, DataSource::Synth(ref s) if s.features == 50 && s.n_train == 200));
    }

    #[test]
    fn file_then_overrides() {
        let mut raw = RawConfig::from_str_with_defaults("[train]\nepochs = 3\n[eval]\nrepeats=2\n").unwrap();
        raw.apply_override("train.epochs=9").unwrap();
        let cfg = raw.build().unwrap();
        assert_eq!(cfg.train.epochs, 9);
        assert_eq!(cfg.protocol.repeats(), 2);
    }

    #[test]
    fn errors_carry_field_paths() {
        let mut raw = RawConfig::default();
        let e = raw.apply_override("train.epoch=3").unwrap_err();
        assert!(e.to_string().contains("train.epoch"), "{e}");
        raw.apply_override("eval.repeats=0").unwrap();
        assert!(raw.build().unwrap_err().to_string().contains("eval.repeats"));
        let mut raw = RawConfig::default();
        raw.apply_override("model.methods=sdl,magic").unwrap();
        assert!(raw.build().unwrap_err().to_string().contains("model.methods"));
        assert!(RawConfig::from_str_with_defaults("[data]\nnoise = 0.7\n").unwrap().build().is_err());
        assert!(RawConfig::from_str_with_defaults("x = 1\n").is_err());
    }

    #[test]
    fn regs_parse() {
        let r = parse_regs("Q:l21:0.01; P:frobenius:0.5").unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!((r[0].target, r[0].kind), (BlockId::Q, RegKind::L21));
        assert!(parse_regs("S:trace:1").is_err());
        assert!(parse_regs("Q:l21").is_err());
    }

    #[test]
    fn ini_echo_round_trips() {
        let mut raw = RawConfig::default();
        raw.apply_override("data.noise=0.2").unwrap();
        let again = RawConfig::from_str_with_defaults(&raw.to_ini_string()).unwrap();
        assert_eq!(again.resolved(), raw.resolved());
    }
}
