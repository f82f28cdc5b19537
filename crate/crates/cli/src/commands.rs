//! Subcommand implementations. Each returns its outputs so they can be
//! tested without spawning the binary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mdmtl::dataset::MultiDomainDataset;
use mdmtl::descriptors::DomainSchema;
use mdmtl::gradcheck::{grad_check_with, kink_distance, Example, GradCheckReport};
use mdmtl::io::{load_delimited, save_delimited, write_atomic};
use mdmtl::loss::Loss;
use mdmtl::model::{BlockId, FactorizedModel};
use mdmtl::multi::{CpModel, TtModel, TuckerModel};
use mdmtl::persist::{load_model, save_model};
use mdmtl::single::SingleOutputModel;
use mdmtl::synth::generate;

use crate::config::{DataSource, ExperimentConfig, RawConfig};
use crate::error::CliError;
use crate::experiments::{error_rates, predict, prepare_pool, run_split, Fitted, View};
use crate::report::MetricsReport;

/// Training pool for an experiment.
pub fn load_pool(cfg: &ExperimentConfig) -> Result<MultiDomainDataset, CliError> {
    let pool = match &cfg.source {
        DataSource::Synth(spec) => generate(spec)?.train,
        DataSource::Files { data, header } => load_delimited(data, header)?,
    };
    prepare_pool(pool, cfg)
}

fn write_report(dir: &Path, prefix: &str, report: &MetricsReport) -> Result<Vec<PathBuf>, CliError> {
    fs::create_dir_all(dir)?;
    let files = [
        (format!("{prefix}_records.csv"), report.records_csv()),
        (format!("{prefix}_summary.csv"), report.summary_csv()),
        (format!("{prefix}_config.txt"), report.config_echo()),
        (format!("{prefix}_table.txt"), report.table()),
    ];
    let mut out = Vec::new();
    for (name, body) in files {
        let p = dir.join(name);
        write_atomic(&p, body.as_bytes())?;
        out.push(p);
    }
    Ok(out)
}

/// Generate the configured synthetic pool and write it (plus the planted
/// model) to `dir`.
pub fn run_synth(raw: &RawConfig, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let out = generate(&raw.synth_spec()?)?;
    fs::create_dir_all(dir)?;
    let (data, header, truth) = (dir.join("data.csv"), dir.join("header.txt"), dir.join("truth.bin"));
    save_delimited(&out.train, &data, &header)?;
    save_model(&truth, &out.truth, out.train.schema())?;
    Ok(vec![data, header, truth])
}

/// Fixed-split experiment over every configured method. Writes the report
/// and the repeat-0 models under `<out>/models`.
pub fn run_train(cfg: &ExperimentConfig) -> Result<MetricsReport, CliError> {
    let pool = load_pool(cfg)?;
    let (report, fitted) = run_split(cfg, &pool)?;
    write_report(&cfg.out_dir, "train", &report)?;
    let models = cfg.out_dir.join("models");
    fs::create_dir_all(&models)?;
    for (method, f) in fitted {
        match f {
            Fitted::PerDomain(map) => {
                for (dom, m) in map {
                    save_model(&models.join(format!("{}_d{dom}.bin", method.tag())), &m, &DomainSchema::constant())?;
                }
            }
            Fitted::Joint { model, view } => {
                let schema = match view {
                    View::Constant => DomainSchema::constant(),
                    View::Encoded(e) => pool.schema().with_encoding(e),
                };
                save_model(&models.join(format!("{}.bin", method.tag())), &model, &schema)?;
            }
        }
    }
    Ok(report)
}

/// Score a saved model on the configured data pool. Returns the overall
/// error and the error per domain.
pub fn run_eval(cfg: &ExperimentConfig, model_path: &Path) -> Result<(f64, Vec<(String, f64)>), CliError> {
    let (model, schema) = load_model(model_path)?;
    let pool = load_pool(cfg)?;
    let view = if schema == DomainSchema::constant() {
        View::Constant
    } else if schema.factors() == pool.schema().factors() {
        View::Encoded(schema.encoding())
    } else {
        return Err(CliError::Core(mdmtl::Error::Descriptor(format!(
            "model schema '{}' does not match the data schema '{}'",
            schema.to_spec_string(),
            pool.schema().to_spec_string()
        ))));
    };
    let fitted = Fitted::Joint { model, view };
    let (overall, per) = error_rates(&pool, &predict(&fitted, &pool)?);
    let mut s = String::from("format=1\ndomain,error\n");
    writeln!(s, "all,{overall:?}").unwrap();
    for (d, e) in &per {
        writeln!(s, "{d},{e:?}").unwrap();
    }
    fs::create_dir_all(&cfg.out_dir)?;
    write_atomic(&cfg.out_dir.join("eval.csv"), s.as_bytes())?;
    Ok((overall, per))
}

pub fn run_zsda(cfg: &ExperimentConfig) -> Result<MetricsReport, CliError> {
    let pool = load_pool(cfg)?;
    let report = crate::experiments::run_zsda(cfg, &pool)?;
    write_report(&cfg.out_dir, "zsda", &report)?;
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct GradCheckRow {
    pub architecture: &'static str,
    pub loss: Loss,
    pub report: GradCheckReport,
}

pub const GRADCHECK_TOL: f64 = 1e-5;

fn random_batch(rng: &mut ChaCha8Rng, n: usize, d: usize, b: usize, classes: usize) -> Vec<Example> {
    (0..n)
        .map(|_| Example {
            x: (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            z: (0..b).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            label: rng.gen_range(0..classes),
        })
        .collect()
}

/// Gradient check of every architecture at `D = 7, C = 3, B = 4, K = 2`.
/// Single-output models use the hinge loss; the tensor architectures are
/// checked with cross-entropy at `C = 3` and with the hinge loss at `C = 1`.
/// Hinge batches are redrawn until they sit at least `1e-3` from the kink.
/// `tamper` may corrupt one block's analytic gradient to exercise failure
/// reporting.
pub fn run_gradcheck(seed: u64, tamper: Option<BlockId>) -> Result<Vec<GradCheckRow>, CliError> {
    let (d, c, b, k) = (7, 3, 4, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases: Vec<(&'static str, FactorizedModel, Loss)> = vec![
        ("single", SingleOutputModel::init(d, k, b, &mut rng).into(), Loss::Hinge),
        ("single_fixed_p", SingleOutputModel::init_fixed_identity(d, b, &mut rng).into(), Loss::Hinge),
    ];
    for (classes, loss) in [(c, Loss::CrossEntropy), (1, Loss::Hinge)] {
        cases.push(("cp", CpModel::init(d, classes, b, k, &mut rng).into(), loss));
        cases.push(("tucker", TuckerModel::init(d, classes, b, [k, classes.min(k), k], &mut rng).into(), loss));
        cases.push(("tt", TtModel::init(d, classes, b, [k, k], &mut rng).into(), loss));
    }
    let mut rows = Vec::new();
    for (architecture, model, loss) in cases {
        let classes = if loss == Loss::Hinge { 2 } else { c };
        let mut batch = random_batch(&mut rng, 5, d, b, classes);
        let mut tries = 0;
        while kink_distance(&model, &batch, loss)? < 1e-3 {
            batch = random_batch(&mut rng, 5, d, b, classes);
            tries += 1;
            if tries > 1000 {
                return Err(CliError::Core(mdmtl::Error::InvalidValue("could not draw a batch away from the hinge kink".into())));
            }
        }
        let report = grad_check_with(&model, &batch, loss, &[], |id, g| {
            if Some(id) == tamper {
                if let Some(v) = g.first_mut() {
                    *v += 0.01;
                }
            }
        })?;
        rows.push(GradCheckRow { architecture, loss, report });
    }
    Ok(rows)
}

pub fn gradcheck_table(rows: &[GradCheckRow]) -> String {
    let mut s = String::from("format=1\narchitecture,loss,block,frozen,max_rel_error,status\n");
    for r in rows {
        for blk in &r.report.blocks {
            let ok = blk.max_rel_error <= GRADCHECK_TOL;
            writeln!(
                s,
                "{},{},{},{},{:e},{}",
                r.architecture,
                r.loss.tag(),
                blk.id,
                blk.frozen,
                blk.max_rel_error,
                if ok { "pass" } else { "FAIL" }
            )
            .unwrap();
        }
    }
    s
}

/// Summary of a model file or a dataset header.
pub fn run_inspect(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(mdmtl::persist::MAGIC) {
        let (m, schema) = mdmtl::persist::decode_model(&bytes)?;
        let mut s = String::new();
        writeln!(s, "kind: {}", m.kind()).unwrap();
        writeln!(s, "dims: D={} C={} B={}", m.feature_dim(), m.output_dim(), m.descriptor_dim()).unwrap();
        writeln!(s, "schema: {}", schema.to_spec_string()).unwrap();
        writeln!(s, "parameters: {} ({} trainable)", m.parameter_count(), m.trainable_parameter_count()).unwrap();
        for spec in m.block_specs() {
            writeln!(s, "  {:<4} {:?}{}", spec.id.name(), spec.shape, if spec.frozen { " frozen" } else { "" }).unwrap();
        }
        Ok(s)
    } else {
        let text = String::from_utf8(bytes).map_err(|_| mdmtl::Error::Format("neither a model file nor a text file".into()))?;
        Ok(text)
    }
}

