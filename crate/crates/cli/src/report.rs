//! Metric reports: delimited files for machines, tables for people.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::config::ExperimentConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RepeatRecord {
    pub repeat: usize,
    pub seed: u64,
    pub error: f64,
    /// error per domain name
    pub per_domain: Vec<(String, f64)>,
    /// chosen hyperparameters
    pub params: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodReport {
    pub method: String,
    pub repeats: Vec<RepeatRecord>,
    pub mean: f64,
    pub std: f64,
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl MethodReport {
    pub fn new(method: &str, repeats: Vec<RepeatRecord>) -> Self {
        let errs: Vec<f64> = repeats.iter().map(|r| r.error).collect();
        let (mean, std) = mean_std(&errs);
        MethodReport { method: method.to_string(), repeats, mean, std }
    }

    /// Mean error per domain across repeats, in first-seen domain order.
    pub fn domain_means(&self) -> Vec<(String, f64)> {
        let mut order = Vec::new();
        let mut acc: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for r in &self.repeats {
            for (d, e) in &r.per_domain {
                if !acc.contains_key(d) {
                    order.push(d.clone());
                }
                acc.entry(d.clone()).or_default().push(*e);
            }
        }
        order.into_iter().map(|d| {
            let m = mean_std(&acc[&d]).0;
            (d, m)
        }).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub protocol: String,
    pub methods: Vec<MethodReport>,
    pub config: Vec<(String, String, String)>,
    pub seeds: Vec<u64>,
}

impl MetricsReport {
    pub fn new(protocol: &str, methods: Vec<MethodReport>, cfg: &ExperimentConfig, seeds: Vec<u64>) -> Self {
        MetricsReport { protocol: protocol.to_string(), methods, config: cfg.resolved.clone(), seeds }
    }

    pub fn method(&self, name: &str) -> Option<&MethodReport> {
        self.methods.iter().find(|m| m.method == name)
    }

    /// Every error record: `method,repeat,seed,domain,error` (domain `all`
    /// is the overall error of the repeat).
    pub fn records_csv(&self) -> String {
        let mut s = String::from("format=1\nmethod,repeat,seed,domain,error,params\n");
        for m in &self.methods {
            for r in &m.repeats {
                writeln!(s, "{},{},{},all,{:?},{}", m.method, r.repeat, r.seed, r.error, r.params).unwrap();
                for (d, e) in &r.per_domain {
                    writeln!(s, "{},{},{},{},{:?},{}", m.method, r.repeat, r.seed, d, e, r.params).unwrap();
                }
            }
        }
        s
    }

    /// `method,mean,std,repeats`
    pub fn summary_csv(&self) -> String {
        let mut s = String::from("format=1\nmethod,mean,std,repeats\n");
        for m in &self.methods {
            writeln!(s, "{},{:?},{:?},{}", m.method, m.mean, m.std, m.repeats.len()).unwrap();
        }
        s
    }

    /// Resolved configuration, protocol, tuning objective and seeds.
    pub fn config_echo(&self) -> String {
        let mut s = String::from("format=1\n");
        writeln!(s, "protocol={}", self.protocol).unwrap();
        s.push_str("tuning_objective=error\n");
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        writeln!(s, "seeds={}", seeds.join(",")).unwrap();
        for (sec, k, v) in &self.config {
            writeln!(s, "{sec}.{k}={v}").unwrap();
        }
        s
    }

    /// Human-readable table of mean error (%) and standard deviation, with
    /// per-domain means.
    pub fn table(&self) -> String {
        let domains: Vec<String> = self
            .methods
            .first()
            .map(|m| m.domain_means().into_iter().map(|(d, _)| d).collect())
            .unwrap_or_default();
        let mut s = String::new();
        write!(s, "{:<14} {:>8} {:>7}", "method", "error%", "std").unwrap();
        for d in &domains {
            write!(s, " {:>10}", truncate(d, 10)).unwrap();
        }
        s.push('\n');
        for m in &self.methods {
            write!(s, "{:<14} {:>8.2} {:>7.2}", m.method, 100.0 * m.mean, 100.0 * m.std).unwrap();
            let dm: BTreeMap<String, f64> = m.domain_means().into_iter().collect();
            for d in &domains {
                match dm.get(d) {
                    Some(e) => write!(s, " {:>10.2}", 100.0 * e).unwrap(),
                    None => write!(s, " {:>10}", "-").unwrap(),
                }
            }
            s.push('\n');
        }
        s
    }
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

/// Parse `records_csv` output back into `(method, repeat, domain, error)`.
pub fn parse_records(text: &str) -> Result<Vec<(String, usize, String, f64)>, String> {
    let mut lines = text.lines();
    if lines.next() != Some("format=1") {
        return Err("missing format line".into());
    }
    lines.next();
    lines
        .enumerate()
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() < 5 {
                return Err(format!("line {}: too few fields", i + 3));
            }
            let repeat = f[1].parse().map_err(|e| format!("line {}: {e}", i + 3))?;
            let err = f[4].parse().map_err(|e| format!("line {}: {e}", i + 3))?;
            Ok((f[0].to_string(), repeat, f[3].to_string(), err))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(repeat: usize, error: f64) -> RepeatRecord {
        RepeatRecord {
            repeat,
            seed: repeat as u64,
            error,
            per_domain: vec![("A=1".into(), error), ("A=2".into(), error / 2.0)],
            params: "weight_decay=0.001".into(),
        }
    }

    #[test]
    fn mean_std_known_values() {
        assert_eq!(mean_std(&[1.0, 3.0]), (2.0, 2f64.sqrt()));
        assert_eq!(mean_std(&[0.25]), (0.25, 0.0));
    }

    #[test]
    fn summary_recomputes_from_records() {
        let m = MethodReport::new("sdl", vec![rec(0, 0.1), rec(1, 0.2), rec(2, 0.15)]);
        let report = MetricsReport { protocol: "split".into(), methods: vec![m.clone()], config: vec![], seeds: vec![0, 1, 2] };
        let parsed = parse_records(&report.records_csv()).unwrap();
        let errs: Vec<f64> = parsed.iter().filter(|r| r.2 == "all").map(|r| r.3).collect();
        let (mean, std) = mean_std(&errs);
        assert!((mean - m.mean).abs() <= 1e-12 && (std - m.std).abs() <= 1e-12);
        assert!(report.table().contains("sdl"));
        let (name, e) = &m.domain_means()[1];
        assert!(name == "A=2" && (e - 0.075).abs() < 1e-15);
    }
}
