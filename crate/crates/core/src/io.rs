//! Delimited text files for datasets.
//!
//! The header file:
//!
//! ```text
//! format=1
//! features=3
//! classes=neg,pos
//! encoding=distributed
//! factor=A:1,2
//! factor=B:1,2
//! note=free text
//! ```
//!
//! The data file has a `format=1` line, then one instance per line:
//! `label,state_1,..,state_F,x_1,..,x_D`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::dataset::{Instance, MultiDomainDataset};
use crate::descriptors::{DomainSchema, Encoding, Factor};
use crate::error::{Error, Result};

pub const FORMAT_LINE: &str = "format=1";

/// Write `contents` to `path` via a temporary sibling and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn check_field(kind: &str, s: &str) -> Result<()> {
    if s.is_empty() || s.contains([',', '\n', '\r']) {
        return Err(Error::Dataset(format!("{kind} '{s}' cannot be written to a delimited file")));
    }
    Ok(())
}

pub fn header_string(ds: &MultiDomainDataset) -> Result<String> {
    for c in ds.class_names() {
        check_field("class name", c)?;
    }
    if ds.note().contains(['\n', '\r']) {
        return Err(Error::Dataset("note must be a single line".into()));
    }
    let mut s = format!("{FORMAT_LINE}\nfeatures={}\nclasses={}\n", ds.feature_dim(), ds.class_names().join(","));
    let schema = ds.schema();
    writeln!(s, "encoding={}", schema.encoding().tag()).unwrap();
    for f in schema.factors() {
        writeln!(s, "factor={}:{}", f.name, f.states.join(",")).unwrap();
    }
    writeln!(s, "note={}", ds.note()).unwrap();
    Ok(s)
}

pub fn data_string(ds: &MultiDomainDataset) -> Result<String> {
    let schema = ds.schema();
    let mut s = String::from(FORMAT_LINE);
    s.push('\n');
    for inst in ds.iter() {
        s.push_str(&ds.class_names()[inst.label]);
        for (f, st) in schema.factors().iter().zip(schema.domain_states(inst.domain)?) {
            s.push(',');
            s.push_str(&f.states[st]);
        }
        for v in &inst.x {
            // shortest representation that parses back to the same bits
            write!(s, ",{v:?}").unwrap();
        }
        s.push('\n');
    }
    Ok(s)
}

pub fn save_delimited(ds: &MultiDomainDataset, data_path: &Path, header_path: &Path) -> Result<()> {
    write_atomic(header_path, header_string(ds)?.as_bytes())?;
    write_atomic(data_path, data_string(ds)?.as_bytes())
}

struct Header {
    features: usize,
    classes: Vec<String>,
    schema: DomainSchema,
    note: String,
}

fn parse_header(path: &Path, text: &str) -> Result<Header> {
    let p = |line: usize, msg: String| Error::Parse { path: path.display().to_string(), line, msg };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
    match lines.next() {
        Some((_, l)) if l.trim() == FORMAT_LINE => {}
        _ => return Err(p(1, format!("expected '{FORMAT_LINE}'"))),
    }
    let (mut features, mut classes, mut encoding, mut factors, mut note) = (None, None, None, Vec::new(), String::new());
    for (n, line) in lines {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| p(n, format!("expected key=value, got '{line}'")))?;
        match key.trim() {
            "features" => {
                features = Some(value.trim().parse::<usize>().map_err(|e| p(n, format!("bad feature count: {e}")))?)
            }
            "classes" => classes = Some(value.split(',').map(|c| c.trim().to_string()).collect::<Vec<_>>()),
            "encoding" => encoding = Some(Encoding::from_tag(value.trim()).map_err(|e| p(n, e.to_string()))?),
            "factor" => {
                let (name, states) =
                    value.split_once(':').ok_or_else(|| p(n, "factor must look like name:state,state".into()))?;
                let states: Vec<&str> = states.split(',').map(str::trim).collect();
                factors.push(Factor::new(name.trim(), &states));
            }
            "note" => note = value.to_string(),
            other => return Err(p(n, format!("unknown header key '{other}'"))),
        }
    }
    let features = features.ok_or_else(|| p(0, "missing 'features'".into()))?;
    let classes = classes.ok_or_else(|| p(0, "missing 'classes'".into()))?;
    let encoding = encoding.unwrap_or(Encoding::Distributed { constant: false });
    let schema = DomainSchema::new(factors, encoding).map_err(|e| p(0, e.to_string()))?;
    Ok(Header { features, classes, schema, note })
}

pub fn load_delimited(data_path: &Path, header_path: &Path) -> Result<MultiDomainDataset> {
    let header = parse_header(header_path, &fs::read_to_string(header_path)?)?;
    let text = fs::read_to_string(data_path)?;
    let p = |line: usize, msg: String| Error::Parse { path: data_path.display().to_string(), line, msg };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
    match lines.next() {
        Some((_, l)) if l.trim() == FORMAT_LINE => {}
        _ => return Err(p(1, format!("expected '{FORMAT_LINE}'"))),
    }
    let nf = header.schema.factors().len();
    let want = 1 + nf + header.features;
    let mut instances = Vec::new();
    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != want {
            return Err(p(n, format!("expected {want} fields, found {}", fields.len())));
        }
        let label = header
            .classes
            .iter()
            .position(|c| c == fields[0])
            .ok_or_else(|| p(n, format!("unknown class '{}'", fields[0])))?;
        let domain = header
            .schema
            .domain_id_by_names(&fields[1..=nf])
            .map_err(|e| p(n, e.to_string()))?;
        let mut x = Vec::with_capacity(header.features);
        for (j, f) in fields[1 + nf..].iter().enumerate() {
            let v: f64 = f.parse().map_err(|_| p(n, format!("feature {} is not a number: '{f}'", j + 1)))?;
            if !v.is_finite() {
                return Err(p(n, format!("feature {} is not finite", j + 1)));
            }
            x.push(v);
        }
        instances.push(Instance { x, domain, label });
    }
    MultiDomainDataset::new(header.schema, header.features, header.classes, instances, header.note)
}
