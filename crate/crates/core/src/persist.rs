//! Versioned binary model files.
//!
//! Layout (all integers little-endian):
//! magic `MDMTLMDL`, `u32` version, kind tag, schema text, `u64` D, C, B,
//! `u32` block count, then per block: name, shape, frozen flag and the
//! values as `f64`. Strings are a `u32` byte length followed by UTF-8.

use std::path::Path;

use crate::descriptors::DomainSchema;
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::model::{BlockId, BlockShape, FactorizedModel, FullTensorModel, ModelKind};
use crate::multi::{CpModel, FrozenFactors, TtModel, TuckerModel};
use crate::single::SingleOutputModel;
use crate::tensor::{Matrix, Tensor3};

pub const MAGIC: &[u8; 8] = b"MDMTLMDL";
pub const VERSION: u32 = 1;

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

pub fn encode_model(model: &FactorizedModel, schema: &DomainSchema) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_str(&mut out, model.kind().tag());
    put_str(&mut out, &schema.to_spec_string());
    for d in [model.feature_dim(), model.output_dim(), model.descriptor_dim()] {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    let specs = model.block_specs();
    out.extend_from_slice(&(specs.len() as u32).to_le_bytes());
    for (spec, data) in specs.iter().zip(model.block_data()) {
        put_str(&mut out, spec.id.name());
        let dims: Vec<usize> = match spec.shape {
            BlockShape::Matrix(r, c) => vec![r, c],
            BlockShape::Tensor(d) => d.to_vec(),
        };
        out.push(dims.len() as u8);
        for d in dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.push(spec.frozen as u8);
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format(format!(
                "truncated: needed {n} bytes at offset {}, file has {}",
                self.pos,
                self.buf.len()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| Error::Format(format!("dimension {v} too large")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("invalid UTF-8 string".into()))
    }
}

struct RawBlock {
    id: BlockId,
    dims: Vec<usize>,
    frozen: bool,
    data: Vec<f64>,
}

impl RawBlock {
    fn matrix(&self) -> Result<Matrix> {
        match self.dims[..] {
            [r, c] => Matrix::new(r, c, self.data.clone()),
            _ => Err(Error::Format(format!("block {} should be a matrix", self.id))),
        }
    }

    fn tensor(&self) -> Result<Tensor3> {
        match self.dims[..] {
            [a, b, c] => Tensor3::new([a, b, c], self.data.clone()),
            _ => Err(Error::Format(format!("block {} should be a 3-way tensor", self.id))),
        }
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<(FactorizedModel, DomainSchema)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Format("not a model file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported format version {version}, expected {VERSION}")));
    }
    let kind = ModelKind::from_tag(&r.string()?)?;
    let schema = DomainSchema::parse_spec_string(&r.string()?)?;
    let dims = [r.u64()?, r.u64()?, r.u64()?];
    let n = r.u32()? as usize;
    let mut blocks = Vec::with_capacity(n);
    for _ in 0..n {
        let id = BlockId::parse(&r.string()?)?;
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        let frozen = r.u8()? != 0;
        let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let len = len.ok_or_else(|| Error::Format("block size overflows".into()))?;
        let raw = r.take(len.checked_mul(8).ok_or_else(|| Error::Format("block size overflows".into()))?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        blocks.push(RawBlock { id, dims: shape, frozen, data });
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes after the last block", bytes.len() - r.pos)));
    }
    let get = |id: BlockId| {
        blocks
            .iter()
            .find(|b| b.id == id)
            .ok_or_else(|| Error::Format(format!("{kind} model file lacks block {id}")))
    };
    let model: FactorizedModel = match kind {
        ModelKind::Single => {
            let p = get(BlockId::P)?;
            SingleOutputModel::from_parts(p.matrix()?, get(BlockId::Q)?.matrix()?, p.frozen)?.into()
        }
        ModelKind::Cp => CpModel::new(get(BlockId::UD)?.matrix()?, get(BlockId::UC)?.matrix()?, get(BlockId::UB)?.matrix()?)?.into(),
        ModelKind::Tucker => {
            let (ud, uc, ub, s) = (get(BlockId::UD)?, get(BlockId::UC)?, get(BlockId::UB)?, get(BlockId::S)?);
            let mut m = TuckerModel::new(s.tensor()?, ud.matrix()?, uc.matrix()?, ub.matrix()?)?;
            m.frozen = FrozenFactors { u_d: ud.frozen, u_c: uc.frozen, u_b: ub.frozen, s: s.frozen };
            m.into()
        }
        ModelKind::Tt => TtModel::new(get(BlockId::UD)?.matrix()?, get(BlockId::S)?.tensor()?, get(BlockId::UB)?.matrix()?)?.into(),
        ModelKind::Full => FullTensorModel { w: get(BlockId::W)?.tensor()? }.into(),
    };
    let got = [model.feature_dim(), model.output_dim(), model.descriptor_dim()];
    if got != dims {
        return Err(Error::Format(format!("declared dims {dims:?} disagree with blocks {got:?}")));
    }
    if schema.descriptor_len() != dims[2] {
        return Err(Error::Format(format!(
            "schema has descriptor length {} but the model takes B = {}",
            schema.descriptor_len(),
            dims[2]
        )));
    }
    Ok((model, schema))
}

pub fn save_model(path: &Path, model: &FactorizedModel, schema: &DomainSchema) -> Result<()> {
    write_atomic(path, &encode_model(model, schema))
}

pub fn load_model(path: &Path) -> Result<(FactorizedModel, DomainSchema)> {
    decode_model(&std::fs::read(path)?)
}
