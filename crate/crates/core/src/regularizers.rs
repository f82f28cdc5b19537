//! Norm penalties on parameter blocks, with (sub)gradients.

use std::fmt;

use crate::error::{Error, Result};
use crate::model::{BlockId, BlockShape};
use crate::svd::svd;
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegKind {
    /// `λ Σ m²`
    Frobenius,
    /// `λ Σ_rows ‖row‖₂`
    L21,
    /// `λ Σ σᵢ`
    TraceNorm,
    /// `λ Σ |m|`
    EntrywiseL1,
}

impl RegKind {
    pub fn tag(self) -> &'static str {
        match self {
            RegKind::Frobenius => "frobenius",
            RegKind::L21 => "l21",
            RegKind::TraceNorm => "trace",
            RegKind::EntrywiseL1 => "l1",
        }
    }

    pub fn from_tag(tag: &str) -> Result<RegKind> {
        match tag.trim().to_ascii_lowercase().as_str() {
            "frobenius" | "fro" | "l2" => Ok(RegKind::Frobenius),
            "l21" | "l2,1" => Ok(RegKind::L21),
            "trace" | "tracenorm" | "nuclear" => Ok(RegKind::TraceNorm),
            "l1" | "entrywise_l1" => Ok(RegKind::EntrywiseL1),
            other => Err(Error::InvalidValue(format!("unknown regulariser '{other}'"))),
        }
    }

    pub fn matrix_only(self) -> bool {
        matches!(self, RegKind::L21 | RegKind::TraceNorm)
    }
}

impl fmt::Display for RegKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// One penalty term `weight · kind(target)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegTerm {
    pub target: BlockId,
    pub kind: RegKind,
    pub weight: f64,
}

impl RegTerm {
    pub fn new(target: BlockId, kind: RegKind, weight: f64) -> Result<Self> {
        if !(weight >= 0.0 && weight.is_finite()) {
            return Err(Error::InvalidValue(format!(
                "regulariser weight must be finite and >= 0, got {weight}"
            )));
        }
        if kind.matrix_only() && matches!(target, BlockId::S | BlockId::W) {
            return Err(Error::InvalidValue(format!(
                "{kind} only applies to matrix blocks, not {target}"
            )));
        }
        Ok(RegTerm {
            target,
            kind,
            weight,
        })
    }
}

/// Value and subgradient of `λ·kind(m)`.
pub fn reg_value_subgrad(kind: RegKind, m: &Matrix, lambda: f64) -> (f64, Matrix) {
    let (rows, cols) = m.shape();
    let data = m.as_slice();
    let (value, grad) = match kind {
        RegKind::Frobenius => (
            data.iter().map(|v| v * v).sum::<f64>(),
            data.iter().map(|v| 2.0 * v).collect::<Vec<_>>(),
        ),
        RegKind::EntrywiseL1 => (
            data.iter().map(|v| v.abs()).sum(),
            data.iter()
                .map(|&v| if v == 0.0 { 0.0 } else { v.signum() })
                .collect(),
        ),
        RegKind::L21 => {
            let mut value = 0.0;
            let mut grad = vec![0.0; data.len()];
            for r in 0..rows {
                let row = m.row(r);
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                value += norm;
                if norm > 0.0 {
                    for (g, v) in grad[r * cols..(r + 1) * cols].iter_mut().zip(row) {
                        *g = v / norm;
                    }
                }
            }
            (value, grad)
        }
        RegKind::TraceNorm => {
            let s = svd(m);
            let smax = s.sigma.first().copied().unwrap_or(0.0);
            let tol = smax * (rows.max(cols) as f64) * f64::EPSILON;
            let grad = Matrix::from_fn(rows, cols, |i, j| {
                s.sigma
                    .iter()
                    .enumerate()
                    .filter(|(_, &sv)| sv > tol)
                    .map(|(k, _)| s.u[(i, k)] * s.v[(j, k)])
                    .sum()
            });
            (s.sigma.iter().sum(), grad.as_slice().to_vec())
        }
    };
    let grad = Matrix::new(rows, cols, grad.into_iter().map(|g| lambda * g).collect())
        .expect("finite subgradient");
    (lambda * value, grad)
}

/// Penalty on a raw parameter block; tensors are treated entrywise.
pub fn block_penalty(kind: RegKind, shape: BlockShape, data: &[f64], lambda: f64) -> Result<(f64, Vec<f64>)> {
    let (rows, cols) = match shape {
        BlockShape::Matrix(r, c) => (r, c),
        BlockShape::Tensor(d) if !kind.matrix_only() => (1, d.iter().product()),
        BlockShape::Tensor(_) => {
            return Err(Error::InvalidValue(format!(
                "{kind} only applies to matrix blocks"
            )))
        }
    };
    let m = Matrix::new(rows, cols, data.to_vec())?;
    let (v, g) = reg_value_subgrad(kind, &m, lambda);
    Ok((v, g.as_slice().to_vec()))
}
