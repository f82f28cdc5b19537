//! The unified model type driven by the trainer, persistence and CLI.

use std::fmt;

use crate::error::{shape_err, Error, Result};
use crate::multi::{CpModel, TtModel, TuckerModel};
use crate::single::SingleOutputModel;
use crate::tensor::{Matrix, Tensor3};

/// Named parameter block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BlockId {
    P,
    Q,
    UD,
    UC,
    UB,
    S,
    W,
}

impl BlockId {
    pub const ALL: [BlockId; 7] = [
        BlockId::P,
        BlockId::Q,
        BlockId::UD,
        BlockId::UC,
        BlockId::UB,
        BlockId::S,
        BlockId::W,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BlockId::P => "P",
            BlockId::Q => "Q",
            BlockId::UD => "U_D",
            BlockId::UC => "U_C",
            BlockId::UB => "U_B",
            BlockId::S => "S",
            BlockId::W => "W",
        }
    }

    pub fn parse(name: &str) -> Result<BlockId> {
        let norm = name.trim().to_ascii_uppercase().replace('_', "");
        BlockId::ALL
            .into_iter()
            .find(|b| b.name().replace('_', "") == norm)
            .ok_or_else(|| Error::InvalidValue(format!("unknown parameter block '{name}'")))
    }
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockShape {
    Matrix(usize, usize),
    Tensor([usize; 3]),
}

impl BlockShape {
    pub fn len(self) -> usize {
        match self {
            BlockShape::Matrix(r, c) => r * c,
            BlockShape::Tensor(d) => d.iter().product(),
        }
    }

    pub fn is_empty(self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockSpec {
    pub id: BlockId,
    pub shape: BlockShape,
    pub frozen: bool,
}

/// Implemented by every concrete architecture. Methods skip shape checks;
/// [`FactorizedModel`] validates before dispatching.
pub(crate) trait Params {
    fn block_specs(&self) -> Vec<BlockSpec>;
    fn block_data(&self) -> Vec<&[f64]>;
    fn block_data_mut(&mut self) -> Vec<&mut [f64]>;
    fn feature_dim(&self) -> usize;
    fn descriptor_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn scores_raw(&self, x: &[f64], z: &[f64]) -> Vec<f64>;
    /// Accumulate `∂(dyᵀ y)/∂θ` into `grads` (aligned with `block_specs`);
    /// frozen blocks are left untouched.
    fn backward_raw(&self, x: &[f64], z: &[f64], dy: &[f64], grads: &mut [Vec<f64>]);
    fn weight_matrix_raw(&self, z: &[f64]) -> Matrix;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Single,
    Cp,
    Tucker,
    Tt,
    Full,
}

impl ModelKind {
    pub fn tag(self) -> &'static str {
        match self {
            ModelKind::Single => "single",
            ModelKind::Cp => "cp",
            ModelKind::Tucker => "tucker",
            ModelKind::Tt => "tt",
            ModelKind::Full => "full",
        }
    }

    pub fn from_tag(tag: &str) -> Result<ModelKind> {
        match tag {
            "single" => Ok(ModelKind::Single),
            "cp" => Ok(ModelKind::Cp),
            "tucker" => Ok(ModelKind::Tucker),
            "tt" => Ok(ModelKind::Tt),
            "full" => Ok(ModelKind::Full),
            other => Err(Error::InvalidValue(format!("unknown model kind '{other}'"))),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Unfactorised weight-generating tensor `𝒲` (`D×C×B`).
#[derive(Debug, Clone, PartialEq)]
pub struct FullTensorModel {
    pub w: Tensor3,
}

impl Params for FullTensorModel {
    fn block_specs(&self) -> Vec<BlockSpec> {
        vec![BlockSpec {
            id: BlockId::W,
            shape: BlockShape::Tensor(self.w.dims()),
            frozen: false,
        }]
    }

    fn block_data(&self) -> Vec<&[f64]> {
        vec![self.w.as_slice()]
    }

    fn block_data_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.w.as_mut_slice()]
    }

    fn feature_dim(&self) -> usize {
        self.w.dims()[0]
    }

    fn descriptor_dim(&self) -> usize {
        self.w.dims()[2]
    }

    fn output_dim(&self) -> usize {
        self.w.dims()[1]
    }

    fn scores_raw(&self, x: &[f64], z: &[f64]) -> Vec<f64> {
        self.weight_matrix_raw(z).t_matvec_raw(x)
    }

    fn backward_raw(&self, x: &[f64], z: &[f64], dy: &[f64], grads: &mut [Vec<f64>]) {
        let g = &mut grads[0];
        let [_, c, b] = self.w.dims();
        for (i, xi) in x.iter().enumerate() {
            if *xi == 0.0 {
                continue;
            }
            for (j, dj) in dy.iter().enumerate() {
                let base = (i * c + j) * b;
                let s = xi * dj;
                for (k, zk) in z.iter().enumerate() {
                    g[base + k] += s * zk;
                }
            }
        }
    }

    fn weight_matrix_raw(&self, z: &[f64]) -> Matrix {
        self.w
            .mode_product(z, crate::tensor::Mode::Third)
            .expect("descriptor length checked by caller")
    }
}

/// Any of the supported weight-generating parametrisations.
#[derive(Debug, Clone, PartialEq)]
pub enum FactorizedModel {
    Single(SingleOutputModel),
    Cp(CpModel),
    Tucker(TuckerModel),
    Tt(TtModel),
    Full(FullTensorModel),
}

macro_rules! dispatch {
    ($self:expr, $m:ident => $e:expr) => {
        match $self {
            FactorizedModel::Single($m) => $e,
            FactorizedModel::Cp($m) => $e,
            FactorizedModel::Tucker($m) => $e,
            FactorizedModel::Tt($m) => $e,
            FactorizedModel::Full($m) => $e,
        }
    };
}

impl FactorizedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            FactorizedModel::Single(_) => ModelKind::Single,
            FactorizedModel::Cp(_) => ModelKind::Cp,
            FactorizedModel::Tucker(_) => ModelKind::Tucker,
            FactorizedModel::Tt(_) => ModelKind::Tt,
            FactorizedModel::Full(_) => ModelKind::Full,
        }
    }

    /// Feature dimension `D`.
    pub fn feature_dim(&self) -> usize {
        dispatch!(self, m => m.feature_dim())
    }

    /// Descriptor dimension `B`.
    pub fn descriptor_dim(&self) -> usize {
        dispatch!(self, m => m.descriptor_dim())
    }

    /// Number of scores per prediction (`C`, or 1 for single-output).
    pub fn output_dim(&self) -> usize {
        dispatch!(self, m => m.output_dim())
    }

    pub fn block_specs(&self) -> Vec<BlockSpec> {
        dispatch!(self, m => m.block_specs())
    }

    pub fn block_data(&self) -> Vec<&[f64]> {
        dispatch!(self, m => m.block_data())
    }

    pub fn block_data_mut(&mut self) -> Vec<&mut [f64]> {
        dispatch!(self, m => m.block_data_mut())
    }

    pub fn parameter_count(&self) -> usize {
        self.block_specs().iter().map(|b| b.shape.len()).sum()
    }

    pub fn trainable_parameter_count(&self) -> usize {
        self.block_specs()
            .iter()
            .filter(|b| !b.frozen)
            .map(|b| b.shape.len())
            .sum()
    }

    fn check_inputs(&self, x: Option<&[f64]>, z: &[f64]) -> Result<()> {
        if let Some(x) = x {
            if x.len() != self.feature_dim() {
                return shape_err(format!(
                    "feature vector has length {}, model expects D = {}",
                    x.len(),
                    self.feature_dim()
                ));
            }
        }
        if z.len() != self.descriptor_dim() {
            return shape_err(format!(
                "descriptor has length {}, model expects B = {}",
                z.len(),
                self.descriptor_dim()
            ));
        }
        Ok(())
    }

    /// Raw scores (`C` of them, or one for single-output models).
    pub fn scores(&self, x: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        self.check_inputs(Some(x), z)?;
        Ok(dispatch!(self, m => m.scores_raw(x, z)))
    }

    /// Predicted class: `sign` mapped to {0, 1} for single-output models,
    /// argmax (lowest index on ties) otherwise.
    pub fn predict_class(&self, x: &[f64], z: &[f64]) -> Result<usize> {
        let s = self.scores(x, z)?;
        Ok(class_of(&s))
    }

    /// Generated weight matrix `W⁽ⁱ⁾` (`D×C`) for descriptor `z`.
    pub fn weight_matrix(&self, z: &[f64]) -> Result<Matrix> {
        self.check_inputs(None, z)?;
        Ok(dispatch!(self, m => m.weight_matrix_raw(z)))
    }

    pub fn zero_grads(&self) -> Vec<Vec<f64>> {
        self.block_specs()
            .iter()
            .map(|b| vec![0.0; b.shape.len()])
            .collect()
    }

    /// Accumulate the gradient of `dyᵀ·scores(x, z)` into `grads`.
    pub fn backward(&self, x: &[f64], z: &[f64], dy: &[f64], grads: &mut [Vec<f64>]) -> Result<()> {
        self.check_inputs(Some(x), z)?;
        if dy.len() != self.output_dim() {
            return shape_err(format!(
                "score gradient has length {}, model has {} outputs",
                dy.len(),
                self.output_dim()
            ));
        }
        dispatch!(self, m => m.backward_raw(x, z, dy, grads));
        Ok(())
    }

    /// Copy of a block as a matrix (tensors are returned in mode-1 unfolded
    /// form `dim1 × dim2·dim3`).
    pub fn block_matrix(&self, id: BlockId) -> Option<Matrix> {
        let specs = self.block_specs();
        let data = self.block_data();
        specs.iter().zip(data).find(|(s, _)| s.id == id).map(|(s, d)| {
            let (r, c) = match s.shape {
                BlockShape::Matrix(r, c) => (r, c),
                BlockShape::Tensor([a, b, c]) => (a, b * c),
            };
            Matrix::new(r, c, d.to_vec()).expect("block data is consistent")
        })
    }
}

/// Class rule for raw scores: `score > 0` for one output, otherwise argmax
/// with ties to the lowest index.
pub fn class_of(scores: &[f64]) -> usize {
    if scores.len() == 1 {
        (scores[0] > 0.0) as usize
    } else {
        let mut best = 0;
        for (i, s) in scores.iter().enumerate() {
            if *s > scores[best] {
                best = i;
            }
        }
        best
    }
}

impl From<SingleOutputModel> for FactorizedModel {
    fn from(m: SingleOutputModel) -> Self {
        FactorizedModel::Single(m)
    }
}

impl From<CpModel> for FactorizedModel {
    fn from(m: CpModel) -> Self {
        FactorizedModel::Cp(m)
    }
}

impl From<TuckerModel> for FactorizedModel {
    fn from(m: TuckerModel) -> Self {
        FactorizedModel::Tucker(m)
    }
}

impl From<TtModel> for FactorizedModel {
    fn from(m: TtModel) -> Self {
        FactorizedModel::Tt(m)
    }
}

impl From<FullTensorModel> for FactorizedModel {
    fn from(m: FullTensorModel) -> Self {
        FactorizedModel::Full(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_names_round_trip() {
        for b in BlockId::ALL {
            assert_eq!(BlockId::parse(b.name()).unwrap(), b);
        }
        assert_eq!(BlockId::parse("ud").unwrap(), BlockId::UD);
        assert!(BlockId::parse("X").is_err());
    }

    #[test]
    fn class_rule() {
        assert_eq!(class_of(&[0.3]), 1);
        assert_eq!(class_of(&[0.0]), 0);
        assert_eq!(class_of(&[-1.0]), 0);
        assert_eq!(class_of(&[1.0, 3.0, 3.0]), 1);
    }

    #[test]
    fn full_tensor_one_hot_slices() {
        let w = Tensor3::from_fn([3, 2, 4], |i, j, k| (i * 100 + j * 10 + k) as f64);
        let m = FactorizedModel::Full(FullTensorModel { w: w.clone() });
        let z = [0.0, 0.0, 1.0, 0.0];
        assert_eq!(m.weight_matrix(&z).unwrap(), w.frontal_slice(2));
        let x = [1.0, -1.0, 2.0];
        let y = m.scores(&x, &z).unwrap();
        for c in 0..2 {
            let expect: f64 = (0..3).map(|d| x[d] * w[(d, c, 2)]).sum();
            assert_eq!(y[c], expect);
        }
        assert!(m.scores(&x[..2], &z).is_err());
        assert!(m.weight_matrix(&z[..3]).is_err());
    }
}
