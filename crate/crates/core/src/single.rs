//! Single-output bilinear model `ŷ = xᵀ P Q z` and the classic MTL presets.

use std::sync::Arc;

use rand::Rng;

use crate::descriptors::{build_z, DomainSchema};
use crate::error::{shape_err, Error, Result};
use crate::model::{BlockId, BlockShape, BlockSpec, Params};
use crate::regularizers::RegKind;
use crate::tensor::{dot, Matrix, Vector};

/// `w(z) = P Q z` with `P` `D×K` and `Q` `K×B`.
///
/// When `fixed_p` is set, `P` is the constant `D×D` identity and only `Q` is
/// learned.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleOutputModel {
    p: Matrix,
    q: Matrix,
    fixed_p: bool,
}

/// Uniform `[-s, s]` entries with `s = 1/sqrt(fan_in)`.
pub(crate) fn init_uniform(rows: usize, cols: usize, fan_in: usize, rng: &mut impl Rng) -> Matrix {
    let s = 1.0 / (fan_in.max(1) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-s..=s))
}

impl SingleOutputModel {
    pub fn new(p: Matrix, q: Matrix) -> Result<Self> {
        if p.cols() != q.rows() {
            return shape_err(format!(
                "P is {}x{} but Q is {}x{}; inner rank must agree",
                p.rows(),
                p.cols(),
                q.rows(),
                q.cols()
            ));
        }
        Ok(SingleOutputModel {
            p,
            q,
            fixed_p: false,
        })
    }

    /// `P = I_D` held constant; `Q` is `D×B`.
    pub fn with_fixed_identity(q: Matrix) -> Self {
        SingleOutputModel {
            p: Matrix::identity(q.rows()),
            q,
            fixed_p: true,
        }
    }

    pub fn init(d: usize, k: usize, b: usize, rng: &mut impl Rng) -> Self {
        let p = init_uniform(d, k, d, rng);
        let q = init_uniform(k, b, b, rng);
        SingleOutputModel {
            p,
            q,
            fixed_p: false,
        }
    }

    pub(crate) fn from_parts(p: Matrix, q: Matrix, fixed_p: bool) -> Result<Self> {
        let mut m = Self::new(p, q)?;
        m.fixed_p = fixed_p;
        Ok(m)
    }

    pub fn init_fixed_identity(d: usize, b: usize, rng: &mut impl Rng) -> Self {
        Self::with_fixed_identity(init_uniform(d, b, b, rng))
    }

    pub fn p(&self) -> &Matrix {
        &self.p
    }

    pub fn q(&self) -> &Matrix {
        &self.q
    }

    pub fn fixed_p(&self) -> bool {
        self.fixed_p
    }

    pub fn rank(&self) -> usize {
        self.p.cols()
    }

    fn check_z(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.q.cols() {
            return shape_err(format!(
                "descriptor has length {}, model expects B = {}",
                z.len(),
                self.q.cols()
            ));
        }
        Ok(())
    }

    /// `w = P Q z`
    pub fn generate_weights(&self, z: &[f64]) -> Result<Vector> {
        self.check_z(z)?;
        let qz = self.q.matvec_raw(z);
        let w = if self.fixed_p {
            qz
        } else {
            self.p.matvec_raw(&qz)
        };
        Ok(Vector::from_vec_unchecked(w))
    }

    /// `ŷ = xᵀ P Q z`, evaluated as `(Pᵀx)·(Qz)`.
    pub fn predict(&self, x: &[f64], z: &[f64]) -> Result<f64> {
        self.check_z(z)?;
        if x.len() != self.p.rows() {
            return shape_err(format!(
                "feature vector has length {}, model expects D = {}",
                x.len(),
                self.p.rows()
            ));
        }
        Ok(self.score(x, z))
    }

    fn left(&self, x: &[f64]) -> Vec<f64> {
        if self.fixed_p {
            x.to_vec()
        } else {
            self.p.t_matvec_raw(x)
        }
    }

    fn score(&self, x: &[f64], z: &[f64]) -> f64 {
        dot(&self.left(x), &self.q.matvec_raw(z))
    }
}

impl Params for SingleOutputModel {
    fn block_specs(&self) -> Vec<BlockSpec> {
        vec![
            BlockSpec {
                id: BlockId::P,
                shape: BlockShape::Matrix(self.p.rows(), self.p.cols()),
                frozen: self.fixed_p,
            },
            BlockSpec {
                id: BlockId::Q,
                shape: BlockShape::Matrix(self.q.rows(), self.q.cols()),
                frozen: false,
            },
        ]
    }

    fn block_data(&self) -> Vec<&[f64]> {
        vec![self.p.as_slice(), self.q.as_slice()]
    }

    fn block_data_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.p.as_mut_slice(), self.q.as_mut_slice()]
    }

    fn feature_dim(&self) -> usize {
        self.p.rows()
    }

    fn descriptor_dim(&self) -> usize {
        self.q.cols()
    }

    fn output_dim(&self) -> usize {
        1
    }

    fn scores_raw(&self, x: &[f64], z: &[f64]) -> Vec<f64> {
        vec![self.score(x, z)]
    }

    fn backward_raw(&self, x: &[f64], z: &[f64], dy: &[f64], grads: &mut [Vec<f64>]) {
        let g = dy[0];
        if g == 0.0 {
            return;
        }
        let a = self.left(x);
        let b = self.q.matvec_raw(z);
        let k = self.rank();
        if !self.fixed_p {
            // ∂/∂P = g · x bᵀ
            let gp = &mut grads[0];
            for (d, xd) in x.iter().enumerate() {
                if *xd == 0.0 {
                    continue;
                }
                for (kk, bk) in b.iter().enumerate() {
                    gp[d * k + kk] += g * xd * bk;
                }
            }
        }
        // ∂/∂Q = g · a zᵀ
        let gq = &mut grads[1];
        let bdim = z.len();
        for (kk, ak) in a.iter().enumerate() {
            for (j, zj) in z.iter().enumerate() {
                if *zj != 0.0 {
                    gq[kk * bdim + j] += g * ak * zj;
                }
            }
        }
    }

    fn weight_matrix_raw(&self, z: &[f64]) -> Matrix {
        let w = self.generate_weights(z).expect("descriptor length checked by caller");
        Matrix::new(w.len(), 1, w.into_vec()).expect("finite weights")
    }
}

/// Existing MTL/MDL methods expressed as settings of `Z`, `P` and `Q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodPreset {
    /// one-hot + constant `Z`, identity `P`, no norms
    RmtlFeda,
    /// one-hot `Z`, identity `P`, ℓ2,1 on `Q`
    Mtfl,
    /// one-hot `Z`, identity `P`, trace norm on `Q`
    Tnmtl,
    /// one-hot `Z`, Frobenius on `P`, entrywise ℓ1 on `Q`
    Gomtl,
    /// one-hot `Z`, learned `P`, no norms
    Free,
}

impl MethodPreset {
    pub fn tag(self) -> &'static str {
        match self {
            MethodPreset::RmtlFeda => "rmtl_feda",
            MethodPreset::Mtfl => "mtfl",
            MethodPreset::Tnmtl => "tnmtl",
            MethodPreset::Gomtl => "gomtl",
            MethodPreset::Free => "free",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "rmtl_feda" | "rmtl" | "feda" => Ok(MethodPreset::RmtlFeda),
            "mtfl" => Ok(MethodPreset::Mtfl),
            "tnmtl" => Ok(MethodPreset::Tnmtl),
            "gomtl" | "go_mtl" => Ok(MethodPreset::Gomtl),
            "free" | "none" => Ok(MethodPreset::Free),
            other => Err(Error::InvalidValue(format!("unknown preset '{other}'"))),
        }
    }

    pub fn fixed_p(self) -> bool {
        !matches!(self, MethodPreset::Gomtl | MethodPreset::Free)
    }

    pub fn schema(self, m: usize) -> Result<DomainSchema> {
        match self {
            MethodPreset::RmtlFeda => DomainSchema::one_hot_const(m),
            _ => DomainSchema::one_hot(m),
        }
    }

    pub fn regularizers(self) -> Vec<(BlockId, RegKind)> {
        match self {
            MethodPreset::RmtlFeda | MethodPreset::Free => vec![],
            MethodPreset::Mtfl => vec![(BlockId::Q, RegKind::L21)],
            MethodPreset::Tnmtl => vec![(BlockId::Q, RegKind::TraceNorm)],
            MethodPreset::Gomtl => vec![
                (BlockId::P, RegKind::Frobenius),
                (BlockId::Q, RegKind::EntrywiseL1),
            ],
        }
    }
}

#[derive(Debug, Clone)]
pub struct PresetSetup {
    pub model: SingleOutputModel,
    pub schema: Arc<DomainSchema>,
    /// Stacked descriptors of all `M` domains (`B×M`).
    pub z: Matrix,
    pub regularizers: Vec<(BlockId, RegKind)>,
}

/// Model skeleton, descriptor matrix and regulariser kinds for a preset.
/// `rank` is only used by presets with a learned `P`; it defaults to
/// [`default_rank`].
pub fn apply_preset(
    preset: MethodPreset,
    d: usize,
    m: usize,
    rank: Option<usize>,
    rng: &mut impl Rng,
) -> Result<PresetSetup> {
    if d == 0 {
        return Err(Error::InvalidValue("feature dimension must be >= 1".into()));
    }
    let schema = Arc::new(preset.schema(m)?);
    let b = schema.descriptor_len();
    let descriptors = (0..m)
        .map(|i| schema.encode_domain(i))
        .collect::<Result<Vec<_>>>()?;
    let z = build_z(&descriptors)?;
    let model = if preset.fixed_p() {
        SingleOutputModel::init_fixed_identity(d, b, rng)
    } else {
        SingleOutputModel::init(d, rank.unwrap_or_else(|| default_rank(d)), b, rng)
    };
    Ok(PresetSetup {
        model,
        schema,
        z,
        regularizers: preset.regularizers(),
    })
}

/// `K = D / ln D`, rounded, at least 1.
pub fn default_rank(d: usize) -> usize {
    if d < 3 {
        return 1;
    }
    let d = d as f64;
    ((d / d.ln()).round() as usize).max(1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FactorizedModel;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn identity_factors_select_column() {
        let m = SingleOutputModel::new(Matrix::identity(3), Matrix::identity(3)).unwrap();
        let w = m.generate_weights(&[0.0, 1.0, 0.0]).unwrap();
        assert_eq!(w.as_slice(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn one_hot_const_sums_specific_and_shared_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = rand_matrix(&mut rng, 4, 4);
        let m = SingleOutputModel::with_fixed_identity(q.clone());
        let w = m.generate_weights(&[0.0, 1.0, 0.0, 1.0]).unwrap();
        for d in 0..4 {
            assert_eq!(w[d], q[(d, 1)] + q[(d, 3)]);
        }
    }

    #[test]
    fn weights_match_two_step_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (p, q) = (rand_matrix(&mut rng, 5, 2), rand_matrix(&mut rng, 2, 3));
        let z = [0.3, -1.2, 0.7];
        let m = SingleOutputModel::new(p.clone(), q.clone()).unwrap();
        let w = m.generate_weights(&z).unwrap();
        for d in 0..5 {
            let mut acc = 0.0;
            for k in 0..2 {
                let mut qz = 0.0;
                for (b, zb) in z.iter().enumerate() {
                    qz += q[(k, b)] * zb;
                }
                acc += p[(d, k)] * qz;
            }
            assert!((w[d] - acc).abs() < 1e-14);
        }
    }

    #[test]
    fn predict_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = SingleOutputModel::new(rand_matrix(&mut rng, 4, 2), rand_matrix(&mut rng, 2, 3)).unwrap();
        let z = [1.0, 0.0, 1.0];
        let w = m.generate_weights(&z).unwrap();
        // x orthogonal to w
        let x = [w[1], -w[0], 0.0, 0.0];
        assert!(m.predict(&x, &z).unwrap().abs() < 1e-15);

        let x = [0.2, -0.4, 1.5, 0.9];
        let y = m.predict(&x, &z).unwrap();
        let via_w = dot(&x, w.as_slice());
        assert!((y - via_w).abs() <= 1e-12 * y.abs().max(1e-300));

        // rank-1 W = u vᵀ
        let u = Matrix::new(3, 1, vec![1.0, 2.0, -1.0]).unwrap();
        let v = Matrix::new(1, 2, vec![3.0, 0.5]).unwrap();
        let m = SingleOutputModel::new(u, v).unwrap();
        let (x, z) = ([1.0, 1.0, 1.0], [2.0, 4.0]);
        assert_eq!(m.predict(&x, &z).unwrap(), 2.0 * 8.0);

        assert!(m.predict(&[1.0], &z).is_err());
        assert!(m.generate_weights(&[1.0]).is_err());
        assert!(SingleOutputModel::new(Matrix::zeros(3, 2), Matrix::zeros(3, 2)).is_err());
    }

    #[test]
    fn presets_follow_table() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = apply_preset(MethodPreset::RmtlFeda, 6, 3, None, &mut rng).unwrap();
        let expected = Matrix::from_rows(&[
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![1.0, 1.0, 1.0],
        ])
        .unwrap();
        assert_eq!(s.z, expected);
        assert!(s.model.fixed_p() && s.model.p() == &Matrix::identity(6));
        assert!(s.regularizers.is_empty());

        let s = apply_preset(MethodPreset::Gomtl, 6, 3, Some(2), &mut rng).unwrap();
        assert_eq!(
            s.regularizers,
            vec![(BlockId::P, RegKind::Frobenius), (BlockId::Q, RegKind::EntrywiseL1)]
        );
        assert_eq!(s.z, Matrix::identity(3));
        assert_eq!(s.model.rank(), 2);
        assert!(!s.model.fixed_p());

        let s = apply_preset(MethodPreset::Mtfl, 6, 3, None, &mut rng).unwrap();
        assert_eq!(s.regularizers, vec![(BlockId::Q, RegKind::L21)]);
        let s = apply_preset(MethodPreset::Tnmtl, 6, 3, None, &mut rng).unwrap();
        assert_eq!(s.regularizers, vec![(BlockId::Q, RegKind::TraceNorm)]);
        assert_eq!(s.model.q().shape(), (6, 3));
    }

    #[test]
    fn rank_heuristic() {
        assert_eq!(default_rank(50), 13);
        assert_eq!(default_rank(512), 82);
        assert_eq!(default_rank(1), 1);
        assert_eq!(default_rank(3), 3);
    }

    #[test]
    fn one_hot_gradients_do_not_touch_other_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m: FactorizedModel = SingleOutputModel::init_fixed_identity(5, 3, &mut rng).into();
        let mut g = m.zero_grads();
        m.backward(&[1.0, -2.0, 0.5, 0.1, 3.0], &[0.0, 1.0, 0.0], &[0.7], &mut g)
            .unwrap();
        assert!(g[0].iter().all(|&v| v == 0.0), "fixed P gets no gradient");
        for k in 0..5 {
            assert_eq!(g[1][k * 3], 0.0);
            assert_eq!(g[1][k * 3 + 2], 0.0);
            assert_ne!(g[1][k * 3 + 1], 0.0);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::{any, prop_assert, proptest};

        proptest! {
            #[test]
            fn bilinear_in_x_and_z(seed in any::<u64>(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let m = SingleOutputModel::new(rand_matrix(&mut rng, 4, 3), rand_matrix(&mut rng, 3, 5)).unwrap();
                let v = |rng: &mut ChaCha8Rng, n| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
                let (x1, x2, z1, z2) = (v(&mut rng, 4), v(&mut rng, 4), v(&mut rng, 5), v(&mut rng, 5));
                let mix = |u: &[f64], w: &[f64]| u.iter().zip(w).map(|(p, q)| a * p + b * q).collect::<Vec<_>>();
                let close = |l: f64, r: f64| (l - r).abs() <= 1e-12 * l.abs().max(r.abs()).max(1.0);

                let lhs = m.predict(&mix(&x1, &x2), &z1).unwrap();
                let rhs = a * m.predict(&x1, &z1).unwrap() + b * m.predict(&x2, &z1).unwrap();
                prop_assert!(close(lhs, rhs));

                let lhs = m.predict(&x1, &mix(&z1, &z2)).unwrap();
                let rhs = a * m.predict(&x1, &z1).unwrap() + b * m.predict(&x1, &z2).unwrap();
                prop_assert!(close(lhs, rhs));
            }
        }
    }
}
