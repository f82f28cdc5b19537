//! Multi-output (gated) networks whose `D×C` weight matrix is generated from
//! the descriptor through a CP, Tucker or tensor-train factorised tensor.
//!
//! | model  | factors                                                    |
//! |--------|------------------------------------------------------------|
//! | CP     | `U_D` K×D, `U_C` K×C, `U_B` K×B                            |
//! | Tucker | `U_D` K_D×D, `U_C` K_C×C, `U_B` K_B×B, `S` K_D×K_C×K_B     |
//! | TT     | `U_D` D×K_D, `U_B` K_B×B, `S` K_D×C×K_B                    |
//!
//! Each model predicts along the factorised path (Hadamard or Kronecker
//! layer) and can compose its full `D×C×B` tensor for reference.

use rand::Rng;

use crate::error::{shape_err, Result};
use crate::model::{BlockId, BlockShape, BlockSpec, FactorizedModel, FullTensorModel, Params};
use crate::single::{init_uniform, SingleOutputModel};
use crate::tensor::{compose_cp, compose_tt, compose_tucker, dot, kron, Matrix, Mode, Tensor3};

fn mat_spec(id: BlockId, m: &Matrix, frozen: bool) -> BlockSpec {
    BlockSpec {
        id,
        shape: BlockShape::Matrix(m.rows(), m.cols()),
        frozen,
    }
}

fn tensor_spec(id: BlockId, t: &Tensor3, frozen: bool) -> BlockSpec {
    BlockSpec {
        id,
        shape: BlockShape::Tensor(t.dims()),
        frozen,
    }
}

// g[r, j] += a[r] * v[j] for a row-major `a.len() × v.len()` block
fn add_outer(g: &mut [f64], a: &[f64], v: &[f64]) {
    let n = v.len();
    for (r, ar) in a.iter().enumerate() {
        if *ar == 0.0 {
            continue;
        }
        for (dst, vj) in g[r * n..(r + 1) * n].iter_mut().zip(v) {
            *dst += ar * vj;
        }
    }
}

/// CP network: `y = U_Cᵀ ((U_D x) ∘ (U_B z))`.
#[derive(Debug, Clone, PartialEq)]
pub struct CpModel {
    pub u_d: Matrix,
    pub u_c: Matrix,
    pub u_b: Matrix,
}

impl CpModel {
    pub fn new(u_d: Matrix, u_c: Matrix, u_b: Matrix) -> Result<Self> {
        if u_c.rows() != u_d.rows() || u_b.rows() != u_d.rows() {
            return shape_err(format!(
                "CP factors need a shared rank, got {}, {}, {}",
                u_d.rows(),
                u_c.rows(),
                u_b.rows()
            ));
        }
        Ok(CpModel { u_d, u_c, u_b })
    }

    pub fn init(d: usize, c: usize, b: usize, k: usize, rng: &mut impl Rng) -> Self {
        CpModel {
            u_d: init_uniform(k, d, d, rng),
            u_c: init_uniform(k, c, k, rng),
            u_b: init_uniform(k, b, b, rng),
        }
    }

    pub fn rank(&self) -> usize {
        self.u_d.rows()
    }

    pub fn compose(&self) -> Tensor3 {
        compose_cp(&self.u_d, &self.u_c, &self.u_b).expect("validated ranks")
    }

    /// Scores via the Hadamard path.
    pub fn predict(&self, x: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        FactorizedModel::Cp(self.clone()).scores(x, z)
    }

    fn gated(&self, x: &[f64], z: &[f64]) -> (Vec<f64>, Vec<f64>) {
        (self.u_d.matvec_raw(x), self.u_b.matvec_raw(z))
    }
}

impl Params for CpModel {
    fn block_specs(&self) -> Vec<BlockSpec> {
        vec![
            mat_spec(BlockId::UD, &self.u_d, false),
            mat_spec(BlockId::UC, &self.u_c, false),
            mat_spec(BlockId::UB, &self.u_b, false),
        ]
    }

    fn block_data(&self) -> Vec<&[f64]> {
        vec![self.u_d.as_slice(), self.u_c.as_slice(), self.u_b.as_slice()]
    }

    fn block_data_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.u_d.as_mut_slice(),
            self.u_c.as_mut_slice(),
            self.u_b.as_mut_slice(),
        ]
    }

    fn feature_dim(&self) -> usize {
        self.u_d.cols()
    }

    fn descriptor_dim(&self) -> usize {
        self.u_b.cols()
    }

    fn output_dim(&self) -> usize {
        self.u_c.cols()
    }

    fn scores_raw(&self, x: &[f64], z: &[f64]) -> Vec<f64> {
        let (a, b) = self.gated(x, z);
        let h: Vec<f64> = a.iter().zip(&b).map(|(p, q)| p * q).collect();
        self.u_c.t_matvec_raw(&h)
    }

    fn backward_raw(&self, x: &[f64], z: &[f64], dy: &[f64], grads: &mut [Vec<f64>]) {
        let (a, b) = self.gated(x, z);
        let h: Vec<f64> = a.iter().zip(&b).map(|(p, q)| p * q).collect();
        let dh = self.u_c.matvec_raw(dy);
        let da: Vec<f64> = dh.iter().zip(&b).map(|(p, q)| p * q).collect();
        let db: Vec<f64> = dh.iter().zip(&a).map(|(p, q)| p * q).collect();
        add_outer(&mut grads[0], &da, x);
        add_outer(&mut grads[1], &h, dy);
        add_outer(&mut grads[2], &db, z);
    }

    fn weight_matrix_raw(&self, z: &[f64]) -> Matrix {
        // U_Dᵀ diag(U_B z) U_C
        let b = self.u_b.matvec_raw(z);
        Matrix::from_fn(self.u_d.cols(), self.u_c.cols(), |d, c| {
            (0..self.rank())
                .map(|k| self.u_d[(k, d)] * b[k] * self.u_c[(k, c)])
                .sum()
        })
    }
}

/// Which Tucker factors are constants rather than learned parameters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FrozenFactors {
    pub u_d: bool,
    pub u_c: bool,
    pub u_b: bool,
    pub s: bool,
}

/// Tucker network: `y = ((U_D x) ⊗ (U_B z)) S₍₂₎ᵀ U_C`.
#[derive(Debug, Clone, PartialEq)]
pub struct TuckerModel {
    pub s: Tensor3,
    pub u_d: Matrix,
    pub u_c: Matrix,
    pub u_b: Matrix,
    pub frozen: FrozenFactors,
}

impl TuckerModel {
    pub fn new(s: Tensor3, u_d: Matrix, u_c: Matrix, u_b: Matrix) -> Result<Self> {
        let [kd, kc, kb] = s.dims();
        if u_d.rows() != kd || u_c.rows() != kc || u_b.rows() != kb {
            return shape_err(format!(
                "Tucker core {:?} does not match factor ranks ({}, {}, {})",
                s.dims(),
                u_d.rows(),
                u_c.rows(),
                u_b.rows()
            ));
        }
        Ok(TuckerModel {
            s,
            u_d,
            u_c,
            u_b,
            frozen: FrozenFactors::default(),
        })
    }

    pub fn init(d: usize, c: usize, b: usize, ranks: [usize; 3], rng: &mut impl Rng) -> Self {
        let [kd, kc, kb] = ranks;
        let u_d = init_uniform(kd, d, d, rng);
        let u_c = init_uniform(kc, c, kc, rng);
        let u_b = init_uniform(kb, b, b, rng);
        let s_scale = 1.0 / ((kd * kb) as f64).sqrt();
        let s = Tensor3::from_fn(ranks, |_, _, _| rng.gen_range(-s_scale..=s_scale));
        TuckerModel {
            s,
            u_d,
            u_c,
            u_b,
            frozen: FrozenFactors::default(),
        }
    }

    pub fn ranks(&self) -> [usize; 3] {
        self.s.dims()
    }

    pub fn compose(&self) -> Tensor3 {
        compose_tucker(&self.s, &self.u_d, &self.u_c, &self.u_b).expect("validated ranks")
    }

    /// Scores via the Kronecker path.
    pub fn predict(&self, x: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        FactorizedModel::Tucker(self.clone()).scores(x, z)
    }

    fn core_out(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        self.s.mode2_unfold_matvec(&kron(a, b))
    }
}

// da[kd] = Σ_{kc,kb} S[kd,kc,kb] dt[kc] b[kb], db[kb] = Σ S a dt, dS += a∘dt∘b
fn core_backward(
    s: &Tensor3,
    a: &[f64],
    b: &[f64],
    dt: &[f64],
    grad_s: Option<&mut [f64]>,
) -> (Vec<f64>, Vec<f64>) {
    let [kd, kc, kb] = s.dims();
    let mut da = vec![0.0; kd];
    let mut db = vec![0.0; kb];
    let data = s.as_slice();
    for p in 0..kd {
        for q in 0..kc {
            let base = (p * kc + q) * kb;
            let row = &data[base..base + kb];
            da[p] += dt[q] * dot(row, b);
            let w = a[p] * dt[q];
            if w != 0.0 {
                for (dbr, sr) in db.iter_mut().zip(row) {
                    *dbr += w * sr;
                }
            }
        }
    }
    if let Some(gs) = grad_s {
        for p in 0..kd {
            for q in 0..kc {
                let w = a[p] * dt[q];
                if w == 0.0 {
                    continue;
                }
                let base = (p * kc + q) * kb;
                for (dst, br) in gs[base..base + kb].iter_mut().zip(b) {
                    *dst += w * br;
                }
            }
        }
    }
    (da, db)
}

impl Params for TuckerModel {
    fn block_specs(&self) -> Vec<BlockSpec> {
        vec![
            mat_spec(BlockId::UD, &self.u_d, self.frozen.u_d),
            mat_spec(BlockId::UC, &self.u_c, self.frozen.u_c),
            mat_spec(BlockId::UB, &self.u_b, self.frozen.u_b),
            tensor_spec(BlockId::S, &self.s, self.frozen.s),
        ]
    }

    fn block_data(&self) -> Vec<&[f64]> {
        vec![
            self.u_d.as_slice(),
            self.u_c.as_slice(),
            self.u_b.as_slice(),
            self.s.as_slice(),
        ]
    }

    fn block_data_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.u_d.as_mut_slice(),
            self.u_c.as_mut_slice(),
            self.u_b.as_mut_slice(),
            self.s.as_mut_slice(),
        ]
    }

    fn feature_dim(&self) -> usize {
        self.u_d.cols()
    }

    fn descriptor_dim(&self) -> usize {
        self.u_b.cols()
    }

    fn output_dim(&self) -> usize {
        self.u_c.cols()
    }

    fn scores_raw(&self, x: &[f64], z: &[f64]) -> Vec<f64> {
        let a = self.u_d.matvec_raw(x);
        let b = self.u_b.matvec_raw(z);
        self.u_c.t_matvec_raw(&self.core_out(&a, &b))
    }

    fn backward_raw(&self, x: &[f64], z: &[f64], dy: &[f64], grads: &mut [Vec<f64>]) {
        let a = self.u_d.matvec_raw(x);
        let b = self.u_b.matvec_raw(z);
        let t = self.core_out(&a, &b);
        let dt = self.u_c.matvec_raw(dy);
        let (gd, rest) = grads.split_at_mut(1);
        let (gc, rest) = rest.split_at_mut(1);
        let (gb, gs) = rest.split_at_mut(1);
        let grad_s = (!self.frozen.s).then_some(gs[0].as_mut_slice());
        let (da, db) = core_backward(&self.s, &a, &b, &dt, grad_s);
        if !self.frozen.u_d {
            add_outer(&mut gd[0], &da, x);
        }
        if !self.frozen.u_c {
            add_outer(&mut gc[0], &t, dy);
        }
        if !self.frozen.u_b {
            add_outer(&mut gb[0], &db, z);
        }
    }

    fn weight_matrix_raw(&self, z: &[f64]) -> Matrix {
        // U_Dᵀ (S ×₃ U_B z) U_C
        let b = self.u_b.matvec_raw(z);
        let g = self.s.mode_product(&b, Mode::Third).expect("rank checked");
        let g = g.matmul(&self.u_c).expect("rank checked");
        self.u_d.transpose().matmul(&g).expect("rank checked")
    }
}

/// Tensor-train network: `y = ((U_Dᵀ x) ⊗ (U_B z)) S₍₂₎ᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct TtModel {
    /// `D×K_D`, transposed relative to the CP/Tucker `U_D`.
    pub u_d: Matrix,
    pub s: Tensor3,
    pub u_b: Matrix,
}

impl TtModel {
    pub fn new(u_d: Matrix, s: Tensor3, u_b: Matrix) -> Result<Self> {
        let [kd, _, kb] = s.dims();
        if u_d.cols() != kd || u_b.rows() != kb {
            return shape_err(format!(
                "TT chain broken: U_D is {}x{}, core {:?}, U_B is {}x{}",
                u_d.rows(),
                u_d.cols(),
                s.dims(),
                u_b.rows(),
                u_b.cols()
            ));
        }
        Ok(TtModel { u_d, s, u_b })
    }

    pub fn init(d: usize, c: usize, b: usize, ranks: [usize; 2], rng: &mut impl Rng) -> Self {
        let [kd, kb] = ranks;
        let u_d = init_uniform(d, kd, d, rng);
        let u_b = init_uniform(kb, b, b, rng);
        let s_scale = 1.0 / ((kd * kb) as f64).sqrt();
        let s = Tensor3::from_fn([kd, c, kb], |_, _, _| rng.gen_range(-s_scale..=s_scale));
        TtModel { u_d, s, u_b }
    }

    pub fn ranks(&self) -> [usize; 2] {
        let [kd, _, kb] = self.s.dims();
        [kd, kb]
    }

    pub fn compose(&self) -> Tensor3 {
        compose_tt(&self.u_d, &self.s, &self.u_b).expect("validated chain")
    }

    pub fn predict(&self, x: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        FactorizedModel::Tt(self.clone()).scores(x, z)
    }
}

impl Params for TtModel {
    fn block_specs(&self) -> Vec<BlockSpec> {
        vec![
            mat_spec(BlockId::UD, &self.u_d, false),
            mat_spec(BlockId::UB, &self.u_b, false),
            tensor_spec(BlockId::S, &self.s, false),
        ]
    }

    fn block_data(&self) -> Vec<&[f64]> {
        vec![self.u_d.as_slice(), self.u_b.as_slice(), self.s.as_slice()]
    }

    fn block_data_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.u_d.as_mut_slice(),
            self.u_b.as_mut_slice(),
            self.s.as_mut_slice(),
        ]
    }

    fn feature_dim(&self) -> usize {
        self.u_d.rows()
    }

    fn descriptor_dim(&self) -> usize {
        self.u_b.cols()
    }

    fn output_dim(&self) -> usize {
        self.s.dims()[1]
    }

    fn scores_raw(&self, x: &[f64], z: &[f64]) -> Vec<f64> {
        let a = self.u_d.t_matvec_raw(x);
        let b = self.u_b.matvec_raw(z);
        self.s.mode2_unfold_matvec(&kron(&a, &b))
    }

    fn backward_raw(&self, x: &[f64], z: &[f64], dy: &[f64], grads: &mut [Vec<f64>]) {
        let a = self.u_d.t_matvec_raw(x);
        let b = self.u_b.matvec_raw(z);
        let (gd, rest) = grads.split_at_mut(1);
        let (gb, gs) = rest.split_at_mut(1);
        let (da, db) = core_backward(&self.s, &a, &b, dy, Some(gs[0].as_mut_slice()));
        // U_D is D×K_D: ∂/∂U_D[d,k] = x_d da_k
        add_outer(&mut gd[0], x, &da);
        add_outer(&mut gb[0], &db, z);
    }

    fn weight_matrix_raw(&self, z: &[f64]) -> Matrix {
        let b = self.u_b.matvec_raw(z);
        let g = self.s.mode_product(&b, Mode::Third).expect("rank checked");
        self.u_d.matmul(&g).expect("rank checked")
    }
}

/// Express any supported model as an equivalent Tucker network. Constant
/// factors introduced by the conversion are marked frozen.
pub fn to_tucker(model: &FactorizedModel) -> TuckerModel {
    match model {
        FactorizedModel::Tucker(t) => t.clone(),
        FactorizedModel::Cp(m) => TuckerModel {
            s: Tensor3::superdiagonal(m.rank()),
            u_d: m.u_d.clone(),
            u_c: m.u_c.clone(),
            u_b: m.u_b.clone(),
            frozen: FrozenFactors {
                s: true,
                ..Default::default()
            },
        },
        FactorizedModel::Tt(m) => {
            let c = m.s.dims()[1];
            TuckerModel {
                s: m.s.clone(),
                u_d: m.u_d.transpose(),
                u_c: Matrix::identity(c),
                u_b: m.u_b.clone(),
                frozen: FrozenFactors {
                    u_c: true,
                    ..Default::default()
                },
            }
        }
        FactorizedModel::Single(m) => {
            let k = m.rank();
            TuckerModel {
                s: Tensor3::superdiagonal(k),
                u_d: m.p().transpose(),
                u_c: Matrix::new(k, 1, vec![1.0; k]).expect("k >= 1"),
                u_b: m.q().clone(),
                frozen: FrozenFactors {
                    u_d: m.fixed_p(),
                    u_c: true,
                    u_b: false,
                    s: true,
                },
            }
        }
        FactorizedModel::Full(FullTensorModel { w }) => {
            let [d, c, b] = w.dims();
            TuckerModel {
                s: w.clone(),
                u_d: Matrix::identity(d),
                u_c: Matrix::identity(c),
                u_b: Matrix::identity(b),
                frozen: FrozenFactors {
                    u_d: true,
                    u_c: true,
                    u_b: true,
                    s: false,
                },
            }
        }
    }
}

/// Composed `D×C×B` weight tensor of any model (single-output models give
/// `C = 1`).
pub fn compose_full(model: &FactorizedModel) -> Tensor3 {
    match model {
        FactorizedModel::Cp(m) => m.compose(),
        FactorizedModel::Tucker(m) => m.compose(),
        FactorizedModel::Tt(m) => m.compose(),
        FactorizedModel::Full(m) => m.w.clone(),
        FactorizedModel::Single(m) => {
            let w = m.p().matmul(m.q()).expect("validated rank");
            Tensor3::from_fn([w.rows(), 1, w.cols()], |d, _, b| w[(d, b)])
        }
    }
}

/// Reference prediction `𝒲 ×₁ x ×₃ z` on a composed tensor.
pub fn predict_composed(w: &Tensor3, x: &[f64], z: &[f64]) -> Result<Vec<f64>> {
    let m = w.mode_product(x, Mode::First)?; // C×B
    m.matvec(z)
}

/// Rank grids used for tuning, clipped to the valid dimensions.
pub fn rank_grid_d(d: usize) -> Vec<usize> {
    clip_grid(&[16, 64, 256], d)
}

pub fn rank_grid_c(c: usize) -> Vec<usize> {
    clip_grid(&[2, 4, 8], c)
}

pub fn rank_grid_b(b: usize) -> Vec<usize> {
    clip_grid(&[2, 4], b)
}

fn clip_grid(grid: &[usize], max: usize) -> Vec<usize> {
    let mut out: Vec<usize> = grid.iter().map(|&g| g.min(max).max(1)).collect();
    out.dedup();
    out
}

impl From<SingleOutputModel> for TuckerModel {
    fn from(m: SingleOutputModel) -> Self {
        to_tucker(&FactorizedModel::Single(m))
    }
}
