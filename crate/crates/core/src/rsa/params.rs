use serde::{Deserialize, Serialize};

use crate::tensor::{contract, seeded, Matrix, NeighborhoodSpec, Tensor};
use crate::{Error, Real, Result};

/// Structural hyper-parameters of one RSA layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RsaConfig {
    /// Input/output channels `C`.
    pub channels: usize,
    /// Number of sub-queries `L`; each has `C / L` channels.
    pub queries: usize,
    /// Latent dimension `D` of the `H` and `P` factorisations.
    pub latent: usize,
    /// Correlation groups: 1 is a dot product, `C / L` a Hadamard product.
    pub groups: usize,
    /// L2-normalise queries, keys and values after embedding.
    #[serde(default = "yes")]
    pub normalize: bool,
    pub window: NeighborhoodSpec,
}

fn yes() -> bool {
    true
}

impl RsaConfig {
    /// Channels per sub-query, `C_Q = C / L`.
    pub fn query_channels(&self) -> usize {
        self.channels / self.queries
    }

    pub fn window_size(&self) -> usize {
        self.window.size()
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.queries == 0 || self.latent == 0 || self.groups == 0 {
            return Err(Error::config(format!("all RSA dimensions must be >= 1: {self:?}")));
        }
        if !self.channels.is_multiple_of(self.queries) {
            return Err(Error::config(format!(
                "query count {} does not divide channels {}",
                self.queries, self.channels
            )));
        }
        if !self.query_channels().is_multiple_of(self.groups) {
            return Err(Error::config(format!(
                "correlation groups {} do not divide query channels {}",
                self.groups,
                self.query_channels()
            )));
        }
        Ok(())
    }

    /// Group of query channel `c` under contiguous blocks.
    #[inline]
    pub fn group_of(&self, c: usize) -> usize {
        c / (self.query_channels() / self.groups)
    }
}

/// Learnable matrices of an RSA layer. `H` and `P` exist only as factors.
#[derive(Clone, Debug, PartialEq)]
pub struct RsaParams<T> {
    pub config: RsaConfig,
    /// `[C, C]`, split column-wise into `L` sub-queries.
    pub e_q: Matrix<T>,
    /// `[C, C_Q]`, shared by every sub-query.
    pub e_k: Matrix<T>,
    /// `[C, C_Q]`, shared by every sub-query.
    pub e_v: Matrix<T>,
    /// `[D, C_Q]`
    pub p1: Matrix<T>,
    /// `[M·G, D]`, rows ordered `m`-major then group.
    pub h1: Matrix<T>,
    /// `[M, D]`
    pub h2: Matrix<T>,
    /// `[M, C_Q]`, maps the context self-correlation back to context shape.
    pub g_ctx: Matrix<T>,
}

/// Parameter names in canonical order.
pub const PARAM_NAMES: [&str; 7] = ["e_q", "e_k", "e_v", "p1", "h1", "h2", "g_ctx"];

impl<T: Real> RsaParams<T> {
    /// Expected `(rows, cols)` of each parameter, in [`PARAM_NAMES`] order.
    pub fn expected_shapes(config: &RsaConfig) -> [(usize, usize); 7] {
        let (c, cq, d, m, g) = (
            config.channels,
            config.query_channels(),
            config.latent,
            config.window_size(),
            config.groups,
        );
        [(c, c), (c, cq), (c, cq), (d, cq), (m * g, d), (m, d), (m, cq)]
    }

    pub fn matrices(&self) -> [&Matrix<T>; 7] {
        [
            &self.e_q,
            &self.e_k,
            &self.e_v,
            &self.p1,
            &self.h1,
            &self.h2,
            &self.g_ctx,
        ]
    }

    pub fn matrices_mut(&mut self) -> [&mut Matrix<T>; 7] {
        [
            &mut self.e_q,
            &mut self.e_k,
            &mut self.e_v,
            &mut self.p1,
            &mut self.h1,
            &mut self.h2,
            &mut self.g_ctx,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        for ((name, m), want) in PARAM_NAMES
            .iter()
            .zip(self.matrices())
            .zip(Self::expected_shapes(&self.config))
        {
            if m.dims() != want {
                return Err(Error::shape(format!("{name} is {:?}, expected {want:?}", m.dims())));
            }
        }
        Ok(())
    }

    pub fn zeros(config: RsaConfig) -> Result<Self> {
        config.validate()?;
        let s = Self::expected_shapes(&config);
        let z = |i: usize| Matrix::zeros(s[i].0, s[i].1);
        Ok(RsaParams {
            config,
            e_q: z(0),
            e_k: z(1),
            e_v: z(2),
            p1: z(3),
            h1: z(4),
            h2: z(5),
            g_ctx: z(6),
        })
    }

    /// Seeded initialisation: He-normal embeddings (`std = √(2 / C)`) and
    /// `U(±1/√fan_in)` for `P₁, H₁, H₂, G`, where fan-in is the length of
    /// the vector each matrix is contracted against (`C_Q, M·G, D, M`).
    pub fn random(config: RsaConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded(seed);
        let s = Self::expected_shapes(&config);
        let he = (2.0 / config.channels as f64).sqrt();
        let e_q = Matrix::random_normal(s[0].0, s[0].1, he, &mut rng);
        let e_k = Matrix::random_normal(s[1].0, s[1].1, he, &mut rng);
        let e_v = Matrix::random_normal(s[2].0, s[2].1, he, &mut rng);
        let fan_in = [
            config.query_channels(),
            config.window_size() * config.groups,
            config.latent,
            config.window_size(),
        ];
        let mut uniform =
            |i: usize| Matrix::random_uniform(s[3 + i].0, s[3 + i].1, 1.0 / (fan_in[i] as f64).sqrt(), &mut rng);
        let (p1, h1, h2, g_ctx) = (uniform(0), uniform(1), uniform(2), uniform(3));
        Ok(RsaParams {
            config,
            e_q,
            e_k,
            e_v,
            p1,
            h1,
            h2,
            g_ctx,
        })
    }

    /// `P = H₂ P₁ ∈ R^{M × C_Q}`.
    pub fn position_matrix(&self) -> Matrix<T> {
        product(&self.h2, &self.p1, "md,dc->mc")
    }

    /// `H = H₁ H₂ᵀ ∈ R^{M·G × M}`.
    pub fn kernel_projection(&self) -> Matrix<T> {
        product(&self.h1, &self.h2, "jd,md->jm")
    }

    pub fn cast<U: Real>(&self) -> RsaParams<U> {
        RsaParams {
            config: self.config,
            e_q: self.e_q.cast(),
            e_k: self.e_k.cast(),
            e_v: self.e_v.cast(),
            p1: self.p1.cast(),
            h1: self.h1.cast(),
            h2: self.h2.cast(),
            g_ctx: self.g_ctx.cast(),
        }
    }
}

fn product<T: Real>(a: &Matrix<T>, b: &Matrix<T>, spec: &str) -> Matrix<T> {
    let ta = Tensor::new(vec![a.rows(), a.cols()], a.data().to_vec()).unwrap();
    let tb = Tensor::new(vec![b.rows(), b.cols()], b.data().to_vec()).unwrap();
    let out = contract(&ta, &tb, spec).expect("factor shapes validated");
    Matrix::new(out.shape[0], out.shape[1], out.data).unwrap()
}
