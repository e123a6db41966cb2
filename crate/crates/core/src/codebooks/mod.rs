//! Sparsifying dictionaries for `vec(H)`.
//!
//! All three codebooks are Kronecker products of a BS-side factor and a
//! UE-side factor, `psi_k = tx[:, i_k] kron rx[:, j_k]`. The factors are kept
//! alongside the (lazily materialized) dense matrix so that the sensing and
//! pseudo-inverse paths can exploit the structure.

mod dft;
mod dpss;
mod io;
mod spherical;

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{normalize_columns, CMatrix, CVector, C64};
use crate::model::Point;

pub use dft::{dft_angles, dft_codebook, dft_steering_matrix};
pub use dpss::{
    compensation_matrix, dpss_codebook, dpss_sequences, kernel_frequencies, kernel_row, paraxial_correlation_row,
    sinc_kernel, CompensationModel, DpssBasis, SincKernel,
};
pub use io::{read_codebook, write_codebook, Precision};
pub use spherical::{near_field_steering, polar_grid, spherical_codebook, PolarGrid, DEFAULT_R_MAX, DEFAULT_R_MIN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodebookKind {
    Dft,
    Spherical,
    Dpss,
}

impl CodebookKind {
    pub fn name(self) -> &'static str {
        match self {
            CodebookKind::Dft => "dft",
            CodebookKind::Spherical => "spherical",
            CodebookKind::Dpss => "dpss",
        }
    }
}

/// Construction parameters recorded with a codebook.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CodebookParams {
    Oversampling { beta: f64 },
    PolarGrid { beta: f64, r_min: f64, r_max: f64 },
    Location { x_hat: f64, y_hat: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CodewordMeta {
    Dft {
        tx_angle: f64,
        rx_angle: f64,
    },
    Spherical {
        tx_angle: f64,
        tx_distance: f64,
        rx_angle: f64,
        rx_distance: f64,
        /// Candidate UE centre implied by the BS-side grid point.
        ue_center: Point,
    },
    Dpss {
        tx_eigen_index: usize,
        rx_eigen_index: usize,
        tx_eigenvalue: f64,
        rx_eigenvalue: f64,
    },
}

/// Per-side factors of a Kronecker-structured codebook.
#[derive(Debug, Clone, PartialEq)]
pub struct KroneckerFactors {
    /// `N_T x M_T`, unit-norm columns.
    pub tx: CMatrix,
    /// `N_R x M_R`, unit-norm columns.
    pub rx: CMatrix,
    /// Column `k` of the codebook is `tx[:, pairs[k].0] kron rx[:, pairs[k].1]`.
    pub pairs: Vec<(usize, usize)>,
}

impl KroneckerFactors {
    fn full_product(tx: CMatrix, rx: CMatrix) -> Self {
        let pairs = (0..tx.ncols())
            .flat_map(|i| (0..rx.ncols()).map(move |j| (i, j)))
            .collect();
        KroneckerFactors { tx, rx, pairs }
    }

    fn column(&self, k: usize) -> CVector {
        let (i, j) = self.pairs[k];
        let t = self.tx.column(i);
        let r = self.rx.column(j);
        let nr = r.len();
        CVector::from_fn(t.len() * nr, |idx, _| t[idx / nr] * r[idx % nr])
    }

    fn dense(&self) -> CMatrix {
        let n = self.tx.nrows() * self.rx.nrows();
        let mut out = CMatrix::zeros(n, self.pairs.len());
        for k in 0..self.pairs.len() {
            out.set_column(k, &self.column(k));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct Codebook {
    kind: CodebookKind,
    n_t: usize,
    n_r: usize,
    params: CodebookParams,
    meta: Vec<CodewordMeta>,
    factors: Option<KroneckerFactors>,
    dense: OnceLock<CMatrix>,
}

impl Codebook {
    pub(crate) fn from_factors(
        kind: CodebookKind,
        params: CodebookParams,
        mut factors: KroneckerFactors,
        meta: Vec<CodewordMeta>,
    ) -> Self {
        debug_assert_eq!(meta.len(), factors.pairs.len());
        normalize_columns(&mut factors.tx);
        normalize_columns(&mut factors.rx);
        Codebook {
            kind,
            n_t: factors.tx.nrows(),
            n_r: factors.rx.nrows(),
            params,
            meta,
            factors: Some(factors),
            dense: OnceLock::new(),
        }
    }

    /// Wrap an explicit dictionary. Columns are renormalized to unit norm.
    pub fn from_dense(
        kind: CodebookKind,
        n_t: usize,
        n_r: usize,
        params: CodebookParams,
        mut matrix: CMatrix,
        meta: Vec<CodewordMeta>,
    ) -> Result<Self> {
        if matrix.nrows() != n_t * n_r {
            return Err(Error::Dimension(format!(
                "codebook has {} rows, expected N_T*N_R = {}",
                matrix.nrows(),
                n_t * n_r
            )));
        }
        if matrix.ncols() != meta.len() {
            return Err(Error::Dimension(format!(
                "{} codewords but {} metadata records",
                matrix.ncols(),
                meta.len()
            )));
        }
        normalize_columns(&mut matrix);
        Ok(Codebook {
            kind,
            n_t,
            n_r,
            params,
            meta,
            factors: None,
            dense: OnceLock::from(matrix),
        })
    }

    pub fn kind(&self) -> CodebookKind {
        self.kind
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn n_r(&self) -> usize {
        self.n_r
    }

    /// Number of codewords `M`.
    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }

    /// Codeword length `N_T * N_R`.
    pub fn dim(&self) -> usize {
        self.n_t * self.n_r
    }

    pub fn params(&self) -> CodebookParams {
        self.params
    }

    pub fn meta(&self) -> &[CodewordMeta] {
        &self.meta
    }

    pub fn factors(&self) -> Option<&KroneckerFactors> {
        self.factors.as_ref()
    }

    /// Dense `(N_T N_R) x M` dictionary.
    pub fn matrix(&self) -> &CMatrix {
        self.dense.get_or_init(|| {
            self.factors
                .as_ref()
                .expect("codebook without factors is always dense")
                .dense()
        })
    }

    pub fn column(&self, k: usize) -> CVector {
        match (self.dense.get(), &self.factors) {
            (Some(m), _) => m.column(k).into_owned(),
            (None, Some(f)) => f.column(k),
            (None, None) => unreachable!("codebook has neither dense nor factored form"),
        }
    }

    /// Columns `idx` stacked into an `N x |idx|` matrix.
    pub fn columns(&self, idx: &[usize]) -> CMatrix {
        let mut out = CMatrix::zeros(self.dim(), idx.len());
        for (c, &k) in idx.iter().enumerate() {
            out.set_column(c, &self.column(k));
        }
        out
    }

    /// `Psi * x` for a coefficient vector of length `M`.
    pub fn synthesize(&self, coeffs: &CVector) -> Result<CVector> {
        if coeffs.len() != self.len() {
            return Err(Error::Dimension(format!(
                "{} coefficients for a codebook of {} codewords",
                coeffs.len(),
                self.len()
            )));
        }
        let mut out = CVector::zeros(self.dim());
        for (k, c) in coeffs.iter().enumerate() {
            if *c != C64::new(0.0, 0.0) {
                out.axpy(*c, &self.column(k), C64::new(1.0, 0.0));
            }
        }
        Ok(out)
    }

    /// Reorder codewords; `order[k]` is the old index placed at position `k`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.len()];
        if order.len() != self.len()
            || order
                .iter()
                .any(|&k| k >= seen.len() || std::mem::replace(&mut seen[k], true))
        {
            return Err(Error::Dimension("order is not a permutation of the codewords".into()));
        }
        let meta = order.iter().map(|&k| self.meta[k].clone()).collect();
        let factors = self.factors.as_ref().map(|f| KroneckerFactors {
            tx: f.tx.clone(),
            rx: f.rx.clone(),
            pairs: order.iter().map(|&k| f.pairs[k]).collect(),
        });
        let dense = OnceLock::new();
        if factors.is_none() {
            let m = self.matrix();
            let _ = dense.set(CMatrix::from_fn(m.nrows(), order.len(), |r, c| m[(r, order[c])]));
        }
        Ok(Codebook {
            kind: self.kind,
            n_t: self.n_t,
            n_r: self.n_r,
            params: self.params,
            meta,
            factors,
            dense,
        })
    }

    /// Candidate UE centre for a polar-domain codeword.
    pub fn ue_center(&self, k: usize) -> Option<Point> {
        match self.meta.get(k)? {
            CodewordMeta::Spherical { ue_center, .. } => Some(*ue_center),
            _ => None,
        }
    }
}

impl PartialEq for Codebook {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
            && self.n_t == other.n_t
            && self.n_r == other.n_r
            && self.params == other.params
            && self.meta == other.meta
            && self.matrix() == other.matrix()
    }
}
