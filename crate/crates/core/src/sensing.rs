//! Training-phase measurements and orthogonal matching pursuit.
//!
//! Each slot uses one analog precoder `f` (length `N_T`) and one analog
//! combiner row `w` (length `N_R`), both with unit-modulus entries scaled to
//! unit norm. The slot observation is `y_t = w H f + n_t`, which in
//! vectorized form is `y_t = (f^T kron w) vec(H) + n_t`.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codebooks::Codebook;
use crate::error::{Error, Result};
use crate::linalg::{cis, complex_gaussian, pinv, unvec, vec_matrix, CMatrix, CVector, C64, ZERO};
use crate::model::{db_to_linear, ChannelRealization};

/// Relative tolerance below which a new support column counts as linearly
/// dependent on the previous ones.
const RANK_TOL: f64 = 1e-10;

/// Stacked training observations `y = Phi vec(H) + n`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementEnsemble {
    phi: CMatrix,
    y: CVector,
    noise_var: f64,
    /// Precoders as columns, `N_T x tau`.
    precoders: Option<CMatrix>,
    /// Combiner rows stored as columns, `N_R x tau`.
    combiners: Option<CMatrix>,
}

impl MeasurementEnsemble {
    /// Ensemble from an explicit sensing matrix, without beam structure.
    pub fn from_parts(phi: CMatrix, y: CVector, noise_var: f64) -> Result<Self> {
        if phi.nrows() != y.len() {
            return Err(Error::Dimension(format!(
                "{} observations for a {}-row sensing matrix",
                y.len(),
                phi.nrows()
            )));
        }
        if phi.nrows() == 0 {
            return Err(Error::Domain("at least one training slot is required".into()));
        }
        if noise_var.is_nan() || noise_var < 0.0 {
            return Err(Error::Domain(format!("noise variance {noise_var}")));
        }
        Ok(MeasurementEnsemble {
            phi,
            y,
            noise_var,
            precoders: None,
            combiners: None,
        })
    }

    pub fn phi(&self) -> &CMatrix {
        &self.phi
    }

    pub fn y(&self) -> &CVector {
        &self.y
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn tau(&self) -> usize {
        self.phi.nrows()
    }

    /// `mu = tau / (N_T N_R)`.
    pub fn compression_ratio(&self) -> f64 {
        self.tau() as f64 / self.phi.ncols() as f64
    }

    pub fn precoders(&self) -> Option<&CMatrix> {
        self.precoders.as_ref()
    }

    pub fn combiners(&self) -> Option<&CMatrix> {
        self.combiners.as_ref()
    }
}

/// `tau = floor(mu * n)`, guarded against representation error in `mu * n`.
pub fn tau_from_mu(mu: f64, n: usize) -> Result<usize> {
    if !(mu.is_finite() && mu > 0.0) {
        return Err(Error::Domain(format!("compression ratio {mu}")));
    }
    let tau = (mu * n as f64 + 1e-9).floor() as usize;
    if tau == 0 {
        return Err(Error::Domain(format!(
            "compression ratio {mu} leaves no training slots for {n} coefficients"
        )));
    }
    Ok(tau)
}

/// Sensing matrix rows `f_t^T kron w_t` for the given beams.
pub fn stacked_sensing_matrix(precoders: &CMatrix, combiners: &CMatrix) -> Result<CMatrix> {
    if precoders.ncols() != combiners.ncols() {
        return Err(Error::Dimension(format!(
            "{} precoders but {} combiners",
            precoders.ncols(),
            combiners.ncols()
        )));
    }
    let (n_t, n_r) = (precoders.nrows(), combiners.nrows());
    Ok(CMatrix::from_fn(precoders.ncols(), n_t * n_r, |t, idx| {
        precoders[(idx / n_r, t)] * combiners[(idx % n_r, t)]
    }))
}

/// Measure `h` through fixed beams. `snr_db = +inf` gives noiseless observations.
pub fn measure_with_beams(
    h: &CMatrix,
    precoders: CMatrix,
    combiners: CMatrix,
    snr_db: f64,
    seed: u64,
) -> Result<MeasurementEnsemble> {
    if precoders.nrows() != h.ncols() || combiners.nrows() != h.nrows() {
        return Err(Error::Dimension(format!(
            "beams of length ({}, {}) for a {}x{} channel",
            precoders.nrows(),
            combiners.nrows(),
            h.nrows(),
            h.ncols()
        )));
    }
    if precoders.ncols() == 0 {
        return Err(Error::Domain("at least one training slot is required".into()));
    }
    if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
        return Err(Error::Domain(format!("SNR {snr_db} dB")));
    }
    let phi = stacked_sensing_matrix(&precoders, &combiners)?;
    let mut y = &phi * vec_matrix(h);
    let noise_var = if snr_db == f64::INFINITY {
        0.0
    } else {
        let signal = y.iter().map(|z| z.norm_sqr()).sum::<f64>() / y.len() as f64;
        signal / db_to_linear(snr_db)
    };
    if noise_var > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in y.iter_mut() {
            *v += complex_gaussian(&mut rng, noise_var);
        }
    }
    Ok(MeasurementEnsemble {
        phi,
        y,
        noise_var,
        precoders: Some(precoders),
        combiners: Some(combiners),
    })
}

/// Random-phase analog beams for `tau` slots: `(N_T x tau, N_R x tau)`.
pub fn random_beams(n_t: usize, n_r: usize, tau: usize, seed: u64) -> (CMatrix, CMatrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (st, sr) = (1.0 / (n_t as f64).sqrt(), 1.0 / (n_r as f64).sqrt());
    let mut f = CMatrix::zeros(n_t, tau);
    let mut w = CMatrix::zeros(n_r, tau);
    for t in 0..tau {
        for m in 0..n_t {
            f[(m, t)] = cis(rng.gen::<f64>() * TAU) * st;
        }
        for n in 0..n_r {
            w[(n, t)] = cis(rng.gen::<f64>() * TAU) * sr;
        }
    }
    (f, w)
}

/// Training with random-phase beams and AWGN at `snr_db`, deterministic in `seed`.
pub fn generate_training(h: &ChannelRealization, tau: usize, snr_db: f64, seed: u64) -> Result<MeasurementEnsemble> {
    if tau == 0 {
        return Err(Error::Domain("at least one training slot is required".into()));
    }
    let (f, w) = random_beams(h.n_t(), h.n_r(), tau, seed);
    measure_with_beams(&h.h_full, f, w, snr_db, seed ^ 0x9e37_79b9_7f4a_7c15)
}

/// Effective sensing matrix `A = Phi Psi`.
///
/// Uses the Kronecker structure when both the beams and the codebook factors
/// are available, `A[t, k] = (f_t^T tx_i) (w_t rx_j)`; otherwise multiplies
/// densely.
pub fn effective_dictionary(ensemble: &MeasurementEnsemble, codebook: &Codebook) -> Result<CMatrix> {
    if ensemble.phi.ncols() != codebook.dim() {
        return Err(Error::Dimension(format!(
            "sensing matrix has {} columns, codebook dimension is {}",
            ensemble.phi.ncols(),
            codebook.dim()
        )));
    }
    match (&ensemble.precoders, &ensemble.combiners, codebook.factors()) {
        (Some(f), Some(w), Some(fac)) => {
            let p = f.transpose() * &fac.tx;
            let q = w.transpose() * &fac.rx;
            Ok(CMatrix::from_fn(ensemble.tau(), fac.pairs.len(), |t, k| {
                let (i, j) = fac.pairs[k];
                p[(t, i)] * q[(t, j)]
            }))
        }
        _ => Ok(&ensemble.phi * codebook.matrix()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OmpResult {
    /// Length-`M` coefficient vector, nonzero only on `support`.
    pub sparse_vector: CVector,
    /// Selected atoms in selection order.
    pub support: Vec<usize>,
    /// `||r||` after each iteration.
    pub residual_trace: Vec<f64>,
    pub iterations_used: usize,
    /// A selected column was linearly dependent on earlier ones; the affected
    /// fits are minimum-norm least-squares solutions.
    pub rank_deficient: bool,
    /// Least-squares coefficients on `support[..=i]` after iteration `i`.
    pub path: Vec<CVector>,
}

impl OmpResult {
    /// Sparse vector after iteration `i` (0-based).
    pub fn iterate(&self, i: usize) -> Option<CVector> {
        let coeffs = self.path.get(i)?;
        let mut out = CVector::zeros(self.sparse_vector.len());
        for (c, &k) in coeffs.iter().zip(&self.support) {
            out[k] = *c;
        }
        Some(out)
    }
}

/// OMP for the codebook under the ensemble's training.
pub fn omp(ensemble: &MeasurementEnsemble, codebook: &Codebook, max_iters: usize, epsilon: f64) -> Result<OmpResult> {
    if codebook.is_empty() {
        return Err(Error::Domain("empty codebook".into()));
    }
    let a = effective_dictionary(ensemble, codebook)?;
    omp_matrix(&a, &ensemble.y, max_iters, epsilon)
}

/// Default residual bound `1e-6 ||y||`.
pub fn default_epsilon(y: &CVector) -> f64 {
    1e-6 * y.norm()
}

/// OMP on an explicit sensing matrix `a` (`tau x M`).
pub fn omp_matrix(a: &CMatrix, y: &CVector, max_iters: usize, epsilon: f64) -> Result<OmpResult> {
    if max_iters == 0 {
        return Err(Error::Domain("iteration cap must be at least 1".into()));
    }
    if epsilon.is_nan() || epsilon < 0.0 {
        return Err(Error::Domain(format!("residual bound {epsilon}")));
    }
    if a.ncols() == 0 {
        return Err(Error::Domain("empty codebook".into()));
    }
    if a.nrows() != y.len() {
        return Err(Error::Dimension(format!(
            "{} observations for a {}-row sensing matrix",
            y.len(),
            a.nrows()
        )));
    }
    let (tau, m) = a.shape();
    let cap = max_iters.min(m);
    let mut selected = vec![false; m];
    let mut support = Vec::with_capacity(cap);
    let mut basis: Vec<CVector> = Vec::with_capacity(cap);
    // Upper-triangular factor; column c holds Q^H a_c, over the independent
    // columns only.
    let mut r_cols: Vec<Vec<C64>> = Vec::with_capacity(cap);
    let mut z: Vec<C64> = Vec::with_capacity(cap);
    let mut residual = y.clone();
    let mut trace = Vec::with_capacity(cap);
    let mut path = Vec::with_capacity(cap);
    let mut rank_deficient = false;

    while support.len() < cap && residual.norm() > epsilon {
        let corr = a.ad_mul(&residual);
        let mut best: Option<(usize, f64)> = None;
        for (j, c) in corr.iter().enumerate() {
            let v = c.norm();
            if !selected[j] && best.is_none_or(|(_, b)| v > b) {
                best = Some((j, v));
            }
        }
        let Some((j, _)) = best else { break };
        selected[j] = true;
        support.push(j);

        let col = a.column(j).into_owned();
        let mut v = col.clone();
        let mut proj = vec![ZERO; basis.len()];
        for _ in 0..2 {
            for (q, p) in basis.iter().zip(proj.iter_mut()) {
                let c = q.dotc(&v);
                v.axpy(-c, q, C64::new(1.0, 0.0));
                *p += c;
            }
        }
        let nu = v.norm();
        if nu > RANK_TOL * col.norm().max(f64::MIN_POSITIVE) {
            let q = v.unscale(nu);
            let c = q.dotc(&residual);
            residual.axpy(-c, &q, C64::new(1.0, 0.0));
            proj.push(C64::new(nu, 0.0));
            r_cols.push(proj);
            z.push(q.dotc(y));
            basis.push(q);
        } else {
            rank_deficient = true;
        }
        trace.push(residual.norm());
        let coeffs = if rank_deficient {
            let sub = CMatrix::from_fn(tau, support.len(), |t, c| a[(t, support[c])]);
            let p = pinv(&sub).ok_or_else(|| Error::Computation("support pseudo-inverse failed".into()))?;
            p * y
        } else {
            back_substitute(&r_cols, &z)
        };
        path.push(coeffs);
    }

    let mut sparse_vector = CVector::zeros(m);
    if let Some(last) = path.last() {
        for (c, &k) in last.iter().zip(&support) {
            sparse_vector[k] = *c;
        }
    }
    Ok(OmpResult {
        sparse_vector,
        iterations_used: support.len(),
        support,
        residual_trace: trace,
        rank_deficient,
        path,
    })
}

fn back_substitute(r_cols: &[Vec<C64>], z: &[C64]) -> CVector {
    let s = z.len();
    let mut x = CVector::zeros(s);
    for i in (0..s).rev() {
        let mut acc = z[i];
        for (k, col) in r_cols.iter().enumerate().skip(i + 1) {
            acc -= col[i] * x[k];
        }
        x[i] = acc / r_cols[i][i];
    }
    x
}

/// `H_hat = unvec(Psi h)` as an `N_R x N_T` matrix.
pub fn reconstruct_channel(sparse: &CVector, codebook: &Codebook, n_r: usize, n_t: usize) -> Result<CMatrix> {
    if codebook.n_r() != n_r || codebook.n_t() != n_t {
        return Err(Error::Dimension(format!(
            "codebook is for {}x{} channels, requested {n_r}x{n_t}",
            codebook.n_r(),
            codebook.n_t()
        )));
    }
    let v = codebook.synthesize(sparse)?;
    Ok(unvec(&v, n_r, n_t).expect("codebook dimension is n_r * n_t"))
}
