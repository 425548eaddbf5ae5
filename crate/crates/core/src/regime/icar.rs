use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{inverse_spd, log_det_spd};
use crate::panel::RegionGraph;

/// Intrinsic CAR prior with precision `τ(D − W)` restricted to the
/// sum-to-zero subspace.
#[derive(Debug, Clone)]
pub struct Icar {
    laplacian: DMatrix<f64>,
    /// Nonzero eigenvalues of `D − W` and their eigenvectors (columns).
    eigenvalues: Vec<f64>,
    eigenvectors: DMatrix<f64>,
    log_pdet: f64,
}

impl Icar {
    pub fn new(graph: &RegionGraph) -> Result<Self> {
        let n = graph.len();
        if n == 0 {
            return Err(Error::validation("the region graph is empty"));
        }
        if !graph.is_connected() {
            return Err(Error::validation(
                "the region graph is disconnected, so the spatial prior has rank below R-1; supply a connected adjacency",
            ));
        }
        let laplacian = graph.laplacian();
        let eig = SymmetricEigen::new(laplacian.clone());
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        // the smallest eigenvalue belongs to the constant vector
        let keep = &order[1..];
        let eigenvalues: Vec<f64> = keep.iter().map(|&i| eig.eigenvalues[i]).collect();
        if eigenvalues.iter().any(|&l| l <= 1e-10) {
            return Err(Error::validation(
                "the region graph Laplacian has rank below R-1; supply a connected adjacency",
            ));
        }
        let eigenvectors = DMatrix::from_fn(n, keep.len(), |i, j| eig.eigenvectors[(i, keep[j])]);
        let log_pdet = eigenvalues.iter().map(|l| l.ln()).sum();
        Ok(Icar { laplacian, eigenvalues, eigenvectors, log_pdet })
    }

    pub fn len(&self) -> usize {
        self.laplacian.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn rank(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn laplacian(&self) -> &DMatrix<f64> {
        &self.laplacian
    }

    /// `τ(D − W)`.
    pub fn precision(&self, tau: f64) -> DMatrix<f64> {
        &self.laplacian * tau
    }

    /// Sum of the logs of the nonzero Laplacian eigenvalues.
    pub fn log_pseudo_det(&self) -> f64 {
        self.log_pdet
    }

    pub fn quadratic(&self, u: &[f64]) -> f64 {
        let v = DVector::from_column_slice(u);
        (v.transpose() * &self.laplacian * &v)[(0, 0)]
    }

    /// Log density of `u` under the intrinsic prior, pseudo-determinant convention.
    pub fn logdensity(&self, u: &[f64], tau: f64) -> f64 {
        let k = self.rank() as f64;
        0.5 * k * tau.ln() + 0.5 * self.log_pdet - 0.5 * k * (2.0 * std::f64::consts::PI).ln()
            - 0.5 * tau * self.quadratic(u)
    }

    /// Orthonormal basis of the sum-to-zero subspace (`R × (R-1)`).
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    /// `log det(Vᵀ M V)` with `V` the sum-to-zero basis; zero for a single region.
    pub fn constrained_log_det(&self, m: &DMatrix<f64>) -> Result<f64> {
        if self.rank() == 0 {
            return Ok(0.0);
        }
        let v = &self.eigenvectors;
        log_det_spd(&(v.transpose() * m * v))
    }

    /// `V (Vᵀ M V)⁻¹ Vᵀ`: the covariance of `u` under precision `M` restricted
    /// to the sum-to-zero subspace.
    pub fn constrained_inverse(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let n = self.len();
        if self.rank() == 0 {
            return Ok(DMatrix::zeros(n, n));
        }
        let v = &self.eigenvectors;
        Ok(v * inverse_spd(&(v.transpose() * m * v))? * v.transpose())
    }

    /// Laplace normalizing constant `((R-1)/2) log 2π`.
    pub fn laplace_constant(&self) -> f64 {
        0.5 * self.rank() as f64 * (2.0 * std::f64::consts::PI).ln()
    }

    /// Draw from the prior; the result sums to zero up to rounding.
    pub fn sample<R: Rng + ?Sized>(&self, tau: f64, rng: &mut R) -> Vec<f64> {
        let n = self.len();
        let mut u = vec![0.0; n];
        for (j, &l) in self.eigenvalues.iter().enumerate() {
            let z: f64 = rng.sample(StandardNormal);
            let s = z / (tau * l).sqrt();
            for (i, ui) in u.iter_mut().enumerate() {
                *ui += self.eigenvectors[(i, j)] * s;
            }
        }
        center(&mut u);
        u
    }
}

/// Subtracts the mean in place.
pub fn center(u: &mut [f64]) {
    if u.is_empty() {
        return;
    }
    let m = u.iter().sum::<f64>() / u.len() as f64;
    for v in u.iter_mut() {
        *v -= m;
    }
}

/// `S⁻¹ = τ(D − W) + diag(h)` where `h_r` is the expected logit curvature of region `r`.
pub fn spatial_precision(icar: &Icar, tau: f64, curvature: &[f64]) -> DMatrix<f64> {
    let mut m = icar.precision(tau);
    for (r, h) in curvature.iter().enumerate() {
        m[(r, r)] += h;
    }
    m
}
