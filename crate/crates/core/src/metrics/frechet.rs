use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Eigenvalues down to this are treated as round-off and clamped to zero.
pub const PSD_TOLERANCE: f64 = 1e-8;

/// Mean and covariance of a set of feature vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub count: usize,
}

impl GaussianStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Sample mean and unbiased (`n − 1`) covariance, symmetrized.
pub fn gaussian_stats(features: &[Vec<f64>]) -> Result<GaussianStats> {
    if features.len() < 2 {
        return Err(Error::Data(format!(
            "statistics need at least 2 feature vectors, got {}",
            features.len()
        )));
    }
    let d = features[0].len();
    if d == 0 || features.iter().any(|f| f.len() != d) {
        return Err(Error::dim(
            "gaussian_stats",
            "feature vectors must share one positive dimension",
        ));
    }
    let n = features.len();
    let mut mean = DVector::zeros(d);
    for f in features {
        mean += DVector::from_column_slice(f);
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for f in features {
        let c = DVector::from_column_slice(f) - &mean;
        cov.ger(1.0, &c, &c, 1.0);
    }
    cov /= (n - 1) as f64;
    let cov = (&cov + cov.transpose()) * 0.5;
    Ok(GaussianStats {
        mean,
        cov,
        count: n,
    })
}

fn clamped_eigenvalues(m: &DMatrix<f64>, what: &str) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let sym = (m + m.transpose()) * 0.5;
    let mut eig = SymmetricEigen::new(sym);
    for v in eig.eigenvalues.iter_mut() {
        if *v < -PSD_TOLERANCE || !v.is_finite() {
            return Err(Error::NonFinite(format!(
                "{what} is not positive semidefinite (eigenvalue {v})"
            )));
        }
        *v = v.max(0.0);
    }
    Ok(eig)
}

fn sqrt_psd(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let eig = clamped_eigenvalues(m, what)?;
    let root = eig.eigenvalues.map(f64::sqrt);
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose())
}

/// Squared Fréchet distance between two Gaussians,
/// `|μa − μb|² + tr(Σa + Σb − 2 (Σa Σb)^½)`.
///
/// The trace of the matrix root is taken from the eigenvalues of the
/// symmetric product `Σa^½ Σb Σa^½`, which has the same spectrum as `Σa Σb`.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::dim(
            "frechet_distance",
            format!("feature dimensions {} vs {}", a.dim(), b.dim()),
        ));
    }
    let root_a = sqrt_psd(&a.cov, "first covariance")?;
    clamped_eigenvalues(&b.cov, "second covariance")?;
    let inner = &root_a * &b.cov * &root_a;
    let trace_root: f64 = clamped_eigenvalues(&inner, "covariance product")?
        .eigenvalues
        .iter()
        .map(|v| v.sqrt())
        .sum();
    let mean_term = (&a.mean - &b.mean).norm_squared();
    let d2 = mean_term + a.cov.trace() + b.cov.trace() - 2.0 * trace_root;
    Ok(d2.max(0.0))
}
