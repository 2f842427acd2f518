use super::{sym_eig, DenseMatrix};
use crate::error::{Error, Result};

/// Result of [`pca_fit`].
#[derive(Debug, Clone)]
pub struct PcaFit {
    /// samples x k, centered projections with each column mean removed.
    pub loadings: DenseMatrix,
    /// k x dims, unit rows, largest-magnitude entry positive.
    pub components: DenseMatrix,
    /// All covariance eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    /// Column means of the input.
    pub mean: Vec<f64>,
}

/// PCA without whitening: top-`k` eigenvectors of the sample covariance.
pub fn pca_fit(data: &DenseMatrix, k: usize) -> Result<PcaFit> {
    let (samples, dims) = data.shape();
    if k == 0 || k > dims || k > samples {
        return Err(Error::KTooLarge { k, dims, samples });
    }
    if !data.is_finite() {
        return Err(Error::NonFinite("pca input".into()));
    }
    let mean = data.column_means();
    let mut centered = data.clone();
    for r in 0..samples {
        for (x, m) in centered.row_mut(r).iter_mut().zip(&mean) {
            *x -= m;
        }
    }
    let denom = (samples.max(2) - 1) as f64;
    let mut cov = DenseMatrix::zeros(dims, dims);
    for r in 0..samples {
        let row = centered.row(r);
        cov.add_outer(1.0 / denom, row, row);
    }
    let eig = sym_eig(&cov)?;

    let mut components = DenseMatrix::zeros(k, dims);
    for c in 0..k {
        let mut v = eig.vectors.column(c);
        let lead = v
            .iter()
            .copied()
            .fold(0.0f64, |best, x| if x.abs() > best.abs() { x } else { best });
        if lead < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        components.row_mut(c).copy_from_slice(&v);
    }

    let mut loadings = centered.matmul(&components.transpose());
    let lmeans = loadings.column_means();
    for r in 0..samples {
        for (x, m) in loadings.row_mut(r).iter_mut().zip(&lmeans) {
            *x -= m;
        }
    }
    Ok(PcaFit {
        loadings,
        components,
        eigenvalues: eig.values,
        mean,
    })
}

impl PcaFit {
    /// Projects new rows with the fitted mean and components.
    pub fn transform(&self, data: &DenseMatrix) -> DenseMatrix {
        let mut centered = data.clone();
        for r in 0..data.rows() {
            for (x, m) in centered.row_mut(r).iter_mut().zip(&self.mean) {
                *x -= m;
            }
        }
        centered.matmul(&self.components.transpose())
    }
}
