//! Principal component analysis with whitening.
//!
//! The principal directions come from a thin SVD of the centred data matrix,
//! which stays well conditioned when the sample dimension dwarfs the sample
//! count (tens of thousands of vertex coordinates against a few hundred
//! meshes). Variances use the unbiased `1 / (M - 1)` convention, so whitened
//! training coordinates have unit sample variance under that convention.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{arg, Error, Result};

/// How many components the whitening transform keeps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Retain {
    /// Smallest `k` whose cumulative variance fraction reaches the target.
    Coverage(f64),
    /// Exactly `k` components.
    Components(usize),
}

/// Maps whitened parameters back to the full coefficient space and vice versa.
///
/// `recover` is the `K_full × k` matrix `U_w`; `whiten` is its left inverse.
#[derive(Clone, Debug, PartialEq)]
pub struct WhiteningTransform {
    recover: DMatrix<f64>,
    whiten: DMatrix<f64>,
    coverage: f64,
}

impl WhiteningTransform {
    /// Wraps an arbitrary full-column-rank recovery matrix.
    pub fn new(recover: DMatrix<f64>, coverage: f64) -> Result<Self> {
        if !(coverage > 0.0 && coverage <= 1.0) {
            return Err(arg(format!("coverage {coverage} outside (0, 1]")));
        }
        if recover.ncols() == 0 || recover.ncols() > recover.nrows() {
            return Err(arg(format!(
                "recovery matrix must be tall with at least one column, got {}x{}",
                recover.nrows(),
                recover.ncols()
            )));
        }
        if recover.iter().any(|v| !v.is_finite()) {
            return Err(arg("recovery matrix has non-finite entries"));
        }
        let whiten = recover
            .clone()
            .pseudo_inverse(1e-13)
            .map_err(|e| Error::ModelConstruction(e.to_string()))?;
        Ok(Self {
            recover,
            whiten,
            coverage,
        })
    }

    /// The diagonal transform for coefficients that are already decorrelated:
    /// `U_w = [I_k; 0] · diag(sqrt(variances[..k]))`.
    pub fn from_variances(variances: &[f64], k: usize) -> Result<Self> {
        if k == 0 || k > variances.len() {
            return Err(arg(format!(
                "cannot keep {k} of {} components",
                variances.len()
            )));
        }
        if variances[..k].iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::ModelConstruction(
                "retained variances must be positive".into(),
            ));
        }
        let total: f64 = variances.iter().sum();
        let kept: f64 = variances[..k].iter().sum();
        let n = variances.len();
        let mut recover = DMatrix::zeros(n, k);
        let mut whiten = DMatrix::zeros(k, n);
        for j in 0..k {
            let sd = variances[j].sqrt();
            recover[(j, j)] = sd;
            whiten[(j, j)] = 1.0 / sd;
        }
        Ok(Self {
            recover,
            whiten,
            coverage: (kept / total).min(1.0),
        })
    }

    pub fn k_full(&self) -> usize {
        self.recover.nrows()
    }

    pub fn k_white(&self) -> usize {
        self.recover.ncols()
    }

    pub fn coverage(&self) -> f64 {
        self.coverage
    }

    pub fn recover_matrix(&self) -> &DMatrix<f64> {
        &self.recover
    }

    /// `β = U_w · α`. No mean is added: the coefficients are zero-mean already.
    pub fn unwhiten(&self, alpha: &[f64]) -> Result<DVector<f64>> {
        if alpha.len() != self.k_white() {
            return Err(arg(format!(
                "whitened vector has length {}, expected {}",
                alpha.len(),
                self.k_white()
            )));
        }
        Ok(&self.recover * DVector::from_column_slice(alpha))
    }

    pub fn whiten(&self, beta: &[f64]) -> Result<DVector<f64>> {
        if beta.len() != self.k_full() {
            return Err(arg(format!(
                "coefficient vector has length {}, expected {}",
                beta.len(),
                self.k_full()
            )));
        }
        Ok(&self.whiten * DVector::from_column_slice(beta))
    }
}

/// Output of [`build_pca`].
#[derive(Clone, Debug)]
pub struct Pca {
    pub mean: DVector<f64>,
    /// `D × K_full`, orthonormal columns ordered by decreasing variance.
    pub basis: DMatrix<f64>,
    /// Per-component sample variance, descending.
    pub variances: Vec<f64>,
    pub whitening: WhiteningTransform,
}

impl Pca {
    /// Whitened coordinates of a sample.
    pub fn project(&self, sample: &[f64]) -> Result<DVector<f64>> {
        if sample.len() != self.mean.len() {
            return Err(arg("sample dimension mismatch"));
        }
        let centred = DVector::from_column_slice(sample) - &self.mean;
        let beta = self.basis.tr_mul(&centred);
        self.whitening.whiten(beta.as_slice())
    }

    /// `basis · U_w`: maps whitened parameters straight to sample space.
    pub fn whitened_basis(&self) -> DMatrix<f64> {
        &self.basis * self.whitening.recover_matrix()
    }
}

/// Smallest `k` whose cumulative share of `variances` reaches `target`.
pub fn components_for_coverage(variances: &[f64], target: f64) -> Result<usize> {
    if !(target > 0.0 && target <= 1.0) {
        return Err(arg(format!("target coverage {target} outside (0, 1]")));
    }
    let total: f64 = variances.iter().sum();
    if !(total > 0.0) {
        return Err(Error::ModelConstruction("total variance is zero".into()));
    }
    let mut acc = 0.0;
    for (i, v) in variances.iter().enumerate() {
        acc += v;
        if acc / total >= target {
            return Ok(i + 1);
        }
    }
    // Rounding in the running sum can leave the last ratio a hair below 1.
    Ok(variances.len())
}

/// Fraction of total variance captured by the first `k` components.
pub fn coverage_of(variances: &[f64], k: usize) -> f64 {
    let total: f64 = variances.iter().sum();
    variances[..k.min(variances.len())].iter().sum::<f64>() / total
}

/// Builds a whitened PCA model from `samples` (one sample per row).
pub fn build_pca(samples: &DMatrix<f64>, retain: Retain) -> Result<Pca> {
    let (m, d) = samples.shape();
    if m < 2 {
        return Err(Error::ModelConstruction(format!(
            "need at least two samples, got {m}"
        )));
    }
    if d == 0 {
        return Err(Error::ModelConstruction("samples have zero dimension".into()));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::ModelConstruction("samples contain non-finite values".into()));
    }
    if let Retain::Coverage(t) = retain {
        if !(t > 0.0 && t <= 1.0) {
            return Err(arg(format!("target coverage {t} outside (0, 1]")));
        }
    }

    let mean = samples.row_mean().transpose();
    let mut centred_t = samples.transpose();
    for mut col in centred_t.column_iter_mut() {
        col -= &mean;
    }

    let svd = centred_t.svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap()
            .then(a.cmp(&b))
    });

    let s_max = svd.singular_values[order[0]];
    let scale = samples.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1.0);
    if !(s_max > 1e-12 * scale) {
        return Err(Error::ModelConstruction(
            "samples have zero variance (all eigenvalues vanish)".into(),
        ));
    }
    let tol = s_max * (m.max(d) as f64) * f64::EPSILON;
    let kept: Vec<usize> = order
        .into_iter()
        .filter(|&i| svd.singular_values[i] > tol)
        .collect();

    let k_full = kept.len();
    let mut basis = DMatrix::zeros(d, k_full);
    let mut variances = Vec::with_capacity(k_full);
    for (j, &i) in kept.iter().enumerate() {
        let mut col = u.column(i).into_owned();
        fix_sign(&mut col);
        basis.set_column(j, &col);
        let s = svd.singular_values[i];
        variances.push(s * s / (m - 1) as f64);
    }

    let k = match retain {
        Retain::Coverage(t) => components_for_coverage(&variances, t)?,
        Retain::Components(k) => {
            if k == 0 || k > k_full {
                return Err(arg(format!(
                    "requested {k} components but the data has rank {k_full}"
                )));
            }
            k
        }
    };
    let whitening = WhiteningTransform::from_variances(&variances, k)?;
    Ok(Pca {
        mean,
        basis,
        variances,
        whitening,
    })
}

/// Flips `col` so that its largest-magnitude entry (first on ties) is positive.
pub(crate) fn fix_sign(col: &mut DVector<f64>) {
    let mut best = 0;
    for i in 1..col.len() {
        if col[i].abs() > col[best].abs() {
            best = i;
        }
    }
    if col[best] < 0.0 {
        col.neg_mut();
    }
}
