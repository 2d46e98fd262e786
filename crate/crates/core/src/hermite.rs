//! Hermite feature maps, standardization, and weighted least squares.
//!
//! The one-dimensional polynomials are the physicists' Hermite polynomials
//! divided by `sqrt(2^ℓ ℓ!)`, which makes them orthonormal under the
//! weight `exp(-x²)/sqrt(π)`, i.e. for `X ~ N(0, 1/2)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// `H_ℓ(x) / sqrt(2^ℓ ℓ!)`.
pub fn hermite_1d(degree: usize, x: f64) -> f64 {
    let mut buf = vec![0.0; degree + 1];
    hermite_all(x, &mut buf);
    buf[degree]
}

/// Fills `out[ℓ]` with the normalized polynomial of degree `ℓ`.
///
/// Normalized recurrence: `h_{n+1} = sqrt(2/(n+1)) x h_n - sqrt(n/(n+1)) h_{n-1}`.
pub fn hermite_all(x: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    out[0] = 1.0;
    if out.len() > 1 {
        out[1] = std::f64::consts::SQRT_2 * x;
    }
    for n in 1..out.len().saturating_sub(1) {
        let nf = n as f64;
        out[n + 1] = (2.0 / (nf + 1.0)).sqrt() * x * out[n] - (nf / (nf + 1.0)).sqrt() * out[n - 1];
    }
}

pub fn hermite_tensor(index: &[usize], x: &[f64]) -> Result<f64> {
    if index.len() != x.len() {
        return Err(Error::shape(format!("multi-index has {} entries, point has {}", index.len(), x.len())));
    }
    Ok(index.iter().zip(x).map(|(l, v)| hermite_1d(*l, *v)).product())
}

/// All `d`-tuples with total degree at most `D`, in lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiIndexSet {
    dim: usize,
    degree: usize,
    indices: Vec<Vec<usize>>,
}

impl MultiIndexSet {
    pub fn new(dim: usize, degree: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("multi-index dimension must be at least 1"));
        }
        let mut indices = Vec::new();
        let mut cur = vec![0usize; dim];
        fill(&mut cur, 0, degree, &mut indices);
        Ok(Self { dim, degree, indices })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[Vec<usize>] {
        &self.indices
    }

    /// Feature vector of an already standardized point.
    pub fn features_into(&self, z: &[f64], out: &mut [f64]) {
        debug_assert_eq!(z.len(), self.dim);
        let stride = self.degree + 1;
        let mut table = [0.0f64; 64];
        let mut heap;
        let values: &mut [f64] = if self.dim * stride <= table.len() {
            &mut table[..self.dim * stride]
        } else {
            heap = vec![0.0; self.dim * stride];
            &mut heap
        };
        for (c, zc) in z.iter().enumerate() {
            hermite_all(*zc, &mut values[c * stride..(c + 1) * stride]);
        }
        for (o, idx) in out.iter_mut().zip(&self.indices) {
            let mut v = 1.0;
            for (c, l) in idx.iter().enumerate() {
                v *= values[c * stride + l];
            }
            *o = v;
        }
    }
}

fn fill(cur: &mut Vec<usize>, pos: usize, budget: usize, out: &mut Vec<Vec<usize>>) {
    if pos == cur.len() {
        out.push(cur.clone());
        return;
    }
    for l in 0..=budget {
        cur[pos] = l;
        fill(cur, pos + 1, budget - l, out);
    }
    cur[pos] = 0;
}

pub const SCALE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleMode {
    Diag,
    Cholesky,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Scale {
    Diag(Vec<f64>),
    /// Upper-triangular `U` with `Σ = UᵀU`.
    Cholesky(DMatrix<f64>),
}

/// Affine map to approximately standard features.
///
/// A degenerate standardizer (every coordinate at the scale floor, a single
/// sample, or a deterministic node) keeps only the constant feature.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStandardizer {
    mean: Vec<f64>,
    scale: Scale,
    degenerate: bool,
    fell_back: bool,
}

impl FeatureStandardizer {
    /// Constant-only standardizer centred at `mean`.
    pub fn degenerate(mean: Vec<f64>) -> Self {
        let d = mean.len();
        Self { mean, scale: Scale::Diag(vec![SCALE_FLOOR; d]), degenerate: true, fell_back: false }
    }

    /// Reassembles a standardizer, e.g. from a cache file.
    pub fn from_parts(mean: Vec<f64>, scale: Scale, degenerate: bool, fell_back: bool) -> Self {
        Self { mean, scale, degenerate, fell_back }
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn scale(&self) -> &Scale {
        &self.scale
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    /// True when a Cholesky fit fell back to the diagonal mode.
    pub fn fell_back(&self) -> bool {
        self.fell_back
    }

    pub fn standardize_into(&self, x: &[f64], out: &mut [f64]) {
        for ((o, xi), m) in out.iter_mut().zip(x).zip(&self.mean) {
            *o = xi - m;
        }
        match &self.scale {
            Scale::Diag(s) => {
                for (o, si) in out.iter_mut().zip(s) {
                    *o /= si;
                }
            }
            Scale::Cholesky(u) => {
                // Solve Uᵀ z = x - mean (forward substitution, Uᵀ lower).
                let d = out.len();
                for r in 0..d {
                    let mut acc = out[r];
                    for c in 0..r {
                        acc -= u[(c, r)] * out[c];
                    }
                    out[r] = acc / u[(r, r)];
                }
            }
        }
    }

    /// Features of a raw point under this standardizer.
    pub fn features_into(&self, set: &MultiIndexSet, x: &[f64], out: &mut [f64]) {
        if self.degenerate {
            out.fill(0.0);
            if let Some(first) = out.first_mut() {
                *first = 1.0;
            }
            return;
        }
        let mut z = [0.0f64; 16];
        let mut heap;
        let z: &mut [f64] = if x.len() <= z.len() {
            &mut z[..x.len()]
        } else {
            heap = vec![0.0; x.len()];
            &mut heap
        };
        self.standardize_into(x, z);
        set.features_into(z, out);
    }
}

/// Population mean and covariance, then a diagonal or Cholesky scale.
pub fn fit_standardizer(samples: &[&[f64]], mode: ScaleMode) -> Result<FeatureStandardizer> {
    if samples.len() < 2 {
        return Err(Error::invalid("standardizer needs at least two samples"));
    }
    let d = samples[0].len();
    if d == 0 || samples.iter().any(|s| s.len() != d) {
        return Err(Error::shape("standardizer samples must share a positive dimension"));
    }
    let n = samples.len() as f64;
    let mut mean = vec![0.0; d];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(*s) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut cov = DMatrix::<f64>::zeros(d, d);
    let mut dev = vec![0.0; d];
    for s in samples {
        for c in 0..d {
            dev[c] = s[c] - mean[c];
        }
        for a in 0..d {
            for b in a..d {
                cov[(a, b)] += dev[a] * dev[b];
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            cov[(a, b)] /= n;
            cov[(b, a)] = cov[(a, b)];
        }
    }
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("standardizer samples must be finite"));
    }
    let diag: Vec<f64> = (0..d).map(|c| cov[(c, c)].sqrt().max(SCALE_FLOOR)).collect();
    let degenerate = diag.iter().all(|s| *s <= SCALE_FLOOR);
    let diag_result =
        |fell_back| FeatureStandardizer { mean: mean.clone(), scale: Scale::Diag(diag.clone()), degenerate, fell_back };
    match mode {
        ScaleMode::Diag => Ok(diag_result(false)),
        ScaleMode::Cholesky => {
            if degenerate {
                return Ok(diag_result(true));
            }
            match cov.clone().cholesky() {
                Some(ch) => {
                    let u = ch.l().transpose();
                    let min_diag = (0..d).map(|c| u[(c, c)]).fold(f64::INFINITY, f64::min);
                    if min_diag > SCALE_FLOOR {
                        Ok(FeatureStandardizer { mean, scale: Scale::Cholesky(u), degenerate: false, fell_back: false })
                    } else {
                        Ok(diag_result(true))
                    }
                }
                None => Ok(diag_result(true)),
            }
        }
    }
}

/// Coefficients `c` (`L x d`) together with the standardizer used at fit time.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionCoefficients {
    pub coef: DMatrix<f64>,
    pub standardizer: FeatureStandardizer,
}

impl RegressionCoefficients {
    pub fn predict_into(&self, set: &MultiIndexSet, x: &[f64], feat: &mut [f64], out: &mut [f64]) {
        self.standardizer.features_into(set, x, feat);
        for (c, o) in out.iter_mut().enumerate() {
            *o = feat.iter().enumerate().map(|(l, f)| f * self.coef[(l, c)]).sum();
        }
    }

    pub fn predict(&self, set: &MultiIndexSet, x: &[f64]) -> Vec<f64> {
        let mut feat = vec![0.0; set.len()];
        let mut out = vec![0.0; self.coef.ncols()];
        self.predict_into(set, x, &mut feat, &mut out);
        out
    }
}

pub const RIDGE: f64 = 1e-8;
const REFINEMENTS: usize = 2;

/// Minimizes `Σ_j w_j |y_j - Σ_ℓ c_ℓ X_{jℓ}|²` coordinatewise through the
/// normal equations with ridge `1e-8 · trace(XᵀWX) / L`, refined twice
/// against the unshifted equations.
///
/// `x` is `n x L`, `y` is `n x d`; the result is `L x d`.
pub fn weighted_least_squares(x: &DMatrix<f64>, y: &DMatrix<f64>, w: &[f64]) -> Result<DMatrix<f64>> {
    let (n, l) = x.shape();
    if n == 0 || l == 0 {
        return Err(Error::Regression("empty design matrix".into()));
    }
    if y.nrows() != n || w.len() != n {
        return Err(Error::shape(format!("design has {n} rows, targets {} and weights {}", y.nrows(), w.len())));
    }
    if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::Regression("weights must be finite and non-negative".into()));
    }
    if w.iter().all(|v| *v == 0.0) {
        return Err(Error::Regression("all weights are zero".into()));
    }
    let mut gram = DMatrix::<f64>::zeros(l, l);
    let mut rhs = DMatrix::<f64>::zeros(l, y.ncols());
    for j in 0..n {
        let wj = w[j];
        if wj == 0.0 {
            continue;
        }
        for a in 0..l {
            let xa = wj * x[(j, a)];
            for b in a..l {
                gram[(a, b)] += xa * x[(j, b)];
            }
            for c in 0..y.ncols() {
                rhs[(a, c)] += xa * y[(j, c)];
            }
        }
    }
    for a in 0..l {
        for b in 0..a {
            gram[(a, b)] = gram[(b, a)];
        }
    }
    let trace: f64 = (0..l).map(|a| gram[(a, a)]).sum();
    let lambda = RIDGE * trace / l as f64;
    if gram.iter().chain(rhs.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Regression("non-finite normal equations".into()));
    }
    let shifted = {
        let mut g = gram.clone();
        for a in 0..l {
            g[(a, a)] += lambda;
        }
        g
    };
    let ch =
        shifted.cholesky().ok_or_else(|| Error::Regression("normal equations are not positive definite".into()))?;
    // Iterated Tikhonov: the shifted solve is refined against the unshifted
    // system, which removes the ridge bias along well-determined directions
    // and leaves nearly null directions damped.
    let mut coef = ch.solve(&rhs);
    for _ in 0..REFINEMENTS {
        let resid = &rhs - &gram * &coef;
        coef += ch.solve(&resid);
    }
    Ok(coef)
}

/// Builds the design matrix of `samples` under a standardizer.
pub fn design_matrix(set: &MultiIndexSet, st: &FeatureStandardizer, samples: &[&[f64]]) -> DMatrix<f64> {
    let l = set.len();
    let mut x = DMatrix::<f64>::zeros(samples.len(), l);
    let mut feat = vec![0.0; l];
    for (j, s) in samples.iter().enumerate() {
        st.features_into(set, s, &mut feat);
        for (a, f) in feat.iter().enumerate() {
            x[(j, a)] = *f;
        }
    }
    x
}

/// Fits a standardizer (or a constant-only one when `samples` carry no
/// spread) and regresses `targets` on the Hermite features.
pub fn fit_regression(
    set: &MultiIndexSet,
    samples: &[&[f64]],
    targets: &DMatrix<f64>,
    weights: &[f64],
    mode: ScaleMode,
) -> Result<RegressionCoefficients> {
    let standardizer = if samples.len() < 2 {
        FeatureStandardizer::degenerate(samples.first().map(|s| s.to_vec()).unwrap_or_default())
    } else {
        fit_standardizer(samples, mode)?
    };
    let x = design_matrix(set, &standardizer, samples);
    let coef = weighted_least_squares(&x, targets, weights)?;
    Ok(RegressionCoefficients { coef, standardizer })
}

/// Weighted sum of squared residuals of a fitted model.
pub fn weighted_residual(x: &DMatrix<f64>, y: &DMatrix<f64>, w: &[f64], coef: &DMatrix<f64>) -> f64 {
    let r = y - x * coef;
    let wv = DVector::from_column_slice(w);
    (0..r.ncols()).map(|c| r.column(c).component_mul(&r.column(c)).dot(&wv)).sum()
}
