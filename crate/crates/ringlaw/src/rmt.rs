//! Numerical core: window standardization, singular-value equivalents,
//! normalized matrix products, eigen-spectra, and ring-law reference
//! quantities.

use ndarray::prelude::*;
use ndarray_linalg::{EigVals, QR, SVD};
use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::RingLawError;
use crate::Result;

/// Raw N×T measurement window: one row per bus, one column per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct DataWindow {
    values: Array2<f64>,
    row_ids: Vec<u32>,
    end_time: u64,
    sample_period: f64,
}

impl DataWindow {
    pub fn new(
        values: Array2<f64>,
        row_ids: Vec<u32>,
        end_time: u64,
        sample_period: f64,
    ) -> Result<Self> {
        let (n, t) = values.dim();
        if n < 2 {
            return Err(RingLawError::ValidationError(format!(
                "window needs at least 2 rows, got {n}"
            )));
        }
        if t < n {
            return Err(RingLawError::ValidationError(format!(
                "window needs T >= N for ratio c in (0,1], got {n}x{t}"
            )));
        }
        if row_ids.len() != n {
            return Err(RingLawError::ValidationError(format!(
                "{} row ids for {} rows",
                row_ids.len(),
                n
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for id in &row_ids {
            if !seen.insert(*id) {
                return Err(RingLawError::ValidationError(format!(
                    "duplicate row id {id}"
                )));
            }
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(RingLawError::ValidationError(
                "window contains non-finite entries".into(),
            ));
        }
        if !(sample_period > 0.0) {
            return Err(RingLawError::ValidationError(format!(
                "sample period must be positive, got {sample_period}"
            )));
        }
        Ok(Self {
            values,
            row_ids,
            end_time,
            sample_period,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.values.ncols()
    }

    /// c = N/T.
    pub fn ratio(&self) -> f64 {
        self.n_rows() as f64 / self.n_cols() as f64
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn row_ids(&self) -> &[u32] {
        &self.row_ids
    }

    pub fn end_time(&self) -> u64 {
        self.end_time
    }

    pub fn sample_period(&self) -> f64 {
        self.sample_period
    }
}

/// Row-standardized window: every row has mean 0 and population variance 1.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizedWindow {
    values: Array2<f64>,
}

impl StandardizedWindow {
    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.values.ncols()
    }
}

/// Options for `standardize_rows`.
#[derive(Debug, Clone)]
pub struct StandardizeOpts {
    /// Rows with population std dev at or below this are rejected (or jittered).
    pub eps_var: f64,
    /// When set, flat rows get i.i.d. Gaussian jitter (std dev = 1e-6 of the
    /// row magnitude scale) drawn from this seed instead of erroring.
    pub jitter_seed: Option<[u8; 32]>,
}

impl Default for StandardizeOpts {
    fn default() -> Self {
        Self {
            eps_var: 1e-9,
            jitter_seed: None,
        }
    }
}

const JITTER_RELATIVE: f64 = 1e-6;

fn row_moments(row: &ndarray::ArrayViewMut1<f64>) -> (f64, f64) {
    let t = row.len() as f64;
    let mean = row.sum() / t;
    let sd = (row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / t).sqrt();
    (mean, sd)
}

/// Z-scores each row with population moments (divide by T).
pub fn standardize_rows(window: &DataWindow, opts: &StandardizeOpts) -> Result<StandardizedWindow> {
    let mut out = window.values().clone();
    let mut jitter_rng = opts.jitter_seed.map(ChaCha8Rng::from_seed);
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let (mut mean, mut sd) = row_moments(&row);
        if sd <= opts.eps_var {
            let rng = jitter_rng
                .as_mut()
                .ok_or_else(|| RingLawError::ZeroVarianceRow {
                    row: window.row_ids()[i].to_string(),
                })?;
            let scale = row.iter().map(|v| v.abs()).sum::<f64>() / row.len() as f64;
            let sigma = JITTER_RELATIVE * if scale > 0.0 { scale } else { 1.0 };
            for v in row.iter_mut() {
                let g: f64 = StandardNormal.sample(rng);
                *v += sigma * g;
            }
            (mean, sd) = row_moments(&row);
            if sd <= 0.0 {
                return Err(RingLawError::ZeroVarianceRow {
                    row: window.row_ids()[i].to_string(),
                });
            }
        }
        row.mapv_inplace(|v| (v - mean) / sd);
    }
    Ok(StandardizedWindow { values: out })
}

/// Unitary factor choice for the singular-value equivalent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Unitary {
    /// Haar-distributed unitary drawn deterministically from a seed.
    Haar([u8; 32]),
    /// Identity in place of U; keeps the factor exactly P·diag(s)·P^T.
    Identity,
}

/// N×N complex matrix sharing the singular values of its rectangular source.
#[derive(Debug, Clone, PartialEq)]
pub struct SingularEquivalent {
    values: Array2<C64>,
    source: Unitary,
}

impl SingularEquivalent {
    pub fn values(&self) -> &Array2<C64> {
        &self.values
    }

    pub fn source(&self) -> &Unitary {
        &self.source
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }
}

/// Haar-uniform N×N unitary: QR of an i.i.d. complex Gaussian matrix with the
/// R diagonal's phases folded into Q so the distribution is exactly uniform.
pub fn haar_unitary(n: usize, seed: [u8; 32]) -> Array2<C64> {
    let mut rng = ChaCha8Rng::from_seed(seed);
    let mut data = Vec::with_capacity(n * n);
    for _ in 0..n * n {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        data.push(C64::new(re, im) / std::f64::consts::SQRT_2);
    }
    let g = Array2::from_shape_vec((n, n), data).expect("shape fixed above");
    let (q, r) = g.qr().expect("QR of a random Gaussian matrix");
    let mut q = q;
    for k in 0..n {
        let d = r[[k, k]];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { C64::new(1.0, 0.0) };
        q.column_mut(k).mapv_inplace(|v| v * phase);
    }
    q
}

/// sqrt(X̃X̃ᴴ) from the thin SVD X̃ = PΣQᴴ as PΣPᴴ, so the Gram matrix is
/// never squared explicitly.
fn sqrt_gram(x: &StandardizedWindow) -> Result<Array2<f64>> {
    let (p, s, _) = x
        .values()
        .svd(true, false)
        .map_err(|e| RingLawError::DecompositionFailure(format!("SVD: {e}")))?;
    let p = p.ok_or_else(|| RingLawError::DecompositionFailure("SVD returned no U".into()))?;
    let mut ps = p.clone();
    for (k, mut col) in ps.columns_mut().into_iter().enumerate() {
        col.mapv_inplace(|v| v * s[k]);
    }
    Ok(ps.dot(&p.t()))
}

/// X_u = U·sqrt(X̃X̃ᴴ).
pub fn singular_value_equivalent(
    x: &StandardizedWindow,
    unitary: Unitary,
) -> Result<SingularEquivalent> {
    let mut v = singular_value_equivalents(x, vec![unitary])?;
    Ok(v.pop().expect("one factor in, one out"))
}

/// L equivalents of the same window with independent unitaries, sharing one
/// SVD of the source.
pub fn singular_value_equivalents(
    x: &StandardizedWindow,
    unitaries: Vec<Unitary>,
) -> Result<Vec<SingularEquivalent>> {
    let n = x.n_rows();
    let sg = sqrt_gram(x)?.mapv(|v| C64::new(v, 0.0));
    unitaries
        .into_iter()
        .map(|unitary| {
            let values = match &unitary {
                Unitary::Haar(seed) => haar_unitary(n, *seed).dot(&sg),
                Unitary::Identity => sg.clone(),
            };
            Ok(SingularEquivalent {
                values,
                source: unitary,
            })
        })
        .collect()
}

/// Product of L singular-value-equivalent factors and its row-normalized form.
#[derive(Debug, Clone, PartialEq)]
pub struct RingMatrix {
    values: Array2<C64>,
    factors: usize,
}

impl RingMatrix {
    pub fn new(values: Array2<C64>, factors: usize) -> Result<Self> {
        if values.nrows() != values.ncols() {
            return Err(RingLawError::DimensionMismatch {
                expected: "square matrix".into(),
                found: format!("{}x{}", values.nrows(), values.ncols()),
            });
        }
        if factors == 0 {
            return Err(RingLawError::ValidationError(
                "factor count must be at least 1".into(),
            ));
        }
        if !values.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
            return Err(RingLawError::ValidationError(
                "ring matrix contains non-finite entries".into(),
            ));
        }
        Ok(Self { values, factors })
    }

    pub fn values(&self) -> &Array2<C64> {
        &self.values
    }

    pub fn factors(&self) -> usize {
        self.factors
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }
}

/// Ordered left-to-right product of the factors.
pub fn ring_product(factors: &[SingularEquivalent]) -> Result<RingMatrix> {
    let first = factors.first().ok_or_else(|| {
        RingLawError::ValidationError("ring product needs at least one factor".into())
    })?;
    let n = first.n();
    for f in factors {
        if f.n() != n {
            return Err(RingLawError::DimensionMismatch {
                expected: format!("{n}x{n}"),
                found: format!("{}x{}", f.n(), f.n()),
            });
        }
    }
    let mut acc = first.values().clone();
    for f in &factors[1..] {
        acc = acc.dot(f.values());
    }
    RingMatrix::new(acc, factors.len())
}

/// Rescales each row to mean-square 1/N (entrywise second moment), the scale
/// at which the product's spectrum fills the unit annulus. Using the
/// non-central second moment instead of the centered deviation keeps rows
/// that degenerate to a near-constant value bounded rather than amplified;
/// for the mean-zero rows of a noise window the two coincide to O(1/N).
pub fn normalize_product_rows(z_tilde: &RingMatrix) -> Result<RingMatrix> {
    let n = z_tilde.n();
    let sqrt_n = (n as f64).sqrt();
    let mut out = z_tilde.values().clone();
    for (j, mut row) in out.rows_mut().into_iter().enumerate() {
        let ms = row.iter().map(|v| v.norm_sqr()).sum::<f64>() / n as f64;
        let rms = ms.sqrt();
        if rms <= 0.0 {
            return Err(RingLawError::ZeroVarianceRow { row: j.to_string() });
        }
        let scale = 1.0 / (sqrt_n * rms);
        row.mapv_inplace(|v| v * scale);
    }
    RingMatrix::new(out, z_tilde.factors())
}

/// Eigenvalues of Z with their moduli.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    eigenvalues: Vec<C64>,
    radii: Vec<f64>,
}

impl Spectrum {
    pub fn new(eigenvalues: Vec<C64>) -> Self {
        let radii = eigenvalues.iter().map(|l| l.norm()).collect();
        Self { eigenvalues, radii }
    }

    pub fn eigenvalues(&self) -> &[C64] {
        &self.eigenvalues
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }
}

/// Full non-Hermitian eigen-spectrum of the ring matrix.
pub fn eigenvalues(z: &RingMatrix) -> Result<Spectrum> {
    let vals = z
        .values()
        .eigvals()
        .map_err(|e| RingLawError::EigenFailure(format!("eigvals: {e}")))?;
    Ok(Spectrum::new(vals.to_vec()))
}

/// Mean spectral radius: arithmetic mean of eigenvalue moduli.
pub fn msr(spectrum: &Spectrum) -> Result<f64> {
    if spectrum.is_empty() {
        return Err(RingLawError::EmptySpectrum);
    }
    Ok(spectrum.radii().iter().sum::<f64>() / spectrum.len() as f64)
}

/// Annulus parameters for a window geometry: c = N/T and L factors give
/// inner radius (1−c)^{L/2}, outer radius 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RingParams {
    pub n_rows: usize,
    pub n_cols: usize,
    pub ratio: f64,
    pub factors: usize,
    pub inner_radius: f64,
    pub outer_radius: f64,
}

impl RingParams {
    pub fn new(n_rows: usize, n_cols: usize, factors: usize) -> Result<Self> {
        if n_rows == 0 || n_cols == 0 || factors == 0 {
            return Err(RingLawError::ValidationError(
                "ring parameters need positive N, T, L".into(),
            ));
        }
        if n_rows > n_cols {
            return Err(RingLawError::ValidationError(format!(
                "need N <= T for c in (0,1], got N={n_rows}, T={n_cols}"
            )));
        }
        let ratio = n_rows as f64 / n_cols as f64;
        Ok(Self {
            n_rows,
            n_cols,
            ratio,
            factors,
            inner_radius: (1.0 - ratio).powf(factors as f64 / 2.0),
            outer_radius: 1.0,
        })
    }
}

/// Limiting radial eigenvalue density: 1/(πcL)·r^(2/L − 2) on
/// [(1−c)^(L/2), 1], zero elsewhere.
pub fn ring_density(radius: f64, params: &RingParams) -> f64 {
    if radius < params.inner_radius || radius > params.outer_radius {
        return 0.0;
    }
    let l = params.factors as f64;
    let c = params.ratio;
    radius.powf(2.0 / l - 2.0) / (std::f64::consts::PI * c * l)
}

/// First moment of the radial density: (2/(c(L+2)))·(1 − (1−c)^((L+2)/2)).
pub fn expected_msr(params: &RingParams) -> f64 {
    let c = params.ratio;
    let k = (params.factors as f64 + 2.0) / 2.0;
    // 1 - (1-c)^k computed stably for small c
    let one_minus = -f64::exp_m1(k * f64::ln_1p(-c));
    2.0 / (c * (params.factors as f64 + 2.0)) * one_minus
}

/// Fraction of eigenvalue moduli inside the tolerance-widened annulus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConformanceReport {
    pub fraction: f64,
    pub min_radius: f64,
    pub max_radius: f64,
}

pub fn ring_conformance(
    spectrum: &Spectrum,
    params: &RingParams,
    tol: f64,
) -> Result<ConformanceReport> {
    if spectrum.is_empty() {
        return Err(RingLawError::EmptySpectrum);
    }
    if tol < 0.0 {
        return Err(RingLawError::ValidationError(format!(
            "conformance tolerance must be nonnegative, got {tol}"
        )));
    }
    let lo = params.inner_radius - tol;
    let hi = params.outer_radius + tol;
    let inside = spectrum
        .radii()
        .iter()
        .filter(|r| **r >= lo && **r <= hi)
        .count();
    let min = spectrum.radii().iter().cloned().fold(f64::INFINITY, f64::min);
    let max = spectrum.radii().iter().cloned().fold(0.0_f64, f64::max);
    Ok(ConformanceReport {
        fraction: inside as f64 / spectrum.len() as f64,
        min_radius: min,
        max_radius: max,
    })
}

/// N×T window of i.i.d. standard Gaussians with synthetic row ids; the raw
/// material for ring-law Monte Carlo checks. `end_time` labels the window
/// (distinct labels give trials distinct downstream unitary seeds).
pub fn gaussian_window(n: usize, t: usize, seed: [u8; 32], end_time: u64) -> Result<DataWindow> {
    let mut rng = ChaCha8Rng::from_seed(seed);
    let mut data = Vec::with_capacity(n * t);
    for _ in 0..n * t {
        let v: f64 = StandardNormal.sample(&mut rng);
        data.push(v);
    }
    let values = Array2::from_shape_vec((n, t), data).expect("shape fixed above");
    DataWindow::new(values, (1..=n as u32).collect(), end_time, 1.0)
}
