//! Driver paths on uniform grids: fractional Brownian motion sampling, the
//! Wiener shift, discrete Hölder norms and the growth/GRR diagnostics.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{config, domain, Error, Result};

/// Relative tolerance used when deciding whether a time lies on the grid.
const GRID_TOL: f64 = 1e-9;

/// Beyond this many lags the seminorm scan keeps only dyadic long lags.
pub const LAG_CAP: usize = 1 << 13;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FbmMethod {
    Cholesky,
    #[default]
    Circulant,
}

/// Provenance attached to a sampled path; serialized as the JSON sidecar.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PathMeta {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hurst: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<FbmMethod>,
    /// Set when the circulant embedding was not PSD and Cholesky was used instead.
    #[serde(default)]
    pub circulant_fallback: bool,
    #[serde(default)]
    pub dt: f64,
    #[serde(default)]
    pub t0: f64,
    #[serde(default)]
    pub beta_prime: f64,
}

/// A path sampled on the uniform grid `t0 + i * dt`, `i = 0..=steps`, with
/// values in `R^dim` stored point-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledPath {
    t0: f64,
    dt: f64,
    dim: usize,
    values: Vec<f64>,
    beta_prime: f64,
    meta: PathMeta,
}

impl SampledPath {
    pub fn new(t0: f64, dt: f64, dim: usize, values: Vec<f64>, beta_prime: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(config(format!("grid step must be positive and finite, got {dt}")));
        }
        if !t0.is_finite() {
            return Err(config("start time must be finite"));
        }
        if dim == 0 || values.is_empty() || values.len() % dim != 0 {
            return Err(config(format!(
                "path needs a non-empty value array whose length is a multiple of dim={dim}"
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(config("path values must be finite"));
        }
        if !(beta_prime > 0.5 && beta_prime < 1.0) {
            return Err(config(format!(
                "declared Hölder exponent must lie in (1/2, 1), got {beta_prime}"
            )));
        }
        Ok(Self { t0, dt, dim, values, beta_prime, meta: PathMeta::default() })
    }

    /// Scalar path `t -> f(t)` on `steps + 1` grid points.
    pub fn from_fn(t0: f64, dt: f64, steps: usize, beta_prime: f64, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = (0..=steps).map(|i| f(t0 + i as f64 * dt)).collect();
        Self::new(t0, dt, 1, values, beta_prime)
    }

    /// Vector path; `f(t, out)` fills one point.
    pub fn from_fn_vec(
        t0: f64,
        dt: f64,
        steps: usize,
        dim: usize,
        beta_prime: f64,
        f: impl Fn(f64, &mut [f64]),
    ) -> Result<Self> {
        let mut values = vec![0.0; (steps + 1) * dim];
        for (i, chunk) in values.chunks_exact_mut(dim).enumerate() {
            f(t0 + i as f64 * dt, chunk);
        }
        Self::new(t0, dt, dim, values, beta_prime)
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of grid points (`steps + 1`).
    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn steps(&self) -> usize {
        self.len() - 1
    }

    pub fn end_time(&self) -> f64 {
        self.time(self.steps())
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn beta_prime(&self) -> f64 {
        self.beta_prime
    }

    pub fn meta(&self) -> &PathMeta {
        &self.meta
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn point_vector(&self, i: usize) -> DVector<f64> {
        DVector::from_column_slice(self.point(i))
    }

    pub fn with_meta(mut self, meta: PathMeta) -> Self {
        self.meta = meta;
        self
    }

    pub fn with_beta_prime(mut self, beta_prime: f64) -> Result<Self> {
        if !(beta_prime > 0.5 && beta_prime < 1.0) {
            return Err(config(format!("declared Hölder exponent must lie in (1/2, 1), got {beta_prime}")));
        }
        self.beta_prime = beta_prime;
        Ok(self)
    }

    /// Grid index of `t`, failing when `t` is off-grid or outside the horizon.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let x = (t - self.t0) / self.dt;
        let k = x.round();
        if (x - k).abs() > GRID_TOL * x.abs().max(1.0) {
            return Err(domain(format!("time {t} is not on the grid (t0={}, dt={})", self.t0, self.dt)));
        }
        if k < 0.0 || k > self.steps() as f64 {
            return Err(domain(format!(
                "time {t} lies outside the sampled horizon [{}, {}]",
                self.t0,
                self.end_time()
            )));
        }
        Ok(k as usize)
    }

    /// Linear interpolation between grid points; times outside the horizon are clamped.
    pub fn interpolate_into(&self, t: f64, out: &mut [f64]) {
        let (i, w) = self.locate(t);
        let a = self.point(i);
        if w == 0.0 {
            out.copy_from_slice(a);
            return;
        }
        let b = self.point(i + 1);
        for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
            *o = x + w * (y - x);
        }
    }

    pub fn interpolate(&self, t: f64) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim);
        self.interpolate_into(t, out.as_mut_slice());
        out
    }

    /// Scalar shortcut for one-dimensional paths (first coordinate otherwise).
    pub fn interpolate_scalar(&self, t: f64) -> f64 {
        let (i, w) = self.locate(t);
        let a = self.values[i * self.dim];
        if w == 0.0 {
            return a;
        }
        let b = self.values[(i + 1) * self.dim];
        a + w * (b - a)
    }

    fn locate(&self, t: f64) -> (usize, f64) {
        let steps = self.steps();
        if steps == 0 {
            return (0, 0.0);
        }
        let x = ((t - self.t0) / self.dt).clamp(0.0, steps as f64);
        let k = x.round();
        if (x - k).abs() <= GRID_TOL * x.max(1.0) {
            return (k as usize, 0.0);
        }
        let i = (x.floor() as usize).min(steps - 1);
        (i, x - i as f64)
    }

    /// The sub-path on `[a, b]`, keeping absolute times.
    pub fn restrict(&self, a: f64, b: f64) -> Result<SampledPath> {
        let (ia, ib) = (self.index_of(a)?, self.index_of(b)?);
        if ia > ib {
            return Err(domain(format!("empty window [{a}, {b}]")));
        }
        let values = self.values[ia * self.dim..(ib + 1) * self.dim].to_vec();
        Ok(SampledPath { t0: self.time(ia), values, ..self.clone_header() })
    }

    /// Every `stride`-th grid point.
    pub fn subsample(&self, stride: usize) -> Result<SampledPath> {
        if stride == 0 || self.steps() % stride != 0 {
            return Err(domain(format!("stride {stride} does not divide {} steps", self.steps())));
        }
        let values = (0..self.len())
            .step_by(stride)
            .flat_map(|i| self.point(i).iter().copied())
            .collect();
        Ok(SampledPath { dt: self.dt * stride as f64, values, ..self.clone_header() })
    }

    /// Piecewise-linear interpolation through every `stride`-th grid point,
    /// evaluated back on the original grid.
    pub fn coarse_interpolant(&self, stride: usize) -> Result<SampledPath> {
        if stride == 0 || self.steps() % stride != 0 {
            return Err(domain(format!("stride {stride} does not divide {} steps", self.steps())));
        }
        let mut values = self.values.clone();
        let d = self.dim;
        for i in 0..self.len() {
            let r = i % stride;
            if r == 0 {
                continue;
            }
            let base = i - r;
            let w = r as f64 / stride as f64;
            for c in 0..d {
                let a = self.values[base * d + c];
                let b = self.values[(base + stride) * d + c];
                values[i * d + c] = a + w * (b - a);
            }
        }
        Ok(SampledPath { values, ..self.clone_header() })
    }

    fn clone_header(&self) -> SampledPath {
        SampledPath {
            t0: self.t0,
            dt: self.dt,
            dim: self.dim,
            values: Vec::new(),
            beta_prime: self.beta_prime,
            meta: self.meta.clone(),
        }
    }

    /// CSV with header `t,x1,...,xm`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.dim).map(|k| format!("x{k}")));
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec = vec![format!("{}", self.time(i))];
            rec.extend(self.point(i).iter().map(|v| format!("{v}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// JSON sidecar with the sampling metadata.
    pub fn write_metadata(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut meta = self.meta.clone();
        meta.dt = self.dt;
        meta.t0 = self.t0;
        meta.beta_prime = self.beta_prime;
        let mut text = serde_json::to_string_pretty(&meta)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Reads a CSV written by [`SampledPath::write_csv`].
    pub fn read_csv(path: impl AsRef<Path>, beta_prime: f64) -> Result<SampledPath> {
        let reader = BufReader::new(File::open(path.as_ref())?);
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if lineno == 0 || line.trim().is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| config(format!("line {}: {e}", lineno + 1)))?;
            rows.push(row);
        }
        if rows.len() < 2 || rows[0].len() < 2 {
            return Err(config("path CSV needs at least two rows and one value column"));
        }
        let dim = rows[0].len() - 1;
        let t0 = rows[0][0];
        let dt = rows[1][0] - rows[0][0];
        let mut values = Vec::with_capacity(rows.len() * dim);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim + 1 {
                return Err(config(format!("row {} has {} columns, expected {}", i + 2, row.len(), dim + 1)));
            }
            let expected = t0 + i as f64 * dt;
            if (row[0] - expected).abs() > 1e-6 * dt.abs().max(1e-300) * (i as f64).max(1.0) {
                return Err(config(format!("row {} breaks the uniform grid", i + 2)));
            }
            values.extend_from_slice(&row[1..]);
        }
        SampledPath::new(t0, dt, dim, values, beta_prime)
    }
}

/// Fractional Brownian motion sampling request.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FbmConfig {
    pub hurst: f64,
    #[serde(default = "default_q")]
    pub q_matrix: Vec<Vec<f64>>,
    pub horizon: f64,
    pub steps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub method: FbmMethod,
    /// Declared Hölder exponent of the sample; defaults to slightly below `hurst`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_prime: Option<f64>,
}

fn default_q() -> Vec<Vec<f64>> {
    vec![vec![1.0]]
}

impl FbmConfig {
    pub fn scalar(hurst: f64, horizon: f64, steps: usize, seed: u64) -> Self {
        Self { hurst, q_matrix: default_q(), horizon, steps, seed, method: FbmMethod::Circulant, beta_prime: None }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.hurst > 0.5 && self.hurst < 1.0) {
            return Err(config(format!("Hurst parameter must lie strictly inside (1/2, 1), got {}", self.hurst)));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(config("horizon must be positive"));
        }
        if self.steps == 0 {
            return Err(config("steps must be at least 1"));
        }
        validate_covariance(&q_to_matrix(&self.q_matrix)?)?;
        if let Some(bp) = self.beta_prime {
            if !(bp > 0.5 && bp < self.hurst) {
                return Err(config(format!("declared exponent {bp} must lie in (1/2, H)")));
            }
        }
        Ok(())
    }

    pub fn declared_beta_prime(&self) -> f64 {
        self.beta_prime.unwrap_or_else(|| default_beta_prime(self.hurst))
    }
}

/// A Hölder exponent strictly between 1/2 and `hurst`, at most 0.05 below it.
pub fn default_beta_prime(hurst: f64) -> f64 {
    hurst - (0.05f64).min((hurst - 0.5) / 2.0)
}

pub(crate) fn q_to_matrix(q: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let m = q.len();
    if m == 0 || q.iter().any(|row| row.len() != m) {
        return Err(config("Q must be a non-empty square matrix"));
    }
    Ok(DMatrix::from_fn(m, m, |i, j| q[i][j]))
}

/// Checks symmetry and eigenvalue non-negativity within 1e-10.
pub fn validate_covariance(q: &DMatrix<f64>) -> Result<()> {
    if !q.is_square() || q.nrows() == 0 {
        return Err(config("Q must be a non-empty square matrix"));
    }
    if q.iter().any(|v| !v.is_finite()) {
        return Err(config("Q must have finite entries"));
    }
    let asym = (q - q.transpose()).amax();
    if asym > 1e-12 * q.amax().max(1.0) {
        return Err(config(format!("Q is not symmetric (max asymmetry {asym:e})")));
    }
    let min_eig = q.clone().symmetric_eigenvalues().min();
    if min_eig < -1e-10 {
        return Err(config(format!("Q is not positive semidefinite (eigenvalue {min_eig:e})")));
    }
    Ok(())
}

fn psd_sqrt(q: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = q.clone().symmetric_eigen();
    let sqrt_vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose()
}

/// `R(s,t) = Q/2 (|t|^{2H} + |s|^{2H} - |t-s|^{2H})`.
pub fn fbm_covariance(s: f64, t: f64, hurst: f64, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !(hurst > 0.0 && hurst < 1.0) {
        return Err(config(format!("Hurst parameter must lie in (0, 1), got {hurst}")));
    }
    validate_covariance(q)?;
    let h2 = 2.0 * hurst;
    // Sorting the two terms makes the result bitwise symmetric in (s, t).
    let (a, b) = if s <= t { (s, t) } else { (t, s) };
    let scale = 0.5 * (b.abs().powf(h2) + a.abs().powf(h2) - (b - a).abs().powf(h2));
    Ok(q * scale)
}

/// Autocovariance of unit-step fractional Gaussian noise at lag `k`.
pub fn fgn_autocovariance(k: usize, hurst: f64) -> f64 {
    let h2 = 2.0 * hurst;
    let k = k as f64;
    0.5 * ((k + 1.0).powf(h2) - 2.0 * k.powf(h2) + (k - 1.0).abs().powf(h2))
}

enum Factor {
    Circulant { scaled_sqrt_eigs: Vec<f64>, fft: Arc<dyn Fft<f64>> },
    Cholesky(DMatrix<f64>),
}

/// Reusable fBm sampler: factorizes the fGn covariance once, then draws
/// independent paths per seed.
pub struct FbmSampler {
    hurst: f64,
    steps: usize,
    dt: f64,
    q: Vec<Vec<f64>>,
    q_sqrt: DMatrix<f64>,
    beta_prime: f64,
    method: FbmMethod,
    fallback: bool,
    factor: Factor,
}

impl FbmSampler {
    pub fn new(cfg: &FbmConfig) -> Result<Self> {
        cfg.validate()?;
        let q = q_to_matrix(&cfg.q_matrix)?;
        let n = cfg.steps;
        let (factor, fallback) = match cfg.method {
            FbmMethod::Cholesky => (cholesky_factor(n, cfg.hurst)?, false),
            FbmMethod::Circulant => match circulant_factor(n, cfg.hurst) {
                Some(f) => (f, false),
                None => {
                    log::warn!(
                        "circulant embedding not PSD for H={}, n={n}; falling back to Cholesky",
                        cfg.hurst
                    );
                    (cholesky_factor(n, cfg.hurst)?, true)
                }
            },
        };
        Ok(Self {
            hurst: cfg.hurst,
            steps: n,
            dt: cfg.horizon / n as f64,
            q: cfg.q_matrix.clone(),
            q_sqrt: psd_sqrt(&q),
            beta_prime: cfg.declared_beta_prime(),
            method: cfg.method,
            fallback,
            factor,
        })
    }

    pub fn used_fallback(&self) -> bool {
        self.fallback
    }

    /// Draws one path; identical seeds give bitwise-identical paths.
    pub fn sample(&self, seed: u64) -> SampledPath {
        let m = self.q_sqrt.nrows();
        let n = self.steps;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = self.dt.powf(self.hurst);
        // Independent standard fBm coordinates, stored coordinate-major.
        let mut standard = vec![0.0; m * (n + 1)];
        for c in 0..m {
            let noise = self.fgn(&mut rng);
            let coord = &mut standard[c * (n + 1)..(c + 1) * (n + 1)];
            let mut acc = 0.0;
            for (i, g) in noise.iter().enumerate() {
                acc += g * scale;
                coord[i + 1] = acc;
            }
        }
        let mut values = vec![0.0; (n + 1) * m];
        for i in 1..=n {
            for r in 0..m {
                let mut v = 0.0;
                for c in 0..m {
                    v += self.q_sqrt[(r, c)] * standard[c * (n + 1) + i];
                }
                values[i * m + r] = v;
            }
        }
        let meta = PathMeta {
            hurst: Some(self.hurst),
            q: Some(self.q.clone()),
            seed: Some(seed),
            method: Some(self.method),
            circulant_fallback: self.fallback,
            dt: self.dt,
            t0: 0.0,
            beta_prime: self.beta_prime,
        };
        SampledPath { t0: 0.0, dt: self.dt, dim: m, values, beta_prime: self.beta_prime, meta }
    }

    fn fgn(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let n = self.steps;
        match &self.factor {
            Factor::Circulant { scaled_sqrt_eigs, fft } => {
                let mut buf: Vec<Complex<f64>> = scaled_sqrt_eigs
                    .iter()
                    .map(|s| {
                        let re: f64 = rng.sample(StandardNormal);
                        let im: f64 = rng.sample(StandardNormal);
                        Complex::new(s * re, s * im)
                    })
                    .collect();
                fft.process(&mut buf);
                buf[..n].iter().map(|z| z.re).collect()
            }
            Factor::Cholesky(l) => {
                let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
                (l * z).iter().copied().collect()
            }
        }
    }
}

fn circulant_factor(n: usize, hurst: f64) -> Option<Factor> {
    let size = 2 * n;
    let mut c: Vec<Complex<f64>> = vec![Complex::new(0.0, 0.0); size];
    for k in 0..=n {
        c[k] = Complex::new(fgn_autocovariance(k, hurst), 0.0);
    }
    for k in 1..n {
        c[size - k] = c[k];
    }
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(size);
    fft.process(&mut c);
    let max = c.iter().map(|z| z.re.abs()).fold(0.0, f64::max);
    if c.iter().any(|z| z.re < -1e-10 * max.max(1.0)) {
        return None;
    }
    let scaled_sqrt_eigs = c.iter().map(|z| (z.re.max(0.0) / size as f64).sqrt()).collect();
    Some(Factor::Circulant { scaled_sqrt_eigs, fft })
}

fn cholesky_factor(n: usize, hurst: f64) -> Result<Factor> {
    let cov = DMatrix::from_fn(n, n, |i, j| fgn_autocovariance(i.abs_diff(j), hurst));
    let chol = cov
        .cholesky()
        .ok_or_else(|| Error::Numeric(format!("fGn covariance not positive definite for H={hurst}, n={n}")))?;
    Ok(Factor::Cholesky(chol.l()))
}

/// Exact-in-distribution fBm sample described by `cfg`.
pub fn fbm_sample(cfg: &FbmConfig) -> Result<SampledPath> {
    Ok(FbmSampler::new(cfg)?.sample(cfg.seed))
}

/// `θ_τ ω(·) = ω(· + τ) − ω(τ)`, on the part of the grid that stays inside the horizon.
pub fn wiener_shift(path: &SampledPath, tau: f64) -> Result<SampledPath> {
    let k = path.index_of(path.t0 + tau)?;
    let d = path.dim;
    let base = path.point(k).to_vec();
    let values = path.values[k * d..]
        .chunks_exact(d)
        .flat_map(|p| p.iter().zip(&base).map(|(x, b)| x - b).collect::<Vec<_>>())
        .collect();
    Ok(SampledPath { values, ..path.clone_header() })
}

/// Discrete Hölder quantities of a path on a window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolderNorms {
    pub seminorm: f64,
    pub sup_norm: f64,
    /// True when only lags up to [`LAG_CAP`] plus dyadic long lags were scanned.
    pub capped: bool,
}

impl HolderNorms {
    /// `‖ω‖_β = ‖ω‖_∞ + ⦀ω⦀_β`.
    pub fn full(&self) -> f64 {
        self.seminorm + self.sup_norm
    }
}

/// Grid supremum of `‖ω(r) − ω(q)‖ / (r − q)^β` over `a ≤ q < r ≤ b`.
pub fn holder_seminorm(path: &SampledPath, beta: f64, a: f64, b: f64) -> Result<HolderNorms> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(domain(format!("Hölder exponent must lie in (0, 1), got {beta}")));
    }
    let (ia, ib) = (path.index_of(a)?, path.index_of(b)?);
    if ia >= ib {
        return Err(domain(format!("empty window [{a}, {b}]")));
    }
    let slice = &path.values[ia * path.dim..(ib + 1) * path.dim];
    Ok(holder_norms_of_values(slice, path.dim, path.dt, beta))
}

/// Hölder norms of a point-major value slice on a grid of step `dt`.
pub fn holder_norms_of_values(values: &[f64], dim: usize, dt: f64, beta: f64) -> HolderNorms {
    let n = values.len() / dim;
    let sup_norm = values.chunks_exact(dim).map(norm).fold(0.0, f64::max);
    if n < 2 {
        return HolderNorms { seminorm: 0.0, sup_norm, capped: false };
    }
    let max_lag = n - 1;
    let capped = max_lag > LAG_CAP;
    let mut lags: Vec<usize> = (1..=max_lag.min(LAG_CAP)).collect();
    if capped {
        let mut l = 2 * LAG_CAP;
        while l <= max_lag {
            lags.push(l);
            l *= 2;
        }
    }
    let mut best: f64 = 0.0;
    for lag in lags {
        let m = if dim == 1 {
            values[lag..].iter().zip(values).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
        } else {
            let mut m2: f64 = 0.0;
            for i in 0..n - lag {
                let (p, q) = (&values[(i + lag) * dim..(i + lag + 1) * dim], &values[i * dim..(i + 1) * dim]);
                let s: f64 = p.iter().zip(q).map(|(x, y)| (x - y) * (x - y)).sum();
                m2 = m2.max(s);
            }
            m2.sqrt()
        };
        if m > 0.0 {
            best = best.max(m / (lag as f64 * dt).powf(beta));
        }
    }
    HolderNorms { seminorm: best, sup_norm, capped }
}

fn norm(p: &[f64]) -> f64 {
    p.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Garsia–Rodemich–Rumsey diagnostic with the constant set to 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrrDiagnostic {
    /// Grid quadrature of the double integral on the full grid.
    pub integral: f64,
    /// `integral^{1/(2p)}`.
    pub bound: f64,
    pub seminorm: f64,
    /// `bound / seminorm`, absent for a constant path.
    pub ratio: Option<f64>,
    /// `I(δ)/I(2δ)`, `I(2δ)/I(4δ)` for the coarsenings that fit the grid.
    pub refinement_growth: Vec<f64>,
    /// Every refinement step grew the quadrature by more than 1.5x.
    pub divergent: bool,
}

pub fn grr_bound(path: &SampledPath, gamma: f64, p: f64) -> Result<GrrDiagnostic> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(domain(format!("gamma must lie in (0, 1), got {gamma}")));
    }
    if !(p >= 1.0) {
        return Err(domain(format!("moment order must be >= 1, got {p}")));
    }
    if path.steps() < 1 {
        return Err(domain("GRR diagnostic needs at least two grid points"));
    }
    let integral = grr_quadrature(&path.values, path.dim, path.dt, gamma, p);
    let seminorm = holder_norms_of_values(&path.values, path.dim, path.dt, gamma).seminorm;
    let bound = integral.powf(1.0 / (2.0 * p));
    let ratio = (seminorm > 0.0).then(|| bound / seminorm);

    let mut levels = vec![integral];
    let mut stride = 2;
    while levels.len() < 3 && path.steps() % stride == 0 && path.steps() / stride >= 4 {
        let coarse = path.subsample(stride)?;
        levels.push(grr_quadrature(&coarse.values, coarse.dim, coarse.dt, gamma, p));
        stride *= 2;
    }
    let refinement_growth: Vec<f64> = levels.windows(2).map(|w| w[0] / w[1]).collect();
    let divergent = !refinement_growth.is_empty() && refinement_growth.iter().all(|g| *g > 1.5);
    Ok(GrrDiagnostic { integral, bound, seminorm, ratio, refinement_growth, divergent })
}

fn grr_quadrature(values: &[f64], dim: usize, dt: f64, gamma: f64, p: f64) -> f64 {
    let n = values.len() / dim;
    let denom_exp = 2.0 * gamma * p + 2.0;
    let mut total = 0.0;
    for lag in 1..n {
        let w = (lag as f64 * dt).powf(-denom_exp);
        let mut s = 0.0;
        for i in 0..n - lag {
            let (a, b) = (&values[(i + lag) * dim..(i + lag + 1) * dim], &values[i * dim..(i + 1) * dim]);
            let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
            if d2 > 0.0 {
                s += d2.powf(p);
            }
        }
        total += s * w;
    }
    2.0 * total * dt * dt
}

/// `‖ω(t_i)‖ / t_i` for grid times `t_i ≥ 1`.
pub fn growth_ratio(path: &SampledPath) -> Result<Vec<(f64, f64)>> {
    if path.t0 != 0.0 {
        return Err(domain("growth ratio needs a path starting at t = 0"));
    }
    if path.end_time() <= 1.0 {
        return Err(domain("growth ratio needs a horizon beyond t = 1"));
    }
    Ok((0..path.len())
        .filter(|&i| path.time(i) >= 1.0 - GRID_TOL)
        .map(|i| {
            let t = path.time(i);
            (t, norm(path.point(i)) / t)
        })
        .collect())
}
