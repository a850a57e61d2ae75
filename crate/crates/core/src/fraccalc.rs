//! Young integrals: left-point Riemann–Stieltjes sums with dyadic refinement,
//! the fractional-derivative representation, and the a-priori bound.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{config, domain, Error, Result};
use crate::paths::{holder_norms_of_values, SampledPath};

/// Successive refinement values closer than this stop the refinement scan.
pub const RS_STOP_TOL: f64 = 1e-8;

/// A path of `rows × cols` matrices on a uniform grid, stored point-major and
/// row-major within a point.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixPath {
    t0: f64,
    dt: f64,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    beta: f64,
}

impl MatrixPath {
    pub fn new(t0: f64, dt: f64, rows: usize, cols: usize, data: Vec<f64>, beta: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) || !t0.is_finite() {
            return Err(config("matrix path needs a finite start and positive step"));
        }
        let size = rows * cols;
        if size == 0 || data.is_empty() || data.len() % size != 0 {
            return Err(config(format!("data length {} is not a multiple of {rows}x{cols}", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(config("matrix path entries must be finite"));
        }
        if !(beta > 0.0 && beta < 1.0) {
            return Err(config(format!("integrand exponent must lie in (0, 1), got {beta}")));
        }
        Ok(Self { t0, dt, rows, cols, data, beta })
    }

    pub fn from_fn(
        t0: f64,
        dt: f64,
        steps: usize,
        rows: usize,
        cols: usize,
        beta: f64,
        f: impl Fn(f64) -> DMatrix<f64>,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity((steps + 1) * rows * cols);
        for i in 0..=steps {
            let m = f(t0 + i as f64 * dt);
            if m.nrows() != rows || m.ncols() != cols {
                return Err(config(format!("integrand returned {}x{}, expected {rows}x{cols}", m.nrows(), m.ncols())));
            }
            for r in 0..rows {
                for c in 0..cols {
                    data.push(m[(r, c)]);
                }
            }
        }
        Self::new(t0, dt, rows, cols, data, beta)
    }

    pub fn scalar_from_fn(t0: f64, dt: f64, steps: usize, beta: f64, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(t0, dt, 1, 1, (0..=steps).map(|i| f(t0 + i as f64 * dt)).collect(), beta)
    }

    /// Treats each point of `path` as a `1 × m` row, so integrating against an
    /// `m`-dimensional driver gives a scalar.
    pub fn row_of(path: &SampledPath, beta: f64) -> Result<Self> {
        Self::new(path.t0(), path.dt(), 1, path.dim(), path.values().to_vec(), beta)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.data.len() / (self.rows * self.cols)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn block(&self, i: usize) -> &[f64] {
        let size = self.rows * self.cols;
        &self.data[i * size..(i + 1) * size]
    }

    pub fn matrix(&self, i: usize) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, self.block(i))
    }

    /// Linear interpolation (clamped) into a row-major buffer.
    fn interpolate_into(&self, t: f64, out: &mut [f64]) {
        let steps = self.len() - 1;
        let x = ((t - self.t0) / self.dt).clamp(0.0, steps as f64);
        let i = (x.floor() as usize).min(steps.saturating_sub(1));
        let w = x - i as f64;
        let a = self.block(i);
        if steps == 0 || w == 0.0 {
            out.copy_from_slice(a);
            return;
        }
        let b = self.block(i + 1);
        for ((o, p), q) in out.iter_mut().zip(a).zip(b) {
            *o = p + w * (q - p);
        }
    }

    pub fn interpolate(&self, t: f64) -> DMatrix<f64> {
        let mut buf = vec![0.0; self.rows * self.cols];
        self.interpolate_into(t, &mut buf);
        DMatrix::from_row_slice(self.rows, self.cols, &buf)
    }

    fn index_of(&self, t: f64) -> Result<usize> {
        let x = (t - self.t0) / self.dt;
        let k = x.round();
        if (x - k).abs() > 1e-9 * x.abs().max(1.0) || k < 0.0 || k > (self.len() - 1) as f64 {
            return Err(domain(format!("time {t} is not a grid point of the integrand")));
        }
        Ok(k as usize)
    }

    /// `g(· + τ)` on the part of the grid that stays inside the horizon.
    pub fn shift(&self, tau: f64) -> Result<MatrixPath> {
        let k = self.index_of(self.t0 + tau)?;
        let size = self.rows * self.cols;
        Ok(MatrixPath { data: self.data[k * size..].to_vec(), ..self.clone() })
    }

    /// Applies a linear map `L` on the left of every point.
    pub fn left_mul(&self, l: &DMatrix<f64>) -> Result<MatrixPath> {
        if l.ncols() != self.rows {
            return Err(domain(format!("left factor has {} columns, integrand has {} rows", l.ncols(), self.rows)));
        }
        let mut data = Vec::with_capacity(self.len() * l.nrows() * self.cols);
        for i in 0..self.len() {
            let m = l * self.matrix(i);
            for r in 0..m.nrows() {
                for c in 0..m.ncols() {
                    data.push(m[(r, c)]);
                }
            }
        }
        MatrixPath::new(self.t0, self.dt, l.nrows(), self.cols, data, self.beta)
    }

    /// Sup and Hölder norms (Frobenius) over `[s, t]`.
    pub fn norms(&self, s: f64, t: f64) -> Result<(f64, f64)> {
        let (is, it) = (self.index_of(s)?, self.index_of(t)?);
        if is >= it {
            return Err(domain(format!("empty window [{s}, {t}]")));
        }
        let size = self.rows * self.cols;
        let h = holder_norms_of_values(&self.data[is * size..(it + 1) * size], size, self.dt, self.beta);
        Ok((h.sup_norm, h.seminorm))
    }

    fn add(&self, other: &MatrixPath) -> MatrixPath {
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        MatrixPath { data, ..self.clone() }
    }
}

impl std::ops::Add for &MatrixPath {
    type Output = MatrixPath;

    fn add(self, rhs: &MatrixPath) -> MatrixPath {
        MatrixPath::add(self, rhs)
    }
}

/// Fractional order `α` of the integrand derivative.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FracOrder(f64);

impl FracOrder {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(domain(format!("fractional order must lie in (0, 1), got {alpha}")));
        }
        Ok(Self(alpha))
    }

    /// Centre of the admissible window `(1 − β′, β)`, kept 1e-3 away from its ends.
    pub fn center(beta: f64, beta_prime: f64) -> Result<Self> {
        let (lo, hi) = (1.0 - beta_prime + 1e-3, beta - 1e-3);
        if lo >= hi {
            return Err(Error::Regularity(format!(
                "no admissible fractional order for beta={beta}, beta'={beta_prime}"
            )));
        }
        Self::new((0.5 * (1.0 - beta_prime + beta)).clamp(lo, hi))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Requires `1 − β′ < α < β`.
    pub fn check_admissible(self, beta: f64, beta_prime: f64) -> Result<()> {
        if !(self.0 > 1.0 - beta_prime && self.0 < beta) {
            return Err(Error::Regularity(format!(
                "fractional order {} outside the admissible window ({}, {beta})",
                self.0,
                1.0 - beta_prime
            )));
        }
        Ok(())
    }
}

/// Node counts for the graded midpoint rules.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    /// Nodes for each inner (fractional-derivative) integral.
    pub inner_nodes: usize,
    /// Nodes for each half of the outer integral in `r`.
    pub outer_nodes_per_half: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self { inner_nodes: 256, outer_nodes_per_half: 256 }
    }
}

/// One dyadic level of the Riemann–Stieltjes refinement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RsLevel {
    pub stride: usize,
    pub value: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RsIntegral {
    /// Left-point sum on the finest grid.
    pub value: Vec<f64>,
    /// Coarse-to-fine dyadic levels ending at the finest grid.
    pub levels: Vec<RsLevel>,
    /// Norm of the difference between the two finest levels.
    pub last_delta: f64,
    /// Index into `levels` where successive values first differed by less than
    /// [`RS_STOP_TOL`], if ever.
    pub stopped_at: Option<usize>,
}

impl RsIntegral {
    pub fn value_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.value)
    }

    /// Richardson extrapolation of the two finest levels assuming error order `order`.
    pub fn extrapolated(&self, order: f64) -> Vec<f64> {
        let n = self.levels.len();
        if n < 2 {
            return self.value.clone();
        }
        let (fine, coarse) = (&self.levels[n - 1], &self.levels[n - 2]);
        let factor = (coarse.stride as f64 / fine.stride as f64).powf(order) - 1.0;
        fine.value.iter().zip(&coarse.value).map(|(f, c)| f + (f - c) / factor).collect()
    }
}

fn check_pair(g: &MatrixPath, omega: &SampledPath) -> Result<()> {
    if g.beta + omega.beta_prime() <= 1.0 {
        return Err(Error::Regularity(format!(
            "exponents {} + {} do not exceed 1",
            g.beta,
            omega.beta_prime()
        )));
    }
    if g.cols != omega.dim() {
        return Err(domain(format!("integrand has {} columns, driver has dimension {}", g.cols, omega.dim())));
    }
    Ok(())
}

fn check_grid(g: &MatrixPath, omega: &SampledPath) -> Result<()> {
    let scale = omega.dt().max(1e-300);
    if (g.dt - omega.dt()).abs() > 1e-12 * scale || (g.t0 - omega.t0()).abs() > 1e-9 * scale {
        return Err(domain("integrand and driver are sampled on different grids"));
    }
    Ok(())
}

/// Left-point sums `Σ g(t_i)(ω(t_{i+1}) − ω(t_i))` over `[s, t]` on the finest
/// grid and every dyadic coarsening that divides the window.
pub fn young_integral_rs(g: &MatrixPath, omega: &SampledPath, s: f64, t: f64) -> Result<RsIntegral> {
    check_pair(g, omega)?;
    check_grid(g, omega)?;
    let (is, it) = (omega.index_of(s)?, omega.index_of(t)?);
    if is >= it {
        return Err(domain(format!("integration window [{s}, {t}] is empty")));
    }
    if it >= g.len() {
        return Err(domain("integrand grid is shorter than the integration window"));
    }
    let n = it - is;
    let mut strides = vec![1usize];
    while n % (strides.last().unwrap() * 2) == 0 {
        strides.push(strides.last().unwrap() * 2);
    }
    let mut levels: Vec<RsLevel> = strides
        .iter()
        .rev()
        .map(|&stride| RsLevel { stride, value: rs_sum(g, omega, is, it, stride) })
        .collect();
    levels.shrink_to_fit();
    let deltas: Vec<f64> = levels.windows(2).map(|w| dist(&w[0].value, &w[1].value)).collect();
    let stopped_at = deltas.iter().position(|d| *d < RS_STOP_TOL).map(|k| k + 1);
    Ok(RsIntegral {
        value: levels.last().unwrap().value.clone(),
        last_delta: deltas.last().copied().unwrap_or(0.0),
        levels,
        stopped_at,
    })
}

fn rs_sum(g: &MatrixPath, omega: &SampledPath, is: usize, it: usize, stride: usize) -> Vec<f64> {
    let (d, m) = (g.rows, g.cols);
    let mut acc = vec![0.0; d];
    let mut i = is;
    while i < it {
        let (a, b) = (omega.point(i), omega.point(i + stride));
        let gi = g.block(i);
        for (r, out) in acc.iter_mut().enumerate() {
            let row = &gi[r * m..(r + 1) * m];
            *out += row.iter().zip(b.iter().zip(a)).map(|(gv, (x, y))| gv * (x - y)).sum::<f64>();
        }
        i += stride;
    }
    acc
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Left-sided Weyl–Marchaud derivative of order `α` of `g` at `r`, based at `s`.
pub fn frac_derivative_plus(g: &MatrixPath, s: f64, alpha: FracOrder, r: f64, quad: &QuadratureConfig) -> Result<DMatrix<f64>> {
    if r <= s {
        return Err(domain(format!("evaluation point {r} must exceed the base point {s}")));
    }
    let mut out = vec![0.0; g.rows * g.cols];
    frac_plus_into(g, s, alpha.0, r, quad.inner_nodes, &mut out);
    Ok(DMatrix::from_row_slice(g.rows, g.cols, &out))
}

// Inner integral substitution q = r − L u^p with p = 1/(1−α) removes the
// kernel singularity for Lipschitz data.
fn frac_plus_into(g: &MatrixPath, s: f64, alpha: f64, r: f64, nodes: usize, out: &mut [f64]) {
    let len = r - s;
    let size = out.len();
    let mut gr = vec![0.0; size];
    let mut gq = vec![0.0; size];
    g.interpolate_into(r, &mut gr);
    let p = 1.0 / (1.0 - alpha);
    let mut integral = vec![0.0; size];
    let h = 1.0 / nodes as f64;
    for j in 0..nodes {
        let u = (j as f64 + 0.5) * h;
        let x = len * u.powf(p);
        g.interpolate_into(r - x, &mut gq);
        let w = p * len.powf(-alpha) * u.powf(-1.0 - p * alpha) * h;
        for k in 0..size {
            integral[k] += w * (gr[k] - gq[k]);
        }
    }
    let pre = 1.0 / gamma(1.0 - alpha);
    for k in 0..size {
        out[k] = pre * (gr[k] / len.powf(alpha) + alpha * integral[k]);
    }
}

/// Right-sided derivative of order `1 − α` of `ω` at `r`, based at `t`, without
/// the formal `(−1)^{1−α}` factor.
pub fn frac_derivative_minus(
    omega: &SampledPath,
    t: f64,
    alpha: FracOrder,
    r: f64,
    quad: &QuadratureConfig,
) -> Result<DVector<f64>> {
    if r >= t {
        return Err(domain(format!("evaluation point {r} must precede the base point {t}")));
    }
    let mut out = DVector::zeros(omega.dim());
    frac_minus_into(omega, t, alpha.0, r, quad.inner_nodes, out.as_mut_slice());
    Ok(out)
}

// Substitution q = r + L u^p with p = 1/α.
fn frac_minus_into(omega: &SampledPath, t: f64, alpha: f64, r: f64, nodes: usize, out: &mut [f64]) {
    let len = t - r;
    let m = out.len();
    let mut wr = vec![0.0; m];
    let mut wt = vec![0.0; m];
    let mut wq = vec![0.0; m];
    omega.interpolate_into(r, &mut wr);
    omega.interpolate_into(t, &mut wt);
    let p = 1.0 / alpha;
    let mut integral = vec![0.0; m];
    let h = 1.0 / nodes as f64;
    for j in 0..nodes {
        let u = (j as f64 + 0.5) * h;
        omega.interpolate_into(r + len * u.powf(p), &mut wq);
        let w = p * len.powf(alpha - 1.0) * u.powf(-1.0 - p * (1.0 - alpha)) * h;
        for k in 0..m {
            integral[k] += w * (wr[k] - wq[k]);
        }
    }
    let pre = 1.0 / gamma(alpha);
    for k in 0..m {
        out[k] = pre * ((wr[k] - wt[k]) / len.powf(1.0 - alpha) + (1.0 - alpha) * integral[k]);
    }
}

/// The Young integral through fractional derivatives,
/// `−∫_s^t D^α_{s+}g(r) · D^{1−α}_{t−}ω(r) dr`; the sign makes `g ≡ C` give `C(ω(t) − ω(s))`.
pub fn young_integral_fracrep(
    g: &MatrixPath,
    omega: &SampledPath,
    s: f64,
    t: f64,
    alpha: FracOrder,
    quad: &QuadratureConfig,
) -> Result<DVector<f64>> {
    check_pair(g, omega)?;
    alpha.check_admissible(g.beta, omega.beta_prime())?;
    if s >= t {
        return Err(domain(format!("integration window [{s}, {t}] is empty")));
    }
    let a = alpha.0;
    let (d, m) = (g.rows, g.cols);
    let mid = 0.5 * (s + t);
    let half = mid - s;
    let n = quad.outer_nodes_per_half;
    let h = 1.0 / n as f64;
    let mut dg = vec![0.0; d * m];
    let mut dw = vec![0.0; m];
    let mut acc = vec![0.0; d];
    let mut add = |r: f64, w: f64, dg: &mut [f64], dw: &mut [f64]| {
        frac_plus_into(g, s, a, r, quad.inner_nodes, dg);
        frac_minus_into(omega, t, a, r, quad.inner_nodes, dw);
        for (i, out) in acc.iter_mut().enumerate() {
            let row = &dg[i * m..(i + 1) * m];
            *out -= w * row.iter().zip(dw.iter()).map(|(x, y)| x * y).sum::<f64>();
        }
    };
    // Left half graded towards s, where D^α g ~ (r − s)^{−α}.
    let p = 1.0 / (1.0 - a);
    for j in 0..n {
        let u = (j as f64 + 0.5) * h;
        let r = s + half * u.powf(p);
        add(r, p * half * u.powf(p - 1.0) * h, &mut dg, &mut dw);
    }
    // Right half graded quadratically towards t.
    for j in 0..n {
        let u = (j as f64 + 0.5) * h;
        let r = t - half * u * u;
        add(r, 2.0 * half * u * h, &mut dg, &mut dw);
    }
    Ok(DVector::from_vec(acc))
}

/// Dominating constant for the a-priori estimate of the Young integral on
/// windows of length at most one.
///
/// Two forms are combined by taking the larger: the closed formula
/// `(1/(Γ(α)Γ(1−α)))(1 + α/(β−α))(1/(β′+α−1) + 1)` and the term-by-term
/// bound `(1/(Γ(α)Γ(1−α)))(1 + α/(β−α))(1 + (1−α)/(β′+α−1))B(1−α, β′+α)`,
/// which keeps the Beta factor the closed formula drops.
pub fn young_constant(alpha: f64, beta: f64, beta_prime: f64) -> Result<f64> {
    FracOrder::new(alpha)?.check_admissible(beta, beta_prime)?;
    let x = beta_prime + alpha - 1.0;
    let base = (1.0 + alpha / (beta - alpha)) / (gamma(alpha) * gamma(1.0 - alpha));
    let closed = base * (1.0 / x + 1.0);
    let beta_fn = gamma(1.0 - alpha) * gamma(beta_prime + alpha) / gamma(1.0 + beta_prime);
    let termwise = base * (1.0 + (1.0 - alpha) / x) * beta_fn;
    Ok(closed.max(termwise))
}

/// `C ⦀ω⦀_{β′,s,t} (‖g‖_{∞,s,t} + (t−s)^β ⦀g⦀_{β,s,t}) (t−s)^{β′}` for `t − s ≤ 1`.
pub fn young_bound(g: &MatrixPath, omega: &SampledPath, s: f64, t: f64, alpha: FracOrder) -> Result<f64> {
    check_pair(g, omega)?;
    alpha.check_admissible(g.beta, omega.beta_prime())?;
    let len = t - s;
    if !(len > 0.0) {
        return Err(domain(format!("integration window [{s}, {t}] is empty")));
    }
    if len > 1.0 + 1e-12 {
        return Err(domain(format!("bound is only available on windows of length <= 1, got {len}")));
    }
    let c = young_constant(alpha.0, g.beta, omega.beta_prime())?;
    let w = crate::paths::holder_seminorm(omega, omega.beta_prime(), s, t)?.seminorm;
    let (sup, semi) = g.norms(s, t)?;
    Ok(c * w * (sup + len.powf(g.beta) * semi) * len.powf(omega.beta_prime()))
}

/// `‖∫_{s+τ}^{t+τ} g dω − ∫_s^t g(·+τ) dθ_τω‖` with Riemann–Stieltjes sums on both sides.
pub fn verify_shift_property(g: &MatrixPath, omega: &SampledPath, s: f64, t: f64, tau: f64) -> Result<f64> {
    let lhs = young_integral_rs(g, omega, s + tau, t + tau)?;
    let shifted = crate::paths::wiener_shift(omega, tau)?;
    let rhs = young_integral_rs(&g.shift(tau)?, &shifted, s, t)?;
    Ok(dist(&lhs.value, &rhs.value))
}

/// Same residual with the fractional-derivative representation on both sides.
pub fn verify_shift_property_fracrep(
    g: &MatrixPath,
    omega: &SampledPath,
    s: f64,
    t: f64,
    tau: f64,
    alpha: FracOrder,
    quad: &QuadratureConfig,
) -> Result<f64> {
    let lhs = young_integral_fracrep(g, omega, s + tau, t + tau, alpha, quad)?;
    let shifted = crate::paths::wiener_shift(omega, tau)?;
    let rhs = young_integral_fracrep(&g.shift(tau)?, &shifted, s, t, alpha, quad)?;
    Ok((lhs - rhs).norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn linear(steps: usize) -> SampledPath {
        SampledPath::from_fn(0.0, 1.0 / steps as f64, steps, 0.9, |t| t).unwrap()
    }

    #[test]
    fn constant_integrand_telescopes() {
        let w = SampledPath::from_fn(0.0, 1.0 / 64.0, 64, 0.7, |t| (5.0 * t).sin()).unwrap();
        let g = MatrixPath::scalar_from_fn(0.0, 1.0 / 64.0, 64, 0.7, |_| 3.0).unwrap();
        let r = young_integral_rs(&g, &w, 0.25, 0.75).unwrap();
        let want = 3.0 * (w.interpolate_scalar(0.75) - w.interpolate_scalar(0.25));
        assert_relative_eq!(r.value[0], want, epsilon = 1e-14);
    }

    #[test]
    fn rs_closed_form_oracle() {
        let n = 1 << 14;
        let w = SampledPath::from_fn(0.0, 1.0 / n as f64, n, 0.9, |t| t * t).unwrap();
        let g = MatrixPath::scalar_from_fn(0.0, 1.0 / n as f64, n, 0.9, |t| t).unwrap();
        let r = young_integral_rs(&g, &w, 0.0, 1.0).unwrap();
        assert!((r.value[0] - 2.0 / 3.0).abs() < 1e-3);
        assert!((r.extrapolated(1.0)[0] - 2.0 / 3.0).abs() < 1e-8);
        assert_eq!(r.levels.last().unwrap().stride, 1);
    }

    #[test]
    fn rs_rejects_low_regularity_and_grid_mismatch() {
        let w = SampledPath::from_fn(0.0, 0.1, 10, 0.55, |t| t).unwrap();
        let g = MatrixPath::scalar_from_fn(0.0, 0.1, 10, 0.4, |t| t).unwrap();
        assert!(matches!(young_integral_rs(&g, &w, 0.0, 1.0), Err(Error::Regularity(_))));
        let g = MatrixPath::scalar_from_fn(0.0, 0.05, 20, 0.6, |t| t).unwrap();
        assert!(matches!(young_integral_rs(&g, &w, 0.0, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn plus_derivative_examples() {
        let quad = QuadratureConfig::default();
        let c = MatrixPath::scalar_from_fn(0.0, 1.0 / 128.0, 128, 0.9, |_| 2.0).unwrap();
        let a = FracOrder::new(0.4).unwrap();
        let v = frac_derivative_plus(&c, 0.0, a, 0.5, &quad).unwrap()[(0, 0)];
        assert_relative_eq!(v, 2.0 / (gamma(0.6) * 0.5f64.powf(0.4)), epsilon = 1e-12);
        let lin = MatrixPath::scalar_from_fn(0.0, 1.0 / 128.0, 128, 0.9, |t| t).unwrap();
        let v = frac_derivative_plus(&lin, 0.0, a, 1.0, &quad).unwrap()[(0, 0)];
        assert_relative_eq!(v, 1.0 / gamma(1.6), epsilon = 1e-10);
        assert!(frac_derivative_plus(&lin, 0.5, a, 0.5, &quad).is_err());
    }

    #[test]
    fn minus_derivative_examples() {
        let quad = QuadratureConfig::default();
        let a = FracOrder::new(0.45).unwrap();
        let w = linear(256);
        for r in [0.0, 0.3, 0.77] {
            let v = frac_derivative_minus(&w, 1.0, a, r, &quad).unwrap()[0];
            assert_relative_eq!(v, -(1.0 - r).powf(0.45) / gamma(1.45), epsilon = 1e-10);
        }
        let c = SampledPath::from_fn(0.0, 0.01, 100, 0.9, |_| 4.0).unwrap();
        assert_eq!(frac_derivative_minus(&c, 1.0, a, 0.2, &quad).unwrap()[0], 0.0);
        assert!(frac_derivative_minus(&c, 0.5, a, 0.5, &quad).is_err());
    }

    #[test]
    fn beta_identity() {
        let quad = QuadratureConfig::default();
        let w = linear(1024);
        let g = MatrixPath::scalar_from_fn(0.0, 1.0 / 1024.0, 1024, 0.7, |_| 1.0).unwrap();
        for a in [0.3, 0.45, 0.6] {
            let v = young_integral_fracrep(&g, &w, 0.0, 1.0, FracOrder::new(a).unwrap(), &quad).unwrap()[0];
            assert!((v - 1.0).abs() < 1e-4, "alpha={a}: {v}");
        }
    }

    #[test]
    fn fracrep_rejects_inadmissible_order() {
        let w = linear(64);
        let g = MatrixPath::scalar_from_fn(0.0, 1.0 / 64.0, 64, 0.6, |_| 1.0).unwrap();
        let r = young_integral_fracrep(&g, &w, 0.0, 1.0, FracOrder::new(0.65).unwrap(), &QuadratureConfig::default());
        assert!(matches!(r, Err(Error::Regularity(_))));
    }

    #[test]
    fn fracrep_matches_smooth_oracle() {
        let n = 2048;
        let w = SampledPath::from_fn(0.0, 1.0 / n as f64, n, 0.9, |t| t * t).unwrap();
        let g = MatrixPath::scalar_from_fn(0.0, 1.0 / n as f64, n, 0.9, |t| t).unwrap();
        let quad = QuadratureConfig::default();
        let v1 = young_integral_fracrep(&g, &w, 0.0, 1.0, FracOrder::new(0.3).unwrap(), &quad).unwrap()[0];
        let v2 = young_integral_fracrep(&g, &w, 0.0, 1.0, FracOrder::new(0.6).unwrap(), &quad).unwrap()[0];
        assert!((v1 - 2.0 / 3.0).abs() < 1e-4, "{v1}");
        assert!((v1 - v2).abs() < 2e-4);
    }

    #[test]
    fn bound_examples() {
        let w = linear(256);
        let zero = MatrixPath::scalar_from_fn(0.0, 1.0 / 256.0, 256, 0.7, |_| 0.0).unwrap();
        let a = FracOrder::new(0.4).unwrap();
        assert_eq!(young_bound(&zero, &w, 0.0, 1.0, a).unwrap(), 0.0);
        let one = MatrixPath::scalar_from_fn(0.0, 1.0 / 256.0, 256, 0.7, |_| 1.0).unwrap();
        assert!(young_bound(&one, &w, 0.0, 1.0, a).unwrap() >= 1.0);
        let long = SampledPath::from_fn(0.0, 0.01, 200, 0.9, |t| t).unwrap();
        let g = MatrixPath::scalar_from_fn(0.0, 0.01, 200, 0.7, |_| 1.0).unwrap();
        assert!(matches!(young_bound(&g, &long, 0.0, 2.0, a), Err(Error::Domain(_))));
    }

    #[test]
    fn constant_dominates_closed_formula() {
        for (a, b, bp) in [(0.3, 0.6, 0.8), (0.45, 0.6, 0.7), (0.2, 0.9, 0.95)] {
            let closed = (1.0 + a / (b - a)) / (gamma(a) * gamma(1.0 - a)) * (1.0 / (bp + a - 1.0) + 1.0);
            assert!(young_constant(a, b, bp).unwrap() >= closed);
        }
    }

    #[test]
    fn shift_property_is_exact_for_sums() {
        let n = 256;
        let w = SampledPath::from_fn(0.0, 1.0 / 64.0, n, 0.8, |t| (2.0 * t).sin() + 0.3 * t).unwrap();
        let g = MatrixPath::scalar_from_fn(0.0, 1.0 / 64.0, n, 0.8, |t| (t * 1.3).cos()).unwrap();
        assert_eq!(verify_shift_property(&g, &w, 0.5, 1.5, 0.0).unwrap(), 0.0);
        assert!(verify_shift_property(&g, &w, 0.5, 1.5, 1.25).unwrap() <= 1e-12);
        assert!(matches!(verify_shift_property(&g, &w, 0.0, 1.0, 0.01), Err(Error::Domain(_))));
    }

    #[test]
    fn left_linearity_is_exact() {
        let n = 64;
        let w = SampledPath::from_fn_vec(0.0, 1.0 / n as f64, n, 2, 0.8, |t, o| {
            o[0] = t.sin();
            o[1] = t * t;
        })
        .unwrap();
        let g = MatrixPath::from_fn(0.0, 1.0 / n as f64, n, 2, 2, 0.8, |t| {
            DMatrix::from_row_slice(2, 2, &[1.0, t, t.cos(), 2.0])
        })
        .unwrap();
        let l = DMatrix::from_row_slice(1, 2, &[2.0, -1.0]);
        let lhs = young_integral_rs(&g.left_mul(&l).unwrap(), &w, 0.0, 1.0).unwrap().value;
        let rhs = &l * young_integral_rs(&g, &w, 0.0, 1.0).unwrap().value_vector();
        assert_relative_eq!(lhs[0], rhs[0], epsilon = 1e-14);
    }

    proptest! {
        #[test]
        fn additivity(k in 1usize..63, seed in 0u64..1000) {
            let phase = seed as f64 * 0.01;
            let w = SampledPath::from_fn(0.0, 1.0 / 64.0, 64, 0.8, |t| (3.0 * t + phase).sin()).unwrap();
            let g = MatrixPath::scalar_from_fn(0.0, 1.0 / 64.0, 64, 0.8, |t| t * t - phase).unwrap();
            let tau = k as f64 / 64.0;
            let a = young_integral_rs(&g, &w, 0.0, tau).unwrap().value[0];
            let b = young_integral_rs(&g, &w, tau, 1.0).unwrap().value[0];
            let whole = young_integral_rs(&g, &w, 0.0, 1.0).unwrap().value[0];
            prop_assert!((a + b - whole).abs() <= 1e-13 * (1.0 + whole.abs()));
        }

        #[test]
        fn plus_derivative_is_linear(c1 in -2.0f64..2.0, c2 in -2.0f64..2.0) {
            let quad = QuadratureConfig::default();
            let g1 = MatrixPath::scalar_from_fn(0.0, 1.0 / 64.0, 64, 0.8, |t| c1 * t.sin()).unwrap();
            let g2 = MatrixPath::scalar_from_fn(0.0, 1.0 / 64.0, 64, 0.8, |t| c2 * t * t).unwrap();
            let a = FracOrder::new(0.35).unwrap();
            let sum = frac_derivative_plus(&(&g1 + &g2), 0.0, a, 0.8, &quad).unwrap()[(0, 0)];
            let parts = frac_derivative_plus(&g1, 0.0, a, 0.8, &quad).unwrap()[(0, 0)]
                + frac_derivative_plus(&g2, 0.0, a, 0.8, &quad).unwrap()[(0, 0)];
            prop_assert!((sum - parts).abs() <= 1e-10);
        }
    }
}
