//! Matrix exponentials, spectral quantities and sampled semigroup bounds.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{config, domain, Error, Result};

/// Largest dimension accepted by the eigenvalue routines.
pub const MAX_DIM: usize = 50;

fn check_square(a: &DMatrix<f64>) -> Result<()> {
    if !a.is_square() || a.nrows() == 0 {
        return Err(domain(format!("expected a non-empty square matrix, got {}x{}", a.nrows(), a.ncols())));
    }
    if a.nrows() > MAX_DIM {
        return Err(domain(format!("dimension {} exceeds the supported maximum {MAX_DIM}", a.nrows())));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(domain("matrix has non-finite entries"));
    }
    Ok(())
}

/// Maximum real part of the eigenvalues, from the real Schur form.
pub fn spectral_abscissa(a: &DMatrix<f64>) -> Result<f64> {
    check_square(a)?;
    let eig = a.clone().complex_eigenvalues();
    Ok(eig.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max))
}

/// Largest singular value.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.clone().svd(false, false).singular_values.max()
}

/// `e^{At}` by scaling and squaring around a truncated Taylor series.
pub fn matrix_exp(a: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    let n = a.nrows();
    let b = a * t;
    let norm1 = (0..n).map(|j| b.column(j).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let squarings = if norm1 > 0.5 { (norm1 / 0.5).log2().ceil() as i32 } else { 0 };
    let b = b / 2f64.powi(squarings);
    let mut sum = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for k in 1..=30 {
        term = &term * &b / k as f64;
        sum += &term;
        if term.amax() <= 1e-18 * sum.amax() {
            break;
        }
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

/// `∫_0^h e^{As} ds`, read off the exponential of the block matrix `[[A, I], [0, 0]]`.
pub fn exp_integral(a: &DMatrix<f64>, h: f64) -> DMatrix<f64> {
    let n = a.nrows();
    let mut big = DMatrix::zeros(2 * n, 2 * n);
    big.view_mut((0, 0), (n, n)).copy_from(a);
    big.view_mut((0, n), (n, n)).fill_with_identity();
    matrix_exp(&big, h).view((0, n), (n, n)).into_owned()
}

/// A matrix whose spectrum lies strictly left of `−lambda`.
#[derive(Clone, Debug, PartialEq)]
pub struct StableMatrix {
    a: DMatrix<f64>,
    lambda: f64,
    abscissa: f64,
}

impl StableMatrix {
    pub fn new(a: DMatrix<f64>, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(config(format!("decay margin must be positive, got {lambda}")));
        }
        let abscissa = spectral_abscissa(&a)?;
        if abscissa >= -lambda {
            return Err(Error::Stability(format!(
                "spectral abscissa {abscissa} is not below -{lambda}"
            )));
        }
        Ok(Self { a, lambda, abscissa })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn abscissa(&self) -> f64 {
        self.abscissa
    }

    pub fn norm(&self) -> f64 {
        spectral_norm(&self.a)
    }
}

/// Sampled constant `M` with `‖e^{At}‖ ≤ M e^{−λt}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemigroupBound {
    pub m_const: f64,
    pub lambda: f64,
    /// The sampling grid: `t = 0` plus `count` log-spaced times in `[t_min, t_max]`,
    /// followed by a golden-section refinement around the maximizer.
    pub t_min: f64,
    pub t_max: f64,
    pub count: usize,
    pub argmax: f64,
}

impl SemigroupBound {
    pub fn grid(&self) -> Vec<f64> {
        log_grid(self.t_min, self.t_max, self.count)
    }
}

fn log_grid(t_min: f64, t_max: f64, count: usize) -> Vec<f64> {
    let mut g = vec![0.0];
    let (lo, hi) = (t_min.ln(), t_max.ln());
    g.extend((0..count).map(|k| (lo + (hi - lo) * k as f64 / (count - 1).max(1) as f64).exp()));
    g
}

/// `M = max(1, sup ‖e^{At}‖e^{λt})` over `t ∈ [0, 10/λ]`, sampled at
/// `10 · grid_points` log-spaced times and refined near the maximizer.
pub fn estimate_m(stable: &StableMatrix, grid_points: usize) -> Result<SemigroupBound> {
    if grid_points == 0 {
        return Err(config("grid_points must be positive"));
    }
    let lambda = stable.lambda;
    let t_max = 10.0 / lambda;
    let t_min = t_max * 1e-6;
    let count = 10 * grid_points;
    let grid = log_grid(t_min, t_max, count);
    let weighted = |t: f64| spectral_norm(&matrix_exp(&stable.a, t)) * (lambda * t).exp();
    let values: Vec<f64> = grid.iter().map(|&t| weighted(t)).collect();
    let (best, _) = values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
    let mut m = values[best];
    let mut argmax = grid[best];
    // Golden-section search on the bracket around the best sample.
    let (mut lo, mut hi) = (grid[best.saturating_sub(1)], grid[(best + 1).min(grid.len() - 1)]);
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    let (mut x1, mut x2) = (hi - ratio * (hi - lo), lo + ratio * (hi - lo));
    let (mut f1, mut f2) = (weighted(x1), weighted(x2));
    for _ in 0..80 {
        if f1 > f2 {
            hi = x2;
            (x2, f2) = (x1, f1);
            x1 = hi - ratio * (hi - lo);
            f1 = weighted(x1);
        } else {
            lo = x1;
            (x1, f1) = (x2, f2);
            x2 = lo + ratio * (hi - lo);
            f2 = weighted(x2);
        }
    }
    for (t, v) in [(x1, f1), (x2, f2)] {
        if v > m {
            m = v;
            argmax = t;
        }
    }
    if !m.is_finite() {
        return Err(Error::Numeric("semigroup norm is not finite on the sampling grid".into()));
    }
    Ok(SemigroupBound { m_const: m.max(1.0), lambda, t_min, t_max, count, argmax })
}

/// Worst-case slacks (right side minus left side) of the semigroup increment
/// inequalities on an `(s, t)` grid of step `1/grid` in `(0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IncrementReport {
    /// `‖e^{At} − e^{As}‖ ≤ M‖A‖(t−s)e^{−λs}`.
    pub increment: f64,
    /// `‖e^{A(t−s)} − I‖ ≤ M‖A‖(t−s)`.
    pub identity: f64,
    /// `⦀e^{A(t−·)}⦀_{β,0,t} ≤ M‖A‖t^{1−β}`.
    pub holder: f64,
    /// `⦀e^{A(t−·)} − e^{A(s−·)}⦀_{β,0,s} ≤ M²‖A‖²(t−s)s^{1−β}`.
    pub holder_difference: f64,
    pub min_slack: f64,
}

pub fn semigroup_increment_check(
    stable: &StableMatrix,
    bound: &SemigroupBound,
    beta: f64,
    grid: usize,
) -> Result<IncrementReport> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(domain(format!("Hölder exponent must lie in (0, 1), got {beta}")));
    }
    if grid == 0 {
        return Err(config("grid must be positive"));
    }
    let h = 1.0 / grid as f64;
    let (m, lambda, a_norm) = (bound.m_const, bound.lambda, stable.norm());
    let e: Vec<DMatrix<f64>> = (0..=grid).map(|j| matrix_exp(&stable.a, j as f64 * h)).collect();
    let ident = DMatrix::<f64>::identity(stable.a.nrows(), stable.a.nrows());
    let mut rep = IncrementReport {
        increment: f64::INFINITY,
        identity: f64::INFINITY,
        holder: f64::INFINITY,
        holder_difference: f64::INFINITY,
        min_slack: f64::INFINITY,
    };
    let pow = |k: usize| (k as f64 * h).powf(beta);
    // Seminorms over r ∈ [0, s] on the grid are running maxima: stepping s by
    // one grid point adds one node, paired with every earlier node.
    let mut holder_semi: f64 = 0.0;
    for ti in 1..=grid {
        let t = ti as f64 * h;
        for k in 0..ti {
            holder_semi = holder_semi.max(spectral_norm(&(&e[ti] - &e[k])) / pow(ti - k));
        }
        rep.holder = rep.holder.min(m * a_norm * t.powf(1.0 - beta) - holder_semi);
    }
    for gap in 1..grid {
        // r ↦ e^{A(t−r)} − e^{A(s−r)} with t − s = gap·h, indexed by k = s − r.
        let diff: Vec<DMatrix<f64>> = (0..=grid - gap).map(|k| &e[k + gap] - &e[k]).collect();
        let mut semi: f64 = 0.0;
        for si in 1..=grid - gap {
            let (ti, s) = (si + gap, si as f64 * h);
            let t = ti as f64 * h;
            for k in 0..si {
                semi = semi.max(spectral_norm(&(&diff[si] - &diff[k])) / pow(si - k));
            }
            let lhs = spectral_norm(&(&e[ti] - &e[si]));
            rep.increment = rep.increment.min(m * a_norm * (t - s) * (-lambda * s).exp() - lhs);
            let lhs = spectral_norm(&(&e[gap] - &ident));
            rep.identity = rep.identity.min(m * a_norm * (t - s) - lhs);
            rep.holder_difference = rep
                .holder_difference
                .min(m * m * a_norm * a_norm * (t - s) * s.powf(1.0 - beta) - semi);
        }
    }
    rep.min_slack = rep.increment.min(rep.identity).min(rep.holder).min(rep.holder_difference);
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn series_oracle(a: &DMatrix<f64>, t: f64, terms: usize) -> DMatrix<f64> {
        let n = a.nrows();
        let mut sum = DMatrix::identity(n, n);
        let mut term = DMatrix::identity(n, n);
        for k in 1..terms {
            term = &term * a * (t / k as f64);
            sum += &term;
        }
        sum
    }

    #[test]
    fn abscissa_examples() {
        assert_relative_eq!(spectral_abscissa(&(-DMatrix::identity(3, 3))).unwrap(), -1.0, epsilon = 1e-12);
        let rot = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert!(spectral_abscissa(&rot).unwrap().abs() < 1e-12);
        let tri = DMatrix::from_row_slice(2, 2, &[-2.0, 1.0, 0.0, -3.0]);
        assert_relative_eq!(spectral_abscissa(&tri).unwrap(), -2.0, epsilon = 1e-10);
        assert!(matches!(spectral_abscissa(&DMatrix::zeros(2, 3)), Err(Error::Domain(_))));
    }

    #[test]
    fn exp_examples() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -2.0]);
        assert_eq!(matrix_exp(&a, 0.0), DMatrix::identity(2, 2));
        let e = matrix_exp(&a, 1.0);
        assert_relative_eq!(e[(0, 0)], (-1f64).exp(), max_relative = 1e-13);
        assert_relative_eq!(e[(1, 1)], (-2f64).exp(), max_relative = 1e-13);
        let j = DMatrix::from_row_slice(2, 2, &[-2.0, 1.0, 0.0, -2.0]);
        let e = matrix_exp(&j, 1.0);
        let want = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]) * (-2f64).exp();
        assert!((&e - &want).amax() <= 1e-12);
        assert!((&e - series_oracle(&j, 1.0, 60)).amax() <= 1e-12);
    }

    #[test]
    fn exp_large_argument_vs_oracle() {
        // Exact: e^{-50} on the diagonal, 50 e^{-50} above it.
        let j = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 0.0, -1.0]);
        let e = matrix_exp(&j, 50.0);
        let d = (-50f64).exp();
        assert_relative_eq!(e[(0, 0)], d, max_relative = 1e-10);
        assert_relative_eq!(e[(0, 1)], 50.0 * d, max_relative = 1e-10);
    }

    #[test]
    fn exp_integral_scalar() {
        let a = DMatrix::from_element(1, 1, -2.0);
        let phi = exp_integral(&a, 0.3);
        assert_relative_eq!(phi[(0, 0)], (1.0 - (-0.6f64).exp()) / 2.0, max_relative = 1e-13);
    }

    #[test]
    fn m_examples() {
        let s = StableMatrix::new(-DMatrix::identity(2, 2), 0.999_999).unwrap();
        assert_relative_eq!(estimate_m(&s, 50).unwrap().m_const, 1.0, epsilon = 1e-5);
        let d = StableMatrix::new(DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -2.0]), 0.5).unwrap();
        assert_eq!(estimate_m(&d, 50).unwrap().m_const, 1.0);
        // For the unit Jordan block e^{-t}(t/2 + sqrt(1 + t^2/4)) <= 1, so M = 1.
        let j = StableMatrix::new(DMatrix::from_row_slice(2, 2, &[-2.0, 1.0, 0.0, -2.0]), 1.0).unwrap();
        assert_relative_eq!(estimate_m(&j, 50).unwrap().m_const, 1.0, epsilon = 1e-12);
        let j = StableMatrix::new(DMatrix::from_row_slice(2, 2, &[-2.0, 4.0, 0.0, -2.0]), 1.0).unwrap();
        let b = estimate_m(&j, 50).unwrap();
        assert!(b.m_const > 1.0 && b.m_const.is_finite());
        let dense = (0..=20_000)
            .map(|k| {
                let t = k as f64 * 5e-4;
                spectral_norm(&matrix_exp(j.matrix(), t)) * t.exp()
            })
            .fold(0.0, f64::max);
        assert!(b.m_const >= dense * (1.0 - 1e-9), "{b:?} {dense}");
        assert!(b.m_const <= dense * (1.0 + 1e-6));
        assert!(matches!(
            StableMatrix::new(-DMatrix::identity(2, 2), 1.0),
            Err(Error::Stability(_))
        ));
    }

    #[test]
    fn increments_for_negative_identity() {
        let s = StableMatrix::new(-DMatrix::identity(2, 2), 0.9).unwrap();
        let b = estimate_m(&s, 20).unwrap();
        let r = semigroup_increment_check(&s, &b, 0.6, 12).unwrap();
        assert!(r.increment > 0.0 && r.holder > 0.0 && r.holder_difference >= 0.0, "{r:?}");
        assert!(r.min_slack >= 0.0);
    }

    proptest! {
        #[test]
        fn semigroup_law(entries in proptest::collection::vec(-2.0f64..2.0, 9), s in 0.0f64..2.0, t in 0.0f64..2.0) {
            let a = DMatrix::from_row_slice(3, 3, &entries);
            let lhs = matrix_exp(&a, s) * matrix_exp(&a, t);
            let rhs = matrix_exp(&a, s + t);
            prop_assert!((&lhs - &rhs).amax() <= 1e-9 * rhs.amax().max(1.0));
        }
    }
}
