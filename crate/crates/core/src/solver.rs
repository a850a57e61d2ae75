//! Young-ODE solvers: left-point Euler for the direct form, exponential Euler
//! for the mild form, the piecewise-linear driver check, and the scalar
//! Doss–Sussmann solver.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{config, domain, Error, Result};
use crate::fields::{FieldPair, Linearization, LocalizedFields};
use crate::linops::{exp_integral, matrix_exp};
use crate::paths::{holder_norms_of_values, SampledPath};

/// States with a larger norm end the trajectory with a blow-up marker.
pub const BLOW_UP_NORM: f64 = 1e12;

/// Direct-form right-hand side `F(u) dt + G(u) dω`.
pub trait YoungSystem: Send + Sync {
    fn dim(&self) -> usize;
    fn noise_dim(&self) -> usize;
    fn drift(&self, u: &DVector<f64>) -> DVector<f64>;
    fn diffusion(&self, u: &DVector<f64>) -> DMatrix<f64>;
}

/// Mild-form right-hand side `Au dt + F̂(u) dt + G(u) dω`.
pub trait SemilinearSystem: Send + Sync {
    fn linear_part(&self) -> &DMatrix<f64>;
    fn nonlinear_drift(&self, u: &DVector<f64>) -> DVector<f64>;
    fn diffusion(&self, u: &DVector<f64>) -> DMatrix<f64>;
}

impl YoungSystem for FieldPair {
    fn dim(&self) -> usize {
        FieldPair::dim(self)
    }

    fn noise_dim(&self) -> usize {
        FieldPair::noise_dim(self)
    }

    fn drift(&self, u: &DVector<f64>) -> DVector<f64> {
        self.drift.eval(u)
    }

    fn diffusion(&self, u: &DVector<f64>) -> DMatrix<f64> {
        self.diffusion.eval(u)
    }
}

/// The unlocalized semilinear split of a field pair.
pub struct MildFields<'a> {
    pub lin: &'a Linearization,
    pub pair: &'a FieldPair,
}

impl SemilinearSystem for MildFields<'_> {
    fn linear_part(&self) -> &DMatrix<f64> {
        &self.lin.a
    }

    fn nonlinear_drift(&self, u: &DVector<f64>) -> DVector<f64> {
        self.lin.f_hat(u)
    }

    fn diffusion(&self, u: &DVector<f64>) -> DMatrix<f64> {
        self.pair.diffusion.eval(u)
    }
}

impl SemilinearSystem for LocalizedFields {
    fn linear_part(&self) -> &DMatrix<f64> {
        &self.lin.a
    }

    fn nonlinear_drift(&self, u: &DVector<f64>) -> DVector<f64> {
        self.f_hat(u)
    }

    fn diffusion(&self, u: &DVector<f64>) -> DMatrix<f64> {
        self.g(u)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Euler,
    Mild,
    Doss,
}

/// Hölder quantities of the solution on `[n, n+1]` (relative to its start).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitNorm {
    pub n: usize,
    /// `‖u‖_{β,n,n+1}`: sup norm plus Hölder seminorm.
    pub holder_norm: f64,
    pub seminorm: f64,
    pub sup_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub t0: f64,
    pub dt: f64,
    pub dim: usize,
    /// Point-major states; truncated after a blow-up.
    pub values: Vec<f64>,
    pub beta: f64,
    pub per_unit_norms: Vec<UnitNorm>,
    pub scheme: Scheme,
    /// Index of the last finite state with norm at most [`BLOW_UP_NORM`].
    pub blow_up: Option<usize>,
    /// `log|u|` per grid point, kept by the Doss solver where `|u|` may underflow.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_abs: Option<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn point_vector(&self, i: usize) -> DVector<f64> {
        DVector::from_column_slice(self.point(i))
    }

    pub fn last(&self) -> DVector<f64> {
        self.point_vector(self.len() - 1)
    }

    /// Largest pointwise distance to another trajectory on the common grid prefix.
    pub fn sup_distance(&self, other: &Trajectory) -> f64 {
        let n = self.len().min(other.len());
        (0..n)
            .map(|i| self.point(i).iter().zip(other.point(i)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// CSV `t,u1,...,ud`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.dim).map(|k| format!("u{k}")));
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec = vec![format!("{}", self.time(i))];
            rec.extend(self.point(i).iter().map(|v| format!("{v}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// CSV `n,holder_norm,sup_norm`.
    pub fn write_norms_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["n", "holder_norm", "sup_norm"])?;
        for u in &self.per_unit_norms {
            w.write_record([u.n.to_string(), format!("{}", u.holder_norm), format!("{}", u.sup_norm)])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    /// Compute per-unit-interval Hölder norms (quadratic in the points per unit).
    pub unit_norms: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { unit_norms: true }
    }
}

/// Initial-value problem driven by a sampled path.
#[derive(Clone, Debug)]
pub struct YoungProblem {
    pub pair: FieldPair,
    pub omega: SampledPath,
    pub u0: DVector<f64>,
    pub horizon: f64,
    /// Hölder exponent used for the solution norms, `1/2 < β < β′`.
    pub beta: f64,
}

impl YoungProblem {
    pub fn validate(&self) -> Result<usize> {
        if !(self.beta > 0.5 && self.beta < self.omega.beta_prime()) {
            return Err(config(format!(
                "solution exponent {} must lie in (1/2, {})",
                self.beta,
                self.omega.beta_prime()
            )));
        }
        if self.u0.len() != self.pair.dim() || self.u0.iter().any(|v| !v.is_finite()) {
            return Err(config("initial value must be finite with the state dimension"));
        }
        if self.omega.dim() != self.pair.noise_dim() {
            return Err(config(format!(
                "driver has dimension {}, diffusion expects {}",
                self.omega.dim(),
                self.pair.noise_dim()
            )));
        }
        let end = self.omega.index_of(self.omega.t0() + self.horizon)?;
        if end == 0 {
            return Err(domain("horizon must cover at least one grid step"));
        }
        Ok(end)
    }
}

fn run(
    omega: &SampledPath,
    start: usize,
    steps: usize,
    u0: &DVector<f64>,
    beta: f64,
    scheme: Scheme,
    opts: SolveOptions,
    mut step: impl FnMut(&DVector<f64>, &DVector<f64>) -> DVector<f64>,
) -> Trajectory {
    let d = u0.len();
    let mut values = Vec::with_capacity((steps + 1) * d);
    values.extend_from_slice(u0.as_slice());
    let mut u = u0.clone();
    let mut blow_up = None;
    let mut dw = DVector::zeros(omega.dim());
    for i in start..start + steps {
        for ((o, a), b) in dw.iter_mut().zip(omega.point(i + 1)).zip(omega.point(i)) {
            *o = a - b;
        }
        let next = step(&u, &dw);
        let n = next.norm();
        if !n.is_finite() || n > BLOW_UP_NORM {
            blow_up = Some(i - start);
            break;
        }
        values.extend_from_slice(next.as_slice());
        u = next;
    }
    let mut traj = Trajectory {
        t0: omega.time(start),
        dt: omega.dt(),
        dim: d,
        values,
        beta,
        per_unit_norms: Vec::new(),
        scheme,
        blow_up,
        log_abs: None,
    };
    if opts.unit_norms {
        traj.per_unit_norms = unit_norms(&traj);
    }
    traj
}

/// Norms on each complete unit interval of the trajectory.
pub fn unit_norms(traj: &Trajectory) -> Vec<UnitNorm> {
    let per_unit = (1.0 / traj.dt).round() as usize;
    if per_unit == 0 || ((per_unit as f64) * traj.dt - 1.0).abs() > 1e-9 {
        return Vec::new();
    }
    let units = (traj.len() - 1) / per_unit;
    (0..units)
        .map(|n| {
            let slice = &traj.values[n * per_unit * traj.dim..((n + 1) * per_unit + 1) * traj.dim];
            let h = holder_norms_of_values(slice, traj.dim, traj.dt, traj.beta);
            UnitNorm { n, holder_norm: h.full(), seminorm: h.seminorm, sup_norm: h.sup_norm }
        })
        .collect()
}

/// Left-point Euler for any direct-form system over `steps` grid steps from index `start`.
pub fn solve_euler_system(
    sys: &dyn YoungSystem,
    omega: &SampledPath,
    start: usize,
    steps: usize,
    u0: &DVector<f64>,
    beta: f64,
    opts: SolveOptions,
) -> Trajectory {
    let dt = omega.dt();
    run(omega, start, steps, u0, beta, Scheme::Euler, opts, |u, dw| {
        u + sys.drift(u) * dt + sys.diffusion(u) * dw
    })
}

/// `u_{i+1} = u_i + F(u_i)δ + G(u_i)Δω_i`.
pub fn solve_euler(problem: &YoungProblem, opts: SolveOptions) -> Result<Trajectory> {
    let end = problem.validate()?;
    Ok(solve_euler_system(&problem.pair, &problem.omega, 0, end, &problem.u0, problem.beta, opts))
}

/// Precomputed `e^{Aδ}` and `∫_0^δ e^{As} ds`.
#[derive(Clone, Debug)]
pub struct MildPropagator {
    pub e: DMatrix<f64>,
    pub phi: DMatrix<f64>,
}

impl MildPropagator {
    pub fn new(a: &DMatrix<f64>, dt: f64) -> Self {
        Self { e: matrix_exp(a, dt), phi: exp_integral(a, dt) }
    }
}

/// Exponential Euler for any semilinear system.
pub fn solve_mild_system(
    sys: &dyn SemilinearSystem,
    prop: &MildPropagator,
    omega: &SampledPath,
    start: usize,
    steps: usize,
    u0: &DVector<f64>,
    beta: f64,
    opts: SolveOptions,
) -> Trajectory {
    run(omega, start, steps, u0, beta, Scheme::Mild, opts, |u, dw| {
        &prop.e * (u + sys.diffusion(u) * dw) + &prop.phi * sys.nonlinear_drift(u)
    })
}

/// `u_{i+1} = e^{Aδ}u_i + (∫_0^δ e^{As}ds)F̂(u_i) + e^{Aδ}G(u_i)Δω_i`.
pub fn solve_mild(lin: &Linearization, problem: &YoungProblem, opts: SolveOptions) -> Result<Trajectory> {
    let end = problem.validate()?;
    let prop = MildPropagator::new(&lin.a, problem.omega.dt());
    let sys = MildFields { lin, pair: &problem.pair };
    Ok(solve_mild_system(&sys, &prop, &problem.omega, 0, end, &problem.u0, problem.beta, opts))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WongZakaiLevel {
    pub level: usize,
    pub coarse_step: f64,
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WongZakaiReport {
    pub levels: Vec<WongZakaiLevel>,
    /// Distances are non-increasing over the second half of the levels.
    pub tail_non_increasing: bool,
}

/// Solves with the driver replaced by its piecewise-linear interpolant at
/// coarse steps `T 2^{−ℓ}`, ℓ = 1..=levels, and measures the sup-distance to
/// the solution driven by the sampled path itself.
pub fn wong_zakai_check(problem: &YoungProblem, levels: usize) -> Result<WongZakaiReport> {
    if levels < 2 {
        return Err(config("at least two levels are required"));
    }
    let end = problem.validate()?;
    if problem.omega.t0() != 0.0 {
        return Err(domain("driver must start at t = 0"));
    }
    let omega = problem.omega.restrict(0.0, problem.omega.time(end))?;
    let opts = SolveOptions { unit_norms: false };
    let reference = solve_euler_system(&problem.pair, &omega, 0, end, &problem.u0, problem.beta, opts);
    let mut out = Vec::new();
    for level in 1..=levels {
        let pieces = 1usize << level;
        if end % pieces != 0 {
            return Err(domain(format!("grid of {end} steps cannot be split into {pieces} pieces")));
        }
        let coarse = omega.coarse_interpolant(end / pieces)?;
        let traj = solve_euler_system(&problem.pair, &coarse, 0, end, &problem.u0, problem.beta, opts);
        out.push(WongZakaiLevel {
            level,
            coarse_step: problem.horizon / pieces as f64,
            distance: traj.sup_distance(&reference),
        });
    }
    let tail = &out[out.len() / 2..];
    let tail_non_increasing = tail.windows(2).all(|w| w[1].distance <= w[0].distance);
    Ok(WongZakaiReport { levels: out, tail_non_increasing })
}

type ScalarFn = dyn Fn(f64) -> f64 + Send + Sync;

/// Scalar `du = (−λu + F̂(u))dt + γu dω` with `|F̂(x)| ≤ μ|x|`, `0 ≤ μ < λ`.
#[derive(Clone)]
pub struct DossProblem {
    pub lambda: f64,
    pub gamma: f64,
    pub mu: f64,
    pub f_hat: Arc<ScalarFn>,
    pub omega: SampledPath,
    pub u0: f64,
    pub horizon: f64,
}

impl std::fmt::Debug for DossProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DossProblem")
            .field("lambda", &self.lambda)
            .field("gamma", &self.gamma)
            .field("mu", &self.mu)
            .field("u0", &self.u0)
            .field("horizon", &self.horizon)
            .finish()
    }
}

impl DossProblem {
    pub fn new(
        lambda: f64,
        gamma: f64,
        mu: f64,
        f_hat: Arc<ScalarFn>,
        omega: SampledPath,
        u0: f64,
        horizon: f64,
    ) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(config(format!("lambda must be positive, got {lambda}")));
        }
        if !(mu >= 0.0 && mu < lambda) {
            return Err(config(format!("mu must satisfy 0 <= mu < lambda, got mu={mu}, lambda={lambda}")));
        }
        if !gamma.is_finite() || !u0.is_finite() {
            return Err(config("gamma and u0 must be finite"));
        }
        if omega.dim() != 1 {
            return Err(config("the Doss solver needs a scalar driver"));
        }
        omega.index_of(omega.t0() + horizon)?;
        // Dense two-sided sample, log-spaced over many decades plus a linear block.
        let mut xs: Vec<f64> = (-300..=300).map(|k| 10f64.powf(k as f64 / 20.0)).collect();
        xs.extend((1..=2000).map(|k| k as f64 * 0.01));
        for x in xs {
            for s in [x, -x] {
                let v = f_hat(s);
                if !(v.abs() <= mu * s.abs() * (1.0 + 1e-12)) {
                    return Err(Error::Validation(format!("|F̂({s})| = {} exceeds mu|x| = {}", v.abs(), mu * s.abs())));
                }
            }
        }
        if f_hat(0.0) != 0.0 {
            return Err(Error::Validation("F̂(0) must vanish".into()));
        }
        Ok(Self { lambda, gamma, mu, f_hat, omega, u0, horizon })
    }

    /// The direct-form field pair `F(x) = −λx + F̂(x)`, `G(x) = γx`.
    pub fn field_pair(&self, df_hat: impl Fn(f64) -> f64 + Send + Sync + 'static, rho: f64) -> Result<FieldPair> {
        let (lambda, gamma) = (self.lambda, self.gamma);
        let f = self.f_hat.clone();
        FieldPair::new(
            crate::fields::scalar_drift(move |x| -lambda * x + f(x), move |x| -lambda + df_hat(x)),
            crate::fields::scalar_diffusion(move |x| gamma * x, move |_| gamma, |_| 0.0),
            rho,
        )
    }
}

/// Integrates `D′ = e^{−γω+λt} F̂(e^{γω−λt} D)` with classical RK4 (ω linear
/// within a step) and reconstructs `u = e^{−λt + γω} D` in log-magnitude form.
///
/// The right-hand side is evaluated as `D · F̂(x)/x` with `x = e^{γω−λt}D` so
/// no factor `e^{±λt}` is ever formed; when `x` underflows the ratio is
/// replaced by its value at `x = ±1e-150`.
pub fn doss_solve(problem: &DossProblem) -> Result<Trajectory> {
    let omega = &problem.omega;
    let steps = omega.index_of(omega.t0() + problem.horizon)?;
    let (lambda, gamma) = (problem.lambda, problem.gamma);
    let f = &problem.f_hat;
    let dt = omega.dt();
    let t0 = omega.t0();
    let rate = |t: f64, w: f64, d: f64| -> f64 {
        if d == 0.0 {
            return 0.0;
        }
        let log_x = d.abs().ln() + gamma * w - lambda * (t - t0);
        let x = if log_x < -690.0 {
            1e-150
        } else {
            log_x.min(690.0).exp()
        } * d.signum();
        d * f(x) / x
    };
    let mut d_vals = Vec::with_capacity(steps + 1);
    let mut d = problem.u0;
    d_vals.push(d);
    for i in 0..steps {
        let t = omega.time(i);
        let (w0, w1) = (omega.point(i)[0], omega.point(i + 1)[0]);
        let wm = 0.5 * (w0 + w1);
        let k1 = rate(t, w0, d);
        let k2 = rate(t + 0.5 * dt, wm, d + 0.5 * dt * k1);
        let k3 = rate(t + 0.5 * dt, wm, d + 0.5 * dt * k2);
        let k4 = rate(t + dt, w1, d + dt * k3);
        d += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if !d.is_finite() {
            return Err(Error::Numeric(format!("transformed variable left the representable range at step {i}")));
        }
        d_vals.push(d);
    }
    let w_start = omega.point(0)[0];
    let mut values = Vec::with_capacity(steps + 1);
    let mut log_abs = Vec::with_capacity(steps + 1);
    for (i, d) in d_vals.iter().enumerate() {
        let l = d.abs().ln() - lambda * (omega.time(i) - t0) + gamma * (omega.point(i)[0] - w_start);
        log_abs.push(l);
        values.push(d.signum() * l.exp());
    }
    Ok(Trajectory {
        t0,
        dt,
        dim: 1,
        values,
        beta: omega.beta_prime(),
        per_unit_norms: Vec::new(),
        scheme: Scheme::Doss,
        blow_up: None,
        log_abs: Some(log_abs),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DossBoundReport {
    pub min_slack: f64,
    pub min_slack_index: usize,
    pub tol: f64,
    pub holds: bool,
}

/// Slack `e^{γ|ω(t)|}e^{(μ−λ)t}|u0| − |u(t)|` at every grid point.
pub fn doss_bound_check(traj: &Trajectory, problem: &DossProblem) -> DossBoundReport {
    let tol = 1e-6 * problem.u0.abs();
    let w0 = problem.omega.point(0)[0];
    let mut min = f64::INFINITY;
    let mut at = 0;
    for i in 0..traj.len() {
        let t = traj.time(i) - traj.t0;
        let w = problem.omega.point(i)[0] - w0;
        let bound = (problem.gamma * w.abs() + (problem.mu - problem.lambda) * t).exp() * problem.u0.abs();
        let slack = bound - traj.values[i].abs();
        if slack < min {
            min = slack;
            at = i;
        }
    }
    DossBoundReport { min_slack: min, min_slack_index: at, tol, holds: min >= -tol }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{linear_pair, scalar_diffusion, scalar_drift, split_linearization};
    use crate::paths::{fbm_sample, FbmConfig};
    use approx::assert_relative_eq;

    fn scalar_pair(f: fn(f64) -> f64, df: fn(f64) -> f64, g: fn(f64) -> f64, dg: fn(f64) -> f64) -> FieldPair {
        FieldPair::new(scalar_drift(f, df), scalar_diffusion(g, dg, |_| 0.0), 10.0).unwrap()
    }

    fn quadratic_noise_pair() -> FieldPair {
        FieldPair::new(
            scalar_drift(|x| -x + x * x, |x| -1.0 + 2.0 * x),
            scalar_diffusion(|x| x * x, |x| 2.0 * x, |_| 2.0),
            10.0,
        )
        .unwrap()
    }

    fn smooth(n_per_unit: usize, horizon: f64) -> SampledPath {
        let n = (n_per_unit as f64 * horizon) as usize;
        SampledPath::from_fn(0.0, 1.0 / n_per_unit as f64, n, 0.9, |t| (2.0 * t).sin() + 0.5 * t).unwrap()
    }

    fn problem(pair: FieldPair, omega: SampledPath, u0: f64, horizon: f64) -> YoungProblem {
        YoungProblem { pair, omega, u0: DVector::from_element(1, u0), horizon, beta: 0.6 }
    }

    #[test]
    fn pure_drift_decay() {
        let pair = scalar_pair(|x| -x, |_| -1.0, |_| 0.0, |_| 0.0);
        let p = problem(pair, smooth(1024, 2.0), 1.0, 2.0);
        let tr = solve_euler(&p, SolveOptions::default()).unwrap();
        assert!((tr.last()[0] - (-2f64).exp()).abs() < 1e-3);
        assert_eq!(tr.per_unit_norms.len(), 2);
        // Zero driver leaves the drift ODE.
        let flat = SampledPath::from_fn(0.0, 1.0 / 1024.0, 2048, 0.9, |_| 0.0).unwrap();
        let pair = scalar_pair(|x| -x, |_| -1.0, |x| x, |_| 1.0);
        let tr2 = solve_euler(&problem(pair, flat, 1.0, 2.0), SolveOptions::default()).unwrap();
        assert_eq!(tr.values, tr2.values);
    }

    #[test]
    fn multiplicative_noise_closed_form() {
        let pair = scalar_pair(|_| 0.0, |_| 0.0, |x| 0.7 * x, |_| 0.7);
        let w = smooth(1 << 14, 1.0);
        let tr = solve_euler(&problem(pair, w.clone(), 2.0, 1.0), SolveOptions::default()).unwrap();
        let err = (0..tr.len()).map(|i| (tr.values[i] - 2.0 * (0.7 * w.point(i)[0]).exp()).abs()).fold(0.0, f64::max);
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn mild_exact_for_linear_drift() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, 0.0, -2.0]);
        let pair = linear_pair(a.clone(), vec![DMatrix::zeros(2, 2)], 1.0).unwrap();
        let lin = split_linearization(&pair).unwrap();
        let w = smooth(64, 3.0);
        let u0 = DVector::from_vec(vec![1.0, -1.0]);
        let p = YoungProblem { pair, omega: w, u0: u0.clone(), horizon: 3.0, beta: 0.6 };
        let tr = solve_mild(&lin, &p, SolveOptions::default()).unwrap();
        for i in [0, 64, 192] {
            let want = matrix_exp(&a, i as f64 / 64.0) * &u0;
            assert!((tr.point_vector(i) - want).amax() < 1e-12);
        }
    }

    #[test]
    fn mild_scalar_closed_form_and_euler_agreement() {
        let pair = scalar_pair(|x| -x, |_| -1.0, |x| 0.5 * x, |_| 0.5);
        let lin = split_linearization(&pair).unwrap();
        let mut dists = Vec::new();
        for k in [10, 11, 12] {
            let w = smooth(1 << k, 2.0);
            let p = problem(pair.clone(), w.clone(), 1.0, 2.0);
            let mild = solve_mild(&lin, &p, SolveOptions::default()).unwrap();
            let euler = solve_euler(&p, SolveOptions::default()).unwrap();
            if k == 12 {
                let exact = |i: usize| (-w.time(i) + 0.5 * w.point(i)[0]).exp();
                let err = (0..mild.len()).map(|i| (mild.values[i] - exact(i)).abs()).fold(0.0, f64::max);
                assert!(err < 1e-3, "{err}");
            }
            dists.push(mild.sup_distance(&euler));
        }
        for w in dists.windows(2) {
            assert!((w[0] / w[1]).log2() >= 0.9, "{dists:?}");
        }
    }

    #[test]
    fn zero_solution_is_exact() {
        let pair = quadratic_noise_pair();
        let lin = split_linearization(&pair).unwrap();
        let w = fbm_sample(&FbmConfig::scalar(0.75, 2.0, 512, 4)).unwrap();
        let p = problem(pair, w, 0.0, 2.0);
        assert!(solve_euler(&p, SolveOptions::default()).unwrap().values.iter().all(|v| *v == 0.0));
        assert!(solve_mild(&lin, &p, SolveOptions::default()).unwrap().values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn blow_up_is_marked() {
        let pair = scalar_pair(|x| x * x, |x| 2.0 * x, |_| 0.0, |_| 0.0);
        let w = SampledPath::from_fn(0.0, 0.01, 300, 0.9, |_| 0.0).unwrap();
        let tr = solve_euler(&problem(pair, w, 1.0, 3.0), SolveOptions::default()).unwrap();
        let at = tr.blow_up.expect("must blow up");
        assert_eq!(tr.len(), at + 1);
        assert!(tr.values.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn wong_zakai_examples() {
        let pair = scalar_pair(|x| -x, |_| -1.0, |x| 0.5 * x, |_| 0.5);
        // Piecewise linear with 4 pieces on [0, 1].
        let knots = [0.0, 0.3, -0.1, 0.4, 0.2];
        let w = SampledPath::from_fn(0.0, 1.0 / 256.0, 256, 0.9, |t| {
            let x = t * 4.0;
            let k = (x.floor() as usize).min(3);
            knots[k] + (x - k as f64) * (knots[k + 1] - knots[k])
        })
        .unwrap();
        let r = wong_zakai_check(&problem(pair.clone(), w, 1.0, 1.0), 4).unwrap();
        assert!(r.levels[1].distance <= 1e-12 && r.levels[3].distance <= 1e-12, "{r:?}");

        let w = fbm_sample(&FbmConfig::scalar(0.75, 1.0, 1 << 12, 9)).unwrap();
        let r = wong_zakai_check(&problem(pair.clone(), w, 1.0, 1.0), 5).unwrap();
        assert!(r.levels.windows(2).all(|w| w[1].distance <= w[0].distance), "{r:?}");

        let w = smooth(1 << 12, 1.0);
        let r = wong_zakai_check(&problem(pair, w, 1.0, 1.0), 6).unwrap();
        let (a, b) = (r.levels[3].distance, r.levels[5].distance);
        assert!((a / b).log2() / 2.0 >= 1.0 - 0.1, "{r:?}");
    }

    fn sine_problem(seed: u64, omega_fn: Option<SampledPath>, f_hat: Arc<ScalarFn>, mu: f64) -> DossProblem {
        let w = omega_fn.unwrap_or_else(|| fbm_sample(&FbmConfig::scalar(0.75, 5.0, 5 << 10, seed)).unwrap());
        DossProblem::new(1.0, 0.5, mu, f_hat, w, 1.0, 5.0).unwrap()
    }

    #[test]
    fn doss_trivial_cases() {
        let w = SampledPath::from_fn(0.0, 1.0 / 64.0, 320, 0.9, |t| t.sin()).unwrap();
        let mut p = sine_problem(0, Some(w.clone()), Arc::new(|_| 0.0), 0.0);
        p.gamma = 0.0;
        let tr = doss_solve(&p).unwrap();
        for i in 0..tr.len() {
            assert_relative_eq!(tr.values[i], (-tr.time(i)).exp(), max_relative = 1e-14);
        }
        p.gamma = 0.5;
        let tr = doss_solve(&p).unwrap();
        for i in 0..tr.len() {
            assert_relative_eq!(tr.values[i], (-tr.time(i) + 0.5 * w.point(i)[0]).exp(), max_relative = 1e-14);
        }
        let rep = doss_bound_check(&tr, &p);
        assert!(rep.min_slack >= 0.0);
        assert_eq!(doss_bound_check(&doss_solve(&p).unwrap(), &p).holds, true);
    }

    #[test]
    fn doss_rejects_excess_growth() {
        let w = SampledPath::from_fn(0.0, 0.1, 10, 0.9, |t| t).unwrap();
        let r = DossProblem::new(1.0, 0.5, 0.5, Arc::new(|x: f64| 0.6 * x.sin()), w.clone(), 1.0, 1.0);
        assert!(matches!(r, Err(Error::Validation(_))));
        let r = DossProblem::new(1.0, 0.5, 1.0, Arc::new(|x: f64| 0.5 * x.sin()), w, 1.0, 1.0);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn doss_matches_euler_and_bound() {
        let p = sine_problem(21, None, Arc::new(|x: f64| 0.5 * x.sin()), 0.5);
        let tr = doss_solve(&p).unwrap();
        let pair = p.field_pair(|x| 0.5 * x.cos(), 10.0).unwrap();
        let yp = YoungProblem { pair, omega: p.omega.clone(), u0: DVector::from_element(1, 1.0), horizon: 5.0, beta: 0.6 };
        let eu = solve_euler(&yp, SolveOptions { unit_norms: false }).unwrap();
        assert!(tr.sup_distance(&eu) < 2e-2, "{}", tr.sup_distance(&eu));
        let rep = doss_bound_check(&tr, &p);
        assert!(rep.holds, "{rep:?}");
    }

    #[test]
    fn doss_survives_long_horizons() {
        let w = fbm_sample(&FbmConfig::scalar(0.75, 200.0, 200 << 6, 2)).unwrap();
        let p = DossProblem::new(1.0, 0.5, 0.5, Arc::new(|x: f64| 0.5 * x.sin()), w, 1.0, 200.0).unwrap();
        let tr = doss_solve(&p).unwrap();
        let l = tr.log_abs.as_ref().unwrap();
        assert!(l.iter().all(|v| v.is_finite()));
        assert!(*l.last().unwrap() < -50.0);
    }

    #[test]
    fn csv_exports() {
        let pair = scalar_pair(|x| -x, |_| -1.0, |_| 0.0, |_| 0.0);
        let tr = solve_euler(&problem(pair, smooth(8, 2.0), 1.0, 2.0), SolveOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        tr.write_csv(dir.path().join("u.csv")).unwrap();
        tr.write_norms_csv(dir.path().join("n.csv")).unwrap();
        let n = std::fs::read_to_string(dir.path().join("n.csv")).unwrap();
        assert!(n.starts_with("n,holder_norm,sup_norm\n0,"));
        assert_eq!(n.lines().count(), 3);
        let u = std::fs::read_to_string(dir.path().join("u.csv")).unwrap();
        assert!(u.starts_with("t,u1\n0,1\n"));
    }
}
