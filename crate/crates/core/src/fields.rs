//! Drift and diffusion fields, the linearization split, the C² cut-off and
//! the localization radius calculus.

use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{config, domain, Error, Result};
use crate::linops::spectral_norm;
use crate::paths::{holder_seminorm, SampledPath};

/// Tolerance for the structural conditions at the origin.
pub const ORIGIN_TOL: f64 = 1e-12;
/// Relative tolerance for derivative oracles against central differences.
pub const ORACLE_TOL: f64 = 1e-5;
const FD_STEP: f64 = 1e-5;
const ORACLE_POINTS: usize = 100;

/// A map `R^d → R^d` with its Jacobian.
pub trait VectorField: Send + Sync {
    fn dim(&self) -> usize;
    fn eval(&self, x: &DVector<f64>) -> DVector<f64>;
    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64>;
}

/// A map `R^d → L(R^m, R^d)` with first and second derivatives.
pub trait DiffusionField: Send + Sync {
    fn state_dim(&self) -> usize;
    fn noise_dim(&self) -> usize;
    /// `d × m` matrix.
    fn eval(&self, x: &DVector<f64>) -> DMatrix<f64>;
    /// Entry `k` is `∂G/∂x_k`.
    fn derivative(&self, x: &DVector<f64>) -> Vec<DMatrix<f64>>;
    /// Entry `[k][l]` is `∂²G/∂x_k∂x_l`.
    fn second_derivative(&self, x: &DVector<f64>) -> Vec<Vec<DMatrix<f64>>>;
}

type VecFn = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;
type MatFn = dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync;
type MatListFn = dyn Fn(&DVector<f64>) -> Vec<DMatrix<f64>> + Send + Sync;
type MatGridFn = dyn Fn(&DVector<f64>) -> Vec<Vec<DMatrix<f64>>> + Send + Sync;

/// Drift built from closures.
pub struct FnDrift {
    pub dim: usize,
    pub f: Box<VecFn>,
    pub df: Box<MatFn>,
}

impl VectorField for FnDrift {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.f)(x)
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (self.df)(x)
    }
}

/// Diffusion built from closures.
pub struct FnDiffusion {
    pub state_dim: usize,
    pub noise_dim: usize,
    pub g: Box<MatFn>,
    pub dg: Box<MatListFn>,
    pub d2g: Box<MatGridFn>,
}

impl DiffusionField for FnDiffusion {
    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    fn eval(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (self.g)(x)
    }

    fn derivative(&self, x: &DVector<f64>) -> Vec<DMatrix<f64>> {
        (self.dg)(x)
    }

    fn second_derivative(&self, x: &DVector<f64>) -> Vec<Vec<DMatrix<f64>>> {
        (self.d2g)(x)
    }
}

/// Scalar drift from `f` and `f′`.
pub fn scalar_drift(
    f: impl Fn(f64) -> f64 + Send + Sync + 'static,
    df: impl Fn(f64) -> f64 + Send + Sync + 'static,
) -> Arc<dyn VectorField> {
    Arc::new(FnDrift {
        dim: 1,
        f: Box::new(move |x| DVector::from_element(1, f(x[0]))),
        df: Box::new(move |x| DMatrix::from_element(1, 1, df(x[0]))),
    })
}

/// Scalar diffusion (one noise dimension) from `g`, `g′`, `g″`.
pub fn scalar_diffusion(
    g: impl Fn(f64) -> f64 + Send + Sync + 'static,
    dg: impl Fn(f64) -> f64 + Send + Sync + 'static,
    d2g: impl Fn(f64) -> f64 + Send + Sync + 'static,
) -> Arc<dyn DiffusionField> {
    Arc::new(FnDiffusion {
        state_dim: 1,
        noise_dim: 1,
        g: Box::new(move |x| DMatrix::from_element(1, 1, g(x[0]))),
        dg: Box::new(move |x| vec![DMatrix::from_element(1, 1, dg(x[0]))]),
        d2g: Box::new(move |x| vec![vec![DMatrix::from_element(1, 1, d2g(x[0]))]]),
    })
}

/// Frobenius norm of the derivative tensor `DG`, which bounds
/// `‖Σ_k h_k ∂_kG‖_F ≤ ‖DG‖ ‖h‖`.
pub fn tensor_norm(dg: &[DMatrix<f64>]) -> f64 {
    dg.iter().map(|m| m.norm_squared()).sum::<f64>().sqrt()
}

type BoundFn = dyn Fn(f64) -> f64 + Send + Sync;

/// Drift `F`, diffusion `G` and the radius `ρ` of the ball they live on.
#[derive(Clone)]
pub struct FieldPair {
    pub drift: Arc<dyn VectorField>,
    pub diffusion: Arc<dyn DiffusionField>,
    pub rho: f64,
    /// Optional closed-form (or upper-bound) replacement for the sampled bound map.
    pub bound_closed_form: Option<Arc<BoundFn>>,
}

impl std::fmt::Debug for FieldPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FieldPair")
            .field("dim", &self.drift.dim())
            .field("noise_dim", &self.diffusion.noise_dim())
            .field("rho", &self.rho)
            .field("closed_form_bound", &self.bound_closed_form.is_some())
            .finish()
    }
}

impl FieldPair {
    /// Checks dimensions and validates every derivative oracle against central
    /// differences at 100 deterministic random points of the ball of radius `rho`.
    pub fn new(drift: Arc<dyn VectorField>, diffusion: Arc<dyn DiffusionField>, rho: f64) -> Result<Self> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(config(format!("domain radius must be positive, got {rho}")));
        }
        if drift.dim() == 0 || drift.dim() != diffusion.state_dim() || diffusion.noise_dim() == 0 {
            return Err(config(format!(
                "drift acts on R^{}, diffusion on R^{} with {} noise dimensions",
                drift.dim(),
                diffusion.state_dim(),
                diffusion.noise_dim()
            )));
        }
        let pair = Self { drift, diffusion, rho, bound_closed_form: None };
        pair.validate_oracles()?;
        Ok(pair)
    }

    pub fn with_bound(mut self, h: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.bound_closed_form = Some(Arc::new(h));
        self
    }

    pub fn dim(&self) -> usize {
        self.drift.dim()
    }

    pub fn noise_dim(&self) -> usize {
        self.diffusion.noise_dim()
    }

    fn validate_oracles(&self) -> Result<()> {
        let d = self.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(0x0f1e_1d05);
        for _ in 0..ORACLE_POINTS {
            let x = random_in_ball(&mut rng, d, self.rho);
            let h = FD_STEP * x.norm().max(1.0);
            let jac = self.drift.jacobian(&x);
            let dg = self.diffusion.derivative(&x);
            let d2g = self.diffusion.second_derivative(&x);
            for k in 0..d {
                let (xp, xm) = shifted(&x, k, h);
                let fd = (self.drift.eval(&xp) - self.drift.eval(&xm)) / (2.0 * h);
                check_close(fd.as_slice(), jac.column(k).into_owned().as_slice(), "drift Jacobian", &x)?;
                let fd = (self.diffusion.eval(&xp) - self.diffusion.eval(&xm)) / (2.0 * h);
                check_close(fd.as_slice(), dg[k].as_slice(), "diffusion derivative", &x)?;
                let (dp, dm) = (self.diffusion.derivative(&xp), self.diffusion.derivative(&xm));
                for l in 0..d {
                    let fd = (&dp[l] - &dm[l]) / (2.0 * h);
                    check_close(fd.as_slice(), d2g[k][l].as_slice(), "diffusion second derivative", &x)?;
                }
            }
        }
        Ok(())
    }

    /// `F(0) = 0`, `G(0) = 0` and `DG(0) = 0` within [`ORIGIN_TOL`].
    pub fn check_origin_assumptions(&self) -> Result<()> {
        let zero = DVector::zeros(self.dim());
        let f0 = self.drift.eval(&zero).norm();
        let g0 = self.diffusion.eval(&zero).norm();
        let dg0 = tensor_norm(&self.diffusion.derivative(&zero));
        if f0 > ORIGIN_TOL || g0 > ORIGIN_TOL {
            return Err(Error::Validation(format!("fields do not vanish at 0: |F(0)|={f0:e}, |G(0)|={g0:e}")));
        }
        if dg0 > ORIGIN_TOL {
            return Err(Error::Validation(format!("diffusion derivative does not vanish at 0: |DG(0)|={dg0:e}")));
        }
        Ok(())
    }
}

fn shifted(x: &DVector<f64>, k: usize, h: f64) -> (DVector<f64>, DVector<f64>) {
    let (mut p, mut m) = (x.clone(), x.clone());
    p[k] += h;
    m[k] -= h;
    (p, m)
}

fn check_close(fd: &[f64], oracle: &[f64], what: &str, x: &DVector<f64>) -> Result<()> {
    let err = fd.iter().zip(oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let scale = oracle.iter().map(|v| v.abs()).fold(1.0, f64::max);
    if !(err <= ORACLE_TOL * scale) {
        return Err(Error::Validation(format!(
            "{what} disagrees with finite differences by {err:e} at x = {:?}",
            x.as_slice()
        )));
    }
    Ok(())
}

pub(crate) fn random_in_ball(rng: &mut ChaCha8Rng, d: usize, radius: f64) -> DVector<f64> {
    let dir = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let n = dir.norm();
    let r = radius * rng.random::<f64>().powf(1.0 / d as f64);
    if n == 0.0 {
        return DVector::zeros(d);
    }
    dir * (r / n)
}

/// `A = DF(0)` and the remainder `F̂(x) = F(x) − Ax`.
#[derive(Clone)]
pub struct Linearization {
    pub a: DMatrix<f64>,
    drift: Arc<dyn VectorField>,
}

impl std::fmt::Debug for Linearization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Linearization").field("a", &self.a).finish()
    }
}

impl Linearization {
    pub fn f_hat(&self, x: &DVector<f64>) -> DVector<f64> {
        self.drift.eval(x) - &self.a * x
    }

    pub fn df_hat(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.drift.jacobian(x) - &self.a
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }
}

/// Splits off the linear part at the origin; the Jacobian oracle at 0 is
/// re-checked against central differences.
pub fn split_linearization(pair: &FieldPair) -> Result<Linearization> {
    let d = pair.dim();
    let zero = DVector::zeros(d);
    let a = pair.drift.jacobian(&zero);
    for k in 0..d {
        let (p, m) = shifted(&zero, k, FD_STEP);
        let fd = (pair.drift.eval(&p) - pair.drift.eval(&m)) / (2.0 * FD_STEP);
        check_close(fd.as_slice(), a.column(k).into_owned().as_slice(), "drift Jacobian at 0", &zero)?;
    }
    Ok(Linearization { a, drift: pair.drift.clone() })
}

/// The radial cut-off profile and its derivative bounds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutoffKit {
    pub l_dchi: f64,
    pub l_d2chi: f64,
}

fn smoothstep(x: f64) -> (f64, f64, f64) {
    let x2 = x * x;
    (
        x2 * x * (10.0 - 15.0 * x + 6.0 * x2),
        30.0 * x2 * (1.0 - x) * (1.0 - x),
        60.0 * x * (1.0 - x) * (1.0 - 2.0 * x),
    )
}

/// `φ(r)`, `φ′(r)`, `φ″(r)`: 1 on `[0, 1/2]`, `1 − S(2r − 1)` on `(1/2, 1)`, 0 beyond.
pub fn profile(r: f64) -> (f64, f64, f64) {
    if r <= 0.5 {
        (1.0, 0.0, 0.0)
    } else if r >= 1.0 {
        (0.0, 0.0, 0.0)
    } else {
        let (s, ds, d2s) = smoothstep(2.0 * r - 1.0);
        (1.0 - s, -2.0 * ds, -4.0 * d2s)
    }
}

impl CutoffKit {
    /// Constants from a dense scan of the profile, with 1% headroom.
    ///
    /// `Dχ(u) = φ I + φ′ uuᵀ/r` has norm `max(|φ|, |φ + rφ′|)`; the second
    /// derivative is bounded by `r|φ″| + 3|φ′|`.
    pub fn quintic() -> Self {
        static KIT: OnceLock<CutoffKit> = OnceLock::new();
        *KIT.get_or_init(|| {
            let (mut l1, mut l2): (f64, f64) = (0.0, 0.0);
            let n = 200_000;
            for k in 0..=n {
                let r = 1.2 * k as f64 / n as f64;
                let (p, dp, d2p) = profile(r);
                l1 = l1.max(p.abs()).max((p + r * dp).abs());
                l2 = l2.max(r * d2p.abs() + 3.0 * dp.abs());
            }
            CutoffKit { l_dchi: 1.01 * l1, l_d2chi: 1.01 * l2 }
        })
    }

    /// `χ(u) = φ(‖u‖) u`.
    pub fn chi(&self, u: &DVector<f64>) -> DVector<f64> {
        let n = u.norm();
        if n <= 0.5 {
            u.clone()
        } else if n >= 1.0 {
            DVector::zeros(u.len())
        } else {
            u * profile(n).0
        }
    }
}

impl Default for CutoffKit {
    fn default() -> Self {
        Self::quintic()
    }
}

/// `χ_{R̂}(u) = R̂ χ(u / R̂)`.
pub fn cutoff(_kit: &CutoffKit, u: &DVector<f64>, r_hat: f64) -> Result<DVector<f64>> {
    if !(r_hat > 0.0) {
        return Err(domain(format!("cut-off radius must be positive, got {r_hat}")));
    }
    Ok(cutoff_unchecked(u, r_hat))
}

pub(crate) fn cutoff_unchecked(u: &DVector<f64>, r_hat: f64) -> DVector<f64> {
    let n = u.norm();
    if n <= 0.5 * r_hat {
        u.clone()
    } else if n >= r_hat {
        DVector::zeros(u.len())
    } else {
        u * profile(n / r_hat).0
    }
}

/// `F̂∘χ_{R̂}` and `G∘χ_{R̂}` on all of `R^d`.
#[derive(Clone, Debug)]
pub struct LocalizedFields {
    pub lin: Linearization,
    pub pair: FieldPair,
    pub kit: CutoffKit,
    pub r_hat: f64,
}

impl LocalizedFields {
    pub fn f_hat(&self, u: &DVector<f64>) -> DVector<f64> {
        self.lin.f_hat(&cutoff_unchecked(u, self.r_hat))
    }

    pub fn g(&self, u: &DVector<f64>) -> DMatrix<f64> {
        self.pair.diffusion.eval(&cutoff_unchecked(u, self.r_hat))
    }
}

pub fn localized_fields(lin: &Linearization, pair: &FieldPair, kit: &CutoffKit, r_hat: f64) -> Result<LocalizedFields> {
    if !(r_hat > 0.0) {
        return Err(domain(format!("cut-off radius must be positive, got {r_hat}")));
    }
    if r_hat > pair.rho {
        return Err(domain(format!("cut-off radius {r_hat} exceeds the domain radius {}", pair.rho)));
    }
    Ok(LocalizedFields { lin: lin.clone(), pair: pair.clone(), kit: *kit, r_hat })
}

/// Largest violations (left side minus right side) of the localized-field bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalizedBoundReport {
    /// `‖F̂_{R̂}(u)‖ ≤ R L_{Dχ} ‖u‖`.
    pub drift_growth: f64,
    /// `‖G_{R̂}(u)‖ ≤ R L_{Dχ} ‖u‖`.
    pub diffusion_growth: f64,
    /// `‖G_{R̂}(u) − G_{R̂}(z)‖ ≤ R L_{Dχ} ‖u − z‖`.
    pub diffusion_lipschitz: f64,
    pub samples: usize,
}

impl LocalizedBoundReport {
    pub fn max_violation(&self) -> f64 {
        self.drift_growth.max(self.diffusion_growth).max(self.diffusion_lipschitz)
    }
}

/// Samples `(u, z)` pairs in the ball of radius `2R̂` and records the worst
/// violation of each localized-field inequality.
pub fn localized_bound_check(loc: &LocalizedFields, r_target: f64, samples: usize, seed: u64) -> LocalizedBoundReport {
    let d = loc.lin.dim();
    let c = r_target * loc.kit.l_dchi;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = LocalizedBoundReport {
        drift_growth: f64::NEG_INFINITY,
        diffusion_growth: f64::NEG_INFINITY,
        diffusion_lipschitz: f64::NEG_INFINITY,
        samples,
    };
    for _ in 0..samples {
        let u = random_in_ball(&mut rng, d, 2.0 * loc.r_hat);
        let z = random_in_ball(&mut rng, d, 2.0 * loc.r_hat);
        let gu = loc.g(&u);
        rep.drift_growth = rep.drift_growth.max(loc.f_hat(&u).norm() - c * u.norm());
        rep.diffusion_growth = rep.diffusion_growth.max(gu.norm() - c * u.norm());
        rep.diffusion_lipschitz = rep.diffusion_lipschitz.max((gu - loc.g(&z)).norm() - c * (&u - &z).norm());
    }
    rep
}

/// `h(r) = sup_{‖v‖≤r} (‖DG(v)‖ + ‖DF̂(v)‖)`, either closed-form or sampled on a
/// fixed ladder of spheres with a running maximum, linearly interpolated.
#[derive(Clone)]
pub struct BoundMap {
    rho: f64,
    radii: Vec<f64>,
    values: Vec<f64>,
    closed_form: Option<Arc<BoundFn>>,
}

impl std::fmt::Debug for BoundMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BoundMap")
            .field("rho", &self.rho)
            .field("ladder", &self.radii.len())
            .field("closed_form", &self.closed_form.is_some())
            .finish()
    }
}

/// Radii in the sampling ladder (besides `r = 0`).
pub const LADDER_SIZE: usize = 512;
/// Smallest nonzero ladder radius relative to `ρ`.
pub const LADDER_FLOOR: f64 = 1e-9;

impl BoundMap {
    pub fn new(lin: &Linearization, pair: &FieldPair) -> Self {
        if let Some(h) = &pair.bound_closed_form {
            return Self { rho: pair.rho, radii: Vec::new(), values: Vec::new(), closed_form: Some(h.clone()) };
        }
        let d = pair.dim();
        let dirs = directions(d, 4096 / LADDER_SIZE);
        let local = |v: &DVector<f64>| tensor_norm(&pair.diffusion.derivative(v)) + spectral_norm(&lin.df_hat(v));
        let mut radii = vec![0.0];
        let mut values = vec![local(&DVector::zeros(d))];
        let (lo, hi) = ((pair.rho * LADDER_FLOOR).ln(), pair.rho.ln());
        for k in 0..LADDER_SIZE {
            let r = if k + 1 == LADDER_SIZE {
                pair.rho
            } else {
                (lo + (hi - lo) * k as f64 / (LADDER_SIZE - 1) as f64).exp()
            };
            let sphere = dirs.iter().map(|e| local(&(e * r))).fold(0.0, f64::max);
            let prev = *values.last().unwrap();
            radii.push(r);
            values.push(prev.max(sphere));
        }
        Self { rho: pair.rho, radii, values, closed_form: None }
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn eval(&self, r: f64) -> Result<f64> {
        if r < 0.0 || r > self.rho * (1.0 + 1e-12) {
            return Err(domain(format!("radius {r} outside [0, {}]", self.rho)));
        }
        Ok(self.eval_unchecked(r))
    }

    fn eval_unchecked(&self, r: f64) -> f64 {
        if let Some(h) = &self.closed_form {
            return h(r);
        }
        let k = self.radii.partition_point(|&x| x <= r);
        if k >= self.radii.len() {
            return *self.values.last().unwrap();
        }
        let (r0, r1) = (self.radii[k - 1], self.radii[k]);
        let w = (r - r0) / (r1 - r0);
        self.values[k - 1] + w * (self.values[k] - self.values[k - 1])
    }
}

/// Unit directions: the signed coordinate axes, then a Halton sequence pushed
/// through the normal quantile and normalized.
fn directions(d: usize, extra: usize) -> Vec<DVector<f64>> {
    let mut out = Vec::new();
    for k in 0..d {
        for s in [1.0, -1.0] {
            let mut e = DVector::zeros(d);
            e[k] = s;
            out.push(e);
        }
    }
    if d == 1 {
        return out;
    }
    const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];
    let normal = statrs::distribution::Normal::standard();
    use statrs::distribution::ContinuousCDF;
    let mut i = 1u64;
    while out.len() < 2 * d + extra.max(8 * d) {
        let v = DVector::from_fn(d, |k, _| normal.inverse_cdf(radical_inverse(i, PRIMES[k % PRIMES.len()])));
        i += 1;
        let n = v.norm();
        if n > 1e-12 && n.is_finite() {
            out.push(v / n);
        }
    }
    out
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let (mut f, mut x) = (1.0, 0.0);
    while i > 0 {
        f /= base as f64;
        x += f * (i % base) as f64;
        i /= base;
    }
    x
}

pub fn bound_h(map: &BoundMap, r: f64) -> Result<f64> {
    map.eval(r)
}

/// `J(x) = max{r ∈ [0, ρ] : h(r) ≤ x}` by bisection to `1e-10 ρ`.
pub fn inverse_j(h: impl Fn(f64) -> f64, rho: f64, x: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(domain(format!("argument must be non-negative, got {x}")));
    }
    if h(rho) <= x {
        return Ok(rho);
    }
    if h(0.0) > x {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (0.0, rho);
    while hi - lo > 1e-10 * rho {
        let mid = 0.5 * (lo + hi);
        if h(mid) <= x {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

fn check_eps_hat(eps_hat: f64) -> Result<()> {
    if !(eps_hat > 0.0 && eps_hat < 1.0) {
        return Err(config(format!("eps_hat must lie in (0, 1), got {eps_hat}")));
    }
    Ok(())
}

/// `R = ε̂ / (2K(1 + s))` for a given Hölder seminorm `s`.
pub fn r_from_seminorm(eps_hat: f64, k_const: f64, seminorm: f64) -> Result<f64> {
    check_eps_hat(eps_hat)?;
    if !(k_const > 0.0) {
        return Err(config(format!("K must be positive, got {k_const}")));
    }
    Ok(eps_hat / (2.0 * k_const * (1.0 + seminorm)))
}

/// `R(ω) = ε̂ / (2K(1 + ⦀ω⦀_{β′,0,1}))`, with the window starting at the path's start.
pub fn r_of_omega(eps_hat: f64, k_const: f64, omega: &SampledPath) -> Result<f64> {
    let t0 = omega.t0();
    let s = holder_seminorm(omega, omega.beta_prime(), t0, t0 + 1.0)?.seminorm;
    r_from_seminorm(eps_hat, k_const, s)
}

/// `R̂(ω) = J(R(ω)) ∧ ρ`.
pub fn rhat_of_omega(map: &BoundMap, eps_hat: f64, k_const: f64, omega: &SampledPath) -> Result<f64> {
    let r = r_of_omega(eps_hat, k_const, omega)?;
    inverse_j(|x| map.eval_unchecked(x), map.rho, r)
}

pub fn rhat_from_r(map: &BoundMap, r: f64) -> Result<f64> {
    inverse_j(|x| map.eval_unchecked(x), map.rho, r)
}

/// `K = max(1, C) M² L_{Dχ} (2 + 3‖A‖ + ‖A‖²)`.
pub fn k_constant(m_const: f64, a_norm: f64, l_dchi: f64, c_young: f64) -> Result<f64> {
    if !(m_const >= 1.0) {
        return Err(domain(format!("M must be at least 1, got {m_const}")));
    }
    if !(a_norm >= 0.0 && l_dchi > 0.0 && c_young > 0.0) {
        return Err(domain("norm of A must be non-negative and the other constants positive"));
    }
    Ok(c_young.max(1.0) * m_const * m_const * l_dchi * (2.0 + 3.0 * a_norm + a_norm * a_norm))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KappaReport {
    pub r: Vec<f64>,
    pub rhat: Vec<f64>,
    pub ratio: Vec<f64>,
    pub running_min: Vec<f64>,
}

/// `R̂(R)/R` over a sweep of target values `R`.
pub fn kappa_diagnostic(map: &BoundMap, r_sweep: &[f64]) -> Result<KappaReport> {
    let mut rep = KappaReport { r: Vec::new(), rhat: Vec::new(), ratio: Vec::new(), running_min: Vec::new() };
    let mut min = f64::INFINITY;
    for &r in r_sweep {
        if !(r > 0.0) {
            return Err(domain(format!("sweep values must be positive, got {r}")));
        }
        let rh = rhat_from_r(map, r)?;
        min = min.min(rh / r);
        rep.r.push(r);
        rep.rhat.push(rh);
        rep.ratio.push(rh / r);
        rep.running_min.push(min);
    }
    Ok(rep)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemperednessReport {
    /// `log⁺(values[n]) / n` for `n ≥ 1`.
    pub tail: Vec<f64>,
    /// Maximum over the last quartile of `tail`.
    pub estimate: f64,
}

pub fn temperedness_diagnostic(values: &[f64]) -> Result<TemperednessReport> {
    if values.len() < 2 {
        return Err(domain("temperedness needs at least two values"));
    }
    if let Some(v) = values.iter().find(|v| !(**v > 0.0)) {
        return Err(domain(format!("values must be positive, found {v}")));
    }
    let tail: Vec<f64> = values.iter().enumerate().skip(1).map(|(n, v)| v.ln().max(0.0) / n as f64).collect();
    let start = tail.len() - (tail.len() / 4).max(1);
    let estimate = tail[start..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(TemperednessReport { tail, estimate })
}

/// Named fields addressable from configuration files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum FieldSpec {
    /// `F(x) = Ax`, `G(x)` with columns `Γ_j x`.
    Linear {
        a: Vec<Vec<f64>>,
        gamma: Vec<Vec<Vec<f64>>>,
        #[serde(default = "default_rho")]
        rho: f64,
    },
    /// `F_i(x) = (Ax)_i + q_i x_i² + c_i x_i³`, `G_ij(x) = σ_ij x_i x_{j mod d}`.
    Quadratic {
        a: Vec<Vec<f64>>,
        q: Vec<f64>,
        #[serde(default)]
        c: Option<Vec<f64>>,
        sigma: Vec<Vec<f64>>,
        #[serde(default = "default_rho")]
        rho: f64,
    },
    /// Scalar `F(x) = −λx + μ sin x`, `G(x) = γx`.
    Sine {
        lambda: f64,
        mu: f64,
        gamma: f64,
        #[serde(default = "default_rho")]
        rho: f64,
    },
}

fn default_rho() -> f64 {
    1.0
}

fn square(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let d = rows.len();
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(config(format!("{what} must be a non-empty square matrix")));
    }
    Ok(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
}

impl FieldSpec {
    pub fn build(&self) -> Result<FieldPair> {
        match self {
            FieldSpec::Linear { a, gamma, rho } => {
                let a = square(a, "a")?;
                let d = a.nrows();
                if gamma.is_empty() {
                    return Err(config("gamma needs at least one matrix"));
                }
                let gs = gamma.iter().map(|g| square(g, "gamma")).collect::<Result<Vec<_>>>()?;
                if gs.iter().any(|g| g.nrows() != d) {
                    return Err(config("gamma matrices must match the dimension of a"));
                }
                linear_pair(a, gs, *rho)
            }
            FieldSpec::Quadratic { a, q, c, sigma, rho } => {
                let a = square(a, "a")?;
                let d = a.nrows();
                let c = c.clone().unwrap_or_else(|| vec![0.0; d]);
                if q.len() != d || c.len() != d || sigma.len() != d || sigma.iter().any(|r| r.len() != sigma[0].len()) || sigma[0].is_empty() {
                    return Err(config("q, c and the rows of sigma must have the dimension of a"));
                }
                let m = sigma[0].len();
                let s = DMatrix::from_fn(d, m, |i, j| sigma[i][j]);
                quadratic_pair(a, q.clone(), c, s, *rho)
            }
            FieldSpec::Sine { lambda, mu, gamma, rho } => sine_pair(*lambda, *mu, *gamma, *rho),
        }
    }
}

pub fn linear_pair(a: DMatrix<f64>, gammas: Vec<DMatrix<f64>>, rho: f64) -> Result<FieldPair> {
    let d = a.nrows();
    let m = gammas.len();
    let a2 = a.clone();
    let drift = Arc::new(FnDrift { dim: d, f: Box::new(move |x| &a2 * x), df: Box::new(move |_| a.clone()) });
    let (g1, g2) = (gammas.clone(), gammas);
    let diffusion = Arc::new(FnDiffusion {
        state_dim: d,
        noise_dim: m,
        g: Box::new(move |x| {
            let mut out = DMatrix::zeros(d, m);
            for (j, gj) in g1.iter().enumerate() {
                out.set_column(j, &(gj * x));
            }
            out
        }),
        dg: Box::new(move |_| {
            (0..d).map(|k| DMatrix::from_fn(d, m, |i, j| g2[j][(i, k)])).collect()
        }),
        d2g: Box::new(move |_| vec![vec![DMatrix::zeros(d, m); d]; d]),
    });
    FieldPair::new(drift, diffusion, rho)
}

pub fn quadratic_pair(a: DMatrix<f64>, q: Vec<f64>, c: Vec<f64>, sigma: DMatrix<f64>, rho: f64) -> Result<FieldPair> {
    let d = a.nrows();
    let m = sigma.ncols();
    let (a1, q1, c1) = (a.clone(), q.clone(), c.clone());
    let (q2, c2) = (q.clone(), c.clone());
    let drift = Arc::new(FnDrift {
        dim: d,
        f: Box::new(move |x| {
            let mut y = &a1 * x;
            for i in 0..d {
                y[i] += q1[i] * x[i] * x[i] + c1[i] * x[i] * x[i] * x[i];
            }
            y
        }),
        df: Box::new(move |x| {
            let mut j = a.clone();
            for i in 0..d {
                j[(i, i)] += 2.0 * q2[i] * x[i] + 3.0 * c2[i] * x[i] * x[i];
            }
            j
        }),
    });
    let (s1, s2, s3) = (sigma.clone(), sigma.clone(), sigma.clone());
    let diffusion = Arc::new(FnDiffusion {
        state_dim: d,
        noise_dim: m,
        g: Box::new(move |x| DMatrix::from_fn(d, m, |i, j| s1[(i, j)] * x[i] * x[j % d])),
        dg: Box::new(move |x| {
            (0..d)
                .map(|k| {
                    DMatrix::from_fn(d, m, |i, j| {
                        let jj = j % d;
                        let mut v = 0.0;
                        if i == k {
                            v += x[jj];
                        }
                        if jj == k {
                            v += x[i];
                        }
                        s2[(i, j)] * v
                    })
                })
                .collect()
        }),
        d2g: Box::new(move |_| {
            (0..d)
                .map(|k| {
                    (0..d)
                        .map(|l| {
                            DMatrix::from_fn(d, m, |i, j| {
                                let jj = j % d;
                                let v = f64::from(u8::from(i == k && jj == l)) + f64::from(u8::from(jj == k && i == l));
                                s3[(i, j)] * v
                            })
                        })
                        .collect()
                })
                .collect()
        }),
    });
    // Upper bound for h: the diagonal drift remainder peaks on a coordinate
    // axis, and DG is linear in v so its sup over the ball is r‖L‖.
    let mut lmap = DMatrix::zeros(d * m * d, d);
    for v in 0..d {
        for k in 0..d {
            for i in 0..d {
                for j in 0..m {
                    let jj = j % d;
                    let mut coef = 0.0;
                    if i == k && jj == v {
                        coef += sigma[(i, j)];
                    }
                    if jj == k && i == v {
                        coef += sigma[(i, j)];
                    }
                    lmap[((k * d + i) * m + j, v)] = coef;
                }
            }
        }
    }
    let l_norm = spectral_norm(&lmap);
    let pair = FieldPair::new(drift, diffusion, rho)?;
    Ok(pair.with_bound(move |r| {
        let drift = q.iter().zip(&c).map(|(qi, ci)| 2.0 * qi.abs() * r + 3.0 * ci.abs() * r * r).fold(0.0, f64::max);
        drift + l_norm * r
    }))
}

pub fn sine_pair(lambda: f64, mu: f64, gamma: f64, rho: f64) -> Result<FieldPair> {
    if !(lambda > 0.0 && mu >= 0.0 && mu.is_finite() && gamma.is_finite()) {
        return Err(config("sine field needs lambda > 0, finite mu >= 0 and finite gamma"));
    }
    FieldPair::new(
        scalar_drift(move |x| -lambda * x + mu * x.sin(), move |x| -lambda + mu * x.cos()),
        scalar_diffusion(move |x| gamma * x, move |_| gamma, |_| 0.0),
        rho,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn x2_pair(g_sq: bool) -> FieldPair {
        let diffusion = if g_sq {
            scalar_diffusion(|x| x * x, |x| 2.0 * x, |_| 2.0)
        } else {
            scalar_diffusion(|_| 0.0, |_| 0.0, |_| 0.0)
        };
        FieldPair::new(scalar_drift(|x| -x + x * x, |x| -1.0 + 2.0 * x), diffusion, 1.0).unwrap()
    }

    #[test]
    fn linearization_examples() {
        let lin = split_linearization(&x2_pair(false)).unwrap();
        assert_eq!(lin.a[(0, 0)], -1.0);
        let x = DVector::from_element(1, 0.3);
        assert_relative_eq!(lin.f_hat(&x)[0], 0.09, epsilon = 1e-15);
        assert_eq!(lin.df_hat(&DVector::zeros(1))[(0, 0)], 0.0);

        let cubic = FieldPair::new(
            scalar_drift(|x| -2.0 * x + x * x * x, |x| -2.0 + 3.0 * x * x),
            scalar_diffusion(|_| 0.0, |_| 0.0, |_| 0.0),
            1.0,
        )
        .unwrap();
        let lin = split_linearization(&cubic).unwrap();
        assert_eq!(lin.a[(0, 0)], -2.0);
        assert_relative_eq!(lin.f_hat(&x)[0], 0.027, epsilon = 1e-15);
        assert_relative_eq!(lin.df_hat(&x)[(0, 0)], 0.27, epsilon = 1e-15);

        let pair = linear_pair(DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, 0.0, -2.0]), vec![DMatrix::zeros(2, 2)], 1.0).unwrap();
        let lin = split_linearization(&pair).unwrap();
        assert!(lin.f_hat(&DVector::from_vec(vec![0.3, -0.7])).amax() < 1e-15);
    }

    #[test]
    fn wrong_oracle_is_rejected() {
        let r = FieldPair::new(
            scalar_drift(|x| x * x, |x| 3.0 * x),
            scalar_diffusion(|_| 0.0, |_| 0.0, |_| 0.0),
            1.0,
        );
        assert!(matches!(r, Err(Error::Validation(_))));
        let r = FieldPair::new(
            scalar_drift(|x| -x, |_| -1.0),
            scalar_diffusion(|x| x * x, |x| 2.0 * x, |_| 1.0),
            1.0,
        );
        assert!(matches!(r, Err(Error::Validation(_))));
    }

    #[test]
    fn origin_assumptions() {
        assert!(x2_pair(true).check_origin_assumptions().is_ok());
        let lin = sine_pair(1.0, 0.5, 0.5, 1.0).unwrap();
        assert!(matches!(lin.check_origin_assumptions(), Err(Error::Validation(_))));
    }

    #[test]
    fn cutoff_examples() {
        let kit = CutoffKit::quintic();
        let u = DVector::from_vec(vec![0.3, -0.4]); // norm 0.5
        assert_eq!(cutoff(&kit, &(&u * 0.5), 1.0).unwrap(), &u * 0.5);
        assert_eq!(cutoff(&kit, &(&u * 4.0), 1.0).unwrap(), DVector::zeros(2));
        let v = DVector::from_vec(vec![0.7, 0.2]);
        let scaled = cutoff(&kit, &(&v * 3.0), 3.0).unwrap();
        let unit = cutoff(&kit, &v, 1.0).unwrap() * 3.0;
        assert!((scaled - unit).amax() < 1e-15);
        assert!(matches!(cutoff(&kit, &v, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn cutoff_constants_bound_finite_differences() {
        let kit = CutoffKit::quintic();
        assert!(kit.l_dchi > 1.0 && kit.l_d2chi > 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = 1e-5;
        for _ in 0..2000 {
            let u = random_in_ball(&mut rng, 3, 1.3);
            let mut jac = DMatrix::zeros(3, 3);
            for k in 0..3 {
                let (p, m) = shifted(&u, k, h);
                jac.set_column(k, &((kit.chi(&p) - kit.chi(&m)) / (2.0 * h)));
            }
            assert!(spectral_norm(&jac) <= kit.l_dchi);
            let e = random_in_ball(&mut rng, 3, 1.0).normalize();
            let second = (kit.chi(&(&u + &e * 1e-4)) - kit.chi(&u) * 2.0 + kit.chi(&(&u - &e * 1e-4))) / 1e-8;
            assert!(second.norm() <= kit.l_d2chi * 1.001);
            assert!(kit.chi(&u).norm() <= 1.0);
        }
    }

    #[test]
    fn localized_examples() {
        let pair = x2_pair(true);
        let lin = split_linearization(&pair).unwrap();
        let kit = CutoffKit::quintic();
        let loc = localized_fields(&lin, &pair, &kit, 0.2).unwrap();
        let inside = DVector::from_element(1, 0.05);
        assert_eq!(loc.f_hat(&inside), lin.f_hat(&inside));
        assert_eq!(loc.f_hat(&DVector::from_element(1, 0.3))[0], 0.0);
        assert!(matches!(localized_fields(&lin, &pair, &kit, 1.5), Err(Error::Domain(_))));
    }

    #[test]
    fn localized_bound_holds_for_squares() {
        let pair = x2_pair(true);
        let lin = split_linearization(&pair).unwrap();
        let map = BoundMap::new(&lin, &pair);
        let kit = CutoffKit::quintic();
        let r = 0.1;
        let r_hat = rhat_from_r(&map, r).unwrap();
        let loc = localized_fields(&lin, &pair, &kit, r_hat).unwrap();
        let rep = localized_bound_check(&loc, r, 10_000, 1);
        assert!(rep.max_violation() <= 1e-9, "{rep:?}");
        let zero = DVector::zeros(1);
        assert_eq!(loc.f_hat(&zero).norm(), 0.0);
        let far = DVector::from_element(1, 2.0 * r_hat);
        assert_eq!((loc.g(&far) - loc.g(&(-far.clone()))).norm(), 0.0);
    }

    #[test]
    fn bound_map_examples() {
        let pair = x2_pair(false);
        let lin = split_linearization(&pair).unwrap();
        let map = BoundMap::new(&lin, &pair);
        assert_eq!(bound_h(&map, 0.0).unwrap(), 0.0);
        for r in [1e-6, 0.01, 0.3, 1.0] {
            assert!((bound_h(&map, r).unwrap() - 2.0 * r).abs() <= 0.01 * 2.0 * r);
        }
        assert!(matches!(bound_h(&map, 1.5), Err(Error::Domain(_))));
        let r = r_from_seminorm(0.5, 10.0, 1.0).unwrap();
        assert_relative_eq!(rhat_from_r(&map, r).unwrap(), 0.00625, max_relative = 1e-6);
    }

    #[test]
    fn zero_fields_give_rho() {
        let pair = FieldPair::new(
            scalar_drift(|x| -x, |_| -1.0),
            scalar_diffusion(|_| 0.0, |_| 0.0, |_| 0.0),
            0.7,
        )
        .unwrap();
        let lin = split_linearization(&pair).unwrap();
        let map = BoundMap::new(&lin, &pair);
        assert_eq!(rhat_from_r(&map, 1e-3).unwrap(), 0.7);
    }

    #[test]
    fn inverse_examples() {
        assert!((inverse_j(|r| r, 1.0, 0.3).unwrap() - 0.3).abs() <= 1e-10);
        assert_eq!(inverse_j(|r| r, 1.0, 2.0).unwrap(), 1.0);
        assert!((inverse_j(|r| 2.0 * r, 1.0, 0.1).unwrap() - 0.05).abs() <= 1e-10);
        assert!(matches!(inverse_j(|r| r, 1.0, -0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn r_examples() {
        let c = SampledPath::from_fn(0.0, 0.01, 100, 0.9, |_| 1.0).unwrap();
        assert_relative_eq!(r_of_omega(0.5, 4.0, &c).unwrap(), 0.5 / 8.0);
        assert_relative_eq!(r_of_omega(0.5, 8.0, &c).unwrap(), 0.5 / 16.0);
        let lin = SampledPath::from_fn(0.0, 0.01, 100, 0.5 + 1e-12, |t| t).unwrap();
        let lin = lin.with_beta_prime(0.500_000_000_001).unwrap();
        assert!((r_of_omega(0.5, 10.0, &lin).unwrap() - 0.0125).abs() < 1e-9);
        assert!(matches!(r_of_omega(1.0, 1.0, &c), Err(Error::Config(_))));
    }

    #[test]
    fn k_examples() {
        assert_eq!(k_constant(1.0, 0.0, 1.0, 1.0).unwrap(), 2.0);
        assert_eq!(k_constant(1.0, 1.0, 1.0, 1.0).unwrap(), 6.0);
        assert_eq!(k_constant(1.0, 1.0, 1.0, 0.5).unwrap(), 6.0);
        assert!(matches!(k_constant(0.9, 1.0, 1.0, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn kappa_examples() {
        let pair = x2_pair(false);
        let lin = split_linearization(&pair).unwrap();
        let map = BoundMap::new(&lin, &pair);
        let rep = kappa_diagnostic(&map, &[1e-4, 1e-3, 1e-2]).unwrap();
        for r in &rep.ratio {
            assert!((r - 0.5).abs() < 1e-4);
        }
        let lin_map = BoundMap::new(&lin, &pair.clone().with_bound(|r| 3.0 * r));
        let rep = kappa_diagnostic(&lin_map, &[0.01, 0.1]).unwrap();
        assert!(rep.ratio.iter().all(|r| (r - 1.0 / 3.0).abs() < 1e-8));
    }

    #[test]
    fn temperedness_examples() {
        assert!(temperedness_diagnostic(&[0.5; 20]).unwrap().tail.iter().all(|v| *v == 0.0));
        let exp: Vec<f64> = (0..200).map(|n| (0.1 * n as f64).exp()).collect();
        assert!((temperedness_diagnostic(&exp).unwrap().estimate - 0.1).abs() < 1e-12);
        let lin: Vec<f64> = (0..10_000).map(|n| (n as f64).max(1.0)).collect();
        assert!(temperedness_diagnostic(&lin).unwrap().estimate < 1.5e-3);
        assert!(temperedness_diagnostic(&[1.0, 0.0]).is_err());
    }

    #[test]
    fn quadratic_closed_form_dominates_sampled() {
        let spec = FieldSpec::Quadratic {
            a: vec![vec![-1.5, 0.4], vec![0.0, -1.2]],
            q: vec![0.5, -0.3],
            c: None,
            sigma: vec![vec![0.8], vec![0.5]],
            rho: 1.0,
        };
        let mut pair = spec.build().unwrap();
        pair.check_origin_assumptions().unwrap();
        let lin = split_linearization(&pair).unwrap();
        let closed = BoundMap::new(&lin, &pair);
        pair.bound_closed_form = None;
        let sampled = BoundMap::new(&lin, &pair);
        for r in [0.0, 0.01, 0.2, 1.0] {
            assert!(closed.eval(r).unwrap() >= sampled.eval(r).unwrap() - 1e-12);
        }
    }

    #[test]
    fn catalog_round_trip() {
        let text = r#"{"sine": {"lambda": 1.0, "mu": 0.5, "gamma": 0.5}}"#;
        let spec: FieldSpec = serde_json::from_str(text).unwrap();
        assert!(spec.build().is_ok());
        let again: FieldSpec = serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(spec, again);
        assert!(serde_json::from_str::<FieldSpec>(r#"{"cosine": {}}"#).is_err());
    }

    proptest! {
        #[test]
        fn cutoff_idempotent_on_half_ball(x in -1.0f64..1.0, y in -1.0f64..1.0, r_hat in 0.1f64..5.0) {
            let u = DVector::from_vec(vec![x, y]) * (0.5 * r_hat / 2f64.sqrt());
            let once = cutoff_unchecked(&u, r_hat);
            prop_assert_eq!(&cutoff_unchecked(&once, r_hat), &once);
        }

        #[test]
        fn k_is_monotone(m in 1.0f64..3.0, a in 0.0f64..3.0, l in 0.1f64..3.0, c in 0.1f64..3.0, dm in 0.0f64..1.0) {
            let base = k_constant(m, a, l, c).unwrap();
            prop_assert!(k_constant(m + dm, a, l, c).unwrap() >= base);
            prop_assert!(k_constant(m, a + dm, l, c).unwrap() >= base);
            prop_assert!(k_constant(m, a, l + dm, c).unwrap() >= base);
            prop_assert!(k_constant(m, a, l, c + dm).unwrap() >= base);
        }

        #[test]
        fn inverse_is_a_lower_bound(x in 0.0f64..3.0) {
            let pair = x2_pair(true);
            let lin = split_linearization(&pair).unwrap();
            let map = BoundMap::new(&lin, &pair);
            let r = rhat_from_r(&map, x).unwrap();
            prop_assert!(map.eval(r).unwrap() <= x + 1e-8);
        }
    }
}
