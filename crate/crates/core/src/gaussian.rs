//! Closed-form mathematics of the Gaussian classical-quantum channel.
//!
//! Complex Gaussians follow the circular convention E[(z-m)(z-m)†] = Σ with
//! density |Σ|⁻¹ exp{-(z-m)†Σ⁻¹(z-m)} against μ(dz) = Π (1/π) dRe z_j dIm z_j.
//! Under this convention each real coordinate has variance Σ_jj / 2. All
//! energies are in mean quanta.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::grid::ComplexGrid;
use crate::linalg::{self, c, CMatrix, CVector, C64};

/// Tolerance of the G⁻¹ = A(N+I) consistency check.
pub const CHAIN_TOL: f64 = 1e-10;

/// Eigenvalues of S at or below this (relative to max(1, ‖S‖)) make S singular.
const SINGULAR_TOL: f64 = 1e-13;

/// Gaussian channel: ϑ ~ CN(0, S), ρ(ϑ) = displaced thermal state with noise N.
#[derive(Debug, Clone)]
pub struct ChannelModel {
    signal: CMatrix,
    noise: CMatrix,
    /// S⁻¹, absent for the zero-signal model.
    signal_inv: Option<CMatrix>,
    signal_det: f64,
    /// (N+I)⁻¹ and |N+I|
    eff_inv: CMatrix,
    eff_det: f64,
    /// (S+N+I)⁻¹ and |S+N+I|
    total_inv: CMatrix,
    total_det: f64,
}

impl ChannelModel {
    /// Validates S and N (Hermitian, PSD). S must be either positive definite
    /// or exactly zero; a zero S is the no-signal model with a point prior.
    pub fn new(signal: CMatrix, noise: CMatrix) -> Result<Self> {
        let r = signal.nrows();
        if r == 0 {
            return Err(Error::InvalidArgument("model needs at least one mode".into()));
        }
        if noise.nrows() != r || noise.ncols() != r {
            return Err(Error::DimensionMismatch {
                expected: r,
                found: noise.nrows(),
            });
        }
        let s_ev = linalg::check_hermitian_psd(&signal)?;
        linalg::check_hermitian_psd(&noise)?;
        let signal = linalg::hermitian_part(&signal);
        let noise = linalg::hermitian_part(&noise);

        let (signal_inv, signal_det) = if signal.norm() == 0.0 {
            (None, 0.0)
        } else {
            let scale = s_ev.iter().fold(1.0f64, |a, &b| a.max(b));
            let min = s_ev.iter().copied().fold(f64::INFINITY, f64::min);
            if min <= SINGULAR_TOL * scale {
                return Err(Error::SingularSignal { eigenvalue: min });
            }
            (Some(linalg::inverse(&signal)?), s_ev.iter().product())
        };

        let eff = &noise + linalg::identity(r);
        let total = &signal + &eff;
        Ok(Self {
            eff_inv: linalg::inverse(&eff)?,
            eff_det: linalg::det_hermitian(&eff),
            total_inv: linalg::inverse(&total)?,
            total_det: linalg::det_hermitian(&total),
            signal,
            noise,
            signal_inv,
            signal_det,
        })
    }

    /// Single mode with signal energy `s` and thermal noise `n`.
    pub fn scalar(s: f64, n: f64) -> Result<Self> {
        Self::diagonal(&[s], &[n])
    }

    pub fn diagonal(s: &[f64], n: &[f64]) -> Result<Self> {
        Self::new(linalg::real_diag(s), linalg::real_diag(n))
    }

    pub fn modes(&self) -> usize {
        self.signal.nrows()
    }

    pub fn signal(&self) -> &CMatrix {
        &self.signal
    }

    pub fn noise(&self) -> &CMatrix {
        &self.noise
    }

    /// False for the zero-signal model.
    pub fn has_signal(&self) -> bool {
        self.signal_inv.is_some()
    }

    /// N + I, the covariance of heterodyne outcomes around the signal.
    pub fn effective_noise(&self) -> CMatrix {
        &self.noise + linalg::identity(self.modes())
    }

    pub fn effective_noise_inv(&self) -> &CMatrix {
        &self.eff_inv
    }

    /// S + N + I, the covariance of the outcome marginal.
    pub fn total_covariance(&self) -> CMatrix {
        &self.signal + self.effective_noise()
    }

    fn signal_inv(&self) -> Result<&CMatrix> {
        self.signal_inv
            .as_ref()
            .ok_or(Error::SingularSignal { eigenvalue: 0.0 })
    }

    fn check(&self, v: &[C64]) -> Result<CVector> {
        if v.len() != self.modes() {
            return Err(Error::DimensionMismatch {
                expected: self.modes(),
                found: v.len(),
            });
        }
        Ok(linalg::to_cvector(v))
    }
}

fn quad(v: &CVector, m: &CMatrix) -> f64 {
    linalg::quad_form(v, m, v).re
}

/// Prior density |S|⁻¹ exp{-ϑ†S⁻¹ϑ}.
pub fn prior_density(theta: &[C64], model: &ChannelModel) -> Result<f64> {
    let t = model.check(theta)?;
    let inv = model.signal_inv()?;
    Ok((-quad(&t, inv)).exp() / model.signal_det)
}

/// Conditional outcome density |N+I|⁻¹ exp{-(β-ϑ)†(N+I)⁻¹(β-ϑ)}.
pub fn conditional_density(beta: &[C64], theta: &[C64], model: &ChannelModel) -> Result<f64> {
    let d = model.check(beta)? - model.check(theta)?;
    Ok((-quad(&d, &model.eff_inv)).exp() / model.eff_det)
}

/// Outcome marginal |S+N+I|⁻¹ exp{-β†(S+N+I)⁻¹β}.
pub fn marginal_density(beta: &[C64], model: &ChannelModel) -> Result<f64> {
    let b = model.check(beta)?;
    Ok((-quad(&b, &model.total_inv)).exp() / model.total_det)
}

/// The matrices A = S(S+N+I)⁻¹ and G = S⁻¹ + (N+I)⁻¹.
pub fn ag_matrices(model: &ChannelModel) -> Result<(CMatrix, CMatrix)> {
    let s_inv = model.signal_inv()?;
    let a = &model.signal * &model.total_inv;
    let g = linalg::hermitian_part(&(s_inv + &model.eff_inv));
    let g_inv = linalg::inverse(&g)?;
    let mismatch = linalg::max_abs(&(&g_inv - &a * model.effective_noise()));
    if mismatch > CHAIN_TOL * (1.0 + g_inv.norm()) {
        return Err(Error::InvalidArgument(format!(
            "G⁻¹ and A(N+I) disagree by {mismatch:.3e}; the model is ill-conditioned"
        )));
    }
    Ok((a, g))
}

/// Information kernel
/// i(β,ϑ) = ln|I + S(N+I)⁻¹| + ϑ†S⁻¹ϑ - (ϑ - Aβ)†G(ϑ - Aβ),
/// identically ln p(β|ϑ) - ln p(β). Zero for the zero-signal model.
pub fn information_kernel(beta: &[C64], theta: &[C64], model: &ChannelModel) -> Result<f64> {
    let b = model.check(beta)?;
    let t = model.check(theta)?;
    if !model.has_signal() {
        return Ok(0.0);
    }
    let (a, g) = ag_matrices(model)?;
    let s_inv = model.signal_inv()?;
    let d = &t - &a * &b;
    Ok(ln_det_gain(model) + quad(&t, s_inv) - quad(&d, &g))
}

/// ln|I + S(N+I)⁻¹| = ln|S+N+I| - ln|N+I|
fn ln_det_gain(model: &ChannelModel) -> f64 {
    model.total_det.ln() - model.eff_det.ln()
}

/// Per-eigenmode information ln(1 + λ_i), λ_i the eigenvalues of
/// (N+I)^{-1/2} S (N+I)^{-1/2}.
pub fn analytic_mi_modes(model: &ChannelModel) -> Vec<f64> {
    let w = linalg::hermitian_map(&model.effective_noise(), |x| 1.0 / x.sqrt());
    let m = &w * &model.signal * &w;
    linalg::hermitian_eigenvalues(&m)
        .into_iter()
        .map(|l| l.max(0.0).ln_1p())
        .collect()
}

/// Maximal decoded information Sp ln(I + S(N+I)⁻¹) in nats.
pub fn analytic_mi(model: &ChannelModel) -> f64 {
    analytic_mi_modes(model).iter().sum()
}

/// |Sp (G⁻¹(N+I)⁻¹A† - AA†) G|, the final cancellation of the coherent-vector
/// optimality argument. Zero up to rounding for every valid model.
pub fn chain_identity_residual(model: &ChannelModel) -> Result<f64> {
    let (a, g) = ag_matrices(model)?;
    let g_inv = linalg::inverse(&g)?;
    let m = (&g_inv * &model.eff_inv * a.adjoint() - &a * a.adjoint()) * &g;
    Ok(linalg::trace(&m).norm())
}

/// Circularly symmetric complex Gaussian CN(mean, covariance).
#[derive(Debug, Clone)]
pub struct ComplexGaussian {
    mean: CVector,
    covariance: CMatrix,
    chol: CMatrix,
    inv: CMatrix,
    det: f64,
}

impl ComplexGaussian {
    pub fn new(mean: CVector, covariance: CMatrix) -> Result<Self> {
        if covariance.nrows() != mean.len() || covariance.ncols() != mean.len() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                found: covariance.nrows(),
            });
        }
        let ev = linalg::check_hermitian_psd(&covariance)?;
        if let Some(&bad) = ev.iter().find(|&&e| e <= 0.0) {
            return Err(Error::NotPositive { eigenvalue: bad });
        }
        let covariance = linalg::hermitian_part(&covariance);
        let chol = covariance
            .clone()
            .cholesky()
            .ok_or(Error::NotPositive { eigenvalue: 0.0 })?
            .unpack();
        Ok(Self {
            inv: linalg::inverse(&covariance)?,
            det: ev.iter().product(),
            mean,
            covariance,
            chol,
        })
    }

    pub fn centered(covariance: CMatrix) -> Result<Self> {
        let r = covariance.nrows();
        Self::new(CVector::zeros(r), covariance)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &CVector {
        &self.mean
    }

    pub fn covariance(&self) -> &CMatrix {
        &self.covariance
    }

    pub fn density(&self, z: &[C64]) -> Result<f64> {
        if z.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: z.len(),
            });
        }
        let d = linalg::to_cvector(z) - &self.mean;
        Ok((-quad(&d, &self.inv)).exp() / self.det)
    }

    /// Appends one draw to `out`.
    pub fn draw_into(&self, rng: &mut ChaCha8Rng, out: &mut Vec<C64>) {
        let r = self.dim();
        let w = CVector::from_iterator(
            r,
            (0..r).map(|_| {
                let x: f64 = StandardNormal.sample(rng);
                let y: f64 = StandardNormal.sample(rng);
                c(x, y) * std::f64::consts::FRAC_1_SQRT_2
            }),
        );
        let z = &self.mean + &self.chol * w;
        out.extend(z.iter());
    }
}

/// `count` draws from `dist`, deterministic in `seed`. Returned flat, one
/// r-vector after another.
pub fn sample(dist: &ComplexGaussian, count: usize, seed: u64) -> Result<Vec<C64>> {
    if count == 0 {
        return Err(Error::InvalidArgument("count must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count * dist.dim());
    for _ in 0..count {
        dist.draw_into(&mut rng, &mut out);
    }
    Ok(out)
}

/// Which moment of exp{-(z-α)†Q(z-β)}|Q| dμ(z) to integrate.
#[derive(Debug, Clone, PartialEq)]
pub enum IntegralKind {
    /// ∫ 1 → 1
    Normalization,
    /// ∫ z → β
    FirstMoment,
    /// ∫ z* → α*
    ConjugateMoment,
    /// ∫ (z-α)†H(z-β) → Sp Q⁻¹H
    Quadratic(CMatrix),
}

#[derive(Debug, Clone, PartialEq)]
pub enum IntegralValue {
    Scalar(C64),
    Vector(CVector),
}

impl IntegralValue {
    /// Euclidean distance between two values of the same shape.
    pub fn distance(&self, other: &IntegralValue) -> f64 {
        match (self, other) {
            (IntegralValue::Scalar(a), IntegralValue::Scalar(b)) => (a - b).norm(),
            (IntegralValue::Vector(a), IntegralValue::Vector(b)) => (a - b).norm(),
            _ => f64::INFINITY,
        }
    }

    pub fn magnitude(&self) -> f64 {
        match self {
            IntegralValue::Scalar(a) => a.norm(),
            IntegralValue::Vector(a) => a.norm(),
        }
    }
}

struct IntegralSetup {
    q: CMatrix,
    q_det: f64,
    alpha: CVector,
    beta: CVector,
}

fn integral_setup(q: &CMatrix, alpha: &[C64], beta: &[C64], kind: &IntegralKind) -> Result<IntegralSetup> {
    let r = q.nrows();
    if alpha.len() != r || beta.len() != r {
        return Err(Error::DimensionMismatch {
            expected: r,
            found: alpha.len().min(beta.len()),
        });
    }
    let ev = linalg::check_hermitian_psd(q)?;
    if let Some(&bad) = ev.iter().find(|&&e| e <= 0.0) {
        return Err(Error::NotPositive { eigenvalue: bad });
    }
    if let IntegralKind::Quadratic(h) = kind {
        if h.nrows() != r || h.ncols() != r {
            return Err(Error::DimensionMismatch {
                expected: r,
                found: h.nrows(),
            });
        }
    }
    Ok(IntegralSetup {
        q: q.clone(),
        q_det: ev.iter().product(),
        alpha: linalg::to_cvector(alpha),
        beta: linalg::to_cvector(beta),
    })
}

impl IntegralSetup {
    /// exp{-(z-α)†Q(z-β)}|Q|
    fn weight(&self, z: &CVector) -> C64 {
        let za = z - &self.alpha;
        let zb = z - &self.beta;
        (-linalg::quad_form(&za, &self.q, &zb)).exp() * self.q_det
    }

    fn integrand(&self, kind: &IntegralKind, z: &CVector) -> IntegralValue {
        match kind {
            IntegralKind::Normalization => IntegralValue::Scalar(c(1.0, 0.0)),
            IntegralKind::FirstMoment => IntegralValue::Vector(z.clone()),
            IntegralKind::ConjugateMoment => IntegralValue::Vector(z.map(|x| x.conj())),
            IntegralKind::Quadratic(h) => {
                IntegralValue::Scalar(linalg::quad_form(&(z - &self.alpha), h, &(z - &self.beta)))
            }
        }
    }

    fn zero(&self, kind: &IntegralKind) -> IntegralValue {
        match kind {
            IntegralKind::FirstMoment | IntegralKind::ConjugateMoment => {
                IntegralValue::Vector(CVector::zeros(self.alpha.len()))
            }
            _ => IntegralValue::Scalar(c(0.0, 0.0)),
        }
    }
}

fn accumulate(acc: &mut IntegralValue, value: IntegralValue, w: C64) {
    match (acc, value) {
        (IntegralValue::Scalar(a), IntegralValue::Scalar(v)) => *a += v * w,
        (IntegralValue::Vector(a), IntegralValue::Vector(v)) => a.axpy(w, &v, c(1.0, 0.0)),
        _ => unreachable!("accumulator shape fixed by kind"),
    }
}

/// Closed forms of the complex Gaussian integrals.
pub fn gaussian_integral_closed(
    q: &CMatrix,
    alpha: &[C64],
    beta: &[C64],
    kind: &IntegralKind,
) -> Result<IntegralValue> {
    let setup = integral_setup(q, alpha, beta, kind)?;
    Ok(match kind {
        IntegralKind::Normalization => IntegralValue::Scalar(c(1.0, 0.0)),
        IntegralKind::FirstMoment => IntegralValue::Vector(setup.beta),
        IntegralKind::ConjugateMoment => IntegralValue::Vector(setup.alpha.map(|x| x.conj())),
        IntegralKind::Quadratic(h) => {
            let q_inv = linalg::inverse(&setup.q)?;
            IntegralValue::Scalar(linalg::trace(&(q_inv * h)))
        }
    })
}

/// Brute-force lattice quadrature of the same integral over `grid`.
pub fn gaussian_integral_quadrature(
    q: &CMatrix,
    alpha: &[C64],
    beta: &[C64],
    kind: &IntegralKind,
    grid: &ComplexGrid,
) -> Result<IntegralValue> {
    let setup = integral_setup(q, alpha, beta, kind)?;
    if grid.modes() != q.nrows() {
        return Err(Error::DimensionMismatch {
            expected: q.nrows(),
            found: grid.modes(),
        });
    }
    let mut acc = setup.zero(kind);
    let mut node = vec![c(0.0, 0.0); grid.modes()];
    for k in 0..grid.len() {
        grid.node_into(k, &mut node);
        let z = linalg::to_cvector(&node);
        let w = setup.weight(&z) * grid.weight();
        accumulate(&mut acc, setup.integrand(kind, &z), w);
    }
    Ok(acc)
}

/// Monte-Carlo estimate by importance sampling from CN((α+β)/2, Q⁻¹).
pub fn gaussian_integral_monte_carlo(
    q: &CMatrix,
    alpha: &[C64],
    beta: &[C64],
    kind: &IntegralKind,
    count: usize,
    seed: u64,
) -> Result<IntegralValue> {
    let setup = integral_setup(q, alpha, beta, kind)?;
    let center = (&setup.alpha + &setup.beta).scale(0.5);
    let proposal = ComplexGaussian::new(center.clone(), linalg::inverse(&setup.q)?)?;
    let draws = sample(&proposal, count, seed)?;
    let r = q.nrows();
    let mut acc = setup.zero(kind);
    for z in draws.chunks(r) {
        let z = linalg::to_cvector(z);
        let dz = &z - &center;
        // integrand weight over proposal density (both against μ)
        let ratio = setup.weight(&z) / setup.q_det * linalg::quad_form(&dz, &setup.q, &dz).exp();
        accumulate(&mut acc, setup.integrand(kind, &z), ratio / count as f64);
    }
    Ok(acc)
}
