//! Stationarity of decoding families for the Gaussian channel.
//!
//! For decoding vectors φ_β the information operator is
//! I(β) = ∫ i(β,ϑ) ρ(ϑ) P(dϑ) and the Lagrange operator is
//! λ̂ = ∫ I(β) φ_β φ_β† μ(dβ). A family is stationary when
//! (I(β) - λ̂) φ_β = 0 for every β; Tr λ̂ is then the decoded information.
//!
//! The kernel i(β,ϑ) is quadratic in (β,ϑ), so I(β) is assembled from four
//! θ-averages of the channel states:
//! I(β) = M₀ + Σ_j v_j M₁ⱼ + v_j* M₁ⱼ† - (β†A†GAβ) R,  v = GAβ,
//! with M₀ = Σ P_m (c₀ + ϑ†S⁻¹ϑ - ϑ†Gϑ) ρ_m, M₁ⱼ = Σ P_m ϑ_j* ρ_m and
//! R = Σ P_m ρ_m. The direct node sum stays available as a cross-check.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fock::{self, FockSpace, FockVector, NoiseModes, TruncatedOperator};
use crate::gaussian::{self, ChannelModel};
use crate::grid::{ComplexGrid, DEFAULT_NODE_BUDGET};
use crate::linalg::{self, c, CMatrix, CVector, C64};
use crate::povm::{self, DiscretePOVM, Family, PovmKind};

/// Smallest per-mode cutoff used by [`VariationalProblem::with_defaults`].
pub const DEFAULT_CUTOFF_FLOOR: usize = 40;
/// Default cutoffs keep the averaged-state tail ((s+n)/(s+n+1))^c below this.
pub const DEFAULT_CUTOFF_TAIL: f64 = 1e-4;
/// Largest default cutoff.
pub const DEFAULT_CUTOFF_CAP: usize = 80;
/// Default lattice spacing of the θ and β grids.
pub const DEFAULT_SPACING: f64 = 0.25;
/// Default grids are coarsened so that no axis has more than 2·24+1 points.
const MAX_HALF_AXIS: f64 = 24.0;
/// States are kept in memory while nodes × dim² stays below this.
pub const STATE_CACHE_ENTRIES: usize = 20_000_000;
/// Coverage warnings fire when the density at a grid edge exceeds this
/// fraction of its peak.
pub const COVERAGE_FRACTION: f64 = 1e-6;

/// Largest θ-nodes × dim² accepted when building a problem.
pub const WORK_BUDGET: usize = 2_000_000_000;

const CHUNK: usize = 128;

#[derive(Debug, Clone)]
struct KernelParts {
    c0: f64,
    s_inv: CMatrix,
    a: CMatrix,
    g: CMatrix,
    ga: CMatrix,
    aga: CMatrix,
}

impl KernelParts {
    fn new(model: &ChannelModel) -> Result<Self> {
        let (a, g) = gaussian::ag_matrices(model)?;
        let r = model.modes();
        let gain = linalg::identity(r) + model.signal() * model.effective_noise_inv();
        let c0 = linalg::ln_det_hermitian(&linalg::hermitian_part(&(model.total_covariance())))
            - linalg::ln_det_hermitian(&model.effective_noise());
        debug_assert!((c0 - gain.determinant().re.ln()).abs() < 1e-8);
        let ga = &g * &a;
        let aga = a.adjoint() * &ga;
        Ok(Self {
            c0,
            s_inv: linalg::inverse(model.signal())?,
            a,
            g,
            ga,
            aga,
        })
    }

    /// ϑ-dependent constant c₀ + ϑ†S⁻¹ϑ - ϑ†Gϑ.
    fn theta_part(&self, theta: &CVector) -> f64 {
        self.c0 + linalg::quad_form(theta, &self.s_inv, theta).re - linalg::quad_form(theta, &self.g, theta).re
    }

    fn kernel(&self, beta: &CVector, theta: &CVector) -> f64 {
        let d = theta - &self.a * beta;
        self.c0 + linalg::quad_form(theta, &self.s_inv, theta).re - linalg::quad_form(&d, &self.g, &d).re
    }
}

#[derive(Debug, Clone)]
struct Moments {
    m0: CMatrix,
    m1: Vec<CMatrix>,
    r: CMatrix,
}

/// Discretized variational problem: channel model, θ quadrature of the prior,
/// β grid and the channel states ρ(ϑ_m).
///
/// When N is not diagonal the model is rotated to the eigenmodes of N at
/// construction; both grids and all Fock objects are then read in that basis.
#[derive(Debug, Clone)]
pub struct VariationalProblem {
    model: ChannelModel,
    theta_grid: ComplexGrid,
    beta_grid: ComplexGrid,
    space: FockSpace,
    prior_weights: Vec<f64>,
    prior_mass: f64,
    max_leakage: f64,
    weighted_leakage: f64,
    kernel: Option<KernelParts>,
    moments: Option<Moments>,
    states: Option<Vec<CMatrix>>,
}

fn rotate_to_noise_modes(model: &ChannelModel) -> Result<ChannelModel> {
    let modes = NoiseModes::new(model.noise())?;
    if linalg::is_diagonal(model.noise(), 1e-14) {
        return Ok(model.clone());
    }
    let u = &modes.rotation;
    let s = linalg::hermitian_part(&(u.adjoint() * model.signal() * u));
    let n = linalg::real_diag(&modes.occupations);
    ChannelModel::new(s, n)
}

fn diag_re(m: &CMatrix) -> Vec<f64> {
    (0..m.nrows()).map(|i| m[(i, i)].re.max(0.0)).collect()
}

fn default_spacing(radius: f64) -> f64 {
    DEFAULT_SPACING.max(radius / MAX_HALF_AXIS)
}

/// Default θ grid: radius 5√s_j per mode.
pub fn default_theta_grid(model: &ChannelModel) -> Result<ComplexGrid> {
    let radii: Vec<f64> = diag_re(model.signal()).iter().map(|s| 5.0 * s.sqrt()).collect();
    if radii.iter().any(|&r| r <= 0.0) {
        return Ok(ComplexGrid::point(&vec![c(0.0, 0.0); model.modes()]));
    }
    let spacings: Vec<f64> = radii.iter().map(|&r| default_spacing(r)).collect();
    ComplexGrid::per_mode(&radii, &spacings, DEFAULT_NODE_BUDGET)
}

/// Default β grid: radius 5√(s_j + n_j + 1) per mode.
pub fn default_beta_grid(model: &ChannelModel) -> Result<ComplexGrid> {
    let radii: Vec<f64> = diag_re(&model.total_covariance())
        .iter()
        .map(|t| 5.0 * t.sqrt())
        .collect();
    let spacings: Vec<f64> = radii.iter().map(|&r| default_spacing(r)).collect();
    ComplexGrid::per_mode(&radii, &spacings, DEFAULT_NODE_BUDGET)
}

/// Default Fock space: per mode the averaged state is thermal with mean s+n;
/// the cutoff keeps its geometric tail below [`DEFAULT_CUTOFF_TAIL`].
pub fn default_space(model: &ChannelModel) -> Result<FockSpace> {
    let s = diag_re(model.signal());
    let n = diag_re(model.noise());
    let cutoffs = s
        .iter()
        .zip(&n)
        .map(|(s, n)| {
            let mean = s + n;
            if mean <= 0.0 {
                return DEFAULT_CUTOFF_FLOOR;
            }
            let q = mean / (mean + 1.0);
            let need = (DEFAULT_CUTOFF_TAIL.ln() / q.ln()).ceil() as usize;
            if need > DEFAULT_CUTOFF_CAP {
                log::warn!("default cutoff capped at {DEFAULT_CUTOFF_CAP} (tail rule asks for {need})");
            }
            need.clamp(DEFAULT_CUTOFF_FLOOR, DEFAULT_CUTOFF_CAP)
        })
        .collect();
    FockSpace::new(cutoffs)
}

impl VariationalProblem {
    pub fn new(
        model: &ChannelModel,
        theta_grid: ComplexGrid,
        beta_grid: ComplexGrid,
        space: FockSpace,
    ) -> Result<Self> {
        let model = rotate_to_noise_modes(model)?;
        let r = model.modes();
        for modes in [theta_grid.modes(), beta_grid.modes(), space.modes()] {
            if modes != r {
                return Err(Error::DimensionMismatch {
                    expected: r,
                    found: modes,
                });
            }
        }

        let work = theta_grid.len().saturating_mul(space.dim().saturating_pow(2));
        if work > WORK_BUDGET {
            return Err(Error::BudgetExceeded {
                nodes: work,
                budget: WORK_BUDGET,
            });
        }

        if !model.has_signal() {
            // degenerate prior: a point mass at ϑ = 0 and a vanishing kernel
            let theta_grid = ComplexGrid::point(&vec![c(0.0, 0.0); r]);
            let (rho, leakage) = build_state(&theta_grid.node(0), &model, &space)?;
            return Ok(Self {
                model,
                theta_grid,
                beta_grid,
                space,
                prior_weights: vec![1.0],
                prior_mass: 1.0,
                max_leakage: leakage,
                weighted_leakage: leakage,
                kernel: None,
                moments: None,
                states: Some(vec![rho]),
            });
        }

        let kernel = KernelParts::new(&model)?;
        let prior_weights: Vec<f64> = theta_grid
            .nodes()
            .map(|t| gaussian::prior_density(&t, &model).map(|p| p * theta_grid.weight()))
            .collect::<Result<_>>()?;
        let prior_mass: f64 = prior_weights.iter().sum();
        if (prior_mass - 1.0).abs() > 1e-3 {
            log::warn!("θ grid carries prior mass {prior_mass:.6}; widen or refine it");
        }

        let dim = space.dim();
        let cache = theta_grid.len().saturating_mul(dim * dim) <= STATE_CACHE_ENTRIES;
        let mut states = if cache {
            Some(Vec::with_capacity(theta_grid.len()))
        } else {
            None
        };
        let mut moments = Moments {
            m0: CMatrix::zeros(dim, dim),
            m1: vec![CMatrix::zeros(dim, dim); r],
            r: CMatrix::zeros(dim, dim),
        };
        let mut max_leakage = 0.0f64;
        let mut weighted_leakage = 0.0f64;
        let nodes: Vec<usize> = (0..theta_grid.len()).collect();
        for chunk in nodes.chunks(CHUNK) {
            let built: Vec<(CMatrix, f64)> = chunk
                .par_iter()
                .map(|&m| build_state(&theta_grid.node(m), &model, &space))
                .collect::<Result<_>>()?;
            for (&m, (rho, leak)) in chunk.iter().zip(built) {
                max_leakage = max_leakage.max(leak);
                let p = prior_weights[m];
                weighted_leakage += p * leak;
                let theta = linalg::to_cvector(&theta_grid.node(m));
                moments.m0 += &rho * c(p * kernel.theta_part(&theta), 0.0);
                for (j, m1) in moments.m1.iter_mut().enumerate() {
                    *m1 += &rho * (theta[j].conj() * p);
                }
                moments.r += &rho * c(p, 0.0);
                if let Some(s) = states.as_mut() {
                    s.push(rho);
                }
            }
        }
        if weighted_leakage > 1e-6 {
            log::warn!(
                "channel states lose {weighted_leakage:.2e} of prior-averaged mass to truncation; raise the cutoff"
            );
        }
        Ok(Self {
            model,
            theta_grid,
            beta_grid,
            space,
            prior_weights,
            prior_mass,
            max_leakage,
            weighted_leakage,
            kernel: Some(kernel),
            moments: Some(moments),
            states,
        })
    }

    /// Problem with the default grids and Fock space.
    pub fn with_defaults(model: &ChannelModel) -> Result<Self> {
        let rotated = rotate_to_noise_modes(model)?;
        Self::new(
            &rotated,
            default_theta_grid(&rotated)?,
            default_beta_grid(&rotated)?,
            default_space(&rotated)?,
        )
    }

    /// Default grids with the given per-mode cutoffs.
    pub fn with_cutoffs(model: &ChannelModel, cutoffs: Vec<usize>) -> Result<Self> {
        let rotated = rotate_to_noise_modes(model)?;
        Self::new(
            &rotated,
            default_theta_grid(&rotated)?,
            default_beta_grid(&rotated)?,
            FockSpace::new(cutoffs)?,
        )
    }

    /// The model in the coordinates used by the problem.
    pub fn model(&self) -> &ChannelModel {
        &self.model
    }

    pub fn theta_grid(&self) -> &ComplexGrid {
        &self.theta_grid
    }

    pub fn beta_grid(&self) -> &ComplexGrid {
        &self.beta_grid
    }

    pub fn space(&self) -> &FockSpace {
        &self.space
    }

    /// Prior quadrature weights P_m = p(ϑ_m) w_θ.
    pub fn prior_weights(&self) -> &[f64] {
        &self.prior_weights
    }

    /// Σ_m P_m; within 10⁻³ of 1 on an adequate θ grid.
    pub fn prior_mass(&self) -> f64 {
        self.prior_mass
    }

    /// Largest truncation leakage among the channel states.
    pub fn max_leakage(&self) -> f64 {
        self.max_leakage
    }

    /// Truncation leakage averaged over the θ quadrature, Σ_m P_m leak_m.
    pub fn weighted_leakage(&self) -> f64 {
        self.weighted_leakage
    }

    /// Channel state ρ(ϑ_m), from the cache or rebuilt.
    pub fn state(&self, m: usize) -> Result<CMatrix> {
        match &self.states {
            Some(s) => Ok(s[m].clone()),
            None => build_state(&self.theta_grid.node(m), &self.model, &self.space).map(|(rho, _)| rho),
        }
    }

    /// Decoding family on the problem's β grid.
    pub fn family_povm(&self, family: &Family) -> Result<DiscretePOVM> {
        povm::family_povm(&self.beta_grid, &self.space, family)
    }

    pub fn coherent_povm(&self) -> Result<DiscretePOVM> {
        self.family_povm(&Family::Coherent)
    }

    fn check_beta(&self, beta: &[C64]) -> Result<CVector> {
        if beta.len() != self.model.modes() {
            return Err(Error::DimensionMismatch {
                expected: self.model.modes(),
                found: beta.len(),
            });
        }
        if !self.beta_grid.contains(beta) {
            return Err(Error::OutsideGrid);
        }
        Ok(linalg::to_cvector(beta))
    }

    fn zero(&self) -> TruncatedOperator {
        TruncatedOperator::zeros(&self.space)
    }
}

fn build_state(theta: &[C64], model: &ChannelModel, space: &FockSpace) -> Result<(CMatrix, f64)> {
    let t = fock::displaced_thermal_quiet(theta, model.noise(), space)?;
    Ok((t.value.into_matrix(), t.leakage))
}

/// I(β) from the θ-moments of the channel states, with the model's
/// closed-form kernel.
pub fn information_operator(problem: &VariationalProblem, beta: &[C64]) -> Result<TruncatedOperator> {
    let b = problem.check_beta(beta)?;
    let (Some(k), Some(mo)) = (&problem.kernel, &problem.moments) else {
        return Ok(problem.zero());
    };
    let v = &k.ga * &b;
    let quad = linalg::quad_form(&b, &k.aga, &b).re;
    let mut out = mo.m0.clone() - &mo.r * c(quad, 0.0);
    for (j, m1) in mo.m1.iter().enumerate() {
        out += m1 * v[j] + m1.adjoint() * v[j].conj();
    }
    TruncatedOperator::new(problem.space.clone(), linalg::hermitian_part(&out))
}

/// I(β) = Σ_m i(β,ϑ_m) ρ(ϑ_m) P_m, summed node by node.
pub fn information_operator_direct(problem: &VariationalProblem, beta: &[C64]) -> Result<TruncatedOperator> {
    let b = problem.check_beta(beta)?;
    let Some(k) = &problem.kernel else {
        return Ok(problem.zero());
    };
    let dim = problem.space.dim();
    let mut out = CMatrix::zeros(dim, dim);
    for m in 0..problem.theta_grid.len() {
        let theta = linalg::to_cvector(&problem.theta_grid.node(m));
        let w = problem.prior_weights[m] * k.kernel(&b, &theta);
        out += problem.state(m)? * c(w, 0.0);
    }
    TruncatedOperator::new(problem.space.clone(), out)
}

/// I(β) with i(β,ϑ) = ln[p(β|ϑ)/p(β)] taken from the outcome law of the
/// decoding vector φ at β: p(β|ϑ) = ⟨φ|ρ(ϑ)|φ⟩ and p(β) its prior average.
pub fn information_operator_trace(
    problem: &VariationalProblem,
    beta: &[C64],
    phi: &FockVector,
) -> Result<TruncatedOperator> {
    problem.check_beta(beta)?;
    if phi.space() != &problem.space {
        return Err(Error::SpaceMismatch);
    }
    if problem.kernel.is_none() {
        return Ok(problem.zero());
    }
    let m_count = problem.theta_grid.len();
    let mut cond = Vec::with_capacity(m_count);
    for m in 0..m_count {
        let rho = problem.state(m)?;
        cond.push(
            linalg::quad_form(phi.data(), &rho, phi.data())
                .re
                .max(f64::MIN_POSITIVE),
        );
    }
    let marginal: f64 = cond.iter().zip(&problem.prior_weights).map(|(p, w)| p * w).sum();
    let dim = problem.space.dim();
    let mut out = CMatrix::zeros(dim, dim);
    for (m, p) in cond.iter().enumerate() {
        let w = problem.prior_weights[m] * (p / marginal).ln();
        out += problem.state(m)? * c(w, 0.0);
    }
    TruncatedOperator::new(problem.space.clone(), out)
}

/// Columns I(β_k) φ_k for every node of an elementary POVM.
fn applied_information(problem: &VariationalProblem, povm: &DiscretePOVM) -> Result<CMatrix> {
    let phi = elementary_vectors(problem, povm)?;
    let (Some(k), Some(mo)) = (&problem.kernel, &problem.moments) else {
        return Ok(CMatrix::zeros(phi.nrows(), phi.ncols()));
    };
    let grid = povm.grid();
    let r = problem.model.modes();
    let mut y = &mo.m0 * phi;
    let rphi = &mo.r * phi;
    let m1phi: Vec<CMatrix> = mo.m1.iter().map(|m| m * phi).collect();
    let m1hphi: Vec<CMatrix> = mo.m1.iter().map(|m| m.adjoint() * phi).collect();
    let mut node = vec![c(0.0, 0.0); r];
    for col in 0..grid.len() {
        grid.node_into(col, &mut node);
        let b = linalg::to_cvector(&node);
        let v = &k.ga * &b;
        let quad = linalg::quad_form(&b, &k.aga, &b).re;
        let mut yc = y.column_mut(col);
        yc.axpy(c(-quad, 0.0), &rphi.column(col), c(1.0, 0.0));
        for j in 0..r {
            yc.axpy(v[j], &m1phi[j].column(col), c(1.0, 0.0));
            yc.axpy(v[j].conj(), &m1hphi[j].column(col), c(1.0, 0.0));
        }
    }
    Ok(y)
}

fn elementary_vectors<'a>(problem: &VariationalProblem, povm: &'a DiscretePOVM) -> Result<&'a CMatrix> {
    if povm.space() != &problem.space {
        return Err(Error::SpaceMismatch);
    }
    if povm.grid().modes() != problem.model.modes() {
        return Err(Error::DimensionMismatch {
            expected: problem.model.modes(),
            found: povm.grid().modes(),
        });
    }
    match povm.kind() {
        PovmKind::Elementary => Ok(povm.vectors().expect("elementary")),
        PovmKind::General => Err(Error::InvalidArgument("stationarity needs an elementary POVM".into())),
    }
}

/// λ̂ = Σ_k I(β_k) φ_k φ_k† w_k.
pub fn lagrange_operator(problem: &VariationalProblem, povm: &DiscretePOVM) -> Result<TruncatedOperator> {
    let phi = elementary_vectors(problem, povm)?;
    let y = applied_information(problem, povm)?;
    let lambda = (y * phi.adjoint()) * c(povm.grid().weight(), 0.0);
    TruncatedOperator::new(problem.space.clone(), lambda)
}

#[derive(Debug, Clone)]
pub struct StationarityReport {
    /// ‖(I(β_k) - λ̂)φ_k‖ / ‖φ_k‖ per node.
    pub per_node: Vec<f64>,
    /// Outcome weight p(β_k) w_k per node.
    pub weights: Vec<f64>,
    /// Weighted RMS of `per_node` with weights `weights`.
    pub aggregate: f64,
    /// Unweighted maximum of `per_node`.
    pub sup: f64,
    /// Tr λ̂ of the family.
    pub lagrange_trace: f64,
}

/// Residual of (I(β) - λ̂)φ_β = 0 over the nodes of an elementary POVM.
pub fn stationarity_residual(problem: &VariationalProblem, povm: &DiscretePOVM) -> Result<StationarityReport> {
    let phi = elementary_vectors(problem, povm)?;
    let grid = povm.grid();
    let y = applied_information(problem, povm)?;
    let lambda = (&y * phi.adjoint()) * c(grid.weight(), 0.0);
    let z = y - &lambda * phi;

    let mut per_node = Vec::with_capacity(grid.len());
    let mut weights = Vec::with_capacity(grid.len());
    let mut node = vec![c(0.0, 0.0); grid.modes()];
    for k in 0..grid.len() {
        grid.node_into(k, &mut node);
        let norm = phi.column(k).norm();
        per_node.push(if norm > 0.0 { z.column(k).norm() / norm } else { 0.0 });
        weights.push(gaussian::marginal_density(&node, &problem.model)? * grid.weight());
    }
    let total: f64 = weights.iter().sum();
    let aggregate = (per_node.iter().zip(&weights).map(|(r, w)| w * r * r).sum::<f64>() / total).sqrt();
    let sup = per_node.iter().copied().fold(0.0, f64::max);
    Ok(StationarityReport {
        per_node,
        weights,
        aggregate,
        sup,
        lagrange_trace: linalg::trace(&lambda).re,
    })
}

/// Settings of the numerical identity check.
#[derive(Debug, Clone)]
pub struct IdentityOptions {
    /// Multiplies A inside the kernel; 1 is the model itself.
    pub a_scale: f64,
    /// α values at which the left-hand side is evaluated; empty means
    /// {β, 0, β+0.5, β-0.5i}.
    pub probes: Vec<Vec<C64>>,
    /// Half-width of the local β′ grid around (α′+β)/2.
    pub inner_radius: f64,
    /// Spacing of the local β′ grid; `None` reuses the θ-grid spacing.
    pub inner_spacing: Option<f64>,
}

impl Default for IdentityOptions {
    fn default() -> Self {
        Self {
            a_scale: 1.0,
            probes: Vec::new(),
            inner_radius: 5.0,
            inner_spacing: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IdentityReport {
    /// max over probes of |LHS(α, β)|.
    pub lhs: f64,
    pub lhs_per_probe: Vec<f64>,
    /// Σ_m P_m |numeric - reduced form| of the per-ϑ α′-integrated bracket,
    /// maximized over probes.
    pub intermediate: f64,
    /// |Sp(G⁻¹(N+I)⁻¹A† - AA†)G| of the model.
    pub algebraic: f64,
}

/// Per-α′ moments of w(β′) = exp{-(β′-α′)†(β′-β)} on the local grid:
/// ∫w, ∫w Aβ′, ∫w (Aβ′)*, ∫w (Aβ′)†G(Aβ′).
struct InnerMoments {
    j0: C64,
    j1: CVector,
    k1: CVector,
    j2: C64,
}

impl InnerMoments {
    /// ∫ w(β′) (Aβ′-ϑ)†G(Aβ′-ϑ) dμ(β′)
    fn against(&self, theta: &CVector, g: &CMatrix) -> C64 {
        let gt = g * theta;
        let cross_a: C64 = self.k1.iter().zip(gt.iter()).map(|(k, x)| k * x).sum();
        let cross_b = gt.dotc(&self.j1);
        self.j2 - cross_a - cross_b + self.j0 * linalg::quad_form(theta, g, theta)
    }
}

fn inner_moments(alpha_p: &CVector, beta: &CVector, a: &CMatrix, g: &CMatrix, local: &ComplexGrid) -> InnerMoments {
    let r = beta.len();
    let center: Vec<C64> = (alpha_p + beta).scale(0.5).iter().copied().collect();
    let grid = local.translated(&center);
    let mut j0 = c(0.0, 0.0);
    let mut j1 = CVector::zeros(r);
    let mut k1 = CVector::zeros(r);
    let mut j2 = c(0.0, 0.0);
    let mut node = vec![c(0.0, 0.0); r];
    for idx in 0..grid.len() {
        grid.node_into(idx, &mut node);
        let bp = linalg::to_cvector(&node);
        let w = (-(&bp - alpha_p).dotc(&(&bp - beta))).exp() * grid.weight();
        let ab = a * &bp;
        j0 += w;
        j1.axpy(w, &ab, c(1.0, 0.0));
        k1.axpy(w, &ab.map(|x| x.conj()), c(1.0, 0.0));
        j2 += w * linalg::quad_form(&ab, g, &ab);
    }
    InnerMoments { j0, j1, k1, j2 }
}

fn local_grid(r: usize, radius: f64, spacing: f64) -> Result<ComplexGrid> {
    ComplexGrid::per_mode(&vec![radius; r], &vec![spacing; r], DEFAULT_NODE_BUDGET)
}

/// Numerical check that coherent vectors satisfy the stationarity identity
///
/// ∬ ⟨α|α′⟩⟨α′|β⟩ ( c(Aβ,ϑ) - ∫ ⟨α′|β′⟩⟨β′|β⟩/⟨α′|β⟩ c(Aβ′,ϑ) μ(dβ′) )
///     p(α′|ϑ) μ(dα′) P(dϑ) = 0,   c(z,ϑ) = (z-ϑ)†G(z-ϑ).
///
/// The β′ integral runs on a local lattice around (α′+β)/2, the α′ integral on
/// `alpha_grid` (N > 0) or collapses onto α′ = ϑ (N = 0), and the ϑ integral
/// on `theta_grid`. The per-ϑ α′-integrated bracket is compared with its
/// reduced form
/// [(β - (N+I)⁻¹(ϑ+Nα))†A†G(Aβ-ϑ) - Sp AA†G] ⟨α|β⟩ |N+I|⁻¹
///     exp{-(ϑ-α)†(N+I)⁻¹(ϑ-β)}.
pub fn verify_identity_15(
    model: &ChannelModel,
    beta: &[C64],
    theta_grid: &ComplexGrid,
    alpha_grid: &ComplexGrid,
) -> Result<IdentityReport> {
    verify_identity_15_with(model, beta, theta_grid, alpha_grid, &IdentityOptions::default())
}

pub fn verify_identity_15_with(
    model: &ChannelModel,
    beta: &[C64],
    theta_grid: &ComplexGrid,
    alpha_grid: &ComplexGrid,
    options: &IdentityOptions,
) -> Result<IdentityReport> {
    let r = model.modes();
    if beta.len() != r {
        return Err(Error::DimensionMismatch {
            expected: r,
            found: beta.len(),
        });
    }
    for modes in [theta_grid.modes(), alpha_grid.modes()] {
        if modes != r {
            return Err(Error::DimensionMismatch {
                expected: r,
                found: modes,
            });
        }
    }
    let (a0, g) = gaussian::ag_matrices(model)?;
    let algebraic = gaussian::chain_identity_residual(model)?;
    let a = &a0 * c(options.a_scale, 0.0);
    let noise = model.noise();
    let zero_noise = noise.norm() == 0.0;
    let noise_inv = if zero_noise {
        None
    } else {
        Some(linalg::inverse(noise).map_err(|_| Error::UnsupportedNoise)?)
    };
    if noise_inv.is_some() && linalg::hermitian_eigenvalues(noise).iter().any(|&e| e <= 0.0) {
        return Err(Error::UnsupportedNoise);
    }
    let noise_det = if zero_noise { 1.0 } else { linalg::det_hermitian(noise) };

    let b = linalg::to_cvector(beta);
    let probes: Vec<CVector> = if options.probes.is_empty() {
        let shift = |d: C64| linalg::to_cvector(&beta.iter().map(|x| x + d).collect::<Vec<_>>());
        vec![b.clone(), CVector::zeros(r), shift(c(0.5, 0.0)), shift(c(0.0, -0.5))]
    } else {
        options.probes.iter().map(|p| linalg::to_cvector(p)).collect()
    };
    if probes.iter().any(|p| p.len() != r) {
        return Err(Error::DimensionMismatch { expected: r, found: 0 });
    }
    let spacing = options.inner_spacing.unwrap_or_else(|| theta_grid.mode(0).spacing());
    let local = local_grid(r, options.inner_radius, spacing)?;

    // α′ nodes: the θ grid itself when N = 0, else the α grid
    let ap_grid = if zero_noise { theta_grid } else { alpha_grid };
    let pairs = if zero_noise {
        theta_grid.len()
    } else {
        theta_grid.len().saturating_mul(ap_grid.len())
    };
    if pairs > PAIR_BUDGET {
        return Err(Error::BudgetExceeded {
            nodes: pairs,
            budget: PAIR_BUDGET,
        });
    }
    let ap_nodes: Vec<CVector> = ap_grid.nodes().map(|n| linalg::to_cvector(&n)).collect();
    let inner: Vec<InnerMoments> = ap_nodes
        .par_iter()
        .map(|ap| inner_moments(ap, &b, &a, &g, &local))
        .collect();
    // ⟨α|α′⟩⟨α′|β⟩ per probe and α′ node
    let ov = |x: &CVector, y: &CVector| -> C64 {
        let e = x.dotc(y) - 0.5 * (x.norm_squared() + y.norm_squared());
        e.exp()
    };
    let weights: Vec<Vec<C64>> = probes
        .iter()
        .map(|al| ap_nodes.iter().map(|ap| ov(al, ap) * ov(ap, &b)).collect())
        .collect();

    let eff = model.effective_noise();
    let eff_inv = model.effective_noise_inv();
    let eff_det = linalg::det_hermitian(&eff);
    let sp_aag = linalg::trace(&(&a * a.adjoint() * &g));
    let ab = &a * &b;

    let mut lhs = vec![c(0.0, 0.0); probes.len()];
    let mut intermediate = vec![0.0f64; probes.len()];
    for m in 0..theta_grid.len() {
        let theta = linalg::to_cvector(&theta_grid.node(m));
        let pw = gaussian::prior_density(theta.as_slice(), model)? * theta_grid.weight();
        if pw < 1e-300 {
            continue;
        }
        let d_outer = &ab - &theta;
        let c_beta = linalg::quad_form(&d_outer, &g, &d_outer);
        let mut per_probe = vec![c(0.0, 0.0); probes.len()];
        let mut accumulate = |idx: usize, factor: C64| {
            let bracket = c_beta - inner[idx].against(&theta, &g);
            for (p, acc) in per_probe.iter_mut().enumerate() {
                *acc += weights[p][idx] * bracket * factor;
            }
        };
        if zero_noise {
            accumulate(m, c(1.0, 0.0));
        } else {
            let ninv = noise_inv.as_ref().expect("positive noise");
            for (idx, ap) in ap_nodes.iter().enumerate() {
                let d = ap - &theta;
                let q = linalg::quad_form(&d, ninv, &d).re;
                if q > 700.0 {
                    continue;
                }
                let dens = (-q).exp() / noise_det * ap_grid.weight();
                accumulate(idx, c(dens, 0.0));
            }
        }
        for (p, al) in probes.iter().enumerate() {
            // reduced form of the α′-integrated bracket at this ϑ
            let shifted = eff_inv * (&theta + noise * al);
            let lead = linalg::quad_form(&(&b - shifted), &(a.adjoint() * &g), &(&ab - &theta));
            let ta = &theta - al;
            let tb = &theta - &b;
            let env = ov(al, &b) * (-linalg::quad_form(&ta, eff_inv, &tb)).exp() / eff_det;
            let reduced = (lead - sp_aag) * env;
            intermediate[p] += pw * (per_probe[p] - reduced).norm();
            lhs[p] += pw * per_probe[p];
        }
    }
    let lhs_per_probe: Vec<f64> = lhs.iter().map(|z| z.norm()).collect();
    Ok(IdentityReport {
        lhs: lhs_per_probe.iter().copied().fold(0.0, f64::max),
        lhs_per_probe,
        intermediate: intermediate.into_iter().fold(0.0, f64::max),
        algebraic,
    })
}

/// Default θ and α′ grid of the identity check: radius 5√(s+n+1) and spacing
/// 0.4·min(1, √s) from the largest and smallest diagonal entries.
pub fn default_identity_grid(model: &ChannelModel) -> Result<ComplexGrid> {
    let s = diag_re(model.signal());
    let n = diag_re(model.noise());
    let s_min = s.iter().copied().fold(f64::INFINITY, f64::min);
    let width = s.iter().zip(&n).map(|(s, n)| s + n + 1.0).fold(0.0, f64::max);
    let spacing = 0.4 * s_min.sqrt().min(1.0);
    if !(spacing > 0.0) {
        return Err(Error::SingularSignal { eigenvalue: s_min });
    }
    crate::grid::make_grid(model.modes(), 5.0 * width.sqrt(), spacing)
}

/// Grid spacing factor of [`default_mi_grids`] relative to the per-mode
/// conditional width.
pub const MI_SPACING_FACTOR: f64 = 0.8;

/// Default grids for [`mutual_information_quadrature`]: per mode, θ radius
/// 5√s_j with spacing 0.8·min(√s_j, √(n_j+1)), β radius 5√(s_j+n_j+1) with
/// spacing 0.8·√(n_j+1). Returns (β grid, θ grid).
pub fn default_mi_grids(model: &ChannelModel) -> Result<(ComplexGrid, ComplexGrid)> {
    let s = diag_re(model.signal());
    let n = diag_re(model.noise());
    let r = model.modes();
    if !model.has_signal() {
        let beta = ComplexGrid::per_mode(
            &n.iter().map(|n| 5.0 * (n + 1.0).sqrt()).collect::<Vec<_>>(),
            &n.iter()
                .map(|n| MI_SPACING_FACTOR * (n + 1.0).sqrt())
                .collect::<Vec<_>>(),
            DEFAULT_NODE_BUDGET,
        )?;
        return Ok((beta, ComplexGrid::point(&vec![c(0.0, 0.0); r])));
    }
    let theta_r: Vec<f64> = s.iter().map(|s| 5.0 * s.sqrt()).collect();
    let theta_h: Vec<f64> = s
        .iter()
        .zip(&n)
        .zip(&theta_r)
        .map(|((s, n), &rad)| (MI_SPACING_FACTOR * s.sqrt().min((n + 1.0).sqrt())).min(rad))
        .collect();
    let beta_r: Vec<f64> = s.iter().zip(&n).map(|(s, n)| 5.0 * (s + n + 1.0).sqrt()).collect();
    let beta_h: Vec<f64> = n.iter().map(|n| MI_SPACING_FACTOR * (n + 1.0).sqrt()).collect();
    Ok((
        ComplexGrid::per_mode(&beta_r, &beta_h, DEFAULT_NODE_BUDGET)?,
        ComplexGrid::per_mode(&theta_r, &theta_h, DEFAULT_NODE_BUDGET)?,
    ))
}

fn warn_coverage(grid: &ComplexGrid, density: impl Fn(&[C64]) -> Result<f64>, what: &str) -> Result<()> {
    let r = grid.modes();
    let peak = density(&vec![c(0.0, 0.0); r])?;
    for j in 0..r {
        let mut edge = vec![c(0.0, 0.0); r];
        edge[j] = c(grid.mode(j).radius(), 0.0);
        let ratio = density(&edge)? / peak;
        if ratio > COVERAGE_FRACTION {
            log::warn!("{what} grid edge on mode {j} still carries {ratio:.2e} of the peak density");
        }
    }
    Ok(())
}

/// Largest number of (β, θ) node pairs summed directly.
pub const PAIR_BUDGET: usize = 400_000_000;

/// ∬ p(β|ϑ) ln[p(β|ϑ)/p(β)] P(dϑ) μ(dβ) by lattice quadrature with the
/// closed-form densities. Per-mode factor tables are used when N is diagonal.
pub fn mutual_information_quadrature(
    model: &ChannelModel,
    beta_grid: &ComplexGrid,
    theta_grid: &ComplexGrid,
) -> Result<f64> {
    let r = model.modes();
    for modes in [beta_grid.modes(), theta_grid.modes()] {
        if modes != r {
            return Err(Error::DimensionMismatch {
                expected: r,
                found: modes,
            });
        }
    }
    if !model.has_signal() {
        return Ok(0.0);
    }
    warn_coverage(theta_grid, |t| gaussian::prior_density(t, model), "θ")?;
    warn_coverage(beta_grid, |b| gaussian::marginal_density(b, model), "β")?;

    let value = if linalg::is_diagonal(model.noise(), 0.0) {
        mi_factored(model, beta_grid, theta_grid)?
    } else {
        let pairs = beta_grid.len().saturating_mul(theta_grid.len());
        if pairs > PAIR_BUDGET {
            return Err(Error::BudgetExceeded {
                nodes: pairs,
                budget: PAIR_BUDGET,
            });
        }
        mi_direct(model, beta_grid, theta_grid)?
    };
    Ok(value.max(0.0))
}

fn mi_direct(model: &ChannelModel, beta_grid: &ComplexGrid, theta_grid: &ComplexGrid) -> Result<f64> {
    let eff_inv = model.effective_noise_inv();
    let ln_eff = linalg::ln_det_hermitian(&model.effective_noise());
    let total_inv = linalg::inverse(&model.total_covariance())?;
    let ln_total = linalg::ln_det_hermitian(&model.total_covariance());
    let betas: Vec<CVector> = beta_grid.nodes().map(|n| linalg::to_cvector(&n)).collect();
    let ln_marg: Vec<f64> = betas
        .iter()
        .map(|b| -ln_total - linalg::quad_form(b, &total_inv, b).re)
        .collect();
    let per_theta: Vec<f64> = (0..theta_grid.len())
        .into_par_iter()
        .map(|m| -> Result<f64> {
            let t = theta_grid.node(m);
            let pw = gaussian::prior_density(&t, model)?;
            let tv = linalg::to_cvector(&t);
            let mut acc = 0.0;
            for (b, lm) in betas.iter().zip(&ln_marg) {
                let d = b - &tv;
                let lc = -ln_eff - linalg::quad_form(&d, eff_inv, &d).re;
                acc += lc.exp() * (lc - lm);
            }
            Ok(pw * acc)
        })
        .collect::<Result<_>>()?;
    Ok(per_theta.iter().sum::<f64>() * theta_grid.weight() * beta_grid.weight())
}

/// Per-mode sums over the β lattice of mode j, for every θ lattice point of
/// mode j: Σ e, Σ e ℓ, Σ e β, Σ e |β|² with e = p_j(β|ϑ) h²/π and
/// ℓ = ln p_j(β|ϑ).
struct ModeTable {
    z: Vec<f64>,
    l: Vec<f64>,
    f: Vec<C64>,
    q: Vec<f64>,
}

fn mode_table(beta: &[C64], theta: &[C64], width: f64, weight: f64) -> ModeTable {
    let len = theta.len();
    let (mut z, mut l, mut f, mut q) = (vec![0.0; len], vec![0.0; len], vec![c(0.0, 0.0); len], vec![0.0; len]);
    let ln_w = width.ln();
    for (t, th) in theta.iter().enumerate() {
        for b in beta {
            let ll = -ln_w - (b - th).norm_sqr() / width;
            let e = ll.exp() * weight;
            z[t] += e;
            l[t] += e * ll;
            f[t] += b * e;
            q[t] += e * b.norm_sqr();
        }
    }
    ModeTable { z, l, f, q }
}

fn mi_factored(model: &ChannelModel, beta_grid: &ComplexGrid, theta_grid: &ComplexGrid) -> Result<f64> {
    let r = model.modes();
    let eff = model.effective_noise();
    let total = model.total_covariance();
    let total_inv = linalg::inverse(&total)?;
    let ln_total = linalg::ln_det_hermitian(&total);
    let tables: Vec<ModeTable> = (0..r)
        .map(|j| {
            mode_table(
                beta_grid.mode(j).points(),
                theta_grid.mode(j).points(),
                eff[(j, j)].re,
                beta_grid.mode(j).spacing().powi(2) / std::f64::consts::PI,
            )
        })
        .collect();
    let per_theta: Vec<f64> = (0..theta_grid.len())
        .into_par_iter()
        .map(|m| -> Result<f64> {
            let t = theta_grid.node(m);
            let pw = gaussian::prior_density(&t, model)?;
            let idx: Vec<usize> = (0..r).map(|j| theta_grid.mode_index(m, j)).collect();
            let z: Vec<f64> = (0..r).map(|j| tables[j].z[idx[j]]).collect();
            let mass: f64 = z.iter().product();
            if mass == 0.0 {
                return Ok(0.0);
            }
            // E[ln p(β|ϑ)] and E[β†T⁻¹β] under the normalized product weights
            let mut cond = 0.0;
            let mut quad = 0.0;
            for i in 0..r {
                let ti = &tables[i];
                cond += ti.l[idx[i]] / z[i];
                quad += total_inv[(i, i)].re * ti.q[idx[i]] / z[i];
                for k in 0..r {
                    if k != i {
                        let fi = ti.f[idx[i]] / z[i];
                        let fk = tables[k].f[idx[k]] / z[k];
                        quad += (fi.conj() * total_inv[(i, k)] * fk).re;
                    }
                }
            }
            Ok(pw * mass * (cond + ln_total + quad))
        })
        .collect::<Result<_>>()?;
    Ok(per_theta.iter().sum::<f64>() * theta_grid.weight())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;

    fn problem(s: f64, n: f64, radius_t: f64, radius_b: f64, h: f64, cut: usize) -> VariationalProblem {
        let model = ChannelModel::scalar(s, n).unwrap();
        VariationalProblem::new(
            &model,
            make_grid(1, radius_t, h).unwrap(),
            make_grid(1, radius_b, h).unwrap(),
            FockSpace::single(cut).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn moment_form_matches_direct_sum() {
        let p = problem(1.0, 0.5, 5.0, 6.0, 0.5, 20);
        for beta in [c(0.0, 0.0), c(0.7, -1.2)] {
            let fast = information_operator(&p, &[beta]).unwrap();
            let direct = information_operator_direct(&p, &[beta]).unwrap();
            let diff = linalg::max_abs(&(fast.matrix() - direct.matrix()));
            assert!(diff < 1e-10, "{diff}");
            assert!(fast.hermitian_residual() < 1e-10);
        }
    }

    #[test]
    fn vacuum_entry_matches_scalar_quadrature() {
        // ⟨0|I(0)|0⟩ = Σ i(0,ϑ) ⟨0|ρ(ϑ)|0⟩ p(ϑ) w, with ⟨0|ρ(ϑ)|0⟩ = e^{-|ϑ|²} for n = 0
        let p = problem(1.0, 0.0, 5.0, 6.0, 0.25, 30);
        let op = information_operator(&p, &[c(0.0, 0.0)]).unwrap();
        let model = ChannelModel::scalar(1.0, 0.0).unwrap();
        let g = make_grid(1, 5.0, 0.25).unwrap();
        let oracle: f64 = g
            .nodes()
            .map(|t| {
                let k = gaussian::information_kernel(&[c(0.0, 0.0)], &t, &model).unwrap();
                k * (-t[0].norm_sqr()).exp() * gaussian::prior_density(&t, &model).unwrap()
            })
            .sum::<f64>()
            * g.weight();
        assert!(
            (op.matrix()[(0, 0)].re - oracle).abs() < 1e-10,
            "{} vs {oracle}",
            op.matrix()[(0, 0)]
        );
    }

    #[test]
    fn zero_signal_gives_zero_operators() {
        let p = problem(0.0, 0.5, 5.0, 6.0, 0.5, 10);
        assert_eq!(p.theta_grid().len(), 1);
        let op = information_operator(&p, &[c(0.3, 0.0)]).unwrap();
        assert_eq!(op.matrix().norm(), 0.0);
        let povm = p.coherent_povm().unwrap();
        assert_eq!(lagrange_operator(&p, &povm).unwrap().matrix().norm(), 0.0);
        let squeezed = p.family_povm(&Family::Squeezed { ratio: 1.5 }).unwrap();
        let rep = stationarity_residual(&p, &squeezed).unwrap();
        assert_eq!(rep.aggregate, 0.0);
        assert_eq!(rep.sup, 0.0);
    }

    #[test]
    fn oversized_problem_hits_budget() {
        let model = ChannelModel::diagonal(&[1.0, 1.0], &[0.0, 0.0]).unwrap();
        assert!(matches!(
            VariationalProblem::with_defaults(&model),
            Err(Error::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn outside_grid_is_rejected() {
        let p = problem(1.0, 0.0, 5.0, 3.0, 0.5, 10);
        assert!(matches!(
            information_operator(&p, &[c(4.0, 0.0)]),
            Err(Error::OutsideGrid)
        ));
    }

    #[test]
    fn trace_route_agrees_for_coherent_vector() {
        let p = problem(1.0, 0.5, 5.0, 6.0, 0.25, 30);
        let beta = [c(0.4, 0.3)];
        let phi = fock::coherent_vector(&beta, p.space()).unwrap().value;
        let trace = information_operator_trace(&p, &beta, &phi).unwrap();
        let closed = information_operator(&p, &beta).unwrap();
        let lhs = trace.apply(&phi).unwrap();
        let rhs = closed.apply(&phi).unwrap();
        let diff = (lhs.data() - rhs.data()).norm();
        assert!(diff < 1e-4, "{diff}");
    }

    #[test]
    fn coherent_family_is_stationary() {
        let p = problem(1.0, 0.5, 5.0, 6.0, 0.5, 30);
        let rep = stationarity_residual(&p, &p.coherent_povm().unwrap()).unwrap();
        assert!(rep.aggregate < 1e-3, "{}", rep.aggregate);
        assert!(
            (rep.lagrange_trace - (1.0f64 + 1.0 / 1.5).ln()).abs() < 1e-3,
            "{}",
            rep.lagrange_trace
        );
        let off = stationarity_residual(&p, &p.family_povm(&Family::Offset(c(0.3, 0.0))).unwrap()).unwrap();
        assert!(off.aggregate > 5.0 * rep.aggregate);
    }

    #[test]
    fn identity_holds_for_zero_noise() {
        let model = ChannelModel::scalar(1.0, 0.0).unwrap();
        let g = make_grid(1, 6.0, 0.4).unwrap();
        let rep = verify_identity_15(&model, &[c(0.5, 0.0)], &g, &g).unwrap();
        assert!(rep.lhs < 1e-6, "{rep:?}");
        assert!(rep.intermediate < 1e-6, "{rep:?}");
        assert!(rep.algebraic < 1e-12);
        let opts = IdentityOptions {
            a_scale: 1.1,
            ..Default::default()
        };
        let bad = verify_identity_15_with(&model, &[c(0.5, 0.0)], &g, &g, &opts).unwrap();
        assert!(bad.lhs > 1e-2, "{bad:?}");
        assert!(bad.intermediate < 1e-6, "{bad:?}");
    }

    #[test]
    fn identity_holds_with_noise() {
        let model = ChannelModel::scalar(1.0, 0.5).unwrap();
        let g = make_grid(1, 6.0, 0.4).unwrap();
        let rep = verify_identity_15(&model, &[c(0.5, -0.2)], &g, &g).unwrap();
        assert!(rep.lhs < 1e-4, "{rep:?}");
        assert!(rep.intermediate < 1e-4, "{rep:?}");
    }

    #[test]
    fn mi_quadrature_examples() {
        let m = ChannelModel::scalar(3.0, 0.0).unwrap();
        let (b, t) = default_mi_grids(&m).unwrap();
        let v = mutual_information_quadrature(&m, &b, &t).unwrap();
        assert!((v - 4f64.ln()).abs() < 1e-3, "{v}");

        let zero = ChannelModel::scalar(0.0, 1.0).unwrap();
        let (b, t) = default_mi_grids(&zero).unwrap();
        assert!(mutual_information_quadrature(&zero, &b, &t).unwrap().abs() < 1e-6);
    }

    #[test]
    fn factored_and_direct_quadrature_agree() {
        let m = ChannelModel::diagonal(&[1.0, 2.0], &[0.5, 0.0]).unwrap();
        let b = ComplexGrid::per_mode(&[5.0, 6.0], &[1.0, 1.2], DEFAULT_NODE_BUDGET).unwrap();
        let t = ComplexGrid::per_mode(&[4.0, 5.0], &[1.0, 1.0], DEFAULT_NODE_BUDGET).unwrap();
        let f = mi_factored(&m, &b, &t).unwrap();
        let d = mi_direct(&m, &b, &t).unwrap();
        assert!((f - d).abs() < 1e-10, "{f} vs {d}");
    }
}
