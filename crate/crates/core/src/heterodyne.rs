//! Monte-Carlo heterodyne receiver and the extended-space operator algebra
//! behind it.
//!
//! Outcomes are drawn from their law directly: ϑ ~ CN(0, S) and
//! β = ϑ + η with η ~ CN(0, N+I). [`extended_space_check`] verifies at the
//! operator level that measuring α̂ = a⊗1 + 1⊗a₀† with the auxiliary mode in
//! vacuum reproduces exactly this law.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fock::{self, FockSpace, TruncatedOperator};
use crate::gaussian::{ChannelModel, ComplexGaussian};
use crate::grid::make_grid;
use crate::linalg::{self, c, CMatrix, CVector, C64};

/// Samples per independent random stream.
pub const STREAM_CHUNK: usize = 4096;
pub const DEFAULT_BOOTSTRAP: usize = 200;
/// Statistical assertions need at least this many samples.
pub const MIN_SAMPLES: usize = 1000;
/// Offset mixed into the master seed for bootstrap resampling.
const BOOTSTRAP_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub model: ChannelModel,
    pub count: usize,
    pub seed: u64,
    /// Bootstrap resamples for the confidence interval.
    pub bootstrap: usize,
}

impl ExperimentConfig {
    pub fn new(model: ChannelModel, count: usize, seed: u64) -> Self {
        Self {
            model,
            count,
            seed,
            bootstrap: DEFAULT_BOOTSTRAP,
        }
    }
}

/// Paired draws (ϑ_i, β_i), stored flat: sample i occupies entries
/// i·r .. (i+1)·r.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    modes: usize,
    theta: Vec<C64>,
    beta: Vec<C64>,
}

impl Samples {
    pub fn new(modes: usize, theta: Vec<C64>, beta: Vec<C64>) -> Result<Self> {
        if modes == 0 || theta.len() != beta.len() || !theta.len().is_multiple_of(modes) {
            return Err(Error::InvalidArgument("sample arrays do not form r-vectors".into()));
        }
        Ok(Self { modes, theta, beta })
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn len(&self) -> usize {
        self.theta.len() / self.modes
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn theta(&self, i: usize) -> &[C64] {
        &self.theta[i * self.modes..(i + 1) * self.modes]
    }

    pub fn beta(&self, i: usize) -> &[C64] {
        &self.beta[i * self.modes..(i + 1) * self.modes]
    }

    /// CSV with header `theta0_re,theta0_im,...,beta0_re,beta0_im,...`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = Vec::with_capacity(4 * self.modes);
        for name in ["theta", "beta"] {
            for j in 0..self.modes {
                header.push(format!("{name}{j}_re"));
                header.push(format!("{name}{j}_im"));
            }
        }
        w.write_record(&header)?;
        let mut row = Vec::with_capacity(header.len());
        for i in 0..self.len() {
            row.clear();
            for z in self.theta(i).iter().chain(self.beta(i)) {
                row.push(format!("{:e}", z.re));
                row.push(format!("{:e}", z.im));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws `config.count` pairs. Chunks of [`STREAM_CHUNK`] samples use
/// independent ChaCha streams of the master seed, so the output does not
/// depend on how chunks are scheduled.
pub fn sample_channel(config: &ExperimentConfig) -> Result<Samples> {
    if config.count == 0 {
        return Err(Error::InvalidArgument("count must be at least 1".into()));
    }
    let model = &config.model;
    let r = model.modes();
    let prior = if model.has_signal() {
        Some(ComplexGaussian::centered(model.signal().clone())?)
    } else {
        None
    };
    let noise = ComplexGaussian::centered(model.effective_noise())?;
    let chunks = config.count.div_ceil(STREAM_CHUNK);
    let parts: Vec<(Vec<C64>, Vec<C64>)> = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let len = STREAM_CHUNK.min(config.count - chunk * STREAM_CHUNK);
            let mut rng = stream_rng(config.seed, chunk as u64);
            let mut theta = Vec::with_capacity(len * r);
            let mut beta = Vec::with_capacity(len * r);
            let mut eta = Vec::with_capacity(r);
            for _ in 0..len {
                let start = theta.len();
                match &prior {
                    Some(p) => p.draw_into(&mut rng, &mut theta),
                    None => theta.extend(std::iter::repeat_n(c(0.0, 0.0), r)),
                }
                eta.clear();
                noise.draw_into(&mut rng, &mut eta);
                beta.extend(theta[start..].iter().zip(&eta).map(|(t, e)| t + e));
            }
            (theta, beta)
        })
        .collect();
    let mut theta = Vec::with_capacity(config.count * r);
    let mut beta = Vec::with_capacity(config.count * r);
    for (t, b) in parts {
        theta.extend(t);
        beta.extend(b);
    }
    Samples::new(r, theta, beta)
}

/// Running first and second moments of the joint vector x = (ϑ, β).
struct JointMoments {
    dim: usize,
    n: f64,
    sum: Vec<C64>,
    outer: Vec<C64>,
}

impl JointMoments {
    fn new(modes: usize) -> Self {
        let dim = 2 * modes;
        Self {
            dim,
            n: 0.0,
            sum: vec![c(0.0, 0.0); dim],
            outer: vec![c(0.0, 0.0); dim * dim],
        }
    }

    fn add(&mut self, samples: &Samples, i: usize) {
        let r = samples.modes;
        let x = |k: usize| {
            if k < r {
                samples.theta(i)[k]
            } else {
                samples.beta(i)[k - r]
            }
        };
        self.n += 1.0;
        for a in 0..self.dim {
            let xa = x(a);
            self.sum[a] += xa;
            for b in 0..self.dim {
                self.outer[a * self.dim + b] += xa * x(b).conj();
            }
        }
    }

    /// Unbiased covariance E[(x - x̄)(x - x̄)†].
    fn covariance(&self) -> CMatrix {
        let d = self.dim;
        CMatrix::from_fn(d, d, |a, b| {
            let mean_a = self.sum[a] / self.n;
            let mean_b = self.sum[b] / self.n;
            (self.outer[a * d + b] - mean_a * mean_b.conj() * self.n) / (self.n - 1.0)
        })
    }
}

/// Plug-in Gaussian MI ln|Σ_ββ| - ln|Σ_ββ - Σ_βϑ Σ_ϑϑ⁻¹ Σ_ϑβ| from a joint
/// covariance. A zero ϑ block carries no information.
fn plug_in(cov: &CMatrix, r: usize) -> Result<f64> {
    let tt = cov.view((0, 0), (r, r)).into_owned();
    let bt = cov.view((r, 0), (r, r)).into_owned();
    let bb = linalg::hermitian_part(&cov.view((r, r), (r, r)).into_owned());
    let bb_ev = linalg::hermitian_eigenvalues(&bb);
    if bb_ev.iter().any(|&e| e <= 0.0) {
        return Err(Error::DegenerateSamples);
    }
    if tt.norm() == 0.0 {
        return Ok(0.0);
    }
    let tt_inv = linalg::inverse(&linalg::hermitian_part(&tt)).map_err(|_| Error::DegenerateSamples)?;
    let cond = linalg::hermitian_part(&(&bb - &bt * tt_inv * bt.adjoint()));
    let cond_ev = linalg::hermitian_eigenvalues(&cond);
    if cond_ev.iter().any(|&e| e <= 0.0) {
        return Err(Error::DegenerateSamples);
    }
    Ok(bb_ev.iter().map(|e| e.ln()).sum::<f64>() - cond_ev.iter().map(|e| e.ln()).sum::<f64>())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiEstimate {
    /// Plug-in estimate on the full sample, nats.
    pub value: f64,
    /// Bootstrap standard error.
    pub std_error: f64,
    /// 95% percentile bootstrap interval.
    pub ci_low: f64,
    pub ci_high: f64,
}

impl MiEstimate {
    pub fn contains(&self, x: f64) -> bool {
        self.ci_low <= x && x <= self.ci_high
    }
}

/// Gaussian plug-in estimate of the mutual information between ϑ and β with
/// a percentile bootstrap interval. The estimator is consistent because both
/// the marginal and the conditional outcome laws are Gaussian.
pub fn empirical_mi(samples: &Samples, bootstrap: usize, seed: u64) -> Result<MiEstimate> {
    let count = samples.len();
    if count < MIN_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "{count} samples; at least {MIN_SAMPLES} are needed"
        )));
    }
    let r = samples.modes();
    let mut full = JointMoments::new(r);
    for i in 0..count {
        full.add(samples, i);
    }
    let value = plug_in(&full.covariance(), r)?;
    if bootstrap < 2 {
        return Ok(MiEstimate {
            value,
            std_error: 0.0,
            ci_low: value,
            ci_high: value,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ BOOTSTRAP_SALT);
    let mut reps = Vec::with_capacity(bootstrap);
    for _ in 0..bootstrap {
        let mut m = JointMoments::new(r);
        for _ in 0..count {
            m.add(samples, rng.random_range(0..count));
        }
        reps.push(plug_in(&m.covariance(), r)?);
    }
    let mean = reps.iter().sum::<f64>() / bootstrap as f64;
    let var = reps.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (bootstrap - 1) as f64;
    reps.sort_by(f64::total_cmp);
    let pick = |q: f64| reps[((q * (bootstrap - 1) as f64).round() as usize).min(bootstrap - 1)];
    Ok(MiEstimate {
        value,
        std_error: var.sqrt(),
        ci_low: pick(0.025),
        ci_high: pick(0.975),
    })
}

/// Sample covariance E[(x - x̄)(x - x̄)†] of flat r-vectors.
pub fn sample_covariance(values: &[C64], modes: usize) -> Result<CMatrix> {
    let count = values.len() / modes;
    if count < 2 || !values.len().is_multiple_of(modes) {
        return Err(Error::DegenerateSamples);
    }
    let mut mean = CVector::zeros(modes);
    for z in values.chunks(modes) {
        mean += linalg::to_cvector(z);
    }
    mean /= c(count as f64, 0.0);
    let mut cov = CMatrix::zeros(modes, modes);
    for z in values.chunks(modes) {
        let d = linalg::to_cvector(z) - &mean;
        cov += &d * d.adjoint();
    }
    Ok(cov / c((count - 1) as f64, 0.0))
}

/// Covariance of β - ϑ, which should approach N + I.
pub fn conditional_covariance(samples: &Samples) -> Result<CMatrix> {
    let diff: Vec<C64> = samples.beta.iter().zip(&samples.theta).map(|(b, t)| b - t).collect();
    sample_covariance(&diff, samples.modes)
}

/// Smallest cutoff accepted by [`extended_space_check`].
pub const MIN_EXTENDED_CUTOFF: usize = 10;

#[derive(Debug, Clone)]
pub struct ExtendedReport {
    /// Highest system and auxiliary level of the checked block.
    pub reliable_levels: (usize, usize),
    /// ‖[α̂, α̂†]‖ on the block, operator norm.
    pub commutator_norm: f64,
    /// max_β ‖(α̂ - β)ψ_β‖ / ‖ψ_β‖ on the test grid, over the checked block.
    pub eigen_residual: f64,
    /// max |outcome density - closed-form Husimi| over test states and nodes.
    pub husimi_error: f64,
}

/// Truncated generalized eigenvector ψ_β = Σ_k (-1)^k D(β)|k⟩ ⊗ |k⟩₀ of α̂.
pub fn extended_eigenvector(beta: C64, system: usize, aux: usize) -> CVector {
    let d = fock::displacement_columns(beta, system + 1, aux + 1);
    let mut v = CVector::zeros((system + 1) * (aux + 1));
    for k in 0..=aux {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        for m in 0..=system {
            v[m * (aux + 1) + k] = d[(m, k)] * sign;
        }
    }
    v
}

/// Verifies the extended-space realization of the coherent measurement on
/// system ⊗ auxiliary with the given cutoffs: normality of
/// α̂ = a⊗1 + 1⊗a₀† below both cutoffs, the eigen-equation α̂ψ_β = βψ_β, and
/// that the auxiliary-vacuum outcome law equals the Husimi function for the
/// vacuum and the n = 1 thermal state.
pub fn extended_space_check(system_cutoff: usize, aux_cutoff: usize) -> Result<ExtendedReport> {
    for cut in [system_cutoff, aux_cutoff] {
        if cut < MIN_EXTENDED_CUTOFF {
            return Err(Error::InvalidSpace(format!("cutoff {cut} below {MIN_EXTENDED_CUTOFF}")));
        }
    }
    let space = FockSpace::new(vec![system_cutoff, aux_cutoff])?;
    let a = fock::annihilation(0, &space)?;
    let a0_dag = fock::creation(1, &space)?;
    let alpha = TruncatedOperator::new(space.clone(), a.matrix() + a0_dag.matrix())?;
    let comm = alpha.commutator(&alpha.adjoint())?;
    let levels = (system_cutoff - 1, aux_cutoff - 1);
    let idx: Vec<usize> = (0..space.dim())
        .filter(|&i| {
            let l = space.levels(i);
            l[0] <= levels.0 && l[1] <= levels.1
        })
        .collect();
    let block = CMatrix::from_fn(idx.len(), idx.len(), |i, j| comm.matrix()[(idx[i], idx[j])]);
    let commutator_norm = linalg::op_norm(&block);

    let sys = FockSpace::single(system_cutoff)?;
    let vacuum_aux = {
        let mut p = CMatrix::zeros(aux_cutoff + 1, aux_cutoff + 1);
        p[(0, 0)] = c(1.0, 0.0);
        p
    };
    let tests: Vec<(CMatrix, f64)> = [0.0, 1.0]
        .iter()
        .map(|&n| {
            let rho = fock::thermal_state(&linalg::real_diag(&[n]), &sys)?.value;
            Ok((rho.into_matrix().kronecker(&vacuum_aux), n))
        })
        .collect::<Result<_>>()?;

    let grid = make_grid(1, 3.0, 0.5)?;
    let mut eigen_residual = 0.0f64;
    let mut husimi_error = 0.0f64;
    for node in grid.nodes() {
        let b = node[0];
        let psi = extended_eigenvector(b, system_cutoff, aux_cutoff);
        let diff = alpha.matrix() * &psi - &psi * b;
        // the system's top level misses a|c+1⟩ and is excluded
        let res = idx.iter().map(|&i| diff[i].norm_sqr()).sum::<f64>().sqrt() / psi.norm();
        eigen_residual = eigen_residual.max(res);
        for (rho, n) in &tests {
            let density = linalg::quad_form(&psi, rho, &psi).re;
            let exact = (-b.norm_sqr() / (n + 1.0)).exp() / (n + 1.0);
            husimi_error = husimi_error.max((density - exact).abs());
        }
    }
    Ok(ExtendedReport {
        reliable_levels: levels,
        commutator_norm,
        eigen_residual,
        husimi_error,
    })
}
