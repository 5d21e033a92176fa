//! Truncated Fock-space numerics.
//!
//! Each mode `j` is truncated to photon numbers `0..=c_j`. Multimode objects are
//! dense tensor products with mode 0 as the most significant index. Every
//! constructor that truncates an infinite-dimensional object reports the
//! probability mass it lost (`1 - norm²` or `1 - trace`) instead of
//! renormalizing.
//!
//! Matrix entries are exact restrictions of the infinite-dimensional objects:
//! displaced states are built from displacement columns computed with a
//! recurrence that only ever reads lower photon numbers, so no truncation error
//! leaks downward into the kept block.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grid::ComplexGrid;
use crate::linalg::{self, c, CMatrix, CVector, C64};

/// Thermal weights below this fraction of the total are dropped from the
/// internal sum over photon numbers when building displaced states.
const THERMAL_TAIL: f64 = 1e-17;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FockSpace {
    cutoffs: Vec<usize>,
}

impl FockSpace {
    pub fn new(cutoffs: Vec<usize>) -> Result<Self> {
        if cutoffs.is_empty() {
            return Err(Error::InvalidSpace("at least one mode is required".into()));
        }
        if let Some(&bad) = cutoffs.iter().find(|&&c| c < 1) {
            return Err(Error::InvalidSpace(format!("cutoff {bad} < 1")));
        }
        Ok(Self { cutoffs })
    }

    pub fn single(cutoff: usize) -> Result<Self> {
        Self::new(vec![cutoff])
    }

    pub fn uniform(modes: usize, cutoff: usize) -> Result<Self> {
        Self::new(vec![cutoff; modes])
    }

    /// Default per-mode cutoff `max(20, ⌈(|θ|max + 4√(n+1))²⌉)`, which keeps the
    /// Poisson and geometric tails of displaced thermal states below ~1e-8.
    pub fn default_cutoff(theta_max: f64, n: f64) -> usize {
        let edge = theta_max.abs() + 4.0 * (n.max(0.0) + 1.0).sqrt();
        20usize.max((edge * edge).ceil() as usize)
    }

    pub fn modes(&self) -> usize {
        self.cutoffs.len()
    }

    pub fn cutoffs(&self) -> &[usize] {
        &self.cutoffs
    }

    pub fn mode_dim(&self, mode: usize) -> usize {
        self.cutoffs[mode] + 1
    }

    pub fn dim(&self) -> usize {
        self.cutoffs.iter().map(|c| c + 1).product()
    }

    /// Flat index of a multi-index of photon numbers.
    pub fn index(&self, levels: &[usize]) -> usize {
        levels
            .iter()
            .zip(&self.cutoffs)
            .fold(0, |acc, (&l, &c)| acc * (c + 1) + l)
    }

    /// Photon numbers of a flat index.
    pub fn levels(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.modes()];
        for (j, &c) in self.cutoffs.iter().enumerate().rev() {
            out[j] = index % (c + 1);
            index /= c + 1;
        }
        out
    }

    /// Flat indices whose photon numbers are all `<= max_level`.
    pub fn indices_up_to(&self, max_level: usize) -> Vec<usize> {
        (0..self.dim())
            .filter(|&i| self.levels(i).iter().all(|&l| l <= max_level))
            .collect()
    }

    pub(crate) fn check_len(&self, len: usize) -> Result<()> {
        if len != self.modes() {
            return Err(Error::DimensionMismatch {
                expected: self.modes(),
                found: len,
            });
        }
        Ok(())
    }
}

/// A truncated object together with the probability mass lost to truncation.
#[derive(Debug, Clone)]
pub struct Truncated<T> {
    pub value: T,
    pub leakage: f64,
}

impl<T> Truncated<T> {
    pub fn into_inner(self) -> T {
        self.value
    }
}

#[derive(Debug, Clone)]
pub struct FockVector {
    space: FockSpace,
    data: CVector,
}

impl FockVector {
    pub fn new(space: FockSpace, data: CVector) -> Result<Self> {
        if data.len() != space.dim() {
            return Err(Error::DimensionMismatch {
                expected: space.dim(),
                found: data.len(),
            });
        }
        Ok(Self { space, data })
    }

    pub fn space(&self) -> &FockSpace {
        &self.space
    }

    pub fn data(&self) -> &CVector {
        &self.data
    }

    pub fn norm_squared(&self) -> f64 {
        self.data.norm_squared()
    }

    /// ⟨self|other⟩
    pub fn inner(&self, other: &FockVector) -> Result<C64> {
        if self.space != other.space {
            return Err(Error::SpaceMismatch);
        }
        Ok(self.data.dotc(&other.data))
    }
}

#[derive(Debug, Clone)]
pub struct TruncatedOperator {
    space: FockSpace,
    data: CMatrix,
}

impl TruncatedOperator {
    pub fn new(space: FockSpace, data: CMatrix) -> Result<Self> {
        let d = space.dim();
        if data.nrows() != d || data.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: data.nrows(),
            });
        }
        Ok(Self { space, data })
    }

    pub fn zeros(space: &FockSpace) -> Self {
        let d = space.dim();
        Self {
            space: space.clone(),
            data: CMatrix::zeros(d, d),
        }
    }

    pub fn identity(space: &FockSpace) -> Self {
        Self {
            space: space.clone(),
            data: linalg::identity(space.dim()),
        }
    }

    pub fn space(&self) -> &FockSpace {
        &self.space
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.data
    }

    pub fn into_matrix(self) -> CMatrix {
        self.data
    }

    pub fn trace(&self) -> C64 {
        linalg::trace(&self.data)
    }

    pub fn adjoint(&self) -> Self {
        Self {
            space: self.space.clone(),
            data: self.data.adjoint(),
        }
    }

    pub fn hermitian_residual(&self) -> f64 {
        linalg::hermitian_asymmetry(&self.data)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        linalg::hermitian_eigenvalues(&self.data)
            .into_iter()
            .fold(f64::INFINITY, f64::min)
    }

    /// ⟨v|self|v⟩
    pub fn expectation(&self, v: &FockVector) -> Result<C64> {
        if self.space != v.space {
            return Err(Error::SpaceMismatch);
        }
        Ok(linalg::quad_form(&v.data, &self.data, &v.data))
    }

    pub fn apply(&self, v: &FockVector) -> Result<FockVector> {
        if self.space != v.space {
            return Err(Error::SpaceMismatch);
        }
        Ok(FockVector {
            space: self.space.clone(),
            data: &self.data * &v.data,
        })
    }

    pub fn mul(&self, other: &TruncatedOperator) -> Result<TruncatedOperator> {
        if self.space != other.space {
            return Err(Error::SpaceMismatch);
        }
        Ok(Self {
            space: self.space.clone(),
            data: &self.data * &other.data,
        })
    }

    /// [self, other]
    pub fn commutator(&self, other: &TruncatedOperator) -> Result<TruncatedOperator> {
        if self.space != other.space {
            return Err(Error::SpaceMismatch);
        }
        let data = &self.data * &other.data - &other.data * &self.data;
        Ok(Self {
            space: self.space.clone(),
            data,
        })
    }

    /// Principal block on the flat indices whose per-mode photon numbers are all
    /// `<= max_level`.
    pub fn block_up_to(&self, max_level: usize) -> CMatrix {
        let idx = self.space.indices_up_to(max_level);
        CMatrix::from_fn(idx.len(), idx.len(), |i, j| self.data[(idx[i], idx[j])])
    }
}

/// Single-mode coherent amplitudes e^{-|α|²/2} αⁿ/√(n!) for n = 0..=cutoff.
pub fn coherent_amplitudes(alpha: C64, cutoff: usize) -> Vec<C64> {
    let mut out = Vec::with_capacity(cutoff + 1);
    let mut cur = c((-0.5 * alpha.norm_sqr()).exp(), 0.0);
    out.push(cur);
    for n in 1..=cutoff {
        cur = cur * alpha / (n as f64).sqrt();
        out.push(cur);
    }
    out
}

pub(crate) fn kron_vectors(parts: Vec<Vec<C64>>) -> CVector {
    let mut acc = vec![c(1.0, 0.0)];
    for part in parts {
        let mut next = Vec::with_capacity(acc.len() * part.len());
        for a in &acc {
            for p in &part {
                next.push(a * p);
            }
        }
        acc = next;
    }
    CVector::from_vec(acc)
}

fn kron_matrices(parts: Vec<CMatrix>) -> CMatrix {
    let mut iter = parts.into_iter();
    let first = iter.next().expect("at least one mode");
    iter.fold(first, |acc, m| acc.kronecker(&m))
}

/// Truncated coherent amplitudes without leakage bookkeeping.
pub(crate) fn coherent_data(alpha: &[C64], space: &FockSpace) -> CVector {
    let parts = alpha
        .iter()
        .zip(space.cutoffs())
        .map(|(&a, &cut)| coherent_amplitudes(a, cut))
        .collect();
    kron_vectors(parts)
}

/// Coherent vector |α⟩ = exp{-α†α/2 + a†α}|0⟩ truncated to `space`.
pub fn coherent_vector(alpha: &[C64], space: &FockSpace) -> Result<Truncated<FockVector>> {
    space.check_len(alpha.len())?;
    let data = coherent_data(alpha, space);
    let leakage = (1.0 - data.norm_squared()).max(0.0);
    if leakage > 1e-6 {
        log::warn!("coherent vector truncated with leakage {leakage:.2e}; raise the cutoff");
    }
    Ok(Truncated {
        value: FockVector {
            space: space.clone(),
            data,
        },
        leakage,
    })
}

/// Closed-form overlap ⟨β|α⟩ = exp{β†α - (α†α + β†β)/2}.
pub fn overlap(beta: &[C64], alpha: &[C64]) -> Result<C64> {
    if beta.len() != alpha.len() {
        return Err(Error::DimensionMismatch {
            expected: beta.len(),
            found: alpha.len(),
        });
    }
    let mut exponent = c(0.0, 0.0);
    for (b, a) in beta.iter().zip(alpha) {
        exponent += b.conj() * a - 0.5 * (a.norm_sqr() + b.norm_sqr());
    }
    Ok(exponent.exp())
}

/// Eigenmode description of a noise covariance N = U diag(n) U†.
///
/// Diagonal N keeps the original mode order (U = 1); otherwise the modes are
/// rotated to the eigenbasis and all Fock-level objects built from N live in
/// that rotated basis. Use [`NoiseModes::to_eigenmodes`] to map amplitudes.
#[derive(Debug, Clone)]
pub struct NoiseModes {
    pub occupations: Vec<f64>,
    pub rotation: CMatrix,
}

impl NoiseModes {
    pub fn new(noise: &CMatrix) -> Result<Self> {
        let ev = linalg::check_hermitian_psd(noise)?;
        if linalg::is_diagonal(noise, 1e-14) {
            let occupations = (0..noise.nrows()).map(|i| noise[(i, i)].re.max(0.0)).collect();
            return Ok(Self {
                occupations,
                rotation: linalg::identity(noise.nrows()),
            });
        }
        let (_, vecs) = linalg::hermitian_eigen(noise);
        Ok(Self {
            occupations: ev.into_iter().map(|v| v.max(0.0)).collect(),
            rotation: vecs,
        })
    }

    /// U† α: amplitudes expressed in the eigenmodes of N.
    pub fn to_eigenmodes(&self, alpha: &[C64]) -> Vec<C64> {
        let v = linalg::to_cvector(alpha);
        (self.rotation.adjoint() * v).iter().copied().collect()
    }
}

/// Geometric photon-number distribution nᵏ/(n+1)^{k+1}, k = 0..len.
pub fn thermal_weights(n: f64, len: usize) -> Vec<f64> {
    if n <= 0.0 {
        let mut w = vec![0.0; len];
        if len > 0 {
            w[0] = 1.0;
        }
        return w;
    }
    let q = n / (n + 1.0);
    let mut cur = 1.0 / (n + 1.0);
    (0..len)
        .map(|_| {
            let v = cur;
            cur *= q;
            v
        })
        .collect()
}

/// Number of thermal weights needed before the remaining tail is negligible.
fn thermal_support(n: f64) -> usize {
    if n <= 0.0 {
        return 1;
    }
    let q = n / (n + 1.0);
    (THERMAL_TAIL.ln() / q.ln()).ceil() as usize + 1
}

/// Columns 0..cols of the displacement operator D(α), restricted to rows
/// 0..rows, from the closed form
/// ⟨m|D(α)|n⟩ = √(n!/m!) α^{m-n} e^{-|α|²/2} L_n^{(m-n)}(|α|²) for m ≥ n
/// (and the adjoint relation for m < n). The Laguerre values come from the
/// three-term recurrence in n and are combined with the prefactor in logs.
pub fn displacement_columns(alpha: C64, rows: usize, cols: usize) -> CMatrix {
    let mut d = CMatrix::zeros(rows, cols);
    if rows == 0 || cols == 0 {
        return d;
    }
    let x = alpha.norm_sqr();
    let ln_abs = alpha.norm().ln();
    let unit = if alpha.norm() > 0.0 {
        alpha / alpha.norm()
    } else {
        c(1.0, 0.0)
    };
    let top = rows.max(cols);
    let mut ln_fact = vec![0.0f64; top + 1];
    for j in 1..=top {
        ln_fact[j] = ln_fact[j - 1] + (j as f64).ln();
    }
    // lower part (m ≥ n, k = m - n) uses α; upper part (n > m) uses -α*
    for (lower, order_max) in [(true, rows), (false, cols)] {
        let first = if lower { 0 } else { 1 };
        for k in first..order_max {
            let len = if lower { cols.min(rows - k) } else { rows.min(cols - k) };
            if len == 0 {
                continue;
            }
            let phase = if lower {
                unit.powu(k as u32)
            } else {
                (-unit.conj()).powu(k as u32)
            };
            let kf = k as f64;
            let (mut prev, mut cur) = (0.0f64, 1.0f64);
            for j in 0..len {
                if j > 0 {
                    let jf = (j - 1) as f64;
                    let next = ((2.0 * jf + 1.0 + kf - x) * cur - (jf + kf) * prev) / (jf + 1.0);
                    prev = cur;
                    cur = next;
                }
                let value = if cur == 0.0 {
                    0.0
                } else if x == 0.0 {
                    if k == 0 {
                        cur
                    } else {
                        0.0
                    }
                } else {
                    let ln_mag = cur.abs().ln() + 0.5 * (ln_fact[j] - ln_fact[j + k]) + kf * ln_abs - 0.5 * x;
                    cur.signum() * ln_mag.exp()
                };
                let (m, n) = if lower { (j + k, j) } else { (j, j + k) };
                d[(m, n)] = phase * value;
            }
        }
    }
    d
}

/// Single-mode D(θ) ρ_n D(θ)† on photon numbers 0..=cutoff, with its leakage.
pub fn displaced_thermal_mode(theta: C64, n: f64, cutoff: usize) -> (CMatrix, f64) {
    let rows = cutoff + 1;
    let cols = thermal_support(n).max(rows);
    let weights = thermal_weights(n, cols);
    let keep = weights.iter().rposition(|&w| w > 0.0).map_or(1, |i| i + 1);
    let d = displacement_columns(theta, rows, keep);
    let mut scaled = d.clone();
    for (k, w) in weights.iter().take(keep).enumerate() {
        scaled.column_mut(k).scale_mut(*w);
    }
    let rho = scaled * d.adjoint();
    let rho = linalg::hermitian_part(&rho);
    let leakage = (1.0 - linalg::trace(&rho).re).max(0.0);
    (rho, leakage)
}

fn check_noise(noise: &CMatrix, space: &FockSpace) -> Result<NoiseModes> {
    if noise.nrows() != space.modes() {
        return Err(Error::DimensionMismatch {
            expected: space.modes(),
            found: noise.nrows(),
        });
    }
    NoiseModes::new(noise)
}

/// Thermal state with noise covariance N in the Glauber P-representation,
/// built as the tensor product over eigenmodes of diag(nᵏ/(n+1)^{k+1}).
pub fn thermal_state(noise: &CMatrix, space: &FockSpace) -> Result<Truncated<TruncatedOperator>> {
    displaced_thermal(&vec![c(0.0, 0.0); space.modes()], noise, space)
}

/// ρ(ϑ) = D(ϑ) ρ_N D(ϑ)†, expressed in the eigenmodes of N.
pub fn displaced_thermal(theta: &[C64], noise: &CMatrix, space: &FockSpace) -> Result<Truncated<TruncatedOperator>> {
    let t = displaced_thermal_quiet(theta, noise, space)?;
    if t.leakage > 1e-6 {
        log::warn!("displaced thermal state truncated with leakage {:.2e}", t.leakage);
    }
    Ok(t)
}

/// [`displaced_thermal`] without the leakage warning, for callers that
/// aggregate leakage themselves.
pub(crate) fn displaced_thermal_quiet(
    theta: &[C64],
    noise: &CMatrix,
    space: &FockSpace,
) -> Result<Truncated<TruncatedOperator>> {
    space.check_len(theta.len())?;
    let modes = check_noise(noise, space)?;
    let theta = modes.to_eigenmodes(theta);
    let mut parts = Vec::with_capacity(space.modes());
    let mut kept = 1.0;
    for ((&t, &n), &cut) in theta.iter().zip(&modes.occupations).zip(space.cutoffs()) {
        let (rho, leak) = displaced_thermal_mode(t, n, cut);
        kept *= 1.0 - leak;
        parts.push(rho);
    }
    let leakage = (1.0 - kept).max(0.0);
    let value = TruncatedOperator {
        space: space.clone(),
        data: kron_matrices(parts),
    };
    Ok(Truncated { value, leakage })
}

/// The same state from the P-representation ∫|α⟩⟨α| p(α|ϑ) dμ(α), evaluated by
/// lattice quadrature over `grid`. Needs N positive definite.
pub fn displaced_thermal_quadrature(
    theta: &[C64],
    noise: &CMatrix,
    space: &FockSpace,
    grid: &ComplexGrid,
) -> Result<TruncatedOperator> {
    space.check_len(theta.len())?;
    if grid.modes() != space.modes() {
        return Err(Error::DimensionMismatch {
            expected: space.modes(),
            found: grid.modes(),
        });
    }
    linalg::check_hermitian_psd(noise)?;
    let inv = linalg::inverse(noise).map_err(|_| Error::UnsupportedNoise)?;
    let det = linalg::det_hermitian(noise);
    if det <= 0.0 {
        return Err(Error::UnsupportedNoise);
    }
    let theta_v = linalg::to_cvector(theta);
    let dim = space.dim();
    let mut acc = CMatrix::zeros(dim, dim);
    let mut node = vec![c(0.0, 0.0); space.modes()];
    for k in 0..grid.len() {
        grid.node_into(k, &mut node);
        let diff = linalg::to_cvector(&node) - &theta_v;
        let density = (-linalg::quad_form(&diff, &inv, &diff).re).exp() / det;
        let weight = density * grid.weight();
        if weight < 1e-300 {
            continue;
        }
        let v = coherent_vector(&node, space)?.value;
        acc.gerc(c(weight, 0.0), &v.data, &v.data, c(1.0, 0.0));
    }
    Ok(TruncatedOperator {
        space: space.clone(),
        data: acc,
    })
}

/// Single-mode ladder matrix with ⟨n|a|n+1⟩ = √(n+1).
pub fn ladder(cutoff: usize) -> CMatrix {
    let d = cutoff + 1;
    DMatrix::from_fn(d, d, |i, j| {
        if j == i + 1 {
            c((j as f64).sqrt(), 0.0)
        } else {
            c(0.0, 0.0)
        }
    })
}

/// Embeds a single-mode operator acting on `mode` into the full space.
pub fn embed(single: &CMatrix, mode: usize, space: &FockSpace) -> Result<TruncatedOperator> {
    if mode >= space.modes() {
        return Err(Error::InvalidMode {
            mode,
            modes: space.modes(),
        });
    }
    if single.nrows() != space.mode_dim(mode) {
        return Err(Error::DimensionMismatch {
            expected: space.mode_dim(mode),
            found: single.nrows(),
        });
    }
    let parts = (0..space.modes())
        .map(|j| {
            if j == mode {
                single.clone()
            } else {
                linalg::identity(space.mode_dim(j))
            }
        })
        .collect();
    Ok(TruncatedOperator {
        space: space.clone(),
        data: kron_matrices(parts),
    })
}

/// Annihilation operator a_j. The commutator [a, a†] equals the identity on all
/// Fock levels below the cutoff and -c on the top level.
pub fn annihilation(mode: usize, space: &FockSpace) -> Result<TruncatedOperator> {
    if mode >= space.modes() {
        return Err(Error::InvalidMode {
            mode,
            modes: space.modes(),
        });
    }
    embed(&ladder(space.cutoffs()[mode]), mode, space)
}

pub fn creation(mode: usize, space: &FockSpace) -> Result<TruncatedOperator> {
    Ok(annihilation(mode, space)?.adjoint())
}

pub fn number_operator(mode: usize, space: &FockSpace) -> Result<TruncatedOperator> {
    let a = annihilation(mode, space)?;
    a.adjoint().mul(&a)
}

/// Husimi value ⟨β|ρ|β⟩ with β given in the basis `rho` is expressed in.
pub fn husimi(rho: &TruncatedOperator, beta: &[C64]) -> Result<f64> {
    let v = coherent_vector(beta, rho.space())?.value;
    Ok(rho.expectation(&v)?.re)
}
