//! Grid-discretized quasi-measurements: coherent-state POVMs, their
//! completeness and first-moment residuals, and outcome distributions.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fock::{self, FockSpace, FockVector, TruncatedOperator};
use crate::grid::ComplexGrid;
use crate::linalg::{self, c, CMatrix, CVector, C64};

/// A level counts as reliable while the Husimi mass of |m⟩ outside the grid
/// radius stays below this.
pub const RELIABLE_TAIL: f64 = 1e-6;

/// Upper bound on stored complex entries (nodes × Fock dimension).
pub const ENTRY_BUDGET: usize = 40_000_000;

/// Effects tolerate eigenvalues down to this before being rejected.
const EFFECT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PovmKind {
    /// Rank-one effects φ_k φ_k†.
    Elementary,
    General,
}

/// Decoding family attached to each grid node β.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Family {
    /// |β⟩
    Coherent,
    /// D(β) S(r)|0⟩ with quadrature standard deviations in the ratio
    /// `ratio : 1/ratio`.
    Squeezed { ratio: f64 },
    /// |β + δ⟩ on every mode.
    Offset(C64),
    /// |κ β⟩
    Rescaled(f64),
}

#[derive(Debug, Clone)]
enum Effects {
    /// Column k is φ_k.
    Vectors(CMatrix),
    Operators(Vec<CMatrix>),
}

#[derive(Debug, Clone)]
pub struct DiscretePOVM {
    grid: ComplexGrid,
    space: FockSpace,
    effects: Effects,
}

fn check_budget(grid: &ComplexGrid, space: &FockSpace) -> Result<()> {
    let entries = grid.len().saturating_mul(space.dim());
    if entries > ENTRY_BUDGET {
        return Err(Error::BudgetExceeded {
            nodes: entries,
            budget: ENTRY_BUDGET,
        });
    }
    Ok(())
}

impl DiscretePOVM {
    /// Elementary POVM from decoding vectors, one column per grid node.
    pub fn elementary(grid: ComplexGrid, space: FockSpace, vectors: CMatrix) -> Result<Self> {
        if vectors.nrows() != space.dim() {
            return Err(Error::DimensionMismatch {
                expected: space.dim(),
                found: vectors.nrows(),
            });
        }
        if vectors.ncols() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                found: vectors.ncols(),
            });
        }
        Ok(Self {
            grid,
            space,
            effects: Effects::Vectors(vectors),
        })
    }

    /// General POVM from one effect per node. Each effect must be PSD.
    pub fn general(grid: ComplexGrid, space: FockSpace, effects: Vec<CMatrix>) -> Result<Self> {
        if effects.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                found: effects.len(),
            });
        }
        for e in &effects {
            if e.nrows() != space.dim() || e.ncols() != space.dim() {
                return Err(Error::DimensionMismatch {
                    expected: space.dim(),
                    found: e.nrows(),
                });
            }
            let asym = linalg::hermitian_asymmetry(e);
            if asym > linalg::HERMITIAN_TOL * (1.0 + e.norm()) {
                return Err(Error::NotHermitian { asymmetry: asym });
            }
            let min = linalg::hermitian_eigenvalues(e)
                .into_iter()
                .fold(f64::INFINITY, f64::min);
            if min < -EFFECT_TOL {
                return Err(Error::NotPositive { eigenvalue: min });
            }
        }
        Ok(Self {
            grid,
            space,
            effects: Effects::Operators(effects),
        })
    }

    pub fn kind(&self) -> PovmKind {
        match self.effects {
            Effects::Vectors(_) => PovmKind::Elementary,
            Effects::Operators(_) => PovmKind::General,
        }
    }

    pub fn grid(&self) -> &ComplexGrid {
        &self.grid
    }

    pub fn space(&self) -> &FockSpace {
        &self.space
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Decoding vectors as columns, for elementary POVMs.
    pub fn vectors(&self) -> Option<&CMatrix> {
        match &self.effects {
            Effects::Vectors(v) => Some(v),
            Effects::Operators(_) => None,
        }
    }

    pub fn vector(&self, k: usize) -> Option<FockVector> {
        self.vectors()
            .map(|v| FockVector::new(self.space.clone(), v.column(k).into_owned()).expect("sized at construction"))
    }

    /// Effect E_k (without the quadrature weight).
    pub fn effect(&self, k: usize) -> CMatrix {
        match &self.effects {
            Effects::Vectors(v) => {
                let col = v.column(k);
                col * col.adjoint()
            }
            Effects::Operators(e) => e[k].clone(),
        }
    }

    /// Smallest eigenvalue over all effects.
    pub fn min_effect_eigenvalue(&self) -> f64 {
        match &self.effects {
            // rank-one effects have spectrum {‖φ‖², 0, ...}
            Effects::Vectors(_) => 0.0,
            Effects::Operators(e) => e
                .iter()
                .map(|m| {
                    linalg::hermitian_eigenvalues(m)
                        .into_iter()
                        .fold(f64::INFINITY, f64::min)
                })
                .fold(f64::INFINITY, f64::min),
        }
    }

    /// Σ_k f_k E_k w_k.
    fn weighted_sum(&self, f: impl Fn(usize) -> C64) -> CMatrix {
        let w = self.grid.weight();
        match &self.effects {
            Effects::Vectors(v) => {
                let mut scaled = v.clone();
                for k in 0..v.ncols() {
                    scaled.column_mut(k).scale_mut(w);
                    let fk = f(k);
                    scaled.column_mut(k).iter_mut().for_each(|x| *x *= fk);
                }
                scaled * v.adjoint()
            }
            Effects::Operators(e) => {
                let dim = self.space.dim();
                let mut acc = CMatrix::zeros(dim, dim);
                for (k, m) in e.iter().enumerate() {
                    acc += m * (f(k) * w);
                }
                acc
            }
        }
    }

    /// Σ_k E_k w_k, which approximates the identity.
    pub fn effect_sum(&self) -> TruncatedOperator {
        let m = self.weighted_sum(|_| c(1.0, 0.0));
        TruncatedOperator::new(self.space.clone(), m).expect("sized by space")
    }

    /// Σ_k β_{k,j} E_k w_k, which approximates the annihilation operator a_j.
    pub fn first_moment(&self, mode: usize) -> Result<TruncatedOperator> {
        if mode >= self.space.modes() {
            return Err(Error::InvalidMode {
                mode,
                modes: self.space.modes(),
            });
        }
        let j = mode;
        let lattice = self.grid.mode(j);
        let m = self.weighted_sum(|k| lattice.points()[self.grid.mode_index(k, j)]);
        TruncatedOperator::new(self.space.clone(), m)
    }
}

/// Single-mode decoding vector of `family` at β on levels 0..=cutoff.
fn family_amplitudes(family: &Family, beta: C64, cutoff: usize) -> Vec<C64> {
    match *family {
        Family::Coherent => fock::coherent_amplitudes(beta, cutoff),
        Family::Offset(d) => fock::coherent_amplitudes(beta + d, cutoff),
        Family::Rescaled(k) => fock::coherent_amplitudes(beta * k, cutoff),
        Family::Squeezed { ratio } => {
            let seed = squeezed_vacuum(ratio.ln(), cutoff.max(80));
            let d = fock::displacement_columns(beta, cutoff + 1, seed.len());
            (d * CVector::from_vec(seed)).iter().copied().collect()
        }
    }
}

/// S(r)|0⟩ with S(r) = exp{r(a² - a†²)/2}, on levels 0..=cutoff:
/// (cosh r)^{-1/2} Σ (-tanh r)^m √((2m)!)/(2^m m!) |2m⟩.
pub fn squeezed_vacuum(r: f64, cutoff: usize) -> Vec<C64> {
    let mut out = vec![c(0.0, 0.0); cutoff + 1];
    let t = -r.tanh();
    let mut amp = 1.0 / r.cosh().sqrt();
    let mut m = 0usize;
    while 2 * m <= cutoff {
        out[2 * m] = c(amp, 0.0);
        m += 1;
        amp *= t * ((2 * m - 1) as f64 / (2 * m) as f64).sqrt();
    }
    out
}

/// Elementary POVM of `family` on every grid node.
pub fn family_povm(grid: &ComplexGrid, space: &FockSpace, family: &Family) -> Result<DiscretePOVM> {
    if grid.modes() != space.modes() {
        return Err(Error::DimensionMismatch {
            expected: space.modes(),
            found: grid.modes(),
        });
    }
    if let Family::Squeezed { ratio } = family {
        if !(*ratio > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "squeeze ratio {ratio} must be positive"
            )));
        }
    }
    check_budget(grid, space)?;
    let dim = space.dim();
    let columns: Vec<CVector> = (0..grid.len())
        .into_par_iter()
        .map(|k| {
            let node = grid.node(k);
            let parts = node
                .iter()
                .zip(space.cutoffs())
                .map(|(&b, &cut)| family_amplitudes(family, b, cut))
                .collect();
            fock::kron_vectors(parts)
        })
        .collect();
    let mut vectors = CMatrix::zeros(dim, grid.len());
    for (k, col) in columns.into_iter().enumerate() {
        vectors.set_column(k, &col);
    }
    DiscretePOVM::elementary(grid.clone(), space.clone(), vectors)
}

/// Elementary POVM with vectors |β_k⟩.
pub fn coherent_povm(grid: &ComplexGrid, space: &FockSpace) -> Result<DiscretePOVM> {
    family_povm(grid, space, &Family::Coherent)
}

/// P(Poisson(x) ≤ m), the Husimi mass of |m⟩ outside radius √x.
fn poisson_cdf(x: f64, m: usize) -> f64 {
    let mut term = (-x).exp();
    let mut total = term;
    for k in 1..=m {
        term *= x / k as f64;
        total += term;
    }
    total
}

/// Highest reliable level per mode: the Husimi mass of |m⟩ beyond the grid
/// radius is below [`RELIABLE_TAIL`], capped at the cutoff.
pub fn reliable_levels(grid: &ComplexGrid, space: &FockSpace) -> Vec<usize> {
    (0..grid.modes())
        .map(|j| {
            let r2 = grid.mode(j).radius().powi(2);
            let mut m = 0;
            while m < space.cutoffs()[j] && poisson_cdf(r2, m + 1) < RELIABLE_TAIL {
                m += 1;
            }
            m
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct CompletenessReport {
    /// Highest level per mode included in the checked block.
    pub max_levels: Vec<usize>,
    /// ‖Σ E_k w_k - 1‖ in operator norm on the block.
    pub completeness: f64,
    /// ‖Σ β_j E_k w_k - a_j‖ in operator norm on the block, per mode.
    pub first_moment: Vec<f64>,
    /// Per basis state of the block: photon numbers and the Euclidean norm of
    /// its row of the completeness residual.
    pub per_level: Vec<(Vec<usize>, f64)>,
}

impl CompletenessReport {
    pub fn worst_first_moment(&self) -> f64 {
        self.first_moment.iter().copied().fold(0.0, f64::max)
    }
}

/// Completeness and first-moment residuals on the reliable subspace.
pub fn completeness_report(povm: &DiscretePOVM) -> Result<CompletenessReport> {
    let levels = reliable_levels(povm.grid(), povm.space());
    completeness_report_on(povm, &levels)
}

/// Completeness and first-moment residuals on the block of photon numbers
/// `<= max_levels[j]` in every mode j.
pub fn completeness_report_on(povm: &DiscretePOVM, max_levels: &[usize]) -> Result<CompletenessReport> {
    let space = povm.space();
    if max_levels.len() != space.modes() {
        return Err(Error::DimensionMismatch {
            expected: space.modes(),
            found: max_levels.len(),
        });
    }
    if max_levels.iter().zip(space.cutoffs()).any(|(m, c)| m > c) {
        return Err(Error::InvalidArgument("block exceeds the Fock cutoff".into()));
    }
    let idx: Vec<usize> = (0..space.dim())
        .filter(|&i| space.levels(i).iter().zip(max_levels).all(|(l, m)| l <= m))
        .collect();
    let block = |m: &CMatrix| CMatrix::from_fn(idx.len(), idx.len(), |i, j| m[(idx[i], idx[j])]);

    let residual = block(povm.effect_sum().matrix()) - linalg::identity(idx.len());
    let per_level = idx
        .iter()
        .enumerate()
        .map(|(i, &flat)| (space.levels(flat), residual.row(i).norm()))
        .collect();
    let mut first_moment = Vec::with_capacity(space.modes());
    for j in 0..space.modes() {
        let a = fock::annihilation(j, space)?;
        let diff = block(povm.first_moment(j)?.matrix()) - block(a.matrix());
        first_moment.push(linalg::op_norm(&diff));
    }
    Ok(CompletenessReport {
        max_levels: max_levels.to_vec(),
        completeness: linalg::op_norm(&residual),
        first_moment,
        per_level,
    })
}

/// Outcome densities tr(E_k ρ), one per grid node.
pub fn outcome_densities(povm: &DiscretePOVM, rho: &TruncatedOperator) -> Result<Vec<f64>> {
    if rho.space() != povm.space() {
        return Err(Error::SpaceMismatch);
    }
    Ok(match &povm.effects {
        Effects::Vectors(v) => {
            let rv = rho.matrix() * v;
            (0..v.ncols()).map(|k| v.column(k).dotc(&rv.column(k)).re).collect()
        }
        Effects::Operators(e) => e
            .iter()
            .map(|m| (m.component_mul(&rho.matrix().transpose())).sum().re)
            .collect(),
    })
}

/// (node, density) pairs; Σ density·w ≈ 1 up to completeness and leakage.
pub fn outcome_distribution(povm: &DiscretePOVM, rho: &TruncatedOperator) -> Result<Vec<(Vec<C64>, f64)>> {
    let dens = outcome_densities(povm, rho)?;
    Ok(dens
        .into_iter()
        .enumerate()
        .map(|(k, d)| (povm.grid().node(k), d))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;

    #[test]
    fn single_node_is_rank_one() {
        let space = FockSpace::single(10).unwrap();
        let grid = ComplexGrid::point(&[c(0.5, -0.2)]);
        let povm = coherent_povm(&grid, &space).unwrap();
        assert_eq!(povm.len(), 1);
        let e = povm.effect(0);
        let ev = linalg::hermitian_eigenvalues(&e);
        let positive = ev.iter().filter(|&&x| x > 1e-12).count();
        assert_eq!(positive, 1);
        assert!(ev.iter().all(|&x| x > -1e-12));
    }

    #[test]
    fn reliable_levels_for_radius_six() {
        let grid = make_grid(1, 6.0, 0.2).unwrap();
        let space = FockSpace::single(30).unwrap();
        assert_eq!(reliable_levels(&grid, &space), vec![10]);
    }

    #[test]
    fn completeness_and_first_moment() {
        let grid = make_grid(1, 6.0, 0.2).unwrap();
        let space = FockSpace::single(30).unwrap();
        let povm = coherent_povm(&grid, &space).unwrap();
        let rep = completeness_report_on(&povm, &[10]).unwrap();
        assert!(rep.completeness < 1e-3, "{}", rep.completeness);
        assert!(rep.worst_first_moment() < 1e-3, "{:?}", rep.first_moment);
        assert_eq!(rep.per_level.len(), 11);
    }

    #[test]
    fn vacuum_outcome_is_gaussian() {
        let grid = make_grid(1, 3.0, 0.5).unwrap();
        let space = FockSpace::single(30).unwrap();
        let povm = coherent_povm(&grid, &space).unwrap();
        let rho = fock::thermal_state(&linalg::real_diag(&[0.0]), &space).unwrap().value;
        for (node, d) in outcome_distribution(&povm, &rho).unwrap() {
            let e = (-node[0].norm_sqr()).exp();
            assert!((d - e).abs() < 1e-12, "{node:?}: {d} vs {e}");
        }
    }

    #[test]
    fn displaced_thermal_outcome_matches_closed_form() {
        let grid = make_grid(1, 6.0, 0.25).unwrap();
        let space = FockSpace::single(30).unwrap();
        let povm = coherent_povm(&grid, &space).unwrap();
        let rho = fock::displaced_thermal(&[c(1.0, 0.0)], &linalg::real_diag(&[1.0]), &space).unwrap();
        let dens = outcome_densities(&povm, &rho.value).unwrap();
        let mut worst = 0.0f64;
        for (k, d) in dens.iter().enumerate() {
            let b = grid.node(k)[0];
            let e = 0.5 * (-(b - 1.0).norm_sqr() / 2.0).exp();
            worst = worst.max((d - e).abs());
            assert!(*d > -1e-12);
        }
        assert!(worst < 1e-4, "{worst}");
        let total: f64 = dens.iter().sum::<f64>() * grid.weight();
        let rep = completeness_report(&povm).unwrap();
        assert!(
            (total - 1.0).abs() <= 2.0 * (rep.completeness + rho.leakage) + 1e-3,
            "{total}"
        );
    }

    #[test]
    fn squeezed_vacuum_is_normalized_and_imbalanced() {
        let r = 1.5f64.ln();
        let v = squeezed_vacuum(r, 80);
        let norm: f64 = v.iter().map(|x| x.norm_sqr()).sum();
        assert!((norm - 1.0).abs() < 1e-12);
        // ⟨(a + a†)²⟩ = e^{-2r} and ⟨(i(a† - a))²⟩ = e^{2r}
        let space = FockSpace::single(80).unwrap();
        let psi = FockVector::new(space.clone(), CVector::from_vec(v)).unwrap();
        let a = fock::annihilation(0, &space).unwrap();
        let x = a.matrix() + a.matrix().adjoint();
        let p = (a.matrix().adjoint() - a.matrix()) * c(0.0, 1.0);
        let vx = psi.data().dotc(&(&x * &x * psi.data())).re;
        let vp = psi.data().dotc(&(&p * &p * psi.data())).re;
        assert!((vx - 1.0 / 2.25).abs() < 1e-10, "{vx}");
        assert!((vp - 2.25).abs() < 1e-10, "{vp}");
    }

    #[test]
    fn general_effects_validated() {
        let space = FockSpace::single(2).unwrap();
        let grid = ComplexGrid::point(&[c(0.0, 0.0)]);
        let bad = linalg::real_diag(&[1.0, -0.5, 0.0]);
        assert!(DiscretePOVM::general(grid.clone(), space.clone(), vec![bad]).is_err());
        let good = linalg::real_diag(&[1.0, 0.5, 0.0]);
        let povm = DiscretePOVM::general(grid, space.clone(), vec![good]).unwrap();
        assert_eq!(povm.kind(), PovmKind::General);
        let rho = fock::thermal_state(&linalg::real_diag(&[0.0]), &space).unwrap().value;
        assert!((outcome_densities(&povm, &rho).unwrap()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn space_mismatch_rejected() {
        let grid = make_grid(1, 2.0, 1.0).unwrap();
        let povm = coherent_povm(&grid, &FockSpace::single(5).unwrap()).unwrap();
        let rho = TruncatedOperator::identity(&FockSpace::single(6).unwrap());
        assert!(matches!(outcome_densities(&povm, &rho), Err(Error::SpaceMismatch)));
    }
}
