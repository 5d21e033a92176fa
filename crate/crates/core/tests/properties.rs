use cohdec::fock::{self, FockSpace, FockVector};
use cohdec::gaussian::{self, ChannelModel};
use cohdec::grid::make_grid;
use cohdec::heterodyne::{self, ExperimentConfig};
use cohdec::linalg;
use cohdec::optimality::{self, VariationalProblem};
use cohdec::povm::{self, Family};
use cohdec::rates::{self, homodyne_comparison, SpectralProfile, Units};
use cohdec::{c, CMatrix, CVector, C64};
use proptest::prelude::*;

fn complex(bound: f64) -> impl Strategy<Value = C64> {
    (-bound..bound, -bound..bound).prop_map(|(re, im)| c(re, im))
}

fn complex_vec(r: usize, bound: f64) -> impl Strategy<Value = Vec<C64>> {
    prop::collection::vec(complex(bound), r)
}

/// X X† + shift·I from an r×r matrix of entries in [-1, 1]².
fn psd(r: usize, shift: f64) -> impl Strategy<Value = CMatrix> {
    complex_vec(r * r, 1.0).prop_map(move |v| {
        let x = CMatrix::from_vec(r, r, v);
        linalg::hermitian_part(&(&x * x.adjoint() + linalg::identity(r) * c(shift, 0.0)))
    })
}

/// Positive-definite S with a PSD N on 1..=3 modes.
fn model() -> impl Strategy<Value = ChannelModel> {
    (1usize..=3)
        .prop_flat_map(|r| (psd(r, 0.1), psd(r, 0.0), any::<bool>()))
        .prop_map(|(s, n, zero_noise)| {
            let n = if zero_noise {
                CMatrix::zeros(n.nrows(), n.nrows())
            } else {
                n
            };
            ChannelModel::new(s, n).unwrap()
        })
}

/// Haar-like unitary from the QR factor of a random complex matrix.
fn unitary(r: usize) -> impl Strategy<Value = CMatrix> {
    complex_vec(r * r, 1.0).prop_map(move |v| {
        let m = CMatrix::from_vec(r, r, v) + linalg::identity(r) * c(0.1, 0.0);
        m.qr().q()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn coherent_overlap_consistency(a in complex(1.4), b in complex(1.4), cutoff in 25usize..40) {
        let space = FockSpace::single(cutoff).unwrap();
        let va = fock::coherent_vector(&[a], &space).unwrap().value;
        let vb = fock::coherent_vector(&[b], &space).unwrap().value;
        let truncated = vb.inner(&va).unwrap();
        let exact = fock::overlap(&[b], &[a]).unwrap();
        prop_assert!((truncated - exact).norm() <= 1e-6);
    }

    #[test]
    fn displacement_covariance(theta in complex(1.0), beta in complex(1.0), shift in complex(1.0), n in 0.0..1.0f64) {
        let space = FockSpace::single(60).unwrap();
        let noise = CMatrix::from_element(1, 1, c(n, 0.0));
        let density = |t: C64, b: C64| {
            let rho = fock::displaced_thermal(&[t], &noise, &space).unwrap().value;
            rho.expectation(&fock::coherent_vector(&[b], &space).unwrap().value).unwrap().re
        };
        prop_assert!((density(theta, beta) - density(theta + shift, beta + shift)).abs() <= 1e-8);
    }

    #[test]
    fn trace_preservation(theta in complex(1.5), n in 0.0..1.0f64) {
        let space = FockSpace::single(60).unwrap();
        let noise = CMatrix::from_element(1, 1, c(n, 0.0));
        let tr = |t: C64| fock::displaced_thermal(&[t], &noise, &space).unwrap().value.trace().re;
        prop_assert!((tr(theta) - tr(c(0.0, 0.0))).abs() <= 1e-8);
    }

    #[test]
    fn kernel_is_log_likelihood_ratio(
        (model, beta, theta) in model().prop_flat_map(|m| {
            let r = m.modes();
            (Just(m), complex_vec(r, 2.0), complex_vec(r, 2.0))
        })
    ) {
        let i = gaussian::information_kernel(&beta, &theta, &model).unwrap();
        let llr = gaussian::conditional_density(&beta, &theta, &model).unwrap().ln()
            - gaussian::marginal_density(&beta, &model).unwrap().ln();
        prop_assert!((i - llr).abs() <= 1e-10 * (1.0 + llr.abs()), "{i} vs {llr}");
    }

    #[test]
    fn chain_identity(model in model()) {
        let (a, g) = gaussian::ag_matrices(&model).unwrap();
        let g_inv = linalg::inverse(&g).unwrap();
        prop_assert!(linalg::max_abs(&(&g_inv - &a * model.effective_noise())) <= 1e-10 * linalg::max_abs(&g_inv));
        prop_assert!(gaussian::chain_identity_residual(&model).unwrap() <= 1e-10);
    }

    #[test]
    fn mi_monotone(model in model(), eps in 1e-3..1.0f64) {
        let r = model.modes();
        let bump = linalg::identity(r) * c(eps, 0.0);
        let mi = gaussian::analytic_mi(&model);
        let more_signal = ChannelModel::new(model.signal() + &bump, model.noise().clone()).unwrap();
        let more_noise = ChannelModel::new(model.signal().clone(), model.noise() + &bump).unwrap();
        prop_assert!(gaussian::analytic_mi(&more_signal) >= mi - 1e-12);
        prop_assert!(gaussian::analytic_mi(&more_noise) <= mi + 1e-12);
    }

    #[test]
    fn mi_unitary_invariance(
        (model, u) in model().prop_flat_map(|m| { let r = m.modes(); (Just(m), unitary(r)) })
    ) {
        let rotate = |m: &CMatrix| linalg::hermitian_part(&(&u * m * u.adjoint()));
        let rotated = ChannelModel::new(rotate(model.signal()), rotate(model.noise())).unwrap();
        prop_assert!((gaussian::analytic_mi(&rotated) - gaussian::analytic_mi(&model)).abs() <= 1e-10);
    }

    #[test]
    fn added_noise_cannot_increase_information(
        (model, extra) in model().prop_flat_map(|m| { let r = m.modes(); (Just(m), psd(r, 0.0)) })
    ) {
        // post-processing β by independent Gaussian noise is N -> N + M
        let noisier = ChannelModel::new(model.signal().clone(), model.noise() + extra).unwrap();
        prop_assert!(gaussian::analytic_mi(&noisier) <= gaussian::analytic_mi(&model) + 1e-12);
    }

    #[test]
    fn seed_determinism(seed in any::<u64>(), s in 0.1..4.0f64, n in 0.0..2.0f64) {
        let cfg = ExperimentConfig::new(ChannelModel::scalar(s, n).unwrap(), 5000, seed);
        let a = heterodyne::sample_channel(&cfg).unwrap();
        let b = heterodyne::sample_channel(&cfg).unwrap();
        for i in [0, 4095, 4096, 4999] {
            prop_assert_eq!(a.theta(i), b.theta(i));
            prop_assert_eq!(a.beta(i), b.beta(i));
        }
    }

    #[test]
    fn heterodyne_beats_single_quadrature(s in 1e-6..1e4f64, n in 0.0..1e4f64) {
        let cmp = homodyne_comparison(s, n).unwrap();
        prop_assert!(cmp.heterodyne >= cmp.single_quadrature);
    }

    #[test]
    fn rate_nonincreasing_in_temperature(
        s_nu in prop::collection::vec(0.0..5.0f64, 2..20),
        lo in 0.1..2.0f64,
        theta in 0.05..5.0f64,
        factor in 1.0..10.0f64,
    ) {
        let nu: Vec<f64> = (0..s_nu.len()).map(|k| lo + 0.1 * k as f64).collect();
        let cold = SpectralProfile::new(nu, s_nu, theta, Units::Dimensionless).unwrap();
        let hot = cold.with_theta(theta * factor).unwrap();
        prop_assert!(rates::rate(&hot) <= rates::rate(&cold) + 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn effects_are_positive(ratio in 0.5..2.0f64, offset in complex(0.5), kappa in 0.8..1.2f64) {
        let grid = make_grid(1, 3.0, 0.5).unwrap();
        let space = FockSpace::single(20).unwrap();
        for fam in [Family::Coherent, Family::Squeezed { ratio }, Family::Offset(offset), Family::Rescaled(kappa)] {
            let p = povm::family_povm(&grid, &space, &fam).unwrap();
            prop_assert!(p.min_effect_eigenvalue() >= -1e-12);
        }
    }

    #[test]
    fn completeness_refines_at_coarse_spacing(h in 1.0..1.6f64) {
        let space = FockSpace::single(30).unwrap();
        let residual = |h: f64| {
            let p = povm::coherent_povm(&make_grid(1, 6.0, h).unwrap(), &space).unwrap();
            povm::completeness_report_on(&p, &[10]).unwrap().completeness
        };
        let (coarse, fine) = (residual(h), residual(h / 2.0));
        prop_assert!(fine <= 0.5 * coarse, "{coarse:.3e} -> {fine:.3e}");
    }

    #[test]
    fn outcome_law_matches_closed_form(theta in complex(1.0), n in 0.0..1.0f64) {
        // p(β|ϑ) for the coherent measurement of a displaced thermal state
        let grid = make_grid(1, 1.5, 0.5).unwrap();
        let space = FockSpace::single(50).unwrap();
        let noise = CMatrix::from_element(1, 1, c(n, 0.0));
        let rho = fock::displaced_thermal(&[theta], &noise, &space).unwrap().value;
        let p = povm::coherent_povm(&grid, &space).unwrap();
        let densities = povm::outcome_densities(&p, &rho).unwrap();
        let model = ChannelModel::scalar(1.0, n).unwrap();
        for (k, d) in densities.iter().enumerate() {
            let closed = gaussian::conditional_density(&grid.node(k), &[theta], &model).unwrap();
            prop_assert!((d - closed).abs() <= 1e-8, "{d} vs {closed}");
        }
    }

    #[test]
    fn identity_residual_refines(b in complex(0.5), noisy in any::<bool>()) {
        let model = ChannelModel::scalar(1.0, if noisy { 0.5 } else { 0.0 }).unwrap();
        let lhs = |h: f64| {
            let g = make_grid(1, 6.0, h).unwrap();
            optimality::verify_identity_15(&model, &[b], &g, &g).unwrap().lhs
        };
        let (l16, l08, l04) = (lhs(1.6), lhs(0.8), lhs(0.4));
        prop_assert!(l08 <= 0.5 * l16 && l04 <= 0.5 * l08, "{l16:.2e} {l08:.2e} {l04:.2e}");
    }

    #[test]
    fn quadrature_mi_below_noiseless_channel(s in 0.3..4.0f64, n in 0.0..2.0f64) {
        let model = ChannelModel::scalar(s, n).unwrap();
        let (bg, tg) = optimality::default_mi_grids(&model).unwrap();
        let q = optimality::mutual_information_quadrature(&model, &bg, &tg).unwrap();
        prop_assert!(q <= s.ln_1p() + 1e-3);
        prop_assert!((q - gaussian::analytic_mi(&model)).abs() <= 1e-3);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn coherent_family_beats_perturbations(
        s in 0.5..2.0f64,
        n in 0.0..1.0f64,
        ratio in 1.3..1.7f64,
        delta in 0.2..0.4f64,
        kappa in 1.05..1.15f64,
    ) {
        let model = ChannelModel::scalar(s, n).unwrap();
        let problem = VariationalProblem::with_defaults(&model).unwrap();
        let residual = |fam: Family| {
            optimality::stationarity_residual(&problem, &problem.family_povm(&fam).unwrap()).unwrap()
        };
        let coherent = residual(Family::Coherent);
        prop_assert!(coherent.aggregate <= 1e-2);
        prop_assert!((coherent.lagrange_trace - gaussian::analytic_mi(&model)).abs() <= 1e-2);
        for fam in [Family::Squeezed { ratio }, Family::Offset(c(delta, 0.0)), Family::Rescaled(kappa)] {
            prop_assert!(residual(fam).aggregate > coherent.aggregate, "{fam:?}");
        }
    }
}

#[test]
fn two_mode_information_operator_is_hermitian() {
    let model = ChannelModel::diagonal(&[0.5, 0.5], &[0.0, 0.2]).unwrap();
    let theta = make_grid(2, 2.5, 0.5).unwrap();
    let beta = make_grid(2, 3.0, 0.75).unwrap();
    let problem = VariationalProblem::new(&model, theta, beta, FockSpace::uniform(2, 8).unwrap()).unwrap();
    let op = optimality::information_operator(&problem, &[c(0.75, 0.0), c(0.0, -0.75)]).unwrap();
    assert!(op.hermitian_residual() < 1e-12);
    let v = FockVector::new(
        problem.space().clone(),
        CVector::from_element(problem.space().dim(), c(0.1, 0.0)),
    )
    .unwrap();
    assert!(op.expectation(&v).unwrap().im.abs() < 1e-12);
}
