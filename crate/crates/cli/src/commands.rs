//! Subcommand implementations. Every command validates its whole input before
//! starting any numerical work.

use cohdec::fock::FockSpace;
use cohdec::gaussian::{self, ChannelModel};
use cohdec::grid::make_grid;
use cohdec::heterodyne::{self, ExperimentConfig};
use cohdec::linalg;
use cohdec::optimality::{self, IdentityOptions, VariationalProblem};
use cohdec::povm::{self, Family};
use cohdec::rates::{self, SpectralProfile, Units};
use cohdec::{c, CMatrix, Error, Result};

use crate::args::{CapacityArgs, ModelArgs, Perturbation, RateArgs, SimulateArgs, UnitsArg, VerifyArgs};
use crate::matrix::{diagonal_from_list, format_matrix, read_matrix};
use crate::report::{fmt_number, Check, Report};

pub const COMPLETENESS_TOL: f64 = 1e-3;
pub const FIRST_MOMENT_TOL: f64 = 1e-3;
pub const STATIONARITY_TOL: f64 = 1e-2;
/// A perturbed family counts as distinguishable once its residual is this
/// many times the coherent one.
pub const PERTURBATION_RATIO: f64 = 5.0;
pub const TRACE_TOL: f64 = 1e-2;
pub const IDENTITY_TOL: f64 = 1e-3;
pub const ALGEBRAIC_TOL: f64 = 1e-10;
/// Displacement β of the identity check on every mode.
pub const IDENTITY_BETA: f64 = 0.5;

enum Source {
    List(Vec<f64>),
    Matrix(CMatrix),
}

impl Source {
    fn modes(&self) -> usize {
        match self {
            Source::List(v) => v.len(),
            Source::Matrix(m) => m.nrows(),
        }
    }

    /// Single-entry lists are broadcast to `modes`.
    fn into_matrix(self, modes: usize) -> Result<CMatrix> {
        match self {
            Source::List(v) if v.len() == 1 => Ok(diagonal_from_list(&vec![v[0]; modes])),
            Source::List(v) if v.len() == modes => Ok(diagonal_from_list(&v)),
            Source::Matrix(m) if m.nrows() == modes => Ok(m),
            other => Err(Error::DimensionMismatch {
                expected: modes,
                found: other.modes(),
            }),
        }
    }
}

fn source(
    list: &Option<Vec<f64>>,
    file: &Option<std::path::PathBuf>,
    default: Option<f64>,
    name: &str,
) -> Result<Source> {
    if let Some(v) = list {
        if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument(format!("--{name} needs finite numbers")));
        }
        return Ok(Source::List(v.clone()));
    }
    if let Some(path) = file {
        return read_matrix(path).map(Source::Matrix);
    }
    default
        .map(|d| Source::List(vec![d]))
        .ok_or_else(|| Error::InvalidArgument(format!("one of --{name} or --{name}-file is required")))
}

/// Builds the channel model; `defaults` supplies (s, n) when a flag is absent.
pub fn resolve_model(
    args: &ModelArgs,
    defaults: (Option<f64>, Option<f64>),
    report: &mut Report,
) -> Result<ChannelModel> {
    let s = source(&args.s, &args.s_file, defaults.0, "s")?;
    let n = source(&args.n, &args.n_file, defaults.1, "n")?;
    let modes = s.modes().max(n.modes());
    let s = s.into_matrix(modes)?;
    let n = n.into_matrix(modes)?;
    report.config("modes", modes);
    report.config("s", format_matrix(&s));
    report.config("n", format_matrix(&n));
    ChannelModel::new(s, n)
}

pub fn capacity(args: &CapacityArgs) -> Result<Report> {
    let mut report = Report::new("capacity");
    let model = resolve_model(&args.model, (None, Some(0.0)), &mut report)?;
    let modes = gaussian::analytic_mi_modes(&model);
    let mi: f64 = modes.iter().sum();
    report.number("mi_nats", mi);
    report.number("mi_bits", mi / std::f64::consts::LN_2);
    for (i, m) in modes.iter().enumerate() {
        report.number(&format!("mode{i}.lambda"), m.exp_m1());
        report.number(&format!("mode{i}.mi_nats"), *m);
    }
    Ok(report)
}

fn family(p: Perturbation) -> Family {
    match p {
        Perturbation::Squeeze(ratio) => Family::Squeezed { ratio },
        Perturbation::Offset(x) => Family::Offset(c(x, 0.0)),
        Perturbation::Rescale(k) => Family::Rescaled(k),
    }
}

fn perturbation_name(p: Perturbation) -> &'static str {
    match p {
        Perturbation::Squeeze(_) => "squeeze",
        Perturbation::Offset(_) => "offset",
        Perturbation::Rescale(_) => "rescale",
    }
}

pub fn verify(args: &VerifyArgs) -> Result<Report> {
    let mut report = Report::new("verify");
    let model = resolve_model(&args.model, (Some(1.0), Some(0.5)), &mut report)?;
    let r = model.modes();

    // all grids and spaces first, so bad settings fail before any work
    let povm_grid = make_grid(r, args.povm_radius, args.povm_spacing)?;
    let povm_space = FockSpace::uniform(r, args.povm_cutoff as usize)?;
    let identity_grid = match (model.has_signal(), args.identity_spacing) {
        (false, _) => None,
        (true, None) => Some(optimality::default_identity_grid(&model)?),
        (true, Some(h)) => {
            let g = optimality::default_identity_grid(&model)?;
            Some(make_grid(r, g.mode(0).radius(), h)?)
        }
    };
    report.config("povm_radius", args.povm_radius);
    report.config("povm_spacing", args.povm_spacing);
    report.config("povm_cutoff", args.povm_cutoff);
    if let Some(g) = &identity_grid {
        report.config("identity_radius", fmt_number(g.mode(0).radius()));
        report.config("identity_spacing", fmt_number(g.mode(0).spacing()));
        report.config("identity_beta", IDENTITY_BETA);
    }
    if let Some(p) = args.perturb {
        report.config("perturb", p);
    }

    let problem = match args.cutoff {
        Some(cut) => VariationalProblem::with_cutoffs(&model, vec![cut as usize; r])?,
        None => VariationalProblem::with_defaults(&model)?,
    };
    let cutoffs: Vec<String> = problem.space().cutoffs().iter().map(|c| c.to_string()).collect();
    report.config("cutoff", cutoffs.join(","));
    report.config("theta_nodes", problem.theta_grid().len());
    report.config("beta_nodes", problem.beta_grid().len());

    let povm = povm::coherent_povm(&povm_grid, &povm_space)?;
    let comp = povm::completeness_report(&povm)?;
    let levels: Vec<String> = comp.max_levels.iter().map(|l| l.to_string()).collect();
    report.value("completeness_levels", levels.join(","));
    report.check(Check::at_most("completeness", comp.completeness, COMPLETENESS_TOL));
    report.check(Check::at_most(
        "first_moment",
        comp.worst_first_moment(),
        FIRST_MOMENT_TOL,
    ));

    let coherent = optimality::stationarity_residual(&problem, &problem.coherent_povm()?)?;
    report.check(Check::at_most(
        "stationarity.coherent",
        coherent.aggregate,
        STATIONARITY_TOL,
    ));
    let mi = gaussian::analytic_mi(&model);
    report.number("mi_nats", mi);
    report.number("lagrange_trace", coherent.lagrange_trace);
    report.check(Check::at_most(
        "lagrange_trace",
        (coherent.lagrange_trace - mi).abs(),
        TRACE_TOL,
    ));

    if let Some(p) = args.perturb {
        let perturbed = optimality::stationarity_residual(&problem, &problem.family_povm(&family(p))?)?;
        let ratio = if perturbed.aggregate == coherent.aggregate {
            1.0
        } else {
            perturbed.aggregate / coherent.aggregate
        };
        report.number("perturbation_ratio", ratio);
        let mut check = Check::at_most(
            &format!("stationarity.{}", perturbation_name(p)),
            perturbed.aggregate,
            STATIONARITY_TOL,
        );
        check.pass = check.pass && ratio < PERTURBATION_RATIO;
        report.check(check.with_note(format!("{ratio:.3e} x coherent")));
    }

    match identity_grid {
        None => {
            report.check(Check::at_most("identity", 0.0, IDENTITY_TOL).with_note("no signal".into()));
            report.check(Check::at_most("identity_algebraic", 0.0, ALGEBRAIC_TOL).with_note("no signal".into()));
        }
        Some(grid) => {
            let beta = vec![c(IDENTITY_BETA, 0.0); r];
            match optimality::verify_identity_15_with(&model, &beta, &grid, &grid, &IdentityOptions::default()) {
                Ok(id) => {
                    report.check(Check::at_most("identity", id.lhs, IDENTITY_TOL));
                    report.check(Check::at_most("identity_algebraic", id.algebraic, ALGEBRAIC_TOL));
                }
                Err(Error::UnsupportedNoise) => {
                    // the numerical check needs N = 0 or N > 0; the algebraic tail does not
                    let alg = gaussian::chain_identity_residual(&model)?;
                    report.value("identity", "skipped (N singular but nonzero)");
                    report.check(Check::at_most("identity_algebraic", alg, ALGEBRAIC_TOL));
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok(report)
}

fn relative_deviation(estimate: &CMatrix, expected: &CMatrix) -> f64 {
    linalg::max_abs(&(estimate - expected)) / linalg::max_abs(expected)
}

pub fn simulate(args: &SimulateArgs) -> Result<Report> {
    let mut report = Report::new("simulate");
    let model = resolve_model(&args.model, (None, Some(0.0)), &mut report)?;
    let count = args.count as usize;
    if count < heterodyne::MIN_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "--count {count} is too small for an estimate; use at least {}",
            heterodyne::MIN_SAMPLES
        )));
    }
    let mut config = ExperimentConfig::new(model.clone(), count, args.seed);
    config.bootstrap = args.bootstrap as usize;
    report.config("count", count);
    report.config("seed", args.seed);
    report.config("bootstrap", args.bootstrap);
    if let Some(path) = &args.output {
        report.config("output", path.display());
        // fail on an unwritable path before sampling
        std::fs::File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    }

    let samples = heterodyne::sample_channel(&config)?;
    if let Some(path) = &args.output {
        samples.write_csv_file(path)?;
    }
    let est = heterodyne::empirical_mi(&samples, config.bootstrap, args.seed)?;
    let mi = gaussian::analytic_mi(&model);
    report.number("mi_estimate", est.value);
    report.number("mi_std_error", est.std_error);
    report.number("mi_ci_low", est.ci_low);
    report.number("mi_ci_high", est.ci_high);
    report.number("mi_analytic", mi);
    report.value("analytic_in_ci", est.contains(mi));

    let r = model.modes();
    let cond = heterodyne::conditional_covariance(&samples)?;
    report.number(
        "conditional_cov_deviation",
        relative_deviation(&cond, &model.effective_noise()),
    );
    let beta: Vec<_> = (0..samples.len())
        .flat_map(|i| samples.beta(i).iter().copied())
        .collect();
    let total = heterodyne::sample_covariance(&beta, r)?;
    report.number(
        "total_cov_deviation",
        relative_deviation(&total, &model.total_covariance()),
    );
    Ok(report)
}

pub fn rate(args: &RateArgs) -> Result<Report> {
    let mut report = Report::new("rate");
    let units = match args.units {
        UnitsArg::Dimensionless => Units::Dimensionless,
        UnitsArg::Physical => Units::Physical,
    };
    report.config("profile", args.profile.display());
    report.config("theta", args.theta);
    report.config("units", format!("{:?}", args.units).to_lowercase());
    let profile = SpectralProfile::from_csv_file(&args.profile, args.theta, units)?;
    report.config("points", profile.frequencies().len());

    let exact = rates::rate(&profile);
    report.number("rate", exact);
    let limits = [
        ("classical", rates::classical_limit_rate(&profile)),
        ("low_temperature", rates::low_temperature_rate(&profile)),
        ("weak_signal", rates::weak_signal_rate(&profile)),
    ];
    for (name, value) in limits {
        report.number(&format!("{name}.rate"), value);
        let gap = if exact != 0.0 {
            fmt_number(((value - exact) / exact).abs())
        } else if value == 0.0 {
            fmt_number(0.0)
        } else {
            "undefined".into()
        };
        report.value(&format!("{name}.relative_gap"), gap);
    }
    Ok(report)
}
