//! Spectral information rates of a broadband Gaussian channel.
//!
//! A band of independent modes with signal intensity s_ν and thermal noise
//! n_ν = 1/(e^{hν/θ} - 1) carries ∫ ln(1 + s_ν/(n_ν+1)) dν nats per unit time.

use std::io::Read;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Planck constant in J·s.
pub const PLANCK: f64 = 6.626_070_15e-34;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Units {
    /// ν in Hz, θ = kT in joules, h = 6.62607015e-34 J·s.
    #[default]
    Physical,
    /// h = 1; ν and θ share one unit.
    Dimensionless,
}

impl Units {
    pub fn planck(self) -> f64 {
        match self {
            Units::Physical => PLANCK,
            Units::Dimensionless => 1.0,
        }
    }
}

/// Signal intensity sampled on a frequency band, with the noise temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralProfile {
    nu: Vec<f64>,
    s_nu: Vec<f64>,
    theta: f64,
    units: Units,
}

impl SpectralProfile {
    pub fn new(nu: Vec<f64>, s_nu: Vec<f64>, theta: f64, units: Units) -> Result<Self> {
        if nu.is_empty() {
            return Err(Error::InvalidArgument("empty band".into()));
        }
        if nu.len() != s_nu.len() {
            return Err(Error::DimensionMismatch {
                expected: nu.len(),
                found: s_nu.len(),
            });
        }
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(Error::InvalidArgument(format!("temperature {theta} must be positive")));
        }
        if let Some(bad) = nu.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidArgument(format!("frequency {bad} must be positive")));
        }
        if nu.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("frequencies must be strictly increasing".into()));
        }
        if let Some(bad) = s_nu.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "signal intensity {bad} must be nonnegative"
            )));
        }
        Ok(Self { nu, s_nu, theta, units })
    }

    /// Reads CSV with header `nu,s_nu`. Parse errors carry the line number.
    pub fn from_csv<R: Read>(reader: R, theta: f64, units: Units) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.len() != 2 || &headers[0] != "nu" || &headers[1] != "s_nu" {
            return Err(Error::Parse {
                line: 1,
                message: "expected header `nu,s_nu`".into(),
            });
        }
        let (mut nu, mut s_nu) = (Vec::new(), Vec::new());
        for record in rdr.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line() as usize);
            let field = |i: usize| -> Result<f64> {
                record
                    .get(i)
                    .ok_or_else(|| Error::Parse {
                        line,
                        message: "missing column".into(),
                    })?
                    .parse::<f64>()
                    .map_err(|e| Error::Parse {
                        line,
                        message: format!("column {}: {e}", i + 1),
                    })
            };
            nu.push(field(0)?);
            s_nu.push(field(1)?);
        }
        Self::new(nu, s_nu, theta, units)
    }

    pub fn from_csv_file(path: &Path, theta: f64, units: Units) -> Result<Self> {
        Self::from_csv(std::fs::File::open(path)?, theta, units)
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.nu
    }

    pub fn signal(&self) -> &[f64] {
        &self.s_nu
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn units(&self) -> Units {
        self.units
    }

    /// Same band at another temperature.
    pub fn with_theta(&self, theta: f64) -> Result<Self> {
        Self::new(self.nu.clone(), self.s_nu.clone(), theta, self.units)
    }

    /// hν/θ at sample i.
    fn ratio(&self, i: usize) -> f64 {
        self.units.planck() * self.nu[i] / self.theta
    }

    fn integrate(&self, f: impl Fn(usize) -> f64) -> f64 {
        if self.nu.len() == 1 {
            return 0.0;
        }
        self.nu
            .windows(2)
            .enumerate()
            .map(|(i, w)| 0.5 * (w[1] - w[0]) * (f(i) + f(i + 1)))
            .sum()
    }
}

/// n_ν = 1/(e^{hν/θ} - 1).
pub fn thermal_occupation(nu: f64, theta: f64, units: Units) -> Result<f64> {
    if !(nu > 0.0) || !(theta > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "ν = {nu} and θ = {theta} must be positive"
        )));
    }
    Ok(1.0 / (units.planck() * nu / theta).exp_m1())
}

/// ∫ ln(1 + s_ν/(n_ν+1)) dν by the trapezoid rule over the sample points.
pub fn rate(profile: &SpectralProfile) -> f64 {
    profile.integrate(|i| {
        let n = 1.0 / profile.ratio(i).exp_m1();
        (profile.s_nu[i] / (n + 1.0)).ln_1p()
    })
}

/// hν/θ ≪ 1: ∫ ln(1 + σ_ν²/θ) dν with σ_ν² = s_ν hν.
pub fn classical_limit_rate(profile: &SpectralProfile) -> f64 {
    profile.integrate(|i| (profile.s_nu[i] * profile.ratio(i)).ln_1p())
}

/// hν/θ ≫ 1: ∫ ln(1 + s_ν) dν.
pub fn low_temperature_rate(profile: &SpectralProfile) -> f64 {
    profile.integrate(|i| profile.s_nu[i].ln_1p())
}

/// s_ν ≪ 1: ∫ (1 - e^{-hν/θ}) s_ν dν.
pub fn weak_signal_rate(profile: &SpectralProfile) -> f64 {
    profile.integrate(|i| -(-profile.ratio(i)).exp_m1() * profile.s_nu[i])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomodyneComparison {
    /// ln(1 + s/(n+1))
    pub heterodyne: f64,
    /// ½ ln(1 + s/(n+½))
    pub single_quadrature: f64,
    /// single_quadrature / heterodyne; `None` when both vanish.
    pub ratio: Option<f64>,
}

/// Information of the coherent (heterodyne) receiver against a receiver that
/// measures one quadrature of the same single-mode channel.
///
/// Measuring one quadrature sees half the signal energy in a real Gaussian
/// channel whose noise variance is (n+½)/2, giving ½ ln(1 + s/(n+½)).
/// [`homodyne_monte_carlo`] checks this closed form independently.
pub fn homodyne_comparison(s: f64, n: f64) -> Result<HomodyneComparison> {
    if !(s >= 0.0) || !(n >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "s = {s} and n = {n} must be nonnegative"
        )));
    }
    let heterodyne = (s / (n + 1.0)).ln_1p();
    let single_quadrature = 0.5 * (s / (n + 0.5)).ln_1p();
    let ratio = (heterodyne > 0.0).then(|| single_quadrature / heterodyne);
    Ok(HomodyneComparison {
        heterodyne,
        single_quadrature,
        ratio,
    })
}

/// Monte-Carlo estimate (mean, standard error) of the information of the real
/// channel y = x + z, x ~ N(0, s), z ~ N(0, n+½): the sample average of
/// ln p(y|x) - ln p(y).
pub fn homodyne_monte_carlo(s: f64, n: f64, count: usize, seed: u64) -> Result<(f64, f64)> {
    if !(s >= 0.0) || !(n >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "s = {s} and n = {n} must be nonnegative"
        )));
    }
    if count < 2 {
        return Err(Error::InvalidArgument("count must be at least 2".into()));
    }
    let noise_var = n + 0.5;
    let total_var = s + noise_var;
    let signal = Normal::new(0.0, s.sqrt()).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let noise = Normal::new(0.0, noise_var.sqrt()).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..count {
        let x: f64 = signal.sample(&mut rng);
        let z: f64 = noise.sample(&mut rng);
        let y = x + z;
        let llr = 0.5 * (total_var / noise_var).ln() - z * z / (2.0 * noise_var) + y * y / (2.0 * total_var);
        sum += llr;
        sum_sq += llr * llr;
    }
    let mean = sum / count as f64;
    let var = (sum_sq / count as f64 - mean * mean) * count as f64 / (count - 1) as f64;
    Ok((mean, (var / count as f64).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn band(lo: f64, hi: f64, points: usize, s: impl Fn(f64) -> f64, theta: f64) -> SpectralProfile {
        let nu: Vec<f64> = (0..points)
            .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
            .collect();
        let s_nu = nu.iter().map(|&v| s(v)).collect();
        SpectralProfile::new(nu, s_nu, theta, Units::Dimensionless).unwrap()
    }

    #[test]
    fn occupation_examples() {
        let n = thermal_occupation(2f64.ln(), 1.0, Units::Dimensionless).unwrap();
        assert!((n - 1.0).abs() < 1e-14);
        assert_eq!(thermal_occupation(1e4, 1.0, Units::Dimensionless).unwrap(), 0.0);
        let x = 1e-3;
        let n = thermal_occupation(x, 1.0, Units::Dimensionless).unwrap();
        let asym = 1.0 / x - 0.5;
        assert!(((n - asym) / n).abs() < 1e-3);
        assert!(thermal_occupation(0.0, 1.0, Units::Physical).is_err());
        assert!(thermal_occupation(1.0, -1.0, Units::Physical).is_err());
    }

    #[test]
    fn physical_units_use_planck() {
        let theta = PLANCK * 1e9 / 2f64.ln();
        let n = thermal_occupation(1e9, theta, Units::Physical).unwrap();
        assert!((n - 1.0).abs() < 1e-12);
    }

    #[test]
    fn flat_band() {
        let p = band(1.0, 1.0 + 1e-4, 11, |_| 2.0, 1.0);
        let n = thermal_occupation(1.0 + 0.5e-4, 1.0, Units::Dimensionless).unwrap();
        let expected = 1e-4 * (1.0 + 2.0 / (n + 1.0)).ln();
        assert!(((rate(&p) - expected) / expected).abs() < 1e-6);
        let zero = band(1.0, 2.0, 11, |_| 0.0, 1.0);
        assert_eq!(rate(&zero), 0.0);
    }

    #[test]
    fn refinement_is_stable() {
        let s = |v: f64| 1.0 + (3.0 * v).sin().powi(2);
        let coarse = rate(&band(0.5, 3.0, 201, s, 1.0));
        let fine = rate(&band(0.5, 3.0, 401, s, 1.0));
        assert!(((coarse - fine) / fine).abs() < 1e-4);
    }

    #[test]
    fn limits() {
        let classical = band(1e-3, 2e-3, 101, |_| 1e3, 1.0);
        let r = rate(&classical);
        assert!(((r - classical_limit_rate(&classical)) / r).abs() < 1e-2);
        let cold = band(30.0, 31.0, 101, |_| 2.0, 1.0);
        let r = rate(&cold);
        assert!(((r - low_temperature_rate(&cold)) / r).abs() < 1e-6);
        let weak = band(0.5, 1.5, 101, |_| 1e-3, 1.0);
        let r = rate(&weak);
        assert!(((r - weak_signal_rate(&weak)) / r).abs() < 5e-3);
    }

    #[test]
    fn validation_and_csv() {
        assert!(SpectralProfile::new(vec![], vec![], 1.0, Units::Physical).is_err());
        assert!(SpectralProfile::new(vec![2.0, 1.0], vec![1.0, 1.0], 1.0, Units::Physical).is_err());
        assert!(SpectralProfile::new(vec![1.0], vec![-1.0], 1.0, Units::Physical).is_err());
        assert!(SpectralProfile::new(vec![1.0], vec![1.0], 0.0, Units::Physical).is_err());

        let p = SpectralProfile::from_csv("nu,s_nu\n1.0,2\n2.0, 3\n".as_bytes(), 1.0, Units::Dimensionless).unwrap();
        assert_eq!(p.frequencies(), &[1.0, 2.0]);
        assert_eq!(p.signal(), &[2.0, 3.0]);
        let err = SpectralProfile::from_csv("nu,s_nu\n1.0,2\n2.0,x\n".as_bytes(), 1.0, Units::Dimensionless);
        assert!(matches!(err, Err(Error::Parse { line: 3, .. })), "{err:?}");
        let err = SpectralProfile::from_csv("freq,s\n1,2\n".as_bytes(), 1.0, Units::Dimensionless);
        assert!(matches!(err, Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn homodyne_examples() {
        let h = homodyne_comparison(1e3, 1e3).unwrap();
        assert!((h.ratio.unwrap() - 0.5).abs() < 0.01);
        let z = homodyne_comparison(0.0, 1.0).unwrap();
        assert_eq!((z.heterodyne, z.single_quadrature, z.ratio), (0.0, 0.0, None));
        assert!(homodyne_comparison(-1.0, 0.0).is_err());
    }

    #[test]
    fn homodyne_closed_form_matches_monte_carlo() {
        let closed = homodyne_comparison(4.0, 0.0).unwrap().single_quadrature;
        let (mc, se) = homodyne_monte_carlo(4.0, 0.0, 1_000_000, 17).unwrap();
        assert!((mc - closed).abs() < 3.0 * se, "{mc} ± {se} vs {closed}");
    }
}
