//! Densities recovered from boundary values of the solution, their support,
//! and the split of the Gram measure into an atom at zero and a density.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::dyson::{GramSolution, QveSolution, SpectralParameter, Sweep};
use crate::error::{Error, Result};
use crate::profile::VarianceProfile;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveKind {
    /// ν^d, energies E = Re ζ.
    Gram,
    /// ρ^d, energies τ = Re z.
    Qve,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityCurve {
    pub energies: Vec<f64>,
    pub avg_density: Vec<f64>,
    /// `per_component[x][i]` is the density of component x at `energies[i]`.
    pub per_component: Option<Vec<Vec<f64>>>,
    /// Averaging weights for the components (sum to 1).
    pub weights: Vec<f64>,
    /// Number of leading components on the row space.
    pub x1_len: usize,
    pub eta_used: f64,
    pub kind: CurveKind,
    /// Whether a two-η extrapolation toward η = 0 has been applied.
    pub extrapolated: bool,
}

impl DensityCurve {
    pub fn len(&self) -> usize {
        self.energies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energies.is_empty()
    }

    pub fn max_density(&self) -> f64 {
        self.avg_density.iter().cloned().fold(0.0, f64::max)
    }

    /// Smallest grid spacing.
    pub fn min_spacing(&self) -> f64 {
        self.energies
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    }

    /// Linear interpolation of the averaged density; zero outside the grid.
    pub fn interpolate(&self, e: f64) -> f64 {
        interpolate(&self.energies, &self.avg_density, e)
    }

    /// min_x and max_x over the components at grid index i.
    pub fn component_range(&self, i: usize) -> Option<(f64, f64)> {
        self.per_component.as_ref().map(|comps| {
            comps
                .iter()
                .map(|c| c[i])
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                    (lo.min(v), hi.max(v))
                })
        })
    }

    /// Synthetic curve with no component data (for tests and external data).
    pub fn from_samples(energies: Vec<f64>, density: Vec<f64>, kind: CurveKind) -> Result<Self> {
        if energies.len() != density.len() {
            return Err(Error::DimensionMismatch {
                expected: energies.len(),
                got: density.len(),
            });
        }
        check_increasing(&energies)?;
        Ok(Self {
            energies,
            avg_density: density,
            per_component: None,
            weights: vec![1.0],
            x1_len: 1,
            eta_used: 0.0,
            kind,
            extrapolated: false,
        })
    }
}

pub(crate) fn interpolate(x: &[f64], y: &[f64], e: f64) -> f64 {
    if x.is_empty() || e < x[0] || e > x[x.len() - 1] {
        return 0.0;
    }
    let i = x.partition_point(|v| *v < e);
    if i == 0 {
        return y[0];
    }
    let (x0, x1) = (x[i - 1], x[i]);
    let t = (e - x0) / (x1 - x0);
    y[i - 1] * (1.0 - t) + y[i] * t
}

fn check_increasing(energies: &[f64]) -> Result<()> {
    if energies.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument(
            "energies must be strictly increasing".into(),
        ));
    }
    Ok(())
}

/// A solution type whose boundary values carry a density.
pub trait BoundaryValue {
    const KIND: CurveKind;
    fn parameter(&self) -> SpectralParameter;
    fn values(&self) -> &[num_complex::Complex64];
    fn averaging_weights(profile: &VarianceProfile) -> Vec<f64>;
}

impl BoundaryValue for QveSolution {
    const KIND: CurveKind = CurveKind::Qve;
    fn parameter(&self) -> SpectralParameter {
        self.z
    }
    fn values(&self) -> &[num_complex::Complex64] {
        &self.m
    }
    fn averaging_weights(profile: &VarianceProfile) -> Vec<f64> {
        profile.pi_weights()
    }
}

impl BoundaryValue for GramSolution {
    const KIND: CurveKind = CurveKind::Gram;
    fn parameter(&self) -> SpectralParameter {
        self.zeta
    }
    fn values(&self) -> &[num_complex::Complex64] {
        &self.m
    }
    fn averaging_weights(profile: &VarianceProfile) -> Vec<f64> {
        profile.row_average_weights()
    }
}

fn same_eta(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs())
}

/// Density Im m(E + iη)/π at a common η, componentwise and averaged. For the
/// Gram kind E = Re ζ; the QVE kind uses the spectral parameter of the QVE
/// solve directly.
pub fn stieltjes_invert<T: BoundaryValue>(
    profile: &VarianceProfile,
    solutions: &[&T],
    with_components: bool,
) -> Result<DensityCurve> {
    let weights = T::averaging_weights(profile);
    let eta = solutions.first().map_or(0.0, |s| s.parameter().im);
    if solutions.iter().any(|s| !same_eta(s.parameter().im, eta)) {
        return Err(Error::MixedEta);
    }
    let energies: Vec<f64> = solutions.iter().map(|s| s.parameter().re).collect();
    check_increasing(&energies)?;
    let avg_density = solutions
        .iter()
        .map(|s| {
            weights
                .iter()
                .zip(s.values())
                .map(|(w, m)| w * m.im)
                .sum::<f64>()
                / PI
        })
        .collect();
    let per_component = with_components.then(|| {
        (0..weights.len())
            .map(|x| solutions.iter().map(|s| s.values()[x].im / PI).collect())
            .collect()
    });
    Ok(DensityCurve {
        energies,
        avg_density,
        per_component,
        weights,
        x1_len: profile.p(),
        eta_used: eta,
        kind: T::KIND,
        extrapolated: false,
    })
}

fn extrapolate_pair(eta_f: f64, rho_f: f64, eta_c: f64, rho_c: f64) -> f64 {
    ((eta_c * rho_f - eta_f * rho_c) / (eta_c - eta_f)).max(0.0)
}

/// Two-η Richardson extrapolation toward η = 0, linear in η.
pub fn richardson(fine: &DensityCurve, coarse: &DensityCurve) -> Result<DensityCurve> {
    if fine.energies != coarse.energies || fine.kind != coarse.kind {
        return Err(Error::InvalidArgument(
            "extrapolation needs two curves on the same grid".into(),
        ));
    }
    if !(coarse.eta_used > fine.eta_used) {
        return Err(Error::InvalidArgument(
            "the coarse curve must use the larger η".into(),
        ));
    }
    let (ef, ec) = (fine.eta_used, coarse.eta_used);
    let combine = |a: &[f64], b: &[f64]| -> Vec<f64> {
        a.iter()
            .zip(b)
            .map(|(f, c)| extrapolate_pair(ef, *f, ec, *c))
            .collect()
    };
    let per_component = match (&fine.per_component, &coarse.per_component) {
        (Some(f), Some(c)) => Some(f.iter().zip(c).map(|(a, b)| combine(a, b)).collect()),
        _ => None,
    };
    Ok(DensityCurve {
        avg_density: combine(&fine.avg_density, &coarse.avg_density),
        per_component,
        extrapolated: true,
        ..fine.clone()
    })
}

/// Density curve from a continuation sweep. When `extrapolate` is set each
/// point is extrapolated from its last two rungs; points without a coarse
/// rung keep the raw value.
pub fn density_from_sweep<T: BoundaryValue>(
    profile: &VarianceProfile,
    sweep: &Sweep<T>,
    extrapolate: bool,
    with_components: bool,
) -> Result<DensityCurve> {
    let fine = sweep.solutions()?;
    let mut curve = stieltjes_invert(profile, &fine, with_components)?;
    if !extrapolate {
        return Ok(curve);
    }
    let weights = &curve.weights;
    let mut any = false;
    for (i, pt) in sweep.points.iter().enumerate() {
        let (Some(f), Some(c)) = (&pt.solution, &pt.coarse) else {
            continue;
        };
        let (ef, ec) = (f.parameter().im, c.parameter().im);
        let avg_c: f64 = weights
            .iter()
            .zip(c.values())
            .map(|(w, m)| w * m.im)
            .sum::<f64>()
            / PI;
        curve.avg_density[i] = extrapolate_pair(ef, curve.avg_density[i], ec, avg_c);
        if let Some(comps) = curve.per_component.as_mut() {
            for (x, comp) in comps.iter_mut().enumerate() {
                comp[i] = extrapolate_pair(ef, comp[i], ec, c.values()[x].im / PI);
            }
        }
        any = true;
    }
    curve.extrapolated = any;
    Ok(curve)
}

/// ν_k(E) = E^{-1/2} ρ_k(E^{1/2}) on the row components.
pub fn qve_to_gram_density(rho: &DensityCurve) -> Result<DensityCurve> {
    if rho.kind != CurveKind::Qve {
        return Err(Error::InvalidArgument(
            "expected a QVE density curve".into(),
        ));
    }
    if let Some(t) = rho.energies.iter().find(|t| **t <= 0.0) {
        return Err(Error::Domain(format!("transform needs τ > 0, got τ = {t}")));
    }
    let energies: Vec<f64> = rho.energies.iter().map(|t| t * t).collect();
    let p = rho.x1_len;
    let (weights, per_component, avg_density) = match &rho.per_component {
        Some(comps) => {
            let mass: f64 = rho.weights[..p].iter().sum();
            let weights: Vec<f64> = rho.weights[..p].iter().map(|w| w / mass).collect();
            let comps: Vec<Vec<f64>> = comps[..p]
                .iter()
                .map(|c| c.iter().zip(&rho.energies).map(|(v, t)| v / t).collect())
                .collect();
            let avg = (0..energies.len())
                .map(|i| weights.iter().zip(&comps).map(|(w, c)| w * c[i]).sum())
                .collect();
            (weights, Some(comps), avg)
        }
        None if rho.x1_len == rho.weights.len() => {
            let avg = rho
                .avg_density
                .iter()
                .zip(&rho.energies)
                .map(|(v, t)| v / t)
                .collect();
            (rho.weights.clone(), None, avg)
        }
        None => {
            return Err(Error::InvalidArgument(
                "row-space components are needed to transform a QVE density".into(),
            ))
        }
    };
    Ok(DensityCurve {
        energies,
        avg_density,
        per_component,
        weights,
        x1_len: p,
        eta_used: rho.eta_used,
        kind: CurveKind::Gram,
        extrapolated: rho.extrapolated,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupportInterval {
    pub start: f64,
    pub end: f64,
    /// Narrower than the requested minimal component width.
    pub narrow: bool,
    /// Starts at the first grid point at or above the cutoff, so the true
    /// left end lies below it.
    pub clipped_left: bool,
    /// Ends at the last grid point.
    pub clipped_right: bool,
}

impl SupportInterval {
    pub fn width(&self) -> f64 {
        self.end - self.start
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupportSet {
    pub intervals: Vec<SupportInterval>,
    pub threshold: f64,
    pub delta_cutoff: f64,
}

impl SupportSet {
    /// Support from explicit disjoint sorted intervals.
    pub fn from_intervals(intervals: &[(f64, f64)], delta_cutoff: f64) -> Result<Self> {
        for (a, b) in intervals {
            if !(a < b) {
                return Err(Error::InvalidArgument(format!("empty interval [{a}, {b}]")));
            }
        }
        if intervals.windows(2).any(|w| !(w[0].1 < w[1].0)) {
            return Err(Error::InvalidArgument(
                "intervals must be disjoint and sorted".into(),
            ));
        }
        Ok(Self {
            intervals: intervals
                .iter()
                .map(|&(start, end)| SupportInterval {
                    start,
                    end,
                    narrow: false,
                    clipped_left: false,
                    clipped_right: false,
                })
                .collect(),
            threshold: 0.0,
            delta_cutoff,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn bounds(&self) -> Vec<(f64, f64)> {
        self.intervals.iter().map(|i| (i.start, i.end)).collect()
    }

    pub fn min_width(&self) -> Option<f64> {
        self.intervals
            .iter()
            .map(SupportInterval::width)
            .reduce(f64::min)
    }
}

/// Default support threshold, 10⁻³ of the peak density.
pub fn default_threshold(curve: &DensityCurve) -> f64 {
    1e-3 * curve.max_density()
}

/// Maximal runs above `threshold` on [δ, ∞), with single-point dips bridged
/// and ends placed at the linearly interpolated threshold crossing.
pub fn detect_support(
    curve: &DensityCurve,
    threshold: f64,
    delta_cutoff: f64,
    min_component_width: f64,
) -> SupportSet {
    let first = curve
        .energies
        .partition_point(|e| *e < delta_cutoff * (1.0 - 1e-12));
    let e = &curve.energies[first..];
    let d = &curve.avg_density[first..];
    let on: Vec<bool> = d.iter().map(|v| *v > threshold).collect();
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut i = 0;
    while i < on.len() {
        if !on[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i < on.len() && on[i] {
            i += 1;
        }
        runs.push((start, i - 1));
    }
    let mut merged: Vec<(usize, usize)> = Vec::new();
    for run in runs {
        match merged.last_mut() {
            Some(last) if run.0 == last.1 + 2 => last.1 = run.1,
            _ => merged.push(run),
        }
    }
    let crossing = |a: usize, b: usize| -> f64 {
        // density(a) ≤ threshold < density(b) or the reverse
        let (da, db) = (d[a] - threshold, d[b] - threshold);
        if da == db {
            return 0.5 * (e[a] + e[b]);
        }
        e[a] + (e[b] - e[a]) * (da / (da - db))
    };
    let intervals = merged
        .into_iter()
        .map(|(s, t)| {
            let clipped_left = s == 0;
            let clipped_right = t + 1 == e.len();
            let start = if clipped_left {
                e[0].max(delta_cutoff)
            } else {
                crossing(s - 1, s)
            };
            let end = if clipped_right {
                e[t]
            } else {
                crossing(t, t + 1)
            };
            SupportInterval {
                start,
                end,
                narrow: end - start < min_component_width,
                clipped_left,
                clipped_right,
            }
        })
        .collect();
    SupportSet {
        intervals,
        threshold,
        delta_cutoff,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentMass {
    /// ν⁰: 1 minus the resolved and the unresolved mass, clamped at 0.
    pub atom: f64,
    /// ∫ ν^d over [δ, Σ].
    pub integral: f64,
    /// Estimated mass in (0, δ), from a hard-edge model ν ≈ c E^{-1/2}.
    pub unresolved: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MassDecomposition {
    pub per_component: Option<Vec<ComponentMass>>,
    pub average: ComponentMass,
    pub delta_cutoff: f64,
    pub sigma: f64,
    /// |T_h − T_{2h}| for the averaged density.
    pub quadrature_error: f64,
}

fn trapezoid_on(x: &[f64], y: &[f64], lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    let mut pts: Vec<(f64, f64)> = vec![(lo, interpolate(x, y, lo))];
    pts.extend(
        x.iter()
            .zip(y)
            .filter(|(e, _)| **e > lo && **e < hi)
            .map(|(e, v)| (*e, *v)),
    );
    pts.push((hi, interpolate(x, y, hi)));
    pts.windows(2)
        .map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1))
        .sum()
}

fn split_mass(x: &[f64], y: &[f64], delta: f64, sigma: f64) -> ComponentMass {
    let integral = trapezoid_on(x, y, delta, sigma);
    let unresolved = 2.0 * delta * interpolate(x, y, delta);
    ComponentMass {
        atom: (1.0 - integral - unresolved).max(0.0),
        integral,
        unresolved,
    }
}

/// Split each component of ν into atom at zero, resolved density on [δ, Σ]
/// and unresolved mass below δ.
pub fn mass_decomposition(
    profile: &VarianceProfile,
    curve: &DensityCurve,
    delta_cutoff: f64,
) -> Result<MassDecomposition> {
    if curve.kind != CurveKind::Gram {
        return Err(Error::InvalidArgument(
            "expected a Gram density curve".into(),
        ));
    }
    let sigma = profile.sigma_bound();
    let x = &curve.energies;
    let covered = !x.is_empty()
        && x[0] <= delta_cutoff * (1.0 + 1e-9)
        && (sigma <= delta_cutoff || x[x.len() - 1] >= sigma * (1.0 - 1e-9));
    if !covered {
        return Err(Error::GridCoverage {
            lo: delta_cutoff,
            hi: sigma,
        });
    }
    let average = split_mass(x, &curve.avg_density, delta_cutoff, sigma);
    let per_component = curve.per_component.as_ref().map(|comps| {
        comps[..curve.x1_len.min(comps.len())]
            .iter()
            .map(|c| split_mass(x, c, delta_cutoff, sigma))
            .collect()
    });
    let half_x: Vec<f64> = x.iter().step_by(2).cloned().collect();
    let half_y: Vec<f64> = curve.avg_density.iter().step_by(2).cloned().collect();
    let coarse = trapezoid_on(&half_x, &half_y, delta_cutoff, sigma);
    Ok(MassDecomposition {
        per_component,
        quadrature_error: (coarse - average.integral).abs(),
        average,
        delta_cutoff,
        sigma,
    })
}

/// max_k ν_k / min_k ν_k over grid points whose average exceeds `threshold`.
pub fn component_ratio(curve: &DensityCurve, threshold: f64) -> Option<f64> {
    let mut worst: Option<f64> = None;
    for i in 0..curve.len() {
        if curve.avg_density[i] <= threshold {
            continue;
        }
        let (lo, hi) = curve.component_range(i)?;
        let r = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        worst = Some(worst.map_or(r, |w| w.max(r)));
    }
    worst
}

/// Largest discrete Hölder quotient |ν(E₁) − ν(E₂)|/|E₁ − E₂|^a between
/// neighbouring grid points at or above `delta_cutoff`.
pub fn holder_quotient(curve: &DensityCurve, exponent: f64, delta_cutoff: f64) -> f64 {
    curve
        .energies
        .windows(2)
        .zip(curve.avg_density.windows(2))
        .filter(|(e, _)| e[0] >= delta_cutoff)
        .map(|(e, d)| (d[1] - d[0]).abs() / (e[1] - e[0]).powf(exponent))
        .fold(0.0, f64::max)
}

/// Uniform grid with `count` points on [lo, hi].
pub fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..count)
            .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dyson::{continuation_sweep, default_eta_ladder, gram_sweep, SolverOptions};

    fn mp_density(e: f64) -> f64 {
        if e <= 0.0 || e >= 4.0 {
            0.0
        } else {
            ((4.0 - e) / e).sqrt() / (2.0 * PI)
        }
    }

    fn mp_curve(n: usize, energies: &[f64]) -> DensityCurve {
        let prof = VarianceProfile::constant(n, n, 1.0 / n as f64).unwrap();
        let sweep = gram_sweep(
            &prof,
            energies,
            &default_eta_ladder(1e-6).unwrap(),
            &SolverOptions::default(),
        )
        .unwrap();
        density_from_sweep(&prof, &sweep, true, true).unwrap()
    }

    #[test]
    fn mp_density_values() {
        let curve = mp_curve(10, &[1.0, 2.0, 5.0]);
        assert!((curve.avg_density[0] - 0.275664).abs() < 1e-5);
        assert!((curve.avg_density[1] - 0.159155).abs() < 1e-5);
        assert!(curve.avg_density[2] < 1e-5);
        assert!(curve.extrapolated);
    }

    #[test]
    fn mixed_eta_rejected() {
        let prof = VarianceProfile::constant(2, 2, 0.5).unwrap();
        let opts = SolverOptions::default();
        let a = crate::dyson::solve_qve(
            &prof,
            SpectralParameter::new(0.5, 0.1).unwrap(),
            None,
            &opts,
        )
        .unwrap();
        let b = crate::dyson::solve_qve(
            &prof,
            SpectralParameter::new(0.6, 0.2).unwrap(),
            None,
            &opts,
        )
        .unwrap();
        assert!(matches!(
            stieltjes_invert(&prof, &[&a, &b], false),
            Err(Error::MixedEta)
        ));
    }

    #[test]
    fn transform_constant_density() {
        let rho =
            DensityCurve::from_samples(vec![0.5, 1.0, 2.0], vec![0.3, 0.3, 0.3], CurveKind::Qve)
                .unwrap();
        let nu = qve_to_gram_density(&rho).unwrap();
        assert_eq!(nu.energies, vec![0.25, 1.0, 4.0]);
        assert!((nu.avg_density[0] - 0.6).abs() < 1e-15);
        assert!((nu.avg_density[2] - 0.15).abs() < 1e-15);
        let empty = DensityCurve::from_samples(vec![], vec![], CurveKind::Qve).unwrap();
        assert!(qve_to_gram_density(&empty).unwrap().is_empty());
        let bad =
            DensityCurve::from_samples(vec![-1.0, 1.0], vec![0.1, 0.1], CurveKind::Qve).unwrap();
        assert!(qve_to_gram_density(&bad).is_err());
    }

    #[test]
    fn transform_reproduces_mp() {
        let n = 8;
        let prof = VarianceProfile::constant(n, n, 1.0 / n as f64).unwrap();
        let tau = 2f64.sqrt();
        let sweep = continuation_sweep(
            &prof,
            &[-tau, tau],
            &default_eta_ladder(1e-6).unwrap(),
            &SolverOptions::default(),
        )
        .unwrap();
        let rho = density_from_sweep(&prof, &sweep, true, true).unwrap();
        // symmetric in τ
        assert!((rho.avg_density[0] - rho.avg_density[1]).abs() < 1e-9);
        let right = DensityCurve {
            energies: vec![tau],
            avg_density: vec![rho.avg_density[1]],
            per_component: rho
                .per_component
                .as_ref()
                .map(|c| c.iter().map(|v| vec![v[1]]).collect()),
            ..rho.clone()
        };
        let nu = qve_to_gram_density(&right).unwrap();
        assert!((nu.energies[0] - 2.0).abs() < 1e-14);
        assert!((nu.avg_density[0] - mp_density(2.0)).abs() < 1e-6);
    }

    #[test]
    fn richardson_removes_linear_term() {
        let e = vec![1.0, 2.0];
        let mut fine =
            DensityCurve::from_samples(e.clone(), vec![1.0 + 0.01, 2.0 + 0.01], CurveKind::Gram)
                .unwrap();
        fine.eta_used = 0.01;
        let mut coarse =
            DensityCurve::from_samples(e, vec![1.0 + 0.1, 2.0 + 0.1], CurveKind::Gram).unwrap();
        coarse.eta_used = 0.1;
        let out = richardson(&fine, &coarse).unwrap();
        assert!((out.avg_density[0] - 1.0).abs() < 1e-12);
        assert!((out.avg_density[1] - 2.0).abs() < 1e-12);
        assert!(richardson(&coarse, &fine).is_err());
    }

    #[test]
    fn mp_support() {
        let energies = linspace(0.05, 5.0, 500);
        let curve = mp_curve(4, &energies);
        let set = detect_support(&curve, default_threshold(&curve), 0.05, 0.1);
        assert_eq!(set.intervals.len(), 1);
        let iv = &set.intervals[0];
        assert!(iv.clipped_left);
        assert!((iv.start - 0.05).abs() < 1e-12);
        assert!((iv.end - 4.0).abs() < 0.01, "{}", iv.end);
        assert!(!iv.narrow);
    }

    #[test]
    fn zero_and_bump_supports() {
        let e = linspace(0.0, 10.0, 1001);
        let zero =
            DensityCurve::from_samples(e.clone(), vec![0.0; e.len()], CurveKind::Gram).unwrap();
        assert!(detect_support(&zero, 0.0, 0.05, 0.1).is_empty());

        let bump = |x: f64, a: f64, b: f64| {
            if x > a && x < b {
                ((x - a) * (b - x)).sqrt()
            } else {
                0.0
            }
        };
        let d: Vec<f64> = e
            .iter()
            .map(|x| bump(*x, 1.0, 3.0) + bump(*x, 5.0, 8.0))
            .collect();
        let curve = DensityCurve::from_samples(e, d, CurveKind::Gram).unwrap();
        let set = detect_support(&curve, 1e-3, 0.05, 0.1);
        assert_eq!(set.intervals.len(), 2);
        for (iv, (a, b)) in set.intervals.iter().zip([(1.0, 3.0), (5.0, 8.0)]) {
            assert!(
                (iv.start - a).abs() < 0.02 && (iv.end - b).abs() < 0.02,
                "{iv:?}"
            );
        }
    }

    #[test]
    fn single_point_dip_is_bridged() {
        let e = linspace(0.0, 1.0, 11);
        let mut d = vec![1.0; 11];
        d[5] = 0.0;
        let curve = DensityCurve::from_samples(e, d, CurveKind::Gram).unwrap();
        assert_eq!(detect_support(&curve, 0.5, 0.0, 0.01).intervals.len(), 1);
    }

    #[test]
    fn mass_of_mp_laws() {
        let n = 6;
        let delta = 0.05;
        let prof = VarianceProfile::constant(n, n, 1.0 / n as f64).unwrap();
        let energies = linspace(delta, 4.0, 4000);
        let sweep = gram_sweep(
            &prof,
            &energies,
            &default_eta_ladder(1e-6).unwrap(),
            &SolverOptions::default(),
        )
        .unwrap();
        let curve = density_from_sweep(&prof, &sweep, true, true).unwrap();
        let mass = mass_decomposition(&prof, &curve, delta).unwrap();
        assert!(mass.average.atom < 5e-3, "{mass:?}");
        assert!((mass.average.integral + mass.average.unresolved - 1.0).abs() < 5e-3);

        // aspect ratio 1/2: no atom, no mass near zero
        let prof = VarianceProfile::constant(n / 2, n, 1.0 / n as f64).unwrap();
        let sweep = gram_sweep(
            &prof,
            &energies,
            &default_eta_ladder(1e-6).unwrap(),
            &SolverOptions::default(),
        )
        .unwrap();
        let curve = density_from_sweep(&prof, &sweep, true, true).unwrap();
        let mass = mass_decomposition(&prof, &curve, delta).unwrap();
        assert!(mass.average.atom < 1e-3, "{mass:?}");
        assert!(mass.average.unresolved < 1e-6);
        assert!((mass.average.integral - 1.0).abs() < 1e-3);

        let zero = VarianceProfile::constant(3, 3, 0.0).unwrap();
        let sweep = gram_sweep(
            &zero,
            &linspace(delta, 1.0, 50),
            &[1e-6],
            &SolverOptions::default(),
        )
        .unwrap();
        let curve = density_from_sweep(&zero, &sweep, false, false).unwrap();
        let mass = mass_decomposition(&zero, &curve, delta).unwrap();
        assert!(mass.average.integral < 1e-6);
        assert!((mass.average.atom - 1.0).abs() < 1e-4);
    }

    #[test]
    fn coverage_error() {
        let prof = VarianceProfile::constant(2, 2, 0.5).unwrap();
        let curve =
            DensityCurve::from_samples(vec![0.1, 1.0], vec![0.0, 0.0], CurveKind::Gram).unwrap();
        assert!(matches!(
            mass_decomposition(&prof, &curve, 0.05),
            Err(Error::GridCoverage { .. })
        ));
    }
}
