//! Monte Carlo side: random matrices with a prescribed variance profile,
//! their spectra and resolvents, the local-law comparison with the solution
//! of the Dyson equation, and the Kolmogorov distance to the self-consistent
//! distribution.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{
    default_threshold, density_from_sweep, detect_support, linspace, DensityCurve, SupportSet,
};
use crate::dyson::{default_eta_ladder, gram_sweep, solve_gram, SolverOptions, SpectralParameter};
use crate::error::{Error, Result};
use crate::profile::VarianceProfile;
use crate::singularity::{delta_rho, kappa_value, GapFunction};

/// Largest p + n handled by the dense eigensolvers.
pub const DESK_CAP: usize = 2000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "camelCase")]
pub enum EntryDistribution {
    RealGaussian,
    #[default]
    ComplexGaussian,
    /// ±√s_kq with equal probability.
    #[serde(rename = "rademacherScaled")]
    Rademacher,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleConfig {
    pub profile: VarianceProfile,
    pub trials: usize,
    pub seed: u64,
    pub distribution: EntryDistribution,
}

impl SampleConfig {
    pub fn new(
        profile: VarianceProfile,
        trials: usize,
        seed: u64,
        distribution: EntryDistribution,
    ) -> Result<Self> {
        if trials == 0 {
            return Err(Error::config("trials", "must be at least 1"));
        }
        if profile
            .weight1()
            .iter()
            .chain(profile.weight2())
            .any(|w| *w != 1.0)
        {
            return Err(Error::InvalidProfile(
                "sampling needs a profile with unit weights (one index per row and column)".into(),
            ));
        }
        if profile.p() + profile.n() > DESK_CAP {
            return Err(Error::InvalidArgument(format!(
                "p + n = {} exceeds the dense eigensolver cap {DESK_CAP}; use a smaller profile",
                profile.p() + profile.n()
            )));
        }
        Ok(Self {
            profile,
            trials,
            seed,
            distribution,
        })
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Independent stream for row `row` of trial `trial`.
fn row_rng(seed: u64, trial: u64, row: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix(splitmix(splitmix(seed) ^ trial) ^ row))
}

/// X with independent centered entries of variance s_kq; a pure function of
/// (seed, trial).
pub fn sample_matrix(config: &SampleConfig, trial: usize) -> DMatrix<Complex64> {
    let prof = &config.profile;
    let (p, n) = (prof.p(), prof.n());
    let rows: Vec<Vec<Complex64>> = (0..p)
        .into_par_iter()
        .map(|k| {
            let mut rng = row_rng(config.seed, trial as u64, k as u64);
            (0..n)
                .map(|q| {
                    let sd = prof.s(k, q).sqrt();
                    let xi = match config.distribution {
                        EntryDistribution::RealGaussian => {
                            Complex64::new(StandardNormal.sample(&mut rng), 0.0)
                        }
                        EntryDistribution::ComplexGaussian => {
                            let (a, b): (f64, f64) = (
                                StandardNormal.sample(&mut rng),
                                StandardNormal.sample(&mut rng),
                            );
                            Complex64::new(a, b) / 2f64.sqrt()
                        }
                        EntryDistribution::Rademacher => {
                            let bit: bool = rand::Rng::random(&mut rng);
                            Complex64::new(if bit { 1.0 } else { -1.0 }, 0.0)
                        }
                    };
                    xi * sd
                })
                .collect()
        })
        .collect();
    DMatrix::from_fn(p, n, |k, q| rows[k][q])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalSpectrum {
    /// Eigenvalues of XX*, ascending.
    pub eigenvalues: Vec<f64>,
    pub p: usize,
    pub n: usize,
    pub trial: Option<usize>,
}

fn is_real(x: &DMatrix<Complex64>) -> bool {
    x.iter().all(|v| v.im == 0.0)
}

fn check_cap(p: usize, n: usize) -> Result<()> {
    if p + n > DESK_CAP {
        return Err(Error::InvalidArgument(format!(
            "p + n = {} exceeds the dense eigensolver cap {DESK_CAP}",
            p + n
        )));
    }
    Ok(())
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

/// Eigenvalues of the p×p matrix XX*.
pub fn gram_eigenvalues(x: &DMatrix<Complex64>) -> Result<EmpiricalSpectrum> {
    let (p, n) = x.shape();
    check_cap(p, n)?;
    if x.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::Eigensolve("matrix has non-finite entries".into()));
    }
    let eigenvalues = if is_real(x) {
        let xr = x.map(|v| v.re);
        let g = &xr * xr.transpose();
        g.symmetric_eigenvalues().iter().cloned().collect()
    } else {
        let g = x * x.adjoint();
        g.symmetric_eigenvalues().iter().cloned().collect()
    };
    Ok(EmpiricalSpectrum {
        eigenvalues: sorted(eigenvalues),
        p,
        n,
        trial: None,
    })
}

/// H = [[0, X], [X*, 0]].
pub fn linearization(x: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let (p, n) = x.shape();
    let mut h = DMatrix::<Complex64>::zeros(p + n, p + n);
    h.view_mut((0, p), (p, n)).copy_from(x);
    h.view_mut((p, 0), (n, p)).copy_from(&x.adjoint());
    h
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearizationCheck {
    /// Largest relative difference between the squared eigenvalues of H and
    /// the squared singular values of X.
    pub max_relative_error: f64,
    /// Same comparison against the eigenvalues of the formed matrix XX*; this
    /// loses accuracy for eigenvalues near zero.
    pub gram_relative_error: f64,
    pub compared: usize,
    pub cutoff: f64,
}

fn max_relative(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()))
        .fold(0.0, f64::max)
}

fn above(v: Vec<f64>, cutoff: f64) -> Vec<f64> {
    sorted(v).into_iter().filter(|x| *x > cutoff).collect()
}

/// Compares the eigenvalues of XX* above `cutoff` with the squared
/// eigenvalues of H: each nonzero eigenvalue of XX* appears twice in H².
pub fn linearization_check(x: &DMatrix<Complex64>, cutoff: f64) -> Result<LinearizationCheck> {
    let (p, n) = x.shape();
    check_cap(p, n)?;
    let h = linearization(x);
    let (mu, sv): (Vec<f64>, Vec<f64>) = if is_real(x) {
        let xr = x.map(|v| v.re);
        (
            linearization_real(&xr)
                .symmetric_eigenvalues()
                .iter()
                .cloned()
                .collect(),
            xr.singular_values().iter().cloned().collect(),
        )
    } else {
        (
            h.symmetric_eigenvalues().iter().cloned().collect(),
            x.singular_values().iter().cloned().collect(),
        )
    };
    // positive half of the spectrum of H, squared
    let h2 = above(
        mu.iter().filter(|m| **m > 0.0).map(|m| m * m).collect(),
        cutoff,
    );
    let svd = above(sv.iter().map(|s| s * s).collect(), cutoff);
    let gram = above(gram_eigenvalues(x)?.eigenvalues, cutoff);
    if svd.len() != h2.len() {
        return Err(Error::Eigensolve(format!(
            "{} eigenvalues of XX* but {} of H² above {cutoff}",
            svd.len(),
            h2.len()
        )));
    }
    let gram_relative_error = if gram.len() == h2.len() {
        max_relative(&gram, &h2)
    } else {
        f64::INFINITY
    };
    Ok(LinearizationCheck {
        max_relative_error: max_relative(&svd, &h2),
        gram_relative_error,
        compared: h2.len(),
        cutoff,
    })
}

fn linearization_real(x: &DMatrix<f64>) -> DMatrix<f64> {
    let (p, n) = x.shape();
    let mut h = DMatrix::<f64>::zeros(p + n, p + n);
    h.view_mut((0, p), (p, n)).copy_from(x);
    h.view_mut((p, 0), (n, p)).copy_from(&x.transpose());
    h
}

fn gram_minus(x: &DMatrix<Complex64>, zeta: Complex64) -> DMatrix<Complex64> {
    let p = x.nrows();
    x * x.adjoint() - DMatrix::<Complex64>::identity(p, p) * zeta
}

/// R(ζ) = (XX* − ζ)⁻¹ by LU factorization.
pub fn resolvent(x: &DMatrix<Complex64>, zeta: SpectralParameter) -> Result<DMatrix<Complex64>> {
    if !(zeta.im > 0.0) {
        return Err(Error::Domain("the resolvent needs Im ζ > 0".into()));
    }
    check_cap(x.nrows(), x.ncols())?;
    gram_minus(x, zeta.to_complex())
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::Eigensolve("LU factorization of XX* − ζ failed".into()))
}

pub fn resolvent_diag(x: &DMatrix<Complex64>, zeta: SpectralParameter) -> Result<Vec<Complex64>> {
    let r = resolvent(x, zeta)?;
    Ok(r.diagonal().iter().cloned().collect())
}

/// Eigendecomposition of XX*, reused for resolvents at many ζ.
struct SpectralDecomposition {
    values: Vec<f64>,
    vectors: DMatrix<Complex64>,
}

impl SpectralDecomposition {
    fn new(x: &DMatrix<Complex64>) -> Self {
        let eig = SymmetricEigen::new(x * x.adjoint());
        Self {
            values: eig.eigenvalues.iter().cloned().collect(),
            vectors: eig.eigenvectors,
        }
    }

    fn resolvent(&self, zeta: Complex64) -> DMatrix<Complex64> {
        let mut scaled = self.vectors.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= (Complex64::new(self.values[j], 0.0) - zeta).inv();
        }
        scaled * self.vectors.adjoint()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalLawOptions {
    pub epsilon: f64,
    pub prefactor: f64,
    pub delta: f64,
    /// Gap function for κ; detected from the self-consistent density when absent.
    pub gap: Option<GapFunction>,
    pub solver: SolverOptions,
}

impl Default for LocalLawOptions {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            prefactor: 10.0,
            delta: 0.05,
            gap: None,
            solver: SolverOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialErrors {
    pub trial: usize,
    /// max_{k,l} |R_kl − m_k δ_kl|.
    pub max_entry: f64,
    pub max_offdiag: f64,
    /// |p⁻¹ Σ w_k (R_kk − m_k)| for each test vector.
    pub avg: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalLawPoint {
    pub zeta: SpectralParameter,
    pub im_avg: f64,
    pub kappa: f64,
    pub bound_entry: f64,
    pub bound_avg: f64,
    /// p^ε·prefactor·√(⟨Im m⟩/(pη)), the off-diagonal part of the entry bound.
    pub bound_offdiag: f64,
    pub trials: Vec<TrialErrors>,
    pub pass_entry: f64,
    pub pass_offdiag: f64,
    /// Fraction of (trial, w) pairs within the averaged bound.
    pub pass_avg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalLawReport {
    pub points: Vec<LocalLawPoint>,
    pub gamma: f64,
    pub epsilon: f64,
    pub prefactor: f64,
    pub rho: f64,
    pub trials: usize,
    pub seed: u64,
}

/// Support of the self-consistent Gram density on [δ, 1.1·Σ].
pub fn self_consistent_support(
    profile: &VarianceProfile,
    delta: f64,
    grid_points: usize,
    solver: &SolverOptions,
) -> Result<(DensityCurve, SupportSet)> {
    let energies = linspace(
        delta,
        (1.1 * profile.sigma_bound()).max(2.0 * delta),
        grid_points,
    );
    let sweep = gram_sweep(
        profile,
        &energies,
        &default_eta_ladder(solver.eta_floor)?,
        solver,
    )?;
    let curve = density_from_sweep(profile, &sweep, true, false)?;
    let support = detect_support(&curve, default_threshold(&curve), delta, 0.0);
    Ok((curve, support))
}

/// Entrywise and averaged resolvent errors against the solution of the Dyson
/// equation, with the bounds p^ε·C·[√(⟨Im m⟩/(pη)) + min{1/√(pη), κ/(pη)}]
/// and p^ε·C·min{1/√(pη), κ/(pη)}.
pub fn local_law_check(
    config: &SampleConfig,
    zeta_grid: &[SpectralParameter],
    gamma: f64,
    w_vectors: &[Vec<f64>],
    opts: &LocalLawOptions,
) -> Result<LocalLawReport> {
    let prof = &config.profile;
    let p = prof.p();
    let pf = p as f64;
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::config("gamma", "must lie in (0, 1)"));
    }
    for z in zeta_grid {
        if z.norm() < opts.delta || z.im < pf.powf(gamma - 1.0) {
            return Err(Error::Domain(format!(
                "ζ = {}+{}i lies outside the domain |ζ| ≥ {} and Im ζ ≥ p^(γ−1) = {:.4e}",
                z.re,
                z.im,
                opts.delta,
                pf.powf(gamma - 1.0)
            )));
        }
    }
    for w in w_vectors {
        if w.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: w.len(),
            });
        }
        if w.iter().any(|v| v.abs() > 1.0) {
            return Err(Error::InvalidArgument("test vectors need ‖w‖∞ ≤ 1".into()));
        }
    }
    let gap = match &opts.gap {
        Some(g) => g.clone(),
        None => {
            let (_, support) = self_consistent_support(prof, opts.delta, 2000, &opts.solver)?;
            GapFunction::with_default_rho(support)?
        }
    };
    let solutions = zeta_grid
        .iter()
        .map(|z| solve_gram(prof, *z, &opts.solver))
        .collect::<Result<Vec<_>>>()?;
    let per_trial: Vec<Vec<TrialErrors>> = (0..config.trials)
        .into_par_iter()
        .map(|trial| {
            let x = sample_matrix(config, trial);
            let dec = SpectralDecomposition::new(&x);
            solutions
                .iter()
                .map(|sol| {
                    let r = dec.resolvent(sol.zeta.to_complex());
                    let mut max_entry = 0.0f64;
                    let mut max_offdiag = 0.0f64;
                    for l in 0..p {
                        for k in 0..p {
                            let v = r[(k, l)];
                            if k == l {
                                max_entry = max_entry.max((v - sol.m[k]).norm());
                            } else {
                                max_entry = max_entry.max(v.norm());
                                max_offdiag = max_offdiag.max(v.norm());
                            }
                        }
                    }
                    let avg = w_vectors
                        .iter()
                        .map(|w| {
                            (0..p)
                                .map(|k| (r[(k, k)] - sol.m[k]) * w[k])
                                .sum::<Complex64>()
                                .norm()
                                / pf
                        })
                        .collect();
                    TrialErrors {
                        trial,
                        max_entry,
                        max_offdiag,
                        avg,
                    }
                })
                .collect()
        })
        .collect();
    let scale = opts.prefactor * pf.powf(opts.epsilon);
    let points = solutions
        .iter()
        .enumerate()
        .map(|(i, sol)| {
            let eta = sol.zeta.im;
            let im_avg = sol.im_avg();
            let kappa = kappa_value(delta_rho(&gap, sol.zeta.re), im_avg);
            let pe = pf * eta;
            let min_term = (1.0 / pe.sqrt()).min(kappa / pe);
            let off = (im_avg / pe).sqrt();
            let bound_entry = scale * (off + min_term);
            let bound_avg = scale * min_term;
            let bound_offdiag = scale * off;
            let trials: Vec<TrialErrors> = per_trial.iter().map(|t| t[i].clone()).collect();
            let frac = |ok: usize, total: usize| ok as f64 / total.max(1) as f64;
            let pass_entry = frac(
                trials.iter().filter(|t| t.max_entry <= bound_entry).count(),
                trials.len(),
            );
            let pass_offdiag = frac(
                trials
                    .iter()
                    .filter(|t| t.max_offdiag <= bound_offdiag)
                    .count(),
                trials.len(),
            );
            let avg_total = trials.len() * w_vectors.len();
            let avg_ok = trials
                .iter()
                .flat_map(|t| t.avg.iter())
                .filter(|e| **e <= bound_avg)
                .count();
            LocalLawPoint {
                zeta: sol.zeta,
                im_avg,
                kappa,
                bound_entry,
                bound_avg,
                bound_offdiag,
                trials,
                pass_entry,
                pass_offdiag,
                pass_avg: if avg_total == 0 {
                    1.0
                } else {
                    frac(avg_ok, avg_total)
                },
            }
        })
        .collect();
    Ok(LocalLawReport {
        points,
        gamma,
        epsilon: opts.epsilon,
        prefactor: opts.prefactor,
        rho: gap.rho,
        trials: config.trials,
        seed: config.seed,
    })
}

/// Spectra of all trials, in trial order.
pub fn sample_spectra(config: &SampleConfig) -> Result<Vec<EmpiricalSpectrum>> {
    (0..config.trials)
        .into_par_iter()
        .map(|t| {
            let mut s = gram_eigenvalues(&sample_matrix(config, t))?;
            s.trial = Some(t);
            Ok(s)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub empirical: f64,
    pub self_consistent: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsReport {
    pub distance: f64,
    pub eigenvalues: usize,
    pub delta: f64,
    pub histogram: Vec<HistogramBin>,
}

/// Cumulative trapezoid of the curve from δ, normalized to 1 at the end.
fn self_consistent_cdf(curve: &DensityCurve, delta: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let e = &curve.energies;
    if e.is_empty() || e[0] > delta * (1.0 + 1e-12) {
        return Err(Error::GridCoverage {
            lo: e.first().copied().unwrap_or(f64::NAN),
            hi: e.last().copied().unwrap_or(f64::NAN),
        });
    }
    let mut xs = vec![delta];
    let mut ys = vec![curve.interpolate(delta)];
    for (x, y) in e.iter().zip(&curve.avg_density) {
        if *x > delta {
            xs.push(*x);
            ys.push(*y);
        }
    }
    let mut cdf = vec![0.0; xs.len()];
    for i in 1..xs.len() {
        cdf[i] = cdf[i - 1] + 0.5 * (ys[i] + ys[i - 1]) * (xs[i] - xs[i - 1]);
    }
    let total = cdf[cdf.len() - 1];
    if !(total > 0.0) {
        return Err(Error::EmptySpectrum(delta));
    }
    cdf.iter_mut().for_each(|v| *v /= total);
    Ok((xs, cdf))
}

fn interp_cdf(xs: &[f64], cdf: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return 0.0;
    }
    if x >= xs[xs.len() - 1] {
        return 1.0;
    }
    let i = xs.partition_point(|v| *v < x);
    let t = (x - xs[i - 1]) / (xs[i] - xs[i - 1]);
    cdf[i - 1] * (1.0 - t) + cdf[i] * t
}

/// Kolmogorov–Smirnov distance on [δ, ∞) between the pooled eigenvalues and
/// the self-consistent distribution, both conditioned on [δ, ∞).
pub fn ks_distance(
    spectra: &[EmpiricalSpectrum],
    curve: &DensityCurve,
    delta: f64,
    bins: usize,
) -> Result<KsReport> {
    let mut pooled: Vec<f64> = spectra
        .iter()
        .flat_map(|s| s.eigenvalues.iter().cloned())
        .filter(|v| *v >= delta)
        .collect();
    if pooled.is_empty() {
        return Err(Error::EmptySpectrum(delta));
    }
    pooled.sort_by(f64::total_cmp);
    let (xs, cdf) = self_consistent_cdf(curve, delta)?;
    let n = pooled.len() as f64;
    let mut distance = 0.0f64;
    for (i, x) in pooled.iter().enumerate() {
        let f = interp_cdf(&xs, &cdf, *x);
        distance = distance
            .max((f - i as f64 / n).abs())
            .max((f - (i + 1) as f64 / n).abs());
    }
    let top = pooled[pooled.len() - 1].max(xs[xs.len() - 1]);
    let edges = linspace(delta, top, bins.max(1) + 1);
    let histogram = edges
        .windows(2)
        .map(|w| {
            let count = pooled.iter().filter(|v| **v >= w[0] && **v < w[1]).count() as f64;
            let width = w[1] - w[0];
            HistogramBin {
                lo: w[0],
                hi: w[1],
                empirical: count / (n * width),
                self_consistent: (interp_cdf(&xs, &cdf, w[1]) - interp_cdf(&xs, &cdf, w[0]))
                    / width,
            }
        })
        .collect();
    Ok(KsReport {
        distance,
        eigenvalues: pooled.len(),
        delta,
        histogram,
    })
}

pub fn empirical_vs_selfconsistent(
    config: &SampleConfig,
    curve: &DensityCurve,
    delta: f64,
) -> Result<KsReport> {
    let spectra = sample_spectra(config)?;
    ks_distance(&spectra, curve, delta, 50)
}
