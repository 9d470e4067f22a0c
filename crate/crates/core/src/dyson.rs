//! Solvers for the quadratic vector equation `−1/𝐦 = z + 𝐒𝐦` and the Gram
//! Dyson equation `−1/m = ζ − S(1 + Sᵗm)⁻¹`, plus continuation toward the
//! real axis.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dense_solve, gmres, C64};
use crate::profile::{Compressed, VarianceProfile};

/// A point of the open upper half-plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralParameter {
    pub re: f64,
    pub im: f64,
}

impl SpectralParameter {
    pub fn new(re: f64, im: f64) -> Result<Self> {
        if !re.is_finite() || !im.is_finite() {
            return Err(Error::Domain(format!("{re} + {im}i is not finite")));
        }
        if im <= 0.0 {
            return Err(Error::Domain(format!(
                "imaginary part must be positive, got {im}"
            )));
        }
        Ok(Self { re, im })
    }

    pub fn from_complex(z: Complex64) -> Result<Self> {
        Self::new(z.re, z.im)
    }

    pub fn to_complex(self) -> Complex64 {
        Complex64::new(self.re, self.im)
    }

    pub fn norm(self) -> f64 {
        self.to_complex().norm()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Sup-norm tolerance on `1/𝐦 + z + 𝐒𝐦`.
    pub tol: f64,
    pub max_iter: usize,
    pub eta_floor: f64,
    /// Residual below which Newton steps replace the fixed-point map.
    pub newton_threshold: f64,
    pub newton: bool,
    pub gamma_min: f64,
    /// Merge identical rows/columns before solving.
    pub compress: bool,
    /// How many times a failed continuation step may be bisected.
    pub max_refinements: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 100_000,
            eta_floor: 1e-6,
            newton_threshold: 1e-3,
            newton: true,
            gamma_min: 1.0 / 1024.0,
            compress: true,
            max_refinements: 8,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || !(self.eta_floor > 0.0) || self.max_iter == 0 {
            return Err(Error::InvalidArgument(
                "tol, eta_floor and max_iter must be positive".into(),
            ));
        }
        if !(self.gamma_min > 0.0 && self.gamma_min <= 1.0) {
            return Err(Error::InvalidArgument(
                "gamma_min must lie in (0, 1]".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QveSolution {
    pub z: SpectralParameter,
    /// First `p` entries on the row space, last `n` on the column space.
    pub m: Vec<Complex64>,
    pub residual: f64,
    pub iterations: usize,
    /// ⟨𝐦⟩ under the normalized measure π.
    pub avg_m: Complex64,
}

impl QveSolution {
    pub fn im_avg(&self) -> f64 {
        self.avg_m.im
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GramSolution {
    pub zeta: SpectralParameter,
    /// m(ζ), length p.
    pub m: Vec<Complex64>,
    /// The companion transform on the column space, length n.
    pub m2: Vec<Complex64>,
    /// Sup-norm residual of the Gram equation itself.
    pub residual: f64,
    /// Residual of the underlying QVE solve.
    pub qve_residual: f64,
    pub iterations: usize,
    /// Row-space average ⟨m⟩₁.
    pub avg_m: Complex64,
}

impl GramSolution {
    pub fn im_avg(&self) -> f64 {
        self.avg_m.im
    }
}

/// Principal square root; maps the upper half-plane to the first quadrant.
pub fn principal_sqrt(zeta: Complex64) -> Complex64 {
    zeta.sqrt()
}

/// Sup-norm of `1/𝐦 + z + 𝐒𝐦`.
pub fn qve_residual(profile: &VarianceProfile, z: Complex64, m: &[Complex64]) -> Result<f64> {
    let sm = profile.apply_bold_s(m)?;
    Ok(residual_with(z, m, &sm))
}

fn residual_with(z: C64, m: &[C64], sm: &[C64]) -> f64 {
    m.iter()
        .zip(sm)
        .map(|(mi, si)| (mi.inv() + z + si).norm())
        .fold(0.0, f64::max)
}

/// Sup-norm of `1/m + ζ − S(1 + Sᵗm)⁻¹` on the row space.
pub fn gram_residual(profile: &VarianceProfile, zeta: Complex64, m: &[Complex64]) -> Result<f64> {
    let stm = profile.apply_st(m)?;
    let inv: Vec<C64> = stm.iter().map(|v| (C64::new(1.0, 0.0) + v).inv()).collect();
    let s_inv = profile.apply_s(&inv)?;
    Ok(m.iter()
        .zip(&s_inv)
        .map(|(mi, si)| (mi.inv() + zeta - si).norm())
        .fold(0.0, f64::max))
}

fn pi_average(pi: &[f64], m: &[C64]) -> C64 {
    pi.iter().zip(m).map(|(w, v)| v * *w).sum()
}

fn all_in_upper(m: &[C64]) -> bool {
    m.iter().all(|v| v.im > 0.0 && v.re.is_finite())
}

/// A profile together with its compressed form, built once per sweep.
pub(crate) struct Prepared<'a> {
    pub full: &'a VarianceProfile,
    pub compressed: Option<Compressed>,
    pi: Vec<f64>,
}

impl<'a> Prepared<'a> {
    pub fn new(profile: &'a VarianceProfile, compress: bool) -> Self {
        let compressed = if compress {
            Some(profile.compress()).filter(|c| !c.is_trivial())
        } else {
            None
        };
        Self {
            full: profile,
            compressed,
            pi: profile.pi_weights(),
        }
    }

    fn working(&self) -> &VarianceProfile {
        self.compressed.as_ref().map_or(self.full, |c| &c.reduced)
    }

    pub fn solve(
        &self,
        z: SpectralParameter,
        init: Option<&[C64]>,
        opts: &SolverOptions,
    ) -> Result<QveSolution> {
        opts.validate()?;
        let zc = z.to_complex();
        let dim = self.full.dim();
        if let Some(init) = init {
            if init.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: init.len(),
                });
            }
        }
        if self.full.is_zero() {
            let m = vec![-zc.inv(); dim];
            return Ok(QveSolution {
                z,
                avg_m: pi_average(&self.pi, &m),
                residual: qve_residual(self.full, zc, &m)?,
                m,
                iterations: 0,
            });
        }
        let start = init
            .filter(|v| all_in_upper(v))
            .map(|v| match &self.compressed {
                Some(c) => c.restrict(v),
                None => v.to_vec(),
            });
        let (m_work, iterations) = match start {
            Some(init) => fixed_point_newton(self.working(), zc, Some(init), opts)?,
            None => cold_start(self.working(), zc, opts)?,
        };
        // identical on the expanded vector, merged rows see the same sums
        let residual = qve_residual(self.working(), zc, &m_work)?;
        let m = match &self.compressed {
            Some(c) => c.expand(&m_work),
            None => m_work,
        };
        Ok(QveSolution {
            z,
            avg_m: pi_average(&self.pi, &m),
            m,
            residual,
            iterations,
        })
    }
}

/// Solve `−1/𝐦 = z + 𝐒𝐦` with Im 𝐦 > 0.
pub fn solve_qve(
    profile: &VarianceProfile,
    z: SpectralParameter,
    init: Option<&[Complex64]>,
    opts: &SolverOptions,
) -> Result<QveSolution> {
    Prepared::new(profile, opts.compress).solve(z, init, opts)
}

/// Solve the Gram Dyson equation at ζ through the QVE at z = √ζ.
pub fn solve_gram(
    profile: &VarianceProfile,
    zeta: SpectralParameter,
    opts: &SolverOptions,
) -> Result<GramSolution> {
    let z = SpectralParameter::from_complex(principal_sqrt(zeta.to_complex()))?;
    let qve = solve_qve(profile, z, None, opts)?;
    gram_from_qve(profile, zeta, &qve)
}

/// Gram-side transforms m = 𝐦|₁/√ζ and m₂ = 𝐦|₂/√ζ of a QVE solution at √ζ.
pub fn gram_from_qve(
    profile: &VarianceProfile,
    zeta: SpectralParameter,
    qve: &QveSolution,
) -> Result<GramSolution> {
    let z = qve.z.to_complex();
    let expected = principal_sqrt(zeta.to_complex());
    if (z - expected).norm() > 1e-12 * (1.0 + expected.norm()) {
        return Err(Error::InvalidArgument(format!(
            "QVE solution at {z} does not correspond to ζ = {}",
            zeta.to_complex()
        )));
    }
    let p = profile.p();
    if qve.m.len() != profile.dim() {
        return Err(Error::DimensionMismatch {
            expected: profile.dim(),
            got: qve.m.len(),
        });
    }
    let m: Vec<C64> = qve.m[..p].iter().map(|v| v / z).collect();
    let m2: Vec<C64> = qve.m[p..].iter().map(|v| v / z).collect();
    let residual = gram_residual(profile, zeta.to_complex(), &m)?;
    let allowed = 1e-6 * (1.0 + 1.0 / zeta.norm());
    if !(residual <= allowed) {
        return Err(Error::NonConvergence {
            iterations: qve.iterations,
            best_residual: residual,
        });
    }
    let avg_m = pi_average(&profile.row_average_weights(), &m);
    Ok(GramSolution {
        zeta,
        m,
        m2,
        residual,
        qve_residual: qve.residual,
        iterations: qve.iterations,
        avg_m,
    })
}

/// |z⟨e₋, 𝐦⟩ + ⟨e₋⟩|, which vanishes for exact solutions.
pub fn symmetry_residual(profile: &VarianceProfile, qve: &QveSolution) -> f64 {
    let pi = profile.pi_weights();
    let e = profile.e_minus();
    let avg: C64 = pi
        .iter()
        .zip(&e)
        .zip(&qve.m)
        .map(|((w, s), m)| m * (w * s))
        .sum();
    (qve.z.to_complex() * avg + profile.e_minus_average()).norm()
}

/// Without an initial guess, approach small Im z through decades of Im z
/// starting from Im z = 1, where the iteration converges from i·1.
fn cold_start(prof: &VarianceProfile, z: C64, opts: &SolverOptions) -> Result<(Vec<C64>, usize)> {
    let mut etas = Vec::new();
    let mut eta = 1.0f64;
    while eta > 10.0 * z.im {
        etas.push(eta);
        eta /= 10.0;
    }
    let mut total = 0;
    let mut m = None;
    for eta in etas {
        let (sol, it) = fixed_point_newton(prof, C64::new(z.re, eta), m.take(), opts)?;
        total += it;
        m = Some(sol);
    }
    let (sol, it) = fixed_point_newton(prof, z, m, opts)?;
    Ok((sol, total + it))
}

/// Damped fixed-point iteration with a Newton finish. Works on whatever
/// profile it is given; compression happens in the caller.
fn fixed_point_newton(
    prof: &VarianceProfile,
    z: C64,
    init: Option<Vec<C64>>,
    opts: &SolverOptions,
) -> Result<(Vec<C64>, usize)> {
    let dim = prof.dim();
    let mut m = init.unwrap_or_else(|| vec![C64::new(0.0, (1.0f64).min(1.0 / z.im)); dim]);
    let mut sm = vec![C64::new(0.0, 0.0); dim];
    prof.apply_bold_s_into(&m, &mut sm);
    let mut res = residual_with(z, &m, &sm);
    let mut best = (res, m.clone());
    let mut gamma = 1.0f64;
    let mut successes = 0;
    let mut newton_cooldown = 0usize;
    let mut checkpoint = res;
    let mut stagnating = false;
    let mut cand_sm = vec![C64::new(0.0, 0.0); dim];

    let mut it = 0;
    while it < opts.max_iter {
        if res <= opts.tol {
            return Ok((m, it));
        }
        it += 1;
        if opts.newton && newton_cooldown == 0 && (res < opts.newton_threshold || stagnating) {
            if let Some((m_new, sm_new, r_new)) = newton_step(prof, z, &m, &sm, res) {
                m = m_new;
                sm = sm_new;
                res = r_new;
                if res < best.0 {
                    best = (res, m.clone());
                }
                continue;
            }
            newton_cooldown = 20;
            stagnating = false;
        }
        newton_cooldown = newton_cooldown.saturating_sub(1);

        let cand: Vec<C64> = m
            .iter()
            .zip(&sm)
            .map(|(mi, si)| mi * (1.0 - gamma) - (z + si).inv() * gamma)
            .collect();
        prof.apply_bold_s_into(&cand, &mut cand_sm);
        let r_c = residual_with(z, &cand, &cand_sm);
        let admissible = all_in_upper(&cand) && r_c.is_finite();
        if admissible && (r_c < res || gamma <= opts.gamma_min) {
            m = cand;
            std::mem::swap(&mut sm, &mut cand_sm);
            res = r_c;
            successes += 1;
            if successes >= 5 {
                gamma = 1.0;
                successes = 0;
            }
            if res < best.0 {
                best = (res, m.clone());
            }
        } else {
            gamma = (gamma * 0.5).max(opts.gamma_min);
            successes = 0;
        }
        if it % 50 == 0 {
            stagnating = res > 0.9 * checkpoint;
            checkpoint = res;
        }
    }
    if res <= opts.tol {
        return Ok((m, it));
    }
    Err(Error::NonConvergence {
        iterations: it,
        best_residual: best.0,
    })
}

/// The operator `I − m²⊙𝐒` applied to y.
fn newton_operator(prof: &VarianceProfile, m2: &[C64], y: &[C64]) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); y.len()];
    prof.apply_bold_s_into(y, &mut out);
    out.iter_mut()
        .zip(m2)
        .zip(y)
        .for_each(|((o, w), yi)| *o = yi - w * *o);
    out
}

fn newton_dense(prof: &VarianceProfile, m2: &[C64]) -> DMatrix<C64> {
    let (p, n) = (prof.p(), prof.n());
    let dim = p + n;
    let mut a = DMatrix::<C64>::identity(dim, dim);
    let (w1, w2) = (prof.weight1(), prof.weight2());
    for k in 0..p {
        for q in 0..n {
            let s = prof.s(k, q);
            if s != 0.0 {
                a[(k, p + q)] -= m2[k] * (s * w2[q]);
                a[(p + q, k)] -= m2[p + q] * (s * w1[k]);
            }
        }
    }
    a
}

const DENSE_NEWTON_DIM: usize = 64;
const DENSE_FALLBACK_DIM: usize = 1500;

fn newton_step(
    prof: &VarianceProfile,
    z: C64,
    m: &[C64],
    sm: &[C64],
    res: f64,
) -> Option<(Vec<C64>, Vec<C64>, f64)> {
    let dim = m.len();
    let msq: Vec<C64> = m.iter().map(|v| v * v).collect();
    let rhs: Vec<C64> = m
        .iter()
        .zip(sm)
        .zip(&msq)
        .map(|((mi, si), w)| w * (mi.inv() + z + si))
        .collect();
    let y = if dim <= DENSE_NEWTON_DIM {
        dense_solve(newton_dense(prof, &msq), &rhs)?
    } else {
        let out = gmres(|v| newton_operator(prof, &msq, v), &rhs, 1e-13, 60, 10);
        if out.converged || dim > DENSE_FALLBACK_DIM {
            out.x
        } else {
            dense_solve(newton_dense(prof, &msq), &rhs)?
        }
    };
    let mut t = 1.0;
    let mut sm_c = vec![C64::new(0.0, 0.0); dim];
    for _ in 0..30 {
        let cand: Vec<C64> = m.iter().zip(&y).map(|(mi, yi)| mi + yi * t).collect();
        if all_in_upper(&cand) {
            prof.apply_bold_s_into(&cand, &mut sm_c);
            let r = residual_with(z, &cand, &sm_c);
            if r < res {
                return Some((cand, sm_c, r));
            }
        }
        t *= 0.5;
    }
    None
}

/// Record of one rung of the η-ladder at one energy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LadderStep {
    pub eta: f64,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Rung inserted after a failed step.
    pub inserted: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint<T> {
    pub energy: f64,
    /// Solution at the last rung of the ladder.
    pub solution: Option<T>,
    /// Solution at the rung before the last, for extrapolation in η.
    pub coarse: Option<T>,
    pub trace: Vec<LadderStep>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sweep<T> {
    pub ladder: Vec<f64>,
    pub points: Vec<SweepPoint<T>>,
}

impl<T> Sweep<T> {
    pub fn failures(&self) -> usize {
        self.points.iter().filter(|p| p.solution.is_none()).count()
    }

    /// Final-rung solutions, failing if any point failed.
    pub fn solutions(&self) -> Result<Vec<&T>> {
        self.points
            .iter()
            .map(|p| {
                p.solution.as_ref().ok_or_else(|| Error::NonConvergence {
                    iterations: p.trace.iter().map(|s| s.iterations).sum(),
                    best_residual: p.trace.last().map_or(f64::INFINITY, |s| s.residual),
                })
            })
            .collect()
    }

    pub fn coarse_solutions(&self) -> Option<Vec<&T>> {
        self.points.iter().map(|p| p.coarse.as_ref()).collect()
    }
}

/// Decades 1, 0.1, … down to `floor`, with `floor` appended when it is not
/// itself a power of ten.
pub fn default_eta_ladder(floor: f64) -> Result<Vec<f64>> {
    if !(floor > 0.0 && floor <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "η floor must lie in (0, 1], got {floor}"
        )));
    }
    let mut ladder = Vec::new();
    let mut eta = 1.0f64;
    let mut k = 0;
    while eta > floor * (1.0 + 1e-9) {
        ladder.push(eta);
        k += 1;
        eta = 10f64.powi(-k);
    }
    ladder.push(floor);
    Ok(ladder)
}

fn validate_ladder(ladder: &[f64], opts: &SolverOptions) -> Result<()> {
    if ladder.is_empty() {
        return Err(Error::InvalidArgument("η ladder is empty".into()));
    }
    if ladder.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidArgument(
            "η ladder must be strictly decreasing".into(),
        ));
    }
    let last = *ladder.last().expect("nonempty");
    if !(last >= opts.eta_floor * (1.0 - 1e-12)) {
        return Err(Error::InvalidArgument(format!(
            "η ladder reaches {last}, below the floor {}",
            opts.eta_floor
        )));
    }
    Ok(())
}

/// Energies per warm-started chunk; fixed so results do not depend on the
/// thread count.
const SWEEP_CHUNK: usize = 16;

fn sweep_with(
    prepared: &Prepared,
    energies: &[f64],
    ladder: &[f64],
    opts: &SolverOptions,
    param: impl Fn(f64, f64) -> Result<SpectralParameter> + Sync,
) -> Result<Sweep<QveSolution>> {
    opts.validate()?;
    validate_ladder(ladder, opts)?;
    if let Some(e) = energies.iter().find(|e| !e.is_finite()) {
        return Err(Error::InvalidArgument(format!("energy {e} is not finite")));
    }
    let points: Vec<SweepPoint<QveSolution>> = energies
        .par_chunks(SWEEP_CHUNK)
        .flat_map_iter(|chunk| {
            let mut neighbor: Option<Vec<C64>> = None;
            let mut out = Vec::with_capacity(chunk.len());
            for &e in chunk {
                let point = ladder_at(prepared, e, ladder, opts, &param, neighbor.as_deref());
                if let Some(first) = point.1 {
                    neighbor = Some(first);
                }
                out.push(point.0);
            }
            out
        })
        .collect();
    Ok(Sweep {
        ladder: ladder.to_vec(),
        points,
    })
}

/// Walk down the ladder at a single energy; also returns the top-rung
/// solution for warm-starting the next energy.
fn ladder_at(
    prepared: &Prepared,
    energy: f64,
    ladder: &[f64],
    opts: &SolverOptions,
    param: &impl Fn(f64, f64) -> Result<SpectralParameter>,
    neighbor: Option<&[C64]>,
) -> (SweepPoint<QveSolution>, Option<Vec<C64>>) {
    let mut trace = Vec::new();
    let mut current: Option<QveSolution> = None;
    let mut previous: Option<QveSolution> = None;
    let mut top: Option<Vec<C64>> = None;
    let mut error = None;

    let attempt = |eta: f64, init: Option<&[C64]>| -> Result<QveSolution> {
        prepared.solve(param(energy, eta)?, init, opts)
    };

    'rungs: for (i, &target) in ladder.iter().enumerate() {
        let mut pending = vec![(target, false)];
        let mut refinements = 0;
        while let Some(&(eta, inserted)) = pending.last() {
            let init =
                current
                    .as_ref()
                    .map(|s| s.m.as_slice())
                    .or(if i == 0 { neighbor } else { None });
            match attempt(eta, init) {
                Ok(sol) => {
                    trace.push(LadderStep {
                        eta,
                        residual: sol.residual,
                        iterations: sol.iterations,
                        converged: true,
                        inserted,
                    });
                    pending.pop();
                    if top.is_none() {
                        top = Some(sol.m.clone());
                    }
                    previous = current.replace(sol);
                }
                Err(err) => {
                    let best = match &err {
                        Error::NonConvergence { best_residual, .. } => *best_residual,
                        _ => f64::NAN,
                    };
                    trace.push(LadderStep {
                        eta,
                        residual: best,
                        iterations: 0,
                        converged: false,
                        inserted,
                    });
                    let upper = current.as_ref().map(|_| last_converged_eta(&trace));
                    match upper {
                        Some(hi) if refinements < opts.max_refinements && err.is_numerical() => {
                            refinements += 1;
                            pending.push(((hi * eta).sqrt(), true));
                        }
                        _ => {
                            error = Some(err.to_string());
                            break 'rungs;
                        }
                    }
                }
            }
        }
    }
    let failed = error.is_some();
    (
        SweepPoint {
            energy,
            solution: if failed { None } else { current },
            coarse: if failed { None } else { previous },
            trace,
            error,
        },
        top,
    )
}

fn last_converged_eta(trace: &[LadderStep]) -> f64 {
    trace
        .iter()
        .rev()
        .find(|s| s.converged)
        .map(|s| s.eta)
        .expect("a converged rung precedes")
}

/// QVE continuation at z = E + iη.
pub fn continuation_sweep(
    profile: &VarianceProfile,
    energies: &[f64],
    eta_ladder: &[f64],
    opts: &SolverOptions,
) -> Result<Sweep<QveSolution>> {
    let prepared = Prepared::new(profile, opts.compress);
    sweep_with(
        &prepared,
        energies,
        eta_ladder,
        opts,
        SpectralParameter::new,
    )
}

/// Gram continuation at ζ = E + iη (solved through the QVE at √ζ).
pub fn gram_sweep(
    profile: &VarianceProfile,
    energies: &[f64],
    eta_ladder: &[f64],
    opts: &SolverOptions,
) -> Result<Sweep<GramSolution>> {
    let prepared = Prepared::new(profile, opts.compress);
    let qve = sweep_with(&prepared, energies, eta_ladder, opts, |e, eta| {
        SpectralParameter::from_complex(principal_sqrt(Complex64::new(e, eta)))
    })?;
    let convert = |energy: f64, eta: Option<f64>, sol: &QveSolution| -> Result<GramSolution> {
        let eta = eta.ok_or_else(|| Error::InvalidArgument("missing rung".into()))?;
        gram_from_qve(profile, SpectralParameter::new(energy, eta)?, sol)
    };
    let points = qve
        .points
        .into_par_iter()
        .map(|pt| {
            let mut etas = pt.trace.iter().rev().filter(|s| s.converged).map(|s| s.eta);
            let (eta_fine, eta_coarse) = (etas.next(), etas.next());
            let mut error = pt.error;
            let solution =
                pt.solution
                    .as_ref()
                    .and_then(|s| match convert(pt.energy, eta_fine, s) {
                        Ok(g) => Some(g),
                        Err(e) => {
                            error.get_or_insert_with(|| e.to_string());
                            None
                        }
                    });
            let coarse = pt
                .coarse
                .as_ref()
                .and_then(|s| convert(pt.energy, eta_coarse, s).ok());
            SweepPoint {
                energy: pt.energy,
                solution,
                coarse: if error.is_some() { None } else { coarse },
                trace: pt.trace,
                error,
            }
        })
        .collect();
    Ok(Sweep {
        ladder: qve.ladder,
        points,
    })
}
