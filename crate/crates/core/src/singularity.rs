//! Edges and cusps of the Gram density: classification of support boundary
//! points, power-law fits, the local gap size Δ_ρ and κ, and a parameter scan
//! for profiles whose support components touch.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{
    default_threshold, density_from_sweep, detect_support, linspace, DensityCurve, SupportSet,
};
use crate::dyson::{default_eta_ladder, gram_sweep, GramSolution, SolverOptions};
use crate::error::{Error, Result};
use crate::profile::{build_weighted_block_profile, BlockSpec, VarianceProfile};

/// Side of E₀ on which the fitted samples lie.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
    Both,
}

impl Side {
    fn contains(self, e: f64, e0: f64) -> bool {
        match self {
            Side::Left => e < e0,
            Side::Right => e > e0,
            Side::Both => e != e0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub e0: f64,
    pub exponent: f64,
    pub coefficient: f64,
    /// RMS of the residual of log ν.
    pub residual: f64,
    pub window: [f64; 2],
    pub points: usize,
}

fn least_squares(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = points.len() as f64;
    let (mx, my) = points
        .iter()
        .fold((0.0, 0.0), |(a, b), (x, y)| (a + x / n, b + y / n));
    let sxx: f64 = points.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rms = (points
        .iter()
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    (slope, intercept, rms)
}

fn fit_samples(
    energies: &[f64],
    density: &[f64],
    e0: f64,
    side: Side,
    window: [f64; 2],
) -> Result<ExponentFit> {
    let [wmin, wmax] = window;
    if !(wmin > 0.0 && wmax > wmin) {
        return Err(Error::InvalidArgument(format!(
            "fit window [{wmin}, {wmax}] is empty"
        )));
    }
    let mut points = Vec::new();
    for (&e, &v) in energies.iter().zip(density) {
        let lambda = (e - e0).abs();
        if !side.contains(e, e0) || lambda < wmin || lambda > wmax {
            continue;
        }
        if !(v > 0.0) {
            return Err(Error::Fit(format!(
                "nonpositive density {v:.3e} at E = {e} inside the fit window"
            )));
        }
        points.push((lambda.ln(), v.ln()));
    }
    if points.len() < 5 {
        return Err(Error::Fit(format!(
            "{} usable points in [{wmin}, {wmax}], need 5",
            points.len()
        )));
    }
    let (exponent, intercept, residual) = least_squares(&points);
    Ok(ExponentFit {
        e0,
        exponent,
        coefficient: intercept.exp(),
        residual,
        window,
        points: points.len(),
    })
}

/// Least-squares fit of log ν against log|E − E₀| over |E − E₀| ∈ window.
pub fn fit_exponent(
    curve: &DensityCurve,
    e0: f64,
    side: Side,
    window: [f64; 2],
) -> Result<ExponentFit> {
    fit_samples(&curve.energies, &curve.avg_density, e0, side, window)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BoundaryKind {
    EdgeLeft,
    EdgeRight,
    Cusp,
    NearCusp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPoint {
    pub energy: f64,
    pub kind: BoundaryKind,
    pub fit: Option<ExponentFit>,
    /// Width of the gap for gap-type cusp candidates.
    pub gap: Option<f64>,
    /// Interior minimum over the lower neighbouring peak, for dip-type points.
    pub depth: Option<f64>,
    pub note: Option<String>,
}

impl BoundaryPoint {
    fn new(energy: f64, kind: BoundaryKind) -> Self {
        Self {
            energy,
            kind,
            fit: None,
            gap: None,
            depth: None,
            note: None,
        }
    }

    /// Side of the energy on which the density lives.
    pub fn side(&self) -> Side {
        match self.kind {
            BoundaryKind::EdgeLeft => Side::Right,
            BoundaryKind::EdgeRight => Side::Left,
            _ => Side::Both,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingularityReport {
    pub support: SupportSet,
    pub boundary_points: Vec<BoundaryPoint>,
}

impl SingularityReport {
    pub fn count(&self, kind: BoundaryKind) -> usize {
        self.boundary_points
            .iter()
            .filter(|b| b.kind == kind)
            .count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifyOptions {
    /// Internal gaps up to this width collapse to a cusp.
    pub cusp_gap_tol: f64,
    /// Gaps up to this width are reported as near-cusps.
    pub near_cusp_gap: f64,
    /// Interior minima with depth up to this value are cusps.
    pub cusp_depth: f64,
    pub near_cusp_depth: f64,
    /// Fit window; defaults to [5·spacing, min(0.1, width/4)].
    pub window: Option<[f64; 2]>,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        Self {
            cusp_gap_tol: 1e-2,
            near_cusp_gap: 1e-1,
            cusp_depth: 0.05,
            near_cusp_depth: 0.3,
            window: None,
        }
    }
}

fn default_window(spacing: f64, width: f64) -> [f64; 2] {
    [5.0 * spacing, (0.1f64).min(width / 4.0)]
}

/// Interior local minima of an interval as (index, depth).
fn interior_minima(curve: &DensityCurve, lo: f64, hi: f64, max_depth: f64) -> Vec<(usize, f64)> {
    let d = &curve.avg_density;
    let idx: Vec<usize> = (0..curve.len())
        .filter(|&i| curve.energies[i] > lo && curve.energies[i] < hi)
        .collect();
    if idx.len() < 3 {
        return Vec::new();
    }
    let mut candidates: Vec<(usize, f64)> = Vec::new();
    for w in idx.windows(3) {
        let i = w[1];
        if !(d[i] <= d[w[0]] && d[i] <= d[w[2]] && (d[i] < d[w[0]] || d[i] < d[w[2]])) {
            continue;
        }
        let left = idx
            .iter()
            .take_while(|&&j| j < i)
            .map(|&j| d[j])
            .fold(0.0, f64::max);
        let right = idx
            .iter()
            .filter(|&&j| j > i)
            .map(|&j| d[j])
            .fold(0.0, f64::max);
        let peak = left.min(right);
        if peak <= 0.0 {
            continue;
        }
        let depth = d[i] / peak;
        if depth <= max_depth {
            candidates.push((i, depth));
        }
    }
    candidates.sort_by(|a, b| d[a.0].total_cmp(&d[b.0]));
    let mut accepted: Vec<(usize, f64)> = Vec::new();
    for (i, depth) in candidates {
        let separate = accepted.iter().all(|&(j, _)| {
            let (a, b) = (i.min(j), i.max(j));
            let between = (a..=b).map(|k| d[k]).fold(0.0, f64::max);
            between * max_depth >= d[i]
        });
        if separate {
            accepted.push((i, depth));
        }
    }
    accepted.sort_by_key(|a| a.0);
    accepted
}

/// Boundary classification of a density curve on its detected support.
pub fn classify_boundary(
    curve: &DensityCurve,
    support: &SupportSet,
    opts: &ClassifyOptions,
) -> SingularityReport {
    let spacing = curve.min_spacing();
    let intervals = &support.intervals;
    let mut points: Vec<BoundaryPoint> = Vec::new();
    let window_for = |width: f64| {
        opts.window
            .unwrap_or_else(|| default_window(spacing, width))
    };
    let fit_into = |bp: &mut BoundaryPoint, window: [f64; 2]| match fit_exponent(
        curve,
        bp.energy,
        bp.side(),
        window,
    ) {
        Ok(fit) => bp.fit = Some(fit),
        Err(e) => bp.note = Some(e.to_string()),
    };
    let mut i = 0;
    while i < intervals.len() {
        let iv = &intervals[i];
        // the left end was already consumed by a cusp candidate when no edge is needed
        let starts_merged = i > 0 && intervals[i].start - intervals[i - 1].end <= opts.cusp_gap_tol;
        if !starts_merged {
            let mut bp = BoundaryPoint::new(iv.start, BoundaryKind::EdgeLeft);
            if iv.clipped_left {
                bp.note = Some("clipped at the lower cutoff".into());
            } else {
                fit_into(&mut bp, window_for(iv.width()));
            }
            points.push(bp);
        }
        for (j, depth) in interior_minima(curve, iv.start, iv.end, opts.near_cusp_depth) {
            let kind = if depth <= opts.cusp_depth {
                BoundaryKind::Cusp
            } else {
                BoundaryKind::NearCusp
            };
            let e = curve.energies[j];
            let mut bp = BoundaryPoint::new(e, kind);
            bp.depth = Some(depth);
            if kind == BoundaryKind::Cusp {
                fit_into(&mut bp, window_for((e - iv.start).min(iv.end - e)));
            }
            points.push(bp);
        }
        if let Some(next) = intervals.get(i + 1) {
            let gap = next.start - iv.end;
            let mid = 0.5 * (iv.end + next.start);
            if gap <= opts.cusp_gap_tol {
                let mut bp = BoundaryPoint::new(mid, BoundaryKind::Cusp);
                bp.gap = Some(gap);
                let mut w = window_for(iv.width().min(next.width()));
                w[0] = w[0].max(gap);
                if w[1] > w[0] {
                    fit_into(&mut bp, w);
                }
                points.push(bp);
                i += 1;
                continue;
            }
            let mut bp = BoundaryPoint::new(iv.end, BoundaryKind::EdgeRight);
            fit_into(&mut bp, window_for(iv.width()));
            points.push(bp);
            if gap <= opts.near_cusp_gap {
                let mut near = BoundaryPoint::new(mid, BoundaryKind::NearCusp);
                near.gap = Some(gap);
                points.push(near);
            }
        } else {
            let mut bp = BoundaryPoint::new(iv.end, BoundaryKind::EdgeRight);
            if iv.clipped_right {
                bp.note = Some("clipped at the end of the grid".into());
            } else {
                fit_into(&mut bp, window_for(iv.width()));
            }
            points.push(bp);
        }
        i += 1;
    }
    SingularityReport {
        support: support.clone(),
        boundary_points: points,
    }
}

/// Extrapolated averaged Gram density at arbitrary energies.
pub fn gram_density_at(
    profile: &VarianceProfile,
    energies: &[f64],
    eta_floor: f64,
    opts: &SolverOptions,
) -> Result<Vec<f64>> {
    let mut order: Vec<usize> = (0..energies.len()).collect();
    order.sort_by(|&a, &b| energies[a].total_cmp(&energies[b]));
    let mut sorted: Vec<f64> = order.iter().map(|&i| energies[i]).collect();
    sorted.dedup();
    let ladder = default_eta_ladder(eta_floor)?;
    let opts = SolverOptions {
        eta_floor: opts.eta_floor.min(eta_floor),
        ..opts.clone()
    };
    let sweep = gram_sweep(profile, &sorted, &ladder, &opts)?;
    let curve = density_from_sweep(profile, &sweep, true, false)?;
    Ok(energies.iter().map(|e| curve.interpolate(*e)).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefineOptions {
    pub window: [f64; 2],
    /// Log-spaced samples per side.
    pub samples: usize,
    pub eta_floor: f64,
    pub solver: SolverOptions,
}

impl Default for RefineOptions {
    fn default() -> Self {
        Self {
            window: [1e-3, 1e-1],
            samples: 40,
            eta_floor: 1e-7,
            solver: SolverOptions::default(),
        }
    }
}

/// Fit with E₀ as a free parameter: the density is resampled on log-spaced
/// offsets around `e0` and E₀ is chosen to minimize the fit residual within
/// ±¾ of the inner window edge.
pub fn refine_fit(
    sampler: impl Fn(&[f64]) -> Result<Vec<f64>>,
    e0: f64,
    side: Side,
    window: [f64; 2],
    samples: usize,
) -> Result<ExponentFit> {
    let [wmin, wmax] = window;
    if !(wmin > 0.0 && wmax > wmin) || samples < 5 {
        return Err(Error::InvalidArgument("invalid refinement window".into()));
    }
    let offsets: Vec<f64> = linspace((wmin / 4.0).ln(), wmax.ln(), samples)
        .into_iter()
        .map(f64::exp)
        .collect();
    let mut energies = Vec::new();
    if matches!(side, Side::Left | Side::Both) {
        energies.extend(offsets.iter().rev().map(|l| e0 - l));
    }
    if matches!(side, Side::Right | Side::Both) {
        energies.extend(offsets.iter().map(|l| e0 + l));
    }
    let density = sampler(&energies)?;
    let objective = |c: f64| {
        fit_samples(&energies, &density, c, side, window)
            .map(|f| f.residual)
            .unwrap_or(f64::INFINITY)
    };
    let h = 0.75 * wmin;
    let candidates = linspace(e0 - h, e0 + h, 121);
    let step = 2.0 * h / 120.0;
    let best = candidates
        .iter()
        .cloned()
        .min_by(|a, b| objective(*a).total_cmp(&objective(*b)))
        .unwrap_or(e0);
    let center = golden_min(
        &objective,
        best - step,
        best + step,
        1e-14 * (1.0 + e0.abs()),
    );
    let center = if objective(center) <= objective(best) {
        center
    } else {
        best
    };
    fit_samples(&energies, &density, center, side, window)
}

fn golden_min(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() <= tol {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Sharpen a grid-level boundary estimate within ±`bracket`: edges by
/// bisection on a density threshold far below the neighbouring values,
/// cusps by golden-section search for the minimum.
pub fn locate_boundary(
    density: impl Fn(f64) -> Result<f64>,
    e0: f64,
    kind: BoundaryKind,
    bracket: f64,
) -> Result<f64> {
    let (lo, hi) = (e0 - bracket, e0 + bracket);
    match kind {
        BoundaryKind::EdgeLeft | BoundaryKind::EdgeRight => {
            let (d_lo, d_hi) = (density(lo)?, density(hi)?);
            let inside_hi = kind == BoundaryKind::EdgeLeft;
            let inner = if inside_hi { d_hi } else { d_lo };
            let tau = 1e-6 * inner;
            let outer = if inside_hi { d_lo } else { d_hi };
            if !(inner > 0.0) || outer > tau {
                return Err(Error::Fit(format!(
                    "no density crossing around E = {e0} within ±{bracket}"
                )));
            }
            // invariant: `out` is outside the support, `ins` inside
            let (mut out, mut ins) = if inside_hi { (lo, hi) } else { (hi, lo) };
            for _ in 0..60 {
                let mid = 0.5 * (out + ins);
                if density(mid)? > tau {
                    ins = mid;
                } else {
                    out = mid;
                }
                if (ins - out).abs() <= 1e-13 * e0.abs().max(1.0) {
                    break;
                }
            }
            Ok(0.5 * (out + ins))
        }
        BoundaryKind::Cusp | BoundaryKind::NearCusp => {
            let f = |e: f64| density(e).unwrap_or(f64::INFINITY);
            Ok(golden_min(&f, lo, hi, 1e-13 * e0.abs().max(1.0)))
        }
    }
}

/// Relocate and refit every non-clipped boundary point of a report on
/// resampled data, with E₀ free in the fit. `spacing` is the grid spacing
/// the report was classified on.
pub fn refine_report(
    profile: &VarianceProfile,
    report: &SingularityReport,
    spacing: f64,
    opts: &RefineOptions,
) -> SingularityReport {
    let sampler = |e: &[f64]| gram_density_at(profile, e, opts.eta_floor, &opts.solver);
    let single = |e: f64| sampler(&[e]).map(|v| v[0]);
    let mut out = report.clone();
    for bp in out.boundary_points.iter_mut() {
        if bp.kind == BoundaryKind::NearCusp {
            continue;
        }
        if bp.note.as_deref().is_some_and(|n| n.starts_with("clipped")) {
            continue;
        }
        let bracket = 2.0 * spacing + bp.gap.unwrap_or(0.0);
        let located = locate_boundary(single, bp.energy, bp.kind, bracket)
            .and_then(|e| refine_fit(sampler, e, bp.side(), opts.window, opts.samples));
        match located {
            Ok(fit) => {
                bp.energy = fit.e0;
                bp.fit = Some(fit);
                bp.note = None;
            }
            Err(e) => bp.note = Some(format!("refinement failed: {e}")),
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeOptions {
    pub delta: f64,
    pub grid_points: usize,
    /// Upper end of the energy grid as a multiple of Σ.
    pub grid_extent: f64,
    pub eta_floor: f64,
    pub min_component_width: f64,
    pub classify: ClassifyOptions,
    pub refine: Option<RefineOptions>,
    pub solver: SolverOptions,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        Self {
            delta: 0.05,
            grid_points: 2000,
            grid_extent: 1.1,
            eta_floor: 1e-6,
            min_component_width: 0.0,
            classify: ClassifyOptions::default(),
            refine: Some(RefineOptions::default()),
            solver: SolverOptions::default(),
        }
    }
}

/// Density on [δ, extent·Σ], support, classification and optional refinement.
pub fn analyze_profile(
    profile: &VarianceProfile,
    opts: &AnalyzeOptions,
) -> Result<(DensityCurve, SingularityReport)> {
    if !(opts.delta > 0.0) || opts.grid_points < 2 {
        return Err(Error::InvalidArgument(
            "analysis needs δ > 0 and at least two grid points".into(),
        ));
    }
    let upper = (opts.grid_extent * profile.sigma_bound()).max(2.0 * opts.delta);
    let energies = linspace(opts.delta, upper, opts.grid_points);
    let ladder = default_eta_ladder(opts.eta_floor)?;
    let sweep = gram_sweep(profile, &energies, &ladder, &opts.solver)?;
    let curve = density_from_sweep(profile, &sweep, true, false)?;
    let support = detect_support(
        &curve,
        default_threshold(&curve),
        opts.delta,
        opts.min_component_width,
    );
    let mut report = classify_boundary(&curve, &support, &opts.classify);
    if let Some(r) = &opts.refine {
        report = refine_report(profile, &report, curve.min_spacing(), r);
    }
    Ok((curve, report))
}

/// Support with a radius ρ below half the smallest component width.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapFunction {
    pub support: SupportSet,
    pub rho: f64,
}

impl GapFunction {
    pub fn new(support: SupportSet, rho: f64) -> Result<Self> {
        if !(rho >= 0.0 && rho.is_finite()) {
            return Err(Error::Precondition(format!(
                "ρ = {rho} must be finite and ≥ 0"
            )));
        }
        if let Some(w) = support.min_width() {
            if rho >= 0.5 * w {
                return Err(Error::Precondition(format!(
                    "ρ = {rho} is not below half the smallest component width {w}"
                )));
            }
        }
        Ok(Self { support, rho })
    }

    /// ρ = ρ*/2 with ρ* half the smallest component width.
    pub fn with_default_rho(support: SupportSet) -> Result<Self> {
        let rho = support.min_width().map_or(0.0, |w| 0.25 * w);
        Self::new(support, rho)
    }
}

/// Local gap size Δ_ρ(E); infinite for an empty support.
pub fn delta_rho(gap: &GapFunction, e: f64) -> f64 {
    let iv = &gap.support.intervals;
    let rho = gap.rho;
    let (Some(first), Some(last)) = (iv.first(), iv.last()) else {
        return f64::INFINITY;
    };
    for w in iv.windows(2) {
        if w[0].end - rho <= e && e <= w[1].start + rho {
            return w[1].start - w[0].end;
        }
    }
    if e <= first.start + rho || e >= last.end - rho {
        return 1.0;
    }
    0.0
}

/// (Δ^{1/3} + ⟨Im m⟩)⁻¹, infinite when both vanish.
pub fn kappa_value(delta: f64, im_avg: f64) -> f64 {
    let denom = delta.cbrt() + im_avg;
    if denom > 0.0 {
        1.0 / denom
    } else {
        f64::INFINITY
    }
}

pub fn kappa(gap: &GapFunction, solution: &GramSolution) -> f64 {
    kappa_value(delta_rho(gap, solution.zeta.re), solution.im_avg())
}

/// The scanned parameter of a block family.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FamilyParameter {
    /// Each row block has t·n indices, so p = t·n·(number of row blocks).
    Aspect,
    /// All block values multiplied by t.
    Scale,
    /// Column fractions (t, 1 − t); needs two column blocks.
    ColFraction,
    RowFraction,
    BlockValue {
        row: usize,
        col: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileFamily {
    pub spec: BlockSpec,
    pub p: f64,
    pub n: f64,
    pub parameter: FamilyParameter,
}

impl ProfileFamily {
    /// Blocks 6, 4, 4, 3 with equal fractions, scanned over the aspect.
    pub fn cusp_blocks(n: f64) -> Self {
        Self {
            spec: BlockSpec::cusp_blocks(),
            p: n,
            n,
            parameter: FamilyParameter::Aspect,
        }
    }

    pub fn build(&self, t: f64) -> Result<VarianceProfile> {
        if !t.is_finite() {
            return Err(Error::InvalidArgument(format!("family parameter {t}")));
        }
        let mut spec = self.spec.clone();
        let mut p = self.p;
        let pair = |t: f64, key: &str| -> Result<Vec<f64>> {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::config(key, format!("fraction {t} outside (0, 1)")));
            }
            Ok(vec![t, 1.0 - t])
        };
        match self.parameter {
            FamilyParameter::Aspect => p = t * self.n * spec.row_fractions.len() as f64,
            FamilyParameter::Scale => spec.block_values.iter_mut().flatten().for_each(|v| *v *= t),
            FamilyParameter::ColFraction => spec.col_fractions = pair(t, "col_fractions")?,
            FamilyParameter::RowFraction => spec.row_fractions = pair(t, "row_fractions")?,
            FamilyParameter::BlockValue { row, col } => {
                let slot = spec
                    .block_values
                    .get_mut(row)
                    .and_then(|r| r.get_mut(col))
                    .ok_or_else(|| {
                        Error::config("parameter", format!("no block ({row}, {col})"))
                    })?;
                *slot = t;
            }
        }
        build_weighted_block_profile(&spec, p, self.n)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CuspScanOptions {
    pub delta: f64,
    pub grid_points: usize,
    pub eta_floor: f64,
    /// η of the direct solves used to locate the density minimum.
    pub dip_eta: f64,
    /// Minimum density, relative to the lower peak, below which the
    /// components count as separated.
    pub dip_threshold: f64,
    pub bisection_steps: usize,
    pub window: [f64; 2],
    /// Energy the cusp is compared to when reporting a scale factor.
    pub reference_energy: Option<f64>,
    pub solver: SolverOptions,
}

impl Default for CuspScanOptions {
    fn default() -> Self {
        Self {
            delta: 0.05,
            grid_points: 1200,
            eta_floor: 1e-6,
            dip_eta: 1e-8,
            dip_threshold: 1e-4,
            bisection_steps: 40,
            window: [1e-3, 1e-1],
            reference_energy: None,
            solver: SolverOptions::default(),
        }
    }
}

/// Grid-level summary of one scanned parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanSample {
    pub parameter: f64,
    /// Smallest internal gap when positive; minus the relative depth of the
    /// deepest interior minimum otherwise; absent without internal structure.
    pub functional: Option<f64>,
    /// Energy window between the two peaks around the gap or dip.
    pub dip_window: Option<(f64, f64)>,
    pub components: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CuspScanReport {
    pub samples: Vec<ScanSample>,
    pub parameter: f64,
    /// Parameter bracket around the closing point, when a sign change exists.
    pub bracket: Option<(f64, f64)>,
    pub cusp_energy: f64,
    pub min_density: f64,
    pub fit: Option<ExponentFit>,
    /// reference_energy / cusp_energy.
    pub scale_factor: Option<f64>,
    pub report: SingularityReport,
}

fn peak_left_of(curve: &DensityCurve, e: f64) -> Option<(f64, f64)> {
    (0..curve.len())
        .filter(|&i| curve.energies[i] < e)
        .map(|i| (curve.energies[i], curve.avg_density[i]))
        .max_by(|a, b| a.1.total_cmp(&b.1))
}

fn peak_right_of(curve: &DensityCurve, e: f64) -> Option<(f64, f64)> {
    (0..curve.len())
        .filter(|&i| curve.energies[i] > e)
        .map(|i| (curve.energies[i], curve.avg_density[i]))
        .max_by(|a, b| a.1.total_cmp(&b.1))
}

fn scan_sample(family: &ProfileFamily, t: f64, opts: &CuspScanOptions) -> Result<ScanSample> {
    let profile = family.build(t)?;
    let upper = 1.1 * profile.sigma_bound();
    let energies = linspace(opts.delta, upper, opts.grid_points);
    let ladder = default_eta_ladder(opts.eta_floor)?;
    let sweep = gram_sweep(&profile, &energies, &ladder, &opts.solver)?;
    let curve = density_from_sweep(&profile, &sweep, true, false)?;
    let support = detect_support(&curve, default_threshold(&curve), opts.delta, 0.0);
    let iv = &support.intervals;
    let mut functional = None;
    let mut dip_window = None;
    // smallest internal gap between non-clipped components
    if let Some((k, g)) = iv
        .windows(2)
        .enumerate()
        .map(|(k, w)| (k, w[1].start - w[0].end))
        .min_by(|a, b| a.1.total_cmp(&b.1))
    {
        let mid = 0.5 * (iv[k].end + iv[k + 1].start);
        functional = Some(g);
        dip_window = peak_left_of(&curve, mid)
            .zip(peak_right_of(&curve, mid))
            .map(|(a, b)| (a.0, b.0));
    } else if let Some(only) = iv.first() {
        let minima = interior_minima(&curve, only.start, only.end, 1.0);
        if let Some(&(i, depth)) = minima.iter().min_by(|a, b| a.1.total_cmp(&b.1)) {
            let e = curve.energies[i];
            functional = Some(-depth);
            dip_window = peak_left_of(&curve, e)
                .filter(|_| true)
                .zip(peak_right_of(&curve, e))
                .map(|(a, b)| (a.0, b.0));
        }
    }
    Ok(ScanSample {
        parameter: t,
        functional,
        dip_window,
        components: iv.len(),
    })
}

/// Minimum of the density between two peaks at a single small η:
/// (location, minimum, lower peak).
fn locate_dip(
    profile: &VarianceProfile,
    window: (f64, f64),
    opts: &CuspScanOptions,
) -> Result<(f64, f64, f64)> {
    let ladder = default_eta_ladder(opts.dip_eta)?;
    let solver = SolverOptions {
        eta_floor: opts.solver.eta_floor.min(opts.dip_eta),
        ..opts.solver.clone()
    };
    let density = |e: f64| -> f64 {
        gram_sweep(profile, &[e], &ladder, &solver)
            .and_then(|s| density_from_sweep(profile, &s, false, false))
            .map(|c| c.avg_density[0])
            .unwrap_or(f64::NAN)
    };
    let (a, b) = window;
    // coarse pass, then golden section around the smallest sample
    let coarse = linspace(a, b, 41);
    let values: Vec<f64> = coarse.iter().map(|e| density(*e)).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonConvergence {
            iterations: 0,
            best_residual: f64::INFINITY,
        });
    }
    let peak = values[0].min(values[values.len() - 1]);
    let i = (0..values.len())
        .min_by(|&x, &y| values[x].total_cmp(&values[y]))
        .unwrap_or(0);
    let lo = coarse[i.saturating_sub(1)];
    let hi = coarse[(i + 1).min(coarse.len() - 1)];
    let e = golden_min(&density, lo, hi, 1e-12 * b.abs().max(1.0));
    Ok((e, density(e), peak))
}

/// Scan a block family for the parameter at which two support components
/// touch. The grid is classified in parallel; a sign change of the gap/depth
/// functional is then bisected using the minimum density between the peaks.
pub fn cusp_scan(
    family: &ProfileFamily,
    grid: &[f64],
    opts: &CuspScanOptions,
) -> Result<CuspScanReport> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty parameter grid".into()));
    }
    let samples: Vec<ScanSample> = grid
        .par_iter()
        .map(|&t| scan_sample(family, t, opts))
        .collect::<Result<_>>()?;
    let structured: Vec<&ScanSample> = samples.iter().filter(|s| s.functional.is_some()).collect();
    if structured.is_empty() {
        return Err(Error::CuspNotFound(
            "no gap or interior minimum anywhere on the parameter grid".into(),
        ));
    }
    let merged_at = |t: f64, window: (f64, f64)| -> Result<bool> {
        let (_, min, peak) = locate_dip(&family.build(t)?, window, opts)?;
        Ok(min > opts.dip_threshold * peak)
    };
    let bracket = fine_bracket(&samples, &merged_at)?;
    let (parameter, bracket_out, window) = match bracket {
        Some((split_idx, merged_idx)) => {
            let (s0, s1) = (&samples[split_idx], &samples[merged_idx]);
            let window = merge_windows(s0.dip_window, s1.dip_window)
                .ok_or_else(|| Error::CuspNotFound("no peaks around the dip".into()))?;
            let (mut split, mut merged) = (s0.parameter, s1.parameter);
            for _ in 0..opts.bisection_steps {
                let mid = 0.5 * (split + merged);
                if merged_at(mid, window)? {
                    merged = mid;
                } else {
                    split = mid;
                }
            }
            (merged, Some((s0.parameter, s1.parameter)), window)
        }
        None => {
            let best = structured
                .iter()
                .min_by(|a, b| {
                    a.functional
                        .unwrap()
                        .abs()
                        .total_cmp(&b.functional.unwrap().abs())
                })
                .copied()
                .ok_or_else(|| Error::CuspNotFound("no structured sample".into()))?;
            let window = best
                .dip_window
                .ok_or_else(|| Error::CuspNotFound("no peaks around the dip".into()))?;
            (best.parameter, None, window)
        }
    };
    let profile = family.build(parameter)?;
    let (cusp_energy, min_density, _) = locate_dip(&profile, window, opts)?;
    let analyze = AnalyzeOptions {
        delta: opts.delta,
        grid_points: opts.grid_points,
        eta_floor: opts.eta_floor,
        refine: Some(RefineOptions {
            window: opts.window,
            solver: opts.solver.clone(),
            ..Default::default()
        }),
        solver: opts.solver.clone(),
        ..Default::default()
    };
    let (_, mut report) = analyze_profile(&profile, &analyze)?;
    let sampler = |e: &[f64]| gram_density_at(&profile, e, opts.dip_eta.max(1e-7), &opts.solver);
    let fit = refine_fit(sampler, cusp_energy, Side::Both, opts.window, 40).ok();
    let energy = fit.as_ref().map_or(cusp_energy, |f| f.e0);
    // replace the grid-level cusp closest to the located minimum
    let existing = report
        .boundary_points
        .iter()
        .enumerate()
        .filter(|(_, b)| matches!(b.kind, BoundaryKind::Cusp | BoundaryKind::NearCusp))
        .min_by(|a, b| {
            (a.1.energy - energy)
                .abs()
                .total_cmp(&(b.1.energy - energy).abs())
        })
        .map(|(i, _)| i);
    let mut cusp = BoundaryPoint::new(energy, BoundaryKind::Cusp);
    cusp.fit = fit.clone();
    cusp.depth = Some(0.0);
    match existing {
        Some(i) => report.boundary_points[i] = cusp,
        None => {
            report.boundary_points.push(cusp);
            report
                .boundary_points
                .sort_by(|a, b| a.energy.total_cmp(&b.energy));
        }
    }
    Ok(CuspScanReport {
        samples,
        parameter,
        bracket: bracket_out,
        cusp_energy: energy,
        min_density,
        fit,
        scale_factor: opts.reference_energy.map(|r| r / energy),
        report,
    })
}

/// Adjacent samples (split, merged) whose labels disagree under the fine
/// dip test. Starts at the first sign change of the grid functional and
/// walks toward the side the fine test disagrees with.
fn fine_bracket(
    samples: &[ScanSample],
    merged_at: &impl Fn(f64, (f64, f64)) -> Result<bool>,
) -> Result<Option<(usize, usize)>> {
    let coarse_merged = |s: &ScanSample| s.functional.map(|f| f <= 0.0);
    let Some(mut i) = samples.windows(2).position(
        |w| matches!((coarse_merged(&w[0]), coarse_merged(&w[1])), (Some(a), Some(b)) if a != b),
    ) else {
        return Ok(None);
    };
    let label = |k: usize| -> Result<Option<bool>> {
        match samples[k].dip_window {
            Some(w) => merged_at(samples[k].parameter, w).map(Some),
            None => Ok(None),
        }
    };
    // direction in the grid toward the merged side
    let forward = coarse_merged(&samples[i + 1]) == Some(true);
    for _ in 0..samples.len() {
        let (a, b) = (label(i)?, label(i + 1)?);
        match (a, b) {
            (Some(x), Some(y)) if x != y => {
                return Ok(Some(if x { (i + 1, i) } else { (i, i + 1) }));
            }
            (Some(x), Some(_)) => {
                // both split: move toward merged; both merged: move away
                let step_forward = forward != x;
                if step_forward && i + 2 < samples.len() {
                    i += 1;
                } else if !step_forward && i > 0 {
                    i -= 1;
                } else {
                    return Ok(None);
                }
            }
            _ => return Ok(None),
        }
    }
    Ok(None)
}

fn merge_windows(a: Option<(f64, f64)>, b: Option<(f64, f64)>) -> Option<(f64, f64)> {
    match (a, b) {
        (Some(x), Some(y)) => Some((x.0.max(y.0), x.1.min(y.1))).filter(|w| w.1 > w.0),
        (x, y) => x.or(y),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::CurveKind;
    use crate::profile::Normalization;
    use proptest::prelude::*;

    fn synthetic(e: &[f64], f: impl Fn(f64) -> f64) -> DensityCurve {
        DensityCurve::from_samples(
            e.to_vec(),
            e.iter().map(|x| f(*x)).collect(),
            CurveKind::Gram,
        )
        .unwrap()
    }

    #[test]
    fn exact_power_law() {
        let e: Vec<f64> = linspace(-3.0, -1.0, 30)
            .into_iter()
            .map(|x| 1.0 + 10f64.powf(x))
            .collect();
        let curve = synthetic(&e, |x| 2.0 * (x - 1.0).sqrt());
        let fit = fit_exponent(&curve, 1.0, Side::Right, [1e-3, 1e-1]).unwrap();
        assert!((fit.exponent - 0.5).abs() < 1e-12);
        assert!((fit.coefficient - 2.0).abs() < 1e-12);
        assert!(fit.residual < 1e-12);
    }

    #[test]
    fn corrected_cube_root() {
        let e: Vec<f64> = linspace(-3.0, -2.0, 25)
            .into_iter()
            .map(|x| 10f64.powf(x))
            .collect();
        let curve = synthetic(&e, |l| l.cbrt() * (1.0 + 0.1 * l.cbrt()));
        let fit = fit_exponent(&curve, 0.0, Side::Right, [1e-3, 1e-2]).unwrap();
        assert!((fit.exponent - 1.0 / 3.0).abs() < 0.02, "{}", fit.exponent);
    }

    #[test]
    fn fit_needs_points_and_positivity() {
        let e = linspace(0.0, 1.0, 11);
        let curve = synthetic(&e, |x| x);
        assert!(matches!(
            fit_exponent(&curve, 0.0, Side::Right, [0.5, 0.7]),
            Err(Error::Fit(_))
        ));
        let curve = synthetic(&e, |_| 0.0);
        assert!(matches!(
            fit_exponent(&curve, 0.0, Side::Right, [0.05, 1.0]),
            Err(Error::Fit(_))
        ));
    }

    #[test]
    fn synthetic_cusp_is_one_cusp() {
        let e = linspace(1.0, 3.0, 2001);
        let curve = synthetic(&e, |x| {
            let l: f64 = x - 2.0;
            0.5 * l.abs().cbrt() * (1.0 - l * l).max(0.0).sqrt()
        });
        let support = detect_support(&curve, default_threshold(&curve), 0.5, 0.0);
        let report = classify_boundary(&curve, &support, &ClassifyOptions::default());
        assert_eq!(report.count(BoundaryKind::Cusp), 1, "{report:?}");
        let cusp = report
            .boundary_points
            .iter()
            .find(|b| b.kind == BoundaryKind::Cusp)
            .unwrap();
        assert!((cusp.energy - 2.0).abs() < 1e-9);
        let fit = fit_exponent(&curve, 2.0, Side::Both, [5e-3, 0.05]).unwrap();
        assert!((fit.exponent - 1.0 / 3.0).abs() < 0.01, "{}", fit.exponent);
    }

    #[test]
    fn two_bumps_give_four_edges() {
        let e = linspace(0.0, 10.0, 4001);
        let curve = synthetic(&e, |x| {
            let bump = |c: f64| (1.0 - (x - c) * (x - c)).max(0.0).sqrt();
            bump(3.0) + bump(7.0)
        });
        let support = detect_support(&curve, default_threshold(&curve), 0.05, 0.0);
        let report = classify_boundary(&curve, &support, &ClassifyOptions::default());
        assert_eq!(report.count(BoundaryKind::EdgeLeft), 2);
        assert_eq!(report.count(BoundaryKind::EdgeRight), 2);
        assert_eq!(report.count(BoundaryKind::Cusp), 0);
        for bp in &report.boundary_points {
            let fit = bp.fit.as_ref().unwrap();
            assert!((fit.exponent - 0.5).abs() < 0.05, "{fit:?}");
        }
    }

    #[test]
    fn small_gap_collapses_to_cusp() {
        let e = linspace(0.0, 4.0, 4001);
        let curve = synthetic(&e, |x| {
            let bump = |c: f64| (0.25 - (x - c) * (x - c)).max(0.0).sqrt();
            bump(1.0) + bump(2.004)
        });
        let support = detect_support(&curve, default_threshold(&curve), 0.05, 0.0);
        assert_eq!(support.intervals.len(), 2);
        let report = classify_boundary(&curve, &support, &ClassifyOptions::default());
        assert_eq!(report.count(BoundaryKind::Cusp), 1);
        assert_eq!(report.count(BoundaryKind::EdgeLeft), 1);
        assert_eq!(report.count(BoundaryKind::EdgeRight), 1);
        let cusp = report
            .boundary_points
            .iter()
            .find(|b| b.kind == BoundaryKind::Cusp)
            .unwrap();
        assert!(cusp.gap.unwrap() > 0.0);
    }

    #[test]
    fn empty_support_empty_report() {
        let e = linspace(0.0, 1.0, 10);
        let curve = synthetic(&e, |_| 0.0);
        let support = detect_support(&curve, 0.0, 0.05, 0.0);
        assert!(
            classify_boundary(&curve, &support, &ClassifyOptions::default())
                .boundary_points
                .is_empty()
        );
    }

    fn mp() -> VarianceProfile {
        VarianceProfile::constant(40, 40, 1.0 / 40.0).unwrap()
    }

    #[test]
    fn marchenko_pastur_edges() {
        let opts = AnalyzeOptions {
            grid_points: 800,
            ..Default::default()
        };
        let (_, report) = analyze_profile(&mp(), &opts).unwrap();
        assert_eq!(report.boundary_points.len(), 2, "{report:?}");
        let left = &report.boundary_points[0];
        assert_eq!(left.kind, BoundaryKind::EdgeLeft);
        assert!(left.note.as_deref().unwrap().contains("clipped"));
        let right = &report.boundary_points[1];
        assert_eq!(right.kind, BoundaryKind::EdgeRight);
        assert!((right.energy - 4.0).abs() < 1e-4, "{}", right.energy);
        let fit = right.fit.as_ref().unwrap();
        assert!((fit.exponent - 0.5).abs() < 0.03, "{fit:?}");
    }

    #[test]
    fn delta_rho_cases() {
        let support = SupportSet::from_intervals(&[(1.0, 2.0), (3.0, 4.0)], 0.05).unwrap();
        let gap = GapFunction::new(support, 0.1).unwrap();
        assert_eq!(delta_rho(&gap, 2.05), 1.0);
        assert_eq!(delta_rho(&gap, 2.5), 1.0);
        assert_eq!(delta_rho(&gap, 1.5), 0.0);
        assert_eq!(delta_rho(&gap, 0.5), 1.0);
        assert_eq!(delta_rho(&gap, 3.95), 1.0);
        let narrow = SupportSet::from_intervals(&[(1.0, 2.0), (2.5, 4.0)], 0.05).unwrap();
        let gap = GapFunction::new(narrow, 0.1).unwrap();
        assert_eq!(delta_rho(&gap, 3.0), 0.0);
        assert_eq!(delta_rho(&gap, 2.55), 0.5);
        assert!(
            GapFunction::new(SupportSet::from_intervals(&[(0.0, 1.0)], 0.0).unwrap(), 0.5).is_err()
        );
        let empty = GapFunction::new(SupportSet::from_intervals(&[], 0.0).unwrap(), 0.1).unwrap();
        assert!(delta_rho(&empty, 1.0).is_infinite());
    }

    #[test]
    fn kappa_examples() {
        assert_eq!(kappa_value(1.0, 0.0), 1.0);
        assert_eq!(kappa_value(0.0, 0.5), 2.0);
        assert!((kappa_value(0.001, 0.1) - 5.0).abs() < 1e-12);
        assert!(kappa_value(0.0, 0.0).is_infinite());
    }

    #[test]
    fn single_block_family_has_no_cusp() {
        let family = ProfileFamily {
            spec: BlockSpec::uniform(vec![vec![1.0]], Normalization::Dimension),
            p: 1.0,
            n: 1.0,
            parameter: FamilyParameter::Aspect,
        };
        let opts = CuspScanOptions {
            grid_points: 300,
            ..Default::default()
        };
        let err = cusp_scan(&family, &[0.5, 1.0, 2.0], &opts).unwrap_err();
        assert!(matches!(err, Error::CuspNotFound(_)));
    }

    #[test]
    fn family_parameters() {
        let fam = ProfileFamily::cusp_blocks(100.0);
        let prof = fam.build(0.25).unwrap();
        assert_eq!(prof.weight1(), &[25.0, 25.0]);
        assert_eq!(prof.weight2(), &[50.0, 50.0]);
        assert!((prof.s(0, 0) - 6.0 / 150.0).abs() < 1e-15);
        let frac = ProfileFamily {
            parameter: FamilyParameter::ColFraction,
            ..fam.clone()
        };
        assert_eq!(frac.build(0.2).unwrap().weight2(), &[20.0, 80.0]);
        assert!(frac.build(1.2).is_err());
        let value = ProfileFamily {
            parameter: FamilyParameter::BlockValue { row: 1, col: 1 },
            ..fam
        };
        assert!((value.build(9.0).unwrap().s(1, 1) - 9.0 / 200.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn power_laws_recovered(a in prop::sample::select(vec![1.0 / 3.0, 0.5, 1.0]), c in 0.1f64..10.0, e0 in -5.0f64..5.0) {
            let e: Vec<f64> = linspace(-3.0, -1.0, 20).into_iter().map(|x| e0 - 10f64.powf(x)).rev().collect();
            let curve = synthetic(&e, |x| c * (e0 - x).powf(a));
            let fit = fit_exponent(&curve, e0, Side::Left, [1e-3 * 0.999, 0.1 * 1.001]).unwrap();
            prop_assert!((fit.exponent - a).abs() < 1e-6);
            prop_assert!((fit.coefficient - c).abs() < 1e-6 * c);
        }

        #[test]
        fn kappa_decreases_in_im(d in 0.0f64..2.0, a in 0.0f64..1.0, b in 0.0f64..1.0) {
            prop_assume!(a < b && (d > 0.0 || a > 0.0));
            prop_assert!(kappa_value(d, b) < kappa_value(d, a));
        }
    }
}
