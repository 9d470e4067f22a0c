//! The saturated self-energy operator F = |𝐦|𝐒|𝐦|, the stability operator
//! B = |𝐦|²/𝐦² − F, and the scalars controlling the cubic stability equation.
//!
//! All spectral work happens in symmetrized coordinates û = √π ⊙ u, where F
//! becomes the real symmetric matrix [[0, A], [Aᵀ, 0]] with
//! A_kq = |m_k| √w1_k s_kq √w2_q |m_q|. Its eigenpairs come from the
//! singular value decomposition of the single block A. Profiles with repeated
//! rows or columns are analysed on the merged profile: merged classes carry
//! class-constant eigenvectors, and F vanishes on the class-mean-zero
//! complement, on which B acts as the unimodular diagonal |𝐦|²/𝐦².

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dyson::{QveSolution, SpectralParameter};
use crate::error::{Error, Result};
use crate::linalg::{cg, dot_real, norm2, norm2_real, C64};
use crate::profile::{Compressed, VarianceProfile};

/// Matrix-free F acting in the original coordinates, u ↦ |𝐦| ⊙ 𝐒(|𝐦| ⊙ u).
pub struct FOperator<'a> {
    profile: &'a VarianceProfile,
    abs_m: Vec<f64>,
}

impl<'a> FOperator<'a> {
    pub fn apply(&self, u: &[f64]) -> Result<Vec<f64>> {
        let scaled: Vec<f64> = u.iter().zip(&self.abs_m).map(|(a, b)| a * b).collect();
        let out = self.profile.apply_bold_s(&scaled)?;
        Ok(out.iter().zip(&self.abs_m).map(|(a, b)| a * b).collect())
    }

    pub fn dim(&self) -> usize {
        self.abs_m.len()
    }
}

pub fn build_f<'a>(profile: &'a VarianceProfile, qve: &QveSolution) -> Result<FOperator<'a>> {
    check_solution(profile, qve)?;
    Ok(FOperator {
        profile,
        abs_m: qve.m.iter().map(|v| v.norm()).collect(),
    })
}

fn check_solution(profile: &VarianceProfile, qve: &QveSolution) -> Result<()> {
    if qve.m.len() != profile.dim() {
        return Err(Error::DimensionMismatch {
            expected: profile.dim(),
            got: qve.m.len(),
        });
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityOptions {
    /// ⟨Im 𝐦⟩ below which the point counts as near-singular.
    pub eps_star: f64,
    pub compress: bool,
    pub cg_tol: f64,
    pub inverse_iterations: usize,
}

impl Default for StabilityOptions {
    fn default() -> Self {
        Self {
            eps_star: 0.05,
            compress: true,
            cg_tol: 1e-13,
            inverse_iterations: 500,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub z: SpectralParameter,
    pub norm_f: f64,
    /// L²(π)-normalized Perron vector of F.
    pub f_plus: Vec<f64>,
    pub f_minus: Vec<f64>,
    pub gap_fft: f64,
    pub beta: Complex64,
    /// Normalized by ⟨b, f₊⟩ = 1.
    pub b_vector: Vec<Complex64>,
    pub psi: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub psi_plus_sigma2: f64,
    /// ‖B⁻¹‖ on L²(π); infinite when B is numerically singular.
    pub norm_binv: f64,
    pub binv_saturated: bool,
    pub im_avg: f64,
    /// Components with Re 𝐦 = 0, where sign(Re 𝐦) is taken as +1.
    pub sign_ties: usize,
    pub in_eps_star_regime: bool,
    pub warnings: Vec<String>,
}

/// State shared by the stability computations at one solved point.
pub struct StabilityContext {
    z: SpectralParameter,
    p_full: usize,
    n_full: usize,
    /// π of the full profile.
    pi_full: Vec<f64>,
    compressed: Option<Compressed>,
    /// Merged profile, or the full one.
    work: VarianceProfile,
    m: Vec<C64>,
    sqrt_pi: Vec<f64>,
    a: DMatrix<f64>,
    norm_f: f64,
    second_singular: f64,
    /// Unit Euclidean Perron vector in symmetrized coordinates.
    f_hat: Vec<f64>,
    im_avg: f64,
}

impl StabilityContext {
    pub fn new(profile: &VarianceProfile, qve: &QveSolution, compress: bool) -> Result<Self> {
        check_solution(profile, qve)?;
        if profile.is_zero() {
            return Err(Error::UndefinedPerron("F vanishes for s = 0".into()));
        }
        let compressed = if compress {
            Some(profile.compress()).filter(|c| !c.is_trivial())
        } else {
            None
        };
        let (work, m) = match &compressed {
            Some(c) => (c.reduced.clone(), c.restrict(&qve.m)),
            None => (profile.clone(), qve.m.clone()),
        };
        let pi = work.pi_weights();
        let sqrt_pi: Vec<f64> = pi.iter().map(|v| v.sqrt()).collect();
        let (p, n) = (work.p(), work.n());
        let (w1, w2) = (work.weight1(), work.weight2());
        let a = DMatrix::from_fn(p, n, |k, q| {
            m[k].norm() * (w1[k] * w2[q]).sqrt() * work.s(k, q) * m[p + q].norm()
        });
        let (norm_f, second_singular, u, v) = top_singular_pairs(&a)?;
        let mut f_hat: Vec<f64> = u.iter().chain(v.iter()).map(|x| x / 2f64.sqrt()).collect();
        let total: f64 = f_hat.iter().sum();
        if total < 0.0 {
            f_hat.iter_mut().for_each(|x| *x = -*x);
        }
        let max = f_hat.iter().cloned().fold(0.0, f64::max);
        if f_hat.iter().any(|x| *x <= -1e-10 * max) {
            return Err(Error::UndefinedPerron(
                "top eigenvector changes sign (reducible profile)".into(),
            ));
        }
        if norm_f - second_singular <= 1e-12 * norm_f && p.min(n) > 1 {
            return Err(Error::UndefinedPerron(
                "top eigenvalue of F is degenerate (reducible profile)".into(),
            ));
        }
        f_hat.iter_mut().for_each(|x| *x = x.max(0.0));
        Ok(Self {
            z: qve.z,
            p_full: profile.p(),
            n_full: profile.n(),
            pi_full: profile.pi_weights(),
            compressed,
            im_avg: qve.im_avg(),
            work,
            m,
            sqrt_pi,
            a,
            norm_f,
            second_singular,
            f_hat,
        })
    }

    fn dim(&self) -> usize {
        self.work.dim()
    }

    fn expand<T: Copy>(&self, v: &[T]) -> Vec<T> {
        match &self.compressed {
            Some(c) => c.expand(v),
            None => v.to_vec(),
        }
    }

    fn has_complement(&self) -> bool {
        self.compressed.is_some()
    }

    fn apply_f_hat(&self, x: &[f64]) -> Vec<f64> {
        let p = self.work.p();
        let head = DVector::from_column_slice(&x[..p]);
        let tail = DVector::from_column_slice(&x[p..]);
        let top = &self.a * tail;
        let bottom = self.a.tr_mul(&head);
        top.iter().chain(bottom.iter()).cloned().collect()
    }

    pub fn norm_f(&self) -> f64 {
        self.norm_f
    }

    /// f₊ in original coordinates on the full index space.
    pub fn f_plus(&self) -> Vec<f64> {
        let reduced: Vec<f64> = self
            .f_hat
            .iter()
            .zip(&self.sqrt_pi)
            .map(|(f, s)| f / s)
            .collect();
        self.expand(&reduced)
    }

    pub fn f_minus(&self) -> Vec<f64> {
        let p = self.p_full;
        self.f_plus()
            .into_iter()
            .enumerate()
            .map(|(i, v)| if i < p { v } else { -v })
            .collect()
    }

    /// Difference of the two largest eigenvalues of FFᵗ on the row space.
    pub fn gap_fft(&self) -> f64 {
        let second = if self.work.p().min(self.work.n()) >= 2 {
            self.second_singular.powi(2)
        } else {
            0.0
        };
        let top = self.norm_f.powi(2);
        if self.p_full >= 2 && self.n_full >= 1 {
            top - second
        } else {
            top
        }
    }

    fn b_hat(&self) -> DMatrix<C64> {
        let dim = self.dim();
        let p = self.work.p();
        let mut b = DMatrix::<C64>::zeros(dim, dim);
        for x in 0..dim {
            let m = self.m[x];
            b[(x, x)] = C64::new(m.norm_sqr(), 0.0) / (m * m);
        }
        for k in 0..p {
            for q in 0..self.work.n() {
                let v = C64::new(self.a[(k, q)], 0.0);
                b[(k, p + q)] -= v;
                b[(p + q, k)] -= v;
            }
        }
        b
    }

    /// Smallest-modulus eigenvalue β of B and its eigenvector b, normalized so
    /// that ⟨b, f₊⟩ = 1 with the conjugate-linear first slot.
    pub fn smallest_eigenpair_b(&self, max_iter: usize) -> Result<(C64, Vec<C64>)> {
        let b = self.b_hat();
        let (beta, mut x) = smallest_eigenpair(&b, &self.f_hat, max_iter)?;
        let overlap: C64 = x.iter().zip(&self.f_hat).map(|(v, f)| v.conj() * *f).sum();
        if overlap.norm() < 1e-8 * norm2(&x) {
            return Err(Error::Normalization(format!(
                "⟨b, f₊⟩ = {overlap:.3e} vanishes"
            )));
        }
        let scale = overlap.conj().inv();
        x.iter_mut().for_each(|v| *v *= scale);
        let reduced: Vec<C64> = x.iter().zip(&self.sqrt_pi).map(|(v, s)| v / *s).collect();
        Ok((beta, self.expand(&reduced)))
    }

    /// D(w) = ⟨Q₊w, (‖F‖ + F)(1 − F)⁻¹ Q₊w⟩ for w on the full index space.
    pub fn quad_form_d(&self, w: &[f64], cg_tol: f64) -> Result<f64> {
        let full_dim = self.p_full + self.n_full;
        if w.len() != full_dim {
            return Err(Error::DimensionMismatch {
                expected: full_dim,
                got: w.len(),
            });
        }
        if self.norm_f >= 1.0 - 1e-14 {
            return Err(Error::IllConditioned(format!(
                "‖F‖ = {} is not below 1",
                self.norm_f
            )));
        }
        let (w_red, complement_sq) = self.split_classes(w);
        let mut x: Vec<f64> = w_red
            .iter()
            .zip(&self.sqrt_pi)
            .map(|(a, s)| a * s)
            .collect();
        let f = &self.f_hat;
        let project = |v: &mut [f64]| {
            let c = dot_real(v, f);
            v.iter_mut().zip(f).for_each(|(a, b)| *a -= c * b);
        };
        project(&mut x);
        let solve = cg(
            |v| {
                let fv = self.apply_f_hat(v);
                v.iter().zip(&fv).map(|(a, b)| a - b).collect()
            },
            project,
            &x,
            cg_tol,
            10 * self.dim() + 100,
        );
        if !solve.converged && solve.relative_residual > 1e-8 {
            return Err(Error::IllConditioned(format!(
                "(1 − F)⁻¹ did not converge (relative residual {:.2e})",
                solve.relative_residual
            )));
        }
        let y = solve.x;
        let fy = self.apply_f_hat(&y);
        let ky: Vec<f64> = y
            .iter()
            .zip(&fy)
            .map(|(a, b)| self.norm_f * a + b)
            .collect();
        // F vanishes on the class-mean-zero complement, where the form is ‖F‖·‖w‖²
        Ok(dot_real(&x, &ky) + self.norm_f * complement_sq)
    }

    /// π-weighted class averages of w, and ‖w − class average‖²_π.
    fn split_classes(&self, w: &[f64]) -> (Vec<f64>, f64) {
        let Some(c) = &self.compressed else {
            return (w.to_vec(), 0.0);
        };
        let pr = c.reduced.p();
        let p = self.p_full;
        let class = |x: usize| {
            if x < p {
                c.row_class[x]
            } else {
                pr + c.col_class[x - p]
            }
        };
        let mut sums = vec![0.0; self.dim()];
        let mut mass = vec![0.0; self.dim()];
        for (x, (&wx, &pix)) in w.iter().zip(&self.pi_full).enumerate() {
            sums[class(x)] += pix * wx;
            mass[class(x)] += pix;
        }
        let avg: Vec<f64> = sums.iter().zip(&mass).map(|(s, m)| s / m).collect();
        let complement = w
            .iter()
            .zip(&self.pi_full)
            .enumerate()
            .map(|(x, (&wx, &pix))| pix * (wx - avg[class(x)]).powi(2))
            .sum();
        (avg, complement)
    }

    /// (ψ, σ, α, number of sign ties).
    pub fn cubic_diagnostics(&self, cg_tol: f64) -> Result<(f64, f64, f64, usize)> {
        let f_plus = self.f_plus();
        let m = self.expand(&self.m);
        let pi_full = &self.pi_full;
        let mut ties = 0;
        let sign: Vec<f64> = m
            .iter()
            .map(|v| {
                if v.re == 0.0 {
                    ties += 1;
                    1.0
                } else {
                    v.re.signum()
                }
            })
            .collect();
        let pf2: Vec<f64> = sign.iter().zip(&f_plus).map(|(s, f)| s * f * f).collect();
        let psi = self.quad_form_d(&pf2, cg_tol)?.max(0.0);
        let sigma: f64 = pi_full
            .iter()
            .zip(&f_plus)
            .zip(&pf2)
            .map(|((w, f), g)| w * f * g)
            .sum();
        let alpha: f64 = pi_full
            .iter()
            .zip(&f_plus)
            .zip(&m)
            .map(|((w, f), v)| w * f * v.im / v.norm())
            .sum();
        Ok((psi, sigma, alpha, ties))
    }

    /// Estimate of ‖B⁻¹‖ on L²(π); `None` when B is numerically singular.
    pub fn binv_norm(&self, max_iter: usize) -> Option<f64> {
        let b = self.b_hat();
        let lu = b.clone().lu();
        let lu_h = b.adjoint().lu();
        let dim = self.dim();
        let mut x = DVector::from_iterator(
            dim,
            (0..dim).map(|i| C64::new(1.0 + 0.1 * (i % 7) as f64, 0.05 * (i % 3) as f64)),
        );
        x /= C64::new(x.norm(), 0.0);
        let mut estimate = 0.0;
        for _ in 0..max_iter.max(1) {
            let y = lu_h.solve(&x)?;
            let w = lu.solve(&y)?;
            let lambda = w.norm();
            if !lambda.is_finite() || lambda == 0.0 {
                return None;
            }
            x = w / C64::new(lambda, 0.0);
            let converged = (lambda - estimate).abs() <= 1e-12 * lambda;
            estimate = lambda;
            if converged {
                break;
            }
        }
        let norm = estimate.sqrt();
        if !norm.is_finite() || norm > 1e15 {
            return None;
        }
        Some(if self.has_complement() {
            norm.max(1.0)
        } else {
            norm
        })
    }

    pub fn report(&self, opts: &StabilityOptions) -> Result<StabilityReport> {
        let mut warnings = Vec::new();
        let in_regime = self.im_avg <= opts.eps_star;
        if !in_regime {
            warnings.push(format!(
                "⟨Im m⟩ = {:.3e} exceeds ε* = {}; β and b are outside the near-singular regime",
                self.im_avg, opts.eps_star
            ));
        }
        let (beta, b_vector) = self.smallest_eigenpair_b(opts.inverse_iterations)?;
        let (psi, sigma, alpha, sign_ties) = self.cubic_diagnostics(opts.cg_tol)?;
        if sign_ties > 0 {
            warnings.push(format!("{sign_ties} components with Re m = 0"));
        }
        let binv = self.binv_norm(200);
        Ok(StabilityReport {
            z: self.z,
            norm_f: self.norm_f,
            f_plus: self.f_plus(),
            f_minus: self.f_minus(),
            gap_fft: self.gap_fft(),
            beta,
            b_vector,
            psi,
            sigma,
            alpha,
            psi_plus_sigma2: psi + sigma * sigma,
            norm_binv: binv.unwrap_or(f64::INFINITY),
            binv_saturated: binv.is_none(),
            im_avg: self.im_avg,
            sign_ties,
            in_eps_star_regime: in_regime,
            warnings,
        })
    }
}

/// (σ₁, σ₂, u₁, v₁) of a p×n matrix, via the eigendecomposition of the
/// smaller Gram matrix. σ₂ = 0 when the smaller side has dimension 1.
fn top_singular_pairs(a: &DMatrix<f64>) -> Result<(f64, f64, Vec<f64>, Vec<f64>)> {
    let (p, n) = a.shape();
    let rows_side = p <= n;
    let g = if rows_side {
        a * a.transpose()
    } else {
        a.transpose() * a
    };
    let eig = SymmetricEigen::try_new(g, 1e-15, 0)
        .ok_or_else(|| Error::Eigensolve("symmetric eigensolve did not converge".into()))?;
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let l1 = eig.eigenvalues[order[0]].max(0.0);
    let l2 = order.get(1).map_or(0.0, |&i| eig.eigenvalues[i].max(0.0));
    let s1 = l1.sqrt();
    if !(s1 > 0.0) {
        return Err(Error::UndefinedPerron("F vanishes".into()));
    }
    let x: Vec<f64> = eig.eigenvectors.column(order[0]).iter().cloned().collect();
    let xv = DVector::from_column_slice(&x);
    let (u, v) = if rows_side {
        let v = a.tr_mul(&xv) / s1;
        (x, v.as_slice().to_vec())
    } else {
        let u = (a * &xv) / s1;
        (u.as_slice().to_vec(), x)
    };
    let (nu, nv) = (norm2_real(&u), norm2_real(&v));
    Ok((
        s1,
        l2.sqrt(),
        u.iter().map(|x| x / nu).collect(),
        v.iter().map(|x| x / nv).collect(),
    ))
}

fn rayleigh(b: &DMatrix<C64>, x: &DVector<C64>) -> (C64, f64) {
    let bx = b * x;
    let beta = x.dotc(&bx) / x.dotc(x);
    let res = (&bx - x * beta).norm() / x.norm();
    (beta, res)
}

/// Smallest-modulus eigenpair of a small dense complex matrix: inverse
/// iteration from `start`, falling back to the Schur eigenvalues and a
/// shifted inverse iteration when the plain iteration stalls.
fn smallest_eigenpair(b: &DMatrix<C64>, start: &[f64], max_iter: usize) -> Result<(C64, Vec<C64>)> {
    let dim = b.nrows();
    let scale = b.norm().max(1e-300);
    let init = DVector::from_iterator(dim, start.iter().map(|v| C64::new(*v, 0.0)));
    if let Some(found) = inverse_iteration(b, C64::new(0.0, 0.0), &init, max_iter, scale) {
        return Ok(found);
    }
    let eigenvalues = b
        .clone()
        .schur()
        .eigenvalues()
        .ok_or_else(|| Error::Eigensolve("complex Schur form failed".into()))?;
    let target = eigenvalues
        .iter()
        .cloned()
        .min_by(|a, c| a.norm().total_cmp(&c.norm()))
        .ok_or_else(|| Error::Eigensolve("empty spectrum".into()))?;
    let shift = target + C64::new(1e-10 * scale, 1e-10 * scale);
    inverse_iteration(b, shift, &init, max_iter, scale).ok_or_else(|| {
        Error::Eigensolve(format!(
            "inverse iteration at {target:.3e} did not converge"
        ))
    })
}

fn inverse_iteration(
    b: &DMatrix<C64>,
    shift: C64,
    init: &DVector<C64>,
    max_iter: usize,
    scale: f64,
) -> Option<(C64, Vec<C64>)> {
    let dim = b.nrows();
    let shifted = b - DMatrix::<C64>::identity(dim, dim) * shift;
    let lu = shifted.lu();
    let mut x = init / C64::new(init.norm(), 0.0);
    for _ in 0..max_iter {
        let y = match lu.solve(&x) {
            Some(y) if y.iter().all(|v| v.re.is_finite() && v.im.is_finite()) => y,
            // exactly singular: the shift is an eigenvalue, x is close enough
            _ => break,
        };
        let ny = y.norm();
        if ny == 0.0 {
            return None;
        }
        // keep the phase stable so convergence can be read off the iterates
        let pivot = y
            .iter()
            .cloned()
            .max_by(|a, c| a.norm().total_cmp(&c.norm()))?;
        x = &y * (pivot.conj() / (pivot.norm() * ny));
        let (_, res) = rayleigh(b, &x);
        if res <= 1e-12 * scale {
            break;
        }
    }
    let (beta, res) = rayleigh(b, &x);
    (res <= 1e-9 * scale.max(1.0)).then(|| (beta, x.as_slice().to_vec()))
}

/// ‖F‖, f₊ and f₋ (original coordinates, L²(π)-normalized).
pub fn leading_pair(
    profile: &VarianceProfile,
    qve: &QveSolution,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let ctx = StabilityContext::new(profile, qve, true)?;
    Ok((ctx.norm_f(), ctx.f_plus(), ctx.f_minus()))
}

pub fn spectral_gap_fft(profile: &VarianceProfile, qve: &QveSolution) -> Result<f64> {
    if profile.is_zero() {
        return Ok(0.0);
    }
    Ok(StabilityContext::new(profile, qve, true)?.gap_fft())
}

pub fn smallest_eigenpair_b(
    profile: &VarianceProfile,
    qve: &QveSolution,
) -> Result<(Complex64, Vec<Complex64>)> {
    StabilityContext::new(profile, qve, true)?.smallest_eigenpair_b(500)
}

/// (ψ, σ, α).
pub fn cubic_diagnostics(profile: &VarianceProfile, qve: &QveSolution) -> Result<(f64, f64, f64)> {
    let (psi, sigma, alpha, _) =
        StabilityContext::new(profile, qve, true)?.cubic_diagnostics(1e-13)?;
    Ok((psi, sigma, alpha))
}

/// (‖B⁻¹‖, ⟨Im 𝐦⟩); the norm is infinite when B is numerically singular.
pub fn binv_norm_probe(profile: &VarianceProfile, qve: &QveSolution) -> Result<(f64, f64)> {
    check_solution(profile, qve)?;
    if profile.is_zero() {
        // B = |m|²/m² is unimodular
        return Ok((1.0, qve.im_avg()));
    }
    let ctx = StabilityContext::new(profile, qve, true)?;
    Ok((ctx.binv_norm(200).unwrap_or(f64::INFINITY), qve.im_avg()))
}

pub fn stability_report(
    profile: &VarianceProfile,
    qve: &QveSolution,
    opts: &StabilityOptions,
) -> Result<StabilityReport> {
    StabilityContext::new(profile, qve, opts.compress)?.report(opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dyson::{solve_qve, SolverOptions};
    use crate::profile::{build_block_profile, BlockSpec};
    use proptest::prelude::*;

    fn solve(prof: &VarianceProfile, re: f64, im: f64) -> QveSolution {
        solve_qve(
            prof,
            SpectralParameter::new(re, im).unwrap(),
            None,
            &SolverOptions::default(),
        )
        .unwrap()
    }

    fn pi_dot(pi: &[f64], a: &[f64], b: &[f64]) -> f64 {
        pi.iter().zip(a).zip(b).map(|((w, x), y)| w * x * y).sum()
    }

    fn mixed_profile() -> VarianceProfile {
        let s: Vec<f64> = (0..15)
            .map(|i| 0.05 + ((i * 7) % 5) as f64 * 0.04)
            .collect();
        VarianceProfile::with_weights(3, 5, s, vec![1.0, 2.0, 0.5], vec![1.0; 5]).unwrap()
    }

    #[test]
    fn zero_profile() {
        let prof = VarianceProfile::constant(3, 3, 0.0).unwrap();
        let sol = solve(&prof, 0.5, 0.1);
        let f = build_f(&prof, &sol).unwrap();
        assert!(f.apply(&[1.0; 6]).unwrap().iter().all(|v| *v == 0.0));
        assert_eq!(spectral_gap_fft(&prof, &sol).unwrap(), 0.0);
        assert!(matches!(
            leading_pair(&prof, &sol),
            Err(Error::UndefinedPerron(_))
        ));
        assert_eq!(binv_norm_probe(&prof, &sol).unwrap().0, 1.0);
    }

    #[test]
    fn constant_profile_perron_is_flat() {
        let n = 12;
        let prof = VarianceProfile::constant(n, n, 1.0 / n as f64).unwrap();
        let sol = solve(&prof, 1.0, 0.05);
        let (norm_f, fp, fm) = leading_pair(&prof, &sol).unwrap();
        assert!(norm_f < 1.0);
        for v in &fp {
            assert!((v - 1.0).abs() < 1e-10, "{v}");
        }
        let pi = prof.pi_weights();
        assert!(pi_dot(&pi, &fp, &fm).abs() < 1e-14);
        let f = build_f(&prof, &sol).unwrap();
        let ffm = f.apply(&fm).unwrap();
        for (a, b) in ffm.iter().zip(&fm) {
            assert!((a + norm_f * b).abs() < 1e-10);
        }
    }

    #[test]
    fn gap_of_constant_profile_matches_dense_oracle() {
        let p = 50;
        let prof = VarianceProfile::constant(p, p, 1.0 / p as f64).unwrap();
        let sol = solve(&prof, 1.5, 0.02);
        // dense FFᵗ on the row space, symmetrized by the uniform weights
        let absm: Vec<f64> = sol.m.iter().map(|v| v.norm()).collect();
        let a = DMatrix::from_fn(p, p, |k, q| absm[k] * prof.s(k, q) * absm[p + q]);
        let g = &a * a.transpose();
        let mut ev: Vec<f64> = SymmetricEigen::new(g).eigenvalues.iter().cloned().collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        let gap = spectral_gap_fft(&prof, &sol).unwrap();
        assert!(
            (gap - (ev[0] - ev[1])).abs() < 1e-10,
            "{gap} vs {}",
            ev[0] - ev[1]
        );
    }

    #[test]
    fn gap_is_permutation_invariant() {
        let prof = mixed_profile();
        let sol = solve(&prof, 0.8, 0.03);
        let gap = spectral_gap_fft(&prof, &sol).unwrap();
        // reverse rows and columns
        let (p, n) = (prof.p(), prof.n());
        let s: Vec<f64> = (0..p)
            .flat_map(|k| (0..n).map(move |q| (k, q)))
            .map(|(k, q)| prof.s(p - 1 - k, n - 1 - q))
            .collect();
        let w1: Vec<f64> = prof.weight1().iter().rev().cloned().collect();
        let w2: Vec<f64> = prof.weight2().iter().rev().cloned().collect();
        let perm = VarianceProfile::with_weights(p, n, s, w1, w2).unwrap();
        let sol2 = solve(&perm, 0.8, 0.03);
        let gap2 = spectral_gap_fft(&perm, &sol2).unwrap();
        assert!((gap - gap2).abs() < 1e-10);
    }

    #[test]
    fn compressed_analysis_matches_full() {
        let prof = build_block_profile(&BlockSpec::cusp_blocks(), 6, 8).unwrap();
        let sol = solve(&prof, 1.2, 0.01);
        let opts_c = StabilityOptions::default();
        let opts_f = StabilityOptions {
            compress: false,
            ..Default::default()
        };
        let rc = stability_report(&prof, &sol, &opts_c).unwrap();
        let rf = stability_report(&prof, &sol, &opts_f).unwrap();
        assert!((rc.norm_f - rf.norm_f).abs() < 1e-12);
        assert!((rc.gap_fft - rf.gap_fft).abs() < 1e-10);
        assert!((rc.beta - rf.beta).norm() < 1e-9, "{} {}", rc.beta, rf.beta);
        assert!((rc.psi - rf.psi).abs() < 1e-8);
        assert!((rc.sigma - rf.sigma).abs() < 1e-12);
        assert!((rc.alpha - rf.alpha).abs() < 1e-12);
        assert!((rc.norm_binv - rf.norm_binv).abs() < 1e-6 * rf.norm_binv);
        for (a, b) in rc.f_plus.iter().zip(&rf.f_plus) {
            assert!((a - b).abs() < 1e-10);
        }
        for (a, b) in rc.b_vector.iter().zip(&rf.b_vector) {
            assert!((a - b).norm() < 1e-8);
        }
        // a vector that is not constant on classes
        let w: Vec<f64> = (0..14).map(|i| ((i * 5) % 7) as f64 - 3.0).collect();
        let ctx_c = StabilityContext::new(&prof, &sol, true).unwrap();
        let ctx_f = StabilityContext::new(&prof, &sol, false).unwrap();
        let (dc, df) = (
            ctx_c.quad_form_d(&w, 1e-13).unwrap(),
            ctx_f.quad_form_d(&w, 1e-13).unwrap(),
        );
        assert!((dc - df).abs() < 1e-9 * df.abs().max(1.0), "{dc} {df}");
    }

    #[test]
    fn quad_form_kernel() {
        let prof = mixed_profile();
        let sol = solve(&prof, 0.6, 0.01);
        let ctx = StabilityContext::new(&prof, &sol, true).unwrap();
        assert!(ctx.quad_form_d(&ctx.f_plus(), 1e-13).unwrap().abs() < 1e-10);
        assert!(ctx.quad_form_d(&ctx.f_minus(), 1e-13).unwrap().abs() < 1e-9);
    }

    #[test]
    fn far_off_support_beta() {
        let prof = mixed_profile();
        let sol = solve(&prof, 5.0 * prof.sigma_bound().sqrt() + 3.0, 1e-3);
        let (beta, b) = smallest_eigenpair_b(&prof, &sol).unwrap();
        assert!(beta.norm() > 0.5, "{beta}");
        let pi = prof.pi_weights();
        let (_, fp, _) = leading_pair(&prof, &sol).unwrap();
        let overlap: C64 = pi
            .iter()
            .zip(&b)
            .zip(&fp)
            .map(|((w, bv), f)| bv.conj() * (w * f))
            .sum();
        assert!((overlap - 1.0).norm() < 1e-10);
    }

    #[test]
    fn eigen_residual_of_b() {
        let prof = mixed_profile();
        let sol = solve(&prof, 0.9, 1e-4);
        let (beta, b) = smallest_eigenpair_b(&prof, &sol).unwrap();
        // B in original coordinates: (|m|²/m²) b − F b
        let f = build_f(&prof, &sol).unwrap();
        let re: Vec<f64> = b.iter().map(|v| v.re).collect();
        let im: Vec<f64> = b.iter().map(|v| v.im).collect();
        let (fre, fim) = (f.apply(&re).unwrap(), f.apply(&im).unwrap());
        let pi = prof.pi_weights();
        let mut res = 0.0;
        for x in 0..b.len() {
            let m = sol.m[x];
            let bx = C64::new(m.norm_sqr(), 0.0) / (m * m) * b[x] - C64::new(fre[x], fim[x]);
            res += pi[x] * (bx - beta * b[x]).norm_sqr();
        }
        assert!(res.sqrt() < 1e-8, "{}", res.sqrt());
    }

    #[test]
    fn beta_shrinks_toward_edge() {
        let n = 10;
        let prof = VarianceProfile::constant(n, n, 1.0 / n as f64).unwrap();
        // QVE edge at τ = 2
        let mut last = f64::INFINITY;
        for eta in [1e-1, 1e-2, 1e-3, 1e-4] {
            let sol = solve(&prof, 2.0, eta);
            let (beta, _) = smallest_eigenpair_b(&prof, &sol).unwrap();
            assert!(beta.norm() < last);
            last = beta.norm();
        }
    }

    #[test]
    fn binv_against_dense_svd() {
        let prof = mixed_profile();
        let sol = solve(&prof, 0.7, 0.02);
        let ctx = StabilityContext::new(&prof, &sol, false).unwrap();
        let b = ctx.b_hat();
        let sv = b.clone().svd(false, false).singular_values;
        let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
        let est = ctx.binv_norm(500).unwrap();
        assert!(
            (est - 1.0 / smin).abs() < 1e-6 * est,
            "{est} vs {}",
            1.0 / smin
        );
    }

    #[test]
    fn sigma_matches_direct_average() {
        let n = 10;
        let prof = VarianceProfile::constant(n, n, 1.0 / n as f64).unwrap();
        let sol = solve(&prof, 1.0, 1e-3);
        let (_, sigma, _) = cubic_diagnostics(&prof, &sol).unwrap();
        let (_, fp, _) = leading_pair(&prof, &sol).unwrap();
        let pi = prof.pi_weights();
        let direct: f64 = (0..fp.len())
            .map(|x| pi[x] * sol.m[x].re.signum() * fp[x].powi(3))
            .sum();
        assert!((sigma - direct).abs() < 1e-14);
    }

    fn strategy() -> impl Strategy<Value = (VarianceProfile, f64, f64, Vec<f64>, Vec<f64>)> {
        (1usize..5, 1usize..5).prop_flat_map(|(p, n)| {
            (
                proptest::collection::vec(0.05f64..1.0, p * n),
                -3.0f64..3.0,
                -4.0f64..0.0,
                proptest::collection::vec(-1.0f64..1.0, p + n),
                proptest::collection::vec(-1.0f64..1.0, p + n),
            )
                .prop_map(move |(s, re, le, u, v)| {
                    (
                        VarianceProfile::from_dense(p, n, s).unwrap(),
                        re,
                        10f64.powf(le),
                        u,
                        v,
                    )
                })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(60))]

        #[test]
        fn operator_properties((prof, re, eta, u, v) in strategy()) {
            let sol = solve(&prof, re, eta);
            let f = build_f(&prof, &sol).unwrap();
            let pi = prof.pi_weights();
            let (fu, fv) = (f.apply(&u).unwrap(), f.apply(&v).unwrap());
            let lhs = pi_dot(&pi, &u, &fv);
            let rhs = pi_dot(&pi, &fu, &v);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
            let e = prof.e_minus();
            let eu: Vec<f64> = u.iter().zip(&e).map(|(a, b)| a * b).collect();
            let feu = f.apply(&eu).unwrap();
            for x in 0..u.len() {
                prop_assert!((feu[x] + e[x] * fu[x]).abs() <= 1e-12);
            }
            let ctx = StabilityContext::new(&prof, &sol, true).unwrap();
            prop_assert!(ctx.norm_f() <= 1.0 + 1e-12);
            prop_assert!(ctx.f_plus().iter().all(|x| *x >= 0.0));
            let d = ctx.quad_form_d(&u, 1e-13).unwrap();
            prop_assert!(d >= -1e-10);
        }
    }
}
