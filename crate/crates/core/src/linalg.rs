//! Small Krylov solvers and dense helpers shared by the solver and the
//! stability analysis.

use nalgebra::DMatrix;
use num_complex::Complex64;

pub(crate) type C64 = Complex64;

pub(crate) fn norm2(v: &[C64]) -> f64 {
    v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

pub(crate) fn dot_real(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2_real(a: &[f64]) -> f64 {
    dot_real(a, a).sqrt()
}

#[derive(Debug, Clone)]
pub(crate) struct KrylovOutcome<T> {
    pub x: Vec<T>,
    pub relative_residual: f64,
    pub converged: bool,
}

fn givens(a: C64, b: C64) -> (f64, C64) {
    let rho = (a.norm_sqr() + b.norm_sqr()).sqrt();
    if rho == 0.0 {
        return (1.0, C64::new(0.0, 0.0));
    }
    if a.norm() == 0.0 {
        return (0.0, b.conj() / rho);
    }
    let phase = a / a.norm();
    (a.norm() / rho, phase * b.conj() / rho)
}

/// Restarted GMRES for a complex matrix-free operator, zero initial guess.
pub(crate) fn gmres(
    mut apply: impl FnMut(&[C64]) -> Vec<C64>,
    b: &[C64],
    tol: f64,
    restart: usize,
    max_restarts: usize,
) -> KrylovOutcome<C64> {
    let n = b.len();
    let bnorm = norm2(b);
    let mut x = vec![C64::new(0.0, 0.0); n];
    if bnorm == 0.0 {
        return KrylovOutcome {
            x,
            relative_residual: 0.0,
            converged: true,
        };
    }
    let m = restart.min(n).max(1);
    for _ in 0..max_restarts.max(1) {
        let ax = apply(&x);
        let r: Vec<C64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let beta = norm2(&r);
        let rel = beta / bnorm;
        if rel <= tol {
            return KrylovOutcome {
                x,
                relative_residual: rel,
                converged: true,
            };
        }
        let mut basis: Vec<Vec<C64>> = vec![r.iter().map(|v| v / beta).collect()];
        let mut h = vec![vec![C64::new(0.0, 0.0); m]; m + 1];
        let mut cs = vec![0.0; m];
        let mut sn = vec![C64::new(0.0, 0.0); m];
        let mut g = vec![C64::new(0.0, 0.0); m + 1];
        g[0] = C64::new(beta, 0.0);
        let mut used = 0;
        for j in 0..m {
            let mut w = apply(&basis[j]);
            // modified Gram-Schmidt, twice for stability
            for _ in 0..2 {
                for (i, v) in basis.iter().enumerate() {
                    let hij: C64 = v.iter().zip(&w).map(|(a, b)| a.conj() * b).sum();
                    h[i][j] += hij;
                    w.iter_mut().zip(v).for_each(|(wi, vi)| *wi -= hij * vi);
                }
            }
            let wn = norm2(&w);
            h[j + 1][j] = C64::new(wn, 0.0);
            for i in 0..j {
                let t = cs[i] * h[i][j] + sn[i] * h[i + 1][j];
                h[i + 1][j] = -sn[i].conj() * h[i][j] + cs[i] * h[i + 1][j];
                h[i][j] = t;
            }
            let (c, s) = givens(h[j][j], h[j + 1][j]);
            cs[j] = c;
            sn[j] = s;
            h[j][j] = c * h[j][j] + s * h[j + 1][j];
            h[j + 1][j] = C64::new(0.0, 0.0);
            g[j + 1] = -s.conj() * g[j];
            g[j] *= c;
            used = j + 1;
            if g[j + 1].norm() / bnorm <= tol || wn <= 1e-300 {
                break;
            }
            basis.push(w.iter().map(|v| v / wn).collect());
        }
        let mut y = vec![C64::new(0.0, 0.0); used];
        for i in (0..used).rev() {
            let mut acc = g[i];
            for k in i + 1..used {
                acc -= h[i][k] * y[k];
            }
            y[i] = acc / h[i][i];
        }
        for (k, yk) in y.iter().enumerate() {
            x.iter_mut()
                .zip(&basis[k])
                .for_each(|(xi, vi)| *xi += yk * vi);
        }
    }
    let ax = apply(&x);
    let r: Vec<C64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let rel = norm2(&r) / bnorm;
    KrylovOutcome {
        x,
        relative_residual: rel,
        converged: rel <= tol,
    }
}

/// Conjugate gradients for a real symmetric positive operator. `project` is
/// applied to every search direction and iterate (deflation); pass the
/// identity when none is needed.
pub(crate) fn cg(
    mut apply: impl FnMut(&[f64]) -> Vec<f64>,
    project: impl Fn(&mut [f64]),
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> KrylovOutcome<f64> {
    let n = b.len();
    let mut x = vec![0.0; n];
    let bnorm = norm2_real(b);
    if bnorm == 0.0 {
        return KrylovOutcome {
            x,
            relative_residual: 0.0,
            converged: true,
        };
    }
    let mut r = b.to_vec();
    project(&mut r);
    let mut d = r.clone();
    let mut rr = dot_real(&r, &r);
    for _ in 0..max_iter {
        if rr.sqrt() <= tol * bnorm {
            break;
        }
        let ad = apply(&d);
        let dad = dot_real(&d, &ad);
        if dad <= 0.0 {
            break;
        }
        let alpha = rr / dad;
        x.iter_mut().zip(&d).for_each(|(xi, di)| *xi += alpha * di);
        r.iter_mut().zip(&ad).for_each(|(ri, ai)| *ri -= alpha * ai);
        project(&mut r);
        let rr_new = dot_real(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        d.iter_mut()
            .zip(&r)
            .for_each(|(di, ri)| *di = ri + beta * *di);
        project(&mut d);
    }
    project(&mut x);
    let ax = apply(&x);
    let mut res: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    project(&mut res);
    let rel = norm2_real(&res) / bnorm;
    KrylovOutcome {
        x,
        relative_residual: rel,
        converged: rel <= tol.max(1e-13) * 10.0,
    }
}

/// Dense LU solve; `None` when the matrix is numerically singular.
pub(crate) fn dense_solve(a: DMatrix<C64>, b: &[C64]) -> Option<Vec<C64>> {
    let lu = a.lu();
    let rhs = nalgebra::DVector::from_column_slice(b);
    lu.solve(&rhs).map(|x| x.as_slice().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn test_matrix(n: usize) -> DMatrix<C64> {
        DMatrix::from_fn(n, n, |i, j| {
            let base = if i == j {
                c(3.0, 0.5)
            } else {
                C64::new(0.0, 0.0)
            };
            base + c(
                ((i * 7 + j * 3) % 11) as f64 / 20.0,
                ((i + 2 * j) % 5) as f64 / 30.0,
            )
        })
    }

    #[test]
    fn gmres_matches_dense() {
        let n = 30;
        let a = test_matrix(n);
        let b: Vec<C64> = (0..n)
            .map(|i| c(i as f64 * 0.1, 1.0 - i as f64 * 0.05))
            .collect();
        let apply = |x: &[C64]| {
            let v = nalgebra::DVector::from_column_slice(x);
            (&a * v).as_slice().to_vec()
        };
        let out = gmres(apply, &b, 1e-12, 10, 50);
        assert!(out.converged, "{}", out.relative_residual);
        let exact = dense_solve(a.clone(), &b).unwrap();
        for (x, y) in out.x.iter().zip(&exact) {
            assert!((x - y).norm() < 1e-9);
        }
    }

    #[test]
    fn cg_with_deflation() {
        // diag(0, 1, ..., 5): singular in e_0, SPD on its complement
        let apply = |x: &[f64]| x.iter().enumerate().map(|(i, v)| i as f64 * v).collect();
        let project = |v: &mut [f64]| v[0] = 0.0;
        let b = vec![7.0, 1.0, 2.0, 3.0, 4.0, 5.0];
        let out = cg(apply, project, &b, 1e-13, 100);
        assert!(out.converged);
        assert_eq!(out.x[0], 0.0);
        for (i, v) in out.x.iter().enumerate().skip(1) {
            assert!((v - 1.0).abs() < 1e-12, "{i}: {v}");
        }
    }
}
