//! Dense factorizations over [`Real`] and the root/branch block solver.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::real::Real;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("matrix not positive definite: pivot {pivot} = {value:e} (block of size {size})")]
pub struct NotPositiveDefinite {
    pub pivot: usize,
    pub value: f64,
    pub size: usize,
}

/// Lower Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Clone, Debug)]
pub struct Cholesky<T: Real> {
    l: DMatrix<T>,
}

impl<T: Real> Cholesky<T> {
    pub fn new(a: &DMatrix<T>) -> Result<Self, NotPositiveDefinite> {
        let n = a.nrows();
        let mut l = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > T::zero()) {
                return Err(NotPositiveDefinite { pivot: j, value: d.value(), size: n });
            }
            let d = d.sqrt();
            l[(j, j)] = d;
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / d;
            }
        }
        Ok(Self { l })
    }

    pub fn solve(&self, b: &DVector<T>) -> DVector<T> {
        let n = self.l.nrows();
        let mut y = b.clone();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.l[(i, k)] * y[k];
            }
            y[i] = s / self.l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= self.l[(k, i)] * y[k];
            }
            y[i] = s / self.l[(i, i)];
        }
        y
    }

    pub fn solve_matrix(&self, b: &DMatrix<T>) -> DMatrix<T> {
        let mut out = DMatrix::zeros(b.nrows(), b.ncols());
        for c in 0..b.ncols() {
            out.set_column(c, &self.solve(&b.column(c).into_owned()));
        }
        out
    }

    /// Smallest squared pivot, a cheap conditioning indicator.
    pub fn min_pivot(&self) -> T {
        (0..self.l.nrows()).map(|i| self.l[(i, i)] * self.l[(i, i)]).fold(T::infinity(), |a, b| a.min(b))
    }
}

/// Partition of the free coordinates into a root group and independent
/// branch groups. In a kinematic tree, coordinates of different subtrees
/// hanging off the root never share a body, so the mass matrix restricted
/// to free coordinates has the arrow shape
///
/// ```text
/// [ A   B1  B2 … ]
/// [ B1ᵀ D1  0  … ]
/// [ B2ᵀ 0   D2 … ]
/// ```
///
/// which is solved through the Schur complement on `A`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ArrowPartition {
    /// Indices into the free-coordinate vector.
    pub root: Vec<usize>,
    pub branches: Vec<Vec<usize>>,
}

impl ArrowPartition {
    pub fn dense(n: usize) -> Self {
        Self { root: (0..n).collect(), branches: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.root.len() + self.branches.iter().map(Vec::len).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Solves `m x = rhs` exploiting the arrow structure. `m` is the full
    /// free-coordinate matrix; only its root rows and diagonal branch blocks
    /// are read.
    pub fn solve<T: Real>(&self, m: &DMatrix<T>, rhs: &DVector<T>) -> Result<DVector<T>, NotPositiveDefinite> {
        let nr = self.root.len();
        let mut schur = DMatrix::from_fn(nr, nr, |i, j| m[(self.root[i], self.root[j])]);
        let mut rs = DVector::from_fn(nr, |i, _| rhs[self.root[i]]);
        let mut factors = Vec::with_capacity(self.branches.len());
        for b in &self.branches {
            let nb = b.len();
            let d = DMatrix::from_fn(nb, nb, |i, j| m[(b[i], b[j])]);
            let chol = Cholesky::new(&d)?;
            let bt = DMatrix::from_fn(nb, nr, |i, j| m[(b[i], self.root[j])]);
            let rb = DVector::from_fn(nb, |i, _| rhs[b[i]]);
            let dinv_bt = chol.solve_matrix(&bt);
            let dinv_rb = chol.solve(&rb);
            schur -= bt.transpose() * &dinv_bt;
            rs -= bt.transpose() * &dinv_rb;
            factors.push((dinv_bt, dinv_rb));
        }
        let xr = if nr > 0 { Cholesky::new(&schur)?.solve(&rs) } else { DVector::zeros(0) };
        let mut x = DVector::zeros(m.nrows());
        for (i, &k) in self.root.iter().enumerate() {
            x[k] = xr[i];
        }
        for (b, (dinv_bt, dinv_rb)) in self.branches.iter().zip(factors) {
            let xb = dinv_rb - dinv_bt * &xr;
            for (i, &k) in b.iter().enumerate() {
                x[k] = xb[i];
            }
        }
        Ok(x)
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0, "quadrature needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// `P_n(x)` and `P_n'(x)` by the three-term recurrence.
pub fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

pub fn legendre(n: usize, x: f64) -> f64 {
    match n {
        0 => 1.0,
        1 => x,
        _ => legendre_with_derivative(n, x).0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(n, n) * 0.5
    }

    #[test]
    fn cholesky_solves_spd_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_spd(9, &mut rng);
        let b = DVector::from_fn(9, |_, _| rng.random_range(-1.0..1.0));
        let x = Cholesky::new(&a).unwrap().solve(&b);
        assert!((&a * x - b).abs().max() < 1e-12);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let err = Cholesky::new(&a).unwrap_err();
        assert_eq!(err.pivot, 1);
    }

    #[test]
    fn arrow_solve_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        // 3 root coordinates, branches of 2, 4, 1; arrow sparsity imposed on a random SPD
        let part = ArrowPartition { root: vec![0, 4, 8], branches: vec![vec![1, 2], vec![3, 5, 6, 7], vec![9]] };
        let n = part.len();
        let mut group = vec![0usize; n];
        for (g, b) in part.branches.iter().enumerate() {
            for &k in b {
                group[k] = g + 1;
            }
        }
        let dense = random_spd(n, &mut rng);
        let mut m = dense.clone();
        for i in 0..n {
            for j in 0..n {
                if group[i] != 0 && group[j] != 0 && group[i] != group[j] {
                    m[(i, j)] = 0.0;
                }
            }
        }
        // keep it SPD after masking
        m += DMatrix::identity(n, n) * 10.0;
        let rhs = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let x = part.solve(&m, &rhs).unwrap();
        let xd = Cholesky::new(&m).unwrap().solve(&rhs);
        assert!((x - xd).abs().max() < 1e-12);
    }

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        for n in 1..12 {
            let (x, w) = gauss_legendre(n);
            for deg in 0..(2 * n) {
                let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert!((q - exact).abs() < 1e-13, "n={n} deg={deg}");
            }
        }
    }
}
