//! Windowed Galerkin reduced-order models for one linear system family.
//!
//! A [`ReducedBasis`] keeps an orthonormal `V` together with an upper
//! triangular `R` such that the retained raw snapshots are `X = V R`. New
//! snapshots are orthogonalized with classical Gram-Schmidt plus one
//! reorthogonalization pass. Once the window is full, the oldest snapshot is
//! dropped by re-factorizing the trailing columns of the extended `R`:
//!
//! ```text
//! [V, v] , [[R, c], [0, β]]      extended factorization of [X, x]
//! Z S = QR(R_ext[:, 1..])        drop the first snapshot
//! V ← [V, v] Z,  R ← S
//! ```

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::krylov::Criterion;
use crate::sparse::SparseOperator;
use crate::vector::{dot, norm2};

/// Snapshots whose orthogonal remainder falls below this fraction of their
/// norm are rejected.
pub const DEPENDENCE_TOL: f64 = 1e-12;

/// Reduced systems whose 2-norm condition number exceeds this are refused.
pub const MAX_REDUCED_CONDITION: f64 = 1e14;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AppendOutcome {
    /// The basis grew by one column.
    Grown,
    /// The window was full; the oldest snapshot was dropped.
    Windowed,
    /// The snapshot was numerically inside the current span; basis unchanged.
    Rejected,
}

#[derive(Debug, Clone)]
pub struct ReducedBasis {
    n: usize,
    r_max: usize,
    /// Orthonormal columns.
    v: Vec<Vec<f64>>,
    /// `r[i][j]`, upper triangular, `k × k`.
    r: Vec<Vec<f64>>,
    snapshot_count: usize,
}

impl ReducedBasis {
    pub fn new(n: usize, r_max: usize) -> Result<Self> {
        if r_max == 0 {
            return Err(Error::Config("reduced basis window must be at least 1".into()));
        }
        Ok(Self {
            n,
            r_max,
            v: Vec::new(),
            r: Vec::new(),
            snapshot_count: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    pub fn window(&self) -> usize {
        self.r_max
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Total snapshots accepted since creation.
    pub fn snapshot_count(&self) -> usize {
        self.snapshot_count
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.v
    }

    /// The triangular factor linking `V` to the retained snapshots.
    pub fn r_factor(&self) -> &[Vec<f64>] {
        &self.r
    }

    /// Reconstructs retained snapshot `j` (oldest first) as `V R[:, j]`.
    pub fn snapshot(&self, j: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.n];
        for (i, col) in self.v.iter().enumerate() {
            let rij = self.r[i][j];
            for (xk, vk) in x.iter_mut().zip(col) {
                *xk += rij * vk;
            }
        }
        x
    }

    /// Adds snapshot `x`, dropping the oldest one once the window is full.
    pub fn append(&mut self, x: &[f64]) -> Result<AppendOutcome> {
        if x.len() != self.n {
            return Err(Error::Usage(format!(
                "snapshot of size {} for a basis of size {}",
                x.len(),
                self.n
            )));
        }
        let norm_x = norm2(x);
        if !(norm_x > 0.0 && norm_x.is_finite()) {
            return Err(Error::Usage(format!("snapshot norm must be positive and finite, got {norm_x}")));
        }

        let (w, coeffs) = self.orthogonalize(x);
        let beta = norm2(&w);
        if beta < DEPENDENCE_TOL * norm_x {
            return Ok(AppendOutcome::Rejected);
        }
        let v_new: Vec<f64> = w.iter().map(|wi| wi / beta).collect();
        let k = self.len();
        self.snapshot_count += 1;

        // Extended factorization [X, x] = [V, v] R_ext.
        for (row, c) in self.r.iter_mut().zip(&coeffs) {
            row.push(*c);
        }
        let mut last = vec![0.0; k + 1];
        last[k] = beta;
        self.r.push(last);
        self.v.push(v_new);

        if k < self.r_max {
            return Ok(AppendOutcome::Grown);
        }

        // Drop the oldest snapshot: QR of the trailing k columns of R_ext.
        let m = DMatrix::from_fn(k + 1, k, |i, j| self.r[i][j + 1]);
        let qr = m.qr();
        let mut z = qr.q();
        let mut s = qr.r();
        for j in 0..k {
            if s[(j, j)] < 0.0 {
                for i in 0..k + 1 {
                    z[(i, j)] = -z[(i, j)];
                }
                for c in 0..k {
                    s[(j, c)] = -s[(j, c)];
                }
            }
        }
        let mut v = vec![vec![0.0; self.n]; k];
        for (j, out) in v.iter_mut().enumerate() {
            for (i, col) in self.v.iter().enumerate() {
                let zij = z[(i, j)];
                if zij != 0.0 {
                    for (o, c) in out.iter_mut().zip(col) {
                        *o += zij * c;
                    }
                }
            }
        }
        self.v = v;
        self.r = (0..k)
            .map(|i| (0..k).map(|j| if j >= i { s[(i, j)] } else { 0.0 }).collect())
            .collect();
        Ok(AppendOutcome::Windowed)
    }

    /// Classical Gram-Schmidt with one reorthogonalization pass.
    fn orthogonalize(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut w = x.to_vec();
        let mut total = vec![0.0; self.len()];
        for _ in 0..2 {
            let c: Vec<f64> = self.v.iter().map(|col| dot(col, &w)).collect();
            for (col, ci) in self.v.iter().zip(&c) {
                for (wk, vk) in w.iter_mut().zip(col) {
                    *wk -= ci * vk;
                }
            }
            for (t, ci) in total.iter_mut().zip(&c) {
                *t += ci;
            }
        }
        (w, total)
    }

    /// `V c`
    pub fn expand(&self, coeffs: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.n];
        for (col, c) in self.v.iter().zip(coeffs) {
            for (xk, vk) in x.iter_mut().zip(col) {
                *xk += c * vk;
            }
        }
        x
    }
}

/// Why a reduced solve could not produce an approximation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MorFailure {
    EmptyBasis,
    /// The reduced operator is singular or too ill-conditioned to trust.
    IllConditioned { condition: f64 },
}

#[derive(Debug, Clone)]
pub struct ReducedSolution {
    /// `V x̂`
    pub field: Vec<f64>,
    /// `x̂`
    pub coeffs: Vec<f64>,
    /// `A V`, kept so the residual costs no further full matvec.
    pub av: Vec<Vec<f64>>,
    pub matvecs: usize,
}

/// Galerkin solve `(Vᵀ A V) x̂ = Vᵀ b`.
pub fn reduced_solve(
    basis: &ReducedBasis,
    op: &SparseOperator,
    rhs: &[f64],
) -> std::result::Result<ReducedSolution, MorFailure> {
    let k = basis.len();
    if k == 0 {
        return Err(MorFailure::EmptyBasis);
    }
    let v = basis.columns();
    let av: Vec<Vec<f64>> = v.iter().map(|col| op.apply(col)).collect();
    let a_hat = DMatrix::from_fn(k, k, |i, j| dot(&v[i], &av[j]));
    let b_hat = DVector::from_iterator(k, v.iter().map(|col| dot(col, rhs)));

    let sv = a_hat.singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition <= MAX_REDUCED_CONDITION) {
        return Err(MorFailure::IllConditioned { condition });
    }
    let coeffs = a_hat
        .lu()
        .solve(&b_hat)
        .ok_or(MorFailure::IllConditioned { condition })?;
    let coeffs = coeffs.as_slice().to_vec();
    Ok(ReducedSolution {
        field: basis.expand(&coeffs),
        coeffs,
        av,
        matvecs: k,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Assessment {
    pub accepted: bool,
    /// Value of the chosen criterion.
    pub measure: f64,
    pub w1: f64,
    pub w2: f64,
    pub norm_r: f64,
    pub norm_b: f64,
    pub norm_x: f64,
}

/// Residual test of a reduced solution: accepted iff the measure is at most
/// `tau_mor`.
pub fn assess(
    sol: &ReducedSolution,
    rhs: &[f64],
    norm_a: f64,
    tau_mor: f64,
    criterion: Criterion,
) -> Assessment {
    let mut r = rhs.to_vec();
    for (col, c) in sol.av.iter().zip(&sol.coeffs) {
        for (rk, ak) in r.iter_mut().zip(col) {
            *rk -= c * ak;
        }
    }
    let norm_r = norm2(&r);
    let norm_b = norm2(rhs);
    let norm_x = norm2(&sol.field);
    let w1 = norm_r / norm_b;
    let w2 = norm_r / (norm_b + norm_a * norm_x);
    let measure = match criterion {
        Criterion::W1 => w1,
        Criterion::W2 => w2,
    };
    Assessment {
        accepted: measure <= tau_mor,
        measure,
        w1,
        w2,
        norm_r,
        norm_b,
        norm_x,
    }
}
