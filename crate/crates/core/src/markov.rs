//! Off-period and on-period Markov chains over the number of transmitting
//! secondary users, and the linear solves built on them.
//!
//! State `k` of either chain means exactly `k` secondary users transmitted
//! in a slot. Matrices are stored in bordered order: the transient states
//! first and the distinguished state last, so the transient block is the
//! leading `N x N` sub-matrix.
//!
//! * off chain: `(0, 2, 3, ..., N | 1)`, state 1 (a secondary success) is
//!   the distinguished state.
//! * on chain: `(1, 2, ..., N | 0)`, state 0 (a primary success) is absorbing.

use std::fmt;

use crate::error::{Error, Result};
use crate::model::Protocol;

/// Residual above which a transient-block solve is rejected.
pub const SOLVE_RESIDUAL_TOL: f64 = 1e-8;
/// Residual above which a stationary vector is rejected.
pub const STATIONARY_RESIDUAL_TOL: f64 = 1e-10;

/// Dense row-major matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut m = Self::zeros(rows.len(), cols);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), cols, "ragged rows");
            m.row_mut(i).copy_from_slice(row);
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Leading `n x n` sub-matrix.
    pub fn leading_block(&self, n: usize) -> Matrix {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.row_mut(i).copy_from_slice(&self.row(i)[..n]);
        }
        m
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `x^T * self`.
    pub fn left_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += xi * a;
            }
        }
        out
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

/// A linear solve that was singular or left too large a residual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveError {
    pub residual: f64,
}

/// LU factorization with partial pivoting, `P A = L U`.
struct Lu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
}

impl Lu {
    fn factor(a: &Matrix) -> Option<Lu> {
        let n = a.rows;
        debug_assert_eq!(n, a.cols);
        let mut lu = a.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let mut p = k;
            let mut best = lu[k * n + k].abs();
            for i in k + 1..n {
                let v = lu[i * n + k].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if !(best > f64::MIN_POSITIVE) {
                return None;
            }
            if p != k {
                for j in 0..n {
                    lu.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let pivot = lu[k * n + k];
            for i in k + 1..n {
                let factor = lu[i * n + k] / pivot;
                lu[i * n + k] = factor;
                if factor != 0.0 {
                    for j in k + 1..n {
                        lu[i * n + j] -= factor * lu[k * n + j];
                    }
                }
            }
        }
        Some(Lu { n, lu, perm })
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = x[i];
            for j in 0..i {
                s -= self.lu[i * n + j] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..n {
                s -= self.lu[i * n + j] * x[j];
            }
            x[i] = s / self.lu[i * n + i];
        }
        x
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Solves `a x = b` by LU and checks the residual.
pub fn solve_checked(a: &Matrix, b: &[f64], tol: f64) -> std::result::Result<Vec<f64>, SolveError> {
    let lu = Lu::factor(a).ok_or(SolveError {
        residual: f64::INFINITY,
    })?;
    let x = lu.solve(b);
    let residual = max_abs_diff(&a.mul_vec(&x), b);
    if residual.is_finite() && residual <= tol && x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(SolveError { residual })
    }
}

/// Expected number of slots spent in transient states before leaving the
/// transient block, `(I - Q)^{-1} e`, from each transient state.
pub fn expected_absorption_slots(q_block: &Matrix) -> std::result::Result<Vec<f64>, SolveError> {
    let n = q_block.rows();
    let mut a = Matrix::identity(n);
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] -= q_block[(i, j)];
        }
    }
    solve_checked(&a, &vec![1.0; n], SOLVE_RESIDUAL_TOL)
}

/// `Binomial(n, p)` probability mass at `k`.
pub fn binomial_pmf(n: usize, k: usize, p: f64) -> f64 {
    if k > n {
        return 0.0;
    }
    let k_small = k.min(n - k);
    let mut coef = 1.0;
    for i in 0..k_small {
        coef = coef * (n - i) as f64 / (i + 1) as f64;
    }
    coef * p.powi(k as i32) * (1.0 - p).powi((n - k) as i32)
}

/// Full `Binomial(n, p)` mass function over `0..=n`.
pub fn binomial_row(n: usize, p: f64) -> Vec<f64> {
    (0..=n).map(|k| binomial_pmf(n, k, p)).collect()
}

/// Transition structure of the secondary users while the primary is off.
#[derive(Debug, Clone)]
pub struct OffChain {
    pub n: usize,
    pub protocol: Protocol,
    /// `(N+1) x (N+1)` transition matrix in order `(0, 2, ..., N, 1)`.
    pub full_matrix: Matrix,
    /// Transient block over states `(0, 2, ..., N)`.
    pub q_block: Matrix,
    pub e: Vec<f64>,
}

impl OffChain {
    /// Matrix index of state `k`.
    pub fn position(&self, state: usize) -> usize {
        off_position(self.n, state)
    }

    /// Transition probability `P_off(to | from)` by state label.
    pub fn transition(&self, from: usize, to: usize) -> f64 {
        self.full_matrix[(self.position(from), self.position(to))]
    }

    /// Mean slots from each transient state until the first secondary
    /// success; entry 0 (state 0, an idle slot) is the contention length.
    pub fn absorption_slots(&self) -> Result<Vec<f64>> {
        expected_absorption_slots(&self.q_block).map_err(|e| numerical(&self.protocol, self.n, e))
    }
}

fn off_position(n: usize, state: usize) -> usize {
    match state {
        0 => 0,
        1 => n,
        k => k - 1,
    }
}

fn on_position(n: usize, state: usize) -> usize {
    match state {
        0 => n,
        k => k - 1,
    }
}

fn numerical(p: &Protocol, n: usize, e: SolveError) -> Error {
    Error::Numerical {
        q: p.q(),
        r: p.r(),
        theta: p.theta(),
        n,
        residual: e.residual,
    }
}

pub fn build_off_chain(protocol: &Protocol, n: usize) -> OffChain {
    assert!(n >= 1, "at least one secondary user");
    let (q, r, theta) = (protocol.q(), protocol.r(), protocol.theta());
    let mut m = Matrix::zeros(n + 1, n + 1);

    let idle = binomial_row(n, q);
    for (to, p) in idle.iter().enumerate() {
        m[(off_position(n, 0), off_position(n, to))] = *p;
    }

    let one = off_position(n, 1);
    m[(one, off_position(n, 0))] = theta;
    m[(one, one)] = 1.0 - theta;

    for k in 2..=n {
        for (to, p) in binomial_row(k, r).iter().enumerate() {
            m[(off_position(n, k), off_position(n, to))] = *p;
        }
    }

    OffChain {
        n,
        protocol: *protocol,
        q_block: m.leading_block(n),
        full_matrix: m,
        e: vec![1.0; n],
    }
}

/// Transition structure of the secondary users while the primary is on.
#[derive(Debug, Clone)]
pub struct OnChain {
    pub n: usize,
    pub protocol: Protocol,
    /// `(N+1) x (N+1)` transition matrix in order `(1, ..., N, 0)`.
    pub full_matrix: Matrix,
    /// Transient block over states `(1, ..., N)`.
    pub q_block: Matrix,
    pub absorbing_state: usize,
}

impl OnChain {
    pub fn position(&self, state: usize) -> usize {
        on_position(self.n, state)
    }

    pub fn transition(&self, from: usize, to: usize) -> f64 {
        self.full_matrix[(self.position(from), self.position(to))]
    }

    /// Mean slots until the primary's first success from each state `1..=N`
    /// (entry `k-1` for state `k`). Requires `r < 1`.
    pub fn absorption_slots(&self) -> Result<Vec<f64>> {
        if self.protocol.r() >= 1.0 {
            return Err(Error::Domain(
                "on-period absorption requires r < 1".to_string(),
            ));
        }
        expected_absorption_slots(&self.q_block).map_err(|e| numerical(&self.protocol, self.n, e))
    }
}

pub fn build_on_chain(protocol: &Protocol, n: usize) -> OnChain {
    assert!(n >= 1, "at least one secondary user");
    let r = protocol.r();
    let mut m = Matrix::zeros(n + 1, n + 1);
    for k in 1..=n {
        for (to, p) in binomial_row(k, r).iter().enumerate() {
            m[(on_position(n, k), on_position(n, to))] = *p;
        }
    }
    let zero = on_position(n, 0);
    m[(zero, zero)] = 1.0;
    OnChain {
        n,
        protocol: *protocol,
        q_block: m.leading_block(n),
        full_matrix: m,
        absorbing_state: 0,
    }
}

/// Stationary distribution of the off chain, indexed by state label
/// (`w[k]` is the probability of `k` transmitters).
///
/// Solves the transposed balance equations with one equation replaced by
/// the normalization `sum(w) = 1`.
pub fn stationary_distribution(chain: &OffChain) -> Result<Vec<f64>> {
    let n = chain.n;
    let p = &chain.protocol;
    let open = |v: f64| v > 0.0 && v < 1.0;
    if !open(p.q()) {
        return Err(Error::Domain(format!(
            "off chain is reducible for q = {} (need 0 < q < 1)",
            p.q()
        )));
    }
    if n >= 2 && !open(p.r()) {
        return Err(Error::Domain(format!(
            "off chain is reducible for r = {} (need 0 < r < 1)",
            p.r()
        )));
    }

    let size = n + 1;
    let pm = &chain.full_matrix;
    let mut a = Matrix::zeros(size, size);
    for i in 0..size {
        for j in 0..size {
            a[(i, j)] = pm[(j, i)] - if i == j { 1.0 } else { 0.0 };
        }
    }
    a.row_mut(size - 1).fill(1.0);
    let mut b = vec![0.0; size];
    b[size - 1] = 1.0;

    let err = |residual| Error::Numerical {
        q: p.q(),
        r: p.r(),
        theta: p.theta(),
        n,
        residual,
    };
    let mut w = solve_checked(&a, &b, STATIONARY_RESIDUAL_TOL).map_err(|e| err(e.residual))?;

    let balance = max_abs_diff(&pm.left_mul_vec(&w), &w);
    if balance > STATIONARY_RESIDUAL_TOL {
        return Err(err(balance));
    }
    for v in &mut w {
        if *v < 0.0 {
            if *v < -STATIONARY_RESIDUAL_TOL {
                return Err(err(-*v));
            }
            *v = 0.0;
        }
    }

    Ok((0..=n).map(|k| w[off_position(n, k)]).collect())
}

/// Rows `Binomial(k, p)` for `k = 0..=n`, built by Pascal recurrence.
pub fn binomial_triangle(n: usize, p: f64) -> Vec<Vec<f64>> {
    let mut rows = Vec::with_capacity(n + 1);
    rows.push(vec![1.0]);
    for k in 1..=n {
        let prev: &Vec<f64> = &rows[k - 1];
        let row = (0..=k)
            .map(|j| {
                let stay = if j < k { (1.0 - p) * prev[j] } else { 0.0 };
                let go = if j > 0 { p * prev[j - 1] } else { 0.0 };
                stay + go
            })
            .collect();
        rows.push(row);
    }
    rows
}

/// Contention length and stationary distribution of the off chain,
/// exploiting that a collision among `k` users can only be followed by a
/// slot with at most `k` transmitters. `O(N²)` and equal to the dense
/// solves up to rounding. Same domain as [`stationary_distribution`].
pub fn off_chain_structured(protocol: &Protocol, n: usize) -> Result<(f64, Vec<f64>)> {
    let (q, r, theta) = (protocol.q(), protocol.r(), protocol.theta());
    let open = |v: f64| v > 0.0 && v < 1.0;
    if !open(q) || (n >= 2 && !open(r)) {
        return Err(Error::Domain(format!(
            "off chain is reducible for q = {q}, r = {r}"
        )));
    }
    let a = binomial_row(n, q);
    let b = binomial_triangle(n, r);

    // Slots to the first success from k >= 2, as alpha[k] + beta[k] * t0.
    let mut alpha = vec![0.0; n + 1];
    let mut beta = vec![0.0; n + 1];
    for k in 2..=n {
        let stay = 1.0 - b[k][k];
        let mut al = 1.0;
        let mut be = b[k][0];
        for j in 2..k {
            al += b[k][j] * alpha[j];
            be += b[k][j] * beta[j];
        }
        alpha[k] = al / stay;
        beta[k] = be / stay;
    }
    let mut num = 1.0;
    let mut den = 1.0 - a[0];
    for k in 2..=n {
        num += a[k] * alpha[k];
        den -= a[k] * beta[k];
    }
    let t0 = num / den;

    // Stationary weights relative to w[0], filled from the top state down.
    let mut w = vec![0.0; n + 1];
    w[0] = 1.0;
    for k in (2..=n).rev() {
        let inflow = a[k] + ((k + 1)..=n).map(|j| w[j] * b[j][k]).sum::<f64>();
        w[k] = inflow / (1.0 - b[k][k]);
    }
    w[1] = (a[1] + (2..=n).map(|j| w[j] * b[j][1]).sum::<f64>()) / theta;
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);

    if !(t0.is_finite() && t0 > 0.0) || w.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical {
            q,
            r,
            theta,
            n,
            residual: f64::NAN,
        });
    }
    Ok((t0, w))
}

/// Mean slots to the primary's first success from each on-chain state
/// `1..=N` (entry `k-1` for state `k`), by forward substitution.
pub fn on_chain_structured(r: f64, n: usize) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&r) {
        return Err(Error::Domain(
            "on-period absorption requires r < 1".to_string(),
        ));
    }
    let b = binomial_triangle(n, r);
    let mut y = vec![0.0; n + 1];
    for k in 1..=n {
        let mut acc = 1.0;
        for j in 1..k {
            acc += b[k][j] * y[j];
        }
        y[k] = acc / (1.0 - b[k][k]);
    }
    y.remove(0);
    Ok(y)
}
