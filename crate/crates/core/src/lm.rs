//! Levenberg-Marquardt driver shared by the primitive fits and the
//! deformation refinement.
//!
//! Problems hand back a sparse Jacobian; the driver forms `JᵀJ` either densely
//! (small fits) or as a block-sparse matrix solved by preconditioned
//! conjugate gradients (deformation graphs, 12 unknowns per node).

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

/// Residual vector plus Jacobian rows in compressed sparse row layout.
#[derive(Debug, Clone, Default)]
pub struct Jacobian {
    pub residuals: Vec<f64>,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl Jacobian {
    pub fn new() -> Self {
        Self {
            residuals: Vec::new(),
            row_ptr: vec![0],
            cols: Vec::new(),
            vals: Vec::new(),
        }
    }

    /// Appends one residual with its partial derivatives. Column indices
    /// must be strictly increasing.
    pub fn push_row(&mut self, residual: f64, entries: impl IntoIterator<Item = (usize, f64)>) {
        self.residuals.push(residual);
        for (c, v) in entries {
            debug_assert!(self.cols.len() == *self.row_ptr.last().unwrap() || *self.cols.last().unwrap() < c);
            self.cols.push(c);
            self.vals.push(v);
        }
        self.row_ptr.push(self.cols.len());
    }

    pub fn rows(&self) -> usize {
        self.residuals.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.cols[a..b], &self.vals[a..b])
    }

    pub fn cost(&self) -> f64 {
        self.residuals.iter().map(|r| r * r).sum()
    }

    /// `Jᵀr`, i.e. half the gradient of the cost.
    pub fn jt_r(&self, n: usize) -> Vec<f64> {
        let mut g = vec![0.0; n];
        for i in 0..self.rows() {
            let r = self.residuals[i];
            let (c, v) = self.row(i);
            for (cc, vv) in c.iter().zip(v) {
                g[*cc] += vv * r;
            }
        }
        g
    }

    /// Gradient of the cost `Σ r²`.
    pub fn gradient(&self, n: usize) -> Vec<f64> {
        self.jt_r(n).into_iter().map(|g| 2.0 * g).collect()
    }
}

/// A nonlinear least-squares problem: minimise `Σ r(x)²`.
pub trait Problem {
    fn num_params(&self) -> usize;

    /// Unknowns per block of the normal matrix. Equal to `num_params` for a
    /// dense solve.
    fn block_size(&self) -> usize {
        self.num_params()
    }

    fn residuals(&self, x: &[f64]) -> Vec<f64>;

    fn jacobian(&self, x: &[f64]) -> Jacobian;

    /// Veto for candidate steps (e.g. reflections).
    fn admissible(&self, _x: &[f64]) -> bool {
        true
    }

    fn cost(&self, x: &[f64]) -> f64 {
        self.residuals(x).iter().map(|r| r * r).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmSettings {
    /// Initial damping; `None` picks `1e-3 · trace(JᵀJ) / params`.
    pub mu0: Option<f64>,
    pub mu_up: f64,
    pub mu_down: f64,
    pub max_iter: usize,
    pub rel_tol: f64,
    /// Gives up after this many consecutive rejected trial steps.
    pub max_rejections: usize,
}

impl Default for LmSettings {
    fn default() -> Self {
        Self {
            mu0: None,
            mu_up: 10.0,
            mu_down: 10.0,
            max_iter: 100,
            rel_tol: 1e-6,
            max_rejections: 12,
        }
    }
}

impl LmSettings {
    pub fn validate(&self) -> crate::Result<()> {
        if self.mu0.is_some_and(|m| !(m > 0.0)) {
            return Err(crate::Error::invalid("mu0 must be positive"));
        }
        if !(self.mu_up > 1.0 && self.mu_down > 1.0) {
            return Err(crate::Error::invalid("damping factors must exceed 1"));
        }
        if !(self.rel_tol >= 0.0) {
            return Err(crate::Error::invalid("rel_tol must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LmReport {
    /// Objective at the start and after every accepted step.
    pub history: Vec<f64>,
    /// Accepted steps.
    pub iterations: usize,
    /// Jacobian evaluations, accepted or not.
    pub evaluations: usize,
    pub converged: bool,
    /// Every trial damping increased the objective.
    pub stalled: bool,
    pub final_mu: f64,
}

impl LmReport {
    pub fn initial_cost(&self) -> f64 {
        self.history.first().copied().unwrap_or(0.0)
    }

    pub fn final_cost(&self) -> f64 {
        self.history.last().copied().unwrap_or(0.0)
    }
}

/// Runs LM from `x` in place and returns the convergence report. `x` always
/// ends at the best accepted point.
pub fn minimize<P: Problem + ?Sized>(problem: &P, x: &mut [f64], s: &LmSettings) -> LmReport {
    let n = problem.num_params();
    assert_eq!(x.len(), n, "parameter vector length");
    let mut report = LmReport::default();
    let mut jac = problem.jacobian(x);
    let mut cost = jac.cost();
    report.history.push(cost);
    report.evaluations = 1;
    if n == 0 || cost == 0.0 {
        report.converged = true;
        return report;
    }
    let bs = problem.block_size().clamp(1, n);
    let mut normal = Normal::build(&jac, n, bs);
    let mut mu = s
        .mu0
        .unwrap_or_else(|| 1e-3 * normal.trace() / n as f64)
        .max(1e-12);
    let mut candidate = vec![0.0; n];

    while report.iterations < s.max_iter {
        let g = jac.jt_r(n);
        if g.iter().all(|v| v.abs() <= 1e-15 * (1.0 + cost)) {
            report.converged = true;
            break;
        }
        let rhs: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut rejections = 0;
        let accepted = loop {
            let step = normal.solve_damped(mu, &rhs);
            let ok = step.as_ref().is_some_and(|d| d.iter().all(|v| v.is_finite()));
            if ok {
                let d = step.unwrap();
                for i in 0..n {
                    candidate[i] = x[i] + d[i];
                }
                if problem.admissible(&candidate) {
                    let c = problem.cost(&candidate);
                    if c.is_finite() && c < cost {
                        break Some(c);
                    }
                }
            }
            rejections += 1;
            mu *= s.mu_up;
            if rejections >= s.max_rejections || !mu.is_finite() {
                break None;
            }
        };
        let Some(new_cost) = accepted else {
            report.stalled = true;
            break;
        };
        x.copy_from_slice(&candidate);
        let decrease = cost - new_cost;
        cost = new_cost;
        report.iterations += 1;
        report.history.push(cost);
        mu = (mu / s.mu_down).max(1e-15);
        if decrease <= s.rel_tol * (cost + decrease) || cost == 0.0 {
            report.converged = true;
            break;
        }
        jac = problem.jacobian(x);
        report.evaluations += 1;
        normal = Normal::build(&jac, n, bs);
    }
    report.final_mu = mu;
    report
}

enum Normal {
    Dense(DenseNormal),
    Blocks(BlockNormal),
}

impl Normal {
    fn build(j: &Jacobian, n: usize, bs: usize) -> Self {
        if bs >= n {
            Normal::Dense(DenseNormal::from_jacobian(j, n))
        } else {
            Normal::Blocks(BlockNormal::from_jacobian(j, n, bs))
        }
    }

    fn trace(&self) -> f64 {
        match self {
            Normal::Dense(d) => d.trace(),
            Normal::Blocks(b) => b.trace(),
        }
    }

    fn solve_damped(&self, mu: f64, rhs: &[f64]) -> Option<Vec<f64>> {
        match self {
            Normal::Dense(d) => d.solve_damped(mu, rhs),
            Normal::Blocks(b) => b.solve_damped(mu, rhs),
        }
    }
}

/// Dense symmetric `JᵀJ`.
#[derive(Debug, Clone)]
pub struct DenseNormal {
    n: usize,
    a: Vec<f64>,
}

impl DenseNormal {
    pub fn from_jacobian(j: &Jacobian, n: usize) -> Self {
        let mut a = vec![0.0; n * n];
        for r in 0..j.rows() {
            let (c, v) = j.row(r);
            for (p, (&ci, &vi)) in c.iter().zip(v).enumerate() {
                for (&cj, &vj) in c[p..].iter().zip(&v[p..]) {
                    a[ci * n + cj] += vi * vj;
                }
            }
        }
        for i in 0..n {
            for k in i + 1..n {
                a[k * n + i] = a[i * n + k];
            }
        }
        Self { n, a }
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.a[i * self.n + i]).sum()
    }

    pub fn solve_damped(&self, mu: f64, rhs: &[f64]) -> Option<Vec<f64>> {
        let mut m = self.a.clone();
        for i in 0..self.n {
            m[i * self.n + i] += mu;
        }
        cholesky_solve(&mut m, self.n, rhs)
    }
}

/// Solves `M x = b` for symmetric positive definite `M` (overwritten by its
/// Cholesky factor). `None` when `M` is not positive definite.
pub fn cholesky_solve(m: &mut [f64], n: usize, b: &[f64]) -> Option<Vec<f64>> {
    cholesky_factor(m, n)?;
    Some(cholesky_apply(m, n, b))
}

fn cholesky_factor(m: &mut [f64], n: usize) -> Option<()> {
    for j in 0..n {
        let mut d = m[j * n + j];
        for k in 0..j {
            d -= m[j * n + k] * m[j * n + k];
        }
        if !(d > 0.0) {
            return None;
        }
        let d = libm::sqrt(d);
        m[j * n + j] = d;
        for i in j + 1..n {
            let mut s = m[i * n + j];
            for k in 0..j {
                s -= m[i * n + k] * m[j * n + k];
            }
            m[i * n + j] = s / d;
        }
    }
    Some(())
}

fn cholesky_apply(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut y = b.to_vec();
    for i in 0..n {
        let mut s = y[i];
        for k in 0..i {
            s -= l[i * n + k] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[k * n + i] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    y
}

/// Block-sparse symmetric `JᵀJ`; only the upper block triangle is stored.
#[derive(Debug, Clone)]
pub struct BlockNormal {
    n: usize,
    bs: usize,
    blocks: BTreeMap<(usize, usize), Vec<f64>>,
}

impl BlockNormal {
    pub fn from_jacobian(j: &Jacobian, n: usize, bs: usize) -> Self {
        let nb = n.div_ceil(bs);
        let mut blocks: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
        for i in 0..nb {
            blocks.insert((i, i), vec![0.0; bs * bs]);
        }
        // (block, start, end) runs of one row
        let mut runs: Vec<(usize, usize, usize)> = Vec::new();
        for r in 0..j.rows() {
            let (c, v) = j.row(r);
            runs.clear();
            for (p, &ci) in c.iter().enumerate() {
                let b = ci / bs;
                match runs.last_mut() {
                    Some(last) if last.0 == b => last.2 = p + 1,
                    _ => runs.push((b, p, p + 1)),
                }
            }
            for (ai, &(ba, sa, ea)) in runs.iter().enumerate() {
                for &(bb, sb, eb) in &runs[ai..] {
                    let blk = blocks.entry((ba, bb)).or_insert_with(|| vec![0.0; bs * bs]);
                    for p in sa..ea {
                        let (li, vi) = (c[p] % bs, v[p]);
                        for q in sb..eb {
                            blk[li * bs + c[q] % bs] += vi * v[q];
                        }
                    }
                }
            }
        }
        // diagonal blocks were filled on the upper triangle only
        for i in 0..nb {
            let blk = blocks.get_mut(&(i, i)).unwrap();
            for a in 0..bs {
                for b in a + 1..bs {
                    let s = blk[a * bs + b] + blk[b * bs + a];
                    blk[a * bs + b] = s;
                    blk[b * bs + a] = s;
                }
            }
        }
        Self { n, bs, blocks }
    }

    pub fn trace(&self) -> f64 {
        let nb = self.n.div_ceil(self.bs);
        (0..nb)
            .map(|i| {
                let blk = &self.blocks[&(i, i)];
                (0..self.bs).map(|a| blk[a * self.bs + a]).sum::<f64>()
            })
            .sum()
    }

    fn block_len(&self, b: usize) -> usize {
        self.bs.min(self.n - b * self.bs)
    }

    /// `y = (JᵀJ + μI) x`.
    pub fn apply(&self, mu: f64, x: &[f64]) -> Vec<f64> {
        let bs = self.bs;
        let mut y: Vec<f64> = x.iter().map(|v| mu * v).collect();
        for (&(bi, bj), blk) in &self.blocks {
            let (oi, oj) = (bi * bs, bj * bs);
            let (li, lj) = (self.block_len(bi), self.block_len(bj));
            for a in 0..li {
                let mut s = 0.0;
                for b in 0..lj {
                    s += blk[a * bs + b] * x[oj + b];
                }
                y[oi + a] += s;
            }
            if bi != bj {
                for b in 0..lj {
                    let mut s = 0.0;
                    for a in 0..li {
                        s += blk[a * bs + b] * x[oi + a];
                    }
                    y[oj + b] += s;
                }
            }
        }
        y
    }

    /// PCG with a block-Jacobi preconditioner.
    pub fn solve_damped(&self, mu: f64, rhs: &[f64]) -> Option<Vec<f64>> {
        let (n, bs) = (self.n, self.bs);
        let nb = n.div_ceil(bs);
        let mut factors = Vec::with_capacity(nb);
        for i in 0..nb {
            let l = self.block_len(i);
            let blk = &self.blocks[&(i, i)];
            let mut m = vec![0.0; l * l];
            for a in 0..l {
                for b in 0..l {
                    m[a * l + b] = blk[a * bs + b];
                }
                m[a * l + a] += mu;
            }
            cholesky_factor(&mut m, l)?;
            factors.push(m);
        }
        let precondition = |r: &[f64]| {
            let mut z = vec![0.0; n];
            for (i, f) in factors.iter().enumerate() {
                let (o, l) = (i * bs, self.block_len(i));
                z[o..o + l].copy_from_slice(&cholesky_apply(f, l, &r[o..o + l]));
            }
            z
        };
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();

        let mut x = vec![0.0; n];
        let mut r = rhs.to_vec();
        let b_norm = libm::sqrt(dot(rhs, rhs));
        if b_norm == 0.0 {
            return Some(x);
        }
        let mut z = precondition(&r);
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        for _ in 0..(2 * n).max(50) {
            let ap = self.apply(mu, &p);
            let pap = dot(&p, &ap);
            if !(pap > 0.0) {
                break;
            }
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            if libm::sqrt(dot(&r, &r)) <= 1e-12 * b_norm {
                break;
            }
            z = precondition(&r);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        Some(x)
    }
}

/// Central-difference gradient of `problem.cost`, for checks.
pub fn numeric_gradient<P: Problem + ?Sized>(problem: &P, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let x0 = xp[i];
            xp[i] = x0 + h;
            let fp = problem.cost(&xp);
            xp[i] = x0 - h;
            let fm = problem.cost(&xp);
            xp[i] = x0;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}
