//! Dense two-phase simplex for small linear programs
//! `min cᵀx  s.t.  A x (≤ | ≥ | =) b,  x ≥ 0`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinearProgram {
    /// Minimised objective.
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
}

impl LinearProgram {
    pub fn new(objective: Vec<f64>) -> Self {
        Self {
            objective,
            constraints: Vec::new(),
        }
    }

    pub fn add(&mut self, coeffs: Vec<f64>, relation: Relation, rhs: f64) {
        self.constraints.push(Constraint {
            coeffs,
            relation,
            rhs,
        });
    }

    /// Largest violation of any constraint or sign bound at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let bounds = x.iter().map(|&v| (-v).max(0.0)).fold(0.0, f64::max);
        self.constraints
            .iter()
            .map(|c| {
                let lhs: f64 = c.coeffs.iter().zip(x).map(|(a, b)| a * b).sum();
                match c.relation {
                    Relation::Le => (lhs - c.rhs).max(0.0),
                    Relation::Ge => (c.rhs - lhs).max(0.0),
                    Relation::Eq => (lhs - c.rhs).abs(),
                }
            })
            .fold(bounds, f64::max)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SimplexOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 50_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

struct Tableau {
    /// Constraint rows followed by the objective row; last column is the rhs.
    t: Vec<Vec<f64>>,
    basis: Vec<usize>,
    cols: usize,
}

impl Tableau {
    fn rows(&self) -> usize {
        self.basis.len()
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.t[r][c];
        for v in self.t[r].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.t[r].clone();
        for (i, row) in self.t.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
            }
        }
        self.basis[r] = c;
    }

    /// Runs simplex iterations on the objective row over columns `allowed`.
    fn optimise(
        &mut self,
        allowed: usize,
        opts: &SimplexOptions,
        iterations: &mut usize,
    ) -> Result<()> {
        let m = self.rows();
        let rhs = self.cols;
        let mut stall = 0usize;
        let mut last_obj = f64::INFINITY;
        loop {
            if *iterations >= opts.max_iterations {
                return Err(Error::SolverStall {
                    iterations: *iterations,
                });
            }
            let obj = &self.t[m];
            // Dantzig's rule, falling back to Bland's rule while degenerate.
            let bland = stall > 50;
            let mut enter = None;
            let mut best = -opts.tolerance;
            for c in 0..allowed {
                if obj[c] < best {
                    enter = Some(c);
                    if bland {
                        break;
                    }
                    best = obj[c];
                }
            }
            let Some(c) = enter else { return Ok(()) };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..m {
                let a = self.t[r][c];
                if a > opts.tolerance {
                    let ratio = self.t[r][rhs] / a;
                    match leave {
                        None => leave = Some((r, ratio)),
                        Some((lr, lratio)) => {
                            if ratio < lratio - 1e-12
                                || (ratio <= lratio + 1e-12 && self.basis[r] < self.basis[lr])
                            {
                                leave = Some((r, ratio));
                            }
                        }
                    }
                }
            }
            let Some((r, _)) = leave else {
                return Err(Error::LpUnbounded);
            };
            self.pivot(r, c);
            *iterations += 1;
            let obj_now = -self.t[m][rhs];
            if obj_now < last_obj - 1e-12 {
                stall = 0;
                last_obj = obj_now;
            } else {
                stall += 1;
            }
        }
    }
}

/// Solves `lp` with the two-phase method.
pub fn solve(lp: &LinearProgram, opts: &SimplexOptions) -> Result<LpSolution> {
    let n = lp.objective.len();
    let m = lp.constraints.len();
    for c in &lp.constraints {
        if c.coeffs.len() != n {
            return Err(Error::Dimension {
                what: "constraint row",
                expected: n.to_string(),
                got: c.coeffs.len().to_string(),
            });
        }
    }
    // Normalise to non-negative right-hand sides.
    let rows: Vec<(Vec<f64>, Relation, f64)> = lp
        .constraints
        .iter()
        .map(|c| {
            // A zero right-hand side is flipped too so it needs no artificial.
            if c.rhs < 0.0 || (c.rhs == 0.0 && c.relation == Relation::Ge) {
                let flipped = match c.relation {
                    Relation::Le => Relation::Ge,
                    Relation::Ge => Relation::Le,
                    Relation::Eq => Relation::Eq,
                };
                (c.coeffs.iter().map(|v| -v).collect(), flipped, -c.rhs)
            } else {
                (c.coeffs.clone(), c.relation, c.rhs)
            }
        })
        .collect();
    let n_slack = rows.iter().filter(|r| r.1 != Relation::Eq).count();
    let n_art = rows.iter().filter(|r| r.1 != Relation::Le).count();
    let cols = n + n_slack + n_art;
    let art0 = n + n_slack;

    let mut t = vec![vec![0.0; cols + 1]; m + 1];
    let mut basis = vec![0; m];
    let (mut s, mut a) = (n, art0);
    for (i, (coeffs, rel, rhs)) in rows.iter().enumerate() {
        t[i][..n].copy_from_slice(coeffs);
        t[i][cols] = *rhs;
        match rel {
            Relation::Le => {
                t[i][s] = 1.0;
                basis[i] = s;
                s += 1;
            }
            Relation::Ge => {
                t[i][s] = -1.0;
                s += 1;
                t[i][a] = 1.0;
                basis[i] = a;
                a += 1;
            }
            Relation::Eq => {
                t[i][a] = 1.0;
                basis[i] = a;
                a += 1;
            }
        }
    }
    let mut tab = Tableau { t, basis, cols };
    let mut iterations = 0;

    if n_art > 0 {
        // Phase one: minimise the sum of artificials.
        for c in art0..cols {
            tab.t[m][c] = 1.0;
        }
        for i in 0..m {
            if tab.basis[i] >= art0 {
                let row = tab.t[i].clone();
                for (o, v) in tab.t[m].iter_mut().zip(&row) {
                    *o -= v;
                }
            }
        }
        tab.optimise(cols, opts, &mut iterations)?;
        let infeas = -tab.t[m][cols];
        let scale = 1.0 + rows.iter().map(|r| r.2.abs()).fold(0.0, f64::max);
        if infeas > opts.tolerance * scale {
            return Err(Error::LpInfeasible { step: None });
        }
        // Drive remaining artificials out of the basis.
        let mut i = 0;
        while i < tab.rows() {
            if tab.basis[i] >= art0 {
                match (0..art0).find(|&c| tab.t[i][c].abs() > opts.tolerance) {
                    Some(c) => tab.pivot(i, c),
                    None => {
                        // Redundant row.
                        tab.t.remove(i);
                        tab.basis.remove(i);
                        continue;
                    }
                }
            }
            i += 1;
        }
    }

    // Phase two on the original objective.
    let m = tab.rows();
    let mut obj = vec![0.0; cols + 1];
    obj[..n].copy_from_slice(&lp.objective);
    for i in 0..m {
        let b = tab.basis[i];
        let cb = if b < n { lp.objective[b] } else { 0.0 };
        if cb != 0.0 {
            for (o, v) in obj.iter_mut().zip(&tab.t[i]) {
                *o -= cb * v;
            }
        }
    }
    tab.t[m] = obj;
    tab.optimise(art0, opts, &mut iterations)?;

    let mut x = vec![0.0; n];
    for i in 0..m {
        if tab.basis[i] < n {
            x[tab.basis[i]] = tab.t[i][cols].max(0.0);
        }
    }
    let objective = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
    Ok(LpSolution {
        x,
        objective,
        iterations,
    })
}
