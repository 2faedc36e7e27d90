//! Dense two-phase primal simplex for small equality-form linear programs:
//! maximize cᵀx subject to Ax = b, x ≥ 0. Bland's rule keeps pivoting
//! deterministic and cycle-free; problem sizes here are a few dozen variables
//! at most.

use crate::{Error, Result};

const TOL: f64 = 1e-9;

pub struct LpSolution {
    pub objective: f64,
    pub x: Vec<f64>,
}

struct Tableau {
    /// m rows of n coefficients, kept in canonical form for the basis.
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
    basis: Vec<usize>,
    n: usize,
}

impl Tableau {
    fn pivot(&mut self, row: usize, col: usize) {
        let p = self.a[row][col];
        for j in 0..self.n {
            self.a[row][j] /= p;
        }
        self.b[row] /= p;
        for i in 0..self.a.len() {
            if i == row {
                continue;
            }
            let f = self.a[i][col];
            if f == 0.0 {
                continue;
            }
            for j in 0..self.n {
                self.a[i][j] -= f * self.a[row][j];
            }
            self.b[i] -= f * self.b[row];
        }
        self.basis[row] = col;
    }

    /// Minimize `cost·x` from the current basic feasible point. Returns the
    /// optimal objective; Err on unboundedness.
    fn minimize(&mut self, cost: &[f64], active: &dyn Fn(usize) -> bool) -> Result<f64> {
        loop {
            // Simplex multipliers are the basic costs because the tableau is
            // canonical; reduced cost r_j = c_j − Σ_i c_basis(i)·a[i][j].
            let mut entering = None;
            for j in 0..self.n {
                if !active(j) || self.basis.contains(&j) {
                    continue;
                }
                let mut r = cost[j];
                for (i, &bi) in self.basis.iter().enumerate() {
                    r -= cost[bi] * self.a[i][j];
                }
                if r < -TOL {
                    entering = Some(j);
                    break; // Bland: lowest eligible index
                }
            }
            let Some(col) = entering else {
                let obj: f64 = self
                    .basis
                    .iter()
                    .enumerate()
                    .map(|(i, &bi)| cost[bi] * self.b[i])
                    .sum();
                return Ok(obj);
            };
            let mut leaving: Option<(usize, f64)> = None;
            for i in 0..self.a.len() {
                if self.a[i][col] > TOL {
                    let ratio = self.b[i] / self.a[i][col];
                    let better = match leaving {
                        None => true,
                        Some((li, lr)) => {
                            ratio < lr - TOL
                                || (ratio < lr + TOL && self.basis[i] < self.basis[li])
                        }
                    };
                    if better {
                        leaving = Some((i, ratio));
                    }
                }
            }
            let Some((row, _)) = leaving else {
                return Err(Error::DegenerateLp("unbounded objective".into()));
            };
            self.pivot(row, col);
        }
    }
}

/// Solve max cᵀx, Ax = b, x ≥ 0. `a` is row-major with rows matching `b`.
pub fn solve(a: &[Vec<f64>], b: &[f64], c: &[f64]) -> Result<LpSolution> {
    let m = a.len();
    let n = c.len();
    assert_eq!(b.len(), m);
    assert!(a.iter().all(|row| row.len() == n));

    // Phase 1: artificial basis, nonnegative rhs.
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut rhs = Vec::with_capacity(m);
    for (row, &bi) in a.iter().zip(b) {
        let sign = if bi < 0.0 { -1.0 } else { 1.0 };
        let mut r: Vec<f64> = row.iter().map(|v| v * sign).collect();
        r.extend(std::iter::repeat(0.0).take(m));
        rows.push(r);
        rhs.push(bi * sign);
    }
    for (i, row) in rows.iter_mut().enumerate() {
        row[n + i] = 1.0;
    }
    let mut tab = Tableau {
        a: rows,
        b: rhs,
        basis: (n..n + m).collect(),
        n: n + m,
    };
    let phase1_cost: Vec<f64> = (0..n + m).map(|j| if j >= n { 1.0 } else { 0.0 }).collect();
    let infeasibility = tab.minimize(&phase1_cost, &|_| true)?;
    if infeasibility > 1e-6 {
        return Err(Error::DegenerateLp(format!(
            "infeasible constraint system (phase-1 residual {infeasibility:.3e})"
        )));
    }

    // Drive remaining artificials out of the basis; a row with no real
    // coefficient is redundant and can stay pinned at zero.
    for i in 0..m {
        if tab.basis[i] >= n {
            if let Some(col) = (0..n).find(|&j| tab.a[i][j].abs() > TOL) {
                tab.pivot(i, col);
            }
        }
    }

    // Phase 2 over the original columns only.
    let mut phase2_cost: Vec<f64> = c.iter().map(|v| -v).collect();
    phase2_cost.extend(std::iter::repeat(0.0).take(m));
    let neg_obj = tab.minimize(&phase2_cost, &|j| j < n)?;

    let mut x = vec![0.0; n];
    for (i, &bi) in tab.basis.iter().enumerate() {
        if bi < n {
            x[bi] = tab.b[i];
        }
    }
    Ok(LpSolution {
        objective: -neg_obj,
        x,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_textbook_max() {
        // max 3x + 2y, x + y + s1 = 4, x + 3y + s2 = 6 -> x=4, y=0, obj 12.
        let a = vec![
            vec![1.0, 1.0, 1.0, 0.0],
            vec![1.0, 3.0, 0.0, 1.0],
        ];
        let b = vec![4.0, 6.0];
        let c = vec![3.0, 2.0, 0.0, 0.0];
        let sol = solve(&a, &b, &c).unwrap();
        assert!((sol.objective - 12.0).abs() < 1e-8);
        assert!((sol.x[0] - 4.0).abs() < 1e-8);
    }

    #[test]
    fn detects_infeasible() {
        // x + y = 1, x + y = 3, x,y >= 0.
        let a = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        let b = vec![1.0, 3.0];
        let c = vec![1.0, 0.0];
        assert!(solve(&a, &b, &c).is_err());
    }

    #[test]
    fn detects_unbounded() {
        // max x with only x - y = 0: x can grow without bound.
        let a = vec![vec![1.0, -1.0]];
        let b = vec![0.0];
        let c = vec![1.0, 0.0];
        assert!(solve(&a, &b, &c).is_err());
    }

    #[test]
    fn handles_negative_rhs() {
        // max -x s.t. -x + s = -2  (x - s = 2, so x >= 2) -> x = 2.
        let a = vec![vec![-1.0, 1.0]];
        let b = vec![-2.0];
        let c = vec![-1.0, 0.0];
        let sol = solve(&a, &b, &c).unwrap();
        assert!((sol.x[0] - 2.0).abs() < 1e-8);
        assert!((sol.objective + 2.0).abs() < 1e-8);
    }
}
