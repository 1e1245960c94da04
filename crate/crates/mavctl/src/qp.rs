//! Dense box-constrained quadratic programming via a primal active-set
//! method.
//!
//! Solves `min 1/2 x^T H x + g^T x  s.t.  lb <= x <= ub` for symmetric
//! positive definite `H`. Problems here are tiny (n <= 6), so every
//! equality-constrained subproblem is solved exactly with a dense LU on the
//! full system with pinned rows; the active set changes one constraint at a
//! time and terminates finitely.

use nalgebra::{SMatrix, SVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VarState {
    Free,
    AtLower,
    AtUpper,
    /// Degenerate interval lb == ub; never released.
    Pinned,
}

/// Dense solve by Gaussian elimination with partial pivoting; nalgebra's
/// factorizations are not available for generic constant dimensions.
fn gauss_solve<const N: usize>(m: &SMatrix<f64, N, N>, b: &SVector<f64, N>) -> SVector<f64, N> {
    let mut a = *m;
    let mut x = *b;
    for col in 0..N {
        let mut piv = col;
        for row in col + 1..N {
            if a[(row, col)].abs() > a[(piv, col)].abs() {
                piv = row;
            }
        }
        if piv != col {
            a.swap_rows(col, piv);
            x.swap_rows(col, piv);
        }
        let diag = a[(col, col)];
        debug_assert!(diag.abs() > 1e-300, "singular system in box QP");
        for row in col + 1..N {
            let factor = a[(row, col)] / diag;
            if factor == 0.0 {
                continue;
            }
            for k in col..N {
                a[(row, k)] -= factor * a[(col, k)];
            }
            x[row] -= factor * x[col];
        }
    }
    for col in (0..N).rev() {
        let mut sum = x[col];
        for k in col + 1..N {
            sum -= a[(col, k)] * x[k];
        }
        x[col] = sum / a[(col, col)];
    }
    x
}

fn gradient<const N: usize>(
    h: &SMatrix<f64, N, N>,
    g: &SVector<f64, N>,
    x: &SVector<f64, N>,
) -> SVector<f64, N> {
    let mut grad = *g;
    for i in 0..N {
        for j in 0..N {
            grad[i] += h[(i, j)] * x[j];
        }
    }
    grad
}

#[derive(Debug, Clone)]
pub struct BoxQpSolution<const N: usize> {
    pub x: SVector<f64, N>,
    /// Active-set iterations used.
    pub iterations: usize,
    /// True where the solution sits on a (non-degenerate) bound.
    pub at_bound: [bool; N],
}

/// Infinity norm of the projected KKT residual; ~0 at the exact optimum.
pub fn kkt_residual<const N: usize>(
    h: &SMatrix<f64, N, N>,
    g: &SVector<f64, N>,
    lb: &SVector<f64, N>,
    ub: &SVector<f64, N>,
    x: &SVector<f64, N>,
) -> f64 {
    let grad = gradient(h, g, x);
    let mut worst: f64 = 0.0;
    for i in 0..N {
        let r = if (x[i] - lb[i]).abs() < 1e-12 && (x[i] - ub[i]).abs() < 1e-12 {
            0.0
        } else if (x[i] - lb[i]).abs() < 1e-12 {
            (-grad[i]).max(0.0)
        } else if (x[i] - ub[i]).abs() < 1e-12 {
            grad[i].max(0.0)
        } else {
            grad[i].abs()
        };
        worst = worst.max(r);
    }
    worst
}

/// Exact minimizer of the box-constrained weighted least-squares problem
///
/// `min |A x - u|^2_W + lambda |x|^2   s.t.  lb <= x <= ub`
///
/// for a wide full-row-rank `A` (M < N). The same primal active-set
/// iteration as [`solve_box_qp`], but every equality-constrained subproblem
/// is solved in range space,
///
/// `x_free = A_f^T (A_f A_f^T + lambda W^-1)^-1 (u - A_pinned x_pinned)`,
///
/// whose conditioning is governed by `A A^T` rather than by
/// `A^T W A + lambda I`; this stays accurate down to `lambda -> 0`, where
/// the interior solution coincides with the pseudo-inverse one.
pub fn solve_box_lsq<const M: usize, const N: usize>(
    a: &SMatrix<f64, M, N>,
    u: &SVector<f64, M>,
    w_inv: &SMatrix<f64, M, M>,
    lambda: f64,
    lb: &SVector<f64, N>,
    ub: &SVector<f64, N>,
) -> BoxQpSolution<N> {
    debug_assert!((0..N).all(|i| lb[i] <= ub[i]), "inconsistent bounds");
    let mut state = [VarState::Free; N];
    for i in 0..N {
        if ub[i] - lb[i] <= 0.0 {
            state[i] = VarState::Pinned;
        }
    }

    // gradient of the objective: 2 A^T W (A x - u) + 2 lambda x
    let w = gauss_solve_mat(w_inv, &SMatrix::<f64, M, M>::identity());
    let grad_at = |x: &SVector<f64, N>| -> SVector<f64, N> {
        let resid = a * x - u;
        2.0 * (a.transpose() * (w * resid)) + 2.0 * lambda * x
    };

    let eq_solve = |state: &[VarState; N], x: &SVector<f64, N>| -> SVector<f64, N> {
        // residual target after removing pinned contributions
        let mut rhs = *u;
        for i in 0..N {
            if state[i] != VarState::Free {
                for r in 0..M {
                    rhs[r] -= a[(r, i)] * x[i];
                }
            }
        }
        // A_f A_f^T + lambda W^-1 over the free columns
        let mut gram = lambda * w_inv;
        for i in 0..N {
            if state[i] != VarState::Free {
                continue;
            }
            for r in 0..M {
                for c in 0..M {
                    gram[(r, c)] += a[(r, i)] * a[(c, i)];
                }
            }
        }
        let dual = gauss_solve(&gram, &rhs);
        let mut out = *x;
        for i in 0..N {
            if state[i] == VarState::Free {
                out[i] = 0.0;
                for r in 0..M {
                    out[i] += a[(r, i)] * dual[r];
                }
            }
        }
        out
    };

    let mut x = SVector::<f64, N>::zeros();
    for i in 0..N {
        x[i] = lb[i].max(0.0).min(ub[i]);
    }
    let start = eq_solve(&state, &x);
    for i in 0..N {
        if state[i] == VarState::Pinned {
            x[i] = lb[i];
        } else if start[i] <= lb[i] {
            x[i] = lb[i];
            state[i] = VarState::AtLower;
        } else if start[i] >= ub[i] {
            x[i] = ub[i];
            state[i] = VarState::AtUpper;
        } else {
            x[i] = start[i];
        }
    }

    let scale = 1.0 + grad_at(&SVector::zeros()).amax();
    let tol = 1e-12 * scale;
    let max_iter = 30 * N + 10;

    for iter in 0..max_iter {
        let x_eq = eq_solve(&state, &x);

        let mut alpha = 1.0;
        let mut blocker: Option<(usize, VarState)> = None;
        for i in 0..N {
            if state[i] != VarState::Free {
                continue;
            }
            let dx = x_eq[i] - x[i];
            if dx < 0.0 && x_eq[i] < lb[i] {
                let a_step = (lb[i] - x[i]) / dx;
                if a_step < alpha {
                    alpha = a_step;
                    blocker = Some((i, VarState::AtLower));
                }
            } else if dx > 0.0 && x_eq[i] > ub[i] {
                let a_step = (ub[i] - x[i]) / dx;
                if a_step < alpha {
                    alpha = a_step;
                    blocker = Some((i, VarState::AtUpper));
                }
            }
        }
        if let Some((idx, bound)) = blocker {
            for i in 0..N {
                if state[i] == VarState::Free {
                    x[i] += alpha * (x_eq[i] - x[i]);
                }
            }
            x[idx] = if bound == VarState::AtLower { lb[idx] } else { ub[idx] };
            state[idx] = bound;
            continue;
        }
        x = x_eq;

        let grad = grad_at(&x);
        let mut worst = tol;
        let mut release: Option<usize> = None;
        for i in 0..N {
            let viol = match state[i] {
                VarState::AtLower => -grad[i],
                VarState::AtUpper => grad[i],
                _ => continue,
            };
            if viol > worst {
                worst = viol;
                release = Some(i);
            }
        }
        match release {
            Some(i) => state[i] = VarState::Free,
            None => {
                let mut at_bound = [false; N];
                for i in 0..N {
                    at_bound[i] = matches!(state[i], VarState::AtLower | VarState::AtUpper);
                }
                return BoxQpSolution {
                    x,
                    iterations: iter + 1,
                    at_bound,
                };
            }
        }
    }

    let mut at_bound = [false; N];
    for i in 0..N {
        at_bound[i] = matches!(state[i], VarState::AtLower | VarState::AtUpper);
    }
    BoxQpSolution {
        x,
        iterations: max_iter,
        at_bound,
    }
}

/// Column-by-column Gaussian solve for a matrix right-hand side.
fn gauss_solve_mat<const N: usize>(
    m: &SMatrix<f64, N, N>,
    rhs: &SMatrix<f64, N, N>,
) -> SMatrix<f64, N, N> {
    let mut out = SMatrix::<f64, N, N>::zeros();
    for c in 0..N {
        let col = gauss_solve(m, &rhs.column(c).into_owned());
        out.set_column(c, &col);
    }
    out
}

/// Exact minimizer of the box-constrained strictly convex QP.
///
/// Panics in debug builds if `H` is not SPD enough to factor or bounds are
/// inconsistent; callers validate their configs first.
pub fn solve_box_qp<const N: usize>(
    h: &SMatrix<f64, N, N>,
    g: &SVector<f64, N>,
    lb: &SVector<f64, N>,
    ub: &SVector<f64, N>,
) -> BoxQpSolution<N> {
    debug_assert!((0..N).all(|i| lb[i] <= ub[i]), "inconsistent bounds");

    let mut state = [VarState::Free; N];
    for i in 0..N {
        if ub[i] - lb[i] <= 0.0 {
            state[i] = VarState::Pinned;
        }
    }

    // Start from the clamped unconstrained minimizer.
    let mut x = gauss_solve(h, &(-g));
    for i in 0..N {
        if state[i] == VarState::Pinned {
            x[i] = lb[i];
        } else if x[i] <= lb[i] {
            x[i] = lb[i];
            state[i] = VarState::AtLower;
        } else if x[i] >= ub[i] {
            x[i] = ub[i];
            state[i] = VarState::AtUpper;
        }
    }

    let scale = 1.0 + g.amax();
    let tol = 1e-12 * scale;
    let max_iter = 30 * N + 10;

    for iter in 0..max_iter {
        // Equality-constrained solve: pin active variables via identity rows.
        let mut m = *h;
        let mut rhs = -g;
        for i in 0..N {
            if state[i] != VarState::Free {
                for j in 0..N {
                    m[(i, j)] = 0.0;
                }
                m[(i, i)] = 1.0;
                rhs[i] = x[i];
            }
        }
        let x_eq = gauss_solve(&m, &rhs);

        // Step toward the subproblem optimum, stopping at the first
        // blocking bound among free variables.
        let mut alpha = 1.0;
        let mut blocker: Option<(usize, VarState)> = None;
        for i in 0..N {
            if state[i] != VarState::Free {
                continue;
            }
            let dx = x_eq[i] - x[i];
            if dx < 0.0 && x_eq[i] < lb[i] {
                let a = (lb[i] - x[i]) / dx;
                if a < alpha {
                    alpha = a;
                    blocker = Some((i, VarState::AtLower));
                }
            } else if dx > 0.0 && x_eq[i] > ub[i] {
                let a = (ub[i] - x[i]) / dx;
                if a < alpha {
                    alpha = a;
                    blocker = Some((i, VarState::AtUpper));
                }
            }
        }

        if let Some((idx, bound)) = blocker {
            for i in 0..N {
                if state[i] == VarState::Free {
                    x[i] += alpha * (x_eq[i] - x[i]);
                }
            }
            x[idx] = if bound == VarState::AtLower { lb[idx] } else { ub[idx] };
            state[idx] = bound;
            continue;
        }
        x = x_eq;

        // Multiplier check: release the worst wrong-sign active constraint.
        let grad = gradient(h, g, &x);
        let mut worst = tol;
        let mut release: Option<usize> = None;
        for i in 0..N {
            let viol = match state[i] {
                VarState::AtLower => -grad[i],
                VarState::AtUpper => grad[i],
                _ => continue,
            };
            if viol > worst {
                worst = viol;
                release = Some(i);
            }
        }
        match release {
            Some(i) => state[i] = VarState::Free,
            None => {
                let mut at_bound = [false; N];
                for i in 0..N {
                    at_bound[i] = matches!(state[i], VarState::AtLower | VarState::AtUpper);
                }
                return BoxQpSolution {
                    x,
                    iterations: iter + 1,
                    at_bound,
                };
            }
        }
    }

    // Cycling cannot occur for nondegenerate SPD problems; return the best
    // iterate if the cap is ever hit.
    let mut at_bound = [false; N];
    for i in 0..N {
        at_bound[i] = matches!(state[i], VarState::AtLower | VarState::AtUpper);
    }
    BoxQpSolution {
        x,
        iterations: max_iter,
        at_bound,
    }
}
