//! Dense two-phase simplex over general-form programs.
//!
//! Accepts `min c'x` subject to `Eq`/`Le`/`Ge` rows and per-variable bounds
//! (infinite ends allowed). Internally everything is rewritten to equality
//! standard form with nonnegative variables; phase 1 starts from a full
//! artificial basis. Pricing is Dantzig with a permanent switch to Bland's
//! rule after a degeneracy streak, which guarantees termination. Row duals
//! are read off the artificial columns of the final tableau.
//!
//! Sized for desk-scale programs: hundreds of rows, a few thousand columns.

use super::SolverError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rel {
    Eq,
    Le,
    Ge,
}

/// One constraint row; `coeffs` is a sparse (var index, coefficient) list.
#[derive(Debug, Clone)]
pub struct LpRow {
    pub coeffs: Vec<(usize, f64)>,
    pub rel: Rel,
    pub rhs: f64,
}

/// A general-form linear program, always minimized.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub minimize: Vec<f64>,
    pub var_lower: Vec<f64>,
    pub var_upper: Vec<f64>,
    pub rows: Vec<LpRow>,
}

impl LinearProgram {
    pub fn num_vars(&self) -> usize {
        self.minimize.len()
    }

    /// Convenience constructor with free variables.
    pub fn new(minimize: Vec<f64>) -> Self {
        let n = minimize.len();
        LinearProgram {
            minimize,
            var_lower: vec![f64::NEG_INFINITY; n],
            var_upper: vec![f64::INFINITY; n],
            rows: Vec::new(),
        }
    }
}

/// Incremental model builder; maps directly onto [`LinearProgram`].
#[derive(Debug, Default)]
pub struct LpBuilder {
    minimize: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    rows: Vec<LpRow>,
}

impl LpBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn var(&mut self, lower: f64, upper: f64, cost: f64) -> usize {
        self.minimize.push(cost);
        self.lower.push(lower);
        self.upper.push(upper);
        self.minimize.len() - 1
    }

    pub fn row(&mut self, rel: Rel, rhs: f64, coeffs: Vec<(usize, f64)>) {
        self.rows.push(LpRow { coeffs, rel, rhs });
    }

    pub fn build(self) -> LinearProgram {
        LinearProgram {
            minimize: self.minimize,
            var_lower: self.lower,
            var_upper: self.upper,
            rows: self.rows,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

/// KKT residuals of a solution, measured on the original formulation.
#[derive(Debug, Clone, Copy)]
pub struct KktResiduals {
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.primal.max(self.dual).max(self.complementarity)
    }
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub value: f64,
    /// One dual per row. Sign convention for a minimization: `Le` rows have
    /// nonpositive duals, `Ge` rows nonnegative, `Eq` rows free.
    pub row_duals: Vec<f64>,
    /// `c_j - sum_r y_r a_rj`; nonnegative at a lower bound, nonpositive at
    /// an upper bound, ~0 for interior variables.
    pub reduced_costs: Vec<f64>,
    pub kkt: KktResiduals,
    pub iterations: usize,
}

impl LpSolution {
    /// Dual objective under the bound convention above; equals `value` at an
    /// exact optimum (strong duality).
    pub fn dual_objective(&self, lp: &LinearProgram) -> f64 {
        let mut v = 0.0;
        for (r, row) in lp.rows.iter().enumerate() {
            v += self.row_duals[r] * row.rhs;
        }
        for j in 0..lp.num_vars() {
            let d = self.reduced_costs[j];
            if d > 0.0 && lp.var_lower[j].is_finite() {
                v += d * lp.var_lower[j];
            } else if d < 0.0 && lp.var_upper[j].is_finite() {
                v += d * lp.var_upper[j];
            }
        }
        v
    }
}

#[derive(Debug)]
pub enum LpOutcome {
    Optimal(LpSolution),
    Infeasible,
    Unbounded,
}

impl LpOutcome {
    pub fn status(&self) -> LpStatus {
        match self {
            LpOutcome::Optimal(_) => LpStatus::Optimal,
            LpOutcome::Infeasible => LpStatus::Infeasible,
            LpOutcome::Unbounded => LpStatus::Unbounded,
        }
    }

    /// Unwrap an optimal solution; callers use this where feasibility is
    /// guaranteed by construction.
    pub fn expect_optimal(self, what: &str) -> Result<LpSolution, SolverError> {
        match self {
            LpOutcome::Optimal(s) => Ok(s),
            other => Err(SolverError::Numerical(format!(
                "{what}: expected optimal LP, got {:?}",
                other.status()
            ))),
        }
    }
}

const PIVOT_TOL: f64 = 1e-9;
const RC_TOL: f64 = 1e-9;
const DEGENERATE_STEP: f64 = 1e-12;

/// How one original variable maps into standard-form columns.
#[derive(Debug, Clone, Copy)]
enum VarMap {
    /// x = shift + sign * x_std[col]
    Single { col: usize, shift: f64, sign: f64 },
    /// x = x_std[pos] - x_std[neg]
    Split { pos: usize, neg: usize },
}

struct Tableau {
    m: usize,
    ncols: usize, // n_std + m artificials
    a: Vec<f64>,  // m * ncols, row-major
    b: Vec<f64>,
    cost: Vec<f64>, // reduced costs, length ncols
    z: f64,         // current objective of the basis
    basis: Vec<usize>,
    iterations: usize,
    bland: bool,
    degen_streak: usize,
}

enum SimplexEnd {
    Optimal,
    Unbounded,
}

impl Tableau {
    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.ncols + j]
    }

    fn pivot(&mut self, lr: usize, je: usize) {
        let nc = self.ncols;
        let piv = self.a[lr * nc + je];
        debug_assert!(piv.abs() > PIVOT_TOL * 1e-3);
        let inv = 1.0 / piv;
        for j in 0..nc {
            self.a[lr * nc + j] *= inv;
        }
        self.b[lr] *= inv;
        self.a[lr * nc + je] = 1.0;
        for i in 0..self.m {
            if i == lr {
                continue;
            }
            let f = self.a[i * nc + je];
            if f != 0.0 {
                for j in 0..nc {
                    self.a[i * nc + j] -= f * self.a[lr * nc + j];
                }
                self.a[i * nc + je] = 0.0;
                self.b[i] -= f * self.b[lr];
                if self.b[i].abs() < 1e-13 {
                    self.b[i] = 0.0;
                }
            }
        }
        let f = self.cost[je];
        if f != 0.0 {
            for j in 0..nc {
                self.cost[j] -= f * self.a[lr * nc + j];
            }
            self.cost[je] = 0.0;
            // The entering variable moves to b[lr] (already rescaled), so the
            // objective changes by its reduced cost times that step.
            self.z += f * self.b[lr];
        }
        self.basis[lr] = je;
        self.iterations += 1;
    }

    /// Runs pivots until optimal or unbounded. `allowed` filters entering
    /// columns (used to bar artificials in phase 2).
    fn run(&mut self, allowed: &dyn Fn(usize) -> bool, budget: usize) -> Result<SimplexEnd, SolverError> {
        loop {
            if self.iterations > budget {
                return Err(SolverError::IterationLimit);
            }
            // Entering column.
            let mut je: Option<usize> = None;
            if self.bland {
                for j in 0..self.ncols {
                    if allowed(j) && self.cost[j] < -RC_TOL {
                        je = Some(j);
                        break;
                    }
                }
            } else {
                let mut best = -RC_TOL;
                for j in 0..self.ncols {
                    if allowed(j) && self.cost[j] < best {
                        best = self.cost[j];
                        je = Some(j);
                    }
                }
            }
            let je = match je {
                Some(j) => j,
                None => return Ok(SimplexEnd::Optimal),
            };
            // Ratio test; ties broken by smallest basis variable index so the
            // Bland regime is anticycling.
            let mut lr: Option<usize> = None;
            let mut best_ratio = f64::INFINITY;
            for i in 0..self.m {
                let aij = self.at(i, je);
                if aij > PIVOT_TOL {
                    let ratio = self.b[i] / aij;
                    let better = match lr {
                        None => true,
                        Some(cur) => {
                            ratio < best_ratio - 1e-12
                                || (ratio < best_ratio + 1e-12 && self.basis[i] < self.basis[cur])
                        }
                    };
                    if better {
                        best_ratio = ratio;
                        lr = Some(i);
                    }
                }
            }
            let lr = match lr {
                Some(i) => i,
                None => return Ok(SimplexEnd::Unbounded),
            };
            if best_ratio < DEGENERATE_STEP {
                self.degen_streak += 1;
                if self.degen_streak > 2 * self.m + 20 {
                    self.bland = true;
                }
            } else {
                self.degen_streak = 0;
            }
            self.pivot(lr, je);
        }
    }
}

struct StdForm {
    n_std: usize,
    var_map: Vec<VarMap>,
    /// std-form objective coefficients and constant offset.
    c_std: Vec<f64>,
    c_offset: f64,
    /// rows as dense std-form coefficient vectors with rhs.
    rows_a: Vec<Vec<f64>>,
    rows_b: Vec<f64>,
    /// per original row: internal row index and dual sign multiplier.
    row_dual: Vec<(usize, f64)>,
}

fn to_standard_form(lp: &LinearProgram) -> Result<Option<StdForm>, SolverError> {
    let n = lp.num_vars();
    if lp.var_lower.len() != n || lp.var_upper.len() != n {
        return Err(SolverError::BadProgram("bound vectors mismatch objective length".into()));
    }
    for j in 0..n {
        let (lo, hi) = (lp.var_lower[j], lp.var_upper[j]);
        if lo.is_nan() || hi.is_nan() || !lp.minimize[j].is_finite() {
            return Err(SolverError::BadProgram(format!("non-finite data on variable {j}")));
        }
        if lo == f64::INFINITY || hi == f64::NEG_INFINITY || lo > hi + 1e-12 {
            // Empty box: trivially infeasible.
            return Ok(None);
        }
    }
    for (r, row) in lp.rows.iter().enumerate() {
        if !row.rhs.is_finite() {
            return Err(SolverError::BadProgram(format!("non-finite rhs on row {r}")));
        }
        for &(j, v) in &row.coeffs {
            if j >= n || !v.is_finite() {
                return Err(SolverError::BadProgram(format!("bad coefficient on row {r}")));
            }
        }
    }

    let mut var_map = Vec::with_capacity(n);
    let mut c_std: Vec<f64> = Vec::new();
    let mut c_offset = 0.0;
    // Extra rows for doubly bounded variables: (std col, width).
    let mut ub_rows: Vec<(usize, f64)> = Vec::new();
    for j in 0..n {
        let (lo, hi) = (lp.var_lower[j], lp.var_upper[j]);
        let c = lp.minimize[j];
        if lo.is_finite() {
            let col = c_std.len();
            c_std.push(c);
            c_offset += c * lo;
            var_map.push(VarMap::Single { col, shift: lo, sign: 1.0 });
            if hi.is_finite() {
                ub_rows.push((col, hi - lo));
            }
        } else if hi.is_finite() {
            let col = c_std.len();
            c_std.push(-c);
            c_offset += c * hi;
            var_map.push(VarMap::Single { col, shift: hi, sign: -1.0 });
        } else {
            let pos = c_std.len();
            c_std.push(c);
            let neg = c_std.len();
            c_std.push(-c);
            var_map.push(VarMap::Split { pos, neg });
        }
    }

    let mut rows_a: Vec<Vec<f64>> = Vec::new();
    let mut rows_b: Vec<f64> = Vec::new();
    let mut row_dual: Vec<(usize, f64)> = Vec::new();
    let n_core = c_std.len();
    // Slack columns are appended after core columns; count them first.
    let n_slacks = lp
        .rows
        .iter()
        .filter(|r| matches!(r.rel, Rel::Le | Rel::Ge))
        .count()
        + ub_rows.len();
    let n_std = n_core + n_slacks;
    c_std.resize(n_std, 0.0);
    let mut next_slack = n_core;

    for row in &lp.rows {
        let mut dense = vec![0.0; n_std];
        let mut rhs = row.rhs;
        for &(j, v) in &row.coeffs {
            match var_map[j] {
                VarMap::Single { col, shift, sign } => {
                    dense[col] += v * sign;
                    rhs -= v * shift;
                }
                VarMap::Split { pos, neg } => {
                    dense[pos] += v;
                    dense[neg] -= v;
                }
            }
        }
        let mut dual_sign = 1.0;
        match row.rel {
            Rel::Eq => {}
            Rel::Le => {
                dense[next_slack] = 1.0;
                next_slack += 1;
            }
            Rel::Ge => {
                for d in dense.iter_mut() {
                    *d = -*d;
                }
                rhs = -rhs;
                dense[next_slack] = 1.0;
                next_slack += 1;
                dual_sign = -1.0;
            }
        }
        if rhs < 0.0 {
            for d in dense.iter_mut() {
                *d = -*d;
            }
            rhs = -rhs;
            dual_sign = -dual_sign;
        }
        row_dual.push((rows_a.len(), dual_sign));
        rows_a.push(dense);
        rows_b.push(rhs);
    }
    for (col, width) in ub_rows {
        let mut dense = vec![0.0; n_std];
        dense[col] = 1.0;
        dense[next_slack] = 1.0;
        next_slack += 1;
        rows_a.push(dense);
        rows_b.push(width);
    }
    debug_assert_eq!(next_slack, n_std);

    Ok(Some(StdForm { n_std, var_map, c_std, c_offset, rows_a, rows_b, row_dual }))
}

/// Solves a general-form LP. Returns `Optimal` with primal/dual data, or
/// `Infeasible`/`Unbounded`. Numerical breakdown surfaces as an error, never
/// as a wrong status.
pub fn lp_solve(lp: &LinearProgram) -> Result<LpOutcome, SolverError> {
    let std = match to_standard_form(lp)? {
        Some(s) => s,
        None => return Ok(LpOutcome::Infeasible),
    };
    let m = std.rows_a.len();
    let n_std = std.n_std;
    let ncols = n_std + m;

    let mut t = Tableau {
        m,
        ncols,
        a: vec![0.0; m * ncols],
        b: std.rows_b.clone(),
        cost: vec![0.0; ncols],
        z: 0.0,
        basis: (0..m).map(|i| n_std + i).collect(),
        iterations: 0,
        bland: false,
        degen_streak: 0,
    };
    for i in 0..m {
        for j in 0..n_std {
            t.a[i * ncols + j] = std.rows_a[i][j];
        }
        t.a[i * ncols + n_std + i] = 1.0;
    }
    // Phase 1: minimize the sum of artificials. Reduced costs under the
    // artificial basis are c_j - column sums.
    for j in 0..n_std {
        let mut s = 0.0;
        for i in 0..m {
            s += t.a[i * ncols + j];
        }
        t.cost[j] = -s;
    }
    t.z = t.b.iter().sum();
    let b_scale = 1.0 + t.b.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let budget = 20_000 + 60 * (m + ncols);

    match t.run(&|_| true, budget)? {
        SimplexEnd::Optimal => {}
        SimplexEnd::Unbounded => {
            return Err(SolverError::Numerical("phase 1 reported unbounded".into()));
        }
    }
    if t.z > 1e-7 * b_scale {
        return Ok(LpOutcome::Infeasible);
    }
    // Drive surviving artificials out of the basis where possible.
    for i in 0..m {
        if t.basis[i] >= n_std {
            let mut pivot_col = None;
            for j in 0..n_std {
                if t.at(i, j).abs() > 1e-7 {
                    pivot_col = Some(j);
                    break;
                }
            }
            if let Some(j) = pivot_col {
                t.pivot(i, j);
            }
        }
    }

    // Phase 2: real costs.
    let cb: Vec<f64> = t.basis.iter().map(|&j| if j < n_std { std.c_std[j] } else { 0.0 }).collect();
    for j in 0..ncols {
        let cj = if j < n_std { std.c_std[j] } else { 0.0 };
        let mut s = cj;
        for i in 0..m {
            if cb[i] != 0.0 {
                s -= cb[i] * t.a[i * ncols + j];
            }
        }
        t.cost[j] = s;
    }
    debug_assert!(t.basis.iter().all(|&bi| bi < ncols));
    t.z = 0.0;
    for i in 0..m {
        t.z += cb[i] * t.b[i];
    }
    let n_std_allowed = n_std;
    match t.run(&move |j| j < n_std_allowed, budget)? {
        SimplexEnd::Optimal => {}
        SimplexEnd::Unbounded => return Ok(LpOutcome::Unbounded),
    }

    // Recover the primal point.
    let mut x_std = vec![0.0; n_std];
    for i in 0..m {
        if t.basis[i] < n_std {
            x_std[t.basis[i]] = t.b[i];
        }
    }
    let n = lp.num_vars();
    let mut x = vec![0.0; n];
    for j in 0..n {
        x[j] = match std.var_map[j] {
            VarMap::Single { col, shift, sign } => shift + sign * x_std[col],
            VarMap::Split { pos, neg } => x_std[pos] - x_std[neg],
        };
        // Snap to bounds within feasibility noise so downstream bound checks
        // see exact membership.
        if lp.var_lower[j].is_finite() && x[j] < lp.var_lower[j] {
            x[j] = lp.var_lower[j];
        }
        if lp.var_upper[j].is_finite() && x[j] > lp.var_upper[j] {
            x[j] = lp.var_upper[j];
        }
    }

    // Duals: the artificial column for internal row i carries -y_i in its
    // reduced cost.
    let y_int: Vec<f64> = (0..m).map(|i| -t.cost[n_std + i]).collect();
    let mut row_duals = vec![0.0; lp.rows.len()];
    for (r, &(ir, sign)) in std.row_dual.iter().enumerate() {
        row_duals[r] = sign * y_int[ir];
    }
    let mut reduced_costs = vec![0.0; n];
    for j in 0..n {
        reduced_costs[j] = lp.minimize[j];
    }
    for (r, row) in lp.rows.iter().enumerate() {
        let y = row_duals[r];
        if y != 0.0 {
            for &(j, v) in &row.coeffs {
                reduced_costs[j] -= y * v;
            }
        }
    }

    let mut value = 0.0;
    for j in 0..n {
        value += lp.minimize[j] * x[j];
    }
    debug_assert!(
        (value - (t.z + std.c_offset)).abs() <= 1e-6 * (1.0 + value.abs()),
        "tableau and recomputed objective disagree"
    );

    let kkt = kkt_residuals(lp, &x, &row_duals, &reduced_costs);
    let sol = LpSolution { x, value, row_duals, reduced_costs, kkt, iterations: t.iterations };
    debug_assert!(sol.kkt.max() <= super::TOL.lp_kkt * (1.0 + value.abs()), "KKT residual {:?}", sol.kkt);
    Ok(LpOutcome::Optimal(sol))
}

fn kkt_residuals(lp: &LinearProgram, x: &[f64], y: &[f64], d: &[f64]) -> KktResiduals {
    let mut primal = 0.0f64;
    let mut comp = 0.0f64;
    for (r, row) in lp.rows.iter().enumerate() {
        let mut ax = 0.0;
        let mut scale = 1.0f64;
        for &(j, v) in &row.coeffs {
            ax += v * x[j];
            scale = scale.max(v.abs() * x[j].abs());
        }
        let resid = match row.rel {
            Rel::Eq => (ax - row.rhs).abs(),
            Rel::Le => (ax - row.rhs).max(0.0),
            Rel::Ge => (row.rhs - ax).max(0.0),
        };
        primal = primal.max(resid / scale.max(1.0 + row.rhs.abs()));
        if !matches!(row.rel, Rel::Eq) {
            comp = comp.max((y[r] * (ax - row.rhs)).abs() / scale.max(1.0 + row.rhs.abs()));
        }
        match row.rel {
            Rel::Le => primal = primal.max((-y[r]).min(0.0).abs()),
            Rel::Ge => primal = primal.max(y[r].min(0.0).abs()),
            Rel::Eq => {}
        }
    }
    let mut dual = 0.0f64;
    for j in 0..lp.num_vars() {
        let (lo, hi) = (lp.var_lower[j], lp.var_upper[j]);
        let act = 1e-7 * (1.0 + x[j].abs());
        let at_lo = lo.is_finite() && x[j] - lo <= act;
        let at_hi = hi.is_finite() && hi - x[j] <= act;
        let scale = 1.0 + lp.minimize[j].abs();
        let viol = if at_lo && at_hi {
            0.0
        } else if at_lo {
            (-d[j]).max(0.0)
        } else if at_hi {
            d[j].max(0.0)
        } else {
            d[j].abs()
        };
        dual = dual.max(viol / scale);
        primal = primal.max((lo - x[j]).max(0.0).max(x[j] - hi));
    }
    KktResiduals { primal, dual, complementarity: comp }
}

/// Line-oriented dump of an LP instance for external cross-checking:
/// objective row first, then bounds, then one line per constraint row.
pub fn lp_debug_text(lp: &LinearProgram) -> String {
    use std::fmt::Write as _;
    let mut s = String::new();
    let _ = writeln!(s, "min {}", join_dense(&lp.minimize));
    for j in 0..lp.num_vars() {
        let _ = writeln!(s, "var x{} in [{}, {}]", j, lp.var_lower[j], lp.var_upper[j]);
    }
    for row in &lp.rows {
        let mut terms: Vec<String> = row.coeffs.iter().map(|(j, v)| format!("{v}*x{j}")).collect();
        if terms.is_empty() {
            terms.push("0".into());
        }
        let rel = match row.rel {
            Rel::Eq => "=",
            Rel::Le => "<=",
            Rel::Ge => ">=",
        };
        let _ = writeln!(s, "row {} {} {}", terms.join(" + "), rel, row.rhs);
    }
    s
}

fn join_dense(v: &[f64]) -> String {
    v.iter().enumerate().map(|(j, c)| format!("{c}*x{j}")).collect::<Vec<_>>().join(" + ")
}
