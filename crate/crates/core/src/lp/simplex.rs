use super::{LinearProgram, LpError, LpSolution, LpSolver, LpStatus, RowSense};

/// Two-phase dense tableau simplex with Bland's anti-cycling rule.
#[derive(Debug, Clone)]
pub struct DenseSimplex {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for DenseSimplex {
    fn default() -> Self {
        Self { tolerance: 1e-9, max_iterations: 50_000 }
    }
}

/// How an original variable maps onto nonnegative tableau columns.
#[derive(Debug, Clone, Copy)]
enum VarMap {
    /// x = offset + col
    Shift { col: usize, offset: f64 },
    /// x = offset − col
    Mirror { col: usize, offset: f64 },
    /// x = pos − neg
    Split { pos: usize, neg: usize },
}

struct Tableau {
    rows: Vec<Vec<f64>>,
    obj: Vec<f64>,
    basis: Vec<usize>,
    width: usize,
}

impl Tableau {
    fn rhs(&self, r: usize) -> f64 {
        self.rows[r][self.width]
    }

    fn pivot(&mut self, pr: usize, pc: usize) {
        let p = self.rows[pr][pc];
        for v in self.rows[pr].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.rows[pr].clone();
        for (r, row) in self.rows.iter_mut().enumerate() {
            if r != pr {
                let f = row[pc];
                if f != 0.0 {
                    for (v, pv) in row.iter_mut().zip(&pivot_row) {
                        *v -= f * pv;
                    }
                }
            }
        }
        let f = self.obj[pc];
        if f != 0.0 {
            for (v, pv) in self.obj.iter_mut().zip(&pivot_row) {
                *v -= f * pv;
            }
        }
        self.basis[pr] = pc;
    }

    /// Runs simplex iterations on the current objective row. Columns with
    /// `allowed[c] == false` never enter.
    fn optimize(&mut self, allowed: &[bool], tol: f64, budget: &mut usize) -> Result<(), LpError> {
        loop {
            let Some(pc) = (0..self.width).find(|&c| allowed[c] && self.obj[c] < -tol) else {
                return Ok(());
            };
            let mut best: Option<(usize, f64)> = None;
            for r in 0..self.rows.len() {
                let a = self.rows[r][pc];
                if a > tol {
                    let ratio = self.rhs(r) / a;
                    match best {
                        None => best = Some((r, ratio)),
                        Some((br, bratio)) => {
                            if ratio < bratio - tol
                                || (ratio <= bratio + tol && self.basis[r] < self.basis[br])
                            {
                                best = Some((r, ratio));
                            }
                        }
                    }
                }
            }
            let Some((pr, _)) = best else {
                return Err(LpError::Unbounded);
            };
            if *budget == 0 {
                return Err(LpError::SolverFailure {
                    iterations: 0,
                    reason: "simplex iteration limit".into(),
                });
            }
            *budget -= 1;
            self.pivot(pr, pc);
        }
    }
}

impl LpSolver for DenseSimplex {
    fn solve(&self, lp: &LinearProgram) -> Result<LpSolution, LpError> {
        lp.validate()?;
        let tol = self.tolerance;
        let n = lp.num_vars();

        let mut maps = Vec::with_capacity(n);
        let mut ncols = 0;
        let mut bound_rows: Vec<(usize, f64)> = Vec::new();
        for j in 0..n {
            let (l, u) = (lp.lower[j], lp.upper[j]);
            let m = if l.is_finite() {
                if u.is_finite() {
                    bound_rows.push((ncols, u - l));
                }
                VarMap::Shift { col: ncols, offset: l }
            } else if u.is_finite() {
                VarMap::Mirror { col: ncols, offset: u }
            } else {
                ncols += 1;
                VarMap::Split { pos: ncols - 1, neg: ncols }
            };
            ncols += 1;
            maps.push(m);
        }
        let structural = ncols;

        // Rows over the structural columns with offsets folded into the rhs.
        let mut dense_rows: Vec<(Vec<f64>, RowSense, f64)> = Vec::new();
        for row in &lp.rows {
            let mut coef = vec![0.0; structural];
            let mut rhs = row.rhs;
            for &(j, a) in &row.terms {
                match maps[j] {
                    VarMap::Shift { col, offset } => {
                        coef[col] += a;
                        rhs -= a * offset;
                    }
                    VarMap::Mirror { col, offset } => {
                        coef[col] -= a;
                        rhs -= a * offset;
                    }
                    VarMap::Split { pos, neg } => {
                        coef[pos] += a;
                        coef[neg] -= a;
                    }
                }
            }
            dense_rows.push((coef, row.sense, rhs));
        }
        for &(col, width) in &bound_rows {
            let mut coef = vec![0.0; structural];
            coef[col] = 1.0;
            dense_rows.push((coef, RowSense::Le, width));
        }
        for (coef, sense, rhs) in dense_rows.iter_mut() {
            if *rhs < 0.0 {
                coef.iter_mut().for_each(|v| *v = -*v);
                *rhs = -*rhs;
                *sense = match *sense {
                    RowSense::Le => RowSense::Ge,
                    RowSense::Ge => RowSense::Le,
                    RowSense::Eq => RowSense::Eq,
                };
            }
        }

        let m = dense_rows.len();
        let n_slack = dense_rows.iter().filter(|r| r.1 != RowSense::Eq).count();
        let n_art = dense_rows.iter().filter(|r| r.1 != RowSense::Le).count();
        let width = structural + n_slack + n_art;
        let mut tab = Tableau {
            rows: vec![vec![0.0; width + 1]; m],
            obj: vec![0.0; width + 1],
            basis: vec![0; m],
            width,
        };
        let mut slack = structural;
        let mut art = structural + n_slack;
        let mut is_art = vec![false; width];
        for (r, (coef, sense, rhs)) in dense_rows.iter().enumerate() {
            tab.rows[r][..structural].copy_from_slice(coef);
            tab.rows[r][width] = *rhs;
            match sense {
                RowSense::Le => {
                    tab.rows[r][slack] = 1.0;
                    tab.basis[r] = slack;
                    slack += 1;
                }
                RowSense::Ge => {
                    tab.rows[r][slack] = -1.0;
                    slack += 1;
                    tab.rows[r][art] = 1.0;
                    tab.basis[r] = art;
                    is_art[art] = true;
                    art += 1;
                }
                RowSense::Eq => {
                    tab.rows[r][art] = 1.0;
                    tab.basis[r] = art;
                    is_art[art] = true;
                    art += 1;
                }
            }
        }

        let mut budget = self.max_iterations;
        let start_budget = budget;

        // Phase 1: minimize the sum of artificials.
        if n_art > 0 {
            for c in 0..width {
                if is_art[c] {
                    tab.obj[c] = 1.0;
                }
            }
            for r in 0..m {
                if is_art[tab.basis[r]] {
                    let row = tab.rows[r].clone();
                    for (v, rv) in tab.obj.iter_mut().zip(&row) {
                        *v -= rv;
                    }
                }
            }
            let all = vec![true; width];
            tab.optimize(&all, tol, &mut budget)?;
            if -tab.obj[width] > 1e-7 * (1.0 + dense_rows.iter().map(|r| r.2).fold(0.0, f64::max)) {
                return Err(LpError::Infeasible);
            }
            // Drive remaining artificials out of the basis where possible.
            for r in 0..m {
                if is_art[tab.basis[r]] {
                    if let Some(c) = (0..width).find(|&c| !is_art[c] && tab.rows[r][c].abs() > tol) {
                        tab.pivot(r, c);
                    }
                }
            }
        }

        // Phase 2.
        let mut cost = vec![0.0; width + 1];
        for (j, map) in maps.iter().enumerate() {
            let c = lp.cost[j];
            match *map {
                VarMap::Shift { col, .. } => {
                    cost[col] += c;
                }
                VarMap::Mirror { col, .. } => {
                    cost[col] -= c;
                }
                VarMap::Split { pos, neg } => {
                    cost[pos] += c;
                    cost[neg] -= c;
                }
            }
        }
        tab.obj = cost;
        for r in 0..m {
            let cb = tab.obj[tab.basis[r]];
            if cb != 0.0 {
                let row = tab.rows[r].clone();
                for (v, rv) in tab.obj.iter_mut().zip(&row) {
                    *v -= cb * rv;
                }
            }
        }
        let allowed: Vec<bool> = (0..width).map(|c| !is_art[c]).collect();
        tab.optimize(&allowed, tol, &mut budget)?;

        let mut cols = vec![0.0; width];
        for r in 0..m {
            cols[tab.basis[r]] = tab.rhs(r);
        }
        let x: Vec<f64> = maps
            .iter()
            .map(|map| match *map {
                VarMap::Shift { col, offset } => offset + cols[col],
                VarMap::Mirror { col, offset } => offset - cols[col],
                VarMap::Split { pos, neg } => cols[pos] - cols[neg],
            })
            .collect();
        Ok(LpSolution {
            objective: lp.objective(&x),
            x,
            status: LpStatus::Optimal,
            iterations: start_budget - budget,
        })
    }
}
