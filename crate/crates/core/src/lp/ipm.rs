use super::sparse::{reverse_cuthill_mckee, EnvelopeLdl};
use super::{LinearProgram, LpError, LpSolution, LpSolver, LpStatus, RowSense};

const NEAR_OPTIMAL: f64 = 1e-6;

/// Mehrotra predictor-corrector interior-point method.
///
/// Inequality rows receive explicit slack columns. Columns that appear in a
/// single row and carry a finite bound are eliminated into that row's
/// diagonal, and the remaining regularized augmented system
/// `[−Θ⁻¹ − ρI, Aᵀ; A, δI]` is factorized by envelope LDLᵀ after a reverse
/// Cuthill–McKee ordering. Two steps of iterative refinement against the
/// unregularized Newton system follow every solve.
#[derive(Debug, Clone)]
pub struct InteriorPoint {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub primal_regularization: f64,
    pub dual_regularization: f64,
}

impl Default for InteriorPoint {
    fn default() -> Self {
        Self {
            tolerance: 1e-9,
            max_iterations: 200,
            primal_regularization: 1e-9,
            dual_regularization: 1e-9,
        }
    }
}

/// Equality-form program `A x = b, l ≤ x ≤ u`, stored by column.
struct Standard {
    cols: Vec<Vec<(usize, f64)>>,
    b: Vec<f64>,
    c: Vec<f64>,
    lo: Vec<f64>,
    up: Vec<f64>,
    n_orig: usize,
}

impl Standard {
    fn from_lp(lp: &LinearProgram) -> Self {
        let n = lp.num_vars();
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        let mut c = lp.cost.clone();
        let mut lo = lp.lower.clone();
        let mut up = lp.upper.clone();
        let mut b = Vec::with_capacity(lp.num_rows());
        for (i, row) in lp.rows.iter().enumerate() {
            for &(j, a) in &row.terms {
                match cols[j].last_mut() {
                    Some(last) if last.0 == i => last.1 += a,
                    _ => cols[j].push((i, a)),
                }
            }
            b.push(row.rhs);
            let slack = match row.sense {
                RowSense::Le => Some(1.0),
                RowSense::Ge => Some(-1.0),
                RowSense::Eq => None,
            };
            if let Some(sign) = slack {
                cols.push(vec![(i, sign)]);
                c.push(0.0);
                lo.push(0.0);
                up.push(f64::INFINITY);
            }
        }
        for col in cols.iter_mut() {
            col.retain(|&(_, a)| a != 0.0);
        }
        Self { cols, b, c, lo, up, n_orig: n }
    }

    fn n(&self) -> usize {
        self.cols.len()
    }

    fn m(&self) -> usize {
        self.b.len()
    }

    fn a_times(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (j, col) in self.cols.iter().enumerate() {
            for &(i, a) in col {
                out[i] += a * x[j];
            }
        }
    }

    fn at_times(&self, y: &[f64], j: usize) -> f64 {
        self.cols[j].iter().map(|&(i, a)| a * y[i]).sum()
    }
}

/// Reduced KKT system with a fixed sparsity pattern.
struct Kkt {
    /// KKT position of each column, or `None` when eliminated.
    col_pos: Vec<Option<usize>>,
    row_pos: Vec<usize>,
    /// Eliminated columns: (column, row, coefficient).
    eliminated: Vec<(usize, usize, f64)>,
    ldl: EnvelopeLdl,
    d: Vec<f64>,
    theta_inv: Vec<f64>,
}

impl Kkt {
    fn new(sf: &Standard) -> Self {
        let (n, m) = (sf.n(), sf.m());
        let mut kept = Vec::new();
        let mut eliminated = Vec::new();
        for (j, col) in sf.cols.iter().enumerate() {
            let bounded = sf.lo[j].is_finite() || sf.up[j].is_finite();
            if col.len() == 1 && bounded {
                eliminated.push((j, col[0].0, col[0].1));
            } else {
                kept.push(j);
            }
        }
        let nk = kept.len();
        let dim = nk + m;
        let mut adj = vec![Vec::new(); dim];
        for (p, &j) in kept.iter().enumerate() {
            for &(i, _) in &sf.cols[j] {
                adj[p].push(nk + i);
                adj[nk + i].push(p);
            }
        }
        let perm = reverse_cuthill_mckee(&adj);
        let mut pos = vec![0; dim];
        for (new, &old) in perm.iter().enumerate() {
            pos[old] = new;
        }
        let mut col_pos = vec![None; n];
        for (p, &j) in kept.iter().enumerate() {
            col_pos[j] = Some(pos[p]);
        }
        let row_pos: Vec<usize> = (0..m).map(|i| pos[nk + i]).collect();
        let mut first: Vec<usize> = (0..dim).collect();
        for (p, nbrs) in adj.iter().enumerate() {
            let a = pos[p];
            for &q in nbrs {
                let b = pos[q];
                if b < a {
                    first[a] = first[a].min(b);
                }
            }
        }
        Self {
            col_pos,
            row_pos,
            eliminated,
            ldl: EnvelopeLdl::with_profile(first),
            d: vec![0.0; n],
            theta_inv: vec![0.0; n],
        }
    }

    fn factor(&mut self, sf: &Standard, theta_inv: &[f64], rho: f64, delta: f64) -> Result<(), String> {
        self.theta_inv.copy_from_slice(theta_inv);
        self.ldl.clear();
        for j in 0..sf.n() {
            self.d[j] = theta_inv[j] + rho;
        }
        for (j, col) in sf.cols.iter().enumerate() {
            if let Some(p) = self.col_pos[j] {
                self.ldl.add(p, p, -self.d[j]);
                for &(i, a) in col {
                    self.ldl.add(self.row_pos[i], p, a);
                }
            }
        }
        for &p in &self.row_pos {
            self.ldl.add(p, p, delta);
        }
        for &(j, i, a) in &self.eliminated {
            self.ldl.add(self.row_pos[i], self.row_pos[i], a * a / self.d[j]);
        }
        self.ldl.factor()
    }

    /// One regularized solve of `−Θ⁻¹dx + Aᵀdy = h, A dx = r`.
    fn solve_reduced(&self, sf: &Standard, h: &[f64], r: &[f64], dx: &mut [f64], dy: &mut [f64]) {
        let mut rhs = vec![0.0; self.ldl.dim()];
        for j in 0..sf.n() {
            if let Some(p) = self.col_pos[j] {
                rhs[p] = h[j];
            }
        }
        for (i, &p) in self.row_pos.iter().enumerate() {
            rhs[p] = r[i];
        }
        for &(j, i, a) in &self.eliminated {
            rhs[self.row_pos[i]] += a * h[j] / self.d[j];
        }
        self.ldl.solve(&mut rhs);
        for j in 0..sf.n() {
            if let Some(p) = self.col_pos[j] {
                dx[j] = rhs[p];
            }
        }
        for (i, &p) in self.row_pos.iter().enumerate() {
            dy[i] = rhs[p];
        }
        for &(j, i, a) in &self.eliminated {
            dx[j] = (a * dy[i] - h[j]) / self.d[j];
        }
    }

    fn solve(&self, sf: &Standard, h: &[f64], r: &[f64], dx: &mut [f64], dy: &mut [f64]) {
        self.solve_reduced(sf, h, r, dx, dy);
        let (n, m) = (sf.n(), sf.m());
        let mut rh = vec![0.0; n];
        let mut rr = vec![0.0; m];
        let mut cx = vec![0.0; n];
        let mut cy = vec![0.0; m];
        for _ in 0..2 {
            for j in 0..n {
                rh[j] = h[j] - (-self.theta_inv[j] * dx[j] + sf.at_times(dy, j));
            }
            sf.a_times(dx, &mut rr);
            for i in 0..m {
                rr[i] = r[i] - rr[i];
            }
            self.solve_reduced(sf, &rh, &rr, &mut cx, &mut cy);
            for j in 0..n {
                dx[j] += cx[j];
            }
            for i in 0..m {
                dy[i] += cy[i];
            }
        }
    }
}

fn max_step(v: &[f64], dv: &[f64], mask: &[bool], sign: f64) -> f64 {
    let mut alpha: f64 = 1.0;
    for k in 0..v.len() {
        let d = sign * dv[k];
        if mask[k] && d < 0.0 {
            alpha = alpha.min(-v[k] / d);
        }
    }
    alpha
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, &x| a.max(x.abs()))
}

impl LpSolver for InteriorPoint {
    fn solve(&self, lp: &LinearProgram) -> Result<LpSolution, LpError> {
        lp.validate()?;
        let sf = Standard::from_lp(lp);
        let (n, m) = (sf.n(), sf.m());
        let has_l: Vec<bool> = sf.lo.iter().map(|v| v.is_finite()).collect();
        let has_u: Vec<bool> = sf.up.iter().map(|v| v.is_finite()).collect();
        let n_bounds = has_l.iter().chain(&has_u).filter(|&&b| b).count();

        if (0..n).any(|j| has_l[j] && has_u[j] && sf.up[j] == sf.lo[j]) {
            return self.solve_fixed(lp);
        }
        // Once the tolerance is within reach, floating-point cancellation in
        // the bound slacks can spoil further iterations; the most recent
        // iterate meeting NEAR_OPTIMAL is returned if that happens.
        let mut fallback: Option<(Vec<f64>, usize)> = None;
        let near_optimal = |f: Option<(Vec<f64>, usize)>| {
            f.map(|(x, iterations)| LpSolution { objective: lp.objective(&x), x, status: LpStatus::Optimal, iterations })
        };
        let mut kkt = Kkt::new(&sf);
        let (mut x, mut y, mut zl, mut zu) = self.starting_point(&sf, &mut kkt, &has_l, &has_u)?;
        let b_norm = 1.0 + inf_norm(&sf.b);
        let c_norm = 1.0 + inf_norm(&sf.c);

        let mut rp = vec![0.0; m];
        let mut rd = vec![0.0; n];
        let mut sl = vec![0.0; n];
        let mut su = vec![0.0; n];
        let mut theta_inv = vec![0.0; n];
        let mut h = vec![0.0; n];
        let mut dx = vec![0.0; n];
        let mut dy = vec![0.0; m];
        let mut dzl = vec![0.0; n];
        let mut dzu = vec![0.0; n];
        let mut rl = vec![0.0; n];
        let mut ru = vec![0.0; n];

        for iter in 0..self.max_iterations {
            sf.a_times(&x, &mut rp);
            for i in 0..m {
                rp[i] = sf.b[i] - rp[i];
            }
            for j in 0..n {
                rd[j] = sf.c[j] - sf.at_times(&y, j) - zl[j] + zu[j];
                sl[j] = if has_l[j] { x[j] - sf.lo[j] } else { 1.0 };
                su[j] = if has_u[j] { sf.up[j] - x[j] } else { 1.0 };
            }
            let comp: f64 = (0..n)
                .map(|j| if has_l[j] { sl[j] * zl[j] } else { 0.0 } + if has_u[j] { su[j] * zu[j] } else { 0.0 })
                .sum();
            let mu = if n_bounds > 0 { comp / n_bounds as f64 } else { 0.0 };
            let pobj: f64 = (0..n).map(|j| sf.c[j] * x[j]).sum();
            let dobj: f64 = sf.b.iter().zip(&y).map(|(b, y)| b * y).sum::<f64>()
                + (0..n)
                    .map(|j| {
                        (if has_l[j] { sf.lo[j] * zl[j] } else { 0.0 })
                            - (if has_u[j] { sf.up[j] * zu[j] } else { 0.0 })
                    })
                    .sum::<f64>();
            let pinf = inf_norm(&rp) / b_norm;
            let dinf = inf_norm(&rd) / c_norm;
            let gap = (pobj - dobj).abs() / (1.0 + pobj.abs());
            if pinf < self.tolerance && dinf < self.tolerance && gap < self.tolerance {
                let xo = x[..sf.n_orig].to_vec();
                return Ok(LpSolution {
                    objective: lp.objective(&xo),
                    x: xo,
                    status: LpStatus::Optimal,
                    iterations: iter,
                });
            }
            if pinf < NEAR_OPTIMAL && dinf < NEAR_OPTIMAL && gap < NEAR_OPTIMAL {
                fallback = Some((x[..sf.n_orig].to_vec(), iter));
            }
            if !gap.is_finite() || inf_norm(&x) > 1e14 || inf_norm(&y) > 1e14 {
                return near_optimal(fallback.take())
                    .ok_or_else(|| self.failure(iter, "iterates diverged (problem may be infeasible or unbounded)", pinf, dinf, gap));
            }

            for j in 0..n {
                theta_inv[j] = ((if has_l[j] { zl[j] / sl[j] } else { 0.0 })
                    + (if has_u[j] { zu[j] / su[j] } else { 0.0 }))
                .min(1e16);
            }
            // Near the optimum Θ⁻¹ spans many decades; retry with stronger
            // regularization before giving up. Refinement in `Kkt::solve`
            // keeps the directions accurate.
            let (mut rho, mut delta) = (self.primal_regularization, self.dual_regularization);
            while let Err(e) = kkt.factor(&sf, &theta_inv, rho, delta) {
                if rho >= 1e-4 {
                    return near_optimal(fallback.take()).ok_or_else(|| self.failure(iter, &e, pinf, dinf, gap));
                }
                rho *= 100.0;
                delta *= 100.0;
            }

            // Predictor.
            for j in 0..n {
                rl[j] = if has_l[j] { -sl[j] * zl[j] } else { 0.0 };
                ru[j] = if has_u[j] { -su[j] * zu[j] } else { 0.0 };
            }
            let direction = |rl: &[f64], ru: &[f64], h: &mut [f64], dx: &mut [f64], dy: &mut [f64], dzl: &mut [f64], dzu: &mut [f64]| {
                for j in 0..n {
                    h[j] = rd[j] - if has_l[j] { rl[j] / sl[j] } else { 0.0 } + if has_u[j] { ru[j] / su[j] } else { 0.0 };
                }
                kkt.solve(&sf, h, &rp, dx, dy);
                for j in 0..n {
                    dzl[j] = if has_l[j] { (rl[j] - zl[j] * dx[j]) / sl[j] } else { 0.0 };
                    dzu[j] = if has_u[j] { (ru[j] + zu[j] * dx[j]) / su[j] } else { 0.0 };
                }
            };
            direction(&rl, &ru, &mut h, &mut dx, &mut dy, &mut dzl, &mut dzu);
            let steps = |dx: &[f64], dzl: &[f64], dzu: &[f64]| {
                let ap = max_step(&sl, dx, &has_l, 1.0).min(max_step(&su, dx, &has_u, -1.0));
                let ad = max_step(&zl, dzl, &has_l, 1.0).min(max_step(&zu, dzu, &has_u, 1.0));
                (ap, ad)
            };
            let (ap, ad) = steps(&dx, &dzl, &dzu);

            if n_bounds > 0 {
                let mu_aff: f64 = (0..n)
                    .map(|j| {
                        (if has_l[j] { (sl[j] + ap * dx[j]) * (zl[j] + ad * dzl[j]) } else { 0.0 })
                            + (if has_u[j] { (su[j] - ap * dx[j]) * (zu[j] + ad * dzu[j]) } else { 0.0 })
                    })
                    .sum::<f64>()
                    / n_bounds as f64;
                let sigma = (mu_aff / mu).powi(3).clamp(0.0, 1.0);
                // Corrector with second-order terms.
                for j in 0..n {
                    rl[j] = if has_l[j] { sigma * mu - sl[j] * zl[j] - dx[j] * dzl[j] } else { 0.0 };
                    ru[j] = if has_u[j] { sigma * mu - su[j] * zu[j] + dx[j] * dzu[j] } else { 0.0 };
                }
                direction(&rl, &ru, &mut h, &mut dx, &mut dy, &mut dzl, &mut dzu);
            }
            let (ap, ad) = steps(&dx, &dzl, &dzu);
            let ap = (0.995 * ap).min(1.0);
            let ad = (0.995 * ad).min(1.0);
            for j in 0..n {
                x[j] += ap * dx[j];
                zl[j] += ad * dzl[j];
                zu[j] += ad * dzu[j];
            }
            for i in 0..m {
                y[i] += ad * dy[i];
            }
        }
        near_optimal(fallback).ok_or_else(|| LpError::SolverFailure {
            iterations: self.max_iterations,
            reason: "iteration limit reached".into(),
        })
    }
}

impl InteriorPoint {
    /// Least-norm primal point and least-squares duals, pushed into the
    /// interior of the bounds and balanced so the complementarity products
    /// start on a common scale.
    #[allow(clippy::type_complexity)]
    fn starting_point(
        &self,
        sf: &Standard,
        kkt: &mut Kkt,
        has_l: &[bool],
        has_u: &[bool],
    ) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>), LpError> {
        let (n, m) = (sf.n(), sf.m());
        kkt.factor(sf, &vec![1.0; n], self.primal_regularization, self.dual_regularization)
            .map_err(|e| self.failure(0, &e, f64::NAN, f64::NAN, f64::NAN))?;
        let mut x = vec![0.0; n];
        let mut y = vec![0.0; m];
        kkt.solve(sf, &vec![0.0; n], &sf.b, &mut x, &mut y);
        let mut r = vec![0.0; n];
        kkt.solve(sf, &sf.c, &vec![0.0; m], &mut r, &mut y);
        // r = Aᵀy − c, so the reduced costs are −r.
        let mut zl = vec![0.0; n];
        let mut zu = vec![0.0; n];
        for j in 0..n {
            let rc = -r[j];
            match (has_l[j], has_u[j]) {
                (true, true) => {
                    let w = sf.up[j] - sf.lo[j];
                    x[j] = x[j].clamp(sf.lo[j] + 0.1 * w, sf.up[j] - 0.1 * w);
                    zl[j] = rc.max(0.0);
                    zu[j] = (-rc).max(0.0);
                }
                (true, false) => zl[j] = rc.max(0.0),
                (false, true) => zu[j] = (-rc).max(0.0),
                (false, false) => {}
            }
        }
        // Shift one-sided bounds so every slack is positive.
        let min_slack = (0..n)
            .flat_map(|j| {
                [
                    (has_l[j] && !has_u[j]).then(|| x[j] - sf.lo[j]),
                    (has_u[j] && !has_l[j]).then(|| sf.up[j] - x[j]),
                ]
            })
            .flatten()
            .fold(f64::INFINITY, f64::min);
        let dx = (-1.5 * min_slack).max(0.0);
        let z_min = zl.iter().zip(has_l).chain(zu.iter().zip(has_u)).filter(|(_, &b)| b).map(|(z, _)| *z).fold(f64::INFINITY, f64::min);
        let dz = (-1.5 * z_min).max(0.0);
        let mut slack_sum = 0.0;
        let mut dual_sum = 0.0;
        let mut product = 0.0;
        for j in 0..n {
            if has_l[j] && !has_u[j] {
                x[j] += dx;
            } else if has_u[j] && !has_l[j] {
                x[j] -= dx;
            }
            for (has, s, z) in [(has_l[j], x[j] - sf.lo[j], &mut zl[j]), (has_u[j], sf.up[j] - x[j], &mut zu[j])] {
                if has {
                    *z += dz;
                    slack_sum += s;
                    dual_sum += *z;
                    product += s * *z;
                }
            }
        }
        if slack_sum > 0.0 {
            let ds = 0.5 * product / dual_sum.max(f64::MIN_POSITIVE);
            let dzz = 0.5 * product / slack_sum;
            for j in 0..n {
                if has_l[j] && !has_u[j] {
                    x[j] += ds;
                } else if has_u[j] && !has_l[j] {
                    x[j] -= ds;
                }
                if has_l[j] {
                    zl[j] += dzz.max(1e-8);
                }
                if has_u[j] {
                    zu[j] += dzz.max(1e-8);
                }
            }
        }
        Ok((x, y, zl, zu))
    }

    fn failure(&self, iterations: usize, what: &str, pinf: f64, dinf: f64, gap: f64) -> LpError {
        LpError::SolverFailure {
            iterations,
            reason: format!("{what}; primal residual {pinf:.3e}, dual residual {dinf:.3e}, gap {gap:.3e}"),
        }
    }

    /// Programs with fixed variables are rewritten with those variables
    /// substituted out, then solved.
    fn solve_fixed(&self, lp: &LinearProgram) -> Result<LpSolution, LpError> {
        let n = lp.num_vars();
        let mut map = vec![None; n];
        let mut reduced = LinearProgram::new();
        for j in 0..n {
            if lp.lower[j] != lp.upper[j] {
                map[j] = Some(reduced.add_var(lp.cost[j], lp.lower[j], lp.upper[j]));
            }
        }
        for row in &lp.rows {
            let mut rhs = row.rhs;
            let mut terms = Vec::new();
            for &(j, a) in &row.terms {
                match map[j] {
                    Some(k) => terms.push((k, a)),
                    None => rhs -= a * lp.lower[j],
                }
            }
            if terms.is_empty() {
                let ok = match row.sense {
                    RowSense::Le => 0.0 <= rhs + 1e-12,
                    RowSense::Ge => 0.0 >= rhs - 1e-12,
                    RowSense::Eq => rhs.abs() <= 1e-12,
                };
                if !ok {
                    return Err(LpError::Infeasible);
                }
            } else {
                reduced.add_row(terms, row.sense, rhs);
            }
        }
        let sol = if reduced.num_vars() == 0 {
            LpSolution { x: vec![], objective: 0.0, status: LpStatus::Optimal, iterations: 0 }
        } else {
            self.solve(&reduced)?
        };
        let x: Vec<f64> = (0..n).map(|j| map[j].map_or(lp.lower[j], |k| sol.x[k])).collect();
        Ok(LpSolution { objective: lp.objective(&x), x, status: sol.status, iterations: sol.iterations })
    }
}
