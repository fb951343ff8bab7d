//! Per-site LASSO: `L̂(β) + λ‖β₋₁‖₁` by cyclic coordinate descent.
//!
//! The squared-error loss is quadratic, so a single coordinate-descent solve is
//! exact. The logistic loss is handled with an IRLS outer loop: each outer step
//! minimizes the second-order model of `L̂` at the current iterate, then
//! backtracks toward the previous iterate until the true objective does not
//! increase.
//!
//! Coordinate minimization is exact per coordinate, hence invariant to column
//! scaling; the penalty is applied on the original scale of `X`.

use nalgebra::DVector;

use crate::error::{check_dim, Result, ShirError};
use crate::glm::{empirical_loss, gradient, LossFamily, StudyData};

#[derive(Debug, Clone)]
pub struct LassoOptions {
    /// IRLS iterations (logistic only; squared error needs one).
    pub max_outer: usize,
    /// Coordinate sweeps per outer iteration.
    pub max_sweeps: usize,
    /// Largest coefficient change in a sweep that counts as converged.
    pub tol: f64,
    /// KKT residual that must hold at return.
    pub kkt_tol: f64,
    /// Record the objective after every sweep (squared error) or outer step (logistic).
    pub record_trace: bool,
}

impl Default for LassoOptions {
    fn default() -> Self {
        Self {
            max_outer: 50,
            max_sweeps: 10_000,
            tol: 1e-9,
            kkt_tol: 1e-7,
            record_trace: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LassoOutcome {
    pub beta: DVector<f64>,
    pub kkt: f64,
    pub sweeps: usize,
    pub outer_iterations: usize,
    pub trace: Vec<f64>,
}

/// Minimizer of `L̂(β) + λ‖β₋₁‖₁` with default options and a cold start.
pub fn fit_local_lasso(data: &StudyData, family: LossFamily, lambda: f64) -> Result<DVector<f64>> {
    fit_local_lasso_with(data, family, lambda, &LassoOptions::default(), None).map(|o| o.beta)
}

pub fn lasso_objective(
    data: &StudyData,
    family: LossFamily,
    beta: &DVector<f64>,
    lambda: f64,
) -> Result<f64> {
    Ok(empirical_loss(data, beta, family)? + lambda * l1_tail(beta))
}

fn l1_tail(beta: &DVector<f64>) -> f64 {
    beta.iter().skip(1).map(|b| b.abs()).sum()
}

/// Largest violation of the LASSO optimality conditions at `beta`.
pub fn local_kkt_residual(
    data: &StudyData,
    family: LossFamily,
    beta: &DVector<f64>,
    lambda: f64,
) -> Result<f64> {
    let g = gradient(data, beta, family)?;
    let mut worst = g[0].abs();
    for j in 1..beta.len() {
        let v = if beta[j] != 0.0 {
            (g[j] + lambda * beta[j].signum()).abs()
        } else {
            (g[j].abs() - lambda).max(0.0)
        };
        worst = worst.max(v);
    }
    Ok(worst)
}

/// Intercept-only minimizer of `L̂`.
pub fn intercept_only(data: &StudyData, family: LossFamily) -> Result<DVector<f64>> {
    let ybar = data.y().mean();
    let b0 = match family {
        LossFamily::SquaredError => ybar,
        LossFamily::Logistic => {
            if ybar <= 0.0 || ybar >= 1.0 {
                return Err(ShirError::InvalidInput(format!(
                    "site {}: logistic response has a single class",
                    data.site_id()
                )));
            }
            (ybar / (1.0 - ybar)).ln()
        }
    };
    let mut beta = DVector::zeros(data.p());
    beta[0] = b0;
    Ok(beta)
}

/// Smallest λ whose solution has every penalized coefficient at zero.
pub fn lambda_max(data: &StudyData, family: LossFamily) -> Result<f64> {
    let beta = intercept_only(data, family)?;
    let g = gradient(data, &beta, family)?;
    Ok(g.iter().skip(1).fold(0.0f64, |m, v| m.max(v.abs())))
}

/// `len` log-spaced values from `λ_max` down to `ratio·λ_max`.
pub fn default_lambda_grid(
    data: &StudyData,
    family: LossFamily,
    len: usize,
    ratio: f64,
) -> Result<Vec<f64>> {
    let top = lambda_max(data, family)?;
    Ok(log_grid(top, ratio, len))
}

pub(crate) fn log_grid(top: f64, ratio: f64, len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![top];
    }
    let step = ratio.ln() / (len - 1) as f64;
    (0..len).map(|k| top * (step * k as f64).exp()).collect()
}

struct CoordinateState<'a> {
    data: &'a StudyData,
    family: LossFamily,
    beta: DVector<f64>,
    /// Loss gradient at the expansion point.
    grad0: DVector<f64>,
    /// `A(β − β₀)`, `β₀` the expansion point, with `A = n⁻¹XᵀWX`.
    shift: DVector<f64>,
    weights: Vec<f64>,
    curvature: Vec<f64>,
    /// Columns of `A`, computed the first time a coordinate moves.
    gram: Vec<Option<DVector<f64>>>,
}

impl<'a> CoordinateState<'a> {
    fn expand_at(data: &'a StudyData, family: LossFamily, beta: DVector<f64>) -> Result<Self> {
        let n = data.n();
        let p = data.p();
        let eta = data.x() * &beta;
        let mut d1 = DVector::zeros(n);
        let mut weights = Vec::with_capacity(n);
        for (i, (&a, &y)) in eta.iter().zip(data.y().iter()).enumerate() {
            let v = family.d1(a, y);
            if !v.is_finite() {
                return Err(ShirError::NonFinite {
                    context: "lasso working residual",
                    index: i,
                });
            }
            d1[i] = v;
            weights.push(family.d2(a, y));
        }
        let inv_n = 1.0 / n as f64;
        let curvature = data
            .x()
            .column_iter()
            .map(|col| {
                col.iter()
                    .zip(&weights)
                    .map(|(x, w)| w * x * x)
                    .sum::<f64>()
                    * inv_n
            })
            .collect();
        Ok(Self {
            data,
            family,
            grad0: data.x().tr_mul(&d1) * inv_n,
            beta,
            shift: DVector::zeros(p),
            weights,
            curvature,
            gram: vec![None; p],
        })
    }

    fn ensure_gram_column(&mut self, j: usize) {
        if self.gram[j].is_none() {
            let n = self.weights.len();
            let col = self.data.x().column(j);
            let wx = DVector::from_iterator(n, col.iter().zip(&self.weights).map(|(x, w)| w * x));
            self.gram[j] = Some(self.data.x().tr_mul(&wx) / n as f64);
        }
    }

    /// Exact minimization over coordinate `j`; returns |Δβ_j|.
    fn update(&mut self, j: usize, lambda: f64) -> f64 {
        let a = self.curvature[j];
        if a <= 0.0 {
            return 0.0;
        }
        let g = self.grad0[j] + self.shift[j];
        let old = self.beta[j];
        let z = a * old - g;
        let new = if j == 0 { z / a } else { soft_threshold(z, lambda) / a };
        let delta = new - old;
        if delta != 0.0 {
            self.beta[j] = new;
            self.ensure_gram_column(j);
            let col = self.gram[j].as_ref().expect("filled above");
            self.shift.axpy(delta, col, 1.0);
        }
        delta.abs()
    }

    fn sweep(&mut self, coords: impl Iterator<Item = usize>, lambda: f64) -> f64 {
        let mut max_change = 0.0f64;
        for j in coords {
            max_change = max_change.max(self.update(j, lambda));
        }
        max_change
    }

    fn objective(&self, lambda: f64) -> f64 {
        lasso_objective(self.data, self.family, &self.beta, lambda).unwrap_or(f64::NAN)
    }

    /// Coordinate descent on the quadratic model with an active-set strategy.
    fn solve(
        &mut self,
        lambda: f64,
        opts: &LassoOptions,
        sweeps: &mut usize,
        trace: Option<&mut Vec<f64>>,
    ) -> Result<()> {
        let p = self.beta.len();
        let mut trace = trace;
        let mut record = |state: &Self| {
            if let Some(t) = trace.as_deref_mut() {
                t.push(state.objective(lambda));
            }
        };
        let mut local_sweeps = 0usize;
        loop {
            if local_sweeps >= opts.max_sweeps {
                return Err(ShirError::Convergence {
                    solver: "local lasso coordinate descent",
                    iterations: local_sweeps,
                    kkt: f64::NAN,
                });
            }
            let change = self.sweep(0..p, lambda);
            *sweeps += 1;
            local_sweeps += 1;
            record(self);
            if change < opts.tol {
                return Ok(());
            }
            let active: Vec<usize> = (0..p).filter(|&j| j == 0 || self.beta[j] != 0.0).collect();
            loop {
                if local_sweeps >= opts.max_sweeps {
                    return Err(ShirError::Convergence {
                        solver: "local lasso coordinate descent",
                        iterations: local_sweeps,
                        kkt: f64::NAN,
                    });
                }
                let change = self.sweep(active.iter().copied(), lambda);
                *sweeps += 1;
                local_sweeps += 1;
                record(self);
                if change < opts.tol {
                    break;
                }
            }
        }
    }
}

#[inline]
pub fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

pub fn fit_local_lasso_with(
    data: &StudyData,
    family: LossFamily,
    lambda: f64,
    opts: &LassoOptions,
    warm: Option<&DVector<f64>>,
) -> Result<LassoOutcome> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(ShirError::InvalidInput(format!(
            "lasso penalty must be finite and >= 0, got {lambda}"
        )));
    }
    data.validate_for(family)?;
    let p = data.p();
    let start = match warm {
        Some(b) => {
            check_dim("warm start length", p, b.len())?;
            b.clone()
        }
        None => match family {
            LossFamily::Logistic => intercept_only(data, family).unwrap_or_else(|_| DVector::zeros(p)),
            LossFamily::SquaredError => DVector::zeros(p),
        },
    };

    let mut sweeps = 0usize;
    let mut trace = Vec::new();
    match family {
        LossFamily::SquaredError => {
            let mut state = CoordinateState::expand_at(data, family, start)?;
            if opts.record_trace {
                trace.push(state.objective(lambda));
            }
            let mut outer = 0;
            // Residual drift is repaired by re-expanding; the model is exact.
            loop {
                outer += 1;
                state.solve(
                    lambda,
                    opts,
                    &mut sweeps,
                    opts.record_trace.then_some(&mut trace),
                )?;
                let beta = state.beta.clone();
                let kkt = local_kkt_residual(data, family, &beta, lambda)?;
                if kkt <= opts.kkt_tol {
                    return Ok(LassoOutcome {
                        beta,
                        kkt,
                        sweeps,
                        outer_iterations: outer,
                        trace,
                    });
                }
                if outer >= opts.max_outer {
                    return Err(ShirError::Convergence {
                        solver: "local lasso",
                        iterations: sweeps,
                        kkt,
                    });
                }
                state = CoordinateState::expand_at(data, family, beta)?;
            }
        }
        LossFamily::Logistic => {
            let mut beta = start;
            let mut objective = lasso_objective(data, family, &beta, lambda)?;
            if opts.record_trace {
                trace.push(objective);
            }
            let mut kkt = f64::INFINITY;
            for outer in 1..=opts.max_outer {
                let mut state = CoordinateState::expand_at(data, family, beta.clone())?;
                state.solve(lambda, opts, &mut sweeps, None)?;
                let direction = &state.beta - &beta;
                let mut step = 1.0;
                let mut candidate = state.beta;
                let mut cand_obj = lasso_objective(data, family, &candidate, lambda);
                let mut halvings = 0;
                while !matches!(cand_obj, Ok(v) if v <= objective + 1e-12 * objective.abs().max(1.0))
                {
                    halvings += 1;
                    if halvings > 40 {
                        break;
                    }
                    step *= 0.5;
                    candidate = &beta + &direction * step;
                    cand_obj = lasso_objective(data, family, &candidate, lambda);
                }
                let change = (&candidate - &beta).amax();
                let new_obj = cand_obj?;
                // Once the decrease is below rounding, further steps only jitter.
                let stalled = !(new_obj < objective - 1e-15 * objective.abs().max(1.0));
                if new_obj <= objective {
                    beta = candidate;
                    objective = new_obj;
                }
                if opts.record_trace {
                    trace.push(objective);
                }
                kkt = local_kkt_residual(data, family, &beta, lambda)?;
                if (change < opts.tol || stalled) && kkt <= opts.kkt_tol {
                    return Ok(LassoOutcome {
                        beta,
                        kkt,
                        sweeps,
                        outer_iterations: outer,
                        trace,
                    });
                }
                if halvings > 40 && kkt <= opts.kkt_tol {
                    break;
                }
            }
            if kkt <= opts.kkt_tol {
                return Ok(LassoOutcome {
                    beta,
                    kkt,
                    sweeps,
                    outer_iterations: opts.max_outer,
                    trace,
                });
            }
            Err(ShirError::Convergence {
                solver: "local lasso IRLS",
                iterations: opts.max_outer,
                kkt,
            })
        }
    }
}
