use std::cmp::Ordering;

use nalgebra::{Cholesky, DMatrix, DVector};

use super::bundle::{CoefficientBundle, PenaltyConfig};
use super::prox::{center, group_soft, l2, soft};
use crate::error::{check_dim, Result, ShirError};
use crate::local::LocalSummary;

/// Controls for the block coordinate descent.
#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub max_sweeps: usize,
    /// Relative objective change that triggers a KKT check.
    pub tol: f64,
    /// Maximum KKT residual accepted at return.
    pub kkt_tol: f64,
    /// Stopping change for the inner majorize-minimize loop of a group block.
    pub inner_tol: f64,
    pub max_inner: usize,
    /// Residuals are recomputed from scratch every this many sweeps.
    pub refresh_every: usize,
    /// Hold `α_j = 0` for every penalized column (pooled fit).
    pub freeze_alpha: bool,
    pub record_trace: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_sweeps: 100_000,
            tol: 1e-10,
            kkt_tol: 1e-8,
            inner_tol: 1e-12,
            max_inner: 10_000,
            refresh_every: 50,
            freeze_alpha: false,
            record_trace: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub bundle: CoefficientBundle,
    pub objective: f64,
    pub kkt: f64,
    pub sweeps: usize,
    /// Objective after every sweep when requested.
    pub trace: Vec<f64>,
}

/// Summaries arranged in a canonical site order so results do not depend on
/// the order the caller supplied them in.
pub(crate) struct Problem<'a> {
    /// `order[k]` is the caller's index of canonical site `k`.
    pub(crate) order: Vec<usize>,
    pub(crate) h: Vec<&'a DMatrix<f64>>,
    pub(crate) g: Vec<&'a DVector<f64>>,
    /// `nₖ / N`
    pub(crate) w: Vec<f64>,
    pub(crate) m: usize,
    pub(crate) p: usize,
    n_total: u64,
}

fn cmp_bits<'b>(a: impl Iterator<Item = &'b f64>, b: impl Iterator<Item = &'b f64>) -> Ordering {
    a.map(|v| v.to_bits()).cmp(b.map(|v| v.to_bits()))
}

fn canonical_cmp(a: &LocalSummary, b: &LocalSummary) -> Ordering {
    a.site_id
        .cmp(&b.site_id)
        .then(a.n.cmp(&b.n))
        .then_with(|| cmp_bits(a.g.iter(), b.g.iter()))
        .then_with(|| cmp_bits(a.h.iter(), b.h.iter()))
        .then(a.lambda_m.to_bits().cmp(&b.lambda_m.to_bits()))
}

impl<'a> Problem<'a> {
    pub(crate) fn new(summaries: &'a [LocalSummary]) -> Result<Self> {
        let first = summaries
            .first()
            .ok_or_else(|| ShirError::InvalidInput("no site summaries".into()))?;
        for s in summaries {
            s.validate()?;
            if s.p != first.p {
                return Err(ShirError::SiteMismatch {
                    site: s.site_id.clone(),
                    reason: format!("dimension {} differs from {}", s.p, first.p),
                });
            }
            if s.family != first.family {
                return Err(ShirError::SiteMismatch {
                    site: s.site_id.clone(),
                    reason: format!("loss family {} differs from {}", s.family.name(), first.family.name()),
                });
            }
        }
        let mut order: Vec<usize> = (0..summaries.len()).collect();
        order.sort_by(|&a, &b| canonical_cmp(&summaries[a], &summaries[b]));
        let n_total: u64 = order.iter().map(|&i| summaries[i].n).sum();
        let w = order
            .iter()
            .map(|&i| summaries[i].n as f64 / n_total as f64)
            .collect();
        Ok(Self {
            h: order.iter().map(|&i| &summaries[i].h).collect(),
            g: order.iter().map(|&i| &summaries[i].g).collect(),
            w,
            m: summaries.len(),
            p: first.p,
            n_total,
            order,
        })
    }

    pub(crate) fn n_total(&self) -> u64 {
        self.n_total
    }

    /// `α` stored column-major by coefficient: `alpha[j * M + k]`.
    pub(crate) fn import(&self, bundle: &CoefficientBundle) -> Result<(Vec<f64>, Vec<f64>)> {
        check_dim("bundle sites", self.m, bundle.num_sites())?;
        check_dim("bundle dimension", self.p, bundle.p())?;
        let mu = bundle.mu().iter().copied().collect();
        let mut alpha = vec![0.0; self.m * self.p];
        for j in 0..self.p {
            for (k, &i) in self.order.iter().enumerate() {
                alpha[j * self.m + k] = bundle.alpha()[(i, j)];
            }
        }
        Ok((mu, alpha))
    }

    fn export(&self, mu: &[f64], alpha: &[f64]) -> CoefficientBundle {
        let mut a = DMatrix::zeros(self.m, self.p);
        for j in 0..self.p {
            for (k, &i) in self.order.iter().enumerate() {
                a[(i, j)] = alpha[j * self.m + k];
            }
        }
        CoefficientBundle::from_parts(DVector::from_column_slice(mu), a).expect("shapes agree")
    }

    fn site_beta(&self, mu: &[f64], alpha: &[f64], k: usize) -> DVector<f64> {
        DVector::from_fn(self.p, |j, _| mu[j] + alpha[j * self.m + k])
    }

    /// `r⁽ᵏ⁾ = H⁽ᵏ⁾β⁽ᵏ⁾ − g⁽ᵏ⁾`
    fn residuals(&self, mu: &[f64], alpha: &[f64]) -> Vec<DVector<f64>> {
        (0..self.m)
            .map(|k| self.h[k] * self.site_beta(mu, alpha, k) - self.g[k])
            .collect()
    }

    fn penalty(&self, mu: &[f64], alpha: &[f64], cfg: &PenaltyConfig) -> f64 {
        let mut l1 = 0.0;
        let mut groups = 0.0;
        for j in 1..self.p {
            l1 += mu[j].abs();
            groups += l2(&alpha[j * self.m..(j + 1) * self.m]);
        }
        cfg.lambda * (l1 + cfg.lambda_g * groups)
    }

    /// Objective evaluated through the residuals: `βᵀHβ − 2βᵀg = βᵀ(r − g)`.
    fn objective_from_residuals(
        &self,
        mu: &[f64],
        alpha: &[f64],
        resid: &[DVector<f64>],
        cfg: &PenaltyConfig,
    ) -> f64 {
        let mut smooth = 0.0;
        for k in 0..self.m {
            let mut q = 0.0;
            for j in 0..self.p {
                q += (mu[j] + alpha[j * self.m + k]) * (resid[k][j] - self.g[k][j]);
            }
            smooth += self.w[k] * q;
        }
        smooth + self.penalty(mu, alpha, cfg)
    }

    pub(crate) fn objective_direct(&self, mu: &[f64], alpha: &[f64], cfg: &PenaltyConfig) -> f64 {
        let mut smooth = 0.0;
        for k in 0..self.m {
            let b = self.site_beta(mu, alpha, k);
            let hb = self.h[k] * &b;
            smooth += self.w[k] * (b.dot(&hb) - 2.0 * b.dot(self.g[k]));
        }
        smooth + self.penalty(mu, alpha, cfg)
    }

    /// Largest violation of the optimality conditions, measured on the
    /// gradients `2 wₖ rₖⱼ` of the smooth part.
    fn kkt(
        &self,
        mu: &[f64],
        alpha: &[f64],
        resid: &[DVector<f64>],
        cfg: &PenaltyConfig,
        freeze_alpha: bool,
    ) -> f64 {
        let mut worst: f64 = 0.0;
        let mut v = vec![0.0; self.m];
        let tau = cfg.lambda * cfg.lambda_g;
        for j in 0..self.p {
            let mut gsum = 0.0;
            for k in 0..self.m {
                v[k] = 2.0 * self.w[k] * resid[k][j];
                gsum += v[k];
            }
            let mu_res = if j == 0 {
                gsum.abs()
            } else if mu[j] != 0.0 {
                (gsum + cfg.lambda * mu[j].signum()).abs()
            } else {
                (gsum.abs() - cfg.lambda).max(0.0)
            };
            worst = worst.max(mu_res);

            if j > 0 && freeze_alpha {
                continue;
            }
            center(&mut v);
            let a = &alpha[j * self.m..(j + 1) * self.m];
            let norm_a = l2(a);
            let a_res = if j == 0 {
                l2(&v)
            } else if norm_a > 0.0 {
                let shifted: Vec<f64> = v.iter().zip(a).map(|(vk, ak)| vk + tau * ak / norm_a).collect();
                l2(&shifted)
            } else {
                (l2(&v) - tau).max(0.0)
            };
            worst = worst.max(a_res);
        }
        worst
    }

    fn check_solvable(&self, cfg: &PenaltyConfig, freeze_alpha: bool) -> Result<()> {
        let unpenalized_sites = cfg.lambda == 0.0 || (cfg.lambda_g == 0.0 && !freeze_alpha);
        if !unpenalized_sites {
            return Ok(());
        }
        if freeze_alpha {
            let mut agg = DMatrix::zeros(self.p, self.p);
            for k in 0..self.m {
                agg += self.h[k] * self.w[k];
            }
            if Cholesky::new(agg).is_none() {
                return Err(ShirError::Singular(
                    "aggregate Hessian is not positive definite and the shared effects are unpenalized".into(),
                ));
            }
            return Ok(());
        }
        for k in 0..self.m {
            if Cholesky::new(self.h[k].clone()).is_none() {
                return Err(ShirError::Singular(format!(
                    "Hessian of site {} is not positive definite and the problem is unpenalized",
                    self.order[k]
                )));
            }
        }
        Ok(())
    }
}

struct State {
    mu: Vec<f64>,
    alpha: Vec<f64>,
    resid: Vec<DVector<f64>>,
}

impl Problem<'_> {
    fn update_mu(&self, st: &mut State, j: usize, lambda: f64) {
        let mut a = 0.0;
        let mut grad = 0.0;
        for k in 0..self.m {
            a += 2.0 * self.w[k] * self.h[k][(j, j)];
            grad += 2.0 * self.w[k] * st.resid[k][j];
        }
        if a <= 0.0 {
            return;
        }
        let z = a * st.mu[j] - grad;
        let new = if j == 0 { z / a } else { soft(z, lambda) / a };
        let delta = new - st.mu[j];
        if delta != 0.0 {
            st.mu[j] = new;
            for k in 0..self.m {
                st.resid[k].axpy(delta, &self.h[k].column(j), 1.0);
            }
        }
    }

    /// Minimizes over the block `(α_j⁽¹⁾, …, α_j⁽ᴹ⁾)` subject to a zero sum.
    fn update_alpha(&self, st: &mut State, j: usize, tau_total: f64, opts: &SolverOptions) {
        let m = self.m;
        let d: Vec<f64> = (0..m).map(|k| 2.0 * self.w[k] * self.h[k][(j, j)]).collect();
        let old: Vec<f64> = st.alpha[j * m..(j + 1) * m].to_vec();
        let mut a = old.clone();
        let mut v: Vec<f64> = (0..m).map(|k| 2.0 * self.w[k] * st.resid[k][j]).collect();
        let tau_total = if j == 0 { 0.0 } else { tau_total };

        if tau_total == 0.0 && d.iter().all(|&dk| dk > 0.0) {
            // Separable quadratic with one linear constraint: closed form via
            // the multiplier ν.
            let num: f64 = (0..m).map(|k| a[k] - v[k] / d[k]).sum();
            let den: f64 = d.iter().map(|dk| 1.0 / dk).sum();
            let nu = num / den;
            for k in 0..m {
                a[k] -= (v[k] + nu) / d[k];
            }
        } else {
            let lip = d.iter().copied().fold(0.0, f64::max);
            if lip <= 0.0 {
                return;
            }
            let tau = tau_total / lip;
            let mut x = vec![0.0; m];
            for _ in 0..opts.max_inner {
                for k in 0..m {
                    x[k] = a[k] - v[k] / lip;
                }
                center(&mut x);
                group_soft(&mut x, tau);
                let mut change: f64 = 0.0;
                for k in 0..m {
                    let delta = x[k] - a[k];
                    v[k] += d[k] * delta;
                    a[k] = x[k];
                    change = change.max(delta.abs());
                }
                if change <= opts.inner_tol {
                    break;
                }
            }
        }

        for k in 0..m {
            let delta = a[k] - old[k];
            if delta != 0.0 {
                st.resid[k].axpy(delta, &self.h[k].column(j), 1.0);
            }
            st.alpha[j * m + k] = a[k];
        }
    }

    fn sweep(&self, st: &mut State, cfg: &PenaltyConfig, opts: &SolverOptions) {
        let tau = cfg.lambda * cfg.lambda_g;
        for j in 0..self.p {
            self.update_mu(st, j, cfg.lambda);
            if j == 0 || !opts.freeze_alpha {
                self.update_alpha(st, j, tau, opts);
            }
        }
    }

    fn solve(
        &self,
        cfg: &PenaltyConfig,
        opts: &SolverOptions,
        warm: Option<&CoefficientBundle>,
    ) -> Result<SolveOutcome> {
        cfg.validate()?;
        self.check_solvable(cfg, opts.freeze_alpha)?;
        let (mu, mut alpha) = match warm {
            Some(b) => self.import(b)?,
            None => (vec![0.0; self.p], vec![0.0; self.m * self.p]),
        };
        for j in 0..self.p {
            let col = &mut alpha[j * self.m..(j + 1) * self.m];
            if opts.freeze_alpha && j > 0 {
                col.iter_mut().for_each(|a| *a = 0.0);
            } else {
                center(col);
            }
        }
        let resid = self.residuals(&mu, &alpha);
        let mut st = State { mu, alpha, resid };
        let mut trace = Vec::new();
        let mut f_prev = self.objective_from_residuals(&st.mu, &st.alpha, &st.resid, cfg);
        let mut kkt = f64::INFINITY;

        for sweep in 1..=opts.max_sweeps {
            self.sweep(&mut st, cfg, opts);
            if sweep % opts.refresh_every.max(1) == 0 {
                st.resid = self.residuals(&st.mu, &st.alpha);
            }
            let f = self.objective_from_residuals(&st.mu, &st.alpha, &st.resid, cfg);
            debug_assert!(
                f <= f_prev + 1e-9 * (1.0 + f_prev.abs()),
                "objective increased from {f_prev} to {f} at sweep {sweep}"
            );
            if opts.record_trace {
                trace.push(f);
            }
            if (f_prev - f).abs() <= opts.tol * (1.0 + f.abs()) {
                st.resid = self.residuals(&st.mu, &st.alpha);
                kkt = self.kkt(&st.mu, &st.alpha, &st.resid, cfg, opts.freeze_alpha);
                if kkt <= opts.kkt_tol {
                    return Ok(SolveOutcome {
                        bundle: self.export(&st.mu, &st.alpha),
                        objective: self.objective_direct(&st.mu, &st.alpha, cfg),
                        kkt,
                        sweeps: sweep,
                        trace,
                    });
                }
            }
            f_prev = f;
        }
        Err(ShirError::Convergence {
            solver: "mixture-penalty block coordinate descent",
            iterations: opts.max_sweeps,
            kkt,
        })
    }
}

/// Solves the penalized surrogate from site summaries alone.
pub fn solve_shir(summaries: &[LocalSummary], cfg: &PenaltyConfig) -> Result<CoefficientBundle> {
    solve_shir_with(summaries, cfg, &SolverOptions::default(), None).map(|o| o.bundle)
}

/// As [`solve_shir`], with explicit options and an optional warm start.
pub fn solve_shir_with(
    summaries: &[LocalSummary],
    cfg: &PenaltyConfig,
    opts: &SolverOptions,
    warm: Option<&CoefficientBundle>,
) -> Result<SolveOutcome> {
    Problem::new(summaries)?.solve(cfg, opts, warm)
}

/// `N⁻¹ Σₘ nₘ(β⁽ᵐ⁾ᵀH⁽ᵐ⁾β⁽ᵐ⁾ − 2β⁽ᵐ⁾ᵀg⁽ᵐ⁾) + λ(Σ_{j≥2}|μ_j| + λ_g Σ_{j≥2}‖α_j‖₂)`
pub fn shir_objective(
    summaries: &[LocalSummary],
    bundle: &CoefficientBundle,
    cfg: &PenaltyConfig,
) -> Result<f64> {
    let prob = Problem::new(summaries)?;
    let (mu, alpha) = prob.import(bundle)?;
    Ok(prob.objective_direct(&mu, &alpha, cfg))
}

/// Largest violation of the optimality conditions at `bundle`.
pub fn kkt_residual(
    summaries: &[LocalSummary],
    bundle: &CoefficientBundle,
    cfg: &PenaltyConfig,
) -> Result<f64> {
    let prob = Problem::new(summaries)?;
    let (mu, alpha) = prob.import(bundle)?;
    let resid = prob.residuals(&mu, &alpha);
    Ok(prob.kkt(&mu, &alpha, &resid, cfg, false))
}

/// Solution when every penalized coefficient is zero: each site fits its own
/// intercept, `β⁽ᵐ⁾₁ = g⁽ᵐ⁾₁ / H⁽ᵐ⁾₁₁`.
pub fn null_bundle(summaries: &[LocalSummary]) -> Result<CoefficientBundle> {
    let prob = Problem::new(summaries)?;
    let (mu, alpha) = prob.null_state()?;
    Ok(prob.export(&mu, &alpha))
}

impl Problem<'_> {
    fn null_state(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut b = Vec::with_capacity(self.m);
        for k in 0..self.m {
            let h11 = self.h[k][(0, 0)];
            if h11 <= 0.0 {
                return Err(ShirError::Singular(format!(
                    "site {} has no curvature in the intercept",
                    self.order[k]
                )));
            }
            b.push(self.g[k][0] / h11);
        }
        let mean = b.iter().sum::<f64>() / self.m as f64;
        let mut mu = vec![0.0; self.p];
        let mut alpha = vec![0.0; self.m * self.p];
        mu[0] = mean;
        for k in 0..self.m {
            alpha[k] = b[k] - mean;
        }
        Ok((mu, alpha))
    }

    /// Per-column `(|Σ vₖ|, ‖Pv‖)` with `vₖ = 2wₖrₖⱼ`, penalized columns only.
    fn column_scores(&self, resid: &[DVector<f64>]) -> Vec<(f64, f64)> {
        let mut v = vec![0.0; self.m];
        (1..self.p)
            .map(|j| {
                for k in 0..self.m {
                    v[k] = 2.0 * self.w[k] * resid[k][j];
                }
                let total: f64 = v.iter().sum();
                center(&mut v);
                (total.abs(), l2(&v))
            })
            .collect()
    }
}

/// Smallest `λ` at which the null model solves the problem for this `λ_g`.
pub fn lambda_critical(summaries: &[LocalSummary], lambda_g: f64) -> Result<f64> {
    if !(lambda_g > 0.0) {
        return Err(ShirError::InvalidInput(format!("lambda_g must be positive, got {lambda_g}")));
    }
    let prob = Problem::new(summaries)?;
    let (mu, alpha) = prob.null_state()?;
    let resid = prob.residuals(&mu, &alpha);
    Ok(prob
        .column_scores(&resid)
        .into_iter()
        .map(|(g, pv)| g.max(pv / lambda_g))
        .fold(0.0, f64::max))
}

/// Smallest `λ_g` beyond which every penalized `α_j` is zero at this `λ`.
pub fn lambda_g_upper_bound(summaries: &[LocalSummary], lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(ShirError::InvalidInput(format!("lambda must be positive, got {lambda}")));
    }
    let prob = Problem::new(summaries)?;
    let opts = SolverOptions {
        freeze_alpha: true,
        ..SolverOptions::default()
    };
    let out = prob.solve(&PenaltyConfig::new(lambda, 1.0), &opts, None)?;
    let (mu, alpha) = prob.import(&out.bundle)?;
    let resid = prob.residuals(&mu, &alpha);
    Ok(prob
        .column_scores(&resid)
        .into_iter()
        .map(|(_, pv)| pv / lambda)
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glm::LossFamily;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn summary(id: &str, n: u64, h: DMatrix<f64>, g: DVector<f64>) -> LocalSummary {
        LocalSummary {
            site_id: id.into(),
            n,
            p: g.len(),
            h,
            g,
            family: LossFamily::SquaredError,
            lambda_m: 0.0,
            schema_version: 1,
        }
    }

    fn random_sites(seed: u64, m: usize, p: usize) -> Vec<LocalSummary> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..m)
            .map(|k| {
                let n = 30 + 10 * k;
                let mut x = DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0));
                x.column_mut(0).fill(1.0);
                let h = x.tr_mul(&x) * (2.0 / n as f64);
                let h = (&h + h.transpose()) * 0.5;
                let beta = DVector::from_fn(p, |j, _| if j < 3 { 1.0 + 0.2 * k as f64 } else { 0.0 });
                let g = &h * beta + DVector::from_fn(p, |_, _| rng.random_range(-0.1..0.1));
                summary(&format!("site-{k}"), n as u64, h, g)
            })
            .collect()
    }

    #[test]
    fn zero_gradient_gives_zero_bundle() {
        let sites: Vec<_> = random_sites(1, 3, 5)
            .into_iter()
            .map(|mut s| {
                s.g.fill(0.0);
                s
            })
            .collect();
        let b = solve_shir(&sites, &PenaltyConfig::new(0.1, 0.5)).unwrap();
        assert_eq!(b.mu().amax(), 0.0);
        assert_eq!(b.alpha().amax(), 0.0);
    }

    #[test]
    fn single_site_identity_hessian_closed_form() {
        let g = DVector::from_vec(vec![0.7, 0.3, -0.05, -0.9, 0.1]);
        let sites = vec![summary("only", 10, DMatrix::identity(5, 5) * 1.5, g.clone())];
        let lambda = 0.2;
        let b = solve_shir(&sites, &PenaltyConfig::new(lambda, 1.0)).unwrap();
        assert!((b.mu()[0] - g[0] / 1.5).abs() < 1e-12);
        for j in 1..5 {
            let expected = soft(g[j], lambda / 2.0) / 1.5;
            assert!((b.mu()[j] - expected).abs() < 1e-12, "{j}");
        }
        assert_eq!(b.alpha().amax(), 0.0);
    }

    #[test]
    fn unpenalized_problem_recovers_site_solutions() {
        let sites = random_sites(2, 3, 4);
        let b = solve_shir(&sites, &PenaltyConfig::new(0.0, 1.0)).unwrap();
        for (k, s) in sites.iter().enumerate() {
            let direct = s.h.clone().cholesky().unwrap().solve(&s.g);
            assert!((b.site_beta(k) - direct).amax() < 1e-8);
        }
    }

    #[test]
    fn singular_unpenalized_problem_is_rejected() {
        let mut sites = random_sites(3, 2, 4);
        sites[1].h = DMatrix::zeros(4, 4);
        sites[1].h[(0, 0)] = 1.0;
        let err = solve_shir(&sites, &PenaltyConfig::new(0.0, 1.0)).unwrap_err();
        assert!(matches!(err, ShirError::Singular(_)));
    }

    #[test]
    fn null_model_at_and_above_lambda_crit() {
        let sites = random_sites(4, 4, 6);
        let lg = 0.5;
        let crit = lambda_critical(&sites, lg).unwrap();
        let null = null_bundle(&sites).unwrap();
        let at = solve_shir(&sites, &PenaltyConfig::new(crit * 1.0001, lg)).unwrap();
        assert!(at.active_mu().is_empty() && at.active_alpha().is_empty());
        assert!((at.beta() - null.beta()).amax() < 1e-9);
        let below = solve_shir(&sites, &PenaltyConfig::new(crit * 0.95, lg)).unwrap();
        assert!(!below.active_mu().is_empty() || !below.active_alpha().is_empty());
    }

    #[test]
    fn lambda_g_bound_switches_off_deviations() {
        let sites = random_sites(5, 4, 6);
        let lambda = 0.02;
        let bound = lambda_g_upper_bound(&sites, lambda).unwrap();
        let above = solve_shir(&sites, &PenaltyConfig::new(lambda, bound * 1.001)).unwrap();
        assert!(above.active_alpha().is_empty());
        let below = solve_shir(&sites, &PenaltyConfig::new(lambda, bound * 0.9)).unwrap();
        assert!(!below.active_alpha().is_empty());
    }

    #[test]
    fn deviations_sum_to_zero_and_kkt_holds() {
        let sites = random_sites(6, 5, 7);
        let cfg = PenaltyConfig::new(0.01, 0.4);
        let out = solve_shir_with(&sites, &cfg, &SolverOptions::default(), None).unwrap();
        for j in 0..7 {
            assert!(out.bundle.alpha().column(j).sum().abs() < 1e-12);
        }
        assert!(out.kkt <= 1e-8);
        assert!(kkt_residual(&sites, &out.bundle, &cfg).unwrap() <= 1e-8);
        let direct = shir_objective(&sites, &out.bundle, &cfg).unwrap();
        assert!((direct - out.objective).abs() < 1e-12);
    }

    #[test]
    fn objective_is_monotone_over_sweeps() {
        let sites = random_sites(7, 4, 8);
        let opts = SolverOptions {
            record_trace: true,
            ..SolverOptions::default()
        };
        let out = solve_shir_with(&sites, &PenaltyConfig::new(0.005, 0.3), &opts, None).unwrap();
        assert!(out.trace.windows(2).all(|w| w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0)));
    }

    #[test]
    fn site_order_does_not_matter_bitwise() {
        let sites = random_sites(8, 5, 6);
        let cfg = PenaltyConfig::new(0.01, 0.5);
        let a = solve_shir_with(&sites, &cfg, &SolverOptions::default(), None).unwrap();
        let order = [3, 0, 4, 2, 1];
        let shuffled: Vec<_> = order.iter().map(|&i| sites[i].clone()).collect();
        let b = solve_shir_with(&shuffled, &cfg, &SolverOptions::default(), None).unwrap();
        let bits = |v: &DVector<f64>| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a.bundle.mu()), bits(b.bundle.mu()));
        assert_eq!(a.objective.to_bits(), b.objective.to_bits());
        assert_eq!(a.bundle.permute_sites(&order), b.bundle);
    }

    #[test]
    fn warm_start_matches_cold_start() {
        let sites = random_sites(9, 3, 6);
        let cfg = PenaltyConfig::new(0.01, 0.6);
        let opts = SolverOptions::default();
        let cold = solve_shir_with(&sites, &cfg, &opts, None).unwrap();
        let prev = solve_shir(&sites, &PenaltyConfig::new(0.012, 0.6)).unwrap();
        let warm = solve_shir_with(&sites, &cfg, &opts, Some(&prev)).unwrap();
        assert!((cold.bundle.beta() - warm.bundle.beta()).amax() < 1e-6);
        assert!(warm.sweeps <= cold.sweeps);
    }

    #[test]
    fn mismatched_sites_are_rejected() {
        let mut sites = random_sites(10, 2, 4);
        sites[1].family = LossFamily::Logistic;
        assert!(matches!(
            solve_shir(&sites, &PenaltyConfig::new(0.1, 1.0)),
            Err(ShirError::SiteMismatch { .. })
        ));
        assert!(solve_shir(&[], &PenaltyConfig::new(0.1, 1.0)).is_err());
        let sites = random_sites(10, 2, 4);
        assert!(solve_shir(&sites, &PenaltyConfig::new(-0.1, 1.0)).is_err());
    }
}
