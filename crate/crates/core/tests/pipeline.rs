//! Site fits through envelopes on disk and over TCP to the tuned aggregate.

use std::net::TcpListener;
use std::thread;

use shir_core::local::{cross_validate_lambda, default_lambda_grid};
use shir_core::sim::{gen_study, true_coefficients, Mechanism, SimSetting};
use shir_core::transport::{collect, encode, serve_site, write_envelope_file, CollectOptions, SummarySource};
use shir_core::tuning::{default_lambda_grid as gic_grid, gic_search};
use shir_core::{summarize, GammaSchedule, LocalSummary, LossFamily, PenaltyConfig, ShirError};

fn local_summaries(setting: &SimSetting, seed: u64) -> Vec<LocalSummary> {
    let f = LossFamily::Logistic;
    (1..=setting.sites)
        .map(|m| {
            let st = gen_study(setting, m, seed).unwrap();
            let grid = default_lambda_grid(&st, f, 40, 1e-3).unwrap();
            let fit = cross_validate_lambda(&st, f, 5, &grid, seed).unwrap();
            summarize(&st, &fit, f).unwrap()
        })
        .collect()
}

fn setting() -> SimSetting {
    SimSetting {
        p: 20,
        n: 600,
        ..SimSetting::desk(Mechanism::Strong)
    }
}

#[test]
fn files_and_sockets_deliver_identical_summaries() {
    let sums = local_summaries(&setting(), 4);
    let dir = tempfile::tempdir().unwrap();
    let mut sources = Vec::new();
    let mut servers = Vec::new();
    for (k, s) in sums.iter().enumerate() {
        if k % 2 == 0 {
            let path = dir.path().join(format!("{}.shir", s.site_id));
            write_envelope_file(&path, s).unwrap();
            sources.push(SummarySource::File(path));
        } else {
            let listener = TcpListener::bind("127.0.0.1:0").unwrap();
            sources.push(SummarySource::parse(&format!("tcp://{}", listener.local_addr().unwrap())));
            let bytes = encode(s).unwrap();
            servers.push(thread::spawn(move || serve_site(&listener, &bytes, Some(1)).unwrap()));
        }
    }
    let got = collect(&sources, &CollectOptions::default()).unwrap();
    for h in servers {
        h.join().unwrap();
    }
    assert_eq!(got, sums);
}

#[test]
fn tuned_fit_recovers_the_strong_signal() {
    let s = setting();
    let sums = local_summaries(&s, 8);
    let lgs = PenaltyConfig::lambda_g_grid(s.sites);
    let grid = gic_grid(&sums, &lgs).unwrap();
    let search = gic_search(&sums, &grid, &lgs, GammaSchedule::Bic).unwrap();
    assert_eq!(search.table.len(), grid.len() * lgs.len());
    let best = &search.best;
    assert!(search.table.iter().all(|r| r.error.is_some() || r.gic >= best.gic));
    assert!(best.kkt <= 1e-7);
    // Every shared and deviation effect is large relative to n = 600 noise.
    for j in 1..=6 {
        assert!(best.bundle.active_mu().contains(&j), "mu {j} missed");
    }
    for j in 3..=8 {
        assert!(best.bundle.active_alpha().contains(&j), "alpha {j} missed");
    }
    // Signs agree with the generating coefficients at every site.
    for m in 0..s.sites {
        let truth = true_coefficients(s.mechanism, m + 1, s.p, 1.0).unwrap();
        let est = best.bundle.site_beta(m);
        for j in 1..=8 {
            assert_eq!(truth[j].signum(), est[j].signum(), "site {m} coefficient {j}");
        }
    }
}

#[test]
fn unreachable_site_is_named() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let opts = CollectOptions {
        retries: 1,
        retry_delay: std::time::Duration::from_millis(10),
        ..CollectOptions::default()
    };
    let err = collect(&[SummarySource::parse(&format!("tcp://{addr}"))], &opts).unwrap_err();
    assert!(matches!(err.root(), ShirError::Unreachable { .. }));
    assert!(err.to_string().contains(&addr.to_string()), "{err}");
}
