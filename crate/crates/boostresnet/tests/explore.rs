//! Throwaway exploration harness (run with --nocapture).

use boostresnet::boost::{train_binary, AlphaMode, BoostConfig};
use boostresnet::data::{make_blobs, make_xor, normalize};
use boostresnet::oracle::{GradientOracle, OracleConfig};

#[test]
#[ignore]
fn explore_criterion3_blobs() {
    let mut train = make_blobs(200, 2, 2, 6.0, 42).unwrap();
    normalize(&mut train, &mut []);
    let cfg = BoostConfig {
        t_max: 10,
        gamma_threshold: 0.15,
        patience: 3,
        alpha_mode: AlphaMode::ClosedForm,
        k: 8,
    };
    let oracle = GradientOracle::new(OracleConfig {
        learning_rate: 0.02,
        epochs: 30,
        batch_size: 32,
        seed: 7,
        ..OracleConfig::default()
    });
    let run = train_binary(&train, &cfg, &oracle).unwrap();
    for r in &run.rounds {
        println!(
            "t={} edge={:.4} gamma={:+.4} Z={:.4} prodZ={:.4} err={:.4}",
            r.round, r.edge, r.gamma, r.z, r.z_product, r.train_err
        );
    }
    println!("stopped early: {}", run.stopped_early);
}

#[test]
#[ignore]
fn explore_criterion9_digits() {
    use boostresnet::data::{load_idx, make_digits, write_idx_images, write_idx_labels, Dataset};
    use boostresnet::oracle::train_e2e;
    use boostresnet::resnet::Task;
    use std::time::Instant;

    let dir = tempfile::tempdir().unwrap();
    let started = Instant::now();
    let load = |m: usize, seed: u64, tag: &str| -> Dataset {
        let (images, labels) = make_digits(m, seed);
        let ip = dir.path().join(format!("{tag}-i"));
        let lp = dir.path().join(format!("{tag}-l"));
        write_idx_images(&ip, &images, 28, 28).unwrap();
        write_idx_labels(&lp, &labels).unwrap();
        load_idx(&ip, &lp).unwrap()
    };
    let mut train = load(2000, 11, "train");
    let mut test = load(500, 12, "test");
    normalize(&mut train, &mut [&mut test]);
    println!("data ready at {:?}", started.elapsed());

    let cfg = BoostConfig {
        t_max: 10,
        gamma_threshold: 0.001,
        patience: 3,
        alpha_mode: AlphaMode::LineSearch,
        k: 128,
    };
    let ocfg = OracleConfig {
        learning_rate: 0.01,
        epochs: 8,
        batch_size: 128,
        seed: 5,
        ..OracleConfig::default()
    };
    let t0 = Instant::now();
    let run = train_binary(&train, &cfg, &GradientOracle::new(ocfg.clone())).unwrap();
    println!("boost took {:?}", t0.elapsed());
    for r in &run.rounds {
        println!(
            "t={} edge={:.4} gamma={:+.4} Z={:.4} err={:.4} acc={:.4}",
            r.round, r.edge, r.gamma, r.z, r.train_err, 1.0 - r.train_err
        );
    }

    let t1 = Instant::now();
    let e2e_cfg = OracleConfig {
        learning_rate: 0.002,
        epochs: 30,
        batch_size: 128,
        init_scale: 0.5,
        seed: 5,
        ..OracleConfig::default()
    };
    let e2e = train_e2e(&train, Some(&test), 128, 30, Task::Binary, &e2e_cfg).unwrap();
    println!("e2e T=30 took {:?}", t1.elapsed());
    for r in &e2e.epochs {
        println!(
            "epoch {} loss {:.5} acc {:.4} test {:?}",
            r.epoch, r.train_loss, r.train_acc, r.test_acc
        );
    }
}

#[test]
#[ignore]
fn explore_criterion4_xor() {
    for (lr, epochs, k, os) in [(0.05, 60, 8, 7u64), (0.1, 80, 8, 7), (0.05, 100, 8, 3)] {
        let mut train = make_xor(400, 0.3, 42).unwrap();
        normalize(&mut train, &mut []);
        let cfg = BoostConfig {
            t_max: 10,
            gamma_threshold: 0.001,
            patience: 3,
            alpha_mode: AlphaMode::LineSearch,
            k,
        };
        let oracle = GradientOracle::new(OracleConfig {
            learning_rate: lr,
            epochs,
            batch_size: 32,
            seed: os,
            ..OracleConfig::default()
        });
        match train_binary(&train, &cfg, &oracle) {
            Ok(run) => {
                let accs: Vec<String> = run
                    .rounds
                    .iter()
                    .map(|r| format!("{:.3}", 1.0 - r.train_err))
                    .collect();
                println!("xor lr={lr} ep={epochs} k={k} os={os}: acc per round {accs:?}");
            }
            Err(e) => println!("xor lr={lr} ep={epochs} k={k} os={os}: ERROR {e}"),
        }
    }
}

#[test]
#[ignore]
fn grid_search_chain() {
    use boostresnet::bounds::check_bound_chain;
    for mode in [AlphaMode::ClosedForm, AlphaMode::LineSearch] {
        for sep in [3.0, 4.0, 5.0, 6.0] {
            for lr in [0.02, 0.05, 0.1] {
                for epochs in [10, 30, 60] {
                    for oseed in [7u64, 21] {
                        let mut train = make_blobs(200, 2, 2, sep, 42).unwrap();
                        normalize(&mut train, &mut []);
                        let cfg = BoostConfig {
                            t_max: 10,
                            gamma_threshold: 0.0,
                            alpha_mode: mode,
                            k: 8,
                            ..BoostConfig::default()
                        };
                        let oracle = GradientOracle::new(OracleConfig {
                            learning_rate: lr,
                            epochs,
                            batch_size: 32,
                            seed: oseed,
                            ..OracleConfig::default()
                        });
                        match train_binary(&train, &cfg, &oracle) {
                            Ok(run) => {
                                let viol = check_bound_chain(&run.rounds, 1e-12);
                                // per-round sqrt bound, gated on covariance
                                let mut per_round_ok = true;
                                for r in &run.rounds {
                                    let impr = r.gamma.signum() * r.gamma * r.gamma;
                                    if r.covariance <= 0.0 && r.z > (1.0 - impr).sqrt() + 1e-9 {
                                        per_round_ok = false;
                                    }
                                }
                                let monotone = run
                                    .rounds
                                    .iter()
                                    .all(|r| r.gamma >= 0.0);
                                let last = run.rounds.last().unwrap();
                                println!(
                                    "{mode:?} sep={sep} lr={lr} ep={epochs} os={oseed}: err={:.3} prodZ={:.4} chain={} perround={} monotone={}",
                                    last.train_err,
                                    last.z_product,
                                    if viol.is_none() { "OK" } else { "FAIL" },
                                    per_round_ok,
                                    monotone,
                                );
                            }
                            Err(e) => println!(
                                "{mode:?} sep={sep} lr={lr} ep={epochs} os={oseed}: ERROR {e}"
                            ),
                        }
                    }
                }
            }
        }
    }
}
