//! Calibration probe for the bundled scenarios: prints failure rates for
//! the 2013 abuse scenario (defended and not) and the flooding sweep, so the
//! pinned consensus constants can be tuned against their targets.
//!
//! Modes:
//!   cargo run --release --example calibrate            # check pinned values
//!   cargo run --release --example calibrate scan       # grid-scan knobs
//!   cargo run --release --example calibrate flood      # flood-sweep check

use std::time::Instant;

use capguard_core::sim::{
    abuse_2013_scenario, ddos_sweep, run_scenario, synthesize_consensus, CircuitPolicy,
    ConsensusParams, Scenario, SweepParams, ABUSE_2013_CONSENSUS, CONSENSUS_SAMPLE_SEED,
    FLOOD_SWEEP_CONSENSUS,
};

fn mean_failures(build: impl Fn() -> Scenario, seeds: std::ops::Range<u64>) -> (f64, f64) {
    let mut total = 0.0;
    let mut legit = 0.0;
    let count = (seeds.end - seeds.start) as f64;
    for seed in seeds {
        let report = run_scenario(&build(), seed).unwrap();
        total += report.failure_rate;
        legit += report.failure_rate_legit;
    }
    (total / count, legit / count)
}

fn scenario_with(params: &ConsensusParams, with_policy: bool) -> Scenario {
    let mut s = abuse_2013_scenario(with_policy);
    s.consensus = synthesize_consensus(params, CONSENSUS_SAMPLE_SEED);
    s
}

fn scan() {
    println!("median sigma_c corr | undefended defended reduction");
    for median in [1200.0, 1800.0, 2400.0] {
        for sigma in [1.0, 1.3] {
            for corr in [0.6, 0.75] {
                let params = ConsensusParams {
                    capacity_median_per_s: median,
                    capacity_sigma: sigma,
                    weight_capacity_correlation: corr,
                    ..ABUSE_2013_CONSENSUS
                };
                let (undef, _) = mean_failures(|| scenario_with(&params, false), 0..1);
                let (def, _) = mean_failures(|| scenario_with(&params, true), 0..1);
                println!(
                    "{median:>6} {sigma:>6} {corr:>5} | {undef:.3} {def:.3} {:.1}%",
                    (1.0 - def / undef.max(1e-9)) * 100.0
                );
            }
        }
    }
}

fn flood() {
    let mut base = abuse_2013_scenario(false);
    base.consensus = synthesize_consensus(&FLOOD_SWEEP_CONSENSUS, CONSENSUS_SAMPLE_SEED + 1);
    base.abuse.legit_clients = 4_000;
    let params = SweepParams {
        base,
        sizes: vec![250, 500, 1_000, 2_000, 4_000, 8_000, 12_000, 20_000],
        flood_rate_per_interval: 150.0,
        policy: CircuitPolicy::network_default(),
    };
    let sweep = ddos_sweep(&params, 100).unwrap();
    println!(
        "flood sweep: crossing without defense {:?}, with defense {:?}",
        sweep.crossing_without, sweep.crossing_with
    );
    for (u, d) in sweep.without_defense.iter().zip(&sweep.with_defense) {
        println!(
            "  bots {:>6}: undefended legit {:.3}, defended legit {:.3}",
            u.bot_clients, u.report.failure_rate_legit, d.report.failure_rate_legit
        );
    }
}

fn main() {
    let started = Instant::now();
    let mode = std::env::args().nth(1).unwrap_or_default();
    match mode.as_str() {
        "scan" => scan(),
        "flood" => flood(),
        _ => {
            let (undefended, undefended_legit) = mean_failures(|| abuse_2013_scenario(false), 0..3);
            println!(
                "abuse-2013 undefended: overall {:.3} legit {:.3} [target ~0.41 overall]",
                undefended, undefended_legit
            );
            let (defended, defended_legit) = mean_failures(|| abuse_2013_scenario(true), 0..3);
            println!(
                "abuse-2013 defended:   overall {:.3} legit {:.3} [target 0.05..0.15 overall]",
                defended, defended_legit
            );
            println!(
                "reduction: {:.1}% [target >= 60%]",
                (1.0 - defended / undefended.max(1e-9)) * 100.0
            );
            flood();
        }
    }
    println!("elapsed: {:.1}s", started.elapsed().as_secs_f64());
}
