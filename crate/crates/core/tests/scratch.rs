use stlplan::examples::bundled_scenario;
use stlplan::pipeline::{run_plan, RunOptions};

fn probe(name: &str) {
    let sc = bundled_scenario(name).unwrap();
    let t0 = std::time::Instant::now();
    match run_plan(&sc, &RunOptions::default()) {
        Ok(r) => {
            println!(
                "{name}: status={:?} obj={:.4} bins={} nodes={} retries={} secs={:.2}",
                r.solution.status,
                r.solution.objective,
                r.num_binaries,
                r.solution.nodes,
                r.big_m_retries,
                t0.elapsed().as_secs_f64()
            );
            println!(
                "  discrete_rob={:.4e} continuous={} worst={:.4e} at t={:.4} class={:?}",
                r.comparison.discrete_robustness,
                r.comparison.verdict.satisfied,
                r.comparison.verdict.worst_margin,
                r.comparison.verdict.witness_time,
                r.comparison.class
            );
            if let Some(sv) = &r.safety {
                println!(
                    "  safety={} worst={:.4e} at t={:.4}",
                    sv.satisfied, sv.worst_margin, sv.witness_time
                );
            }
        }
        Err(e) => println!("{name}: ERROR {e} ({:.2}s)", t0.elapsed().as_secs_f64()),
    }
}

#[test]
fn probe_example1() {
    probe("example1");
}

#[test]
fn probe_example2_case1() {
    probe("example2_case1");
}

#[test]
fn probe_example2_case2() {
    probe("example2_case2");
}

#[test]
fn probe_example3() {
    probe("example3");
}
