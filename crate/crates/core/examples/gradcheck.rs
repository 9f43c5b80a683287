//! Compares analytic gradients against central differences on a random
//! scene, per parameter group, for pure L1 and the blended loss.
//!
//! cargo run --release --example gradcheck -- [seed] [n_primitives]

use gabor_splat::gradcheck::{convergence_table, run_gradcheck, GradcheckConfig};

fn main() -> gabor_splat::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let n_primitives = args.next().and_then(|s| s.parse().ok()).unwrap_or(3);
    let cfg = GradcheckConfig { seed, n_primitives, ..Default::default() };

    for report in run_gradcheck(&cfg)? {
        println!("lambda {:.1}: {}", report.lambda, if report.passed { "ok" } else { "FAILED" });
        for g in &report.groups {
            println!("  {:<10} {:>4} params  max rel err {:.2e}", g.group, g.checked, g.max_rel_error);
        }
    }
    // a consistent gradient shows error shrinking roughly 4x per halving of h
    println!("step size   max abs err");
    for (h, err) in convergence_table(&cfg, &[1e-3, 5e-4, 2.5e-4])? {
        println!("{h:<10.1e}  {err:.2e}");
    }
    Ok(())
}
