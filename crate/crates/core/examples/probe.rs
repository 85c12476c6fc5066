use maxboltz_core::coefficients::build_table;
use maxboltz_core::quadrature::{KernelParams, QuadratureSpec};

fn main() {
    let params = KernelParams::new(0.5, 1.0).unwrap();
    let spec = QuadratureSpec::default();
    for n in [4u32, 6, 8] {
        let t0 = std::time::Instant::now();
        let t = build_table(n, &params, &spec).unwrap();
        println!(
            "N={n}: {:?}  (linear {}, rad1 {}, rad2 {}, mu {})",
            t0.elapsed(), t.linear.len(), t.rad1.len(), t.rad2.len(), t.mu.len()
        );
    }
}
