use nlop_core::dirichlet::{solve_standard, SolverConfig};
use nlop_core::exprfunc::builtins;
use nlop_core::kernels::{build, gamma, KernelSpec};
use nlop_core::operator;
use nlop_core::quadrature::QuadConfig;

fn main() {
    let s = 0.75f64;
    let target = 2f64.powf(2.0 * s) * gamma(1.0 + s) * gamma(0.5 + s) / std::f64::consts::PI.sqrt();
    let kernel = build(KernelSpec::frac_lap_normalized(1, s)).unwrap();
    let f = builtins::constant(1, target);
    let g = builtins::constant(1, 0.0)
        .with_growth(nlop_core::exprfunc::GrowthClass::Compact { radius: 1.0 });
    let cfg = SolverConfig { n_nodes: 60, quad: QuadConfig::default(), residual_tol: 0.5, defect_rounds: 0 };
    let sol = solve_standard(&kernel, &f, &g, &cfg).unwrap();
    // measure the defect of the spline extension at each node
    for (i, (x, _v)) in sol.nodes.iter().zip(&sol.values).enumerate() {
        let au = operator::direct_apply(&sol.extension, &kernel, &[*x], &QuadConfig::default()).unwrap();
        let d = au.value - target;
        if i % 6 == 0 || d.abs() > 0.1 {
            println!("node {i} x={x:+.5} defect {d:+.4e} conv={}", au.converged);
        }
    }
}
