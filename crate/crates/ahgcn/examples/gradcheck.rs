//! Verify every analytic gradient against central finite differences.

use ahgcn::gradcheck::run_gradcheck;

fn main() {
    let seed = std::env::args()
        .nth(1)
        .map(|s| s.parse().expect("seed must be an integer"))
        .unwrap_or(0);
    let report = run_gradcheck(seed, false);
    print!("{report}");
    std::process::exit(if report.passed() { 0 } else { 1 });
}
