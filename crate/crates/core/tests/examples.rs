//! Runs every example binary built alongside the tests.

use std::path::PathBuf;
use std::process::Command;

const EXAMPLES: [&str; 7] = [
    "crn_unit",
    "gradient_check",
    "cost_model",
    "feature_bundle",
    "depth_benchmark",
    "count_training",
    "longform_choice",
];

fn example_dir() -> PathBuf {
    // target/<profile>/deps/examples-<hash> -> target/<profile>/examples
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().join("examples")
}

#[test]
fn examples_run() {
    let dir = example_dir();
    for name in EXAMPLES {
        let path = dir.join(format!("{name}{}", std::env::consts::EXE_SUFFIX));
        assert!(path.exists(), "{} not built", path.display());
        let out = Command::new(&path).output().unwrap();
        assert!(out.status.success(), "{name} failed:\n{}", String::from_utf8_lossy(&out.stderr));
        assert!(!out.stdout.is_empty(), "{name} printed nothing");
    }
}
