//! Times 2-level against 3-level hierarchies over 24 clips of 16 frames,
//! grouped 4 x 6 for the deeper model, and writes the CSV to stdout.

use crnkit::bench::{compare, measure, write_csv, BenchConfig};

fn main() -> crnkit::Result<()> {
    let mut reports = Vec::new();
    let mut lines = Vec::new();
    for f in [2, 8, 32] {
        let shallow = measure(&BenchConfig::two_level(24, 16, f), 5, 0)?;
        let deep = measure(&BenchConfig::three_level(4, 6, 16, f), 5, 0)?;
        lines.push(compare(&shallow, &deep));
        reports.extend([shallow, deep]);
    }
    write_csv(std::io::stdout(), &reports)?;
    for l in lines {
        println!("# {l}");
    }
    Ok(())
}
