//! Analytic cost of two- and three-level hierarchies across widths, and the
//! width where the closed-order totals cross.

use crnkit::bench::{cost_crn, cost_hcrn, order_crossover};
use crnkit::hcrn::VisualStreamConfig;

fn main() -> crnkit::Result<()> {
    let c = cost_crn(2, 3, 1, 2);
    println!("single unit t=2 k_max=3 K=1 F=2: g={} h={}", c.g, c.h);

    let (n, t, p) = (24, 16, 4);
    let two = VisualStreamConfig::two_level(n, t);
    let three = VisualStreamConfig::three_level(p, n / p, t);
    println!("{:>4} {:>12} {:>12} {:>7}", "F", "2-level", "3-level", "ratio");
    for f in [1, 2, 4, 8, 16, 32, 64] {
        let (a, b) = (cost_hcrn(&two, f)?.exact.total(), cost_hcrn(&three, f)?.exact.total());
        println!("{f:>4} {a:>12.0} {b:>12.0} {:>7.3}", a / b);
    }
    for level in cost_hcrn(&three, 8)?.levels {
        println!("3-level, F=8, {:<9} g={:<8} h={}", level.level, level.cost.g, level.cost.h);
    }
    println!("closed-order crossover F* = {:.2}", order_crossover(n, p));
    Ok(())
}
