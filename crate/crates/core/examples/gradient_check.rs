//! Finite-difference check of every conditioning form.

use crnkit::crn::HForm;
use crnkit::gradcheck::{check_crn, GradCheckConfig};

fn main() -> crnkit::Result<()> {
    let cfg = GradCheckConfig::default();
    let forms = [
        HForm::Additive,
        HForm::Multiplicative,
        HForm::Sequential,
        HForm::DualAdditive,
        HForm::DualMultiplicative,
        HForm::DualSequential,
    ];
    let mut all = true;
    for form in forms {
        let report = check_crn(form, 5, 4, 2, &cfg)?;
        println!("{:<20} max rel err {:.2e}", form.name(), report.max_rel_error());
        all &= report.passed();
    }

    // a scaled analytic gradient must be caught
    let broken = check_crn(HForm::Additive, 5, 4, 2, &GradCheckConfig { corrupt_factor: Some(1.01), ..cfg })?;
    println!("corrupted gradient detected: {}", !broken.passed());
    assert!(all && !broken.passed());
    Ok(())
}
