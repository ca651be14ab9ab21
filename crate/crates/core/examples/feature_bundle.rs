//! Generates a synthetic count bundle, writes it to disk, reads it back and
//! checks the planted labels against the oracle.

use crnkit::data::{gen_task, load_feature_bundle, oracle_label, save_feature_bundle, SyntheticTaskSpec};

fn main() -> crnkit::Result<()> {
    let spec = SyntheticTaskSpec { samples: 16, ..SyntheticTaskSpec::default() };
    let bundle = gen_task(&spec)?;
    let path = std::env::temp_dir().join("crnkit-example.bundle");
    save_feature_bundle(&bundle, &path)?;

    let back = load_feature_bundle(&path)?;
    assert_eq!(back, bundle);
    for e in back.manifest().iter().take(6) {
        println!("{:<14} {:?} @{}", e.name, e.shape, e.offset);
    }
    let labels = back.labels()?;
    let agree = (0..back.len()).filter(|&i| oracle_label(&back, i).ok() == Some(labels[i] as f64)).count();
    println!("{agree}/{} labels match the oracle", back.len());
    let _ = std::fs::remove_file(path);
    Ok(())
}
