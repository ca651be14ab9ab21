use super::*;

fn call(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let argv = std::iter::once("crnkit").chain(args.iter().copied());
    let code = run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

#[test]
fn gradcheck_codes() {
    let (code, out, _) = call(&["gradcheck", "--form", "additive", "--dims", "4,3,1"]);
    assert_eq!(code, EXIT_OK, "{out}");
    assert!(out.contains("max_rel_err="));
    assert_eq!(call(&["gradcheck", "--form", "additive", "--dims", "4,3,1", "--corrupt", "1.5"]).0, EXIT_CHECK);
    assert_eq!(call(&["gradcheck", "--form", "bilinear"]).0, EXIT_USAGE);
    assert_eq!(call(&["gradcheck", "--eps", "0"]).0, EXIT_USAGE);
    assert_eq!(call(&["gradcheck", "--dims", "4,3"]).0, EXIT_USAGE);
    assert_eq!(call(&["frobnicate"]).0, EXIT_USAGE);
    assert_eq!(call(&["--help"]).0, EXIT_OK);
}

#[test]
fn grid_parsing() {
    let keys = parse_grid("N=24,T=16,P=4,F=2,4").unwrap();
    assert_eq!(keys.last().unwrap(), &("F".to_string(), vec![2, 4]));
    for bad in ["N=24,X=3", "7,N=3", "N=0", "N=2,N=3", "N=a"] {
        assert!(parse_grid(bad).is_err(), "{bad}");
    }
    assert!(bench_configs("2,3", "N=24,T=16,F=2").is_err());
    assert!(bench_configs("2,3", "N=24,T=16,P=5,F=2").is_err());
    assert!(bench_configs("4", "N=24,T=16,F=2").is_err());
    assert_eq!(bench_configs("2,3", "N=12,T=8,P=2,3,F=2").unwrap().len(), 2);
}

#[test]
fn bench_rows_and_comparison() {
    let (code, out, err) = call(&["bench", "--levels", "2,3", "--grid", "N=10,T=8,P=2,F=2", "--repeats", "3"]);
    assert_eq!(code, EXIT_OK, "{err}");
    let lines: Vec<_> = out.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].starts_with("config_id,"));
    assert!(lines[3].starts_with("# L2-N10-T8-F2 vs L3-N10-T8-P2-Q5-F2"));

    let (code, out, _) = call(&["bench", "--levels", "2", "--grid", "N=6,T=8,F=2", "--repeats", "3"]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(out.lines().count(), 2);
    assert!(!out.contains('#'));

    assert_eq!(call(&["bench", "--repeats", "2"]).0, EXIT_USAGE);
    assert_eq!(call(&["bench", "--grid", "N=24"]).0, EXIT_USAGE);
}

#[test]
fn gen_inspect_train_eval() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = dir.path().join("count.bin");
    let b = bundle.to_str().unwrap();
    let (code, out, err) = call(&["gen", "--kind", "count", "--samples", "5", "--seed", "2", "--out", b]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert!(out.contains("5 count samples"));
    let (code, out, _) = call(&["inspect", b]);
    assert_eq!(code, EXIT_OK);
    assert!(out.starts_with("task=count samples=5\n"));
    assert!(out.contains("labels f32 [5]"));

    assert_eq!(call(&["inspect", "/nonexistent/bundle.bin"]).0, EXIT_IO);
    fs::write(dir.path().join("junk.bin"), b"not a bundle").unwrap();
    assert_eq!(call(&["inspect", dir.path().join("junk.bin").to_str().unwrap()]).0, EXIT_IO);
}

#[test]
fn train_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    assert_eq!(call(&["train", cfg.to_str().unwrap()]).0, EXIT_IO);
    fs::write(&cfg, "{\"task\": \"count\"}").unwrap();
    assert_eq!(call(&["train", cfg.to_str().unwrap()]).0, EXIT_USAGE);
}
