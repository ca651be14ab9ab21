//! The `crnkit` command line.
//!
//! Exit codes: 0 success, 1 failed check, 2 usage or configuration error,
//! 3 I/O or malformed file.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::bench::{compare, measure, write_csv, BenchConfig, CostReport};
use crate::crn::HForm;
use crate::data::{gen_task, load_feature_bundle, save_feature_bundle, SyntheticTaskSpec, TaskKind};
use crate::gradcheck::{check_crn, GradCheckConfig};
use crate::train::{run_training, samples, RunConfig, Trainer, SEED_ENV};
use crate::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "crnkit", version, about = "Relation networks for video question answering")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Finite-difference check of one relation unit.
    Gradcheck {
        /// additive, multiplicative, sequential or a dual- variant
        #[arg(long, default_value = "multiplicative")]
        form: String,
        /// Objects, width and rows per object: `n,F,K`.
        #[arg(long, default_value = "5,4,2")]
        dims: String,
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Scales analytic gradients (negative control).
        #[arg(long, hide = true)]
        corrupt: Option<f64>,
    },
    /// Train from a JSON run config.
    Train { config: PathBuf },
    /// Evaluate a checkpoint on the config's eval set.
    Eval { config: PathBuf, checkpoint: PathBuf },
    /// Count operations and time forward passes of visual hierarchies.
    Bench {
        /// Depths to run, `2`, `3` or `2,3`.
        #[arg(long, default_value = "2,3")]
        levels: String,
        /// `N=..,T=..,P=..,F=..`; a key may take several values (`F=2,4`).
        #[arg(long, default_value = "N=24,T=16,P=4,F=2")]
        grid: String,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic feature bundle.
    Gen {
        /// JSON task spec; flags below override its fields.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        kind: Option<TaskKind>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        split: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a bundle's manifest.
    Inspect { bundle: PathBuf },
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Check(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Lib(e.into())
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) | Error::Json(_) | Error::Format { .. } => EXIT_IO,
        Error::Config(_) | Error::Sampling { .. } | Error::Segmentation(_) | Error::Generation(_) => EXIT_USAGE,
        _ => EXIT_CHECK,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = if code == EXIT_OK { write!(out, "{e}") } else { write!(err, "{e}") };
            return code;
        }
    };
    let result = match cli.command {
        Command::Gradcheck { form, dims, eps, seed, corrupt } => gradcheck(&form, &dims, eps, seed, corrupt, out),
        Command::Train { config } => train(config, out),
        Command::Eval { config, checkpoint } => eval(config, checkpoint, out),
        Command::Bench { levels, grid, repeats, seed, out: path } => bench(&levels, &grid, repeats, seed, path, out),
        Command::Gen { spec, kind, samples, seed, split, out: path } => gen(spec, kind, samples, seed, split, path, out),
        Command::Inspect { bundle } => inspect(bundle, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(m)) => {
            let _ = writeln!(err, "usage error: {m}");
            EXIT_USAGE
        }
        Err(Failure::Check(m)) => {
            let _ = writeln!(err, "check failed: {m}");
            EXIT_CHECK
        }
        Err(Failure::Lib(e)) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn parse_dims(dims: &str) -> Result<(usize, usize, usize), Failure> {
    let parts: Vec<usize> = dims
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| Failure::Usage(format!("--dims takes n,F,K, got {dims:?}")))?;
    match parts[..] {
        [n, f, k] if n >= 1 && f >= 1 && k >= 1 => Ok((n, f, k)),
        _ => Err(Failure::Usage(format!("--dims takes three positive integers n,F,K, got {dims:?}"))),
    }
}

fn gradcheck(form: &str, dims: &str, eps: f64, seed: u64, corrupt: Option<f64>, out: &mut dyn Write) -> Result<(), Failure> {
    let form = HForm::parse(form).ok_or_else(|| Failure::Usage(format!("unknown form {form:?}")))?;
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Failure::Usage(format!("--eps must be positive, got {eps}")));
    }
    let (n, f, k) = parse_dims(dims)?;
    let cfg = GradCheckConfig { eps, seed, corrupt_factor: corrupt, ..GradCheckConfig::default() };
    let report = check_crn(form, n, f, k, &cfg)?;
    write!(out, "{report}")?;
    writeln!(out, "max_rel_err={:.3e}", report.max_rel_error())?;
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Check(format!(
            "max relative error {:.3e} >= {:.0e}",
            report.max_rel_error(),
            report.tolerance
        )))
    }
}

fn load_config(path: PathBuf) -> Result<RunConfig, Failure> {
    let text = fs::read_to_string(&path)?;
    Ok(RunConfig::from_json(&text)?.with_env_seed()?)
}

fn print_json(out: &mut dyn Write, value: &impl Serialize) -> Result<(), Failure> {
    writeln!(out, "{}", serde_json::to_string(value).map_err(Error::from)?)?;
    Ok(())
}

fn train(config: PathBuf, out: &mut dyn Write) -> Result<(), Failure> {
    let (_, history) = run_training(load_config(config)?)?;
    for m in &history {
        print_json(out, m)?;
    }
    Ok(())
}

fn eval(config: PathBuf, checkpoint: PathBuf, out: &mut dyn Write) -> Result<(), Failure> {
    let config = load_config(config)?;
    let (_, eval) = config.load_data()?;
    let mut trainer = Trainer::new(config)?;
    trainer.load_checkpoint(checkpoint)?;
    print_json(out, &trainer.evaluate(&samples(&eval)?)?)
}

/// Grid keys and their values; a bare number extends the previous key.
fn parse_grid(grid: &str) -> Result<Vec<(String, Vec<usize>)>, Failure> {
    let bad = || Failure::Usage(format!("invalid grid {grid:?}; expected e.g. N=24,T=16,P=4,F=2,4"));
    let mut keys: Vec<(String, Vec<usize>)> = Vec::new();
    for token in grid.split(',').map(str::trim) {
        let (key, value) = match token.split_once('=') {
            Some((k, v)) => (Some(k.trim().to_ascii_uppercase()), v),
            None => (None, token),
        };
        let value: usize = value.trim().parse().map_err(|_| bad())?;
        if value == 0 {
            return Err(bad());
        }
        match key {
            Some(k) if ["N", "T", "P", "F"].contains(&k.as_str()) && !keys.iter().any(|(x, _)| *x == k) => {
                keys.push((k, vec![value]))
            }
            Some(_) => return Err(bad()),
            None => keys.last_mut().ok_or_else(bad)?.1.push(value),
        }
    }
    Ok(keys)
}

fn bench_configs(levels: &str, grid: &str) -> Result<Vec<Vec<BenchConfig>>, Failure> {
    let depths: Vec<u8> = levels
        .split(',')
        .map(|l| match l.trim() {
            "2" => Ok(2),
            "3" => Ok(3),
            other => Err(Failure::Usage(format!("bench covers levels 2 and 3, got {other:?}"))),
        })
        .collect::<Result<_, _>>()?;
    let keys = parse_grid(grid)?;
    let get = |k: &str| keys.iter().find(|(x, _)| x == k).map(|(_, v)| v.clone());
    let need = |k: &str| get(k).ok_or_else(|| Failure::Usage(format!("grid is missing {k}")));
    let (ns, ts, fs_) = (need("N")?, need("T")?, need("F")?);
    let ps = get("P");
    if depths.contains(&3) && ps.is_none() {
        return Err(Failure::Usage("three levels need P in the grid".into()));
    }

    let mut groups = Vec::new();
    for &n in &ns {
        for &t in &ts {
            for &f in &fs_ {
                for &p in ps.as_deref().unwrap_or(&[0]) {
                    let mut group = Vec::new();
                    for &d in &depths {
                        let cfg = if d == 2 {
                            BenchConfig::two_level(n, t, f)
                        } else {
                            if n % p != 0 {
                                return Err(Failure::Usage(format!("P={p} does not divide N={n}")));
                            }
                            BenchConfig::three_level(p, n / p, t, f)
                        };
                        if d == 2 && group.iter().any(|c: &BenchConfig| c.id == cfg.id) {
                            continue;
                        }
                        group.push(cfg);
                    }
                    groups.push(group);
                }
            }
        }
    }
    Ok(groups)
}

fn bench(levels: &str, grid: &str, repeats: usize, seed: u64, path: Option<PathBuf>, out: &mut dyn Write) -> Result<(), Failure> {
    if repeats < 3 {
        return Err(Failure::Usage(format!("--repeats must be at least 3, got {repeats}")));
    }
    let groups = bench_configs(levels, grid)?;
    let mut reports: Vec<CostReport> = Vec::new();
    let mut lines = Vec::new();
    for group in &groups {
        let rs = group.iter().map(|c| measure(c, repeats, seed)).collect::<crate::Result<Vec<_>>>()?;
        if let [a, b] = &rs[..] {
            lines.push(format!("# {}", compare(a, b)));
        }
        reports.extend(rs);
    }
    match path {
        Some(p) => write_csv(fs::File::create(p)?, &reports)?,
        None => write_csv(&mut *out, &reports)?,
    }
    for l in lines {
        writeln!(out, "{l}")?;
    }
    Ok(())
}

fn gen(
    spec: Option<PathBuf>,
    kind: Option<TaskKind>,
    samples: Option<usize>,
    seed: Option<u64>,
    split: Option<u64>,
    path: PathBuf,
    out: &mut dyn Write,
) -> Result<(), Failure> {
    let mut s = match spec {
        Some(p) => serde_json::from_str::<SyntheticTaskSpec>(&fs::read_to_string(p)?)
            .map_err(|e| Failure::Usage(format!("bad task spec: {e}")))?,
        None => SyntheticTaskSpec::default(),
    };
    if let Ok(raw) = std::env::var(SEED_ENV) {
        s.seed = raw
            .trim()
            .parse()
            .map_err(|_| Failure::Usage(format!("{SEED_ENV} must be an unsigned integer")))?;
    }
    s.kind = kind.unwrap_or(s.kind);
    s.samples = samples.unwrap_or(s.samples);
    s.seed = seed.unwrap_or(s.seed);
    s.split = split.unwrap_or(s.split);
    let bundle = gen_task(&s)?;
    save_feature_bundle(&bundle, &path)?;
    writeln!(out, "wrote {} {} samples to {}", bundle.len(), bundle.task(), path.display())?;
    Ok(())
}

fn inspect(path: PathBuf, out: &mut dyn Write) -> Result<(), Failure> {
    let bundle = load_feature_bundle(path)?;
    writeln!(out, "task={} samples={}", bundle.task(), bundle.len())?;
    for e in bundle.manifest() {
        let shape: Vec<String> = e.shape.iter().map(usize::to_string).collect();
        writeln!(out, "{} {} [{}] @{}", e.name, e.dtype, shape.join(","), e.offset)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests;
