use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use commpath::cli;
use commpath::tol::Tolerances;

/// Paths between nearby commuting normal matrix tuples, constrained to
/// matrix varieties, with machine-checkable certificates.
#[derive(Parser)]
#[command(name = "commpath", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct TolArgs {
    /// Tolerance for exact algebraic identities.
    #[arg(long = "tol-algebraic", default_value_t = commpath::tol::ALGEBRAIC)]
    tol_algebraic: f64,
    /// Tolerance for identities transported through a conjugation.
    #[arg(long = "tol-conjugation", default_value_t = commpath::tol::CONJUGATION)]
    tol_conjugation: f64,
    /// Tolerance for manifold and defining-equation residuals along paths.
    #[arg(long = "tol-variety", default_value_t = commpath::tol::VARIETY_PATH)]
    tol_variety: f64,
    /// Certification samples on [0, 1].
    #[arg(long, default_value_t = 33)]
    samples: usize,
}

impl TolArgs {
    fn tolerances(&self) -> Tolerances {
        Tolerances {
            algebraic: self.tol_algebraic,
            conjugation: self.tol_conjugation,
            variety_path: self.tol_variety,
            samples: self.samples,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random instance on a variety.
    Gen {
        /// cube | disk | sphere | torus | spherical-unitary | manifold:<id>
        #[arg(long)]
        variety: String,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        m: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Perturb an instance into a nearby pair on the same variety.
    Perturb {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        delta: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Connect a pair instance; writes the path and its certificate.
    /// Exits 0 iff the certificate passes.
    Connect {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        out: PathBuf,
        /// Certificate output; defaults to <out> with a .cert.json suffix.
        #[arg(long)]
        cert: Option<PathBuf>,
        #[command(flatten)]
        tols: TolArgs,
    },
    /// Export spectral trajectories of a path.
    Trace {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 33)]
        samples: usize,
        /// csv | json
        #[arg(long, default_value = "csv")]
        format: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recertify a path file. Exits 0 on pass, 1 on a certified failure.
    Verify {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        tols: TolArgs,
    },
}

fn default_cert_path(out: &std::path::Path) -> PathBuf {
    match out.file_stem() {
        Some(stem) => {
            let mut name = stem.to_os_string();
            name.push(".cert.json");
            out.with_file_name(name)
        }
        None => out.with_extension("cert.json"),
    }
}

fn run() -> Result<u8, commpath::Error> {
    let args = Cli::parse();
    match args.command {
        Command::Gen { variety, n, m, seed, out } => {
            cli::cmd_gen(&variety, n, m, seed, &out)?;
            eprintln!("wrote instance to {}", out.display());
            Ok(0)
        }
        Command::Perturb { input, delta, seed, out } => {
            let pair = cli::cmd_perturb(&input, delta, seed, &out)?;
            let achieved = pair
                .provenance
                .params
                .get("achieved_eth")
                .cloned()
                .unwrap_or_default();
            eprintln!("wrote pair to {} (achieved eth {achieved})", out.display());
            Ok(0)
        }
        Command::Connect { input, epsilon, out, cert, tols } => {
            let cert_path = cert.unwrap_or_else(|| default_cert_path(&out));
            let (_, certificate) =
                cli::cmd_connect(&input, epsilon, &out, &cert_path, &tols.tolerances())?;
            eprintln!(
                "wrote path to {} and certificate to {} (verdict: {})",
                out.display(),
                cert_path.display(),
                certificate.verdict
            );
            Ok(if certificate.passed() { 0 } else { 1 })
        }
        Command::Trace { input, samples, format, out } => {
            let trace = cli::cmd_trace(&input, samples, &format, &out)?;
            eprintln!(
                "wrote {} rows ({} samples, n = {}, m = {}) to {}",
                trace.rows.len(),
                trace.samples,
                trace.n,
                trace.m,
                out.display()
            );
            Ok(0)
        }
        Command::Verify { input, out, tols } => {
            let cert = cli::cmd_verify(&input, &tols.tolerances(), out.as_deref())?;
            println!("{}", serde_json::to_string(&cert).expect("certificate serializes"));
            Ok(if cert.passed() { 0 } else { 1 })
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
