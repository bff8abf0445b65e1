//! Command-line front end.
//!
//! Exit codes: 0 success, 1 validation/format/I/O errors, 2 degenerate input
//! (`DegenerateRsm`, `ZeroVariance`). Errors go to stderr as a single line
//! `error.kind=<kind> detail=<text>`.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::error::{Error, Result};
use crate::io::{read_array, read_manifest, read_matrix, write_matrix, write_report};
use crate::kernels::{Kernel, Rsm};
use crate::markov::{markov_embed_uniform, RepresentationSet};
use crate::measures::{ad_measure_with_kernels, rsm_measure, MeasureId};
use crate::selftest;

#[derive(Debug, Parser)]
#[command(
    name = "markov-rsm",
    version,
    about = "Markov-matrix representational similarity"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build an RSM from a representation matrix.
    Rsm {
        #[arg(long)]
        kernel: String,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Embed an RSM as a row-stochastic matrix (uniform q).
    Embed {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Score two RSM files, or two comma-separated lists of representation
    /// files for ad-cka / ad-distcorr.
    Similarity {
        #[arg(long)]
        measure: String,
        #[arg(long)]
        t: Option<u32>,
        /// Kernel for ad-* measures (default: linear for ad-cka, distance for ad-distcorr).
        #[arg(long)]
        kernel: Option<String>,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        a: String,
        #[arg(long)]
        b: String,
    },
    /// Run the evaluation described by a manifest and write a JSON report.
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Check the core invariants on random instances.
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        trials: usize,
    },
}

fn kernel_arg(name: &str, sigma: Option<f64>) -> Result<Kernel> {
    match name.parse::<Kernel>()? {
        Kernel::Rbf { .. } => Ok(Kernel::Rbf { sigma }),
        k => Ok(k),
    }
}

fn read_rsm(path: &Path) -> Result<Rsm> {
    Rsm::from_matrix(read_array(path)?)
}

fn read_set(list: &str) -> Result<RepresentationSet> {
    let members = list
        .split(',')
        .filter(|s| !s.is_empty())
        .map(|p| read_matrix(Path::new(p)))
        .collect::<Result<Vec<_>>>()?;
    RepresentationSet::new(members)
}

fn execute(cmd: Command, out: &mut dyn Write) -> Result<()> {
    let w = |out: &mut dyn Write, s: String| -> Result<()> {
        writeln!(out, "{s}").map_err(|source| Error::Io {
            path: PathBuf::from("<stdout>"),
            source,
        })
    };
    match cmd {
        Command::Rsm {
            kernel,
            sigma,
            input,
            output,
        } => {
            let rsm = kernel_arg(&kernel, sigma)?.rsm(&read_matrix(&input)?)?;
            write_matrix(rsm.view(), &output)
        }
        Command::Embed { input, output } => {
            let p = markov_embed_uniform(&read_rsm(&input)?);
            write_matrix(p.view(), &output)
        }
        Command::Similarity {
            measure,
            t,
            kernel,
            sigma,
            a,
            b,
        } => {
            let id: MeasureId = measure.parse()?;
            let score = if id.is_multi_layer() {
                let k = match kernel {
                    Some(name) => kernel_arg(&name, sigma)?,
                    None => id.default_kernel(),
                };
                let (a1, a2) = (read_set(&a)?, read_set(&b)?);
                ad_measure_with_kernels(id, &a1, &vec![k; a1.len()], &a2, &vec![k; a2.len()])?
            } else {
                if id.uses_scale() && t.is_none() {
                    return Err(Error::Validation(format!("--t is required for {id}")));
                }
                rsm_measure(id, &read_rsm(Path::new(&a))?, &read_rsm(Path::new(&b))?, t)?
            };
            w(out, format!("{:.12}", score.value))
        }
        Command::Evaluate { manifest, report } => {
            let m = read_manifest(&manifest)?;
            let base = manifest.parent().unwrap_or(Path::new("."));
            let r = m.run(base)?;
            write_report(&r, &report)?;
            w(
                out,
                format!(
                    "spearman_rho={:.12} kendall_tau={} pairs={}",
                    r.spearman_rho,
                    r.kendall_tau.map_or("none".into(), |t| format!("{t:.12}")),
                    r.pair_count
                ),
            )
        }
        Command::Selftest { seed, trials } => {
            let results = selftest::run(seed, trials);
            let mut all = true;
            for r in &results {
                all &= r.passed;
                let verdict = if r.passed { "PASS" } else { "FAIL" };
                w(out, format!("{verdict} {} {}", r.name, r.detail))?;
            }
            if all {
                Ok(())
            } else {
                Err(Error::Validation("selftest failed".into()))
            }
        }
    }
}

fn error_record(kind: &str, detail: &str) -> String {
    let flat: String = detail
        .chars()
        .map(|c| if c == '\n' || c == '\r' { ' ' } else { c })
        .collect();
    format!("error.kind={kind} detail={}", flat.trim())
}

/// Runs the CLI and returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{e}");
                return 0;
            }
            let _ = writeln!(err, "{}", error_record("usage", &e.to_string()));
            return 1;
        }
    };
    match execute(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "{}", error_record(e.kind(), &e.to_string()));
            if e.is_degenerate() {
                2
            } else {
                1
            }
        }
    }
}
