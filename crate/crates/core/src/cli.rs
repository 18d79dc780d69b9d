//! The `gmrf` command line front end.
//!
//! Subcommands: `sample`, `estimate`, `select`, `risk`, `dims`, `tails`,
//! `minimax`, `moran`, and `rerun`.  Every command writes its declared
//! outputs plus a `<command>.manifest.json` (configuration, tool version,
//! output digests); `rerun` replays a manifest and verifies that all digests
//! reproduce bit-for-bit.
//!
//! Exit codes: 0 success, 2 schema/argument error, 3 numeric precondition
//! failure, 4 I/O error.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::chaos::{tail_experiment, TailMode};
use crate::circulant::ThetaField;
use crate::contrast::{
    bias_sequence, fit_model, loss, periodogram, select_model, PenaltySpec,
};
use crate::error::{Error, Result};
use crate::field::{moran_covariance_limit, moran_lattice_sum, sample, GmrfParams};
use crate::io::{
    self, derive_seed, fmt_g17, load_batch, load_chaos_family, load_theta, save_batch, Manifest,
};
use crate::minimax::{kl_bound_hypercube, minimax_lower_bound, Hypercube};
use crate::torus::{build_model_collection, verify_dm2_ratio, verify_growth, TorusGeometry};

#[derive(Parser, Debug)]
#[command(
    name = "gmrf",
    about = "Stationary Gaussian Markov random fields on a square torus: exact sampling, penalized conditional-least-squares estimation, and verification experiments",
    version
)]
pub struct CliArgs {
    /// Cap the number of worker threads (outputs are identical either way).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Command {
    /// Draw i.i.d. field replicates and store them as a binary batch.
    Sample(SampleArgs),
    /// Fit one neighborhood model to a stored batch.
    Estimate(EstimateArgs),
    /// Penalized model selection over the whole nested collection.
    Select(SelectArgs),
    /// Monte Carlo loss curves per model plus selected-model risk.
    Risk(RiskArgs),
    /// Dimension combinatorics table for the nested collection.
    Dims(DimsArgs),
    /// Monte Carlo tail experiment for a chaos family.
    Tails(TailsArgs),
    /// Hypercube/Fano lower-bound calculator.
    Minimax(MinimaxArgs),
    /// Four-nearest-neighbor covariance: lattice sum vs quadrature limit.
    Moran(MoranArgs),
    /// Re-run a manifest and verify output digests.
    Rerun(RerunArgs),
}

#[derive(Args, Debug, Serialize, Deserialize)]
pub struct SampleArgs {
    /// Torus side; must match the θ file.
    #[arg(long)]
    pub p: usize,
    /// Number of replicates.
    #[arg(long)]
    pub n: usize,
    /// θ grid (JSON, one representative per orbit).
    #[arg(long)]
    pub theta: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub sigma2: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output batch file.
    #[arg(long, default_value = "batch.bin")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize, Deserialize)]
pub struct EstimateArgs {
    #[arg(long)]
    pub batch: PathBuf,
    /// Index into the nested model collection (0-based).
    #[arg(long)]
    pub model_index: usize,
    /// ℓ1 budget ρ.
    #[arg(long, default_value_t = 2.0)]
    pub rho: f64,
    /// Fit in the isotropic coordinate system.
    #[arg(long, default_value_t = false)]
    pub iso: bool,
    #[arg(long, default_value = "fit.json")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize, Deserialize)]
pub struct SelectArgs {
    #[arg(long)]
    pub batch: PathBuf,
    /// Penalty multiplier K.
    #[arg(long = "K", default_value_t = 3.0)]
    pub k: f64,
    #[arg(long, default_value_t = 2.0)]
    pub rho1: f64,
    #[arg(long)]
    pub rho2: f64,
    #[arg(long)]
    pub sigma2: f64,
    #[arg(long, default_value_t = false)]
    pub iso: bool,
    #[arg(long, default_value = "selection.json")]
    pub out_json: PathBuf,
    #[arg(long, default_value = "selection.csv")]
    pub out_csv: PathBuf,
}

#[derive(Args, Debug, Serialize, Deserialize)]
pub struct RiskArgs {
    #[arg(long)]
    pub p: usize,
    /// Replicates per Monte Carlo repetition.
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub theta: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub sigma2: f64,
    /// Monte Carlo repetitions.
    #[arg(long)]
    pub reps: usize,
    #[arg(long = "K", default_value_t = 3.0)]
    pub k: f64,
    #[arg(long, default_value_t = 2.0)]
    pub rho1: f64,
    #[arg(long)]
    pub rho2: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = false)]
    pub iso: bool,
    #[arg(long, default_value = "risk.csv")]
    pub out_csv: PathBuf,
    #[arg(long, default_value = "risk.json")]
    pub out_json: PathBuf,
    /// Optional SVG line chart of the per-model risk curve.
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize, Deserialize)]
pub struct DimsArgs {
    #[arg(long)]
    pub p: usize,
    #[arg(long, default_value = "dims.csv")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize, Deserialize)]
pub struct TailsArgs {
    /// Chaos family (JSON).
    #[arg(long)]
    pub family: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    pub nmc: usize,
    /// Deviation grid as x0:x1:steps.
    #[arg(long, default_value = "0.1:2.0:20")]
    pub grid: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// gaussian or rademacher.
    #[arg(long, default_value = "gaussian")]
    pub mode: String,
    /// Block size for the rademacher CLT embedding.
    #[arg(long, default_value_t = 1)]
    pub block: usize,
    #[arg(long, default_value = "tails.json")]
    pub out_json: PathBuf,
    #[arg(long, default_value = "tails.csv")]
    pub out_csv: PathBuf,
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize, Deserialize)]
pub struct MinimaxArgs {
    #[arg(long)]
    pub p: usize,
    #[arg(long)]
    pub model_index: usize,
    /// Hypercube center θ' (JSON); defaults to the zero field.
    #[arg(long)]
    pub center: Option<PathBuf>,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0.5)]
    pub kappa: f64,
    /// Hypercube radius; defaults to the Fano radius.
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub sigma2: f64,
    #[arg(long, default_value_t = false)]
    pub iso: bool,
    #[arg(long, default_value = "minimax.json")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize, Deserialize)]
pub struct MoranArgs {
    #[arg(long)]
    pub alpha: f64,
    #[arg(long, default_value_t = 256)]
    pub p: usize,
    #[arg(long, default_value = "moran.json")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize, Deserialize)]
pub struct RerunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}

/// Entry point used by the binary; returns the process exit code.
pub fn run(args: CliArgs) -> i32 {
    if let Some(threads) = args.threads {
        // Ignore failure when a pool already exists (tests call run twice).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    match dispatch(&args.command) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code(&err)
        }
    }
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidArgument(_)
        | Error::Json(_)
        | Error::NotSymmetric { .. }
        | Error::NotBlockCirculant { .. } => 2,
        Error::Precondition(_) | Error::NotPositiveDefinite { .. } | Error::DenseLimit { .. } => 3,
        Error::Io(_) => 4,
    }
}

fn dispatch(command: &Command) -> Result<()> {
    match command {
        Command::Sample(a) => cmd_sample(a),
        Command::Estimate(a) => cmd_estimate(a),
        Command::Select(a) => cmd_select(a),
        Command::Risk(a) => cmd_risk(a),
        Command::Dims(a) => cmd_dims(a),
        Command::Tails(a) => cmd_tails(a),
        Command::Minimax(a) => cmd_minimax(a),
        Command::Moran(a) => cmd_moran(a),
        Command::Rerun(a) => cmd_rerun(a),
    }
}

fn manifest_path(next_to: &Path, command: &str) -> PathBuf {
    let dir = next_to.parent().map(Path::to_path_buf).unwrap_or_default();
    dir.join(format!("{command}.manifest.json"))
}

fn finalize_manifest(
    command: &str,
    config: serde_json::Value,
    outputs: &[&Path],
) -> Result<()> {
    // Inject the subcommand tag so the config deserializes back into a
    // `Command` on rerun.
    let mut config = config;
    if let serde_json::Value::Object(map) = &mut config {
        map.insert(
            "command".to_string(),
            serde_json::Value::String(command.to_string()),
        );
    }
    let mut manifest = Manifest::new(command, config);
    for out in outputs {
        manifest.record_output(out)?;
    }
    manifest.save(manifest_path(outputs[0], command))?;
    Ok(())
}

fn cmd_sample(args: &SampleArgs) -> Result<()> {
    let theta = load_theta(&args.theta)?;
    if theta.geometry().p() != args.p {
        return Err(Error::InvalidArgument(format!(
            "--p {} does not match theta grid side {}",
            args.p,
            theta.geometry().p()
        )));
    }
    let params = GmrfParams::new(theta, args.sigma2)?;
    let batch = sample(&params, args.n, args.seed)?;
    save_batch(&args.out, &batch)?;
    finalize_manifest("sample", serde_json::to_value(args)?, &[&args.out])
}

fn cmd_estimate(args: &EstimateArgs) -> Result<()> {
    let batch = load_batch(&args.batch)?;
    let coll = build_model_collection(batch.geometry)?;
    let model = coll.model(args.model_index)?;
    let pgram = periodogram(&batch)?;
    let fit = fit_model(&pgram, model, args.rho, args.iso)?;
    let doc = serde_json::json!({
        "model_index": args.model_index,
        "d": fit.coeffs.len(),
        "d_m": model.d_m(),
        "d_m_iso": model.d_m_iso(),
        "isotropic": args.iso,
        "rho": args.rho,
        "orbit_representatives": fit
            .orbit_representatives
            .iter()
            .map(|q| vec![q.i, q.j])
            .collect::<Vec<_>>(),
        "coeffs": fit.coeffs,
        "contrast": fit.contrast_value,
        "iterations": fit.iterations,
        "converged": fit.converged,
        "active_l1": fit.active_l1,
        "kkt_residual": fit.kkt_residual,
    });
    std::fs::write(&args.out, serde_json::to_string_pretty(&doc)?)?;
    finalize_manifest("estimate", serde_json::to_value(args)?, &[&args.out])
}

fn cmd_select(args: &SelectArgs) -> Result<()> {
    let batch = load_batch(&args.batch)?;
    let coll = build_model_collection(batch.geometry)?;
    let pgram = periodogram(&batch)?;
    let spec = PenaltySpec::new(
        args.k,
        args.rho1,
        args.rho2,
        args.sigma2,
        batch.n,
        batch.geometry.p(),
    )?;
    let sel = select_model(&pgram, &coll, &spec, args.rho1, args.iso)?;
    let doc = serde_json::json!({
        "chosen": sel.chosen,
        "spec": sel.spec,
        "isotropic": args.iso,
        "rows": sel.rows,
    });
    std::fs::write(&args.out_json, serde_json::to_string_pretty(&doc)?)?;
    io::write_csv(
        &args.out_csv,
        &["model_index", "d_m", "contrast", "penalty", "criterion"],
        sel.rows.iter().map(|r| {
            vec![
                r.model_index.to_string(),
                r.d_m.to_string(),
                fmt_g17(r.contrast),
                fmt_g17(r.penalty),
                fmt_g17(r.criterion),
            ]
        }),
    )?;
    finalize_manifest(
        "select",
        serde_json::to_value(args)?,
        &[&args.out_json, &args.out_csv],
    )
}

fn cmd_risk(args: &RiskArgs) -> Result<()> {
    let theta = load_theta(&args.theta)?;
    if theta.geometry().p() != args.p {
        return Err(Error::InvalidArgument(format!(
            "--p {} does not match theta grid side {}",
            args.p,
            theta.geometry().p()
        )));
    }
    if args.reps == 0 {
        return Err(Error::InvalidArgument("need at least one repetition".into()));
    }
    let params = GmrfParams::new(theta, args.sigma2)?;
    let coll = build_model_collection(*params.geometry())?;
    let spec = PenaltySpec::new(args.k, args.rho1, args.rho2, args.sigma2, args.n, args.p)?;
    let biases = bias_sequence(&params, &coll)?;

    let n_models = coll.len();
    let mut risk_sums = vec![0.0f64; n_models];
    let mut selection_counts = vec![0usize; n_models];
    let mut selected_risk_sum = 0.0f64;
    for rep in 0..args.reps {
        let seed = derive_seed(args.seed, "risk-rep", rep as u64);
        let batch = sample(&params, args.n, seed)?;
        let pgram = periodogram(&batch)?;
        let sel = select_model(&pgram, &coll, &spec, args.rho1, args.iso)?;
        for (idx, fit) in sel.fits.iter().enumerate() {
            let l = loss(&fit.theta, &params);
            risk_sums[idx] += l;
            if idx == sel.chosen {
                selected_risk_sum += l;
            }
        }
        selection_counts[sel.chosen] += 1;
    }

    let reps = args.reps as f64;
    let rows: Vec<Vec<String>> = coll
        .models()
        .iter()
        .enumerate()
        .map(|(idx, m)| {
            vec![
                idx.to_string(),
                m.d_m().to_string(),
                fmt_g17(risk_sums[idx] / reps),
                fmt_g17(biases[idx]),
                fmt_g17(spec.pen(m.d_m())),
                fmt_g17(selection_counts[idx] as f64 / reps),
            ]
        })
        .collect();
    io::write_csv(
        &args.out_csv,
        &[
            "model_index",
            "d_m",
            "mc_risk",
            "bias",
            "penalty",
            "selection_frequency",
        ],
        rows,
    )?;
    let doc = serde_json::json!({
        "selected_mean_risk": selected_risk_sum / reps,
        "best_fixed_mean_risk": risk_sums
            .iter()
            .map(|s| s / reps)
            .fold(f64::INFINITY, f64::min),
        "reps": args.reps,
        "spec": spec,
    });
    std::fs::write(&args.out_json, serde_json::to_string_pretty(&doc)?)?;

    let mut outputs: Vec<&Path> = vec![&args.out_csv, &args.out_json];
    if let Some(svg) = &args.svg {
        let risk_series: Vec<(f64, f64)> = risk_sums
            .iter()
            .enumerate()
            .map(|(i, s)| (i as f64, s / reps))
            .collect();
        let bias_series: Vec<(f64, f64)> = biases
            .iter()
            .enumerate()
            .map(|(i, b)| (i as f64, *b))
            .collect();
        io::write_svg_chart(
            svg,
            "per-model MC risk and bias",
            &[("mc_risk", risk_series), ("bias", bias_series)],
        )?;
        outputs.push(svg);
    }
    finalize_manifest("risk", serde_json::to_value(args)?, &outputs)
}

fn cmd_dims(args: &DimsArgs) -> Result<()> {
    let geom = TorusGeometry::new(args.p)?;
    let coll = build_model_collection(geom)?;
    let growth = verify_growth(&coll);
    let dm2 = verify_dm2_ratio(&coll);
    let rows: Vec<Vec<String>> = dm2
        .rows
        .iter()
        .map(|row| {
            let growth_ratio = if row.index == 0 {
                String::new()
            } else {
                fmt_g17(growth.steps[row.index - 1].ratio)
            };
            vec![
                row.index.to_string(),
                row.radius_sq.to_string(),
                row.d_m.to_string(),
                coll.models()[row.index].d_m_iso().to_string(),
                row.dm2_upper.to_string(),
                growth_ratio,
            ]
        })
        .collect();
    io::write_csv(
        &args.out,
        &["index", "r_m_sq", "d_m", "d_m_iso", "dm2_upper", "growth_ratio"],
        rows,
    )?;
    finalize_manifest("dims", serde_json::to_value(args)?, &[&args.out])
}

fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(Error::InvalidArgument(format!(
            "grid must be x0:x1:steps, got {spec}"
        )));
    }
    let x0: f64 = parts[0]
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("bad grid start {}", parts[0])))?;
    let x1: f64 = parts[1]
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("bad grid end {}", parts[1])))?;
    let steps: usize = parts[2]
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("bad grid steps {}", parts[2])))?;
    if steps < 2 || x1 <= x0 {
        return Err(Error::InvalidArgument(
            "grid needs x1 > x0 and steps >= 2".into(),
        ));
    }
    Ok((0..steps)
        .map(|k| x0 + (x1 - x0) * k as f64 / (steps - 1) as f64)
        .collect())
}

fn cmd_tails(args: &TailsArgs) -> Result<()> {
    let family = load_chaos_family(&args.family)?;
    let xs = parse_grid(&args.grid)?;
    let mode = match args.mode.as_str() {
        "gaussian" => TailMode::Gaussian,
        "rademacher" => TailMode::Rademacher { block: args.block },
        other => {
            return Err(Error::InvalidArgument(format!(
                "mode must be gaussian or rademacher, got {other}"
            )))
        }
    };
    let report = tail_experiment(&family, args.nmc, &xs, args.seed, mode)?;
    std::fs::write(&args.out_json, serde_json::to_string_pretty(&report)?)?;
    io::write_csv(
        &args.out_csv,
        &["x", "tail", "se", "bound", "censored"],
        report.xs.iter().enumerate().map(|(ix, &x)| {
            vec![
                fmt_g17(x),
                fmt_g17(report.tail[ix]),
                fmt_g17(report.se[ix]),
                report
                    .bound
                    .get(ix)
                    .map(|b| fmt_g17(*b))
                    .unwrap_or_default(),
                report.censored[ix].to_string(),
            ]
        }),
    )?;
    let mut outputs: Vec<&Path> = vec![&args.out_json, &args.out_csv];
    if let Some(svg) = &args.svg {
        let tail_series: Vec<(f64, f64)> = report
            .xs
            .iter()
            .zip(&report.tail)
            .map(|(&x, &t)| (x, t))
            .collect();
        let bound_series: Vec<(f64, f64)> = report
            .xs
            .iter()
            .zip(&report.bound)
            .map(|(&x, &b)| (x, b))
            .collect();
        io::write_svg_chart(
            svg,
            "empirical tail vs fitted bound",
            &[("tail", tail_series), ("bound", bound_series)],
        )?;
        outputs.push(svg);
    }
    finalize_manifest("tails", serde_json::to_value(args)?, &outputs)
}

fn cmd_minimax(args: &MinimaxArgs) -> Result<()> {
    let geom = TorusGeometry::new(args.p)?;
    let coll = build_model_collection(geom)?;
    let model = coll.model(args.model_index)?;
    let center = match &args.center {
        Some(path) => load_theta(path)?,
        None => ThetaField::zeros(geom),
    };
    if center.geometry().p() != args.p {
        return Err(Error::InvalidArgument(
            "--p does not match the center grid side".into(),
        ));
    }
    let bound = minimax_lower_bound(
        model,
        &center,
        args.radius.unwrap_or(f64::INFINITY),
        args.n,
        args.sigma2,
        args.kappa,
        args.iso,
    )?;
    let cube = Hypercube::new(model, center, bound.r_effective, args.iso)?;
    let kl_bound = kl_bound_hypercube(&cube, args.n)?;
    let exact_kl_max = args.n as f64 * cube.max_pair_kl(10, 256, args.n as u64)?;
    let doc = serde_json::json!({
        "p": args.p,
        "model_index": args.model_index,
        "d": cube.dimension(),
        "isotropic": args.iso,
        "kappa": args.kappa,
        "n": args.n,
        "r_fano": bound.r_fano,
        "r_effective": bound.r_effective,
        "branch": bound.branch,
        "kl_bound": kl_bound,
        "exact_kl_max": exact_kl_max,
        "lower_bound": bound.value,
        "l_constant": bound.l_constant,
    });
    std::fs::write(&args.out, serde_json::to_string_pretty(&doc)?)?;
    finalize_manifest("minimax", serde_json::to_value(args)?, &[&args.out])
}

fn cmd_moran(args: &MoranArgs) -> Result<()> {
    let quadrature = moran_covariance_limit(args.alpha)?;
    let lattice = moran_lattice_sum(args.alpha, args.p)?;
    let rel_gap = if quadrature != 0.0 {
        ((lattice - quadrature) / quadrature).abs()
    } else {
        (lattice - quadrature).abs()
    };
    let doc = serde_json::json!({
        "alpha": args.alpha,
        "p": args.p,
        "lattice_covariance": lattice,
        "quadrature_limit": quadrature,
        "relative_gap": rel_gap,
        "elliptic_integral": 4.0 * args.alpha * quadrature + 1.0,
    });
    std::fs::write(&args.out, serde_json::to_string_pretty(&doc)?)?;
    finalize_manifest("moran", serde_json::to_value(args)?, &[&args.out])
}

fn cmd_rerun(args: &RerunArgs) -> Result<()> {
    let manifest = Manifest::load(&args.manifest)?;
    let command: Command = serde_json::from_value(manifest.config.clone())?;
    if matches!(command, Command::Rerun(_)) {
        return Err(Error::InvalidArgument("cannot rerun a rerun".into()));
    }
    dispatch(&command)?;
    let mut mismatches = Vec::new();
    for (path, digest) in &manifest.outputs {
        let now = io::sha256_file(path)?;
        if &now == digest {
            println!("ok       {path}");
        } else {
            println!("MISMATCH {path}");
            mismatches.push(path.clone());
        }
    }
    if mismatches.is_empty() {
        Ok(())
    } else {
        Err(Error::Precondition(format!(
            "{} output(s) did not reproduce: {}",
            mismatches.len(),
            mismatches.join(", ")
        )))
    }
}

impl Command {
    /// Wrap a subcommand config (as stored in manifests) for re-dispatch.
    pub fn from_config(value: serde_json::Value) -> Result<Self> {
        Ok(serde_json::from_value(value)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parser() {
        let xs = parse_grid("0.0:1.0:5").unwrap();
        assert_eq!(xs, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert!(parse_grid("1:0:5").is_err());
        assert!(parse_grid("0:1").is_err());
    }

    #[test]
    fn command_config_roundtrip() {
        let cmd = Command::Dims(DimsArgs {
            p: 9,
            out: PathBuf::from("dims.csv"),
        });
        let value = serde_json::to_value(&cmd).unwrap();
        let back = Command::from_config(value).unwrap();
        match back {
            Command::Dims(args) => assert_eq!(args.p, 9),
            _ => panic!("wrong variant"),
        }
    }

    #[test]
    fn exit_codes_by_error_class() {
        assert_eq!(exit_code(&Error::InvalidArgument("x".into())), 2);
        assert_eq!(exit_code(&Error::Precondition("x".into())), 3);
        assert_eq!(
            exit_code(&Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                "x"
            ))),
            4
        );
    }
}
