//! Command-line interface: attention demos, loss evaluation, EKF stream
//! fusion, trajectory/flow metrics, scaling benchmarks, and the built-in
//! verification suite.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

mod config;
mod selftest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{Config, Precision};
use specfuse_core::attention::{encode_pair, load_encoder_params, save_encoder_params, EncoderParams};
use specfuse_core::bench::{fit_scaling, run_bench, BenchConfig};
use specfuse_core::distill::{
    distill_descent_demo, loss_channel, loss_l2, loss_spatial, DistillationParams,
    DistillationWeights,
};
use specfuse_core::ekf::{fuse_streams, load_gnss_csv, FuseConfig};
use specfuse_core::geometry::FlowField;
use specfuse_core::tensor::load_fmft;
use specfuse_core::trajectory::{ate_rmse, flow_metrics, load_tum, save_tum, MetricReport};
use specfuse_core::{Error, Real, Result};

#[derive(Parser)]
#[command(
    name = "specfuse",
    about = "Spectral attention, distillation losses, EKF position fusion, and trajectory metrics",
    version
)]
struct Cli {
    /// Path to a key = value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Encode an RGB/depth tensor pair through the fusion encoder.
    Attend(AttendArgs),
    /// Run the distillation gradient-descent demo and print the loss trace.
    Distill(DistillArgs),
    /// Evaluate the distillation losses between two feature-map tensors.
    Losses(LossesArgs),
    /// Fuse a visual trajectory with GNSS fixes through the Kalman filter.
    Fuse(FuseArgs),
    /// Absolute trajectory error between two TUM trajectories.
    Ate(AteArgs),
    /// Flow accuracy (ACC_1px) and average end-point error between two flow tensors.
    FlowMetrics(FlowMetricsArgs),
    /// Compare spectral vs direct correlation runtime and operation counts.
    Bench(BenchArgs),
    /// Run every built-in oracle-equivalence check.
    Selftest,
}

#[derive(Args)]
struct AttendArgs {
    /// RGB input tensor, shape [h, w, 3].
    rgb: PathBuf,
    /// Depth input tensor, shape [h, w, 1].
    depth: PathBuf,
    /// Parameter bundle directory; seeded parameters are generated when omitted.
    params: Option<PathBuf>,
    /// Output prefix; writes <prefix>_rgb.fmft and <prefix>_depth.fmft.
    #[arg(short, long)]
    output: String,
    /// Write the (possibly generated) parameters to this directory.
    #[arg(long)]
    save_params: Option<PathBuf>,
    /// Encoder channel count when generating seeded parameters.
    #[arg(long, default_value_t = 4)]
    channels: usize,
}

#[derive(Args)]
struct DistillArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 200)]
    steps: usize,
    #[arg(long, default_value_t = 0.05)]
    rate: f64,
    /// Also write the trace as CSV.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct LossesArgs {
    /// RGB-branch feature tensor, shape [h, w, d].
    fr: PathBuf,
    /// Depth-branch feature tensor, shape [h, w, d].
    fd: PathBuf,
}

#[derive(Args)]
struct FuseArgs {
    /// Visual trajectory (TUM format).
    visual: PathBuf,
    /// GNSS fixes (CSV: timestamp,x,y,z).
    gnss: PathBuf,
    /// Output fused trajectory (TUM format).
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct AteArgs {
    /// Estimated trajectory (TUM format).
    est: PathBuf,
    /// Ground-truth trajectory (TUM format).
    gt: PathBuf,
    /// Skip the rigid alignment before computing residuals.
    #[arg(long)]
    no_align: bool,
    /// Association window in seconds (overrides the config).
    #[arg(long)]
    max_dt: Option<f64>,
    /// Also write the metric report as CSV.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct FlowMetricsArgs {
    /// Estimated flow tensor, shape [h, w, 2].
    est: PathBuf,
    /// Ground-truth flow tensor, shape [h, w, 2].
    gt: PathBuf,
    /// Also write the metric report as CSV.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Sizes as a doubling range `256..8192` or a comma list `256,512,1024`.
    #[arg(long, default_value = "256..8192")]
    sizes: String,
    #[arg(long, default_value_t = 2)]
    channels: usize,
    #[arg(long, default_value_t = 3)]
    reps: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV path.
    #[arg(short, long, default_value = "bench.csv")]
    output: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are not errors.
            if matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            ) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    let cfg = match cli.config.as_deref().map(Config::load).transpose() {
        Ok(cfg) => cfg.unwrap_or_default(),
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match run(cli.cmd, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::SingularInnovation(_) | Error::Divergence(_) | Error::Numerical(_) => 3,
                _ => 2,
            };
            ExitCode::from(code)
        }
    }
}

fn run(cmd: Cmd, cfg: &Config) -> Result<()> {
    match cmd {
        Cmd::Attend(args) => match cfg.precision {
            Precision::F32 => attend::<f32>(&args, cfg),
            Precision::F64 => attend::<f64>(&args, cfg),
        },
        Cmd::Distill(args) => distill(&args, cfg),
        Cmd::Losses(args) => match cfg.precision {
            Precision::F32 => losses::<f32>(&args, cfg),
            Precision::F64 => losses::<f64>(&args, cfg),
        },
        Cmd::Fuse(args) => fuse(&args, cfg),
        Cmd::Ate(args) => ate(&args, cfg),
        Cmd::FlowMetrics(args) => flow(&args),
        Cmd::Bench(args) => bench(&args, cfg),
        Cmd::Selftest => selftest::run(),
    }
}

fn attend<T: Real>(args: &AttendArgs, cfg: &Config) -> Result<()> {
    let rgb = load_fmft(&args.rgb)?.cast::<T>();
    let depth = load_fmft(&args.depth)?.cast::<T>();
    let params: EncoderParams<T> = match &args.params {
        Some(dir) => load_encoder_params(dir)?,
        None => EncoderParams::seeded(cfg.stride, args.channels, cfg.seed)?,
    };
    if let Some(dir) = &args.save_params {
        save_encoder_params(dir, &params)?;
    }
    let (fr, fd) = encode_pair(&rgb, &depth, &params)?;
    let rgb_out = format!("{}_rgb.fmft", args.output);
    let depth_out = format!("{}_depth.fmft", args.output);
    fr.to_tensor().save_fmft(&rgb_out)?;
    fd.to_tensor().save_fmft(&depth_out)?;
    println!(
        "encoded {}x{}x{} feature maps -> {rgb_out}, {depth_out}",
        fr.height(),
        fr.width(),
        fr.channels()
    );
    Ok(())
}

fn distill(args: &DistillArgs, cfg: &Config) -> Result<()> {
    let seed = args.seed.unwrap_or(cfg.seed);
    let trace = distill_descent_demo(seed, args.steps, args.rate)?;
    for (step, loss) in trace.iter().enumerate() {
        println!("{step},{loss:.9}");
    }
    let initial = trace[0];
    let last = trace.last().copied().unwrap_or(initial);
    println!(
        "# initial {initial:.6}, final {last:.6}, ratio {:.6}",
        last / initial.max(f64::MIN_POSITIVE)
    );
    if let Some(path) = &args.output {
        let mut csv = String::from("step,loss\n");
        for (step, loss) in trace.iter().enumerate() {
            csv.push_str(&format!("{step},{loss:.9}\n"));
        }
        std::fs::write(path, csv)?;
    }
    Ok(())
}

fn losses<T: Real>(args: &LossesArgs, cfg: &Config) -> Result<()> {
    let fr = specfuse_core::FeatureMap::from_tensor(load_fmft(&args.fr)?.cast::<T>())?;
    let fd = specfuse_core::FeatureMap::from_tensor(load_fmft(&args.fd)?.cast::<T>())?;
    let params = DistillationParams::<T>::identity(fr.channels());
    let weights = DistillationWeights {
        alpha: T::from_f64(cfg.alpha),
        beta: T::from_f64(cfg.beta),
        delta: T::from_f64(cfg.delta),
    };
    let l2 = loss_l2(&fr, &fd)?;
    let ls = loss_spatial(&fr, &fd, &params)?;
    let lc = loss_channel(&fr, &fd, &params)?;
    let total = weights.alpha * l2 + weights.beta * ls + weights.delta * lc;
    println!("element:  {l2:.9}");
    println!("spatial:  {ls:.9}");
    println!("channel:  {lc:.9}");
    println!("total:    {total:.9}");
    Ok(())
}

fn fuse(args: &FuseArgs, cfg: &Config) -> Result<()> {
    let visual = load_tum(&args.visual)?;
    let gnss = load_gnss_csv(&args.gnss)?;
    let fused = fuse_streams(
        &visual,
        &gnss,
        &FuseConfig {
            visual_var: cfg.q_visual,
            gnss_var: cfg.q_gnss,
            process_var: cfg.r,
            initial_var: cfg.q_visual,
            max_dt: cfg.max_dt,
        },
    )?;
    save_tum(&fused, &args.output)?;
    println!(
        "fused {} visual samples with {} GNSS fixes -> {}",
        visual.len(),
        gnss.len(),
        args.output.display()
    );
    Ok(())
}

fn ate(args: &AteArgs, cfg: &Config) -> Result<()> {
    let est = load_tum(&args.est)?;
    let gt = load_tum(&args.gt)?;
    let max_dt = args.max_dt.unwrap_or(cfg.max_dt);
    let cm = ate_rmse(&est, &gt, !args.no_align, max_dt)?;
    println!("ATE: {cm:.3} cm");
    if let Some(path) = &args.output {
        let report = MetricReport {
            ate_rmse_cm: Some(cm),
            ..MetricReport::default()
        };
        report.validate()?;
        std::fs::write(path, report.to_csv())?;
    }
    Ok(())
}

fn flow(args: &FlowMetricsArgs) -> Result<()> {
    let est = FlowField::from_tensor(&load_fmft(&args.est)?.cast::<f64>())?;
    let gt = FlowField::from_tensor(&load_fmft(&args.gt)?.cast::<f64>())?;
    let m = flow_metrics(&est, &gt)?;
    println!("ACC_1px: {:.3} %", m.acc_1px);
    println!("AEPE: {:.3} px", m.aepe);
    if let Some(path) = &args.output {
        let report = MetricReport {
            acc_1px_pct: Some(m.acc_1px),
            aepe_px: Some(m.aepe),
            ..MetricReport::default()
        };
        report.validate()?;
        std::fs::write(path, report.to_csv())?;
    }
    Ok(())
}

fn parse_sizes(spec: &str) -> Result<Vec<usize>> {
    let bad = |msg: String| Error::InvalidParam(msg);
    if let Some((lo, hi)) = spec.split_once("..") {
        let lo: usize = lo
            .trim()
            .parse()
            .map_err(|_| bad(format!("bad size `{lo}`")))?;
        let hi: usize = hi
            .trim()
            .parse()
            .map_err(|_| bad(format!("bad size `{hi}`")))?;
        if lo == 0 || hi < lo {
            return Err(bad(format!("bad size range `{spec}`")));
        }
        let mut sizes = Vec::new();
        let mut n = lo;
        while n <= hi {
            sizes.push(n);
            n *= 2;
        }
        Ok(sizes)
    } else {
        spec.split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| bad(format!("bad size `{s}`")))
            })
            .collect()
    }
}

fn bench(args: &BenchArgs, cfg: &Config) -> Result<()> {
    let sizes = parse_sizes(&args.sizes)?;
    let report = run_bench(
        &sizes,
        &BenchConfig {
            channels: args.channels,
            reps: args.reps,
            seed: args.seed.unwrap_or(cfg.seed),
        },
    )?;
    std::fs::write(&args.output, report.to_csv())?;
    println!("wrote {} rows to {}", report.rows.len(), args.output.display());
    if sizes.len() >= 4 {
        for (method, slope) in fit_scaling(&report)? {
            println!("{method}: log-log slope {slope:.3}");
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn size_specs_parse() {
        assert_eq!(parse_sizes("256..8192").unwrap().len(), 6);
        assert_eq!(parse_sizes("256..8192").unwrap()[0], 256);
        assert_eq!(parse_sizes("64,128,97").unwrap(), vec![64, 128, 97]);
        assert!(parse_sizes("x..y").is_err());
        assert!(parse_sizes("0..16").is_err());
    }
}
