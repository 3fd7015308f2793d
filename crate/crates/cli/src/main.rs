use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gauda_core::experiment::{
    cmd_compare_policies, cmd_pretrain_generative, cmd_supp_studies, parse_policies, parse_seed_list, ExperimentConfig,
};
use gauda_core::GaudaError;

#[derive(Parser)]
#[command(name = "gauda", version, about = "Uncertainty-guided generative augmentation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the paired autoencoders and the latent denoiser, then report
    /// their output quality.
    PretrainGenerative(Common),
    /// Train every policy for every seed and write the comparison report.
    ComparePolicies(Common),
    /// Run the two point-cloud studies on sampling and online augmentation.
    SuppStudies(Common),
    /// Print the effective configuration as JSON.
    ShowConfig(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment configuration; built-in defaults fill missing fields.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seeds such as `0..10` or `0,3,7`.
    #[arg(long, value_name = "LIST")]
    seed_list: Option<String>,
    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Continue from artefacts already in the output directory.
    #[arg(long)]
    resume: bool,
    /// Comma-separated policies, e.g. `none,as,gauda+aug`.
    #[arg(long, value_name = "LIST")]
    policies: Option<String>,
    /// Guidance strength used for synthesis.
    #[arg(long)]
    omega: Option<f64>,
    /// Fraction of each batch replaced by synthetic samples.
    #[arg(long)]
    replace_fraction: Option<f64>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, GaudaError> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = &self.seed_list {
            let seeds = parse_seed_list(s)?;
            cfg.studies.seeds = seeds.clone();
            cfg.seeds = seeds;
        }
        if let Some(p) = &self.policies {
            cfg.policies = parse_policies(p)?;
        }
        if let Some(w) = self.omega {
            cfg.gauda.omega = w;
        }
        if let Some(r) = self.replace_fraction {
            cfg.gauda.replace_fraction = r;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn configure_threads() -> Result<(), GaudaError> {
    let Ok(v) = std::env::var("GAUDA_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| GaudaError::Config(format!("GAUDA_THREADS must be a positive integer, got '{v}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| GaudaError::Config(e.to_string()))
}

fn run(cli: Cli) -> Result<(), GaudaError> {
    configure_threads()?;
    match cli.command {
        Command::PretrainGenerative(c) => {
            let cfg = c.load()?;
            let q = cmd_pretrain_generative(&cfg, &c.out, c.resume)?;
            println!(
                "autoencoder: image mse {:.5}, mask accuracy {:.4}, presence kept {:.4}",
                q.image_mse, q.mask_pixel_accuracy, q.presence_preserved
            );
            for w in &cfg.quality.omegas {
                if let Some(f) = q.mean_fidelity(*w) {
                    println!("fidelity at omega {w}: {f:.3}");
                }
            }
            println!(
                "mmd² real/real {:.4} ± {:.4}, real/synthetic {:.4} ± {:.4}",
                q.mmd_real_vs_real.mmd2, q.mmd_real_vs_real.std, q.mmd_images.mmd2, q.mmd_images.std
            );
            println!("synthetic-only / real-only ratio {:.3}", q.so_ro_ratio);
        }
        Command::ComparePolicies(c) => {
            let cfg = c.load()?;
            let report = cmd_compare_policies(&cfg, &c.out, c.resume)?;
            print!("{}", report.to_markdown());
        }
        Command::SuppStudies(c) => {
            let cfg = c.load()?;
            let r = cmd_supp_studies(&cfg, &c.out, c.resume)?;
            println!(
                "sampling: median gain {:+.2} pp, {} of {} seeds at +2 pp or more (reference {:+.1} pp)",
                r.sampling.median_delta_pp,
                r.sampling.clear_wins,
                r.sampling.seeds.len(),
                r.sampling.reference_delta_pp
            );
            println!("augmentation: median minority ratio {:.2}", r.augmentation.median_ratio);
        }
        Command::ShowConfig(c) => {
            println!("{}", serde_json::to_string_pretty(&c.load()?)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
