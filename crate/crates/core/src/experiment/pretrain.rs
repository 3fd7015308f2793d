use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::prepare_dataset;
use crate::autoencoder::{train_autoencoders, AeConfig, AeDims, AeReport, PairedAutoencoder, PairedSample};
use crate::data::Example;
use crate::ensemble::{EnsembleConfig, EnsembleModel, Task};
use crate::error::{GaudaError, Result};
use crate::generative::{GenerativeStack, PairGenerator};
use crate::metrics::{kernel_mmd, ro_so_protocol, MmdEstimate, RoSo};
use crate::numeric::{RngStream, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidelityRow {
    pub omega: f64,
    pub class: usize,
    /// Fraction of conditional samples whose mask contains the class.
    pub fidelity: f64,
    pub samples: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QualityReport {
    pub image_mse: f64,
    pub mask_pixel_accuracy: f64,
    pub presence_preserved: f64,
    pub diffusion_final_loss: f64,
    pub fidelity: Vec<FidelityRow>,
    /// Two disjoint real subsets; should be indistinguishable from zero.
    pub mmd_real_vs_real: MmdEstimate,
    /// Real against unconditional synthetic images.
    pub mmd_images: MmdEstimate,
    /// The same comparison on joint latents.
    pub mmd_latents: MmdEstimate,
    pub ro_so: RoSo,
    pub so_ro_ratio: f64,
}

impl QualityReport {
    pub fn fidelity_at(&self, omega: f64, class: usize) -> Option<f64> {
        self.fidelity
            .iter()
            .find(|r| r.omega == omega && r.class == class)
            .map(|r| r.fidelity)
    }

    /// Mean fidelity over the non-background classes.
    pub fn mean_fidelity(&self, omega: f64) -> Option<f64> {
        let v: Vec<f64> = self
            .fidelity
            .iter()
            .filter(|r| r.omega == omega && r.class > 0)
            .map(|r| r.fidelity)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

pub fn generative_dir(out: &Path) -> PathBuf {
    out.join("generative")
}

fn sample_dims(first: &PairedSample, latent_dim: usize) -> AeDims {
    AeDims {
        channels: first.channels(),
        height: first.height(),
        width: first.width(),
        classes: first.num_classes(),
        latent_dim,
    }
}

/// Trains (or, with `resume`, reloads) the autoencoders and the denoiser,
/// one stage at a time so a failure keeps the finished stages on disk.
pub fn train_or_load_stack(cfg: &ExperimentConfig, out: &Path, resume: bool) -> Result<(GenerativeStack, AeReport, f64)> {
    let data = prepare_dataset(cfg, out)?;
    let train = data.subset(&data.split.train);
    let first = train.first().ok_or_else(|| GaudaError::invalid("empty training split"))?;
    let dir = generative_dir(out);
    let ae_dir = dir.join("autoencoder");
    let report_path = dir.join("autoencoder_report.json");
    let mut rng = RngStream::new(cfg.stack_seed, 0);
    let stack_cfg = &cfg.stack;

    let (ae, ae_report) = if resume && report_path.exists() {
        log::info!("reusing autoencoders in {}", ae_dir.display());
        (
            PairedAutoencoder::load(&ae_dir)?,
            serde_json::from_str(&fs::read_to_string(&report_path)?)?,
        )
    } else {
        fs::create_dir_all(&ae_dir)?;
        let ae_cfg = AeConfig {
            latent_dim: stack_cfg.latent_dim,
            ..stack_cfg.autoencoder.clone()
        };
        let dims = sample_dims(first, stack_cfg.latent_dim);
        let (ae, report) = train_autoencoders(&train, dims, &ae_cfg, &mut rng.derive("autoencoder"), Some(&ae_dir))?;
        ae.save(&ae_dir)?;
        fs::write(&report_path, serde_json::to_string(&report)?)?;
        (ae, report)
    };

    let curve_path = dir.join("diffusion_curve.csv");
    if resume && dir.join("stack.json").exists() {
        log::info!("reusing denoiser in {}", dir.display());
        let stack = GenerativeStack::load(&dir)?;
        let last = fs::read_to_string(&curve_path)
            .ok()
            .and_then(|s| s.lines().last().and_then(|l| l.split(',').nth(1)?.parse().ok()))
            .unwrap_or(f64::NAN);
        return Ok((stack, ae_report, last));
    }
    let (stack, report) = GenerativeStack::pretrain_diffusion(ae, ae_report.clone(), &train, stack_cfg, &mut rng)?;
    stack.save(&dir)?;
    let mut curve = String::from("step,loss\n");
    for (i, l) in report.diffusion_curve.iter().enumerate() {
        curve.push_str(&format!("{},{l}\n", i + 1));
    }
    fs::write(&curve_path, curve)?;
    let last = report.diffusion_curve.last().copied().unwrap_or(f64::NAN);
    Ok((stack, ae_report, last))
}

fn image_rows(samples: &[&PairedSample]) -> Result<Tensor> {
    Tensor::from_rows(&samples.iter().map(|s| s.image().data().to_vec()).collect::<Vec<_>>())
}

/// Plain uniform-batch ensemble training used by the cross-evaluation.
pub fn fit_plain(
    task: Task,
    examples: &[Example],
    ens: &EnsembleConfig,
    steps: usize,
    batch: usize,
    rng: &mut RngStream,
) -> Result<EnsembleModel> {
    let dim = examples.first().map_or(0, |e| e.input.len());
    let mut model = EnsembleModel::new(task, dim, ens, &rng.derive("init"))?;
    let mut draws: Vec<RngStream> = (0..model.k()).map(|i| rng.derive("draw").split(i as u64)).collect();
    let mut dropout: Vec<RngStream> = (0..model.k()).map(|i| rng.derive("dropout").split(i as u64)).collect();
    for _ in 0..steps {
        for i in 0..model.k() {
            let b: Vec<&Example> = (0..batch).map(|_| &examples[draws[i].below(examples.len())]).collect();
            model.member_step(i, &b, &mut dropout[i])?;
        }
    }
    Ok(model)
}

/// Conditional fidelity per class for each guidance strength.
pub fn conditional_fidelity(
    generator: &dyn PairGenerator,
    classes: usize,
    omegas: &[f64],
    samples: usize,
    rng: &RngStream,
) -> Result<Vec<FidelityRow>> {
    let mut rows = Vec::new();
    for (oi, &omega) in omegas.iter().enumerate() {
        for class in 0..classes {
            let mut r = rng.split((oi * classes + class) as u64);
            let out = generator.generate(Some(class), omega, samples, &mut r)?;
            let hits = out.iter().filter(|s| s.contains(class)).count();
            rows.push(FidelityRow {
                omega,
                class,
                fidelity: hits as f64 / out.len().max(1) as f64,
                samples: out.len(),
            });
        }
    }
    Ok(rows)
}

/// Trains the generative stack and writes `generative/quality.json` and
/// `generative/fidelity.csv`.
pub fn cmd_pretrain_generative(cfg: &ExperimentConfig, out: &Path, resume: bool) -> Result<QualityReport> {
    cfg.validate()?;
    let (stack, ae_report, final_loss) = train_or_load_stack(cfg, out, resume)?;
    let data = prepare_dataset(cfg, out)?;
    let train = data.subset(&data.split.train);
    let q = &cfg.quality;
    let root = RngStream::new(cfg.stack_seed, 0).derive("quality");

    let fidelity = conditional_fidelity(
        &stack,
        stack.num_classes(),
        &q.omegas,
        q.fidelity_samples,
        &root.derive("fidelity"),
    )?;

    let n = q.mmd_samples.min(train.len() / 2);
    let mut order: Vec<usize> = (0..train.len()).collect();
    root.derive("mmd-split").shuffle(&mut order);
    let half_a: Vec<&PairedSample> = order[..n].iter().map(|&i| train[i]).collect();
    let half_b: Vec<&PairedSample> = order[n..2 * n].iter().map(|&i| train[i]).collect();
    let mmd_real_vs_real = kernel_mmd(&image_rows(&half_a)?, &image_rows(&half_b)?, q.mmd_subsets)?;
    let synth = stack.generate(None, 0.0, n, &mut root.derive("mmd-synth"))?;
    let synth_refs: Vec<&PairedSample> = synth.iter().collect();
    let mmd_images = kernel_mmd(&image_rows(&half_a)?, &image_rows(&synth_refs)?, q.mmd_subsets)?;
    let mmd_latents = kernel_mmd(&stack.encode(&half_a)?, &stack.encode(&synth_refs)?, q.mmd_subsets)?;

    let task = crate::trainer::TrainingData::from_shapes(&data).task;
    let real_train = data.examples(&data.split.train);
    let real_test = data.examples(&data.split.test);
    let ens = cfg.ensemble.clone();
    let (steps, batch) = (q.ro_so_steps, cfg.gauda.batch);
    let ro_so = ro_so_protocol(
        &stack as &dyn PairGenerator,
        &real_train,
        &real_test,
        q.ro_so_samples,
        &mut root.derive("ro-so"),
        |examples, rng| fit_plain(task, examples, &ens, steps, batch, rng),
    )?;

    let report = QualityReport {
        image_mse: ae_report.image_mse,
        mask_pixel_accuracy: ae_report.mask_pixel_accuracy,
        presence_preserved: ae_report.presence_preserved,
        diffusion_final_loss: final_loss,
        fidelity,
        mmd_real_vs_real,
        mmd_images,
        mmd_latents,
        ro_so,
        so_ro_ratio: ro_so.synthetic_only / ro_so.real_only,
    };
    let dir = generative_dir(out);
    fs::write(dir.join("quality.json"), serde_json::to_string_pretty(&report)?)?;
    let mut w = csv::Writer::from_path(dir.join("fidelity.csv")).map_err(|e| GaudaError::Format(e.to_string()))?;
    for r in &report.fidelity {
        w.serialize(r).map_err(|e| GaudaError::Format(e.to_string()))?;
    }
    w.flush()?;
    Ok(report)
}
