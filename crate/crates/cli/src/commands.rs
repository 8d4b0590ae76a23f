use std::path::{Path, PathBuf};

use suredn::data::{self, Augment, GrayImage, PatchRecipe};
use suredn::eval;
use suredn::loss::{Epsilon, NoiseModel, ProbeDist, SureConfig};
use suredn::model::{Denoiser, DenoiserConfig};
use suredn::train::{Checkpoint, LossKind, TrainConfig, Trainer};
use suredn::{selftest, RngStream, StreamKind};

use crate::config::FileConfig;
use crate::{
    Cli, CliError, Command, DenoiseArgs, EvalArgs, ModelArgs, NoiseArgs, PrepareArgs, SelftestArgs, TrainArgs,
};

type Result<T> = std::result::Result<T, CliError>;

pub fn run(cli: Cli) -> Result<()> {
    let file = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::PrepareData(a) => prepare_data(a, &file),
        Command::Train(a) => train(*a, &file),
        Command::Denoise(a) => denoise(a),
        Command::Eval(a) => evaluate(a, &file),
        Command::Noise(a) => noise(a, &file),
        Command::Selftest(a) => run_selftest(a),
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn prepare_data(a: PrepareArgs, file: &FileConfig) -> Result<()> {
    let defaults = PatchRecipe::default();
    let augment = match a.augment.or_else(|| file.data.augment.clone()) {
        Some(names) => names
            .iter()
            .map(|n| n.trim().parse())
            .collect::<suredn::Result<Vec<Augment>>>()?,
        None => defaults.augment,
    };
    let recipe = PatchRecipe {
        patch_size: a.patch_size.or(file.data.patch_size).unwrap_or(defaults.patch_size),
        stride: a.stride.or(file.data.stride).unwrap_or(defaults.stride),
        scales: a.scales.or_else(|| file.data.scales.clone()).unwrap_or(defaults.scales),
        augment,
    };
    recipe.validate()?;
    log::info!("effective config: {recipe:?}");

    let files = data::read_manifest(&a.manifest)?;
    if files.is_empty() {
        return Err(usage(format!("manifest {} lists no images", a.manifest.display())));
    }
    let images = files.iter().map(data::load_pgm).collect::<suredn::Result<Vec<_>>>()?;
    let patches = data::PatchSet::from_images(&images, &recipe)?;
    if patches.is_empty() {
        return Err(usage("no image is large enough for a single patch"));
    }
    data::write_patch_cache(&patches, &a.out)?;
    println!(
        "{} patches from {} images -> {}",
        patches.len(),
        images.len(),
        a.out.display()
    );
    Ok(())
}

fn model_config(a: &ModelArgs, file: &FileConfig) -> Result<DenoiserConfig> {
    let preset = a.preset.as_deref().or(file.model.preset.as_deref()).unwrap_or("full");
    let base = match preset {
        "full" => DenoiserConfig::FULL,
        "desk" => DenoiserConfig::DESK,
        other => return Err(usage(format!("unknown preset {other:?} (expected full or desk)"))),
    };
    let cfg = DenoiserConfig {
        depth: a.depth.or(file.model.depth).unwrap_or(base.depth),
        width: a.width.or(file.model.width).unwrap_or(base.width),
        ..base
    };
    cfg.validate()?;
    Ok(cfg)
}

fn sure_config(a: &TrainArgs, file: &FileConfig) -> Result<SureConfig> {
    let defaults = SureConfig::default();
    let Epsilon::RangeRelative { scale, floor } = defaults.epsilon else {
        unreachable!("default step is range-relative")
    };
    let epsilon = match a.epsilon.or(file.loss.epsilon) {
        Some(e) => Epsilon::Fixed(e),
        None => Epsilon::RangeRelative {
            scale: a.epsilon_scale.or(file.loss.epsilon_scale).unwrap_or(scale),
            floor: a.epsilon_floor.or(file.loss.epsilon_floor).unwrap_or(floor),
        },
    };
    let probe = match a.probe.as_deref().or(file.loss.probe.as_deref()) {
        None | Some("gaussian") => ProbeDist::Gaussian,
        Some("rademacher") => ProbeDist::Rademacher,
        Some(other) => {
            return Err(usage(format!(
                "unknown probe {other:?} (expected gaussian or rademacher)"
            )))
        }
    };
    let cfg = SureConfig {
        epsilon,
        probe,
        probes_per_sample: a.probes.or(file.loss.probes).unwrap_or(defaults.probes_per_sample),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn train(a: TrainArgs, file: &FileConfig) -> Result<()> {
    let noise = NoiseModel::from_8bit(a.sigma)?;
    let loss: LossKind = a
        .loss
        .as_deref()
        .or(file.train.loss.as_deref())
        .unwrap_or("sure")
        .parse()?;
    let t = &file.train;
    let mut cfg = TrainConfig::new(loss, noise);
    cfg.epochs = a.epochs.or(t.epochs).unwrap_or(cfg.epochs);
    cfg.batch_size = a.batch.or(t.batch).unwrap_or(cfg.batch_size);
    cfg.lr_initial = a.lr.or(t.lr).unwrap_or(cfg.lr_initial);
    cfg.lr_after_drop = a.lr_drop.or(t.lr_drop).unwrap_or(cfg.lr_after_drop);
    cfg.drop_epoch = a.drop_epoch.or(t.drop_epoch).unwrap_or(cfg.drop_epoch);
    cfg.seed = a.seed.or(file.seed).unwrap_or(0);
    cfg.sure = sure_config(&a, file)?;
    cfg.fixed_noise = a.fixed_noise || t.fixed_noise.unwrap_or(false);
    cfg.checkpoint_every = a.checkpoint_every.or(t.checkpoint_every);
    cfg.checkpoint_dir = a.checkpoint_dir.clone();
    if cfg.checkpoint_every.is_some() && cfg.checkpoint_dir.is_none() {
        return Err(usage("checkpoint_every needs --checkpoint-dir"));
    }
    cfg.log_path = Some(a.loss_log.clone().unwrap_or_else(|| a.out.with_extension("csv")));
    cfg.validate()?;
    let model_cfg = model_config(&a.model, file)?;
    log::info!("effective config: {model_cfg:?}");
    log::info!("effective config: {cfg:?}");

    if let Some(dir) = &cfg.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|source| suredn::Error::Io {
            path: dir.clone(),
            source,
        })?;
    }
    let patches = data::read_patch_cache(&a.patches)?;
    let mut trainer = match &a.resume {
        Some(path) => {
            let ck = Checkpoint::load_expecting(path, &model_cfg)?;
            log::info!("resuming from {} at epoch {}", path.display(), ck.epoch);
            Trainer::<f32>::resume(&ck, cfg)?
        }
        None => {
            let mut init = RngStream::named(cfg.seed, StreamKind::Init, 0);
            Trainer::new(Denoiser::init(model_cfg, &mut init)?, cfg)?
        }
    };
    trainer.run(&patches)?;
    trainer.checkpoint().save(&a.out)?;
    let last = trainer.log().last().map(|r| r.loss);
    println!(
        "trained {} epochs ({} steps), final loss {} -> {}",
        trainer.epoch(),
        trainer.step(),
        last.map_or("n/a".into(), |l| format!("{l:.6e}")),
        a.out.display()
    );
    Ok(())
}

fn load_model(path: &Path) -> Result<Denoiser<f32>> {
    Ok(Checkpoint::load(path)?.to_model()?)
}

fn denoise(a: DenoiseArgs) -> Result<()> {
    let model = load_model(&a.checkpoint)?;
    std::fs::create_dir_all(&a.out_dir).map_err(|source| suredn::Error::Io {
        path: a.out_dir.clone(),
        source,
    })?;
    for input in &a.images {
        let name = input
            .file_name()
            .ok_or_else(|| usage(format!("{} is not a file", input.display())))?;
        let noisy = data::load_pgm(input)?;
        let out = eval::denoise_image(&model, &noisy)?;
        let dest = a.out_dir.join(name);
        data::save_pgm(&out.image, &dest)?;
        log::info!("{} -> {} ({:.3} s)", input.display(), dest.display(), out.seconds);
    }
    println!("denoised {} image(s) -> {}", a.images.len(), a.out_dir.display());
    Ok(())
}

fn evaluate(a: EvalArgs, file: &FileConfig) -> Result<()> {
    let noise = NoiseModel::from_8bit(a.sigma)?;
    let seed = a.seed.or(file.seed).unwrap_or(0);
    let model = load_model(&a.checkpoint)?;
    let files: Vec<PathBuf> = match (&a.manifest, &a.clean) {
        (Some(m), _) => data::read_manifest(m)?,
        (None, Some(dir)) => data::list_pgm_files(dir)?,
        (None, None) => return Err(usage("either --clean or --manifest is required")),
    };
    let mut report = eval::evaluate_files(&model, &files, &noise, seed)?;
    report.model_id = a
        .checkpoint
        .file_name()
        .map_or_else(String::new, |n| n.to_string_lossy().into_owned());
    for (img, why) in &report.failures {
        log::warn!("{img}: {why}");
    }
    if let Some(path) = &a.csv {
        std::fs::write(path, report.to_csv()).map_err(|source| suredn::Error::Io {
            path: path.clone(),
            source,
        })?;
    }
    print!("{}", report.to_table());
    if report.rows.is_empty() {
        return Err(CliError::Core(suredn::Error::InvalidArgument(
            "no image could be evaluated".into(),
        )));
    }
    Ok(())
}

fn noise(a: NoiseArgs, file: &FileConfig) -> Result<()> {
    let model = NoiseModel::from_8bit(a.sigma)?;
    let seed = a.seed.or(file.seed).unwrap_or(0);
    let clean = data::load_pgm(&a.input)?;
    let mut rng = RngStream::named(seed, StreamKind::Noise, 0);
    let noisy = data::add_gaussian_noise(&clean.to_tensor::<f64>(), &model, &mut rng);
    let img = GrayImage::from_clipped(clean.width(), clean.height(), noisy.data().iter().copied())?;
    data::save_pgm(&img, &a.out)?;
    println!("{} + N(0, {}^2) -> {}", a.input.display(), a.sigma, a.out.display());
    Ok(())
}

fn run_selftest(a: SelftestArgs) -> Result<()> {
    let outcomes = selftest::run_all(a.quick)?;
    let mut failed = 0;
    for o in &outcomes {
        println!("{} {}: {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail);
        failed += usize::from(!o.passed);
    }
    if failed > 0 {
        return Err(CliError::SelftestFailed(failed));
    }
    Ok(())
}
