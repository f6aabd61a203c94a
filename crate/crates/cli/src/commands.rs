//! Implementations of the subcommands. Each returns the names of the files it
//! wrote into the output directory.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use log::{info, warn};
use serde::Serialize;

use gabor_core::benchmark::{error_at_sparseness, lambda_sweep};
use gabor_core::corpus::dead_leaves_corpus;
use gabor_core::fitstats::{
    export_histograms, filter_for_stats, fit_report, write_histograms_csv, write_scatter_csv,
};
use gabor_core::genmodel::generate_basis;
use gabor_core::imageio::{
    load_grayscale, sample_patches_with, save_grayscale16, whiten, CachedPatches,
};
use gabor_core::learning::{em_learn, stability_probe};
use gabor_core::mosaic::write_mosaic;
use gabor_core::rng::atom_stream;
use gabor_core::{GaborBasis, GenModelSpec, PatchBatch, RawImage};

use crate::config::RunConfig;
use crate::manifest::MANIFEST_NAME;
use crate::Command;

/// Seed for an independent purpose `tag` derived from the run seed.
pub fn sub_seed(seed: u64, tag: u64) -> u64 {
    seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

pub fn execute(command: &Command, cfg: &RunConfig, seed: u64, out: &Path) -> Result<Vec<String>> {
    let mut w = Outputs {
        dir: out.to_path_buf(),
        names: vec![],
    };
    match command {
        Command::SynthCorpus => synth_corpus(cfg, seed, &mut w)?,
        Command::Preprocess { corpus } => preprocess(corpus, cfg, seed, &mut w)?,
        Command::Learn {
            cache,
            init,
            swap_rates,
        } => learn(cache, init.as_deref(), *swap_rates, cfg, seed, &mut w)?,
        Command::Bench { patches, bases } => bench(patches, bases, cfg, &mut w)?,
        Command::Generate { variant, report } => {
            generate(*variant, report.as_deref(), cfg, seed, &mut w)?
        }
        Command::Fit { basis } => fit(basis, cfg, &mut w)?,
        Command::Probe { basis, patches } => probe(basis, patches, cfg, seed, &mut w)?,
        Command::Replay { .. } => bail!("replay is handled before dispatch"),
    }
    Ok(w.names)
}

struct Outputs {
    dir: PathBuf,
    names: Vec<String>,
}

impl Outputs {
    fn path(&mut self, name: &str) -> PathBuf {
        self.names.push(name.to_string());
        self.dir.join(name)
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.path(name);
        let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        Ok(BufWriter::new(f))
    }

    fn toml<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut f = self.create(name)?;
        f.write_all(toml::to_string(value)?.as_bytes())?;
        Ok(f.flush()?)
    }

    fn basis(&mut self, name: &str, basis: &GaborBasis) -> Result<()> {
        let mut f = self.create(name)?;
        basis.write_csv(&mut f)?;
        Ok(f.flush()?)
    }
}

fn read_basis(path: &Path) -> Result<GaborBasis> {
    let f = File::open(path).with_context(|| format!("opening basis {}", path.display()))?;
    GaborBasis::read_csv(BufReader::new(f))
        .with_context(|| format!("reading basis {}", path.display()))
}

fn read_patches(path: &Path, cfg: &RunConfig) -> Result<PatchBatch> {
    let f = File::open(path).with_context(|| format!("opening patch cache {}", path.display()))?;
    let batch = PatchBatch::read_csv(BufReader::new(f))
        .with_context(|| format!("reading patch cache {}", path.display()))?;
    ensure!(
        batch.patch_size() == cfg.pipeline.patch_size,
        "patch cache {} holds {}-pixel patches but pipeline.patch_size is {}",
        path.display(),
        batch.patch_size(),
        cfg.pipeline.patch_size
    );
    Ok(batch)
}

fn synth_corpus(cfg: &RunConfig, seed: u64, w: &mut Outputs) -> Result<()> {
    let images = dead_leaves_corpus(&cfg.corpus.leaves, cfg.corpus.count, seed)?;
    for (i, img) in images.iter().enumerate() {
        save_grayscale16(img, w.path(&format!("image_{i:03}.png")))?;
    }
    info!("wrote {} images", images.len());
    Ok(())
}

fn preprocess(corpus: &Path, cfg: &RunConfig, seed: u64, w: &mut Outputs) -> Result<()> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(corpus)
        .with_context(|| format!("listing corpus {}", corpus.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.file_name().is_some_and(|n| n != MANIFEST_NAME))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("corpus {} has no input files (0 inputs)", corpus.display());
    }
    let mut white: Vec<RawImage> = vec![];
    let mut skipped = vec![];
    for p in &paths {
        match load_grayscale(p).and_then(|img| whiten(&img, &cfg.pipeline)) {
            Ok(img)
                if img.width() >= cfg.pipeline.patch_size
                    && img.height() >= cfg.pipeline.patch_size =>
            {
                white.push(img)
            }
            Ok(_) => skipped.push((p.clone(), "smaller than one patch".to_string())),
            Err(e) => skipped.push((p.clone(), e.to_string())),
        }
    }
    for (p, why) in &skipped {
        warn!("skipped {}: {why}", p.display());
    }
    info!(
        "{} of {} inputs used, {} skipped",
        white.len(),
        paths.len(),
        skipped.len()
    );
    if white.is_empty() {
        bail!(
            "none of the {} inputs in {} could be used",
            paths.len(),
            corpus.display()
        );
    }
    let p = cfg.pipeline.patch_size;
    let train = sample_patches_with(
        &white,
        p,
        cfg.preprocess.train_patches,
        &mut atom_stream(seed, 0),
    )?;
    let test = sample_patches_with(
        &white,
        p,
        cfg.preprocess.test_patches,
        &mut atom_stream(seed, 1),
    )?;
    for (name, batch) in [("train.csv", &train), ("test.csv", &test)] {
        let mut f = w.create(name)?;
        batch.write_csv(&mut f)?;
        f.flush()?;
    }
    let mut f = w.create("skipped.txt")?;
    for (p, why) in &skipped {
        writeln!(f, "{}\t{why}", p.display())?;
    }
    Ok(f.flush()?)
}

fn learn(
    cache: &Path,
    init: Option<&Path>,
    swap_rates: bool,
    cfg: &RunConfig,
    seed: u64,
    w: &mut Outputs,
) -> Result<()> {
    let patches = read_patches(cache, cfg)?;
    let p = cfg.pipeline.patch_size;
    let init = match init {
        Some(path) => read_basis(path)?,
        None => GaborBasis::uniform_random(p, cfg.generate.scale, seed)?,
    };
    ensure!(
        init.patch_size() == p,
        "initial basis has patch size {}, expected {p}",
        init.patch_size()
    );
    let mut lcfg = cfg.learning.clone();
    if swap_rates {
        lcfg.eta = lcfg.eta.swap_sigma();
    }
    let mut stream = CachedPatches::new(patches, sub_seed(seed, 1))?;
    let (basis, trace) = em_learn(&mut stream, &cfg.pipeline, &cfg.inference, &lcfg, &init)?;
    w.basis("init.csv", &init)?;
    w.basis("basis.csv", &basis)?;
    for (it, atoms) in &trace.snapshots {
        let snap = GaborBasis::new(atoms.clone(), basis.scale(), p)?;
        w.basis(&format!("basis_iter_{it:04}.csv"), &snap)?;
    }
    let mut f = w.create("trace.csv")?;
    trace.write_csv(&mut f)?;
    f.flush()?;
    write_mosaic(&basis.render(), &w.path("mosaic.png"))?;
    info!(
        "learned {} atoms in {} iterations",
        basis.len(),
        trace.records.len()
    );
    Ok(())
}

#[derive(Serialize)]
struct BenchRow<'a> {
    basis: usize,
    file: &'a str,
    lambda: f64,
    mean_ratio: f64,
    mean_error: f64,
}

#[derive(Serialize)]
struct MatchedRow<'a> {
    basis: usize,
    file: &'a str,
    level: f64,
    error: Option<f64>,
}

fn bench(patches: &Path, bases: &[PathBuf], cfg: &RunConfig, w: &mut Outputs) -> Result<()> {
    let held = read_patches(patches, cfg)?;
    let mut curves = csv::Writer::from_writer(w.create("bench.csv")?);
    let mut matched = csv::Writer::from_writer(w.create("matched.csv")?);
    for (i, path) in bases.iter().enumerate() {
        let basis = read_basis(path)?;
        let name = path.display().to_string();
        let curve = lambda_sweep(&basis.render(), &held, &cfg.bench.lambdas, &cfg.inference)?;
        for pt in &curve {
            curves.serialize(BenchRow {
                basis: i,
                file: &name,
                lambda: pt.lambda,
                mean_ratio: pt.mean_ratio,
                mean_error: pt.mean_error,
            })?;
        }
        for &level in &cfg.bench.levels {
            let error = error_at_sparseness(&curve, level);
            if error.is_none() {
                warn!("{name}: sparseness level {level} lies outside the λ sweep");
            }
            matched.serialize(MatchedRow {
                basis: i,
                file: &name,
                level,
                error,
            })?;
        }
        info!("benchmarked {name}");
    }
    curves.flush()?;
    matched.flush()?;
    Ok(())
}

fn generate(
    variant: Option<gabor_core::Variant>,
    report: Option<&Path>,
    cfg: &RunConfig,
    seed: u64,
    w: &mut Outputs,
) -> Result<()> {
    let variant = variant.unwrap_or(cfg.generate.variant);
    let spec = match report {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading fit report {}", path.display()))?;
            GenModelSpec::from_report(&gabor_core::fitstats::FitReport::from_toml(&text)?, variant)?
        }
        None => GenModelSpec::published(variant),
    };
    let basis = generate_basis(&spec, cfg.pipeline.patch_size, cfg.generate.scale, seed)?;
    w.basis("basis.csv", &basis)?;
    w.toml("model.toml", &spec)?;
    write_mosaic(&basis.render(), &w.path("mosaic.png"))?;
    info!("generated {} atoms from {variant:?}", basis.len());
    Ok(())
}

fn fit(basis: &Path, cfg: &RunConfig, w: &mut Outputs) -> Result<()> {
    let basis = read_basis(basis)?;
    let kept = filter_for_stats(&basis);
    println!(
        "retained {} of {} atoms with sigma_x <= 1",
        kept.len(),
        basis.len()
    );
    let report = fit_report(&basis)?;
    for (name, f) in [
        ("sigma_x", &report.sigma_x),
        ("sigma_y", &report.sigma_y),
        ("lambda", &report.lambda),
    ] {
        if f.degenerate {
            warn!("fit for {name} is degenerate: {:?}", f.fit);
        }
    }
    let mut f = w.create("fit_report.toml")?;
    f.write_all(report.to_toml()?.as_bytes())?;
    f.flush()?;
    let mut f = w.create("histograms.csv")?;
    write_histograms_csv(&export_histograms(&kept, cfg.fit.bins), &mut f)?;
    f.flush()?;
    let mut f = w.create("scatter.csv")?;
    write_scatter_csv(&kept, &mut f)?;
    Ok(f.flush()?)
}

#[derive(Serialize)]
struct DriftReport {
    iterations: usize,
    drift: f64,
}

fn probe(basis: &Path, patches: &Path, cfg: &RunConfig, seed: u64, w: &mut Outputs) -> Result<()> {
    let basis = read_basis(basis)?;
    ensure!(
        basis.patch_size() == cfg.pipeline.patch_size,
        "basis has patch size {}, expected {}",
        basis.patch_size(),
        cfg.pipeline.patch_size
    );
    let mut stream = CachedPatches::new(read_patches(patches, cfg)?, sub_seed(seed, 2))?;
    let (end, drift) = stability_probe(
        &basis,
        &mut stream,
        &cfg.pipeline,
        &cfg.inference,
        &cfg.baseline,
    )?;
    println!("drift {drift}");
    w.toml(
        "drift.toml",
        &DriftReport {
            iterations: cfg.baseline.iterations,
            drift,
        },
    )?;
    write_mosaic(&basis.render(), &w.path("before.png"))?;
    write_mosaic(&end, &w.path("after.png"))?;
    Ok(())
}
