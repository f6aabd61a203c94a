//! The `gabor` command line: one subcommand per pipeline stage, each writing
//! its outputs and a replayable manifest into `--out`.

pub mod commands;
pub mod config;
pub mod manifest;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use gabor_core::Variant;

use crate::config::RunConfig;
use crate::manifest::{RunManifest, MANIFEST_NAME};

#[derive(Debug, Parser)]
#[command(
    name = "gabor",
    version,
    about = "Learn, benchmark and generate Gabor bases for image patches"
)]
pub struct Cli {
    /// Base seed; overrides `seed` in the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; created if missing.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum Command {
    /// Render a synthetic dead-leaves corpus as 16-bit PNG files.
    SynthCorpus,
    /// Whiten a directory of images and cache training and held-out patches.
    Preprocess { corpus: PathBuf },
    /// Adapt a Gabor basis to a patch cache.
    Learn {
        cache: PathBuf,
        /// Starting basis; a uniform random basis when omitted.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Interchange the σx and σy learning rates.
        #[arg(long)]
        swap_rates: bool,
    },
    /// Sparseness-versus-error curves of one or more bases.
    Bench {
        /// Held-out patch cache.
        #[arg(long)]
        patches: PathBuf,
        #[arg(required = true)]
        bases: Vec<PathBuf>,
    },
    /// Sample a basis from an analytical model.
    Generate {
        /// Model variant (model1, model2, model3); overrides the config.
        #[arg(long)]
        variant: Option<Variant>,
        /// Fit report to take the model parameters from.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Fit marginals and correlations to a basis.
    Fit { basis: PathBuf },
    /// Run the unconstrained learner from a basis and measure the drift.
    Probe {
        basis: PathBuf,
        #[arg(long)]
        patches: PathBuf,
    },
    /// Re-run the command recorded in a manifest.
    Replay { manifest: PathBuf },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SynthCorpus => "synth-corpus",
            Command::Preprocess { .. } => "preprocess",
            Command::Learn { .. } => "learn",
            Command::Bench { .. } => "bench",
            Command::Generate { .. } => "generate",
            Command::Fit { .. } => "fit",
            Command::Probe { .. } => "probe",
            Command::Replay { .. } => "replay",
        }
    }

    pub fn inputs(&self) -> Vec<PathBuf> {
        match self {
            Command::SynthCorpus => vec![],
            Command::Preprocess { corpus } => vec![corpus.clone()],
            Command::Learn { cache, init, .. } => {
                std::iter::once(cache.clone()).chain(init.clone()).collect()
            }
            Command::Bench { patches, bases } => std::iter::once(patches.clone())
                .chain(bases.iter().cloned())
                .collect(),
            Command::Generate { report, .. } => report.iter().cloned().collect(),
            Command::Fit { basis } => vec![basis.clone()],
            Command::Probe { basis, patches } => vec![basis.clone(), patches.clone()],
            Command::Replay { manifest } => vec![manifest.clone()],
        }
    }

    /// The same command with every input path made absolute.
    fn absolute(&self) -> Result<Self> {
        let abs = |p: &PathBuf| {
            std::path::absolute(p).with_context(|| format!("resolving {}", p.display()))
        };
        let opt = |p: &Option<PathBuf>| p.as_ref().map(abs).transpose();
        Ok(match self {
            Command::SynthCorpus => Command::SynthCorpus,
            Command::Preprocess { corpus } => Command::Preprocess {
                corpus: abs(corpus)?,
            },
            Command::Learn {
                cache,
                init,
                swap_rates,
            } => Command::Learn {
                cache: abs(cache)?,
                init: opt(init)?,
                swap_rates: *swap_rates,
            },
            Command::Bench { patches, bases } => Command::Bench {
                patches: abs(patches)?,
                bases: bases.iter().map(abs).collect::<Result<_>>()?,
            },
            Command::Generate { variant, report } => Command::Generate {
                variant: *variant,
                report: opt(report)?,
            },
            Command::Fit { basis } => Command::Fit { basis: abs(basis)? },
            Command::Probe { basis, patches } => Command::Probe {
                basis: abs(basis)?,
                patches: abs(patches)?,
            },
            Command::Replay { manifest } => Command::Replay {
                manifest: abs(manifest)?,
            },
        })
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let Some(out) = cli.out else {
        bail!("--out is required");
    };
    if let Command::Replay { manifest } = &cli.command {
        if cli.seed.is_some() || cli.config.is_some() {
            bail!("replay takes its seed and configuration from the manifest");
        }
        let m = RunManifest::read(manifest)?;
        if matches!(m.command, Command::Replay { .. }) {
            bail!(
                "manifest {} records a replay, not a pipeline command",
                manifest.display()
            );
        }
        m.config.validate().context("manifest configuration")?;
        return run_recorded(&m.command, &m.config, m.seed, &out);
    }
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let seed = cfg.seed;
    run_recorded(&cli.command.absolute()?, &cfg, seed, &out)
}

/// Runs `command` into `out` and writes the manifest next to its outputs.
pub fn run_recorded(command: &Command, cfg: &RunConfig, seed: u64, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let stale = out.join(MANIFEST_NAME);
    if stale.exists() {
        std::fs::remove_file(&stale).with_context(|| format!("removing {}", stale.display()))?;
    }
    let outputs = commands::execute(command, cfg, seed, out)
        .with_context(|| format!("{} failed", command.name()))?;
    RunManifest::new(command.clone(), cfg.clone(), seed, outputs).write(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arguments_parse() {
        let cli = Cli::try_parse_from([
            "gabor",
            "learn",
            "c.csv",
            "--swap-rates",
            "--seed",
            "3",
            "--out",
            "o",
        ])
        .unwrap();
        assert_eq!(cli.seed, Some(3));
        assert_eq!(
            cli.command,
            Command::Learn {
                cache: "c.csv".into(),
                init: None,
                swap_rates: true
            }
        );
        let cli = Cli::try_parse_from(["gabor", "generate", "--variant", "model2", "--out", "o"])
            .unwrap();
        assert!(matches!(
            cli.command,
            Command::Generate {
                variant: Some(Variant::Model2),
                ..
            }
        ));
        assert!(Cli::try_parse_from(["gabor", "bench", "--patches", "p.csv"]).is_err());
    }

    #[test]
    fn command_round_trips_through_toml() {
        #[derive(Serialize, Deserialize)]
        struct Wrap {
            command: Command,
        }
        let cmd = Command::Bench {
            patches: "/p.csv".into(),
            bases: vec!["/a.csv".into(), "/a.csv".into()],
        };
        let text = toml::to_string(&Wrap {
            command: cmd.clone(),
        })
        .unwrap();
        assert_eq!(toml::from_str::<Wrap>(&text).unwrap().command, cmd);
        assert_eq!(cmd.inputs().len(), 3);
    }
}
