//! `synth`: generate a labeled corpus from a world description.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;

use radlabel_core::defaults;
use radlabel_core::synth::generate_synthetic_corpus;

use crate::formats;
use crate::manifest::{sidecar_path, RunManifest};

use super::{CommonOpts, Invocation};

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// World description JSON; omitted = the built-in liver world
    #[arg(long, value_name = "FILE")]
    pub spec: Option<PathBuf>,
    /// Where to write the corpus (JSON lines)
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: CommonOpts,
}

pub fn run(args: &SynthArgs, invocation: &Invocation) -> Result<()> {
    let mut settings = args.common.settings()?;
    let mut manifest = RunManifest::new("synth", invocation.argv.clone());

    let spec = match &args.spec {
        Some(path) => {
            manifest.record_input(path)?;
            settings.note("spec", path.display());
            formats::load_synth_spec(path)?
        }
        None => {
            settings.note("spec", "builtin");
            defaults::default_synth_spec()
        }
    };
    spec.validate().context("invalid world description")?;

    let seed = args.common.seed;
    let corpus = generate_synthetic_corpus(&spec, seed).context("generating corpus")?;
    formats::save_corpus(&corpus, &args.out)?;
    formats::load_corpus(&args.out).context("validating the written corpus")?;

    settings.note("seed", seed);
    settings.note("out", args.out.display());
    settings.note("reports", corpus.len());
    manifest.seeds = vec![seed];
    manifest.config = settings.into_resolved();
    manifest.record_output(&args.out)?;
    manifest.save(&sidecar_path(&args.out))?;
    Ok(())
}
