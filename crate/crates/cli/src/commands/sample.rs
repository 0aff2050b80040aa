//! `sample`: draw a stratified K-shot training set from a corpus.
//!
//! The corpus is first restricted to the pre-cutoff pool (setting `cutoff`,
//! default 2014-12-31, `none` to disable), then K reports are drawn so that
//! per-category positive counts track the pool's rates.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;

use radlabel_core::corpus::stratified_kshot;
use radlabel_core::defaults;

use crate::formats;
use crate::manifest::{sidecar_path, RunManifest};

use super::{training_pool, CommonOpts, Invocation};

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Corpus to sample from (JSON lines)
    #[arg(long, value_name = "FILE")]
    pub corpus: PathBuf,
    /// Number of reports to draw
    #[arg(long)]
    pub k: usize,
    /// Where to write the sampled corpus
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: CommonOpts,
}

pub fn run(args: &SampleArgs, invocation: &Invocation) -> Result<()> {
    let mut settings = args.common.settings()?;
    let mut manifest = RunManifest::new("sample", invocation.argv.clone());
    manifest.record_input(&args.corpus)?;

    let corpus = formats::load_corpus(&args.corpus)?;
    let cutoff = settings.cutoff("cutoff", Some(defaults::default_cutoff()))?;
    let pool = training_pool(&corpus, cutoff);

    let seed = args.common.seed;
    let sample = stratified_kshot(&pool, args.k, seed).context("sampling failed")?;
    if sample.degraded {
        eprintln!(
            "warning: some category missed its proportional positive count by more than one"
        );
    }
    formats::save_corpus(&sample.corpus, &args.out)?;
    formats::load_corpus(&args.out).context("validating the written sample")?;

    settings.note("corpus", args.corpus.display());
    settings.note("k", args.k);
    settings.note("seed", seed);
    settings.note("out", args.out.display());
    settings.note("pool", pool.len());
    settings.note("targets", join(&sample.targets));
    settings.note("achieved", join(&sample.achieved));
    settings.note("degraded", sample.degraded);
    manifest.seeds = vec![seed];
    manifest.config = settings.into_resolved();
    manifest.record_output(&args.out)?;
    manifest.save(&sidecar_path(&args.out))?;
    Ok(())
}

fn join(counts: &[usize]) -> String {
    counts
        .iter()
        .map(|c| c.to_string())
        .collect::<Vec<_>>()
        .join(",")
}
