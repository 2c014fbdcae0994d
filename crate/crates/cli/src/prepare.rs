use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use slk_core::dataset::{kcore_filter, load_interactions, save_split, split_dataset, Format};
use slk_core::DatasetSplit;

use crate::output::{new_output_dir, write_csv_rows, write_json};

#[derive(Debug, Clone)]
pub struct PrepareOptions {
    pub input: PathBuf,
    pub format: Format,
    pub kcore: usize,
    pub min_rating: f64,
    pub train_frac: f64,
    pub val_frac: f64,
    pub seed: u64,
}

/// Counts written next to a prepared split.
#[derive(Debug, Clone, Serialize)]
pub struct DatasetManifest {
    pub source: String,
    pub format: &'static str,
    pub kcore: usize,
    pub min_rating: f64,
    pub train_frac: f64,
    pub val_frac: f64,
    pub seed: u64,
    pub raw_records: usize,
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    pub density: f64,
    pub train_interactions: usize,
    pub validation_interactions: usize,
    pub test_interactions: usize,
}

pub fn prepare_split(opts: &PrepareOptions) -> Result<(DatasetSplit, DatasetManifest)> {
    let raw = load_interactions(&opts.input, opts.format)
        .with_context(|| format!("loading {}", opts.input.display()))?;
    let corpus = kcore_filter(&raw, opts.kcore, opts.min_rating)?;
    let split = split_dataset(&corpus, opts.train_frac, opts.val_frac, opts.seed)?;
    let manifest = DatasetManifest {
        source: opts.input.display().to_string(),
        format: match opts.format {
            Format::Tsv => "tsv",
            Format::Csv => "csv",
        },
        kcore: opts.kcore,
        min_rating: opts.min_rating,
        train_frac: opts.train_frac,
        val_frac: opts.val_frac,
        seed: opts.seed,
        raw_records: raw.len(),
        users: corpus.set.num_users(),
        items: corpus.set.num_items(),
        interactions: corpus.set.total_interactions(),
        density: corpus.set.density(),
        train_interactions: split.train.total_interactions(),
        validation_interactions: split.validation.total_interactions(),
        test_interactions: split.test.total_interactions(),
    };
    Ok((split, manifest))
}

/// Writes the split files plus `manifest.json` and `manifest.csv` into a new directory.
pub fn write_prepared(dir: &Path, split: &DatasetSplit, manifest: &DatasetManifest) -> Result<()> {
    save_split(dir, split)?;
    write_json(&dir.join("manifest.json"), manifest)?;
    write_csv_rows(&dir.join("manifest.csv"), std::slice::from_ref(manifest))
}

pub fn run(opts: &PrepareOptions, out: &Path) -> Result<DatasetManifest> {
    let (split, manifest) = prepare_split(opts)?;
    new_output_dir(out)?;
    write_prepared(out, &split, &manifest)?;
    Ok(manifest)
}
