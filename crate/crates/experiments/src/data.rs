//! Dataset construction from an experiment config.

use teleport_core::models::{uniform_regression, Batch, Dataset};
use teleport_core::rng::{stream, streams};

use crate::config::{data_root, DatasetConfig};
use crate::error::{CoreContext, ExpError, Result};
use crate::idx;

/// Uniform [0, 1] inputs (`dims[0]` rows) and regression targets (`dims[1]` rows), one column per sample.
pub fn synth_dataset(dims: [usize; 2], count: usize, seed: u64) -> Result<Batch> {
    uniform_regression(dims[0], dims[1], count, &mut stream(seed, streams::DATA))
        .context("generating synthetic data")
}

/// The training set and, when the config asks for one, the held-out split.
pub fn load_dataset(cfg: &DatasetConfig, seed: u64) -> Result<(Dataset, Option<Dataset>)> {
    match cfg {
        DatasetConfig::Mnist { subset, split, .. }
        | DatasetConfig::Fashion { subset, split, .. } => {
            let dir = cfg
                .resolved_path(data_root().as_deref())
                .expect("IDX datasets have a path");
            let all = idx::load_dir(&dir)?.into_dataset()?;
            let n = subset.unwrap_or(all.len());
            if n > all.len() {
                return Err(ExpError::config(
                    dir.display().to_string(),
                    format!(
                        "subset of {n} samples requested from {} available",
                        all.len()
                    ),
                ));
            }
            let kept = idx::subset(&all, n, seed)?;
            let (train, test) = kept.split(*split).context("splitting the dataset")?;
            Ok((train, Some(test)))
        }
        DatasetConfig::Synthetic {
            dims,
            count,
            seed: data_seed,
            split,
        } => {
            let data = synth_dataset(*dims, *count, data_seed.unwrap_or(seed))?;
            match split {
                Some(s) => {
                    let (train, test) = data.split(*s).context("splitting the dataset")?;
                    Ok((train, Some(test)))
                }
                None => Ok((data, None)),
            }
        }
    }
}
