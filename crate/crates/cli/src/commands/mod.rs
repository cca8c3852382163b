//! Subcommand implementations. Every command writes its outputs and a
//! resolved-config snapshot under `io.out_dir/<command>`.

use std::fs;
use std::path::{Path, PathBuf};

use ptnas::supernet::Supernet;
use ptnas::trainer::{cache_key, make_dataset, Dataset};

use crate::config::Config;
use crate::error::{CliError, CliResult};

pub mod analyze;
pub mod bench;
pub mod search;
pub mod select;
pub mod verify;

/// Creates `out_dir/<name>` and writes the config snapshot into it.
pub(crate) fn run_dir(cfg: &Config, name: &str) -> CliResult<PathBuf> {
    let dir = cfg.out_dir.join(name);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.toml"), cfg.snapshot())?;
    Ok(dir)
}

pub(crate) fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|source| CliError::Read { path: path.to_path_buf(), source })
}

/// The configured dataset, generated once and then read from
/// `out_dir/cache`.
pub(crate) fn dataset(cfg: &Config) -> CliResult<Dataset> {
    let key = cache_key(cfg.dataset_kind, cfg.dataset_n, cfg.classes, cfg.noise, cfg.dataset_seed);
    let path = cfg.out_dir.join("cache").join(format!("{key}.dataset"));
    if path.exists() {
        let data = Dataset::from_text(&read(&path)?)?;
        if data.cache_key() == key {
            return Ok(data);
        }
    }
    let data = make_dataset(cfg.dataset_kind, cfg.dataset_n, cfg.classes, cfg.noise, cfg.dataset_seed)?;
    fs::create_dir_all(path.parent().expect("cache dir"))?;
    fs::write(&path, data.to_text())?;
    Ok(data)
}

pub(crate) fn load_checkpoint(cfg: &Config, path: &Path) -> CliResult<Supernet> {
    let spec = cfg.spec()?;
    Ok(Supernet::from_checkpoint(&read(path)?, &spec)?)
}
