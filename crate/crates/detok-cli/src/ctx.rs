//! Lazily-loaded run context shared by the subcommands.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use detok::container;
use detok::corpus::{BigramCounts, DocSep, UnigramCounts};
use detok::normstats::{sigma_table, SigmaMode, SigmaTable};
use detok::weights::{load_first_layer, FirstLayerParams};
use detok::{FoldedModel, Tokenizer};

use crate::util;

pub struct RunCtx {
    pub model_path: Option<PathBuf>,
    pub vocab_path: Option<PathBuf>,
    pub merges_path: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub config_hash: String,
    pub timestamp: bool,

    params: Option<FirstLayerParams>,
    folded: Option<FoldedModel>,
    tokenizer: Option<Tokenizer>,
    table: Option<SigmaTable>,
    source_hash: Option<String>,
}

impl RunCtx {
    pub fn new(
        model_path: Option<PathBuf>,
        vocab_path: Option<PathBuf>,
        merges_path: Option<PathBuf>,
        out_dir: PathBuf,
        seed: u64,
        config_hash: String,
        timestamp: bool,
    ) -> Self {
        RunCtx {
            model_path,
            vocab_path,
            merges_path,
            out_dir,
            seed,
            config_hash,
            timestamp,
            params: None,
            folded: None,
            tokenizer: None,
            table: None,
            source_hash: None,
        }
    }

    /// Already-loaded views; commands call the loading methods first.
    pub fn params_ref(&self) -> Option<&FirstLayerParams> {
        self.params.as_ref()
    }

    pub fn folded_ref(&self) -> Option<&FoldedModel> {
        self.folded.as_ref()
    }

    pub fn sigma_table_ref(&self) -> Option<&SigmaTable> {
        self.table.as_ref()
    }

    pub fn tokenizer_ref(&self) -> Option<&Tokenizer> {
        self.tokenizer.as_ref()
    }

    pub fn params(&mut self) -> Result<&FirstLayerParams> {
        if self.params.is_none() {
            let path = self
                .model_path
                .clone()
                .context("this command needs --model")?;
            let params = load_first_layer(&path)
                .with_context(|| format!("loading {}", path.display()))?;
            self.params = Some(params);
        }
        Ok(self.params.as_ref().unwrap())
    }

    fn source_hash(&mut self) -> Result<String> {
        if self.source_hash.is_none() {
            let path = self
                .model_path
                .clone()
                .context("this command needs --model")?;
            self.source_hash = Some(container::file_sha256(&path)?);
        }
        Ok(self.source_hash.clone().unwrap())
    }

    /// Folded heads, reusing the on-disk cache when its content hash matches.
    pub fn folded(&mut self) -> Result<&FoldedModel> {
        if self.folded.is_none() {
            let hash = self.source_hash()?;
            let dims = self.params()?.dims;
            let cached = util::cache_dir().map(|d| d.join(format!("folded-{}.safetensors", &hash[..12])));
            let model = match &cached {
                Some(path) if path.exists() => {
                    match FoldedModel::load(path, dims, Some(&hash)) {
                        Ok(m) => m,
                        Err(_) => self.fold_and_cache(&hash, cached.as_deref())?,
                    }
                }
                _ => self.fold_and_cache(&hash, cached.as_deref())?,
            };
            self.folded = Some(model);
        }
        Ok(self.folded.as_ref().unwrap())
    }

    fn fold_and_cache(&mut self, hash: &str, cache_path: Option<&Path>) -> Result<FoldedModel> {
        let model = FoldedModel::from_params(self.params()?);
        if let Some(path) = cache_path {
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).ok();
            }
            model.save(path, hash)?;
        }
        Ok(model)
    }

    /// Write the folded cache explicitly (the `fold` subcommand).
    pub fn save_folded(&mut self, out: &Path) -> Result<PathBuf> {
        let hash = self.source_hash()?;
        let path = out.join(format!("folded-{}.safetensors", &hash[..12]));
        let model = FoldedModel::from_params(self.params()?);
        std::fs::create_dir_all(out).ok();
        model.save(&path, &hash)?;
        self.folded = Some(model);
        Ok(path)
    }

    pub fn tokenizer(&mut self) -> Result<&Tokenizer> {
        if self.tokenizer.is_none() {
            let vocab = self
                .vocab_path
                .clone()
                .context("this command needs --vocab")?;
            let merges = self
                .merges_path
                .clone()
                .context("this command needs --merges")?;
            self.tokenizer = Some(Tokenizer::from_files(&vocab, &merges)?);
        }
        Ok(self.tokenizer.as_ref().unwrap())
    }

    /// Full-vocabulary sigma table, cached on disk next to the folded cache.
    pub fn sigma_table(&mut self) -> Result<&SigmaTable> {
        if self.table.is_none() {
            let hash = self.source_hash()?;
            let cached =
                util::cache_dir().map(|d| d.join(format!("sigma-{}.safetensors", &hash[..12])));
            if let Some(path) = cached.as_ref().filter(|p| p.exists()) {
                if let Ok(table) = load_sigma_cache(path, &hash) {
                    let expected = self.params()?.dims.max_pos;
                    if table.mean.len() == expected {
                        self.table = Some(table);
                    }
                }
            }
            if self.table.is_none() {
                let params = self.params()?;
                let table = sigma_table(params, None, 0)?;
                if let Some(path) = &cached {
                    save_sigma_cache(path, &table, &hash).ok();
                }
                self.table = Some(table);
            }
        }
        Ok(self.table.as_ref().unwrap())
    }

    /// A sigma context carrying the table only when the mode needs it, so
    /// exact/no-layernorm runs never pay for the table.
    pub fn needs_table(modes: &[SigmaMode]) -> bool {
        modes.iter().any(|m| {
            matches!(
                m,
                SigmaMode::MeanOverVocab | SigmaMode::MaxOverVocab | SigmaMode::MinOverVocab
            )
        })
    }

    pub fn out_path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    pub fn header(&self) -> String {
        util::csv_header(&self.config_hash, self.seed, self.timestamp)
    }

    pub fn write_csv(&self, name: &str, body: &str) -> Result<PathBuf> {
        let path = self.out_path(name);
        let contents = format!("{}{}", self.header(), body);
        util::write_atomic(&path, &contents)
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    pub fn write_svg(&self, name: &str, svg: &str) -> Result<PathBuf> {
        let path = self.out_path(name);
        util::write_atomic(&path, svg).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

fn save_sigma_cache(path: &Path, table: &SigmaTable, hash: &str) -> Result<()> {
    let n = table.mean.len();
    let mut meta = std::collections::HashMap::new();
    meta.insert("source_hash".to_string(), hash.to_string());
    meta.insert("sample_size".to_string(), table.sample_size.to_string());
    container::write_tensors(
        path,
        &[
            ("sigma.mean", &[n], &table.mean),
            ("sigma.min", &[n], &table.min),
            ("sigma.max", &[n], &table.max),
        ],
        container::StorageDtype::F64,
        Some(meta),
    )?;
    Ok(())
}

fn load_sigma_cache(path: &Path, hash: &str) -> Result<SigmaTable> {
    let meta = container::read_metadata(path)?;
    if meta.get("source_hash").map(|s| s.as_str()) != Some(hash) {
        bail!("sigma cache from a different weight file");
    }
    let sample_size: usize = meta
        .get("sample_size")
        .and_then(|s| s.parse().ok())
        .context("sigma cache missing sample_size")?;
    let tensors = container::read_tensors(path, Some(&["sigma.mean", "sigma.min", "sigma.max"]))?;
    Ok(SigmaTable {
        mean: tensors["sigma.mean"].data.clone(),
        min: tensors["sigma.min"].data.clone(),
        max: tensors["sigma.max"].data.clone(),
        sample_size,
    })
}

/// Load counts from a snapshot path.
pub fn load_counts(path: &Path) -> Result<(UnigramCounts, BigramCounts, DocSep)> {
    Ok(detok::corpus::load_snapshot(path)?)
}
