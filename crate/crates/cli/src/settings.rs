//! Resolved run configuration: flat key=value config file, CLI flags on top,
//! defaults underneath. The resolved set is written verbatim to the manifest
//! so every run is reproducible from its output directory alone.

use crate::CommonArgs;
use sgot_core::graph::{tud_load, FeatureMode, FeatureRecipe};
use sgot_core::ot::{Rpw2Impl, SlicedConfig};
use sgot_core::train::{DistanceKind, LossKind, TrainConfig};
use sgot_core::{Error, GraphDataset64, Result};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub struct Settings {
    pub dataset: Option<PathBuf>,
    pub recipe: FeatureRecipe,
    pub distance: DistanceKind,
    pub loss: LossKind,
    pub depth: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    pub normalize_adjacency: bool,
    pub implementation: Rpw2Impl,
    pub out: PathBuf,
    resolved: BTreeMap<String, String>,
}

fn parse_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut map = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "{}:{}: expected key=value, got '{line}'",
                path.display(),
                lineno + 1
            )));
        };
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn parse_key<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<Option<T>> {
    match map.get(key) {
        None => Ok(None),
        Some(raw) => raw
            .parse::<T>()
            .map(Some)
            .map_err(|_| Error::Config(format!("bad value '{raw}' for '{key}'"))),
    }
}

impl Settings {
    pub fn resolve(args: &CommonArgs) -> Result<Self> {
        let mut map = match &args.config {
            Some(path) => parse_config_file(path)?,
            None => BTreeMap::new(),
        };
        // flags override the file
        if let Some(v) = &args.dataset {
            map.insert("dataset".into(), v.display().to_string());
        }
        if let Some(v) = &args.recipe {
            map.insert("recipe".into(), v.clone());
        }
        if let Some(v) = args.degree_cap {
            map.insert("degree_cap".into(), v.to_string());
        }
        if args.standardize {
            map.insert("standardize".into(), "true".into());
        }
        if let Some(v) = &args.distance {
            map.insert("distance".into(), v.clone());
        }
        if let Some(v) = &args.loss {
            map.insert("loss".into(), v.clone());
        }
        if let Some(v) = args.depth {
            map.insert("depth".into(), v.to_string());
        }
        if let Some(v) = args.epochs {
            map.insert("epochs".into(), v.to_string());
        }
        if let Some(v) = args.batch {
            map.insert("batch".into(), v.to_string());
        }
        if let Some(v) = args.lr {
            map.insert("lr".into(), v.to_string());
        }
        if let Some(v) = args.seed {
            map.insert("seed".into(), v.to_string());
        }
        if args.normalize_adjacency {
            map.insert("normalize_adjacency".into(), "true".into());
        }
        if let Some(v) = &args.implementation {
            map.insert("impl".into(), v.clone());
        }
        if let Some(v) = &args.out {
            map.insert("out".into(), v.display().to_string());
        }

        let mode = match map.get("recipe") {
            Some(s) => FeatureMode::parse(s)?,
            None => FeatureMode::RawContinuous,
        };
        let mut recipe = FeatureRecipe::new(mode);
        recipe.degree_cap = parse_key(&map, "degree_cap")?;
        recipe.standardize = parse_key(&map, "standardize")?.unwrap_or(false);

        let distance = match map.get("distance") {
            Some(s) => DistanceKind::parse(s)?,
            None => DistanceKind::Rpw2,
        };
        let loss = match map.get("loss") {
            Some(s) => LossKind::parse(s)?,
            None => LossKind::Nccml,
        };
        let implementation = match map.get("impl").map(String::as_str) {
            None | Some("sequential") => Rpw2Impl::Sequential,
            Some("quadratic") => Rpw2Impl::Quadratic,
            Some(other) => {
                return Err(Error::Config(format!("unknown impl '{other}'")));
            }
        };

        let defaults = TrainConfig::default();
        let settings = Self {
            dataset: map.get("dataset").map(PathBuf::from),
            recipe,
            distance,
            loss,
            depth: parse_key(&map, "depth")?.unwrap_or(1),
            epochs: parse_key(&map, "epochs")?.unwrap_or(defaults.epochs),
            batch: parse_key(&map, "batch")?.unwrap_or(defaults.batch_size),
            lr: parse_key(&map, "lr")?.unwrap_or(defaults.learning_rate),
            seed: parse_key(&map, "seed")?.unwrap_or(0),
            normalize_adjacency: parse_key(&map, "normalize_adjacency")?.unwrap_or(false),
            implementation,
            out: map
                .get("out")
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("out")),
            resolved: map,
        };
        Ok(settings)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.lr,
            epochs: self.epochs,
            batch_size: self.batch,
            loss: self.loss,
            distance: self.distance,
            seed: self.seed,
            sliced: self.sliced_config(),
            ..TrainConfig::default()
        }
    }

    pub fn sliced_config(&self) -> SlicedConfig {
        SlicedConfig {
            rng_seed: self.seed,
            ..SlicedConfig::default()
        }
    }

    pub fn load_dataset(&self) -> Result<GraphDataset64> {
        let Some(path) = &self.dataset else {
            return Err(Error::Config("--dataset is required".into()));
        };
        tud_load(path, &self.recipe)
    }

    pub fn ensure_out_dir(&self) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.out).map_err(|source| Error::Io {
            path: self.out.clone(),
            source,
        })?;
        Ok(self.out.clone())
    }

    pub fn write_text(&self, path: &Path, text: &str) -> Result<()> {
        std::fs::write(path, text).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Resolved configuration plus version and subcommand, one key per line.
    pub fn write_manifest(&self, out: &Path, subcommand: &str) -> Result<()> {
        let mut text = String::new();
        text.push_str(&format!("version={}\n", env!("CARGO_PKG_VERSION")));
        text.push_str(&format!("subcommand={subcommand}\n"));
        let mut full = self.resolved.clone();
        full.entry("seed".into()).or_insert(self.seed.to_string());
        full.entry("distance".into())
            .or_insert(self.distance.name().into());
        full.entry("loss".into()).or_insert(self.loss.name().into());
        full.entry("epochs".into()).or_insert(self.epochs.to_string());
        full.entry("batch".into()).or_insert(self.batch.to_string());
        full.entry("lr".into()).or_insert(self.lr.to_string());
        full.entry("depth".into()).or_insert(self.depth.to_string());
        for (k, v) in &full {
            text.push_str(&format!("{k}={v}\n"));
        }
        self.write_text(&out.join("manifest.txt"), &text)
    }
}
