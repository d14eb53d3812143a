//! TOML scenario files for the command line, with dotted `key=value` overrides.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::adapt::{AdaptParams, MatchConstants};
use crate::detect::HRParams;
use crate::engine::RunConfig;
use crate::error::{Error, Result};
use crate::experiments::garner::{garner_pattern, GarnerSpec};
use crate::experiments::microscope::MicroscopeScenario;
use crate::field::{Domain, ScalarField};
use crate::pgm::read_pgm;

/// Where an image or template comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum ImageSource {
    /// Binary PGM; relative paths are resolved against the config file.
    Pgm { path: PathBuf },
    Garner(GarnerSpec),
    /// The configured image itself (templates only).
    Image,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    /// Dotted path into the run config, e.g. `adapt.gamma2`.
    pub axis: String,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    pub image: ImageSource,
    pub templates: Vec<ImageSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    pub run: RunConfig,
}

impl MatchConfig {
    /// Loads the image and every template; `base` anchors relative paths.
    pub fn load_images(&self, base: &Path) -> Result<(ScalarField, Vec<ScalarField>)> {
        let image = load_source(&self.image, base, None)?;
        if self.templates.is_empty() {
            return Err(Error::Config("at least one template is required".into()));
        }
        let templates = self.templates.iter().map(|t| load_source(t, base, Some(&image))).collect::<Result<_>>()?;
        Ok((image, templates))
    }
}

fn load_source(src: &ImageSource, base: &Path, image: Option<&ScalarField>) -> Result<ScalarField> {
    match src {
        ImageSource::Pgm { path } => {
            let p = if path.is_absolute() { path.clone() } else { base.join(path) };
            read_pgm(&p, Domain::default())
        }
        ImageSource::Garner(spec) => garner_pattern(spec),
        ImageSource::Image => {
            image.cloned().ok_or_else(|| Error::Config("the image cannot refer to itself".into()))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GarnerConfig {
    pub pattern: GarnerSpec,
    pub rotation: f64,
    #[serde(default = "one")]
    pub brightness: f64,
    pub ensemble: usize,
    pub run: RunConfig,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MicroscopeConfig {
    pub scenario: MicroscopeScenario,
    pub run: RunConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundsConfig {
    pub constants: MatchConstants,
    pub adapt: AdaptParams,
    #[serde(default)]
    pub hr: HRParams,
    /// Detector neurons excluding the image neuron.
    #[serde(default = "one_usize")]
    pub templates: usize,
}

fn one_usize() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TradeoffConfig {
    pub nx: usize,
    pub ny: usize,
    pub levels: usize,
    /// Level probabilities; uniform when absent.
    #[serde(default)]
    pub probs: Option<Vec<f64>>,
    pub lam1: f64,
    pub lam2: f64,
    /// Block sizes; powers of two up to `nx·ny` when absent.
    #[serde(default)]
    pub ks: Option<Vec<usize>>,
}

/// Parses TOML text, applies `key=value` overrides and deserializes.
pub fn parse_config<T: DeserializeOwned>(text: &str, overrides: &[String]) -> Result<T> {
    let mut root: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    for o in overrides {
        apply_override(&mut root, o)?;
    }
    T::deserialize(toml::Value::Table(root)).map_err(|e| Error::Config(e.to_string()))
}

pub fn load_config<T: DeserializeOwned>(path: &Path, overrides: &[String]) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text, overrides)
}

/// Sets a dotted key, creating intermediate tables. The value is read as a
/// TOML literal, falling back to a bare string.
pub fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{assignment}' is not key=value")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::Config(format!("override '{assignment}' has an empty key")));
    }
    let value = match toml::from_str::<toml::Table>(&format!("v = {}", raw.trim())) {
        Ok(mut t) => t.remove("v").unwrap_or(toml::Value::String(raw.trim().into())),
        Err(_) => toml::Value::String(raw.trim().into()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    let mut table = root;
    for part in &parts[..parts.len() - 1] {
        let entry = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(Default::default()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override '{key}': '{part}' is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
