//! Run configuration, read from TOML and overridable from the command line.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nnfdk_core::metrics::SegmentConfig;
use nnfdk_core::phantoms::{Family, DEFAULT_MU, DEFAULT_PHYS_SIZE};
use nnfdk_core::training::LmaConfig;
use nnfdk_core::ConeBeamGeometry;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub geometry: GeometryConfig,
    pub phantom: PhantomConfig,
    pub reconstruct: ReconstructConfig,
    pub train: TrainConfig,
    pub segment: SegmentConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            geometry: GeometryConfig::default(),
            phantom: PhantomConfig::default(),
            reconstruct: ReconstructConfig::default(),
            train: TrainConfig::default(),
            segment: SegmentConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub n_voxels: usize,
    pub n_angles: usize,
    /// Source radius as a multiple of the phantom size.
    pub source_radius_factor: f64,
    pub phys_size: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            n_voxels: 64,
            n_angles: 32,
            source_radius_factor: 10.0,
            phys_size: DEFAULT_PHYS_SIZE,
        }
    }
}

impl GeometryConfig {
    pub fn build(&self) -> Result<ConeBeamGeometry, CliError> {
        ConeBeamGeometry::new(
            self.n_voxels,
            self.n_angles,
            self.source_radius_factor,
            self.phys_size,
        )
        .map_err(|e| CliError::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomConfig {
    pub family: Family,
    pub mu: f64,
    /// Emitted photon count; absent for noise-free data.
    pub i0: Option<f64>,
    pub oversample: f64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            family: Family::Fourshape,
            mu: DEFAULT_MU,
            i0: None,
            oversample: 1.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "fdk-ramlak")]
    FdkRamLak,
    #[serde(rename = "fdk-hann")]
    FdkHann,
    #[serde(rename = "sirt+")]
    SirtPlus,
    #[serde(rename = "nn-fdk")]
    NnFdk,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::FdkRamLak,
        Method::FdkHann,
        Method::SirtPlus,
        Method::NnFdk,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::FdkRamLak => "fdk-ramlak",
            Method::FdkHann => "fdk-hann",
            Method::SirtPlus => "sirt+",
            Method::NnFdk => "nn-fdk",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                format!("unknown method {s:?} (expected fdk-ramlak, fdk-hann, sirt+ or nn-fdk)")
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructConfig {
    pub method: Method,
    pub sirt_iterations: usize,
    pub record_every: usize,
}

impl Default for ReconstructConfig {
    fn default() -> Self {
        Self {
            method: Method::FdkHann,
            sirt_iterations: 200,
            record_every: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub n_hidden: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub lma: LmaConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_hidden: 4,
            n_train: 10_000,
            n_val: 10_000,
            lma: LmaConfig::default(),
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let config: Config = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.geometry.build()?;
        let p = &self.phantom;
        if !(p.mu > 0.0) {
            return Err(CliError::Config("phantom.mu must be positive".into()));
        }
        if !(p.oversample >= 1.0) {
            return Err(CliError::Config(
                "phantom.oversample must be at least 1".into(),
            ));
        }
        if let Some(i0) = p.i0 {
            if !(i0 >= 1.0) {
                return Err(CliError::Config("phantom.i0 must be at least 1".into()));
            }
        }
        if self.reconstruct.sirt_iterations == 0 {
            return Err(CliError::Config(
                "reconstruct.sirt_iterations must be positive".into(),
            ));
        }
        let t = &self.train;
        if t.n_hidden == 0 || t.n_train == 0 || t.n_val == 0 {
            return Err(CliError::Config(
                "train.n_hidden, n_train and n_val must be positive".into(),
            ));
        }
        t.lma
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the compact JSON form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_json().to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = Config::default();
        c.validate().unwrap();
        assert_eq!(Config::from_toml(&c.to_toml()).unwrap(), c);
        assert_eq!(c.hash().len(), 64);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let c = Config::from_toml(
            "seed = 5\n[geometry]\nn_voxels = 32\n[reconstruct]\nmethod = \"sirt+\"\n",
        )
        .unwrap();
        assert_eq!(
            (c.seed, c.geometry.n_voxels, c.geometry.n_angles),
            (5, 32, 32)
        );
        assert_eq!(c.reconstruct.method, Method::SirtPlus);
        assert_eq!(c.train.lma.lambda0, 1e5);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = Config::from_toml("seed = 1\n[geometry]\nn_voxles = 3\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3") && msg.contains("n_voxles"), "{msg}");
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn invalid_values_are_config_errors() {
        for text in [
            "[geometry]\nsource_radius_factor = 0.5\n",
            "[phantom]\ni0 = 0.5\n",
            "[train]\nn_hidden = 0\n",
            "[train.lma]\nfactor = 1.0\n",
        ] {
            assert!(
                matches!(Config::from_toml(text), Err(CliError::Config(_))),
                "{text}"
            );
        }
    }

    #[test]
    fn hash_tracks_content() {
        let a = Config::default();
        let mut b = a.clone();
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), a.clone().hash());
    }

    #[test]
    fn method_names_parse() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("fbp".parse::<Method>().is_err());
    }
}
