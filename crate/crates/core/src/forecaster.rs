//! A trained network bundled with the scaling and window sizes it was trained under.
//!
//! Saved as one JSON document. Floats are written in shortest round-trip form,
//! so a reloaded model reproduces its forecasts bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Normalizer, Provenance};
use crate::error::{Error, Result};
use crate::model::SequenceModel;

const FORMAT: &str = "gwlcast-model";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForecastModel {
    pub well_id: String,
    pub provenance: Provenance,
    pub lookback: usize,
    pub horizon: usize,
    pub normalizer: Normalizer,
    pub model: SequenceModel,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format: String,
    version: u32,
    #[serde(flatten)]
    body: ForecastModel,
}

impl ForecastModel {
    /// Same window sizes and scaling, so forecasts are comparable.
    pub fn check_compatible(&self, other: &ForecastModel) -> Result<()> {
        if self.lookback != other.lookback || self.horizon != other.horizon {
            return Err(Error::Incompatible(format!(
                "window sizes differ: {}/{} vs {}/{}",
                self.lookback, self.horizon, other.lookback, other.horizon
            )));
        }
        if self.normalizer != other.normalizer {
            return Err(Error::Incompatible("models use different normalizers".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let file = ModelFile {
            format: FORMAT.into(),
            version: VERSION,
            body: self.clone(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("model serialises");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        // `flatten` and `deny_unknown_fields` do not combine in serde, so check keys by hand.
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| Error::Format("top level must be an object".into()))?;
        const KEYS: [&str; 8] = [
            "format",
            "version",
            "well_id",
            "provenance",
            "lookback",
            "horizon",
            "normalizer",
            "model",
        ];
        if let Some(k) = obj.keys().find(|k| !KEYS.contains(&k.as_str())) {
            return Err(Error::Format(format!("unknown key {k:?}")));
        }
        if obj.get("format").and_then(|v| v.as_str()) != Some(FORMAT) {
            return Err(Error::Format(format!("not a {FORMAT} document")));
        }
        if obj.get("version").and_then(|v| v.as_u64()) != Some(VERSION as u64) {
            return Err(Error::Format(format!("unsupported version, expected {VERSION}")));
        }
        let body = ForecastModel {
            well_id: take(obj, "well_id")?,
            provenance: take(obj, "provenance")?,
            lookback: take(obj, "lookback")?,
            horizon: take(obj, "horizon")?,
            normalizer: take(obj, "normalizer")?,
            model: take(obj, "model")?,
        };
        if body.lookback == 0 || body.horizon == 0 {
            return Err(Error::Format("lookback and horizon must be positive".into()));
        }
        Ok(body)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

fn take<T: serde::de::DeserializeOwned>(obj: &serde_json::Map<String, serde_json::Value>, key: &str) -> Result<T> {
    let v = obj
        .get(key)
        .ok_or_else(|| Error::Format(format!("missing key {key:?}")))?;
    T::deserialize(v).map_err(|e| Error::Format(format!("{key}: {e}")))
}
