//! End-to-end plumbing from a well record to trained FULL and STORM forecasters.
//!
//! [`prepare`] returns the training side and the test side as separate values;
//! everything that fits, detects or trains takes only the training side.

use serde::{Deserialize, Serialize};

use crate::data::{
    build_windows, fit_normalizer, segment_gaps, Normalizer, Provenance, SupervisedDataset, TimeSeriesFrame,
};
use crate::error::{Error, Result};
use crate::forecaster::ForecastModel;
use crate::model::ModelSizes;
use crate::storms::{detect_storms_all, extract_storm_dataset, StormParams};
use crate::training::{chronological_split, train_model_with, EpochStats, SplitSpec, TrainConfig, TrainReport};

/// Window and gap-handling sizes, in hours.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowConfig {
    pub lookback: usize,
    pub horizon: usize,
    pub max_fill: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            lookback: 48,
            horizon: 18,
            max_fill: 3,
        }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lookback == 0 || self.horizon == 0 {
            return Err(Error::Config("lookback and horizon must be at least 1".into()));
        }
        Ok(())
    }
}

/// Training and validation segments plus the scaling fitted on the training rows.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingData {
    pub well_id: String,
    pub train: Vec<TimeSeriesFrame>,
    pub val: Vec<TimeSeriesFrame>,
    pub normalizer: Normalizer,
}

/// Gap-free segments of the held-out test period.
#[derive(Clone, Debug, PartialEq)]
pub struct TestData {
    pub segments: Vec<TimeSeriesFrame>,
}

/// Splits chronologically, segments each part at long gaps, and fits the normalizer.
pub fn prepare(frame: &TimeSeriesFrame, split: &SplitSpec, windows: &WindowConfig) -> Result<(TrainingData, TestData)> {
    windows.validate()?;
    let (train, val, test) = chronological_split(frame, split)?;
    let train = segment_gaps(&train, windows.max_fill);
    let val = segment_gaps(&val, windows.max_fill);
    let test = segment_gaps(&test, windows.max_fill);
    let normalizer = fit_normalizer(&train)?;
    Ok((
        TrainingData {
            well_id: frame.well_id.clone(),
            train,
            val,
            normalizer,
        },
        TestData { segments: test },
    ))
}

/// Training and validation windows for one regime.
///
/// STORM sets keep the windows whose targets touch an event detected on the
/// same part of the record.
pub fn regime_datasets(
    data: &TrainingData,
    regime: Provenance,
    windows: &WindowConfig,
    storms: &StormParams,
) -> Result<(SupervisedDataset, SupervisedDataset)> {
    let (lb, hz) = (windows.lookback, windows.horizon);
    let sets = match regime {
        Provenance::Full => (
            build_windows(&data.train, lb, hz, &data.normalizer)?,
            build_windows(&data.val, lb, hz, &data.normalizer)?,
        ),
        Provenance::Storm => {
            storms.validate()?;
            let train_events = detect_storms_all(&data.train, storms);
            let val_events = detect_storms_all(&data.val, storms);
            let train = extract_storm_dataset(&data.train, &train_events, lb, hz, &data.normalizer)?;
            let val = extract_storm_dataset(&data.val, &val_events, lb, hz, &data.normalizer)?;
            if train.is_empty() {
                return Err(Error::NoStorms);
            }
            if val.is_empty() {
                return Err(Error::Invalid(
                    "no storm events detected in the validation period".into(),
                ));
            }
            (train, val)
        }
    };
    if sets.0.is_empty() || sets.1.is_empty() {
        return Err(Error::Invalid(format!(
            "segments too short for lookback {lb} + horizon {hz}"
        )));
    }
    Ok(sets)
}

pub fn train_regime(
    data: &TrainingData,
    regime: Provenance,
    windows: &WindowConfig,
    storms: &StormParams,
    sizes: ModelSizes,
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochStats),
) -> Result<(ForecastModel, TrainReport)> {
    let (train, val) = regime_datasets(data, regime, windows, storms)?;
    let (model, report) = train_model_with(sizes, &train, &val, cfg, on_epoch)?;
    Ok((
        ForecastModel {
            well_id: data.well_id.clone(),
            provenance: regime,
            lookback: windows.lookback,
            horizon: windows.horizon,
            normalizer: data.normalizer.clone(),
            model,
        },
        report,
    ))
}
