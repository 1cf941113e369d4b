//! Per-feature normalization: optional box-cox followed by min-max to [-1, 1].

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::boxcox::{fit_boxcox, BoxCoxError, BoxCoxParam};

pub const NUM_FEATURES: usize = 10;

pub const FEATURE_NAMES: [&str; NUM_FEATURES] = [
    "price",
    "volume",
    "direction",
    "time",
    "best_bid_price",
    "best_bid_volume",
    "best_ask_price",
    "best_ask_volume",
    "mid_price",
    "time_period",
];

/// Features that are box-cox transformed before min-max scaling.
pub const BOXCOX_FEATURES: [usize; 4] = [1, 3, 5, 7];
pub const DIRECTION_FEATURE: usize = 2;

#[derive(Debug, Error)]
pub enum ScalerError {
    #[error("cannot fit scalers on an empty stream")]
    EmptyStream,
    #[error(transparent)]
    BoxCox(#[from] BoxCoxError),
    #[error("scaler file is missing feature {0:?}")]
    MissingFeature(String),
    #[error("scaler file has unknown feature {0:?}")]
    UnknownFeature(String),
    #[error("scaler for {0:?} has lo > hi")]
    InvertedRange(String),
    #[error("scaler file i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("scaler file format: {0}")]
    Format(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub lo: f64,
    pub hi: f64,
}

impl MinMaxScaler {
    pub fn fit(values: &[f64]) -> Self {
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        MinMaxScaler { lo, hi }
    }

    /// A constant feature (`lo == hi`) maps everything to 0.
    pub fn is_degenerate(&self) -> bool {
        self.hi <= self.lo
    }

    pub fn scale(&self, x: f64) -> f64 {
        if self.is_degenerate() {
            return 0.0;
        }
        2.0 * (x - self.lo) / (self.hi - self.lo) - 1.0
    }

    pub fn inverse(&self, s: f64) -> f64 {
        if self.is_degenerate() {
            return self.lo;
        }
        self.lo + (s + 1.0) * 0.5 * (self.hi - self.lo)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub boxcox: Option<BoxCoxParam>,
    pub minmax: MinMaxScaler,
}

impl FeatureScaler {
    fn pre(&self, x: f64) -> f64 {
        match &self.boxcox {
            // values below the fitted shift domain are pinned to its edge
            Some(p) => p.transform(x.max(-p.shift + f64::MIN_POSITIVE)).unwrap_or(f64::NEG_INFINITY),
            None => x,
        }
    }

    /// Transformed value, not clipped.
    pub fn scale(&self, x: f64) -> f64 {
        self.minmax.scale(self.pre(x))
    }

    /// Transformed value clipped to [-1, 1].
    pub fn scale_clipped(&self, x: f64) -> f64 {
        self.scale(x).clamp(-1.0, 1.0)
    }

    pub fn inverse(&self, s: f64) -> f64 {
        let y = self.minmax.inverse(s);
        match &self.boxcox {
            Some(p) => p.inverse(y),
            None => y,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureScalers {
    pub features: [FeatureScaler; NUM_FEATURES],
}

impl FeatureScalers {
    /// Fit on raw feature rows. Box-cox λ is fitted for the four volume/time
    /// features; direction keeps the fixed range [-1, 1].
    pub fn fit(rows: &[[f64; NUM_FEATURES]]) -> Result<Self, ScalerError> {
        if rows.is_empty() {
            return Err(ScalerError::EmptyStream);
        }
        let mut features = [FeatureScaler { boxcox: None, minmax: MinMaxScaler { lo: -1.0, hi: 1.0 } }; NUM_FEATURES];
        for (f, scaler) in features.iter_mut().enumerate() {
            if f == DIRECTION_FEATURE {
                continue;
            }
            let column: Vec<f64> = rows.iter().map(|r| r[f]).collect();
            let boxcox = if BOXCOX_FEATURES.contains(&f) { Some(fit_boxcox(&column)?) } else { None };
            let transformed: Vec<f64> = match &boxcox {
                Some(p) => column.iter().map(|&x| p.transform(x)).collect::<Result<_, _>>()?,
                None => column,
            };
            let minmax = MinMaxScaler::fit(&transformed);
            if minmax.is_degenerate() {
                log::warn!("feature {} is constant ({}); it will scale to 0", FEATURE_NAMES[f], minmax.lo);
            }
            *scaler = FeatureScaler { boxcox, minmax };
        }
        Ok(FeatureScalers { features })
    }

    /// Scale one raw row, clipping every entry into [-1, 1].
    pub fn normalize(&self, raw: &[f64; NUM_FEATURES]) -> [f64; NUM_FEATURES] {
        let mut out = [0.0; NUM_FEATURES];
        for (i, (o, s)) in out.iter_mut().zip(&self.features).enumerate() {
            let v = s.scale(raw[i]);
            if !(-1.0..=1.0).contains(&v) {
                log::debug!("clipping {} = {} (scaled {v})", FEATURE_NAMES[i], raw[i]);
            }
            *o = v.clamp(-1.0, 1.0);
        }
        out
    }

    pub fn get(&self, name: &str) -> Option<&FeatureScaler> {
        FEATURE_NAMES.iter().position(|n| *n == name).map(|i| &self.features[i])
    }

    pub fn to_json(&self) -> String {
        let map: BTreeMap<&str, &FeatureScaler> = FEATURE_NAMES.iter().copied().zip(self.features.iter()).collect();
        serde_json::to_string_pretty(&map).expect("scalers serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, ScalerError> {
        let map: BTreeMap<String, FeatureScaler> = serde_json::from_str(text)?;
        if let Some(unknown) = map.keys().find(|k| !FEATURE_NAMES.contains(&k.as_str())) {
            return Err(ScalerError::UnknownFeature(unknown.clone()));
        }
        let mut features = [FeatureScaler { boxcox: None, minmax: MinMaxScaler { lo: 0.0, hi: 0.0 } }; NUM_FEATURES];
        for (i, name) in FEATURE_NAMES.iter().enumerate() {
            let s = map.get(*name).ok_or_else(|| ScalerError::MissingFeature(name.to_string()))?;
            if s.minmax.lo > s.minmax.hi {
                return Err(ScalerError::InvertedRange(name.to_string()));
            }
            features[i] = *s;
        }
        Ok(FeatureScalers { features })
    }

    pub fn save(&self, path: &Path) -> Result<(), ScalerError> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ScalerError> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minmax_maps_range_to_unit_interval() {
        let s = MinMaxScaler::fit(&[2.0, 4.0, 6.0]);
        assert_eq!((s.lo, s.hi), (2.0, 6.0));
        assert_eq!(s.scale(2.0), -1.0);
        assert_eq!(s.scale(4.0), 0.0);
        assert_eq!(s.scale(6.0), 1.0);
    }

    #[test]
    fn constant_feature_scales_to_zero() {
        let s = MinMaxScaler::fit(&[5.0, 5.0, 5.0]);
        assert!(s.is_degenerate());
        assert_eq!(s.scale(5.0), 0.0);
        assert_eq!(s.scale(7.0), 0.0);
        assert_eq!(s.inverse(0.3), 5.0);
    }

    fn rows(n: usize) -> Vec<[f64; NUM_FEATURES]> {
        (0..n)
            .map(|i| {
                let x = i as f64;
                [
                    1_000_000.0 + 100.0 * (x % 7.0),
                    1.0 + (x * 37.0) % 400.0,
                    if i % 3 == 0 { -1.0 } else { 1.0 },
                    1.0 + (x * 1e7) % 3e9,
                    999_900.0 + 100.0 * (x % 5.0),
                    (x * 13.0) % 900.0,
                    1_000_100.0 + 100.0 * (x % 4.0),
                    (x * 17.0) % 800.0,
                    1_000_000.0 + 50.0 * (x % 9.0),
                    x,
                ]
            })
            .collect()
    }

    #[test]
    fn fitted_scalers_keep_training_data_in_range() {
        let data = rows(500);
        let sc = FeatureScalers::fit(&data).unwrap();
        for f in 0..NUM_FEATURES {
            assert_eq!(sc.features[f].boxcox.is_some(), BOXCOX_FEATURES.contains(&f));
        }
        assert_eq!(sc.features[DIRECTION_FEATURE].minmax, MinMaxScaler { lo: -1.0, hi: 1.0 });
        // zero volumes force a positive shift
        assert!(sc.features[5].boxcox.unwrap().shift >= 1.0);
        for r in &data {
            for (f, s) in sc.features.iter().enumerate() {
                let v = s.scale(r[f]);
                assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&v), "feature {f} value {v}");
            }
        }
        assert_eq!(sc.normalize(&data[3])[DIRECTION_FEATURE], -1.0);
    }

    #[test]
    fn inverse_round_trips_in_range() {
        let data = rows(500);
        let sc = FeatureScalers::fit(&data).unwrap();
        for r in &data {
            for (f, s) in sc.features.iter().enumerate() {
                let back = s.inverse(s.scale(r[f]));
                let tol = 1e-9 * r[f].abs().max(1.0);
                assert!((back - r[f]).abs() <= tol, "feature {f}: {} vs {back}", r[f]);
            }
        }
    }

    #[test]
    fn out_of_range_values_are_clipped() {
        let sc = FeatureScalers::fit(&rows(100)).unwrap();
        let mut raw = rows(1)[0];
        raw[0] = 5_000_000.0;
        raw[9] = -1e9;
        let n = sc.normalize(&raw);
        assert_eq!(n[0], 1.0);
        assert_eq!(n[9], -1.0);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let sc = FeatureScalers::fit(&rows(200)).unwrap();
        let back = FeatureScalers::from_json(&sc.to_json()).unwrap();
        assert_eq!(sc, back);
        let v: serde_json::Value = serde_json::from_str(&sc.to_json()).unwrap();
        assert!(v["direction"]["boxcox"].is_null());
        assert!(v["volume"]["boxcox"]["lambda"].is_number());
        assert!(v["price"]["minmax"]["hi"].is_number());
    }

    #[test]
    fn json_missing_feature_is_rejected() {
        let sc = FeatureScalers::fit(&rows(50)).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&sc.to_json()).unwrap();
        v.as_object_mut().unwrap().remove("mid_price");
        assert!(matches!(
            FeatureScalers::from_json(&v.to_string()),
            Err(ScalerError::MissingFeature(_))
        ));
    }
}
