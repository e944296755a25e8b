//! Time splits for H-fold cross-validation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cross-validation layout shared by the threshold and clustering searches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvConfig {
    pub folds: usize,
    pub train_fraction: f64,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            folds: 10,
            train_fraction: 2.0 / 3.0,
        }
    }
}

impl CvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::Config(format!("need at least 2 folds, got {}", self.folds)));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Contiguous test blocks rotated around the window: fold `h` tests on the
/// `T_test` periods starting at `floor(h T / H)` (wrapping) and trains on the
/// rest. Both sides keep time order.
pub fn fold_splits(n_periods: usize, config: &CvConfig) -> Result<Vec<Split>> {
    config.validate()?;
    let train_len = ((n_periods as f64) * config.train_fraction).round() as usize;
    let test_len = n_periods.saturating_sub(train_len);
    if train_len < 2 || test_len < 2 {
        return Err(Error::Data(format!(
            "{n_periods} periods split {train_len}/{test_len} cannot form train and test covariances"
        )));
    }
    Ok((0..config.folds)
        .map(|h| {
            let offset = h * n_periods / config.folds;
            let mut in_test = vec![false; n_periods];
            for i in 0..test_len {
                in_test[(offset + i) % n_periods] = true;
            }
            let (test, train): (Vec<usize>, Vec<usize>) = (0..n_periods).partition(|&t| in_test[t]);
            Split { train, test }
        })
        .collect())
}
