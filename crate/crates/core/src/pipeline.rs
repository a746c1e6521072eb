//! Raw cube and target grid to model-ready train/test sets.

use crate::error::Result;
use crate::grid::{PredictorCube, SplitRole, TargetGrid, TargetSet};
use crate::preprocess::{fit_cube, fit_targets, normalize_targets, prepare_predictors, split_cube, NormParams, SplitSpec};

#[derive(Clone, Debug)]
pub struct PreparedData {
    pub train: PredictorCube,
    pub test: PredictorCube,
    pub predictor_norm: NormParams,
    pub train_targets: TargetSet,
    pub test_targets: TargetSet,
    pub target_norm: NormParams,
}

/// Split years, fit both scalings on the training years, then normalize,
/// fill SST and downsample the predictors.
pub fn prepare(cube: &PredictorCube, target: &TargetGrid, split: SplitSpec) -> Result<PreparedData> {
    let (train_raw, test_raw) = split_cube(cube, split)?;
    let predictor_norm = fit_cube(&train_raw)?;
    let train = prepare_predictors(&train_raw, &predictor_norm)?;
    let test = prepare_predictors(&test_raw, &predictor_norm)?;

    let all = TargetSet::from_grid(target)?;
    let mut train_t = all.select_years(&train.years)?;
    let mut test_t = all.select_years(&test.years)?;
    train_t.role = SplitRole::Train;
    test_t.role = SplitRole::Test;
    let target_norm = fit_targets(&train_t)?;
    Ok(PreparedData {
        train_targets: normalize_targets(&train_t, &target_norm)?,
        test_targets: normalize_targets(&test_t, &target_norm)?,
        train,
        test,
        predictor_norm,
        target_norm,
    })
}
