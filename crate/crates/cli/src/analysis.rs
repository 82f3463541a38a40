//! Inspection exports: per-row tree frequencies and two-feature decision
//! grids.

use tmlp::data::{RawDataset, RawTargets};
use tmlp::nn::Matrix;
use tmlp::pipeline::{Prediction, TmlpModel};

use crate::error::CliError;

/// Off-plane values of a decision grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum FixPolicy {
    /// Training median for numerical, training mode for categorical.
    #[default]
    MedianMode,
}

/// A `resolution × resolution` grid over the training ranges of two
/// numerical features; `x` varies fastest.
pub struct Grid {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub rows: RawDataset,
}

fn axis(min: f64, max: f64, resolution: usize) -> Vec<f64> {
    if resolution == 1 {
        return vec![min];
    }
    (0..resolution).map(|i| min + (max - min) * i as f64 / (resolution - 1) as f64).collect()
}

fn numerical_index(model: &TmlpModel, name: &str) -> Result<usize, CliError> {
    if let Some(j) = model.schema.numerical.iter().position(|n| n == name) {
        return Ok(j);
    }
    if model.schema.categorical.iter().any(|n| n == name) {
        return Err(CliError::NonNumericalFeature(name.into()));
    }
    Err(CliError::SchemaMismatch(format!("unknown feature {name:?}")))
}

pub fn boundary_grid(model: &TmlpModel, feat_x: &str, feat_y: &str, resolution: usize, _fix: FixPolicy) -> Result<Grid, CliError> {
    if resolution == 0 {
        return Err(CliError::Config("resolution must be positive".into()));
    }
    let (jx, jy) = (numerical_index(model, feat_x)?, numerical_index(model, feat_y)?);
    let prep = &model.preprocessor;
    let sx = &prep.num_summary[jx];
    let sy = &prep.num_summary[jy];
    let gx = axis(sx.min, sx.max, resolution);
    let gy = axis(sy.min, sy.max, resolution);
    let n = resolution * resolution;
    let (mut xs, mut ys) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for &y in &gy {
        for &x in &gx {
            xs.push(x);
            ys.push(y);
        }
    }
    let numerical = (0..model.schema.n_numerical())
        .map(|j| match j {
            _ if j == jx => xs.clone(),
            _ if j == jy => ys.clone(),
            _ => vec![prep.num_summary[j].median; n],
        })
        .collect();
    let categorical = prep.cat_mode.iter().map(|m| vec![m.clone(); n]).collect();
    let rows = RawDataset::from_columns(numerical, categorical, None)?;
    Ok(Grid { xs, ys, rows })
}

fn fmt32(v: f32) -> String {
    format!("{v}")
}

/// Header and rows of a prediction table.
pub fn prediction_table(model: &TmlpModel, pred: &Prediction) -> (Vec<String>, Vec<Vec<String>>) {
    match pred {
        Prediction::Classes { labels, probabilities } => {
            let mut header = vec!["prediction".to_string()];
            header.extend(model.preprocessor.classes.iter().map(|c| format!("p_{c}")));
            let rows = labels
                .iter()
                .enumerate()
                .map(|(r, l)| std::iter::once(l.clone()).chain(probabilities.row(r).iter().map(|&p| fmt32(p))).collect())
                .collect();
            (header, rows)
        }
        Prediction::Values(v) => (vec!["prediction".into()], v.iter().map(|x| vec![format!("{x}")]).collect()),
    }
}

/// Grid rows `(x, y, outputs…)`: class probabilities or the predicted value.
pub fn grid_table(model: &TmlpModel, feat_x: &str, feat_y: &str, grid: &Grid, pred: &Prediction) -> (Vec<String>, Vec<Vec<String>>) {
    let (pheader, prows) = prediction_table(model, pred);
    let skip = usize::from(matches!(pred, Prediction::Classes { .. }));
    let mut header = vec![feat_x.to_string(), feat_y.to_string()];
    header.extend(pheader.into_iter().skip(skip));
    let rows = prows
        .into_iter()
        .enumerate()
        .map(|(i, r)| [format!("{}", grid.xs[i]), format!("{}", grid.ys[i])].into_iter().chain(r.into_iter().skip(skip)).collect())
        .collect();
    (header, rows)
}

pub fn frequency_table(model: &TmlpModel, alpha: &Matrix<f32>) -> (Vec<String>, Vec<Vec<String>>) {
    let rows = (0..alpha.rows()).map(|r| alpha.row(r).iter().map(|&v| fmt32(v)).collect()).collect();
    (model.schema.feature_names(), rows)
}

pub fn write_csv(path: &std::path::Path, header: &[String], rows: &[Vec<String>]) -> Result<(), CliError> {
    let io = |e: csv::Error| CliError::Io(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(r).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(())
}

/// Raw rows with their targets dropped.
pub fn without_targets(raw: &RawDataset) -> RawDataset {
    let mut r = raw.clone();
    r.targets = None::<RawTargets>;
    r
}
