//! Seeded synthetic tables for tests, demos and the acceptance harness.

use crate::data::{DataError, FeatureSchema, RawDataset, RawTargets, TaskType};
use crate::nn::RngStream;

const STREAM: u64 = 0x5e7;

fn columns(n: usize, f: usize, rng: &mut RngStream) -> Vec<Vec<f64>> {
    let mut cols = vec![Vec::with_capacity(n); f];
    for _ in 0..n {
        for c in cols.iter_mut() {
            c.push(rng.normal(1.0));
        }
    }
    cols
}

fn names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

/// `n_informative + n_noise` standard normal columns; the binary label
/// depends on the first three only:
/// `y = 1[(|x0| < 0.8 ∧ x1 > −0.3) ∨ x2 > 1]`, about 46% positives.
pub fn informative_binary(n: usize, n_noise: usize, seed: u64) -> Result<(FeatureSchema, RawDataset), DataError> {
    let mut rng = RngStream::new(seed, STREAM);
    let cols = columns(n, 3 + n_noise, &mut rng);
    let labels = (0..n)
        .map(|r| {
            let (a, b, c) = (cols[0][r], cols[1][r], cols[2][r]);
            if (a.abs() < 0.8 && b > -0.3) || c > 1.0 { "1" } else { "0" }.to_string()
        })
        .collect();
    let schema = FeatureSchema::new("y", TaskType::Binclass, names("x", 3 + n_noise), vec![])?;
    let raw = RawDataset::from_columns(cols, vec![], Some(RawTargets::Labels(labels)))?;
    Ok((schema, raw))
}

/// Six numerical and two categorical columns with a smooth regression
/// target plus Gaussian noise of standard deviation `noise`.
#[allow(clippy::needless_range_loop)]
pub fn mixed_regression(n: usize, noise: f64, seed: u64) -> Result<(FeatureSchema, RawDataset), DataError> {
    let mut rng = RngStream::new(seed, STREAM + 1);
    let num = columns(n, 6, &mut rng);
    let colors = ["red", "green", "blue"];
    let sizes = ["s", "m", "l", "xl"];
    let mut cat_a = Vec::with_capacity(n);
    let mut cat_b = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for r in 0..n {
        let a = rng.below(colors.len());
        let b = rng.below(sizes.len());
        cat_a.push(colors[a].to_string());
        cat_b.push(sizes[b].to_string());
        let v = 2.0 * num[0][r] + (1.5 * num[1][r]).sin() + num[2][r] * num[3][r] + 0.5 * (a as f64 - 1.0) + 0.3 * b as f64;
        y.push(v + noise * rng.normal(1.0));
    }
    let schema = FeatureSchema::new("target", TaskType::Regression, names("n", 6), vec!["color".into(), "size".into()])?;
    let raw = RawDataset::from_columns(num, vec![cat_a, cat_b], Some(RawTargets::Real(y)))?;
    Ok((schema, raw))
}

/// Three Gaussian blobs in four dimensions with one categorical column.
pub fn blobs_multiclass(n: usize, seed: u64) -> Result<(FeatureSchema, RawDataset), DataError> {
    let mut rng = RngStream::new(seed, STREAM + 2);
    let centers = [[1.5, 0.0, 0.0, 0.0], [-1.0, 1.2, 0.0, 0.0], [0.0, -1.3, 1.0, 0.0]];
    let mut num: Vec<Vec<f64>> = (0..4).map(|_| Vec::with_capacity(n)).collect();
    let mut cat = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let k = rng.below(3);
        for (j, col) in num.iter_mut().enumerate() {
            col.push(centers[k][j] + rng.normal(0.8));
        }
        cat.push(if rng.uniform() < 0.5 { "a" } else { "b" }.to_string());
        labels.push(["alpha", "beta", "gamma"][k].to_string());
    }
    let schema = FeatureSchema::new("label", TaskType::Multiclass, names("f", 4), vec!["tag".into()])?;
    let raw = RawDataset::from_columns(num, vec![cat], Some(RawTargets::Labels(labels)))?;
    Ok((schema, raw))
}

/// Renders a table as CSV with a header (features, then the target).
pub fn to_csv(schema: &FeatureSchema, raw: &RawDataset) -> Result<String, DataError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = schema.feature_names();
    if raw.targets.is_some() {
        header.push(schema.target_column.clone());
    }
    w.write_record(&header)?;
    for r in 0..raw.n_rows {
        let mut rec: Vec<String> = raw.num_row(r).iter().map(|v| format!("{v}")).collect();
        rec.extend(raw.cat_row(r).iter().cloned());
        match &raw.targets {
            Some(RawTargets::Real(y)) => rec.push(format!("{}", y[r])),
            Some(RawTargets::Labels(y)) => rec.push(y[r].clone()),
            None => {}
        }
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| DataError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
