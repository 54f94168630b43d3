use crate::backbones::Model;
use crate::datasets::Pipeline;
use crate::error::{Error, Result};

pub const EVAL_BATCH: usize = 256;

/// Eval-mode logits for `indices`, row-major `[len, classes]`.
pub fn logits(model: &Model, pipeline: &Pipeline<'_>, indices: &[usize], batch: usize) -> Result<Vec<f32>> {
    if batch == 0 {
        return Err(Error::Config("evaluation batch size must be at least 1".into()));
    }
    let mut out = Vec::with_capacity(indices.len() * model.spec.num_classes);
    for chunk in indices.chunks(batch) {
        out.extend_from_slice(model.logits(pipeline.batch(chunk))?.data());
    }
    Ok(out)
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn predictions(logits: &[f32], classes: usize) -> Vec<usize> {
    logits.chunks_exact(classes).map(argmax).collect()
}

pub fn predict(model: &Model, pipeline: &Pipeline<'_>, indices: &[usize], batch: usize) -> Result<Vec<usize>> {
    let k = model.spec.num_classes;
    Ok(predictions(&logits(model, pipeline, indices, batch)?, k))
}

/// Fraction of predictions equal to their labels.
pub fn top1(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::Config("accuracy of an empty evaluation set is undefined".into()));
    }
    if predictions.len() != labels.len() {
        return Err(Error::Config(format!("{} predictions for {} labels", predictions.len(), labels.len())));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// Counts indexed `[true][predicted]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix { counts: vec![vec![0; classes]; classes] }
    }

    pub fn from_predictions(predictions: &[usize], labels: &[usize], classes: usize) -> Result<Self> {
        if predictions.len() != labels.len() {
            return Err(Error::Config(format!("{} predictions for {} labels", predictions.len(), labels.len())));
        }
        let mut m = ConfusionMatrix::new(classes);
        for (&p, &l) in predictions.iter().zip(labels) {
            if p >= classes || l >= classes {
                return Err(Error::Config(format!("class index outside [0, {classes})")));
            }
            m.counts[l][p] += 1;
        }
        Ok(m)
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn accuracy(&self) -> f64 {
        self.trace() as f64 / self.total() as f64
    }

    /// Header row of class names, then one row of counts per true class.
    pub fn to_csv(&self, class_names: &[&str]) -> String {
        let mut s = class_names.join(",");
        s.push('\n');
        for row in &self.counts {
            let cells: Vec<String> = row.iter().map(u64::to_string).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Overhead {
    pub params_base: usize,
    pub params_msvp: usize,
    /// Percentage increase of the wrapped model over the baseline.
    pub delta_pct: f64,
}

pub fn overhead(params_base: usize, params_msvp: usize) -> Result<Overhead> {
    if params_base == 0 {
        return Err(Error::Config("baseline parameter count is zero".into()));
    }
    let delta_pct = (params_msvp as f64 - params_base as f64) / params_base as f64 * 100.0;
    Ok(Overhead { params_base, params_msvp, delta_pct })
}

/// Overhead of `msvp` over `base`; both must share a backbone family.
pub fn overhead_report(base: &Model, msvp: &Model) -> Result<Overhead> {
    if base.family() != msvp.family() {
        return Err(Error::Config(format!("cannot compare {} against {}", base.family(), msvp.family())));
    }
    overhead(base.count_params(), msvp.count_params())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[0.0; 10]), 0);
    }

    #[test]
    fn empty_accuracy_rejected() {
        assert!(top1(&[], &[]).is_err());
    }

    #[test]
    fn constant_predictor_on_balanced_set() {
        let labels: Vec<usize> = (0..100).map(|i| i % 10).collect();
        let preds = vec![0; 100];
        assert_eq!(top1(&preds, &labels).unwrap(), 0.1);
        let m = ConfusionMatrix::from_predictions(&preds, &labels, 10).unwrap();
        assert!(m.counts.iter().all(|r| r[0] == 10 && r[1..].iter().all(|&c| c == 0)));
    }

    #[test]
    fn csv_layout() {
        let m = ConfusionMatrix::from_predictions(&[0, 1, 1], &[0, 1, 0], 2).unwrap();
        assert_eq!(m.to_csv(&["a", "b"]), "a,b\n1,1\n0,1\n");
    }

    #[test]
    fn overhead_arithmetic() {
        assert!(overhead(0, 5).is_err());
        assert_eq!(overhead(100, 100).unwrap().delta_pct, 0.0);
        assert!(overhead(11_173_962, 11_174_205).unwrap().delta_pct < 0.0022);
    }
}
