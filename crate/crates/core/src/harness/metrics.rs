//! Evaluation metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{dist2, Point};
use crate::network::{argmax, HeadKind, HeadOutput, Model};
use crate::scene::PointCloud;

/// Anything that maps a cloud to a head output.
pub trait Predictor {
    fn head(&self) -> HeadKind;
    fn predict(&self, cloud: &PointCloud) -> Result<HeadOutput>;
}

impl Predictor for Model {
    fn head(&self) -> HeadKind {
        self.config().head
    }

    fn predict(&self, cloud: &PointCloud) -> Result<HeadOutput> {
        self.forward(cloud)
    }
}

/// Scene-level class: the class of the first object.
pub fn scene_class(cloud: &PointCloud) -> Result<usize> {
    cloud
        .objects
        .first()
        .map(|o| o.class_id)
        .ok_or_else(|| Error::Data("classification scene has no objects".into()))
}

/// Flat metrics record; fields not produced by a head are `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub head: String,
    pub scenes: usize,
    pub accuracy: Option<f64>,
    pub mean_iou: Option<f64>,
    /// Mean distance between predicted and true object centers.
    pub center_error: Option<f64>,
    pub median_center_error: Option<f64>,
    /// Share of scenes whose center error is at most
    /// [`CENTER_HIT_FRACTION`] of the object's largest extent.
    pub center_accuracy: Option<f64>,
}

pub const CENTER_HIT_FRACTION: f64 = 0.25;

/// `confusion[truth][predicted]` counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Confusion {
    pub counts: Vec<Vec<usize>>,
}

impl Confusion {
    pub fn new(classes: usize) -> Self {
        Self {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn record(&mut self, truth: usize, predicted: usize) -> Result<()> {
        let k = self.counts.len();
        if truth >= k || predicted >= k {
            return Err(Error::Data(format!("class {truth}/{predicted} outside 0..{k}")));
        }
        self.counts[truth][predicted] += 1;
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let correct: usize = (0..self.counts.len()).map(|i| self.counts[i][i]).sum();
        correct as f64 / self.total().max(1) as f64
    }

    /// Per-class IoU; `None` for classes absent from both truth and prediction.
    pub fn iou(&self) -> Vec<Option<f64>> {
        let k = self.counts.len();
        (0..k)
            .map(|c| {
                let tp = self.counts[c][c];
                let fn_: usize = self.counts[c].iter().sum::<usize>() - tp;
                let fp: usize = (0..k).map(|t| self.counts[t][c]).sum::<usize>() - tp;
                let union = tp + fn_ + fp;
                (union > 0).then(|| tp as f64 / union as f64)
            })
            .collect()
    }

    /// Mean IoU over classes that occur.
    pub fn mean_iou(&self) -> f64 {
        let present: Vec<f64> = self.iou().into_iter().flatten().collect();
        if present.is_empty() {
            return 0.0;
        }
        present.iter().sum::<f64>() / present.len() as f64
    }
}

pub fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Distances from predicted centers to the true centers of each scene's
/// first object.
pub fn center_errors(predictor: &impl Predictor, dataset: &[PointCloud]) -> Result<Vec<f64>> {
    dataset
        .iter()
        .map(|cloud| {
            let truth: Point = cloud
                .objects
                .first()
                .ok_or_else(|| Error::Data("weak-center scene has no objects".into()))?
                .center;
            match predictor.predict(cloud)? {
                HeadOutput::WeakCenter { center, .. } => Ok(dist2(&center, &truth).sqrt()),
                _ => Err(Error::Data("predictor did not return a center".into())),
            }
        })
        .collect()
}

/// Scene-level confusion, sized to cover every true and predicted class.
pub fn classification_confusion(predictor: &impl Predictor, dataset: &[PointCloud]) -> Result<Confusion> {
    let mut pairs = Vec::with_capacity(dataset.len());
    let mut classes = 1;
    for cloud in dataset {
        let out = predictor.predict(cloud)?;
        let HeadOutput::Classification { logits } = out else {
            return Err(Error::Data("predictor did not return class logits".into()));
        };
        let pair = (scene_class(cloud)?, argmax(&logits));
        classes = classes.max(logits.len()).max(pair.0 + 1);
        pairs.push(pair);
    }
    let mut c = Confusion::new(classes);
    for (t, p) in pairs {
        c.record(t, p)?;
    }
    Ok(c)
}

/// Point-wise confusion at the output density of the predictor.
pub fn segmentation_confusion(predictor: &impl Predictor, dataset: &[PointCloud], classes: usize) -> Result<Confusion> {
    let mut c = Confusion::new(classes);
    for cloud in dataset {
        let labels = cloud
            .point_labels
            .as_ref()
            .ok_or_else(|| Error::Data("segmentation scene has no point labels".into()))?;
        let HeadOutput::Segmentation {
            logits, point_indices, ..
        } = predictor.predict(cloud)?
        else {
            return Err(Error::Data("predictor did not return point logits".into()));
        };
        for (r, &i) in point_indices.iter().enumerate() {
            c.record(labels[i], argmax(logits.row(r)))?;
        }
    }
    Ok(c)
}

pub fn evaluate(predictor: &impl Predictor, dataset: &[PointCloud]) -> Result<Metrics> {
    if dataset.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty dataset".into()));
    }
    let head = predictor.head();
    let mut m = Metrics {
        head: head.to_string(),
        scenes: dataset.len(),
        accuracy: None,
        mean_iou: None,
        center_error: None,
        median_center_error: None,
        center_accuracy: None,
    };
    let classes = dataset[0].num_classes;
    match head {
        HeadKind::Classification => {
            m.accuracy = Some(classification_confusion(predictor, dataset)?.accuracy());
        }
        HeadKind::Segmentation => {
            let c = segmentation_confusion(predictor, dataset, classes)?;
            m.accuracy = Some(c.accuracy());
            m.mean_iou = Some(c.mean_iou());
        }
        HeadKind::WeakCenter => {
            let mut e = center_errors(predictor, dataset)?;
            let hits = e
                .iter()
                .zip(dataset)
                .filter(|(err, c)| **err <= CENTER_HIT_FRACTION * c.objects[0].max_extent())
                .count();
            m.center_accuracy = Some(hits as f64 / e.len() as f64);
            m.center_error = Some(e.iter().sum::<f64>() / e.len() as f64);
            m.median_center_error = Some(median(&mut e));
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confusion_by_hand() {
        let mut c = Confusion::new(2);
        for (t, p) in [(0, 0), (0, 1), (1, 1), (1, 1)] {
            c.record(t, p).unwrap();
        }
        assert_eq!(c.accuracy(), 0.75);
        // class 0: tp 1, fn 1, fp 0 -> 1/2; class 1: tp 2, fp 1 -> 2/3
        assert_eq!(c.iou(), vec![Some(0.5), Some(2.0 / 3.0)]);
        assert!((c.mean_iou() - (0.5 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn absent_class_is_skipped() {
        let mut c = Confusion::new(3);
        c.record(0, 0).unwrap();
        assert_eq!(c.iou(), vec![Some(1.0), None, None]);
        assert_eq!(c.mean_iou(), 1.0);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
