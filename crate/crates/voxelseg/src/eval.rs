//! Segmentation metrics, cross-validation folds, and report aggregation.
//!
//! Metrics come from one-vs-rest confusion counts per class. The two lung
//! classes are averaged into a single reported row; infection is reported
//! directly. Fold reports take the median over samples, the global row the
//! mean over fold medians.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::volume::{class, LabelVolume};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

/// One-vs-rest voxel counts for one class.
pub fn confusion(pred: &LabelVolume, gt: &LabelVolume, class: u8) -> Result<ConfusionCounts> {
    if pred.shape != gt.shape {
        return Err(Error::ShapeMismatch(format!(
            "prediction shape {:?} vs ground truth {:?}",
            pred.shape, gt.shape
        )));
    }
    let mut c = ConfusionCounts {
        tp: 0,
        fp: 0,
        tn: 0,
        fn_: 0,
    };
    for (&p, &g) in pred.voxels.iter().zip(&gt.voxels) {
        match (p == class, g == class) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

// 0/0 denominators mean the class is vacuously handled; score 1.0.

pub fn dsc(c: ConfusionCounts) -> f64 {
    let denom = 2 * c.tp + c.fp + c.fn_;
    if denom == 0 {
        1.0
    } else {
        (2 * c.tp) as f64 / denom as f64
    }
}

pub fn sensitivity(c: ConfusionCounts) -> f64 {
    let denom = c.tp + c.fn_;
    if denom == 0 {
        1.0
    } else {
        c.tp as f64 / denom as f64
    }
}

pub fn specificity(c: ConfusionCounts) -> f64 {
    let denom = c.tn + c.fp;
    if denom == 0 {
        1.0
    } else {
        c.tn as f64 / denom as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricTriple {
    pub dsc: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

impl MetricTriple {
    fn from_counts(c: ConfusionCounts) -> Self {
        MetricTriple {
            dsc: dsc(c),
            sensitivity: sensitivity(c),
            specificity: specificity(c),
        }
    }

    fn mean(a: Self, b: Self) -> Self {
        MetricTriple {
            dsc: (a.dsc + b.dsc) / 2.0,
            sensitivity: (a.sensitivity + b.sensitivity) / 2.0,
            specificity: (a.specificity + b.specificity) / 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub lungs: MetricTriple,
    pub infection: MetricTriple,
}

/// Metrics for one prediction: lungs = mean of the two lung classes'
/// metrics, infection reported directly.
pub fn evaluate_sample(pred: &LabelVolume, gt: &LabelVolume) -> Result<SampleMetrics> {
    if pred.num_classes != class::COUNT || gt.num_classes != class::COUNT {
        return Err(Error::ShapeMismatch(format!(
            "expected {}-class volumes, got {} and {}",
            class::COUNT,
            pred.num_classes,
            gt.num_classes
        )));
    }
    let left = MetricTriple::from_counts(confusion(pred, gt, class::LUNG_LEFT)?);
    let right = MetricTriple::from_counts(confusion(pred, gt, class::LUNG_RIGHT)?);
    let infection = MetricTriple::from_counts(confusion(pred, gt, class::INFECTION)?);
    Ok(SampleMetrics {
        lungs: MetricTriple::mean(left, right),
        infection,
    })
}

/// Shuffle 0..n with the seed and cut into k folds; the first n mod k
/// folds take one extra index.
pub fn cv_split(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k == 0 || k > n {
        return Err(Error::InvalidFoldCount { k, n });
    }
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = SeededRng::from_seed(seed);
    rng.shuffle(&mut indices);
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut at = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        folds.push(indices[at..at + size].to_vec());
        at += size;
    }
    Ok(folds)
}

fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty set");
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite metric"));
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        (values[m - 1] + values[m]) / 2.0
    }
}

fn median_metrics(samples: &[(String, SampleMetrics)]) -> SampleMetrics {
    let pick = |f: &dyn Fn(&SampleMetrics) -> f64| {
        let mut v: Vec<f64> = samples.iter().map(|(_, m)| f(m)).collect();
        median(&mut v)
    };
    SampleMetrics {
        lungs: MetricTriple {
            dsc: pick(&|m| m.lungs.dsc),
            sensitivity: pick(&|m| m.lungs.sensitivity),
            specificity: pick(&|m| m.lungs.specificity),
        },
        infection: MetricTriple {
            dsc: pick(&|m| m.infection.dsc),
            sensitivity: pick(&|m| m.infection.sensitivity),
            specificity: pick(&|m| m.infection.specificity),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub samples: Vec<(String, SampleMetrics)>,
    pub median: SampleMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: Vec<FoldReport>,
    /// Arithmetic mean over the fold medians.
    pub avg: SampleMetrics,
}

/// Build the cross-validation report from per-fold per-sample metrics.
/// Every fold must hold at least one sample.
pub fn aggregate(per_fold: Vec<Vec<(String, SampleMetrics)>>) -> CvReport {
    assert!(!per_fold.is_empty(), "report needs at least one fold");
    let folds: Vec<FoldReport> = per_fold
        .into_iter()
        .enumerate()
        .map(|(i, samples)| {
            assert!(!samples.is_empty(), "fold {} holds no samples", i + 1);
            let median = median_metrics(&samples);
            FoldReport {
                fold: i + 1,
                samples,
                median,
            }
        })
        .collect();
    let k = folds.len() as f64;
    let mut avg = SampleMetrics {
        lungs: MetricTriple {
            dsc: 0.0,
            sensitivity: 0.0,
            specificity: 0.0,
        },
        infection: MetricTriple {
            dsc: 0.0,
            sensitivity: 0.0,
            specificity: 0.0,
        },
    };
    for f in &folds {
        avg.lungs.dsc += f.median.lungs.dsc;
        avg.lungs.sensitivity += f.median.lungs.sensitivity;
        avg.lungs.specificity += f.median.lungs.specificity;
        avg.infection.dsc += f.median.infection.dsc;
        avg.infection.sensitivity += f.median.infection.sensitivity;
        avg.infection.specificity += f.median.infection.specificity;
    }
    avg.lungs.dsc /= k;
    avg.lungs.sensitivity /= k;
    avg.lungs.specificity /= k;
    avg.infection.dsc /= k;
    avg.infection.sensitivity /= k;
    avg.infection.specificity /= k;
    CvReport { folds, avg }
}

impl CvReport {
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("fold,lungs_dsc,lungs_sens,lungs_spec,covid_dsc,covid_sens,covid_spec\n");
        let row = |label: &str, m: &SampleMetrics| {
            format!(
                "{},{},{},{},{},{},{}\n",
                label,
                m.lungs.dsc,
                m.lungs.sensitivity,
                m.lungs.specificity,
                m.infection.dsc,
                m.infection.sensitivity,
                m.infection.specificity
            )
        };
        for f in &self.folds {
            out.push_str(&row(&f.fold.to_string(), &f.median));
        }
        out.push_str(&row("AVG", &self.avg));
        out
    }
}
