//! Jitter sweep and module-count ablation.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::network::{Backbone, HeadKind, InitScheme, Model, ModelConfig};
use crate::scene::PointCloud;

use super::jitter::{inject_jitter, JitterDistribution, JitterSpec};
use super::metrics::{evaluate, median, Metrics};
use super::scenes::{generate_dataset, scene_seed, SceneSpec};
use super::train::{train, RunReport, TrainConfig};

/// Everything needed to generate data, build a model and train it.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskConfig {
    pub scene: SceneSpec,
    pub train_scenes: usize,
    pub test_scenes: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl TaskConfig {
    /// 3-class shape classification, 512 points per scene, 200/50 split.
    pub fn classification() -> Self {
        Self {
            scene: SceneSpec {
                num_points: 512,
                seed: 1,
                ..SceneSpec::default()
            },
            train_scenes: 200,
            test_scenes: 50,
            model: ModelConfig {
                widths: vec![16, 32, 32, 64],
                neighbors: vec![8; 4],
                attention_dim: 8,
                head_hidden: 32,
                init: InitScheme::HeUniform,
                ..ModelConfig::default()
            },
            train: TrainConfig {
                epochs: 40,
                batch_size: 8,
                lr: 0.02,
                lr_step: 15,
                ..TrainConfig::default()
            },
        }
    }

    /// Single-object scenes with clutter and a weak-center head.
    pub fn weak_center() -> Self {
        Self {
            scene: SceneSpec {
                num_points: 128,
                clutter_fraction: 0.4,
                seed: 2,
                ..SceneSpec::default()
            },
            train_scenes: 120,
            test_scenes: 80,
            model: ModelConfig {
                widths: vec![16, 16, 32, 32],
                neighbors: vec![8; 4],
                attention_dim: 8,
                head: HeadKind::WeakCenter,
                head_hidden: 16,
                init: InitScheme::HeUniform,
                ..ModelConfig::default()
            },
            train: TrainConfig {
                epochs: 20,
                batch_size: 4,
                lr: 0.01,
                lr_step: 8,
                ..TrainConfig::default()
            },
        }
    }

    /// Small classification task sized for the 3x3 module-count grid.
    pub fn ablation() -> Self {
        let base = Self::classification();
        Self {
            scene: SceneSpec {
                num_points: 256,
                ..base.scene
            },
            train_scenes: 60,
            test_scenes: 30,
            model: ModelConfig {
                widths: vec![16, 32, 32, 64],
                ..base.model
            },
            train: TrainConfig {
                epochs: 12,
                lr_step: 5,
                ..base.train
            },
        }
    }

    /// Key-value form. Scene keys carry a `scene.` prefix; model and
    /// training keys are unprefixed.
    pub fn to_kv(&self) -> BTreeMap<String, String> {
        let mut kv = self.model.to_kv();
        kv.extend(self.train.to_kv());
        for (k, v) in self.scene.to_kv() {
            kv.insert(format!("scene.{k}"), v);
        }
        kv.insert("train_scenes".into(), self.train_scenes.to_string());
        kv.insert("test_scenes".into(), self.test_scenes.to_string());
        kv
    }

    /// Overrides `base` with the keys present in `kv`.
    pub fn from_kv(kv: &BTreeMap<String, String>, base: &Self) -> Result<Self> {
        let mut merged = base.to_kv();
        merged.extend(kv.iter().map(|(k, v)| (k.clone(), v.clone())));
        if kv.contains_key("aaa_stages") && !kv.contains_key("neighbors") {
            merged.remove("neighbors");
        }
        if kv.contains_key("aaa_stages") && !kv.contains_key("widths") {
            let n: usize = kv["aaa_stages"]
                .parse()
                .map_err(|_| Error::Config("`aaa_stages` is not an integer".into()))?;
            let ladder = width_ladder(&base.model.widths);
            merged.insert("widths".into(), ladder[..n.min(ladder.len())].iter().map(usize::to_string).collect::<Vec<_>>().join(","));
        }
        let count = |k: &str| -> Result<usize> {
            merged[k].parse().map_err(|_| Error::Config(format!("`{k}` is not an integer")))
        };
        let scene_kv: BTreeMap<String, String> = merged
            .iter()
            .filter_map(|(k, v)| k.strip_prefix("scene.").map(|s| (s.to_string(), v.clone())))
            .collect();
        Ok(Self {
            scene: SceneSpec::from_kv(&scene_kv)?,
            train_scenes: count("train_scenes")?,
            test_scenes: count("test_scenes")?,
            model: ModelConfig::from_kv(&merged)?,
            train: TrainConfig::from_kv(&merged)?,
        })
    }

    /// Training and test sets for one seed.
    pub fn datasets(&self, seed: u64) -> Result<(Vec<PointCloud>, Vec<PointCloud>)> {
        let spec = |i: u64| SceneSpec {
            seed: scene_seed(self.scene.seed, i),
            ..self.scene.clone()
        };
        Ok((
            generate_dataset(&spec(2 * seed), self.train_scenes)?,
            generate_dataset(&spec(2 * seed + 1), self.test_scenes)?,
        ))
    }

    /// Model and training configs with seeds offset by `seed`.
    pub fn seeded(&self, seed: u64) -> (ModelConfig, TrainConfig) {
        let mut m = self.model.clone();
        m.seed = m.seed.wrapping_add(seed);
        let mut t = self.train.clone();
        t.seed = t.seed.wrapping_add(seed);
        (m, t)
    }
}

/// Widths for up to five encoder stages, extending `widths` by doubling.
pub fn width_ladder(widths: &[usize]) -> Vec<usize> {
    let mut out = widths.to_vec();
    while out.len() < 5 {
        out.push(out.last().map_or(16, |w| w * 2));
    }
    out
}

/// Trains a fresh model and evaluates it on `test`.
pub fn train_and_evaluate(
    model: &ModelConfig,
    train_cfg: &TrainConfig,
    train_set: &[PointCloud],
    test_set: &[PointCloud],
) -> Result<(Model, RunReport, Metrics)> {
    let mut m = Model::build(model)?;
    let report = train(&mut m, train_set, train_cfg)?;
    let metrics = evaluate(&m, test_set)?;
    Ok((m, report, metrics))
}

/// Largest relative parameter-count gap allowed for a matched baseline.
pub const BASELINE_BUDGET_TOLERANCE: f64 = 0.1;

/// The attention-free variant of `cfg` with every encoder width scaled by
/// a common factor chosen so its parameter count is closest to that of
/// `cfg`.
pub fn matched_baseline(cfg: &ModelConfig) -> Result<ModelConfig> {
    let target = Model::build(cfg)?.param_count() as f64;
    let mut best: Option<(f64, ModelConfig)> = None;
    for step in 10..=800 {
        let factor = step as f64 / 100.0;
        let widths: Vec<usize> = cfg.widths.iter().map(|&w| ((w as f64 * factor).round() as usize).max(1)).collect();
        let candidate = ModelConfig {
            backbone: Backbone::Mlp,
            widths,
            ..cfg.clone()
        };
        let count = Model::build(&candidate)?.param_count() as f64;
        let gap = (count - target).abs() / target;
        if best.as_ref().is_none_or(|(g, _)| gap < *g) {
            best = Some((gap, candidate));
        }
    }
    let (gap, baseline) = best.expect("factor range is nonempty");
    if gap > BASELINE_BUDGET_TOLERANCE {
        return Err(Error::Config(format!(
            "no baseline within {:.0}% of the parameter budget (best gap {:.1}%)",
            100.0 * BASELINE_BUDGET_TOLERANCE,
            100.0 * gap
        )));
    }
    Ok(baseline)
}

pub const SWEEP_HEADER: [&str; 5] = ["j", "seed", "variant", "center_error", "accuracy"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub j: f64,
    pub seed: u64,
    pub variant: String,
    /// Mean distance from predicted to true centers on the test set.
    pub center_error: f64,
    /// Share of test scenes with a center hit.
    pub accuracy: f64,
}

/// Copies of `dataset` whose weak labels are jittered at level `j`. The
/// unit displacements depend only on `seed` and the scene index, so every
/// level scales the same draws.
pub fn jitter_dataset(dataset: &[PointCloud], j: f64, distribution: JitterDistribution, seed: u64) -> Result<Vec<PointCloud>> {
    dataset
        .iter()
        .enumerate()
        .map(|(i, cloud)| {
            let spec = JitterSpec::new(j, distribution, scene_seed(seed, i as u64))?;
            Ok(PointCloud {
                objects: inject_jitter(&cloud.objects, &spec)?,
                ..cloud.clone()
            })
        })
        .collect()
}

fn check_levels(levels: &[f64]) -> Result<()> {
    if levels.first() != Some(&0.0) {
        return Err(Error::Config("jitter levels must start at 0".into()));
    }
    if levels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("jitter levels must be strictly increasing".into()));
    }
    if levels.iter().any(|j| !(0.0..=1.0).contains(j)) {
        return Err(Error::Config("jitter levels must lie in [0, 1]".into()));
    }
    Ok(())
}

/// Trains the model of `task` and its matched baseline on jittered labels
/// at every level and seed, evaluating against true centers. Rows come out
/// sorted by level, seed, then variant.
pub fn jitter_sweep(task: &TaskConfig, levels: &[f64], seeds: &[u64], distribution: JitterDistribution) -> Result<Vec<SweepRow>> {
    check_levels(levels)?;
    if task.model.head != HeadKind::WeakCenter {
        return Err(Error::Config("the jitter sweep needs a weak-center head".into()));
    }
    if task.scene.num_objects == 0 {
        return Err(Error::Config("the jitter sweep needs scenes with objects".into()));
    }
    let mut rows = Vec::with_capacity(levels.len() * seeds.len() * 2);
    for &j in levels {
        for &seed in seeds {
            let (train_set, test_set) = task.datasets(seed)?;
            let jittered = jitter_dataset(&train_set, j, distribution, scene_seed(seed, 0xa11ce))?;
            let (mma_cfg, train_cfg) = task.seeded(seed);
            let baseline_cfg = matched_baseline(&mma_cfg)?;
            for cfg in [&baseline_cfg, &mma_cfg] {
                let (_, _, m) = train_and_evaluate(cfg, &train_cfg, &jittered, &test_set)?;
                rows.push(SweepRow {
                    j,
                    seed,
                    variant: cfg.backbone.to_string(),
                    center_error: m.center_error.expect("weak-center metrics"),
                    accuracy: m.center_accuracy.expect("weak-center metrics"),
                });
            }
        }
    }
    rows.sort_by(|a, b| a.j.total_cmp(&b.j).then(a.seed.cmp(&b.seed)).then(a.variant.cmp(&b.variant)));
    Ok(rows)
}

/// Median center error of `variant` at level `j`.
pub fn sweep_median(rows: &[SweepRow], variant: &str, j: f64) -> Option<f64> {
    let mut v: Vec<f64> = rows
        .iter()
        .filter(|r| r.variant == variant && r.j == j)
        .map(|r| r.center_error)
        .collect();
    (!v.is_empty()).then(|| median(&mut v))
}

pub fn write_sweep_csv(rows: &[SweepRow], out: impl Write) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(SWEEP_HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Scalar a grid cell reports for a head: test accuracy for
/// classification, mean IoU for segmentation, mean center error for
/// weak-center.
pub fn primary_metric(m: &Metrics) -> Option<f64> {
    m.mean_iou.or(m.center_error).or(m.accuracy)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationCell {
    pub aaa: usize,
    pub fdc: usize,
    /// Mean of the primary metric over seeds; `None` for invalid pairs.
    pub value: Option<f64>,
    pub per_seed: Vec<f64>,
}

/// Trains every valid (encoder, decoder) stage-count pair of the grid.
/// Pairs violating the model-config invariants are returned as skipped.
pub fn ablation_grid(task: &TaskConfig, aaa_counts: &[usize], fdc_counts: &[usize], seeds: &[u64]) -> Result<Vec<AblationCell>> {
    let ladder = width_ladder(&task.model.widths);
    let k = task.model.neighbors.first().copied().unwrap_or(16);
    let mut cells = Vec::new();
    for &fdc in fdc_counts {
        for &aaa in aaa_counts {
            let cfg = task.model.with_stage_counts(aaa, fdc, &ladder, k);
            if cfg.validate().is_err() {
                cells.push(AblationCell {
                    aaa,
                    fdc,
                    value: None,
                    per_seed: Vec::new(),
                });
                continue;
            }
            let mut per_seed = Vec::with_capacity(seeds.len());
            for &seed in seeds {
                let (train_set, test_set) = task.datasets(seed)?;
                let (_, train_cfg) = task.seeded(seed);
                let model = ModelConfig {
                    seed: cfg.seed.wrapping_add(seed),
                    ..cfg.clone()
                };
                let (_, _, m) = train_and_evaluate(&model, &train_cfg, &train_set, &test_set)?;
                per_seed.push(primary_metric(&m).expect("metrics carry a primary value"));
            }
            let value = Some(per_seed.iter().sum::<f64>() / per_seed.len().max(1) as f64);
            cells.push(AblationCell {
                aaa,
                fdc,
                value,
                per_seed,
            });
        }
    }
    Ok(cells)
}

/// Table with one row per decoder count and one column per encoder count;
/// invalid pairs read `skipped`.
pub fn write_ablation_csv(cells: &[AblationCell], aaa_counts: &[usize], fdc_counts: &[usize], out: impl Write) -> Result<()> {
    let mut w = csv::WriterBuilder::new().from_writer(out);
    let mut header = vec!["fdc".to_string()];
    header.extend(aaa_counts.iter().map(|a| format!("aaa_{a}")));
    w.write_record(&header)?;
    for &fdc in fdc_counts {
        let mut row = vec![fdc.to_string()];
        for &aaa in aaa_counts {
            let cell = cells
                .iter()
                .find(|c| c.aaa == aaa && c.fdc == fdc)
                .ok_or_else(|| Error::Data(format!("grid has no cell for {aaa}+{fdc}")))?;
            row.push(cell.value.map_or_else(|| "skipped".to_string(), |v| format!("{v:.6}")));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn levels_must_start_at_zero_and_increase() {
        assert!(check_levels(&[0.0, 0.1, 0.3]).is_ok());
        assert!(check_levels(&[0.1, 0.3]).is_err());
        assert!(check_levels(&[0.0, 0.3, 0.2]).is_err());
        assert!(check_levels(&[]).is_err());
    }

    #[test]
    fn ladder_extends_by_doubling() {
        assert_eq!(width_ladder(&[8, 16, 16]), vec![8, 16, 16, 32, 64]);
    }

    #[test]
    fn baseline_matches_budget() {
        let cfg = TaskConfig::weak_center().model;
        let base = matched_baseline(&cfg).unwrap();
        let (a, b) = (
            Model::build(&cfg).unwrap().param_count() as f64,
            Model::build(&base).unwrap().param_count() as f64,
        );
        assert_eq!(base.backbone, Backbone::Mlp);
        assert!((a - b).abs() / a <= BASELINE_BUDGET_TOLERANCE);
    }

    #[test]
    fn task_kv_roundtrip() {
        let t = TaskConfig::weak_center();
        assert_eq!(TaskConfig::from_kv(&t.to_kv(), &TaskConfig::classification()).unwrap(), t);
    }

    #[test]
    fn csv_layouts() {
        let rows = vec![SweepRow {
            j: 0.3,
            seed: 1,
            variant: "mma".into(),
            center_error: 0.25,
            accuracy: 0.5,
        }];
        let mut buf = Vec::new();
        write_sweep_csv(&rows, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "j,seed,variant,center_error,accuracy\n0.3,1,mma,0.25,0.5\n");

        let cells = vec![
            AblationCell {
                aaa: 3,
                fdc: 2,
                value: Some(0.5),
                per_seed: vec![0.5],
            },
            AblationCell {
                aaa: 3,
                fdc: 3,
                value: None,
                per_seed: vec![],
            },
        ];
        let mut buf = Vec::new();
        write_ablation_csv(&cells, &[3], &[2, 3], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "fdc,aaa_3\n2,0.500000\n3,skipped\n");
    }
}
