//! Momentum-SGD training with the poly schedule, scene preparation, and
//! evaluation.

mod metrics;
mod scene;

pub use metrics::{ConfusionMatrix, MetricsReport};
pub use scene::{
    augment, augment_hierarchy, generate_scene, AugmentRanges, AugmentTransform, GeneratedScene,
    SceneSpec, TrapPair, CLASS_BOX, CLASS_CYLINDER, CLASS_FLOOR, CLASS_SLAB,
};

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::{build_hierarchy, HierarchySpec, MeshHierarchy};
use crate::mesh::{project_labels, SurfaceMesh};
use crate::model::{build_scene_input, EdgeMode, Model};
use crate::ops::{lit, softmax_cross_entropy, ParameterStore, Scalar};
use crate::rng::split_seed;

pub const IGNORE_LABEL: i32 = -1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub base_lr: f64,
    pub momentum: f64,
    pub poly_power: f64,
    pub epochs: usize,
    pub weight_decay: f64,
    pub edge_keep_probability: f64,
    pub augment: AugmentRanges,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            base_lr: 0.1,
            momentum: 0.9,
            poly_power: 0.9,
            epochs: 100,
            weight_decay: 1e-4,
            edge_keep_probability: 0.8,
            augment: AugmentRanges::default(),
            seed: 0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0) {
            return Err(Error::validation("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::validation("momentum must lie in [0, 1)"));
        }
        if !(self.poly_power > 0.0) {
            return Err(Error::validation("poly power must be positive"));
        }
        if !(self.edge_keep_probability > 0.0 && self.edge_keep_probability <= 1.0) {
            return Err(Error::validation("edge keep probability must lie in (0, 1]"));
        }
        if self.epochs == 0 {
            return Err(Error::validation("need at least one epoch"));
        }
        Ok(())
    }
}

/// Poly schedule: `base * (1 - t/T)^power`; exactly `base` at `t = 0` and
/// exactly zero at `t = T`.
pub fn poly_lr(base: f64, step: usize, total_steps: usize, power: f64) -> f64 {
    if step >= total_steps {
        return 0.0;
    }
    if step == 0 {
        return base;
    }
    base * (1.0 - step as f64 / total_steps as f64).powf(power)
}

/// One momentum-SGD update. Weight decay applies only to parameters flagged
/// for it (weights, not norms/biases).
pub fn sgd_step<S: Scalar>(
    params: &mut ParameterStore<S>,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) {
    let lr = lit::<S>(lr);
    let momentum = lit::<S>(momentum);
    let wd = lit::<S>(weight_decay);
    for p in params.iter_mut() {
        ndarray::Zip::from(&mut p.momentum)
            .and(&p.grad)
            .and(&p.value)
            .for_each(|m, &g, &v| {
                let g = if p.apply_decay { g + wd * v } else { g };
                *m = momentum * *m + g;
            });
        ndarray::Zip::from(&mut p.value)
            .and(&p.momentum)
            .for_each(|v, &m| {
                *v -= lr * m;
            });
    }
}

/// A scene prepared for training: the raw labeled mesh plus its hierarchy.
#[derive(Debug, Clone)]
pub struct TrainScene {
    pub mesh: SurfaceMesh,
    pub hierarchy: MeshHierarchy,
    pub traps: Vec<TrapPair>,
}

impl TrainScene {
    pub fn prepare(scene: GeneratedScene, spec: &HierarchySpec) -> Result<TrainScene> {
        let hierarchy = build_hierarchy(&scene.mesh, spec)?;
        Ok(TrainScene {
            mesh: scene.mesh,
            hierarchy,
            traps: scene.traps,
        })
    }

    pub fn from_mesh(mesh: SurfaceMesh, spec: &HierarchySpec) -> Result<TrainScene> {
        let hierarchy = build_hierarchy(&mesh, spec)?;
        Ok(TrainScene {
            mesh,
            hierarchy,
            traps: Vec::new(),
        })
    }
}

/// One newline-delimited JSON log record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub train_acc: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport<S> {
    /// Per-step records followed by one epoch-mean record per epoch.
    pub records: Vec<TrainRecord>,
    pub best_epoch: usize,
    pub best_loss: f64,
    pub final_loss: f64,
    pub final_train_acc: f64,
    /// Parameter values at the end of the best-loss epoch.
    pub best_params: Vec<ArrayD<S>>,
}

/// Train end-to-end: per step, augment, rebuild the voxel levels, forward
/// with edge sampling, cross-entropy, backward, and a momentum-SGD update
/// on the poly schedule. `sink` observes every log record as it is written.
pub fn train<S: Scalar>(
    model: &mut Model<S>,
    scenes: &[TrainScene],
    hp: &Hyperparams,
    mut sink: impl FnMut(&TrainRecord),
) -> Result<TrainReport<S>> {
    hp.validate()?;
    if scenes.is_empty() {
        return Err(Error::validation("no training scenes"));
    }
    for (i, s) in scenes.iter().enumerate() {
        if s.hierarchy.level(0).labels().is_none() {
            return Err(Error::validation(format!("scene {i} has no labels")));
        }
        if s.hierarchy.depth() != model.config.levels {
            return Err(Error::validation(format!(
                "scene {i}: hierarchy depth {} != model levels {}",
                s.hierarchy.depth(),
                model.config.levels
            )));
        }
    }

    let total_steps = hp.epochs * scenes.len();
    let mut records = Vec::new();
    let mut best = (0usize, f64::INFINITY);
    let mut best_params: Vec<ArrayD<S>> = model.params.iter().map(|p| p.value.clone()).collect();
    let mut step = 0usize;
    let mut final_loss = f64::NAN;
    let mut final_acc = 0.0;

    for epoch in 0..hp.epochs {
        let mut epoch_loss = 0.0;
        let mut epoch_acc = 0.0;
        for scene in scenes {
            let lr = poly_lr(hp.base_lr, step, total_steps, hp.poly_power);
            let aug = augment_hierarchy(
                &scene.hierarchy,
                &hp.augment,
                split_seed(hp.seed, "augment-step", step as u64),
            );
            let input = build_scene_input::<S>(aug, model.config.resolution)?;
            let (logits, tape) = model.forward(
                &input,
                EdgeMode::Sampled {
                    keep_probability: hp.edge_keep_probability,
                    seed: split_seed(hp.seed, "edge-step", step as u64),
                },
            )?;
            let labels = input
                .hierarchy
                .level(0)
                .labels()
                .expect("validated above")
                .to_vec();
            let (loss, grad) =
                softmax_cross_entropy(&logits.values.view(), &labels, IGNORE_LABEL)?;
            let loss = loss.to_f64();
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite loss {loss} at epoch {epoch}, step {step} \
                     (lr {lr:.6}, {} vertices)",
                    logits.rows()
                )));
            }
            let acc = vertex_accuracy(&logits.values, &labels);
            model.params.zero_grads();
            model.backward(&input, &tape, &grad)?;
            sgd_step(&mut model.params, lr, hp.momentum, hp.weight_decay);

            let record = TrainRecord {
                epoch,
                step,
                loss,
                lr,
                train_acc: acc,
            };
            sink(&record);
            records.push(record);
            epoch_loss += loss;
            epoch_acc += acc;
            final_loss = loss;
            final_acc = acc;
            step += 1;
        }
        let mean_loss = epoch_loss / scenes.len() as f64;
        let mean_acc = epoch_acc / scenes.len() as f64;
        let summary = TrainRecord {
            epoch,
            step: step - 1,
            loss: mean_loss,
            lr: poly_lr(hp.base_lr, step.saturating_sub(1), total_steps, hp.poly_power),
            train_acc: mean_acc,
        };
        sink(&summary);
        records.push(summary);
        if mean_loss < best.1 {
            best = (epoch, mean_loss);
            best_params = model.params.iter().map(|p| p.value.clone()).collect();
        }
    }

    Ok(TrainReport {
        records,
        best_epoch: best.0,
        best_loss: best.1,
        final_loss,
        final_train_acc: final_acc,
        best_params,
    })
}

fn vertex_accuracy<S: Scalar>(logits: &ndarray::Array2<S>, labels: &[i32]) -> f64 {
    let mut correct = 0usize;
    let mut counted = 0usize;
    for (row, &label) in logits.outer_iter().zip(labels) {
        if label == IGNORE_LABEL {
            continue;
        }
        counted += 1;
        if argmax(&row) == label {
            correct += 1;
        }
    }
    if counted == 0 {
        0.0
    } else {
        correct as f64 / counted as f64
    }
}

fn argmax<S: Scalar>(row: &ndarray::ArrayView1<S>) -> i32 {
    let mut best = 0usize;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best as i32
}

/// Predict class ids on the original mesh: argmax at the base level,
/// projected back through the base trace.
pub fn predict_labels<S: Scalar>(model: &Model<S>, scene: &TrainScene) -> Result<Vec<i32>> {
    let input = build_scene_input::<S>(scene.hierarchy.clone(), model.config.resolution)?;
    let (logits, _) = model.forward(&input, EdgeMode::Full)?;
    let base: Vec<i32> = logits
        .values
        .outer_iter()
        .map(|row| argmax(&row))
        .collect();
    project_labels(&scene.mesh, &base, scene.hierarchy.base_trace())
}

/// Evaluate on labeled scenes: predictions are projected to the original
/// vertices before scoring.
pub fn evaluate<S: Scalar>(
    model: &Model<S>,
    scenes: &[TrainScene],
) -> Result<(MetricsReport, ConfusionMatrix)> {
    let mut confusion = ConfusionMatrix::new(model.config.num_classes);
    for scene in scenes {
        let truth = scene
            .mesh
            .labels()
            .ok_or_else(|| Error::validation("evaluation scene has no labels"))?;
        let predictions = predict_labels(model, scene)?;
        for (&t, &p) in truth.iter().zip(&predictions) {
            if t != IGNORE_LABEL {
                confusion.record(t, p)?;
            }
        }
    }
    Ok((MetricsReport::from_confusion(&confusion), confusion))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, BranchMode, ModelConfig};

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            widths: vec![8, 12, 16],
            ..ModelConfig::mini(4)
        }
    }

    fn tiny_scene(seed: u64) -> TrainScene {
        let spec = SceneSpec {
            extent: 1.2,
            boxes: 1,
            cylinders: 1,
            slabs: 0,
            trap_pairs: 1,
            ..Default::default()
        };
        TrainScene::prepare(generate_scene(&spec, seed).unwrap(), &HierarchySpec::default())
            .unwrap()
    }

    #[test]
    fn poly_schedule_endpoints_are_exact() {
        assert_eq!(poly_lr(0.1, 0, 300, 0.9), 0.1);
        assert_eq!(poly_lr(0.1, 300, 300, 0.9), 0.0);
        let mid = poly_lr(0.1, 150, 300, 0.9);
        assert!(mid > 0.0 && mid < 0.1);
    }

    #[test]
    fn sgd_without_momentum_matches_closed_form_on_quadratic() {
        // f(w) = 0.5 * sum a_i w_i^2; gradient descent gives
        // w_t = w_0 * (1 - lr * a)^t.
        let a = [0.5f64, 1.0, 2.0];
        let w0 = [1.0f64, -2.0, 0.5];
        let mut ps = ParameterStore::<f64>::new();
        let id = ps
            .add("w", ndarray::arr1(&w0).into_dyn(), false)
            .unwrap();
        let lr = 0.1;
        let steps = 25;
        for _ in 0..steps {
            let grad: Vec<f64> = ps
                .get(id)
                .value
                .iter()
                .zip(&a)
                .map(|(&w, &ai)| ai * w)
                .collect();
            ps.get_mut(id).grad.assign(&ndarray::arr1(&grad).into_dyn());
            sgd_step(&mut ps, lr, 0.0, 0.0);
        }
        for (i, (&w0i, &ai)) in w0.iter().zip(&a).enumerate() {
            let expect = w0i * (1.0 - lr * ai).powi(steps);
            let got = ps.get(id).value.as_slice().unwrap()[i];
            assert!((got - expect).abs() < 1e-8, "{got} vs {expect}");
        }
    }

    #[test]
    fn weight_decay_applies_to_weights_only() {
        let mut ps = ParameterStore::<f64>::new();
        let w = ps.add("w", ndarray::arr1(&[1.0]).into_dyn(), true).unwrap();
        let b = ps.add("b", ndarray::arr1(&[1.0]).into_dyn(), false).unwrap();
        sgd_step(&mut ps, 1.0, 0.0, 0.1);
        assert!((ps.get(w).value.as_slice().unwrap()[0] - 0.9).abs() < 1e-12);
        assert_eq!(ps.get(b).value.as_slice().unwrap()[0], 1.0);
    }

    #[test]
    fn one_step_decreases_loss_on_frozen_batch() {
        let scene = tiny_scene(1);
        let input =
            build_scene_input::<f64>(scene.hierarchy.clone(), 50.0).unwrap();
        let labels = input.hierarchy.level(0).labels().unwrap().to_vec();
        let loss_of = |model: &Model<f64>| {
            let (logits, _) = model.forward(&input, EdgeMode::Full).unwrap();
            softmax_cross_entropy(&logits.values.view(), &labels, IGNORE_LABEL)
                .unwrap()
                .0
        };
        let mut decreased = false;
        for lr in [1e-3, 1e-4] {
            let mut model = build_model::<f64>(&tiny_config(), 21).unwrap();
            let before = loss_of(&model);
            let (logits, tape) = model.forward(&input, EdgeMode::Full).unwrap();
            let (_, grad) =
                softmax_cross_entropy(&logits.values.view(), &labels, IGNORE_LABEL).unwrap();
            model.params.zero_grads();
            model.backward(&input, &tape, &grad).unwrap();
            sgd_step(&mut model.params, lr, 0.0, 0.0);
            let after = loss_of(&model);
            if after < before {
                decreased = true;
            }
        }
        assert!(decreased, "no line-search learning rate decreased the loss");
    }

    #[test]
    fn training_is_bitwise_reproducible() {
        let scenes = vec![tiny_scene(2)];
        let hp = Hyperparams {
            epochs: 3,
            seed: 5,
            ..Default::default()
        };
        let run = || {
            let mut model = build_model::<f64>(&tiny_config(), 9).unwrap();
            let report = train(&mut model, &scenes, &hp, |_| {}).unwrap();
            let params: Vec<Vec<u8>> = model
                .params
                .iter()
                .map(|p| {
                    p.value
                        .iter()
                        .flat_map(|v| v.to_le_bytes())
                        .collect::<Vec<u8>>()
                })
                .collect();
            (params, report.records)
        };
        let (pa, ra) = run();
        let (pb, rb) = run();
        assert_eq!(pa, pb);
        assert_eq!(ra, rb);
    }

    #[test]
    fn training_log_contains_per_step_and_epoch_records() {
        let scenes = vec![tiny_scene(3), tiny_scene(4)];
        let hp = Hyperparams {
            epochs: 2,
            seed: 1,
            ..Default::default()
        };
        let mut model = build_model::<f64>(&tiny_config(), 3).unwrap();
        let mut seen = Vec::new();
        let report = train(&mut model, &scenes, &hp, |r| seen.push(r.clone())).unwrap();
        // 2 scenes * 2 epochs steps + 2 epoch summaries.
        assert_eq!(report.records.len(), 6);
        assert_eq!(seen.len(), 6);
        assert_eq!(report.records[0].lr, 0.1);
        assert!(report.best_loss.is_finite());
        assert_eq!(report.best_params.len(), model.params.len());
    }

    #[test]
    fn evaluate_untrained_is_near_chance_on_balanced_scene() {
        // Two-class scene with roughly balanced vertex counts; an untrained
        // model (random logits or collapsed argmax) lands near 1/K overall.
        let spec = SceneSpec {
            classes: 2,
            extent: 1.4,
            boxes: 2,
            cylinders: 0,
            slabs: 0,
            geodesic_trap: false,
            trap_pairs: 0,
            ..Default::default()
        };
        let scene = TrainScene::prepare(
            generate_scene(&spec, 9).unwrap(),
            &HierarchySpec::default(),
        )
        .unwrap();
        let config = ModelConfig {
            num_classes: 2,
            ..tiny_config()
        };
        let model = build_model::<f64>(&config, 31).unwrap();
        let (report, confusion) = evaluate(&model, &[scene]).unwrap();
        assert_eq!(confusion.total(), report.evaluated_vertices);
        assert!(
            report.overall_accuracy > 0.2 && report.overall_accuracy < 0.8,
            "untrained accuracy {} not near chance",
            report.overall_accuracy
        );
    }

    #[test]
    fn evaluate_counts_every_vertex() {
        let scene = tiny_scene(5);
        let model = build_model::<f64>(&tiny_config(), 2).unwrap();
        let n = scene.mesh.vertex_count() as u64;
        let (_, confusion) = evaluate(&model, &[scene]).unwrap();
        assert_eq!(confusion.total(), n);
    }

    #[test]
    fn geo_only_branch_trains_too() {
        let scenes = vec![tiny_scene(6)];
        let hp = Hyperparams {
            epochs: 1,
            seed: 2,
            ..Default::default()
        };
        let mut model = build_model::<f64>(
            &ModelConfig {
                branch: BranchMode::GeoOnly,
                ..tiny_config()
            },
            4,
        )
        .unwrap();
        let report = train(&mut model, &scenes, &hp, |_| {}).unwrap();
        assert!(report.final_loss.is_finite());
    }
}
