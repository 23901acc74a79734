//! Multi-head convolutional classifiers: a shared backbone, one linear head
//! per task, plain SGD, and activation/gradient capture at a named layer for
//! the explanation pipeline.

pub mod checkpoint;
mod resnet;
mod small_cnn;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, Array3, Array4, Axis};

use crate::nn::{softmax_cross_entropy, Linear, LinearGrads};
use crate::rng::stream;
use crate::{Error, Result};
pub use resnet::{ReducedResnet18, RESNET_TARGETS};
pub use small_cnn::{SmallCnn, SMALL_CNN_TARGETS};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    SmallCnn,
    ReducedResnet18,
}

impl FromStr for Arch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "small-cnn" => Ok(Arch::SmallCnn),
            "reduced-resnet18" => Ok(Arch::ReducedResnet18),
            other => Err(Error::Config(format!("unknown architecture '{other}'"))),
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arch::SmallCnn => "small-cnn",
            Arch::ReducedResnet18 => "reduced-resnet18",
        })
    }
}

/// Activations and gradients of a scalar class score at the capture layer,
/// both shaped (maps, u, v), for a single image.
#[derive(Debug, Clone)]
pub struct TargetCapture {
    pub activations: Array3<f32>,
    pub gradients: Array3<f32>,
}

#[derive(Debug, Clone)]
pub(crate) enum Backbone {
    Small(SmallCnn),
    Resnet(ReducedResnet18),
}

pub(crate) enum TrainCache {
    Small(small_cnn::SmallCnnCache),
    Resnet(resnet::ResnetCache),
}

pub(crate) enum BackboneGrads {
    Small(small_cnn::SmallCnnGrads),
    Resnet(resnet::ResnetGrads),
}

impl Backbone {
    fn forward_train(&mut self, x: &Array4<f32>) -> (Array2<f32>, TrainCache) {
        match self {
            Backbone::Small(b) => {
                let (f, c) = b.forward_train(x);
                (f, TrainCache::Small(c))
            }
            Backbone::Resnet(b) => {
                let (f, c) = b.forward_train(x);
                (f, TrainCache::Resnet(c))
            }
        }
    }

    fn forward_eval(&self, x: &Array4<f32>) -> Array2<f32> {
        match self {
            Backbone::Small(b) => b.forward_eval(x),
            Backbone::Resnet(b) => b.forward_eval(x),
        }
    }

    fn backward(&self, cache: &TrainCache, dfeat: &Array2<f32>) -> BackboneGrads {
        match (self, cache) {
            (Backbone::Small(b), TrainCache::Small(c)) => BackboneGrads::Small(b.backward(c, dfeat)),
            (Backbone::Resnet(b), TrainCache::Resnet(c)) => {
                BackboneGrads::Resnet(b.backward(c, dfeat))
            }
            _ => unreachable!("cache/backbone mismatch"),
        }
    }

    fn apply_sgd(&mut self, grads: &BackboneGrads, lr: f32) {
        match (self, grads) {
            (Backbone::Small(b), BackboneGrads::Small(g)) => b.apply_sgd(g, lr),
            (Backbone::Resnet(b), BackboneGrads::Resnet(g)) => b.apply_sgd(g, lr),
            _ => unreachable!("grads/backbone mismatch"),
        }
    }

    fn capture(&self, x: &Array4<f32>, dfeat: &Array2<f32>, target: &str) -> (Array3<f32>, Array3<f32>) {
        match self {
            Backbone::Small(b) => b.capture(x, dfeat, target),
            Backbone::Resnet(b) => b.capture(x, dfeat, target),
        }
    }

    fn feature_dim(&self) -> usize {
        match self {
            Backbone::Small(b) => b.feature_dim(),
            Backbone::Resnet(b) => b.feature_dim(),
        }
    }

    fn param_count(&self) -> usize {
        match self {
            Backbone::Small(b) => b.param_count(),
            Backbone::Resnet(b) => b.param_count(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MultiHeadModel {
    pub(crate) backbone: Backbone,
    pub heads: Vec<Linear>,
    pub arch: Arch,
    pub classes_per_task: usize,
    pub image_side: usize,
    pub channels: usize,
    pub target_layer: String,
}

/// Builds a deterministically initialized model with one untrained head per
/// task and the default capture layer registered.
pub fn build_model(
    arch: Arch,
    n_tasks: usize,
    classes_per_task: usize,
    image_side: usize,
    channels: usize,
    seed: u64,
) -> Result<MultiHeadModel> {
    if n_tasks == 0 || classes_per_task < 2 {
        return Err(Error::Model(format!(
            "need >=1 tasks and >=2 classes per task, got {n_tasks}/{classes_per_task}"
        )));
    }
    if image_side < 16 || image_side % 8 != 0 {
        return Err(Error::Model(format!(
            "image side must be a multiple of 8 and >= 16, got {image_side}"
        )));
    }
    if channels == 0 || channels > 16 {
        return Err(Error::Model(format!("unsupported channel count {channels}")));
    }
    let mut rng = stream(seed, "model-init");
    let backbone = match arch {
        Arch::SmallCnn => Backbone::Small(SmallCnn::new(channels, image_side, &mut rng)),
        Arch::ReducedResnet18 => {
            Backbone::Resnet(ReducedResnet18::new(channels, image_side, &mut rng))
        }
    };
    let feat = backbone.feature_dim();
    let heads = (0..n_tasks)
        .map(|_| Linear::new(feat, classes_per_task, &mut rng))
        .collect();
    let target_layer = default_target(arch).to_string();
    Ok(MultiHeadModel {
        backbone,
        heads,
        arch,
        classes_per_task,
        image_side,
        channels,
        target_layer,
    })
}

pub fn target_layer_names(arch: Arch) -> &'static [&'static str] {
    match arch {
        Arch::SmallCnn => SMALL_CNN_TARGETS,
        Arch::ReducedResnet18 => RESNET_TARGETS,
    }
}

fn default_target(arch: Arch) -> &'static str {
    target_layer_names(arch)[0]
}

impl MultiHeadModel {
    pub fn num_tasks(&self) -> usize {
        self.heads.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.backbone.feature_dim()
    }

    pub fn param_count(&self) -> usize {
        self.backbone.param_count() + self.heads.iter().map(Linear::param_count).sum::<usize>()
    }

    pub fn set_target_layer(&mut self, name: &str) -> Result<()> {
        if target_layer_names(self.arch).contains(&name) {
            self.target_layer = name.to_string();
            Ok(())
        } else {
            Err(Error::Model(format!(
                "unknown capture layer '{name}' for {} (available: {:?})",
                self.arch,
                target_layer_names(self.arch)
            )))
        }
    }

    fn check_batch(&self, images: &Array4<f32>, task_ids: &[usize]) -> Result<()> {
        let (n, c, h, w) = images.dim();
        if n == 0 {
            return Err(Error::Model("empty batch".into()));
        }
        if c != self.channels || h != self.image_side || w != self.image_side {
            return Err(Error::Model(format!(
                "batch shape ({c},{h},{w}) does not match model ({},{},{})",
                self.channels, self.image_side, self.image_side
            )));
        }
        if task_ids.len() != n {
            return Err(Error::Model("task id count != batch size".into()));
        }
        if let Some(&t) = task_ids.iter().find(|&&t| t >= self.heads.len()) {
            return Err(Error::Model(format!("task id {t} out of range")));
        }
        Ok(())
    }

    fn head_logits(&self, feat: &Array2<f32>, task_ids: &[usize]) -> Array2<f32> {
        let n = feat.dim().0;
        let mut logits = Array2::zeros((n, self.classes_per_task));
        for i in 0..n {
            let head = &self.heads[task_ids[i]];
            let row = head.weight.dot(&feat.row(i)) + &head.bias;
            logits.row_mut(i).assign(&row);
        }
        logits
    }

    /// Pre-softmax scores, eval mode. Each image is routed to its own head.
    pub fn forward(&self, images: &Array4<f32>, task_ids: &[usize]) -> Result<Array2<f32>> {
        self.check_batch(images, task_ids)?;
        let feat = self.backbone.forward_eval(images);
        Ok(self.head_logits(&feat, task_ids))
    }

    /// One plain SGD step on the mean cross-entropy over the joint batch.
    /// `labels` are output-unit indices within each example's head.
    pub fn sgd_step(
        &mut self,
        images: &Array4<f32>,
        task_ids: &[usize],
        labels: &[usize],
        lr: f32,
    ) -> Result<f32> {
        self.check_batch(images, task_ids)?;
        if labels.len() != task_ids.len() {
            return Err(Error::Model("label count != batch size".into()));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= self.classes_per_task) {
            return Err(Error::Model(format!("label unit {l} out of head range")));
        }
        if !(lr >= 0.0) || !lr.is_finite() {
            return Err(Error::Model(format!("invalid learning rate {lr}")));
        }
        let n = images.dim().0;
        let (feat, cache) = self.backbone.forward_train(images);
        let logits = self.head_logits(&feat, task_ids);
        let (loss, dlogits, _) = softmax_cross_entropy(&logits, labels);

        let feat_dim = feat.dim().1;
        let mut dfeat = Array2::zeros((n, feat_dim));
        let mut head_grads: Vec<Option<LinearGrads>> = (0..self.heads.len()).map(|_| None).collect();
        for i in 0..n {
            let t = task_ids[i];
            let head = &self.heads[t];
            let g = head_grads[t].get_or_insert_with(|| LinearGrads {
                dweight: Array2::zeros(head.weight.dim()),
                dbias: Array1::zeros(head.bias.len()),
            });
            for (u, &dl) in dlogits.row(i).iter().enumerate() {
                g.dweight.row_mut(u).scaled_add(dl, &feat.row(i));
                g.dbias[u] += dl;
            }
            let drow = dlogits.row(i).dot(&head.weight);
            dfeat.row_mut(i).assign(&drow);
        }
        let backbone_grads = self.backbone.backward(&cache, &dfeat);
        self.backbone.apply_sgd(&backbone_grads, lr);
        for (t, g) in head_grads.into_iter().enumerate() {
            if let Some(g) = g {
                self.heads[t].apply_sgd(&g, lr);
            }
        }
        Ok(loss)
    }

    /// Activations and class-score gradients at the capture layer for one
    /// image. Eval mode; parameters and running statistics are untouched.
    pub fn capture_target_layer(
        &self,
        image: &Array3<f32>,
        label_unit: usize,
        task_id: usize,
    ) -> Result<TargetCapture> {
        if task_id >= self.heads.len() {
            return Err(Error::Model(format!("task id {task_id} out of range")));
        }
        if label_unit >= self.classes_per_task {
            return Err(Error::Model(format!(
                "class unit {label_unit} outside head of width {}",
                self.classes_per_task
            )));
        }
        let x = image
            .to_owned()
            .insert_axis(Axis(0));
        self.check_batch(&x, &[task_id])?;
        // d(score)/d(features) for a linear head is the unit's weight row.
        let dfeat = self.heads[task_id]
            .weight
            .row(label_unit)
            .to_owned()
            .insert_axis(Axis(0));
        let (activations, gradients) = self.backbone.capture(&x, &dfeat, &self.target_layer);
        Ok(TargetCapture {
            activations,
            gradients,
        })
    }

    /// Head-unit indices ranked by descending score; ties broken by
    /// ascending unit index.
    pub fn predict_topk(&self, image: &Array3<f32>, task_id: usize, k: usize) -> Result<Vec<usize>> {
        if k == 0 || k > self.classes_per_task {
            return Err(Error::Model(format!(
                "k must be in 1..={}, got {k}",
                self.classes_per_task
            )));
        }
        let x = image.to_owned().insert_axis(Axis(0));
        let logits = self.forward(&x, &[task_id])?;
        let mut ranked: Vec<usize> = (0..self.classes_per_task).collect();
        ranked.sort_by(|&a, &b| {
            logits[[0, b]]
                .total_cmp(&logits[[0, a]])
                .then(a.cmp(&b))
        });
        ranked.truncate(k);
        Ok(ranked)
    }
}
