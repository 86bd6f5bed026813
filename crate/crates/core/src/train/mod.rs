//! End-to-end training: backbone → refinement → head → loss, optimized
//! with Adam under early stopping, followed by class-statistics fitting and
//! threshold calibration on the frozen model.

pub mod head;
pub mod optim;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use head::{cac_loss, max_softmax_score, softmax_ce_loss, AnchorSet, Head, LossOutput};
pub use optim::{Adam, EarlyStopping, StopSignal};

use crate::backbone::{Backbone, BackboneConfig, Dropout, ForwardTape};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::refine::{BnMode, RefineFlags, Refiner};
use crate::scorer::{self, ClassStats, Metric, OpenSetDecision};

pub const MODEL_FORMAT: &str = "sphere-osr-model/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Cac,
    Softmax,
}

/// How a trained model turns a feature into a rejection score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMetric {
    /// Nearest class mean under each class's regularized covariance.
    Mahalanobis,
    /// Nearest class mean, plain distance.
    Euclidean,
    /// Nearest anchor in the head's output space (CAC models only).
    Anchor,
    /// Negative maximum softmax probability of the head logits.
    Softmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub dropout: f64,
    pub lambda_anchor: f64,
    pub anchor_magnitude: f64,
    /// Fraction of each known class held out to monitor early stopping.
    pub monitor_fraction: f64,
    pub use_bn: bool,
    pub use_l2n: bool,
    pub bn_affine: bool,
    pub objective: Objective,
    pub score_metric: ScoreMetric,
    pub cov_lambda: f64,
    pub reject_percentile: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            lr: 4e-5,
            weight_decay: 1e-4,
            max_epochs: 25,
            patience: 10,
            seed: 41,
            dropout: 0.1,
            lambda_anchor: 1e-5,
            anchor_magnitude: head::DEFAULT_ANCHOR_MAGNITUDE,
            monitor_fraction: 0.1,
            use_bn: true,
            use_l2n: true,
            bn_affine: true,
            objective: Objective::Cac,
            score_metric: ScoreMetric::Mahalanobis,
            cov_lambda: scorer::DEFAULT_LAMBDA,
            reject_percentile: scorer::DEFAULT_PERCENTILE,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.batch_size < 2 {
            return bad(format!("batch_size must be >= 2, got {}", self.batch_size));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if self.max_epochs == 0 || self.patience == 0 {
            return bad("max_epochs and patience must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if !(self.lambda_anchor >= 0.0 && self.lambda_anchor.is_finite()) {
            return bad(format!("lambda_anchor must be >= 0, got {}", self.lambda_anchor));
        }
        if !(self.anchor_magnitude > 0.0 && self.anchor_magnitude.is_finite()) {
            return bad(format!("anchor_magnitude must be positive, got {}", self.anchor_magnitude));
        }
        if !(self.monitor_fraction > 0.0 && self.monitor_fraction < 1.0) {
            return bad(format!("monitor_fraction must be in (0, 1), got {}", self.monitor_fraction));
        }
        if !(self.cov_lambda > 0.0 && self.cov_lambda.is_finite()) {
            return bad(format!("cov_lambda must be positive, got {}", self.cov_lambda));
        }
        if !(self.reject_percentile > 0.0 && self.reject_percentile < 100.0) {
            return bad(format!("reject_percentile must be in (0, 100), got {}", self.reject_percentile));
        }
        if self.score_metric == ScoreMetric::Anchor && self.objective != Objective::Cac {
            return bad("score_metric \"anchor\" needs the cac objective".into());
        }
        Ok(())
    }

    pub fn refine_flags(&self) -> RefineFlags {
        RefineFlags {
            use_bn: self.use_bn,
            use_l2n: self.use_l2n,
        }
    }
}

/// One labelled input map. Labels index the known classes, `0..K`.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub map: &'a Matrix,
    pub label: usize,
}

/// Known-class training data and the held-out monitor split.
#[derive(Debug, Clone)]
pub struct Splits<'a> {
    pub train: Vec<Example<'a>>,
    pub monitor: Vec<Example<'a>>,
    pub n_classes: usize,
}

impl<'a> Splits<'a> {
    /// Holds out `round(fraction · n_c)` samples (at least one) of every
    /// class with three or more samples.
    pub fn carve(examples: Vec<Example<'a>>, n_classes: usize, fraction: f64, rng: &mut impl Rng) -> Result<Self> {
        let mut by_class: Vec<Vec<Example<'a>>> = vec![Vec::new(); n_classes];
        for ex in examples {
            if ex.label >= n_classes {
                return Err(Error::Protocol(format!(
                    "label {} out of range for {n_classes} classes",
                    ex.label
                )));
            }
            by_class[ex.label].push(ex);
        }
        let mut train = Vec::new();
        let mut monitor = Vec::new();
        for (c, mut group) in by_class.into_iter().enumerate() {
            if group.len() < 2 {
                return Err(Error::Protocol(format!(
                    "class {c} has {} training sample(s), at least 2 are needed",
                    group.len()
                )));
            }
            group.shuffle(rng);
            let held = if group.len() >= 3 {
                ((fraction * group.len() as f64).round() as usize).clamp(1, group.len() - 2)
            } else {
                0
            };
            monitor.extend(group.drain(..held));
            train.extend(group);
        }
        Ok(Self {
            train,
            monitor,
            n_classes,
        })
    }

    fn check(&self) -> Result<()> {
        if self.train.is_empty() {
            return Err(Error::Protocol("empty training split".into()));
        }
        if self.monitor.is_empty() {
            return Err(Error::Protocol("empty monitor split".into()));
        }
        Ok(())
    }
}

/// The differentiable part of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub backbone: Backbone,
    pub refiner: Refiner,
    pub head: Head,
    pub anchors: AnchorSet,
    pub objective: Objective,
    pub lambda_anchor: f64,
}

/// Gradients of one batch loss with respect to every trainable tensor.
#[derive(Debug, Clone)]
pub struct NetworkGrads {
    pub backbone: Vec<Matrix>,
    pub head_w: Matrix,
    pub head_b: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl Network {
    pub fn new(backbone_cfg: BackboneConfig, n_classes: usize, cfg: &TrainConfig, rng: &mut impl Rng) -> Result<Self> {
        let backbone = Backbone::new(backbone_cfg, rng)?;
        let d = backbone.out_dim();
        let head = Head::new(d, n_classes, rng);
        Ok(Self {
            backbone,
            refiner: Refiner::new(d, cfg.refine_flags(), cfg.bn_affine),
            head,
            anchors: AnchorSet::new(n_classes, cfg.anchor_magnitude),
            objective: cfg.objective,
            lambda_anchor: cfg.lambda_anchor,
        })
    }

    fn loss(&self, f: &Matrix, labels: &[usize]) -> Result<LossOutput> {
        match self.objective {
            Objective::Cac => cac_loss(f, labels, &self.head, &self.anchors, self.lambda_anchor),
            Objective::Softmax => softmax_ce_loss(f, labels, &self.head),
        }
    }

    fn raw_features(&self, maps: &[&Matrix], dropouts: &[Dropout]) -> Result<(Matrix, Vec<ForwardTape>)> {
        let d = self.backbone.out_dim();
        let mut z = Matrix::zeros(maps.len(), d);
        let mut tapes = Vec::with_capacity(maps.len());
        for (i, (m, &drop)) in maps.iter().zip(dropouts).enumerate() {
            let (zi, tape) = self.backbone.forward(m, drop)?;
            z.row_mut(i).copy_from_slice(&zi);
            tapes.push(tape);
        }
        Ok((z, tapes))
    }

    /// Loss and exact gradients of one batch. Runs the refiner in its
    /// current mode, so train-mode BN statistics are updated.
    pub fn loss_and_grads(&mut self, maps: &[&Matrix], labels: &[usize], dropouts: &[Dropout]) -> Result<(LossOutput, NetworkGrads)> {
        if maps.len() != dropouts.len() {
            return Err(Error::Shape("one dropout setting per map expected".into()));
        }
        let (z, tapes) = self.raw_features(maps, dropouts)?;
        let (f, rtape) = self.refiner.forward(&z)?;
        let out = self.loss(&f, labels)?;
        let rg = self.refiner.backward(&rtape, &out.grad_f);
        let mut backbone = self.backbone.params.zeros_like();
        for (i, tape) in tapes.iter().enumerate() {
            let g = self.backbone.backward(tape, rg.input.row(i))?;
            for (acc, gi) in backbone.iter_mut().zip(&g.params) {
                acc.axpy(1.0, gi);
            }
        }
        let grads = NetworkGrads {
            backbone,
            head_w: out.grad_w.clone(),
            head_b: out.grad_b.clone(),
            gamma: rg.gamma,
            beta: rg.beta,
        };
        Ok((out, grads))
    }

    /// Eval-mode refined features, one row per map.
    pub fn refined_features(&self, maps: &[&Matrix]) -> Result<Matrix> {
        let (z, _) = self.raw_features(maps, &vec![Dropout::Off; maps.len()])?;
        Ok(self.refiner.forward_eval(&z)?.0)
    }

    /// Eval-mode loss without gradients.
    pub fn eval_loss(&self, maps: &[&Matrix], labels: &[usize]) -> Result<f64> {
        let f = self.refined_features(maps)?;
        Ok(self.loss(&f, labels)?.loss)
    }

    fn apply(&mut self, adam: &mut Adam, grads: &NetworkGrads) -> Result<()> {
        let Network {
            backbone,
            refiner,
            head,
            ..
        } = self;
        let trainable: Vec<bool> = backbone.params.iter().map(|p| p.trainable).collect();
        let mut params: Vec<&mut [f64]> = Vec::new();
        let mut gs: Vec<&[f64]> = Vec::new();
        for ((p, g), &t) in backbone.params.params_mut().iter_mut().zip(&grads.backbone).zip(&trainable) {
            if t {
                params.push(p.value.as_mut_slice());
                gs.push(g.as_slice());
            }
        }
        params.push(head.w.as_mut_slice());
        gs.push(grads.head_w.as_slice());
        params.push(&mut head.b);
        gs.push(&grads.head_b);
        if refiner.flags.use_bn && refiner.bn.affine {
            params.push(&mut refiner.bn.gamma);
            gs.push(&grads.gamma);
            params.push(&mut refiner.bn.beta);
            gs.push(&grads.beta);
        }
        adam.step(&mut params, &gs)
    }

    fn slot_sizes(&self) -> Vec<usize> {
        let mut sizes: Vec<usize> = self
            .backbone
            .params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.as_slice().len())
            .collect();
        sizes.push(self.head.w.as_slice().len());
        sizes.push(self.head.b.len());
        if self.refiner.flags.use_bn && self.refiner.bn.affine {
            sizes.push(self.refiner.bn.dim());
            sizes.push(self.refiner.bn.dim());
        }
        sizes
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub monitor_loss: f64,
}

/// A frozen model: network in eval mode, class statistics and threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub format: String,
    pub config: TrainConfig,
    pub n_classes: usize,
    pub network: Network,
    pub class_stats: Vec<ClassStats>,
    pub threshold: f64,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

/// Splits `0..n` into shuffled batches of `size`, folding a trailing
/// singleton into the previous batch (train-mode BN needs two rows).
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
        let start = (out.len() - 1) * size;
        *out.last_mut().unwrap() = &order[start..];
    }
    out
}

/// Trains the network under `cfg`, restores the best monitor epoch, freezes
/// BN and fits class statistics and τ on the full training split.
pub fn train_model(backbone_cfg: &BackboneConfig, splits: &Splits<'_>, cfg: &TrainConfig) -> Result<TrainedModel> {
    cfg.validate()?;
    splits.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = Network::new(backbone_cfg.clone(), splits.n_classes, cfg, &mut rng)?;
    let mut adam = Adam::new(cfg.lr, cfg.weight_decay, &net.slot_sizes());
    let mut stopper = EarlyStopping::new(cfg.patience);

    let monitor_maps: Vec<&Matrix> = splits.monitor.iter().map(|e| e.map).collect();
    let monitor_labels: Vec<usize> = splits.monitor.iter().map(|e| e.label).collect();
    let mut order: Vec<usize> = (0..splits.train.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<Network> = None;

    for epoch in 1..=cfg.max_epochs {
        net.refiner.set_mode(BnMode::Train);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in batches(&order, cfg.batch_size) {
            let maps: Vec<&Matrix> = batch.iter().map(|&i| splits.train[i].map).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| splits.train[i].label).collect();
            let dropouts: Vec<Dropout> = batch
                .iter()
                .map(|_| {
                    let seed = rng.random();
                    if cfg.dropout > 0.0 {
                        Dropout::Seeded {
                            rate: cfg.dropout,
                            seed,
                        }
                    } else {
                        Dropout::Off
                    }
                })
                .collect();
            let (out, grads) = net.loss_and_grads(&maps, &labels, &dropouts)?;
            if !out.loss.is_finite() {
                return Err(Error::Training(format!("loss became {} in epoch {epoch}", out.loss)));
            }
            net.apply(&mut adam, &grads)?;
            total += out.loss * batch.len() as f64;
        }
        net.refiner.set_mode(BnMode::Eval);
        let monitor_loss = net.eval_loss(&monitor_maps, &monitor_labels)?;
        let train_loss = total / splits.train.len() as f64;
        log::debug!("epoch {epoch}: train {train_loss:.6} monitor {monitor_loss:.6}");
        history.push(EpochRecord {
            epoch,
            train_loss,
            monitor_loss,
        });
        match stopper.observe(epoch, monitor_loss) {
            StopSignal::Improved => best = Some(net.clone()),
            StopSignal::Continue => {}
            StopSignal::Stop => break,
        }
    }

    let mut net = best.ok_or_else(|| Error::Training("monitor loss never became finite".into()))?;
    net.refiner.set_mode(BnMode::Eval);
    finalize(net, splits, cfg, stopper.best_epoch(), history)
}

fn finalize(net: Network, splits: &Splits<'_>, cfg: &TrainConfig, best_epoch: usize, history: Vec<EpochRecord>) -> Result<TrainedModel> {
    let all: Vec<&Example<'_>> = splits.train.iter().chain(&splits.monitor).collect();
    let maps: Vec<&Matrix> = all.iter().map(|e| e.map).collect();
    let labels: Vec<usize> = all.iter().map(|e| e.label).collect();
    let features = net.refined_features(&maps)?;
    let class_stats = scorer::fit_stats(&features, &labels, cfg.cov_lambda, cfg.use_l2n)?;
    let mut model = TrainedModel {
        format: MODEL_FORMAT.into(),
        config: cfg.clone(),
        n_classes: splits.n_classes,
        network: net,
        class_stats,
        threshold: f64::INFINITY,
        best_epoch,
        history,
    };
    let scores: Vec<f64> = features
        .row_iter()
        .map(|f| model.score_feature(f).map(|(s, _)| s))
        .collect::<Result<_>>()?;
    model.threshold = scorer::calibrate_threshold(&scores, cfg.reject_percentile)?;
    Ok(model)
}

/// Plain backbone + linear classifier trained with cross-entropy and scored
/// by negative maximum softmax probability. Refinement is switched off.
pub fn train_softmax_baseline(backbone_cfg: &BackboneConfig, splits: &Splits<'_>, cfg: &TrainConfig) -> Result<TrainedModel> {
    let cfg = TrainConfig {
        objective: Objective::Softmax,
        score_metric: ScoreMetric::Softmax,
        use_bn: false,
        use_l2n: false,
        ..cfg.clone()
    };
    train_model(backbone_cfg, splits, &cfg)
}

impl TrainedModel {
    /// Refined feature of one map (eval mode, no dropout).
    pub fn feature(&self, map: &Matrix) -> Result<Vec<f64>> {
        Ok(self.network.refined_features(&[map])?.into_vec())
    }

    /// `(s, ŷ)` for a refined feature under the configured metric.
    pub fn score_feature(&self, f: &[f64]) -> Result<(f64, usize)> {
        match self.config.score_metric {
            ScoreMetric::Mahalanobis => scorer::rejection_score(f, &self.class_stats, Metric::Mahalanobis),
            ScoreMetric::Euclidean => scorer::rejection_score(f, &self.class_stats, Metric::Euclidean),
            ScoreMetric::Anchor | ScoreMetric::Softmax => {
                let fm = Matrix::from_vec(1, f.len(), f.to_vec())?;
                let p = self.network.head.forward(&fm)?.into_vec();
                let logits = match self.network.objective {
                    Objective::Cac => {
                        let d = self.network.anchors.distances(&p);
                        if self.config.score_metric == ScoreMetric::Anchor {
                            let mut best = 0;
                            for c in 1..d.len() {
                                if d[c] < d[best] {
                                    best = c;
                                }
                            }
                            return Ok((d[best], best));
                        }
                        d.iter().map(|v| -v).collect()
                    }
                    Objective::Softmax => p,
                };
                Ok(max_softmax_score(&logits))
            }
        }
    }

    pub fn score(&self, map: &Matrix) -> Result<(f64, usize)> {
        self.score_feature(&self.feature(map)?)
    }

    /// Scores many maps in one eval pass.
    pub fn score_all(&self, maps: &[&Matrix]) -> Result<Vec<(f64, usize)>> {
        let f = self.network.refined_features(maps)?;
        f.row_iter().map(|r| self.score_feature(r)).collect()
    }

    pub fn decide(&self, map: &Matrix) -> Result<OpenSetDecision> {
        let (s, y) = self.score(map)?;
        Ok(scorer::decide(s, y, self.threshold))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, String> {
        let model: TrainedModel = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if model.format != MODEL_FORMAT {
            return Err(format!("unsupported model format {:?}, expected {MODEL_FORMAT:?}", model.format));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|msg| Error::Load(vec![format!("{}: {msg}", path.display())]))
    }
}

#[cfg(test)]
mod tests {
    use rand_distr::{Distribution, Normal};

    use super::*;
    use crate::backbone::{AttentionConfig, MlpConfig};
    use crate::linalg::norm2;

    fn mlp(channels: usize, out_dim: usize) -> BackboneConfig {
        BackboneConfig::Mlp(MlpConfig {
            channels,
            hidden: 8,
            out_dim,
            activation: Default::default(),
        })
    }

    fn rel_err(a: f64, n: f64) -> f64 {
        (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
    }

    /// Separable toy maps: class `c` is centred on `3·e_c` in channel space.
    fn toy_maps(n_per_class: usize, k: usize, t: usize, seed: u64) -> Vec<(Matrix, usize)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let mut out = Vec::new();
        for c in 0..k {
            for _ in 0..n_per_class {
                let mut m = Matrix::zeros(t, k);
                for i in 0..t {
                    for j in 0..k {
                        m[(i, j)] = if j == c { 3.0 } else { 0.0 } + noise.sample(&mut rng);
                    }
                }
                out.push((m, c));
            }
        }
        out
    }

    fn examples(data: &[(Matrix, usize)]) -> Vec<Example<'_>> {
        data.iter().map(|(m, l)| Example { map: m, label: *l }).collect()
    }

    fn composed_check(backbone_cfg: BackboneConfig, t: usize, c: usize) {
        let cfg = TrainConfig {
            lambda_anchor: 0.3,
            ..TrainConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut net = Network::new(backbone_cfg, 3, &cfg, &mut rng).unwrap();
        net.head.w.scale(4.0);
        net.refiner.bn.gamma = vec![1.3; net.refiner.bn.dim()];
        let maps: Vec<Matrix> = (0..4)
            .map(|_| Matrix::from_vec(t, c, (0..t * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap())
            .collect();
        let refs: Vec<&Matrix> = maps.iter().collect();
        let labels = [0, 1, 2, 1];
        let drops: Vec<Dropout> = (0..4).map(|i| Dropout::Seeded { rate: 0.2, seed: i }).collect();
        let (_, grads) = net.clone().loss_and_grads(&refs, &labels, &drops).unwrap();
        let loss_of = |n: &Network| n.clone().loss_and_grads(&refs, &labels, &drops).unwrap().0.loss;

        let eps = 1e-5;
        let mut worst: f64 = 0.0;
        let mut probe = net.clone();
        for pi in 0..grads.backbone.len() {
            for k in 0..grads.backbone[pi].as_slice().len() {
                let orig = probe.backbone.params.iter().nth(pi).unwrap().value.as_slice()[k];
                probe.backbone.params.params_mut()[pi].value.as_mut_slice()[k] = orig + eps;
                let up = loss_of(&probe);
                probe.backbone.params.params_mut()[pi].value.as_mut_slice()[k] = orig - eps;
                let down = loss_of(&probe);
                probe.backbone.params.params_mut()[pi].value.as_mut_slice()[k] = orig;
                worst = worst.max(rel_err(grads.backbone[pi].as_slice()[k], (up - down) / (2.0 * eps)));
            }
        }
        for k in 0..probe.head.w.as_slice().len() {
            let orig = probe.head.w.as_slice()[k];
            probe.head.w.as_mut_slice()[k] = orig + eps;
            let up = loss_of(&probe);
            probe.head.w.as_mut_slice()[k] = orig - eps;
            let down = loss_of(&probe);
            probe.head.w.as_mut_slice()[k] = orig;
            worst = worst.max(rel_err(grads.head_w.as_slice()[k], (up - down) / (2.0 * eps)));
        }
        for j in 0..probe.refiner.bn.dim() {
            let orig = probe.refiner.bn.gamma[j];
            probe.refiner.bn.gamma[j] = orig + eps;
            let up = loss_of(&probe);
            probe.refiner.bn.gamma[j] = orig - eps;
            let down = loss_of(&probe);
            probe.refiner.bn.gamma[j] = orig;
            worst = worst.max(rel_err(grads.gamma[j], (up - down) / (2.0 * eps)));
        }
        assert!(worst < 1e-4, "composed graph rel err {worst}");
    }

    #[test]
    fn composed_gradient_mlp() {
        composed_check(mlp(3, 5), 6, 3);
    }

    #[test]
    fn composed_gradient_attention() {
        let cfg = AttentionConfig {
            t_steps: 4,
            channels: 3,
            d_model: 8,
            n_heads: 2,
            n_layers: 1,
            ffn_dim: 12,
            freeze_pos: false,
        };
        composed_check(BackboneConfig::Attention(cfg), 4, 3);
    }

    #[test]
    fn batches_fold_trailing_singleton() {
        let order: Vec<usize> = (0..33).collect();
        let b = batches(&order, 16);
        assert_eq!(b.iter().map(|x| x.len()).collect::<Vec<_>>(), vec![16, 17]);
        let order: Vec<usize> = (0..34).collect();
        assert_eq!(batches(&order, 16).len(), 3);
    }

    #[test]
    fn carve_is_stratified() {
        let data = toy_maps(20, 3, 2, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = Splits::carve(examples(&data), 3, 0.1, &mut rng).unwrap();
        assert_eq!(s.monitor.len(), 6);
        assert_eq!(s.train.len(), 54);
        for c in 0..3 {
            assert_eq!(s.monitor.iter().filter(|e| e.label == c).count(), 2);
        }
    }

    fn quick_cfg() -> TrainConfig {
        TrainConfig {
            lr: 1e-2,
            max_epochs: 8,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn separable_toy_is_learned() {
        let data = toy_maps(30, 3, 5, 2);
        let test = toy_maps(30, 3, 5, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let splits = Splits::carve(examples(&data), 3, 0.1, &mut rng).unwrap();
        let model = train_model(&mlp(3, 6), &splits, &quick_cfg()).unwrap();
        let maps: Vec<&Matrix> = test.iter().map(|(m, _)| m).collect();
        let scored = model.score_all(&maps).unwrap();
        let correct = scored.iter().zip(&test).filter(|((_, y), (_, l))| y == l).count();
        let acc = correct as f64 / test.len() as f64;
        assert!(acc >= 0.99, "accuracy {acc}");

        // refined training features sit on the sphere
        let f = model.network.refined_features(&maps).unwrap();
        for row in f.row_iter() {
            assert!((norm2(row) - 1.0).abs() < 1e-12);
        }
        assert_eq!(model.class_stats.len(), 3);
        assert!(model.threshold.is_finite());
    }

    #[test]
    fn training_is_deterministic_and_round_trips() {
        let data = toy_maps(10, 3, 4, 4);
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let splits = Splits::carve(examples(&data), 3, 0.1, &mut rng).unwrap();
            train_model(&mlp(3, 4), &splits, &quick_cfg()).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.to_json(), b.to_json());
        let back = TrainedModel::from_json(&a.to_json()).unwrap();
        assert_eq!(back, a);
        assert_eq!(back.to_json(), a.to_json());
    }

    #[test]
    fn early_stopping_restores_best_epoch() {
        // shuffled labels: the monitor loss turns upward once the net memorizes
        let mut data = toy_maps(12, 3, 4, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut labels: Vec<usize> = data.iter().map(|d| d.1).collect();
        labels.shuffle(&mut rng);
        data.iter_mut().zip(labels).for_each(|(d, l)| d.1 = l);
        let splits = Splits::carve(examples(&data), 3, 0.25, &mut rng).unwrap();
        let cfg = TrainConfig {
            lr: 3e-2,
            max_epochs: 30,
            patience: 4,
            ..TrainConfig::default()
        };
        let full = train_model(&mlp(3, 4), &splits, &cfg).unwrap();
        let best = full.best_epoch;
        assert!(best < full.history.len(), "run should continue past its best epoch");
        let best_loss = full.history[best - 1].monitor_loss;
        assert!(full.history.iter().all(|h| h.monitor_loss >= best_loss));

        // stopping the same run at the best epoch ends on identical weights
        let truncated = train_model(&mlp(3, 4), &splits, &TrainConfig { max_epochs: best, ..cfg.clone() }).unwrap();
        assert_eq!(
            serde_json::to_string(&full.network).unwrap(),
            serde_json::to_string(&truncated.network).unwrap()
        );
    }

    #[test]
    fn softmax_baseline_trains() {
        let data = toy_maps(20, 3, 4, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let splits = Splits::carve(examples(&data), 3, 0.1, &mut rng).unwrap();
        let model = train_softmax_baseline(&mlp(3, 4), &splits, &quick_cfg()).unwrap();
        assert_eq!(model.config.score_metric, ScoreMetric::Softmax);
        let (s, _) = model.score(&data[0].0).unwrap();
        assert!((-1.0..=-1.0 / 3.0).contains(&s));
    }

    #[test]
    fn empty_monitor_is_protocol_error() {
        let data = toy_maps(4, 2, 2, 9);
        let splits = Splits {
            train: examples(&data),
            monitor: vec![],
            n_classes: 2,
        };
        assert!(matches!(
            train_model(&mlp(2, 3), &splits, &quick_cfg()),
            Err(Error::Protocol(_))
        ));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            objective: Objective::Softmax,
            score_metric: ScoreMetric::Anchor,
            ..TrainConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        assert!(serde_json::from_str::<TrainConfig>(r#"{"lr": 0.1, "bogus": 1}"#).is_err());
        let partial: TrainConfig = serde_json::from_str(r#"{"lr": 0.1}"#).unwrap();
        assert_eq!(partial.batch_size, 16);
    }
}
