//! Frozen tanh MLP with LoRA adapters on selected hidden layers.
//!
//! Layer `l` computes `tanh((W_l + B_l A_l)·x + b_l)`; a frozen linear head
//! maps the last hidden activation to class logits. Only the adapter
//! factors are ever trained after construction. Gradients are the analytic
//! backprop of mean softmax cross-entropy; the factor gradients follow from
//! the weight gradient `G` as `dB = G·Aᵀ` and `dA = Bᵀ·G`.

use std::borrow::Cow;
use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::lora::{LoraAdapter, LoraConfig};
use crate::numerics::{AdamConfig, AdamState, Matrix, Rng};

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    /// `out × in`.
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub hidden: usize,
    pub num_hidden_layers: usize,
    /// Indices of hidden layers that receive adapters.
    pub adapted_layers: Vec<usize>,
    /// Std of the frozen head entries is `head_scale / sqrt(hidden)`.
    pub head_scale: f64,
    pub pretrain_size: usize,
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            hidden: 32,
            num_hidden_layers: 2,
            adapted_layers: vec![0, 1],
            head_scale: 4.0,
            pretrain_size: 2_000,
            pretrain_epochs: 5,
            pretrain_lr: 1e-2,
        }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.num_hidden_layers == 0 {
            return Err(Error::InvalidArgument(
                "model needs at least one hidden unit and layer".into(),
            ));
        }
        if self.adapted_layers.is_empty() {
            return Err(Error::InvalidArgument(
                "at least one layer must be adapted".into(),
            ));
        }
        let mut seen = self.adapted_layers.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.adapted_layers.len() || seen != self.adapted_layers {
            return Err(Error::InvalidArgument(
                "adapted_layers must be strictly increasing".into(),
            ));
        }
        if *seen.last().unwrap() >= self.num_hidden_layers {
            return Err(Error::InvalidArgument(format!(
                "adapted layer {} does not exist",
                seen.last().unwrap()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrozenBackbone {
    layers: Vec<DenseLayer>,
    head: Matrix,
    adapted: Vec<usize>,
}

/// Gradients of one adapter's factors.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorGrads {
    pub b: Matrix,
    pub a: Matrix,
}

struct Backprop {
    loss: f64,
    weight_grads: Vec<Matrix>,
    bias_grads: Vec<Vec<f64>>,
    head_grad: Option<Matrix>,
}

impl FrozenBackbone {
    pub fn new(layers: Vec<DenseLayer>, head: Matrix, adapted: Vec<usize>) -> Result<Self> {
        let mut width = None;
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.weight.rows() {
                return Err(Error::InvalidArgument(format!(
                    "layer {i}: bias length mismatch"
                )));
            }
            if let Some(w) = width {
                if l.weight.cols() != w {
                    return Err(Error::ShapeMismatch {
                        op: "FrozenBackbone::new",
                        left: layers[i - 1].weight.shape(),
                        right: l.weight.shape(),
                    });
                }
            }
            width = Some(l.weight.rows());
        }
        if width != Some(head.cols()) {
            return Err(Error::InvalidArgument(
                "head width must match last hidden layer".into(),
            ));
        }
        if adapted.iter().any(|&i| i >= layers.len()) {
            return Err(Error::InvalidArgument("adapted layer out of range".into()));
        }
        Ok(FrozenBackbone {
            layers,
            head,
            adapted,
        })
    }

    /// Trains all layers with a throwaway head on `pool`, then freezes them
    /// and attaches a fresh random head.
    pub fn pretrained(
        spec: &ModelSpec,
        input_dim: usize,
        num_classes: usize,
        pool: &Dataset,
        rng: &mut Rng,
    ) -> Result<Self> {
        spec.validate()?;
        let mut layers = Vec::with_capacity(spec.num_hidden_layers);
        let mut fan_in = input_dim;
        for _ in 0..spec.num_hidden_layers {
            let std = (1.0 / fan_in as f64).sqrt();
            layers.push(DenseLayer {
                weight: Matrix::from_fn(spec.hidden, fan_in, |_, _| rng.normal(0.0, std)),
                bias: vec![0.0; spec.hidden],
            });
            fan_in = spec.hidden;
        }
        let head_std = (1.0 / spec.hidden as f64).sqrt();
        let mut head = Matrix::from_fn(num_classes, spec.hidden, |_, _| rng.normal(0.0, head_std));

        if spec.pretrain_epochs > 0 && !pool.is_empty() {
            let cfg = AdamConfig {
                lr: spec.pretrain_lr,
                ..AdamConfig::default()
            };
            let mut w_opt: Vec<AdamState> = layers
                .iter()
                .map(|l| AdamState::new(l.weight.rows(), l.weight.cols(), cfg))
                .collect();
            let mut b_opt: Vec<AdamState> = layers
                .iter()
                .map(|l| AdamState::new(1, l.bias.len(), cfg))
                .collect();
            let mut h_opt = AdamState::new(head.rows(), head.cols(), cfg);
            let mut order: Vec<usize> = (0..pool.len()).collect();
            for _ in 0..spec.pretrain_epochs {
                rng.shuffle(&mut order);
                for batch in order.chunks(32) {
                    let x = pool.features.gather_rows(batch);
                    let y: Vec<usize> = batch.iter().map(|&i| pool.labels[i]).collect();
                    let weights: Vec<&Matrix> = layers.iter().map(|l| &l.weight).collect();
                    let biases: Vec<&[f64]> = layers.iter().map(|l| l.bias.as_slice()).collect();
                    let bp = backprop(&weights, &biases, &head, &x, &y, true)?;
                    for (i, layer) in layers.iter_mut().enumerate() {
                        w_opt[i].update(&mut layer.weight, &bp.weight_grads[i])?;
                        let mut bias = Matrix::new(1, layer.bias.len(), layer.bias.clone())?;
                        let grad = Matrix::new(1, layer.bias.len(), bp.bias_grads[i].clone())?;
                        b_opt[i].update(&mut bias, &grad)?;
                        layer.bias = bias.into_data();
                    }
                    h_opt.update(&mut head, bp.head_grad.as_ref().expect("requested"))?;
                }
            }
        }

        let frozen_std = spec.head_scale / (spec.hidden as f64).sqrt();
        let head = Matrix::from_fn(num_classes, spec.hidden, |_, _| rng.normal(0.0, frozen_std));
        FrozenBackbone::new(layers, head, spec.adapted_layers.clone())
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn head(&self) -> &Matrix {
        &self.head
    }

    pub fn adapted_layers(&self) -> &[usize] {
        &self.adapted
    }

    pub fn num_classes(&self) -> usize {
        self.head.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.cols()
    }

    /// LoRA shapes for each adapted layer at `rank`.
    pub fn adapter_configs(&self, rank: usize) -> Vec<LoraConfig> {
        self.adapted
            .iter()
            .map(|&i| {
                let (m, n) = self.layers[i].weight.shape();
                LoraConfig {
                    m,
                    n,
                    rank,
                    num_adapted_matrices: 1,
                }
            })
            .collect()
    }

    pub fn init_adapters(&self, rank: usize, rng: &mut Rng) -> Vec<LoraAdapter> {
        self.adapter_configs(rank)
            .iter()
            .map(|cfg| LoraAdapter::init(cfg, rng))
            .collect()
    }

    /// Hash of every frozen parameter's bit pattern.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for l in &self.layers {
            for v in l.weight.data().iter().chain(&l.bias) {
                v.to_bits().hash(&mut h);
            }
        }
        for v in self.head.data() {
            v.to_bits().hash(&mut h);
        }
        self.adapted.hash(&mut h);
        h.finish()
    }

    fn check_adapters(&self, adapters: &[LoraAdapter]) -> Result<()> {
        if adapters.len() != self.adapted.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} adapters, got {}",
                self.adapted.len(),
                adapters.len()
            )));
        }
        for (&i, ad) in self.adapted.iter().zip(adapters) {
            let host = self.layers[i].weight.shape();
            if (ad.m(), ad.n()) != host {
                return Err(Error::ShapeMismatch {
                    op: "adapter vs host layer",
                    left: (ad.m(), ad.n()),
                    right: host,
                });
            }
        }
        Ok(())
    }

    fn effective_weights<'a>(&'a self, adapters: &[LoraAdapter]) -> Result<Vec<Cow<'a, Matrix>>> {
        self.check_adapters(adapters)?;
        let mut out: Vec<Cow<Matrix>> = self
            .layers
            .iter()
            .map(|l| Cow::Borrowed(&l.weight))
            .collect();
        for (&i, ad) in self.adapted.iter().zip(adapters) {
            out[i] = Cow::Owned(self.layers[i].weight.add(&ad.delta())?);
        }
        Ok(out)
    }

    /// Class logits, one row per input row.
    pub fn forward(&self, adapters: &[LoraAdapter], x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                op: "forward",
                left: x.shape(),
                right: self.layers[0].weight.shape(),
            });
        }
        let eff = self.effective_weights(adapters)?;
        let weights: Vec<&Matrix> = eff.iter().map(|w| w.as_ref()).collect();
        let biases: Vec<&[f64]> = self.layers.iter().map(|l| l.bias.as_slice()).collect();
        let acts = hidden_activations(&weights, &biases, x)?;
        acts.last()
            .expect("input row")
            .matmul_transposed(&self.head)
    }

    /// Mean cross-entropy and gradients for every adapter's factors.
    pub fn loss_and_grads(
        &self,
        adapters: &[LoraAdapter],
        x: &Matrix,
        labels: &[usize],
    ) -> Result<(f64, Vec<FactorGrads>)> {
        if labels.is_empty() || labels.len() != x.rows() {
            return Err(Error::InvalidArgument(
                "batch must be nonempty and labelled".into(),
            ));
        }
        if x.cols() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                op: "loss_and_grads",
                left: x.shape(),
                right: self.layers[0].weight.shape(),
            });
        }
        let eff = self.effective_weights(adapters)?;
        let weights: Vec<&Matrix> = eff.iter().map(|w| w.as_ref()).collect();
        let biases: Vec<&[f64]> = self.layers.iter().map(|l| l.bias.as_slice()).collect();
        let bp = backprop(&weights, &biases, &self.head, x, labels, false)?;
        let grads = self
            .adapted
            .iter()
            .zip(adapters)
            .map(|(&i, ad)| {
                let g = &bp.weight_grads[i];
                Ok(FactorGrads {
                    b: g.matmul_transposed(ad.a())?,
                    a: ad.b().transposed_matmul(g)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok((bp.loss, grads))
    }

    pub fn loss(&self, adapters: &[LoraAdapter], data: &Dataset) -> Result<f64> {
        let logits = self.forward(adapters, &data.features)?;
        Ok(cross_entropy(&logits, &data.labels).0)
    }

    /// Argmax accuracy; ties resolve to the lowest class index.
    pub fn evaluate(&self, adapters: &[LoraAdapter], data: &Dataset) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::InvalidArgument(
                "cannot evaluate on an empty split".into(),
            ));
        }
        let logits = self.forward(adapters, &data.features)?;
        let correct = (0..logits.rows())
            .filter(|&r| argmax(logits.row(r)) == data.labels[r])
            .count();
        Ok(correct as f64 / data.len() as f64)
    }

    /// Runs `opts.epochs` passes of shuffled minibatch Adam over `data`,
    /// touching only the adapter factors.
    pub fn local_train(
        &self,
        adapters: &mut [LoraAdapter],
        optim: &mut [FactorOptim],
        data: &Dataset,
        opts: &TrainOptions,
        rng: &mut Rng,
    ) -> Result<()> {
        if data.is_empty() {
            return Err(Error::InvalidArgument("local shard is empty".into()));
        }
        if optim.len() != adapters.len() {
            return Err(Error::InvalidArgument("one optimizer per adapter".into()));
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        for _ in 0..opts.epochs {
            rng.shuffle(&mut order);
            for batch in order.chunks(opts.batch_size.max(1)) {
                let x = data.features.gather_rows(batch);
                let y: Vec<usize> = batch.iter().map(|&i| data.labels[i]).collect();
                let (_, grads) = self.loss_and_grads(adapters, &x, &y)?;
                for ((ad, opt), g) in adapters.iter_mut().zip(optim.iter_mut()).zip(&grads) {
                    opt.b.update(ad.b_mut(), &g.b)?;
                    opt.a.update(ad.a_mut(), &g.a)?;
                }
            }
        }
        Ok(())
    }
}

/// Bundles a shared backbone with one adapter per adapted layer.
#[derive(Clone, Debug)]
pub struct AdaptedModel {
    pub backbone: Arc<FrozenBackbone>,
    pub adapters: Vec<LoraAdapter>,
}

impl AdaptedModel {
    pub fn new(backbone: Arc<FrozenBackbone>, adapters: Vec<LoraAdapter>) -> Result<Self> {
        backbone.check_adapters(&adapters)?;
        Ok(AdaptedModel { backbone, adapters })
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        self.backbone.forward(&self.adapters, x)
    }

    pub fn evaluate(&self, data: &Dataset) -> Result<f64> {
        self.backbone.evaluate(&self.adapters, data)
    }

    pub fn loss_and_grads(&self, x: &Matrix, labels: &[usize]) -> Result<(f64, Vec<FactorGrads>)> {
        self.backbone.loss_and_grads(&self.adapters, x, labels)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 1,
            batch_size: 32,
        }
    }
}

/// Adam states for the two factors of one adapter.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorOptim {
    pub b: AdamState,
    pub a: AdamState,
}

impl FactorOptim {
    pub fn for_adapter(adapter: &LoraAdapter, cfg: AdamConfig) -> Self {
        FactorOptim {
            b: AdamState::new(adapter.m(), adapter.rank(), cfg),
            a: AdamState::new(adapter.rank(), adapter.n(), cfg),
        }
    }

    pub fn matches(&self, adapter: &LoraAdapter) -> bool {
        self.b.shape() == adapter.b().shape() && self.a.shape() == adapter.a().shape()
    }
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Activations `[x, a_1, …, a_L]`.
fn hidden_activations(weights: &[&Matrix], biases: &[&[f64]], x: &Matrix) -> Result<Vec<Matrix>> {
    let mut acts = Vec::with_capacity(weights.len() + 1);
    acts.push(x.clone());
    for (w, b) in weights.iter().zip(biases) {
        let mut z = acts.last().unwrap().matmul_transposed(w)?;
        for r in 0..z.rows() {
            for (v, bias) in z.row_mut(r).iter_mut().zip(b.iter()) {
                *v = (*v + bias).tanh();
            }
        }
        acts.push(z);
    }
    Ok(acts)
}

/// Mean loss and `∂loss/∂logits`.
fn cross_entropy(logits: &Matrix, labels: &[usize]) -> (f64, Matrix) {
    let n = logits.rows() as f64;
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    let mut loss = 0.0;
    for r in 0..logits.rows() {
        let row = logits.row(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        loss += log_z - row[labels[r]];
        let g = grad.row_mut(r);
        for (c, v) in row.iter().enumerate() {
            g[c] = (v - log_z).exp() / n;
        }
        g[labels[r]] -= 1.0 / n;
    }
    (loss / n, grad)
}

fn backprop(
    weights: &[&Matrix],
    biases: &[&[f64]],
    head: &Matrix,
    x: &Matrix,
    labels: &[usize],
    with_head: bool,
) -> Result<Backprop> {
    let acts = hidden_activations(weights, biases, x)?;
    let top = acts.last().unwrap();
    let logits = top.matmul_transposed(head)?;
    let (loss, d_logits) = cross_entropy(&logits, labels);
    let head_grad = if with_head {
        Some(d_logits.transposed_matmul(top)?)
    } else {
        None
    };
    let mut d_act = d_logits.matmul(head)?;
    let mut weight_grads = vec![Matrix::zeros(0, 0); weights.len()];
    let mut bias_grads = vec![Vec::new(); weights.len()];
    for l in (0..weights.len()).rev() {
        let a = &acts[l + 1];
        let mut dz = d_act;
        for (g, &y) in dz.data_mut().iter_mut().zip(a.data()) {
            *g *= 1.0 - y * y;
        }
        weight_grads[l] = dz.transposed_matmul(&acts[l])?;
        let mut db = vec![0.0; dz.cols()];
        for r in 0..dz.rows() {
            for (s, v) in db.iter_mut().zip(dz.row(r)) {
                *s += v;
            }
        }
        bias_grads[l] = db;
        d_act = dz.matmul(weights[l])?;
    }
    Ok(Backprop {
        loss,
        weight_grads,
        bias_grads,
        head_grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_task, TaskSpec};

    fn tiny_backbone(rng: &mut Rng) -> FrozenBackbone {
        let layers = vec![
            DenseLayer {
                weight: Matrix::from_fn(5, 3, |_, _| rng.normal(0.0, 0.6)),
                bias: (0..5).map(|_| rng.normal(0.0, 0.1)).collect(),
            },
            DenseLayer {
                weight: Matrix::from_fn(4, 5, |_, _| rng.normal(0.0, 0.5)),
                bias: (0..4).map(|_| rng.normal(0.0, 0.1)).collect(),
            },
        ];
        let head = Matrix::from_fn(3, 4, |_, _| rng.normal(0.0, 1.0));
        FrozenBackbone::new(layers, head, vec![0, 1]).unwrap()
    }

    fn random_adapters(bb: &FrozenBackbone, rank: usize, rng: &mut Rng) -> Vec<LoraAdapter> {
        bb.adapter_configs(rank)
            .iter()
            .map(|c| {
                LoraAdapter::new(
                    Matrix::from_fn(c.m, rank, |_, _| rng.normal(0.0, 0.3)),
                    Matrix::from_fn(rank, c.n, |_, _| rng.normal(0.0, 0.3)),
                )
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn zero_b_matches_backbone() {
        let mut rng = Rng::seed_from(1);
        let bb = tiny_backbone(&mut rng);
        let x = Matrix::from_fn(4, 3, |_, _| rng.normal(0.0, 1.0));
        let fresh = bb.init_adapters(2, &mut rng);
        let zeros: Vec<LoraAdapter> = bb
            .adapter_configs(2)
            .iter()
            .map(|c| LoraAdapter::new(Matrix::zeros(c.m, 2), Matrix::zeros(2, c.n)).unwrap())
            .collect();
        assert_eq!(
            bb.forward(&fresh, &x).unwrap(),
            bb.forward(&zeros, &x).unwrap()
        );
    }

    #[test]
    fn hand_evaluated_forward() {
        // One adapted 2x2 layer, identity head. W = I, b = 0, B = [1,0]ᵀ, A = [0,1].
        let layers = vec![DenseLayer {
            weight: Matrix::identity(2),
            bias: vec![0.0, 0.0],
        }];
        let bb = FrozenBackbone::new(layers, Matrix::identity(2), vec![0]).unwrap();
        let ad = LoraAdapter::new(
            Matrix::from_rows(&[[1.0], [0.0]]),
            Matrix::from_rows(&[[0.0, 1.0]]),
        )
        .unwrap();
        let x = Matrix::from_rows(&[[0.5, -0.25]]);
        // (I + BA)x = [0.5 - 0.25, -0.25]
        let out = bb.forward(&[ad], &x).unwrap();
        assert!((out.get(0, 0) - 0.25f64.tanh()).abs() < 1e-15);
        assert!((out.get(0, 1) - (-0.25f64).tanh()).abs() < 1e-15);
    }

    #[test]
    fn batching_matches_single_rows() {
        let mut rng = Rng::seed_from(2);
        let bb = tiny_backbone(&mut rng);
        let ads = random_adapters(&bb, 2, &mut rng);
        let x = Matrix::from_fn(2, 3, |_, _| rng.normal(0.0, 1.0));
        let both = bb.forward(&ads, &x).unwrap();
        for r in 0..2 {
            let one = bb.forward(&ads, &x.row_block(r..r + 1).unwrap()).unwrap();
            assert_eq!(one.row(0), both.row(r));
        }
    }

    #[test]
    fn uniform_logits_give_log_c() {
        let layers = vec![DenseLayer {
            weight: Matrix::from_fn(3, 2, |_, _| 0.4),
            bias: vec![0.0; 3],
        }];
        let bb = FrozenBackbone::new(layers, Matrix::zeros(4, 3), vec![0]).unwrap();
        let ads = bb.init_adapters(1, &mut Rng::seed_from(3));
        let x = Matrix::from_rows(&[[1.0, 2.0], [0.0, -1.0]]);
        let (loss, _) = bb.loss_and_grads(&ads, &x, &[0, 3]).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = Rng::seed_from(4);
        let bb = tiny_backbone(&mut rng);
        let ads = random_adapters(&bb, 2, &mut rng);
        let x = Matrix::from_fn(6, 3, |_, _| rng.normal(0.0, 1.0));
        let y: Vec<usize> = (0..6).map(|i| i % 3).collect();
        let (_, grads) = bb.loss_and_grads(&ads, &x, &y).unwrap();
        let h = 1e-5;
        let loss_at = |ads: &[LoraAdapter]| bb.loss_and_grads(ads, &x, &y).unwrap().0;
        for (layer, g) in grads.iter().enumerate() {
            for factor in 0..2 {
                let analytic = if factor == 0 { &g.b } else { &g.a };
                for idx in 0..analytic.data().len() {
                    let mut plus = ads.clone();
                    let mut minus = ads.clone();
                    let bump = |ad: &mut LoraAdapter, d: f64| {
                        let m = if factor == 0 { ad.b_mut() } else { ad.a_mut() };
                        m.data_mut()[idx] += d;
                    };
                    bump(&mut plus[layer], h);
                    bump(&mut minus[layer], -h);
                    let numeric = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
                    let exact = analytic.data()[idx];
                    let rel = (numeric - exact).abs() / exact.abs().max(numeric.abs()).max(1e-8);
                    assert!(
                        rel < 1e-5,
                        "layer {layer} factor {factor} idx {idx}: {exact} vs {numeric}"
                    );
                }
            }
        }
    }

    #[test]
    fn duplicated_batch_same_mean_gradient() {
        let mut rng = Rng::seed_from(5);
        let bb = tiny_backbone(&mut rng);
        let ads = random_adapters(&bb, 2, &mut rng);
        let x = Matrix::from_fn(3, 3, |_, _| rng.normal(0.0, 1.0));
        let y = vec![0, 1, 2];
        let (l1, g1) = bb.loss_and_grads(&ads, &x, &y).unwrap();
        let xx = x.vcat(&x).unwrap();
        let yy: Vec<usize> = y.iter().chain(&y).cloned().collect();
        let (l2, g2) = bb.loss_and_grads(&ads, &xx, &yy).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        for (a, b) in g1.iter().zip(&g2) {
            assert!(a.b.max_abs_diff(&b.b).unwrap() < 1e-12);
            assert!(a.a.max_abs_diff(&b.a).unwrap() < 1e-12);
        }
    }

    fn two_class_shard(rng: &mut Rng) -> Dataset {
        let n = 64;
        let mut labels = Vec::new();
        let features = Matrix::from_fn(n, 3, |r, c| {
            let label = r % 2;
            if c == 0 {
                labels.push(label);
            }
            let sign = if label == 0 { -1.0 } else { 1.0 };
            if c == 0 {
                2.0 * sign + rng.normal(0.0, 0.3)
            } else {
                rng.normal(0.0, 0.3)
            }
        });
        Dataset { features, labels }
    }

    fn two_class_backbone(rng: &mut Rng) -> FrozenBackbone {
        let layers = vec![DenseLayer {
            weight: Matrix::from_fn(4, 3, |_, _| rng.normal(0.0, 0.5)),
            bias: vec![0.0; 4],
        }];
        let head = Matrix::from_fn(2, 4, |_, _| rng.normal(0.0, 1.0));
        FrozenBackbone::new(layers, head, vec![0]).unwrap()
    }

    #[test]
    fn zero_lr_leaves_adapters_unchanged() {
        let mut rng = Rng::seed_from(6);
        let bb = two_class_backbone(&mut rng);
        let data = two_class_shard(&mut rng);
        let mut ads = bb.init_adapters(2, &mut rng);
        let before = ads.clone();
        let cfg = AdamConfig {
            lr: 0.0,
            ..AdamConfig::default()
        };
        let mut opt: Vec<_> = ads
            .iter()
            .map(|a| FactorOptim::for_adapter(a, cfg))
            .collect();
        bb.local_train(
            &mut ads,
            &mut opt,
            &data,
            &TrainOptions::default(),
            &mut rng,
        )
        .unwrap();
        assert_eq!(ads, before);
    }

    #[test]
    fn one_epoch_reduces_loss() {
        let mut rng = Rng::seed_from(7);
        let bb = two_class_backbone(&mut rng);
        let data = two_class_shard(&mut rng);
        let mut ads = bb.init_adapters(2, &mut rng);
        let before = bb.loss(&ads, &data).unwrap();
        let cfg = AdamConfig {
            lr: 0.05,
            ..AdamConfig::default()
        };
        let mut opt: Vec<_> = ads
            .iter()
            .map(|a| FactorOptim::for_adapter(a, cfg))
            .collect();
        let opts = TrainOptions {
            epochs: 1,
            batch_size: 8,
        };
        bb.local_train(&mut ads, &mut opt, &data, &opts, &mut rng)
            .unwrap();
        let after = bb.loss(&ads, &data).unwrap();
        assert!(after < before, "{before} -> {after}");
    }

    #[test]
    fn training_is_deterministic() {
        let run = || {
            let mut rng = Rng::seed_from(8);
            let bb = two_class_backbone(&mut rng);
            let data = two_class_shard(&mut rng);
            let mut ads = bb.init_adapters(2, &mut rng);
            let mut opt: Vec<_> = ads
                .iter()
                .map(|a| FactorOptim::for_adapter(a, AdamConfig::default()))
                .collect();
            bb.local_train(
                &mut ads,
                &mut opt,
                &data,
                &TrainOptions::default(),
                &mut rng,
            )
            .unwrap();
            ads
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn evaluate_perfect_and_tie_break() {
        // Zero head: all logits tie, so everything is predicted as class 0.
        let layers = vec![DenseLayer {
            weight: Matrix::identity(2),
            bias: vec![0.0; 2],
        }];
        let bb = FrozenBackbone::new(layers, Matrix::zeros(3, 2), vec![0]).unwrap();
        let ads = bb.init_adapters(1, &mut Rng::seed_from(9));
        let data = Dataset {
            features: Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]),
            labels: vec![0, 0],
        };
        assert_eq!(bb.evaluate(&ads, &data).unwrap(), 1.0);
        let data = Dataset {
            features: Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]),
            labels: vec![0, 2],
        };
        assert_eq!(bb.evaluate(&ads, &data).unwrap(), 0.5);
        assert_eq!(bb.evaluate(&ads, &data).unwrap(), 0.5);
    }

    #[test]
    fn random_frozen_model_is_near_chance() {
        let spec = TaskSpec {
            train_size: 100,
            val_size: 100,
            test_size: 2_000,
            ..TaskSpec::default()
        };
        let model = ModelSpec {
            pretrain_epochs: 0,
            ..ModelSpec::default()
        };
        let mut in_band = 0;
        for seed in 0..10 {
            let mut rng = Rng::seed_from(seed);
            let task = generate_task(&spec, &mut rng).unwrap();
            let empty = task.draw(0, &mut rng);
            let bb = FrozenBackbone::pretrained(&model, spec.dim, 4, &empty, &mut rng).unwrap();
            let ads = bb.init_adapters(2, &mut rng);
            let acc = bb.evaluate(&ads, &task.test).unwrap();
            if (0.15..=0.35).contains(&acc) {
                in_band += 1;
            }
        }
        assert!(in_band >= 5, "{in_band}/10 seeds near chance");
    }

    #[test]
    fn adapter_shape_mismatch_rejected() {
        let mut rng = Rng::seed_from(10);
        let bb = tiny_backbone(&mut rng);
        let mut ads = random_adapters(&bb, 2, &mut rng);
        ads.swap(0, 1);
        assert!(bb.forward(&ads, &Matrix::zeros(1, 3)).is_err());
        assert!(bb.forward(&ads[..1], &Matrix::zeros(1, 3)).is_err());
    }
}
