//! Convolutional actor-critic for grid observations.
//!
//! ceil(log2(k)) + 1 layers of 3x3 convolutions (stride 1 then 2, padding
//! 1), optional batch normalization, ReLU, channel count doubling from a
//! base of 13, then linear policy and value heads. For a 5x5 board the
//! channel sizes are 13, 26, 52, 104.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::Observation;
use crate::rng::Rng;

use super::{
    log_softmax_at, softmax, Backward, ParamKind, ParamLayout, ParameterVector, Phase, TrainSample,
};

const KERNEL: usize = 3;
const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub board: usize,
    pub in_channels: usize,
    pub num_actions: usize,
    pub base_channels: usize,
    pub batch_norm: bool,
}

impl ConvSpec {
    pub fn for_coins(board: usize, batch_norm: bool) -> Self {
        ConvSpec {
            board,
            in_channels: 4,
            num_actions: 4,
            base_channels: 13,
            batch_norm,
        }
    }

    pub fn num_layers(&self) -> usize {
        ceil_log2(self.board) + 1
    }

    pub fn channel_sizes(&self) -> Vec<usize> {
        (0..self.num_layers()).map(|i| self.base_channels << i).collect()
    }

    pub fn num_params(&self) -> usize {
        self.plan().total
    }

    pub fn layout(&self) -> ParamLayout {
        let layout = Plan::named_layout(self);
        debug_assert_eq!(layout.total, self.plan().total);
        layout
    }

    fn plan(&self) -> Plan {
        Plan::new(self)
    }

    pub fn init(&self, rng: &mut Rng) -> ParameterVector {
        let layout = self.layout();
        let mut params = ParameterVector::zeros(layout.total);
        for entry in &layout.entries {
            let slice = &mut params.data[entry.offset..entry.offset + entry.len];
            match entry.kind {
                ParamKind::Weight => {
                    // Fan-in-scaled uniform.
                    let fan_in: usize = entry.shape[1..].iter().product();
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    for v in slice.iter_mut() {
                        *v = rng.gen_range(-bound..bound);
                    }
                }
                ParamKind::Bias | ParamKind::Beta | ParamKind::RunningMean => {}
                ParamKind::Gamma | ParamKind::RunningVar => slice.fill(1.0),
            }
        }
        params
    }

    pub fn heads(&self, params: &ParameterVector, obs: &[Observation], phase: Phase) -> Result<Vec<(Vec<f64>, f64)>> {
        let plan = self.plan();
        if obs.len() == 1 && phase == Phase::Eval {
            return Ok(vec![plan.forward_eval_single(self, params, &obs[0])?]);
        }
        let fwd = plan.forward(self, params, obs, phase)?;
        Ok(fwd.heads)
    }

    pub fn objective(&self, params: &ParameterVector, batch: &[TrainSample<'_>]) -> Result<f64> {
        let obs: Vec<Observation> = batch.iter().map(|s| s.obs.clone()).collect();
        let plan = self.plan();
        let fwd = plan.forward(self, params, &obs, Phase::Train)?;
        let mut total = 0.0;
        for (sample, (logits, value)) in batch.iter().zip(&fwd.heads) {
            total += sample.value_weight * value
                + sample.policy_weight * log_softmax_at(logits, sample.action)
                + sample.logit_weight * logits[sample.action];
        }
        Ok(total)
    }

    pub fn backward(&self, params: &ParameterVector, batch: &[TrainSample<'_>]) -> Result<Backward> {
        let obs: Vec<Observation> = batch.iter().map(|s| s.obs.clone()).collect();
        let plan = self.plan();
        let fwd = plan.forward(self, params, &obs, Phase::Train)?;
        plan.backward(self, params, batch, &fwd)
    }
}

fn ceil_log2(k: usize) -> usize {
    assert!(k >= 1);
    if k == 1 {
        0
    } else {
        ((k - 1).ilog2() + 1) as usize
    }
}

#[derive(Clone, Debug)]
struct LayerDims {
    in_ch: usize,
    out_ch: usize,
    in_hw: usize,
    out_hw: usize,
    stride: usize,
    w: usize,
    b: usize,
    gamma: usize,
    beta: usize,
    running_mean: usize,
    running_var: usize,
}

struct Plan {
    layers: Vec<LayerDims>,
    feat: usize,
    policy_w: usize,
    policy_b: usize,
    value_w: usize,
    value_b: usize,
    total: usize,
}

impl Plan {
    /// Offsets only; no allocation-heavy naming. Must stay in sync with
    /// `named_layout`.
    fn new(spec: &ConvSpec) -> Self {
        let mut layers = Vec::new();
        let mut offset = 0usize;
        let mut in_ch = spec.in_channels;
        let mut hw = spec.board;
        let mut take = |len: usize| {
            let at = offset;
            offset += len;
            at
        };
        for (i, out_ch) in spec.channel_sizes().into_iter().enumerate() {
            let stride = if i == 0 { 1 } else { 2 };
            let out_hw = (hw + 2 - KERNEL) / stride + 1;
            let w = take(out_ch * in_ch * KERNEL * KERNEL);
            // With batch norm the conv bias is redundant (beta covers it).
            let b = if spec.batch_norm { usize::MAX } else { take(out_ch) };
            let (gamma, beta, running_mean, running_var) = if spec.batch_norm {
                (take(out_ch), take(out_ch), take(out_ch), take(out_ch))
            } else {
                (usize::MAX, usize::MAX, usize::MAX, usize::MAX)
            };
            layers.push(LayerDims {
                in_ch,
                out_ch,
                in_hw: hw,
                out_hw,
                stride,
                w,
                b,
                gamma,
                beta,
                running_mean,
                running_var,
            });
            in_ch = out_ch;
            hw = out_hw;
        }
        let feat = in_ch * hw * hw;
        let policy_w = take(spec.num_actions * feat);
        let policy_b = take(spec.num_actions);
        let value_w = take(feat);
        let value_b = take(1);
        Plan {
            layers,
            feat,
            policy_w,
            policy_b,
            value_w,
            value_b,
            total: offset,
        }
    }

    fn named_layout(spec: &ConvSpec) -> ParamLayout {
        let mut builder = ParamLayout::builder();
        let mut in_ch = spec.in_channels;
        let mut hw = spec.board;
        for (i, out_ch) in spec.channel_sizes().into_iter().enumerate() {
            let stride = if i == 0 { 1 } else { 2 };
            let out_hw = (hw + 2 - KERNEL) / stride + 1;
            builder.push(format!("conv{i}.weight"), &[out_ch, in_ch, KERNEL, KERNEL], ParamKind::Weight);
            if !spec.batch_norm {
                builder.push(format!("conv{i}.bias"), &[out_ch], ParamKind::Bias);
            } else {
                builder.push(format!("bn{i}.gamma"), &[out_ch], ParamKind::Gamma);
                builder.push(format!("bn{i}.beta"), &[out_ch], ParamKind::Beta);
                builder.push(format!("bn{i}.running_mean"), &[out_ch], ParamKind::RunningMean);
                builder.push(format!("bn{i}.running_var"), &[out_ch], ParamKind::RunningVar);
            }
            in_ch = out_ch;
            hw = out_hw;
        }
        let feat = in_ch * hw * hw;
        builder.push("policy.weight", &[spec.num_actions, feat], ParamKind::Weight);
        builder.push("policy.bias", &[spec.num_actions], ParamKind::Bias);
        builder.push("value.weight", &[1, feat], ParamKind::Weight);
        builder.push("value.bias", &[1], ParamKind::Bias);
        builder.finish()
    }

    fn input_tensor(&self, spec: &ConvSpec, obs: &[Observation]) -> Result<Vec<f64>> {
        let expected = spec.in_channels * spec.board * spec.board;
        let mut x = Vec::with_capacity(obs.len() * expected);
        for o in obs {
            match o {
                Observation::Tensor { shape, data }
                    if *shape == [spec.in_channels, spec.board, spec.board] && data.len() == expected =>
                {
                    x.extend_from_slice(data);
                }
                other => {
                    return Err(Error::ShapeMismatch {
                        expected: format!("{}x{}x{} tensor", spec.in_channels, spec.board, spec.board),
                        got: format!("{other:?}"),
                    })
                }
            }
        }
        Ok(x)
    }

    /// Cache-free forward for action selection and rollouts: running
    /// batch-norm statistics, no intermediate activations kept.
    fn forward_eval_single(
        &self,
        spec: &ConvSpec,
        params: &ParameterVector,
        obs: &Observation,
    ) -> Result<(Vec<f64>, f64)> {
        let mut x = self.input_tensor(spec, std::slice::from_ref(obs))?;
        let mut y = Vec::new();
        let mut patch = Vec::new();
        for layer in &self.layers {
            y.clear();
            y.resize(layer.out_ch * layer.out_hw * layer.out_hw, 0.0);
            conv_forward_into(&x, layer, params, &mut y, &mut patch);
            if spec.batch_norm {
                let oc = layer.out_ch;
                let plane = layer.out_hw * layer.out_hw;
                let gamma = &params.data[layer.gamma..layer.gamma + oc];
                let beta = &params.data[layer.beta..layer.beta + oc];
                let rm = &params.data[layer.running_mean..layer.running_mean + oc];
                let rv = &params.data[layer.running_var..layer.running_var + oc];
                for c in 0..oc {
                    let inv_std = 1.0 / (rv[c] + BN_EPS).sqrt();
                    for v in &mut y[c * plane..(c + 1) * plane] {
                        *v = gamma[c] * (*v - rm[c]) * inv_std + beta[c];
                    }
                }
            }
            for v in y.iter_mut() {
                if !v.is_finite() {
                    return Err(Error::NonFinite {
                        context: "conv activation".into(),
                    });
                }
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            std::mem::swap(&mut x, &mut y);
        }
        let pw = &params.data[self.policy_w..self.policy_w + spec.num_actions * self.feat];
        let pb = &params.data[self.policy_b..self.policy_b + spec.num_actions];
        let vw = &params.data[self.value_w..self.value_w + self.feat];
        let mut logits = vec![0.0; spec.num_actions];
        for (a, logit) in logits.iter_mut().enumerate() {
            *logit = pb[a] + dot(&pw[a * self.feat..(a + 1) * self.feat], &x);
        }
        let value = params.data[self.value_b] + dot(vw, &x);
        Ok((logits, value))
    }

    fn forward(
        &self,
        spec: &ConvSpec,
        params: &ParameterVector,
        obs: &[Observation],
        phase: Phase,
    ) -> Result<ForwardCache> {
        let n = obs.len();
        let mut x = self.input_tensor(spec, obs)?;
        let mut cache = ForwardCache {
            inputs: Vec::new(),
            conv_out: Vec::new(),
            bn: Vec::new(),
            heads: Vec::with_capacity(n),
            feat: Vec::new(),
        };
        for layer in &self.layers {
            cache.inputs.push(x.clone());
            let mut y = conv_forward(&x, n, layer, params);
            cache.conv_out.push(y.clone());
            let bn_cache = if spec.batch_norm {
                Some(bn_forward(&mut y, n, layer, params, phase))
            } else {
                None
            };
            cache.bn.push(bn_cache);
            for v in y.iter_mut() {
                if !v.is_finite() {
                    return Err(Error::NonFinite {
                        context: "conv activation".into(),
                    });
                }
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            x = y;
        }
        cache.feat = x;
        let pw = &params.data[self.policy_w..self.policy_w + spec.num_actions * self.feat];
        let pb = &params.data[self.policy_b..self.policy_b + spec.num_actions];
        let vw = &params.data[self.value_w..self.value_w + self.feat];
        let vb = params.data[self.value_b];
        for i in 0..n {
            let feat = &cache.feat[i * self.feat..(i + 1) * self.feat];
            let mut logits = vec![0.0; spec.num_actions];
            for (a, logit) in logits.iter_mut().enumerate() {
                let row = &pw[a * self.feat..(a + 1) * self.feat];
                *logit = pb[a] + dot(row, feat);
            }
            let value = vb + dot(vw, feat);
            cache.heads.push((logits, value));
        }
        Ok(cache)
    }

    fn backward(
        &self,
        spec: &ConvSpec,
        params: &ParameterVector,
        batch: &[TrainSample<'_>],
        fwd: &ForwardCache,
    ) -> Result<Backward> {
        let n = batch.len();
        let mut grad = ParameterVector::zeros(params.len());
        // Head gradients.
        let mut d_feat = vec![0.0; n * self.feat];
        {
            let pw = &params.data[self.policy_w..self.policy_w + spec.num_actions * self.feat];
            let vw = &params.data[self.value_w..self.value_w + self.feat];
            for (i, sample) in batch.iter().enumerate() {
                let (logits, _) = &fwd.heads[i];
                let probs = softmax(logits);
                let feat = &fwd.feat[i * self.feat..(i + 1) * self.feat];
                let df = &mut d_feat[i * self.feat..(i + 1) * self.feat];
                for a in 0..spec.num_actions {
                    let indicator = if a == sample.action { 1.0 } else { 0.0 };
                    let dz = sample.policy_weight * (indicator - probs[a]) + sample.logit_weight * indicator;
                    if dz != 0.0 {
                        let row = &pw[a * self.feat..(a + 1) * self.feat];
                        let grow = &mut grad.data[self.policy_w + a * self.feat..self.policy_w + (a + 1) * self.feat];
                        for f in 0..self.feat {
                            grow[f] += dz * feat[f];
                            df[f] += dz * row[f];
                        }
                        grad.data[self.policy_b + a] += dz;
                    }
                }
                let dv = sample.value_weight;
                if dv != 0.0 {
                    let grow = &mut grad.data[self.value_w..self.value_w + self.feat];
                    for f in 0..self.feat {
                        grow[f] += dv * feat[f];
                        df[f] += dv * vw[f];
                    }
                    grad.data[self.value_b] += dv;
                }
            }
        }
        // Layer gradients, in reverse.
        let mut buffer_updates = Vec::new();
        let mut d_out = d_feat;
        for (li, layer) in self.layers.iter().enumerate().rev() {
            // ReLU mask: activation output was max(0, bn_out).
            let pre_relu: Vec<f64> = match &fwd.bn[li] {
                Some(bn) => bn.out.clone(),
                None => fwd.conv_out[li].clone(),
            };
            for (d, &pre) in d_out.iter_mut().zip(pre_relu.iter()) {
                if pre <= 0.0 {
                    *d = 0.0;
                }
            }
            let d_conv = if let Some(bn) = &fwd.bn[li] {
                let (d_conv, update) = bn_backward(&d_out, n, layer, params, bn, &mut grad.data);
                if let Some((mean_new, var_new)) = update {
                    buffer_updates.push((layer.running_mean, mean_new));
                    buffer_updates.push((layer.running_var, var_new));
                }
                d_conv
            } else {
                d_out
            };
            d_out = conv_backward(&fwd.inputs[li], &d_conv, n, layer, params, &mut grad.data);
        }
        Ok(Backward { grad, buffer_updates })
    }
}

struct ForwardCache {
    /// Input activation of each conv layer.
    inputs: Vec<Vec<f64>>,
    /// Conv outputs before normalization.
    conv_out: Vec<Vec<f64>>,
    bn: Vec<Option<BnCache>>,
    /// Final flattened features per sample.
    feat: Vec<f64>,
    heads: Vec<(Vec<f64>, f64)>,
}

struct BnCache {
    mean: Vec<f64>,
    var: Vec<f64>,
    xhat: Vec<f64>,
    /// Normalized-and-scaled output (pre-ReLU).
    out: Vec<f64>,
    used_batch_stats: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn conv_forward_into(x: &[f64], layer: &LayerDims, params: &ParameterVector, out: &mut [f64], patch: &mut Vec<f64>) {
    let (ic, oc, ih, oh, stride) = (layer.in_ch, layer.out_ch, layer.in_hw, layer.out_hw, layer.stride);
    let w = &params.data[layer.w..layer.w + oc * ic * KERNEL * KERNEL];
    let cols = ic * KERNEL * KERNEL;
    patch.clear();
    patch.resize(oh * oh * cols, 0.0);
    // Gather each output position's zero-padded receptive field once;
    // every output channel then reduces a contiguous slice.
    for oy in 0..oh {
        for ox in 0..oh {
            let row = &mut patch[(oy * oh + ox) * cols..(oy * oh + ox + 1) * cols];
            for ky in 0..KERNEL {
                let iy = (oy * stride + ky).wrapping_sub(1);
                if iy >= ih {
                    continue;
                }
                for kx in 0..KERNEL {
                    let ix = (ox * stride + kx).wrapping_sub(1);
                    if ix >= ih {
                        continue;
                    }
                    let src = iy * ih + ix;
                    let dst = ky * KERNEL + kx;
                    for i in 0..ic {
                        row[i * KERNEL * KERNEL + dst] = x[i * ih * ih + src];
                    }
                }
            }
        }
    }
    for o in 0..oc {
        let bias = if layer.b == usize::MAX { 0.0 } else { params.data[layer.b + o] };
        let w_o = &w[o * cols..(o + 1) * cols];
        for pos in 0..oh * oh {
            out[o * oh * oh + pos] = bias + dot(w_o, &patch[pos * cols..(pos + 1) * cols]);
        }
    }
}

fn conv_forward(x: &[f64], n: usize, layer: &LayerDims, params: &ParameterVector) -> Vec<f64> {
    let (ic, oc, ih, oh) = (layer.in_ch, layer.out_ch, layer.in_hw, layer.out_hw);
    let mut out = vec![0.0; n * oc * oh * oh];
    let mut patch = Vec::new();
    for s in 0..n {
        let x_s = &x[s * ic * ih * ih..(s + 1) * ic * ih * ih];
        let out_s = &mut out[s * oc * oh * oh..(s + 1) * oc * oh * oh];
        conv_forward_into(x_s, layer, params, out_s, &mut patch);
    }
    out
}

fn conv_backward(
    x: &[f64],
    d_out: &[f64],
    n: usize,
    layer: &LayerDims,
    params: &ParameterVector,
    grad: &mut [f64],
) -> Vec<f64> {
    let (ic, oc, ih, oh, stride) = (layer.in_ch, layer.out_ch, layer.in_hw, layer.out_hw, layer.stride);
    let w = &params.data[layer.w..layer.w + oc * ic * KERNEL * KERNEL];
    let mut d_in = vec![0.0; n * ic * ih * ih];
    for s in 0..n {
        let x_s = &x[s * ic * ih * ih..(s + 1) * ic * ih * ih];
        let d_in_s = &mut d_in[s * ic * ih * ih..(s + 1) * ic * ih * ih];
        let d_out_s = &d_out[s * oc * oh * oh..(s + 1) * oc * oh * oh];
        for o in 0..oc {
            let w_o = &w[o * ic * KERNEL * KERNEL..(o + 1) * ic * KERNEL * KERNEL];
            for oy in 0..oh {
                for ox in 0..oh {
                    let dz = d_out_s[o * oh * oh + oy * oh + ox];
                    if dz == 0.0 {
                        continue;
                    }
                    if layer.b != usize::MAX {
                        grad[layer.b + o] += dz;
                    }
                    for i in 0..ic {
                        let x_i = &x_s[i * ih * ih..(i + 1) * ih * ih];
                        let base = layer.w + (o * ic + i) * KERNEL * KERNEL;
                        let w_i = &w_o[i * KERNEL * KERNEL..(i + 1) * KERNEL * KERNEL];
                        for ky in 0..KERNEL {
                            let iy = (oy * stride + ky).wrapping_sub(1);
                            if iy >= ih {
                                continue;
                            }
                            for kx in 0..KERNEL {
                                let ix = (ox * stride + kx).wrapping_sub(1);
                                if ix >= ih {
                                    continue;
                                }
                                grad[base + ky * KERNEL + kx] += dz * x_i[iy * ih + ix];
                                d_in_s[i * ih * ih + iy * ih + ix] += dz * w_i[ky * KERNEL + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    d_in
}

/// Normalize in place; returns the cache used by the backward pass.
fn bn_forward(y: &mut [f64], n: usize, layer: &LayerDims, params: &ParameterVector, phase: Phase) -> BnCache {
    let (oc, oh) = (layer.out_ch, layer.out_hw);
    let plane = oh * oh;
    let m = (n * plane) as f64;
    let gamma = &params.data[layer.gamma..layer.gamma + oc];
    let beta = &params.data[layer.beta..layer.beta + oc];
    let mut mean = vec![0.0; oc];
    let mut var = vec![0.0; oc];
    let used_batch_stats = phase == Phase::Train;
    if used_batch_stats {
        for c in 0..oc {
            let mut sum = 0.0;
            for s in 0..n {
                let base = (s * oc + c) * plane;
                sum += y[base..base + plane].iter().sum::<f64>();
            }
            mean[c] = sum / m;
            let mut sq = 0.0;
            for s in 0..n {
                let base = (s * oc + c) * plane;
                for v in &y[base..base + plane] {
                    let d = v - mean[c];
                    sq += d * d;
                }
            }
            var[c] = sq / m;
        }
    } else {
        mean.copy_from_slice(&params.data[layer.running_mean..layer.running_mean + oc]);
        var.copy_from_slice(&params.data[layer.running_var..layer.running_var + oc]);
    }
    let mut xhat = vec![0.0; y.len()];
    for c in 0..oc {
        let inv_std = 1.0 / (var[c] + BN_EPS).sqrt();
        for s in 0..n {
            let base = (s * oc + c) * plane;
            for j in 0..plane {
                let h = (y[base + j] - mean[c]) * inv_std;
                xhat[base + j] = h;
                y[base + j] = gamma[c] * h + beta[c];
            }
        }
    }
    BnCache {
        mean,
        var,
        xhat,
        out: y.to_vec(),
        used_batch_stats,
    }
}

/// Returns the gradient w.r.t. the conv output and, when batch statistics
/// were used, the updated running mean/var buffers.
#[allow(clippy::type_complexity)]
fn bn_backward(
    d_out: &[f64],
    n: usize,
    layer: &LayerDims,
    params: &ParameterVector,
    bn: &BnCache,
    grad: &mut [f64],
) -> (Vec<f64>, Option<(Vec<f64>, Vec<f64>)>) {
    let (oc, oh) = (layer.out_ch, layer.out_hw);
    let plane = oh * oh;
    let m = (n * plane) as f64;
    let gamma = &params.data[layer.gamma..layer.gamma + oc];
    let mut d_in = vec![0.0; d_out.len()];
    for c in 0..oc {
        let inv_std = 1.0 / (bn.var[c] + BN_EPS).sqrt();
        let mut sum_dy = 0.0;
        let mut sum_dy_xhat = 0.0;
        for s in 0..n {
            let base = (s * oc + c) * plane;
            for j in 0..plane {
                let dy = d_out[base + j];
                sum_dy += dy;
                sum_dy_xhat += dy * bn.xhat[base + j];
            }
        }
        grad[layer.gamma + c] += sum_dy_xhat;
        grad[layer.beta + c] += sum_dy;
        if bn.used_batch_stats {
            // Full batch-statistics backward.
            for s in 0..n {
                let base = (s * oc + c) * plane;
                for j in 0..plane {
                    let dy = d_out[base + j];
                    d_in[base + j] =
                        gamma[c] * inv_std / m * (m * dy - sum_dy - bn.xhat[base + j] * sum_dy_xhat);
                }
            }
        } else {
            for s in 0..n {
                let base = (s * oc + c) * plane;
                for j in 0..plane {
                    d_in[base + j] = gamma[c] * inv_std * d_out[base + j];
                }
            }
        }
    }
    let update = if bn.used_batch_stats {
        let rm = &params.data[layer.running_mean..layer.running_mean + oc];
        let rv = &params.data[layer.running_var..layer.running_var + oc];
        let new_mean: Vec<f64> = rm
            .iter()
            .zip(&bn.mean)
            .map(|(r, b)| (1.0 - BN_MOMENTUM) * r + BN_MOMENTUM * b)
            .collect();
        let new_var: Vec<f64> = rv
            .iter()
            .zip(&bn.var)
            .map(|(r, b)| (1.0 - BN_MOMENTUM) * r + BN_MOMENTUM * b)
            .collect();
        Some((new_mean, new_var))
    } else {
        None
    };
    (d_in, update)
}
