//! PointNet-lite segmentation network.
//!
//! Per-point encoder MLP, global max-pool, concatenation of the first
//! encoder layer's output with the pooled feature, then a per-point decoder
//! MLP. Dropout only ever follows decoder hidden layers, and each point draws
//! its own mask, so a single stochastic pass samples a different sub-network
//! for every point.

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::nn::{
    dense_backward, dense_forward, maxpool_backward, maxpool_points, pointwise_dropout,
    relu_backward, relu_inplace, softmax_rows, Dense, DropoutSpec, GradientSet, ModelParams,
};
use crate::rng::{purpose, RngStreamKey};
use crate::types::{ClassProbabilities, DropoutConfig, PointCloud};

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneConfig {
    pub encoder: Vec<usize>,
    /// Hidden sizes followed by the class count.
    pub decoder: Vec<usize>,
    pub dropout_config: DropoutConfig,
    pub dropout_rate: f64,
}

impl BackboneConfig {
    /// Encoder (64, 128, 256), decoder (512, 256, 256, 128, M), Con_1.
    pub fn new(num_classes: usize) -> Self {
        BackboneConfig {
            encoder: vec![64, 128, 256],
            decoder: vec![512, 256, 256, 128, num_classes],
            dropout_config: DropoutConfig::Con1,
            dropout_rate: 0.5,
        }
    }

    pub fn num_classes(&self) -> usize {
        *self.decoder.last().unwrap_or(&0)
    }

    pub fn hidden_decoder_layers(&self) -> usize {
        self.decoder.len().saturating_sub(1)
    }

    pub fn dropout_spec(&self) -> DropoutSpec {
        DropoutSpec {
            flags: self.dropout_config.flags(self.hidden_decoder_layers()),
            rate: self.dropout_rate,
        }
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if self.encoder.is_empty() || self.decoder.is_empty() {
            return Err(Error::InvalidConfig("encoder and decoder need at least one layer".into()));
        }
        if self.encoder.iter().chain(&self.decoder).any(|&d| d == 0) {
            return Err(Error::InvalidConfig("layer sizes must be positive".into()));
        }
        if self.num_classes() != num_classes {
            return Err(Error::InvalidConfig(format!(
                "decoder ends in {} outputs but there are {} classes",
                self.num_classes(),
                num_classes
            )));
        }
        self.dropout_spec().validate()
    }

    /// Width of the decoder input: local feature plus pooled global feature.
    pub fn decoder_input(&self) -> usize {
        self.encoder[0] + self.encoder[self.encoder.len() - 1]
    }
}

/// Values cached by a recorded forward pass.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    /// Input of every encoder layer, plus the last encoder output.
    encoder_acts: Vec<Array2<f64>>,
    argmax: Vec<usize>,
    /// Input of every decoder layer (post-ReLU, post-dropout for hidden ones).
    decoder_acts: Vec<Array2<f64>>,
    /// Dropout multipliers applied after hidden decoder layer `l`.
    masks: Vec<Option<Array2<f64>>>,
}

impl Tape {
    pub fn is_recorded(&self) -> bool {
        !self.encoder_acts.is_empty()
    }
}

/// How dropout masks are drawn during a forward pass.
#[derive(Debug, Clone, Copy)]
pub enum Masking<'a> {
    Off,
    /// Point `i` uses stream `(seed, ids[i], layer, sample_index)`.
    Keyed {
        seed: u64,
        sample_index: u64,
        ids: Option<&'a [u64]>,
    },
}

/// Network structure plus a forward-pass counter.
#[derive(Debug)]
pub struct Backbone {
    pub config: BackboneConfig,
    pub input_dim: usize,
    passes: AtomicU64,
}

impl Clone for Backbone {
    fn clone(&self) -> Self {
        Backbone {
            config: self.config.clone(),
            input_dim: self.input_dim,
            passes: AtomicU64::new(self.passes()),
        }
    }
}

impl Backbone {
    pub fn new(config: BackboneConfig, input_dim: usize) -> Result<Self> {
        config.validate(config.num_classes())?;
        if input_dim == 0 {
            return Err(Error::InvalidConfig("input dimension must be positive".into()));
        }
        Ok(Backbone {
            config,
            input_dim,
            passes: AtomicU64::new(0),
        })
    }

    /// Backbone sized for `cloud` (3 + F inputs, M outputs).
    pub fn for_cloud(config: BackboneConfig, cloud: &PointCloud) -> Result<Self> {
        config.validate(cloud.num_classes)?;
        Self::new(config, 3 + cloud.num_features())
    }

    /// Number of forward passes executed so far.
    pub fn passes(&self) -> u64 {
        self.passes.load(Ordering::Relaxed)
    }

    pub fn reset_passes(&self) {
        self.passes.store(0, Ordering::Relaxed);
    }

    pub fn init_params(&self, seed: u64) -> ModelParams {
        let mut layers = Vec::new();
        let mut fan_in = self.input_dim;
        for (k, &d) in self.config.encoder.iter().enumerate() {
            layers.push(Dense::glorot(fan_in, d, RngStreamKey::new(seed, k as u64, purpose::INIT, 0)));
            fan_in = d;
        }
        fan_in = self.config.decoder_input();
        let offset = self.config.encoder.len();
        for (k, &d) in self.config.decoder.iter().enumerate() {
            let key = RngStreamKey::new(seed, (offset + k) as u64, purpose::INIT, 0);
            layers.push(Dense::glorot(fan_in, d, key));
            fan_in = d;
        }
        ModelParams { layers }
    }

    pub fn check_params(&self, params: &ModelParams) -> Result<()> {
        let expected = self.init_shapes();
        if params.layers.len() != expected.len()
            || params
                .layers
                .iter()
                .zip(&expected)
                .any(|(l, &(i, o))| l.inputs() != i || l.outputs() != o)
        {
            return Err(Error::ShapeMismatch("parameters do not match backbone layout".into()));
        }
        Ok(())
    }

    fn init_shapes(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut fan_in = self.input_dim;
        for &d in &self.config.encoder {
            out.push((fan_in, d));
            fan_in = d;
        }
        fan_in = self.config.decoder_input();
        for &d in &self.config.decoder {
            out.push((fan_in, d));
            fan_in = d;
        }
        out
    }

    /// Dropout bypassed.
    pub fn forward_deterministic(&self, params: &ModelParams, cloud: &PointCloud) -> Result<ClassProbabilities> {
        Ok(self.forward(params, cloud, Masking::Off, false)?.0)
    }

    /// One pass in which every point draws its own decoder masks from
    /// `(seed, i, layer, sample_index)`.
    pub fn forward_stochastic(
        &self,
        params: &ModelParams,
        cloud: &PointCloud,
        seed: u64,
        sample_index: u64,
    ) -> Result<ClassProbabilities> {
        self.require_dropout()?;
        let masking = Masking::Keyed {
            seed,
            sample_index,
            ids: None,
        };
        Ok(self.forward(params, cloud, masking, false)?.0)
    }

    /// The `t`-th pass of classic MC dropout.
    pub fn forward_mc_style(&self, params: &ModelParams, cloud: &PointCloud, seed: u64, t: u64) -> Result<ClassProbabilities> {
        self.forward_stochastic(params, cloud, seed, t)
    }

    fn require_dropout(&self) -> Result<()> {
        if self.config.dropout_spec().any_enabled() {
            Ok(())
        } else {
            Err(Error::NoDropoutLayers)
        }
    }

    /// General forward pass; records a tape when `record` is set.
    pub fn forward(
        &self,
        params: &ModelParams,
        cloud: &PointCloud,
        masking: Masking<'_>,
        record: bool,
    ) -> Result<(ClassProbabilities, Tape)> {
        self.check_params(params)?;
        let input = cloud.input_matrix();
        if input.ncols() != self.input_dim {
            return Err(Error::ShapeMismatch(format!(
                "backbone expects {} input columns, cloud provides {}",
                self.input_dim,
                input.ncols()
            )));
        }
        if let Masking::Keyed { ids: Some(ids), .. } = masking {
            if ids.len() != cloud.len() {
                return Err(Error::ShapeMismatch("one mask id per point required".into()));
            }
        }
        self.passes.fetch_add(1, Ordering::Relaxed);
        let n = input.nrows();
        let enc_len = self.config.encoder.len();
        let (enc, dec) = params.layers.split_at(enc_len);

        let mut tape = Tape::default();
        let mut act = input;
        let mut local = None;
        for (k, layer) in enc.iter().enumerate() {
            let mut out = dense_forward(layer, act.view())?;
            relu_inplace(&mut out);
            if k == 0 {
                local = Some(out.clone());
            }
            if record {
                tape.encoder_acts.push(act);
            }
            act = out;
        }
        let (global, argmax) = maxpool_points(act.view())?;
        if record {
            tape.encoder_acts.push(act);
            tape.argmax = argmax;
        }
        let local = local.expect("encoder has at least one layer");
        let global_rows = global
            .insert_axis(Axis(0))
            .broadcast((n, self.config.encoder[enc_len - 1]))
            .expect("broadcast pooled feature")
            .to_owned();
        let mut act = concatenate(Axis(1), &[local.view(), global_rows.view()])
            .expect("row counts agree");

        let spec = self.config.dropout_spec();
        let last = dec.len() - 1;
        for (l, layer) in dec.iter().enumerate() {
            let mut out = dense_forward(layer, act.view())?;
            let mut mask = None;
            if l < last {
                relu_inplace(&mut out);
                if let (true, Masking::Keyed { seed, sample_index, ids }) = (spec.flags[l], masking) {
                    let keys: Vec<RngStreamKey> = (0..n)
                        .map(|i| {
                            let id = ids.map_or(i as u64, |ids| ids[i]);
                            RngStreamKey::new(seed, id, l as u64, sample_index)
                        })
                        .collect();
                    let (masked, m) = pointwise_dropout(out.view(), spec.rate, &keys)?;
                    out = masked;
                    mask = Some(m);
                }
            }
            if record {
                tape.decoder_acts.push(act);
                if l < last {
                    tape.masks.push(mask);
                }
            }
            act = out;
        }
        Ok((softmax_rows(act.view()), tape))
    }

    /// Reverse-mode gradients of a scalar loss given its gradient with
    /// respect to the output logits (N×M).
    pub fn backward(&self, params: &ModelParams, tape: &Tape, logit_grad: ArrayView2<f64>) -> Result<GradientSet> {
        if !tape.is_recorded() {
            return Err(Error::NoTape);
        }
        self.check_params(params)?;
        let enc_len = self.config.encoder.len();
        let (enc, dec) = params.layers.split_at(enc_len);
        let n = tape.encoder_acts[0].nrows();
        if logit_grad.dim() != (n, self.config.num_classes()) {
            return Err(Error::ShapeMismatch(format!(
                "logit gradient is {:?}, expected ({}, {})",
                logit_grad.dim(),
                n,
                self.config.num_classes()
            )));
        }
        let mut grads: Vec<Dense> = Vec::with_capacity(params.layers.len());

        let mut upstream = logit_grad.to_owned();
        let mut dec_grads = Vec::with_capacity(dec.len());
        for l in (0..dec.len()).rev() {
            let input = &tape.decoder_acts[l];
            let (g, mut down) = dense_backward(&dec[l], input.view(), upstream.view());
            dec_grads.push(g);
            if l > 0 {
                if let Some(mask) = &tape.masks[l - 1] {
                    down *= mask;
                }
                relu_backward(input.view(), &mut down);
            }
            upstream = down;
        }
        dec_grads.reverse();

        let local_width = self.config.encoder[0];
        let local_grad = upstream.slice(s![.., ..local_width]).to_owned();
        let pooled_grad = upstream.slice(s![.., local_width..]).sum_axis(Axis(0));
        let mut out_grad = maxpool_backward(&pooled_grad, &tape.argmax, n);

        let mut enc_grads = Vec::with_capacity(enc_len);
        for k in (0..enc_len).rev() {
            if k == 0 {
                out_grad += &local_grad;
            }
            relu_backward(tape.encoder_acts[k + 1].view(), &mut out_grad);
            let (g, down) = dense_backward(&enc[k], tape.encoder_acts[k].view(), out_grad.view());
            enc_grads.push(g);
            out_grad = down;
        }
        enc_grads.reverse();

        grads.extend(enc_grads);
        grads.extend(dec_grads);
        Ok(GradientSet { layers: grads })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn small_config(m: usize) -> BackboneConfig {
        BackboneConfig {
            encoder: vec![8, 12],
            decoder: vec![16, 10, 8, 6, m],
            dropout_config: DropoutConfig::Con1,
            dropout_rate: 0.5,
        }
    }

    fn cloud(n: usize) -> PointCloud {
        let coords = Array2::from_shape_fn((n, 3), |(i, j)| ((i * 7 + j * 3) as f64 * 0.37).sin());
        let feats = Array2::from_shape_fn((n, 1), |(i, _)| (i as f64 * 0.11).cos());
        PointCloud::new(coords, feats, Some((0..n).map(|i| i % 3).collect()), 3).unwrap()
    }

    #[test]
    fn duplicate_points_share_output() {
        let mut c = cloud(5);
        let row = c.coords.row(1).to_owned();
        c.coords.row_mut(3).assign(&row);
        let f = c.features.row(1).to_owned();
        c.features.row_mut(3).assign(&f);
        let bb = Backbone::for_cloud(small_config(3), &c).unwrap();
        let p = bb.init_params(4);
        let out = bb.forward_deterministic(&p, &c).unwrap();
        assert_eq!(out.row(1), out.row(3));
        assert!(out.max_simplex_error() < 1e-12);
    }

    #[test]
    fn permutation_equivariance() {
        let c = cloud(9);
        let perm = [4, 0, 8, 2, 7, 1, 3, 6, 5];
        let pc = c.select(&perm);
        let bb = Backbone::for_cloud(small_config(3), &c).unwrap();
        let p = bb.init_params(1);
        let a = bb.forward_deterministic(&p, &c).unwrap();
        let b = bb.forward_deterministic(&p, &pc).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            for m in 0..3 {
                assert!((a.0[[i, m]] - b.0[[k, m]]).abs() < 1e-12);
            }
        }
        // stochastic: masks follow the original ids
        let ids: Vec<u64> = perm.iter().map(|&i| i as u64).collect();
        let keyed = |ids| Masking::Keyed {
            seed: 3,
            sample_index: 1,
            ids,
        };
        let (sa, _) = bb.forward(&p, &c, keyed(None), false).unwrap();
        let (sb, _) = bb.forward(&p, &pc, keyed(Some(&ids)), false).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            for m in 0..3 {
                assert!((sa.0[[i, m]] - sb.0[[k, m]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_point_runs() {
        let c = cloud(1);
        let bb = Backbone::for_cloud(small_config(3), &c).unwrap();
        let p = bb.init_params(0);
        assert_eq!(bb.forward_deterministic(&p, &c).unwrap().num_points(), 1);
    }

    #[test]
    fn zero_rate_matches_deterministic_bitwise() {
        let c = cloud(12);
        for dc in DropoutConfig::ALL {
            let mut cfg = small_config(3);
            cfg.dropout_rate = 0.0;
            cfg.dropout_config = dc;
            let bb = Backbone::for_cloud(cfg, &c).unwrap();
            let p = bb.init_params(2);
            let d = bb.forward_deterministic(&p, &c).unwrap();
            let s = bb.forward_stochastic(&p, &c, 99, 1).unwrap();
            assert_eq!(d, s);
        }
    }

    #[test]
    fn identical_points_differ_under_masks() {
        let mut c = cloud(2);
        let row = c.coords.row(0).to_owned();
        c.coords.row_mut(1).assign(&row);
        let f = c.features.row(0).to_owned();
        c.features.row_mut(1).assign(&f);
        let bb = Backbone::for_cloud(small_config(3), &c).unwrap();
        let p = bb.init_params(2);
        let s = bb.forward_stochastic(&p, &c, 5, 1).unwrap();
        assert_ne!(s.row(0), s.row(1));
        assert_eq!(s, bb.forward_stochastic(&p, &c, 5, 1).unwrap());
        assert_eq!(s, bb.forward_mc_style(&p, &c, 5, 1).unwrap());
    }

    #[test]
    fn no_dropout_layers_error() {
        let c = cloud(3);
        let mut cfg = small_config(3);
        cfg.decoder = vec![3];
        let bb = Backbone::for_cloud(cfg, &c).unwrap();
        let p = bb.init_params(0);
        assert!(matches!(bb.forward_stochastic(&p, &c, 0, 1), Err(Error::NoDropoutLayers)));
    }

    #[test]
    fn backward_requires_tape() {
        let c = cloud(3);
        let bb = Backbone::for_cloud(small_config(3), &c).unwrap();
        let p = bb.init_params(0);
        let g = Array2::zeros((3, 3));
        assert!(matches!(bb.backward(&p, &Tape::default(), g.view()), Err(Error::NoTape)));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let c = cloud(6);
        let bb = Backbone::for_cloud(small_config(3), &c).unwrap();
        let p = bb.init_params(0);
        let (_, tape) = bb.forward(&p, &c, Masking::Off, true).unwrap();
        let g = bb.backward(&p, &tape, Array2::zeros((6, 3)).view()).unwrap();
        assert!(g.is_congruent(&p));
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn pass_counter() {
        let c = cloud(4);
        let bb = Backbone::for_cloud(small_config(3), &c).unwrap();
        let p = bb.init_params(0);
        bb.forward_deterministic(&p, &c).unwrap();
        bb.forward_stochastic(&p, &c, 0, 1).unwrap();
        assert_eq!(bb.passes(), 2);
    }
}
