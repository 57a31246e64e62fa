use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::checkpoint::{self, Dtype};
use crate::autodiff::layer::{BatchNorm, Conv2d, Dense};
use crate::autodiff::{Layer, Mode, Sequential, Tensor};
use crate::dsp::FrontendTag;
use crate::error::{Error, Result};
use crate::model::config::{AeConfig, ModelFamily};
use crate::rng::substream;

/// Lineage carried with a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub config_hash: String,
    pub frontend: FrontendTag,
    /// Hash of the frontend configuration the features came from.
    #[serde(default)]
    pub frontend_hash: Option<String>,
    /// Hash of the normalization statistics the model was trained with.
    pub norm_stats_hash: Option<String>,
}

/// Encoder (input to bottleneck activation), decoder (bottleneck to
/// reconstruction) and an optional classifier on the bottleneck.
#[derive(Debug, Clone)]
pub struct ModelGraph {
    pub config: AeConfig,
    pub encoder: Sequential,
    pub decoder: Sequential,
    pub head: Option<Dense>,
    pub metadata: ModelMetadata,
}

#[derive(Debug, Clone)]
pub struct Forward {
    pub reconstruction: Tensor,
    pub bottleneck: Tensor,
    pub logits: Option<Tensor>,
}

fn conv_block(layers: &mut Vec<Layer>, c_in: usize, c_out: usize, last: Layer, seed: u64, tag: &str) {
    let mut rng = substream(seed, tag);
    layers.push(Layer::Conv2d(Conv2d::new(c_in, c_out, &mut rng)));
    layers.push(Layer::BatchNorm(BatchNorm::new(c_out)));
    layers.push(Layer::relu());
    layers.push(Layer::Conv2d(Conv2d::new(c_out, c_out, &mut rng)));
    layers.push(Layer::BatchNorm(BatchNorm::new(c_out)));
    layers.push(Layer::relu());
    layers.push(last);
}

fn conv_trunk(config: &AeConfig, seed: u64) -> (Sequential, Sequential) {
    let (c_last, h, w) = config.encoder_output();
    let flat = c_last * h * w;
    let mut enc = Vec::new();
    let mut c_in = 1;
    for (i, &f) in config.encoder_filters.iter().enumerate() {
        conv_block(&mut enc, c_in, f, Layer::maxpool(), seed, &format!("init/enc{i}"));
        c_in = f;
    }
    enc.push(Layer::flatten());
    enc.push(Layer::Dense(Dense::new(
        flat,
        config.bottleneck_dim,
        &mut substream(seed, "init/bottleneck"),
    )));

    let mut dec = vec![
        Layer::Dense(Dense::new(
            config.bottleneck_dim,
            flat,
            &mut substream(seed, "init/expand"),
        )),
        Layer::Reshape {
            target: vec![c_last, h, w],
        },
    ];
    let mut c_in = c_last;
    for (i, &f) in config.encoder_filters.iter().rev().enumerate() {
        conv_block(&mut dec, c_in, f, Layer::Upsample, seed, &format!("init/dec{i}"));
        c_in = f;
    }
    dec.push(Layer::Conv2d(Conv2d::new(
        c_in,
        1,
        &mut substream(seed, "init/output"),
    )));
    (Sequential::new(enc), Sequential::new(dec))
}

fn metadata(config: &AeConfig) -> ModelMetadata {
    ModelMetadata {
        config_hash: config.hash(),
        frontend: config.family.frontend(),
        frontend_hash: None,
        norm_stats_hash: None,
    }
}

/// Three encoder ConvBlocks, a linear dense bottleneck, a dense expansion
/// back to the encoder output size, three mirrored decoder ConvBlocks and a
/// final linear 1-filter convolution.
pub fn build_unsupervised(config: &AeConfig, seed: u64) -> Result<ModelGraph> {
    if config.family != ModelFamily::Unsupervised {
        return Err(Error::config("build_unsupervised needs family = unsupervised"));
    }
    config.validate()?;
    let (encoder, decoder) = conv_trunk(config, seed);
    Ok(ModelGraph {
        config: config.clone(),
        encoder,
        decoder,
        head: None,
        metadata: metadata(config),
    })
}

/// The unsupervised graph plus a dense softmax classifier reading the
/// bottleneck. Trunk initialization matches [`build_unsupervised`] for the
/// same seed.
pub fn build_semisupervised(config: &AeConfig, seed: u64) -> Result<ModelGraph> {
    if config.family != ModelFamily::SemiSupervised {
        return Err(Error::config(
            "build_semisupervised needs family = semi-supervised",
        ));
    }
    config.validate()?;
    let k = config.n_classes.expect("validated");
    let (encoder, decoder) = conv_trunk(config, seed);
    let head = Dense::new(config.bottleneck_dim, k, &mut substream(seed, "init/head"));
    Ok(ModelGraph {
        config: config.clone(),
        encoder,
        decoder,
        head: Some(head),
        metadata: metadata(config),
    })
}

fn dense_bn_relu(layers: &mut Vec<Layer>, d_in: usize, d_out: usize, rng: &mut impl rand::Rng) {
    layers.push(Layer::Dense(Dense::new(d_in, d_out, rng)));
    layers.push(Layer::BatchNorm(BatchNorm::new(d_out)));
    layers.push(Layer::relu());
}

/// Dense autoencoder over stacked Mel frames: 4 x (dense, BN, ReLU), an
/// 8-unit bottleneck with BN and ReLU, 4 x (dense, BN, ReLU) and a linear
/// output layer of the input width.
pub fn build_baseline_dense(config: &AeConfig, seed: u64) -> Result<ModelGraph> {
    if config.family != ModelFamily::BaselineDense {
        return Err(Error::config("build_baseline_dense needs family = baseline-dense"));
    }
    config.validate()?;
    if config.baseline_input_dim != 640 {
        return Err(Error::config(format!(
            "baseline input must be 640-dimensional, got {}",
            config.baseline_input_dim
        )));
    }
    let (d, hdim, z) = (
        config.baseline_input_dim,
        config.baseline_hidden,
        config.baseline_bottleneck,
    );
    let mut rng = substream(seed, "init/baseline-encoder");
    let mut enc = Vec::new();
    let mut d_in = d;
    for _ in 0..4 {
        dense_bn_relu(&mut enc, d_in, hdim, &mut rng);
        d_in = hdim;
    }
    dense_bn_relu(&mut enc, hdim, z, &mut rng);
    let mut rng = substream(seed, "init/baseline-decoder");
    let mut dec = Vec::new();
    let mut d_in = z;
    for _ in 0..4 {
        dense_bn_relu(&mut dec, d_in, hdim, &mut rng);
        d_in = hdim;
    }
    dec.push(Layer::Dense(Dense::new(hdim, d, &mut rng)));
    Ok(ModelGraph {
        config: config.clone(),
        encoder: Sequential::new(enc),
        decoder: Sequential::new(dec),
        head: None,
        metadata: metadata(config),
    })
}

/// Dispatches on `config.family`.
pub fn build(config: &AeConfig, seed: u64) -> Result<ModelGraph> {
    match config.family {
        ModelFamily::Unsupervised => build_unsupervised(config, seed),
        ModelFamily::SemiSupervised => build_semisupervised(config, seed),
        ModelFamily::BaselineDense => build_baseline_dense(config, seed),
    }
}

impl ModelGraph {
    pub fn family(&self) -> ModelFamily {
        self.config.family
    }

    pub fn sample_shape(&self) -> Vec<usize> {
        self.config.sample_shape()
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Forward> {
        if x.shape().get(1..) != Some(self.sample_shape().as_slice()) {
            return Err(Error::shape(format!(
                "model expects [B, {:?}], got {:?}",
                self.sample_shape(),
                x.shape()
            )));
        }
        let z = self.encoder.forward(x.clone(), mode)?;
        let logits = match self.head.as_mut() {
            Some(h) => Some(h.forward(&z)?),
            None => None,
        };
        let reconstruction = self.decoder.forward(z.clone(), mode)?;
        Ok(Forward {
            reconstruction,
            bottleneck: z,
            logits,
        })
    }

    /// Reconstruction only, without touching the classifier.
    pub fn reconstruct(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let z = self.encoder.forward(x.clone(), mode)?;
        self.decoder.forward(z, mode)
    }

    /// Backpropagates the loss gradients of the last [`forward`](Self::forward)
    /// and accumulates parameter gradients. Returns the input gradient.
    pub fn backward(&mut self, grad_recon: Tensor, grad_logits: Option<Tensor>) -> Result<Tensor> {
        let mut gz = self.decoder.backward(grad_recon)?;
        if let (Some(h), Some(gl)) = (self.head.as_mut(), grad_logits) {
            let gh = h.backward(&gl)?;
            gz.data_mut()
                .iter_mut()
                .zip(gh.data())
                .for_each(|(a, b)| *a += b);
        }
        self.encoder.backward(gz)
    }

    /// Trainable tensors in a fixed order: encoder, decoder, head.
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.encoder.params_mut();
        p.extend(self.decoder.params_mut());
        if let Some(h) = self.head.as_mut() {
            p.push(&mut h.weight);
            p.push(&mut h.bias);
        }
        p
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Tensor::zero_grad);
    }

    pub fn trainable_count(&mut self) -> usize {
        self.params_mut().iter().map(|p| p.len()).sum()
    }

    /// Every persisted tensor including BN running statistics.
    pub fn named_state(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (part, seq) in [("encoder", &self.encoder), ("decoder", &self.decoder)] {
            for (i, layer) in seq.layers.iter().enumerate() {
                for (name, t) in layer.state() {
                    out.push((format!("{part}.{i}.{}.{name}", layer.kind()), t));
                }
            }
        }
        if let Some(h) = &self.head {
            out.push(("head.dense.weight".into(), &h.weight));
            out.push(("head.dense.bias".into(), &h.bias));
        }
        out
    }

    fn named_state_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (part, seq) in [("encoder", &mut self.encoder), ("decoder", &mut self.decoder)] {
            for (i, layer) in seq.layers.iter_mut().enumerate() {
                let kind = layer.kind();
                for (name, t) in layer.state_mut() {
                    out.push((format!("{part}.{i}.{kind}.{name}"), t));
                }
            }
        }
        if let Some(h) = self.head.as_mut() {
            out.push(("head.dense.weight".into(), &mut h.weight));
            out.push(("head.dense.bias".into(), &mut h.bias));
        }
        out
    }

    pub fn total_state_count(&self) -> usize {
        self.named_state().iter().map(|(_, t)| t.len()).sum()
    }

    /// Copies parameter values (not gradients) from another graph with the
    /// same architecture.
    pub fn copy_state_from(&mut self, other: &ModelGraph) -> Result<()> {
        let src: Vec<(String, Tensor)> = other
            .named_state()
            .into_iter()
            .map(|(n, t)| (n, t.clone()))
            .collect();
        self.load_state(src)
    }

    fn load_state(&mut self, tensors: Vec<(String, Tensor)>) -> Result<()> {
        let mut dst = self.named_state_mut();
        if dst.len() != tensors.len() {
            return Err(Error::shape(format!(
                "state has {} tensors, model expects {}",
                tensors.len(),
                dst.len()
            )));
        }
        for ((dn, dt), (sn, st)) in dst.iter_mut().zip(tensors) {
            if *dn != sn || dt.shape() != st.shape() {
                return Err(Error::shape(format!(
                    "state tensor {sn} {:?} does not match {dn} {:?}",
                    st.shape(),
                    dt.shape()
                )));
            }
            dt.data_mut().copy_from_slice(st.data());
        }
        Ok(())
    }

    /// Saves config, metadata and every state tensor. The seed is
    /// irrelevant on load since all values are overwritten.
    pub fn save(&self, path: &Path, dtype: Dtype) -> Result<()> {
        let meta = serde_json::to_string(&SavedHeader {
            config: self.config.clone(),
            metadata: self.metadata.clone(),
        })
        .expect("header serializes");
        let state = self.named_state();
        checkpoint::save(path, &meta, &state, dtype)
    }

    pub fn load(path: &Path) -> Result<ModelGraph> {
        let ck = checkpoint::load(path)?;
        let header: SavedHeader = serde_json::from_str(&ck.meta)
            .map_err(|e| Error::format(path, format!("model header: {e}")))?;
        let mut model = build(&header.config, 0)?;
        model.metadata = header.metadata;
        model.load_state(ck.tensors)?;
        Ok(model)
    }

    /// Signature of the ReLU / pooling branch taken by the last forward.
    pub fn branch_signature(&self) -> u64 {
        self.encoder
            .branch_signature()
            .wrapping_mul(31)
            .wrapping_add(self.decoder.branch_signature())
    }

    pub fn clear_cache(&mut self) {
        self.encoder.clear_cache();
        self.decoder.clear_cache();
    }
}

#[derive(Serialize, Deserialize)]
struct SavedHeader {
    config: AeConfig,
    metadata: ModelMetadata,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::LossWeights;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_conv(family: ModelFamily) -> AeConfig {
        AeConfig {
            family,
            input_bins: 16,
            frames_per_segment: 8,
            hop_frames: 4,
            encoder_filters: vec![2, 3, 4],
            bottleneck_dim: 5,
            n_classes: (family == ModelFamily::SemiSupervised).then_some(3),
            loss_weights: if family == ModelFamily::SemiSupervised {
                LossWeights::new(0.7, 0.3).unwrap()
            } else {
                LossWeights::UNSUPERVISED
            },
            ..AeConfig::default()
        }
    }

    #[test]
    fn default_shapes_propagate() {
        let mut m = build_unsupervised(&AeConfig::unsupervised(), 1).unwrap();
        let x = Tensor::zeros(&[1, 1, 64, 64]);
        let f = m.forward(&x, Mode::Inference).unwrap();
        assert_eq!(f.bottleneck.shape(), &[1, 128]);
        assert_eq!(f.reconstruction.shape(), x.shape());
        // Flatten input is 8 x 8 x 128.
        let flat_dense = m.encoder.layers.iter().rev().find_map(|l| match l {
            Layer::Dense(d) => Some(d.in_dim()),
            _ => None,
        });
        assert_eq!(flat_dense, Some(8192));
        match m.decoder.layers.last().unwrap() {
            Layer::Conv2d(c) => assert_eq!(c.out_channels(), 1),
            other => panic!("last layer is {}", other.kind()),
        }
    }

    #[test]
    fn decoder_mirrors_encoder() {
        let m = build_unsupervised(&AeConfig::unsupervised(), 1).unwrap();
        let convs = |s: &Sequential| -> Vec<usize> {
            s.layers
                .iter()
                .filter_map(|l| match l {
                    Layer::Conv2d(c) => Some(c.out_channels()),
                    _ => None,
                })
                .collect()
        };
        assert_eq!(convs(&m.encoder), vec![32, 32, 64, 64, 128, 128]);
        assert_eq!(convs(&m.decoder), vec![128, 128, 64, 64, 32, 32, 1]);
        let kinds: Vec<_> = m.encoder.layers[..7].iter().map(|l| l.kind()).collect();
        assert_eq!(
            kinds,
            ["conv2d", "batchnorm", "relu", "conv2d", "batchnorm", "relu", "maxpool2x2"]
        );
    }

    #[test]
    fn bottleneck_is_narrowest_dense() {
        let m = build_unsupervised(&AeConfig::unsupervised(), 1).unwrap();
        let widths: Vec<usize> = m
            .encoder
            .layers
            .iter()
            .chain(&m.decoder.layers)
            .filter_map(|l| match l {
                Layer::Dense(d) => Some(d.out_dim()),
                _ => None,
            })
            .collect();
        assert_eq!(widths, vec![128, 8192]);
    }

    #[test]
    fn semisupervised_head_and_shared_trunk() {
        let ss = build_semisupervised(
            &AeConfig::semi_supervised(6, LossWeights::new(0.7, 0.3).unwrap()),
            3,
        )
        .unwrap();
        assert_eq!(ss.head.as_ref().unwrap().out_dim(), 6);
        let u = build_unsupervised(&AeConfig::unsupervised(), 3).unwrap();
        let a = u.named_state();
        let b = ss.named_state();
        for ((na, ta), (nb, tb)) in a.iter().zip(&b) {
            assert_eq!(na, nb);
            assert_eq!(ta, tb);
        }
    }

    #[test]
    fn semisupervised_rejects_bad_weights() {
        let mut c = AeConfig::semi_supervised(6, LossWeights::UNSUPERVISED);
        c.loss_weights = LossWeights {
            alpha: 0.6,
            beta: 0.6,
        };
        assert!(matches!(build_semisupervised(&c, 0), Err(Error::Config(_))));
    }

    #[test]
    fn indivisible_input_rejected() {
        let mut c = AeConfig::unsupervised();
        c.input_bins = 60;
        assert!(matches!(build_unsupervised(&c, 0), Err(Error::Config(_))));
    }

    #[test]
    fn baseline_parameter_count() {
        let mut m = build_baseline_dense(&AeConfig::baseline(), 0).unwrap();
        // Dense layers: 640*128+128, 3x(128*128+128), 128*8+8, 8*128+128,
        // 3x(128*128+128), 128*640+640 = 265864. BN gamma/beta over
        // 8 x 128 + 8 units = 2064, and as many running statistics.
        assert_eq!(m.trainable_count(), 265_864 + 2_064);
        assert_eq!(m.total_state_count(), 265_864 + 2 * 2_064);
        let x = Tensor::zeros(&[2, 640]);
        let f = m.forward(&x, Mode::Train).unwrap();
        assert_eq!(f.bottleneck.shape(), &[2, 8]);
        assert_eq!(f.reconstruction.shape(), &[2, 640]);
    }

    #[test]
    fn baseline_rejects_other_widths() {
        let mut c = AeConfig::baseline();
        c.baseline_input_dim = 320;
        assert!(build_baseline_dense(&c, 0).is_err());
    }

    #[test]
    fn small_round_trip_shape_all_families() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for fam in [ModelFamily::Unsupervised, ModelFamily::SemiSupervised] {
            let mut m = build(&small_conv(fam), 0).unwrap();
            let x = Tensor::randn(&[3, 1, 16, 8], &mut rng);
            let f = m.forward(&x, Mode::Train).unwrap();
            assert_eq!(f.reconstruction.shape(), x.shape());
            assert_eq!(f.logits.is_some(), fam == ModelFamily::SemiSupervised);
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let mut m = build(&small_conv(ModelFamily::SemiSupervised), 5).unwrap();
        m.metadata.norm_stats_hash = Some("abc".into());
        m.save(&p, Dtype::F64).unwrap();
        let back = ModelGraph::load(&p).unwrap();
        assert_eq!(back.metadata, m.metadata);
        assert_eq!(back.config, m.config);
        for ((_, a), (_, b)) in back.named_state().iter().zip(m.named_state()) {
            assert_eq!(*a, b);
        }
    }
}
