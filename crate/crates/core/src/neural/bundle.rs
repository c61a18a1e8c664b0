//! Architecture manifests, weight bundles and the forward passes that run on them.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::container::{self, Entry};
use super::ops;
use super::tensor::{LatentVec, Tensor, LATENT_DIM};
use crate::error::{Error, FormatError, Result};

pub const MANIFEST_TENSOR: &str = "__manifest__";
pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const LEAKY_SLOPE: f32 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "fn", rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu { slope: f32 },
}

impl Activation {
    fn apply(self, t: Tensor) -> Tensor {
        match self {
            Activation::Identity => t,
            Activation::Relu => ops::relu(&t),
            Activation::LeakyRelu { slope } => ops::leaky_relu(&t, slope),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        name: String,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        activation: Activation,
    },
    Flatten,
    Dense {
        name: String,
        in_features: usize,
        out_features: usize,
        activation: Activation,
    },
    LayerNorm {
        name: String,
        features: usize,
        eps: f64,
    },
    Activation {
        activation: Activation,
    },
    /// Parallel dense heads producing `(mu, logvar)`.
    LatentHeads {
        name: String,
        in_features: usize,
        latent_dim: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    /// `[H, W, C]`
    pub input: [usize; 3],
    pub layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combiner {
    Add,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub combiner: Combiner,
    pub latent_dim: usize,
    pub layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub version: u32,
    pub latent_dim: usize,
    pub audio_encoder: EncoderSpec,
    pub movement_encoder: EncoderSpec,
    pub generator: GeneratorSpec,
}

pub const ENCODER_CHANNELS: [usize; 5] = [32, 64, 128, 256, 256];
pub const GENERATOR_HIDDEN: usize = 256;

fn encoder_spec(prefix: &str, input: [usize; 3]) -> EncoderSpec {
    let mut layers = Vec::new();
    let mut cin = input[2];
    let mut side = input[0];
    for (i, &cout) in ENCODER_CHANNELS.iter().enumerate() {
        layers.push(LayerSpec::Conv2d {
            name: format!("{prefix}.conv{}", i + 1),
            in_channels: cin,
            out_channels: cout,
            kernel: 4,
            stride: 2,
            padding: 1,
            activation: Activation::Relu,
        });
        cin = cout;
        side /= 2;
    }
    layers.push(LayerSpec::Flatten);
    layers.push(LayerSpec::LatentHeads {
        name: format!("{prefix}.head"),
        in_features: side * side * cin,
        latent_dim: LATENT_DIM,
    });
    EncoderSpec { input, layers }
}

impl Architecture {
    /// Five stride-2 conv stages per encoder and a two-hidden-layer generator.
    pub fn standard() -> Self {
        let leaky = Activation::LeakyRelu { slope: LEAKY_SLOPE };
        let mut gen = Vec::new();
        let mut fin = LATENT_DIM;
        for i in 1..=2 {
            gen.push(LayerSpec::Dense {
                name: format!("generator.fc{i}"),
                in_features: fin,
                out_features: GENERATOR_HIDDEN,
                activation: Activation::Identity,
            });
            gen.push(LayerSpec::LayerNorm {
                name: format!("generator.norm{i}"),
                features: GENERATOR_HIDDEN,
                eps: LAYER_NORM_EPS,
            });
            gen.push(LayerSpec::Activation { activation: leaky });
            fin = GENERATOR_HIDDEN;
        }
        gen.push(LayerSpec::Dense {
            name: "generator.out".into(),
            in_features: GENERATOR_HIDDEN,
            out_features: LATENT_DIM,
            activation: Activation::Identity,
        });
        Self {
            version: 1,
            latent_dim: LATENT_DIM,
            audio_encoder: encoder_spec("audio_encoder", [224, 224, 1]),
            movement_encoder: encoder_spec("movement_encoder", [256, 256, 3]),
            generator: GeneratorSpec {
                combiner: Combiner::Add,
                latent_dim: LATENT_DIM,
                layers: gen,
            },
        }
    }

    /// Every tensor the manifest requires, with its expected dims.
    pub fn required_tensors(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for layers in [
            &self.audio_encoder.layers,
            &self.movement_encoder.layers,
            &self.generator.layers,
        ] {
            for layer in layers {
                out.extend(layer_tensors(layer));
            }
        }
        out
    }
}

fn layer_tensors(layer: &LayerSpec) -> Vec<(String, Vec<usize>)> {
    match layer {
        LayerSpec::Conv2d {
            name,
            in_channels,
            out_channels,
            kernel,
            ..
        } => vec![
            (format!("{name}.weight"), vec![*kernel, *kernel, *in_channels, *out_channels]),
            (format!("{name}.bias"), vec![*out_channels]),
        ],
        LayerSpec::Dense {
            name,
            in_features,
            out_features,
            ..
        } => vec![
            (format!("{name}.weight"), vec![*in_features, *out_features]),
            (format!("{name}.bias"), vec![*out_features]),
        ],
        LayerSpec::LayerNorm { name, features, .. } => vec![
            (format!("{name}.gamma"), vec![*features]),
            (format!("{name}.beta"), vec![*features]),
        ],
        LayerSpec::LatentHeads {
            name,
            in_features,
            latent_dim,
        } => ["mu", "logvar"]
            .iter()
            .flat_map(|h| {
                [
                    (format!("{name}.{h}.weight"), vec![*in_features, *latent_dim]),
                    (format!("{name}.{h}.bias"), vec![*latent_dim]),
                ]
            })
            .collect(),
        LayerSpec::Flatten | LayerSpec::Activation { .. } => Vec::new(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Shape {
    Spatial(usize, usize, usize),
    Flat(usize),
    Heads(usize),
}

fn flow(layers: &[LayerSpec], input: Shape, section: &str) -> std::result::Result<Shape, FormatError> {
    let fail = |msg: String| FormatError::ShapeFlow(format!("{section}: {msg}"));
    let mut shape = input;
    for layer in layers {
        shape = match (layer, &shape) {
            (
                LayerSpec::Conv2d {
                    name,
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                    ..
                },
                Shape::Spatial(h, w, c),
            ) => {
                if c != in_channels {
                    return Err(fail(format!("{name} expects {in_channels} channels, gets {c}")));
                }
                let oh = ops::conv_output_size(*h, *kernel, *stride, *padding);
                let ow = ops::conv_output_size(*w, *kernel, *stride, *padding);
                match (oh, ow) {
                    (Some(oh), Some(ow)) => Shape::Spatial(oh, ow, *out_channels),
                    _ => return Err(fail(format!("{name} does not fit a {h}x{w} input"))),
                }
            }
            (LayerSpec::Flatten, Shape::Spatial(h, w, c)) => Shape::Flat(h * w * c),
            (
                LayerSpec::Dense {
                    name,
                    in_features,
                    out_features,
                    ..
                },
                Shape::Flat(n),
            ) => {
                if n != in_features {
                    return Err(fail(format!("{name} expects {in_features} features, gets {n}")));
                }
                Shape::Flat(*out_features)
            }
            (LayerSpec::LayerNorm { name, features, .. }, Shape::Flat(n)) => {
                if n != features {
                    return Err(fail(format!("{name} normalizes {features} features, gets {n}")));
                }
                shape.clone()
            }
            (LayerSpec::Activation { .. }, _) => shape.clone(),
            (
                LayerSpec::LatentHeads {
                    name,
                    in_features,
                    latent_dim,
                },
                Shape::Flat(n),
            ) => {
                if n != in_features {
                    return Err(fail(format!("{name} expects {in_features} features, gets {n}")));
                }
                Shape::Heads(*latent_dim)
            }
            (layer, shape) => return Err(fail(format!("{layer:?} cannot follow {shape:?}"))),
        };
    }
    Ok(shape)
}

/// Architecture manifest plus named weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightBundle {
    architecture: Architecture,
    tensors: BTreeMap<String, Tensor>,
}

impl WeightBundle {
    pub fn new(architecture: Architecture, tensors: BTreeMap<String, Tensor>) -> Result<Self> {
        let bundle = Self {
            architecture,
            tensors,
        };
        bundle.validate()?;
        Ok(bundle)
    }

    /// Build a bundle whose tensors are produced by `init(name, dims)`.
    pub fn from_fn(architecture: Architecture, mut init: impl FnMut(&str, &[usize]) -> Tensor) -> Result<Self> {
        let tensors = architecture
            .required_tensors()
            .into_iter()
            .map(|(name, dims)| {
                let t = init(&name, &dims);
                (name, t)
            })
            .collect();
        Self::new(architecture, tensors)
    }

    pub fn zeros() -> Self {
        Self::from_fn(Architecture::standard(), |_, dims| Tensor::zeros(dims.to_vec()))
            .expect("standard architecture is consistent")
    }

    /// He-initialized conv and dense weights, zero biases, unit LayerNorm gains.
    pub fn random(seed: u64) -> Self {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Self::from_fn(Architecture::standard(), |name, dims| {
            let n: usize = dims.iter().product();
            let data = if name.ends_with(".gamma") {
                vec![1.0; n]
            } else if name.ends_with(".bias") || name.ends_with(".beta") {
                vec![0.0; n]
            } else {
                let fan_in: usize = dims[..dims.len() - 1].iter().product();
                let gain = if name.contains(".head.") { 1.0 } else { 2.0 };
                let normal = Normal::new(0.0, (gain / fan_in as f64).sqrt()).expect("finite std");
                (0..n).map(|_| normal.sample(&mut rng) as f32).collect()
            };
            Tensor::new(dims.to_vec(), data).expect("dims match")
        })
        .expect("standard architecture is consistent")
    }

    pub fn architecture(&self) -> &Architecture {
        &self.architecture
    }

    pub fn tensors(&self) -> &BTreeMap<String, Tensor> {
        &self.tensors
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::invalid(format!("bundle has no tensor `{name}`")))
    }

    /// Check tensor presence and shapes, and that each section's shapes chain
    /// from its declared input to a latent.
    pub fn validate(&self) -> std::result::Result<(), FormatError> {
        let arch = &self.architecture;
        for (name, dims) in arch.required_tensors() {
            match self.tensors.get(&name) {
                None => return Err(FormatError::ShapeFlow(format!("missing tensor `{name}`"))),
                Some(t) if t.dims() != dims.as_slice() => {
                    return Err(FormatError::ShapeFlow(format!(
                        "`{name}` is {:?}, manifest needs {dims:?}",
                        t.dims()
                    )))
                }
                Some(_) => {}
            }
        }
        for (section, spec) in [
            ("audio_encoder", &arch.audio_encoder),
            ("movement_encoder", &arch.movement_encoder),
        ] {
            let [h, w, c] = spec.input;
            let out = flow(&spec.layers, Shape::Spatial(h, w, c), section)?;
            if out != Shape::Heads(arch.latent_dim) {
                return Err(FormatError::ShapeFlow(format!("{section} ends in {out:?}")));
            }
        }
        let out = flow(&arch.generator.layers, Shape::Flat(arch.generator.latent_dim), "generator")?;
        if out != Shape::Flat(arch.latent_dim) || arch.generator.latent_dim != arch.latent_dim {
            return Err(FormatError::ShapeFlow(format!("generator ends in {out:?}")));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let manifest = serde_json::to_vec(&self.architecture).expect("manifest serializes");
        let mut entries = vec![(MANIFEST_TENSOR.to_owned(), Entry::Bytes(manifest))];
        entries.extend(
            self.tensors
                .iter()
                .map(|(k, v)| (k.clone(), Entry::F32(v.clone()))),
        );
        container::encode(&entries)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut manifest = None;
        let mut tensors = BTreeMap::new();
        for (name, entry) in container::decode(bytes)? {
            match (name.as_str(), entry) {
                (MANIFEST_TENSOR, Entry::Bytes(b)) => manifest = Some(b),
                (_, Entry::F32(t)) => {
                    if tensors.insert(name.clone(), t).is_some() {
                        return Err(FormatError::Malformed(format!("duplicate tensor `{name}`")).into());
                    }
                }
                (_, Entry::Bytes(_)) => {
                    return Err(FormatError::Malformed(format!("unexpected byte tensor `{name}`")).into())
                }
            }
        }
        let manifest = manifest
            .ok_or_else(|| FormatError::Malformed(format!("no `{MANIFEST_TENSOR}` entry")))?;
        let architecture: Architecture = serde_json::from_slice(&manifest)
            .map_err(|e| FormatError::Malformed(format!("manifest: {e}")))?;
        Self::new(architecture, tensors)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::fsutil::write_atomic(path, &self.to_bytes())
    }

    /// Hex SHA-256 of the serialized bundle.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }

    pub fn audio_encoder(&self) -> Encoder<'_> {
        Encoder {
            spec: &self.architecture.audio_encoder,
            bundle: self,
        }
    }

    pub fn movement_encoder(&self) -> Encoder<'_> {
        Encoder {
            spec: &self.architecture.movement_encoder,
            bundle: self,
        }
    }

    pub fn generator(&self) -> Generator<'_> {
        Generator {
            spec: &self.architecture.generator,
            bundle: self,
        }
    }

    /// Run every section once on zero inputs at its declared dims.
    pub fn dry_run(&self) -> Result<()> {
        for enc in [self.audio_encoder(), self.movement_encoder()] {
            let (mu, logvar) = enc.encode(&Tensor::zeros(enc.input_dims().to_vec()))?;
            debug_assert_eq!(mu.as_slice().len(), logvar.as_slice().len());
        }
        self.generator().forward(&LatentVec::zeros(), &LatentVec::zeros())?;
        Ok(())
    }

    fn run_layers(&self, layers: &[LayerSpec], mut x: Tensor) -> Result<Forward> {
        for layer in layers {
            x = match layer {
                LayerSpec::Conv2d {
                    name,
                    stride,
                    padding,
                    activation,
                    ..
                } => {
                    let y = ops::conv2d(
                        &x,
                        self.tensor(&format!("{name}.weight"))?,
                        Some(self.tensor(&format!("{name}.bias"))?),
                        *stride,
                        *padding,
                    )?;
                    activation.apply(y)
                }
                LayerSpec::Flatten => {
                    let n = x.len();
                    x.reshape(vec![n])?
                }
                LayerSpec::Dense { name, activation, .. } => {
                    let y = ops::dense(
                        &x,
                        self.tensor(&format!("{name}.weight"))?,
                        self.tensor(&format!("{name}.bias"))?,
                    )?;
                    activation.apply(y)
                }
                LayerSpec::LayerNorm { name, eps, .. } => ops::layer_norm(
                    &x,
                    self.tensor(&format!("{name}.gamma"))?,
                    self.tensor(&format!("{name}.beta"))?,
                    *eps,
                )?,
                LayerSpec::Activation { activation } => activation.apply(x),
                LayerSpec::LatentHeads { name, .. } => {
                    let head = |h: &str| -> Result<LatentVec> {
                        let y = ops::dense(
                            &x,
                            self.tensor(&format!("{name}.{h}.weight"))?,
                            self.tensor(&format!("{name}.{h}.bias"))?,
                        )?;
                        LatentVec::new(y.into_data())
                    };
                    return Ok(Forward::Heads(head("mu")?, head("logvar")?));
                }
            };
        }
        Ok(Forward::Tensor(x))
    }
}

enum Forward {
    Tensor(Tensor),
    Heads(LatentVec, LatentVec),
}

/// View of one encoder section of a bundle.
#[derive(Clone, Copy)]
pub struct Encoder<'a> {
    spec: &'a EncoderSpec,
    bundle: &'a WeightBundle,
}

impl Encoder<'_> {
    pub fn input_dims(&self) -> [usize; 3] {
        self.spec.input
    }

    /// Posterior mean and log-variance of an `[H, W, C]` image.
    pub fn encode(&self, image: &Tensor) -> Result<(LatentVec, LatentVec)> {
        if image.dims() != self.spec.input {
            return Err(Error::invalid(format!(
                "encoder expects {:?}, got {:?}",
                self.spec.input,
                image.dims()
            )));
        }
        match self.bundle.run_layers(&self.spec.layers, image.clone())? {
            Forward::Heads(mu, logvar) => Ok((mu, logvar)),
            Forward::Tensor(_) => Err(FormatError::ShapeFlow("encoder has no latent heads".into()).into()),
        }
    }
}

/// Draw `mu + exp(logvar / 2) * eps` with standard normal `eps`.
pub fn reparameterize<R: Rng>(mu: &LatentVec, logvar: &LatentVec, rng: &mut R) -> LatentVec {
    use rand_distr::{Distribution, StandardNormal};
    let z = mu
        .as_slice()
        .iter()
        .zip(logvar.as_slice())
        .map(|(&m, &lv)| {
            let eps: f64 = StandardNormal.sample(rng);
            (m as f64 + (0.5 * lv as f64).exp() * eps) as f32
        })
        .collect();
    LatentVec::new(z).expect("finite sample")
}

/// View of the generator section of a bundle.
#[derive(Clone, Copy)]
pub struct Generator<'a> {
    spec: &'a GeneratorSpec,
    bundle: &'a WeightBundle,
}

impl Generator<'_> {
    pub fn forward(&self, z_move: &LatentVec, z_prev_audio: &LatentVec) -> Result<LatentVec> {
        let combined = match self.spec.combiner {
            Combiner::Add => z_move.add(z_prev_audio),
        };
        let x = Tensor::new(vec![self.spec.latent_dim], combined.into())?;
        match self.bundle.run_layers(&self.spec.layers, x)? {
            Forward::Tensor(t) => LatentVec::new(t.into_data()),
            Forward::Heads(..) => Err(FormatError::ShapeFlow("generator ends in latent heads".into()).into()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn standard_architecture_validates() {
        let b = WeightBundle::zeros();
        b.validate().unwrap();
        b.dry_run().unwrap();
    }

    #[test]
    fn missing_or_misshapen_tensor_is_shape_flow_error() {
        let b = WeightBundle::zeros();
        let mut tensors = b.tensors().clone();
        tensors.remove("generator.fc1.weight");
        let err = WeightBundle::new(Architecture::standard(), tensors).unwrap_err();
        assert!(matches!(err, Error::Format(FormatError::ShapeFlow(_))));

        let mut tensors = b.tensors().clone();
        tensors.insert("generator.fc1.bias".into(), Tensor::zeros(vec![255]));
        assert!(WeightBundle::new(Architecture::standard(), tensors).is_err());

        let mut arch = Architecture::standard();
        arch.movement_encoder.input = [255, 256, 3];
        let err = WeightBundle::from_fn(arch, |_, d| Tensor::zeros(d.to_vec())).unwrap_err();
        assert!(matches!(err, Error::Format(FormatError::ShapeFlow(_))), "{err}");
    }

    #[test]
    fn zero_weights_give_head_bias() {
        let mut b = WeightBundle::zeros();
        let bias: Vec<f32> = (0..LATENT_DIM).map(|i| i as f32 * 0.01).collect();
        b.tensors.insert(
            "audio_encoder.head.mu.bias".into(),
            Tensor::new(vec![LATENT_DIM], bias.clone()).unwrap(),
        );
        let (mu, logvar) = b
            .audio_encoder()
            .encode(&Tensor::zeros(vec![224, 224, 1]))
            .unwrap();
        assert_eq!(mu.as_slice(), &bias[..]);
        assert!(logvar.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn encoder_rejects_wrong_dims() {
        let b = WeightBundle::zeros();
        let err = b.movement_encoder().encode(&Tensor::zeros(vec![224, 224, 1]));
        assert!(matches!(err, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn generator_commutes_and_has_additive_identity() {
        let b = WeightBundle::random(7);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let rand_latent = |rng: &mut rand_chacha::ChaCha8Rng| {
            LatentVec::new((0..LATENT_DIM).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
        };
        let g = b.generator();
        for _ in 0..5 {
            let a = rand_latent(&mut rng);
            let c = rand_latent(&mut rng);
            assert_eq!(g.forward(&a, &c).unwrap(), g.forward(&c, &a).unwrap());
            let out = g.forward(&a, &LatentVec::zeros()).unwrap();
            assert_eq!(out.as_slice().len(), LATENT_DIM);
            assert!(out.as_slice().iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn reparameterized_samples_center_on_mu() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let mu = LatentVec::new((0..LATENT_DIM).map(|i| (i as f32 - 64.0) * 0.05).collect()).unwrap();
        let logvar = LatentVec::new((0..LATENT_DIM).map(|i| (i % 5) as f32 * 0.3 - 0.6).collect()).unwrap();
        let n = 100_000;
        let mut sum = vec![0f64; LATENT_DIM];
        for _ in 0..n {
            for (s, &z) in sum.iter_mut().zip(reparameterize(&mu, &logvar, &mut rng).as_slice()) {
                *s += z as f64;
            }
        }
        for i in 0..LATENT_DIM {
            let sigma = (0.5 * logvar.as_slice()[i] as f64).exp();
            let mean = sum[i] / n as f64;
            assert!(
                (mean - mu.as_slice()[i] as f64).abs() <= 3.0 * sigma / (n as f64).sqrt(),
                "coordinate {i}: {mean} vs {}",
                mu.as_slice()[i]
            );
        }
    }
}
