//! Surrogate-pattern classifier: a trunk feeding a sigmoid surrogate head of
//! `m` units, followed by a linear classifier over those activations.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::grad::{Differentiable, GradBundle};
use crate::layers::{sigmoid, Layer, LayerCache, LayerSpec, Sequential, SequentialCache};
use crate::objective::softmax;
use crate::tensor::Tensor;

/// Reference architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arch {
    /// conv(16) relu pool conv(32) relu pool flatten
    SmallConv,
    /// flatten dense(256) relu
    Mlp,
    /// Caller-supplied trunk. Checkpoints store the layer list.
    Custom,
}

impl Arch {
    pub fn trunk_specs(self, input_shape: &[usize]) -> Result<Vec<LayerSpec>> {
        match self {
            Arch::SmallConv => {
                let &[c, h, w] = input_shape else {
                    return config(format!("small-conv needs a [C,H,W] input, got {input_shape:?}"));
                };
                if h < 4 || w < 4 {
                    return config(format!("small-conv needs H,W >= 4, got {h}x{w}"));
                }
                Ok(vec![
                    LayerSpec::Conv2d {
                        in_channels: c,
                        out_channels: 16,
                    },
                    LayerSpec::Relu,
                    LayerSpec::Maxpool2d,
                    LayerSpec::Conv2d {
                        in_channels: 16,
                        out_channels: 32,
                    },
                    LayerSpec::Relu,
                    LayerSpec::Maxpool2d,
                    LayerSpec::Flatten,
                ])
            }
            Arch::Mlp => Ok(vec![
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    inputs: input_shape.iter().product(),
                    outputs: 256,
                },
                LayerSpec::Relu,
            ]),
            Arch::Custom => config("custom architectures need an explicit layer list"),
        }
    }
}

impl std::str::FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "small-conv" => Ok(Arch::SmallConv),
            "mlp" => Ok(Arch::Mlp),
            other => config(format!("unknown architecture '{other}' (expected small-conv or mlp)")),
        }
    }
}

/// Per-batch outputs of both heads. Also used as the cotangent type for
/// reverse passes, with the same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutputs {
    pub batch: usize,
    /// Pre-sigmoid surrogate values, `batch * m`.
    pub surrogate_logits: Vec<f64>,
    /// Class logits, `batch * k`.
    pub class_logits: Vec<f64>,
}

impl HeadOutputs {
    pub fn zeros(batch: usize, m: usize, k: usize) -> Self {
        Self {
            batch,
            surrogate_logits: vec![0.0; batch * m],
            class_logits: vec![0.0; batch * k],
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModelCache {
    batch: usize,
    trunk: SequentialCache,
    head: LayerCache,
    surrogate: Vec<f64>,
    classifier: LayerCache,
}

/// Result of [`SurrogateModel::predict`] for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// softmax of the class logits
    pub probs: Vec<f64>,
    /// sigmoid surrogate activations in (0,1)
    pub surrogate: Vec<f64>,
    pub surrogate_logits: Vec<f64>,
    pub logits: Vec<f64>,
}

impl Prediction {
    pub fn predicted_class(&self) -> usize {
        argmax(&self.probs)
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateModel {
    pub arch: Arch,
    pub input_shape: Vec<usize>,
    pub trunk: Sequential,
    /// dense layer from trunk features to the `m` surrogate logits
    pub head: Layer,
    /// dense layer from the `m` sigmoid activations to `k` class logits
    pub classifier: Layer,
    pub m: usize,
    pub k: usize,
}

/// Builds one of the reference architectures with Glorot-uniform weights
/// drawn from `seed`.
pub fn build_model(
    arch: Arch,
    input_shape: &[usize],
    m: usize,
    k: usize,
    seed: u64,
) -> Result<SurrogateModel> {
    let specs = arch.trunk_specs(input_shape)?;
    SurrogateModel::with_trunk(arch, input_shape, &specs, m, k, seed)
}

impl SurrogateModel {
    pub fn with_trunk(
        arch: Arch,
        input_shape: &[usize],
        trunk_specs: &[LayerSpec],
        m: usize,
        k: usize,
        seed: u64,
    ) -> Result<Self> {
        let side = (m as f64).sqrt().round() as usize;
        if m == 0 || side * side != m {
            return config(format!("surrogate size m={m} is not a perfect square"));
        }
        if k < 2 {
            return config(format!("need at least 2 classes, got {k}"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trunk = Sequential::init(input_shape, trunk_specs, &mut rng)?;
        if trunk.output_shape().len() != 1 {
            return config(format!(
                "trunk must end in a flat feature vector, got shape {:?}",
                trunk.output_shape()
            ));
        }
        let head = Layer::init(
            LayerSpec::Dense {
                inputs: trunk.output_len(),
                outputs: m,
            },
            trunk.output_shape(),
            &mut rng,
        )?;
        let classifier = Layer::init(LayerSpec::Dense { inputs: m, outputs: k }, &[m], &mut rng)?;
        Ok(Self {
            arch,
            input_shape: input_shape.to_vec(),
            trunk,
            head,
            classifier,
            m,
            k,
        })
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn param_count(&self) -> usize {
        self.trunk.param_count() + self.head.param_count() + self.classifier.param_count()
    }

    /// All parameter tensors in canonical order: trunk layers, head, classifier.
    pub fn params(&self) -> Vec<&Tensor> {
        self.trunk
            .layers
            .iter()
            .chain([&self.head, &self.classifier])
            .flat_map(|l| l.params.iter())
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.trunk
            .layers
            .iter_mut()
            .chain([&mut self.head, &mut self.classifier])
            .flat_map(|l| l.params.iter_mut())
            .collect()
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        self.trunk.layers.iter().map(|l| l.spec).collect()
    }

    /// Classifier weight rows, `k` rows of length `m`.
    pub fn classifier_weights(&self) -> &[f64] {
        self.classifier.params[0].data()
    }

    pub fn classifier_bias(&self) -> &[f64] {
        self.classifier.params[1].data()
    }

    /// Batched forward pass of both heads.
    pub fn forward(&self, inputs: &[f64], batch: usize) -> Result<(HeadOutputs, ModelCache)> {
        if inputs.len() != batch * self.input_len() {
            return Err(Error::Shape {
                expected: vec![batch * self.input_len()],
                actual: vec![inputs.len()],
            });
        }
        let (features, trunk) = self.trunk.forward(inputs, batch);
        let (surrogate_logits, head) = self.head.forward(&features, batch);
        let surrogate: Vec<f64> = surrogate_logits.iter().map(|&v| sigmoid(v)).collect();
        let (class_logits, classifier) = self.classifier.forward(&surrogate, batch);
        Ok((
            HeadOutputs {
                batch,
                surrogate_logits,
                class_logits,
            },
            ModelCache {
                batch,
                trunk,
                head,
                surrogate,
                classifier,
            },
        ))
    }

    /// Reverse pass: gradients of `<outputs, cotangent>` w.r.t. every
    /// parameter and the input batch.
    pub fn backward(&self, cache: &ModelCache, cotangent: &HeadOutputs) -> Result<GradBundle> {
        let batch = cache.batch;
        if cotangent.batch != batch
            || cotangent.class_logits.len() != batch * self.k
            || cotangent.surrogate_logits.len() != batch * self.m
        {
            return Err(Error::Usage(format!(
                "cotangent for batch {} does not match the forward cache (batch {batch})",
                cotangent.batch
            )));
        }
        let (classifier_grads, d_surrogate) =
            self.classifier
                .backward(&cache.classifier, &cotangent.class_logits, batch);
        let d_surrogate_logits: Vec<f64> = d_surrogate
            .iter()
            .zip(&cache.surrogate)
            .zip(&cotangent.surrogate_logits)
            .map(|((&ds, &s), &direct)| ds * s * (1.0 - s) + direct)
            .collect();
        let (head_grads, d_features) = self.head.backward(&cache.head, &d_surrogate_logits, batch);
        let (mut layers, d_input) = self.trunk.backward(&cache.trunk, &d_features)?;
        layers.push(head_grads);
        layers.push(classifier_grads);
        let mut input_shape = vec![batch];
        input_shape.extend_from_slice(&self.input_shape);
        Ok(GradBundle {
            layers,
            input: Tensor::from_parts(input_shape, d_input),
        })
    }

    /// Single-sample prediction.
    pub fn predict(&self, x: &Tensor) -> Result<Prediction> {
        if x.shape() != self.input_shape.as_slice() && x.len() != self.input_len() {
            return Err(Error::Usage(format!(
                "input shape {:?} does not match model input {:?}",
                x.shape(),
                self.input_shape
            )));
        }
        Ok(self.predict_batch(x.data(), 1)?.pop().expect("one prediction"))
    }

    pub fn predict_batch(&self, inputs: &[f64], batch: usize) -> Result<Vec<Prediction>> {
        let (out, cache) = self.forward(inputs, batch)?;
        Ok((0..batch)
            .map(|n| {
                let logits = out.class_logits[n * self.k..(n + 1) * self.k].to_vec();
                Prediction {
                    probs: softmax(&logits),
                    surrogate: cache.surrogate[n * self.m..(n + 1) * self.m].to_vec(),
                    surrogate_logits: out.surrogate_logits[n * self.m..(n + 1) * self.m].to_vec(),
                    logits,
                }
            })
            .collect())
    }

    /// Predictions for many samples, processed in chunks of `chunk`.
    pub fn predict_many(&self, inputs: &[f64], chunk: usize) -> Result<Vec<Prediction>> {
        let n = inputs.len() / self.input_len();
        let mut out = Vec::with_capacity(n);
        let step = chunk.max(1) * self.input_len();
        for part in inputs.chunks(step) {
            out.extend(self.predict_batch(part, part.len() / self.input_len())?);
        }
        Ok(out)
    }
}

impl Differentiable for SurrogateModel {
    type Output = HeadOutputs;

    fn param_tensors(&self) -> Vec<&Tensor> {
        self.params()
    }

    fn param_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.params_mut()
    }

    fn evaluate(&self, input: &Tensor) -> Result<HeadOutputs> {
        let batch = input.len() / self.input_len();
        Ok(self.forward(input.data(), batch)?.0)
    }

    fn gradient(&self, input: &Tensor, cotangent: &HeadOutputs) -> Result<GradBundle> {
        let batch = input.len() / self.input_len();
        let (_, cache) = self.forward(input.data(), batch)?;
        let mut grads = self.backward(&cache, cotangent)?;
        grads.input = grads.input.reshape(input.shape().to_vec())?;
        Ok(grads)
    }
}
