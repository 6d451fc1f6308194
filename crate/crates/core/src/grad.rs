//! Gradient bundles and the central-difference gradient check.

use crate::error::{Error, Result};
use crate::layers::Sequential;
use crate::tensor::Tensor;

/// Reverse-mode gradients: per-layer parameter gradients (same shapes as the
/// parameters) and the gradient w.r.t. the network input.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBundle {
    pub layers: Vec<Vec<Tensor>>,
    pub input: Tensor,
}

impl GradBundle {
    /// Parameter gradients flattened in canonical parameter order.
    pub fn flat_params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flatten()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }
}

/// A scalar loss over some network output, returning the loss and its
/// gradient w.r.t. that output (the cotangent, in the output's own layout).
pub trait Objective<O> {
    fn value_and_cotangent(&self, output: &O) -> Result<(f64, O)>;
}

impl<O, F> Objective<O> for F
where
    F: Fn(&O) -> Result<(f64, O)>,
{
    fn value_and_cotangent(&self, output: &O) -> Result<(f64, O)> {
        self(output)
    }
}

/// Anything with flat-indexable parameters, a forward evaluation and a
/// reverse pass.
pub trait Differentiable {
    type Output;

    fn param_tensors(&self) -> Vec<&Tensor>;
    fn param_tensors_mut(&mut self) -> Vec<&mut Tensor>;
    fn evaluate(&self, input: &Tensor) -> Result<Self::Output>;
    fn gradient(&self, input: &Tensor, cotangent: &Self::Output) -> Result<GradBundle>;

    fn flat_param_count(&self) -> usize {
        self.param_tensors().iter().map(|t| t.len()).sum()
    }
}

fn locate<'a>(tensors: &'a mut [&mut Tensor], mut index: usize) -> &'a mut f64 {
    for t in tensors.iter_mut() {
        if index < t.len() {
            return &mut t.data_mut()[index];
        }
        index -= t.len();
    }
    panic!("parameter index out of range")
}

fn checked_loss<M, L>(model: &M, input: &Tensor, loss: &L) -> Result<f64>
where
    M: Differentiable,
    L: Objective<M::Output> + ?Sized,
{
    let out = model.evaluate(input)?;
    let (value, _) = loss.value_and_cotangent(&out)?;
    if !value.is_finite() {
        return Err(Error::Numeric(format!("loss is {value}")));
    }
    Ok(value)
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs() + 1e-12)
}

/// Max relative error between analytic gradients and central differences,
/// over every parameter and every input entry.
///
/// The relative error of one entry is
/// `|analytic - central| / (|analytic| + |central| + 1e-12)`; an empty
/// parameter and input set yields 0.
pub fn finite_diff_check<M, L>(model: &mut M, input: &Tensor, loss: &L, step: f64) -> Result<f64>
where
    M: Differentiable,
    L: Objective<M::Output> + ?Sized,
{
    if !(step > 0.0) {
        return Err(Error::Usage(format!("step must be positive, got {step}")));
    }
    let out = model.evaluate(input)?;
    let (value, cotangent) = loss.value_and_cotangent(&out)?;
    if !value.is_finite() {
        return Err(Error::Numeric(format!("loss is {value}")));
    }
    let grads = model.gradient(input, &cotangent)?;
    let analytic_params = grads.flat_params();

    let mut worst: f64 = 0.0;
    for (i, &analytic) in analytic_params.iter().enumerate() {
        let original = *locate(&mut model.param_tensors_mut(), i);
        *locate(&mut model.param_tensors_mut(), i) = original + step;
        let plus = checked_loss(model, input, loss);
        *locate(&mut model.param_tensors_mut(), i) = original - step;
        let minus = checked_loss(model, input, loss);
        *locate(&mut model.param_tensors_mut(), i) = original;
        let central = (plus? - minus?) / (2.0 * step);
        worst = worst.max(relative_error(analytic, central));
    }

    let mut probe = input.clone();
    for (i, &analytic) in grads.input.data().iter().enumerate() {
        let original = probe.data()[i];
        probe.data_mut()[i] = original + step;
        let plus = checked_loss(model, &probe, loss)?;
        probe.data_mut()[i] = original - step;
        let minus = checked_loss(model, &probe, loss)?;
        probe.data_mut()[i] = original;
        worst = worst.max(relative_error(analytic, (plus - minus) / (2.0 * step)));
    }
    Ok(worst)
}

/// A bare layer stack evaluated on one sample; output is the flat activation.
impl Differentiable for Sequential {
    type Output = Vec<f64>;

    fn param_tensors(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| l.params.iter()).collect()
    }

    fn param_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.params.iter_mut()).collect()
    }

    fn evaluate(&self, input: &Tensor) -> Result<Vec<f64>> {
        if input.len() % self.input_len() != 0 {
            return Err(Error::Shape {
                expected: self.input_shape.clone(),
                actual: input.shape().to_vec(),
            });
        }
        Ok(self.forward(input.data(), input.len() / self.input_len()).0)
    }

    fn gradient(&self, input: &Tensor, cotangent: &Vec<f64>) -> Result<GradBundle> {
        let batch = input.len() / self.input_len();
        let (_, cache) = self.forward(input.data(), batch);
        let (layers, dx) = self.backward(&cache, cotangent)?;
        Ok(GradBundle {
            layers,
            input: Tensor::from_parts(input.shape().to_vec(), dx),
        })
    }
}

/// `0.5 * sum(w_i * y_i^2)` with fixed per-entry weights: a smooth test loss
/// whose cotangent is `w_i * y_i`.
pub fn weighted_quadratic(weights: Vec<f64>) -> impl Fn(&Vec<f64>) -> Result<(f64, Vec<f64>)> {
    move |y: &Vec<f64>| {
        if y.len() != weights.len() {
            return Err(Error::Shape {
                expected: vec![weights.len()],
                actual: vec![y.len()],
            });
        }
        let value = 0.5 * y.iter().zip(&weights).map(|(v, w)| w * v * v).sum::<f64>();
        let cot = y.iter().zip(&weights).map(|(v, w)| w * v).collect();
        Ok((value, cot))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::LayerSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_parameter_model_with_constant_loss_is_exact() {
        let mut net = Sequential::init(&[3], &[], &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let input = Tensor::new(vec![3], vec![0.1, 0.2, 0.3]).unwrap();
        let constant = |y: &Vec<f64>| Ok((1.0, vec![0.0; y.len()]));
        assert_eq!(finite_diff_check(&mut net, &input, &constant, 1e-5).unwrap(), 0.0);
    }

    #[test]
    fn dense_quadratic_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = Sequential::init(
            &[5],
            &[LayerSpec::Dense {
                inputs: 5,
                outputs: 3,
            }],
            &mut rng,
        )
        .unwrap();
        let input = Tensor::new(vec![5], (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let loss = weighted_quadratic(vec![1.0, 2.0, 0.5]);
        let err = finite_diff_check(&mut net, &input, &loss, 1e-5).unwrap();
        assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn rejects_bad_step_and_non_finite_loss() {
        let mut net = Sequential::init(&[2], &[], &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let input = Tensor::zeros(&[2]);
        let loss = weighted_quadratic(vec![1.0, 1.0]);
        assert!(matches!(finite_diff_check(&mut net, &input, &loss, 0.0), Err(Error::Usage(_))));
        let nan = |y: &Vec<f64>| Ok((f64::NAN, y.clone()));
        assert!(matches!(finite_diff_check(&mut net, &input, &nan, 1e-5), Err(Error::Numeric(_))));
    }
}
