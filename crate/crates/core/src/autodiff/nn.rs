//! One-hidden-layer MLP encoder and decoder.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Gradients, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::gaussian::{DiagGaussian, LOG_VAR_MAX, LOG_VAR_MIN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }
}

/// A trainable tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub value: Tensor,
    pub grad: Tensor,
}

impl Parameter {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Anything that owns an ordered list of named parameters.
pub trait Module {
    fn parameters(&self) -> Vec<&Parameter>;
    fn parameters_mut(&mut self) -> Vec<&mut Parameter>;
    fn parameter_names(&self) -> Vec<String>;

    /// Registers every parameter on the tape, in [`Module::parameters`] order.
    fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.parameters()
            .into_iter()
            .map(|p| tape.param(p.value.clone()))
            .collect()
    }

    /// Adds the tape gradients of `vars` into each parameter's `grad`.
    fn accumulate_grads(&mut self, grads: &Gradients, vars: &[Var]) {
        for (p, v) in self.parameters_mut().into_iter().zip(vars) {
            if let Some(g) = grads.get(*v) {
                p.grad.add_assign(g);
            }
        }
    }

    fn zero_grad(&mut self) {
        self.parameters_mut().into_iter().for_each(Parameter::zero_grad);
    }
}

/// Fully connected layer `x · W + b` with `W: [in, out]`, `b: [1, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Parameter,
    pub bias: Parameter,
}

impl Linear {
    /// Uniform initialization in ±sqrt(1 / fan_in) for weights and biases.
    pub fn new<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = (1.0 / fan_in as f64).sqrt();
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.random_range(-bound..bound)).collect()
        };
        let w = Tensor::from_vec(vec![fan_in, fan_out], draw(fan_in * fan_out)).expect("shape");
        let b = Tensor::from_vec(vec![1, fan_out], draw(fan_out)).expect("shape");
        Self {
            weight: Parameter::new(w),
            bias: Parameter::new(b),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Parameter::new(Tensor::zeros(&[fan_in, fan_out])),
            bias: Parameter::new(Tensor::zeros(&[1, fan_out])),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.value.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.value.cols()
    }

    fn forward(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
        let h = tape.matmul(x, w)?;
        tape.add_row_bias(h, b)
    }
}

fn check_input(context: &'static str, x: &Tensor, expected: usize) -> Result<()> {
    if x.shape().len() != 2 || x.cols() != expected {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            found: x.cols(),
        });
    }
    if !x.is_finite() {
        return Err(Error::NonFinite(context));
    }
    Ok(())
}

/// Tape handles for an encoded batch.
#[derive(Debug, Clone, Copy)]
pub struct EncodedVars {
    pub mean: Var,
    pub log_var: Var,
}

/// Shared hidden layer feeding separate mean and log-variance heads.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpEncoder {
    pub activation: Activation,
    pub hidden: Linear,
    pub mean_head: Linear,
    pub log_var_head: Linear,
}

impl MlpEncoder {
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        hidden_units: usize,
        latent_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        Self {
            activation,
            hidden: Linear::new(input_dim, hidden_units, rng),
            mean_head: Linear::new(hidden_units, latent_dim, rng),
            log_var_head: Linear::new(hidden_units, latent_dim, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.fan_in()
    }

    pub fn hidden_units(&self) -> usize {
        self.hidden.fan_out()
    }

    pub fn latent_dim(&self) -> usize {
        self.mean_head.fan_out()
    }

    /// Records the encoder on `tape`. `vars` must come from [`Module::bind`].
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<EncodedVars> {
        check_input("MlpEncoder::forward", tape.value(x), self.input_dim())?;
        let h = Linear::forward(tape, x, vars[0], vars[1])?;
        let h = self.activation.apply(tape, h);
        let mean = Linear::forward(tape, h, vars[2], vars[3])?;
        let raw = Linear::forward(tape, h, vars[4], vars[5])?;
        let log_var = tape.clamp(raw, LOG_VAR_MIN, LOG_VAR_MAX);
        Ok(EncodedVars { mean, log_var })
    }

    /// Inference-only encoding of a batch into per-row Gaussians.
    pub fn encode(&self, x: &Tensor) -> Result<Vec<DiagGaussian>> {
        let (mean, log_var) = self.encode_tensors(x)?;
        (0..mean.rows())
            .map(|r| DiagGaussian::new(mean.row(r).to_vec(), log_var.row(r).to_vec()))
            .collect()
    }

    /// Inference-only encoding returning `(mean, log_var)` matrices.
    pub fn encode_tensors(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = self
            .parameters()
            .into_iter()
            .map(|p| tape.constant(p.value.clone()))
            .collect();
        let xv = tape.constant(x.clone());
        let out = self.forward(&mut tape, &vars, xv)?;
        Ok((tape.value(out.mean).clone(), tape.value(out.log_var).clone()))
    }
}

impl Module for MlpEncoder {
    fn parameters(&self) -> Vec<&Parameter> {
        vec![
            &self.hidden.weight,
            &self.hidden.bias,
            &self.mean_head.weight,
            &self.mean_head.bias,
            &self.log_var_head.weight,
            &self.log_var_head.bias,
        ]
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        vec![
            &mut self.hidden.weight,
            &mut self.hidden.bias,
            &mut self.mean_head.weight,
            &mut self.mean_head.bias,
            &mut self.log_var_head.weight,
            &mut self.log_var_head.bias,
        ]
    }

    fn parameter_names(&self) -> Vec<String> {
        [
            "hidden.weight",
            "hidden.bias",
            "mean_head.weight",
            "mean_head.bias",
            "log_var_head.weight",
            "log_var_head.bias",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect()
    }
}

/// Latent → hidden → output reconstruction network.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpDecoder {
    pub activation: Activation,
    pub hidden: Linear,
    pub output: Linear,
}

impl MlpDecoder {
    pub fn new<R: Rng + ?Sized>(
        latent_dim: usize,
        hidden_units: usize,
        output_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        Self {
            activation,
            hidden: Linear::new(latent_dim, hidden_units, rng),
            output: Linear::new(hidden_units, output_dim, rng),
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.hidden.fan_in()
    }

    pub fn hidden_units(&self) -> usize {
        self.hidden.fan_out()
    }

    pub fn output_dim(&self) -> usize {
        self.output.fan_out()
    }

    pub fn forward(&self, tape: &mut Tape, vars: &[Var], z: Var) -> Result<Var> {
        check_input("MlpDecoder::forward", tape.value(z), self.latent_dim())?;
        let h = Linear::forward(tape, z, vars[0], vars[1])?;
        let h = self.activation.apply(tape, h);
        Linear::forward(tape, h, vars[2], vars[3])
    }

    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = self
            .parameters()
            .into_iter()
            .map(|p| tape.constant(p.value.clone()))
            .collect();
        let zv = tape.constant(z.clone());
        let out = self.forward(&mut tape, &vars, zv)?;
        Ok(tape.value(out).clone())
    }
}

impl Module for MlpDecoder {
    fn parameters(&self) -> Vec<&Parameter> {
        vec![
            &self.hidden.weight,
            &self.hidden.bias,
            &self.output.weight,
            &self.output.bias,
        ]
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        vec![
            &mut self.hidden.weight,
            &mut self.hidden.bias,
            &mut self.output.weight,
            &mut self.output.bias,
        ]
    }

    fn parameter_names(&self) -> Vec<String> {
        ["hidden.weight", "hidden.bias", "output.weight", "output.bias"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_encoder(input: usize, hidden: usize, latent: usize) -> MlpEncoder {
        MlpEncoder {
            activation: Activation::Relu,
            hidden: Linear::zeros(input, hidden),
            mean_head: Linear::zeros(hidden, latent),
            log_var_head: Linear::zeros(hidden, latent),
        }
    }

    #[test]
    fn zero_encoder_emits_standard_normal() {
        let enc = zero_encoder(3, 4, 2);
        let x = Tensor::from_rows(&[vec![1.0, -2.0, 3.0], vec![0.5, 0.5, 0.5]]).unwrap();
        for g in enc.encode(&x).unwrap() {
            assert_eq!(g, DiagGaussian::standard(2));
        }
    }

    #[test]
    fn attribute_encoder_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc = MlpEncoder::new(312, 1450, 64, Activation::Relu, &mut rng);
        let x = Tensor::filled(&[50, 312], 0.1);
        let out = enc.encode(&x).unwrap();
        assert_eq!(out.len(), 50);
        assert!(out.iter().all(|g| g.dim() == 64));
    }

    #[test]
    fn image_decoder_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dec = MlpDecoder::new(64, 1660, 2048, Activation::Relu, &mut rng);
        let z = Tensor::filled(&[2, 64], 0.3);
        assert_eq!(dec.decode(&z).unwrap().shape(), &[2, 2048]);
    }

    #[test]
    fn hand_set_single_unit_encoder() {
        // x = 1, hidden weight 1, mean head weight 2 → mean = 2 · relu(1) = 2.
        let mut enc = zero_encoder(1, 1, 1);
        enc.hidden.weight.value.values_mut()[0] = 1.0;
        enc.mean_head.weight.value.values_mut()[0] = 2.0;
        let g = &enc.encode(&Tensor::scalar(1.0)).unwrap()[0];
        assert_eq!(g.mean(), &[2.0]);
        assert_eq!(g.log_var(), &[0.0]);
        enc.activation = Activation::Tanh;
        let g = &enc.encode(&Tensor::scalar(1.0)).unwrap()[0];
        assert!((g.mean()[0] - 2.0 * 1f64.tanh()).abs() < 1e-15);
    }

    #[test]
    fn decoder_zero_weights_and_hand_value() {
        let mut dec = MlpDecoder {
            activation: Activation::Relu,
            hidden: Linear::zeros(1, 1),
            output: Linear::zeros(1, 1),
        };
        assert_eq!(dec.decode(&Tensor::scalar(5.0)).unwrap().item(), 0.0);
        dec.output.bias.value.values_mut()[0] = 0.25;
        assert_eq!(dec.decode(&Tensor::scalar(5.0)).unwrap().item(), 0.25);
        // Identity-like: w1 = 1, w2 = 1 → relu(z) + 0.25.
        dec.hidden.weight.value.values_mut()[0] = 1.0;
        dec.output.weight.value.values_mut()[0] = 1.0;
        assert_eq!(dec.decode(&Tensor::scalar(3.0)).unwrap().item(), 3.25);
        assert_eq!(dec.decode(&Tensor::scalar(-3.0)).unwrap().item(), 0.25);
    }

    #[test]
    fn log_var_is_clamped() {
        let mut enc = zero_encoder(1, 1, 1);
        enc.log_var_head.bias.value.values_mut()[0] = 500.0;
        let g = &enc.encode(&Tensor::scalar(0.0)).unwrap()[0];
        assert_eq!(g.log_var(), &[LOG_VAR_MAX]);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let enc = zero_encoder(3, 2, 2);
        assert!(enc.encode(&Tensor::zeros(&[1, 4])).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dec = MlpDecoder::new(2, 3, 4, Activation::Relu, &mut rng);
        assert!(dec.decode(&Tensor::zeros(&[1, 3])).is_err());
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let enc = MlpEncoder::new(5, 7, 3, Activation::Relu, &mut rng);
        let x = Tensor::filled(&[4, 5], 0.7);
        assert_eq!(enc.encode(&x).unwrap(), enc.encode(&x).unwrap());
    }
}
