use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::tape::{sigmoid, softmax_in_place, Tape, Var};
use super::tensor::{matmul, Tensor};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Softmax,
    Sigmoid,
}

/// One affine layer; `weight` is `in × out`, `bias` is `1 × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Affine layers with ReLU between them and `output` after the last one.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Linear>,
    pub output: Activation,
}

impl MlpParams {
    /// Uniform `±sqrt(6 / (fan_in + fan_out))` weights, zero biases.
    pub fn glorot(widths: &[usize], output: Activation, rng: &mut Rng) -> Self {
        let layers = widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| rng.gen_range(-bound..=bound))
                    .collect();
                Linear {
                    weight: Tensor::from_vec(fan_in, fan_out, data).expect("sized"),
                    bias: Tensor::zeros(1, fan_out),
                }
            })
            .collect();
        Self { layers, output }
    }

    pub fn zeros(widths: &[usize], output: Activation) -> Self {
        let layers = widths
            .windows(2)
            .map(|w| Linear {
                weight: Tensor::zeros(w[0], w[1]),
                bias: Tensor::zeros(1, w[1]),
            })
            .collect();
        Self { layers, output }
    }

    /// Layer widths, input first.
    pub fn widths(&self) -> Vec<usize> {
        let mut w: Vec<usize> = self.layers.iter().map(|l| l.weight.rows()).collect();
        if let Some(last) = self.layers.last() {
            w.push(last.weight.cols());
        }
        w
    }

    pub fn input_width(&self) -> usize {
        self.layers.first().map_or(0, |l| l.weight.rows())
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Validation("MLP without layers".into()));
        }
        for (k, l) in self.layers.iter().enumerate() {
            if l.bias.rows() != 1 || l.bias.cols() != l.weight.cols() {
                return Err(Error::Shape {
                    op: "mlp bias",
                    expected: format!("1x{}", l.weight.cols()),
                    actual: format!("{}x{}", l.bias.rows(), l.bias.cols()),
                });
            }
            if let Some(next) = self.layers.get(k + 1) {
                if next.weight.rows() != l.weight.cols() {
                    return Err(Error::Shape {
                        op: "mlp chain",
                        expected: format!("layer {} input {}", k + 1, l.weight.cols()),
                        actual: format!("{}", next.weight.rows()),
                    });
                }
            }
            if !(l.weight.is_finite() && l.bias.is_finite()) {
                return Err(Error::Validation(format!("non-finite values in layer {k}")));
            }
        }
        Ok(())
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    /// Record the parameters on `tape`.
    pub fn bind(&self, tape: &mut Tape, requires_grad: bool) -> MlpVars {
        MlpVars {
            layers: self
                .layers
                .iter()
                .map(|l| {
                    (
                        tape.leaf(l.weight.clone(), requires_grad),
                        tape.leaf(l.bias.clone(), requires_grad),
                    )
                })
                .collect(),
            output: self.output,
        }
    }

    /// Evaluate without recording gradients.
    pub fn eval(&self, input: &Tensor) -> Result<Tensor> {
        if self.layers.is_empty() {
            return Err(Error::Validation("MLP without layers".into()));
        }
        let expected = self.input_width();
        if input.cols() != expected {
            return Err(Error::Shape {
                op: "mlp_eval",
                expected: format!("input width {expected}"),
                actual: format!("input width {}", input.cols()),
            });
        }
        let last = self.layers.len() - 1;
        let mut h = input.clone();
        for (k, lin) in self.layers.iter().enumerate() {
            h = matmul(&h, &lin.weight);
            let bias = lin.bias.data();
            for r in 0..h.rows() {
                for (v, &b) in h.row_mut(r).iter_mut().zip(bias) {
                    *v += b;
                    if k < last {
                        *v = v.max(0.0);
                    }
                }
            }
        }
        match self.output {
            Activation::Identity => {}
            Activation::Sigmoid => h.data_mut().iter_mut().for_each(|v| *v = sigmoid(*v)),
            Activation::Softmax => (0..h.rows()).for_each(|r| softmax_in_place(h.row_mut(r))),
        }
        Ok(h)
    }
}

/// Tape handles of an [`MlpParams`], in the order of [`MlpParams::tensors`].
#[derive(Debug, Clone)]
pub struct MlpVars {
    pub layers: Vec<(Var, Var)>,
    pub output: Activation,
}

impl MlpVars {
    pub fn vars(&self) -> impl Iterator<Item = Var> + '_ {
        self.layers.iter().flat_map(|&(w, b)| [w, b])
    }
}

pub fn mlp_forward(tape: &mut Tape, mlp: &MlpVars, input: Var) -> Result<Var> {
    let expected = mlp
        .layers
        .first()
        .map(|&(w, _)| tape.value(w).rows())
        .ok_or_else(|| Error::Validation("MLP without layers".into()))?;
    let actual = tape.value(input).cols();
    if actual != expected {
        return Err(Error::Shape {
            op: "mlp_forward",
            expected: format!("input width {expected}"),
            actual: format!("input width {actual}"),
        });
    }
    let last = mlp.layers.len() - 1;
    let mut h = input;
    for (k, &(w, b)) in mlp.layers.iter().enumerate() {
        let z = tape.matmul(h, w)?;
        let z = tape.add_row(z, b)?;
        h = if k < last { tape.relu(z) } else { z };
    }
    Ok(match mlp.output {
        Activation::Identity => h,
        Activation::Softmax => tape.softmax_rows(h),
        Activation::Sigmoid => tape.sigmoid(h),
    })
}
