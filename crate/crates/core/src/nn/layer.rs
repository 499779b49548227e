use rand::Rng;

use super::matrix::Matrix;
use super::NnError;

/// Trainable tensor with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    shape: Vec<usize>,
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
}

impl ParamTensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            values: vec![0.0; n],
            grad: vec![0.0; n],
        }
    }

    pub fn from_values(shape: &[usize], values: Vec<f64>) -> Result<Self, NnError> {
        let n: usize = shape.iter().product();
        if values.len() != n {
            return Err(NnError::Shape(format!(
                "{} values for tensor of shape {shape:?}",
                values.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            values,
            grad: vec![0.0; n],
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
    /// Softmax over each row; only valid on the output layer.
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            activation,
        }
    }
}

/// Fully connected layer. The weight is stored as `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    spec: LayerSpec,
    pub weight: ParamTensor,
    pub bias: ParamTensor,
}

impl Dense {
    /// Glorot-uniform weights, zero bias.
    pub fn new<R: Rng + ?Sized>(spec: LayerSpec, rng: &mut R) -> Result<Self, NnError> {
        if spec.in_dim == 0 || spec.out_dim == 0 {
            return Err(NnError::Shape(format!(
                "layer dims must be positive, got {}x{}",
                spec.in_dim, spec.out_dim
            )));
        }
        let limit = (6.0 / (spec.in_dim + spec.out_dim) as f64).sqrt();
        let values = (0..spec.in_dim * spec.out_dim)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Ok(Self {
            spec,
            weight: ParamTensor::from_values(&[spec.out_dim, spec.in_dim], values)?,
            bias: ParamTensor::zeros(&[spec.out_dim]),
        })
    }

    pub fn zeroed(spec: LayerSpec) -> Self {
        Self {
            spec,
            weight: ParamTensor::zeros(&[spec.out_dim, spec.in_dim]),
            bias: ParamTensor::zeros(&[spec.out_dim]),
        }
    }

    pub fn spec(&self) -> LayerSpec {
        self.spec
    }
}

/// Everything recorded by a forward pass that backprop needs.
#[derive(Debug, Clone, Default)]
pub struct Activations {
    pub input: Option<Matrix>,
    /// Pre-activation output of every layer.
    pub pre: Vec<Matrix>,
    /// Post-activation output of every layer.
    pub post: Vec<Matrix>,
}

impl Activations {
    pub fn output(&self) -> Option<&Matrix> {
        self.post.last()
    }

    /// Pre-activation of the final layer (the logits of a softmax network).
    pub fn logits(&self) -> Option<&Matrix> {
        self.pre.last()
    }

    fn layer_input(&self, i: usize) -> Option<&Matrix> {
        if i == 0 {
            self.input.as_ref()
        } else {
            self.post.get(i - 1)
        }
    }
}

/// Gradient entering the top of a network.
#[derive(Debug, Clone, Copy)]
pub enum OutputGrad<'a> {
    /// dLoss/d(post-activation output of the last layer).
    Output(&'a Matrix),
    /// dLoss/d(pre-activation of the last layer), e.g. the fused softmax/CE gradient.
    Logits(&'a Matrix),
}

/// Feed-forward stack of dense layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(specs: &[LayerSpec], rng: &mut R) -> Result<Self, NnError> {
        check_chain(specs)?;
        let layers = specs
            .iter()
            .map(|&s| Dense::new(s, rng))
            .collect::<Result<_, _>>()?;
        Ok(Self { layers })
    }

    /// Network with every weight and bias set to zero.
    pub fn zeroed(specs: &[LayerSpec]) -> Result<Self, NnError> {
        check_chain(specs)?;
        Ok(Self {
            layers: specs.iter().map(|&s| Dense::zeroed(s)).collect(),
        })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Dense::spec).collect()
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].spec.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].spec.out_dim
    }

    pub fn forward(&self, x: &Matrix) -> Result<Activations, NnError> {
        if x.cols() != self.in_dim() {
            return Err(NnError::Shape(format!(
                "batch has {} columns, network expects {}",
                x.cols(),
                self.in_dim()
            )));
        }
        let mut acts = Activations {
            input: Some(x.clone()),
            pre: Vec::with_capacity(self.layers.len()),
            post: Vec::with_capacity(self.layers.len()),
        };
        for layer in &self.layers {
            let input = acts.post.last().unwrap_or(x);
            let pre = input.affine(&layer.weight.values, &layer.bias.values, layer.spec.out_dim);
            let post = activate(&pre, layer.spec.activation);
            acts.pre.push(pre);
            acts.post.push(post);
        }
        Ok(acts)
    }

    /// Output of the last layer only.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix, NnError> {
        let mut acts = self.forward(x)?;
        Ok(acts.post.pop().expect("network has at least one layer"))
    }

    /// Backpropagates `seed` through the recorded pass, accumulating into each
    /// parameter's `grad`. Returns dLoss/d(input).
    pub fn backward(&mut self, acts: &Activations, seed: OutputGrad<'_>) -> Result<Matrix, NnError> {
        if acts.input.is_none() || acts.pre.len() != self.layers.len() {
            return Err(NnError::State(
                "backward called without a matching forward pass".into(),
            ));
        }
        let last = self.layers.len() - 1;
        let top_shape = acts.pre[last].shape();
        let seed_mat = match seed {
            OutputGrad::Output(g) | OutputGrad::Logits(g) => g,
        };
        if seed_mat.shape() != top_shape {
            return Err(NnError::Shape(format!(
                "output gradient is {:?}, layer output is {top_shape:?}",
                seed_mat.shape()
            )));
        }

        let mut d_pre = match seed {
            OutputGrad::Logits(g) => g.clone(),
            OutputGrad::Output(g) => activation_backward(
                &acts.pre[last],
                &acts.post[last],
                g,
                self.layers[last].spec.activation,
            ),
        };

        for i in (0..self.layers.len()).rev() {
            let x = acts.layer_input(i).expect("checked above");
            let layer = &mut self.layers[i];
            let (inp, out) = (layer.spec.in_dim, layer.spec.out_dim);
            let mut d_x = Matrix::zeros(x.rows(), inp);
            {
                let gw = &mut layer.weight.grad;
                let gb = &mut layer.bias.grad;
                let w = &layer.weight.values;
                for b in 0..x.rows() {
                    let xr = x.row(b);
                    let dr = d_pre.row(b);
                    let dxr = d_x.row_mut(b);
                    for o in 0..out {
                        let g = dr[o];
                        if g == 0.0 {
                            continue;
                        }
                        gb[o] += g;
                        let gw_row = &mut gw[o * inp..(o + 1) * inp];
                        let w_row = &w[o * inp..(o + 1) * inp];
                        for j in 0..inp {
                            gw_row[j] += g * xr[j];
                            dxr[j] += g * w_row[j];
                        }
                    }
                }
            }
            if i > 0 {
                let below = &self.layers[i - 1];
                d_pre = activation_backward(
                    &acts.pre[i - 1],
                    &acts.post[i - 1],
                    &d_x,
                    below.spec.activation,
                );
            } else {
                d_pre = d_x;
            }
        }
        Ok(d_pre)
    }

    pub fn zero_grad(&mut self) {
        for l in &mut self.layers {
            l.weight.zero_grad();
            l.bias.zero_grad();
        }
    }

    /// Parameters in a fixed order: weight then bias, layer by layer.
    pub fn params(&self) -> Vec<&ParamTensor> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }
}

fn check_chain(specs: &[LayerSpec]) -> Result<(), NnError> {
    if specs.is_empty() {
        return Err(NnError::Shape("network needs at least one layer".into()));
    }
    for (i, s) in specs.iter().enumerate() {
        if s.in_dim == 0 || s.out_dim == 0 {
            return Err(NnError::Shape(format!("layer {i} has a zero dimension")));
        }
        if s.activation == Activation::Softmax && i + 1 != specs.len() {
            return Err(NnError::Shape(format!(
                "softmax is only allowed on the output layer (layer {i})"
            )));
        }
    }
    for (i, w) in specs.windows(2).enumerate() {
        if w[0].out_dim != w[1].in_dim {
            return Err(NnError::Shape(format!(
                "layer {i} outputs {} but layer {} expects {}",
                w[0].out_dim,
                i + 1,
                w[1].in_dim
            )));
        }
    }
    Ok(())
}

pub(crate) fn activate(pre: &Matrix, act: Activation) -> Matrix {
    match act {
        Activation::Identity => pre.clone(),
        Activation::Relu => {
            let mut out = pre.clone();
            out.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
            out
        }
        Activation::Softmax => softmax_rows(pre),
    }
}

fn activation_backward(pre: &Matrix, post: &Matrix, d_out: &Matrix, act: Activation) -> Matrix {
    match act {
        Activation::Identity => d_out.clone(),
        Activation::Relu => {
            let mut d = d_out.clone();
            for (g, &p) in d.as_mut_slice().iter_mut().zip(pre.as_slice()) {
                if p <= 0.0 {
                    *g = 0.0;
                }
            }
            d
        }
        Activation::Softmax => {
            // J^T g for softmax: p * (g - <g, p>)
            let mut d = Matrix::zeros(post.rows(), post.cols());
            for r in 0..post.rows() {
                let p = post.row(r);
                let g = d_out.row(r);
                let inner: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
                for (j, v) in d.row_mut(r).iter_mut().enumerate() {
                    *v = p[j] * (g[j] - inner);
                }
            }
            d
        }
    }
}

/// Numerically stable row-wise softmax.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    out
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_give_zero_preactivation() {
        let net = Mlp::zeroed(&[LayerSpec::new(3, 2, Activation::Identity)]).unwrap();
        let x = Matrix::from_rows(&[vec![1.0, -2.0, 5.0]]).unwrap();
        assert_eq!(net.predict(&x).unwrap().as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mut net = Mlp::zeroed(&[LayerSpec::new(2, 2, Activation::Identity)]).unwrap();
        net.layers_mut()[0].weight.values = vec![1.0, 0.0, 0.0, 1.0];
        let x = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert_eq!(net.predict(&x).unwrap().as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let p = softmax_rows(&Matrix::zeros(1, 4));
        for &v in p.as_slice() {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_handles_large_logits() {
        let p = softmax_rows(&Matrix::from_rows(&[vec![1000.0, 0.0, -1000.0]]).unwrap());
        assert!(p.is_finite());
        assert!((p.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::new(&[LayerSpec::new(3, 2, Activation::Relu)], &mut rng).unwrap();
        assert!(matches!(
            net.forward(&Matrix::zeros(4, 5)),
            Err(NnError::Shape(_))
        ));
    }

    #[test]
    fn chain_mismatch_rejected() {
        let specs = [
            LayerSpec::new(3, 4, Activation::Relu),
            LayerSpec::new(5, 2, Activation::Softmax),
        ];
        assert!(Mlp::zeroed(&specs).is_err());
        let specs = [
            LayerSpec::new(3, 4, Activation::Softmax),
            LayerSpec::new(4, 2, Activation::Softmax),
        ];
        assert!(Mlp::zeroed(&specs).is_err());
    }

    #[test]
    fn backward_without_forward_is_state_error() {
        let mut net = Mlp::zeroed(&[LayerSpec::new(2, 2, Activation::Softmax)]).unwrap();
        let g = Matrix::zeros(1, 2);
        let err = net
            .backward(&Activations::default(), OutputGrad::Logits(&g))
            .unwrap_err();
        assert!(matches!(err, NnError::State(_)));
    }

    #[test]
    fn glorot_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = Dense::new(LayerSpec::new(10, 6, Activation::Relu), &mut rng).unwrap();
        let limit = (6.0f64 / 16.0).sqrt();
        assert!(d.weight.values.iter().all(|w| w.abs() <= limit));
        assert!(d.bias.values.iter().all(|&b| b == 0.0));
    }
}
