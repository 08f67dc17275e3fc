use rand::Rng;

/// Fully connected tanh network with a linear output layer.
///
/// Parameters live in one flat vector, layer by layer: the `out x in`
/// weight matrix (row-major) followed by the `out` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Layer activations kept for the backward pass.
pub struct Activations {
    /// `layers[0]` is the input, the last entry the linear output.
    layers: Vec<Vec<f64>>,
}

impl Activations {
    pub fn output(&self) -> &[f64] {
        self.layers.last().expect("network has an output layer")
    }
}

pub fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    /// Uniform fan-in initialization `U(-1/√in, 1/√in)` for hidden weights,
    /// zero biases, and an all-zero output layer.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "network needs input and output sizes");
        let mut params = Vec::with_capacity(param_count(sizes));
        let last = sizes.len() - 2;
        for (l, w) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                params.push(if l == last {
                    0.0
                } else {
                    rng.random_range(-bound..bound)
                });
            }
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Self {
            sizes: sizes.to_vec(),
            params,
        }
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Option<Self> {
        (sizes.len() >= 2 && params.len() == param_count(sizes)).then(|| Self {
            sizes: sizes.to_vec(),
            params,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    /// Offset of the output-layer bias block.
    pub fn output_bias_offset(&self) -> usize {
        self.params.len() - self.output_dim()
    }

    pub fn forward(&self, input: &[f64]) -> Activations {
        debug_assert_eq!(input.len(), self.input_dim());
        let n_layers = self.sizes.len() - 1;
        let mut layers = Vec::with_capacity(n_layers + 1);
        layers.push(input.to_vec());
        let mut offset = 0;
        for (l, w) in self.sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let weights = &self.params[offset..offset + fan_in * fan_out];
            let bias = &self.params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            let x = &layers[l];
            let mut y: Vec<f64> = (0..fan_out)
                .map(|o| {
                    let row = &weights[o * fan_in..(o + 1) * fan_in];
                    bias[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect();
            if l + 1 < n_layers {
                y.iter_mut().for_each(|v| *v = v.tanh());
            }
            offset += fan_in * fan_out + fan_out;
            layers.push(y);
        }
        Activations { layers }
    }

    /// Accumulates `∂(grad_output · output)/∂params` into `grads`.
    pub fn backward(&self, acts: &Activations, grad_output: &[f64], grads: &mut [f64]) {
        debug_assert_eq!(grads.len(), self.params.len());
        let n_layers = self.sizes.len() - 1;
        let mut delta = grad_output.to_vec();
        let mut offset = self.params.len();
        for l in (0..n_layers).rev() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            offset -= fan_in * fan_out + fan_out;
            let x = &acts.layers[l];
            {
                let (gw, gb) = grads[offset..offset + fan_in * fan_out + fan_out]
                    .split_at_mut(fan_in * fan_out);
                for o in 0..fan_out {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    gb[o] += d;
                    for (g, xi) in gw[o * fan_in..(o + 1) * fan_in].iter_mut().zip(x) {
                        *g += d * xi;
                    }
                }
            }
            if l == 0 {
                break;
            }
            let weights = &self.params[offset..offset + fan_in * fan_out];
            // x is the tanh output of the previous layer
            delta = (0..fan_in)
                .map(|i| {
                    let back: f64 = (0..fan_out).map(|o| weights[o * fan_in + i] * delta[o]).sum();
                    back * (1.0 - x[i] * x[i])
                })
                .collect();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn output_layer_starts_at_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::new(&[3, 5, 2], &mut rng);
        assert_eq!(net.params().len(), param_count(&[3, 5, 2]));
        assert_eq!(net.forward(&[0.3, -1.0, 2.0]).output(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = Mlp::new(&[3, 4, 4, 2], &mut rng);
        for p in net.params_mut() {
            *p += rng.random_range(-0.5..0.5);
        }
        let x = [0.2, -0.7, 1.1];
        let upstream = [0.6, -1.3];
        let objective = |n: &Mlp| -> f64 {
            n.forward(&x).output().iter().zip(&upstream).map(|(a, b)| a * b).sum()
        };
        let mut grads = vec![0.0; net.params().len()];
        net.backward(&net.forward(&x), &upstream, &mut grads);
        let eps = 1e-5;
        for i in 0..grads.len() {
            let mut plus = net.clone();
            plus.params_mut()[i] += eps;
            let mut minus = net.clone();
            minus.params_mut()[i] -= eps;
            let fd = (objective(&plus) - objective(&minus)) / (2.0 * eps);
            assert!((fd - grads[i]).abs() <= 1e-4 * fd.abs().max(1e-3), "param {i}: {fd} vs {}", grads[i]);
        }
    }
}
