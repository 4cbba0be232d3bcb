//! Small fully connected networks with hand-written reverse-mode gradients.
//!
//! Hidden layers use ReLU. The output is either linear (critics) or a tanh
//! squashed into per-dimension bounds (actors).

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum OutputActivation {
    Identity,
    /// `mid + half * tanh(h)` with `mid`, `half` from `[low, high]`.
    TanhScaled { low: Vec<f64>, high: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `fan_in x fan_out`
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<DenseLayer>,
    output: OutputActivation,
    out_mid: Array1<f64>,
    out_half: Array1<f64>,
}

/// Parameter-shaped gradient (or optimizer state) for a [`DenseNet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<DenseLayer>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| DenseLayer {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect(),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    pub fn max_abs(&self) -> f64 {
        self.flatten().iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn flatten_layers(layers: &[DenseLayer]) -> Vec<f64> {
    let mut out = Vec::new();
    for l in layers {
        out.extend(l.weights.iter());
        out.extend(l.bias.iter());
    }
    out
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input of every layer (post-activation of the previous one).
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of every layer.
    pre: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

impl DenseNet {
    /// Uniform `±1/sqrt(fan_in)` initialization for weights and biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], output: OutputActivation, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes, output)?;
        for layer in &mut net.layers {
            let bound = 1.0 / (layer.weights.nrows() as f64).sqrt();
            layer.weights.mapv_inplace(|_| rng.random_range(-bound..bound));
            layer.bias.mapv_inplace(|_| rng.random_range(-bound..bound));
        }
        Ok(net)
    }

    pub fn zeros(sizes: &[usize], output: OutputActivation) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::param(format!(
                "network needs at least input and output sizes, all positive; got {sizes:?}"
            )));
        }
        let out_dim = *sizes.last().unwrap();
        let (out_mid, out_half) = match &output {
            OutputActivation::Identity => (Array1::zeros(out_dim), Array1::ones(out_dim)),
            OutputActivation::TanhScaled { low, high } => {
                crate::error::check_len("output low bound", out_dim, low.len())?;
                crate::error::check_len("output high bound", out_dim, high.len())?;
                let mid = low.iter().zip(high).map(|(l, h)| 0.5 * (l + h)).collect();
                let half = low.iter().zip(high).map(|(l, h)| 0.5 * (h - l)).collect();
                (Array1::from_vec(mid), Array1::from_vec(half))
            }
        };
        let layers = sizes
            .windows(2)
            .map(|w| DenseLayer {
                weights: Array2::zeros((w[0], w[1])),
                bias: Array1::zeros(w[1]),
            })
            .collect();
        Ok(Self {
            layers,
            output,
            out_mid,
            out_half,
        })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weights.ncols()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(|l| l.weights.ncols()));
        s
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        crate::error::check_len("parameter vector", self.num_params(), flat.len())?;
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|w| *w = it.next().unwrap());
            l.bias.iter_mut().for_each(|b| *b = it.next().unwrap());
        }
        Ok(())
    }

    fn output_transform(&self, h: f64, j: usize) -> f64 {
        match self.output {
            OutputActivation::Identity => h,
            OutputActivation::TanhScaled { .. } => self.out_mid[j] + self.out_half[j] * h.tanh(),
        }
    }

    /// Runs a batch (one row per example) through the network, keeping the
    /// intermediate activations.
    pub fn forward_cached(&self, x: ArrayView2<'_, f64>) -> Result<ForwardCache> {
        crate::error::check_len("network input", self.input_dim(), x.ncols())?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut current = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = current.dot(&layer.weights);
            z += &layer.bias;
            let act = if i == last {
                let mut out = z.clone();
                for mut row in out.rows_mut() {
                    for (j, v) in row.iter_mut().enumerate() {
                        *v = self.output_transform(*v, j);
                    }
                }
                out
            } else {
                z.mapv(relu)
            };
            inputs.push(current);
            pre.push(z);
            current = act;
        }
        Ok(ForwardCache {
            inputs,
            pre,
            output: current,
        })
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(self.forward_cached(x)?.output)
    }

    pub fn forward_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, x.len()), x)
            .map_err(|e| Error::invalid(format!("bad input shape: {e}")))?;
        Ok(self.forward(view)?.row(0).to_vec())
    }

    /// Backpropagates `grad_out` (dLoss/dOutput, one row per example) and
    /// returns parameter gradients together with dLoss/dInput.
    pub fn backward(&self, cache: &ForwardCache, grad_out: ArrayView2<'_, f64>) -> Result<(Gradients, Array2<f64>)> {
        if grad_out.dim() != cache.output.dim() {
            return Err(Error::invalid(format!(
                "output gradient has shape {:?}, expected {:?}",
                grad_out.dim(),
                cache.output.dim()
            )));
        }
        let last = self.layers.len() - 1;
        let mut delta = grad_out.to_owned();
        // through the output activation
        if let OutputActivation::TanhScaled { .. } = self.output {
            for ((mut drow, zrow), _) in delta.rows_mut().into_iter().zip(cache.pre[last].rows()).zip(0..) {
                for (j, (d, z)) in drow.iter_mut().zip(zrow).enumerate() {
                    let t = z.tanh();
                    *d *= self.out_half[j] * (1.0 - t * t);
                }
            }
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        for i in (0..=last).rev() {
            let layer = &self.layers[i];
            let gw = cache.inputs[i].t().dot(&delta);
            let gb = delta.sum_axis(Axis(0));
            grads.push(DenseLayer { weights: gw, bias: gb });
            let mut upstream = delta.dot(&layer.weights.t());
            if i > 0 {
                upstream.zip_mut_with(&cache.pre[i - 1], |g, &z| {
                    if z <= 0.0 {
                        *g = 0.0;
                    }
                });
            }
            delta = upstream;
        }
        grads.reverse();
        Ok((Gradients { layers: grads }, delta))
    }

    /// Loss and gradients of `mean_i w_i * ||f(x_i) - t_i||^2`.
    pub fn weighted_mse_gradients(
        &self,
        x: ArrayView2<'_, f64>,
        targets: ArrayView2<'_, f64>,
        weights: Option<&[f64]>,
    ) -> Result<(f64, Gradients)> {
        let cache = self.forward_cached(x)?;
        if targets.dim() != cache.output.dim() {
            return Err(Error::invalid("target shape does not match network output"));
        }
        let n = x.nrows() as f64;
        let mut grad = &cache.output - &targets;
        let mut loss = 0.0;
        for (i, mut row) in grad.rows_mut().into_iter().enumerate() {
            let w = weights.map_or(1.0, |w| w[i]);
            loss += w * row.iter().map(|d| d * d).sum::<f64>();
            row.mapv_inplace(|d| 2.0 * w * d / n);
        }
        let (g, _) = self.backward(&cache, grad.view())?;
        Ok((loss / n, g))
    }

    pub fn same_shape(&self, other: &DenseNet) -> bool {
        self.sizes() == other.sizes()
    }
}

/// `target <- tau * online + (1 - tau) * target`, parameter by parameter.
pub fn polyak(target: &mut DenseNet, online: &DenseNet, tau: f64) -> Result<()> {
    if !target.same_shape(online) {
        return Err(Error::invalid(format!(
            "polyak update between networks of shapes {:?} and {:?}",
            target.sizes(),
            online.sizes()
        )));
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::param(format!("tau must lie in [0, 1], got {tau}")));
    }
    if tau == 1.0 {
        target.layers.clone_from(&online.layers);
        return Ok(());
    }
    if tau == 0.0 {
        return Ok(());
    }
    for (t, o) in target.layers.iter_mut().zip(&online.layers) {
        t.weights.zip_mut_with(&o.weights, |a, &b| *a = tau * b + (1.0 - tau) * *a);
        t.bias.zip_mut_with(&o.bias, |a, &b| *a = tau * b + (1.0 - tau) * *a);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Straight-line forward pass over nested loops, independent of ndarray's matmul.
    fn reference_forward(net: &DenseNet, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        let n = net.layers().len();
        for (i, l) in net.layers().iter().enumerate() {
            let mut next = vec![0.0; l.weights.ncols()];
            for (o, nx) in next.iter_mut().enumerate() {
                let mut acc = l.bias[o];
                for (k, c) in cur.iter().enumerate() {
                    acc += c * l.weights[[k, o]];
                }
                *nx = acc;
            }
            if i + 1 < n {
                next.iter_mut().for_each(|v| *v = v.max(0.0));
            } else if let OutputActivation::TanhScaled { low, high } = &net.output {
                for (j, v) in next.iter_mut().enumerate() {
                    *v = 0.5 * (low[j] + high[j]) + 0.5 * (high[j] - low[j]) * v.tanh();
                }
            }
            cur = next;
        }
        cur
    }

    #[test]
    fn zero_net_outputs_zero() {
        let net = DenseNet::zeros(&[3, 5, 2], OutputActivation::Identity).unwrap();
        assert_eq!(net.forward_one(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_single_layer() {
        let mut net = DenseNet::zeros(&[2, 2], OutputActivation::Identity).unwrap();
        net.layers_mut()[0].weights = Array2::eye(2);
        assert_eq!(net.forward_one(&[1.5, -2.0]).unwrap(), vec![1.5, -2.0]);
        let mut squashed = DenseNet::zeros(
            &[2, 2],
            OutputActivation::TanhScaled {
                low: vec![-1.0, -1.0],
                high: vec![1.0, 1.0],
            },
        )
        .unwrap();
        squashed.layers_mut()[0].weights = Array2::eye(2);
        let out = squashed.forward_one(&[0.3, -0.7]).unwrap();
        assert_eq!(out, vec![0.3f64.tanh(), (-0.7f64).tanh()]);
    }

    #[test]
    fn forward_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for sizes in [vec![4, 8, 3], vec![2, 16, 16, 1], vec![5, 1]] {
            let out_dim = *sizes.last().unwrap();
            let act = OutputActivation::TanhScaled {
                low: vec![-2.0; out_dim],
                high: vec![3.0; out_dim],
            };
            for output in [OutputActivation::Identity, act] {
                let net = DenseNet::new(&sizes, output, &mut rng).unwrap();
                for _ in 0..20 {
                    let x: Vec<f64> = (0..sizes[0]).map(|_| rng.random_range(-2.0..2.0)).collect();
                    let a = net.forward_one(&x).unwrap();
                    let b = reference_forward(&net, &x);
                    for (u, v) in a.iter().zip(&b) {
                        assert!((u - v).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn shape_errors() {
        let net = DenseNet::zeros(&[3, 2], OutputActivation::Identity).unwrap();
        assert!(net.forward_one(&[1.0]).is_err());
        assert!(DenseNet::zeros(&[3], OutputActivation::Identity).is_err());
        let mut other = DenseNet::zeros(&[3, 4], OutputActivation::Identity).unwrap();
        assert!(polyak(&mut other, &net, 0.5).is_err());
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        // zero last layer makes the output constant in every other parameter
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = DenseNet::new(&[3, 6, 1], OutputActivation::Identity, &mut rng).unwrap();
        let cache = net.forward_cached(array![[0.1, 0.2, 0.3]].view()).unwrap();
        let (g, gin) = net.backward(&cache, Array2::zeros((1, 1)).view()).unwrap();
        assert_eq!(g.max_abs(), 0.0);
        assert!(gin.iter().all(|v| *v == 0.0));
        net.layers_mut()[1].weights.fill(0.0);
        let (_, g) = net
            .weighted_mse_gradients(array![[0.1, 0.2, 0.3]].view(), array![[0.0]].view(), None)
            .unwrap();
        assert!(g.layers[0].weights.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn linear_least_squares_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = DenseNet::new(&[4, 2], OutputActivation::Identity, &mut rng).unwrap();
        let x = Array2::from_shape_fn((7, 4), |_| rng.random_range(-1.0..1.0));
        let y = Array2::from_shape_fn((7, 2), |_| rng.random_range(-1.0..1.0));
        let (_, g) = net.weighted_mse_gradients(x.view(), y.view(), None).unwrap();
        let l = &net.layers()[0];
        let resid = x.dot(&l.weights) + &l.bias - &y;
        let gw = x.t().dot(&resid) * (2.0 / 7.0);
        let gb = resid.sum_axis(Axis(0)) * (2.0 / 7.0);
        for (a, b) in g.layers[0].weights.iter().zip(gw.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
        for (a, b) in g.layers[0].bias.iter().zip(gb.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn polyak_edges_and_geometric_convergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let online = DenseNet::new(&[3, 4, 2], OutputActivation::Identity, &mut rng).unwrap();
        let start = DenseNet::new(&[3, 4, 2], OutputActivation::Identity, &mut rng).unwrap();

        let mut t = start.clone();
        polyak(&mut t, &online, 0.0).unwrap();
        assert_eq!(t, start);
        polyak(&mut t, &online, 1.0).unwrap();
        assert_eq!(t.params(), online.params());

        let tau = 0.005;
        let mut t = start.clone();
        let n = 500;
        for _ in 0..n {
            polyak(&mut t, &online, tau).unwrap();
        }
        let factor = (1.0 - tau).powi(n);
        for ((a, s), o) in t.params().iter().zip(start.params()).zip(online.params()) {
            let expected_gap = (s - o) * factor;
            assert!(((a - o) - expected_gap).abs() < 1e-9);
        }
    }
}
