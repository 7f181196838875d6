//! Fully-connected tanh network with spatial-derivative propagation.
//!
//! The network maps an input row `[x, y, p_1, ..., p_np]` to a scalar. Hidden
//! layers use `tanh`, the output layer is affine. Besides the plain value,
//! [`NetworkParams::forward_extended`] carries the first and pure second
//! partials with respect to the two spatial inputs through every layer, and
//! [`NetworkParams::loss_gradient`] back-propagates a loss that depends on
//! any of those five quantities into the weights and biases.
//!
//! Batched evaluation stacks the five streams (value, d/dx, d/dy, d²/dx²,
//! d²/dy²) into one `(5B × width)` matrix per layer so each layer costs a
//! single matrix product.

mod adam;
mod checkpoint;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, SeedLineage};

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Number of stacked streams in extended evaluation.
const STREAMS: usize = 5;

/// Value of the network and its spatial derivatives at one input.
///
/// The same struct is used for the partials of a loss with respect to
/// these five quantities.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ExtendedOutput {
    pub u: f64,
    pub du_dx: f64,
    pub du_dy: f64,
    pub d2u_dx2: f64,
    pub d2u_dy2: f64,
}

impl ExtendedOutput {
    pub fn laplacian(&self) -> f64 {
        self.d2u_dx2 + self.d2u_dy2
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }

    pub fn as_array(&self) -> [f64; STREAMS] {
        [self.u, self.du_dx, self.du_dy, self.d2u_dx2, self.d2u_dy2]
    }

    fn from_array(a: [f64; STREAMS]) -> Self {
        Self {
            u: a[0],
            du_dx: a[1],
            du_dy: a[2],
            d2u_dx2: a[3],
            d2u_dy2: a[4],
        }
    }
}

/// Weights and biases of the network, plus its layer widths.
///
/// `weights[l]` has shape `(layer_dims[l] × layer_dims[l + 1])` and acts on row
/// vectors, so a layer computes `a · W + b`. The same shape is reused for
/// gradients and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    layer_dims: Vec<usize>,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
}

/// Batch-mean loss together with its parameter gradient.
#[derive(Debug, Clone)]
pub struct LossGradient {
    pub loss: f64,
    pub gradient: NetworkParams,
}

fn validate_dims(layer_dims: &[usize]) -> Result<()> {
    if layer_dims.len() < 3 || layer_dims.iter().any(|&d| d == 0) || layer_dims[0] < 2 {
        return Err(Error::InvalidLayerDims(layer_dims.to_vec()));
    }
    Ok(())
}

impl NetworkParams {
    /// All-zero parameters with the given architecture.
    pub fn zeros(layer_dims: &[usize]) -> Result<Self> {
        validate_dims(layer_dims)?;
        let weights = layer_dims
            .windows(2)
            .map(|w| Array2::zeros((w[0], w[1])))
            .collect();
        let biases = layer_dims[1..].iter().map(|&d| Array1::zeros(d)).collect();
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
        })
    }

    /// Glorot-uniform weights, zero biases; deterministic in `seed`.
    pub fn init(layer_dims: &[usize], seed: u64) -> Result<Self> {
        let mut params = Self::zeros(layer_dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for w in &mut params.weights {
            let (fan_in, fan_out) = w.dim();
            let half_width = (6.0 / (fan_in + fan_out) as f64).sqrt();
            w.iter_mut()
                .for_each(|v| *v = rng.random_range(-half_width..half_width));
        }
        Ok(params)
    }

    /// Rebuild from the flat layout used by [`NetworkParams::to_flat`].
    pub fn from_flat(layer_dims: &[usize], flat: &[f64]) -> Result<Self> {
        let mut params = Self::zeros(layer_dims)?;
        if flat.len() != params.len() {
            return Err(Error::DimensionMismatch {
                expected: params.len(),
                got: flat.len(),
                context: "flat parameter vector",
            });
        }
        params
            .values_mut()
            .zip(flat)
            .for_each(|(dst, &src)| *dst = src);
        Ok(params)
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Array1<f64>] {
        &mut self.biases
    }

    /// Total number of scalar parameters.
    pub fn len(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Iterate every parameter: per layer, the weight matrix in row-major
    /// order followed by the bias vector.
    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b.iter()))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| w.iter_mut().chain(b.iter_mut()))
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.values().copied().collect()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.layer_dims == other.layer_dims
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    fn check_input(&self, got: usize) -> Result<()> {
        if got != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got,
                context: "network input",
            });
        }
        Ok(())
    }

    /// Plain network value at one input.
    pub fn forward(&self, input: &[f64]) -> Result<f64> {
        self.check_input(input.len())?;
        let row = ArrayView2::from_shape((1, input.len()), input).expect("contiguous row");
        Ok(self.forward_batch(row)?[0])
    }

    /// Network values for every row of `inputs`.
    pub fn forward_batch(&self, inputs: ArrayView2<f64>) -> Result<Array1<f64>> {
        self.check_input(inputs.ncols())?;
        let last = self.weights.len() - 1;
        let mut a = inputs.to_owned();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = a.dot(w);
            z += b;
            if l < last {
                z.mapv_inplace(f64::tanh);
            }
            a = z;
        }
        Ok(a.column(0).to_owned())
    }

    /// Value plus spatial first and pure second derivatives at one input.
    pub fn forward_extended(&self, input: &[f64]) -> Result<ExtendedOutput> {
        self.check_input(input.len())?;
        let row = ArrayView2::from_shape((1, input.len()), input).expect("contiguous row");
        Ok(self.forward_extended_batch(row)?[0])
    }

    /// Extended evaluation of every row of `inputs`.
    pub fn forward_extended_batch(&self, inputs: ArrayView2<f64>) -> Result<Vec<ExtendedOutput>> {
        self.check_input(inputs.ncols())?;
        let cache = self.forward_cached(inputs);
        Ok(cache.outputs())
    }

    /// Gradient of the batch-mean of `loss_fn` with respect to all parameters.
    ///
    /// `loss_fn(index, input_row, output)` returns the per-sample loss and its
    /// partials with respect to the five entries of `output`. The gradient is
    /// taken through the derivative propagation, so losses on `d2u_dx2` etc.
    /// are differentiated exactly.
    pub fn loss_gradient<F>(&self, loss_fn: F, batch: ArrayView2<f64>) -> Result<LossGradient>
    where
        F: Fn(usize, &[f64], &ExtendedOutput) -> (f64, ExtendedOutput),
    {
        self.check_input(batch.ncols())?;
        let b = batch.nrows();
        if b == 0 {
            return Err(Error::Empty("loss batch"));
        }
        let cache = self.forward_cached(batch);
        let outputs = cache.outputs();

        // Seed the output-layer adjoint with the per-sample loss partials.
        let scale = 1.0 / b as f64;
        let mut g_out = Array2::<f64>::zeros((STREAMS * b, 1));
        let mut total = 0.0;
        let row_buf: Vec<f64>;
        let contiguous = batch.is_standard_layout();
        let flat_batch = if contiguous {
            batch.as_slice().expect("standard layout")
        } else {
            row_buf = batch.iter().copied().collect();
            &row_buf
        };
        let d0 = batch.ncols();
        for (i, out) in outputs.iter().enumerate() {
            let (loss, partials) = loss_fn(i, &flat_batch[i * d0..(i + 1) * d0], out);
            if !loss.is_finite() || !partials.is_finite() {
                return Err(Error::NonFiniteLoss { sample: Some(i) });
            }
            total += loss;
            for (k, p) in partials.as_array().into_iter().enumerate() {
                g_out[[k * b + i, 0]] = p * scale;
            }
        }

        let mut gradient = Self::zeros(&self.layer_dims)?;
        let mut g_z = g_out;
        for l in (0..self.weights.len()).rev() {
            let a_in = &cache.inputs[l];
            gradient.weights[l] = a_in.t().dot(&g_z);
            gradient.biases[l] = g_z.slice(s![0..b, ..]).sum_axis(Axis(0));
            if l == 0 {
                break;
            }
            let g_a = c_order(g_z.dot(&self.weights[l].t()));
            g_z = tanh_backward(&g_a, &cache.pre[l - 1], &cache.inputs[l], b);
        }

        if !gradient.is_finite() {
            return Err(Error::NonFiniteLoss { sample: None });
        }
        Ok(LossGradient {
            loss: total * scale,
            gradient,
        })
    }

    fn forward_cached(&self, inputs: ArrayView2<f64>) -> ForwardCache {
        let b = inputs.nrows();
        let d0 = inputs.ncols();
        let mut a = Array2::<f64>::zeros((STREAMS * b, d0));
        a.slice_mut(s![0..b, ..]).assign(&inputs);
        // d/dx and d/dy of the input row are the unit vectors e_0 and e_1.
        a.slice_mut(s![b..2 * b, 0]).fill(1.0);
        a.slice_mut(s![2 * b..3 * b, 1]).fill(1.0);

        let last = self.weights.len() - 1;
        let mut cache = ForwardCache {
            batch: b,
            inputs: Vec::with_capacity(self.weights.len()),
            pre: Vec::with_capacity(last),
            out: Array2::zeros((0, 0)),
        };
        for (l, (w, bias)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = c_order(a.dot(w));
            {
                let mut value = z.slice_mut(s![0..b, ..]);
                value += bias;
            }
            cache.inputs.push(a);
            if l == last {
                cache.out = z;
                break;
            }
            a = tanh_forward(&z, b);
            cache.pre.push(z);
        }
        cache
    }
}

fn c_order(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

struct ForwardCache {
    batch: usize,
    /// Stacked streams entering each layer, `(5B × d_l)`.
    inputs: Vec<Array2<f64>>,
    /// Stacked pre-activation streams of each hidden layer.
    pre: Vec<Array2<f64>>,
    /// Stacked output streams, `(5B × 1)`.
    out: Array2<f64>,
}

impl ForwardCache {
    fn outputs(&self) -> Vec<ExtendedOutput> {
        let b = self.batch;
        let col = self.out.column(0);
        (0..b)
            .map(|i| {
                ExtendedOutput::from_array([
                    col[i],
                    col[b + i],
                    col[2 * b + i],
                    col[3 * b + i],
                    col[4 * b + i],
                ])
            })
            .collect()
    }
}

/// Splits a standard-layout stacked matrix into its five stream slices.
fn streams(a: &[f64], n: usize) -> [&[f64]; STREAMS] {
    [
        &a[0..n],
        &a[n..2 * n],
        &a[2 * n..3 * n],
        &a[3 * n..4 * n],
        &a[4 * n..5 * n],
    ]
}

/// Applies tanh to the value stream and the chain rule to the derivative
/// streams: `a' = s z'`, `a'' = s z'' + q z'^2` with `s = tanh'`, `q = tanh''`.
fn tanh_forward(z: &Array2<f64>, b: usize) -> Array2<f64> {
    let n = b * z.ncols();
    let mut out = Array2::<f64>::zeros(z.raw_dim());
    let zs = z.as_slice().expect("standard layout");
    let [zv, zx, zy, zxx, zyy] = streams(zs, n);
    let os = out.as_slice_mut().expect("standard layout");
    let (av, rest) = os.split_at_mut(n);
    let (ax, rest) = rest.split_at_mut(n);
    let (ay, rest) = rest.split_at_mut(n);
    let (axx, ayy) = rest.split_at_mut(n);
    for i in 0..n {
        let t = zv[i].tanh();
        let s = 1.0 - t * t;
        let q = -2.0 * t * s;
        av[i] = t;
        ax[i] = s * zx[i];
        ay[i] = s * zy[i];
        axx[i] = s * zxx[i] + q * zx[i] * zx[i];
        ayy[i] = s * zyy[i] + q * zy[i] * zy[i];
    }
    out
}

/// Adjoint of [`tanh_forward`]. `activated` is the stacked output of the
/// forward pass; its value block holds `tanh(z)`.
fn tanh_backward(g_a: &Array2<f64>, z: &Array2<f64>, activated: &Array2<f64>, b: usize) -> Array2<f64> {
    let n = b * z.ncols();
    let mut g_z = Array2::<f64>::zeros(z.raw_dim());
    let [_, zx, zy, zxx, zyy] = streams(z.as_slice().expect("standard layout"), n);
    let tv = &activated.as_slice().expect("standard layout")[0..n];
    let [gv, gx, gy, gxx, gyy] = streams(g_a.as_slice().expect("standard layout"), n);
    let os = g_z.as_slice_mut().expect("standard layout");
    let (ov, rest) = os.split_at_mut(n);
    let (ox, rest) = rest.split_at_mut(n);
    let (oy, rest) = rest.split_at_mut(n);
    let (oxx, oyy) = rest.split_at_mut(n);
    for i in 0..n {
        let t = tv[i];
        let s = 1.0 - t * t;
        let q = -2.0 * t * s;
        let r = -2.0 * s * (1.0 - 3.0 * t * t);
        ov[i] = gv[i] * s
            + (gx[i] * zx[i] + gy[i] * zy[i]) * q
            + gxx[i] * (q * zxx[i] + r * zx[i] * zx[i])
            + gyy[i] * (q * zyy[i] + r * zy[i] * zy[i]);
        ox[i] = gx[i] * s + gxx[i] * 2.0 * q * zx[i];
        oy[i] = gy[i] * s + gyy[i] * 2.0 * q * zy[i];
        oxx[i] = gxx[i] * s;
        oyy[i] = gyy[i] * s;
    }
    g_z
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn random_params(dims: &[usize], seed: u64) -> NetworkParams {
        let mut p = NetworkParams::init(dims, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xbeef);
        p.biases_mut()
            .iter_mut()
            .flat_map(|b| b.iter_mut())
            .for_each(|v| *v = rng.random_range(-0.5..0.5));
        p
    }

    /// Independent row-vector evaluation, one neuron at a time.
    fn naive_forward(p: &NetworkParams, input: &[f64]) -> f64 {
        let mut a = input.to_vec();
        let n_layers = p.weights().len();
        for l in 0..n_layers {
            let w = &p.weights()[l];
            let b = &p.biases()[l];
            let mut z = vec![0.0; w.ncols()];
            for (j, zj) in z.iter_mut().enumerate() {
                let mut acc = b[j];
                for (i, ai) in a.iter().enumerate() {
                    acc += ai * w[[i, j]];
                }
                *zj = if l + 1 < n_layers { acc.tanh() } else { acc };
            }
            a = z;
        }
        a[0]
    }

    #[test]
    fn init_is_deterministic() {
        let a = NetworkParams::init(&[4, 20, 20, 1], 7).unwrap();
        let b = NetworkParams::init(&[4, 20, 20, 1], 7).unwrap();
        assert_eq!(a.to_flat(), b.to_flat());
        let c = NetworkParams::init(&[4, 20, 20, 1], 8).unwrap();
        assert_ne!(a.to_flat(), c.to_flat());
    }

    #[test]
    fn init_biases_are_zero() {
        let p = NetworkParams::init(&[4, 20, 1], 3).unwrap();
        assert!(p.biases().iter().all(|b| b.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn init_weight_spread_matches_glorot() {
        let p = NetworkParams::init(&[4, 50, 50, 1], 0).unwrap();
        for w in p.weights() {
            let (fi, fo) = w.dim();
            let expected = (2.0 / (fi + fo) as f64).sqrt();
            let n = w.len() as f64;
            let mean = w.sum() / n;
            let std = (w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            assert!((std / expected - 1.0).abs() < 0.2, "std {std} vs {expected}");
        }
    }

    #[test]
    fn rejects_bad_dims() {
        assert!(NetworkParams::init(&[], 0).is_err());
        assert!(NetworkParams::init(&[4, 1], 0).is_err());
        assert!(NetworkParams::init(&[4, 0, 1], 0).is_err());
    }

    #[test]
    fn zero_and_constant_networks() {
        let mut p = NetworkParams::zeros(&[4, 8, 8, 1]).unwrap();
        assert_eq!(p.forward(&[0.3, 0.2, 1.0, -1.0]).unwrap(), 0.0);
        p.biases_mut()[2][0] = 3.5;
        assert_eq!(p.forward(&[0.9, 0.1, -0.4, 0.7]).unwrap(), 3.5);
        let e = p.forward_extended(&[0.9, 0.1, -0.4, 0.7]).unwrap();
        assert_eq!(
            e,
            ExtendedOutput {
                u: 3.5,
                ..Default::default()
            }
        );
    }

    #[test]
    fn forward_matches_naive_evaluation() {
        for seed in 0..10 {
            let p = random_params(&[4, 12, 9, 1], seed);
            let x = [0.31, 0.77, -0.2, 0.45];
            let fast = p.forward(&x).unwrap();
            let slow = naive_forward(&p, &x);
            assert!((fast - slow).abs() <= 1e-12 * slow.abs().max(1.0));
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let p = NetworkParams::init(&[4, 5, 1], 0).unwrap();
        assert!(matches!(
            p.forward(&[0.0; 3]),
            Err(Error::DimensionMismatch { expected: 4, got: 3, .. })
        ));
        assert!(p.forward_extended(&[0.0; 5]).is_err());
    }

    #[test]
    fn extended_value_equals_forward() {
        let p = random_params(&[4, 16, 16, 1], 11);
        let batch = array![[0.1, 0.2, 0.3, 0.4], [0.9, 0.5, -0.7, 0.0]];
        let ext = p.forward_extended_batch(batch.view()).unwrap();
        let plain = p.forward_batch(batch.view()).unwrap();
        for (e, v) in ext.iter().zip(plain.iter()) {
            assert!((e.u - v).abs() <= 1e-15 * v.abs().max(1.0));
        }
    }

    #[test]
    fn extended_derivatives_match_finite_differences() {
        let p = random_params(&[4, 10, 10, 1], 5);
        let x = [0.4, 0.6, 0.1, -0.3];
        let e = p.forward_extended(&x).unwrap();
        let f = |dx: f64, dy: f64| p.forward(&[x[0] + dx, x[1] + dy, x[2], x[3]]).unwrap();
        let h = 1e-4;
        let fd_x = (f(h, 0.0) - f(-h, 0.0)) / (2.0 * h);
        assert!((e.du_dx - fd_x).abs() <= 1e-5 * fd_x.abs().max(1e-3));
        let h2 = 1e-3;
        let fd_yy = (f(0.0, h2) - 2.0 * f(0.0, 0.0) + f(0.0, -h2)) / (h2 * h2);
        assert!((e.d2u_dy2 - fd_yy).abs() <= 1e-4 * fd_yy.abs().max(1e-2));
    }

    #[test]
    fn stochastic_inputs_do_not_leak_into_spatial_derivatives() {
        // Shifting the stochastic inputs changes the function, but the
        // derivative at fixed inputs is still a partial in x only.
        let p = random_params(&[4, 8, 1], 2);
        let a = p.forward_extended(&[0.3, 0.3, 0.5, 0.5]).unwrap();
        let h = 1e-4;
        let fd = (p.forward(&[0.3 + h, 0.3, 0.5, 0.5]).unwrap()
            - p.forward(&[0.3 - h, 0.3, 0.5, 0.5]).unwrap())
            / (2.0 * h);
        assert!((a.du_dx - fd).abs() < 1e-8);
    }

    #[test]
    fn zero_residual_gives_zero_gradient() {
        let p = random_params(&[4, 8, 8, 1], 9);
        let x = array![[0.5, 0.5, 0.0, 0.0]];
        let u0 = p.forward(&[0.5, 0.5, 0.0, 0.0]).unwrap();
        // residual r = u - u0 vanishes at this point
        let g = p
            .loss_gradient(
                |_, _, e| {
                    let r = e.u - u0;
                    (
                        r * r,
                        ExtendedOutput {
                            u: 2.0 * r,
                            ..Default::default()
                        },
                    )
                },
                x.view(),
            )
            .unwrap();
        assert!(g.gradient.values().all(|&v| v == 0.0));
    }

    #[test]
    fn non_finite_loss_names_sample() {
        let p = random_params(&[4, 4, 1], 1);
        let x = array![[0.1, 0.1, 0.0, 0.0], [0.2, 0.2, 0.0, 0.0]];
        let err = p
            .loss_gradient(
                |i, _, _| {
                    let v = if i == 1 { f64::NAN } else { 0.0 };
                    (v, ExtendedOutput::default())
                },
                x.view(),
            )
            .unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { sample: Some(1) }));
    }

    #[test]
    fn flat_round_trip() {
        let p = random_params(&[4, 6, 3, 1], 4);
        let q = NetworkParams::from_flat(p.layer_dims(), &p.to_flat()).unwrap();
        assert_eq!(p, q);
        assert!(NetworkParams::from_flat(p.layer_dims(), &[0.0; 3]).is_err());
    }
}
