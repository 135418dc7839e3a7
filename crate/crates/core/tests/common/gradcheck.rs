// Analytic gradients against central finite differences in f64.
//
// Each case projects a layer's output onto a fixed random tensor `g`, so the
// scalar objective is `sum(g * layer(x))` and its gradient is the layer's
// backward pass applied to `g`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spatial_pretrain::arch::ArchitectureSpec;
use spatial_pretrain::engine::*;
use spatial_pretrain::network::{InitRule, Network};
use spatial_pretrain::tensor::Tensor;

const CASES: usize = 50;
const STEP: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Central differences of `f` at `x`.
fn numeric(x: &Tensor<f64>, f: impl Fn(&Tensor<f64>) -> f64) -> Vec<f64> {
    let mut probe = x.clone();
    (0..x.len())
        .map(|i| {
            let v = x.data()[i];
            probe.data_mut()[i] = v + STEP;
            let up = f(&probe);
            probe.data_mut()[i] = v - STEP;
            let down = f(&probe);
            probe.data_mut()[i] = v;
            (up - down) / (2.0 * STEP)
        })
        .collect()
}

fn project(g: &Tensor<f64>, y: &Tensor<f64>) -> f64 {
    assert_eq!(g.shape(), y.shape());
    g.data().iter().zip(y.data()).map(|(a, b)| a * b).sum()
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Values at least `gap` away from zero.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(gap..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Worst relative error seen per check, keyed by name.
#[derive(Default)]
pub struct Worst(pub Vec<(String, f64)>);

impl Worst {
    fn add(&mut self, what: &str, analytic: &[f64], num: &[f64]) {
        let e = rel_error(analytic, num);
        match self.0.iter_mut().find(|(w, _)| w == what) {
            Some((_, worst)) => *worst = worst.max(e),
            None => self.0.push((what.to_string(), e)),
        }
    }
}

pub fn conv2d(worst: &mut Worst) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..CASES {
        let (n, c_in, c_out) = (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..4));
        let k = rng.random_range(1..4);
        let stride = rng.random_range(1..3);
        let pad = rng.random_range(0..2);
        let h = rng.random_range(k.max(2)..7);
        let w = rng.random_range(k.max(2)..7);
        let x = random(&mut rng, &[n, c_in, h, w]);
        let params = ConvLayerParams::new(random(&mut rng, &[c_out, c_in, k, k]), random(&mut rng, &[c_out]), stride, pad).unwrap();
        let y = conv2d_forward(&x, &params).unwrap();
        let g = random(&mut rng, y.shape());
        let grads = conv2d_backward(&x, &params, &g).unwrap();
        let f_x = |x: &Tensor<f64>| project(&g, &conv2d_forward(x, &params).unwrap());
        worst.add("conv input", grads.input.data(), &numeric(&x, f_x));
        let f_k = |kk: &Tensor<f64>| {
            let p = ConvLayerParams::new(kk.clone(), params.bias.clone(), stride, pad).unwrap();
            project(&g, &conv2d_forward(&x, &p).unwrap())
        };
        worst.add("conv kernels", grads.kernels.data(), &numeric(&params.kernels, f_k));
        let f_b = |b: &Tensor<f64>| {
            let p = ConvLayerParams::new(params.kernels.clone(), b.clone(), stride, pad).unwrap();
            project(&g, &conv2d_forward(&x, &p).unwrap())
        };
        worst.add("conv bias", grads.bias.data(), &numeric(&params.bias, f_b));
    }
}

pub fn maxpool(worst: &mut Worst) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..CASES {
        let (n, c) = (rng.random_range(1..3), rng.random_range(1..3));
        let window = rng.random_range(1..4);
        let stride = rng.random_range(1..3);
        let h = rng.random_range(window..7);
        let w = rng.random_range(window..7);
        // Distinct values spaced far beyond the finite-difference step, so
        // no window has a tie that the probe could flip.
        let len = n * c * h * w;
        let mut vals: Vec<f64> = (0..len).map(|i| i as f64 * 0.01).collect();
        vals.shuffle(&mut rng);
        let x = Tensor::new(vec![n, c, h, w], vals).unwrap();
        let y = maxpool_forward(&x, window, stride).unwrap();
        let g = random(&mut rng, y.shape());
        let analytic = maxpool_backward(&x, window, stride, &g).unwrap();
        let num = numeric(&x, |x| project(&g, &maxpool_forward(x, window, stride).unwrap()));
        worst.add("maxpool", analytic.data(), &num);
    }
}

pub fn relu(worst: &mut Worst) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..CASES {
        let shape = [rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..5), rng.random_range(1..5)];
        let x = away_from_zero(&mut rng, &shape, 0.01);
        let g = random(&mut rng, &shape);
        let analytic = relu_backward(&x, &g).unwrap();
        let num = numeric(&x, |x| project(&g, &relu_forward(x)));
        worst.add("relu", analytic.data(), &num);
    }
}

pub fn flatten(worst: &mut Worst) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..CASES {
        let shape = [rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..5), rng.random_range(1..5)];
        let x = random(&mut rng, &shape);
        let y = flatten_forward(&x).unwrap();
        let g = random(&mut rng, y.shape());
        let analytic = flatten_backward(x.shape(), &g).unwrap();
        let num = numeric(&x, |x| project(&g, &flatten_forward(x).unwrap()));
        worst.add("flatten", analytic.data(), &num);
    }
}

pub fn pad_crop(worst: &mut Worst) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..CASES {
        let pc = PadCrop {
            top: rng.random_range(-1i64..3) as isize,
            bottom: rng.random_range(-1i64..3) as isize,
            left: rng.random_range(-1i64..3) as isize,
            right: rng.random_range(-1i64..3) as isize,
        };
        let shape = [1, rng.random_range(1..3), rng.random_range(3..6), rng.random_range(3..6)];
        let x = random(&mut rng, &shape);
        let y = pc.forward(&x).unwrap();
        let g = random(&mut rng, y.shape());
        let analytic = pc.backward(x.shape(), &g).unwrap();
        let num = numeric(&x, |x| project(&g, &pc.forward(x).unwrap()));
        worst.add("pad/crop", analytic.data(), &num);
    }
}

pub fn fully_connected(worst: &mut Worst) {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..CASES {
        let (n, d, m) = (rng.random_range(1..4), rng.random_range(1..8), rng.random_range(1..6));
        let x = random(&mut rng, &[n, d]);
        let params = FcLayerParams::new(random(&mut rng, &[d, m]), random(&mut rng, &[m])).unwrap();
        let y = fc_forward(&x, &params).unwrap();
        let g = random(&mut rng, y.shape());
        let grads = fc_backward(&x, &params, &g).unwrap();
        worst.add("fc input", grads.input.data(), &numeric(&x, |x| project(&g, &fc_forward(x, &params).unwrap())));
        let f_w = |wt: &Tensor<f64>| {
            let p = FcLayerParams::new(wt.clone(), params.bias.clone()).unwrap();
            project(&g, &fc_forward(&x, &p).unwrap())
        };
        worst.add("fc weights", grads.weights.data(), &numeric(&params.weights, f_w));
        let f_b = |b: &Tensor<f64>| {
            let p = FcLayerParams::new(params.weights.clone(), b.clone()).unwrap();
            project(&g, &fc_forward(&x, &p).unwrap())
        };
        worst.add("fc bias", grads.bias.data(), &numeric(&params.bias, f_b));
    }
}

pub fn softmax_cross_entropy(worst: &mut Worst) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..CASES {
        let (n, k) = (rng.random_range(1..5), rng.random_range(2..11));
        let logits = Tensor::from_fn(&[n, k], |_| rng.random_range(-3.0..3.0));
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let out = softmax_xent(&logits, &labels).unwrap();
        let analytic = softmax_xent_backward(&out.probs, &labels).unwrap();
        let num = numeric(&logits, |z| softmax_xent(z, &labels).unwrap().loss);
        worst.add("softmax-xent", analytic.data(), &num);
    }
}

pub fn whole_network(worst: &mut Worst) {
    let arch = ArchitectureSpec::parse(
        "name g\ninput 2 9 9\nconv 3 3 1 1\nrelu\nmaxpool 2 2\nadjust 0 1 0 1\nconv 4 2 1 0\nrelu\nflatten\nfc 5\nrelu\nfc 3\nsoftmax\n",
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for case in 0..10 {
        let net = Network::<f64>::init_with(&arch, case, InitRule::FanIn).unwrap();
        let x = random(&mut rng, &[2, 2, 9, 9]);
        let labels = [rng.random_range(0..3), rng.random_range(0..3)];
        let loss = |net: &Network<f64>| softmax_xent(&net.logits(&x).unwrap(), &labels).unwrap().loss;
        let trace = net.forward(&x).unwrap();
        let out = softmax_xent(&trace.logits, &labels).unwrap();
        let (grads, _) = net.backward(&trace, &softmax_xent_backward(&out.probs, &labels).unwrap()).unwrap();
        let names: Vec<String> = net.named_params().into_iter().map(|(n, _)| n).collect();
        for (t, analytic) in grads.iter().enumerate() {
            let base = net.named_params()[t].1.clone();
            let num = numeric(&base, |p| {
                let mut probe = net.clone();
                probe.params_mut()[t].data_mut().copy_from_slice(p.data());
                loss(&probe)
            });
            worst.add(&names[t], analytic.data(), &num);
        }
    }
}

/// Every check, in order.
pub fn all() -> Worst {
    let mut worst = Worst::default();
    conv2d(&mut worst);
    maxpool(&mut worst);
    relu(&mut worst);
    flatten(&mut worst);
    pad_crop(&mut worst);
    fully_connected(&mut worst);
    softmax_cross_entropy(&mut worst);
    whole_network(&mut worst);
    worst
}
