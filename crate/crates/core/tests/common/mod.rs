//! Test-only oracles shared by the integration tests.
#![allow(dead_code, clippy::needless_range_loop)]

use mars_core::autodiff::{Graph, Tensor, Var};
use mars_core::policy::{BoundPolicy, PolicyNets};

/// Central finite differences of `loss(inputs)` with respect to every element
/// of every input tensor.
pub fn numeric_grads(inputs: &[Tensor], h: f64, loss: impl Fn(&[Tensor]) -> f64) -> Vec<Tensor> {
    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for t in 0..inputs.len() {
        let mut grad = vec![0.0; inputs[t].numel()];
        for i in 0..inputs[t].numel() {
            let x0 = inputs[t].data()[i];
            work[t].data_mut()[i] = x0 + h;
            let up = loss(&work);
            work[t].data_mut()[i] = x0 - h;
            let down = loss(&work);
            work[t].data_mut()[i] = x0;
            grad[i] = (up - down) / (2.0 * h);
        }
        out.push(Tensor::new(inputs[t].shape().to_vec(), grad).unwrap());
    }
    out
}

/// Norm-wise relative error `|a - n| / (|a| + |n|)`, zero when both vanish.
pub fn rel_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    let diff: f64 = analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, n)| (a - n).powi(2))
        .sum::<f64>()
        .sqrt();
    let na: f64 = analytic.data().iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.data().iter().map(|a| a * a).sum::<f64>().sqrt();
    if na + nn < 1e-12 {
        0.0
    } else {
        diff / (na + nn)
    }
}

/// Builds the loss on a fresh graph with every input as a trainable leaf and
/// compares analytic against central-difference gradients.
pub fn check_gradients(inputs: &[Tensor], build: impl Fn(&mut Graph, &[Var]) -> Var) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = build(&mut g, &vars);
    g.backward(loss).unwrap();
    let analytic: Vec<Tensor> = vars.iter().map(|&v| g.grad_or_zeros(v)).collect();

    let numeric = numeric_grads(inputs, 1e-5, |ts| {
        let mut g = Graph::new();
        let vars: Vec<Var> = ts.iter().map(|t| g.constant(t.clone())).collect();
        let loss = build(&mut g, &vars);
        g.value(loss).item()
    });
    analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| rel_error(a, n))
        .fold(0.0, f64::max)
}

pub fn uniform_tensor(rng: &mut impl rand::Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Exhaustive k-NN: all other points sorted by (squared distance, index).
pub fn brute_knn(points: &[f64], dim: usize, i: usize, m: usize) -> Vec<usize> {
    let n = points.len() / dim;
    let q = &points[i * dim..(i + 1) * dim];
    let mut all: Vec<(f64, usize)> = (0..n)
        .filter(|&j| j != i)
        .map(|j| {
            let p = &points[j * dim..(j + 1) * dim];
            let mut d2 = 0.0;
            for k in 0..dim {
                d2 += (q[k] - p[k]) * (q[k] - p[k]);
            }
            (d2, j)
        })
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    all.into_iter().take(m).map(|(_, j)| j).collect()
}

/// Target spread of sample `i` over the given neighbours by explicit loops.
pub fn brute_s_next(next: &[f64], horizon: usize, dim: usize, i: usize, nbrs: &[usize]) -> Vec<f64> {
    let width = horizon * dim;
    let mut out = vec![0.0; dim];
    for d in 0..dim {
        let mut acc = 0.0;
        for &j in nbrs {
            for h in 0..horizon {
                acc += (next[i * width + h * dim + d] - next[j * width + h * dim + d]).abs();
            }
        }
        out[d] = acc / (nbrs.len() * horizon) as f64;
    }
    out
}

/// Diversity hinge by explicit loops: sources `(1 - w_i) * hist + w_i * noise`
/// for the sample and every neighbour, all using the sample's weight.
#[allow(clippy::too_many_arguments)]
pub fn brute_loss_div(
    batch: &[usize],
    weights: &[Vec<f64>],
    neighbors: &[Vec<usize>],
    s_next: &[Vec<f64>],
    histories: &[f64],
    own_noise: &[f64],
    neighbor_noise: &[f64],
    horizon: usize,
    dim: usize,
) -> f64 {
    let width = horizon * dim;
    let mut total = 0.0;
    for (b, &i) in batch.iter().enumerate() {
        let w = &weights[b];
        let nb = &neighbors[b];
        let k = nb.len();
        let mut hinge_sum = 0.0;
        for d in 0..dim {
            let mut acc = 0.0;
            for (slot, &j) in nb.iter().enumerate() {
                for h in 0..horizon {
                    let c = h * dim + d;
                    let src_i = (1.0 - w[d]) * histories[i * width + c] + w[d] * own_noise[b * width + c];
                    let src_j =
                        (1.0 - w[d]) * histories[j * width + c] + w[d] * neighbor_noise[(b * k + slot) * width + c];
                    acc += (src_i - src_j).abs();
                }
            }
            let s_curr = acc / (k * horizon) as f64;
            hinge_sum += (s_next[b][d] - s_curr).max(0.0);
        }
        total += hinge_sum / dim as f64;
    }
    total / batch.len() as f64
}

/// Gradient of a loss over every network parameter, analytic vs central
/// differences. Returns the worst norm-wise relative error.
pub fn param_gradcheck(nets: &PolicyNets, build: impl Fn(&mut Graph, &BoundPolicy) -> Var) -> f64 {
    param_gradcheck_against(nets, &build, &build)
}

/// As [`param_gradcheck`], differencing `reference` instead. Used where the
/// loss stops gradients on purpose and the reference holds that path fixed.
pub fn param_gradcheck_against(
    nets: &PolicyNets,
    build: impl Fn(&mut Graph, &BoundPolicy) -> Var,
    reference: impl Fn(&mut Graph, &BoundPolicy) -> Var,
) -> f64 {
    let mut g = Graph::new();
    let bound = nets.bind(&mut g);
    let loss = build(&mut g, &bound);
    g.backward(loss).unwrap();
    let mut analytic = bound.field.gradients(&g);
    if nets.mode.uses_scheduler() {
        analytic.extend(bound.scheduler.gradients(&g));
    }

    let eval = |n: &PolicyNets| {
        let mut g = Graph::new();
        let bound = n.bind_frozen(&mut g);
        let loss = reference(&mut g, &bound);
        g.value(loss).item()
    };
    let mut work = nets.clone();
    let count = analytic.len();
    let mut worst: f64 = 0.0;
    for t in 0..count {
        let mut numeric = vec![0.0; analytic[t].numel()];
        for i in 0..numeric.len() {
            let x0 = tensor_at(&mut work, t).data()[i];
            let h = 1e-5;
            tensor_at(&mut work, t).data_mut()[i] = x0 + h;
            let up = eval(&work);
            tensor_at(&mut work, t).data_mut()[i] = x0 - h;
            let down = eval(&work);
            tensor_at(&mut work, t).data_mut()[i] = x0;
            numeric[i] = (up - down) / (2.0 * h);
        }
        let numeric = Tensor::new(analytic[t].shape().to_vec(), numeric).unwrap();
        worst = worst.max(rel_error(&analytic[t], &numeric));
    }
    worst
}

pub fn tensor_at(nets: &mut PolicyNets, t: usize) -> &mut Tensor {
    let field_count = nets.velocity_field.layers().len() * 2;
    if t < field_count {
        nets.velocity_field.tensors_mut().nth(t).unwrap()
    } else {
        nets.scheduler.tensors_mut().nth(t - field_count).unwrap()
    }
}
