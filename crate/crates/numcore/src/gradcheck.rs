//! Finite-difference verification of analytic gradients.
//!
//! An operation `f(inputs) -> tensor` is reduced to a scalar with a fixed
//! random projection `L = sum(r * f(inputs))`; the analytic gradient of `L`
//! is compared against central differences with step `eps` in `f64`.

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::Result;
use crate::ops::norm::BatchNormMode;
use crate::ops::attention::AttentionWeights;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub enum GradCheckStatus {
    Pass,
    Fail,
    /// The operation could not be checked (non-deterministic or erroring).
    Invalid(String),
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// `max |g_a - g_fd| / (|g_a| + |g_fd| + 1e-10)` over every input element.
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub elements: usize,
    /// `(input, element)` where the largest error occurred.
    pub worst_at: Option<(usize, usize)>,
    pub status: GradCheckStatus,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.status == GradCheckStatus::Pass
    }

    fn invalid(reason: String, tolerance: f64) -> Self {
        GradCheckReport { max_rel_error: f64::NAN, tolerance, elements: 0, worst_at: None, status: GradCheckStatus::Invalid(reason) }
    }
}

/// The differentiable function under test.
pub type CheckFn<'a> = dyn Fn(&Tape<f64>, &[Var<f64>]) -> Result<Var<f64>> + 'a;

fn projected(f: &CheckFn<'_>, inputs: &[Tensor<f64>], weights: &mut Option<Vec<f64>>) -> Result<(f64, Vec<f64>)> {
    let tape = Tape::no_grad();
    let vars: Vec<_> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&tape, &vars)?;
    let r = weights.get_or_insert_with(|| projection(out.value().len()));
    let loss = out.data().iter().zip(r.iter()).map(|(a, b)| a * b).sum();
    Ok((loss, out.data().to_vec()))
}

fn projection(n: usize) -> Vec<f64> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(0x5eed_0f_9a_d1e5 ^ n as u64);
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Compare analytic and central-difference gradients of `f` with respect to
/// every element of every input.
pub fn grad_check(f: &CheckFn<'_>, inputs: &[Tensor<f64>], eps: f64, tolerance: f64) -> GradCheckReport {
    let mut weights = None;
    let (base, out_a) = match projected(f, inputs, &mut weights) {
        Ok(v) => v,
        Err(e) => return GradCheckReport::invalid(format!("forward failed: {e}"), tolerance),
    };
    let (_, out_b) = match projected(f, inputs, &mut weights) {
        Ok(v) => v,
        Err(e) => return GradCheckReport::invalid(format!("forward failed: {e}"), tolerance),
    };
    if out_a.iter().zip(&out_b).any(|(a, b)| a.to_bits() != b.to_bits()) {
        return GradCheckReport::invalid("non-deterministic operation: repeated forward passes differ".into(), tolerance);
    }
    let _ = base;
    let r = weights.clone().unwrap();

    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let analytic = (|| -> Result<Vec<Vec<f64>>> {
        let out = f(&tape, &vars)?;
        let rv = tape.constant(Tensor::from_parts(out.shape().to_vec(), r));
        let loss = tape.sum(&tape.mul(&out, &rv)?);
        let grads = tape.backward(&loss)?;
        Ok(vars
            .iter()
            .map(|v| grads.get(v).map(Tensor::into_data).unwrap_or_else(|| vec![0.0; v.value().len()]))
            .collect())
    })();
    let analytic = match analytic {
        Ok(a) => a,
        Err(e) => return GradCheckReport::invalid(format!("backward failed: {e}"), tolerance),
    };

    let mut worst = 0f64;
    let mut worst_at = None;
    let mut elements = 0;
    let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, ga) in analytic.iter().enumerate() {
        for j in 0..ga.len() {
            let orig = probe[i].data()[j];
            probe[i].data_mut()[j] = orig + eps;
            let plus = projected(f, &probe, &mut weights).map(|v| v.0);
            probe[i].data_mut()[j] = orig - eps;
            let minus = projected(f, &probe, &mut weights).map(|v| v.0);
            probe[i].data_mut()[j] = orig;
            let (Ok(plus), Ok(minus)) = (plus, minus) else {
                return GradCheckReport::invalid("forward failed under perturbation".into(), tolerance);
            };
            let fd = (plus - minus) / (2.0 * eps);
            let rel = (ga[j] - fd).abs() / (ga[j].abs() + fd.abs() + 1e-10);
            if rel > worst || worst_at.is_none() {
                worst = worst.max(rel);
                worst_at = Some((i, j));
            }
            elements += 1;
        }
    }
    let status = if worst < tolerance { GradCheckStatus::Pass } else { GradCheckStatus::Fail };
    GradCheckReport { max_rel_error: worst, tolerance, elements, worst_at, status }
}

/// One randomized instance of an operation in the gradient-check suite.
pub struct SuiteCase {
    pub op: &'static str,
    pub shapes: Vec<Vec<usize>>,
    pub report: GradCheckReport,
}

struct Gen(Xoshiro256PlusPlus);

impl Gen {
    fn normal(&mut self, shape: &[usize]) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| self.0.gen_range(-1.0..1.0) + self.0.gen_range(-1.0..1.0))
    }

    /// Values bounded away from zero (for kinks at the origin).
    fn off_zero(&mut self, shape: &[usize]) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| {
            let m = self.0.gen_range(0.05..1.5);
            if self.0.gen_bool(0.5) { m } else { -m }
        })
    }

    /// Pairwise well-separated values (for max selection).
    fn distinct(&mut self, shape: &[usize]) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.0.gen_range(0..=i);
            order.swap(i, j);
        }
        Tensor::from_fn(shape, |i| order[i] as f64 * 0.01 - 0.5 * n as f64 * 0.01)
    }

    fn positive(&mut self, shape: &[usize]) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| self.0.gen_range(0.3..2.0))
    }

    fn range(&mut self, lo: usize, hi: usize) -> usize {
        self.0.gen_range(lo..=hi)
    }
}

type Case = (Vec<Tensor<f64>>, Box<CheckFn<'static>>);

fn case(inputs: Vec<Tensor<f64>>, f: impl Fn(&Tape<f64>, &[Var<f64>]) -> Result<Var<f64>> + 'static) -> Case {
    (inputs, Box::new(f))
}

/// Names of every operation covered by [`run_suite`].
pub const SUITE_OPS: &[&str] = &[
    "add", "sub", "mul", "add_broadcast", "expand_leading", "channel_scale", "scale", "square", "sum", "mean",
    "relu", "sigmoid", "gelu", "reshape", "permute", "concat", "slice", "matmul", "linear", "conv2d",
    "max_pool2d", "global_avg_pool2d", "batch_norm2d_train", "batch_norm2d_eval", "layer_norm", "softmax",
    "cross_entropy", "bilinear_resize", "multi_head_attention",
];

fn build_case(op: &str, g: &mut Gen, variant: usize) -> Case {
    match op {
        "add" | "sub" | "mul" => {
            let s = vec![g.range(1, 4), g.range(1, 5), g.range(1, 6)];
            let inputs = vec![g.normal(&s), g.normal(&s)];
            let op = op.to_string();
            case(inputs, move |t, v| match op.as_str() {
                "add" => t.add(&v[0], &v[1]),
                "sub" => t.sub(&v[0], &v[1]),
                _ => t.mul(&v[0], &v[1]),
            })
        }
        "add_broadcast" => {
            let inner = vec![g.range(1, 4), g.range(1, 5)];
            let mut outer = vec![g.range(1, 4)];
            outer.extend(&inner);
            case(vec![g.normal(&outer), g.normal(&inner)], |t, v| t.add_broadcast(&v[0], &v[1]))
        }
        "expand_leading" => {
            let s = vec![g.range(1, 3), g.range(1, 5), g.range(1, 5)];
            let n = g.range(1, 4);
            case(vec![g.normal(&s)], move |t, v| t.expand_leading(&v[0], n))
        }
        "channel_scale" => {
            let s = vec![g.range(1, 3), g.range(1, 4), g.range(1, 4), g.range(1, 4)];
            let axis = variant % 3;
            let c = s[axis];
            case(vec![g.normal(&s), g.normal(&[c])], move |t, v| t.channel_scale(&v[0], &v[1], axis))
        }
        "scale" => {
            let s = vec![g.range(1, 6), g.range(1, 6)];
            let k = g.0.gen_range(-2.0..2.0);
            case(vec![g.normal(&s)], move |t, v| Ok(t.scale(&v[0], k)))
        }
        "square" => {
            let s = vec![g.range(1, 6), g.range(1, 6)];
            case(vec![g.normal(&s)], |t, v| Ok(t.square(&v[0])))
        }
        "sum" => {
            let s = vec![g.range(1, 6), g.range(1, 6)];
            case(vec![g.normal(&s)], |t, v| Ok(t.sum(&v[0])))
        }
        "mean" => {
            let s = vec![g.range(1, 6), g.range(1, 6)];
            case(vec![g.normal(&s)], |t, v| Ok(t.mean(&v[0])))
        }
        "relu" => {
            let s = vec![g.range(1, 5), g.range(1, 6), g.range(1, 6)];
            case(vec![g.off_zero(&s)], |t, v| Ok(t.relu(&v[0])))
        }
        "sigmoid" => {
            let s = vec![g.range(1, 6), g.range(1, 6)];
            case(vec![g.normal(&s)], |t, v| Ok(t.sigmoid(&v[0])))
        }
        "gelu" => {
            let s = vec![g.range(1, 6), g.range(1, 6)];
            case(vec![g.normal(&s)], |t, v| Ok(t.gelu(&v[0])))
        }
        "reshape" => {
            let (a, b, c) = (g.range(1, 4), g.range(1, 4), g.range(1, 4));
            case(vec![g.normal(&[a, b, c])], move |t, v| {
                let r = t.reshape(&v[0], &[c, a * b])?;
                // follow with a nonlinear op so the reshape layout matters
                Ok(t.square(&r))
            })
        }
        "permute" => {
            let s = vec![g.range(1, 3), g.range(1, 4), g.range(1, 3), g.range(1, 4)];
            let perms = [[3, 1, 0, 2], [0, 2, 1, 3], [2, 3, 0, 1], [1, 0, 3, 2], [3, 2, 1, 0]];
            let p = perms[variant % perms.len()];
            case(vec![g.normal(&s)], move |t, v| t.permute(&v[0], &p))
        }
        "concat" => {
            let axis = variant % 3;
            let mut a = vec![g.range(1, 3), g.range(1, 4), g.range(1, 4)];
            let mut b = a.clone();
            b[axis] = g.range(1, 4);
            a[axis] = g.range(1, 3);
            let mut c = a.clone();
            c[axis] = 1;
            case(vec![g.normal(&a), g.normal(&b), g.normal(&c)], move |t, v| t.concat(&[&v[0], &v[1], &v[2]], axis))
        }
        "slice" => {
            let s = vec![g.range(2, 4), g.range(2, 5), g.range(2, 5)];
            let axis = variant % 3;
            let start = g.range(0, s[axis] - 1);
            let len = g.range(1, s[axis] - start);
            case(vec![g.normal(&s)], move |t, v| t.slice(&v[0], axis, start, len))
        }
        "matmul" => {
            let (m, k, n) = (g.range(1, 5), g.range(1, 5), g.range(1, 5));
            let batch = g.range(1, 3);
            let (ta, tb) = (variant & 1 == 1, variant & 2 == 2);
            let shared = variant == 4;
            let a = if ta { vec![batch, k, m] } else { vec![batch, m, k] };
            let b = if tb { vec![n, k] } else { vec![k, n] };
            let b = if shared { b } else { [vec![batch], b].concat() };
            case(vec![g.normal(&a), g.normal(&b)], move |t, v| t.matmul(&v[0], &v[1], ta, tb))
        }
        "linear" => {
            let (r, fi, fo) = (g.range(1, 6), g.range(1, 6), g.range(1, 5));
            let with_bias = variant % 2 == 0;
            let mut inputs = vec![g.normal(&[2, r, fi]), g.normal(&[fo, fi])];
            if with_bias {
                inputs.push(g.normal(&[fo]));
            }
            case(inputs, move |t, v| t.linear(&v[0], &v[1], v.get(2)))
        }
        "conv2d" => {
            let configs = [(1, 1, 3), (1, 0, 3), (2, 1, 3), (1, 0, 1), (2, 0, 2)];
            let (stride, pad, k) = configs[variant % configs.len()];
            let (n, cin, cout) = (g.range(1, 2), g.range(1, 2), g.range(1, 3));
            let (h, w) = (g.range(k.max(3), 5), g.range(k.max(3), 5));
            let inputs = vec![g.normal(&[n, cin, h, w]), g.normal(&[cout, cin, k, k]), g.normal(&[cout])];
            case(inputs, move |t, v| t.conv2d(&v[0], &v[1], Some(&v[2]), stride, pad))
        }
        "max_pool2d" => {
            let s = vec![g.range(1, 2), g.range(1, 3), g.range(2, 7), g.range(2, 7)];
            case(vec![g.distinct(&s)], |t, v| t.max_pool2d(&v[0], 2))
        }
        "global_avg_pool2d" => {
            let s = vec![g.range(1, 3), g.range(1, 3), g.range(1, 5), g.range(1, 5)];
            case(vec![g.normal(&s)], |t, v| t.global_avg_pool2d(&v[0]))
        }
        "batch_norm2d_train" => {
            let s = vec![g.range(2, 3), g.range(1, 3), g.range(1, 4), g.range(2, 4)];
            let c = s[1];
            case(vec![g.normal(&s), g.normal(&[c]), g.normal(&[c])], |t, v| {
                Ok(t.batch_norm2d(&v[0], &v[1], &v[2], BatchNormMode::Train, 1e-5)?.0)
            })
        }
        "batch_norm2d_eval" => {
            let s = vec![g.range(1, 3), g.range(1, 3), g.range(1, 4), g.range(1, 4)];
            let c = s[1];
            let mean = g.normal(&[c]).into_data();
            let var = g.positive(&[c]).into_data();
            case(vec![g.normal(&s), g.normal(&[c]), g.normal(&[c])], move |t, v| {
                Ok(t.batch_norm2d(&v[0], &v[1], &v[2], BatchNormMode::Eval { mean: &mean, var: &var }, 1e-5)?.0)
            })
        }
        "layer_norm" => {
            // two features normalize to +-1 whatever the input; that gradient is
            // O(eps) and is checked in closed form by the oracle tests instead
            let s = vec![g.range(1, 3), g.range(1, 4), g.range(3, 8)];
            let d = s[2];
            case(vec![g.normal(&s), g.normal(&[d]), g.normal(&[d])], |t, v| t.layer_norm(&v[0], &v[1], &v[2], 1e-6))
        }
        "softmax" => {
            let s = vec![g.range(1, 4), g.range(1, 3), g.range(1, 7)];
            case(vec![g.normal(&s)], |t, v| t.softmax(&v[0]))
        }
        "cross_entropy" => {
            let (n, k) = (g.range(1, 6), g.range(2, 10));
            let labels: Vec<usize> = (0..n).map(|_| g.range(0, k - 1)).collect();
            case(vec![g.normal(&[n, k])], move |t, v| t.cross_entropy(&v[0], &labels))
        }
        "bilinear_resize" => {
            let c = g.range(1, 3);
            let (h, w) = (g.range(1, 4), g.range(1, 4));
            let (oh, ow) = (g.range(1, 7), g.range(1, 7));
            case(vec![g.normal(&[c, h, w])], move |t, v| t.bilinear_resize(&v[0], oh, ow))
        }
        "multi_head_attention" => {
            let heads = g.range(1, 2);
            let d = heads * g.range(1, 3);
            let (n, l) = (g.range(1, 2), g.range(1, 4));
            // The key bias shifts every score in a row equally, so its exact
            // gradient is zero and a relative error is undefined; it enters
            // as a constant while the query and value biases are checked.
            let key_bias = g.normal(&[d]);
            let inputs = vec![
                g.normal(&[n, l, d]),
                g.normal(&[3 * d, d]),
                g.normal(&[d]),
                g.normal(&[d]),
                g.normal(&[d, d]),
                g.normal(&[d]),
            ];
            case(inputs, move |t, v| {
                let kb = t.constant(key_bias.clone());
                let qkv_bias = t.concat(&[&v[2], &kb, &v[3]], 0)?;
                let w = AttentionWeights { qkv_weight: &v[1], qkv_bias: Some(&qkv_bias), out_weight: &v[4], out_bias: Some(&v[5]) };
                t.multi_head_attention(&v[0], &w, heads)
            })
        }
        other => panic!("unknown op `{other}` in gradient-check suite"),
    }
}

/// Run `shapes_per_op` randomized instances of every op in [`SUITE_OPS`].
pub fn run_suite(seed: u64, shapes_per_op: usize, eps: f64, tolerance: f64) -> Vec<SuiteCase> {
    let mut g = Gen(Xoshiro256PlusPlus::seed_from_u64(seed));
    let mut out = Vec::new();
    for &op in SUITE_OPS {
        for variant in 0..shapes_per_op {
            let (inputs, f) = build_case(op, &mut g, variant);
            let shapes = inputs.iter().map(|t| t.shape().to_vec()).collect();
            let report = grad_check(f.as_ref(), &inputs, eps, tolerance);
            out.push(SuiteCase { op, shapes, report });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_function_passes_with_zero_gradients() {
        let f = |t: &Tape<f64>, v: &[Var<f64>]| -> Result<Var<f64>> {
            let z = t.scale(&v[0], 0.0);
            Ok(t.add(&z, &t.constant(Tensor::full(v[0].shape(), 3.0)))?)
        };
        let r = grad_check(&f, &[Tensor::from_fn(&[4], |i| i as f64)], DEFAULT_EPS, DEFAULT_TOLERANCE);
        assert!(r.passed());
        assert_eq!(r.max_rel_error, 0.0);
    }

    #[test]
    fn non_deterministic_op_is_invalid() {
        use std::cell::Cell;
        let counter = Cell::new(0.0);
        let f = move |t: &Tape<f64>, v: &[Var<f64>]| -> Result<Var<f64>> {
            counter.set(counter.get() + 1.0);
            Ok(t.scale(&v[0], counter.get()))
        };
        let r = grad_check(&f, &[Tensor::ones(&[2])], DEFAULT_EPS, DEFAULT_TOLERANCE);
        assert!(matches!(r.status, GradCheckStatus::Invalid(_)));
    }

    #[test]
    fn wrong_gradient_fails() {
        // forward computes x^2 but records a gradient of x (instead of 2x)
        let f = |t: &Tape<f64>, v: &[Var<f64>]| -> Result<Var<f64>> {
            let x = v[0].value().clone();
            let y = x.map(|a| a * a);
            Ok(t.record(y, &[&v[0]], move |g, _| vec![Some(g.iter().zip(x.data()).map(|(g, x)| g * x).collect())]))
        };
        let r = grad_check(&f, &[Tensor::from_fn(&[3], |i| 1.0 + i as f64)], DEFAULT_EPS, DEFAULT_TOLERANCE);
        assert_eq!(r.status, GradCheckStatus::Fail);
    }
}
