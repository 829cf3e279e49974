//! Dense layers over a flat parameter vector.
//!
//! Layer `l` with shape `(inputs, outputs)` owns `outputs * inputs` weights
//! (row-major, one row per output unit) followed by `outputs` biases.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Act {
    Relu,
    Identity,
}

pub(crate) fn param_count(shapes: &[(usize, usize)]) -> usize {
    shapes.iter().map(|(i, o)| i * o + o).sum()
}

/// Pre-activations (`pre[l]`) and activations (`post[l]`, with `post[0]`
/// the input) for one sample.
#[derive(Default)]
pub(crate) struct Trace {
    pub pre: Vec<Vec<f64>>,
    pub post: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.post.last().expect("trace holds at least the input")
    }
}

pub(crate) fn forward_into(shapes: &[(usize, usize)], params: &[f64], acts: &[Act], x: &[f64], trace: &mut Trace) {
    let n = shapes.len();
    trace.pre.resize_with(n, Vec::new);
    trace.post.resize_with(n + 1, Vec::new);
    trace.post[0].clear();
    trace.post[0].extend_from_slice(x);

    let mut offset = 0;
    for (l, &(ins, outs)) in shapes.iter().enumerate() {
        let w = &params[offset..offset + ins * outs];
        let b = &params[offset + ins * outs..offset + ins * outs + outs];
        offset += ins * outs + outs;

        let (before, after) = trace.post.split_at_mut(l + 1);
        let input = &before[l];
        let pre = &mut trace.pre[l];
        pre.clear();
        pre.extend(b.iter().enumerate().map(|(o, bias)| {
            let row = &w[o * ins..(o + 1) * ins];
            bias + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>()
        }));
        let post = &mut after[0];
        post.clear();
        match acts[l] {
            Act::Relu => post.extend(pre.iter().map(|z| z.max(0.0))),
            Act::Identity => post.extend_from_slice(pre),
        }
    }
}

/// Accumulates `dL/dparams` into `grad` given `d_out = dL/d(last pre-activation)`.
pub(crate) fn backward_into(
    shapes: &[(usize, usize)],
    params: &[f64],
    acts: &[Act],
    trace: &Trace,
    d_out: &[f64],
    grad: &mut [f64],
) {
    let offsets: Vec<usize> = shapes
        .iter()
        .scan(0, |acc, (i, o)| {
            let start = *acc;
            *acc += i * o + o;
            Some(start)
        })
        .collect();

    let mut delta = d_out.to_vec();
    let mut next = Vec::new();
    for l in (0..shapes.len()).rev() {
        let (ins, outs) = shapes[l];
        let off = offsets[l];
        let input = &trace.post[l];
        for o in 0..outs {
            let d = delta[o];
            if d == 0.0 {
                continue;
            }
            let row = &mut grad[off + o * ins..off + (o + 1) * ins];
            for (g, a) in row.iter_mut().zip(input) {
                *g += d * a;
            }
            grad[off + ins * outs + o] += d;
        }
        if l == 0 {
            break;
        }
        let w = &params[off..off + ins * outs];
        next.clear();
        next.resize(ins, 0.0);
        for o in 0..outs {
            let d = delta[o];
            if d == 0.0 {
                continue;
            }
            for (acc, wv) in next.iter_mut().zip(&w[o * ins..(o + 1) * ins]) {
                *acc += d * wv;
            }
        }
        if acts[l - 1] == Act::Relu {
            for (acc, z) in next.iter_mut().zip(&trace.pre[l - 1]) {
                if *z <= 0.0 {
                    *acc = 0.0;
                }
            }
        }
        std::mem::swap(&mut delta, &mut next);
    }
}

/// He-normal weights, zero biases.
pub(crate) fn init_params(shapes: &[(usize, usize)], mut normal: impl FnMut() -> f64) -> Vec<f64> {
    let mut params = Vec::with_capacity(param_count(shapes));
    for &(ins, outs) in shapes {
        let std = (2.0 / ins as f64).sqrt();
        params.extend((0..ins * outs).map(|_| normal() * std));
        params.extend(std::iter::repeat_n(0.0, outs));
    }
    params
}

pub(crate) fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}
