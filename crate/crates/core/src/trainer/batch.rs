//! Batched forward and reverse passes over row-major sample matrices.

use matrixmultiply::dgemm;

use crate::neural::{MlpModel, FEATURE_DIM};

use super::TrainingSample;

/// Samples per gradient chunk. Gradients are always accumulated chunk by
/// chunk in index order, so sequential and parallel evaluation agree bitwise.
pub const CHUNK: usize = 64;

/// `c = a · bᵀ` with `a: m×k`, `b: n×k`, all row-major.
fn gemm_abt(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    unsafe {
        dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            1,
            k as isize,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `c = aᵀ · b` with `a: k×m`, `b: k×n`, all row-major.
fn gemm_atb(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    unsafe {
        dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            1,
            m as isize,
            b.as_ptr(),
            n as isize,
            1,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `c = a · b` with `a: m×k`, `b: k×n`, all row-major.
fn gemm_ab(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    unsafe {
        dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Forward pass keeping every layer's activations (`acts[0]` is the input).
fn forward_cached(model: &MlpModel, inputs: Vec<f64>, rows: usize) -> Vec<Vec<f64>> {
    let last = model.layers.len() - 1;
    let mut acts = Vec::with_capacity(model.layers.len() + 1);
    acts.push(inputs);
    for (k, layer) in model.layers.iter().enumerate() {
        let mut out = vec![0.0; rows * layer.outputs];
        gemm_abt(rows, layer.inputs, layer.outputs, &acts[k], &layer.weights, &mut out);
        for row in out.chunks_exact_mut(layer.outputs) {
            for (v, b) in row.iter_mut().zip(&layer.biases) {
                *v += b;
                if k != last {
                    *v = v.max(0.0);
                }
            }
        }
        acts.push(out);
    }
    acts
}

fn gather_inputs(samples: &[&TrainingSample]) -> Vec<f64> {
    samples.iter().flat_map(|s| s.input).collect()
}

/// Batched model outputs, row-major `samples.len() × 9`.
pub fn predict(model: &MlpModel, samples: &[&TrainingSample]) -> Vec<f64> {
    let mut acts = forward_cached(model, gather_inputs(samples), samples.len());
    acts.pop().unwrap()
}

/// Sum over samples and components of `(g − o)²`.
pub fn squared_error_sum(model: &MlpModel, samples: &[&TrainingSample]) -> f64 {
    let mut total = 0.0;
    for chunk in samples.chunks(CHUNK) {
        let out = predict(model, chunk);
        let mut part = 0.0;
        for (s, o) in chunk.iter().zip(out.chunks_exact(FEATURE_DIM)) {
            for (g, y) in s.target.iter().zip(o) {
                part += (g - y) * (g - y);
            }
        }
        total += part;
    }
    total
}

/// Gradient of `Σ (o − g)²` over one chunk, flattened per layer as weights
/// then biases, plus the chunk's squared-error sum.
pub fn chunk_gradient_sum(model: &MlpModel, samples: &[&TrainingSample]) -> (Vec<f64>, f64) {
    let rows = samples.len();
    let mut acts = forward_cached(model, gather_inputs(samples), rows);
    let output = acts.pop().unwrap();

    let mut sq = 0.0;
    let mut delta = vec![0.0; rows * FEATURE_DIM];
    for (r, s) in samples.iter().enumerate() {
        for c in 0..FEATURE_DIM {
            let e = output[r * FEATURE_DIM + c] - s.target[c];
            sq += e * e;
            delta[r * FEATURE_DIM + c] = 2.0 * e;
        }
    }

    let mut per_layer: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(model.layers.len());
    for (k, layer) in model.layers.iter().enumerate().rev() {
        let input = &acts[k];
        let mut gw = vec![0.0; layer.outputs * layer.inputs];
        gemm_atb(layer.outputs, rows, layer.inputs, &delta, input, &mut gw);
        let mut gb = vec![0.0; layer.outputs];
        for row in delta.chunks_exact(layer.outputs) {
            for (g, d) in gb.iter_mut().zip(row) {
                *g += d;
            }
        }
        per_layer.push((gw, gb));
        if k > 0 {
            let mut prev = vec![0.0; rows * layer.inputs];
            gemm_ab(rows, layer.outputs, layer.inputs, &delta, &layer.weights, &mut prev);
            for (d, a) in prev.iter_mut().zip(input) {
                if *a <= 0.0 {
                    *d = 0.0;
                }
            }
            delta = prev;
        }
    }
    per_layer.reverse();
    let flat = per_layer.into_iter().flat_map(|(w, b)| w.into_iter().chain(b)).collect();
    (flat, sq)
}
