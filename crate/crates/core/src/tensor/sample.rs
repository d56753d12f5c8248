//! Sparse linear maps used for every resampling, permutation and pooling op.
//!
//! Each output element is a weighted sum of input elements, so forward is a
//! gather and backward is the transposed scatter-add. Sample coordinates put
//! element centers on integers; taps that fall outside the source contribute
//! nothing (zero padding).

/// Row-compressed sparse matrix mapping an input buffer to an output buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearMap {
    in_len: usize,
    offsets: Vec<usize>,
    indices: Vec<usize>,
    weights: Vec<f64>,
}

impl LinearMap {
    pub fn in_len(&self) -> usize {
        self.in_len
    }

    pub fn out_len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.offsets[i], self.offsets[i + 1]);
        self.indices[a..b]
            .iter()
            .copied()
            .zip(self.weights[a..b].iter().copied())
    }

    pub fn apply(&self, input: &[f64]) -> Vec<f64> {
        debug_assert_eq!(input.len(), self.in_len);
        (0..self.out_len())
            .map(|i| self.row(i).map(|(j, w)| w * input[j]).sum())
            .collect()
    }

    pub fn apply_transpose(&self, grad_out: &[f64]) -> Vec<f64> {
        let mut grad_in = vec![0.0; self.in_len];
        for (i, &g) in grad_out.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            for (j, w) in self.row(i) {
                grad_in[j] += w * g;
            }
        }
        grad_in
    }
}

#[derive(Debug)]
pub struct LinearMapBuilder {
    in_len: usize,
    offsets: Vec<usize>,
    indices: Vec<usize>,
    weights: Vec<f64>,
}

impl LinearMapBuilder {
    pub fn new(in_len: usize) -> Self {
        LinearMapBuilder {
            in_len,
            offsets: vec![0],
            indices: Vec::new(),
            weights: Vec::new(),
        }
    }

    pub fn with_capacity(in_len: usize, rows: usize, taps: usize) -> Self {
        let mut offsets = Vec::with_capacity(rows + 1);
        offsets.push(0);
        LinearMapBuilder {
            in_len,
            offsets,
            indices: Vec::with_capacity(taps),
            weights: Vec::with_capacity(taps),
        }
    }

    /// Adds a tap to the current row. Zero weights are dropped.
    pub fn tap(&mut self, index: usize, weight: f64) {
        assert!(index < self.in_len, "tap index {index} >= {}", self.in_len);
        if weight != 0.0 {
            self.indices.push(index);
            self.weights.push(weight);
        }
    }

    pub fn end_row(&mut self) {
        self.offsets.push(self.indices.len());
    }

    /// Finishes a row holding exactly one unit tap.
    pub fn copy_row(&mut self, index: usize) {
        self.tap(index, 1.0);
        self.end_row();
    }

    pub fn rows(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn build(self) -> LinearMap {
        LinearMap {
            in_len: self.in_len,
            offsets: self.offsets,
            indices: self.indices,
            weights: self.weights,
        }
    }
}

/// Visits the in-bounds taps of a bilinear sample at column `u`, row `v` of an
/// `height x width` plane. Tap indices are `row * width + col`.
pub fn bilinear_weights(
    height: usize,
    width: usize,
    u: f64,
    v: f64,
    mut visit: impl FnMut(usize, f64),
) {
    if !u.is_finite() || !v.is_finite() {
        return;
    }
    let (u0, fu) = split(u);
    let (v0, fv) = split(v);
    for (dv, wv) in [(0, 1.0 - fv), (1, fv)] {
        if wv == 0.0 {
            continue;
        }
        let Some(row) = index_in(v0 + dv, height) else {
            continue;
        };
        for (du, wu) in [(0, 1.0 - fu), (1, fu)] {
            if wu == 0.0 {
                continue;
            }
            if let Some(col) = index_in(u0 + du, width) {
                visit(row * width + col, wv * wu);
            }
        }
    }
}

/// Trilinear analogue of [`bilinear_weights`] over a `depth x height x width`
/// volume sampled at (`w`, `v`, `u`). Tap indices are row-major.
pub fn trilinear_weights(
    dims: [usize; 3],
    w: f64,
    v: f64,
    u: f64,
    mut visit: impl FnMut(usize, f64),
) {
    if !w.is_finite() {
        return;
    }
    let [depth, height, width] = dims;
    let (w0, fw) = split(w);
    for (dw, ww) in [(0, 1.0 - fw), (1, fw)] {
        if ww == 0.0 {
            continue;
        }
        let Some(slice) = index_in(w0 + dw, depth) else {
            continue;
        };
        bilinear_weights(height, width, u, v, |i, wt| {
            visit(slice * height * width + i, ww * wt)
        });
    }
}

fn split(x: f64) -> (i64, f64) {
    let x0 = x.floor();
    (x0 as i64, x - x0)
}

fn index_in(i: i64, n: usize) -> Option<usize> {
    (i >= 0 && (i as usize) < n).then_some(i as usize)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn taps(h: usize, w: usize, u: f64, v: f64) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        bilinear_weights(h, w, u, v, |i, wt| out.push((i, wt)));
        out
    }

    #[test]
    fn integer_sample_is_single_unit_tap() {
        assert_eq!(taps(3, 4, 2.0, 1.0), vec![(6, 1.0)]);
    }

    #[test]
    fn partial_outside_keeps_inside_taps() {
        let t = taps(2, 2, 1.5, 0.0);
        assert_eq!(t, vec![(1, 0.5)]);
        assert!(taps(2, 2, -5.0, 0.0).is_empty());
        assert!(taps(2, 2, f64::NAN, 0.0).is_empty());
    }

    #[test]
    fn map_transpose_is_adjoint() {
        let mut b = LinearMapBuilder::new(3);
        b.tap(0, 2.0);
        b.tap(2, -1.0);
        b.end_row();
        b.copy_row(1);
        let m = b.build();
        let x = [1.0, 2.0, 3.0];
        let y = [0.5, -4.0];
        let lhs: f64 = m.apply(&x).iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = m
            .apply_transpose(&y)
            .iter()
            .zip(&x)
            .map(|(a, b)| a * b)
            .sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
