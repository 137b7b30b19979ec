//! Minimal dense linear-algebra kernel: matrix multiply, im2col expansion,
//! wide convolution, ReLU, and column-wise max-pooling.
//!
//! Everything is 64-bit floats in row-major flat storage. Convolution is
//! expressed as `gemm(flattened filters, im2col(input))`, which turns the
//! sliding-window problem into a single matrix multiplication.

use crate::error::{Error, Result};

/// Dense n-dimensional array of `f64` in row-major order.
///
/// Immutable after construction; `product(dims) == data.len()` and every
/// dimension is at least 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidArgument(
                "tensor dims must be non-empty".into(),
            ));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument(format!(
                "tensor dims must all be >= 1, got {dims:?}"
            )));
        }
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(Error::InvalidArgument(format!(
                "tensor dims {dims:?} imply {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        let len = dims.iter().product();
        Self::new(dims, vec![0.0; len])
    }

    /// Build a 2-d tensor from equally sized rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidArgument(
                "matrix needs at least one row".into(),
            ));
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidArgument(
                "ragged rows in matrix literal".into(),
            ));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Interpret as a matrix, returning (rows, cols).
    fn as_matrix(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.dims.as_slice() {
            &[r, c] => Ok((r, c)),
            _ => Err(Error::Shape {
                op,
                lhs: self.dims.clone(),
                rhs: vec![],
            }),
        }
    }
}

/// C = A · B for matrices A (m×k) and B (k×n).
pub fn gemm(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, ka) = a.as_matrix("gemm")?;
    let (kb, n) = b.as_matrix("gemm")?;
    if ka != kb {
        return Err(Error::Shape {
            op: "gemm",
            lhs: a.dims.clone(),
            rhs: b.dims.clone(),
        });
    }
    let mut out = vec![0.0; m * n];
    // ikj order: for each output cell the partial products accumulate in
    // ascending p, matching the naive triple-loop definition bit for bit.
    for i in 0..m {
        for p in 0..ka {
            let av = a.data[i * ka + p];
            let row = &b.data[p * n..(p + 1) * n];
            let dst = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                dst[j] += av * row[j];
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// Unroll a d×L matrix into the (d·w)×(L+w−1) column matrix of a wide
/// (zero-padded) convolution with window width `w`.
///
/// Column `j` stacks padded input columns `j−(w−1)..=j`: for window offset
/// `o`, rows `o·d..(o+1)·d` hold padded column `j−(w−1)+o`, where columns
/// outside `0..L` read as zero.
pub fn im2col_wide(x: &Tensor, w: usize) -> Result<Tensor> {
    let (d, l) = x.as_matrix("im2col_wide")?;
    if w < 1 {
        return Err(Error::InvalidArgument(
            "im2col_wide: window width must be >= 1".into(),
        ));
    }
    let out_cols = l + w - 1;
    let mut out = vec![0.0; d * w * out_cols];
    for j in 0..out_cols {
        for o in 0..w {
            let t = j as isize - (w as isize - 1) + o as isize;
            if t < 0 || t >= l as isize {
                continue; // zero padding
            }
            let t = t as usize;
            for r in 0..d {
                out[(o * d + r) * out_cols + j] = x.data[r * l + t];
            }
        }
    }
    Tensor::new(vec![d * w, out_cols], out)
}

/// Wide convolution of a d×L input with k filters of shape d×w, plus bias.
///
/// `filters` is the k×d×w filter bank; row f of the output is the flattened
/// filter f times `im2col_wide(x, w)`, with `bias[f]` broadcast over the
/// L+w−1 output positions.
pub fn conv_wide(x: &Tensor, filters: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (d, _l) = x.as_matrix("conv_wide")?;
    let &[k, fd, w] = filters.dims() else {
        return Err(Error::Shape {
            op: "conv_wide filters",
            lhs: filters.dims.clone(),
            rhs: x.dims.clone(),
        });
    };
    if fd != d {
        return Err(Error::Shape {
            op: "conv_wide depth",
            lhs: filters.dims.clone(),
            rhs: x.dims.clone(),
        });
    }
    if bias.dims() != [k] {
        return Err(Error::Shape {
            op: "conv_wide bias",
            lhs: bias.dims.clone(),
            rhs: vec![k],
        });
    }
    // Flatten each filter to match the im2col stacking order: entry o·d+r of
    // the flat filter is filters[f][r][o].
    let mut flat = vec![0.0; k * d * w];
    for f in 0..k {
        for r in 0..d {
            for o in 0..w {
                flat[f * d * w + o * d + r] = filters.data[(f * d + r) * w + o];
            }
        }
    }
    let flat = Tensor::new(vec![k, d * w], flat)?;
    let cols = im2col_wide(x, w)?;
    let mut out = gemm(&flat, &cols)?;
    let n = out.dims[1];
    for f in 0..k {
        let bv = bias.data[f];
        for j in 0..n {
            out.data[f * n + j] += bv;
        }
    }
    Ok(out)
}

/// Elementwise max(0, x); shape preserved.
pub fn relu(t: &Tensor) -> Tensor {
    let data = t
        .data
        .iter()
        .map(|&v| if v > 0.0 { v } else { 0.0 })
        .collect();
    Tensor {
        dims: t.dims.clone(),
        data,
    }
}

/// Per-row maximum of a k×L matrix: `out[f] = max_j M[f][j]`.
pub fn maxpool_cols(m: &Tensor) -> Result<Vec<f64>> {
    let (k, l) = m.as_matrix("maxpool_cols")?;
    let mut out = Vec::with_capacity(k);
    for f in 0..k {
        let row = &m.data[f * l..(f + 1) * l];
        let mut best = row[0];
        for &v in &row[1..] {
            if v > best {
                best = v;
            }
        }
        out.push(best);
    }
    Ok(out)
}
