//! Dense row-major tensors and the convolution / matrix kernels used by both
//! the autodiff tape and the frozen (tape-free) speaker encoder.
//!
//! Sequences are stored channel-major as `[channels, time]`; there is no batch
//! axis. Images for the reference encoder are `[channels, height, width]`.

use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {shape:?} does not match data length {}",
            data.len()
        );
        Tensor { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    /// Column vector `[n, 1]`.
    pub fn column(data: Vec<T>) -> Self {
        let n = data.len();
        Tensor::new(vec![n, 1], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rows and columns of a rank-2 tensor.
    pub fn dims2(&self) -> (usize, usize) {
        assert_eq!(self.shape.len(), 2, "expected rank-2 tensor, got {:?}", self.shape);
        (self.shape[0], self.shape[1])
    }

    pub fn dims3(&self) -> (usize, usize, usize) {
        assert_eq!(self.shape.len(), 3, "expected rank-3 tensor, got {:?}", self.shape);
        (self.shape[0], self.shape[1], self.shape[2])
    }

    pub fn reshape(mut self, shape: &[usize]) -> Self {
        assert_eq!(shape.iter().product::<usize>(), self.data.len());
        self.shape = shape.to_vec();
        self
    }

    pub fn at2(&self, r: usize, c: usize) -> T {
        self.data[r * self.shape[1] + c]
    }

    pub fn row(&self, r: usize) -> &[T] {
        let cols = self.shape[1];
        &self.data[r * cols..(r + 1) * cols]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        assert_eq!(self.shape, other.shape, "shape mismatch in elementwise op");
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape, other.shape, "shape mismatch in accumulate");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    /// Columns `[start, end)` of a rank-2 tensor.
    pub fn slice_cols(&self, start: usize, end: usize) -> Self {
        let (rows, cols) = self.dims2();
        assert!(start <= end && end <= cols);
        let w = end - start;
        let mut data = Vec::with_capacity(rows * w);
        for r in 0..rows {
            data.extend_from_slice(&self.data[r * cols + start..r * cols + end]);
        }
        Tensor::new(vec![rows, w], data)
    }

    /// Rows `[start, end)` of a rank-2 tensor.
    pub fn slice_rows(&self, start: usize, end: usize) -> Self {
        let (rows, cols) = self.dims2();
        assert!(start <= end && end <= rows);
        Tensor::new(
            vec![end - start, cols],
            self.data[start * cols..end * cols].to_vec(),
        )
    }

    pub fn transpose(&self) -> Self {
        let (rows, cols) = self.dims2();
        let mut out = vec![T::zero(); rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                out[c * rows + r] = self.data[r * cols + c];
            }
        }
        Tensor::new(vec![cols, rows], out)
    }

    /// Mean over the time axis of a `[C, T]` tensor, returned as `[C, 1]`.
    pub fn mean_cols(&self) -> Self {
        let (rows, cols) = self.dims2();
        let inv = T::one() / T::lit(cols as f64);
        Tensor::new(
            vec![rows, 1],
            (0..rows).map(|r| self.row(r).iter().copied().sum::<T>() * inv).collect(),
        )
    }
}

/// `a @ b` for rank-2 tensors, with optional transposition of either operand.
pub fn matmul<T: Scalar>(a: &Tensor<T>, trans_a: bool, b: &Tensor<T>, trans_b: bool) -> Tensor<T> {
    let (ar, ac) = a.dims2();
    let (br, bc) = b.dims2();
    let (m, k, sa) = if trans_a {
        (ac, ar, (1, ac as isize))
    } else {
        (ar, ac, (ac as isize, 1))
    };
    let (k2, n, sb) = if trans_b {
        (bc, br, (1, bc as isize))
    } else {
        (br, bc, (bc as isize, 1))
    };
    assert_eq!(k, k2, "matmul inner dimension mismatch: {:?} x {:?}", a.shape(), b.shape());
    let mut out = vec![T::zero(); m * n];
    T::gemm(m, k, n, T::one(), a.data(), sa, b.data(), sb, T::zero(), &mut out, (n as isize, 1));
    Tensor::new(vec![m, n], out)
}

/// Hyperparameters of a 1-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv1dSpec {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl Conv1dSpec {
    pub fn same(kernel: usize, dilation: usize) -> Self {
        Conv1dSpec {
            stride: 1,
            padding: dilation * (kernel - 1) / 2,
            dilation,
            groups: 1,
        }
    }

    pub fn output_len(&self, input_len: usize, kernel: usize) -> Option<usize> {
        let span = self.dilation * (kernel - 1) + 1;
        let padded = input_len + 2 * self.padding;
        if padded < span {
            return None;
        }
        Some((padded - span) / self.stride + 1)
    }
}

fn im2col_1d<T: Scalar>(
    x: &[T],
    len: usize,
    ch_start: usize,
    channels: usize,
    kernel: usize,
    out_len: usize,
    spec: &Conv1dSpec,
) -> Vec<T> {
    let mut cols = vec![T::zero(); channels * kernel * out_len];
    for ci in 0..channels {
        let src = &x[(ch_start + ci) * len..(ch_start + ci + 1) * len];
        for k in 0..kernel {
            let row = &mut cols[(ci * kernel + k) * out_len..(ci * kernel + k + 1) * out_len];
            let offset = (k * spec.dilation) as isize - spec.padding as isize;
            for (t, slot) in row.iter_mut().enumerate() {
                let pos = (t * spec.stride) as isize + offset;
                if pos >= 0 && (pos as usize) < len {
                    *slot = src[pos as usize];
                }
            }
        }
    }
    cols
}

fn col2im_1d<T: Scalar>(
    cols: &[T],
    dx: &mut [T],
    len: usize,
    ch_start: usize,
    channels: usize,
    kernel: usize,
    out_len: usize,
    spec: &Conv1dSpec,
) {
    for ci in 0..channels {
        let dst = &mut dx[(ch_start + ci) * len..(ch_start + ci + 1) * len];
        for k in 0..kernel {
            let row = &cols[(ci * kernel + k) * out_len..(ci * kernel + k + 1) * out_len];
            let offset = (k * spec.dilation) as isize - spec.padding as isize;
            for (t, &v) in row.iter().enumerate() {
                let pos = (t * spec.stride) as isize + offset;
                if pos >= 0 && (pos as usize) < len {
                    dst[pos as usize] += v;
                }
            }
        }
    }
}

/// Grouped, strided, dilated 1-D convolution.
///
/// `x: [C_in, L]`, `w: [C_out, C_in / groups, K]`, `bias: [C_out]`.
pub fn conv1d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &Conv1dSpec,
) -> Tensor<T> {
    let (cin, len) = x.dims2();
    let (cout, cin_g, kernel) = w.dims3();
    let g = spec.groups;
    assert_eq!(cin, cin_g * g, "conv1d input channels {cin} != {cin_g} x {g} groups");
    assert_eq!(cout % g, 0);
    let cout_g = cout / g;
    let out_len = spec
        .output_len(len, kernel)
        .unwrap_or_else(|| panic!("conv1d input length {len} shorter than kernel span"));
    let mut y = vec![T::zero(); cout * out_len];
    if let Some(b) = bias {
        for co in 0..cout {
            let bv = b.data()[co];
            y[co * out_len..(co + 1) * out_len].iter_mut().for_each(|v| *v = bv);
        }
    }
    let ck = cin_g * kernel;
    for gi in 0..g {
        let cols = im2col_1d(x.data(), len, gi * cin_g, cin_g, kernel, out_len, spec);
        let wg = &w.data()[gi * cout_g * ck..(gi + 1) * cout_g * ck];
        let yg = &mut y[gi * cout_g * out_len..(gi + 1) * cout_g * out_len];
        T::gemm(
            cout_g,
            ck,
            out_len,
            T::one(),
            wg,
            (ck as isize, 1),
            &cols,
            (out_len as isize, 1),
            T::one(),
            yg,
            (out_len as isize, 1),
        );
    }
    Tensor::new(vec![cout, out_len], y)
}

/// Gradients of [`conv1d`] with respect to input, weight and bias.
pub fn conv1d_backward<T: Scalar>(
    dy: &Tensor<T>,
    x: &Tensor<T>,
    w: &Tensor<T>,
    spec: &Conv1dSpec,
    need_dx: bool,
    need_dw: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>, Tensor<T>) {
    let (cin, len) = x.dims2();
    let (cout, cin_g, kernel) = w.dims3();
    let (_, out_len) = dy.dims2();
    let g = spec.groups;
    let cout_g = cout / g;
    let ck = cin_g * kernel;
    let mut dx = need_dx.then(|| vec![T::zero(); cin * len]);
    let mut dw = need_dw.then(|| vec![T::zero(); w.len()]);
    let db = Tensor::new(vec![cout], (0..cout).map(|co| dy.row(co).iter().copied().sum()).collect());
    for gi in 0..g {
        let dyg = &dy.data()[gi * cout_g * out_len..(gi + 1) * cout_g * out_len];
        if let Some(dw) = dw.as_mut() {
            let cols = im2col_1d(x.data(), len, gi * cin_g, cin_g, kernel, out_len, spec);
            T::gemm(
                cout_g,
                out_len,
                ck,
                T::one(),
                dyg,
                (out_len as isize, 1),
                &cols,
                (1, out_len as isize),
                T::zero(),
                &mut dw[gi * cout_g * ck..(gi + 1) * cout_g * ck],
                (ck as isize, 1),
            );
        }
        if let Some(dx) = dx.as_mut() {
            let wg = &w.data()[gi * cout_g * ck..(gi + 1) * cout_g * ck];
            let mut dcols = vec![T::zero(); ck * out_len];
            T::gemm(
                ck,
                cout_g,
                out_len,
                T::one(),
                wg,
                (1, ck as isize),
                dyg,
                (out_len as isize, 1),
                T::zero(),
                &mut dcols,
                (out_len as isize, 1),
            );
            col2im_1d(&dcols, dx, len, gi * cin_g, cin_g, kernel, out_len, spec);
        }
    }
    (
        dx.map(|d| Tensor::new(vec![cin, len], d)),
        dw.map(|d| Tensor::new(w.shape().to_vec(), d)),
        db,
    )
}

/// Output length of a transposed convolution (no output padding).
pub fn conv_transpose1d_len(input_len: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (input_len - 1) * stride + kernel - 2 * padding
}

/// Transposed 1-D convolution. `x: [C_in, L]`, `w: [C_in, C_out, K]`.
pub fn conv_transpose1d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Tensor<T> {
    let (cin, len) = x.dims2();
    let (wcin, cout, kernel) = w.dims3();
    assert_eq!(cin, wcin, "conv_transpose1d channel mismatch");
    let out_len = conv_transpose1d_len(len, kernel, stride, padding);
    let ck = cout * kernel;
    // cols[co * K + k, t] = sum_ci w[ci, co, k] * x[ci, t]
    let mut cols = vec![T::zero(); ck * len];
    T::gemm(
        ck,
        cin,
        len,
        T::one(),
        w.data(),
        (1, ck as isize),
        x.data(),
        (len as isize, 1),
        T::zero(),
        &mut cols,
        (len as isize, 1),
    );
    let mut y = vec![T::zero(); cout * out_len];
    for co in 0..cout {
        let bv = bias.map_or(T::zero(), |b| b.data()[co]);
        let yrow = &mut y[co * out_len..(co + 1) * out_len];
        yrow.iter_mut().for_each(|v| *v = bv);
        for k in 0..kernel {
            let row = &cols[(co * kernel + k) * len..(co * kernel + k + 1) * len];
            for (t, &v) in row.iter().enumerate() {
                let pos = (t * stride + k) as isize - padding as isize;
                if pos >= 0 && (pos as usize) < out_len {
                    yrow[pos as usize] += v;
                }
            }
        }
    }
    Tensor::new(vec![cout, out_len], y)
}

pub fn conv_transpose1d_backward<T: Scalar>(
    dy: &Tensor<T>,
    x: &Tensor<T>,
    w: &Tensor<T>,
    stride: usize,
    padding: usize,
    need_dx: bool,
    need_dw: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>, Tensor<T>) {
    let (cin, len) = x.dims2();
    let (_, cout, kernel) = w.dims3();
    let (_, out_len) = dy.dims2();
    let ck = cout * kernel;
    let mut dcols = vec![T::zero(); ck * len];
    for co in 0..cout {
        let dyrow = dy.row(co);
        for k in 0..kernel {
            let row = &mut dcols[(co * kernel + k) * len..(co * kernel + k + 1) * len];
            for (t, slot) in row.iter_mut().enumerate() {
                let pos = (t * stride + k) as isize - padding as isize;
                if pos >= 0 && (pos as usize) < out_len {
                    *slot = dyrow[pos as usize];
                }
            }
        }
    }
    let db = Tensor::new(vec![cout], (0..cout).map(|co| dy.row(co).iter().copied().sum()).collect());
    let dx = need_dx.then(|| {
        let mut dx = vec![T::zero(); cin * len];
        T::gemm(
            cin,
            ck,
            len,
            T::one(),
            w.data(),
            (ck as isize, 1),
            &dcols,
            (len as isize, 1),
            T::zero(),
            &mut dx,
            (len as isize, 1),
        );
        Tensor::new(vec![cin, len], dx)
    });
    let dw = need_dw.then(|| {
        let mut dw = vec![T::zero(); cin * ck];
        T::gemm(
            cin,
            len,
            ck,
            T::one(),
            x.data(),
            (len as isize, 1),
            &dcols,
            (1, len as isize),
            T::zero(),
            &mut dw,
            (ck as isize, 1),
        );
        Tensor::new(w.shape().to_vec(), dw)
    });
    (dx, dw, db)
}

/// Hyperparameters of a 2-D convolution (no groups, no dilation).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl Conv2dSpec {
    pub fn output_dims(&self, h: usize, w: usize, kh: usize, kw: usize) -> (usize, usize) {
        (
            (h + 2 * self.padding.0 - kh) / self.stride.0 + 1,
            (w + 2 * self.padding.1 - kw) / self.stride.1 + 1,
        )
    }
}

fn im2col_2d<T: Scalar>(
    x: &Tensor<T>,
    kh: usize,
    kw: usize,
    spec: &Conv2dSpec,
    ho: usize,
    wo: usize,
) -> Vec<T> {
    let (c, h, w) = x.dims3();
    let n = ho * wo;
    let mut cols = vec![T::zero(); c * kh * kw * n];
    for ci in 0..c {
        for a in 0..kh {
            for b in 0..kw {
                let row = (ci * kh + a) * kw + b;
                let dst = &mut cols[row * n..(row + 1) * n];
                for oy in 0..ho {
                    let iy = (oy * spec.stride.0 + a) as isize - spec.padding.0 as isize;
                    if iy < 0 || iy as usize >= h {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * spec.stride.1 + b) as isize - spec.padding.1 as isize;
                        if ix >= 0 && (ix as usize) < w {
                            dst[oy * wo + ox] = x.data()[(ci * h + iy as usize) * w + ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// 2-D convolution. `x: [C_in, H, W]`, `w: [C_out, C_in, kh, kw]`.
pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &Conv2dSpec,
) -> Tensor<T> {
    let (cin, h, wd) = x.dims3();
    let shape = w.shape();
    let (cout, wcin, kh, kw) = (shape[0], shape[1], shape[2], shape[3]);
    assert_eq!(cin, wcin, "conv2d channel mismatch");
    let (ho, wo) = spec.output_dims(h, wd, kh, kw);
    let cols = im2col_2d(x, kh, kw, spec, ho, wo);
    let n = ho * wo;
    let ck = cin * kh * kw;
    let mut y = vec![T::zero(); cout * n];
    if let Some(b) = bias {
        for co in 0..cout {
            y[co * n..(co + 1) * n].iter_mut().for_each(|v| *v = b.data()[co]);
        }
    }
    T::gemm(cout, ck, n, T::one(), w.data(), (ck as isize, 1), &cols, (n as isize, 1), T::one(), &mut y, (n as isize, 1));
    Tensor::new(vec![cout, ho, wo], y)
}

pub fn conv2d_backward<T: Scalar>(
    dy: &Tensor<T>,
    x: &Tensor<T>,
    w: &Tensor<T>,
    spec: &Conv2dSpec,
    need_dx: bool,
    need_dw: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>, Tensor<T>) {
    let (cin, h, wd) = x.dims3();
    let shape = w.shape();
    let (cout, kh, kw) = (shape[0], shape[2], shape[3]);
    let (_, ho, wo) = dy.dims3();
    let n = ho * wo;
    let ck = cin * kh * kw;
    let db = Tensor::new(
        vec![cout],
        (0..cout).map(|co| dy.data()[co * n..(co + 1) * n].iter().copied().sum()).collect(),
    );
    let dw = need_dw.then(|| {
        let cols = im2col_2d(x, kh, kw, spec, ho, wo);
        let mut dw = vec![T::zero(); cout * ck];
        T::gemm(cout, n, ck, T::one(), dy.data(), (n as isize, 1), &cols, (1, n as isize), T::zero(), &mut dw, (ck as isize, 1));
        Tensor::new(shape.to_vec(), dw)
    });
    let dx = need_dx.then(|| {
        let mut dcols = vec![T::zero(); ck * n];
        T::gemm(ck, cout, n, T::one(), w.data(), (1, ck as isize), dy.data(), (n as isize, 1), T::zero(), &mut dcols, (n as isize, 1));
        let mut dx = vec![T::zero(); cin * h * wd];
        for ci in 0..cin {
            for a in 0..kh {
                for b in 0..kw {
                    let row = (ci * kh + a) * kw + b;
                    let src = &dcols[row * n..(row + 1) * n];
                    for oy in 0..ho {
                        let iy = (oy * spec.stride.0 + a) as isize - spec.padding.0 as isize;
                        if iy < 0 || iy as usize >= h {
                            continue;
                        }
                        for ox in 0..wo {
                            let ix = (ox * spec.stride.1 + b) as isize - spec.padding.1 as isize;
                            if ix >= 0 && (ix as usize) < wd {
                                dx[(ci * h + iy as usize) * wd + ix as usize] += src[oy * wo + ox];
                            }
                        }
                    }
                }
            }
        }
        Tensor::new(vec![cin, h, wd], dx)
    });
    (dx, dw, db)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv1d(x: &Tensor<f64>, w: &Tensor<f64>, spec: &Conv1dSpec) -> Tensor<f64> {
        let (cin, len) = x.dims2();
        let (cout, cin_g, k) = w.dims3();
        let out_len = spec.output_len(len, k).unwrap();
        let cout_g = cout / spec.groups;
        let mut y = Tensor::zeros(&[cout, out_len]);
        for co in 0..cout {
            let gi = co / cout_g;
            for t in 0..out_len {
                let mut acc = 0.0;
                for ci in 0..cin_g {
                    for kk in 0..k {
                        let pos = (t * spec.stride + kk * spec.dilation) as isize - spec.padding as isize;
                        if pos >= 0 && (pos as usize) < len {
                            acc += w.data()[(co * cin_g + ci) * k + kk]
                                * x.data()[(gi * cin_g + ci) * len + pos as usize];
                        }
                    }
                }
                y.data_mut()[co * out_len + t] = acc;
            }
        }
        let _ = cin;
        y
    }

    fn ramp(shape: &[usize], scale: f64) -> Tensor<f64> {
        Tensor::from_fn(shape, |i| ((i * 7919) % 23) as f64 * scale - 0.5)
    }

    #[test]
    fn grouped_strided_conv_matches_naive() {
        let spec = Conv1dSpec { stride: 2, padding: 1, dilation: 1, groups: 2 };
        let x = ramp(&[4, 11], 0.05);
        let w = ramp(&[6, 2, 4], 0.03);
        let fast = conv1d(&x, &w, None, &spec);
        let slow = naive_conv1d(&x, &w, &spec);
        for (a, b) in fast.data().iter().zip(slow.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dilated_conv_matches_naive() {
        let spec = Conv1dSpec::same(3, 2);
        let x = ramp(&[3, 9], 0.1);
        let w = ramp(&[2, 3, 3], 0.07);
        let fast = conv1d(&x, &w, None, &spec);
        let slow = naive_conv1d(&x, &w, &spec);
        assert_eq!(fast.shape(), &[2, 9]);
        for (a, b) in fast.data().iter().zip(slow.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_backward_is_adjoint_of_forward() {
        // <conv(x), dy> == <x, dx> and == <w, dw> for a linear map.
        let spec = Conv1dSpec { stride: 2, padding: 1, dilation: 1, groups: 2 };
        let x = ramp(&[4, 10], 0.05);
        let w = ramp(&[4, 2, 4], 0.03);
        let y = conv1d(&x, &w, None, &spec);
        let dy = ramp(y.shape(), 0.11);
        let (dx, dw, _) = conv1d_backward(&dy, &x, &w, &spec, true, true);
        let lhs: f64 = y.data().iter().zip(dy.data()).map(|(a, b)| a * b).sum();
        let via_x: f64 = x.data().iter().zip(dx.unwrap().data()).map(|(a, b)| a * b).sum();
        let via_w: f64 = w.data().iter().zip(dw.unwrap().data()).map(|(a, b)| a * b).sum();
        assert!((lhs - via_x).abs() < 1e-10);
        assert!((lhs - via_w).abs() < 1e-10);
    }

    #[test]
    fn transposed_conv_is_adjoint_of_strided_conv() {
        // conv_transpose1d with weight w[ci, co, k] is the adjoint of conv1d with
        // weight w viewed as [C_out=ci, C_in=co, k].
        let (stride, padding) = (4, 2);
        let x = ramp(&[3, 5], 0.1);
        let w = ramp(&[3, 2, 8], 0.02);
        let y = conv_transpose1d(&x, &w, None, stride, padding);
        assert_eq!(y.shape(), &[2, conv_transpose1d_len(5, 8, 4, 2)]);
        let probe = ramp(y.shape(), 0.09);
        let spec = Conv1dSpec { stride, padding, dilation: 1, groups: 1 };
        let back = conv1d(&probe, &w, None, &spec);
        let lhs: f64 = y.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(back.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn conv2d_backward_is_adjoint() {
        let spec = Conv2dSpec { stride: (2, 2), padding: (1, 1) };
        let x = ramp(&[2, 7, 6], 0.04);
        let w = ramp(&[3, 2, 3, 3], 0.05);
        let y = conv2d(&x, &w, None, &spec);
        assert_eq!(y.shape(), &[3, 4, 3]);
        let dy = ramp(y.shape(), 0.13);
        let (dx, dw, _) = conv2d_backward(&dy, &x, &w, &spec, true, true);
        let lhs: f64 = y.data().iter().zip(dy.data()).map(|(a, b)| a * b).sum();
        let via_x: f64 = x.data().iter().zip(dx.unwrap().data()).map(|(a, b)| a * b).sum();
        let via_w: f64 = w.data().iter().zip(dw.unwrap().data()).map(|(a, b)| a * b).sum();
        assert!((lhs - via_x).abs() < 1e-10);
        assert!((lhs - via_w).abs() < 1e-10);
    }
}
