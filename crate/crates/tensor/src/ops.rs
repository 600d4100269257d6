//! Structural and arithmetic ops. Every op copies; there are no strided views.

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// `a[m×k] · b[k×n]`.
pub(crate) fn gemm(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `a[m×n] · b[k×n]ᵀ`.
pub(crate) fn gemm_nt(a: &[f32], b: &[f32], m: usize, n: usize, k: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; m * k];
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            out[i * k + p] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `a[m×k]ᵀ · b[m×n]`.
pub(crate) fn gemm_tn(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; k * n];
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn dims2(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match *t.shape() {
        [r, c] => Ok((r, c)),
        _ => Err(TensorError::invalid(op, format!("expected a 2-D tensor, got shape {:?}", t.shape()))),
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("add", self, other)?;
        let data = self.data().iter().zip(other.data()).map(|(a, b)| a + b).collect();
        Tensor::from_op(
            "add",
            data,
            self.shape().to_vec(),
            vec![self.clone(), other.clone()],
            Box::new(|g, needs| vec![needs[0].then(|| g.to_vec()), needs[1].then(|| g.to_vec())]),
        )
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("sub", self, other)?;
        let data = self.data().iter().zip(other.data()).map(|(a, b)| a - b).collect();
        Tensor::from_op(
            "sub",
            data,
            self.shape().to_vec(),
            vec![self.clone(), other.clone()],
            Box::new(|g, needs| {
                vec![
                    needs[0].then(|| g.to_vec()),
                    needs[1].then(|| g.iter().map(|v| -v).collect()),
                ]
            }),
        )
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("mul", self, other)?;
        let data = self.data().iter().zip(other.data()).map(|(a, b)| a * b).collect();
        let (a, b) = (self.clone(), other.clone());
        Tensor::from_op(
            "mul",
            data,
            self.shape().to_vec(),
            vec![self.clone(), other.clone()],
            Box::new(move |g, needs| {
                vec![
                    needs[0].then(|| g.iter().zip(b.data()).map(|(g, b)| g * b).collect()),
                    needs[1].then(|| g.iter().zip(a.data()).map(|(g, a)| g * a).collect()),
                ]
            }),
        )
    }

    pub fn scale(&self, factor: f32) -> Result<Tensor> {
        let data = self.data().iter().map(|v| v * factor).collect();
        Tensor::from_op(
            "scale",
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |g, _| vec![Some(g.iter().map(|v| v * factor).collect())]),
        )
    }

    /// Adds a vector along the last axis: `x[.., j] + row[j]`.
    pub fn add_row(&self, row: &Tensor) -> Result<Tensor> {
        let cols = *self.shape().last().expect("rank >= 1");
        if row.numel() != cols || row.rank() != 1 {
            return Err(TensorError::shape("add_row", self.shape(), row.shape()));
        }
        let data = self
            .data()
            .chunks(cols)
            .flat_map(|chunk| chunk.iter().zip(row.data()).map(|(a, b)| a + b))
            .collect();
        Tensor::from_op(
            "add_row",
            data,
            self.shape().to_vec(),
            vec![self.clone(), row.clone()],
            Box::new(move |g, needs| {
                let grow = needs[1].then(|| {
                    let mut acc = vec![0.0; cols];
                    for chunk in g.chunks(cols) {
                        acc.iter_mut().zip(chunk).for_each(|(a, b)| *a += b);
                    }
                    acc
                });
                vec![needs[0].then(|| g.to_vec()), grow]
            }),
        )
    }

    /// Standard matrix product of two 2-D tensors.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = dims2("matmul", self)?;
        let (k2, n) = dims2("matmul", other)?;
        if k != k2 {
            return Err(TensorError::shape("matmul", self.shape(), other.shape()));
        }
        let data = gemm(self.data(), other.data(), m, k, n);
        let (a, b) = (self.clone(), other.clone());
        Tensor::from_op(
            "matmul",
            data,
            vec![m, n],
            vec![self.clone(), other.clone()],
            Box::new(move |g, needs| {
                vec![
                    needs[0].then(|| gemm_nt(g, b.data(), m, n, k)),
                    needs[1].then(|| gemm_tn(a.data(), g, m, k, n)),
                ]
            }),
        )
    }

    /// Transpose of a 2-D tensor.
    pub fn transpose(&self) -> Result<Tensor> {
        let (r, c) = dims2("transpose", self)?;
        let data = transpose_raw(self.data(), r, c);
        Tensor::from_op(
            "transpose",
            data,
            vec![c, r],
            vec![self.clone()],
            Box::new(move |g, _| vec![Some(transpose_raw(g, c, r))]),
        )
    }

    /// Same values under a new shape with equal element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if shape.iter().product::<usize>() != self.numel() || shape.contains(&0) {
            return Err(TensorError::shape("reshape", self.shape(), shape));
        }
        Tensor::from_op(
            "reshape",
            self.to_vec(),
            shape.to_vec(),
            vec![self.clone()],
            Box::new(|g, _| vec![Some(g.to_vec())]),
        )
    }

    pub fn sum(&self) -> Result<Tensor> {
        let n = self.numel();
        Tensor::from_op(
            "sum",
            vec![self.data().iter().sum()],
            vec![1],
            vec![self.clone()],
            Box::new(move |g, _| vec![Some(vec![g[0]; n])]),
        )
    }

    pub fn mean(&self) -> Result<Tensor> {
        let n = self.numel();
        let inv = 1.0 / n as f32;
        Tensor::from_op(
            "mean",
            vec![self.data().iter().sum::<f32>() * inv],
            vec![1],
            vec![self.clone()],
            Box::new(move |g, _| vec![Some(vec![g[0] * inv; n])]),
        )
    }

    /// Mean over the rows of a 2-D tensor, giving a vector of column means.
    pub fn mean_rows(&self) -> Result<Tensor> {
        let (r, c) = dims2("mean_rows", self)?;
        let inv = 1.0 / r as f32;
        let mut data = vec![0.0; c];
        for row in self.data().chunks(c) {
            data.iter_mut().zip(row).for_each(|(a, b)| *a += b);
        }
        data.iter_mut().for_each(|v| *v *= inv);
        Tensor::from_op(
            "mean_rows",
            data,
            vec![c],
            vec![self.clone()],
            Box::new(move |g, _| {
                let row: Vec<f32> = g.iter().map(|v| v * inv).collect();
                vec![Some(row.repeat(r))]
            }),
        )
    }

    /// Selects rows of a 2-D tensor (repetition allowed).
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Tensor> {
        let (r, c) = dims2("gather_rows", self)?;
        if indices.is_empty() {
            return Err(TensorError::invalid("gather_rows", "empty index list"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= r) {
            return Err(TensorError::invalid("gather_rows", format!("row {bad} out of range for {r} rows")));
        }
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            data.extend_from_slice(&self.data()[i * c..(i + 1) * c]);
        }
        let idx = indices.to_vec();
        Tensor::from_op(
            "gather_rows",
            data,
            vec![indices.len(), c],
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut out = vec![0.0; r * c];
                for (k, &i) in idx.iter().enumerate() {
                    out[i * c..(i + 1) * c]
                        .iter_mut()
                        .zip(&g[k * c..(k + 1) * c])
                        .for_each(|(a, b)| *a += b);
                }
                vec![Some(out)]
            }),
        )
    }

    /// Copy of a 2-D tensor whose listed rows are replaced by `row`.
    pub fn replace_rows(&self, rows: &[usize], row: &Tensor) -> Result<Tensor> {
        let (r, c) = dims2("replace_rows", self)?;
        if row.rank() != 1 || row.numel() != c {
            return Err(TensorError::shape("replace_rows", self.shape(), row.shape()));
        }
        let mut replaced = vec![false; r];
        for &i in rows {
            if i >= r {
                return Err(TensorError::invalid("replace_rows", format!("row {i} out of range for {r} rows")));
            }
            replaced[i] = true;
        }
        let mut data = self.to_vec();
        for (i, chunk) in data.chunks_mut(c).enumerate() {
            if replaced[i] {
                chunk.copy_from_slice(row.data());
            }
        }
        Tensor::from_op(
            "replace_rows",
            data,
            vec![r, c],
            vec![self.clone(), row.clone()],
            Box::new(move |g, needs| {
                let gx = needs[0].then(|| {
                    let mut gx = g.to_vec();
                    for (i, chunk) in gx.chunks_mut(c).enumerate() {
                        if replaced[i] {
                            chunk.fill(0.0);
                        }
                    }
                    gx
                });
                let grow = needs[1].then(|| {
                    let mut acc = vec![0.0; c];
                    for (i, chunk) in g.chunks(c).enumerate() {
                        if replaced[i] {
                            acc.iter_mut().zip(chunk).for_each(|(a, b)| *a += b);
                        }
                    }
                    acc
                });
                vec![gx, grow]
            }),
        )
    }

    /// Stacks 2-D tensors (or vectors, treated as single rows) vertically.
    pub fn concat_rows(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::invalid("concat_rows", "no inputs"))?;
        let cols = *first.shape().last().unwrap();
        let mut rows = Vec::with_capacity(parts.len());
        let mut data = Vec::new();
        for p in parts {
            let (r, c) = match *p.shape() {
                [c] => (1, c),
                [r, c] => (r, c),
                _ => return Err(TensorError::shape("concat_rows", first.shape(), p.shape())),
            };
            if c != cols {
                return Err(TensorError::shape("concat_rows", first.shape(), p.shape()));
            }
            rows.push(r);
            data.extend_from_slice(p.data());
        }
        let total: usize = rows.iter().sum();
        Tensor::from_op(
            "concat_rows",
            data,
            vec![total, cols],
            parts.to_vec(),
            Box::new(move |g, needs| {
                let mut offset = 0;
                rows.iter()
                    .zip(needs)
                    .map(|(&r, &need)| {
                        let part = need.then(|| g[offset * cols..(offset + r) * cols].to_vec());
                        offset += r;
                        part
                    })
                    .collect()
            }),
        )
    }

    /// Joins 2-D tensors with equal row counts side by side.
    pub fn concat_cols(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::invalid("concat_cols", "no inputs"))?;
        let (rows, _) = dims2("concat_cols", first)?;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (r, c) = dims2("concat_cols", p)?;
            if r != rows {
                return Err(TensorError::shape("concat_cols", first.shape(), p.shape()));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for (p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&p.data()[i * w..(i + 1) * w]);
            }
        }
        Tensor::from_op(
            "concat_cols",
            data,
            vec![rows, total],
            parts.to_vec(),
            Box::new(move |g, needs| {
                let mut offset = 0;
                widths
                    .iter()
                    .zip(needs)
                    .map(|(&w, &need)| {
                        let part = need.then(|| {
                            let mut out = Vec::with_capacity(rows * w);
                            for i in 0..rows {
                                out.extend_from_slice(&g[i * total + offset..i * total + offset + w]);
                            }
                            out
                        });
                        offset += w;
                        part
                    })
                    .collect()
            }),
        )
    }

    /// Columns `start..start + len` of a 2-D tensor.
    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Tensor> {
        let (r, c) = dims2("slice_cols", self)?;
        if len == 0 || start + len > c {
            return Err(TensorError::invalid(
                "slice_cols",
                format!("columns {start}..{} out of range for {c}", start + len),
            ));
        }
        let mut data = Vec::with_capacity(r * len);
        for row in self.data().chunks(c) {
            data.extend_from_slice(&row[start..start + len]);
        }
        Tensor::from_op(
            "slice_cols",
            data,
            vec![r, len],
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut out = vec![0.0; r * c];
                for i in 0..r {
                    out[i * c + start..i * c + start + len].copy_from_slice(&g[i * len..(i + 1) * len]);
                }
                vec![Some(out)]
            }),
        )
    }

    /// Sets positions where `mask` is true to `value`; no gradient flows there.
    pub fn masked_fill(&self, mask: &[bool], value: f32) -> Result<Tensor> {
        if mask.len() != self.numel() {
            return Err(TensorError::shape("masked_fill", self.shape(), &[mask.len()]));
        }
        let data = self
            .data()
            .iter()
            .zip(mask)
            .map(|(&v, &m)| if m { value } else { v })
            .collect();
        let mask = mask.to_vec();
        Tensor::from_op(
            "masked_fill",
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |g, _| {
                vec![Some(
                    g.iter().zip(&mask).map(|(&v, &m)| if m { 0.0 } else { v }).collect(),
                )]
            }),
        )
    }
}

fn transpose_raw(data: &[f32], r: usize, c: usize) -> Vec<f32> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = data[i * c + j];
        }
    }
    out
}
