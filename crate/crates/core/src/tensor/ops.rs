//! Value-level tensor kernels. These never touch a graph; [`super::Graph`]
//! composes them for the forward pass and for gradients.

use super::instrument;
use super::{Result, Tensor, TensorError};

pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i + a.len() >= n {
            a[i + a.len() - n]
        } else {
            1
        };
        let db = if i + b.len() >= n {
            b[i + b.len() - n]
        } else {
            1
        };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` when viewed inside the broadcast shape `out`
/// (zero along broadcast dimensions).
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let offset = out.len() - shape.len();
    let mut strides = vec![0; out.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        if shape[i] != 1 {
            strides[i + offset] = acc;
        }
        acc *= shape[i];
    }
    strides
}

fn is_suffix(short: &[usize], long: &[usize]) -> bool {
    short.len() <= long.len() && long[long.len() - short.len()..] == *short
}

/// Visits every multi-index of `out` in row-major order, passing the flat
/// offsets into two broadcast operands.
fn for_each_broadcast(out: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize)) {
    let nd = out.len();
    let total: usize = out.iter().product();
    if total == 0 {
        return;
    }
    let mut idx = vec![0usize; nd];
    let (mut oa, mut ob) = (0usize, 0usize);
    for _ in 0..total {
        f(oa, ob);
        for d in (0..nd).rev() {
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < out[d] {
                break;
            }
            oa -= sa[d] * out[d];
            ob -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

pub fn broadcast_binary(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    let out_shape =
        broadcast_shape(a.shape(), b.shape()).ok_or_else(|| TensorError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        })?;
    let (ad, bd) = (a.data(), b.data());
    let data: Vec<f64> = if a.shape() == b.shape() {
        ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect()
    } else if bd.len() == 1 && a.shape() == out_shape.as_slice() {
        let y = bd[0];
        ad.iter().map(|&x| f(x, y)).collect()
    } else if ad.len() == 1 && b.shape() == out_shape.as_slice() {
        let x = ad[0];
        bd.iter().map(|&y| f(x, y)).collect()
    } else if a.shape() == out_shape.as_slice() && is_suffix(b.shape(), a.shape()) {
        let m = bd.len();
        ad.iter()
            .enumerate()
            .map(|(i, &x)| f(x, bd[i % m]))
            .collect()
    } else if b.shape() == out_shape.as_slice() && is_suffix(a.shape(), b.shape()) {
        let m = ad.len();
        bd.iter()
            .enumerate()
            .map(|(i, &y)| f(ad[i % m], y))
            .collect()
    } else {
        let sa = broadcast_strides(a.shape(), &out_shape);
        let sb = broadcast_strides(b.shape(), &out_shape);
        let mut v = Vec::with_capacity(out_shape.iter().product());
        for_each_broadcast(&out_shape, &sa, &sb, |ia, ib| v.push(f(ad[ia], bd[ib])));
        v
    };
    Tensor::new(out_shape, data)
}

/// Sums `t` down to `target`, undoing a trailing-dimension broadcast.
pub fn reduce_to_shape(t: &Tensor, target: &[usize]) -> Tensor {
    if t.shape() == target {
        return t.clone();
    }
    let n: usize = target.iter().product();
    let mut acc = vec![0.0; n];
    if is_suffix(target, t.shape()) {
        for (i, &x) in t.data().iter().enumerate() {
            acc[i % n] += x;
        }
    } else {
        let st = broadcast_strides(target, t.shape());
        let zero = vec![0; t.ndim()];
        let data = t.data();
        let mut k = 0;
        for_each_broadcast(t.shape(), &st, &zero, |it, _| {
            acc[it] += data[k];
            k += 1;
        });
    }
    Tensor::new(target.to_vec(), acc).expect("target shape")
}

/// Batched matrix product with broadcast batch dimensions. Records
/// `batch * m * k * n` mult-adds with the instrumentation counter.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let out = matmul_uncounted(a, b)?;
    let (m, k) = (a.shape()[a.ndim() - 2], a.shape()[a.ndim() - 1]);
    let n = b.shape()[b.ndim() - 1];
    let batch = out.numel() / (m * n).max(1);
    instrument::record((batch * m * k * n) as u64);
    Ok(out)
}

pub(crate) fn matmul_uncounted(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mismatch = || TensorError::ShapeMismatch {
        op: "matmul",
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    };
    if a.ndim() < 2 || b.ndim() < 2 {
        return Err(mismatch());
    }
    let (m, k) = (a.shape()[a.ndim() - 2], a.shape()[a.ndim() - 1]);
    let (k2, n) = (b.shape()[b.ndim() - 2], b.shape()[b.ndim() - 1]);
    if k != k2 {
        return Err(mismatch());
    }
    let a_batch = &a.shape()[..a.ndim() - 2];
    let b_batch = &b.shape()[..b.ndim() - 2];
    let batch_shape = broadcast_shape(a_batch, b_batch).ok_or_else(mismatch)?;
    let batch: usize = batch_shape.iter().product();
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; batch * m * n];

    // Fold a's batch into rows when b is shared: one large product.
    if b_batch.iter().product::<usize>() == 1 && a_batch == batch_shape.as_slice() {
        gemm(ad, bd, &mut out, batch * m, k, n);
    } else {
        let sa = broadcast_strides(a_batch, &batch_shape);
        let sb = broadcast_strides(b_batch, &batch_shape);
        let mut bi = 0;
        for_each_broadcast(&batch_shape, &sa, &sb, |ia, ib| {
            gemm(
                &ad[ia * m * k..(ia + 1) * m * k],
                &bd[ib * k * n..(ib + 1) * k * n],
                &mut out[bi * m * n..(bi + 1) * m * n],
                m,
                k,
                n,
            );
            bi += 1;
        });
    }
    let mut shape = batch_shape;
    shape.push(m);
    shape.push(n);
    Tensor::new(shape, out)
}

fn gemm(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let x = a[i * k + p];
            if x == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &y) in row.iter_mut().zip(brow) {
                *o += x * y;
            }
        }
    }
}

pub fn transpose_last2(t: &Tensor) -> Tensor {
    let nd = t.ndim();
    assert!(nd >= 2, "transpose_last2 needs at least 2 dims");
    let (m, n) = (t.shape()[nd - 2], t.shape()[nd - 1]);
    let batch = t.numel() / (m * n).max(1);
    let d = t.data();
    let mut out = vec![0.0; t.numel()];
    for bi in 0..batch {
        let base = bi * m * n;
        for i in 0..m {
            for j in 0..n {
                out[base + j * m + i] = d[base + i * n + j];
            }
        }
    }
    let mut shape = t.shape().to_vec();
    shape.swap(nd - 2, nd - 1);
    Tensor::new(shape, out).expect("same numel")
}

/// Sum over the last axis, keeping it as size 1.
pub fn sum_last(t: &Tensor) -> Tensor {
    let nd = t.ndim().max(1);
    let n = *t.shape().last().unwrap_or(&1);
    let rows = t.numel() / n.max(1);
    let out: Vec<f64> = (0..rows)
        .map(|r| t.data()[r * n..(r + 1) * n].iter().sum())
        .collect();
    let mut shape = if t.ndim() == 0 {
        vec![1]
    } else {
        t.shape().to_vec()
    };
    shape[nd - 1] = 1;
    Tensor::new(shape, out).expect("rows")
}

fn outer_inner(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Drops `axis` by taking position `index` along it.
pub fn select(t: &Tensor, axis: usize, index: usize) -> Result<Tensor> {
    if axis >= t.ndim() || index >= t.shape()[axis] {
        return Err(TensorError::Invalid {
            op: "select",
            msg: format!("index {index} on axis {axis} of shape {:?}", t.shape()),
        });
    }
    let (outer, len, inner) = outer_inner(t.shape(), axis);
    let d = t.data();
    let mut out = Vec::with_capacity(outer * inner);
    for o in 0..outer {
        let base = (o * len + index) * inner;
        out.extend_from_slice(&d[base..base + inner]);
    }
    let mut shape = t.shape().to_vec();
    shape.remove(axis);
    Tensor::new(shape, out)
}

/// Stacks equally-shaped tensors along a new `axis`.
pub fn stack(ts: &[Tensor], axis: usize) -> Result<Tensor> {
    let first = ts.first().ok_or_else(|| TensorError::Invalid {
        op: "stack",
        msg: "no inputs".into(),
    })?;
    if axis > first.ndim() {
        return Err(TensorError::Invalid {
            op: "stack",
            msg: format!("axis {axis} for rank {}", first.ndim()),
        });
    }
    for t in ts {
        if t.shape() != first.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "stack",
                lhs: first.shape().to_vec(),
                rhs: t.shape().to_vec(),
            });
        }
    }
    let outer: usize = first.shape()[..axis].iter().product();
    let inner: usize = first.shape()[axis..].iter().product();
    let mut out = Vec::with_capacity(outer * inner * ts.len());
    for o in 0..outer {
        for t in ts {
            out.extend_from_slice(&t.data()[o * inner..(o + 1) * inner]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape.insert(axis, ts.len());
    Tensor::new(shape, out)
}

pub fn slice_last(t: &Tensor, start: usize, len: usize) -> Result<Tensor> {
    let n = *t.shape().last().unwrap_or(&0);
    if start + len > n {
        return Err(TensorError::Invalid {
            op: "slice_last",
            msg: format!("range {start}..{} of last dim {n}", start + len),
        });
    }
    let rows = t.numel() / n.max(1);
    let mut out = Vec::with_capacity(rows * len);
    for r in 0..rows {
        out.extend_from_slice(&t.data()[r * n + start..r * n + start + len]);
    }
    let mut shape = t.shape().to_vec();
    *shape.last_mut().unwrap() = len;
    Tensor::new(shape, out)
}

/// Concatenates along the last axis; leading dimensions must agree.
pub fn concat_last(ts: &[Tensor]) -> Result<Tensor> {
    let first = ts.first().ok_or_else(|| TensorError::Invalid {
        op: "concat_last",
        msg: "no inputs".into(),
    })?;
    let lead = &first.shape()[..first.ndim() - 1];
    for t in ts {
        if &t.shape()[..t.ndim() - 1] != lead {
            return Err(TensorError::ShapeMismatch {
                op: "concat_last",
                lhs: first.shape().to_vec(),
                rhs: t.shape().to_vec(),
            });
        }
    }
    let rows: usize = lead.iter().product();
    let widths: Vec<usize> = ts.iter().map(|t| *t.shape().last().unwrap()).collect();
    let total: usize = widths.iter().sum();
    let mut out = Vec::with_capacity(rows * total);
    for r in 0..rows {
        for (t, &w) in ts.iter().zip(&widths) {
            out.extend_from_slice(&t.data()[r * w..(r + 1) * w]);
        }
    }
    let mut shape = lead.to_vec();
    shape.push(total);
    Tensor::new(shape, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shape(&[2, 3], &[3]), Some(vec![2, 3]));
        assert_eq!(broadcast_shape(&[2, 1], &[1, 4]), Some(vec![2, 4]));
        assert_eq!(broadcast_shape(&[2, 3], &[2]), None);
        assert_eq!(broadcast_shape(&[], &[5]), Some(vec![5]));
    }

    #[test]
    fn general_broadcast_matches_tiling() {
        let a = t(&[2, 1, 3], &[1., 2., 3., 4., 5., 6.]);
        let b = t(&[4, 1], &[10., 20., 30., 40.]);
        let r = broadcast_binary("add", &a, &b, |x, y| x + y).unwrap();
        assert_eq!(r.shape(), &[2, 4, 3]);
        for i in 0..2 {
            for j in 0..4 {
                for k in 0..3 {
                    let want = a.data()[i * 3 + k] + b.data()[j];
                    assert_eq!(r.data()[(i * 4 + j) * 3 + k], want);
                }
            }
        }
        let back = reduce_to_shape(&r, &[4, 1]);
        assert_eq!(back.shape(), &[4, 1]);
        assert_eq!(back.data()[0], 6.0 * 10.0 + 21.0);
    }

    #[test]
    fn matmul_identity_and_dot() {
        let eye = t(&[2, 2], &[1., 0., 0., 1.]);
        let v = t(&[2, 1], &[5., 7.]);
        assert_eq!(matmul(&eye, &v).unwrap().data(), &[5., 7.]);
        let r = t(&[1, 2], &[1., 2.]);
        let c = t(&[2, 1], &[3., 4.]);
        assert_eq!(matmul(&r, &c).unwrap().data(), &[11.]);
        assert!(matmul(&r, &r).is_err());
    }

    #[test]
    fn batched_matmul_broadcasts_batch() {
        let a = t(&[2, 1, 2], &[1., 2., 3., 4.]);
        let b = t(&[2, 1], &[1., 1.]);
        let r = matmul(&a, &b).unwrap();
        assert_eq!(r.shape(), &[2, 1, 1]);
        assert_eq!(r.data(), &[3., 7.]);
        let bb = t(&[2, 2, 1], &[1., 0., 0., 1.]);
        let r = matmul(&a, &bb).unwrap();
        assert_eq!(r.data(), &[1., 4.]);
    }

    #[test]
    fn select_stack_roundtrip() {
        let x = Tensor::new(vec![2, 3, 2], (0..12).map(|v| v as f64).collect()).unwrap();
        let parts: Vec<Tensor> = (0..3).map(|i| select(&x, 1, i).unwrap()).collect();
        assert_eq!(parts[1].data(), &[2., 3., 8., 9.]);
        assert_eq!(stack(&parts, 1).unwrap(), x);
    }

    #[test]
    fn slice_concat_roundtrip() {
        let x = Tensor::new(vec![2, 5], (0..10).map(|v| v as f64).collect()).unwrap();
        let a = slice_last(&x, 0, 2).unwrap();
        let b = slice_last(&x, 2, 3).unwrap();
        assert_eq!(concat_last(&[a, b]).unwrap(), x);
    }
}
