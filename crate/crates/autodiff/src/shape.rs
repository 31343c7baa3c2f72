//! Shape arithmetic and the broadcasting rule.
//!
//! Broadcasting follows the usual trailing-axes convention: shapes are
//! aligned at their last axis, missing leading axes count as extent 1, and
//! an axis of extent 1 stretches to match the other operand. Any other
//! disagreement is a shape mismatch.

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Row-major contiguous strides.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![0; shape.len()];
    let mut acc = 1;
    for (i, &d) in shape.iter().enumerate().rev() {
        s[i] = acc;
        acc *= d;
    }
    s
}

pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank {
            a[i + a.len() - rank]
        } else {
            1
        };
        let db = if i + b.len() >= rank {
            b[i + b.len() - rank]
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

/// True when `from` broadcasts to exactly `to`.
pub fn broadcasts_to(from: &[usize], to: &[usize]) -> bool {
    broadcast_shape(from, to).is_some_and(|s| s == to)
}

/// Strides of `shape` when viewed inside the broadcast shape `out`:
/// stretched and missing axes get stride 0.
fn aligned_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let own = strides(shape);
    let offset = out.len() - shape.len();
    (0..out.len())
        .map(|i| {
            if i < offset {
                0
            } else {
                let j = i - offset;
                if shape[j] == 1 && out[i] != 1 {
                    0
                } else {
                    own[j]
                }
            }
        })
        .collect()
}

/// Visit every position of `out` in row-major order together with the
/// matching offsets into two operands with strides `sa` and `sb`.
fn walk2(out: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let rank = out.len();
    if rank == 0 {
        f(0, 0, 0);
        return;
    }
    if numel(out) == 0 {
        return;
    }
    let last = out[rank - 1];
    let (la, lb) = (sa[rank - 1], sb[rank - 1]);
    let mut idx = vec![0usize; rank - 1];
    let (mut oa, mut ob, mut pos) = (0usize, 0usize, 0usize);
    loop {
        for j in 0..last {
            f(pos, oa + j * la, ob + j * lb);
            pos += 1;
        }
        let mut ax = rank - 1;
        loop {
            if ax == 0 {
                return;
            }
            ax -= 1;
            idx[ax] += 1;
            oa += sa[ax];
            ob += sb[ax];
            if idx[ax] < out[ax] {
                break;
            }
            oa -= sa[ax] * out[ax];
            ob -= sb[ax] * out[ax];
            idx[ax] = 0;
        }
    }
}

pub fn binary<T: Copy>(
    a: &[T],
    ashape: &[usize],
    b: &[T],
    bshape: &[usize],
    out: &[usize],
    f: impl Fn(T, T) -> T,
) -> Vec<T> {
    if ashape == bshape {
        return a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect();
    }
    if b.len() == 1 {
        let y = b[0];
        return a.iter().map(|&x| f(x, y)).collect();
    }
    if a.len() == 1 {
        let x = a[0];
        return b.iter().map(|&y| f(x, y)).collect();
    }
    let n = numel(out);
    let sa = aligned_strides(ashape, out);
    let sb = aligned_strides(bshape, out);
    let mut res = Vec::with_capacity(n);
    walk2(out, &sa, &sb, |_, ia, ib| res.push(f(a[ia], b[ib])));
    res
}

/// Sum `x` (of shape `xshape`) down to `target`, which must broadcast to
/// `xshape`. Accumulation runs in row-major order of `x`.
pub fn sum_to<T: num_traits::Float>(x: &[T], xshape: &[usize], target: &[usize]) -> Vec<T> {
    let n = numel(target);
    if n == 1 {
        let mut acc = T::zero();
        for &v in x {
            acc = acc + v;
        }
        return vec![acc];
    }
    let mut out = vec![T::zero(); n];
    let st = aligned_strides(target, xshape);
    let sx = strides(xshape);
    walk2(xshape, &sx, &st, |_, ix, it| out[it] = out[it] + x[ix]);
    out
}

pub fn broadcast_to<T: Copy>(x: &[T], xshape: &[usize], target: &[usize]) -> Vec<T> {
    if x.len() == 1 {
        return vec![x[0]; numel(target)];
    }
    let sx = aligned_strides(xshape, target);
    let st = strides(target);
    let mut out = Vec::with_capacity(numel(target));
    walk2(target, &sx, &st, |_, ix, _| out.push(x[ix]));
    out
}

/// Split `shape` around `axis` into (outer, extent, inner) sizes.
pub fn around_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        numel(&shape[..axis]),
        shape[axis],
        numel(&shape[axis + 1..]),
    )
}
