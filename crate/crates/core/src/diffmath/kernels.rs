//! Numeric kernels behind the graph primitives. Layouts are row-major with
//! channels last.

use crate::scalar::Real;

use super::graph::SampleGrid;

pub(crate) fn matmul<S: Real>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    let mut out = vec![S::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == S::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                row[j] += av * brow[j];
            }
        }
    }
    out
}

/// `da += dy · bᵀ`
pub(crate) fn matmul_grad_a<S: Real>(
    dy: &[S],
    b: &[S],
    m: usize,
    k: usize,
    n: usize,
    da: &mut [S],
) {
    for i in 0..m {
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let g = &dy[i * n..(i + 1) * n];
            let mut acc = S::zero();
            for j in 0..n {
                acc += g[j] * brow[j];
            }
            da[i * k + p] += acc;
        }
    }
}

/// `db += aᵀ · dy`
pub(crate) fn matmul_grad_b<S: Real>(
    dy: &[S],
    a: &[S],
    m: usize,
    k: usize,
    n: usize,
    db: &mut [S],
) {
    for i in 0..m {
        let g = &dy[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == S::zero() {
                continue;
            }
            let drow = &mut db[p * n..(p + 1) * n];
            for j in 0..n {
                drow[j] += av * g[j];
            }
        }
    }
}

#[derive(Clone, Copy)]
pub(crate) struct ConvDims {
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub kh: usize,
    pub kw: usize,
    pub cout: usize,
}

impl ConvDims {
    pub fn out_h(&self) -> usize {
        self.h - self.kh + 1
    }
    pub fn out_w(&self) -> usize {
        self.w - self.kw + 1
    }
}

pub(crate) fn conv2d<S: Real>(x: &[S], k: &[S], bias: &[S], d: ConvDims) -> Vec<S> {
    let (oh, ow) = (d.out_h(), d.out_w());
    let mut out = Vec::with_capacity(oh * ow * d.cout);
    for _ in 0..oh * ow {
        out.extend_from_slice(bias);
    }
    for oy in 0..oh {
        for ox in 0..ow {
            let o = &mut out[(oy * ow + ox) * d.cout..(oy * ow + ox + 1) * d.cout];
            for ky in 0..d.kh {
                for kx in 0..d.kw {
                    let xi = ((oy + ky) * d.w + ox + kx) * d.cin;
                    let ki = (ky * d.kw + kx) * d.cin * d.cout;
                    for ci in 0..d.cin {
                        let xv = x[xi + ci];
                        if xv == S::zero() {
                            continue;
                        }
                        let krow = &k[ki + ci * d.cout..ki + (ci + 1) * d.cout];
                        for co in 0..d.cout {
                            o[co] += xv * krow[co];
                        }
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn conv2d_grad_input<S: Real>(dy: &[S], k: &[S], d: ConvDims, dx: &mut [S]) {
    let (oh, ow) = (d.out_h(), d.out_w());
    for oy in 0..oh {
        for ox in 0..ow {
            let g = &dy[(oy * ow + ox) * d.cout..(oy * ow + ox + 1) * d.cout];
            for ky in 0..d.kh {
                for kx in 0..d.kw {
                    let xi = ((oy + ky) * d.w + ox + kx) * d.cin;
                    let ki = (ky * d.kw + kx) * d.cin * d.cout;
                    for ci in 0..d.cin {
                        let krow = &k[ki + ci * d.cout..ki + (ci + 1) * d.cout];
                        let mut acc = S::zero();
                        for co in 0..d.cout {
                            acc += g[co] * krow[co];
                        }
                        dx[xi + ci] += acc;
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_grad_kernel<S: Real>(dy: &[S], x: &[S], d: ConvDims, dk: &mut [S]) {
    let (oh, ow) = (d.out_h(), d.out_w());
    for oy in 0..oh {
        for ox in 0..ow {
            let g = &dy[(oy * ow + ox) * d.cout..(oy * ow + ox + 1) * d.cout];
            for ky in 0..d.kh {
                for kx in 0..d.kw {
                    let xi = ((oy + ky) * d.w + ox + kx) * d.cin;
                    let ki = (ky * d.kw + kx) * d.cin * d.cout;
                    for ci in 0..d.cin {
                        let xv = x[xi + ci];
                        if xv == S::zero() {
                            continue;
                        }
                        let drow = &mut dk[ki + ci * d.cout..ki + (ci + 1) * d.cout];
                        for co in 0..d.cout {
                            drow[co] += xv * g[co];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_grad_bias<S: Real>(dy: &[S], cout: usize, db: &mut [S]) {
    for chunk in dy.chunks_exact(cout) {
        for (b, &g) in db.iter_mut().zip(chunk) {
            *b += g;
        }
    }
}

/// Flat input index of the maximum of each 2×2 window; ties go to the first
/// element in row-major window order.
pub(crate) fn maxpool2_argmax<S: Real>(x: &[S], h: usize, w: usize, c: usize) -> Vec<usize> {
    let (oh, ow) = (h / 2, w / 2);
    let mut idx = Vec::with_capacity(oh * ow * c);
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let mut best = ((2 * oy) * w + 2 * ox) * c + ch;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = ((2 * oy + dy) * w + 2 * ox + dx) * c + ch;
                    if x[i] > x[best] {
                        best = i;
                    }
                }
                idx.push(best);
            }
        }
    }
    idx
}

pub(crate) fn log_softmax<S: Real>(x: &[S]) -> Vec<S> {
    let max = x.iter().fold(S::neg_infinity(), |m, &v| m.max(v));
    let lse = max + x.iter().map(|&v| (v - max).exp()).sum::<S>().ln();
    x.iter().map(|&v| v - lse).collect()
}

/// The four taps of a bilinear sample at `(y, x)` on an `h × w` grid as
/// `(flat pixel index or None when outside, weight)`.
#[inline]
pub(crate) fn bilinear_taps<S: Real>(y: S, x: S, h: usize, w: usize) -> [(Option<usize>, S); 4] {
    let y0 = y.floor();
    let x0 = x.floor();
    let fy = y - y0;
    let fx = x - x0;
    let one = S::one();
    let (iy, ix) = (
        y0.to_i64().unwrap_or(i64::MIN / 2),
        x0.to_i64().unwrap_or(i64::MIN / 2),
    );
    let at = |r: i64, c: i64| -> Option<usize> {
        if r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w {
            Some(r as usize * w + c as usize)
        } else {
            None
        }
    };
    [
        (at(iy, ix), (one - fy) * (one - fx)),
        (at(iy, ix + 1), (one - fy) * fx),
        (at(iy + 1, ix), fy * (one - fx)),
        (at(iy + 1, ix + 1), fy * fx),
    ]
}

pub(crate) fn bilinear_sample<S: Real>(
    x: &[S],
    h: usize,
    w: usize,
    c: usize,
    grid: &SampleGrid<S>,
) -> Vec<S> {
    let mut out = vec![S::zero(); grid.coords.len() * c];
    for (p, &(sy, sx)) in grid.coords.iter().enumerate() {
        let o = &mut out[p * c..(p + 1) * c];
        for (tap, wt) in bilinear_taps(sy, sx, h, w) {
            if wt == S::zero() {
                continue;
            }
            match tap {
                Some(i) => {
                    for ch in 0..c {
                        o[ch] += wt * x[i * c + ch];
                    }
                }
                None => {
                    for v in o.iter_mut() {
                        *v += wt * grid.fill;
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn bilinear_sample_grad<S: Real>(
    dy: &[S],
    h: usize,
    w: usize,
    c: usize,
    grid: &SampleGrid<S>,
    dx: &mut [S],
) {
    for (p, &(sy, sx)) in grid.coords.iter().enumerate() {
        let g = &dy[p * c..(p + 1) * c];
        for (tap, wt) in bilinear_taps(sy, sx, h, w) {
            if let Some(i) = tap {
                if wt == S::zero() {
                    continue;
                }
                for ch in 0..c {
                    dx[i * c + ch] += wt * g[ch];
                }
            }
        }
    }
}
