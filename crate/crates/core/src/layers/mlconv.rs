//! Multilinear convolution: each of the `N` filters projects the `d×d×C`
//! input patch through R rank-one factor triplets instead of a dense kernel.
//!
//! Two mathematically equivalent evaluation paths are provided:
//!
//! * **Separable** — project along channels first (`1×1×C`, producing `N·R`
//!   maps), then per-map `d×1` vertical and `1×d` horizontal projections,
//!   then sum over the rank index. Cost scales with `R(C + 2d)` per output.
//! * **Reconstruct** — assemble the dense kernels from their factors and run
//!   a standard convolution. Cost is one kernel build plus `d²C` per output,
//!   nearly independent of `R`.
//!
//! The scheme choice changes rounding, never the mathematical result.

use rayon::prelude::*;

use super::conv::{conv2d_backward_raw, conv2d_raw, dims4};
use crate::matmul::{mm, mm_a_bt, mm_at_b};
use crate::scalar::Scalar;
use crate::tensor::{KruskalFactors, ShapeError, Tensor};

/// Evaluation strategy for a multilinear convolution layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ComputeScheme {
    /// Three consecutive separable convolutions (efficient for small R).
    Separable,
    /// Dense kernel reconstruction followed by standard convolution
    /// (scales well when R grows).
    Reconstruct,
}

impl ComputeScheme {
    /// Config-file encoding: `1` = separable, `2` = reconstruct.
    pub fn code(self) -> u8 {
        match self {
            ComputeScheme::Separable => 1,
            ComputeScheme::Reconstruct => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(ComputeScheme::Separable),
            2 => Some(ComputeScheme::Reconstruct),
            _ => None,
        }
    }
}

/// A bank of `N` rank-R multilinear filters sharing `(d, C, R)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MLconvBank<T> {
    pub filters: Vec<KruskalFactors<T>>,
    pub bias: Tensor<T>,
    pub scheme: ComputeScheme,
}

/// Separable-path intermediates kept for the backward pass.
#[derive(Debug, Clone)]
pub struct MlSeparableCache<T> {
    /// After the channel projection: `(B, H, W, N·R)`.
    pub channel_maps: Tensor<T>,
    /// After the vertical projection: `(B, H, W, N·R)`.
    pub vertical_maps: Tensor<T>,
}

impl<T: Scalar> MLconvBank<T> {
    pub fn new(
        filters: Vec<KruskalFactors<T>>,
        bias: Tensor<T>,
        scheme: ComputeScheme,
    ) -> Result<Self, ShapeError> {
        let first = filters.first().ok_or_else(|| {
            ShapeError::DimMismatch("a multilinear bank needs at least one filter".into())
        })?;
        let dims = first.dims();
        let rank = first.rank();
        if dims[0] != dims[1] {
            return Err(ShapeError::DimMismatch(
                "multilinear filters must have square spatial extent".into(),
            ));
        }
        for f in &filters {
            if f.dims() != dims || f.rank() != rank {
                return Err(ShapeError::DimMismatch(
                    "all filters in a bank must share (d, C, R)".into(),
                ));
            }
        }
        if bias.shape() != [filters.len()] {
            return Err(ShapeError::DimMismatch(format!(
                "bias length {:?} does not match filter count {}",
                bias.shape(),
                filters.len()
            )));
        }
        Ok(MLconvBank {
            filters,
            bias,
            scheme,
        })
    }

    pub fn kernel_size(&self) -> usize {
        self.filters[0].dims()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.filters[0].dims()[2]
    }

    pub fn out_channels(&self) -> usize {
        self.filters.len()
    }

    pub fn rank(&self) -> usize {
        self.filters[0].rank()
    }

    /// Pack one factor mode of every filter into a `(I_k) × (N·R)` matrix,
    /// column `n·R + r` holding filter n's rank-r vector.
    fn pack_mode(&self, mode: usize) -> Vec<T> {
        let ik = self.filters[0].dims()[mode];
        let n = self.filters.len();
        let r = self.rank();
        let mut out = vec![T::zero(); ik * n * r];
        for (fi, f) in self.filters.iter().enumerate() {
            let fd = f.factor(mode).data();
            for i in 0..ik {
                for rr in 0..r {
                    out[i * n * r + fi * r + rr] = fd[i * r + rr];
                }
            }
        }
        out
    }

    /// Dense `(d, d, C, N)` kernel bank assembled from the factors.
    pub fn reconstruct_kernels(&self) -> Tensor<T> {
        let [d, _, c] = self.filters[0].dims();
        let n = self.filters.len();
        let mut w = Tensor::zeros(&[d, d, c, n]);
        let wd = w.data_mut();
        for (fi, f) in self.filters.iter().enumerate() {
            let dense = f.reconstruct();
            for (idx, &v) in dense.data().iter().enumerate() {
                wd[idx * n + fi] = v;
            }
        }
        w
    }

    pub fn forward(&self, x: &Tensor<T>) -> (Tensor<T>, Option<MlSeparableCache<T>>) {
        match self.scheme {
            ComputeScheme::Separable => {
                let (y, cache) = self.forward_separable(x);
                (y, Some(cache))
            }
            ComputeScheme::Reconstruct => {
                let w = self.reconstruct_kernels();
                (conv2d_raw(x, &w, Some(self.bias.data())), None)
            }
        }
    }

    /// Channel projection, vertical projection, horizontal projection, then
    /// the sum over the rank index plus bias.
    fn forward_separable(&self, x: &Tensor<T>) -> (Tensor<T>, MlSeparableCache<T>) {
        let (b, h, w, c) = dims4(x);
        assert_eq!(c, self.in_channels(), "input channel mismatch");
        let n = self.out_channels();
        let r = self.rank();
        let d = self.kernel_size();
        let nr = n * r;

        // Mode-3: one 1×1×C projection per (filter, rank) pair.
        let w3 = self.pack_mode(2); // C × NR
        let u = mm(x.data(), &w3, b * h * w, c, nr);
        let u = Tensor::from_vec(&[b, h, w, nr], u).expect("channel maps");

        // Mode-1: per-map d×1 vertical projection.
        let w1 = self.pack_mode(0); // d × NR
        let v = depthwise_vertical(&u, &w1, d);

        // Mode-2: per-map 1×d horizontal projection.
        let w2 = self.pack_mode(1); // d × NR
        let s = depthwise_horizontal(&v, &w2, d);

        // Sum the R projections per filter and add bias.
        let mut y = Tensor::zeros(&[b, h, w, n]);
        let bias = self.bias.data();
        y.data_mut()
            .par_chunks_mut(n)
            .zip(s.data().par_chunks(nr))
            .for_each(|(yrow, srow)| {
                for fi in 0..n {
                    let mut acc = bias[fi];
                    for rr in 0..r {
                        acc += srow[fi * r + rr];
                    }
                    yrow[fi] = acc;
                }
            });
        (
            y,
            MlSeparableCache {
                channel_maps: u,
                vertical_maps: v,
            },
        )
    }

    /// Gradients under either scheme: `(dx, per-filter factor grads, dbias)`.
    /// Factor grads come back as `[w1, w2, w3]` per filter, in filter order.
    pub fn backward(
        &self,
        x: &Tensor<T>,
        cache: Option<&MlSeparableCache<T>>,
        dy: &Tensor<T>,
    ) -> (Tensor<T>, Vec<[Tensor<T>; 3]>, Tensor<T>) {
        match self.scheme {
            ComputeScheme::Separable => {
                self.backward_separable(x, cache.expect("separable cache"), dy)
            }
            ComputeScheme::Reconstruct => self.backward_reconstruct(x, dy),
        }
    }

    fn backward_separable(
        &self,
        x: &Tensor<T>,
        cache: &MlSeparableCache<T>,
        dy: &Tensor<T>,
    ) -> (Tensor<T>, Vec<[Tensor<T>; 3]>, Tensor<T>) {
        let (b, h, w, c) = dims4(x);
        let n = self.out_channels();
        let r = self.rank();
        let d = self.kernel_size();
        let nr = n * r;

        // Bias gradient and broadcast of dy over the rank index.
        let mut dbias = Tensor::zeros(&[n]);
        {
            let db = dbias.data_mut();
            for row in dy.data().chunks_exact(n) {
                for (dv, &g) in db.iter_mut().zip(row) {
                    *dv += g;
                }
            }
        }
        let mut ds = Tensor::zeros(&[b, h, w, nr]);
        ds.data_mut()
            .par_chunks_mut(nr)
            .zip(dy.data().par_chunks(n))
            .for_each(|(drow, yrow)| {
                for fi in 0..n {
                    for rr in 0..r {
                        drow[fi * r + rr] = yrow[fi];
                    }
                }
            });

        let w1 = self.pack_mode(0);
        let w2 = self.pack_mode(1);
        let w3 = self.pack_mode(2);

        let (dv, dw2) = depthwise_horizontal_backward(&cache.vertical_maps, &w2, d, &ds);
        let (du, dw1) = depthwise_vertical_backward(&cache.channel_maps, &w1, d, &dv);

        // Mode-3 stage: plain matrix calculus on the pointwise projection.
        let rows = b * h * w;
        let dw3 = mm_at_b(x.data(), du.data(), rows, c, nr);
        let dx = mm_a_bt(du.data(), &w3, rows, nr, c);
        let dx = Tensor::from_vec(&[b, h, w, c], dx).expect("dx shape");

        let grads = self.unpack_factor_grads(&dw1, &dw2, &dw3, d, c);
        (dx, grads, dbias)
    }

    fn backward_reconstruct(
        &self,
        x: &Tensor<T>,
        dy: &Tensor<T>,
    ) -> (Tensor<T>, Vec<[Tensor<T>; 3]>, Tensor<T>) {
        let dense = self.reconstruct_kernels();
        let (dx, dw, dbias) = conv2d_backward_raw(x, &dense, dy);
        let [d, _, c] = self.filters[0].dims();
        let n = self.out_channels();
        let r = self.rank();
        // Chain the dense-kernel gradient onto each rank-one factor.
        let grads: Vec<[Tensor<T>; 3]> = self
            .filters
            .iter()
            .enumerate()
            .map(|(fi, f)| {
                let mut g1 = Tensor::zeros(&[d, r]);
                let mut g2 = Tensor::zeros(&[d, r]);
                let mut g3 = Tensor::zeros(&[c, r]);
                let (f1, f2, f3) = (f.factor(0).data(), f.factor(1).data(), f.factor(2).data());
                for i in 0..d {
                    for j in 0..d {
                        for cc in 0..c {
                            let g = dw.data()[((i * d + j) * c + cc) * n + fi];
                            for rr in 0..r {
                                g1.data_mut()[i * r + rr] +=
                                    g * f2[j * r + rr] * f3[cc * r + rr];
                                g2.data_mut()[j * r + rr] +=
                                    g * f1[i * r + rr] * f3[cc * r + rr];
                                g3.data_mut()[cc * r + rr] +=
                                    g * f1[i * r + rr] * f2[j * r + rr];
                            }
                        }
                    }
                }
                [g1, g2, g3]
            })
            .collect();
        (dx, grads, dbias)
    }

    fn unpack_factor_grads(
        &self,
        dw1: &[T],
        dw2: &[T],
        dw3: &[T],
        d: usize,
        c: usize,
    ) -> Vec<[Tensor<T>; 3]> {
        let n = self.out_channels();
        let r = self.rank();
        (0..n)
            .map(|fi| {
                let unpack = |packed: &[T], ik: usize| {
                    let mut g = Tensor::zeros(&[ik, r]);
                    for i in 0..ik {
                        for rr in 0..r {
                            g.data_mut()[i * r + rr] = packed[i * n * r + fi * r + rr];
                        }
                    }
                    g
                };
                [unpack(dw1, d), unpack(dw2, d), unpack(dw3, c)]
            })
            .collect()
    }
}

/// Per-map `d×1` projection along the height axis; `w1` is `d × M` for `M`
/// independent maps. Padding matches the convolution convention.
fn depthwise_vertical<T: Scalar>(u: &Tensor<T>, w1: &[T], d: usize) -> Tensor<T> {
    let (b, h, w, m) = dims4(u);
    let ph = (d - 1) / 2;
    let mut out = Tensor::zeros(&[b, h, w, m]);
    let row_len = w * m;
    let ud = u.data();
    out.data_mut()
        .par_chunks_mut(row_len)
        .enumerate()
        .for_each(|(row_idx, orow)| {
            let (bb, y) = (row_idx / h, row_idx % h);
            for di in 0..d {
                let sy = y as isize + di as isize - ph as isize;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                let src = (bb * h + sy as usize) * row_len;
                let srow = &ud[src..src + row_len];
                let wrow = &w1[di * m..(di + 1) * m];
                for x in 0..w {
                    let o = &mut orow[x * m..(x + 1) * m];
                    let s = &srow[x * m..(x + 1) * m];
                    for ((ov, &sv), &wv) in o.iter_mut().zip(s).zip(wrow) {
                        *ov += sv * wv;
                    }
                }
            }
        });
    out
}

/// Per-map `1×d` projection along the width axis.
fn depthwise_horizontal<T: Scalar>(v: &Tensor<T>, w2: &[T], d: usize) -> Tensor<T> {
    let (b, h, w, m) = dims4(v);
    let pw = (d - 1) / 2;
    let mut out = Tensor::zeros(&[b, h, w, m]);
    let row_len = w * m;
    let vd = v.data();
    out.data_mut()
        .par_chunks_mut(row_len)
        .enumerate()
        .for_each(|(row_idx, orow)| {
            let srow = &vd[row_idx * row_len..(row_idx + 1) * row_len];
            for dj in 0..d {
                let wrow = &w2[dj * m..(dj + 1) * m];
                for x in 0..w {
                    let sx = x as isize + dj as isize - pw as isize;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    let o = &mut orow[x * m..(x + 1) * m];
                    let s = &srow[sx as usize * m..(sx as usize + 1) * m];
                    for ((ov, &sv), &wv) in o.iter_mut().zip(s).zip(wrow) {
                        *ov += sv * wv;
                    }
                }
            }
        });
    out
}

/// Transpose of [`depthwise_vertical`]: input gradient plus weight gradient.
fn depthwise_vertical_backward<T: Scalar>(
    u: &Tensor<T>,
    w1: &[T],
    d: usize,
    dv: &Tensor<T>,
) -> (Tensor<T>, Vec<T>) {
    let (b, h, w, m) = dims4(u);
    let ph = (d - 1) / 2;
    let row_len = w * m;
    let ud = u.data();
    let dvd = dv.data();

    let mut du = Tensor::zeros(&[b, h, w, m]);
    du.data_mut()
        .par_chunks_mut(row_len)
        .enumerate()
        .for_each(|(row_idx, orow)| {
            let (bb, sy) = (row_idx / h, row_idx % h);
            for di in 0..d {
                // This source row feeds output row y = sy − di + ph.
                let y = sy as isize - di as isize + ph as isize;
                if y < 0 || y >= h as isize {
                    continue;
                }
                let src = (bb * h + y as usize) * row_len;
                let srow = &dvd[src..src + row_len];
                let wrow = &w1[di * m..(di + 1) * m];
                for x in 0..w {
                    let o = &mut orow[x * m..(x + 1) * m];
                    let s = &srow[x * m..(x + 1) * m];
                    for ((ov, &sv), &wv) in o.iter_mut().zip(s).zip(wrow) {
                        *ov += sv * wv;
                    }
                }
            }
        });

    // Weight gradient: fixed-order reduction over all rows.
    let mut dw1 = vec![T::zero(); d * m];
    for bb in 0..b {
        for y in 0..h {
            let drow = &dvd[(bb * h + y) * row_len..(bb * h + y + 1) * row_len];
            for di in 0..d {
                let sy = y as isize + di as isize - ph as isize;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                let srow = &ud[(bb * h + sy as usize) * row_len..(bb * h + sy as usize + 1) * row_len];
                let wacc = &mut dw1[di * m..(di + 1) * m];
                for x in 0..w {
                    let dvs = &drow[x * m..(x + 1) * m];
                    let us = &srow[x * m..(x + 1) * m];
                    for ((wv, &g), &uv) in wacc.iter_mut().zip(dvs).zip(us) {
                        *wv += g * uv;
                    }
                }
            }
        }
    }
    (du, dw1)
}

/// Transpose of [`depthwise_horizontal`].
fn depthwise_horizontal_backward<T: Scalar>(
    v: &Tensor<T>,
    w2: &[T],
    d: usize,
    ds: &Tensor<T>,
) -> (Tensor<T>, Vec<T>) {
    let (b, h, w, m) = dims4(v);
    let pw = (d - 1) / 2;
    let row_len = w * m;
    let vd = v.data();
    let dsd = ds.data();

    let mut dv = Tensor::zeros(&[b, h, w, m]);
    dv.data_mut()
        .par_chunks_mut(row_len)
        .enumerate()
        .for_each(|(row_idx, orow)| {
            let drow = &dsd[row_idx * row_len..(row_idx + 1) * row_len];
            for dj in 0..d {
                let wrow = &w2[dj * m..(dj + 1) * m];
                for sx in 0..w {
                    let x = sx as isize - dj as isize + pw as isize;
                    if x < 0 || x >= w as isize {
                        continue;
                    }
                    let o = &mut orow[sx * m..(sx + 1) * m];
                    let s = &drow[x as usize * m..(x as usize + 1) * m];
                    for ((ov, &sv), &wv) in o.iter_mut().zip(s).zip(wrow) {
                        *ov += sv * wv;
                    }
                }
            }
        });

    let mut dw2 = vec![T::zero(); d * m];
    for row_idx in 0..b * h {
        let drow = &dsd[row_idx * row_len..(row_idx + 1) * row_len];
        let srow = &vd[row_idx * row_len..(row_idx + 1) * row_len];
        for dj in 0..d {
            let wacc = &mut dw2[dj * m..(dj + 1) * m];
            for x in 0..w {
                let sx = x as isize + dj as isize - pw as isize;
                if sx < 0 || sx >= w as isize {
                    continue;
                }
                let g = &drow[x * m..(x + 1) * m];
                let s = &srow[sx as usize * m..(sx as usize + 1) * m];
                for ((wv, &gv), &sv) in wacc.iter_mut().zip(g).zip(s) {
                    *wv += gv * sv;
                }
            }
        }
    }
    (dv, dw2)
}
