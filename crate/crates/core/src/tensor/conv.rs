//! Convolution, pooling, upsampling, batch norm and linear ops.
//!
//! Convolutions run as im2col + one gemm over the whole batch, which keeps
//! results independent of batch composition and deterministic across runs.

use ndarray::{Array2, Array4, ArrayD, Axis, Ix2, Ix4, IxDyn};

use super::graph::{Back, Graph, NodeId};
use super::{sc, Scalar, Tensor};

pub(crate) struct ConvShape {
    pub batch: usize,
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvShape {
    fn infer(x: &[usize], w: &[usize], stride: usize, pad: usize) -> Self {
        assert_eq!(x.len(), 4, "conv input must be [B,C,H,W]");
        assert_eq!(w.len(), 4, "conv weight must be [OC,C,KH,KW]");
        assert_eq!(x[1], w[1], "conv channel mismatch");
        assert_eq!(w[2], w[3], "square kernels only");
        let k = w[2];
        let out_h = (x[2] + 2 * pad - k) / stride + 1;
        let out_w = (x[3] + 2 * pad - k) / stride + 1;
        ConvShape {
            batch: x[0],
            in_c: x[1],
            in_h: x[2],
            in_w: x[3],
            out_c: w[0],
            k,
            stride,
            pad,
            out_h,
            out_w,
        }
    }
}

/// Unfold `x` into rows of receptive fields: `[B*OH*OW, C*K*K]`.
fn im2col<F: Scalar>(x: &Array4<F>, s: &ConvShape) -> Array2<F> {
    let ckk = s.in_c * s.k * s.k;
    let positions = s.out_h * s.out_w;
    let mut cols = Array2::<F>::zeros((s.batch * positions, ckk));
    let xs = x.as_slice().expect("standard layout");
    let cs = cols.as_slice_mut().expect("standard layout");
    for b in 0..s.batch {
        for oh in 0..s.out_h {
            for ow in 0..s.out_w {
                let row = (b * positions + oh * s.out_w + ow) * ckk;
                for c in 0..s.in_c {
                    for kh in 0..s.k {
                        let ih = (oh * s.stride + kh) as isize - s.pad as isize;
                        let dst = row + (c * s.k + kh) * s.k;
                        if ih < 0 || ih as usize >= s.in_h {
                            continue; // stays zero
                        }
                        let src_base = ((b * s.in_c + c) * s.in_h + ih as usize) * s.in_w;
                        for kw in 0..s.k {
                            let iw = (ow * s.stride + kw) as isize - s.pad as isize;
                            if iw >= 0 && (iw as usize) < s.in_w {
                                cs[dst + kw] = xs[src_base + iw as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Fold gradient rows back onto the input, accumulating overlaps.
fn col2im<F: Scalar>(dcols: &Array2<F>, s: &ConvShape) -> Array4<F> {
    let ckk = s.in_c * s.k * s.k;
    let positions = s.out_h * s.out_w;
    let mut dx = Array4::<F>::zeros((s.batch, s.in_c, s.in_h, s.in_w));
    let ds = dcols.as_slice().expect("standard layout");
    let xs = dx.as_slice_mut().expect("standard layout");
    for b in 0..s.batch {
        for oh in 0..s.out_h {
            for ow in 0..s.out_w {
                let row = (b * positions + oh * s.out_w + ow) * ckk;
                for c in 0..s.in_c {
                    for kh in 0..s.k {
                        let ih = (oh * s.stride + kh) as isize - s.pad as isize;
                        if ih < 0 || ih as usize >= s.in_h {
                            continue;
                        }
                        let src = row + (c * s.k + kh) * s.k;
                        let dst_base = ((b * s.in_c + c) * s.in_h + ih as usize) * s.in_w;
                        for kw in 0..s.k {
                            let iw = (ow * s.stride + kw) as isize - s.pad as isize;
                            if iw >= 0 && (iw as usize) < s.in_w {
                                xs[dst_base + iw as usize] =
                                    xs[dst_base + iw as usize] + ds[src + kw];
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

/// `[B,OC,OH,OW]` → `[B*OH*OW, OC]` rows.
fn to_rows<F: Scalar>(g: &Tensor<F>) -> Array2<F> {
    let g4 = g.view().into_dimensionality::<Ix4>().expect("4-d grad");
    let (b, oc, oh, ow) = g4.dim();
    let perm = g4.permuted_axes([0, 2, 3, 1]);
    let std = perm.as_standard_layout().into_owned();
    std.into_shape_with_order((b * oh * ow, oc))
        .expect("rows reshape")
}

/// `[B*OH*OW, OC]` rows → `[B,OC,OH,OW]`.
fn from_rows<F: Scalar>(rows: Array2<F>, b: usize, oc: usize, oh: usize, ow: usize) -> Tensor<F> {
    let r4 = rows
        .into_shape_with_order((b, oh, ow, oc))
        .expect("from_rows reshape");
    let perm = r4.permuted_axes([0, 3, 1, 2]);
    perm.as_standard_layout().into_owned().into_dyn()
}

impl<F: Scalar> Graph<F> {
    /// 2-d convolution with square kernel. `x`: `[B,C,H,W]`, `w`:
    /// `[OC,C,K,K]`, optional bias `[OC]`.
    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: usize,
        pad: usize,
    ) -> NodeId {
        let shape = ConvShape::infer(
            self.value(x).shape(),
            self.value(w).shape(),
            stride,
            pad,
        );
        let xv = self
            .value(x)
            .view()
            .into_dimensionality::<Ix4>()
            .expect("conv input rank")
            .as_standard_layout()
            .into_owned();
        let wv = self.value(w);
        let ckk = shape.in_c * shape.k * shape.k;
        let w_mat = wv
            .view()
            .into_shape_with_order((shape.out_c, ckk))
            .expect("weight reshape")
            .to_owned();

        let cols = im2col(&xv, &shape);
        let mut rows = cols.dot(&w_mat.t()); // [B*OH*OW, OC]
        if let Some(bn) = b {
            let bias = self.value(bn);
            assert_eq!(bias.len(), shape.out_c, "bias length");
            let bias_row = bias
                .view()
                .into_shape_with_order((1, shape.out_c))
                .expect("bias reshape");
            rows += &bias_row;
        }
        let y = from_rows(rows, shape.batch, shape.out_c, shape.out_h, shape.out_w);

        let mut parents = vec![x, w];
        if let Some(bn) = b {
            parents.push(bn);
        }
        let needs = self.any_requires_grad(&parents);
        let back = needs.then(|| {
            let nx = self.requires_grad(x);
            let nw = self.requires_grad(w);
            let nb = b.map(|bn| self.requires_grad(bn)).unwrap_or(false);
            let has_bias = b.is_some();
            let w_shape: Vec<usize> = self.value(w).shape().to_vec();
            Back {
                parents,
                run: Box::new(move |gy: &Tensor<F>| {
                    let dy_rows = to_rows(gy); // [B*OH*OW, OC]
                    let dw = nw.then(|| {
                        let dwt = cols.t().dot(&dy_rows); // [CKK, OC]
                        dwt.t()
                            .as_standard_layout()
                            .into_owned()
                            .into_shape_with_order(IxDyn(&w_shape))
                            .expect("dw reshape")
                    });
                    let dx = nx.then(|| {
                        let dcols = dy_rows.dot(&w_mat); // [B*OH*OW, CKK]
                        col2im(&dcols, &shape).into_dyn()
                    });
                    let db = (has_bias && nb).then(|| {
                        dy_rows.sum_axis(Axis(0)).into_dyn() // [OC]
                    });
                    let mut out = vec![dx, dw];
                    if has_bias {
                        out.push(db);
                    }
                    out
                }) as _,
            }
        });
        self.push(y, needs, back)
    }

    /// Fully-connected layer. `x`: `[B,D]`, `w`: `[D,O]`, bias `[O]`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> NodeId {
        let xv = self
            .value(x)
            .view()
            .into_dimensionality::<Ix2>()
            .expect("linear input rank");
        let wv = self
            .value(w)
            .view()
            .into_dimensionality::<Ix2>()
            .expect("linear weight rank");
        assert_eq!(xv.shape()[1], wv.shape()[0], "linear dims");
        let mut y = xv.dot(&wv);
        if let Some(bn) = b {
            let bias = self.value(bn);
            let bias_row = bias
                .view()
                .into_shape_with_order((1, y.shape()[1]))
                .expect("bias reshape");
            y += &bias_row;
        }
        let mut parents = vec![x, w];
        if let Some(bn) = b {
            parents.push(bn);
        }
        let needs = self.any_requires_grad(&parents);
        let back = needs.then(|| {
            let nx = self.requires_grad(x);
            let nw = self.requires_grad(w);
            let nb = b.map(|bn| self.requires_grad(bn)).unwrap_or(false);
            let has_bias = b.is_some();
            let xv_c = nw.then(|| xv.to_owned());
            let wv_c = nx.then(|| wv.to_owned());
            Back {
                parents,
                run: Box::new(move |gy: &Tensor<F>| {
                    let gy2 = gy
                        .view()
                        .into_dimensionality::<Ix2>()
                        .expect("linear grad rank");
                    let dx = wv_c.map(|w| gy2.dot(&w.t()).into_dyn());
                    let dw = xv_c.map(|x| x.t().dot(&gy2).into_dyn());
                    let db = (has_bias && nb).then(|| gy2.sum_axis(Axis(0)).into_dyn());
                    let mut out = vec![dx, dw];
                    if has_bias {
                        out.push(db);
                    }
                    out
                }) as _,
            }
        });
        self.push(y.into_dyn(), needs, back)
    }

    /// 2×2 average pooling, stride 2. Requires even spatial dims.
    pub fn avg_pool2(&mut self, x: NodeId) -> NodeId {
        let xv = self
            .value(x)
            .view()
            .into_dimensionality::<Ix4>()
            .expect("pool input rank");
        let (b, c, h, w) = xv.dim();
        assert!(h % 2 == 0 && w % 2 == 0, "avg_pool2 needs even dims");
        let (oh, ow) = (h / 2, w / 2);
        let quarter = sc::<F>(0.25);
        let mut y = Array4::<F>::zeros((b, c, oh, ow));
        for bi in 0..b {
            for ci in 0..c {
                for i in 0..oh {
                    for j in 0..ow {
                        y[[bi, ci, i, j]] = (xv[[bi, ci, 2 * i, 2 * j]]
                            + xv[[bi, ci, 2 * i, 2 * j + 1]]
                            + xv[[bi, ci, 2 * i + 1, 2 * j]]
                            + xv[[bi, ci, 2 * i + 1, 2 * j + 1]])
                            * quarter;
                    }
                }
            }
        }
        let needs = self.requires_grad(x);
        let back = needs.then(|| Back {
            parents: vec![x],
            run: Box::new(move |gy: &Tensor<F>| {
                let g4 = gy.view().into_dimensionality::<Ix4>().expect("grad rank");
                let mut dx = Array4::<F>::zeros((b, c, h, w));
                for bi in 0..b {
                    for ci in 0..c {
                        for i in 0..oh {
                            for j in 0..ow {
                                let g = g4[[bi, ci, i, j]] * quarter;
                                dx[[bi, ci, 2 * i, 2 * j]] = g;
                                dx[[bi, ci, 2 * i, 2 * j + 1]] = g;
                                dx[[bi, ci, 2 * i + 1, 2 * j]] = g;
                                dx[[bi, ci, 2 * i + 1, 2 * j + 1]] = g;
                            }
                        }
                    }
                }
                vec![Some(dx.into_dyn())]
            }) as _,
        });
        self.push(y.into_dyn(), needs, back)
    }

    /// 2×2 max pooling, stride 2.
    pub fn max_pool2(&mut self, x: NodeId) -> NodeId {
        let xv = self
            .value(x)
            .view()
            .into_dimensionality::<Ix4>()
            .expect("pool input rank");
        let (b, c, h, w) = xv.dim();
        assert!(h % 2 == 0 && w % 2 == 0, "max_pool2 needs even dims");
        let (oh, ow) = (h / 2, w / 2);
        let mut y = Array4::<F>::zeros((b, c, oh, ow));
        let mut arg: Vec<u32> = vec![0; b * c * oh * ow];
        for bi in 0..b {
            for ci in 0..c {
                for i in 0..oh {
                    for j in 0..ow {
                        let mut best = F::neg_infinity();
                        let mut best_at = 0u32;
                        for (di, dj) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                            let (ih, iw) = (2 * i + di, 2 * j + dj);
                            let v = xv[[bi, ci, ih, iw]];
                            if v > best {
                                best = v;
                                best_at = (ih * w + iw) as u32;
                            }
                        }
                        y[[bi, ci, i, j]] = best;
                        arg[((bi * c + ci) * oh + i) * ow + j] = best_at;
                    }
                }
            }
        }
        let needs = self.requires_grad(x);
        let back = needs.then(|| Back {
            parents: vec![x],
            run: Box::new(move |gy: &Tensor<F>| {
                let g4 = gy.view().into_dimensionality::<Ix4>().expect("grad rank");
                let mut dx = Array4::<F>::zeros((b, c, h, w));
                for bi in 0..b {
                    for ci in 0..c {
                        for i in 0..oh {
                            for j in 0..ow {
                                let at = arg[((bi * c + ci) * oh + i) * ow + j] as usize;
                                dx[[bi, ci, at / w, at % w]] =
                                    dx[[bi, ci, at / w, at % w]] + g4[[bi, ci, i, j]];
                            }
                        }
                    }
                }
                vec![Some(dx.into_dyn())]
            }) as _,
        });
        self.push(y.into_dyn(), needs, back)
    }

    /// Global average pool: `[B,C,H,W]` → `[B,C]`.
    pub fn global_avg_pool(&mut self, x: NodeId) -> NodeId {
        let xv = self
            .value(x)
            .view()
            .into_dimensionality::<Ix4>()
            .expect("gap input rank");
        let (b, c, h, w) = xv.dim();
        let inv = sc::<F>(1.0 / (h * w) as f64);
        let mut y = Array2::<F>::zeros((b, c));
        for bi in 0..b {
            for ci in 0..c {
                let mut s = F::zero();
                for i in 0..h {
                    for j in 0..w {
                        s = s + xv[[bi, ci, i, j]];
                    }
                }
                y[[bi, ci]] = s * inv;
            }
        }
        let needs = self.requires_grad(x);
        let back = needs.then(|| Back {
            parents: vec![x],
            run: Box::new(move |gy: &Tensor<F>| {
                let g2 = gy.view().into_dimensionality::<Ix2>().expect("grad rank");
                let mut dx = Array4::<F>::zeros((b, c, h, w));
                for bi in 0..b {
                    for ci in 0..c {
                        let g = g2[[bi, ci]] * inv;
                        dx.index_axis_mut(Axis(0), bi)
                            .index_axis_mut(Axis(0), ci)
                            .fill(g);
                    }
                }
                vec![Some(dx.into_dyn())]
            }) as _,
        });
        self.push(y.into_dyn(), needs, back)
    }

    /// Nearest-neighbour 2× upsampling.
    pub fn upsample2(&mut self, x: NodeId) -> NodeId {
        let xv = self
            .value(x)
            .view()
            .into_dimensionality::<Ix4>()
            .expect("upsample input rank");
        let (b, c, h, w) = xv.dim();
        let mut y = Array4::<F>::zeros((b, c, 2 * h, 2 * w));
        for bi in 0..b {
            for ci in 0..c {
                for i in 0..h {
                    for j in 0..w {
                        let v = xv[[bi, ci, i, j]];
                        y[[bi, ci, 2 * i, 2 * j]] = v;
                        y[[bi, ci, 2 * i, 2 * j + 1]] = v;
                        y[[bi, ci, 2 * i + 1, 2 * j]] = v;
                        y[[bi, ci, 2 * i + 1, 2 * j + 1]] = v;
                    }
                }
            }
        }
        let needs = self.requires_grad(x);
        let back = needs.then(|| Back {
            parents: vec![x],
            run: Box::new(move |gy: &Tensor<F>| {
                let g4 = gy.view().into_dimensionality::<Ix4>().expect("grad rank");
                let mut dx = Array4::<F>::zeros((b, c, h, w));
                for bi in 0..b {
                    for ci in 0..c {
                        for i in 0..h {
                            for j in 0..w {
                                dx[[bi, ci, i, j]] = g4[[bi, ci, 2 * i, 2 * j]]
                                    + g4[[bi, ci, 2 * i, 2 * j + 1]]
                                    + g4[[bi, ci, 2 * i + 1, 2 * j]]
                                    + g4[[bi, ci, 2 * i + 1, 2 * j + 1]];
                            }
                        }
                    }
                }
                vec![Some(dx.into_dyn())]
            }) as _,
        });
        self.push(y.into_dyn(), needs, back)
    }

    /// Batch normalization over `[B,C,H,W]`.
    ///
    /// In training mode normalizes with batch statistics and returns them so
    /// the layer can maintain running estimates; in eval mode the provided
    /// running statistics are used.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm2d(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        running_mean: &Tensor<F>,
        running_var: &Tensor<F>,
        training: bool,
        eps: f64,
    ) -> (NodeId, Option<(Tensor<F>, Tensor<F>)>) {
        let xv = self
            .value(x)
            .view()
            .into_dimensionality::<Ix4>()
            .expect("bn input rank");
        let (b, c, h, w) = xv.dim();
        let m = (b * h * w) as f64;
        let eps = sc::<F>(eps);

        let (mean, var) = if training {
            let mut mean = vec![F::zero(); c];
            let mut var = vec![F::zero(); c];
            for ci in 0..c {
                let ch = xv.index_axis(Axis(1), ci);
                let s: F = ch.iter().copied().sum();
                mean[ci] = s / sc::<F>(m);
            }
            for ci in 0..c {
                let ch = xv.index_axis(Axis(1), ci);
                let mu = mean[ci];
                let s: F = ch.iter().map(|&v| (v - mu) * (v - mu)).sum();
                var[ci] = s / sc::<F>(m);
            }
            (mean, var)
        } else {
            (
                running_mean.iter().copied().collect(),
                running_var.iter().copied().collect(),
            )
        };

        let inv_std: Vec<F> = var.iter().map(|&v| F::one() / (v + eps).sqrt()).collect();
        let gv: Vec<F> = self.value(gamma).iter().copied().collect();
        let bv: Vec<F> = self.value(beta).iter().copied().collect();
        assert_eq!(gv.len(), c, "gamma length");

        let mut xhat = Array4::<F>::zeros((b, c, h, w));
        let mut y = Array4::<F>::zeros((b, c, h, w));
        for bi in 0..b {
            for ci in 0..c {
                for i in 0..h {
                    for j in 0..w {
                        let xh = (xv[[bi, ci, i, j]] - mean[ci]) * inv_std[ci];
                        xhat[[bi, ci, i, j]] = xh;
                        y[[bi, ci, i, j]] = gv[ci] * xh + bv[ci];
                    }
                }
            }
        }

        let stats = training.then(|| {
            (
                ArrayD::from_shape_vec(IxDyn(&[c]), mean.clone()).expect("mean shape"),
                ArrayD::from_shape_vec(IxDyn(&[c]), var.clone()).expect("var shape"),
            )
        });

        let parents = vec![x, gamma, beta];
        let needs = self.any_requires_grad(&parents);
        let back = needs.then(|| {
            let nx = self.requires_grad(x);
            let ng = self.requires_grad(gamma);
            let nb = self.requires_grad(beta);
            Back {
                parents,
                run: Box::new(move |gy: &Tensor<F>| {
                    let g4 = gy.view().into_dimensionality::<Ix4>().expect("grad rank");
                    let mut dgamma = vec![F::zero(); c];
                    let mut dbeta = vec![F::zero(); c];
                    for bi in 0..b {
                        for ci in 0..c {
                            for i in 0..h {
                                for j in 0..w {
                                    let g = g4[[bi, ci, i, j]];
                                    dbeta[ci] = dbeta[ci] + g;
                                    dgamma[ci] = dgamma[ci] + g * xhat[[bi, ci, i, j]];
                                }
                            }
                        }
                    }
                    let dx = nx.then(|| {
                        let mut dx = Array4::<F>::zeros((b, c, h, w));
                        if training {
                            // dx = inv_std/m * (m*dxhat - sum(dxhat) - xhat*sum(dxhat*xhat))
                            let mf = sc::<F>(m);
                            for ci in 0..c {
                                let sum_dxhat = dbeta[ci] * gv[ci];
                                let sum_dxhat_xhat = dgamma[ci] * gv[ci];
                                let k = inv_std[ci] / mf;
                                for bi in 0..b {
                                    for i in 0..h {
                                        for j in 0..w {
                                            let dxhat = g4[[bi, ci, i, j]] * gv[ci];
                                            dx[[bi, ci, i, j]] = k
                                                * (mf * dxhat
                                                    - sum_dxhat
                                                    - xhat[[bi, ci, i, j]] * sum_dxhat_xhat);
                                        }
                                    }
                                }
                            }
                        } else {
                            for ci in 0..c {
                                let k = gv[ci] * inv_std[ci];
                                for bi in 0..b {
                                    for i in 0..h {
                                        for j in 0..w {
                                            dx[[bi, ci, i, j]] = g4[[bi, ci, i, j]] * k;
                                        }
                                    }
                                }
                            }
                        }
                        dx.into_dyn()
                    });
                    let dg = ng.then(|| {
                        ArrayD::from_shape_vec(IxDyn(&[c]), dgamma.clone()).expect("dgamma")
                    });
                    let db = nb
                        .then(|| ArrayD::from_shape_vec(IxDyn(&[c]), dbeta.clone()).expect("dbeta"));
                    vec![dx, dg, db]
                }) as _,
            }
        });
        let out = self.push(y.into_dyn(), needs, back);
        (out, stats)
    }
}
