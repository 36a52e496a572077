//! Affine grid generation and bilinear sampling (spatial transformer).

use ndarray::{Array4, Ix3, Ix4};

use super::graph::{Back, Graph, NodeId};
use super::{fs, sc, Scalar, Tensor};

#[inline]
fn norm_coord<F: Scalar>(i: usize, n: usize) -> F {
    if n > 1 {
        sc::<F>(2.0 * i as f64 / (n - 1) as f64 - 1.0)
    } else {
        F::zero()
    }
}

impl<F: Scalar> Graph<F> {
    /// Sampling grid `[B,H,W,2]` (x, y in [-1,1]) from affine maps `[B,2,3]`.
    pub fn affine_grid(&mut self, theta: NodeId, out_h: usize, out_w: usize) -> NodeId {
        let tv = self
            .value(theta)
            .view()
            .into_dimensionality::<Ix3>()
            .expect("theta rank");
        let b = tv.shape()[0];
        assert_eq!(&tv.shape()[1..], &[2, 3], "theta must be [B,2,3]");
        let mut grid = Array4::<F>::zeros((b, out_h, out_w, 2));
        for bi in 0..b {
            for h in 0..out_h {
                let yn = norm_coord::<F>(h, out_h);
                for w in 0..out_w {
                    let xn = norm_coord::<F>(w, out_w);
                    grid[[bi, h, w, 0]] = tv[[bi, 0, 0]] * xn + tv[[bi, 0, 1]] * yn + tv[[bi, 0, 2]];
                    grid[[bi, h, w, 1]] = tv[[bi, 1, 0]] * xn + tv[[bi, 1, 1]] * yn + tv[[bi, 1, 2]];
                }
            }
        }
        let needs = self.requires_grad(theta);
        let back = needs.then(|| Back {
            parents: vec![theta],
            run: Box::new(move |gy: &Tensor<F>| {
                let g = gy.view().into_dimensionality::<Ix4>().expect("grid grad");
                let mut dt = ndarray::Array3::<F>::zeros((b, 2, 3));
                for bi in 0..b {
                    for h in 0..out_h {
                        let yn = norm_coord::<F>(h, out_h);
                        for w in 0..out_w {
                            let xn = norm_coord::<F>(w, out_w);
                            for r in 0..2 {
                                let gr = g[[bi, h, w, r]];
                                dt[[bi, r, 0]] = dt[[bi, r, 0]] + gr * xn;
                                dt[[bi, r, 1]] = dt[[bi, r, 1]] + gr * yn;
                                dt[[bi, r, 2]] = dt[[bi, r, 2]] + gr;
                            }
                        }
                    }
                }
                vec![Some(dt.into_dyn())]
            }) as _,
        });
        self.push(grid.into_dyn(), needs, back)
    }

    /// Bilinear sampling of `x` `[B,C,H,W]` at `grid` `[B,Ho,Wo,2]`;
    /// out-of-range locations contribute zero.
    pub fn grid_sample(&mut self, x: NodeId, grid: NodeId) -> NodeId {
        let xv = self
            .value(x)
            .view()
            .into_dimensionality::<Ix4>()
            .expect("sample input rank")
            .to_owned();
        let gv = self
            .value(grid)
            .view()
            .into_dimensionality::<Ix4>()
            .expect("grid rank")
            .to_owned();
        let (b, c, h, w) = xv.dim();
        let (gb, oh, ow, two) = gv.dim();
        assert_eq!(gb, b, "grid batch");
        assert_eq!(two, 2, "grid last dim");

        let half = sc::<F>(0.5);
        let fetch = |bi: usize, ci: usize, yi: isize, xi: isize| -> F {
            if yi >= 0 && (yi as usize) < h && xi >= 0 && (xi as usize) < w {
                xv[[bi, ci, yi as usize, xi as usize]]
            } else {
                F::zero()
            }
        };

        let mut y = Array4::<F>::zeros((b, c, oh, ow));
        for bi in 0..b {
            for i in 0..oh {
                for j in 0..ow {
                    let ix = (gv[[bi, i, j, 0]] + F::one()) * half * sc::<F>((w - 1) as f64);
                    let iy = (gv[[bi, i, j, 1]] + F::one()) * half * sc::<F>((h - 1) as f64);
                    let x0 = ix.floor();
                    let y0 = iy.floor();
                    let wx1 = ix - x0;
                    let wy1 = iy - y0;
                    let (x0i, y0i) = (fs(x0) as isize, fs(y0) as isize);
                    for ci in 0..c {
                        let v00 = fetch(bi, ci, y0i, x0i);
                        let v01 = fetch(bi, ci, y0i, x0i + 1);
                        let v10 = fetch(bi, ci, y0i + 1, x0i);
                        let v11 = fetch(bi, ci, y0i + 1, x0i + 1);
                        y[[bi, ci, i, j]] = (F::one() - wy1)
                            * ((F::one() - wx1) * v00 + wx1 * v01)
                            + wy1 * ((F::one() - wx1) * v10 + wx1 * v11);
                    }
                }
            }
        }

        let needs = self.any_requires_grad(&[x, grid]);
        let back = needs.then(|| {
            let nx = self.requires_grad(x);
            let ng = self.requires_grad(grid);
            Back {
                parents: vec![x, grid],
                run: Box::new(move |gy: &Tensor<F>| {
                    let g4 = gy.view().into_dimensionality::<Ix4>().expect("grad rank");
                    let mut dx = Array4::<F>::zeros((b, c, h, w));
                    let mut dgrid = Array4::<F>::zeros((b, oh, ow, 2));
                    let mut put = |bi: usize, ci: usize, yi: isize, xi: isize, v: F| {
                        if yi >= 0 && (yi as usize) < h && xi >= 0 && (xi as usize) < w {
                            dx[[bi, ci, yi as usize, xi as usize]] =
                                dx[[bi, ci, yi as usize, xi as usize]] + v;
                        }
                    };
                    let fetch = |bi: usize, ci: usize, yi: isize, xi: isize| -> F {
                        if yi >= 0 && (yi as usize) < h && xi >= 0 && (xi as usize) < w {
                            xv[[bi, ci, yi as usize, xi as usize]]
                        } else {
                            F::zero()
                        }
                    };
                    let sx = half * sc::<F>((w - 1) as f64);
                    let sy = half * sc::<F>((h - 1) as f64);
                    for bi in 0..b {
                        for i in 0..oh {
                            for j in 0..ow {
                                let ix = (gv[[bi, i, j, 0]] + F::one()) * sx;
                                let iy = (gv[[bi, i, j, 1]] + F::one()) * sy;
                                let x0 = ix.floor();
                                let y0 = iy.floor();
                                let wx1 = ix - x0;
                                let wy1 = iy - y0;
                                let wx0 = F::one() - wx1;
                                let wy0 = F::one() - wy1;
                                let (x0i, y0i) = (fs(x0) as isize, fs(y0) as isize);
                                let mut dix = F::zero();
                                let mut diy = F::zero();
                                for ci in 0..c {
                                    let g = g4[[bi, ci, i, j]];
                                    if nx {
                                        put(bi, ci, y0i, x0i, g * wy0 * wx0);
                                        put(bi, ci, y0i, x0i + 1, g * wy0 * wx1);
                                        put(bi, ci, y0i + 1, x0i, g * wy1 * wx0);
                                        put(bi, ci, y0i + 1, x0i + 1, g * wy1 * wx1);
                                    }
                                    if ng {
                                        let v00 = fetch(bi, ci, y0i, x0i);
                                        let v01 = fetch(bi, ci, y0i, x0i + 1);
                                        let v10 = fetch(bi, ci, y0i + 1, x0i);
                                        let v11 = fetch(bi, ci, y0i + 1, x0i + 1);
                                        dix = dix + g * (wy0 * (v01 - v00) + wy1 * (v11 - v10));
                                        diy = diy + g * (wx0 * (v10 - v00) + wx1 * (v11 - v01));
                                    }
                                }
                                if ng {
                                    dgrid[[bi, i, j, 0]] = dix * sx;
                                    dgrid[[bi, i, j, 1]] = diy * sy;
                                }
                            }
                        }
                    }
                    vec![
                        nx.then(|| dx.into_dyn()),
                        ng.then(|| dgrid.into_dyn()),
                    ]
                }) as _,
            }
        });
        self.push(y.into_dyn(), needs, back)
    }
}
