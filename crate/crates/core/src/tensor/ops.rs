//! Elementwise ops, reductions and losses.

use ndarray::{ArrayD, Axis, IxDyn};

use super::graph::{Back, Graph, NodeId};
use super::{sc, scalar_tensor, Scalar, Tensor};

impl<F: Scalar> Graph<F> {
    /// Unary op whose derivative is written in terms of the input value.
    fn unary_by_x(
        &mut self,
        x: NodeId,
        f: impl Fn(F) -> F,
        df: impl Fn(F) -> F + Send + 'static,
    ) -> NodeId {
        let y = self.value(x).mapv(&f);
        let needs = self.requires_grad(x);
        let back = needs.then(|| {
            let xv = self.value(x).clone();
            Back {
                parents: vec![x],
                run: Box::new(move |gy: &Tensor<F>| {
                    let mut gx = xv.mapv(df);
                    gx *= gy;
                    vec![Some(gx)]
                }) as _,
            }
        });
        self.push(y, needs, back)
    }

    /// Unary op whose derivative is written in terms of the output value.
    fn unary_by_y(
        &mut self,
        x: NodeId,
        f: impl Fn(F) -> F,
        df: impl Fn(F) -> F + Send + 'static,
    ) -> NodeId {
        let y = self.value(x).mapv(&f);
        let needs = self.requires_grad(x);
        let back = needs.then(|| {
            let yv = y.clone();
            Back {
                parents: vec![x],
                run: Box::new(move |gy: &Tensor<F>| {
                    let mut gx = yv.mapv(df);
                    gx *= gy;
                    vec![Some(gx)]
                }) as _,
            }
        });
        self.push(y, needs, back)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.unary_by_x(
            x,
            |v| if v > F::zero() { v } else { F::zero() },
            |v| if v > F::zero() { F::one() } else { F::zero() },
        )
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> NodeId {
        let a = sc::<F>(slope);
        self.unary_by_x(
            x,
            move |v| if v > F::zero() { v } else { a * v },
            move |v| if v > F::zero() { F::one() } else { a },
        )
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.unary_by_y(x, sigmoid_stable, |y| y * (F::one() - y))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        self.unary_by_y(x, |v| v.tanh(), |y| F::one() - y * y)
    }

    pub fn softplus(&mut self, x: NodeId) -> NodeId {
        self.unary_by_x(
            x,
            |v| v.max(F::zero()) + (-v.abs()).exp().ln_1p(),
            sigmoid_stable,
        )
    }

    pub fn neg(&mut self, x: NodeId) -> NodeId {
        self.unary_by_x(x, |v| -v, |_| -F::one())
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let c = sc::<F>(c);
        self.unary_by_x(x, move |v| c * v, move |_| c)
    }

    pub fn add_scalar(&mut self, x: NodeId, c: f64) -> NodeId {
        let c = sc::<F>(c);
        self.unary_by_x(x, move |v| v + c, |_| F::one())
    }

    /// Clamp with a straight-through gradient (identity in backward).
    pub fn clamp_ste(&mut self, x: NodeId, lo: f64, hi: f64) -> NodeId {
        let (lo, hi) = (sc::<F>(lo), sc::<F>(hi));
        self.unary_by_x(x, move |v| v.max(lo).min(hi), |_| F::one())
    }

    /// Quantize to `levels` uniform steps with a straight-through gradient.
    pub fn round_ste(&mut self, x: NodeId, levels: f64) -> NodeId {
        let l = sc::<F>(levels);
        self.unary_by_x(x, move |v| (v * l).round() / l, |_| F::one())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.value(a).shape(), self.value(b).shape(), "add shapes");
        let y = self.value(a) + self.value(b);
        let needs = self.any_requires_grad(&[a, b]);
        let (na, nb) = (self.requires_grad(a), self.requires_grad(b));
        let back = needs.then(|| Back {
            parents: vec![a, b],
            run: Box::new(move |gy: &Tensor<F>| {
                vec![
                    na.then(|| gy.clone()),
                    nb.then(|| gy.clone()),
                ]
            }) as _,
        });
        self.push(y, needs, back)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.value(a).shape(), self.value(b).shape(), "sub shapes");
        let y = self.value(a) - self.value(b);
        let needs = self.any_requires_grad(&[a, b]);
        let (na, nb) = (self.requires_grad(a), self.requires_grad(b));
        let back = needs.then(|| Back {
            parents: vec![a, b],
            run: Box::new(move |gy: &Tensor<F>| {
                vec![na.then(|| gy.clone()), nb.then(|| gy.mapv(|v| -v))]
            }) as _,
        });
        self.push(y, needs, back)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.value(a).shape(), self.value(b).shape(), "mul shapes");
        let y = self.value(a) * self.value(b);
        let needs = self.any_requires_grad(&[a, b]);
        let (na, nb) = (self.requires_grad(a), self.requires_grad(b));
        let back = needs.then(|| {
            let av = na.then(|| self.value(a).clone());
            let bv = nb.then(|| self.value(b).clone());
            Back {
                parents: vec![a, b],
                run: Box::new(move |gy: &Tensor<F>| {
                    vec![bv.map(|bv| bv * gy), av.map(|av| av * gy)]
                }) as _,
            }
        });
        self.push(y, needs, back)
    }

    /// `a + b` where `b` has the same rank with broadcastable (1-sized) axes.
    pub fn add_bc(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary_bc(a, b, true)
    }

    /// `a * b` with `b` broadcast as in [`Graph::add_bc`].
    pub fn mul_bc(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary_bc(a, b, false)
    }

    fn binary_bc(&mut self, a: NodeId, b: NodeId, additive: bool) -> NodeId {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.ndim(), bv.ndim(), "broadcast rank mismatch");
        let bb = bv
            .broadcast(av.raw_dim())
            .unwrap_or_else(|| panic!("cannot broadcast {:?} to {:?}", bv.shape(), av.shape()));
        let y = if additive { av + &bb } else { av * &bb };
        let needs = self.any_requires_grad(&[a, b]);
        let (na, nb) = (self.requires_grad(a), self.requires_grad(b));
        let b_shape: Vec<usize> = bv.shape().to_vec();
        let back = needs.then(|| {
            let av_c = (!additive && nb).then(|| self.value(a).clone());
            let bv_c = (!additive && na).then(|| self.value(b).clone());
            let a_dim = self.value(a).raw_dim();
            Back {
                parents: vec![a, b],
                run: Box::new(move |gy: &Tensor<F>| {
                    let ga = na.then(|| match &bv_c {
                        Some(bv) => {
                            let bb = bv.broadcast(a_dim.clone()).expect("broadcast");
                            gy * &bb
                        }
                        None => gy.clone(),
                    });
                    let gb = nb.then(|| {
                        let full = match &av_c {
                            Some(av) => gy * av,
                            None => gy.clone(),
                        };
                        reduce_to_shape(full, &b_shape)
                    });
                    vec![ga, gb]
                }) as _,
            }
        });
        self.push(y, needs, back)
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> NodeId {
        let y = self
            .value(x)
            .clone()
            .into_shape_with_order(IxDyn(shape))
            .expect("reshape element count");
        let needs = self.requires_grad(x);
        let x_shape: Vec<usize> = self.value(x).shape().to_vec();
        let back = needs.then(|| Back {
            parents: vec![x],
            run: Box::new(move |gy: &Tensor<F>| {
                vec![Some(
                    gy.clone()
                        .into_shape_with_order(IxDyn(&x_shape))
                        .expect("reshape back"),
                )]
            }) as _,
        });
        self.push(y, needs, back)
    }

    /// Concatenate along the channel axis (axis 1).
    pub fn concat_channels(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let y = ndarray::concatenate(Axis(1), &views).expect("concat shapes");
        let needs = self.any_requires_grad(parts);
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).shape()[1]).collect();
        let need_flags: Vec<bool> = parts.iter().map(|&p| self.requires_grad(p)).collect();
        let back = needs.then(|| Back {
            parents: parts.to_vec(),
            run: Box::new(move |gy: &Tensor<F>| {
                let mut out = Vec::with_capacity(widths.len());
                let mut off = 0;
                for (w, need) in widths.iter().zip(&need_flags) {
                    let slice = gy
                        .slice_axis(Axis(1), ndarray::Slice::from(off..off + w))
                        .to_owned();
                    out.push(need.then_some(slice));
                    off += w;
                }
                out
            }) as _,
        });
        self.push(y, needs, back)
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let n = self.value(x).len();
        let y = scalar_tensor(self.value(x).iter().copied().sum::<F>() / sc::<F>(n as f64));
        let needs = self.requires_grad(x);
        let dim = self.value(x).raw_dim();
        let back = needs.then(|| Back {
            parents: vec![x],
            run: Box::new(move |gy: &Tensor<F>| {
                let g = tensor_scalar0(gy) / sc::<F>(n as f64);
                vec![Some(ArrayD::from_elem(dim, g))]
            }) as _,
        });
        self.push(y, needs, back)
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let y = scalar_tensor(self.value(x).iter().copied().sum::<F>());
        let needs = self.requires_grad(x);
        let dim = self.value(x).raw_dim();
        let back = needs.then(|| Back {
            parents: vec![x],
            run: Box::new(move |gy: &Tensor<F>| {
                vec![Some(ArrayD::from_elem(dim, tensor_scalar0(gy)))]
            }) as _,
        });
        self.push(y, needs, back)
    }

    /// Sum of absolute values.
    pub fn l1_sum(&mut self, x: NodeId) -> NodeId {
        let y = scalar_tensor(self.value(x).iter().map(|v| v.abs()).sum::<F>());
        let needs = self.requires_grad(x);
        let back = needs.then(|| {
            let xv = self.value(x).clone();
            Back {
                parents: vec![x],
                run: Box::new(move |gy: &Tensor<F>| {
                    let g = tensor_scalar0(gy);
                    vec![Some(xv.mapv(|v| g * sign(v)))]
                }) as _,
            }
        });
        self.push(y, needs, back)
    }

    /// Mean squared error between two same-shape tensors.
    pub fn mse(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.value(a).shape(), self.value(b).shape(), "mse shapes");
        let n = sc::<F>(self.value(a).len() as f64);
        let diff = self.value(a) - self.value(b);
        let y = scalar_tensor(diff.iter().map(|v| *v * *v).sum::<F>() / n);
        let needs = self.any_requires_grad(&[a, b]);
        let (na, nb) = (self.requires_grad(a), self.requires_grad(b));
        let back = needs.then(|| Back {
            parents: vec![a, b],
            run: Box::new(move |gy: &Tensor<F>| {
                let g = tensor_scalar0(gy) * sc::<F>(2.0) / n;
                let ga = diff.mapv(|v| g * v);
                vec![na.then(|| ga.clone()), nb.then(|| ga.mapv(|v| -v))]
            }) as _,
        });
        self.push(y, needs, back)
    }

    /// Column `k` of a `[B, K]` matrix as a `[B]` vector.
    pub fn pick_class(&mut self, logits: NodeId, k: usize) -> NodeId {
        let v = self.value(logits);
        assert_eq!(v.ndim(), 2, "pick_class expects [B, K]");
        let (b, kk) = (v.shape()[0], v.shape()[1]);
        assert!(k < kk, "class index out of range");
        let y = v.index_axis(Axis(1), k).to_owned().into_dyn();
        let needs = self.requires_grad(logits);
        let back = needs.then(|| Back {
            parents: vec![logits],
            run: Box::new(move |gy: &Tensor<F>| {
                let mut g = ArrayD::zeros(IxDyn(&[b, kk]));
                for i in 0..b {
                    g[[i, k]] = gy[[i]];
                }
                vec![Some(g)]
            }) as _,
        });
        self.push(y, needs, back)
    }

    /// Mean softmax cross-entropy of `[B, K]` logits against class labels.
    pub fn softmax_ce(&mut self, logits: NodeId, labels: &[usize]) -> NodeId {
        let v = self.value(logits);
        assert_eq!(v.ndim(), 2, "softmax_ce expects [B, K]");
        let (b, k) = (v.shape()[0], v.shape()[1]);
        assert_eq!(labels.len(), b, "label count");
        let mut probs = v.clone();
        let mut total = F::zero();
        for (i, mut row) in probs.axis_iter_mut(Axis(0)).enumerate() {
            let max = row.iter().copied().fold(F::neg_infinity(), F::max);
            let mut lse = F::zero();
            for x in row.iter() {
                lse = lse + (*x - max).exp();
            }
            let lse = lse.ln() + max;
            total = total + lse - row[labels[i]];
            for x in row.iter_mut() {
                *x = (*x - lse).exp();
            }
        }
        let y = scalar_tensor(total / sc::<F>(b as f64));
        let needs = self.requires_grad(logits);
        let labels: Vec<usize> = labels.to_vec();
        let back = needs.then(|| Back {
            parents: vec![logits],
            run: Box::new(move |gy: &Tensor<F>| {
                let g = tensor_scalar0(gy) / sc::<F>(b as f64);
                let mut dx = probs;
                for (i, mut row) in dx.axis_iter_mut(Axis(0)).enumerate() {
                    row[labels[i]] = row[labels[i]] - F::one();
                    row.mapv_inplace(|v| v * g);
                }
                let _ = k;
                vec![Some(dx)]
            }) as _,
        });
        self.push(y, needs, back)
    }

    /// Mean binary cross-entropy over all elements, from logits.
    pub fn bce_with_logits(&mut self, logits: NodeId, targets: NodeId) -> NodeId {
        assert_eq!(
            self.value(logits).shape(),
            self.value(targets).shape(),
            "bce shapes"
        );
        let x = self.value(logits);
        let t = self.value(targets);
        let n = sc::<F>(x.len() as f64);
        let mut total = F::zero();
        for (xi, ti) in x.iter().zip(t.iter()) {
            // max(x,0) - x*t + ln(1 + e^{-|x|})
            total = total + xi.max(F::zero()) - *xi * *ti + (-xi.abs()).exp().ln_1p();
        }
        let y = scalar_tensor(total / n);
        let needs = self.requires_grad(logits);
        let back = needs.then(|| {
            let xv = x.clone();
            let tv = t.clone();
            Back {
                parents: vec![logits, targets],
                run: Box::new(move |gy: &Tensor<F>| {
                    let g = tensor_scalar0(gy) / n;
                    let mut dx = xv.mapv(sigmoid_stable);
                    dx -= &tv;
                    dx.mapv_inplace(|v| v * g);
                    vec![Some(dx), None]
                }) as _,
            }
        });
        self.push(y, needs, back)
    }

    /// Weighted sum of scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(NodeId, f64)]) -> NodeId {
        assert!(!terms.is_empty());
        let mut acc: Option<NodeId> = None;
        for &(node, w) in terms {
            let scaled = self.scale(node, w);
            acc = Some(match acc {
                Some(a) => self.add(a, scaled),
                None => scaled,
            });
        }
        acc.expect("nonempty terms")
    }
}

#[inline]
fn sigmoid_stable<F: Scalar>(v: F) -> F {
    if v >= F::zero() {
        F::one() / (F::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (F::one() + e)
    }
}

#[inline]
fn sign<F: Scalar>(v: F) -> F {
    if v > F::zero() {
        F::one()
    } else if v < F::zero() {
        -F::one()
    } else {
        F::zero()
    }
}

#[inline]
fn tensor_scalar0<F: Scalar>(t: &Tensor<F>) -> F {
    *t.iter().next().expect("scalar tensor")
}

/// Sum `g` over every axis where `shape` has extent 1, keeping rank.
pub(crate) fn reduce_to_shape<F: Scalar>(g: Tensor<F>, shape: &[usize]) -> Tensor<F> {
    let mut out = g;
    for (ax, &s) in shape.iter().enumerate() {
        if s == 1 && out.shape()[ax] != 1 {
            out = out.sum_axis(Axis(ax)).insert_axis(Axis(ax));
        }
    }
    out
}
