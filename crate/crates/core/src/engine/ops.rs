//! Differentiable operations on [`Var`].
//!
//! Binary elementwise ops accept equal shapes or a single-element operand,
//! which is broadcast.

use super::autograd::Var;
use super::conv::{self, ConvSpec, Geometry};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy)]
enum Bcast {
    Same,
    Lhs,
    Rhs,
}

fn bcast_mode(op: &'static str, a: &[usize], b: &[usize]) -> Result<Bcast> {
    let (na, nb): (usize, usize) = (a.iter().product(), b.iter().product());
    if a == b {
        Ok(Bcast::Same)
    } else if na == 1 {
        Ok(Bcast::Lhs)
    } else if nb == 1 {
        Ok(Bcast::Rhs)
    } else {
        Err(Error::ShapeMismatch {
            op,
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        })
    }
}

fn zip_bcast<T: Real>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    mode: Bcast,
    f: impl Fn(T, T) -> T,
) -> Tensor<T> {
    match mode {
        Bcast::Same => a.zip_map(b, f).expect("same shape"),
        Bcast::Lhs => {
            let s = a.item();
            b.map(|v| f(s, v))
        }
        Bcast::Rhs => {
            let s = b.item();
            a.map(|v| f(v, s))
        }
    }
}

/// Reduces a full-size gradient to the operand's shape.
fn reduce_to<T: Real>(g: Tensor<T>, shape: &[usize]) -> Tensor<T> {
    if g.shape() == shape {
        g
    } else {
        Tensor::full(shape, g.sum())
    }
}

fn elementwise<T: Real>(
    op: &'static str,
    a: &Var<T>,
    b: &Var<T>,
    f: impl Fn(T, T) -> T,
    // (grad, a, b) -> (d/da, d/db) pointwise factors
    df: impl Fn(T, T, T) -> (T, T) + 'static,
) -> Result<Var<T>> {
    let mode = bcast_mode(op, a.shape(), b.shape())?;
    let value = zip_bcast(a.value(), b.value(), mode, f);
    Ok(Var::from_op(
        op,
        value,
        vec![a.clone(), b.clone()],
        Box::new(move |g, inputs, out, needs| {
            let (x, y) = (inputs[0], inputs[1]);
            let n = out.len();
            let pick = |t: &Tensor<T>, i: usize| {
                if t.len() == 1 {
                    t.data()[0]
                } else {
                    t.data()[i]
                }
            };
            let mut ga = Vec::with_capacity(if needs[0] { n } else { 0 });
            let mut gb = Vec::with_capacity(if needs[1] { n } else { 0 });
            for i in 0..n {
                let (da, db) = df(g.data()[i], pick(x, i), pick(y, i));
                if needs[0] {
                    ga.push(da);
                }
                if needs[1] {
                    gb.push(db);
                }
            }
            let full = |v: Vec<T>| Tensor::new(out.shape(), v);
            Ok(vec![
                if needs[0] {
                    Some(reduce_to(full(ga)?, x.shape()))
                } else {
                    None
                },
                if needs[1] {
                    Some(reduce_to(full(gb)?, y.shape()))
                } else {
                    None
                },
            ])
        }),
    ))
}

pub fn add<T: Real>(a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
    elementwise("add", a, b, |x, y| x + y, |g, _, _| (g, g))
}

pub fn sub<T: Real>(a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
    elementwise("sub", a, b, |x, y| x - y, |g, _, _| (g, -g))
}

/// Hadamard product.
pub fn mul<T: Real>(a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
    elementwise("mul", a, b, |x, y| x * y, |g, x, y| (g * y, g * x))
}

/// Elementwise maximum; ties route the gradient to `a`.
pub fn maximum<T: Real>(a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
    elementwise(
        "maximum",
        a,
        b,
        |x, y| if x >= y { x } else { y },
        |g, x, y| {
            if x >= y {
                (g, T::zero())
            } else {
                (T::zero(), g)
            }
        },
    )
}

/// Sum of several equally shaped vars.
pub fn add_all<T: Real>(terms: &[Var<T>]) -> Result<Var<T>> {
    let (first, rest) = terms
        .split_first()
        .ok_or_else(|| Error::Config("add_all of nothing".into()))?;
    for t in rest {
        if t.shape() != first.shape() {
            return Err(Error::ShapeMismatch {
                op: "add_all",
                lhs: first.shape().to_vec(),
                rhs: t.shape().to_vec(),
            });
        }
    }
    let mut value = first.value().clone();
    for t in rest {
        value.add_assign(t.value())?;
    }
    Ok(Var::from_op(
        "add_all",
        value,
        terms.to_vec(),
        Box::new(|g, _, _, needs| Ok(needs.iter().map(|&n| n.then(|| g.clone())).collect())),
    ))
}

fn unary<T: Real>(
    op: &'static str,
    x: &Var<T>,
    f: impl Fn(T) -> T,
    // (grad, input, output) -> input gradient
    df: impl Fn(T, T, T) -> T + 'static,
) -> Var<T> {
    Var::from_op(
        op,
        x.value().map(f),
        vec![x.clone()],
        Box::new(move |g, inputs, out, _| {
            let data = g
                .data()
                .iter()
                .zip(inputs[0].data())
                .zip(out.data())
                .map(|((&g, &x), &y)| df(g, x, y))
                .collect();
            Ok(vec![Some(Tensor::new(out.shape(), data)?)])
        }),
    )
}

pub fn scale<T: Real>(x: &Var<T>, k: T) -> Var<T> {
    unary("scale", x, move |v| v * k, move |g, _, _| g * k)
}

pub fn sigmoid<T: Real>(x: &Var<T>) -> Var<T> {
    unary(
        "sigmoid",
        x,
        |v| T::one() / (T::one() + (-v).exp()),
        |g, _, y| g * y * (T::one() - y),
    )
}

pub fn tanh<T: Real>(x: &Var<T>) -> Var<T> {
    unary("tanh", x, |v| v.tanh(), |g, _, y| g * (T::one() - y * y))
}

/// Absolute value; the subgradient at zero is zero.
pub fn abs<T: Real>(x: &Var<T>) -> Var<T> {
    unary(
        "abs",
        x,
        |v| v.abs(),
        |g, x, _| {
            if x > T::zero() {
                g
            } else if x < T::zero() {
                -g
            } else {
                T::zero()
            }
        },
    )
}

/// Parametric ReLU with one learnable slope per channel (axis 1).
pub fn prelu<T: Real>(x: &Var<T>, slope: &Var<T>) -> Result<Var<T>> {
    let shape = x.shape();
    if shape.len() < 2 {
        return Err(Error::dim("prelu", "rank", ">= 2", shape.len()));
    }
    let channels = shape[1];
    if slope.value().len() != channels {
        return Err(Error::dim(
            "prelu",
            "channel",
            channels,
            slope.value().len(),
        ));
    }
    let inner: usize = shape[2..].iter().product();
    let a = slope.value().data();
    let mut out = x.value().clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        if *v < T::zero() {
            *v *= a[(i / inner) % channels];
        }
    }
    Ok(Var::from_op(
        "prelu",
        out,
        vec![x.clone(), slope.clone()],
        Box::new(move |g, inputs, _, needs| {
            let (x, a) = (inputs[0], inputs[1].data());
            let mut gx = needs[0].then(|| Tensor::zeros(x.shape()));
            let mut ga = needs[1].then(|| vec![T::zero(); channels]);
            for (i, (&gv, &xv)) in g.data().iter().zip(x.data()).enumerate() {
                let c = (i / inner) % channels;
                let neg = xv < T::zero();
                if let Some(gx) = gx.as_mut() {
                    gx.data_mut()[i] = if neg { gv * a[c] } else { gv };
                }
                if let Some(ga) = ga.as_mut() {
                    if neg {
                        ga[c] += gv * xv;
                    }
                }
            }
            let ga = match ga {
                Some(v) => Some(Tensor::new(inputs[1].shape(), v)?),
                None => None,
            };
            Ok(vec![gx, ga])
        }),
    ))
}

pub fn sum<T: Real>(x: &Var<T>) -> Var<T> {
    Var::from_op(
        "sum",
        Tensor::scalar(x.value().sum()),
        vec![x.clone()],
        Box::new(|g, inputs, _, _| Ok(vec![Some(Tensor::full(inputs[0].shape(), g.item()))])),
    )
}

pub fn mean<T: Real>(x: &Var<T>) -> Var<T> {
    let n = T::from_usize(x.value().len()).expect("length fits the scalar type");
    Var::from_op(
        "mean",
        Tensor::scalar(x.value().mean()),
        vec![x.clone()],
        Box::new(move |g, inputs, _, _| {
            Ok(vec![Some(Tensor::full(inputs[0].shape(), g.item() / n))])
        }),
    )
}

pub fn reshape<T: Real>(x: &Var<T>, shape: &[usize]) -> Result<Var<T>> {
    let value = x.value().reshape(shape)?;
    Ok(Var::from_op(
        "reshape",
        value,
        vec![x.clone()],
        Box::new(|g, inputs, _, _| Ok(vec![Some(g.reshape(inputs[0].shape())?)])),
    ))
}

pub fn concat<T: Real>(items: &[Var<T>], axis: usize) -> Result<Var<T>> {
    let values: Vec<&Tensor<T>> = items.iter().map(|v| v.value()).collect();
    let value = Tensor::concat(&values, axis)?;
    let sizes: Vec<usize> = items.iter().map(|v| v.shape()[axis]).collect();
    Ok(Var::from_op(
        "concat",
        value,
        items.to_vec(),
        Box::new(move |g, _, _, _| Ok(g.split(axis, &sizes)?.into_iter().map(Some).collect())),
    ))
}

/// Inverse of [`concat`]: one node per piece along `axis`.
pub fn split<T: Real>(x: &Var<T>, axis: usize, sizes: &[usize]) -> Result<Vec<Var<T>>> {
    let pieces = x.value().split(axis, sizes)?;
    let sizes = sizes.to_vec();
    Ok(pieces
        .into_iter()
        .enumerate()
        .map(|(k, value)| {
            let sizes = sizes.clone();
            Var::from_op(
                "split",
                value,
                vec![x.clone()],
                Box::new(move |g, inputs, _, _| {
                    let shape = inputs[0].shape();
                    let parts: Vec<Tensor<T>> = sizes
                        .iter()
                        .enumerate()
                        .map(|(j, &s)| {
                            if j == k {
                                g.clone()
                            } else {
                                let mut sh = shape.to_vec();
                                sh[axis] = s;
                                Tensor::zeros(&sh)
                            }
                        })
                        .collect();
                    let refs: Vec<&Tensor<T>> = parts.iter().collect();
                    Ok(vec![Some(Tensor::concat(&refs, axis)?)])
                }),
            )
        })
        .collect())
}

fn conv_node<T: Real>(
    op: &'static str,
    x: &Var<T>,
    w: &Var<T>,
    bias: Option<&Var<T>>,
    g: Geometry,
    out_shape: Vec<usize>,
) -> Result<Var<T>> {
    if let Some(b) = bias {
        if b.value().len() != g.c_out {
            return Err(Error::dim(op, "bias", g.c_out, b.value().len()));
        }
    }
    let y = conv::conv_forward(
        &g,
        x.value().data(),
        w.value().data(),
        bias.map(|b| b.value().data()),
    );
    let mut parents = vec![x.clone(), w.clone()];
    parents.extend(bias.cloned());
    Ok(Var::from_op(
        op,
        Tensor::new(&out_shape, y)?,
        parents,
        Box::new(move |gy, inputs, _, needs| {
            let (x, w) = (inputs[0], inputs[1]);
            let gx = if needs[0] {
                Some(Tensor::new(
                    x.shape(),
                    conv::conv_backward_input(&g, gy.data(), w.data()),
                )?)
            } else {
                None
            };
            let gw = if needs[1] {
                Some(Tensor::new(
                    w.shape(),
                    conv::conv_backward_weight(&g, x.data(), gy.data()),
                )?)
            } else {
                None
            };
            let mut out = vec![gx, gw];
            if inputs.len() == 3 {
                out.push(if needs[2] {
                    Some(Tensor::new(
                        inputs[2].shape(),
                        conv::conv_backward_bias(&g, gy.data()),
                    )?)
                } else {
                    None
                });
            }
            Ok(out)
        }),
    ))
}

/// Volumetric (or grouped) convolution, `x [n, c, d, h, w]`.
pub fn conv3d<T: Real>(
    x: &Var<T>,
    w: &Var<T>,
    bias: Option<&Var<T>>,
    spec: ConvSpec,
) -> Result<Var<T>> {
    let g = Geometry::new(x.shape(), w.shape(), spec, "conv3d")?;
    conv_node("conv3d", x, w, bias, g, g.output_shape().to_vec())
}

/// Planar convolution, `x [n, c, h, w]`, `w [o, c / groups, kh, kw]`.
pub fn conv2d<T: Real>(
    x: &Var<T>,
    w: &Var<T>,
    bias: Option<&Var<T>>,
    stride: usize,
    padding: usize,
    groups: usize,
) -> Result<Var<T>> {
    if x.shape().len() != 4 {
        return Err(Error::dim("conv2d", "rank", 4, x.shape().len()));
    }
    if w.shape().len() != 4 {
        return Err(Error::dim("conv2d", "weight rank", 4, w.shape().len()));
    }
    let spec = ConvSpec::planar(stride, padding).with_groups(groups);
    let g = Geometry::new(
        &conv::planar_to_volume(x.shape()),
        &conv::planar_to_volume(w.shape()),
        spec,
        "conv2d",
    )?;
    let [n, c, _, h, wd] = g.output_shape();
    conv_node("conv2d", x, w, bias, g, vec![n, c, h, wd])
}

/// Transposed volumetric convolution, `w [c_in, c_out / groups, kd, kh, kw]`.
pub fn conv_transpose3d<T: Real>(
    x: &Var<T>,
    w: &Var<T>,
    bias: Option<&Var<T>>,
    spec: ConvSpec,
    output_hint: Option<[usize; 3]>,
) -> Result<Var<T>> {
    let g = conv::transpose_geometry(x.shape(), w.shape(), spec, output_hint)?;
    if let Some(b) = bias {
        if b.value().len() != g.c_in {
            return Err(Error::dim(
                "conv_transpose",
                "bias",
                g.c_in,
                b.value().len(),
            ));
        }
    }
    let mut y = conv::conv_backward_input(&g, x.value().data(), w.value().data());
    let plane: usize = g.input.iter().product();
    if let Some(b) = bias {
        let bd = b.value().data();
        for (i, v) in y.iter_mut().enumerate() {
            *v += bd[(i / plane) % g.c_in];
        }
    }
    let mut parents = vec![x.clone(), w.clone()];
    parents.extend(bias.cloned());
    Ok(Var::from_op(
        "conv_transpose3d",
        Tensor::new(&g.input_shape(), y)?,
        parents,
        Box::new(move |gy, inputs, _, needs| {
            let (x, w) = (inputs[0], inputs[1]);
            let gx = if needs[0] {
                Some(Tensor::new(
                    x.shape(),
                    conv::conv_forward(&g, gy.data(), w.data(), None),
                )?)
            } else {
                None
            };
            let gw = if needs[1] {
                Some(Tensor::new(
                    w.shape(),
                    conv::conv_backward_weight(&g, gy.data(), x.data()),
                )?)
            } else {
                None
            };
            let mut out = vec![gx, gw];
            if inputs.len() == 3 {
                out.push(if needs[2] {
                    let mut gb = vec![T::zero(); g.c_in];
                    for (i, &v) in gy.data().iter().enumerate() {
                        gb[(i / plane) % g.c_in] += v;
                    }
                    Some(Tensor::new(inputs[2].shape(), gb)?)
                } else {
                    None
                });
            }
            Ok(out)
        }),
    ))
}
