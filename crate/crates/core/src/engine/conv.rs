//! im2col + GEMM convolution kernels.
//!
//! Everything is expressed over three spatial axes `[depth, height, width]`;
//! planar convolution is the `depth == 1` case. Layouts are
//! `input [n, c_in, d, h, w]`, `weight [c_out, c_in / groups, kd, kh, kw]`.
//! The transposed convolution reuses the same three kernels with the roles
//! of input and output swapped.

use std::any::{Any, TypeId};
use std::cell::RefCell;
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Upper bound on the number of elements in one im2col buffer.
const COL_BUDGET: usize = 1 << 20;

/// Stride, zero padding and group count of a convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub groups: usize,
}

impl ConvSpec {
    pub fn uniform(stride: usize, padding: usize) -> Self {
        Self {
            stride: [stride; 3],
            padding: [padding; 3],
            groups: 1,
        }
    }

    /// Planar convolution: no stride or padding along depth.
    pub fn planar(stride: usize, padding: usize) -> Self {
        Self {
            stride: [1, stride, stride],
            padding: [0, padding, padding],
            groups: 1,
        }
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    /// Padding that keeps spatial size for odd kernels at stride one.
    pub fn same(kernel: [usize; 3]) -> Self {
        Self {
            stride: [1; 3],
            padding: [kernel[0] / 2, kernel[1] / 2, kernel[2] / 2],
            groups: 1,
        }
    }
}

/// Resolved sizes of one forward convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Geometry {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub groups: usize,
    pub input: [usize; 3],
    pub kernel: [usize; 3],
    pub output: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

const AXES: [&str; 3] = ["depth", "height", "width"];

impl Geometry {
    /// Validates a 5-D input / weight pair and derives the output extent.
    pub fn new(
        input: &[usize],
        weight: &[usize],
        spec: ConvSpec,
        op: &'static str,
    ) -> Result<Self> {
        if input.len() != 5 {
            return Err(Error::dim(op, "rank", 5, input.len()));
        }
        if weight.len() != 5 {
            return Err(Error::dim(op, "weight rank", 5, weight.len()));
        }
        let groups = spec.groups;
        if groups == 0 || input[1] % groups != 0 || weight[0] % groups != 0 {
            return Err(Error::Config(format!(
                "{op}: groups {groups} must divide input channels {} and output channels {}",
                input[1], weight[0]
            )));
        }
        if weight[1] * groups != input[1] {
            return Err(Error::dim(op, "channel", input[1] / groups, weight[1]));
        }
        let mut output = [0; 3];
        for a in 0..3 {
            if spec.stride[a] == 0 {
                return Err(Error::Config(format!("{op}: zero stride on {}", AXES[a])));
            }
            let padded = input[2 + a] + 2 * spec.padding[a];
            if padded < weight[2 + a] {
                return Err(Error::dim(
                    op,
                    AXES[a],
                    format!(">= {}", weight[2 + a]),
                    padded,
                ));
            }
            output[a] = (padded - weight[2 + a]) / spec.stride[a] + 1;
        }
        Ok(Self {
            batch: input[0],
            c_in: input[1],
            c_out: weight[0],
            groups,
            input: [input[2], input[3], input[4]],
            kernel: [weight[2], weight[3], weight[4]],
            output,
            stride: spec.stride,
            padding: spec.padding,
        })
    }

    pub fn input_shape(&self) -> [usize; 5] {
        [
            self.batch,
            self.c_in,
            self.input[0],
            self.input[1],
            self.input[2],
        ]
    }

    pub fn output_shape(&self) -> [usize; 5] {
        [
            self.batch,
            self.c_out,
            self.output[0],
            self.output[1],
            self.output[2],
        ]
    }

    pub fn weight_shape(&self) -> [usize; 5] {
        [
            self.c_out,
            self.c_in / self.groups,
            self.kernel[0],
            self.kernel[1],
            self.kernel[2],
        ]
    }

    fn kernel_volume(&self) -> usize {
        self.kernel.iter().product()
    }

    fn in_plane(&self) -> usize {
        self.input.iter().product()
    }

    fn out_plane(&self) -> usize {
        self.output.iter().product()
    }

    /// Rows of the im2col matrix for one group.
    fn col_rows(&self) -> usize {
        self.c_in / self.groups * self.kernel_volume()
    }

    fn chunk(&self) -> usize {
        (COL_BUDGET / self.col_rows().max(1)).clamp(1, self.out_plane())
    }
}

/// One run of consecutive output positions along the width axis that read
/// from the same input row, or from zero padding.
#[derive(Clone, Copy)]
struct Run {
    /// Offset of the run's first position inside the column block.
    col: usize,
    /// Input offset of the first tap, `None` over padding.
    input: Option<usize>,
    len: usize,
}

/// Splits output positions `[p0, p1)` into [`Run`]s for kernel offset
/// `(kz, ky, kx)`. Inside a run the input advances by the width stride.
#[inline]
fn for_each_run(
    g: &Geometry,
    p0: usize,
    p1: usize,
    kz: usize,
    ky: usize,
    kx: usize,
    mut f: impl FnMut(Run),
) {
    let [_, oh, ow] = g.output;
    let [id, ih, iw] = g.input;
    let [sz, sy, sx] = g.stride;
    let [pz, py, px] = g.padding;
    // width positions whose tap lands inside the input
    let lo = if px > kx { (px - kx).div_ceil(sx) } else { 0 };
    let hi = if iw + px > kx {
        (iw - 1 + px - kx) / sx + 1
    } else {
        0
    };
    let mut p = p0;
    while p < p1 {
        let oz = p / (oh * ow);
        let oy = (p / ow) % oh;
        let ox0 = p % ow;
        let ox1 = ox0 + ((p - ox0 + ow).min(p1) - p);
        let col = p - p0;
        let iz = (oz * sz + kz) as isize - pz as isize;
        let iy = (oy * sy + ky) as isize - py as isize;
        if iz < 0 || iz as usize >= id || iy < 0 || iy as usize >= ih {
            f(Run {
                col,
                input: None,
                len: ox1 - ox0,
            });
        } else {
            let (a, b) = (
                lo.clamp(ox0, ox1),
                hi.clamp(ox0, ox1).max(lo.clamp(ox0, ox1)),
            );
            if a > ox0 {
                f(Run {
                    col,
                    input: None,
                    len: a - ox0,
                });
            }
            if b > a {
                let base = (iz as usize * ih + iy as usize) * iw;
                f(Run {
                    col: col + a - ox0,
                    input: Some(base + a * sx + kx - px),
                    len: b - a,
                });
            }
            if ox1 > b {
                f(Run {
                    col: col + b - ox0,
                    input: None,
                    len: ox1 - b,
                });
            }
        }
        p += ox1 - ox0;
    }
}

/// Fills `col` (`rows x (p1 - p0)`) from one group of one image.
fn im2col<T: Real>(g: &Geometry, image: &[T], p0: usize, p1: usize, col: &mut [T]) {
    let ncols = p1 - p0;
    let [kd, kh, kw] = g.kernel;
    let plane = g.in_plane();
    let sx = g.stride[2];
    let mut row = 0;
    for c in 0..g.c_in / g.groups {
        let src = &image[c * plane..(c + 1) * plane];
        for kz in 0..kd {
            for ky in 0..kh {
                for kx in 0..kw {
                    let dst = &mut col[row * ncols..(row + 1) * ncols];
                    for_each_run(g, p0, p1, kz, ky, kx, |r| {
                        let out = &mut dst[r.col..r.col + r.len];
                        match r.input {
                            None => out.fill(T::zero()),
                            Some(i) if sx == 1 => out.copy_from_slice(&src[i..i + r.len]),
                            Some(i) => out
                                .iter_mut()
                                .enumerate()
                                .for_each(|(j, v)| *v = src[i + j * sx]),
                        }
                    });
                    row += 1;
                }
            }
        }
    }
}

/// Scatters-adds `col` back into one group of one image.
fn col2im<T: Real>(g: &Geometry, col: &[T], p0: usize, p1: usize, image: &mut [T]) {
    let ncols = p1 - p0;
    let [kd, kh, kw] = g.kernel;
    let plane = g.in_plane();
    let sx = g.stride[2];
    let mut row = 0;
    for c in 0..g.c_in / g.groups {
        let dst = &mut image[c * plane..(c + 1) * plane];
        for kz in 0..kd {
            for ky in 0..kh {
                for kx in 0..kw {
                    let src = &col[row * ncols..(row + 1) * ncols];
                    for_each_run(g, p0, p1, kz, ky, kx, |r| {
                        let Some(i) = r.input else { return };
                        let from = &src[r.col..r.col + r.len];
                        if sx == 1 {
                            dst[i..i + r.len]
                                .iter_mut()
                                .zip(from)
                                .for_each(|(d, v)| *d += *v);
                        } else {
                            from.iter()
                                .enumerate()
                                .for_each(|(j, v)| dst[i + j * sx] += *v);
                        }
                    });
                    row += 1;
                }
            }
        }
    }
}

thread_local! {
    static SCRATCH: RefCell<HashMap<TypeId, Box<dyn Any>>> = RefCell::new(HashMap::new());
}

/// Runs `f` on a per-thread buffer of `len` elements with unspecified
/// contents, so the im2col matrix is not reallocated and zeroed per call.
fn with_scratch<T: Real, R>(len: usize, f: impl FnOnce(&mut [T]) -> R) -> R {
    let key = TypeId::of::<T>();
    let taken = SCRATCH.with(|s| s.borrow_mut().remove(&key));
    let mut buf: Vec<T> = taken
        .and_then(|b| b.downcast::<Vec<T>>().ok())
        .map(|b| *b)
        .unwrap_or_default();
    if buf.len() < len {
        buf.resize(len, T::zero());
    }
    let out = f(&mut buf[..len]);
    SCRATCH.with(|s| s.borrow_mut().insert(key, Box::new(buf)));
    out
}

fn chunks(total: usize, step: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..total)
        .step_by(step)
        .map(move |p0| (p0, (p0 + step).min(total)))
}

/// `y = conv(x, w) + bias`, returned with shape `g.output_shape()`.
pub fn conv_forward<T: Real>(g: &Geometry, x: &[T], w: &[T], bias: Option<&[T]>) -> Vec<T> {
    let (cin_g, cout_g) = (g.c_in / g.groups, g.c_out / g.groups);
    let (in_plane, out_plane, rows) = (g.in_plane(), g.out_plane(), g.col_rows());
    let step = g.chunk();
    let mut y = vec![T::zero(); g.batch * g.c_out * out_plane];
    with_scratch(rows * step, |col: &mut [T]| {
        for n in 0..g.batch {
            for grp in 0..g.groups {
                let image = &x[(n * g.c_in + grp * cin_g) * in_plane
                    ..(n * g.c_in + (grp + 1) * cin_g) * in_plane];
                let wg = &w[grp * cout_g * rows..(grp + 1) * cout_g * rows];
                let out_base = (n * g.c_out + grp * cout_g) * out_plane;
                for (p0, p1) in chunks(out_plane, step) {
                    let nc = p1 - p0;
                    im2col(g, image, p0, p1, col);
                    let out = &mut y[out_base + p0..out_base + (cout_g - 1) * out_plane + p1];
                    T::gemm(
                        cout_g,
                        rows,
                        nc,
                        T::one(),
                        wg,
                        (rows as isize, 1),
                        col,
                        (nc as isize, 1),
                        T::zero(),
                        out,
                        (out_plane as isize, 1),
                    );
                }
            }
        }
    });
    if let Some(b) = bias {
        for n in 0..g.batch {
            for c in 0..g.c_out {
                let base = (n * g.c_out + c) * out_plane;
                y[base..base + out_plane]
                    .iter_mut()
                    .for_each(|v| *v += b[c]);
            }
        }
    }
    y
}

/// Gradient of `conv_forward` with respect to its input, given `gy` of the
/// output shape. This is also the forward pass of a transposed convolution.
pub fn conv_backward_input<T: Real>(g: &Geometry, gy: &[T], w: &[T]) -> Vec<T> {
    let (cin_g, cout_g) = (g.c_in / g.groups, g.c_out / g.groups);
    let (in_plane, out_plane, rows) = (g.in_plane(), g.out_plane(), g.col_rows());
    let step = g.chunk();
    let mut gx = vec![T::zero(); g.batch * g.c_in * in_plane];
    with_scratch(rows * step, |col: &mut [T]| {
        for n in 0..g.batch {
            for grp in 0..g.groups {
                let wg = &w[grp * cout_g * rows..(grp + 1) * cout_g * rows];
                let gy_base = (n * g.c_out + grp * cout_g) * out_plane;
                let image = &mut gx[(n * g.c_in + grp * cin_g) * in_plane
                    ..(n * g.c_in + (grp + 1) * cin_g) * in_plane];
                for (p0, p1) in chunks(out_plane, step) {
                    let nc = p1 - p0;
                    let gyv = &gy[gy_base + p0..gy_base + (cout_g - 1) * out_plane + p1];
                    T::gemm(
                        rows,
                        cout_g,
                        nc,
                        T::one(),
                        wg,
                        (1, rows as isize),
                        gyv,
                        (out_plane as isize, 1),
                        T::zero(),
                        col,
                        (nc as isize, 1),
                    );
                    col2im(g, col, p0, p1, image);
                }
            }
        }
    });
    gx
}

/// Gradient of `conv_forward` with respect to the weight.
pub fn conv_backward_weight<T: Real>(g: &Geometry, x: &[T], gy: &[T]) -> Vec<T> {
    let (cin_g, cout_g) = (g.c_in / g.groups, g.c_out / g.groups);
    let (in_plane, out_plane, rows) = (g.in_plane(), g.out_plane(), g.col_rows());
    let step = g.chunk();
    let mut gw = vec![T::zero(); g.c_out * rows];
    with_scratch(rows * step, |col: &mut [T]| {
        for n in 0..g.batch {
            for grp in 0..g.groups {
                let image = &x[(n * g.c_in + grp * cin_g) * in_plane
                    ..(n * g.c_in + (grp + 1) * cin_g) * in_plane];
                let gy_base = (n * g.c_out + grp * cout_g) * out_plane;
                let gwg = &mut gw[grp * cout_g * rows..(grp + 1) * cout_g * rows];
                for (p0, p1) in chunks(out_plane, step) {
                    let nc = p1 - p0;
                    im2col(g, image, p0, p1, col);
                    let gyv = &gy[gy_base + p0..gy_base + (cout_g - 1) * out_plane + p1];
                    T::gemm(
                        cout_g,
                        nc,
                        rows,
                        T::one(),
                        gyv,
                        (out_plane as isize, 1),
                        col,
                        (1, nc as isize),
                        T::one(),
                        gwg,
                        (rows as isize, 1),
                    );
                }
            }
        }
    });
    gw
}

/// Per-output-channel sum of `gy`.
pub fn conv_backward_bias<T: Real>(g: &Geometry, gy: &[T]) -> Vec<T> {
    let out_plane = g.out_plane();
    let mut gb = vec![T::zero(); g.c_out];
    for n in 0..g.batch {
        for (c, acc) in gb.iter_mut().enumerate() {
            let base = (n * g.c_out + c) * out_plane;
            *acc += gy[base..base + out_plane].iter().copied().sum::<T>();
        }
    }
    gb
}

/// Geometry of a transposed convolution, expressed as the forward convolution
/// it is the adjoint of. `input` is the transposed conv's input
/// `[n, c_in, d, h, w]`, `weight` is `[c_in, c_out / groups, kd, kh, kw]`, and
/// `output_hint` picks the output extent among the `stride` candidates.
pub fn transpose_geometry(
    input: &[usize],
    weight: &[usize],
    spec: ConvSpec,
    output_hint: Option<[usize; 3]>,
) -> Result<Geometry> {
    const OP: &str = "conv_transpose";
    if input.len() != 5 {
        return Err(Error::dim(OP, "rank", 5, input.len()));
    }
    if weight.len() != 5 {
        return Err(Error::dim(OP, "weight rank", 5, weight.len()));
    }
    if weight[0] != input[1] {
        return Err(Error::dim(OP, "channel", input[1], weight[0]));
    }
    let mut out = [0; 3];
    for a in 0..3 {
        let s = spec.stride[a];
        if s == 0 {
            return Err(Error::Config(format!("{OP}: zero stride on {}", AXES[a])));
        }
        let base = ((input[2 + a] - 1) * s + weight[2 + a]) as isize - 2 * spec.padding[a] as isize;
        if base < 1 {
            return Err(Error::dim(OP, AXES[a], ">= 1", base));
        }
        let base = base as usize;
        out[a] = match output_hint {
            None => base,
            Some(h) if h[a] >= base && h[a] < base + s => h[a],
            Some(h) => {
                return Err(Error::dim(
                    OP,
                    AXES[a],
                    format!("{base}..{}", base + s - 1),
                    h[a],
                ));
            }
        };
    }
    let conv_input = [input[0], weight[1] * spec.groups, out[0], out[1], out[2]];
    let g = Geometry::new(&conv_input, weight, spec, OP)?;
    debug_assert_eq!(&g.output, &[input[2], input[3], input[4]]);
    Ok(g)
}

/// Promotes `[n, c, h, w]` to `[n, c, 1, h, w]`.
pub(crate) fn planar_to_volume(shape: &[usize]) -> Vec<usize> {
    vec![shape[0], shape[1], 1, shape[2], shape[3]]
}

// -- Tensor-level entry points (no gradient tracking) -------------------------

fn bias_slice<'a, T: Real>(
    bias: Option<&'a Tensor<T>>,
    c_out: usize,
    op: &'static str,
) -> Result<Option<&'a [T]>> {
    match bias {
        None => Ok(None),
        Some(b) if b.len() == c_out => Ok(Some(b.data())),
        Some(b) => Err(Error::dim(op, "bias", c_out, b.len())),
    }
}

/// Volumetric convolution on `[n, c, d, h, w]` tensors.
pub fn conv3d<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: ConvSpec,
) -> Result<Tensor<T>> {
    let g = Geometry::new(x.shape(), w.shape(), spec, "conv3d")?;
    let b = bias_slice(bias, g.c_out, "conv3d")?;
    Tensor::new(&g.output_shape(), conv_forward(&g, x.data(), w.data(), b))
}

/// Planar convolution on `[n, c, h, w]` tensors.
pub fn conv2d<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    grouped_conv2d(x, w, bias, stride, padding, 1)
}

pub fn grouped_conv2d<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
    groups: usize,
) -> Result<Tensor<T>> {
    if x.ndim() != 4 {
        return Err(Error::dim("conv2d", "rank", 4, x.ndim()));
    }
    if w.ndim() != 4 {
        return Err(Error::dim("conv2d", "weight rank", 4, w.ndim()));
    }
    let spec = ConvSpec::planar(stride, padding).with_groups(groups);
    let g = Geometry::new(
        &planar_to_volume(x.shape()),
        &planar_to_volume(w.shape()),
        spec,
        "conv2d",
    )?;
    let b = bias_slice(bias, g.c_out, "conv2d")?;
    let [n, c, _, h, wd] = g.output_shape();
    Tensor::new(&[n, c, h, wd], conv_forward(&g, x.data(), w.data(), b))
}

/// Transposed volumetric convolution; `w` is `[c_in, c_out / groups, kd, kh, kw]`.
pub fn conv_transpose3d<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: ConvSpec,
    output_hint: Option<[usize; 3]>,
) -> Result<Tensor<T>> {
    let g = transpose_geometry(x.shape(), w.shape(), spec, output_hint)?;
    let mut y = conv_backward_input(&g, x.data(), w.data());
    if let Some(b) = bias_slice(bias, g.c_in, "conv_transpose")? {
        let plane = g.in_plane();
        for (i, v) in y.iter_mut().enumerate() {
            *v += b[(i / plane) % g.c_in];
        }
    }
    Tensor::new(&g.input_shape(), y)
}

/// Transposed planar convolution; `w` is `[c_in, c_out, kh, kw]`.
pub fn conv_transpose2d<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
    output_hint: Option<[usize; 2]>,
) -> Result<Tensor<T>> {
    if x.ndim() != 4 {
        return Err(Error::dim("conv_transpose", "rank", 4, x.ndim()));
    }
    if w.ndim() != 4 {
        return Err(Error::dim("conv_transpose", "weight rank", 4, w.ndim()));
    }
    let x5 = x.reshape(&planar_to_volume(x.shape()))?;
    let w5 = w.reshape(&planar_to_volume(w.shape()))?;
    let y = conv_transpose3d(
        &x5,
        &w5,
        bias,
        ConvSpec::planar(stride, padding),
        output_hint.map(|[h, w]| [1, h, w]),
    )?;
    let s = y.shape().to_vec();
    y.into_reshaped(&[s[0], s[1], s[3], s[4]])
}
