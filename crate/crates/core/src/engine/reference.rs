//! Direct nested-loop convolutions.
//!
//! These are the permanent oracles the im2col path is tested against. They
//! share no code with [`conv`](super::conv) and always accumulate in `f64`.

use crate::scalar::Real;
use crate::tensor::Tensor;

/// Planar cross-correlation, `x [n, c, h, w]`, `w [o, c / groups, kh, kw]`.
pub fn conv2d_naive<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
    groups: usize,
) -> Tensor<T> {
    let &[n, c, h, wd] = x.shape() else {
        panic!("conv2d_naive: rank")
    };
    let &[o, cg, kh, kw] = w.shape() else {
        panic!("conv2d_naive: weight rank")
    };
    assert_eq!(cg * groups, c);
    let oh = (h + 2 * padding - kh) / stride + 1;
    let ow = (wd + 2 * padding - kw) / stride + 1;
    let og = o / groups;
    let mut out = Tensor::zeros(&[n, o, oh, ow]);
    for b in 0..n {
        for oc in 0..o {
            let grp = oc / og;
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = bias.map_or(0.0, |bv| bv.data()[oc].to_f64_lossy());
                    for ic in 0..cg {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (y * stride + ky) as isize - padding as isize;
                                let ix = (xx * stride + kx) as isize - padding as isize;
                                if iy < 0 || ix < 0 || iy as usize >= h || ix as usize >= wd {
                                    continue;
                                }
                                let xv = x.get(&[b, grp * cg + ic, iy as usize, ix as usize]);
                                acc += xv.to_f64_lossy() * w.get(&[oc, ic, ky, kx]).to_f64_lossy();
                            }
                        }
                    }
                    out.set(&[b, oc, y, xx], T::from_f64_lossy(acc));
                }
            }
        }
    }
    out
}

/// Volumetric cross-correlation, `x [n, c, d, h, w]`, `w [o, c / groups, kd, kh, kw]`.
pub fn conv3d_naive<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: [usize; 3],
    padding: [usize; 3],
    groups: usize,
) -> Tensor<T> {
    let &[n, c, d, h, wd] = x.shape() else {
        panic!("conv3d_naive: rank")
    };
    let &[o, cg, kd, kh, kw] = w.shape() else {
        panic!("conv3d_naive: weight rank")
    };
    assert_eq!(cg * groups, c);
    let ext = [d, h, wd];
    let k = [kd, kh, kw];
    let out_ext: Vec<usize> = (0..3)
        .map(|a| (ext[a] + 2 * padding[a] - k[a]) / stride[a] + 1)
        .collect();
    let og = o / groups;
    let mut out = Tensor::zeros(&[n, o, out_ext[0], out_ext[1], out_ext[2]]);
    for b in 0..n {
        for oc in 0..o {
            let grp = oc / og;
            for z in 0..out_ext[0] {
                for y in 0..out_ext[1] {
                    for xx in 0..out_ext[2] {
                        let mut acc = bias.map_or(0.0, |bv| bv.data()[oc].to_f64_lossy());
                        for ic in 0..cg {
                            for kz in 0..kd {
                                for ky in 0..kh {
                                    for kx in 0..kw {
                                        let iz =
                                            (z * stride[0] + kz) as isize - padding[0] as isize;
                                        let iy =
                                            (y * stride[1] + ky) as isize - padding[1] as isize;
                                        let ix =
                                            (xx * stride[2] + kx) as isize - padding[2] as isize;
                                        if iz < 0 || iy < 0 || ix < 0 {
                                            continue;
                                        }
                                        let (iz, iy, ix) = (iz as usize, iy as usize, ix as usize);
                                        if iz >= d || iy >= h || ix >= wd {
                                            continue;
                                        }
                                        let xv =
                                            x.get(&[b, grp * cg + ic, iz, iy, ix]).to_f64_lossy();
                                        acc += xv * w.get(&[oc, ic, kz, ky, kx]).to_f64_lossy();
                                    }
                                }
                            }
                        }
                        out.set(&[b, oc, z, y, xx], T::from_f64_lossy(acc));
                    }
                }
            }
        }
    }
    out
}

/// Transposed volumetric convolution by direct scatter:
/// every input voxel spreads `x * w` into the output window it maps to.
/// `w` is `[c_in, c_out / groups, kd, kh, kw]`, `out_ext` the output extent.
pub fn conv_transpose3d_naive<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: [usize; 3],
    padding: [usize; 3],
    groups: usize,
    out_ext: [usize; 3],
) -> Tensor<T> {
    let &[n, c, d, h, wd] = x.shape() else {
        panic!("conv_transpose3d_naive: rank")
    };
    let &[ci, og, kd, kh, kw] = w.shape() else {
        panic!("conv_transpose3d_naive: weight rank")
    };
    assert_eq!(ci, c);
    let cg = c / groups;
    let o = og * groups;
    let mut acc = vec![0.0f64; n * o * out_ext.iter().product::<usize>()];
    let idx = |b: usize, oc: usize, z: usize, y: usize, xx: usize| {
        (((b * o + oc) * out_ext[0] + z) * out_ext[1] + y) * out_ext[2] + xx
    };
    for b in 0..n {
        for ic in 0..c {
            let grp = ic / cg;
            for z in 0..d {
                for y in 0..h {
                    for xx in 0..wd {
                        let xv = x.get(&[b, ic, z, y, xx]).to_f64_lossy();
                        for oc in 0..og {
                            for kz in 0..kd {
                                for ky in 0..kh {
                                    for kx in 0..kw {
                                        let tz =
                                            (z * stride[0] + kz) as isize - padding[0] as isize;
                                        let ty =
                                            (y * stride[1] + ky) as isize - padding[1] as isize;
                                        let tx =
                                            (xx * stride[2] + kx) as isize - padding[2] as isize;
                                        if tz < 0 || ty < 0 || tx < 0 {
                                            continue;
                                        }
                                        let (tz, ty, tx) = (tz as usize, ty as usize, tx as usize);
                                        if tz >= out_ext[0] || ty >= out_ext[1] || tx >= out_ext[2]
                                        {
                                            continue;
                                        }
                                        let wv = w.get(&[ic, oc, kz, ky, kx]).to_f64_lossy();
                                        acc[idx(b, grp * og + oc, tz, ty, tx)] += xv * wv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    let plane: usize = out_ext.iter().product();
    if let Some(bv) = bias {
        for (i, a) in acc.iter_mut().enumerate() {
            *a += bv.data()[(i / plane) % o].to_f64_lossy();
        }
    }
    Tensor::new(
        &[n, o, out_ext[0], out_ext[1], out_ext[2]],
        acc.into_iter().map(T::from_f64_lossy).collect(),
    )
    .expect("consistent shape")
}
