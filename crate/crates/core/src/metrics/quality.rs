use super::hypercomplex::Hypercomplex;
use super::Planes;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Mean spectral angle in degrees between corresponding pixel vectors.
/// Pixels where either vector is zero are left out.
pub fn sam<T: Real>(fused: &Tensor<T>, reference: &Tensor<T>) -> Result<f64> {
    let (f, r) = Planes::pair("sam", fused, reference)?;
    if fused.ndim() != 3 || f.bands < 2 {
        return Err(Error::dim(
            "sam",
            "bands",
            ">= 2",
            if fused.ndim() == 3 { f.bands } else { 1 },
        ));
    }
    let n = f.pixels();
    let (mut total, mut counted) = (0.0, 0usize);
    let (mut u, mut v) = (vec![0.0; f.bands], vec![0.0; f.bands]);
    for p in 0..n {
        for b in 0..f.bands {
            u[b] = f.data[b * n + p];
            v[b] = r.data[b * n + p];
        }
        let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nu == 0.0 || nv == 0.0 {
            continue;
        }
        // 2 atan2(|u^ - v^|, |u^ + v^|) stays accurate near 0 and 180 degrees
        let (mut diff, mut sum) = (0.0, 0.0);
        for b in 0..f.bands {
            let (x, y) = (u[b] / nu, v[b] / nv);
            diff += (x - y) * (x - y);
            sum += (x + y) * (x + y);
        }
        total += 2.0 * diff.sqrt().atan2(sum.sqrt());
        counted += 1;
    }
    if counted == 0 {
        return Err(Error::UndefinedMetric(
            "sam: every pixel is a zero vector".into(),
        ));
    }
    Ok((total / counted as f64).to_degrees())
}

/// `100 / ratio * sqrt(mean_b (RMSE_b / mu_b)^2)` with `mu_b` the mean of
/// reference band `b`.
pub fn ergas<T: Real>(fused: &Tensor<T>, reference: &Tensor<T>, ratio: usize) -> Result<f64> {
    let (f, r) = Planes::pair("ergas", fused, reference)?;
    if ratio == 0 {
        return Err(Error::Ratio("ergas ratio must be positive".into()));
    }
    let n = f.pixels() as f64;
    let mut acc = 0.0;
    for b in 0..f.bands {
        let mu = r.band(b).iter().sum::<f64>() / n;
        if mu == 0.0 {
            return Err(Error::UndefinedMetric(format!(
                "ergas: reference band {b} has zero mean"
            )));
        }
        let mse = f
            .band(b)
            .iter()
            .zip(r.band(b))
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            / n;
        acc += mse / (mu * mu);
    }
    Ok(100.0 / ratio as f64 * (acc / f.bands as f64).sqrt())
}

/// Top-left corners of the non-overlapping `window x window` blocks.
fn blocks(op: &'static str, h: usize, w: usize, window: usize) -> Result<Vec<(usize, usize)>> {
    if window == 0 || window > h || window > w {
        return Err(Error::dim(
            op,
            "window",
            format!("1..={}", h.min(w)),
            window,
        ));
    }
    let ys = (0..=h - window).step_by(window);
    Ok(ys
        .flat_map(|y| (0..=w - window).step_by(window).map(move |x| (y, x)))
        .collect())
}

/// Mean refined by one correction pass, exact on constant data.
fn mean_of(values: impl Iterator<Item = f64> + Clone, n: f64) -> f64 {
    let m = values.clone().sum::<f64>() / n;
    m + values.map(|v| v - m).sum::<f64>() / n
}

/// Block index from first and second moments. `None` when both blocks are
/// constant zero. With both blocks flat only the luminance term remains;
/// with both means zero only the correlation-contrast term does.
fn block_index(mean_sq: f64, var_sum: f64, numerator_mean: f64, cov: f64) -> Option<f64> {
    match (var_sum == 0.0, mean_sq == 0.0) {
        (true, true) => None,
        (true, false) => Some(2.0 * numerator_mean / mean_sq),
        (false, true) => Some(2.0 * cov / var_sum),
        (false, false) => Some(4.0 * cov * numerator_mean / (var_sum * mean_sq)),
    }
}

fn average(op: &str, values: impl Iterator<Item = f64>) -> Result<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        return Err(Error::UndefinedMetric(format!(
            "{op}: every block is constant zero in both images"
        )));
    }
    Ok(sum / n as f64)
}

fn uiqi_plane(a: &[f64], b: &[f64], h: usize, w: usize, window: usize) -> Result<f64> {
    let corners = blocks("uiqi", h, w, window)?;
    let n = (window * window) as f64;
    let qs = corners.into_iter().filter_map(|(y0, x0)| {
        let idx =
            move || (y0..y0 + window).flat_map(move |y| (x0..x0 + window).map(move |x| y * w + x));
        let ma = mean_of(idx().map(|i| a[i]), n);
        let mb = mean_of(idx().map(|i| b[i]), n);
        let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
        for i in idx() {
            let (da, db) = (a[i] - ma, b[i] - mb);
            va += da * da;
            vb += db * db;
            cov += da * db;
        }
        block_index(ma * ma + mb * mb, (va + vb) / n, ma * mb, cov / n)
    });
    average("uiqi", qs)
}

/// Universal image quality index of two `[H, W]` images, averaged over
/// non-overlapping `window`-sized blocks. Blocks that are constant zero in
/// both images are skipped.
pub fn uiqi<T: Real>(a: &Tensor<T>, b: &Tensor<T>, window: usize) -> Result<f64> {
    if a.ndim() != 2 {
        return Err(Error::dim("uiqi", "rank", 2, a.ndim()));
    }
    let (a, b) = Planes::pair("uiqi", a, b)?;
    uiqi_plane(&a.data, &b.data, a.h, a.w, window)
}

/// Band-wise [`uiqi`] of `[B, H, W]` images, averaged over bands.
pub fn uiqi_bands<T: Real>(a: &Tensor<T>, b: &Tensor<T>, window: usize) -> Result<f64> {
    let (a, b) = Planes::pair("uiqi", a, b)?;
    let per_band = (0..a.bands)
        .map(|k| uiqi_plane(a.band(k), b.band(k), a.h, a.w, window))
        .collect::<Result<Vec<_>>>()?;
    Ok(per_band.iter().sum::<f64>() / a.bands as f64)
}

pub(crate) fn uiqi_planes(a: &[f64], b: &[f64], h: usize, w: usize, window: usize) -> Result<f64> {
    uiqi_plane(a, b, h, w, window)
}

/// Q2^n: the universal index evaluated on hypercomplex pixels whose
/// components are the bands (zero-padded to a power of two), taking the
/// modulus of the block covariance. Averaged over non-overlapping blocks.
pub fn q2n<T: Real>(fused: &Tensor<T>, reference: &Tensor<T>, window: usize) -> Result<f64> {
    let (f, r) = Planes::pair("q2n", fused, reference)?;
    let corners = blocks("q2n", f.h, f.w, window)?;
    let dim = f.bands.next_power_of_two();
    let n = (window * window) as f64;
    let np = f.pixels();
    let pixel = |img: &Planes, i: usize| {
        let mut c = vec![0.0; dim];
        for (b, v) in c.iter_mut().take(img.bands).enumerate() {
            *v = img.data[b * np + i];
        }
        Hypercomplex::new(c)
    };
    let qs = corners.into_iter().filter_map(|(y0, x0)| {
        let idx: Vec<usize> = (y0..y0 + window)
            .flat_map(|y| (x0..x0 + window).map(move |x| y * f.w + x))
            .collect();
        let mean = |img: &Planes| {
            let c = (0..dim)
                .map(|b| {
                    if b < img.bands {
                        mean_of(idx.iter().map(|&i| img.data[b * np + i]), n)
                    } else {
                        0.0
                    }
                })
                .collect();
            Hypercomplex::new(c)
        };
        let (mz, mv) = (mean(&f), mean(&r));
        let (mut var_z, mut var_v, mut cov) = (0.0, 0.0, Hypercomplex::zero(dim));
        for &i in &idx {
            let dz = &pixel(&f, i) - &mz;
            let dv = &pixel(&r, i) - &mv;
            var_z += dz.norm_sqr();
            var_v += dv.norm_sqr();
            cov = &cov + &(&dz * &dv.conj());
        }
        let (nz, nv) = (mz.norm(), mv.norm());
        block_index(
            nz * nz + nv * nv,
            (var_z + var_v) / n,
            nz * nv,
            cov.norm() / n,
        )
    });
    average("q2n", qs)
}

const LAPLACIAN: [[f64; 3]; 3] = [[-1.0, -1.0, -1.0], [-1.0, 8.0, -1.0], [-1.0, -1.0, -1.0]];

fn high_pass(plane: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity((h - 2) * (w - 2));
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let mut acc = 0.0;
            for (dy, row) in LAPLACIAN.iter().enumerate() {
                for (dx, k) in row.iter().enumerate() {
                    acc += k * plane[(y + dy - 1) * w + x + dx - 1];
                }
            }
            out.push(acc);
        }
    }
    out
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = mean_of(a.iter().copied(), n);
    let mb = mean_of(b.iter().copied(), n);
    let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        va += dx * dx;
        vb += dy * dy;
        cov += dx * dy;
    }
    (va > 0.0 && vb > 0.0).then(|| cov / (va.sqrt() * vb.sqrt()))
}

/// Spatial correlation coefficient: Pearson correlation of the Laplacian
/// high-pass of each band over the valid interior, averaged over bands.
pub fn scc<T: Real>(fused: &Tensor<T>, reference: &Tensor<T>) -> Result<f64> {
    let (f, r) = Planes::pair("scc", fused, reference)?;
    if f.h < 3 || f.w < 3 {
        return Err(Error::dim("scc", "height/width", ">= 3", f.h.min(f.w)));
    }
    let mut total = 0.0;
    for b in 0..f.bands {
        let (hf, hr) = (
            high_pass(f.band(b), f.h, f.w),
            high_pass(r.band(b), r.h, r.w),
        );
        total += pearson(&hf, &hr).ok_or_else(|| {
            Error::UndefinedMetric(format!("scc: band {b} has no high-frequency content"))
        })?;
    }
    Ok(total / f.bands as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corrected_mean_is_exact_on_constants() {
        let v = [0.1f64; 1024];
        assert_eq!(mean_of(v.iter().copied(), 1024.0), 0.1);
    }

    #[test]
    fn block_layout() {
        assert_eq!(
            blocks("t", 8, 8, 4).unwrap(),
            vec![(0, 0), (0, 4), (4, 0), (4, 4)]
        );
        assert_eq!(blocks("t", 9, 5, 4).unwrap(), vec![(0, 0), (4, 0)]);
        assert!(blocks("t", 8, 8, 9).is_err());
        assert!(blocks("t", 8, 8, 0).is_err());
    }

    #[test]
    fn degenerate_blocks() {
        assert_eq!(block_index(0.0, 0.0, 0.0, 0.0), None);
        assert_eq!(block_index(2.0, 0.0, 1.0, 0.0), Some(1.0));
        assert_eq!(block_index(0.0, 2.0, 0.0, -1.0), Some(-1.0));
    }

    #[test]
    fn laplacian_kills_affine_planes() {
        let plane: Vec<f64> = (0..25)
            .map(|i| 3.0 + (i / 5) as f64 * 0.5 - (i % 5) as f64)
            .collect();
        assert!(high_pass(&plane, 5, 5).iter().all(|v| v.abs() < 1e-12));
    }
}
