/// Symmetric (edge-repeating) index reflection into `0..n`.
#[inline]
pub(crate) fn reflect(mut i: isize, n: usize) -> usize {
    let n = n as isize;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - i - 1;
        } else {
            return i as usize;
        }
    }
}

/// Correlates a row-major `width`×`height` plane with a `size`×`size`
/// kernel (anchor at the kernel centre) using symmetric border extension.
///
/// The response is accumulated as `sum_j w_j * (x_j - x_centre)`, so it is
/// exactly zero on constant input and equal to plain correlation whenever
/// the kernel sums to zero.
pub fn correlate_zero_sum(
    values: &[f64],
    width: usize,
    height: usize,
    kernel: &[f64],
    size: usize,
) -> Vec<f64> {
    assert_eq!(values.len(), width * height);
    assert_eq!(kernel.len(), size * size);
    assert!(size % 2 == 1, "kernel size must be odd");
    let r = size / 2;
    let pw = width + 2 * r;
    let ph = height + 2 * r;
    let mut padded = Vec::with_capacity(pw * ph);
    for py in 0..ph {
        let y = reflect(py as isize - r as isize, height);
        for px in 0..pw {
            let x = reflect(px as isize - r as isize, width);
            padded.push(values[y * width + x]);
        }
    }
    let taps: Vec<(usize, f64)> = kernel
        .iter()
        .enumerate()
        .filter(|(_, w)| **w != 0.0)
        .map(|(i, w)| ((i / size) * pw + i % size, *w))
        .collect();

    let mut out = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let base = y * pw + x;
            let centre = padded[base + r * pw + r];
            let mut acc = 0.0;
            for &(off, w) in &taps {
                acc += w * (padded[base + off] - centre);
            }
            out.push(acc);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_is_symmetric() {
        let idx: Vec<usize> = (-3..7).map(|i| reflect(i, 4)).collect();
        assert_eq!(idx, vec![2, 1, 0, 0, 1, 2, 3, 3, 2, 1]);
        assert_eq!(reflect(-5, 2), 0);
    }

    #[test]
    fn matches_direct_correlation_for_zero_sum_kernel() {
        let (w, h) = (7, 5);
        let img: Vec<f64> = (0..w * h).map(|i| ((i * 37) % 11) as f64).collect();
        let k = [0.0, 1.0, 0.0, 1.0, -4.0, 1.0, 0.0, 1.0, 0.0];
        let out = correlate_zero_sum(&img, w, h, &k, 3);
        for y in 0..h {
            for x in 0..w {
                let mut direct = 0.0;
                for ky in 0..3 {
                    for kx in 0..3 {
                        let sy = reflect(y as isize + ky as isize - 1, h);
                        let sx = reflect(x as isize + kx as isize - 1, w);
                        direct += k[ky * 3 + kx] * img[sy * w + sx];
                    }
                }
                assert!((direct - out[y * w + x]).abs() < 1e-12);
            }
        }
    }
}
