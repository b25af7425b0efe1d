//! Resampling and filtering kernels on raw sample planes. Shared by the hash
//! pipelines (which operate on `[0,1]` images) and the attack code (which
//! resizes perturbations whose values may be negative).

/// A single-channel plane of raw f64 samples, row-major. No range invariant.
#[derive(Debug, Clone)]
pub(crate) struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Plane {
        debug_assert_eq!(data.len(), width * height);
        Plane {
            width,
            height,
            data,
        }
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

/// True when every output pixel covers at least a 2x2 block of input pixels,
/// in which case area averaging is the appropriate kernel.
pub(crate) fn use_area(in_w: usize, in_h: usize, out_w: usize, out_h: usize) -> bool {
    in_w >= 2 * out_w && in_h >= 2 * out_h
}

pub(crate) fn resize_plane(src: &Plane, out_w: usize, out_h: usize) -> Plane {
    assert!(out_w >= 1 && out_h >= 1);
    if use_area(src.width, src.height, out_w, out_h) {
        resize_area(src, out_w, out_h)
    } else {
        resize_bilinear(src, out_w, out_h)
    }
}

/// Per-axis weights of input samples contributing to each output sample under
/// exact box integration: output cell `o` covers `[o*scale, (o+1)*scale)`.
fn area_axis_weights(in_len: usize, out_len: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let lo = o as f64 * scale;
            let hi = (o as f64 + 1.0) * scale;
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(in_len);
            let mut weights = Vec::with_capacity(last - first);
            for i in first..last {
                let cover = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
                if cover > 0.0 {
                    weights.push((i, cover / scale));
                }
            }
            weights
        })
        .collect()
}

fn resize_area(src: &Plane, out_w: usize, out_h: usize) -> Plane {
    let wx = area_axis_weights(src.width, out_w);
    let wy = area_axis_weights(src.height, out_h);
    let mut out = vec![0.0; out_w * out_h];
    for (oy, col_w) in wy.iter().enumerate() {
        for (ox, row_w) in wx.iter().enumerate() {
            let mut acc = 0.0;
            for &(iy, fy) in col_w {
                let mut row_acc = 0.0;
                for &(ix, fx) in row_w {
                    row_acc += fx * src.get(ix, iy);
                }
                acc += fy * row_acc;
            }
            out[oy * out_w + ox] = acc;
        }
    }
    Plane::new(out_w, out_h, out)
}

/// Bilinear interpolation with half-pixel centers; source coordinates clamp
/// to the image border.
fn resize_bilinear(src: &Plane, out_w: usize, out_h: usize) -> Plane {
    let axis = |in_len: usize, out_len: usize| -> Vec<(usize, usize, f64)> {
        let scale = in_len as f64 / out_len as f64;
        (0..out_len)
            .map(|o| {
                let center = (o as f64 + 0.5) * scale - 0.5;
                let clamped = center.clamp(0.0, (in_len - 1) as f64);
                let i0 = clamped.floor() as usize;
                let i1 = (i0 + 1).min(in_len - 1);
                (i0, i1, clamped - i0 as f64)
            })
            .collect()
    };
    let xs = axis(src.width, out_w);
    let ys = axis(src.height, out_h);
    let mut out = vec![0.0; out_w * out_h];
    for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
        for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
            let top = src.get(x0, y0) * (1.0 - fx) + src.get(x1, y0) * fx;
            let bot = src.get(x0, y1) * (1.0 - fx) + src.get(x1, y1) * fx;
            out[oy * out_w + ox] = top * (1.0 - fy) + bot * fy;
        }
    }
    Plane::new(out_w, out_h, out)
}

/// Separable mean filter with clamp-to-edge borders: every window has
/// `kernel^2` taps, out-of-range taps read the nearest edge sample.
pub(crate) fn box_blur_plane(src: &Plane, kernel: usize) -> Plane {
    debug_assert!(kernel % 2 == 1 && kernel >= 1);
    if kernel == 1 {
        return src.clone();
    }
    let half = (kernel / 2) as isize;
    let inv = 1.0 / kernel as f64;

    // Horizontal pass.
    let mut tmp = vec![0.0; src.data.len()];
    for y in 0..src.height {
        for x in 0..src.width {
            let mut s = 0.0;
            for t in -half..=half {
                let ix = (x as isize + t).clamp(0, src.width as isize - 1) as usize;
                s += src.get(ix, y);
            }
            tmp[y * src.width + x] = s * inv;
        }
    }
    // Vertical pass.
    let tmp = Plane::new(src.width, src.height, tmp);
    let mut out = vec![0.0; src.data.len()];
    for y in 0..src.height {
        for x in 0..src.width {
            let mut s = 0.0;
            for t in -half..=half {
                let iy = (y as isize + t).clamp(0, src.height as isize - 1) as usize;
                s += tmp.get(x, iy);
            }
            out[y * src.width + x] = s * inv;
        }
    }
    Plane::new(src.width, src.height, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn area_weights_sum_to_one() {
        for (in_len, out_len) in [(64, 8), (10, 3), (7, 2), (128, 64)] {
            for w in area_axis_weights(in_len, out_len) {
                let sum: f64 = w.iter().map(|(_, f)| f).sum();
                assert!((sum - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bilinear_identity_at_scale_one() {
        let src = Plane::new(3, 2, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        let out = resize_plane(&src, 3, 2);
        assert_eq!(out.data, src.data);
    }

    #[test]
    fn mode_selection_boundary() {
        assert!(use_area(16, 16, 8, 8));
        assert!(!use_area(15, 16, 8, 8));
        assert!(!use_area(16, 16, 9, 8));
    }
}
