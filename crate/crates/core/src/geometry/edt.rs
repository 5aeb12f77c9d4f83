//! Exact Euclidean distance transform.
//!
//! Meijster, Roerdink & Hesselink's two-pass algorithm, carried out entirely
//! in integer arithmetic so squared distances are exact.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Squared distance from each foreground (`true`) pixel center to the nearest
/// background pixel center; zero on the background.
pub fn squared_edt(mask: &Array2<bool>) -> Result<Array2<i64>> {
    let (rows, cols) = mask.dim();
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidInput("empty mask".into()));
    }
    let fg = mask.iter().filter(|&&m| m).count();
    if fg == 0 || fg == mask.len() {
        return Err(Error::UniformMask);
    }

    let inf = (rows + cols) as i64;
    // Phase 1: vertical distance to the nearest background pixel per column.
    let mut g = Array2::<i64>::zeros((rows, cols));
    for x in 0..cols {
        g[(0, x)] = if mask[(0, x)] { inf } else { 0 };
        for y in 1..rows {
            g[(y, x)] = if mask[(y, x)] { g[(y - 1, x)] + 1 } else { 0 };
        }
        for y in (0..rows - 1).rev() {
            if g[(y + 1, x)] < g[(y, x)] {
                g[(y, x)] = g[(y + 1, x)] + 1;
            }
        }
    }

    // Phase 2: lower envelope of parabolas along each row.
    let mut out = Array2::<i64>::zeros((rows, cols));
    let mut s = vec![0usize; cols];
    let mut t = vec![0i64; cols];
    for y in 0..rows {
        let gy = |i: usize| g[(y, i)];
        let f = |x: i64, i: usize| (x - i as i64) * (x - i as i64) + gy(i) * gy(i);
        let sep = |i: usize, u: usize| {
            let (ii, uu) = (i as i64, u as i64);
            (uu * uu - ii * ii + gy(u) * gy(u) - gy(i) * gy(i)).div_euclid(2 * (uu - ii))
        };
        let mut q: isize = 0;
        s[0] = 0;
        t[0] = 0;
        for u in 1..cols {
            while q >= 0 && f(t[q as usize], s[q as usize]) > f(t[q as usize], u) {
                q -= 1;
            }
            if q < 0 {
                q = 0;
                s[0] = u;
            } else {
                let w = 1 + sep(s[q as usize], u);
                if w < cols as i64 {
                    q += 1;
                    s[q as usize] = u;
                    t[q as usize] = w;
                }
            }
        }
        for u in (0..cols).rev() {
            out[(y, u)] = f(u as i64, s[q as usize]);
            if u as i64 == t[q as usize] {
                q -= 1;
            }
        }
    }
    Ok(out)
}

/// Exact Euclidean distance (pixel units) from each foreground pixel to the
/// nearest background pixel center.
pub fn euclidean_distance_transform(mask: &Array2<bool>) -> Result<Array2<f64>> {
    Ok(squared_edt(mask)?.mapv(|d| (d as f64).sqrt()))
}

#[cfg(test)]
pub(crate) fn brute_force_squared(mask: &Array2<bool>) -> Array2<i64> {
    let (rows, cols) = mask.dim();
    let bg: Vec<(i64, i64)> = mask
        .indexed_iter()
        .filter(|(_, &m)| !m)
        .map(|((y, x), _)| (y as i64, x as i64))
        .collect();
    Array2::from_shape_fn((rows, cols), |(y, x)| {
        if !mask[(y, x)] {
            return 0;
        }
        bg.iter()
            .map(|&(by, bx)| (by - y as i64).pow(2) + (bx - x as i64).pow(2))
            .min()
            .unwrap()
    })
}
