//! Initial designs: Latin hypercube, Sobol and plain uniform sampling in the
//! unit cube.

use rand::Rng;

use crate::config::InitMethod;
use crate::inner::Bounds;
use crate::{Error, Result};

/// Latin hypercube sample: in every dimension each stratum `[i/n, (i+1)/n)`
/// holds exactly one point.
pub fn lhs<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut points = vec![vec![0.0; d]; n];
    let mut perm: Vec<usize> = (0..n).collect();
    for j in 0..d {
        // Fisher-Yates
        for i in (1..n).rev() {
            let k = rng.random_range(0..=i);
            perm.swap(i, k);
        }
        for (p, &stratum) in points.iter_mut().zip(&perm) {
            let u: f64 = rng.random();
            let v = (stratum as f64 + u) / n as f64;
            // Guard against rounding up into the next stratum.
            p[j] = v.min(((stratum + 1) as f64 / n as f64).next_down());
        }
    }
    points
}

/// Uniform random points in the unit cube.
pub fn uniform<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.random::<f64>()).collect()).collect()
}

/// Primitive polynomial data for dimensions 2.. (degree `s`, coefficient
/// bits `a`, initial direction integers `m`), from the Joe-Kuo
/// `new-joe-kuo-6.21201` table.
const JOE_KUO: &[(u32, u32, &[u32])] = &[
    (1, 0, &[1]),
    (2, 1, &[1, 3]),
    (3, 1, &[1, 3, 1]),
    (3, 2, &[1, 1, 1]),
    (4, 1, &[1, 1, 3, 3]),
    (4, 4, &[1, 3, 5, 13]),
    (5, 2, &[1, 1, 5, 5, 17]),
    (5, 4, &[1, 1, 5, 5, 5]),
    (5, 7, &[1, 1, 7, 11, 19]),
    (5, 11, &[1, 1, 5, 1, 1]),
    (5, 13, &[1, 1, 1, 3, 11]),
    (5, 14, &[1, 3, 5, 5, 31]),
    (6, 1, &[1, 3, 3, 9, 7, 49]),
    (6, 13, &[1, 1, 1, 15, 21, 21]),
    (6, 16, &[1, 3, 1, 13, 27, 49]),
    (6, 19, &[1, 1, 1, 15, 7, 5]),
    (6, 22, &[1, 3, 1, 15, 13, 25]),
    (6, 25, &[1, 1, 5, 5, 19, 61]),
    (7, 1, &[1, 3, 7, 11, 23, 15, 103]),
    (7, 4, &[1, 3, 7, 13, 13, 15, 69]),
];

/// Highest dimension supported by [`sobol`].
pub const SOBOL_MAX_DIM: usize = JOE_KUO.len() + 1;

const BITS: usize = 32;

/// Direction numbers of one dimension, scaled by `2^32`.
fn directions(dim: usize) -> [u32; BITS] {
    let mut v = [0u32; BITS];
    if dim == 0 {
        for (k, vk) in v.iter_mut().enumerate() {
            *vk = 1 << (BITS - 1 - k);
        }
        return v;
    }
    let (s, a, m) = JOE_KUO[dim - 1];
    let s = s as usize;
    for k in 0..BITS {
        v[k] = if k < s {
            m[k] << (BITS - 1 - k)
        } else {
            let mut x = v[k - s] ^ (v[k - s] >> s);
            for i in 1..s {
                if (a >> (s - 1 - i)) & 1 == 1 {
                    x ^= v[k - i];
                }
            }
            x
        };
    }
    v
}

/// First `n` points of the (unscrambled) Sobol sequence, skipping the
/// origin.
pub fn sobol(n: usize, d: usize) -> Result<Vec<Vec<f64>>> {
    if d > SOBOL_MAX_DIM {
        return Err(Error::UnsupportedDimension {
            requested: d,
            max: SOBOL_MAX_DIM,
        });
    }
    let dirs: Vec<[u32; BITS]> = (0..d).map(directions).collect();
    let mut state = vec![0u32; d];
    let mut out = Vec::with_capacity(n);
    for i in 1..=n as u64 {
        // Gray-code order: flip the direction of the lowest zero bit of i-1.
        let c = (i - 1).trailing_ones() as usize;
        for (s, v) in state.iter_mut().zip(&dirs) {
            *s ^= v[c];
        }
        out.push(state.iter().map(|&s| s as f64 / 2f64.powi(BITS as i32)).collect());
    }
    Ok(out)
}

/// Maps unit-cube points into `bounds`.
pub fn scale(points: &[Vec<f64>], bounds: &Bounds) -> Vec<Vec<f64>> {
    points.iter().map(|p| bounds.from_unit(p)).collect()
}

/// Generates `n` unit-cube points with the configured method.
pub fn generate<R: Rng + ?Sized>(method: InitMethod, n: usize, d: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    match method {
        InitMethod::Lhs => Ok(lhs(n, d, rng)),
        InitMethod::Sobol => sobol(n, d),
        InitMethod::Uniform => Ok(uniform(n, d, rng)),
    }
}
