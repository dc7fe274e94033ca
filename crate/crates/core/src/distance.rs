//! Exact Euclidean distance transforms on the pixel grid.
//!
//! The fast path is the separable lower-envelope algorithm run on integer
//! squared distances (columns first, then rows). Parabola intersections are
//! compared by cross-multiplication so the result is exact, and the square
//! root is only taken when a distance is read out.

use crate::error::{Error, Result};
use crate::gray::BinaryMask;

/// Distances in pixel units, stored as exact integer squared distances.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DistanceField {
    width: usize,
    height: usize,
    squared: Vec<u64>,
}

impl DistanceField {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn squared(&self) -> &[u64] {
        &self.squared
    }

    pub fn value(&self, index: usize) -> f64 {
        (self.squared[index] as f64).sqrt()
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.value(y * self.width + x)
    }

    pub fn values(&self) -> Vec<f64> {
        self.squared.iter().map(|&s| (s as f64).sqrt()).collect()
    }

    pub fn max(&self) -> f64 {
        (self.squared.iter().copied().max().unwrap_or(0) as f64).sqrt()
    }

    pub fn min(&self) -> f64 {
        (self.squared.iter().copied().min().unwrap_or(0) as f64).sqrt()
    }
}

const UNREACHED: u64 = u64::MAX;

/// Lower envelope of the parabolas `(q - v)^2 + f[v]` over finite `f[v]`,
/// sampled at every integer `q`. Entries equal to `UNREACHED` carry no
/// parabola. Writes into `out`.
fn envelope_1d(f: &[u64], out: &mut [u64], v: &mut Vec<i64>, z: &mut Vec<(i128, i128)>) {
    v.clear();
    z.clear();
    // Intersection abscissa of the parabolas rooted at `p` and `r` (p > r),
    // as the fraction num / den with den > 0.
    let cross = |p: i64, r: i64| -> (i128, i128) {
        let num = (f[p as usize] as i128 + (p as i128) * (p as i128))
            - (f[r as usize] as i128 + (r as i128) * (r as i128));
        (num, 2 * (p - r) as i128)
    };
    // a <= b for fractions with positive denominators.
    let le = |a: (i128, i128), b: (i128, i128)| a.0 * b.1 <= b.0 * a.1;

    for q in 0..f.len() as i64 {
        if f[q as usize] == UNREACHED {
            continue;
        }
        loop {
            match v.last() {
                None => {
                    v.push(q);
                    z.push((0, 0)); // left boundary sentinel, never read
                    break;
                }
                Some(&top) => {
                    let s = cross(q, top);
                    let k = v.len() - 1;
                    if k > 0 && le(s, z[k]) {
                        v.pop();
                        z.pop();
                    } else {
                        v.push(q);
                        z.push(s);
                        break;
                    }
                }
            }
        }
    }

    if v.is_empty() {
        out.iter_mut().for_each(|o| *o = UNREACHED);
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        let q = q as i128;
        // Advance while the next parabola's region starts at or before q.
        while k + 1 < v.len() && z[k + 1].0 <= q * z[k + 1].1 {
            k += 1;
        }
        let d = q - v[k] as i128;
        *o = (d * d) as u64 + f[v[k] as usize];
    }
}

fn squared_edt_from_seeds(width: usize, height: usize, is_seed: impl Fn(usize) -> bool) -> Vec<u64> {
    let mut grid: Vec<u64> = (0..width * height)
        .map(|i| if is_seed(i) { 0 } else { UNREACHED })
        .collect();
    let mut v = Vec::new();
    let mut z = Vec::new();

    let mut col = vec![0u64; height];
    let mut col_out = vec![0u64; height];
    for x in 0..width {
        for y in 0..height {
            col[y] = grid[y * width + x];
        }
        envelope_1d(&col, &mut col_out, &mut v, &mut z);
        for y in 0..height {
            grid[y * width + x] = col_out[y];
        }
    }

    let mut row_out = vec![0u64; width];
    for y in 0..height {
        let row = &mut grid[y * width..(y + 1) * width];
        envelope_1d(row, &mut row_out, &mut v, &mut z);
        row.copy_from_slice(&row_out);
    }
    grid
}

fn bruteforce_from_seeds(mask: &BinaryMask, seeds: &[usize]) -> Vec<u64> {
    let w = mask.width();
    (0..mask.len())
        .map(|i| {
            let (px, py) = ((i % w) as i64, (i / w) as i64);
            seeds
                .iter()
                .map(|&s| {
                    let (qx, qy) = ((s % w) as i64, (s / w) as i64);
                    ((px - qx).pow(2) + (py - qy).pow(2)) as u64
                })
                .min()
                .expect("seed set is non-empty")
        })
        .collect()
}

/// Distance from every pixel to the nearest background pixel (0 on the
/// background itself).
pub fn edt(mask: &BinaryMask) -> Result<DistanceField> {
    if mask.foreground_count() == mask.len() {
        return Err(Error::EmptyBackground);
    }
    let data = mask.data();
    Ok(DistanceField {
        width: mask.width(),
        height: mask.height(),
        squared: squared_edt_from_seeds(mask.width(), mask.height(), |i| data[i] == 0),
    })
}

/// Same contract as [`edt`], computed by scanning every background pixel for
/// every pixel. Quadratic; intended for small masks and tests.
pub fn edt_bruteforce(mask: &BinaryMask) -> Result<DistanceField> {
    let seeds: Vec<usize> = (0..mask.len()).filter(|&i| mask.data()[i] == 0).collect();
    if seeds.is_empty() {
        return Err(Error::EmptyBackground);
    }
    Ok(DistanceField {
        width: mask.width(),
        height: mask.height(),
        squared: bruteforce_from_seeds(mask, &seeds),
    })
}

/// Distance from every pixel to the nearest edge pixel of the mask, where
/// edges are foreground pixels with a 4-neighbor in the background.
pub fn distance_to_edge(mask: &BinaryMask) -> Result<DistanceField> {
    let edges = mask.edge_pixels();
    if edges.foreground_count() == 0 {
        return Err(Error::NoEdge);
    }
    let data = edges.data();
    Ok(DistanceField {
        width: mask.width(),
        height: mask.height(),
        squared: squared_edt_from_seeds(mask.width(), mask.height(), |i| data[i] == 1),
    })
}

/// Quadratic reference for [`distance_to_edge`].
pub fn distance_to_edge_bruteforce(mask: &BinaryMask) -> Result<DistanceField> {
    let edges = mask.edge_pixels();
    let seeds: Vec<usize> = (0..edges.len()).filter(|&i| edges.data()[i] == 1).collect();
    if seeds.is_empty() {
        return Err(Error::NoEdge);
    }
    Ok(DistanceField {
        width: mask.width(),
        height: mask.height(),
        squared: bruteforce_from_seeds(mask, &seeds),
    })
}
