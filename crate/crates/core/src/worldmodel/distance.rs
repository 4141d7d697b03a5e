//! Exact Euclidean distance transform on a grid (lower-envelope of parabolas,
//! one pass per axis).

const FAR: f64 = 1e20;

fn transform_1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let fq = f[q] + (q * q) as f64;
        let mut s;
        loop {
            let p = v[k];
            s = (fq - (f[p] + (p * p) as f64)) / (2.0 * q as f64 - 2.0 * p as f64);
            if s <= z[k] {
                k -= 1;
            } else {
                break;
            }
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, out) in d.iter_mut().enumerate().take(n) {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let dq = q as f64 - p as f64;
        *out = dq * dq + f[p];
    }
}

/// Distance in meters from every cell center to the nearest feature cell
/// center. Cells are row-major with `width` columns. Returns infinity
/// everywhere when there are no features.
pub fn distance_transform(width: usize, height: usize, features: &[bool], resolution: f64) -> Vec<f64> {
    assert_eq!(features.len(), width * height);
    let mut grid: Vec<f64> = features.iter().map(|&f| if f { 0.0 } else { FAR }).collect();
    let n = width.max(height);
    let mut f = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];
    for c in 0..width {
        for r in 0..height {
            f[r] = grid[r * width + c];
        }
        transform_1d(&f[..height], &mut d[..height], &mut v, &mut z);
        for r in 0..height {
            grid[r * width + c] = d[r];
        }
    }
    for r in 0..height {
        let row = &mut grid[r * width..(r + 1) * width];
        f[..width].copy_from_slice(row);
        transform_1d(&f[..width], &mut d[..width], &mut v, &mut z);
        row.copy_from_slice(&d[..width]);
    }
    grid.into_iter()
        .map(|sq| if sq >= FAR * 0.5 { f64::INFINITY } else { sq.sqrt() * resolution })
        .collect()
}
