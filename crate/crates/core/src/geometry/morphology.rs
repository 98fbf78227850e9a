//! Binary morphology on [`BinaryMask`]: exact Euclidean distance transform,
//! topology-preserving thinning, and disk dilation.

use super::{BinaryMask, ScalarMap};

const INF: f64 = 1e20;

/// 1-D squared distance transform of a sampled function (lower envelope of
/// parabolas).
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = -INF;
    z[1] = INF;
    for q in 1..n {
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k] {
                if k == 0 {
                    v[0] = q;
                    z[0] = -INF;
                    z[1] = INF;
                    break;
                }
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = INF;
                break;
            }
        }
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let d = q as f64 - p as f64;
        *o = d * d + f[p];
    }
}

/// Euclidean distance from each set pixel to the nearest unset pixel, with
/// everything outside the image counting as unset. Unset pixels map to 0.
pub fn distance_transform(mask: &BinaryMask) -> ScalarMap {
    let (w, h) = mask.dims();
    // One ring of background padding around the image.
    let pw = w + 2;
    let ph = h + 2;
    let mut grid = vec![0.0; pw * ph];
    for y in 0..h {
        for x in 0..w {
            if mask.get(x, y) {
                grid[(y + 1) * pw + x + 1] = INF;
            }
        }
    }
    let n = pw.max(ph);
    let mut f = vec![0.0; n];
    let mut out = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];
    for x in 0..pw {
        for y in 0..ph {
            f[y] = grid[y * pw + x];
        }
        edt_1d(&f[..ph], &mut out[..ph], &mut v, &mut z);
        for y in 0..ph {
            grid[y * pw + x] = out[y];
        }
    }
    for y in 0..ph {
        f[..pw].copy_from_slice(&grid[y * pw..(y + 1) * pw]);
        edt_1d(&f[..pw], &mut out[..pw], &mut v, &mut z);
        grid[y * pw..(y + 1) * pw].copy_from_slice(&out[..pw]);
    }
    let mut result = ScalarMap::new(w, h);
    for y in 0..h {
        for x in 0..w {
            result.set(x, y, grid[(y + 1) * pw + x + 1].sqrt());
        }
    }
    result
}

/// Neighbours `P2..P9` clockwise from north.
const RING: [(isize, isize); 8] = [(0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1)];

fn ring(mask: &BinaryMask, x: usize, y: usize) -> [bool; 8] {
    let mut r = [false; 8];
    for (k, (dx, dy)) in RING.iter().enumerate() {
        r[k] = mask.get_signed(x as isize + dx, y as isize + dy);
    }
    r
}

/// A pixel is simple when removing it changes neither the number of
/// 8-connected foreground components nor 4-connected background components
/// in its neighbourhood.
fn is_simple(n: &[bool; 8]) -> bool {
    // 8-connected foreground components among the ring.
    let mut fg_seen = [false; 8];
    let mut fg_components = 0;
    for start in 0..8 {
        if !n[start] || fg_seen[start] {
            continue;
        }
        fg_components += 1;
        let mut stack = vec![start];
        fg_seen[start] = true;
        while let Some(k) = stack.pop() {
            // Ring neighbours of position k that are 8-adjacent in the image:
            // consecutive ring entries always are; from an edge-neighbour
            // (even k) also the entries two steps away.
            let mut adj = vec![(k + 1) % 8, (k + 7) % 8];
            if k % 2 == 0 {
                adj.push((k + 2) % 8);
                adj.push((k + 6) % 8);
            }
            for j in adj {
                if n[j] && !fg_seen[j] {
                    fg_seen[j] = true;
                    stack.push(j);
                }
            }
        }
    }
    if fg_components != 1 {
        return false;
    }
    // 4-connected background components that touch an edge-neighbour.
    let mut bg_seen = [false; 8];
    let mut bg_components = 0;
    for start in (0..8).step_by(2) {
        if n[start] || bg_seen[start] {
            continue;
        }
        bg_components += 1;
        let mut stack = vec![start];
        bg_seen[start] = true;
        while let Some(k) = stack.pop() {
            // Within the ring, 4-adjacency only links consecutive entries.
            for j in [(k + 1) % 8, (k + 7) % 8] {
                if !n[j] && !bg_seen[j] {
                    bg_seen[j] = true;
                    stack.push(j);
                }
            }
        }
    }
    bg_components == 1
}

/// Zhang–Suen deletion test for one sub-iteration.
fn zhang_suen_candidate(n: &[bool; 8], first: bool) -> bool {
    let b = n.iter().filter(|&&v| v).count();
    if !(2..=6).contains(&b) {
        return false;
    }
    let transitions = (0..8).filter(|&k| !n[k] && n[(k + 1) % 8]).count();
    if transitions != 1 {
        return false;
    }
    let (p2, p4, p6, p8) = (n[0], n[2], n[4], n[6]);
    if first {
        !(p2 && p4 && p6) && !(p4 && p6 && p8)
    } else {
        !(p2 && p4 && p8) && !(p2 && p6 && p8)
    }
}

/// Thins a mask to a one-pixel-wide skeleton.
///
/// Each sub-iteration marks Zhang–Suen candidates against the state at its
/// start, then removes them in raster order, skipping any that are no longer
/// simple. The re-check keeps 8-connectivity intact where the plain parallel
/// rule would erase 2×2 blocks.
pub fn skeletonize(mask: &BinaryMask) -> BinaryMask {
    let mut cur = mask.clone();
    let (w, h) = cur.dims();
    loop {
        let mut changed = false;
        for first in [true, false] {
            let candidates: Vec<(usize, usize)> = cur
                .pixels()
                .filter(|&(x, y)| zhang_suen_candidate(&ring(&cur, x, y), first))
                .collect();
            for (x, y) in candidates {
                if is_simple(&ring(&cur, x, y)) {
                    cur.set(x, y, false);
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    debug_assert_eq!(cur.dims(), (w, h));
    cur
}

/// Dilation by a Euclidean disk: a pixel is set iff some input pixel lies
/// within `radius_px`.
pub fn dilate(mask: &BinaryMask, radius_px: usize) -> BinaryMask {
    if radius_px == 0 {
        return mask.clone();
    }
    let r = radius_px as isize;
    let offsets: Vec<(isize, isize)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
        .filter(|(dx, dy)| dx * dx + dy * dy <= r * r)
        .collect();
    let (w, h) = mask.dims();
    let mut out = BinaryMask::new(w, h);
    for (x, y) in mask.pixels() {
        for (dx, dy) in &offsets {
            let nx = x as isize + dx;
            let ny = y as isize + dy;
            if nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h {
                out.set(nx as usize, ny as usize, true);
            }
        }
    }
    out
}

/// Number of 8-connected components of set pixels.
pub fn count_components(mask: &BinaryMask) -> usize {
    let (w, h) = mask.dims();
    let mut seen = vec![false; w * h];
    let mut count = 0;
    for (x, y) in mask.pixels() {
        if seen[y * w + x] {
            continue;
        }
        count += 1;
        let mut stack = vec![(x, y)];
        seen[y * w + x] = true;
        while let Some((cx, cy)) = stack.pop() {
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let nx = cx as isize + dx;
                    let ny = cy as isize + dy;
                    if mask.get_signed(nx, ny) {
                        let i = ny as usize * w + nx as usize;
                        if !seen[i] {
                            seen[i] = true;
                            stack.push((nx as usize, ny as usize));
                        }
                    }
                }
            }
        }
    }
    count
}
