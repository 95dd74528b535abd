//! Exact evaluation of `min(cap, min_j g_j + ε|t − j|)` for many targets `t`.
//!
//! Sources are bucketed into a tree of axis-aligned blocks (4 cells per axis at
//! the leaves, 4 children per axis above). Each node keeps the minimum of `g`
//! and, in two dimensions, the minima of `g_j − ε e·j` for a fan of unit
//! vectors `e`; both give lower bounds for the node. A depth-first search
//! visits nodes in order of their bound and stops as soon as the bound cannot
//! beat the incumbent. Candidates are evaluated with the same expression as a
//! brute-force scan, so the result is bit-identical to one.

use std::sync::OnceLock;

use rayon::prelude::*;

use crate::grid::GridGeometry;

const SHIFT: u32 = 2;
const ROOT_MAX: usize = 16;
const DIRS: usize = 128;
const CHUNK: usize = 256;

#[derive(Clone, Copy, Debug)]
struct Node {
    lo: [i32; 3],
    hi: [i32; 3],
    min: f64,
    start: u32,
    end: u32,
}

pub(crate) struct ConeSet {
    eps: f64,
    dim: usize,
    slack: f64,
    coords: Vec<[i32; 3]>,
    /// `(x, y, z, g)` per source, in the same order as `coords`.
    pts: Vec<[f64; 4]>,
    g: Vec<f64>,
    levels: Vec<Vec<Node>>,
    // Directional minima, `DIRS` per node, parallel to `levels` (2D only).
    dir: Vec<Vec<f64>>,
    unit: Vec<[f64; 2]>,
}

#[inline]
fn cand(g: f64, eps: f64, a: &[i32; 3], b: &[i32; 3]) -> f64 {
    let dx = (a[0] - b[0]) as i64;
    let dy = (a[1] - b[1]) as i64;
    let dz = (a[2] - b[2]) as i64;
    g + eps * ((dx * dx + dy * dy + dz * dz) as f64).sqrt()
}

/// Direction bucket of `(dx, dy) != 0` from a diamond pseudo-angle in `[0, 4)`.
#[inline]
fn bucket(dx: f64, dy: f64) -> usize {
    let p = if dy >= 0.0 {
        if dx >= 0.0 {
            dy / (dx + dy)
        } else {
            1.0 - dx / (dy - dx)
        }
    } else if dx < 0.0 {
        2.0 - dy / (-dx - dy)
    } else {
        3.0 + dx / (dx - dy)
    };
    ((p * (DIRS as f64 / 4.0)) as usize).min(DIRS - 1)
}

const LUT_HALF: i32 = 512;

fn lut() -> &'static [u8] {
    static TABLE: OnceLock<Vec<u8>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let w = 2 * LUT_HALF + 1;
        let mut t = vec![0u8; (w * w) as usize];
        for y in -LUT_HALF..=LUT_HALF {
            for x in -LUT_HALF..=LUT_HALF {
                if x != 0 || y != 0 {
                    t[((y + LUT_HALF) * w + x + LUT_HALF) as usize] = bucket(x as f64, y as f64) as u8;
                }
            }
        }
        t
    })
}

#[inline]
fn bucket_of(dx: i32, dy: i32) -> usize {
    if dx.abs() <= LUT_HALF && dy.abs() <= LUT_HALF {
        let w = 2 * LUT_HALF + 1;
        lut()[((dy + LUT_HALF) * w + dx + LUT_HALF) as usize] as usize
    } else {
        bucket(dx as f64, dy as f64)
    }
}

fn bucket_unit(k: usize) -> [f64; 2] {
    let p = (k as f64 + 0.5) * 4.0 / DIRS as f64;
    let q = p.fract();
    let v = match p as usize {
        0 => [1.0 - q, q],
        1 => [-q, 1.0 - q],
        2 => [q - 1.0, -q],
        _ => [q, q - 1.0],
    };
    let n = v[0].hypot(v[1]);
    [v[0] / n, v[1] / n]
}

fn key_of(c: &[i32; 3], shift: u32) -> [i32; 3] {
    [c[0] >> shift, c[1] >> shift, c[2] >> shift]
}

fn sort_key(k: &[i32; 3]) -> (i32, i32, i32) {
    (k[2], k[1], k[0])
}

impl ConeSet {
    pub(crate) fn new(geom: &GridGeometry, sources: &[usize], values: &[f64]) -> Self {
        debug_assert!(geom.dim() <= 3);
        let dim = geom.dim();
        let eps = geom.spacing();
        let mut tmp = vec![0usize; dim];
        let mut items: Vec<([i32; 3], f64)> = sources
            .iter()
            .zip(values)
            .map(|(&s, &v)| {
                geom.coords_into(s, &mut tmp);
                let mut c = [0i32; 3];
                for a in 0..dim {
                    c[a] = tmp[a] as i32;
                }
                (c, v)
            })
            .collect();
        items.sort_by_key(|(c, _)| sort_key(&key_of(c, SHIFT)));
        let coords: Vec<[i32; 3]> = items.iter().map(|x| x.0).collect();
        let g: Vec<f64> = items.iter().map(|x| x.1).collect();

        let unit: Vec<[f64; 2]> = if dim == 2 { (0..DIRS).map(bucket_unit).collect() } else { Vec::new() };

        // Leaves.
        let mut leaves = Vec::new();
        let mut keys = Vec::new();
        let mut leaf_dir = Vec::new();
        let mut s = 0;
        while s < coords.len() {
            let k = key_of(&coords[s], SHIFT);
            let mut e = s;
            let mut node = Node { lo: coords[s], hi: coords[s], min: f64::INFINITY, start: s as u32, end: 0 };
            let mut dmin = [f64::INFINITY; DIRS];
            while e < coords.len() && key_of(&coords[e], SHIFT) == k {
                let c = &coords[e];
                for a in 0..3 {
                    node.lo[a] = node.lo[a].min(c[a]);
                    node.hi[a] = node.hi[a].max(c[a]);
                }
                node.min = node.min.min(g[e]);
                if dim == 2 {
                    let (x, y) = (c[0] as f64, c[1] as f64);
                    for (d, u) in dmin.iter_mut().zip(&unit) {
                        *d = d.min(g[e] - eps * (u[0] * x + u[1] * y));
                    }
                }
                e += 1;
            }
            node.end = e as u32;
            leaves.push(node);
            keys.push(k);
            if dim == 2 {
                leaf_dir.extend_from_slice(&dmin);
            }
            s = e;
        }

        let mut levels = vec![leaves];
        let mut dir = vec![leaf_dir];
        while levels.last().unwrap().len() > ROOT_MAX {
            let cur = levels.last_mut().unwrap();
            let cur_dir = dir.last_mut().unwrap();
            // Reorder the current level so siblings are contiguous.
            let mut order: Vec<usize> = (0..cur.len()).collect();
            order.sort_by_key(|&i| sort_key(&key_of(&keys[i], SHIFT)));
            let nodes: Vec<Node> = order.iter().map(|&i| cur[i]).collect();
            let nkeys: Vec<[i32; 3]> = order.iter().map(|&i| key_of(&keys[i], SHIFT)).collect();
            let ndir: Vec<f64> = if dim == 2 {
                order.iter().flat_map(|&i| cur_dir[i * DIRS..(i + 1) * DIRS].iter().copied()).collect()
            } else {
                Vec::new()
            };
            *cur = nodes;
            *cur_dir = ndir;

            let mut parents = Vec::new();
            let mut pkeys = Vec::new();
            let mut pdir = Vec::new();
            let mut s = 0;
            while s < cur.len() {
                let k = nkeys[s];
                let mut node = Node { lo: cur[s].lo, hi: cur[s].hi, min: f64::INFINITY, start: s as u32, end: 0 };
                let mut dmin = [f64::INFINITY; DIRS];
                let mut e = s;
                while e < cur.len() && nkeys[e] == k {
                    for a in 0..3 {
                        node.lo[a] = node.lo[a].min(cur[e].lo[a]);
                        node.hi[a] = node.hi[a].max(cur[e].hi[a]);
                    }
                    node.min = node.min.min(cur[e].min);
                    if dim == 2 {
                        for (d, &c) in dmin.iter_mut().zip(&cur_dir[e * DIRS..(e + 1) * DIRS]) {
                            *d = d.min(c);
                        }
                    }
                    e += 1;
                }
                node.end = e as u32;
                parents.push(node);
                pkeys.push(k);
                if dim == 2 {
                    pdir.extend_from_slice(&dmin);
                }
                s = e;
            }
            keys = pkeys;
            levels.push(parents);
            dir.push(pdir);
        }

        let pts = coords.iter().zip(&g).map(|(c, &v)| [c[0] as f64, c[1] as f64, c[2] as f64, v]).collect();
        Self { eps, dim, slack: 1e-9 * eps, coords, pts, g, levels, dir, unit }
    }

    /// Whether every source under a node is provably no better than `stop`.
    #[inline]
    fn pruned(&self, level: usize, idx: usize, t: &[i32; 3], tf: &[f64; 2], stop: f64) -> bool {
        let n = &self.levels[level][idx];
        let gap = stop - n.min;
        if gap <= 0.0 {
            return true;
        }
        let mut d2 = 0i64;
        for a in 0..3 {
            let d = (n.lo[a] - t[a]).max(t[a] - n.hi[a]).max(0) as i64;
            d2 += d * d;
        }
        if d2 == 0 {
            return false;
        }
        let r = self.eps * (d2 as f64).sqrt();
        if r >= gap {
            return true;
        }
        if self.dim != 2 {
            return false;
        }
        let dx = 2 * t[0] - (n.lo[0] + n.hi[0]);
        let dy = 2 * t[1] - (n.lo[1] + n.hi[1]);
        let k = bucket_of(dx, dy);
        let u = &self.unit[k];
        self.dir[level][idx * DIRS + k] + self.eps * (u[0] * tf[0] + u[1] * tf[1]) >= stop
    }

    fn visit(&self, level: usize, idx: usize, t: &[i32; 3], tf: &[f64; 2], best: &mut f64, arg: &mut usize) {
        let n = self.levels[level][idx];
        if level == 0 {
            let (tx, ty, tz) = (t[0] as f64, t[1] as f64, t[2] as f64);
            let start = n.start as usize;
            for (k, p) in self.pts[start..n.end as usize].iter().enumerate() {
                let (dx, dy, dz) = (p[0] - tx, p[1] - ty, p[2] - tz);
                // Exact for lattice offsets, so this agrees with `cand`.
                let v = p[3] + self.eps * (dx * dx + dy * dy + dz * dz).sqrt();
                if v < *best {
                    *best = v;
                    *arg = start + k;
                }
            }
            return;
        }
        for c in n.start as usize..n.end as usize {
            if !self.pruned(level - 1, c, t, tf, *best + self.slack) {
                self.visit(level - 1, c, t, tf, best, arg);
            }
        }
    }

    /// `min(cap, min_j g_j + ε|t − j|)` and the index of a minimizing source, if any beats `cap`.
    pub(crate) fn query(&self, t: &[i32; 3], cap: f64, hint: Option<usize>) -> (f64, Option<usize>) {
        let mut best = cap;
        let mut arg = usize::MAX;
        if let Some(h) = hint {
            let v = cand(self.g[h], self.eps, &self.coords[h], t);
            if v < best {
                best = v;
                arg = h;
            }
        }
        let tf = [t[0] as f64, t[1] as f64];
        let top = self.levels.len() - 1;
        for i in 0..self.levels[top].len() {
            if !self.pruned(top, i, t, &tf, best + self.slack) {
                self.visit(top, i, t, &tf, &mut best, &mut arg);
            }
        }
        (best, (arg != usize::MAX).then_some(arg))
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

/// For each target cell `t`, `min(cap, min_j values[j] + ε|t − sources[j]|)`.
pub(crate) fn inf_convolution(
    geom: &GridGeometry,
    sources: &[usize],
    values: &[f64],
    targets: &[usize],
    cap: f64,
) -> Vec<f64> {
    debug_assert_eq!(sources.len(), values.len());
    if sources.is_empty() {
        return vec![cap; targets.len()];
    }
    if geom.dim() > 3 {
        return brute_force(geom, sources, values, targets, cap);
    }
    let set = ConeSet::new(geom, sources, values);
    if set.is_empty() {
        return vec![cap; targets.len()];
    }
    let dim = geom.dim();
    targets
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut tmp = vec![0usize; dim];
            let mut hint = None;
            chunk
                .iter()
                .map(|&t| {
                    geom.coords_into(t, &mut tmp);
                    let mut c = [0i32; 3];
                    for a in 0..dim {
                        c[a] = tmp[a] as i32;
                    }
                    let (v, arg) = set.query(&c, cap, hint);
                    if arg.is_some() {
                        hint = arg;
                    }
                    v
                })
                .collect::<Vec<f64>>()
        })
        .collect::<Vec<_>>()
        .concat()
}

fn brute_force(geom: &GridGeometry, sources: &[usize], values: &[f64], targets: &[usize], cap: f64) -> Vec<f64> {
    let coords = |i: usize| geom.coords(i);
    let src: Vec<Vec<usize>> = sources.iter().map(|&s| coords(s)).collect();
    let eps = geom.spacing();
    targets
        .par_iter()
        .map(|&t| {
            let ct = coords(t);
            let mut best = cap;
            for (cs, &g) in src.iter().zip(values) {
                let d2: i64 = cs.iter().zip(&ct).map(|(&a, &b)| (a as i64 - b as i64).pow(2)).sum();
                let v = g + eps * (d2 as f64).sqrt();
                if v < best {
                    best = v;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn check(extents: &[usize], eps: f64, density: f64, spread: f64, cap: f64, seed: u64) {
        let g = GridGeometry::new(extents, eps).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sources = Vec::new();
        let mut values = Vec::new();
        let mut targets = Vec::new();
        for i in 0..g.len() {
            if rng.gen::<f64>() < density {
                sources.push(i);
                values.push(-spread * rng.gen::<f64>());
            } else {
                targets.push(i);
            }
        }
        let fast = inf_convolution(&g, &sources, &values, &targets, cap);
        let slow = brute_force(&g, &sources, &values, &targets, cap);
        assert_eq!(fast, slow);
    }

    #[test]
    fn matches_brute_force_2d() {
        for seed in 0..6 {
            check(&[37, 29], 1.0, 0.3, 5.0, f64::INFINITY, seed);
            check(&[64, 50], 0.5, 0.05, 20.0, 8.0, seed);
            check(&[40, 40], 0.25, 0.5, 0.0, f64::INFINITY, seed);
        }
    }

    #[test]
    fn matches_brute_force_1d_3d() {
        for seed in 0..4 {
            check(&[101], 1.0, 0.2, 3.0, f64::INFINITY, seed);
            check(&[11, 9, 13], 1.0, 0.1, 4.0, f64::INFINITY, seed);
        }
    }

    #[test]
    fn sparse_sources_hit_cap() {
        let g = GridGeometry::new(&[50, 50], 1.0).unwrap();
        let out = inf_convolution(&g, &[0], &[0.0], &[g.index(&[49, 49])], 10.0);
        assert_eq!(out, vec![10.0]);
    }

    #[test]
    fn bucket_covers_all_directions() {
        for k in 0..DIRS {
            let u = bucket_unit(k);
            assert_eq!(bucket(u[0], u[1]), k);
        }
    }
}
