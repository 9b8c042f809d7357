//! Seed placement, Lloyd relaxation, Voronoi polygons and their raster.

use super::{CellStatus, GoldStandard, Layout, MosaicSpec};
use crate::error::Result;
use crate::imgcore::{connected_components, thin_ridges, BinaryMask, Connectivity, ProbMap};
use crate::imgcore::DisjointSet;
use std::collections::HashMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

type Point = (f64, f64);

/// Voronoi cell of one seed clipped to the image rectangle, with short sides
/// collapsed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellPolygon {
    pub seed: Point,
    /// Exact corners in counter-clockwise order (image coordinates, y down).
    pub vertices: Vec<Point>,
    /// Seed index across each side `vertices[i] -> vertices[i + 1]`;
    /// `None` where the side lies on the image frame.
    pub sides: Vec<Option<usize>>,
    /// Region label in the raster, `0` if the seed left no pixels.
    pub label: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mosaic {
    pub gold: GoldStandard,
    pub polygons: Vec<CellPolygon>,
}

pub(crate) fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Builds the Voronoi mosaic and its gold standard (no guttae).
///
/// Voronoi sides shorter than `vertex_merge_fraction` of the mean cell
/// diameter are collapsed into a single corner shared by every cell meeting there; the remaining sides are drawn
/// as 8-connected digital lines, so raster and polygons describe the same
/// tessellation.
pub fn generate_mosaic(spec: &MosaicSpec) -> Result<Mosaic> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let mut rng = rng_for(spec.seed, 1);
    let mut seeds = place_seeds(spec, &mut rng);
    if spec.layout == Layout::Random {
        for _ in 0..spec.lloyd_iterations {
            let nearest = NearestSeeds::new(&seeds, w, h).label_all();
            lloyd_step(&mut seeds, &nearest, w, h);
        }
    }
    let nearest = NearestSeeds::new(&seeds, w, h).label_all();
    let rect = [(-0.5, -0.5), (w as f64 - 0.5, -0.5), (w as f64 - 0.5, h as f64 - 0.5), (-0.5, h as f64 - 0.5)];
    let cells: Vec<_> = (0..seeds.len()).map(|s| voronoi_cell(s, &seeds, &rect)).collect();
    let present = cells.iter().filter(|c| !c.0.is_empty()).count().max(1);
    let diameter = ((w * h) as f64 / present as f64).sqrt();
    let merged = collapse_short_sides(&cells, &rect, spec.vertex_merge_fraction * diameter);

    let mut ridge = BinaryMask::new(w, h);
    for poly in merged.iter().flatten() {
        let n = poly.vertices.len();
        for k in 0..n {
            if poly.sides[k].is_some() {
                draw_segment(&mut ridge, poly.vertices[k], poly.vertices[(k + 1) % n]);
            }
        }
    }
    let interior = BinaryMask {
        width: w,
        height: h,
        data: ridge.data.iter().map(|&r| !r).collect(),
    };
    let mut comps = connected_components(&interior, Connectivity::Four);
    thin_ridges(&mut comps);

    // each component belongs to the seed owning most of its pixels; the
    // largest component of a seed owns its polygon
    let k = comps.num_labels();
    let mut votes: Vec<std::collections::BTreeMap<usize, usize>> = vec![Default::default(); k + 1];
    let mut comp_area = vec![0usize; k + 1];
    for (i, &c) in comps.data.iter().enumerate() {
        if c != 0 {
            *votes[c as usize].entry(nearest[i]).or_default() += 1;
            comp_area[c as usize] += 1;
        }
    }
    let mut seed_comp = vec![0u32; seeds.len()];
    for c in 1..=k {
        let Some((&s, _)) = votes[c].iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))) else {
            continue;
        };
        if merged[s].is_none() {
            continue;
        }
        let cur = seed_comp[s] as usize;
        if cur == 0 || comp_area[c] > comp_area[cur] {
            seed_comp[s] = c as u32;
        }
    }

    let border = comps.border_labels();
    let mut status = vec![CellStatus::Discarded; k + 1];
    let mut region_vertices = vec![Vec::new(); k + 1];
    let mut region_neighbors = vec![Vec::new(); k + 1];
    let mut polygons = Vec::with_capacity(seeds.len());
    for (s, &seed) in seeds.iter().enumerate() {
        let Some(poly) = &merged[s] else {
            continue;
        };
        let label = seed_comp[s];
        if label != 0 {
            let l = label as usize;
            status[l] = if border[l] || poly.vertices.iter().any(|&v| on_frame(v, &rect)) {
                CellStatus::Partial
            } else {
                CellStatus::Full
            };
            region_vertices[l] = poly.vertices.clone();
            region_neighbors[l] = poly
                .sides
                .iter()
                .map(|side| side.map(|j| seed_comp[j]).unwrap_or(0))
                .collect();
        }
        polygons.push(CellPolygon {
            seed,
            vertices: poly.vertices.clone(),
            sides: poly.sides.clone(),
            label,
        });
    }
    let mut gold = GoldStandard {
        annotation: ProbMap::zeros(w, h),
        regions: comps,
        status,
        region_vertices,
        region_neighbors,
        guttae: BinaryMask::new(w, h),
        cells: Vec::new(),
        pixel_pitch: spec.pixel_pitch,
    };
    gold.refresh();
    Ok(Mosaic { gold, polygons })
}

/// A corner on the image frame makes its cell partial: the frame cuts it.
fn on_frame(v: Point, rect: &[Point; 4]) -> bool {
    let eps = 1e-6;
    v.0 <= rect[0].0 + eps || v.1 <= rect[0].1 + eps || v.0 >= rect[2].0 - eps || v.1 >= rect[2].1 - eps
}

/// Sides touching the frame shorter than this are not visible in the raster.
const FRAME_SNAP_PX: f64 = 1.0;

struct MergedPolygon {
    vertices: Vec<Point>,
    sides: Vec<Option<usize>>,
}

/// Identifies the Voronoi corners shared between cells by the three sites
/// meeting there (frame sides count as sites), merges corners joined by a
/// side shorter than `min_len`, and rebuilds every polygon on the merged
/// corners. Polygons left with fewer than three corners vanish.
fn collapse_short_sides(
    cells: &[(Vec<Point>, Vec<Option<usize>>)],
    rect: &[Point; 4],
    min_len: f64,
) -> Vec<Option<MergedPolygon>> {
    let frame_site = |a: Point, b: Point| -> i64 {
        let m = ((a.0 + b.0) / 2.0, (a.1 + b.1) / 2.0);
        let d = [
            (m.1 - rect[0].1).abs(),
            (m.0 - rect[1].0).abs(),
            (m.1 - rect[2].1).abs(),
            (m.0 - rect[0].0).abs(),
        ];
        let side = (0..4).min_by(|&i, &j| d[i].total_cmp(&d[j])).unwrap_or(0);
        -1 - side as i64
    };
    let mut key_id: HashMap<[i64; 3], usize> = HashMap::new();
    let mut pos: Vec<Point> = Vec::new();
    let mut frame_sites: Vec<usize> = Vec::new();
    let mut corner_ids: Vec<Vec<usize>> = Vec::with_capacity(cells.len());
    for (s, (verts, sides)) in cells.iter().enumerate() {
        let n = verts.len();
        let site = |k: usize| match sides[k] {
            Some(j) => j as i64,
            None => frame_site(verts[k], verts[(k + 1) % n]),
        };
        let mut ids = Vec::with_capacity(n);
        for k in 0..n {
            let mut key = [s as i64, site((k + n - 1) % n), site(k)];
            key.sort_unstable();
            let id = *key_id.entry(key).or_insert_with(|| {
                pos.push(verts[k]);
                frame_sites.push(key.iter().filter(|&&x| x < 0).count());
                pos.len() - 1
            });
            ids.push(id);
        }
        corner_ids.push(ids);
    }

    let mut ds = DisjointSet::new(pos.len());
    // coincident corners of degenerate (co-circular) seed sets
    let mut order: Vec<usize> = (0..pos.len()).collect();
    order.sort_by(|&a, &b| pos[a].0.total_cmp(&pos[b].0));
    for (i, &a) in order.iter().enumerate() {
        for &b in &order[i + 1..] {
            if pos[b].0 - pos[a].0 > 1e-6 {
                break;
            }
            if dist2(pos[a], pos[b]) < 1e-12 {
                ds.union(a, b);
            }
        }
    }
    // short sides, shortest first; sides touching the frame only collapse
    // below one pixel so cells cut by the frame keep their frame side
    let mut short: Vec<(f64, usize, usize)> = Vec::new();
    for ids in &corner_ids {
        let n = ids.len();
        for k in 0..n {
            let (a, b) = (ids[k], ids[(k + 1) % n]);
            let len = dist2(pos[a], pos[b]).sqrt();
            let interior = frame_sites[a] == 0 && frame_sites[b] == 0;
            if len < if interior { min_len } else { FRAME_SNAP_PX.min(min_len) } {
                short.push((len, a.min(b), a.max(b)));
            }
        }
    }
    short.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    for &(_, a, b) in &short {
        ds.union(a, b);
    }

    // merged position: corners of the frame outrank frame points, which
    // outrank interior points; equal ranks are averaged
    let mut best_rank = vec![0usize; pos.len()];
    for i in 0..pos.len() {
        let r = ds.find(i);
        best_rank[r] = best_rank[r].max(frame_sites[i]);
    }
    let mut acc = vec![(0.0, 0.0, 0usize); pos.len()];
    for i in 0..pos.len() {
        let r = ds.find(i);
        if frame_sites[i] == best_rank[r] {
            acc[r].0 += pos[i].0;
            acc[r].1 += pos[i].1;
            acc[r].2 += 1;
        }
    }

    cells
        .iter()
        .zip(&corner_ids)
        .map(|((_, sides), ids)| {
            let n = ids.len();
            let roots: Vec<usize> = ids.iter().map(|&i| ds.find(i)).collect();
            let mut vertices = Vec::new();
            let mut tags = Vec::new();
            let mut kept_roots: Vec<usize> = Vec::new();
            for k in 0..n {
                if roots[k] == roots[(k + 1) % n] {
                    continue;
                }
                let r = roots[k];
                kept_roots.push(r);
                vertices.push((acc[r].0 / acc[r].2 as f64, acc[r].1 / acc[r].2 as f64));
                tags.push(sides[k]);
            }
            let mut distinct = kept_roots.clone();
            distinct.sort_unstable();
            distinct.dedup();
            (distinct.len() >= 3 && distinct.len() == kept_roots.len()).then_some(MergedPolygon {
                vertices,
                sides: tags,
            })
        })
        .collect()
}

/// Draws the 8-connected digital segment between the pixels nearest to `a`
/// and `b`, clamped to the raster. Endpoints are ordered first so a shared
/// side is drawn identically from both cells.
fn draw_segment(mask: &mut BinaryMask, a: Point, b: Point) {
    let (w, h) = (mask.width as i64, mask.height as i64);
    let px = |p: Point| {
        (
            (p.0.round() as i64).clamp(0, w - 1),
            (p.1.round() as i64).clamp(0, h - 1),
        )
    };
    let (mut p, mut q) = (px(a), px(b));
    if q < p {
        std::mem::swap(&mut p, &mut q);
    }
    let (dx, dy) = ((q.0 - p.0).abs(), -(q.1 - p.1).abs());
    let (sx, sy) = (if p.0 < q.0 { 1 } else { -1 }, if p.1 < q.1 { 1 } else { -1 });
    let (mut x, mut y) = p;
    let mut err = dx + dy;
    loop {
        mask.data[(y * w + x) as usize] = true;
        if (x, y) == q {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

fn place_seeds(spec: &MosaicSpec, rng: &mut ChaCha8Rng) -> Vec<Point> {
    let (w, h) = (spec.width as f64, spec.height as f64);
    match spec.layout {
        Layout::Random => (0..spec.target_cell_count)
            .map(|_| (rng.random_range(-0.5..w - 0.5), rng.random_range(-0.5..h - 0.5)))
            .collect(),
        Layout::Hexagonal { spacing } => {
            let dx = 2.0 * spacing / 3f64.sqrt();
            let (ox, oy) = (rng.random_range(0.0..dx), rng.random_range(0.0..spacing));
            lattice(w, h, dx, spacing, ox, oy, dx / 2.0)
        }
        Layout::Square { spacing } => {
            let (ox, oy) = (rng.random_range(0.0..spacing), rng.random_range(0.0..spacing));
            lattice(w, h, spacing, spacing, ox, oy, 0.0)
        }
    }
}

/// Lattice points covering the image plus a two-pitch margin; odd rows are
/// shifted by `odd_shift`.
fn lattice(w: f64, h: f64, dx: f64, dy: f64, ox: f64, oy: f64, odd_shift: f64) -> Vec<Point> {
    let mut out = Vec::new();
    let rows = ((h + 4.0 * dy) / dy).ceil() as i64;
    let cols = ((w + 4.0 * dx) / dx).ceil() as i64;
    for r in 0..=rows {
        let y = oy - 2.0 * dy + r as f64 * dy;
        let shift = if r % 2 == 1 { odd_shift } else { 0.0 };
        for c in 0..=cols {
            let x = ox - 2.0 * dx + c as f64 * dx + shift;
            out.push((x, y));
        }
    }
    out
}

fn lloyd_step(seeds: &mut [Point], nearest: &[usize], w: usize, h: usize) {
    let mut sx = vec![0.0; seeds.len()];
    let mut sy = vec![0.0; seeds.len()];
    let mut n = vec![0usize; seeds.len()];
    for y in 0..h {
        for x in 0..w {
            let s = nearest[y * w + x];
            sx[s] += x as f64;
            sy[s] += y as f64;
            n[s] += 1;
        }
    }
    for (i, seed) in seeds.iter_mut().enumerate() {
        if n[i] > 0 {
            *seed = (sx[i] / n[i] as f64, sy[i] / n[i] as f64);
        }
    }
}

/// Bucket grid for nearest-seed queries at pixel centres.
pub(crate) struct NearestSeeds<'a> {
    seeds: &'a [Point],
    origin: Point,
    size: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<usize>>,
    w: usize,
    h: usize,
}

impl<'a> NearestSeeds<'a> {
    pub(crate) fn new(seeds: &'a [Point], w: usize, h: usize) -> Self {
        let size = ((w * h) as f64 / seeds.len().max(1) as f64).sqrt().max(4.0);
        let mut lo = (-0.5f64, -0.5f64);
        let mut hi = (w as f64, h as f64);
        for &(x, y) in seeds {
            lo = (lo.0.min(x), lo.1.min(y));
            hi = (hi.0.max(x), hi.1.max(y));
        }
        let nx = ((hi.0 - lo.0) / size).floor() as usize + 1;
        let ny = ((hi.1 - lo.1) / size).floor() as usize + 1;
        let mut buckets = vec![Vec::new(); nx * ny];
        for (i, &(x, y)) in seeds.iter().enumerate() {
            let bx = (((x - lo.0) / size) as usize).min(nx - 1);
            let by = (((y - lo.1) / size) as usize).min(ny - 1);
            buckets[by * nx + bx].push(i);
        }
        Self {
            seeds,
            origin: lo,
            size,
            nx,
            ny,
            buckets,
            w,
            h,
        }
    }

    /// Nearest seed index; ties go to the lower index.
    pub(crate) fn query(&self, px: f64, py: f64) -> usize {
        let bx = (((px - self.origin.0) / self.size) as isize).clamp(0, self.nx as isize - 1);
        let by = (((py - self.origin.1) / self.size) as isize).clamp(0, self.ny as isize - 1);
        let mut best = (f64::INFINITY, usize::MAX);
        let max_r = self.nx.max(self.ny) as isize;
        for r in 0..=max_r {
            for cy in by - r..=by + r {
                if cy < 0 || cy >= self.ny as isize {
                    continue;
                }
                let edge_row = cy == by - r || cy == by + r;
                let step = if edge_row || r == 0 { 1 } else { 2 * r };
                let mut cx = bx - r;
                while cx <= bx + r {
                    if cx >= 0 && cx < self.nx as isize {
                        for &s in &self.buckets[cy as usize * self.nx + cx as usize] {
                            let (sx, sy) = self.seeds[s];
                            let d = (sx - px) * (sx - px) + (sy - py) * (sy - py);
                            if d < best.0 || (d == best.0 && s < best.1) {
                                best = (d, s);
                            }
                        }
                    }
                    cx += step;
                }
            }
            let reach = r as f64 * self.size;
            if best.1 != usize::MAX && best.0 < reach * reach {
                break;
            }
        }
        best.1
    }

    pub(crate) fn label_all(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.w * self.h);
        for y in 0..self.h {
            for x in 0..self.w {
                out.push(self.query(x as f64, y as f64));
            }
        }
        out
    }
}

/// Voronoi cell of seed `i` by successive half-plane clipping of `rect`.
fn voronoi_cell(i: usize, seeds: &[Point], rect: &[Point; 4]) -> (Vec<Point>, Vec<Option<usize>>) {
    let si = seeds[i];
    let mut poly: Vec<(Point, Option<usize>)> = rect.iter().map(|&p| (p, None)).collect();
    let mut order: Vec<(f64, usize)> = seeds
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(j, &s)| (dist2(s, si), j))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    for (d2, j) in order {
        let reach = poly.iter().map(|(p, _)| dist2(*p, si)).fold(0.0, f64::max);
        // the bisector lies at half the seed distance
        if d2 > 4.0 * reach + 1e-9 {
            break;
        }
        poly = clip(&poly, si, seeds[j], j);
        if poly.is_empty() {
            break;
        }
    }
    poly.into_iter().unzip()
}

fn dist2(a: Point, b: Point) -> f64 {
    (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)
}

/// Keeps the part of `poly` closer to `a` than to `b`; the new side is tagged `j`.
fn clip(poly: &[(Point, Option<usize>)], a: Point, b: Point, j: usize) -> Vec<(Point, Option<usize>)> {
    let n = (b.0 - a.0, b.1 - a.1);
    let m = ((a.0 + b.0) / 2.0, (a.1 + b.1) / 2.0);
    let side = |p: Point| (p.0 - m.0) * n.0 + (p.1 - m.1) * n.1;
    let mut out = Vec::with_capacity(poly.len() + 1);
    for k in 0..poly.len() {
        let (p, tag) = poly[k];
        let (q, _) = poly[(k + 1) % poly.len()];
        let (sp, sq) = (side(p), side(q));
        let p_in = sp <= 0.0;
        let q_in = sq <= 0.0;
        let cross = || {
            let t = sp / (sp - sq);
            (p.0 + t * (q.0 - p.0), p.1 + t * (q.1 - p.1))
        };
        match (p_in, q_in) {
            (true, true) => out.push((p, tag)),
            (true, false) => {
                out.push((p, tag));
                out.push((cross(), Some(j)));
            }
            (false, true) => out.push((cross(), tag)),
            (false, false) => {}
        }
    }
    // drop duplicate consecutive points produced by vertices on the line
    let mut dedup: Vec<(Point, Option<usize>)> = Vec::with_capacity(out.len());
    for item in out {
        if let Some(last) = dedup.last_mut() {
            if dist2(last.0, item.0) < 1e-18 {
                last.1 = item.1;
                continue;
            }
        }
        dedup.push(item);
    }
    if dedup.len() > 1 && dist2(dedup[0].0, dedup[dedup.len() - 1].0) < 1e-18 {
        dedup.pop();
    }
    if dedup.len() < 3 {
        return Vec::new();
    }
    dedup
}
