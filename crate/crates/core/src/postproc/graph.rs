//! Cell graph of a thin ridge raster and weak-edge pruning.

use crate::imgcore::{
    compact_labels, connected_components, offset, thin_ridges_restricted, BinaryMask, Connectivity, DisjointSet, LabelMap,
    ProbMap, N4, N8,
};
use std::collections::BTreeMap;

const NO_VERTEX: u32 = u32::MAX;

/// A branch point: an 8-connected cluster of ridge pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphVertex {
    /// Linear pixel indices in ascending order.
    pub pixels: Vec<usize>,
}

/// A chain of ridge pixels between (up to) two vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphEdge {
    /// Linear pixel indices ordered along the chain.
    pub pixels: Vec<usize>,
    /// Distinct vertices touching the chain (0, 1 or 2 entries).
    pub ends: Vec<usize>,
    /// The (at most two) regions on either side of the chain, ascending.
    pub regions: Vec<u32>,
    /// Mean raw edge probability over non-frame pixels, leaving out pixels
    /// next to a vertex unless nothing else remains; `None` if the chain lies
    /// entirely on the image frame.
    pub mean_intensity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellGraph {
    pub width: usize,
    pub height: usize,
    pub vertices: Vec<GraphVertex>,
    pub edges: Vec<GraphEdge>,
    /// Number of superpixels in the label map the graph was built from.
    pub superpixels: usize,
    vertex_of: Vec<u32>,
}

impl CellGraph {
    /// Vertex id owning the pixel, if any.
    pub fn vertex_at(&self, i: usize) -> Option<usize> {
        match self.vertex_of[i] {
            NO_VERTEX => None,
            v => Some(v as usize),
        }
    }

    /// Number of edges incident to each vertex.
    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.vertices.len()];
        for e in &self.edges {
            for &v in &e.ends {
                deg[v] += 1;
            }
        }
        deg
    }

    /// Per label (index 0 unused): the distinct vertices 8-adjacent to the
    /// region.
    pub fn vertices_per_region(&self, labels: &LabelMap) -> Vec<Vec<usize>> {
        let (w, h) = (self.width, self.height);
        let mut out = vec![Vec::new(); labels.num_labels() + 1];
        for (v, vert) in self.vertices.iter().enumerate() {
            let mut touched: Vec<u32> = Vec::new();
            for &i in &vert.pixels {
                let (x, y) = (i % w, i / w);
                for &d in &N8 {
                    if let Some((nx, ny)) = offset(x, y, d, w, h) {
                        let l = labels.data[ny * w + nx];
                        if l != 0 && !touched.contains(&l) {
                            touched.push(l);
                        }
                    }
                }
            }
            for l in touched {
                out[l as usize].push(v);
            }
        }
        out
    }

    /// Per label (index 0 unused): distinct regions across its edges.
    pub fn neighbors_per_region(&self) -> Vec<Vec<u32>> {
        let mut out = vec![Vec::new(); self.superpixels + 1];
        for e in &self.edges {
            if let [a, b] = e.regions[..] {
                for (p, q) in [(a, b), (b, a)] {
                    if (p as usize) < out.len() && !out[p as usize].contains(&q) {
                        out[p as usize].push(q);
                    }
                }
            }
        }
        for n in out.iter_mut() {
            n.sort_unstable();
        }
        out
    }
}

fn ridge_neighbors(labels: &LabelMap, x: usize, y: usize) -> usize {
    let (w, h) = (labels.width, labels.height);
    N8.iter()
        .filter(|&&d| offset(x, y, d, w, h).is_some_and(|(nx, ny)| labels.data[ny * w + nx] == 0))
        .count()
}

fn is_frame(i: usize, w: usize, h: usize) -> bool {
    let (x, y) = (i % w, i / w);
    x == 0 || y == 0 || x + 1 == w || y + 1 == h
}

/// Vertices are 8-connected clusters of ridge pixels with at least three
/// ridge 8-neighbours; the other ridge pixels form chains. Chains shorter
/// than `min_edge_length` are fused with the clusters they touch.
pub fn extract_graph(labels: &LabelMap, edge: &ProbMap, min_edge_length: usize) -> CellGraph {
    let (w, h) = (labels.width, labels.height);
    let n = w * h;
    let mut branch = BinaryMask::new(w, h);
    let mut chain = BinaryMask::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if labels.data[i] != 0 {
                continue;
            }
            if ridge_neighbors(labels, x, y) >= 3 {
                branch.data[i] = true;
            } else {
                chain.data[i] = true;
            }
        }
    }
    let clusters = connected_components(&branch, Connectivity::Eight);
    let chains = connected_components(&chain, Connectivity::Eight);
    let nc = clusters.num_labels();
    let nk = chains.num_labels();

    let mut chain_pixels = vec![Vec::new(); nk + 1];
    for i in 0..n {
        let c = chains.data[i];
        if c != 0 {
            chain_pixels[c as usize].push(i);
        }
    }
    // clusters touching each chain
    let touching = |pixels: &[usize]| -> Vec<usize> {
        let mut t = Vec::new();
        for &i in pixels {
            let (x, y) = (i % w, i / w);
            for &d in &N8 {
                if let Some((nx, ny)) = offset(x, y, d, w, h) {
                    let c = clusters.data[ny * w + nx] as usize;
                    if c != 0 && !t.contains(&c) {
                        t.push(c);
                    }
                }
            }
        }
        t.sort_unstable();
        t
    };

    // fuse short chains with their clusters
    let mut ds = DisjointSet::new(nc + 1);
    let mut fused = vec![false; nk + 1];
    let mut chain_clusters = vec![Vec::new(); nk + 1];
    for c in 1..=nk {
        let t = touching(&chain_pixels[c]);
        if chain_pixels[c].len() < min_edge_length && !t.is_empty() {
            fused[c] = true;
            for pair in t.windows(2) {
                ds.union(pair[0], pair[1]);
            }
        }
        chain_clusters[c] = t;
    }
    let mut vertex_id = vec![usize::MAX; nc + 1];
    let mut vertices: Vec<GraphVertex> = Vec::new();
    for c in 1..=nc {
        let r = ds.find(c);
        if vertex_id[r] == usize::MAX {
            vertex_id[r] = vertices.len();
            vertices.push(GraphVertex { pixels: Vec::new() });
        }
        vertex_id[c] = vertex_id[r];
    }
    let mut vertex_of = vec![NO_VERTEX; n];
    for i in 0..n {
        let c = clusters.data[i] as usize;
        if c != 0 {
            vertex_of[i] = vertex_id[c] as u32;
        }
    }
    for c in 1..=nk {
        if fused[c] {
            let v = vertex_id[chain_clusters[c][0]];
            for &i in &chain_pixels[c] {
                vertex_of[i] = v as u32;
            }
        }
    }
    for (i, &v) in vertex_of.iter().enumerate() {
        if v != NO_VERTEX {
            vertices[v as usize].pixels.push(i);
        }
    }

    let mut edges = Vec::new();
    for c in 1..=nk {
        if fused[c] {
            continue;
        }
        let pixels = order_chain(&chain_pixels[c], &chains, c as u32, w, h);
        let mut ends: Vec<usize> = chain_clusters[c].iter().map(|&k| vertex_id[k]).collect();
        ends.sort_unstable();
        ends.dedup();
        let regions = side_regions(&pixels, labels);
        let touches_vertex = |i: usize| {
            let (x, y) = (i % w, i / w);
            N8.iter().any(|&d| {
                offset(x, y, d, w, h).is_some_and(|(nx, ny)| vertex_of[ny * w + nx] != NO_VERTEX)
            })
        };
        let mut inner: Vec<f64> = pixels
            .iter()
            .filter(|&&i| !is_frame(i, w, h) && !touches_vertex(i))
            .map(|&i| edge.data[i])
            .collect();
        if inner.is_empty() {
            inner = pixels
                .iter()
                .filter(|&&i| !is_frame(i, w, h))
                .map(|&i| edge.data[i])
                .collect();
        }
        let mean_intensity = if inner.is_empty() {
            None
        } else {
            Some(inner.iter().sum::<f64>() / inner.len() as f64)
        };
        edges.push(GraphEdge {
            pixels,
            ends,
            regions,
            mean_intensity,
        });
    }
    CellGraph {
        width: w,
        height: h,
        vertices,
        edges,
        superpixels: labels.num_labels(),
        vertex_of,
    }
}

/// Walks the chain from an endpoint, preferring 4-neighbours.
fn order_chain(pixels: &[usize], chains: &LabelMap, id: u32, w: usize, h: usize) -> Vec<usize> {
    let neighbors = |i: usize| -> Vec<usize> {
        let (x, y) = (i % w, i / w);
        let mut out = Vec::new();
        for &d in N4.iter().chain(&[(1, -1), (1, 1), (-1, 1), (-1, -1)]) {
            if let Some((nx, ny)) = offset(x, y, d, w, h) {
                let j = ny * w + nx;
                if chains.data[j] == id {
                    out.push(j);
                }
            }
        }
        out
    };
    let start = pixels
        .iter()
        .copied()
        .find(|&i| neighbors(i).len() <= 1)
        .unwrap_or(pixels[0]);
    let mut order = Vec::with_capacity(pixels.len());
    let mut visited = std::collections::HashSet::with_capacity(pixels.len());
    let mut cur = Some(start);
    while let Some(i) = cur {
        visited.insert(i);
        order.push(i);
        cur = neighbors(i).into_iter().find(|j| !visited.contains(j));
    }
    for &i in pixels {
        if !visited.contains(&i) {
            order.push(i);
        }
    }
    order
}

/// The two most frequent region labels 4-adjacent to the chain.
fn side_regions(pixels: &[usize], labels: &LabelMap) -> Vec<u32> {
    let (w, h) = (labels.width, labels.height);
    let mut freq: BTreeMap<u32, usize> = BTreeMap::new();
    for &i in pixels {
        let (x, y) = (i % w, i / w);
        for &d in &N4 {
            if let Some((nx, ny)) = offset(x, y, d, w, h) {
                let l = labels.data[ny * w + nx];
                if l != 0 {
                    *freq.entry(l).or_default() += 1;
                }
            }
        }
    }
    let mut ranked: Vec<(u32, usize)> = freq.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut out: Vec<u32> = ranked.into_iter().take(2).map(|(l, _)| l).collect();
    out.sort_unstable();
    out
}

/// Removes weak edges (mean intensity below `threshold`).
///
/// An interior weak edge is erased completely and its two regions merge into
/// the lower label; a weak spur inside one region is erased too. A weak edge
/// touching `non_roi` only loses its central `min(3, len - 2)` pixels so both
/// end vertices survive. Passes repeat on the re-extracted graph until no weak
/// edge can be removed; labels are compacted.
pub fn prune_weak_edges(
    graph: &CellGraph,
    labels: &LabelMap,
    edge: &ProbMap,
    threshold: f64,
    non_roi: &BinaryMask,
    min_edge_length: usize,
) -> (CellGraph, LabelMap) {
    const MAX_PASSES: usize = 16;
    let mut current = (graph.clone(), labels.clone());
    for _ in 0..MAX_PASSES {
        match prune_pass(&current.0, &current.1, edge, threshold, non_roi, min_edge_length) {
            Some(next) if next.1 != current.1 => current = next,
            _ => break,
        }
    }
    current
}

fn prune_pass(
    graph: &CellGraph,
    labels: &LabelMap,
    edge: &ProbMap,
    threshold: f64,
    non_roi: &BinaryMask,
    min_edge_length: usize,
) -> Option<(CellGraph, LabelMap)> {
    let (w, h) = (labels.width, labels.height);
    let mut ds = DisjointSet::new(labels.num_labels() + 1);
    let mut out = labels.clone();
    let mut opened: Vec<(usize, u32)> = Vec::new();
    let mut candidates = BinaryMask::new(w, h);
    let mut changed = false;
    for e in &graph.edges {
        let weak = e.mean_intensity.is_some_and(|m| m < threshold);
        let [a, b] = match e.regions[..] {
            [a, b] => [a, b],
            [a] => [a, a],
            _ => continue,
        };
        if !weak {
            continue;
        }
        let near_non_roi = e.pixels.iter().any(|&i| {
            let (x, y) = (i % w, i / w);
            non_roi.data[i]
                || N8
                    .iter()
                    .any(|&d| offset(x, y, d, w, h).is_some_and(|(nx, ny)| non_roi.data[ny * w + nx]))
        });
        if near_non_roi {
            if a == b {
                continue;
            }
            let len = e.pixels.len();
            let k = 3.min(len.saturating_sub(2));
            if k == 0 {
                continue;
            }
            let start = (len - k) / 2;
            for &i in &e.pixels[start..start + k] {
                opened.push((i, a));
            }
        } else {
            for &i in &e.pixels {
                opened.push((i, a));
            }
            for &v in &e.ends {
                for &i in &graph.vertices[v].pixels {
                    candidates.data[i] = true;
                }
            }
        }
        ds.union(a as usize, b as usize);
        changed = true;
    }
    if !changed {
        return None;
    }
    for (i, l) in opened {
        out.data[i] = l;
    }
    for l in out.data.iter_mut() {
        if *l != 0 {
            *l = ds.find(*l as usize) as u32;
        }
    }
    thin_ridges_restricted(&mut out, &candidates);
    compact_labels(&mut out);
    let g = extract_graph(&out, edge, min_edge_length);
    Some((g, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Label map from rows: '#' ridge, digits region labels.
    pub(crate) fn labels_from(rows: &[&str]) -> LabelMap {
        let h = rows.len();
        let w = rows[0].len();
        let mut l = LabelMap::new(w, h);
        for (y, r) in rows.iter().enumerate() {
            for (x, c) in r.chars().enumerate() {
                l.data[y * w + x] = c.to_digit(10).unwrap_or(0);
            }
        }
        l
    }

    #[test]
    fn plus_sign_has_one_vertex_and_four_edges() {
        let l = labels_from(&[
            "1111#2222",
            "1111#2222",
            "1111#2222",
            "#########",
            "3333#4444",
            "3333#4444",
            "3333#4444",
        ]);
        let g = extract_graph(&l, &ProbMap::filled(9, 7, 1.0), 2);
        assert_eq!(g.vertices.len(), 1);
        assert_eq!(g.edges.len(), 4);
        assert_eq!(g.degrees(), vec![4]);
        let nb = g.neighbors_per_region();
        assert_eq!(nb[1], vec![2, 3]);
    }

    #[test]
    fn one_pixel_chain_between_branch_points_is_fused() {
        let l = labels_from(&[
            "111#22222222#3333",
            "111#22222222#3333",
            "#################",
            "44444444#55555555",
            "44444444#55555555",
        ]);
        let edge = ProbMap::filled(17, 5, 1.0);
        assert_eq!(extract_graph(&l, &edge, 1).vertices.len(), 3);
        let g = extract_graph(&l, &edge, 2);
        assert_eq!(g.vertices.len(), 2);
        // the 2-pixel chain survives as an edge between the two vertices
        assert!(g.edges.iter().any(|e| e.pixels.len() == 2 && e.ends.len() == 2));
    }

    #[test]
    fn weak_interior_edge_merges_cells() {
        let l = labels_from(&[
            "1111#2222",
            "1111#2222",
            "1111#2222",
            "#########",
            "3333#4444",
            "3333#4444",
            "3333#4444",
        ]);
        let mut edge = ProbMap::filled(9, 7, 1.0);
        for y in 0..3 {
            edge.set(4, y, 0.05);
        }
        let g = extract_graph(&l, &edge, 2);
        let (g2, l2) = prune_weak_edges(&g, &l, &edge, 0.1, &BinaryMask::new(9, 7), 2);
        assert_eq!(l2.num_labels(), 3);
        assert_eq!(l2.get(0, 0), l2.get(8, 0));
        assert!(g2.edges.len() < g.edges.len());
    }

    #[test]
    fn strong_edges_are_untouched() {
        let l = labels_from(&["11#22", "11#22", "#####", "33#44", "33#44"]);
        let edge = ProbMap::filled(5, 5, 1.0);
        let g = extract_graph(&l, &edge, 2);
        let (g2, l2) = prune_weak_edges(&g, &l, &edge, 0.1, &BinaryMask::new(5, 5), 2);
        assert_eq!(g, g2);
        assert_eq!(l, l2);
    }
}
