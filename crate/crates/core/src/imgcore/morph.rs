//! Connected components, dilation and topology-preserving ridge thinning.

use super::{offset, BinaryMask, LabelMap, N4, N8};
use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};
use std::sync::OnceLock;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    Eight,
}

impl Connectivity {
    fn offsets(self) -> &'static [(isize, isize)] {
        match self {
            Connectivity::Four => &N4,
            Connectivity::Eight => &N8,
        }
    }
}

/// Labels foreground components `1..=K` in raster-scan order of their first pixel.
pub fn connected_components(mask: &BinaryMask, connectivity: Connectivity) -> LabelMap {
    let (w, h) = (mask.width, mask.height);
    let mut labels = LabelMap::new(w, h);
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !mask.data[start] || labels.data[start] != 0 {
            continue;
        }
        next += 1;
        labels.data[start] = next;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            let (x, y) = (i % w, i / w);
            for &d in connectivity.offsets() {
                if let Some((nx, ny)) = offset(x, y, d, w, h) {
                    let j = ny * w + nx;
                    if mask.data[j] && labels.data[j] == 0 {
                        labels.data[j] = next;
                        queue.push_back(j);
                    }
                }
            }
        }
    }
    labels
}

/// Renumbers labels `1..=K` in order of first appearance; returns `K`.
pub fn compact_labels(labels: &mut LabelMap) -> usize {
    let max = labels.num_labels();
    let mut map = vec![0u32; max + 1];
    let mut next = 0u32;
    for l in labels.data.iter_mut() {
        if *l == 0 {
            continue;
        }
        let m = &mut map[*l as usize];
        if *m == 0 {
            next += 1;
            *m = next;
        }
        *l = *m;
    }
    next as usize
}

/// Chebyshev (square structuring element) dilation.
pub fn dilate(mask: &BinaryMask, radius: usize) -> BinaryMask {
    if radius == 0 {
        return mask.clone();
    }
    let (w, h) = (mask.width, mask.height);
    let run = |get: &dyn Fn(usize) -> bool, n: usize| -> Vec<bool> {
        let mut prefix = vec![0usize; n + 1];
        for i in 0..n {
            prefix[i + 1] = prefix[i] + get(i) as usize;
        }
        (0..n)
            .map(|i| {
                let lo = i.saturating_sub(radius);
                let hi = (i + radius + 1).min(n);
                prefix[hi] > prefix[lo]
            })
            .collect()
    };
    let mut tmp = vec![false; w * h];
    for y in 0..h {
        let row = run(&|x| mask.data[y * w + x], w);
        tmp[y * w..(y + 1) * w].copy_from_slice(&row);
    }
    let mut out = BinaryMask::new(w, h);
    for x in 0..w {
        let col = run(&|y| tmp[y * w + x], h);
        for (y, v) in col.into_iter().enumerate() {
            out.data[y * w + x] = v;
        }
    }
    out
}

fn simple_table() -> &'static [bool; 256] {
    static TABLE: OnceLock<[bool; 256]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [false; 256];
        for (pattern, slot) in t.iter_mut().enumerate() {
            let fg: Vec<bool> = (0..8).map(|i| pattern & (1 << i) != 0).collect();
            let c8 = ring_components(&fg, true, |a, b| {
                (a.0 - b.0).abs().max((a.1 - b.1).abs()) == 1
            });
            let bg: Vec<bool> = fg.iter().map(|b| !b).collect();
            let c4 = ring_components(&bg, false, |a, b| (a.0 - b.0).abs() + (a.1 - b.1).abs() == 1);
            *slot = c8 == 1 && c4 == 1;
        }
        // an isolated ridge pixel separates nothing
        t[0] = true;
        t
    })
}

/// Counts components among the selected ring positions. For background
/// components only those touching a 4-neighbour of the centre are counted.
fn ring_components(
    selected: &[bool],
    count_all: bool,
    adjacent: impl Fn((isize, isize), (isize, isize)) -> bool,
) -> usize {
    let mut comp = [usize::MAX; 8];
    let mut n = 0;
    for s in 0..8 {
        if !selected[s] || comp[s] != usize::MAX {
            continue;
        }
        comp[s] = n;
        let mut stack = vec![s];
        while let Some(i) = stack.pop() {
            for j in 0..8 {
                if selected[j] && comp[j] == usize::MAX && adjacent(N8[i], N8[j]) {
                    comp[j] = n;
                    stack.push(j);
                }
            }
        }
        n += 1;
    }
    if count_all {
        return n;
    }
    let mut touching = vec![false; n];
    for i in (0..8).step_by(2) {
        if selected[i] {
            touching[comp[i]] = true;
        }
    }
    touching.into_iter().filter(|&b| b).count()
}

/// True when removing the ridge pixel at `(x, y)` changes neither the number
/// of 8-connected ridge components nor the 4-connected background regions
/// around it. Pixels outside the frame count as ridge.
pub fn is_simple_ridge_point(labels: &LabelMap, x: usize, y: usize) -> bool {
    simple_table()[ridge_pattern(labels, x, y)]
}

#[inline]
fn ridge_pattern(labels: &LabelMap, x: usize, y: usize) -> usize {
    let (w, h) = (labels.width, labels.height);
    let mut pattern = 0usize;
    for (i, &d) in N8.iter().enumerate() {
        let ridge = match offset(x, y, d, w, h) {
            Some((nx, ny)) => labels.data[ny * w + nx] == 0,
            None => true,
        };
        if ridge {
            pattern |= 1 << i;
        }
    }
    pattern
}

/// Thins the zero-labelled ridge set to 1-pixel-wide 8-connected curves.
///
/// Removed ridge pixels join the region of their background 4-neighbour, so
/// distinct regions are never merged. Returns the number of pixels removed.
pub fn thin_ridges(labels: &mut LabelMap) -> usize {
    thin_impl(labels, None)
}

/// Like [`thin_ridges`] but only pixels flagged in `candidates` may be removed.
pub fn thin_ridges_restricted(labels: &mut LabelMap, candidates: &BinaryMask) -> usize {
    thin_impl(labels, Some(candidates))
}

/// Thins the ridge set like [`thin_ridges`], removing the lowest-valued
/// simple pixels first so the surviving line follows the crest of `values`.
pub fn thin_ridges_by_value(labels: &mut LabelMap, values: &[f64]) -> usize {
    let (w, h) = (labels.width, labels.height);
    assert_eq!(values.len(), w * h, "values must match the label raster");
    let table = simple_table();
    let fill_of = |labels: &LabelMap, x: usize, y: usize| {
        N4.iter()
            .filter_map(|&d| offset(x, y, d, w, h))
            .map(|(nx, ny)| labels.data[ny * w + nx])
            .find(|&l| l != 0)
    };
    let mut heap = BinaryHeap::new();
    for (i, &l) in labels.data.iter().enumerate() {
        if l == 0 {
            heap.push(Reverse((values[i].total_cmp_key(), i)));
        }
    }
    let mut removed = 0;
    while let Some(Reverse((_, i))) = heap.pop() {
        if labels.data[i] != 0 {
            continue;
        }
        let (x, y) = (i % w, i / w);
        let Some(fill) = fill_of(labels, x, y) else {
            continue;
        };
        if !table[ridge_pattern(labels, x, y)] {
            continue;
        }
        labels.data[i] = fill;
        removed += 1;
        for &d in &N8 {
            if let Some((nx, ny)) = offset(x, y, d, w, h) {
                let j = ny * w + nx;
                if labels.data[j] == 0 {
                    heap.push(Reverse((values[j].total_cmp_key(), j)));
                }
            }
        }
    }
    removed
}

trait TotalKey {
    fn total_cmp_key(self) -> i64;
}

impl TotalKey for f64 {
    /// Integer key ordering like `f64::total_cmp`.
    fn total_cmp_key(self) -> i64 {
        let b = self.to_bits() as i64;
        b ^ ((((b >> 63) as u64) >> 1) as i64)
    }
}

fn thin_impl(labels: &mut LabelMap, candidates: Option<&BinaryMask>) -> usize {
    let (w, h) = (labels.width, labels.height);
    let table = simple_table();
    let mut removed = 0;
    loop {
        let mut changed = false;
        for &dir in &N4 {
            for y in 0..h {
                for x in 0..w {
                    let i = y * w + x;
                    if labels.data[i] != 0 {
                        continue;
                    }
                    if let Some(c) = candidates {
                        if !c.data[i] {
                            continue;
                        }
                    }
                    let Some((bx, by)) = offset(x, y, dir, w, h) else {
                        continue;
                    };
                    let fill = labels.data[by * w + bx];
                    if fill == 0 {
                        continue;
                    }
                    if table[ridge_pattern(labels, x, y)] {
                        labels.data[i] = fill;
                        removed += 1;
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            return removed;
        }
    }
}
