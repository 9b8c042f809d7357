//! Priority-flood watershed from regional minima.

use crate::imgcore::{compact_labels, offset, thin_ridges_by_value, LabelMap, ProbMap, N4};
use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

/// Floods the map from its regional minima (4-connected plateaus with no
/// lower neighbour). A pixel joins a basin when all its labelled 4-neighbours
/// agree; otherwise it becomes ridge. Ridges are then thinned to 1-pixel
/// 8-connected lines along their crest and labels compacted to `1..=K`.
pub fn watershed(map: &ProbMap) -> LabelMap {
    let (w, h) = (map.width, map.height);
    let n = w * h;
    // values are in [0, 1], so the IEEE bit pattern orders like the value
    let key: Vec<u64> = map.data.iter().map(|v| v.max(0.0).to_bits()).collect();
    let mut labels = LabelMap::new(w, h);
    let mut done = vec![false; n];
    let mut queued = vec![false; n];

    // regional minima
    let mut seen = vec![false; n];
    let mut next = 0u32;
    let mut plateau = Vec::new();
    let mut bfs = VecDeque::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        plateau.clear();
        let v = key[start];
        let mut minimum = true;
        seen[start] = true;
        bfs.push_back(start);
        while let Some(i) = bfs.pop_front() {
            plateau.push(i);
            let (x, y) = (i % w, i / w);
            for &d in &N4 {
                if let Some((nx, ny)) = offset(x, y, d, w, h) {
                    let j = ny * w + nx;
                    if key[j] < v {
                        minimum = false;
                    } else if key[j] == v && !seen[j] {
                        seen[j] = true;
                        bfs.push_back(j);
                    }
                }
            }
        }
        if minimum {
            next += 1;
            for &i in &plateau {
                labels.data[i] = next;
                done[i] = true;
            }
        }
    }

    let mut heap = BinaryHeap::new();
    let mut counter = 0u64;
    let mut push = |heap: &mut BinaryHeap<Reverse<(u64, u64, usize)>>, queued: &mut [bool], j: usize| {
        queued[j] = true;
        heap.push(Reverse((key[j], counter, j)));
        counter += 1;
    };
    for i in 0..n {
        if !done[i] {
            continue;
        }
        let (x, y) = (i % w, i / w);
        for &d in &N4 {
            if let Some((nx, ny)) = offset(x, y, d, w, h) {
                let j = ny * w + nx;
                if !done[j] && !queued[j] {
                    push(&mut heap, &mut queued, j);
                }
            }
        }
    }
    while let Some(Reverse((_, _, i))) = heap.pop() {
        let (x, y) = (i % w, i / w);
        let mut label = 0u32;
        let mut conflict = false;
        for &d in &N4 {
            if let Some((nx, ny)) = offset(x, y, d, w, h) {
                let j = ny * w + nx;
                let l = labels.data[j];
                if done[j] && l != 0 {
                    if label == 0 {
                        label = l;
                    } else if l != label {
                        conflict = true;
                    }
                }
            }
        }
        done[i] = true;
        if conflict || label == 0 {
            continue;
        }
        labels.data[i] = label;
        for &d in &N4 {
            if let Some((nx, ny)) = offset(x, y, d, w, h) {
                let j = ny * w + nx;
                if !done[j] && !queued[j] {
                    push(&mut heap, &mut queued, j);
                }
            }
        }
    }
    thin_ridges_by_value(&mut labels, &map.data);
    compact_labels(&mut labels);
    labels
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_map_is_one_basin() {
        let l = watershed(&ProbMap::filled(12, 9, 0.2));
        assert_eq!(l.num_labels(), 1);
        assert!(l.data.iter().all(|&v| v == 1));
    }

    #[test]
    fn two_wells_are_split_by_a_thin_ridge() {
        let (w, h) = (40, 20);
        let mut vals = Vec::new();
        for y in 0..h {
            for x in 0..w {
                let d1 = ((x as f64 - 10.0).powi(2) + (y as f64 - 10.0).powi(2)) / 30.0;
                let d2 = ((x as f64 - 29.0).powi(2) + (y as f64 - 10.0).powi(2)) / 30.0;
                vals.push(1.0 - 0.5 * (-d1).exp() - 0.5 * (-d2).exp());
            }
        }
        let map = ProbMap::from_values(w, h, vals).unwrap();
        let l = watershed(&map);
        assert_eq!(l.num_labels(), 2);
        for y in 0..h {
            let ridge: Vec<usize> = (0..w).filter(|&x| l.get(x, y) == 0).collect();
            assert_eq!(ridge.len(), 1, "row {y}: {ridge:?}");
            assert!((18..=21).contains(&ridge[0]));
        }
    }
}
