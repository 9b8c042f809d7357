use approx::assert_relative_eq;
use endoseg_core::biomarkers::{assign_vertices_to_cells, compute_hex_vertex};
use endoseg_core::imgcore::*;
use endoseg_core::postproc::extract_graph;
use endoseg_core::synthgen::*;

fn mosaic(seed: u64) -> GoldStandard {
    generate_mosaic(&MosaicSpec { seed, ..Default::default() }).unwrap().gold
}

fn shoelace(v: &[(f64, f64)]) -> f64 {
    let n = v.len();
    (0..n)
        .map(|i| v[i].0 * v[(i + 1) % n].1 - v[(i + 1) % n].0 * v[i].1)
        .sum::<f64>()
        .abs()
        / 2.0
}

fn touches_frame(v: &[(f64, f64)], w: usize, h: usize) -> bool {
    v.iter().any(|&(x, y)| {
        x < 0.0 || y < 0.0 || x > w as f64 - 1.0 || y > h as f64 - 1.0
    })
}

#[test]
fn same_seed_same_mosaic() {
    let spec = MosaicSpec { seed: 7, guttae_fraction: 0.05, ..Default::default() };
    let a = generate_mosaic(&spec).unwrap();
    let b = generate_mosaic(&spec).unwrap();
    assert_eq!(a.gold, b.gold);
    let ga = insert_guttae(&a.gold, &spec);
    let gb = insert_guttae(&b.gold, &spec);
    assert_eq!(ga, gb);
    assert_eq!(render_specular(&ga, &spec), render_specular(&gb, &spec));
    let other = generate_mosaic(&MosaicSpec { seed: 8, ..spec }).unwrap();
    assert_ne!(a.gold.regions, other.gold.regions);
}

#[test]
fn regular_hexagons() {
    let spec = MosaicSpec {
        layout: Layout::Hexagonal { spacing: 24.0 },
        seed: 3,
        ..Default::default()
    };
    let m = generate_mosaic(&spec).unwrap();
    let truth = true_biomarkers(&m.gold);
    assert!(truth.n_cells > 100);
    assert_eq!(truth.hex_vertex, Some(100.0));
    assert_eq!(truth.hex_neighbor, Some(100.0));
    assert!(truth.per_cell.iter().filter(|c| c.inner).all(|c| c.neighbors == 6));

    // polygons are congruent; pixel areas differ only by digitisation
    let areas: Vec<f64> = m
        .polygons
        .iter()
        .filter(|p| p.label != 0 && !touches_frame(&p.vertices, spec.width, spec.height))
        .map(|p| shoelace(&p.vertices))
        .collect();
    assert!(areas.len() > 100);
    let expected = 2.0 * 24.0 * 24.0 / 3f64.sqrt();
    for a in &areas {
        assert_relative_eq!(*a, expected, max_relative = 1e-9);
    }
    assert!(truth.cv.unwrap() < 2.5, "raster CV {:?}", truth.cv);
}

#[test]
fn square_lattice_density() {
    // 24x24 interiors plus 1-px shared ridges
    let spec = MosaicSpec {
        layout: Layout::Square { spacing: 25.0 },
        ..Default::default()
    };
    let truth = true_biomarkers(&generate_mosaic(&spec).unwrap().gold);
    assert!(truth.n_cells >= 100);
    assert!(truth.per_cell.iter().all(|c| c.area_px == 576 && c.vertices == 4));
    assert_relative_eq!(truth.ecd.unwrap(), 1600.0, max_relative = 1e-9);
    assert_eq!(truth.cv, Some(0.0));
    assert_eq!(truth.hex_vertex, Some(0.0));
}

#[test]
fn one_cell_mosaic_is_a_partial_cell() {
    let spec = MosaicSpec { target_cell_count: 1, ..Default::default() };
    let gold = generate_mosaic(&spec).unwrap().gold;
    assert_eq!(gold.regions.num_labels(), 1);
    assert_eq!(gold.regions.ridge_mask().count(), 0);
    assert_eq!(gold.status[1], CellStatus::Partial);
    assert!(gold.cells.is_empty());
    assert!(true_biomarkers(&gold).is_empty());
}

#[test]
fn edges_are_one_pixel_closed_curves() {
    for seed in 0..3 {
        let gold = mosaic(seed);
        let mut thinned = gold.regions.clone();
        assert_eq!(thin_ridges(&mut thinned), 0, "ridge not 1-px wide");
        let (w, h) = (gold.width(), gold.height());
        for c in &gold.cells {
            for y in 0..h {
                for x in 0..w {
                    if gold.regions.get(x, y) != c.id {
                        continue;
                    }
                    for (dx, dy) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                        let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                        assert!(nx >= 0 && ny >= 0 && nx < w as i64 && ny < h as i64);
                        let (nx, ny) = (nx as usize, ny as usize);
                        let l = gold.regions.get(nx, ny);
                        assert!(l == c.id || (l == 0 && gold.annotation.get(nx, ny) == EDGE));
                    }
                }
            }
        }
    }
}

#[test]
fn labels_are_contiguous_and_four_connected() {
    let gold = mosaic(4);
    let k = gold.regions.num_labels();
    let areas = gold.regions.areas();
    assert!((1..=k).all(|l| areas[l] > 0));
    let mut relabeled = gold.regions.clone();
    assert_eq!(compact_labels(&mut relabeled), k);
    let ridge = gold.regions.ridge_mask();
    let interior = BinaryMask { data: ridge.data.iter().map(|r| !r).collect(), ..ridge };
    let comps = connected_components(&interior, Connectivity::Four);
    assert_eq!(comps.num_labels(), k);
    // same partition up to label ids
    let mut pairs: Vec<(u32, u32)> = comps.data.iter().copied().zip(gold.regions.data.iter().copied()).collect();
    pairs.sort_unstable();
    pairs.dedup();
    assert_eq!(pairs.len(), k + 1);
}

#[test]
fn raster_vertex_hex_equals_polygon_hex() {
    for seed in 0..8 {
        let gold = mosaic(seed);
        let truth = true_biomarkers(&gold);
        let graph = extract_graph(&gold.regions, &gold.annotation, 2);
        let per_region = assign_vertices_to_cells(&graph, &gold.regions);
        let counts: Vec<usize> = gold.cells.iter().map(|c| per_region[c.id as usize]).collect();
        for (c, rec) in counts.iter().zip(&truth.per_cell) {
            assert_eq!(*c, rec.vertices, "seed {seed} cell {}", rec.label);
        }
        assert_eq!(compute_hex_vertex(&counts), truth.hex_vertex);
    }
}

#[test]
fn annotation_partitions_the_image() {
    let spec = MosaicSpec { seed: 2, guttae_fraction: 0.06, ..Default::default() };
    let gold = insert_guttae(&generate_mosaic(&spec).unwrap().gold, &spec);
    let n = gold.width() * gold.height();
    let body = gold.body_mask();
    let edge = gold.edge_mask();
    let discard = gold.annotation.data.iter().filter(|&&a| a == DISCARD).count();
    assert_eq!(body.count() + edge.count() + discard, n);
    // body = full cells; discard = partial or occluded regions and ridges among them
    for i in 0..n {
        let l = gold.regions.data[i] as usize;
        if l != 0 {
            assert_eq!(body.data[i], gold.status[l] == CellStatus::Full);
        }
    }
    let t = make_targets(&gold);
    let blob = t.blob.threshold(1.0);
    let roi = t.roi.threshold(0.5);
    for i in 0..n {
        if body.data[i] {
            assert!(blob.data[i] && roi.data[i]);
        }
        if blob.data[i] && !body.data[i] && gold.regions.data[i] == 0 {
            assert!(edge.data[i]);
        }
    }
}

#[test]
fn thresholded_edge_target_thins_back_to_the_gold_tessellation() {
    // the clamped target saturates across a 3-px band; the crest of a
    // normalised blur of that band orders the thinning
    let crest = gaussian_kernel(7, 1.0, true).unwrap();
    for seed in 0..3 {
        let gold = mosaic(seed);
        let t = make_targets(&gold);
        for i in 0..t.edge.data.len() {
            if gold.regions.data[i] == 0 {
                assert_eq!(t.edge.data[i], 1.0);
            }
        }
        let band = t.edge.threshold(0.5);
        let values = convolve2d(&band.to_prob_map(), &crest);
        let interior = BinaryMask {
            width: band.width,
            height: band.height,
            data: band.data.iter().map(|b| !b).collect(),
        };
        let mut labels = connected_components(&interior, Connectivity::Four);
        thin_ridges_by_value(&mut labels, &values.data);
        assert_eq!(labels.num_labels(), gold.regions.num_labels());
        let near = |a: &LabelMap, b: &LabelMap| {
            let grown = dilate(&b.ridge_mask(), 1);
            a.ridge_mask().data.iter().zip(&grown.data).all(|(r, g)| !r || *g)
        };
        assert!(near(&labels, &gold.regions) && near(&gold.regions, &labels));
        let exact = labels
            .data
            .iter()
            .zip(&gold.regions.data)
            .filter(|(a, b)| **a == 0 && **b == 0)
            .count();
        assert!(exact as f64 > 0.9 * gold.regions.ridge_mask().count() as f64);
    }
}

#[test]
fn light_occlusion_keeps_the_cell() {
    let gold = mosaic(5);
    let c = &gold.cells[gold.cells.len() / 2];
    let pixels: Vec<usize> = (0..gold.regions.data.len()).filter(|&i| gold.regions.data[i] == c.id).collect();
    let mut mask = BinaryMask::new(gold.width(), gold.height());
    for &i in pixels.iter().take(pixels.len() / 5) {
        mask.data[i] = true;
    }
    let out = apply_guttae(&gold, &mask, 0.3);
    assert_eq!(out.cells.len(), gold.cells.len());
    assert!(out.cells.iter().any(|k| k.id == c.id));
}

#[test]
fn occluded_cells_become_discard_regions() {
    let gold = mosaic(6);
    let ids: Vec<u32> = gold.cells.iter().step_by(40).take(3).map(|c| c.id).collect();
    let mut mask = BinaryMask::new(gold.width(), gold.height());
    for (i, &l) in gold.regions.data.iter().enumerate() {
        if ids.contains(&l) {
            mask.data[i] = true;
        }
    }
    let out = apply_guttae(&gold, &mask, 0.3);
    assert_eq!(out.cells.len(), gold.cells.len() - 3);
    for (i, &l) in out.regions.data.iter().enumerate() {
        if ids.contains(&l) {
            assert_eq!(out.annotation.data[i], DISCARD);
        }
    }
    let truth = true_biomarkers(&out);
    assert!(truth.per_cell.iter().all(|c| !ids.contains(&c.label)));
}

#[test]
fn guttae_cover_roughly_the_requested_fraction() {
    for f in [0.02, 0.1] {
        let spec = MosaicSpec { guttae_fraction: f, seed: 9, ..Default::default() };
        let got = guttae_mask(&spec).count() as f64 / (spec.width * spec.height) as f64;
        assert!(got >= f && got < f + 0.01, "{got}");
    }
    assert_eq!(guttae_mask(&MosaicSpec::default()).count(), 0);
}

#[test]
fn rendering_is_dark_on_edges_and_guttae() {
    let spec = MosaicSpec { seed: 11, guttae_fraction: 0.05, blur_sigma: 1.5, ..Default::default() };
    let gold = insert_guttae(&generate_mosaic(&spec).unwrap().gold, &spec);
    let img = render_specular(&gold, &spec);
    assert_eq!((img.guttae_grade, img.blur_grade), (2, 2));
    assert_eq!(img.total_grade, img.guttae_grade + img.blur_grade);
    let mean_where = |pred: &dyn Fn(usize) -> bool| {
        let (mut s, mut n) = (0.0, 0usize);
        for i in 0..img.image.data.len() {
            if pred(i) {
                s += img.image.data[i] as f64;
                n += 1;
            }
        }
        s / n as f64
    };
    let body = mean_where(&|i| gold.regions.data[i] != 0 && !gold.guttae.data[i]);
    let ridge = mean_where(&|i| gold.regions.data[i] == 0 && !gold.guttae.data[i]);
    let gutta = mean_where(&|i| gold.guttae.data[i]);
    assert!(gutta < ridge && ridge < body, "{gutta} {ridge} {body}");
}

#[test]
fn gapped_edge_target_loses_only_gap_pixels() {
    let gold = mosaic(1);
    let full = make_targets(&gold).edge;
    let gapped = edge_target_with_gaps(&gold, 0.05, 3, 1);
    assert!(full.data.iter().zip(&gapped.data).all(|(a, b)| b <= a));
    let lost = full
        .threshold(0.99)
        .data
        .iter()
        .zip(&gapped.threshold(0.99).data)
        .filter(|(a, b)| **a && !**b)
        .count();
    assert!(lost > 0);
    assert_eq!(gapped, edge_target_with_gaps(&gold, 0.05, 3, 1));
}

#[test]
fn invalid_specs_are_rejected() {
    assert!(generate_mosaic(&MosaicSpec { target_cell_count: 0, ..Default::default() }).is_err());
    assert!(generate_mosaic(&MosaicSpec { guttae_fraction: 1.5, ..Default::default() }).is_err());
    assert!(generate_mosaic(&MosaicSpec { layout: Layout::Hexagonal { spacing: 1.0 }, ..Default::default() }).is_err());
}
