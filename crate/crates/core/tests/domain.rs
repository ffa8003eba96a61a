use std::collections::{BTreeSet, VecDeque};

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use topoinfer::domain::{build_mesh, connected_components, Connectivity, IntrinsicVolumes, Lattice, SearchSpace};

/// Breadth-first flood fill over a 2D grid written directly from the
/// neighbourhood definition.
fn flood_fill_count(n: usize, member: &[bool], diagonal: bool) -> usize {
    let mut seen = vec![false; n * n];
    let mut count = 0;
    for start in 0..n * n {
        if !member[start] || seen[start] {
            continue;
        }
        count += 1;
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            let (i, j) = ((v / n) as i64, (v % n) as i64);
            for di in -1..=1i64 {
                for dj in -1..=1i64 {
                    if (di, dj) == (0, 0) || (!diagonal && di != 0 && dj != 0) {
                        continue;
                    }
                    let (a, b) = (i + di, j + dj);
                    if a < 0 || b < 0 || a >= n as i64 || b >= n as i64 {
                        continue;
                    }
                    let w = (a as usize) * n + b as usize;
                    if member[w] && !seen[w] {
                        seen[w] = true;
                        queue.push_back(w);
                    }
                }
            }
        }
    }
    count
}

#[test]
fn random_masks_match_flood_fill() {
    let n = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let space = SearchSpace::from(Lattice::full(&[n, n]).unwrap());
    for trial in 0..200 {
        let density = 0.3 + 0.4 * (trial % 5) as f64 / 4.0;
        let member: Vec<bool> = (0..n * n).map(|_| rng.random::<f64>() < density).collect();
        for (conn, diagonal) in [(Connectivity::Face, false), (Connectivity::Full, true)] {
            let comps = connected_components(&space, &member, conn);
            assert_eq!(comps.len(), flood_fill_count(n, &member, diagonal));
            let covered: usize = comps.iter().map(Vec::len).sum();
            assert_eq!(covered, member.iter().filter(|&&m| m).count());
        }
    }
}

fn grid_sheet(n: usize) -> (Vec<Vec<f64>>, Vec<Vec<usize>>) {
    let vertices = (0..n * n).map(|v| vec![(v / n) as f64, (v % n) as f64]).collect();
    let mut tris = Vec::new();
    for i in 0..n - 1 {
        for j in 0..n - 1 {
            let a = i * n + j;
            tris.push(vec![a, a + 1, a + n]);
            tris.push(vec![a + 1, a + n + 1, a + n]);
        }
    }
    (vertices, tris)
}

#[test]
fn components_do_not_depend_on_vertex_order() {
    let n = 14;
    let (vertices, tris) = grid_sheet(n);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let member: Vec<bool> = (0..n * n).map(|_| rng.random::<f64>() < 0.5).collect();
    let reference = connected_components(&build_mesh(vertices.clone(), tris.clone()).unwrap(), &member, Connectivity::Full);
    let as_sets = |comps: Vec<Vec<usize>>| comps.into_iter().map(|c| c.into_iter().collect::<BTreeSet<_>>()).collect::<BTreeSet<_>>();
    let reference = as_sets(reference);
    for _ in 0..10 {
        // new label of old vertex v is perm[v]
        let mut perm: Vec<usize> = (0..n * n).collect();
        perm.shuffle(&mut rng);
        let mut shuffled_vertices = vec![Vec::new(); n * n];
        let mut shuffled_member = vec![false; n * n];
        for v in 0..n * n {
            shuffled_vertices[perm[v]] = vertices[v].clone();
            shuffled_member[perm[v]] = member[v];
        }
        let mut shuffled_tris: Vec<Vec<usize>> = tris.iter().map(|t| t.iter().map(|&v| perm[v]).collect()).collect();
        shuffled_tris.shuffle(&mut rng);
        let mesh = build_mesh(shuffled_vertices, shuffled_tris).unwrap();
        let mut inverse = vec![0; n * n];
        for (v, &p) in perm.iter().enumerate() {
            inverse[p] = v;
        }
        let comps: Vec<Vec<usize>> = connected_components(&mesh, &shuffled_member, Connectivity::Full)
            .into_iter()
            .map(|c| c.into_iter().map(|p| inverse[p]).collect())
            .collect();
        assert_eq!(as_sets(comps), reference);
    }
}

fn rotate(p: &[f64], angles: (f64, f64, f64), shift: [f64; 3]) -> Vec<f64> {
    let (a, b, c) = angles;
    let (x, y, z) = (p[0], p[1], p.get(2).copied().unwrap_or(0.0));
    // rotations about z, then y, then x
    let (x, y) = (a.cos() * x - a.sin() * y, a.sin() * x + a.cos() * y);
    let (x, z) = (b.cos() * x + b.sin() * z, -b.sin() * x + b.cos() * z);
    let (y, z) = (c.cos() * y - c.sin() * z, c.sin() * y + c.cos() * z);
    vec![x + shift[0], y + shift[1], z + shift[2]]
}

proptest! {
    #[test]
    fn mesh_volumes_survive_rigid_motion(
        a in -3.2f64..3.2, b in -3.2f64..3.2, c in -3.2f64..3.2,
        sx in -50.0f64..50.0, sy in -50.0f64..50.0, sz in -50.0f64..50.0,
        n in 3usize..9,
    ) {
        let (vertices, tris) = grid_sheet(n);
        let before = build_mesh(vertices.clone(), tris.clone()).unwrap().intrinsic_volumes();
        let moved: Vec<Vec<f64>> = vertices.iter().map(|p| rotate(p, (a, b, c), [sx, sy, sz])).collect();
        let after = build_mesh(moved, tris).unwrap().intrinsic_volumes();
        for d in 0..=2 {
            prop_assert!((before.mu[d] - after.mu[d]).abs() <= 1e-9 * before.mu[d].abs().max(1.0));
        }
        prop_assert!((before.top() - ((n - 1) * (n - 1)) as f64).abs() < 1e-9);
    }

    #[test]
    fn full_boxes_match_closed_form(nx in 1usize..9, ny in 1usize..9, nz in 1usize..9) {
        let space = SearchSpace::from(Lattice::full(&[nx, ny, nz]).unwrap());
        let (a, b, c) = ((nx - 1) as f64, (ny - 1) as f64, (nz - 1) as f64);
        let expected = [1.0, a + b + c, a * b + a * c + b * c, a * b * c];
        prop_assert_eq!(space.intrinsic_volumes().mu, expected.to_vec());
        prop_assert_eq!(IntrinsicVolumes::of_box(&[nx as f64, ny as f64, nz as f64]).mu, expected.to_vec());
    }
}
