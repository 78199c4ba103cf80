//! Brute-force 4-node orbit counter: classifies induced subgraphs by explicit
//! permutation matching against reference graphlets with hand-assigned orbit
//! labels. Structurally independent of the production enumeration path.

use gdiff_core::graph::Graph;

const GRAPHLETS: [(&[(usize, usize)], [usize; 4]); 6] = [
    (&[(0, 1), (1, 2), (2, 3)], [0, 1, 1, 0]),                    // path
    (&[(0, 1), (0, 2), (0, 3)], [3, 2, 2, 2]),                    // star
    (&[(0, 1), (1, 2), (2, 3), (3, 0)], [4, 4, 4, 4]),            // cycle
    (&[(0, 1), (1, 2), (2, 0), (2, 3)], [6, 6, 7, 5]),            // paw
    (&[(0, 1), (1, 2), (2, 0), (0, 3), (1, 3)], [9, 9, 8, 8]),    // diamond
    (&[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)], [10; 4]), // K4
];

fn adj_of(edges: &[(usize, usize)]) -> [[bool; 4]; 4] {
    let mut a = [[false; 4]; 4];
    for &(i, j) in edges {
        a[i][j] = true;
        a[j][i] = true;
    }
    a
}

fn perms() -> Vec<[usize; 4]> {
    let mut out = Vec::with_capacity(24);
    for a in 0..4usize {
        for b in 0..4usize {
            if b == a {
                continue;
            }
            for c in 0..4usize {
                if c == a || c == b {
                    continue;
                }
                out.push([a, b, c, 6 - a - b - c]);
            }
        }
    }
    out
}

fn classify(sub: &[[bool; 4]; 4]) -> Option<[usize; 4]> {
    for (edges, orbits) in GRAPHLETS {
        let reference = adj_of(edges);
        for p in perms() {
            let mut ok = true;
            'outer: for i in 0..4 {
                for j in 0..4 {
                    if sub[i][j] != reference[p[i]][p[j]] {
                        ok = false;
                        break 'outer;
                    }
                }
            }
            if ok {
                let mut res = [0usize; 4];
                for i in 0..4 {
                    res[i] = orbits[p[i]];
                }
                return Some(res);
            }
        }
    }
    None
}

pub fn oracle_orbit_counts(g: &Graph) -> Vec<[u64; 11]> {
    let nodes: Vec<usize> = (0..g.n_max()).filter(|&i| g.mask[i]).collect();
    let mut counts = vec![[0u64; 11]; g.n_max()];
    let k = nodes.len();
    for a in 0..k {
        for b in (a + 1)..k {
            for c in (b + 1)..k {
                for d in (c + 1)..k {
                    let quad = [nodes[a], nodes[b], nodes[c], nodes[d]];
                    let mut sub = [[false; 4]; 4];
                    for i in 0..4 {
                        for j in 0..4 {
                            sub[i][j] = i != j && g.a.at(quad[i], quad[j]) != 0.0;
                        }
                    }
                    if let Some(orbits) = classify(&sub) {
                        for i in 0..4 {
                            counts[quad[i]][orbits[i]] += 1;
                        }
                    }
                }
            }
        }
    }
    counts
}
