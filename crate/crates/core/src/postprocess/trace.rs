use image::GrayImage;

use super::thin::binary;
use super::{RoadPolyline, RoadVectorSet, Vertex, VectorizeConfig};

/// Skeleton neighbours under mixed adjacency: 4-neighbours always, diagonal
/// neighbours only when neither shared 4-neighbour is set. This keeps
/// staircase corners from looking like branch points.
fn m_neighbors(m: &[u8], h: usize, w: usize, idx: usize) -> Vec<usize> {
    let (y, x) = ((idx / w) as isize, (idx % w) as isize);
    let on = |dy: isize, dx: isize| {
        let (ny, nx) = (y + dy, x + dx);
        (ny >= 0 && nx >= 0 && (ny as usize) < h && (nx as usize) < w && m[ny as usize * w + nx as usize] != 0)
            .then(|| ny as usize * w + nx as usize)
    };
    let mut out = Vec::with_capacity(4);
    for (dy, dx) in [(-1, 0), (0, -1), (0, 1), (1, 0)] {
        out.extend(on(dy, dx));
    }
    for (dy, dx) in [(-1, -1), (-1, 1), (1, -1), (1, 1)] {
        if on(dy, 0).is_none() && on(0, dx).is_none() {
            out.extend(on(dy, dx));
        }
    }
    out
}

#[derive(Debug, Clone)]
struct Edge {
    ends: [usize; 2],
    /// Pixel chain from `ends[0]` to `ends[1]`.
    chain: Vec<usize>,
}

struct Graph {
    /// Representative pixel of each node.
    rep: Vec<usize>,
    edges: Vec<Option<Edge>>,
    /// Closed chains without any node.
    loops: Vec<Vec<usize>>,
}

impl Graph {
    fn degree(&self, node: usize) -> usize {
        self.edges
            .iter()
            .flatten()
            .map(|e| e.ends.iter().filter(|&&n| n == node).count())
            .sum()
    }

    fn incident(&self, node: usize) -> Vec<usize> {
        (0..self.edges.len())
            .filter(|&i| self.edges[i].as_ref().is_some_and(|e| e.ends.contains(&node)))
            .collect()
    }
}

fn build_graph(m: &[u8], h: usize, w: usize) -> Graph {
    let nbrs: Vec<Vec<usize>> = (0..h * w)
        .map(|i| if m[i] != 0 { m_neighbors(m, h, w, i) } else { Vec::new() })
        .collect();
    // Endpoints are nodes of their own; adjacent junction pixels share one.
    let mut node_of: Vec<Option<usize>> = vec![None; h * w];
    let mut rep = Vec::new();
    for start in 0..h * w {
        let deg = nbrs[start].len();
        if m[start] == 0 || deg == 2 || deg == 0 || node_of[start].is_some() {
            continue;
        }
        let id = rep.len();
        node_of[start] = Some(id);
        let mut members = vec![start];
        if deg >= 3 {
            let mut k = 0;
            while k < members.len() {
                for &q in &nbrs[members[k]] {
                    if nbrs[q].len() >= 3 && node_of[q].is_none() {
                        node_of[q] = Some(id);
                        members.push(q);
                    }
                }
                k += 1;
            }
        }
        let n = members.len() as f64;
        let cy = members.iter().map(|&p| (p / w) as f64).sum::<f64>() / n;
        let cx = members.iter().map(|&p| (p % w) as f64).sum::<f64>() / n;
        let d2 = |p: usize| ((p / w) as f64 - cy).powi(2) + ((p % w) as f64 - cx).powi(2);
        members.sort_unstable();
        let best = members
            .iter()
            .copied()
            .min_by(|&a, &b| d2(a).total_cmp(&d2(b)))
            .expect("cluster is non-empty");
        rep.push(best);
    }

    let mut visited = vec![false; h * w];
    let mut edges = Vec::new();
    for n in 0..h * w {
        let Some(a) = node_of[n] else { continue };
        for &q in &nbrs[n] {
            if let Some(b) = node_of[q] {
                if a != b && n < q {
                    edges.push(Some(Edge {
                        ends: [a, b],
                        chain: vec![n, q],
                    }));
                }
                continue;
            }
            if visited[q] {
                continue;
            }
            let mut chain = vec![n, q];
            visited[q] = true;
            let (mut prev, mut cur) = (n, q);
            let end = loop {
                let Some(&next) = nbrs[cur].iter().find(|&&r| r != prev) else {
                    break None;
                };
                chain.push(next);
                if let Some(b) = node_of[next] {
                    break Some(b);
                }
                if visited[next] {
                    break None;
                }
                visited[next] = true;
                (prev, cur) = (cur, next);
            };
            if let Some(b) = end {
                edges.push(Some(Edge { ends: [a, b], chain }));
            }
        }
    }

    let mut loops = Vec::new();
    for s in 0..h * w {
        if m[s] == 0 || visited[s] || node_of[s].is_some() || nbrs[s].len() != 2 {
            continue;
        }
        visited[s] = true;
        let mut chain = vec![s];
        let (mut prev, mut cur) = (s, nbrs[s][0]);
        while cur != s && !visited[cur] {
            visited[cur] = true;
            chain.push(cur);
            let Some(&next) = nbrs[cur].iter().find(|&&r| r != prev) else { break };
            (prev, cur) = (cur, next);
        }
        if cur == s {
            chain.push(s);
        }
        loops.push(chain);
    }
    Graph { rep, edges, loops }
}

/// Drops endpoint-to-junction branches shorter than `spur_px`, shortest
/// first, while the junction keeps at least three branches. Short loops
/// from a junction back to itself go too.
fn prune_spurs(g: &mut Graph, spur_px: usize) {
    let mut spurs: Vec<(usize, usize)> = g
        .edges
        .iter()
        .enumerate()
        .filter_map(|(i, e)| e.as_ref().map(|e| (e.chain.len(), i)))
        .filter(|&(len, _)| len < spur_px)
        .collect();
    spurs.sort_unstable();
    for (_, i) in spurs {
        let Some(e) = g.edges[i].as_ref() else { continue };
        let [a, b] = e.ends;
        if a == b {
            g.edges[i] = None;
            continue;
        }
        let (da, db) = (g.degree(a), g.degree(b));
        if (da == 1 && db >= 3) || (db == 1 && da >= 3) {
            g.edges[i] = None;
        }
    }
}

/// Joins the two branches meeting at every node of degree two.
fn merge_through(g: &mut Graph) {
    loop {
        let mut merged = false;
        for node in 0..g.rep.len() {
            let inc = g.incident(node);
            if inc.len() != 2 {
                continue;
            }
            let mut e1 = g.edges[inc[0]].take().expect("incident edge exists");
            let mut e2 = g.edges[inc[1]].take().expect("incident edge exists");
            if e1.ends[1] != node {
                e1.ends.reverse();
                e1.chain.reverse();
            }
            if e2.ends[0] != node {
                e2.ends.reverse();
                e2.chain.reverse();
            }
            let mut chain = e1.chain;
            let skip = usize::from(chain.last() == e2.chain.first());
            chain.extend_from_slice(&e2.chain[skip..]);
            g.edges[inc[0]] = Some(Edge {
                ends: [e1.ends[0], e2.ends[1]],
                chain,
            });
            merged = true;
        }
        if !merged {
            break;
        }
    }
}

fn to_vertices(chain: &[usize], w: usize) -> Vec<Vertex> {
    let mut out: Vec<Vertex> = Vec::with_capacity(chain.len());
    for &p in chain {
        let v = (p % w, p / w);
        if out.last() != Some(&v) {
            out.push(v);
        }
    }
    out
}

/// Pixel chains of a skeleton after spur pruning and merging, with branch
/// ends snapped to their junction's representative pixel. Every chain has
/// at least two distinct vertices.
pub(crate) fn trace_chains(skeleton: &GrayImage, spur_px: usize) -> Vec<Vec<Vertex>> {
    let (h, w) = (skeleton.height() as usize, skeleton.width() as usize);
    let m = binary(skeleton);
    let mut g = build_graph(&m, h, w);
    prune_spurs(&mut g, spur_px);
    merge_through(&mut g);
    let mut out = Vec::new();
    for e in g.edges.iter().flatten() {
        let mut chain = e.chain.clone();
        if g.degree(e.ends[0]) >= 3 && chain[0] != g.rep[e.ends[0]] {
            chain.insert(0, g.rep[e.ends[0]]);
        }
        if g.degree(e.ends[1]) >= 3 && chain.last() != Some(&g.rep[e.ends[1]]) {
            chain.push(g.rep[e.ends[1]]);
        }
        out.push(to_vertices(&chain, w));
    }
    out.extend(g.loops.iter().map(|c| to_vertices(c, w)));
    out.retain(|c| c.len() >= 2);
    out
}

fn seg_dist(p: Vertex, a: Vertex, b: Vertex) -> f64 {
    let f = |v: Vertex| (v.0 as f64, v.1 as f64);
    let (p, a, b) = (f(p), f(a), f(b));
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let l2 = dx * dx + dy * dy;
    let t = if l2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / l2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    ((p.0 - a.0 - t * dx).powi(2) + (p.1 - a.1 - t * dy).powi(2)).sqrt()
}

/// Douglas–Peucker simplification; both ends are always kept.
pub fn douglas_peucker(points: &[Vertex], tolerance: f64) -> Vec<Vertex> {
    let n = points.len();
    if n <= 2 {
        return points.to_vec();
    }
    let mut keep = vec![false; n];
    keep[0] = true;
    keep[n - 1] = true;
    let mut stack = vec![(0, n - 1)];
    while let Some((lo, hi)) = stack.pop() {
        if hi <= lo + 1 {
            continue;
        }
        let (far, d) = (lo + 1..hi)
            .map(|i| (i, seg_dist(points[i], points[lo], points[hi])))
            .fold((lo, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if d > tolerance {
            keep[far] = true;
            stack.push((lo, far));
            stack.push((far, hi));
        }
    }
    points.iter().zip(keep).filter_map(|(&p, k)| k.then_some(p)).collect()
}

/// Road graph of a 1-px skeleton: nodes at endpoints and junctions, one
/// simplified polyline per branch, status unset.
pub fn trace_polylines(skeleton: &GrayImage, cfg: &VectorizeConfig) -> RoadVectorSet {
    let polylines = trace_chains(skeleton, cfg.spur_px)
        .into_iter()
        .enumerate()
        .map(|(id, c)| RoadPolyline {
            id,
            vertices: douglas_peucker(&c, cfg.tolerance_px),
            status: None,
        })
        .collect();
    RoadVectorSet {
        height: skeleton.height() as usize,
        width: skeleton.width() as usize,
        polylines,
    }
}
