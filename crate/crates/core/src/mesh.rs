//! Closed triangle meshes for the balloon surface.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;
use crate::grid::Vec3;

/// Minimum triangle area, mm².
pub const MIN_TRIANGLE_AREA: f64 = 1e-9;

/// Explicit closed, consistently oriented triangle mesh with per-vertex
/// dynamics state. Adjacency is rebuilt after every topological change.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    positions: Vec<Vec3>,
    velocities: Vec<Vec3>,
    displacements: Vec<f64>,
    triangles: Vec<[usize; 3]>,
    rings: Vec<Vec<usize>>,
    vertex_faces: Vec<Vec<usize>>,
}

impl TriangleMesh {
    pub fn new(positions: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Self {
        let n = positions.len();
        let mut mesh = TriangleMesh {
            positions,
            velocities: vec![Vec3::zeros(); n],
            displacements: vec![0.0; n],
            triangles,
            rings: Vec::new(),
            vertex_faces: Vec::new(),
        };
        mesh.rebuild_adjacency();
        mesh
    }

    fn rebuild_adjacency(&mut self) {
        let n = self.positions.len();
        let mut rings: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
        let mut faces = vec![Vec::new(); n];
        for (f, t) in self.triangles.iter().enumerate() {
            for e in 0..3 {
                let (a, b) = (t[e], t[(e + 1) % 3]);
                rings[a].insert(b);
                rings[b].insert(a);
                faces[t[e]].push(f);
            }
        }
        self.rings = rings.into_iter().map(|r| r.into_iter().collect()).collect();
        self.vertex_faces = faces;
    }

    pub fn vertex_count(&self) -> usize {
        self.positions.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn position(&self, v: usize) -> Vec3 {
        self.positions[v]
    }

    pub fn set_position(&mut self, v: usize, p: Vec3) {
        self.positions[v] = p;
    }

    pub fn velocities(&self) -> &[Vec3] {
        &self.velocities
    }

    pub fn set_velocity(&mut self, v: usize, vel: Vec3) {
        self.velocities[v] = vel;
    }

    /// Magnitude of each vertex's displacement in the last step, mm.
    pub fn displacements(&self) -> &[f64] {
        &self.displacements
    }

    pub fn set_displacement(&mut self, v: usize, d: f64) {
        self.displacements[v] = d;
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    /// First-order neighbours of `v`, sorted.
    /// Triangles incident to `v`.
    pub fn faces_of(&self, v: usize) -> &[usize] {
        &self.vertex_faces[v]
    }

    pub fn ring(&self, v: usize) -> &[usize] {
        &self.rings[v]
    }

    pub fn triangle_normal_area(&self, t: usize) -> (Vec3, f64) {
        let [a, b, c] = self.triangles[t];
        let n = (self.positions[b] - self.positions[a]).cross(&(self.positions[c] - self.positions[a]));
        let len = n.norm();
        if len > 0.0 {
            (n / len, 0.5 * len)
        } else {
            (Vec3::zeros(), 0.0)
        }
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        self.triangle_normal_area(t).1
    }

    pub fn longest_edge(&self, t: usize) -> (usize, usize, f64) {
        let tri = self.triangles[t];
        let mut best: Option<(usize, usize, f64)> = None;
        for e in 0..3 {
            let (a, b) = (tri[e], tri[(e + 1) % 3]);
            let key = (a.min(b), a.max(b));
            let len = (self.positions[a] - self.positions[b]).norm();
            best = match best {
                Some((ba, bb, bl)) if bl > len || (bl == len && (ba, bb) < key) => Some((ba, bb, bl)),
                _ => Some((key.0, key.1, len)),
            };
        }
        best.unwrap()
    }

    /// Area-weighted unit normal at a vertex.
    pub fn vertex_normal(&self, v: usize) -> Vec3 {
        let mut acc = Vec3::zeros();
        for &f in &self.vertex_faces[v] {
            let [a, b, c] = self.triangles[f];
            acc += (self.positions[b] - self.positions[a]).cross(&(self.positions[c] - self.positions[a]));
        }
        let n = acc.norm();
        if n > 0.0 {
            acc / n
        } else {
            acc
        }
    }

    pub fn vertex_normals(&self) -> Vec<Vec3> {
        (0..self.vertex_count()).map(|v| self.vertex_normal(v)).collect()
    }

    pub fn ring_centroid(&self, v: usize) -> Vec3 {
        let ring = &self.rings[v];
        ring.iter().fold(Vec3::zeros(), |acc, &u| acc + self.positions[u]) / ring.len() as f64
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.triangle_count()).map(|t| self.triangle_area(t)).sum()
    }

    /// Signed enclosed volume, positive for outward orientation.
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|&[a, b, c]| self.positions[a].dot(&self.positions[b].cross(&self.positions[c])) / 6.0)
            .sum()
    }

    pub fn centroid(&self) -> Vec3 {
        self.positions.iter().fold(Vec3::zeros(), |a, p| a + p) / self.vertex_count() as f64
    }

    /// Checks closedness, manifoldness, consistent outward orientation and
    /// non-degenerate triangles.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
        for (f, t) in self.triangles.iter().enumerate() {
            if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                return Err(format!("triangle {f} repeats a vertex"));
            }
            if t.iter().any(|&v| v >= self.positions.len()) {
                return Err(format!("triangle {f} references a missing vertex"));
            }
            for e in 0..3 {
                let key = (t[e], t[(e + 1) % 3]);
                if directed.insert(key, f).is_some() {
                    return Err(format!("directed edge {key:?} used twice (non-manifold or flipped)"));
                }
            }
            if self.triangle_area(f) <= MIN_TRIANGLE_AREA {
                return Err(format!("triangle {f} is degenerate"));
            }
        }
        for &(a, b) in directed.keys() {
            if !directed.contains_key(&(b, a)) {
                return Err(format!("edge ({a}, {b}) is a boundary edge"));
            }
        }
        if self.signed_volume() <= 0.0 {
            return Err("mesh is inward oriented".into());
        }
        Ok(())
    }

    /// Triangles whose vertices moved on average more than `min_displacement`
    /// in the last step and whose longest edge exceeds `max_edge`.
    pub fn mark_for_insertion(&self, max_edge: f64, min_displacement: f64) -> BTreeSet<usize> {
        (0..self.triangle_count())
            .filter(|&t| {
                let tri = self.triangles[t];
                let mean = tri.iter().map(|&v| self.displacements[v]).sum::<f64>() / 3.0;
                mean > min_displacement && self.longest_edge(t).2 > max_edge
            })
            .collect()
    }

    /// Refines every marked triangle by splitting its longest edge at the
    /// midpoint, together with the other triangle sharing that edge.
    pub fn insert_vertices(&self, marked: &BTreeSet<usize>) -> TriangleMesh {
        self.insert_vertices_capped(marked, usize::MAX)
    }

    /// As [`Self::insert_vertices`], stopping once the mesh holds `max_vertices`.
    pub fn insert_vertices_capped(&self, marked: &BTreeSet<usize>, max_vertices: usize) -> TriangleMesh {
        let mut edges = Vec::new();
        let mut seen = BTreeSet::new();
        for &t in marked {
            if t >= self.triangle_count() {
                continue;
            }
            let (a, b, _) = self.longest_edge(t);
            if seen.insert((a, b)) {
                edges.push((a, b));
            }
        }
        if edges.is_empty() {
            return self.clone();
        }

        let mut out = self.clone();
        let mut edge_faces: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for (f, t) in out.triangles.iter().enumerate() {
            for e in 0..3 {
                let (a, b) = (t[e], t[(e + 1) % 3]);
                edge_faces.entry((a.min(b), a.max(b))).or_default().push(f);
            }
        }
        for (a, b) in edges {
            if out.positions.len() >= max_vertices {
                break;
            }
            out.split_edge(a, b, &mut edge_faces);
        }
        out.rebuild_adjacency();
        out
    }

    fn split_edge(&mut self, a: usize, b: usize, edge_faces: &mut HashMap<(usize, usize), Vec<usize>>) {
        let key = |x: usize, y: usize| (x.min(y), x.max(y));
        let faces = edge_faces.remove(&key(a, b)).expect("split of a missing edge");
        debug_assert_eq!(faces.len(), 2);
        let m = self.positions.len();
        self.positions.push(0.5 * (self.positions[a] + self.positions[b]));
        self.velocities.push(0.5 * (self.velocities[a] + self.velocities[b]));
        self.displacements
            .push(0.5 * (self.displacements[a] + self.displacements[b]));

        for f in faces {
            // rotate so the triangle reads (p, q, r) with {p, q} = {a, b}
            let t = self.triangles[f];
            let rot = (0..3).find(|&e| key(t[e], t[(e + 1) % 3]) == key(a, b)).unwrap();
            let (p, q, r) = (t[rot], t[(rot + 1) % 3], t[(rot + 2) % 3]);
            let g = self.triangles.len();
            self.triangles[f] = [p, m, r];
            self.triangles.push([m, q, r]);

            let entry = edge_faces.get_mut(&key(q, r)).unwrap();
            for x in entry.iter_mut() {
                if *x == f {
                    *x = g;
                }
            }
            edge_faces.entry(key(p, m)).or_default().push(f);
            edge_faces.entry(key(m, q)).or_default().push(g);
            edge_faces.entry(key(m, r)).or_default().extend([f, g]);
        }
    }

    pub fn to_obj(&self) -> String {
        let mut s = String::new();
        for p in &self.positions {
            let _ = writeln!(s, "v {} {} {}", p.x, p.y, p.z);
        }
        for t in &self.triangles {
            let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
        }
        s
    }

    pub fn write_obj(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::metaimage::write_atomic(path.as_ref(), self.to_obj().as_bytes())
    }
}

/// Geodesic sphere from a subdivided icosahedron: `10*4^n + 2` vertices.
pub fn icosphere(center: Vec3, radius: f64, subdivisions: u32) -> TriangleMesh {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut pts: Vec<Vec3> = [
        (-1.0, phi, 0.0),
        (1.0, phi, 0.0),
        (-1.0, -phi, 0.0),
        (1.0, -phi, 0.0),
        (0.0, -1.0, phi),
        (0.0, 1.0, phi),
        (0.0, -1.0, -phi),
        (0.0, 1.0, -phi),
        (phi, 0.0, -1.0),
        (phi, 0.0, 1.0),
        (-phi, 0.0, -1.0),
        (-phi, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();
    let mut tris: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut cache: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, pts: &mut Vec<Vec3>| -> usize {
            *cache.entry((a.min(b), a.max(b))).or_insert_with(|| {
                pts.push((0.5 * (pts[a] + pts[b])).normalize());
                pts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(tris.len() * 4);
        for &[a, b, c] in &tris {
            let ab = mid(a, b, &mut pts);
            let bc = mid(b, c, &mut pts);
            let ca = mid(c, a, &mut pts);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        tris = next;
    }
    let positions = pts.into_iter().map(|p| center + p * radius).collect();
    TriangleMesh::new(positions, tris)
}
