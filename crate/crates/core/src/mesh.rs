//! Conforming triangular meshes with oriented face connectivity.
//!
//! Interior faces carry a unit normal pointing from the "minus" element into
//! the "plus" element; the element with the lower index is always the minus
//! side, so the orientation is deterministic. Local edge `k` of an element
//! runs from local vertex `k` to local vertex `(k+1) % 3`.

use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

/// Maximum admissible ratio of element diameter to inradius.
pub const SHAPE_REGULARITY_BOUND: f64 = 50.0;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("topology error: {0}")]
    Topology(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// One side of a face: element index plus the local edge within it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FaceSide {
    pub element: usize,
    pub local_edge: usize,
}

/// Face shared by two elements. `normal` points from `minus` into `plus`.
#[derive(Debug, Clone)]
pub struct InteriorFace {
    pub minus: FaceSide,
    pub plus: FaceSide,
    /// Global vertex pair, ordered along the minus element's edge direction.
    pub vertices: [usize; 2],
    pub normal: [f64; 2],
    pub h_e: f64,
}

/// Face on the domain boundary; `normal` is the outward unit normal.
#[derive(Debug, Clone)]
pub struct BoundaryFace {
    pub side: FaceSide,
    pub vertices: [usize; 2],
    pub normal: [f64; 2],
    pub h_e: f64,
}

/// Per-element affine geometry, cached at construction.
#[derive(Debug, Clone)]
pub struct ElementGeometry {
    /// Columns of the reference-to-physical Jacobian.
    pub jacobian: [[f64; 2]; 2],
    /// Inverse transpose of the Jacobian (maps reference gradients).
    pub inv_jac_t: [[f64; 2]; 2],
    /// det(jacobian) = 2 * area > 0.
    pub det_jac: f64,
    pub area: f64,
    pub diameter: f64,
}

#[derive(Debug, Clone)]
pub struct Mesh {
    pub vertices: Vec<[f64; 2]>,
    pub elements: Vec<[usize; 3]>,
    pub interior_faces: Vec<InteriorFace>,
    pub boundary_faces: Vec<BoundaryFace>,
    pub geometry: Vec<ElementGeometry>,
    pub h_max: f64,
}

impl Mesh {
    /// Build a mesh from vertices and elements; reorients clockwise elements
    /// and rebuilds all face connectivity.
    pub fn from_cells(
        vertices: Vec<[f64; 2]>,
        mut elements: Vec<[usize; 3]>,
    ) -> Result<Arc<Self>, MeshError> {
        if vertices.is_empty() || elements.is_empty() {
            return Err(MeshError::Topology("empty mesh".into()));
        }
        for (k, elem) in elements.iter_mut().enumerate() {
            for &v in elem.iter() {
                if v >= vertices.len() {
                    return Err(MeshError::Topology(format!(
                        "element {k} references vertex {v} out of range"
                    )));
                }
            }
            if elem[0] == elem[1] || elem[1] == elem[2] || elem[0] == elem[2] {
                return Err(MeshError::Topology(format!("element {k} repeats a vertex")));
            }
            let area = signed_area(&vertices, elem);
            if area < 0.0 {
                elem.swap(1, 2);
            } else if area == 0.0 {
                return Err(MeshError::Topology(format!("element {k} is degenerate")));
            }
        }

        let mut sorted: Vec<[usize; 3]> = elements
            .iter()
            .map(|e| {
                let mut s = *e;
                s.sort_unstable();
                s
            })
            .collect();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(MeshError::Topology("repeated element".into()));
        }

        let geometry: Vec<ElementGeometry> =
            elements.iter().map(|e| element_geometry(&vertices, e)).collect();
        for (k, g) in geometry.iter().enumerate() {
            let inradius = 2.0 * g.area / perimeter(&vertices, &elements[k]);
            if g.diameter / inradius > SHAPE_REGULARITY_BOUND {
                return Err(MeshError::Topology(format!(
                    "element {k} violates shape regularity (ratio {:.1})",
                    g.diameter / inradius
                )));
            }
        }
        let h_max = geometry.iter().map(|g| g.diameter).fold(0.0, f64::max);

        // Edge map keyed by the sorted vertex pair.
        let mut edge_sides: std::collections::HashMap<(usize, usize), Vec<FaceSide>> =
            std::collections::HashMap::new();
        for (k, elem) in elements.iter().enumerate() {
            for le in 0..3 {
                let a = elem[le];
                let b = elem[(le + 1) % 3];
                let key = (a.min(b), a.max(b));
                edge_sides.entry(key).or_default().push(FaceSide { element: k, local_edge: le });
            }
        }

        let mut interior_faces = Vec::new();
        let mut boundary_faces = Vec::new();
        let mut keys: Vec<(usize, usize)> = edge_sides.keys().copied().collect();
        keys.sort_unstable();
        for key in keys {
            let sides = &edge_sides[&key];
            match sides.len() {
                1 => {
                    let side = sides[0];
                    let elem = elements[side.element];
                    let a = elem[side.local_edge];
                    let b = elem[(side.local_edge + 1) % 3];
                    let (normal, h_e) = edge_normal(&vertices, a, b);
                    boundary_faces.push(BoundaryFace { side, vertices: [a, b], normal, h_e });
                }
                2 => {
                    let (minus, plus) = if sides[0].element < sides[1].element {
                        (sides[0], sides[1])
                    } else {
                        (sides[1], sides[0])
                    };
                    let elem = elements[minus.element];
                    let a = elem[minus.local_edge];
                    let b = elem[(minus.local_edge + 1) % 3];
                    // Outward normal of the minus element points into plus.
                    let (normal, h_e) = edge_normal(&vertices, a, b);
                    interior_faces.push(InteriorFace {
                        minus,
                        plus,
                        vertices: [a, b],
                        normal,
                        h_e,
                    });
                }
                n => {
                    return Err(MeshError::Topology(format!(
                        "edge {key:?} is shared by {n} elements (nonconforming mesh)"
                    )));
                }
            }
        }

        Ok(Arc::new(Self { vertices, elements, interior_faces, boundary_faces, geometry, h_max }))
    }

    /// Structured triangulation of the unit square: n x n cells, each split
    /// along the (i,j)-(i+1,j+1) diagonal, 2n^2 triangles in total.
    pub fn structured_unit_square(n: usize) -> Arc<Self> {
        assert!(n >= 1, "n must be positive");
        let np = n + 1;
        let mut vertices = Vec::with_capacity(np * np);
        for j in 0..np {
            for i in 0..np {
                vertices.push([i as f64 / n as f64, j as f64 / n as f64]);
            }
        }
        let vid = |i: usize, j: usize| j * np + i;
        let mut elements = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                let (v00, v10) = (vid(i, j), vid(i + 1, j));
                let (v01, v11) = (vid(i, j + 1), vid(i + 1, j + 1));
                elements.push([v00, v10, v11]);
                elements.push([v00, v11, v01]);
            }
        }
        Self::from_cells(vertices, elements).expect("structured mesh is valid")
    }

    /// Read a mesh from the plain-text format:
    /// `vertices N`, N lines `x y`, `elements M`, M lines `i j k` (0-based).
    pub fn load(path: impl AsRef<Path>) -> Result<Arc<Self>, MeshError> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Arc<Self>, MeshError> {
        let mut tokens = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("");
            for tok in line.split_whitespace() {
                tokens.push((lineno + 1, tok));
            }
        }
        let mut cursor = 0usize;
        let mut next = |expect: &str| -> Result<(usize, &str), MeshError> {
            let out = tokens.get(cursor).copied().ok_or_else(|| MeshError::Parse {
                line: tokens.last().map(|t| t.0).unwrap_or(0),
                message: format!("unexpected end of file, expected {expect}"),
            });
            cursor += 1;
            out
        };

        let (line, kw) = next("'vertices'")?;
        if kw != "vertices" {
            return Err(MeshError::Parse { line, message: format!("expected 'vertices', got '{kw}'") });
        }
        let (line, count) = next("vertex count")?;
        let nv: usize = count
            .parse()
            .map_err(|_| MeshError::Parse { line, message: format!("bad vertex count '{count}'") })?;
        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            let mut coord = [0.0f64; 2];
            for c in coord.iter_mut() {
                let (line, tok) = next("coordinate")?;
                *c = tok.parse().map_err(|_| MeshError::Parse {
                    line,
                    message: format!("bad coordinate '{tok}'"),
                })?;
            }
            vertices.push(coord);
        }
        let (line, kw) = next("'elements'")?;
        if kw != "elements" {
            return Err(MeshError::Parse { line, message: format!("expected 'elements', got '{kw}'") });
        }
        let (line, count) = next("element count")?;
        let ne: usize = count
            .parse()
            .map_err(|_| MeshError::Parse { line, message: format!("bad element count '{count}'") })?;
        let mut elements = Vec::with_capacity(ne);
        for _ in 0..ne {
            let mut elem = [0usize; 3];
            for v in elem.iter_mut() {
                let (line, tok) = next("vertex index")?;
                *v = tok.parse().map_err(|_| MeshError::Parse {
                    line,
                    message: format!("bad vertex index '{tok}'"),
                })?;
            }
            elements.push(elem);
        }
        Self::from_cells(vertices, elements)
    }

    /// Write the plain-text mesh format.
    pub fn write(&self, mut out: impl std::io::Write) -> std::io::Result<()> {
        writeln!(out, "vertices {}", self.vertices.len())?;
        for v in &self.vertices {
            writeln!(out, "{} {}", v[0], v[1])?;
        }
        writeln!(out, "elements {}", self.elements.len())?;
        for e in &self.elements {
            writeln!(out, "{} {} {}", e[0], e[1], e[2])?;
        }
        Ok(())
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    /// Total mesh area.
    pub fn area(&self) -> f64 {
        self.geometry.iter().map(|g| g.area).sum()
    }

    /// Physical coordinates of a reference point inside an element.
    pub fn map_to_physical(&self, element: usize, xi: f64, eta: f64) -> [f64; 2] {
        let v0 = self.vertices[self.elements[element][0]];
        let jac = &self.geometry[element].jacobian;
        [
            v0[0] + jac[0][0] * xi + jac[0][1] * eta,
            v0[1] + jac[1][0] * xi + jac[1][1] * eta,
        ]
    }

    /// Reference coordinates of the point at parameter `s` along local edge
    /// `local_edge`.
    pub fn edge_ref_point(local_edge: usize, s: f64) -> [f64; 2] {
        const CORNERS: [[f64; 2]; 3] = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let a = CORNERS[local_edge];
        let b = CORNERS[(local_edge + 1) % 3];
        [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])]
    }

    /// Parameter direction of a face side: `true` when the element's local
    /// edge runs along the stored face vertex order, `false` when reversed.
    pub fn side_runs_forward(&self, side: FaceSide, face_vertices: [usize; 2]) -> bool {
        let elem = self.elements[side.element];
        let a = elem[side.local_edge];
        debug_assert!(a == face_vertices[0] || a == face_vertices[1]);
        a == face_vertices[0]
    }

    /// Max over elements of diameter / inradius.
    pub fn shape_regularity_ratio(&self) -> f64 {
        self.elements
            .iter()
            .zip(&self.geometry)
            .map(|(e, g)| g.diameter / (2.0 * g.area / perimeter(&self.vertices, e)))
            .fold(0.0, f64::max)
    }
}

fn signed_area(vertices: &[[f64; 2]], elem: &[usize; 3]) -> f64 {
    let [a, b, c] = [vertices[elem[0]], vertices[elem[1]], vertices[elem[2]]];
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

fn perimeter(vertices: &[[f64; 2]], elem: &[usize; 3]) -> f64 {
    (0..3)
        .map(|k| {
            let a = vertices[elem[k]];
            let b = vertices[elem[(k + 1) % 3]];
            ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt()
        })
        .sum()
}

fn element_geometry(vertices: &[[f64; 2]], elem: &[usize; 3]) -> ElementGeometry {
    let [a, b, c] = [vertices[elem[0]], vertices[elem[1]], vertices[elem[2]]];
    let jacobian = [[b[0] - a[0], c[0] - a[0]], [b[1] - a[1], c[1] - a[1]]];
    let det_jac = jacobian[0][0] * jacobian[1][1] - jacobian[0][1] * jacobian[1][0];
    debug_assert!(det_jac > 0.0);
    let inv_jac_t = [
        [jacobian[1][1] / det_jac, -jacobian[1][0] / det_jac],
        [-jacobian[0][1] / det_jac, jacobian[0][0] / det_jac],
    ];
    let edge = |p: [f64; 2], q: [f64; 2]| ((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2)).sqrt();
    let diameter = edge(a, b).max(edge(b, c)).max(edge(c, a));
    ElementGeometry { jacobian, inv_jac_t, det_jac, area: 0.5 * det_jac, diameter }
}

/// Unit normal to edge a->b, rotated -90 degrees, i.e. outward for a CCW
/// element listing the edge in order; also returns the edge length.
fn edge_normal(vertices: &[[f64; 2]], a: usize, b: usize) -> ([f64; 2], f64) {
    let (pa, pb) = (vertices[a], vertices[b]);
    let d = [pb[0] - pa[0], pb[1] - pa[1]];
    let len = (d[0] * d[0] + d[1] * d[1]).sqrt();
    ([d[1] / len, -d[0] / len], len)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_triangle_square_counts() {
        let mesh = Mesh::structured_unit_square(1);
        assert_eq!(mesh.n_elements(), 2);
        assert_eq!(mesh.interior_faces.len(), 1);
        assert_eq!(mesh.boundary_faces.len(), 4);
        assert!((mesh.h_max - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn structured_counts_and_h() {
        let mesh = Mesh::structured_unit_square(2);
        assert_eq!(mesh.n_elements(), 8);
        assert!((mesh.h_max - 2f64.sqrt() / 2.0).abs() < 1e-15);
    }

    #[test]
    fn refinement_halves_h_exactly() {
        let coarse = Mesh::structured_unit_square(4);
        let fine = Mesh::structured_unit_square(8);
        assert!((coarse.h_max - 2.0 * fine.h_max).abs() < 1e-15);
    }

    #[test]
    fn areas_sum_to_domain_area() {
        for n in [1, 3, 5] {
            let mesh = Mesh::structured_unit_square(n);
            assert!((mesh.area() - 1.0).abs() <= 1e-12);
            assert!(mesh.geometry.iter().all(|g| g.area > 0.0));
        }
    }

    #[test]
    fn euler_formula() {
        for n in [1, 2, 4] {
            let mesh = Mesh::structured_unit_square(n);
            let v = mesh.vertices.len() as i64;
            let e = (mesh.interior_faces.len() + mesh.boundary_faces.len()) as i64;
            let f = mesh.n_elements() as i64;
            assert_eq!(v - e + f, 1);
        }
    }

    #[test]
    fn normals_are_unit_and_point_minus_to_plus() {
        let mesh = Mesh::structured_unit_square(3);
        for face in &mesh.interior_faces {
            assert!(face.minus.element < face.plus.element);
            let n = face.normal;
            assert!((n[0] * n[0] + n[1] * n[1] - 1.0).abs() <= 1e-14);
            // Midpoint displacement from minus centroid to plus centroid
            // must have positive component along the normal.
            let centroid = |k: usize| {
                let e = mesh.elements[k];
                let mut c = [0.0; 2];
                for v in e {
                    c[0] += mesh.vertices[v][0] / 3.0;
                    c[1] += mesh.vertices[v][1] / 3.0;
                }
                c
            };
            let cm = centroid(face.minus.element);
            let cp = centroid(face.plus.element);
            assert!((cp[0] - cm[0]) * n[0] + (cp[1] - cm[1]) * n[1] > 0.0);
        }
        for face in &mesh.boundary_faces {
            let n = face.normal;
            assert!((n[0] * n[0] + n[1] * n[1] - 1.0).abs() <= 1e-14);
        }
    }

    #[test]
    fn opposite_induced_orientations() {
        // The two incident elements must traverse a shared face in opposite
        // directions, otherwise one of them is misoriented.
        let mesh = Mesh::structured_unit_square(3);
        for face in &mesh.interior_faces {
            let dir = |side: FaceSide| {
                let e = mesh.elements[side.element];
                (e[side.local_edge], e[(side.local_edge + 1) % 3])
            };
            let (a0, b0) = dir(face.minus);
            let (a1, b1) = dir(face.plus);
            assert_eq!((a0, b0), (b1, a1));
        }
    }

    #[test]
    fn roundtrip_through_text_format() {
        let mesh = Mesh::structured_unit_square(1);
        let mut buf = Vec::new();
        mesh.write(&mut buf).unwrap();
        let reread = Mesh::parse(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(reread.n_elements(), mesh.n_elements());
        assert_eq!(reread.interior_faces.len(), mesh.interior_faces.len());
        assert_eq!(reread.boundary_faces.len(), mesh.boundary_faces.len());
        assert_eq!(reread.vertices, mesh.vertices);
    }

    #[test]
    fn repeated_element_is_rejected() {
        let text = "vertices 4\n0 0\n1 0\n1 1\n0 1\nelements 3\n0 1 2\n0 2 3\n0 1 2\n";
        match Mesh::parse(text) {
            Err(MeshError::Topology(_)) => {}
            other => panic!("expected topology error, got {other:?}"),
        }
    }

    #[test]
    fn clockwise_element_is_reoriented() {
        let text = "vertices 4\n0 0\n1 0\n1 1\n0 1\nelements 2\n0 2 1\n0 2 3\n";
        let mesh = Mesh::parse(text).unwrap();
        assert!(mesh.geometry.iter().all(|g| g.area > 0.0));
        assert_eq!(mesh.interior_faces.len(), 1);
    }

    #[test]
    fn malformed_file_is_a_parse_error() {
        match Mesh::parse("vertices two\n") {
            Err(MeshError::Parse { .. }) => {}
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn nonconforming_mesh_is_rejected() {
        let text = "vertices 5\n0 0\n1 0\n1 1\n0 1\n2 0\nelements 3\n0 1 2\n0 2 3\n0 1 4\n";
        match Mesh::parse(text) {
            Err(MeshError::Topology(_)) => {}
            other => panic!("expected topology error, got {other:?}"),
        }
    }
}
