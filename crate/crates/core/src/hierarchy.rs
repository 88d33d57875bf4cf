//! Multi-level triangle meshes built by edge-midpoint subdivision.
//!
//! Every triangle `(p, q, r)` of level `i` is split into four triangles of
//! level `i + 1` by inserting one vertex at the midpoint of each edge. Coarse
//! vertices keep their indices at every finer level and new vertices are
//! appended in edge order, so level `i` positions are always a prefix of
//! level `i + 1` positions.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::Vec3;

/// Default cap on the number of finer levels a hierarchy may contain.
pub const DEFAULT_MAX_FINER_LEVELS: usize = 8;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("triangle {triangle} references vertex {vertex}, mesh has {count} vertices")]
    IndexOutOfRange {
        triangle: usize,
        vertex: usize,
        count: usize,
    },
    #[error("triangle {0} is degenerate (repeated vertex)")]
    DegenerateTriangle(usize),
    #[error("edge list is not deduplicated or does not cover triangle edge ({0}, {1})")]
    EdgeList(usize, usize),
    #[error("requested {requested} finer levels, limit is {limit}")]
    TooManyLevels { requested: usize, limit: usize },
    #[error("failed to write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

#[inline]
fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// A triangle mesh with rest positions, a deduplicated edge list and a pin set.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
    /// Each edge stored once as `[lo, hi]`, in order of first appearance
    /// when walking triangles and their edges `(p,q), (q,r), (r,p)`.
    pub edges: Vec<[usize; 2]>,
    pub pinned: BTreeSet<usize>,
}

impl TriMesh {
    /// Builds a mesh from vertices and triangles, deriving the edge list.
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        let count = vertices.len();
        for (t, tri) in triangles.iter().enumerate() {
            for &v in tri {
                if v >= count {
                    return Err(MeshError::IndexOutOfRange {
                        triangle: t,
                        vertex: v,
                        count,
                    });
                }
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(MeshError::DegenerateTriangle(t));
            }
        }
        let edges = derive_edges(&triangles);
        Ok(Self {
            vertices,
            triangles,
            edges,
            pinned: BTreeSet::new(),
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Map from an unordered vertex pair to its index in `edges`.
    pub fn edge_index(&self) -> HashMap<(usize, usize), usize> {
        self.edges
            .iter()
            .enumerate()
            .map(|(i, e)| (edge_key(e[0], e[1]), i))
            .collect()
    }

    /// Rest area of triangle `t`.
    pub fn triangle_area(&self, t: usize) -> f64 {
        let [p, q, r] = self.triangles[t];
        let e1 = self.vertices[q] - self.vertices[p];
        let e2 = self.vertices[r] - self.vertices[p];
        0.5 * e1.cross(&e2).norm()
    }

    /// For every edge shared by exactly two triangles, the pair of vertices
    /// opposite that edge in the two triangles. Ordered by edge index.
    pub fn opposite_vertex_pairs(&self) -> Vec<(usize, usize)> {
        let index = self.edge_index();
        let mut opposite: Vec<Vec<usize>> = vec![Vec::new(); self.edges.len()];
        for tri in &self.triangles {
            for k in 0..3 {
                let a = tri[k];
                let b = tri[(k + 1) % 3];
                let c = tri[(k + 2) % 3];
                opposite[index[&edge_key(a, b)]].push(c);
            }
        }
        opposite
            .into_iter()
            .filter(|o| o.len() == 2)
            .map(|o| (o[0], o[1]))
            .collect()
    }

    /// Writes positions and faces as Wavefront OBJ (1-based face indices).
    pub fn write_obj<W: Write>(&self, positions: &[Vec3], out: &mut W) -> io::Result<()> {
        write_obj(positions, &self.triangles, out)
    }
}

fn derive_edges(triangles: &[[usize; 3]]) -> Vec<[usize; 2]> {
    let mut seen = HashMap::new();
    let mut edges = Vec::new();
    for tri in triangles {
        for k in 0..3 {
            let (a, b) = edge_key(tri[k], tri[(k + 1) % 3]);
            if seen.insert((a, b), edges.len()).is_none() {
                edges.push([a, b]);
            }
        }
    }
    edges
}

/// Writes an OBJ body: one `v` line per position, one `f` line per triangle.
pub fn write_obj<W: Write>(
    positions: &[Vec3],
    triangles: &[[usize; 3]],
    out: &mut W,
) -> io::Result<()> {
    for p in positions {
        writeln!(out, "v {} {} {}", p.x, p.y, p.z)?;
    }
    for t in triangles {
        writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
    }
    Ok(())
}

/// Regular `nx` x `ny` lattice in the XY plane (z = 0), each cell split along
/// the lower-left to upper-right diagonal. Vertex `(i, j)` has index
/// `j * (nx + 1) + i`.
pub fn build_grid_mesh(nx: usize, ny: usize, width: f64, height: f64) -> Result<TriMesh, MeshError> {
    if nx == 0 || ny == 0 {
        return Err(MeshError::InvalidGrid(format!(
            "cell counts must be positive, got {nx} x {ny}"
        )));
    }
    if !(width > 0.0 && height > 0.0 && width.is_finite() && height.is_finite()) {
        return Err(MeshError::InvalidGrid(format!(
            "dimensions must be positive, got {width} x {height}"
        )));
    }
    let stride = nx + 1;
    let mut vertices = Vec::with_capacity(stride * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            vertices.push(Vec3::new(
                width * i as f64 / nx as f64,
                height * j as f64 / ny as f64,
                0.0,
            ));
        }
    }
    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let a = j * stride + i;
            let b = a + 1;
            let c = a + stride;
            let d = c + 1;
            triangles.push([a, b, d]);
            triangles.push([a, d, c]);
        }
    }
    TriMesh::new(vertices, triangles)
}

/// Result of one midpoint subdivision.
#[derive(Debug, Clone)]
pub struct Subdivision {
    pub mesh: TriMesh,
    /// Fine vertex inserted at the midpoint of each coarse edge (by edge index).
    pub edge_midpoints: Vec<usize>,
    /// The four fine triangles spawned by each coarse triangle.
    pub child_triangles: Vec<[usize; 4]>,
    /// Midpoint vertices `(m_pq, m_qr, m_rp)` of each coarse triangle `(p, q, r)`.
    pub triangle_midpoints: Vec<[usize; 3]>,
}

/// Splits every triangle into four by inserting edge midpoints.
///
/// Output vertices are the input vertices followed by one midpoint per input
/// edge. Triangle `(p,q,r)` yields `(p,m_pq,m_rp)`, `(q,m_qr,m_pq)`,
/// `(r,m_rp,m_qr)` and `(m_pq,m_qr,m_rp)`, stored at `4t .. 4t+4`.
pub fn subdivide(mesh: &TriMesh) -> Result<Subdivision, MeshError> {
    let index = mesh.edge_index();
    if index.len() != mesh.edges.len() {
        let dup = mesh
            .edges
            .iter()
            .enumerate()
            .find(|(i, e)| index[&edge_key(e[0], e[1])] != *i)
            .map(|(_, e)| *e)
            .unwrap_or([0, 0]);
        return Err(MeshError::EdgeList(dup[0], dup[1]));
    }
    let base = mesh.vertices.len();
    let mut vertices = Vec::with_capacity(base + mesh.edges.len());
    vertices.extend_from_slice(&mesh.vertices);
    let mut edge_midpoints = Vec::with_capacity(mesh.edges.len());
    for (e, &[a, b]) in mesh.edges.iter().enumerate() {
        vertices.push((mesh.vertices[a] + mesh.vertices[b]) * 0.5);
        edge_midpoints.push(base + e);
    }

    let lookup = |a: usize, b: usize| -> Result<usize, MeshError> {
        index
            .get(&edge_key(a, b))
            .map(|&e| edge_midpoints[e])
            .ok_or(MeshError::EdgeList(a, b))
    };

    let mut triangles = Vec::with_capacity(4 * mesh.triangles.len());
    let mut child_triangles = Vec::with_capacity(mesh.triangles.len());
    let mut triangle_midpoints = Vec::with_capacity(mesh.triangles.len());
    for (t, &[p, q, r]) in mesh.triangles.iter().enumerate() {
        let mpq = lookup(p, q)?;
        let mqr = lookup(q, r)?;
        let mrp = lookup(r, p)?;
        triangles.push([p, mpq, mrp]);
        triangles.push([q, mqr, mpq]);
        triangles.push([r, mrp, mqr]);
        triangles.push([mpq, mqr, mrp]);
        child_triangles.push([4 * t, 4 * t + 1, 4 * t + 2, 4 * t + 3]);
        triangle_midpoints.push([mpq, mqr, mrp]);
    }

    let mut fine = TriMesh::new(vertices, triangles)?;
    fine.pinned = mesh.pinned.clone();
    Ok(Subdivision {
        mesh: fine,
        edge_midpoints,
        child_triangles,
        triangle_midpoints,
    })
}

/// A `(coarse triangle, output slot)` pair that predicts a fine midpoint.
pub type Contribution = (usize, usize);

/// Coarse-to-fine topology between level `i` and level `i + 1`.
#[derive(Debug, Clone)]
pub struct LevelLink {
    pub edge_midpoints: Vec<usize>,
    pub child_triangles: Vec<[usize; 4]>,
    pub triangle_midpoints: Vec<[usize; 3]>,
    /// For each coarse edge, the one or two triangle slots predicting its
    /// midpoint, in ascending triangle order.
    pub contributors: Vec<[Option<Contribution>; 2]>,
}

/// Levels `l_0 .. l_N` of the subdivided cloth.
#[derive(Debug, Clone)]
pub struct ClothHierarchy {
    pub levels: Vec<TriMesh>,
    /// `links[i]` connects `levels[i]` to `levels[i + 1]`.
    pub links: Vec<LevelLink>,
}

impl ClothHierarchy {
    pub fn finer_levels(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn finest(&self) -> &TriMesh {
        self.levels.last().expect("hierarchy has at least one level")
    }

    /// Initial positions `x̂` of `level`.
    pub fn rest_positions(&self, level: usize) -> &[Vec3] {
        &self.levels[level].vertices
    }

    /// Dumps each level's rest mesh as `mesh_l{i}.obj` under `dir`.
    pub fn dump_obj(&self, dir: &Path) -> Result<(), MeshError> {
        std::fs::create_dir_all(dir).map_err(|source| MeshError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        for (i, level) in self.levels.iter().enumerate() {
            let path = dir.join(format!("mesh_l{i}.obj"));
            let io_err = |source| MeshError::Io {
                path: path.display().to_string(),
                source,
            };
            let mut out = BufWriter::new(File::create(&path).map_err(io_err)?);
            level.write_obj(&level.vertices, &mut out).map_err(io_err)?;
            out.flush().map_err(io_err)?;
        }
        Ok(())
    }
}

pub fn build_hierarchy(base: TriMesh, finer_levels: usize) -> Result<ClothHierarchy, MeshError> {
    build_hierarchy_with_limit(base, finer_levels, DEFAULT_MAX_FINER_LEVELS)
}

pub fn build_hierarchy_with_limit(
    base: TriMesh,
    finer_levels: usize,
    limit: usize,
) -> Result<ClothHierarchy, MeshError> {
    if finer_levels > limit {
        return Err(MeshError::TooManyLevels {
            requested: finer_levels,
            limit,
        });
    }
    let mut levels = vec![base];
    let mut links = Vec::with_capacity(finer_levels);
    for _ in 0..finer_levels {
        let coarse = levels.last().unwrap();
        let sub = subdivide(coarse)?;
        let contributors = midpoint_contributors(coarse);
        links.push(LevelLink {
            edge_midpoints: sub.edge_midpoints,
            child_triangles: sub.child_triangles,
            triangle_midpoints: sub.triangle_midpoints,
            contributors,
        });
        levels.push(sub.mesh);
    }
    Ok(ClothHierarchy { levels, links })
}

fn midpoint_contributors(mesh: &TriMesh) -> Vec<[Option<Contribution>; 2]> {
    let index = mesh.edge_index();
    let mut out = vec![[None, None]; mesh.edges.len()];
    for (t, tri) in mesh.triangles.iter().enumerate() {
        for slot in 0..3 {
            let e = index[&edge_key(tri[slot], tri[(slot + 1) % 3])];
            let entry = &mut out[e];
            if entry[0].is_none() {
                entry[0] = Some((t, slot));
            } else {
                entry[1] = Some((t, slot));
            }
        }
    }
    out
}
