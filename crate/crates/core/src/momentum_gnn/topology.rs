use std::sync::Arc;

use crate::mesh::Mesh;

/// Index arrays for gathers and scatters over one mesh.
///
/// Directed edge `2e` carries the message from `b` to `a` of mesh edge
/// `e = (a, b)`, directed edge `2e + 1` the message from `a` to `b`.
#[derive(Debug, Clone)]
pub struct GraphTopology {
    pub n_vertices: usize,
    pub n_edges: usize,
    pub n_hinges: usize,
    pub edge_a: Arc<[usize]>,
    pub edge_b: Arc<[usize]>,
    pub receivers: Arc<[usize]>,
    pub senders: Arc<[usize]>,
    /// Mesh edge of each directed edge.
    pub directed_edge: Arc<[usize]>,
    pub even: Arc<[usize]>,
    pub odd: Arc<[usize]>,
    /// Hinge vertices by slot `[a, b, opp_a, opp_b]`.
    pub hinge_slots: [Arc<[usize]>; 4],
    pub hinge_edge: Arc<[usize]>,
}

impl GraphTopology {
    pub fn new(mesh: &Mesh) -> GraphTopology {
        let edges = mesh.edges();
        let hinges = mesh.hinges();
        let collect =
            |f: &dyn Fn(usize) -> usize, n: usize| -> Arc<[usize]> { (0..n).map(f).collect() };
        let ne = edges.len();
        GraphTopology {
            n_vertices: mesh.n_vertices(),
            n_edges: ne,
            n_hinges: hinges.len(),
            edge_a: collect(&|e| edges[e][0], ne),
            edge_b: collect(&|e| edges[e][1], ne),
            receivers: collect(&|k| edges[k / 2][k % 2], 2 * ne),
            senders: collect(&|k| edges[k / 2][1 - k % 2], 2 * ne),
            directed_edge: collect(&|k| k / 2, 2 * ne),
            even: collect(&|e| 2 * e, ne),
            odd: collect(&|e| 2 * e + 1, ne),
            hinge_slots: std::array::from_fn(|s| collect(&|h| hinges[h].vertices[s], hinges.len())),
            hinge_edge: collect(&|h| hinges[h].edge, hinges.len()),
        }
    }
}
