use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::nn::Activation;
use crate::tensor::Tensor;

/// Graph over patch tokens with row-normalized adjacency `D⁻¹(A+I)`.
#[derive(Clone, Debug)]
pub struct PlantGraph<'t> {
    pub node_features: Var<'t>,
    /// `[N × N]`
    pub adjacency: Tensor,
    /// Neighbours of each node, excluding itself, ascending.
    pub neighbors: Vec<Vec<usize>>,
}

impl<'t> PlantGraph<'t> {
    /// Builds a graph from an undirected edge list. Self-loops in `edges`
    /// are ignored; duplicates collapse.
    pub fn from_edges(node_features: Var<'t>, edges: &[(usize, usize)]) -> Result<Self> {
        let shape = node_features.shape();
        if shape.len() != 2 {
            return Err(Error::dim(format!("node features must be [N×d], got {shape:?}")));
        }
        let n = shape[0];
        let mut neighbors = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::contract(format!("edge ({a},{b}) outside {n} nodes")));
            }
            if a != b {
                neighbors[a].push(b);
                neighbors[b].push(a);
            }
        }
        for list in &mut neighbors {
            list.sort_unstable();
            list.dedup();
        }
        let mut adjacency = Tensor::zeros([n, n]);
        for (i, list) in neighbors.iter().enumerate() {
            let w = 1.0 / (list.len() + 1) as f64;
            adjacency.set(&[i, i], w);
            for &j in list {
                adjacency.set(&[i, j], w);
            }
        }
        Ok(Self { node_features, adjacency, neighbors })
    }

    pub fn num_nodes(&self) -> usize {
        self.neighbors.len()
    }

    pub fn degree(&self, node: usize) -> usize {
        self.neighbors[node].len()
    }

    pub fn num_edges(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }
}

/// Connects each patch to its 4-neighbours on a `rows × cols` grid.
pub fn build_plant_graph(node_features: Var<'_>, grid: (usize, usize)) -> Result<PlantGraph<'_>> {
    let (rows, cols) = grid;
    let n = node_features.shape().first().copied().unwrap_or(0);
    if rows * cols != n {
        return Err(Error::contract(format!("grid {rows}x{cols} does not match {n} nodes")));
    }
    let mut edges = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            if c + 1 < cols {
                edges.push((i, i + 1));
            }
            if r + 1 < rows {
                edges.push((i, i + cols));
            }
        }
    }
    PlantGraph::from_edges(node_features, &edges)
}

#[derive(Clone, Copy, Debug)]
pub struct GcnLayerParams<'t> {
    /// `[d_in × d_out]`
    pub weight: Var<'t>,
    pub activation: Activation,
}

/// `σ(Â · H · W)`
pub fn gcn_layer<'t>(g: &PlantGraph<'t>, h: Var<'t>, layer: &GcnLayerParams<'t>) -> Result<Var<'t>> {
    let hs = h.shape();
    let ws = layer.weight.shape();
    if hs.len() != 2 || hs[0] != g.num_nodes() || ws.len() != 2 || ws[0] != hs[1] {
        return Err(Error::dim(format!("features {hs:?} do not fit weight {ws:?} on {} nodes", g.num_nodes())));
    }
    let adj = h.tape().constant(g.adjacency.clone());
    layer.activation.apply(adj.matmul(h.matmul(layer.weight)?)?)
}

#[derive(Clone, Copy, Debug)]
pub struct GnnOutput<'t> {
    /// Final node states `[N × d_out]`.
    pub nodes: Var<'t>,
    /// Mean over nodes `[d_out]`.
    pub pooled: Var<'t>,
}

pub fn gnn_forward<'t>(g: &PlantGraph<'t>, layers: &[GcnLayerParams<'t>]) -> Result<GnnOutput<'t>> {
    let mut h = g.node_features;
    for layer in layers {
        h = gcn_layer(g, h, layer)?;
    }
    Ok(GnnOutput { nodes: h, pooled: h.mean_rows()? })
}
