//! Computational graphs of target networks.
//!
//! A [`CompGraph`] lists one [`ParamNode`] per parameter tensor of a network
//! (weight matrix, bias vector, or embedding row) together with dataflow
//! edges. Both the policy MLP and the hypernetwork itself are described this
//! way; the hypernetwork reads a graph and emits per-node parameters.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ghn::GhnConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordering of the variants is the tie-break order of the node sort.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Weight,
    Bias,
    Embedding,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamNode {
    pub id: NodeId,
    pub role: Role,
    pub layer_index: usize,
    pub shape: Vec<usize>,
    #[serde(default)]
    pub name: String,
}

impl ParamNode {
    /// Number of scalar parameters the node needs (`k`).
    pub fn param_count(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
        }
    }

    fn tag(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Tanh => "tanh",
        }
    }
}

/// A dense feed-forward network with tanh hidden layers.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    #[serde(default = "default_hidden_activation")]
    pub activation: Activation,
    #[serde(default = "default_output_activation")]
    pub output_activation: Activation,
}

fn default_hidden_activation() -> Activation {
    Activation::Tanh
}

fn default_output_activation() -> Activation {
    Activation::Identity
}

impl MlpSpec {
    pub fn new(
        input_dim: usize,
        hidden_dims: Vec<usize>,
        output_dim: usize,
        output_activation: Activation,
    ) -> Self {
        Self {
            input_dim,
            hidden_dims,
            output_dim,
            activation: Activation::Tanh,
            output_activation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::config("policy", "all MLP dimensions must be >= 1"));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` per dense layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut fan_in = self.input_dim;
        for &h in self.hidden_dims.iter().chain(std::iter::once(&self.output_dim)) {
            dims.push((fan_in, h));
            fan_in = h;
        }
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }

    pub fn arch_name(&self) -> String {
        let mut dims = vec![self.input_dim.to_string()];
        dims.extend(self.hidden_dims.iter().map(|h| h.to_string()));
        dims.push(self.output_dim.to_string());
        format!(
            "mlp:{}:{}:{}",
            dims.join("-"),
            self.activation.tag(),
            self.output_activation.tag()
        )
    }
}

#[derive(Debug, Clone, Default)]
struct Adjacency {
    incoming: Vec<Vec<usize>>,
    outgoing: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "GraphRepr", into = "GraphRepr")]
pub struct CompGraph {
    arch_name: String,
    nodes: Vec<ParamNode>,
    edges: Vec<(NodeId, NodeId)>,
    adjacency: Adjacency,
}

impl PartialEq for CompGraph {
    fn eq(&self, other: &Self) -> bool {
        self.arch_name == other.arch_name && self.nodes == other.nodes && self.edges == other.edges
    }
}

#[derive(Serialize, Deserialize)]
struct GraphRepr {
    arch_name: String,
    nodes: Vec<ParamNode>,
    edges: Vec<(NodeId, NodeId)>,
}

impl TryFrom<GraphRepr> for CompGraph {
    type Error = Error;

    fn try_from(r: GraphRepr) -> Result<Self> {
        CompGraph::new(r.arch_name, r.nodes, r.edges)
    }
}

impl From<CompGraph> for GraphRepr {
    fn from(g: CompGraph) -> Self {
        GraphRepr {
            arch_name: g.arch_name,
            nodes: g.nodes,
            edges: g.edges,
        }
    }
}

impl CompGraph {
    /// Validates ids, shapes, edge endpoints and acyclicity.
    pub fn new(
        arch_name: impl Into<String>,
        nodes: Vec<ParamNode>,
        edges: Vec<(NodeId, NodeId)>,
    ) -> Result<Self> {
        let n = nodes.len();
        for (i, node) in nodes.iter().enumerate() {
            if node.id.0 != i {
                return Err(Error::InvalidGraph(format!(
                    "node at position {i} has id {}",
                    node.id.0
                )));
            }
            if node.shape.is_empty() || node.shape.contains(&0) {
                return Err(Error::InvalidGraph(format!(
                    "node {i} has degenerate shape {:?}",
                    node.shape
                )));
            }
        }
        let mut adjacency = Adjacency {
            incoming: vec![Vec::new(); n],
            outgoing: vec![Vec::new(); n],
        };
        for &(a, b) in &edges {
            if a.0 >= n || b.0 >= n {
                return Err(Error::InvalidGraph(format!(
                    "edge ({}, {}) references a missing node",
                    a.0, b.0
                )));
            }
            adjacency.outgoing[a.0].push(b.0);
            adjacency.incoming[b.0].push(a.0);
        }
        let graph = Self {
            arch_name: arch_name.into(),
            nodes,
            edges,
            adjacency,
        };
        if graph.topological_order().len() != n {
            return Err(Error::InvalidGraph("graph has a cycle".into()));
        }
        Ok(graph)
    }

    pub fn arch_name(&self) -> &str {
        &self.arch_name
    }

    pub fn nodes(&self) -> &[ParamNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &ParamNode {
        &self.nodes[id.0]
    }

    pub fn edges(&self) -> &[(NodeId, NodeId)] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn in_neighbors(&self, v: usize) -> &[usize] {
        &self.adjacency.incoming[v]
    }

    pub fn out_neighbors(&self, v: usize) -> &[usize] {
        &self.adjacency.outgoing[v]
    }

    pub fn total_params(&self) -> usize {
        self.nodes.iter().map(ParamNode::param_count).sum()
    }

    pub fn find(&self, name: &str) -> Option<&ParamNode> {
        self.nodes.iter().find(|n| n.name == name)
    }

    fn topological_order(&self) -> Vec<usize> {
        let n = self.nodes.len();
        let mut indegree: Vec<usize> = self.adjacency.incoming.iter().map(Vec::len).collect();
        let mut ready: BinaryHeap<Reverse<usize>> =
            (0..n).filter(|&v| indegree[v] == 0).map(Reverse).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(Reverse(v)) = ready.pop() {
            order.push(v);
            for &w in &self.adjacency.outgoing[v] {
                indegree[w] -= 1;
                if indegree[w] == 0 {
                    ready.push(Reverse(w));
                }
            }
        }
        order
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Builder that assigns final ids by sorting declared nodes topologically,
/// breaking ties by `(layer_index, role, declaration order)`.
struct GraphBuilder {
    decls: Vec<(Role, usize, Vec<usize>, String)>,
    edges: Vec<(usize, usize)>,
}

impl GraphBuilder {
    fn new() -> Self {
        Self {
            decls: Vec::new(),
            edges: Vec::new(),
        }
    }

    fn add(&mut self, role: Role, layer: usize, shape: Vec<usize>, name: String) -> usize {
        self.decls.push((role, layer, shape, name));
        self.decls.len() - 1
    }

    fn connect_all(&mut self, from: &[usize], to: &[usize]) {
        for &a in from {
            for &b in to {
                self.edges.push((a, b));
            }
        }
    }

    fn build(self, arch_name: String) -> Result<CompGraph> {
        let n = self.decls.len();
        let mut indegree = vec![0usize; n];
        let mut outgoing = vec![Vec::new(); n];
        for &(a, b) in &self.edges {
            indegree[b] += 1;
            outgoing[a].push(b);
        }
        let key = |i: usize| (self.decls[i].1, self.decls[i].0, i);
        let mut ready: BinaryHeap<Reverse<(usize, Role, usize)>> = (0..n)
            .filter(|&i| indegree[i] == 0)
            .map(|i| Reverse(key(i)))
            .collect();
        let mut new_id = vec![usize::MAX; n];
        let mut order = Vec::with_capacity(n);
        while let Some(Reverse((_, _, i))) = ready.pop() {
            new_id[i] = order.len();
            order.push(i);
            for &w in &outgoing[i] {
                indegree[w] -= 1;
                if indegree[w] == 0 {
                    ready.push(Reverse(key(w)));
                }
            }
        }
        if order.len() != n {
            return Err(Error::InvalidGraph("graph has a cycle".into()));
        }
        let mut decls: Vec<Option<(Role, usize, Vec<usize>, String)>> =
            self.decls.into_iter().map(Some).collect();
        let nodes = order
            .iter()
            .enumerate()
            .map(|(id, &i)| {
                let (role, layer_index, shape, name) = decls[i].take().expect("visited once");
                ParamNode {
                    id: NodeId(id),
                    role,
                    layer_index,
                    shape,
                    name,
                }
            })
            .collect();
        let mut edges: Vec<(NodeId, NodeId)> = self
            .edges
            .iter()
            .map(|&(a, b)| (NodeId(new_id[a]), NodeId(new_id[b])))
            .collect();
        edges.sort();
        CompGraph::new(arch_name, nodes, edges)
    }
}

/// One Weight and one Bias node per dense layer. Both nodes of layer `L`
/// feed both nodes of layer `L + 1`.
pub fn build_mlp_graph(spec: &MlpSpec) -> CompGraph {
    let mut b = GraphBuilder::new();
    let mut prev: Vec<usize> = Vec::new();
    for (layer, (fan_in, fan_out)) in spec.layer_dims().into_iter().enumerate() {
        let w = b.add(Role::Weight, layer, vec![fan_out, fan_in], format!("l{layer}.w"));
        let bias = b.add(Role::Bias, layer, vec![fan_out], format!("l{layer}.b"));
        b.connect_all(&prev, &[w, bias]);
        prev = vec![w, bias];
    }
    b.build(spec.arch_name())
        .expect("layered MLP graphs are acyclic with valid shapes")
}

/// Names of the hypernetwork's own tensors, in declaration order.
pub mod ghn_tensor {
    pub const MSG_IN_W: &str = "gnn.msg_in.w";
    pub const MSG_IN_B: &str = "gnn.msg_in.b";
    pub const MSG_OUT_W: &str = "gnn.msg_out.w";
    pub const MSG_OUT_B: &str = "gnn.msg_out.b";
    pub const CAND_W: &str = "gnn.cand.w";
    pub const CAND_B: &str = "gnn.cand.b";
    pub const GATE_W: &str = "gnn.gate.w";
    pub const GATE_B: &str = "gnn.gate.b";
    pub const DET_HIDDEN_W: &str = "det.l0.w";
    pub const DET_HIDDEN_B: &str = "det.l0.b";
    pub const STOCH_HIDDEN_W: &str = "stoch.l0.w";
    pub const STOCH_HIDDEN_B: &str = "stoch.l0.b";
    pub const RATE_W: &str = "rate.w";
    pub const RATE_B: &str = "rate.b";
    pub const DET_OUT_W: &str = "det.l1.w";
    pub const DET_OUT_B: &str = "det.l1.b";
    pub const STOCH_OUT_W: &str = "stoch.l1.w";
    pub const STOCH_OUT_B: &str = "stoch.l1.b";

    /// Number of non-embedding tensors in a hypernetwork.
    pub const COUNT: usize = 18;
}

/// Name of the embedding row for policy node `i`.
pub fn policy_embedding_name(i: usize) -> String {
    format!("emb.policy.{i}")
}

/// Name of the embedding row for the hypernetwork's own tensor `i`.
pub fn self_embedding_name(i: usize) -> String {
    format!("emb.self.{i}")
}

/// The hypernetwork's own updatable structure. Embedding rows (one per
/// policy node and one per non-embedding tensor) sit in layer 0, the GNN in
/// layers 1-2, and the three heads in layers 3-4. The fixed random basis has
/// no node.
pub fn build_ghn_graph(config: &GhnConfig) -> CompGraph {
    use ghn_tensor::*;

    let policy = build_mlp_graph(&config.policy_spec);
    let h = config.gnn_hidden;
    let e = config.embed_dim;
    let policy_max = max_param_count(&policy).expect("MLP graphs are non-empty");

    let mut b = GraphBuilder::new();
    let names = (0..policy.len())
        .map(policy_embedding_name)
        .chain((0..COUNT).map(self_embedding_name));
    let emb: Vec<usize> = names.map(|n| b.add(Role::Embedding, 0, vec![e], n)).collect();

    let msg_in_w = b.add(Role::Weight, 1, vec![h, h], MSG_IN_W.into());
    let msg_in_b = b.add(Role::Bias, 1, vec![h], MSG_IN_B.into());
    let msg_out_w = b.add(Role::Weight, 1, vec![h, h], MSG_OUT_W.into());
    let msg_out_b = b.add(Role::Bias, 1, vec![h], MSG_OUT_B.into());
    let cand_w = b.add(Role::Weight, 2, vec![h, 3 * h], CAND_W.into());
    let cand_b = b.add(Role::Bias, 2, vec![h], CAND_B.into());
    let gate_w = b.add(Role::Weight, 2, vec![h, 3 * h], GATE_W.into());
    let gate_b = b.add(Role::Bias, 2, vec![h], GATE_B.into());
    let det0_w = b.add(Role::Weight, 3, vec![config.det_head_hidden, h], DET_HIDDEN_W.into());
    let det0_b = b.add(Role::Bias, 3, vec![config.det_head_hidden], DET_HIDDEN_B.into());
    let st0_w =
        b.add(Role::Weight, 3, vec![config.stoch_head_hidden, h], STOCH_HIDDEN_W.into());
    let st0_b = b.add(Role::Bias, 3, vec![config.stoch_head_hidden], STOCH_HIDDEN_B.into());
    let rate_w = b.add(Role::Weight, 3, vec![config.mutation_heads, h], RATE_W.into());
    let rate_b = b.add(Role::Bias, 3, vec![config.mutation_heads], RATE_B.into());
    let det1_w =
        b.add(Role::Weight, 4, vec![policy_max, config.det_head_hidden], DET_OUT_W.into());
    let det1_b = b.add(Role::Bias, 4, vec![policy_max], DET_OUT_B.into());
    let st1_w = b.add(
        Role::Weight,
        4,
        vec![config.basis_in_dim, config.stoch_head_hidden],
        STOCH_OUT_W.into(),
    );
    let st1_b = b.add(Role::Bias, 4, vec![config.basis_in_dim], STOCH_OUT_B.into());

    let messages = [msg_in_w, msg_in_b, msg_out_w, msg_out_b];
    let update = [cand_w, cand_b, gate_w, gate_b];
    b.connect_all(&emb, &messages);
    b.connect_all(&messages, &update);
    b.connect_all(&update, &[det0_w, det0_b, st0_w, st0_b, rate_w, rate_b]);
    b.connect_all(&[det0_w, det0_b], &[det1_w, det1_b]);
    b.connect_all(&[st0_w, st0_b], &[st1_w, st1_b]);

    b.build(config.self_arch_name())
        .expect("layered hypernetwork graph is acyclic with valid shapes")
}

/// The fixed output width of a head targeting `graph`.
pub fn max_param_count(graph: &CompGraph) -> Result<usize> {
    graph
        .nodes()
        .iter()
        .map(ParamNode::param_count)
        .max()
        .ok_or(Error::EmptyGraph)
}

/// The prefix of `full_output` that parameterizes `node`.
pub fn take_first_k<'a>(full_output: &'a [f64], node: &ParamNode) -> Result<&'a [f64]> {
    let k = node.param_count();
    full_output
        .get(..k)
        .ok_or(Error::OutputWidthUnderflow {
            needed: k,
            available: full_output.len(),
        })
}
