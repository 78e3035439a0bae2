//! The graph hypernetwork: per-node embeddings, a gated message-passing GNN,
//! and the deterministic head that emits policy parameters.

use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::compgraph::{
    build_ghn_graph, build_mlp_graph, ghn_tensor, max_param_count, policy_embedding_name,
    self_embedding_name, Activation, CompGraph, MlpSpec, NodeId, Role,
};
use crate::error::{Error, Result};
use crate::nn::{affine_into, sigmoid, FlatParams, Layout, ParamSet, PolicyNet};
use crate::rng::{standard_normal, RngStream};

/// Which node representation feeds the stochastic and mutation-rate heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum VariationInput {
    #[default]
    PostGnn,
    Embedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GhnConfig {
    pub embed_dim: usize,
    pub gnn_rounds: usize,
    pub gnn_hidden: usize,
    pub det_head_hidden: usize,
    pub stoch_head_hidden: usize,
    pub basis_in_dim: usize,
    /// `M`: number of sigmoid outputs whose max is the node's mutation rate.
    pub mutation_heads: usize,
    /// Elementwise clip applied to the stochastic head output before scaling.
    pub out_clip: f64,
    pub param_clip: f64,
    pub std_clip: f64,
    pub noise_std: f64,
    #[serde(default)]
    pub variation_input: VariationInput,
    pub policy_spec: MlpSpec,
}

impl GhnConfig {
    /// Settings shared by the switching tasks, around a custom policy.
    pub fn with_policy(policy_spec: MlpSpec) -> Self {
        Self {
            embed_dim: 32,
            gnn_rounds: 2,
            gnn_hidden: 32,
            det_head_hidden: 64,
            stoch_head_hidden: 32,
            basis_in_dim: 64,
            mutation_heads: 5,
            out_clip: 0.1,
            param_clip: 20.0,
            std_clip: 2.0,
            noise_std: 0.001,
            variation_input: VariationInput::PostGnn,
            policy_spec,
        }
    }

    pub fn cartpole() -> Self {
        Self::with_policy(MlpSpec::new(4, vec![32], 2, Activation::Identity))
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("embed_dim", self.embed_dim),
            ("gnn_rounds", self.gnn_rounds),
            ("gnn_hidden", self.gnn_hidden),
            ("det_head_hidden", self.det_head_hidden),
            ("stoch_head_hidden", self.stoch_head_hidden),
            ("basis_in_dim", self.basis_in_dim),
            ("mutation_heads", self.mutation_heads),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::config(key, "must be >= 1"));
            }
        }
        if self.gnn_hidden != self.embed_dim {
            return Err(Error::config(
                "gnn_hidden",
                format!("must equal embed_dim ({})", self.embed_dim),
            ));
        }
        for (key, v) in [
            ("out_clip", self.out_clip),
            ("param_clip", self.param_clip),
            ("std_clip", self.std_clip),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(key, "must be a positive finite number"));
            }
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::config("noise_std", "must be >= 0"));
        }
        self.policy_spec.validate()
    }

    pub fn self_arch_name(&self) -> String {
        format!(
            "ghn:e{}:t{}:h{}:d{}:s{}:b{}:m{}:{}",
            self.embed_dim,
            self.gnn_rounds,
            self.gnn_hidden,
            self.det_head_hidden,
            self.stoch_head_hidden,
            self.basis_in_dim,
            self.mutation_heads,
            self.policy_spec.arch_name()
        )
    }
}

/// Flat-vector ranges of the non-embedding tensors.
#[derive(Debug, Clone)]
pub(crate) struct Tensors {
    pub msg_in_w: Range<usize>,
    pub msg_in_b: Range<usize>,
    pub msg_out_w: Range<usize>,
    pub msg_out_b: Range<usize>,
    pub cand_w: Range<usize>,
    pub cand_b: Range<usize>,
    pub gate_w: Range<usize>,
    pub gate_b: Range<usize>,
    pub det_hidden_w: Range<usize>,
    pub det_hidden_b: Range<usize>,
    pub det_out_w: Range<usize>,
    pub det_out_b: Range<usize>,
    pub stoch_hidden_w: Range<usize>,
    pub stoch_hidden_b: Range<usize>,
    pub stoch_out_w: Range<usize>,
    pub stoch_out_b: Range<usize>,
    pub rate_w: Range<usize>,
    pub rate_b: Range<usize>,
}

/// Immutable structure shared by every individual of a run.
#[derive(Debug)]
pub struct GhnModel {
    config: GhnConfig,
    self_graph: Arc<CompGraph>,
    policy_graph: Arc<CompGraph>,
    layout: Arc<Layout>,
    pub(crate) tensors: Tensors,
    /// Flat range holding the input state of each policy node.
    policy_inputs: Vec<Range<usize>>,
    /// Flat range holding the input state of each self-graph node.
    self_inputs: Vec<Range<usize>>,
}

impl GhnModel {
    pub fn new(config: GhnConfig) -> Result<Arc<Self>> {
        config.validate()?;
        let self_graph = build_ghn_graph(&config);
        let policy_graph = build_mlp_graph(&config.policy_spec);
        let layout = Arc::new(Layout::from_graph(&self_graph));
        let range = |name: &str| -> Range<usize> {
            let node = self_graph
                .find(name)
                .unwrap_or_else(|| panic!("hypernetwork graph lacks `{name}`"));
            let s = layout.slot(node.id);
            s.offset..s.offset + s.len
        };
        use ghn_tensor::*;
        let tensors = Tensors {
            msg_in_w: range(MSG_IN_W),
            msg_in_b: range(MSG_IN_B),
            msg_out_w: range(MSG_OUT_W),
            msg_out_b: range(MSG_OUT_B),
            cand_w: range(CAND_W),
            cand_b: range(CAND_B),
            gate_w: range(GATE_W),
            gate_b: range(GATE_B),
            det_hidden_w: range(DET_HIDDEN_W),
            det_hidden_b: range(DET_HIDDEN_B),
            det_out_w: range(DET_OUT_W),
            det_out_b: range(DET_OUT_B),
            stoch_hidden_w: range(STOCH_HIDDEN_W),
            stoch_hidden_b: range(STOCH_HIDDEN_B),
            stoch_out_w: range(STOCH_OUT_W),
            stoch_out_b: range(STOCH_OUT_B),
            rate_w: range(RATE_W),
            rate_b: range(RATE_B),
        };
        let policy_inputs = (0..policy_graph.len())
            .map(|i| range(&policy_embedding_name(i)))
            .collect();
        // Embedding rows represent themselves; the j-th tensor node reads
        // self row j.
        let mut next_row = 0;
        let self_inputs = self_graph
            .nodes()
            .iter()
            .map(|n| match n.role {
                Role::Embedding => {
                    let s = layout.slot(n.id);
                    s.offset..s.offset + s.len
                }
                Role::Weight | Role::Bias => {
                    next_row += 1;
                    range(&self_embedding_name(next_row - 1))
                }
            })
            .collect();
        Ok(Arc::new(Self {
            config,
            self_graph: Arc::new(self_graph),
            policy_graph: Arc::new(policy_graph),
            layout,
            tensors,
            policy_inputs,
            self_inputs,
        }))
    }

    pub fn config(&self) -> &GhnConfig {
        &self.config
    }

    pub fn self_graph(&self) -> &Arc<CompGraph> {
        &self.self_graph
    }

    pub fn policy_graph(&self) -> &Arc<CompGraph> {
        &self.policy_graph
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn param_count(&self) -> usize {
        self.layout.total_len()
    }

    /// Width of the stochastic head's final (basis) output.
    pub fn basis_width(&self) -> usize {
        max_param_count(&self.self_graph).expect("hypernetwork graph is non-empty")
    }
}

/// Identifies the fixed random basis an individual was built against.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BasisRef(pub String);

/// One individual of the population.
#[derive(Debug, Clone)]
pub struct Ghn {
    pub id: u64,
    pub birth_generation: u64,
    pub parent_id: Option<u64>,
    pub basis_ref: BasisRef,
    flat: FlatParams,
    model: Arc<GhnModel>,
}

/// Node representations, indexed by node id.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeStates {
    pub states: Vec<Vec<f64>>,
}

impl NodeStates {
    pub fn get(&self, v: NodeId) -> &[f64] {
        &self.states[v.0]
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Random initialization: weights `N(0, 1/fan_in)`, biases zero,
/// embeddings `N(0, 1)`, all clipped to `±param_clip`.
pub fn init_ghn(model: &Arc<GhnModel>, basis_ref: BasisRef, stream: &RngStream) -> Ghn {
    let mut rng = stream.rng();
    let clip = model.config.param_clip;
    let mut flat = FlatParams::zeros(model.layout.clone());
    for node in model.self_graph.nodes() {
        let scale = match node.role {
            Role::Bias => continue,
            Role::Embedding => 1.0,
            Role::Weight => 1.0 / (node.shape[1] as f64).sqrt(),
        };
        for x in flat.node_mut(node.id) {
            *x = (scale * standard_normal(&mut rng)).clamp(-clip, clip);
        }
    }
    Ghn {
        id: stream.individual_id,
        birth_generation: stream.generation,
        parent_id: None,
        basis_ref,
        flat,
        model: model.clone(),
    }
}

impl Ghn {
    pub fn from_parts(
        model: Arc<GhnModel>,
        flat: FlatParams,
        id: u64,
        birth_generation: u64,
        parent_id: Option<u64>,
        basis_ref: BasisRef,
    ) -> Result<Self> {
        if flat.layout() != model.layout() && **flat.layout() != **model.layout() {
            return Err(Error::GraphMismatch {
                expected: model.layout.arch_name.clone(),
                actual: flat.layout().arch_name.clone(),
            });
        }
        Ok(Self {
            id,
            birth_generation,
            parent_id,
            basis_ref,
            flat,
            model,
        })
    }

    pub fn config(&self) -> &GhnConfig {
        &self.model.config
    }

    pub fn model(&self) -> &Arc<GhnModel> {
        &self.model
    }

    pub fn flat(&self) -> &FlatParams {
        &self.flat
    }

    pub fn flat_mut(&mut self) -> &mut FlatParams {
        &mut self.flat
    }

    pub(crate) fn param(&self, r: &Range<usize>) -> &[f64] {
        &self.flat.values()[r.clone()]
    }

    /// Deterministic pipeline from the policy graph to a policy network.
    pub fn policy(&self) -> Result<PolicyNet> {
        let pset = generate_policy_params(self, &self.model.policy_graph)?;
        crate::nn::assign_params(&self.model.config.policy_spec, &pset)
    }
}

/// Copies each node's embedding row out of the genome.
pub fn embed_nodes(ghn: &Ghn, graph: &CompGraph) -> Result<NodeStates> {
    let model = &ghn.model;
    let inputs = if graph.arch_name() == model.policy_graph.arch_name() {
        &model.policy_inputs
    } else if graph.arch_name() == model.self_graph.arch_name() {
        &model.self_inputs
    } else {
        return Err(Error::UnknownArch(graph.arch_name().to_string()));
    };
    if inputs.len() != graph.len() {
        return Err(Error::GraphMismatch {
            expected: graph.arch_name().to_string(),
            actual: format!("graph with {} nodes", graph.len()),
        });
    }
    let values = ghn.flat.values();
    Ok(NodeStates {
        states: inputs.iter().map(|r| values[r.clone()].to_vec()).collect(),
    })
}

fn mean_messages(
    graph: &CompGraph,
    projected: &[Vec<f64>],
    v: usize,
    incoming: bool,
    dim: usize,
    out: &mut [f64],
) {
    let nbrs = if incoming {
        graph.in_neighbors(v)
    } else {
        graph.out_neighbors(v)
    };
    out.iter_mut().for_each(|x| *x = 0.0);
    if nbrs.is_empty() {
        return;
    }
    for &u in nbrs {
        for (o, p) in out.iter_mut().zip(&projected[u][..dim]) {
            *o += p;
        }
    }
    let inv = 1.0 / nbrs.len() as f64;
    out.iter_mut().for_each(|x| *x *= inv);
}

/// `gnn_rounds` synchronous rounds of directional mean aggregation followed
/// by a gated update. Nodes without neighbours in a direction receive a zero
/// message from it.
pub fn gnn_propagate(ghn: &Ghn, graph: &CompGraph, states: NodeStates) -> Result<NodeStates> {
    let h = ghn.model.config.gnn_hidden;
    if states.len() != graph.len() {
        return Err(Error::DimensionMismatch {
            expected: graph.len(),
            actual: states.len(),
        });
    }
    if let Some(bad) = states.states.iter().find(|s| s.len() != h) {
        return Err(Error::DimensionMismatch {
            expected: h,
            actual: bad.len(),
        });
    }
    let t = &ghn.model.tensors;
    let (w_in, b_in) = (ghn.param(&t.msg_in_w), ghn.param(&t.msg_in_b));
    let (w_out, b_out) = (ghn.param(&t.msg_out_w), ghn.param(&t.msg_out_b));
    let (w_c, b_c) = (ghn.param(&t.cand_w), ghn.param(&t.cand_b));
    let (w_g, b_g) = (ghn.param(&t.gate_w), ghn.param(&t.gate_b));

    let n = graph.len();
    let mut current = states.states;
    let mut proj_in = vec![Vec::with_capacity(h); n];
    let mut proj_out = vec![Vec::with_capacity(h); n];
    let mut x = vec![0.0; 3 * h];
    let mut cand = Vec::with_capacity(h);
    let mut gate = Vec::with_capacity(h);
    for _ in 0..ghn.model.config.gnn_rounds {
        for u in 0..n {
            affine_into(w_in, b_in, &current[u], &mut proj_in[u]);
            affine_into(w_out, b_out, &current[u], &mut proj_out[u]);
        }
        let mut next = Vec::with_capacity(n);
        for v in 0..n {
            x[..h].copy_from_slice(&current[v]);
            let (_, rest) = x.split_at_mut(h);
            let (m_in, m_out) = rest.split_at_mut(h);
            mean_messages(graph, &proj_in, v, true, h, m_in);
            mean_messages(graph, &proj_out, v, false, h, m_out);
            affine_into(w_c, b_c, &x, &mut cand);
            affine_into(w_g, b_g, &x, &mut gate);
            next.push(
                cand.iter()
                    .zip(&gate)
                    .zip(&current[v])
                    .map(|((c, g), s)| {
                        let g = sigmoid(*g);
                        g * c.tanh() + (1.0 - g) * s
                    })
                    .collect(),
            );
        }
        current = next;
    }
    Ok(NodeStates { states: current })
}

pub(crate) fn tanh_layer(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(b.len());
    affine_into(w, b, x, &mut out);
    out.iter_mut().for_each(|z| *z = z.tanh());
    out
}

/// Deterministic head over post-GNN states of the policy graph. The head's
/// output width is `max_param_count(policy_graph)`; node `v` takes its first
/// `k_v` entries. Only those rows are computed.
pub fn generate_policy_params(ghn: &Ghn, policy_graph: &CompGraph) -> Result<ParamSet> {
    let model = &ghn.model;
    if policy_graph != &*model.policy_graph {
        return Err(Error::GraphMismatch {
            expected: model.policy_graph.arch_name().to_string(),
            actual: policy_graph.arch_name().to_string(),
        });
    }
    let states = gnn_propagate(ghn, policy_graph, embed_nodes(ghn, policy_graph)?)?;
    let t = &model.tensors;
    let (w1, b1) = (ghn.param(&t.det_hidden_w), ghn.param(&t.det_hidden_b));
    let (w2, b2) = (ghn.param(&t.det_out_w), ghn.param(&t.det_out_b));
    let hidden = model.config.det_head_hidden;
    let mut pset = ParamSet::default();
    for node in policy_graph.nodes() {
        let z = tanh_layer(w1, b1, states.get(node.id));
        let k = node.param_count();
        let slice: Vec<f64> = w2[..k * hidden]
            .chunks_exact(hidden)
            .zip(&b2[..k])
            .map(|(row, b)| b + crate::nn::dot(row, &z))
            .collect();
        pset.insert(node.id, slice);
    }
    Ok(pset)
}

/// Full deterministic-head output for node `v` (all `max_param_count`
/// entries), used to check the width law.
pub fn deterministic_head_output(ghn: &Ghn, states: &NodeStates, v: NodeId) -> Vec<f64> {
    let t = &ghn.model.tensors;
    let z = tanh_layer(ghn.param(&t.det_hidden_w), ghn.param(&t.det_hidden_b), states.get(v));
    let mut out = Vec::new();
    affine_into(ghn.param(&t.det_out_w), ghn.param(&t.det_out_b), &z, &mut out);
    out
}
