//! Self-generated variation.
//!
//! A parent runs its GNN over its own computational graph. For every node the
//! stochastic head predicts zero-mean Gaussian standard deviations; a sample
//! is pushed through a fixed random basis, clipped, scaled by the node's
//! mutation rate, perturbed by floor noise, and the first `k` entries become
//! that node's delta. The child is the clipped sum of parent and delta.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::compgraph::{CompGraph, NodeId};
use crate::error::{Error, Result};
use crate::ghn::{embed_nodes, gnn_propagate, tanh_layer, BasisRef, Ghn, GhnModel, NodeStates, VariationInput};
use crate::nn::{affine_into, sigmoid, softplus, FlatParams};
use crate::rng::{standard_normal, Purpose, RngStream};

/// Final output layer of the stochastic head. Drawn once per run and never
/// part of any genome.
#[derive(Debug, Clone)]
pub struct FixedBasis {
    rows: usize,
    width: usize,
    matrix: Vec<f64>,
    draw_seed: u64,
    reference: BasisRef,
}

impl FixedBasis {
    /// Entries are `N(0, σ²)` with `σ = 1/√basis_in_dim`.
    pub fn draw(model: &GhnModel, run_seed: u64) -> Self {
        let rows = model.config().basis_in_dim;
        let width = model.basis_width();
        let mut rng = RngStream::new(run_seed, 0, 0, Purpose::Basis).rng();
        let scale = 1.0 / (rows as f64).sqrt();
        let matrix: Vec<f64> = (0..rows * width)
            .map(|_| scale * standard_normal(&mut rng))
            .collect();
        Self::from_matrix(rows, width, matrix, run_seed)
    }

    pub fn from_matrix(rows: usize, width: usize, matrix: Vec<f64>, draw_seed: u64) -> Self {
        assert_eq!(matrix.len(), rows * width, "basis matrix size");
        let reference = BasisRef(digest(&matrix));
        Self {
            rows,
            width,
            matrix,
            draw_seed,
            reference,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn draw_seed(&self) -> u64 {
        self.draw_seed
    }

    pub fn reference(&self) -> &BasisRef {
        &self.reference
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.matrix[j * self.width..(j + 1) * self.width]
    }

    /// SHA-256 of the little-endian matrix bytes, recomputed from scratch.
    pub fn digest(&self) -> String {
        digest(&self.matrix)
    }
}

fn digest(matrix: &[f64]) -> String {
    let mut h = Sha256::new();
    for x in matrix {
        h.update(x.to_le_bytes());
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeMutation {
    pub node: NodeId,
    pub rate: f64,
    pub std_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutationReport {
    pub nodes: Vec<NodeMutation>,
    pub mean_rate: f64,
}

/// A delta laid out like the parent's genome.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaParams {
    pub values: FlatParams,
}

/// Everything `sample_delta` computed, including the pre-noise buffer.
#[derive(Debug, Clone)]
pub struct DeltaTrace {
    pub delta: DeltaParams,
    pub report: MutationReport,
    pub pre_noise: Vec<f64>,
    pub stds: Vec<Vec<f64>>,
}

fn variation_states(ghn: &Ghn, graph: &CompGraph) -> Result<NodeStates> {
    let embedded = embed_nodes(ghn, graph)?;
    match ghn.config().variation_input {
        VariationInput::PostGnn => gnn_propagate(ghn, graph, embedded),
        VariationInput::Embedding => Ok(embedded),
    }
}

/// Nonnegative standard deviations (softplus) clipped to `[0, std_clip]`.
pub fn predict_stds(ghn: &Ghn, states: &NodeStates, v: NodeId) -> Vec<f64> {
    let t = &ghn.model().tensors;
    let z = tanh_layer(ghn.param(&t.stoch_hidden_w), ghn.param(&t.stoch_hidden_b), states.get(v));
    let mut out = Vec::new();
    affine_into(ghn.param(&t.stoch_out_w), ghn.param(&t.stoch_out_b), &z, &mut out);
    let clip = ghn.config().std_clip;
    out.iter_mut().for_each(|x| *x = softplus(*x).clamp(0.0, clip));
    out
}

/// The `M` linear pre-activations of the mutation-rate head.
pub fn rate_preactivations(ghn: &Ghn, states: &NodeStates, v: NodeId) -> Vec<f64> {
    let t = &ghn.model().tensors;
    let mut out = Vec::new();
    affine_into(ghn.param(&t.rate_w), ghn.param(&t.rate_b), states.get(v), &mut out);
    out
}

/// Max of `M` sigmoids.
pub fn mutation_rate_from(preactivations: &[f64]) -> f64 {
    preactivations
        .iter()
        .map(|&a| sigmoid(a))
        .fold(0.0, f64::max)
}

pub fn predict_mutation_rate(ghn: &Ghn, states: &NodeStates, v: NodeId) -> f64 {
    mutation_rate_from(&rate_preactivations(ghn, states, v))
}

/// Steps 2-6 of delta generation for a single node with `k` parameters.
/// Returns `(pre_noise, final)`.
pub fn node_delta<R: rand::Rng + ?Sized>(
    basis: &FixedBasis,
    stds: &[f64],
    rate: f64,
    out_clip: f64,
    noise_std: f64,
    k: usize,
    rng: &mut R,
) -> (Vec<f64>, Vec<f64>) {
    debug_assert_eq!(stds.len(), basis.rows());
    let mut o = vec![0.0; k];
    for (j, &s) in stds.iter().enumerate() {
        let z = s * standard_normal(rng);
        if z == 0.0 {
            continue;
        }
        for (acc, b) in o.iter_mut().zip(&basis.row(j)[..k]) {
            *acc += z * b;
        }
    }
    for x in &mut o {
        *x = x.clamp(-out_clip, out_clip) * rate;
    }
    let noisy = o
        .iter()
        .map(|x| x + noise_std * standard_normal(rng))
        .collect();
    (o, noisy)
}

pub fn sample_delta_traced(
    ghn: &Ghn,
    self_graph: &CompGraph,
    basis: &FixedBasis,
    stream: &RngStream,
) -> Result<DeltaTrace> {
    let model = ghn.model();
    if self_graph != &**model.self_graph() {
        return Err(Error::GraphMismatch {
            expected: model.self_graph().arch_name().to_string(),
            actual: self_graph.arch_name().to_string(),
        });
    }
    if basis.rows() != ghn.config().basis_in_dim || basis.width() != model.basis_width() {
        return Err(Error::DimensionMismatch {
            expected: model.basis_width(),
            actual: basis.width(),
        });
    }
    let states = variation_states(ghn, self_graph)?;
    let cfg = ghn.config();
    let mut rng = stream.rng();
    let mut delta = FlatParams::zeros(model.layout().clone());
    let mut pre_noise = vec![0.0; delta.len()];
    let mut stds_all = Vec::with_capacity(self_graph.len());
    let mut nodes = Vec::with_capacity(self_graph.len());
    for node in self_graph.nodes() {
        let stds = predict_stds(ghn, &states, node.id);
        let rate = predict_mutation_rate(ghn, &states, node.id);
        let k = node.param_count();
        let (pre, post) = node_delta(basis, &stds, rate, cfg.out_clip, cfg.noise_std, k, &mut rng);
        let slot = *model.layout().slot(node.id);
        pre_noise[slot.offset..slot.offset + k].copy_from_slice(&pre);
        delta.node_mut(node.id).copy_from_slice(&post);
        nodes.push(NodeMutation {
            node: node.id,
            rate,
            std_mean: stds.iter().sum::<f64>() / stds.len() as f64,
        });
        stds_all.push(stds);
    }
    let mean_rate = nodes.iter().map(|n| n.rate).sum::<f64>() / nodes.len() as f64;
    Ok(DeltaTrace {
        delta: DeltaParams { values: delta },
        report: MutationReport { nodes, mean_rate },
        pre_noise,
        stds: stds_all,
    })
}

pub fn sample_delta(
    ghn: &Ghn,
    self_graph: &CompGraph,
    basis: &FixedBasis,
    stream: &RngStream,
) -> Result<(DeltaParams, MutationReport)> {
    let t = sample_delta_traced(ghn, self_graph, basis, stream)?;
    Ok((t.delta, t.report))
}

/// Adds `delta` to a copy of `parent` and clips to `±param_clip`.
pub fn apply_delta(parent: &Ghn, delta: &DeltaParams, new_id: u64, generation: u64) -> Ghn {
    let clip = parent.config().param_clip;
    let mut child = parent.clone();
    for (x, d) in child.flat_mut().values_mut().iter_mut().zip(delta.values.values()) {
        *x = (*x + d).clamp(-clip, clip);
    }
    child.id = new_id;
    child.parent_id = Some(parent.id);
    child.birth_generation = generation;
    child
}

pub fn make_offspring(
    parent: &Ghn,
    basis: &FixedBasis,
    stream: &RngStream,
    new_id: u64,
    generation: u64,
) -> Result<(Ghn, MutationReport)> {
    let graph = parent.model().self_graph().clone();
    let (delta, report) = sample_delta(parent, &graph, basis, stream)?;
    Ok((apply_delta(parent, &delta, new_id, generation), report))
}
