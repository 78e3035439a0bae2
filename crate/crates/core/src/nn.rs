//! Flat parameter vectors and a small dense-network runtime.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::compgraph::{build_mlp_graph, CompGraph, MlpSpec, NodeId};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub node: NodeId,
    pub offset: usize,
    pub len: usize,
}

/// Contiguous placement of every node's parameters, in graph node order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub arch_name: String,
    pub slots: Vec<Slot>,
}

impl Layout {
    pub fn from_graph(graph: &CompGraph) -> Self {
        let mut offset = 0;
        let slots = graph
            .nodes()
            .iter()
            .map(|n| {
                let slot = Slot {
                    node: n.id,
                    offset,
                    len: n.param_count(),
                };
                offset += slot.len;
                slot
            })
            .collect();
        Self {
            arch_name: graph.arch_name().to_string(),
            slots,
        }
    }

    pub fn total_len(&self) -> usize {
        self.slots.last().map_or(0, |s| s.offset + s.len)
    }

    pub fn slot(&self, node: NodeId) -> &Slot {
        &self.slots[node.0]
    }

    fn validate(&self) -> Result<()> {
        let mut expected = 0;
        for (i, s) in self.slots.iter().enumerate() {
            if s.node.0 != i || s.offset != expected {
                return Err(Error::Checkpoint(format!("layout slot {i} is not contiguous")));
            }
            expected += s.len;
        }
        Ok(())
    }
}

/// A parameter vector together with its per-node layout.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatParams {
    values: Vec<f64>,
    layout: Arc<Layout>,
}

impl FlatParams {
    pub fn zeros(layout: Arc<Layout>) -> Self {
        Self {
            values: vec![0.0; layout.total_len()],
            layout,
        }
    }

    pub fn from_values(layout: Arc<Layout>, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.total_len() {
            return Err(Error::DimensionMismatch {
                expected: layout.total_len(),
                actual: values.len(),
            });
        }
        Ok(Self { values, layout })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn node(&self, node: NodeId) -> &[f64] {
        let s = self.layout.slot(node);
        &self.values[s.offset..s.offset + s.len]
    }

    pub fn node_mut(&mut self, node: NodeId) -> &mut [f64] {
        let s = *self.layout.slot(node);
        &mut self.values[s.offset..s.offset + s.len]
    }

    /// Splits the vector into owned per-node slices.
    pub fn unflatten(&self) -> ParamSet {
        let slices = self
            .layout
            .slots
            .iter()
            .map(|s| (s.node, self.values[s.offset..s.offset + s.len].to_vec()))
            .collect();
        ParamSet { slices }
    }

    /// Inverse of [`FlatParams::unflatten`].
    pub fn flatten(layout: Arc<Layout>, pset: &ParamSet) -> Result<Self> {
        let mut values = Vec::with_capacity(layout.total_len());
        for s in &layout.slots {
            let slice = pset.slices.get(&s.node).ok_or_else(|| {
                Error::IncompleteParamSet(format!("missing node {}", s.node.0))
            })?;
            if slice.len() != s.len {
                return Err(Error::IncompleteParamSet(format!(
                    "node {} has {} values, expected {}",
                    s.node.0,
                    slice.len(),
                    s.len
                )));
            }
            values.extend_from_slice(slice);
        }
        if pset.slices.len() != layout.slots.len() {
            return Err(Error::IncompleteParamSet("unexpected extra nodes".into()));
        }
        Ok(Self { values, layout })
    }
}

/// Per-node parameter slices emitted by a hypernetwork head.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    pub slices: BTreeMap<NodeId, Vec<f64>>,
}

impl ParamSet {
    pub fn get(&self, node: NodeId) -> Option<&[f64]> {
        self.slices.get(&node).map(Vec::as_slice)
    }

    pub fn insert(&mut self, node: NodeId, values: Vec<f64>) {
        self.slices.insert(node, values);
    }
}

#[derive(Debug, Clone, Copy)]
struct DenseLayer {
    weight: usize,
    bias: usize,
    fan_in: usize,
    fan_out: usize,
}

#[derive(Debug, Clone)]
pub struct PolicyNet {
    spec: MlpSpec,
    params: FlatParams,
    layers: Vec<DenseLayer>,
}

/// Reusable activations for [`PolicyNet::forward_with`].
#[derive(Debug, Default, Clone)]
pub struct ForwardBuffers {
    a: Vec<f64>,
    b: Vec<f64>,
}

impl PolicyNet {
    pub fn new(spec: MlpSpec, params: FlatParams) -> Result<Self> {
        let graph = build_mlp_graph(&spec);
        if params.layout().arch_name != graph.arch_name()
            || params.len() != graph.total_params()
        {
            return Err(Error::GraphMismatch {
                expected: graph.arch_name().to_string(),
                actual: params.layout().arch_name.clone(),
            });
        }
        let layers = spec
            .layer_dims()
            .into_iter()
            .enumerate()
            .map(|(l, (fan_in, fan_out))| DenseLayer {
                weight: params.layout().slot(NodeId(2 * l)).offset,
                bias: params.layout().slot(NodeId(2 * l + 1)).offset,
                fan_in,
                fan_out,
            })
            .collect();
        Ok(Self {
            spec,
            params,
            layers,
        })
    }

    /// Builds a policy from a raw parameter vector laid out per
    /// [`build_mlp_graph`].
    pub fn from_flat(spec: MlpSpec, values: Vec<f64>) -> Result<Self> {
        let layout = Arc::new(Layout::from_graph(&build_mlp_graph(&spec)));
        Self::new(spec, FlatParams::from_values(layout, values)?)
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> &FlatParams {
        &self.params
    }

    pub fn forward(&self, obs: &[f64]) -> Result<Vec<f64>> {
        let mut buf = ForwardBuffers::default();
        self.forward_with(obs, &mut buf).map(<[f64]>::to_vec)
    }

    pub fn forward_with<'b>(&self, obs: &[f64], buf: &'b mut ForwardBuffers) -> Result<&'b [f64]> {
        if obs.len() != self.spec.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.spec.input_dim,
                actual: obs.len(),
            });
        }
        let p = self.params.values();
        buf.a.clear();
        buf.a.extend_from_slice(obs);
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let act = if l == last {
                self.spec.output_activation
            } else {
                self.spec.activation
            };
            buf.b.clear();
            let w = &p[layer.weight..layer.weight + layer.fan_in * layer.fan_out];
            let bias = &p[layer.bias..layer.bias + layer.fan_out];
            for (row, &b0) in w.chunks_exact(layer.fan_in).zip(bias) {
                let z = b0 + dot(row, &buf.a);
                buf.b.push(act.apply(z));
            }
            std::mem::swap(&mut buf.a, &mut buf.b);
        }
        Ok(&buf.a)
    }
}

/// Sum of `f(a[i], b[i])` over eight interleaved accumulators, so the loop
/// vectorizes while the summation order stays fixed.
#[inline]
pub(crate) fn lane_sum(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> f64 {
    const L: usize = 8;
    let n = a.len().min(b.len());
    let (ca, cb) = (a[..n].chunks_exact(L), b[..n].chunks_exact(L));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    let mut acc = [0.0; L];
    for (x, y) in ca.zip(cb) {
        for i in 0..L {
            acc[i] += f(x[i], y[i]);
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(&x, &y)| f(x, y)).sum();
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    lane_sum(a, b, |x, y| x * y)
}

/// `out[r] = bias[r] + W[r,:] · x` for row-major `w` with `x.len()` columns.
#[inline]
pub(crate) fn affine_into(w: &[f64], bias: &[f64], x: &[f64], out: &mut Vec<f64>) {
    out.clear();
    out.extend(w.chunks_exact(x.len()).zip(bias).map(|(row, b)| b + dot(row, x)));
}

/// Places the generated slices into a policy network as-is.
pub fn assign_params(spec: &MlpSpec, pset: &ParamSet) -> Result<PolicyNet> {
    let layout = Arc::new(Layout::from_graph(&build_mlp_graph(spec)));
    PolicyNet::new(spec.clone(), FlatParams::flatten(layout, pset)?)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Structured-text header preceding a raw little-endian f64 payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayloadHeader {
    pub arch_name: String,
    pub layout: Vec<Slot>,
    pub rng_algorithm: String,
    pub clip_bounds: (f64, f64),
    /// Number of parameter vectors stored back to back.
    pub vectors: usize,
    #[serde(default)]
    pub extra: serde_json::Value,
}

/// Writes `header` as one JSON line followed by `vectors × layout len`
/// float64 values.
pub fn write_payload<W: Write>(mut w: W, header: &PayloadHeader, vectors: &[&[f64]]) -> Result<()> {
    let width: usize = header.layout.iter().map(|s| s.len).sum();
    if vectors.len() != header.vectors || vectors.iter().any(|v| v.len() != width) {
        return Err(Error::Checkpoint("payload does not match header".into()));
    }
    serde_json::to_writer(&mut w, header)?;
    w.write_all(b"\n")?;
    for v in vectors {
        for x in v.iter() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_payload<R: BufRead>(mut r: R) -> Result<(PayloadHeader, Vec<Vec<f64>>)> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    let header: PayloadHeader = serde_json::from_str(line.trim_end())?;
    Layout {
        arch_name: header.arch_name.clone(),
        slots: header.layout.clone(),
    }
    .validate()?;
    let width: usize = header.layout.iter().map(|s| s.len).sum();
    let mut bytes = vec![0u8; 8 * width];
    let mut vectors = Vec::with_capacity(header.vectors);
    for _ in 0..header.vectors {
        r.read_exact(&mut bytes)?;
        vectors.push(
            bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect(),
        );
    }
    Ok((header, vectors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compgraph::Activation;
    use proptest::prelude::*;

    fn cartpole_spec() -> MlpSpec {
        MlpSpec::new(4, vec![32], 2, Activation::Identity)
    }

    #[test]
    fn zero_network_outputs_zero() {
        let spec = cartpole_spec();
        let net = PolicyNet::from_flat(spec.clone(), vec![0.0; spec.param_count()]).unwrap();
        assert_eq!(net.forward(&[0.3, -1.0, 2.0, 0.1]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn one_by_one_tanh() {
        let spec = MlpSpec::new(1, vec![], 1, Activation::Tanh);
        let net = PolicyNet::from_flat(spec, vec![2.0, 0.0]).unwrap();
        let y = net.forward(&[0.5]).unwrap();
        assert!((y[0] - 0.761_594_155_955_764_9).abs() < 1e-12);
    }

    #[test]
    fn wrong_obs_length() {
        let spec = cartpole_spec();
        let net = PolicyNet::from_flat(spec.clone(), vec![0.0; spec.param_count()]).unwrap();
        assert!(matches!(
            net.forward(&[0.0; 3]),
            Err(Error::DimensionMismatch { expected: 4, actual: 3 })
        ));
    }

    #[test]
    fn hand_evaluated_two_layer() {
        // 2 -> 1 (tanh) -> 1 (identity)
        let spec = MlpSpec::new(2, vec![1], 1, Activation::Identity);
        let net = PolicyNet::from_flat(spec, vec![0.5, -0.25, 0.1, 3.0, -1.0]).unwrap();
        let h = (0.5 * 1.0 - 0.25 * 2.0 + 0.1f64).tanh();
        let y = net.forward(&[1.0, 2.0]).unwrap();
        assert!((y[0] - (3.0 * h - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn assign_round_trip_and_errors() {
        let spec = cartpole_spec();
        let graph = build_mlp_graph(&spec);
        let mut pset = ParamSet::default();
        for n in graph.nodes() {
            let v: Vec<f64> = (0..n.param_count()).map(|i| i as f64 * 0.01 + n.id.0 as f64).collect();
            pset.insert(n.id, v);
        }
        let net = assign_params(&spec, &pset).unwrap();
        assert_eq!(net.params().unflatten(), pset);

        let zeros = ParamSet {
            slices: pset.slices.iter().map(|(k, v)| (*k, vec![0.0; v.len()])).collect(),
        };
        let zero_net = assign_params(&spec, &zeros).unwrap();
        assert_eq!(zero_net.forward(&[1.0; 4]).unwrap(), vec![0.0, 0.0]);

        let mut missing = pset.clone();
        missing.slices.remove(&NodeId(3));
        assert!(matches!(
            assign_params(&spec, &missing),
            Err(Error::IncompleteParamSet(_))
        ));
        let mut short = pset;
        short.slices.get_mut(&NodeId(1)).unwrap().pop();
        assert!(matches!(assign_params(&spec, &short), Err(Error::IncompleteParamSet(_))));
    }

    #[test]
    fn payload_round_trip() {
        let spec = cartpole_spec();
        let layout = Layout::from_graph(&build_mlp_graph(&spec));
        let a: Vec<f64> = (0..layout.total_len()).map(|i| (i as f64).sin()).collect();
        let b: Vec<f64> = a.iter().map(|x| -x * 1e-300).collect();
        let header = PayloadHeader {
            arch_name: layout.arch_name.clone(),
            layout: layout.slots.clone(),
            rng_algorithm: crate::rng::RNG_ALGORITHM_ID.into(),
            clip_bounds: (-20.0, 20.0),
            vectors: 2,
            extra: serde_json::Value::Null,
        };
        let mut bytes = Vec::new();
        write_payload(&mut bytes, &header, &[&a, &b]).unwrap();
        let (h2, vs) = read_payload(std::io::Cursor::new(bytes)).unwrap();
        assert_eq!(h2, header);
        assert_eq!(vs, vec![a, b]);
    }

    proptest! {
        #[test]
        fn flatten_unflatten_identity(values in proptest::collection::vec(-1e6f64..1e6, 226)) {
            let layout = Arc::new(Layout::from_graph(&build_mlp_graph(&cartpole_spec())));
            let flat = FlatParams::from_values(layout.clone(), values.clone()).unwrap();
            let back = FlatParams::flatten(layout, &flat.unflatten()).unwrap();
            prop_assert_eq!(back.values(), values.as_slice());
        }

        #[test]
        fn forward_is_pure(values in proptest::collection::vec(-3f64..3.0, 226),
                           obs in proptest::collection::vec(-2f64..2.0, 4)) {
            let net = PolicyNet::from_flat(cartpole_spec(), values).unwrap();
            let a = net.forward(&obs).unwrap();
            let b = net.forward(&obs).unwrap();
            prop_assert_eq!(a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                            b.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        }
    }
}
