use std::sync::Arc;

use crate::diffmath::{Index, Real, Tensor};
use crate::env::{NodeKind, ObsGraph};

/// Width of the per-node input row: one-hot type (3), extra state (3),
/// edge feature to the receiver (4).
pub const INPUT_DIM: usize = 10;

/// Width of the attenuation band inside the sensing radius.
pub const ATTENUATION_BAND: f64 = 0.1;

/// Additive attention-logit term for a neighbor agent at distance `d`:
/// `log(clamp((R - d) / 0.1, 1e-6, 1))`.
pub fn attenuation(d: f64, radius: f64) -> f64 {
    ((radius - d) / ATTENUATION_BAND).clamp(1e-6, 1.0).ln()
}

/// Many observation graphs packed into one node table.
///
/// Row `n` of `inputs` is one (sender node, receiver) edge; `segment[n]`
/// names the graph it belongs to and `ego[g]` the row of graph `g`'s
/// receiver self-loop.
#[derive(Clone, Debug)]
pub struct GraphBatch<T: Real = f32> {
    pub inputs: Tensor<T>,
    pub segment: Index,
    pub ego: Index,
    /// `[rows, heads]` additive logit offsets (zero except for neighbor agents).
    pub attenuation: Tensor<T>,
    pub n_graphs: usize,
}

impl<T: Real> GraphBatch<T> {
    pub fn new<'a>(graphs: impl IntoIterator<Item = &'a ObsGraph>, radius: f64, heads: usize) -> Self {
        let mut inputs = Vec::new();
        let mut segment = Vec::new();
        let mut ego = Vec::new();
        let mut atten = Vec::new();
        let mut n_graphs = 0;
        for (g, graph) in graphs.into_iter().enumerate() {
            n_graphs += 1;
            ego.push(segment.len());
            for (j, node) in graph.nodes.iter().enumerate() {
                let e = graph.edge_feature(j);
                let row = node.kind.one_hot().into_iter().chain(node.extra).chain(e);
                inputs.extend(row.map(T::from_f64));
                segment.push(g);
                let a = if j > 0 && node.kind == NodeKind::Agent {
                    attenuation(e[0].hypot(e[1]), radius)
                } else {
                    0.0
                };
                atten.extend(std::iter::repeat_n(T::from_f64(a), heads));
            }
        }
        let rows = segment.len();
        Self {
            inputs: Tensor::from_parts(vec![rows, INPUT_DIM], inputs),
            segment: Arc::from(segment),
            ego: Arc::from(ego),
            attenuation: Tensor::from_parts(vec![rows, heads], atten),
            n_graphs,
        }
    }

    pub fn rows(&self) -> usize {
        self.segment.len()
    }
}
