//! Parameterized building blocks on top of the graph ops.

use super::graph::{Graph, NodeId};
use super::params::{ParamId, ParamStore};
use super::NnError;
use rand::Rng;

/// Depthwise convolution followed by a biased 1x1 convolution. With
/// `global_context` the per-channel maximum of the depthwise output is
/// appended before the pointwise step, doubling its input width.
#[derive(Debug, Clone)]
pub struct SepConv {
    pub depthwise: ParamId,
    pub pointwise: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub global_context: bool,
}

impl SepConv {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        global_context: bool,
        rng: &mut R,
    ) -> Self {
        let pw_in = if global_context { 2 * in_channels } else { in_channels };
        let depthwise = store.add_normal(
            format!("{name}.dw"),
            &[in_channels, kernel],
            (1.0 / kernel as f64).sqrt(),
            rng,
        );
        let pointwise = store.add_normal(
            format!("{name}.pw"),
            &[out_channels, pw_in],
            (2.0 / pw_in as f64).sqrt(),
            rng,
        );
        let bias = store.add(format!("{name}.b"), &[out_channels], vec![0.0; out_channels]);
        Self {
            depthwise,
            pointwise,
            bias,
            in_channels,
            out_channels,
            kernel,
            global_context,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId, NnError> {
        let dw = g.param(store, self.depthwise);
        let mut h = g.depthwise(x, dw, self.kernel)?;
        if self.global_context {
            h = g.global_max_concat(h)?;
        }
        let pw = g.param(store, self.pointwise);
        let b = g.param(store, self.bias);
        g.pointwise(h, pw, Some(b))
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), &[channels], vec![1.0; channels]),
            beta: store.add(format!("{name}.beta"), &[channels], vec![0.0; channels]),
            running_mean: store.add_buffer(format!("{name}.mean"), &[channels], vec![0.0; channels]),
            running_var: store.add_buffer(format!("{name}.var"), &[channels], vec![1.0; channels]),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId, NnError> {
        g.batch_norm(store, x, self.gamma, self.beta, self.running_mean, self.running_var)
    }
}

/// Separable convolution, then ReLU, batch norm and dropout.
#[derive(Debug, Clone)]
pub struct ConvUnit {
    pub conv: SepConv,
    pub norm: BatchNorm,
    pub dropout: f64,
}

impl ConvUnit {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        global_context: bool,
        dropout: f64,
        rng: &mut R,
    ) -> Self {
        Self {
            conv: SepConv::new(store, name, in_channels, out_channels, kernel, global_context, rng),
            norm: BatchNorm::new(store, &format!("{name}.bn"), out_channels),
            dropout,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId, NnError> {
        let h = self.conv.forward(g, store, x)?;
        let h = g.relu(h)?;
        let h = self.norm.forward(g, store, h)?;
        g.dropout(h, self.dropout)
    }
}

/// Biased 1x1 convolution.
#[derive(Debug, Clone)]
pub struct Pointwise {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Pointwise {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, in_channels: usize, out_channels: usize, rng: &mut R) -> Self {
        Self {
            weight: store.add_normal(
                format!("{name}.w"),
                &[out_channels, in_channels],
                (1.0 / in_channels as f64).sqrt(),
                rng,
            ),
            bias: store.add(format!("{name}.b"), &[out_channels], vec![0.0; out_channels]),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId, NnError> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.pointwise(x, w, Some(b))
    }
}
