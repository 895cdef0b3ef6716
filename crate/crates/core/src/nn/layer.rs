use serde::{Deserialize, Serialize};

use super::{NnError, Tensor};

/// Kind of weight layer. Convolutions use stride 1 and zero "same" padding,
/// so the spatial shape is preserved through the layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerKind {
    Dense,
    Conv2d {
        kernel_size: usize,
        height: usize,
        width: usize,
    },
}

/// Shape description of a weight layer. For dense layers `fan_in`/`fan_out`
/// are unit counts; for convolutions they are channel counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub fan_in: usize,
    pub fan_out: usize,
    pub has_bias: bool,
}

impl LayerSpec {
    pub fn dense(fan_in: usize, fan_out: usize, has_bias: bool) -> Self {
        Self {
            kind: LayerKind::Dense,
            fan_in,
            fan_out,
            has_bias,
        }
    }

    pub fn conv2d(
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        spatial: (usize, usize),
        has_bias: bool,
    ) -> Self {
        Self {
            kind: LayerKind::Conv2d {
                kernel_size,
                height: spatial.0,
                width: spatial.1,
            },
            fan_in: in_channels,
            fan_out: out_channels,
            has_bias,
        }
    }

    fn spatial(&self) -> usize {
        match self.kind {
            LayerKind::Dense => 1,
            LayerKind::Conv2d { height, width, .. } => height * width,
        }
    }

    /// Flattened input dimension of the layer's linear map.
    pub fn input_dim(&self) -> usize {
        self.fan_in * self.spatial()
    }

    /// Flattened output dimension of the layer's linear map.
    pub fn output_dim(&self) -> usize {
        self.fan_out * self.spatial()
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        match self.kind {
            LayerKind::Dense => vec![self.fan_out, self.fan_in],
            LayerKind::Conv2d { kernel_size, .. } => {
                vec![self.fan_out, self.fan_in, kernel_size, kernel_size]
            }
        }
    }

    /// Trainable scalars: weights plus one bias per output unit/channel.
    pub fn num_params(&self) -> usize {
        let weights: usize = self.weight_shape().iter().product();
        weights + if self.has_bias { self.fan_out } else { 0 }
    }

    pub(crate) fn validate(&self) -> Result<(), NnError> {
        if self.fan_in == 0 || self.fan_out == 0 {
            return Err(NnError::InvalidNetwork("fan_in and fan_out must be positive".into()));
        }
        if let LayerKind::Conv2d {
            kernel_size,
            height,
            width,
        } = self.kind
        {
            if kernel_size == 0 || kernel_size % 2 == 0 {
                return Err(NnError::InvalidNetwork(format!(
                    "conv kernel size must be odd, got {kernel_size}"
                )));
            }
            if height == 0 || width == 0 {
                return Err(NnError::InvalidNetwork("conv spatial shape must be positive".into()));
            }
        }
        Ok(())
    }
}

/// A weight layer with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub spec: LayerSpec,
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl Layer {
    pub fn new(spec: LayerSpec, weight: Tensor, bias: Option<Tensor>) -> Result<Self, NnError> {
        spec.validate()?;
        let shape = spec.weight_shape();
        if weight.shape() != shape.as_slice() {
            return Err(NnError::Dimension {
                context: "layer weight",
                expected: shape.iter().product(),
                got: weight.len(),
            });
        }
        match (&bias, spec.has_bias) {
            (Some(b), true) if b.len() == spec.fan_out => {}
            (None, false) => {}
            (Some(b), _) => {
                return Err(NnError::Dimension {
                    context: "layer bias",
                    expected: if spec.has_bias { spec.fan_out } else { 0 },
                    got: b.len(),
                })
            }
            (None, true) => {
                return Err(NnError::InvalidNetwork("layer declares a bias but none given".into()))
            }
        }
        Ok(Self { spec, weight, bias })
    }

    /// Dense layer from a row-major `fan_out x fan_in` matrix, no bias.
    pub fn dense(fan_in: usize, fan_out: usize, weights: Vec<f64>) -> Result<Self, NnError> {
        Self::new(
            LayerSpec::dense(fan_in, fan_out, false),
            Tensor::new(vec![fan_out, fan_in], weights)?,
            None,
        )
    }

    /// Applies the layer's linear map (bias excluded) to one flattened input.
    pub fn apply_linear(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.spec.input_dim());
        debug_assert_eq!(out.len(), self.spec.output_dim());
        let w = self.weight.data();
        match self.spec.kind {
            LayerKind::Dense => {
                let n_in = self.spec.fan_in;
                for (o, slot) in out.iter_mut().enumerate() {
                    let row = &w[o * n_in..(o + 1) * n_in];
                    *slot = row.iter().zip(x).map(|(a, b)| a * b).sum();
                }
            }
            LayerKind::Conv2d {
                kernel_size,
                height,
                width,
            } => conv_forward(
                w,
                x,
                out,
                self.spec.fan_in,
                self.spec.fan_out,
                kernel_size,
                height,
                width,
            ),
        }
    }

    /// Applies the adjoint of the linear map to one flattened output vector.
    pub fn apply_adjoint(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.spec.output_dim());
        debug_assert_eq!(out.len(), self.spec.input_dim());
        let w = self.weight.data();
        match self.spec.kind {
            LayerKind::Dense => {
                let n_in = self.spec.fan_in;
                out.iter_mut().for_each(|v| *v = 0.0);
                for (o, &yo) in y.iter().enumerate() {
                    let row = &w[o * n_in..(o + 1) * n_in];
                    for (slot, &a) in out.iter_mut().zip(row) {
                        *slot += a * yo;
                    }
                }
            }
            LayerKind::Conv2d {
                kernel_size,
                height,
                width,
            } => conv_adjoint(
                w,
                y,
                out,
                self.spec.fan_in,
                self.spec.fan_out,
                kernel_size,
                height,
                width,
            ),
        }
    }

    /// Adds the bias (if any) to a flattened layer output.
    pub fn add_bias(&self, out: &mut [f64]) {
        if let Some(b) = &self.bias {
            let per_channel = self.spec.spatial();
            for (c, &bc) in b.data().iter().enumerate() {
                for v in &mut out[c * per_channel..(c + 1) * per_channel] {
                    *v += bc;
                }
            }
        }
    }

    pub fn map_params(&self, f: impl Fn(f64) -> f64 + Copy) -> Layer {
        Layer {
            spec: self.spec,
            weight: self.weight.map(f),
            bias: self.bias.as_ref().map(|b| b.map(f)),
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_forward(
    w: &[f64],
    x: &[f64],
    out: &mut [f64],
    c_in: usize,
    c_out: usize,
    k: usize,
    h: usize,
    wd: usize,
) {
    let pad = (k / 2) as isize;
    out.iter_mut().for_each(|v| *v = 0.0);
    for co in 0..c_out {
        for ci in 0..c_in {
            let kernel = &w[(co * c_in + ci) * k * k..(co * c_in + ci + 1) * k * k];
            let plane = &x[ci * h * wd..(ci + 1) * h * wd];
            for r in 0..h {
                for c in 0..wd {
                    let mut acc = 0.0;
                    for kr in 0..k {
                        let ir = r as isize + kr as isize - pad;
                        if ir < 0 || ir >= h as isize {
                            continue;
                        }
                        for kc in 0..k {
                            let ic = c as isize + kc as isize - pad;
                            if ic < 0 || ic >= wd as isize {
                                continue;
                            }
                            acc += kernel[kr * k + kc] * plane[ir as usize * wd + ic as usize];
                        }
                    }
                    out[co * h * wd + r * wd + c] += acc;
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_adjoint(
    w: &[f64],
    y: &[f64],
    out: &mut [f64],
    c_in: usize,
    c_out: usize,
    k: usize,
    h: usize,
    wd: usize,
) {
    let pad = (k / 2) as isize;
    out.iter_mut().for_each(|v| *v = 0.0);
    for co in 0..c_out {
        for ci in 0..c_in {
            let kernel = &w[(co * c_in + ci) * k * k..(co * c_in + ci + 1) * k * k];
            for r in 0..h {
                for c in 0..wd {
                    let g = y[co * h * wd + r * wd + c];
                    if g == 0.0 {
                        continue;
                    }
                    for kr in 0..k {
                        let ir = r as isize + kr as isize - pad;
                        if ir < 0 || ir >= h as isize {
                            continue;
                        }
                        for kc in 0..k {
                            let ic = c as isize + kc as isize - pad;
                            if ic < 0 || ic >= wd as isize {
                                continue;
                            }
                            out[ci * h * wd + ir as usize * wd + ic as usize] +=
                                kernel[kr * k + kc] * g;
                        }
                    }
                }
            }
        }
    }
}
