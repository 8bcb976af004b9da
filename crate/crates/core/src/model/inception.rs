use crate::autograd::{Exec, ParamId, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Convolution with its parameter handles.
#[derive(Clone, Debug)]
pub struct ConvLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl ConvLayer {
    pub fn new<S: Scalar>(params: &mut ParamSet<S>, name: &str, in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        let weight = params.add(
            format!("{name}.weight"),
            Tensor::zeros(Shape::new(out_channels, in_channels, kernel, kernel)),
        );
        let bias = params.add(format!("{name}.bias"), Tensor::zeros(Shape::new(1, out_channels, 1, 1)));
        Self {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
        }
    }

    pub fn forward<S: Scalar, E: Exec<S>>(&self, exec: &mut E, x: &E::Value) -> Result<E::Value> {
        let w = exec.param(self.weight);
        let b = exec.param(self.bias);
        exec.conv2d(x, &w, &b)
    }

    pub fn forward_relu<S: Scalar, E: Exec<S>>(&self, exec: &mut E, x: &E::Value) -> Result<E::Value> {
        let y = self.forward(exec, x)?;
        Ok(exec.relu(&y))
    }
}

/// Filter budget of one inception block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InceptionSpec {
    pub total_filters: usize,
}

impl InceptionSpec {
    pub fn new(total_filters: usize) -> Result<Self> {
        if total_filters == 0 || !total_filters.is_multiple_of(4) {
            return Err(Error::FilterCount {
                filters: total_filters,
            });
        }
        Ok(Self { total_filters })
    }

    /// Channels emitted by each of the four branches.
    pub fn branch_filters(&self) -> usize {
        self.total_filters / 4
    }

    /// Width of the 1x1 reductions in front of the 3x3 stacks.
    pub fn reduce_filters(&self) -> usize {
        (self.total_filters / 8).max(1)
    }
}

/// Four parallel branches concatenated along channels, each followed by ReLU:
///
/// * `a`: 1x1
/// * `b`: 1x1 reduction, then 3x3
/// * `c`: 1x1 reduction, then two stacked 3x3 (a 5x5 receptive field)
/// * `d`: 3x3 max pooling at stride 1, then 1x1
#[derive(Clone, Debug)]
pub struct Inception {
    pub spec: InceptionSpec,
    pub in_channels: usize,
    pub a: ConvLayer,
    pub b_reduce: ConvLayer,
    pub b_conv: ConvLayer,
    pub c_reduce: ConvLayer,
    pub c_conv1: ConvLayer,
    pub c_conv2: ConvLayer,
    pub d_proj: ConvLayer,
}

impl Inception {
    pub fn new<S: Scalar>(params: &mut ParamSet<S>, name: &str, in_channels: usize, spec: InceptionSpec) -> Self {
        let q = spec.branch_filters();
        let r = spec.reduce_filters();
        Self {
            spec,
            in_channels,
            a: ConvLayer::new(params, &format!("{name}.a"), in_channels, q, 1),
            b_reduce: ConvLayer::new(params, &format!("{name}.b_reduce"), in_channels, r, 1),
            b_conv: ConvLayer::new(params, &format!("{name}.b_conv"), r, q, 3),
            c_reduce: ConvLayer::new(params, &format!("{name}.c_reduce"), in_channels, r, 1),
            c_conv1: ConvLayer::new(params, &format!("{name}.c_conv1"), r, q, 3),
            c_conv2: ConvLayer::new(params, &format!("{name}.c_conv2"), q, q, 3),
            d_proj: ConvLayer::new(params, &format!("{name}.d_proj"), in_channels, q, 1),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.spec.total_filters
    }

    pub fn layers(&self) -> [&ConvLayer; 7] {
        [
            &self.a,
            &self.b_reduce,
            &self.b_conv,
            &self.c_reduce,
            &self.c_conv1,
            &self.c_conv2,
            &self.d_proj,
        ]
    }

    pub fn forward<S: Scalar, E: Exec<S>>(&self, exec: &mut E, x: &E::Value) -> Result<E::Value> {
        let in_ch = exec.shape(x).channels;
        if in_ch != self.in_channels {
            return Err(Error::DimMismatch {
                op: "inception",
                dim: "input channels",
                expected: self.in_channels,
                actual: in_ch,
            });
        }
        let a = self.a.forward_relu(exec, x)?;

        let b = self.b_reduce.forward_relu(exec, x)?;
        let b = self.b_conv.forward_relu(exec, &b)?;

        let c = self.c_reduce.forward_relu(exec, x)?;
        let c = self.c_conv1.forward_relu(exec, &c)?;
        let c = self.c_conv2.forward_relu(exec, &c)?;

        let d = exec.maxpool3_same(x);
        let d = self.d_proj.forward_relu(exec, &d)?;

        exec.concat_channels(&[&a, &b, &c, &d])
    }
}
