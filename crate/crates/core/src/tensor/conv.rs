//! 3-D convolution (cross-correlation, zero padding) and its transpose.

use serde::{Deserialize, Serialize};

use super::kernels::{self, Geom};
use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Full description of a 3-D convolution.
///
/// For a regular convolution the weight is `[Cout, Cin/groups, kd, kh, kw]`;
/// for a transposed one it is `[Cin, Cout/groups, kd, kh, kw]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub dilation: [usize; 3],
    pub padding: [usize; 3],
    pub groups: usize,
    pub transpose: bool,
    pub output_padding: [usize; 3],
}

impl ConvSpec {
    /// Cubic kernel, stride 1, no padding, dense.
    pub fn cubic(k: usize) -> Self {
        ConvSpec {
            kernel: [k; 3],
            stride: [1; 3],
            dilation: [1; 3],
            padding: [0; 3],
            groups: 1,
            transpose: false,
            output_padding: [0; 3],
        }
    }

    pub fn pointwise() -> Self {
        Self::cubic(1)
    }

    pub fn stride(mut self, s: usize) -> Self {
        self.stride = [s; 3];
        self
    }

    pub fn padding(mut self, p: usize) -> Self {
        self.padding = [p; 3];
        self
    }

    pub fn dilation(mut self, d: usize) -> Self {
        self.dilation = [d; 3];
        self
    }

    pub fn groups(mut self, g: usize) -> Self {
        self.groups = g;
        self
    }

    /// Padding that keeps spatial shape at stride 1 (`dilation·(k−1)/2`).
    pub fn same_padding(mut self) -> Self {
        for a in 0..3 {
            self.padding[a] = self.dilation[a] * (self.kernel[a] - 1) / 2;
        }
        self
    }

    pub fn transposed(mut self, output_padding: usize) -> Self {
        self.transpose = true;
        self.output_padding = [output_padding; 3];
        self
    }

    pub fn taps(&self) -> usize {
        self.kernel.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Conv(m));
        if self.kernel.contains(&0) || self.stride.contains(&0) || self.dilation.contains(&0) {
            return bad(format!("kernel, stride and dilation must be positive: {self:?}"));
        }
        if self.groups == 0 {
            return bad("groups must be positive".into());
        }
        for a in 0..3 {
            if self.transpose {
                if self.output_padding[a] >= self.stride[a] {
                    return bad(format!("output_padding {:?} must be < stride {:?}", self.output_padding, self.stride));
                }
            } else if self.output_padding[a] != 0 {
                return bad("output_padding is only valid for transposed convolutions".into());
            }
        }
        Ok(())
    }

    /// Output spatial size for a given input spatial size.
    pub fn output_size(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        self.validate()?;
        let mut out = [0; 3];
        for a in 0..3 {
            let (i, k, s, p, d) =
                (input[a] as i64, self.kernel[a] as i64, self.stride[a] as i64, self.padding[a] as i64, self.dilation[a] as i64);
            let o = if self.transpose {
                (i - 1) * s - 2 * p + d * (k - 1) + 1 + self.output_padding[a] as i64
            } else {
                let span = i + 2 * p - d * (k - 1) - 1;
                if span < 0 {
                    -1
                } else {
                    span / s + 1
                }
            };
            if o <= 0 {
                return Err(Error::Conv(format!("non-positive output size on axis {a} for input {input:?} with {self:?}")));
            }
            out[a] = o as usize;
        }
        Ok(out)
    }

    /// Expected weight shape for the given channel counts.
    pub fn weight_shape(&self, cin: usize, cout: usize) -> [usize; 5] {
        let [a, b, c] = self.kernel;
        if self.transpose {
            [cin, cout / self.groups, a, b, c]
        } else {
            [cout, cin / self.groups, a, b, c]
        }
    }
}

/// Forward-direction geometry of a checked convolution call.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvPlan {
    pub geom: Geom,
    pub out_channels: usize,
    pub out_shape: [usize; 5],
}

pub(crate) fn plan(input: &[usize], weight: &[usize], spec: &ConvSpec) -> Result<ConvPlan> {
    spec.validate()?;
    if input.len() != 5 {
        return Err(Error::shape(format!("conv3d input must be N,C,D,H,W, got {input:?}")));
    }
    if weight.len() != 5 || weight[2..] != spec.kernel {
        return Err(Error::shape(format!("weight {weight:?} does not match kernel {:?}", spec.kernel)));
    }
    let (n, cin) = (input[0], input[1]);
    let spatial = [input[2], input[3], input[4]];
    let g = spec.groups;
    let cout = if spec.transpose {
        if weight[0] != cin {
            return Err(Error::shape(format!("transposed weight {weight:?} expects {} input channels, got {cin}", weight[0])));
        }
        weight[1] * g
    } else {
        if weight[1] * g != cin {
            return Err(Error::shape(format!("weight {weight:?} with groups {g} expects {} input channels, got {cin}", weight[1] * g)));
        }
        weight[0]
    };
    if cin % g != 0 || cout % g != 0 {
        return Err(Error::Conv(format!("groups {g} must divide channels {cin} -> {cout}")));
    }
    let out_sp = spec.output_size(spatial)?;
    let geom = if spec.transpose {
        // The transpose is the adjoint of a convolution from the large
        // (output) grid to the small (input) grid.
        Geom {
            batch: n,
            cin: cout,
            cout: cin,
            groups: g,
            in_sz: out_sp,
            out_sz: spatial,
            k: spec.kernel,
            s: spec.stride,
            p: spec.padding,
            d: spec.dilation,
        }
    } else {
        Geom { batch: n, cin, cout, groups: g, in_sz: spatial, out_sz: out_sp, k: spec.kernel, s: spec.stride, p: spec.padding, d: spec.dilation }
    };
    Ok(ConvPlan {
        geom,
        out_channels: cout,
        out_shape: [n, cout, out_sp[0], out_sp[1], out_sp[2]],
    })
}

/// Differentiable 3-D convolution of `input [N, Cin, D, H, W]`.
pub fn conv3d<F: Real>(input: &Tensor<F>, weight: &Tensor<F>, bias: Option<&Tensor<F>>, spec: &ConvSpec) -> Result<Tensor<F>> {
    let plan = plan(input.shape(), weight.shape(), spec)?;
    let cout = plan.out_channels;
    if let Some(b) = bias {
        if b.shape() != [cout] {
            return Err(Error::shape(format!("bias {:?} for {cout} output channels", b.shape())));
        }
    }
    let out_vox: usize = plan.out_shape[2..].iter().product();
    let mut y = vec![F::zero(); plan.out_shape.iter().product()];
    if let Some(b) = bias {
        for (i, chunk) in y.chunks_mut(out_vox).enumerate() {
            chunk.fill(b.data()[i % cout]);
        }
    }
    let geom = plan.geom;
    let transpose = spec.transpose;
    if transpose {
        kernels::backward_data(&geom, input.data(), weight.data(), &mut y);
    } else {
        kernels::forward(&geom, input.data(), weight.data(), &mut y);
    }

    let mut inputs = vec![input.clone(), weight.clone()];
    if let Some(b) = bias {
        inputs.push(b.clone());
    }
    let (xv, wv) = (input.shared_data(), weight.shared_data());
    let (x_len, w_len) = (input.numel(), weight.numel());
    Ok(Tensor::from_op(plan.out_shape.to_vec(), y, inputs, move |gy, needs| {
        let mut out = Vec::with_capacity(needs.len());
        out.push(needs[0].then(|| {
            let mut gx = vec![F::zero(); x_len];
            if transpose {
                kernels::forward(&geom, gy, &wv, &mut gx);
            } else {
                kernels::backward_data(&geom, gy, &wv, &mut gx);
            }
            gx
        }));
        out.push(needs[1].then(|| {
            let mut gw = vec![F::zero(); w_len];
            if transpose {
                kernels::backward_weight(&geom, gy, &xv, &mut gw);
            } else {
                kernels::backward_weight(&geom, &xv, gy, &mut gw);
            }
            gw
        }));
        if needs.len() == 3 {
            out.push(needs[2].then(|| {
                let mut gb = vec![F::zero(); cout];
                for (i, chunk) in gy.chunks(out_vox).enumerate() {
                    gb[i % cout] += chunk.iter().copied().sum::<F>();
                }
                gb
            }));
        }
        out
    }))
}

/// Untracked forward through the direct row-loop kernels regardless of the
/// group count. Exists so the GEMM lowering can be compared against it.
pub fn conv3d_direct<F: Real>(input: &Tensor<F>, weight: &Tensor<F>, spec: &ConvSpec) -> Result<Tensor<F>> {
    if spec.transpose {
        return Err(Error::Conv("direct path covers forward convolutions only".into()));
    }
    let plan = plan(input.shape(), weight.shape(), spec)?;
    let mut y = vec![F::zero(); plan.out_shape.iter().product()];
    kernels::forward_direct(&plan.geom, input.data(), weight.data(), &mut y);
    Tensor::from_vec(plan.out_shape.to_vec(), y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_size_formulae() {
        let s = ConvSpec::cubic(3).stride(2).padding(1);
        assert_eq!(s.output_size([128, 128, 128]).unwrap(), [64; 3]);
        assert_eq!(s.output_size([15, 15, 15]).unwrap(), [8; 3]);
        let t = ConvSpec::cubic(3).stride(2).padding(1).transposed(1);
        assert_eq!(t.output_size([5, 6, 7]).unwrap(), [10, 12, 14]);
        assert!(ConvSpec::cubic(5).output_size([3, 3, 3]).is_err());
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(ConvSpec::cubic(3).stride(2).transposed(2).validate().is_err());
        let mut s = ConvSpec::cubic(3);
        s.output_padding = [1, 0, 0];
        assert!(s.validate().is_err());
        assert!(ConvSpec::cubic(0).validate().is_err());
    }

    #[test]
    fn zero_input_gives_bias() {
        let x = Tensor::<f32>::zeros([1, 2, 4, 4, 4]);
        let w = Tensor::from_vec([3, 2, 3, 3, 3], (0..162).map(|i| i as f32 * 0.01).collect()).unwrap();
        let b = Tensor::from_vec([3], vec![0.5, -1.0, 2.0]).unwrap();
        let y = conv3d(&x, &w, Some(&b), &ConvSpec::cubic(3).padding(1)).unwrap();
        for (i, c) in y.data().chunks(64).enumerate() {
            assert!(c.iter().all(|&v| v == b.data()[i]));
        }
    }

    #[test]
    fn centered_delta_depthwise_is_identity() {
        let x = Tensor::<f64>::from_vec([1, 2, 3, 4, 5], (0..120).map(|i| (i as f64).sin()).collect()).unwrap();
        let mut w = vec![0.0; 2 * 27];
        w[13] = 1.0;
        w[27 + 13] = 1.0;
        let w = Tensor::from_vec([2, 1, 3, 3, 3], w).unwrap();
        let y = conv3d(&x, &w, None, &ConvSpec::cubic(3).padding(1).groups(2)).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn all_ones_cube() {
        // Each output counts the in-bounds neighbours: 27 at the center, 8 at a corner.
        let x = Tensor::<f32>::ones([1, 1, 3, 3, 3]);
        let w = Tensor::<f32>::ones([1, 1, 3, 3, 3]);
        let y = conv3d(&x, &w, None, &ConvSpec::cubic(3).padding(1)).unwrap();
        assert_eq!(y.data()[13], 27.0);
        for corner in [0, 2, 6, 8, 18, 20, 24, 26] {
            assert_eq!(y.data()[corner], 8.0);
        }
    }

    #[test]
    fn shape_and_group_errors() {
        let x = Tensor::<f32>::zeros([1, 3, 4, 4, 4]);
        let w = Tensor::<f32>::zeros([4, 2, 3, 3, 3]);
        assert!(conv3d(&x, &w, None, &ConvSpec::cubic(3)).is_err());
        let w = Tensor::<f32>::zeros([4, 1, 3, 3, 3]);
        // 3 input channels, groups 3, but 4 output channels
        assert!(conv3d(&x, &w, None, &ConvSpec::cubic(3).groups(3)).is_err());
        let w = Tensor::<f32>::zeros([4, 3, 5, 5, 5]);
        assert!(conv3d(&x, &w, None, &ConvSpec::cubic(5)).is_err());
    }
}
