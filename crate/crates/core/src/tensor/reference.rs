//! Naive convolution written straight from the definition.
//!
//! This is the reference the optimized kernels are checked against. It
//! shares no code with them: the forward convolution gathers, the transposed
//! convolution scatters.

use super::conv::ConvSpec;
use super::numel;
use crate::error::Result;

/// Direct evaluation of `conv3d` in `f64`. Shapes follow [`super::conv3d`].
pub fn conv3d_naive(
    x: &[f64],
    x_shape: [usize; 5],
    w: &[f64],
    w_shape: [usize; 5],
    bias: Option<&[f64]>,
    spec: &ConvSpec,
) -> Result<(Vec<f64>, [usize; 5])> {
    let plan = super::conv::plan(&x_shape, &w_shape, spec)?;
    let out_shape = plan.out_shape;
    let [n, cin, id, ih, iw] = x_shape;
    let [_, cout, od, oh, ow] = out_shape;
    let g = spec.groups;
    let [k0, k1, k2] = spec.kernel;
    let mut y = vec![0.0; numel(&out_shape)];
    let xi = |b: usize, c: usize, z: usize, yy: usize, xx: usize| (((b * cin + c) * id + z) * ih + yy) * iw + xx;
    let yi = |b: usize, c: usize, z: usize, yy: usize, xx: usize| (((b * cout + c) * od + z) * oh + yy) * ow + xx;

    if !spec.transpose {
        let (cin_g, cout_g) = (cin / g, cout / g);
        for b in 0..n {
            for co in 0..cout {
                let grp = co / cout_g;
                for z in 0..od {
                    for yy in 0..oh {
                        for xx in 0..ow {
                            let mut acc = bias.map_or(0.0, |bv| bv[co]);
                            for cil in 0..cin_g {
                                let ci = grp * cin_g + cil;
                                for a in 0..k0 {
                                    for bb in 0..k1 {
                                        for c in 0..k2 {
                                            let pz = (z * spec.stride[0] + a * spec.dilation[0]) as isize - spec.padding[0] as isize;
                                            let py = (yy * spec.stride[1] + bb * spec.dilation[1]) as isize - spec.padding[1] as isize;
                                            let px = (xx * spec.stride[2] + c * spec.dilation[2]) as isize - spec.padding[2] as isize;
                                            if pz < 0 || py < 0 || px < 0 || pz >= id as isize || py >= ih as isize || px >= iw as isize {
                                                continue;
                                            }
                                            let wv = w[(((co * cin_g + cil) * k0 + a) * k1 + bb) * k2 + c];
                                            acc += wv * x[xi(b, ci, pz as usize, py as usize, px as usize)];
                                        }
                                    }
                                }
                            }
                            y[yi(b, co, z, yy, xx)] = acc;
                        }
                    }
                }
            }
        }
    } else {
        // Scatter every input voxel through the kernel into the enlarged grid.
        let (cin_g, cout_g) = (cin / g, cout / g);
        if let Some(bv) = bias {
            for (i, v) in y.iter_mut().enumerate() {
                *v = bv[(i / (od * oh * ow)) % cout];
            }
        }
        for b in 0..n {
            for ci in 0..cin {
                let grp = ci / cin_g;
                for z in 0..id {
                    for yy in 0..ih {
                        for xx in 0..iw {
                            let xv = x[xi(b, ci, z, yy, xx)];
                            for col in 0..cout_g {
                                let co = grp * cout_g + col;
                                for a in 0..k0 {
                                    for bb in 0..k1 {
                                        for c in 0..k2 {
                                            let pz = (z * spec.stride[0] + a * spec.dilation[0]) as isize - spec.padding[0] as isize;
                                            let py = (yy * spec.stride[1] + bb * spec.dilation[1]) as isize - spec.padding[1] as isize;
                                            let px = (xx * spec.stride[2] + c * spec.dilation[2]) as isize - spec.padding[2] as isize;
                                            if pz < 0 || py < 0 || px < 0 || pz >= od as isize || py >= oh as isize || px >= ow as isize {
                                                continue;
                                            }
                                            let wv = w[(((ci * cout_g + col) * k0 + a) * k1 + bb) * k2 + c];
                                            y[yi(b, co, pz as usize, py as usize, px as usize)] += wv * xv;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((y, out_shape))
}
