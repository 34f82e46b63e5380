use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Forward/backward kernels. Callers validate shapes against the model spec;
/// kernels only debug-assert the invariants they rely on.

pub(crate) fn conv2d_forward(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Tensor {
    let (b, cin, h, w) = dims4(input.shape());
    let (cout, wcin, k, _) = dims4(weight.shape());
    debug_assert_eq!(cin, wcin);
    debug_assert_eq!(bias.len(), cout);
    let (oh, ow) = (h - k + 1, w - k + 1);
    let x = input.data();
    let wt = weight.data();
    let bs = bias.data();
    let mut out = vec![0.0; b * cout * oh * ow];
    for bi in 0..b {
        let x_img = &x[bi * cin * h * w..(bi + 1) * cin * h * w];
        let o_img = &mut out[bi * cout * oh * ow..(bi + 1) * cout * oh * ow];
        for oc in 0..cout {
            let w_oc = &wt[oc * cin * k * k..(oc + 1) * cin * k * k];
            let o_map = &mut o_img[oc * oh * ow..(oc + 1) * oh * ow];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bs[oc];
                    for ic in 0..cin {
                        let x_map = &x_img[ic * h * w..(ic + 1) * h * w];
                        let w_map = &w_oc[ic * k * k..(ic + 1) * k * k];
                        for ky in 0..k {
                            let xr = &x_map[(oy + ky) * w + ox..];
                            let wr = &w_map[ky * k..(ky + 1) * k];
                            for kx in 0..k {
                                acc += xr[kx] * wr[kx];
                            }
                        }
                    }
                    o_map[oy * ow + ox] = acc;
                }
            }
        }
    }
    Tensor::new(vec![b, cout, oh, ow], out).expect("conv output shape")
}

pub(crate) fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    gout: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let (b, cin, h, w) = dims4(input.shape());
    let (cout, _, k, _) = dims4(weight.shape());
    let (_, _, oh, ow) = dims4(gout.shape());
    let x = input.data();
    let wt = weight.data();
    let g = gout.data();
    let mut gx = vec![0.0; input.len()];
    let mut gw = vec![0.0; weight.len()];
    let mut gb = vec![0.0; cout];
    for bi in 0..b {
        let x_img = &x[bi * cin * h * w..(bi + 1) * cin * h * w];
        let gx_img = &mut gx[bi * cin * h * w..(bi + 1) * cin * h * w];
        let g_img = &g[bi * cout * oh * ow..(bi + 1) * cout * oh * ow];
        for oc in 0..cout {
            let g_map = &g_img[oc * oh * ow..(oc + 1) * oh * ow];
            let w_oc = &wt[oc * cin * k * k..(oc + 1) * cin * k * k];
            let gw_oc = &mut gw[oc * cin * k * k..(oc + 1) * cin * k * k];
            for oy in 0..oh {
                for ox in 0..ow {
                    let go = g_map[oy * ow + ox];
                    if go == 0.0 {
                        continue;
                    }
                    gb[oc] += go;
                    for ic in 0..cin {
                        let x_map = &x_img[ic * h * w..(ic + 1) * h * w];
                        let gx_map = &mut gx_img[ic * h * w..(ic + 1) * h * w];
                        let w_map = &w_oc[ic * k * k..(ic + 1) * k * k];
                        let gw_map = &mut gw_oc[ic * k * k..(ic + 1) * k * k];
                        for ky in 0..k {
                            let row = (oy + ky) * w + ox;
                            for kx in 0..k {
                                gx_map[row + kx] += go * w_map[ky * k + kx];
                                gw_map[ky * k + kx] += go * x_map[row + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    (
        Tensor::new(input.shape().to_vec(), gx).expect("conv grad input shape"),
        Tensor::new(weight.shape().to_vec(), gw).expect("conv grad weight shape"),
        Tensor::new(vec![cout], gb).expect("conv grad bias shape"),
    )
}

/// Returns pooled output plus the flat input index chosen per output cell.
/// Ties resolve to the first (lowest-index) element scanned, keeping the
/// backward pass deterministic.
pub(crate) fn maxpool_forward(input: &Tensor, window: usize) -> (Tensor, Vec<usize>) {
    let (b, c, h, w) = dims4(input.shape());
    let (oh, ow) = (h / window, w / window);
    let x = input.data();
    let mut out = vec![0.0; b * c * oh * ow];
    let mut arg = vec![0usize; b * c * oh * ow];
    for bc in 0..b * c {
        let base = bc * h * w;
        let obase = bc * oh * ow;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best_idx = base + (oy * window) * w + ox * window;
                let mut best = x[best_idx];
                for ky in 0..window {
                    let row = base + (oy * window + ky) * w + ox * window;
                    for kx in 0..window {
                        let idx = row + kx;
                        if x[idx] > best {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                }
                out[obase + oy * ow + ox] = best;
                arg[obase + oy * ow + ox] = best_idx;
            }
        }
    }
    (
        Tensor::new(vec![b, c, oh, ow], out).expect("pool output shape"),
        arg,
    )
}

pub(crate) fn maxpool_backward(input_shape: &[usize], argmax: &[usize], gout: &Tensor) -> Tensor {
    let mut gx = vec![0.0; input_shape.iter().product()];
    for (g, &idx) in gout.data().iter().zip(argmax) {
        gx[idx] += *g;
    }
    Tensor::new(input_shape.to_vec(), gx).expect("pool grad shape")
}

pub(crate) fn relu_forward(input: &Tensor) -> Tensor {
    Tensor::new(
        input.shape().to_vec(),
        input.data().iter().map(|&x| x.max(0.0)).collect(),
    )
    .expect("relu shape")
}

/// Subgradient at zero is taken as zero.
pub(crate) fn relu_backward(pre_activation: &Tensor, gout: &Tensor) -> Tensor {
    Tensor::new(
        gout.shape().to_vec(),
        pre_activation
            .data()
            .iter()
            .zip(gout.data())
            .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
            .collect(),
    )
    .expect("relu grad shape")
}

pub(crate) fn dense_forward(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Tensor {
    let (b, d_in) = dims2(input.shape());
    let (d_out, _) = dims2(weight.shape());
    let x = input.data();
    let wt = weight.data();
    let bs = bias.data();
    let mut out = vec![0.0; b * d_out];
    for bi in 0..b {
        let row = &x[bi * d_in..(bi + 1) * d_in];
        let o_row = &mut out[bi * d_out..(bi + 1) * d_out];
        for (o, (w_row, &bias_o)) in o_row
            .iter_mut()
            .zip(wt.chunks_exact(d_in).zip(bs.iter()))
        {
            let mut acc = bias_o;
            for (xv, wv) in row.iter().zip(w_row) {
                acc += xv * wv;
            }
            *o = acc;
        }
    }
    Tensor::new(vec![b, d_out], out).expect("dense output shape")
}

pub(crate) fn dense_backward(
    input: &Tensor,
    weight: &Tensor,
    gout: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let (b, d_in) = dims2(input.shape());
    let (d_out, _) = dims2(weight.shape());
    let x = input.data();
    let wt = weight.data();
    let g = gout.data();
    let mut gx = vec![0.0; b * d_in];
    let mut gw = vec![0.0; d_out * d_in];
    let mut gb = vec![0.0; d_out];
    for bi in 0..b {
        let x_row = &x[bi * d_in..(bi + 1) * d_in];
        let g_row = &g[bi * d_out..(bi + 1) * d_out];
        let gx_row = &mut gx[bi * d_in..(bi + 1) * d_in];
        for o in 0..d_out {
            let go = g_row[o];
            if go == 0.0 {
                continue;
            }
            gb[o] += go;
            let w_row = &wt[o * d_in..(o + 1) * d_in];
            let gw_row = &mut gw[o * d_in..(o + 1) * d_in];
            for i in 0..d_in {
                gx_row[i] += go * w_row[i];
                gw_row[i] += go * x_row[i];
            }
        }
    }
    (
        Tensor::new(vec![b, d_in], gx).expect("dense grad input shape"),
        Tensor::new(vec![d_out, d_in], gw).expect("dense grad weight shape"),
        Tensor::new(vec![d_out], gb).expect("dense grad bias shape"),
    )
}

pub(crate) fn flatten_forward(input: &Tensor) -> Tensor {
    let shape = input.shape();
    let b = shape[0];
    let rest: usize = shape[1..].iter().product();
    input.reshape(vec![b, rest]).expect("flatten shape")
}

/// Row-wise softmax of a [batch, classes] logit matrix.
pub fn softmax_rows(logits: &Tensor) -> Result<Tensor> {
    let (b, k) = checked_dims2(logits)?;
    let x = logits.data();
    let mut out = vec![0.0; b * k];
    for bi in 0..b {
        let row = &x[bi * k..(bi + 1) * k];
        let o_row = &mut out[bi * k..(bi + 1) * k];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for (o, &v) in o_row.iter_mut().zip(row) {
            let e = (v - m).exp();
            *o = e;
            denom += e;
        }
        for o in o_row.iter_mut() {
            *o /= denom;
        }
    }
    Tensor::new(vec![b, k], out)
}

/// Mean cross-entropy over the batch with the gradient w.r.t. logits.
pub fn cross_entropy_loss_and_dlogits(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (b, k) = checked_dims2(logits)?;
    if labels.len() != b {
        return Err(Error::shape(format!(
            "{} labels for a batch of {b}",
            labels.len()
        )));
    }
    let x = logits.data();
    let mut dl = vec![0.0; b * k];
    let mut loss = 0.0;
    let inv_b = 1.0 / b as f64;
    for bi in 0..b {
        let label = labels[bi];
        if label >= k {
            return Err(Error::domain(format!(
                "label {label} out of range for {k} classes"
            )));
        }
        let row = &x[bi * k..(bi + 1) * k];
        let d_row = &mut dl[bi * k..(bi + 1) * k];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for (d, &v) in d_row.iter_mut().zip(row) {
            let e = (v - m).exp();
            *d = e;
            denom += e;
        }
        let lse = m + denom.ln();
        loss += lse - row[label];
        for d in d_row.iter_mut() {
            *d *= inv_b / denom;
        }
        d_row[label] -= inv_b;
    }
    Ok((loss * inv_b, Tensor::new(vec![b, k], dl)?))
}

/// Mean cross-entropy without gradients.
pub fn cross_entropy_loss(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let (b, k) = checked_dims2(logits)?;
    if labels.len() != b {
        return Err(Error::shape(format!(
            "{} labels for a batch of {b}",
            labels.len()
        )));
    }
    let x = logits.data();
    let mut loss = 0.0;
    for bi in 0..b {
        let label = labels[bi];
        if label >= k {
            return Err(Error::domain(format!(
                "label {label} out of range for {k} classes"
            )));
        }
        let row = &x[bi * k..(bi + 1) * k];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = row.iter().map(|&v| (v - m).exp()).sum();
        loss += m + denom.ln() - row[label];
    }
    Ok(loss / b as f64)
}

fn dims4(shape: &[usize]) -> (usize, usize, usize, usize) {
    debug_assert_eq!(shape.len(), 4);
    (shape[0], shape[1], shape[2], shape[3])
}

fn dims2(shape: &[usize]) -> (usize, usize) {
    debug_assert_eq!(shape.len(), 2);
    (shape[0], shape[1])
}

fn checked_dims2(t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [b, k] if *b > 0 && *k > 0 => Ok((*b, *k)),
        other => Err(Error::shape(format!(
            "expected a non-empty [batch, classes] matrix, got {other:?}"
        ))),
    }
}
