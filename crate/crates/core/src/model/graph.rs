//! Reverse-mode autodiff over a flat tape. Ops compute eagerly on creation;
//! `backward` walks the tape in reverse and scatters adjoints. The op set is
//! exactly what the U-shaped networks and the tint regressor need.

use crate::error::{Error, Result};
use crate::scalar::Real;

use super::tensor::Tensor;

pub type NodeId = usize;

enum Payload<T> {
    Leaf,
    Conv3x3 { x: NodeId, w: NodeId, b: NodeId },
    LeakyRelu { x: NodeId, slope: T },
    BlurPool { x: NodeId },
    Upsample2x { x: NodeId },
    ConcatC { a: NodeId, b: NodeId },
    Sigmoid { x: NodeId },
    Softplus { x: NodeId },
    GlobalAvg { x: NodeId },
    Linear { x: NodeId, w: NodeId, b: NodeId },
    Exp { x: NodeId },
    Reshape { x: NodeId },
    MaskedL1 { pred: NodeId, target: Tensor<T>, alpha: Tensor<T> },
}

struct Node<T> {
    value: Tensor<T>,
    payload: Payload<T>,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Adjoints per node after a backward pass.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn of(&self, id: NodeId) -> Option<&[T]> {
        self.grads.get(id).and_then(|g| g.as_deref())
    }
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id].value
    }

    fn push(&mut self, value: Tensor<T>, payload: Payload<T>) -> NodeId {
        self.nodes.push(Node { value, payload });
        self.nodes.len() - 1
    }

    /// Register a leaf (network input or parameter).
    pub fn leaf(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Payload::Leaf)
    }

    /// 3×3 convolution, stride 1, zero padding. w: (Cout, Cin, 3, 3).
    pub fn conv3x3(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (ci, h, wd) = self.value(x).chw()?;
        let ws = self.value(w).shape().to_vec();
        let bs = self.value(b).shape().to_vec();
        let [co, wci, 3, 3] = ws[..] else {
            return Err(Error::dims(format!("conv weight shape {:?}", ws)));
        };
        if wci != ci || bs != [co] {
            return Err(Error::dims(format!(
                "conv expects ({} in, {:?} bias) on {} input channels",
                wci, bs, ci
            )));
        }
        let mut out = vec![T::zero(); co * h * wd];
        {
            let xin = self.value(x).data();
            let wt = self.value(w).data();
            let bias = self.value(b).data();
            for oc in 0..co {
                let oplane = &mut out[oc * h * wd..(oc + 1) * h * wd];
                oplane.fill(bias[oc]);
                for ic in 0..ci {
                    let iplane = &xin[ic * h * wd..(ic + 1) * h * wd];
                    let wbase = (oc * ci + ic) * 9;
                    for ky in 0..3usize {
                        let dy = ky as isize - 1;
                        for kx in 0..3usize {
                            let dx = kx as isize - 1;
                            let wv = wt[wbase + ky * 3 + kx];
                            if wv == T::zero() {
                                continue;
                            }
                            let y0 = (-dy).max(0) as usize;
                            let y1 = (h as isize - dy.max(0)) as usize;
                            let x0 = (-dx).max(0) as usize;
                            let x1 = (wd as isize - dx.max(0)) as usize;
                            for y in y0..y1 {
                                let iy = (y as isize + dy) as usize;
                                let orow = &mut oplane[y * wd + x0..y * wd + x1];
                                let irow = &iplane[iy * wd + (x0 as isize + dx) as usize
                                    ..iy * wd + (x1 as isize + dx) as usize];
                                for (o, i) in orow.iter_mut().zip(irow) {
                                    *o += wv * *i;
                                }
                            }
                        }
                    }
                }
            }
        }
        let value = Tensor::new(vec![co, h, wd], out)?;
        Ok(self.push(value, Payload::Conv3x3 { x, w, b }))
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: T) -> NodeId {
        let data = self
            .value(x)
            .data()
            .iter()
            .map(|v| if *v > T::zero() { *v } else { *v * slope })
            .collect();
        let value = Tensor::new(self.value(x).shape().to_vec(), data).expect("same shape");
        self.push(value, Payload::LeakyRelu { x, slope })
    }

    /// Fixed binomial 3×3 low-pass with wrap padding, then 2× stride.
    /// Wrap keeps the kernel's column sums equal everywhere, so a constant
    /// input back-propagates an exactly uniform gradient.
    pub fn blur_pool(&mut self, x: NodeId) -> Result<NodeId> {
        let (c, h, w) = self.value(x).chw()?;
        if h % 2 != 0 || w % 2 != 0 || h < 2 || w < 2 {
            return Err(Error::dims(format!("blur-pool needs even dims, got {}x{}", h, w)));
        }
        let (oh, ow) = (h / 2, w / 2);
        let k = [T::of(0.25), T::half(), T::of(0.25)];
        let mut out = vec![T::zero(); c * oh * ow];
        let xin = self.value(x).data();
        for ch in 0..c {
            let iplane = &xin[ch * h * w..(ch + 1) * h * w];
            let oplane = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = T::zero();
                    for (dy, kyv) in k.iter().enumerate() {
                        let iy = (2 * oy + dy + h - 1) % h;
                        for (dx, kxv) in k.iter().enumerate() {
                            let ix = (2 * ox + dx + w - 1) % w;
                            acc += *kyv * *kxv * iplane[iy * w + ix];
                        }
                    }
                    oplane[oy * ow + ox] = acc;
                }
            }
        }
        let value = Tensor::new(vec![c, oh, ow], out)?;
        Ok(self.push(value, Payload::BlurPool { x }))
    }

    /// 2× bilinear upsampling: even outputs copy inputs, odd outputs are
    /// midpoints (clamped at the far edge).
    pub fn upsample2x(&mut self, x: NodeId) -> Result<NodeId> {
        let (c, h, w) = self.value(x).chw()?;
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = vec![T::zero(); c * oh * ow];
        let xin = self.value(x).data();
        for ch in 0..c {
            let ip = &xin[ch * h * w..(ch + 1) * h * w];
            let op = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
            for oy in 0..oh {
                let y0 = oy / 2;
                let y1 = if oy % 2 == 0 { y0 } else { (y0 + 1).min(h - 1) };
                for ox in 0..ow {
                    let x0 = ox / 2;
                    let x1 = if ox % 2 == 0 { x0 } else { (x0 + 1).min(w - 1) };
                    let v = (ip[y0 * w + x0] + ip[y0 * w + x1] + ip[y1 * w + x0] + ip[y1 * w + x1])
                        * T::of(0.25);
                    op[oy * ow + ox] = v;
                }
            }
        }
        let value = Tensor::new(vec![c, oh, ow], out)?;
        Ok(self.push(value, Payload::Upsample2x { x }))
    }

    pub fn concat_c(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ca, ha, wa) = self.value(a).chw()?;
        let (cb, hb, wb) = self.value(b).chw()?;
        if (ha, wa) != (hb, wb) {
            return Err(Error::dims("concat inputs differ in spatial size"));
        }
        let mut data = Vec::with_capacity((ca + cb) * ha * wa);
        data.extend_from_slice(self.value(a).data());
        data.extend_from_slice(self.value(b).data());
        let value = Tensor::new(vec![ca + cb, ha, wa], data)?;
        Ok(self.push(value, Payload::ConcatC { a, b }))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let data = self
            .value(x)
            .data()
            .iter()
            .map(|v| {
                if *v >= T::zero() {
                    T::one() / (T::one() + (-*v).exp())
                } else {
                    let e = v.exp();
                    e / (T::one() + e)
                }
            })
            .collect();
        let value = Tensor::new(self.value(x).shape().to_vec(), data).expect("same shape");
        self.push(value, Payload::Sigmoid { x })
    }

    pub fn softplus(&mut self, x: NodeId) -> NodeId {
        let lim = T::of(20.0);
        let data = self
            .value(x)
            .data()
            .iter()
            .map(|v| {
                if *v > lim {
                    *v
                } else if *v < -lim {
                    v.exp()
                } else {
                    (T::one() + v.exp()).ln()
                }
            })
            .collect();
        let value = Tensor::new(self.value(x).shape().to_vec(), data).expect("same shape");
        self.push(value, Payload::Softplus { x })
    }

    /// Spatial mean per channel: (C, H, W) → (C).
    pub fn global_avg(&mut self, x: NodeId) -> Result<NodeId> {
        let (c, h, w) = self.value(x).chw()?;
        let inv = T::one() / T::of_usize(h * w);
        let xin = self.value(x).data();
        let data = (0..c)
            .map(|ch| xin[ch * h * w..(ch + 1) * h * w].iter().copied().sum::<T>() * inv)
            .collect();
        let value = Tensor::new(vec![c], data)?;
        Ok(self.push(value, Payload::GlobalAvg { x }))
    }

    /// Fully connected layer on a rank-1 input. w: (Cout, Cin).
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        let [ci] = xs[..] else {
            return Err(Error::dims(format!("linear input shape {:?}", xs)));
        };
        let [co, wci] = ws[..] else {
            return Err(Error::dims(format!("linear weight shape {:?}", ws)));
        };
        if wci != ci || self.value(b).shape() != [co] {
            return Err(Error::dims("linear weight/bias shapes inconsistent"));
        }
        let xin = self.value(x).data();
        let wt = self.value(w).data();
        let bias = self.value(b).data();
        let data = (0..co)
            .map(|o| {
                bias[o]
                    + wt[o * ci..(o + 1) * ci]
                        .iter()
                        .zip(xin)
                        .map(|(a, b)| *a * *b)
                        .sum::<T>()
            })
            .collect();
        let value = Tensor::new(vec![co], data)?;
        Ok(self.push(value, Payload::Linear { x, w, b }))
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        let data = self.value(x).data().iter().map(|v| v.exp()).collect();
        let value = Tensor::new(self.value(x).shape().to_vec(), data).expect("same shape");
        self.push(value, Payload::Exp { x })
    }

    /// Same elements under a new shape (e.g. rank-1 (C) → (C,1,1) so a
    /// vector output can feed the image loss).
    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let value = self.value(x).reshape(shape)?;
        Ok(self.push(value, Payload::Reshape { x }))
    }

    /// Alpha-weighted mean absolute error, averaged over channels:
    /// (1/C)·Σ_c Σ_px α·|pred−target| / Σ_px α. Scalar output.
    pub fn masked_l1(
        &mut self,
        pred: NodeId,
        target: &Tensor<T>,
        alpha: &Tensor<T>,
    ) -> Result<NodeId> {
        let (c, h, w) = self.value(pred).chw()?;
        if target.shape() != [c, h, w] {
            return Err(Error::dims("loss target shape mismatch"));
        }
        if alpha.shape() != [1, h, w] {
            return Err(Error::dims("loss alpha must be (1, H, W)"));
        }
        let asum: T = alpha.data().iter().copied().sum();
        if asum <= T::zero() {
            return Err(Error::invalid("loss undefined: alpha sums to zero"));
        }
        let p = self.value(pred).data();
        let t = target.data();
        let a = alpha.data();
        let mut total = T::zero();
        for ch in 0..c {
            let mut acc = T::zero();
            for i in 0..h * w {
                acc += a[i] * (p[ch * h * w + i] - t[ch * h * w + i]).abs();
            }
            total += acc / asum;
        }
        let value = Tensor::new(vec![1], vec![total / T::of_usize(c)])?;
        Ok(self.push(
            value,
            Payload::MaskedL1 { pred, target: target.clone(), alpha: alpha.clone() },
        ))
    }

    /// Reverse pass from a scalar node. Returns per-node adjoints.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        if self.nodes[loss].value.numel() != 1 {
            return Err(Error::invalid("backward starts from a scalar node"));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss] = Some(vec![T::one()]);

        for id in (0..=loss).rev() {
            let Some(gout) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.payload {
                Payload::Leaf => {
                    grads[id] = Some(gout);
                    continue;
                }
                Payload::Conv3x3 { x, w, b } => {
                    let (ci, h, wd) = self.value(*x).chw().expect("checked at build");
                    let co = self.value(*w).shape()[0];
                    let xin = self.value(*x).data();
                    let wt = self.value(*w).data();
                    let gx = ensure(&mut grads, *x, ci * h * wd);
                    for oc in 0..co {
                        let gplane = &gout[oc * h * wd..(oc + 1) * h * wd];
                        for ic in 0..ci {
                            let gxplane = &mut gx[ic * h * wd..(ic + 1) * h * wd];
                            let wbase = (oc * ci + ic) * 9;
                            for ky in 0..3usize {
                                let dy = ky as isize - 1;
                                for kx in 0..3usize {
                                    let dx = kx as isize - 1;
                                    let wv = wt[wbase + ky * 3 + kx];
                                    if wv == T::zero() {
                                        continue;
                                    }
                                    let y0 = (-dy).max(0) as usize;
                                    let y1 = (h as isize - dy.max(0)) as usize;
                                    let x0 = (-dx).max(0) as usize;
                                    let x1 = (wd as isize - dx.max(0)) as usize;
                                    for y in y0..y1 {
                                        let iy = (y as isize + dy) as usize;
                                        let grow = &gplane[y * wd + x0..y * wd + x1];
                                        let xrow = &mut gxplane[iy * wd
                                            + (x0 as isize + dx) as usize
                                            ..iy * wd + (x1 as isize + dx) as usize];
                                        for (xg, g) in xrow.iter_mut().zip(grow) {
                                            *xg += wv * *g;
                                        }
                                    }
                                }
                            }
                        }
                    }
                    let gw = ensure(&mut grads, *w, co * ci * 9);
                    for oc in 0..co {
                        let gplane = &gout[oc * h * wd..(oc + 1) * h * wd];
                        for ic in 0..ci {
                            let iplane = &xin[ic * h * wd..(ic + 1) * h * wd];
                            let wbase = (oc * ci + ic) * 9;
                            for ky in 0..3usize {
                                let dy = ky as isize - 1;
                                for kx in 0..3usize {
                                    let dx = kx as isize - 1;
                                    let y0 = (-dy).max(0) as usize;
                                    let y1 = (h as isize - dy.max(0)) as usize;
                                    let x0 = (-dx).max(0) as usize;
                                    let x1 = (wd as isize - dx.max(0)) as usize;
                                    let mut acc = T::zero();
                                    for y in y0..y1 {
                                        let iy = (y as isize + dy) as usize;
                                        let grow = &gplane[y * wd + x0..y * wd + x1];
                                        let xrow = &iplane[iy * wd + (x0 as isize + dx) as usize
                                            ..iy * wd + (x1 as isize + dx) as usize];
                                        for (g, xv) in grow.iter().zip(xrow) {
                                            acc += *g * *xv;
                                        }
                                    }
                                    gw[wbase + ky * 3 + kx] += acc;
                                }
                            }
                        }
                    }
                    let gb = ensure(&mut grads, *b, co);
                    for oc in 0..co {
                        gb[oc] += gout[oc * h * wd..(oc + 1) * h * wd].iter().copied().sum();
                    }
                }
                Payload::LeakyRelu { x, slope } => {
                    let xin = self.value(*x).data();
                    let gx = ensure(&mut grads, *x, xin.len());
                    for i in 0..xin.len() {
                        gx[i] += if xin[i] > T::zero() { gout[i] } else { gout[i] * *slope };
                    }
                }
                Payload::BlurPool { x } => {
                    let (c, h, w) = self.value(*x).chw().expect("checked at build");
                    let (oh, ow) = (h / 2, w / 2);
                    let k = [T::of(0.25), T::half(), T::of(0.25)];
                    let gx = ensure(&mut grads, *x, c * h * w);
                    for ch in 0..c {
                        let gp = &gout[ch * oh * ow..(ch + 1) * oh * ow];
                        let gxp = &mut gx[ch * h * w..(ch + 1) * h * w];
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let g = gp[oy * ow + ox];
                                for (dy, kyv) in k.iter().enumerate() {
                                    let iy = (2 * oy + dy + h - 1) % h;
                                    for (dx, kxv) in k.iter().enumerate() {
                                        let ix = (2 * ox + dx + w - 1) % w;
                                        gxp[iy * w + ix] += *kyv * *kxv * g;
                                    }
                                }
                            }
                        }
                    }
                }
                Payload::Upsample2x { x } => {
                    let (c, h, w) = self.value(*x).chw().expect("checked at build");
                    let (oh, ow) = (2 * h, 2 * w);
                    let gx = ensure(&mut grads, *x, c * h * w);
                    for ch in 0..c {
                        let gp = &gout[ch * oh * ow..(ch + 1) * oh * ow];
                        let gxp = &mut gx[ch * h * w..(ch + 1) * h * w];
                        for oy in 0..oh {
                            let y0 = oy / 2;
                            let y1 = if oy % 2 == 0 { y0 } else { (y0 + 1).min(h - 1) };
                            for ox in 0..ow {
                                let x0 = ox / 2;
                                let x1 = if ox % 2 == 0 { x0 } else { (x0 + 1).min(w - 1) };
                                let q = gp[oy * ow + ox] * T::of(0.25);
                                gxp[y0 * w + x0] += q;
                                gxp[y0 * w + x1] += q;
                                gxp[y1 * w + x0] += q;
                                gxp[y1 * w + x1] += q;
                            }
                        }
                    }
                }
                Payload::ConcatC { a, b } => {
                    let na = self.value(*a).numel();
                    let nb = self.value(*b).numel();
                    let ga = ensure(&mut grads, *a, na);
                    for i in 0..na {
                        ga[i] += gout[i];
                    }
                    let gb = ensure(&mut grads, *b, nb);
                    for i in 0..nb {
                        gb[i] += gout[na + i];
                    }
                }
                Payload::Sigmoid { x } => {
                    let s = node.value.data();
                    let gx = ensure(&mut grads, *x, s.len());
                    for i in 0..s.len() {
                        gx[i] += gout[i] * s[i] * (T::one() - s[i]);
                    }
                }
                Payload::Softplus { x } => {
                    let xin = self.value(*x).data();
                    let gx = ensure(&mut grads, *x, xin.len());
                    for i in 0..xin.len() {
                        let v = xin[i];
                        let sig = if v >= T::zero() {
                            T::one() / (T::one() + (-v).exp())
                        } else {
                            let e = v.exp();
                            e / (T::one() + e)
                        };
                        gx[i] += gout[i] * sig;
                    }
                }
                Payload::GlobalAvg { x } => {
                    let (c, h, w) = self.value(*x).chw().expect("checked at build");
                    let inv = T::one() / T::of_usize(h * w);
                    let gx = ensure(&mut grads, *x, c * h * w);
                    for ch in 0..c {
                        let g = gout[ch] * inv;
                        for v in &mut gx[ch * h * w..(ch + 1) * h * w] {
                            *v += g;
                        }
                    }
                }
                Payload::Linear { x, w, b } => {
                    let ci = self.value(*x).numel();
                    let co = self.value(*b).numel();
                    let xin = self.value(*x).data();
                    let wt = self.value(*w).data();
                    let gx = ensure(&mut grads, *x, ci);
                    for o in 0..co {
                        for i in 0..ci {
                            gx[i] += wt[o * ci + i] * gout[o];
                        }
                    }
                    let gw = ensure(&mut grads, *w, co * ci);
                    for o in 0..co {
                        for i in 0..ci {
                            gw[o * ci + i] += xin[i] * gout[o];
                        }
                    }
                    let gb = ensure(&mut grads, *b, co);
                    for o in 0..co {
                        gb[o] += gout[o];
                    }
                }
                Payload::Exp { x } => {
                    let y = node.value.data();
                    let gx = ensure(&mut grads, *x, y.len());
                    for i in 0..y.len() {
                        gx[i] += gout[i] * y[i];
                    }
                }
                Payload::Reshape { x } => {
                    let gx = ensure(&mut grads, *x, gout.len());
                    for i in 0..gout.len() {
                        gx[i] += gout[i];
                    }
                }
                Payload::MaskedL1 { pred, target, alpha } => {
                    let (c, h, w) = self.value(*pred).chw().expect("checked at build");
                    let asum: T = alpha.data().iter().copied().sum();
                    let scale = gout[0] / (asum * T::of_usize(c));
                    let p = self.value(*pred).data();
                    let t = target.data();
                    let a = alpha.data();
                    let gp = ensure(&mut grads, *pred, c * h * w);
                    for ch in 0..c {
                        for i in 0..h * w {
                            let diff = p[ch * h * w + i] - t[ch * h * w + i];
                            let sign = if diff > T::zero() {
                                T::one()
                            } else if diff < T::zero() {
                                -T::one()
                            } else {
                                T::zero()
                            };
                            gp[ch * h * w + i] += scale * a[i] * sign;
                        }
                    }
                }
            }
            // Intermediate adjoints could be dropped here; kept for tests.
            grads[id] = Some(gout);
        }
        for g in grads.iter().flatten() {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("gradient".into()));
            }
        }
        Ok(Gradients { grads })
    }
}

fn ensure<T: Real>(grads: &mut [Option<Vec<T>>], id: NodeId, len: usize) -> &mut Vec<T> {
    let slot = &mut grads[id];
    if slot.is_none() {
        *slot = Some(vec![T::zero(); len]);
    }
    slot.as_mut().expect("just filled")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_identity_kernel_copies_input() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::new(vec![1, 3, 3], (1..=9).map(|v| v as f64).collect()).unwrap());
        let mut wdata = vec![0.0; 9];
        wdata[4] = 1.0; // centre tap
        let w = g.leaf(Tensor::new(vec![1, 1, 3, 3], wdata).unwrap());
        let b = g.leaf(Tensor::zeros(vec![1]));
        let y = g.conv3x3(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), g.value(x).data());
    }

    #[test]
    fn conv_sums_with_zero_padding() {
        // All-ones 3×3 kernel on an all-ones image: interior 9, edge 6,
        // corner 4.
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::full(vec![1, 3, 3], 1.0));
        let w = g.leaf(Tensor::full(vec![1, 1, 3, 3], 1.0));
        let b = g.leaf(Tensor::zeros(vec![1]));
        let y = g.conv3x3(x, w, b).unwrap();
        assert_eq!(
            g.value(y).data(),
            &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]
        );
    }

    #[test]
    fn blur_pool_halves_and_preserves_constants() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::full(vec![2, 4, 6], 0.7));
        let y = g.blur_pool(x).unwrap();
        assert_eq!(g.value(y).shape(), &[2, 2, 3]);
        for v in g.value(y).data() {
            assert!((v - 0.7).abs() < 1e-15);
        }
        let odd = g.leaf(Tensor::full(vec![1, 3, 4], 0.0));
        assert!(g.blur_pool(odd).is_err());
    }

    #[test]
    fn blur_pool_constant_gradient_is_uniform() {
        // Wrap padding makes every input pixel contribute equal total
        // weight, so d(sum)/d(input) is exactly 1/4 everywhere.
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::full(vec![1, 8, 8], 0.3));
        let y = g.blur_pool(x).unwrap();
        let target = Tensor::zeros(vec![1, 4, 4]);
        let alpha = Tensor::full(vec![1, 4, 4], 1.0);
        // Positive prediction, zero target: the L1 is a weighted sum, so
        // its gradient through blur-pool exposes the kernel's column sums.
        let loss = g.masked_l1(y, &target, &alpha).unwrap();
        let grads = g.backward(loss).unwrap();
        let gx = grads.of(x).unwrap();
        let expect = gx[0];
        for v in gx {
            assert!((v - expect).abs() < 1e-15, "{} vs {}", v, expect);
        }
        // 16 outputs each with weight 1/16 of the alpha sum; each input
        // feeds total kernel mass 1/4.
        assert!((expect - 0.25 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn upsample_even_outputs_copy_inputs() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = g.upsample2x(x).unwrap();
        let d = g.value(y).data();
        assert_eq!(g.value(y).shape(), &[1, 4, 4]);
        assert_eq!(d[0], 1.0);
        assert_eq!(d[2], 2.0);
        assert_eq!(d[1], 1.5); // midpoint
        assert_eq!(d[3], 2.0); // clamped edge
        assert_eq!(d[4], 2.0); // vertical midpoint
        assert_eq!(d[5], 2.5); // centre of four
    }

    #[test]
    fn masked_l1_matches_hand_computation() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::new(vec![2, 1, 2], vec![0.5, 0.5, 1.0, 1.0]).unwrap());
        let target = Tensor::new(vec![2, 1, 2], vec![0.4, 0.4, 0.7, 0.9]).unwrap();
        let alpha = Tensor::new(vec![1, 1, 2], vec![1.0, 0.0]).unwrap();
        let loss = g.masked_l1(x, &target, &alpha).unwrap();
        // Channel 0: |0.5-0.4| = 0.1; channel 1: |1.0-0.7| = 0.3; the
        // second pixel is masked out. Mean over channels: 0.2.
        assert!((g.value(loss).data()[0] - 0.2).abs() < 1e-15);

        let zeros = Tensor::zeros(vec![1, 1, 2]);
        assert!(g.masked_l1(x, &target, &zeros).is_err());
    }

    #[test]
    fn heads_hit_documented_zero_points() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::zeros(vec![1, 2, 2]));
        let s = g.sigmoid(x);
        for v in g.value(s).data() {
            assert_eq!(*v, 0.5);
        }
        let p = g.softplus(x);
        for v in g.value(p).data() {
            assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
        }
        let big = g.leaf(Tensor::full(vec![1, 1, 1], 400.0));
        let sp = g.softplus(big);
        assert_eq!(g.value(sp).data()[0], 400.0); // no overflow
    }

    #[test]
    fn linear_and_global_avg() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::new(vec![2, 1, 2], vec![1.0, 3.0, 5.0, 7.0]).unwrap());
        let avg = g.global_avg(x).unwrap();
        assert_eq!(g.value(avg).data(), &[2.0, 6.0]);
        let w = g.leaf(Tensor::new(vec![1, 2], vec![0.5, 0.25]).unwrap());
        let b = g.leaf(Tensor::new(vec![1], vec![0.1]).unwrap());
        let y = g.linear(avg, w, b).unwrap();
        assert!((g.value(y).data()[0] - (0.1 + 1.0 + 1.5)).abs() < 1e-15);
    }
}
