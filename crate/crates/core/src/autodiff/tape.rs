//! Computation tape: forward ops record nodes, backward replays them in
//! reverse creation order.

use super::real::{c, Real};
use super::AutodiffError;

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

/// Spatial padding mode for [`Tape::conv2d`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Zero-padded borders, output keeps the input's height and width.
    /// Requires odd kernel dims.
    Same,
    /// No padding; output shrinks by `k - 1` per axis.
    Valid,
}

enum Op<T: Real> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        padding: Padding,
    },
    ConvTranspose2 {
        input: Var,
        weight: Var,
        bias: Var,
    },
    MaxPool2 {
        input: Var,
        /// Absolute input offset of each window's first maximal element.
        argmax: Vec<u32>,
    },
    Relu {
        input: Var,
    },
    Sigmoid {
        input: Var,
    },
    ConcatChannels {
        a: Var,
        b: Var,
    },
    BceWithLogits {
        logits: Var,
        targets: Vec<T>,
        valid: Vec<bool>,
        pos_weight: T,
        valid_count: usize,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Sum {
        input: Var,
    },
}

struct Node<T: Real> {
    shape: Vec<usize>,
    data: Vec<T>,
    grad: Vec<T>,
    op: Op<T>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Reverse-mode computation graph in one fixed precision.
///
/// Forward passes are pure: identical inputs and parameters produce
/// bit-identical outputs. [`Tape::backward`] accumulates gradients
/// additively; calling it twice doubles every gradient.
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<T>, op: Op<T>) -> Var {
        debug_assert_eq!(numel(&shape), data.len());
        let grad = vec![T::zero(); data.len()];
        self.nodes.push(Node {
            shape,
            data,
            grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Inserts an input or parameter node.
    pub fn leaf(&mut self, shape: &[usize], data: Vec<T>) -> Var {
        assert_eq!(
            numel(shape),
            data.len(),
            "leaf data length must match its shape"
        );
        self.push(shape.to_vec(), data, Op::Leaf)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn data(&self, v: Var) -> &[T] {
        &self.nodes[v.0].data
    }

    pub fn grad(&self, v: Var) -> &[T] {
        &self.nodes[v.0].grad
    }

    fn shape4(&self, v: Var, what: &str) -> Result<[usize; 4], AutodiffError> {
        let s = &self.nodes[v.0].shape;
        if s.len() != 4 {
            return Err(AutodiffError::ShapeMismatch(format!(
                "{what} must be 4-D NCHW, got {s:?}"
            )));
        }
        Ok([s[0], s[1], s[2], s[3]])
    }

    /// Stride-1 cross-correlation (no kernel flip) of an NCHW input with an
    /// `[out_ch, in_ch, kh, kw]` weight plus an `[out_ch]` bias.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        padding: Padding,
    ) -> Result<Var, AutodiffError> {
        if input == weight || input == bias || weight == bias {
            return Err(AutodiffError::ShapeMismatch(
                "conv2d operands must be distinct nodes".into(),
            ));
        }
        let [n, cin, h, w] = self.shape4(input, "conv2d input")?;
        let [cout, wcin, kh, kw] = self.shape4(weight, "conv2d weight")?;
        if wcin != cin {
            return Err(AutodiffError::ShapeMismatch(format!(
                "conv2d: input has {cin} channels, weight expects {wcin}"
            )));
        }
        if self.nodes[bias.0].shape != [cout] {
            return Err(AutodiffError::ShapeMismatch(format!(
                "conv2d: bias shape {:?} != [{cout}]",
                self.nodes[bias.0].shape
            )));
        }
        let (ph, pw) = match padding {
            Padding::Same => {
                if kh % 2 == 0 || kw % 2 == 0 {
                    return Err(AutodiffError::ShapeMismatch(format!(
                        "same-padding needs odd kernel dims, got {kh}x{kw}"
                    )));
                }
                (kh / 2, kw / 2)
            }
            Padding::Valid => (0, 0),
        };
        if h + 2 * ph < kh || w + 2 * pw < kw {
            return Err(AutodiffError::ShapeMismatch(format!(
                "conv2d: {kh}x{kw} kernel does not fit {h}x{w} input"
            )));
        }
        let oh = h + 2 * ph - kh + 1;
        let ow = w + 2 * pw - kw + 1;
        let mut out = vec![T::zero(); n * cout * oh * ow];
        conv2d_forward(
            &self.nodes[input.0].data,
            &self.nodes[weight.0].data,
            &self.nodes[bias.0].data,
            &mut out,
            [n, cin, h, w],
            [cout, kh, kw],
            (ph, pw),
        );
        Ok(self.push(
            vec![n, cout, oh, ow],
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                padding,
            },
        ))
    }

    /// Stride-2 transposed convolution with a 2×2 kernel: every input element
    /// scatters `kernel * value` into its own 2×2 output block, so the output
    /// doubles both spatial dims. Weight layout is `[in_ch, out_ch, 2, 2]`.
    pub fn conv_transpose2(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
    ) -> Result<Var, AutodiffError> {
        if input == weight || input == bias || weight == bias {
            return Err(AutodiffError::ShapeMismatch(
                "conv_transpose2 operands must be distinct nodes".into(),
            ));
        }
        let [n, cin, h, w] = self.shape4(input, "conv_transpose2 input")?;
        let [wcin, cout, kh, kw] = self.shape4(weight, "conv_transpose2 weight")?;
        if wcin != cin || kh != 2 || kw != 2 {
            return Err(AutodiffError::ShapeMismatch(format!(
                "conv_transpose2: weight must be [{cin}, out, 2, 2], got {:?}",
                self.nodes[weight.0].shape
            )));
        }
        if self.nodes[bias.0].shape != [cout] {
            return Err(AutodiffError::ShapeMismatch(format!(
                "conv_transpose2: bias shape {:?} != [{cout}]",
                self.nodes[bias.0].shape
            )));
        }
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = vec![T::zero(); n * cout * oh * ow];
        convt2_forward(
            &self.nodes[input.0].data,
            &self.nodes[weight.0].data,
            &self.nodes[bias.0].data,
            &mut out,
            [n, cin, h, w],
            cout,
        );
        Ok(self.push(
            vec![n, cout, oh, ow],
            out,
            Op::ConvTranspose2 {
                input,
                weight,
                bias,
            },
        ))
    }

    /// 2×2 max pooling with stride 2. Gradient routes to the first maximal
    /// element of each window in row-major order.
    pub fn maxpool2(&mut self, input: Var) -> Result<Var, AutodiffError> {
        let [n, ch, h, w] = self.shape4(input, "maxpool2 input")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(AutodiffError::OddSpatialDims { h, w });
        }
        let (oh, ow) = (h / 2, w / 2);
        let x = &self.nodes[input.0].data;
        let mut out = Vec::with_capacity(n * ch * oh * ow);
        let mut argmax = Vec::with_capacity(n * ch * oh * ow);
        for plane in 0..n * ch {
            let base = plane * h * w;
            for orow in 0..oh {
                for ocol in 0..ow {
                    let i00 = base + (2 * orow) * w + 2 * ocol;
                    // Row-major window order; strictly-greater keeps the
                    // first of tied maxima.
                    let mut best_idx = i00;
                    let mut best = x[i00];
                    for (dr, dc) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * orow + dr) * w + 2 * ocol + dc;
                        if x[idx] > best {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                    out.push(best);
                    argmax.push(best_idx as u32);
                }
            }
        }
        Ok(self.push(
            vec![n, ch, oh, ow],
            out,
            Op::MaxPool2 { input, argmax },
        ))
    }

    /// Elementwise max(x, 0). The subgradient at exactly 0 is 0.
    pub fn relu(&mut self, input: Var) -> Var {
        let data: Vec<T> = self.nodes[input.0]
            .data
            .iter()
            .map(|&x| if x > T::zero() { x } else { T::zero() })
            .collect();
        let shape = self.nodes[input.0].shape.clone();
        self.push(shape, data, Op::Relu { input })
    }

    /// Elementwise logistic function, computed with the sign-split form so
    /// large negative inputs neither overflow nor produce NaN.
    pub fn sigmoid(&mut self, input: Var) -> Var {
        let data: Vec<T> = self.nodes[input.0]
            .data
            .iter()
            .map(|&x| stable_sigmoid(x))
            .collect();
        let shape = self.nodes[input.0].shape.clone();
        self.push(shape, data, Op::Sigmoid { input })
    }

    /// Stacks `[a; b]` along the channel axis.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let [na, ca, ha, wa] = self.shape4(a, "concat lhs")?;
        let [nb, cb, hb, wb] = self.shape4(b, "concat rhs")?;
        if na != nb || ha != hb || wa != wb {
            return Err(AutodiffError::ShapeMismatch(format!(
                "concat_channels: {:?} vs {:?}",
                self.nodes[a.0].shape, self.nodes[b.0].shape
            )));
        }
        let plane = ha * wa;
        let mut out = Vec::with_capacity(na * (ca + cb) * plane);
        for img in 0..na {
            let a_base = img * ca * plane;
            let b_base = img * cb * plane;
            out.extend_from_slice(&self.nodes[a.0].data[a_base..a_base + ca * plane]);
            out.extend_from_slice(&self.nodes[b.0].data[b_base..b_base + cb * plane]);
        }
        Ok(self.push(vec![na, ca + cb, ha, wa], out, Op::ConcatChannels { a, b }))
    }

    /// Mean over valid pixels of the weighted binary cross-entropy
    /// `w * [-t*log σ(x) - (1-t)*log(1-σ(x))]` with `w = pos_weight` where
    /// `t = 1` and `w = 1` elsewhere, in the log-sum-exp stable form.
    pub fn bce_with_logits(
        &mut self,
        logits: Var,
        targets: &[T],
        valid: &[bool],
        pos_weight: T,
    ) -> Result<Var, AutodiffError> {
        let n = self.nodes[logits.0].data.len();
        if targets.len() != n || valid.len() != n {
            return Err(AutodiffError::ShapeMismatch(format!(
                "bce_with_logits: {n} logits vs {} targets, {} valid flags",
                targets.len(),
                valid.len()
            )));
        }
        let valid_count = valid.iter().filter(|&&v| v).count();
        if valid_count == 0 {
            return Err(AutodiffError::NoValidPixels);
        }
        let x = &self.nodes[logits.0].data;
        let mut total = T::zero();
        for i in 0..n {
            if !valid[i] {
                continue;
            }
            let t = targets[i];
            // -log σ(x) = softplus(-x), -log(1-σ(x)) = softplus(x).
            let loss = pos_weight * t * softplus(-x[i]) + (T::one() - t) * softplus(x[i]);
            total += loss;
        }
        let mean = total / c::<T>(valid_count as f64);
        Ok(self.push(
            vec![1],
            vec![mean],
            Op::BceWithLogits {
                logits,
                targets: targets.to_vec(),
                valid: valid.to_vec(),
                pos_weight,
                valid_count,
            },
        ))
    }

    /// Elementwise product of two same-shape tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(AutodiffError::ShapeMismatch(format!(
                "mul: {:?} vs {:?}",
                self.nodes[a.0].shape, self.nodes[b.0].shape
            )));
        }
        let data: Vec<T> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(&x, &y)| x * y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        Ok(self.push(shape, data, Op::Mul { a, b }))
    }

    /// Sum of all elements, as a scalar node.
    pub fn sum(&mut self, input: Var) -> Var {
        let mut acc = T::zero();
        for &x in &self.nodes[input.0].data {
            acc += x;
        }
        self.push(vec![1], vec![acc], Op::Sum { input })
    }

    /// Reverse topological traversal from a scalar loss, accumulating exact
    /// gradients into every node reachable from it. Repeated calls without
    /// re-building the tape accumulate additively.
    pub fn backward(&mut self, loss: Var) -> Result<(), AutodiffError> {
        let n = self.nodes[loss.0].data.len();
        if n != 1 {
            return Err(AutodiffError::NonScalarLoss(n));
        }
        self.nodes[loss.0].grad[0] += T::one();
        for id in (0..=loss.0).rev() {
            if self.nodes[id].grad.iter().all(|&g| g == T::zero()) {
                continue;
            }
            self.backprop_node(id);
        }
        Ok(())
    }

    fn backprop_node(&mut self, id: usize) {
        // Inputs always precede the node, so split at `id` to borrow the
        // node immutably and its inputs mutably.
        let (before, rest) = self.nodes.split_at_mut(id);
        let node = &rest[0];
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                padding,
            } => {
                let [n, cin, h, w] = shape4_of(&before[input.0].shape);
                let [cout, _, kh, kw] = shape4_of(&before[weight.0].shape);
                let (ph, pw) = match padding {
                    Padding::Same => (kh / 2, kw / 2),
                    Padding::Valid => (0, 0),
                };
                conv2d_backward(
                    &node.grad,
                    [n, cin, h, w],
                    [cout, kh, kw],
                    (ph, pw),
                    (*input, *weight, *bias),
                    before,
                );
            }
            Op::ConvTranspose2 {
                input,
                weight,
                bias,
            } => {
                let [n, cin, h, w] = shape4_of(&before[input.0].shape);
                let cout = before[weight.0].shape[1];
                convt2_backward(
                    &node.grad,
                    [n, cin, h, w],
                    cout,
                    (*input, *weight, *bias),
                    before,
                );
            }
            Op::MaxPool2 { input, argmax } => {
                let g = &node.grad;
                let dst = &mut before[input.0].grad;
                for (i, &src) in argmax.iter().enumerate() {
                    dst[src as usize] += g[i];
                }
            }
            Op::Relu { input } => {
                let g = &node.grad;
                let node_in = &mut before[input.0];
                let (data, grad) = (&node_in.data, &mut node_in.grad);
                for i in 0..grad.len() {
                    if data[i] > T::zero() {
                        grad[i] += g[i];
                    }
                }
            }
            Op::Sigmoid { input } => {
                let g = &node.grad;
                let y = &node.data;
                let dst = &mut before[input.0].grad;
                for i in 0..dst.len() {
                    dst[i] += g[i] * y[i] * (T::one() - y[i]);
                }
            }
            Op::ConcatChannels { a, b } => {
                let [na, ca, ha, wa] = shape4_of(&before[a.0].shape);
                let cb = before[b.0].shape[1];
                let plane = ha * wa;
                let g = &node.grad;
                for img in 0..na {
                    let g_base = img * (ca + cb) * plane;
                    {
                        let da = &mut before[a.0].grad;
                        let a_base = img * ca * plane;
                        for k in 0..ca * plane {
                            da[a_base + k] += g[g_base + k];
                        }
                    }
                    {
                        let db = &mut before[b.0].grad;
                        let b_base = img * cb * plane;
                        for k in 0..cb * plane {
                            db[b_base + k] += g[g_base + ca * plane + k];
                        }
                    }
                }
            }
            Op::BceWithLogits {
                logits,
                targets,
                valid,
                pos_weight,
                valid_count,
            } => {
                let gscale = node.grad[0] / c::<T>(*valid_count as f64);
                let node_in = &mut before[logits.0];
                let (x, grad) = (&node_in.data, &mut node_in.grad);
                for i in 0..grad.len() {
                    if !valid[i] {
                        continue;
                    }
                    let s = stable_sigmoid(x[i]);
                    let t = targets[i];
                    // d/dx of w*t*softplus(-x) + (1-t)*softplus(x).
                    let d = *pos_weight * t * (s - T::one()) + (T::one() - t) * s;
                    grad[i] += gscale * d;
                }
            }
            Op::Mul { a, b } => {
                let g = &node.grad;
                let (ai, bi) = (a.0, b.0);
                if ai == bi {
                    // mul(x, x): both adjoints land on the same node.
                    let node_in = &mut before[ai];
                    let (data, grad) = (&node_in.data, &mut node_in.grad);
                    for i in 0..grad.len() {
                        grad[i] += g[i] * data[i];
                        grad[i] += g[i] * data[i];
                    }
                } else {
                    let (lo, hi) = (ai.min(bi), ai.max(bi));
                    let (left, right) = before.split_at_mut(hi);
                    let (lo_node, hi_node) = (&mut left[lo], &mut right[0]);
                    let (a_node, b_node) = if ai < bi {
                        (lo_node, hi_node)
                    } else {
                        (hi_node, lo_node)
                    };
                    for i in 0..g.len() {
                        a_node.grad[i] += g[i] * b_node.data[i];
                        b_node.grad[i] += g[i] * a_node.data[i];
                    }
                }
            }
            Op::Sum { input } => {
                let g = node.grad[0];
                for d in before[input.0].grad.iter_mut() {
                    *d += g;
                }
            }
        }
    }
}

fn shape4_of(shape: &[usize]) -> [usize; 4] {
    [shape[0], shape[1], shape[2], shape[3]]
}

pub(crate) fn stable_sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// ln(1 + e^x) without overflow: max(x, 0) + ln(1 + e^(-|x|)).
fn softplus<T: Real>(x: T) -> T {
    let m = if x > T::zero() { x } else { T::zero() };
    m + (-(x.abs())).exp().ln_1p()
}

#[allow(clippy::too_many_arguments)]
fn conv2d_forward<T: Real>(
    x: &[T],
    weight: &[T],
    bias: &[T],
    out: &mut [T],
    [n, cin, h, w]: [usize; 4],
    [cout, kh, kw]: [usize; 3],
    (ph, pw): (usize, usize),
) {
    let oh = h + 2 * ph - kh + 1;
    let ow = w + 2 * pw - kw + 1;
    for img in 0..n {
        for oc in 0..cout {
            let out_base = (img * cout + oc) * oh * ow;
            out[out_base..out_base + oh * ow].fill(bias[oc]);
            for ic in 0..cin {
                let in_base = (img * cin + ic) * h * w;
                let w_base = (oc * cin + ic) * kh * kw;
                for kr in 0..kh {
                    let or_lo = ph.saturating_sub(kr);
                    let or_hi = (h + ph - kr).min(oh);
                    for kc in 0..kw {
                        let wv = weight[w_base + kr * kw + kc];
                        let oc_lo = pw.saturating_sub(kc);
                        let oc_hi = (w + pw - kc).min(ow);
                        if oc_lo >= oc_hi {
                            continue;
                        }
                        let len = oc_hi - oc_lo;
                        for orow in or_lo..or_hi {
                            let ih = orow + kr - ph;
                            let dst = out_base + orow * ow + oc_lo;
                            let src = in_base + ih * w + (oc_lo + kc - pw);
                            let (o_row, x_row) = (&mut out[dst..dst + len], &x[src..src + len]);
                            for k in 0..len {
                                o_row[k] += wv * x_row[k];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates conv2d input/weight/bias gradients into the `before` arena.
fn conv2d_backward<T: Real>(
    gout: &[T],
    [n, cin, h, w]: [usize; 4],
    [cout, kh, kw]: [usize; 3],
    (ph, pw): (usize, usize),
    (input, wvar, bvar): (Var, Var, Var),
    before: &mut [Node<T>],
) {
    let oh = h + 2 * ph - kh + 1;
    let ow = w + 2 * pw - kw + 1;
    let [inode, wnode, bnode] = before
        .get_disjoint_mut([input.0, wvar.0, bvar.0])
        .expect("conv2d operands are distinct nodes");

    // Bias: sum of output gradient per channel.
    for img in 0..n {
        for oc in 0..cout {
            let base = (img * cout + oc) * oh * ow;
            let mut acc = T::zero();
            for &g in &gout[base..base + oh * ow] {
                acc += g;
            }
            bnode.grad[oc] += acc;
        }
    }

    // Weight: correlation of input with the output gradient.
    // Input: correlation of the output gradient with the kernel.
    let x = &inode.data;
    let dw = &mut wnode.grad;
    let weight = &wnode.data;
    let dx = &mut inode.grad;
    for img in 0..n {
        for oc in 0..cout {
            let out_base = (img * cout + oc) * oh * ow;
            for ic in 0..cin {
                let in_base = (img * cin + ic) * h * w;
                let w_base = (oc * cin + ic) * kh * kw;
                for kr in 0..kh {
                    let or_lo = ph.saturating_sub(kr);
                    let or_hi = (h + ph - kr).min(oh);
                    for kc in 0..kw {
                        let oc_lo = pw.saturating_sub(kc);
                        let oc_hi = (w + pw - kc).min(ow);
                        if oc_lo >= oc_hi {
                            continue;
                        }
                        let len = oc_hi - oc_lo;
                        let wv = weight[w_base + kr * kw + kc];
                        let mut acc = T::zero();
                        for orow in or_lo..or_hi {
                            let ih = orow + kr - ph;
                            let gd = out_base + orow * ow + oc_lo;
                            let xs = in_base + ih * w + (oc_lo + kc - pw);
                            let g_row = &gout[gd..gd + len];
                            let x_row = &x[xs..xs + len];
                            for k in 0..len {
                                acc += g_row[k] * x_row[k];
                            }
                            let dx_row = &mut dx[xs..xs + len];
                            for k in 0..len {
                                dx_row[k] += wv * g_row[k];
                            }
                        }
                        dw[w_base + kr * kw + kc] += acc;
                    }
                }
            }
        }
    }
}

fn convt2_forward<T: Real>(
    x: &[T],
    weight: &[T],
    bias: &[T],
    out: &mut [T],
    [n, cin, h, w]: [usize; 4],
    cout: usize,
) {
    let (oh, ow) = (2 * h, 2 * w);
    for img in 0..n {
        for oc in 0..cout {
            let out_base = (img * cout + oc) * oh * ow;
            out[out_base..out_base + oh * ow].fill(bias[oc]);
            for ic in 0..cin {
                let in_base = (img * cin + ic) * h * w;
                let w_base = (ic * cout + oc) * 4;
                for kr in 0..2 {
                    for kc in 0..2 {
                        let wv = weight[w_base + kr * 2 + kc];
                        for ir in 0..h {
                            let dst = out_base + (2 * ir + kr) * ow + kc;
                            let src = in_base + ir * w;
                            for iw in 0..w {
                                out[dst + 2 * iw] += wv * x[src + iw];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn convt2_backward<T: Real>(
    gout: &[T],
    [n, cin, h, w]: [usize; 4],
    cout: usize,
    (input, wvar, bvar): (Var, Var, Var),
    before: &mut [Node<T>],
) {
    let (oh, ow) = (2 * h, 2 * w);
    let [inode, wnode, bnode] = before
        .get_disjoint_mut([input.0, wvar.0, bvar.0])
        .expect("conv_transpose2 operands are distinct nodes");

    for img in 0..n {
        for oc in 0..cout {
            let base = (img * cout + oc) * oh * ow;
            let mut acc = T::zero();
            for &g in &gout[base..base + oh * ow] {
                acc += g;
            }
            bnode.grad[oc] += acc;
        }
    }

    let x = &inode.data;
    let dx = &mut inode.grad;
    let weight = &wnode.data;
    let dw = &mut wnode.grad;
    for img in 0..n {
        for oc in 0..cout {
            let out_base = (img * cout + oc) * oh * ow;
            for ic in 0..cin {
                let in_base = (img * cin + ic) * h * w;
                let w_base = (ic * cout + oc) * 4;
                for kr in 0..2 {
                    for kc in 0..2 {
                        let wv = weight[w_base + kr * 2 + kc];
                        let mut acc = T::zero();
                        for ir in 0..h {
                            let gd = out_base + (2 * ir + kr) * ow + kc;
                            let src = in_base + ir * w;
                            for iw in 0..w {
                                let g = gout[gd + 2 * iw];
                                acc += g * x[src + iw];
                                dx[src + iw] += wv * g;
                            }
                        }
                        dw[w_base + kr * 2 + kc] += acc;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_valid_all_ones_sums_the_window() {
        let mut tape: Tape<f32> = Tape::new();
        let x = tape.leaf(&[1, 1, 3, 3], vec![1.0; 9]);
        let w = tape.leaf(&[1, 1, 3, 3], vec![1.0; 9]);
        let b = tape.leaf(&[1], vec![0.0]);
        let y = tape.conv2d(x, w, b, Padding::Valid).unwrap();
        assert_eq!(tape.shape(y), &[1, 1, 1, 1]);
        assert_eq!(tape.data(y), &[9.0]);
    }

    #[test]
    fn conv_same_with_delta_kernel_is_identity() {
        let mut tape: Tape<f32> = Tape::new();
        let data: Vec<f32> = (0..16).map(|i| i as f32 * 0.5 - 3.0).collect();
        let x = tape.leaf(&[1, 1, 4, 4], data.clone());
        let mut kernel = vec![0.0; 9];
        kernel[4] = 1.0; // center tap
        let w = tape.leaf(&[1, 1, 3, 3], kernel);
        let b = tape.leaf(&[1], vec![0.0]);
        let y = tape.conv2d(x, w, b, Padding::Same).unwrap();
        assert_eq!(tape.shape(y), &[1, 1, 4, 4]);
        assert_eq!(tape.data(y), data.as_slice());
    }

    #[test]
    fn conv_shape_mismatch_is_rejected() {
        let mut tape: Tape<f32> = Tape::new();
        let x = tape.leaf(&[1, 2, 4, 4], vec![0.0; 32]);
        let w = tape.leaf(&[1, 3, 3, 3], vec![0.0; 27]);
        let b = tape.leaf(&[1], vec![0.0]);
        assert!(matches!(
            tape.conv2d(x, w, b, Padding::Same),
            Err(AutodiffError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn conv_transpose_scatters_single_value() {
        let mut tape: Tape<f32> = Tape::new();
        let x = tape.leaf(&[1, 1, 1, 1], vec![3.5]);
        let w = tape.leaf(&[1, 1, 2, 2], vec![1.0; 4]);
        let b = tape.leaf(&[1], vec![0.0]);
        let y = tape.conv_transpose2(x, w, b).unwrap();
        assert_eq!(tape.shape(y), &[1, 1, 2, 2]);
        assert_eq!(tape.data(y), &[3.5; 4]);
    }

    #[test]
    fn conv_transpose_halves_channels_and_doubles_dims() {
        let mut tape: Tape<f32> = Tape::new();
        let (c, h, w) = (4usize, 3usize, 5usize);
        let x = tape.leaf(&[1, c, h, w], vec![0.25; c * h * w]);
        let wt = tape.leaf(&[c, c / 2, 2, 2], vec![0.1; c * (c / 2) * 4]);
        let b = tape.leaf(&[c / 2], vec![0.0; c / 2]);
        let y = tape.conv_transpose2(x, wt, b).unwrap();
        assert_eq!(tape.shape(y), &[1, c / 2, 2 * h, 2 * w]);
    }

    #[test]
    fn maxpool_takes_window_max_and_routes_gradient() {
        let mut tape: Tape<f32> = Tape::new();
        let x = tape.leaf(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let y = tape.maxpool2(x).unwrap();
        assert_eq!(tape.data(y), &[4.0]);
        let loss = tape.sum(y);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x), &[0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn maxpool_tie_breaks_to_first_in_row_major_order() {
        let mut tape: Tape<f32> = Tape::new();
        let x = tape.leaf(&[1, 1, 2, 2], vec![5.0, 5.0, 1.0, 2.0]);
        let y = tape.maxpool2(x).unwrap();
        assert_eq!(tape.data(y), &[5.0]);
        let loss = tape.sum(y);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn maxpool_on_ascending_grid() {
        let mut tape: Tape<f32> = Tape::new();
        let x = tape.leaf(&[1, 1, 4, 4], (1..=16).map(|v| v as f32).collect());
        let y = tape.maxpool2(x).unwrap();
        assert_eq!(tape.data(y), &[6.0, 8.0, 14.0, 16.0]);
    }

    #[test]
    fn maxpool_rejects_odd_dims() {
        let mut tape: Tape<f32> = Tape::new();
        let x = tape.leaf(&[1, 1, 3, 4], vec![0.0; 12]);
        assert!(matches!(
            tape.maxpool2(x),
            Err(AutodiffError::OddSpatialDims { h: 3, w: 4 })
        ));
    }

    #[test]
    fn maxpool_then_duplicate_upsample_is_identity_on_pooled_grid() {
        let mut tape: Tape<f32> = Tape::new();
        let data: Vec<f32> = (0..16).map(|i| ((i * 7) % 13) as f32).collect();
        let x = tape.leaf(&[1, 1, 4, 4], data);
        let pooled = tape.maxpool2(x).unwrap();
        // Duplicate each pooled value into a 2x2 block, pool again.
        let p = tape.data(pooled).to_vec();
        let mut dup = vec![0.0f32; 16];
        for r in 0..2 {
            for c in 0..2 {
                let v = p[r * 2 + c];
                for (dr, dc) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    dup[(2 * r + dr) * 4 + (2 * c + dc)] = v;
                }
            }
        }
        let dup_leaf = tape.leaf(&[1, 1, 4, 4], dup);
        let repooled = tape.maxpool2(dup_leaf).unwrap();
        assert_eq!(tape.data(repooled), p.as_slice());
    }

    #[test]
    fn relu_and_sigmoid_match_reference_points() {
        let mut tape: Tape<f32> = Tape::new();
        let x = tape.leaf(&[3], vec![-1.0, 0.0, 2.0]);
        let r = tape.relu(x);
        assert_eq!(tape.data(r), &[0.0, 0.0, 2.0]);

        let z = tape.leaf(&[1], vec![0.0]);
        let s = tape.sigmoid(z);
        assert_eq!(tape.data(s), &[0.5]);
    }

    #[test]
    fn sigmoid_is_stable_far_into_the_tails() {
        let mut tape: Tape<f32> = Tape::new();
        let x = tape.leaf(&[2], vec![-100.0, 100.0]);
        let s = tape.sigmoid(x);
        let lo = tape.data(s)[0];
        let hi = tape.data(s)[1];
        assert!(lo > 0.0 && lo <= 1e-40, "sigmoid(-100) = {lo}");
        assert!(hi <= 1.0 && hi > 1.0 - 1e-6);
        assert!(lo.is_finite() && hi.is_finite());
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut tape: Tape<f32> = Tape::new();
        let x = tape.leaf(&[3], vec![-1.0, 0.0, 2.0]);
        let r = tape.relu(x);
        let loss = tape.sum(r);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn concat_stacks_channels_and_splits_gradient() {
        let mut tape: Tape<f32> = Tape::new();
        let a = tape.leaf(&[1, 2, 4, 4], vec![1.0; 32]);
        let b = tape.leaf(&[1, 3, 4, 4], vec![2.0; 48]);
        let y = tape.concat_channels(a, b).unwrap();
        assert_eq!(tape.shape(y), &[1, 5, 4, 4]);
        // First two channels come from a, the rest from b.
        assert_eq!(tape.data(y)[0..32], vec![1.0; 32][..]);
        assert_eq!(tape.data(y)[32..80], vec![2.0; 48][..]);
        let loss = tape.sum(y);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(a), vec![1.0; 32].as_slice());
        assert_eq!(tape.grad(b), vec![1.0; 48].as_slice());
    }

    #[test]
    fn concat_rejects_disagreeing_dims() {
        let mut tape: Tape<f32> = Tape::new();
        let a = tape.leaf(&[1, 2, 4, 4], vec![0.0; 32]);
        let b = tape.leaf(&[1, 2, 3, 4], vec![0.0; 24]);
        assert!(tape.concat_channels(a, b).is_err());
    }

    #[test]
    fn bce_at_zero_logit_is_ln2() {
        let mut tape: Tape<f32> = Tape::new();
        let x = tape.leaf(&[1], vec![0.0]);
        let loss = tape
            .bce_with_logits(x, &[1.0], &[true], 1.0)
            .unwrap();
        assert!((tape.data(loss)[0] - std::f32::consts::LN_2).abs() < 1e-7);
    }

    #[test]
    fn bce_pos_weight_scales_positive_terms() {
        let mut tape: Tape<f32> = Tape::new();
        let x = tape.leaf(&[1], vec![0.0]);
        let loss = tape
            .bce_with_logits(x, &[1.0], &[true], 2.0)
            .unwrap();
        assert!((tape.data(loss)[0] - 2.0 * std::f32::consts::LN_2).abs() < 1e-6);
    }

    #[test]
    fn bce_is_stable_for_confident_correct_logits() {
        let mut tape: Tape<f32> = Tape::new();
        let x = tape.leaf(&[1], vec![-100.0]);
        let loss = tape
            .bce_with_logits(x, &[0.0], &[true], 1.0)
            .unwrap();
        let l = tape.data(loss)[0];
        assert!(l >= 0.0 && l < 1e-40, "loss {l}");
        tape.backward(loss).unwrap();
        assert!(tape.grad(x)[0].is_finite());
    }

    #[test]
    fn bce_ignores_invalid_pixels_and_rejects_all_invalid() {
        let mut tape: Tape<f32> = Tape::new();
        let x = tape.leaf(&[2], vec![0.0, 50.0]);
        let loss = tape
            .bce_with_logits(x, &[1.0, 0.0], &[true, false], 1.0)
            .unwrap();
        // Only the first pixel counts.
        assert!((tape.data(loss)[0] - std::f32::consts::LN_2).abs() < 1e-7);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x)[1], 0.0);

        let mut tape2: Tape<f32> = Tape::new();
        let y = tape2.leaf(&[1], vec![0.0]);
        assert!(matches!(
            tape2.bce_with_logits(y, &[1.0], &[false], 1.0),
            Err(AutodiffError::NoValidPixels)
        ));
    }

    #[test]
    fn backward_of_sum_of_squares_and_double_backward_accumulates() {
        let mut tape: Tape<f32> = Tape::new();
        let x = tape.leaf(&[2], vec![1.0, 2.0]);
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x), &[2.0, 4.0]);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x), &[4.0, 8.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape: Tape<f32> = Tape::new();
        let x = tape.leaf(&[2], vec![1.0, 2.0]);
        assert!(matches!(
            tape.backward(x),
            Err(AutodiffError::NonScalarLoss(2))
        ));
    }

    #[test]
    fn forward_is_pure() {
        let run = || {
            let mut tape: Tape<f32> = Tape::new();
            let x = tape.leaf(&[1, 1, 4, 4], (0..16).map(|i| (i as f32).sin()).collect());
            let w = tape.leaf(&[2, 1, 3, 3], (0..18).map(|i| (i as f32).cos()).collect());
            let b = tape.leaf(&[2], vec![0.1, -0.2]);
            let y = tape.conv2d(x, w, b, Padding::Same).unwrap();
            let p = tape.maxpool2(y).unwrap();
            let r = tape.relu(p);
            tape.data(r).to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn finite_inputs_produce_finite_outputs() {
        let mut tape: Tape<f32> = Tape::new();
        let x = tape.leaf(&[1, 2, 4, 4], vec![1e3; 32]);
        let w = tape.leaf(&[2, 2, 3, 3], vec![-1e3; 36]);
        let b = tape.leaf(&[2], vec![1e3; 2]);
        let y = tape.conv2d(x, w, b, Padding::Same).unwrap();
        let s = tape.sigmoid(y);
        let p = tape.maxpool2(s).unwrap();
        let r = tape.relu(p);
        assert!(tape.data(r).iter().all(|v| v.is_finite()));
    }
}
