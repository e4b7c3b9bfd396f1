//! Minimal reverse-mode differentiation core.
//!
//! A [`Tape`] records operations on 2-D `f64` arrays; [`Tape::backward`]
//! replays them in reverse and accumulates gradients for every node. The
//! tape is rebuilt per training step (define-by-run); parameters live
//! outside the tape and are re-inserted each step via [`Tape::input`].
//!
//! Sequence-shaped data (batch B of T steps with C channels) is stored
//! flattened as a `(B*T, C)` matrix; the block-structured ops
//! ([`Tape::conv1d_same`], [`Tape::lstm_last`], the batched matmuls) take
//! `B` and `T` explicitly.
//!
//! Everything is `f64` so analytic gradients can be validated against
//! central finite differences at tight tolerances (see [`check`]).

pub mod check;
pub mod optim;

use ndarray::{s, Array2, Axis};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

/// Gradient accumulator indexed by node.
pub struct GradStore {
    grads: Vec<Option<Array2<f64>>>,
}

impl GradStore {
    fn add(&mut self, id: NodeId, contribution: Array2<f64>) {
        match &mut self.grads[id.0] {
            Some(g) => *g += &contribution,
            slot @ None => *slot = Some(contribution),
        }
    }

    fn take(&mut self, id: NodeId) -> Option<Array2<f64>> {
        self.grads[id.0].take()
    }

    /// Gradient of the loss w.r.t. a node; zeros if the node did not
    /// influence the loss.
    pub fn grad(&self, id: NodeId, shape: (usize, usize)) -> Array2<f64> {
        self.grads[id.0]
            .clone()
            .unwrap_or_else(|| Array2::zeros(shape))
    }
}

type BackFn = Box<dyn Fn(&Array2<f64>, &mut GradStore)>;

struct Node {
    value: Array2<f64>,
    back: Option<BackFn>,
}

/// Recorded computation graph.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, value: Array2<f64>, back: Option<BackFn>) -> NodeId {
        self.nodes.push(Node { value, back });
        NodeId(self.nodes.len() - 1)
    }

    /// Inserts an input (parameter or data) node. Gradients are computed
    /// for every node, so parameters and constants are recorded alike.
    pub fn input(&mut self, value: Array2<f64>) -> NodeId {
        self.push(value, None)
    }

    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value[(0, 0)]
    }

    /// Reverse pass from a scalar (1x1) loss node.
    pub fn backward(&self, loss: NodeId) -> GradStore {
        let mut store = GradStore {
            grads: vec![None; self.nodes.len()],
        };
        store.add(loss, Array2::ones((1, 1)));
        for idx in (0..=loss.0).rev() {
            let Some(upstream) = store.take(NodeId(idx)) else {
                continue;
            };
            if let Some(back) = &self.nodes[idx].back {
                back(&upstream, &mut store);
            }
            // leaves keep their gradient readable after the pass
            store.grads[idx] = Some(upstream);
        }
        store
    }

    // ---- elementwise and linear ops ----

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = &self.nodes[a.0].value + &self.nodes[b.0].value;
        self.push(
            value,
            Some(Box::new(move |g, store| {
                store.add(a, g.clone());
                store.add(b, g.clone());
            })),
        )
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = &self.nodes[a.0].value - &self.nodes[b.0].value;
        self.push(
            value,
            Some(Box::new(move |g, store| {
                store.add(a, g.clone());
                store.add(b, -g.clone());
            })),
        )
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let av = self.nodes[a.0].value.clone();
        let bv = self.nodes[b.0].value.clone();
        let value = &av * &bv;
        self.push(
            value,
            Some(Box::new(move |g, store| {
                store.add(a, g * &bv);
                store.add(b, g * &av);
            })),
        )
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let value = &self.nodes[a.0].value * c;
        self.push(
            value,
            Some(Box::new(move |g, store| {
                store.add(a, g * c);
            })),
        )
    }

    /// Elementwise product with a fixed mask (dropout, attention masks).
    pub fn mul_mask(&mut self, a: NodeId, mask: Array2<f64>) -> NodeId {
        let value = &self.nodes[a.0].value * &mask;
        self.push(
            value,
            Some(Box::new(move |g, store| {
                store.add(a, g * &mask);
            })),
        )
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let av = self.nodes[a.0].value.clone();
        let value = av.mapv(|x| x.max(0.0));
        self.push(
            value,
            Some(Box::new(move |g, store| {
                let gate = av.mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                store.add(a, g * &gate);
            })),
        )
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a.0].value.mapv(f64::tanh);
        let y = value.clone();
        self.push(
            value,
            Some(Box::new(move |g, store| {
                store.add(a, g * &y.mapv(|t| 1.0 - t * t));
            })),
        )
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a.0].value.mapv(|x| 1.0 / (1.0 + (-x).exp()));
        let y = value.clone();
        self.push(
            value,
            Some(Box::new(move |g, store| {
                store.add(a, g * &y.mapv(|s| s * (1.0 - s)));
            })),
        )
    }

    /// `a (m,k) @ b (k,n)`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let av = self.nodes[a.0].value.clone();
        let bv = self.nodes[b.0].value.clone();
        let value = av.dot(&bv);
        self.push(
            value,
            Some(Box::new(move |g, store| {
                store.add(a, g.dot(&bv.t()));
                store.add(b, av.t().dot(g));
            })),
        )
    }

    /// `a (m,k) @ b (n,k)^T -> (m,n)`.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let av = self.nodes[a.0].value.clone();
        let bv = self.nodes[b.0].value.clone();
        let value = av.dot(&bv.t());
        self.push(
            value,
            Some(Box::new(move |g, store| {
                store.add(a, g.dot(&bv));
                store.add(b, g.t().dot(&av));
            })),
        )
    }

    /// Broadcasts a `(1,n)` bias over the rows of `x (m,n)`.
    pub fn add_row_bias(&mut self, x: NodeId, bias: NodeId) -> NodeId {
        let value = &self.nodes[x.0].value + &self.nodes[bias.0].value;
        self.push(
            value,
            Some(Box::new(move |g, store| {
                store.add(x, g.clone());
                store.add(bias, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            })),
        )
    }

    /// Row-wise L2 normalization: `y_i = x_i / ||x_i||`.
    ///
    /// Rows must be nonzero; callers guard this (cosine similarity is
    /// undefined on zero vectors).
    pub fn l2_normalize_rows(&mut self, x: NodeId) -> NodeId {
        let xv = self.nodes[x.0].value.clone();
        let norms: Vec<f64> = xv
            .rows()
            .into_iter()
            .map(|r| r.dot(&r).sqrt())
            .collect();
        let mut value = xv.clone();
        for (mut row, &n) in value.rows_mut().into_iter().zip(&norms) {
            row.mapv_inplace(|v| v / n);
        }
        let y = value.clone();
        self.push(
            value,
            Some(Box::new(move |g, store| {
                let mut dx = Array2::zeros(g.raw_dim());
                for i in 0..g.nrows() {
                    let gi = g.row(i);
                    let yi = y.row(i);
                    let dot = gi.dot(&yi);
                    for j in 0..g.ncols() {
                        dx[(i, j)] = (gi[j] - dot * yi[j]) / norms[i];
                    }
                }
                store.add(x, dx);
            })),
        )
    }

    pub fn softmax_rows(&mut self, x: NodeId) -> NodeId {
        let value = softmax_rows(&self.nodes[x.0].value);
        let y = value.clone();
        self.push(
            value,
            Some(Box::new(move |g, store| {
                let mut dx = Array2::zeros(g.raw_dim());
                for i in 0..g.nrows() {
                    let gi = g.row(i);
                    let yi = y.row(i);
                    let dot = gi.dot(&yi);
                    for j in 0..g.ncols() {
                        dx[(i, j)] = yi[j] * (gi[j] - dot);
                    }
                }
                store.add(x, dx);
            })),
        )
    }

    /// Mean over each block of `t` consecutive rows: `(b*t, d) -> (b, d)`.
    pub fn mean_rows_blocks(&mut self, x: NodeId, t: usize) -> NodeId {
        let xv = &self.nodes[x.0].value;
        let b = xv.nrows() / t;
        let d = xv.ncols();
        let mut value = Array2::zeros((b, d));
        for i in 0..b {
            let block = xv.slice(s![i * t..(i + 1) * t, ..]);
            value
                .row_mut(i)
                .assign(&(block.sum_axis(Axis(0)) / t as f64));
        }
        self.push(
            value,
            Some(Box::new(move |g, store| {
                let mut dx = Array2::zeros((b * t, d));
                for i in 0..b {
                    let gi = g.row(i).mapv(|v| v / t as f64);
                    for r in 0..t {
                        dx.row_mut(i * t + r).assign(&gi);
                    }
                }
                store.add(x, dx);
            })),
        )
    }

    /// Selects rows by index; duplicates allowed. Backward scatter-adds.
    pub fn gather_rows(&mut self, x: NodeId, idx: Vec<usize>) -> NodeId {
        let xv = &self.nodes[x.0].value;
        let (rows, cols) = (xv.nrows(), xv.ncols());
        let mut value = Array2::zeros((idx.len(), cols));
        for (out, &i) in idx.iter().enumerate() {
            value.row_mut(out).assign(&xv.row(i));
        }
        self.push(
            value,
            Some(Box::new(move |g, store| {
                let mut dx = Array2::zeros((rows, cols));
                for (out, &i) in idx.iter().enumerate() {
                    let mut row = dx.row_mut(i);
                    row += &g.row(out);
                }
                store.add(x, dx);
            })),
        )
    }

    /// Mean cross-entropy of row-wise logits against integer targets.
    pub fn cross_entropy_mean(&mut self, logits: NodeId, targets: Vec<usize>) -> NodeId {
        let lv = &self.nodes[logits.0].value;
        let probs = softmax_rows(lv);
        let n = targets.len() as f64;
        let mut loss = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            loss -= probs[(i, t)].max(1e-300).ln();
        }
        loss /= n;
        let value = Array2::from_elem((1, 1), loss);
        self.push(
            value,
            Some(Box::new(move |g, store| {
                let mut dl = probs.clone();
                for (i, &t) in targets.iter().enumerate() {
                    dl[(i, t)] -= 1.0;
                }
                dl *= g[(0, 0)] / n;
                store.add(logits, dl);
            })),
        )
    }

    /// Contrastive loss over a similarity matrix whose rows are anchors and
    /// whose consecutive row pairs `(2j, 2j+1)` are positives.
    ///
    /// `loss = mean_i [ logsumexp_{k != i}(s_ik) - s_{i, partner(i)} ]`,
    /// the usual normalized temperature-scaled cross entropy once `s` holds
    /// cosine similarities divided by the temperature.
    pub fn ntxent_pairs(&mut self, sims: NodeId) -> NodeId {
        let sv = self.nodes[sims.0].value.clone();
        let n = sv.nrows();
        debug_assert_eq!(n % 2, 0);
        // masked softmax over k != i, stabilized by max subtraction
        let mut soft = Array2::zeros((n, n));
        let mut loss = 0.0;
        for i in 0..n {
            let partner = i ^ 1;
            let mut mx = f64::NEG_INFINITY;
            for k in 0..n {
                if k != i {
                    mx = mx.max(sv[(i, k)]);
                }
            }
            let mut denom = 0.0;
            for k in 0..n {
                if k != i {
                    let e = (sv[(i, k)] - mx).exp();
                    soft[(i, k)] = e;
                    denom += e;
                }
            }
            for k in 0..n {
                soft[(i, k)] /= denom;
            }
            loss += mx + denom.ln() - sv[(i, partner)];
        }
        loss /= n as f64;
        let value = Array2::from_elem((1, 1), loss);
        self.push(
            value,
            Some(Box::new(move |g, store| {
                let mut ds = soft.clone();
                for i in 0..n {
                    ds[(i, i ^ 1)] -= 1.0;
                    ds[(i, i)] = 0.0;
                }
                ds *= g[(0, 0)] / n as f64;
                store.add(sims, ds);
            })),
        )
    }

    /// 1-D convolution over blocks of `t` rows, kernel size 3, stride 1,
    /// zero same-padding.
    ///
    /// `x` is `(b*t, c_in)`; `w` is `(3*c_in, c_out)` stacked by tap
    /// `[w_prev; w_center; w_next]`; `bias` is `(1, c_out)`.
    pub fn conv1d_same(
        &mut self,
        x: NodeId,
        w: NodeId,
        bias: NodeId,
        b: usize,
        t: usize,
    ) -> NodeId {
        let xv = self.nodes[x.0].value.clone();
        let wv = self.nodes[w.0].value.clone();
        let bv = self.nodes[bias.0].value.clone();
        let c_in = xv.ncols();
        let c_out = wv.ncols();
        debug_assert_eq!(xv.nrows(), b * t);
        debug_assert_eq!(wv.nrows(), 3 * c_in);

        let taps = [
            wv.slice(s![0..c_in, ..]).to_owned(),
            wv.slice(s![c_in..2 * c_in, ..]).to_owned(),
            wv.slice(s![2 * c_in..3 * c_in, ..]).to_owned(),
        ];
        let shifted = |src: &Array2<f64>, offset: isize| -> Array2<f64> {
            // rows moved by -offset within each block, zeros at the edges
            let mut out = Array2::zeros((b * t, src.ncols()));
            for blk in 0..b {
                for row in 0..t {
                    let from = row as isize + offset;
                    if (0..t as isize).contains(&from) {
                        out.row_mut(blk * t + row)
                            .assign(&src.row(blk * t + from as usize));
                    }
                }
            }
            out
        };
        let mut value = shifted(&xv, -1).dot(&taps[0]);
        value += &xv.dot(&taps[1]);
        value += &shifted(&xv, 1).dot(&taps[2]);
        value += &bv.broadcast((b * t, c_out)).unwrap();

        self.push(
            value,
            Some(Box::new(move |g, store| {
                let mut dx = Array2::zeros((b * t, c_in));
                let mut dw = Array2::zeros((3 * c_in, c_out));
                for (tap, offset) in [(0usize, -1isize), (1, 0), (2, 1)] {
                    // forward used shifted(x, offset) @ taps[tap]
                    dx += &shifted(&g.dot(&taps[tap].t()), -offset);
                    let xs = shifted(&xv, offset);
                    dw.slice_mut(s![tap * c_in..(tap + 1) * c_in, ..])
                        .assign(&xs.t().dot(g));
                }
                store.add(x, dx);
                store.add(w, dw);
                store.add(bias, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            })),
        )
    }

    /// LSTM over blocks of `t` rows, returning the final hidden state per
    /// block: `(b*t, c_in) -> (b, h)`.
    ///
    /// Weights follow the `[input, forget, cell, output]` gate layout:
    /// `w_ih (c_in, 4h)`, `w_hh (h, 4h)`, `bias (1, 4h)`. Initial hidden and
    /// cell states are zero.
    pub fn lstm_last(
        &mut self,
        x: NodeId,
        w_ih: NodeId,
        w_hh: NodeId,
        bias: NodeId,
        b: usize,
        t: usize,
    ) -> NodeId {
        let xv = self.nodes[x.0].value.clone();
        let wi = self.nodes[w_ih.0].value.clone();
        let wh = self.nodes[w_hh.0].value.clone();
        let bv = self.nodes[bias.0].value.clone();
        let h = wh.nrows();
        debug_assert_eq!(wi.ncols(), 4 * h);
        debug_assert_eq!(xv.nrows(), b * t);

        // x rearranged per step: step_inputs[s] is (b, c_in)
        let step_input = |s: usize| -> Array2<f64> {
            let mut m = Array2::zeros((b, xv.ncols()));
            for blk in 0..b {
                m.row_mut(blk).assign(&xv.row(blk * t + s));
            }
            m
        };

        let sigmoid = |v: f64| 1.0 / (1.0 + (-v).exp());
        let mut h_state = Array2::zeros((b, h));
        let mut c_state: Array2<f64> = Array2::zeros((b, h));
        // saved per step: gates (i,f,g,o) post-activation, c_prev, c, h_prev
        let mut saved: Vec<(Array2<f64>, Array2<f64>, Array2<f64>, Array2<f64>)> =
            Vec::with_capacity(t);
        for s in 0..t {
            let xs = step_input(s);
            let mut gates = xs.dot(&wi) + h_state.dot(&wh);
            gates += &bv.broadcast((b, 4 * h)).unwrap();
            let mut acts = gates.clone();
            for r in 0..b {
                for j in 0..h {
                    acts[(r, j)] = sigmoid(gates[(r, j)]);
                    acts[(r, h + j)] = sigmoid(gates[(r, h + j)]);
                    acts[(r, 2 * h + j)] = gates[(r, 2 * h + j)].tanh();
                    acts[(r, 3 * h + j)] = sigmoid(gates[(r, 3 * h + j)]);
                }
            }
            let c_prev = c_state.clone();
            let h_prev = h_state.clone();
            for r in 0..b {
                for j in 0..h {
                    let (ig, fg, gg, og) = (
                        acts[(r, j)],
                        acts[(r, h + j)],
                        acts[(r, 2 * h + j)],
                        acts[(r, 3 * h + j)],
                    );
                    c_state[(r, j)] = fg * c_prev[(r, j)] + ig * gg;
                    h_state[(r, j)] = og * c_state[(r, j)].tanh();
                }
            }
            saved.push((acts, c_prev, c_state.clone(), h_prev));
        }

        let value = h_state;
        let c_in = xv.ncols();
        self.push(
            value,
            Some(Box::new(move |g, store| {
                let mut dx = Array2::zeros((b * t, c_in));
                let mut dwi = Array2::zeros((c_in, 4 * h));
                let mut dwh = Array2::zeros((h, 4 * h));
                let mut db = Array2::zeros((1, 4 * h));
                let mut dh = g.clone();
                let mut dc: Array2<f64> = Array2::zeros((b, h));
                for s in (0..t).rev() {
                    let (acts, c_prev, c_now, h_prev) = &saved[s];
                    let mut dgates = Array2::zeros((b, 4 * h));
                    for r in 0..b {
                        for j in 0..h {
                            let (ig, fg, gg, og) = (
                                acts[(r, j)],
                                acts[(r, h + j)],
                                acts[(r, 2 * h + j)],
                                acts[(r, 3 * h + j)],
                            );
                            let tc = c_now[(r, j)].tanh();
                            let mut dcj = dc[(r, j)] + dh[(r, j)] * og * (1.0 - tc * tc);
                            let doj = dh[(r, j)] * tc;
                            let dij = dcj * gg;
                            let dfj = dcj * c_prev[(r, j)];
                            let dgj = dcj * ig;
                            dcj *= fg; // flows to c_{s-1}
                            dc[(r, j)] = dcj;
                            dgates[(r, j)] = dij * ig * (1.0 - ig);
                            dgates[(r, h + j)] = dfj * fg * (1.0 - fg);
                            dgates[(r, 2 * h + j)] = dgj * (1.0 - gg * gg);
                            dgates[(r, 3 * h + j)] = doj * og * (1.0 - og);
                        }
                    }
                    let xs = {
                        let mut m = Array2::zeros((b, c_in));
                        for blk in 0..b {
                            m.row_mut(blk).assign(&xv.row(blk * t + s));
                        }
                        m
                    };
                    dwi += &xs.t().dot(&dgates);
                    dwh += &h_prev.t().dot(&dgates);
                    db += &dgates.sum_axis(Axis(0)).insert_axis(Axis(0));
                    let dxs = dgates.dot(&wi.t());
                    for blk in 0..b {
                        dx.row_mut(blk * t + s).assign(&dxs.row(blk));
                    }
                    dh = dgates.dot(&wh.t());
                }
                store.add(x, dx);
                store.add(w_ih, dwi);
                store.add(w_hh, dwh);
                store.add(bias, db);
            })),
        )
    }

    /// Per-block `q_blk (t,d) @ k_blk (t,d)^T`, laid out as `(b*t, t)`.
    pub fn blocked_matmul_nt(&mut self, q: NodeId, k: NodeId, b: usize, t: usize) -> NodeId {
        let qv = self.nodes[q.0].value.clone();
        let kv = self.nodes[k.0].value.clone();
        let mut value = Array2::zeros((b * t, t));
        for blk in 0..b {
            let qs = qv.slice(s![blk * t..(blk + 1) * t, ..]);
            let ks = kv.slice(s![blk * t..(blk + 1) * t, ..]);
            value
                .slice_mut(s![blk * t..(blk + 1) * t, ..])
                .assign(&qs.dot(&ks.t()));
        }
        self.push(
            value,
            Some(Box::new(move |g, store| {
                let mut dq = Array2::zeros(qv.raw_dim());
                let mut dk = Array2::zeros(kv.raw_dim());
                for blk in 0..b {
                    let r = s![blk * t..(blk + 1) * t, ..];
                    let gs = g.slice(r);
                    let qs = qv.slice(r);
                    let ks = kv.slice(r);
                    dq.slice_mut(r).assign(&gs.dot(&ks));
                    dk.slice_mut(r).assign(&gs.t().dot(&qs));
                }
                store.add(q, dq);
                store.add(k, dk);
            })),
        )
    }

    /// Per-block `a_blk (t,t) @ v_blk (t,d)`, inputs `(b*t, t)` and
    /// `(b*t, d)`.
    pub fn blocked_matmul(&mut self, a: NodeId, v: NodeId, b: usize, t: usize) -> NodeId {
        let av = self.nodes[a.0].value.clone();
        let vv = self.nodes[v.0].value.clone();
        let mut value = Array2::zeros((b * t, vv.ncols()));
        for blk in 0..b {
            let r = s![blk * t..(blk + 1) * t, ..];
            value.slice_mut(r).assign(&av.slice(r).dot(&vv.slice(r)));
        }
        self.push(
            value,
            Some(Box::new(move |g, store| {
                let mut da = Array2::zeros(av.raw_dim());
                let mut dv = Array2::zeros(vv.raw_dim());
                for blk in 0..b {
                    let r = s![blk * t..(blk + 1) * t, ..];
                    let gs = g.slice(r);
                    da.slice_mut(r).assign(&gs.dot(&vv.slice(r).t()));
                    dv.slice_mut(r).assign(&av.slice(r).t().dot(&gs));
                }
                store.add(a, da);
                store.add(v, dv);
            })),
        )
    }
}

/// Row-wise softmax with max-subtraction stabilization (plain function; the
/// tape op and inference paths share it).
pub fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - mx).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::check::{numerical_grad, relative_error};
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn randn(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0))
    }

    /// Checks analytic vs numerical gradients of `f` w.r.t. every input.
    fn gradcheck<F>(inputs: &[Array2<f64>], f: F, tol: f64)
    where
        F: Fn(&mut Tape, &[NodeId]) -> NodeId,
    {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = inputs.iter().map(|x| tape.input(x.clone())).collect();
        let loss = f(&mut tape, &ids);
        assert_eq!(tape.value(loss).dim(), (1, 1));
        let store = tape.backward(loss);
        for (i, x) in inputs.iter().enumerate() {
            let analytic = store.grad(ids[i], x.dim());
            let numeric = numerical_grad(inputs, i, 1e-5, |vals| {
                let mut t2 = Tape::new();
                let ids2: Vec<NodeId> = vals.iter().map(|v| t2.input(v.clone())).collect();
                let l2 = f(&mut t2, &ids2);
                t2.scalar(l2)
            });
            let err = relative_error(&analytic, &numeric);
            assert!(
                err <= tol,
                "input {i}: relative error {err:.3e} exceeds {tol:.1e}\nanalytic:\n{analytic:?}\nnumeric:\n{numeric:?}"
            );
        }
    }

    fn sum_all(tape: &mut Tape, x: NodeId) -> NodeId {
        // reduce to a scalar through ops already under test elsewhere
        let (r, c) = tape.value(x).dim();
        let ones_r = tape.input(Array2::ones((1, r)));
        let ones_c = tape.input(Array2::ones((c, 1)));
        let rowsum = tape.matmul(ones_r, x);
        tape.matmul(rowsum, ones_c)
    }

    #[test]
    fn grad_linear_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            let x = randn(&mut rng, 3, 4);
            let w = randn(&mut rng, 4, 2);
            let b = randn(&mut rng, 1, 2);
            gradcheck(&[x, w, b], |t, ids| {
                let h = t.matmul(ids[0], ids[1]);
                let h = t.add_row_bias(h, ids[2]);
                let h = t.relu(h);
                sum_all(t, h)
            }, 1e-6);
        }
    }

    #[test]
    fn grad_elementwise_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = randn(&mut rng, 2, 3);
        let b = randn(&mut rng, 2, 3);
        gradcheck(&[a.clone(), b], |t, ids| {
            let m = t.mul(ids[0], ids[1]);
            let s = t.sigmoid(m);
            let h = t.tanh(s);
            let d = t.sub(h, ids[0]);
            let sc = t.scale(d, 1.7);
            sum_all(t, sc)
        }, 1e-6);
        gradcheck(&[a], |t, ids| {
            let s = t.softmax_rows(ids[0]);
            let n = t.l2_normalize_rows(s);
            sum_all(t, n)
        }, 1e-6);
    }

    #[test]
    fn grad_matmul_nt_and_gather() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = randn(&mut rng, 3, 4);
        let b = randn(&mut rng, 5, 4);
        gradcheck(&[a, b], |t, ids| {
            let s = t.matmul_nt(ids[0], ids[1]);
            let g = t.gather_rows(s, vec![0, 2, 2]);
            sum_all(t, g)
        }, 1e-6);
    }

    #[test]
    fn grad_mean_blocks_and_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = randn(&mut rng, 6, 3); // 2 blocks of 3
        let mask = randn(&mut rng, 6, 3).mapv(|v| if v > 0.0 { 1.25 } else { 0.0 });
        gradcheck(&[x], |t, ids| {
            let m = t.mul_mask(ids[0], mask.clone());
            let p = t.mean_rows_blocks(m, 3);
            sum_all(t, p)
        }, 1e-6);
    }

    #[test]
    fn grad_cross_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let logits = randn(&mut rng, 4, 3);
            gradcheck(&[logits], |t, ids| {
                t.cross_entropy_mean(ids[0], vec![0, 2, 1, 1])
            }, 1e-6);
        }
    }

    #[test]
    fn grad_ntxent_pipeline() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..5 {
            let z = randn(&mut rng, 6, 4) + 0.5; // keep rows away from zero
            gradcheck(&[z], |t, ids| {
                let zn = t.l2_normalize_rows(ids[0]);
                let s = t.matmul_nt(zn, zn);
                let s = t.scale(s, 1.0 / 0.5);
                t.ntxent_pairs(s)
            }, 1e-6);
        }
    }

    #[test]
    fn grad_conv1d() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (b, t_len, c_in, c_out) = (2, 5, 3, 4);
        let x = randn(&mut rng, b * t_len, c_in);
        let w = randn(&mut rng, 3 * c_in, c_out);
        let bias = randn(&mut rng, 1, c_out);
        gradcheck(&[x, w, bias], |t, ids| {
            let y = t.conv1d_same(ids[0], ids[1], ids[2], b, t_len);
            let y = t.relu(y);
            sum_all(t, y)
        }, 1e-6);
    }

    #[test]
    fn grad_lstm() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (b, t_len, c_in, h) = (2, 4, 3, 3);
        let x = randn(&mut rng, b * t_len, c_in);
        let w_ih = randn(&mut rng, c_in, 4 * h);
        let w_hh = randn(&mut rng, h, 4 * h);
        let bias = randn(&mut rng, 1, 4 * h);
        gradcheck(&[x, w_ih, w_hh, bias], |t, ids| {
            let y = t.lstm_last(ids[0], ids[1], ids[2], ids[3], b, t_len);
            sum_all(t, y)
        }, 1e-6);
    }

    #[test]
    fn grad_blocked_attention_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (b, t_len, d) = (2, 3, 4);
        let q = randn(&mut rng, b * t_len, d);
        let k = randn(&mut rng, b * t_len, d);
        let v = randn(&mut rng, b * t_len, d);
        gradcheck(&[q, k, v], |t, ids| {
            let s = t.blocked_matmul_nt(ids[0], ids[1], b, t_len);
            let s = t.scale(s, 1.0 / (d as f64).sqrt());
            let a = t.softmax_rows(s);
            let out = t.blocked_matmul(a, ids[2], b, t_len);
            sum_all(t, out)
        }, 1e-6);
    }

    #[test]
    fn backward_accumulates_shared_nodes() {
        // y = x*x + x: grad must sum both paths (2x + 1)
        let mut tape = Tape::new();
        let x = tape.input(Array2::from_elem((1, 1), 3.0));
        let sq = tape.mul(x, x);
        let y = tape.add(sq, x);
        let store = tape.backward(y);
        let g = store.grad(x, (1, 1));
        assert!((g[(0, 0)] - 7.0).abs() < 1e-12);
    }
}
