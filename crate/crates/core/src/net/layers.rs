//! Layer kernels with hand-written reverse mode.
//!
//! Every layer maps a sequence to a sequence. A sequence is stored row-major
//! as `steps x dim`. Parameters live in one flat slice; each layer knows its
//! offset into it and the order of its blocks.

use serde::{Deserialize, Serialize};

/// A `steps x dim` row-major sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Seq {
    pub steps: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Seq {
    pub fn zeros(steps: usize, dim: usize) -> Self {
        Self {
            steps,
            dim,
            data: vec![0.0; steps * dim],
        }
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn row_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn last(&self) -> &[f64] {
        self.row(self.steps - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation output.
    #[inline]
    fn slope(self, a: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }

    /// Init gain for variance scaling.
    pub(crate) fn gain(self) -> f64 {
        match self {
            Activation::Relu => 2.0,
            _ => 1.0,
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `out += W x` for row-major `W` of shape `out.len() x x.len()`.
#[inline]
fn matvec_acc(w: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `out += W^T d`.
#[inline]
fn matvec_t_acc(w: &[f64], d: &[f64], out: &mut [f64]) {
    let cols = out.len();
    for (&di, row) in d.iter().zip(w.chunks_exact(cols)) {
        if di != 0.0 {
            for (o, &wij) in out.iter_mut().zip(row) {
                *o += wij * di;
            }
        }
    }
}

/// `g += d x^T`.
#[inline]
fn outer_acc(g: &mut [f64], d: &[f64], x: &[f64]) {
    let cols = x.len();
    for (&di, row) in d.iter().zip(g.chunks_exact_mut(cols)) {
        if di != 0.0 {
            for (gij, &xj) in row.iter_mut().zip(x) {
                *gij += di * xj;
            }
        }
    }
}

#[inline]
fn add_acc(g: &mut [f64], d: &[f64]) {
    for (a, b) in g.iter_mut().zip(d) {
        *a += b;
    }
}

/// One parameter block inside a layer, for reporting and init.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
    /// Fan-in used for init; zero marks a bias block.
    #[serde(skip)]
    pub fan_in: usize,
    #[serde(skip)]
    pub gain: f64,
    #[serde(skip)]
    pub bias_fill: f64,
}

impl Block {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    /// Per-step affine map followed by an activation.
    Dense {
        input: usize,
        output: usize,
        act: Activation,
        offset: usize,
    },
    /// Gated recurrent unit with gate order (reset, update, candidate).
    Gru { input: usize, hidden: usize, offset: usize },
    /// LSTM with gate order (input, forget, cell, output).
    Lstm { input: usize, hidden: usize, offset: usize },
    /// Zero-left-padded dilated causal convolution; adds the input back when
    /// channel counts match.
    Conv {
        input: usize,
        output: usize,
        kernel: usize,
        dilation: usize,
        act: Activation,
        offset: usize,
    },
}

#[derive(Debug, Clone)]
pub enum LayerCache {
    Dense { x: Seq, a: Seq },
    Gru { x: Seq, h: Seq, gates: Vec<GruStep> },
    Lstm { x: Seq, h: Seq, steps: Vec<LstmStep> },
    Conv { x: Seq, a: Seq },
}

#[derive(Debug, Clone)]
pub struct GruStep {
    r: Vec<f64>,
    z: Vec<f64>,
    n: Vec<f64>,
    /// `W_hn h + b_hn`, needed for the reset-gate gradient.
    hn: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LstmStep {
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    c: Vec<f64>,
    c_prev: Vec<f64>,
}

impl Layer {
    pub fn output_dim(&self) -> usize {
        match *self {
            Layer::Dense { output, .. } | Layer::Conv { output, .. } => output,
            Layer::Gru { hidden, .. } | Layer::Lstm { hidden, .. } => hidden,
        }
    }

    pub fn blocks(&self) -> Vec<Block> {
        let mut out = Vec::new();
        let mut push = |name: &str, shape: Vec<usize>, fan_in: usize, gain: f64, bias_fill: f64| {
            let offset = out.last().map_or(self.offset(), |b: &Block| b.offset + b.len());
            out.push(Block {
                name: name.to_string(),
                offset,
                shape,
                fan_in,
                gain,
                bias_fill,
            });
        };
        match *self {
            Layer::Dense { input, output, act, .. } => {
                push("weight", vec![output, input], input, act.gain(), 0.0);
                push("bias", vec![output], 0, 0.0, 0.0);
            }
            Layer::Gru { input, hidden, .. } => {
                push("weight_input", vec![3 * hidden, input], input, 1.0, 0.0);
                push("weight_hidden", vec![3 * hidden, hidden], hidden, 1.0, 0.0);
                push("bias_input", vec![3 * hidden], 0, 0.0, 0.0);
                push("bias_hidden", vec![3 * hidden], 0, 0.0, 0.0);
            }
            Layer::Lstm { input, hidden, .. } => {
                push("weight_input", vec![4 * hidden, input], input, 1.0, 0.0);
                push("weight_hidden", vec![4 * hidden, hidden], hidden, 1.0, 0.0);
                push("bias", vec![4 * hidden], 0, 0.0, 0.0);
            }
            Layer::Conv {
                input,
                output,
                kernel,
                act,
                ..
            } => {
                push("weight", vec![output, input, kernel], input * kernel, act.gain(), 0.0);
                push("bias", vec![output], 0, 0.0, 0.0);
            }
        }
        out
    }

    pub fn offset(&self) -> usize {
        match *self {
            Layer::Dense { offset, .. }
            | Layer::Gru { offset, .. }
            | Layer::Lstm { offset, .. }
            | Layer::Conv { offset, .. } => offset,
        }
    }

    pub fn param_count(&self) -> usize {
        match *self {
            Layer::Dense { input, output, .. } => output * input + output,
            Layer::Gru { input, hidden, .. } => 3 * hidden * (input + hidden + 2),
            Layer::Lstm { input, hidden, .. } => 4 * hidden * (input + hidden + 1),
            Layer::Conv {
                input, output, kernel, ..
            } => output * input * kernel + output,
        }
    }

    /// Whether `cache` was produced by a layer of this kind and input width.
    pub fn accepts(&self, cache: &LayerCache) -> bool {
        match (self, cache) {
            (Layer::Dense { input, .. }, LayerCache::Dense { x, .. })
            | (Layer::Gru { input, .. }, LayerCache::Gru { x, .. })
            | (Layer::Lstm { input, .. }, LayerCache::Lstm { x, .. })
            | (Layer::Conv { input, .. }, LayerCache::Conv { x, .. }) => x.dim == *input,
            _ => false,
        }
    }

    fn residual(&self) -> bool {
        matches!(*self, Layer::Conv { input, output, .. } if input == output)
    }

    pub fn forward(&self, params: &[f64], x: Seq) -> (Seq, LayerCache) {
        let p = &params[self.offset()..self.offset() + self.param_count()];
        match *self {
            Layer::Dense { input, output, act, .. } => {
                let (w, b) = p.split_at(output * input);
                let mut a = Seq::zeros(x.steps, output);
                for t in 0..x.steps {
                    let row = a.row_mut(t);
                    row.copy_from_slice(b);
                    matvec_acc(w, x.row(t), row);
                    for v in row.iter_mut() {
                        *v = act.apply(*v);
                    }
                }
                (a.clone(), LayerCache::Dense { x, a })
            }
            Layer::Gru { input, hidden, .. } => {
                let hh = 3 * hidden;
                let (w_x, rest) = p.split_at(hh * input);
                let (w_h, rest) = rest.split_at(hh * hidden);
                let (b_x, b_h) = rest.split_at(hh);
                let mut h = Seq::zeros(x.steps, hidden);
                let mut gates = Vec::with_capacity(x.steps);
                let mut prev = vec![0.0; hidden];
                let mut ax = vec![0.0; hh];
                let mut ah = vec![0.0; hh];
                for t in 0..x.steps {
                    ax.copy_from_slice(b_x);
                    matvec_acc(w_x, x.row(t), &mut ax);
                    ah.copy_from_slice(b_h);
                    matvec_acc(w_h, &prev, &mut ah);
                    let r: Vec<f64> = (0..hidden).map(|k| sigmoid(ax[k] + ah[k])).collect();
                    let z: Vec<f64> = (0..hidden)
                        .map(|k| sigmoid(ax[hidden + k] + ah[hidden + k]))
                        .collect();
                    let hn = ah[2 * hidden..].to_vec();
                    let n: Vec<f64> = (0..hidden)
                        .map(|k| (ax[2 * hidden + k] + r[k] * hn[k]).tanh())
                        .collect();
                    let row = h.row_mut(t);
                    for k in 0..hidden {
                        row[k] = (1.0 - z[k]) * n[k] + z[k] * prev[k];
                    }
                    prev.copy_from_slice(row);
                    gates.push(GruStep { r, z, n, hn });
                }
                (h.clone(), LayerCache::Gru { x, h, gates })
            }
            Layer::Lstm { input, hidden, .. } => {
                let g4 = 4 * hidden;
                let (w_x, rest) = p.split_at(g4 * input);
                let (w_h, b) = rest.split_at(g4 * hidden);
                let mut h = Seq::zeros(x.steps, hidden);
                let mut steps = Vec::with_capacity(x.steps);
                let mut h_prev = vec![0.0; hidden];
                let mut c_prev = vec![0.0; hidden];
                let mut a = vec![0.0; g4];
                for t in 0..x.steps {
                    a.copy_from_slice(b);
                    matvec_acc(w_x, x.row(t), &mut a);
                    matvec_acc(w_h, &h_prev, &mut a);
                    let i: Vec<f64> = a[..hidden].iter().map(|&v| sigmoid(v)).collect();
                    let f: Vec<f64> = a[hidden..2 * hidden].iter().map(|&v| sigmoid(v)).collect();
                    let g: Vec<f64> = a[2 * hidden..3 * hidden].iter().map(|&v| v.tanh()).collect();
                    let o: Vec<f64> = a[3 * hidden..].iter().map(|&v| sigmoid(v)).collect();
                    let c: Vec<f64> = (0..hidden).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
                    let row = h.row_mut(t);
                    for k in 0..hidden {
                        row[k] = o[k] * c[k].tanh();
                    }
                    h_prev.copy_from_slice(row);
                    let step = LstmStep {
                        i,
                        f,
                        g,
                        o,
                        c_prev: std::mem::replace(&mut c_prev, c.clone()),
                        c,
                    };
                    steps.push(step);
                }
                (h.clone(), LayerCache::Lstm { x, h, steps })
            }
            Layer::Conv {
                input,
                output,
                kernel,
                dilation,
                act,
                ..
            } => {
                let (w, b) = p.split_at(output * input * kernel);
                let mut a = Seq::zeros(x.steps, output);
                for t in 0..x.steps {
                    let row = a.row_mut(t);
                    row.copy_from_slice(b);
                    for k in 0..kernel {
                        let shift = (kernel - 1 - k) * dilation;
                        if shift > t {
                            continue;
                        }
                        let src = x.row(t - shift);
                        for (o, out) in row.iter_mut().enumerate() {
                            let base = (o * input) * kernel + k;
                            let mut acc = 0.0;
                            for (c, &xv) in src.iter().enumerate() {
                                acc += w[base + c * kernel] * xv;
                            }
                            *out += acc;
                        }
                    }
                    for v in row.iter_mut() {
                        *v = act.apply(*v);
                    }
                }
                let mut y = a.clone();
                if self.residual() {
                    add_acc(&mut y.data, &x.data);
                }
                (y, LayerCache::Conv { x, a })
            }
        }
    }

    /// Accumulates parameter gradients into `grad` and returns the gradient
    /// with respect to the layer input.
    pub fn backward(&self, params: &[f64], cache: &LayerCache, d_out: &Seq, grad: &mut [f64]) -> Seq {
        let range = self.offset()..self.offset() + self.param_count();
        let p = &params[range.clone()];
        let g = &mut grad[range];
        match (self, cache) {
            (&Layer::Dense { input, output, act, .. }, LayerCache::Dense { x, a }) => {
                let (w, _) = p.split_at(output * input);
                let (g_w, g_b) = g.split_at_mut(output * input);
                let mut dx = Seq::zeros(x.steps, input);
                let mut dz = vec![0.0; output];
                for t in 0..x.steps {
                    for ((dzk, &dk), &ak) in dz.iter_mut().zip(d_out.row(t)).zip(a.row(t)) {
                        *dzk = dk * act.slope(ak);
                    }
                    outer_acc(g_w, &dz, x.row(t));
                    add_acc(g_b, &dz);
                    matvec_t_acc(w, &dz, dx.row_mut(t));
                }
                dx
            }
            (&Layer::Gru { input, hidden, .. }, LayerCache::Gru { x, h, gates }) => {
                let hh = 3 * hidden;
                let (w_x, rest) = p.split_at(hh * input);
                let (w_h, _) = rest.split_at(hh * hidden);
                let (g_wx, rest) = g.split_at_mut(hh * input);
                let (g_wh, rest) = rest.split_at_mut(hh * hidden);
                let (g_bx, g_bh) = rest.split_at_mut(hh);

                let mut dx = Seq::zeros(x.steps, input);
                let mut dh_next = vec![0.0; hidden];
                let mut dax = vec![0.0; hh];
                let mut dah = vec![0.0; hh];
                let zeros = vec![0.0; hidden];
                for t in (0..x.steps).rev() {
                    let GruStep { r, z, n, hn } = &gates[t];
                    let h_prev = if t == 0 { &zeros[..] } else { h.row(t - 1) };
                    let mut dh_prev = vec![0.0; hidden];
                    for k in 0..hidden {
                        let dh = d_out.row(t)[k] + dh_next[k];
                        let dn = dh * (1.0 - z[k]);
                        let dz = dh * (h_prev[k] - n[k]);
                        dh_prev[k] = dh * z[k];
                        let dan = dn * (1.0 - n[k] * n[k]);
                        let dr = dan * hn[k];
                        let dar = dr * r[k] * (1.0 - r[k]);
                        let daz = dz * z[k] * (1.0 - z[k]);
                        dax[k] = dar;
                        dax[hidden + k] = daz;
                        dax[2 * hidden + k] = dan;
                        dah[k] = dar;
                        dah[hidden + k] = daz;
                        dah[2 * hidden + k] = dan * r[k];
                    }
                    outer_acc(g_wx, &dax, x.row(t));
                    outer_acc(g_wh, &dah, h_prev);
                    add_acc(g_bx, &dax);
                    add_acc(g_bh, &dah);
                    matvec_t_acc(w_h, &dah, &mut dh_prev);
                    matvec_t_acc(w_x, &dax, dx.row_mut(t));
                    dh_next = dh_prev;
                }
                dx
            }
            (&Layer::Lstm { input, hidden, .. }, LayerCache::Lstm { x, h, steps }) => {
                let g4 = 4 * hidden;
                let (w_x, rest) = p.split_at(g4 * input);
                let (w_h, _) = rest.split_at(g4 * hidden);
                let (g_wx, rest) = g.split_at_mut(g4 * input);
                let (g_wh, g_b) = rest.split_at_mut(g4 * hidden);

                let mut dx = Seq::zeros(x.steps, input);
                let mut dh_next = vec![0.0; hidden];
                let mut dc_next = vec![0.0; hidden];
                let mut da = vec![0.0; g4];
                let zeros = vec![0.0; hidden];
                for t in (0..x.steps).rev() {
                    let LstmStep { i, f, g, o, c, c_prev } = &steps[t];
                    let h_prev = if t == 0 { &zeros[..] } else { h.row(t - 1) };
                    for k in 0..hidden {
                        let dh = d_out.row(t)[k] + dh_next[k];
                        let tc = c[k].tanh();
                        let d_o = dh * tc;
                        let dc = dc_next[k] + dh * o[k] * (1.0 - tc * tc);
                        let d_i = dc * g[k];
                        let d_g = dc * i[k];
                        let d_f = dc * c_prev[k];
                        dc_next[k] = dc * f[k];
                        da[k] = d_i * i[k] * (1.0 - i[k]);
                        da[hidden + k] = d_f * f[k] * (1.0 - f[k]);
                        da[2 * hidden + k] = d_g * (1.0 - g[k] * g[k]);
                        da[3 * hidden + k] = d_o * o[k] * (1.0 - o[k]);
                    }
                    outer_acc(g_wx, &da, x.row(t));
                    outer_acc(g_wh, &da, h_prev);
                    add_acc(g_b, &da);
                    dh_next.iter_mut().for_each(|v| *v = 0.0);
                    matvec_t_acc(w_h, &da, &mut dh_next);
                    matvec_t_acc(w_x, &da, dx.row_mut(t));
                }
                dx
            }
            (
                &Layer::Conv {
                    input,
                    output,
                    kernel,
                    dilation,
                    act,
                    ..
                },
                LayerCache::Conv { x, a },
            ) => {
                let (w, _) = p.split_at(output * input * kernel);
                let (g_w, g_b) = g.split_at_mut(output * input * kernel);
                let mut dx = if self.residual() {
                    d_out.clone()
                } else {
                    Seq::zeros(x.steps, input)
                };
                let mut dz = vec![0.0; output];
                for t in 0..x.steps {
                    for ((dzk, &dk), &ak) in dz.iter_mut().zip(d_out.row(t)).zip(a.row(t)) {
                        *dzk = dk * act.slope(ak);
                    }
                    add_acc(g_b, &dz);
                    for k in 0..kernel {
                        let shift = (kernel - 1 - k) * dilation;
                        if shift > t {
                            continue;
                        }
                        let src = t - shift;
                        for (o, &d) in dz.iter().enumerate() {
                            if d == 0.0 {
                                continue;
                            }
                            let base = (o * input) * kernel + k;
                            for c in 0..input {
                                g_w[base + c * kernel] += d * x.row(src)[c];
                                dx.data[src * input + c] += d * w[base + c * kernel];
                            }
                        }
                    }
                }
                dx
            }
            _ => unreachable!("layer cache does not match layer kind"),
        }
    }
}
