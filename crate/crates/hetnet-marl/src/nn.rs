//! Minimal dense network engine for the per-agent Q-networks.
//!
//! A [`DenseNet`] is a stack of affine layers with leaky-ReLU activations
//! feeding a dueling head: a scalar state value `V` and per-action advantages
//! `A`, combined as `Q(a) = V + A(a) - mean(A)`. The mean subtraction
//! structurally enforces the zero-sum constraint on advantages, which also
//! makes the decomposition identifiable.
//!
//! Gradients are computed exactly by hand-rolled backprop for any loss that
//! can express itself as d(loss)/d(Q) at the network outputs (see
//! [`OutputLoss`]), and applied with bias-corrected Adam. Everything is `f64`;
//! the networks are tiny and reproducibility matters more than speed here.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;
use thiserror::Error;

/// One affine layer, `y = W x + b` with `W` stored as (out, in).
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Affine {
    fn zeros(out: usize, input: usize) -> Affine {
        Affine { w: Array2::zeros((out, input)), b: Array1::zeros(out) }
    }

    fn apply(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.w.t()) + &self.b
    }
}

/// Dense Q-network with dueling value/advantage heads.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    pub hidden: Vec<Affine>,
    pub value: Affine,
    pub advantage: Affine,
    /// Leaky-ReLU slope on negative pre-activations.
    pub negative_slope: f64,
}

/// Per-parameter gradients in canonical layer order: hidden layers first,
/// then the value head, then the advantage head.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

/// A training loss expressed at the network outputs. `eval` receives the
/// batch Q values (rows = samples) and returns the scalar loss together with
/// d(loss)/d(Q), both already averaged over the batch.
pub trait OutputLoss {
    fn eval(&self, q: &Array2<f64>) -> (f64, Array2<f64>);
}

/// Uniform He-style initialization: weights in [-1/sqrt(fan_in),
/// +1/sqrt(fan_in)], biases zero.
pub fn init_net<R: Rng>(widths: &[usize], n_actions: usize, rng: &mut R) -> DenseNet {
    assert!(!widths.is_empty(), "need at least an input width");
    assert!(widths.iter().all(|&w| w >= 1) && n_actions >= 1);
    let mut init = |out: usize, input: usize| {
        let limit = 1.0 / (input as f64).sqrt();
        Affine {
            w: Array2::from_shape_fn((out, input), |_| rng.gen_range(-limit..=limit)),
            b: Array1::zeros(out),
        }
    };
    let hidden = widths
        .windows(2)
        .map(|pair| init(pair[1], pair[0]))
        .collect();
    let last = *widths.last().unwrap();
    DenseNet {
        hidden,
        value: init(1, last),
        advantage: init(n_actions, last),
        negative_slope: 0.1,
    }
}

impl DenseNet {
    pub fn input_width(&self) -> usize {
        self.hidden
            .first()
            .map(|l| l.w.ncols())
            .unwrap_or_else(|| self.value.w.ncols())
    }

    pub fn n_actions(&self) -> usize {
        self.advantage.w.nrows()
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.hidden.iter().map(|l| l.w.nrows()).collect()
    }

    /// All affine blocks in canonical order.
    pub fn affines(&self) -> Vec<&Affine> {
        let mut v: Vec<&Affine> = self.hidden.iter().collect();
        v.push(&self.value);
        v.push(&self.advantage);
        v
    }

    pub fn affines_mut(&mut self) -> Vec<&mut Affine> {
        let mut v: Vec<&mut Affine> = self.hidden.iter_mut().collect();
        v.push(&mut self.value);
        v.push(&mut self.advantage);
        v
    }

    fn leaky(&self, x: f64) -> f64 {
        if x >= 0.0 {
            x
        } else {
            self.negative_slope * x
        }
    }

    /// Q values for a batch of inputs (rows = samples).
    pub fn forward_batch(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        self.forward_cached(x).0
    }

    /// Q values for a single input.
    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        let x = ArrayView2::from_shape((1, input.len()), input).expect("contiguous input");
        self.forward_batch(&x).row(0).to_vec()
    }

    /// Forward pass keeping every post-activation (index 0 is the input),
    /// as needed by [`backprop`].
    fn forward_cached(&self, x: &ArrayView2<f64>) -> (Array2<f64>, Vec<Array2<f64>>) {
        assert_eq!(
            x.ncols(),
            self.input_width(),
            "input width {} does not match network input {}",
            x.ncols(),
            self.input_width()
        );
        let mut acts: Vec<Array2<f64>> = vec![x.to_owned()];
        for layer in &self.hidden {
            let post = layer
                .apply(&acts.last().unwrap().view())
                .mapv(|v| self.leaky(v));
            acts.push(post);
        }
        let h = acts.last().unwrap().view();
        let v = self.value.apply(&h);
        let a = self.advantage.apply(&h);
        let a_mean = a.mean_axis(Axis(1)).unwrap();
        let mut q = a;
        for (mut row, (&vb, &m)) in q
            .axis_iter_mut(Axis(0))
            .zip(v.column(0).iter().zip(a_mean.iter()))
        {
            row.mapv_inplace(|adv| vb + adv - m);
        }
        (q, acts)
    }
}

/// Loss value only, skipping gradient computation.
pub fn loss_value(net: &DenseNet, x: &ArrayView2<f64>, loss: &impl OutputLoss) -> f64 {
    loss.eval(&net.forward_batch(x)).0
}

/// Exact gradients of `loss` with respect to every parameter, averaged over
/// the batch exactly as the loss itself is.
pub fn loss_gradient(
    net: &DenseNet,
    x: &ArrayView2<f64>,
    loss: &impl OutputLoss,
) -> (f64, Gradients) {
    assert!(x.nrows() > 0, "empty batch");
    let (q, acts) = net.forward_cached(x);
    let (loss_value, gq) = loss.eval(&q);
    debug_assert_eq!(gq.shape(), q.shape());

    let n_actions = net.n_actions() as f64;
    // Dueling combine: dQ/dV = 1, dQ/dA(b) = [a == b] - 1/A.
    let row_sums = gq.sum_axis(Axis(1));
    let gv = row_sums.clone().insert_axis(Axis(1));
    let mut ga = gq;
    for (mut row, &s) in ga.axis_iter_mut(Axis(0)).zip(row_sums.iter()) {
        let shift = s / n_actions;
        row.mapv_inplace(|g| g - shift);
    }

    let h = acts.last().unwrap();
    let d_value = (gv.t().dot(h), gv.sum_axis(Axis(0)));
    let d_advantage = (ga.t().dot(h), ga.sum_axis(Axis(0)));

    let mut dh = gv.dot(&net.value.w) + ga.dot(&net.advantage.w);
    let mut hidden_grads: Vec<(Array2<f64>, Array1<f64>)> = Vec::with_capacity(net.hidden.len());
    for (layer, (input, post)) in net
        .hidden
        .iter()
        .zip(acts.windows(2).map(|w| (&w[0], &w[1])))
        .rev()
    {
        // Leaky-ReLU derivative from the post-activation sign.
        let mut dpre = dh;
        for (dp, &p) in dpre.iter_mut().zip(post.iter()) {
            if p < 0.0 {
                *dp *= net.negative_slope;
            }
        }
        hidden_grads.push((dpre.t().dot(input), dpre.sum_axis(Axis(0))));
        dh = dpre.dot(&layer.w);
    }
    hidden_grads.reverse();
    hidden_grads.push(d_value);
    hidden_grads.push(d_advantage);
    (loss_value, Gradients { layers: hidden_grads })
}

/// Adam optimizer state mirroring a network's parameter shapes.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<(Array2<f64>, Array1<f64>)>,
    pub v: Vec<(Array2<f64>, Array1<f64>)>,
    pub step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(net: &DenseNet, learning_rate: f64) -> AdamState {
        let zeros: Vec<(Array2<f64>, Array1<f64>)> = net
            .affines()
            .iter()
            .map(|a| (Array2::zeros(a.w.raw_dim()), Array1::zeros(a.b.raw_dim())))
            .collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(net: &mut DenseNet, adam: &mut AdamState, grads: &Gradients) {
    adam.step += 1;
    let t = adam.step as i32;
    let c1 = 1.0 - adam.beta1.powi(t);
    let c2 = 1.0 - adam.beta2.powi(t);
    let (b1, b2, lr, eps) = (adam.beta1, adam.beta2, adam.learning_rate, adam.epsilon);
    let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    };
    for (((affine, grad), m), v) in net
        .affines_mut()
        .into_iter()
        .zip(&grads.layers)
        .zip(adam.m.iter_mut())
        .zip(adam.v.iter_mut())
    {
        assert_eq!(affine.w.raw_dim(), grad.0.raw_dim(), "gradient shape mismatch");
        for ((p, m), (v, g)) in affine
            .w
            .iter_mut()
            .zip(m.0.iter_mut())
            .zip(v.0.iter_mut().zip(grad.0.iter()))
        {
            update(p, m, v, *g);
        }
        for ((p, m), (v, g)) in affine
            .b
            .iter_mut()
            .zip(m.1.iter_mut())
            .zip(v.1.iter_mut().zip(grad.1.iter()))
        {
            update(p, m, v, *g);
        }
    }
}

// ---------------------------------------------------------------------------
// Checkpoint format
// ---------------------------------------------------------------------------

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("checkpoint parse error: {0}")]
    Parse(String),
}

const FORMAT_TAG: &str = "densenet v1";

/// Serialize to the versioned text format: layer widths first, then row-major
/// weights and biases with 17 significant digits, so a round trip through
/// [`read_checkpoint`] is bit-exact.
pub fn write_checkpoint<W: Write>(net: &DenseNet, out: &mut W) -> Result<(), CheckpointError> {
    let mut s = String::new();
    writeln!(s, "{FORMAT_TAG}").unwrap();
    writeln!(s, "slope {:.16e}", net.negative_slope).unwrap();
    writeln!(s, "input {}", net.input_width()).unwrap();
    write!(s, "hidden").unwrap();
    for w in net.hidden_widths() {
        write!(s, " {w}").unwrap();
    }
    writeln!(s).unwrap();
    writeln!(s, "actions {}", net.n_actions()).unwrap();
    let names: Vec<String> = (0..net.hidden.len())
        .map(|i| format!("hidden{i}"))
        .chain(["value".to_string(), "advantage".to_string()])
        .collect();
    for (name, affine) in names.iter().zip(net.affines()) {
        writeln!(s, "weights {name} {} {}", affine.w.nrows(), affine.w.ncols()).unwrap();
        for row in affine.w.rows() {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(s, "{}", line.join(" ")).unwrap();
        }
        writeln!(s, "bias {name} {}", affine.b.len()).unwrap();
        let line: Vec<String> = affine.b.iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(s, "{}", line.join(" ")).unwrap();
    }
    writeln!(s, "end").unwrap();
    out.write_all(s.as_bytes())?;
    Ok(())
}

pub fn save_checkpoint(net: &DenseNet, path: &Path) -> Result<(), CheckpointError> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_checkpoint(net, &mut file)
}

pub fn read_checkpoint<R: BufRead>(input: R) -> Result<DenseNet, CheckpointError> {
    let parse = |msg: &str| CheckpointError::Parse(msg.to_string());
    let mut lines = input.lines();
    let mut next = move || -> Result<String, CheckpointError> {
        lines
            .next()
            .ok_or_else(|| parse("unexpected end of file"))?
            .map_err(CheckpointError::Io)
    };
    if next()?.trim() != FORMAT_TAG {
        return Err(parse(&format!("expected header '{FORMAT_TAG}'")));
    }
    let field = |line: &str, key: &str| -> Result<Vec<String>, CheckpointError> {
        let mut it = line.split_whitespace();
        if it.next() != Some(key) {
            return Err(parse(&format!("expected '{key}' line, got '{line}'")));
        }
        Ok(it.map(str::to_string).collect())
    };
    let num = |tok: &str| -> Result<f64, CheckpointError> {
        tok.parse::<f64>()
            .map_err(|_| parse(&format!("bad number '{tok}'")))
    };
    let dim = |tok: &str| -> Result<usize, CheckpointError> {
        tok.parse::<usize>()
            .map_err(|_| parse(&format!("bad dimension '{tok}'")))
    };

    let slope = num(
        field(&next()?, "slope")?
            .first()
            .ok_or_else(|| parse("missing slope value"))?,
    )?;
    let input = dim(
        field(&next()?, "input")?
            .first()
            .ok_or_else(|| parse("missing input width"))?,
    )?;
    let hidden_widths: Vec<usize> = field(&next()?, "hidden")?
        .iter()
        .map(|t| dim(t))
        .collect::<Result<_, _>>()?;
    let actions = dim(
        field(&next()?, "actions")?
            .first()
            .ok_or_else(|| parse("missing action count"))?,
    )?;

    let mut widths = vec![input];
    widths.extend(&hidden_widths);
    let names: Vec<String> = (0..hidden_widths.len())
        .map(|i| format!("hidden{i}"))
        .chain(["value".to_string(), "advantage".to_string()])
        .collect();
    let last = *widths.last().unwrap();
    let shapes: Vec<(usize, usize)> = widths
        .windows(2)
        .map(|p| (p[1], p[0]))
        .chain([(1, last), (actions, last)])
        .collect();

    let mut net = DenseNet {
        hidden: hidden_widths
            .iter()
            .zip(&widths)
            .map(|(&out, &inp)| Affine::zeros(out, inp))
            .collect(),
        value: Affine::zeros(1, last),
        advantage: Affine::zeros(actions, last),
        negative_slope: slope,
    };

    for ((name, (rows, cols)), affine) in
        names.iter().zip(shapes).zip(net.affines_mut())
    {
        let spec = field(&next()?, "weights")?;
        if spec.first().map(String::as_str) != Some(name.as_str()) {
            return Err(parse(&format!("expected weights for '{name}'")));
        }
        if spec.get(1).map(|t| dim(t)).transpose()? != Some(rows)
            || spec.get(2).map(|t| dim(t)).transpose()? != Some(cols)
        {
            return Err(parse(&format!("shape mismatch for '{name}'")));
        }
        for r in 0..rows {
            let line = next()?;
            let values: Vec<&str> = line.split_whitespace().collect();
            if values.len() != cols {
                return Err(parse(&format!("row {r} of '{name}' has {} values, expected {cols}", values.len())));
            }
            for (c, tok) in values.iter().enumerate() {
                affine.w[[r, c]] = num(tok)?;
            }
        }
        let bspec = field(&next()?, "bias")?;
        if bspec.first().map(String::as_str) != Some(name.as_str())
            || bspec.get(1).map(|t| dim(t)).transpose()? != Some(rows)
        {
            return Err(parse(&format!("bad bias line for '{name}'")));
        }
        let line = next()?;
        let values: Vec<&str> = line.split_whitespace().collect();
        if values.len() != rows {
            return Err(parse(&format!("bias of '{name}' has {} values, expected {rows}", values.len())));
        }
        for (i, tok) in values.iter().enumerate() {
            affine.b[i] = num(tok)?;
        }
    }
    if next()?.trim() != "end" {
        return Err(parse("missing 'end' marker"));
    }
    Ok(net)
}

pub fn load_checkpoint(path: &Path) -> Result<DenseNet, CheckpointError> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    read_checkpoint(file)
}

// ---------------------------------------------------------------------------
// Gradient-check support
// ---------------------------------------------------------------------------

/// Total scalar parameter count.
pub fn param_count(net: &DenseNet) -> usize {
    net.affines().iter().map(|a| a.w.len() + a.b.len()).sum()
}

/// Read/write a parameter by flat index over the canonical layer order
/// (weights row-major, then bias, per affine block).
pub fn get_param(net: &DenseNet, flat: usize) -> f64 {
    let mut i = flat;
    for a in net.affines() {
        if i < a.w.len() {
            return *a.w.iter().nth(i).unwrap();
        }
        i -= a.w.len();
        if i < a.b.len() {
            return a.b[i];
        }
        i -= a.b.len();
    }
    panic!("parameter index {flat} out of range");
}

pub fn set_param(net: &mut DenseNet, flat: usize, value: f64) {
    let mut i = flat;
    for a in net.affines_mut() {
        if i < a.w.len() {
            *a.w.iter_mut().nth(i).unwrap() = value;
            return;
        }
        i -= a.w.len();
        if i < a.b.len() {
            a.b[i] = value;
            return;
        }
        i -= a.b.len();
    }
    panic!("parameter index {flat} out of range");
}

/// Gradient of a flat parameter from a [`Gradients`] value.
pub fn get_gradient(grads: &Gradients, flat: usize) -> f64 {
    let mut i = flat;
    for (w, b) in &grads.layers {
        if i < w.len() {
            return *w.iter().nth(i).unwrap();
        }
        i -= w.len();
        if i < b.len() {
            return b[i];
        }
        i -= b.len();
    }
    panic!("gradient index {flat} out of range");
}

/// Central finite difference of the loss along one parameter coordinate.
pub fn central_difference(
    net: &mut DenseNet,
    flat: usize,
    x: &ArrayView2<f64>,
    loss: &impl OutputLoss,
    step: f64,
) -> f64 {
    let orig = get_param(net, flat);
    set_param(net, flat, orig + step);
    let plus = loss_value(net, x, loss);
    set_param(net, flat, orig - step);
    let minus = loss_value(net, x, loss);
    set_param(net, flat, orig);
    (plus - minus) / (2.0 * step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Mean squared error to fixed targets, the simplest [`OutputLoss`].
    struct MseTo {
        targets: Array2<f64>,
    }

    impl OutputLoss for MseTo {
        fn eval(&self, q: &Array2<f64>) -> (f64, Array2<f64>) {
            let b = q.nrows() as f64;
            let diff = q - &self.targets;
            let loss = diff.iter().map(|d| d * d).sum::<f64>() / b;
            (loss, diff.mapv(|d| 2.0 * d / b))
        }
    }

    fn small_net(seed: u64) -> DenseNet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        init_net(&[3, 5, 4], 3, &mut rng)
    }

    #[test]
    fn zero_net_outputs_zero() {
        let mut net = small_net(1);
        for a in net.affines_mut() {
            a.w.fill(0.0);
            a.b.fill(0.0);
        }
        let q = net.forward(&[0.3, -0.7, 2.0]);
        assert!(q.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_matches_hand_computation() {
        // 2 inputs, one hidden layer of 2, 2 actions; weights chosen so one
        // hidden unit goes negative and exercises the leaky slope.
        let net = DenseNet {
            hidden: vec![Affine {
                w: array![[1.0, -1.0], [0.5, 0.25]],
                b: array![0.1, -0.6],
            }],
            value: Affine { w: array![[2.0, 1.0]], b: array![0.5] },
            advantage: Affine {
                w: array![[1.0, 0.0], [0.0, 1.0]],
                b: array![0.0, 0.2],
            },
            negative_slope: 0.1,
        };
        let x = [0.2, 0.8];
        // pre1 = 0.2 - 0.8 + 0.1 = -0.5 -> post1 = -0.05
        // pre2 = 0.1 + 0.2 - 0.6 = -0.3 -> post2 = -0.03
        // V = 2(-0.05) + 1(-0.03) + 0.5 = 0.37
        // A = [-0.05, -0.03 + 0.2] = [-0.05, 0.17], mean = 0.06
        // Q = [0.37 - 0.11, 0.37 + 0.11] = [0.26, 0.48]
        let q = net.forward(&x);
        assert!((q[0] - 0.26).abs() < 1e-12, "{q:?}");
        assert!((q[1] - 0.48).abs() < 1e-12, "{q:?}");
    }

    #[test]
    fn dueling_outputs_sum_to_value() {
        // sum_a (Q(a) - V) = 0 by mean centering; check via the identity
        // mean(Q) == V.
        let net = small_net(2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let q = net.forward(&x);
            let xv = ArrayView2::from_shape((1, 3), &x).unwrap();
            let mut acts = xv.to_owned();
            for l in &net.hidden {
                acts = l.apply(&acts.view()).mapv(|v| net.leaky(v));
            }
            let v = net.value.apply(&acts.view())[[0, 0]];
            let centered: f64 = q.iter().map(|qa| qa - v).sum();
            assert!(centered.abs() < 1e-9, "sum of centered Q = {centered}");
        }
    }

    #[test]
    fn advantage_shift_invariance_and_value_shift() {
        let net = small_net(4);
        let x = [0.4, -1.2, 0.9];
        let q0 = net.forward(&x);
        let c = 3.7;

        let mut shifted = net.clone();
        shifted.advantage.b.mapv_inplace(|b| b + c);
        let q1 = shifted.forward(&x);
        for (a, b) in q0.iter().zip(&q1) {
            assert!((a - b).abs() < 1e-9, "advantage shift changed Q");
        }
        let argmax = |q: &[f64]| {
            q.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0
        };
        assert_eq!(argmax(&q0), argmax(&q1));

        let mut vshift = net.clone();
        vshift.value.b[0] += c;
        let q2 = vshift.forward(&x);
        for (a, b) in q0.iter().zip(&q2) {
            assert!((b - a - c).abs() < 1e-9, "value shift should move all Q by c");
        }
    }

    #[test]
    fn init_net_bounds_and_determinism() {
        let mut r1 = ChaCha8Rng::seed_from_u64(10);
        let mut r2 = ChaCha8Rng::seed_from_u64(10);
        let a = init_net(&[11, 128, 64], 11, &mut r1);
        let b = init_net(&[11, 128, 64], 11, &mut r2);
        assert_eq!(a, b);
        for (affine, fan_in) in a.affines().iter().zip([11usize, 128, 64, 64]) {
            let limit = 1.0 / (fan_in as f64).sqrt();
            assert!(affine.w.iter().all(|w| w.abs() <= limit));
            assert!(affine.b.iter().all(|&b| b == 0.0));
        }
    }

    #[test]
    fn init_net_weight_mean_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = init_net(&[100, 100], 4, &mut rng);
        let w = &net.hidden[0].w;
        let n = w.len() as f64;
        let mean = w.sum() / n;
        // Uniform on [-l, l] has std l/sqrt(3); allow 3 standard errors.
        let l = 1.0 / 10.0;
        let se = l / (3.0f64).sqrt() / n.sqrt();
        assert!(mean.abs() < 3.0 * se, "mean {mean} vs 3se {}", 3.0 * se);
    }

    #[test]
    fn clone_is_deep() {
        let mut net = small_net(5);
        let copy = net.clone();
        let x = [1.0, 2.0, 3.0];
        assert_eq!(net.forward(&x), copy.forward(&x));
        let before = copy.forward(&x);
        net.hidden[0].w[[0, 0]] += 10.0;
        assert_eq!(copy.forward(&x), before);
        assert_ne!(net.forward(&x), before);
        let copy2 = copy.clone();
        assert_eq!(copy2, copy);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut net = small_net(6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let b = 4;
        let x = Array2::from_shape_fn((b, 3), |_| rng.gen_range(-1.0..1.0));
        let targets = Array2::from_shape_fn((b, 3), |_| rng.gen_range(-1.0..1.0));
        let loss = MseTo { targets };
        let (_, grads) = loss_gradient(&net, &x.view(), &loss);
        let n = param_count(&net);
        for _ in 0..20 {
            let idx = rng.gen_range(0..n);
            let analytic = get_gradient(&grads, idx);
            let numeric = central_difference(&mut net, idx, &x.view(), &loss, 1e-5);
            let denom = analytic.abs().max(numeric.abs()).max(1e-8);
            assert!(
                ((analytic - numeric) / denom).abs() < 1e-4,
                "param {idx}: analytic {analytic} vs numeric {numeric}"
            );
        }
    }

    #[test]
    fn zero_output_gradient_gives_zero_parameter_gradient() {
        let net = small_net(8);
        let x = Array2::from_elem((2, 3), 0.5);
        // Targets equal to outputs -> zero loss and zero gradients.
        let targets = net.forward_batch(&x.view());
        let (loss, grads) = loss_gradient(&net, &x.view(), &MseTo { targets });
        assert!(loss.abs() < 1e-24);
        for (w, b) in &grads.layers {
            assert!(w.iter().all(|&g| g == 0.0));
            assert!(b.iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn duplicated_batch_leaves_mean_gradient_unchanged() {
        let net = small_net(9);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = Array2::from_shape_fn((3, 3), |_| rng.gen_range(-1.0..1.0));
        let targets = Array2::from_shape_fn((3, 3), |_| rng.gen_range(-1.0..1.0));
        let x2 = ndarray::concatenate(Axis(0), &[x.view(), x.view()]).unwrap();
        let t2 = ndarray::concatenate(Axis(0), &[targets.view(), targets.view()]).unwrap();
        let (_, g1) = loss_gradient(&net, &x.view(), &MseTo { targets });
        let (_, g2) = loss_gradient(&net, &x2.view(), &MseTo { targets: t2 });
        for ((w1, b1), (w2, b2)) in g1.layers.iter().zip(&g2.layers) {
            for (a, b) in w1.iter().zip(w2.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
            for (a, b) in b1.iter().zip(b2.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_parameters() {
        let mut net = small_net(13);
        let before = net.clone();
        let mut adam = AdamState::new(&net, 1e-4);
        let zeros = Gradients {
            layers: net
                .affines()
                .iter()
                .map(|a| (Array2::zeros(a.w.raw_dim()), Array1::zeros(a.b.raw_dim())))
                .collect(),
        };
        adam_step(&mut net, &mut adam, &zeros);
        assert_eq!(net, before);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn adam_first_step_is_signed_learning_rate() {
        let mut net = small_net(14);
        let before = net.clone();
        let mut adam = AdamState::new(&net, 1e-4);
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let grads = Gradients {
            layers: net
                .affines()
                .iter()
                .map(|a| {
                    (
                        Array2::from_shape_fn(a.w.raw_dim(), |_| rng.gen_range(-1.0..1.0f64)),
                        Array1::from_shape_fn(a.b.raw_dim(), |_| rng.gen_range(-1.0..1.0f64)),
                    )
                })
                .collect(),
        };
        adam_step(&mut net, &mut adam, &grads);
        // First bias-corrected step: -lr * g / (|g| + eps) ~= -lr * sign(g).
        for ((after, prior), grad) in net
            .affines()
            .iter()
            .zip(before.affines())
            .zip(&grads.layers)
        {
            for ((a, p), g) in after.w.iter().zip(prior.w.iter()).zip(grad.0.iter()) {
                let expect = p - 1e-4 * g / (g.abs() + 1e-8);
                assert!((a - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn adam_deterministic() {
        let run = || {
            let mut net = small_net(16);
            let mut adam = AdamState::new(&net, 1e-3);
            let x = Array2::from_elem((2, 3), 0.4);
            let targets = Array2::from_elem((2, 3), 1.0);
            for _ in 0..5 {
                let (_, g) = loss_gradient(&net, &x.view(), &MseTo { targets: targets.clone() });
                adam_step(&mut net, &mut adam, &g);
            }
            net
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let net = small_net(17);
        let mut buf = Vec::new();
        write_checkpoint(&net, &mut buf).unwrap();
        let parsed = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(parsed, net);
        // Serialize again: identical bytes.
        let mut buf2 = Vec::new();
        write_checkpoint(&parsed, &mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn checkpoint_rejects_corruption() {
        let net = small_net(18);
        let mut buf = Vec::new();
        write_checkpoint(&net, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(read_checkpoint(text.replace("densenet v1", "densenet v9").as_bytes()).is_err());
        assert!(read_checkpoint(text.replace("actions 3", "actions 4").as_bytes()).is_err());
        let truncated = &text[..text.len() / 2];
        assert!(read_checkpoint(truncated.as_bytes()).is_err());
    }
}
