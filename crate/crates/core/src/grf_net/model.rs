//! Dual-pathway network: a bidirectional LSTM over the window and an MLP on
//! the latest sample, fused by elementwise product into a linear head.

use nalgebra::DMatrix;
use ndarray::{s, Array1, Array2, ArrayView2, ArrayView3, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};

/// Outputs: normalized F_x, normalized F_z, terrain logit (sand = 1).
pub const OUTPUTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetShape {
    pub inputs: usize,
    /// LSTM units per direction.
    pub hidden: usize,
    /// Width of the first MLP layer.
    pub mlp_hidden: usize,
    /// Width of both pathway outputs and of the fused vector.
    pub fused: usize,
}

impl Default for NetShape {
    fn default() -> Self {
        Self { inputs: 9, hidden: 64, mlp_hidden: 128, fused: 64 }
    }
}

impl NetShape {
    pub fn validate(&self) -> Result<()> {
        if self.inputs == 0 || self.hidden == 0 || self.mlp_hidden == 0 || self.fused == 0 {
            return Err(Error::InvalidParam("network layer sizes must be >= 1".into()));
        }
        Ok(())
    }
}

/// One LSTM direction. Gate blocks are stacked in the order input, forget,
/// cell, output.
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    /// 4H × I
    pub w: Array2<f64>,
    /// 4H × H
    pub u: Array2<f64>,
    pub b: Array1<f64>,
}

impl Lstm {
    fn zeros(inputs: usize, hidden: usize) -> Self {
        Self {
            w: Array2::zeros((4 * hidden, inputs)),
            u: Array2::zeros((4 * hidden, hidden)),
            b: Array1::zeros(4 * hidden),
        }
    }

    fn hidden(&self) -> usize {
        self.u.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    pub shape: NetShape,
    pub fwd: Lstm,
    pub bwd: Lstm,
    /// F × 2H
    pub proj_w: Array2<f64>,
    pub proj_b: Array1<f64>,
    /// M × I
    pub mlp1_w: Array2<f64>,
    pub mlp1_b: Array1<f64>,
    /// F × M
    pub mlp2_w: Array2<f64>,
    pub mlp2_b: Array1<f64>,
    /// 3 × F
    pub head_w: Array2<f64>,
    pub head_b: Array1<f64>,
}

/// Borrowed view of one named parameter tensor.
pub struct Tensor<'a> {
    pub name: &'static str,
    pub dims: Vec<usize>,
    pub data: &'a [f64],
}

pub struct TensorMut<'a> {
    pub name: &'static str,
    pub dims: Vec<usize>,
    pub data: &'a mut [f64],
}

fn dims2(a: &Array2<f64>) -> Vec<usize> {
    vec![a.nrows(), a.ncols()]
}

macro_rules! layout {
    ($a:expr) => {
        $a.as_slice().expect("parameter tensors are contiguous")
    };
}

macro_rules! layout_mut {
    ($a:expr) => {
        $a.as_slice_mut().expect("parameter tensors are contiguous")
    };
}

impl NetParams {
    pub fn zeros(shape: NetShape) -> Self {
        let NetShape { inputs, hidden, mlp_hidden, fused } = shape;
        Self {
            shape,
            fwd: Lstm::zeros(inputs, hidden),
            bwd: Lstm::zeros(inputs, hidden),
            proj_w: Array2::zeros((fused, 2 * hidden)),
            proj_b: Array1::zeros(fused),
            mlp1_w: Array2::zeros((mlp_hidden, inputs)),
            mlp1_b: Array1::zeros(mlp_hidden),
            mlp2_w: Array2::zeros((fused, mlp_hidden)),
            mlp2_b: Array1::zeros(fused),
            head_w: Array2::zeros((OUTPUTS, fused)),
            head_b: Array1::zeros(OUTPUTS),
        }
    }

    /// Seeded initialization: uniform input weights, orthogonal recurrent
    /// blocks, forget-gate bias +1, He-normal ReLU layers, Glorot-normal
    /// projection and head.
    pub fn init<R: Rng>(shape: NetShape, rng: &mut R) -> Result<Self> {
        shape.validate()?;
        let mut p = Self::zeros(shape);
        let h = shape.hidden;
        for lstm in [&mut p.fwd, &mut p.bwd] {
            let bound = 1.0 / (h as f64).sqrt();
            let uni = Uniform::new_inclusive(-bound, bound).map_err(|e| Error::InvalidParam(e.to_string()))?;
            lstm.w.mapv_inplace(|_| uni.sample(rng));
            for gate in 0..4 {
                let q = orthogonal(h, rng);
                lstm.u.slice_mut(s![gate * h..(gate + 1) * h, ..]).assign(&q);
            }
            lstm.b.slice_mut(s![h..2 * h]).fill(1.0);
        }
        fill_normal(&mut p.proj_w, (2.0 / (2 * h + shape.fused) as f64).sqrt(), rng);
        fill_normal(&mut p.mlp1_w, (2.0 / shape.inputs as f64).sqrt(), rng);
        fill_normal(&mut p.mlp2_w, (2.0 / shape.mlp_hidden as f64).sqrt(), rng);
        fill_normal(&mut p.head_w, (2.0 / (shape.fused + OUTPUTS) as f64).sqrt(), rng);
        Ok(p)
    }

    pub fn tensors(&self) -> Vec<Tensor<'_>> {
        vec![
            Tensor { name: "fwd.w", dims: dims2(&self.fwd.w), data: layout!(self.fwd.w) },
            Tensor { name: "fwd.u", dims: dims2(&self.fwd.u), data: layout!(self.fwd.u) },
            Tensor { name: "fwd.b", dims: vec![self.fwd.b.len()], data: layout!(self.fwd.b) },
            Tensor { name: "bwd.w", dims: dims2(&self.bwd.w), data: layout!(self.bwd.w) },
            Tensor { name: "bwd.u", dims: dims2(&self.bwd.u), data: layout!(self.bwd.u) },
            Tensor { name: "bwd.b", dims: vec![self.bwd.b.len()], data: layout!(self.bwd.b) },
            Tensor { name: "proj.w", dims: dims2(&self.proj_w), data: layout!(self.proj_w) },
            Tensor { name: "proj.b", dims: vec![self.proj_b.len()], data: layout!(self.proj_b) },
            Tensor { name: "mlp1.w", dims: dims2(&self.mlp1_w), data: layout!(self.mlp1_w) },
            Tensor { name: "mlp1.b", dims: vec![self.mlp1_b.len()], data: layout!(self.mlp1_b) },
            Tensor { name: "mlp2.w", dims: dims2(&self.mlp2_w), data: layout!(self.mlp2_w) },
            Tensor { name: "mlp2.b", dims: vec![self.mlp2_b.len()], data: layout!(self.mlp2_b) },
            Tensor { name: "head.w", dims: dims2(&self.head_w), data: layout!(self.head_w) },
            Tensor { name: "head.b", dims: vec![self.head_b.len()], data: layout!(self.head_b) },
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        let Self { fwd, bwd, proj_w, proj_b, mlp1_w, mlp1_b, mlp2_w, mlp2_b, head_w, head_b, .. } = self;
        vec![
            TensorMut { name: "fwd.w", dims: dims2(&fwd.w), data: layout_mut!(fwd.w) },
            TensorMut { name: "fwd.u", dims: dims2(&fwd.u), data: layout_mut!(fwd.u) },
            TensorMut { name: "fwd.b", dims: vec![fwd.b.len()], data: layout_mut!(fwd.b) },
            TensorMut { name: "bwd.w", dims: dims2(&bwd.w), data: layout_mut!(bwd.w) },
            TensorMut { name: "bwd.u", dims: dims2(&bwd.u), data: layout_mut!(bwd.u) },
            TensorMut { name: "bwd.b", dims: vec![bwd.b.len()], data: layout_mut!(bwd.b) },
            TensorMut { name: "proj.w", dims: dims2(proj_w), data: layout_mut!(proj_w) },
            TensorMut { name: "proj.b", dims: vec![proj_b.len()], data: layout_mut!(proj_b) },
            TensorMut { name: "mlp1.w", dims: dims2(mlp1_w), data: layout_mut!(mlp1_w) },
            TensorMut { name: "mlp1.b", dims: vec![mlp1_b.len()], data: layout_mut!(mlp1_b) },
            TensorMut { name: "mlp2.w", dims: dims2(mlp2_w), data: layout_mut!(mlp2_w) },
            TensorMut { name: "mlp2.b", dims: vec![mlp2_b.len()], data: layout_mut!(mlp2_b) },
            TensorMut { name: "head.w", dims: dims2(head_w), data: layout_mut!(head_w) },
            TensorMut { name: "head.b", dims: vec![head_b.len()], data: layout_mut!(head_b) },
        ]
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &NetParams, scale: f64) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.data.iter_mut().zip(src.data) {
                *d += scale * s;
            }
        }
    }
}

fn fill_normal<R: Rng>(a: &mut Array2<f64>, sigma: f64, rng: &mut R) {
    let n = Normal::new(0.0, sigma).expect("positive sigma");
    a.mapv_inplace(|_| n.sample(rng));
}

/// Random orthogonal matrix from the QR factors of a Gaussian matrix.
fn orthogonal<R: Rng>(n: usize, rng: &mut R) -> Array2<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let g: DMatrix<f64> = DMatrix::from_fn(n, n, |_, _| normal.sample(rng));
    let qr = g.qr();
    let (q, r) = (qr.q(), qr.r());
    // Fix column signs so the result is uniformly distributed.
    Array2::from_shape_fn((n, n), |(i, j)| q[(i, j)] * r[(j, j)].signum())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Per-step activations of one LSTM direction over a batch.
struct LstmStep {
    t: usize,
    h_prev: Array2<f64>,
    c_prev: Array2<f64>,
    i: Array2<f64>,
    f: Array2<f64>,
    g: Array2<f64>,
    o: Array2<f64>,
    tanh_c: Array2<f64>,
}

fn lstm_forward(l: &Lstm, x: &ArrayView3<f64>, order: impl Iterator<Item = usize>) -> (Array2<f64>, Vec<LstmStep>) {
    let batch = x.shape()[0];
    let hd = l.hidden();
    let mut h = Array2::zeros((batch, hd));
    let mut c = Array2::zeros((batch, hd));
    let mut steps = Vec::new();
    for t in order {
        let xt = x.slice(s![.., t, ..]);
        let z = xt.dot(&l.w.t()) + h.dot(&l.u.t()) + &l.b;
        let i = z.slice(s![.., 0..hd]).mapv(sigmoid);
        let f = z.slice(s![.., hd..2 * hd]).mapv(sigmoid);
        let g = z.slice(s![.., 2 * hd..3 * hd]).mapv(f64::tanh);
        let o = z.slice(s![.., 3 * hd..4 * hd]).mapv(sigmoid);
        let c_new = &f * &c + &i * &g;
        let tanh_c = c_new.mapv(f64::tanh);
        let h_new = &o * &tanh_c;
        steps.push(LstmStep { t, h_prev: h, c_prev: c, i, f, g, o, tanh_c });
        h = h_new;
        c = c_new;
    }
    (h, steps)
}

fn lstm_backward(l: &Lstm, x: &ArrayView3<f64>, steps: &[LstmStep], dh_last: Array2<f64>, grad: &mut Lstm) {
    let hd = l.hidden();
    let batch = dh_last.nrows();
    let mut dh = dh_last;
    let mut dc = Array2::<f64>::zeros((batch, hd));
    for st in steps.iter().rev() {
        let d_o = &dh * &st.tanh_c;
        dc = dc + &dh * &st.o * &st.tanh_c.mapv(|v| 1.0 - v * v);
        let di = &dc * &st.g;
        let dg = &dc * &st.i;
        let df = &dc * &st.c_prev;
        let dc_prev = &dc * &st.f;
        let mut dz = Array2::zeros((batch, 4 * hd));
        dz.slice_mut(s![.., 0..hd]).assign(&(&di * &st.i.mapv(|v| v * (1.0 - v))));
        dz.slice_mut(s![.., hd..2 * hd]).assign(&(&df * &st.f.mapv(|v| v * (1.0 - v))));
        dz.slice_mut(s![.., 2 * hd..3 * hd]).assign(&(&dg * &st.g.mapv(|v| 1.0 - v * v)));
        dz.slice_mut(s![.., 3 * hd..4 * hd]).assign(&(&d_o * &st.o.mapv(|v| v * (1.0 - v))));
        let xt = x.slice(s![.., st.t, ..]);
        grad.w += &dz.t().dot(&xt);
        grad.u += &dz.t().dot(&st.h_prev);
        grad.b += &dz.sum_axis(Axis(0));
        dh = dz.dot(&l.u);
        dc = dc_prev;
    }
}

/// Everything the backward pass needs from one forward pass.
pub struct ForwardCache {
    fwd_steps: Vec<LstmStep>,
    bwd_steps: Vec<LstmStep>,
    hcat: Array2<f64>,
    proj: Array2<f64>,
    a1: Array2<f64>,
    m1: Array2<f64>,
    a2: Array2<f64>,
    m2: Array2<f64>,
    fused: Array2<f64>,
    /// B × 3 raw outputs (the third column is the terrain logit).
    pub outputs: Array2<f64>,
}

impl NetParams {
    fn check_input(&self, x: &ArrayView3<f64>) -> Result<()> {
        let sh = x.shape();
        if sh[2] != self.shape.inputs || sh[1] == 0 || sh[0] == 0 {
            return Err(Error::Shape(format!(
                "network expects windows of {} channels, got batch {:?}",
                self.shape.inputs, sh
            )));
        }
        Ok(())
    }

    /// Batched forward pass over windows `x` of shape B × T × I.
    pub fn forward_batch(&self, x: &ArrayView3<f64>) -> Result<ForwardCache> {
        self.check_input(x)?;
        let t_len = x.shape()[1];
        let hd = self.shape.hidden;
        let (hf, fwd_steps) = lstm_forward(&self.fwd, x, 0..t_len);
        let (hb, bwd_steps) = lstm_forward(&self.bwd, x, (0..t_len).rev());
        let batch = x.shape()[0];
        let mut hcat = Array2::zeros((batch, 2 * hd));
        hcat.slice_mut(s![.., 0..hd]).assign(&hf);
        hcat.slice_mut(s![.., hd..]).assign(&hb);
        let proj = hcat.dot(&self.proj_w.t()) + &self.proj_b;

        let last = x.slice(s![.., t_len - 1, ..]);
        let a1 = last.dot(&self.mlp1_w.t()) + &self.mlp1_b;
        let m1 = a1.mapv(|v| v.max(0.0));
        let a2 = m1.dot(&self.mlp2_w.t()) + &self.mlp2_b;
        let m2 = a2.mapv(|v| v.max(0.0));

        let fused = &proj * &m2;
        let outputs = fused.dot(&self.head_w.t()) + &self.head_b;
        Ok(ForwardCache { fwd_steps, bwd_steps, hcat, proj, a1, m1, a2, m2, fused, outputs })
    }

    /// Gradient of a loss given its derivative with respect to the raw
    /// outputs (B × 3).
    pub fn backward(&self, x: &ArrayView3<f64>, cache: &ForwardCache, d_out: &ArrayView2<f64>) -> NetParams {
        let mut g = NetParams::zeros(self.shape);
        let hd = self.shape.hidden;
        let t_len = x.shape()[1];

        g.head_w = d_out.t().dot(&cache.fused);
        g.head_b = d_out.sum_axis(Axis(0));
        let d_fused = d_out.dot(&self.head_w);
        let d_proj = &d_fused * &cache.m2;
        let d_m2 = &d_fused * &cache.proj;

        let d_a2 = d_m2 * &cache.a2.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
        g.mlp2_w = d_a2.t().dot(&cache.m1);
        g.mlp2_b = d_a2.sum_axis(Axis(0));
        let d_m1 = d_a2.dot(&self.mlp2_w);
        let d_a1 = d_m1 * &cache.a1.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
        let last = x.slice(s![.., t_len - 1, ..]);
        g.mlp1_w = d_a1.t().dot(&last);
        g.mlp1_b = d_a1.sum_axis(Axis(0));

        g.proj_w = d_proj.t().dot(&cache.hcat);
        g.proj_b = d_proj.sum_axis(Axis(0));
        let d_hcat = d_proj.dot(&self.proj_w);
        let dh_f = d_hcat.slice(s![.., 0..hd]).to_owned();
        let dh_b = d_hcat.slice(s![.., hd..]).to_owned();
        lstm_backward(&self.fwd, x, &cache.fwd_steps, dh_f, &mut g.fwd);
        lstm_backward(&self.bwd, x, &cache.bwd_steps, dh_b, &mut g.bwd);
        g
    }
}

/// Loss weights and targets for one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Target {
    pub fx: f64,
    pub fz: f64,
    /// 1 for sand, 0 for solid.
    pub terrain: f64,
}

/// Binary cross-entropy of a logit, computed without overflow.
pub fn bce_with_logit(logit: f64, target: f64) -> f64 {
    logit.max(0.0) - logit * target + (-logit.abs()).exp().ln_1p()
}

/// Mean over the batch of `((e_x² + e_z²) / 2) + λ·BCE`, and its derivative
/// with respect to the raw outputs.
pub fn loss_and_grad(outputs: &Array2<f64>, targets: &[Target], terrain_weight: f64) -> (f64, Array2<f64>) {
    let n = targets.len() as f64;
    let mut d = Array2::zeros(outputs.raw_dim());
    let mut loss = 0.0;
    for (b, tg) in targets.iter().enumerate() {
        let ex = outputs[(b, 0)] - tg.fx;
        let ez = outputs[(b, 1)] - tg.fz;
        let logit = outputs[(b, 2)];
        loss += 0.5 * (ex * ex + ez * ez) + terrain_weight * bce_with_logit(logit, tg.terrain);
        d[(b, 0)] = ex / n;
        d[(b, 1)] = ez / n;
        d[(b, 2)] = terrain_weight * (sigmoid(logit) - tg.terrain) / n;
    }
    (loss / n, d)
}

pub fn terrain_probability(logit: f64) -> f64 {
    sigmoid(logit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> (NetParams, Array3<f64>, Vec<Target>) {
        let shape = NetShape { inputs: 9, hidden: 4, mlp_hidden: 5, fused: 4 };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = NetParams::init(shape, &mut rng).unwrap();
        // Non-zero biases everywhere so every tensor sees a gradient.
        let n = Normal::new(0.0, 0.3).unwrap();
        for t in p.tensors_mut() {
            for v in t.data.iter_mut() {
                *v += n.sample(&mut rng);
            }
        }
        let x = Array3::from_shape_fn((4, 3, 9), |_| n.sample(&mut rng) * 3.0);
        let targets = (0..4)
            .map(|i| Target { fx: 0.1 * i as f64 - 0.1, fz: 0.3 * i as f64, terrain: (i % 2) as f64 })
            .collect();
        (p, x, targets)
    }

    fn loss(p: &NetParams, x: &Array3<f64>, targets: &[Target]) -> f64 {
        let c = p.forward_batch(&x.view()).unwrap();
        loss_and_grad(&c.outputs, targets, 0.7).0
    }

    #[test]
    fn analytic_gradient_matches_central_differences() {
        let (p, x, targets) = small();
        let cache = p.forward_batch(&x.view()).unwrap();
        let (_, d) = loss_and_grad(&cache.outputs, &targets, 0.7);
        let g = p.backward(&x.view(), &cache, &d.view());
        let h = 1e-6;
        let mut worst = 0.0f64;
        let names: Vec<&str> = p.tensors().iter().map(|t| t.name).collect();
        for (k, name) in names.iter().enumerate() {
            let len = p.tensors()[k].data.len();
            for j in 0..len {
                let mut up = p.clone();
                up.tensors_mut()[k].data[j] += h;
                let mut dn = p.clone();
                dn.tensors_mut()[k].data[j] -= h;
                let fd = (loss(&up, &x, &targets) - loss(&dn, &x, &targets)) / (2.0 * h);
                let an = g.tensors()[k].data[j];
                let rel = (fd - an).abs() / (fd.abs() + an.abs()).max(1e-7);
                assert!(rel < 1e-4, "{name}[{j}]: analytic {an} vs numeric {fd}");
                worst = worst.max(rel);
            }
        }
        assert!(worst < 1e-4);
    }

    #[test]
    fn zero_head_gives_zero_forces_and_even_odds() {
        let (mut p, x, _) = small();
        p.head_w.fill(0.0);
        p.head_b.fill(0.0);
        let out = p.forward_batch(&x.view()).unwrap().outputs;
        for b in 0..out.nrows() {
            assert_eq!(out[(b, 0)], 0.0);
            assert_eq!(out[(b, 1)], 0.0);
            assert_eq!(terrain_probability(out[(b, 2)]), 0.5);
        }
    }

    #[test]
    fn zero_mlp_output_leaves_only_the_head_bias() {
        let (mut p, x, _) = small();
        p.mlp2_w.fill(0.0);
        p.mlp2_b.fill(-1.0);
        let out = p.forward_batch(&x.view()).unwrap().outputs;
        for b in 0..out.nrows() {
            for k in 0..OUTPUTS {
                assert_eq!(out[(b, k)], p.head_b[k]);
            }
        }
    }

    #[test]
    fn wrong_channel_count_is_a_shape_error() {
        let (p, _, _) = small();
        let x = Array3::zeros((1, 3, 8));
        assert!(matches!(p.forward_batch(&x.view()), Err(Error::Shape(_))));
    }

    #[test]
    fn full_size_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = NetParams::init(NetShape::default(), &mut rng).unwrap();
        assert_eq!(p.fwd.w.dim(), (256, 9));
        assert_eq!(p.fwd.u.dim(), (256, 64));
        assert_eq!(p.proj_w.dim(), (64, 128));
        assert_eq!(p.mlp1_w.dim(), (128, 9));
        assert_eq!(p.mlp2_w.dim(), (64, 128));
        assert_eq!(p.head_w.dim(), (3, 64));
        // Recurrent blocks are orthogonal.
        let q = p.fwd.u.slice(s![0..64, ..]).to_owned();
        let eye = q.t().dot(&q);
        for i in 0..64 {
            for j in 0..64 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((eye[(i, j)] - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn gradient_is_order_independent_over_a_full_batch() {
        let (p, x, targets) = small();
        let perm = [2usize, 0, 3, 1];
        let xp = Array3::from_shape_fn(x.raw_dim(), |(b, t, c)| x[(perm[b], t, c)]);
        let tp: Vec<Target> = perm.iter().map(|&i| targets[i]).collect();
        let grad = |x: &Array3<f64>, t: &[Target]| {
            let c = p.forward_batch(&x.view()).unwrap();
            let (_, d) = loss_and_grad(&c.outputs, t, 0.7);
            p.backward(&x.view(), &c, &d.view())
        };
        let (a, b) = (grad(&x, &targets), grad(&xp, &tp));
        for (ta, tb) in a.tensors().iter().zip(b.tensors()) {
            for (u, v) in ta.data.iter().zip(tb.data) {
                assert!((u - v).abs() <= 1e-12 * (1.0 + u.abs()), "{}", ta.name);
            }
        }
    }
}
