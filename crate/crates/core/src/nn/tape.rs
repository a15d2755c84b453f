//! Reverse-mode automatic differentiation over 2-D tensors.
//!
//! Every operation appends a node to the [`Tape`]; node indices are therefore
//! already in topological order and [`Tape::backward`] walks them in reverse.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Square(Var),
    Sqrt(Var),
    /// Elementwise minimum; ties take the left operand.
    Min(Var, Var),
    /// Column-wise max over rows, with the winning row per column.
    MaxRows(Var, Vec<usize>),
    ConcatBroadcast(Var, Var),
    /// Row-wise unit normalization; rows whose norm is below the guard are
    /// replaced by a constant and carry no gradient.
    NormalizeRows(Var, Vec<f64>),
    CrossRows(Var, Var),
    SumCols(Var),
    Sum(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    grad: Option<Tensor>,
}

/// Recording of a computation for gradient evaluation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Row used in place of a normalized zero vector.
pub const NORMALIZE_FALLBACK: [f64; 3] = [0.0, 0.0, 1.0];

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op, grad: None });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last [`backward`](Self::backward) target with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    fn check_same(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (x, y) = (self.value(a), self.value(b));
        if !x.same_shape(y) {
            return Err(Error::ShapeMismatch(format!(
                "{what}: {:?} vs {:?}",
                x.shape(),
                y.shape()
            )));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.cols() != y.rows() {
            return Err(Error::ShapeMismatch(format!(
                "matmul: {:?} x {:?}",
                x.shape(),
                y.shape()
            )));
        }
        let v = x.matmul(y);
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    /// Adds a `1 x c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (x, r) = (self.value(a), self.value(row));
        if r.rows() != 1 || r.cols() != x.cols() {
            return Err(Error::ShapeMismatch(format!(
                "add_row: {:?} + {:?}",
                x.shape(),
                r.shape()
            )));
        }
        let mut v = x.clone();
        let c = x.cols();
        for (i, d) in v.data_mut().iter_mut().enumerate() {
            *d += r.data()[i % c];
        }
        Ok(self.push(v, Op::AddRow(a, row)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "add")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "sub")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "mul")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x * s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        self.push(v, Op::Square(a))
    }

    /// Square root; the derivative at zero is taken as zero.
    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0).sqrt());
        self.push(v, Op::Sqrt(a))
    }

    pub fn min(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "min")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| if x <= y { x } else { y });
        Ok(self.push(v, Op::Min(a, b)))
    }

    pub fn max_rows(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.rows() == 0 {
            return Err(Error::ShapeMismatch("max over zero rows".into()));
        }
        let mut out = Tensor::zeros(1, x.cols());
        let mut arg = vec![0usize; x.cols()];
        for c in 0..x.cols() {
            let mut best = x.get(0, c);
            for r in 1..x.rows() {
                let v = x.get(r, c);
                if v > best {
                    best = v;
                    arg[c] = r;
                }
            }
            out.set(0, c, best);
        }
        Ok(self.push(out, Op::MaxRows(a, arg)))
    }

    /// `[a | g]` with the single row `g` repeated for every row of `a`.
    pub fn concat_broadcast(&mut self, a: Var, g: Var) -> Result<Var> {
        let (x, r) = (self.value(a), self.value(g));
        if r.rows() != 1 {
            return Err(Error::ShapeMismatch("concat_broadcast needs a single row".into()));
        }
        let (n, c1, c2) = (x.rows(), x.cols(), r.cols());
        let mut data = Vec::with_capacity(n * (c1 + c2));
        for i in 0..n {
            data.extend_from_slice(x.row(i));
            data.extend_from_slice(r.data());
        }
        let v = Tensor::from_vec(n, c1 + c2, data)?;
        Ok(self.push(v, Op::ConcatBroadcast(a, g)))
    }

    /// Normalize each 3-vector row; rows with norm below `eps` become
    /// [`NORMALIZE_FALLBACK`].
    pub fn normalize_rows(&mut self, a: Var, eps: f64) -> Result<Var> {
        let x = self.value(a);
        if x.cols() != 3 {
            return Err(Error::ShapeMismatch("normalize_rows needs 3 columns".into()));
        }
        let mut v = Tensor::zeros(x.rows(), 3);
        let mut norms = Vec::with_capacity(x.rows());
        for i in 0..x.rows() {
            let r = x.row(i);
            let n = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
            if n >= eps {
                for c in 0..3 {
                    v.set(i, c, r[c] / n);
                }
                norms.push(n);
            } else {
                for (c, f) in NORMALIZE_FALLBACK.iter().enumerate() {
                    v.set(i, c, *f);
                }
                norms.push(0.0);
            }
        }
        Ok(self.push(v, Op::NormalizeRows(a, norms)))
    }

    pub fn cross_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "cross_rows")?;
        let (x, y) = (self.value(a), self.value(b));
        if x.cols() != 3 {
            return Err(Error::ShapeMismatch("cross_rows needs 3 columns".into()));
        }
        let mut v = Tensor::zeros(x.rows(), 3);
        for i in 0..x.rows() {
            let c = cross(x.row(i), y.row(i));
            for k in 0..3 {
                v.set(i, k, c[k]);
            }
        }
        Ok(self.push(v, Op::CrossRows(a, b)))
    }

    /// Row sums as an `n x 1` column.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let data = (0..x.rows()).map(|i| x.row(i).iter().sum()).collect();
        let v = Tensor::from_vec(x.rows(), 1, data).expect("shape");
        self.push(v, Op::SumCols(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Populate gradients of the scalar `loss` with respect to every node.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.value(loss).shape();
        if shape != [1, 1] {
            return Err(Error::NonScalarLoss { rows: shape[0], cols: shape[1] });
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.nodes[loss.0].grad = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = self.nodes[idx].grad.take() else {
                continue;
            };
            let op = self.nodes[idx].op.clone();
            match op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let da = g.matmul_tr(self.value(b));
                    let db = self.value(a).tr_matmul(&g);
                    self.accumulate(a, da);
                    self.accumulate(b, db);
                }
                Op::AddRow(a, r) => {
                    let dr = g.col_sums();
                    self.accumulate(r, dr);
                    self.accumulate(a, g.clone());
                }
                Op::Add(a, b) => {
                    self.accumulate(a, g.clone());
                    self.accumulate(b, g.clone());
                }
                Op::Sub(a, b) => {
                    self.accumulate(b, g.map(|v| -v));
                    self.accumulate(a, g.clone());
                }
                Op::Mul(a, b) => {
                    let da = g.zip_map(self.value(b), |d, y| d * y);
                    let db = g.zip_map(self.value(a), |d, x| d * x);
                    self.accumulate(a, da);
                    self.accumulate(b, db);
                }
                Op::Scale(a, s) => self.accumulate(a, g.map(|v| v * s)),
                Op::Relu(a) => {
                    let da = g.zip_map(self.value(a), |d, x| if x > 0.0 { d } else { 0.0 });
                    self.accumulate(a, da);
                }
                Op::Square(a) => {
                    let da = g.zip_map(self.value(a), |d, x| 2.0 * x * d);
                    self.accumulate(a, da);
                }
                Op::Sqrt(a) => {
                    let y = &self.nodes[idx].value;
                    let da = g.zip_map(y, |d, y| if y > 0.0 { d / (2.0 * y) } else { 0.0 });
                    self.accumulate(a, da);
                }
                Op::Min(a, b) => {
                    let (x, y) = (self.value(a), self.value(b));
                    let mut da = Tensor::zeros(g.rows(), g.cols());
                    let mut db = Tensor::zeros(g.rows(), g.cols());
                    for i in 0..g.data().len() {
                        if x.data()[i] <= y.data()[i] {
                            da.data_mut()[i] = g.data()[i];
                        } else {
                            db.data_mut()[i] = g.data()[i];
                        }
                    }
                    self.accumulate(a, da);
                    self.accumulate(b, db);
                }
                Op::MaxRows(a, arg) => {
                    let x = self.value(a);
                    let mut da = Tensor::zeros(x.rows(), x.cols());
                    for (c, &r) in arg.iter().enumerate() {
                        da.set(r, c, g.get(0, c));
                    }
                    self.accumulate(a, da);
                }
                Op::ConcatBroadcast(a, r) => {
                    let c1 = self.value(a).cols();
                    let c2 = self.value(r).cols();
                    let n = g.rows();
                    let mut da = Tensor::zeros(n, c1);
                    let mut dr = Tensor::zeros(1, c2);
                    for i in 0..n {
                        let row = g.row(i);
                        da.data_mut()[i * c1..(i + 1) * c1].copy_from_slice(&row[..c1]);
                        for (d, v) in dr.data_mut().iter_mut().zip(&row[c1..]) {
                            *d += v;
                        }
                    }
                    self.accumulate(a, da);
                    self.accumulate(r, dr);
                }
                Op::NormalizeRows(a, norms) => {
                    let y = &self.nodes[idx].value;
                    let mut da = Tensor::zeros(y.rows(), 3);
                    for (i, &n) in norms.iter().enumerate() {
                        if n == 0.0 {
                            continue;
                        }
                        let (yr, gr) = (y.row(i), g.row(i));
                        let proj: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for c in 0..3 {
                            da.set(i, c, (gr[c] - yr[c] * proj) / n);
                        }
                    }
                    self.accumulate(a, da);
                }
                Op::CrossRows(a, b) => {
                    let (x, y) = (self.value(a), self.value(b));
                    let mut da = Tensor::zeros(x.rows(), 3);
                    let mut db = Tensor::zeros(x.rows(), 3);
                    for i in 0..x.rows() {
                        let ga = cross(y.row(i), g.row(i));
                        let gb = cross(g.row(i), x.row(i));
                        for c in 0..3 {
                            da.set(i, c, ga[c]);
                            db.set(i, c, gb[c]);
                        }
                    }
                    self.accumulate(a, da);
                    self.accumulate(b, db);
                }
                Op::SumCols(a) => {
                    let x = self.value(a);
                    let mut da = Tensor::zeros(x.rows(), x.cols());
                    for i in 0..x.rows() {
                        let d = g.get(i, 0);
                        da.data_mut()[i * x.cols()..(i + 1) * x.cols()].fill(d);
                    }
                    self.accumulate(a, da);
                }
                Op::Sum(a) => {
                    let x = self.value(a);
                    let da = Tensor::from_vec(x.rows(), x.cols(), vec![g.item(); x.data().len()])
                        .expect("shape");
                    self.accumulate(a, da);
                }
            }
            self.nodes[idx].grad = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, d: Tensor) {
        match &mut self.nodes[v.0].grad {
            Some(g) => g.add_assign(&d),
            slot @ None => *slot = Some(d),
        }
    }
}

#[inline]
fn cross(a: &[f64], b: &[f64]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn square_of_three_has_slope_six() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(3.0));
        let y = t.mul(x, x).unwrap();
        t.backward(y).unwrap();
        assert_eq!(t.grad(x).unwrap().item(), 6.0);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::zeros(2, 2));
        assert!(matches!(
            t.backward(x),
            Err(Error::NonScalarLoss { rows: 2, cols: 2 })
        ));
    }

    #[test]
    fn shape_errors() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::zeros(2, 3));
        let b = t.leaf(Tensor::zeros(2, 2));
        assert!(t.matmul(a, a).is_err());
        assert!(t.add(a, b).is_err());
        assert!(t.add_row(a, b).is_err());
    }

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Builds a scalar from every differentiable op so one finite-difference
    /// sweep covers them all.
    fn composite(t: &mut Tape, a: Var, b: Var, w: Var, bias: Var) -> Var {
        let h = t.matmul(a, w).unwrap();
        let h = t.add_row(h, bias).unwrap();
        let h = t.relu(h);
        let g = t.max_rows(h).unwrap();
        let z = t.concat_broadcast(h, g).unwrap();
        let z3 = t.sum_cols(z);
        let z3 = t.square(z3);
        let bb = t.scale(b, 0.7);
        let n = t.normalize_rows(bb, 1e-12).unwrap();
        let c = t.cross_rows(n, a).unwrap();
        let s = t.square(c);
        let s = t.sum_cols(s);
        let s = t.sqrt(s);
        let d = t.sub(n, a).unwrap();
        let d = t.square(d);
        let d = t.sum_cols(d);
        let e = t.add(n, a).unwrap();
        let e = t.square(e);
        let e = t.sum_cols(e);
        let m = t.min(d, e).unwrap();
        let p = t.mul(m, s).unwrap();
        let p = t.add(p, z3).unwrap();
        t.sum(p)
    }

    #[test]
    fn composite_gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let inputs = [
            random(&mut rng, 5, 3),
            random(&mut rng, 5, 3),
            random(&mut rng, 3, 4),
            random(&mut rng, 1, 4),
        ];
        let eval = |vals: &[Tensor]| {
            let mut t = Tape::new();
            let v: Vec<Var> = vals.iter().map(|x| t.leaf(x.clone())).collect();
            let out = composite(&mut t, v[0], v[1], v[2], v[3]);
            (t, v, out)
        };
        let (mut t, vars, out) = eval(&inputs);
        t.backward(out).unwrap();
        let h = 1e-6;
        for (which, var) in vars.iter().enumerate() {
            let g = t.grad(*var).unwrap().clone();
            for k in 0..inputs[which].data().len() {
                let mut plus = inputs.clone();
                plus[which].data_mut()[k] += h;
                let mut minus = inputs.clone();
                minus[which].data_mut()[k] -= h;
                let (tp, _, op) = eval(&plus);
                let (tm, _, om) = eval(&minus);
                let fd = (tp.value(op).item() - tm.value(om).item()) / (2.0 * h);
                let an = g.data()[k];
                assert!(
                    (fd - an).abs() <= 1e-5 * fd.abs().max(an.abs()).max(1e-3),
                    "input {which}[{k}]: fd {fd} vs analytic {an}"
                );
            }
        }
    }

    #[test]
    fn fan_out_accumulates() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(2.0));
        let a = t.scale(x, 3.0);
        let b = t.mul(x, a).unwrap();
        let c = t.add(b, x).unwrap();
        t.backward(c).unwrap();
        // c = 3x^2 + x
        assert_eq!(t.grad(x).unwrap().item(), 13.0);
    }
}
