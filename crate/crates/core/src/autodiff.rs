//! A small reverse-mode automatic differentiation tape.
//!
//! Every node holds a dense `rows × cols` matrix so a whole mini-batch moves
//! through one node. The set of operations is exactly what the pose
//! regressor needs; each one records enough to compute its vector-Jacobian
//! product during [`Tape::backward`].

use ndarray::{Array2, Axis};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    MatMul(Var, Var),
    /// `x + 1·b` with `b` a single row broadcast over the rows of `x`.
    AddRow(Var, Var),
    Tanh(Var),
    Columns(Var, usize),
    /// Each row divided by its Euclidean norm.
    NormalizeRows(Var),
    Sum(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Array2<f64>,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints of every node, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients(Vec<Option<Array2<f64>>>);

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.0.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Array2<f64>> {
        self.0.get_mut(v.0).and_then(|g| g.take())
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add_row(&mut self, x: Var, bias: Var) -> Var {
        assert_eq!(self.value(bias).nrows(), 1, "bias must be a single row");
        let v = self.value(x) + self.value(bias);
        self.push(v, Op::AddRow(x, bias))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(f64::tanh);
        self.push(v, Op::Tanh(x))
    }

    /// Columns `start..start + len` of `x`.
    pub fn columns(&mut self, x: Var, start: usize, len: usize) -> Var {
        let v = self
            .value(x)
            .slice(ndarray::s![.., start..start + len])
            .to_owned();
        self.push(v, Op::Columns(x, start))
    }

    pub fn normalize_rows(&mut self, x: Var) -> Var {
        let mut v = self.value(x).clone();
        for mut row in v.rows_mut() {
            let n = row.dot(&row).sqrt();
            row /= n;
        }
        self.push(v, Op::NormalizeRows(x))
    }

    /// Sum of all entries, as a 1×1 node.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Array2::from_elem((1, 1), s), Op::Sum(x))
    }

    /// Propagates the given output adjoints back through the tape.
    pub fn backward(&self, seeds: &[(Var, Array2<f64>)]) -> Gradients {
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        for (v, g) in seeds {
            assert_eq!(g.dim(), self.value(*v).dim(), "seed shape mismatch");
            accumulate(&mut grads, *v, g.clone());
        }
        for idx in (0..self.nodes.len()).rev() {
            let Some(g) = grads[idx].clone() else { continue };
            let node = &self.nodes[idx];
            match node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    accumulate(&mut grads, a, g.clone());
                    accumulate(&mut grads, b, g);
                }
                Op::Mul(a, b) => {
                    accumulate(&mut grads, a, &g * self.value(b));
                    accumulate(&mut grads, b, &g * self.value(a));
                }
                Op::MatMul(a, b) => {
                    accumulate(&mut grads, a, g.dot(&self.value(b).t()));
                    accumulate(&mut grads, b, self.value(a).t().dot(&g));
                }
                Op::AddRow(x, bias) => {
                    let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads, x, g);
                    accumulate(&mut grads, bias, gb);
                }
                Op::Tanh(x) => {
                    let y = &node.value;
                    let gx = ndarray::Zip::from(&g).and(y).map_collect(|g, y| g * (1.0 - y * y));
                    accumulate(&mut grads, x, gx);
                }
                Op::Columns(x, start) => {
                    let mut gx = Array2::zeros(self.value(x).dim());
                    gx.slice_mut(ndarray::s![.., start..start + g.ncols()]).assign(&g);
                    accumulate(&mut grads, x, gx);
                }
                Op::NormalizeRows(x) => {
                    let raw = self.value(x);
                    let y = &node.value;
                    let mut gx = Array2::zeros(raw.dim());
                    for r in 0..raw.nrows() {
                        let n = raw.row(r).dot(&raw.row(r)).sqrt();
                        let yg = y.row(r).dot(&g.row(r));
                        let row = (&g.row(r) - &(&y.row(r) * yg)) / n;
                        gx.row_mut(r).assign(&row);
                    }
                    accumulate(&mut grads, x, gx);
                }
                Op::Sum(x) => {
                    let gx = Array2::from_elem(self.value(x).dim(), g[[0, 0]]);
                    accumulate(&mut grads, x, gx);
                }
            }
        }
        Gradients(grads)
    }
}

fn accumulate(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    /// Builds `sum(normalize_rows(tanh(x·w + b)) ⊙ c)` on a fresh tape.
    fn composite(x: &Array2<f64>, w: &Array2<f64>, b: &Array2<f64>) -> (Tape, Var, [Var; 3]) {
        let mut t = Tape::new();
        let xv = t.leaf(x.clone());
        let wv = t.leaf(w.clone());
        let bv = t.leaf(b.clone());
        let z = t.matmul(xv, wv);
        let z = t.add_row(z, bv);
        let h = t.tanh(z);
        let cols = t.columns(h, 1, 3);
        let n = t.normalize_rows(cols);
        let c = t.leaf(array![[0.3, -1.2, 0.7], [2.0, 0.1, -0.4]]);
        let m = t.mul(n, c);
        let m = t.add(m, cols);
        let s = t.sum(m);
        (t, s, [xv, wv, bv])
    }

    fn eval(x: &Array2<f64>, w: &Array2<f64>, b: &Array2<f64>) -> f64 {
        let (t, s, _) = composite(x, w, b);
        t.value(s)[[0, 0]]
    }

    #[test]
    fn matches_central_differences() {
        let x = array![[0.5, -0.3, 0.8], [-0.1, 0.9, 0.2]];
        let w = array![[0.2, -0.5, 0.1, 0.7], [0.4, 0.3, -0.6, 0.2], [-0.3, 0.8, 0.5, -0.1]];
        let b = array![[0.05, -0.1, 0.2, 0.0]];
        let (tape, s, [xv, wv, bv]) = composite(&x, &w, &b);
        let grads = tape.backward(&[(s, array![[1.0]])]);

        let h = 1e-6;
        let check = |analytic: &Array2<f64>, which: usize| {
            let base = [&x, &w, &b][which].clone();
            for idx in 0..base.len() {
                let (r, c) = (idx / base.ncols(), idx % base.ncols());
                let mut plus = [x.clone(), w.clone(), b.clone()];
                let mut minus = plus.clone();
                plus[which][[r, c]] += h;
                minus[which][[r, c]] -= h;
                let fd = (eval(&plus[0], &plus[1], &plus[2]) - eval(&minus[0], &minus[1], &minus[2])) / (2.0 * h);
                let a = analytic[[r, c]];
                assert!((fd - a).abs() <= 1e-7 * (1.0 + a.abs()), "param {which} [{r},{c}]: fd {fd} vs {a}");
            }
        };
        check(grads.get(xv).unwrap(), 0);
        check(grads.get(wv).unwrap(), 1);
        check(grads.get(bv).unwrap(), 2);
    }

    #[test]
    fn untouched_leaf_has_no_gradient() {
        let mut t = Tape::new();
        let a = t.leaf(array![[1.0, 2.0]]);
        let b = t.leaf(array![[3.0, 4.0]]);
        let s = t.sum(a);
        let g = t.backward(&[(s, array![[1.0]])]);
        assert_eq!(g.get(a).unwrap(), &array![[1.0, 1.0]]);
        assert!(g.get(b).is_none());
    }

    #[test]
    fn normalize_rows_values() {
        let mut t = Tape::new();
        let a = t.leaf(array![[3.0, 4.0], [0.0, 2.0]]);
        let n = t.normalize_rows(a);
        assert_eq!(t.value(n), &array![[0.6, 0.8], [0.0, 1.0]]);
    }
}
