//! Scalar reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every scalar operation as it is evaluated
//! (define-by-run). Nodes are appended in evaluation order, so the node
//! sequence is always topologically sorted and a single reverse sweep
//! yields the adjoint of every node with respect to the chosen output.
//!
//! Every recording method checks the forward value; a non-finite result is
//! refused at construction time, which keeps the invariant that every node
//! on a tape holds a finite value.

use std::sync::atomic::{AtomicU32, Ordering};

use crate::error::{Result, SvbError};

static NEXT_TAPE_ID: AtomicU32 = AtomicU32::new(0);

/// Handle to a node on a specific [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId {
    tape: u32,
    index: u32,
}

impl NodeId {
    pub fn index(self) -> usize {
        self.index as usize
    }
}

#[derive(Debug, Clone)]
enum Op {
    Var,
    Const,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Neg(NodeId),
    Log(NodeId),
    Exp(NodeId),
    Square(NodeId),
    Cosh(NodeId),
    Sum(Vec<NodeId>),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: f64,
}

/// Append-only record of scalar operations.
#[derive(Debug)]
pub struct Tape {
    id: u32,
    nodes: Vec<Node>,
    vars: Vec<NodeId>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            vars: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf variables registered so far, in registration order.
    pub fn variables(&self) -> &[NodeId] {
        &self.vars
    }

    pub fn value(&self, id: NodeId) -> f64 {
        self.check(id);
        self.nodes[id.index()].value
    }

    fn check(&self, id: NodeId) {
        assert!(
            id.tape == self.id && id.index() < self.nodes.len(),
            "node {id:?} does not belong to tape {}",
            self.id
        );
    }

    fn push(&mut self, op: Op, value: f64, name: &'static str) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(SvbError::NonFinite { op: name, value });
        }
        let id = NodeId {
            tape: self.id,
            index: u32::try_from(self.nodes.len()).expect("tape exceeds u32::MAX nodes"),
        };
        self.nodes.push(Node { op, value });
        Ok(id)
    }

    /// Registers a differentiable leaf.
    pub fn var(&mut self, value: f64) -> Result<NodeId> {
        let id = self.push(Op::Var, value, "var")?;
        self.vars.push(id);
        Ok(id)
    }

    /// Records a constant; it receives no entry in [`Gradient`].
    pub fn constant(&mut self, value: f64) -> Result<NodeId> {
        self.push(Op::Const, value, "constant")
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a) + self.value(b);
        self.push(Op::Add(a, b), v, "add")
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a) - self.value(b);
        self.push(Op::Sub(a, b), v, "sub")
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a) * self.value(b);
        self.push(Op::Mul(a, b), v, "mul")
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let d = self.value(b);
        if d == 0.0 {
            return Err(SvbError::Domain {
                op: "div",
                detail: "division by zero".into(),
            });
        }
        let v = self.value(a) / d;
        self.push(Op::Div(a, b), v, "div")
    }

    pub fn neg(&mut self, a: NodeId) -> Result<NodeId> {
        let v = -self.value(a);
        self.push(Op::Neg(a), v, "neg")
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        let x = self.value(a);
        if x <= 0.0 {
            return Err(SvbError::Domain {
                op: "log",
                detail: format!("log of non-positive value {x}"),
            });
        }
        self.push(Op::Log(a), x.ln(), "log")
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).exp();
        self.push(Op::Exp(a), v, "exp")
    }

    pub fn square(&mut self, a: NodeId) -> Result<NodeId> {
        let x = self.value(a);
        self.push(Op::Square(a), x * x, "square")
    }

    pub fn cosh(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).cosh();
        self.push(Op::Cosh(a), v, "cosh")
    }

    /// n-ary sum recorded as a single node. Terms are accumulated left to right.
    pub fn sum_many(&mut self, terms: &[NodeId]) -> Result<NodeId> {
        let mut v = 0.0;
        for &t in terms {
            v += self.value(t);
        }
        self.push(Op::Sum(terms.to_vec()), v, "sum_many")
    }

    /// `c * a` for a plain-number `c`.
    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let k = self.constant(c)?;
        self.mul(k, a)
    }

    /// `a + c` for a plain-number `c`.
    pub fn add_const(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let k = self.constant(c)?;
        self.add(a, k)
    }

    /// Reverse sweep from `output`, returning the adjoint of every leaf variable.
    pub fn grad(&self, output: NodeId) -> Gradient {
        self.check(output);
        let mut adj = vec![0.0_f64; output.index() + 1];
        adj[output.index()] = 1.0;

        for i in (0..=output.index()).rev() {
            let g = adj[i];
            if g == 0.0 {
                continue;
            }
            let node = &self.nodes[i];
            match &node.op {
                Op::Var | Op::Const => {}
                Op::Add(a, b) => {
                    adj[a.index()] += g;
                    adj[b.index()] += g;
                }
                Op::Sub(a, b) => {
                    adj[a.index()] += g;
                    adj[b.index()] -= g;
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.nodes[a.index()].value, self.nodes[b.index()].value);
                    adj[a.index()] += g * vb;
                    adj[b.index()] += g * va;
                }
                Op::Div(a, b) => {
                    let vb = self.nodes[b.index()].value;
                    adj[a.index()] += g / vb;
                    adj[b.index()] -= g * node.value / vb;
                }
                Op::Neg(a) => adj[a.index()] -= g,
                Op::Log(a) => adj[a.index()] += g / self.nodes[a.index()].value,
                Op::Exp(a) => adj[a.index()] += g * node.value,
                Op::Square(a) => adj[a.index()] += 2.0 * g * self.nodes[a.index()].value,
                Op::Cosh(a) => adj[a.index()] += g * self.nodes[a.index()].value.sinh(),
                Op::Sum(terms) => {
                    for t in terms {
                        adj[t.index()] += g;
                    }
                }
            }
        }

        let adjoints = self
            .vars
            .iter()
            .map(|&v| (v, adj.get(v.index()).copied().unwrap_or(0.0)))
            .collect();
        Gradient { adjoints }
    }
}

/// Partial derivatives of one output with respect to every leaf variable.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    adjoints: Vec<(NodeId, f64)>,
}

impl Gradient {
    /// Adjoint of `var`; zero if `var` is not a registered leaf.
    pub fn wrt(&self, var: NodeId) -> f64 {
        self.adjoints
            .iter()
            .find(|(id, _)| *id == var)
            .map_or(0.0, |&(_, g)| g)
    }

    /// Adjoints for `vars`, in the order given.
    pub fn collect(&self, vars: &[NodeId]) -> Vec<f64> {
        vars.iter().map(|&v| self.wrt(v)).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, f64)> + '_ {
        self.adjoints.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.adjoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjoints.is_empty()
    }
}

/// Outcome of comparing tape gradients to central finite differences.
#[derive(Debug, Clone)]
pub struct FdReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    /// Per-coordinate `|ad - fd| / max(|ad|, |fd|, FD_REL_FLOOR)`; NaN where
    /// the function could not be evaluated at a perturbed point.
    pub rel_errors: Vec<f64>,
    pub max_rel_error: f64,
    /// Coordinates where evaluation failed, with the error message.
    pub failures: Vec<(usize, String)>,
    pub passed: bool,
}

/// Denominator floor for relative errors, so coordinates whose true
/// derivative is ~0 are judged on an absolute scale.
pub const FD_REL_FLOOR: f64 = 1e-3;

/// Checks the tape gradient of `f` at `at` against central differences with
/// step `h = 1e-6 * max(1, |x|)`.
///
/// `f` receives a fresh tape and the leaf ids for `at`, and returns the
/// output node. Evaluation failures at perturbed points are reported in
/// [`FdReport::failures`] and make the check fail.
pub fn finite_diff_check<F>(f: F, at: &[f64], rtol: f64) -> Result<FdReport>
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    let eval = |x: &[f64]| -> Result<(Tape, Vec<NodeId>, NodeId)> {
        let mut tape = Tape::new();
        let vars = x.iter().map(|&v| tape.var(v)).collect::<Result<Vec<_>>>()?;
        let out = f(&mut tape, &vars)?;
        Ok((tape, vars, out))
    };

    let (tape, vars, out) = eval(at)?;
    let analytic = tape.grad(out).collect(&vars);

    let mut numeric = Vec::with_capacity(at.len());
    let mut rel_errors = Vec::with_capacity(at.len());
    let mut failures = Vec::new();
    let mut x = at.to_vec();
    for i in 0..at.len() {
        let h = 1e-6 * at[i].abs().max(1.0);
        x[i] = at[i] + h;
        let plus = eval(&x).map(|(t, _, o)| t.value(o));
        x[i] = at[i] - h;
        let minus = eval(&x).map(|(t, _, o)| t.value(o));
        x[i] = at[i];
        match (plus, minus) {
            (Ok(p), Ok(m)) => {
                let fd = (p - m) / (2.0 * h);
                let ad = analytic[i];
                numeric.push(fd);
                rel_errors.push((ad - fd).abs() / ad.abs().max(fd.abs()).max(FD_REL_FLOOR));
            }
            (Err(e), _) | (_, Err(e)) => {
                numeric.push(f64::NAN);
                rel_errors.push(f64::NAN);
                failures.push((i, e.to_string()));
            }
        }
    }

    let max_rel_error = rel_errors
        .iter()
        .filter(|e| !e.is_nan())
        .fold(0.0_f64, |a, &b| a.max(b));
    let passed = failures.is_empty() && max_rel_error < rtol;
    Ok(FdReport {
        analytic,
        numeric,
        rel_errors,
        max_rel_error,
        failures,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaf_gradient_is_one() {
        let mut t = Tape::new();
        let x = t.var(3.0).unwrap();
        assert_eq!(t.grad(x).wrt(x), 1.0);
    }

    #[test]
    fn unused_leaf_has_zero_adjoint() {
        let mut t = Tape::new();
        let x = t.var(2.0).unwrap();
        let unused = t.var(0.0).unwrap();
        let y = t.square(x).unwrap();
        let g = t.grad(y);
        assert_eq!(g.len(), 2);
        assert_eq!(g.wrt(unused), 0.0);
    }

    #[test]
    fn non_finite_leaf_rejected() {
        let mut t = Tape::new();
        assert!(matches!(t.var(f64::NAN), Err(SvbError::NonFinite { .. })));
        assert!(t.var(f64::INFINITY).is_err());
    }

    #[test]
    fn primitive_derivatives() {
        let mut t = Tape::new();
        let x = t.var(3.0).unwrap();
        let y = t.square(x).unwrap();
        assert_eq!(t.grad(y).wrt(x), 6.0);

        let mut t = Tape::new();
        let x = t.var(2.0).unwrap();
        let y = t.log(x).unwrap();
        assert_eq!(t.grad(y).wrt(x), 0.5);

        let mut t = Tape::new();
        let x = t.var(0.0).unwrap();
        let y = t.cosh(x).unwrap();
        assert_eq!(t.grad(y).wrt(x), 0.0);
    }

    #[test]
    fn domain_errors() {
        let mut t = Tape::new();
        let z = t.var(0.0).unwrap();
        let n = t.var(-1.0).unwrap();
        let one = t.constant(1.0).unwrap();
        assert!(matches!(t.log(z), Err(SvbError::Domain { op: "log", .. })));
        assert!(matches!(t.log(n), Err(SvbError::Domain { .. })));
        assert!(matches!(
            t.div(one, z),
            Err(SvbError::Domain { op: "div", .. })
        ));
    }

    #[test]
    fn overflow_is_refused() {
        let mut t = Tape::new();
        let x = t.var(1000.0).unwrap();
        assert!(matches!(
            t.exp(x),
            Err(SvbError::NonFinite { op: "exp", .. })
        ));
    }

    #[test]
    fn product_rule_with_fan_out() {
        // f = x*y + x at (2, 3)
        let mut t = Tape::new();
        let x = t.var(2.0).unwrap();
        let y = t.var(3.0).unwrap();
        let xy = t.mul(x, y).unwrap();
        let f = t.add(xy, x).unwrap();
        let g = t.grad(f);
        assert_eq!(g.wrt(x), 4.0);
        assert_eq!(g.wrt(y), 2.0);
    }

    #[test]
    fn exp_log_identity() {
        let mut t = Tape::new();
        let x = t.var(5.0).unwrap();
        let l = t.log(x).unwrap();
        let f = t.exp(l).unwrap();
        assert!((t.grad(f).wrt(x) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn self_addition_accumulates_exactly() {
        let mut t = Tape::new();
        let x = t.var(0.7).unwrap();
        let f = t.add(x, x).unwrap();
        assert_eq!(t.grad(f).wrt(x), 2.0);
        let s = t.sum_many(&[x, x, x]).unwrap();
        assert_eq!(t.grad(s).wrt(x), 3.0);
    }

    #[test]
    fn cubic_passes_fd_check() {
        let rep = finite_diff_check(
            |t, v| {
                let sq = t.square(v[0])?;
                t.mul(sq, v[0])
            },
            &[2.0],
            1e-5,
        )
        .unwrap();
        assert_eq!(rep.analytic[0], 12.0);
        assert!((rep.numeric[0] - 12.0).abs() < 1e-6);
        assert!(rep.passed);
    }

    #[test]
    fn zero_tolerance_fails() {
        let rep = finite_diff_check(
            |t, v| {
                let sq = t.square(v[0])?;
                t.mul(sq, v[0])
            },
            &[2.0],
            0.0,
        )
        .unwrap();
        assert!(!rep.passed);
    }

    #[test]
    fn fd_evaluation_failure_is_reported() {
        // log(x) at x = 1e-7: the minus perturbation leaves the domain.
        let rep = finite_diff_check(|t, v| t.log(v[0]), &[5e-7], 1e-5).unwrap();
        assert!(!rep.passed);
        assert_eq!(rep.failures.len(), 1);
        assert_eq!(rep.failures[0].0, 0);
    }

    #[test]
    #[should_panic(expected = "does not belong")]
    fn foreign_node_panics() {
        let mut a = Tape::new();
        let mut b = Tape::new();
        let x = a.var(1.0).unwrap();
        let _ = b.var(1.0).unwrap();
        let _ = b.square(x);
    }
}
