use super::{apply_binary, apply_unary, BinaryOp, DomainError, EvalError, Expr, UnaryOp};

#[derive(Clone, Debug)]
enum Node {
    Const(f64),
    Slot(usize),
    Unary(UnaryOp, Box<Node>),
    Binary(BinaryOp, Box<Node>, Box<Node>),
}

/// An [`Expr`] with variable names resolved to positions in a value slice.
///
/// Evaluation semantics (domain errors included) are identical to
/// [`Expr::eval`].
#[derive(Clone, Debug)]
pub struct CompiledExpr {
    root: Node,
    arity: usize,
}

impl Expr {
    /// Resolves each variable to its index in `layout`. Fails with
    /// [`EvalError::Unbound`] on the first variable missing from the layout.
    pub fn compile<S: AsRef<str>>(&self, layout: &[S]) -> Result<CompiledExpr, EvalError> {
        Ok(CompiledExpr {
            root: lower(self, layout)?,
            arity: layout.len(),
        })
    }
}

fn lower<S: AsRef<str>>(e: &Expr, layout: &[S]) -> Result<Node, EvalError> {
    Ok(match e {
        Expr::Const(c) => Node::Const(*c),
        Expr::Var(name) => Node::Slot(
            layout
                .iter()
                .position(|s| s.as_ref() == name)
                .ok_or_else(|| EvalError::Unbound(name.clone()))?,
        ),
        Expr::Unary(op, a) => Node::Unary(*op, Box::new(lower(a, layout)?)),
        Expr::Binary(op, a, b) => Node::Binary(
            *op,
            Box::new(lower(a, layout)?),
            Box::new(lower(b, layout)?),
        ),
    })
}

fn run(n: &Node, values: &[f64]) -> Result<f64, DomainError> {
    match n {
        Node::Const(c) => Ok(*c),
        Node::Slot(i) => Ok(values[*i]),
        Node::Unary(op, a) => apply_unary(*op, run(a, values)?),
        Node::Binary(op, a, b) => apply_binary(*op, run(a, values)?, run(b, values)?),
    }
}

impl CompiledExpr {
    /// `values` must follow the layout passed to [`Expr::compile`].
    pub fn eval(&self, values: &[f64]) -> Result<f64, DomainError> {
        debug_assert!(values.len() >= self.arity);
        run(&self.root, values)
    }

    pub fn arity(&self) -> usize {
        self.arity
    }
}
