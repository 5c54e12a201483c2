use super::{apply_binary, apply_unary, BinaryOp, Expr, UnaryOp};

impl Expr {
    /// Local value-preserving rewrites (`x+0`, `x*1`, `x*0`, `x^1`, `--x`, ...)
    /// plus constant folding, iterated to a fixed point.
    pub fn simplify_lite(&self) -> Expr {
        let mut cur = self.clone();
        loop {
            let next = simplify_once(&cur);
            if next == cur {
                return next;
            }
            cur = next;
        }
    }
}

fn is(e: &Expr, c: f64) -> bool {
    e.as_const() == Some(c)
}

fn simplify_once(e: &Expr) -> Expr {
    match e {
        Expr::Const(_) | Expr::Var(_) => e.clone(),
        Expr::Unary(op, a) => {
            let a = simplify_once(a);
            if let Some(c) = a.as_const() {
                if let Ok(v) = apply_unary(*op, c) {
                    return Expr::Const(v);
                }
            }
            match (op, a) {
                (UnaryOp::Neg, Expr::Unary(UnaryOp::Neg, inner)) => *inner,
                (op, a) => Expr::unary(*op, a),
            }
        }
        Expr::Binary(op, a, b) => {
            let a = simplify_once(a);
            let b = simplify_once(b);
            if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
                if let Ok(v) = apply_binary(*op, x, y) {
                    return Expr::Const(v);
                }
            }
            match op {
                BinaryOp::Add if is(&b, 0.0) => a,
                BinaryOp::Add if is(&a, 0.0) => b,
                BinaryOp::Sub if is(&b, 0.0) => a,
                BinaryOp::Sub if is(&a, 0.0) => Expr::neg(b),
                BinaryOp::Mul if is(&a, 0.0) || is(&b, 0.0) => Expr::Const(0.0),
                BinaryOp::Mul if is(&b, 1.0) => a,
                BinaryOp::Mul if is(&a, 1.0) => b,
                BinaryOp::Div if is(&b, 1.0) => a,
                BinaryOp::Pow if is(&b, 1.0) => a,
                BinaryOp::Pow if is(&b, 0.0) => Expr::Const(1.0),
                _ => Expr::binary(*op, a, b),
            }
        }
    }
}
