use super::{BinaryOp, Expr, UnaryOp};

impl Expr {
    /// Symbolic partial derivative with respect to `v`, lightly simplified.
    pub fn diff(&self, v: &str) -> Expr {
        self.diff_raw(v).simplify_lite()
    }

    fn diff_raw(&self, v: &str) -> Expr {
        if !self.depends_on(v) {
            return Expr::Const(0.0);
        }
        match self {
            Expr::Const(_) => Expr::Const(0.0),
            Expr::Var(name) => Expr::Const(if name == v { 1.0 } else { 0.0 }),
            Expr::Unary(op, a) => {
                let da = a.diff_raw(v);
                let a = (**a).clone();
                let outer = match op {
                    UnaryOp::Neg => return Expr::neg(da),
                    UnaryOp::Exp => Expr::unary(UnaryOp::Exp, a),
                    UnaryOp::Log => return Expr::div(da, a),
                    UnaryOp::Sin => Expr::unary(UnaryOp::Cos, a),
                    UnaryOp::Cos => Expr::neg(Expr::unary(UnaryOp::Sin, a)),
                    UnaryOp::Sqrt => {
                        return Expr::div(
                            da,
                            Expr::mul(Expr::Const(2.0), Expr::unary(UnaryOp::Sqrt, a)),
                        )
                    }
                };
                Expr::mul(outer, da)
            }
            Expr::Binary(op, a, b) => {
                let (a, b) = (&**a, &**b);
                match op {
                    BinaryOp::Add => Expr::add(a.diff_raw(v), b.diff_raw(v)),
                    BinaryOp::Sub => Expr::sub(a.diff_raw(v), b.diff_raw(v)),
                    BinaryOp::Mul => Expr::add(
                        Expr::mul(a.diff_raw(v), b.clone()),
                        Expr::mul(a.clone(), b.diff_raw(v)),
                    ),
                    BinaryOp::Div => Expr::div(
                        Expr::sub(
                            Expr::mul(a.diff_raw(v), b.clone()),
                            Expr::mul(a.clone(), b.diff_raw(v)),
                        ),
                        Expr::pow(b.clone(), Expr::Const(2.0)),
                    ),
                    BinaryOp::Pow => diff_pow(a, b, v),
                }
            }
        }
    }
}

fn diff_pow(base: &Expr, exponent: &Expr, v: &str) -> Expr {
    if let Some(c) = exponent.as_const() {
        // power rule
        return Expr::mul(
            Expr::mul(
                Expr::Const(c),
                Expr::pow(base.clone(), Expr::Const(c - 1.0)),
            ),
            base.diff_raw(v),
        );
    }
    if !exponent.depends_on(v) {
        return Expr::mul(
            Expr::mul(
                exponent.clone(),
                Expr::pow(base.clone(), Expr::sub(exponent.clone(), Expr::Const(1.0))),
            ),
            base.diff_raw(v),
        );
    }
    let whole = Expr::pow(base.clone(), exponent.clone());
    let log_base = Expr::unary(UnaryOp::Log, base.clone());
    if !base.depends_on(v) {
        return Expr::mul(Expr::mul(whole, log_base), exponent.diff_raw(v));
    }
    // d/dv exp(b log a) = a^b (b' log a + b a'/a)
    Expr::mul(
        whole,
        Expr::add(
            Expr::mul(exponent.diff_raw(v), log_base),
            Expr::div(Expr::mul(exponent.clone(), base.diff_raw(v)), base.clone()),
        ),
    )
}
