use crate::{Float, Tensor, Var};

fn same_shape<T: Float>(a: &Var<'_, T>, b: &Var<'_, T>, op: &str) {
    let (sa, sb) = (a.shape(), b.shape());
    assert_eq!(sa, sb, "{op}: shape mismatch {sa:?} vs {sb:?}");
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus<T: Float>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid<T: Float>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

// Named like the operator traits but record onto the tape.
#[allow(clippy::should_implement_trait)]
impl<'t, T: Float> Var<'t, T> {
    fn unary(self, forward: impl Fn(T) -> T, derivative: impl Fn(T, T) -> T + 'static) -> Var<'t, T> {
        let input = self.value();
        let out = input.map(&forward);
        let saved_out = std::rc::Rc::new(out.clone());
        self.tape.op(
            out,
            &[self],
            Box::new(move |g, _| {
                let data = input
                    .data()
                    .iter()
                    .zip(saved_out.data())
                    .zip(g.data())
                    .map(|((&x, &y), &g)| g * derivative(x, y))
                    .collect();
                vec![Some(Tensor::new(input.shape().to_vec(), data))]
            }),
        )
    }

    pub fn add(self, other: Var<'t, T>) -> Var<'t, T> {
        same_shape(&self, &other, "add");
        let out = self.value().zip_map(&other.value(), |a, b| a + b);
        self.tape.op(out, &[self, other], Box::new(|g, _| vec![Some(g.clone()), Some(g.clone())]))
    }

    pub fn sub(self, other: Var<'t, T>) -> Var<'t, T> {
        same_shape(&self, &other, "sub");
        let out = self.value().zip_map(&other.value(), |a, b| a - b);
        self.tape.op(out, &[self, other], Box::new(|g, _| vec![Some(g.clone()), Some(g.map(|v| -v))]))
    }

    pub fn mul(self, other: Var<'t, T>) -> Var<'t, T> {
        same_shape(&self, &other, "mul");
        let (a, b) = (self.value(), other.value());
        let out = a.zip_map(&b, |x, y| x * y);
        self.tape.op(
            out,
            &[self, other],
            Box::new(move |g, needs| {
                vec![needs[0].then(|| g.zip_map(&b, |g, y| g * y)), needs[1].then(|| g.zip_map(&a, |g, x| g * x))]
            }),
        )
    }

    pub fn scale(self, factor: T) -> Var<'t, T> {
        let out = self.value().map(|v| v * factor);
        self.tape.op(out, &[self], Box::new(move |g, _| vec![Some(g.map(|v| v * factor))]))
    }

    pub fn add_scalar(self, offset: T) -> Var<'t, T> {
        let out = self.value().map(|v| v + offset);
        self.tape.op(out, &[self], Box::new(|g, _| vec![Some(g.clone())]))
    }

    pub fn neg(self) -> Var<'t, T> {
        self.scale(-T::one())
    }

    /// Subgradient `sign(x)` with `sign(0) = 0`.
    pub fn abs(self) -> Var<'t, T> {
        self.unary(T::abs, |x, _| {
            if x > T::zero() {
                T::one()
            } else if x < T::zero() {
                -T::one()
            } else {
                T::zero()
            }
        })
    }

    pub fn square(self) -> Var<'t, T> {
        self.unary(|x| x * x, |x, _| x + x)
    }

    pub fn relu(self) -> Var<'t, T> {
        self.unary(|x| x.max(T::zero()), |x, _| if x > T::zero() { T::one() } else { T::zero() })
    }

    pub fn leaky_relu(self, slope: T) -> Var<'t, T> {
        self.unary(
            move |x| if x > T::zero() { x } else { x * slope },
            move |x, _| if x > T::zero() { T::one() } else { slope },
        )
    }

    pub fn tanh(self) -> Var<'t, T> {
        self.unary(T::tanh, |_, y| T::one() - y * y)
    }

    pub fn softplus(self) -> Var<'t, T> {
        self.unary(softplus, |x, _| sigmoid(x))
    }

    pub fn sum_all(self) -> Var<'t, T> {
        let input = self.value();
        let shape = input.shape().to_vec();
        let out = Tensor::scalar(input.sum());
        self.tape.op(out, &[self], Box::new(move |g, _| vec![Some(Tensor::full(shape.clone(), g.item()))]))
    }

    pub fn mean_all(self) -> Var<'t, T> {
        let n = T::lit(self.value().len() as f64);
        self.sum_all().scale(T::one() / n)
    }
}
