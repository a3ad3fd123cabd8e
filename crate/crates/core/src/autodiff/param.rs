use super::tensor::Real;

/// A trainable array with its gradient accumulator.
#[derive(Clone, Debug)]
pub struct Parameter<T> {
    name: String,
    shape: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
}

impl<T: Real> Parameter<T> {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, value: Vec<T>) -> Self {
        let len: usize = shape.iter().product();
        assert_eq!(len, value.len(), "parameter value does not match its shape");
        Self {
            name: name.into(),
            shape,
            grad: vec![T::zero(); len],
            value,
        }
    }

    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self::new(name, shape, vec![T::zero(); len])
    }

    pub fn filled(name: impl Into<String>, shape: Vec<usize>, v: T) -> Self {
        let len = shape.iter().product();
        Self::new(name, shape, vec![v; len])
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}

/// Named non-trainable state (batch-norm running statistics).
#[derive(Clone, Debug)]
pub struct Buffer<T> {
    pub name: String,
    pub value: Vec<T>,
}

impl<T: Real> Buffer<T> {
    pub fn filled(name: impl Into<String>, len: usize, v: T) -> Self {
        Self {
            name: name.into(),
            value: vec![v; len],
        }
    }
}

/// Exposes trainable parameters and state buffers in a fixed order. The
/// order defines checkpoint layout and optimizer slot mapping.
pub trait Module<T: Real> {
    fn params_mut(&mut self) -> Vec<&mut Parameter<T>>;

    fn buffers_mut(&mut self) -> Vec<&mut Buffer<T>> {
        Vec::new()
    }

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn parameter_count(&mut self) -> usize {
        self.params_mut().iter().map(|p| p.len()).sum()
    }
}
