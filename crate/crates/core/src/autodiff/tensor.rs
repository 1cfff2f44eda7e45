//! Dense n-dimensional f32 array with optional gradient buffer.

/// Row-major f32 tensor. `product(shape) == data.len()` always holds, and
/// public constructors reject non-finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
    requires_grad: bool,
    grad: Option<Vec<f32>>,
}

impl Tensor {
    /// Build a tensor from raw data. Panics on shape/data length mismatch or
    /// non-finite values.
    pub fn new(data: Vec<f32>, shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        assert_eq!(
            numel,
            data.len(),
            "tensor shape {:?} implies {} elements, got {}",
            shape,
            numel,
            data.len()
        );
        assert!(
            data.iter().all(|v| v.is_finite()),
            "non-finite value in tensor data (shape {shape:?})"
        );
        Tensor { shape, data, requires_grad: false, grad: None }
    }

    /// A trainable tensor (`requires_grad = true`).
    pub fn param(data: Vec<f32>, shape: Vec<usize>) -> Self {
        let mut t = Tensor::new(data, shape);
        t.requires_grad = true;
        t
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor { shape, data: vec![0.0; numel], requires_grad: false, grad: None }
    }

    pub fn scalar(v: f32) -> Self {
        Tensor::new(vec![v], vec![1])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, flag: bool) {
        self.requires_grad = flag;
    }

    /// Accumulated gradient, if any backward pass has been exported into
    /// this tensor since the last [`Tensor::clear_grad`].
    pub fn grad(&self) -> Option<&[f32]> {
        self.grad.as_deref()
    }

    /// Add `delta` into the gradient buffer, allocating zeros first if needed.
    pub fn accumulate_grad(&mut self, delta: &[f32]) {
        assert_eq!(
            delta.len(),
            self.data.len(),
            "gradient length {} does not match tensor numel {}",
            delta.len(),
            self.data.len()
        );
        let grad = self.grad.get_or_insert_with(|| vec![0.0; self.data.len()]);
        for (g, d) in grad.iter_mut().zip(delta) {
            *g += d;
        }
    }

    /// Ensure a (possibly all-zero) gradient buffer exists.
    pub fn ensure_grad(&mut self) {
        self.grad.get_or_insert_with(|| vec![0.0; self.data.len()]);
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }
}
