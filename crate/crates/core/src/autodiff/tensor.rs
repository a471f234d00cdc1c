use super::AutodiffError;

/// Dense 64-bit float array with a shape and an optional gradient slot.
///
/// Row-major storage. Rank 0 (`shape == []`) is a scalar holding exactly one
/// value. `grad`, when present, always has the same length as `values`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    /// Build a tensor, rejecting shape/length mismatches and non-finite values.
    pub fn new(shape: &[usize], values: Vec<f64>) -> Result<Self, AutodiffError> {
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(AutodiffError::ShapeMismatch(format!(
                "shape {:?} implies {} values, got {}",
                shape,
                numel,
                values.len()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(AutodiffError::NonFiniteValue("tensor construction"));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            values,
            requires_grad: false,
            grad: None,
        })
    }

    /// Same as [`Tensor::new`] but marked as a trainable parameter.
    pub fn with_grad(shape: &[usize], values: Vec<f64>) -> Result<Self, AutodiffError> {
        let mut t = Self::new(shape, values)?;
        t.requires_grad = true;
        Ok(t)
    }

    pub fn scalar(value: f64) -> Result<Self, AutodiffError> {
        Self::new(&[], vec![value])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            values: vec![0.0; numel],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn zeros_with_grad(shape: &[usize]) -> Self {
        let mut t = Self::zeros(shape);
        t.requires_grad = true;
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.values.len() == 1
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, flag: bool) {
        self.requires_grad = flag;
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Attach a gradient; the length must match `values`.
    pub fn set_grad(&mut self, grad: Vec<f64>) {
        assert_eq!(
            grad.len(),
            self.values.len(),
            "gradient length {} does not match tensor numel {}",
            grad.len(),
            self.values.len()
        );
        self.grad = Some(grad);
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub fn take_grad(&mut self) -> Option<Vec<f64>> {
        self.grad.take()
    }

    /// Number of rows of a rank-2 tensor (a rank-1 tensor counts as one row).
    pub fn n_rows(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[0],
            _ => 1,
        }
    }

    /// Trailing dimension: columns of a matrix, length of a vector.
    pub fn n_cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.n_cols();
        &self.values[i * w..(i + 1) * w]
    }

    /// Gather rows by index into a new rank-2 tensor.
    pub fn select_rows(&self, indices: &[usize]) -> Tensor {
        let w = self.n_cols();
        let mut values = Vec::with_capacity(indices.len() * w);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        Tensor {
            shape: vec![indices.len(), w],
            values,
            requires_grad: false,
            grad: None,
        }
    }

    /// Reinterpret the flat values under a new shape with the same numel.
    pub fn reshape(mut self, shape: &[usize]) -> Result<Self, AutodiffError> {
        let numel: usize = shape.iter().product();
        if numel != self.values.len() {
            return Err(AutodiffError::ShapeMismatch(format!(
                "cannot reshape {} values to {:?}",
                self.values.len(),
                shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }
}
