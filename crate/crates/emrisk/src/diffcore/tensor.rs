//! Dense 64-bit float tensors and trainable parameters.

use super::DiffError;

/// A dense tensor: a shape and a flat row-major data buffer.
///
/// Only vectors (one axis) and matrices (two axes) are constructed in
/// practice; scalars are one-element vectors. Entries are finite by
/// construction — constructors and tape operations reject NaN/Inf.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, DiffError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(DiffError::Shape {
                op: "tensor",
                detail: format!("shape {:?} implies {} entries, got {}", shape, expected, data.len()),
            });
        }
        let t = Tensor { shape, data };
        t.check_finite("tensor")?;
        Ok(t)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![0.0; n] }
    }

    pub fn vector(data: Vec<f64>) -> Result<Self, DiffError> {
        let n = data.len();
        Tensor::new(vec![n], data)
    }

    pub fn scalar(x: f64) -> Result<Self, DiffError> {
        Tensor::new(vec![1], vec![x])
    }

    /// Row-major matrix with `rows * cols` entries.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, DiffError> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a one-element tensor.
    pub fn as_scalar(&self) -> Result<f64, DiffError> {
        if self.is_scalar() {
            Ok(self.data[0])
        } else {
            Err(DiffError::NotScalar { shape: self.shape.clone() })
        }
    }

    /// Matrix dimensions `(rows, cols)`; errors for non-matrices.
    pub fn matrix_dims(&self) -> Result<(usize, usize), DiffError> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            other => Err(DiffError::Shape {
                op: "matrix_dims",
                detail: format!("expected a matrix, got shape {:?}", other),
            }),
        }
    }

    pub fn check_finite(&self, op: &'static str) -> Result<(), DiffError> {
        if self.data.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(DiffError::NonFinite { op })
        }
    }

    pub fn norm2(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// A named trainable tensor with an accumulating gradient buffer.
///
/// `grad` always has the same shape as `value`; it is zero after
/// [`ParamSet::zero_grads`] and sums contributions across backward passes.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

/// Index of a parameter within its [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// All trainable parameters of one model, in registration order.
///
/// Single-writer: a model and its optimizer mutate the set from one thread;
/// read-only access may be shared across evaluation workers.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    params: Vec<Parameter>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a parameter. Names must be unique; they key serialization.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(
            self.params.iter().all(|p| p.name != name),
            "duplicate parameter name {name}"
        );
        let grad = Tensor::zeros(value.shape().to_vec());
        self.params.push(Parameter { name, value, grad });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// Total number of scalar entries across all parameter values.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Global L2 norm of all gradients.
    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|p| p.grad.data())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Scale every gradient entry by `k`.
    pub fn scale_grads(&mut self, k: f64) {
        for p in &mut self.params {
            for g in p.grad.data_mut() {
                *g *= k;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_rejects_shape_data_mismatch() {
        let err = Tensor::new(vec![2, 3], vec![1.0; 5]).unwrap_err();
        assert!(matches!(err, DiffError::Shape { .. }));
        assert!(err.to_string().contains("[2, 3]"));
    }

    #[test]
    fn tensor_rejects_non_finite() {
        assert!(matches!(
            Tensor::vector(vec![1.0, f64::NAN]).unwrap_err(),
            DiffError::NonFinite { .. }
        ));
        assert!(Tensor::vector(vec![1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn param_grad_matches_value_shape() {
        let mut ps = ParamSet::new();
        let id = ps.add("w", Tensor::matrix(2, 3, vec![0.0; 6]).unwrap());
        assert_eq!(ps.get(id).grad.shape(), &[2, 3]);
        assert!(ps.get(id).grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn zero_grads_resets() {
        let mut ps = ParamSet::new();
        let id = ps.add("x", Tensor::vector(vec![1.0, 2.0]).unwrap());
        ps.get_mut(id).grad.data_mut()[0] = 3.5;
        ps.zero_grads();
        assert_eq!(ps.get(id).grad.data(), &[0.0, 0.0]);
    }
}
