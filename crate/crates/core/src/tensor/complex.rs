use num_complex::Complex64;

use super::{Result, Tensor, TensorError};

/// Complex counterpart of [`Tensor`]. There is no implicit conversion to a
/// real tensor; call [`ComplexTensor::re`] or [`ComplexTensor::im`].
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexTensor {
    shape: Vec<usize>,
    data: Vec<Complex64>,
}

impl ComplexTensor {
    pub fn new(shape: Vec<usize>, data: Vec<Complex64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(TensorError::DataLength {
                shape,
                len: data.len(),
            });
        }
        Ok(ComplexTensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        ComplexTensor {
            shape: shape.to_vec(),
            data: vec![Complex64::new(0.0, 0.0); n],
        }
    }

    pub fn from_parts(re: &Tensor, im: &Tensor) -> Result<Self> {
        if re.shape() != im.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "complex_from_parts",
                lhs: re.shape().to_vec(),
                rhs: im.shape().to_vec(),
            });
        }
        Ok(ComplexTensor {
            shape: re.shape().to_vec(),
            data: re
                .data()
                .iter()
                .zip(im.data())
                .map(|(&a, &b)| Complex64::new(a, b))
                .collect(),
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn re(&self) -> Tensor {
        Tensor::new(self.shape.clone(), self.data.iter().map(|z| z.re).collect())
            .expect("shape preserved")
    }

    pub fn im(&self) -> Tensor {
        Tensor::new(self.shape.clone(), self.data.iter().map(|z| z.im).collect())
            .expect("shape preserved")
    }
}
