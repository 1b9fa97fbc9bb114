use crate::tensor::{Graph, Tensor, TensorError, Var};

/// Optimizer treatment of a parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    Standard,
    /// State-matrix spectrum, low-rank term and step size of SSM layers.
    Ssm,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub group: ParamGroup,
}

/// Index into a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Ordered registry of named learnable tensors. Layers hold [`ParamId`]s;
/// the registry order is the checkpoint and flattening order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, group: ParamGroup) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            value,
            group,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Learnable scalar count.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn values(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    /// Replaces every value; shapes must be unchanged.
    pub fn set_values(&mut self, values: Vec<Tensor>) -> Result<(), TensorError> {
        if values.len() != self.params.len() {
            return Err(TensorError::Invalid {
                op: "set_values",
                msg: format!(
                    "{} values for {} parameters",
                    values.len(),
                    self.params.len()
                ),
            });
        }
        for (p, v) in self.params.iter().zip(&values) {
            if p.value.shape() != v.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "set_values",
                    lhs: p.value.shape().to_vec(),
                    rhs: v.shape().to_vec(),
                });
            }
        }
        for (p, v) in self.params.iter_mut().zip(values) {
            p.value = v;
        }
        Ok(())
    }

    pub(crate) fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn flatten(&self) -> Tensor {
        Tensor::from_vec(
            self.params
                .iter()
                .flat_map(|p| p.value.data().iter().copied())
                .collect(),
        )
    }

    /// Registers every parameter as a leaf of `g`.
    pub fn bind<'g>(&self, g: &'g Graph, trainable: bool) -> Vec<Var<'g>> {
        self.params
            .iter()
            .map(|p| {
                if trainable {
                    g.param(p.value.clone())
                } else {
                    g.constant(p.value.clone())
                }
            })
            .collect()
    }

    /// Views a flat vector (in [`ParamStore::flatten`] order) as one variable
    /// per parameter, so a whole model can be differentiated through a
    /// single leaf.
    pub fn bind_flat<'g>(&self, flat: Var<'g>) -> Result<Vec<Var<'g>>, TensorError> {
        let total = self.num_scalars();
        if flat.shape() != [total] {
            return Err(TensorError::ShapeMismatch {
                op: "bind_flat",
                lhs: flat.shape(),
                rhs: vec![total],
            });
        }
        let mut off = 0;
        self.params
            .iter()
            .map(|p| {
                let n = p.value.numel();
                let v = flat.slice_last(off, n)?.reshape(p.value.shape())?;
                off += n;
                Ok(v)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flatten_and_bind_flat_roundtrip() {
        let mut s = ParamStore::new();
        s.add(
            "a",
            Tensor::new(vec![2, 2], vec![1., 2., 3., 4.]).unwrap(),
            ParamGroup::Standard,
        );
        s.add("b", Tensor::from_vec(vec![5., 6.]), ParamGroup::Ssm);
        assert_eq!(s.num_scalars(), 6);
        let g = Graph::new();
        let flat = g.param(s.flatten());
        let vars = s.bind_flat(flat).unwrap();
        assert_eq!(vars[0].value(), s.get(ParamId(0)).value);
        assert_eq!(vars[1].value(), s.get(ParamId(1)).value);
        assert!(s.bind_flat(g.param(Tensor::zeros(&[5]))).is_err());
    }

    #[test]
    fn set_values_checks_shapes() {
        let mut s = ParamStore::new();
        s.add("a", Tensor::zeros(&[3]), ParamGroup::Standard);
        assert!(s.set_values(vec![Tensor::zeros(&[2])]).is_err());
        s.set_values(vec![Tensor::ones(&[3])]).unwrap();
        assert_eq!(s.by_name("a").unwrap().value.data(), &[1., 1., 1.]);
    }
}
