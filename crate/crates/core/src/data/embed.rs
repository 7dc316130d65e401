use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Concatenates row `values[f]` of `tables[f]` for every feature, in order.
pub fn embed_context<T: Scalar>(values: &[usize], tables: &[Tensor<T>]) -> Result<Tensor<T>> {
    if values.len() != tables.len() {
        return Err(Error::Data(format!(
            "expected {} context values, got {}",
            tables.len(),
            values.len()
        )));
    }
    let mut out = Vec::new();
    for (f, (&v, table)) in values.iter().zip(tables).enumerate() {
        if table.rank() != 2 {
            return Err(Error::shape("embed_context", table.shape(), &[0, 0]));
        }
        if v >= table.rows() {
            return Err(Error::Data(format!(
                "value {v} out of range for feature {f} (cardinality {})",
                table.rows()
            )));
        }
        out.extend_from_slice(table.row(v));
    }
    let width = out.len();
    Tensor::new(vec![width], out)
}
