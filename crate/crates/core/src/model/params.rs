use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TokenId;

/// Shape of a logit table: one row of `n_tokens` logits per context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub n_contexts: usize,
    pub n_tokens: usize,
}

impl Layout {
    pub fn len(&self) -> usize {
        self.n_contexts * self.n_tokens
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn offset(&self, context: usize, token: TokenId) -> usize {
        debug_assert!(context < self.n_contexts && token < self.n_tokens);
        context * self.n_tokens + token
    }

    #[inline]
    pub fn row(&self, context: usize) -> std::ops::Range<usize> {
        let start = context * self.n_tokens;
        start..start + self.n_tokens
    }
}

/// Flat model parameters; the unit of aggregation, merging and transfer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Layout,
}

impl ParamVector {
    pub fn zeros(layout: Layout) -> Self {
        Self { values: vec![0.0; layout.len()], layout }
    }

    pub fn from_values(layout: Layout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::Structural(format!(
                "parameter count {} does not match layout {}x{}",
                values.len(),
                layout.n_contexts,
                layout.n_tokens
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                context: format!("row {}", i / layout.n_tokens.max(1)),
                detail: format!("non-finite parameter at offset {i}"),
            });
        }
        Ok(Self { values, layout })
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn row(&self, context: usize) -> &[f64] {
        &self.values[self.layout.row(context)]
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Bytes on the wire for one transfer (8 per value).
    pub fn byte_size(&self) -> u64 {
        self.values.len() as u64 * 8
    }

    pub fn ensure_same_layout(&self, other: &ParamVector) -> Result<()> {
        if self.layout != other.layout {
            return Err(Error::Structural(format!(
                "layout {}x{} vs {}x{}",
                self.layout.n_contexts, self.layout.n_tokens, other.layout.n_contexts, other.layout.n_tokens
            )));
        }
        Ok(())
    }
}
