use super::NnError;

/// Batch of 1D feature maps, stored `[batch][channel][position]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor1D {
    pub batch: usize,
    pub channels: usize,
    pub len: usize,
    pub data: Vec<f64>,
}

impl Tensor1D {
    pub fn zeros(batch: usize, channels: usize, len: usize) -> Self {
        Self {
            batch,
            channels,
            len,
            data: vec![0.0; batch * channels * len],
        }
    }

    pub fn from_vec(batch: usize, channels: usize, len: usize, data: Vec<f64>) -> Result<Self, NnError> {
        if data.len() != batch * channels * len {
            return Err(NnError::Shape(format!(
                "{} values do not fill a ({batch}, {channels}, {len}) tensor",
                data.len()
            )));
        }
        Ok(Self {
            batch,
            channels,
            len,
            data,
        })
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            batch: 1,
            channels: 1,
            len: 1,
            data: vec![v],
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.batch, self.channels, self.len)
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    #[inline]
    pub fn row(&self, b: usize, c: usize) -> &[f64] {
        let start = (b * self.channels + c) * self.len;
        &self.data[start..start + self.len]
    }

    #[inline]
    pub fn row_mut(&mut self, b: usize, c: usize) -> &mut [f64] {
        let start = (b * self.channels + c) * self.len;
        &mut self.data[start..start + self.len]
    }

    /// All channels of one batch element.
    pub fn sample(&self, b: usize) -> &[f64] {
        let n = self.channels * self.len;
        &self.data[b * n..(b + 1) * n]
    }

    pub fn all_finite(&self) -> bool {
        super::kernels::all_finite(&self.data)
    }

    /// Stacks equally shaped single-sample tensors along the batch axis.
    pub fn stack(items: &[&Tensor1D]) -> Result<Self, NnError> {
        let first = items
            .first()
            .ok_or_else(|| NnError::Shape("cannot stack an empty batch".into()))?;
        let (c, l) = (first.channels, first.len);
        let mut data = Vec::with_capacity(items.iter().map(|t| t.numel()).sum());
        let mut batch = 0;
        for t in items {
            if t.channels != c || t.len != l {
                return Err(NnError::Shape(format!(
                    "cannot stack ({}, {}) with ({c}, {l})",
                    t.channels, t.len
                )));
            }
            batch += t.batch;
            data.extend_from_slice(&t.data);
        }
        Ok(Self {
            batch,
            channels: c,
            len: l,
            data,
        })
    }
}
