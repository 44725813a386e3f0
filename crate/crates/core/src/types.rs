//! Vector-valued domain types shared across the pipeline.

use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

macro_rules! real_vector {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub Vec<f64>);

        impl $name {
            pub fn zeros(dim: usize) -> Self {
                Self(vec![0.0; dim])
            }

            pub fn dim(&self) -> usize {
                self.0.len()
            }

            pub fn is_finite(&self) -> bool {
                self.0.iter().all(|v| v.is_finite())
            }

            pub fn into_inner(self) -> Vec<f64> {
                self.0
            }
        }

        impl Deref for $name {
            type Target = [f64];
            fn deref(&self) -> &[f64] {
                &self.0
            }
        }

        impl DerefMut for $name {
            fn deref_mut(&mut self) -> &mut [f64] {
                &mut self.0
            }
        }

        impl AsRef<[f64]> for $name {
            fn as_ref(&self) -> &[f64] {
                &self.0
            }
        }

        impl From<Vec<f64>> for $name {
            fn from(v: Vec<f64>) -> Self {
                Self(v)
            }
        }
    };
}

real_vector!(
    /// Autoencoder latent representation.
    Latent
);

real_vector!(
    /// A point in simulation-parameter space. Normalized to `[0, 1]` per
    /// dimension unless a function says it takes raw values.
    ParamVector
);

impl ParamVector {
    /// Clamps every coordinate into the unit box.
    pub fn clamped_unit(mut self) -> Self {
        for v in self.0.iter_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        self
    }

    pub fn in_unit_box(&self, tol: f64) -> bool {
        self.0.iter().all(|&v| v >= -tol && v <= 1.0 + tol)
    }
}

/// A 3D scalar field on a regular `D x H x W` grid, row-major (W fastest).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldGrid {
    pub dims: [usize; 3],
    pub values: Vec<f64>,
    /// Dynamic range used by PSNR/SSIM.
    pub value_range: (f64, f64),
}

impl FieldGrid {
    pub fn new(dims: [usize; 3], values: Vec<f64>, value_range: (f64, f64)) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Config(format!(
                "field dims must be positive, got {dims:?}"
            )));
        }
        let expected = dims.iter().product();
        if values.len() != expected {
            return Err(Error::shape("field values", expected, values.len()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!(
                "field value at index {i} is not finite"
            )));
        }
        Ok(Self {
            dims,
            values,
            value_range,
        })
    }

    /// Field with the value range taken from its own min/max.
    pub fn with_own_range(dims: [usize; 3], values: Vec<f64>) -> Result<Self> {
        let (lo, hi) = min_max(&values);
        Self::new(dims, values, (lo, hi))
    }

    pub fn constant(dims: [usize; 3], value: f64) -> Self {
        let n = dims.iter().product();
        Self {
            dims,
            values: vec![value; n],
            value_range: (value, value),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dynamic_range(&self) -> f64 {
        self.value_range.1 - self.value_range.0
    }

    #[inline]
    pub fn index(&self, d: usize, h: usize, w: usize) -> usize {
        (d * self.dims[1] + h) * self.dims[2] + w
    }

    pub fn get(&self, d: usize, h: usize, w: usize) -> f64 {
        self.values[self.index(d, h, w)]
    }

    /// Central axis-aligned slice; `axis` 0 fixes depth, 1 height, 2 width.
    /// Returns `(rows, cols, row-major values)`.
    pub fn central_slice(&self, axis: usize) -> (usize, usize, Vec<f64>) {
        let [dd, hh, ww] = self.dims;
        match axis {
            0 => {
                let d = dd / 2;
                let v = (0..hh)
                    .flat_map(|h| (0..ww).map(move |w| (h, w)))
                    .map(|(h, w)| self.get(d, h, w))
                    .collect();
                (hh, ww, v)
            }
            1 => {
                let h = hh / 2;
                let v = (0..dd)
                    .flat_map(|d| (0..ww).map(move |w| (d, w)))
                    .map(|(d, w)| self.get(d, h, w))
                    .collect();
                (dd, ww, v)
            }
            _ => {
                let w = ww / 2;
                let v = (0..dd)
                    .flat_map(|d| (0..hh).map(move |h| (d, h)))
                    .map(|(d, h)| self.get(d, h, w))
                    .collect();
                (dd, hh, v)
            }
        }
    }
}

pub(crate) fn min_max(values: &[f64]) -> (f64, f64) {
    values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        })
}
