//! Orthonormal 2-D DCT, its inverse, and the frequency-weight grid used by
//! the dissipation operator.
//!
//! The transform is the type-II DCT with orthonormal scaling, applied
//! separably (rows, then columns) and independently per channel. With
//! `basis[k][j] = c_k cos(pi (2j+1) k / (2N))`, `c_0 = sqrt(1/N)` and
//! `c_k = sqrt(2/N)` otherwise, the basis matrix is orthogonal, so the
//! forward transform preserves the L2 norm and the inverse is its transpose.

use ndarray::{Array2, Array3, ArrayView2};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Pixel-space signal: `(channel, row, col)` with a square spatial grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    pub(crate) data: Array3<f64>,
}

/// Coefficients in the orthonormal 2-D DCT basis, same shape as the source
/// image. Index `(i, j)` is the vertical/horizontal frequency pair.
#[derive(Debug, Clone, PartialEq)]
pub struct FreqTensor {
    pub(crate) data: Array3<f64>,
}

macro_rules! tensor_common {
    ($name:ident) => {
        impl $name {
            /// Wrap an array, checking that the spatial grid is square.
            pub fn new(data: Array3<f64>) -> Result<Self> {
                let (_, h, w) = data.dim();
                if h != w {
                    return Err(Error::dim("square spatial grid", format!("{h}x{w}")));
                }
                Ok(Self { data })
            }

            pub fn zeros(channels: usize, n: usize) -> Self {
                Self {
                    data: Array3::zeros((channels, n, n)),
                }
            }

            pub fn n(&self) -> usize {
                self.data.dim().1
            }

            pub fn channels(&self) -> usize {
                self.data.dim().0
            }

            pub fn array(&self) -> &Array3<f64> {
                &self.data
            }

            pub fn array_mut(&mut self) -> &mut Array3<f64> {
                &mut self.data
            }

            pub fn into_array(self) -> Array3<f64> {
                self.data
            }

            /// Largest absolute entry (0 for an empty tensor).
            pub fn max_abs(&self) -> f64 {
                self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
            }

            pub fn is_finite(&self) -> bool {
                self.data.iter().all(|v| v.is_finite())
            }
        }
    };
}

tensor_common!(ImageTensor);
tensor_common!(FreqTensor);

impl ImageTensor {
    /// Draw every entry i.i.d. standard normal.
    pub fn standard_normal(channels: usize, n: usize, rng: &mut crate::rng::CounterRng) -> Self {
        let mut t = Self::zeros(channels, n);
        rng.fill_normal(t.data.as_slice_mut().expect("contiguous"));
        t
    }
}

/// Frequency weights `lambda[i][j] = (pi i / N)^2 + (pi j / N)^2`, the
/// eigenvalues attached to the dissipation operator.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyGrid {
    lambda: Array2<f64>,
    n: usize,
}

impl FrequencyGrid {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("grid size must be >= 1".into()));
        }
        let freq: Vec<f64> = (0..n).map(|k| PI * k as f64 / n as f64).collect();
        let lambda = Array2::from_shape_fn((n, n), |(i, j)| freq[i] * freq[i] + freq[j] * freq[j]);
        Ok(FrequencyGrid { lambda, n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn lambda(&self) -> &Array2<f64> {
        &self.lambda
    }

    /// Frequency indices sorted by ascending `lambda`, ties broken by `(i, j)`.
    pub fn indices_by_lambda(&self) -> Vec<(usize, usize)> {
        let mut idx: Vec<(usize, usize)> = (0..self.n)
            .flat_map(|i| (0..self.n).map(move |j| (i, j)))
            .collect();
        idx.sort_by(|&a, &b| {
            self.lambda[a]
                .partial_cmp(&self.lambda[b])
                .unwrap()
                .then(a.cmp(&b))
        });
        idx
    }
}

/// Orthonormal type-II DCT of a fixed size, holding the materialized basis.
#[derive(Debug, Clone)]
pub struct Dct {
    n: usize,
    basis: Array2<f64>,
}

impl Dct {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("transform size must be >= 1".into()));
        }
        let nf = n as f64;
        let basis = Array2::from_shape_fn((n, n), |(k, j)| {
            let scale = if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
            scale * (PI * (2 * j + 1) as f64 * k as f64 / (2.0 * nf)).cos()
        });
        Ok(Dct { n, basis })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// The orthogonal basis matrix; row `k` is the k-th 1-D basis function.
    pub fn matrix(&self) -> &Array2<f64> {
        &self.basis
    }

    fn check(&self, n: usize) -> Result<()> {
        if n != self.n {
            return Err(Error::dim(format!("grid size {}", self.n), format!("{n}")));
        }
        Ok(())
    }

    fn channel_forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.basis.dot(&x).dot(&self.basis.t())
    }

    fn channel_inverse(&self, u: ArrayView2<f64>) -> Array2<f64> {
        self.basis.t().dot(&u).dot(&self.basis)
    }

    /// 2-D DCT per channel (pixel space -> frequency space).
    pub fn forward(&self, image: &ImageTensor) -> Result<FreqTensor> {
        self.check(image.n())?;
        let mut out = FreqTensor::zeros(image.channels(), self.n);
        for (mut dst, src) in out
            .data
            .outer_iter_mut()
            .zip(image.data.outer_iter())
        {
            dst.assign(&self.channel_forward(src));
        }
        Ok(out)
    }

    /// Inverse 2-D DCT per channel (frequency space -> pixel space).
    pub fn inverse(&self, freq: &FreqTensor) -> Result<ImageTensor> {
        self.check(freq.n())?;
        let mut out = ImageTensor::zeros(freq.channels(), self.n);
        for (mut dst, src) in out.data.outer_iter_mut().zip(freq.data.outer_iter()) {
            dst.assign(&self.channel_inverse(src));
        }
        Ok(out)
    }
}

/// One-shot 2-D DCT. Prefer holding a [`Dct`] when transforming repeatedly.
pub fn dct2(image: &ImageTensor) -> Result<FreqTensor> {
    Dct::new(image.n())?.forward(image)
}

/// One-shot inverse 2-D DCT.
pub fn idct2(freq: &FreqTensor) -> Result<ImageTensor> {
    Dct::new(freq.n())?.inverse(freq)
}

/// Convenience constructor mirroring [`FrequencyGrid::new`].
pub fn frequency_grid(n: usize) -> Result<FrequencyGrid> {
    FrequencyGrid::new(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;

    fn max_abs(a: &Array3<f64>) -> f64 {
        a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    #[test]
    fn constant_image_has_only_a_dc_coefficient() {
        let c = 0.37;
        let n = 8;
        let img = ImageTensor::new(Array3::from_elem((1, n, n), c)).unwrap();
        let u = dct2(&img).unwrap();
        assert!((u.data[[0, 0, 0]] - c * n as f64).abs() < 1e-12);
        let mut rest = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                if (i, j) != (0, 0) {
                    rest = rest.max(u.data[[0, i, j]].abs());
                }
            }
        }
        assert!(rest < 1e-12);
    }

    #[test]
    fn dc_coefficient_n_inverts_to_constant_one() {
        let n = 8;
        let mut u = FreqTensor::zeros(1, n);
        u.data[[0, 0, 0]] = n as f64;
        let img = idct2(&u).unwrap();
        for v in img.data.iter() {
            assert!((v - 1.0).abs() < 1e-12);
        }

        let zero = FreqTensor::zeros(2, 5);
        let img = idct2(&zero).unwrap();
        assert_eq!(max_abs(&img.data), 0.0);
    }

    #[test]
    fn roundtrip_within_1e10_up_to_n64() {
        let mut rng = CounterRng::new(5);
        for n in [1usize, 2, 3, 7, 8, 16, 33, 64] {
            let dct = Dct::new(n).unwrap();
            let x = ImageTensor::standard_normal(2, n, &mut rng);
            let back = dct.inverse(&dct.forward(&x).unwrap()).unwrap();
            let diff = (&back.data - &x.data).mapv(f64::abs);
            assert!(diff.iter().cloned().fold(0.0, f64::max) < 1e-10, "n={n}");

            let u = FreqTensor {
                data: ImageTensor::standard_normal(1, n, &mut rng).data,
            };
            let fwd = dct.forward(&dct.inverse(&u).unwrap()).unwrap();
            let diff = (&fwd.data - &u.data).mapv(f64::abs);
            assert!(diff.iter().cloned().fold(0.0, f64::max) < 1e-10, "n={n}");
        }
    }

    #[test]
    fn non_square_input_is_rejected() {
        assert!(ImageTensor::new(Array3::zeros((1, 4, 5))).is_err());
        let dct = Dct::new(4).unwrap();
        let img = ImageTensor::zeros(1, 5);
        assert!(dct.forward(&img).is_err());
        let u = FreqTensor::zeros(1, 3);
        assert!(dct.inverse(&u).is_err());
    }

    #[test]
    fn frequency_grid_values() {
        assert!(FrequencyGrid::new(0).is_err());
        for n in [1usize, 4, 8, 17] {
            let g = FrequencyGrid::new(n).unwrap();
            assert_eq!(g.lambda()[[0, 0]], 0.0);
            for i in 0..n {
                for j in 0..n {
                    let expect = PI * PI * ((i * i + j * j) as f64) / ((n * n) as f64);
                    assert!((g.lambda()[[i, j]] - expect).abs() < 1e-12);
                    assert_eq!(g.lambda()[[i, j]], g.lambda()[[j, i]]);
                }
            }
        }
        let g = FrequencyGrid::new(8).unwrap();
        // (pi/8)^2 and 2 (7 pi/8)^2, evaluated at high precision.
        assert!((g.lambda()[[1, 0]] - 0.15421256876702122).abs() < 1e-12);
        assert!((g.lambda()[[7, 7]] - 15.11283173916808).abs() < 1e-11);
    }

    #[test]
    fn basis_function_transforms_to_a_unit_coefficient() {
        // Textbook O(N^4) double-sum DCT-II as the independent oracle.
        let n = 4;
        let dct = Dct::new(n).unwrap();
        let mut u = FreqTensor::zeros(1, n);
        u.data[[0, 1, 0]] = 1.0;
        let x = dct.inverse(&u).unwrap();

        let oracle = naive_dct2(&x.data.index_axis(ndarray::Axis(0), 0).to_owned());
        for i in 0..n {
            for j in 0..n {
                let expect = if (i, j) == (1, 0) { 1.0 } else { 0.0 };
                assert!((oracle[[i, j]] - expect).abs() < 1e-12);
            }
        }

        let fast = dct.forward(&x).unwrap();
        assert!((fast.data[[0, 1, 0]] - 1.0).abs() < 1e-12);
        for i in 0..n {
            for j in 0..n {
                if (i, j) != (1, 0) {
                    assert!(fast.data[[0, i, j]].abs() < 1e-12);
                }
            }
        }
    }

    /// Direct evaluation of the 2-D DCT-II definition, O(N^4).
    fn naive_dct2(x: &Array2<f64>) -> Array2<f64> {
        let n = x.dim().0;
        let nf = n as f64;
        let scale = |k: usize| if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
        Array2::from_shape_fn((n, n), |(i, j)| {
            let mut acc = 0.0;
            for r in 0..n {
                for c in 0..n {
                    acc += x[[r, c]]
                        * (PI * (2 * r + 1) as f64 * i as f64 / (2.0 * nf)).cos()
                        * (PI * (2 * c + 1) as f64 * j as f64 / (2.0 * nf)).cos();
                }
            }
            scale(i) * scale(j) * acc
        })
    }

    #[test]
    fn oracle_agrees_on_random_images() {
        let mut rng = CounterRng::new(9);
        for n in [2usize, 3, 5, 8] {
            let dct = Dct::new(n).unwrap();
            let x = ImageTensor::standard_normal(1, n, &mut rng);
            let fast = dct.forward(&x).unwrap();
            let slow = naive_dct2(&x.data.index_axis(ndarray::Axis(0), 0).to_owned());
            for i in 0..n {
                for j in 0..n {
                    assert!((fast.data[[0, i, j]] - slow[[i, j]]).abs() < 1e-10);
                }
            }
        }
    }
}
