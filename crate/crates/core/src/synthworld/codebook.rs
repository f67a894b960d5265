//! Fixed orthonormal codebooks backing the image and text oracles.

use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{BodyStyle, Color, SizeClass};

/// Image feature width.
pub const C_IMG: usize = 32;
/// Text feature width.
pub const C_TEXT: usize = 32;

// Image basis layout.
const IMG_COLOR: usize = 0;
const IMG_BODY: usize = 8;
const IMG_SIZE: usize = 12;
pub(super) const IMG_POS: usize = 15;
pub(super) const IMG_BG: std::ops::Range<usize> = 17..32;

// Text basis layout.
const TXT_COLOR: usize = 0;
const TXT_BODY: usize = 8;
const TXT_SIZE: usize = 12;
pub(super) const TXT_REGION: usize = 15;

pub(super) struct Codebooks {
    pub image: Vec<[f64; C_IMG]>,
    pub text: Vec<[f64; C_TEXT]>,
}

impl Codebooks {
    pub fn image_color(&self, c: Color) -> &[f64; C_IMG] {
        &self.image[IMG_COLOR + c.index()]
    }

    pub fn image_body(&self, b: BodyStyle) -> &[f64; C_IMG] {
        &self.image[IMG_BODY + b.index()]
    }

    pub fn image_size(&self, s: SizeClass) -> &[f64; C_IMG] {
        &self.image[IMG_SIZE + s.index()]
    }

    pub fn text_color(&self, c: Color) -> &[f64; C_TEXT] {
        &self.text[TXT_COLOR + c.index()]
    }

    pub fn text_body(&self, b: BodyStyle) -> &[f64; C_TEXT] {
        &self.text[TXT_BODY + b.index()]
    }

    pub fn text_size(&self, s: SizeClass) -> &[f64; C_TEXT] {
        &self.text[TXT_SIZE + s.index()]
    }
}

/// Gram-Schmidt over Gaussian draws; returns a full orthonormal basis.
fn orthonormal_basis<const N: usize>(seed: u64) -> Vec<[f64; N]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut basis: Vec<[f64; N]> = Vec::with_capacity(N);
    while basis.len() < N {
        let mut v = [0.0; N];
        for x in v.iter_mut() {
            *x = StandardNormal.sample(&mut rng);
        }
        // two passes keep the basis orthogonal to machine precision
        for _ in 0..2 {
            for q in &basis {
                let d: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
                for (x, qi) in v.iter_mut().zip(q) {
                    *x -= d * qi;
                }
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n < 1e-6 {
            continue;
        }
        for x in v.iter_mut() {
            *x /= n;
        }
        basis.push(v);
    }
    basis
}

pub(super) fn codebooks() -> &'static Codebooks {
    static BOOKS: OnceLock<Codebooks> = OnceLock::new();
    BOOKS.get_or_init(|| Codebooks {
        image: orthonormal_basis::<C_IMG>(0x1a6e_5eed),
        text: orthonormal_basis::<C_TEXT>(0x7e27_5eed),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bases_are_orthonormal() {
        let b = codebooks();
        for i in 0..C_IMG {
            for j in 0..C_IMG {
                let d: f64 = b.image[i].iter().zip(&b.image[j]).map(|(x, y)| x * y).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((d - want).abs() < 1e-12, "image ({i},{j}) = {d}");
            }
        }
        for i in 0..C_TEXT {
            let d: f64 = b.text[i].iter().map(|x| x * x).sum();
            assert!((d - 1.0).abs() < 1e-12);
        }
    }
}
