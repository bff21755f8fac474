//! Synthetic test images.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::Image;

/// Isotropic Gaussian bump added onto `img`.
pub fn add_blob(img: &mut Image, cx: f64, cy: f64, sigma: f64, amplitude: f64) {
    for y in 0..img.height() {
        for x in 0..img.width() {
            let r2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
            let v = img.get(x, y) + amplitude * (-r2 / (2.0 * sigma * sigma)).exp();
            img.set(x, y, v);
        }
    }
}

/// Dark image scattered with `count` random bright blobs.
pub fn blob_field(width: usize, height: usize, count: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = Image::new(width, height);
    for _ in 0..count {
        let cx = rng.random_range(0.0..width as f64);
        let cy = rng.random_range(0.0..height as f64);
        let sigma = rng.random_range(1.5..5.0);
        let amp = rng.random_range(0.3..0.8);
        add_blob(&mut img, cx, cy, sigma, amp);
    }
    img
}
