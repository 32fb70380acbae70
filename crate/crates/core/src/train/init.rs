use ahdr_tensor::{Element, Shape, Tensor};
use rand::Rng;

/// Glorot/Xavier uniform bound for a conv weight of shape `(out, in, k, k)`:
/// `sqrt(6 / (fan_in + fan_out))` with both fans including the kernel area.
pub fn xavier_bound(shape: Shape) -> f64 {
    let area = shape.plane();
    let fan_in = shape.channels() * area;
    let fan_out = shape.batch() * area;
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Samples a conv weight uniformly in `±xavier_bound(shape)`.
pub fn xavier_init<T: Element, R: Rng + ?Sized>(shape: Shape, rng: &mut R) -> Tensor<T> {
    let bound = xavier_bound(shape);
    Tensor::from_fn(shape, |_, _, _, _| T::from_f64_lossy(rng.random_range(-bound..=bound)))
}
