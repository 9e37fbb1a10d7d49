//! Small helpers on `[T; 3]`. A full linear algebra crate would be overkill
//! for the handful of dot/cross/normalize calls the renderer needs.

use crate::scalar::Real;

pub fn dot<T: Real>(a: [T; 3], b: [T; 3]) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross<T: Real>(a: [T; 3], b: [T; 3]) -> [T; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn add<T: Real>(a: [T; 3], b: [T; 3]) -> [T; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub<T: Real>(a: [T; 3], b: [T; 3]) -> [T; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn scale<T: Real>(a: [T; 3], s: T) -> [T; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn mul<T: Real>(a: [T; 3], b: [T; 3]) -> [T; 3] {
    [a[0] * b[0], a[1] * b[1], a[2] * b[2]]
}

pub fn length<T: Real>(a: [T; 3]) -> T {
    dot(a, a).sqrt()
}

pub fn normalize<T: Real>(a: [T; 3]) -> Option<[T; 3]> {
    let len = length(a);
    if len <= T::zero() || !len.is_finite() {
        return None;
    }
    Some(scale(a, T::one() / len))
}

pub fn lerp<T: Real>(a: [T; 3], b: [T; 3], t: T) -> [T; 3] {
    add(a, scale(sub(b, a), t))
}
