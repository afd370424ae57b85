use rand::Rng;

use crate::model::DomainBox;
use crate::rng::uniform_in;
use crate::scalar::Real;

/// How an adaptive attacker fills the fake share of each batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FakeStrategy {
    None,
    /// Uniform over the domain box.
    Uniform,
    /// The QOI plus a large uniform offset, `±10σ√d` per coordinate.
    Blind,
    /// Copies of true queries issued in earlier iterations.
    Duplicate,
}

/// Fake query points around `x_qoi`. `history` holds earlier iterations' true
/// queries; `Duplicate` falls back to `Uniform` while it is empty.
pub fn generate_fake_queries<T: Real, R: Rng + ?Sized>(
    x_qoi: &[T],
    count: usize,
    strategy: FakeStrategy,
    sigma: T,
    history: &[Vec<T>],
    domain: DomainBox,
    rng: &mut R,
) -> Vec<Vec<T>> {
    let d = x_qoi.len();
    let uniform = |rng: &mut R| -> Vec<T> { (0..d).map(|_| uniform_in(rng, T::lit(domain.lo), T::lit(domain.hi))).collect() };
    match strategy {
        FakeStrategy::None => Vec::new(),
        FakeStrategy::Uniform => (0..count).map(|_| uniform(rng)).collect(),
        FakeStrategy::Blind => {
            let half = T::lit(10.0) * sigma * T::from_usize_lossy(d).sqrt();
            (0..count)
                .map(|_| x_qoi.iter().map(|&c| domain.clamp(c + uniform_in(rng, -half, half))).collect())
                .collect()
        }
        FakeStrategy::Duplicate => {
            if history.is_empty() {
                (0..count).map(|_| uniform(rng)).collect()
            } else {
                (0..count).map(|_| history[rng.random_range(0..history.len())].clone()).collect()
            }
        }
    }
}
