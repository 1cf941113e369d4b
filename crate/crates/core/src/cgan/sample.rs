//! Turning generator output into concrete orders.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::generator::Generator;
use super::{ModelError, NormalizedOrder};
use crate::data::{FeatureScalers, FeatureWindow};
use crate::lob::{Nanos, Price, Side};

/// Denormalized order fields plus the delay before the order is placed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampledOrder {
    pub side: Side,
    pub price: Price,
    pub volume: u64,
    pub interarrival: Nanos,
}

/// Invert the scalers and round into a valid order.
///
/// Price snaps to the nearest multiple of `price_tick` (at least one tick),
/// volume rounds to at least one share, direction is the sign with ties
/// going to buy, and the interarrival is at least one nanosecond.
pub fn denormalize(x: &NormalizedOrder, scalers: &FeatureScalers, price_tick: i64) -> SampledOrder {
    let tick = price_tick.max(1);
    let f = &scalers.features;
    let raw_price = f[0].inverse(x.price);
    let ticks = if raw_price.is_finite() { (raw_price / tick as f64).round() } else { 1.0 };
    let price = Price((ticks.clamp(1.0, (i64::MAX / tick / 2) as f64) as i64) * tick);
    let raw_volume = f[1].inverse(x.volume);
    let volume = if raw_volume.is_finite() { raw_volume.round().clamp(1.0, u32::MAX as f64) as u64 } else { 1 };
    let side = if x.direction < 0.0 { Side::Sell } else { Side::Buy };
    let raw_time = f[3].inverse(x.time);
    let interarrival = if raw_time.is_finite() { raw_time.round().clamp(1.0, 1e15) as Nanos } else { 1 };
    SampledOrder { side, price, volume, interarrival }
}

/// Draw standard-normal noise of the generator's width.
pub fn draw_noise<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<f64> {
    (0..len).map(|_| StandardNormal.sample(rng)).collect()
}

/// One generated order conditioned on `y`.
pub fn sample_order<R: Rng + ?Sized>(
    generator: &Generator,
    y: &FeatureWindow,
    rng: &mut R,
    scalers: &FeatureScalers,
    price_tick: i64,
) -> Result<SampledOrder, ModelError> {
    let z = draw_noise(rng, generator.config().noise_dim);
    let x = generator.forward(&z, y)?;
    Ok(denormalize(&x, scalers, price_tick))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cgan::ModelConfig;
    use crate::data::{FeatureScaler, MinMaxScaler, BoxCoxParam};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalers() -> FeatureScalers {
        let mm = |lo, hi| MinMaxScaler { lo, hi };
        let plain = |lo, hi| FeatureScaler { boxcox: None, minmax: mm(lo, hi) };
        let bc = BoxCoxParam::new(0.0, 0.0);
        let logged = |lo: f64, hi: f64| FeatureScaler { boxcox: Some(bc), minmax: mm(lo.ln(), hi.ln()) };
        FeatureScalers {
            features: [
                plain(990_000.0, 1_010_000.0),
                logged(0.2, 1_000.0),
                plain(-1.0, 1.0),
                logged(1.0, 1e10),
                plain(990_000.0, 1_010_000.0),
                logged(1.0, 1_000.0),
                plain(990_000.0, 1_010_000.0),
                logged(1.0, 1_000.0),
                plain(990_000.0, 1_010_000.0),
                plain(0.0, 23_400.0),
            ],
        }
    }

    #[test]
    fn direction_is_the_sign() {
        let sc = scalers();
        let mut x = NormalizedOrder { price: 0.0, volume: 0.0, direction: -0.3, time: 0.0 };
        assert_eq!(denormalize(&x, &sc, 100).side, Side::Sell);
        x.direction = 0.0;
        assert_eq!(denormalize(&x, &sc, 100).side, Side::Buy);
        x.direction = 0.2;
        assert_eq!(denormalize(&x, &sc, 100).side, Side::Buy);
    }

    #[test]
    fn small_volume_clamps_to_one_share() {
        let sc = scalers();
        // volume feature -1 inverts to 0.2 shares
        let x = NormalizedOrder { price: 0.0, volume: -1.0, direction: 1.0, time: -1.0 };
        let o = denormalize(&x, &sc, 100);
        assert_eq!(o.volume, 1);
        assert_eq!(o.interarrival, 1);
        assert_eq!(o.price, Price(1_000_000));
    }

    #[test]
    fn price_snaps_to_tick() {
        let sc = scalers();
        let x = NormalizedOrder { price: 0.00437, volume: 0.0, direction: 1.0, time: 0.0 };
        let o = denormalize(&x, &sc, 100);
        assert_eq!(o.price.0 % 100, 0);
        assert_eq!(o.price, Price(1_000_000));
    }

    #[test]
    fn generated_orders_are_always_valid() {
        let cfg = ModelConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = Generator::new(&cfg, &mut rng);
        let y = FeatureWindow::from_values(vec![0.1; cfg.window_len()]).unwrap();
        let sc = scalers();
        for _ in 0..10_000 {
            let o = sample_order(&g, &y, &mut rng, &sc, 100).unwrap();
            assert!(o.price.0 >= 100 && o.price.0 % 100 == 0);
            assert!(o.volume >= 1);
            assert!(o.interarrival >= 1);
        }
    }
}
