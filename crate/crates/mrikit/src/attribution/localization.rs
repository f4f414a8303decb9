//! Quantitative localization score: the fraction of attribution mass that
//! falls inside the ground-truth mask.

use crate::{Error, Result, Tensor};

/// (sum of map inside mask) / (sum of map overall), after shifting the map
/// by its minimum so values are nonnegative.
///
/// A map with no mass (constant after shifting) scores the mask's area
/// fraction, the uninformative prior. An empty mask is an error.
pub fn localization_energy(map: &Tensor, mask: &[u8]) -> Result<f64> {
    if map.numel() != mask.len() {
        return Err(Error::shape(
            "localization_energy",
            format!("map {} vs mask {}", map.numel(), mask.len()),
        ));
    }
    let inside_count = mask.iter().filter(|&&m| m != 0).count();
    if inside_count == 0 {
        return Err(Error::EmptyMask);
    }
    let min = map.data().iter().cloned().fold(f32::INFINITY, f32::min);
    let mut total = 0.0f64;
    let mut inside = 0.0f64;
    for (&v, &m) in map.data().iter().zip(mask) {
        let v = (v - min) as f64;
        total += v;
        if m != 0 {
            inside += v;
        }
    }
    if total == 0.0 {
        return Ok(inside_count as f64 / mask.len() as f64);
    }
    Ok(inside / total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_map_scores_the_area_fraction() {
        // constant maps carry no information: kind of the zero-mass case
        let map = Tensor::filled(&[4, 4], 3.0);
        let mut mask = vec![0u8; 16];
        for m in mask.iter_mut().take(4) {
            *m = 1;
        }
        assert_eq!(localization_energy(&map, &mask).unwrap(), 0.25);
    }

    #[test]
    fn mass_inside_mask_scores_one() {
        let mut map = Tensor::zeros(&[4, 4]);
        map.data_mut()[5] = 2.0;
        map.data_mut()[6] = 1.0;
        let mut mask = vec![0u8; 16];
        mask[5] = 1;
        mask[6] = 1;
        assert_eq!(localization_energy(&map, &mask).unwrap(), 1.0);
    }

    #[test]
    fn empty_mask_is_an_error() {
        let map = Tensor::filled(&[2, 2], 1.0);
        assert!(matches!(localization_energy(&map, &[0; 4]), Err(Error::EmptyMask)));
    }

    #[test]
    fn matches_brute_force_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let map = Tensor::uniform(&[8, 8], -1.0, 1.0, &mut rng);
            let mask: Vec<u8> = (0..64).map(|_| rng.gen_range(0..2) as u8).collect();
            if mask.iter().all(|&m| m == 0) {
                continue;
            }
            let min = map.data().iter().cloned().fold(f32::INFINITY, f32::min);
            let mut inside = 0.0f64;
            let mut total = 0.0f64;
            for i in 0..64 {
                let v = (map.data()[i] - min) as f64;
                total += v;
                if mask[i] == 1 {
                    inside += v;
                }
            }
            let expected = inside / total;
            let got = localization_energy(&map, &mask).unwrap();
            assert!((got - expected).abs() <= 1e-6, "{got} vs {expected}");
        }
    }
}
