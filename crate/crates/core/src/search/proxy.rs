use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::archspec::Shortcut;
use crate::numerics::{gram_singular_values, matmul, standardize_rows_in_place, Nonlinearity, RankSettings};
use crate::randnet::{conv3x3, he_matrix, round_width, sample_from_spectrum, standard_normal_matrix, Conv3x3};
use crate::search::{SearchError, SearchSpec};
use crate::seed::derive_seed;
use crate::Matrix;

const SCORE_TAG: u64 = 0x5C0E;
/// Feature maps stay at this size; strides only shape the shortcut pattern.
pub const PROXY_SPATIAL: usize = 4;
/// Flattened samples per penultimate channel, rounded up to whole images.
pub const PROXY_SAMPLE_RATIO: f64 = 1.25;
const RGB: usize = 3;

fn bn_act(mut m: Matrix, f: Nonlinearity) -> Result<Matrix, SearchError> {
    standardize_rows_in_place(&mut m)?;
    f.apply_in_place(m.as_mut_slice());
    Ok(m)
}

/// Penultimate features (after its BN and nonlinearity) for one weight draw.
fn forward_once(spec: &SearchSpec, channels: &[usize], seed: u64) -> Result<Matrix, SearchError> {
    let skeleton = spec.skeleton(channels);
    let hw = PROXY_SPATIAL * PROXY_SPATIAL;
    let images = ((PROXY_SAMPLE_RATIO * spec.penultimate as f64) / hw as f64).ceil().max(1.0) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input = standard_normal_matrix(RGB, images * hw, derive_seed(seed, &[0]));

    let stem = Conv3x3::Full(he_matrix(&mut rng, spec.stem, RGB * 9, RGB * 9));
    let mut x = bn_act(conv3x3(&stem, &input, PROXY_SPATIAL)?, skeleton.stem.nonlinearity)?;
    let mut c_in = spec.stem;
    for b in &skeleton.blocks {
        let width = round_width(b.expansion * c_in as f64);
        let expand = he_matrix(&mut rng, width, c_in, c_in);
        let dw = Conv3x3::Depthwise(he_matrix(&mut rng, width, 9, 9));
        let project = he_matrix(&mut rng, b.out_channels, width, width);
        let h = bn_act(matmul(&expand, &x)?, b.act_after_expand)?;
        let h = bn_act(conv3x3(&dw, &h, PROXY_SPATIAL)?, b.act_after_dw)?;
        let mut out = bn_act(matmul(&project, &h)?, Nonlinearity::Identity)?;
        if b.shortcut == Shortcut::Identity {
            for (o, &v) in out.as_mut_slice().iter_mut().zip(x.as_slice()) {
                *o += v;
            }
        }
        x = out;
        c_in = b.out_channels;
    }
    let pen = he_matrix(&mut rng, spec.penultimate, c_in, c_in);
    bn_act(matmul(&pen, &x)?, skeleton.penultimate.nonlinearity)
}

/// Mean rank ratio and mean nuclear norm of the penultimate features over
/// `trials` random-weight draws of the proxy skeleton.
///
/// Feature maps are kept at 4×4 and the batch holds at least 1.25 samples per
/// penultimate channel. Seeds depend on the master seed and the channel
/// widths only, so equal configurations score identically.
pub fn rank_score(
    spec: &SearchSpec,
    channels: &[usize],
    trials: usize,
    settings: &RankSettings,
    master_seed: u64,
) -> Result<(f64, f64), SearchError> {
    if channels.is_empty() || trials == 0 {
        return Err(SearchError::InvalidSpec("rank score needs channels and trials".into()));
    }
    let mut path = vec![SCORE_TAG, spec.stem as u64, spec.penultimate as u64];
    path.extend(channels.iter().map(|&c| c as u64));
    let base = derive_seed(master_seed, &path);
    let mut rank = 0.0;
    let mut nuc = 0.0;
    for t in 0..trials {
        let out = forward_once(spec, channels, derive_seed(base, &[t as u64]))?;
        let s = sample_from_spectrum(&gram_singular_values(&out)?, spec.penultimate, settings);
        rank += s.rank_ratio;
        nuc += s.nuclear_norm;
    }
    Ok((rank / trials as f64, nuc / trials as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costmodel::Budget;

    fn spec() -> SearchSpec {
        SearchSpec::new(5, Budget::new(Some(200_000), Some(30_000_000)).unwrap())
    }

    #[test]
    fn equal_channels_equal_scores() {
        let s = spec();
        let st = RankSettings::default();
        let a = rank_score(&s, &[34, 34, 45, 55, 66], 8, &st, 7).unwrap();
        let b = rank_score(&s, &[34, 34, 45, 55, 66], 8, &st, 7).unwrap();
        assert_eq!(a, b);
        assert!((0.0..=1.0).contains(&a.0));
        assert!(a.1.is_finite() && a.1 > 0.0);
    }

    #[test]
    fn doubled_channels_score_in_range() {
        let s = spec();
        let st = RankSettings::default();
        let (r, _) = rank_score(&s, &[68, 68, 90, 110, 132], 8, &st, 7).unwrap();
        assert!((0.0..=1.0).contains(&r));
    }
}
