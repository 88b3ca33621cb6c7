use crate::data::ChannelVoltages;

/// Number of cubic monomials of three predictors.
pub const N_FEATURES: usize = 19;

/// The 19 monomials of `(x1, x2, x3)` up to degree three, in the fixed order
/// `x1³, x2³, x3³, x1²x2, x1²x3, x1x2², x1x3², x2²x3, x2x3², x1², x2², x3²,
/// x1x2x3, x1x2, x1x3, x2x3, x1, x2, x3`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector19(pub [f64; N_FEATURES]);

impl FeatureVector19 {
    pub fn from_array(x: [f64; 3]) -> Self {
        let [a, b, c] = x;
        Self([
            a * a * a,
            b * b * b,
            c * c * c,
            a * a * b,
            a * a * c,
            a * b * b,
            a * c * c,
            b * b * c,
            b * c * c,
            a * a,
            b * b,
            c * c,
            a * b * c,
            a * b,
            a * c,
            b * c,
            a,
            b,
            c,
        ])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub fn build_features(v: &ChannelVoltages) -> FeatureVector19 {
    FeatureVector19::from_array(v.as_array())
}
