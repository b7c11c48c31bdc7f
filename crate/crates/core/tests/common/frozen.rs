//! Monte Carlo oracle values as (mean, standard error) over 10^7 draws,
//! produced by `tests/oracles.rs`.

pub const LOGISTIC_NORMAL_CDF0: (f64, f64) = (0.5000818, 0.00015811388879420887);
pub const FIGURE1_JOINT_CDF_HALF: (f64, f64) = (0.3478613, 0.00015061667857793864);
pub const FIGURE1_ZERO_UTILITY_SHARE_0: (f64, f64) = (0.1881172, 0.0001235836293103276);
pub const FIGURE1_ZERO_UTILITY_SHARE_1: (f64, f64) = (0.048775, 6.811461225441331e-5);
pub const FIGURE1_ZERO_UTILITY_SHARE_2: (f64, f64) = (0.7631078, 0.00013445233491690207);
pub const FIGURE1_COND_MEAN_V2_D1: (f64, f64) = (0.12091468481502789, 5.045689189205069e-5);
pub const FIGURE1_SHARE_0: (f64, f64) = (0.3335265, 0.00014909278856481943);
pub const FIGURE1_SHARE_1: (f64, f64) = (0.0880205, 8.959514474495681e-5);
pub const FIGURE1_SHARE_2: (f64, f64) = (0.578453, 0.00015615541974796815);
