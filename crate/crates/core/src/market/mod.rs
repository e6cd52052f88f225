//! Synthetic market generation: Black-Scholes and Heston call surfaces,
//! implied volatility, Dupire local volatility and strike probabilities.

pub mod black_scholes;
pub mod heston;
pub mod local_vol;
pub mod surface;

pub use black_scholes::{bs_call_price, bs_implied_vol, norm_cdf};
pub use heston::{heston_call_cos, heston_char_fn, heston_cumulants, CosConfig, CosExpansion, HestonParams, OptionKind};
pub use local_vol::{dupire_local_vol, dupire_maturity_grid, interp_local_vol, DupireReport, LocalVolSurface};
pub use surface::{build_market_surface, default_strike_grid, sig9, strike_probability, uniform_grid, MarketSetting, MarketSurface, SurfaceSource};
