pub mod tank;
pub mod timeseries;
pub mod lp;
pub mod forecast;
pub mod mpc;
pub mod plant;
pub mod tariff;
pub mod tuning;
pub mod scenario;
