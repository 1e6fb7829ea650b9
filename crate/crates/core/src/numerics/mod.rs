pub mod fourier;
pub mod ode;
pub mod quad;
pub mod special;
