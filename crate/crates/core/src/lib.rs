pub mod measures;
pub mod quad;
pub mod functionals;
pub mod battery;
pub mod stability;
pub mod superbl;
pub mod muckenhoupt;
pub mod spectral;
