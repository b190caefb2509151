pub mod aggregate;
pub mod evaluate;
pub mod flip_compare;
pub mod gen_noise;
