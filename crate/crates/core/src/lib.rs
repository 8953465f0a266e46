pub mod cipher;
pub mod imgio;
pub mod rng;
pub mod tensor;
pub mod pevit;
pub mod mipembed;
pub mod attacks;
pub mod harness;
