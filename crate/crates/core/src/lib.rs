pub mod advantage;
pub mod envs;
pub mod harness;
pub mod policy;
pub mod prm;
pub mod seeds;
pub mod tensor;
pub mod trainer;
pub mod trajectory;
