pub mod garner;
pub mod microscope;
pub mod tradeoff;
