pub mod decode;
pub mod dtree;
pub mod soc;
pub mod skernel;
pub mod nsim;
pub mod report;
