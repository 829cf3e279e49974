pub mod adversary;
pub mod capacity;
pub mod cli;
pub mod crypto;
pub mod fl;
pub mod model;
pub mod prf;
pub mod verify;
pub mod watermark;
