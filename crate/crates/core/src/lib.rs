pub mod fl;
pub mod he;
pub mod kem;
pub mod ring;
pub mod sym;
pub mod zkp;
pub mod protocol;
