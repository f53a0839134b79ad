pub mod gradcheck;
pub mod reference;
pub mod synthetic;
