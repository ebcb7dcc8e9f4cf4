pub mod eval;
pub mod gradcheck;
pub mod margins;
pub mod sweep;
pub mod toy;
