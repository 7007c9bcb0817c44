pub mod oracles;
pub mod gradcheck;
