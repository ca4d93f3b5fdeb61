pub mod augment;
pub mod eval;
pub mod gradcheck;
pub mod make_scene;
pub mod optimize;
pub mod synthesize;
