pub mod cp;
pub mod mlp;
pub mod quadratic;
pub mod sdl;
