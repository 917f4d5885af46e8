pub mod autodiff;
pub mod bench;
pub mod engine;
pub mod error;
pub mod exact_mlp;
pub mod generate;
pub mod graph;
pub mod idassign;
pub mod model;
pub mod sync_gnn;
pub mod train;
pub mod tu;
pub mod verify;
pub mod synchronizer;
pub mod wl;
