pub mod dist;
pub mod error;
pub mod instances;
pub mod laminar;
pub mod lp;
pub mod model;
pub mod reduced_form;
pub mod verify;
