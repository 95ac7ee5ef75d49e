//! Small-object detection toolkit: box-regression losses with analytic
//! gradients, C2f/EMA blocks, generalized feature-pyramid necks with a
//! stride-4 detection level, an anchor-box regression simulator and a
//! detection evaluator.

pub mod blocks;
pub mod eval;
pub mod io;
pub mod losses;
pub mod neck;
pub mod sim;
pub mod tensor;
