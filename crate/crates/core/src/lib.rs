pub mod error;
pub mod interp;
pub mod io;
pub mod kinematics;
pub mod losses;
pub mod mask;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use kinematics::{Coord, MotionSequence, Pose, Quat, Skeleton};
pub use mask::{CompletionMask, FrameLabel};
