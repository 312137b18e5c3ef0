//! Script validation against a device, the bounded refine loop, and a
//! simulated GUI explorer.

mod device;
mod explore;
mod external;
mod scenario;
mod simulated;
mod validate;

pub use device::{feedback_text, Device, DeviceError, OutcomeKind, ValidationOutcome, FEEDBACK_CAP};
pub use explore::{bfs_reachable, simulated_explore, ExploreConfig, EXPLORER_TOOL};
pub use external::{classify_output, ExternalCommandDevice};
pub use scenario::{DeviceScenario, FlagKind, Guard, ScenarioError};
pub use simulated::SimulatedDevice;
pub use validate::{validation_loop, Attempt, LoopError, LoopResult, LoopStatus, MAX_ITERATIONS};
