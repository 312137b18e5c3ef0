//! Tool surface over the code index and CTG, served as JSON-RPC 2.0 over
//! stdio or called in process.

mod record;
mod server;
mod tools;

pub use record::{Clock, Recorder, ToolCallRecord};
pub use server::{serve, Server, INVALID_PARAMS, INVALID_REQUEST, METHOD_NOT_FOUND, PARSE_ERROR};
pub use tools::{
    tool_descriptors, truncate_result, ToolArgs, ToolDescriptor, ToolError, ToolOutput, ToolParam,
    Toolbox, DEFAULT_RESULT_CAP,
};
